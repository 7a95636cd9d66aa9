//! Streaming ensemble runs: every trajectory is simulated once and all
//! per-step observers consume it on the fly, so memory stays `O(dim)` per
//! worker unless a CSV trace is requested.

use rayon::prelude::*;
use serde::Serialize;
use sgdm_core::lyapunov::{envelope_u, StepDiagnostics};
use sgdm_core::stopping::{Decision, OnlineStopper, Prefix, StoppingRule};
use sgdm_core::{
    initial_energy, EnvelopeParams, Error, MartingaleState, NoiseModel, NtParams, Objective,
    Runner, Schedule,
};

/// Environment variable overriding the worker count.
pub const WORKERS_ENV: &str = "SGDM_LAB_WORKERS";

/// Worker count from [`WORKERS_ENV`], else the machine's parallelism.
pub fn worker_count() -> usize {
    std::env::var(WORKERS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs `f` on a dedicated pool of `workers` threads.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .expect("thread pool")
        .install(f)
}

/// Envelope coverage to track for one schedule's constants.
#[derive(Debug, Clone)]
pub struct CoveragePlan {
    pub envelope: EnvelopeParams,
    pub betas: Vec<f64>,
    pub rules: Vec<StoppingRule>,
}

#[derive(Debug, Clone)]
pub struct EnsemblePlan<'a> {
    pub objective: &'a Objective,
    pub noise: &'a NoiseModel,
    pub schedule: Schedule,
    pub x0: &'a [f64],
    pub seed: u64,
    pub steps: u64,
    pub trajectories: u64,
    /// Lanes `0..traces` keep a full per-step record.
    pub traces: u64,
    pub nt: NtParams,
    pub coverage: Option<CoveragePlan>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub k: u64,
    pub fgap: f64,
    pub e: f64,
    pub s: f64,
    pub m: f64,
    pub residual_lemma: Option<f64>,
    pub residual_decomp: Option<f64>,
}

/// Counts of pathwise inequality failures along one path.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct InequalityTally {
    pub steps_checked: u64,
    pub lemma: u64,
    pub intermediate: u64,
    pub decomposition: u64,
    /// `‖φ_{k+1}‖² ≤ E(k)`.
    pub phi_bound: u64,
    /// `4√((k+1)η_k)(f(x_k) − f*) ≤ E(k)`.
    pub sandwich: u64,
    /// Smallest `residual / tol` seen for the decay inequality.
    pub worst_lemma_margin: f64,
    pub worst_decomp_margin: f64,
    pub first_violation: Option<u64>,
}

impl InequalityTally {
    fn new() -> Self {
        Self {
            worst_lemma_margin: f64::INFINITY,
            worst_decomp_margin: f64::INFINITY,
            ..Self::default()
        }
    }

    fn record(&mut self, d: &StepDiagnostics, gap_term: f64) {
        self.steps_checked += 1;
        let t = d.tol;
        let mut bad = false;
        let mut hit = |cond: bool, n: &mut u64| {
            if cond {
                *n += 1;
                bad = true;
            }
        };
        hit(d.residual_lemma() < -t, &mut self.lemma);
        hit(d.residual_intermediate() < -t, &mut self.intermediate);
        hit(d.residual_decomp() < -t, &mut self.decomposition);
        hit(d.residual_phi_bound() < -t, &mut self.phi_bound);
        hit(gap_term > d.e_curr + t, &mut self.sandwich);
        self.worst_lemma_margin = self.worst_lemma_margin.min(d.residual_lemma() / t);
        self.worst_decomp_margin = self.worst_decomp_margin.min(d.residual_decomp() / t);
        if bad && self.first_violation.is_none() {
            self.first_violation = Some(d.k);
        }
    }

    pub fn merge(&mut self, o: &Self) {
        self.steps_checked += o.steps_checked;
        self.lemma += o.lemma;
        self.intermediate += o.intermediate;
        self.decomposition += o.decomposition;
        self.phi_bound += o.phi_bound;
        self.sandwich += o.sandwich;
        self.worst_lemma_margin = self.worst_lemma_margin.min(o.worst_lemma_margin);
        self.worst_decomp_margin = self.worst_decomp_margin.min(o.worst_decomp_margin);
        self.first_violation = match (self.first_violation, o.first_violation) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
    }

    pub fn total(&self) -> u64 {
        self.lemma + self.intermediate + self.decomposition + self.phi_bound + self.sandwich
    }
}

/// Coverage indicators of one path for one `β`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathCoverage {
    /// Envelope held at every `k = 1..=K`.
    pub uniform: bool,
    /// First violation up to `K − 1`, else `K`.
    pub adversarial: Decision,
    pub rules: Vec<Decision>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathSummary {
    pub lane: u64,
    /// Index of the iterate that left the bounded region, if any.
    pub divergence: Option<u64>,
    pub steps_done: u64,
    pub e0: f64,
    pub final_gap: f64,
    pub tally: InequalityTally,
    pub sup_e: f64,
    pub sup_s: f64,
    pub sup_log_n: f64,
    /// One entry per `β` of the coverage plan.
    pub coverage: Vec<PathCoverage>,
    pub trace: Option<Vec<TraceRow>>,
}

impl PathSummary {
    pub fn diverged(&self) -> bool {
        self.divergence.is_some()
    }
}

/// Simulates one path with all observers attached.
pub fn run_path(plan: &EnsemblePlan<'_>, lane: u64) -> sgdm_core::Result<PathSummary> {
    let sched = &plan.schedule;
    let x_star = plan.objective.minimizer();
    let e0 = initial_energy(sched, plan.objective, plan.x0)?;
    let mut runner = Runner::new(plan.objective, plan.noise, *sched, plan.x0, plan.seed, lane)?;
    let mut mart = MartingaleState::start(e0, plan.nt);
    let mut tally = InequalityTally::new();
    let keep_trace = lane < plan.traces;
    let mut trace = keep_trace.then(|| {
        let mut v = Vec::with_capacity(plan.steps as usize + 1);
        v.push(TraceRow {
            k: 0,
            fgap: plan.objective.gap(plan.x0).unwrap_or(f64::NAN),
            e: e0,
            s: 0.0,
            m: e0,
            residual_lemma: None,
            residual_decomp: None,
        });
        v
    });
    let (mut sup_e, mut sup_s, mut sup_log_n) = (e0, 0.0f64, mart.log_n);
    let cov = plan.coverage.as_ref();
    let n_beta = cov.map_or(0, |c| c.betas.len());
    let mut uniform = vec![true; n_beta];
    let mut adversaries: Vec<OnlineStopper> = (0..n_beta)
        .map(|_| OnlineStopper::new(StoppingRule::adversarial(plan.steps - 1)))
        .collect();
    let mut rule_stoppers: Vec<Vec<OnlineStopper>> = (0..n_beta)
        .map(|_| {
            cov.map_or(Vec::new(), |c| {
                c.rules.iter().map(|r| OnlineStopper::new(*r)).collect()
            })
        })
        .collect();
    let envelopes: Vec<Box<dyn Fn(u64) -> f64 + '_>> = cov.map_or(Vec::new(), |c| {
        c.betas
            .iter()
            .map(|&b| {
                Box::new(move |k: u64| envelope_u(&c.envelope, b, k).unwrap_or(f64::NAN))
                    as Box<dyn Fn(u64) -> f64>
            })
            .collect()
    });
    let mut divergence = None;
    let mut final_gap = plan.objective.gap(plan.x0).unwrap_or(f64::NAN);
    let mut steps_done = 0;
    for _ in 0..plan.steps {
        let view = match runner.step() {
            Ok(v) => v,
            Err(Error::Divergence { step, .. }) => {
                divergence = Some(step);
                break;
            }
            Err(e) => return Err(e),
        };
        let d = StepDiagnostics::from_view(&view, sched, x_star);
        let k = view.k;
        let gap_term = 4.0 * (((k + 1) as f64) * sched.eta(k)).sqrt() * view.gap_curr;
        tally.record(&d, gap_term);
        mart.advance_diag(&d);
        sup_e = sup_e.max(d.e_curr);
        sup_s = sup_s.max(mart.s);
        sup_log_n = sup_log_n.max(mart.log_n);
        let prefix = Prefix {
            k,
            x_prev: view.x_prev,
            x_curr: view.x_curr,
            gap_prev: view.gap_prev,
            gap_curr: view.gap_curr,
        };
        for (i, env) in envelopes.iter().enumerate() {
            if view.gap_curr > env(k) {
                uniform[i] = false;
            }
            adversaries[i].observe(&prefix, env.as_ref());
            for st in rule_stoppers[i].iter_mut() {
                st.observe(&prefix, env.as_ref());
            }
        }
        if let Some(t) = trace.as_mut() {
            t.push(TraceRow {
                k,
                fgap: view.gap_curr,
                e: d.e_curr,
                s: mart.s,
                m: mart.m,
                residual_lemma: Some(d.residual_lemma()),
                residual_decomp: Some(d.residual_decomp()),
            });
        }
        final_gap = view.gap_next;
        steps_done = k;
    }
    let failed = Decision {
        tau: steps_done.max(1),
        covered: false,
    };
    let coverage = (0..n_beta)
        .map(|i| {
            let ok = divergence.is_none();
            PathCoverage {
                uniform: ok && uniform[i],
                adversarial: adversaries[i].decision().filter(|_| ok).unwrap_or(failed),
                rules: rule_stoppers[i]
                    .iter()
                    .map(|s| s.decision().filter(|_| ok).unwrap_or(failed))
                    .collect(),
            }
        })
        .collect();
    Ok(PathSummary {
        lane,
        divergence,
        steps_done,
        e0,
        final_gap,
        tally,
        sup_e,
        sup_s,
        sup_log_n,
        coverage,
        trace,
    })
}

/// Runs every lane on the current pool; results come back in lane order.
pub fn run_ensemble(plan: &EnsemblePlan<'_>) -> sgdm_core::Result<Vec<PathSummary>> {
    (0..plan.trajectories)
        .into_par_iter()
        .map(|lane| run_path(plan, lane))
        .collect()
}
