//! The momentum SGD recurrence
//!
//! ```text
//! x_{k+1} = x_k + k/(k+2) (x_k − x_{k−1}) − 2√η_k / ((k+2)√k) · g(x_k, ξ_k),   x_1 = x_0
//! ```
//!
//! with the two step schedules it is analysed under, a streaming [`Runner`]
//! and the stored [`Trajectory`] record.

use crate::error::{argument, check_dim, Error, Result};
use crate::noise::NoiseModel;
use crate::objectives::Objective;
use crate::rng::{StreamFamily, MAIN_BRANCH};
use crate::vecops::norm_sq;

/// Iterates beyond this norm abort the run.
pub const DIVERGENCE_NORM: f64 = 1e12;

/// Trajectories with more stored scalars than this keep only a window of iterates.
pub const FULL_STORAGE_LIMIT: usize = 100_000_000;

/// Default `C₀′` of the ε-schedule.
pub const DEFAULT_C0_PRIME: f64 = 100.0;

/// Learning-rate schedule.
///
/// Both variants have the form `η_k = 1 / (16 L² C ln^p(k+2))`; the main
/// schedule uses `C = 1, p = 2`, the ε-schedule `C = C₀′, p = 1+ε`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Schedule {
    TheoremMain {
        smoothness: f64,
    },
    PropositionEps {
        smoothness: f64,
        epsilon: f64,
        c0_prime: f64,
    },
}

impl Schedule {
    pub fn theorem_main(smoothness: f64) -> Result<Self> {
        check_smoothness(smoothness)?;
        Ok(Schedule::TheoremMain { smoothness })
    }

    /// ε-schedule; requires `ε ∈ (0, 0.5]` and `C₀′ ≥ 100`.
    pub fn proposition_eps(smoothness: f64, epsilon: f64, c0_prime: f64) -> Result<Self> {
        check_smoothness(smoothness)?;
        if !(epsilon > 0.0 && epsilon <= 0.5) {
            return Err(argument(format!(
                "epsilon must lie in (0, 0.5], got {epsilon}"
            )));
        }
        if !(c0_prime.is_finite() && c0_prime >= DEFAULT_C0_PRIME) {
            return Err(argument(format!("c0_prime must be >= 100, got {c0_prime}")));
        }
        Ok(Schedule::PropositionEps {
            smoothness,
            epsilon,
            c0_prime,
        })
    }

    pub fn smoothness(&self) -> f64 {
        match *self {
            Schedule::TheoremMain { smoothness } | Schedule::PropositionEps { smoothness, .. } => {
                smoothness
            }
        }
    }

    /// Exponent `p` of `ln^p(k+2)`.
    pub fn log_power(&self) -> f64 {
        match *self {
            Schedule::TheoremMain { .. } => 2.0,
            Schedule::PropositionEps { epsilon, .. } => 1.0 + epsilon,
        }
    }

    /// `L² · C`, so that `a_k = 1 / (L² C k ln^p(k+2))`.
    pub fn coefficient_scale(&self) -> f64 {
        let l = self.smoothness();
        match *self {
            Schedule::TheoremMain { .. } => l * l,
            Schedule::PropositionEps { c0_prime, .. } => l * l * c0_prime,
        }
    }

    /// Exponent of `ln(k+2)` in the envelope: `p / 2`.
    pub fn envelope_log_power(&self) -> f64 {
        self.log_power() / 2.0
    }

    pub fn name(&self) -> &'static str {
        match self {
            Schedule::TheoremMain { .. } => "theorem-main",
            Schedule::PropositionEps { .. } => "proposition-eps",
        }
    }

    /// `η_k`, defined for every `k ≥ 0`.
    pub fn eta(&self, k: u64) -> f64 {
        let ln = ((k + 2) as f64).ln();
        let lp = if self.log_power() == 2.0 {
            ln * ln
        } else {
            ln.powf(self.log_power())
        };
        1.0 / (16.0 * self.coefficient_scale() * lp)
    }

    /// `a_k = 16 η_k / k`, for `k ≥ 1`.
    pub fn a_coeff(&self, k: u64) -> Result<f64> {
        if k == 0 {
            return Err(argument("a_coeff is defined for k >= 1"));
        }
        Ok(self.a_unchecked(k))
    }

    pub(crate) fn a_unchecked(&self, k: u64) -> f64 {
        16.0 * self.eta(k) / k as f64
    }
}

fn check_smoothness(l: f64) -> Result<()> {
    if l.is_finite() && l > 0.0 {
        Ok(())
    } else {
        Err(argument(format!(
            "smoothness must be finite and > 0, got {l}"
        )))
    }
}

/// `(k, x_{k−1}, x_k)`.
#[derive(Debug, Clone, PartialEq)]
pub struct IterState {
    pub k: u64,
    pub x_prev: Vec<f64>,
    pub x_curr: Vec<f64>,
}

impl IterState {
    /// State at `k = 1` with `x_1 = x_0`.
    pub fn start(x0: Vec<f64>) -> Self {
        Self {
            k: 1,
            x_prev: x0.clone(),
            x_curr: x0,
        }
    }
}

/// One application of the recurrence; a pure function of its inputs.
pub fn sgdm_step(state: &IterState, sched: &Schedule, g: &[f64]) -> Result<IterState> {
    if state.k == 0 {
        return Err(argument("the recurrence starts at k = 1"));
    }
    check_dim(state.x_curr.len(), state.x_prev.len(), "sgdm_step x_prev")?;
    check_dim(state.x_curr.len(), g.len(), "sgdm_step g")?;
    let mut next = vec![0.0; g.len()];
    update_into(
        state.k,
        sched.eta(state.k),
        &state.x_prev,
        &state.x_curr,
        g,
        &mut next,
    );
    Ok(IterState {
        k: state.k + 1,
        x_prev: state.x_curr.clone(),
        x_curr: next,
    })
}

#[inline]
fn update_into(k: u64, eta: f64, prev: &[f64], curr: &[f64], g: &[f64], out: &mut [f64]) {
    let kf = k as f64;
    let momentum = kf / (kf + 2.0);
    let step = 2.0 * eta.sqrt() / ((kf + 2.0) * kf.sqrt());
    for i in 0..out.len() {
        out[i] = curr[i] + momentum * (curr[i] - prev[i]) - step * g[i];
    }
}

/// Everything known about step `k` once `x_{k+1}` has been produced.
#[derive(Debug, Clone, Copy)]
pub struct StepView<'a> {
    pub k: u64,
    pub x_prev: &'a [f64],
    pub x_curr: &'a [f64],
    pub x_next: &'a [f64],
    /// `∇f(x_k)`.
    pub grad: &'a [f64],
    /// `g(x_k, ξ_k)`.
    pub g: &'a [f64],
    /// `θ_k = ∇f(x_k) − g(x_k, ξ_k)`.
    pub theta: &'a [f64],
    /// `f(x_{k−1}) − f*`.
    pub gap_prev: f64,
    /// `f(x_k) − f*`.
    pub gap_curr: f64,
    /// `f(x_{k+1}) − f*`.
    pub gap_next: f64,
}

/// Streams the recurrence one step at a time without storing the path.
#[derive(Debug, Clone)]
pub struct Runner<'a> {
    obj: &'a Objective,
    noise: &'a NoiseModel,
    sched: Schedule,
    streams: StreamFamily,
    k: u64,
    prev: Vec<f64>,
    curr: Vec<f64>,
    next: Vec<f64>,
    grad: Vec<f64>,
    g: Vec<f64>,
    theta: Vec<f64>,
    gap_prev: f64,
    gap_curr: f64,
    gap_next: f64,
    pending_rotate: bool,
}

impl<'a> Runner<'a> {
    /// Runner for trajectory `lane` of the ensemble keyed by `seed`.
    pub fn new(
        obj: &'a Objective,
        noise: &'a NoiseModel,
        sched: Schedule,
        x0: &[f64],
        seed: u64,
        lane: u64,
    ) -> Result<Self> {
        check_dim(obj.dim(), x0.len(), "x0")?;
        check_dim(obj.dim(), noise.dim(), "noise")?;
        if x0.iter().any(|v| !v.is_finite()) {
            return Err(argument("x0 must be finite"));
        }
        let n = obj.dim();
        let gap0 = obj.raw_gap(x0);
        Ok(Self {
            obj,
            noise,
            sched,
            streams: StreamFamily::new(seed, lane, MAIN_BRANCH),
            k: 1,
            prev: x0.to_vec(),
            curr: x0.to_vec(),
            next: vec![0.0; n],
            grad: vec![0.0; n],
            g: vec![0.0; n],
            theta: vec![0.0; n],
            gap_prev: gap0,
            gap_curr: gap0,
            gap_next: f64::NAN,
            pending_rotate: false,
        })
    }

    pub fn objective(&self) -> &'a Objective {
        self.obj
    }

    pub fn noise(&self) -> &'a NoiseModel {
        self.noise
    }

    pub fn schedule(&self) -> &Schedule {
        &self.sched
    }

    /// Index of the step the next call to [`Runner::step`] performs.
    pub fn k(&self) -> u64 {
        if self.pending_rotate {
            self.k + 1
        } else {
            self.k
        }
    }

    /// `(x_{k−1}, x_k, f(x_{k−1})−f*, f(x_k)−f*)` for the upcoming step `k`.
    pub fn window(&mut self) -> (&[f64], &[f64], f64, f64) {
        self.rotate();
        (&self.prev, &self.curr, self.gap_prev, self.gap_curr)
    }

    fn rotate(&mut self) {
        if self.pending_rotate {
            std::mem::swap(&mut self.prev, &mut self.curr);
            std::mem::swap(&mut self.curr, &mut self.next);
            self.gap_prev = self.gap_curr;
            self.gap_curr = self.gap_next;
            self.k += 1;
            self.pending_rotate = false;
        }
    }

    /// Performs step `k` with the trajectory's own noise stream.
    pub fn step(&mut self) -> Result<StepView<'_>> {
        let family = self.streams.clone();
        self.step_with(&family)
    }

    /// Performs step `k` drawing `θ_k` from `family`'s stream for step `k`.
    ///
    /// Used by branching Monte Carlo to resample a single step.
    pub fn step_with(&mut self, family: &StreamFamily) -> Result<StepView<'_>> {
        self.rotate();
        let k = self.k;
        let mut rng = family.stream(k);
        self.noise.sample_into(&mut rng, &mut self.theta);
        self.obj.grad_into(&self.curr, &mut self.grad);
        for i in 0..self.g.len() {
            self.g[i] = self.grad[i] - self.theta[i];
        }
        update_into(
            k,
            self.sched.eta(k),
            &self.prev,
            &self.curr,
            &self.g,
            &mut self.next,
        );
        let nsq = norm_sq(&self.next);
        if !nsq.is_finite() || nsq.sqrt() > DIVERGENCE_NORM {
            return Err(Error::Divergence {
                step: k + 1,
                norm: nsq.sqrt(),
            });
        }
        self.gap_next = self.obj.raw_gap(&self.next);
        self.pending_rotate = true;
        Ok(StepView {
            k,
            x_prev: &self.prev,
            x_curr: &self.curr,
            x_next: &self.next,
            grad: &self.grad,
            g: &self.g,
            theta: &self.theta,
            gap_prev: self.gap_prev,
            gap_curr: self.gap_curr,
            gap_next: self.gap_next,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
enum IterateStore {
    Full,
    /// Only the last three iterates and the last gradient/noise pair survive.
    Windowed,
}

/// Realized path of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub schedule: Schedule,
    pub objective: String,
    pub noise: String,
    pub seed: u64,
    pub lane: u64,
    dim: usize,
    steps: u64,
    store: IterateStore,
    xs: Vec<f64>,
    gs: Vec<f64>,
    thetas: Vec<f64>,
    f_gaps: Vec<f64>,
}

impl Trajectory {
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of recurrence steps `K`.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn is_windowed(&self) -> bool {
        self.store == IterateStore::Windowed
    }

    fn x_slot(&self, k: u64) -> Result<usize> {
        if k > self.steps + 1 {
            return Err(argument(format!(
                "iterate x_{k} beyond horizon K+1 = {}",
                self.steps + 1
            )));
        }
        match self.store {
            IterateStore::Full => Ok(k as usize),
            IterateStore::Windowed => {
                let first = self.steps + 1 - 2;
                if k < first {
                    Err(argument(format!(
                        "iterate x_{k} evicted by windowed storage"
                    )))
                } else {
                    Ok((k - first) as usize)
                }
            }
        }
    }

    fn step_slot(&self, k: u64) -> Result<usize> {
        if k == 0 || k > self.steps {
            return Err(argument(format!("step {k} outside 1..={}", self.steps)));
        }
        match self.store {
            IterateStore::Full => Ok((k - 1) as usize),
            IterateStore::Windowed if k == self.steps => Ok(0),
            IterateStore::Windowed => {
                Err(argument(format!("step {k} evicted by windowed storage")))
            }
        }
    }

    /// `x_k` for `0 ≤ k ≤ K+1`.
    pub fn x(&self, k: u64) -> Result<&[f64]> {
        let s = self.x_slot(k)?;
        Ok(&self.xs[s * self.dim..(s + 1) * self.dim])
    }

    /// `g(x_k, ξ_k)` for `1 ≤ k ≤ K`.
    pub fn g(&self, k: u64) -> Result<&[f64]> {
        let s = self.step_slot(k)?;
        Ok(&self.gs[s * self.dim..(s + 1) * self.dim])
    }

    /// `θ_k` for `1 ≤ k ≤ K`.
    pub fn theta(&self, k: u64) -> Result<&[f64]> {
        let s = self.step_slot(k)?;
        Ok(&self.thetas[s * self.dim..(s + 1) * self.dim])
    }

    /// `f(x_k) − f*` for `0 ≤ k ≤ K`.
    pub fn f_gap(&self, k: u64) -> Result<f64> {
        self.f_gaps
            .get(k as usize)
            .copied()
            .ok_or_else(|| argument(format!("f-gap index {k} beyond K = {}", self.steps)))
    }

    pub fn f_gaps(&self) -> &[f64] {
        &self.f_gaps
    }

    /// Rebuilds the [`StepView`] of step `k` and hands it to `f`.
    pub fn with_step<T>(
        &self,
        obj: &Objective,
        k: u64,
        f: impl FnOnce(&StepView<'_>) -> T,
    ) -> Result<T> {
        check_dim(obj.dim(), self.dim, "objective")?;
        let (x_prev, x_curr, x_next) = (self.x(k.saturating_sub(1))?, self.x(k)?, self.x(k + 1)?);
        let (g, theta) = (self.g(k)?, self.theta(k)?);
        let grad = obj.grad(x_curr)?;
        let gap_next = if (k + 1) as usize == self.f_gaps.len() {
            obj.raw_gap(x_next)
        } else {
            self.f_gaps[(k + 1) as usize]
        };
        let view = StepView {
            k,
            x_prev,
            x_curr,
            x_next,
            grad: &grad,
            g,
            theta,
            gap_prev: self.f_gaps[(k - 1) as usize],
            gap_curr: self.f_gaps[k as usize],
            gap_next,
        };
        Ok(f(&view))
    }
}

/// Runs `K` steps from `x0` and records the path.
///
/// Paths with more than [`FULL_STORAGE_LIMIT`] iterate scalars keep only the
/// last three iterates; scalar gaps are always stored in full.
pub fn run_trajectory(
    obj: &Objective,
    noise: &NoiseModel,
    sched: Schedule,
    x0: &[f64],
    steps: u64,
    seed: u64,
) -> Result<Trajectory> {
    run_trajectory_lane(obj, noise, sched, x0, steps, seed, 0)
}

/// [`run_trajectory`] for ensemble member `lane`.
pub fn run_trajectory_lane(
    obj: &Objective,
    noise: &NoiseModel,
    sched: Schedule,
    x0: &[f64],
    steps: u64,
    seed: u64,
    lane: u64,
) -> Result<Trajectory> {
    if steps == 0 {
        return Err(argument("run_trajectory: K must be >= 1"));
    }
    let dim = obj.dim();
    let windowed = (steps as usize).saturating_mul(dim) > FULL_STORAGE_LIMIT;
    let mut runner = Runner::new(obj, noise, sched, x0, seed, lane)?;
    let cap = if windowed { 3 } else { steps as usize + 2 };
    let mut xs = Vec::with_capacity(cap * dim);
    let mut gs = Vec::with_capacity(if windowed { dim } else { steps as usize * dim });
    let mut thetas = Vec::with_capacity(gs.capacity());
    let mut f_gaps = Vec::with_capacity(steps as usize + 1);
    xs.extend_from_slice(x0);
    xs.extend_from_slice(x0);
    let gap0 = obj.raw_gap(x0);
    f_gaps.push(gap0);
    f_gaps.push(gap0);
    for _ in 0..steps {
        let view = runner.step()?;
        if windowed {
            if xs.len() >= 3 * dim {
                xs.drain(..dim);
            }
            gs.clear();
            thetas.clear();
        }
        xs.extend_from_slice(view.x_next);
        gs.extend_from_slice(view.g);
        thetas.extend_from_slice(view.theta);
        if (view.k as usize) < steps as usize {
            f_gaps.push(view.gap_next);
        }
    }
    Ok(Trajectory {
        schedule: sched,
        objective: obj.label(),
        noise: noise.label(),
        seed,
        lane,
        dim,
        steps,
        store: if windowed {
            IterateStore::Windowed
        } else {
            IterateStore::Full
        },
        xs,
        gs,
        thetas,
        f_gaps,
    })
}
