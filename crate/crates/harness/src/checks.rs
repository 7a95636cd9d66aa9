//! The check suites. Each turns simulation output into [`CheckRecord`]s.

use sgdm_core::concentration::{mgf_check, weighted_square_tail_check, MgfCheckConfig};
use sgdm_core::martingale::{
    check_supermartingale, energy_threshold, s_tail_threshold, ville_alpha_for_bound,
    ville_monitor, SupermartingaleCheck,
};
use sgdm_core::stats::clopper_pearson;
use sgdm_core::stopping::CoverageReport;
use sgdm_core::{EnvelopeParams, NtParams};

use crate::config::{Resolved, RunConfig};
use crate::ensemble::{InequalityTally, PathSummary};
use crate::error::Result;
use crate::report::{CheckRecord, CoverageRow};

/// Everything the suites share for one run.
pub struct Context<'a> {
    pub cfg: &'a RunConfig,
    pub resolved: &'a Resolved,
    pub e0: f64,
    pub sigma: f64,
    pub envelope: EnvelopeParams,
    pub nt: NtParams,
}

fn tally(paths: &[PathSummary]) -> InequalityTally {
    let mut t = paths.first().map(|p| p.tally).unwrap_or_default();
    for p in paths.iter().skip(1) {
        t.merge(&p.tally);
    }
    t
}

fn count(name: &str, n: u64, checked: u64) -> CheckRecord {
    CheckRecord::new(name, n as f64, n == 0)
        .bound(0.0)
        .param("steps_checked", checked)
}

fn divergence_record(paths: &[PathSummary]) -> CheckRecord {
    let n = paths.iter().filter(|p| p.diverged()).count() as u64;
    let first = paths.iter().find_map(|p| p.divergence.map(|k| (p.lane, k)));
    let mut r = CheckRecord::new("divergence", n as f64, n == 0)
        .bound(0.0)
        .param("trajectories", paths.len() as u64);
    if let Some((lane, k)) = first {
        r = r.param("first_lane", lane).param("first_step", k);
    }
    r
}

/// Decay inequality and the energy sandwich on every simulated step.
pub fn descent(paths: &[PathSummary]) -> Vec<CheckRecord> {
    let t = tally(paths);
    let mut lemma =
        count("lemma", t.lemma, t.steps_checked).fparam("worst_margin", t.worst_lemma_margin);
    if let Some(k) = t.first_violation {
        lemma = lemma.param("first_violation", k);
    }
    vec![
        lemma,
        count("sandwich", t.sandwich, t.steps_checked),
        divergence_record(paths),
    ]
}

/// The intermediate bound, the noise split and `‖φ_{k+1}‖² ≤ E(k)`.
pub fn decomposition(paths: &[PathSummary]) -> Vec<CheckRecord> {
    let t = tally(paths);
    vec![
        count("intermediate", t.intermediate, t.steps_checked),
        count("decomposition", t.decomposition, t.steps_checked)
            .fparam("worst_margin", t.worst_decomp_margin),
        count("phi_bound", t.phi_bound, t.steps_checked),
        divergence_record(paths),
    ]
}

pub fn supermartingale(ctx: &Context<'_>) -> Result<Vec<CheckRecord>> {
    let s = &ctx.cfg.settings;
    let mut out = Vec::new();
    for &k in s
        .supermartingale_steps
        .iter()
        .filter(|&&k| k <= ctx.cfg.steps)
    {
        for i in 0..s.prefix_seeds {
            let prefix_seed = ctx.cfg.seed.wrapping_add(i);
            let rep = check_supermartingale(&SupermartingaleCheck {
                obj: &ctx.resolved.objective,
                noise: &ctx.resolved.noise,
                sched: ctx.resolved.schedule,
                x0: &ctx.cfg.x0,
                prefix_seed,
                k,
                params: ctx.nt,
                n_branches: s.branches,
                bootstrap_resamples: s.bootstrap_resamples,
            })?;
            let hw = 3.0 * rep.ci_halfwidth;
            out.push(
                CheckRecord::new("conditional_mean_excess", rep.estimate, rep.pass)
                    .param("k", k)
                    .param("prefix_seed", prefix_seed)
                    .param("branches", rep.branches as u64)
                    .fparam("stderr", rep.ci_halfwidth)
                    .fparam("bootstrap_upper", rep.bootstrap_upper)
                    .fparam("log_n_prev", rep.log_n_prev)
                    .ci(rep.estimate - hw, rep.estimate + hw)
                    .bound(0.0),
            );
        }
    }
    if out.is_empty() {
        out.push(
            CheckRecord::new("conditional_mean_excess", f64::NAN, false)
                .param("reason", "no test step within run length"),
        );
    }
    Ok(out)
}

fn exceedance(name: &str, hits: u64, trials: u64, bound: f64, threshold: f64) -> CheckRecord {
    let ci = clopper_pearson(hits, trials, 0.99);
    CheckRecord::new(name, hits as f64 / trials as f64, ci.0 <= bound)
        .param("exceedances", hits)
        .param("trials", trials)
        .fparam("threshold", threshold)
        .ci(ci.0, ci.1)
        .bound(bound)
}

/// Maximal inequality for `N^t` plus the energy and `S` tail levels per `β`.
pub fn ville(ctx: &Context<'_>, paths: &[PathSummary]) -> Result<Vec<CheckRecord>> {
    // a divergent path counts as an exceedance
    let worst = |p: &PathSummary, v: f64| if p.diverged() { f64::INFINITY } else { v };
    let sups: Vec<f64> = paths.iter().map(|p| worst(p, p.sup_log_n)).collect();
    let alpha = ville_alpha_for_bound(ctx.nt.gamma2, ctx.e0, ctx.cfg.settings.ville_level);
    let rep = ville_monitor(&sups, &ctx.nt, ctx.e0, alpha)?;
    let mut out = vec![
        CheckRecord::new("maximal_inequality", rep.empirical_rate, rep.pass)
            .param("exceedances", rep.exceedances)
            .param("trials", rep.trials)
            .fparam("alpha", alpha)
            .fparam("t", ctx.nt.t)
            .ci(rep.ci.0, rep.ci.1)
            .bound(rep.bound),
    ];
    let trials = paths.len() as u64;
    let (g1, g2) = (ctx.envelope.gamma1.upper(), ctx.envelope.gamma2.upper());
    for &beta in &ctx.cfg.betas {
        let thr = energy_threshold(ctx.e0, beta, ctx.sigma, g1, g2, ctx.nt.b);
        let hits = paths.iter().filter(|p| worst(p, p.sup_e) >= thr).count() as u64;
        out.push(exceedance("energy_tail", hits, trials, 2.0 * beta, thr).fparam("beta", beta));
        let thr = s_tail_threshold(beta, ctx.sigma, g1);
        let hits = paths.iter().filter(|p| worst(p, p.sup_s) >= thr).count() as u64;
        out.push(exceedance("s_tail", hits, trials, beta, thr).fparam("beta", beta));
    }
    Ok(out)
}

/// Directional moment generating function along the first coordinate.
pub fn mgf(ctx: &Context<'_>) -> Result<Vec<CheckRecord>> {
    let noise = &ctx.resolved.noise;
    let mut phi = vec![0.0; noise.dim()];
    phi[0] = 1.0;
    let reps = mgf_check(&MgfCheckConfig {
        lambda_grid: ctx.cfg.settings.mgf_lambdas.clone(),
        n_samples: ctx.cfg.settings.mgf_samples,
        noise,
        phi,
        seed: ctx.cfg.seed,
    })?;
    Ok(reps
        .into_iter()
        .map(|r| {
            let mut rec = CheckRecord::new("directional_mgf", r.estimate, r.pass)
                .fparam("lambda", r.lambda)
                .fparam("rel_stderr", r.rel_stderr)
                .ci(
                    r.estimate * (1.0 - 3.0 * r.rel_stderr),
                    r.estimate * (1.0 + 3.0 * r.rel_stderr),
                )
                .bound(r.bound);
            if let Some(a) = r.analytic {
                rec = rec.fparam("analytic", a);
            }
            rec
        })
        .collect())
}

/// Weighted sum of squared noise with the schedule's `a_1..a_n` as weights.
pub fn tail(ctx: &Context<'_>) -> Result<Vec<CheckRecord>> {
    let s = &ctx.cfg.settings;
    let c: Vec<f64> = (1..=s.tail_terms as u64)
        .map(|k| ctx.resolved.schedule.a_coeff(k))
        .collect::<sgdm_core::Result<_>>()?;
    let reps = weighted_square_tail_check(
        &c,
        &ctx.resolved.noise,
        &s.tail_omegas,
        s.tail_runs,
        ctx.cfg.seed,
    )?;
    Ok(reps
        .into_iter()
        .map(|r| {
            CheckRecord::new("weighted_square_tail", r.frequency, r.pass)
                .fparam("omega", r.omega)
                .fparam("threshold", r.threshold)
                .param("exceedances", r.exceedances)
                .param("trials", r.trials)
                .ci(r.ci.0, r.ci.1)
                .bound(r.bound)
        })
        .collect())
}

/// Envelope coverage per `β`: uniform over `1..=K`, the first-violation
/// adversary and each configured rule.
pub fn coverage(ctx: &Context<'_>, paths: &[PathSummary]) -> (Vec<CheckRecord>, Vec<CoverageRow>) {
    let (r_count, k) = (paths.len() as u64, ctx.cfg.steps);
    let mut records = Vec::new();
    let mut rows = Vec::new();
    for (i, &beta) in ctx.cfg.betas.iter().enumerate() {
        let bound = 1.0 - 2.0 * beta;
        let mut push = |rule: String, rep: CoverageReport, extra: bool| {
            let pass = extra && rep.passes(beta);
            rows.push(CoverageRow {
                beta,
                rule: rule.clone(),
                r: r_count,
                k,
                frequency: rep.frequency,
                ci: rep.ci,
                bound,
                pass,
            });
            records.push(
                CheckRecord::new("coverage", rep.frequency, pass)
                    .fparam("beta", beta)
                    .param("rule", rule)
                    .param("successes", rep.successes)
                    .param("trials", rep.trials)
                    .ci(rep.ci.0, rep.ci.1)
                    .bound(bound),
            );
        };
        let uniform: Vec<bool> = paths.iter().map(|p| p.coverage[i].uniform).collect();
        let adversarial: Vec<bool> = paths
            .iter()
            .map(|p| p.coverage[i].adversarial.covered)
            .collect();
        push(
            "uniform".into(),
            CoverageReport::from_indicators(uniform.iter().copied()),
            true,
        );
        // the adversary covers exactly the uniformly covered paths
        push(
            "adversarial".into(),
            CoverageReport::from_indicators(adversarial.iter().copied()),
            adversarial == uniform,
        );
        for (j, rule) in ctx.resolved.rules.iter().enumerate() {
            let ind: Vec<bool> = paths
                .iter()
                .map(|p| p.coverage[i].rules[j].covered)
                .collect();
            let dominates = ind.iter().zip(&adversarial).all(|(&r, &a)| r || !a);
            push(
                rule.to_string(),
                CoverageReport::from_indicators(ind),
                dominates,
            );
        }
    }
    (records, rows)
}

/// Bracket widths and the assembled envelope constants.
pub fn constants(ctx: &Context<'_>) -> Vec<CheckRecord> {
    let env = &ctx.envelope;
    let tol = ctx.cfg.settings.gamma_tol;
    let bracket = |name: &str, b: sgdm_core::Bracket| {
        let ok = b.tail_bound >= 0.0 && b.tail_bound <= tol * b.value * (1.0 + 1e-9);
        CheckRecord::new(name, b.value, ok)
            .ci(b.value, b.upper())
            .bound(tol * b.value)
            .fparam("width", b.tail_bound)
    };
    let positive = |name: &str, v: f64| CheckRecord::new(name, v, v.is_finite() && v > 0.0);
    let mut out = vec![
        bracket("gamma1", env.gamma1),
        bracket("gamma2", env.gamma2),
        positive("C1", env.c1),
        positive("C2", env.c2),
        CheckRecord::new("E0", ctx.e0, ctx.e0.is_finite() && ctx.e0 >= 0.0),
    ];
    if let Some(z) = env.zeta {
        out.push(positive("zeta", z.zeta));
        out.push(positive("h", z.h));
        out.push(positive("C0", z.c0));
        out.push(
            CheckRecord::new("gamma1_below_zeta", env.gamma1.upper(), z.gamma1_within)
                .bound(z.zeta),
        );
        out.push(
            CheckRecord::new("gamma2_below_exp", env.gamma2.upper(), z.gamma2_within)
                .bound((ctx.sigma * ctx.sigma * z.zeta).exp()),
        );
    }
    out
}

/// Rows of `constants.csv`: `(name, value, lower, upper)`.
pub fn constants_rows(ctx: &Context<'_>) -> Vec<(String, f64, Option<f64>, Option<f64>)> {
    let env = &ctx.envelope;
    let mut rows = vec![
        (
            "gamma1".into(),
            env.gamma1.value,
            Some(env.gamma1.value),
            Some(env.gamma1.upper()),
        ),
        (
            "gamma2".into(),
            env.gamma2.value,
            Some(env.gamma2.value),
            Some(env.gamma2.upper()),
        ),
        ("C1".into(), env.c1, None, None),
        ("C2".into(), env.c2, None, None),
        ("E0".into(), ctx.e0, None, None),
        ("sigma".into(), ctx.sigma, None, None),
    ];
    if let Some(z) = env.zeta {
        rows.push(("zeta".into(), z.zeta, None, None));
        rows.push(("h".into(), z.h, None, None));
        rows.push(("C0".into(), z.c0, None, None));
    }
    rows
}
