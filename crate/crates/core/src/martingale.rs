//! Martingale side of the energy analysis.
//!
//! With `S(k) = Σ_{l≤k} a_l‖θ_l‖²` and `M(k) = E(k) − S(k)`, the process
//!
//! ```text
//! log N^t(k) = (γ₂ / P_k) · t · M(k) − σ²γ₂ t Σ_{l≤k} a_l S(l−1),   P_k = Π_{l≤k} (1 + σ²a_l)
//! ```
//!
//! is a supermartingale for `0 < t ≤ B/γ₂`, where `γ₁ = Σ a_k` and
//! `γ₂ = Π (1 + σ²a_k)`. Everything is kept in the log domain.

use rand::Rng;
use rayon::prelude::*;

use crate::error::{argument, Error, Result};
use crate::lyapunov::{initial_energy, StepDiagnostics};
use crate::noise::{NoiseKind, NoiseModel};
use crate::objectives::Objective;
use crate::rng::{stream, StreamFamily};
use crate::sgdm::{Runner, Schedule};
use crate::stats::{clopper_pearson, Moments};
use crate::vecops::CompensatedSum;

/// Largest number of explicit terms summed before giving up on a bracket.
pub const MAX_SERIES_TERMS: u64 = 1 << 27;

const FIRST_CUTOFF: u64 = 1 << 10;

/// Coefficient sequence `a_k, k ≥ 1`.
#[derive(Debug, Clone, PartialEq)]
pub enum Coefficients {
    Schedule(Schedule),
    /// `a_1, …, a_n`, zero afterwards.
    Finite(Vec<f64>),
}

impl From<Schedule> for Coefficients {
    fn from(s: Schedule) -> Self {
        Coefficients::Schedule(s)
    }
}

impl From<&Schedule> for Coefficients {
    fn from(s: &Schedule) -> Self {
        Coefficients::Schedule(*s)
    }
}

/// Certified enclosure `value ≤ γ ≤ value + tail_bound`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bracket {
    pub value: f64,
    pub tail_bound: f64,
}

impl Bracket {
    pub fn upper(&self) -> f64 {
        self.value + self.tail_bound
    }

    pub fn contains(&self, x: f64) -> bool {
        self.value <= x && x <= self.upper()
    }
}

fn check_tol(tol: f64) -> Result<()> {
    if tol > 0.0 && tol < 1.0 {
        Ok(())
    } else {
        Err(argument(format!("tolerance must lie in (0, 1), got {tol}")))
    }
}

/// `∫_Y^∞ dx / (x ln^p(x+2))` enclosed from both sides.
fn log_tail_integral(y: f64, p: f64) -> (f64, f64) {
    let ln = (y + 2.0).ln();
    let main = ln.powf(1.0 - p) / (p - 1.0);
    let lnp = ln.powf(p);
    let upper = main + (2.0 / y).ln_1p() / lnp;
    let lower = main + 2.0 / ((y + 2.0) * lnp * (1.0 + p / ln));
    (lower, upper)
}

/// Enclosure of `Σ_{k>K} a_k` for a schedule (convex, decreasing terms).
fn schedule_tail(sched: &Schedule, cutoff: u64) -> (f64, f64) {
    let p = sched.log_power();
    let scale = sched.coefficient_scale();
    let kf = cutoff as f64;
    let (lo_int, _) = log_tail_integral(kf + 1.0, p);
    let (_, hi_int) = log_tail_integral(kf + 0.5, p);
    let lo = lo_int / scale + 0.5 * sched.a_unchecked(cutoff + 1);
    let hi = hi_int / scale;
    (lo, hi)
}

fn check_convergent(sched: &Schedule) -> Result<()> {
    if sched.log_power() > 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "coefficient series diverges for log power {}",
            sched.log_power()
        )))
    }
}

/// Drives partial sums of `term(a_k)` with doubling cutoffs until `done`
/// accepts the bracket assembled from the partial sum and the tail of `Σ a_k`.
fn refine<T>(
    sched: &Schedule,
    term: impl Fn(f64) -> f64,
    mut done: impl FnMut(f64, (f64, f64), u64) -> Option<T>,
) -> Result<T> {
    check_convergent(sched)?;
    let mut acc = CompensatedSum::default();
    let mut k = 0u64;
    let mut cutoff = FIRST_CUTOFF;
    loop {
        while k < cutoff {
            k += 1;
            acc.add(term(sched.a_unchecked(k)));
        }
        if let Some(out) = done(acc.value(), schedule_tail(sched, cutoff), cutoff) {
            return Ok(out);
        }
        if cutoff >= MAX_SERIES_TERMS {
            return Err(Error::Config(format!(
                "series bracket did not reach the requested tolerance within {MAX_SERIES_TERMS} terms"
            )));
        }
        cutoff *= 2;
    }
}

/// `γ₁ = Σ_{k≥1} a_k` with a certified bracket of relative width at most `tol`.
pub fn gamma1(coeffs: impl Into<Coefficients>, tol: f64) -> Result<Bracket> {
    check_tol(tol)?;
    match coeffs.into() {
        Coefficients::Finite(a) => Ok(Bracket {
            value: crate::vecops::neumaier(a.iter().copied()),
            tail_bound: 0.0,
        }),
        Coefficients::Schedule(s) => refine(
            &s,
            |a| a,
            |partial, (lo, hi), _| {
                let value = partial + lo;
                let width = hi - lo;
                (width <= tol * value).then_some(Bracket {
                    value,
                    tail_bound: width,
                })
            },
        ),
    }
}

/// `γ₂ = Π_{k≥1} (1 + σ²a_k)` with a certified bracket of relative width at most `tol`.
pub fn gamma2(coeffs: impl Into<Coefficients>, sigma: f64, tol: f64) -> Result<Bracket> {
    check_tol(tol)?;
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(argument(format!(
            "sigma must be finite and >= 0, got {sigma}"
        )));
    }
    let s2 = sigma * sigma;
    match coeffs.into() {
        _ if s2 == 0.0 => Ok(Bracket {
            value: 1.0,
            tail_bound: 0.0,
        }),
        Coefficients::Finite(a) => {
            let log = crate::vecops::neumaier(a.iter().map(|&x| (s2 * x).ln_1p()));
            Ok(Bracket {
                value: log.exp(),
                tail_bound: 0.0,
            })
        }
        Coefficients::Schedule(s) => refine(
            &s,
            |a| (s2 * a).ln_1p(),
            |partial, (lo, hi), cutoff| {
                // ln(1+x) ∈ [x − x²/2, x] and Σ_{k>K} a_k² ≤ a_{K+1} Σ_{k>K} a_k
                let log_lo = partial + s2 * lo - 0.5 * s2 * s2 * s.a_unchecked(cutoff + 1) * hi;
                let log_hi = partial + s2 * hi;
                let value = log_lo.exp();
                let width = (log_hi - log_lo).exp_m1() * value;
                (width <= tol * value).then_some(Bracket {
                    value,
                    tail_bound: width,
                })
            },
        ),
    }
}

/// Parameters of `N^t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NtParams {
    pub t: f64,
    pub sigma: f64,
    /// The `γ₂` used throughout; any upper bound of the true product works.
    pub gamma2: f64,
    /// MGF range constant `B ∈ (0, 1]`.
    pub b: f64,
}

impl NtParams {
    pub fn new(t: f64, sigma: f64, gamma2: f64, b: f64) -> Result<Self> {
        if !(b > 0.0 && b <= 1.0) {
            return Err(argument(format!("B must lie in (0, 1], got {b}")));
        }
        if !(gamma2 >= 1.0 && gamma2.is_finite()) {
            return Err(argument(format!(
                "gamma2 must be finite and >= 1, got {gamma2}"
            )));
        }
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(argument(format!(
                "sigma must be finite and >= 0, got {sigma}"
            )));
        }
        if !(t > 0.0 && t <= b / gamma2 * (1.0 + 1e-12)) {
            return Err(argument(format!(
                "t must lie in (0, B/gamma2 = {}], got {t}",
                b / gamma2
            )));
        }
        Ok(Self {
            t,
            sigma,
            gamma2,
            b,
        })
    }

    /// `t = B/γ₂`.
    pub fn at_max_t(sigma: f64, gamma2: f64, b: f64) -> Result<Self> {
        Self::new(b / gamma2, sigma, gamma2, b)
    }
}

/// Running state of `S`, `M` and `log N^t` along one path.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MartingaleState {
    pub k: u64,
    pub s: f64,
    pub m: f64,
    pub log_n: f64,
    /// `ln P_k`.
    log_prefix: f64,
    /// `Σ_{l≤k} a_l S(l−1)`.
    weighted: f64,
    params: NtParams,
}

impl MartingaleState {
    pub fn start(e0: f64, params: NtParams) -> Self {
        Self {
            k: 0,
            s: 0.0,
            m: e0,
            log_n: params.gamma2 * params.t * e0,
            log_prefix: 0.0,
            weighted: 0.0,
            params,
        }
    }

    pub fn params(&self) -> &NtParams {
        &self.params
    }

    /// `Σ_{l≤k} a_l S(l−1)`.
    pub fn weighted_s(&self) -> f64 {
        self.weighted
    }

    /// Folds in step `k+1` given `a`, `‖θ‖²` and the new energy.
    pub fn advance(&mut self, a: f64, theta_sq: f64, e: f64) -> f64 {
        *self = self.peek(a, theta_sq, e);
        self.log_n
    }

    /// State after one more step, leaving `self` untouched.
    pub fn peek(&self, a: f64, theta_sq: f64, e: f64) -> Self {
        let p = &self.params;
        let s2 = p.sigma * p.sigma;
        let weighted = self.weighted + a * self.s;
        let s = self.s + a * theta_sq;
        let log_prefix = self.log_prefix + (s2 * a).ln_1p();
        let m = e - s;
        let tail = p.gamma2 * (-log_prefix).exp();
        let log_n = tail * p.t * m - s2 * p.gamma2 * p.t * weighted;
        Self {
            k: self.k + 1,
            s,
            m,
            log_n,
            log_prefix,
            weighted,
            params: *p,
        }
    }

    pub fn advance_diag(&mut self, d: &StepDiagnostics) -> f64 {
        self.advance(d.a, d.theta_sq, d.e_curr)
    }
}

/// `S`, `M` and `log N^t` over a whole path, indexed by `k = 0..=K`.
#[derive(Debug, Clone, PartialEq)]
pub struct MartingaleTrace {
    pub s: Vec<f64>,
    pub m: Vec<f64>,
    pub log_n: Vec<f64>,
    pub params: NtParams,
    /// `Σ_{l≤K} a_l S(l−1)`.
    pub weighted_s: f64,
}

impl MartingaleTrace {
    /// From energies `E(0..=K)`, coefficients `a_1..a_K` and `‖θ_1‖²..‖θ_K‖²`.
    pub fn from_parts(e: &[f64], a: &[f64], theta_sq: &[f64], params: NtParams) -> Result<Self> {
        if e.len() != a.len() + 1 || a.len() != theta_sq.len() {
            return Err(argument(format!(
                "expected |E| = |a| + 1 = |theta| + 1, got {}, {}, {}",
                e.len(),
                a.len(),
                theta_sq.len()
            )));
        }
        let mut st = MartingaleState::start(e[0], params);
        let mut t = Self {
            s: vec![0.0],
            m: vec![e[0]],
            log_n: vec![st.log_n],
            params,
            weighted_s: 0.0,
        };
        for i in 0..a.len() {
            st.advance(a[i], theta_sq[i], e[i + 1]);
            t.s.push(st.s);
            t.m.push(st.m);
            t.log_n.push(st.log_n);
        }
        t.weighted_s = st.weighted;
        Ok(t)
    }

    pub fn sup_log_n(&self) -> f64 {
        self.log_n.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `γ₁ S(K) − Σ_{l≤K} a_l S(l−1)`, nonnegative up to rounding.
    pub fn weighted_s_residual(&self, gamma1: f64) -> f64 {
        gamma1 * self.s.last().copied().unwrap_or(0.0) - self.weighted_s
    }
}

/// `S(k)` and `M(k)` only, i.e. a trace whose `log N` uses `t = 1, σ = 0`.
pub fn compute_s_m(e: &[f64], a: &[f64], theta_sq: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    let t = MartingaleTrace::from_parts(e, a, theta_sq, NtParams::new(1.0, 0.0, 1.0, 1.0)?)?;
    Ok((t.s, t.m))
}

/// `log N^t(k)` recomputed from the trace's `S` and `M`.
pub fn log_n_t(trace: &MartingaleTrace, a: &[f64], k: usize) -> Result<f64> {
    if k >= trace.s.len() || a.len() + 1 < trace.s.len() {
        return Err(argument(format!("k = {k} outside the trace")));
    }
    let p = &trace.params;
    let s2 = p.sigma * p.sigma;
    let mut log_prefix = 0.0;
    let mut weighted = CompensatedSum::default();
    for l in 1..=k {
        log_prefix += (s2 * a[l - 1]).ln_1p();
        weighted.add(a[l - 1] * trace.s[l - 1]);
    }
    Ok(p.gamma2 * (-log_prefix).exp() * p.t * trace.m[k] - s2 * p.gamma2 * p.t * weighted.value())
}

/// `(1+κ)E(k−1) + a‖θ‖² + √a⟨θ,φ⟩ − E(k)` for an almost-supermartingale step with slack `κ ≥ 0`.
pub fn almost_supermartingale_residual(d: &StepDiagnostics, kappa: f64) -> f64 {
    (1.0 + kappa) * d.e_prev + d.rhs_decomp - d.e_curr
}

/// Branching Monte Carlo check of `E[N^t(k) | F_{k−1}] ≤ N^t(k−1)`.
#[derive(Debug, Clone)]
pub struct SupermartingaleCheck<'a> {
    pub obj: &'a Objective,
    pub noise: &'a NoiseModel,
    pub sched: Schedule,
    pub x0: &'a [f64],
    pub prefix_seed: u64,
    pub k: u64,
    pub params: NtParams,
    pub n_branches: usize,
    pub bootstrap_resamples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupermartingaleReport {
    pub k: u64,
    /// `E[N^t(k) | F_{k−1}] / N^t(k−1) − 1`.
    pub estimate: f64,
    /// One standard error of `estimate`.
    pub ci_halfwidth: f64,
    /// One-sided 99% bootstrap upper bound on `estimate`.
    pub bootstrap_upper: f64,
    pub log_n_prev: f64,
    pub branches: usize,
    pub pass: bool,
}

/// Absolute slack absorbing rounding in the ratio when noise vanishes.
const RATIO_FLOOR: f64 = 1e-12;

/// Runs the prefix to step `k−1`, resamples step `k` in `n_branches`
/// independent branches and compares the conditional mean of `N^t(k)` with
/// `N^t(k−1)`. Passes when the relative excess is within three standard errors.
pub fn check_supermartingale(cfg: &SupermartingaleCheck<'_>) -> Result<SupermartingaleReport> {
    if cfg.k == 0 {
        return Err(argument("supermartingale check needs k >= 1"));
    }
    if cfg.n_branches == 0 {
        return Err(argument("n_branches must be positive"));
    }
    let x_star = cfg.obj.minimizer();
    let e0 = initial_energy(&cfg.sched, cfg.obj, cfg.x0)?;
    let mut runner = Runner::new(cfg.obj, cfg.noise, cfg.sched, cfg.x0, cfg.prefix_seed, 0)?;
    let mut state = MartingaleState::start(e0, cfg.params);
    for _ in 1..cfg.k {
        let v = runner.step()?;
        state.advance_diag(&StepDiagnostics::from_view(&v, &cfg.sched, x_star));
    }
    let branches = if cfg.noise.kind() == NoiseKind::None {
        1
    } else {
        cfg.n_branches
    };
    let ratios: Vec<f64> = (0..branches)
        .into_par_iter()
        .map(|b| -> Result<f64> {
            let mut r = runner.clone();
            let fam = StreamFamily::new(cfg.prefix_seed, 0, b as u64 + 1);
            let v = r.step_with(&fam)?;
            let d = StepDiagnostics::from_view(&v, &cfg.sched, x_star);
            Ok((state.peek(d.a, d.theta_sq, d.e_curr).log_n - state.log_n).exp())
        })
        .collect::<Result<_>>()?;
    let mut m = Moments::default();
    for &r in &ratios {
        m.push(r);
    }
    let estimate = m.mean() - 1.0;
    let se = if branches > 1 { m.stderr() } else { 0.0 };
    let bootstrap_upper =
        bootstrap_upper_mean(&ratios, cfg.bootstrap_resamples, cfg.prefix_seed) - 1.0;
    Ok(SupermartingaleReport {
        k: cfg.k,
        estimate,
        ci_halfwidth: se,
        bootstrap_upper,
        log_n_prev: state.log_n,
        branches,
        pass: estimate <= 3.0 * se + RATIO_FLOOR,
    })
}

/// 99th percentile of resampled means.
fn bootstrap_upper_mean(xs: &[f64], resamples: usize, seed: u64) -> f64 {
    if xs.len() < 2 || resamples == 0 {
        return xs.iter().sum::<f64>() / xs.len() as f64;
    }
    let mut rng = stream(seed, u64::MAX, 0, u64::MAX);
    let n = xs.len();
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| {
            let mut acc = CompensatedSum::default();
            for _ in 0..n {
                acc.add(xs[rng.random_range(0..n)]);
            }
            acc.value() / n as f64
        })
        .collect();
    means.sort_by(f64::total_cmp);
    let idx = ((0.99 * resamples as f64).ceil() as usize).clamp(1, resamples) - 1;
    means[idx]
}

/// Outcome of comparing maximal-inequality exceedances with their bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VilleReport {
    pub exceedances: u64,
    pub trials: u64,
    pub empirical_rate: f64,
    pub bound: f64,
    /// Clopper–Pearson 99% interval of the exceedance rate.
    pub ci: (f64, f64),
    pub pass: bool,
}

/// Fraction of paths with `sup_k log N^t(k) ≥ α t`, against `exp(−αt + γ₂ t E(0))`.
pub fn ville_monitor(
    sup_log_n: &[f64],
    params: &NtParams,
    e0: f64,
    alpha: f64,
) -> Result<VilleReport> {
    if !(alpha > 0.0) {
        return Err(argument(format!("alpha must be positive, got {alpha}")));
    }
    if sup_log_n.is_empty() {
        return Err(argument("ville_monitor needs at least one path"));
    }
    let level = alpha * params.t;
    let exceedances = sup_log_n.iter().filter(|&&s| s >= level).count() as u64;
    let trials = sup_log_n.len() as u64;
    let bound = (-level + params.gamma2 * params.t * e0).exp().min(1.0);
    let ci = clopper_pearson(exceedances, trials, 0.99);
    Ok(VilleReport {
        exceedances,
        trials,
        empirical_rate: exceedances as f64 / trials as f64,
        bound,
        ci,
        pass: ci.0 <= bound,
    })
}

/// [`ville_monitor`] over full traces.
pub fn ville_monitor_traces(
    traces: &[MartingaleTrace],
    e0: f64,
    alpha: f64,
) -> Result<VilleReport> {
    let first = traces
        .first()
        .ok_or_else(|| argument("ville_monitor needs at least one path"))?;
    let sups: Vec<f64> = traces.iter().map(MartingaleTrace::sup_log_n).collect();
    ville_monitor(&sups, &first.params, e0, alpha)
}

/// `α` at which the maximal-inequality bound equals `level` for `t = 1/γ₂`.
pub fn ville_alpha_for_bound(gamma2: f64, e0: f64, level: f64) -> f64 {
    gamma2 * (e0 - level.ln())
}

/// Level exceeded by `sup_k E(k)` with probability at most `2β`.
pub fn energy_threshold(e0: f64, beta: f64, sigma: f64, gamma1: f64, gamma2: f64, b: f64) -> f64 {
    let l = (1.0 / beta).ln();
    let s2 = sigma * sigma;
    gamma2 / b * (b * e0 + l) + (1.0 + l) * s2 * (1.0 + s2 * gamma1 * gamma2) * gamma1
}

/// Level exceeded by `sup_k S(k)` with probability at most `β`.
pub fn s_tail_threshold(beta: f64, sigma: f64, gamma1: f64) -> f64 {
    (1.0 + (1.0 / beta).ln()) * sigma * sigma * gamma1
}

#[cfg(test)]
#[allow(clippy::excessive_precision)]
mod tests {
    use super::*;
    use crate::lyapunov::{riemann_zeta, LyapunovTrace};
    use crate::noise::calibrate;
    use crate::sgdm::run_trajectory;

    fn tm() -> Schedule {
        Schedule::theorem_main(1.0).unwrap()
    }

    // values from mpmath with the tail integral split into a closed form
    // and a fast-decaying remainder
    #[test]
    fn gamma_brackets_contain_reference() {
        let g1 = gamma1(tm(), 1e-7).unwrap();
        assert!(g1.contains(1.888_001_876_931_903), "{g1:?}");
        assert!(g1.tail_bound <= 1e-7 * g1.value);
        let g2 = gamma2(tm(), 1.0, 1e-7).unwrap();
        assert!(g2.contains(5.052_743_858_458_98), "{g2:?}");
        for (eps, r1, r2) in [
            (0.1, 0.111_019_294_443_315, 1.117_359_613_132_574),
            (0.3, 0.043_787_365_048_106_1, 1.044_710_357_443_175),
            (0.49, 0.030_379_043_671_903_7, 1.030_798_808_898_232),
        ] {
            let s = Schedule::proposition_eps(1.0, eps, 100.0).unwrap();
            let g1 = gamma1(s, 1e-6).unwrap();
            let g2 = gamma2(s, 1.0, 1e-6).unwrap();
            assert!(
                (g1.value - r1).abs() <= 1e-6 * r1 + 1e-15 && g1.upper() >= r1 * (1.0 - 1e-14),
                "{eps}: {g1:?}"
            );
            assert!(
                (g2.value - r2).abs() <= 1e-6 * r2 && g2.upper() >= r2 * (1.0 - 1e-14),
                "{eps}: {g2:?}"
            );
        }
    }

    #[test]
    fn finite_and_degenerate_sequences() {
        assert_eq!(
            gamma1(Coefficients::Finite(vec![0.0; 5]), 1e-6).unwrap(),
            Bracket {
                value: 0.0,
                tail_bound: 0.0
            }
        );
        let g2 = gamma2(Coefficients::Finite(vec![1.0]), 1.0, 1e-6).unwrap();
        assert!((g2.value - 2.0).abs() < 1e-15 && g2.tail_bound == 0.0);
        assert_eq!(
            gamma2(tm(), 0.0, 1e-6).unwrap(),
            Bracket {
                value: 1.0,
                tail_bound: 0.0
            }
        );
    }

    #[test]
    fn gamma2_below_exponential_of_gamma1() {
        let s = Schedule::proposition_eps(2.0, 0.2, 150.0).unwrap();
        let g1 = gamma1(s, 1e-6).unwrap();
        let g2 = gamma2(s, 1.5, 1e-6).unwrap();
        assert!(g2.value <= (2.25 * g1.upper()).exp());
        assert!(g1.upper() <= riemann_zeta(1.2).unwrap());
    }

    #[test]
    fn finer_tolerance_stays_inside() {
        let s = Schedule::proposition_eps(1.0, 0.4, 100.0).unwrap();
        let coarse = gamma1(s, 1e-4).unwrap();
        let fine = gamma1(s, 1e-5).unwrap();
        assert!(coarse.value <= fine.value && fine.upper() <= coarse.upper() * (1.0 + 1e-14));
    }

    #[test]
    fn tolerance_validated() {
        assert!(gamma1(tm(), 0.0).is_err());
        assert!(gamma2(tm(), 1.0, 1.5).is_err());
        assert!(gamma2(tm(), -1.0, 1e-6).is_err());
    }

    #[test]
    fn trace_identities() {
        let q = Objective::quadratic(vec![1.0, 0.5], vec![0.0, 0.0]).unwrap();
        let m = calibrate(NoiseKind::GaussianIsotropic, 2, 1.0).unwrap();
        let t = run_trajectory(&q, &m, tm(), &[2.0, -1.0], 200, 3).unwrap();
        let lt = LyapunovTrace::build(&t, &tm(), &q).unwrap();
        let th: Vec<f64> = (1..=200)
            .map(|k| crate::vecops::norm_sq(t.theta(k).unwrap()))
            .collect();
        let g2 = gamma2(tm(), 1.0, 1e-6).unwrap().upper();
        let p = NtParams::at_max_t(1.0, g2, 1.0).unwrap();
        let tr = MartingaleTrace::from_parts(&lt.e, &lt.a, &th, p).unwrap();
        assert!((tr.log_n[0] - g2 * p.t * lt.e[0]).abs() <= 1e-12 * tr.log_n[0].abs());
        for k in 0..=200 {
            assert!((tr.m[k] + tr.s[k] - lt.e[k]).abs() <= 1e-12 * lt.e[k].abs().max(1.0));
            if k > 0 {
                assert!(tr.s[k] >= tr.s[k - 1]);
            }
        }
        for k in [0, 1, 17, 200] {
            let direct = log_n_t(&tr, &lt.a, k).unwrap();
            assert!((direct - tr.log_n[k]).abs() <= 1e-10 * (1.0 + direct.abs()));
        }
        let g1 = gamma1(tm(), 1e-6).unwrap().upper();
        assert!(tr.weighted_s_residual(g1) >= 0.0);
    }

    #[test]
    fn single_theta_sum() {
        let a1 = 1.0 / 3f64.ln().powi(2);
        let e = [1.0, 1.0, 1.0, 1.0];
        let (s, m) = compute_s_m(&e, &[a1, 0.1, 0.2], &[1.0, 0.0, 0.0]).unwrap();
        assert_eq!(s, vec![0.0, a1, a1, a1]);
        assert_eq!(m[2], 1.0 - a1);
    }

    #[test]
    fn zero_noise_log_n_nonincreasing() {
        let q = Objective::quadratic(vec![1.0], vec![0.0]).unwrap();
        let z = calibrate(NoiseKind::None, 1, 0.0).unwrap();
        let t = run_trajectory(&q, &z, tm(), &[2.0], 100, 0).unwrap();
        let lt = LyapunovTrace::build(&t, &tm(), &q).unwrap();
        let g2 = gamma2(tm(), 1.0, 1e-6).unwrap().upper();
        let p = NtParams::at_max_t(1.0, g2, 1.0).unwrap();
        let tr = MartingaleTrace::from_parts(&lt.e, &lt.a, &vec![0.0; 100], p).unwrap();
        for k in 1..=100 {
            assert!(tr.log_n[k] <= tr.log_n[k - 1] + 1e-12);
        }
    }

    #[test]
    fn t_range_enforced() {
        assert!(NtParams::new(0.5, 1.0, 3.0, 1.0).is_err());
        assert!(NtParams::new(0.0, 1.0, 3.0, 1.0).is_err());
        assert!(NtParams::new(0.3, 1.0, 3.0, 1.0).is_ok());
        assert!(NtParams::new(0.1, 1.0, 3.0, 0.0).is_err());
    }

    #[test]
    fn supermartingale_zero_noise_and_gaussian() {
        let q = Objective::quadratic(vec![1.0, 0.5], vec![0.0, 0.0]).unwrap();
        let z = calibrate(NoiseKind::None, 2, 0.0).unwrap();
        let g2 = gamma2(tm(), 1.0, 1e-6).unwrap().upper();
        let p = NtParams::at_max_t(1.0, g2, 1.0).unwrap();
        let mut cfg = SupermartingaleCheck {
            obj: &q,
            noise: &z,
            sched: tm(),
            x0: &[2.0, 2.0],
            prefix_seed: 1,
            k: 3,
            params: p,
            n_branches: 1000,
            bootstrap_resamples: 50,
        };
        let r = check_supermartingale(&cfg).unwrap();
        assert_eq!(r.branches, 1);
        assert!(r.pass && r.estimate <= 1e-12, "{r:?}");
        let g = calibrate(NoiseKind::GaussianIsotropic, 2, 1.0).unwrap();
        cfg.noise = &g;
        cfg.n_branches = 20_000;
        let r = check_supermartingale(&cfg).unwrap();
        assert!(r.pass, "{r:?}");
        assert_eq!(r, check_supermartingale(&cfg).unwrap());
    }

    #[test]
    fn ville_edge_cases() {
        let p = NtParams::at_max_t(1.0, 2.0, 1.0).unwrap();
        let sups = [1.0, 2.0, 3.0, 50.0];
        let r = ville_monitor(&sups, &p, 1.0, 2.0).unwrap();
        assert_eq!(r.bound, 1.0);
        assert!(r.pass);
        let r = ville_monitor(&sups, &p, 1.0, 1e6).unwrap();
        assert_eq!(r.exceedances, 0);
        assert!(r.bound < 1e-100);
        let a = ville_alpha_for_bound(2.0, 1.0, 0.1);
        let r = ville_monitor(&sups, &p, 1.0, a).unwrap();
        assert!((r.bound - 0.1).abs() < 1e-12);
    }
}
