//! Discrete Lyapunov energy of the recurrence and pathwise checks of its
//! one-step decay.
//!
//! ```text
//! E(k) = ‖x_{k+1} + (k+1)(x_{k+1} − x_k) − x*‖² + 4√((k+1)η_k) (f(x_k) − f*)
//! φ_k  = k(x_k − x_{k−1}) + (x_k − x*)
//! a_k  = 16 η_k / k
//! ```
//!
//! Every inequality here holds for each realized noise draw, so the checks
//! are evaluated step by step on concrete paths.

mod envelope;
mod zeta;

pub use envelope::{envelope_constants, envelope_u, envelope_u_exact, EnvelopeParams, ZetaBounds};
pub use zeta::riemann_zeta;

use std::io::{self, Write};

use crate::error::{argument, check_dim, Result};
use crate::objectives::Objective;
use crate::sgdm::{Schedule, StepView, Trajectory};
use crate::vecops::{dot, norm_sq, CompensatedSum, COMPENSATED_THRESHOLD};

/// Relative tolerance applied to the pathwise inequalities.
pub const RESIDUAL_RTOL: f64 = 1e-9;

/// `1e-9·(1 + |E(k)| + |E(k−1)|)`.
pub fn residual_tol(e_curr: f64, e_prev: f64) -> f64 {
    RESIDUAL_RTOL * (1.0 + e_curr.abs() + e_prev.abs())
}

fn sum_sq(n: usize, term: impl Fn(usize) -> f64) -> f64 {
    if n > COMPENSATED_THRESHOLD {
        let mut acc = CompensatedSum::default();
        for i in 0..n {
            let t = term(i);
            acc.add(t * t);
        }
        acc.value()
    } else {
        (0..n).map(|i| term(i).powi(2)).sum()
    }
}

/// `E(k)` from `x_k`, `x_{k+1}` and `f(x_k) − f*`.
pub fn energy(
    sched: &Schedule,
    x_star: &[f64],
    k: u64,
    x_k: &[f64],
    x_next: &[f64],
    gap_k: f64,
) -> f64 {
    let kp1 = (k + 1) as f64;
    let sq = sum_sq(x_k.len(), |i| {
        x_next[i] + kp1 * (x_next[i] - x_k[i]) - x_star[i]
    });
    sq + 4.0 * (kp1 * sched.eta(k)).sqrt() * gap_k
}

/// `E(0)` for a run started at `x_0 = x_1`.
pub fn initial_energy(sched: &Schedule, obj: &Objective, x0: &[f64]) -> Result<f64> {
    check_dim(obj.dim(), x0.len(), "x0")?;
    Ok(energy(sched, obj.minimizer(), 0, x0, x0, obj.raw_gap(x0)))
}

fn phi_into(k: u64, x_star: &[f64], x_prev: &[f64], x_curr: &[f64], out: &mut Vec<f64>) {
    let kf = k as f64;
    out.clear();
    out.extend((0..x_curr.len()).map(|i| kf * (x_curr[i] - x_prev[i]) + (x_curr[i] - x_star[i])));
}

/// `φ_k`, a function of `x_{k−1}` and `x_k` only.
pub fn phi_from(k: u64, x_star: &[f64], x_prev: &[f64], x_curr: &[f64]) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(argument("phi is defined for k >= 1"));
    }
    check_dim(x_star.len(), x_prev.len(), "x_prev")?;
    check_dim(x_star.len(), x_curr.len(), "x_curr")?;
    let mut out = Vec::with_capacity(x_curr.len());
    phi_into(k, x_star, x_prev, x_curr, &mut out);
    Ok(out)
}

/// Everything the per-step inequalities need, evaluated at one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDiagnostics {
    pub k: u64,
    pub e_prev: f64,
    pub e_curr: f64,
    pub a: f64,
    pub theta_sq: f64,
    pub grad_sq: f64,
    pub g_sq: f64,
    /// `⟨θ_k, φ_k⟩`.
    pub theta_phi: f64,
    pub phi_sq: f64,
    /// `‖φ_{k+1}‖²`, the first term of `E(k)`.
    pub phi_next_sq: f64,
    pub rhs_lemma: f64,
    /// Loosened bound with `‖g‖² ≤ 2‖θ‖² + 2‖∇f‖²` and the gap term dropped.
    pub rhs_intermediate: f64,
    pub rhs_decomp: f64,
    pub tol: f64,
}

impl StepDiagnostics {
    pub fn from_view(view: &StepView<'_>, sched: &Schedule, x_star: &[f64]) -> Self {
        let k = view.k;
        let e_prev = energy(
            sched,
            x_star,
            k - 1,
            view.x_prev,
            view.x_curr,
            view.gap_prev,
        );
        let e_curr = energy(sched, x_star, k, view.x_curr, view.x_next, view.gap_curr);
        let kf = k as f64;
        let (x_prev, x_curr) = (view.x_prev, view.x_curr);
        let phi_sq = sum_sq(x_curr.len(), |i| {
            kf * (x_curr[i] - x_prev[i]) + (x_curr[i] - x_star[i])
        });
        let theta_phi: f64 = if x_curr.len() > COMPENSATED_THRESHOLD {
            let mut acc = CompensatedSum::default();
            for i in 0..x_curr.len() {
                acc.add(view.theta[i] * (kf * (x_curr[i] - x_prev[i]) + (x_curr[i] - x_star[i])));
            }
            acc.value()
        } else {
            (0..x_curr.len())
                .map(|i| view.theta[i] * (kf * (x_curr[i] - x_prev[i]) + (x_curr[i] - x_star[i])))
                .sum()
        };
        let kp1 = kf + 1.0;
        let phi_next_sq = sum_sq(x_curr.len(), |i| {
            kp1 * (view.x_next[i] - x_curr[i]) + (view.x_next[i] - x_star[i])
        });
        let eta = sched.eta(k);
        let l = sched.smoothness();
        let r = (eta / kf).sqrt();
        let (theta_sq, grad_sq, g_sq) = (norm_sq(view.theta), norm_sq(view.grad), norm_sq(view.g));
        let a = 16.0 * eta / kf;
        let rhs_lemma = 4.0 * eta / kf * g_sq - 2.0 / l * r * grad_sq - 2.0 * r * view.gap_curr
            + 4.0 * r * theta_phi;
        let rhs_intermediate = 8.0 * eta / kf * theta_sq + 8.0 * eta / kf * grad_sq
            - 2.0 / l * r * grad_sq
            + 4.0 * r * theta_phi;
        let rhs_decomp = a * theta_sq + a.sqrt() * theta_phi;
        Self {
            k,
            e_prev,
            e_curr,
            a,
            theta_sq,
            grad_sq,
            g_sq,
            theta_phi,
            phi_sq,
            phi_next_sq,
            rhs_lemma,
            rhs_intermediate,
            rhs_decomp,
            tol: residual_tol(e_curr, e_prev),
        }
    }

    /// `E(k) − E(k−1)`.
    pub fn de(&self) -> f64 {
        self.e_curr - self.e_prev
    }

    pub fn residual_lemma(&self) -> f64 {
        self.rhs_lemma - self.de()
    }

    pub fn residual_intermediate(&self) -> f64 {
        self.rhs_intermediate - self.de()
    }

    pub fn residual_decomp(&self) -> f64 {
        self.rhs_decomp - self.de()
    }

    /// `E(k) − ‖φ_{k+1}‖²`.
    pub fn residual_phi_bound(&self) -> f64 {
        self.e_curr - self.phi_next_sq
    }

    /// True when every pathwise inequality of the step holds within `tol`.
    pub fn holds(&self) -> bool {
        let t = -self.tol;
        self.residual_lemma() >= t
            && self.residual_intermediate() >= t
            && self.residual_decomp() >= t
            && self.residual_phi_bound() >= t
            && self.e_curr >= t
    }
}

/// Fine-grained verification of the algebra behind one step's decay.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeepCheck {
    pub k: u64,
    /// Bound on `E(k) − E(k−1)` before the update rule is substituted, minus the actual change.
    pub energy_bound_residual: f64,
    /// Size of `D + 2√(η_k/k) g` where `D` is the second difference; zero up to rounding.
    pub update_identity_error: f64,
    /// Mismatch between `2⟨D,v⟩ − ‖D‖²` and its expansion in `g`.
    pub expansion_error: f64,
    pub tol: f64,
}

impl DeepCheck {
    pub fn holds(&self) -> bool {
        self.energy_bound_residual >= -self.tol
            && self.update_identity_error <= self.tol
            && self.expansion_error <= self.tol
    }
}

/// Splits the step's decay into its algebraic links and checks each one.
pub fn deep_check(view: &StepView<'_>, sched: &Schedule, x_star: &[f64]) -> DeepCheck {
    let k = view.k;
    let kf = k as f64;
    let n = view.x_curr.len();
    let (xp, xc, xn) = (view.x_prev, view.x_curr, view.x_next);
    let d: Vec<f64> = (0..n)
        .map(|i| 2.0 * (xn[i] - xc[i]) + kf * (xn[i] - 2.0 * xc[i] + xp[i]))
        .collect();
    let v: Vec<f64> = (0..n)
        .map(|i| xc[i] + (kf + 2.0) * (xn[i] - xc[i]) - x_star[i])
        .collect();
    let eta = sched.eta(k);
    let r = (eta / kf).sqrt();
    let e_prev = energy(sched, x_star, k - 1, xp, xc, view.gap_prev);
    let e_curr = energy(sched, x_star, k, xc, xn, view.gap_curr);
    let quad = 2.0 * dot(&d, &v) - norm_sq(&d);
    let bound =
        quad + 4.0 * (kf * eta).sqrt() * (view.gap_curr - view.gap_prev) + 2.0 * r * view.gap_curr;
    let ident: Vec<f64> = (0..n).map(|i| d[i] + 2.0 * r * view.g[i]).collect();
    let expanded = -4.0 * r * dot(view.g, &v) - 4.0 * eta / kf * norm_sq(view.g);
    let tol = residual_tol(e_curr, e_prev);
    let scale = 1.0 + norm_sq(&d).sqrt() + (2.0 * r * norm_sq(view.g).sqrt());
    DeepCheck {
        k,
        energy_bound_residual: bound - (e_curr - e_prev),
        update_identity_error: norm_sq(&ident).sqrt() / scale,
        expansion_error: (quad - expanded).abs(),
        tol,
    }
}

fn check_step_range(traj: &Trajectory, k: u64) -> Result<()> {
    if k == 0 || k > traj.steps() {
        return Err(argument(format!("step {k} outside 1..={}", traj.steps())));
    }
    Ok(())
}

/// `E(k)` along a stored trajectory, `0 ≤ k ≤ K`.
pub fn lyapunov_e(traj: &Trajectory, sched: &Schedule, obj: &Objective, k: u64) -> Result<f64> {
    check_dim(obj.dim(), traj.dim(), "objective")?;
    if k > traj.steps() {
        return Err(argument(format!(
            "E({k}) needs x_{} beyond the horizon",
            k + 1
        )));
    }
    Ok(energy(
        sched,
        obj.minimizer(),
        k,
        traj.x(k)?,
        traj.x(k + 1)?,
        traj.f_gap(k)?,
    ))
}

/// `φ_k` along a stored trajectory, `1 ≤ k ≤ K+1`.
pub fn phi(traj: &Trajectory, obj: &Objective, k: u64) -> Result<Vec<f64>> {
    check_dim(obj.dim(), traj.dim(), "objective")?;
    if k == 0 {
        return Err(argument("phi is defined for k >= 1"));
    }
    phi_from(k, obj.minimizer(), traj.x(k - 1)?, traj.x(k)?)
}

pub fn step_diagnostics(
    traj: &Trajectory,
    sched: &Schedule,
    obj: &Objective,
    k: u64,
) -> Result<StepDiagnostics> {
    check_step_range(traj, k)?;
    traj.with_step(obj, k, |v| {
        StepDiagnostics::from_view(v, sched, obj.minimizer())
    })
}

/// Right side minus left side of the per-step decay inequality for step `k`.
pub fn check_descent_lemma(
    traj: &Trajectory,
    sched: &Schedule,
    obj: &Objective,
    k: u64,
) -> Result<f64> {
    Ok(step_diagnostics(traj, sched, obj, k)?.residual_lemma())
}

/// Residuals of the two-stage decomposition bound at one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecompositionResidual {
    pub intermediate: f64,
    pub decomposition: f64,
}

/// Right side minus left side of `E(k) − E(k−1) ≤ a_k‖θ_k‖² + √a_k⟨θ_k, φ_k⟩`,
/// together with the intermediate bound it is derived from.
pub fn check_decomposition(
    traj: &Trajectory,
    sched: &Schedule,
    obj: &Objective,
    k: u64,
) -> Result<DecompositionResidual> {
    let d = step_diagnostics(traj, sched, obj, k)?;
    Ok(DecompositionResidual {
        intermediate: d.residual_intermediate(),
        decomposition: d.residual_decomp(),
    })
}

/// Per-step record of a whole trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovTrace {
    /// `E(k)` for `k = 0..=K`.
    pub e: Vec<f64>,
    /// `φ_k` for `k = 1..=K`, flattened.
    pub phi: Vec<f64>,
    pub dim: usize,
    /// `a_k` for `k = 1..=K`; all step-indexed vectors below share this layout.
    pub a: Vec<f64>,
    pub rhs_lemma: Vec<f64>,
    pub rhs_decomp: Vec<f64>,
    pub descent_residual: Vec<f64>,
    pub intermediate_residual: Vec<f64>,
    pub decomp_residual: Vec<f64>,
    pub phi_bound_residual: Vec<f64>,
    pub tol: Vec<f64>,
}

impl LyapunovTrace {
    /// Builds the trace; the trajectory must hold every iterate.
    pub fn build(traj: &Trajectory, sched: &Schedule, obj: &Objective) -> Result<Self> {
        check_dim(obj.dim(), traj.dim(), "objective")?;
        if traj.is_windowed() {
            return Err(argument("LyapunovTrace needs a fully stored trajectory"));
        }
        let steps = traj.steps() as usize;
        let mut t = Self {
            e: Vec::with_capacity(steps + 1),
            phi: Vec::with_capacity(steps * traj.dim()),
            dim: traj.dim(),
            a: Vec::with_capacity(steps),
            rhs_lemma: Vec::with_capacity(steps),
            rhs_decomp: Vec::with_capacity(steps),
            descent_residual: Vec::with_capacity(steps),
            intermediate_residual: Vec::with_capacity(steps),
            decomp_residual: Vec::with_capacity(steps),
            phi_bound_residual: Vec::with_capacity(steps),
            tol: Vec::with_capacity(steps),
        };
        t.e.push(lyapunov_e(traj, sched, obj, 0)?);
        let mut buf = Vec::with_capacity(traj.dim());
        for k in 1..=traj.steps() {
            let d = step_diagnostics(traj, sched, obj, k)?;
            phi_into(k, obj.minimizer(), traj.x(k - 1)?, traj.x(k)?, &mut buf);
            t.phi.extend_from_slice(&buf);
            t.push(&d);
        }
        Ok(t)
    }

    fn push(&mut self, d: &StepDiagnostics) {
        self.e.push(d.e_curr);
        self.a.push(d.a);
        self.rhs_lemma.push(d.rhs_lemma);
        self.rhs_decomp.push(d.rhs_decomp);
        self.descent_residual.push(d.residual_lemma());
        self.intermediate_residual.push(d.residual_intermediate());
        self.decomp_residual.push(d.residual_decomp());
        self.phi_bound_residual.push(d.residual_phi_bound());
        self.tol.push(d.tol);
    }

    pub fn steps(&self) -> usize {
        self.a.len()
    }

    /// `φ_k`, `1 ≤ k ≤ K`.
    pub fn phi_at(&self, k: usize) -> &[f64] {
        &self.phi[(k - 1) * self.dim..k * self.dim]
    }

    /// First step whose pathwise inequalities fail, if any.
    pub fn first_violation(&self) -> Option<u64> {
        (0..self.steps())
            .find(|&i| {
                let t = -self.tol[i];
                self.descent_residual[i] < t
                    || self.intermediate_residual[i] < t
                    || self.decomp_residual[i] < t
                    || self.phi_bound_residual[i] < t
                    || self.e[i + 1] < t
            })
            .map(|i| i as u64 + 1)
    }

    /// CSV with columns `k,E,dE,rhs_lemma,rhs_decomp,residual_lemma,residual_decomp`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        writeln!(
            w,
            "k,E,dE,rhs_lemma,rhs_decomp,residual_lemma,residual_decomp"
        )?;
        writeln!(w, "0,{},,,,,", self.e[0])?;
        for i in 0..self.steps() {
            writeln!(
                w,
                "{},{},{},{},{},{},{}",
                i + 1,
                self.e[i + 1],
                self.e[i + 1] - self.e[i],
                self.rhs_lemma[i],
                self.rhs_decomp[i],
                self.descent_residual[i],
                self.decomp_residual[i]
            )?;
        }
        Ok(())
    }
}
