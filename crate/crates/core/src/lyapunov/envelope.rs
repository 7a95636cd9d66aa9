use crate::error::{argument, Result};
use crate::martingale::{gamma1, gamma2, Bracket};
use crate::sgdm::Schedule;

use super::riemann_zeta;

/// Zeta-based bounds available for the ε-schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZetaBounds {
    /// `ζ(1+ε)`.
    pub zeta: f64,
    /// `h^σ(ε) = exp(σ²ζ(1+ε)) ζ(1+ε)²`.
    pub h: f64,
    /// `γ₁ ≤ ζ(1+ε)`.
    pub gamma1_within: bool,
    /// `γ₂ ≤ exp(σ²ζ(1+ε))`.
    pub gamma2_within: bool,
    /// `C₀` with `√C₀′ · max(C1, C2) = C₀ · h^σ(ε)`.
    pub c0: f64,
}

/// Constants of the high-probability envelope for one schedule and noise level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopeParams {
    pub schedule: Schedule,
    pub sigma: f64,
    pub e0: f64,
    pub gamma1: Bracket,
    pub gamma2: Bracket,
    /// Assembled from the upper ends of the γ brackets.
    pub c1: f64,
    pub c2: f64,
    pub b: f64,
    /// Present for the ε-schedule.
    pub zeta: Option<ZetaBounds>,
}

/// Accuracy range accepted for the γ brackets.
pub const TOL_RANGE: (f64, f64) = (1e-12, 1e-3);

pub fn envelope_constants(
    sched: &Schedule,
    sigma: f64,
    e0: f64,
    tol: f64,
) -> Result<EnvelopeParams> {
    if !(tol > TOL_RANGE.0 && tol < TOL_RANGE.1) {
        return Err(argument(format!(
            "tol must lie in (1e-12, 1e-3), got {tol}"
        )));
    }
    if !(e0 >= 0.0 && e0.is_finite()) {
        return Err(argument(format!("E0 must be finite and >= 0, got {e0}")));
    }
    let g1 = gamma1(sched, tol)?;
    let g2 = gamma2(sched, sigma, tol)?;
    let l = sched.smoothness();
    let s2 = sigma * sigma;
    let (u1, u2) = (g1.upper(), g2.upper());
    let noise_part = l * s2 * (1.0 + s2 * u1 * u2) * u1;
    let c1 = l * u2 * e0 + noise_part;
    let c2 = l * u2 + noise_part;
    let zeta = match *sched {
        Schedule::TheoremMain { .. } => None,
        Schedule::PropositionEps {
            epsilon, c0_prime, ..
        } => {
            let z = riemann_zeta(1.0 + epsilon)?;
            let h = (s2 * z).exp() * z * z;
            Some(ZetaBounds {
                zeta: z,
                h,
                gamma1_within: u1 <= z,
                gamma2_within: u2 <= (s2 * z).exp(),
                c0: c0_prime.sqrt() * c1.max(c2) / h,
            })
        }
    };
    Ok(EnvelopeParams {
        schedule: *sched,
        sigma,
        e0,
        gamma1: g1,
        gamma2: g2,
        c1,
        c2,
        b: 1.0,
        zeta,
    })
}

fn check_beta(beta: f64) -> Result<()> {
    if beta > 0.0 && beta < 0.5 {
        Ok(())
    } else {
        Err(argument(format!("beta must lie in (0, 0.5), got {beta}")))
    }
}

fn k_factor(sched: &Schedule, k: u64) -> f64 {
    let ln = ((k + 2) as f64).ln();
    let lp = match sched {
        Schedule::TheoremMain { .. } => ln,
        _ => ln.powf(sched.envelope_log_power()),
    };
    lp / ((k + 1) as f64).sqrt()
}

/// Envelope `U(β, k)` on `f(x_k) − f*`, holding for all `k` at once with
/// probability at least `1 − 2β`.
///
/// Main schedule: `(C1 + C2 ln(1/β)) ln(k+2)/√(k+1)`. ε-schedule:
/// `C₀ h^σ(ε) (1 + ln(1/β)) ln^{(1+ε)/2}(k+2)/√(k+1)`, which dominates
/// [`envelope_u_exact`].
pub fn envelope_u(params: &EnvelopeParams, beta: f64, k: u64) -> Result<f64> {
    check_beta(beta)?;
    let lb = (1.0 / beta).ln();
    let kf = k_factor(&params.schedule, k);
    Ok(match params.zeta {
        None => (params.c1 + params.c2 * lb) * kf,
        Some(z) => z.c0 * z.h * (1.0 + lb) * kf,
    })
}

/// Envelope with the constants the derivation produces before they are
/// rounded up to the `h^σ(ε)` form: `√C₀′ (C1 + C2 ln(1/β))` times the `k`
/// factor (`√C₀′ = 1` for the main schedule).
pub fn envelope_u_exact(params: &EnvelopeParams, beta: f64, k: u64) -> Result<f64> {
    check_beta(beta)?;
    let lb = (1.0 / beta).ln();
    let root_c = match params.schedule {
        Schedule::TheoremMain { .. } => 1.0,
        Schedule::PropositionEps { c0_prime, .. } => c0_prime.sqrt(),
    };
    Ok(root_c * (params.c1 + params.c2 * lb) * k_factor(&params.schedule, k))
}
