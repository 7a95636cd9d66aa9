//! Monte Carlo checks of the two concentration facts the envelope rests on:
//! the scaled MGF bound `E[exp(λ⟨θ,φ⟩/(‖φ‖σ))] ≤ exp(3λ²/4)` and the
//! weighted-square tail `Pr(Σ c_l‖θ_l‖² ≥ (1+Ω)σ²Σ c_l) ≤ e^{−Ω}`.

use rayon::prelude::*;

use crate::error::{argument, Result};
use crate::noise::{NoiseKind, NoiseModel};
use crate::rng::stream;
use crate::stats::{clopper_pearson, Moments};
use crate::vecops::{dot, norm, norm_sq};

/// Samples drawn from one random stream.
const CHUNK: usize = 4096;

#[derive(Debug, Clone)]
pub struct MgfCheckConfig<'a> {
    pub lambda_grid: Vec<f64>,
    pub n_samples: usize,
    pub noise: &'a NoiseModel,
    /// Direction paired with θ; its norm is the scale `c`.
    pub phi: Vec<f64>,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MgfReport {
    pub lambda: f64,
    pub estimate: f64,
    /// Standard error of `estimate` divided by `estimate`.
    pub rel_stderr: f64,
    /// `exp(3λ²/4)`.
    pub bound: f64,
    /// `exp(λ² s² / (2σ²))` for isotropic Gaussian noise with per-coordinate variance `s²`.
    pub analytic: Option<f64>,
    pub pass: bool,
}

impl MgfReport {
    pub fn analytic_rel_err(&self) -> Option<f64> {
        self.analytic.map(|a| (self.estimate - a).abs() / a)
    }
}

fn trivial_reports(grid: &[f64]) -> Vec<MgfReport> {
    grid.iter()
        .map(|&lambda| MgfReport {
            lambda,
            estimate: 1.0,
            rel_stderr: 0.0,
            bound: (0.75 * lambda * lambda).exp(),
            analytic: Some(1.0),
            pass: true,
        })
        .collect()
}

/// Estimates the scaled MGF of `⟨θ, φ⟩` at every `λ` of the grid.
///
/// A zero `φ` or a noiseless model makes the statistic identically zero, so
/// every estimate is exactly 1.
pub fn mgf_check(cfg: &MgfCheckConfig<'_>) -> Result<Vec<MgfReport>> {
    if cfg.phi.len() != cfg.noise.dim() {
        return Err(argument(format!(
            "phi has dimension {}, noise has {}",
            cfg.phi.len(),
            cfg.noise.dim()
        )));
    }
    if cfg.n_samples == 0 {
        return Err(argument("n_samples must be positive"));
    }
    let c = norm(&cfg.phi);
    let sigma = cfg.noise.sigma_certificate();
    if c == 0.0 || cfg.noise.kind() == NoiseKind::None {
        return Ok(trivial_reports(&cfg.lambda_grid));
    }
    let grid = &cfg.lambda_grid;
    let chunks = cfg.n_samples.div_ceil(CHUNK);
    let partials: Vec<Vec<Moments>> = (0..chunks)
        .into_par_iter()
        .map(|ci| {
            let mut rng = stream(cfg.seed, ci as u64, 0, 0);
            let n = CHUNK.min(cfg.n_samples - ci * CHUNK);
            let mut theta = vec![0.0; cfg.noise.dim()];
            let mut acc = vec![Moments::default(); grid.len()];
            for _ in 0..n {
                cfg.noise.sample_into(&mut rng, &mut theta);
                let gamma = dot(&theta, &cfg.phi) / (c * sigma);
                for (m, &l) in acc.iter_mut().zip(grid) {
                    m.push((l * gamma).exp());
                }
            }
            acc
        })
        .collect();
    let mut total = vec![Moments::default(); grid.len()];
    for part in &partials {
        for (t, p) in total.iter_mut().zip(part) {
            t.merge(p);
        }
    }
    let s2 = cfg.noise.scale().powi(2);
    Ok(grid
        .iter()
        .zip(&total)
        .map(|(&lambda, m)| {
            let estimate = m.mean();
            let rel_stderr = m.stderr() / estimate;
            let bound = (0.75 * lambda * lambda).exp();
            let analytic = (cfg.noise.kind() == NoiseKind::GaussianIsotropic)
                .then(|| (lambda * lambda * s2 / (2.0 * sigma * sigma)).exp());
            MgfReport {
                lambda,
                estimate,
                rel_stderr,
                bound,
                analytic,
                pass: estimate <= bound * (1.0 + 3.0 * rel_stderr),
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailReport {
    pub omega: f64,
    /// `(1+Ω)σ²Σ c_l`.
    pub threshold: f64,
    pub exceedances: u64,
    pub trials: u64,
    pub frequency: f64,
    /// Clopper–Pearson 99% interval of the exceedance frequency.
    pub ci: (f64, f64),
    /// `e^{−Ω}`.
    pub bound: f64,
    pub pass: bool,
}

/// Empirical exceedance of `Σ c_l‖θ_l‖²` over `(1+Ω)σ²Σ c_l` with
/// independent draws per run. Passes when the 99% interval reaches the bound.
pub fn weighted_square_tail_check(
    c_seq: &[f64],
    noise: &NoiseModel,
    omega_grid: &[f64],
    n_runs: usize,
    seed: u64,
) -> Result<Vec<TailReport>> {
    if c_seq.is_empty() {
        return Err(argument("c_seq must not be empty"));
    }
    if c_seq.iter().any(|&c| !(c > 0.0 && c.is_finite())) {
        return Err(argument("c_seq entries must be positive and finite"));
    }
    if omega_grid.iter().any(|&o| !(o > -1.0)) {
        return Err(argument("omega values must exceed -1"));
    }
    if n_runs == 0 {
        return Err(argument("n_runs must be positive"));
    }
    let sums: Vec<f64> = (0..n_runs)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream(seed, r as u64, 0, 0);
            let mut theta = vec![0.0; noise.dim()];
            c_seq
                .iter()
                .map(|&c| {
                    noise.sample_into(&mut rng, &mut theta);
                    c * norm_sq(&theta)
                })
                .sum()
        })
        .collect();
    let sigma2 = noise.sigma_certificate().powi(2);
    let total_c: f64 = c_seq.iter().sum();
    Ok(omega_grid
        .iter()
        .map(|&omega| {
            let threshold = (1.0 + omega) * sigma2 * total_c;
            // a noiseless model never exceeds, whatever the threshold
            let exceedances = if noise.kind() == NoiseKind::None {
                0
            } else {
                sums.iter().filter(|&&s| s >= threshold).count() as u64
            };
            let trials = n_runs as u64;
            let ci = clopper_pearson(exceedances, trials, 0.99);
            let bound = (-omega).exp();
            TailReport {
                omega,
                threshold,
                exceedances,
                trials,
                frequency: exceedances as f64 / trials as f64,
                ci,
                bound,
                pass: ci.0 <= bound,
            }
        })
        .collect())
}
