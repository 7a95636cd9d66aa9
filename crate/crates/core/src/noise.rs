//! Additive gradient-noise models carrying a certified sub-Gaussian parameter.
//!
//! A calibrated model guarantees `E[exp(‖θ‖²/σ²)] ≤ e` for its certificate
//! `σ`. Envelope constants are always computed from that certificate, never
//! from an empirical estimate.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{check_dim, Error, Result};
use crate::objectives::Objective;
use crate::stats::Moments;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NoiseKind {
    None,
    /// `θ ~ N(0, s²I)`.
    GaussianIsotropic,
    /// `θ` uniform on the sphere of radius `s`.
    BoundedSphere,
    /// Student-t with 3 degrees of freedom per coordinate. Has no finite
    /// certificate; exists only so calibration can refuse it.
    HeavyTail,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    kind: NoiseKind,
    dim: usize,
    sigma_certificate: f64,
    scale: f64,
}

/// Largest Gaussian per-coordinate variance certified by `sigma` in `dim` dimensions.
///
/// Solves `(1 − 2s²/σ²)^(−d/2) = e`.
pub fn gaussian_scale_sq(dim: usize, sigma: f64) -> f64 {
    sigma * sigma * (-(-2.0 / dim as f64).exp_m1()) / 2.0
}

/// Builds the model with the largest raw scale its certificate allows.
pub fn calibrate(kind: NoiseKind, dim: usize, sigma_certificate: f64) -> Result<NoiseModel> {
    if dim == 0 {
        return Err(Error::Argument("noise: dim must be >= 1".into()));
    }
    if !(sigma_certificate.is_finite() && sigma_certificate >= 0.0) {
        return Err(Error::Argument(
            "noise: sigma must be finite and >= 0".into(),
        ));
    }
    let scale = match kind {
        NoiseKind::None => 0.0,
        NoiseKind::HeavyTail => {
            return Err(Error::Config(
                "heavy-tailed noise has no finite sub-Gaussian certificate".into(),
            ))
        }
        _ if sigma_certificate == 0.0 => {
            return Err(Error::Argument(
                "noise: sigma_certificate must be > 0 for a random model".into(),
            ))
        }
        NoiseKind::GaussianIsotropic => gaussian_scale_sq(dim, sigma_certificate).sqrt(),
        NoiseKind::BoundedSphere => sigma_certificate,
    };
    Ok(NoiseModel {
        kind,
        dim,
        sigma_certificate,
        scale,
    })
}

impl NoiseModel {
    pub fn kind(&self) -> NoiseKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sigma_certificate(&self) -> f64 {
        self.sigma_certificate
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn label(&self) -> String {
        let name = match self.kind {
            NoiseKind::None => "none",
            NoiseKind::GaussianIsotropic => "gaussian",
            NoiseKind::BoundedSphere => "sphere",
            NoiseKind::HeavyTail => "heavy-tail",
        };
        format!("{name}(dim={}, sigma={})", self.dim, self.sigma_certificate)
    }

    /// Closed-form `E[exp(‖θ‖²/σ²)]`, when the law admits one.
    pub fn certificate_mgf(&self) -> Option<f64> {
        let s2 = self.sigma_certificate * self.sigma_certificate;
        match self.kind {
            NoiseKind::None => Some(1.0),
            NoiseKind::GaussianIsotropic => {
                let ratio = 2.0 * self.scale * self.scale / s2;
                Some((1.0 - ratio).powf(-(self.dim as f64) / 2.0))
            }
            NoiseKind::BoundedSphere => Some((self.scale * self.scale / s2).exp()),
            NoiseKind::HeavyTail => None,
        }
    }

    /// `E‖θ‖²` in closed form.
    pub fn second_moment(&self) -> f64 {
        let s2 = self.scale * self.scale;
        match self.kind {
            NoiseKind::None => 0.0,
            NoiseKind::GaussianIsotropic => self.dim as f64 * s2,
            NoiseKind::BoundedSphere => s2,
            NoiseKind::HeavyTail => f64::INFINITY,
        }
    }

    /// Draws one `θ` into `out`.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        match self.kind {
            NoiseKind::None => out.iter_mut().for_each(|o| *o = 0.0),
            NoiseKind::GaussianIsotropic => {
                for o in out.iter_mut() {
                    let z: f64 = rng.sample(StandardNormal);
                    *o = self.scale * z;
                }
            }
            NoiseKind::BoundedSphere => loop {
                let mut len_sq = 0.0;
                for o in out.iter_mut() {
                    let z: f64 = rng.sample(StandardNormal);
                    *o = z;
                    len_sq += z * z;
                }
                if len_sq > 0.0 {
                    let f = self.scale / len_sq.sqrt();
                    out.iter_mut().for_each(|o| *o *= f);
                    break;
                }
            },
            NoiseKind::HeavyTail => {
                // t₃ = Z / sqrt(χ²₃ / 3)
                for o in out.iter_mut() {
                    let z: f64 = rng.sample(StandardNormal);
                    let chi: f64 = (0..3)
                        .map(|_| rng.sample::<f64, _>(StandardNormal).powi(2))
                        .sum();
                    *o = z / (chi / 3.0).sqrt();
                }
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut out = vec![0.0; self.dim];
        self.sample_into(rng, &mut out);
        out
    }

    /// Monte Carlo estimate of `E‖θ‖²`, checked against `σ²`.
    pub fn variance_diagnostic<R: Rng + ?Sized>(
        &self,
        n_samples: usize,
        rng: &mut R,
    ) -> Result<VarianceReport> {
        if n_samples < 100 {
            return Err(Error::Argument(
                "variance_diagnostic: need at least 100 samples".into(),
            ));
        }
        let mut m = Moments::default();
        let mut buf = vec![0.0; self.dim];
        for _ in 0..n_samples {
            self.sample_into(rng, &mut buf);
            m.push(buf.iter().map(|v| v * v).sum());
        }
        let half = 3.0 * m.stderr();
        let bound = self.sigma_certificate * self.sigma_certificate;
        Ok(VarianceReport {
            n_samples,
            estimate: m.mean(),
            ci: (m.mean() - half, m.mean() + half),
            bound,
            pass: m.mean() - half <= bound,
        })
    }
}

/// `E‖θ‖² ≤ σ²` diagnostic.
#[derive(Debug, Clone, PartialEq)]
pub struct VarianceReport {
    pub n_samples: usize,
    pub estimate: f64,
    /// 3-sigma normal interval.
    pub ci: (f64, f64),
    pub bound: f64,
    pub pass: bool,
}

/// `g = ∇f(x) − θ` with `θ` drawn from `model`. Returns `(g, θ)`.
pub fn stochastic_grad<R: Rng + ?Sized>(
    obj: &Objective,
    model: &NoiseModel,
    x: &[f64],
    rng: &mut R,
) -> Result<(Vec<f64>, Vec<f64>)> {
    check_dim(obj.dim(), x.len(), "stochastic_grad x")?;
    check_dim(obj.dim(), model.dim(), "stochastic_grad noise")?;
    let theta = model.sample(rng);
    let mut g = obj.grad(x)?;
    for (gi, ti) in g.iter_mut().zip(&theta) {
        *gi -= ti;
    }
    Ok((g, theta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn calibrate_examples() {
        let g = calibrate(NoiseKind::GaussianIsotropic, 2, 1.0).unwrap();
        assert!((g.scale().powi(2) - 0.316_060_279_414_278_84).abs() < 1e-15);
        assert!((g.certificate_mgf().unwrap() - std::f64::consts::E).abs() < 1e-12);
        let s = calibrate(NoiseKind::BoundedSphere, 5, 2.0).unwrap();
        assert_eq!(s.scale(), 2.0);
        let z = calibrate(NoiseKind::None, 3, 0.0).unwrap();
        assert_eq!(z.scale(), 0.0);
        // sigma > 0 with no noise is accepted, scale forced to 0
        let z = calibrate(NoiseKind::None, 3, 1.5).unwrap();
        assert_eq!(z.scale(), 0.0);
        assert_eq!(z.sigma_certificate(), 1.5);
    }

    #[test]
    fn calibrate_rejects_bad_inputs() {
        assert!(matches!(
            calibrate(NoiseKind::HeavyTail, 2, 1.0),
            Err(Error::Config(_))
        ));
        assert!(calibrate(NoiseKind::GaussianIsotropic, 2, 0.0).is_err());
        assert!(calibrate(NoiseKind::GaussianIsotropic, 0, 1.0).is_err());
        assert!(calibrate(NoiseKind::BoundedSphere, 2, -1.0).is_err());
    }

    #[test]
    fn calibrate_is_deterministic() {
        let a = calibrate(NoiseKind::GaussianIsotropic, 7, 0.3).unwrap();
        let b = calibrate(NoiseKind::GaussianIsotropic, 7, 0.3).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gaussian_certificate_is_tight_in_every_dimension() {
        for d in [1, 2, 5, 10, 100] {
            let m = calibrate(NoiseKind::GaussianIsotropic, d, 0.7).unwrap();
            assert!((m.certificate_mgf().unwrap() - std::f64::consts::E).abs() < 1e-10);
        }
    }

    #[test]
    fn sphere_samples_have_exact_radius() {
        let m = calibrate(NoiseKind::BoundedSphere, 4, 1.3).unwrap();
        let mut r = stream(3, 0, 0, 0);
        for _ in 0..100 {
            let t = m.sample(&mut r);
            assert!((crate::vecops::norm(&t) - 1.3).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_noise_gradient_is_exact() {
        let q = Objective::quadratic(vec![1.0], vec![0.0]).unwrap();
        let m = calibrate(NoiseKind::None, 1, 0.0).unwrap();
        let (g, t) = stochastic_grad(&q, &m, &[2.0], &mut stream(1, 0, 0, 0)).unwrap();
        assert_eq!(g, vec![2.0]);
        assert_eq!(t, vec![0.0]);
    }

    #[test]
    fn stochastic_grad_reconstructs_gradient() {
        let q = Objective::quadratic(vec![1.0, 0.5, 2.0], vec![1.0, -1.0, 0.0]).unwrap();
        let m = calibrate(NoiseKind::GaussianIsotropic, 3, 1.0).unwrap();
        let x = [0.3, 2.0, -1.7];
        let grad = q.grad(&x).unwrap();
        for s in 0..200 {
            let (g, t) = stochastic_grad(&q, &m, &x, &mut stream(s, 0, 0, 0)).unwrap();
            for i in 0..3 {
                // g = grad − θ is one rounding away from the defining identity
                let scale = grad[i].abs().max(t[i].abs());
                assert!((g[i] + t[i] - grad[i]).abs() <= 2.0 * f64::EPSILON * scale);
            }
        }
        let wrong = calibrate(NoiseKind::None, 2, 0.0).unwrap();
        assert!(stochastic_grad(&q, &wrong, &x, &mut stream(0, 0, 0, 0)).is_err());
    }

    #[test]
    fn variance_diagnostic_examples() {
        let mut r = stream(5, 0, 0, 0);
        let z = calibrate(NoiseKind::None, 2, 0.0).unwrap();
        assert_eq!(z.variance_diagnostic(100, &mut r).unwrap().estimate, 0.0);
        let s = calibrate(NoiseKind::BoundedSphere, 3, 0.8).unwrap();
        let rep = s.variance_diagnostic(1000, &mut r).unwrap();
        assert!((rep.estimate - 0.64).abs() < 1e-12);
        let g = calibrate(NoiseKind::GaussianIsotropic, 2, 1.0).unwrap();
        let rep = g.variance_diagnostic(200_000, &mut r).unwrap();
        assert!(rep.ci.0 <= 0.632_120_558_828_557_7 && 0.632_120_558_828_557_7 <= rep.ci.1);
        assert!(rep.pass);
        assert!(g.variance_diagnostic(99, &mut r).is_err());
    }
}
