//! Convex, L-smooth test objectives with exact gradients and known minimizers.
//!
//! Every objective carries its smoothness constant `L`, its minimizer `x*`
//! and minimum value `f*`, so envelope checks can be evaluated against
//! ground truth instead of estimates.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{argument, check_dim, Error, Result};
use crate::rng;
use crate::vecops::{dist, dot};

/// Coefficient data for each objective family.
#[derive(Debug, Clone, PartialEq)]
pub enum ObjectiveKind {
    /// `½⟨x−c, D(x−c)⟩` with diagonal `D`.
    Quadratic { diag: Vec<f64>, center: Vec<f64> },
    /// `½‖Ax−b‖²`, `A` stored row-major with `rows` rows.
    LeastSquares {
        a: Vec<f64>,
        rows: usize,
        b: Vec<f64>,
    },
    /// Coordinate-wise Huber function of `x − c` with threshold `delta`.
    HuberizedAbs { delta: f64, center: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    dim: usize,
    kind: ObjectiveKind,
    smoothness: f64,
    minimizer: Vec<f64>,
    min_value: f64,
}

impl Objective {
    /// Diagonal quadratic. Requires `0 < dᵢ`; `L = max dᵢ`, `x* = c`, `f* = 0`.
    pub fn quadratic(diag: Vec<f64>, center: Vec<f64>) -> Result<Self> {
        if diag.is_empty() {
            return Err(argument("quadratic: empty diagonal"));
        }
        check_dim(diag.len(), center.len(), "quadratic center")?;
        if diag.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(argument(
                "quadratic: diagonal entries must be finite and > 0",
            ));
        }
        if center.iter().any(|c| !c.is_finite()) {
            return Err(argument("quadratic: center must be finite"));
        }
        let smoothness = diag.iter().cloned().fold(0.0, f64::max);
        Ok(Self {
            dim: diag.len(),
            minimizer: center.clone(),
            kind: ObjectiveKind::Quadratic { diag, center },
            smoothness,
            min_value: 0.0,
        })
    }

    /// `½‖Ax−b‖²` for a full-column-rank `A` given as rows.
    ///
    /// `L` is the top eigenvalue of `AᵀA`; `x*` solves the normal equations by
    /// Cholesky.
    pub fn least_squares(rows: Vec<Vec<f64>>, b: Vec<f64>) -> Result<Self> {
        let m = rows.len();
        if m == 0 {
            return Err(argument("least squares: A has no rows"));
        }
        let n = rows[0].len();
        if n == 0 || rows.iter().any(|r| r.len() != n) {
            return Err(argument("least squares: ragged or empty rows"));
        }
        check_dim(m, b.len(), "least squares b")?;
        if m < n {
            return Err(Error::Config(format!(
                "least squares: A is {m}x{n}, cannot have full column rank"
            )));
        }
        let a: Vec<f64> = rows.into_iter().flatten().collect();
        if a.iter().chain(&b).any(|v| !v.is_finite()) {
            return Err(argument("least squares: non-finite coefficients"));
        }
        let am = DMatrix::from_row_slice(m, n, &a);
        let ata = am.transpose() * &am;
        let atb = am.transpose() * DVector::from_column_slice(&b);
        let chol = ata.clone().cholesky().ok_or_else(|| {
            Error::Config("least squares: AᵀA is not positive definite (rank deficient A)".into())
        })?;
        let minimizer: Vec<f64> = chol.solve(&atb).iter().cloned().collect();
        let smoothness = top_eigenvalue(&ata);
        let mut obj = Self {
            dim: n,
            kind: ObjectiveKind::LeastSquares { a, rows: m, b },
            smoothness,
            minimizer,
            min_value: 0.0,
        };
        obj.min_value = obj.raw_eval(&obj.minimizer.clone());
        Ok(obj)
    }

    /// Coordinate-wise Huber with threshold `delta`, centered at `center`.
    pub fn huberized_abs(delta: f64, center: Vec<f64>) -> Result<Self> {
        if center.is_empty() {
            return Err(argument("huber: empty center"));
        }
        if !(delta.is_finite() && delta > 0.0) {
            return Err(argument("huber: delta must be finite and > 0"));
        }
        Ok(Self {
            dim: center.len(),
            minimizer: center.clone(),
            kind: ObjectiveKind::HuberizedAbs { delta, center },
            smoothness: 1.0 / delta,
            min_value: 0.0,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn kind(&self) -> &ObjectiveKind {
        &self.kind
    }

    pub fn smoothness(&self) -> f64 {
        self.smoothness
    }

    pub fn minimizer(&self) -> &[f64] {
        &self.minimizer
    }

    pub fn min_value(&self) -> f64 {
        self.min_value
    }

    /// Short identifier used in trajectory records.
    pub fn label(&self) -> String {
        let name = match self.kind {
            ObjectiveKind::Quadratic { .. } => "quadratic",
            ObjectiveKind::LeastSquares { .. } => "least-squares",
            ObjectiveKind::HuberizedAbs { .. } => "huberized-abs",
        };
        format!("{name}(dim={})", self.dim)
    }

    /// `f(x)`.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim, x.len(), "eval")?;
        Ok(self.raw_eval(x))
    }

    /// `∇f(x)`.
    pub fn grad(&self, x: &[f64]) -> Result<Vec<f64>> {
        check_dim(self.dim, x.len(), "grad")?;
        let mut out = vec![0.0; self.dim];
        self.grad_into(x, &mut out);
        Ok(out)
    }

    /// `f(x) − f*`, evaluated without cancellation against `f*`.
    pub fn gap(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim, x.len(), "gap")?;
        Ok(self.raw_gap(x))
    }

    pub(crate) fn raw_eval(&self, x: &[f64]) -> f64 {
        match &self.kind {
            ObjectiveKind::Quadratic { diag, center } => {
                0.5 * diag
                    .iter()
                    .zip(x.iter().zip(center))
                    .map(|(d, (xi, ci))| d * (xi - ci) * (xi - ci))
                    .sum::<f64>()
            }
            ObjectiveKind::LeastSquares { a, rows, b } => {
                let n = self.dim;
                0.5 * (0..*rows)
                    .map(|i| {
                        let r = dot(&a[i * n..(i + 1) * n], x) - b[i];
                        r * r
                    })
                    .sum::<f64>()
            }
            ObjectiveKind::HuberizedAbs { delta, center } => x
                .iter()
                .zip(center)
                .map(|(xi, ci)| huber(xi - ci, *delta))
                .sum(),
        }
    }

    pub(crate) fn raw_gap(&self, x: &[f64]) -> f64 {
        match &self.kind {
            // residual Ax*−b is orthogonal to range(A): f(x)−f* = ½‖A(x−x*)‖²
            ObjectiveKind::LeastSquares { a, rows, .. } => {
                let n = self.dim;
                0.5 * (0..*rows)
                    .map(|i| {
                        let r: f64 = a[i * n..(i + 1) * n]
                            .iter()
                            .zip(x.iter().zip(&self.minimizer))
                            .map(|(aij, (xj, sj))| aij * (xj - sj))
                            .sum();
                        r * r
                    })
                    .sum::<f64>()
            }
            _ => self.raw_eval(x),
        }
    }

    /// Writes `∇f(x)` into `out`. Lengths are the caller's responsibility.
    pub fn grad_into(&self, x: &[f64], out: &mut [f64]) {
        match &self.kind {
            ObjectiveKind::Quadratic { diag, center } => {
                for (o, (d, (xi, ci))) in out.iter_mut().zip(diag.iter().zip(x.iter().zip(center)))
                {
                    *o = d * (xi - ci);
                }
            }
            ObjectiveKind::LeastSquares { a, rows, b } => {
                let n = self.dim;
                out.iter_mut().for_each(|o| *o = 0.0);
                for i in 0..*rows {
                    let row = &a[i * n..(i + 1) * n];
                    let r = dot(row, x) - b[i];
                    for (o, aij) in out.iter_mut().zip(row) {
                        *o += aij * r;
                    }
                }
            }
            ObjectiveKind::HuberizedAbs { delta, center } => {
                for (o, (xi, ci)) in out.iter_mut().zip(x.iter().zip(center)) {
                    *o = huber_slope(xi - ci, *delta);
                }
            }
        }
    }

    /// Samples `n_pairs` point pairs uniformly in the radius-10 ball around
    /// `x*` and measures the smoothness ratio and the convexity residual.
    pub fn verify_regularity(&self, n_pairs: usize, rng_seed: u64) -> Result<RegularityReport> {
        if n_pairs == 0 {
            return Err(argument("verify_regularity: n_pairs must be >= 1"));
        }
        let mut rng = rng::stream(rng_seed, 0, 0, 0);
        let mut max_ratio = 0.0f64;
        let mut min_convexity = f64::INFINITY;
        let mut gx = vec![0.0; self.dim];
        let mut gy = vec![0.0; self.dim];
        for _ in 0..n_pairs {
            let x = sample_ball(&mut rng, &self.minimizer, REGULARITY_RADIUS);
            let y = sample_ball(&mut rng, &self.minimizer, REGULARITY_RADIUS);
            self.grad_into(&x, &mut gx);
            self.grad_into(&y, &mut gy);
            let dxy = dist(&x, &y);
            if dxy > 0.0 {
                max_ratio = max_ratio.max(dist(&gx, &gy) / (self.smoothness * dxy));
            }
            let (fx, fy) = (self.raw_eval(&x), self.raw_eval(&y));
            for (f0, f1, g0, p0, p1) in [(fx, fy, &gx, &x, &y), (fy, fx, &gy, &y, &x)] {
                let lin: f64 = g0
                    .iter()
                    .zip(p1.iter().zip(p0))
                    .map(|(g, (a, b))| g * (a - b))
                    .sum();
                min_convexity = min_convexity.min((f1 - f0 - lin) / (1.0 + f0.abs()));
            }
        }
        Ok(RegularityReport {
            n_pairs,
            max_smoothness_ratio: max_ratio,
            min_convexity_residual: min_convexity,
            pass: max_ratio <= 1.0 + 1e-9 && min_convexity >= -1e-9,
        })
    }
}

/// Radius of the sampling ball used by [`Objective::verify_regularity`].
pub const REGULARITY_RADIUS: f64 = 10.0;

#[derive(Debug, Clone, PartialEq)]
pub struct RegularityReport {
    pub n_pairs: usize,
    /// `max ‖∇f(x)−∇f(y)‖ / (L‖x−y‖)`.
    pub max_smoothness_ratio: f64,
    /// `min (f(y) − f(x) − ⟨∇f(x), y−x⟩) / (1+|f(x)|)`.
    pub min_convexity_residual: f64,
    pub pass: bool,
}

/// Uniform sample from the ball of `radius` around `center`.
pub fn sample_ball<R: Rng + ?Sized>(rng: &mut R, center: &[f64], radius: f64) -> Vec<f64> {
    let n = center.len();
    let mut dir: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let len = dir.iter().map(|v| v * v).sum::<f64>().sqrt();
    let u: f64 = rng.random();
    let r = radius * u.powf(1.0 / n as f64);
    for (d, c) in dir.iter_mut().zip(center) {
        *d = c + r * *d / len;
    }
    dir
}

fn huber(r: f64, delta: f64) -> f64 {
    if r.abs() <= delta {
        0.5 * r * r / delta
    } else {
        r.abs() - 0.5 * delta
    }
}

fn huber_slope(r: f64, delta: f64) -> f64 {
    if r.abs() <= delta {
        r / delta
    } else {
        r.signum()
    }
}

/// Top eigenvalue of a symmetric positive semidefinite matrix.
fn top_eigenvalue(m: &DMatrix<f64>) -> f64 {
    m.clone().symmetric_eigen().eigenvalues.max().max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * (1.0 + b.abs())
    }

    #[test]
    fn quadratic_eval_and_grad_examples() {
        let q = Objective::quadratic(vec![1.0], vec![0.0]).unwrap();
        assert_eq!(q.eval(&[0.0]).unwrap(), 0.0);
        assert_eq!(q.eval(&[2.0]).unwrap(), 2.0);
        assert_eq!(q.grad(&[2.0]).unwrap(), vec![2.0]);
        assert_eq!(q.grad(&[0.0]).unwrap(), vec![0.0]);
        assert_eq!(q.smoothness(), 1.0);
    }

    #[test]
    fn least_squares_identity_example() {
        let ls =
            Objective::least_squares(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![1.0, 1.0]).unwrap();
        assert!(close(ls.eval(&[0.0, 0.0]).unwrap(), 1.0, 1e-15));
        assert!(close(ls.smoothness(), 1.0, 1e-12));
        assert!(close(ls.minimizer()[0], 1.0, 1e-12));
        assert!(ls.min_value().abs() < 1e-15);
        let rep = ls.verify_regularity(200, 3).unwrap();
        assert!(rep.max_smoothness_ratio <= 1.0 + 1e-12, "{rep:?}");
    }

    #[test]
    fn huber_gradient_saturates() {
        let h = Objective::huberized_abs(1.0, vec![0.0]).unwrap();
        assert_eq!(h.grad(&[3.0]).unwrap(), vec![1.0]);
        assert_eq!(h.grad(&[-0.5]).unwrap(), vec![-0.5]);
        assert_eq!(h.eval(&[3.0]).unwrap(), 2.5);
        assert_eq!(h.smoothness(), 1.0);
    }

    #[test]
    fn dimension_mismatch_is_argument_error() {
        let q = Objective::quadratic(vec![1.0, 2.0], vec![0.0, 0.0]).unwrap();
        assert!(matches!(q.eval(&[1.0]), Err(Error::Argument(_))));
        assert!(matches!(q.grad(&[1.0, 2.0, 3.0]), Err(Error::Argument(_))));
    }

    #[test]
    fn rank_deficient_least_squares_rejected() {
        let r = Objective::least_squares(vec![vec![1.0, 1.0], vec![2.0, 2.0]], vec![0.0, 1.0]);
        assert!(matches!(r, Err(Error::Config(_))));
    }

    #[test]
    fn regularity_examples() {
        let q = Objective::quadratic(vec![1.0], vec![0.0]).unwrap();
        let rep = q.verify_regularity(500, 11).unwrap();
        assert!(rep.pass && rep.max_smoothness_ratio <= 1.0);
        let h = Objective::huberized_abs(1.0, vec![0.5, -1.0, 2.0]).unwrap();
        let rep = h.verify_regularity(1000, 12).unwrap();
        assert!(rep.pass);
        assert!(rep.min_convexity_residual >= -1e-9);
        assert!(h.verify_regularity(0, 1).is_err());
    }

    #[test]
    fn top_eigenvalue_matches_closed_form() {
        // [[2,1],[1,2]] has eigenvalues 1 and 3
        let m = DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]);
        assert!(close(top_eigenvalue(&m), 3.0, 1e-12));
    }

    #[test]
    fn sampled_points_lie_in_ball() {
        let mut r = rng::stream(1, 0, 0, 0);
        let c = [1.0, -2.0, 3.0];
        for _ in 0..1000 {
            let p = sample_ball(&mut r, &c, 10.0);
            assert!(dist(&p, &c) <= 10.0 + 1e-12);
        }
    }
}
