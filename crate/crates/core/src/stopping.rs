//! Stopping rules evaluated online on trajectory prefixes, the adversarial
//! "first envelope violation" time, coverage estimation and the finite toy
//! space on which all stopping times can be enumerated.

use std::fmt;

use crate::error::{argument, Result};
use crate::sgdm::Trajectory;
use crate::stats::clopper_pearson;
use crate::vecops::dist;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RuleKind {
    /// `‖x_k − x_{k−1}‖ ≤ ε`.
    IterateDelta,
    /// `|f(x_k) − f(x_{k−1})| ≤ ε`.
    ValueDelta,
    /// Always `k_max`.
    FixedK,
    /// `f(x_k) − f* > U(k)`.
    FirstEnvelopeViolation,
}

impl RuleKind {
    pub fn name(&self) -> &'static str {
        match self {
            RuleKind::IterateDelta => "iterate-delta",
            RuleKind::ValueDelta => "value-delta",
            RuleKind::FixedK => "fixed-k",
            RuleKind::FirstEnvelopeViolation => "first-envelope-violation",
        }
    }
}

/// `τ = min{k ∈ [min_k, k_max] : predicate(prefix up to k)}`, or `k_max`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StoppingRule {
    pub kind: RuleKind,
    pub epsilon: f64,
    pub k_max: u64,
    /// First index at which the predicate is consulted.
    pub min_k: u64,
}

impl StoppingRule {
    pub fn new(kind: RuleKind, epsilon: f64, k_max: u64) -> Result<Self> {
        Self::with_min_k(kind, epsilon, k_max, 1)
    }

    pub fn with_min_k(kind: RuleKind, epsilon: f64, k_max: u64, min_k: u64) -> Result<Self> {
        if k_max == 0 {
            return Err(argument("k_max must be >= 1"));
        }
        if min_k == 0 || min_k > k_max {
            return Err(argument(format!(
                "min_k must lie in 1..={k_max}, got {min_k}"
            )));
        }
        if matches!(kind, RuleKind::IterateDelta | RuleKind::ValueDelta) && !(epsilon > 0.0) {
            return Err(argument(format!("epsilon must be positive, got {epsilon}")));
        }
        Ok(Self {
            kind,
            epsilon,
            k_max,
            min_k,
        })
    }

    pub fn fixed(k: u64) -> Result<Self> {
        Self::new(RuleKind::FixedK, 0.0, k)
    }

    /// Stops at the first `k ≤ k0` with `f(x_k) − f* > U(k)`, else at `k0 + 1`.
    pub fn adversarial(k0: u64) -> Self {
        Self {
            kind: RuleKind::FirstEnvelopeViolation,
            epsilon: 0.0,
            k_max: k0 + 1,
            min_k: 1,
        }
    }

    fn triggers(&self, p: &Prefix<'_>, envelope: &dyn Fn(u64) -> f64) -> bool {
        match self.kind {
            RuleKind::IterateDelta => dist(p.x_curr, p.x_prev) <= self.epsilon,
            // gaps share f*, so their difference is the value difference
            RuleKind::ValueDelta => (p.gap_curr - p.gap_prev).abs() <= self.epsilon,
            RuleKind::FixedK => false,
            RuleKind::FirstEnvelopeViolation => p.gap_curr > envelope(p.k),
        }
    }
}

impl fmt::Display for StoppingRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            RuleKind::FixedK => write!(f, "fixed-k({})", self.k_max),
            RuleKind::FirstEnvelopeViolation => write!(f, "adversarial(k0={})", self.k_max - 1),
            _ => write!(
                f,
                "{}(eps={},k_max={})",
                self.kind.name(),
                self.epsilon,
                self.k_max
            ),
        }
    }
}

/// What a rule may look at when deciding whether to stop at `k`.
#[derive(Debug, Clone, Copy)]
pub struct Prefix<'a> {
    pub k: u64,
    pub x_prev: &'a [f64],
    pub x_curr: &'a [f64],
    pub gap_prev: f64,
    pub gap_curr: f64,
}

/// Feeds prefixes one index at a time; remembers `τ` once decided.
#[derive(Debug, Clone)]
pub struct OnlineStopper {
    rule: StoppingRule,
    decided: Option<Decision>,
}

/// Stopping index and whether the envelope held there.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Decision {
    pub tau: u64,
    pub covered: bool,
}

impl OnlineStopper {
    pub fn new(rule: StoppingRule) -> Self {
        Self {
            rule,
            decided: None,
        }
    }

    pub fn rule(&self) -> &StoppingRule {
        &self.rule
    }

    pub fn decision(&self) -> Option<Decision> {
        self.decided
    }

    /// Consumes the prefix ending at `k`; prefixes must arrive in order.
    pub fn observe(&mut self, p: &Prefix<'_>, envelope: &dyn Fn(u64) -> f64) -> Option<Decision> {
        if self.decided.is_none() {
            let stop = p.k >= self.rule.k_max
                || (p.k >= self.rule.min_k && self.rule.triggers(p, envelope));
            if stop {
                self.decided = Some(Decision {
                    tau: p.k,
                    covered: p.gap_curr <= envelope(p.k),
                });
            }
        }
        self.decided
    }
}

/// `τ` of `rule` on a stored trajectory.
pub fn evaluate_rule(
    rule: &StoppingRule,
    traj: &Trajectory,
    envelope: &dyn Fn(u64) -> f64,
) -> Result<u64> {
    Ok(evaluate_decision(rule, traj, envelope)?.tau)
}

pub fn evaluate_decision(
    rule: &StoppingRule,
    traj: &Trajectory,
    envelope: &dyn Fn(u64) -> f64,
) -> Result<Decision> {
    if rule.k_max > traj.steps() {
        return Err(argument(format!(
            "rule needs k_max = {} but the trajectory has K = {}",
            rule.k_max,
            traj.steps()
        )));
    }
    let mut st = OnlineStopper::new(*rule);
    for k in 1..=rule.k_max {
        let p = Prefix {
            k,
            x_prev: traj.x(k - 1)?,
            x_curr: traj.x(k)?,
            gap_prev: traj.f_gap(k - 1)?,
            gap_curr: traj.f_gap(k)?,
        };
        if let Some(d) = st.observe(&p, envelope) {
            return Ok(d);
        }
    }
    unreachable!("a rule always decides by k_max")
}

/// Adversarial `τ` for every member of an ensemble.
pub fn adversarial_tau(
    ensemble: &[Trajectory],
    envelope: &dyn Fn(u64) -> f64,
    k0: u64,
) -> Result<Vec<u64>> {
    let rule = StoppingRule::adversarial(k0);
    ensemble
        .iter()
        .map(|t| evaluate_rule(&rule, t, envelope))
        .collect()
}

/// `f(x_k) − f* ≤ U(k)` for every `1 ≤ k ≤ k_last`.
pub fn covered_uniformly(
    traj: &Trajectory,
    envelope: &dyn Fn(u64) -> f64,
    k_last: u64,
) -> Result<bool> {
    for k in 1..=k_last {
        if traj.f_gap(k)? > envelope(k) {
            return Ok(false);
        }
    }
    Ok(true)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoverageReport {
    pub successes: u64,
    pub trials: u64,
    pub frequency: f64,
    /// Clopper–Pearson 99% interval.
    pub ci: (f64, f64),
}

impl CoverageReport {
    pub fn from_counts(successes: u64, trials: u64) -> Self {
        Self {
            successes,
            trials,
            frequency: if trials == 0 {
                0.0
            } else {
                successes as f64 / trials as f64
            },
            ci: clopper_pearson(successes, trials, 0.99),
        }
    }

    pub fn from_indicators(covered: impl IntoIterator<Item = bool>) -> Self {
        let (mut s, mut n) = (0, 0);
        for c in covered {
            n += 1;
            s += u64::from(c);
        }
        Self::from_counts(s, n)
    }

    /// Lower 99% confidence bound at least `1 − 2β`.
    pub fn passes(&self, beta: f64) -> bool {
        self.ci.0 >= 1.0 - 2.0 * beta
    }
}

/// Fraction of the ensemble with `f(x_τ) − f* ≤ U(τ)`.
pub fn coverage(
    ensemble: &[Trajectory],
    envelope: &dyn Fn(u64) -> f64,
    rule: &StoppingRule,
) -> Result<CoverageReport> {
    let ind = ensemble
        .iter()
        .map(|t| evaluate_decision(rule, t, envelope).map(|d| d.covered))
        .collect::<Result<Vec<_>>>()?;
    Ok(CoverageReport::from_indicators(ind))
}

/// Union-bound envelope `(1/√k)(1/η + η ln(π²k²/(6β)) ln k)` with unit constants.
pub fn baseline_envelope(eta: f64, beta: f64, k: u64) -> Result<f64> {
    if !(eta > 0.0) {
        return Err(argument(format!("eta must be positive, got {eta}")));
    }
    if !(beta > 0.0 && beta < 1.0) {
        return Err(argument(format!("beta must lie in (0, 1), got {beta}")));
    }
    if k == 0 {
        return Err(argument("baseline envelope needs k >= 1"));
    }
    let kf = k as f64;
    let pi2 = std::f64::consts::PI.powi(2);
    Ok((1.0 / eta + eta * (pi2 * kf * kf / (6.0 * beta)).ln() * kf.ln()) / kf.sqrt())
}

/// Binary tree of `steps` coin flips; `2^steps` equally likely paths.
///
/// Paths are numbered by their bits, first flip most significant. A node at
/// depth `t` is the set of paths sharing the first `t` bits; the envelope is
/// violated at a node or not, so violations are adapted by construction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ToyTree {
    steps: u32,
    /// `violated[t-1][prefix]` for depth `t` and prefix value `prefix < 2^t`.
    violated: Vec<Vec<bool>>,
}

/// Largest tree supported by the enumerations.
pub const TOY_MAX_STEPS: u32 = 4;

/// Stopping time on a toy tree: `tau[path] ∈ 1..=steps`.
pub type ToyStoppingTime = Vec<u8>;

impl ToyTree {
    /// `violations` lists `(depth, prefix)` nodes where the envelope fails.
    pub fn new(steps: u32, violations: &[(u32, u32)]) -> Result<Self> {
        if steps == 0 || steps > TOY_MAX_STEPS {
            return Err(argument(format!(
                "toy trees have 1..={TOY_MAX_STEPS} steps"
            )));
        }
        let mut violated: Vec<Vec<bool>> = (1..=steps).map(|t| vec![false; 1 << t]).collect();
        for &(t, prefix) in violations {
            if t == 0 || t > steps || prefix >= 1 << t {
                return Err(argument(format!("node ({t}, {prefix}) not in the tree")));
            }
            violated[(t - 1) as usize][prefix as usize] = true;
        }
        Ok(Self { steps, violated })
    }

    pub fn steps(&self) -> u32 {
        self.steps
    }

    pub fn n_paths(&self) -> usize {
        1 << self.steps
    }

    fn prefix(&self, path: usize, t: u32) -> usize {
        path >> (self.steps - t)
    }

    /// Whether `path` is outside the envelope at time `t`.
    pub fn violated_at(&self, path: usize, t: u32) -> bool {
        self.violated[(t - 1) as usize][self.prefix(path, t)]
    }

    /// Probability that no time on the path violates the envelope.
    pub fn uniform_coverage(&self) -> f64 {
        let ok = (0..self.n_paths())
            .filter(|&w| (1..=self.steps).all(|t| !self.violated_at(w, t)))
            .count();
        ok as f64 / self.n_paths() as f64
    }

    /// `Pr(no violation at τ)`.
    pub fn coverage_at(&self, tau: &[u8]) -> f64 {
        let ok = (0..self.n_paths())
            .filter(|&w| !self.violated_at(w, u32::from(tau[w])))
            .count();
        ok as f64 / self.n_paths() as f64
    }

    /// First violation time, or the last step when there is none.
    pub fn adversarial(&self) -> ToyStoppingTime {
        (0..self.n_paths())
            .map(|w| {
                (1..self.steps)
                    .find(|&t| self.violated_at(w, t))
                    .unwrap_or(self.steps) as u8
            })
            .collect()
    }

    /// Every stopping time, built by deciding stop/continue node by node.
    pub fn stopping_times(&self) -> Vec<ToyStoppingTime> {
        let below = self.node_options(1);
        let mut out = Vec::new();
        for left in &below {
            for right in &below {
                out.push([left.as_slice(), right.as_slice()].concat());
            }
        }
        out.sort();
        out
    }

    /// Stopping times restricted to the paths below any depth-`t` node, given
    /// that none of them stopped before `t`. The set is the same for every node.
    fn node_options(&self, t: u32) -> Vec<Vec<u8>> {
        let width = 1usize << (self.steps - t);
        let mut opts = vec![vec![t as u8; width]];
        if t < self.steps {
            let below = self.node_options(t + 1);
            for l in &below {
                for r in &below {
                    opts.push([l.as_slice(), r.as_slice()].concat());
                }
            }
        }
        opts
    }

    /// Every map path → time that is adapted, by filtering all `steps^paths` maps.
    pub fn stopping_times_brute_force(&self) -> Result<Vec<ToyStoppingTime>> {
        let n = self.n_paths();
        let total = (self.steps as u64)
            .checked_pow(n as u32)
            .filter(|&c| c <= 50_000_000);
        let total = total.ok_or_else(|| argument("tree too large for brute-force enumeration"))?;
        let mut out = Vec::new();
        let mut tau = vec![1u8; n];
        for code in 0..total {
            let mut c = code;
            for slot in tau.iter_mut() {
                *slot = (c % self.steps as u64) as u8 + 1;
                c /= self.steps as u64;
            }
            if self.is_stopping_time(&tau) {
                out.push(tau.clone());
            }
        }
        out.sort();
        Ok(out)
    }

    /// `{τ = t}` depends only on the first `t` flips, for every `t`.
    pub fn is_stopping_time(&self, tau: &[u8]) -> bool {
        (0..self.n_paths()).all(|w| {
            (0..self.n_paths()).all(|v| {
                (1..=self.steps).all(|t| {
                    self.prefix(w, t) != self.prefix(v, t)
                        || ((tau[w] as u32 == t) == (tau[v] as u32 == t))
                })
            })
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{calibrate, NoiseKind};
    use crate::objectives::Objective;
    use crate::sgdm::{run_trajectory, Schedule};

    fn never(_: u64) -> f64 {
        f64::INFINITY
    }

    #[test]
    fn rules_on_stationary_path() {
        let q = Objective::quadratic(vec![1.0], vec![0.0]).unwrap();
        let z = calibrate(NoiseKind::None, 1, 0.0).unwrap();
        let tm = Schedule::theorem_main(1.0).unwrap();
        let t = run_trajectory(&q, &z, tm, &[0.0], 20, 0).unwrap();
        let r = StoppingRule::new(RuleKind::IterateDelta, 1e-9, 20).unwrap();
        assert_eq!(evaluate_rule(&r, &t, &never).unwrap(), 1);
        assert_eq!(
            evaluate_rule(&StoppingRule::fixed(7).unwrap(), &t, &never).unwrap(),
            7
        );
        assert!(evaluate_rule(&StoppingRule::fixed(21).unwrap(), &t, &never).is_err());
    }

    #[test]
    fn iterate_delta_matches_scan() {
        let q = Objective::quadratic(vec![1.0], vec![0.0]).unwrap();
        let z = calibrate(NoiseKind::None, 1, 0.0).unwrap();
        let tm = Schedule::theorem_main(1.0).unwrap();
        let t = run_trajectory(&q, &z, tm, &[2.0], 5000, 0).unwrap();
        let r = StoppingRule::with_min_k(RuleKind::IterateDelta, 1e-3, 5000, 2).unwrap();
        let tau = evaluate_rule(&r, &t, &never).unwrap();
        let scan = (2..=5000u64)
            .find(|&k| (t.x(k).unwrap()[0] - t.x(k - 1).unwrap()[0]).abs() <= 1e-3)
            .unwrap_or(5000);
        assert_eq!(tau, scan);
        assert!(tau > 2);
    }

    #[test]
    fn adversarial_stops_at_first_violation() {
        let q = Objective::quadratic(vec![1.0], vec![0.0]).unwrap();
        let z = calibrate(NoiseKind::None, 1, 0.0).unwrap();
        let tm = Schedule::theorem_main(1.0).unwrap();
        let t = run_trajectory(&q, &z, tm, &[2.0], 10, 0).unwrap();
        let env = |k: u64| if k == 3 { -1.0 } else { f64::INFINITY };
        assert_eq!(adversarial_tau(std::slice::from_ref(&t), &env, 9).unwrap(), vec![3]);
        assert_eq!(adversarial_tau(std::slice::from_ref(&t), &never, 9).unwrap(), vec![10]);
        let adv = coverage(std::slice::from_ref(&t), &env, &StoppingRule::adversarial(9)).unwrap();
        assert_eq!(adv.successes, 0);
        assert!(!covered_uniformly(&t, &env, 10).unwrap());
    }

    #[test]
    fn baseline_examples() {
        assert!((baseline_envelope(2.0, 0.1, 1).unwrap() - 0.5).abs() < 1e-15);
        assert!(baseline_envelope(1.0, 0.1, 0).is_err());
        assert!(baseline_envelope(1.0, 1.0, 3).is_err());
        let a = baseline_envelope(1.0, 0.1, 1 << 20).unwrap();
        let b = baseline_envelope(1.0, 0.1, 1 << 21).unwrap();
        assert!(b < a);
    }

    #[test]
    fn toy_enumerations_agree() {
        let tree = ToyTree::new(3, &[(2, 1), (3, 6)]).unwrap();
        let rec = tree.stopping_times();
        assert_eq!(rec.len(), 25);
        assert_eq!(rec, tree.stopping_times_brute_force().unwrap());
        assert!(rec.iter().all(|t| tree.is_stopping_time(t)));
        assert!(rec.contains(&tree.adversarial()));
    }

    #[test]
    fn toy_min_coverage_is_uniform_coverage() {
        for violations in [
            vec![],
            vec![(3, 5)],
            vec![(2, 1)],
            vec![(2, 3), (3, 0), (3, 3)],
        ] {
            let tree = ToyTree::new(3, &violations).unwrap();
            let min = tree
                .stopping_times()
                .iter()
                .map(|t| tree.coverage_at(t))
                .fold(f64::INFINITY, f64::min);
            assert_eq!(min, tree.uniform_coverage());
            assert_eq!(tree.coverage_at(&tree.adversarial()), min);
        }
    }

    #[test]
    fn four_step_tree_enumerates() {
        let tree = ToyTree::new(4, &[(1, 0)]).unwrap();
        // options per depth-1 node: 1 + (1 + (1 + 1²)²)² = 26
        assert_eq!(tree.stopping_times().len(), 676);
        assert!(ToyTree::new(5, &[]).is_err());
        assert!(tree.stopping_times_brute_force().is_err());
    }
}
