//! Experiment configuration read from TOML. Unknown keys are rejected.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sgdm_core::stopping::{RuleKind, StoppingRule};
use sgdm_core::{calibrate, NoiseKind, NoiseModel, Objective, Schedule};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ObjectiveSpec {
    Quadratic { diag: Vec<f64>, center: Vec<f64> },
    LeastSquares { rows: Vec<Vec<f64>>, b: Vec<f64> },
    HuberizedAbs { delta: f64, center: Vec<f64> },
}

impl ObjectiveSpec {
    pub fn build(&self) -> sgdm_core::Result<Objective> {
        match self {
            ObjectiveSpec::Quadratic { diag, center } => {
                Objective::quadratic(diag.clone(), center.clone())
            }
            ObjectiveSpec::LeastSquares { rows, b } => {
                Objective::least_squares(rows.clone(), b.clone())
            }
            ObjectiveSpec::HuberizedAbs { delta, center } => {
                Objective::huberized_abs(*delta, center.clone())
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseName {
    None,
    Gaussian,
    Sphere,
    HeavyTail,
}

impl NoiseName {
    pub fn kind(self) -> NoiseKind {
        match self {
            NoiseName::None => NoiseKind::None,
            NoiseName::Gaussian => NoiseKind::GaussianIsotropic,
            NoiseName::Sphere => NoiseKind::BoundedSphere,
            NoiseName::HeavyTail => NoiseKind::HeavyTail,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    pub kind: NoiseName,
    #[serde(default)]
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ScheduleSpec {
    TheoremMain {
        /// Defaults to the objective's smoothness constant.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        smoothness: Option<f64>,
    },
    PropositionEps {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        smoothness: Option<f64>,
        epsilon: f64,
        #[serde(default = "default_c0_prime")]
        c0_prime: f64,
    },
}

fn default_c0_prime() -> f64 {
    sgdm_core::sgdm::DEFAULT_C0_PRIME
}

impl ScheduleSpec {
    pub fn build(&self, obj_smoothness: f64) -> sgdm_core::Result<Schedule> {
        match *self {
            ScheduleSpec::TheoremMain { smoothness } => {
                Schedule::theorem_main(smoothness.unwrap_or(obj_smoothness))
            }
            ScheduleSpec::PropositionEps {
                smoothness,
                epsilon,
                c0_prime,
            } => Schedule::proposition_eps(smoothness.unwrap_or(obj_smoothness), epsilon, c0_prime),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RuleName {
    IterateDelta,
    ValueDelta,
    FixedK,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RuleSpec {
    pub kind: RuleName,
    #[serde(default)]
    pub epsilon: f64,
    /// Defaults to the run length `steps`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_max: Option<u64>,
    #[serde(default = "default_min_k")]
    pub min_k: u64,
}

fn default_min_k() -> u64 {
    2
}

impl RuleSpec {
    pub fn build(&self, steps: u64) -> sgdm_core::Result<StoppingRule> {
        let kind = match self.kind {
            RuleName::IterateDelta => RuleKind::IterateDelta,
            RuleName::ValueDelta => RuleKind::ValueDelta,
            RuleName::FixedK => RuleKind::FixedK,
        };
        let k_max = self.k_max.unwrap_or(steps);
        StoppingRule::with_min_k(kind, self.epsilon, k_max, self.min_k.min(k_max))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckName {
    Descent,
    Decomposition,
    Supermartingale,
    Ville,
    Mgf,
    Tail,
    Coverage,
    Constants,
}

impl CheckName {
    pub const ALL: [CheckName; 8] = [
        CheckName::Descent,
        CheckName::Decomposition,
        CheckName::Supermartingale,
        CheckName::Ville,
        CheckName::Mgf,
        CheckName::Tail,
        CheckName::Coverage,
        CheckName::Constants,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CheckName::Descent => "descent",
            CheckName::Decomposition => "decomposition",
            CheckName::Supermartingale => "supermartingale",
            CheckName::Ville => "ville",
            CheckName::Mgf => "mgf",
            CheckName::Tail => "tail",
            CheckName::Coverage => "coverage",
            CheckName::Constants => "constants",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.as_str() == s)
    }

    /// Whether the check consumes the trajectory ensemble.
    pub fn needs_ensemble(self) -> bool {
        matches!(
            self,
            CheckName::Descent | CheckName::Decomposition | CheckName::Ville | CheckName::Coverage
        )
    }
}

impl fmt::Display for CheckName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Knobs of the individual checks; every field has a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Settings {
    /// Relative accuracy of the γ brackets.
    pub gamma_tol: f64,
    /// Steps at which the supermartingale property is tested (those above `steps` are skipped).
    pub supermartingale_steps: Vec<u64>,
    pub branches: usize,
    pub prefix_seeds: u64,
    pub bootstrap_resamples: usize,
    pub mgf_lambdas: Vec<f64>,
    pub mgf_samples: usize,
    pub tail_omegas: Vec<f64>,
    pub tail_runs: usize,
    /// Number of leading coefficients `a_1..a_n` used as tail weights.
    pub tail_terms: usize,
    /// Target value of the maximal-inequality bound.
    pub ville_level: f64,
}

impl Default for Settings {
    fn default() -> Self {
        Self {
            gamma_tol: 1e-6,
            supermartingale_steps: vec![1, 2, 5, 10, 50],
            branches: 100_000,
            prefix_seeds: 3,
            bootstrap_resamples: 200,
            mgf_lambdas: vec![-2.0, -1.0, -0.5, 0.5, 1.0, 2.0],
            mgf_samples: 1_000_000,
            tail_omegas: vec![1.0, 2.0, 3.0],
            tail_runs: 100_000,
            tail_terms: 100,
            ville_level: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub seed: u64,
    /// Ensemble size `R`.
    pub trajectories: u64,
    /// Run length `K`.
    pub steps: u64,
    pub x0: Vec<f64>,
    #[serde(default = "default_betas")]
    pub betas: Vec<f64>,
    pub checks: Vec<CheckName>,
    /// Number of leading trajectories written out as CSV traces.
    #[serde(default = "default_traces")]
    pub traces: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    pub objective: ObjectiveSpec,
    pub noise: NoiseSpec,
    pub schedule: ScheduleSpec,
    #[serde(default)]
    pub rules: Vec<RuleSpec>,
    #[serde(default)]
    pub settings: Settings,
}

fn default_name() -> String {
    "experiment".into()
}

fn default_betas() -> Vec<f64> {
    vec![0.05, 0.1]
}

fn default_traces() -> u64 {
    1
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

/// Concrete objects built from a validated config.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub objective: Objective,
    pub noise: NoiseModel,
    pub schedule: Schedule,
    pub rules: Vec<StoppingRule>,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| HarnessError::Config(vec![e.to_string()]))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            HarnessError::Config(vec![format!("cannot read {}: {e}", path.display())])
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn enabled(&self) -> BTreeSet<CheckName> {
        self.checks.iter().copied().collect()
    }

    /// Checks every constraint and builds the objects; all violations are reported together.
    pub fn resolve(&self) -> Result<Resolved> {
        let mut errs = Vec::new();
        if self.trajectories < 1 {
            errs.push("trajectories must be >= 1".to_string());
        }
        if self.steps < 2 {
            errs.push("steps must be >= 2".to_string());
        }
        if self.betas.is_empty() {
            errs.push("betas must not be empty".to_string());
        }
        for &b in &self.betas {
            if !(b > 0.0 && b < 0.5) {
                errs.push(format!("beta {b} outside (0, 0.5)"));
            }
        }
        if self.checks.is_empty() {
            errs.push("checks must not be empty".to_string());
        }
        if self.enabled().len() != self.checks.len() {
            errs.push("checks lists a suite twice".to_string());
        }
        if self.traces > self.trajectories {
            errs.push(format!(
                "traces ({}) exceeds trajectories ({})",
                self.traces, self.trajectories
            ));
        }
        let s = &self.settings;
        if !(s.gamma_tol > 1e-12 && s.gamma_tol < 1e-3) {
            errs.push(format!(
                "settings.gamma_tol {} outside (1e-12, 1e-3)",
                s.gamma_tol
            ));
        }
        if s.branches == 0 {
            errs.push("settings.branches must be positive".to_string());
        }
        if s.prefix_seeds == 0 {
            errs.push("settings.prefix_seeds must be positive".to_string());
        }
        if s.supermartingale_steps.contains(&0) {
            errs.push("settings.supermartingale_steps must be >= 1".to_string());
        }
        if s.mgf_samples == 0 || s.tail_runs == 0 || s.tail_terms == 0 {
            errs.push("settings sample counts must be positive".to_string());
        }
        if s.tail_omegas.iter().any(|&o| !(o > -1.0)) {
            errs.push("settings.tail_omegas must exceed -1".to_string());
        }
        if !(s.ville_level > 0.0 && s.ville_level <= 1.0) {
            errs.push(format!(
                "settings.ville_level {} outside (0, 1]",
                s.ville_level
            ));
        }

        let objective = self
            .objective
            .build()
            .map_err(|e| errs.push(format!("objective: {e}")))
            .ok();
        let noise = objective.as_ref().and_then(|o| {
            calibrate(self.noise.kind.kind(), o.dim(), self.noise.sigma)
                .map_err(|e| errs.push(format!("noise: {e}")))
                .ok()
        });
        let schedule = objective.as_ref().and_then(|o| {
            self.schedule
                .build(o.smoothness())
                .map_err(|e| errs.push(format!("schedule: {e}")))
                .ok()
        });
        if let Some(o) = &objective {
            if o.dim() != self.x0.len() {
                errs.push(format!(
                    "x0 has dimension {}, objective has {}",
                    self.x0.len(),
                    o.dim()
                ));
            }
        }
        if self.x0.iter().any(|v| !v.is_finite()) {
            errs.push("x0 must be finite".to_string());
        }
        let mut rules = Vec::new();
        for (i, r) in self.rules.iter().enumerate() {
            if r.k_max.is_some_and(|k| k > self.steps) {
                errs.push(format!("rules[{i}].k_max exceeds steps"));
                continue;
            }
            match r.build(self.steps) {
                Ok(rule) => rules.push(rule),
                Err(e) => errs.push(format!("rules[{i}]: {e}")),
            }
        }
        if !errs.is_empty() {
            return Err(HarnessError::Config(errs));
        }
        Ok(Resolved {
            objective: objective.expect("checked"),
            noise: noise.expect("checked"),
            schedule: schedule.expect("checked"),
            rules,
        })
    }
}
