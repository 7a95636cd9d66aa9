//! Runs a configured experiment end to end and writes its outputs.

use std::path::Path;

use sgdm_core::{envelope_constants, initial_energy, NtParams};

use crate::checks::{self, Context};
use crate::config::{CheckName, RunConfig};
use crate::ensemble::{run_ensemble, CoveragePlan, EnsemblePlan, PathSummary};
use crate::error::{HarnessError, Result};
use crate::report::{
    write_constants_csv, write_coverage_csv, write_trajectory_csv, CheckSummary, EnsembleStats,
    Report,
};

pub const REPORT_FILE: &str = "report.json";
pub const COVERAGE_FILE: &str = "coverage.csv";
pub const CONSTANTS_FILE: &str = "constants.csv";

pub fn trajectory_file(lane: u64) -> String {
    format!("trajectory_{lane}.csv")
}

fn stats(cfg: &RunConfig, e0: f64, paths: &[PathSummary]) -> EnsembleStats {
    let gaps: Vec<f64> = paths
        .iter()
        .filter(|p| !p.diverged())
        .map(|p| p.final_gap)
        .collect();
    let mean = if gaps.is_empty() {
        f64::NAN
    } else {
        sgdm_core::vecops::neumaier(gaps.iter().copied()) / gaps.len() as f64
    };
    EnsembleStats {
        trajectories: cfg.trajectories,
        steps: cfg.steps,
        diverged: paths.iter().filter(|p| p.diverged()).count() as u64,
        steps_simulated: paths.iter().map(|p| p.steps_done).sum(),
        e0,
        mean_final_gap: mean,
        max_final_gap: gaps.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        max_energy: paths
            .iter()
            .map(|p| p.sup_e)
            .fold(f64::NEG_INFINITY, f64::max),
    }
}

/// Validates `cfg`, runs every enabled check on the current rayon pool and
/// writes `report.json` plus the CSV files into `out_dir`.
pub fn run_experiment(cfg: &RunConfig, out_dir: &Path) -> Result<Report> {
    let resolved = cfg.resolve()?;
    let enabled = cfg.enabled();
    let e0 = initial_energy(&resolved.schedule, &resolved.objective, &cfg.x0)?;
    let sigma = resolved.noise.sigma_certificate();
    let envelope = envelope_constants(&resolved.schedule, sigma, e0, cfg.settings.gamma_tol)?;
    let nt = NtParams::at_max_t(sigma, envelope.gamma2.upper(), envelope.b)?;
    let ctx = Context {
        cfg,
        resolved: &resolved,
        e0,
        sigma,
        envelope,
        nt,
    };

    let paths = if enabled.iter().any(|c| c.needs_ensemble()) {
        let plan = EnsemblePlan {
            objective: &resolved.objective,
            noise: &resolved.noise,
            schedule: resolved.schedule,
            x0: &cfg.x0,
            seed: cfg.seed,
            steps: cfg.steps,
            trajectories: cfg.trajectories,
            traces: cfg.traces,
            nt,
            coverage: enabled
                .contains(&CheckName::Coverage)
                .then(|| CoveragePlan {
                    envelope,
                    betas: cfg.betas.clone(),
                    rules: resolved.rules.clone(),
                }),
        };
        Some(run_ensemble(&plan)?)
    } else {
        None
    };

    std::fs::create_dir_all(out_dir).map_err(|e| HarnessError::io(out_dir, e))?;
    let ens = paths.as_deref().unwrap_or_default();
    let mut summaries = Vec::new();
    for &name in &enabled {
        let records = match name {
            CheckName::Descent => checks::descent(ens),
            CheckName::Decomposition => checks::decomposition(ens),
            CheckName::Supermartingale => checks::supermartingale(&ctx)?,
            CheckName::Ville => checks::ville(&ctx, ens)?,
            CheckName::Mgf => checks::mgf(&ctx)?,
            CheckName::Tail => checks::tail(&ctx)?,
            CheckName::Coverage => {
                let (records, rows) = checks::coverage(&ctx, ens);
                write_coverage_csv(&out_dir.join(COVERAGE_FILE), &rows)?;
                records
            }
            CheckName::Constants => checks::constants(&ctx),
        };
        summaries.push(CheckSummary::from_records(name, records));
    }
    write_constants_csv(&out_dir.join(CONSTANTS_FILE), &checks::constants_rows(&ctx))?;
    for p in ens {
        if let Some(rows) = &p.trace {
            write_trajectory_csv(&out_dir.join(trajectory_file(p.lane)), rows)?;
        }
    }
    let report = Report::new(
        cfg.clone(),
        summaries,
        paths.as_deref().map(|p| stats(cfg, e0, p)),
    );
    report.write_json(&out_dir.join(REPORT_FILE))?;
    Ok(report)
}
