//! Command-line front end. Exit codes: 0 all checks pass, 1 a check failed,
//! 2 bad usage, bad configuration or I/O failure.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use sgdm_core::{envelope_constants, Schedule};

use crate::config::{CheckName, RunConfig, ScheduleSpec};
use crate::ensemble::{with_workers, worker_count};
use crate::error::{HarnessError, Result};
use crate::experiment::{run_experiment, REPORT_FILE};
use crate::report::{fmt_f64, Report};

pub const EXIT_PASS: i32 = 0;
pub const EXIT_FAIL: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "sgdm-lab",
    version,
    about = "Simulate momentum SGD and certify its high-probability bounds"
)]
struct Cli {
    /// Worker threads (overrides SGDM_LAB_WORKERS).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Run every check listed in the config.
    Run {
        config: PathBuf,
        /// Output directory (defaults to the config's output_dir).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a single check suite from the config.
    Verify {
        suite: String,
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print γ₁, γ₂, C₁, C₂ with their certified brackets.
    Constants {
        schedule: ScheduleArg,
        #[arg(long = "L", visible_alias = "smoothness", default_value_t = 1.0)]
        smoothness: f64,
        #[arg(long)]
        sigma: f64,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long, default_value_t = sgdm_core::sgdm::DEFAULT_C0_PRIME)]
        c0_prime: f64,
        /// Initial energy entering C₁.
        #[arg(long, default_value_t = 1.0)]
        e0: f64,
    },
    /// Re-run the config once per value of one parameter.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        param: SweepParam,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-render the summary of a finished run.
    Report { dir: PathBuf },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ScheduleArg {
    TheoremMain,
    PropositionEps,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SweepParam {
    Sigma,
    Seed,
    Steps,
    Trajectories,
    Epsilon,
    C0Prime,
}

impl SweepParam {
    fn name(self) -> &'static str {
        match self {
            SweepParam::Sigma => "sigma",
            SweepParam::Seed => "seed",
            SweepParam::Steps => "steps",
            SweepParam::Trajectories => "trajectories",
            SweepParam::Epsilon => "epsilon",
            SweepParam::C0Prime => "c0-prime",
        }
    }
}

/// Returns `cfg` with `param` set to `value`.
pub fn apply_param(cfg: &RunConfig, param: SweepParam, value: &str) -> Result<RunConfig> {
    let bad = |what: &str| {
        HarnessError::Config(vec![format!("sweep value {value:?} is not a valid {what}")])
    };
    let float = || value.trim().parse::<f64>().map_err(|_| bad("number"));
    let int = || value.trim().parse::<u64>().map_err(|_| bad("integer"));
    let mut c = cfg.clone();
    match param {
        SweepParam::Sigma => c.noise.sigma = float()?,
        SweepParam::Seed => c.seed = int()?,
        SweepParam::Steps => c.steps = int()?,
        SweepParam::Trajectories => c.trajectories = int()?,
        SweepParam::Epsilon | SweepParam::C0Prime => match &mut c.schedule {
            ScheduleSpec::PropositionEps {
                epsilon, c0_prime, ..
            } => {
                *if param == SweepParam::Epsilon {
                    epsilon
                } else {
                    c0_prime
                } = float()?;
            }
            ScheduleSpec::TheoremMain { .. } => {
                return Err(HarnessError::Config(vec![format!(
                    "sweeping {} needs the proposition-eps schedule",
                    param.name()
                )]))
            }
        },
    }
    Ok(c)
}

fn exit_for(report: &Report) -> i32 {
    if report.pass {
        EXIT_PASS
    } else {
        EXIT_FAIL
    }
}

fn load(path: &Path) -> Result<RunConfig> {
    RunConfig::load(path)
}

/// Arguments of the `constants` subcommand.
struct ConstantsArgs {
    schedule: ScheduleArg,
    smoothness: f64,
    sigma: f64,
    tol: f64,
    epsilon: Option<f64>,
    c0_prime: f64,
    e0: f64,
}

fn constants(out: &mut (dyn Write + Send), a: ConstantsArgs) -> Result<()> {
    let (l, sigma, tol, e0) = (a.smoothness, a.sigma, a.tol, a.e0);
    let sched = match a.schedule {
        ScheduleArg::TheoremMain => Schedule::theorem_main(l)?,
        ScheduleArg::PropositionEps => {
            let eps = a.epsilon.ok_or_else(|| {
                HarnessError::Config(vec!["proposition-eps needs --epsilon".into()])
            })?;
            Schedule::proposition_eps(l, eps, a.c0_prime)?
        }
    };
    let p = envelope_constants(&sched, sigma, e0, tol)?;
    let w = |out: &mut dyn Write, s: String| {
        out.write_all(s.as_bytes())
            .map_err(|e| HarnessError::io("<stdout>", e))
    };
    w(
        out,
        format!(
            "schedule {} L={} sigma={} tol={} E0={}\n",
            sched.name(),
            fmt_f64(l),
            fmt_f64(sigma),
            fmt_f64(tol),
            fmt_f64(e0)
        ),
    )?;
    for (name, b) in [("gamma1", p.gamma1), ("gamma2", p.gamma2)] {
        w(
            out,
            format!(
                "{name} = {}  in [{}, {}]\n",
                fmt_f64(b.value),
                fmt_f64(b.value),
                fmt_f64(b.upper())
            ),
        )?;
    }
    w(
        out,
        format!("C1 = {}\nC2 = {}\n", fmt_f64(p.c1), fmt_f64(p.c2)),
    )?;
    if let Some(z) = p.zeta {
        w(
            out,
            format!(
                "zeta = {}\nh = {}\nC0 = {}\n",
                fmt_f64(z.zeta),
                fmt_f64(z.h),
                fmt_f64(z.c0)
            ),
        )?;
    }
    Ok(())
}

fn dispatch(cli: Cli, out: &mut (dyn Write + Send)) -> Result<i32> {
    let print = |out: &mut dyn Write, s: &str| {
        out.write_all(s.as_bytes())
            .map_err(|e| HarnessError::io("<stdout>", e))
    };
    match cli.cmd {
        Cmd::Run { config, out: dir } => {
            let cfg = load(&config)?;
            let dir = dir.unwrap_or_else(|| cfg.output_dir.clone());
            let report = run_experiment(&cfg, &dir)?;
            print(out, &report.summary())?;
            Ok(exit_for(&report))
        }
        Cmd::Verify {
            suite,
            config,
            out: dir,
        } => {
            let name = CheckName::parse(&suite).ok_or_else(|| {
                let known: Vec<_> = CheckName::ALL.iter().map(|c| c.as_str()).collect();
                HarnessError::Config(vec![format!(
                    "unknown suite {suite:?}; expected one of {}",
                    known.join(", ")
                )])
            })?;
            let mut cfg = load(&config)?;
            cfg.checks = vec![name];
            let dir = dir.unwrap_or_else(|| cfg.output_dir.clone());
            let report = run_experiment(&cfg, &dir)?;
            print(out, &report.summary())?;
            Ok(exit_for(&report))
        }
        Cmd::Constants {
            schedule,
            smoothness,
            sigma,
            tol,
            epsilon,
            c0_prime,
            e0,
        } => {
            let args = ConstantsArgs {
                schedule,
                smoothness,
                sigma,
                tol,
                epsilon,
                c0_prime,
                e0,
            };
            constants(out, args)?;
            Ok(EXIT_PASS)
        }
        Cmd::Sweep {
            config,
            param,
            values,
            out: dir,
        } => {
            let cfg = load(&config)?;
            let base = dir.unwrap_or_else(|| cfg.output_dir.clone());
            // validate every point before spending time on any of them
            let points = values
                .iter()
                .map(|v| {
                    let c = apply_param(&cfg, param, v)?;
                    c.resolve()?;
                    Ok((v.trim().to_string(), c))
                })
                .collect::<Result<Vec<_>>>()?;
            let mut all = true;
            for (v, c) in points {
                let report = run_experiment(&c, &base.join(format!("{}={v}", param.name())))?;
                all &= report.pass;
                print(
                    out,
                    &format!(
                        "{}={v}: {}\n",
                        param.name(),
                        if report.pass { "PASS" } else { "FAIL" }
                    ),
                )?;
            }
            Ok(if all { EXIT_PASS } else { EXIT_FAIL })
        }
        Cmd::Report { dir } => {
            let report = Report::read_json(&dir.join(REPORT_FILE))?;
            print(out, &report.summary())?;
            Ok(exit_for(&report))
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run_with<I, T>(args: I, out: &mut (dyn Write + Send), err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() {
                EXIT_USAGE
            } else {
                EXIT_PASS
            };
            let text = e.render().to_string();
            let _ = if e.use_stderr() {
                err.write_all(text.as_bytes())
            } else {
                out.write_all(text.as_bytes())
            };
            return code;
        }
    };
    let workers = cli.workers.unwrap_or_else(worker_count);
    match with_workers(workers, || dispatch(cli, out)) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            EXIT_USAGE
        }
    }
}

pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with(args, &mut std::io::stdout(), &mut std::io::stderr())
}
