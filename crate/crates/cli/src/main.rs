mod commands;
mod config;

use clap::{Parser, Subcommand, ValueEnum};
use commands::{SimulateArgs, SolverFailure};
use config::RunConfig;
use std::path::PathBuf;
use std::process::ExitCode;

/// Robust frequency reserve and self-consumption planning for a home battery.
#[derive(Parser)]
#[command(name = "bess", version)]
struct Cli {
    /// JSON run configuration; every field has a default.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a configuration field, e.g. `--set battery.e_max=13.5`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Seed for stochastic commands (same as `--set seed=N`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Violation probability per robust constraint.
    #[arg(long, global = true)]
    epsilon: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic inputs.
    #[command(subcommand)]
    Synth(SynthCommand),
    /// Clean and discretize a `timestamp,frequency_hz` CSV into scenario matrices.
    Ingest {
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Split the days and fit the uncertainty model.
    Fit {
        #[arg(long)]
        scenarios: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Solve the reserve-only or the combined problem.
    Optimize {
        #[arg(value_enum)]
        kind: OptimizeKind,
        #[arg(long)]
        model: PathBuf,
        /// Profile scenarios (combined only).
        #[arg(long)]
        profiles: Option<PathBuf>,
        /// Fix the reserve capacity in kW instead of optimizing it.
        #[arg(long)]
        fix_r: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Backward scenario reduction of a profile CSV.
    Reduce {
        #[arg(long)]
        profiles: PathBuf,
        #[arg(long)]
        target: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Statistical optimality gap of the combined problem on synthetic profiles.
    Gap {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte Carlo validation of a policy on resampled frequency days.
    Simulate {
        #[arg(long)]
        policy: PathBuf,
        /// Unfolded scenario matrix to resample from.
        #[arg(long)]
        raw: PathBuf,
        /// Restrict resampling to the model's training days.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Run the self-consumption rule on these profiles and report revenue.
        #[arg(long)]
        profiles: Option<PathBuf>,
        /// Dump this many closed-loop trajectories as CSV.
        #[arg(long, default_value_t = 0)]
        trajectories: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a policy on one scenario row and write its trajectory CSV.
    Run {
        #[arg(long)]
        policy: PathBuf,
        #[arg(long)]
        scenarios: PathBuf,
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long)]
        profiles: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Parameter sweeps written as CSV.
    Study {
        #[arg(value_enum)]
        kind: StudyKind,
        #[arg(long)]
        model: PathBuf,
        /// Profile scenarios (price study only).
        #[arg(long)]
        profiles: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum SynthCommand {
    /// Raw grid frequency, one row per sample.
    Frequency {
        #[arg(long)]
        days: u64,
        #[arg(long, default_value_t = 1)]
        resolution_s: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Daily household, PV or net load profiles.
    Profiles {
        #[arg(long, value_enum, default_value_t = ProfileArg::Net)]
        kind: ProfileArg,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum OptimizeKind {
    Fcr,
    Combined,
}

#[derive(Clone, Copy, ValueEnum)]
enum StudyKind {
    Crate,
    Epsilon,
    Price,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    Household,
    Pv,
    Net,
}

impl From<ProfileArg> for bess_core::scenarios::ProfileKind {
    fn from(k: ProfileArg) -> Self {
        match k {
            ProfileArg::Household => Self::Household,
            ProfileArg::Pv => Self::Pv,
            ProfileArg::Net => Self::Net,
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    let mut overrides = cli.overrides;
    if let Some(s) = cli.seed {
        overrides.push(format!("seed={s}"));
    }
    if let Some(e) = cli.epsilon {
        overrides.push(format!("epsilon={e}"));
    }
    let cfg = RunConfig::load(cli.config.as_deref(), &overrides)?;
    let default_out = |name: &str| cfg.out_dir.join(name);
    match cli.command {
        Command::Synth(SynthCommand::Frequency { days, resolution_s, out }) => {
            commands::synth_frequency(&cfg, days, resolution_s, out)
        }
        Command::Synth(SynthCommand::Profiles { kind, n, out }) => {
            commands::synth_profiles_cmd(&cfg, kind.into(), n, out)
        }
        Command::Ingest { input, out_dir } => commands::ingest(&cfg, input, out_dir.unwrap_or_else(|| cfg.out_dir.clone())),
        Command::Fit { scenarios, out } => commands::fit_cmd(&cfg, scenarios, out.unwrap_or_else(|| default_out("model.json"))),
        Command::Optimize {
            kind,
            model,
            profiles,
            fix_r,
            out,
        } => {
            let out = out.unwrap_or_else(|| default_out("policy.json"));
            match (kind, profiles) {
                (OptimizeKind::Fcr, None) => commands::optimize_fcr(&cfg, model, fix_r, out),
                (OptimizeKind::Fcr, Some(_)) => anyhow::bail!("--profiles only applies to the combined problem"),
                (OptimizeKind::Combined, Some(p)) => commands::optimize_combined(&cfg, model, p, fix_r, out),
                (OptimizeKind::Combined, None) => anyhow::bail!("the combined problem needs --profiles"),
            }
        }
        Command::Reduce { profiles, target, out } => {
            commands::reduce(&cfg, profiles, target, out.unwrap_or_else(|| default_out("reduced.json")))
        }
        Command::Gap { model, out } => commands::gap(&cfg, model, out.unwrap_or_else(|| default_out("gap.json"))),
        Command::Simulate {
            policy,
            raw,
            model,
            profiles,
            trajectories,
            out,
        } => commands::simulate_cmd(
            &cfg,
            SimulateArgs {
                policy,
                raw,
                model,
                profiles,
                trajectories,
                out: out.unwrap_or_else(|| default_out("simulation.json")),
            },
        ),
        Command::Run {
            policy,
            scenarios,
            index,
            profiles,
            out,
        } => commands::run_policy(policy, scenarios, index, profiles, out.unwrap_or_else(|| default_out("trajectory.csv"))),
        Command::Study {
            kind,
            model,
            profiles,
            out,
        } => match kind {
            StudyKind::Epsilon => commands::study_epsilon(&cfg, model, out.unwrap_or_else(|| default_out("study_epsilon.json"))),
            StudyKind::Crate => commands::study_crate(&cfg, model, out.unwrap_or_else(|| default_out("study_crate.json"))),
            StudyKind::Price => {
                let profiles = profiles.ok_or_else(|| anyhow::anyhow!("the price study needs --profiles"))?;
                commands::study_price(&cfg, model, profiles, out.unwrap_or_else(|| default_out("study_price.json")))
            }
        },
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.chain().any(|c| c.is::<SolverFailure>()) {
                ExitCode::from(3)
            } else {
                ExitCode::from(2)
            }
        }
    }
}
