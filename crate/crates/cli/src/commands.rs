use crate::config::RunConfig;
use anyhow::{bail, Context, Result};
use bess_core::artifact::{hash_file, hash_json, sha256_hex, Artifact};
use bess_core::conic::{ClarabelSolver, ConicSolver};
use bess_core::freq::{
    clean_day, discretize_with, read_frequency_csv, read_scenario_matrix, split_train_validation, synth_day,
    write_scenario_matrix, DiscretizeOptions, IngestManifest, RejectedDay, Split, SynthFrequencyParams,
    NOMINAL_FREQUENCY_HZ, SECONDS_PER_DAY,
};
use bess_core::optimizer::{
    build_combined_problem, build_fcr_problem, solve, verify_constraints, CoOptSolution, CombinedGapProblem,
    FirstStage, OptimizeError, ProblemKind,
};
use bess_core::scenarios::{
    estimate_gap, reduce_backward, synth_profiles, GapEstimate, GapProblem, ProfileKind, ProfileParams,
    ProfileScenarioSet, ScenarioSource, SyntheticSource,
};
use bess_core::simulator::{
    evaluate_solution_revenue, resample_frequency, run_closed_loop, simulate, ClosedLoopOptions, RechargeController,
    RevenueStats, ScInputs, ScRun, SimulationReport,
};
use bess_core::uncertainty::fit;
use bess_core::{BatteryConfig, PriceSet, TimeGrid, UncertaintyModel};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

pub const SOLVER_ENV: &str = "BESS_SOLVER";

/// Marks errors that should exit with the solver-failure code.
#[derive(Debug, thiserror::Error)]
#[error("solver failure: {0}")]
pub struct SolverFailure(pub String);

/// Solver named by the environment, Clarabel by default.
pub fn solver_from_env() -> Result<Box<dyn ConicSolver>> {
    match std::env::var(SOLVER_ENV).as_deref() {
        Err(_) | Ok("") | Ok("clarabel") => Ok(Box::new(ClarabelSolver::default())),
        Ok("clarabel-verbose") => Ok(Box::new(ClarabelSolver {
            verbose: true,
            ..ClarabelSolver::default()
        })),
        Ok(other) => bail!("unknown solver {other:?} in {SOLVER_ENV} (available: clarabel, clarabel-verbose)"),
    }
}

fn classify(e: OptimizeError) -> anyhow::Error {
    match e {
        OptimizeError::Solver(_) | OptimizeError::Status(_) => SolverFailure(e.to_string()).into(),
        other => other.into(),
    }
}

fn solved(sol: CoOptSolution) -> Result<CoOptSolution> {
    if !sol.is_optimal() {
        return Err(SolverFailure(format!("status {:?}: {}", sol.status, sol.solver_log)).into());
    }
    Ok(sol)
}

/// Output location plus a summary written next to it.
pub struct Output {
    pub path: PathBuf,
    summary: String,
}

impl Output {
    pub fn new(path: PathBuf) -> Result<Self> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        }
        Ok(Self {
            path,
            summary: String::new(),
        })
    }

    pub fn line(&mut self, text: impl AsRef<str>) {
        self.summary.push_str(text.as_ref());
        self.summary.push('\n');
    }

    pub fn sibling(&self, ext: &str) -> PathBuf {
        self.path.with_extension(ext)
    }

    /// Prints the summary and stores it, with a timestamp, beside the artifact.
    pub fn finish(self) -> Result<()> {
        print!("{}", self.summary);
        let stamped = format!("generated {}\n{}", chrono::Utc::now().to_rfc3339(), self.summary);
        let path = self.sibling("summary.txt");
        std::fs::write(&path, stamped).with_context(|| format!("writing {}", path.display()))
    }
}

fn inputs(files: &[(&str, &Path)]) -> Result<BTreeMap<String, String>> {
    files
        .iter()
        .map(|(name, p)| Ok((name.to_string(), hash_file(p)?)))
        .collect()
}

fn write_artifact<T: Serialize + serde::de::DeserializeOwned>(
    out: &mut Output,
    kind: &str,
    cfg: &RunConfig,
    inputs: BTreeMap<String, String>,
    payload: T,
) -> Result<Artifact<T>> {
    let art = Artifact::new(kind, hash_json(cfg), inputs, payload);
    art.write(&out.path)?;
    out.line(format!("wrote {} artifact {} (payload {})", kind, out.path.display(), &art.payload_hash[..16]));
    Ok(art)
}

fn read_matrix(path: &Path) -> Result<(Vec<Vec<f64>>, Option<Vec<f64>>)> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_scenario_matrix(f).with_context(|| format!("reading {}", path.display()))
}

fn read_profiles(path: &Path) -> Result<ProfileScenarioSet> {
    let (rows, weights) = read_matrix(path)?;
    Ok(match weights {
        Some(w) => ProfileScenarioSet::new(rows, w)?,
        None => ProfileScenarioSet::uniform(rows)?,
    })
}

fn write_matrix(path: &Path, rows: &[Vec<f64>]) -> Result<()> {
    let f = File::create(path).with_context(|| format!("creating {}", path.display()))?;
    write_scenario_matrix(BufWriter::new(f), rows)?;
    Ok(())
}

const SYNTH_EPOCH: i64 = 1_577_836_800; // 2020-01-01T00:00:00Z

pub fn synth_frequency(cfg: &RunConfig, days: u64, resolution_s: u64, out: PathBuf) -> Result<()> {
    let seed = cfg.require_seed()?;
    if resolution_s == 0 || !SECONDS_PER_DAY.is_multiple_of(resolution_s) {
        bail!("resolution {resolution_s} s does not divide a day");
    }
    let mut out = Output::new(out)?;
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(&out.path)?));
    w.write_record(["timestamp", "frequency_hz"])?;
    let params = SynthFrequencyParams::default();
    for d in 0..days {
        let day = synth_day(&params, seed, d);
        for s in (0..SECONDS_PER_DAY).step_by(resolution_s as usize) {
            let t = SYNTH_EPOCH + (d * SECONDS_PER_DAY + s) as i64;
            w.write_record([t.to_string(), format!("{:.6}", day.f[s as usize])])?;
        }
    }
    w.flush()?;
    out.line(format!("{days} synthetic days at {resolution_s} s resolution -> {}", out.path.display()));
    out.finish()
}

pub fn synth_profiles_cmd(cfg: &RunConfig, kind: ProfileKind, n: usize, out: PathBuf) -> Result<()> {
    let seed = cfg.require_seed()?;
    let params = ProfileParams {
        grid: cfg.grid,
        ..ProfileParams::default()
    };
    let set = synth_profiles(kind, &params, n, seed);
    let mut out = Output::new(out)?;
    set.write_csv(BufWriter::new(File::create(&out.path)?))?;
    let mean: f64 = set.profiles.iter().flatten().sum::<f64>() / (n * cfg.grid.n_t).max(1) as f64;
    out.line(format!("{n} {kind:?} profiles, mean {mean:.3} kW -> {}", out.path.display()));
    out.finish()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IngestPayload {
    pub manifest: IngestManifest,
    /// Unfolded deviations of the same days, used for resampling.
    pub raw_matrix: String,
    pub raw_matrix_sha256: String,
}

pub fn ingest(cfg: &RunConfig, input: Option<PathBuf>, out_dir: PathBuf) -> Result<()> {
    let input = input
        .or_else(|| cfg.frequency_csv.clone())
        .context("no frequency CSV (--input or \"frequency_csv\")")?;
    std::fs::create_dir_all(&out_dir).with_context(|| format!("creating {}", out_dir.display()))?;
    let mut out = Output::new(out_dir.join("ingest.json"))?;
    let f = File::open(&input).with_context(|| format!("opening {}", input.display()))?;
    let days = read_frequency_csv(f).with_context(|| format!("reading {}", input.display()))?;
    let opts = DiscretizeOptions {
        fold: cfg.fold,
        clamp: cfg.clamp_deviation,
    };
    let raw_opts = DiscretizeOptions { fold: false, ..opts };
    let mut labels = Vec::new();
    let mut rejected = Vec::new();
    let mut rows = Vec::new();
    let mut raw_rows = Vec::new();
    for day in &days {
        let cleaned = clean_day(day, cfg.max_gap_s).and_then(|d| {
            let a = discretize_with(&d, &cfg.grid, &cfg.battery, opts)?;
            let b = discretize_with(&d, &cfg.grid, &cfg.battery, raw_opts)?;
            Ok((a, b))
        });
        match cleaned {
            Ok((a, b)) => {
                labels.push(day.label.clone());
                rows.push(a.df);
                raw_rows.push(b.df);
            }
            Err(e) => rejected.push(RejectedDay {
                label: day.label.clone(),
                reason: e.to_string(),
            }),
        }
    }
    if rows.is_empty() {
        bail!("no usable days in {} ({} rejected)", input.display(), rejected.len());
    }
    let matrix = out_dir.join("scenarios.csv");
    let raw_matrix = out_dir.join("scenarios_raw.csv");
    write_matrix(&matrix, &rows)?;
    write_matrix(&raw_matrix, &raw_rows)?;
    let manifest = IngestManifest {
        version: 1,
        fold: cfg.fold,
        clamp: cfg.clamp_deviation,
        grid: cfg.grid,
        eta_c: cfg.battery.eta_c,
        eta_d: cfg.battery.eta_d,
        f_nom: NOMINAL_FREQUENCY_HZ,
        df_max: days[0].df_max,
        max_gap_s: cfg.max_gap_s,
        days: labels,
        rejected,
        matrix_sha256: hash_file(&matrix)?,
    };
    out.line(format!(
        "{} days accepted, {} rejected -> {} and {}",
        manifest.days.len(),
        manifest.rejected.len(),
        matrix.display(),
        raw_matrix.display()
    ));
    let payload = IngestPayload {
        manifest,
        raw_matrix: "scenarios_raw.csv".into(),
        raw_matrix_sha256: hash_file(&raw_matrix)?,
    };
    write_artifact(&mut out, "ingest", cfg, inputs(&[("frequency_csv", &input)])?, payload)?;
    out.finish()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitPayload {
    pub model: UncertaintyModel,
    pub split: Split,
}

pub fn fit_cmd(cfg: &RunConfig, scenarios: Option<PathBuf>, out: PathBuf) -> Result<()> {
    let seed = cfg.require_seed()?;
    let scenarios = scenarios
        .or_else(|| cfg.scenario_csv.clone())
        .context("no scenario matrix (--scenarios or \"scenario_csv\")")?;
    let (rows, _) = read_matrix(&scenarios)?;
    let split = split_train_validation(rows.len(), cfg.train_fraction, seed)?;
    let train: Vec<Vec<f64>> = split.train.iter().map(|&i| rows[i].clone()).collect();
    let mut model = fit(&train, cfg.epsilon)?;
    model.training_hash = hash_json(&train);
    let mut out = Output::new(out)?;
    out.line(format!(
        "fitted {} steps on {} training days ({} held out), epsilon {}, omega {:.4}",
        model.n_t(),
        split.train.len(),
        split.validation.len(),
        model.epsilon,
        model.omega()
    ));
    write_artifact(&mut out, "model", cfg, inputs(&[("scenarios", &scenarios)])?, FitPayload { model, split })?;
    out.finish()
}

fn load_model(cfg: &RunConfig, path: &Path) -> Result<Artifact<FitPayload>> {
    let art: Artifact<FitPayload> = Artifact::read(path, "model")?;
    if art.payload.model.n_t() != cfg.grid.n_t {
        bail!("model has {} steps but the grid has {}", art.payload.model.n_t(), cfg.grid.n_t);
    }
    Ok(art)
}

/// The fitted model at the configured epsilon.
fn model_at_epsilon(cfg: &RunConfig, art: &Artifact<FitPayload>) -> Result<UncertaintyModel> {
    Ok(art.payload.model.with_epsilon(cfg.epsilon)?)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyPayload {
    pub kind: ProblemKind,
    pub grid: TimeGrid,
    pub battery: BatteryConfig,
    pub prices: PriceSet,
    pub epsilon: f64,
    pub n_scenarios: usize,
    pub solution: CoOptSolution,
}

fn describe(out: &mut Output, sol: &CoOptSolution, grid: &TimeGrid, prices: &PriceSet) {
    out.line(format!("status {:?}, r = {:.4} kW ({})", sol.status, sol.r(), sol.solver_log));
    match &sol.breakdown {
        Some(b) => out.line(format!(
            "objective {:.4} EUR = self-consumption cost {:.4} - reserve revenue {:.4}",
            b.total, b.sc_cost, b.fcr_revenue
        )),
        None => out.line(format!("reserve revenue {:.4} EUR over {} h", prices.reserve_revenue(sol.r(), grid), grid.horizon_hours())),
    }
}

pub fn optimize_fcr(cfg: &RunConfig, model_path: PathBuf, fix_r: Option<f64>, out: PathBuf) -> Result<()> {
    let art = load_model(cfg, &model_path)?;
    let model = model_at_epsilon(cfg, &art)?;
    let solver = solver_from_env()?;
    let problem = build_fcr_problem(&model, &cfg.battery, &cfg.grid, fix_r).map_err(classify)?;
    let sol = solved(solve(&problem, solver.as_ref()).map_err(classify)?)?;
    let mut out = Output::new(out)?;
    describe(&mut out, &sol, &cfg.grid, &cfg.prices);
    let payload = PolicyPayload {
        kind: ProblemKind::Fcr,
        grid: cfg.grid,
        battery: cfg.battery,
        prices: cfg.prices,
        epsilon: cfg.epsilon,
        n_scenarios: 0,
        solution: sol,
    };
    write_artifact(&mut out, "policy", cfg, inputs(&[("model", &model_path)])?, payload)?;
    out.finish()
}

pub fn optimize_combined(
    cfg: &RunConfig,
    model_path: PathBuf,
    profiles_path: PathBuf,
    fix_r: Option<f64>,
    out: PathBuf,
) -> Result<()> {
    let art = load_model(cfg, &model_path)?;
    let model = model_at_epsilon(cfg, &art)?;
    let set = read_profiles(&profiles_path)?;
    let solver = solver_from_env()?;
    let problem = build_combined_problem(&model, &cfg.battery, &cfg.grid, &cfg.prices, &set, fix_r).map_err(classify)?;
    let sol = solved(solve(&problem, solver.as_ref()).map_err(classify)?)?;
    let mut out = Output::new(out)?;
    out.line(format!("{} profile scenarios", set.len()));
    describe(&mut out, &sol, &cfg.grid, &cfg.prices);
    let payload = PolicyPayload {
        kind: ProblemKind::Combined,
        grid: cfg.grid,
        battery: cfg.battery,
        prices: cfg.prices,
        epsilon: cfg.epsilon,
        n_scenarios: set.len(),
        solution: sol,
    };
    write_artifact(
        &mut out,
        "policy",
        cfg,
        inputs(&[("model", &model_path), ("profiles", &profiles_path)])?,
        payload,
    )?;
    out.finish()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReducePayload {
    pub n_in: usize,
    pub n_out: usize,
    pub reduced_csv: String,
    pub reduced_sha256: String,
}

pub fn reduce(cfg: &RunConfig, profiles_path: PathBuf, target: usize, out: PathBuf) -> Result<()> {
    let set = read_profiles(&profiles_path)?;
    let reduced = reduce_backward(&set, target)?;
    let mut out = Output::new(out)?;
    let csv_path = out.sibling("csv");
    let mut bytes = Vec::new();
    reduced.write_csv(&mut bytes)?;
    std::fs::write(&csv_path, &bytes)?;
    out.line(format!("reduced {} scenarios to {} -> {}", set.len(), reduced.len(), csv_path.display()));
    let payload = ReducePayload {
        n_in: set.len(),
        n_out: reduced.len(),
        reduced_csv: csv_path.file_name().unwrap().to_string_lossy().into_owned(),
        reduced_sha256: sha256_hex(&bytes),
    };
    write_artifact(&mut out, "reduction", cfg, inputs(&[("profiles", &profiles_path)])?, payload)?;
    out.finish()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GapPayload {
    pub estimate: GapEstimate,
    pub relative_gap: f64,
    pub candidate_r: f64,
    pub candidate_objective: f64,
}

pub fn gap(cfg: &RunConfig, model_path: PathBuf, out: PathBuf) -> Result<()> {
    let seed = cfg.require_seed()?;
    let art = load_model(cfg, &model_path)?;
    let model = model_at_epsilon(cfg, &art)?;
    let solver = solver_from_env()?;
    let problem = CombinedGapProblem {
        model: &model,
        cfg: cfg.battery,
        grid: cfg.grid,
        prices: cfg.prices,
        solver: solver.as_ref(),
    };
    let source = SyntheticSource {
        kind: ProfileKind::Net,
        params: ProfileParams {
            grid: cfg.grid,
            ..ProfileParams::default()
        },
    };
    let g = &cfg.gap;
    // the candidate is solved on its own stream, independent of both estimates
    let candidate_set = source.sample(g.n_sc, seed, u64::MAX)?;
    let (candidate_objective, candidate): (f64, FirstStage) = problem.solve_saa(&candidate_set).map_err(classify)?;
    let estimate = estimate_gap(&problem, &candidate, &source, g.n_u, g.n_l, g.n_sc, g.alpha, seed).map_err(classify)?;
    let mut out = Output::new(out)?;
    out.line(format!(
        "upper {:.4} EUR, lower {:.4} EUR, gap {:.4} EUR ({:.2}% of |upper|) at alpha {}",
        estimate.upper_mean,
        estimate.lower_mean,
        estimate.gap,
        100.0 * estimate.relative(),
        estimate.alpha
    ));
    let payload = GapPayload {
        relative_gap: estimate.relative(),
        estimate,
        candidate_r: candidate.r,
        candidate_objective,
    };
    write_artifact(&mut out, "gap", cfg, inputs(&[("model", &model_path)])?, payload)?;
    out.finish()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationPayload {
    pub policy_hash: String,
    pub n_train_days: usize,
    pub report: SimulationReport,
}

pub struct SimulateArgs {
    pub policy: PathBuf,
    pub raw: PathBuf,
    pub model: Option<PathBuf>,
    pub profiles: Option<PathBuf>,
    pub trajectories: usize,
    pub out: PathBuf,
}

pub fn simulate_cmd(cfg: &RunConfig, args: SimulateArgs) -> Result<()> {
    let seed = cfg.require_seed()?;
    let policy_art: Artifact<PolicyPayload> = Artifact::read(&args.policy, "policy")?;
    let p = &policy_art.payload;
    let (mut rows, _) = read_matrix(&args.raw)?;
    let mut files = vec![("policy", args.policy.as_path()), ("raw_scenarios", args.raw.as_path())];
    if let Some(m) = &args.model {
        let split = Artifact::<FitPayload>::read(m, "model")?.payload.split;
        rows = split.train.iter().map(|&i| rows[i].clone()).collect();
        files.push(("model", m));
    }
    // resampling whitens the unfolded deviations; epsilon plays no role here
    let raw_model = fit(&rows, cfg.epsilon)?;
    let samples = resample_frequency(&rows, &raw_model, cfg.n_samples, seed);
    let profiles = match &args.profiles {
        Some(path) => {
            files.push(("profiles", path));
            Some(read_profiles(path)?.profiles)
        }
        None => None,
    };
    let sc = profiles.as_ref().map(|pr| ScInputs {
        envelope: &p.solution.envelope,
        profiles: pr,
        prices: Some(&p.prices),
    });
    let report = simulate(&p.solution.policy, &p.battery, &p.grid, &samples, sc, &cfg.simulation)?;
    let mut out = Output::new(args.out)?;
    out.line(format!(
        "{} samples, r = {:.4} kW ({}): max violation probability {:.3e}, {:.0}% upper bound {:.3e}, samples with any violation {}",
        report.n_samples,
        report.r,
        if report.state_feedback { "state feedback" } else { "disturbance feedback" },
        report.max_violation_prob_hat,
        100.0 * (1.0 - report.alpha),
        report.upper_conf_bound,
        report.any_violation
    ));
    if let Some(rev) = &report.revenue {
        out.line(revenue_line(rev));
    }
    if args.trajectories > 0 {
        let dir = out.sibling("trajectories");
        std::fs::create_dir_all(&dir)?;
        let controller = RechargeController::from_policy(&p.solution.policy);
        let opts = ClosedLoopOptions {
            clamp: cfg.simulation.clamp,
        };
        for (s, scen) in samples.iter().take(args.trajectories).enumerate() {
            let run = profiles.as_ref().map(|pr| ScRun {
                envelope: &p.solution.envelope,
                profile: &pr[s % pr.len()],
            });
            let t = run_closed_loop(&controller, &p.battery, &p.grid, &scen.df, run, opts)?;
            t.write_csv(BufWriter::new(File::create(dir.join(format!("sample_{s:05}.csv")))?))?;
        }
        out.line(format!("{} trajectories -> {}", args.trajectories.min(samples.len()), dir.display()));
    }
    let payload = SimulationPayload {
        policy_hash: policy_art.payload_hash.clone(),
        n_train_days: rows.len(),
        report,
    };
    write_artifact(&mut out, "simulation", cfg, inputs(&files)?, payload)?;
    out.finish()
}

fn revenue_line(rev: &RevenueStats) -> String {
    format!(
        "revenue {:.4} EUR/day = self-consumption {:.4} + reserve {:.4} (net cost {:.4}, std {:.4})",
        rev.total_revenue, rev.sc_revenue, rev.fcr_revenue, rev.net_cost, rev.total_std
    )
}

pub fn run_policy(policy: PathBuf, scenarios: PathBuf, index: usize, profiles: Option<PathBuf>, out: PathBuf) -> Result<()> {
    let art: Artifact<PolicyPayload> = Artifact::read(&policy, "policy")?;
    let p = &art.payload;
    let (rows, _) = read_matrix(&scenarios)?;
    let df = rows
        .get(index)
        .with_context(|| format!("{} has {} rows, no row {index}", scenarios.display(), rows.len()))?;
    let profile = match &profiles {
        Some(path) => Some(
            read_profiles(path)?
                .profiles
                .get(index)
                .cloned()
                .with_context(|| format!("{} has no row {index}", path.display()))?,
        ),
        None => None,
    };
    let run = profile.as_ref().map(|pr| ScRun {
        envelope: &p.solution.envelope,
        profile: pr,
    });
    let controller = RechargeController::from_policy(&p.solution.policy);
    let t = run_closed_loop(&controller, &p.battery, &p.grid, df, run, ClosedLoopOptions::default())?;
    let mut out = Output::new(out)?;
    t.write_csv(BufWriter::new(File::create(&out.path)?))?;
    out.line(format!(
        "scenario {index}: {} violations, final energy {:.4} kWh -> {}",
        t.n_violations(),
        t.energy.last().copied().unwrap_or(f64::NAN),
        out.path.display()
    ));
    out.finish()
}

fn write_study_csv(path: &Path, header: &[&str], rows: &[Vec<f64>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.iter().map(|v| format!("{v:?}")))?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StudyPayload {
    pub study: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

fn finish_study(
    cfg: &RunConfig,
    mut out: Output,
    study: &str,
    header: &[&str],
    rows: Vec<Vec<f64>>,
    files: &[(&str, &Path)],
) -> Result<()> {
    let csv_path = out.sibling("csv");
    write_study_csv(&csv_path, header, &rows)?;
    out.line(header.join("\t"));
    for row in &rows {
        out.line(row.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join("\t"));
    }
    out.line(format!("-> {}", csv_path.display()));
    let payload = StudyPayload {
        study: study.to_string(),
        columns: header.iter().map(|s| s.to_string()).collect(),
        rows,
    };
    write_artifact(&mut out, "study", cfg, inputs(files)?, payload)?;
    out.finish()
}

fn fcr_solution(
    model: &UncertaintyModel,
    battery: &BatteryConfig,
    grid: &TimeGrid,
    solver: &dyn ConicSolver,
) -> Result<CoOptSolution> {
    let problem = build_fcr_problem(model, battery, grid, None).map_err(classify)?;
    solved(solve(&problem, solver).map_err(classify)?)
}

pub fn study_epsilon(cfg: &RunConfig, model_path: PathBuf, out: PathBuf) -> Result<()> {
    let art = load_model(cfg, &model_path)?;
    let solver = solver_from_env()?;
    let rows = cfg
        .study
        .epsilons
        .par_iter()
        .map(|&eps| {
            let model = art.payload.model.with_epsilon(eps)?;
            let sol = fcr_solution(&model, &cfg.battery, &cfg.grid, solver.as_ref())?;
            let margin = verify_constraints(&sol.policy, &sol.envelope, &model, &cfg.battery, &cfg.grid, &[]).min_margin;
            Ok(vec![eps, model.omega(), sol.r(), sol.r() / cfg.battery.capacity(), margin])
        })
        .collect::<Result<Vec<_>>>()?;
    finish_study(
        cfg,
        Output::new(out)?,
        "epsilon",
        &["epsilon", "omega", "r_kw", "r_per_kwh", "min_margin"],
        rows,
        &[("model", &model_path)],
    )
}

pub fn study_crate(cfg: &RunConfig, model_path: PathBuf, out: PathBuf) -> Result<()> {
    let art = load_model(cfg, &model_path)?;
    let model = model_at_epsilon(cfg, &art)?;
    let solver = solver_from_env()?;
    let capacity = cfg.battery.capacity();
    let rows = cfg
        .study
        .c_rates
        .par_iter()
        .map(|&c| {
            let battery = BatteryConfig {
                p_max: c * capacity,
                p_min: -c * capacity,
                ..cfg.battery
            };
            battery.validate()?;
            let r = fcr_solution(&model, &battery, &cfg.grid, solver.as_ref())?.r();
            Ok(vec![c, battery.p_max, r, r / capacity])
        })
        .collect::<Result<Vec<_>>>()?;
    finish_study(
        cfg,
        Output::new(out)?,
        "c_rate",
        &["c_rate", "p_max_kw", "r_kw", "r_per_kwh"],
        rows,
        &[("model", &model_path)],
    )
}

pub fn study_price(cfg: &RunConfig, model_path: PathBuf, profiles_path: PathBuf, out: PathBuf) -> Result<()> {
    let art = load_model(cfg, &model_path)?;
    let model = model_at_epsilon(cfg, &art)?;
    let set = read_profiles(&profiles_path)?;
    let solver = solver_from_env()?;
    let rows = cfg
        .study
        .reserve_prices
        .par_iter()
        .map(|&c_r| {
            let prices = PriceSet { c_r, ..cfg.prices };
            prices.validate()?;
            let problem =
                build_combined_problem(&model, &cfg.battery, &cfg.grid, &prices, &set, None).map_err(classify)?;
            let sol = solved(solve(&problem, solver.as_ref()).map_err(classify)?)?;
            let rev = evaluate_solution_revenue(&sol, &set.profiles, &prices, &cfg.battery, &cfg.grid)?;
            Ok(vec![c_r, sol.r(), rev.sc_revenue, rev.fcr_revenue, rev.total_revenue, sol.objective])
        })
        .collect::<Result<Vec<_>>>()?;
    finish_study(
        cfg,
        Output::new(out)?,
        "reserve_price",
        &["c_r", "r_kw", "sc_revenue", "fcr_revenue", "total_revenue", "objective"],
        rows,
        &[("model", &model_path), ("profiles", &profiles_path)],
    )
}
