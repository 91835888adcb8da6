//! Executes configured runs and writes their output files.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use mcem::em::run_em;
use mcem::inference::{louis_information, InferenceReport};
use mcem::mcem::{run_booth_hobert_into, run_caffo_into, run_chan_ledolter_into, run_wei_tanner_into};
use mcem::mcml::{mcml_maximize, mcml_surface};
use mcem::models::{BloodData, BloodMissing, BloodModel, BloodRandomWalk, CensoredData, CensoredModel};
use mcem::optim::solve_score_system;
use mcem::parallel::{map_indexed, ExecMode};
use mcem::saem::{run_saem_into, SaemVariant};
use mcem::samplers::{
    sample_direct, sample_importance, sample_mh, sample_rejection, Exact, GaussianRandomWalk, MhConfig,
    ModelConditional, SamplerPolicy,
};
use mcem::{ExactConditional, Model, StreamKey, Theta, Trajectory, TrajectoryRecord, WeightedSample};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{Config, MethodConfig, ModelConfig, SamplerConfig};
use crate::table::{fmt_f64, write_trajectory, RunRow, RunTable};
use crate::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Run,
    Compare,
}

pub enum LoadedModel {
    Blood(BloodModel),
    Censored(CensoredModel),
}

impl LoadedModel {
    pub fn from_config(cfg: &ModelConfig) -> Result<(Self, Theta), CliError> {
        match cfg {
            ModelConfig::Blood { counts, start } => {
                let data = BloodData::new(*counts).map_err(|e| CliError::config("model.counts", e.to_string()))?;
                let model = BloodModel::new(data);
                let [p, q] = start.unwrap_or([1.0 / 3.0, 1.0 / 3.0]);
                let start = checked(model.theta(p, q))?;
                Ok((LoadedModel::Blood(model), start))
            }
            ModelConfig::Censored { observed, censored, threshold, start } => {
                let data = match (observed, censored, threshold) {
                    (Some(o), Some(m), Some(c)) => {
                        CensoredData::new(o.clone(), *m, *c).map_err(|e| CliError::config("model", e.to_string()))?
                    }
                    _ => CensoredData::fixture(),
                };
                let model = CensoredModel::new(data);
                let [mu, sigma] = start.unwrap_or_else(|| observed_moments(&model.data.observed));
                let start = checked(model.theta(mu, sigma))?;
                Ok((LoadedModel::Censored(model), start))
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            LoadedModel::Blood(_) => "blood",
            LoadedModel::Censored(_) => "censored",
        }
    }

    pub fn params(&self) -> &'static [&'static str] {
        match self {
            LoadedModel::Blood(_) => &["p", "q"],
            LoadedModel::Censored(_) => &["mu", "sigma"],
        }
    }

    /// The observed-data MLE by a deterministic method.
    pub fn oracle(&self, start: &Theta) -> mcem::Result<Theta> {
        match self {
            LoadedModel::Blood(m) => solve_score_system(m, &m.to_unconstrained(start)),
            LoadedModel::Censored(m) => m.em_oracle(start, 1e-13),
        }
    }
}

fn checked(t: Theta) -> Result<Theta, CliError> {
    t.ensure_valid().map_err(|e| CliError::config("model.start", e.to_string()))?;
    Ok(t)
}

fn observed_moments(xs: &[f64]) -> [f64; 2] {
    if xs.len() < 2 {
        return [0.0, 1.0];
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    [mean, if sd > 0.0 { sd } else { 1.0 }]
}

/// The configured sampler, bound to a proposal parameter for importance sampling.
pub struct CliSampler {
    pub cfg: SamplerConfig,
    pub proposal: Theta,
}

impl SamplerPolicy<BloodModel> for CliSampler {
    fn draw(
        &self,
        model: &BloodModel,
        theta: &Theta,
        m: usize,
        key: StreamKey,
    ) -> mcem::Result<WeightedSample<BloodMissing>> {
        match &self.cfg {
            SamplerConfig::Direct => sample_direct(model, theta, m, key),
            SamplerConfig::Exact => Exact.draw(model, theta, m, key),
            SamplerConfig::Importance { truncate, .. } => {
                let g = ModelConditional::new(model, self.proposal.clone())?;
                sample_importance(model, theta, &g, m.max(2), *truncate, key)
            }
            SamplerConfig::Rejection { .. } => Err(mcem::Error::Capability("a rejection envelope")),
            SamplerConfig::Mh { burn_in, thinning, step } => {
                let proposal = BloodRandomWalk { data: model.data, step: step.unwrap_or(2.0).round().max(1.0) as u64 };
                let mean = model.conditional_mean(theta);
                let init = BloodMissing::from_free(&model.data, mean.0[1].round(), mean.0[3].round());
                let cfg = MhConfig { burn_in: *burn_in, thinning: *thinning, proposal };
                sample_mh(model, theta, &cfg, m, init, key)
            }
        }
    }
}

impl SamplerPolicy<CensoredModel> for CliSampler {
    fn draw(
        &self,
        model: &CensoredModel,
        theta: &Theta,
        m: usize,
        key: StreamKey,
    ) -> mcem::Result<WeightedSample<Vec<f64>>> {
        match &self.cfg {
            SamplerConfig::Direct => sample_direct(model, theta, m, key),
            SamplerConfig::Exact => Exact.draw(model, theta, m, key),
            SamplerConfig::Importance { truncate, .. } => {
                let g = ModelConditional::new(model, self.proposal.clone())?;
                sample_importance(model, theta, &g, m.max(2), *truncate, key)
            }
            SamplerConfig::Rejection { budget_factor } => {
                let (g, log_c) = model.rejection_envelope(theta);
                sample_rejection(model, theta, &g, log_c, m, m.saturating_mul(*budget_factor), key)
            }
            SamplerConfig::Mh { burn_in, thinning, step } => {
                let proposal = GaussianRandomWalk { scale: vec![step.unwrap_or(0.3 * theta.values[1])] };
                let init = vec![model.data.c + theta.values[1]; model.data.m];
                let cfg = MhConfig { burn_in: *burn_in, thinning: *thinning, proposal };
                sample_mh(model, theta, &cfg, m, init, key)
            }
        }
    }
}

/// Everything one (method, seed) run produced.
pub struct RunOutcome {
    pub method: String,
    pub seed: u64,
    pub trajectory: Trajectory,
    pub error: Option<mcem::Error>,
    pub inference: Option<Result<InferenceReport, String>>,
    pub wall_seconds: f64,
}

fn run_method<M, S>(
    model: &M,
    method: &MethodConfig,
    sampler: &S,
    start: &Theta,
    key: StreamKey,
    traj: &mut Trajectory,
) -> mcem::Result<()>
where
    M: ExactConditional,
    S: SamplerPolicy<M>,
{
    match method {
        MethodConfig::Em(s) => {
            *traj = run_em(model, start, s.tol, s.max_iters)?;
            Ok(())
        }
        MethodConfig::WeiTanner(c) => run_wei_tanner_into(model, start, c, sampler, key, traj),
        MethodConfig::ChanLedolter(c) => run_chan_ledolter_into(model, start, c, sampler, key, traj),
        MethodConfig::BoothHobert(c) => run_booth_hobert_into(model, start, c, sampler, key, traj),
        MethodConfig::Caffo(c) => run_caffo_into(model, start, c, sampler, key, traj),
        MethodConfig::SaemGuKong(c) => run_saem_into(model, start, SaemVariant::GuKong, c, sampler, key, traj),
        MethodConfig::SaemDelyon(c) => run_saem_into(model, start, SaemVariant::Delyon, c, sampler, key, traj),
        MethodConfig::Mcml(s) => {
            let mut reference = match s.reference {
                Some(v) => start.with_values(v.to_vec()),
                None => start.clone(),
            };
            for r in 0..=s.reruns {
                let surface = mcml_surface(model, &reference, s.mc_size, sampler, key.child(r as u64))?;
                traj.total_draws += s.mc_size as u64;
                let estimate = mcml_maximize(&surface, &reference)?;
                traj.push(TrajectoryRecord::new(0, estimate.clone()).with_mc_size(s.mc_size));
                reference = estimate;
            }
            traj.terminated = mcem::TerminationReason::Converged;
            Ok(())
        }
    }
}

fn run_one<M>(
    model: &M,
    method: &MethodConfig,
    sampler: &CliSampler,
    start: &Theta,
    seed: u64,
    inference_size: Option<usize>,
) -> RunOutcome
where
    M: ExactConditional,
    CliSampler: SamplerPolicy<M>,
{
    let clock = Instant::now();
    let mut trajectory = Trajectory::new();
    let key = StreamKey::new(seed);
    let error = run_method(model, method, sampler, start, key, &mut trajectory).err();
    let inference = match (inference_size, trajectory.last_theta(), &error) {
        (Some(m), Some(theta), None) => Some(
            sampler
                .draw(model, theta, m, key.named("inference"))
                .and_then(|s| louis_information(model, theta, &s, true))
                .map_err(|e| e.to_string()),
        ),
        _ => None,
    };
    RunOutcome {
        method: method.label().to_string(),
        seed,
        trajectory,
        error,
        inference,
        wall_seconds: clock.elapsed().as_secs_f64(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub method: String,
    pub model: String,
    pub seed: u64,
    pub final_theta: Option<Vec<f64>>,
    pub terminated: String,
    pub error: Option<String>,
    pub total_draws: u64,
    pub iterations: usize,
    pub oracle: Vec<f64>,
    pub oracle_distance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub inference: Option<InferenceReport>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub inference_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub config_sha256: String,
    pub seed: u64,
    pub method: String,
    pub mcem_version: String,
    pub cli_version: String,
}

/// Results of one invocation.
pub struct Report {
    pub outcomes: Vec<RunOutcome>,
    pub summaries: Vec<RunSummary>,
    pub table: RunTable,
    pub files: Vec<PathBuf>,
}

impl Report {
    pub fn first_error(&self) -> Option<(&RunOutcome, &mcem::Error)> {
        self.outcomes.iter().find_map(|o| o.error.as_ref().map(|e| (o, e)))
    }
}

/// Hex SHA-256 of the canonical (re-serialized) config. The output directory
/// is left out: it does not affect any result.
pub fn config_hash(cfg: &Config) -> String {
    let mut canonical = cfg.clone();
    canonical.output.dir = PathBuf::new();
    let bytes = serde_json::to_vec(&canonical).expect("config serializes");
    Sha256::digest(&bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Worker count from `MCEM_WORKERS`, defaulting to the available parallelism.
pub fn workers_from_env() -> Result<usize, CliError> {
    match std::env::var("MCEM_WORKERS") {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(n),
            _ => Err(CliError::config("MCEM_WORKERS", format!("expected a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

#[cfg(feature = "parallel")]
fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> T {
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

#[cfg(not(feature = "parallel"))]
fn with_workers<T: Send>(_workers: usize, f: impl FnOnce() -> T + Send) -> T {
    f()
}

/// Validates `cfg`, runs every (method, seed) pair on `workers` threads and
/// writes the output files. Rows are assembled in config and seed order, so
/// the files do not depend on scheduling. Engine failures are recorded in the
/// report; the partial trajectory is still written.
pub fn execute(command: Command, cfg: &Config, workers: usize) -> Result<Report, CliError> {
    cfg.validate()?;
    if command == Command::Run && cfg.method.is_none() {
        return Err(CliError::config("method", "`run` needs a single `method`; use `compare` for `methods`"));
    }
    let (model, start) = LoadedModel::from_config(&cfg.model)?;
    let proposal = match &cfg.sampler {
        SamplerConfig::Importance { proposal: Some(v), .. } => checked(start.with_values(v.to_vec()))
            .map_err(|_| CliError::config("sampler.proposal", "proposal parameter violates its constraint"))?,
        _ => start.clone(),
    };
    let sampler = CliSampler { cfg: cfg.sampler.clone(), proposal };
    let methods = cfg.method_list();
    let seeds = cfg.seeds.list();
    let jobs: Vec<(usize, u64)> = (0..methods.len()).flat_map(|i| seeds.iter().map(move |&s| (i, s))).collect();
    let inference = cfg.output.inference.then_some(cfg.output.inference_mc_size);
    let outcomes = with_workers(workers, || {
        map_indexed(ExecMode::Parallel, jobs.len(), |j| {
            let (i, seed) = jobs[j];
            match &model {
                LoadedModel::Blood(m) => run_one(m, &methods[i], &sampler, &start, seed, inference),
                LoadedModel::Censored(m) => run_one(m, &methods[i], &sampler, &start, seed, inference),
            }
        })
    });
    let oracle = model.oracle(&start).map_err(|e| CliError::Engine { run: "oracle".into(), source: e })?;
    write_outputs(command, cfg, &model, &oracle, outcomes)
}

fn summarize(model: &LoadedModel, oracle: &Theta, o: &RunOutcome) -> RunSummary {
    let last = o.trajectory.last_theta();
    let (inference, inference_error) = match &o.inference {
        Some(Ok(r)) => (Some(r.clone()), None),
        Some(Err(e)) => (None, Some(e.clone())),
        None => (None, None),
    };
    RunSummary {
        method: o.method.clone(),
        model: model.name().into(),
        seed: o.seed,
        final_theta: last.map(|t| t.values.clone()),
        terminated: if o.error.is_some() { "error".into() } else { o.trajectory.terminated.as_str().into() },
        error: o.error.as_ref().map(|e| e.to_string()),
        total_draws: o.trajectory.total_draws,
        iterations: o.trajectory.len(),
        oracle: oracle.values.clone(),
        oracle_distance: last.map(|t| t.max_abs_diff(oracle)),
        inference,
        inference_error,
    }
}

fn write_file(path: &Path, contents: &str, files: &mut Vec<PathBuf>) -> Result<(), CliError> {
    fs::write(path, contents)?;
    files.push(path.to_path_buf());
    Ok(())
}

fn write_outputs(
    command: Command,
    cfg: &Config,
    model: &LoadedModel,
    oracle: &Theta,
    outcomes: Vec<RunOutcome>,
) -> Result<Report, CliError> {
    let dir = &cfg.output.dir;
    fs::create_dir_all(dir)?;
    let hash = config_hash(cfg);
    let params = model.params();
    let mut files = Vec::new();
    let mut summaries = Vec::new();
    let mut rows = Vec::new();
    let mut timings = String::from("method,seed,wall_seconds\n");
    for o in &outcomes {
        let stem = format!("{}-seed{}", o.method, o.seed);
        write_file(
            &dir.join(format!("{stem}.trajectory.csv")),
            &write_trajectory(&o.trajectory.records, params),
            &mut files,
        )?;
        let summary = summarize(model, oracle, o);
        write_file(&dir.join(format!("{stem}.summary.json")), &to_json(&summary), &mut files)?;
        let meta = RunMetadata {
            config_sha256: hash.clone(),
            seed: o.seed,
            method: o.method.clone(),
            mcem_version: mcem::VERSION.into(),
            cli_version: env!("CARGO_PKG_VERSION").into(),
        };
        write_file(&dir.join(format!("{stem}.meta.json")), &to_json(&meta), &mut files)?;
        if let (Some(theta), Some(d)) = (&summary.final_theta, summary.oracle_distance) {
            rows.push(RunRow {
                method: o.method.clone(),
                seed: o.seed,
                theta: theta.clone(),
                oracle_distance: d,
                total_draws: summary.total_draws,
                iterations: summary.iterations,
                terminated: summary.terminated.clone(),
            });
        }
        timings.push_str(&format!("{},{},{}\n", o.method, o.seed, fmt_f64(o.wall_seconds)));
        summaries.push(summary);
    }
    let table = RunTable::from_rows(rows);
    let table_name = match command {
        Command::Run => format!("{}.replicates.csv", outcomes.first().map_or("run", |o| o.method.as_str())),
        Command::Compare => "compare.csv".to_string(),
    };
    write_file(&dir.join(table_name), &table.write(params), &mut files)?;
    // Wall times vary between runs, so they live apart from the reproducible outputs.
    write_file(&dir.join("timings.csv"), &timings, &mut files)?;
    Ok(Report { outcomes, summaries, table, files })
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("output types serialize");
    s.push('\n');
    s
}
