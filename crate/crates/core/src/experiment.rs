//! Experiment orchestration: simulate run populations, judge them, score
//! them, and compare every variant against a reference population.
//!
//! The pipeline is staged over a fixed on-disk layout so the CLI
//! subcommands and the one-shot [`run_experiment`] share one code path:
//!
//! ```text
//! <output_dir>/
//!   runs/<population>/<scenario>/run_<k>.jsonl    sensor + ground-truth logs
//!   estimates/<population>/<scenario>/run_<k>.json  judge velocity output
//!   scores/<population>.json                       per-run (RMSE, entropy) scores
//!   vepd.json, report.json, table_vepd.csv,
//!   hist_rmse.csv, hist_entropy.csv                comparison artifacts
//! ```
//!
//! The `reference` population stands in for reality: it is generated by a
//! designated variant with seeds disjoint from every candidate population
//! (and optionally a different speed profile, for robustness studies).
//!
//! Per-run seeds are `sha256("vepd-seed-v1|master|population|variant|scenario|k")`
//! truncated to 64 bits, so adding scenarios or variants never changes the
//! streams of existing runs, and identical configs replay identically.

use crate::dataset::{load_run, save_run, DatasetError, RunLog, RunLogMeta, SCHEMA_VERSION};
use crate::estimator::{run_estimator, EkfConfig, EstimatorError};
use crate::geodesy::GeodesyError;
use crate::metrics::{
    histogram, vepd, Histogram, MetricsError, RunPopulation, RunScore, VepdReport,
};
use crate::sensors::{SensorError, SensorParams, SensorRig, SensorVariant};
use crate::timeseries::{speed_magnitude, AlignedPair, TimeSeries, TimeSeriesError};
use crate::vehicle::{generate_trajectory, Scenario, ScenarioError, SpeedProfile};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config error at {path}: {reason}")]
    Config { path: String, reason: String },
    #[error("missing artifact {path}: {hint}")]
    MissingArtifact { path: PathBuf, hint: &'static str },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("worker pool: {0}")]
    ThreadPool(String),
}

/// Per-run score computation settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricsConfig {
    /// Seconds discarded from the start of the overlap window before
    /// scoring, to drop estimator convergence transients.
    pub warmup_s: f64,
    /// Bin count for the report histograms.
    pub hist_bins: usize,
}

impl Default for MetricsConfig {
    fn default() -> Self {
        Self {
            warmup_s: 2.0,
            hist_bins: 10,
        }
    }
}

/// The pseudo-real population definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReferenceConfig {
    pub variant: SensorVariant,
    /// Override the scenario speed profile for reference runs only
    /// (emulates environment-induced dynamics differences).
    pub speed_profile: Option<SpeedProfile>,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self {
            variant: SensorVariant::ChRwAirSim,
            speed_profile: None,
        }
    }
}

pub const REFERENCE_POPULATION: &str = "reference";

/// Full experiment definition. Serializable as the JSON config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub master_seed: u64,
    /// K: runs per (population, scenario).
    pub runs_per_scenario: usize,
    /// Worker threads for run execution; 0 uses all cores.
    pub workers: usize,
    pub output_dir: PathBuf,
    pub reference: ReferenceConfig,
    pub scenarios: Vec<Scenario>,
    pub variants: Vec<SensorVariant>,
    pub sensors: SensorParams,
    pub ekf: EkfConfig,
    pub metrics: MetricsConfig,
    /// Rate at which ground truth is persisted in run logs (must divide the
    /// scenario sim rate evenly).
    pub ground_truth_log_rate_hz: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let base = |name: &str, path| Scenario {
            name: name.into(),
            path,
            duration_s: 12.0,
            target_speed_mps: 2.0,
            speed_profile: SpeedProfile::Constant,
            origin: crate::geodesy::GeoPoint {
                lat_deg: 40.0,
                lon_deg: -105.0,
                alt_m: 0.0,
            },
            sim_rate_hz: 500.0,
        };
        Self {
            master_seed: 7,
            runs_per_scenario: 10,
            workers: 0,
            output_dir: PathBuf::from("out"),
            reference: ReferenceConfig::default(),
            scenarios: vec![
                base("line", crate::vehicle::PathKind::Line),
                base("circle", crate::vehicle::PathKind::Circle { radius_m: 5.0 }),
                base(
                    "half_sine",
                    crate::vehicle::PathKind::HalfSine {
                        amplitude_m: 2.0,
                        wavelength_m: 20.0,
                    },
                ),
            ],
            variants: SensorVariant::ALL.to_vec(),
            sensors: SensorParams::default(),
            ekf: EkfConfig::default(),
            metrics: MetricsConfig::default(),
            ground_truth_log_rate_hz: 100.0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let config_err = |path: String, reason: String| ExperimentError::Config { path, reason };
        if self.runs_per_scenario == 0 {
            return Err(config_err(
                "runs_per_scenario".into(),
                "must be >= 1".into(),
            ));
        }
        if self.scenarios.is_empty() {
            return Err(config_err("scenarios".into(), "need at least one".into()));
        }
        if self.variants.is_empty() {
            return Err(config_err("variants".into(), "need at least one".into()));
        }
        let mut names = std::collections::BTreeSet::new();
        for (i, sc) in self.scenarios.iter().enumerate() {
            sc.validate()
                .map_err(|e| config_err(format!("scenarios[{i}]"), e.to_string()))?;
            if sc.name.is_empty() || !names.insert(sc.name.clone()) {
                return Err(config_err(
                    format!("scenarios[{i}].name"),
                    format!("names must be unique and non-empty, got '{}'", sc.name),
                ));
            }
            let stride = sc.sim_rate_hz / self.ground_truth_log_rate_hz;
            if (stride - stride.round()).abs() > 1e-9 || stride < 1.0 {
                return Err(config_err(
                    "ground_truth_log_rate_hz".into(),
                    format!(
                        "must divide scenarios[{i}].sim_rate_hz ({}) evenly",
                        sc.sim_rate_hz
                    ),
                ));
            }
        }
        self.sensors
            .validate()
            .map_err(|e| config_err("sensors".into(), e.to_string()))?;
        self.ekf
            .validate()
            .map_err(|e| config_err("ekf".into(), e.to_string()))?;
        let warmup_ok = self.metrics.warmup_s.is_finite() && self.metrics.warmup_s >= 0.0;
        if !warmup_ok {
            return Err(config_err(
                "metrics.warmup_s".into(),
                "must be >= 0".into(),
            ));
        }
        if self.metrics.hist_bins == 0 {
            return Err(config_err("metrics.hist_bins".into(), "must be >= 1".into()));
        }
        Ok(())
    }

    /// All populations in report order: reference first, then candidates.
    pub fn populations(&self) -> Vec<String> {
        std::iter::once(REFERENCE_POPULATION.to_string())
            .chain(self.variants.iter().map(|v| v.slug().to_string()))
            .collect()
    }

    fn run_path(&self, population: &str, scenario: &str, k: usize) -> PathBuf {
        self.output_dir
            .join("runs")
            .join(population)
            .join(scenario)
            .join(format!("run_{k:03}.jsonl"))
    }

    fn estimate_path(&self, population: &str, scenario: &str, k: usize) -> PathBuf {
        self.output_dir
            .join("estimates")
            .join(population)
            .join(scenario)
            .join(format!("run_{k:03}.json"))
    }

    fn scores_path(&self, population: &str) -> PathBuf {
        self.output_dir
            .join("scores")
            .join(format!("{population}.json"))
    }
}

/// Deterministic per-run seed.
pub fn derive_run_seed(
    master_seed: u64,
    population: &str,
    variant: SensorVariant,
    scenario: &str,
    k: usize,
) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(
        format!(
            "vepd-seed-v1|{master_seed}|{population}|{}|{scenario}|{k}",
            variant.slug()
        )
        .as_bytes(),
    );
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("sha256 yields 32 bytes"))
}

#[derive(Debug, Clone)]
struct RunSpec {
    population: String,
    variant: SensorVariant,
    scenario_idx: usize,
    k: usize,
    seed: u64,
    profile_override: Option<SpeedProfile>,
}

fn enumerate_runs(cfg: &ExperimentConfig) -> Vec<RunSpec> {
    let mut specs = Vec::new();
    for (scenario_idx, sc) in cfg.scenarios.iter().enumerate() {
        for k in 0..cfg.runs_per_scenario {
            specs.push(RunSpec {
                population: REFERENCE_POPULATION.into(),
                variant: cfg.reference.variant,
                scenario_idx,
                k,
                seed: derive_run_seed(
                    cfg.master_seed,
                    REFERENCE_POPULATION,
                    cfg.reference.variant,
                    &sc.name,
                    k,
                ),
                profile_override: cfg.reference.speed_profile,
            });
        }
    }
    for &variant in &cfg.variants {
        for (scenario_idx, sc) in cfg.scenarios.iter().enumerate() {
            for k in 0..cfg.runs_per_scenario {
                specs.push(RunSpec {
                    population: variant.slug().into(),
                    variant,
                    scenario_idx,
                    k,
                    seed: derive_run_seed(cfg.master_seed, variant.slug(), variant, &sc.name, k),
                    profile_override: None,
                });
            }
        }
    }
    specs
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> ExperimentError + '_ {
    move |source| ExperimentError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), ExperimentError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io_err(path))?;
    }
    let file = std::fs::File::create(path).map_err(io_err(path))?;
    let mut writer = std::io::BufWriter::new(file);
    serde_json::to_writer_pretty(&mut writer, value).map_err(|source| ExperimentError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    writer.write_all(b"\n").map_err(io_err(path))?;
    writer.flush().map_err(io_err(path))?;
    Ok(())
}

fn read_json<T: for<'de> Deserialize<'de>>(
    path: &Path,
    hint: &'static str,
) -> Result<T, ExperimentError> {
    let bytes = std::fs::read(path).map_err(|_| ExperimentError::MissingArtifact {
        path: path.to_path_buf(),
        hint,
    })?;
    serde_json::from_slice(&bytes).map_err(|source| ExperimentError::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn with_worker_pool<T: Send>(
    workers: usize,
    job: impl FnOnce() -> T + Send,
) -> Result<T, ExperimentError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| ExperimentError::ThreadPool(e.to_string()))?;
    Ok(pool.install(job))
}

// ---------------------------------------------------------------------------
// Stage 1: simulate
// ---------------------------------------------------------------------------

/// Generate every run in the experiment matrix and persist the run logs.
pub fn stage_simulate(cfg: &ExperimentConfig) -> Result<(), ExperimentError> {
    cfg.validate()?;
    let specs = enumerate_runs(cfg);
    let results: Vec<Result<(), ExperimentError>> = with_worker_pool(cfg.workers, || {
        specs
            .par_iter()
            .map(|spec| {
                let log = simulate_run(cfg, spec)?;
                let sc = &cfg.scenarios[spec.scenario_idx];
                let path = cfg.run_path(&spec.population, &sc.name, spec.k);
                if let Some(parent) = path.parent() {
                    std::fs::create_dir_all(parent).map_err(io_err(&path))?;
                }
                save_run(&log, &path)?;
                Ok(())
            })
            .collect()
    })?;
    results.into_iter().collect()
}

fn simulate_run(cfg: &ExperimentConfig, spec: &RunSpec) -> Result<RunLog, ExperimentError> {
    let mut scenario = cfg.scenarios[spec.scenario_idx].clone();
    if let Some(profile) = spec.profile_override {
        scenario.speed_profile = profile;
    }
    let map_cfg = |e: ScenarioError| ExperimentError::Config {
        path: format!("scenarios[{}]", spec.scenario_idx),
        reason: e.to_string(),
    };
    let traj = generate_trajectory(&scenario).map_err(map_cfg)?;
    let mut rig = SensorRig::new(spec.variant, &cfg.sensors, spec.seed)
        .map_err(|e| ExperimentError::Config {
            path: "sensors".into(),
            reason: e.to_string(),
        })?;
    let streams = rig
        .sample_trajectory(&traj, &scenario.origin)
        .map_err(|e| ExperimentError::Config {
            path: "sensors".into(),
            reason: e.to_string(),
        })?;
    let stride = (scenario.sim_rate_hz / cfg.ground_truth_log_rate_hz).round() as usize;
    Ok(RunLog {
        meta: RunLogMeta {
            schema_version: SCHEMA_VERSION,
            scenario: scenario.name.clone(),
            seed: spec.seed,
            variant: spec.variant.slug().into(),
            gps_rate_hz: rig.gps_rate_hz(),
            imu_rate_hz: rig.imu_rate_hz(),
            origin: scenario.origin,
            surface: match spec.profile_override {
                Some(_) => "perturbed".into(),
                None => "flat".into(),
            },
        },
        gps: streams.gps,
        imu: streams.imu,
        ground_truth: traj.decimate(stride).states().to_vec(),
    })
}

// ---------------------------------------------------------------------------
// Stage 2: estimate
// ---------------------------------------------------------------------------

/// Judge output for one run; failures are recorded, not fatal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateRecord {
    pub seed: u64,
    pub estimate: Option<TimeSeries>,
    pub error: Option<String>,
}

/// Run the judge over every persisted run log and write the velocity
/// estimates next to them.
pub fn stage_estimate(cfg: &ExperimentConfig) -> Result<(), ExperimentError> {
    cfg.validate()?;
    let specs = enumerate_runs(cfg);
    let results: Vec<Result<(), ExperimentError>> = with_worker_pool(cfg.workers, || {
        specs
            .par_iter()
            .map(|spec| {
                let sc = &cfg.scenarios[spec.scenario_idx];
                let run_path = cfg.run_path(&spec.population, &sc.name, spec.k);
                if !run_path.exists() {
                    return Err(ExperimentError::MissingArtifact {
                        path: run_path,
                        hint: "run `simulate` first",
                    });
                }
                let log = load_run(&run_path)?;
                let record = match run_estimator(&log.gps, &log.imu, &cfg.ekf, &log.meta.origin) {
                    Ok(estimate) => EstimateRecord {
                        seed: log.meta.seed,
                        estimate: Some(estimate),
                        error: None,
                    },
                    Err(e) => EstimateRecord {
                        seed: log.meta.seed,
                        estimate: None,
                        error: Some(e.to_string()),
                    },
                };
                write_json(&cfg.estimate_path(&spec.population, &sc.name, spec.k), &record)
            })
            .collect()
    })?;
    results.into_iter().collect()
}

// ---------------------------------------------------------------------------
// Stage 3: per-run scores
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub scenario: String,
    pub k: usize,
    pub seed: u64,
    pub score: Option<RunScore>,
    pub error: Option<String>,
}

/// Wiener entropy with the degenerate case mapped to the tonal limit.
///
/// A constant trace (exactly-constant ground-truth speed) has an empty
/// spectrum once the mean is removed; the literal all-bins reading of the
/// flatness assigns such a signal S = 0, so the pipeline scores it as 0
/// instead of failing the run.
fn entropy_or_tonal_limit(series: &TimeSeries) -> Result<f64, MetricsError> {
    match crate::metrics::wiener_entropy(series) {
        Err(MetricsError::DegenerateSpectrum) => Ok(0.0),
        other => other,
    }
}

/// Score one run: align the estimated speed with ground truth (warm-up
/// cropped), then RMSE and entropy difference.
pub fn score_run(
    estimate: &TimeSeries,
    log: &RunLog,
    metrics_cfg: &MetricsConfig,
) -> Result<RunScore, RunScoreError> {
    let traj = log.trajectory()?;
    let est_speed = speed_magnitude(estimate)?;
    let gt_speed = traj.speed_series();
    let pair = AlignedPair::align(&est_speed, &gt_speed, metrics_cfg.warmup_s)?;
    let rmse = crate::metrics::rmse(&pair);
    let s_est = entropy_or_tonal_limit(pair.estimate())?;
    let s_gt = entropy_or_tonal_limit(pair.ground_truth())?;
    let score = RunScore {
        rmse,
        entropy_diff: (s_est - s_gt).abs(),
    };
    if !score.rmse.is_finite() || !score.entropy_diff.is_finite() {
        return Err(RunScoreError::NonFiniteScore {
            rmse: score.rmse,
            entropy_diff: score.entropy_diff,
        });
    }
    Ok(score)
}

#[derive(Debug, Error)]
pub enum RunScoreError {
    #[error("non-finite run score (rmse {rmse}, entropy_diff {entropy_diff})")]
    NonFiniteScore { rmse: f64, entropy_diff: f64 },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    TimeSeries(#[from] TimeSeriesError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Estimator(#[from] EstimatorError),
    #[error(transparent)]
    Geodesy(#[from] GeodesyError),
    #[error(transparent)]
    Sensor(#[from] SensorError),
}

/// Compute per-run scores for every population from the persisted logs and
/// estimates.
pub fn stage_metrics(cfg: &ExperimentConfig) -> Result<(), ExperimentError> {
    cfg.validate()?;
    for population in cfg.populations() {
        let mut records = Vec::new();
        for sc in &cfg.scenarios {
            for k in 0..cfg.runs_per_scenario {
                let run_path = cfg.run_path(&population, &sc.name, k);
                if !run_path.exists() {
                    return Err(ExperimentError::MissingArtifact {
                        path: run_path,
                        hint: "run `simulate` first",
                    });
                }
                let log = load_run(&run_path)?;
                let est: EstimateRecord = read_json(
                    &cfg.estimate_path(&population, &sc.name, k),
                    "run `estimate` first",
                )?;
                let (score, error) = match est.estimate {
                    Some(series) => match score_run(&series, &log, &cfg.metrics) {
                        Ok(s) => (Some(s), None),
                        Err(e) => (None, Some(e.to_string())),
                    },
                    None => (None, est.error),
                };
                records.push(ScoreRecord {
                    scenario: sc.name.clone(),
                    k,
                    seed: log.meta.seed,
                    score,
                    error,
                });
            }
        }
        write_json(&cfg.scores_path(&population), &records)?;
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Stage 4: population comparisons and report
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantComparison {
    pub variant: String,
    #[serde(flatten)]
    pub report: VepdReport,
    /// 1 = smallest VEPD within the table.
    pub rank: usize,
    /// Number of run pairs actually compared (excluded failures shrink it).
    pub pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioTable {
    pub scenario: String,
    pub rows: Vec<VariantComparison>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationHistogram {
    pub population: String,
    #[serde(flatten)]
    pub histogram: Histogram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VepdTables {
    pub overall: Vec<VariantComparison>,
    pub per_scenario: Vec<ScenarioTable>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub master_seed: u64,
    pub runs_per_scenario: usize,
    pub reference_variant: String,
    pub scenarios: Vec<String>,
    pub variants: Vec<String>,
    pub warmup_s: f64,
    pub tables: VepdTables,
    pub hist_rmse: Vec<PopulationHistogram>,
    pub hist_entropy: Vec<PopulationHistogram>,
    pub scores: Vec<PopulationScores>,
    pub failed_runs: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationScores {
    pub population: String,
    pub records: Vec<ScoreRecord>,
}

fn load_scores(cfg: &ExperimentConfig) -> Result<Vec<PopulationScores>, ExperimentError> {
    cfg.populations()
        .into_iter()
        .map(|population| {
            let records: Vec<ScoreRecord> =
                read_json(&cfg.scores_path(&population), "run `metrics` first")?;
            Ok(PopulationScores {
                population,
                records,
            })
        })
        .collect()
}

/// Paired scores for the (scenario, k) indices where both populations have
/// a successful run; keeps the compared sets equal-sized.
fn matched_scores(
    reference: &[ScoreRecord],
    candidate: &[ScoreRecord],
    scenario: Option<&str>,
) -> (Vec<RunScore>, Vec<RunScore>) {
    let mut reference_scores = Vec::new();
    let mut candidate_scores = Vec::new();
    for (r, c) in reference.iter().zip(candidate) {
        debug_assert_eq!((&r.scenario, r.k), (&c.scenario, c.k));
        if let Some(name) = scenario {
            if r.scenario != name {
                continue;
            }
        }
        if let (Some(rs), Some(cs)) = (r.score, c.score) {
            reference_scores.push(rs);
            candidate_scores.push(cs);
        }
    }
    (reference_scores, candidate_scores)
}

fn compare_table(
    cfg: &ExperimentConfig,
    scores: &[PopulationScores],
    scenario: Option<&str>,
) -> Result<Vec<VariantComparison>, ExperimentError> {
    let reference = &scores[0].records;
    let mut rows = Vec::new();
    for (i, variant) in cfg.variants.iter().enumerate() {
        let candidate = &scores[i + 1].records;
        let (ref_scores, cand_scores) = matched_scores(reference, candidate, scenario);
        if ref_scores.is_empty() {
            return Err(ExperimentError::Config {
                path: format!("variants[{i}]"),
                reason: format!(
                    "no successful run pairs against the reference{}",
                    scenario.map(|s| format!(" in scenario '{s}'")).unwrap_or_default()
                ),
            });
        }
        let pairs = ref_scores.len();
        let real = RunPopulation::new(REFERENCE_POPULATION, ref_scores)?;
        let sim = RunPopulation::new(variant.slug(), cand_scores)?;
        rows.push(VariantComparison {
            variant: variant.slug().into(),
            report: vepd(&real, &sim)?,
            rank: 0,
            pairs,
        });
    }
    // Rank 1 = smallest VEPD; ties broken by listed variant order.
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&a, &b| {
        rows[a]
            .report
            .vepd
            .partial_cmp(&rows[b].report.vepd)
            .expect("finite VEPD")
            .then(a.cmp(&b))
    });
    for (rank, &idx) in order.iter().enumerate() {
        rows[idx].rank = rank + 1;
    }
    Ok(rows)
}

/// Build the VEPD comparison tables from persisted scores and write
/// `vepd.json`.
pub fn stage_vepd(cfg: &ExperimentConfig) -> Result<VepdTables, ExperimentError> {
    cfg.validate()?;
    let scores = load_scores(cfg)?;
    let tables = build_tables(cfg, &scores)?;
    write_json(&cfg.output_dir.join("vepd.json"), &tables)?;
    Ok(tables)
}

fn build_tables(
    cfg: &ExperimentConfig,
    scores: &[PopulationScores],
) -> Result<VepdTables, ExperimentError> {
    let overall = compare_table(cfg, scores, None)?;
    let per_scenario = cfg
        .scenarios
        .iter()
        .map(|sc| {
            Ok(ScenarioTable {
                scenario: sc.name.clone(),
                rows: compare_table(cfg, scores, Some(&sc.name))?,
            })
        })
        .collect::<Result<Vec<_>, ExperimentError>>()?;
    Ok(VepdTables {
        overall,
        per_scenario,
    })
}

fn population_histograms(
    scores: &[PopulationScores],
    bins: usize,
    value: impl Fn(&RunScore) -> f64,
) -> Vec<PopulationHistogram> {
    let all: Vec<f64> = scores
        .iter()
        .flat_map(|p| p.records.iter().filter_map(|r| r.score.as_ref().map(&value)))
        .collect();
    let lo = all.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = all.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let (lo, hi) = if lo.is_finite() { (lo, hi) } else { (0.0, 1.0) };
    scores
        .iter()
        .map(|p| {
            let values: Vec<f64> = p
                .records
                .iter()
                .filter_map(|r| r.score.as_ref().map(&value))
                .collect();
            PopulationHistogram {
                population: p.population.clone(),
                histogram: histogram(&values, lo, hi, bins),
            }
        })
        .collect()
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), ExperimentError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(io_err(path))?;
    }
    let mut writer = csv::Writer::from_path(path).map_err(|e| ExperimentError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    })?;
    let to_io = |e: csv::Error| ExperimentError::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e),
    };
    writer.write_record(header).map_err(to_io)?;
    for row in rows {
        writer.write_record(row).map_err(to_io)?;
    }
    writer.flush().map_err(io_err(path))?;
    Ok(())
}

/// Assemble the final report (JSON + CSV artifacts) from persisted scores.
pub fn stage_report(cfg: &ExperimentConfig) -> Result<ExperimentReport, ExperimentError> {
    cfg.validate()?;
    let scores = load_scores(cfg)?;
    let tables = build_tables(cfg, &scores)?;

    let mut warnings = Vec::new();
    let mut failed_runs = 0usize;
    for p in &scores {
        for r in &p.records {
            if let Some(err) = &r.error {
                failed_runs += 1;
                warnings.push(format!(
                    "run {}/{}/run_{:03} excluded: {err}",
                    p.population, r.scenario, r.k
                ));
            }
        }
    }

    let hist_rmse = population_histograms(&scores, cfg.metrics.hist_bins, |s| s.rmse);
    let hist_entropy = population_histograms(&scores, cfg.metrics.hist_bins, |s| s.entropy_diff);

    let report = ExperimentReport {
        master_seed: cfg.master_seed,
        runs_per_scenario: cfg.runs_per_scenario,
        reference_variant: cfg.reference.variant.slug().into(),
        scenarios: cfg.scenarios.iter().map(|s| s.name.clone()).collect(),
        variants: cfg.variants.iter().map(|v| v.slug().to_string()).collect(),
        warmup_s: cfg.metrics.warmup_s,
        tables,
        hist_rmse,
        hist_entropy,
        scores,
        failed_runs,
        warnings,
    };

    write_json(&cfg.output_dir.join("report.json"), &report)?;

    let mut vepd_rows = Vec::new();
    for row in &report.tables.overall {
        vepd_rows.push(vec![
            "overall".to_string(),
            row.variant.clone(),
            row.report.w1.to_string(),
            row.report.w2.to_string(),
            row.report.vepd.to_string(),
            row.rank.to_string(),
        ]);
    }
    for table in &report.tables.per_scenario {
        for row in &table.rows {
            vepd_rows.push(vec![
                table.scenario.clone(),
                row.variant.clone(),
                row.report.w1.to_string(),
                row.report.w2.to_string(),
                row.report.vepd.to_string(),
                row.rank.to_string(),
            ]);
        }
    }
    write_csv(
        &cfg.output_dir.join("table_vepd.csv"),
        &["scope", "variant", "w1", "w2", "vepd", "rank"],
        &vepd_rows,
    )?;

    for (file, hists) in [
        ("hist_rmse.csv", &report.hist_rmse),
        ("hist_entropy.csv", &report.hist_entropy),
    ] {
        let mut rows = Vec::new();
        for h in hists {
            for (i, &count) in h.histogram.counts.iter().enumerate() {
                rows.push(vec![
                    h.population.clone(),
                    h.histogram.edges[i].to_string(),
                    h.histogram.edges[i + 1].to_string(),
                    count.to_string(),
                ]);
            }
        }
        write_csv(
            &cfg.output_dir.join(file),
            &["population", "bin_lo", "bin_hi", "count"],
            &rows,
        )?;
    }

    Ok(report)
}

/// The whole pipeline: simulate, estimate, score, compare, report.
/// Fully deterministic from the config and master seed.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentReport, ExperimentError> {
    stage_simulate(cfg)?;
    stage_estimate(cfg)?;
    stage_metrics(cfg)?;
    stage_vepd(cfg)?;
    stage_report(cfg)
}
