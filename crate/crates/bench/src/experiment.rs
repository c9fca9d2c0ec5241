//! Experiment descriptions and the Monte Carlo runner.
//!
//! ```toml
//! scenario = "occlusion.toml"    # path (relative to this file) or an inline [scenario] table
//! filters = ["smc", "npf", "ipf", "raw"]
//! runs = 10
//! seed = 0                       # run r simulates and tracks with seed + r
//! output = "out"                 # relative to this file
//! workers = 0                    # 0 = one per core
//! record_timing = true           # false writes seconds_per_frame = 0
//! identity_gate = 10.0
//!
//! [ospa]
//! cutoff = 20.0
//! order = 1.0
//!
//! [filter]                       # detection_probability, clutter_intensity and
//! particles_per_target = 50      # measurement_noise default to the scenario's values
//!
//! [flow]
//! n_lambda_steps = 20
//! ```

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use nalgebra::{Matrix2, Matrix4};
use phd_core::ident::LabelSwitchCounter;
use phd_core::metrics::ospa;
use phd_core::sim::simulate;
use phd_core::{
    FilterConfig, FlowConfig, FlowKind, NoiseModel, OspaParams, ScenarioConfig, TargetState,
    TrackEstimate, Tracker, TrackerConfig,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use toml::Spanned;

use crate::error::{from_toml, key_line, line_of, section, BenchError, ConfigError};
use crate::scenario::{is_psd4, is_spd2, parse_scenario_file, ScenarioFile};

pub const DEFAULT_RUNS: usize = 10;
pub const DEFAULT_OUTPUT: &str = "out";

/// A tracker variant under test.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKind {
    Smc,
    Npf,
    Ipf,
    /// Measurements scored directly as estimates.
    Raw,
}

impl FilterKind {
    pub const ALL: [FilterKind; 4] = [FilterKind::Smc, FilterKind::Npf, FilterKind::Ipf, FilterKind::Raw];

    pub fn flow(self) -> Option<FlowKind> {
        match self {
            FilterKind::Smc => Some(FlowKind::None),
            FilterKind::Npf => Some(FlowKind::Npf),
            FilterKind::Ipf => Some(FlowKind::Ipf),
            FilterKind::Raw => None,
        }
    }
}

impl fmt::Display for FilterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FilterKind::Smc => "smc",
            FilterKind::Npf => "npf",
            FilterKind::Ipf => "ipf",
            FilterKind::Raw => "raw",
        })
    }
}

impl FromStr for FilterKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        FilterKind::ALL
            .into_iter()
            .find(|k| k.to_string() == s.to_ascii_lowercase())
            .ok_or_else(|| format!("unknown filter `{s}` (expected smc, npf, ipf or raw)"))
    }
}

/// Filter settings; unset model terms follow the scenario.
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterSettings {
    pub survival_probability: Option<f64>,
    pub detection_probability: Option<f64>,
    pub clutter_intensity: Option<f64>,
    pub birth_weight: Option<f64>,
    pub births_per_measurement: Option<usize>,
    pub particles_per_target: Option<usize>,
    pub ess_fraction: Option<f64>,
    pub max_targets: Option<usize>,
    pub covariance_jitter: Option<f64>,
    pub birth_spread: Option<[[f64; 2]; 2]>,
    pub measurement_noise: Option<[[f64; 2]; 2]>,
    pub process_noise: Option<[[f64; 4]; 4]>,
}

impl FilterSettings {
    /// The filter configuration for `scenario`.
    pub fn resolve(&self, scenario: &ScenarioConfig) -> FilterConfig {
        let d = FilterConfig::default();
        let r = self
            .measurement_noise
            .map_or(scenario.measurement_noise, |m| Matrix2::from_fn(|i, j| m[i][j]));
        FilterConfig {
            survival_probability: self.survival_probability.unwrap_or(d.survival_probability),
            detection_probability: self
                .detection_probability
                .unwrap_or(scenario.detection_probability),
            clutter_intensity: self.clutter_intensity.unwrap_or(scenario.clutter_intensity()),
            birth_weight: self.birth_weight.unwrap_or(d.birth_weight),
            births_per_measurement: self.births_per_measurement.unwrap_or(d.births_per_measurement),
            particles_per_target: self.particles_per_target.unwrap_or(d.particles_per_target),
            ess_fraction: self.ess_fraction.unwrap_or(d.ess_fraction),
            max_targets: self.max_targets.unwrap_or(d.max_targets),
            covariance_jitter: self.covariance_jitter.unwrap_or(d.covariance_jitter),
            birth_spread: self.birth_spread.map_or(r, |m| Matrix2::from_fn(|i, j| m[i][j])),
            noise: NoiseModel {
                process_noise_cov: self.process_noise.map_or(d.noise.process_noise_cov, |m| {
                    Matrix4::from_fn(|i, j| m[i][j])
                }),
                measurement_noise_cov: r,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ScenarioSource {
    Inline(ScenarioConfig),
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub scenario: ScenarioSource,
    pub filters: Vec<FilterKind>,
    pub runs: usize,
    /// Run `r` uses seed `seed + r` for both the simulator and the tracker.
    pub seed: u64,
    pub output: PathBuf,
    /// Worker threads; 0 means one per core.
    pub workers: usize,
    /// When false, `seconds_per_frame` is written as 0 so every output is seed-determined.
    pub record_timing: bool,
    pub identity_gate: f64,
    pub ospa: OspaParams,
    pub filter: FilterSettings,
    pub flow: FlowConfig,
}

impl ExperimentSpec {
    pub fn new(scenario: ScenarioSource) -> Self {
        Self {
            scenario,
            filters: FilterKind::ALL.to_vec(),
            runs: DEFAULT_RUNS,
            seed: 0,
            output: PathBuf::from(DEFAULT_OUTPUT),
            workers: 0,
            record_timing: true,
            identity_gate: TrackerConfig::default().identity_gate,
            ospa: OspaParams::default(),
            filter: FilterSettings::default(),
            flow: FlowConfig::default(),
        }
    }

    pub fn load_scenario(&self) -> Result<ScenarioConfig, ConfigError> {
        match &self.scenario {
            ScenarioSource::Inline(s) => Ok(s.clone()),
            ScenarioSource::File(p) => parse_scenario_file(p),
        }
    }

    /// The scenario of run `run`.
    pub fn run_scenario(&self, base: &ScenarioConfig, run: usize) -> ScenarioConfig {
        ScenarioConfig {
            seed: self.seed.wrapping_add(run as u64),
            ..base.clone()
        }
    }

    pub fn tracker_config(&self, scenario: &ScenarioConfig, flow_kind: FlowKind, run: usize) -> TrackerConfig {
        TrackerConfig {
            filter: self.filter.resolve(scenario),
            flow_kind,
            flow: self.flow.clone(),
            dt: scenario.dt,
            identity_gate: self.identity_gate,
            seed: self.seed.wrapping_add(run as u64),
        }
    }

    /// Checks everything that can be checked without running.
    pub fn validate(&self) -> Result<ScenarioConfig, ConfigError> {
        let bad = |m: String| Err(ConfigError::new(None, m));
        if self.runs == 0 {
            return bad("runs must be >= 1".into());
        }
        if self.filters.is_empty() {
            return bad("at least one filter must be selected".into());
        }
        let scenario = self.load_scenario()?;
        self.ospa.validate().map_err(|e| ConfigError::new(None, format!("ospa: {e}")))?;
        if let Some(r) = self.filter.measurement_noise {
            if !is_spd2(&Matrix2::from_fn(|i, j| r[i][j])) {
                return bad("filter.measurement_noise must be symmetric positive definite".into());
            }
        }
        if let Some(q) = self.filter.process_noise {
            if !is_psd4(&Matrix4::from_fn(|i, j| q[i][j])) {
                return bad("filter.process_noise must be symmetric positive semi-definite".into());
            }
        }
        self.tracker_config(&scenario, FlowKind::None, 0)
            .validate()
            .map_err(|e| ConfigError::new(None, e.to_string()))?;
        Ok(scenario)
    }
}

/// One row of a trajectory file.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub frame: usize,
    pub track_id: u32,
    pub azimuth: f64,
    pub elevation: f64,
    pub azimuth_rate: f64,
    pub elevation_rate: f64,
    pub weight: f64,
    pub coasting: bool,
}

impl TrajectoryRow {
    pub fn from_track(frame: usize, t: &TrackEstimate) -> Self {
        Self::from_state(frame, t.id, &t.state, t.weight, t.coasting)
    }

    pub fn from_state(frame: usize, track_id: u32, s: &TargetState, weight: f64, coasting: bool) -> Self {
        Self {
            frame,
            track_id,
            azimuth: s.azimuth,
            elevation: s.elevation,
            azimuth_rate: s.azimuth_rate,
            elevation_rate: s.elevation_rate,
            weight,
            coasting,
        }
    }

    pub fn state(&self) -> TargetState {
        TargetState::new(self.azimuth, self.elevation, self.azimuth_rate, self.elevation_rate)
    }
}

/// One row of the score table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub filter: FilterKind,
    pub run: usize,
    pub mean_ospa: f64,
    /// Spread of the per-frame OSPA within the run.
    pub std_ospa: f64,
    pub label_switches: usize,
    pub seconds_per_frame: f64,
}

/// Everything one (filter, run) job produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub score: ScoreRow,
    pub frame_ospa: Vec<f64>,
    pub trajectory: Vec<TrajectoryRow>,
    /// Weight sum Σω of every frame; empty for the raw baseline.
    pub counts: Vec<f64>,
    /// True target count of every frame.
    pub true_counts: Vec<usize>,
}

/// Aggregate over the runs of one filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub filter: FilterKind,
    pub runs: usize,
    pub mean_ospa: f64,
    /// Sample standard deviation of the per-run means.
    pub std_ospa: f64,
    pub mean_label_switches: f64,
    pub seconds_per_frame: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult {
    pub scenario: ScenarioConfig,
    /// Ordered by filter (as listed in the spec), then run.
    pub runs: Vec<RunResult>,
}

impl ExperimentResult {
    pub fn scores(&self, filter: FilterKind) -> Vec<&ScoreRow> {
        self.runs.iter().map(|r| &r.score).filter(|s| s.filter == filter).collect()
    }

    pub fn summary(&self) -> Vec<SummaryRow> {
        let mut filters: Vec<FilterKind> = Vec::new();
        for r in &self.runs {
            if !filters.contains(&r.score.filter) {
                filters.push(r.score.filter);
            }
        }
        filters
            .into_iter()
            .map(|f| {
                let s = self.scores(f);
                let n = s.len() as f64;
                let mean = s.iter().map(|r| r.mean_ospa).sum::<f64>() / n;
                let var = if s.len() > 1 {
                    s.iter().map(|r| (r.mean_ospa - mean).powi(2)).sum::<f64>() / (n - 1.0)
                } else {
                    0.0
                };
                SummaryRow {
                    filter: f,
                    runs: s.len(),
                    mean_ospa: mean,
                    std_ospa: var.sqrt(),
                    mean_label_switches: s.iter().map(|r| r.label_switches as f64).sum::<f64>() / n,
                    seconds_per_frame: s.iter().map(|r| r.seconds_per_frame).sum::<f64>() / n,
                }
            })
            .collect()
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Simulates and tracks one run of one filter.
pub fn run_one(
    spec: &ExperimentSpec,
    base: &ScenarioConfig,
    filter: FilterKind,
    run: usize,
) -> Result<RunResult, BenchError> {
    let scenario = spec.run_scenario(base, run);
    let numerical = |source| BenchError::Numerical {
        filter: filter.to_string(),
        run,
        source,
    };
    let records = simulate(&scenario).map_err(numerical)?;
    let truth: Vec<Vec<TargetState>> = records
        .iter()
        .map(|r| r.truth.iter().map(|(_, s)| *s).collect())
        .collect();

    let mut trajectory = Vec::new();
    let mut frame_ospa = Vec::with_capacity(records.len());
    let mut switches = LabelSwitchCounter::new();
    let mut counts = Vec::new();
    let started = Instant::now();
    match filter.flow() {
        None => {
            for (rec, t) in records.iter().zip(&truth) {
                let est: Vec<TargetState> = rec
                    .measurements
                    .iter()
                    .map(|z| TargetState::new(z.azimuth, z.elevation, 0.0, 0.0))
                    .collect();
                frame_ospa.push(ospa(&est, t, &spec.ospa));
                trajectory.extend(est.iter().map(|s| TrajectoryRow::from_state(rec.frame, 0, s, 1.0, false)));
            }
        }
        Some(kind) => {
            let mut tracker = Tracker::new(spec.tracker_config(&scenario, kind, run)).map_err(numerical)?;
            for (rec, t) in records.iter().zip(&truth) {
                let out = tracker.step(&rec.measurements).map_err(numerical)?;
                counts.push(out.count);
                let est: Vec<TargetState> = out.tracks.iter().map(|k| k.state).collect();
                frame_ospa.push(ospa(&est, t, &spec.ospa));
                switches.observe(&rec.truth, &out.tracks, spec.ospa.cutoff);
                trajectory.extend(out.tracks.iter().map(|k| TrajectoryRow::from_track(rec.frame, k)));
            }
        }
    }
    let elapsed = started.elapsed().as_secs_f64();
    let (mean_ospa, std_ospa) = mean_std(&frame_ospa);
    Ok(RunResult {
        score: ScoreRow {
            filter,
            run,
            mean_ospa,
            std_ospa,
            label_switches: switches.switches(),
            seconds_per_frame: if spec.record_timing {
                elapsed / records.len() as f64
            } else {
                0.0
            },
        },
        frame_ospa,
        trajectory,
        counts,
        true_counts: truth.iter().map(Vec::len).collect(),
    })
}

/// Runs every (filter, run) job; the first failure aborts the result.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult, BenchError> {
    let scenario = spec.validate()?;
    let jobs: Vec<(FilterKind, usize)> = spec
        .filters
        .iter()
        .flat_map(|&f| (0..spec.runs).map(move |r| (f, r)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(spec.workers)
        .build()
        .map_err(|e| BenchError::io("worker pool", std::io::Error::other(e)))?;
    let runs = pool.install(|| {
        jobs.par_iter()
            .map(|&(f, r)| run_one(spec, &scenario, f, r))
            .collect::<Result<Vec<_>, _>>()
    })?;
    Ok(ExperimentResult { scenario, runs })
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentFile<S> {
    scenario: Spanned<S>,
    #[serde(default = "all_filters")]
    filters: Vec<FilterKind>,
    #[serde(default = "default_runs")]
    runs: usize,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_output")]
    output: PathBuf,
    #[serde(default)]
    workers: usize,
    #[serde(default = "yes")]
    record_timing: bool,
    #[serde(default = "default_gate")]
    identity_gate: f64,
    #[serde(default)]
    ospa: OspaSection,
    #[serde(default)]
    filter: FilterSettings,
    #[serde(default)]
    flow: FlowSection,
}

fn all_filters() -> Vec<FilterKind> {
    FilterKind::ALL.to_vec()
}
fn default_runs() -> usize {
    DEFAULT_RUNS
}
fn default_output() -> PathBuf {
    PathBuf::from(DEFAULT_OUTPUT)
}
fn yes() -> bool {
    true
}
fn default_gate() -> f64 {
    TrackerConfig::default().identity_gate
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct OspaSection {
    cutoff: f64,
    order: f64,
}

impl Default for OspaSection {
    fn default() -> Self {
        let d = OspaParams::default();
        Self {
            cutoff: d.cutoff,
            order: d.order,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct FlowSection {
    n_lambda_steps: usize,
    diffusion: f64,
    sensor_resolution: f64,
    jitter: f64,
}

impl Default for FlowSection {
    fn default() -> Self {
        let d = FlowConfig::default();
        Self {
            n_lambda_steps: d.n_lambda_steps,
            diffusion: d.diffusion,
            sensor_resolution: d.sensor_resolution,
            jitter: d.jitter,
        }
    }
}

impl<S> ExperimentFile<S> {
    fn into_spec(self, scenario: ScenarioSource, base: &Path) -> ExperimentSpec {
        ExperimentSpec {
            scenario,
            filters: self.filters,
            runs: self.runs,
            seed: self.seed,
            output: base.join(self.output),
            workers: self.workers,
            record_timing: self.record_timing,
            identity_gate: self.identity_gate,
            ospa: OspaParams {
                cutoff: self.ospa.cutoff,
                order: self.ospa.order,
            },
            filter: self.filter,
            flow: FlowConfig {
                n_lambda_steps: self.flow.n_lambda_steps,
                diffusion: self.flow.diffusion,
                sensor_resolution: self.flow.sensor_resolution,
                jitter: self.flow.jitter,
            },
        }
    }
}

/// Parses an experiment file body; relative paths resolve against `base`.
pub fn parse_experiment(text: &str, base: &Path) -> Result<ExperimentSpec, ConfigError> {
    let toml_err = |e: toml::de::Error| from_toml(text, &e);
    let table: toml::Table = toml::from_str(text).map_err(toml_err)?;
    let spec = match table.get("scenario") {
        Some(toml::Value::Table(_)) => {
            let file: ExperimentFile<ScenarioFile> = toml::from_str(text).map_err(toml_err)?;
            let start = file.scenario.span().start;
            let scenario = file.scenario.get_ref().to_config(text, section(text, start))?;
            file.into_spec(ScenarioSource::Inline(scenario), base)
        }
        _ => {
            let file: ExperimentFile<PathBuf> = toml::from_str(text).map_err(toml_err)?;
            let path = base.join(file.scenario.get_ref());
            file.into_spec(ScenarioSource::File(path), base)
        }
    };
    let at = |key: &str, m: String| ConfigError::new(key_line(text, 0..text.len(), key), m);
    if spec.runs == 0 {
        return Err(at("runs", "runs must be >= 1".into()));
    }
    if spec.filters.is_empty() {
        return Err(at("filters", "at least one filter must be selected".into()));
    }
    if let Err(e) = spec.ospa.validate() {
        let key = if e.to_string().contains("cutoff") { "cutoff" } else { "order" };
        return Err(at(key, format!("ospa: {e}")));
    }
    if let Err(e) = spec.flow.validate() {
        return Err(ConfigError::new(section_line(text, "[flow]"), format!("flow: {e}")));
    }
    if !(spec.identity_gate > 0.0) {
        return Err(at("identity_gate", "identity_gate must be > 0".into()));
    }
    Ok(spec)
}

fn section_line(text: &str, header: &str) -> Option<usize> {
    text.find(header).map(|i| line_of(text, i))
}

pub fn parse_experiment_file(path: &Path) -> Result<ExperimentSpec, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::new(None, format!("cannot read: {e}")).in_file(path))?;
    let base = path.parent().unwrap_or(Path::new("."));
    parse_experiment(&text, base).map_err(|e| e.in_file(path))
}
