//! Scenario files: TOML description of a synthetic DOA scenario.
//!
//! ```toml
//! duration_frames = 200          # required
//! dt = 1.0
//! detection_probability = 0.9
//! clutter_rate = 1.0             # mean false alarms per frame
//! measurement_noise = [[4.0, 0.0], [0.0, 4.0]]
//! process_noise = [[0.0, 0.0, 0.0, 0.0], ...]   # 4x4, zero by default
//! seed = 1
//!
//! [[target]]
//! initial = [50.0, 10.0, 0.4, 0.0]   # azimuth, elevation, rates (deg, deg/s); required
//! birth_frame = 0                    # default 0
//! death_frame = 200                  # exclusive; default duration_frames
//! speech = [[0, 80], [95, 200]]      # half-open speaking intervals; default always
//! waypoints = [{ frame = 120, azimuth = 90.0, elevation = 5.0 }]
//! ```

use std::ops::Range;
use std::path::Path;

use nalgebra::{Matrix2, Matrix4};
use phd_core::sim::Waypoint;
use phd_core::{ScenarioConfig, TargetSpec, TargetState};
use serde::{Deserialize, Serialize};
use toml::Spanned;

use crate::error::{from_toml, key_line, line_of, section, ConfigError};

pub const DEFAULT_DT: f64 = 1.0;
pub const DEFAULT_DETECTION_PROBABILITY: f64 = 0.9;
pub const DEFAULT_CLUTTER_RATE: f64 = 1.0;
pub const DEFAULT_MEASUREMENT_VARIANCE: f64 = 4.0;

fn default_dt() -> f64 {
    DEFAULT_DT
}
fn default_pd() -> f64 {
    DEFAULT_DETECTION_PROBABILITY
}
fn default_clutter() -> f64 {
    DEFAULT_CLUTTER_RATE
}
fn default_r() -> [[f64; 2]; 2] {
    [[DEFAULT_MEASUREMENT_VARIANCE, 0.0], [0.0, DEFAULT_MEASUREMENT_VARIANCE]]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub duration_frames: usize,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_pd")]
    pub detection_probability: f64,
    #[serde(default = "default_clutter")]
    pub clutter_rate: f64,
    #[serde(default = "default_r")]
    pub measurement_noise: [[f64; 2]; 2],
    #[serde(default)]
    pub process_noise: [[f64; 4]; 4],
    #[serde(default)]
    pub seed: u64,
    #[serde(default, rename = "target")]
    pub targets: Vec<Spanned<TargetEntry>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetEntry {
    #[serde(default)]
    pub birth_frame: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub death_frame: Option<usize>,
    pub initial: [f64; 4],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub speech: Option<Vec<[usize; 2]>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub waypoints: Vec<WaypointEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WaypointEntry {
    pub frame: usize,
    pub azimuth: f64,
    pub elevation: f64,
}

fn matrix2(m: &[[f64; 2]; 2]) -> Matrix2<f64> {
    Matrix2::from_fn(|i, j| m[i][j])
}

fn matrix4(m: &[[f64; 4]; 4]) -> Matrix4<f64> {
    Matrix4::from_fn(|i, j| m[i][j])
}

pub(crate) fn rows2(m: &Matrix2<f64>) -> [[f64; 2]; 2] {
    std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)]))
}

pub(crate) fn rows4(m: &Matrix4<f64>) -> [[f64; 4]; 4] {
    std::array::from_fn(|i| std::array::from_fn(|j| m[(i, j)]))
}

pub(crate) fn is_spd2(m: &Matrix2<f64>) -> bool {
    m.iter().all(|v| v.is_finite()) && (m - m.transpose()).amax() <= 1e-12 * m.amax().max(1.0)
        && m.cholesky().is_some()
}

pub(crate) fn is_psd4(m: &Matrix4<f64>) -> bool {
    let scale = m.amax().max(1.0);
    m.iter().all(|v| v.is_finite())
        && (m - m.transpose()).amax() <= 1e-12 * scale
        && m.symmetric_eigenvalues().min() >= -1e-12 * scale
}

impl ScenarioFile {
    /// Checks ranges and builds the scenario; `text[within]` is where the
    /// scenario's keys live, for error lines.
    pub fn to_config(&self, text: &str, within: Range<usize>) -> Result<ScenarioConfig, ConfigError> {
        let at = |key: &str, msg: String| ConfigError::new(key_line(text, within.clone(), key), msg);
        if self.duration_frames == 0 {
            return Err(at("duration_frames", "duration_frames must be >= 1".into()));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(at("dt", format!("dt must be > 0, got {}", self.dt)));
        }
        if !(0.0..=1.0).contains(&self.detection_probability) {
            return Err(at(
                "detection_probability",
                format!("detection_probability must be in [0, 1], got {}", self.detection_probability),
            ));
        }
        if !(self.clutter_rate >= 0.0 && self.clutter_rate.is_finite()) {
            return Err(at("clutter_rate", format!("clutter_rate must be >= 0, got {}", self.clutter_rate)));
        }
        let r = matrix2(&self.measurement_noise);
        if !is_spd2(&r) {
            return Err(at("measurement_noise", "measurement_noise must be symmetric positive definite".into()));
        }
        let q = matrix4(&self.process_noise);
        if !is_psd4(&q) {
            return Err(at("process_noise", "process_noise must be symmetric positive semi-definite".into()));
        }
        if self.seed > i64::MAX as u64 {
            return Err(at("seed", format!("seed must be <= {}", i64::MAX)));
        }
        let targets = self
            .targets
            .iter()
            .enumerate()
            .map(|(i, t)| t.get_ref().to_spec(i + 1, self.duration_frames, text, t.span()))
            .collect::<Result<Vec<_>, _>>()?;
        let config = ScenarioConfig {
            duration_frames: self.duration_frames,
            dt: self.dt,
            targets,
            detection_probability: self.detection_probability,
            clutter_rate: self.clutter_rate,
            measurement_noise: r,
            process_noise: q,
            seed: self.seed,
        };
        config
            .validate()
            .map_err(|e| ConfigError::new(Some(line_of(text, within.start)), e.to_string()))?;
        Ok(config)
    }

    /// Canonical form: every field explicit.
    pub fn from_config(config: &ScenarioConfig) -> Self {
        Self {
            duration_frames: config.duration_frames,
            dt: config.dt,
            detection_probability: config.detection_probability,
            clutter_rate: config.clutter_rate,
            measurement_noise: rows2(&config.measurement_noise),
            process_noise: rows4(&config.process_noise),
            seed: config.seed,
            targets: config
                .targets
                .iter()
                .map(|t| {
                    Spanned::new(
                        0..0,
                        TargetEntry {
                            birth_frame: t.birth_frame,
                            death_frame: Some(t.death_frame),
                            initial: [
                                t.initial.azimuth,
                                t.initial.elevation,
                                t.initial.azimuth_rate,
                                t.initial.elevation_rate,
                            ],
                            speech: t
                                .speech
                                .as_ref()
                                .map(|iv| iv.iter().map(|&(a, b)| [a, b]).collect()),
                            waypoints: t
                                .waypoints
                                .iter()
                                .map(|w| WaypointEntry {
                                    frame: w.frame,
                                    azimuth: w.azimuth,
                                    elevation: w.elevation,
                                })
                                .collect(),
                        },
                    )
                })
                .collect(),
        }
    }
}

impl TargetEntry {
    fn to_spec(
        &self,
        index: usize,
        duration: usize,
        text: &str,
        span: Range<usize>,
    ) -> Result<TargetSpec, ConfigError> {
        let at = |key: &str, msg: String| {
            let line = key_line(text, section(text, span.start), key).or(Some(line_of(text, span.start)));
            ConfigError::new(line, format!("target {index}: {msg}"))
        };
        let death = self.death_frame.unwrap_or(duration);
        if self.birth_frame >= death {
            return Err(at("birth_frame", format!("birth_frame {} must be < death_frame {death}", self.birth_frame)));
        }
        if death > duration {
            return Err(at("death_frame", format!("death_frame {death} exceeds duration_frames {duration}")));
        }
        if !self.initial.iter().all(|v| v.is_finite()) {
            return Err(at("initial", "initial state must be finite".into()));
        }
        if !(-90.0..=90.0).contains(&self.initial[1]) {
            return Err(at("initial", format!("elevation {} outside [-90, 90]", self.initial[1])));
        }
        for [a, b] in self.speech.iter().flatten() {
            if a >= b {
                return Err(at("speech", format!("empty speech interval [{a}, {b})")));
            }
        }
        let mut last = self.birth_frame;
        for w in &self.waypoints {
            if w.frame <= last || w.frame > death {
                return Err(at(
                    "waypoints",
                    format!("waypoint frames must increase within ({}, {death}]", self.birth_frame),
                ));
            }
            if !(w.azimuth.is_finite() && (-90.0..=90.0).contains(&w.elevation)) {
                return Err(at("waypoints", "waypoint outside the DOA space".into()));
            }
            last = w.frame;
        }
        let [az, el, az_rate, el_rate] = self.initial;
        Ok(TargetSpec {
            birth_frame: self.birth_frame,
            death_frame: death,
            initial: TargetState::new(az, el, az_rate, el_rate),
            waypoints: self
                .waypoints
                .iter()
                .map(|w| Waypoint {
                    frame: w.frame,
                    azimuth: w.azimuth,
                    elevation: w.elevation,
                })
                .collect(),
            speech: self
                .speech
                .as_ref()
                .map(|iv| iv.iter().map(|&[a, b]| (a, b)).collect()),
        })
    }
}

pub fn parse_scenario(text: &str) -> Result<ScenarioConfig, ConfigError> {
    let file: ScenarioFile = toml::from_str(text).map_err(|e| from_toml(text, &e))?;
    file.to_config(text, 0..text.len())
}

pub fn parse_scenario_file(path: &Path) -> Result<ScenarioConfig, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::new(None, format!("cannot read: {e}")).in_file(path))?;
    parse_scenario(&text).map_err(|e| e.in_file(path))
}

/// Canonical TOML for a scenario.
pub fn write_scenario(config: &ScenarioConfig) -> String {
    toml::to_string(&ScenarioFile::from_config(config)).expect("scenario serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_gets_defaults() {
        let cfg = parse_scenario("duration_frames = 30\n[[target]]\ninitial = [10.0, 0.0, 0.0, 0.0]\n").unwrap();
        assert_eq!(cfg.dt, DEFAULT_DT);
        assert_eq!(cfg.detection_probability, DEFAULT_DETECTION_PROBABILITY);
        assert_eq!(cfg.clutter_rate, DEFAULT_CLUTTER_RATE);
        assert_eq!(cfg.measurement_noise, Matrix2::new(4.0, 0.0, 0.0, 4.0));
        assert_eq!(cfg.process_noise, Matrix4::zeros());
        assert_eq!(cfg.targets.len(), 1);
        assert_eq!((cfg.targets[0].birth_frame, cfg.targets[0].death_frame), (0, 30));
        assert!(cfg.targets[0].speech.is_none());
    }

    #[test]
    fn errors_carry_lines() {
        let e = parse_scenario("duration_frames = 30\nbogus = 1\n").unwrap_err();
        assert_eq!(e.line, Some(2));
        assert!(e.message.contains("bogus"), "{}", e.message);

        let text = "duration_frames = 30\n\n[[target]]\ninitial = [0.0, 0.0, 0.0, 0.0]\n\n[[target]]\ninitial = [1.0, 0.0, 0.0, 0.0]\nbirth_frame = 12\ndeath_frame = 12\n";
        let e = parse_scenario(text).unwrap_err();
        assert_eq!(e.line, Some(8), "{e}");
        assert!(e.message.contains("target 2"));

        let e = parse_scenario("duration_frames = 30\ndetection_probability = 1.5\n").unwrap_err();
        assert_eq!(e.line, Some(2));

        let e = parse_scenario("dt = 1.0\n").unwrap_err();
        assert!(e.message.contains("duration_frames"), "{}", e.message);
    }

    #[test]
    fn canonical_round_trip() {
        let mut cfg = ScenarioConfig::occlusion();
        cfg.targets[0].speech = Some(vec![(0, 40), (50, 200)]);
        cfg.targets[1].waypoints = vec![Waypoint { frame: 100, azimuth: 80.0, elevation: 0.5 }];
        let text = write_scenario(&cfg);
        assert_eq!(parse_scenario(&text).unwrap(), cfg);
        assert_eq!(write_scenario(&parse_scenario(&text).unwrap()), text);
    }
}
