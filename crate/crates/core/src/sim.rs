//! Synthetic DOA scenarios: ground-truth trajectories and cluttered,
//! detection-gapped measurement streams.

use nalgebra::{Matrix2, Matrix4, Vector2, Vector4};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};

use crate::error::{Error, Result};
use crate::model::{angular_difference, measure, transition, Measurement, TargetState};

/// Steer the target to (azimuth, elevation) by `frame`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Waypoint {
    pub frame: usize,
    pub azimuth: f64,
    pub elevation: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TargetSpec {
    /// First frame the target exists.
    pub birth_frame: usize,
    /// First frame the target no longer exists.
    pub death_frame: usize,
    pub initial: TargetState,
    pub waypoints: Vec<Waypoint>,
    /// Half-open `[start, end)` frame intervals with speech; `None` = always speaking.
    pub speech: Option<Vec<(usize, usize)>>,
}

impl TargetSpec {
    pub fn new(birth_frame: usize, death_frame: usize, initial: TargetState) -> Self {
        Self {
            birth_frame,
            death_frame,
            initial,
            waypoints: Vec::new(),
            speech: None,
        }
    }

    pub fn is_alive(&self, frame: usize) -> bool {
        (self.birth_frame..self.death_frame).contains(&frame)
    }

    pub fn is_speaking(&self, frame: usize) -> bool {
        self.speech
            .as_ref()
            .map_or(true, |iv| iv.iter().any(|&(a, b)| (a..b).contains(&frame)))
    }
}

/// Ground truth description of a scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub duration_frames: usize,
    pub dt: f64,
    pub targets: Vec<TargetSpec>,
    /// True detection probability.
    pub detection_probability: f64,
    /// Mean false alarms per frame.
    pub clutter_rate: f64,
    pub measurement_noise: Matrix2<f64>,
    /// Truth process noise; zero gives exact piecewise-CV trajectories.
    pub process_noise: Matrix4<f64>,
    pub seed: u64,
}

/// Area of the DOA measurement space in square degrees.
pub const DOA_AREA: f64 = 360.0 * 180.0;

impl ScenarioConfig {
    /// Two speakers crossing in azimuth, coincident for about five frames.
    pub fn occlusion() -> Self {
        Self {
            duration_frames: 200,
            dt: 1.0,
            targets: vec![
                TargetSpec::new(0, 200, TargetState::new(50.0, 10.0, 0.4, 0.0)),
                TargetSpec::new(0, 200, TargetState::new(130.0, 12.0, -0.4, 0.0)),
            ],
            detection_probability: 0.9,
            clutter_rate: 1.0,
            measurement_noise: Matrix2::new(4.0, 0.0, 0.0, 4.0),
            process_noise: Matrix4::zeros(),
            seed: 1,
        }
    }

    /// Two well-separated speakers, always detected, no clutter.
    pub fn clean() -> Self {
        Self {
            duration_frames: 100,
            dt: 1.0,
            targets: vec![
                TargetSpec::new(0, 100, TargetState::new(60.0, 10.0, 0.2, 0.0)),
                TargetSpec::new(0, 100, TargetState::new(200.0, -10.0, -0.2, 0.05)),
            ],
            detection_probability: 1.0,
            clutter_rate: 0.0,
            measurement_noise: Matrix2::new(4.0, 0.0, 0.0, 4.0),
            process_noise: Matrix4::zeros(),
            seed: 1,
        }
    }

    /// Clutter intensity per square degree implied by the clutter rate.
    pub fn clutter_intensity(&self) -> f64 {
        self.clutter_rate / DOA_AREA
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.duration_frames == 0 {
            return bad("duration_frames must be >= 1".into());
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return bad(format!("dt must be > 0, got {}", self.dt));
        }
        if !(0.0..=1.0).contains(&self.detection_probability) {
            return bad(format!(
                "detection_probability must be in [0, 1], got {}",
                self.detection_probability
            ));
        }
        if !(self.clutter_rate >= 0.0) || !self.clutter_rate.is_finite() {
            return bad(format!("clutter_rate must be >= 0, got {}", self.clutter_rate));
        }
        if self.measurement_noise.cholesky().is_none() {
            return Err(Error::Singular("measurement_noise"));
        }
        psd_factor(&self.process_noise).ok_or(Error::Singular("process_noise"))?;
        for (i, t) in self.targets.iter().enumerate() {
            if t.birth_frame >= t.death_frame || t.death_frame > self.duration_frames {
                return bad(format!(
                    "target {}: need birth_frame < death_frame <= duration_frames",
                    i + 1
                ));
            }
            if !t.initial.is_finite() {
                return bad(format!("target {}: initial state must be finite", i + 1));
            }
            for (a, b) in t.speech.iter().flatten() {
                if a >= b {
                    return bad(format!("target {}: empty speech interval [{a}, {b})", i + 1));
                }
            }
        }
        Ok(())
    }
}

/// Square-root factor of a symmetric positive semi-definite matrix.
fn psd_factor(m: &Matrix4<f64>) -> Option<Matrix4<f64>> {
    if (m - m.transpose()).amax() > 1e-12 * m.amax().max(1.0) {
        return None;
    }
    let eig = m.symmetric_eigen();
    let floor = -1e-12 * m.amax().max(1.0);
    if eig.eigenvalues.iter().any(|&v| v < floor) {
        return None;
    }
    let sqrt = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    Some(eig.eigenvectors * Matrix4::from_diagonal(&sqrt))
}

/// True states alive at one frame, keyed by target id (1-based).
pub type FrameTruth = Vec<(u32, TargetState)>;

/// Where a simulated measurement came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Origin {
    Target(u32),
    Clutter,
}

/// One simulated frame.
///
/// `origins` is generator bookkeeping for diagnostics; trackers only ever
/// see `measurements`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub frame: usize,
    pub truth: FrameTruth,
    pub measurements: Vec<Measurement>,
    pub origins: Vec<Origin>,
}

/// Piecewise constant-velocity trajectories with truth process noise.
pub fn generate_truth<R: Rng + ?Sized>(
    config: &ScenarioConfig,
    rng: &mut R,
) -> Result<Vec<FrameTruth>> {
    config.validate()?;
    let q = psd_factor(&config.process_noise).ok_or(Error::Singular("process_noise"))?;
    let mut frames = vec![FrameTruth::new(); config.duration_frames];
    for (idx, target) in config.targets.iter().enumerate() {
        let id = idx as u32 + 1;
        let mut state = target.initial;
        for k in target.birth_frame..target.death_frame {
            if let Some(wp) = target.waypoints.iter().find(|w| w.frame > k) {
                let span = (wp.frame - k) as f64 * config.dt;
                state.azimuth_rate = angular_difference(wp.azimuth, state.azimuth) / span;
                state.elevation_rate = (wp.elevation - state.elevation) / span;
            }
            frames[k].push((id, state));
            let noise = q * Vector4::from_fn(|_, _| StandardNormal.sample(rng));
            state = transition(&state, config.dt, &noise)?;
        }
    }
    Ok(frames)
}

/// Detections (probability `p_D`, speech-gated) plus Poisson clutter,
/// uniform over azimuth `[0, 360)` × elevation `[-90, 90]`, shuffled.
pub fn generate_measurements<R: Rng + ?Sized>(
    truth: &[FrameTruth],
    config: &ScenarioConfig,
    rng: &mut R,
) -> Result<Vec<FrameRecord>> {
    let l = config
        .measurement_noise
        .cholesky()
        .ok_or(Error::Singular("measurement_noise"))?
        .l();
    let clutter = if config.clutter_rate > 0.0 {
        Some(Poisson::new(config.clutter_rate).map_err(|e| Error::InvalidArgument(e.to_string()))?)
    } else {
        None
    };
    let mut records = Vec::with_capacity(truth.len());
    for (frame, alive) in truth.iter().enumerate() {
        let mut tagged: Vec<(Measurement, Origin)> = Vec::new();
        for &(id, state) in alive {
            let spec = &config.targets[id as usize - 1];
            if !spec.is_speaking(frame) {
                continue;
            }
            if rng.random::<f64>() < config.detection_probability {
                let noise = l * Vector2::from_fn(|_, _| StandardNormal.sample(rng));
                tagged.push((measure(&state, &noise), Origin::Target(id)));
            }
        }
        let n_clutter = clutter.map_or(0, |p| p.sample(rng) as usize);
        for _ in 0..n_clutter {
            let z = Measurement::new(
                rng.random_range(0.0..360.0),
                rng.random_range(-90.0..=90.0),
            );
            tagged.push((z, Origin::Clutter));
        }
        tagged.shuffle(rng);
        let (measurements, origins) = tagged.into_iter().unzip();
        records.push(FrameRecord {
            frame,
            truth: alive.clone(),
            measurements,
            origins,
        });
    }
    Ok(records)
}

/// Runs both generators from the scenario seed (separate streams for truth
/// and measurements).
pub fn simulate(config: &ScenarioConfig) -> Result<Vec<FrameRecord>> {
    let mut truth_rng = ChaCha8Rng::seed_from_u64(config.seed);
    truth_rng.set_stream(0);
    let mut meas_rng = ChaCha8Rng::seed_from_u64(config.seed);
    meas_rng.set_stream(1);
    let truth = generate_truth(config, &mut truth_rng)?;
    generate_measurements(&truth, config, &mut meas_rng)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(state: TargetState, frames: usize) -> ScenarioConfig {
        ScenarioConfig {
            duration_frames: frames,
            dt: 1.0,
            targets: vec![TargetSpec::new(0, frames, state)],
            detection_probability: 1.0,
            clutter_rate: 0.0,
            measurement_noise: Matrix2::identity(),
            process_noise: Matrix4::zeros(),
            seed: 5,
        }
    }

    #[test]
    fn static_target_is_constant() {
        let s = TargetState::new(30.0, 5.0, 0.0, 0.0);
        let cfg = single(s, 20);
        let truth = generate_truth(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(truth.iter().all(|f| f == &vec![(1, s)]));
    }

    #[test]
    fn constant_rate_advances() {
        let cfg = single(TargetState::new(10.0, 0.0, 2.0, 0.0), 10);
        let truth = generate_truth(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        for (k, f) in truth.iter().enumerate() {
            assert!((f[0].1.azimuth - (10.0 + 2.0 * k as f64)).abs() < 1e-9);
        }
    }

    #[test]
    fn waypoints_are_reached() {
        let mut cfg = single(TargetState::new(350.0, 0.0, 0.0, 0.0), 30);
        cfg.targets[0].waypoints = vec![
            Waypoint { frame: 10, azimuth: 10.0, elevation: 5.0 },
            Waypoint { frame: 20, azimuth: 10.0, elevation: -5.0 },
        ];
        let truth = generate_truth(&cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert!(angular_difference(truth[10][0].1.azimuth, 10.0).abs() < 1e-9);
        assert!((truth[10][0].1.elevation - 5.0).abs() < 1e-9);
        assert!((truth[20][0].1.elevation + 5.0).abs() < 1e-9);
        assert!(angular_difference(truth[25][0].1.azimuth, 10.0).abs() < 1e-9);
    }

    #[test]
    fn detection_extremes() {
        let cfg = single(TargetState::new(30.0, 5.0, 0.0, 0.0), 50);
        let recs = simulate(&cfg).unwrap();
        assert!(recs.iter().all(|r| r.measurements.len() == 1));

        let mut cfg = cfg;
        cfg.detection_probability = 0.0;
        cfg.clutter_rate = 3.0;
        let recs = simulate(&cfg).unwrap();
        assert!(recs.iter().flat_map(|r| &r.origins).all(|o| *o == Origin::Clutter));
        assert!(recs.iter().map(|r| r.measurements.len()).sum::<usize>() > 0);
    }

    #[test]
    fn speech_gaps_silence_target() {
        let mut cfg = single(TargetState::new(30.0, 5.0, 0.0, 0.0), 30);
        cfg.targets[0].speech = Some(vec![(0, 10), (20, 30)]);
        let recs = simulate(&cfg).unwrap();
        for r in &recs {
            let expected = usize::from(!(10..20).contains(&r.frame));
            assert_eq!(r.measurements.len(), expected);
        }
    }

    #[test]
    fn seeded_rerun_is_identical() {
        let cfg = ScenarioConfig::occlusion();
        assert_eq!(simulate(&cfg).unwrap(), simulate(&cfg).unwrap());
    }

    #[test]
    fn occlusion_scenario_crosses() {
        let cfg = ScenarioConfig::occlusion();
        let truth = generate_truth(&cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let close = truth
            .iter()
            .filter(|f| angular_difference(f[0].1.azimuth, f[1].1.azimuth).abs() < 2.0)
            .count();
        assert!((4..=6).contains(&close), "{close} frames near-coincident");
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = single(TargetState::new(0.0, 0.0, 0.0, 0.0), 10);
        cfg.targets[0].birth_frame = 10;
        assert!(cfg.validate().is_err());
        let mut cfg = single(TargetState::new(0.0, 0.0, 0.0, 0.0), 10);
        cfg.clutter_rate = -1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = single(TargetState::new(0.0, 0.0, 0.0, 0.0), 10);
        cfg.targets[0].death_frame = 11;
        assert!(cfg.validate().is_err());
    }
}
