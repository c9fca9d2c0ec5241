//! One tracking session: the PHD recursion with an optional flow block,
//! followed by the identity step.

use log::debug;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::flow::{migrate_with, FlowConfig, FlowKind, MigrationStats};
use crate::ident::{IdentityTracker, TrackEstimate};
use crate::model::{GaussianLikelihood, Measurement, TargetState};
use crate::phd::{
    estimate_count, ess, extract_states, predict, resample, spawn_births, update_covariances,
    update_weights_with, FilterConfig, ParticlePopulation,
};

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerConfig {
    pub filter: FilterConfig,
    pub flow_kind: FlowKind,
    pub flow: FlowConfig,
    /// Frame interval in seconds.
    pub dt: f64,
    /// Identity gate in degrees.
    pub identity_gate: f64,
    pub seed: u64,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            filter: FilterConfig::default(),
            flow_kind: FlowKind::None,
            flow: FlowConfig::default(),
            dt: 1.0,
            identity_gate: 10.0,
            seed: 0,
        }
    }
}

impl TrackerConfig {
    pub fn validate(&self) -> Result<()> {
        self.filter.validate()?;
        self.flow.validate()?;
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(Error::InvalidArgument(format!("dt must be > 0, got {}", self.dt)));
        }
        Ok(())
    }
}

/// What one frame produced.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutput {
    /// Weight sum after the update (expected target count).
    pub count: f64,
    /// Raw cluster estimates with their weight mass.
    pub estimates: Vec<(TargetState, f64)>,
    /// Identity-labelled tracks.
    pub tracks: Vec<TrackEstimate>,
    pub migration: MigrationStats,
    pub resampled: bool,
}

#[derive(Debug, Clone)]
pub struct Tracker {
    config: TrackerConfig,
    likelihood: GaussianLikelihood,
    population: ParticlePopulation,
    identity: IdentityTracker,
    rng: ChaCha8Rng,
}

impl Tracker {
    pub fn new(config: TrackerConfig) -> Result<Self> {
        config.validate()?;
        let likelihood = GaussianLikelihood::new(&config.filter.noise.measurement_noise_cov)?;
        let identity = IdentityTracker::new(config.identity_gate, config.dt)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        // streams 0 and 1 of the same seed drive the simulator
        rng.set_stream(2);
        Ok(Self {
            config,
            likelihood,
            population: ParticlePopulation::default(),
            identity,
            rng,
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    pub fn population(&self) -> &ParticlePopulation {
        &self.population
    }

    /// Predict, birth, migrate, update, extract, refresh covariances,
    /// resample if degenerate, then label.
    pub fn step(&mut self, zs: &[Measurement]) -> Result<FrameOutput> {
        let cfg = &self.config;
        let rng = &mut self.rng;

        let predicted = predict(&self.population, cfg.dt, &cfg.filter, rng)?;
        let births = spawn_births(zs, &cfg.filter, rng)?;
        let pop = predicted.with_births(births);
        let (pop, migration) =
            migrate_with(&pop, zs, cfg.flow_kind, &cfg.flow, &cfg.filter, &self.likelihood, rng)?;
        let mut pop = update_weights_with(&pop, zs, &cfg.filter, &self.likelihood);

        let count = estimate_count(&pop);
        if !count.is_finite() {
            return Err(Error::DegeneratePopulation);
        }

        // newborn clouds on clutter would capture centroids; they join
        // extraction once they have survived a frame
        let persisting = ParticlePopulation::surviving(pop.surviving_particles().to_vec());
        let k = (estimate_count(&persisting).round() as usize).min(cfg.filter.max_targets);
        let mut estimates = Vec::new();
        if !persisting.is_empty() {
            // covariances still need a clustering when no target is reported
            let extraction = extract_states(&persisting, k.max(1), rng);
            let refreshed = update_covariances(&persisting, &extraction.assignment, &cfg.filter)?;
            let n = refreshed.len();
            pop.particles[..n].clone_from_slice(&refreshed.particles);
            if k > 0 {
                estimates = extraction.estimates;
            }
        }

        let mut resampled = false;
        if !pop.is_empty() {
            match ess(&pop.weights()) {
                Ok(e) if e < cfg.filter.ess_fraction * pop.len() as f64 => {
                    let budget = cfg.filter.particles_per_target * k.max(1);
                    pop = resample(&pop, budget, rng)?;
                    resampled = true;
                }
                Ok(_) => {}
                Err(_) => {
                    debug!("all weights vanished; dropping {} particles", pop.len());
                    pop = ParticlePopulation::default();
                }
            }
        }
        self.population = ParticlePopulation::surviving(pop.particles);

        let tracks = self.identity.step(&estimates)?;
        Ok(FrameOutput {
            count,
            estimates,
            tracks,
            migration,
            resampled,
        })
    }

    /// Runs the session over a sequence of measurement frames.
    pub fn run<'a>(
        &mut self,
        frames: impl IntoIterator<Item = &'a [Measurement]>,
    ) -> Result<Vec<FrameOutput>> {
        frames.into_iter().map(|zs| self.step(zs)).collect()
    }
}
