//! SMC-PHD filter steps: prediction, birth, the clutter-aware weight update,
//! state extraction, covariance maintenance and ESS-gated resampling.
//!
//! The sum of particle weights is the expected number of targets, so every
//! step here either scales that mass in a known way or preserves it.

use log::debug;
use nalgebra::{Matrix2, Matrix4, Vector2, Vector4};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::cluster::weighted_kmeans;
use crate::error::{Error, Result};
use crate::model::{
    propagate_covariance, transition, wrap_azimuth, GaussianLikelihood,
    Measurement, NoiseModel, Particle, TargetState, DEFAULT_MAX_CONDITION,
};

/// Ordered particles: surviving prefix, born suffix.
///
/// Born particles are grouped by the measurement that spawned them;
/// `birth_origin[j]` is the measurement index of the `j`-th born particle.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParticlePopulation {
    pub particles: Vec<Particle>,
    pub surviving_count: usize,
    pub born_count: usize,
    pub birth_origin: Vec<usize>,
}

impl ParticlePopulation {
    pub fn surviving(particles: Vec<Particle>) -> Self {
        let n = particles.len();
        Self {
            particles,
            surviving_count: n,
            born_count: 0,
            birth_origin: Vec::new(),
        }
    }

    /// Appends born particles after the surviving ones.
    pub fn with_births(mut self, births: Births) -> Self {
        self.born_count += births.particles.len();
        self.particles.extend(births.particles);
        self.birth_origin.extend(births.origin);
        self
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    pub fn weights(&self) -> Vec<f64> {
        self.particles.iter().map(|p| p.weight).collect()
    }

    pub fn surviving_particles(&self) -> &[Particle] {
        &self.particles[..self.surviving_count]
    }

    pub fn born_particles(&self) -> &[Particle] {
        &self.particles[self.surviving_count..]
    }

    fn check(&self) {
        debug_assert_eq!(self.surviving_count + self.born_count, self.particles.len());
        debug_assert_eq!(self.birth_origin.len(), self.born_count);
    }
}

/// Filter tunables.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterConfig {
    /// Survival probability `q_s`.
    pub survival_probability: f64,
    /// Detection probability `p_D`.
    pub detection_probability: f64,
    /// Clutter intensity κ per square degree.
    pub clutter_intensity: f64,
    /// Birth intensity γ per square degree.
    pub birth_weight: f64,
    /// Born particles per measurement (`N_B`).
    pub births_per_measurement: usize,
    pub particles_per_target: usize,
    pub ess_fraction: f64,
    /// Birth box half-widths are three standard deviations of this covariance.
    pub birth_spread: Matrix2<f64>,
    pub noise: NoiseModel,
    pub max_targets: usize,
    pub covariance_jitter: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        let noise = NoiseModel::default();
        Self {
            survival_probability: 0.99,
            detection_probability: 0.9,
            clutter_intensity: 1.0 / (360.0 * 180.0),
            birth_weight: 3e-6,
            births_per_measurement: 50,
            particles_per_target: 50,
            ess_fraction: 0.5,
            birth_spread: noise.measurement_noise_cov,
            noise,
            max_targets: 10,
            covariance_jitter: 1e-6,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::InvalidArgument(format!("{name} must be in [0, 1], got {v}")))
            }
        };
        prob("survival_probability", self.survival_probability)?;
        prob("detection_probability", self.detection_probability)?;
        prob("ess_fraction", self.ess_fraction)?;
        if !(self.clutter_intensity >= 0.0) || !self.clutter_intensity.is_finite() {
            return Err(Error::InvalidArgument("clutter_intensity must be >= 0".into()));
        }
        if !(self.birth_weight >= 0.0) || !self.birth_weight.is_finite() {
            return Err(Error::InvalidArgument("birth_weight must be >= 0".into()));
        }
        if self.births_per_measurement == 0 || self.particles_per_target == 0 {
            return Err(Error::InvalidArgument("particle counts must be >= 1".into()));
        }
        let s = &self.birth_spread;
        if !(s[(0, 0)] > 0.0 && s[(1, 1)] > 0.0) || s.cholesky().is_none() {
            return Err(Error::Singular("birth_spread"));
        }
        if !(self.covariance_jitter > 0.0) {
            return Err(Error::InvalidArgument("covariance_jitter must be > 0".into()));
        }
        self.noise.validate(DEFAULT_MAX_CONDITION)
    }

    /// Half-widths of the uniform birth box.
    pub fn birth_half_widths(&self) -> (f64, f64) {
        (
            3.0 * self.birth_spread[(0, 0)].sqrt(),
            3.0 * self.birth_spread[(1, 1)].sqrt(),
        )
    }
}

/// Propagates surviving particles through the CV model with sampled process
/// noise and scales weights by `q_s`. Covariances follow `F P Fᵀ + Q`.
pub fn predict<R: Rng + ?Sized>(
    pop: &ParticlePopulation,
    dt: f64,
    config: &FilterConfig,
    rng: &mut R,
) -> Result<ParticlePopulation> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    let q = &config.noise.process_noise_cov;
    let l = config.noise.process_noise_factor()?;
    let particles = pop
        .particles
        .iter()
        .map(|p| {
            let n = Vector4::from_fn(|_, _| StandardNormal.sample(rng));
            Ok(Particle {
                state: transition(&p.state, dt, &(l * n))?,
                weight: p.weight * config.survival_probability,
                covariance: propagate_covariance(&p.covariance, dt, q),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ParticlePopulation::surviving(particles))
}

/// Born particles and the measurement index each came from.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Births {
    pub particles: Vec<Particle>,
    pub origin: Vec<usize>,
}

/// Samples `N_B` particles uniformly in a ±3σ box around each measurement.
///
/// Each weight is `γ / (N_B · p_k)` with `p_k = 1 / box area`.
pub fn spawn_births<R: Rng + ?Sized>(
    zs: &[Measurement],
    config: &FilterConfig,
    rng: &mut R,
) -> Result<Births> {
    let nb = config.births_per_measurement;
    let (ha, he) = config.birth_half_widths();
    let area = 4.0 * ha * he;
    let weight = config.birth_weight * area / nb as f64;

    let q = &config.noise.process_noise_cov;
    let rate_cov = q.fixed_view::<2, 2>(2, 2).into_owned();
    let rate_l = rate_cov
        .cholesky()
        .map(|c| c.l())
        .ok_or(Error::Singular("rate block of process noise"))?;
    let mut covariance = Matrix4::zeros();
    covariance[(0, 0)] = ha * ha / 3.0;
    covariance[(1, 1)] = he * he / 3.0;
    covariance.fixed_view_mut::<2, 2>(2, 2).copy_from(&rate_cov);

    let mut births = Births {
        particles: Vec::with_capacity(nb * zs.len()),
        origin: Vec::with_capacity(nb * zs.len()),
    };
    for (r, z) in zs.iter().enumerate() {
        for _ in 0..nb {
            let az = z.azimuth + rng.random_range(-ha..ha);
            let el = z.elevation + rng.random_range(-he..he);
            let rate = rate_l * Vector2::from_fn(|_, _| StandardNormal.sample(rng));
            births.particles.push(Particle::new(
                TargetState::new(az, el, rate[0], rate[1]),
                weight,
                covariance,
            ));
            births.origin.push(r);
        }
    }
    Ok(births)
}

/// Per-particle, per-measurement likelihood table `h[i][r]`.
pub fn likelihood_table(
    particles: &[Particle],
    zs: &[Measurement],
    lik: &GaussianLikelihood,
) -> Vec<Vec<f64>> {
    particles
        .iter()
        .map(|p| zs.iter().map(|z| lik.density(&p.state, z)).collect())
        .collect()
}

/// PHD weight update with detection probability and clutter intensity.
///
/// `ω ← [1 − p_D + Σ_r p_D h^{i,r} / (κ + Σ_j p_D h^{j,r} ω^j)] ω`.
pub fn update_weights(
    pop: &ParticlePopulation,
    zs: &[Measurement],
    config: &FilterConfig,
) -> Result<ParticlePopulation> {
    let lik = GaussianLikelihood::new(&config.noise.measurement_noise_cov)?;
    Ok(update_weights_with(pop, zs, config, &lik))
}

pub(crate) fn update_weights_with(
    pop: &ParticlePopulation,
    zs: &[Measurement],
    config: &FilterConfig,
    lik: &GaussianLikelihood,
) -> ParticlePopulation {
    pop.check();
    let pd = config.detection_probability;
    let table = likelihood_table(&pop.particles, zs, lik);
    // normalizers reduced once before the per-particle pass
    let denominators: Vec<Option<f64>> = (0..zs.len())
        .map(|r| {
            let d = config.clutter_intensity
                + pop
                    .particles
                    .iter()
                    .zip(&table)
                    .map(|(p, h)| pd * h[r] * p.weight)
                    .sum::<f64>();
            if d > f64::MIN_POSITIVE && d.is_finite() {
                Some(d)
            } else {
                debug!("weight update: normalizer for measurement {r} underflowed ({d:e})");
                None
            }
        })
        .collect();

    let mut out = pop.clone();
    for (p, h) in out.particles.iter_mut().zip(&table) {
        let ratio: f64 = denominators
            .iter()
            .zip(h)
            .filter_map(|(d, h)| d.map(|d| pd * h / d))
            .sum();
        p.weight *= 1.0 - pd + ratio;
    }
    out
}

/// Expected target count: the sum of weights.
pub fn estimate_count(pop: &ParticlePopulation) -> f64 {
    pop.particles.iter().map(|p| p.weight).sum()
}

/// Result of state extraction.
#[derive(Debug, Clone, PartialEq)]
pub struct Extraction {
    /// Weighted mean state and weight mass per cluster.
    pub estimates: Vec<(TargetState, f64)>,
    /// Cluster label per particle (empty when no clusters were formed).
    pub assignment: Vec<usize>,
    /// `true` when the requested cluster count exceeded the particle count.
    pub reduced: bool,
}

/// Weighted mean state (wrapped azimuth) and total weight of a particle subset.
fn weighted_mean<'a>(members: impl Iterator<Item = &'a Particle> + Clone) -> (TargetState, f64) {
    let mut it = members.clone();
    let reference = it.next().expect("non-empty cluster").state;
    let count = members.clone().count() as f64;
    let mass: f64 = members.clone().map(|p| p.weight).sum();
    let mut acc = Vector4::zeros();
    for p in members {
        let w = if mass > 0.0 { p.weight / mass } else { 1.0 / count };
        acc += w * p.state.difference(&reference);
    }
    let mean = TargetState::new(
        wrap_azimuth(reference.azimuth + acc[0]),
        reference.elevation + acc[1],
        reference.azimuth_rate + acc[2],
        reference.elevation_rate + acc[3],
    );
    (mean, mass)
}

/// Clusters the particles into `n_targets` groups with weighted k-means on
/// position and reports each group's weighted mean state and weight mass.
pub fn extract_states<R: Rng + ?Sized>(
    pop: &ParticlePopulation,
    n_targets: usize,
    rng: &mut R,
) -> Extraction {
    let n = pop.len();
    let k = n_targets.min(n);
    if k == 0 {
        return Extraction {
            estimates: Vec::new(),
            assignment: Vec::new(),
            reduced: n_targets > 0,
        };
    }
    let points: Vec<(f64, f64)> = pop
        .particles
        .iter()
        .map(|p| (p.state.azimuth, p.state.elevation))
        .collect();
    let clustering = weighted_kmeans(&points, &pop.weights(), k, rng);
    let estimates = (0..k)
        .filter_map(|j| {
            let members = pop
                .particles
                .iter()
                .zip(&clustering.assignment)
                .filter(move |(_, a)| **a == j)
                .map(|(p, _)| p);
            members.clone().next().map(|_| weighted_mean(members))
        })
        .collect();
    Extraction {
        estimates,
        assignment: clustering.assignment,
        reduced: n_targets > n,
    }
}

/// Sets every particle's covariance to its cluster's weighted sample
/// covariance plus `jitter·I`. Singleton clusters fall back to `Q`.
pub fn update_covariances(
    pop: &ParticlePopulation,
    assignment: &[usize],
    config: &FilterConfig,
) -> Result<ParticlePopulation> {
    if assignment.len() != pop.len() {
        return Err(Error::LengthMismatch(assignment.len(), pop.len()));
    }
    let jitter = Matrix4::identity() * config.covariance_jitter;
    let n_clusters = assignment.iter().copied().max().map_or(0, |m| m + 1);
    let mut covs = vec![config.noise.process_noise_cov; n_clusters];
    for (j, cov) in covs.iter_mut().enumerate() {
        let members: Vec<&Particle> = pop
            .particles
            .iter()
            .zip(assignment)
            .filter(|(_, a)| **a == j)
            .map(|(p, _)| p)
            .collect();
        if members.len() < 2 {
            continue;
        }
        let (mean, mass) = weighted_mean(members.iter().copied());
        let mut c = Matrix4::zeros();
        for p in &members {
            let w = if mass > 0.0 {
                p.weight / mass
            } else {
                1.0 / members.len() as f64
            };
            let d = p.state.difference(&mean);
            c += w * d * d.transpose();
        }
        *cov = (c + c.transpose()) * 0.5 + jitter;
    }
    let mut out = pop.clone();
    for (p, a) in out.particles.iter_mut().zip(assignment) {
        p.covariance = covs[*a];
    }
    Ok(out)
}

/// Effective sample size `(Σω)² / Σω²`.
pub fn ess(weights: &[f64]) -> Result<f64> {
    let s: f64 = weights.iter().sum();
    let s2: f64 = weights.iter().map(|w| w * w).sum();
    if !(s > 0.0) || !(s2 > 0.0) {
        return Err(Error::DegeneratePopulation);
    }
    Ok(s * s / s2)
}

/// Systematic resampling to `target_count` equally weighted particles that
/// together carry the input mass. Covariances are inherited from ancestors.
pub fn resample<R: Rng + ?Sized>(
    pop: &ParticlePopulation,
    target_count: usize,
    rng: &mut R,
) -> Result<ParticlePopulation> {
    let total = estimate_count(pop);
    if !(total > 0.0) || !total.is_finite() || target_count == 0 {
        return Err(Error::DegeneratePopulation);
    }
    let step = 1.0 / target_count as f64;
    let offset = rng.random::<f64>() * step;
    let weight = total / target_count as f64;

    let mut out = Vec::with_capacity(target_count);
    let mut cumulative = 0.0;
    let mut idx = 0;
    let last = pop.len() - 1;
    for j in 0..target_count {
        let u = offset + j as f64 * step;
        while idx < last && cumulative + pop.particles[idx].weight / total <= u {
            cumulative += pop.particles[idx].weight / total;
            idx += 1;
        }
        // rounding can walk past the last positive weight
        while pop.particles[idx].weight <= 0.0 && idx > 0 {
            idx -= 1;
        }
        let ancestor = &pop.particles[idx];
        out.push(Particle::new(ancestor.state, weight, ancestor.covariance));
    }
    Ok(ParticlePopulation::surviving(out))
}
