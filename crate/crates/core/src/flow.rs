//! Particle flows and the pseudo-time migrator.
//!
//! Both flows have the form `f = A⁻¹ g` where `A` is the negated bracket
//! matrix (positive definite in the well-posed case) and `g` the drive:
//!
//! * NPF: `A = P⁻¹ − λ∇²ln h`, `g = ∇ln h` against the nearest measurement.
//! * IPF: `A = P⁻¹ − Σ_r λ p_D ∇²h^r / G^r`, `g = Σ_r p_D ∇h^r / G^r`, where
//!   `G^r = κ + Σ_born S^r + Σ_surviving h^r ω` couples every particle to the
//!   whole intensity.
//!
//! Migration integrates `Δm = f·Δλ + υ·w` over `N_λ` uniform pseudo-time
//! steps and freezes a particle once its step falls below the sensor
//! resolution.

use std::fmt;
use std::str::FromStr;

use log::debug;
use nalgebra::{Matrix4, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{GaussianLikelihood, Measurement, Particle};
use crate::phd::{FilterConfig, ParticlePopulation};

/// Smallest normalizer value admitted before clamping.
pub const NORMALIZER_FLOOR: f64 = 1e-300;

const MAX_SOLVE_JITTER: f64 = 1e-2;

/// Share of the prior curvature `P⁻¹` the IPF bracket must keep in every
/// direction. Past it the bracket nears singularity and the drift explodes.
pub const BRACKET_MARGIN: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlowKind {
    /// Plain SMC-PHD; no migration.
    None,
    Npf,
    Ipf,
}

impl fmt::Display for FlowKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FlowKind::None => "none",
            FlowKind::Npf => "npf",
            FlowKind::Ipf => "ipf",
        })
    }
}

impl FromStr for FlowKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" | "smc" => Ok(FlowKind::None),
            "npf" => Ok(FlowKind::Npf),
            "ipf" => Ok(FlowKind::Ipf),
            other => Err(Error::InvalidArgument(format!("unknown flow kind `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowConfig {
    /// Number of pseudo-time steps `N_λ`.
    pub n_lambda_steps: usize,
    /// Diffusion coefficient υ.
    pub diffusion: f64,
    /// Sensor resolution ∂_m in degrees.
    pub sensor_resolution: f64,
    /// Initial regularization when the bracket solve fails.
    pub jitter: f64,
}

impl Default for FlowConfig {
    fn default() -> Self {
        Self {
            n_lambda_steps: 20,
            diffusion: 0.0,
            sensor_resolution: 0.1,
            jitter: 1e-8,
        }
    }
}

impl FlowConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_lambda_steps == 0 {
            return Err(Error::InvalidArgument("n_lambda_steps must be >= 1".into()));
        }
        if !(self.diffusion >= 0.0) || !self.diffusion.is_finite() {
            return Err(Error::InvalidArgument("diffusion must be >= 0".into()));
        }
        if !(self.sensor_resolution > 0.0) {
            return Err(Error::InvalidArgument("sensor_resolution must be > 0".into()));
        }
        if !(self.jitter > 0.0) || self.jitter > MAX_SOLVE_JITTER {
            return Err(Error::InvalidArgument(format!(
                "jitter must be in (0, {MAX_SOLVE_JITTER}]"
            )));
        }
        Ok(())
    }

    pub fn delta_lambda(&self) -> f64 {
        1.0 / self.n_lambda_steps as f64
    }

    /// Pseudo-times at which the flow is evaluated: `Δλ, 2Δλ, …, 1`.
    pub fn lambdas(&self) -> impl Iterator<Item = f64> + '_ {
        let n = self.n_lambda_steps;
        (1..=n).map(move |j| if j == n { 1.0 } else { j as f64 / n as f64 })
    }
}

/// A flow vector, or zero with `degenerate` set when the solve failed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Flow {
    pub drift: Vector4<f64>,
    pub degenerate: bool,
}

impl Flow {
    fn zero() -> Self {
        Self {
            drift: Vector4::zeros(),
            degenerate: true,
        }
    }
}

/// Solves `A x = b` for symmetric `A` by Cholesky, adding `ε·I` with
/// ε escalating ×10 from `jitter` to 1e-2 when the factorization fails.
pub fn solve_regularized(a: &Matrix4<f64>, b: &Vector4<f64>, jitter: f64) -> Option<Vector4<f64>> {
    let sym = (a + a.transpose()) * 0.5;
    let mut eps = 0.0;
    loop {
        if let Some(ch) = (sym + Matrix4::identity() * eps).cholesky() {
            let x = ch.solve(b);
            if x.iter().all(|v| v.is_finite()) {
                return Some(x);
            }
        }
        eps = if eps == 0.0 { jitter } else { eps * 10.0 };
        if eps > MAX_SOLVE_JITTER * (1.0 + 1e-9) {
            return None;
        }
    }
}

fn inverse_covariance(p: &Matrix4<f64>) -> Option<Matrix4<f64>> {
    p.cholesky().map(|c| c.inverse())
}

/// NPF drift `f = −[−P⁻¹ + λ∇²ln h]⁻¹ ∇ln h` against the nearest measurement.
pub fn npf_flow(
    particle: &Particle,
    zs: &[Measurement],
    lik: &GaussianLikelihood,
    lambda: f64,
    jitter: f64,
) -> Result<Flow> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidArgument(format!("lambda must be in [0, 1], got {lambda}")));
    }
    let nearest = lik.nearest(&particle.state, zs)?;
    let Some(p_inv) = inverse_covariance(&particle.covariance) else {
        return Ok(Flow::zero());
    };
    let (grad, hess) = lik.log_derivatives(&particle.state, &zs[nearest]);
    let a = p_inv - hess * lambda;
    Ok(solve_regularized(&a, &grad, jitter)
        .map(|drift| Flow {
            drift,
            degenerate: false,
        })
        .unwrap_or_else(Flow::zero))
}

/// Birth intensity `S = γ · max(0, 1 − Σ_surviving h ω)` for one born particle.
pub fn birth_intensity(birth_weight: f64, explained_mass: f64) -> f64 {
    birth_weight * (1.0 - explained_mass).max(0.0)
}

/// `Σ_surviving h^{i,r} ω^i` for one measurement.
pub fn explained_mass(surviving: &[Particle], z: &Measurement, lik: &GaussianLikelihood) -> f64 {
    surviving
        .iter()
        .map(|p| lik.density(&p.state, z) * p.weight)
        .sum()
}

/// `G^r = κ + Σ_born S^{i,r} + Σ_surviving h^{i,r} ω^i`, clamped to the floor.
///
/// Only born particles spawned from measurement `r` enter the birth sum.
pub fn normalizer(
    r: usize,
    pop: &ParticlePopulation,
    zs: &[Measurement],
    lik: &GaussianLikelihood,
    config: &FilterConfig,
) -> f64 {
    let explained = explained_mass(pop.surviving_particles(), &zs[r], lik);
    let born = pop.birth_origin.iter().filter(|&&o| o == r).count();
    clamp_normalizer(
        config.clutter_intensity
            + born as f64 * birth_intensity(config.birth_weight, explained)
            + explained,
        r,
    )
}

fn clamp_normalizer(g: f64, r: usize) -> f64 {
    if g > NORMALIZER_FLOOR {
        g
    } else {
        debug!("intensity normalizer for measurement {r} clamped ({g:e})");
        NORMALIZER_FLOOR
    }
}

/// Normalizers for every measurement, computed against one frozen set of states.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensitySnapshot {
    pub normalizers: Vec<f64>,
}

impl IntensitySnapshot {
    pub fn capture(
        pop: &ParticlePopulation,
        zs: &[Measurement],
        lik: &GaussianLikelihood,
        config: &FilterConfig,
    ) -> Self {
        let mut born_per_measurement = vec![0usize; zs.len()];
        for &o in &pop.birth_origin {
            if o < zs.len() {
                born_per_measurement[o] += 1;
            }
        }
        let normalizers = zs
            .iter()
            .enumerate()
            .map(|(r, z)| {
                let explained = explained_mass(pop.surviving_particles(), z, lik);
                clamp_normalizer(
                    config.clutter_intensity
                        + born_per_measurement[r] as f64
                            * birth_intensity(config.birth_weight, explained)
                        + explained,
                    r,
                )
            })
            .collect();
        Self { normalizers }
    }
}

/// IPF drift for one particle:
/// `f = −[Σ_r λ p_D ∇²h^r / G^r − P⁻¹]⁻¹ Σ_r p_D ∇h^r / G^r`.
///
/// Degenerate when the curvature sum leaves less than [`BRACKET_MARGIN`]·P⁻¹.
pub fn ipf_flow(
    particle: &Particle,
    snapshot: &IntensitySnapshot,
    zs: &[Measurement],
    lik: &GaussianLikelihood,
    detection_probability: f64,
    lambda: f64,
    jitter: f64,
) -> Result<Flow> {
    if !(0.0..=1.0).contains(&lambda) {
        return Err(Error::InvalidArgument(format!("lambda must be in [0, 1], got {lambda}")));
    }
    if zs.is_empty() {
        return Err(Error::EmptyMeasurements);
    }
    if snapshot.normalizers.len() != zs.len() {
        return Err(Error::LengthMismatch(snapshot.normalizers.len(), zs.len()));
    }
    let Some(p_inv) = inverse_covariance(&particle.covariance) else {
        return Ok(Flow::zero());
    };
    let mut drive = Vector4::zeros();
    let mut curvature = Matrix4::zeros();
    for (z, g) in zs.iter().zip(&snapshot.normalizers) {
        let (_, grad, hess) = lik.density_derivatives(&particle.state, z);
        let scale = detection_probability / g;
        drive += grad * scale;
        curvature += hess * (lambda * scale);
    }
    if (p_inv * (1.0 - BRACKET_MARGIN) - curvature).cholesky().is_none() {
        return Ok(Flow::zero());
    }
    let a = p_inv - curvature;
    Ok(solve_regularized(&a, &drive, jitter)
        .map(|drift| Flow {
            drift,
            degenerate: false,
        })
        .unwrap_or_else(Flow::zero))
}

/// Counters reported by [`migrate`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MigrationStats {
    /// Particles frozen by the sensor-resolution stop.
    pub converged: usize,
    /// Particles frozen because their solve failed.
    pub degenerate: usize,
}

/// Moves particles through pseudo-time. NPF moves every particle; IPF moves
/// only the surviving prefix. Ordering, weights and covariances are untouched.
pub fn migrate<R: Rng + ?Sized>(
    pop: &ParticlePopulation,
    zs: &[Measurement],
    kind: FlowKind,
    flow_config: &FlowConfig,
    filter_config: &FilterConfig,
    rng: &mut R,
) -> Result<(ParticlePopulation, MigrationStats)> {
    let lik = GaussianLikelihood::new(&filter_config.noise.measurement_noise_cov)?;
    migrate_with(pop, zs, kind, flow_config, filter_config, &lik, rng)
}

pub(crate) fn migrate_with<R: Rng + ?Sized>(
    pop: &ParticlePopulation,
    zs: &[Measurement],
    kind: FlowKind,
    flow_config: &FlowConfig,
    filter_config: &FilterConfig,
    lik: &GaussianLikelihood,
    rng: &mut R,
) -> Result<(ParticlePopulation, MigrationStats)> {
    let mut stats = MigrationStats::default();
    if kind == FlowKind::None || zs.is_empty() || pop.is_empty() {
        return Ok((pop.clone(), stats));
    }
    flow_config.validate()?;
    let movable = match kind {
        FlowKind::Npf => pop.len(),
        FlowKind::Ipf => pop.surviving_count,
        FlowKind::None => unreachable!(),
    };
    // one seed-derived stream per particle index
    let base_seed: u64 = rng.random();
    let mut streams: Vec<ChaCha8Rng> = if flow_config.diffusion > 0.0 {
        (0..movable)
            .map(|i| {
                let mut s = ChaCha8Rng::seed_from_u64(base_seed);
                s.set_stream(i as u64);
                s
            })
            .collect()
    } else {
        Vec::new()
    };

    let mut out = pop.clone();
    let mut frozen = vec![false; movable];
    let dl = flow_config.delta_lambda();
    for lambda in flow_config.lambdas() {
        if frozen.iter().all(|f| *f) {
            break;
        }
        let snapshot = (kind == FlowKind::Ipf)
            .then(|| IntensitySnapshot::capture(&out, zs, lik, filter_config));
        for i in 0..movable {
            if frozen[i] {
                continue;
            }
            let particle = &out.particles[i];
            let flow = match &snapshot {
                Some(s) => ipf_flow(
                    particle,
                    s,
                    zs,
                    lik,
                    filter_config.detection_probability,
                    lambda,
                    flow_config.jitter,
                )?,
                None => npf_flow(particle, zs, lik, lambda, flow_config.jitter)?,
            };
            if flow.degenerate {
                frozen[i] = true;
                stats.degenerate += 1;
                continue;
            }
            let mut step = flow.drift * dl;
            if let Some(stream) = streams.get_mut(i) {
                let w = Vector4::from_fn(|_, _| StandardNormal.sample(stream));
                step += w * flow_config.diffusion;
            }
            if step.norm() < flow_config.sensor_resolution {
                frozen[i] = true;
                stats.converged += 1;
                continue;
            }
            let moved = particle.state.displaced(&step);
            out.particles[i].state = moved;
        }
    }
    Ok((out, stats))
}
