//! Domain types, angular geometry, and the motion / measurement models.
//!
//! States live in degrees: azimuth in `[0, 360)`, elevation in `[-90, 90]`,
//! plus their angular rates in degrees per second. Azimuth is circular, so
//! every difference taken on it goes through [`angular_difference`].

use std::f64::consts::PI;

use nalgebra::{Matrix2, Matrix4, Vector2, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper bound on the condition number accepted for the measurement noise.
pub const DEFAULT_MAX_CONDITION: f64 = 1e12;

/// Wraps an azimuth into `[0, 360)`.
pub fn wrap_azimuth(azimuth: f64) -> f64 {
    let wrapped = azimuth.rem_euclid(360.0);
    // rem_euclid of a tiny negative value rounds up to exactly 360
    if wrapped >= 360.0 {
        0.0
    } else {
        wrapped
    }
}

/// Signed shortest arc from `b` to `a` in `(-180, 180]`, unchecked.
#[inline]
pub fn angular_difference(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    if d > 180.0 {
        d - 360.0
    } else {
        d
    }
}

/// Signed shortest arc from `b` to `a`, rejecting non-finite input.
pub fn wrap_angular_difference(a: f64, b: f64) -> Result<f64> {
    if !a.is_finite() || !b.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "angles must be finite, got {a} and {b}"
        )));
    }
    Ok(angular_difference(a, b))
}

/// Euclidean distance between two (azimuth, elevation) points with wrapped azimuth.
#[inline]
pub fn doa_distance(az_a: f64, el_a: f64, az_b: f64, el_b: f64) -> f64 {
    angular_difference(az_a, az_b).hypot(el_a - el_b)
}

/// Azimuth, elevation and their rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetState {
    pub azimuth: f64,
    pub elevation: f64,
    pub azimuth_rate: f64,
    pub elevation_rate: f64,
}

impl TargetState {
    /// Builds a state, wrapping azimuth and clamping elevation.
    pub fn new(azimuth: f64, elevation: f64, azimuth_rate: f64, elevation_rate: f64) -> Self {
        Self {
            azimuth: wrap_azimuth(azimuth),
            elevation: elevation.clamp(-90.0, 90.0),
            azimuth_rate,
            elevation_rate,
        }
    }

    pub fn try_new(
        azimuth: f64,
        elevation: f64,
        azimuth_rate: f64,
        elevation_rate: f64,
    ) -> Result<Self> {
        let all = [azimuth, elevation, azimuth_rate, elevation_rate];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "state components must be finite: {all:?}"
            )));
        }
        Ok(Self::new(azimuth, elevation, azimuth_rate, elevation_rate))
    }

    pub fn from_vector(v: &Vector4<f64>) -> Self {
        Self::new(v[0], v[1], v[2], v[3])
    }

    pub fn to_vector(&self) -> Vector4<f64> {
        Vector4::new(
            self.azimuth,
            self.elevation,
            self.azimuth_rate,
            self.elevation_rate,
        )
    }

    /// Adds a displacement and re-normalizes.
    pub fn displaced(&self, delta: &Vector4<f64>) -> Self {
        Self::from_vector(&(self.to_vector() + delta))
    }

    /// Wrapped difference `self - other` as a 4-vector.
    pub fn difference(&self, other: &TargetState) -> Vector4<f64> {
        Vector4::new(
            angular_difference(self.azimuth, other.azimuth),
            self.elevation - other.elevation,
            self.azimuth_rate - other.azimuth_rate,
            self.elevation_rate - other.elevation_rate,
        )
    }

    /// Positional distance to another state (rates ignored).
    pub fn position_distance(&self, other: &TargetState) -> f64 {
        doa_distance(self.azimuth, self.elevation, other.azimuth, other.elevation)
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|v| v.is_finite())
    }
}

/// A DOA measurement in degrees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub azimuth: f64,
    pub elevation: f64,
}

impl Measurement {
    pub fn new(azimuth: f64, elevation: f64) -> Self {
        Self {
            azimuth: wrap_azimuth(azimuth),
            elevation: elevation.clamp(-90.0, 90.0),
        }
    }

    pub fn distance_to(&self, state: &TargetState) -> f64 {
        doa_distance(state.azimuth, state.elevation, self.azimuth, self.elevation)
    }
}

/// A weighted particle with its own covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct Particle {
    pub state: TargetState,
    pub weight: f64,
    pub covariance: Matrix4<f64>,
}

impl Particle {
    pub fn new(state: TargetState, weight: f64, covariance: Matrix4<f64>) -> Self {
        Self {
            state,
            weight,
            covariance,
        }
    }
}

/// Process noise `Q` (4x4) and measurement noise `R` (2x2).
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    pub process_noise_cov: Matrix4<f64>,
    pub measurement_noise_cov: Matrix2<f64>,
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            process_noise_cov: Matrix4::from_diagonal(&Vector4::new(1.0, 1.0, 0.25, 0.25)),
            measurement_noise_cov: Matrix2::from_diagonal(&Vector2::new(4.0, 4.0)),
        }
    }
}

impl NoiseModel {
    pub fn validate(&self, max_condition: f64) -> Result<()> {
        if !is_spd4(&self.process_noise_cov) {
            return Err(Error::Singular("process noise covariance"));
        }
        check_measurement_covariance(&self.measurement_noise_cov, max_condition)
    }

    /// Lower Cholesky factor of `Q`, used to sample process noise.
    pub fn process_noise_factor(&self) -> Result<Matrix4<f64>> {
        self.process_noise_cov
            .cholesky()
            .map(|c| c.l())
            .ok_or(Error::Singular("process noise covariance"))
    }
}

fn is_symmetric<const N: usize>(m: &nalgebra::SMatrix<f64, N, N>) -> bool {
    let scale = m.amax().max(1.0);
    (m - m.transpose()).amax() <= 1e-12 * scale
}

pub(crate) fn is_spd4(m: &Matrix4<f64>) -> bool {
    is_symmetric(m) && m.cholesky().is_some()
}

fn check_measurement_covariance(r: &Matrix2<f64>, max_condition: f64) -> Result<()> {
    if !r.iter().all(|v| v.is_finite()) || !is_symmetric(r) {
        return Err(Error::Singular("measurement covariance must be finite and symmetric"));
    }
    let eig = r.symmetric_eigenvalues();
    let (lo, hi) = (eig.min(), eig.max());
    if lo <= 0.0 {
        return Err(Error::Singular("measurement covariance is not positive definite"));
    }
    if hi / lo > max_condition {
        return Err(Error::Singular("measurement covariance is ill-conditioned"));
    }
    Ok(())
}

/// Constant-angular-velocity step with additive noise.
pub fn transition(state: &TargetState, dt: f64, noise: &Vector4<f64>) -> Result<TargetState> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    Ok(TargetState::new(
        state.azimuth + state.azimuth_rate * dt + noise[0],
        state.elevation + state.elevation_rate * dt + noise[1],
        state.azimuth_rate + noise[2],
        state.elevation_rate + noise[3],
    ))
}

/// The constant-velocity transition matrix for step `dt`.
pub fn transition_matrix(dt: f64) -> Matrix4<f64> {
    let mut f = Matrix4::identity();
    f[(0, 2)] = dt;
    f[(1, 3)] = dt;
    f
}

/// `F P Fᵀ + Q`.
pub fn propagate_covariance(p: &Matrix4<f64>, dt: f64, q: &Matrix4<f64>) -> Matrix4<f64> {
    let f = transition_matrix(dt);
    let out = f * p * f.transpose() + q;
    (out + out.transpose()) * 0.5
}

/// Projects the state onto (azimuth, elevation) and adds measurement noise.
pub fn measure(state: &TargetState, noise: &Vector2<f64>) -> Measurement {
    Measurement::new(state.azimuth + noise[0], state.elevation + noise[1])
}

/// Bivariate Gaussian likelihood `N(Hm; z, R)` with precomputed inverse.
///
/// `H = [I₂ | 0]`, so derivatives only populate the positional block.
#[derive(Debug, Clone)]
pub struct GaussianLikelihood {
    cov: Matrix2<f64>,
    inv: Matrix2<f64>,
    norm: f64,
}

impl GaussianLikelihood {
    pub fn new(cov: &Matrix2<f64>) -> Result<Self> {
        Self::with_condition_bound(cov, DEFAULT_MAX_CONDITION)
    }

    pub fn with_condition_bound(cov: &Matrix2<f64>, max_condition: f64) -> Result<Self> {
        check_measurement_covariance(cov, max_condition)?;
        let chol = cov
            .cholesky()
            .ok_or(Error::Singular("measurement covariance"))?;
        let inv = chol.inverse();
        let det = cov.determinant();
        Ok(Self {
            cov: *cov,
            inv,
            norm: 1.0 / (2.0 * PI * det.sqrt()),
        })
    }

    pub fn covariance(&self) -> &Matrix2<f64> {
        &self.cov
    }

    pub fn inverse(&self) -> &Matrix2<f64> {
        &self.inv
    }

    /// Wrapped residual `Hm − z`.
    #[inline]
    pub fn residual(&self, state: &TargetState, z: &Measurement) -> Vector2<f64> {
        Vector2::new(
            angular_difference(state.azimuth, z.azimuth),
            state.elevation - z.elevation,
        )
    }

    #[inline]
    pub fn density(&self, state: &TargetState, z: &Measurement) -> f64 {
        let nu = self.residual(state, z);
        self.norm * (-0.5 * nu.dot(&(self.inv * nu))).exp()
    }

    /// `∇h = −h Hᵀ R⁻¹ ν`.
    pub fn gradient(&self, state: &TargetState, z: &Measurement) -> Vector4<f64> {
        let nu = self.residual(state, z);
        let h = self.norm * (-0.5 * nu.dot(&(self.inv * nu))).exp();
        let g = -h * (self.inv * nu);
        Vector4::new(g[0], g[1], 0.0, 0.0)
    }

    /// `∇²h = h Hᵀ[R⁻¹ννᵀR⁻¹ − R⁻¹]H`.
    pub fn hessian(&self, state: &TargetState, z: &Measurement) -> Matrix4<f64> {
        self.density_derivatives(state, z).2
    }

    /// Density, gradient and Hessian from one residual evaluation.
    pub fn density_derivatives(
        &self,
        state: &TargetState,
        z: &Measurement,
    ) -> (f64, Vector4<f64>, Matrix4<f64>) {
        let nu = self.residual(state, z);
        let a = self.inv * nu;
        let h = self.norm * (-0.5 * nu.dot(&a)).exp();
        let block = h * (a * a.transpose() - self.inv);
        let mut hess = Matrix4::zeros();
        hess.fixed_view_mut::<2, 2>(0, 0).copy_from(&block);
        // exact symmetry
        hess[(1, 0)] = hess[(0, 1)];
        (h, Vector4::new(-h * a[0], -h * a[1], 0.0, 0.0), hess)
    }

    /// `∇ln h` and `∇²ln h`.
    ///
    /// Taken as `∇h/h` and `∇²h/h − ∇h∇hᵀ/h²`; when `h` underflows the Gaussian
    /// closed forms `−HᵀR⁻¹ν` and `−HᵀR⁻¹H` are used instead.
    pub fn log_derivatives(
        &self,
        state: &TargetState,
        z: &Measurement,
    ) -> (Vector4<f64>, Matrix4<f64>) {
        let (h, g, hess) = self.density_derivatives(state, z);
        if h.is_normal() {
            let lg = g / h;
            // h² can underflow where h does not
            let lh = hess / h - lg * lg.transpose();
            (lg, (lh + lh.transpose()) * 0.5)
        } else {
            let a = self.inv * self.residual(state, z);
            let mut lh = Matrix4::zeros();
            lh.fixed_view_mut::<2, 2>(0, 0).copy_from(&(-self.inv));
            (Vector4::new(-a[0], -a[1], 0.0, 0.0), lh)
        }
    }

    /// Index of the nearest measurement (wrapped distance); ties go to the lower index.
    pub fn nearest(&self, state: &TargetState, zs: &[Measurement]) -> Result<usize> {
        nearest_measurement_index(state, zs)
    }
}

/// Index of the wrapped-distance-nearest measurement, lowest index on ties.
pub fn nearest_measurement_index(state: &TargetState, zs: &[Measurement]) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, z) in zs.iter().enumerate() {
        let d = z.distance_to(state);
        match best {
            Some((_, bd)) if d >= bd => {}
            _ => best = Some((i, d)),
        }
    }
    best.map(|(i, _)| i).ok_or(Error::EmptyMeasurements)
}

pub fn gaussian_likelihood(state: &TargetState, z: &Measurement, r: &Matrix2<f64>) -> Result<f64> {
    Ok(GaussianLikelihood::new(r)?.density(state, z))
}

pub fn nearest_measurement_likelihood(
    state: &TargetState,
    zs: &[Measurement],
    r: &Matrix2<f64>,
) -> Result<f64> {
    let lik = GaussianLikelihood::new(r)?;
    let idx = nearest_measurement_index(state, zs)?;
    Ok(lik.density(state, &zs[idx]))
}

pub fn likelihood_gradient(
    state: &TargetState,
    z: &Measurement,
    r: &Matrix2<f64>,
) -> Result<Vector4<f64>> {
    Ok(GaussianLikelihood::new(r)?.gradient(state, z))
}

pub fn likelihood_hessian(
    state: &TargetState,
    z: &Measurement,
    r: &Matrix2<f64>,
) -> Result<Matrix4<f64>> {
    Ok(GaussianLikelihood::new(r)?.hessian(state, z))
}
