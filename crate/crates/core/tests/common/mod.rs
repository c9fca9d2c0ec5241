#![allow(dead_code)]

use nalgebra::{Matrix2, Matrix4, Vector4};
use phd_core::{Measurement, TargetState};
use rand::Rng;

/// Random SPD 2×2 with eigenvalues in [1, 9].
pub fn spd2<R: Rng>(rng: &mut R) -> Matrix2<f64> {
    let t: f64 = rng.random_range(0.0..std::f64::consts::PI);
    let rot = Matrix2::new(t.cos(), -t.sin(), t.sin(), t.cos());
    let d = Matrix2::from_diagonal(&nalgebra::Vector2::new(
        rng.random_range(1.0..9.0),
        rng.random_range(1.0..9.0),
    ));
    let m = rot * d * rot.transpose();
    (m + m.transpose()) * 0.5
}

/// Random SPD 4×4 with eigenvalues in [lo, hi].
pub fn spd4<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> Matrix4<f64> {
    let a = Matrix4::from_fn(|_, _| rng.random_range(-1.0..1.0));
    let q = a.qr().q();
    let d = Vector4::from_fn(|_, _| rng.random_range(lo..hi));
    let m = q * Matrix4::from_diagonal(&d) * q.transpose();
    (m + m.transpose()) * 0.5
}

pub fn state<R: Rng>(rng: &mut R) -> TargetState {
    TargetState::new(
        rng.random_range(0.0..360.0),
        rng.random_range(-80.0..80.0),
        rng.random_range(-2.0..2.0),
        rng.random_range(-2.0..2.0),
    )
}

/// A measurement within `spread` degrees of `s` on each axis (azimuth wraps).
pub fn near<R: Rng>(rng: &mut R, s: &TargetState, spread: f64) -> Measurement {
    Measurement::new(
        s.azimuth + rng.random_range(-spread..spread),
        (s.elevation + rng.random_range(-spread..spread)).clamp(-90.0, 90.0),
    )
}

/// `|a − b|_∞ ≤ tol · max(|b|_∞, floor)`.
pub fn close4(a: &Vector4<f64>, b: &Vector4<f64>, tol: f64, floor: f64) -> bool {
    (a - b).amax() <= tol * b.amax().max(floor)
}

pub fn close44(a: &Matrix4<f64>, b: &Matrix4<f64>, tol: f64, floor: f64) -> bool {
    (a - b).amax() <= tol * b.amax().max(floor)
}

pub mod oracles;
