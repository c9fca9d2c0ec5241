//! Weighted k-means on (azimuth, elevation) with circular azimuth.

use rand::Rng;

use crate::model::{angular_difference, doa_distance, wrap_azimuth};

const MAX_ITERATIONS: usize = 100;
/// Independent seedings per call; the lowest weighted inertia wins.
pub const RESTARTS: usize = 8;

/// Centroids and per-point cluster labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    pub centroids: Vec<(f64, f64)>,
    pub assignment: Vec<usize>,
}

fn nearest_centroid(p: (f64, f64), centroids: &[(f64, f64)]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = doa_distance(p.0, p.1, c.0, c.1);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Draws an index with probability proportional to `mass`; `None` if all mass is zero.
fn sample_proportional<R: Rng + ?Sized>(mass: &[f64], rng: &mut R) -> Option<usize> {
    let total: f64 = mass.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return None;
    }
    let mut u = rng.random::<f64>() * total;
    let mut last_positive = None;
    for (i, &m) in mass.iter().enumerate() {
        if m > 0.0 {
            if u < m {
                return Some(i);
            }
            u -= m;
            last_positive = Some(i);
        }
    }
    last_positive
}

/// k-means++ seeding with weights: first seed ∝ w, subsequent seeds ∝ w·D².
fn seed<R: Rng + ?Sized>(
    points: &[(f64, f64)],
    weights: &[f64],
    k: usize,
    rng: &mut R,
) -> Vec<(f64, f64)> {
    let n = points.len();
    let first = sample_proportional(weights, rng).unwrap_or_else(|| rng.random_range(0..n));
    let mut centroids = vec![points[first]];
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| doa_distance(p.0, p.1, points[first].0, points[first].1).powi(2))
        .collect();
    while centroids.len() < k {
        let mass: Vec<f64> = d2.iter().zip(weights).map(|(d, w)| d * w).collect();
        let next = sample_proportional(&mass, rng)
            .or_else(|| sample_proportional(&d2, rng))
            .unwrap_or_else(|| rng.random_range(0..n));
        let c = points[next];
        centroids.push(c);
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(doa_distance(p.0, p.1, c.0, c.1).powi(2));
        }
    }
    centroids
}

/// Weighted Lloyd iterations from [`RESTARTS`] k-means++ seedings, keeping
/// the run with the lowest weighted inertia (earliest on ties).
///
/// `k` must be in `1..=points.len()`. Ties in assignment go to the lower
/// centroid index. A cluster that empties keeps its previous centroid.
/// All-zero weights are treated as uniform.
pub fn weighted_kmeans<R: Rng + ?Sized>(
    points: &[(f64, f64)],
    weights: &[f64],
    k: usize,
    rng: &mut R,
) -> Clustering {
    assert!(k >= 1 && k <= points.len(), "k out of range");
    assert_eq!(points.len(), weights.len());

    let total: f64 = weights.iter().sum();
    let uniform;
    let weights = if total > 0.0 && total.is_finite() {
        weights
    } else {
        uniform = vec![1.0; points.len()];
        &uniform
    };
    let mut best: Option<(f64, Clustering)> = None;
    for _ in 0..RESTARTS {
        let run = lloyd(points, weights, k, rng);
        let cost = inertia(points, weights, &run);
        if best.as_ref().map_or(true, |(b, _)| cost < *b) {
            best = Some((cost, run));
        }
    }
    best.expect("at least one restart").1
}

fn inertia(points: &[(f64, f64)], weights: &[f64], c: &Clustering) -> f64 {
    points
        .iter()
        .zip(weights)
        .zip(&c.assignment)
        .map(|((p, w), &a)| {
            let m = c.centroids[a];
            w * doa_distance(p.0, p.1, m.0, m.1).powi(2)
        })
        .sum()
}

fn lloyd<R: Rng + ?Sized>(
    points: &[(f64, f64)],
    weights: &[f64],
    k: usize,
    rng: &mut R,
) -> Clustering {
    let mut centroids = seed(points, weights, k, rng);
    let mut assignment = vec![usize::MAX; points.len()];
    for _ in 0..MAX_ITERATIONS {
        let mut changed = false;
        for (a, p) in assignment.iter_mut().zip(points) {
            let (j, _) = nearest_centroid(*p, &centroids);
            if *a != j {
                *a = j;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        centroids = centroids
            .iter()
            .enumerate()
            .map(|(j, &c)| {
                let members = || {
                    assignment
                        .iter()
                        .zip(points.iter().zip(weights))
                        .filter(move |(a, _)| **a == j)
                        .map(|(_, pw)| pw)
                };
                let wsum: f64 = members().map(|(_, w)| *w).sum();
                let count = members().count();
                if count == 0 {
                    return c;
                }
                let (mut daz, mut el) = (0.0, 0.0);
                for (p, w) in members() {
                    let w = if wsum > 0.0 { *w / wsum } else { 1.0 / count as f64 };
                    daz += w * angular_difference(p.0, c.0);
                    el += w * p.1;
                }
                (wrap_azimuth(c.0 + daz), el)
            })
            .collect();
    }
    Clustering {
        centroids,
        assignment,
    }
}
