//! OSPA distance between estimated and true target sets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::TargetState;

/// Cutoff `c` (degrees) and order `p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OspaParams {
    pub cutoff: f64,
    pub order: f64,
}

impl Default for OspaParams {
    fn default() -> Self {
        Self {
            cutoff: 20.0,
            order: 1.0,
        }
    }
}

impl OspaParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.cutoff > 0.0) || !self.cutoff.is_finite() {
            return Err(Error::InvalidArgument(format!("cutoff must be > 0, got {}", self.cutoff)));
        }
        if !(self.order >= 1.0) || !self.order.is_finite() {
            return Err(Error::InvalidArgument(format!("order must be >= 1, got {}", self.order)));
        }
        Ok(())
    }
}

/// Minimum-cost assignment of rows to distinct columns (`rows ≤ cols`).
///
/// Shortest augmenting path Hungarian method with row/column potentials,
/// O(rows² · cols). Returns the column chosen for each row.
pub fn optimal_assignment(cost: &[Vec<f64>]) -> Vec<usize> {
    let n = cost.len();
    if n == 0 {
        return Vec::new();
    }
    let m = cost[0].len();
    assert!(n <= m, "more rows than columns");
    // 1-based internally; column 0 is the virtual start
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost[i0 - 1][j - 1] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut result = vec![0; n];
    for j in 1..=m {
        if owner[j] != 0 {
            result[owner[j] - 1] = j - 1;
        }
    }
    result
}

/// OSPA distance on (azimuth, elevation) with wrapped azimuth.
pub fn ospa(estimates: &[TargetState], truth: &[TargetState], params: &OspaParams) -> f64 {
    let (small, large) = if estimates.len() <= truth.len() {
        (estimates, truth)
    } else {
        (truth, estimates)
    };
    let (m, n) = (small.len(), large.len());
    if n == 0 {
        return 0.0;
    }
    let c = params.cutoff;
    let p = params.order;
    let cost: Vec<Vec<f64>> = small
        .iter()
        .map(|a| {
            large
                .iter()
                .map(|b| a.position_distance(b).min(c).powf(p))
                .collect()
        })
        .collect();
    let assigned: f64 = optimal_assignment(&cost)
        .iter()
        .enumerate()
        .map(|(i, &j)| cost[i][j])
        .sum();
    ((assigned + c.powf(p) * (n - m) as f64) / n as f64).powf(1.0 / p)
}

/// Mean and per-frame OSPA over a sequence.
pub fn ospa_sequence(
    estimates: &[Vec<TargetState>],
    truth: &[Vec<TargetState>],
    params: &OspaParams,
) -> Result<(f64, Vec<f64>)> {
    if estimates.len() != truth.len() {
        return Err(Error::LengthMismatch(estimates.len(), truth.len()));
    }
    let per_frame: Vec<f64> = estimates
        .iter()
        .zip(truth)
        .map(|(e, t)| ospa(e, t, params))
        .collect();
    let mean = if per_frame.is_empty() {
        0.0
    } else {
        per_frame.iter().sum::<f64>() / per_frame.len() as f64
    };
    Ok((mean, per_frame))
}
