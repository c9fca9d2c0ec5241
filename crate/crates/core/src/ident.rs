//! Track identity management on top of the per-frame PHD estimates.
//!
//! The number of reported tracks follows the running mean of the estimated
//! counts. Each frame, previous tracks (in id order) greedily take their
//! nearest unconsumed estimate; surplus estimates are dropped as noise, and
//! when estimates are short, tracks whose nearest candidate lies outside the
//! gate are coasted on their own dynamics.

use nalgebra::Vector4;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::optimal_assignment;
use crate::model::{transition, TargetState};

/// A labelled target estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrackEstimate {
    pub id: u32,
    pub state: TargetState,
    pub weight: f64,
    /// Propagated by the motion model rather than matched to an estimate.
    pub coasting: bool,
}

/// Rounds a non-negative mean half-up: `sum / k` with `.5` going up.
fn round_half_up(sum: usize, k: usize) -> usize {
    (2 * sum + k) / (2 * k)
}

/// Mean of the per-frame counts, rounded half-up.
pub fn mean_target_count(history: &[usize]) -> Result<usize> {
    if history.is_empty() {
        return Err(Error::EmptyHistory);
    }
    Ok(round_half_up(history.iter().sum(), history.len()))
}

/// Per-frame estimated counts.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CountHistory {
    counts: Vec<usize>,
    /// Leading frames left out of the mean (0 keeps every frame).
    warmup: usize,
}

impl CountHistory {
    pub fn with_warmup(warmup: usize) -> Self {
        Self {
            counts: Vec::new(),
            warmup,
        }
    }

    pub fn push(&mut self, count: usize) {
        self.counts.push(count);
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    /// Running mean count; during warm-up the latest count is used as is.
    pub fn mean(&self) -> Result<usize> {
        if self.counts.len() > self.warmup {
            mean_target_count(&self.counts[self.warmup..])
        } else {
            self.counts.last().copied().ok_or(Error::EmptyHistory)
        }
    }
}

/// Outcome of matching previous tracks to current estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct Matching {
    pub tracks: Vec<TrackEstimate>,
    /// `true` for every current estimate that was taken by a track.
    pub consumed: Vec<bool>,
}

fn nearest_unconsumed(
    track: &TrackEstimate,
    current: &[(TargetState, f64)],
    consumed: &[bool],
) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (j, (s, _)) in current.iter().enumerate() {
        if consumed[j] {
            continue;
        }
        let d = track.state.position_distance(s);
        if best.map_or(true, |(_, bd)| d < bd) {
            best = Some((j, d));
        }
    }
    best
}

/// Greedy nearest matching in id order, with the gate and coasting applied
/// only when there are fewer estimates than tracks.
pub fn match_tracks(
    prev: &[TrackEstimate],
    current: &[(TargetState, f64)],
    gate: f64,
    dt: f64,
) -> Result<Matching> {
    if !(gate > 0.0) {
        return Err(Error::InvalidArgument(format!("gate must be > 0, got {gate}")));
    }
    let mut order: Vec<usize> = (0..prev.len()).collect();
    order.sort_by_key(|&i| prev[i].id);
    let under_count = current.len() < prev.len();
    let mut consumed = vec![false; current.len()];
    let mut tracks = prev.to_vec();
    for i in order {
        let track = &prev[i];
        let candidate = nearest_unconsumed(track, current, &consumed)
            .filter(|(_, d)| !under_count || *d <= gate);
        tracks[i] = match candidate {
            Some((j, _)) => {
                consumed[j] = true;
                TrackEstimate {
                    id: track.id,
                    state: current[j].0,
                    weight: current[j].1,
                    coasting: false,
                }
            }
            None => TrackEstimate {
                id: track.id,
                state: transition(&track.state, dt, &Vector4::zeros())?,
                weight: track.weight,
                coasting: true,
            },
        };
    }
    Ok(Matching { tracks, consumed })
}

/// Labels `current` estimates with the ids of `prev`; output has `prev.len()` tracks.
pub fn assign_ids(
    prev: &[TrackEstimate],
    current: &[(TargetState, f64)],
    gate: f64,
    dt: f64,
) -> Result<Vec<TrackEstimate>> {
    Ok(match_tracks(prev, current, gate, dt)?.tracks)
}

/// Identity session: count history, live tracks and id bookkeeping.
#[derive(Debug, Clone)]
pub struct IdentityTracker {
    history: CountHistory,
    tracks: Vec<TrackEstimate>,
    coast_streak: Vec<usize>,
    next_id: u32,
    gate: f64,
    dt: f64,
}

impl IdentityTracker {
    pub fn new(gate: f64, dt: f64) -> Result<Self> {
        Self::with_warmup(gate, dt, 0)
    }

    pub fn with_warmup(gate: f64, dt: f64, warmup: usize) -> Result<Self> {
        if !(gate > 0.0) {
            return Err(Error::InvalidArgument(format!("gate must be > 0, got {gate}")));
        }
        if !(dt > 0.0) {
            return Err(Error::InvalidArgument(format!("dt must be > 0, got {dt}")));
        }
        Ok(Self {
            history: CountHistory::with_warmup(warmup),
            tracks: Vec::new(),
            coast_streak: Vec::new(),
            next_id: 1,
            gate,
            dt,
        })
    }

    pub fn history(&self) -> &CountHistory {
        &self.history
    }

    pub fn tracks(&self) -> &[TrackEstimate] {
        &self.tracks
    }

    /// Consumes one frame of estimates and returns the labelled tracks (id order).
    ///
    /// When the mean count shrinks, the tracks with the longest coasting streak
    /// are retired first. When it grows, fresh ids go to the heaviest unmatched
    /// estimates; if none are left the growth waits for a later frame.
    pub fn step(&mut self, estimates: &[(TargetState, f64)]) -> Result<Vec<TrackEstimate>> {
        self.history.push(estimates.len());
        let target = self.history.mean()?;

        while self.tracks.len() > target {
            let victim = (0..self.tracks.len())
                .max_by_key(|&i| (self.coast_streak[i], self.tracks[i].id))
                .expect("non-empty");
            self.tracks.remove(victim);
            self.coast_streak.remove(victim);
        }

        let Matching { tracks, consumed } =
            match_tracks(&self.tracks, estimates, self.gate, self.dt)?;
        for (streak, t) in self.coast_streak.iter_mut().zip(&tracks) {
            *streak = if t.coasting { *streak + 1 } else { 0 };
        }
        self.tracks = tracks;

        if self.tracks.len() < target {
            let mut spare: Vec<usize> = (0..estimates.len()).filter(|&j| !consumed[j]).collect();
            spare.sort_by(|&a, &b| estimates[b].1.total_cmp(&estimates[a].1).then(a.cmp(&b)));
            for j in spare.into_iter().take(target - self.tracks.len()) {
                self.tracks.push(TrackEstimate {
                    id: self.next_id,
                    state: estimates[j].0,
                    weight: estimates[j].1,
                    coasting: false,
                });
                self.coast_streak.push(0);
                self.next_id += 1;
            }
        }
        Ok(self.tracks.clone())
    }
}

/// Counts how often the track label associated with each true target changes.
///
/// Each frame, truths and tracks are paired by optimal assignment on
/// positional distance; pairs farther than `cutoff` are ignored.
#[derive(Debug, Clone, Default)]
pub struct LabelSwitchCounter {
    last_label: std::collections::HashMap<u32, u32>,
    switches: usize,
}

impl LabelSwitchCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn observe(&mut self, truth: &[(u32, TargetState)], tracks: &[TrackEstimate], cutoff: f64) {
        if truth.is_empty() || tracks.is_empty() {
            return;
        }
        let truth_rows = truth.len() <= tracks.len();
        let cost: Vec<Vec<f64>> = if truth_rows {
            truth
                .iter()
                .map(|(_, t)| tracks.iter().map(|k| t.position_distance(&k.state)).collect())
                .collect()
        } else {
            tracks
                .iter()
                .map(|k| truth.iter().map(|(_, t)| t.position_distance(&k.state)).collect())
                .collect()
        };
        for (row, col) in optimal_assignment(&cost).into_iter().enumerate() {
            if cost[row][col] > cutoff {
                continue;
            }
            let (ti, ki) = if truth_rows { (row, col) } else { (col, row) };
            let label = tracks[ki].id;
            if let Some(prev) = self.last_label.insert(truth[ti].0, label) {
                if prev != label {
                    self.switches += 1;
                }
            }
        }
    }

    pub fn switches(&self) -> usize {
        self.switches
    }
}
