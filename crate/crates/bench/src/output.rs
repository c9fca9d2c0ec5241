//! CSV outputs of an experiment.
//!
//! `<output>/scores.csv`: filter, run, mean_ospa, std_ospa, label_switches, seconds_per_frame
//! `<output>/summary.csv`: filter, runs, mean_ospa, std_ospa, mean_label_switches, seconds_per_frame
//! `<output>/frame_ospa.csv`: filter, run, frame, ospa
//! `<output>/trajectories/<filter>_run<NNN>.csv` and `truth_run<NNN>.csv`:
//! frame, track_id, azimuth, elevation, azimuth_rate, elevation_rate, weight, coasting

use std::fs;
use std::path::{Path, PathBuf};

use phd_core::sim::{simulate, FrameRecord};
use phd_core::TargetState;
use serde::Serialize;

use crate::error::BenchError;
use crate::experiment::{
    run_experiment, ExperimentResult, ExperimentSpec, FilterKind, TrajectoryRow,
};

pub fn trajectory_path(output: &Path, filter: FilterKind, run: usize) -> PathBuf {
    output.join("trajectories").join(format!("{filter}_run{run:03}.csv"))
}

pub fn truth_path(output: &Path, run: usize) -> PathBuf {
    output.join("trajectories").join(format!("truth_run{run:03}.csv"))
}

/// Creates the output tree and checks it accepts files.
pub fn prepare_output(output: &Path) -> Result<(), BenchError> {
    let dir = output.join("trajectories");
    fs::create_dir_all(&dir)
        .map_err(|e| BenchError::io(format!("cannot create {}", dir.display()), e))?;
    let probe = output.join(".write-check");
    fs::write(&probe, b"")
        .and_then(|_| fs::remove_file(&probe))
        .map_err(|e| BenchError::io(format!("{} is not writable", output.display()), e))
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<(), BenchError> {
    let mut w = csv::Writer::from_path(path)
        .map_err(|e| BenchError::io(format!("cannot write {}", path.display()), e.into()))?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()
        .map_err(|e| BenchError::io(format!("cannot write {}", path.display()), e))
}

/// Truth of every frame as trajectory rows.
pub fn truth_rows(records: &[FrameRecord]) -> Vec<TrajectoryRow> {
    records
        .iter()
        .flat_map(|r| {
            r.truth
                .iter()
                .map(move |(id, s)| TrajectoryRow::from_state(r.frame, *id, s, 1.0, false))
        })
        .collect()
}

pub fn write_trajectory(path: &Path, rows: &[TrajectoryRow]) -> Result<(), BenchError> {
    if rows.is_empty() {
        // csv emits the header with the first record
        fs::write(
            path,
            "frame,track_id,azimuth,elevation,azimuth_rate,elevation_rate,weight,coasting\n",
        )
        .map_err(|e| BenchError::io(format!("cannot write {}", path.display()), e))
    } else {
        write_rows(path, rows)
    }
}

#[derive(Serialize)]
struct FrameOspaRow {
    filter: FilterKind,
    run: usize,
    frame: usize,
    ospa: f64,
}

pub fn write_results(spec: &ExperimentSpec, result: &ExperimentResult) -> Result<(), BenchError> {
    let out = &spec.output;
    write_rows(&out.join("scores.csv"), result.runs.iter().map(|r| &r.score))?;
    write_rows(&out.join("summary.csv"), result.summary())?;
    write_rows(
        &out.join("frame_ospa.csv"),
        result.runs.iter().flat_map(|r| {
            r.frame_ospa.iter().enumerate().map(|(frame, &ospa)| FrameOspaRow {
                filter: r.score.filter,
                run: r.score.run,
                frame,
                ospa,
            })
        }),
    )?;
    for r in &result.runs {
        write_trajectory(&trajectory_path(out, r.score.filter, r.score.run), &r.trajectory)?;
    }
    for run in 0..spec.runs {
        let records = simulate(&spec.run_scenario(&result.scenario, run)).map_err(|source| {
            BenchError::Numerical {
                filter: "truth".into(),
                run,
                source,
            }
        })?;
        write_trajectory(&truth_path(out, run), &truth_rows(&records))?;
    }
    Ok(())
}

/// Validates, prepares the output directory, runs and writes every file.
pub fn run_and_write(spec: &ExperimentSpec) -> Result<ExperimentResult, BenchError> {
    spec.validate()?;
    prepare_output(&spec.output)?;
    let result = run_experiment(spec)?;
    write_results(spec, &result)?;
    Ok(result)
}

#[derive(Serialize)]
struct MeasurementRow {
    frame: usize,
    azimuth: f64,
    elevation: f64,
}

/// Writes `measurements.csv` (frame, azimuth, elevation) and `truth.csv`.
pub fn write_simulation(output: &Path, records: &[FrameRecord]) -> Result<(), BenchError> {
    fs::create_dir_all(output)
        .map_err(|e| BenchError::io(format!("cannot create {}", output.display()), e))?;
    write_rows(
        &output.join("measurements.csv"),
        records.iter().flat_map(|r| {
            r.measurements.iter().map(|z| MeasurementRow {
                frame: r.frame,
                azimuth: z.azimuth,
                elevation: z.elevation,
            })
        }),
    )?;
    write_trajectory(&output.join("truth.csv"), &truth_rows(records))
}

/// Reads a trajectory file into per-frame state sets; `frames` pads the tail.
pub fn read_trajectory(path: &Path, frames: usize) -> Result<Vec<Vec<TargetState>>, BenchError> {
    let mut r = csv::Reader::from_path(path)
        .map_err(|e| BenchError::io(format!("cannot read {}", path.display()), e.into()))?;
    let mut out: Vec<Vec<TargetState>> = vec![Vec::new(); frames];
    for row in r.deserialize::<TrajectoryRow>() {
        let row = row.map_err(|e| {
            BenchError::Config(crate::ConfigError::new(
                e.position().map(|p| p.line() as usize),
                e.to_string(),
            ).in_file(path))
        })?;
        if row.frame >= out.len() {
            out.resize(row.frame + 1, Vec::new());
        }
        out[row.frame].push(row.state());
    }
    Ok(out)
}
