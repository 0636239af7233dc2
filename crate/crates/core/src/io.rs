//! CSV and JSON artifacts. Every file is written to a temporary sibling
//! and renamed into place, so readers never see a partial artifact.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::{Cluster, EventKind, ParticleSystem, Trajectory};
use crate::error::{Error, Result};
use crate::metrics::ConvergenceRow;

/// Writes `bytes` to `path` via a temporary file in the same directory.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("not a file path: {}", path.display())))?;
    let tmp = path.with_file_name(format!(".{}.tmp{}", name.to_string_lossy(), std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    Ok(result?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct TrajectoryRow {
    t: f64,
    i: usize,
    x: f64,
    v: f64,
    m: f64,
    cluster: usize,
    psi: f64,
}

/// One row per particle per frame: `t,i,x,v,m,cluster,psi`.
pub fn trajectory_csv(traj: &Trajectory) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for f in &traj.frames {
        let labels = f.state.cluster_labels();
        for i in 0..f.state.len() {
            w.serialize(TrajectoryRow {
                t: f.time,
                i,
                x: f.state.positions()[i],
                v: f.state.velocities()[i],
                m: f.state.masses()[i],
                cluster: labels[i],
                psi: f.psi.0[i],
            })?;
        }
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Reads the states back from a trajectory CSV. A frame starts wherever
/// the particle index returns to 0.
pub fn read_trajectory_csv(path: &Path) -> Result<Vec<ParticleSystem>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut frames = Vec::new();
    let mut rows: Vec<TrajectoryRow> = Vec::new();
    let flush = |rows: &mut Vec<TrajectoryRow>, frames: &mut Vec<ParticleSystem>| -> Result<()> {
        if rows.is_empty() {
            return Ok(());
        }
        let mut clusters: Vec<Cluster> = Vec::new();
        for (i, row) in rows.iter().enumerate() {
            if row.i != i {
                return Err(Error::InvalidSystem(format!("particle index {} out of order at t = {}", row.i, row.t)));
            }
            match clusters.last_mut() {
                Some(c) if rows[c.start].cluster == row.cluster => c.end = i + 1,
                _ => clusters.push(Cluster { start: i, end: i + 1 }),
            }
        }
        frames.push(ParticleSystem::from_parts(
            rows[0].t,
            rows.iter().map(|r| r.x).collect(),
            rows.iter().map(|r| r.v).collect(),
            rows.iter().map(|r| r.m).collect(),
            clusters,
        )?);
        rows.clear();
        Ok(())
    };
    for rec in r.deserialize() {
        let row: TrajectoryRow = rec?;
        if row.i == 0 {
            flush(&mut rows, &mut frames)?;
        }
        rows.push(row);
    }
    flush(&mut rows, &mut frames)?;
    Ok(frames)
}

/// Event log entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub t: f64,
    pub kind: EventKind,
    pub indices: Vec<usize>,
}

pub fn events_json(traj: &Trajectory) -> Result<Vec<u8>> {
    let records: Vec<EventRecord> = traj
        .events
        .iter()
        .map(|e| EventRecord { t: e.time, kind: e.kind, indices: e.indices.clone() })
        .collect();
    let mut out = serde_json::to_vec_pretty(&records)?;
    out.push(b'\n');
    Ok(out)
}

#[derive(Serialize)]
struct StudyRow {
    #[serde(rename = "N")]
    n: usize,
    t: f64,
    distance: f64,
    bound: Option<f64>,
}

/// `N,t,distance,bound`; the bound column is empty where none applies.
pub fn study_csv(rows: &[ConvergenceRow]) -> Result<Vec<u8>> {
    let rows: Vec<StudyRow> = rows.iter().map(|r| StudyRow { n: r.n, t: r.t, distance: r.distance, bound: r.bound }).collect();
    to_csv(&rows)
}

/// CSV with a header taken from the field names of `T`; `None` fields are
/// left empty.
pub fn to_csv<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

/// Pretty JSON with a trailing newline.
pub fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>> {
    let mut out = serde_json::to_vec_pretty(value)?;
    out.push(b'\n');
    Ok(out)
}
