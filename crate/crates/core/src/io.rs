//! File formats.
//!
//! * Space-time paths: long CSV (`t,u,value`) or a binary frame file.
//! * Profiles: CSV `u,value`.
//! * Stationary statistics: CSV `site,mean,stderr` and `x,y,corr,stderr`.
//! * Trajectories: newline-delimited JSON, one snapshot per line.
//! * Phase reports: CSV `q,U,U_env,TW,class`.
//!
//! # Binary frame format
//!
//! All integers and floats little-endian:
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 4    | magic `LGPF`                            |
//! | 4      | 4    | format version (u32, currently 1)       |
//! | 8      | 1    | kind: 0 density, 1 current, 2 potential |
//! | 9      | 7    | zero padding                            |
//! | 16     | 8    | cells `M` (u64)                         |
//! | 24     | 8    | frames `K` (u64)                        |
//! | 32     | 8    | `t0` (f64)                              |
//! | 40     | 8    | `dt` (f64)                              |
//! | 48     |      | `K` frames of `M + 1` (density,         |
//! |        |      | potential) or `M` (current) f64 values  |

use std::io::{BufRead, Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{FieldKind, Grid, GridFunction, PathKind, SpaceTimePath};
use crate::microsim::{empirical_observables, StationaryStats, Trajectory};
use crate::phase::PhaseReport;

pub const MAGIC: &[u8; 4] = b"LGPF";
pub const FORMAT_VERSION: u32 = 1;

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

fn kind_code(kind: PathKind) -> u8 {
    match kind {
        PathKind::Density => 0,
        PathKind::Current => 1,
        PathKind::Potential => 2,
    }
}

fn kind_from_code(code: u8) -> Result<PathKind> {
    match code {
        0 => Ok(PathKind::Density),
        1 => Ok(PathKind::Current),
        2 => Ok(PathKind::Potential),
        other => Err(Error::Format(format!("unknown path kind code {other}"))),
    }
}

fn cells_for(kind: FieldKind, values: usize) -> Result<usize> {
    let cells = match kind {
        FieldKind::Current => values,
        _ => values.saturating_sub(1),
    };
    if cells == 0 {
        return Err(Error::Format("profile has too few points".into()));
    }
    Ok(cells)
}

pub fn write_path_csv(path: &SpaceTimePath, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "u", "value"]).map_err(csv_err)?;
    let positions = path.frame(0).positions();
    for (k, frame) in path.frames.iter().enumerate() {
        let t = path.time(k);
        for (u, v) in positions.iter().zip(frame) {
            w.serialize((t, u, v)).map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read a long-format path; frames are grouped by consecutive equal `t`.
pub fn read_path_csv(input: impl Read, kind: PathKind) -> Result<SpaceTimePath> {
    let mut r = csv::Reader::from_reader(input);
    let mut times: Vec<f64> = Vec::new();
    let mut frames: Vec<Vec<f64>> = Vec::new();
    for row in r.deserialize::<(f64, f64, f64)>() {
        let (t, _, v) = row.map_err(csv_err)?;
        if times.last() != Some(&t) {
            times.push(t);
            frames.push(Vec::new());
        }
        frames.last_mut().expect("frame pushed above").push(v);
    }
    if frames.is_empty() {
        return Err(Error::Format("path file has no rows".into()));
    }
    let grid = Grid::new(cells_for(kind.field_kind(), frames[0].len())?)?;
    let dt = if times.len() > 1 {
        (times[times.len() - 1] - times[0]) / (times.len() - 1) as f64
    } else {
        1.0
    };
    SpaceTimePath::new(grid, kind, times[0], dt, frames)
}

pub fn write_path_binary(path: &SpaceTimePath, mut out: impl Write) -> Result<()> {
    out.write_all(MAGIC)?;
    out.write_all(&FORMAT_VERSION.to_le_bytes())?;
    out.write_all(&[kind_code(path.kind), 0, 0, 0, 0, 0, 0, 0])?;
    out.write_all(&(path.grid.cells() as u64).to_le_bytes())?;
    out.write_all(&(path.len() as u64).to_le_bytes())?;
    out.write_all(&path.t0.to_le_bytes())?;
    out.write_all(&path.dt.to_le_bytes())?;
    for frame in &path.frames {
        for v in frame {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

fn read_array<const N: usize>(input: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    input.read_exact(&mut buf)?;
    Ok(buf)
}

pub fn read_path_binary(mut input: impl Read) -> Result<SpaceTimePath> {
    if &read_array::<4>(&mut input)? != MAGIC {
        return Err(Error::Format("not a path frame file (bad magic)".into()));
    }
    let version = u32::from_le_bytes(read_array(&mut input)?);
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported frame format version {version}")));
    }
    let kind = kind_from_code(read_array::<8>(&mut input)?[0])?;
    let cells = u64::from_le_bytes(read_array(&mut input)?) as usize;
    let frames = u64::from_le_bytes(read_array(&mut input)?) as usize;
    let t0 = f64::from_le_bytes(read_array(&mut input)?);
    let dt = f64::from_le_bytes(read_array(&mut input)?);
    let grid = Grid::new(cells)?;
    let width = kind.field_kind().len_for(&grid);
    let mut data = Vec::with_capacity(frames);
    for _ in 0..frames {
        let mut frame = Vec::with_capacity(width);
        for _ in 0..width {
            frame.push(f64::from_le_bytes(read_array(&mut input)?));
        }
        data.push(frame);
    }
    SpaceTimePath::new(grid, kind, t0, dt, data)
}

pub fn write_profile_csv(profile: &GridFunction, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["u", "value"]).map_err(csv_err)?;
    for (u, v) in profile.positions().iter().zip(&profile.values) {
        w.serialize((u, v)).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Read a `u,value` profile; node profiles must start at `u = 0` and end at `u = 1`.
pub fn read_profile_csv(input: impl Read, kind: FieldKind) -> Result<GridFunction> {
    let mut r = csv::Reader::from_reader(input);
    let rows: Vec<(f64, f64)> = r.deserialize().collect::<std::result::Result<_, _>>().map_err(csv_err)?;
    let grid = Grid::new(cells_for(kind, rows.len())?)?;
    for (i, (u, _)) in rows.iter().enumerate() {
        let expected = kind.position(&grid, i);
        if (u - expected).abs() > 1e-9 {
            return Err(Error::Format(format!(
                "row {} has u = {u}, expected {expected} on a uniform grid",
                i + 2
            )));
        }
    }
    GridFunction::new(grid, kind, rows.into_iter().map(|r| r.1).collect())
}

pub fn write_site_stats_csv(stats: &StationaryStats, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["site", "mean", "stderr"]).map_err(csv_err)?;
    for (i, e) in stats.density.iter().enumerate() {
        w.serialize((i + 1, e.mean, e.stderr)).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Pairs `x < y`; fails if the statistics carry no correlations.
pub fn write_correlation_csv(stats: &StationaryStats, out: impl Write) -> Result<()> {
    let corr = stats
        .correlations
        .as_ref()
        .ok_or_else(|| Error::InsufficientSamples("correlations were not tracked".into()))?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["x", "y", "corr", "stderr"]).map_err(csv_err)?;
    for (i, row) in corr.iter().enumerate() {
        for (j, e) in row.iter().enumerate().skip(i + 1) {
            w.serialize((i + 1, j + 1, e.mean, e.stderr)).map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotRecord {
    pub time: f64,
    pub density: Vec<f64>,
    pub current: Vec<f64>,
}

/// One JSON line per snapshot with density and integrated-current bins on `grid`.
pub fn write_snapshots_ndjson(trajectory: &Trajectory, grid: Grid, mut out: impl Write) -> Result<()> {
    for s in trajectory {
        let (density, current) = empirical_observables(&s.state, &s.counters, grid)?;
        let record = SnapshotRecord {
            time: s.time,
            density: density.values,
            current: current.values,
        };
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_snapshots_ndjson(input: impl BufRead) -> Result<Vec<SnapshotRecord>> {
    input
        .lines()
        .filter(|l| l.as_ref().map_or(true, |s| !s.trim().is_empty()))
        .map(|l| Ok(serde_json::from_str(&l?)?))
        .collect()
}

pub fn write_phase_csv(report: &PhaseReport, out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["q", "U", "U_env", "TW", "class"]).map_err(csv_err)?;
    for i in 0..report.q.len() {
        w.serialize((report.q[i], report.u[i], report.envelope[i], report.wave[i], report.class[i].label()))
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json<T: Serialize + ?Sized>(value: &T, mut out: impl Write) -> Result<()> {
    serde_json::to_writer_pretty(&mut out, value)?;
    out.write_all(b"\n")?;
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path(kind: PathKind) -> SpaceTimePath {
        let g = Grid::new(4).unwrap();
        let width = kind.field_kind().len_for(&g);
        let frames = (0..3)
            .map(|k| (0..width).map(|i| 0.1 * k as f64 + 0.01 * i as f64 + 1.0 / 3.0).collect())
            .collect();
        SpaceTimePath::new(g, kind, 0.5, 0.25, frames).unwrap()
    }

    #[test]
    fn binary_round_trip_is_exact() {
        for kind in [PathKind::Density, PathKind::Current, PathKind::Potential] {
            let p = path(kind);
            let mut buf = Vec::new();
            write_path_binary(&p, &mut buf).unwrap();
            assert_eq!(buf.len(), 48 + 8 * p.len() * p.frames[0].len());
            assert_eq!(read_path_binary(buf.as_slice()).unwrap(), p);
        }
        assert!(matches!(read_path_binary(&b"XXXX0000"[..]), Err(Error::Format(_))));
    }

    #[test]
    fn csv_round_trip() {
        for kind in [PathKind::Density, PathKind::Current] {
            let p = path(kind);
            let mut buf = Vec::new();
            write_path_csv(&p, &mut buf).unwrap();
            let text = String::from_utf8(buf.clone()).unwrap();
            assert!(text.starts_with("t,u,value\n0.5,"));
            let back = read_path_csv(buf.as_slice(), kind).unwrap();
            assert_eq!(back.frames, p.frames);
            assert!((back.dt - p.dt).abs() < 1e-15 && back.t0 == p.t0);
        }
    }

    #[test]
    fn profile_round_trip_and_grid_check() {
        let g = Grid::new(8).unwrap();
        let f = GridFunction::density(g, |u| 0.2 + 0.6 * u).unwrap();
        let mut buf = Vec::new();
        write_profile_csv(&f, &mut buf).unwrap();
        assert_eq!(read_profile_csv(buf.as_slice(), FieldKind::Density).unwrap(), f);
        let bad = "u,value\n0,0.2\n0.3,0.5\n1,0.8\n";
        assert!(matches!(read_profile_csv(bad.as_bytes(), FieldKind::Density), Err(Error::Format(_))));
    }
}
