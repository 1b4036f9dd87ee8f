//! Whole-trajectory checkpoints with bit-exact restart.
//!
//! A checkpoint is one file: a JSON header line with the diagnostics rows,
//! followed by every stored snapshot in the core snapshot format. Floats go
//! through shortest round-trip formatting, so a reload reproduces every bit.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use landau_core::grid::{read_field, write_field};
use landau_core::solver::{DiagnosticsRow, Trajectory};
use serde::{Deserialize, Serialize};

use crate::error::{io_err, HarnessError, Result};

#[derive(Serialize, Deserialize)]
struct Header {
    gamma: f64,
    snapshots: usize,
    functional_names: Vec<String>,
    rows: Vec<DiagnosticsRow>,
}

/// Writes `path` via a temporary sibling and a rename.
pub fn write_atomic(path: &Path, fill: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let file = File::create(&tmp).map_err(io_err(&tmp))?;
        let mut w = BufWriter::new(file);
        fill(&mut w)?;
        w.flush().map_err(io_err(&tmp))?;
        w.get_ref().sync_all().map_err(io_err(&tmp))?;
    }
    std::fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn save(path: &Path, traj: &Trajectory) -> Result<()> {
    let header = Header {
        gamma: traj.gamma(),
        snapshots: traj.snapshots().len(),
        functional_names: traj.functional_names().to_vec(),
        rows: traj.rows().to_vec(),
    };
    write_atomic(path, |w| {
        serde_json::to_writer(&mut *w, &header)?;
        w.write_all(b"\n").map_err(io_err(path))?;
        for (t, f) in traj.snapshots() {
            write_field(w, f, *t)?;
        }
        Ok(())
    })
}

pub fn load(path: &Path) -> Result<Trajectory> {
    let mut r = BufReader::new(File::open(path).map_err(io_err(path))?);
    let mut line = Vec::new();
    r.read_until(b'\n', &mut line).map_err(io_err(path))?;
    if line.pop() != Some(b'\n') {
        return Err(HarnessError::Config(format!("{}: missing checkpoint header", path.display())));
    }
    let header: Header = serde_json::from_slice(&line).map_err(|source| HarnessError::Parse { path: path.into(), source })?;
    let mut snaps = Vec::with_capacity(header.snapshots);
    for _ in 0..header.snapshots {
        snaps.push(read_field(&mut r)?);
    }
    let spec = *snaps.first().ok_or_else(|| HarnessError::Config(format!("{}: no snapshots", path.display())))?.1.spec();
    Ok(Trajectory::from_parts(spec, header.gamma, snaps, header.rows, header.functional_names)?)
}
