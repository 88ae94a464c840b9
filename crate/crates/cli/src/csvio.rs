// Copyright 2026 stirap-rs contributors
// SPDX-License-Identifier: Apache-2.0

//! Trajectory CSV format: fixed column order, nine significant digits, so
//! runs diff cleanly.

use std::io::Write;
use std::path::Path;

use stirap_core::dynamics::TrajectoryTrace;
use stirap_core::Frame;

use crate::CliError;

pub const HEADER: &str = "t,u,theta,X,Y,Z,x,y,z,pop1,pop2,pop3";

fn fmt(v: f64) -> String {
    format!("{v:.8e}")
}

pub fn write_trajectory(path: &Path, trace: &TrajectoryTrace) -> Result<(), CliError> {
    let file = std::fs::File::create(path)
        .map_err(|e| CliError::Input(format!("cannot create {}: {e}", path.display())))?;
    let mut w = std::io::BufWriter::new(file);
    writeln!(w, "{HEADER}").map_err(io_err)?;
    for i in 0..trace.len() {
        let lab = trace.lab_state(i);
        let db = trace.dark_bright_state(i);
        let p = trace.populations[i];
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            fmt(trace.times[i]),
            fmt(trace.u[i]),
            fmt(trace.theta[i]),
            fmt(lab[0]),
            fmt(lab[1]),
            fmt(lab[2]),
            fmt(db[0]),
            fmt(db[1]),
            fmt(db[2]),
            fmt(p[0]),
            fmt(p[1]),
            fmt(p[2]),
        )
        .map_err(io_err)?;
    }
    w.flush().map_err(io_err)
}

fn io_err(e: std::io::Error) -> CliError {
    CliError::Input(format!("write failed: {e}"))
}

/// Read a trajectory CSV back; only the columns needed downstream are kept.
pub fn read_trajectory(path: &Path) -> Result<TrajectoryTrace, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| CliError::Input(format!("{} is empty", path.display())))?;
    let cols: Vec<&str> = header.trim().split(',').collect();
    let need = ["t", "u", "theta", "x", "y", "z"];
    let mut idx = [0usize; 6];
    for (k, name) in need.iter().enumerate() {
        idx[k] = cols.iter().position(|c| c == name).ok_or_else(|| {
            CliError::Input(format!("{} lacks required column '{name}'", path.display()))
        })?;
    }
    let mut trace = TrajectoryTrace {
        frame: Frame::DarkBright,
        ..Default::default()
    };
    for (lineno, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.trim().split(',').collect();
        let mut vals = [0.0f64; 6];
        for (k, &col) in idx.iter().enumerate() {
            let raw = fields.get(col).ok_or_else(|| {
                CliError::Input(format!("line {}: missing field {col}", lineno + 1))
            })?;
            vals[k] = raw.parse().map_err(|e| {
                CliError::Input(format!("line {}: bad number '{raw}': {e}", lineno + 1))
            })?;
        }
        let db = [vals[3], vals[4], vals[5]];
        let theta = vals[2];
        let lab = [
            db[2] * theta.sin() - db[0] * theta.cos(),
            db[1],
            db[2] * theta.cos() + db[0] * theta.sin(),
        ];
        trace.times.push(vals[0]);
        trace.u.push(vals[1]);
        trace.theta.push(theta);
        trace.states.push(db);
        trace.populations.push([lab[2] * lab[2], lab[1] * lab[1], lab[0] * lab[0]]);
    }
    if trace.is_empty() {
        return Err(CliError::Input(format!("{} holds no samples", path.display())));
    }
    Ok(trace)
}
