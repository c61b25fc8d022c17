//! CSV schemas for run artifacts.
//!
//! Three log kinds, all plain CSV with a fixed header row:
//!
//! - trajectory log: `time,phi,vx,vy,r,x,y,psi,u_steer,u_accel,surface` —
//!   one measured tuple per control step;
//! - controller telemetry: `time,min_cost,mean_cost,ess,u_steer,u_accel`;
//! - adaptation log: `time,mode,event,loss_before,loss_after,grad_norm`.
//!
//! Floats are written with Rust's shortest round-trip formatting, so a
//! parsed log reproduces the original values bit for bit.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::types::{ControlInput, Pose, Sample, SampleWindow, VehicleState};

pub const TRAJECTORY_HEADER: &str = "time,phi,vx,vy,r,x,y,psi,u_steer,u_accel,surface";
pub const TELEMETRY_HEADER: &str = "time,min_cost,mean_cost,ess,u_steer,u_accel";
pub const ADAPT_HEADER: &str = "time,mode,event,loss_before,loss_after,grad_norm";

/// One row of a trajectory log.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub time: f64,
    pub state: VehicleState,
    pub pose: Pose,
    pub input: ControlInput,
    pub surface: String,
}

impl TrajectoryRecord {
    pub fn sample(&self) -> Sample {
        Sample {
            state: self.state,
            pose: self.pose,
            input: self.input,
        }
    }

    fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.time,
            self.state.phi,
            self.state.vx,
            self.state.vy,
            self.state.r,
            self.pose.x,
            self.pose.y,
            self.pose.psi,
            self.input.steer,
            self.input.accel,
            self.surface
        )
    }
}

pub fn trajectory_to_csv(records: &[TrajectoryRecord]) -> String {
    let mut out = String::with_capacity(records.len() * 96 + 64);
    out.push_str(TRAJECTORY_HEADER);
    out.push('\n');
    for r in records {
        let _ = writeln!(out, "{}", r.to_csv());
    }
    out
}

pub fn write_trajectory(path: &Path, records: &[TrajectoryRecord]) -> Result<()> {
    std::fs::write(path, trajectory_to_csv(records))?;
    Ok(())
}

pub fn parse_trajectory(text: &str) -> Result<Vec<TrajectoryRecord>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == TRAJECTORY_HEADER => {}
        other => {
            return Err(Error::Csv {
                line: 1,
                msg: format!(
                    "expected header `{TRAJECTORY_HEADER}`, got `{}`",
                    other.map(|(_, h)| h).unwrap_or("<empty file>")
                ),
            })
        }
    }
    let mut out = Vec::new();
    for (idx, line) in lines {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 11 {
            return Err(Error::Csv {
                line: idx + 1,
                msg: format!("expected 11 fields, got {}", fields.len()),
            });
        }
        let num = |k: usize| -> Result<f64> {
            fields[k].parse::<f64>().map_err(|e| Error::Csv {
                line: idx + 1,
                msg: format!("field {}: {e}", k + 1),
            })
        };
        out.push(TrajectoryRecord {
            time: num(0)?,
            state: VehicleState {
                phi: num(1)?,
                vx: num(2)?,
                vy: num(3)?,
                r: num(4)?,
            },
            pose: Pose {
                x: num(5)?,
                y: num(6)?,
                psi: num(7)?,
            },
            input: ControlInput {
                steer: num(8)?,
                accel: num(9)?,
            },
            surface: fields[10].to_string(),
        });
    }
    Ok(out)
}

pub fn read_trajectory(path: &Path) -> Result<Vec<TrajectoryRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::MissingInput {
        path: path.display().to_string(),
        hint: format!("run `kartlab record-log` to generate drive logs ({e})"),
    })?;
    parse_trajectory(&text)
}

/// Builds the adaptation window ending at `end` (inclusive) from `len`
/// consecutive records, verifying the records are `dt` apart.
pub fn window_ending_at(
    records: &[TrajectoryRecord],
    end: usize,
    len: usize,
    dt: f64,
) -> Result<SampleWindow> {
    if end >= records.len() || end + 1 < len {
        return Err(Error::InvalidArg(format!(
            "window of {len} ending at {end} out of range ({} records)",
            records.len()
        )));
    }
    let start = end + 1 - len;
    let slice = &records[start..=end];
    for pair in slice.windows(2) {
        let gap = pair[1].time - pair[0].time;
        if (gap - dt).abs() > 1e-9 {
            return Err(Error::InvalidArg(format!(
                "non-contiguous samples at t={}: gap {gap}",
                pair[0].time
            )));
        }
    }
    SampleWindow::new(dt, slice.iter().map(|r| r.sample()).collect())
}

#[derive(Debug, Clone, Copy)]
pub struct TelemetryRow {
    pub time: f64,
    pub min_cost: f64,
    pub mean_cost: f64,
    pub ess: f64,
    pub command: ControlInput,
}

pub fn telemetry_to_csv(rows: &[TelemetryRow]) -> String {
    let mut out = String::from(TELEMETRY_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.time, r.min_cost, r.mean_cost, r.ess, r.command.steer, r.command.accel
        );
    }
    out
}

#[derive(Debug, Clone)]
pub struct AdaptRow {
    pub time: f64,
    pub mode: String,
    pub event: String,
    pub loss_before: f64,
    pub loss_after: f64,
    pub grad_norm: f64,
}

pub fn adapt_log_to_csv(rows: &[AdaptRow]) -> String {
    let mut out = String::from(ADAPT_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.time, r.mode, r.event, r.loss_before, r.loss_after, r.grad_norm
        );
    }
    out
}
