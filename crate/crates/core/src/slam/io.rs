use std::io::{BufRead, Write};

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::domain::Pose3;
use crate::error::{invalid, Result};
use crate::simworld::{StampedPose, Trajectory};

/// Writes `timestamp tx ty tz qx qy qz qw` lines.
pub fn write_tum<W: Write>(traj: &Trajectory, mut out: W) -> Result<()> {
    for (i, sp) in traj.poses.iter().enumerate() {
        let t = &sp.pose.translation;
        let q = sp.pose.rotation.quaternion();
        writeln!(
            out,
            "{} {} {} {} {} {} {} {}",
            traj.timestamp(i),
            t.x,
            t.y,
            t.z,
            q.i,
            q.j,
            q.k,
            q.w
        )?;
    }
    Ok(())
}

/// Reads a TUM trajectory; frame indices are recovered as `round(t · frame_rate)`.
/// Lines starting with `#` are ignored.
pub fn read_tum<R: BufRead>(input: R, frame_rate: f64) -> Result<Trajectory> {
    let mut poses = Vec::new();
    for (n, line) in input.lines().enumerate() {
        let line = line?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let v: Vec<f64> = line
            .split_whitespace()
            .map(|f| f.parse::<f64>().map_err(|e| invalid(format!("line {}: {e}", n + 1))))
            .collect::<Result<_>>()?;
        if v.len() != 8 {
            return Err(invalid(format!("line {}: expected 8 fields, got {}", n + 1, v.len())));
        }
        let frame = (v[0] * frame_rate).round();
        if frame < 0.0 {
            return Err(invalid(format!("line {}: negative timestamp", n + 1)));
        }
        let q = Quaternion::new(v[7], v[4], v[5], v[6]);
        if (q.norm() - 1.0).abs() > 1e-6 {
            return Err(invalid(format!("line {}: quaternion is not unit length", n + 1)));
        }
        poses.push(StampedPose {
            frame: frame as u64,
            pose: Pose3::new(UnitQuaternion::new_unchecked(q), Vector3::new(v[1], v[2], v[3])),
        });
    }
    Trajectory::new(poses, frame_rate)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SlamMetricsRow {
    pub seed: u64,
    pub method: String,
    pub trans_err_pct: f64,
    pub rot_err_deg_per_m: f64,
    pub failures: usize,
    pub mdbf_m: f64,
}

pub fn write_slam_metrics_csv<W: Write>(rows: &[SlamMetricsRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    if rows.is_empty() {
        w.write_record(["seed", "method", "trans_err_pct", "rot_err_deg_per_m", "failures", "mdbf_m"])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_slam_metrics_csv<R: std::io::Read>(input: R) -> Result<Vec<SlamMetricsRow>> {
    let mut r = csv::Reader::from_reader(input);
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}
