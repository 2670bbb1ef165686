//! TUM trajectory files: `timestamp tx ty tz qx qy qz qw` per line.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};

use crate::camera::{CameraPose, Trajectory};
use crate::error::{Error, Result};

pub fn format_pose(p: &CameraPose) -> String {
    let q = p.r.quaternion();
    format!(
        "{} {} {} {} {} {} {} {}",
        p.timestamp, p.t.x, p.t.y, p.t.z, q.i, q.j, q.k, q.w
    )
}

pub fn parse_pose(line: &str) -> std::result::Result<CameraPose, String> {
    let vals: Vec<f64> = line
        .split_whitespace()
        .map(|s| s.parse::<f64>().map_err(|_| format!("not a number: {s:?}")))
        .collect::<std::result::Result<_, _>>()?;
    if vals.len() != 8 {
        return Err(format!("expected 8 fields, found {}", vals.len()));
    }
    let q = Quaternion::new(vals[7], vals[4], vals[5], vals[6]);
    if q.norm() < 1e-12 {
        return Err("zero quaternion".into());
    }
    Ok(CameraPose::new(
        UnitQuaternion::from_quaternion(q),
        Vector3::new(vals[1], vals[2], vals[3]),
        vals[0],
    ))
}

pub fn format_trajectory(traj: &Trajectory) -> String {
    let mut s = String::from("# timestamp tx ty tz qx qy qz qw\n");
    for p in &traj.poses {
        let _ = writeln!(s, "{}", format_pose(p));
    }
    s
}

pub fn parse_trajectory(text: &str) -> std::result::Result<Trajectory, String> {
    let mut poses = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        poses.push(parse_pose(line).map_err(|e| format!("line {}: {e}", n + 1))?);
    }
    Ok(Trajectory::new(poses))
}

pub fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<()> {
    super::create_parent(path)?;
    std::fs::write(path, format_trajectory(traj)).map_err(|e| Error::io(path, e))
}

pub fn read_trajectory(path: &Path) -> Result<Trajectory> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_trajectory(&text).map_err(|m| Error::format(path, m))
}
