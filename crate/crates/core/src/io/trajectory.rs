//! TUM RGB-D trajectory text: `timestamp tx ty tz qx qy qz qw` per line.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::{UnitQuaternion, Vector3};

use crate::geometry::{quaternion_from_xyzw, RigidPose, Trajectory, TrajectoryEntry};

use super::{read_bytes, write_bytes, IoError};

/// Largest accepted deviation of a quaternion's norm from one.
pub const QUATERNION_TOLERANCE: f64 = 1e-6;

pub fn read_trajectory(path: &Path) -> Result<Trajectory, IoError> {
    let bytes = read_bytes(path)?;
    let text = String::from_utf8(bytes).map_err(|_| IoError::Format(format!("{} is not UTF-8", path.display())))?;
    parse_trajectory(&text)
}

pub fn parse_trajectory(text: &str) -> Result<Trajectory, IoError> {
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let parse_err = |message: String| IoError::Parse { line: i + 1, message };
        let values: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse::<f64>().map_err(|_| parse_err(format!("not a number: {t:?}"))))
            .collect::<Result<_, _>>()?;
        if values.len() != 8 {
            return Err(parse_err(format!("expected 8 values, found {}", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(parse_err("non-finite value".into()));
        }
        let q = quaternion_from_xyzw(values[4], values[5], values[6], values[7]);
        let norm = q.norm();
        if !((norm - 1.0).abs() <= QUATERNION_TOLERANCE) {
            return Err(IoError::Data(format!(
                "line {}: quaternion norm {norm} is not within {QUATERNION_TOLERANCE} of 1",
                i + 1
            )));
        }
        // leave exactly representable unit quaternions untouched so files round-trip
        let rotation = if (q.norm_squared() - 1.0).abs() <= 4.0 * f64::EPSILON {
            UnitQuaternion::new_unchecked(q)
        } else {
            UnitQuaternion::new_normalize(q)
        };
        entries.push(TrajectoryEntry {
            timestamp: values[0],
            pose: RigidPose::new(rotation, Vector3::new(values[1], values[2], values[3])),
        });
    }
    Ok(Trajectory::new(entries)?)
}

/// Shortest representation that reads back to the same `f64` (at most 17
/// significant digits).
pub fn format_trajectory(traj: &Trajectory) -> String {
    let mut out = String::from("# timestamp tx ty tz qx qy qz qw\n");
    for e in traj.entries() {
        let t = e.pose.translation();
        let q = e.pose.quaternion();
        let _ = writeln!(
            out,
            "{} {} {} {} {} {} {} {}",
            e.timestamp, t.x, t.y, t.z, q.i, q.j, q.k, q.w
        );
    }
    out
}

pub fn write_trajectory(traj: &Trajectory, path: &Path) -> Result<(), IoError> {
    write_bytes(path, format_trajectory(traj).as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_line() {
        let t = parse_trajectory("# header\n0.0 0 0 0 0 0 0 1\n").unwrap();
        assert_eq!(t.len(), 1);
        assert_eq!(t.entries()[0].timestamp, 0.0);
        assert_eq!(t.entries()[0].pose, RigidPose::identity());
    }

    #[test]
    fn zero_quaternion_is_a_data_error() {
        let e = parse_trajectory("0 0 0 0 0 0 0 0").unwrap_err();
        assert!(matches!(e, IoError::Data(_)), "{e}");
    }

    #[test]
    fn malformed_lines_report_their_number() {
        match parse_trajectory("0 0 0 0 0 0 0 1\n\n1 0 0 x 0 0 0 1\n").unwrap_err() {
            IoError::Parse { line, .. } => assert_eq!(line, 3),
            e => panic!("{e}"),
        }
        match parse_trajectory("0 0 0 0 0 0 1").unwrap_err() {
            IoError::Parse { line, .. } => assert_eq!(line, 1),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn slightly_off_quaternions_are_normalized() {
        let t = parse_trajectory("0 0 0 0 0 0 0 1.0000005").unwrap();
        assert!((t.entries()[0].pose.quaternion().norm() - 1.0).abs() < 1e-15);
        assert!(parse_trajectory("0 0 0 0 0 0 0 1.01").is_err());
    }
}
