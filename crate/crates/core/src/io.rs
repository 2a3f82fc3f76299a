//! KITTI Velodyne scans and pose files.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{Matrix3, Quaternion, Rotation3, UnitQuaternion};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::se3::{orthonormalize, Mat3, Pose, Vec3};
use crate::trajectory::Trajectory;
use crate::voxel::PointCloud;

const POINT_BYTES: usize = 16;
const ORTHONORMALITY_TOLERANCE: f64 = 1e-6;

static WARNINGS: AtomicU64 = AtomicU64::new(0);

/// Number of data warnings (dropped points, re-orthonormalized poses)
/// raised by the readers in this process.
pub fn warning_count() -> u64 {
    WARNINGS.load(Ordering::Relaxed)
}

fn warn(message: std::fmt::Arguments) {
    WARNINGS.fetch_add(1, Ordering::Relaxed);
    log::warn!("{message}");
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ScanStats {
    pub read: usize,
    pub dropped_non_finite: usize,
    /// Points exactly at the sensor origin (no return).
    pub dropped_zero_range: usize,
}

/// Parses a Velodyne scan: little-endian `f32` quadruples `(x, y, z, reflectance)`.
pub fn read_velodyne_bin(path: impl AsRef<Path>) -> Result<PointCloud> {
    read_velodyne_bin_with_stats(path).map(|(cloud, _)| cloud)
}

pub fn read_velodyne_bin_with_stats(path: impl AsRef<Path>) -> Result<(PointCloud, ScanStats)> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(Error::io_at(path))?;
    let (cloud, stats) = parse_velodyne(&bytes).ok_or_else(|| Error::MalformedSize {
        path: path.to_path_buf(),
        size: bytes.len() as u64,
    })?;
    if stats.dropped_non_finite > 0 {
        warn(format_args!(
            "{}: dropped {} non-finite points",
            path.display(),
            stats.dropped_non_finite
        ));
    }
    if stats.dropped_zero_range > 0 {
        log::debug!("{}: dropped {} zero-range points", path.display(), stats.dropped_zero_range);
    }
    Ok((cloud, stats))
}

/// Decodes an in-memory scan; `None` if the length is not a multiple of 16.
pub fn parse_velodyne(bytes: &[u8]) -> Option<(PointCloud, ScanStats)> {
    if !bytes.len().is_multiple_of(POINT_BYTES) {
        return None;
    }
    let n = bytes.len() / POINT_BYTES;
    let mut points = Vec::with_capacity(n);
    let mut intensity = Vec::with_capacity(n);
    let mut stats = ScanStats {
        read: n,
        ..Default::default()
    };
    for chunk in bytes.chunks_exact(POINT_BYTES) {
        let f = |i: usize| f32::from_le_bytes(chunk[4 * i..4 * i + 4].try_into().unwrap());
        let (x, y, z, r) = (f(0), f(1), f(2), f(3));
        if !(x.is_finite() && y.is_finite() && z.is_finite()) {
            stats.dropped_non_finite += 1;
        } else if x == 0.0 && y == 0.0 && z == 0.0 {
            stats.dropped_zero_range += 1;
        } else {
            points.push(Vec3::new(x as f64, y as f64, z as f64));
            intensity.push(r);
        }
    }
    Some((
        PointCloud {
            points,
            intensity: Some(intensity),
        },
        stats,
    ))
}

/// Encodes a cloud in Velodyne layout; missing reflectance is written as 0.
pub fn write_velodyne_bin(cloud: &PointCloud, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::with_capacity(cloud.len() * POINT_BYTES);
    for (i, p) in cloud.points.iter().enumerate() {
        let r = cloud.intensity.as_ref().map_or(0.0, |v| v[i]);
        for v in [p.x as f32, p.y as f32, p.z as f32, r] {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, out).map_err(Error::io_at(path))?;
    Ok(())
}

/// Sorted `.bin` files of a sequence. Accepts either the sequence directory
/// or its `velodyne` subdirectory.
pub fn list_scans(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let velodyne = dir.join("velodyne");
    let dir = if velodyne.is_dir() { velodyne } else { dir.to_path_buf() };
    let mut files: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(Error::io_at(&dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "bin"))
        .collect();
    files.sort();
    Ok(files)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrajectoryFormat {
    /// One row-major 3x4 matrix per line.
    #[serde(rename = "kitti")]
    Kitti3x4,
    /// `index tx ty tz qx qy qz qw` per line.
    Tum,
}

impl FromStr for TrajectoryFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kitti" | "kitti_3x4" => Ok(Self::Kitti3x4),
            "tum" => Ok(Self::Tum),
            _ => Err(Error::invalid(format!("unknown trajectory format '{s}'"))),
        }
    }
}

fn parse_numbers(path: &Path, line_no: usize, line: &str) -> Result<Vec<f64>> {
    line.split_whitespace()
        .map(|tok| {
            tok.parse::<f64>().map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: line_no,
                message: format!("'{tok}': {e}"),
            })
        })
        .collect()
}

fn checked_rotation(path: &Path, line_no: usize, r: Mat3) -> Mat3 {
    let drift = (r.transpose() * r - Mat3::identity()).amax();
    if drift > ORTHONORMALITY_TOLERANCE {
        warn(format_args!(
            "{}:{line_no}: rotation drift {drift:.2e}, re-orthonormalized",
            path.display()
        ));
        orthonormalize(&r)
    } else {
        r
    }
}

/// Reads a KITTI pose file (12 numbers per line). Frame indices follow line order.
pub fn read_kitti_poses(path: impl AsRef<Path>) -> Result<Trajectory> {
    read_poses(path.as_ref(), Some(TrajectoryFormat::Kitti3x4))
}

/// Reads either format, chosen per file by the field count of the first row.
pub fn read_trajectory(path: impl AsRef<Path>) -> Result<Trajectory> {
    read_poses(path.as_ref(), None)
}

fn read_poses(path: &Path, expected: Option<TrajectoryFormat>) -> Result<Trajectory> {
    let text = fs::read_to_string(path).map_err(Error::io_at(path))?;
    let mut traj = Trajectory::new();
    let mut format = expected;
    let mut frame = 0usize;
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let v = parse_numbers(path, line_no, trimmed)?;
        let fmt = *format.get_or_insert(match v.len() {
            8 => TrajectoryFormat::Tum,
            _ => TrajectoryFormat::Kitti3x4,
        });
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: line_no,
            message,
        };
        let (index, pose) = match fmt {
            TrajectoryFormat::Kitti3x4 => {
                if v.len() != 12 {
                    return Err(parse_err(format!("expected 12 values, found {}", v.len())));
                }
                let r = Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
                let t = Vec3::new(v[3], v[7], v[11]);
                (frame, Pose::new(checked_rotation(path, line_no, r), t))
            }
            TrajectoryFormat::Tum => {
                if v.len() != 8 {
                    return Err(parse_err(format!("expected 8 values, found {}", v.len())));
                }
                if v[0] < 0.0 || v[0].fract() != 0.0 {
                    return Err(parse_err(format!("frame index {} is not a whole number", v[0])));
                }
                let q = Quaternion::new(v[7], v[4], v[5], v[6]);
                if q.norm() == 0.0 {
                    return Err(parse_err("zero quaternion".into()));
                }
                let r = *UnitQuaternion::from_quaternion(q).to_rotation_matrix().matrix();
                (v[0] as usize, Pose::new(r, Vec3::new(v[1], v[2], v[3])))
            }
        };
        traj.push(index, pose).map_err(|e| parse_err(e.to_string()))?;
        frame += 1;
    }
    Ok(traj)
}

/// Velodyne-to-camera transform (`Tr:` row) from a KITTI `calib.txt`.
pub fn read_kitti_calibration(path: impl AsRef<Path>) -> Result<Pose> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(Error::io_at(path))?;
    for (i, line) in text.lines().enumerate() {
        if let Some(rest) = line.trim().strip_prefix("Tr:") {
            let v = parse_numbers(path, i + 1, rest)?;
            if v.len() != 12 {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    line: i + 1,
                    message: format!("expected 12 values, found {}", v.len()),
                });
            }
            let r = Matrix3::new(v[0], v[1], v[2], v[4], v[5], v[6], v[8], v[9], v[10]);
            return Ok(Pose::new(orthonormalize(&r), Vec3::new(v[3], v[7], v[11])));
        }
    }
    Err(Error::Parse {
        path: path.to_path_buf(),
        line: 0,
        message: "no 'Tr:' entry".into(),
    })
}

/// Re-expresses sensor-frame poses in another body frame: `T_b = X T_s X^-1`.
pub fn change_body_frame(traj: &Trajectory, x: &Pose) -> Trajectory {
    let x_inv = x.inverse();
    let mut out = Trajectory::new();
    for (i, p) in traj.entries() {
        out.push(*i, x.compose(p).compose(&x_inv)).expect("indices already increasing");
    }
    out
}

/// Shortest decimal form that parses back to the same bits (at most 17
/// significant digits).
fn fmt_f64(out: &mut String, v: f64) {
    let a = v.abs();
    if a == 0.0 || (1e-4..1e16).contains(&a) {
        write!(out, "{v}").unwrap();
    } else {
        write!(out, "{v:e}").unwrap();
    }
}

pub fn format_kitti_row(pose: &Pose) -> String {
    let (r, t) = (&pose.rotation, &pose.translation);
    let mut s = String::new();
    for row in 0..3 {
        for col in 0..4 {
            if row + col > 0 {
                s.push(' ');
            }
            fmt_f64(&mut s, if col < 3 { r[(row, col)] } else { t[row] });
        }
    }
    s
}

pub fn format_tum_row(index: usize, pose: &Pose) -> String {
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(pose.rotation));
    let mut s = index.to_string();
    let t = &pose.translation;
    for v in [t.x, t.y, t.z, q.i, q.j, q.k, q.w] {
        s.push(' ');
        fmt_f64(&mut s, v);
    }
    s
}

pub fn write_trajectory(traj: &Trajectory, path: impl AsRef<Path>, format: TrajectoryFormat) -> Result<()> {
    let path = path.as_ref();
    let mut w = BufWriter::new(fs::File::create(path).map_err(Error::io_at(path))?);
    for (index, pose) in traj.entries() {
        let row = match format {
            TrajectoryFormat::Kitti3x4 => format_kitti_row(pose),
            TrajectoryFormat::Tum => format_tum_row(*index, pose),
        };
        writeln!(w, "{row}")?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_exact_little_endian_values() {
        let mut bytes = Vec::new();
        for v in [1.5f32, -2.25, 3.0, 0.5, 0.0, 0.0, 1.0e-3, 1.0] {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        let (cloud, stats) = parse_velodyne(&bytes).unwrap();
        assert_eq!(stats.read, 2);
        assert_eq!(cloud.points[0], Vec3::new(1.5, -2.25, 3.0));
        assert_eq!(cloud.points[1].z, 1.0e-3f32 as f64);
        assert_eq!(cloud.intensity.unwrap(), vec![0.5, 1.0]);
    }

    #[test]
    fn rejects_partial_record() {
        assert!(parse_velodyne(&[0u8; 20]).is_none());
    }

    #[test]
    fn identity_row_literal() {
        assert_eq!(format_kitti_row(&Pose::identity()), "1 0 0 0 0 1 0 0 0 0 1 0");
        assert_eq!(format_tum_row(3, &Pose::identity()), "3 0 0 0 0 0 0 1");
    }

    #[test]
    fn float_formatting_round_trips() {
        for v in [0.1, -1.0 / 3.0, 1e-300, 6.02e23, f64::MIN_POSITIVE, 123456.789] {
            let mut s = String::new();
            fmt_f64(&mut s, v);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), v.to_bits(), "{s}");
        }
    }
}
