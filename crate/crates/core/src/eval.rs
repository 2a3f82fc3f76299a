//! Trajectory accuracy: KITTI segment statistics and absolute trajectory error.

use nalgebra::SVD;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::se3::{Mat3, Pose, Vec3};
use crate::trajectory::Trajectory;

/// Segment lengths evaluated by the KITTI odometry benchmark, in meters.
pub const SEGMENT_LENGTHS: [f64; 8] = [100.0, 200.0, 300.0, 400.0, 500.0, 600.0, 700.0, 800.0];
/// Start frames are sampled every this many frames.
pub const SEGMENT_STEP: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SegmentStats {
    pub length: f64,
    pub samples: usize,
    pub rotation_error: f64,
    pub translation_error: f64,
}

/// Averaged relative errors over all sampled segments.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KittiStats {
    /// Degrees per 100 m.
    pub rotation_error: f64,
    /// Percent of segment length.
    pub translation_error: f64,
    pub samples: usize,
    /// Only lengths with at least one sample appear.
    pub per_length: Vec<SegmentStats>,
}

fn paired_poses(estimated: &Trajectory, truth: &Trajectory, min_len: usize) -> Result<(Vec<Pose>, Vec<Pose>)> {
    if estimated.len() != truth.len() {
        return Err(Error::LengthMismatch {
            estimated: estimated.len(),
            truth: truth.len(),
        });
    }
    if truth.len() < min_len {
        return Err(Error::TooShort(format!(
            "{} poses, at least {min_len} required",
            truth.len()
        )));
    }
    for ((a, _), (b, _)) in estimated.entries().iter().zip(truth.entries()) {
        if a != b {
            return Err(Error::invalid(format!("frame index {a} paired with ground-truth frame {b}")));
        }
    }
    Ok((estimated.pose_vec(), truth.pose_vec()))
}

/// Cumulative ground-truth path length at each frame.
pub fn trajectory_distances(poses: &[Pose]) -> Vec<f64> {
    let mut dist = Vec::with_capacity(poses.len());
    let mut acc = 0.0;
    for (i, p) in poses.iter().enumerate() {
        if i > 0 {
            acc += (p.translation - poses[i - 1].translation).norm();
        }
        dist.push(acc);
    }
    dist
}

/// First frame whose cumulative distance exceeds `dist[first] + length`.
pub fn last_frame_from_segment_length(dist: &[f64], first: usize, length: f64) -> Option<usize> {
    (first..dist.len()).find(|&i| dist[i] > dist[first] + length)
}

/// Rotation angle of a relative-pose error, in radians. Equivalent to the
/// devkit's `acos((tr - 1) / 2)` but accurate for small angles.
fn rotation_error(e: &Pose) -> f64 {
    e.angle()
}

/// KITTI odometry statistics. Returns [`Error::TooShort`] when no segment of
/// 100 m fits in the ground truth.
pub fn kitti_stats(estimated: &Trajectory, truth: &Trajectory) -> Result<KittiStats> {
    let (est, gt) = paired_poses(estimated, truth, 2)?;
    let dist = trajectory_distances(&gt);

    let mut sums = [(0usize, 0.0f64, 0.0f64); SEGMENT_LENGTHS.len()];
    for first in (0..gt.len()).step_by(SEGMENT_STEP) {
        for (slot, &length) in SEGMENT_LENGTHS.iter().enumerate() {
            let Some(last) = last_frame_from_segment_length(&dist, first, length) else {
                continue;
            };
            let delta_gt = gt[first].inverse().compose(&gt[last]);
            let delta_est = est[first].inverse().compose(&est[last]);
            let s = &mut sums[slot];
            s.0 += 1;
            if delta_est != delta_gt {
                let err = delta_est.inverse().compose(&delta_gt);
                s.1 += rotation_error(&err) / length;
                s.2 += err.translation.norm() / length;
            }
        }
    }

    let samples: usize = sums.iter().map(|s| s.0).sum();
    if samples == 0 {
        return Err(Error::TooShort(format!(
            "ground-truth path length {:.1} m is below {} m",
            dist.last().copied().unwrap_or(0.0),
            SEGMENT_LENGTHS[0]
        )));
    }
    let rot_scale = 100.0 * 180.0 / std::f64::consts::PI;
    let per_length = SEGMENT_LENGTHS
        .iter()
        .zip(&sums)
        .filter(|(_, s)| s.0 > 0)
        .map(|(&length, s)| SegmentStats {
            length,
            samples: s.0,
            rotation_error: s.1 / s.0 as f64 * rot_scale,
            translation_error: s.2 / s.0 as f64 * 100.0,
        })
        .collect();
    let (r, t) = sums.iter().fold((0.0, 0.0), |acc, s| (acc.0 + s.1, acc.1 + s.2));
    Ok(KittiStats {
        rotation_error: r / samples as f64 * rot_scale,
        translation_error: t / samples as f64 * 100.0,
        samples,
        per_length,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AteResult {
    /// Degrees.
    pub rotation_rmse: f64,
    /// Meters.
    pub translation_rmse: f64,
    /// Maps estimated positions onto ground truth.
    #[serde(serialize_with = "serialize_pose")]
    pub alignment: Pose,
}

fn serialize_pose<S: serde::Serializer>(pose: &Pose, s: S) -> std::result::Result<S::Ok, S::Error> {
    let m = pose.to_matrix();
    let rows: Vec<[f64; 4]> = (0..3).map(|r| [m[(r, 0)], m[(r, 1)], m[(r, 2)], m[(r, 3)]]).collect();
    rows.serialize(s)
}

const COLLINEAR_TOLERANCE: f64 = 1e-10;

/// Least-squares rigid transform (no scale) taking `from` onto `to`.
pub fn rigid_alignment(from: &[Vec3], to: &[Vec3]) -> Result<Pose> {
    if from.len() != to.len() || from.len() < 3 {
        return Err(Error::TooShort(format!("{} points, at least 3 required", from.len().min(to.len()))));
    }
    let n = from.len() as f64;
    let mu_from = from.iter().sum::<Vec3>() / n;
    let mu_to = to.iter().sum::<Vec3>() / n;

    let mut scatter = Mat3::zeros();
    let mut cross = Mat3::zeros();
    for (f, t) in from.iter().zip(to) {
        let (df, dt) = (f - mu_from, t - mu_to);
        scatter += dt * dt.transpose();
        cross += dt * df.transpose();
    }
    let sv = scatter.symmetric_eigenvalues();
    let mut sv: Vec<f64> = sv.iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    if sv[0].is_nan() || sv[0] <= 0.0 || sv[1] <= COLLINEAR_TOLERANCE * sv[0] {
        return Err(Error::DegenerateAlignment("ground-truth positions are collinear".into()));
    }

    let svd = SVD::new(cross, true, true);
    let (u, v_t) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut s = Mat3::identity();
    if (u * v_t).determinant() < 0.0 {
        s[(2, 2)] = -1.0;
    }
    let r = u * s * v_t;
    Ok(Pose::new(r, mu_to - r * mu_from))
}

/// Absolute trajectory error after rigid alignment of the estimated positions.
pub fn ate(estimated: &Trajectory, truth: &Trajectory) -> Result<AteResult> {
    let (est, gt) = paired_poses(estimated, truth, 3)?;
    let from: Vec<Vec3> = est.iter().map(|p| p.translation).collect();
    let to: Vec<Vec3> = gt.iter().map(|p| p.translation).collect();
    let alignment = rigid_alignment(&from, &to)?;
    Ok(ate_with_alignment(&est, &gt, &alignment))
}

/// Errors of `estimated` against `truth` after applying `alignment`.
pub fn ate_with_alignment(estimated: &[Pose], truth: &[Pose], alignment: &Pose) -> AteResult {
    let n = estimated.len() as f64;
    let (mut t2, mut r2) = (0.0, 0.0);
    for (e, g) in estimated.iter().zip(truth) {
        let aligned = alignment.compose(e);
        t2 += (aligned.translation - g.translation).norm_squared();
        r2 += g.inverse().compose(&aligned).angle().powi(2);
    }
    AteResult {
        rotation_rmse: (r2 / n).sqrt().to_degrees(),
        translation_rmse: (t2 / n).sqrt(),
        alignment: *alignment,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn straight(n: usize, step: f64) -> Trajectory {
        Trajectory::from_poses((0..n).map(|i| Pose::from_translation(Vec3::new(i as f64 * step, 0.0, 0.0))))
    }

    #[test]
    fn end_frame_requires_strictly_longer_segment() {
        let dist: Vec<f64> = (0..300).map(|i| i as f64).collect();
        assert_eq!(last_frame_from_segment_length(&dist, 0, 100.0), Some(101));
        assert_eq!(last_frame_from_segment_length(&dist, 250, 100.0), None);
    }

    #[test]
    fn short_trajectory_is_signalled() {
        let t = straight(50, 1.0);
        assert!(matches!(kitti_stats(&t, &t), Err(Error::TooShort(_))));
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(
            kitti_stats(&straight(5, 1.0), &straight(6, 1.0)),
            Err(Error::LengthMismatch { .. })
        ));
    }

    #[test]
    fn collinear_truth_is_degenerate() {
        let t = straight(10, 1.0);
        assert!(matches!(ate(&t, &t), Err(Error::DegenerateAlignment(_))));
    }
}
