mod common;

use std::fs;

use proptest::prelude::*;

use common::{grid_search_argmin, pose_error, rng};
use voxreg::error::Error;
use voxreg::eval::{ate, ate_with_alignment, kitti_stats, SEGMENT_LENGTHS, SEGMENT_STEP};
use voxreg::io::{
    format_kitti_row, parse_velodyne, read_kitti_poses, read_trajectory, read_velodyne_bin,
    read_velodyne_bin_with_stats, warning_count, write_trajectory, TrajectoryFormat,
};
use voxreg::se3::{Pose, Twist, Vec3};
use voxreg::synthetic::random_pose;
use voxreg::trajectory::Trajectory;

fn encode(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

fn straight(n: usize, step: f64) -> Trajectory {
    Trajectory::from_poses((0..n).map(|i| Pose::from_translation(Vec3::new(i as f64 * step, 0.0, 0.0))))
}

/// A wandering planar path with gentle turns, long enough for every segment length.
fn winding(n: usize, seed: u64) -> Trajectory {
    use rand::Rng;
    let mut r = rng(seed);
    let mut pose = Pose::identity();
    let mut out = vec![pose];
    for _ in 1..n {
        let step = Twist::new(Vec3::new(0.0, 0.0, r.random_range(-0.02..0.02)), Vec3::new(1.0, 0.0, 0.0));
        pose = pose.compose(&Pose::exp(&step));
        out.push(pose);
    }
    Trajectory::from_poses(out)
}

#[test]
fn binary_scan_decodes_exact_values() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("000000.bin");
    fs::write(&path, encode(&[1.5, -2.25, 3.0, 0.5, 10.0, 0.125, -7.75, 1.0])).unwrap();
    let cloud = read_velodyne_bin(&path).unwrap();
    assert_eq!(cloud.points, vec![Vec3::new(1.5, -2.25, 3.0), Vec3::new(10.0, 0.125, -7.75)]);
    assert_eq!(cloud.intensity, Some(vec![0.5, 1.0]));
}

#[test]
fn thirty_two_bytes_hold_two_points() {
    let bytes = encode(&[1.0; 8]);
    assert_eq!(bytes.len(), 32);
    assert_eq!(parse_velodyne(&bytes).unwrap().0.len(), 2);
}

#[test]
fn non_finite_point_dropped_with_warning() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nan.bin");
    fs::write(&path, encode(&[1.0, 2.0, 3.0, 0.0, f32::NAN, 1.0, 1.0, 0.0, 4.0, 5.0, 6.0, 0.0])).unwrap();
    let before = warning_count();
    let (cloud, stats) = read_velodyne_bin_with_stats(&path).unwrap();
    assert_eq!(cloud.len(), 2);
    assert_eq!(stats.dropped_non_finite, 1);
    assert!(warning_count() > before);
}

#[test]
fn zero_range_points_dropped() {
    let (cloud, stats) = parse_velodyne(&encode(&[0.0, 0.0, 0.0, 0.3, 1.0, 0.0, 0.0, 0.3])).unwrap();
    assert_eq!(cloud.points, vec![Vec3::new(1.0, 0.0, 0.0)]);
    assert_eq!(stats.dropped_zero_range, 1);
}

#[test]
fn truncated_scan_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.bin");
    fs::write(&path, vec![0u8; 17]).unwrap();
    assert!(matches!(read_velodyne_bin(&path), Err(Error::MalformedSize { size: 17, .. })));
}

#[test]
fn identity_row_parses_to_identity() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("poses.txt");
    fs::write(&path, "1 0 0 0 0 1 0 0 0 0 1 0\n").unwrap();
    let traj = read_kitti_poses(&path).unwrap();
    assert_eq!(traj.pose_vec(), vec![Pose::identity()]);
    assert_eq!(format_kitti_row(&Pose::identity()), "1 0 0 0 0 1 0 0 0 0 1 0");
}

#[test]
fn trajectory_round_trip() {
    let mut r = rng(11);
    let traj = Trajectory::from_poses((0..50).map(|_| random_pose(&mut r, 3.0, 500.0)));
    let dir = tempfile::tempdir().unwrap();
    for (format, tol) in [(TrajectoryFormat::Kitti3x4, 0.0f64), (TrajectoryFormat::Tum, 1e-15)] {
        let path = dir.path().join("traj.txt");
        write_trajectory(&traj, &path, format).unwrap();
        let back = read_trajectory(&path).unwrap();
        assert_eq!(back.len(), traj.len());
        for ((i, a), (j, b)) in traj.entries().iter().zip(back.entries()) {
            assert_eq!(i, j);
            let rot = (a.rotation - b.rotation).amax();
            let trans = (a.translation - b.translation).amax() / a.translation.amax().max(1.0);
            assert!(rot <= tol.max(1e-15) && trans <= 1e-15, "{format:?}: {rot:e} {trans:e}");
        }
    }
}

#[test]
fn empty_trajectory_writes_empty_file() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.txt");
    write_trajectory(&Trajectory::new(), &path, TrajectoryFormat::Kitti3x4).unwrap();
    assert_eq!(fs::read_to_string(&path).unwrap(), "");
    assert!(read_trajectory(&path).unwrap().is_empty());
}

#[test]
fn parse_error_reports_line() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("poses.txt");
    fs::write(&path, "1 0 0 0 0 1 0 0 0 0 1 0\n1 0 0 0 0 1 0 x 0 0 1 0\n").unwrap();
    match read_kitti_poses(&path) {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
        other => panic!("{other:?}"),
    }
}

#[test]
fn kitti_stats_of_ground_truth_is_zero() {
    let gt = winding(900, 1);
    let s = kitti_stats(&gt, &gt).unwrap();
    assert_eq!(s.translation_error, 0.0);
    assert_eq!(s.rotation_error, 0.0);
    assert!(s.samples > 0);
}

#[test]
fn scaled_straight_line_matches_hand_computation() {
    // Frames 1 m apart; the estimate is 1% too long. The segment of length L
    // starting at frame f ends at the first frame strictly beyond f + L, i.e.
    // f + L + 1, so each segment's error is 0.01 * (L + 1) / L.
    let n = 1000;
    let gt = straight(n, 1.0);
    let est = straight(n, 1.01);
    let s = kitti_stats(&est, &gt).unwrap();
    let (mut sum, mut count) = (0.0, 0usize);
    for first in (0..n).step_by(SEGMENT_STEP) {
        for &length in &SEGMENT_LENGTHS {
            let last = first + length as usize + 1;
            if last < n {
                let d = (last - first) as f64;
                sum += 0.01 * d / length;
                count += 1;
            }
        }
    }
    assert_eq!(s.samples, count);
    assert!((s.translation_error - 100.0 * sum / count as f64).abs() < 1e-9, "{}", s.translation_error);
    assert!((s.translation_error - 1.0).abs() < 0.01);
    assert_eq!(s.rotation_error, 0.0);
}

#[test]
fn too_short_trajectory_reported() {
    let gt = straight(50, 1.0);
    assert!(matches!(kitti_stats(&gt, &gt), Err(Error::TooShort(_))));
}

#[test]
fn kitti_stats_invariant_to_global_frame() {
    let gt = winding(700, 2);
    let mut r = rng(3);
    let est = Trajectory::from_poses(gt.poses().map(|p| p.compose(&random_pose(&mut r, 0.002, 0.02))));
    let a = kitti_stats(&est, &gt).unwrap();
    let (g1, g2) = (random_pose(&mut r, 2.0, 100.0), random_pose(&mut r, 2.0, 100.0));
    let b = kitti_stats(&est.transformed(&g1), &gt.transformed(&g2)).unwrap();
    assert!((a.translation_error - b.translation_error).abs() < 1e-9);
    assert!((a.rotation_error - b.rotation_error).abs() < 1e-9);
}

#[test]
fn ate_invariant_to_rigid_motion_of_estimate() {
    let gt = winding(200, 4);
    let mut r = rng(5);
    let est = Trajectory::from_poses(gt.poses().map(|p| p.compose(&random_pose(&mut r, 0.01, 0.2))));
    let a = ate(&est, &gt).unwrap();
    let b = ate(&est.transformed(&random_pose(&mut r, 2.0, 50.0)), &gt).unwrap();
    assert!((a.translation_rmse - b.translation_rmse).abs() < 1e-9);
    assert!((a.rotation_rmse - b.rotation_rmse).abs() < 1e-9);
}

#[test]
fn ate_alignment_matches_grid_search() {
    let corners = [(0.0, 0.0), (10.0, 0.0), (10.0, 10.0), (0.0, 10.0)];
    let gt: Vec<Pose> = corners.iter().map(|&(x, y)| Pose::from_translation(Vec3::new(x, y, 0.0))).collect();
    let mut est = gt.clone();
    est[2].translation.z += 1.0;
    let gt_traj = Trajectory::from_poses(gt.clone());
    let res = ate(&Trajectory::from_poses(est.clone()), &gt_traj).unwrap();
    let sse = |p: &Pose| ate_with_alignment(&est, &gt, p).translation_rmse;
    let oracle = grid_search_argmin(sse, &Pose::identity(), 0.3, 1.0, 1e-5);
    assert!(sse(&res.alignment) <= sse(&oracle) + 1e-12);
    let (dr, dt) = pose_error(&res.alignment, &oracle);
    assert!(dr.to_radians() < 1e-3 && dt < 1e-3, "{dr} deg {dt} m");
}

#[test]
fn collinear_ground_truth_rejected() {
    let gt = straight(10, 1.0);
    assert!(matches!(ate(&gt, &gt), Err(Error::DegenerateAlignment(_))));
}

#[test]
fn mismatched_lengths_rejected() {
    assert!(matches!(
        kitti_stats(&straight(200, 1.0), &straight(201, 1.0)),
        Err(Error::LengthMismatch { .. })
    ));
}

#[test]
fn evaluators_do_not_modify_inputs() {
    let gt = winding(300, 6);
    let est = gt.transformed(&Pose::from_translation(Vec3::new(1.0, 0.0, 0.0)));
    let (gt0, est0) = (gt.clone(), est.clone());
    kitti_stats(&est, &gt).unwrap();
    let a = ate(&est, &gt).unwrap();
    assert_eq!((gt, est), (gt0, est0));
    assert!(a.translation_rmse < 1e-9);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kitti_row_round_trip(seed in any::<u64>()) {
        let pose = random_pose(&mut rng(seed), 3.0, 1000.0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.txt");
        write_trajectory(&Trajectory::from_poses([pose]), &path, TrajectoryFormat::Kitti3x4).unwrap();
        prop_assert_eq!(read_kitti_poses(&path).unwrap().pose_vec(), vec![pose]);
    }
}
