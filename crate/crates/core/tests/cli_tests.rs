use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use voxreg::io::{write_trajectory, write_velodyne_bin, TrajectoryFormat};
use voxreg::se3::{Pose, Vec3};
use voxreg::synthetic::{simulate_sequence, LidarModel};
use voxreg::trajectory::Trajectory;

fn voxreg(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_voxreg"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn square_path() -> Trajectory {
    Trajectory::from_poses(
        (0..40).map(|i| {
            let (x, y) = match i / 10 {
                0 => (i as f64, 0.0),
                1 => (10.0, (i - 10) as f64),
                2 => (10.0 - (i - 20) as f64, 10.0),
                _ => (0.0, 10.0 - (i - 30) as f64),
            };
            Pose::from_translation(Vec3::new(x, y, 0.0))
        }),
    )
}

#[test]
fn evaluate_identical_files_reports_zero() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("traj.txt");
    write_trajectory(&square_path(), &path, TrajectoryFormat::Kitti3x4).unwrap();
    let p = path.to_str().unwrap();
    let out = voxreg(&["evaluate", p, p], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.contains("ate: rotation 0.000000 deg, translation 0.000000 m"), "{stdout}");
    assert!(stdout.contains("kitti: skipped"), "{stdout}");
}

#[test]
fn odometry_writes_one_row_per_scan() {
    let dir = tempfile::tempdir().unwrap();
    let scans = dir.path().join("scans");
    fs::create_dir(&scans).unwrap();
    let seq = simulate_sequence(3, 1.0, &LidarModel::coarse(), 3);
    for (i, scan) in seq.scans.iter().enumerate() {
        write_velodyne_bin(scan, scans.join(format!("{i:06}.bin"))).unwrap();
    }
    let out_dir = dir.path().join("out");
    let out = voxreg(
        &["odometry", "--sequence", scans.to_str().unwrap(), "--output", out_dir.to_str().unwrap()],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let traj = fs::read_to_string(out_dir.join("trajectory.txt")).unwrap();
    assert_eq!(traj.lines().count(), 3);
    assert!(traj.lines().all(|l| l.split_whitespace().count() == 12));
    assert!(out_dir.join("timing.json").is_file());
}

#[test]
fn voxel_sweep_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = voxreg(
        &["voxel-sweep", "--synthetic", "4", "--sizes", "3,6", "--output", out_dir.to_str().unwrap()],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(out_dir.join("voxel_sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3);
    assert_eq!(lines[0], "voxel_size,total_time_s,fps,rot_err_deg_per_100m,trans_err_pct,reduction_ratio");
    assert!(lines.iter().all(|l| l.split(',').count() == 6));
    assert!(lines[1].starts_with("3,") && lines[2].starts_with("6,"));
}

#[test]
fn failure_prints_structured_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.txt");
    let m = missing.to_str().unwrap();
    let out = voxreg(&["evaluate", m, m], dir.path());
    assert!(!out.status.success());
    let err: serde_json::Value = serde_json::from_str(String::from_utf8(out.stderr).unwrap().trim()).unwrap();
    assert_eq!(err["error"], "io");
    assert!(err["message"].as_str().unwrap().contains("missing.txt"));
}

#[test]
fn invalid_option_value_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = voxreg(&["voxel-sweep", "--synthetic", "2", "--sizes", "0,-1"], dir.path());
    assert!(!out.status.success());
    let err: serde_json::Value = serde_json::from_str(String::from_utf8(out.stderr).unwrap().trim()).unwrap();
    assert_eq!(err["error"], "invalid-argument");
}

#[test]
fn check_derivatives_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = voxreg(&["check-derivatives", "--configs", "30"], dir.path());
    assert!(out.status.success());
    assert!(String::from_utf8(out.stdout).unwrap().contains("PASS"));
}
