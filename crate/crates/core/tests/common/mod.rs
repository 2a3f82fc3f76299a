//! Shared fixtures and independent oracles for the integration tests.
#![allow(dead_code)]

use nalgebra::{Matrix4, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use voxreg::se3::{hat, Mat3, Pose, Twist, Vec3};
use voxreg::synthetic::random_covariance;
use voxreg::GaussianVoxel;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Rotation (degrees) and translation (meters) separating two poses.
pub fn pose_error(a: &Pose, b: &Pose) -> (f64, f64) {
    let d = a.inverse().compose(b);
    (rotation_angle(&d.rotation).to_degrees(), (a.translation - b.translation).norm())
}

/// Geodesic angle; atan2 keeps precision near zero where acos of the trace does not.
pub fn rotation_angle(r: &Mat3) -> f64 {
    let skew = r - r.transpose();
    let sin = 0.5 * Vec3::new(skew[(2, 1)], skew[(0, 2)], skew[(1, 0)]).norm();
    sin.atan2((r.trace() - 1.0) / 2.0)
}

/// 4x4 generator of a twist ordered `(rotation, translation)`.
pub fn twist_matrix(xi: &Twist) -> Matrix4<f64> {
    let mut m = Matrix4::zeros();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(&hat(&xi.rotation));
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&xi.translation);
    m
}

/// Matrix exponential by scaling and squaring of a truncated Taylor series.
pub fn expm(m: &Matrix4<f64>) -> Matrix4<f64> {
    let norm = m.abs().max();
    let squarings = if norm > 0.25 { (norm / 0.25).log2().ceil() as u32 } else { 0 };
    let a = m / 2f64.powi(squarings as i32);
    let mut term = Matrix4::identity();
    let mut sum = Matrix4::identity();
    for k in 1..=20 {
        term = term * a / k as f64;
        sum += term;
    }
    for _ in 0..squarings {
        sum = sum * sum;
    }
    sum
}

/// Population moments computed in two passes over the raw points.
pub fn two_pass_moments(points: &[Vec3]) -> (Vec3, Mat3) {
    let n = points.len() as f64;
    let mean = points.iter().sum::<Vec3>() / n;
    let cov = points
        .iter()
        .map(|p| (p - mean) * (p - mean).transpose())
        .sum::<Mat3>()
        / n;
    (mean, cov)
}

/// Index of the nearest point by linear scan; ties go to the lowest index.
pub fn brute_nearest(points: &[Vec3], q: &Vec3) -> Option<(usize, f64)> {
    points
        .iter()
        .enumerate()
        .map(|(i, p)| (i, (p - q).norm_squared()))
        .fold(None, |best: Option<(usize, f64)>, (i, d)| match best {
            Some((_, bd)) if bd <= d => best,
            _ => Some((i, d)),
        })
}

/// Coarse-to-fine grid search for the minimizer of `f` over left
/// perturbations `exp(delta) * center`, five samples per axis per level.
pub fn grid_search_argmin(
    f: impl Fn(&Pose) -> f64,
    center: &Pose,
    rot_radius: f64,
    trans_radius: f64,
    resolution: f64,
) -> Pose {
    const STEPS: [f64; 5] = [-1.0, -0.5, 0.0, 0.5, 1.0];
    let mut best = *center;
    let mut best_val = f(&best);
    let (mut rr, mut tr) = (rot_radius, trans_radius);
    while rr.max(tr) > resolution {
        let base = best;
        let mut idx = [0usize; 6];
        loop {
            let scale = [rr, rr, rr, tr, tr, tr];
            let v = Vector6::from_fn(|i, _| STEPS[idx[i]] * scale[i]);
            let candidate = Pose::exp(&Twist::from_vector(&v)).compose(&base);
            let val = f(&candidate);
            if val < best_val {
                best_val = val;
                best = candidate;
            }
            let mut axis = 0;
            while axis < 6 {
                idx[axis] += 1;
                if idx[axis] < STEPS.len() {
                    break;
                }
                idx[axis] = 0;
                axis += 1;
            }
            if axis == 6 {
                break;
            }
        }
        rr *= 0.5;
        tr *= 0.5;
    }
    best
}

fn cell_center(i: i64, voxel: f64) -> f64 {
    (i as f64 + 0.5) * voxel
}

/// Gaussian voxels of a corridor along x: a floor, two walls, and pillars
/// and crates at irregular positions that pin the along-axis translation.
/// Every Gaussian occupies its own 3 m cell.
pub fn gaussian_corridor(seed: u64) -> Vec<GaussianVoxel> {
    let v = 3.0;
    let mut rng = rng(seed);
    let mut out = Vec::new();
    let flat = |normal: usize| {
        let mut d = Vec3::repeat(0.6);
        d[normal] = 2e-3;
        Mat3::from_diagonal(&d)
    };
    for i in -5..5 {
        let x = cell_center(i, v);
        for j in [-1, 0] {
            out.push(GaussianVoxel::new(Vec3::new(x, cell_center(j, v), -1.5), flat(2), 40));
        }
        for j in [-2, 1] {
            for k in [0, 1] {
                out.push(GaussianVoxel::new(Vec3::new(x, cell_center(j, v), cell_center(k, v)), flat(1), 40));
            }
        }
    }
    // Cells at z = 1.5 inside the corridor hold the irregular features.
    for i in -5..5 {
        for j in [-1, 0] {
            if rng.random_bool(0.55) {
                let jitter = Vec3::new(rng.random_range(-1.2..1.2), rng.random_range(-1.2..1.2), rng.random_range(-1.0..1.0));
                let mean = Vec3::new(cell_center(i, v), cell_center(j, v), 1.5) + jitter;
                let cov = if rng.random_bool(0.5) {
                    Mat3::from_diagonal(&Vec3::new(0.02, 0.02, 0.7))
                } else {
                    random_covariance(&mut rng, 0.01, 0.6)
                };
                out.push(GaussianVoxel::new(mean, cov, 30));
            }
        }
    }
    out
}

/// Moves every Gaussian by `pose`.
pub fn transform_voxels(voxels: &[GaussianVoxel], pose: &Pose) -> Vec<GaussianVoxel> {
    voxels
        .iter()
        .map(|g| {
            let (mean, cov) = voxreg::se3::transform_gaussian(pose, &g.mean, &g.cov).unwrap();
            GaussianVoxel::new(mean, cov, g.count)
        })
        .collect()
}

pub fn max_abs(m: &Mat3) -> f64 {
    m.abs().max()
}
