//! Deterministic ray-cast LiDAR sequences over a street-like scene, for
//! benchmarks and tests without a dataset.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::metrics::Correspondence;
use crate::se3::{exp_so3, symmetrize, Mat3, Pose, Vec3};
use crate::trajectory::Trajectory;
use crate::voxel::{GaussianVoxel, PointCloud};

/// Spinning multi-beam sensor. Defaults approximate an HDL-64E.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LidarModel {
    pub beams: usize,
    pub min_elevation_deg: f64,
    pub max_elevation_deg: f64,
    pub azimuth_steps: usize,
    pub min_range: f64,
    pub max_range: f64,
    pub range_noise: f64,
    pub mount_height: f64,
}

impl Default for LidarModel {
    fn default() -> Self {
        Self {
            beams: 64,
            min_elevation_deg: -24.8,
            max_elevation_deg: 2.0,
            azimuth_steps: 1800,
            min_range: 2.0,
            max_range: 80.0,
            range_noise: 0.02,
            mount_height: 1.73,
        }
    }
}

impl LidarModel {
    /// Reduced resolution for fast tests.
    pub fn coarse() -> Self {
        Self {
            beams: 32,
            azimuth_steps: 720,
            ..Self::default()
        }
    }

    fn directions(&self) -> Vec<Vec3> {
        let mut dirs = Vec::with_capacity(self.beams * self.azimuth_steps);
        for b in 0..self.beams {
            let f = if self.beams > 1 { b as f64 / (self.beams - 1) as f64 } else { 0.5 };
            let el = (self.min_elevation_deg + f * (self.max_elevation_deg - self.min_elevation_deg)).to_radians();
            for a in 0..self.azimuth_steps {
                let az = 2.0 * std::f64::consts::PI * a as f64 / self.azimuth_steps as f64;
                dirs.push(Vec3::new(el.cos() * az.cos(), el.cos() * az.sin(), el.sin()));
            }
        }
        dirs
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Shape {
    Box { min: Vec3, max: Vec3 },
    Pole { center: [f64; 2], radius: f64, height: f64 },
}

impl Shape {
    fn reach(&self) -> (Vec3, f64) {
        match *self {
            Shape::Box { min, max } => ((min + max) / 2.0, (max - min).norm() / 2.0),
            Shape::Pole { center, radius, height } => (
                Vec3::new(center[0], center[1], height / 2.0),
                radius + height / 2.0,
            ),
        }
    }

    fn intersect(&self, o: &Vec3, d: &Vec3, t_max: f64) -> Option<f64> {
        match *self {
            Shape::Box { min, max } => {
                let (mut t0, mut t1) = (0.0f64, t_max);
                for a in 0..3 {
                    let inv = 1.0 / d[a];
                    let (mut near, mut far) = ((min[a] - o[a]) * inv, (max[a] - o[a]) * inv);
                    if near > far {
                        std::mem::swap(&mut near, &mut far);
                    }
                    t0 = t0.max(near);
                    t1 = t1.min(far);
                    if t0 > t1 {
                        return None;
                    }
                }
                (t0 > 0.0).then_some(t0)
            }
            Shape::Pole { center, radius, height } => {
                let (px, py) = (o.x - center[0], o.y - center[1]);
                let a = d.x * d.x + d.y * d.y;
                if a == 0.0 {
                    return None;
                }
                let b = px * d.x + py * d.y;
                let c = px * px + py * py - radius * radius;
                let disc = b * b - a * c;
                if disc < 0.0 {
                    return None;
                }
                let t = (-b - disc.sqrt()) / a;
                let z = o.z + t * d.z;
                (t > 0.0 && t < t_max && (0.0..=height).contains(&z)).then_some(t)
            }
        }
    }
}

/// Static world: ground plane at z = 0 plus boxes and poles.
#[derive(Debug, Clone, Default)]
pub struct Scene {
    shapes: Vec<Shape>,
}

impl Scene {
    pub fn len(&self) -> usize {
        self.shapes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.shapes.is_empty()
    }

    /// Buildings, parked cars and poles along both sides of `path`.
    pub fn street(path: &[Pose], seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let clear_of_road = |c: &Vec3, half: f64, margin: f64| {
            path.iter()
                .all(|p| ((p.translation - c).xy()).norm() > half + margin)
        };
        let mut shapes = Vec::new();
        let mut s = 0usize;
        while s < path.len() {
            let p = &path[s];
            let forward = p.rotation.column(0).into_owned();
            let left = p.rotation.column(1).into_owned();
            for side in [-1.0, 1.0] {
                if rng.random_bool(0.8) {
                    let half = Vec3::new(rng.random_range(3.0..7.0), rng.random_range(3.0..7.0), 0.0);
                    let lateral = rng.random_range(9.0..16.0) + half.x.max(half.y);
                    let mut c = p.translation + left * side * lateral + forward * rng.random_range(-3.0..3.0);
                    c.z = 0.0;
                    let h = rng.random_range(4.0..15.0);
                    if clear_of_road(&c, half.norm(), 4.0) {
                        shapes.push(Shape::Box {
                            min: Vec3::new(c.x - half.x, c.y - half.y, 0.0),
                            max: Vec3::new(c.x + half.x, c.y + half.y, h),
                        });
                    }
                }
                if rng.random_bool(0.5) {
                    let c = p.translation + left * side * rng.random_range(6.0..8.0);
                    if clear_of_road(&c, 0.5, 4.0) {
                        shapes.push(Shape::Pole {
                            center: [c.x, c.y],
                            radius: rng.random_range(0.15..0.4),
                            height: rng.random_range(4.0..8.0),
                        });
                    }
                }
                if rng.random_bool(0.3) {
                    let c = p.translation + left * side * 4.5 + forward * rng.random_range(-4.0..4.0);
                    if clear_of_road(&c, 1.2, 1.5) {
                        shapes.push(Shape::Box {
                            min: Vec3::new(c.x - 1.0, c.y - 1.0, 0.0),
                            max: Vec3::new(c.x + 1.0, c.y + 1.0, 1.5),
                        });
                    }
                }
            }
            // Roughly one slice of roadside every 12 m of path.
            let mut travelled = 0.0;
            let start = s;
            while s < path.len() && travelled < 12.0 {
                s += 1;
                if s < path.len() {
                    travelled = (path[s].translation - path[start].translation).norm();
                }
            }
        }
        Self { shapes }
    }

    /// One scan in the sensor frame, taken from `sensor` (world pose).
    pub fn scan(&self, sensor: &Pose, lidar: &LidarModel, rng: &mut impl Rng) -> PointCloud {
        let o = sensor.translation;
        let near: Vec<&Shape> = self
            .shapes
            .iter()
            .filter(|s| {
                let (c, r) = s.reach();
                (c - o).norm() < lidar.max_range + r
            })
            .collect();
        let noise = Normal::new(0.0, lidar.range_noise.max(f64::MIN_POSITIVE)).unwrap();
        let mut points = Vec::new();
        for dir in lidar.directions() {
            let d = sensor.rotation * dir;
            let mut t = lidar.max_range;
            let mut hit = false;
            if d.z < 0.0 {
                let tg = -o.z / d.z;
                if tg < t {
                    t = tg;
                    hit = true;
                }
            }
            for s in &near {
                if let Some(ts) = s.intersect(&o, &d, t) {
                    t = ts;
                    hit = true;
                }
            }
            if hit && t >= lidar.min_range {
                let r = if lidar.range_noise > 0.0 { t + noise.sample(rng) } else { t };
                points.push(dir * r);
            }
        }
        PointCloud::new(points)
    }
}

/// Sensor path: `frames` poses spaced `step` meters apart on a gently
/// winding road with slight grade changes.
pub fn winding_path(frames: usize, step: f64, mount_height: f64) -> Vec<Pose> {
    let mut poses = Vec::with_capacity(frames);
    let mut pos = Vec3::new(0.0, 0.0, mount_height);
    let mut s: f64 = 0.0;
    for _ in 0..frames {
        let yaw = 0.35 * (s / 70.0).sin() + 0.15 * (s / 23.0).sin();
        let pitch = 0.01 * (s / 40.0).sin();
        let roll = 0.01 * (s / 31.0).cos();
        let r = exp_so3(&Vec3::new(0.0, 0.0, yaw)) * exp_so3(&Vec3::new(0.0, pitch, 0.0)) * exp_so3(&Vec3::new(roll, 0.0, 0.0));
        poses.push(Pose::new(r, pos));
        let heading = Vec3::new(yaw.cos(), yaw.sin(), 0.0);
        pos += heading * step;
        s += step;
    }
    poses
}

#[derive(Debug, Clone)]
pub struct Sequence {
    pub scans: Vec<PointCloud>,
    /// Sensor poses relative to the first frame.
    pub truth: Trajectory,
}

/// Simulated drive of `frames` scans, `step` meters apart.
pub fn simulate_sequence(frames: usize, step: f64, lidar: &LidarModel, seed: u64) -> Sequence {
    let path = winding_path(frames, step, lidar.mount_height);
    let mut scene_path = winding_path(frames + (60.0 / step).ceil() as usize, step, lidar.mount_height);
    // Extend the scenery backwards so the first scan sees buildings behind it.
    let back: Vec<Pose> = (1..=(60.0 / step).ceil() as usize)
        .map(|k| Pose::new(path[0].rotation, path[0].translation - path[0].rotation.column(0) * (k as f64 * step)))
        .collect();
    scene_path.extend(back);
    let scene = Scene::street(&scene_path, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let scans = path.iter().map(|p| scene.scan(p, lidar, &mut rng)).collect();
    let origin_inv = path[0].inverse();
    let truth = Trajectory::from_poses(path.iter().map(|p| origin_inv.compose(p)));
    Sequence { scans, truth }
}

/// Random rotation with angle up to `max_angle` radians.
pub fn random_rotation(rng: &mut impl Rng, max_angle: f64) -> Mat3 {
    let axis = random_unit(rng);
    exp_so3(&(axis * rng.random_range(0.0..=max_angle)))
}

fn random_unit(rng: &mut impl Rng) -> Vec3 {
    loop {
        let v = Vec3::new(
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
            rng.random_range(-1.0..1.0),
        );
        let n = v.norm();
        if n > 1e-3 && n <= 1.0 {
            return v / n;
        }
    }
}

/// Random pose with rotation angle up to `max_angle` and translation norm up to `max_translation`.
pub fn random_pose(rng: &mut impl Rng, max_angle: f64, max_translation: f64) -> Pose {
    Pose::new(
        random_rotation(rng, max_angle),
        random_unit(rng) * rng.random_range(0.0..=max_translation),
    )
}

/// Random SPD matrix with eigenvalues drawn log-uniformly from `[min_eig, max_eig]`.
pub fn random_covariance(rng: &mut impl Rng, min_eig: f64, max_eig: f64) -> Mat3 {
    let r = random_rotation(rng, std::f64::consts::PI);
    let (lo, hi) = (min_eig.ln(), max_eig.ln());
    let d = Vec3::from_fn(|_, _| rng.random_range(lo..=hi).exp());
    symmetrize(&(r * Mat3::from_diagonal(&d) * r.transpose()))
}

/// `n` Gaussian pairs whose targets are the sources moved by `truth`, with
/// mean noise of scale `mean_noise` and covariance perturbations of relative
/// scale `cov_noise`.
pub fn random_correspondences(
    rng: &mut impl Rng,
    n: usize,
    truth: &Pose,
    mean_noise: f64,
    cov_noise: f64,
) -> Vec<Correspondence> {
    (0..n)
        .map(|_| {
            let mean = Vec3::from_fn(|_, _| rng.random_range(-10.0..10.0));
            let cov = random_covariance(rng, 1e-3, 1.0);
            let source = GaussianVoxel::new(mean, cov, 20);
            let t_mean = truth.transform_point(&mean) + random_unit(rng) * rng.random_range(0.0..=mean_noise);
            let jitter = Mat3::identity() + random_covariance(rng, 1e-6, 1.0) * cov_noise;
            let t_cov = symmetrize(&(truth.rotation * jitter * cov * jitter.transpose() * truth.rotation.transpose()));
            Correspondence::new(source, GaussianVoxel::new(t_mean, t_cov, 20))
        })
        .collect()
}
