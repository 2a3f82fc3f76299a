//! Scan-to-map odometry: correspondence search over a world voxel map,
//! pose refinement and map fusion, all in one thread.

use std::collections::{BTreeMap, BTreeSet};
use std::time::Instant;

use rustc_hash::FxHashMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kdtree::NeighborIndex;
use crate::metrics::{Correspondence, CostParams};
use crate::optimizer::{newton_solve, NewtonConfig, Objective};
use crate::se3::Pose;
use crate::trajectory::Trajectory;
use crate::voxel::{
    voxel_index_of, voxelize, GaussianVoxel, PointCloud, VoxelAccumulator, VoxelGrid, VoxelIndex,
    DEFAULT_MIN_POINTS,
};

/// World-frame voxel map built from exact sufficient statistics.
#[derive(Debug, Clone)]
pub struct VoxelMap {
    voxel_size: f64,
    min_points: usize,
    lambda: f64,
    max_voxels: Option<usize>,
    cells: FxHashMap<VoxelIndex, VoxelAccumulator>,
    finalized: BTreeMap<VoxelIndex, GaussianVoxel>,
    indexed: Vec<GaussianVoxel>,
    index: NeighborIndex,
}

impl VoxelMap {
    pub fn new(voxel_size: f64, min_points: usize, lambda: f64) -> Self {
        Self {
            voxel_size,
            min_points,
            lambda,
            max_voxels: None,
            cells: FxHashMap::default(),
            finalized: BTreeMap::new(),
            indexed: Vec::new(),
            index: NeighborIndex::default(),
        }
    }

    /// Caps the number of map voxels; the ones farthest from the latest
    /// fusion pose are evicted first.
    pub fn with_max_voxels(mut self, max_voxels: Option<usize>) -> Self {
        self.max_voxels = max_voxels;
        self
    }

    /// Map holding exactly the voxels of `grid`, taken as world-frame.
    pub fn from_grid(grid: &VoxelGrid, min_points: usize, lambda: f64) -> Self {
        let mut map = Self::new(grid.voxel_size(), min_points, lambda);
        fuse_scan(grid, &Pose::identity(), &mut map);
        map
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    /// Number of finalized voxels available for matching.
    pub fn len(&self) -> usize {
        self.finalized.len()
    }

    pub fn is_empty(&self) -> bool {
        self.finalized.is_empty()
    }

    pub fn accumulator(&self, index: &VoxelIndex) -> Option<&VoxelAccumulator> {
        self.cells.get(index)
    }

    pub fn accumulators(&self) -> impl Iterator<Item = (&VoxelIndex, &VoxelAccumulator)> {
        self.cells.iter()
    }

    /// Finalized voxels ordered by index.
    pub fn voxels(&self) -> impl Iterator<Item = (&VoxelIndex, &GaussianVoxel)> {
        self.finalized.iter()
    }

    /// Snapshot of the finalized voxels as a grid.
    pub fn to_grid(&self) -> VoxelGrid {
        VoxelGrid::from_cells(
            self.voxel_size,
            self.finalized.iter().map(|(k, v)| (*k, *v)).collect(),
        )
    }

    /// Adds world-frame statistics to the cell containing their mean.
    fn add(&mut self, acc: VoxelAccumulator) -> Option<VoxelIndex> {
        if acc.count == 0 {
            return None;
        }
        let key = voxel_index_of(&acc.mean(), self.voxel_size);
        *self.cells.entry(key).or_default() += acc;
        Some(key)
    }

    fn refresh(&mut self, touched: &BTreeSet<VoxelIndex>, pose: &Pose) {
        for key in touched {
            let acc = &self.cells[key];
            match acc.finalize_with(self.min_points, self.lambda) {
                Some(g) => {
                    self.finalized.insert(*key, g);
                }
                None => {
                    self.finalized.remove(key);
                }
            }
        }
        if let Some(cap) = self.max_voxels {
            self.evict(cap, pose);
        }
        self.indexed = self.finalized.values().copied().collect();
        let means: Vec<_> = self.indexed.iter().map(|g| g.mean).collect();
        self.index = NeighborIndex::build(&means);
    }

    fn evict(&mut self, cap: usize, pose: &Pose) {
        if self.cells.len() <= cap {
            return;
        }
        let origin = pose.translation;
        let mut by_distance: Vec<(f64, VoxelIndex)> = self
            .cells
            .iter()
            .map(|(k, acc)| ((acc.mean() - origin).norm_squared(), *k))
            .collect();
        by_distance.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let excess = self.cells.len() - cap;
        for (_, key) in by_distance.into_iter().take(excess) {
            self.cells.remove(&key);
            self.finalized.remove(&key);
        }
    }

    /// Nearest finalized voxel to `point` within `max_dist`.
    pub fn nearest(&self, point: &crate::se3::Vec3, max_dist: f64) -> Option<(&GaussianVoxel, f64)> {
        self.index
            .nearest_within(point, max_dist)
            .map(|n| (&self.indexed[n.index], n.dist_sq.sqrt()))
    }
}

/// Pairs each scan voxel with the nearest map voxel (by distance between the
/// transformed scan mean and the map mean), keeping pairs within `max_dist`.
pub fn find_correspondences(
    scan: &VoxelGrid,
    map: &VoxelMap,
    pose: &Pose,
    max_dist: f64,
) -> Result<Vec<Correspondence>> {
    if map.is_empty() {
        return Err(Error::invalid("map has no finalized voxels"));
    }
    let out: Vec<_> = scan
        .voxels()
        .filter_map(|src| {
            let world = pose.transform_point(&src.mean);
            map.nearest(&world, max_dist)
                .map(|(tgt, _)| Correspondence::new(*src, *tgt))
        })
        .collect();
    if out.is_empty() {
        return Err(Error::NoCorrespondences);
    }
    Ok(out)
}

/// Transforms the statistics of every scan voxel by `pose` and accumulates
/// them into the map.
pub fn fuse_scan(scan: &VoxelGrid, pose: &Pose, map: &mut VoxelMap) {
    let mut touched = BTreeSet::new();
    for g in scan.voxels() {
        if let Some(key) = map.add(g.to_accumulator().transformed(pose)) {
            touched.insert(key);
        }
    }
    if !touched.is_empty() {
        map.refresh(&touched, pose);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MotionModel {
    Identity,
    ConstantVelocity,
}

impl std::str::FromStr for MotionModel {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Self::Identity),
            "constant-velocity" => Ok(Self::ConstantVelocity),
            _ => Err(Error::invalid(format!("unknown motion model '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Scan voxel size in meters.
    pub voxel_size: f64,
    /// Map voxel size; defaults to `voxel_size`.
    pub map_voxel_size: Option<f64>,
    pub min_points: usize,
    pub cost: CostParams,
    pub newton: NewtonConfig,
    pub max_correspondence_distance: f64,
    pub motion_model: MotionModel,
    /// Cap on correspondence-search / solve rounds per scan.
    pub max_rounds: usize,
    pub max_map_voxels: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self::with_voxel_size(3.0)
    }
}

impl PipelineConfig {
    pub fn with_voxel_size(voxel_size: f64) -> Self {
        Self {
            voxel_size,
            map_voxel_size: None,
            min_points: DEFAULT_MIN_POINTS,
            cost: CostParams::default(),
            newton: NewtonConfig::default(),
            max_correspondence_distance: 2.0 * voxel_size,
            motion_model: MotionModel::ConstantVelocity,
            max_rounds: 5,
            max_map_voxels: None,
        }
    }

    pub fn map_voxel_size(&self) -> f64 {
        self.map_voxel_size.unwrap_or(self.voxel_size)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("voxel_size", self.voxel_size),
            ("map_voxel_size", self.map_voxel_size()),
            ("max_correspondence_distance", self.max_correspondence_distance),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        if self.max_rounds == 0 {
            return Err(Error::invalid("max_rounds must be positive"));
        }
        self.cost.validate()?;
        self.newton.validate()
    }
}

/// Why registration fell back to the motion-model prediction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Fallback {
    EmptyScan,
    NoCorrespondences,
    Diverged,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Registration {
    pub pose: Pose,
    pub rounds: usize,
    pub iterations: usize,
    pub correspondences: usize,
    pub converged: bool,
    pub fallback: Option<Fallback>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrameTiming {
    pub frame: usize,
    pub points: usize,
    pub voxels: usize,
    pub correspondences: usize,
    pub iterations: usize,
    pub fallback: Option<Fallback>,
    pub voxelize_s: f64,
    pub register_s: f64,
    pub fuse_s: f64,
    pub total_s: f64,
}

#[derive(Debug, Clone)]
pub struct OdometryState {
    pub current_pose: Pose,
    pub previous_pose: Pose,
    pub map: VoxelMap,
    /// Number of frames processed so far.
    pub frame_index: usize,
    pub timing: Vec<FrameTiming>,
}

impl OdometryState {
    pub fn new(config: &PipelineConfig) -> Self {
        Self {
            current_pose: Pose::identity(),
            previous_pose: Pose::identity(),
            map: VoxelMap::new(config.map_voxel_size(), config.min_points, config.cost.lambda)
                .with_max_voxels(config.max_map_voxels),
            frame_index: 0,
            timing: Vec::new(),
        }
    }

    pub fn predict(&self, model: MotionModel) -> Pose {
        match model {
            MotionModel::Identity => self.current_pose,
            MotionModel::ConstantVelocity => {
                let delta = self.previous_pose.inverse().compose(&self.current_pose);
                self.current_pose.compose(&delta)
            }
        }
    }
}

/// Refines the world pose of `scan` against the map, starting from the
/// motion-model prediction.
pub fn register_scan(scan: &VoxelGrid, state: &OdometryState, config: &PipelineConfig) -> Registration {
    refine_pose(scan, &state.map, &state.predict(config.motion_model), config)
}

/// Alternates correspondence search and Newton solves from `guess` until the
/// pose stops moving or `max_rounds` is reached. Failures return `guess`
/// with the reason in `fallback`.
pub fn refine_pose(scan: &VoxelGrid, map: &VoxelMap, guess: &Pose, config: &PipelineConfig) -> Registration {
    let guess = *guess;
    let fallback = |reason, rounds, iterations| Registration {
        pose: guess,
        rounds,
        iterations,
        correspondences: 0,
        converged: false,
        fallback: Some(reason),
    };
    if scan.is_empty() {
        return fallback(Fallback::EmptyScan, 0, 0);
    }

    let mut pose = guess;
    let mut iterations = 0;
    let mut correspondences = 0;
    let mut converged = false;
    let mut rounds = 0;
    while rounds < config.max_rounds {
        rounds += 1;
        let corr = match find_correspondences(scan, map, &pose, config.max_correspondence_distance) {
            Ok(c) => c,
            Err(_) => return fallback(Fallback::NoCorrespondences, rounds, iterations),
        };
        correspondences = corr.len();
        let solved = Objective::new(&corr, config.cost)
            .and_then(|obj| newton_solve(&obj, &pose, &config.newton));
        let result = match solved {
            Ok(r) if r.pose.is_finite() => r,
            _ => return fallback(Fallback::Diverged, rounds, iterations),
        };
        iterations += result.iterations;
        let change = result.pose.compose(&pose.inverse()).log().norm();
        pose = result.pose;
        if change < config.newton.step_norm_tolerance {
            converged = true;
            break;
        }
    }
    Registration {
        pose,
        rounds,
        iterations,
        correspondences,
        converged,
        fallback: None,
    }
}

/// Processes one scan: voxelize, register against the map, fuse.
pub fn process_scan(cloud: &PointCloud, state: &mut OdometryState, config: &PipelineConfig) -> FrameTiming {
    let start = Instant::now();
    let grid = voxelize(cloud, config.voxel_size, config.min_points, config.cost.lambda);
    let t_voxelized = Instant::now();
    let grid = grid.unwrap_or_else(|_| VoxelGrid::from_cells(config.voxel_size, Vec::new()));

    let reg = if state.frame_index == 0 {
        Registration {
            pose: Pose::identity(),
            rounds: 0,
            iterations: 0,
            correspondences: 0,
            converged: true,
            fallback: None,
        }
    } else {
        register_scan(&grid, state, config)
    };
    let t_registered = Instant::now();

    if reg.fallback.is_none() || state.map.is_empty() {
        fuse_scan(&grid, &reg.pose, &mut state.map);
    }
    let t_fused = Instant::now();

    if state.frame_index == 0 {
        state.previous_pose = reg.pose;
    } else {
        state.previous_pose = state.current_pose;
    }
    state.current_pose = reg.pose;

    let timing = FrameTiming {
        frame: state.frame_index,
        points: cloud.len(),
        voxels: grid.len(),
        correspondences: reg.correspondences,
        iterations: reg.iterations,
        fallback: reg.fallback,
        voxelize_s: (t_voxelized - start).as_secs_f64(),
        register_s: (t_registered - t_voxelized).as_secs_f64(),
        fuse_s: (t_fused - t_registered).as_secs_f64(),
        total_s: (t_fused - start).as_secs_f64(),
    };
    state.timing.push(timing);
    state.frame_index += 1;
    timing
}

/// Summary of per-frame wall-clock durations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TimingStats {
    pub frames: usize,
    pub total_s: f64,
    pub mean_frame_s: f64,
    /// Frames per second over the whole run: frames / total time.
    pub fps: f64,
    pub mean_reduction_ratio: f64,
}

impl TimingStats {
    pub fn from_frames(frames: &[FrameTiming]) -> Self {
        let n = frames.len();
        let total_s: f64 = frames.iter().map(|f| f.total_s).sum();
        let ratios: Vec<f64> = frames
            .iter()
            .filter(|f| f.points > 0)
            .map(|f| f.voxels as f64 / f.points as f64)
            .collect();
        Self {
            frames: n,
            total_s,
            mean_frame_s: if n > 0 { total_s / n as f64 } else { 0.0 },
            fps: if total_s > 0.0 { n as f64 / total_s } else { 0.0 },
            mean_reduction_ratio: if ratios.is_empty() {
                0.0
            } else {
                ratios.iter().sum::<f64>() / ratios.len() as f64
            },
        }
    }
}

#[derive(Debug)]
pub struct OdometryRun {
    pub trajectory: Trajectory,
    pub map: VoxelMap,
    pub timing: Vec<FrameTiming>,
    pub stats: TimingStats,
    /// Set when the scan stream failed part-way; the trajectory holds the
    /// frames processed before the failure.
    pub stream_error: Option<Error>,
}

/// Runs the full pipeline over a stream of scans.
pub fn run_odometry<I>(scans: I, config: &PipelineConfig) -> Result<OdometryRun>
where
    I: IntoIterator<Item = Result<PointCloud>>,
{
    config.validate()?;
    let mut state = OdometryState::new(config);
    let mut trajectory = Trajectory::new();
    let mut stream_error = None;
    for scan in scans {
        match scan {
            Ok(cloud) => {
                let frame = state.frame_index;
                process_scan(&cloud, &mut state, config);
                trajectory.push(frame, state.current_pose)?;
            }
            Err(e) => {
                stream_error = Some(e);
                break;
            }
        }
    }
    if trajectory.is_empty() && stream_error.is_none() {
        return Err(Error::invalid("no scans to process"));
    }
    let stats = TimingStats::from_frames(&state.timing);
    Ok(OdometryRun {
        trajectory,
        map: state.map,
        timing: state.timing,
        stats,
        stream_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::se3::{Mat3, Vec3};

    fn grid_of(means: &[Vec3]) -> VoxelGrid {
        VoxelGrid::from_gaussians(
            3.0,
            means
                .iter()
                .map(|m| GaussianVoxel::new(*m, Mat3::from_diagonal(&Vec3::new(0.3, 0.2, 0.1)), 10)),
        )
    }

    #[test]
    fn self_correspondences_at_identity() {
        let means = [
            Vec3::new(0.5, 0.5, 0.5),
            Vec3::new(4.0, 1.0, 0.2),
            Vec3::new(-5.0, 7.0, 1.0),
        ];
        let grid = grid_of(&means);
        let mut map = VoxelMap::new(3.0, 6, 1e-6);
        fuse_scan(&grid, &Pose::identity(), &mut map);
        let corr = find_correspondences(&grid, &map, &Pose::identity(), 6.0).unwrap();
        assert_eq!(corr.len(), 3);
        for c in corr {
            assert!((c.source.mean - c.target.mean).norm() < 1e-12);
        }
    }

    #[test]
    fn gating_rejects_far_voxel() {
        let mut map = VoxelMap::new(3.0, 6, 1e-6);
        fuse_scan(&grid_of(&[Vec3::new(10.0, 0.0, 0.0)]), &Pose::identity(), &mut map);
        let scan = grid_of(&[Vec3::zeros()]);
        assert!(matches!(
            find_correspondences(&scan, &map, &Pose::identity(), 6.0),
            Err(Error::NoCorrespondences)
        ));
    }

    #[test]
    fn fusing_twice_doubles_counts() {
        let grid = grid_of(&[Vec3::new(0.5, 0.5, 0.5), Vec3::new(4.0, 1.0, 0.2)]);
        let mut map = VoxelMap::new(3.0, 6, 1e-6);
        fuse_scan(&grid, &Pose::identity(), &mut map);
        fuse_scan(&grid, &Pose::identity(), &mut map);
        for ((_, g), src) in map.voxels().zip(grid.voxels()) {
            assert_eq!(g.count, 2 * src.count);
            assert!((g.mean - src.mean).amax() < 1e-12);
        }
    }

    #[test]
    fn empty_scan_leaves_map_unchanged() {
        let mut map = VoxelMap::new(3.0, 6, 1e-6);
        fuse_scan(&grid_of(&[Vec3::new(1.0, 1.0, 1.0)]), &Pose::identity(), &mut map);
        let before: Vec<_> = map.voxels().map(|(k, v)| (*k, *v)).collect();
        fuse_scan(&VoxelGrid::from_cells(3.0, vec![]), &Pose::identity(), &mut map);
        let after: Vec<_> = map.voxels().map(|(k, v)| (*k, *v)).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn eviction_keeps_nearest_voxels() {
        let means: Vec<_> = (0..10).map(|i| Vec3::new(3.0 * i as f64 + 1.0, 1.0, 1.0)).collect();
        let mut map = VoxelMap::new(3.0, 6, 1e-6).with_max_voxels(Some(4));
        fuse_scan(&grid_of(&means), &Pose::identity(), &mut map);
        assert_eq!(map.len(), 4);
        assert!(map.voxels().all(|(_, g)| g.mean.x < 12.0));
    }

    #[test]
    fn constant_velocity_prediction() {
        let config = PipelineConfig::default();
        let mut state = OdometryState::new(&config);
        state.previous_pose = Pose::from_translation(Vec3::new(1.0, 0.0, 0.0));
        state.current_pose = Pose::from_translation(Vec3::new(2.0, 0.0, 0.0));
        let p = state.predict(MotionModel::ConstantVelocity);
        assert!((p.translation - Vec3::new(3.0, 0.0, 0.0)).norm() < 1e-12);
        assert_eq!(state.predict(MotionModel::Identity), state.current_pose);
    }
}
