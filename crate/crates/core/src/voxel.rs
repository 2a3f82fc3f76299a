//! Voxel-grid reduction of a point cloud into per-voxel Gaussians.
//!
//! Points are voted into half-open cubic cells `[i*s, (i+1)*s)`. Each cell
//! keeps additive sufficient statistics (count, sum, sum of outer products),
//! so voxelizing two clouds and merging equals voxelizing their union.

use std::ops::{Add, AddAssign};

use nalgebra::Cholesky;
use rustc_hash::FxHashMap;

use crate::error::{Error, Result};
use crate::se3::{symmetrize, Mat3, Pose, Vec3};

pub const DEFAULT_MIN_POINTS: usize = 6;

const KEY_BITS: u32 = 21;
const KEY_MIN: i64 = -(1 << (KEY_BITS - 1));
const KEY_MAX: i64 = (1 << (KEY_BITS - 1)) - 1;
const KEY_MASK: u64 = (1 << KEY_BITS) - 1;

#[derive(Debug, Clone, Default)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
    /// Per-point reflectance; carried along but never used by registration.
    pub intensity: Option<Vec<f32>>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Self {
        Self {
            points,
            intensity: None,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn transformed(&self, pose: &Pose) -> PointCloud {
        PointCloud {
            points: self.points.iter().map(|p| pose.transform_point(p)).collect(),
            intensity: self.intensity.clone(),
        }
    }
}

/// Integer lattice coordinates of a voxel.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VoxelIndex {
    pub i: i64,
    pub j: i64,
    pub k: i64,
}

impl VoxelIndex {
    pub fn new(i: i64, j: i64, k: i64) -> Self {
        Self { i, j, k }
    }

    /// Packs the index into 21 signed bits per axis.
    pub fn pack(&self) -> Result<u64> {
        let c = [self.i, self.j, self.k];
        if c.iter().any(|&v| !(KEY_MIN..=KEY_MAX).contains(&v)) {
            return Err(Error::KeyOverflow(c));
        }
        Ok(c.iter()
            .fold(0u64, |acc, &v| (acc << KEY_BITS) | (v as u64 & KEY_MASK)))
    }

    pub fn unpack(key: u64) -> Self {
        let field = |shift: u32| {
            let raw = (key >> shift) & KEY_MASK;
            // sign-extend from 21 bits
            ((raw << (64 - KEY_BITS)) as i64) >> (64 - KEY_BITS)
        };
        Self::new(field(2 * KEY_BITS), field(KEY_BITS), field(0))
    }

    /// Center of the cell.
    pub fn anchor(&self, voxel_size: f64) -> Vec3 {
        Vec3::new(self.i as f64 + 0.5, self.j as f64 + 0.5, self.k as f64 + 0.5) * voxel_size
    }

    pub fn offset(&self, di: i64, dj: i64, dk: i64) -> Self {
        Self::new(self.i + di, self.j + dj, self.k + dk)
    }
}

/// Lattice cell containing `p`: component-wise `floor(p / voxel_size)`.
#[inline]
pub fn voxel_index_of(p: &Vec3, voxel_size: f64) -> VoxelIndex {
    VoxelIndex::new(
        (p.x / voxel_size).floor() as i64,
        (p.y / voxel_size).floor() as i64,
        (p.z / voxel_size).floor() as i64,
    )
}

/// Sufficient statistics of the points in one voxel.
///
/// Moments are taken about `origin` so that cells far from the world origin
/// keep their precision.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VoxelAccumulator {
    pub count: u64,
    pub origin: Vec3,
    /// Sum of `x - origin`.
    pub sum: Vec3,
    /// Sum of `(x - origin)(x - origin)^T`.
    pub sum_outer: Mat3,
}

impl Default for VoxelAccumulator {
    fn default() -> Self {
        Self::with_origin(Vec3::zeros())
    }
}

impl VoxelAccumulator {
    pub fn with_origin(origin: Vec3) -> Self {
        Self {
            count: 0,
            origin,
            sum: Vec3::zeros(),
            sum_outer: Mat3::zeros(),
        }
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a Vec3>) -> Self {
        let mut points = points.into_iter().peekable();
        let mut acc = Self::with_origin(points.peek().map_or_else(Vec3::zeros, |p| **p));
        for p in points {
            acc.add_point(p);
        }
        acc
    }

    #[inline]
    pub fn add_point(&mut self, p: &Vec3) {
        let d = p - self.origin;
        self.count += 1;
        self.sum += d;
        let s = &mut self.sum_outer;
        s[(0, 0)] += d.x * d.x;
        s[(0, 1)] += d.x * d.y;
        s[(0, 2)] += d.x * d.z;
        s[(1, 1)] += d.y * d.y;
        s[(1, 2)] += d.y * d.z;
        s[(2, 2)] += d.z * d.z;
        s[(1, 0)] = s[(0, 1)];
        s[(2, 0)] = s[(0, 2)];
        s[(2, 1)] = s[(1, 2)];
    }

    pub fn mean(&self) -> Vec3 {
        self.origin + self.sum / self.count as f64
    }

    /// Population mean and covariance, `None` for an empty accumulator.
    pub fn moments(&self) -> Option<(Vec3, Mat3)> {
        if self.count == 0 {
            return None;
        }
        let n = self.count as f64;
        let local = self.sum / n;
        let cov = symmetrize(&(self.sum_outer / n - local * local.transpose()));
        Some((self.origin + local, cov))
    }

    /// Gaussian of the accumulated points if there are at least `min_points`
    /// and `cov + lambda I` admits a Cholesky factorization.
    pub fn finalize(&self, min_points: usize) -> Option<GaussianVoxel> {
        self.finalize_with(min_points, crate::metrics::DEFAULT_LAMBDA)
    }

    pub fn finalize_with(&self, min_points: usize, lambda: f64) -> Option<GaussianVoxel> {
        if self.count < min_points.max(1) as u64 {
            return None;
        }
        let (mean, cov) = self.moments()?;
        Cholesky::new(cov + Mat3::identity() * lambda)?;
        Some(GaussianVoxel {
            mean,
            cov,
            count: self.count,
        })
    }

    /// Statistics of the same points after applying `pose`. Only the origin
    /// is translated; the centered moments rotate.
    pub fn transformed(&self, pose: &Pose) -> Self {
        let r = &pose.rotation;
        Self {
            count: self.count,
            origin: pose.transform_point(&self.origin),
            sum: r * self.sum,
            sum_outer: symmetrize(&(r * self.sum_outer * r.transpose())),
        }
    }

    /// The same statistics expressed about `origin`.
    pub fn recentered(&self, origin: Vec3) -> Self {
        let d = self.origin - origin;
        let n = self.count as f64;
        Self {
            count: self.count,
            origin,
            sum: self.sum + d * n,
            sum_outer: symmetrize(
                &(self.sum_outer + self.sum * d.transpose() + d * self.sum.transpose() + d * d.transpose() * n),
            ),
        }
    }
}

impl Add for VoxelAccumulator {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        merge_accumulators(&self, &rhs)
    }
}

impl AddAssign for VoxelAccumulator {
    fn add_assign(&mut self, rhs: Self) {
        *self = merge_accumulators(self, &rhs);
    }
}

/// Statistics of the union of both point sets, about `a`'s origin.
pub fn merge_accumulators(a: &VoxelAccumulator, b: &VoxelAccumulator) -> VoxelAccumulator {
    if a.count == 0 {
        return *b;
    }
    if b.count == 0 {
        return *a;
    }
    let b = if b.origin == a.origin { *b } else { b.recentered(a.origin) };
    VoxelAccumulator {
        count: a.count + b.count,
        origin: a.origin,
        sum: a.sum + b.sum,
        sum_outer: a.sum_outer + b.sum_outer,
    }
}

/// Normal distribution summarizing the points of one voxel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianVoxel {
    pub mean: Vec3,
    pub cov: Mat3,
    pub count: u64,
}

impl GaussianVoxel {
    pub fn new(mean: Vec3, cov: Mat3, count: u64) -> Self {
        Self { mean, cov, count }
    }

    /// Recovers the sufficient statistics the Gaussian was finalized from.
    pub fn to_accumulator(&self) -> VoxelAccumulator {
        let n = self.count as f64;
        VoxelAccumulator {
            count: self.count,
            origin: self.mean,
            sum: Vec3::zeros(),
            sum_outer: self.cov * n,
        }
    }
}

/// Per-voxel Gaussians of one scan, ordered by voxel index.
#[derive(Debug, Clone)]
pub struct VoxelGrid {
    voxel_size: f64,
    cells: Vec<(VoxelIndex, GaussianVoxel)>,
}

impl VoxelGrid {
    /// Builds a grid from arbitrary cells; they are sorted by index.
    pub fn from_cells(voxel_size: f64, mut cells: Vec<(VoxelIndex, GaussianVoxel)>) -> Self {
        cells.sort_unstable_by_key(|(idx, _)| *idx);
        Self { voxel_size, cells }
    }

    /// Grid whose cells are keyed by the voxel containing each Gaussian's mean.
    pub fn from_gaussians(voxel_size: f64, voxels: impl IntoIterator<Item = GaussianVoxel>) -> Self {
        let cells = voxels
            .into_iter()
            .map(|g| (voxel_index_of(&g.mean, voxel_size), g))
            .collect();
        Self::from_cells(voxel_size, cells)
    }

    pub fn voxel_size(&self) -> f64 {
        self.voxel_size
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn cells(&self) -> &[(VoxelIndex, GaussianVoxel)] {
        &self.cells
    }

    pub fn voxels(&self) -> impl Iterator<Item = &GaussianVoxel> {
        self.cells.iter().map(|(_, g)| g)
    }

    pub fn get(&self, index: &VoxelIndex) -> Option<&GaussianVoxel> {
        self.cells
            .binary_search_by_key(index, |(idx, _)| *idx)
            .ok()
            .map(|i| &self.cells[i].1)
    }
}

/// Accumulates `points` into per-voxel sufficient statistics.
pub fn accumulate(
    points: &[Vec3],
    voxel_size: f64,
) -> Result<FxHashMap<u64, VoxelAccumulator>> {
    if !(voxel_size > 0.0 && voxel_size.is_finite()) {
        return Err(Error::invalid(format!("voxel size must be positive, got {voxel_size}")));
    }
    let mut cells: FxHashMap<u64, VoxelAccumulator> = FxHashMap::default();
    cells.reserve(points.len() / 16);
    for p in points {
        let idx = voxel_index_of(p, voxel_size);
        cells
            .entry(idx.pack()?)
            .or_insert_with(|| VoxelAccumulator::with_origin(idx.anchor(voxel_size)))
            .add_point(p);
    }
    Ok(cells)
}

/// Reduces a cloud to one Gaussian per voxel holding at least `min_points` points.
///
/// Returns [`Error::EmptyGrid`] when no voxel survives.
pub fn voxelize(
    cloud: &PointCloud,
    voxel_size: f64,
    min_points: usize,
    lambda: f64,
) -> Result<VoxelGrid> {
    if lambda.is_nan() || lambda < 0.0 {
        return Err(Error::invalid(format!("lambda must be non-negative, got {lambda}")));
    }
    let cells: Vec<_> = accumulate(&cloud.points, voxel_size)?
        .into_iter()
        .filter_map(|(key, acc)| {
            acc.finalize_with(min_points, lambda)
                .map(|g| (VoxelIndex::unpack(key), g))
        })
        .collect();
    if cells.is_empty() {
        return Err(Error::EmptyGrid);
    }
    Ok(VoxelGrid::from_cells(voxel_size, cells))
}

/// Fraction of the original points that survive as voxels.
pub fn reduction_ratio(grid: &VoxelGrid, original_count: usize) -> Result<f64> {
    if original_count == 0 {
        return Err(Error::invalid("original point count is zero"));
    }
    Ok(grid.len() as f64 / original_count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_floor_convention() {
        assert_eq!(voxel_index_of(&Vec3::new(3.2, -0.1, 7.9), 3.0), VoxelIndex::new(1, -1, 2));
        assert_eq!(voxel_index_of(&Vec3::zeros(), 0.7), VoxelIndex::new(0, 0, 0));
        assert_eq!(voxel_index_of(&Vec3::new(3.0, 0.0, 0.0), 3.0), VoxelIndex::new(1, 0, 0));
    }

    #[test]
    fn pack_round_trip_and_overflow() {
        for idx in [
            VoxelIndex::new(0, 0, 0),
            VoxelIndex::new(-1, 5, -7),
            VoxelIndex::new(KEY_MAX, KEY_MIN, -1),
        ] {
            assert_eq!(VoxelIndex::unpack(idx.pack().unwrap()), idx);
        }
        assert!(matches!(
            VoxelIndex::new(KEY_MAX + 1, 0, 0).pack(),
            Err(Error::KeyOverflow(_))
        ));
        let far = PointCloud::new(vec![Vec3::new(1e8, 0.0, 0.0)]);
        assert!(matches!(voxelize(&far, 3.0, 1, 1e-6), Err(Error::KeyOverflow(_))));
    }

    #[test]
    fn two_point_population_covariance() {
        let cloud = PointCloud::new(vec![Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0)]);
        let grid = voxelize(&cloud, 3.0, 2, 1e-6).unwrap();
        assert_eq!(grid.len(), 1);
        let g = grid.voxels().next().unwrap();
        assert_eq!(g.mean, Vec3::new(0.5, 0.0, 0.0));
        assert!((g.cov - Mat3::from_diagonal(&Vec3::new(0.25, 0.0, 0.0))).amax() < 1e-15);
        assert_eq!(g.count, 2);
    }

    #[test]
    fn sparse_cell_dropped() {
        let cloud = PointCloud::new(vec![Vec3::new(1.0, 1.0, 1.0)]);
        assert!(matches!(voxelize(&cloud, 3.0, 2, 1e-6), Err(Error::EmptyGrid)));
    }

    #[test]
    fn rejects_bad_arguments() {
        let cloud = PointCloud::new(vec![Vec3::zeros(); 8]);
        assert!(voxelize(&cloud, 0.0, 1, 1e-6).is_err());
        assert!(voxelize(&cloud, 1.0, 1, -1.0).is_err());
    }

    #[test]
    fn reduction_ratio_arithmetic() {
        let cells = (0..64)
            .map(|i| {
                (
                    VoxelIndex::new(i, 0, 0),
                    GaussianVoxel::new(Vec3::zeros(), Mat3::identity(), 6),
                )
            })
            .collect();
        let grid = VoxelGrid::from_cells(3.0, cells);
        assert_eq!(reduction_ratio(&grid, 12_800).unwrap(), 0.005);
        assert_eq!(reduction_ratio(&VoxelGrid::from_cells(3.0, vec![]), 10).unwrap(), 0.0);
        assert!(reduction_ratio(&grid, 0).is_err());
    }

    #[test]
    fn merge_with_empty_is_identity() {
        let a = VoxelAccumulator::from_points(&[Vec3::new(1.0, 2.0, 3.0), Vec3::new(0.5, 0.0, 1.0)]);
        assert_eq!(a + VoxelAccumulator::default(), a);
        let b = VoxelAccumulator::from_points(&[Vec3::new(-1.0, 0.2, 0.3)]);
        let (m1, c1) = (a + b).moments().unwrap();
        let (m2, c2) = (b + a).moments().unwrap();
        assert!((m1 - m2).norm() < 1e-15 && (c1 - c2).norm() < 1e-15);
    }

    #[test]
    fn grid_lookup() {
        let cloud = PointCloud::new(
            (0..20)
                .map(|i| Vec3::new(0.1 * i as f64, 0.05 * (i % 3) as f64, 4.0 + 0.01 * (i % 5) as f64))
                .collect(),
        );
        let grid = voxelize(&cloud, 1.0, 3, 1e-6).unwrap();
        for (idx, g) in grid.cells() {
            assert_eq!(grid.get(idx), Some(g));
            assert_eq!(voxel_index_of(&g.mean, 1.0), *idx);
        }
        assert!(grid.get(&VoxelIndex::new(100, 0, 0)).is_none());
    }
}
