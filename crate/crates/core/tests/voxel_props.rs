mod common;

use nalgebra::Cholesky;
use proptest::prelude::*;
use rand::Rng;

use common::{max_abs, rng, two_pass_moments};
use voxreg::voxel::{accumulate, merge_accumulators, voxel_index_of, VoxelAccumulator, VoxelIndex};
use voxreg::{voxelize, Error, Mat3, PointCloud, Vec3};

const LAMBDA: f64 = 1e-6;

fn cloud(points: Vec<Vec3>) -> PointCloud {
    PointCloud {
        points,
        intensity: None,
    }
}

fn points(n: std::ops::Range<usize>, extent: f64) -> impl Strategy<Value = Vec<Vec3>> {
    prop::collection::vec(prop::array::uniform3(-extent..extent).prop_map(Vec3::from), n)
}

#[test]
fn floor_indices() {
    assert_eq!(voxel_index_of(&Vec3::new(3.2, -0.1, 7.9), 3.0), VoxelIndex::new(1, -1, 2));
    assert_eq!(voxel_index_of(&Vec3::zeros(), 0.7), VoxelIndex::new(0, 0, 0));
    assert_eq!(voxel_index_of(&Vec3::new(3.0, 0.0, 0.0), 3.0), VoxelIndex::new(1, 0, 0));
}

#[test]
fn two_point_population_covariance() {
    let grid = voxelize(&cloud(vec![Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0)]), 3.0, 2, LAMBDA).unwrap();
    let g = grid.voxels().next().unwrap();
    assert_eq!(g.mean, Vec3::new(0.5, 0.0, 0.0));
    assert!(max_abs(&(g.cov - Mat3::from_diagonal(&Vec3::new(0.25, 0.0, 0.0)))) < 1e-15);
}

#[test]
fn under_populated_cell_is_dropped() {
    let err = voxelize(&cloud(vec![Vec3::new(1.0, 1.0, 1.0)]), 3.0, 2, LAMBDA).unwrap_err();
    assert!(matches!(err, Error::EmptyGrid));
}

#[test]
fn uniform_cell_covariance() {
    let mut r = rng(7);
    let pts: Vec<Vec3> = (0..10_000)
        .map(|_| Vec3::new(r.random_range(0.0..3.0), r.random_range(0.0..3.0), r.random_range(0.0..3.0)))
        .collect();
    let grid = voxelize(&cloud(pts.clone()), 3.0, 6, LAMBDA).unwrap();
    assert_eq!(grid.len(), 1);
    let g = grid.voxels().next().unwrap();
    let (mean, cov) = two_pass_moments(&pts);
    assert!((g.mean - mean).norm() < 1e-12);
    assert!(max_abs(&(g.cov - cov)) < 1e-12);
    for i in 0..3 {
        assert!((g.cov[(i, i)] / 0.75 - 1.0).abs() < 0.05, "{}", g.cov[(i, i)]);
    }
}

#[test]
fn far_from_origin_keeps_precision() {
    let mut r = rng(11);
    let offset = Vec3::new(399_999.0, -249_999.0, 3_000.0);
    let local: Vec<Vec3> = (0..500).map(|_| Vec3::from_fn(|_, _| r.random_range(0.01..2.99))).collect();
    let far: Vec<Vec3> = local.iter().map(|p| p + offset).collect();
    let near = voxelize(&cloud(local), 3.0, 6, LAMBDA).unwrap();
    let away = voxelize(&cloud(far), 3.0, 6, LAMBDA).unwrap();
    assert_eq!((near.len(), away.len()), (1, 1));
    let (a, b) = (near.voxels().next().unwrap(), away.voxels().next().unwrap());
    assert!(max_abs(&(a.cov - b.cov)) < 1e-9);
}

#[test]
fn split_and_merge_matches_full_set() {
    let mut r = rng(3);
    let pts: Vec<Vec3> = (0..401).map(|_| Vec3::from_fn(|_, _| r.random_range(-5.0..5.0))).collect();
    let (head, tail) = pts.split_at(173);
    let merged = merge_accumulators(&VoxelAccumulator::from_points(head), &VoxelAccumulator::from_points(tail));
    let (mean, cov) = merged.moments().unwrap();
    let (m_ref, c_ref) = two_pass_moments(&pts);
    assert_eq!(merged.count, 401);
    assert!((mean - m_ref).norm() < 1e-12);
    assert!(max_abs(&(cov - c_ref)) < 1e-12);
}

#[test]
fn merge_identity_and_commutativity() {
    let a = VoxelAccumulator::from_points(&[Vec3::new(1.0, 2.0, 3.0), Vec3::new(0.0, 1.0, 0.5)]);
    assert_eq!(a + VoxelAccumulator::default(), a);
    assert_eq!(VoxelAccumulator::default() + a, a);
    let b = VoxelAccumulator::from_points(&[Vec3::new(-4.0, 0.0, 1.0)]);
    let (m1, c1) = (a + b).moments().unwrap();
    let (m2, c2) = (b + a).moments().unwrap();
    assert!((m1 - m2).norm() < 1e-14 && max_abs(&(c1 - c2)) < 1e-14);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn merge_of_clouds_equals_concatenation(a in points(0..200, 8.0), b in points(0..200, 8.0)) {
        let mut left = accumulate(&a, 3.0).unwrap();
        for (key, acc) in accumulate(&b, 3.0).unwrap() {
            let slot = left.entry(key).or_default();
            *slot += acc;
        }
        let all: Vec<Vec3> = a.iter().chain(&b).copied().collect();
        let joint = accumulate(&all, 3.0).unwrap();
        prop_assert_eq!(left.len(), joint.len());
        for (key, acc) in &joint {
            let other = &left[key];
            prop_assert_eq!(acc.count, other.count);
            let (m1, c1) = acc.moments().unwrap();
            let (m2, c2) = other.moments().unwrap();
            prop_assert!((m1 - m2).norm() < 1e-12);
            prop_assert!(max_abs(&(c1 - c2)) < 1e-12);
        }
    }

    #[test]
    fn covariances_symmetric_and_factorizable(pts in points(1..400, 6.0), size in 0.5f64..4.0) {
        if let Ok(grid) = voxelize(&cloud(pts), size, 6, LAMBDA) {
            for g in grid.voxels() {
                prop_assert!(g.count >= 6);
                prop_assert_eq!(g.cov, g.cov.transpose());
                prop_assert!(Cholesky::new(g.cov + Mat3::identity() * LAMBDA).is_some());
            }
        }
    }

    #[test]
    fn lattice_translation_shifts_indices(
        raw in prop::collection::vec(prop::array::uniform3(-256i32..256), 50..400),
        k in prop::array::uniform3(-20i64..20),
    ) {
        // Coordinates on a 1/64 m lattice keep the shifted points exact.
        let pts: Vec<Vec3> = raw.iter().map(|c| Vec3::new(c[0] as f64, c[1] as f64, c[2] as f64) / 64.0).collect();
        let size = 3.0;
        let shift = Vec3::new(k[0] as f64, k[1] as f64, k[2] as f64) * size;
        let moved: Vec<Vec3> = pts.iter().map(|p| p + shift).collect();
        match (voxelize(&cloud(pts), size, 6, LAMBDA), voxelize(&cloud(moved), size, 6, LAMBDA)) {
            (Ok(base), Ok(other)) => {
                prop_assert_eq!(base.len(), other.len());
                for (idx, g) in base.cells() {
                    let h = other.get(&idx.offset(k[0], k[1], k[2]));
                    prop_assert!(h.is_some());
                    let h = h.unwrap();
                    prop_assert_eq!(h.count, g.count);
                    prop_assert!((h.mean - g.mean - shift).norm() < 1e-12);
                    prop_assert!(max_abs(&(h.cov - g.cov)) < 1e-12);
                }
            }
            (Err(Error::EmptyGrid), Err(Error::EmptyGrid)) => {}
            (a, b) => prop_assert!(false, "{:?} vs {:?}", a.map(|g| g.len()), b.map(|g| g.len())),
        }
    }
}
