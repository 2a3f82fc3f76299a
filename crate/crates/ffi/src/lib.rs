//! C ABI over the `voxreg` library.
//!
//! Objects are opaque handles created by `*_new` and released by `*_free`.
//! Every fallible function returns a [`VoxregStatus`]; the message of the
//! last failure on the calling thread is available from
//! [`voxreg_last_error_message`]. Poses cross the boundary as row-major 4x4
//! `double[16]`, covariances as row-major `double[9]`.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use nalgebra::Matrix4;
use voxreg::odometry::{process_scan, refine_pose, MotionModel, OdometryState};
use voxreg::voxel::voxelize;
use voxreg::{CostKind, CostParams, Error, Mat3, PipelineConfig, PointCloud, Pose, Vec3, VoxelGrid, VoxelMap};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VoxregStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    EmptyGrid = 3,
    NoCorrespondences = 4,
    SingularCovariance = 5,
    Numerical = 6,
    Io = 7,
    Parse = 8,
    Panic = 9,
    Other = 10,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VoxregCost {
    Icp = 0,
    Ndt = 1,
    Gicp = 2,
    Litamin = 3,
    Litamin2Icp = 4,
    Litamin2IcpCov = 5,
}

impl From<VoxregCost> for CostKind {
    fn from(c: VoxregCost) -> Self {
        match c {
            VoxregCost::Icp => CostKind::StandardIcp,
            VoxregCost::Ndt => CostKind::Ndt,
            VoxregCost::Gicp => CostKind::Gicp,
            VoxregCost::Litamin => CostKind::Litamin,
            VoxregCost::Litamin2Icp => CostKind::Litamin2Icp,
            VoxregCost::Litamin2IcpCov => CostKind::Litamin2IcpCov,
        }
    }
}

impl From<CostKind> for VoxregCost {
    fn from(c: CostKind) -> Self {
        match c {
            CostKind::StandardIcp => VoxregCost::Icp,
            CostKind::Ndt => VoxregCost::Ndt,
            CostKind::Gicp => VoxregCost::Gicp,
            CostKind::Litamin => VoxregCost::Litamin,
            CostKind::Litamin2Icp => VoxregCost::Litamin2Icp,
            CostKind::Litamin2IcpCov => VoxregCost::Litamin2IcpCov,
        }
    }
}

/// Pipeline parameters. Obtain defaults from [`voxreg_config_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct VoxregConfig {
    pub voxel_size: f64,
    pub min_points: u32,
    pub cost: VoxregCost,
    pub lambda: f64,
    pub sigma_icp: f64,
    pub sigma_cov: f64,
    /// Non-positive means twice the voxel size.
    pub max_correspondence_distance: f64,
    pub max_iterations: u32,
    pub max_rounds: u32,
    /// Non-zero selects the constant-velocity motion model.
    pub constant_velocity: u8,
}

impl From<&PipelineConfig> for VoxregConfig {
    fn from(p: &PipelineConfig) -> Self {
        Self {
            voxel_size: p.voxel_size,
            min_points: p.min_points as u32,
            cost: p.cost.kind.into(),
            lambda: p.cost.lambda,
            sigma_icp: p.cost.sigma_icp,
            sigma_cov: p.cost.sigma_cov,
            max_correspondence_distance: p.max_correspondence_distance,
            max_iterations: p.newton.max_iterations as u32,
            max_rounds: p.max_rounds as u32,
            constant_velocity: (p.motion_model == MotionModel::ConstantVelocity) as u8,
        }
    }
}

impl VoxregConfig {
    fn pipeline(&self) -> Result<PipelineConfig, Error> {
        let mut p = PipelineConfig::with_voxel_size(self.voxel_size);
        p.min_points = self.min_points as usize;
        p.cost = CostParams {
            kind: self.cost.into(),
            lambda: self.lambda,
            sigma_icp: self.sigma_icp,
            sigma_cov: self.sigma_cov,
        };
        if self.max_correspondence_distance > 0.0 {
            p.max_correspondence_distance = self.max_correspondence_distance;
        }
        p.newton.max_iterations = self.max_iterations as usize;
        p.max_rounds = self.max_rounds as usize;
        p.motion_model = if self.constant_velocity != 0 {
            MotionModel::ConstantVelocity
        } else {
            MotionModel::Identity
        };
        p.validate()?;
        Ok(p)
    }
}

/// Voxel grid of per-cell Gaussians.
pub struct VoxregGrid(VoxelGrid);

/// Incremental odometry with its own map.
pub struct VoxregOdometry {
    config: PipelineConfig,
    state: OdometryState,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &Error) -> VoxregStatus {
    match e {
        Error::InvalidArgument(_) | Error::AsymmetricCovariance(_) | Error::KeyOverflow(_) => {
            VoxregStatus::InvalidArgument
        }
        Error::EmptyGrid => VoxregStatus::EmptyGrid,
        Error::NoCorrespondences => VoxregStatus::NoCorrespondences,
        Error::SingularCovariance => VoxregStatus::SingularCovariance,
        Error::NonFiniteDerivative | Error::FactorizationFailed(_) => VoxregStatus::Numerical,
        Error::Io(_) => VoxregStatus::Io,
        Error::Parse { .. } | Error::MalformedSize { .. } | Error::Json(_) => VoxregStatus::Parse,
        _ => VoxregStatus::Other,
    }
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), Error>) -> VoxregStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            VoxregStatus::Ok
        }
        Ok(Err(e)) => {
            set_last_error(&e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_last_error("internal panic");
            VoxregStatus::Panic
        }
    }
}

/// Returns [`VoxregStatus::NullPointer`] if any argument is null.
macro_rules! nonnull {
    ($($p:expr),+) => {
        if $($p.is_null())||+ {
            set_last_error("null pointer argument");
            return VoxregStatus::NullPointer;
        }
    };
}

unsafe fn pose_from(m: *const f64) -> Pose {
    let s = slice::from_raw_parts(m, 16);
    Pose::from_matrix(&Matrix4::from_row_slice(s))
}

unsafe fn pose_into(pose: &Pose, out: *mut f64) {
    let m = pose.to_matrix();
    let out = slice::from_raw_parts_mut(out, 16);
    for r in 0..4 {
        for c in 0..4 {
            out[4 * r + c] = m[(r, c)];
        }
    }
}

/// Static, NUL-terminated library version.
#[no_mangle]
pub extern "C" fn voxreg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Static description of a status code.
#[no_mangle]
pub extern "C" fn voxreg_status_string(status: VoxregStatus) -> *const c_char {
    let s: &'static str = match status {
        VoxregStatus::Ok => "ok\0",
        VoxregStatus::NullPointer => "null pointer\0",
        VoxregStatus::InvalidArgument => "invalid argument\0",
        VoxregStatus::EmptyGrid => "empty grid\0",
        VoxregStatus::NoCorrespondences => "no correspondences\0",
        VoxregStatus::SingularCovariance => "singular covariance\0",
        VoxregStatus::Numerical => "numerical failure\0",
        VoxregStatus::Io => "i/o error\0",
        VoxregStatus::Parse => "parse error\0",
        VoxregStatus::Panic => "internal panic\0",
        VoxregStatus::Other => "error\0",
    };
    s.as_ptr().cast()
}

/// Copies the last error message of this thread into `buf` (truncated,
/// always NUL-terminated when `len > 0`). Returns the full message length.
#[no_mangle]
pub unsafe extern "C" fn voxreg_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let e = e.borrow();
        let bytes = e.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr().cast(), buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

#[no_mangle]
pub unsafe extern "C" fn voxreg_config_default(out: *mut VoxregConfig) -> VoxregStatus {
    nonnull!(out);
    *out = VoxregConfig::from(&PipelineConfig::default());
    VoxregStatus::Ok
}

/// Voxelizes `n_points` points read from `xyz` as `f32` triples spaced
/// `stride` floats apart (3 for packed xyz, 4 for Velodyne records).
#[no_mangle]
pub unsafe extern "C" fn voxreg_grid_new(
    xyz: *const f32,
    n_points: usize,
    stride: usize,
    voxel_size: f64,
    min_points: u32,
    out: *mut *mut VoxregGrid,
) -> VoxregStatus {
    nonnull!(out);
    if n_points > 0 {
        nonnull!(xyz);
    }
    guard(|| {
        let cloud = cloud_from(xyz, n_points, stride)?;
        let grid = voxelize(&cloud, voxel_size, min_points as usize, voxreg::metrics::DEFAULT_LAMBDA)?;
        *out = Box::into_raw(Box::new(VoxregGrid(grid)));
        Ok(())
    })
}

unsafe fn cloud_from(xyz: *const f32, n: usize, stride: usize) -> Result<PointCloud, Error> {
    if stride < 3 {
        return Err(Error::InvalidArgument(format!("stride {stride} is below 3")));
    }
    if n == 0 {
        return Ok(PointCloud::default());
    }
    let data = slice::from_raw_parts(xyz, (n - 1) * stride + 3);
    let points = (0..n)
        .map(|i| &data[i * stride..i * stride + 3])
        .filter(|p| p.iter().all(|v| v.is_finite()))
        .map(|p| Vec3::new(p[0] as f64, p[1] as f64, p[2] as f64))
        .collect();
    Ok(PointCloud::new(points))
}

#[no_mangle]
pub unsafe extern "C" fn voxreg_grid_free(grid: *mut VoxregGrid) {
    if !grid.is_null() {
        drop(Box::from_raw(grid));
    }
}

#[no_mangle]
pub unsafe extern "C" fn voxreg_grid_len(grid: *const VoxregGrid, out: *mut usize) -> VoxregStatus {
    nonnull!(grid, out);
    *out = (*grid).0.len();
    VoxregStatus::Ok
}

/// Mean, covariance and point count of the `index`-th voxel (cells are
/// ordered by lattice index).
#[no_mangle]
pub unsafe extern "C" fn voxreg_grid_get(
    grid: *const VoxregGrid,
    index: usize,
    mean: *mut f64,
    cov: *mut f64,
    count: *mut u64,
) -> VoxregStatus {
    nonnull!(grid, mean, cov, count);
    let cells = (*grid).0.cells();
    let Some((_, g)) = cells.get(index) else {
        set_last_error("voxel index out of range");
        return VoxregStatus::InvalidArgument;
    };
    slice::from_raw_parts_mut(mean, 3).copy_from_slice(g.mean.as_slice());
    let c = slice::from_raw_parts_mut(cov, 9);
    for r in 0..3 {
        for k in 0..3 {
            c[3 * r + k] = g.cov[(r, k)];
        }
    }
    *count = g.count;
    VoxregStatus::Ok
}

/// Aligns `source` to `target` starting from `initial`; writes the pose
/// taking source coordinates into the target frame.
#[no_mangle]
pub unsafe extern "C" fn voxreg_register(
    source: *const VoxregGrid,
    target: *const VoxregGrid,
    config: *const VoxregConfig,
    initial: *const f64,
    out_pose: *mut f64,
) -> VoxregStatus {
    nonnull!(source, target, config, initial, out_pose);
    guard(|| {
        let cfg = (*config).pipeline()?;
        let map = VoxelMap::from_grid(&(*target).0, cfg.min_points, cfg.cost.lambda);
        let reg = refine_pose(&(*source).0, &map, &pose_from(initial), &cfg);
        if let Some(reason) = reg.fallback {
            return Err(match reason {
                voxreg::odometry::Fallback::NoCorrespondences => Error::NoCorrespondences,
                voxreg::odometry::Fallback::EmptyScan => Error::EmptyGrid,
                voxreg::odometry::Fallback::Diverged => Error::NonFiniteDerivative,
            });
        }
        pose_into(&reg.pose, out_pose);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn voxreg_odometry_new(
    config: *const VoxregConfig,
    out: *mut *mut VoxregOdometry,
) -> VoxregStatus {
    nonnull!(config, out);
    guard(|| {
        let config = (*config).pipeline()?;
        let state = OdometryState::new(&config);
        *out = Box::into_raw(Box::new(VoxregOdometry { config, state }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn voxreg_odometry_free(odom: *mut VoxregOdometry) {
    if !odom.is_null() {
        drop(Box::from_raw(odom));
    }
}

/// Registers one scan (points as in [`voxreg_grid_new`]), fuses it into the
/// map and writes its world pose. A scan that cannot be registered keeps the
/// motion-model prediction and is not fused.
#[no_mangle]
pub unsafe extern "C" fn voxreg_odometry_process(
    odom: *mut VoxregOdometry,
    xyz: *const f32,
    n_points: usize,
    stride: usize,
    out_pose: *mut f64,
) -> VoxregStatus {
    nonnull!(odom, out_pose);
    if n_points > 0 {
        nonnull!(xyz);
    }
    guard(|| {
        let cloud = cloud_from(xyz, n_points, stride)?;
        let odom = &mut *odom;
        process_scan(&cloud, &mut odom.state, &odom.config);
        pose_into(&odom.state.current_pose, out_pose);
        Ok(())
    })
}

/// Number of finalized map voxels.
#[no_mangle]
pub unsafe extern "C" fn voxreg_odometry_map_len(odom: *const VoxregOdometry, out: *mut usize) -> VoxregStatus {
    nonnull!(odom, out);
    *out = (*odom).state.map.len();
    VoxregStatus::Ok
}

/// Frames processed so far.
#[no_mangle]
pub unsafe extern "C" fn voxreg_odometry_frames(odom: *const VoxregOdometry, out: *mut usize) -> VoxregStatus {
    nonnull!(odom, out);
    *out = (*odom).state.frame_index;
    VoxregStatus::Ok
}

/// Symmetric KL divergence between two Gaussians.
#[no_mangle]
pub unsafe extern "C" fn voxreg_sym_kl(
    mu_p: *const f64,
    cov_p: *const f64,
    mu_q: *const f64,
    cov_q: *const f64,
    lambda: f64,
    out: *mut f64,
) -> VoxregStatus {
    nonnull!(mu_p, cov_p, mu_q, cov_q, out);
    guard(|| {
        let v = |p: *const f64| Vec3::from_row_slice(slice::from_raw_parts(p, 3));
        let m = |p: *const f64| Mat3::from_row_slice(slice::from_raw_parts(p, 9));
        *out = voxreg::metrics::sym_kl(&v(mu_p), &m(cov_p), &v(mu_q), &m(cov_q), lambda)?;
        Ok(())
    })
}
