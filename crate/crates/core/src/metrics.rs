//! Per-correspondence registration costs between two voxel Gaussians.
//!
//! Besides the proposed distribution-to-distribution cost (a Frobenius
//! normalized Mahalanobis term plus a shape term built from the traces of the
//! symmetric KL divergence), the baselines standard ICP, NDT, GICP and
//! LiTAMIN are exposed behind the same [`cost`] entry point.
//!
//! All covariance inversions add `lambda * I` first and go through a
//! Cholesky factorization.

use std::fmt;
use std::str::FromStr;

use nalgebra::Cholesky;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::se3::{Mat3, Pose, Vec3};
use crate::voxel::GaussianVoxel;

pub const DEFAULT_LAMBDA: f64 = 1e-6;
pub const DEFAULT_SIGMA_ICP: f64 = 0.5;
pub const DEFAULT_SIGMA_COV: f64 = 3.0;

/// Dimension of the Gaussians.
const DIM: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostKind {
    /// `r^T r`
    #[serde(rename = "icp")]
    StandardIcp,
    /// `r^T C_q^{-1} r`
    Ndt,
    /// `r^T (C_q + R C_p R^T)^{-1} r`
    Gicp,
    /// `r^T (C_q + lambda I)^{-1} / ||.||_F r`, occupancy weight fixed to 1.
    Litamin,
    /// Weighted fused-covariance ICP term only.
    Litamin2Icp,
    /// Weighted ICP term plus weighted shape term.
    Litamin2IcpCov,
}

impl CostKind {
    pub const ALL: [CostKind; 6] = [
        CostKind::StandardIcp,
        CostKind::Ndt,
        CostKind::Gicp,
        CostKind::Litamin,
        CostKind::Litamin2Icp,
        CostKind::Litamin2IcpCov,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            CostKind::StandardIcp => "icp",
            CostKind::Ndt => "ndt",
            CostKind::Gicp => "gicp",
            CostKind::Litamin => "litamin",
            CostKind::Litamin2Icp => "litamin2-icp",
            CostKind::Litamin2IcpCov => "litamin2-icp-cov",
        }
    }

    pub fn has_shape_term(&self) -> bool {
        matches!(self, CostKind::Litamin2IcpCov)
    }

    fn is_weighted(&self) -> bool {
        matches!(self, CostKind::Litamin2Icp | CostKind::Litamin2IcpCov)
    }
}

impl fmt::Display for CostKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CostKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        CostKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown cost kind '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    /// Regularizer added to every covariance before inversion.
    pub lambda: f64,
    /// Acceptable ICP error; weight is 1/2 at `E_ICP = sigma_icp^2`.
    pub sigma_icp: f64,
    /// Acceptable shape error; weight is 1/2 at `E_Cov = sigma_cov^2`.
    pub sigma_cov: f64,
    pub kind: CostKind,
}

impl Default for CostParams {
    fn default() -> Self {
        Self {
            lambda: DEFAULT_LAMBDA,
            sigma_icp: DEFAULT_SIGMA_ICP,
            sigma_cov: DEFAULT_SIGMA_COV,
            kind: CostKind::Litamin2IcpCov,
        }
    }
}

impl CostParams {
    pub fn with_kind(kind: CostKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("lambda", self.lambda),
            ("sigma_icp", self.sigma_icp),
            ("sigma_cov", self.sigma_cov),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// A source (scan) voxel paired with a target (map) voxel.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    pub source: GaussianVoxel,
    pub target: GaussianVoxel,
}

impl Correspondence {
    pub fn new(source: GaussianVoxel, target: GaussianVoxel) -> Self {
        Self { source, target }
    }
}

/// Breakdown of one correspondence cost.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostEval {
    /// Total contribution to the objective.
    pub value: f64,
    /// Unweighted quadratic (ICP) term.
    pub e_icp: f64,
    /// Unsquared shape term `Tr(R Cp^-1 R^T Cq) + Tr(Cq^-1 R Cp R^T) - 6`.
    pub shape: f64,
    /// Squared shape term, the quantity the shape weight is computed from.
    pub e_cov: f64,
    pub w_icp: f64,
    pub w_cov: f64,
}

/// Inverse and log-determinant of `cov + lambda I`.
pub fn regularized_inverse(cov: &Mat3, lambda: f64) -> Result<(Mat3, f64)> {
    let chol = Cholesky::new(cov + Mat3::identity() * lambda).ok_or(Error::SingularCovariance)?;
    let l = chol.l_dirty();
    let log_det = 2.0 * (0..3).map(|i| l[(i, i)].ln()).sum::<f64>();
    let inv = chol.inverse();
    if !inv.iter().all(|x| x.is_finite()) {
        return Err(Error::SingularCovariance);
    }
    Ok((inv, log_det))
}

/// `Tr(a b)` without forming the product.
#[inline]
pub(crate) fn trace_of_product(a: &Mat3, b: &Mat3) -> f64 {
    a.component_mul(&b.transpose()).sum()
}

/// KL divergence `D(p || q)` between two Gaussians, scaled by two:
/// `d^T Cq^-1 d + Tr(Cq^-1 Cp) - 3 + log(|Cq| / |Cp|)` with `d = mu_q - mu_p`.
pub fn kl_divergence(
    mu_p: &Vec3,
    cov_p: &Mat3,
    mu_q: &Vec3,
    cov_q: &Mat3,
    lambda: f64,
) -> Result<f64> {
    let (_, log_det_p) = regularized_inverse(cov_p, lambda)?;
    let (q_inv, log_det_q) = regularized_inverse(cov_q, lambda)?;
    let d = mu_q - mu_p;
    // Tr(Cq^-1 Cp) - 3 as Tr(Cq^-1 (Cp - Cq)): exactly zero for p = q
    Ok(d.dot(&(q_inv * d)) + trace_of_product(&q_inv, &(cov_p - cov_q)) + (log_det_q - log_det_p))
}

/// Symmetric KL divergence
/// `d^T (Cq + Cp)^-1 d + Tr(Cq^-1 Cp) + Tr(Cp^-1 Cq) - 6`.
///
/// Symmetric in `(p, q)` bit for bit.
pub fn sym_kl(mu_p: &Vec3, cov_p: &Mat3, mu_q: &Vec3, cov_q: &Mat3, lambda: f64) -> Result<f64> {
    let (p_inv, _) = regularized_inverse(cov_p, lambda)?;
    let (q_inv, _) = regularized_inverse(cov_q, lambda)?;
    let eye = Mat3::identity() * lambda;
    let (p_reg, q_reg) = (cov_p + eye, cov_q + eye);
    let (sum_inv, _) = regularized_inverse(&(p_reg + q_reg), 0.0)?;
    let d = mu_q - mu_p;
    let mahalanobis = d.dot(&(sum_inv * d));
    let diff = cov_p - cov_q;
    Ok(mahalanobis + (trace_of_product(&q_inv, &diff) + trace_of_product(&p_inv, &(-diff))))
}

/// Frobenius-normalized inverse of the fused covariance,
/// `(Cq + R Cp R^T + lambda I)^-1 / ||(Cq + R Cp R^T + lambda I)^-1||_F`.
pub fn fused_covariance(cov_p: &Mat3, cov_q: &Mat3, rot: &Mat3, lambda: f64) -> Result<Mat3> {
    if lambda.is_nan() || lambda < 0.0 {
        return Err(Error::invalid(format!("lambda must be non-negative, got {lambda}")));
    }
    let fused = cov_q + rot * cov_p * rot.transpose();
    let (inv, _) = regularized_inverse(&fused, lambda)?;
    Ok(normalize_frobenius(&inv))
}

#[inline]
fn normalize_frobenius(m: &Mat3) -> Mat3 {
    let sym = (m + m.transpose()) * 0.5;
    sym / sym.norm()
}

/// ICP error `(q - (R p + t))^T C_qp (q - (R p + t))` on the voxel means.
pub fn e_icp(corr: &Correspondence, pose: &Pose, params: &CostParams) -> Result<f64> {
    let c_qp = fused_covariance(&corr.source.cov, &corr.target.cov, &pose.rotation, params.lambda)?;
    let r = corr.target.mean - pose.transform_point(&corr.source.mean);
    Ok(r.dot(&(c_qp * r)))
}

/// Shape error of a correspondence: the unsquared trace expression and its square.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeError {
    pub trace: f64,
    pub squared: f64,
}

/// `s = Tr(R Cp^-1 R^T Cq) + Tr(Cq^-1 R Cp R^T) - 6` and `E_Cov = s^2`,
/// with both covariances regularized by `lambda`.
pub fn e_cov(corr: &Correspondence, pose: &Pose, lambda: f64) -> Result<ShapeError> {
    let pair = PreparedPair::new(corr, lambda)?;
    let trace = pair.shape(&pose.rotation);
    Ok(ShapeError {
        trace,
        squared: trace * trace,
    })
}

/// Robust weights `w = 1 - E / (E + sigma^2)` for the ICP and shape errors.
pub fn weights(e_icp: f64, e_cov: f64, params: &CostParams) -> (f64, f64) {
    (
        robust_weight(e_icp, params.sigma_icp),
        robust_weight(e_cov, params.sigma_cov),
    )
}

/// `1 - e / (e + sigma^2)`, evaluated as `sigma^2 / (e + sigma^2)`.
#[inline]
pub fn robust_weight(e: f64, sigma: f64) -> f64 {
    let s2 = sigma * sigma;
    s2 / (e.max(0.0) + s2)
}

/// Cost of one correspondence at `pose` for the selected [`CostKind`].
pub fn cost(corr: &Correspondence, pose: &Pose, params: &CostParams) -> Result<CostEval> {
    PreparedPair::new(corr, params.lambda)?.evaluate(pose, params)
}

/// A correspondence with its pose-independent factorizations cached.
#[derive(Debug, Clone, Copy)]
pub struct PreparedPair {
    pub source_mean: Vec3,
    pub target_mean: Vec3,
    pub source_cov: Mat3,
    pub target_cov: Mat3,
    /// `Cp + lambda I` and its inverse.
    pub source_reg: Mat3,
    pub source_reg_inv: Mat3,
    /// `Cq + lambda I` and its inverse.
    pub target_reg: Mat3,
    pub target_reg_inv: Mat3,
    pub lambda: f64,
}

impl PreparedPair {
    pub fn new(corr: &Correspondence, lambda: f64) -> Result<Self> {
        let (source_reg_inv, _) = regularized_inverse(&corr.source.cov, lambda)?;
        let (target_reg_inv, _) = regularized_inverse(&corr.target.cov, lambda)?;
        let eye = Mat3::identity() * lambda;
        Ok(Self {
            source_mean: corr.source.mean,
            target_mean: corr.target.mean,
            source_cov: corr.source.cov,
            target_cov: corr.target.cov,
            source_reg: corr.source.cov + eye,
            source_reg_inv,
            target_reg: corr.target.cov + eye,
            target_reg_inv,
            lambda,
        })
    }

    /// `q - (R p + t)`.
    #[inline]
    pub fn residual(&self, pose: &Pose) -> Vec3 {
        self.target_mean - pose.transform_point(&self.source_mean)
    }

    /// Matrix of the unweighted quadratic term for `kind` at rotation `rot`.
    pub fn information(&self, kind: CostKind, rot: &Mat3) -> Result<Mat3> {
        Ok(match kind {
            CostKind::StandardIcp => Mat3::identity(),
            CostKind::Ndt => self.target_reg_inv,
            CostKind::Gicp => {
                let fused = self.target_cov + rot * self.source_cov * rot.transpose();
                regularized_inverse(&fused, self.lambda)?.0
            }
            CostKind::Litamin => normalize_frobenius(&self.target_reg_inv),
            CostKind::Litamin2Icp | CostKind::Litamin2IcpCov => {
                fused_covariance(&self.source_cov, &self.target_cov, rot, self.lambda)?
            }
        })
    }

    /// Unsquared shape term at rotation `rot`.
    pub fn shape(&self, rot: &Mat3) -> f64 {
        let a = rot * self.source_reg_inv * rot.transpose();
        let b = rot * self.source_reg * rot.transpose();
        trace_of_product(&a, &self.target_reg) + trace_of_product(&self.target_reg_inv, &b)
            - 2.0 * DIM
    }

    pub fn evaluate(&self, pose: &Pose, params: &CostParams) -> Result<CostEval> {
        self.evaluate_with_information(pose, params).map(|(ev, _)| ev)
    }

    fn evaluate_with_information(
        &self,
        pose: &Pose,
        params: &CostParams,
    ) -> Result<(CostEval, Mat3)> {
        let kind = params.kind;
        let info = self.information(kind, &pose.rotation)?;
        let r = self.residual(pose);
        let e_icp = r.dot(&(info * r));
        let (shape, e_cov) = if kind.has_shape_term() {
            let s = self.shape(&pose.rotation);
            (s, s * s)
        } else {
            (0.0, 0.0)
        };
        let (w_icp, w_cov) = if kind.is_weighted() {
            weights(e_icp, e_cov, params)
        } else {
            (1.0, 1.0)
        };
        let value = if kind.has_shape_term() {
            w_icp * e_icp + w_cov * shape
        } else {
            w_icp * e_icp
        };
        let ev = CostEval {
            value,
            e_icp,
            shape,
            e_cov,
            w_icp,
            w_cov,
        };
        Ok((ev, info))
    }

    /// Weights and information matrix evaluated at `pose`, to be held fixed
    /// while differentiating.
    pub fn freeze(&self, pose: &Pose, params: &CostParams) -> Result<FrozenPair> {
        let (ev, info) = self.evaluate_with_information(pose, params)?;
        Ok(FrozenPair {
            info: info * ev.w_icp,
            shape_weight: if params.kind.has_shape_term() {
                ev.w_cov
            } else {
                0.0
            },
        })
    }
}

/// Quantities frozen at the linearization pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrozenPair {
    /// Information matrix of the quadratic term, already multiplied by its weight.
    pub info: Mat3,
    /// Weight of the shape term; zero when the cost has none.
    pub shape_weight: f64,
}

impl FrozenPair {
    /// Frozen cost at `pose`.
    pub fn value(&self, pair: &PreparedPair, pose: &Pose) -> f64 {
        let r = pair.residual(pose);
        let mut v = r.dot(&(self.info * r));
        if self.shape_weight != 0.0 {
            v += self.shape_weight * pair.shape(&pose.rotation);
        }
        v
    }
}
