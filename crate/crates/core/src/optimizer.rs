//! Newton's method on SE(3) for the summed correspondence cost.
//!
//! Derivatives are taken with respect to a left-multiplicative twist
//! `delta = (omega, v)` at the current pose, `pose(delta) = exp(delta) * pose`.
//! Robust weights and the normalized fused information matrix are evaluated
//! at the current pose and held fixed while differentiating; they are
//! refreshed at every iteration.
//!
//! Quadratic term, with `y = R p + t`, `r = q - m(delta)` and
//! `m(delta) = Exp(omega) y + V(omega) v`:
//!
//! ```text
//! dm/d(omega) = -[y]x      dm/dv = I
//! grad = -2 J^T W r
//! hess = 2 J^T W J - 2 d2(u . m),   u = W r
//! ```
//!
//! where the second-order part of `u . m` is
//! `1/2 (u.omega)(omega.y) - 1/2 (u.y)|omega|^2 + 1/2 omega.(v x u)`.
//!
//! Shape term: each trace has the form `Tr(Q M Q^T N)` with `Q = Exp(omega)`
//! and symmetric `M`, `N`. Its gradient is `-2 vee(M N - N M)` and its
//! Hessian is `(P + P^T) - 2 tr(P) I - 2 T` with `P = M N` and
//! `T_ij = Tr(G_i M G_j N)`, `G_i = [e_i]x`.

use nalgebra::{Cholesky, Matrix3, Matrix6, Vector6};

use crate::error::{Error, Result};
use crate::metrics::{Correspondence, CostParams, FrozenPair, PreparedPair};
use crate::se3::{hat, Mat3, Pose, Twist, Vec3};

pub type Gradient = Vector6<f64>;
pub type Hessian = Matrix6<f64>;

/// Upper bound on the diagonal floor before giving up on factorization.
const MAX_HESSIAN_REGULARIZATION: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct NewtonConfig {
    pub max_iterations: usize,
    /// Convergence threshold on the norm of the Newton step.
    pub step_norm_tolerance: f64,
    /// Initial diagonal floor added to the Hessian; raised by powers of ten
    /// only when the factorization fails.
    pub hessian_regularization: f64,
    pub max_step_norm: f64,
}

impl Default for NewtonConfig {
    fn default() -> Self {
        Self {
            max_iterations: 30,
            step_norm_tolerance: 1e-6,
            hessian_regularization: 1e-9,
            max_step_norm: 1.0,
        }
    }
}

impl NewtonConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations == 0 {
            return Err(Error::invalid("max_iterations must be positive"));
        }
        for (name, v) in [
            ("step_norm_tolerance", self.step_norm_tolerance),
            ("hessian_regularization", self.hessian_regularization),
            ("max_step_norm", self.max_step_norm),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }
}

/// Sum of per-correspondence costs.
#[derive(Debug, Clone)]
pub struct Objective {
    pairs: Vec<PreparedPair>,
    params: CostParams,
}

impl Objective {
    pub fn new(correspondences: &[Correspondence], params: CostParams) -> Result<Self> {
        params.validate()?;
        if correspondences.is_empty() {
            return Err(Error::NoCorrespondences);
        }
        let pairs = correspondences
            .iter()
            .map(|c| PreparedPair::new(c, params.lambda))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { pairs, params })
    }

    pub fn params(&self) -> &CostParams {
        &self.params
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Full cost at `pose`, with weights evaluated at `pose`.
    pub fn value(&self, pose: &Pose) -> Result<f64> {
        let mut sum = 0.0;
        for pair in &self.pairs {
            sum += pair.evaluate(pose, &self.params)?.value;
        }
        Ok(sum)
    }

    /// Freezes weights and information matrices at `pose`.
    pub fn freeze(&self, pose: &Pose) -> Result<FrozenObjective<'_>> {
        let frozen = self
            .pairs
            .iter()
            .map(|p| p.freeze(pose, &self.params))
            .collect::<Result<Vec<_>>>()?;
        Ok(FrozenObjective {
            objective: self,
            frozen,
        })
    }
}

/// An [`Objective`] with weights and information matrices held fixed.
#[derive(Debug, Clone)]
pub struct FrozenObjective<'a> {
    objective: &'a Objective,
    frozen: Vec<FrozenPair>,
}

impl FrozenObjective<'_> {
    pub fn value(&self, pose: &Pose) -> f64 {
        self.objective
            .pairs
            .iter()
            .zip(&self.frozen)
            .map(|(pair, f)| f.value(pair, pose))
            .sum()
    }

    /// Gradient and Hessian of the frozen cost at `pose` in left-twist coordinates.
    pub fn gradient_hessian(&self, pose: &Pose) -> Result<(Gradient, Hessian)> {
        let mut grad = Gradient::zeros();
        let mut hess = Hessian::zeros();
        for (pair, f) in self.objective.pairs.iter().zip(&self.frozen) {
            accumulate_quadratic(pair, &f.info, pose, &mut grad, &mut hess);
            if f.shape_weight != 0.0 {
                accumulate_shape(pair, f.shape_weight, &pose.rotation, &mut grad, &mut hess);
            }
        }
        if !(grad.iter().chain(hess.iter()).all(|x| x.is_finite())) {
            return Err(Error::NonFiniteDerivative);
        }
        // exact symmetry
        let hess = (hess + hess.transpose()) * 0.5;
        Ok((grad, hess))
    }
}

fn accumulate_quadratic(
    pair: &PreparedPair,
    info: &Mat3,
    pose: &Pose,
    grad: &mut Gradient,
    hess: &mut Hessian,
) {
    let y = pose.transform_point(&pair.source_mean);
    let r = pair.target_mean - y;
    let u = info * r;
    let y_hat = hat(&y);

    // J = [-[y]x, I]
    // grad = -2 J^T u = [-2 [y]x u ; -2 u]   (since (-[y]x)^T = [y]x)
    let g_rot = y_hat * u * -2.0;
    let g_trans = u * -2.0;

    // 2 J^T W J
    let w_yhat = info * y_hat; // W [y]x
    let h_rr = y_hat.transpose() * w_yhat * 2.0; // 2 [y]x^T W [y]x
    let h_rt = -(y_hat.transpose() * info) * 2.0; // 2 (-[y]x)^T W
    let h_tt = info * 2.0;

    // -2 * second derivative of u . m
    let uy = u.dot(&y);
    let curv_rr = (u * y.transpose() + y * u.transpose()) * 0.5 - Mat3::identity() * uy;
    // d2/(d omega d v) of 1/2 omega.(v x u) = 1/2 omega^T [v]x u ... as a block
    // with rows omega and cols v: -1/2 [u]x
    let curv_rt = hat(&u) * -0.5;

    let h_rr = h_rr - curv_rr * 2.0;
    let h_rt = h_rt - curv_rt * 2.0;

    add_blocks(grad, hess, &g_rot, &g_trans, &h_rr, &h_rt, &h_tt);
}

/// Gradient and Hessian of `Tr(Q M Q^T N)` at `Q = I` with respect to the
/// rotation vector of `Q`.
fn trace_form_derivatives(m: &Mat3, n: &Mat3) -> (Vec3, Mat3) {
    let p = m * n;
    let k = p - p.transpose();
    let grad = Vec3::new(k[(2, 1)] - k[(1, 2)], k[(0, 2)] - k[(2, 0)], k[(1, 0)] - k[(0, 1)]) * -1.0;

    let gens = [
        hat(&Vec3::x()),
        hat(&Vec3::y()),
        hat(&Vec3::z()),
    ];
    let gm = [gens[0] * m, gens[1] * m, gens[2] * m];
    let gn = [gens[0] * n, gens[1] * n, gens[2] * n];
    let mut hess = p + p.transpose() - Mat3::identity() * (2.0 * p.trace());
    for i in 0..3 {
        for j in i..3 {
            let t = crate::metrics::trace_of_product(&gm[i], &gn[j]);
            hess[(i, j)] -= 2.0 * t;
            if i != j {
                hess[(j, i)] -= 2.0 * t;
            }
        }
    }
    (grad, hess)
}

fn accumulate_shape(pair: &PreparedPair, weight: f64, rot: &Mat3, grad: &mut Gradient, hess: &mut Hessian) {
    let a = rot * pair.source_reg_inv * rot.transpose();
    let b = rot * pair.source_reg * rot.transpose();
    let (g1, h1) = trace_form_derivatives(&a, &pair.target_reg);
    let (g2, h2) = trace_form_derivatives(&b, &pair.target_reg_inv);
    let g = (g1 + g2) * weight;
    let h = (h1 + h2) * weight;
    for i in 0..3 {
        grad[i] += g[i];
        for j in 0..3 {
            hess[(i, j)] += h[(i, j)];
        }
    }
}

#[inline]
fn add_blocks(
    grad: &mut Gradient,
    hess: &mut Hessian,
    g_rot: &Vec3,
    g_trans: &Vec3,
    h_rr: &Mat3,
    h_rt: &Matrix3<f64>,
    h_tt: &Mat3,
) {
    for i in 0..3 {
        grad[i] += g_rot[i];
        grad[i + 3] += g_trans[i];
        for j in 0..3 {
            hess[(i, j)] += h_rr[(i, j)];
            hess[(i, j + 3)] += h_rt[(i, j)];
            hess[(j + 3, i)] += h_rt[(i, j)];
            hess[(i + 3, j + 3)] += h_tt[(i, j)];
        }
    }
}

/// Gradient and Hessian of the objective at `pose` under the freeze convention.
pub fn gradient_hessian(obj: &Objective, pose: &Pose) -> Result<(Gradient, Hessian)> {
    obj.freeze(pose)?.gradient_hessian(pose)
}

#[derive(Debug, Clone)]
pub struct OptResult {
    pub pose: Pose,
    pub iterations: usize,
    pub final_cost: f64,
    /// Full (re-weighted) cost at the initial pose and after every iteration.
    pub cost_trace: Vec<f64>,
    pub converged: bool,
}

/// Solves `(H + eps I) delta = -g`, raising `eps` by powers of ten until the
/// factorization succeeds.
fn newton_step(grad: &Gradient, hess: &Hessian, floor: f64) -> Result<Gradient> {
    let mut eps = floor;
    loop {
        let damped = hess + Hessian::identity() * eps;
        if let Some(chol) = Cholesky::new(damped) {
            let step = chol.solve(&(-grad));
            if step.iter().all(|x| x.is_finite()) {
                return Ok(step);
            }
        }
        eps *= 10.0;
        if eps > MAX_HESSIAN_REGULARIZATION {
            return Err(Error::FactorizationFailed(eps));
        }
    }
}

/// Minimizes the objective from `initial` with Newton's method.
pub fn newton_solve(obj: &Objective, initial: &Pose, config: &NewtonConfig) -> Result<OptResult> {
    config.validate()?;
    let mut pose = *initial;
    let mut cost_trace = vec![obj.value(&pose)?];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < config.max_iterations {
        let frozen = obj.freeze(&pose)?;
        let (grad, hess) = frozen.gradient_hessian(&pose)?;
        let step = newton_step(&grad, &hess, config.hessian_regularization)?;
        let delta = Twist::from_vector(&step).clamped(config.max_step_norm);
        pose = pose.retract(&delta);
        iterations += 1;
        cost_trace.push(obj.value(&pose)?);
        if step.norm() < config.step_norm_tolerance {
            converged = true;
            break;
        }
    }
    Ok(OptResult {
        pose,
        iterations,
        final_cost: *cost_trace.last().unwrap(),
        cost_trace,
        converged,
    })
}

/// Maximum relative deviations between analytic and finite-difference derivatives.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct DerivativeReport {
    pub gradient_deviation: f64,
    pub hessian_deviation: f64,
}

/// Compares the analytic derivatives of the frozen cost at `pose` with
/// central differences of step `fd_step`.
///
/// The gradient is checked against differences of the frozen cost value.
/// The Hessian is checked against the symmetrized Jacobian of the analytic
/// gradient: re-trivializing the gradient at a perturbed pose adds an
/// antisymmetric term proportional to the gradient, which symmetrization
/// removes.
pub fn check_derivatives(obj: &Objective, pose: &Pose, fd_step: f64) -> Result<DerivativeReport> {
    if fd_step.is_nan() || fd_step <= 0.0 {
        return Err(Error::invalid("finite-difference step must be positive"));
    }
    let frozen = obj.freeze(pose)?;
    let (grad, hess) = frozen.gradient_hessian(pose)?;
    let perturbed = |i: usize, h: f64| {
        let mut v = Gradient::zeros();
        v[i] = h;
        Pose::exp(&Twist::from_vector(&v)).compose(pose)
    };

    let mut fd_grad = Gradient::zeros();
    let mut fd_jac = Hessian::zeros();
    for i in 0..6 {
        let (plus, minus) = (perturbed(i, fd_step), perturbed(i, -fd_step));
        fd_grad[i] = (frozen.value(&plus) - frozen.value(&minus)) / (2.0 * fd_step);
        let (gp, _) = frozen.gradient_hessian(&plus)?;
        let (gm, _) = frozen.gradient_hessian(&minus)?;
        fd_jac.set_column(i, &((gp - gm) / (2.0 * fd_step)));
    }
    let fd_hess = (fd_jac + fd_jac.transpose()) * 0.5;
    Ok(DerivativeReport {
        gradient_deviation: relative_deviation(grad.as_slice(), fd_grad.as_slice()),
        hessian_deviation: relative_deviation(hess.as_slice(), fd_hess.as_slice()),
    })
}

/// `max |a - b| / max(max |b|, 1e-12)`.
fn relative_deviation(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-12);
    a.iter()
        .zip(b)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
        / scale
}
