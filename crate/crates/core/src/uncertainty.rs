//! Gaussian pose distributions and the heteroscedastic NLL objective.
//!
//! Estimator outputs carry one variance for the translation block and one
//! for the rotation block, stored as log-variances so that positivity is
//! structural. Inside the filter the covariance is a dense 6×6 matrix in
//! the right-perturbation tangent frame of the mean.

use nalgebra::{Matrix6, SymmetricEigen, Vector6};

use crate::error::{Error, Result};
use crate::lie::{ominus, ominus_with_flag, GroupPose, LogOutput, TangentPose};

/// Smallest variance any emitted covariance may carry.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// What a [`PoseGaussian`] stands for in the fusion pipeline.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Role {
    /// Absolute pose estimate `(z, Σ_z)`.
    Measurement,
    /// Relative motion `(u, Σ_u)`.
    Control,
    /// Filter estimate `(x̂, Σ̂)`.
    State,
}

/// `diag(σ_trans² · I₃, σ_rot² · I₃)`
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BlockDiagonalCovariance {
    sigma_trans_sq: f64,
    sigma_rot_sq: f64,
}

impl BlockDiagonalCovariance {
    /// Rejects variances below [`VARIANCE_FLOOR`] or non-finite values.
    pub fn new(sigma_trans_sq: f64, sigma_rot_sq: f64) -> Result<Self> {
        for (name, v) in [("translation", sigma_trans_sq), ("rotation", sigma_rot_sq)] {
            if !v.is_finite() || v < VARIANCE_FLOOR {
                return Err(Error::Covariance(format!(
                    "{name} variance {v} is below the floor {VARIANCE_FLOOR}"
                )));
            }
        }
        Ok(Self {
            sigma_trans_sq,
            sigma_rot_sq,
        })
    }

    /// Clamps both variances up to [`VARIANCE_FLOOR`].
    pub fn floored(sigma_trans_sq: f64, sigma_rot_sq: f64) -> Self {
        Self {
            sigma_trans_sq: sigma_trans_sq.max(VARIANCE_FLOOR),
            sigma_rot_sq: sigma_rot_sq.max(VARIANCE_FLOOR),
        }
    }

    pub fn sigma_trans_sq(&self) -> f64 {
        self.sigma_trans_sq
    }

    pub fn sigma_rot_sq(&self) -> f64 {
        self.sigma_rot_sq
    }

    pub fn to_matrix(&self) -> Matrix6<f64> {
        Matrix6::from_diagonal(&Vector6::new(
            self.sigma_trans_sq,
            self.sigma_trans_sq,
            self.sigma_trans_sq,
            self.sigma_rot_sq,
            self.sigma_rot_sq,
            self.sigma_rot_sq,
        ))
    }

    /// Block-averaged diagonal of a dense covariance. Off-diagonal terms are
    /// dropped.
    pub fn from_matrix_diagonal(m: &Matrix6<f64>) -> Self {
        let d = m.diagonal();
        Self::floored(
            (d[0] + d[1] + d[2]) / 3.0,
            (d[3] + d[4] + d[5]) / 3.0,
        )
    }
}

/// Log-variance parameters for the two covariance blocks.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogCovarianceParams {
    pub log_sigma_trans_sq: f64,
    pub log_sigma_rot_sq: f64,
}

impl LogCovarianceParams {
    pub fn new(log_sigma_trans_sq: f64, log_sigma_rot_sq: f64) -> Self {
        Self {
            log_sigma_trans_sq,
            log_sigma_rot_sq,
        }
    }

    pub fn from_covariance(cov: &BlockDiagonalCovariance) -> Self {
        Self::new(cov.sigma_trans_sq.ln(), cov.sigma_rot_sq.ln())
    }

    pub fn sigma_trans_sq(&self) -> f64 {
        self.log_sigma_trans_sq.exp()
    }

    pub fn sigma_rot_sq(&self) -> f64 {
        self.log_sigma_rot_sq.exp()
    }

    pub fn to_covariance(&self) -> BlockDiagonalCovariance {
        BlockDiagonalCovariance::floored(self.sigma_trans_sq(), self.sigma_rot_sq())
    }
}

fn symmetric_min_eigenvalue(m: &Matrix6<f64>) -> f64 {
    SymmetricEigen::new(*m).eigenvalues.min()
}

/// Rounding allowance on the eigenvalue floor. Rebuilding a matrix from a
/// clamped eigendecomposition perturbs its small eigenvalues by a few ulps
/// of the largest one.
pub fn floor_slack(m: &Matrix6<f64>) -> f64 {
    VARIANCE_FLOOR * 1e-6 + 64.0 * f64::EPSILON * m.amax()
}

/// Checks finiteness and symmetry, then the eigenvalue bound appropriate
/// for `role`: controls may be merely PSD (a noise-free motion model is
/// legal), measurements and states must clear [`VARIANCE_FLOOR`].
pub fn validate_covariance(m: &Matrix6<f64>, role: Role) -> Result<()> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Covariance("non-finite entry".into()));
    }
    let scale = m.amax().max(1.0);
    let asym = (m - m.transpose()).amax();
    if asym > 1e-12 * scale {
        return Err(Error::Covariance(format!("asymmetry {asym:e}")));
    }
    let min_eig = symmetric_min_eigenvalue(m);
    let bound = match role {
        Role::Control => -VARIANCE_FLOOR * scale,
        Role::Measurement | Role::State => VARIANCE_FLOOR - floor_slack(m),
    };
    if min_eig < bound {
        return Err(Error::Covariance(format!(
            "minimum eigenvalue {min_eig:e} below {bound:e} for {role:?}"
        )));
    }
    Ok(())
}

/// Raises every eigenvalue to at least [`VARIANCE_FLOOR`] and restores
/// exact symmetry. Leaves matrices that already satisfy the floor alone
/// apart from symmetrization.
pub fn symmetrize_and_floor(m: &Matrix6<f64>) -> Matrix6<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    if eig.eigenvalues.min() >= VARIANCE_FLOOR {
        return sym;
    }
    let clamped = eig.eigenvalues.map(|v| v.max(VARIANCE_FLOOR));
    let rebuilt = eig.eigenvectors * Matrix6::from_diagonal(&clamped) * eig.eigenvectors.transpose();
    (rebuilt + rebuilt.transpose()) * 0.5
}

/// Pose mean on the group with a tangent-space covariance.
#[derive(Clone, Debug, PartialEq)]
pub struct PoseGaussian {
    mean: GroupPose,
    covariance: Matrix6<f64>,
    role: Role,
}

impl PoseGaussian {
    pub fn new(mean: GroupPose, covariance: Matrix6<f64>, role: Role) -> Result<Self> {
        if !mean.is_finite() {
            return Err(Error::InvalidArgument("non-finite pose mean".into()));
        }
        validate_covariance(&covariance, role)?;
        Ok(Self {
            mean,
            covariance,
            role,
        })
    }

    pub fn from_block(mean: GroupPose, cov: BlockDiagonalCovariance, role: Role) -> Self {
        Self {
            mean,
            covariance: cov.to_matrix(),
            role,
        }
    }

    pub fn mean(&self) -> &GroupPose {
        &self.mean
    }

    pub fn covariance(&self) -> &Matrix6<f64> {
        &self.covariance
    }

    pub fn role(&self) -> Role {
        self.role
    }

    /// Same distribution under a different role, re-validated for it.
    pub fn with_role(&self, role: Role) -> Result<Self> {
        Self::new(self.mean, self.covariance, role)
    }
}

/// Value and gradients of [`nll_loss`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NllOutput {
    pub loss: f64,
    /// ∂loss/∂prediction (equals −∂loss/∂truth).
    pub grad_prediction: TangentPose,
    /// ∂loss/∂(log σ_trans², log σ_rot²).
    pub grad_params: LogCovarianceParams,
}

/// Heteroscedastic Gaussian negative log-likelihood (constant term dropped):
///
/// `Σᵢ ½ rᵢ² / σᵢ² + ½ log σᵢ²` with `r = prediction − truth`,
/// translation variance on components 0..3 and rotation variance on 3..6.
pub fn nll_loss(
    prediction: &TangentPose,
    truth: &TangentPose,
    params: &LogCovarianceParams,
) -> NllOutput {
    let r = *prediction - *truth;
    let (trans, g_rho, g_st) = block_nll(&r.rho, params.log_sigma_trans_sq);
    let (rot, g_phi, g_sr) = block_nll(&r.phi, params.log_sigma_rot_sq);
    NllOutput {
        loss: trans + rot,
        grad_prediction: TangentPose::new(g_rho, g_phi),
        grad_params: LogCovarianceParams::new(g_st, g_sr),
    }
}

fn block_nll(
    r: &nalgebra::Vector3<f64>,
    log_var: f64,
) -> (f64, nalgebra::Vector3<f64>, f64) {
    let inv_var = (-log_var).exp();
    let sq = r.norm_squared();
    let loss = 0.5 * sq * inv_var + 1.5 * log_var;
    let grad_r = r * inv_var;
    let grad_s = 1.5 - 0.5 * sq * inv_var;
    (loss, grad_r, grad_s)
}

/// Default step size for [`fit_covariance`].
pub const DEFAULT_FIT_LEARNING_RATE: f64 = 1.0;
/// Default iteration budget for [`fit_covariance`].
pub const DEFAULT_FIT_ITERATIONS: usize = 500;

/// Maximum-likelihood block variances for a set of tangent residuals,
/// found by gradient descent on the summed [`nll_loss`] in log-variance
/// space.
///
/// The objective is normalized per scalar component, so a learning rate of
/// up to 2 descends monotonically from the starting point (the log of the
/// largest squared component, which never lies below the optimum). Fitted
/// variances are clamped at [`VARIANCE_FLOOR`].
pub fn fit_covariance(
    residuals: &[TangentPose],
    learning_rate: f64,
    iterations: usize,
) -> Result<LogCovarianceParams> {
    if residuals.is_empty() {
        return Err(Error::EmptyResiduals);
    }
    if !(learning_rate > 0.0 && learning_rate.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "learning rate must be positive, got {learning_rate}"
        )));
    }
    if residuals.iter().any(|r| !r.is_finite()) {
        return Err(Error::InvalidArgument("non-finite residual".into()));
    }

    let floor = VARIANCE_FLOOR.ln();
    let max_sq = |block: fn(&TangentPose) -> f64| {
        residuals
            .iter()
            .map(block)
            .fold(VARIANCE_FLOOR, f64::max)
            .ln()
    };
    let mut params = LogCovarianceParams::new(
        max_sq(|r| r.rho.amax().powi(2)),
        max_sq(|r| r.phi.amax().powi(2)),
    );

    let zero = TangentPose::zero();
    let norm = 1.0 / (3.0 * residuals.len() as f64);
    let mut grad = [f64::INFINITY; 2];
    for _ in 0..iterations {
        let mut sum = [0.0; 2];
        for r in residuals {
            let out = nll_loss(r, &zero, &params);
            sum[0] += out.grad_params.log_sigma_trans_sq;
            sum[1] += out.grad_params.log_sigma_rot_sq;
        }
        grad = [sum[0] * norm, sum[1] * norm];

        let next = LogCovarianceParams::new(
            (params.log_sigma_trans_sq - learning_rate * grad[0]).max(floor),
            (params.log_sigma_rot_sq - learning_rate * grad[1]).max(floor),
        );
        let moved = (next.log_sigma_trans_sq - params.log_sigma_trans_sq)
            .abs()
            .max((next.log_sigma_rot_sq - params.log_sigma_rot_sq).abs());
        params = next;
        if moved < 1e-13 {
            break;
        }
    }

    // a positive gradient at the floor is a satisfied bound, not a failure
    let residual_grad = |g: f64, s: f64| if s <= floor && g > 0.0 { 0.0 } else { g.abs() };
    let worst = residual_grad(grad[0], params.log_sigma_trans_sq)
        .max(residual_grad(grad[1], params.log_sigma_rot_sq));
    if worst.is_nan() || worst >= 1e-6 {
        return Err(Error::NotConverged {
            iterations,
            gradient: worst,
        });
    }
    Ok(params)
}

/// Relative motion `u` with `z_prev ⊕ u = z_curr`.
pub fn relative_from_absolute(z_prev: &GroupPose, z_curr: &GroupPose) -> TangentPose {
    ominus(z_curr, z_prev)
}

/// [`relative_from_absolute`] with the near-π rotation flag.
pub fn relative_from_absolute_with_flag(z_prev: &GroupPose, z_curr: &GroupPose) -> LogOutput {
    ominus_with_flag(z_curr, z_prev)
}

/// Tangent-chart residual between a predicted and a true pose.
pub fn pose_residual(prediction: &GroupPose, truth: &GroupPose) -> TangentPose {
    ominus(prediction, truth)
}
