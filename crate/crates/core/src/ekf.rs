//! Extended Kalman filter on SE(3).
//!
//! Relative-motion estimates drive the prediction and absolute-pose
//! estimates drive the correction. The state mean lives on the group and
//! its covariance in the right-perturbation tangent frame, so the
//! measurement Jacobian is the identity and the transition Jacobian is
//! `Ad(exp(u))⁻¹`.

use nalgebra::{Cholesky, Matrix6, SymmetricEigen, U6};

use crate::error::{Error, Result};
use crate::lie::{adjoint, compose, inverse, ominus_with_flag, oplus, GroupPose, TangentPose};
use crate::uncertainty::{symmetrize_and_floor, validate_covariance, PoseGaussian, Role};

/// Diagonal load added to the innovation covariance when its Cholesky
/// factorization fails.
pub const INNOVATION_REGULARIZER: f64 = 1e-12;

/// Transition `f(x, u) = x · u`.
pub fn transition(state: &GroupPose, control: &GroupPose) -> GroupPose {
    compose(state, control)
}

/// `∂f/∂x` of [`transition`] under right perturbation: `Ad(u⁻¹)`.
pub fn transition_jacobian(control: &GroupPose) -> Matrix6<f64> {
    adjoint(&inverse(control))
}

/// Everything computed during one filter step.
#[derive(Clone, Debug, PartialEq)]
pub struct KalmanStepReport {
    /// State after prediction (or the incoming state for a correction-only
    /// update).
    pub prior: PoseGaussian,
    /// `F_t`; `None` when no prediction ran.
    pub transition_jacobian: Option<Matrix6<f64>>,
    /// `H_t`; `None` when no measurement was applied.
    pub measurement_jacobian: Option<Matrix6<f64>>,
    /// `K_t`; `None` when no measurement was applied.
    pub gain: Option<Matrix6<f64>>,
    /// `r_t = z_t ⊖ x̂_t⁻`; `None` when no measurement was applied.
    pub residual: Option<TangentPose>,
    /// Residual rotation was within the near-π band of the log map.
    pub residual_near_pi: bool,
    pub posterior: PoseGaussian,
}

impl KalmanStepReport {
    pub fn corrected(&self) -> bool {
        self.gain.is_some()
    }
}

/// Filter state `(x̂_t, Σ̂_t)`. Starts uninitialized; only
/// [`EkfState::initialize`] is accepted until then.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EkfState {
    estimate: Option<PoseGaussian>,
    step_index: usize,
}

impl EkfState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_initialized(&self) -> bool {
        self.estimate.is_some()
    }

    pub fn step_index(&self) -> usize {
        self.step_index
    }

    pub fn estimate(&self) -> Option<&PoseGaussian> {
        self.estimate.as_ref()
    }

    fn current(&self) -> Result<&PoseGaussian> {
        self.estimate.as_ref().ok_or(Error::NotInitialized)
    }

    /// Seeds the filter with `x̂₀ = z₀`, `Σ̂₀ = Σ_z₀`.
    pub fn initialize(&mut self, first_measurement: &PoseGaussian) -> Result<()> {
        if self.is_initialized() {
            return Err(Error::AlreadyInitialized);
        }
        expect_role(first_measurement, Role::Measurement)?;
        self.estimate = Some(first_measurement.with_role(Role::State)?);
        self.step_index = 0;
        Ok(())
    }

    /// Propagates the state through a relative-motion control:
    /// `x̂⁻ = x̂ ⊕ u`, `Σ̂⁻ = F Σ̂ Fᵀ + Σ_u`.
    pub fn predict(&mut self, control: &PoseGaussian) -> Result<KalmanStepReport> {
        let current = self.current()?;
        expect_role(control, Role::Control)?;
        validate_covariance(control.covariance(), Role::Control)?;

        let f = transition_jacobian(control.mean());
        let mean = transition(current.mean(), control.mean());
        let cov = symmetrize_and_floor(&(f * current.covariance() * f.transpose() + control.covariance()));
        let prior = PoseGaussian::new(mean, cov, Role::State)?;

        self.estimate = Some(prior.clone());
        self.step_index += 1;
        Ok(KalmanStepReport {
            prior: prior.clone(),
            transition_jacobian: Some(f),
            measurement_jacobian: None,
            gain: None,
            residual: None,
            residual_near_pi: false,
            posterior: prior,
        })
    }

    /// Fuses an absolute-pose measurement with identity measurement model.
    /// The covariance update is the Joseph form
    /// `(I − K)Σ̂⁻(I − K)ᵀ + K Σ_z Kᵀ`.
    pub fn correct(&mut self, measurement: &PoseGaussian) -> Result<KalmanStepReport> {
        let prior = self.current()?.clone();
        expect_role(measurement, Role::Measurement)?;
        validate_covariance(measurement.covariance(), Role::Measurement)?;

        let h = Matrix6::<f64>::identity();
        let residual = ominus_with_flag(measurement.mean(), prior.mean());
        let p = prior.covariance();
        let innovation = h * p * h.transpose() + measurement.covariance();
        let chol = factor_innovation(&innovation)?;
        // K = P Hᵀ S⁻¹ = (S⁻¹ H P)ᵀ since P and S are symmetric
        let gain = chol.solve(&(h * p)).transpose();

        let correction = TangentPose::from_vector(&(gain * residual.tangent.to_vector()));
        let mean = oplus(prior.mean(), &correction);
        let i_kh = Matrix6::identity() - gain * h;
        let joseph = i_kh * p * i_kh.transpose() + gain * measurement.covariance() * gain.transpose();
        let posterior = PoseGaussian::new(mean, symmetrize_and_floor(&joseph), Role::State)?;

        self.estimate = Some(posterior.clone());
        Ok(KalmanStepReport {
            prior,
            transition_jacobian: None,
            measurement_jacobian: Some(h),
            gain: Some(gain),
            residual: Some(residual.tangent),
            residual_near_pi: residual.near_pi,
            posterior,
        })
    }

    /// Predict, then correct when a measurement is supplied. Without one
    /// the step is a pure dead-reckoning update.
    pub fn step(
        &mut self,
        control: &PoseGaussian,
        measurement: Option<&PoseGaussian>,
    ) -> Result<KalmanStepReport> {
        let predicted = self.predict(control)?;
        match measurement {
            None => Ok(predicted),
            Some(z) => {
                let corrected = self.correct(z)?;
                Ok(KalmanStepReport {
                    prior: predicted.prior,
                    transition_jacobian: predicted.transition_jacobian,
                    ..corrected
                })
            }
        }
    }
}

fn expect_role(g: &PoseGaussian, expected: Role) -> Result<()> {
    if g.role() != expected {
        return Err(Error::RoleMismatch {
            expected,
            actual: g.role(),
        });
    }
    Ok(())
}

/// Cholesky factor of the innovation covariance, retrying once with
/// [`INNOVATION_REGULARIZER`] on the diagonal.
pub(crate) fn factor_innovation(s: &Matrix6<f64>) -> Result<Cholesky<f64, U6>> {
    if let Some(c) = Cholesky::new(*s) {
        return Ok(c);
    }
    let loaded = s + Matrix6::identity() * INNOVATION_REGULARIZER;
    Cholesky::new(loaded).ok_or_else(|| {
        let eig = SymmetricEigen::new((s + s.transpose()) * 0.5).eigenvalues;
        let (lo, hi) = (eig.min(), eig.amax());
        Error::SingularInnovation {
            condition: if lo > 0.0 { hi / lo } else { f64::INFINITY },
        }
    })
}

/// Posterior of a scalar Gaussian prior times a scalar Gaussian likelihood,
/// by direct numerical integration on a uniform grid centered between the
/// two means. Independent of the filter algebra.
pub fn bayes_grid_oracle(
    prior_mean: f64,
    prior_var: f64,
    meas_mean: f64,
    meas_var: f64,
    grid_halfwidth: f64,
    grid_points: usize,
) -> Result<(f64, f64)> {
    if !(prior_var > 0.0 && meas_var > 0.0) {
        return Err(Error::InvalidArgument("variances must be positive".into()));
    }
    if grid_points < 1001 {
        return Err(Error::GridTooCoarse(format!(
            "{grid_points} points, at least 1001 required"
        )));
    }
    if grid_halfwidth.is_nan() || grid_halfwidth <= 0.0 {
        return Err(Error::InvalidArgument("grid half-width must be positive".into()));
    }
    let spacing = 2.0 * grid_halfwidth / (grid_points - 1) as f64;
    let narrowest = prior_var.min(meas_var).sqrt();
    if narrowest < 3.0 * spacing {
        return Err(Error::GridTooCoarse(format!(
            "standard deviation {narrowest} is under three grid spacings ({spacing})"
        )));
    }

    let center = 0.5 * (prior_mean + meas_mean);
    let start = center - grid_halfwidth;
    let log_density = |x: f64| {
        -0.5 * (x - prior_mean).powi(2) / prior_var - 0.5 * (x - meas_mean).powi(2) / meas_var
    };
    let xs: Vec<f64> = (0..grid_points).map(|i| start + i as f64 * spacing).collect();
    let peak = xs.iter().map(|&x| log_density(x)).fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = xs.iter().map(|&x| (log_density(x) - peak).exp()).collect();

    let total: f64 = weights.iter().sum();
    let mean = xs.iter().zip(&weights).map(|(x, w)| x * w).sum::<f64>() / total;
    let var = xs
        .iter()
        .zip(&weights)
        .map(|(x, w)| (x - mean).powi(2) * w)
        .sum::<f64>()
        / total;

    let sd = var.sqrt();
    if mean - 8.0 * sd < start || mean + 8.0 * sd > start + 2.0 * grid_halfwidth {
        return Err(Error::GridTooCoarse(format!(
            "posterior mass ({mean} ± {sd}) extends past the grid"
        )));
    }
    Ok((mean, var))
}

/// One-axis correction through the full 6-DOF filter: translation-only
/// prior and measurement differing only along x, unit variance elsewhere.
/// Returns the posterior x-mean and x-variance.
pub fn translation_axis_correct(
    prior_mean: f64,
    prior_var: f64,
    meas_mean: f64,
    meas_var: f64,
) -> Result<(f64, f64)> {
    let axis_cov = |v: f64| {
        let mut m = Matrix6::identity();
        m[(0, 0)] = v;
        m
    };
    let at = |x: f64| GroupPose::from_translation(nalgebra::Vector3::new(x, 0.0, 0.0));
    let mut state = EkfState::new();
    state.initialize(&PoseGaussian::new(at(prior_mean), axis_cov(prior_var), Role::Measurement)?)?;
    let report = state.correct(&PoseGaussian::new(at(meas_mean), axis_cov(meas_var), Role::Measurement)?)?;
    Ok((
        report.posterior.mean().translation().x,
        report.posterior.covariance()[(0, 0)],
    ))
}
