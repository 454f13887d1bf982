use nalgebra::{DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::RobotModel;
use crate::error::{Error, Result};

/// Damped resolved-rate tracking of an end-effector point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ResolvedRateConfig {
    /// Damping of the pseudoinverse, m.
    pub damping: f64,
    /// Proportional position feedback, 1/s.
    pub gain: f64,
}

impl Default for ResolvedRateConfig {
    fn default() -> Self {
        Self {
            damping: 0.01,
            gain: 20.0,
        }
    }
}

impl ResolvedRateConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.damping > 0.0) || !(self.gain >= 0.0) {
            return Err(Error::Config(
                "tracking.damping must be > 0 and tracking.gain >= 0".into(),
            ));
        }
        Ok(())
    }
}

impl RobotModel {
    /// `q + dt·Jᵀ(JJᵀ + λ²I)⁻¹v` with the end-effector position Jacobian,
    /// clamped to joint limits where the chain defines them.
    pub fn resolved_rate_step(
        &self,
        q: &DVector<f64>,
        tip_velocity: &Vector3<f64>,
        damping: f64,
        dt: f64,
    ) -> Result<DVector<f64>> {
        if !(dt > 0.0) || !(damping > 0.0) {
            return Err(Error::Argument(format!(
                "resolved-rate step needs dt > 0 and damping > 0 (got {dt}, {damping})"
            )));
        }
        if !tip_velocity.iter().all(|v| v.is_finite()) {
            return Err(Error::Argument("tip velocity is not finite".into()));
        }
        let jac = self.end_effector_jacobian(q)?;
        let qd = damped_pseudoinverse_apply(&jac, tip_velocity, damping);
        let mut next = q + qd * dt;
        for (value, joint) in next.iter_mut().zip(self.joints()) {
            if let Some((lo, hi)) = joint.limits {
                *value = value.clamp(lo, hi);
            }
        }
        Ok(next)
    }

    /// One control tick that moves the tip toward `target` while feeding forward
    /// `target_velocity`.
    pub fn track_point(
        &self,
        q: &DVector<f64>,
        target: &Vector3<f64>,
        target_velocity: &Vector3<f64>,
        config: &ResolvedRateConfig,
        dt: f64,
    ) -> Result<DVector<f64>> {
        let tip = self.tip_position(q)?;
        let v = target_velocity + (target - tip) * config.gain;
        self.resolved_rate_step(q, &v, config.damping, dt)
    }
}

pub(crate) fn damped_pseudoinverse_apply(
    jac: &nalgebra::Matrix3xX<f64>,
    v: &Vector3<f64>,
    damping: f64,
) -> DVector<f64> {
    let gram: Matrix3<f64> = jac * jac.transpose() + Matrix3::identity() * damping * damping;
    let y = gram
        .cholesky()
        .expect("damped Gram matrix is positive definite")
        .solve(v);
    jac.transpose() * y
}
