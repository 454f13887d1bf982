use nalgebra::{DMatrix, DVector, Vector3};

use super::{FrameSet, RobotModel};
use crate::error::Result;

/// Velocity scale (rad/s) of the tanh-smoothed Coulomb term.
pub const COULOMB_SMOOTHING: f64 = 1e-3;

impl RobotModel {
    /// Joint torques `M(q)q̈ + C(q,q̇)q̇ + G(q) + F_f(q̇)` by recursive Newton-Euler.
    pub fn inverse_dynamics(
        &self,
        q: &DVector<f64>,
        qd: &DVector<f64>,
        qdd: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        self.check_len("qd", qd)?;
        self.check_len("qdd", qdd)?;
        let frames = self.forward_kinematics(q)?;
        Ok(self.rnea(&frames, qd, qdd, &self.gravity()) + self.friction_torque(qd))
    }

    /// Same as [`RobotModel::inverse_dynamics`] with the forward kinematics already evaluated.
    pub fn inverse_dynamics_with_frames(
        &self,
        frames: &FrameSet,
        qd: &DVector<f64>,
        qdd: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        self.check_len("qd", qd)?;
        self.check_len("qdd", qdd)?;
        Ok(self.rnea(frames, qd, qdd, &self.gravity()) + self.friction_torque(qd))
    }

    pub fn gravity_torque(&self, q: &DVector<f64>) -> Result<DVector<f64>> {
        let frames = self.forward_kinematics(q)?;
        let zero = DVector::zeros(self.dof());
        Ok(self.rnea(&frames, &zero, &zero, &self.gravity()))
    }

    /// Joint-space inertia matrix, one RNEA pass per column with unit acceleration.
    pub fn mass_matrix(&self, q: &DVector<f64>) -> Result<DMatrix<f64>> {
        let n = self.dof();
        let frames = self.forward_kinematics(q)?;
        let zero = DVector::zeros(n);
        let mut m = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut unit = DVector::zeros(n);
            unit[j] = 1.0;
            let column = self.rnea(&frames, &zero, &unit, &Vector3::zeros());
            m.set_column(j, &column);
        }
        Ok(m)
    }

    /// Viscous plus tanh-smoothed Coulomb friction.
    pub fn friction_torque(&self, qd: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.dof(),
            self.friction()
                .iter()
                .zip(qd.iter())
                .map(|(f, &v)| f.viscous * v + f.coulomb * (v / COULOMB_SMOOTHING).tanh()),
        )
    }

    fn rnea(
        &self,
        frames: &FrameSet,
        qd: &DVector<f64>,
        qdd: &DVector<f64>,
        gravity: &Vector3<f64>,
    ) -> DVector<f64> {
        let n = self.dof();
        let mut omega = vec![Vector3::zeros(); n];
        let mut omega_dot = vec![Vector3::zeros(); n];
        let mut com_offset = vec![Vector3::zeros(); n];
        let mut com_accel = vec![Vector3::zeros(); n];

        // Base accelerates upward at -g so gravity enters as an inertial load.
        let mut w_prev = Vector3::zeros();
        let mut wd_prev = Vector3::zeros();
        let mut a_prev = -gravity;
        let mut o_prev = Vector3::zeros();
        for i in 0..n {
            let z = frames.axes[i];
            let o = frames.joint_origin(i);
            let r = o - o_prev;
            let a_origin = a_prev + wd_prev.cross(&r) + w_prev.cross(&w_prev.cross(&r));
            let w = w_prev + z * qd[i];
            let wd = wd_prev + z * qdd[i] + w_prev.cross(&(z * qd[i]));
            let rc = frames.link_poses[i].rotation * self.links()[i].com;

            omega[i] = w;
            omega_dot[i] = wd;
            com_offset[i] = rc;
            com_accel[i] = a_origin + wd.cross(&rc) + w.cross(&w.cross(&rc));

            w_prev = w;
            wd_prev = wd;
            a_prev = a_origin;
            o_prev = o;
        }

        let mut tau = DVector::zeros(n);
        let mut f_next = Vector3::zeros();
        let mut n_next = Vector3::zeros();
        let mut o_next = Vector3::zeros();
        for i in (0..n).rev() {
            let link = &self.links()[i];
            let rot = frames.link_poses[i].rotation.to_rotation_matrix();
            let inertia = rot * link.inertia * rot.transpose();
            let o = frames.joint_origin(i);

            let force = link.mass * com_accel[i];
            let moment = inertia * omega_dot[i] + omega[i].cross(&(inertia * omega[i]));
            let f = force + f_next;
            let lever = if i + 1 < n { o_next - o } else { Vector3::zeros() };
            let nm = moment + n_next + com_offset[i].cross(&force) + lever.cross(&f_next);

            tau[i] = frames.axes[i].dot(&nm);
            f_next = f;
            n_next = nm;
            o_next = o;
        }
        tau
    }
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::robot::test_models::*;
    use crate::robot::JointFriction;

    #[test]
    fn static_gravity_moment() {
        let m = one_link(0.5, 1.0, 0.25);
        let z = DVector::zeros(1);
        let tau = m.inverse_dynamics(&z, &z, &z).unwrap();
        assert!((tau[0] - 2.4525).abs() < 1e-12);
        assert_eq!(tau, m.gravity_torque(&z).unwrap());
    }

    #[test]
    fn equilibrium_without_gravity() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = random_chain(4, &mut rng).with_gravity(Vector3::zeros());
        let q = DVector::from_fn(4, |_, _| rng.random_range(-3.0..3.0));
        let z = DVector::zeros(4);
        let tau = m.inverse_dynamics(&q, &z, &z).unwrap();
        assert!(tau.iter().all(|t| *t == 0.0));
    }

    #[test]
    fn mass_matrix_is_spd() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let m = random_chain(5, &mut rng);
        let q = DVector::from_fn(5, |_, _| rng.random_range(-3.0..3.0));
        let mm = m.mass_matrix(&q).unwrap();
        assert!((&mm - mm.transpose()).abs().max() < 1e-12);
        assert!(mm.cholesky().is_some());
    }

    #[test]
    fn linear_in_acceleration() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let m = random_chain(3, &mut rng);
        let q = DVector::from_fn(3, |_, _| rng.random_range(-3.0..3.0));
        let qd = DVector::from_fn(3, |_, _| rng.random_range(-2.0..2.0));
        let qdd = DVector::from_fn(3, |_, _| rng.random_range(-2.0..2.0));
        let z = DVector::zeros(3);
        let full = m.inverse_dynamics(&q, &qd, &qdd).unwrap();
        let bias = m.inverse_dynamics(&q, &qd, &z).unwrap();
        let inertial = m.mass_matrix(&q).unwrap() * &qdd;
        assert!((full - bias - inertial).abs().max() < 1e-10);
    }

    #[test]
    fn passivity_of_velocity_terms() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let m = random_chain(4, &mut rng).with_gravity(Vector3::zeros());
        for _ in 0..5 {
            let q = DVector::from_fn(4, |_, _| rng.random_range(-3.0..3.0));
            let qd = DVector::from_fn(4, |_, _| rng.random_range(-2.0..2.0));
            let power = qd.dot(&m.inverse_dynamics(&q, &qd, &DVector::zeros(4)).unwrap());
            let h = 1e-6;
            let energy = |q: &DVector<f64>| 0.5 * qd.dot(&(m.mass_matrix(q).unwrap() * &qd));
            let d_energy = (energy(&(&q + &qd * h)) - energy(&(&q - &qd * h))) / (2.0 * h);
            assert!((power - d_energy).abs() < 1e-5, "{power} vs {d_energy}");
        }
    }

    #[test]
    fn friction_model() {
        let m = planar(&[0.3, 0.3])
            .with_friction(vec![
                JointFriction { viscous: 0.5, coulomb: 0.0 },
                JointFriction { viscous: 0.0, coulomb: 2.0 },
            ])
            .unwrap();
        let tau = m.friction_torque(&DVector::from_vec(vec![2.0, 1.0]));
        assert!((tau[0] - 1.0).abs() < 1e-15);
        assert!((tau[1] - 2.0).abs() < 1e-12);
        let tau = m.friction_torque(&DVector::from_vec(vec![0.0, 0.0]));
        assert_eq!(tau, DVector::zeros(2));
    }

    #[test]
    fn dimension_checked() {
        let m = planar(&[0.3, 0.3]);
        let a = DVector::zeros(2);
        let b = DVector::zeros(3);
        assert!(m.inverse_dynamics(&a, &b, &a).is_err());
        assert!(m.inverse_dynamics(&a, &a, &b).is_err());
    }
}
