use nalgebra::{DVector, Isometry3, Matrix3xX, Rotation3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::RobotModel;
use crate::error::{Error, Result};

/// World-frame poses of every joint frame and every link centerline for one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSet {
    /// Pose of link frame `i` (joint frame `i` after its rotation) in the base frame.
    pub link_poses: Vec<Isometry3<f64>>,
    /// World-frame unit axis of each joint.
    pub axes: Vec<Vector3<f64>>,
    pub link_base: Vec<Vector3<f64>>,
    pub link_tip: Vec<Vector3<f64>>,
}

impl FrameSet {
    pub fn dof(&self) -> usize {
        self.link_poses.len()
    }

    pub fn joint_origin(&self, joint: usize) -> Vector3<f64> {
        self.link_poses[joint].translation.vector
    }

    pub fn joint_rotation(&self, joint: usize) -> Rotation3<f64> {
        self.link_poses[joint].rotation.to_rotation_matrix()
    }

    /// End-effector point: distal endpoint of the last link.
    pub fn tip(&self) -> Vector3<f64> {
        self.link_tip[self.dof() - 1]
    }

    fn index(&self, link: usize) -> Result<usize> {
        if link == 0 || link > self.dof() {
            return Err(Error::Argument(format!(
                "link {link} out of range 1..={}",
                self.dof()
            )));
        }
        Ok(link - 1)
    }

    fn check_s(s: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&s) {
            return Err(Error::Argument(format!(
                "arc-length parameter {s} outside [0, 1]"
            )));
        }
        Ok(())
    }

    /// Point at normalized arc length `s` on the centerline of `link` (1-based).
    pub fn contact_point(&self, link: usize, s: f64) -> Result<Vector3<f64>> {
        let i = self.index(link)?;
        Self::check_s(s)?;
        Ok(self.link_base[i] + s * (self.link_tip[i] - self.link_base[i]))
    }

    /// Position Jacobian of the world point `p` rigidly attached to `link`.
    pub fn jacobian_of_point(&self, link: usize, p: &Vector3<f64>) -> Result<Matrix3xX<f64>> {
        let i = self.index(link)?;
        let mut jac = Matrix3xX::zeros(self.dof());
        for j in 0..=i {
            let column = self.axes[j].cross(&(p - self.joint_origin(j)));
            jac.set_column(j, &column);
        }
        Ok(jac)
    }

    pub fn point_jacobian(&self, link: usize, s: f64) -> Result<Matrix3xX<f64>> {
        let p = self.contact_point(link, s)?;
        self.jacobian_of_point(link, &p)
    }

    pub fn end_effector_jacobian(&self) -> Matrix3xX<f64> {
        let n = self.dof();
        self.jacobian_of_point(n, &self.tip())
            .expect("last link always exists")
    }
}

impl RobotModel {
    pub fn forward_kinematics(&self, q: &DVector<f64>) -> Result<FrameSet> {
        self.check_len("q", q)?;
        let n = self.dof();
        let mut link_poses = Vec::with_capacity(n);
        let mut axes = Vec::with_capacity(n);
        let mut link_base = Vec::with_capacity(n);
        let mut link_tip = Vec::with_capacity(n);

        let mut parent = Isometry3::identity();
        for (i, (joint, link)) in self.joints().iter().zip(self.links()).enumerate() {
            let joint_frame = parent * joint.origin;
            let rotation = UnitQuaternion::from_axis_angle(&joint.axis, q[i]);
            let pose = joint_frame * Isometry3::from_parts(Translation3::identity(), rotation);
            axes.push(joint_frame.rotation * joint.axis.into_inner());
            link_base.push(pose.transform_point(&link.base.into()).coords);
            link_tip.push(pose.transform_point(&link.tip.into()).coords);
            link_poses.push(pose);
            parent = pose;
        }
        Ok(FrameSet {
            link_poses,
            axes,
            link_base,
            link_tip,
        })
    }

    pub fn point_jacobian(&self, q: &DVector<f64>, link: usize, s: f64) -> Result<Matrix3xX<f64>> {
        self.link_index(link)?;
        self.forward_kinematics(q)?.point_jacobian(link, s)
    }

    pub fn end_effector_jacobian(&self, q: &DVector<f64>) -> Result<Matrix3xX<f64>> {
        Ok(self.forward_kinematics(q)?.end_effector_jacobian())
    }

    pub fn tip_position(&self, q: &DVector<f64>) -> Result<Vector3<f64>> {
        Ok(self.forward_kinematics(q)?.tip())
    }

    /// Joint torques produced by a force `force` (N) acting at arc length `s` on `link`.
    pub fn external_torque_from_force(
        &self,
        q: &DVector<f64>,
        link: usize,
        s: f64,
        force: &Vector3<f64>,
    ) -> Result<DVector<f64>> {
        if !force.iter().all(|f| f.is_finite()) {
            return Err(Error::Argument("force contains non-finite values".into()));
        }
        let jac = self.point_jacobian(q, link, s)?;
        Ok(jac.transpose() * force)
    }
}
