//! Serial-manipulator model: revolute joints, rigid links with a straight
//! centerline, per-joint friction and a gravity vector.
//!
//! Links and joints are numbered from 1 in every public API (link `l` is the
//! body moved by joint `l`), matching the numbering used in chain files,
//! trace files and the wire protocol.

mod chain_file;
mod dynamics;
mod ik;
mod kinematics;

use nalgebra::{Cholesky, DVector, Isometry3, Matrix3, Rotation3, Translation3, Unit, Vector3};

use crate::error::{Error, Result};

pub use chain_file::{ChainFile, FrictionEntry, JointEntry, LinkEntry};
pub use dynamics::COULOMB_SMOOTHING;
pub use ik::ResolvedRateConfig;
pub use kinematics::FrameSet;

/// Revolute joint: a fixed transform from the parent link frame plus a rotation axis.
#[derive(Debug, Clone, PartialEq)]
pub struct JointSpec {
    /// Unit rotation axis expressed in the joint frame.
    pub axis: Unit<Vector3<f64>>,
    /// Parent link frame to joint frame at zero joint angle.
    pub origin: Isometry3<f64>,
    /// Optional `(lower, upper)` position limits in rad.
    pub limits: Option<(f64, f64)>,
}

impl JointSpec {
    pub fn new(axis: Vector3<f64>, origin: Isometry3<f64>) -> Self {
        Self {
            axis: Unit::new_normalize(axis),
            origin,
            limits: None,
        }
    }

    pub fn from_xyz_rpy(axis: Vector3<f64>, xyz: Vector3<f64>, rpy: Vector3<f64>) -> Self {
        let rotation = Rotation3::from_euler_angles(rpy.x, rpy.y, rpy.z);
        Self::new(
            axis,
            Isometry3::from_parts(Translation3::from(xyz), rotation.into()),
        )
    }
}

/// Rigid link expressed in its own frame (the frame of the joint that moves it).
#[derive(Debug, Clone, PartialEq)]
pub struct LinkSpec {
    pub mass: f64,
    pub com: Vector3<f64>,
    /// Rotational inertia about the center of mass.
    pub inertia: Matrix3<f64>,
    /// Proximal centerline endpoint, usually the joint origin.
    pub base: Vector3<f64>,
    /// Distal centerline endpoint, usually the next joint origin.
    pub tip: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct JointFriction {
    /// N·m·s/rad
    pub viscous: f64,
    /// N·m
    pub coulomb: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobotModel {
    joints: Vec<JointSpec>,
    links: Vec<LinkSpec>,
    friction: Vec<JointFriction>,
    gravity: Vector3<f64>,
}

impl RobotModel {
    pub fn new(
        joints: Vec<JointSpec>,
        links: Vec<LinkSpec>,
        friction: Vec<JointFriction>,
        gravity: Vector3<f64>,
    ) -> Result<Self> {
        let model = Self {
            joints,
            links,
            friction,
            gravity,
        };
        model.validate()?;
        Ok(model)
    }

    fn validate(&self) -> Result<()> {
        let n = self.joints.len();
        if n == 0 {
            return Err(Error::Model("a chain needs at least one joint".into()));
        }
        if self.links.len() != n {
            return Err(Error::Model(format!(
                "{n} joints but {} links",
                self.links.len()
            )));
        }
        if self.friction.len() != n {
            return Err(Error::Model(format!(
                "{n} joints but {} friction entries",
                self.friction.len()
            )));
        }
        if !self.gravity.iter().all(|g| g.is_finite()) {
            return Err(Error::Model("gravity must be finite".into()));
        }
        for (i, joint) in self.joints.iter().enumerate() {
            if !joint.axis.iter().all(|a| a.is_finite()) {
                return Err(Error::Model(format!("joint {}: axis is not finite", i + 1)));
            }
            if let Some((lo, hi)) = joint.limits {
                if !(lo < hi) {
                    return Err(Error::Model(format!(
                        "joint {}: lower limit {lo} is not below upper limit {hi}",
                        i + 1
                    )));
                }
            }
        }
        for (i, link) in self.links.iter().enumerate() {
            let id = i + 1;
            if !(link.mass > 0.0) || !link.mass.is_finite() {
                return Err(Error::Model(format!("link {id}: mass must be positive")));
            }
            let inertia = link.inertia;
            if (inertia - inertia.transpose()).abs().max() > 1e-12 {
                return Err(Error::Model(format!("link {id}: inertia is not symmetric")));
            }
            if Cholesky::new(inertia).is_none() {
                return Err(Error::Model(format!(
                    "link {id}: inertia is not positive definite"
                )));
            }
            if !((link.tip - link.base).norm() > 0.0) {
                return Err(Error::Model(format!(
                    "link {id}: centerline has zero length"
                )));
            }
        }
        for (i, f) in self.friction.iter().enumerate() {
            if !(f.viscous >= 0.0 && f.coulomb >= 0.0) {
                return Err(Error::Model(format!(
                    "joint {}: friction coefficients must be nonnegative",
                    i + 1
                )));
            }
        }
        Ok(())
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn joints(&self) -> &[JointSpec] {
        &self.joints
    }

    pub fn links(&self) -> &[LinkSpec] {
        &self.links
    }

    pub fn friction(&self) -> &[JointFriction] {
        &self.friction
    }

    pub fn gravity(&self) -> Vector3<f64> {
        self.gravity
    }

    pub fn with_gravity(mut self, gravity: Vector3<f64>) -> Self {
        self.gravity = gravity;
        self
    }

    pub fn with_friction(mut self, friction: Vec<JointFriction>) -> Result<Self> {
        self.friction = friction;
        self.validate()?;
        Ok(self)
    }

    /// Same chain with every link mass multiplied by `factor`.
    pub fn with_mass_scale(&self, factor: f64) -> Result<Self> {
        let mut scaled = self.clone();
        for link in &mut scaled.links {
            link.mass *= factor;
            link.inertia *= factor;
        }
        scaled.validate()?;
        Ok(scaled)
    }

    /// Same chain mounted on a base rotated by `rotation`; gravity is rotated along
    /// so the physical situation is unchanged, only expressed in a new world frame.
    pub fn rotated_world(&self, rotation: &Rotation3<f64>) -> Self {
        let mut rotated = self.clone();
        let first = &mut rotated.joints[0];
        first.origin = Isometry3::from_parts(Translation3::identity(), (*rotation).into()) * first.origin;
        rotated.gravity = rotation * self.gravity;
        rotated
    }

    /// Link `l` (1-based) as a 0-based index.
    pub(crate) fn link_index(&self, link: usize) -> Result<usize> {
        if link == 0 || link > self.dof() {
            return Err(Error::Argument(format!(
                "link {link} out of range 1..={}",
                self.dof()
            )));
        }
        Ok(link - 1)
    }

    pub(crate) fn check_len(&self, what: &'static str, v: &DVector<f64>) -> Result<()> {
        if v.len() != self.dof() {
            return Err(Error::dim(what, self.dof(), v.len()));
        }
        if !v.iter().all(|x| x.is_finite()) {
            return Err(Error::Argument(format!("{what} contains non-finite values")));
        }
        Ok(())
    }
}

/// Wrap every joint angle into `(-π, π]`.
pub fn wrap_angles(q: &DVector<f64>) -> DVector<f64> {
    q.map(|a| {
        let w = a.rem_euclid(std::f64::consts::TAU);
        if w > std::f64::consts::PI {
            w - std::f64::consts::TAU
        } else {
            w
        }
    })
}
