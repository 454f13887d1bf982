//! Declarative JSON chain description.
//!
//! ```json
//! {
//!   "joints": [{"axis": [0,0,1], "origin_xyz": [0,0,0], "origin_rpy": [0,0,0]}],
//!   "links":  [{"mass": 1.0, "com": [0.25,0,0],
//!               "inertia": [ixx, ixy, ixz, iyy, iyz, izz], "tip": [0.5,0,0]}],
//!   "gravity": [0, 0, -9.81],
//!   "friction": [{"viscous": 0.0, "coulomb": 0.0}]
//! }
//! ```
//!
//! `friction` may be omitted (all zero). A link may also carry `base` when its
//! centerline does not start at the joint origin, and a joint may carry
//! `limits: [lower, upper]`.

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use super::{JointFriction, JointSpec, LinkSpec, RobotModel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointEntry {
    pub axis: [f64; 3],
    #[serde(default)]
    pub origin_xyz: [f64; 3],
    #[serde(default)]
    pub origin_rpy: [f64; 3],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limits: Option<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LinkEntry {
    pub mass: f64,
    pub com: [f64; 3],
    /// Upper triangle `[ixx, ixy, ixz, iyy, iyz, izz]` about the COM.
    pub inertia: [f64; 6],
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<[f64; 3]>,
    pub tip: [f64; 3],
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrictionEntry {
    #[serde(default)]
    pub viscous: f64,
    #[serde(default)]
    pub coulomb: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainFile {
    pub joints: Vec<JointEntry>,
    pub links: Vec<LinkEntry>,
    pub gravity: [f64; 3],
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub friction: Vec<FrictionEntry>,
}

impl ChainFile {
    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn into_model(self) -> Result<RobotModel> {
        let n = self.joints.len();
        let joints = self
            .joints
            .iter()
            .map(|j| {
                let mut spec = JointSpec::from_xyz_rpy(
                    Vector3::from(j.axis),
                    Vector3::from(j.origin_xyz),
                    Vector3::from(j.origin_rpy),
                );
                if Vector3::from(j.axis).norm() == 0.0 {
                    return Err(Error::Model("joint axis must be nonzero".into()));
                }
                spec.limits = j.limits.map(|[lo, hi]| (lo, hi));
                Ok(spec)
            })
            .collect::<Result<Vec<_>>>()?;
        let links = self
            .links
            .iter()
            .map(|l| {
                let [ixx, ixy, ixz, iyy, iyz, izz] = l.inertia;
                LinkSpec {
                    mass: l.mass,
                    com: Vector3::from(l.com),
                    inertia: Matrix3::new(ixx, ixy, ixz, ixy, iyy, iyz, ixz, iyz, izz),
                    base: l.base.map(Vector3::from).unwrap_or_else(Vector3::zeros),
                    tip: Vector3::from(l.tip),
                }
            })
            .collect();
        let friction = if self.friction.is_empty() {
            vec![JointFriction::default(); n]
        } else {
            self.friction
                .iter()
                .map(|f| JointFriction {
                    viscous: f.viscous,
                    coulomb: f.coulomb,
                })
                .collect()
        };
        RobotModel::new(joints, links, friction, Vector3::from(self.gravity))
    }
}

impl RobotModel {
    pub fn from_chain_json(text: &str) -> Result<Self> {
        ChainFile::from_json(text)
            .map_err(|e| Error::Model(e.to_string()))?
            .into_model()
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let chain = ChainFile::from_json(&text).map_err(|e| Error::Load {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        chain.into_model()
    }

    /// Chain-file form of this model. Joint origins are written back as xyz + rpy.
    pub fn to_chain_file(&self) -> ChainFile {
        let joints = self
            .joints()
            .iter()
            .map(|j| {
                let (r, p, y) = j.origin.rotation.euler_angles();
                let t = j.origin.translation.vector;
                JointEntry {
                    axis: [j.axis.x, j.axis.y, j.axis.z],
                    origin_xyz: [t.x, t.y, t.z],
                    origin_rpy: [r, p, y],
                    limits: j.limits.map(|(lo, hi)| [lo, hi]),
                }
            })
            .collect();
        let links = self
            .links()
            .iter()
            .map(|l| {
                let i = l.inertia;
                LinkEntry {
                    mass: l.mass,
                    com: [l.com.x, l.com.y, l.com.z],
                    inertia: [i[(0, 0)], i[(0, 1)], i[(0, 2)], i[(1, 1)], i[(1, 2)], i[(2, 2)]],
                    base: (l.base != Vector3::zeros()).then(|| [l.base.x, l.base.y, l.base.z]),
                    tip: [l.tip.x, l.tip.y, l.tip.z],
                }
            })
            .collect();
        let g = self.gravity();
        ChainFile {
            joints,
            links,
            gravity: [g.x, g.y, g.z],
            friction: self
                .friction()
                .iter()
                .map(|f| FrictionEntry {
                    viscous: f.viscous,
                    coulomb: f.coulomb,
                })
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const ONE_LINK: &str = r#"{
        "joints": [{"axis": [0, 0, 1], "origin_xyz": [0, 0, 0], "origin_rpy": [0, 0, 0]}],
        "links": [{"mass": 1.0, "com": [0.25, 0, 0], "inertia": [0.001, 0, 0, 0.01, 0, 0.01], "tip": [0.5, 0, 0]}],
        "gravity": [0, -9.81, 0]
    }"#;

    #[test]
    fn parses_minimal_chain() {
        let model = RobotModel::from_chain_json(ONE_LINK).unwrap();
        assert_eq!(model.dof(), 1);
        assert_eq!(model.friction()[0], JointFriction::default());
        assert_eq!(model.links()[0].tip, Vector3::new(0.5, 0.0, 0.0));
    }

    #[test]
    fn unknown_key_is_named() {
        let text = ONE_LINK.replace("\"gravity\"", "\"gravitee\"");
        let err = RobotModel::from_chain_json(&text).unwrap_err().to_string();
        assert!(err.contains("gravitee"), "{err}");
    }

    #[test]
    fn rejects_indefinite_inertia() {
        let text = ONE_LINK.replace("[0.001, 0, 0, 0.01, 0, 0.01]", "[0.001, 0.5, 0, 0.01, 0, 0.01]");
        assert!(matches!(
            RobotModel::from_chain_json(&text),
            Err(Error::Model(_))
        ));
    }

    #[test]
    fn shipped_fixture_loads() {
        let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../fixtures/arm7.json");
        let model = RobotModel::load(path).unwrap();
        assert_eq!(model.dof(), 7);
        let again = model.to_chain_file().into_model().unwrap();
        for (a, b) in model.joints().iter().zip(again.joints()) {
            assert!((a.origin.to_homogeneous() - b.origin.to_homogeneous()).abs().max() < 1e-12);
        }
    }
}
