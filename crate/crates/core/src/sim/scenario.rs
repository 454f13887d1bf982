//! Scenario files.
//!
//! ```json
//! {
//!   "robot": {"chain": "arm7.json", "initial_q": [...]},
//!   "path": {"line": {"goal": [0.45, 0.2, 0.45]}},
//!   "contacts": [{"link": 4, "s": 0.5, "force": [0, 0, 20], "t_start": 2.0, "t_end": 2.5}],
//!   "noise": {"sigma": 0.05},
//!   "duration": 12.0, "sample_rate": 1000, "seed": 1
//! }
//! ```
//!
//! Relative file references resolve against the scenario's directory. `path` is
//! either a path file, an inline sample list, or a straight line from the
//! initial tip position to `goal`.

use std::path::{Path, PathBuf};

use nalgebra::{DVector, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::pipeline::PipelineConfig;
use crate::detection::DetectionConfig;
use crate::error::{Error, Result};
use crate::estimation::EstimationConfig;
use crate::planner::{PathSampleRecord, PlannerConfig, ReferencePath};
use crate::robot::{ChainFile, ResolvedRateConfig, RobotModel};

/// Largest distance between the initial tip and the start of the path.
pub const START_TOLERANCE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ForceProfile {
    #[default]
    Constant,
    /// linear ramps of `ramp` seconds at both ends
    Trapezoid,
    HalfSine,
}

/// A contact the simulated world applies; the pipeline never sees it directly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthContact {
    /// 1-based
    pub link: usize,
    pub s: f64,
    /// peak force, N
    pub force: [f64; 3],
    #[serde(default)]
    pub profile: ForceProfile,
    #[serde(default = "default_ramp")]
    pub ramp: f64,
    pub t_start: f64,
    pub t_end: f64,
}

fn default_ramp() -> f64 {
    0.05
}

impl GroundTruthContact {
    pub fn peak(&self) -> Vector3<f64> {
        Vector3::from(self.force)
    }

    pub fn is_active(&self, t: f64) -> bool {
        t >= self.t_start && t < self.t_end
    }

    pub fn force_at(&self, t: f64) -> Vector3<f64> {
        if !self.is_active(t) {
            return Vector3::zeros();
        }
        let scale = match self.profile {
            ForceProfile::Constant => 1.0,
            ForceProfile::Trapezoid => {
                let edge = (t - self.t_start).min(self.t_end - t);
                (edge / self.ramp).min(1.0)
            }
            ForceProfile::HalfSine => {
                (std::f64::consts::PI * (t - self.t_start) / (self.t_end - self.t_start)).sin()
            }
        };
        self.peak() * scale
    }

    fn validate(&self, index: usize, dof: usize, duration: f64, force_limit: f64) -> Result<()> {
        let fail = |msg: String| Err(Error::Validation(format!("contacts[{index}]: {msg}")));
        if self.link == 0 || self.link > dof {
            return fail(format!("link {} outside 1..={dof}", self.link));
        }
        if !(0.0..=1.0).contains(&self.s) {
            return fail(format!("s = {} outside [0, 1]", self.s));
        }
        if !(self.t_start < self.t_end) {
            return fail(format!("t_start {} must precede t_end {}", self.t_start, self.t_end));
        }
        if self.t_start < 0.0 || self.t_end > duration {
            return fail(format!(
                "[{}, {}] s does not fit in the {duration} s run",
                self.t_start, self.t_end
            ));
        }
        let magnitude = self.peak().norm();
        if !(magnitude <= force_limit) {
            return fail(format!("|F| = {magnitude} N exceeds the {force_limit} N limit"));
        }
        if self.profile == ForceProfile::Trapezoid
            && !(self.ramp > 0.0 && 2.0 * self.ramp <= self.t_end - self.t_start)
        {
            return fail(format!("ramp {} does not fit the contact interval", self.ramp));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    /// per-joint torque noise standard deviation, N·m
    pub sigma: f64,
    /// the simulated robot's link masses are scaled by `1 + mass_scale_error`
    pub mass_scale_error: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            sigma: 0.0,
            mass_scale_error: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ChainRef {
    File(PathBuf),
    Inline(ChainFile),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotBlock {
    pub chain: ChainRef,
    pub initial_q: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineSpec {
    pub goal: [f64; 3],
    #[serde(default = "default_segments")]
    pub segments: usize,
}

fn default_segments() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PathRef {
    File(PathBuf),
    Inline(Vec<PathSampleRecord>),
    Line { line: LineSpec },
}

/// The file as written, before references are resolved.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub robot: RobotBlock,
    pub path: PathRef,
    #[serde(default)]
    pub contacts: Vec<GroundTruthContact>,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub detection: DetectionConfig,
    #[serde(default)]
    pub estimation: EstimationConfig,
    #[serde(default)]
    pub planner: PlannerConfig,
    #[serde(default)]
    pub tracking: ResolvedRateConfig,
    #[serde(default = "default_duration")]
    pub duration: f64,
    #[serde(default = "default_rate")]
    pub sample_rate: f64,
    #[serde(default)]
    pub seed: u64,
    /// largest contact force a scenario or a live push may apply, N
    #[serde(default = "default_force_limit")]
    pub force_limit: f64,
}

fn default_duration() -> f64 {
    10.0
}

fn default_rate() -> f64 {
    1000.0
}

fn default_force_limit() -> f64 {
    100.0
}

/// A validated scenario with the robot and path loaded.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub model: RobotModel,
    pub initial_q: DVector<f64>,
    pub path: ReferencePath,
    pub contacts: Vec<GroundTruthContact>,
    pub noise: NoiseConfig,
    pub detection: DetectionConfig,
    pub estimation: EstimationConfig,
    pub planner: PlannerConfig,
    pub tracking: ResolvedRateConfig,
    pub duration: f64,
    pub sample_rate: f64,
    pub seed: u64,
    pub force_limit: f64,
}

impl Scenario {
    pub fn dof(&self) -> usize {
        self.model.dof()
    }

    pub fn tick_count(&self) -> usize {
        (self.duration * self.sample_rate).round() as usize
    }

    pub fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig {
            detection: self.detection.clone(),
            estimation: self.estimation.clone(),
            planner: self.planner.clone(),
            tracking: self.tracking,
            sample_rate: self.sample_rate,
        }
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.sample_rate
    }

    /// Parse a scenario document; relative references resolve against `base_dir`.
    pub fn from_value(value: Value, base_dir: &Path) -> Result<Self> {
        let file: ScenarioFile =
            serde_json::from_value(value).map_err(|e| Error::Config(e.to_string()))?;
        Self::resolve(file, base_dir)
    }

    pub fn resolve(file: ScenarioFile, base_dir: &Path) -> Result<Self> {
        let model = match file.robot.chain {
            ChainRef::File(p) => RobotModel::load(base_dir.join(p))?,
            ChainRef::Inline(chain) => chain.into_model()?,
        };
        let initial_q = DVector::from_vec(file.robot.initial_q);
        if initial_q.len() != model.dof() {
            return Err(Error::Validation(format!(
                "robot.initial_q has {} entries for a {}-joint chain",
                initial_q.len(),
                model.dof()
            )));
        }
        let frames = model.forward_kinematics(&initial_q)?;
        let start = frames.tip();
        let path = match file.path {
            PathRef::File(p) => ReferencePath::load(base_dir.join(p))?,
            PathRef::Inline(records) => ReferencePath::from_records(&records)?,
            PathRef::Line { line } => {
                let last = frames.link_poses.len() - 1;
                let orientation = UnitQuaternion::from_rotation_matrix(&frames.joint_rotation(last));
                ReferencePath::line(start, Vector3::from(line.goal), orientation, line.segments)?
            }
        };
        let scenario = Scenario {
            model,
            initial_q,
            path,
            contacts: file.contacts,
            noise: file.noise,
            detection: file.detection,
            estimation: file.estimation,
            planner: file.planner,
            tracking: file.tracking,
            duration: file.duration,
            sample_rate: file.sample_rate,
            seed: file.seed,
            force_limit: file.force_limit,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0 && self.duration.is_finite()) {
            return Err(Error::Validation(format!("duration must be positive, got {}", self.duration)));
        }
        if !(self.sample_rate > 0.0 && self.sample_rate.is_finite()) {
            return Err(Error::Validation(format!(
                "sample_rate must be positive, got {}",
                self.sample_rate
            )));
        }
        if !(self.force_limit > 0.0) {
            return Err(Error::Validation("force_limit must be positive".into()));
        }
        if !(self.noise.sigma >= 0.0 && self.noise.sigma.is_finite()) {
            return Err(Error::Validation(format!("noise.sigma must be >= 0, got {}", self.noise.sigma)));
        }
        if !(self.noise.mass_scale_error > -1.0) {
            return Err(Error::Validation("noise.mass_scale_error must exceed -1".into()));
        }
        self.detection.validate(self.dof())?;
        self.estimation.validate()?;
        self.planner.validate()?;
        self.tracking.validate()?;
        // the filter needs to exist at this rate
        crate::detection::AccelerationEstimator::new(
            self.dof(),
            self.sample_rate,
            self.detection.qdd_cutoff_hz,
        )?;
        for (i, c) in self.contacts.iter().enumerate() {
            c.validate(i, self.dof(), self.duration, self.force_limit)?;
        }
        let tip = self.model.tip_position(&self.initial_q)?;
        let gap = (tip - self.path.position(0.0)).norm();
        if gap > START_TOLERANCE {
            return Err(Error::Validation(format!(
                "path starts {gap:.4} m from the initial tip position"
            )));
        }
        Ok(())
    }

    /// Check a contact that arrives while running (live pushes).
    pub fn check_contact(&self, contact: &GroundTruthContact, duration: f64) -> Result<()> {
        contact.validate(0, self.dof(), duration, self.force_limit)
    }
}

/// Set `key` (dot-separated, numeric segments index arrays) in a JSON document.
pub fn apply_override(doc: &mut Value, key: &str, value: Value) -> Result<()> {
    let mut node = doc;
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::Config(format!("malformed override key `{key}`")));
    }
    for (i, part) in parts.iter().enumerate() {
        let last = i + 1 == parts.len();
        node = match node {
            Value::Array(items) => {
                let index: usize = part.parse().map_err(|_| {
                    Error::Config(format!("`{part}` in `{key}` must index an array"))
                })?;
                let len = items.len();
                items.get_mut(index).ok_or_else(|| {
                    Error::Config(format!("index {index} in `{key}` out of range ({len} items)"))
                })?
            }
            Value::Object(map) => {
                if last {
                    map.insert(part.to_string(), value);
                    return Ok(());
                }
                map.entry(part.to_string()).or_insert_with(|| Value::Object(Default::default()))
            }
            _ => return Err(Error::Config(format!("`{key}` descends into a non-object"))),
        };
        if last {
            *node = value;
            return Ok(());
        }
    }
    unreachable!("loop returns on the last segment")
}

/// Interpret an override value: JSON if it parses, a string otherwise.
pub fn parse_override_value(text: &str) -> Value {
    serde_json::from_str(text).unwrap_or_else(|_| Value::String(text.to_string()))
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    load_scenario_with(path, &[])
}

/// Load a scenario after applying `KEY=VALUE` style overrides to the raw document.
pub fn load_scenario_with(path: impl AsRef<Path>, overrides: &[(String, Value)]) -> Result<Scenario> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut doc: Value = serde_json::from_str(&text).map_err(|e| Error::Load {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    for (key, value) in overrides {
        apply_override(&mut doc, key, value.clone())?;
    }
    let base = path.parent().unwrap_or(Path::new("."));
    let file: ScenarioFile = serde_json::from_value(doc).map_err(|e| Error::Load {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Scenario::resolve(file, base)
}
