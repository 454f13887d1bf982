//! Reference end-effector paths and their JSON form.
//!
//! A path file is a JSON list of samples `{"s": .., "xyz": [..], "quaternion": [w, x, y, z]}`
//! with `s` strictly increasing from 0 to 1. A deformed-path export wraps the same list
//! as `{"samples": [...], "bumps": [...]}`; both shapes load.

use std::path::Path;

use nalgebra::{Quaternion, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct PathSample {
    pub s: f64,
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
}

/// Piecewise-linear positions with spherical-linear orientation interpolation.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePath {
    samples: Vec<PathSample>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathSampleRecord {
    pub s: f64,
    pub xyz: [f64; 3],
    /// `[w, x, y, z]`
    pub quaternion: [f64; 4],
}

impl From<&PathSample> for PathSampleRecord {
    fn from(p: &PathSample) -> Self {
        let q = p.orientation.quaternion();
        Self {
            s: p.s,
            xyz: [p.position.x, p.position.y, p.position.z],
            quaternion: [q.w, q.i, q.j, q.k],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PathDocument {
    Samples(Vec<PathSampleRecord>),
    Deformed {
        samples: Vec<PathSampleRecord>,
        #[serde(default)]
        bumps: Vec<serde_json::Value>,
    },
}

impl ReferencePath {
    pub fn new(samples: Vec<PathSample>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::Validation("a path needs at least two samples".into()));
        }
        if samples[0].s != 0.0 || samples[samples.len() - 1].s != 1.0 {
            return Err(Error::Validation("path parameter must run from 0 to 1".into()));
        }
        if samples.windows(2).any(|w| !(w[0].s < w[1].s)) {
            return Err(Error::Validation(
                "path parameter must be strictly increasing".into(),
            ));
        }
        if samples
            .iter()
            .any(|p| !p.position.iter().all(|x| x.is_finite()))
        {
            return Err(Error::Validation("path positions must be finite".into()));
        }
        Ok(Self { samples })
    }

    /// Straight segment with `segments + 1` evenly spaced samples and constant orientation.
    pub fn line(
        from: Vector3<f64>,
        to: Vector3<f64>,
        orientation: UnitQuaternion<f64>,
        segments: usize,
    ) -> Result<Self> {
        let segments = segments.max(1);
        Self::new(
            (0..=segments)
                .map(|i| {
                    let s = if i == segments { 1.0 } else { i as f64 / segments as f64 };
                    PathSample {
                        s,
                        position: from + (to - from) * s,
                        orientation,
                    }
                })
                .collect(),
        )
    }

    pub fn samples(&self) -> &[PathSample] {
        &self.samples
    }

    fn segment(&self, s: f64) -> (usize, f64) {
        let s = s.clamp(0.0, 1.0);
        let upper = self
            .samples
            .partition_point(|p| p.s <= s)
            .clamp(1, self.samples.len() - 1);
        let (a, b) = (&self.samples[upper - 1], &self.samples[upper]);
        (upper - 1, (s - a.s) / (b.s - a.s))
    }

    pub fn position(&self, s: f64) -> Vector3<f64> {
        if s <= 0.0 {
            return self.samples[0].position;
        }
        if s >= 1.0 {
            return self.samples[self.samples.len() - 1].position;
        }
        let (i, u) = self.segment(s);
        let (a, b) = (&self.samples[i], &self.samples[i + 1]);
        a.position + (b.position - a.position) * u
    }

    /// `dx_d/ds` on the segment containing `s`.
    pub fn tangent(&self, s: f64) -> Vector3<f64> {
        let (i, _) = self.segment(s);
        let (a, b) = (&self.samples[i], &self.samples[i + 1]);
        (b.position - a.position) / (b.s - a.s)
    }

    pub fn orientation(&self, s: f64) -> UnitQuaternion<f64> {
        let (i, u) = self.segment(s);
        let (a, b) = (&self.samples[i], &self.samples[i + 1]);
        a.orientation
            .try_slerp(&b.orientation, u, 1e-12)
            .unwrap_or(a.orientation)
    }

    pub fn length(&self) -> f64 {
        self.samples
            .windows(2)
            .map(|w| (w[1].position - w[0].position).norm())
            .sum()
    }

    pub fn to_records(&self) -> Vec<PathSampleRecord> {
        self.samples.iter().map(PathSampleRecord::from).collect()
    }

    pub fn from_records(records: &[PathSampleRecord]) -> Result<Self> {
        let samples = records
            .iter()
            .map(|r| {
                let [w, x, y, z] = r.quaternion;
                let q = Quaternion::new(w, x, y, z);
                if !(q.norm() > 0.0) {
                    return Err(Error::Validation(format!(
                        "sample at s = {} has a zero quaternion",
                        r.s
                    )));
                }
                Ok(PathSample {
                    s: r.s,
                    position: Vector3::from(r.xyz),
                    // keep already-unit input bit-exact so files round-trip
                    orientation: if (q.norm() - 1.0).abs() < 1e-12 {
                        UnitQuaternion::new_unchecked(q)
                    } else {
                        UnitQuaternion::from_quaternion(q)
                    },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(samples)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: PathDocument =
            serde_json::from_str(text).map_err(|e| Error::Validation(e.to_string()))?;
        match doc {
            PathDocument::Samples(records) | PathDocument::Deformed { samples: records, .. } => {
                Self::from_records(&records)
            }
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| Error::Load {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }
}
