//! Contact estimation on a recorded residual trace.

use serde::{Deserialize, Serialize};

use super::pipeline::{estimate_window, ContactWindowing};
use crate::detection::{ContactDetector, DetectionConfig, ResidualSample};
use crate::error::{Error, Result};
use crate::estimation::{estimate_contact, ContactEstimate, EstimationConfig};
use crate::planner::PlannerConfig;
use crate::robot::RobotModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OfflineMode {
    /// Re-run detection on the residuals and window exactly like the live pipeline.
    Replay,
    /// Consecutive chunks of `window_N` samples, all fitted on one link.
    FixedLink(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OfflineEstimate {
    pub window: usize,
    /// time of the last sample used
    pub t: f64,
    pub estimate: ContactEstimate,
}

pub fn estimate_trace(
    samples: &[ResidualSample],
    model: &RobotModel,
    detection: &DetectionConfig,
    estimation: &EstimationConfig,
    planner: &PlannerConfig,
    mode: OfflineMode,
) -> Result<Vec<OfflineEstimate>> {
    detection.validate(model.dof())?;
    estimation.validate()?;
    planner.validate()?;
    if let Some(s) = samples.iter().find(|s| s.q.len() != model.dof()) {
        return Err(Error::dim("trace joints", model.dof(), s.q.len()));
    }
    match mode {
        OfflineMode::FixedLink(link) => samples
            .chunks(estimation.window_n)
            .enumerate()
            .map(|(window, chunk)| {
                Ok(OfflineEstimate {
                    window,
                    t: chunk[chunk.len() - 1].t,
                    estimate: estimate_contact(chunk, link, model, estimation)?,
                })
            })
            .collect(),
        OfflineMode::Replay => {
            let mut detector = ContactDetector::new(detection.clone());
            let mut windowing = ContactWindowing::new(
                planner.window_n_d,
                estimation.window_n,
                planner.min_contact_fraction,
            );
            let mut out = Vec::new();
            for sample in samples {
                let det = detector.step(&sample.tau_hat);
                let t = sample.t;
                let Some(close) = windowing.push(sample.clone(), det.contact, det.switched && det.contact)
                else {
                    continue;
                };
                let Some(window_samples) = close.samples else {
                    continue;
                };
                if let Some(estimate) = estimate_window(model, &window_samples, detection, estimation)? {
                    out.push(OfflineEstimate {
                        window: close.index,
                        t,
                        estimate,
                    });
                }
            }
            Ok(out)
        }
    }
}
