//! The controller side of the loop: everything here sees measured joint state
//! and torques only, never the simulated contacts.

use std::collections::VecDeque;

use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};

use crate::detection::{
    localize_link_detailed, AccelerationEstimator, ContactDetector, DetectionConfig,
    DetectorOutput, ResidualSample,
};
use crate::error::{Error, Result};
use crate::estimation::{estimate_contact, ContactEstimate, EstimationConfig};
use crate::planner::{
    window_average, CommitOutcome, DeformationState, PlannerConfig, ReferencePath, WindowSummary,
};
use crate::robot::{ResolvedRateConfig, RobotModel};

/// Seconds to reach the nominal tip speed from rest; also sets the braking
/// deceleration near the goal.
pub const SPEED_RAMP_TIME: f64 = 0.5;

/// Parameter steps used to re-measure the deformed path after a commit.
const LENGTH_SEGMENTS: usize = 1000;

/// What the robot reports at one tick.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub tick: u64,
    pub t: f64,
    pub q: DVector<f64>,
    pub qd: DVector<f64>,
    pub tau_meas: DVector<f64>,
}

/// A closed decision window and the samples it hands to the estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowClose {
    pub index: usize,
    pub contact_fraction: f64,
    pub contact_ticks: usize,
    /// most recent in-contact samples, present when the window had enough contact
    pub samples: Option<Vec<ResidualSample>>,
}

/// Splits the residual stream into fixed decision windows and keeps the most
/// recent in-contact samples of the current episode.
#[derive(Debug, Clone)]
pub struct ContactWindowing {
    window_ticks: usize,
    window_n: usize,
    min_fraction: f64,
    buffer: VecDeque<ResidualSample>,
    ticks: usize,
    contact_ticks: usize,
    index: usize,
}

impl ContactWindowing {
    pub fn new(window_ticks: usize, window_n: usize, min_fraction: f64) -> Self {
        Self {
            window_ticks,
            window_n,
            min_fraction,
            buffer: VecDeque::with_capacity(window_n),
            ticks: 0,
            contact_ticks: 0,
            index: 0,
        }
    }

    /// `rising` marks the first in-contact sample of a new episode.
    pub fn push(&mut self, sample: ResidualSample, contact: bool, rising: bool) -> Option<WindowClose> {
        if rising {
            self.buffer.clear();
        }
        self.ticks += 1;
        if contact {
            self.contact_ticks += 1;
            if self.buffer.len() == self.window_n {
                self.buffer.pop_front();
            }
            self.buffer.push_back(sample);
        }
        if self.ticks < self.window_ticks {
            return None;
        }
        let contact_fraction = self.contact_ticks as f64 / self.window_ticks as f64;
        let enough = contact_fraction >= self.min_fraction && !self.buffer.is_empty();
        let close = WindowClose {
            index: self.index,
            contact_fraction,
            contact_ticks: self.contact_ticks,
            samples: enough.then(|| self.buffer.iter().cloned().collect()),
        };
        self.index += 1;
        self.ticks = 0;
        self.contact_ticks = 0;
        Some(close)
    }
}

/// Localize on the mean residual of the window, then fit the contact on that link.
pub fn estimate_window(
    model: &RobotModel,
    samples: &[ResidualSample],
    detection: &DetectionConfig,
    estimation: &EstimationConfig,
) -> Result<Option<ContactEstimate>> {
    if samples.is_empty() {
        return Ok(None);
    }
    let mean = samples
        .iter()
        .fold(DVector::zeros(model.dof()), |acc, s| acc + &s.tau_hat)
        / samples.len() as f64;
    let Some(loc) = localize_link_detailed(&mean, detection.tau_th) else {
        return Ok(None);
    };
    let mut estimate = estimate_contact(samples, loc.link, model, estimation)?;
    estimate.diagnostics.non_contiguous = !loc.contiguous;
    Ok(Some(estimate))
}

/// One closed window as recorded in traces and telemetry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowRecord {
    pub index: usize,
    /// time of the last tick in the window
    pub t: f64,
    pub s_next: f64,
    pub contact_fraction: f64,
    /// time span of the samples the estimate used
    pub sample_span: Option<[f64; 2]>,
    pub estimate: Option<ContactEstimate>,
    pub summary: Option<WindowSummary>,
    /// `None` when the window produced no estimate to act on
    pub outcome: Option<CommitOutcome>,
}

/// Result of one pipeline tick.
#[derive(Debug, Clone)]
pub struct PipelineStep {
    pub qdd: DVector<f64>,
    pub tau_model: DVector<f64>,
    pub tau_hat: DVector<f64>,
    pub detector: DetectorOutput,
    pub s: f64,
    pub target: Vector3<f64>,
    pub tip: Vector3<f64>,
    pub q_next: DVector<f64>,
    pub window: Option<WindowRecord>,
}

#[derive(Debug, Clone)]
pub struct PipelineConfig {
    pub detection: DetectionConfig,
    pub estimation: EstimationConfig,
    pub planner: PlannerConfig,
    pub tracking: ResolvedRateConfig,
    pub sample_rate: f64,
}

/// Detection, estimation, planning and path tracking.
#[derive(Debug, Clone)]
pub struct Pipeline {
    model: RobotModel,
    path: ReferencePath,
    config: PipelineConfig,
    deformation: DeformationState,
    detector: ContactDetector,
    accel: AccelerationEstimator,
    windowing: ContactWindowing,
    dt: f64,
    s: f64,
    speed: f64,
    /// arc length of the deformed path; fixes ds/dt for a given tip speed
    length: f64,
    pending_reset: bool,
    episodes: usize,
}

impl Pipeline {
    pub fn new(model: RobotModel, path: ReferencePath, config: PipelineConfig) -> Result<Self> {
        config.detection.validate(model.dof())?;
        config.estimation.validate()?;
        config.planner.validate()?;
        config.tracking.validate()?;
        let accel =
            AccelerationEstimator::new(model.dof(), config.sample_rate, config.detection.qdd_cutoff_hz)?;
        Ok(Self {
            detector: ContactDetector::new(config.detection.clone()),
            windowing: ContactWindowing::new(
                config.planner.window_n_d,
                config.estimation.window_n,
                config.planner.min_contact_fraction,
            ),
            accel,
            dt: 1.0 / config.sample_rate,
            length: path.length(),
            model,
            path,
            config,
            deformation: DeformationState::new(),
            s: 0.0,
            speed: 0.0,
            pending_reset: false,
            episodes: 0,
        })
    }

    pub fn model(&self) -> &RobotModel {
        &self.model
    }

    pub fn path(&self) -> &ReferencePath {
        &self.path
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn deformation(&self) -> &DeformationState {
        &self.deformation
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn episodes(&self) -> usize {
        self.episodes
    }

    /// Swap configuration blocks between ticks. Detector history restarts when
    /// the detection block changes; planner state and path progress are kept.
    pub fn reconfigure(&mut self, config: PipelineConfig) -> Result<()> {
        config.detection.validate(self.model.dof())?;
        config.estimation.validate()?;
        config.planner.validate()?;
        config.tracking.validate()?;
        if config.sample_rate != self.config.sample_rate {
            return Err(Error::Config("sample_rate cannot change while running".into()));
        }
        if config.detection != self.config.detection {
            if config.detection.qdd_cutoff_hz != self.config.detection.qdd_cutoff_hz {
                self.accel = AccelerationEstimator::new(
                    self.model.dof(),
                    config.sample_rate,
                    config.detection.qdd_cutoff_hz,
                )?;
            }
            self.detector = ContactDetector::new(config.detection.clone());
        }
        if config.planner.window_n_d != self.config.planner.window_n_d
            || config.estimation.window_n != self.config.estimation.window_n
            || config.planner.min_contact_fraction != self.config.planner.min_contact_fraction
        {
            self.windowing = ContactWindowing::new(
                config.planner.window_n_d,
                config.estimation.window_n,
                config.planner.min_contact_fraction,
            );
        }
        self.config = config;
        Ok(())
    }

    pub fn process(&mut self, m: &Measurement) -> Result<PipelineStep> {
        let qdd = self.accel.update(&m.qd);
        let frames = self.model.forward_kinematics(&m.q)?;
        let tau_model = self.model.inverse_dynamics_with_frames(&frames, &m.qd, &qdd)?;
        let tau_hat = &m.tau_meas - &tau_model;
        let detector = self.detector.step(&tau_hat);
        let rising = detector.switched && detector.contact;
        if rising {
            self.episodes += 1;
        }
        if detector.switched && !detector.contact {
            self.pending_reset = true;
        }

        let sample = ResidualSample {
            t: m.t,
            q: m.q.clone(),
            qd: m.qd.clone(),
            qdd: qdd.clone(),
            tau_hat: tau_hat.clone(),
        };
        let window = match self.windowing.push(sample, detector.contact, rising) {
            Some(close) => Some(self.close_window(close, m.t)?),
            None => None,
        };

        // track the deformed path at the current parameter, then advance it
        let s = self.s;
        let (target, _) = self.deformation.evaluate(&self.path, s);
        let tangent = self.deformation.tangent(&self.path, s);
        let feedforward = if self.length > 0.0 {
            tangent * (self.speed / self.length)
        } else {
            Vector3::zeros()
        };
        let q_next =
            self.model
                .track_point(&m.q, &target, &feedforward, &self.config.tracking, self.dt)?;
        self.advance();

        Ok(PipelineStep {
            qdd,
            tau_model,
            tau_hat,
            detector,
            s,
            target,
            tip: frames.tip(),
            q_next,
            window,
        })
    }

    /// Constant speed along the whole deformed path (not the local tangent), so
    /// a bump that folds the path back on itself does not whip `s` through the fold.
    fn advance(&mut self) {
        if self.s >= 1.0 || !(self.length > 0.0) {
            self.s = 1.0;
            self.speed = 0.0;
            return;
        }
        self.s += self.speed * self.dt / self.length;
        let remaining = (1.0 - self.s) * self.length;
        if remaining <= 0.0 {
            self.s = 1.0;
            self.speed = 0.0;
            return;
        }
        let decel = self.config.planner.tip_speed / SPEED_RAMP_TIME;
        self.speed = (self.speed + decel * self.dt)
            .min(self.config.planner.tip_speed)
            .min((2.0 * decel * remaining).sqrt());
        if self.speed * self.dt >= remaining {
            self.s = 1.0;
            self.speed = 0.0;
        }
    }

    fn close_window(&mut self, close: WindowClose, t: f64) -> Result<WindowRecord> {
        let estimate = match &close.samples {
            Some(samples) => {
                estimate_window(&self.model, samples, &self.config.detection, &self.config.estimation)?
            }
            None => None,
        };
        let sample_span = close
            .samples
            .as_ref()
            .and_then(|s| Some([s.first()?.t, s.last()?.t]));
        let (summary, outcome) = match &estimate {
            Some(e) => {
                // the window's estimate stands for each of its in-contact ticks
                let held = vec![e.force; close.contact_ticks.max(1)];
                let (f_bar, f_hat) = window_average(&held)?;
                let summary = WindowSummary {
                    index: close.index,
                    f_bar,
                    f_hat,
                    s_next: self.s,
                    contact_fraction: close.contact_fraction,
                };
                let outcome = self.deformation.commit_window(&summary, &self.config.planner);
                if matches!(outcome, CommitOutcome::Committed { .. }) {
                    self.length = self.deformation.length(&self.path, LENGTH_SEGMENTS);
                }
                (Some(summary), Some(outcome))
            }
            None if close.contact_fraction < self.config.planner.min_contact_fraction => (
                None,
                Some(CommitOutcome::Skipped {
                    contact_fraction: close.contact_fraction,
                }),
            ),
            None => (None, None),
        };
        if self.pending_reset {
            self.deformation.end_episode();
            self.pending_reset = false;
        }
        Ok(WindowRecord {
            index: close.index,
            t,
            s_next: self.s,
            contact_fraction: close.contact_fraction,
            sample_span,
            estimate,
            summary,
            outcome,
        })
    }
}
