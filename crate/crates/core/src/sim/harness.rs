use nalgebra::{DVector, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::pipeline::{Measurement, Pipeline, WindowRecord};
use super::scenario::{GroundTruthContact, Scenario};
use crate::error::{Error, Result};
use crate::planner::{Bump, PathSampleRecord};
use crate::robot::{FrameSet, RobotModel};

/// Tip error that counts as losing the path, m.
pub const TRACKING_ERROR_LIMIT: f64 = 0.05;
/// How long the tip may stay beyond [`TRACKING_ERROR_LIMIT`] before the run aborts, s.
pub const TRACKING_ERROR_TIME: f64 = 0.5;
/// Segments used when the deformed path is resampled for export.
pub const DEFORMED_PATH_SEGMENTS: usize = 200;

/// `τ_model + Σ J_cᵀ F + ν` with `ν ~ N(0, σ²)` per joint.
///
/// `frames` must belong to the configuration `tau_model` was computed at. No
/// random numbers are drawn when `sigma` is zero.
pub fn simulate_measured_torque(
    frames: &FrameSet,
    tau_model: &DVector<f64>,
    contacts: &[(usize, f64, Vector3<f64>)],
    sigma: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let mut tau_ext = DVector::zeros(tau_model.len());
    for &(link, s, force) in contacts {
        tau_ext += frames.point_jacobian(link, s)?.transpose() * force;
    }
    let mut tau = tau_model + &tau_ext;
    if sigma > 0.0 {
        let normal = Normal::new(0.0, sigma).map_err(|e| Error::Argument(e.to_string()))?;
        for v in tau.iter_mut() {
            *v += normal.sample(rng);
        }
    }
    Ok((tau, tau_ext))
}

/// Ground truth the measurement was built from; never handed to the pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct Truth {
    pub qdd: DVector<f64>,
    pub tau_ext: DVector<f64>,
}

/// The simulated robot: a kinematically driven arm whose joint torques carry
/// the dynamics of the true model plus the applied contact forces.
#[derive(Debug, Clone)]
pub struct Plant {
    model: RobotModel,
    contacts: Vec<GroundTruthContact>,
    sigma: f64,
    rng: ChaCha8Rng,
    dt: f64,
    tick: u64,
    q: DVector<f64>,
    q_prev: DVector<f64>,
    qd_prev: DVector<f64>,
}

impl Plant {
    pub fn new(scenario: &Scenario) -> Result<Self> {
        let n = scenario.dof();
        Ok(Self {
            model: scenario.model.with_mass_scale(1.0 + scenario.noise.mass_scale_error)?,
            contacts: scenario.contacts.clone(),
            sigma: scenario.noise.sigma,
            rng: ChaCha8Rng::seed_from_u64(scenario.seed),
            dt: scenario.dt(),
            tick: 0,
            q: scenario.initial_q.clone(),
            q_prev: scenario.initial_q.clone(),
            qd_prev: DVector::zeros(n),
        })
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn time(&self) -> f64 {
        self.tick as f64 * self.dt
    }

    pub fn contacts(&self) -> &[GroundTruthContact] {
        &self.contacts
    }

    pub fn add_contact(&mut self, contact: GroundTruthContact) {
        self.contacts.push(contact);
    }

    pub fn measure(&mut self) -> Result<(Measurement, Truth)> {
        let t = self.time();
        let qd = (&self.q - &self.q_prev) / self.dt;
        let qdd = (&qd - &self.qd_prev) / self.dt;
        let frames = self.model.forward_kinematics(&self.q)?;
        let tau_free = self.model.inverse_dynamics_with_frames(&frames, &qd, &qdd)?;
        let active: Vec<_> = self
            .contacts
            .iter()
            .filter(|c| c.is_active(t))
            .map(|c| (c.link, c.s, c.force_at(t)))
            .collect();
        let (tau_meas, tau_ext) =
            simulate_measured_torque(&frames, &tau_free, &active, self.sigma, &mut self.rng)?;
        Ok((
            Measurement {
                tick: self.tick,
                t,
                q: self.q.clone(),
                qd,
                tau_meas,
            },
            Truth { qdd, tau_ext },
        ))
    }

    /// Move to the commanded configuration for the next tick.
    pub fn advance(&mut self, measured: &Measurement, q_next: DVector<f64>) {
        self.q_prev = std::mem::replace(&mut self.q, q_next);
        self.qd_prev = measured.qd.clone();
        self.tick += 1;
    }
}

/// Everything recorded for one tick.
#[derive(Debug, Clone, PartialEq)]
pub struct TickRecord {
    pub t: f64,
    pub s: f64,
    pub q: DVector<f64>,
    pub qd: DVector<f64>,
    /// the acceleration the pipeline used
    pub qdd: DVector<f64>,
    pub qdd_true: DVector<f64>,
    pub tau_meas: DVector<f64>,
    pub tau_model: DVector<f64>,
    pub tau_hat: DVector<f64>,
    /// injected contact torque (ground truth)
    pub tau_ext: DVector<f64>,
    pub eta: f64,
    pub eta_bar: f64,
    pub contact: bool,
    pub link: Option<usize>,
    pub tip: Vector3<f64>,
    pub target: Vector3<f64>,
}

/// A full run: per-tick records, per-window records and the final deformation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTrace {
    pub dof: usize,
    pub sample_rate: f64,
    #[serde(skip)]
    pub ticks: Vec<TickRecord>,
    pub windows: Vec<WindowRecord>,
    pub contacts: Vec<GroundTruthContact>,
    pub episodes: usize,
    pub bumps: Vec<Bump>,
    pub reference_path: Vec<PathSampleRecord>,
    pub deformed_path: Vec<PathSampleRecord>,
    pub goal: [f64; 3],
    pub aborted: Option<String>,
}

/// Output of one simulator tick.
#[derive(Debug, Clone)]
pub struct TickOutput {
    pub record: TickRecord,
    pub window: Option<WindowRecord>,
    pub switched: bool,
    /// set once the tip has been off the path for too long
    pub abort: Option<String>,
}

/// Plant plus pipeline, stepped one tick at a time. Batch runs and the live
/// service both drive this type.
#[derive(Debug, Clone)]
pub struct Simulator {
    plant: Plant,
    pipeline: Pipeline,
    sample_rate: f64,
    off_path_ticks: usize,
    off_path_limit: usize,
}

impl Simulator {
    pub fn new(scenario: &Scenario) -> Result<Self> {
        scenario.validate()?;
        let pipeline = Pipeline::new(
            scenario.model.clone(),
            scenario.path.clone(),
            scenario.pipeline_config(),
        )?;
        Ok(Self {
            plant: Plant::new(scenario)?,
            pipeline,
            sample_rate: scenario.sample_rate,
            off_path_ticks: 0,
            off_path_limit: (TRACKING_ERROR_TIME * scenario.sample_rate).round() as usize,
        })
    }

    pub fn plant(&self) -> &Plant {
        &self.plant
    }

    pub fn plant_mut(&mut self) -> &mut Plant {
        &mut self.plant
    }

    pub fn pipeline(&self) -> &Pipeline {
        &self.pipeline
    }

    pub fn pipeline_mut(&mut self) -> &mut Pipeline {
        &mut self.pipeline
    }

    pub fn time(&self) -> f64 {
        self.plant.time()
    }

    pub fn step(&mut self) -> Result<TickOutput> {
        let (measurement, truth) = self.plant.measure()?;
        let out = self.pipeline.process(&measurement)?;
        let error = (out.target - out.tip).norm();
        if error > TRACKING_ERROR_LIMIT {
            self.off_path_ticks += 1;
        } else {
            self.off_path_ticks = 0;
        }
        let abort = (self.off_path_ticks > self.off_path_limit).then(|| {
            format!(
                "tip stayed more than {TRACKING_ERROR_LIMIT} m off the path for {TRACKING_ERROR_TIME} s (error {error:.4} m)"
            )
        });
        let record = TickRecord {
            t: measurement.t,
            s: out.s,
            q: measurement.q.clone(),
            qd: measurement.qd.clone(),
            qdd: out.qdd,
            qdd_true: truth.qdd,
            tau_meas: measurement.tau_meas.clone(),
            tau_model: out.tau_model,
            tau_hat: out.tau_hat,
            tau_ext: truth.tau_ext,
            eta: out.detector.eta,
            eta_bar: out.detector.eta_bar,
            contact: out.detector.contact,
            link: out.detector.localization.map(|l| l.link),
            tip: out.tip,
            target: out.target,
        };
        self.plant.advance(&measurement, out.q_next);
        Ok(TickOutput {
            record,
            window: out.window,
            switched: out.detector.switched,
            abort,
        })
    }

    /// Assemble a trace from collected records and the current planner state.
    pub fn trace(&self, ticks: Vec<TickRecord>, windows: Vec<WindowRecord>, aborted: Option<String>) -> RunTrace {
        let path = self.pipeline.path();
        let deformation = self.pipeline.deformation();
        let goal = path.position(1.0);
        RunTrace {
            dof: self.pipeline.model().dof(),
            sample_rate: self.sample_rate,
            ticks,
            windows,
            contacts: self.plant.contacts().to_vec(),
            episodes: self.pipeline.episodes(),
            bumps: deformation.bumps().to_vec(),
            reference_path: path.to_records(),
            deformed_path: deformation.resample(path, DEFORMED_PATH_SEGMENTS),
            goal: [goal.x, goal.y, goal.z],
            aborted,
        }
    }
}

/// Run a scenario to completion.
pub fn run(scenario: &Scenario) -> Result<RunTrace> {
    let mut sim = Simulator::new(scenario)?;
    let n = scenario.tick_count();
    let mut ticks = Vec::with_capacity(n);
    let mut windows = Vec::new();
    for _ in 0..n {
        let out = sim.step()?;
        let t = out.record.t;
        ticks.push(out.record);
        windows.extend(out.window);
        if let Some(reason) = out.abort {
            log::warn!("aborting at t = {t:.3} s: {reason}");
            let trace = sim.trace(ticks, windows, Some(reason.clone()));
            return Err(Error::Aborted {
                t,
                reason,
                trace: Box::new(trace),
            });
        }
    }
    Ok(sim.trace(ticks, windows, None))
}
