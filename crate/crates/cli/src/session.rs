//! The live simulation as the service sees it: a [`Simulator`] stepped one tick
//! at a time, commands applied between ticks, telemetry produced per tick.
//!
//! Nothing here knows about sockets or wall-clock time, so the same session can
//! be driven by a test, a batch replay or the real-time loop.

use contactplan::planner::{CommitOutcome, DeformationState, PathSampleRecord};
use contactplan::sim::{
    metrics, ForceProfile, GroundTruthContact, PipelineConfig, Scenario, Simulator, TickRecord,
    WindowRecord,
};
use contactplan::{Error, Result};
use nalgebra::Vector3;
use serde_json::Value;

use crate::protocol::{CommandMessage, TelemetryMessage, TickTelemetry, MAX_TICK_RATE};

/// Segments of the deformed path sent in `path_update` and `hello`.
pub const WIRE_PATH_SEGMENTS: usize = 100;

/// A command as queued for the simulation loop.
#[derive(Debug, Clone, PartialEq)]
pub struct Incoming {
    pub client: u64,
    pub id: Option<u64>,
    pub command: CommandMessage,
}

/// A command that changed the simulation, with the tick it took effect before.
#[derive(Debug, Clone, PartialEq)]
pub struct RecordedCommand {
    pub tick: u64,
    pub command: CommandMessage,
}

fn xyz(v: &Vector3<f64>) -> [f64; 3] {
    [v.x, v.y, v.z]
}

fn positions(records: &[PathSampleRecord]) -> Vec<[f64; 3]> {
    records.iter().map(|r| r.xyz).collect()
}

/// Recursive JSON merge patch: objects merge key by key, anything else replaces.
fn merge(target: &mut Value, patch: &Value) {
    match (target, patch) {
        (Value::Object(t), Value::Object(p)) => {
            for (k, v) in p {
                match t.get_mut(k) {
                    Some(slot) if v.is_object() => merge(slot, v),
                    _ => {
                        t.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (t, p) => *t = p.clone(),
    }
}

/// Apply a `set_config` patch to a pipeline configuration.
pub fn patch_config(config: &PipelineConfig, patch: &Value) -> Result<PipelineConfig> {
    let Value::Object(blocks) = patch else {
        return Err(Error::Config("patch must be a JSON object".into()));
    };
    let mut next = config.clone();
    for (key, value) in blocks {
        let bad = |e: serde_json::Error| Error::Config(format!("{key}: {e}"));
        macro_rules! patch_block {
            ($field:ident) => {{
                let mut doc = serde_json::to_value(&next.$field).map_err(bad)?;
                merge(&mut doc, value);
                next.$field = serde_json::from_value(doc).map_err(bad)?;
            }};
        }
        match key.as_str() {
            "detection" => patch_block!(detection),
            "estimation" => patch_block!(estimation),
            "planner" => patch_block!(planner),
            "tracking" => patch_block!(tracking),
            other => {
                return Err(Error::Config(format!(
                    "unknown block `{other}` (expected detection, estimation, planner or tracking)"
                )))
            }
        }
    }
    Ok(next)
}

pub struct Session {
    scenario: Scenario,
    sim: Simulator,
    decimation: u64,
    paused: bool,
    finished: bool,
    aborted: Option<String>,
    ticks: Vec<TickRecord>,
    windows: Vec<WindowRecord>,
    log: Vec<RecordedCommand>,
}

impl Session {
    pub fn new(scenario: Scenario) -> Result<Self> {
        let sim = Simulator::new(&scenario)?;
        let decimation = (scenario.sample_rate / MAX_TICK_RATE).ceil().max(1.0) as u64;
        Ok(Self {
            scenario,
            sim,
            decimation,
            paused: false,
            finished: false,
            aborted: None,
            ticks: Vec::new(),
            windows: Vec::new(),
            log: Vec::new(),
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn simulator(&self) -> &Simulator {
        &self.sim
    }

    /// Index of the next tick to simulate.
    pub fn tick_index(&self) -> u64 {
        self.sim.plant().tick()
    }

    pub fn time(&self) -> f64 {
        self.sim.time()
    }

    pub fn is_paused(&self) -> bool {
        self.paused
    }

    pub fn is_finished(&self) -> bool {
        self.finished
    }

    /// Every tick simulated since the last reset.
    pub fn ticks(&self) -> &[TickRecord] {
        &self.ticks
    }

    pub fn windows(&self) -> &[WindowRecord] {
        &self.windows
    }

    /// Pushes and configuration changes since the last reset.
    pub fn command_log(&self) -> &[RecordedCommand] {
        &self.log
    }

    /// Ticks between two `tick` messages.
    pub fn tick_decimation(&self) -> u64 {
        self.decimation
    }

    fn deformed_path(&self) -> Vec<[f64; 3]> {
        let pipeline = self.sim.pipeline();
        positions(&pipeline.deformation().resample(pipeline.path(), WIRE_PATH_SEGMENTS))
    }

    pub fn hello(&self, last_seq: Option<u64>) -> TelemetryMessage {
        let pipeline = self.sim.pipeline();
        TelemetryMessage::Hello {
            dof: self.scenario.dof(),
            sample_rate: self.scenario.sample_rate,
            tick_decimation: self.decimation,
            force_limit: self.scenario.force_limit,
            threshold: pipeline.config().detection.theta_tau,
            paused: self.paused,
            finished: self.finished,
            last_seq,
            reference_path: positions(&DeformationState::new().resample(pipeline.path(), WIRE_PATH_SEGMENTS)),
            deformed_path: self.deformed_path(),
        }
    }

    /// Apply one command. The reply (`ack` or `rejected`) comes first.
    pub fn apply(&mut self, incoming: Incoming) -> Vec<TelemetryMessage> {
        let Incoming { client, id, command } = incoming;
        let tick = self.tick_index();
        let name = command.name().to_string();
        let mut extra = Vec::new();
        let outcome: Result<()> = match &command {
            CommandMessage::ApplyPush { link, s, force, duration } => {
                self.push_contact(*link, *s, *force, *duration).map(|()| {
                    self.log.push(RecordedCommand { tick, command: command.clone() });
                })
            }
            CommandMessage::Pause => {
                self.paused = true;
                Ok(())
            }
            CommandMessage::Resume => {
                self.paused = false;
                Ok(())
            }
            CommandMessage::Reset => self.reset().map(|()| {
                extra.push(TelemetryMessage::PathUpdate {
                    tick: 0,
                    t: 0.0,
                    deformed_path: self.deformed_path(),
                });
            }),
            CommandMessage::SetConfig { patch } => {
                patch_config(self.sim.pipeline().config(), patch)
                    .and_then(|config| self.sim.pipeline_mut().reconfigure(config))
                    .map(|()| self.log.push(RecordedCommand { tick, command: command.clone() }))
            }
        };
        let reply = match outcome {
            Ok(()) => TelemetryMessage::Ack {
                client,
                id,
                command: name,
                tick: self.tick_index(),
            },
            Err(e) => TelemetryMessage::Rejected {
                client,
                id,
                command: name,
                reason: e.to_string(),
            },
        };
        std::iter::once(reply).chain(extra).collect()
    }

    fn push_contact(&mut self, link: usize, s: f64, force: [f64; 3], duration: f64) -> Result<()> {
        if self.finished {
            return Err(Error::Validation("the run has finished; reset first".into()));
        }
        if !(duration > 0.0 && duration.is_finite()) {
            return Err(Error::Validation(format!("duration must be positive, got {duration}")));
        }
        // same expression the plant uses for its clock, so the start tick is exact
        let t_start = self.tick_index() as f64 * self.scenario.dt();
        let contact = GroundTruthContact {
            link,
            s,
            force,
            profile: ForceProfile::Constant,
            ramp: 0.0,
            t_start,
            t_end: t_start + duration,
        };
        self.scenario.check_contact(&contact, self.scenario.duration)?;
        self.sim.plant_mut().add_contact(contact);
        Ok(())
    }

    /// Back to the scenario's initial state, original configuration included.
    pub fn reset(&mut self) -> Result<()> {
        self.sim = Simulator::new(&self.scenario)?;
        self.finished = false;
        self.aborted = None;
        self.ticks.clear();
        self.windows.clear();
        self.log.clear();
        Ok(())
    }

    /// Simulate one tick unless paused or finished.
    pub fn step(&mut self) -> Result<Vec<TelemetryMessage>> {
        if self.paused || self.finished {
            return Ok(Vec::new());
        }
        let tick = self.tick_index();
        let out = self.sim.step()?;
        let r = &out.record;
        let mut messages = Vec::new();
        if tick.is_multiple_of(self.decimation) {
            let frames = self.scenario.model.forward_kinematics(&r.q)?;
            let dof = self.scenario.dof();
            let mut joints = vec![xyz(&frames.contact_point(1, 0.0)?)];
            for link in 1..=dof {
                joints.push(xyz(&frames.contact_point(link, 1.0)?));
            }
            messages.push(TelemetryMessage::Tick(TickTelemetry {
                tick,
                t: r.t,
                s: r.s,
                q: r.q.iter().copied().collect(),
                joints,
                tip: xyz(&r.tip),
                target: xyz(&r.target),
                eta_bar: r.eta_bar,
                contact: r.contact,
            }));
        }
        if out.switched {
            messages.push(TelemetryMessage::Detection {
                tick,
                t: r.t,
                contact: r.contact,
                eta_bar: r.eta_bar,
                threshold: self.sim.pipeline().config().detection.theta_tau,
                link: r.link,
            });
        }
        if let Some(w) = &out.window {
            if let Some(estimate) = &w.estimate {
                messages.push(TelemetryMessage::Estimate {
                    tick,
                    t: r.t,
                    window: w.index,
                    estimate: estimate.clone(),
                });
            }
            if let Some(CommitOutcome::Committed { bump, .. }) = &w.outcome {
                messages.push(TelemetryMessage::Bump {
                    tick,
                    t: r.t,
                    bump: bump.clone(),
                });
                messages.push(TelemetryMessage::PathUpdate {
                    tick,
                    t: r.t,
                    deformed_path: self.deformed_path(),
                });
            }
        }
        let t = r.t;
        self.ticks.push(out.record);
        self.windows.extend(out.window);
        if let Some(reason) = out.abort {
            log::warn!("run aborted at t = {t:.3} s: {reason}");
            self.aborted = Some(reason);
            self.finished = true;
        } else if self.tick_index() as usize >= self.scenario.tick_count() {
            self.finished = true;
        }
        let per_second = (self.scenario.sample_rate.round() as u64).max(1);
        let periodic = self.tick_index().is_multiple_of(per_second);
        if self.finished || periodic {
            messages.push(self.metrics_message(tick, t)?);
        }
        Ok(messages)
    }

    fn metrics_message(&self, tick: u64, t: f64) -> Result<TelemetryMessage> {
        let report = if self.finished {
            let trace = self
                .sim
                .trace(self.ticks.clone(), self.windows.clone(), self.aborted.clone());
            Some(metrics(&trace, &self.scenario.model)?)
        } else {
            None
        };
        Ok(TelemetryMessage::Metrics {
            tick,
            t,
            episodes: self.sim.pipeline().episodes(),
            windows: self.windows.len(),
            bumps: self.sim.pipeline().deformation().bumps().len(),
            finished: self.finished,
            aborted: self.aborted.clone(),
            report,
        })
    }

    /// The batch scenario equivalent to this session: the original scenario with
    /// every accepted push as a ground-truth contact. `None` once the
    /// configuration has been changed live, which a scenario cannot express.
    pub fn replay_scenario(&self) -> Option<Scenario> {
        let mut scenario = self.scenario.clone();
        for entry in &self.log {
            match &entry.command {
                CommandMessage::ApplyPush { .. } => {}
                _ => return None,
            }
        }
        scenario.contacts = self.sim.plant().contacts().to_vec();
        Some(scenario)
    }
}
