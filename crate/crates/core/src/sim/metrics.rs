//! Scores a run against its ground truth.

use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};

use super::harness::RunTrace;
use super::pipeline::WindowRecord;
use super::scenario::GroundTruthContact;
use crate::error::Result;
use crate::robot::RobotModel;

/// Detections starting this long after a contact ends still count as that contact's.
pub const ATTRIBUTION_SLACK: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContactMetrics {
    pub index: usize,
    pub link: usize,
    pub s_true: f64,
    pub t_start: f64,
    pub t_end: f64,
    /// ticks from onset to the first in-contact tick
    pub detection_latency_ticks: Option<u64>,
    /// ticks from the end of the push to the flag clearing
    pub clear_latency_ticks: Option<u64>,
    /// estimates whose samples all fall inside the push
    pub estimates: usize,
    pub link_correct: usize,
    pub force_error_mean: Option<f64>,
    pub force_error_max: Option<f64>,
    pub location_error_mean: Option<f64>,
    pub location_error_max: Option<f64>,
    /// mean |Jᵀ(ŝ) F̂ − τ̂| over the samples behind those estimates, N·m
    pub torque_mae: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub ticks: usize,
    pub duration: f64,
    pub ground_truth_contacts: usize,
    pub episodes_detected: usize,
    /// detection episodes that start outside every push (plus slack)
    pub false_positive_episodes: usize,
    pub bumps: usize,
    pub goal_error: Option<f64>,
    pub max_tracking_error: f64,
    pub torque_mae: Option<f64>,
    pub aborted: Option<String>,
    pub contacts: Vec<ContactMetrics>,
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

fn max(values: &[f64]) -> Option<f64> {
    values.iter().copied().reduce(f64::max)
}

fn first_tick_from(trace: &RunTrace, t: f64, want: bool) -> Option<u64> {
    let start = (t * trace.sample_rate - 1e-9).ceil().max(0.0) as usize;
    trace
        .ticks
        .iter()
        .skip(start)
        .position(|r| r.contact == want)
        .map(|p| p as u64)
}

fn window_inside(w: &WindowRecord, c: &GroundTruthContact) -> bool {
    matches!(w.sample_span, Some([a, b]) if a >= c.t_start && b < c.t_end)
}

/// Summed absolute torque misfit and the number of entries behind it.
fn torque_misfit(model: &RobotModel, trace: &RunTrace, w: &WindowRecord) -> Result<(f64, usize)> {
    let (Some(e), Some([a, b])) = (&w.estimate, w.sample_span) else {
        return Ok((0.0, 0));
    };
    let mut sum = 0.0;
    let mut count = 0;
    for r in trace.ticks.iter().filter(|r| r.contact && r.t >= a && r.t <= b) {
        let predicted: DVector<f64> = model.point_jacobian(&r.q, e.link, e.s_hat)?.transpose() * e.force;
        sum += (predicted - &r.tau_hat).abs().sum();
        count += r.tau_hat.len();
    }
    Ok((sum, count))
}

pub fn metrics(trace: &RunTrace, model: &RobotModel) -> Result<MetricsReport> {
    let mut total = (0.0, 0usize);
    let mut contacts = Vec::with_capacity(trace.contacts.len());
    for (index, c) in trace.contacts.iter().enumerate() {
        let mut force_errors = Vec::new();
        let mut location_errors = Vec::new();
        let mut link_correct = 0;
        let mut misfit = (0.0, 0usize);
        let mut estimates = 0;
        for w in trace.windows.iter().filter(|w| window_inside(w, c)) {
            let (Some(e), Some([a, b])) = (&w.estimate, w.sample_span) else {
                continue;
            };
            estimates += 1;
            let truth: Vec<Vector3<f64>> = trace
                .ticks
                .iter()
                .filter(|r| r.contact && r.t >= a && r.t <= b)
                .map(|r| c.force_at(r.t))
                .collect();
            let f_true = truth.iter().sum::<Vector3<f64>>() / truth.len().max(1) as f64;
            force_errors.push((e.force - f_true).norm());
            if e.link == c.link {
                link_correct += 1;
                location_errors.push((e.s_hat - c.s).abs());
            }
            let (sum, count) = torque_misfit(model, trace, w)?;
            misfit.0 += sum;
            misfit.1 += count;
        }
        total.0 += misfit.0;
        total.1 += misfit.1;
        let horizon = trace.ticks.len() as f64 / trace.sample_rate;
        contacts.push(ContactMetrics {
            index,
            link: c.link,
            s_true: c.s,
            t_start: c.t_start,
            t_end: c.t_end,
            detection_latency_ticks: first_tick_from(trace, c.t_start, true)
                .filter(|&k| (c.t_start + k as f64 / trace.sample_rate) < c.t_end + ATTRIBUTION_SLACK),
            clear_latency_ticks: (c.t_end < horizon)
                .then(|| first_tick_from(trace, c.t_end, false))
                .flatten(),
            estimates,
            link_correct,
            force_error_mean: mean(&force_errors),
            force_error_max: max(&force_errors),
            location_error_mean: mean(&location_errors),
            location_error_max: max(&location_errors),
            torque_mae: (misfit.1 > 0).then(|| misfit.0 / misfit.1 as f64),
        });
    }

    let rising: Vec<f64> = trace
        .ticks
        .windows(2)
        .filter(|w| w[1].contact && !w[0].contact)
        .map(|w| w[1].t)
        .chain(trace.ticks.first().filter(|r| r.contact).map(|r| r.t))
        .collect();
    let false_positive_episodes = rising
        .iter()
        .filter(|&&t| {
            !trace
                .contacts
                .iter()
                .any(|c| t >= c.t_start && t <= c.t_end + ATTRIBUTION_SLACK)
        })
        .count();

    let goal = Vector3::from(trace.goal);
    Ok(MetricsReport {
        ticks: trace.ticks.len(),
        duration: trace.ticks.len() as f64 / trace.sample_rate,
        ground_truth_contacts: trace.contacts.len(),
        episodes_detected: trace.episodes,
        false_positive_episodes,
        bumps: trace.bumps.len(),
        goal_error: trace.ticks.last().map(|r| (r.tip - goal).norm()),
        max_tracking_error: trace
            .ticks
            .iter()
            .map(|r| (r.tip - r.target).norm())
            .fold(0.0, f64::max),
        torque_mae: (total.1 > 0).then(|| total.0 / total.1 as f64),
        aborted: trace.aborted.clone(),
        contacts,
    })
}
