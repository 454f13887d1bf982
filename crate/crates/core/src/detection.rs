//! Torque-residual contact detection and link-level localization.

use std::collections::VecDeque;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectionConfig {
    /// Diagonal weights of the detection statistic; `None` means identity.
    #[serde(rename = "W_tau", skip_serializing_if = "Option::is_none")]
    pub w_tau: Option<Vec<f64>>,
    pub alpha_ewma: f64,
    /// N·m
    pub theta_tau: f64,
    #[serde(rename = "N_on")]
    pub n_on: usize,
    #[serde(rename = "N_off")]
    pub n_off: usize,
    /// Localization threshold, N·m.
    pub tau_th: f64,
    /// Cutoff of the low-pass applied to differentiated joint velocities; 0 disables filtering.
    pub qdd_cutoff_hz: f64,
}

impl Default for DetectionConfig {
    fn default() -> Self {
        Self {
            w_tau: None,
            alpha_ewma: 0.2,
            theta_tau: 1.0,
            n_on: 5,
            n_off: 10,
            tau_th: 0.3,
            qdd_cutoff_hz: 20.0,
        }
    }
}

impl DetectionConfig {
    pub fn validate(&self, dof: usize) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(format!("detection: {msg}")));
        if let Some(w) = &self.w_tau {
            if w.len() != dof {
                return fail(format!("W_tau has {} entries, robot has {dof} joints", w.len()));
            }
            if !w.iter().all(|x| *x > 0.0 && x.is_finite()) {
                return fail("W_tau entries must be positive".into());
            }
        }
        if !(self.alpha_ewma > 0.0 && self.alpha_ewma <= 1.0) {
            return fail(format!("alpha_ewma {} outside (0, 1]", self.alpha_ewma));
        }
        if !(self.theta_tau > 0.0) {
            return fail("theta_tau must be positive".into());
        }
        if self.n_on == 0 || self.n_off == 0 {
            return fail("N_on and N_off must be at least 1".into());
        }
        if !(self.tau_th > 0.0) {
            return fail("tau_th must be positive".into());
        }
        if !(self.qdd_cutoff_hz >= 0.0) {
            return fail("qdd_cutoff_hz must be nonnegative".into());
        }
        Ok(())
    }

    fn weight(&self, joint: usize) -> f64 {
        self.w_tau.as_ref().map_or(1.0, |w| w[joint])
    }
}

/// Joint state at one tick together with its torque residual.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualSample {
    pub t: f64,
    pub q: DVector<f64>,
    pub qd: DVector<f64>,
    pub qdd: DVector<f64>,
    pub tau_hat: DVector<f64>,
}

impl ResidualSample {
    /// Sample carrying only what the estimator reads.
    pub fn new(t: f64, q: DVector<f64>, tau_hat: DVector<f64>) -> Self {
        let n = q.len();
        Self {
            t,
            q,
            qd: DVector::zeros(n),
            qdd: DVector::zeros(n),
            tau_hat,
        }
    }
}

/// `τ_meas − τ_model`.
pub fn compute_residual(tau_meas: &DVector<f64>, tau_model: &DVector<f64>) -> Result<DVector<f64>> {
    if tau_meas.len() != tau_model.len() {
        return Err(Error::dim("tau_model", tau_meas.len(), tau_model.len()));
    }
    Ok(tau_meas - tau_model)
}

/// Weighted Euclidean norm of the residual.
pub fn detection_statistic(tau_hat: &DVector<f64>, config: &DetectionConfig) -> f64 {
    tau_hat
        .iter()
        .enumerate()
        .map(|(j, t)| (config.weight(j) * t).powi(2))
        .sum::<f64>()
        .sqrt()
}

pub fn ewma_update(eta: f64, eta_bar_prev: f64, alpha: f64) -> f64 {
    alpha * eta + (1.0 - alpha) * eta_bar_prev
}

/// Smoothed statistic, contact flag and the recent history the hysteresis rule needs.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionState {
    pub eta_bar: f64,
    pub contact: bool,
    history: VecDeque<f64>,
    capacity: usize,
}

impl DetectionState {
    pub fn new(config: &DetectionConfig) -> Self {
        let capacity = config.n_on.max(config.n_off);
        Self {
            eta_bar: 0.0,
            contact: false,
            history: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    pub fn history(&self) -> impl Iterator<Item = f64> + '_ {
        self.history.iter().copied()
    }

    /// Push a new smoothed value and apply the on/off rule. Returns the new flag.
    ///
    /// ON is checked first, so a run of values exactly at the threshold switches on.
    pub fn hysteresis_update(&mut self, eta_bar: f64, config: &DetectionConfig) -> bool {
        if self.history.len() == self.capacity {
            self.history.pop_front();
        }
        self.history.push_back(eta_bar);
        self.eta_bar = eta_bar;

        let recent = |count: usize| {
            (self.history.len() >= count)
                .then(|| self.history.iter().rev().take(count).copied())
        };
        let on = recent(config.n_on)
            .is_some_and(|mut w| w.all(|v| v >= config.theta_tau));
        let off = recent(config.n_off)
            .is_some_and(|mut w| w.all(|v| v <= config.theta_tau));
        if on {
            self.contact = true;
        } else if off {
            self.contact = false;
        }
        self.contact
    }
}

/// Result of link localization with the contiguity diagnostic.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinkLocalization {
    /// 1-based link index.
    pub link: usize,
    /// False when some joint proximal to `link` carries a negligible residual.
    pub contiguous: bool,
}

/// Last joint whose residual is meaningful while the next one is not; `None` if no
/// residual exceeds `tau_th`.
pub fn localize_link(tau_hat: &DVector<f64>, tau_th: f64) -> Option<usize> {
    localize_link_detailed(tau_hat, tau_th).map(|l| l.link)
}

pub fn localize_link_detailed(tau_hat: &DVector<f64>, tau_th: f64) -> Option<LinkLocalization> {
    let n = tau_hat.len();
    if n == 0 {
        return None;
    }
    let meaningful = |j: usize| tau_hat[j].abs() > tau_th;
    let index = if meaningful(n - 1) {
        Some(n - 1)
    } else {
        (0..n - 1).rev().find(|&j| meaningful(j) && !meaningful(j + 1))
    }?;
    Some(LinkLocalization {
        link: index + 1,
        contiguous: (0..index).all(meaningful),
    })
}

/// Joint accelerations from differentiated joint velocities, smoothed by a
/// second-order Butterworth low-pass per joint.
#[derive(Debug, Clone)]
pub struct AccelerationEstimator {
    dt: f64,
    coefficients: Option<[f64; 5]>,
    prev_qd: Option<DVector<f64>>,
    x1: DVector<f64>,
    x2: DVector<f64>,
    y1: DVector<f64>,
    y2: DVector<f64>,
}

impl AccelerationEstimator {
    pub fn new(dof: usize, sample_rate: f64, cutoff_hz: f64) -> Result<Self> {
        if !(sample_rate > 0.0) {
            return Err(Error::Config("sample_rate must be positive".into()));
        }
        let coefficients = if cutoff_hz > 0.0 {
            if cutoff_hz >= 0.5 * sample_rate {
                return Err(Error::Config(format!(
                    "qdd_cutoff_hz {cutoff_hz} must be below the Nyquist rate {}",
                    0.5 * sample_rate
                )));
            }
            let k = (std::f64::consts::PI * cutoff_hz / sample_rate).tan();
            let sqrt2 = std::f64::consts::SQRT_2;
            let norm = 1.0 / (1.0 + sqrt2 * k + k * k);
            let b0 = k * k * norm;
            Some([
                b0,
                2.0 * b0,
                b0,
                2.0 * (k * k - 1.0) * norm,
                (1.0 - sqrt2 * k + k * k) * norm,
            ])
        } else {
            None
        };
        let zeros = DVector::zeros(dof);
        Ok(Self {
            dt: 1.0 / sample_rate,
            coefficients,
            prev_qd: None,
            x1: zeros.clone(),
            x2: zeros.clone(),
            y1: zeros.clone(),
            y2: zeros,
        })
    }

    pub fn update(&mut self, qd: &DVector<f64>) -> DVector<f64> {
        let raw = match &self.prev_qd {
            Some(prev) => (qd - prev) / self.dt,
            None => DVector::zeros(qd.len()),
        };
        self.prev_qd = Some(qd.clone());
        let Some([b0, b1, b2, a1, a2]) = self.coefficients else {
            return raw;
        };
        let y = &raw * b0 + &self.x1 * b1 + &self.x2 * b2 - &self.y1 * a1 - &self.y2 * a2;
        self.x2 = std::mem::replace(&mut self.x1, raw);
        self.y2 = std::mem::replace(&mut self.y1, y.clone());
        y
    }
}

/// One step of the detector: statistic, smoothed statistic, flag and localization.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorOutput {
    pub eta: f64,
    pub eta_bar: f64,
    pub contact: bool,
    /// Flag changed on this sample.
    pub switched: bool,
    pub localization: Option<LinkLocalization>,
}

/// Detection state machine for one robot.
#[derive(Debug, Clone)]
pub struct ContactDetector {
    config: DetectionConfig,
    state: DetectionState,
}

impl ContactDetector {
    pub fn new(config: DetectionConfig) -> Self {
        let state = DetectionState::new(&config);
        Self { config, state }
    }

    pub fn config(&self) -> &DetectionConfig {
        &self.config
    }

    pub fn state(&self) -> &DetectionState {
        &self.state
    }

    pub fn step(&mut self, tau_hat: &DVector<f64>) -> DetectorOutput {
        let eta = detection_statistic(tau_hat, &self.config);
        let eta_bar = ewma_update(eta, self.state.eta_bar, self.config.alpha_ewma);
        let before = self.state.contact;
        let contact = self.state.hysteresis_update(eta_bar, &self.config);
        DetectorOutput {
            eta,
            eta_bar,
            contact,
            switched: contact != before,
            localization: localize_link_detailed(tau_hat, self.config.tau_th),
        }
    }
}
