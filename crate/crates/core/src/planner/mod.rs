//! Windowed force averaging and bump-shaped deformation of the reference path.
//!
//! Each decision window that saw enough contact commits one bump carrying the
//! *increment* of the target deviation over the previous window, so a constant
//! push keeps a single bump instead of stacking copies of it.

mod path;

pub use path::{PathDocument, PathSample, PathSampleRecord, ReferencePath};

use nalgebra::{UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    /// metres per newton
    pub alpha_gain: f64,
    #[serde(rename = "F_sat")]
    pub f_sat: f64,
    /// horizon per newton, in units of the path parameter
    pub beta: f64,
    pub epsilon: f64,
    #[serde(rename = "window_N_d")]
    pub window_n_d: usize,
    /// m/s along the deformed path
    pub tip_speed: f64,
    pub min_contact_fraction: f64,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            alpha_gain: 0.005,
            f_sat: 50.0,
            beta: 0.01,
            epsilon: 0.005,
            window_n_d: 100,
            tip_speed: 0.05,
            min_contact_fraction: 0.5,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("alpha_gain", self.alpha_gain),
            ("F_sat", self.f_sat),
            ("beta", self.beta),
            ("tip_speed", self.tip_speed),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("planner.{name} must be positive, got {v}")));
            }
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!(
                "planner.epsilon must be non-negative, got {}",
                self.epsilon
            )));
        }
        if self.window_n_d == 0 {
            return Err(Error::Config("planner.window_N_d must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.min_contact_fraction) {
            return Err(Error::Config(format!(
                "planner.min_contact_fraction must lie in [0, 1], got {}",
                self.min_contact_fraction
            )));
        }
        Ok(())
    }
}

/// Below this mean force (N) a window has no direction.
pub const MIN_DIRECTION_FORCE: f64 = 1e-9;

/// Mean force of a window and its direction (`None` for a vanishing mean).
pub fn window_average(forces: &[Vector3<f64>]) -> Result<(Vector3<f64>, Option<Vector3<f64>>)> {
    if forces.is_empty() {
        return Err(Error::Argument("cannot average an empty window".into()));
    }
    let mean = forces.iter().sum::<Vector3<f64>>() / forces.len() as f64;
    let norm = mean.norm();
    Ok((mean, (norm >= MIN_DIRECTION_FORCE).then(|| mean / norm)))
}

/// Saturated, scaled deviation along the mean force direction.
pub fn target_deviation(f_bar: &Vector3<f64>, cfg: &PlannerConfig) -> Vector3<f64> {
    let norm = f_bar.norm();
    if norm == 0.0 {
        return Vector3::zeros();
    }
    f_bar * (cfg.alpha_gain * norm.min(cfg.f_sat) / norm)
}

/// Change of the deviation since the last window; increments within the deadband are dropped.
pub fn incremental_update(
    delta: &Vector3<f64>,
    delta_prev: &Vector3<f64>,
    epsilon: f64,
) -> Vector3<f64> {
    let inc = delta - delta_prev;
    if inc.norm() <= epsilon {
        Vector3::zeros()
    } else {
        inc
    }
}

/// Horizon proportional to the force magnitude, truncated at the end of the path.
pub fn effective_horizon(f_bar: &Vector3<f64>, s_next: f64, beta: f64) -> f64 {
    (beta * f_bar.norm()).min(1.0 - s_next).max(0.0)
}

/// `16 ξ² (1 − ξ)²`: zero value and slope at both ends, unit peak at ½.
pub fn bump(xi: f64) -> f64 {
    if xi <= 0.0 || xi >= 1.0 {
        return 0.0;
    }
    let u = xi * (1.0 - xi);
    16.0 * u * u
}

pub fn bump_derivative(xi: f64) -> f64 {
    if xi <= 0.0 || xi >= 1.0 {
        return 0.0;
    }
    32.0 * xi * (1.0 - xi) * (1.0 - 2.0 * xi)
}

pub fn xi_of_s(s: f64, s_start: f64, horizon: f64) -> f64 {
    if horizon <= 0.0 {
        return 0.0;
    }
    ((s - s_start) / horizon).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSummary {
    pub index: usize,
    pub f_bar: Vector3<f64>,
    pub f_hat: Option<Vector3<f64>>,
    /// path parameter at the window boundary, where a bump would start
    pub s_next: f64,
    pub contact_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub window: usize,
    pub start: f64,
    pub horizon: f64,
    pub increment: Vector3<f64>,
}

impl Bump {
    pub fn offset(&self, s: f64) -> Vector3<f64> {
        if s <= self.start {
            return Vector3::zeros();
        }
        self.increment * bump(xi_of_s(s, self.start, self.horizon))
    }

    pub fn offset_derivative(&self, s: f64) -> Vector3<f64> {
        if s <= self.start || s >= self.start + self.horizon {
            return Vector3::zeros();
        }
        self.increment * (bump_derivative(xi_of_s(s, self.start, self.horizon)) / self.horizon)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum CommitOutcome {
    /// too little contact in the window; nothing changes
    Skipped { contact_fraction: f64 },
    /// increment fell inside the deadband
    Deadband { delta: Vector3<f64> },
    /// non-zero increment but no path left to deform
    NoHorizon { delta: Vector3<f64> },
    Committed { delta: Vector3<f64>, bump: Bump },
}

/// Committed bumps plus the deviation the last contributing window asked for.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DeformationState {
    bumps: Vec<Bump>,
    delta_prev: Vector3<f64>,
}

impl DeformationState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn bumps(&self) -> &[Bump] {
        &self.bumps
    }

    pub fn delta_prev(&self) -> Vector3<f64> {
        self.delta_prev
    }

    pub fn commit_window(&mut self, w: &WindowSummary, cfg: &PlannerConfig) -> CommitOutcome {
        if w.contact_fraction < cfg.min_contact_fraction {
            return CommitOutcome::Skipped {
                contact_fraction: w.contact_fraction,
            };
        }
        let delta = target_deviation(&w.f_bar, cfg);
        let inc = incremental_update(&delta, &self.delta_prev, cfg.epsilon);
        self.delta_prev = delta;
        if inc == Vector3::zeros() {
            return CommitOutcome::Deadband { delta };
        }
        let horizon = effective_horizon(&w.f_bar, w.s_next, cfg.beta);
        if horizon <= 0.0 {
            log::debug!("window {}: increment dropped, no path left after s = {}", w.index, w.s_next);
            return CommitOutcome::NoHorizon { delta };
        }
        let bump = Bump {
            window: w.index,
            start: w.s_next,
            horizon,
            increment: inc,
        };
        self.bumps.push(bump.clone());
        CommitOutcome::Committed { delta, bump }
    }

    /// Contact ended: the next push is measured from an undeformed baseline.
    pub fn end_episode(&mut self) {
        self.delta_prev = Vector3::zeros();
    }

    pub fn deformation(&self, s: f64) -> Vector3<f64> {
        self.bumps.iter().map(|b| b.offset(s)).sum()
    }

    pub fn deformation_derivative(&self, s: f64) -> Vector3<f64> {
        self.bumps.iter().map(|b| b.offset_derivative(s)).sum()
    }

    pub fn evaluate(&self, path: &ReferencePath, s: f64) -> (Vector3<f64>, UnitQuaternion<f64>) {
        (path.position(s) + self.deformation(s), path.orientation(s))
    }

    pub fn tangent(&self, path: &ReferencePath, s: f64) -> Vector3<f64> {
        path.tangent(s) + self.deformation_derivative(s)
    }

    /// Arc length of the deformed path, summed over `n` even steps in `s`.
    pub fn length(&self, path: &ReferencePath, n: usize) -> f64 {
        let n = n.max(1);
        let mut prev = self.evaluate(path, 0.0).0;
        (1..=n)
            .map(|i| {
                let p = self.evaluate(path, i as f64 / n as f64).0;
                let d = (p - prev).norm();
                prev = p;
                d
            })
            .sum()
    }

    /// Deformed path resampled at `n + 1` evenly spaced parameters.
    pub fn resample(&self, path: &ReferencePath, n: usize) -> Vec<PathSampleRecord> {
        let n = n.max(1);
        (0..=n)
            .map(|i| {
                let s = if i == n { 1.0 } else { i as f64 / n as f64 };
                let (p, q) = self.evaluate(path, s);
                PathSampleRecord::from(&PathSample {
                    s,
                    position: p,
                    orientation: q,
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn window(index: usize, f: Vector3<f64>, s_next: f64) -> WindowSummary {
        let (f_bar, f_hat) = window_average(&[f]).unwrap();
        WindowSummary {
            index,
            f_bar,
            f_hat,
            s_next,
            contact_fraction: 1.0,
        }
    }

    fn straight() -> ReferencePath {
        ReferencePath::line(
            Vector3::new(0.45, -0.2, 0.45),
            Vector3::new(0.45, 0.2, 0.45),
            UnitQuaternion::identity(),
            1,
        )
        .unwrap()
    }

    #[test]
    fn average_and_direction() {
        let (m, d) = window_average(&[Vector3::new(2.0, 0.0, 0.0), Vector3::new(4.0, 0.0, 0.0)]).unwrap();
        assert_eq!(m, Vector3::new(3.0, 0.0, 0.0));
        assert_eq!(d, Some(Vector3::x()));
        let (_, d) = window_average(&[Vector3::x(), -Vector3::x()]).unwrap();
        assert_eq!(d, None);
        assert!(window_average(&[]).is_err());
    }

    #[test]
    fn deviation_saturates() {
        let cfg = PlannerConfig::default();
        let d = target_deviation(&Vector3::new(10.0, 0.0, 0.0), &cfg);
        assert!((d.x - 0.05).abs() < 1e-15);
        let d = target_deviation(&Vector3::new(0.0, 200.0, 0.0), &cfg);
        assert!((d.y - 0.25).abs() < 1e-15);
        assert_eq!(target_deviation(&Vector3::zeros(), &cfg), Vector3::zeros());
    }

    #[test]
    fn deadband() {
        let z = Vector3::zeros();
        assert_eq!(incremental_update(&Vector3::new(0.004, 0.0, 0.0), &z, 0.005), z);
        assert_eq!(incremental_update(&Vector3::new(0.005, 0.0, 0.0), &z, 0.005), z);
        let d = Vector3::new(0.006, 0.0, 0.0);
        assert_eq!(incremental_update(&d, &z, 0.005), d);
    }

    #[test]
    fn horizon_truncates() {
        let f = Vector3::new(30.0, 0.0, 0.0);
        assert!((effective_horizon(&f, 0.2, 0.01) - 0.3).abs() < 1e-15);
        assert!((effective_horizon(&f, 0.9, 0.01) - 0.1).abs() < 1e-15);
        assert_eq!(effective_horizon(&f, 1.0, 0.01), 0.0);
    }

    #[test]
    fn bump_shape() {
        assert_eq!(bump(0.0), 0.0);
        assert_eq!(bump(1.0), 0.0);
        assert_eq!(bump(0.5), 1.0);
        assert_eq!(bump_derivative(0.0), 0.0);
        assert_eq!(bump_derivative(1.0), 0.0);
        assert_eq!(bump_derivative(0.5), 0.0);
        for i in 1..100 {
            let x = i as f64 / 100.0;
            let h = 1e-6;
            let fd = (bump(x + h) - bump(x - h)) / (2.0 * h);
            assert!((fd - bump_derivative(x)).abs() < 1e-6);
        }
    }

    #[test]
    fn skipped_window_changes_nothing() {
        let cfg = PlannerConfig::default();
        let mut state = DeformationState::new();
        let mut w = window(0, Vector3::new(10.0, 0.0, 0.0), 0.3);
        w.contact_fraction = 0.4;
        assert!(matches!(state.commit_window(&w, &cfg), CommitOutcome::Skipped { .. }));
        assert_eq!(state, DeformationState::new());
    }

    #[test]
    fn constant_push_commits_one_bump() {
        let cfg = PlannerConfig::default();
        let mut state = DeformationState::new();
        let f = Vector3::new(10.0, 0.0, 0.0);
        for k in 0..20 {
            state.commit_window(&window(k, f, 0.1 + 0.01 * k as f64), &cfg);
        }
        assert_eq!(state.bumps().len(), 1);
        let b = &state.bumps()[0];
        assert!((b.increment.x - 0.05).abs() < 1e-15);
        assert!((b.horizon - 0.1).abs() < 1e-15);
    }

    #[test]
    fn episode_end_resets_baseline() {
        let cfg = PlannerConfig::default();
        let mut state = DeformationState::new();
        let f = Vector3::new(10.0, 0.0, 0.0);
        state.commit_window(&window(0, f, 0.1), &cfg);
        state.end_episode();
        assert_eq!(state.delta_prev(), Vector3::zeros());
        state.commit_window(&window(5, f, 0.5), &cfg);
        assert_eq!(state.bumps().len(), 2);
    }

    #[test]
    fn no_horizon_at_path_end() {
        let cfg = PlannerConfig::default();
        let mut state = DeformationState::new();
        let out = state.commit_window(&window(0, Vector3::new(10.0, 0.0, 0.0), 1.0), &cfg);
        assert!(matches!(out, CommitOutcome::NoHorizon { .. }));
        assert!(state.bumps().is_empty());
    }

    #[test]
    fn peak_displacement_at_bump_centre() {
        let cfg = PlannerConfig::default();
        let mut state = DeformationState::new();
        state.commit_window(&window(0, Vector3::new(0.0, 0.0, 20.0), 0.3), &cfg);
        let path = straight();
        let (p, _) = state.evaluate(&path, 0.4);
        assert!((p - path.position(0.4) - Vector3::new(0.0, 0.0, 0.1)).norm() < 1e-15);
    }

    #[test]
    fn validation() {
        assert!(PlannerConfig::default().validate().is_ok());
        let bad = PlannerConfig { beta: 0.0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = PlannerConfig { window_n_d: 0, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = PlannerConfig { min_contact_fraction: 1.5, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn config_keys() {
        let cfg: PlannerConfig = serde_json::from_str(r#"{"F_sat": 20, "window_N_d": 50}"#).unwrap();
        assert_eq!(cfg.f_sat, 20.0);
        assert_eq!(cfg.window_n_d, 50);
        assert!(serde_json::from_str::<PlannerConfig>(r#"{"f_sat": 20}"#).is_err());
    }

    fn force() -> impl Strategy<Value = Vector3<f64>> {
        (-40.0..40.0f64, -40.0..40.0f64, -40.0..40.0f64).prop_map(|(x, y, z)| Vector3::new(x, y, z))
    }

    proptest! {
        #[test]
        fn endpoints_fixed_and_c1(
            forces in proptest::collection::vec((force(), 0.0..1.0f64), 1..8),
        ) {
            let cfg = PlannerConfig::default();
            let path = straight();
            let mut state = DeformationState::new();
            let mut windows: Vec<_> = forces;
            windows.sort_by(|a, b| a.1.total_cmp(&b.1));
            for (k, (f, s)) in windows.iter().enumerate() {
                state.commit_window(&window(k, *f, *s), &cfg);
                if k % 3 == 2 {
                    state.end_episode();
                }
            }
            prop_assert_eq!(state.evaluate(&path, 0.0).0, path.position(0.0));
            prop_assert_eq!(state.evaluate(&path, 1.0).0, path.position(1.0));
            // continuity of value and slope across every bump boundary: over a
            // step h the change is bounded by the steepest slope and curvature present
            let slope: f64 = state.bumps().iter().map(|b| 3.1 * b.increment.norm() / b.horizon).sum();
            let curvature: f64 = state.bumps().iter().map(|b| 32.0 * b.increment.norm() / b.horizon.powi(2)).sum();
            for b in state.bumps() {
                for edge in [b.start, b.start + b.horizon] {
                    let h = 1e-9 * b.horizon;
                    let jump = (state.deformation(edge + h) - state.deformation(edge - h)).norm();
                    prop_assert!(jump <= 2.0 * h * slope + 1e-15);
                    let dj = (state.deformation_derivative(edge + h)
                        - state.deformation_derivative(edge - h)).norm();
                    prop_assert!(dj <= 2.0 * h * curvature + 1e-12);
                }
            }
        }

        #[test]
        fn deformation_is_causal(f in force(), s_next in 0.05..0.9f64, probe in 0.0..1.0f64) {
            let cfg = PlannerConfig::default();
            let mut state = DeformationState::new();
            state.commit_window(&window(0, f, s_next), &cfg);
            if probe <= s_next {
                prop_assert_eq!(state.deformation(probe), Vector3::zeros());
            }
        }

        #[test]
        fn doubling_force_doubles_response(
            dir in force(),
            mag in 1.0..20.0f64,
            s_next in 0.0..0.5f64,
        ) {
            prop_assume!(dir.norm() > 1e-3);
            let cfg = PlannerConfig { f_sat: 1e3, epsilon: 0.0, ..Default::default() };
            let f = dir.normalize() * mag;
            let mut one = DeformationState::new();
            let mut two = DeformationState::new();
            one.commit_window(&window(0, f, s_next), &cfg);
            two.commit_window(&window(0, 2.0 * f, s_next), &cfg);
            let (a, b) = (&one.bumps()[0], &two.bumps()[0]);
            prop_assert!((b.increment - 2.0 * a.increment).norm() < 1e-12);
            let raw = |x: &Vector3<f64>| cfg.beta * x.norm();
            prop_assert!((raw(&(2.0 * f)) - 2.0 * raw(&f)).abs() < 1e-12);
            prop_assert!(b.horizon >= a.horizon);
        }

        #[test]
        fn repeated_window_commits_once(f in force(), k in 2usize..12) {
            prop_assume!(f.norm() * 0.005 > 0.005);
            let cfg = PlannerConfig::default();
            let mut state = DeformationState::new();
            for i in 0..k {
                state.commit_window(&window(i, f, 0.1), &cfg);
            }
            prop_assert_eq!(state.bumps().len(), 1);
        }
    }
}
