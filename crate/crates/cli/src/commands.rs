//! `run` and `estimate`, independent of argument parsing.

use std::io::Write;
use std::path::{Path, PathBuf};

use contactplan::detection::DetectionConfig;
use contactplan::estimation::EstimationConfig;
use contactplan::planner::PlannerConfig;
use contactplan::robot::RobotModel;
use contactplan::sim::{
    apply_override, estimate_trace, export_trace, load_scenario_with, metrics, parse_override_value,
    read_residual_csv, MetricsReport, OfflineMode, RunTrace, Scenario,
};
use contactplan::Error;
use serde::Deserialize;
use serde_json::{json, Value};

/// Process exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExitCode {
    Ok = 0,
    Failure = 1,
    /// the scenario, trace or configuration could not be used
    BadInput = 2,
    Aborted = 3,
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Library(#[from] Error),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Usage(_) => ExitCode::BadInput,
            CliError::Library(e) => match e {
                Error::Aborted { .. } => ExitCode::Aborted,
                Error::Config(_)
                | Error::Io { .. }
                | Error::Load { .. }
                | Error::Validation(_)
                | Error::Model(_)
                | Error::TraceParse { .. } => ExitCode::BadInput,
                Error::Dimension { .. } | Error::Argument(_) => ExitCode::Failure,
            },
            CliError::Io(_) => ExitCode::Failure,
        }
    }
}

/// Split `KEY=VALUE`; the value is JSON when it parses, a string otherwise.
pub fn parse_override(text: &str) -> Result<(String, Value), String> {
    let (key, value) = text
        .split_once('=')
        .ok_or_else(|| format!("`{text}` is not KEY=VALUE"))?;
    if key.is_empty() {
        return Err(format!("`{text}` has an empty key"));
    }
    Ok((key.to_string(), parse_override_value(value)))
}

/// Scenario overrides with the dedicated flags folded in; the flags win.
pub fn scenario_overrides(
    config: &[(String, Value)],
    seed: Option<u64>,
    rate: Option<f64>,
) -> Vec<(String, Value)> {
    let mut all = config.to_vec();
    if let Some(seed) = seed {
        all.push(("seed".into(), json!(seed)));
    }
    if let Some(rate) = rate {
        all.push(("sample_rate".into(), json!(rate)));
    }
    all
}

pub fn load(path: &Path, overrides: &[(String, Value)]) -> Result<Scenario, CliError> {
    Ok(load_scenario_with(path, overrides)?)
}

pub struct RunOutcome {
    pub trace: RunTrace,
    pub metrics: MetricsReport,
    pub files: Vec<PathBuf>,
    pub aborted: bool,
}

/// Run a scenario, write the trace to `out`, and report whether it aborted.
/// An aborted run still exports what it recorded.
pub fn run(scenario: &Scenario, out: &Path) -> Result<RunOutcome, CliError> {
    let (trace, aborted) = match contactplan::sim::run(scenario) {
        Ok(trace) => (trace, false),
        Err(Error::Aborted { trace, .. }) => (*trace, true),
        Err(e) => return Err(e.into()),
    };
    let report = metrics(&trace, &scenario.model)?;
    let files = export_trace(&trace, &report, out)?;
    Ok(RunOutcome {
        trace,
        metrics: report,
        files,
        aborted,
    })
}

fn fmt_opt(v: Option<f64>, unit: &str) -> String {
    v.map_or("n/a".into(), |v| format!("{v:.4} {unit}"))
}

pub fn print_summary(w: &mut impl Write, outcome: &RunOutcome) -> std::io::Result<()> {
    let m = &outcome.metrics;
    writeln!(w, "ticks               {} ({:.3} s)", m.ticks, m.duration)?;
    writeln!(w, "contacts applied    {}", m.ground_truth_contacts)?;
    writeln!(w, "episodes detected   {} ({} false positive)", m.episodes_detected, m.false_positive_episodes)?;
    writeln!(w, "bumps committed     {}", m.bumps)?;
    writeln!(w, "torque MAE          {}", fmt_opt(m.torque_mae, "N·m"))?;
    writeln!(w, "max tracking error  {:.4} m", m.max_tracking_error)?;
    writeln!(w, "goal error          {}", fmt_opt(m.goal_error, "m"))?;
    for c in &m.contacts {
        writeln!(
            w,
            "  contact {} (link {}): latency {}, estimates {} ({} on the right link), mean force error {}",
            c.index,
            c.link,
            c.detection_latency_ticks.map_or("missed".into(), |t| format!("{t} ticks")),
            c.estimates,
            c.link_correct,
            fmt_opt(c.force_error_mean, "N"),
        )?;
    }
    if let Some(reason) = &m.aborted {
        writeln!(w, "ABORTED: {reason}")?;
    }
    for f in &outcome.files {
        writeln!(w, "wrote {}", f.display())?;
    }
    Ok(())
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct EstimateConfig {
    detection: DetectionConfig,
    estimation: EstimationConfig,
    planner: PlannerConfig,
}

/// Estimate contacts on a recorded residual trace; one JSON object per line on `w`.
///
/// With `link` the trace is cut into consecutive windows fitted on that link;
/// without it detection and windowing are replayed as in a live run.
pub fn estimate(
    trace: &Path,
    chain: &Path,
    link: Option<usize>,
    overrides: &[(String, Value)],
    w: &mut impl Write,
) -> Result<usize, CliError> {
    let mut doc = json!({});
    for (key, value) in overrides {
        apply_override(&mut doc, key, value.clone())?;
    }
    let config: EstimateConfig =
        serde_json::from_value(doc).map_err(|e| Error::Config(e.to_string()))?;
    let model = RobotModel::load(chain)?;
    let samples = read_residual_csv(trace)?;
    let mode = link.map_or(OfflineMode::Replay, OfflineMode::FixedLink);
    let estimates = estimate_trace(
        &samples,
        &model,
        &config.detection,
        &config.estimation,
        &config.planner,
        mode,
    )?;
    for e in &estimates {
        writeln!(w, "{}", serde_json::to_string(e).expect("estimates serialize"))?;
    }
    Ok(estimates.len())
}
