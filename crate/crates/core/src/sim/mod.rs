//! Scenario files, the closed-loop simulator, metrics and trace export.
//!
//! The simulated arm follows the commanded joint positions exactly; contact
//! forces only show up in the joint torques it reports. The [`Pipeline`] sees
//! those reports and nothing else.

mod export;
mod harness;
mod metrics;
mod offline;
mod pipeline;
mod scenario;

pub use export::{
    export_trace, load_trace, plot_data, read_deformed_path, read_metrics, read_plot_data,
    read_residual_csv, read_ticks_csv, read_windows, tick_header, write_ticks_csv,
    DeformedPathDocument, ForceMark, PlotData, DEFORMED_PATH_FILE, METRICS_FILE, PLOT_DECIMATION,
    PLOT_FILE, RUN_FILE, TICKS_FILE, WINDOWS_FILE,
};
pub use harness::{
    run, simulate_measured_torque, Plant, RunTrace, Simulator, TickOutput, TickRecord, Truth,
    DEFORMED_PATH_SEGMENTS, TRACKING_ERROR_LIMIT, TRACKING_ERROR_TIME,
};
pub use metrics::{metrics, ContactMetrics, MetricsReport, ATTRIBUTION_SLACK};
pub use offline::{estimate_trace, OfflineEstimate, OfflineMode};
pub use pipeline::{
    estimate_window, ContactWindowing, Measurement, Pipeline, PipelineConfig, PipelineStep,
    WindowClose, WindowRecord, SPEED_RAMP_TIME,
};
pub use scenario::{
    apply_override, load_scenario, load_scenario_with, parse_override_value, ChainRef,
    ForceProfile, GroundTruthContact, LineSpec, NoiseConfig, PathRef, RobotBlock, Scenario,
    ScenarioFile, START_TOLERANCE,
};
