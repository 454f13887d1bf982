//! Trace files.
//!
//! `ticks.csv` columns, in order, for an `n`-joint arm:
//!
//! | column | content |
//! |---|---|
//! | `t`, `s` | time (s), path parameter |
//! | `q1..qn`, `qd1..qdn` | joint positions (rad), velocities (rad/s) |
//! | `qdd1..qddn` | acceleration used by the model (filtered), rad/s² |
//! | `qdd_true1..qdd_truen` | acceleration the simulated arm actually had |
//! | `tau_meas1..`, `tau_model1..`, `tau_hat1..` | measured, model and residual torque, N·m |
//! | `tau_ext1..` | injected contact torque (ground truth), N·m |
//! | `eta`, `eta_bar`, `contact`, `link` | statistic, smoothed statistic, flag (0/1), localized link (empty if none) |
//! | `tip_x..tip_z`, `target_x..target_z` | tip and commanded point, m |
//!
//! Numbers are written in shortest round-trip form, so a trace read back is
//! bit-identical to the one written.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use nalgebra::{DVector, Vector3};
use serde::{Deserialize, Serialize};

use super::harness::{RunTrace, TickRecord};
use super::metrics::MetricsReport;
use super::pipeline::WindowRecord;
use crate::detection::ResidualSample;
use crate::error::{Error, Result};
use crate::planner::{Bump, PathSampleRecord};

pub const TICKS_FILE: &str = "ticks.csv";
pub const WINDOWS_FILE: &str = "windows.jsonl";
pub const DEFORMED_PATH_FILE: &str = "deformed_path.json";
pub const METRICS_FILE: &str = "metrics.json";
pub const PLOT_FILE: &str = "plot_data.json";
pub const RUN_FILE: &str = "run.json";

/// Every tenth tick goes into the plot bundle.
pub const PLOT_DECIMATION: usize = 10;

const VECTOR_GROUPS: [&str; 8] = [
    "q", "qd", "qdd", "qdd_true", "tau_meas", "tau_model", "tau_hat", "tau_ext",
];

pub fn tick_header(dof: usize) -> Vec<String> {
    let mut header = vec!["t".to_string(), "s".to_string()];
    for group in VECTOR_GROUPS {
        header.extend((1..=dof).map(|j| format!("{group}{j}")));
    }
    header.extend(["eta", "eta_bar", "contact", "link"].map(String::from));
    header.extend(["tip_x", "tip_y", "tip_z", "target_x", "target_y", "target_z"].map(String::from));
    header
}

fn num(v: f64) -> String {
    format!("{v:?}")
}

fn tick_row(r: &TickRecord) -> Vec<String> {
    let mut row = vec![num(r.t), num(r.s)];
    for v in [&r.q, &r.qd, &r.qdd, &r.qdd_true, &r.tau_meas, &r.tau_model, &r.tau_hat, &r.tau_ext] {
        row.extend(v.iter().map(|x| num(*x)));
    }
    row.push(num(r.eta));
    row.push(num(r.eta_bar));
    row.push(if r.contact { "1" } else { "0" }.into());
    row.push(r.link.map(|l| l.to_string()).unwrap_or_default());
    row.extend(r.tip.iter().chain(r.target.iter()).map(|x| num(*x)));
    row
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeformedPathDocument {
    pub samples: Vec<PathSampleRecord>,
    pub bumps: Vec<Bump>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForceMark {
    pub t: f64,
    pub link: usize,
    pub s: f64,
    pub force: [f64; 3],
}

/// Downsampled series for external plotting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlotData {
    pub decimation: usize,
    pub t: Vec<f64>,
    pub eta_bar: Vec<f64>,
    pub contact: Vec<bool>,
    /// one series per joint
    pub tau_hat: Vec<Vec<f64>>,
    pub tip: Vec<[f64; 3]>,
    pub target: Vec<[f64; 3]>,
    pub force_estimates: Vec<ForceMark>,
    pub force_true: Vec<[f64; 3]>,
    pub reference_path: Vec<[f64; 3]>,
    pub deformed_path: Vec<[f64; 3]>,
}

fn xyz(v: &Vector3<f64>) -> [f64; 3] {
    [v.x, v.y, v.z]
}

pub fn plot_data(trace: &RunTrace) -> PlotData {
    let picked: Vec<&TickRecord> = trace.ticks.iter().step_by(PLOT_DECIMATION).collect();
    PlotData {
        decimation: PLOT_DECIMATION,
        t: picked.iter().map(|r| r.t).collect(),
        eta_bar: picked.iter().map(|r| r.eta_bar).collect(),
        contact: picked.iter().map(|r| r.contact).collect(),
        tau_hat: (0..trace.dof)
            .map(|j| picked.iter().map(|r| r.tau_hat[j]).collect())
            .collect(),
        tip: picked.iter().map(|r| xyz(&r.tip)).collect(),
        target: picked.iter().map(|r| xyz(&r.target)).collect(),
        force_estimates: trace
            .windows
            .iter()
            .filter_map(|w| {
                w.estimate.as_ref().map(|e| ForceMark {
                    t: w.t,
                    link: e.link,
                    s: e.s_hat,
                    force: xyz(&e.force),
                })
            })
            .collect(),
        force_true: picked
            .iter()
            .map(|r| xyz(&trace.contacts.iter().map(|c| c.force_at(r.t)).sum()))
            .collect(),
        reference_path: trace.reference_path.iter().map(|p| p.xyz).collect(),
        deformed_path: trace.deformed_path.iter().map(|p| p.xyz).collect(),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut out = create(path)?;
    serde_json::to_writer_pretty(&mut out, value).map_err(|e| Error::io(path, e.into()))?;
    out.write_all(b"\n").and_then(|_| out.flush()).map_err(|e| Error::io(path, e))
}

pub fn write_ticks_csv(path: &Path, dof: usize, ticks: &[TickRecord]) -> Result<()> {
    let io_err = |e: csv::Error| Error::io(path, e.into());
    let mut w = csv::Writer::from_writer(create(path)?);
    w.write_record(tick_header(dof)).map_err(io_err)?;
    for r in ticks {
        w.write_record(tick_row(r)).map_err(io_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Write every trace file into `dir` (created if missing); returns the paths written.
pub fn export_trace(trace: &RunTrace, metrics: &MetricsReport, dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let paths: Vec<PathBuf> = [TICKS_FILE, WINDOWS_FILE, DEFORMED_PATH_FILE, METRICS_FILE, PLOT_FILE, RUN_FILE]
        .iter()
        .map(|f| dir.join(f))
        .collect();

    write_ticks_csv(&paths[0], trace.dof, &trace.ticks)?;

    let mut out = create(&paths[1])?;
    for w in &trace.windows {
        serde_json::to_writer(&mut out, w).map_err(|e| Error::io(&paths[1], e.into()))?;
        out.write_all(b"\n").map_err(|e| Error::io(&paths[1], e))?;
    }
    out.flush().map_err(|e| Error::io(&paths[1], e))?;

    write_json(
        &paths[2],
        &DeformedPathDocument {
            samples: trace.deformed_path.clone(),
            bumps: trace.bumps.clone(),
        },
    )?;
    write_json(&paths[3], metrics)?;
    write_json(&paths[4], &plot_data(trace))?;
    write_json(&paths[5], trace)?;
    Ok(paths)
}

fn parse_error(line: u64, message: impl Into<String>) -> Error {
    Error::TraceParse {
        line,
        message: message.into(),
    }
}

/// Column positions looked up by header name.
struct Columns {
    index: std::collections::HashMap<String, usize>,
}

impl Columns {
    fn new(header: &csv::StringRecord) -> Self {
        Self {
            index: header.iter().enumerate().map(|(i, h)| (h.trim().to_string(), i)).collect(),
        }
    }

    fn find(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| parse_error(1, format!("missing column `{name}`")))
    }

    fn group(&self, prefix: &str, dof: usize) -> Result<Vec<usize>> {
        (1..=dof).map(|j| self.find(&format!("{prefix}{j}"))).collect()
    }

    fn dof(&self) -> Result<usize> {
        let n = (1..).take_while(|j| self.index.contains_key(&format!("q{j}"))).count();
        if n == 0 {
            return Err(parse_error(1, "no joint columns (`q1`, ...)"));
        }
        Ok(n)
    }
}

fn field_f64(record: &csv::StringRecord, col: usize, name: &str, line: u64) -> Result<f64> {
    let text = record.get(col).unwrap_or("").trim();
    text.parse()
        .map_err(|_| parse_error(line, format!("column `{name}`: cannot parse `{text}` as a number")))
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(csv::ReaderBuilder::new().flexible(false).from_reader(file))
}

fn records(
    path: &Path,
) -> Result<(Columns, impl Iterator<Item = Result<(u64, csv::StringRecord)>>)> {
    let mut rdr = reader(path)?;
    let header = rdr
        .headers()
        .map_err(|e| parse_error(1, e.to_string()))?
        .clone();
    let columns = Columns::new(&header);
    let rows = rdr.into_records().map(|r| match r {
        Ok(rec) => Ok((rec.position().map_or(0, |p| p.line()), rec)),
        Err(e) => {
            let line = e.position().map_or(0, |p| p.line());
            Err(parse_error(line, e.to_string()))
        }
    });
    Ok((columns, rows))
}

fn vector(record: &csv::StringRecord, cols: &[usize], prefix: &str, line: u64) -> Result<DVector<f64>> {
    let values = cols
        .iter()
        .enumerate()
        .map(|(j, &c)| field_f64(record, c, &format!("{prefix}{}", j + 1), line))
        .collect::<Result<Vec<_>>>()?;
    Ok(DVector::from_vec(values))
}

/// Read the columns the offline estimator needs: `t`, `q1..qn`, `tau_hat1..n`.
/// Other columns are ignored, so a full `ticks.csv` works as well.
pub fn read_residual_csv(path: impl AsRef<Path>) -> Result<Vec<ResidualSample>> {
    let path = path.as_ref();
    let (cols, rows) = records(path)?;
    let n = cols.dof()?;
    let t_col = cols.find("t")?;
    let q_cols = cols.group("q", n)?;
    let tau_cols = cols.group("tau_hat", n)?;
    rows.map(|row| {
        let (line, rec) = row?;
        Ok(ResidualSample::new(
            field_f64(&rec, t_col, "t", line)?,
            vector(&rec, &q_cols, "q", line)?,
            vector(&rec, &tau_cols, "tau_hat", line)?,
        ))
    })
    .collect()
}

pub fn read_ticks_csv(path: impl AsRef<Path>) -> Result<Vec<TickRecord>> {
    let path = path.as_ref();
    let (cols, rows) = records(path)?;
    let n = cols.dof()?;
    let scalar = |name: &str| cols.find(name);
    let (t, s, eta, eta_bar, contact, link) = (
        scalar("t")?,
        scalar("s")?,
        scalar("eta")?,
        scalar("eta_bar")?,
        scalar("contact")?,
        scalar("link")?,
    );
    let groups = VECTOR_GROUPS
        .iter()
        .map(|g| cols.group(g, n))
        .collect::<Result<Vec<_>>>()?;
    let point = |p: &str| -> Result<[usize; 3]> {
        Ok([scalar(&format!("{p}_x"))?, scalar(&format!("{p}_y"))?, scalar(&format!("{p}_z"))?])
    };
    let (tip, target) = (point("tip")?, point("target")?);
    rows.map(|row| {
        let (line, rec) = row?;
        let v = |i: usize| vector(&rec, &groups[i], VECTOR_GROUPS[i], line);
        let p = |c: [usize; 3], name: &str| -> Result<Vector3<f64>> {
            Ok(Vector3::new(
                field_f64(&rec, c[0], name, line)?,
                field_f64(&rec, c[1], name, line)?,
                field_f64(&rec, c[2], name, line)?,
            ))
        };
        let flag = match rec.get(contact).unwrap_or("").trim() {
            "0" => false,
            "1" => true,
            other => return Err(parse_error(line, format!("column `contact`: expected 0 or 1, got `{other}`"))),
        };
        let link = match rec.get(link).unwrap_or("").trim() {
            "" => None,
            text => Some(text.parse().map_err(|_| {
                parse_error(line, format!("column `link`: cannot parse `{text}`"))
            })?),
        };
        Ok(TickRecord {
            t: field_f64(&rec, t, "t", line)?,
            s: field_f64(&rec, s, "s", line)?,
            q: v(0)?,
            qd: v(1)?,
            qdd: v(2)?,
            qdd_true: v(3)?,
            tau_meas: v(4)?,
            tau_model: v(5)?,
            tau_hat: v(6)?,
            tau_ext: v(7)?,
            eta: field_f64(&rec, eta, "eta", line)?,
            eta_bar: field_f64(&rec, eta_bar, "eta_bar", line)?,
            contact: flag,
            link,
            tip: p(tip, "tip")?,
            target: p(target, "target")?,
        })
    })
    .collect()
}

pub fn read_windows(path: impl AsRef<Path>) -> Result<Vec<WindowRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            serde_json::from_str(&line).map_err(|e| parse_error(i as u64 + 1, e.to_string()))?,
        );
    }
    Ok(out)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Load {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn read_metrics(path: impl AsRef<Path>) -> Result<MetricsReport> {
    read_json(path.as_ref())
}

pub fn read_deformed_path(path: impl AsRef<Path>) -> Result<DeformedPathDocument> {
    read_json(path.as_ref())
}

pub fn read_plot_data(path: impl AsRef<Path>) -> Result<PlotData> {
    read_json(path.as_ref())
}

/// Rebuild a trace from an export directory.
pub fn load_trace(dir: impl AsRef<Path>) -> Result<RunTrace> {
    let dir = dir.as_ref();
    let mut trace: RunTrace = read_json(&dir.join(RUN_FILE))?;
    trace.ticks = read_ticks_csv(dir.join(TICKS_FILE))?;
    Ok(trace)
}
