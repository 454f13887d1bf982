//! WebSocket wire protocol: one JSON object per text frame, `kind` selects the
//! message. See `docs/protocol.md` for the schema.

use contactplan::estimation::ContactEstimate;
use contactplan::planner::Bump;
use contactplan::sim::MetricsReport;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

pub const PROTOCOL_VERSION: u32 = 1;

/// Highest rate at which tick telemetry goes out, Hz.
pub const MAX_TICK_RATE: f64 = 60.0;

/// Client → service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum CommandMessage {
    /// Constant force on `link` at `s`, starting with the next simulated tick.
    ApplyPush {
        link: usize,
        s: f64,
        /// N, world frame
        force: [f64; 3],
        /// s
        duration: f64,
    },
    Pause,
    Resume,
    Reset,
    /// Merge patch over the `detection`, `estimation`, `planner` and `tracking` blocks.
    SetConfig { patch: Value },
}

impl CommandMessage {
    pub fn name(&self) -> &'static str {
        match self {
            CommandMessage::ApplyPush { .. } => "apply_push",
            CommandMessage::Pause => "pause",
            CommandMessage::Resume => "resume",
            CommandMessage::Reset => "reset",
            CommandMessage::SetConfig { .. } => "set_config",
        }
    }
}

/// A command as framed on the wire: optional correlation `id`, optional
/// `protocol_version`, and the command fields.
#[derive(Debug, Clone, PartialEq)]
pub struct CommandFrame {
    pub id: Option<u64>,
    pub command: CommandMessage,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ProtocolError {
    #[error("message is not valid JSON: {0}")]
    Json(String),
    #[error("message must be a JSON object")]
    NotAnObject,
    #[error("`id` must be a non-negative integer")]
    BadId,
    #[error("protocol_version {0} is not supported (expected {PROTOCOL_VERSION})")]
    Version(Value),
    #[error("{0}")]
    Payload(String),
}

impl CommandFrame {
    pub fn new(command: CommandMessage) -> Self {
        Self { id: None, command }
    }

    pub fn parse(text: &str) -> Result<Self, ProtocolError> {
        let value: Value = serde_json::from_str(text).map_err(|e| ProtocolError::Json(e.to_string()))?;
        let Value::Object(mut map) = value else {
            return Err(ProtocolError::NotAnObject);
        };
        let id = match map.remove("id") {
            None | Some(Value::Null) => None,
            Some(v) => Some(v.as_u64().ok_or(ProtocolError::BadId)?),
        };
        if let Some(v) = map.remove("protocol_version") {
            if v.as_u64() != Some(PROTOCOL_VERSION as u64) {
                return Err(ProtocolError::Version(v));
            }
        }
        let command: CommandMessage = serde_json::from_value(Value::Object(map.clone()))
            .map_err(|e| ProtocolError::Payload(e.to_string()))?;
        // serde lets extra fields through on unit variants
        if let Ok(Value::Object(known)) = serde_json::to_value(&command) {
            if let Some(extra) = map.keys().find(|k| !known.contains_key(*k)) {
                return Err(ProtocolError::Payload(format!(
                    "unknown field `{extra}` for `{}`",
                    command.name()
                )));
            }
        }
        Ok(Self { id, command })
    }

    pub fn to_json(&self) -> String {
        let mut map = match serde_json::to_value(&self.command) {
            Ok(Value::Object(map)) => map,
            _ => Map::new(),
        };
        map.insert("protocol_version".into(), PROTOCOL_VERSION.into());
        if let Some(id) = self.id {
            map.insert("id".into(), id.into());
        }
        Value::Object(map).to_string()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickTelemetry {
    pub tick: u64,
    pub t: f64,
    /// path parameter
    pub s: f64,
    pub q: Vec<f64>,
    /// base of link 1, then the tip of every link, m
    pub joints: Vec<[f64; 3]>,
    pub tip: [f64; 3],
    pub target: [f64; 3],
    pub eta_bar: f64,
    pub contact: bool,
}

/// Service → client.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TelemetryMessage {
    /// First message on every connection; not sequenced.
    Hello {
        dof: usize,
        sample_rate: f64,
        tick_decimation: u64,
        force_limit: f64,
        threshold: f64,
        paused: bool,
        finished: bool,
        /// last sequence number sent before this connection joined
        last_seq: Option<u64>,
        reference_path: Vec<[f64; 3]>,
        deformed_path: Vec<[f64; 3]>,
    },
    Tick(TickTelemetry),
    /// The contact flag switched.
    Detection {
        tick: u64,
        t: f64,
        contact: bool,
        eta_bar: f64,
        threshold: f64,
        link: Option<usize>,
    },
    Estimate {
        tick: u64,
        t: f64,
        window: usize,
        estimate: ContactEstimate,
    },
    Bump { tick: u64, t: f64, bump: Bump },
    PathUpdate {
        tick: u64,
        t: f64,
        deformed_path: Vec<[f64; 3]>,
    },
    Metrics {
        tick: u64,
        t: f64,
        episodes: usize,
        windows: usize,
        bumps: usize,
        finished: bool,
        aborted: Option<String>,
        /// full report once the run has finished
        report: Option<MetricsReport>,
    },
    Ack {
        client: u64,
        id: Option<u64>,
        command: String,
        /// tick the command took effect before
        tick: u64,
    },
    Rejected {
        client: u64,
        id: Option<u64>,
        command: String,
        reason: String,
    },
    /// Reply to a frame that could not be parsed; sent only to its sender.
    Error { message: String },
}

/// Framing for everything the service sends. `seq` is absent only on
/// connection-local messages (`hello`, `error`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerFrame {
    pub protocol_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seq: Option<u64>,
    #[serde(flatten)]
    pub message: TelemetryMessage,
}

impl ServerFrame {
    pub fn new(seq: Option<u64>, message: TelemetryMessage) -> Self {
        Self {
            protocol_version: PROTOCOL_VERSION,
            seq,
            message,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("telemetry serializes")
    }

    pub fn parse(text: &str) -> serde_json::Result<Self> {
        serde_json::from_str(text)
    }
}
