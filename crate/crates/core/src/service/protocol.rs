use serde::{Deserialize, Serialize};

use crate::engine::Totals;

/// Subset of the engine configuration a client may choose.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StartConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tps: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub la_min: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub la_max: Option<usize>,
    pub src: bool,
    /// Schedule string such as `constant:4` or `ramp:1:7:30`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub schedule: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_temp: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_depth: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ClientMessage {
    Start {
        #[serde(default)]
        config: StartConfig,
    },
    Text {
        token: String,
    },
    EndText,
    SetRate {
        sps: f64,
    },
    Stop,
}

const CLIENT_TYPES: [&str; 5] = ["start", "text", "end_text", "set_rate", "stop"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    Malformed,
    UnknownType,
    NotStarted,
    AlreadyStarted,
    TextAfterEnd,
    SrcDisabled,
    InvalidConfig,
    SessionLimit,
    SessionEnded,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProtocolError {
    pub code: ErrorCode,
    pub text: String,
}

impl ProtocolError {
    pub fn new(code: ErrorCode, text: impl Into<String>) -> Self {
        Self { code, text: text.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Telemetry {
    Started {
        session: u64,
        seed: u64,
    },
    Frame {
        index: usize,
        t: f64,
        duration_token: usize,
        semantic: u32,
        covered: Vec<usize>,
    },
    Sps {
        t: f64,
        target: f64,
        achieved: f64,
    },
    Histogram {
        t: f64,
        p_acc: Vec<f64>,
        p_target: Vec<f64>,
    },
    Metrics {
        fpl_ms: Option<f64>,
        rtf_so_far: f64,
    },
    Warning {
        text: String,
    },
    Error {
        code: ErrorCode,
        text: String,
    },
    Done {
        totals: Totals,
    },
}

impl Telemetry {
    pub fn error(e: ProtocolError) -> Self {
        Telemetry::Error { code: e.code, text: e.text }
    }

    /// Rate-limited kinds that a full queue may discard.
    pub fn is_droppable(&self) -> bool {
        matches!(self, Telemetry::Sps { .. } | Telemetry::Histogram { .. } | Telemetry::Metrics { .. })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("telemetry serializes")
    }
}

/// Decode one client frame. Never panics; every failure is a structured
/// error naming what was wrong.
pub fn parse_client_message(raw: &[u8]) -> Result<ClientMessage, ProtocolError> {
    let value: serde_json::Value = serde_json::from_slice(raw)
        .map_err(|e| ProtocolError::new(ErrorCode::Malformed, format!("not valid JSON: {e}")))?;
    let tag = value
        .get("type")
        .and_then(|t| t.as_str())
        .map(str::to_owned)
        .ok_or_else(|| ProtocolError::new(ErrorCode::Malformed, "message needs a string \"type\" field"))?;
    if !CLIENT_TYPES.contains(&tag.as_str()) {
        return Err(ProtocolError::new(ErrorCode::UnknownType, format!("unknown message type {tag:?}")));
    }
    serde_json::from_value(value).map_err(|e| ProtocolError::new(ErrorCode::Malformed, format!("bad {tag}: {e}")))
}
