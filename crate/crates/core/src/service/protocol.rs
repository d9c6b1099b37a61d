//! Newline-delimited JSON wire format shared by the TCP and WebSocket
//! bindings: commands in, replies and unsolicited events out.

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::model::Axis;
use crate::safety::Mode;
use crate::sim::FaultKind;

fn unit_speed() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "cmd", rename_all = "snake_case")]
pub enum Command {
    Connect,
    Disconnect,
    Jog {
        dp: f64,
        cr: f64,
    },
    SetJogSpeed {
        deg_s: f64,
    },
    StartRecord {
        name: String,
    },
    StopRecord,
    StartPlayback {
        name: String,
        #[serde(default = "unit_speed")]
        speed: f64,
    },
    Stop,
    Estop,
    Reset,
    SaveRoutine {
        name: String,
        #[serde(default)]
        overwrite: bool,
    },
    LoadRoutine {
        name: String,
    },
    ListRoutines,
    InjectFault {
        axis: Axis,
        /// `None` clears the fault.
        kind: Option<FaultKind>,
    },
}

/// A command plus the optional client correlation id.
#[derive(Debug, Clone, PartialEq)]
pub struct Request {
    pub id: Option<Value>,
    pub command: Command,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolError {
    pub id: Option<Value>,
    pub reason: String,
}

impl Request {
    pub fn new(command: Command) -> Self {
        Self { id: None, command }
    }

    pub fn parse(line: &str) -> Result<Request, ProtocolError> {
        let value: Value = serde_json::from_str(line).map_err(|e| ProtocolError {
            id: None,
            reason: format!("malformed JSON: {e}"),
        })?;
        let Value::Object(mut obj) = value else {
            return Err(ProtocolError {
                id: None,
                reason: "expected a JSON object".into(),
            });
        };
        let id = obj.remove("id");
        serde_json::from_value(Value::Object(obj))
            .map(|command| Request {
                id: id.clone(),
                command,
            })
            .map_err(|e| ProtocolError {
                id,
                reason: format!("bad command: {e}"),
            })
    }

    pub fn to_line(&self) -> String {
        let mut v = serde_json::to_value(&self.command).expect("command serializes");
        if let (Some(id), Value::Object(obj)) = (&self.id, &mut v) {
            obj.insert("id".into(), id.clone());
        }
        v.to_string()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reply {
    pub id: Option<Value>,
    pub outcome: Result<Map<String, Value>, String>,
}

impl Reply {
    pub fn ok(id: Option<Value>, data: Map<String, Value>) -> Self {
        Self {
            id,
            outcome: Ok(data),
        }
    }

    pub fn rejected(id: Option<Value>, reason: impl Into<String>) -> Self {
        Self {
            id,
            outcome: Err(reason.into()),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.outcome.is_ok()
    }

    pub fn reason(&self) -> Option<&str> {
        self.outcome.as_ref().err().map(String::as_str)
    }

    pub fn to_value(&self) -> Value {
        let mut obj = Map::new();
        match &self.outcome {
            Ok(data) => {
                obj.insert("ok".into(), Value::Bool(true));
                obj.extend(data.clone());
            }
            Err(reason) => {
                obj.insert("ok".into(), Value::Bool(false));
                obj.insert("reason".into(), Value::String(reason.clone()));
            }
        }
        if let Some(id) = &self.id {
            obj.insert("id".into(), id.clone());
        }
        Value::Object(obj)
    }

    pub fn to_line(&self) -> String {
        self.to_value().to_string()
    }
}

impl From<ProtocolError> for Reply {
    fn from(e: ProtocolError) -> Self {
        Reply::rejected(e.id, e.reason)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetryFrame {
    pub t_ms: u64,
    pub state: Mode,
    /// Sensed pose.
    pub dp: f64,
    pub cr: f64,
    pub target_dp: f64,
    pub target_cr: f64,
    /// Motor-side angles derived from the sensed pose.
    pub motor_dp: f64,
    pub motor_cr: f64,
    pub recording: bool,
    /// Playback progress in [0, 1]; 0 outside playback.
    pub progress: f64,
    /// Time spent in the current mode.
    pub timer_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "ev", rename_all = "snake_case")]
pub enum ServerEvent {
    Telemetry(TelemetryFrame),
    State { t_ms: u64, from: Mode, to: Mode },
}

impl ServerEvent {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("event serializes")
    }

    pub fn is_telemetry(&self) -> bool {
        matches!(self, ServerEvent::Telemetry(_))
    }
}
