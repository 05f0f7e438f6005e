//! Wire messages. Every WebSocket text message carries one JSON object
//! terminated by a newline; a client may also pack several newline-separated
//! commands into one message.
//!
//! Client to server, a [`TeleopCommand`]:
//!
//! ```json
//! {"seq": 7,
//!  "base": {"v": 0.3, "omega": -0.2},
//!  "left": {"ee": {"dx": 0.01, "dy": 0.0}},
//!  "right": {"joints": [0.0, 0.05, 0.0, 0.0, 0.0, 0.0]},
//!  "gripper": {"left": true, "right": false},
//!  "record": "start"}
//! ```
//!
//! Units: `v` in m/s, `omega` in rad/s, end-effector deltas in metres in the
//! robot body frame (x forward, y left), joint deltas in radians. A gripper
//! flag toggles that gripper once. Every field except `seq` is optional; an
//! absent base means zero velocity and an absent arm holds its targets.
//! `seq` must strictly increase within a session.
//!
//! Server to client, a [`ServerMessage`] tagged by `type`: `frame` once per
//! control tick, `recorded` when an episode file is written and `error` for
//! rejected commands.

use serde::{Deserialize, Serialize};
use wholebody_core::sim::ARM_JOINTS;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BaseCommand {
    pub v: f64,
    pub omega: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EeDelta {
    pub dx: f64,
    pub dy: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArmCommand {
    Ee(EeDelta),
    Joints([f64; ARM_JOINTS]),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GripperToggle {
    #[serde(default)]
    pub left: bool,
    #[serde(default)]
    pub right: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RecordFlag {
    Start,
    Stop,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeleopCommand {
    pub seq: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub base: Option<BaseCommand>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub left: Option<ArmCommand>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub right: Option<ArmCommand>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gripper: Option<GripperToggle>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub record: Option<RecordFlag>,
}

impl TeleopCommand {
    pub fn idle(seq: u64) -> Self {
        Self {
            seq,
            base: None,
            left: None,
            right: None,
            gripper: None,
            record: None,
        }
    }

    fn numbers(&self) -> Vec<f64> {
        let mut out = Vec::new();
        if let Some(b) = self.base {
            out.extend([b.v, b.omega]);
        }
        for arm in [self.left, self.right].into_iter().flatten() {
            match arm {
                ArmCommand::Ee(d) => out.extend([d.dx, d.dy]),
                ArmCommand::Joints(q) => out.extend(q),
            }
        }
        out
    }

    /// Folds a newer command into this one for a single control tick.
    ///
    /// The base command and `seq` are the newer ones. Arm deltas of the same
    /// kind add up, otherwise the newer one wins. Gripper toggles combine by
    /// parity, so two toggles cancel. The newer record flag wins.
    pub fn coalesce(self, newer: TeleopCommand) -> TeleopCommand {
        let arm = |old: Option<ArmCommand>, new: Option<ArmCommand>| match (old, new) {
            (Some(ArmCommand::Ee(a)), Some(ArmCommand::Ee(b))) => Some(ArmCommand::Ee(EeDelta {
                dx: a.dx + b.dx,
                dy: a.dy + b.dy,
            })),
            (Some(ArmCommand::Joints(a)), Some(ArmCommand::Joints(b))) => {
                Some(ArmCommand::Joints(std::array::from_fn(|i| a[i] + b[i])))
            }
            (old, None) => old,
            (_, new) => new,
        };
        let gripper = match (self.gripper, newer.gripper) {
            (Some(a), Some(b)) => Some(GripperToggle {
                left: a.left ^ b.left,
                right: a.right ^ b.right,
            }),
            (a, b) => b.or(a),
        };
        TeleopCommand {
            seq: newer.seq,
            base: newer.base,
            left: arm(self.left, newer.left),
            right: arm(self.right, newer.right),
            gripper,
            record: newer.record.or(self.record),
        }
    }
}

#[derive(Debug, PartialEq, Eq)]
pub enum ProtocolError {
    Json(String),
    NonFinite,
}

impl std::fmt::Display for ProtocolError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ProtocolError::Json(e) => write!(f, "malformed command: {e}"),
            ProtocolError::NonFinite => f.write_str("command contains a non-finite number"),
        }
    }
}

impl std::error::Error for ProtocolError {}

pub fn parse_command(text: &str) -> Result<TeleopCommand, ProtocolError> {
    let cmd: TeleopCommand = serde_json::from_str(text.trim()).map_err(|e| ProtocolError::Json(e.to_string()))?;
    if cmd.numbers().iter().any(|v| !v.is_finite()) {
        return Err(ProtocolError::NonFinite);
    }
    Ok(cmd)
}

/// One base64-encoded 8-bit grey raster.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageMsg {
    pub width: usize,
    pub height: usize,
    pub data: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PoseMsg {
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
    pub omega: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArmMsg {
    pub joints: [f64; ARM_JOINTS],
    pub gripper: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObjectMsg {
    pub kind: String,
    pub x: f64,
    pub y: f64,
    pub radius: f64,
    pub held_by: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ViewsMsg {
    pub top: ImageMsg,
    pub lwrist: ImageMsg,
    pub rwrist: ImageMsg,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub tick: u64,
    /// Last applied command, if any.
    pub seq: Option<u64>,
    pub base: PoseMsg,
    pub left: ArmMsg,
    pub right: ArmMsg,
    pub objects: Vec<ObjectMsg>,
    pub recording: bool,
    pub recorded_steps: usize,
    pub subtasks: Vec<String>,
    /// Sub-tasks completed since the scene was last reset.
    pub completed: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub views: Option<ViewsMsg>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ServerMessage {
    Frame(Box<Frame>),
    Recorded { path: String, steps: usize },
    Error { message: String },
}

impl ServerMessage {
    /// JSON text with the trailing newline.
    pub fn to_line(&self) -> String {
        let mut s = serde_json::to_string(self).expect("messages serialise");
        s.push('\n');
        s
    }
}
