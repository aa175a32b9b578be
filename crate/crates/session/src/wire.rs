//! `wire/1`: self-describing JSON messages exchanged with viewers.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use tignn_core::render::{Camera, ModelPose, Vec3};

pub const WIRE_SCHEMA: &str = "wire/1";

/// Error codes carried by `error` replies.
pub mod codes {
    pub const PARSE_ERROR: &str = "parse_error";
    pub const SCHEMA_MISMATCH: &str = "schema_mismatch";
    pub const UNKNOWN_TYPE: &str = "unknown_type";
    pub const INVALID_MESSAGE: &str = "invalid_message";
    pub const UNEXPECTED_TYPE: &str = "unexpected_type";
    pub const INVALID_ARGUMENT: &str = "invalid_argument";
    pub const ROLLOUT_DIVERGENCE: &str = "rollout_divergence";
}

fn wire_schema() -> String {
    WIRE_SCHEMA.to_string()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Message {
    Hello(Hello),
    Frame(Frame),
    Poke(PokeEvent),
    Camera(CameraEvent),
    Reset(ResetEvent),
    Error(ErrorReply),
}

impl Message {
    pub fn type_name(&self) -> &'static str {
        match self {
            Message::Hello(_) => "hello",
            Message::Frame(_) => "frame",
            Message::Poke(_) => "poke",
            Message::Camera(_) => "camera",
            Message::Reset(_) => "reset",
            Message::Error(_) => "error",
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("wire messages always serialize")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BodyInfo {
    pub name: String,
    pub n_nodes: usize,
    pub rest_positions: Vec<Vec3>,
    pub surface_triangles: Vec<[usize; 3]>,
    pub fixed_nodes: Vec<usize>,
    pub pose: ModelPose,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hello {
    #[serde(default = "wire_schema")]
    pub schema: String,
    pub tick: u64,
    pub tick_dt: f64,
    pub bodies: Vec<BodyInfo>,
    pub camera: Camera,
    pub scalar: String,
    pub colormap_range: [f64; 2],
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BodyFrame {
    /// Model-space node positions.
    pub positions: Vec<Vec3>,
    pub colors: Vec<[u8; 3]>,
    pub scalar: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    #[serde(default = "wire_schema")]
    pub schema: String,
    pub tick: u64,
    pub time: f64,
    pub bodies: Vec<BodyFrame>,
}

/// Pointer press. `button` 0 pushes along the pick ray, 2 pulls. `depth` is
/// the NDC depth under the cursor when the viewer knows it; otherwise the
/// server ray-casts the deformed surfaces.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PokeEvent {
    #[serde(default = "wire_schema")]
    pub schema: String,
    pub ndc_xy: [f64; 2],
    #[serde(default)]
    pub button: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub depth: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Extrinsics {
    /// Camera-to-world rotation, row-major.
    pub rotation: [[f64; 3]; 3],
    pub translation: Vec3,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraEvent {
    #[serde(default = "wire_schema")]
    pub schema: String,
    pub extrinsics: Extrinsics,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResetEvent {
    #[serde(default = "wire_schema")]
    pub schema: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorReply {
    #[serde(default = "wire_schema")]
    pub schema: String,
    pub code: String,
    pub text: String,
    /// Byte offset of a JSON syntax error.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<usize>,
}

impl ErrorReply {
    pub fn new(code: &str, text: impl Into<String>) -> Self {
        ErrorReply {
            schema: wire_schema(),
            code: code.to_string(),
            text: text.into(),
            offset: None,
        }
    }
}

impl PokeEvent {
    pub fn new(ndc_xy: [f64; 2], button: u8) -> Self {
        PokeEvent {
            schema: wire_schema(),
            ndc_xy,
            button,
            depth: None,
        }
    }
}

impl ResetEvent {
    pub fn new() -> Self {
        ResetEvent { schema: wire_schema() }
    }
}

impl Default for ResetEvent {
    fn default() -> Self {
        Self::new()
    }
}

impl CameraEvent {
    pub fn new(camera: &Camera) -> Self {
        CameraEvent {
            schema: wire_schema(),
            extrinsics: Extrinsics {
                rotation: camera.rotation,
                translation: camera.translation,
            },
        }
    }
}

const KNOWN_TYPES: [&str; 6] = ["hello", "frame", "poke", "camera", "reset", "error"];

/// Byte offset of a serde_json error position in `text`.
fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let start: usize = text.split_inclusive('\n').take(line.saturating_sub(1)).map(str::len).sum();
    (start + column.saturating_sub(1)).min(text.len())
}

/// Parses one incoming message, mapping every failure to the reply the
/// session should send back.
pub fn parse_message(text: &str) -> Result<Message, ErrorReply> {
    let value: Value = serde_json::from_str(text).map_err(|e| {
        let offset = if e.is_eof() {
            text.len()
        } else {
            byte_offset(text, e.line(), e.column())
        };
        ErrorReply {
            offset: Some(offset),
            ..ErrorReply::new(codes::PARSE_ERROR, format!("malformed JSON at byte {offset}: {e}"))
        }
    })?;
    let Some(obj) = value.as_object() else {
        return Err(ErrorReply::new(codes::INVALID_MESSAGE, "message must be a JSON object"));
    };
    match obj.get("schema") {
        Some(Value::String(s)) if s == WIRE_SCHEMA => {}
        Some(other) => {
            return Err(ErrorReply::new(
                codes::SCHEMA_MISMATCH,
                format!("expected schema \"{WIRE_SCHEMA}\", found {other}"),
            ))
        }
        None => return Err(ErrorReply::new(codes::SCHEMA_MISMATCH, "missing \"schema\" field")),
    }
    let ty = match obj.get("type") {
        Some(Value::String(t)) => t.clone(),
        _ => return Err(ErrorReply::new(codes::INVALID_MESSAGE, "missing string \"type\" field")),
    };
    if !KNOWN_TYPES.contains(&ty.as_str()) {
        return Err(ErrorReply::new(codes::UNKNOWN_TYPE, format!("unknown message type \"{ty}\"")));
    }
    serde_json::from_value(value).map_err(|e| ErrorReply::new(codes::INVALID_MESSAGE, format!("{ty}: {e}")))
}
