//! Recorded event scripts and deterministic replay.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use tignn_core::io::{from_json, read_text, to_json, write_atomic};
use tignn_core::{Error, Result};

use crate::scene::Scene;
use crate::wire::Message;

pub const SCRIPT_SCHEMA: &str = "script/1";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScriptEvent {
    /// Applied before the tick with this index runs.
    pub tick: u64,
    /// Raw client message, kept verbatim so malformed input replays too.
    pub message: Value,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Script {
    pub schema: String,
    pub ticks: u64,
    pub events: Vec<ScriptEvent>,
}

impl Script {
    pub fn new(ticks: u64) -> Self {
        Script {
            schema: SCRIPT_SCHEMA.to_string(),
            ticks,
            events: Vec::new(),
        }
    }

    pub fn push(&mut self, tick: u64, message: Value) {
        self.events.push(ScriptEvent { tick, message });
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SCRIPT_SCHEMA {
            return Err(Error::schema(
                "schema",
                format!("expected \"{SCRIPT_SCHEMA}\", found \"{}\"", self.schema),
            ));
        }
        for (i, w) in self.events.windows(2).enumerate() {
            if w[1].tick < w[0].tick {
                return Err(Error::schema(format!("events[{}]", i + 1), "ticks must be non-decreasing"));
            }
        }
        if let Some(e) = self.events.iter().position(|e| e.tick >= self.ticks) {
            return Err(Error::schema(format!("events[{e}]"), "event scheduled after the last tick"));
        }
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let s: Script = from_json(&read_text(path)?)?;
        s.validate()?;
        Ok(s)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_atomic(path, to_json(self, "script")?)
    }
}

/// Raw text of a recorded message: strings are passed through unchanged,
/// anything else is re-serialized.
fn raw_text(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Runs the script from the scene's current state, handing every outgoing
/// message (replies and frames, in order) to `sink` as one JSON line.
pub fn replay(scene: &mut Scene, script: &Script, sink: &mut dyn FnMut(&str)) -> Result<()> {
    script.validate()?;
    let mut events = script.events.iter().peekable();
    for t in 0..script.ticks {
        while let Some(e) = events.next_if(|e| e.tick == t) {
            for reply in scene.handle_message(&raw_text(&e.message)) {
                sink(&reply.to_json());
            }
        }
        let out = scene.tick();
        if let Some(err) = out.error {
            sink(&Message::Error(err).to_json());
        }
        sink(&Message::Frame(out.frame).to_json());
    }
    Ok(())
}
