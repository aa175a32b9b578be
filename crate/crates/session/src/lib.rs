//! Real-time session: scene state, the fixed-timestep tick, the `wire/1`
//! protocol and its WebSocket server.

pub mod replay;
pub mod scene;
pub mod server;
pub mod wire;

pub use replay::{replay, Script, ScriptEvent, SCRIPT_SCHEMA};
pub use scene::{Body, BodyConfig, MeshSource, Scene, SceneConfig, SceneSettings, ScalarField, TickOutput, SCENE_SCHEMA};
pub use server::{serve, ServeOptions, ServeSummary};
pub use wire::{parse_message, Message, WIRE_SCHEMA};
