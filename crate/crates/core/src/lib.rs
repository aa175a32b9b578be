pub mod checkpoint;
pub mod error;
pub mod fem;
pub mod generic;
pub mod graph;
pub mod interaction;
pub mod io;
pub mod mesh;
pub mod nn;
pub mod render;
pub mod state;
pub mod tignn;
pub mod train;

pub use error::{Error, Result};
