//! Finite-element ground truth: explicit dynamics of a compressible
//! Mooney-Rivlin solid with Prony-series viscoelasticity.

pub mod dataset;
pub mod element;
pub mod material;
pub mod prony;
pub mod solver;

pub use dataset::{generate_dataset, load_dataset, save_dataset, Dataset, DatasetSpec};
pub use element::{deformation_gradient, ElementGeometry};
pub use material::{pk2_stress, MaterialParams, PronyTerm};
pub use prony::{prony_update, PronyUpdate};
pub use solver::{simulate, damped_stability_dt, stability_dt, Simulation, SolverOptions};
