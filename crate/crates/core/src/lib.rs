//! Parameter-less self-organizing map laboratory.

pub mod classify;
pub mod error;
pub mod experiment;
pub mod field;
pub mod ik;
pub mod lattice;
pub mod metrics;
pub mod ordering;
pub mod plsom;
pub mod rng;
pub mod som;
pub mod trainer;

pub use error::{Error, Result};
pub use lattice::{find_winner, init_weights, GridMetric, InitScheme, Lattice, WeightMatrix};
pub use plsom::{PlsomParams, PlsomTrainer, ThetaVariant};
pub use som::{SomParams, SomTrainer};
pub use trainer::{AnyTrainer, Trainer, UpdatePlan};
