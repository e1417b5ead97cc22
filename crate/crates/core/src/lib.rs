//! Observational dropout: policies evolved jointly with world models that
//! only occasionally get to see the real environment.
//!
//! The pieces are small and composable: [`nn`] networks over flat parameter
//! vectors, two environments ([`cartpole`], [`gridworld`]), the [`dropout`]
//! wrapper, an [`es`] optimizer, and the experiment layers built on them.

pub mod analysis;
pub mod cartpole;
pub mod dream;
pub mod dropout;
pub mod es;
pub mod exec;
pub mod gridworld;
pub mod nn;
pub mod render;
pub mod rng;
pub mod stability;
pub mod tasks;

pub use dropout::{DropoutConfig, Environment, OutputMode, Policy, WorldModel};
pub use es::{EsConfig, GenerationReport, OpenEs, TrainOutcome, TrainSpec};
pub use exec::Execution;
pub use nn::{Architecture, MlpArchitecture, ParamVector, PlusConvArchitecture};
pub use rng::SeedScheme;
