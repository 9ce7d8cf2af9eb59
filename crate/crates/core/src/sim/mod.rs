//! Clock, random streams, configuration and shared state types.

pub mod config;
pub mod geometry;
pub mod rng;
pub mod stage;
pub mod world;
