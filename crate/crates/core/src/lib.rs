pub mod error;
pub mod qcore;
pub mod rng;

pub use error::{Error, Result};
pub mod stats;
pub mod stoich;
pub mod sparse;
pub mod model;
pub mod ensembles;
pub mod gapm;
pub mod condwf;
pub mod dynamics;
pub mod verify;
