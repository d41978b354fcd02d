pub mod chart;
pub mod corpus;
pub mod encoders;
pub mod error;
pub mod evaluation;
pub mod grammar;
pub mod matching;
pub mod model;
pub mod params;
pub mod training;
pub mod tree;

pub use error::{Error, ErrorKind, Result};
