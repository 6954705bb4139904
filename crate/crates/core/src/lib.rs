pub mod augment;
pub mod corpus;
pub mod decode;
pub mod error;
pub mod eval;
pub mod model;
pub mod objectives;
pub mod seed;
pub mod synth;
pub mod teacher;
pub mod trainer;

pub use error::{Error, Result};
