pub mod bench;
pub mod cascade;
pub mod dist;
pub mod error;
pub mod io;
pub mod ipm;
pub mod kkt;
pub mod linalg;
pub mod problem;
pub mod sigma;
pub mod stacked;

pub use error::{Error, Result};
