pub mod ablation;
pub mod bench;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod fsutil;
pub mod fuzzy;
pub mod kg;
pub mod measures;
pub mod model;
pub mod projection;
pub mod query;
pub mod training;
pub mod transport;

pub use error::{Result, WfreError};
pub use measures::BoundedHistogram;
