pub mod acquisition;
pub mod autodiff;
pub mod config;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod knowledge;
pub mod ot;
pub mod rules;
pub mod train;
pub mod util;

pub use error::{Error, ErrorClass, Result};
