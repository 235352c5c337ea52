//! Weighted-l1 penalized risk minimization on finite designs, with exact
//! oracle bounds and Monte Carlo checks of the underlying concentration
//! inequalities.

pub mod bounds;
pub mod design;
pub mod error;
pub mod harness;
pub mod lab;
pub mod losses;
pub mod rng;
pub mod scenario;
pub mod solver;

pub use error::{Error, Result};
