pub mod deskew;
pub mod error;
pub mod eval;
pub mod features;
pub mod imu;
pub mod io;
pub mod lie;
pub mod map;
pub mod pipeline;
pub mod selftest;
pub mod sim;
pub mod solver;

pub use error::{Error, Result};
