//! Robust gain-scheduled attitude control design for INDI quadrotors.

pub mod error;
pub mod linsys;
pub mod margins;
pub mod optimize;
pub mod plant;
pub mod scalar;
pub mod sim;
pub mod synthesis;
pub mod uncertainty;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type StateSpace64 = linsys::StateSpace<f64>;
pub type StateSpace32 = linsys::StateSpace<f32>;
