// Negated comparisons below deliberately reject NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod gait;
pub mod lipm;
pub mod nmpc;
pub mod qp;
pub mod sim;

pub use error::{Error, Result};
pub use lipm::{DcmOffset, LipmParams, RobotState, Vec2, ZmpSegment};
