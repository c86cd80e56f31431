// NaN must fail the positivity checks, hence `!(x > 0.0)` throughout.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod par;
pub mod sphere_harmonics;
pub mod lung_model;
pub mod cpo_protocol;
pub mod timesync;
pub mod session;
pub mod harness;
