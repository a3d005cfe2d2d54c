//! Geodesics on split supermanifolds `ΠE` and their reduction to classical
//! geodesics on the total space of `E`.

// index loops mirror the tensor notation
#![allow(clippy::needless_range_loop)]

pub mod checks;
pub mod error;
pub mod expr;
pub mod geodesic;
pub mod geometry;
pub mod grassmann;
pub mod reduction;
pub mod sampling;
pub mod scenario;
pub mod superfield;
