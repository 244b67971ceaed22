//! Continuous piecewise-affine (CPA) networks with a region-seeding
//! pre-activation penalty, exact enumeration of the affine regions they induce
//! on a 2D domain, and randomized checks of local region-growth bounds.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, the experiment
//! runner and the CLI live in the `cpaseed` crate.

#![cfg_attr(not(test), no_std)]
// `!(x > y)` deliberately rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

pub mod data;
pub mod geometry;
pub mod linalg;
pub mod net;
pub mod rng;
pub mod seeding;
pub mod verify;

pub use linalg::Matrix;
pub use net::{CpaGraph, ForwardTrace};
pub use rng::Rng;
