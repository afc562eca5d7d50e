//! First-arrival picking for seismic shot gathers.
//!
//! The crate covers the whole path from data to picks:
//!
//! * [`synth`] builds layered-earth shot gathers with known first arrivals,
//!   harmonic power-line noise and disconnected pick lines.
//! * [`unet`] is a small fully-convolutional encoder/decoder that maps a
//!   gather to per-pixel signal / non-signal probabilities.
//! * [`losses`] holds the cross-entropy baseline and the Lovász hinge
//!   surrogate for the Jaccard loss, with analytic gradients.
//! * [`picking`] turns a binary mask into a pick line (first-point and
//!   bidirectional nearest-point picking).
//! * [`metrics`] scores masks and pick lines.
//! * [`pipeline`] wires everything into train / predict / pick / evaluate /
//!   reproduce workflows backed by the on-disk formats in [`io`].

// `!(x > 0.0)` is deliberate throughout: it rejects NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod io;
pub mod losses;
pub mod metrics;
pub mod nn;
pub mod optim;
pub mod picking;
pub mod pipeline;
pub mod plot;
pub mod rng;
pub mod synth;
pub mod types;
pub mod unet;

pub use error::{Error, Result};
pub use types::{GatherImage, PickLine, SegmentationMask};
