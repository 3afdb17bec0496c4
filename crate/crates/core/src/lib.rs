//! Downlink massive-MIMO precoding under non-linear power amplifiers.
//!
//! The crate bundles everything needed to study distortion-aware precoding
//! on a desk:
//!
//! * [`channel`]: Rayleigh and line-of-sight channel generation and a binary
//!   dataset format.
//! * [`pa`]: polynomial, modified Rapp and soft-limiter amplifier models, and
//!   least-squares fitting of the polynomial to the Rapp curve.
//! * [`bussgang`]: Bussgang gain and distortion covariance, analytic and
//!   Monte-Carlo SNIDR, sum rate.
//! * [`precoders`]: MRT, ZF and Z3RO.
//! * [`dab`]: multi-restart projected gradient ascent on the sum rate.
//! * [`grad`]: a small reverse-mode gradient tape over real tensors.
//! * [`objective`]: the sum-rate objective recorded on that tape.
//! * [`gnn`]: the edge message-passing GNN precoder and its training loop.
//! * [`analysis`]: radiation patterns, PA consumed power, FLOP counts, DSP sizing.
//! * [`config`] and [`experiments`]: declarative experiment configs and the
//!   sweeps the CLI drives.

pub mod analysis;
pub mod bussgang;
pub mod channel;
pub mod config;
pub mod dab;
mod error;
pub mod experiments;
pub mod gnn;
pub mod grad;
pub mod linalg;
pub mod objective;
pub mod pa;
pub mod precoders;
mod rng;

pub use error::{Error, Result};
pub use linalg::{CMat, C64};
