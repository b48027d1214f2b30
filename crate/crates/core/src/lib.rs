//! Optical-cycle dynamics of optically pumped triplet spin defects.
//!
//! The crate models the negatively charged boron vacancy in hBN as a five-level
//! rate system (two ground-state spin manifolds, two excited-state manifolds and
//! a metastable shelving state) and provides everything needed to turn that model
//! into synthetic measurements:
//!
//! - [`model`]: rate parameters, the generator matrix, steady states, calibration
//! - [`kinetics`]: exact and RK4 propagation, laser flanks, microwave population maps
//! - [`pulseseq`]: a small pulse-sequence language compiled into channel timelines
//! - [`detector`]: photon-counting histograms, shot noise, windowed metrics
//! - [`fitting`]: a Levenberg-Marquardt engine and the analysis fit models
//! - [`experiments`]: end-to-end protocols (PL recovery, initialization, Rabi, T1, ODMR)
//! - [`config`]: preset files and run configuration

// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod detector;
pub mod error;
pub mod experiments;
pub mod fitting;
pub mod io;
pub mod kinetics;
pub mod model;
pub mod pulseseq;

pub use error::{Error, Result};
pub use model::{Populations, RateParams, SpinSystemConfig};
