//! Distributed Gaussian-process scalar-field estimation over simulated
//! wireless sensor networks.
//!
//! Each sensor keeps a reduced-rank weight-space posterior (a Kalman filter
//! over Hilbert-space basis weights). Per sensing step the sensors agree on a
//! stacked measurement matrix through dual-extrema (max/min) consensus and
//! then run a multi-measurement Kalman update. The crate also contains the
//! average-consensus baseline (MADGP), a centralized kernel GP, a
//! convection-diffusion ground truth, a network simulator and the experiment
//! harness that drives everything.

// negated comparisons let NaN fail every range check
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod basis;
pub mod error;
pub mod field;
pub mod geometry;
pub mod gp;
pub mod harness;
pub mod kdgp;
mod linalg;
pub mod madgp;
pub mod maxplus;
pub mod network;

pub use basis::{BasisSet, Frame, KernelHyperparams, SpectralForm};
pub use error::{Error, Result};
pub use field::{FieldGrid, GridSpec};
pub use geometry::{Domain, Point};
pub use gp::{PosteriorState, Prediction, SensorReading};
pub use kdgp::{AssembledMeasurement, SharedMessage};
pub use madgp::MadgpState;
pub use maxplus::{MaxPlus, MaxPlusMatrix, MessageStack};
pub use network::{LinkModel, NetworkGraph};
