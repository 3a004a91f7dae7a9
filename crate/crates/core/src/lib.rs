//! Simulation and analysis toolkit for imaging by coincidence from
//! entangled photon pairs.
//!
//! The crate is organised bottom-up:
//!
//! * [`photon_model`] draws signal, idler and coincidence counts for one
//!   dwell of an entangled or classically split source.
//! * [`phantom`] builds synthetic objects (bar, edge, fibre and
//!   birefringent targets).
//! * [`scanner`] blurs phantoms with the classical and coincidence
//!   point-spread functions and raster-scans them into count frames.
//! * [`estimators`] turns count images into transmittance estimates,
//!   including the covariance-over-variance family.
//! * [`polarimetry`] covers the CHSH test and ghost birefringence.
//! * [`metrology`] fits edge spread functions and depth-of-field curves and
//!   computes the global SSIM.
//! * [`experiments`] wires everything into reproducible, config-driven runs.

// `!(x > 0.0)` rejects NaN together with out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod error;
pub mod estimators;
pub mod experiments;
pub mod io;
pub mod metrology;
pub mod phantom;
pub mod photon_model;
pub mod polarimetry;
pub mod rng;
pub mod scanner;

pub use error::{Error, Result};
pub use estimators::{CovMultiplier, EstimateImage, Method};
pub use metrology::{FitResult, Measurement};
pub use phantom::{Field, Phantom};
pub use photon_model::{CountSample, PairChannel, SourceMode, SourceParams};
pub use polarimetry::{BellModel, BirefringencePoint, CoincidenceQuad};
pub use scanner::{CountFrame, PsfModel, ScanConfig};
