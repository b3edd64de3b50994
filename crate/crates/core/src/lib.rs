//! Micro-deformation displacement estimation for a sensing base station.
//!
//! The pipeline runs from synthetic multi-carrier echoes ([`sim`]) through phase
//! extraction ([`phase`]) to a learnable template-matching network
//! ([`ltm`]) trained with [`loss`] and [`train`] on datasets from
//! [`dataset`]. [`baselines`] holds the classical references and the event
//! metrics. The kernels are generic over [`Real`]; the aliases below fix them
//! to `f64`, which the millimetre-scale phase work needs.

pub mod baselines;
pub mod dataset;
pub mod diff;
pub mod error;
pub mod io;
pub mod loss;
pub mod ltm;
pub mod phase;
pub mod scalar;
pub mod sim;
pub mod train;

pub use error::{Error, ErrorCategory, Result};
pub use scalar::{wrap_angle, Real};
pub use sim::{IsacConfig, SceneParams, SPEED_OF_LIGHT};

pub type EchoCube = sim::EchoCube<f64>;
pub type PhaseSeries = phase::PhaseSeries<f64>;
pub type DisplacementSeries = phase::DisplacementSeries<f64>;
pub type Tape = diff::Tape<f64>;
pub type ParamStore = diff::ParamStore<f64>;
pub type LtmParams = ltm::LtmParams<f64>;
pub type MddEstimate = ltm::MddEstimate<f64>;
