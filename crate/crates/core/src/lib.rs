//! Dynamic multi-concept erasure on a desk-scale conditional diffusion model.
//!
//! The crate trains one low-rank adapter per concept on a single
//! cross-attention block, constrains the adapters' induced output shifts to
//! be mutually orthogonal (both on sampled inputs and through an
//! input-agnostic weight-space condition), and composes an arbitrary subset
//! of them at inference time. A toy 2-D mixture world stands in for an image
//! generator so every claim is measurable in milliseconds.
//!
//! Layering, bottom to top:
//! - [`matrix`] / [`tape`]: dense matrices and reverse-mode differentiation;
//! - [`attention`]: the cross-attention block and its low-rank adapters;
//! - [`ortho`]: orthogonality scores, losses, and the weight-space oracle;
//! - [`schedule`] / [`world`] / [`denoiser`] / [`sampler`]: the toy
//!   diffusion model;
//! - [`training`]: base-model and adapter optimization;
//! - [`compose`]: inference-time adapter composition strategies;
//! - [`metrics`] / [`taxonomy`] / [`protocol`]: the evaluation bench;
//! - [`verify`]: self-contained correctness oracles (also run by the CLI).
//!
//! The math core is generic over the float type via [`scalar::Scalar`];
//! orchestration code uses the [`Mat`] = `Matrix<f64>` alias.

pub mod attention;
pub mod compose;
pub mod denoiser;
pub mod error;
pub mod gradcheck;
pub mod matrix;
pub mod metrics;
pub mod ortho;
pub mod protocol;
pub mod sampler;
pub mod scalar;
pub mod schedule;
pub mod seeds;
pub mod tape;
pub mod taxonomy;
pub mod training;
pub mod verify;
pub mod world;

pub use attention::{AttentionWeights, ConceptId, LoraAdapter, Proj, ProjSet};
pub use compose::{ErasureRequest, Strategy};
pub use denoiser::Denoiser;
pub use error::{Error, Result};
pub use matrix::Matrix;
pub use metrics::MetricsReport;
pub use protocol::{ExperimentReport, ExperimentSpec, Method, ProtocolSpec};
pub use scalar::Scalar;
pub use schedule::NoiseSchedule;
pub use tape::{Tape, Var};
pub use taxonomy::Taxonomy;
pub use verify::{CheckOutcome, CheckStatus};
pub use world::{ConceptWorld, Condition, WorldSpec};

/// Default dense matrix used by all orchestration code.
pub type Mat = Matrix<f64>;
