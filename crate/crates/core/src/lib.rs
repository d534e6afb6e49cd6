//! Kernel-weighted pseudoweights for nonprobability cohorts, nonresponse
//! adjustment at follow-up, and Taylor-linearization variance of the
//! adjusted means.
//!
//! The numerical modules are generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix the common `f64` instantiation. The Monte Carlo
//! simulator in [`sim`] works in `f64`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod data;
pub mod estimate;
pub mod glm;
pub mod kw;
pub mod linalg;
pub mod nr;
pub mod pipeline;
pub mod scalar;
pub mod sim;

pub use scalar::Scalar;

pub type ReferenceSample = data::ReferenceSample<f64>;
pub type CohortSample = data::CohortSample<f64>;
pub type CohortRecord = data::CohortRecord<f64>;
pub type ReferenceRecord = data::ReferenceRecord<f64>;
pub type WeightSet = data::WeightSet<f64>;
pub type DesignMatrix = glm::DesignMatrix<f64>;
pub type PropensityFit = glm::PropensityFit<f64>;
pub type KernelSpec = kw::KernelSpec<f64>;
pub type NrConfig = nr::NrConfig<f64>;
pub type ResponseFit = nr::ResponseFit<f64>;
pub type EstimateReport = estimate::EstimateReport<f64>;
pub type TaylorDeviates = estimate::TaylorDeviates<f64>;
pub type WeightingConfig = pipeline::WeightingConfig<f64>;
