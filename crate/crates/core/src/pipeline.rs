//! End-to-end weighting: participation fit, KW pseudoweights, response fit,
//! kwNR weights.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{CohortSample, ReferenceSample, WeightSet};
use crate::estimate::EstimateError;
use crate::glm::{
    balancing_scores, participation_designs, participation_fit, DesignMatrix, DesignSpec,
    FitError, FitOptions, PropensityFit,
};
use crate::kw::{kw_pseudoweights, Bandwidth, KernelSpec, KwError};
use crate::nr::{fit_response_model, kwnr_weights, BaseWeightMode, NrConfig, NrError, ResponseFit};
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PipelineError {
    #[error("participation model: {0}")]
    Participation(FitError),
    #[error("kernel weighting: {0}")]
    Kernel(#[from] KwError),
    #[error("{0}")]
    Response(#[from] NrError),
    #[error("response design: {0}")]
    ResponseDesign(FitError),
    #[error("estimation: {0}")]
    Estimate(#[from] EstimateError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound(deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct WeightingConfig<T> {
    #[serde(default)]
    pub participation_design: DesignSpec,
    #[serde(default)]
    pub response_design: DesignSpec,
    #[serde(default)]
    pub kernel: KernelSpec<T>,
    #[serde(default)]
    pub nr: NrConfig<T>,
}

impl<T: Scalar> Default for WeightingConfig<T> {
    fn default() -> Self {
        Self {
            participation_design: DesignSpec::default(),
            response_design: DesignSpec::default(),
            kernel: KernelSpec::default(),
            nr: NrConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Weighting<T> {
    pub participation: PropensityFit<T>,
    pub cohort_scores: Vec<T>,
    pub reference_scores: Vec<T>,
    pub bandwidth: T,
    pub kw: WeightSet<T>,
    pub response: ResponseFit<T>,
    pub kwnr: WeightSet<T>,
}

/// Participation fit through KW pseudoweights.
pub fn kw_stage<T: Scalar>(
    cohort: &CohortSample<T>,
    reference: &ReferenceSample<T>,
    x_names: &[String],
    cfg: &WeightingConfig<T>,
) -> Result<(PropensityFit<T>, Vec<T>, Vec<T>, T, WeightSet<T>), PipelineError> {
    let fit = participation_fit(cohort, reference, x_names, &cfg.participation_design, &FitOptions::default())
        .map_err(PipelineError::Participation)?;
    let (xc, xs) = participation_designs(cohort, reference, x_names, &cfg.participation_design)
        .map_err(PipelineError::Participation)?;
    let bc = balancing_scores(&fit, &xc).map_err(PipelineError::Participation)?;
    let bs = balancing_scores(&fit, &xs).map_err(PipelineError::Participation)?;
    let h = cfg.kernel.resolve(&bc, &bs)?;
    let spec = KernelSpec {
        kernel: cfg.kernel.kernel,
        bandwidth: Bandwidth::Fixed(h),
    };
    let kw = kw_pseudoweights(&bc, &bs, &reference.design_weights(), &spec)?;
    Ok((fit, bc, bs, h, kw))
}

/// Response fit and kwNR weights given KW pseudoweights.
pub fn response_stage<T: Scalar>(
    cohort: &CohortSample<T>,
    kw: &WeightSet<T>,
    z_names: &[String],
    cfg: &WeightingConfig<T>,
) -> Result<(ResponseFit<T>, WeightSet<T>), PipelineError> {
    let z = DesignMatrix::build(&cohort.response_covariate_rows(), z_names, &cfg.response_design)
        .map_err(PipelineError::ResponseDesign)?;
    let base = match cfg.nr.base_weight_mode {
        BaseWeightMode::Kw => kw.clone(),
        BaseWeightMode::Unit => WeightSet::unit(cohort.len()),
    };
    let rfit = fit_response_model(cohort, z, &base, &cfg.nr, &FitOptions::default())?;
    let kwnr = kwnr_weights(kw, &rfit, cohort)?;
    Ok((rfit, kwnr))
}

pub fn run_weighting<T: Scalar>(
    cohort: &CohortSample<T>,
    reference: &ReferenceSample<T>,
    x_names: &[String],
    z_names: &[String],
    cfg: &WeightingConfig<T>,
) -> Result<Weighting<T>, PipelineError> {
    let (participation, cohort_scores, reference_scores, bandwidth, kw) =
        kw_stage(cohort, reference, x_names, cfg)?;
    let (response, kwnr) = response_stage(cohort, &kw, z_names, cfg)?;
    Ok(Weighting {
        participation,
        cohort_scores,
        reference_scores,
        bandwidth,
        kw,
        response,
        kwnr,
    })
}
