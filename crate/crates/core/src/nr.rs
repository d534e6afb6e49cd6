//! Follow-up response propensity model and nonresponse-adjusted KW weights.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{CohortSample, Provenance, WeightSet};
use crate::glm::{fit_weighted_logistic, DesignMatrix, FitError, FitOptions, PropensityFit};
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NrError {
    #[error("every cohort unit responded; the response model is not identified")]
    AllRespond,
    #[error("no cohort unit responded")]
    NoneRespond,
    #[error("base weights have provenance {actual:?} but the configuration expects {expected:?}")]
    Provenance {
        expected: Provenance,
        actual: Provenance,
    },
    #[error("{what} has length {actual}, cohort has {expected} units")]
    Length {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("propensity floor must lie in (0, 0.5), got {0}")]
    InvalidFloor(f64),
    #[error("internal invariant violated: unit {unit} has response propensity {value} below the floor")]
    BelowFloor { unit: usize, value: f64 },
    #[error("response model: {0}")]
    Fit(#[from] FitError),
}

/// Weights entering the response pseudo-likelihood.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaseWeightMode {
    /// Baseline KW pseudoweights.
    #[default]
    Kw,
    /// A common weight of one.
    Unit,
}

impl BaseWeightMode {
    fn provenance(self) -> Provenance {
        match self {
            BaseWeightMode::Kw => Provenance::Kw,
            BaseWeightMode::Unit => Provenance::Unit,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, bound(deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct NrConfig<T> {
    #[serde(default)]
    pub base_weight_mode: BaseWeightMode,
    /// Lower bound applied to fitted propensities before they divide a weight.
    /// `None` disables flooring.
    #[serde(default = "default_floor")]
    pub propensity_floor: Option<T>,
}

fn default_floor<T: Scalar>() -> Option<T> {
    Some(T::lit(0.01))
}

impl<T: Scalar> Default for NrConfig<T> {
    fn default() -> Self {
        Self {
            base_weight_mode: BaseWeightMode::Kw,
            propensity_floor: default_floor(),
        }
    }
}

impl<T: Scalar> NrConfig<T> {
    pub fn validate(&self) -> Result<(), NrError> {
        match self.propensity_floor {
            Some(f) if !(f > T::zero() && f < T::lit(0.5)) => {
                Err(NrError::InvalidFloor(f.to_f64_lossy()))
            }
            _ => Ok(()),
        }
    }
}

/// Fitted response model plus the weights it was fitted with.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseFit<T> {
    /// The unfloored pseudo-likelihood fit.
    pub fit: PropensityFit<T>,
    /// Response design `g(z)`, kept for linearization.
    pub design: DesignMatrix<T>,
    /// `d*_i` used in the pseudo-likelihood.
    pub base_weights: WeightSet<T>,
    /// Fitted propensities after flooring; these divide the KW weights.
    pub propensities: Vec<T>,
    pub floored_count: usize,
    pub floor: Option<T>,
}

pub fn fit_response_model<T: Scalar>(
    cohort: &CohortSample<T>,
    z: DesignMatrix<T>,
    base_weights: &WeightSet<T>,
    cfg: &NrConfig<T>,
    opts: &FitOptions<T>,
) -> Result<ResponseFit<T>, NrError> {
    cfg.validate()?;
    let n = cohort.len();
    for (what, len) in [("response design", z.nrows()), ("base weights", base_weights.len())] {
        if len != n {
            return Err(NrError::Length {
                what,
                expected: n,
                actual: len,
            });
        }
    }
    let expected = cfg.base_weight_mode.provenance();
    if base_weights.provenance() != expected {
        return Err(NrError::Provenance {
            expected,
            actual: base_weights.provenance(),
        });
    }
    let respond = cohort.respond_mask();
    match cohort.n_respondents() {
        0 => return Err(NrError::NoneRespond),
        k if k == n => return Err(NrError::AllRespond),
        _ => {}
    }

    let fit = fit_weighted_logistic(&z, &respond, base_weights.values(), opts)?;
    let mut floored_count = 0;
    let propensities = fit
        .fitted
        .iter()
        .map(|&r| match cfg.propensity_floor {
            Some(f) if r < f => {
                floored_count += 1;
                f
            }
            _ => r,
        })
        .collect();
    Ok(ResponseFit {
        fit,
        design: z,
        base_weights: base_weights.clone(),
        propensities,
        floored_count,
        floor: cfg.propensity_floor,
    })
}

/// `d_i / r_i` for respondents, zero otherwise.
pub fn kwnr_weights<T: Scalar>(
    kw: &WeightSet<T>,
    rfit: &ResponseFit<T>,
    cohort: &CohortSample<T>,
) -> Result<WeightSet<T>, NrError> {
    let n = cohort.len();
    for (what, len) in [("KW weights", kw.len()), ("response propensities", rfit.propensities.len())] {
        if len != n {
            return Err(NrError::Length {
                what,
                expected: n,
                actual: len,
            });
        }
    }
    let values = cohort
        .records()
        .iter()
        .zip(kw.values())
        .zip(&rfit.propensities)
        .enumerate()
        .map(|(i, ((rec, &d), &r))| {
            if let Some(f) = rfit.floor {
                if r < f {
                    return Err(NrError::BelowFloor {
                        unit: i,
                        value: r.to_f64_lossy(),
                    });
                }
            }
            Ok(if rec.respond { d / r } else { T::zero() })
        })
        .collect::<Result<Vec<T>, _>>()?;
    Ok(WeightSet::new(values, Provenance::KwNr).expect("ratio of valid weights"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::CohortRecord;
    use crate::glm::DesignSpec;
    use crate::linalg::Matrix;

    fn cohort(respond: &[bool]) -> CohortSample<f64> {
        CohortSample::new(
            respond
                .iter()
                .enumerate()
                .map(|(i, &r)| CohortRecord {
                    covariates: vec![i as f64],
                    response_covariates: vec![(i % 3) as f64 - 1.0],
                    respond: r,
                    outcome: Some(1.0),
                    subgroup: None,
                })
                .collect(),
        )
        .unwrap()
    }

    fn z_of(c: &CohortSample<f64>) -> DesignMatrix<f64> {
        DesignMatrix::build(&c.response_covariate_rows(), &["z".into()], &DesignSpec::default()).unwrap()
    }

    fn dummy_fit(p: Vec<f64>) -> ResponseFit<f64> {
        let n = p.len();
        ResponseFit {
            fit: PropensityFit {
                coefficients: vec![0.0],
                fitted: p.clone(),
                info_matrix: Matrix::identity(1),
                converged: true,
                iterations: 0,
                max_score_norm: 0.0,
                loglik_trace: vec![0.0],
            },
            design: DesignMatrix::from_parts(vec![1.0; n], n, 1, vec!["1".into()]).unwrap(),
            base_weights: WeightSet::unit(n),
            propensities: p,
            floored_count: 0,
            floor: Some(0.01),
        }
    }

    #[test]
    fn arithmetic_example() {
        let c = cohort(&[true, false]);
        let kw = WeightSet::new(vec![2.0, 2.0], Provenance::Kw).unwrap();
        let w = kwnr_weights(&kw, &dummy_fit(vec![0.5, 0.5]), &c).unwrap();
        assert_eq!(w.values(), &[4.0, 0.0]);
        assert_eq!(w.provenance(), Provenance::KwNr);
    }

    #[test]
    fn unit_propensity_is_identity() {
        let c = cohort(&[true, true, false]);
        let kw = WeightSet::new(vec![1.5, 2.5, 3.0], Provenance::Kw).unwrap();
        let w = kwnr_weights(&kw, &dummy_fit(vec![1.0; 3]), &c).unwrap();
        assert_eq!(&w.values()[..2], &kw.values()[..2]);
    }

    #[test]
    fn below_floor_is_internal_error() {
        let c = cohort(&[true]);
        let kw = WeightSet::new(vec![1.0], Provenance::Kw).unwrap();
        let err = kwnr_weights(&kw, &dummy_fit(vec![0.001]), &c).unwrap_err();
        assert!(matches!(err, NrError::BelowFloor { unit: 0, .. }));
    }

    #[test]
    fn degenerate_response_patterns() {
        let all = cohort(&[true; 4]);
        let err = fit_response_model(&all, z_of(&all), &WeightSet::unit(4), &NrConfig { base_weight_mode: BaseWeightMode::Unit, ..Default::default() }, &FitOptions::default());
        assert_eq!(err.unwrap_err(), NrError::AllRespond);
        let none = cohort(&[false; 4]);
        let err = fit_response_model(&none, z_of(&none), &WeightSet::unit(4), &NrConfig { base_weight_mode: BaseWeightMode::Unit, ..Default::default() }, &FitOptions::default());
        assert_eq!(err.unwrap_err(), NrError::NoneRespond);
    }

    #[test]
    fn provenance_must_match_mode() {
        let c = cohort(&[true, false, true, false]);
        let err = fit_response_model(&c, z_of(&c), &WeightSet::unit(4), &NrConfig::default(), &FitOptions::default());
        assert!(matches!(err.unwrap_err(), NrError::Provenance { .. }));
    }

    #[test]
    fn floor_validation() {
        let cfg = NrConfig {
            propensity_floor: Some(0.6_f64),
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(NrError::InvalidFloor(_))));
        let off: NrConfig<f64> = NrConfig {
            propensity_floor: None,
            ..Default::default()
        };
        assert!(off.validate().is_ok());
    }

    #[test]
    fn flooring_counts_units() {
        // Strong response gradient pushes low-z units under a generous floor.
        let n = 60;
        let recs: Vec<CohortRecord<f64>> = (0..n)
            .map(|i| {
                let z = (i as f64 - 30.0) / 6.0;
                CohortRecord {
                    covariates: vec![z],
                    response_covariates: vec![z],
                    respond: (i * 37 % 60) as f64 / 60.0 < 1.0 / (1.0 + (-1.5 * z).exp()),
                    outcome: Some(0.0),
                    subgroup: None,
                }
            })
            .collect();
        let c = CohortSample::new(recs).unwrap();
        let cfg = NrConfig {
            base_weight_mode: BaseWeightMode::Unit,
            propensity_floor: Some(0.2),
        };
        let rf = fit_response_model(&c, z_of(&c), &WeightSet::unit(n), &cfg, &FitOptions::default()).unwrap();
        let below = rf.fit.fitted.iter().filter(|&&r| r < 0.2).count();
        assert!(below > 0);
        assert_eq!(rf.floored_count, below);
        assert!(rf.propensities.iter().all(|&r| r >= 0.2));
    }
}
