//! Hájek-type point estimators and the two-component Taylor-linearization
//! variance of the nonresponse-adjusted KW mean.
//!
//! With `a_l = d_l / r_l`, respondent indicator `I_l`, domain indicator `D_l`
//! and centre `c` (the domain estimate itself):
//!
//! ```text
//! den   = sum_l a_l I_l D_l
//! U     = sum_i d*_i (I_i - r_i) z_i                       (response score)
//! v     = sum_k a_k (1 - r_k) I_k D_k z_k (y_k - c)
//! dC_l  = a_l I_l D_l (y_l - c) { 1 - (1 - r_l) z_l' Info^-1 U } / den
//! dR_l  = [ a_l I_l D_l (y_l - c) - d*_l z_l' Info^-1 v ] / den
//! vWR   = n_c / (n_c - 1) * sum_l (dC_l - mean dC)^2
//! var2  = n_r (1 - n_r / n_c) * s^2(dR over respondents)
//! var1  = max(vWR - var2, 0)
//! ```
//!
//! `dC` carries the response indicator, so `vWR` estimates the participation
//! and response components together; `var1` is the participation part alone.
//!
//! Nonrespondent outcomes are never read: for a nonrespondent the first term of
//! `dR_l` is taken at `y_l = c`, which leaves only the propensity correction.

use thiserror::Error;

use crate::data::{CohortSample, WeightSet};
use crate::linalg::{dot, LinalgError, SpdSolver};
use crate::nr::ResponseFit;
use crate::scalar::{compensated_sum, Scalar};

/// Two-sided 95% normal quantile.
pub const Z_95: f64 = 1.959964;

/// Information matrices with a larger 1-norm condition number are refused.
pub const CONDITION_LIMIT: f64 = 1e12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EstimateError {
    #[error("weights have zero mass on the selected units")]
    ZeroMass,
    #[error("{what} has length {actual}, expected {expected}")]
    Length {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("variance needs at least two {what}, got {n}")]
    TooFew { what: &'static str, n: usize },
    #[error("subgroup `{0}` has no respondents")]
    EmptySubgroup(String),
    #[error("respondent-count arguments invalid: n_r = {n_r}, n_c = {n_c}")]
    Counts { n_r: usize, n_c: usize },
    #[error("response information matrix: {0}")]
    Information(#[from] LinalgError),
}

/// `sum w_i m_i y_i / sum w_i m_i`.
pub fn mean_weighted<T: Scalar>(y: &[T], w: &[T], mask: &[bool]) -> Result<T, EstimateError> {
    check_len("weights", y.len(), w.len())?;
    check_len("mask", y.len(), mask.len())?;
    let mut num = Vec::with_capacity(y.len());
    let mut den = Vec::with_capacity(y.len());
    for ((&yi, &wi), &m) in y.iter().zip(w).zip(mask) {
        if m {
            num.push(wi * yi);
            den.push(wi);
        }
    }
    let den = compensated_sum(den);
    if !(den > T::zero()) {
        return Err(EstimateError::ZeroMass);
    }
    Ok(compensated_sum(num) / den)
}

fn check_len(what: &'static str, expected: usize, actual: usize) -> Result<(), EstimateError> {
    if expected == actual {
        Ok(())
    } else {
        Err(EstimateError::Length {
            what,
            expected,
            actual,
        })
    }
}

/// Per-unit `(d_l / r_l) I_l` and observed outcomes (zero where unobserved).
fn adjusted_weights<T: Scalar>(
    cohort: &CohortSample<T>,
    kw: &WeightSet<T>,
    rfit: &ResponseFit<T>,
) -> Result<(Vec<T>, Vec<T>), EstimateError> {
    let n = cohort.len();
    check_len("KW weights", n, kw.len())?;
    check_len("response propensities", n, rfit.propensities.len())?;
    let mut a = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for ((rec, &d), &r) in cohort.records().iter().zip(kw.values()).zip(&rfit.propensities) {
        match rec.observed_outcome() {
            Some(v) => {
                a.push(d / r);
                y.push(v);
            }
            None => {
                a.push(T::zero());
                y.push(T::zero());
            }
        }
    }
    Ok((a, y))
}

/// Nonresponse-adjusted KW mean over respondents.
pub fn estimate_kwnr<T: Scalar>(
    cohort: &CohortSample<T>,
    kw: &WeightSet<T>,
    rfit: &ResponseFit<T>,
) -> Result<T, EstimateError> {
    let all = vec![true; cohort.len()];
    estimate_domain(cohort, kw, rfit, &all)
}

fn estimate_domain<T: Scalar>(
    cohort: &CohortSample<T>,
    kw: &WeightSet<T>,
    rfit: &ResponseFit<T>,
    domain: &[bool],
) -> Result<T, EstimateError> {
    let (a, y) = adjusted_weights(cohort, kw, rfit)?;
    let mask: Vec<bool> = cohort
        .records()
        .iter()
        .zip(domain)
        .map(|(r, &d)| r.respond && d)
        .collect();
    mean_weighted(&y, &a, &mask)
}

/// Linearization deviates over the cohort.
#[derive(Debug, Clone, PartialEq)]
pub struct TaylorDeviates<T> {
    /// Participation deviates; zero for nonrespondents.
    pub delta_c: Vec<T>,
    /// Response deviates.
    pub delta_r: Vec<T>,
}

/// Deviates for the full-cohort estimator centred at `y_center`.
pub fn taylor_deviates<T: Scalar>(
    cohort: &CohortSample<T>,
    kw: &WeightSet<T>,
    rfit: &ResponseFit<T>,
    y_center: T,
) -> Result<TaylorDeviates<T>, EstimateError> {
    let all = vec![true; cohort.len()];
    domain_deviates(cohort, kw, rfit, &all, y_center)
}

/// Deviates for the estimator restricted to `domain`.
pub fn domain_deviates<T: Scalar>(
    cohort: &CohortSample<T>,
    kw: &WeightSet<T>,
    rfit: &ResponseFit<T>,
    domain: &[bool],
    y_center: T,
) -> Result<TaylorDeviates<T>, EstimateError> {
    let n = cohort.len();
    check_len("domain mask", n, domain.len())?;
    let (a, y) = adjusted_weights(cohort, kw, rfit)?;
    let z = &rfit.design;
    check_len("response design", n, z.nrows())?;
    let p = z.ncols();
    let r_hat = &rfit.propensities;
    let d_star = rfit.base_weights.values();
    let respond = cohort.respond_mask();

    let den = compensated_sum((0..n).filter(|&l| domain[l]).map(|l| a[l]));
    if !(den > T::zero()) {
        return Err(EstimateError::ZeroMass);
    }
    let solver = SpdSolver::new(&rfit.fit.info_matrix, T::lit(CONDITION_LIMIT))?;

    // Response score at the fitted coefficients, unfloored propensities.
    let mut score = vec![T::zero(); p];
    for (i, &fitted) in rfit.fit.fitted.iter().enumerate() {
        let resid = if respond[i] { T::one() } else { T::zero() } - fitted;
        for (s, &zij) in score.iter_mut().zip(z.row(i)) {
            *s += d_star[i] * resid * zij;
        }
    }
    let info_inv_score = solver.solve(&score);

    // e_l = a_l I_l D_l (y_l - c); a_l is already zero for nonrespondents.
    let e: Vec<T> = (0..n)
        .map(|l| if domain[l] { a[l] * (y[l] - y_center) } else { T::zero() })
        .collect();
    let mut v = vec![T::zero(); p];
    for k in 0..n {
        if e[k] != T::zero() {
            let c = (T::one() - r_hat[k]) * e[k];
            for (vj, &zkj) in v.iter_mut().zip(z.row(k)) {
                *vj += c * zkj;
            }
        }
    }
    let info_inv_v = solver.solve(&v);

    let mut delta_c = Vec::with_capacity(n);
    let mut delta_r = Vec::with_capacity(n);
    for l in 0..n {
        let zl = z.row(l);
        let brace = T::one() - (T::one() - r_hat[l]) * dot(zl, &info_inv_score);
        delta_c.push(e[l] * brace / den);
        delta_r.push((e[l] - d_star[l] * dot(zl, &info_inv_v)) / den);
    }
    Ok(TaylorDeviates { delta_c, delta_r })
}

/// With-replacement variance of the summed participation deviates.
pub fn var1<T: Scalar>(delta_c: &[T]) -> Result<T, EstimateError> {
    let n = delta_c.len();
    if n < 2 {
        return Err(EstimateError::TooFew {
            what: "cohort units",
            n,
        });
    }
    let nt = T::from_usize_lossy(n);
    let mean = compensated_sum(delta_c.iter().copied()) / nt;
    let ss = compensated_sum(delta_c.iter().map(|&d| (d - mean) * (d - mean)));
    Ok(nt / T::from_usize_lossy(n - 1) * ss)
}

/// Participation component given the with-replacement variance of the
/// participation deviates and the response component.
pub fn participation_component<T: Scalar>(with_replacement: T, var2: T) -> T {
    (with_replacement - var2).max(T::zero())
}

/// `n_r (1 - n_r / n_c) s^2` with `s^2` the sample variance of the
/// respondents' response deviates.
pub fn var2<T: Scalar>(respondent_deltas: &[T], n_c: usize) -> Result<T, EstimateError> {
    let n_r = respondent_deltas.len();
    if n_r > n_c || n_c == 0 {
        return Err(EstimateError::Counts { n_r, n_c });
    }
    if n_r < 2 {
        return Err(EstimateError::TooFew {
            what: "respondents",
            n: n_r,
        });
    }
    let nr = T::from_usize_lossy(n_r);
    let mean = compensated_sum(respondent_deltas.iter().copied()) / nr;
    let s2 = compensated_sum(respondent_deltas.iter().map(|&d| (d - mean) * (d - mean)))
        / T::from_usize_lossy(n_r - 1);
    Ok(nr * (T::one() - nr / T::from_usize_lossy(n_c)) * s2)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaylorVariance<T> {
    pub var1: T,
    pub var2: T,
    pub total: T,
    pub se: T,
    pub ci95: (T, T),
}

impl<T: Scalar> TaylorVariance<T> {
    pub fn new(estimate: T, var1: T, var2: T) -> Self {
        let total = var1 + var2;
        let se = total.sqrt();
        let half = T::lit(Z_95) * se;
        Self {
            var1,
            var2,
            total,
            se,
            ci95: (estimate - half, estimate + half),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateReport<T> {
    pub estimate: T,
    /// Missing when the variance is undefined; `variance_note` says why.
    pub variance: Option<TaylorVariance<T>>,
    pub variance_note: Option<String>,
    /// Cohort units in the domain.
    pub n_used: usize,
    /// Respondents in the domain.
    pub n_resp: usize,
}

/// Point estimate and TL variance of the kwNR mean over the whole cohort.
pub fn kwnr_report<T: Scalar>(
    cohort: &CohortSample<T>,
    kw: &WeightSet<T>,
    rfit: &ResponseFit<T>,
) -> Result<EstimateReport<T>, EstimateError> {
    let all = vec![true; cohort.len()];
    domain_report(cohort, kw, rfit, &all, "cohort")
}

/// Point estimate and TL variance of the kwNR mean for one subgroup label.
pub fn estimate_subgroup<T: Scalar>(
    cohort: &CohortSample<T>,
    kw: &WeightSet<T>,
    rfit: &ResponseFit<T>,
    label: &str,
) -> Result<EstimateReport<T>, EstimateError> {
    let mask = cohort.subgroup_mask(label);
    domain_report(cohort, kw, rfit, &mask, label)
}

/// Report for an arbitrary domain mask. Domains with a single respondent get
/// an estimate but no variance.
pub fn domain_report<T: Scalar>(
    cohort: &CohortSample<T>,
    kw: &WeightSet<T>,
    rfit: &ResponseFit<T>,
    domain: &[bool],
    label: &str,
) -> Result<EstimateReport<T>, EstimateError> {
    check_len("domain mask", cohort.len(), domain.len())?;
    let n_used = domain.iter().filter(|&&d| d).count();
    let n_resp = cohort
        .records()
        .iter()
        .zip(domain)
        .filter(|(r, &d)| d && r.respond)
        .count();
    if n_resp == 0 {
        return Err(EstimateError::EmptySubgroup(label.to_string()));
    }
    let estimate = estimate_domain(cohort, kw, rfit, domain).map_err(|e| match e {
        EstimateError::ZeroMass => EstimateError::EmptySubgroup(label.to_string()),
        other => other,
    })?;
    if n_resp < 2 {
        return Ok(EstimateReport {
            estimate,
            variance: None,
            variance_note: Some("n_resp<2".into()),
            n_used,
            n_resp,
        });
    }
    let dev = domain_deviates(cohort, kw, rfit, domain, estimate)?;
    let v_wr = var1(&dev.delta_c)?;
    let resp: Vec<T> = cohort
        .records()
        .iter()
        .zip(&dev.delta_r)
        .filter(|(r, _)| r.respond)
        .map(|(_, &d)| d)
        .collect();
    let v2 = var2(&resp, cohort.len())?;
    let v1 = participation_component(v_wr, v2);
    Ok(EstimateReport {
        estimate,
        variance: Some(TaylorVariance::new(estimate, v1, v2)),
        variance_note: None,
        n_used,
        n_resp,
    })
}

/// Weighted mean without nonresponse adjustment, for fully observed outcomes.
/// The variance has only the participation component.
pub fn hajek_report<T: Scalar>(y: &[T], w: &[T]) -> Result<EstimateReport<T>, EstimateError> {
    let all = vec![true; y.len()];
    let estimate = mean_weighted(y, w, &all)?;
    let den = compensated_sum(w.iter().copied());
    let dev: Vec<T> = y.iter().zip(w).map(|(&yi, &wi)| wi * (yi - estimate) / den).collect();
    let v1 = var1(&dev)?;
    Ok(EstimateReport {
        estimate,
        variance: Some(TaylorVariance::new(estimate, v1, T::zero())),
        variance_note: None,
        n_used: y.len(),
        n_resp: y.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weighted_mean_examples() {
        assert_eq!(mean_weighted(&[0.0, 1.0, 1.0, 0.0], &[2.0; 4], &[true; 4]).unwrap(), 0.5);
        assert_eq!(mean_weighted(&[0.0, 1.0], &[1.0, 3.0], &[true, true]).unwrap(), 0.75);
        assert_eq!(mean_weighted(&[0.0, 1.0], &[7.0, 21.0], &[true, true]).unwrap(), 0.75);
        assert_eq!(mean_weighted(&[0.0, 1.0], &[1.0, 3.0], &[false, false]), Err(EstimateError::ZeroMass));
    }

    #[test]
    fn var1_examples() {
        assert_eq!(var1(&[0.3_f64; 5]).unwrap(), 0.0);
        let a = 0.25_f64;
        assert!((var1(&[a, -a]).unwrap() - 4.0 * a * a).abs() < 1e-15);
        assert!(var1(&[1.0_f64]).is_err());
    }

    #[test]
    fn participation_component_examples() {
        assert_eq!(participation_component(0.5_f64, 0.125), 0.375);
        assert_eq!(participation_component(0.1_f64, 0.3), 0.0);
        assert_eq!(participation_component(0.2_f64, 0.0), 0.2);
    }

    #[test]
    fn var2_examples() {
        assert!((var2(&[0.1_f64, -0.1], 4).unwrap() - 0.02).abs() < 1e-15);
        assert_eq!(var2(&[0.1_f64, -0.3, 0.2], 3).unwrap(), 0.0);
        assert_eq!(var2(&[0.2_f64; 4], 10).unwrap(), 0.0);
        assert!(matches!(var2(&[0.1_f64], 4), Err(EstimateError::TooFew { n: 1, .. })));
        assert!(matches!(var2(&[0.1_f64; 3], 2), Err(EstimateError::Counts { .. })));
    }

    #[test]
    fn variance_parts_invariants() {
        let v = TaylorVariance::new(0.4_f64, 0.0003, 0.0001);
        assert_eq!(v.total, 0.0003 + 0.0001);
        assert_eq!(v.se, v.total.sqrt());
        assert!((v.ci95.0 - (0.4 - Z_95 * v.se)).abs() < 1e-15);
        assert!((v.ci95.1 - (0.4 + Z_95 * v.se)).abs() < 1e-15);
    }

    #[test]
    fn hajek_report_has_no_response_component() {
        let r = hajek_report(&[0.0_f64, 1.0, 1.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!((r.estimate - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(r.variance.unwrap().var2, 0.0);
    }
}
