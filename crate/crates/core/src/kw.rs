//! Kernel-weighted (KW) pseudoweights.
//!
//! Each reference unit `i` spreads its design weight `d_i` over the cohort in
//! proportion to `K((b_i - b_j) / h)`, normalised over the cohort so every
//! reference row sums to one. The cohort pseudoweight is the accumulated mass:
//!
//! ```text
//! d_j = sum_i d_i K_ij,   K_ij = K((b_i - b_j)/h) / sum_l K((b_i - b_l)/h)
//! ```

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{Provenance, WeightSet};
use crate::scalar::{compensated_sum, mean_sd, quantile_sorted, Scalar};

/// Reference units per parallel work item. Fixed so the reduction order does
/// not depend on the thread count.
const ROW_CHUNK: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KwError {
    #[error("bandwidth needs at least two scores, got {0}")]
    TooFewScores(usize),
    #[error("balancing scores are degenerate (zero spread); bandwidth undefined")]
    DegenerateScores,
    #[error("bandwidth must be positive and finite, got {0}")]
    InvalidBandwidth(f64),
    #[error("{what} length {actual} does not match {expected}")]
    Length {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("non-finite balancing score or design weight")]
    NonFinite,
    #[error(
        "{} reference unit(s) have no cohort unit within kernel support (first: {}); widen the bandwidth",
        .units.len(), preview(.units)
    )]
    OrphanReferenceUnits { units: Vec<usize> },
}

fn preview(units: &[usize]) -> String {
    let shown: Vec<String> = units.iter().take(10).map(|u| u.to_string()).collect();
    shown.join(", ")
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Kernel {
    /// Standard normal density.
    #[default]
    Gaussian,
    Epanechnikov,
    Triweight,
}

impl Kernel {
    /// Kernel density at `u`.
    pub fn density<T: Scalar>(self, u: T) -> T {
        self.normaliser::<T>() * self.profile(u)
    }

    /// The density up to its constant factor. Row normalisation cancels the constant.
    #[inline]
    pub fn profile<T: Scalar>(self, u: T) -> T {
        match self {
            Kernel::Gaussian => (T::lit(-0.5) * u * u).exp(),
            Kernel::Epanechnikov => (T::one() - u * u).max(T::zero()),
            Kernel::Triweight => {
                let t = (T::one() - u * u).max(T::zero());
                t * t * t
            }
        }
    }

    fn normaliser<T: Scalar>(self) -> T {
        match self {
            Kernel::Gaussian => T::one() / T::lit(2.0 * std::f64::consts::PI).sqrt(),
            Kernel::Epanechnikov => T::lit(0.75),
            Kernel::Triweight => T::lit(35.0 / 32.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bandwidth<T> {
    Fixed(T),
    /// Silverman's rule of thumb on the pooled cohort and reference scores.
    SilvermanPooled,
}

impl<T> Default for Bandwidth<T> {
    fn default() -> Self {
        Bandwidth::SilvermanPooled
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSpec<T> {
    #[serde(default)]
    pub kernel: Kernel,
    #[serde(default)]
    pub bandwidth: Bandwidth<T>,
}

impl<T: Scalar> KernelSpec<T> {
    pub fn fixed(kernel: Kernel, h: T) -> Self {
        Self {
            kernel,
            bandwidth: Bandwidth::Fixed(h),
        }
    }

    /// Numeric bandwidth for the given score samples.
    pub fn resolve(&self, scores_c: &[T], scores_s: &[T]) -> Result<T, KwError> {
        match self.bandwidth {
            Bandwidth::Fixed(h) => {
                if h > T::zero() && h.is_finite() {
                    Ok(h)
                } else {
                    Err(KwError::InvalidBandwidth(h.to_f64_lossy()))
                }
            }
            Bandwidth::SilvermanPooled => {
                let pooled: Vec<T> = scores_c.iter().chain(scores_s).copied().collect();
                silverman_bandwidth(&pooled)
            }
        }
    }
}

/// `0.9 * min(sd, IQR / 1.34) * n^(-1/5)`, falling back to whichever spread
/// measure is nonzero.
pub fn silverman_bandwidth<T: Scalar>(scores: &[T]) -> Result<T, KwError> {
    let n = scores.len();
    if n < 2 {
        return Err(KwError::TooFewScores(n));
    }
    if scores.iter().any(|v| !v.is_finite()) {
        return Err(KwError::NonFinite);
    }
    let (_, sd) = mean_sd(scores);
    let mut sorted = scores.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let spread = match (sd > T::zero(), iqr > T::zero()) {
        (true, true) => sd.min(iqr / T::lit(1.34)),
        (true, false) => sd,
        (false, true) => iqr / T::lit(1.34),
        (false, false) => return Err(KwError::DegenerateScores),
    };
    Ok(T::lit(0.9) * spread * T::from_usize_lossy(n).powf(T::lit(-0.2)))
}

/// KW pseudoweights for the cohort.
pub fn kw_pseudoweights<T: Scalar>(
    scores_c: &[T],
    scores_s: &[T],
    d_s: &[T],
    spec: &KernelSpec<T>,
) -> Result<WeightSet<T>, KwError> {
    if d_s.len() != scores_s.len() {
        return Err(KwError::Length {
            what: "reference design weights",
            expected: scores_s.len(),
            actual: d_s.len(),
        });
    }
    if scores_c.is_empty() {
        return Err(KwError::Length {
            what: "cohort scores",
            expected: 1,
            actual: 0,
        });
    }
    if scores_c.iter().chain(scores_s).chain(d_s).any(|v| !v.is_finite()) {
        return Err(KwError::NonFinite);
    }
    let h = spec.resolve(scores_c, scores_s)?;
    let inv_h = T::one() / h;
    let kernel = spec.kernel;
    let nc = scores_c.len();

    let partials: Vec<(Vec<T>, Vec<usize>)> = scores_s
        .par_chunks(ROW_CHUNK)
        .zip(d_s.par_chunks(ROW_CHUNK))
        .enumerate()
        .map(|(chunk, (bs, ds))| {
            let mut acc = vec![T::zero(); nc];
            let mut row = vec![T::zero(); nc];
            let mut orphans = Vec::new();
            for (k, (&bi, &di)) in bs.iter().zip(ds).enumerate() {
                for (r, &bj) in row.iter_mut().zip(scores_c) {
                    *r = kernel.profile((bi - bj) * inv_h);
                }
                let total: T = row.iter().copied().sum();
                if !(total > T::min_positive_value()) {
                    orphans.push(chunk * ROW_CHUNK + k);
                    continue;
                }
                let share = di / total;
                for (a, &r) in acc.iter_mut().zip(&row) {
                    *a += share * r;
                }
            }
            (acc, orphans)
        })
        .collect();

    let orphans: Vec<usize> = partials.iter().flat_map(|(_, o)| o.iter().copied()).collect();
    if !orphans.is_empty() {
        return Err(KwError::OrphanReferenceUnits { units: orphans });
    }
    let values = (0..nc)
        .map(|j| compensated_sum(partials.iter().map(|(acc, _)| acc[j])))
        .collect();
    Ok(WeightSet::new(values, Provenance::Kw).expect("kernel weights are non-negative"))
}
