//! Weighted binary-logistic pseudo-likelihood fitting.
//!
//! Used twice in the pipeline: the participation model (cohort stacked over
//! the design-weighted reference sample) and the follow-up response model.
//! Both maximise
//!
//! ```text
//! l(beta) = sum_i w_i { o_i log p_i + (1 - o_i) log(1 - p_i) },  p_i = expit(x_i' beta)
//! ```
//!
//! by Newton-Raphson with step halving. The score is `sum_i w_i (o_i - p_i) x_i`
//! and the information matrix `sum_i w_i p_i (1 - p_i) x_i x_i'`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{CohortSample, ReferenceSample};
use crate::linalg::{dot, Cholesky, LinalgError, Matrix};
use crate::scalar::{compensated_sum, Scalar};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FitError {
    #[error("dimension mismatch in {what}: expected {expected}, got {actual}")]
    Dimension {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("outcome has no variation among positively weighted rows")]
    NoVariation,
    #[error("weights must be non-negative and finite (row {row})")]
    InvalidWeight { row: usize },
    #[error("design column `{column}` is {problem}")]
    BadColumn { column: String, problem: &'static str },
    #[error("design term references unknown covariate `{name}`")]
    UnknownCovariate { name: String },
    #[error("no convergence after {iterations} iterations (score sup-norm {score_norm:e})")]
    NonConvergence { iterations: usize, score_norm: f64 },
    #[error("quasi-complete separation: coefficients diverge (norm {norm:.3}, limit {limit}) while the likelihood still improves")]
    Separation { norm: f64, limit: f64 },
    #[error("singular information matrix: {0}")]
    Singular(#[from] LinalgError),
}

/// Logistic function, kept inside `[guard, 1 - guard]`.
#[inline]
pub fn expit<T: Scalar>(t: T) -> T {
    let g = T::probability_guard();
    let p = if t >= T::zero() {
        T::one() / (T::one() + (-t).exp())
    } else {
        let e = t.exp();
        e / (T::one() + e)
    };
    p.max(g).min(T::one() - g)
}

/// `log(1 + e^t)` without overflow.
#[inline]
fn softplus<T: Scalar>(t: T) -> T {
    if t > T::zero() {
        t + (-t).exp().ln_1p()
    } else {
        t.exp().ln_1p()
    }
}

/// Which columns `g(.)` produces from a raw covariate vector. An intercept is
/// always added; every raw covariate enters linearly; squares and pairwise
/// products are opt-in.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DesignSpec {
    #[serde(default)]
    pub squares: Vec<String>,
    #[serde(default)]
    pub interactions: Vec<[String; 2]>,
}

#[derive(Debug, Clone, Copy)]
enum Term {
    Intercept,
    Linear(usize),
    Product(usize, usize),
}

/// `n x p` model matrix, row-major, intercept in column 0.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix<T> {
    data: Vec<T>,
    rows: usize,
    cols: usize,
    labels: Vec<String>,
}

impl<T: Scalar> DesignMatrix<T> {
    /// Expands raw covariate rows through `spec`.
    pub fn build(
        rows: &[&[T]],
        covariate_names: &[String],
        spec: &DesignSpec,
    ) -> Result<Self, FitError> {
        let k = covariate_names.len();
        let find = |name: &String| {
            covariate_names
                .iter()
                .position(|c| c == name)
                .ok_or_else(|| FitError::UnknownCovariate { name: name.clone() })
        };
        let mut terms = vec![Term::Intercept];
        let mut labels = vec!["(intercept)".to_string()];
        for (j, name) in covariate_names.iter().enumerate() {
            terms.push(Term::Linear(j));
            labels.push(name.clone());
        }
        for name in &spec.squares {
            let j = find(name)?;
            terms.push(Term::Product(j, j));
            labels.push(format!("{name}^2"));
        }
        for [a, b] in &spec.interactions {
            terms.push(Term::Product(find(a)?, find(b)?));
            labels.push(format!("{a}:{b}"));
        }

        let cols = terms.len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != k {
                return Err(FitError::Dimension {
                    what: "covariate row",
                    expected: k,
                    actual: r.len(),
                });
            }
            let _ = i;
            for t in &terms {
                data.push(match *t {
                    Term::Intercept => T::one(),
                    Term::Linear(j) => r[j],
                    Term::Product(a, b) => r[a] * r[b],
                });
            }
        }
        Self::from_parts(data, rows.len(), cols, labels)
    }

    /// Wraps an explicit matrix whose first column must be the intercept.
    pub fn from_parts(
        data: Vec<T>,
        rows: usize,
        cols: usize,
        labels: Vec<String>,
    ) -> Result<Self, FitError> {
        if data.len() != rows * cols {
            return Err(FitError::Dimension {
                what: "design data",
                expected: rows * cols,
                actual: data.len(),
            });
        }
        if labels.len() != cols {
            return Err(FitError::Dimension {
                what: "design labels",
                expected: cols,
                actual: labels.len(),
            });
        }
        let m = Self {
            data,
            rows,
            cols,
            labels,
        };
        m.validate()?;
        Ok(m)
    }

    fn validate(&self) -> Result<(), FitError> {
        let mut intercepts = 0;
        for j in 0..self.cols {
            let col = || (0..self.rows).map(|i| self.data[i * self.cols + j]);
            if col().any(|v| !v.is_finite()) {
                return Err(FitError::BadColumn {
                    column: self.labels[j].clone(),
                    problem: "not finite",
                });
            }
            if self.rows > 0 && col().all(|v| v == T::zero()) {
                return Err(FitError::BadColumn {
                    column: self.labels[j].clone(),
                    problem: "constant zero",
                });
            }
            if self.rows > 0 && col().all(|v| v == T::one()) {
                intercepts += 1;
            }
        }
        if self.rows > 0 && (intercepts != 1 || !(0..self.rows).all(|i| self.data[i * self.cols] == T::one())) {
            return Err(FitError::BadColumn {
                column: self.labels.first().cloned().unwrap_or_default(),
                problem: "not the single intercept column",
            });
        }
        Ok(())
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn linear_predictor(&self, coef: &[T]) -> Vec<T> {
        (0..self.rows).map(|i| dot(self.row(i), coef)).collect()
    }

    /// Stacks `self` over `other` (same columns).
    pub fn vstack(&self, other: &Self) -> Result<Self, FitError> {
        if self.cols != other.cols {
            return Err(FitError::Dimension {
                what: "stacked design columns",
                expected: self.cols,
                actual: other.cols,
            });
        }
        let mut data = self.data.clone();
        data.extend_from_slice(&other.data);
        Ok(Self {
            data,
            rows: self.rows + other.rows,
            cols: self.cols,
            labels: self.labels.clone(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions<T> {
    pub max_iter: usize,
    /// Relative tolerance on the score sup-norm, scaled by `1 + |sum_i w_i x_i|_inf`.
    pub tolerance: T,
    /// Coefficient 2-norm beyond which a still-improving fit is declared separated.
    pub separation_norm: T,
    pub max_halvings: usize,
}

impl<T: Scalar> Default for FitOptions<T> {
    fn default() -> Self {
        Self {
            max_iter: 25,
            tolerance: T::default_score_tolerance(),
            separation_norm: T::lit(30.0),
            max_halvings: 40,
        }
    }
}

/// A converged logistic fit.
#[derive(Debug, Clone, PartialEq)]
pub struct PropensityFit<T> {
    pub coefficients: Vec<T>,
    pub fitted: Vec<T>,
    pub info_matrix: Matrix<T>,
    pub converged: bool,
    pub iterations: usize,
    /// Unscaled score sup-norm at the returned coefficients.
    pub max_score_norm: T,
    /// Log-likelihood after each accepted step, starting value first.
    pub loglik_trace: Vec<T>,
}

impl<T: Scalar> PropensityFit<T> {
    pub fn loglik(&self) -> T {
        *self.loglik_trace.last().expect("trace holds the start value")
    }
}

pub fn weighted_loglik<T: Scalar>(
    x: &DesignMatrix<T>,
    outcome: &[bool],
    weights: &[T],
    coef: &[T],
) -> T {
    compensated_sum((0..x.nrows()).map(|i| {
        let eta = dot(x.row(i), coef);
        let l = if outcome[i] { -softplus(-eta) } else { -softplus(eta) };
        weights[i] * l
    }))
}

/// Weighted score `sum_i w_i (o_i - expit(x_i' b)) x_i`.
pub fn weighted_score<T: Scalar>(
    x: &DesignMatrix<T>,
    outcome: &[bool],
    weights: &[T],
    coef: &[T],
) -> Vec<T> {
    let mut g = vec![T::zero(); x.ncols()];
    for i in 0..x.nrows() {
        let row = x.row(i);
        let p = expit(dot(row, coef));
        let o = if outcome[i] { T::one() } else { T::zero() };
        let r = weights[i] * (o - p);
        for (gj, &xj) in g.iter_mut().zip(row) {
            *gj += r * xj;
        }
    }
    g
}

/// Weighted information `sum_i w_i p_i (1 - p_i) x_i x_i'`.
pub fn weighted_information<T: Scalar>(x: &DesignMatrix<T>, weights: &[T], coef: &[T]) -> Matrix<T> {
    let mut h = Matrix::zeros(x.ncols());
    for i in 0..x.nrows() {
        let row = x.row(i);
        let p = expit(dot(row, coef));
        h.add_outer(row, weights[i] * p * (T::one() - p));
    }
    h
}

fn sup_norm<T: Scalar>(v: &[T]) -> T {
    v.iter().map(|x| x.abs()).fold(T::zero(), T::max)
}

fn l2_norm<T: Scalar>(v: &[T]) -> T {
    v.iter().map(|&x| x * x).sum::<T>().sqrt()
}

/// Maximises the weighted logistic log-likelihood.
pub fn fit_weighted_logistic<T: Scalar>(
    x: &DesignMatrix<T>,
    outcome: &[bool],
    weights: &[T],
    opts: &FitOptions<T>,
) -> Result<PropensityFit<T>, FitError> {
    let n = x.nrows();
    let p = x.ncols();
    for (what, len) in [("outcome", outcome.len()), ("weights", weights.len())] {
        if len != n {
            return Err(FitError::Dimension {
                what,
                expected: n,
                actual: len,
            });
        }
    }
    if let Some(row) = weights.iter().position(|w| !(*w >= T::zero()) || !w.is_finite()) {
        return Err(FitError::InvalidWeight { row: row + 1 });
    }
    let (mut w1, mut w0) = (T::zero(), T::zero());
    for (&o, &w) in outcome.iter().zip(weights) {
        if w > T::zero() {
            if o {
                w1 += w;
            } else {
                w0 += w;
            }
        }
    }
    if w1 == T::zero() || w0 == T::zero() {
        return Err(FitError::NoVariation);
    }

    // Scale of the score: 1 + |sum_i w_i x_i|_inf.
    let mut wx = vec![T::zero(); p];
    for i in 0..n {
        for (a, &v) in wx.iter_mut().zip(x.row(i)) {
            *a += weights[i] * v;
        }
    }
    let threshold = opts.tolerance * (T::one() + sup_norm(&wx));

    // Start at the intercept-only solution.
    let mut coef = vec![T::zero(); p];
    coef[0] = (w1 / w0).ln();
    let mut ll = weighted_loglik(x, outcome, weights, &coef);
    let mut trace = vec![ll];
    let mut score = weighted_score(x, outcome, weights, &coef);
    let mut iterations = 0;
    let step_tol = opts.tolerance.sqrt();

    loop {
        let info = weighted_information(x, weights, &coef);
        let step = Cholesky::factor(&info)?.solve(&score);
        let score_small = sup_norm(&score) < threshold;
        let step_small = sup_norm(&step) <= step_tol * (T::one() + sup_norm(&coef));
        if score_small && step_small {
            break;
        }
        if iterations == opts.max_iter {
            if score_small {
                // Vanishing score with steps that do not shrink: coefficients run off.
                return Err(FitError::Separation {
                    norm: l2_norm(&coef).to_f64_lossy(),
                    limit: opts.separation_norm.to_f64_lossy(),
                });
            }
            return Err(FitError::NonConvergence {
                iterations,
                score_norm: sup_norm(&score).to_f64_lossy(),
            });
        }
        iterations += 1;

        let mut scale = T::one();
        let mut accepted = None;
        for _ in 0..=opts.max_halvings {
            let trial: Vec<T> = coef.iter().zip(&step).map(|(&c, &s)| c + scale * s).collect();
            let trial_ll = weighted_loglik(x, outcome, weights, &trial);
            if trial_ll.is_finite() && trial_ll >= ll {
                accepted = Some((trial, trial_ll));
                break;
            }
            // Near the optimum the gain can fall below rounding noise in the
            // likelihood; the score still tells whether the step helps.
            let noise = T::epsilon() * T::lit(64.0) * (T::one() + ll.abs());
            if trial_ll.is_finite()
                && trial_ll >= ll - noise
                && sup_norm(&weighted_score(x, outcome, weights, &trial)) < sup_norm(&score)
            {
                accepted = Some((trial, ll.max(trial_ll)));
                break;
            }
            scale = scale * T::lit(0.5);
        }
        let Some((next, next_ll)) = accepted else {
            // No ascent along the Newton direction: at the optimum to working precision.
            break;
        };
        let improving = next_ll > ll;
        coef = next;
        ll = next_ll;
        trace.push(ll);
        let norm = l2_norm(&coef);
        if improving && norm > opts.separation_norm {
            return Err(FitError::Separation {
                norm: norm.to_f64_lossy(),
                limit: opts.separation_norm.to_f64_lossy(),
            });
        }
        score = weighted_score(x, outcome, weights, &coef);
    }

    let score_norm = sup_norm(&score);
    if score_norm >= threshold {
        return Err(FitError::NonConvergence {
            iterations,
            score_norm: score_norm.to_f64_lossy(),
        });
    }
    let info_matrix = weighted_information(x, weights, &coef);
    Cholesky::factor(&info_matrix)?;
    let fitted = x.linear_predictor(&coef).into_iter().map(expit).collect();
    Ok(PropensityFit {
        coefficients: coef,
        fitted,
        info_matrix,
        converged: true,
        iterations,
        max_score_norm: score_norm,
        loglik_trace: trace,
    })
}

/// Participation model: cohort rows labelled 1 with unit weight stacked over
/// reference rows labelled 0 with their design weights.
pub fn participation_fit<T: Scalar>(
    cohort: &CohortSample<T>,
    reference: &ReferenceSample<T>,
    covariate_names: &[String],
    spec: &DesignSpec,
    opts: &FitOptions<T>,
) -> Result<PropensityFit<T>, FitError> {
    let (xc, xs) = participation_designs(cohort, reference, covariate_names, spec)?;
    let stacked = xc.vstack(&xs)?;
    let mut outcome = vec![true; cohort.len()];
    outcome.extend(std::iter::repeat_n(false, reference.len()));
    let mut weights = vec![T::one(); cohort.len()];
    weights.extend(reference.design_weights());
    fit_weighted_logistic(&stacked, &outcome, &weights, opts)
}

/// Participation-model design matrices for the cohort and the reference sample.
pub fn participation_designs<T: Scalar>(
    cohort: &CohortSample<T>,
    reference: &ReferenceSample<T>,
    covariate_names: &[String],
    spec: &DesignSpec,
) -> Result<(DesignMatrix<T>, DesignMatrix<T>), FitError> {
    if cohort.covariate_dim() != reference.covariate_dim() {
        return Err(FitError::Dimension {
            what: "reference covariates",
            expected: cohort.covariate_dim(),
            actual: reference.covariate_dim(),
        });
    }
    let xc = DesignMatrix::build(&cohort.covariate_rows(), covariate_names, spec)?;
    let xs = DesignMatrix::build(&reference.covariate_rows(), covariate_names, spec)?;
    Ok((xc, xs))
}

/// Full linear predictor `alpha + B' g(x)`. Kernel matching only uses score
/// differences, so the intercept cancels there.
pub fn balancing_scores<T: Scalar>(
    fit: &PropensityFit<T>,
    x: &DesignMatrix<T>,
) -> Result<Vec<T>, FitError> {
    if x.ncols() != fit.coefficients.len() {
        return Err(FitError::Dimension {
            what: "design columns",
            expected: fit.coefficients.len(),
            actual: x.ncols(),
        });
    }
    Ok(x.linear_predictor(&fit.coefficients))
}
