//! Monte Carlo study of the KW and kwNR estimators.
//!
//! Each replicate draws a finite population from a logistic superpopulation
//! model, selects a PPS cohort and an SRS reference sample, runs the weighting
//! pipeline and records six estimates of the population mean together with
//! the Taylor variance of the kwNR mean. Replicates are independent functions
//! of `(master_seed, rep)`, so results do not depend on how they are scheduled.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::{
    coefficient_of_variation, CohortRecord, CohortSample, Provenance, ReferenceRecord,
    ReferenceSample, WeightSet,
};
use crate::estimate::{kwnr_report, mean_weighted, EstimateError};
use crate::glm::{expit, DesignSpec};
use crate::kw::KernelSpec;
use crate::nr::NrConfig;
use crate::pipeline::{run_weighting, PipelineError, WeightingConfig};
use crate::scalar::{compensated_sum, mean_sd};

/// Largest tolerated share of failed replicates.
pub const MAX_FAILURE_RATE: f64 = 0.01;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid scenario: {0}")]
    InvalidScenario(String),
    #[error(
        "inclusion probability {pi} > 1 for population unit {unit}; \
         reduce beta_c1 or the cohort size, or set certainty to \"cap\""
    )]
    InclusionProbability { unit: usize, pi: f64 },
    #[error("{certain} certainty units exceed the cohort size {n}")]
    TooManyCertainty { certain: usize, n: usize },
    #[error("sample construction: {0}")]
    Sample(String),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error("estimation: {0}")]
    Estimate(#[from] EstimateError),
    #[error("{failed} of {reps} replicates failed (limit {:.0}%); first failure, replicate {first_rep}: {first_error}", MAX_FAILURE_RATE * 100.0)]
    FailureRate {
        failed: usize,
        reps: usize,
        first_rep: usize,
        first_error: String,
    },
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

/// Handling of units whose PPS inclusion probability exceeds one.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CertaintyPolicy {
    /// Take such units with certainty and spread the remaining sample size
    /// over the rest, repeating until no probability exceeds one.
    #[default]
    Cap,
    /// Refuse the draw.
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimScenario {
    #[serde(default = "defaults::population_size")]
    pub population_size: usize,
    #[serde(default = "defaults::cohort_size")]
    pub cohort_size: usize,
    #[serde(default = "defaults::reference_size")]
    pub reference_size: usize,
    /// Outcome model `(intercept, slope)`.
    #[serde(default = "defaults::beta_y")]
    pub beta_y: [f64; 2],
    /// Follow-up response model `(intercept, slope)`.
    #[serde(default = "defaults::beta_r")]
    pub beta_r: [f64; 2],
    /// Log measure of size for cohort selection `(intercept, slope)`.
    #[serde(default = "defaults::beta_c")]
    pub beta_c: [f64; 2],
    #[serde(default = "defaults::reps")]
    pub reps: usize,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub kernel: KernelSpec<f64>,
    #[serde(default)]
    pub nr: NrConfig<f64>,
    #[serde(default = "defaults::regenerate")]
    pub regenerate_population: bool,
    #[serde(default)]
    pub certainty: CertaintyPolicy,
}

mod defaults {
    pub fn population_size() -> usize {
        200_000
    }
    pub fn cohort_size() -> usize {
        8_000
    }
    pub fn reference_size() -> usize {
        2_000
    }
    pub fn beta_y() -> [f64; 2] {
        [-0.5, 0.5]
    }
    pub fn beta_r() -> [f64; 2] {
        [0.2, 0.5]
    }
    pub fn beta_c() -> [f64; 2] {
        [-1.0, 0.5]
    }
    pub fn reps() -> usize {
        2_000
    }
    pub fn regenerate() -> bool {
        true
    }
}

impl Default for SimScenario {
    fn default() -> Self {
        Self {
            population_size: defaults::population_size(),
            cohort_size: defaults::cohort_size(),
            reference_size: defaults::reference_size(),
            beta_y: defaults::beta_y(),
            beta_r: defaults::beta_r(),
            beta_c: defaults::beta_c(),
            reps: defaults::reps(),
            master_seed: 0,
            kernel: KernelSpec::default(),
            nr: NrConfig::default(),
            regenerate_population: true,
            certainty: CertaintyPolicy::Cap,
        }
    }
}

impl SimScenario {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::InvalidScenario(m));
        if self.cohort_size == 0 || self.reference_size == 0 {
            return bad("cohort_size and reference_size must be positive".into());
        }
        if self.cohort_size + self.reference_size > self.population_size {
            return bad(format!(
                "cohort_size + reference_size = {} exceeds population_size = {}",
                self.cohort_size + self.reference_size,
                self.population_size
            ));
        }
        if self.reps == 0 {
            return bad("reps must be at least 1".into());
        }
        if self.beta_y.iter().chain(&self.beta_r).chain(&self.beta_c).any(|b| !b.is_finite()) {
            return bad("model coefficients must be finite".into());
        }
        self.nr
            .validate()
            .map_err(|e| SimError::InvalidScenario(e.to_string()))
    }

    fn weighting_config(&self) -> WeightingConfig<f64> {
        WeightingConfig {
            participation_design: DesignSpec::default(),
            response_design: DesignSpec::default(),
            kernel: self.kernel,
            nr: self.nr,
        }
    }
}

/// Independent random streams within a replicate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Stream {
    Population = 1,
    Cohort = 2,
    Reference = 3,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed of one stream of one replicate.
pub fn stream_seed(master_seed: u64, rep: u64, stream: Stream) -> u64 {
    splitmix64(splitmix64(splitmix64(master_seed) ^ rep) ^ stream as u64)
}

pub fn stream_rng(master_seed: u64, rep: u64, stream: Stream) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(master_seed, rep, stream))
}

/// Finite population with latent follow-up response status.
#[derive(Debug, Clone, PartialEq)]
pub struct Population {
    pub x: Vec<f64>,
    pub y: Vec<bool>,
    pub respond: Vec<bool>,
}

impl Population {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn mean_outcome(&self) -> f64 {
        self.y.iter().filter(|&&v| v).count() as f64 / self.len() as f64
    }

    pub fn response_rate(&self) -> f64 {
        self.respond.iter().filter(|&&v| v).count() as f64 / self.len() as f64
    }
}

pub fn generate_population<R: Rng + ?Sized>(scn: &SimScenario, rng: &mut R) -> Population {
    let n = scn.population_size;
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    let mut respond = Vec::with_capacity(n);
    for _ in 0..n {
        let xi: f64 = rng.sample(StandardNormal);
        let py = expit(scn.beta_y[0] + scn.beta_y[1] * xi);
        let pr = expit(scn.beta_r[0] + scn.beta_r[1] * xi);
        x.push(xi);
        y.push(rng.random::<f64>() < py);
        respond.push(rng.random::<f64>() < pr);
    }
    Population { x, y, respond }
}

/// PPS inclusion probabilities `n * mos_k / sum(mos)`.
pub fn inclusion_probabilities(
    mos: &[f64],
    n: usize,
    policy: CertaintyPolicy,
) -> Result<Vec<f64>, SimError> {
    let mut pi = vec![0.0; mos.len()];
    let mut certain = vec![false; mos.len()];
    let mut n_certain = 0;
    loop {
        if n_certain > n {
            return Err(SimError::TooManyCertainty {
                certain: n_certain,
                n,
            });
        }
        let remaining = (n - n_certain) as f64;
        let total = compensated_sum(
            mos.iter()
                .zip(&certain)
                .filter(|(_, &c)| !c)
                .map(|(&m, _)| m),
        );
        let mut promoted = false;
        for (k, (&m, c)) in mos.iter().zip(certain.iter_mut()).enumerate() {
            if *c {
                continue;
            }
            let p = remaining * m / total;
            if p > 1.0 {
                if policy == CertaintyPolicy::Error {
                    return Err(SimError::InclusionProbability { unit: k, pi: p });
                }
                *c = true;
                n_certain += 1;
                promoted = true;
                pi[k] = 1.0;
            } else {
                pi[k] = p;
            }
        }
        if !promoted {
            return Ok(pi);
        }
    }
}

/// PPS cohort draw with its true design weights.
#[derive(Debug, Clone)]
pub struct PpsDraw {
    /// Selected population indices, ascending.
    pub units: Vec<usize>,
    pub inclusion: Vec<f64>,
    pub true_weights: WeightSet<f64>,
}

/// Systematic PPS on a random ordering of the population. Units with
/// inclusion probability one are taken outright.
pub fn draw_pps_cohort<R: Rng + ?Sized>(
    pop: &Population,
    n: usize,
    beta_c: [f64; 2],
    policy: CertaintyPolicy,
    rng: &mut R,
) -> Result<PpsDraw, SimError> {
    let mos: Vec<f64> = pop.x.iter().map(|&x| (beta_c[0] + beta_c[1] * x).exp()).collect();
    let pi = inclusion_probabilities(&mos, n, policy)?;

    let mut units: Vec<usize> = (0..pi.len()).filter(|&k| pi[k] >= 1.0).collect();
    let m = n - units.len();
    if m > 0 {
        let mut order: Vec<usize> = (0..pi.len()).filter(|&k| pi[k] < 1.0).collect();
        order.shuffle(rng);
        let total = compensated_sum(order.iter().map(|&k| pi[k]));
        let scale = m as f64 / total;
        let mut next = rng.random::<f64>();
        let mut cum = 0.0;
        let mut taken = 0;
        for (pos, &k) in order.iter().enumerate() {
            cum = if pos + 1 == order.len() {
                m as f64
            } else {
                cum + pi[k] * scale
            };
            if taken < m && next < cum {
                units.push(k);
                taken += 1;
                next += 1.0;
            }
        }
        if taken != m {
            return Err(SimError::Sample(format!(
                "systematic PPS selected {taken} of {m} units"
            )));
        }
    }
    units.sort_unstable();
    let inclusion: Vec<f64> = units.iter().map(|&k| pi[k]).collect();
    let true_weights = WeightSet::new(inclusion.iter().map(|p| 1.0 / p).collect(), Provenance::TrueDesign)
        .map_err(|e| SimError::Sample(e.to_string()))?;
    Ok(PpsDraw {
        units,
        inclusion,
        true_weights,
    })
}

/// Simple random sample without replacement with weights `N / n`.
pub fn draw_srs_reference<R: Rng + ?Sized>(
    pop: &Population,
    n: usize,
    rng: &mut R,
) -> Result<ReferenceSample<f64>, SimError> {
    if n == 0 || n > pop.len() {
        return Err(SimError::InvalidScenario(format!(
            "reference size {n} must lie in 1..={}",
            pop.len()
        )));
    }
    let d = pop.len() as f64 / n as f64;
    let mut idx = rand::seq::index::sample(rng, pop.len(), n).into_vec();
    idx.sort_unstable();
    ReferenceSample::new(
        idx.into_iter()
            .map(|k| ReferenceRecord {
                covariates: vec![pop.x[k]],
                design_weight: d,
            })
            .collect(),
    )
    .map_err(|e| SimError::Sample(e.to_string()))
}

fn cohort_from(pop: &Population, units: &[usize]) -> Result<CohortSample<f64>, SimError> {
    CohortSample::new(
        units
            .iter()
            .map(|&k| CohortRecord {
                covariates: vec![pop.x[k]],
                response_covariates: vec![pop.x[k]],
                respond: pop.respond[k],
                outcome: Some(if pop.y[k] { 1.0 } else { 0.0 }),
                subgroup: None,
            })
            .collect(),
    )
    .map_err(|e| SimError::Sample(e.to_string()))
}

/// The six estimators tracked by the study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// Cohort mean under the true PPS weights.
    TrueWeightedC,
    UnweightedC,
    KwC,
    UnweightedR,
    KwR,
    KwnrR,
}

impl Estimator {
    pub const ALL: [Estimator; 6] = [
        Estimator::TrueWeightedC,
        Estimator::UnweightedC,
        Estimator::KwC,
        Estimator::UnweightedR,
        Estimator::KwR,
        Estimator::KwnrR,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Estimator::TrueWeightedC => "true-weighted C",
            Estimator::UnweightedC => "unweighted C",
            Estimator::KwC => "KW-weighted C",
            Estimator::UnweightedR => "unweighted R",
            Estimator::KwR => "KW-weighted R",
            Estimator::KwnrR => "kwNR-weighted R",
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            Estimator::TrueWeightedC => "true_weighted_c",
            Estimator::UnweightedC => "unweighted_c",
            Estimator::KwC => "kw_c",
            Estimator::UnweightedR => "unweighted_r",
            Estimator::KwR => "kw_r",
            Estimator::KwnrR => "kwnr_r",
        }
    }
}

/// Everything retained from one replicate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateRecord {
    pub rep: usize,
    /// Finite-population mean outcome.
    pub truth: f64,
    pub population_response_rate: f64,
    /// Indexed like [`Estimator::ALL`].
    pub estimates: [f64; 6],
    pub var1: f64,
    pub var2: f64,
    /// `var1 + var2` for the kwNR mean.
    pub tl_variance: f64,
    pub cv_true: f64,
    pub cv_kw: f64,
    pub cv_kwnr: f64,
    pub n_resp: usize,
    pub bandwidth: f64,
    pub floored: usize,
}

fn replicate_population(scn: &SimScenario, rep: usize) -> Population {
    let rep = if scn.regenerate_population { rep as u64 } else { 0 };
    generate_population(scn, &mut stream_rng(scn.master_seed, rep, Stream::Population))
}

/// Runs one replicate. A `fixed` population overrides regeneration.
pub fn run_replicate(
    scn: &SimScenario,
    rep: usize,
    fixed: Option<&Population>,
) -> Result<ReplicateRecord, SimError> {
    let owned;
    let pop = match fixed {
        Some(p) => p,
        None => {
            owned = replicate_population(scn, rep);
            &owned
        }
    };
    let r = rep as u64;
    let draw = draw_pps_cohort(
        pop,
        scn.cohort_size,
        scn.beta_c,
        scn.certainty,
        &mut stream_rng(scn.master_seed, r, Stream::Cohort),
    )?;
    let reference = draw_srs_reference(
        pop,
        scn.reference_size,
        &mut stream_rng(scn.master_seed, r, Stream::Reference),
    )?;
    let cohort = cohort_from(pop, &draw.units)?;

    let names = vec!["x".to_string()];
    let w = run_weighting(&cohort, &reference, &names, &names, &scn.weighting_config())?;

    let y: Vec<f64> = cohort
        .records()
        .iter()
        .map(|r| r.outcome.unwrap_or(0.0))
        .collect();
    let all = vec![true; y.len()];
    let resp = cohort.respond_mask();
    let ones = vec![1.0; y.len()];
    let report = kwnr_report(&cohort, &w.kw, &w.response)?;
    let (var1, var2) = report
        .variance
        .as_ref()
        .map(|v| (v.var1, v.var2))
        .ok_or_else(|| {
            SimError::Sample(report.variance_note.clone().unwrap_or_default())
        })?;
    let estimates = [
        mean_weighted(&y, draw.true_weights.values(), &all)?,
        mean_weighted(&y, &ones, &all)?,
        mean_weighted(&y, w.kw.values(), &all)?,
        mean_weighted(&y, &ones, &resp)?,
        mean_weighted(&y, w.kw.values(), &resp)?,
        report.estimate,
    ];
    Ok(ReplicateRecord {
        rep,
        truth: pop.mean_outcome(),
        population_response_rate: pop.response_rate(),
        estimates,
        var1,
        var2,
        tl_variance: var1 + var2,
        cv_true: draw.true_weights.cv(),
        cv_kw: w.kw.cv(),
        cv_kwnr: w.kwnr.cv(),
        n_resp: report.n_resp,
        bandwidth: w.bandwidth,
        floored: w.response.floored_count,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorMetrics {
    pub estimator: Estimator,
    pub mean_estimate: f64,
    /// Mean of `estimate - truth` over replicates.
    pub bias: f64,
    /// `100 * bias / mean truth`.
    pub rb_pct: f64,
    /// Replicate variance of the estimates (divisor `reps - 1`).
    pub emp_var: f64,
    /// `bias^2 + emp_var`.
    pub mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimMetrics {
    pub reps: usize,
    pub failed: usize,
    pub mean_truth: f64,
    pub mean_response_rate: f64,
    /// Ordered like [`Estimator::ALL`].
    pub estimators: Vec<EstimatorMetrics>,
    pub mean_tl_variance: f64,
    pub mean_var1: f64,
    pub mean_var2: f64,
    /// Mean TL variance over the empirical variance of the kwNR estimates.
    pub vr: f64,
    pub mean_cv_true: f64,
    pub mean_cv_kw: f64,
    pub mean_cv_kwnr: f64,
    pub mean_n_resp: f64,
    pub failures: Vec<ReplicateFailure>,
}

impl SimMetrics {
    pub fn get(&self, e: Estimator) -> &EstimatorMetrics {
        self.estimators
            .iter()
            .find(|m| m.estimator == e)
            .expect("every estimator is aggregated")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateFailure {
    pub rep: usize,
    pub error: String,
}

fn mean(v: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.into_iter().collect();
    compensated_sum(v.iter().copied()) / v.len() as f64
}

/// Aggregates successful replicates. Needs at least two.
pub fn aggregate(records: &[ReplicateRecord], failures: Vec<ReplicateFailure>) -> Result<SimMetrics, SimError> {
    if records.len() < 2 {
        return Err(SimError::InvalidScenario(format!(
            "metrics need at least two successful replicates, got {}",
            records.len()
        )));
    }
    let mean_truth = mean(records.iter().map(|r| r.truth));
    let estimators: Vec<EstimatorMetrics> = Estimator::ALL
        .iter()
        .enumerate()
        .map(|(j, &estimator)| {
            let est: Vec<f64> = records.iter().map(|r| r.estimates[j]).collect();
            let (mean_estimate, sd) = mean_sd(&est);
            let bias = mean(records.iter().map(|r| r.estimates[j] - r.truth));
            let emp_var = sd * sd;
            EstimatorMetrics {
                estimator,
                mean_estimate,
                bias,
                rb_pct: 100.0 * bias / mean_truth,
                emp_var,
                mse: bias * bias + emp_var,
            }
        })
        .collect();
    let mean_tl_variance = mean(records.iter().map(|r| r.tl_variance));
    let kwnr_var = estimators[5].emp_var;
    Ok(SimMetrics {
        reps: records.len() + failures.len(),
        failed: failures.len(),
        mean_truth,
        mean_response_rate: mean(records.iter().map(|r| r.population_response_rate)),
        estimators,
        mean_tl_variance,
        mean_var1: mean(records.iter().map(|r| r.var1)),
        mean_var2: mean(records.iter().map(|r| r.var2)),
        vr: mean_tl_variance / kwnr_var,
        mean_cv_true: mean(records.iter().map(|r| r.cv_true)),
        mean_cv_kw: mean(records.iter().map(|r| r.cv_kw)),
        mean_cv_kwnr: mean(records.iter().map(|r| r.cv_kwnr)),
        mean_n_resp: mean(records.iter().map(|r| r.n_resp as f64)),
        failures,
    })
}

/// Result of a full study.
#[derive(Debug, Clone)]
pub struct MonteCarlo {
    pub metrics: SimMetrics,
    pub records: Vec<ReplicateRecord>,
}

/// Runs `scn.reps` replicates on `threads` workers (`None`: rayon default).
pub fn run_monte_carlo(scn: &SimScenario, threads: Option<usize>) -> Result<MonteCarlo, SimError> {
    scn.validate()?;
    if scn.reps < 2 {
        return Err(SimError::InvalidScenario("a Monte Carlo run needs reps >= 2".into()));
    }
    let fixed = (!scn.regenerate_population).then(|| replicate_population(scn, 0));
    let work = || -> Vec<Result<ReplicateRecord, SimError>> {
        (0..scn.reps)
            .into_par_iter()
            .map(|rep| run_replicate(scn, rep, fixed.as_ref()))
            .collect()
    };
    let outcomes = match threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| SimError::ThreadPool(e.to_string()))?
            .install(work),
        None => work(),
    };

    let mut records = Vec::with_capacity(outcomes.len());
    let mut failures = Vec::new();
    for (rep, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(r) => records.push(r),
            Err(e) => failures.push(ReplicateFailure {
                rep,
                error: e.to_string(),
            }),
        }
    }
    if failures.len() as f64 > MAX_FAILURE_RATE * scn.reps as f64 {
        let first = &failures[0];
        return Err(SimError::FailureRate {
            failed: failures.len(),
            reps: scn.reps,
            first_rep: first.rep,
            first_error: first.error.clone(),
        });
    }
    let metrics = aggregate(&records, failures)?;
    Ok(MonteCarlo { metrics, records })
}

/// Coefficient of variation of the true weights implied by a full
/// population, without sampling.
pub fn population_cv_of_weights(pop: &Population, n: usize, beta_c: [f64; 2], policy: CertaintyPolicy) -> Result<f64, SimError> {
    let mos: Vec<f64> = pop.x.iter().map(|&x| (beta_c[0] + beta_c[1] * x).exp()).collect();
    let pi = inclusion_probabilities(&mos, n, policy)?;
    let w: Vec<f64> = pi.iter().map(|p| 1.0 / p).collect();
    Ok(coefficient_of_variation(&w))
}
