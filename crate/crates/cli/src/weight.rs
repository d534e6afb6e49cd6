use std::fs::File;
use std::path::Path;

use anyhow::{anyhow, Context, Result};
use kwnr::data::{load_cohort_csv, load_reference_csv};
use kwnr::glm::{participation_designs, FitError};
use kwnr::kw::KwError;
use kwnr::pipeline::{run_weighting, PipelineError};
use kwnr::{CohortSample, ReferenceSample};
use serde::Serialize;

use crate::config::{self, PipelineConfig};
use crate::output::{self, num, sig4};

/// Appends a remedy to pipeline errors a user can act on.
pub fn with_hint(e: PipelineError) -> anyhow::Error {
    let hint = match &e {
        PipelineError::Kernel(KwError::OrphanReferenceUnits { .. }) => {
            Some("use a wider fixed bandwidth or a Gaussian kernel")
        }
        PipelineError::Kernel(KwError::DegenerateScores) => {
            Some("the participation model has no discriminating covariate; set a fixed bandwidth")
        }
        PipelineError::Participation(FitError::Separation { .. })
        | PipelineError::ResponseDesign(FitError::Separation { .. }) => {
            Some("drop or coarsen covariates that perfectly split the groups")
        }
        PipelineError::Participation(FitError::Singular(_)) => {
            Some("remove collinear covariates or design terms")
        }
        _ => None,
    };
    match hint {
        Some(h) => anyhow!("{e}\nhint: {h}"),
        None => anyhow!(e),
    }
}

#[derive(Serialize)]
struct FitSummary {
    coefficients: Vec<f64>,
    labels: Vec<String>,
    iterations: usize,
    max_score_norm: f64,
    loglik: f64,
}

#[derive(Serialize)]
struct WeightsSummary {
    tool_version: &'static str,
    config_sha256: String,
    n_cohort: usize,
    n_reference: usize,
    n_respondents: usize,
    reference_weight_sum: f64,
    kw_weight_sum: f64,
    /// `|sum kw - sum d| / sum d`.
    mass_conservation_rel_error: f64,
    kwnr_weight_sum: f64,
    cv_kw: f64,
    cv_kwnr: f64,
    bandwidth: f64,
    floored_count: usize,
    propensity_floor: Option<f64>,
    participation_fit: FitSummary,
    response_fit: FitSummary,
}

pub struct WeightArgs<'a> {
    pub reference: &'a Path,
    pub cohort: &'a Path,
    pub config: &'a Path,
    pub out: &'a Path,
    pub verbosity: u8,
}

pub fn run(args: WeightArgs<'_>) -> Result<()> {
    let (cfg, _): (PipelineConfig, _) = config::load(args.config)?;
    let ref_schema = cfg
        .reference
        .as_ref()
        .ok_or_else(|| anyhow!("config {}: `reference` schema is required by `weight`", args.config.display()))?;
    let reference: ReferenceSample = load_reference_csv(args.reference, ref_schema)
        .with_context(|| format!("reference sample {}", args.reference.display()))?;
    let cohort: CohortSample = load_cohort_csv(args.cohort, &cfg.cohort)
        .with_context(|| format!("cohort {}", args.cohort.display()))?;
    let x_names = &cfg.cohort.covariates;
    if &ref_schema.covariates != x_names {
        return Err(anyhow!(
            "reference covariates {:?} must match cohort covariates {:?} in name and order",
            ref_schema.covariates,
            x_names
        ));
    }
    let z_names = cfg.cohort.effective_response_covariates().to_vec();
    let w = run_weighting(&cohort, &reference, x_names, &z_names, &cfg.weighting).map_err(with_hint)?;

    let hash = output::config_hash(&cfg);
    output::prepare_dir(args.out)?;
    let path = write_augmented(args.cohort, args.out, &hash, w.kw.values(), &w.response.propensities, w.kwnr.values())?;

    let d_sum = reference.total_weight();
    let kw_sum = w.kw.sum();
    let summary = WeightsSummary {
        tool_version: output::VERSION,
        config_sha256: hash,
        n_cohort: cohort.len(),
        n_reference: reference.len(),
        n_respondents: cohort.n_respondents(),
        reference_weight_sum: d_sum,
        kw_weight_sum: kw_sum,
        mass_conservation_rel_error: (kw_sum - d_sum).abs() / d_sum,
        kwnr_weight_sum: w.kwnr.sum(),
        cv_kw: w.kw.cv(),
        cv_kwnr: w.kwnr.cv(),
        bandwidth: w.bandwidth,
        floored_count: w.response.floored_count,
        propensity_floor: w.response.floor,
        participation_fit: FitSummary {
            coefficients: w.participation.coefficients.clone(),
            labels: participation_designs(&cohort, &reference, x_names, &cfg.weighting.participation_design)
                .map(|(xc, _)| xc.labels().to_vec())
                .unwrap_or_default(),
            iterations: w.participation.iterations,
            max_score_norm: w.participation.max_score_norm,
            loglik: w.participation.loglik(),
        },
        response_fit: FitSummary {
            coefficients: w.response.fit.coefficients.clone(),
            labels: w.response.design.labels().to_vec(),
            iterations: w.response.fit.iterations,
            max_score_norm: w.response.fit.max_score_norm,
            loglik: w.response.fit.loglik(),
        },
    };
    output::write_json(args.out, "weights_summary.json", &summary)?;

    println!("wrote {}", path.display());
    println!(
        "sum(kw) = {} (reference total {}), CV(kw) = {}, CV(kwNR) = {}, bandwidth = {}, floored = {}",
        sig4(kw_sum),
        sig4(d_sum),
        sig4(summary.cv_kw),
        sig4(summary.cv_kwnr),
        sig4(w.bandwidth),
        w.response.floored_count
    );
    if args.verbosity > 0 {
        for (name, fit) in [("participation", &summary.participation_fit), ("response", &summary.response_fit)] {
            eprintln!(
                "{name} model: {} iterations, score sup-norm {:.3e}",
                fit.iterations, fit.max_score_norm
            );
        }
    }
    Ok(())
}

/// Copies the cohort file row by row, appending the three weight columns.
fn write_augmented(
    cohort_path: &Path,
    dir: &Path,
    hash: &str,
    kw: &[f64],
    r_hat: &[f64],
    kwnr: &[f64],
) -> Result<std::path::PathBuf> {
    let file = File::open(cohort_path).with_context(|| format!("opening {}", cohort_path.display()))?;
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(file);
    let (path, mut w) = output::csv_file(dir, "cohort_weighted.csv", hash)?;
    let mut header = rdr.headers()?.clone();
    for name in ["kw_weight", "r_hat", "kwnr_weight"] {
        header.push_field(name);
    }
    w.write_record(&header)?;
    for (i, rec) in rdr.records().enumerate() {
        let mut rec = rec?;
        for v in [kw[i], r_hat[i], kwnr[i]] {
            rec.push_field(&num(v));
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(path)
}
