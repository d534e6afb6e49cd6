use std::fs::File;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use kwnr::data::{load_cohort_csv, Provenance};
use kwnr::estimate::{estimate_subgroup, kwnr_report};
use kwnr::pipeline::response_stage;
use kwnr::{CohortSample, EstimateReport, WeightSet};
use serde::Serialize;

use crate::config::{self, PipelineConfig};
use crate::output::{self, opt_num, sig4};
use crate::weight::with_hint;

pub struct EstimateArgs<'a> {
    pub cohort: &'a Path,
    pub weights_from: Option<&'a Path>,
    pub config: &'a Path,
    pub out: &'a Path,
    pub verbosity: u8,
}

/// One line of `estimates.csv`.
#[derive(Debug, Serialize)]
struct Row {
    group: String,
    estimate: Option<f64>,
    se: Option<f64>,
    ci_low: Option<f64>,
    ci_high: Option<f64>,
    var1: Option<f64>,
    var2: Option<f64>,
    n: usize,
    n_resp: usize,
    note: Option<String>,
}

impl Row {
    fn from_report(group: String, r: &EstimateReport) -> Self {
        let v = r.variance.as_ref();
        Row {
            group,
            estimate: Some(r.estimate),
            se: v.map(|v| v.se),
            ci_low: v.map(|v| v.ci95.0),
            ci_high: v.map(|v| v.ci95.1),
            var1: v.map(|v| v.var1),
            var2: v.map(|v| v.var2),
            n: r.n_used,
            n_resp: r.n_resp,
            note: r.variance_note.clone(),
        }
    }
}

#[derive(Serialize)]
struct EstimatesFile<'a> {
    tool_version: &'a str,
    config_sha256: &'a str,
    floored_count: usize,
    rows: &'a [Row],
}

/// Reads a numeric column by header name, in file row order.
pub fn read_column(path: &Path, column: &str) -> Result<Vec<f64>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(file);
    let idx = rdr
        .headers()?
        .iter()
        .position(|h| h == column)
        .ok_or_else(|| anyhow!("{}: column `{column}` not found in header", path.display()))?;
    rdr.records()
        .enumerate()
        .map(|(i, rec)| {
            let rec = rec?;
            let raw = rec.get(idx).unwrap_or("");
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| anyhow!("{}: row {}, column `{column}`: `{raw}` is not a finite number", path.display(), i + 1))
        })
        .collect()
}

pub fn run(args: EstimateArgs<'_>) -> Result<()> {
    let (cfg, _): (PipelineConfig, _) = config::load(args.config)?;
    if cfg.cohort.outcome.is_none() {
        bail!("config {}: cohort schema needs an `outcome` column for estimation", args.config.display());
    }
    let cohort: CohortSample = load_cohort_csv(args.cohort, &cfg.cohort)
        .with_context(|| format!("cohort {}", args.cohort.display()))?;
    let source = args.weights_from.unwrap_or(args.cohort);
    let kw_values = read_column(source, &cfg.kw_weight_column)?;
    if kw_values.len() != cohort.len() {
        bail!(
            "{} has {} weight rows but the cohort has {} units",
            source.display(),
            kw_values.len(),
            cohort.len()
        );
    }
    let kw = WeightSet::new(kw_values, Provenance::Kw)
        .with_context(|| format!("column `{}` of {}", cfg.kw_weight_column, source.display()))?;
    let z_names = cfg.cohort.effective_response_covariates().to_vec();
    let (rfit, _) = response_stage(&cohort, &kw, &z_names, &cfg.weighting).map_err(with_hint)?;

    let overall = kwnr_report(&cohort, &kw, &rfit).context("overall estimate")?;
    let mut rows = vec![Row::from_report("overall".into(), &overall)];
    if cfg.cohort.subgroup.is_some() {
        for label in cohort.subgroup_labels() {
            let row = match estimate_subgroup(&cohort, &kw, &rfit, &label) {
                Ok(r) => Row::from_report(label, &r),
                Err(e) => {
                    let mask = cohort.subgroup_mask(&label);
                    Row {
                        n: mask.iter().filter(|&&m| m).count(),
                        n_resp: cohort
                            .records()
                            .iter()
                            .zip(&mask)
                            .filter(|(r, &m)| m && r.respond)
                            .count(),
                        group: label,
                        estimate: None,
                        se: None,
                        ci_low: None,
                        ci_high: None,
                        var1: None,
                        var2: None,
                        note: Some(e.to_string()),
                    }
                }
            };
            rows.push(row);
        }
    }

    let hash = output::config_hash(&cfg);
    output::prepare_dir(args.out)?;
    let (path, mut w) = output::csv_file(args.out, "estimates.csv", &hash)?;
    w.write_record(["group", "estimate", "se", "ci_low", "ci_high", "var1", "var2", "n", "n_resp", "note"])?;
    for r in &rows {
        w.write_record([
            r.group.clone(),
            opt_num(r.estimate),
            opt_num(r.se),
            opt_num(r.ci_low),
            opt_num(r.ci_high),
            opt_num(r.var1),
            opt_num(r.var2),
            r.n.to_string(),
            r.n_resp.to_string(),
            r.note.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    output::write_json(
        args.out,
        "estimates.json",
        &EstimatesFile {
            tool_version: output::VERSION,
            config_sha256: &hash,
            floored_count: rfit.floored_count,
            rows: &rows,
        },
    )?;

    println!("wrote {}", path.display());
    println!("{:<12} {:>10} {:>10} {:>8} {:>8}  note", "group", "estimate", "se", "n", "n_resp");
    for r in &rows {
        println!(
            "{:<12} {:>10} {:>10} {:>8} {:>8}  {}",
            r.group,
            r.estimate.map(sig4).unwrap_or_default(),
            r.se.map(sig4).unwrap_or_default(),
            r.n,
            r.n_resp,
            r.note.as_deref().unwrap_or("")
        );
    }
    if args.verbosity > 0 {
        eprintln!(
            "response model: {} iterations, score sup-norm {:.3e}, {} propensities floored",
            rfit.fit.iterations, rfit.fit.max_score_norm, rfit.floored_count
        );
    }
    Ok(())
}
