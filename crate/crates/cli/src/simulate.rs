use std::path::Path;

use anyhow::{bail, Context, Result};
use kwnr::sim::{run_monte_carlo, Estimator, MonteCarlo, SimScenario};
use serde::Serialize;

use crate::config::{self, SimulateConfig};
use crate::output::{self, num, sig4};

pub struct SimulateArgs<'a> {
    pub config: &'a Path,
    pub reps: Option<usize>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub out: &'a Path,
    pub verbosity: u8,
}

#[derive(Serialize)]
struct CellReport<'a> {
    label: &'a str,
    scenario: &'a SimScenario,
    metrics: &'a kwnr::sim::SimMetrics,
}

#[derive(Serialize)]
struct MetricsFile<'a> {
    tool_version: &'a str,
    config_sha256: &'a str,
    master_seed: u64,
    cells: Vec<CellReport<'a>>,
}

pub fn run(args: SimulateArgs<'_>) -> Result<()> {
    let (mut cfg, raw): (SimulateConfig, _) = config::load(args.config)?;
    if let Some(r) = args.reps {
        cfg.scenario.reps = r;
    }
    let seed = match args.seed {
        Some(s) => s,
        None if SimulateConfig::seed_given(&raw) => cfg.scenario.master_seed,
        None => rand::random(),
    };
    cfg.scenario.master_seed = seed;
    println!("master seed: {seed}");
    if cfg.cells.is_empty() {
        bail!("config lists no simulation cells");
    }
    let hash = output::config_hash(&cfg);
    output::prepare_dir(args.out)?;

    let mut runs: Vec<(String, SimScenario, MonteCarlo)> = Vec::new();
    for cell in &cfg.cells {
        let scn = cell.apply(&cfg.scenario);
        if args.verbosity > 0 {
            eprintln!(
                "cell {}: beta_c = ({}, {}), {} replicates",
                cell.label, scn.beta_c[0], scn.beta_c[1], scn.reps
            );
        }
        let mc = run_monte_carlo(&scn, args.threads).with_context(|| format!("cell {}", cell.label))?;
        if args.verbosity > 0 && mc.metrics.failed > 0 {
            for f in &mc.metrics.failures {
                eprintln!("  replicate {} failed: {}", f.rep, f.error);
            }
        }
        runs.push((cell.label.clone(), scn, mc));
    }

    write_table1(args.out, &hash, &runs)?;
    write_table2(args.out, &hash, &runs)?;
    if cfg.write_replicates {
        write_replicates(args.out, &hash, &runs)?;
    }
    output::write_json(
        args.out,
        "metrics.json",
        &MetricsFile {
            tool_version: output::VERSION,
            config_sha256: &hash,
            master_seed: seed,
            cells: runs
                .iter()
                .map(|(label, scenario, mc)| CellReport {
                    label,
                    scenario,
                    metrics: &mc.metrics,
                })
                .collect(),
        },
    )?;
    print_summary(&runs);
    Ok(())
}

fn write_table1(dir: &Path, hash: &str, runs: &[(String, SimScenario, MonteCarlo)]) -> Result<()> {
    let (_, mut w) = output::csv_file(dir, "table1.csv", hash)?;
    let mut header = vec!["estimator".to_string()];
    for (label, _, _) in runs {
        for col in ["rb_x100", "emp_var_x1e4", "mse_x1e4"] {
            header.push(format!("{label}_{col}"));
        }
    }
    w.write_record(&header)?;
    for e in Estimator::ALL {
        let mut row = vec![e.key().to_string()];
        for (_, _, mc) in runs {
            let m = mc.metrics.get(e);
            row.push(num(m.rb_pct));
            row.push(num(m.emp_var * 1e4));
            row.push(num(m.mse * 1e4));
        }
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn write_table2(dir: &Path, hash: &str, runs: &[(String, SimScenario, MonteCarlo)]) -> Result<()> {
    let (_, mut w) = output::csv_file(dir, "table2.csv", hash)?;
    w.write_record([
        "cell",
        "beta_c0",
        "beta_c1",
        "beta_y0",
        "beta_r0",
        "mean_outcome",
        "response_rate",
        "cv_true",
        "cv_kw",
        "cv_kwnr",
        "mean_var1",
        "mean_var2",
        "mean_tl_variance",
        "emp_var_kwnr",
        "vr",
        "reps",
        "failed",
    ])?;
    for (label, scn, mc) in runs {
        let m = &mc.metrics;
        w.write_record([
            label.clone(),
            num(scn.beta_c[0]),
            num(scn.beta_c[1]),
            num(scn.beta_y[0]),
            num(scn.beta_r[0]),
            num(m.mean_truth),
            num(m.mean_response_rate),
            num(m.mean_cv_true),
            num(m.mean_cv_kw),
            num(m.mean_cv_kwnr),
            num(m.mean_var1),
            num(m.mean_var2),
            num(m.mean_tl_variance),
            num(m.get(Estimator::KwnrR).emp_var),
            num(m.vr),
            m.reps.to_string(),
            m.failed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn write_replicates(dir: &Path, hash: &str, runs: &[(String, SimScenario, MonteCarlo)]) -> Result<()> {
    let (_, mut w) = output::csv_file(dir, "replicates.csv", hash)?;
    let mut header: Vec<String> = ["cell", "rep", "truth", "response_rate"].map(String::from).to_vec();
    header.extend(Estimator::ALL.iter().map(|e| e.key().to_string()));
    header.extend(
        ["var1", "var2", "tl_variance", "cv_true", "cv_kw", "cv_kwnr", "n_resp", "bandwidth", "floored"]
            .map(String::from),
    );
    w.write_record(&header)?;
    for (label, _, mc) in runs {
        for r in &mc.records {
            let mut row = vec![label.clone(), r.rep.to_string(), num(r.truth), num(r.population_response_rate)];
            row.extend(r.estimates.iter().map(|&v| num(v)));
            row.extend([r.var1, r.var2, r.tl_variance, r.cv_true, r.cv_kw, r.cv_kwnr].map(num));
            row.extend([r.n_resp.to_string(), num(r.bandwidth), r.floored.to_string()]);
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn print_summary(runs: &[(String, SimScenario, MonteCarlo)]) {
    for (label, _, mc) in runs {
        let m = &mc.metrics;
        println!(
            "\n[{label}] reps={} failed={} mean outcome={} response rate={}",
            m.reps,
            m.failed,
            sig4(m.mean_truth),
            sig4(m.mean_response_rate)
        );
        println!("{:<18} {:>10} {:>12} {:>12}", "estimator", "RBx100", "empVar x1e4", "MSE x1e4");
        for e in &m.estimators {
            println!(
                "{:<18} {:>10} {:>12} {:>12}",
                e.estimator.label(),
                sig4(e.rb_pct),
                sig4(e.emp_var * 1e4),
                sig4(e.mse * 1e4)
            );
        }
        println!(
            "VR={}  CV(true)={}  CV(KW)={}  CV(kwNR)={}",
            sig4(m.vr),
            sig4(m.mean_cv_true),
            sig4(m.mean_cv_kw),
            sig4(m.mean_cv_kwnr)
        );
    }
}
