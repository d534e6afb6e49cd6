use kwnr::data::{CohortRecord, CohortSample, Provenance, ReferenceRecord, ReferenceSample, WeightSet};
use kwnr::glm::{participation_fit, DesignMatrix, DesignSpec, FitOptions};
use kwnr::linalg::Cholesky;
use kwnr::nr::{fit_response_model, kwnr_weights, BaseWeightMode, NrConfig};
use kwnr::pipeline::{run_weighting, WeightingConfig};
use kwnr::sim::{
    draw_pps_cohort, draw_srs_reference, generate_population, run_monte_carlo, stream_rng,
    CertaintyPolicy, Estimator, SimScenario, Stream,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn expit(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

fn simulated_cohort(n: usize, gamma: [f64; 2], seed: u64) -> CohortSample<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    CohortSample::new(
        (0..n)
            .map(|_| {
                let x: f64 = rng.sample(StandardNormal);
                let respond = rng.random::<f64>() < expit(gamma[0] + gamma[1] * x);
                CohortRecord {
                    covariates: vec![x],
                    response_covariates: vec![x],
                    respond,
                    outcome: respond.then_some(x),
                    subgroup: None,
                }
            })
            .collect(),
    )
    .unwrap()
}

fn z_design(c: &CohortSample<f64>) -> DesignMatrix<f64> {
    DesignMatrix::build(&c.response_covariate_rows(), &["x".to_string()], &DesignSpec::default()).unwrap()
}

fn unit_cfg() -> NrConfig<f64> {
    NrConfig {
        base_weight_mode: BaseWeightMode::Unit,
        ..Default::default()
    }
}

#[test]
fn response_model_recovers_coefficients() {
    let c = simulated_cohort(8000, [0.2, 0.5], 17);
    let rf = fit_response_model(&c, z_design(&c), &WeightSet::unit(8000), &unit_cfg(), &FitOptions::default()).unwrap();
    let cov = Cholesky::factor(&rf.fit.info_matrix).unwrap().inverse();
    for (k, truth) in [0.2, 0.5].into_iter().enumerate() {
        let se = cov[(k, k)].sqrt();
        assert!((rf.fit.coefficients[k] - truth).abs() < 3.0 * se, "coef {k}");
    }
    let mean_r: f64 = rf.fit.fitted.iter().sum::<f64>() / 8000.0;
    assert!((mean_r - 0.55).abs() < 0.02);
}

#[test]
fn flat_response_gives_constant_propensity() {
    let c = simulated_cohort(4000, [0.0, 0.0], 3);
    let rf = fit_response_model(&c, z_design(&c), &WeightSet::unit(4000), &unit_cfg(), &FitOptions::default()).unwrap();
    let rate = c.n_respondents() as f64 / 4000.0;
    let cov = Cholesky::factor(&rf.fit.info_matrix).unwrap().inverse();
    assert!(rf.fit.coefficients[1].abs() < 3.0 * cov[(1, 1)].sqrt());
    assert!(rf.fit.fitted.iter().all(|r| (r - rate).abs() < 0.05));
}

#[test]
fn equal_kw_weights_match_unit_mode() {
    let c = simulated_cohort(500, [0.2, 0.5], 8);
    let kw = WeightSet::new(vec![37.5; 500], Provenance::Kw).unwrap();
    let a = fit_response_model(&c, z_design(&c), &kw, &NrConfig::default(), &FitOptions::default()).unwrap();
    let b = fit_response_model(&c, z_design(&c), &WeightSet::unit(500), &unit_cfg(), &FitOptions::default()).unwrap();
    for k in 0..2 {
        assert!((a.fit.coefficients[k] - b.fit.coefficients[k]).abs() < 1e-9);
    }
}

#[test]
fn respondent_only_support() {
    let c = simulated_cohort(600, [0.2, 0.5], 21);
    let kw = WeightSet::new((0..600).map(|i| 1.0 + (i % 5) as f64).collect(), Provenance::Kw).unwrap();
    let rf = fit_response_model(&c, z_design(&c), &kw, &NrConfig::default(), &FitOptions::default()).unwrap();
    let w = kwnr_weights(&kw, &rf, &c).unwrap();
    for (r, v) in c.records().iter().zip(w.values()) {
        assert_eq!(*v > 0.0, r.respond);
    }
}

#[test]
fn inflation_identity_over_replicates() {
    let mut ratio = 0.0;
    for rep in 0..200 {
        let c = simulated_cohort(400, [0.2, 0.5], 1000 + rep);
        let kw = WeightSet::new(c.records().iter().map(|r| 1.0 + r.covariates[0].abs()).collect(), Provenance::Kw).unwrap();
        let rf = fit_response_model(&c, z_design(&c), &kw, &NrConfig::default(), &FitOptions::default()).unwrap();
        let w = kwnr_weights(&kw, &rf, &c).unwrap();
        ratio += w.sum() / kw.sum();
    }
    ratio /= 200.0;
    assert!(ratio > 0.95 && ratio < 1.05, "{ratio}");
}

#[test]
fn exchangeable_samples_have_flat_participation_slope() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut draw = || -> f64 { rng.sample(StandardNormal) };
    let cohort = CohortSample::new(
        (0..2000)
            .map(|_| {
                let x = draw();
                CohortRecord { covariates: vec![x], response_covariates: vec![x], respond: true, outcome: Some(0.0), subgroup: None }
            })
            .collect(),
    )
    .unwrap();
    let reference = ReferenceSample::new((0..2000).map(|_| ReferenceRecord { covariates: vec![draw()], design_weight: 1.0 }).collect()).unwrap();
    let names = vec!["x".to_string()];
    let fit = participation_fit(&cohort, &reference, &names, &DesignSpec::default(), &FitOptions::default()).unwrap();
    let se = Cholesky::factor(&fit.info_matrix).unwrap().inverse()[(1, 1)].sqrt();
    assert!(fit.coefficients[1].abs() < 3.0 * se);
}

#[test]
fn selection_on_x_is_detected_and_kw_mass_conserved() {
    let scn = SimScenario { beta_c: [-1.0, 1.5], ..Default::default() };
    let pop = generate_population(&scn, &mut stream_rng(5, 0, Stream::Population));
    let draw = draw_pps_cohort(&pop, 8000, scn.beta_c, CertaintyPolicy::Cap, &mut stream_rng(5, 0, Stream::Cohort)).unwrap();
    let reference = draw_srs_reference(&pop, 2000, &mut stream_rng(5, 0, Stream::Reference)).unwrap();
    let cohort = CohortSample::new(
        draw.units
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
    .unwrap();
    let names = vec!["x".to_string()];
    let w = run_weighting(&cohort, &reference, &names, &names, &WeightingConfig::default()).unwrap();
    let slope = w.participation.coefficients[1];
    let se = Cholesky::factor(&w.participation.info_matrix).unwrap().inverse()[(1, 1)].sqrt();
    assert!(slope > 0.0 && slope / se > 10.0);
    assert!((w.kw.sum() - 200_000.0).abs() / 200_000.0 < 1e-9);
    assert_eq!(draw.units.len(), 8000);
}

#[test]
fn no_selection_and_mcar_response_is_unbiased() {
    let scn = SimScenario {
        population_size: 40_000,
        cohort_size: 1_600,
        reference_size: 400,
        beta_c: [-1.0, 0.0],
        beta_r: [0.2, 0.0],
        reps: 40,
        master_seed: 8,
        ..Default::default()
    };
    let mc = run_monte_carlo(&scn, None).unwrap();
    for e in Estimator::ALL {
        let m = mc.metrics.get(e);
        let se_of_mean = (m.emp_var / 40.0).sqrt();
        assert!(m.bias.abs() < 4.0 * se_of_mean, "{e:?}: bias {} se {}", m.bias, se_of_mean);
    }
    assert!(mc.metrics.mean_cv_true < 1e-12);
}
