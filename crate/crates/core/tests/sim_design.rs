use kwnr::sim::{
    draw_pps_cohort, generate_population, inclusion_probabilities, stream_rng, CertaintyPolicy,
    Population, SimScenario, Stream,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn population(rep: u64) -> Population {
    let scn = SimScenario::default();
    generate_population(&scn, &mut stream_rng(11, rep, Stream::Population))
}

fn mean_true_weight_cv(beta_c: [f64; 2], reps: u64) -> f64 {
    let mut total = 0.0;
    for rep in 0..reps {
        let pop = population(rep);
        let mut rng = stream_rng(11, rep, Stream::Cohort);
        let draw = draw_pps_cohort(&pop, 8000, beta_c, CertaintyPolicy::Cap, &mut rng).unwrap();
        total += draw.true_weights.cv();
    }
    total / reps as f64
}

#[test]
fn flat_measure_of_size_is_srs() {
    let pop = population(0);
    let mut rng = stream_rng(11, 0, Stream::Cohort);
    let draw = draw_pps_cohort(&pop, 8000, [-1.0, 0.0], CertaintyPolicy::Cap, &mut rng).unwrap();
    assert_eq!(draw.units.len(), 8000);
    assert!(draw.true_weights.cv() < 1e-12);
    for &w in draw.true_weights.values() {
        assert!((w - 25.0).abs() < 1e-9);
    }
}

#[test]
fn moderate_selection_gives_cv_near_half() {
    let cv = mean_true_weight_cv([-1.0, 0.5], 200);
    assert!((cv - 0.52).abs() <= 0.052, "mean CV(d) {cv}");
}

#[test]
fn strong_selection_gives_cv_near_two_and_a_half() {
    let cv = mean_true_weight_cv([-1.0, 1.5], 200);
    assert!((cv - 2.55).abs() <= 0.255, "mean CV(d) {cv}");
}

#[test]
fn systematic_pps_hits_inclusion_probabilities() {
    let mos: Vec<f64> = (1..=12).map(|k| (k as f64).powf(1.3)).collect();
    let pi = inclusion_probabilities(&mos, 4, CertaintyPolicy::Cap).unwrap();
    assert!((pi.iter().sum::<f64>() - 4.0).abs() < 1e-12);
    let pop = Population {
        x: (1..=12).map(|k| (k as f64).ln()).collect(),
        y: vec![false; 12],
        respond: vec![true; 12],
    };
    let beta = [0.0, 1.3];
    let draws = 40_000;
    let mut hits = [0usize; 12];
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..draws {
        let d = draw_pps_cohort(&pop, 4, beta, CertaintyPolicy::Cap, &mut rng).unwrap();
        assert_eq!(d.units.len(), 4);
        assert!(d.units.windows(2).all(|w| w[0] < w[1]));
        for &u in &d.units {
            hits[u] += 1;
        }
    }
    for k in 0..12 {
        let freq = hits[k] as f64 / draws as f64;
        let se = (pi[k] * (1.0 - pi[k]) / draws as f64).sqrt();
        assert!((freq - pi[k]).abs() < 5.0 * se + 1e-12, "unit {k}: {freq} vs {}", pi[k]);
    }
}

#[test]
fn certainty_units_are_capped_or_rejected() {
    let mos = [100.0, 1.0, 1.0, 1.0, 1.0, 1.0];
    let pi = inclusion_probabilities(&mos, 3, CertaintyPolicy::Cap).unwrap();
    assert_eq!(pi[0], 1.0);
    for p in &pi[1..] {
        assert!((p - 0.4).abs() < 1e-12);
    }
    let err = inclusion_probabilities(&mos, 3, CertaintyPolicy::Error).unwrap_err();
    assert!(err.to_string().contains("inclusion probability"));
}
