mod common;

use nalgebra::DMatrix;
use pkgee::gee::*;
use pkgee::inference::{InferenceContext, VarianceKind};
use pkgee::pk_model::*;
use pkgee::sim::{generate_dataset, ScenarioConfig};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn noise_free(scenario: u8, intercepts: [f64; 4]) -> (ScenarioConfig, Vec<SubjectRecord>) {
    let mut cfg = ScenarioConfig::paper(scenario, 0.5).unwrap();
    cfg.sigma = 0.0;
    cfg.tau = [0.0; 3];
    cfg.intercepts = intercepts;
    let data = generate_dataset(&cfg, 0).unwrap().subjects;
    (cfg, data)
}

#[test]
fn noise_free_effect_free_data_recovers_generating_coefficients() {
    let (cfg, data) = noise_free(1, [3.5, 1.2, -2.1, -0.5]);
    let fit = solve(&data, &WorkingModel::default(), &SolverConfig::default()).unwrap();
    let truth = cfg.true_beta();
    for c in 0..NUM_COEFS {
        assert!((fit.beta_hat[c] - truth[c]).abs() <= 1e-8, "coef {c}");
    }
    let (u, _) = score_and_info(&data, &fit.beta_hat, &WorkingModel::default()).unwrap();
    assert!(u.amax() <= 1e-8, "{} after {} iterations", u.amax(), fit.iterations);
    assert!(fit.iterations > 0);
}

#[test]
fn noise_free_data_with_effects_recovers_generating_coefficients() {
    let (cfg, data) = noise_free(6, [3.8, 1.3, -1.8, -0.4]);
    let fit = solve(&data, &WorkingModel::default(), &SolverConfig::default()).unwrap();
    let truth = cfg.true_beta();
    for c in 0..NUM_COEFS {
        assert!((fit.beta_hat[c] - truth[c]).abs() <= 1e-8, "coef {c}");
    }
}

#[test]
fn empty_data_gives_zero_score_and_information() {
    let (u, i0) = score_and_info(&[], &[0.1; NUM_COEFS], &WorkingModel::default()).unwrap();
    assert_eq!(u.amax(), 0.0);
    assert_eq!(i0.amax(), 0.0);
}

#[test]
fn interpolated_subject_has_zero_score() {
    let beta = initialize(&[], InitStrategy::Default);
    let inf = InfusionSpec::new(1400.0, 0.5).unwrap();
    let p = individual_params(&DesignMatrix::new(Genotype::aa), &beta);
    let times = vec![0.5, 1.0, 2.0];
    let y = times.iter().map(|&t| log_concentration(&p, &inf, t).unwrap()).collect();
    let rec = SubjectRecord::new("s", inf, times, y, Genotype::aa).unwrap();
    let (u, _) = score_and_info(&[rec], &beta, &WorkingModel::default()).unwrap();
    assert_eq!(u.amax(), 0.0);
}

#[test]
fn score_matches_finite_difference_assembly() {
    let mut cfg = ScenarioConfig::paper(1, 0.25).unwrap();
    cfg.seed = 11;
    let data = generate_dataset(&cfg, 0).unwrap().subjects;
    let beta = cfg.true_beta();
    let (u, _) = score_and_info(&data, &beta, &WorkingModel::default()).unwrap();

    let h = 1e-6;
    let mut oracle = [0.0; NUM_COEFS];
    for rec in &data {
        let design = rec.design();
        let mu = |b: &[f64; NUM_COEFS], t: f64| {
            log_concentration(&individual_params(&design, b), &rec.infusion, t).unwrap()
        };
        for (&t, &y) in rec.times().iter().zip(rec.log_conc()) {
            let resid = y - mu(&beta, t);
            for (c, o) in oracle.iter_mut().enumerate() {
                let (mut up, mut down) = (beta, beta);
                up[c] += h;
                down[c] -= h;
                *o += (mu(&up, t) - mu(&down, t)) / (2.0 * h) * resid;
            }
        }
    }
    let norm_u = u.norm();
    let norm_o = oracle.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(common::rel_err(norm_u, norm_o) < 1e-4, "{norm_u} vs {norm_o}");
    for c in 0..NUM_COEFS {
        assert!((u[c] - oracle[c]).abs() <= 1e-4 * norm_o, "coef {c}");
    }
}

#[test]
fn subject_order_does_not_change_the_estimate() {
    let data = common::small_dataset(1, 0.25, 100, 5, 3);
    let base = common::fit(&data);
    let mut shuffled = data.subjects.clone();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(99));
    let other = solve(&shuffled, &WorkingModel::default(), &SolverConfig::default()).unwrap();
    for c in 0..NUM_COEFS {
        assert!((base.beta_hat[c] - other.beta_hat[c]).abs() <= 1e-10, "coef {c}");
    }
}

#[test]
fn working_scale_cancels() {
    let data = common::small_dataset(1, 0.5, 100, 8, 0);
    let unit = WorkingModel::default();
    let scaled = WorkingModel::with_scale(7.25).unwrap();

    let beta = initialize(&data.subjects, InitStrategy::Default);
    let step = |wm: &WorkingModel| {
        let (u, i0) = score_and_info(&data.subjects, &beta, wm).unwrap();
        i0.cholesky().unwrap().solve(&u)
    };
    let (a, b) = (step(&unit), step(&scaled));
    assert!((a - &b).amax() <= 1e-12 * a.amax());

    let fa = solve(&data.subjects, &unit, &SolverConfig::default()).unwrap();
    let fb = solve(&data.subjects, &scaled, &SolverConfig::default()).unwrap();
    for c in 0..NUM_COEFS {
        assert!(common::rel_err(fb.beta_hat[c], fa.beta_hat[c]) <= 1e-12, "coef {c}");
    }
    for kind in [VarianceKind::Plain, VarianceKind::BiasCorrected] {
        let va = InferenceContext::new(&fa).unwrap().covariance(kind).unwrap().matrix;
        let vb = InferenceContext::new(&fb).unwrap().covariance(kind).unwrap().matrix;
        assert!(common::max_rel_err(&vb, &va) <= 1e-12, "{kind:?}");
    }
}

#[test]
fn warm_start_converges_immediately() {
    let data = common::small_dataset(2, 0.25, 100, 4, 1);
    let fit = common::fit(&data);
    let cfg = SolverConfig { init: InitStrategy::Full(fit.beta_hat), ..SolverConfig::default() };
    let again = solve(&data.subjects, &WorkingModel::default(), &cfg).unwrap();
    assert!(again.iterations <= 2, "{} iterations", again.iterations);
}

#[test]
fn converged_score_is_within_tolerance() {
    let data = common::small_dataset(3, 0.25, 100, 6, 2);
    let fit = common::fit(&data);
    let cfg = SolverConfig::default();
    let scale = 1.0 + fit.beta_hat.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(fit.converged);
    assert!(fit.final_score_norm <= cfg.score_tol * scale);
}

#[test]
fn missing_reference_group_is_singular() {
    let data = common::small_dataset(1, 0.5, 40, 1, 0);
    let no_aa: Vec<_> =
        data.subjects.into_iter().filter(|s| s.genotype != Genotype::aa).collect();
    assert!(matches!(
        solve(&no_aa, &WorkingModel::default(), &SolverConfig::default()),
        Err(GeeError::SingularInformation)
    ));
}

#[test]
fn missing_minor_homozygotes_drop_their_columns() {
    let data = common::small_dataset(1, 0.5, 60, 2, 0);
    let no_hom: Vec<_> =
        data.subjects.into_iter().filter(|s| s.genotype != Genotype::AA).collect();
    let fit = solve(&no_hom, &WorkingModel::default(), &SolverConfig::default()).unwrap();
    assert_eq!(fit.dropped_columns, vec![2, 5, 8, 11]);
    assert_eq!(fit.info0_retained().nrows(), 8);
    let i0 = DMatrix::from_fn(12, 12, |r, c| fit.info0[(r, c)]);
    for &c in &fit.dropped_columns {
        assert_eq!(i0.row(c).amax(), 0.0);
    }
}

#[test]
fn user_intercepts_initialize_with_zero_effects() {
    let b = initialize(&[], InitStrategy::Intercepts([1.0, 2.0, 3.0, 4.0]));
    assert_eq!(b, [1.0, 0.0, 0.0, 2.0, 0.0, 0.0, 3.0, 0.0, 0.0, 4.0, 0.0, 0.0]);
}
