mod common;

use pkgee::format::parse_float17;
use pkgee::inference::EFFECT_COEFS;
use pkgee::pk_model::*;
use pkgee::sim::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn moments(cfg: &ScenarioConfig, draws: usize) -> [(f64, f64); 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut sum = [0.0; 3];
    let mut sum_sq = [0.0; 3];
    for _ in 0..draws {
        let g = draw_random_effects(cfg, &mut rng);
        for k in 0..3 {
            sum[k] += g[k];
            sum_sq[k] += g[k] * g[k];
        }
    }
    let n = draws as f64;
    std::array::from_fn(|k| {
        let mean = sum[k] / n;
        (mean, sum_sq[k] / n - mean * mean)
    })
}

#[test]
fn uniform_effects_have_variance_tau_squared() {
    let cfg = ScenarioConfig::paper(2, 0.25).unwrap();
    for (k, (mean, var)) in moments(&cfg, 1_000_000).into_iter().enumerate() {
        let tau2 = cfg.tau[k] * cfg.tau[k];
        assert!((var - tau2).abs() <= 0.01 * tau2, "component {k}: {var} vs {tau2}");
        assert!(mean.abs() < 0.01);
    }
}

#[test]
fn gamma_effects_have_mean_tau_squared() {
    let cfg = ScenarioConfig::paper(3, 0.25).unwrap();
    for (k, (mean, _)) in moments(&cfg, 1_000_000).into_iter().enumerate() {
        let tau2 = cfg.tau[k] * cfg.tau[k];
        assert!((mean - tau2).abs() <= 0.01 * tau2, "component {k}: {mean} vs {tau2}");
    }
}

#[test]
fn zero_tau_gives_zero_effects_for_every_family() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for id in 1..=3 {
        let mut cfg = ScenarioConfig::paper(id, 0.5).unwrap();
        cfg.tau = [0.0; 3];
        for _ in 0..100 {
            assert_eq!(draw_random_effects(&cfg, &mut rng), [0.0; 3]);
        }
    }
}

#[test]
fn noiseless_generation_is_the_model_mean() {
    let mut cfg = ScenarioConfig::paper(1, 0.25).unwrap();
    cfg.sigma = 0.0;
    cfg.tau = [0.0; 3];
    let data = generate_dataset(&cfg, 0).unwrap();
    let p = PkParams::from_array(cfg.intercepts);
    for s in &data.subjects {
        for (&t, &y) in s.times().iter().zip(s.log_conc()) {
            assert_eq!(y, log_concentration(&p, &cfg.infusion(), t).unwrap());
        }
    }
}

#[test]
fn scenario_four_heterozygote_volume() {
    let mut cfg = ScenarioConfig::paper(4, 0.25).unwrap();
    cfg.sigma = 0.0;
    cfg.tau = [0.0; 3];
    let data = generate_dataset(&cfg, 0).unwrap();
    let het = data.subjects.iter().position(|s| s.genotype == Genotype::Aa).unwrap();
    let beta = data.individual_betas(&cfg.true_beta())[het];
    let p = individual_params(&DesignMatrix::new(Genotype::Aa), &beta);
    assert!((p.log_vd - 3.906).abs() < 1e-12);
    let want = log_concentration(&p, &cfg.infusion(), 1.0).unwrap();
    let t = data.subjects[het].times().iter().position(|&t| t == 1.0).unwrap();
    assert_eq!(data.subjects[het].log_conc()[t], want);
}

#[test]
fn genotype_blocks_follow_counts() {
    let cfg = ScenarioConfig::paper(1, 0.25).unwrap();
    let data = generate_dataset(&cfg, 0).unwrap();
    let count = |g| data.subjects.iter().filter(|s| s.genotype == g).count();
    assert_eq!((count(Genotype::aa), count(Genotype::Aa), count(Genotype::AA)), (56, 37, 7));
}

#[test]
fn datasets_depend_only_on_seed_and_replicate() {
    let mut cfg = ScenarioConfig::paper(3, 0.5).unwrap();
    cfg.seed = 17;
    let a = generate_dataset(&cfg, 5).unwrap();
    let b = std::thread::spawn(move || generate_dataset(&cfg, 5).unwrap()).join().unwrap();
    assert_eq!(a, b);
    let mut other = ScenarioConfig::paper(3, 0.5).unwrap();
    other.seed = 18;
    assert_ne!(a, generate_dataset(&other, 5).unwrap());
}

#[test]
fn study_results_do_not_depend_on_thread_count() {
    let mut cfg = ScenarioConfig::paper(5, 0.25).unwrap();
    cfg.n_replicates = 40;
    cfg.seed = 3;
    let run = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_study(&cfg).unwrap())
    };
    let one = run(1);
    let four = run(4);
    assert!(one.same_results(&four));
}

#[test]
fn single_replicate_summary() {
    let mut cfg = ScenarioConfig::paper(4, 0.5).unwrap();
    cfg.n_replicates = 1;
    cfg.seed = 8;
    let s = run_study(&cfg).unwrap();
    let fit = common::fit(&generate_dataset(&cfg, 0).unwrap());
    let truth = cfg.true_beta();
    for c in 0..NUM_COEFS {
        assert_eq!(s.bias[c], fit.beta_hat[c] - truth[c]);
    }
    for kind in 0..2 {
        for r in s.wald[kind].iter().chain(&s.f[kind]) {
            assert!(r.rate() == 0.0 || r.rate() == 1.0);
        }
    }
}

#[test]
fn normal_scenario_effect_estimates_are_nearly_unbiased() {
    let mut cfg = ScenarioConfig::paper(1, 0.25).unwrap();
    cfg.seed = 5150;
    let s = run_study(&cfg).unwrap();
    assert_eq!(s.converged, s.replicates);
    for &c in &EFFECT_COEFS {
        assert!(s.bias[c].abs() <= 0.06, "{}: {}", COEF_NAMES[c], s.bias[c]);
    }
}

#[test]
fn summary_csv_has_one_row_per_hypothesis_and_method() {
    let mut cfg = ScenarioConfig::paper(6, 0.25).unwrap();
    cfg.n_replicates = 5;
    let s = run_study(&cfg).unwrap();
    let mut buf = Vec::new();
    write_summary_csv(&mut buf, &[s.clone()]).unwrap();
    let mut rdr = csv::Reader::from_reader(buf.as_slice());
    assert_eq!(rdr.headers().unwrap().iter().collect::<Vec<_>>(), SUMMARY_HEADER);
    let rows: Vec<_> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 2 * 8 + 2 * 4);
    let first = &rows[0];
    assert_eq!(&first[2], "beta_Vd_Aa");
    assert_eq!(&first[3], "wald_plain");
    assert_eq!(parse_float17(&first[4]).unwrap(), s.wald[0][0].rate());
    assert_eq!(parse_float17(&first[5]).unwrap(), s.bias[1]);
    assert!(rows.iter().any(|r| &r[2] == "C_K21" && &r[3] == "f_bias_corrected"));
    assert!(format_summary_table(&s).contains("Scenario 6"));
}

#[test]
fn off_grid_sizes_need_rounding_mode() {
    let mut cfg = ScenarioConfig::paper(1, 0.25).unwrap();
    cfg.n = 2000;
    assert!(matches!(cfg.validate(), Err(SimError::UnsupportedGrid { .. })));
    cfg.hwe_rounding = true;
    assert_eq!(cfg.genotype_counts().unwrap(), (1125, 750, 125));
}
