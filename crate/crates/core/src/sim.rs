//! Monte-Carlo study of type-I error, power, bias and convergence of the
//! GEE tests under the two-compartment infusion model.

use std::fmt::Write as _;
use std::io::Write;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;
use thiserror::Error;

use crate::format::float17;
use crate::gee::{solve, SolverConfig, SubjectRecord, WorkingModel};
use crate::inference::{
    Contrast, InferenceContext, PkParameter, VarianceKind, EFFECT_COEFS,
};
use crate::pk_model::{
    log_concentration, DesignMatrix, Genotype, InfusionSpec, PkParams, COEF_NAMES, NUM_COEFS,
    NUM_PK_PARAMS,
};

pub const PAPER_INTERCEPTS: [f64; NUM_PK_PARAMS] = [3.72, 1.38, -1.89, -0.35];
pub const PAPER_SIGMA: f64 = 0.27;
/// Random-effect scales on (Vd, K12, K21).
pub const PAPER_TAU: [f64; 3] = [0.12, 0.68, 0.89];
pub const PAPER_TIMES: [f64; 8] = [0.1, 0.5, 0.75, 1.0, 1.5, 2.0, 2.5, 4.5];
pub const PAPER_DOSE: f64 = 1400.0;
pub const PAPER_T_IN: f64 = 0.5;
pub const PAPER_N: usize = 100;
pub const PAPER_REPLICATES: usize = 1000;
pub const ALPHA: f64 = 0.05;

/// Give up on a subject after this many degenerate draws.
const MAX_RESAMPLES: u64 = 1000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("unknown scenario {0} (expected 1..=7)")]
    InvalidScenario(u8),
    #[error("MAF {maf} with n = {n} is outside the fixed grid; enable HWE rounding")]
    UnsupportedGrid { maf: f64, n: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("subject {subject} of replicate {replicate} stayed degenerate after {attempts} draws")]
    EvalFailure { replicate: u64, subject: usize, attempts: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RandomEffectFamily {
    Normal,
    Uniform,
    Gamma,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub scenario_id: u8,
    pub intercepts: [f64; NUM_PK_PARAMS],
    pub sigma: f64,
    /// Random-effect scales on (Vd, K12, K21); Kel has none.
    pub tau: [f64; 3],
    pub family: RandomEffectFamily,
    /// Per-parameter multiplier `m`: both genotype effects equal
    /// `m * intercept`.
    pub effect_multipliers: [f64; NUM_PK_PARAMS],
    pub maf: f64,
    pub n: usize,
    pub times: Vec<f64>,
    pub dose: f64,
    pub t_in: f64,
    pub n_replicates: usize,
    pub seed: u64,
    /// Allow genotype counts off the fixed grid via rounded HWE proportions.
    pub hwe_rounding: bool,
}

impl ScenarioConfig {
    /// One of the seven published scenarios.
    pub fn paper(scenario_id: u8, maf: f64) -> Result<Self, SimError> {
        let (family, effect_multipliers) = match scenario_id {
            1 => (RandomEffectFamily::Normal, [0.0; 4]),
            2 => (RandomEffectFamily::Uniform, [0.0; 4]),
            3 => (RandomEffectFamily::Gamma, [0.0; 4]),
            4 => (RandomEffectFamily::Normal, [0.05, 0.0, 0.0, 0.0]),
            5 => (RandomEffectFamily::Normal, [0.0, 0.05, 0.0, 0.0]),
            6 => (RandomEffectFamily::Normal, [0.0, 0.0, 0.30, 0.0]),
            7 => (RandomEffectFamily::Normal, [0.0, 0.0, 0.0, 0.50]),
            other => return Err(SimError::InvalidScenario(other)),
        };
        let cfg = Self {
            scenario_id,
            intercepts: PAPER_INTERCEPTS,
            sigma: PAPER_SIGMA,
            tau: PAPER_TAU,
            family,
            effect_multipliers,
            maf,
            n: PAPER_N,
            times: PAPER_TIMES.to_vec(),
            dose: PAPER_DOSE,
            t_in: PAPER_T_IN,
            n_replicates: PAPER_REPLICATES,
            seed: 0,
            hwe_rounding: false,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.to_owned()));
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return bad("sigma must be finite and non-negative");
        }
        if self.tau.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
            return bad("tau components must be finite and non-negative");
        }
        if self.times.is_empty()
            || self.times[0] <= 0.0
            || self.times.windows(2).any(|w| w[1] <= w[0])
        {
            return bad("times must be positive and strictly increasing");
        }
        if InfusionSpec::new(self.dose, self.t_in).is_none() {
            return bad("dose and t_in must be positive");
        }
        if self.n == 0 {
            return bad("n must be positive");
        }
        if self.intercepts.iter().chain(&self.effect_multipliers).any(|v| !v.is_finite()) {
            return bad("coefficients must be finite");
        }
        self.genotype_counts().map(|_| ())
    }

    pub fn genotype_counts(&self) -> Result<(usize, usize, usize), SimError> {
        match genotype_counts(self.maf, self.n) {
            Err(SimError::UnsupportedGrid { .. }) if self.hwe_rounding => {
                hwe_genotype_counts(self.maf, self.n)
            }
            r => r,
        }
    }

    /// Generating coefficients in `COEF_NAMES` order.
    pub fn true_beta(&self) -> [f64; NUM_COEFS] {
        let mut beta = [0.0; NUM_COEFS];
        for r in 0..NUM_PK_PARAMS {
            let effect = self.effect_multipliers[r] * self.intercepts[r];
            beta[3 * r] = self.intercepts[r];
            beta[3 * r + 1] = effect;
            beta[3 * r + 2] = effect;
        }
        beta
    }

    pub fn infusion(&self) -> InfusionSpec {
        InfusionSpec::new(self.dose, self.t_in).expect("validated")
    }
}

/// `(n_aa, n_Aa, n_AA)` on the fixed grid (MAF 0.25 or 0.50 with n = 100).
pub fn genotype_counts(maf: f64, n: usize) -> Result<(usize, usize, usize), SimError> {
    match (maf, n) {
        (m, 100) if m == 0.25 => Ok((56, 37, 7)),
        (m, 100) if m == 0.50 => Ok((25, 50, 25)),
        _ => Err(SimError::UnsupportedGrid { maf, n }),
    }
}

/// Hardy-Weinberg proportions rounded to integers by largest remainder.
pub fn hwe_genotype_counts(maf: f64, n: usize) -> Result<(usize, usize, usize), SimError> {
    if !(0.0..=1.0).contains(&maf) {
        return Err(SimError::InvalidConfig(format!("MAF {maf} outside [0, 1]")));
    }
    let q = maf;
    let p = 1.0 - q;
    let exact = [p * p * n as f64, 2.0 * p * q * n as f64, q * q * n as f64];
    let mut counts: Vec<usize> = exact.iter().map(|v| v.floor() as usize).collect();
    let short = n - counts.iter().sum::<usize>();
    let mut order: Vec<usize> = (0..3).collect();
    // Stable sort keeps ties in genotype order.
    order.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.partial_cmp(&ra).unwrap()
    });
    for &k in order.iter().take(short) {
        counts[k] += 1;
    }
    Ok((counts[0], counts[1], counts[2]))
}

/// Independent generator for one (replicate, subject, attempt) triple.
pub fn subject_rng(seed: u64, replicate: u64, subject: u64, attempt: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    for (chunk, word) in key.chunks_exact_mut(8).zip([seed, replicate, subject, attempt]) {
        chunk.copy_from_slice(&word.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

/// Draws `(gamma_Vd, gamma_K12, gamma_K21)`.
pub fn draw_random_effects<R: Rng + ?Sized>(cfg: &ScenarioConfig, rng: &mut R) -> [f64; 3] {
    cfg.tau.map(|tau| {
        if tau == 0.0 {
            return 0.0;
        }
        match cfg.family {
            RandomEffectFamily::Normal => tau * rng.sample::<f64, _>(StandardNormal),
            RandomEffectFamily::Uniform => {
                let half = (12.0 * tau * tau).sqrt() / 2.0;
                rng.random_range(-half..half)
            }
            RandomEffectFamily::Gamma => {
                Gamma::new(tau * tau, 1.0).expect("positive shape").sample(rng)
            }
        }
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedDataset {
    pub subjects: Vec<SubjectRecord>,
    /// Realized `(gamma_Vd, gamma_K12, gamma_K21)` per subject.
    pub random_effects: Vec<[f64; 3]>,
    /// Number of redraws caused by degenerate parameter vectors.
    pub resampled: u64,
}

impl SimulatedDataset {
    /// Subject-level coefficient vectors: the fixed coefficients with each
    /// subject's random effects added to the intercepts.
    pub fn individual_betas(&self, beta: &[f64; NUM_COEFS]) -> Vec<[f64; NUM_COEFS]> {
        self.random_effects
            .iter()
            .map(|g| {
                let mut b = *beta;
                b[0] += g[0];
                b[6] += g[1];
                b[9] += g[2];
                b
            })
            .collect()
    }
}

/// Genotype of subject `i` under the deterministic aa, Aa, AA ordering.
pub fn genotype_of(i: usize, counts: (usize, usize, usize)) -> Genotype {
    if i < counts.0 {
        Genotype::aa
    } else if i < counts.0 + counts.1 {
        Genotype::Aa
    } else {
        Genotype::AA
    }
}

pub fn generate_dataset(cfg: &ScenarioConfig, replicate: u64) -> Result<SimulatedDataset, SimError> {
    cfg.validate()?;
    let counts = cfg.genotype_counts()?;
    let beta = cfg.true_beta();
    let infusion = cfg.infusion();
    let mut subjects = Vec::with_capacity(cfg.n);
    let mut random_effects = Vec::with_capacity(cfg.n);
    let mut resampled = 0;
    for i in 0..cfg.n {
        let genotype = genotype_of(i, counts);
        let theta = DesignMatrix::new(genotype).apply(&beta);
        let mut attempt = 0;
        let (gamma, log_conc) = loop {
            if attempt >= MAX_RESAMPLES {
                return Err(SimError::EvalFailure { replicate, subject: i, attempts: attempt });
            }
            let mut rng = subject_rng(cfg.seed, replicate, i as u64, attempt);
            let gamma = draw_random_effects(cfg, &mut rng);
            let params = PkParams::new(
                theta[0] + gamma[0],
                theta[1],
                theta[2] + gamma[1],
                theta[3] + gamma[2],
            );
            let ys: Result<Vec<f64>, _> = cfg
                .times
                .iter()
                .map(|&t| {
                    let mean = log_concentration(&params, &infusion, t)?;
                    let eps: f64 = rng.sample(StandardNormal);
                    Ok::<_, crate::pk_model::PkError>(if cfg.sigma == 0.0 {
                        mean
                    } else {
                        mean + cfg.sigma * eps
                    })
                })
                .collect();
            match ys {
                Ok(ys) if ys.iter().all(|y| y.is_finite()) => break (gamma, ys),
                _ => {
                    attempt += 1;
                    resampled += 1;
                }
            }
        };
        let record = SubjectRecord::new(
            format!("S{:05}", i + 1),
            infusion,
            cfg.times.clone(),
            log_conc,
            genotype,
        )
        .map_err(|e| SimError::InvalidConfig(e.to_string()))?;
        subjects.push(record);
        random_effects.push(gamma);
    }
    Ok(SimulatedDataset { subjects, random_effects, resampled })
}

/// Everything recorded from fitting and testing one replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateOutcome {
    pub beta_hat: Option<[f64; NUM_COEFS]>,
    /// `[kind][k]` for the k-th entry of `EFFECT_COEFS`; `None` when the
    /// test could not be computed.
    pub wald_reject: [[Option<bool>; 8]; 2],
    /// `[kind][parameter]`.
    pub f_reject: [[Option<bool>; 4]; 2],
    pub resampled: u64,
    pub fit_seconds: f64,
}

const KINDS: [VarianceKind; 2] = [VarianceKind::Plain, VarianceKind::BiasCorrected];

/// Fits and tests one replicate.
pub fn simulate_replicate(cfg: &ScenarioConfig, replicate: u64) -> Result<ReplicateOutcome, SimError> {
    let data = generate_dataset(cfg, replicate)?;
    let start = Instant::now();
    let mut out = ReplicateOutcome {
        beta_hat: None,
        wald_reject: [[None; 8]; 2],
        f_reject: [[None; 4]; 2],
        resampled: data.resampled,
        fit_seconds: 0.0,
    };
    if let Ok(fit) = solve(&data.subjects, &WorkingModel::default(), &SolverConfig::default()) {
        out.beta_hat = Some(fit.beta_hat);
        if let Ok(ctx) = InferenceContext::new(&fit) {
            for (k, kind) in KINDS.into_iter().enumerate() {
                let Ok(cov) = ctx.covariance(kind) else { continue };
                for (j, &coef) in EFFECT_COEFS.iter().enumerate() {
                    let Contrast::Vector(c) = Contrast::coefficient(coef) else { unreachable!() };
                    out.wald_reject[k][j] = ctx.wald(&cov, &c).ok().map(|r| r.p_value < ALPHA);
                }
                for (j, param) in PkParameter::ALL.into_iter().enumerate() {
                    out.f_reject[k][j] = ctx
                        .f_test(&cov, &Contrast::parameter(param))
                        .ok()
                        .map(|r| r.p_value < ALPHA);
                }
            }
        }
    }
    out.fit_seconds = start.elapsed().as_secs_f64();
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RejectionCount {
    pub rejected: usize,
    pub tested: usize,
}

impl RejectionCount {
    pub fn rate(&self) -> f64 {
        if self.tested == 0 {
            f64::NAN
        } else {
            self.rejected as f64 / self.tested as f64
        }
    }

    fn record(&mut self, outcome: Option<bool>) {
        if let Some(r) = outcome {
            self.tested += 1;
            self.rejected += r as usize;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MonteCarloSummary {
    pub scenario_id: u8,
    pub maf: f64,
    pub replicates: usize,
    pub converged: usize,
    pub resampled_subjects: u64,
    /// `[kind][k]` over `EFFECT_COEFS`; kind 0 plain, 1 bias-corrected.
    pub wald: [[RejectionCount; 8]; 2],
    /// `[kind][parameter]` in Vd, Kel, K12, K21 order.
    pub f: [[RejectionCount; 4]; 2],
    pub mean_estimate: [f64; NUM_COEFS],
    pub bias: [f64; NUM_COEFS],
    pub mse: [f64; NUM_COEFS],
    /// Monte-Carlo standard error of each mean estimate.
    pub estimate_se: [f64; NUM_COEFS],
    pub seconds_per_1000: f64,
}

impl MonteCarloSummary {
    pub fn convergence(&self) -> f64 {
        self.converged as f64 / self.replicates as f64
    }

    pub fn kind_index(kind: VarianceKind) -> usize {
        match kind {
            VarianceKind::Plain => 0,
            VarianceKind::BiasCorrected => 1,
        }
    }

    /// Equality of every Monte-Carlo quantity; timing is excluded.
    pub fn same_results(&self, other: &Self) -> bool {
        let mut a = self.clone();
        a.seconds_per_1000 = other.seconds_per_1000;
        a == *other
    }

    fn aggregate(cfg: &ScenarioConfig, outcomes: &[ReplicateOutcome]) -> Self {
        let truth = cfg.true_beta();
        let mut s = Self {
            scenario_id: cfg.scenario_id,
            maf: cfg.maf,
            replicates: outcomes.len(),
            converged: 0,
            resampled_subjects: 0,
            wald: [[RejectionCount::default(); 8]; 2],
            f: [[RejectionCount::default(); 4]; 2],
            mean_estimate: [f64::NAN; NUM_COEFS],
            bias: [f64::NAN; NUM_COEFS],
            mse: [f64::NAN; NUM_COEFS],
            estimate_se: [f64::NAN; NUM_COEFS],
            seconds_per_1000: f64::NAN,
        };
        let mut sum = [0.0; NUM_COEFS];
        let mut sum_sq_err = [0.0; NUM_COEFS];
        let mut seconds = 0.0;
        for o in outcomes {
            s.resampled_subjects += o.resampled;
            seconds += o.fit_seconds;
            for k in 0..2 {
                for j in 0..8 {
                    s.wald[k][j].record(o.wald_reject[k][j]);
                }
                for j in 0..4 {
                    s.f[k][j].record(o.f_reject[k][j]);
                }
            }
            if let Some(b) = o.beta_hat {
                s.converged += 1;
                for c in 0..NUM_COEFS {
                    sum[c] += b[c];
                    sum_sq_err[c] += (b[c] - truth[c]).powi(2);
                }
            }
        }
        if s.converged > 0 {
            let m = s.converged as f64;
            let mut sum_sq_dev = [0.0; NUM_COEFS];
            for c in 0..NUM_COEFS {
                s.mean_estimate[c] = sum[c] / m;
                s.bias[c] = s.mean_estimate[c] - truth[c];
                s.mse[c] = sum_sq_err[c] / m;
            }
            for b in outcomes.iter().filter_map(|o| o.beta_hat) {
                for c in 0..NUM_COEFS {
                    sum_sq_dev[c] += (b[c] - s.mean_estimate[c]).powi(2);
                }
            }
            if s.converged > 1 {
                for c in 0..NUM_COEFS {
                    s.estimate_se[c] = (sum_sq_dev[c] / (m - 1.0)).sqrt() / m.sqrt();
                }
            }
        }
        if !outcomes.is_empty() {
            s.seconds_per_1000 = seconds / outcomes.len() as f64 * 1000.0;
        }
        s
    }
}

/// Runs every replicate of `cfg` in parallel and aggregates in replicate order.
pub fn run_study(cfg: &ScenarioConfig) -> Result<MonteCarloSummary, SimError> {
    cfg.validate()?;
    let outcomes = (0..cfg.n_replicates as u64)
        .into_par_iter()
        .map(|r| simulate_replicate(cfg, r))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(MonteCarloSummary::aggregate(cfg, &outcomes))
}

pub const SUMMARY_HEADER: [&str; 9] = [
    "scenario",
    "maf",
    "hypothesis",
    "method",
    "rate",
    "bias",
    "mse",
    "convergence",
    "seconds_per_1000",
];

fn method_label(test: &str, kind: usize) -> String {
    format!("{test}_{}", KINDS[kind].label())
}

/// Writes the summaries as CSV, one row per (hypothesis, method).
pub fn write_summary_csv<W: Write>(out: W, summaries: &[MonteCarloSummary]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_HEADER)?;
    for s in summaries {
        let common = |hyp: &str, method: String, rate: f64, bias: f64, mse: f64| {
            vec![
                s.scenario_id.to_string(),
                float17(s.maf),
                hyp.to_owned(),
                method,
                float17(rate),
                float17(bias),
                float17(mse),
                float17(s.convergence()),
                float17(s.seconds_per_1000),
            ]
        };
        for kind in 0..2 {
            for (j, &coef) in EFFECT_COEFS.iter().enumerate() {
                w.write_record(common(
                    COEF_NAMES[coef],
                    method_label("wald", kind),
                    s.wald[kind][j].rate(),
                    s.bias[coef],
                    s.mse[coef],
                ))?;
            }
        }
        for kind in 0..2 {
            for (j, param) in PkParameter::ALL.iter().enumerate() {
                w.write_record(common(
                    &format!("C_{}", param.label()),
                    method_label("f", kind),
                    s.f[kind][j].rate(),
                    f64::NAN,
                    f64::NAN,
                ))?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Plain-text table in the layout of the published GEE rows.
pub fn format_summary_table(s: &MonteCarloSummary) -> String {
    let mut t = String::new();
    let _ = writeln!(
        t,
        "Scenario {}  MAF = {:.2}  ({} replicates, {} converged)",
        s.scenario_id, s.maf, s.replicates, s.converged
    );
    let _ = write!(t, "{:<22}", "Parameter");
    for &c in &EFFECT_COEFS {
        let _ = write!(t, "{:>12}", COEF_NAMES[c].trim_start_matches("beta_"));
    }
    t.push('\n');
    let row = |t: &mut String, label: &str, vals: [f64; 8]| {
        let _ = write!(t, "{label:<22}");
        for v in vals {
            let _ = write!(t, "{v:>12.3}");
        }
        t.push('\n');
    };
    for kind in 0..2 {
        let label = format!("GEE ({}) Wald", KINDS[kind].label());
        row(&mut t, &label, s.wald[kind].map(|r| r.rate()));
    }
    for kind in 0..2 {
        let _ = write!(t, "{:<22}", format!("GEE ({}) F", KINDS[kind].label()));
        for r in &s.f[kind] {
            let _ = write!(t, "{:>24.3}", r.rate());
        }
        t.push('\n');
    }
    row(&mut t, "Bias", EFFECT_COEFS.map(|c| s.bias[c]));
    row(&mut t, "MSE", EFFECT_COEFS.map(|c| s.mse[c]));
    let _ = writeln!(
        t,
        "Convergence {:.1}%   time per 1000 fits {:.2} s",
        100.0 * s.convergence(),
        s.seconds_per_1000
    );
    t
}
