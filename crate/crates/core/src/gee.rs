//! Estimating equations for the shared-coefficient working model and the
//! Gauss-Newton (Fisher scoring) solver.
//!
//! The working model is the constant-CV specification on log
//! concentrations: unit variance function, identity working correlation and
//! a scale parameter that cancels from every downstream quantity.

use nalgebra::{DMatrix, DVector, SMatrix, SVector};
use thiserror::Error;

use crate::pk_model::{
    individual_params, log_concentration_with_gradient, DesignMatrix, Genotype, InfusionSpec,
    PkError, NUM_COEFS, NUM_PK_PARAMS,
};

pub type CoefVector = SVector<f64, NUM_COEFS>;
pub type CoefMatrix = SMatrix<f64, NUM_COEFS, NUM_COEFS>;

/// Intercepts of the log PK parameters used to start the solver by default.
pub const DEFAULT_INTERCEPTS: [f64; NUM_PK_PARAMS] = [3.72, 1.38, -1.89, -0.35];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RecordError {
    #[error("subject {0}: no observations")]
    Empty(String),
    #[error("subject {id}: {times} times but {values} concentrations")]
    LengthMismatch { id: String, times: usize, values: usize },
    #[error("subject {id}: time {t} at index {index} must be > 0 (log transform of the model)")]
    NonPositiveTime { id: String, index: usize, t: f64 },
    #[error("subject {id}: times must be strictly increasing (index {index})")]
    NotIncreasing { id: String, index: usize },
    #[error("subject {id}: non-finite value at index {index}")]
    NonFinite { id: String, index: usize },
}

/// One subject's infusion, sampling times, log concentrations and genotype.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectRecord {
    pub subject_id: String,
    pub infusion: InfusionSpec,
    times: Vec<f64>,
    log_conc: Vec<f64>,
    pub genotype: Genotype,
}

impl SubjectRecord {
    pub fn new(
        subject_id: impl Into<String>,
        infusion: InfusionSpec,
        times: Vec<f64>,
        log_conc: Vec<f64>,
        genotype: Genotype,
    ) -> Result<Self, RecordError> {
        let id = subject_id.into();
        if times.is_empty() {
            return Err(RecordError::Empty(id));
        }
        if times.len() != log_conc.len() {
            return Err(RecordError::LengthMismatch {
                id,
                times: times.len(),
                values: log_conc.len(),
            });
        }
        for (index, (&t, &y)) in times.iter().zip(&log_conc).enumerate() {
            if !t.is_finite() || !y.is_finite() {
                return Err(RecordError::NonFinite { id, index });
            }
            if t <= 0.0 {
                return Err(RecordError::NonPositiveTime { id, index, t });
            }
            if index > 0 && t <= times[index - 1] {
                return Err(RecordError::NotIncreasing { id, index });
            }
        }
        Ok(Self { subject_id: id, infusion, times, log_conc, genotype })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn log_conc(&self) -> &[f64] {
        &self.log_conc
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn design(&self) -> DesignMatrix {
        DesignMatrix::new(self.genotype)
    }

    /// Same profile, different genotype.
    pub fn with_genotype(&self, genotype: Genotype) -> Self {
        Self { genotype, ..self.clone() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarianceFunction {
    /// `v == 1`: constant CV on the natural scale.
    Unit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WorkingCorrelation {
    Identity,
}

/// Working covariance `V_i = phi * A_i^{1/2} R_i A_i^{1/2}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorkingModel {
    pub variance_function: VarianceFunction,
    pub working_correlation: WorkingCorrelation,
    scale_phi: f64,
}

impl Default for WorkingModel {
    fn default() -> Self {
        Self {
            variance_function: VarianceFunction::Unit,
            working_correlation: WorkingCorrelation::Identity,
            scale_phi: 1.0,
        }
    }
}

impl WorkingModel {
    /// Working model with a non-unit scale. The scale cancels from the
    /// solver step and from both sandwich estimators.
    pub fn with_scale(scale_phi: f64) -> Option<Self> {
        (scale_phi.is_finite() && scale_phi > 0.0)
            .then(|| Self { scale_phi, ..Self::default() })
    }

    pub fn scale_phi(&self) -> f64 {
        self.scale_phi
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitStrategy {
    /// Paper-scale intercepts, zero SNP effects.
    Default,
    /// User intercepts for (log Vd, log Kel, log K12, log K21), zero effects.
    Intercepts([f64; NUM_PK_PARAMS]),
    /// A full coefficient vector, e.g. a previous solution.
    Full([f64; NUM_COEFS]),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub max_iterations: usize,
    pub rel_step_tol: f64,
    pub score_tol: f64,
    pub max_halvings: usize,
    pub init: InitStrategy,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            rel_step_tol: 1e-8,
            score_tol: 1e-8,
            max_halvings: 20,
            init: InitStrategy::Default,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeeError {
    #[error("model evaluation failed for subject {subject_id}: {source}")]
    EvalFailure {
        subject_id: String,
        #[source]
        source: PkError,
    },
    #[error("no convergence after {iterations} iterations (|U|inf = {score_norm:e})")]
    NotConverged { iterations: usize, score_norm: f64 },
    #[error("information matrix is singular on the retained columns")]
    SingularInformation,
    #[error("invalid solver configuration: {0}")]
    InvalidConfig(&'static str),
}

/// Per-subject Jacobian (`n_i x 12`) and residual vector at one `beta`.
#[derive(Debug, Clone)]
pub struct SubjectEval {
    pub jacobian: DMatrix<f64>,
    pub residual: DVector<f64>,
}

/// Evaluates `D_i` and `S_i = y_i - mu_i` for one subject.
pub fn evaluate_subject(
    record: &SubjectRecord,
    beta: &[f64; NUM_COEFS],
) -> Result<SubjectEval, GeeError> {
    let design = record.design();
    let params = individual_params(&design, beta);
    let n = record.len();
    let mut jacobian = DMatrix::zeros(n, NUM_COEFS);
    let mut residual = DVector::zeros(n);
    for (j, (&t, &y)) in record.times.iter().zip(&record.log_conc).enumerate() {
        let (mu, grad) = log_concentration_with_gradient(&params, &record.infusion, t)
            .map_err(|source| GeeError::EvalFailure {
                subject_id: record.subject_id.clone(),
                source,
            })?;
        let row = design.pull_back(&grad);
        for (k, v) in row.iter().enumerate() {
            jacobian[(j, k)] = *v;
        }
        residual[j] = y - mu;
    }
    Ok(SubjectEval { jacobian, residual })
}

/// Accumulates `U = sum D_i^T S_i / phi` and `I0 = sum D_i^T D_i / phi`
/// without materializing the Jacobians. Subjects are reduced in input order.
fn accumulate(
    data: &[SubjectRecord],
    beta: &[f64; NUM_COEFS],
    wm: &WorkingModel,
) -> Result<(CoefVector, CoefMatrix), GeeError> {
    let mut score = CoefVector::zeros();
    let mut info = CoefMatrix::zeros();
    for record in data {
        let design = record.design();
        let params = individual_params(&design, beta);
        for (&t, &y) in record.times.iter().zip(&record.log_conc) {
            let (mu, grad) = log_concentration_with_gradient(&params, &record.infusion, t)
                .map_err(|source| GeeError::EvalFailure {
                    subject_id: record.subject_id.clone(),
                    source,
                })?;
            let row = CoefVector::from(design.pull_back(&grad));
            score.axpy(y - mu, &row, 1.0);
            info.ger(1.0, &row, &row, 1.0);
        }
    }
    let inv_phi = 1.0 / wm.scale_phi;
    Ok((score * inv_phi, info * inv_phi))
}

/// Score vector `U(beta)` and model-based information `I0(beta)`.
pub fn score_and_info(
    data: &[SubjectRecord],
    beta: &[f64; NUM_COEFS],
    wm: &WorkingModel,
) -> Result<(CoefVector, CoefMatrix), GeeError> {
    accumulate(data, beta, wm)
}

/// Starting coefficients for the solver.
pub fn initialize(_data: &[SubjectRecord], strategy: InitStrategy) -> [f64; NUM_COEFS] {
    let intercepts = match strategy {
        InitStrategy::Full(beta) => return beta,
        InitStrategy::Default => DEFAULT_INTERCEPTS,
        InitStrategy::Intercepts(v) => v,
    };
    let mut beta = [0.0; NUM_COEFS];
    for (r, v) in intercepts.iter().enumerate() {
        beta[3 * r] = *v;
    }
    beta
}

/// Coefficient columns that cannot be estimated because a genotype group
/// is absent from `data`.
pub fn empty_group_columns(data: &[SubjectRecord]) -> Vec<usize> {
    let has = |g: Genotype| data.iter().any(|r| r.genotype == g);
    let mut dropped = Vec::new();
    for (offset, g) in [(1usize, Genotype::Aa), (2, Genotype::AA)] {
        if !has(g) {
            dropped.extend((0..NUM_PK_PARAMS).map(|r| 3 * r + offset));
        }
    }
    dropped.sort_unstable();
    dropped
}

pub(crate) fn retained_from_dropped(dropped: &[usize]) -> Vec<usize> {
    (0..NUM_COEFS).filter(|c| !dropped.contains(c)).collect()
}

fn restrict_vec(v: &CoefVector, idx: &[usize]) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&i| v[i]))
}

fn restrict_mat(m: &CoefMatrix, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), idx.len(), |r, c| m[(idx[r], idx[c])])
}

fn max_abs(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Converged solution of the estimating equations plus the per-subject
/// quantities the sandwich estimators need.
#[derive(Debug, Clone)]
pub struct GeeFit {
    pub beta_hat: [f64; NUM_COEFS],
    /// `I0(beta_hat)`; rows and columns of dropped coefficients are zero.
    pub info0: CoefMatrix,
    /// `D_i` at `beta_hat`, one `n_i x 12` block per subject.
    pub jacobians: Vec<DMatrix<f64>>,
    /// `S_i` at `beta_hat`.
    pub residuals: Vec<DVector<f64>>,
    pub subject_ids: Vec<String>,
    pub converged: bool,
    pub iterations: usize,
    pub final_score_norm: f64,
    pub dropped_columns: Vec<usize>,
    pub working_model: WorkingModel,
}

impl GeeFit {
    /// Builds a fit directly from per-subject blocks. Used for synthetic
    /// configurations and by `solve` once it has converged.
    pub fn from_blocks(
        beta_hat: [f64; NUM_COEFS],
        jacobians: Vec<DMatrix<f64>>,
        residuals: Vec<DVector<f64>>,
        subject_ids: Vec<String>,
        dropped_columns: Vec<usize>,
        working_model: WorkingModel,
    ) -> Self {
        assert_eq!(jacobians.len(), residuals.len());
        assert_eq!(jacobians.len(), subject_ids.len());
        let inv_phi = 1.0 / working_model.scale_phi;
        let mut info0 = CoefMatrix::zeros();
        let mut score = CoefVector::zeros();
        for (d, s) in jacobians.iter().zip(&residuals) {
            assert_eq!(d.ncols(), NUM_COEFS);
            assert_eq!(d.nrows(), s.len());
            let dtd = d.transpose() * d;
            let dts = d.transpose() * s;
            for r in 0..NUM_COEFS {
                score[r] += dts[r] * inv_phi;
                for c in 0..NUM_COEFS {
                    info0[(r, c)] += dtd[(r, c)] * inv_phi;
                }
            }
        }
        for &c in &dropped_columns {
            for k in 0..NUM_COEFS {
                info0[(c, k)] = 0.0;
                info0[(k, c)] = 0.0;
            }
        }
        let retained = retained_from_dropped(&dropped_columns);
        let final_score_norm = max_abs(retained.iter().map(|&i| score[i]));
        Self {
            beta_hat,
            info0,
            jacobians,
            residuals,
            subject_ids,
            converged: true,
            iterations: 0,
            final_score_norm,
            dropped_columns,
            working_model,
        }
    }

    pub fn num_subjects(&self) -> usize {
        self.jacobians.len()
    }

    /// Coefficient indices that were estimated, ascending.
    pub fn retained_columns(&self) -> Vec<usize> {
        retained_from_dropped(&self.dropped_columns)
    }

    pub fn num_params(&self) -> usize {
        NUM_COEFS - self.dropped_columns.len()
    }

    /// `I0` restricted to the retained columns.
    pub fn info0_retained(&self) -> DMatrix<f64> {
        restrict_mat(&self.info0, &self.retained_columns())
    }

    /// `D_i` restricted to the retained columns.
    pub fn jacobian_retained(&self, i: usize) -> DMatrix<f64> {
        self.jacobians[i].select_columns(self.retained_columns().iter())
    }

    pub fn beta_retained(&self) -> DVector<f64> {
        let idx = self.retained_columns();
        DVector::from_iterator(idx.len(), idx.iter().map(|&i| self.beta_hat[i]))
    }
}

/// Consecutive negligible steps, with the score still above tolerance,
/// after which the solver gives up.
const STALL_LIMIT: usize = 5;

/// Solves `U(beta) = 0` by Gauss-Newton with step halving on the Euclidean
/// norm of the score.
pub fn solve(
    data: &[SubjectRecord],
    wm: &WorkingModel,
    cfg: &SolverConfig,
) -> Result<GeeFit, GeeError> {
    if !(cfg.score_tol > 0.0 && cfg.rel_step_tol > 0.0) {
        return Err(GeeError::InvalidConfig("tolerances must be positive"));
    }
    if data.is_empty() || !data.iter().any(|r| r.genotype == Genotype::aa) {
        // Without reference-genotype subjects the intercepts are aliased
        // with the effect columns.
        return Err(GeeError::SingularInformation);
    }
    let dropped = empty_group_columns(data);
    let retained = retained_from_dropped(&dropped);

    let mut beta = initialize(data, cfg.init);
    for &c in &dropped {
        beta[c] = 0.0;
    }
    let (score, mut info) = accumulate(data, &beta, wm)?;
    let mut score_r = restrict_vec(&score, &retained);
    let mut iterations = 0;
    let mut tiny_steps = 0;
    // Relative size of the last accepted step; `None` before the first one.
    let mut last_step: Option<f64> = None;

    let score_ok = |s: &DVector<f64>, b: &[f64; NUM_COEFS]| {
        s.amax() <= cfg.score_tol * (1.0 + max_abs(b.iter().copied()))
    };

    loop {
        // Converged once the score is small and the step that got there was
        // itself negligible, so the reported root is polished to rounding.
        let small_score = score_ok(&score_r, &beta);
        if small_score && last_step.is_none_or(|r| r <= cfg.rel_step_tol) {
            break;
        }
        if iterations >= cfg.max_iterations {
            return Err(GeeError::NotConverged { iterations, score_norm: score_r.amax() });
        }
        let chol = restrict_mat(&info, &retained)
            .cholesky()
            .ok_or(GeeError::SingularInformation)?;
        let step = chol.solve(&score_r);
        let current_norm = score_r.norm();

        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..=cfg.max_halvings {
            let mut trial = beta;
            for (k, &c) in retained.iter().enumerate() {
                trial[c] += lambda * step[k];
            }
            if let Ok((s, i)) = accumulate(data, &trial, wm) {
                let s_r = restrict_vec(&s, &retained);
                if s_r.norm() < current_norm {
                    accepted = Some((trial, i, s_r));
                    break;
                }
            }
            lambda *= 0.5;
        }
        iterations += 1;
        let Some((trial, i, s_r)) = accepted else {
            if small_score {
                // No further decrease is possible at rounding level.
                break;
            }
            return Err(GeeError::NotConverged { iterations, score_norm: score_r.amax() });
        };
        let rel_step = lambda * step.amax() / (1.0 + max_abs(beta.iter().copied()));
        beta = trial;
        info = i;
        score_r = s_r;
        last_step = Some(rel_step);
        if rel_step <= cfg.rel_step_tol && !score_ok(&score_r, &beta) {
            tiny_steps += 1;
            if tiny_steps >= STALL_LIMIT {
                return Err(GeeError::NotConverged { iterations, score_norm: score_r.amax() });
            }
        } else {
            tiny_steps = 0;
        }
    }

    let mut jacobians = Vec::with_capacity(data.len());
    let mut residuals = Vec::with_capacity(data.len());
    for record in data {
        let e = evaluate_subject(record, &beta)?;
        jacobians.push(e.jacobian);
        residuals.push(e.residual);
    }
    let mut fit = GeeFit::from_blocks(
        beta,
        jacobians,
        residuals,
        data.iter().map(|r| r.subject_id.clone()).collect(),
        dropped,
        *wm,
    );
    fit.iterations = iterations;
    fit.final_score_norm = score_r.amax();
    Ok(fit)
}
