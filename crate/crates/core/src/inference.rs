//! Robust covariance estimation and small-sample tests for a converged fit.
//!
//! Covariances are stored unnormalized, `I0^-1 I1 I0^-1`, with no factors
//! of `K`. Every statistic below is written against that convention, which
//! makes them algebraically identical to the `sqrt(K)`-scaled forms.
//!
//! The moment degrees of freedom use the block-diagonal structure of the
//! score covariance: each subject contributes a rank-one block, so
//! `trace(Psi M) = sum q_i` and `trace(Psi M Psi M) = sum q_i^2` where
//! `q_i` is that subject's share of `c' V c`.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::gee::GeeFit;
use crate::pk_model::{
    log_concentration_with_gradient, DesignMatrix, InfusionSpec, PkError, NUM_COEFS,
    NUM_PK_PARAMS,
};
use crate::special::{f_upper_tail, student_t_two_sided};

/// Largest acceptable condition number of `I - H_i`.
pub const LEVERAGE_MAX_CONDITION: f64 = 1e12;

/// Lower clamp applied to per-contrast degrees of freedom before combining
/// them into a denominator d.f.
pub const FAI_CORNELIUS_MIN_DF: f64 = 2.001;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum InferenceError {
    #[error("information matrix is singular")]
    SingularInformation,
    #[error("I - H is numerically singular for subject {subject_id}")]
    LeverageSingular { subject_id: String },
    #[error("trace(Psi M) is zero; degrees of freedom undefined")]
    ZeroTrace,
    #[error("contrast is not estimable: {0}")]
    NotEstimable(String),
    #[error("C' V C is singular")]
    SingularContrastCovariance,
    #[error("invalid contrast: {0}")]
    InvalidContrast(&'static str),
    #[error("model evaluation failed: {0}")]
    Eval(#[from] PkError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum VarianceKind {
    /// `I0^-1 I1 I0^-1` with raw residuals.
    Plain,
    /// Residuals inflated by `(I - H_i)^-1`.
    BiasCorrected,
}

impl VarianceKind {
    pub fn label(self) -> &'static str {
        match self {
            VarianceKind::Plain => "plain",
            VarianceKind::BiasCorrected => "bias_corrected",
        }
    }
}

/// Covariance of the retained coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceEstimate {
    pub matrix: DMatrix<f64>,
    pub kind: VarianceKind,
    /// Coefficient index of each row/column of `matrix`.
    pub retained: Vec<usize>,
}

impl CovarianceEstimate {
    /// Standard error of one coefficient, `None` if it was dropped.
    pub fn standard_error(&self, coef: usize) -> Option<f64> {
        let k = self.retained.iter().position(|&c| c == coef)?;
        Some(self.matrix[(k, k)].max(0.0).sqrt())
    }
}

/// The PK parameter a pair of SNP-effect coefficients belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PkParameter {
    Vd,
    Kel,
    K12,
    K21,
}

impl PkParameter {
    pub const ALL: [PkParameter; NUM_PK_PARAMS] =
        [PkParameter::Vd, PkParameter::Kel, PkParameter::K12, PkParameter::K21];

    pub fn index(self) -> usize {
        match self {
            PkParameter::Vd => 0,
            PkParameter::Kel => 1,
            PkParameter::K12 => 2,
            PkParameter::K21 => 3,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            PkParameter::Vd => "Vd",
            PkParameter::Kel => "Kel",
            PkParameter::K12 => "K12",
            PkParameter::K21 => "K21",
        }
    }

    /// Coefficient indices of the (Aa, AA) effects.
    pub fn effect_columns(self) -> [usize; 2] {
        let base = 3 * self.index();
        [base + 1, base + 2]
    }
}

/// `C_Vd`, `C_Kel`, `C_K12`, `C_K21`: both genotype effects of one parameter.
pub const C_VD: [usize; 2] = [1, 2];
pub const C_KEL: [usize; 2] = [4, 5];
pub const C_K12: [usize; 2] = [7, 8];
pub const C_K21: [usize; 2] = [10, 11];

/// The eight SNP-effect coefficients in table order.
pub const EFFECT_COEFS: [usize; 8] = [1, 2, 4, 5, 7, 8, 10, 11];

/// A linear hypothesis `C' beta = 0` with one (Wald) or several (F) columns.
#[derive(Debug, Clone, PartialEq)]
pub enum Contrast {
    Vector([f64; NUM_COEFS]),
    Matrix(Vec<[f64; NUM_COEFS]>),
}

impl Contrast {
    /// Unit contrast selecting one coefficient.
    pub fn coefficient(index: usize) -> Self {
        let mut c = [0.0; NUM_COEFS];
        c[index] = 1.0;
        Contrast::Vector(c)
    }

    /// One unit column per listed coefficient.
    pub fn coefficients(indices: &[usize]) -> Self {
        Contrast::Matrix(
            indices
                .iter()
                .map(|&i| {
                    let mut c = [0.0; NUM_COEFS];
                    c[i] = 1.0;
                    c
                })
                .collect(),
        )
    }

    /// Joint test of both genotype effects on one PK parameter.
    pub fn parameter(param: PkParameter) -> Self {
        Self::coefficients(&param.effect_columns())
    }

    pub fn columns(&self) -> Vec<[f64; NUM_COEFS]> {
        match self {
            Contrast::Vector(c) => vec![*c],
            Contrast::Matrix(cs) => cs.clone(),
        }
    }

    pub fn num_columns(&self) -> usize {
        match self {
            Contrast::Vector(_) => 1,
            Contrast::Matrix(cs) => cs.len(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestResult {
    pub statistic: f64,
    pub df_numerator: f64,
    pub df_denominator: f64,
    pub p_value: f64,
    pub estimable: bool,
    pub variance_kind: VarianceKind,
    /// Denominator d.f. at or below 2.
    pub low_df: bool,
}

impl TestResult {
    pub fn not_estimable(kind: VarianceKind, df_numerator: f64) -> Self {
        Self {
            statistic: f64::NAN,
            df_numerator,
            df_denominator: f64::NAN,
            p_value: f64::NAN,
            estimable: false,
            variance_kind: kind,
            low_df: false,
        }
    }
}

/// Cached per-fit quantities shared by all estimators and tests.
#[derive(Debug, Clone)]
pub struct InferenceContext<'a> {
    fit: &'a GeeFit,
    retained: Vec<usize>,
    info_inv: DMatrix<f64>,
    jac: Vec<DMatrix<f64>>,
    /// `D_i' V_i^-1 S_i` with raw residuals.
    plain_scores: Vec<DVector<f64>>,
    /// Same with `(I - H_i)^-1 S_i`; error if any `I - H_i` is singular.
    corrected_scores: Result<Vec<DVector<f64>>, InferenceError>,
}

fn invert_spd(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let inv = m.clone().cholesky()?.inverse();
    inv.iter().all(|v| v.is_finite()).then_some(inv)
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for r in 0..n {
        for c in (r + 1)..n {
            let v = 0.5 * (m[(r, c)] + m[(c, r)]);
            m[(r, c)] = v;
            m[(c, r)] = v;
        }
    }
}

/// Solves `(I - H) x = s` after checking the conditioning of `I - H`.
fn solve_leverage(
    h: &DMatrix<f64>,
    s: &DVector<f64>,
    subject_id: &str,
) -> Result<DVector<f64>, InferenceError> {
    let n = h.nrows();
    let m = DMatrix::identity(n, n) - h;
    let sv = m.singular_values();
    let max = sv.max();
    let min = sv.min();
    if !(min > 0.0) || max / min > LEVERAGE_MAX_CONDITION {
        return Err(InferenceError::LeverageSingular { subject_id: subject_id.to_owned() });
    }
    m.lu()
        .solve(s)
        .ok_or_else(|| InferenceError::LeverageSingular { subject_id: subject_id.to_owned() })
}

impl<'a> InferenceContext<'a> {
    pub fn new(fit: &'a GeeFit) -> Result<Self, InferenceError> {
        let retained = fit.retained_columns();
        let info_inv =
            invert_spd(&fit.info0_retained()).ok_or(InferenceError::SingularInformation)?;
        let inv_phi = 1.0 / fit.working_model.scale_phi();
        let jac: Vec<_> = (0..fit.num_subjects()).map(|i| fit.jacobian_retained(i)).collect();
        let plain_scores =
            jac.iter().zip(&fit.residuals).map(|(d, s)| d.tr_mul(s) * inv_phi).collect();
        let mut ctx = Self {
            fit,
            retained,
            info_inv,
            jac,
            plain_scores,
            corrected_scores: Ok(Vec::new()),
        };
        ctx.corrected_scores = ctx.compute_corrected_scores(None);
        Ok(ctx)
    }

    pub fn fit(&self) -> &GeeFit {
        self.fit
    }

    pub fn retained(&self) -> &[usize] {
        &self.retained
    }

    /// `I0^-1` on the retained columns.
    pub fn info_inverse(&self) -> &DMatrix<f64> {
        &self.info_inv
    }

    /// `H_i = D_i I0^-1 D_i' V_i^-1`.
    pub fn leverage(&self, i: usize) -> DMatrix<f64> {
        let d = &self.jac[i];
        (d * &self.info_inv * d.transpose()) / self.fit.working_model.scale_phi()
    }

    fn compute_corrected_scores(
        &self,
        leverages: Option<&[DMatrix<f64>]>,
    ) -> Result<Vec<DVector<f64>>, InferenceError> {
        let inv_phi = 1.0 / self.fit.working_model.scale_phi();
        (0..self.fit.num_subjects())
            .map(|i| {
                let h = match leverages {
                    Some(hs) => hs[i].clone(),
                    None => self.leverage(i),
                };
                let s = solve_leverage(&h, &self.fit.residuals[i], &self.fit.subject_ids[i])?;
                Ok(self.jac[i].tr_mul(&s) * inv_phi)
            })
            .collect()
    }

    fn scores(&self, kind: VarianceKind) -> Result<&[DVector<f64>], InferenceError> {
        match kind {
            VarianceKind::Plain => Ok(&self.plain_scores),
            VarianceKind::BiasCorrected => {
                self.corrected_scores.as_deref().map_err(Clone::clone)
            }
        }
    }

    fn sandwich_from_scores(&self, scores: &[DVector<f64>], kind: VarianceKind) -> CovarianceEstimate {
        let p = self.retained.len();
        let mut meat = DMatrix::zeros(p, p);
        for u in scores {
            meat.ger(1.0, u, u, 1.0);
        }
        let mut matrix = &self.info_inv * meat * &self.info_inv;
        symmetrize(&mut matrix);
        CovarianceEstimate { matrix, kind, retained: self.retained.clone() }
    }

    pub fn covariance(&self, kind: VarianceKind) -> Result<CovarianceEstimate, InferenceError> {
        Ok(self.sandwich_from_scores(self.scores(kind)?, kind))
    }

    /// Bias-corrected covariance using caller-supplied leverage blocks.
    pub fn covariance_with_leverages(
        &self,
        leverages: &[DMatrix<f64>],
    ) -> Result<CovarianceEstimate, InferenceError> {
        assert_eq!(leverages.len(), self.fit.num_subjects());
        let scores = self.compute_corrected_scores(Some(leverages))?;
        Ok(self.sandwich_from_scores(&scores, VarianceKind::BiasCorrected))
    }

    /// Maps a 12-vector contrast onto the retained columns.
    pub fn restrict_contrast(&self, c: &[f64; NUM_COEFS]) -> Result<DVector<f64>, InferenceError> {
        if c.iter().all(|v| *v == 0.0) {
            return Err(InferenceError::InvalidContrast("contrast is zero"));
        }
        if let Some(&k) = self.fit.dropped_columns.iter().find(|&&k| c[k] != 0.0) {
            return Err(InferenceError::NotEstimable(format!(
                "coefficient {k} was dropped (empty genotype group)"
            )));
        }
        Ok(DVector::from_iterator(self.retained.len(), self.retained.iter().map(|&k| c[k])))
    }

    /// Per-subject shares `q_i` of `c' V c`.
    fn contributions(&self, c_r: &DVector<f64>, kind: VarianceKind) -> Result<Vec<f64>, InferenceError> {
        let g = &self.info_inv * c_r;
        Ok(self.scores(kind)?.iter().map(|u| g.dot(u).powi(2)).collect())
    }

    pub fn fay_graubard_df(
        &self,
        c: &[f64; NUM_COEFS],
        kind: VarianceKind,
    ) -> Result<f64, InferenceError> {
        let c_r = self.restrict_contrast(c)?;
        let q = self.contributions(&c_r, kind)?;
        let trace: f64 = q.iter().sum();
        let trace_sq: f64 = q.iter().map(|v| v * v).sum();
        if !(trace > 0.0) || !(trace_sq > 0.0) {
            return Err(InferenceError::ZeroTrace);
        }
        Ok(trace * trace / trace_sq)
    }

    pub fn wald(
        &self,
        cov: &CovarianceEstimate,
        c: &[f64; NUM_COEFS],
    ) -> Result<TestResult, InferenceError> {
        let c_r = self.restrict_contrast(c)?;
        let estimate = c_r.dot(&self.fit.beta_retained());
        let var = (&cov.matrix * &c_r).dot(&c_r);
        let df = match self.fay_graubard_df(c, cov.kind) {
            Ok(d) => d,
            Err(InferenceError::ZeroTrace) => {
                return Err(InferenceError::NotEstimable("zero variance along contrast".into()))
            }
            Err(e) => return Err(e),
        };
        if !(var > 0.0) {
            return Err(InferenceError::NotEstimable("zero variance along contrast".into()));
        }
        let statistic = estimate / var.sqrt();
        Ok(TestResult {
            statistic,
            df_numerator: 1.0,
            df_denominator: df,
            p_value: student_t_two_sided(statistic, df),
            estimable: true,
            variance_kind: cov.kind,
            low_df: df <= 2.0,
        })
    }

    pub fn f_test(
        &self,
        cov: &CovarianceEstimate,
        contrast: &Contrast,
    ) -> Result<TestResult, InferenceError> {
        let cols = contrast.columns();
        let l = cols.len();
        if l == 0 {
            return Err(InferenceError::InvalidContrast("contrast has no columns"));
        }
        let p = self.retained.len();
        let mut cmat = DMatrix::zeros(p, l);
        for (j, c) in cols.iter().enumerate() {
            cmat.set_column(j, &self.restrict_contrast(c)?);
        }
        if l > p || cmat.rank(1e-12 * cmat.amax()) < l {
            return Err(InferenceError::InvalidContrast("columns are linearly dependent"));
        }
        let mut dfs = Vec::with_capacity(l);
        for c in &cols {
            match self.fay_graubard_df(c, cov.kind) {
                Ok(d) => dfs.push(d),
                Err(InferenceError::ZeroTrace) => {
                    return Err(InferenceError::NotEstimable("zero variance along contrast".into()))
                }
                Err(e) => return Err(e),
            }
        }
        let nu = fai_cornelius_denominator_df(&dfs);
        let est = cmat.tr_mul(&self.fit.beta_retained());
        let ccov = cmat.transpose() * &cov.matrix * &cmat;
        let chol = ccov.cholesky().ok_or(InferenceError::SingularContrastCovariance)?;
        let statistic = est.dot(&chol.solve(&est)) / l as f64;
        Ok(TestResult {
            statistic,
            df_numerator: l as f64,
            df_denominator: nu,
            p_value: f_upper_tail(statistic, l as f64, nu),
            estimable: true,
            variance_kind: cov.kind,
            low_df: nu <= 2.0,
        })
    }
}

/// Plain sandwich `I0^-1 I1 I0^-1`.
pub fn sandwich(fit: &GeeFit) -> Result<CovarianceEstimate, InferenceError> {
    InferenceContext::new(fit)?.covariance(VarianceKind::Plain)
}

/// Leverage block of subject `i`.
pub fn leverage(fit: &GeeFit, i: usize) -> Result<DMatrix<f64>, InferenceError> {
    Ok(InferenceContext::new(fit)?.leverage(i))
}

/// Sandwich with residuals inflated by `(I - H_i)^-1`.
pub fn bias_corrected_sandwich(fit: &GeeFit) -> Result<CovarianceEstimate, InferenceError> {
    InferenceContext::new(fit)?.covariance(VarianceKind::BiasCorrected)
}

pub fn fay_graubard_df(
    fit: &GeeFit,
    c: &[f64; NUM_COEFS],
    kind: VarianceKind,
) -> Result<f64, InferenceError> {
    InferenceContext::new(fit)?.fay_graubard_df(c, kind)
}

/// Wald-type t test of `c' beta = 0`. The d.f. estimator follows `cov.kind`.
pub fn wald_test(
    fit: &GeeFit,
    cov: &CovarianceEstimate,
    c: &Contrast,
) -> Result<TestResult, InferenceError> {
    match c {
        Contrast::Vector(v) => InferenceContext::new(fit)?.wald(cov, v),
        Contrast::Matrix(_) => Err(InferenceError::InvalidContrast("Wald test takes one column")),
    }
}

pub fn f_test(
    fit: &GeeFit,
    cov: &CovarianceEstimate,
    c: &Contrast,
) -> Result<TestResult, InferenceError> {
    InferenceContext::new(fit)?.f_test(cov, c)
}

/// Denominator d.f. of the multi-contrast F statistic from the per-contrast
/// Wald d.f.
pub fn fai_cornelius_denominator_df(dfs: &[f64]) -> f64 {
    assert!(!dfs.is_empty(), "need at least one d.f.");
    let l = dfs.len() as f64;
    let sum: f64 = dfs
        .iter()
        .map(|&d| {
            let d = if d.is_nan() { FAI_CORNELIUS_MIN_DF } else { d.max(FAI_CORNELIUS_MIN_DF) };
            if d.is_infinite() {
                1.0
            } else {
                d / (d - 2.0)
            }
        })
        .sum();
    if sum <= l {
        // Only reachable when every d.f. is infinite.
        return f64::INFINITY;
    }
    2.0 * sum / (sum - l)
}

/// One subject's design, dosing and sampling grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SubjectDesign {
    pub design: DesignMatrix,
    pub infusion: InfusionSpec,
    pub times: Vec<f64>,
}

/// Information-weighted average of individual coefficient vectors,
/// `(sum I0i(beta_i))^-1 sum I0i(beta_i) beta_i`.
pub fn weighted_average_target(
    subjects: &[SubjectDesign],
    betas: &[[f64; NUM_COEFS]],
) -> Result<[f64; NUM_COEFS], InferenceError> {
    assert_eq!(subjects.len(), betas.len());
    let mut info = DMatrix::<f64>::zeros(NUM_COEFS, NUM_COEFS);
    let mut rhs = DVector::<f64>::zeros(NUM_COEFS);
    for (s, beta) in subjects.iter().zip(betas) {
        let params = crate::pk_model::individual_params(&s.design, beta);
        let b = DVector::from_column_slice(beta);
        let mut info_i = DMatrix::<f64>::zeros(NUM_COEFS, NUM_COEFS);
        for &t in &s.times {
            let (_, grad) = log_concentration_with_gradient(&params, &s.infusion, t)?;
            let row = DVector::from_column_slice(&s.design.pull_back(&grad));
            info_i.ger(1.0, &row, &row, 1.0);
        }
        rhs += &info_i * b;
        info += info_i;
    }
    let chol = info.cholesky().ok_or(InferenceError::SingularInformation)?;
    let sol = chol.solve(&rhs);
    let mut out = [0.0; NUM_COEFS];
    out.copy_from_slice(sol.as_slice());
    Ok(out)
}
