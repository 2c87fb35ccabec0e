//! Table ingestion and the per-SNP scan.
//!
//! Concentration table (header required):
//! `subject_id,time_h,conc_mg_per_l,dose_mg,t_in_h`, natural-scale
//! concentrations, log-transformed on load.
//!
//! Genotype table: `subject_id,<snp>,<snp>,...` with entries `0`, `1`, `2`
//! (minor-allele count) or `NA`/empty for missing.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rayon::prelude::*;
use thiserror::Error;

use crate::format::float17;
use crate::gee::{solve, GeeError, GeeFit, SolverConfig, SubjectRecord, WorkingModel};
use crate::inference::{
    Contrast, CovarianceEstimate, InferenceContext, PkParameter, TestResult, VarianceKind,
    EFFECT_COEFS,
};
use crate::pk_model::{Genotype, InfusionSpec, COEF_NAMES, NUM_COEFS, NUM_PK_PARAMS};
use crate::sim::{generate_dataset, genotype_of, subject_rng, ScenarioConfig, SimError};

pub const CONC_COLUMNS: [&str; 5] = ["subject_id", "time_h", "conc_mg_per_l", "dose_mg", "t_in_h"];

#[derive(Debug, Error)]
pub enum ScanError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("column {column}: {message}")]
    Schema { column: String, message: String },
    #[error("subject {subject_id} is missing from the {missing_from} table")]
    Join { subject_id: String, missing_from: &'static str },
    #[error("{0}")]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Pool(String),
}

fn parse_err(line: u64, message: impl Into<String>) -> ScanError {
    ScanError::Parse { line, message: message.into() }
}

/// Per-SNP genotypes, stored one column per SNP.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenotypeMatrix {
    subject_ids: Vec<String>,
    snp_ids: Vec<String>,
    /// `columns[snp][subject]`.
    columns: Vec<Vec<Option<Genotype>>>,
}

impl GenotypeMatrix {
    pub fn new(
        subject_ids: Vec<String>,
        snp_ids: Vec<String>,
        columns: Vec<Vec<Option<Genotype>>>,
    ) -> Result<Self, ScanError> {
        if columns.len() != snp_ids.len() {
            return Err(ScanError::Schema {
                column: "*".into(),
                message: format!("{} SNP ids but {} columns", snp_ids.len(), columns.len()),
            });
        }
        if let Some((k, _)) = columns.iter().enumerate().find(|(_, c)| c.len() != subject_ids.len())
        {
            return Err(ScanError::Schema {
                column: snp_ids[k].clone(),
                message: "column length differs from the number of subjects".into(),
            });
        }
        let mut seen = BTreeSet::new();
        if let Some(dup) = snp_ids.iter().find(|s| !seen.insert(s.as_str())) {
            return Err(ScanError::Schema { column: dup.clone(), message: "duplicate SNP id".into() });
        }
        Ok(Self { subject_ids, snp_ids, columns })
    }

    pub fn subject_ids(&self) -> &[String] {
        &self.subject_ids
    }

    pub fn snp_ids(&self) -> &[String] {
        &self.snp_ids
    }

    pub fn num_snps(&self) -> usize {
        self.snp_ids.len()
    }

    pub fn num_subjects(&self) -> usize {
        self.subject_ids.len()
    }

    pub fn column(&self, snp: usize) -> &[Option<Genotype>] {
        &self.columns[snp]
    }

    pub fn snp_index(&self, id: &str) -> Option<usize> {
        self.snp_ids.iter().position(|s| s == id)
    }

    /// Reorders subjects to `order`, which must be a permutation of the
    /// current ids.
    fn reordered(&self, order: &[String]) -> Self {
        let pos: HashMap<&str, usize> =
            self.subject_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let idx: Vec<usize> = order.iter().map(|s| pos[s.as_str()]).collect();
        Self {
            subject_ids: order.to_vec(),
            snp_ids: self.snp_ids.clone(),
            columns: self.columns.iter().map(|c| idx.iter().map(|&i| c[i]).collect()).collect(),
        }
    }
}

fn open(path: &Path) -> Result<File, ScanError> {
    File::open(path).map_err(|source| ScanError::Io { path: path.to_owned(), source })
}

fn create(path: &Path) -> Result<File, ScanError> {
    File::create(path).map_err(|source| ScanError::Io { path: path.to_owned(), source })
}

fn record_line(rec: &csv::StringRecord) -> u64 {
    rec.position().map_or(0, |p| p.line())
}

fn parse_field(rec: &csv::StringRecord, col: usize, name: &str) -> Result<f64, ScanError> {
    let line = record_line(rec);
    let raw = rec.get(col).unwrap_or("").trim();
    let v: f64 = raw.parse().map_err(|_| parse_err(line, format!("{name}: cannot parse {raw:?}")))?;
    if !v.is_finite() {
        return Err(parse_err(line, format!("{name}: non-finite value {raw:?}")));
    }
    Ok(v)
}

/// Reads a concentration table. Subjects keep their first-appearance order;
/// each subject's rows are sorted by time. Genotypes are set to `aa` until
/// joined with a genotype column.
pub fn read_concentrations<R: Read>(input: R) -> Result<Vec<SubjectRecord>, ScanError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = rdr.headers()?.clone();
    let mut col = [0usize; 5];
    for (k, name) in CONC_COLUMNS.iter().enumerate() {
        col[k] = headers.iter().position(|h| h == *name).ok_or_else(|| ScanError::Schema {
            column: (*name).to_owned(),
            message: "required column is missing".into(),
        })?;
    }

    struct Pending {
        dose: f64,
        t_in: f64,
        line: u64,
        rows: Vec<(f64, f64, u64)>,
    }
    let mut order: Vec<String> = Vec::new();
    let mut by_id: HashMap<String, Pending> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let line = record_line(&rec);
        let id = rec.get(col[0]).unwrap_or("").trim().to_owned();
        if id.is_empty() {
            return Err(parse_err(line, "empty subject_id"));
        }
        let t = parse_field(&rec, col[1], "time_h")?;
        let conc = parse_field(&rec, col[2], "conc_mg_per_l")?;
        let dose = parse_field(&rec, col[3], "dose_mg")?;
        let t_in = parse_field(&rec, col[4], "t_in_h")?;
        if t <= 0.0 {
            return Err(parse_err(
                line,
                format!(
                    "time_h = {t}: sampling times must be > 0 because the model is fitted to \
                     log concentrations, which are undefined at t = 0"
                ),
            ));
        }
        if conc <= 0.0 {
            return Err(parse_err(
                line,
                format!(
                    "conc_mg_per_l = {conc}: concentrations must be > 0 for the log transform; \
                     remove below-quantification rows"
                ),
            ));
        }
        if InfusionSpec::new(dose, t_in).is_none() {
            return Err(parse_err(line, "dose_mg and t_in_h must be positive"));
        }
        let entry = by_id.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            Pending { dose, t_in, line, rows: Vec::new() }
        });
        if entry.dose != dose || entry.t_in != t_in {
            return Err(parse_err(
                line,
                format!(
                    "subject {id}: dose_mg/t_in_h differ from line {}; one infusion per subject",
                    entry.line
                ),
            ));
        }
        entry.rows.push((t, conc, line));
    }

    let mut subjects = Vec::with_capacity(order.len());
    for id in order {
        let mut p = by_id.remove(&id).expect("inserted");
        p.rows.sort_by(|a, b| a.0.total_cmp(&b.0));
        if let Some(w) = p.rows.windows(2).find(|w| w[0].0 == w[1].0) {
            return Err(parse_err(w[1].2, format!("subject {id}: duplicate time {}", w[1].0)));
        }
        let infusion = InfusionSpec::new(p.dose, p.t_in).expect("checked");
        let times = p.rows.iter().map(|r| r.0).collect();
        let log_conc = p.rows.iter().map(|r| r.1.ln()).collect();
        let record = SubjectRecord::new(id, infusion, times, log_conc, Genotype::aa)
            .map_err(|e| parse_err(p.line, e.to_string()))?;
        subjects.push(record);
    }
    Ok(subjects)
}

/// Reads a wide genotype table.
pub fn read_genotypes<R: Read>(input: R) -> Result<GenotypeMatrix, ScanError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let headers = rdr.headers()?.clone();
    if headers.get(0) != Some("subject_id") {
        return Err(ScanError::Schema {
            column: headers.get(0).unwrap_or("").to_owned(),
            message: "first column must be subject_id".into(),
        });
    }
    let snp_ids: Vec<String> = headers.iter().skip(1).map(str::to_owned).collect();
    if let Some(empty) = snp_ids.iter().position(|s| s.is_empty()) {
        return Err(ScanError::Schema {
            column: format!("#{}", empty + 2),
            message: "empty SNP id".into(),
        });
    }
    let mut subject_ids = Vec::new();
    let mut seen = BTreeSet::new();
    let mut columns: Vec<Vec<Option<Genotype>>> = vec![Vec::new(); snp_ids.len()];
    for rec in rdr.records() {
        let rec = rec?;
        let line = record_line(&rec);
        let id = rec.get(0).unwrap_or("").to_owned();
        if id.is_empty() {
            return Err(parse_err(line, "empty subject_id"));
        }
        if !seen.insert(id.clone()) {
            return Err(parse_err(line, format!("duplicate subject {id}")));
        }
        for (k, column) in columns.iter_mut().enumerate() {
            let raw = rec.get(k + 1).unwrap_or("");
            let g = match raw {
                "" | "NA" => None,
                "0" => Some(Genotype::aa),
                "1" => Some(Genotype::Aa),
                "2" => Some(Genotype::AA),
                other => {
                    return Err(parse_err(
                        line,
                        format!("{}: genotype {other:?} is not 0, 1, 2 or NA", snp_ids[k]),
                    ))
                }
            };
            column.push(g);
        }
        subject_ids.push(id);
    }
    GenotypeMatrix::new(subject_ids, snp_ids, columns)
}

/// Checks that both tables hold the same subjects and aligns the genotype
/// matrix to the concentration table's subject order.
pub fn join_tables(
    subjects: &[SubjectRecord],
    genotypes: &GenotypeMatrix,
) -> Result<GenotypeMatrix, ScanError> {
    let conc: BTreeSet<&str> = subjects.iter().map(|s| s.subject_id.as_str()).collect();
    let geno: BTreeSet<&str> = genotypes.subject_ids.iter().map(String::as_str).collect();
    if let Some(id) = conc.difference(&geno).next() {
        return Err(ScanError::Join { subject_id: (*id).to_owned(), missing_from: "genotype" });
    }
    if let Some(id) = geno.difference(&conc).next() {
        return Err(ScanError::Join { subject_id: (*id).to_owned(), missing_from: "concentration" });
    }
    let order: Vec<String> = subjects.iter().map(|s| s.subject_id.clone()).collect();
    Ok(genotypes.reordered(&order))
}

/// Loads and joins both tables.
pub fn load_tables(
    conc_path: &Path,
    geno_path: &Path,
) -> Result<(Vec<SubjectRecord>, GenotypeMatrix), ScanError> {
    let subjects = read_concentrations(open(conc_path)?)?;
    let genotypes = read_genotypes(open(geno_path)?)?;
    let genotypes = join_tables(&subjects, &genotypes)?;
    Ok((subjects, genotypes))
}

/// Writes subjects as a concentration table (natural scale).
pub fn write_concentrations<W: Write>(out: W, subjects: &[SubjectRecord]) -> Result<(), ScanError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CONC_COLUMNS)?;
    for s in subjects {
        for (&t, &y) in s.times().iter().zip(s.log_conc()) {
            w.write_record([
                s.subject_id.clone(),
                float17(t),
                float17(y.exp()),
                float17(s.infusion.dose()),
                float17(s.infusion.t_in()),
            ])?;
        }
    }
    w.flush().map_err(|e| ScanError::Csv(e.into()))?;
    Ok(())
}

pub fn write_genotypes<W: Write>(out: W, genotypes: &GenotypeMatrix) -> Result<(), ScanError> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["subject_id".to_owned()];
    header.extend(genotypes.snp_ids.iter().cloned());
    w.write_record(&header)?;
    for (i, id) in genotypes.subject_ids.iter().enumerate() {
        let mut row = vec![id.clone()];
        row.extend(genotypes.columns.iter().map(|c| match c[i] {
            None => "NA".to_owned(),
            Some(g) => g.minor_allele_count().to_string(),
        }));
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| ScanError::Csv(e.into()))?;
    Ok(())
}

pub fn save_tables(
    conc_path: &Path,
    geno_path: &Path,
    subjects: &[SubjectRecord],
    genotypes: &GenotypeMatrix,
) -> Result<(), ScanError> {
    write_concentrations(create(conc_path)?, subjects)?;
    write_genotypes(create(geno_path)?, genotypes)
}

/// Which sandwich estimators to report.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum VarianceSelection {
    #[default]
    Plain,
    Corrected,
    Both,
}

impl VarianceSelection {
    pub fn kinds(self) -> &'static [VarianceKind] {
        match self {
            VarianceSelection::Plain => &[VarianceKind::Plain],
            VarianceSelection::Corrected => &[VarianceKind::BiasCorrected],
            VarianceSelection::Both => &[VarianceKind::Plain, VarianceKind::BiasCorrected],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanPolicy {
    pub variance: VarianceSelection,
    /// Significance level for the F tests; `None` means `0.05 / (4 M)`.
    pub alpha: Option<f64>,
    pub solver: SolverConfig,
    pub working_model: WorkingModel,
}

impl Default for ScanPolicy {
    fn default() -> Self {
        Self {
            variance: VarianceSelection::default(),
            alpha: None,
            solver: SolverConfig::default(),
            working_model: WorkingModel::default(),
        }
    }
}

/// Bonferroni level over four F tests per SNP.
pub fn default_alpha(num_snps: usize) -> f64 {
    0.05 / (num_snps as f64 * NUM_PK_PARAMS as f64)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FitStatus {
    Ok,
    NoReferenceGroup,
    NotConverged,
    Singular,
    EvalFailure,
    /// The fit succeeded but one variance estimator could not be formed,
    /// e.g. a singular `I - H_i`; that kind's columns are NA.
    VarianceUnavailable(String),
    InferenceFailed(String),
}

impl FitStatus {
    pub fn label(&self) -> String {
        match self {
            FitStatus::Ok => "ok".into(),
            FitStatus::NoReferenceGroup => "no_reference_group".into(),
            FitStatus::NotConverged => "not_converged".into(),
            FitStatus::Singular => "singular_information".into(),
            FitStatus::EvalFailure => "eval_failure".into(),
            FitStatus::VarianceUnavailable(m) => format!("variance_unavailable: {m}"),
            FitStatus::InferenceFailed(m) => format!("inference_failed: {m}"),
        }
    }
}

/// One test as reported in the output tables.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TestOutcome {
    pub statistic: f64,
    pub df: f64,
    pub p_value: f64,
    pub estimable: bool,
}

impl TestOutcome {
    pub const MISSING: Self =
        Self { statistic: f64::NAN, df: f64::NAN, p_value: f64::NAN, estimable: false };

    fn from_result(r: Result<TestResult, crate::inference::InferenceError>) -> Self {
        match r {
            Ok(t) => Self {
                statistic: t.statistic,
                df: t.df_denominator,
                p_value: t.p_value,
                estimable: true,
            },
            Err(_) => Self::MISSING,
        }
    }
}

/// Results of one variance kind for one fitted SNP.
#[derive(Debug, Clone, PartialEq)]
pub struct KindResults {
    pub kind: VarianceKind,
    pub standard_errors: [f64; NUM_COEFS],
    /// Wald tests of all twelve coefficients.
    pub wald: [TestOutcome; NUM_COEFS],
    /// F tests in Vd, Kel, K12, K21 order.
    pub f: [TestOutcome; NUM_PK_PARAMS],
    pub significant: bool,
    /// Why this estimator could not be formed, if it could not.
    pub unavailable: Option<String>,
}

impl KindResults {
    fn missing(kind: VarianceKind) -> Self {
        Self {
            kind,
            standard_errors: [f64::NAN; NUM_COEFS],
            wald: [TestOutcome::MISSING; NUM_COEFS],
            f: [TestOutcome::MISSING; NUM_PK_PARAMS],
            significant: false,
            unavailable: None,
        }
    }

    /// Smallest F p-value, NaN if none was computed.
    pub fn min_f_p(&self) -> f64 {
        self.f.iter().map(|t| t.p_value).filter(|p| !p.is_nan()).fold(f64::NAN, f64::min)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanRow {
    pub snp_id: String,
    pub n_used: usize,
    pub n_excluded: usize,
    pub status: FitStatus,
    pub converged: bool,
    pub iterations: usize,
    pub dropped_columns: Vec<usize>,
    pub estimates: [f64; NUM_COEFS],
    pub results: Vec<KindResults>,
}

/// Tests every coefficient and PK parameter of a converged fit.
pub fn analyze_fit(fit: &GeeFit, kinds: &[VarianceKind], alpha: f64) -> Result<Vec<KindResults>, String> {
    let ctx = InferenceContext::new(fit).map_err(|e| e.to_string())?;
    let mut out = Vec::with_capacity(kinds.len());
    for &kind in kinds {
        let mut res = KindResults::missing(kind);
        let cov: CovarianceEstimate = match ctx.covariance(kind) {
            Ok(c) => c,
            Err(e) => {
                res.unavailable = Some(format!("{}: {e}", kind.label()));
                out.push(res);
                continue;
            }
        };
        for c in 0..NUM_COEFS {
            res.standard_errors[c] = cov.standard_error(c).unwrap_or(f64::NAN);
            let Contrast::Vector(v) = Contrast::coefficient(c) else { unreachable!() };
            res.wald[c] = TestOutcome::from_result(ctx.wald(&cov, &v));
        }
        for (j, param) in PkParameter::ALL.into_iter().enumerate() {
            res.f[j] = TestOutcome::from_result(ctx.f_test(&cov, &Contrast::parameter(param)));
        }
        res.significant = res.f.iter().any(|t| t.p_value < alpha);
        out.push(res);
    }
    Ok(out)
}

/// Subjects with a called genotype at this SNP.
pub fn subjects_for_snp(subjects: &[SubjectRecord], column: &[Option<Genotype>]) -> Vec<SubjectRecord> {
    subjects
        .iter()
        .zip(column)
        .filter_map(|(s, g)| g.map(|g| s.with_genotype(g)))
        .collect()
}

fn scan_one(
    snp_id: &str,
    subjects: &[SubjectRecord],
    column: &[Option<Genotype>],
    policy: &ScanPolicy,
    alpha: f64,
) -> ScanRow {
    let data = subjects_for_snp(subjects, column);
    let kinds = policy.variance.kinds();
    let mut row = ScanRow {
        snp_id: snp_id.to_owned(),
        n_used: data.len(),
        n_excluded: subjects.len() - data.len(),
        status: FitStatus::Ok,
        converged: false,
        iterations: 0,
        dropped_columns: Vec::new(),
        estimates: [f64::NAN; NUM_COEFS],
        results: kinds.iter().map(|&k| KindResults::missing(k)).collect(),
    };
    if !data.iter().any(|s| s.genotype == Genotype::aa) {
        row.status = FitStatus::NoReferenceGroup;
        return row;
    }
    match solve(&data, &policy.working_model, &policy.solver) {
        Ok(fit) => {
            row.converged = true;
            row.iterations = fit.iterations;
            row.dropped_columns = fit.dropped_columns.clone();
            row.estimates = fit.beta_hat;
            for &c in &fit.dropped_columns {
                row.estimates[c] = f64::NAN;
            }
            match analyze_fit(&fit, kinds, alpha) {
                Ok(r) => {
                    if let Some(m) = r.iter().find_map(|k| k.unavailable.clone()) {
                        row.status = FitStatus::VarianceUnavailable(m);
                    }
                    row.results = r;
                }
                Err(m) => row.status = FitStatus::InferenceFailed(m),
            }
        }
        Err(GeeError::NotConverged { iterations, .. }) => {
            row.status = FitStatus::NotConverged;
            row.iterations = iterations;
        }
        Err(GeeError::SingularInformation) => row.status = FitStatus::Singular,
        Err(GeeError::EvalFailure { .. }) => row.status = FitStatus::EvalFailure,
        Err(GeeError::InvalidConfig(m)) => row.status = FitStatus::InferenceFailed(m.to_owned()),
    }
    row
}

/// Fits and tests every SNP on the current rayon pool. Rows are sorted by
/// SNP id.
pub fn scan(subjects: &[SubjectRecord], genotypes: &GenotypeMatrix, policy: &ScanPolicy) -> Vec<ScanRow> {
    assert_eq!(
        subjects.len(),
        genotypes.num_subjects(),
        "genotype matrix must be joined to the subjects first"
    );
    let alpha = policy.alpha.unwrap_or_else(|| default_alpha(genotypes.num_snps()));
    let mut order: Vec<usize> = (0..genotypes.num_snps()).collect();
    order.sort_by(|&a, &b| genotypes.snp_ids[a].cmp(&genotypes.snp_ids[b]));
    order
        .par_iter()
        .map(|&k| scan_one(&genotypes.snp_ids[k], subjects, &genotypes.columns[k], policy, alpha))
        .collect()
}

/// [`scan`] on a dedicated pool of `threads` workers.
pub fn scan_with_threads(
    subjects: &[SubjectRecord],
    genotypes: &GenotypeMatrix,
    policy: &ScanPolicy,
    threads: usize,
) -> Result<Vec<ScanRow>, ScanError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| ScanError::Pool(e.to_string()))?;
    Ok(pool.install(|| scan(subjects, genotypes, policy)))
}

/// Output column names for the selected variance kinds.
pub fn scan_header(selection: VarianceSelection) -> Vec<String> {
    let mut h: Vec<String> =
        ["snp_id", "n_used", "n_excluded", "status", "converged", "iterations", "dropped"]
            .iter()
            .map(|s| (*s).to_owned())
            .collect();
    h.extend(COEF_NAMES.iter().map(|n| format!("est_{n}")));
    for kind in selection.kinds() {
        let k = kind.label();
        h.extend(COEF_NAMES.iter().map(|n| format!("se_{k}_{n}")));
        for &c in &EFFECT_COEFS {
            h.push(format!("wald_df_{k}_{}", COEF_NAMES[c]));
            h.push(format!("wald_p_{k}_{}", COEF_NAMES[c]));
        }
        for p in PkParameter::ALL {
            h.push(format!("f_df_{k}_{}", p.label()));
            h.push(format!("f_p_{k}_{}", p.label()));
        }
        h.push(format!("significant_{k}"));
    }
    h
}

fn row_fields(row: &ScanRow) -> Vec<String> {
    let mut f = vec![
        row.snp_id.clone(),
        row.n_used.to_string(),
        row.n_excluded.to_string(),
        row.status.label(),
        row.converged.to_string(),
        row.iterations.to_string(),
        row.dropped_columns.iter().map(|&c| COEF_NAMES[c]).collect::<Vec<_>>().join(";"),
    ];
    f.extend(row.estimates.iter().map(|&v| float17(v)));
    for r in &row.results {
        f.extend(r.standard_errors.iter().map(|&v| float17(v)));
        for &c in &EFFECT_COEFS {
            f.push(float17(r.wald[c].df));
            f.push(float17(r.wald[c].p_value));
        }
        for t in &r.f {
            f.push(float17(t.df));
            f.push(float17(t.p_value));
        }
        f.push(r.significant.to_string());
    }
    f
}

pub fn write_scan_csv<W: Write>(
    out: W,
    rows: &[ScanRow],
    selection: VarianceSelection,
) -> Result<(), ScanError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(scan_header(selection))?;
    for row in rows {
        w.write_record(row_fields(row))?;
    }
    w.flush().map_err(|e| ScanError::Csv(e.into()))?;
    Ok(())
}

/// Null panel: concentrations from one draw of `cfg`, and for every SNP an
/// independent random permutation of the configuration's genotype counts.
pub fn synthetic_panel(
    cfg: &ScenarioConfig,
    num_snps: usize,
) -> Result<(Vec<SubjectRecord>, GenotypeMatrix), SimError> {
    let data = generate_dataset(cfg, 0)?;
    let counts = cfg.genotype_counts()?;
    let base: Vec<Option<Genotype>> = (0..cfg.n).map(|i| Some(genotype_of(i, counts))).collect();
    let width = num_snps.max(1).to_string().len();
    let snp_ids: Vec<String> = (1..=num_snps).map(|k| format!("snp{k:0width$}")).collect();
    let columns = (0..num_snps)
        .map(|k| {
            // Replicate indices past the study range keep these streams
            // disjoint from the concentration draws.
            let mut rng = subject_rng(cfg.seed, u64::MAX, k as u64, 0);
            let mut col = base.clone();
            col.shuffle(&mut rng);
            col
        })
        .collect();
    let subject_ids = data.subjects.iter().map(|s| s.subject_id.clone()).collect();
    let genotypes = GenotypeMatrix::new(subject_ids, snp_ids, columns)
        .map_err(|e| SimError::InvalidConfig(e.to_string()))?;
    Ok((data.subjects, genotypes))
}
