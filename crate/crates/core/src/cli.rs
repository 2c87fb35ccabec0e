//! Command-line front end.
//!
//! Every flag may also be given in a TOML file passed with `--config`, under
//! a table named after the subcommand:
//!
//! ```toml
//! [scan]
//! conc = "conc.csv"
//! geno = "geno.csv"
//! out = "results.csv"
//! variance = "both"
//! threads = 4
//! ```
//!
//! Command-line flags take precedence over the file. `PKGEE_THREADS`
//! overrides the file's thread count but not `--threads`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use crate::gee::{solve, SolverConfig, WorkingModel};
use crate::inference::PkParameter;
use crate::pk_model::{COEF_NAMES, NUM_COEFS};
use crate::scan::{
    analyze_fit, default_alpha, load_tables, save_tables, scan_with_threads, subjects_for_snp,
    synthetic_panel, write_scan_csv, ScanPolicy, VarianceSelection,
};
use crate::sim::{format_summary_table, run_study, write_summary_csv, ScenarioConfig};

pub const THREADS_ENV: &str = "PKGEE_THREADS";

#[derive(Debug, Parser)]
#[command(name = "pkgee", version, about = "GEE scans of SNP effects on two-compartment PK parameters")]
pub struct Cli {
    /// TOML file with default values for the subcommand's flags.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VarianceArg {
    Plain,
    Corrected,
    Both,
}

impl From<VarianceArg> for VarianceSelection {
    fn from(v: VarianceArg) -> Self {
        match v {
            VarianceArg::Plain => VarianceSelection::Plain,
            VarianceArg::Corrected => VarianceSelection::Corrected,
            VarianceArg::Both => VarianceSelection::Both,
        }
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit one SNP and print estimates, standard errors, d.f. and p-values.
    Fit(FitArgs),
    /// Fit every SNP of a genotype table and write one result row per SNP.
    Scan(ScanArgs),
    /// Run a Monte-Carlo scenario and write its summary.
    Simulate(SimulateArgs),
    /// Write a synthetic null panel (concentration and genotype tables).
    Generate(GenerateArgs),
}

#[derive(Debug, Default, Clone, clap::Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitArgs {
    /// Concentration CSV: subject_id,time_h,conc_mg_per_l,dose_mg,t_in_h.
    #[arg(long)]
    pub conc: Option<PathBuf>,
    /// Genotype CSV: subject_id followed by one 0/1/2/NA column per SNP.
    #[arg(long)]
    pub geno: Option<PathBuf>,
    /// SNP to fit; defaults to the first genotype column.
    #[arg(long)]
    pub snp: Option<String>,
    #[arg(long, value_enum)]
    pub variance: Option<VarianceArg>,
}

#[derive(Debug, Default, Clone, clap::Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanArgs {
    #[arg(long)]
    pub conc: Option<PathBuf>,
    #[arg(long)]
    pub geno: Option<PathBuf>,
    /// Output CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// F-test significance level; defaults to 0.05 / (4 x number of SNPs).
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, value_enum)]
    pub variance: Option<VarianceArg>,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Default, Clone, clap::Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateArgs {
    /// Scenario 1-7.
    #[arg(long)]
    pub scenario: Option<u8>,
    /// Minor-allele frequency, 0.25 or 0.5.
    #[arg(long)]
    pub maf: Option<f64>,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Summary CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write the plain-text table here.
    #[arg(long)]
    pub table: Option<PathBuf>,
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Debug, Default, Clone, clap::Args, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerateArgs {
    /// Scenario whose generator supplies the concentrations (default 1).
    #[arg(long)]
    pub scenario: Option<u8>,
    #[arg(long)]
    pub maf: Option<f64>,
    #[arg(long)]
    pub snps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub conc_out: Option<PathBuf>,
    #[arg(long)]
    pub geno_out: Option<PathBuf>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    #[serde(default)]
    fit: Option<FitArgs>,
    #[serde(default)]
    scan: Option<ScanArgs>,
    #[serde(default)]
    simulate: Option<SimulateArgs>,
    #[serde(default)]
    generate: Option<GenerateArgs>,
}

fn load_config(path: Option<&Path>) -> Result<ConfigFile> {
    let Some(path) = path else { return Ok(ConfigFile::default()) };
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

/// Fills every unset field of `cli` from `file`.
macro_rules! merge {
    ($cli:expr, $file:expr, [$($field:ident),*]) => {{
        let mut c = $cli;
        if let Some(f) = $file {
            $( if c.$field.is_none() { c.$field = f.$field; } )*
        }
        c
    }};
}

fn required<T>(v: Option<T>, flag: &str) -> Result<T> {
    v.ok_or_else(|| anyhow!("missing required option --{flag} (flag or config file)"))
}

/// `--threads` beats `PKGEE_THREADS`, which beats the config file.
pub fn resolve_threads(flag: Option<usize>, env: Option<&str>, file: Option<usize>) -> Result<usize> {
    let n = match (flag, env) {
        (Some(n), _) => n,
        (None, Some(v)) => v
            .trim()
            .parse()
            .with_context(|| format!("{THREADS_ENV}={v:?} is not a thread count"))?,
        (None, None) => match file {
            Some(n) => n,
            None => std::thread::available_parallelism().map_or(1, |n| n.get()),
        },
    };
    if n == 0 {
        bail!("thread count must be at least 1");
    }
    Ok(n)
}

fn threads_from_env(flag: Option<usize>, file: Option<usize>) -> Result<usize> {
    let env = std::env::var(THREADS_ENV).ok();
    resolve_threads(flag, env.as_deref(), file)
}

fn create_file(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

/// Parses `args` and runs the command, writing human-readable output to `out`.
pub fn run_with_output<I, T>(args: I, out: &mut dyn Write) -> Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)?;
    run(cli, out)
}

pub fn run(cli: Cli, out: &mut dyn Write) -> Result<()> {
    let config = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Fit(a) => run_fit(merge!(a, config.fit, [conc, geno, snp, variance]), out),
        Command::Scan(a) => {
            let file_threads = config.scan.as_ref().and_then(|f| f.threads);
            let threads = threads_from_env(a.threads, file_threads)?;
            run_scan(merge!(a, config.scan, [conc, geno, out, alpha, variance]), threads, out)
        }
        Command::Simulate(a) => {
            let file_threads = config.simulate.as_ref().and_then(|f| f.threads);
            let threads = threads_from_env(a.threads, file_threads)?;
            let a = merge!(a, config.simulate, [scenario, maf, replicates, seed, out, table]);
            run_simulate(a, threads, out)
        }
        Command::Generate(a) => run_generate(
            merge!(a, config.generate, [scenario, maf, snps, seed, conc_out, geno_out]),
            out,
        ),
    }
}

fn fmt_num(x: f64, prec: usize) -> String {
    if x.is_nan() {
        "NA".into()
    } else {
        format!("{x:.prec$}")
    }
}

fn fmt_p(x: f64) -> String {
    if x.is_nan() {
        "NA".into()
    } else {
        format!("{x:.2e}")
    }
}

fn run_fit(a: FitArgs, out: &mut dyn Write) -> Result<()> {
    let conc = required(a.conc, "conc")?;
    let geno = required(a.geno, "geno")?;
    let selection: VarianceSelection = a.variance.unwrap_or(VarianceArg::Plain).into();
    let (subjects, genotypes) = load_tables(&conc, &geno)?;
    let snp = match &a.snp {
        Some(id) => genotypes.snp_index(id).ok_or_else(|| anyhow!("SNP {id} not in {}", geno.display()))?,
        None if genotypes.num_snps() > 0 => 0,
        None => bail!("{} has no SNP columns", geno.display()),
    };
    let data = subjects_for_snp(&subjects, genotypes.column(snp));
    let fit = solve(&data, &WorkingModel::default(), &SolverConfig::default())
        .with_context(|| format!("fitting SNP {}", genotypes.snp_ids()[snp]))?;
    let results = analyze_fit(&fit, selection.kinds(), default_alpha(1)).map_err(|m| anyhow!(m))?;

    writeln!(
        out,
        "SNP {}: {} subjects used, {} excluded, {} iterations",
        genotypes.snp_ids()[snp],
        data.len(),
        subjects.len() - data.len(),
        fit.iterations
    )?;
    for r in &results {
        writeln!(out, "\nGEE ({} sandwich)", r.kind.label())?;
        writeln!(
            out,
            "{:<14}{:>12}{:>12}{:>12}{:>12}{:>16}{:>12}",
            "Parameter", "Estimate", "S.E.", "d.f.(Wald)", "P(Wald)", "denom.d.f.(F)", "P(F)"
        )?;
        for c in 0..NUM_COEFS {
            let w = &r.wald[c];
            let (fdf, fp) = match c % 3 {
                0 => ("--".to_owned(), "--".to_owned()),
                1 => {
                    let f = &r.f[PkParameter::ALL[c / 3].index()];
                    (fmt_num(f.df, 1), fmt_p(f.p_value))
                }
                _ => (String::new(), String::new()),
            };
            let est = if fit.dropped_columns.contains(&c) { f64::NAN } else { fit.beta_hat[c] };
            writeln!(
                out,
                "{:<14}{:>12}{:>12}{:>12}{:>12}{:>16}{:>12}",
                COEF_NAMES[c],
                fmt_num(est, 4),
                fmt_num(r.standard_errors[c], 4),
                fmt_num(w.df, 1),
                fmt_p(w.p_value),
                fdf,
                fp
            )?;
        }
    }
    Ok(())
}

fn run_scan(a: ScanArgs, threads: usize, out: &mut dyn Write) -> Result<()> {
    let conc = required(a.conc, "conc")?;
    let geno = required(a.geno, "geno")?;
    let path = required(a.out, "out")?;
    if let Some(alpha) = a.alpha {
        if !(alpha > 0.0 && alpha < 1.0) {
            bail!("--alpha must lie in (0, 1)");
        }
    }
    let policy = ScanPolicy {
        variance: a.variance.unwrap_or(VarianceArg::Plain).into(),
        alpha: a.alpha,
        ..ScanPolicy::default()
    };
    let (subjects, genotypes) = load_tables(&conc, &geno)?;
    let rows = scan_with_threads(&subjects, &genotypes, &policy, threads)?;
    let mut w = create_file(&path)?;
    write_scan_csv(&mut w, &rows, policy.variance)?;
    w.flush()?;
    let alpha = policy.alpha.unwrap_or_else(|| default_alpha(genotypes.num_snps()));
    let failed = rows.iter().filter(|r| r.status != crate::scan::FitStatus::Ok).count();
    let significant = rows.iter().filter(|r| r.results.iter().any(|k| k.significant)).count();
    writeln!(
        out,
        "{} SNPs scanned ({failed} not fitted), {significant} significant at alpha = {alpha:.3e}; wrote {}",
        rows.len(),
        path.display()
    )?;
    Ok(())
}

fn run_simulate(a: SimulateArgs, threads: usize, out: &mut dyn Write) -> Result<()> {
    let scenario = required(a.scenario, "scenario")?;
    let maf = required(a.maf, "maf")?;
    let path = required(a.out, "out")?;
    let mut cfg = ScenarioConfig::paper(scenario, maf)?;
    if let Some(r) = a.replicates {
        cfg.n_replicates = r;
    }
    cfg.seed = a.seed.unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build()?;
    let summary = pool.install(|| run_study(&cfg))?;
    let mut w = create_file(&path)?;
    write_summary_csv(&mut w, std::slice::from_ref(&summary))?;
    w.flush()?;
    let table = format_summary_table(&summary);
    if let Some(t) = &a.table {
        std::fs::write(t, &table).with_context(|| format!("writing {}", t.display()))?;
    }
    write!(out, "{table}")?;
    Ok(())
}

fn run_generate(a: GenerateArgs, out: &mut dyn Write) -> Result<()> {
    let conc = required(a.conc_out, "conc-out")?;
    let geno = required(a.geno_out, "geno-out")?;
    let mut cfg = ScenarioConfig::paper(a.scenario.unwrap_or(1), a.maf.unwrap_or(0.25))?;
    cfg.seed = a.seed.unwrap_or(0);
    let snps = a.snps.unwrap_or(1000);
    let (subjects, genotypes) = synthetic_panel(&cfg, snps)?;
    save_tables(&conc, &geno, &subjects, &genotypes)?;
    writeln!(
        out,
        "wrote {} subjects to {} and {snps} SNPs to {}",
        subjects.len(),
        conc.display(),
        geno.display()
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn thread_precedence() {
        assert_eq!(resolve_threads(Some(3), Some("5"), Some(7)).unwrap(), 3);
        assert_eq!(resolve_threads(None, Some("5"), Some(7)).unwrap(), 5);
        assert_eq!(resolve_threads(None, None, Some(7)).unwrap(), 7);
        assert!(resolve_threads(None, Some("many"), None).is_err());
        assert!(resolve_threads(Some(0), None, None).is_err());
    }

    #[test]
    fn config_fills_unset_flags() {
        let file: ConfigFile = toml::from_str(
            "[scan]\nconc = \"c.csv\"\ngeno = \"g.csv\"\nout = \"o.csv\"\nvariance = \"both\"\n",
        )
        .unwrap();
        let cli = ScanArgs { out: Some("cli.csv".into()), ..Default::default() };
        let merged = merge!(cli, file.scan, [conc, geno, out, alpha, variance]);
        assert_eq!(merged.out.unwrap(), PathBuf::from("cli.csv"));
        assert_eq!(merged.conc.unwrap(), PathBuf::from("c.csv"));
        assert_eq!(merged.variance, Some(VarianceArg::Both));
        assert!(toml::from_str::<ConfigFile>("[scan]\nbogus = 1\n").is_err());
    }

    #[test]
    fn missing_required_flag_is_an_error() {
        let mut sink = Vec::new();
        let err = run_with_output(["pkgee", "scan", "--conc", "x.csv"], &mut sink).unwrap_err();
        assert!(err.to_string().contains("--geno"), "{err}");
    }
}
