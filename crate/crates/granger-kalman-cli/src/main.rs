//! Command-line front end: model and covariance files in, JSON reports
//! out.
//!
//! Exit codes: `0` when the tested property holds (noncausality /
//! coordinated structure) or the command produced its output, `1` when
//! the analysis ran but the property fails, `2` on any input, parse, or
//! solver error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use nalgebra::DMatrix;
use serde::Serialize;

use granger_kalman::io::{
    self, CoordinatedDoc, CovDoc, FactorizationDoc, InputDoc, ReportDoc,
};
use granger_kalman::model::DerivedModel;
use granger_kalman::{
    algorithm3, algorithm4, check_noncausality, default_hankel_blocks, empirical_covariances,
    ho_kalman, markov_from_fact, simulate_path, AnalysisInput, Error, KalmanModel64, Options,
    Partition, Result, SimulationConfig, StructureReport64, ZeroTolerance,
};

#[derive(Parser)]
#[command(
    name = "granger-kalman",
    version,
    about = "Granger-causality analysis of vector processes via structured Kalman representations",
    after_help = "Exit codes: 0 property holds / output written, 1 property fails, 2 error."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Indent JSON output and print aligned matrices to stderr.
    #[arg(long, global = true)]
    pretty: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Decide whether the source outputs Granger-cause the target outputs.
    CheckGranger(CheckGrangerArgs),
    /// Build the coordinated representation for an output cut.
    Coordinate(CoordinateArgs),
    /// Simulate a sample path of a model and write it as CSV.
    Simulate(SimulateArgs),
    /// Estimate output covariances from a CSV sample path.
    Cov(CovArgs),
    /// Realize a minimal state-space factorization from covariances.
    Realize(RealizeArgs),
}

/// Shared tolerance overrides. Defaults depend on the input kind: model
/// files use exact-arithmetic tolerances, covariance files the looser
/// empirical ones.
#[derive(Args)]
struct TolArgs {
    /// Absolute tolerance for structural zero tests.
    #[arg(long)]
    tol_zero: Option<f64>,
    /// Relative singular-value cutoff for rank decisions.
    #[arg(long)]
    tol_rank: Option<f64>,
    /// Relative singular-value cutoff for the observable/unobservable
    /// state split.
    #[arg(long)]
    tol_split: Option<f64>,
    /// Slack above one for whitening-filter spectral radii in
    /// minimum-phase tests.
    #[arg(long)]
    tol_min_phase: Option<f64>,
}

impl TolArgs {
    fn apply(&self, opts: &mut Options<f64>) {
        if let Some(v) = self.tol_zero {
            opts.tol_zero = ZeroTolerance::Absolute(v);
        }
        if let Some(v) = self.tol_rank {
            opts.tol_rank_rel = v;
        }
        if let Some(v) = self.tol_split {
            opts.tol_split_rel = v;
        }
        if let Some(v) = self.tol_min_phase {
            opts.tol_min_phase = v;
        }
    }
}

#[derive(Args)]
struct CheckGrangerArgs {
    /// Model or covariance JSON file.
    input: PathBuf,
    /// 1-based output coordinates of the candidate cause.
    #[arg(long, value_delimiter = ',', required = true, value_name = "I,J,...")]
    source: Vec<usize>,
    /// 1-based output coordinates whose prediction is tested.
    #[arg(long, value_delimiter = ',', required = true, value_name = "I,J,...")]
    target: Vec<usize>,
    /// Hankel block rows/columns for the covariance route.
    #[arg(long = "M", value_name = "M")]
    m_blocks: Option<usize>,
    #[command(flatten)]
    tol: TolArgs,
    /// Write the JSON report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CoordinateArgs {
    /// Model or covariance JSON file.
    input: PathBuf,
    /// Output block sizes r1,...,rn; the last block is the coordinator.
    #[arg(long, value_delimiter = ',', required = true, value_name = "R1,R2,...")]
    cut: Vec<usize>,
    /// Hankel block rows/columns for the covariance route.
    #[arg(long = "M", value_name = "M")]
    m_blocks: Option<usize>,
    #[command(flatten)]
    tol: TolArgs,
    /// Write the JSON document here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Model JSON file.
    input: PathBuf,
    /// Number of recorded samples.
    #[arg(long)]
    n: usize,
    /// RNG seed; runs are reproducible bit for bit.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Samples discarded before recording starts.
    #[arg(long, default_value_t = 0)]
    burn_in: usize,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct CovArgs {
    /// Sample CSV file (header y1..yp).
    input: PathBuf,
    /// Largest lag to estimate.
    #[arg(long)]
    max_lag: usize,
    /// Write the JSON document here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RealizeArgs {
    /// Covariance JSON file.
    input: PathBuf,
    /// Hankel block rows/columns.
    #[arg(long = "M", value_name = "M")]
    m_blocks: Option<usize>,
    /// Relative singular-value cutoff for the degree estimate.
    #[arg(long)]
    tol_rank: Option<f64>,
    /// Write the JSON document here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Realization output: the factorization plus the estimated degree and
/// the max-abs error of the covariances it regenerates.
#[derive(Serialize)]
struct RealizeDoc {
    #[serde(flatten)]
    factorization: FactorizationDoc,
    degree: usize,
    roundtrip_residual: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: &Cli) -> Result<ExitCode> {
    match &cli.command {
        Command::CheckGranger(args) => cmd_check_granger(cli, args),
        Command::Coordinate(args) => cmd_coordinate(cli, args),
        Command::Simulate(args) => cmd_simulate(cli, args),
        Command::Cov(args) => cmd_cov(cli, args),
        Command::Realize(args) => cmd_realize(cli, args),
    }
}

fn verdict_exit(verdict: bool) -> ExitCode {
    ExitCode::from(if verdict { 0 } else { 1 })
}

/// Converts 1-based CLI output indices to 0-based, rejecting 0 and
/// duplicates.
fn to_zero_based(indices: &[usize], flag: &str) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(indices.len());
    for &i in indices {
        if i == 0 {
            return Err(Error::Validation(format!("{flag} indices are 1-based")));
        }
        if out.contains(&(i - 1)) {
            return Err(Error::Validation(format!("{flag} repeats index {i}")));
        }
        out.push(i - 1);
    }
    Ok(out)
}

fn base_options(input: &InputDoc) -> Options<f64> {
    match input {
        InputDoc::Model(_) => Options::exact(),
        InputDoc::Covariances(_) => Options::empirical(),
    }
}

fn emit_json<T: Serialize>(value: &T, out: Option<&Path>, pretty: bool) -> Result<()> {
    match out {
        Some(path) => io::write_json(path, value, pretty),
        None => {
            println!("{}", io::to_json_string(value, pretty)?);
            Ok(())
        }
    }
}

fn eprint_matrix(name: &str, m: &DMatrix<f64>) {
    eprintln!("{name} ({}x{}):", m.nrows(), m.ncols());
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols())
            .map(|j| format!("{:>10.4}", m[(i, j)]))
            .collect();
        eprintln!("  [{}]", row.join(" "));
    }
}

fn eprint_kalman(m: &KalmanModel64) {
    eprint_matrix("A", m.a());
    eprint_matrix("K", m.k());
    eprint_matrix("C", m.c());
    eprint_matrix("Qe", m.qe());
}

fn eprint_derived(report: &StructureReport64) {
    match report.derived.as_deref() {
        Some(DerivedModel::BlockTriangular(b)) => eprint_kalman(&b.model),
        Some(DerivedModel::Coordinated(c)) => eprint_kalman(&c.model),
        None => {}
    }
}

fn cmd_check_granger(cli: &Cli, args: &CheckGrangerArgs) -> Result<ExitCode> {
    let input = io::read_input(&args.input)?;
    let source = to_zero_based(&args.source, "--source")?;
    let target = to_zero_based(&args.target, "--target")?;
    if source.iter().any(|i| target.contains(i)) {
        return Err(Error::Validation(
            "--source and --target must be disjoint".into(),
        ));
    }
    let mut opts = base_options(&input);
    args.tol.apply(&mut opts);
    if args.m_blocks.is_some() {
        opts.hankel_blocks = args.m_blocks;
    }
    let report = match &input {
        InputDoc::Model(doc) => {
            let model = doc.to_model()?;
            check_noncausality(AnalysisInput::Model(&model), &source, &target, &opts)?
        }
        InputDoc::Covariances(doc) => {
            let seq = doc.to_sequence()?;
            check_noncausality(AnalysisInput::Covariances(&seq), &source, &target, &opts)?
        }
    };
    emit_json(&ReportDoc::from_report(&report), args.out.as_deref(), cli.pretty)?;
    if cli.pretty {
        eprint_derived(&report);
    }
    Ok(verdict_exit(report.verdict))
}

fn cmd_coordinate(cli: &Cli, args: &CoordinateArgs) -> Result<ExitCode> {
    let input = io::read_input(&args.input)?;
    let cut = Partition::new(args.cut.clone())?;
    let mut opts = base_options(&input);
    args.tol.apply(&mut opts);
    let result = match &input {
        InputDoc::Model(doc) => {
            let model = doc.to_model()?;
            algorithm3(&model, &cut, &opts)
        }
        InputDoc::Covariances(doc) => {
            let seq = doc.to_sequence()?;
            let m_blocks = args
                .m_blocks
                .unwrap_or_else(|| default_hankel_blocks(seq.p(), seq.max_lag(), None));
            algorithm4(&seq, &cut, m_blocks, &opts)
        }
    };
    match result {
        Ok(cm) => {
            emit_json(&CoordinatedDoc::from_model(&cm), args.out.as_deref(), cli.pretty)?;
            if cli.pretty {
                eprint_kalman(&cm.model);
            }
            Ok(verdict_exit(cm.report.verdict))
        }
        Err(e @ Error::StructureViolation { .. }) => {
            eprintln!("error: {e}");
            Ok(ExitCode::from(1))
        }
        Err(e) => Err(e),
    }
}

fn cmd_simulate(cli: &Cli, args: &SimulateArgs) -> Result<ExitCode> {
    let input = io::read_input(&args.input)?;
    let InputDoc::Model(doc) = input else {
        return Err(Error::Validation(
            "simulate needs a model file, not a covariance file".into(),
        ));
    };
    let model = doc.to_model()?;
    let cfg = SimulationConfig {
        n_samples: args.n,
        burn_in: args.burn_in,
        seed: args.seed,
        n_replications: 1,
    };
    let samples = simulate_path(&model, &cfg)?;
    io::write_csv_samples(&args.out, &samples)?;
    if cli.pretty {
        eprintln!(
            "wrote {} samples of {} outputs to {}",
            samples.nrows(),
            samples.ncols(),
            args.out.display()
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_cov(cli: &Cli, args: &CovArgs) -> Result<ExitCode> {
    let samples = io::read_csv_samples(&args.input)?;
    let seq = empirical_covariances(&samples, args.max_lag)?;
    emit_json(&CovDoc::from_sequence(&seq), args.out.as_deref(), cli.pretty)?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_realize(cli: &Cli, args: &RealizeArgs) -> Result<ExitCode> {
    let input = io::read_input(&args.input)?;
    let InputDoc::Covariances(doc) = input else {
        return Err(Error::Validation(
            "realize needs a covariance file, not a model file".into(),
        ));
    };
    let seq = doc.to_sequence()?;
    let m_blocks = args
        .m_blocks
        .unwrap_or_else(|| default_hankel_blocks(seq.p(), seq.max_lag(), None));
    let tol_rank = args.tol_rank.unwrap_or(Options::<f64>::exact().tol_rank_rel);
    let fact = ho_kalman(&seq, m_blocks, tol_rank)?;
    let degree = fact.a.nrows();
    let regenerated = markov_from_fact(&fact, seq.max_lag())?;
    let roundtrip_residual = (0..seq.max_lag())
        .map(|k| (regenerated.lams()[k].clone() - &seq.lams()[k]).abs().max())
        .fold(0.0_f64, f64::max);
    eprintln!(
        "estimated degree {degree}; singular values: [{}]; round-trip residual {roundtrip_residual:.3e}",
        fact.hankel_singular_values
            .iter()
            .map(|s| format!("{s:.3e}"))
            .collect::<Vec<_>>()
            .join(", ")
    );
    if fact.dropped_for_stability > 0 {
        eprintln!(
            "note: dropped {} noise-floor state direction(s) to keep the realization stable",
            fact.dropped_for_stability
        );
    }
    let out_doc = RealizeDoc {
        factorization: FactorizationDoc::from_factorization(&fact),
        degree,
        roundtrip_residual,
    };
    emit_json(&out_doc, args.out.as_deref(), cli.pretty)?;
    if cli.pretty {
        eprint_matrix("A", &fact.a);
        eprint_matrix("C", &fact.c);
        eprint_matrix("Cbar", &fact.cbar);
    }
    Ok(ExitCode::SUCCESS)
}
