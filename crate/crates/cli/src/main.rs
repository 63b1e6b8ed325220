use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use separ_core::harness::verify::{run_verification_with, VerifyOptions};
use separ_core::separability::run_tests_each;
use separ_core::{read_dataset, run_simulation, Method, SeparError, SimulationConfig, Suite, TestConfig, TestReport};

const EXIT_INPUT: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_VERIFY: u8 = 4;

#[derive(Parser)]
#[command(name = "separ", version, about = "Test whether the covariance of matrix-valued data is separable")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run separability tests on a CSV dataset (one vec(X) per row, column-major).
    Test(TestArgs),
    /// Run the rejection-rate simulation grid and write a CSV table.
    Simulate(SimulateArgs),
    /// Run Monte Carlo consistency checks.
    Verify(VerifyArgs),
}

#[derive(clap::Args)]
struct TestArgs {
    data: PathBuf,
    #[arg(long)]
    p1: usize,
    #[arg(long)]
    p2: usize,
    #[arg(long, value_enum, default_value_t = MethodArg::Both)]
    method: MethodArg,
    /// Significance level; repeat for several.
    #[arg(long = "level", value_parser = parse_level)]
    levels: Vec<f64>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(clap::Args)]
struct SimulateArgs {
    /// TOML grid definition; the full grid is used when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Cap replicates at 200 and sample sizes at 800.
    #[arg(long)]
    quick: bool,
    /// Override the master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV path; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(clap::Args)]
struct VerifyArgs {
    #[arg(long, default_value = "all")]
    suite: Suite,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Monte Carlo draws per check.
    #[arg(long)]
    draws: Option<usize>,
    /// Draws for the mixture tail check.
    #[arg(long)]
    mixture_draws: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Norm,
    Wald,
    Lrt,
    /// Norm and Wald.
    Both,
    All,
}

impl MethodArg {
    fn methods(self) -> Vec<Method> {
        match self {
            MethodArg::Norm => vec![Method::Norm],
            MethodArg::Wald => vec![Method::Wald],
            MethodArg::Lrt => vec![Method::Lrt],
            MethodArg::Both => vec![Method::Norm, Method::Wald],
            MethodArg::All => Method::ALL.to_vec(),
        }
    }
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum Format {
    Text,
    Json,
}

fn parse_level(s: &str) -> Result<f64, String> {
    let level: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if level > 0.0 && level < 1.0 {
        Ok(level)
    } else {
        Err(format!("level must lie in (0, 1), got {level}"))
    }
}

#[derive(Serialize)]
struct JsonOutput<'a> {
    data: String,
    n: usize,
    p1: usize,
    p2: usize,
    reports: Vec<JsonEntry<'a>>,
}

#[derive(Serialize)]
#[serde(untagged)]
enum JsonEntry<'a> {
    Report(&'a TestReport),
    Failed { method: Method, error: String },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Test(args) => test_command(args),
        Command::Simulate(args) => simulate_command(args),
        Command::Verify(args) => verify_command(args),
    };
    match outcome {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

fn exit_code(err: &SeparError) -> u8 {
    if err.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_INPUT
    }
}

fn test_command(args: TestArgs) -> Result<ExitCode, SeparError> {
    let sample = read_dataset(&args.data, args.p1, args.p2)?;
    let mut config = TestConfig::default();
    if !args.levels.is_empty() {
        config.levels = args.levels;
    }
    let methods = args.method.methods();
    let results = run_tests_each(&sample, &methods, &config)?;

    let stdout = io::stdout();
    let mut out = stdout.lock();
    match args.format {
        Format::Text => {
            writeln!(out, "data: {} (n = {}, p1 = {}, p2 = {})", args.data.display(), sample.n(), args.p1, args.p2)?;
            for (method, result) in methods.iter().zip(&results) {
                writeln!(out)?;
                match result {
                    Ok(report) => write_text_report(&mut out, report)?,
                    Err(e) => writeln!(out, "[{method}] failed: {e}")?,
                }
            }
        }
        Format::Json => {
            let reports = methods
                .iter()
                .zip(&results)
                .map(|(&method, r)| match r {
                    Ok(report) => JsonEntry::Report(report),
                    Err(e) => JsonEntry::Failed { method, error: e.to_string() },
                })
                .collect();
            let doc = JsonOutput {
                data: args.data.display().to_string(),
                n: sample.n(),
                p1: args.p1,
                p2: args.p2,
                reports,
            };
            serde_json::to_writer_pretty(&mut out, &doc).map_err(io::Error::from)?;
            writeln!(out)?;
        }
    }

    // Partial failure is reported inline; only a run with no usable report is an error.
    if results.iter().all(Result::is_err) {
        if let Some(Err(err)) = results.into_iter().next() {
            return Err(err);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn write_text_report(out: &mut impl Write, report: &TestReport) -> io::Result<()> {
    let name = match report.method {
        Method::Norm => "norm test (t_n)",
        Method::Wald => "Wald test (w_n)",
        Method::Lrt => "likelihood ratio test",
    };
    writeln!(out, "[{}] {name}", report.method)?;
    writeln!(out, "  statistic   {:.6}", report.statistic)?;
    writeln!(out, "  null law    {}", report.null_law)?;
    writeln!(out, "  p-value     {}", format_p(report.p_value))?;
    let decisions: Vec<String> = report
        .reject_at
        .iter()
        .map(|(level, reject)| format!("{level}: {}", if *reject { "reject" } else { "keep" }))
        .collect();
    writeln!(out, "  decision    {}", decisions.join(", "))?;
    let d = &report.diagnostics;
    writeln!(out, "  flip-flop   {} iterations", d.iterations)?;
    if let (Some(t1), Some(t2)) = (d.t1, d.t2) {
        let note = if d.t2_truncated { " (t2 truncated at 0)" } else { "" };
        writeln!(out, "  t1, t2      {t1:.6}, {t2:.6}{note}")?;
    }
    for w in &d.warnings {
        writeln!(out, "  warning     {w}")?;
    }
    Ok(())
}

fn format_p(p: f64) -> String {
    if p == 0.0 || p >= 1e-4 {
        format!("{p:.6}")
    } else {
        format!("{p:.3e}")
    }
}

fn simulate_command(args: SimulateArgs) -> Result<ExitCode, SeparError> {
    let mut config = match &args.config {
        Some(path) => SimulationConfig::from_file(path)?,
        None => SimulationConfig::full(),
    };
    if args.quick {
        config = config.quick();
    }
    if let Some(seed) = args.seed {
        config.master_seed = seed;
    }
    config.validate()?;
    log::info!("simulating {} cells", config.dims.len() * config.nus.len() * config.sample_sizes.len());
    let table = run_simulation(&config)?;
    match &args.out {
        Some(path) => {
            let mut file = BufWriter::new(File::create(path)?);
            table.write_csv(&mut file)?;
            file.flush()?;
        }
        None => table.write_csv(io::stdout().lock())?,
    }
    let failures: usize = table.rows.iter().map(|r| r.failures).sum();
    if failures > 0 {
        eprintln!("warning: {failures} replicate-method evaluations failed and were excluded from the rates");
    }
    Ok(ExitCode::SUCCESS)
}

fn verify_command(args: VerifyArgs) -> Result<ExitCode, SeparError> {
    let mut opts = VerifyOptions::default();
    if let Some(d) = args.draws {
        opts.draws = d;
    }
    if let Some(d) = args.mixture_draws {
        opts.mixture_draws = d;
    }
    let report = run_verification_with(args.suite, args.seed, &opts)?;
    print!("{report}");
    if report.passed() {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(EXIT_VERIFY))
    }
}
