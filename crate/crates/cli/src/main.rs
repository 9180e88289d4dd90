use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use talon_cli::config::load_json;
use talon_cli::lossless::verify_lossless;
use talon_cli::plot::{render, PlotKind};
use talon_cli::run::{run_simulate, run_sweep, write_text, OutputEnv};
use talon_cli::{CliError, Result, RunConfig, SweepSpec};
use talon_core::bench::{bench_layer_kernels, export_bench, BenchConfig};

#[derive(Parser)]
#[command(
    name = "talon",
    version,
    about = "Speculative-decoding draft-tree laboratory"
)]
struct Cli {
    /// Run, sweep or benchmark config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Directory that relative output paths resolve against.
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    /// Overrides the config's decode seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Worker threads for independent prompts and trials.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Create missing output directories.
    #[arg(long, global = true)]
    mkdirs: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Decode seeded prompts and write metrics, funnel and curve outputs.
    Simulate,
    /// One simulation per value of a swept parameter.
    Sweep,
    /// Time the dual top-K and gated layer kernels.
    BenchTree {
        /// Output CSV, relative to --out.
        #[arg(long, default_value = "bench.csv")]
        csv: PathBuf,
    },
    /// Compare stochastic decoding against the exact target law.
    VerifyLossless,
    /// Render SVG charts from metric CSVs into --out.
    Plot {
        #[arg(long)]
        funnel: Option<PathBuf>,
        #[arg(long)]
        curve: Option<PathBuf>,
        #[arg(long)]
        sweep: Option<PathBuf>,
    },
}

fn required_config(cli: &Cli) -> Result<&Path> {
    cli.config
        .as_deref()
        .ok_or_else(|| CliError::Validation("--config is required for this command".into()))
}

fn run_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg: RunConfig = load_json(required_config(cli)?)?;
    if let Some(seed) = cli.seed {
        cfg.decode.seed = seed;
    }
    Ok(cfg)
}

fn execute(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Validation("--threads: must be ≥ 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Validation(format!("--threads: {e}")))?;
    }
    let env = OutputEnv {
        out_dir: cli.out.clone(),
        mkdirs: cli.mkdirs,
    };
    match &cli.command {
        Command::Simulate => {
            for line in run_simulate(&run_config(cli)?, &env)? {
                println!("{line}");
            }
        }
        Command::Sweep => {
            let path = required_config(cli)?;
            let spec: SweepSpec = load_json(path)?;
            for line in run_sweep(path, &spec, cli.seed, &env)? {
                println!("{line}");
            }
        }
        Command::BenchTree { csv } => {
            let mut cfg = match &cli.config {
                Some(p) => load_json::<BenchConfig>(p)?,
                None => BenchConfig::default(),
            };
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            cfg.validate()?;
            let path = env.prepare_file(csv)?;
            println!(
                "# dual top-K: per-parent top-{} then top-{} of the union (at most {} entries); {} parents per layer",
                cfg.width,
                cfg.width,
                cfg.parents * cfg.width,
                cfg.parents
            );
            let result = bench_layer_kernels(&cfg)?;
            println!("vocab_size,alpha,kernel,mean_latency_us,std_latency_us,median_of_means_us,speedup_vs_dual,kept");
            for r in &result.rows {
                println!(
                    "{},{},{},{:.3},{:.3},{:.3},{:.3},{}",
                    r.vocab_size,
                    r.alpha,
                    r.kernel.name(),
                    r.mean_latency * 1e6,
                    r.std_latency * 1e6,
                    r.median_of_means * 1e6,
                    r.speedup_vs_dual,
                    r.kept
                );
            }
            export_bench(&result, &path).map_err(|e| CliError::io(path.display(), e))?;
        }
        Command::VerifyLossless => {
            let report = verify_lossless(&run_config(cli)?)?;
            if report.underpowered() {
                eprintln!(
                    "warning: {} trials leave expected sampling noise {:.4} against threshold {}; statistical power is insufficient",
                    report.trials, report.expected_noise, report.threshold
                );
            }
            let verdict = if report.passed() { "pass" } else { "fail" };
            println!(
                "lossless: tv={:.6} threshold={} trials={} expected_noise={:.6} {verdict}",
                report.tv, report.threshold, report.trials, report.expected_noise
            );
            if !report.passed() {
                return Err(CliError::Acceptance(format!(
                    "total variation {:.6} exceeds {}",
                    report.tv, report.threshold
                )));
            }
        }
        Command::Plot {
            funnel,
            curve,
            sweep,
        } => {
            let inputs: Vec<(PlotKind, &PathBuf)> = [
                (PlotKind::Funnel, funnel.as_ref()),
                (PlotKind::Curve, curve.as_ref()),
                (PlotKind::Sweep, sweep.as_ref()),
            ]
            .into_iter()
            .filter_map(|(k, p)| p.map(|p| (k, p)))
            .collect();
            if inputs.is_empty() {
                return Err(CliError::Validation(
                    "plot: give at least one of --funnel, --curve, --sweep".into(),
                ));
            }
            let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
            env.ensure_dir(&dir)?;
            for (kind, input) in inputs {
                let (svg, empty) = render(kind, input)?;
                if empty {
                    eprintln!(
                        "warning: {} has no data rows; wrote an empty plot",
                        input.display()
                    );
                }
                let target = dir.join(kind.file_name());
                write_text(&target, &svg)?;
                println!("wrote {}", target.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.line());
            e.exit_code()
        }
    }
}
