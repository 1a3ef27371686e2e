//! Command-line entry point: run strategies over datasets, resume partial
//! runs, emit reports, check answer equivalence, and smoke-test the sim
//! backend.

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Deserialize;
use std::path::PathBuf;
use std::str::FromStr;

use popevolve::answer;
use popevolve::backend::{BackendConfig, HttpConfig, SimModelConfig};
use popevolve::domain::{EarlyStop, GenerationParams, StrategyKind, StrategySpec};
use popevolve::harness::{
    emit_report, execute_run, ingest_datasets, resume_run, Dataset, ReportOptions, RunOptions,
    RunSummary,
};
use popevolve::strategies::DEFAULT_EVOLVE_BUDGET_CHARS;

#[derive(Parser)]
#[command(
    name = "popevolve",
    version,
    about = "Evolutionary test-time scaling for LLM math reasoning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a strategy over a dataset against the sim or an HTTP backend.
    Run(RunArgs),
    /// Resume a partial run directory; completed work is never re-requested.
    Resume(ResumeArgs),
    /// Aggregate completed runs into report files.
    Report(ReportArgs),
    /// Check two answer strings for equivalence (debugging aid).
    Verify { a: String, b: String },
    /// Smoke-test all four strategies on the sim backend.
    Simulate(SimulateArgs),
}

#[derive(Args)]
struct RunArgs {
    /// Dataset JSONL file; repeat to concatenate files.
    #[arg(long, num_args = 1..)]
    dataset: Vec<PathBuf>,
    /// population_evolve | dser | genselect | baseline
    #[arg(long)]
    strategy: Option<String>,
    /// Output run directory.
    #[arg(long)]
    out: PathBuf,
    /// Population size P (or rollout count k for the baseline).
    #[arg(long)]
    population_size: Option<u32>,
    /// Iteration budget T.
    #[arg(long)]
    max_iterations: Option<u32>,
    /// GenSelect selection rounds R.
    #[arg(long)]
    selection_rounds: Option<u32>,
    /// none | unanimity | verdict_streak=N
    #[arg(long)]
    early_stop: Option<String>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    max_new_tokens: Option<u32>,
    #[arg(long)]
    master_seed: Option<u64>,
    /// sim | http
    #[arg(long)]
    backend: Option<String>,
    /// JSON file with sim model knobs.
    #[arg(long)]
    sim_config: Option<PathBuf>,
    #[arg(long)]
    base_url: Option<String>,
    #[arg(long)]
    model: Option<String>,
    /// Environment variable holding the API key.
    #[arg(long)]
    api_key_env: Option<String>,
    /// Maximum HTTP requests in flight.
    #[arg(long)]
    concurrency: Option<usize>,
    #[arg(long)]
    max_retries: Option<u32>,
    #[arg(long)]
    timeout_secs: Option<u64>,
    /// Do not forward the derived per-request seed to the endpoint.
    #[arg(long)]
    no_send_seed: bool,
    /// Problems processed concurrently.
    #[arg(long)]
    jobs: Option<usize>,
    /// Character budget for the evolving prompt.
    #[arg(long)]
    evolve_budget_chars: Option<usize>,
    /// Directory of prompt template overrides.
    #[arg(long)]
    prompts_dir: Option<PathBuf>,
    /// JSON file providing any of the above; explicit flags win.
    #[arg(long)]
    config: Option<PathBuf>,
}

/// `--config` file shape: every field optional, same names as the flags.
#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct FileConfig {
    dataset: Option<Vec<PathBuf>>,
    strategy: Option<String>,
    population_size: Option<u32>,
    max_iterations: Option<u32>,
    selection_rounds: Option<u32>,
    early_stop: Option<String>,
    temperature: Option<f64>,
    max_new_tokens: Option<u32>,
    master_seed: Option<u64>,
    backend: Option<String>,
    sim_config: Option<PathBuf>,
    base_url: Option<String>,
    model: Option<String>,
    api_key_env: Option<String>,
    concurrency: Option<usize>,
    max_retries: Option<u32>,
    timeout_secs: Option<u64>,
    send_seed: Option<bool>,
    jobs: Option<usize>,
    evolve_budget_chars: Option<usize>,
    prompts_dir: Option<PathBuf>,
}

#[derive(Args)]
struct ResumeArgs {
    /// The run directory to resume.
    #[arg(long)]
    out: PathBuf,
    /// Re-read the dataset from here instead of the recorded path.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    prompts_dir: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct ReportArgs {
    /// Completed run directories.
    #[arg(required = true)]
    runs: Vec<PathBuf>,
    /// Output directory for the report files.
    #[arg(long)]
    out: PathBuf,
    /// Re-read the dataset from here instead of the recorded path.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Keep iteration 0 in the ledger CSV.
    #[arg(long)]
    include_iteration_zero: bool,
}

#[derive(Args)]
struct SimulateArgs {
    /// Dataset JSONL file; repeat to concatenate files.
    #[arg(long, required = true, num_args = 1..)]
    dataset: Vec<PathBuf>,
    /// Directory for the four smoke runs (a temp dir when omitted).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    master_seed: u64,
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(error) = run() {
        eprintln!("error: {error:#}");
        std::process::exit(1);
    }
}

fn run() -> Result<()> {
    match Cli::parse().command {
        Command::Run(args) => cmd_run(args),
        Command::Resume(args) => cmd_resume(args),
        Command::Report(args) => cmd_report(args),
        Command::Verify { a, b } => cmd_verify(&a, &b),
        Command::Simulate(args) => cmd_simulate(args),
    }
}

fn kind_defaults(kind: StrategyKind) -> (u32, u32) {
    // (population size, iteration budget)
    match kind {
        StrategyKind::PopulationEvolve => (16, 16),
        StrategyKind::Dser => (1, 32),
        StrategyKind::GenSelect => (16, 0),
        StrategyKind::Baseline => (64, 0),
    }
}

fn cmd_run(args: RunArgs) -> Result<()> {
    let file: FileConfig = match &args.config {
        Some(path) => serde_json::from_str(
            &std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?,
        )
        .with_context(|| format!("parsing {}", path.display()))?,
        None => FileConfig::default(),
    };

    let dataset_paths =
        if args.dataset.is_empty() { file.dataset.unwrap_or_default() } else { args.dataset };
    if dataset_paths.is_empty() {
        bail!("--dataset is required (flag or config file)");
    }
    let dataset = ingest_datasets(&dataset_paths)?;
    let dataset_path_label = dataset_paths
        .iter()
        .map(|p| p.display().to_string())
        .collect::<Vec<_>>()
        .join(",");

    let kind_text = args
        .strategy
        .or(file.strategy)
        .ok_or_else(|| anyhow::anyhow!("--strategy is required (flag or config file)"))?;
    let kind = StrategyKind::from_str(&kind_text)?;
    let (default_p, default_t) = kind_defaults(kind);
    let early_stop = match args.early_stop.or(file.early_stop) {
        Some(text) => EarlyStop::from_str(&text)?,
        None => EarlyStop::None,
    };
    let spec = StrategySpec {
        kind,
        population_size: args.population_size.or(file.population_size).unwrap_or(default_p),
        max_iterations: args.max_iterations.or(file.max_iterations).unwrap_or(default_t),
        selection_rounds: args.selection_rounds.or(file.selection_rounds).unwrap_or(32),
        early_stop,
    };
    let params = GenerationParams {
        temperature: args.temperature.or(file.temperature).unwrap_or(0.6),
        max_new_tokens: args.max_new_tokens.or(file.max_new_tokens).unwrap_or(57_600),
        seed: None,
    };

    let backend_kind = args.backend.or(file.backend).unwrap_or_else(|| "sim".to_string());
    let backend = match backend_kind.as_str() {
        "sim" => {
            let config = match args.sim_config.or(file.sim_config) {
                Some(path) => serde_json::from_str(
                    &std::fs::read_to_string(&path)
                        .with_context(|| format!("reading {}", path.display()))?,
                )
                .with_context(|| format!("parsing {}", path.display()))?,
                None => SimModelConfig::default(),
            };
            BackendConfig::Sim { config }
        }
        "http" => {
            let base_url = args
                .base_url
                .or(file.base_url)
                .ok_or_else(|| anyhow::anyhow!("--base-url is required with --backend http"))?;
            let model = args
                .model
                .or(file.model)
                .ok_or_else(|| anyhow::anyhow!("--model is required with --backend http"))?;
            BackendConfig::Http {
                config: HttpConfig {
                    base_url,
                    model,
                    api_key_env: args
                        .api_key_env
                        .or(file.api_key_env)
                        .unwrap_or_else(|| "OPENAI_API_KEY".to_string()),
                    max_retries: args.max_retries.or(file.max_retries).unwrap_or(3),
                    initial_backoff_ms: 250,
                    concurrency: args.concurrency.or(file.concurrency).unwrap_or(8),
                    timeout_secs: args.timeout_secs.or(file.timeout_secs).unwrap_or(600),
                    send_seed: if args.no_send_seed { false } else { file.send_seed.unwrap_or(true) },
                },
            }
        }
        other => bail!("unknown backend '{other}' (expected sim or http)"),
    };

    let options = RunOptions {
        dataset,
        dataset_path: dataset_path_label,
        spec,
        params,
        backend,
        master_seed: args.master_seed.or(file.master_seed).unwrap_or(0),
        evolve_budget_chars: args
            .evolve_budget_chars
            .or(file.evolve_budget_chars)
            .unwrap_or(DEFAULT_EVOLVE_BUDGET_CHARS),
        prompts_dir: args.prompts_dir.or(file.prompts_dir),
        jobs: args.jobs.or(file.jobs).unwrap_or(1),
    };
    let summary = execute_run(&options, &args.out)?;
    print_summary(&summary);
    Ok(())
}

fn cmd_resume(args: ResumeArgs) -> Result<()> {
    let summary =
        resume_run(&args.out, args.dataset.as_deref(), args.prompts_dir.as_deref(), args.jobs)?;
    print_summary(&summary);
    Ok(())
}

fn cmd_report(args: ReportArgs) -> Result<()> {
    let files = emit_report(
        &args.runs,
        &ReportOptions {
            out_dir: args.out,
            dataset_override: args.dataset,
            include_iteration_zero: args.include_iteration_zero,
        },
    )?;
    println!("wrote {}", files.summary.display());
    println!("wrote {}", files.curve.display());
    println!("wrote {}", files.ledger.display());
    if let Some(path) = files.ablation {
        println!("wrote {}", path.display());
    }
    if let Some(path) = files.passk {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_verify(a: &str, b: &str) -> Result<()> {
    let ca = answer::canonicalize(a);
    let cb = answer::canonicalize(b);
    let equal = answer::answers_equal(a, b);
    println!("a: surface={:?} canonical={:?} numeric={}", a, ca.canonical_string, ca.numeric.is_some());
    println!("b: surface={:?} canonical={:?} numeric={}", b, cb.canonical_string, cb.numeric.is_some());
    println!("equal: {equal}");
    if !equal {
        std::process::exit(1);
    }
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let dataset = ingest_datasets(&args.dataset)?;
    let dataset_path_label = args
        .dataset
        .iter()
        .map(|p| p.display().to_string())
        .collect::<Vec<_>>()
        .join(",");
    let tempdir;
    let out_root = match &args.out {
        Some(path) => path.clone(),
        None => {
            tempdir = std::env::temp_dir().join(format!("popevolve-smoke-{}", std::process::id()));
            tempdir.clone()
        }
    };

    let specs = [
        ("population_evolve", StrategySpec::population_evolve(4, 2)),
        ("dser", StrategySpec::dser(2)),
        ("genselect", StrategySpec::genselect(4, 4)),
        ("baseline", StrategySpec::baseline(8)),
    ];
    println!("sim smoke over {} problems ({})", dataset.problems.len(), dataset.name);
    for (label, spec) in specs {
        let options = RunOptions {
            dataset: clone_dataset(&dataset),
            dataset_path: dataset_path_label.clone(),
            spec,
            params: GenerationParams::default(),
            backend: BackendConfig::Sim { config: SimModelConfig::default() },
            master_seed: args.master_seed,
            evolve_budget_chars: DEFAULT_EVOLVE_BUDGET_CHARS,
            prompts_dir: None,
            jobs: 2,
        };
        let summary = execute_run(&options, &out_root.join(label))?;
        println!(
            "  {label:<18} accuracy {} requests {:>5} converged {}/{}",
            summary
                .accuracy_pct
                .map(|a| format!("{a:6.2}%"))
                .unwrap_or_else(|| "   n/a".to_string()),
            summary.total_requests,
            summary.converged,
            summary.problems,
        );
    }
    println!("run directories under {}", out_root.display());
    Ok(())
}

fn clone_dataset(dataset: &Dataset) -> Dataset {
    Dataset {
        name: dataset.name.clone(),
        problems: dataset.problems.clone(),
        sha256: dataset.sha256.clone(),
    }
}

fn print_summary(summary: &RunSummary) {
    println!(
        "run {} complete: {} of {} problems, strategy {}",
        summary.run_id,
        summary.completed,
        summary.problems,
        summary.strategy.kind,
    );
    match summary.accuracy_pct {
        Some(pct) => println!(
            "accuracy {pct:.2}% over {} scored problems ({} skipped without reference)",
            summary.scored_problems,
            summary.skipped_no_reference.len()
        ),
        None => println!("no reference answers; accuracy not computed"),
    }
    if summary.converged > 0 {
        println!(
            "converged {}/{} problems (mean iteration {:.2})",
            summary.converged,
            summary.problems,
            summary.mean_converged_iteration.unwrap_or(0.0)
        );
    }
    if !summary.errored.is_empty() {
        println!("errored problems: {}", summary.errored.join(", "));
    }
    println!(
        "{} requests, {} prompt tokens, {} completion tokens, {} ms wall time",
        summary.total_requests,
        summary.total_prompt_tokens,
        summary.total_completion_tokens,
        summary.total_wall_time_ms
    );
}
