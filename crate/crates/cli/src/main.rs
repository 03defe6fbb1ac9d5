use clap::{Args, Parser, Subcommand};
use mixselect_cli::config::{Preset, RunConfig};
use mixselect_cli::pipeline;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "mixselect",
    about = "Copula-based simulation benchmark for variable and function selection in correlated exposure mixtures",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct CommonOpts {
    /// JSON config file; flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed for every derived random stream.
    #[arg(long)]
    seed: Option<u64>,
    /// Replications per scenario.
    #[arg(long)]
    reps: Option<usize>,
    /// Comma-separated scenario ids, or "all".
    #[arg(long, value_delimiter = ',')]
    scenarios: Option<Vec<String>>,
    /// Comma-separated methods (lasso,bkmr,bart,ssgam,oracle).
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    /// Worker threads (0 = one per core).
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Preset: full, desk, or smoke.
    #[arg(long)]
    preset: Option<String>,
    /// Raw exposure CSV for the copula fit.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Column-map JSON for the raw CSV.
    #[arg(long)]
    schema: Option<PathBuf>,
    /// Also export retained sampler traces.
    #[arg(long)]
    traces: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Ingest the exposure table and fit/compare the copula families.
    FitCopula(CommonOpts),
    /// Export the replicated simulation datasets.
    Simulate(CommonOpts),
    /// Run the selection methods over all scenario replications.
    Run(CommonOpts),
    /// Aggregate stored results into the metrics tables.
    Evaluate(CommonOpts),
    /// Render heat maps, curve panels, and metric boxplots.
    Plot(CommonOpts),
    /// The full pipeline: fit-copula, simulate, run, evaluate, plot.
    All(CommonOpts),
}

fn build_config(opts: &CommonOpts) -> Result<RunConfig, String> {
    let mut cfg = match &opts.config {
        Some(path) => RunConfig::from_json_file(path).map_err(|e| e.to_string())?,
        None => RunConfig::default(),
    };
    if let Some(preset) = &opts.preset {
        let preset = Preset::parse(preset)
            .ok_or_else(|| format!("unknown preset '{preset}' (full, desk, smoke)"))?;
        cfg.apply_preset(preset);
    }
    if let Some(seed) = opts.seed {
        cfg.master_seed = seed;
    }
    if let Some(reps) = opts.reps {
        cfg.reps = reps;
    }
    if let Some(scenarios) = &opts.scenarios {
        cfg.scenarios = scenarios.clone();
    }
    if let Some(methods) = &opts.methods {
        cfg.methods = methods.clone();
    }
    if let Some(workers) = opts.workers {
        cfg.workers = workers;
    }
    if let Some(out) = &opts.out {
        cfg.out = out.clone();
    }
    if let Some(data) = &opts.data {
        cfg.data = data.clone();
    }
    if let Some(schema) = &opts.schema {
        cfg.schema = schema.clone();
    }
    if opts.traces {
        cfg.traces = true;
    }
    // surface unknown scenario/method names as usage errors up front
    cfg.resolve_scenarios().map_err(|e| e.to_string())?;
    cfg.resolve_methods().map_err(|e| e.to_string())?;
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (opts, action): (&CommonOpts, &str) = match &cli.command {
        Command::FitCopula(o) => (o, "fit-copula"),
        Command::Simulate(o) => (o, "simulate"),
        Command::Run(o) => (o, "run"),
        Command::Evaluate(o) => (o, "evaluate"),
        Command::Plot(o) => (o, "plot"),
        Command::All(o) => (o, "all"),
    };
    let cfg = match build_config(opts) {
        Ok(cfg) => cfg,
        Err(message) => {
            eprintln!("error: {message}");
            return ExitCode::from(2);
        }
    };

    let outcome = match action {
        "fit-copula" => pipeline::fit_copula_step(&cfg).map(|model| {
            println!(
                "fitted {} copula (nu = {}) over {} exposures",
                model.family,
                model.nu.map(|v| format!("{v:.2}")).unwrap_or_else(|| "-".into()),
                model.j()
            );
            0
        }),
        "simulate" => pipeline::load_or_fit_copula(&cfg).and_then(|copula| {
            let written = pipeline::simulate_step(&cfg, &copula)?;
            println!("wrote {written} dataset files");
            Ok(0)
        }),
        "run" => pipeline::load_or_fit_copula(&cfg).and_then(|copula| {
            let manifest = pipeline::run_step(&cfg, &copula)?;
            println!(
                "{} tasks completed, {} failed",
                manifest.tasks.len(),
                manifest.failed()
            );
            Ok(pipeline::exit_code_for(&manifest))
        }),
        "evaluate" => pipeline::evaluate_step(&cfg).map(|(rows, curve_rows)| {
            println!(
                "wrote {} selection rows and {} curve rows",
                rows.len(),
                curve_rows.len()
            );
            0
        }),
        "plot" => pipeline::plot_step(&cfg).map(|()| 0),
        "all" => pipeline::all_steps(&cfg).map(|manifest| {
            println!(
                "{} tasks completed, {} failed",
                manifest.tasks.len(),
                manifest.failed()
            );
            pipeline::exit_code_for(&manifest)
        }),
        _ => unreachable!(),
    };

    match outcome {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                mixselect::Error::Config(_) | mixselect::Error::Schema(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
