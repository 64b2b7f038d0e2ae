//! `racam`: mapping search, LLM scenarios and sweeps from the command line.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use racam_core::area::AreaParams;
use racam_core::config::{load_config, preset, Ablation, SystemConfig, PRESET_NAMES};
use racam_core::llm::AttentionMode;
use racam_core::mapping::GemmShape;
use racam_core::report::{run, write_artifacts, ExperimentSpec, Mode, SweepAxis};
use racam_core::search::Parallelism;

/// Environment variable naming the default configuration file.
const CONFIG_ENV: &str = "RACAM_CONFIG";

#[derive(Debug, Parser)]
#[command(
    name = "racam",
    version,
    about = "Mapping search and latency model for in-DRAM bit-serial GEMM"
)]
struct Args {
    /// Hardware configuration file (TOML). Defaults to $RACAM_CONFIG, then
    /// the racam_full preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Built-in configuration, used when --config is absent.
    #[arg(long)]
    preset: Option<String>,
    /// gemm, gemv, llm or sweep.
    #[arg(long, default_value = "gemm")]
    mode: String,
    /// GEMM shape as MxKxN.
    #[arg(long)]
    shape: Option<String>,
    #[arg(long)]
    model: Option<String>,
    /// code_generation or context_understanding.
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long, default_value_t = 8)]
    precision: u32,
    /// Precisions of the precision sweep.
    #[arg(long, value_delimiter = ',', default_value = "8,4,2")]
    precisions: Vec<u32>,
    /// Units to remove: any of lb, pr, bu.
    #[arg(long, default_value = "")]
    ablate: String,
    /// precision, pe_count, size, mapping, mul or ablation.
    #[arg(long)]
    sweep: Option<String>,
    /// per_head or batched.
    #[arg(long, default_value = "per_head")]
    attention: String,
    /// Directory for the report and CSV files.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the winning kernel's instruction and event counts.
    #[arg(long)]
    log_trace: bool,
    /// Area calibration file (TOML) replacing the shipped defaults.
    #[arg(long)]
    area_params: Option<PathBuf>,
    /// Evaluate candidates on one thread.
    #[arg(long)]
    sequential: bool,
}

fn read(path: &PathBuf) -> Result<String, String> {
    std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn config(args: &Args) -> Result<SystemConfig, String> {
    let path = args.config.clone().or_else(|| match args.preset {
        Some(_) => None,
        None => std::env::var_os(CONFIG_ENV).map(PathBuf::from),
    });
    match (path, &args.preset) {
        (Some(p), _) => load_config(&read(&p)?).map_err(|e| format!("{}: {e}", p.display())),
        (None, Some(name)) => preset(name).map_err(|e| format!("{e} (known: {})", PRESET_NAMES.join(", "))),
        (None, None) => preset("racam_full").map_err(|e| e.to_string()),
    }
}

fn spec(args: &Args) -> Result<ExperimentSpec, String> {
    let mode: Mode = args.mode.parse().map_err(|e| format!("{e}"))?;
    let shape = args
        .shape
        .as_deref()
        .map(|s| GemmShape::parse(s, args.precision).map(|g| [g.m, g.k, g.n]))
        .transpose()
        .map_err(|e| e.to_string())?;
    let sweep = args
        .sweep
        .as_deref()
        .map(str::parse::<SweepAxis>)
        .transpose()
        .map_err(|e| e.to_string())?;
    Ok(ExperimentSpec {
        mode,
        shape,
        model: args.model.clone(),
        scenario: args.scenario.clone(),
        precision: args.precision,
        precisions: args.precisions.clone(),
        ablation: Ablation::parse(&args.ablate).map_err(|e| e.to_string())?,
        sweep,
        attention: args
            .attention
            .parse::<AttentionMode>()
            .map_err(|e| e.to_string())?,
        log_trace: args.log_trace,
        parallelism: if args.sequential {
            Parallelism::Sequential
        } else {
            Parallelism::Parallel
        },
    })
}

fn main_inner(args: &Args) -> Result<(), String> {
    let cfg = config(args)?;
    let area = match &args.area_params {
        Some(p) => AreaParams::parse(&read(p)?).map_err(|e| format!("{}: {e}", p.display()))?,
        None => AreaParams::default(),
    };
    let spec = spec(args)?;
    let out = run(&spec, &cfg, &area).map_err(|e| e.to_string())?;
    print!("{}", out.summary);
    if let Some(dir) = &args.out {
        write_artifacts(&out, dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let args = Args::parse();
    match main_inner(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("racam: {e}");
            ExitCode::FAILURE
        }
    }
}
