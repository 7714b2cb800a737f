use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use coughpipe::features::ActivityFilter;
use coughpipe::pipeline::{self, PipelineConfig, PipelineError, ScanConfig};
use coughpipe::synthgen::{self, SynthError, SynthSpec};

#[derive(Parser)]
#[command(name = "coughpipe", version, about = "Cough detection and cough-type clustering")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML run configuration
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random stream (overrides the config)
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Restrict the manifest to one activity: all, walking or non-walking
    #[arg(long, global = true, value_parser = parse_activity)]
    activity: Option<ActivityFilter>,
    /// Output directory (overrides the config)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

fn parse_activity(s: &str) -> Result<ActivityFilter, String> {
    ActivityFilter::parse(s).ok_or_else(|| format!("expected all, walking or non-walking, got {s:?}"))
}

#[derive(Subcommand)]
enum Command {
    /// Generate the seeded synthetic corpus (or a planted-cough recording)
    Synth(SynthArgs),
    /// Extract features and write dataset.csv
    Features {
        /// Include augmented train rows
        #[arg(long)]
        augmented: bool,
    },
    /// Write augmented train cough WAVs with a provenance manifest
    Augment,
    /// Full training run: metrics, confusion matrix, training curve, weights
    Train,
    /// Evaluate saved weights on the test split
    Eval {
        /// Directory holding model.json, standardizer.json and weights.bin
        #[arg(long)]
        model: PathBuf,
    },
    /// Compare original-only, noise and noise+interpolation training sets
    Ablation,
    /// Cluster cough rows and choose k by silhouette
    Cluster,
    /// Slide the trained model over a long recording
    Scan(ScanArgs),
    /// Regenerate SVG plots from the CSV files in --out
    Report,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    n_cough_per_burst: Option<usize>,
    #[arg(long)]
    n_background_per_kind: Option<usize>,
    /// Comma-separated burst counts, e.g. 1,2,3,4
    #[arg(long, value_delimiter = ',')]
    burst_counts: Option<Vec<u8>>,
    /// Instead of a corpus, write planted.wav with this many coughs
    #[arg(long)]
    planted: Option<usize>,
    /// Length of the planted recording in seconds
    #[arg(long, default_value_t = 60.0)]
    duration: f64,
}

#[derive(Args)]
struct ScanArgs {
    /// Directory holding model.json, standardizer.json and weights.bin
    #[arg(long)]
    model: PathBuf,
    /// WAV file to scan
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    window: Option<f64>,
    #[arg(long)]
    hop: Option<f64>,
    #[arg(long)]
    threshold: Option<f64>,
    /// Windows quieter than this RMS score 0 (0 disables)
    #[arg(long)]
    min_rms: Option<f64>,
}

enum Failure {
    Pipeline(PipelineError),
    Synth(SynthError),
}

impl Failure {
    fn exit_code(&self) -> u8 {
        match self {
            Failure::Pipeline(e) => e.exit_code() as u8,
            Failure::Synth(SynthError::InvalidSpec(_) | SynthError::SpecInfeasible { .. }) => 2,
            Failure::Synth(_) => 1,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Pipeline(e) => e.fmt(f),
            Failure::Synth(e) => e.fmt(f),
        }
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        Failure::Pipeline(e)
    }
}

impl From<SynthError> for Failure {
    fn from(e: SynthError) -> Self {
        Failure::Synth(e)
    }
}

fn config_error(msg: impl Into<String>) -> Failure {
    Failure::Pipeline(PipelineError::Config(msg.into()))
}

fn load_config(g: &Global) -> Result<PipelineConfig, Failure> {
    let path = g
        .config
        .as_ref()
        .ok_or_else(|| config_error("--config is required for this command"))?;
    let mut cfg = PipelineConfig::load(path)?;
    if let Some(seed) = g.seed {
        cfg.seed = seed;
    }
    if let Some(a) = g.activity {
        cfg.activity = a;
    }
    if let Some(out) = &g.out {
        cfg.out_dir = out.clone();
    }
    Ok(cfg)
}

fn out_dir(g: &Global) -> Result<PathBuf, Failure> {
    match (&g.out, &g.config) {
        (Some(o), _) => Ok(o.clone()),
        (None, Some(_)) => Ok(load_config(g)?.out_dir),
        (None, None) => Err(config_error("--out is required for this command")),
    }
}

fn print_json<T: serde::Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn run(cli: Cli) -> Result<(), Failure> {
    let g = &cli.global;
    match cli.command {
        Command::Synth(args) => {
            let out = out_dir(g)?;
            let seed = g.seed.unwrap_or(0);
            if let Some(n) = args.planted {
                let path = out.join("planted.wav");
                let planted = synthgen::write_planted(seed, args.duration, n, &path)?;
                println!("wrote {} with {} planted coughs", path.display(), planted.len());
                return Ok(());
            }
            let d = SynthSpec::default();
            let spec = SynthSpec {
                n_cough_per_burst: args.n_cough_per_burst.unwrap_or(d.n_cough_per_burst),
                n_background_per_kind: args.n_background_per_kind.unwrap_or(d.n_background_per_kind),
                burst_counts: args.burst_counts.unwrap_or(d.burst_counts),
                seed,
                ..d
            };
            let manifest = synthgen::gen_corpus(&spec, &out)?;
            println!("wrote {}", manifest.display());
        }
        Command::Features { augmented } => {
            let cfg = load_config(g)?;
            let ds = pipeline::export_features(&cfg, augmented)?;
            println!("wrote {} rows to {}", ds.len(), cfg.out_dir.join("dataset.csv").display());
        }
        Command::Augment => {
            let cfg = load_config(g)?;
            let n = pipeline::export_augmented(&cfg)?;
            println!("wrote {n} clips to {}", cfg.out_dir.join("augmented_manifest.csv").display());
        }
        Command::Train => {
            let cfg = load_config(g)?;
            let out = pipeline::run_pipeline(&cfg)?;
            print_json(&out.metrics.models);
        }
        Command::Eval { model } => {
            let cfg = load_config(g)?;
            print_json(&pipeline::evaluate_saved(&cfg, &model)?);
        }
        Command::Ablation => {
            let cfg = load_config(g)?;
            let out = pipeline::ablation(&cfg)?;
            for r in &out.rows {
                let m = &r.metrics;
                println!(
                    "{:<13} acc {:.4} precision {:.4} recall {:.4} f1 {:.4}",
                    r.condition, m.accuracy, m.precision, m.recall, m.f1
                );
            }
        }
        Command::Cluster => {
            let cfg = load_config(g)?;
            let out = pipeline::cluster_command(&cfg)?;
            println!("k_selected {}", out.report.k_selected);
            println!("cluster_counts {:?}", out.report.cluster_counts);
            if let Some(a) = out.burst_agreement {
                println!("burst_agreement {a:.4}");
            }
        }
        Command::Scan(args) => {
            let base = match &g.config {
                Some(_) => load_config(g)?.scan,
                None => ScanConfig::default(),
            };
            let scan = ScanConfig {
                window_secs: args.window.unwrap_or(base.window_secs),
                hop_secs: args.hop.unwrap_or(base.hop_secs),
                threshold: args.threshold.unwrap_or(base.threshold),
                min_rms: args.min_rms.unwrap_or(base.min_rms),
            };
            let out = out_dir(g)?;
            let result = pipeline::scan_file(&args.model, &args.input, &scan, &out)?;
            print_json(&result.events);
        }
        Command::Report => {
            let out = out_dir(g)?;
            for p in pipeline::render_reports(&out)? {
                println!("wrote {}", p.display());
            }
        }
    }
    Ok(())
}

fn init_threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var("COUGHPIPE_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| config_error(format!("COUGHPIPE_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| config_error(e.to_string()))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match init_threads().and_then(|()| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
