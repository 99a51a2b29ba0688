mod settings;

use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use minions_core::costlat::{HardwareSpec, LatencyScenario, ModelShape, WorkloadProfile};
use minions_core::harness::{load_dataset, run_suite, sweep, write_records_csv, write_sweep_csv, Clients, SweepAxis};
use minions_core::retrieval::{EmbeddingProvider, HttpEmbedder};
use minions_core::{HttpModel, LanguageModel, MockModel, MockScript};
use serde::Deserialize;
use settings::Settings;
use tracing_subscriber::EnvFilter;

#[derive(Debug, Parser)]
#[command(name = "minions", version, about = "Run local-remote protocols over a dataset and model their latency")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one protocol over a dataset and print the aggregate report.
    Run(RunArgs),
    /// Run the suite once per value of a knob and print one CSV row per value.
    Sweep(SweepArgs),
    /// Evaluate the latency model for one hardware and workload configuration.
    Latency(LatencyArgs),
    /// Check that a dataset file parses and every task is well formed.
    ValidateDataset { path: PathBuf },
}

#[derive(Debug, Args)]
struct Common {
    /// Flat TOML file with the same keys as the long options.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    settings: Settings,
}

impl Common {
    fn resolve(self) -> Result<Settings> {
        let file = match &self.config {
            Some(path) => Settings::load(path)?,
            None => Settings::default(),
        };
        Ok(self.settings.over(file))
    }
}

#[derive(Debug, Args)]
struct RunArgs {
    #[command(flatten)]
    common: Common,
    /// Write one CSV row per task here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    common: Common,
    /// max_rounds, samples_per_task, instructions_per_round, pages_per_chunk or rag_k.
    #[arg(long)]
    axis: String,
    /// Comma-separated positive integers.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<usize>,
    /// Write the CSV here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct LatencyArgs {
    /// Local peak FLOP/s.
    #[arg(long)]
    local_flops: f64,
    /// Local peak memory bandwidth in bytes/s.
    #[arg(long)]
    local_mem_bw: f64,
    /// Remote peak FLOP/s. Defaults to 8xH100.
    #[arg(long)]
    remote_flops: Option<f64>,
    /// Remote peak memory bandwidth in bytes/s. Defaults to 8xH100.
    #[arg(long)]
    remote_mem_bw: Option<f64>,
    #[arg(long, default_value_t = ModelShape::llama_8b().layers)]
    local_layers: u64,
    #[arg(long, default_value_t = ModelShape::llama_8b().hidden)]
    local_hidden: u64,
    #[arg(long, default_value_t = ModelShape::llama_405b().layers)]
    remote_layers: u64,
    #[arg(long, default_value_t = ModelShape::llama_405b().hidden)]
    remote_hidden: u64,
    /// Context tokens.
    #[arg(long)]
    n: u64,
    /// Local decode tokens per job.
    #[arg(long)]
    n_out_local: u64,
    /// Remote decode tokens.
    #[arg(long)]
    n_out_remote: u64,
    /// Chunks.
    #[arg(short, long, default_value_t = 1)]
    c: u64,
    /// Instructions.
    #[arg(short, long, default_value_t = 1)]
    k: u64,
    /// Samples per instruction.
    #[arg(short, long, default_value_t = 1)]
    s: u64,
    /// Fraction of local outputs forwarded to the remote model.
    #[arg(short, long, default_value_t = 1.0)]
    p: f64,
    #[arg(long, default_value_t = 1)]
    rounds: u32,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MockScripts {
    local: MockScript,
    remote: MockScript,
}

struct Backends {
    local: Box<dyn LanguageModel>,
    remote: Box<dyn LanguageModel>,
    embedder: Option<Box<dyn EmbeddingProvider>>,
}

impl Backends {
    fn from_settings(s: &Settings) -> Result<Backends> {
        let embedder = s.embed_url.as_ref().map(|url| {
            let model = s.embed_model.clone().unwrap_or_else(|| "embedding".into());
            Box::new(HttpEmbedder::new(url, env_key("MINIONS_EMBED_API_KEY"), model)) as Box<dyn EmbeddingProvider>
        });
        if let Some(path) = &s.mock_script {
            if s.local_url.is_some() || s.remote_url.is_some() {
                bail!("--mock-script cannot be combined with --local-url or --remote-url");
            }
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let scripts: MockScripts = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            return Ok(Backends {
                local: Box::new(MockModel::new(scripts.local)),
                remote: Box::new(MockModel::new(scripts.remote)),
                embedder,
            });
        }
        let (Some(local), Some(remote)) = (&s.local_url, &s.remote_url) else {
            bail!("pass both --local-url and --remote-url, or --mock-script");
        };
        Ok(Backends {
            local: Box::new(HttpModel::new(local, env_key("MINIONS_LOCAL_API_KEY"))),
            remote: Box::new(HttpModel::new(remote, env_key("MINIONS_REMOTE_API_KEY"))),
            embedder,
        })
    }

    fn clients(&self) -> Clients<'_> {
        Clients { local: self.local.as_ref(), remote: self.remote.as_ref(), embedder: self.embedder.as_deref() }
    }
}

fn env_key(var: &str) -> Option<String> {
    std::env::var(var).ok().filter(|k| !k.is_empty())
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(File::create(p).with_context(|| format!("creating {}", p.display()))?),
        None => Box::new(io::stdout().lock()),
    })
}

fn run(args: RunArgs) -> Result<()> {
    let settings = args.common.resolve()?;
    let config = settings.suite_config()?;
    let dataset = load_dataset(settings.dataset_path()?)?;
    let backends = Backends::from_settings(&settings)?;
    let (records, report) = run_suite(&dataset, &config, backends.clients());
    for r in records.iter().filter(|r| r.error.is_some()) {
        tracing::warn!(task = %r.task_id, error = r.error.as_deref().unwrap_or(""), "task failed");
    }
    if let Some(path) = &args.out {
        write_records_csv(&records, output(Some(path))?)?;
    }
    println!("protocol: {}", config.protocol.as_str());
    println!("config: {}", config.fingerprint());
    println!("{report}");
    Ok(())
}

fn run_sweep(args: SweepArgs) -> Result<()> {
    let settings = args.common.resolve()?;
    let config = settings.suite_config()?;
    let axis = SweepAxis::parse(&args.axis)?;
    let dataset = load_dataset(settings.dataset_path()?)?;
    let backends = Backends::from_settings(&settings)?;
    let rows = sweep(&dataset, &config, axis, &args.values, backends.clients())?;
    write_sweep_csv(&rows, output(args.out.as_deref())?)?;
    Ok(())
}

fn latency(args: LatencyArgs) -> Result<()> {
    let h100 = HardwareSpec::h100x8();
    let scenario = LatencyScenario {
        hw_local: HardwareSpec::new(args.local_flops, args.local_mem_bw)?,
        hw_remote: HardwareSpec::new(args.remote_flops.unwrap_or(h100.peak_flops), args.remote_mem_bw.unwrap_or(h100.peak_mem_bw))?,
        shape_local: ModelShape::new(args.local_layers, args.local_hidden)?,
        shape_remote: ModelShape::new(args.remote_layers, args.remote_hidden)?,
        profile: WorkloadProfile {
            n: args.n,
            n_out_local: args.n_out_local,
            n_out_remote: args.n_out_remote,
            c: args.c,
            k: args.k,
            s: args.s,
            p: args.p,
        },
        rounds: args.rounds,
    };
    println!("{}", scenario.report()?);
    Ok(())
}

fn validate(path: &Path) -> Result<()> {
    let dataset = load_dataset(path).map_err(|e| anyhow!("{}: {e}", path.display()))?;
    println!("{}: {} task(s) OK", path.display(), dataset.len());
    Ok(())
}

fn main() -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("warn")))
        .with_writer(io::stderr)
        .init();
    match Cli::parse().command {
        Command::Run(args) => run(args),
        Command::Sweep(args) => run_sweep(args),
        Command::Latency(args) => latency(args),
        Command::ValidateDataset { path } => validate(&path),
    }
}
