use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::error;

use votesim_cli::config::{BackendKind, Overrides, Settings};
use votesim_cli::{exit_code, flush_caches, run};
use votesim_core::pipeline::PipelineVersion;

/// Synthesize voter personas, simulate elections against a text backend and
/// score the forecasts. The HTTP backend reads its API key from the
/// environment variable named by `backend.api_key_env` (default OPENAI_API_KEY).
#[derive(Parser)]
#[command(name = "votesim", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate personas from block aggregates.
    Synth(Common),
    /// Sample personas, run the prompt pipeline and tally the results.
    Simulate(Common),
    /// Compare simulation results with ground truth.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// State results to evaluate instead of `<out>/results/states.json`.
        #[arg(long)]
        results: Option<PathBuf>,
    },
    /// Response-cache maintenance.
    Cache {
        #[command(subcommand)]
        action: CacheAction,
    },
}

#[derive(Subcommand)]
enum CacheAction {
    /// Rewrite a cache file with one entry per key, sorted.
    Compact { path: PathBuf },
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated state codes, `all` or `swing`.
    #[arg(long)]
    states: Option<String>,
    #[arg(long, value_enum)]
    backend: Option<BackendKind>,
    /// Treat a replay cache miss as fatal.
    #[arg(long)]
    strict_replay: bool,
    /// Pipeline version: v1, v2 or v3.
    #[arg(long)]
    pipeline: Option<PipelineVersion>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Block aggregate file or directory.
    #[arg(long)]
    blocks: Option<PathBuf>,
    /// State profiles (population, category, electoral votes).
    #[arg(long)]
    profiles: Option<PathBuf>,
    /// Election-year context file.
    #[arg(long)]
    context: Option<PathBuf>,
    /// Ground-truth results file.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Response cache file.
    #[arg(long)]
    cache: Option<PathBuf>,
    /// Survey respondent CSV; replaces synthesis and sampling.
    #[arg(long)]
    respondents: Option<PathBuf>,
    /// Worker threads issuing backend calls.
    #[arg(long)]
    workers: Option<usize>,
}

impl Common {
    fn settings(&self) -> anyhow::Result<Settings> {
        let overrides = Overrides {
            seed: self.seed,
            states: self.states.clone(),
            backend: self.backend,
            strict_replay: self.strict_replay,
            pipeline: self.pipeline,
            out: self.out.clone(),
            blocks: self.blocks.clone(),
            profiles: self.profiles.clone(),
            context: self.context.clone(),
            truth: self.truth.clone(),
            cache: self.cache.clone(),
            respondents: self.respondents.clone(),
            workers: self.workers,
        };
        Settings::load(self.config.as_deref(), &overrides)
    }
}

fn execute(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth(common) => {
            let manifest = run::synth(&common.settings()?)?;
            println!("synthesized {} personas in {} states", manifest.total, manifest.states.len());
        }
        Command::Simulate(common) => {
            let summary = run::simulate(&common.settings()?)?;
            let agg = &summary.aggregate;
            match agg.predicted {
                Some(p) => println!("{} records, Republican ratio {p:.4}", summary.manifest.personas),
                None => println!("{} records, no major-party votes", summary.manifest.personas),
            }
            if let Some(r) = &summary.results {
                let o = &r.outcome;
                println!(
                    "electoral votes: Democratic {}, Republican {}, toss-up {}",
                    o.democratic_ev, o.republican_ev, o.tossup_ev
                );
            }
            println!("outputs in {}", summary.out.display());
        }
        Command::Evaluate { common, results } => {
            let report = run::evaluate(&common.settings()?, results.as_deref())?;
            print!("{}", votesim_core::evaluate::render_text(&report));
        }
        Command::Cache {
            action: CacheAction::Compact { path },
        } => {
            let r = run::compact_cache(&path)?;
            println!("{} lines compacted to {} entries", r.lines_before, r.entries_after);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Err(e) = ctrlc::set_handler(|| {
        flush_caches();
        eprintln!("interrupted; response cache flushed");
        std::process::exit(130);
    }) {
        error!("cannot install interrupt handler: {e}");
    }
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            flush_caches();
            error!("{e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
