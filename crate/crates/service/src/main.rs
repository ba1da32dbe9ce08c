use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use forge_core::analytics::{Aggregation, EngagementMetric};
use forge_core::par::Exec;
use forge_core::themes::CurationAction;
use forge_service::api::{serve, AppState};
use forge_service::config::{parse_k_range, Config};
use forge_service::export::export_report;
use forge_service::fixture::write_fixture;
use forge_service::pipeline::{self, RunStatus, StageResult};
use forge_service::stage::Stage;
use forge_service::store::Store;

#[derive(Parser)]
#[command(name = "forge", version, about = "Theme and stance pipeline over video transcripts")]
struct Cli {
    /// Project store directory.
    #[arg(long, global = true, default_value = "forge-store")]
    store: PathBuf,
    #[arg(long, global = true, default_value = "forge.toml")]
    config: PathBuf,
    /// Overrides the seed from the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Runs kernels on one thread.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    Ingest,
    Extract,
    Embed,
    Cluster {
        #[arg(long)]
        k: Option<usize>,
    },
    Diagnose {
        /// `start:end:step`.
        #[arg(long)]
        elbow: Option<String>,
        #[arg(long)]
        silhouette: bool,
    },
    NameClusters,
    /// Applies curation actions from a JSON array, or prints the merge map.
    Curate {
        #[arg(long)]
        actions: Option<PathBuf>,
    },
    Validation,
    Tables,
    Engagement {
        #[arg(long, value_delimiter = ',')]
        metric: Vec<EngagementMetric>,
        #[arg(long)]
        min_occ: Option<usize>,
        /// Pool counts over views instead of averaging per-video ratios.
        #[arg(long)]
        pooled: bool,
    },
    Viz {
        #[arg(long)]
        perplexity: Option<f64>,
    },
    Quality {
        #[arg(long)]
        groups: Option<PathBuf>,
    },
    StanceScan,
    StanceClassify,
    StanceEval {
        #[arg(long)]
        credit: Option<f64>,
    },
    StanceTables,
    /// Every stage in dependency order, skipping up-to-date ones.
    RunAll,
    Status,
    Export {
        #[arg(long, default_value = "report")]
        out: PathBuf,
    },
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: String,
    },
    /// Writes a synthetic project (corpus, targets, gold, config).
    Fixture(FixtureArgs),
}

#[derive(Args)]
struct FixtureArgs {
    #[arg(long, default_value = "fixture")]
    out: PathBuf,
    #[arg(long, default_value_t = 200)]
    docs: usize,
}

fn report(r: &StageResult) {
    match r.status {
        RunStatus::Unchanged => println!("{:<16} unchanged", r.stage),
        RunStatus::Ran => {
            println!("{:<16} ran ({} outputs)", r.stage, r.outputs.len());
            if !r.invalidated.is_empty() {
                let names: Vec<&str> = r.invalidated.iter().map(|s| s.as_str()).collect();
                println!("{:<16} invalidated {}", "", names.join(", "));
            }
        }
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let exec = if cli.sequential { Exec::Sequential } else { Exec::default() };

    if let Command::Fixture(a) = &cli.command {
        let path = write_fixture(&a.out, a.docs, cli.seed.unwrap_or(42))
            .with_context(|| format!("writing fixture to {}", a.out.display()))?;
        println!("wrote {}", path.display());
        return Ok(());
    }

    let mut config = Config::load(&cli.config).with_context(|| format!("loading {}", cli.config.display()))?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    let mut store = Store::open(&cli.store).with_context(|| format!("opening store {}", cli.store.display()))?;

    let stage = match &cli.command {
        Command::Ingest => Stage::Ingest,
        Command::Extract => Stage::Extract,
        Command::Embed => Stage::Embed,
        Command::Cluster { k } => {
            if let Some(k) = k {
                config.cluster.k = *k;
            }
            Stage::Cluster
        }
        Command::Diagnose { elbow, silhouette } => {
            if let Some(e) = elbow {
                parse_k_range(e)?;
                config.diagnose.elbow = e.clone();
            }
            config.diagnose.silhouette |= silhouette;
            Stage::Diagnose
        }
        Command::NameClusters => Stage::Name,
        Command::Curate { actions } => {
            let Some(path) = actions else {
                println!("{}", serde_json::to_string_pretty(&pipeline::load_merge_map(&store)?)?);
                return Ok(());
            };
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let actions: Vec<CurationAction> = serde_json::from_str(&text).context("parsing curation actions")?;
            let now = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true);
            let (map, invalidated) = pipeline::apply_curation(&mut store, &actions, &now)?;
            println!("merge map at version {} with {} themes", map.version, map.theme_names.len());
            for s in invalidated {
                println!("invalidated {s}");
            }
            return Ok(());
        }
        Command::Validation => Stage::Validation,
        Command::Tables => Stage::Tables,
        Command::Engagement { metric, min_occ, pooled } => {
            if !metric.is_empty() {
                config.analytics.metrics = metric.clone();
            }
            if let Some(m) = min_occ {
                config.analytics.min_occurrence = *m;
            }
            if *pooled {
                config.analytics.aggregation = Aggregation::Pooled;
            }
            Stage::Engagement
        }
        Command::Viz { perplexity } => {
            if let Some(p) = perplexity {
                config.viz.perplexity = *p;
            }
            Stage::Viz
        }
        Command::Quality { groups } => {
            if let Some(g) = groups {
                config.quality.groups = Some(std::path::absolute(g)?);
            }
            Stage::Quality
        }
        Command::StanceScan => Stage::StanceScan,
        Command::StanceClassify => Stage::StanceClassify,
        Command::StanceEval { credit } => {
            if let Some(c) = credit {
                config.stance.credit = *c;
            }
            Stage::StanceEval
        }
        Command::StanceTables => Stage::StanceTables,
        Command::RunAll => {
            let mut stages = Stage::ALL.to_vec();
            if config.validation.per_dataset.is_empty() {
                stages.retain(|s| *s != Stage::Validation);
            }
            if config.stance.targets.is_none() {
                stages.retain(|s| !s.as_str().starts_with("stance"));
            } else if config.stance.gold.is_none() {
                stages.retain(|s| *s != Stage::StanceEval);
            }
            for s in stages {
                report(&pipeline::run_stage(&mut store, s, &config, exec)?);
            }
            return Ok(());
        }
        Command::Status => {
            for s in pipeline::status(&store, &config) {
                println!("{:<16} {:<8} {}", s.stage, s.state, s.inputs_hash.unwrap_or_default());
            }
            return Ok(());
        }
        Command::Export { out } => {
            let m = export_report(&store, out)?;
            println!("wrote {} files to {}", m.files.len(), out.display());
            for w in m.warnings {
                println!("warning: {w}");
            }
            return Ok(());
        }
        Command::Serve { bind } => {
            let state = AppState::new(store, exec)?;
            tokio::runtime::Runtime::new()?.block_on(serve(state, bind))?;
            return Ok(());
        }
        Command::Fixture(_) => bail!("handled above"),
    };
    report(&pipeline::run_stage(&mut store, stage, &config, exec)?);
    Ok(())
}
