use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use ticket_dispatch::bundle;
use ticket_dispatch::dispatcher::{dispatch_batch, DispatchOptions};
use ticket_dispatch::ensemble::default_grid;
use ticket_dispatch::evaluation::{self, coverage_violations, metrics_table, sweep_table};
use ticket_dispatch::ingestion::{load_tickets, write_assignments, write_tickets, Format, TicketCorpus};
use ticket_dispatch::pipeline::{train_pipeline, PipelineConfig};
use ticket_dispatch::rules::{load_rule_files, RuleSet};
use ticket_dispatch::server::{self, AppState};
use ticket_dispatch::synthetic::{self, SyntheticConfig};

#[derive(Parser)]
#[command(name = "ticket-dispatch", version, about = "Route helpdesk tickets to resolver groups")]
struct Cli {
    /// Overrides the configured random seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RuleArgs {
    /// Rule document; may be repeated.
    #[arg(long = "rules")]
    rules: Vec<PathBuf>,
    /// Send abstentions straight to the manual queue.
    #[arg(long)]
    no_rescue: bool,
}

impl RuleArgs {
    fn load(&self) -> Result<RuleSet> {
        load_rule_files(&self.rules).context("loading rules")
    }

    fn options(&self) -> DispatchOptions {
        DispatchOptions { rescue: !self.no_rescue }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a model bundle.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Training tickets; defaults to the config's `data` entry.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a bundle on labelled tickets.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        bundle: PathBuf,
        #[command(flatten)]
        rules: RuleArgs,
        #[arg(long)]
        report: PathBuf,
    },
    /// Route tickets and write one decision per line.
    Dispatch {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        bundle: PathBuf,
        #[command(flatten)]
        rules: RuleArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Accuracy and coverage over a threshold grid.
    Sweep {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        bundle: PathBuf,
        /// Comma-separated thresholds; defaults to 0.1..0.9.
        #[arg(long, value_delimiter = ',')]
        grid: Vec<f64>,
        /// Also write the points as JSON lines.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// k-fold cross-validation of a training config.
    CrossValidate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        folds: usize,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long)]
        bundle: PathBuf,
        #[command(flatten)]
        rules: RuleArgs,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
    /// Write a synthetic labelled corpus.
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20_000)]
        n: usize,
    },
    /// Stratified train/test split of a labelled corpus.
    Split {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        train_out: PathBuf,
        #[arg(long)]
        test_out: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        test_fraction: f64,
    },
}

fn load_corpus(path: &Path) -> Result<TicketCorpus> {
    let report = load_tickets(path, Format::from_path(path)).with_context(|| format!("reading {}", path.display()))?;
    for r in &report.rejected {
        log::warn!("{}: line {}: {}", path.display(), r.line, r.reason);
    }
    Ok(report.corpus)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, data, out } => {
            let mut cfg = PipelineConfig::load(&config).with_context(|| format!("loading {}", config.display()))?;
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            let data = data.or_else(|| cfg.data.clone()).context("no training data given")?;
            let corpus = load_corpus(&data)?;
            let report = train_pipeline(&corpus, &cfg)?;
            bundle::save(&report.engine, &out)?;
            for (kind, secs) in &report.train_seconds {
                eprintln!("{kind}: trained in {secs:.2}s");
            }
            if let Some(c) = &report.engine.calibration {
                eprintln!(
                    "thresholds {:.2}/{:.2}: validation accuracy {} coverage {:.4}{}",
                    c.threshold_a,
                    c.threshold_b,
                    c.validation_accuracy.map_or("-".into(), |a| format!("{a:.4}")),
                    c.validation_coverage,
                    if c.target_met { "" } else { " (target not met)" }
                );
            }
            eprintln!("wrote {}", out.display());
        }
        Command::Evaluate { data, bundle: path, rules, report } => {
            let engine = bundle::load(&path)?;
            let corpus = load_corpus(&data)?;
            let r = evaluation::evaluate(&engine, corpus.tickets(), &rules.load()?, &rules.options())?;
            let mut rows = vec![r.classifier_only.clone(), r.end_to_end.clone()];
            rows.extend(r.members.iter().cloned());
            print!("{}", metrics_table(&rows));
            write_json(
                &report,
                &json!({
                    "classifier_only": r.classifier_only,
                    "end_to_end": r.end_to_end,
                    "members": r.members,
                    "calibration": engine.calibration,
                    "long_tail": engine.split,
                    "provenance": engine.provenance,
                }),
            )?;
        }
        Command::Dispatch { data, bundle: path, rules, out } => {
            let engine = bundle::load(&path)?;
            let corpus = load_corpus(&data)?;
            let decisions = dispatch_batch(corpus.tickets(), &engine.router, &rules.load()?, &rules.options())?;
            write_assignments(&decisions, &out)?;
            eprintln!("routed {} tickets", decisions.len());
        }
        Command::Sweep { data, bundle: path, grid, out } => {
            let engine = bundle::load(&path)?;
            let corpus = load_corpus(&data)?;
            let grid = if grid.is_empty() { default_grid() } else { grid };
            let points = evaluation::sweep_thresholds(&engine, corpus.tickets(), &grid)?;
            print!("{}", sweep_table(&points));
            println!("coverage violations: {}", coverage_violations(&points));
            if let Some(out) = out {
                let lines: Vec<String> = points.iter().map(serde_json::to_string).collect::<Result<_, _>>()?;
                fs::write(&out, lines.join("\n") + "\n").with_context(|| format!("writing {}", out.display()))?;
            }
        }
        Command::CrossValidate { config, data, folds, report } => {
            let mut cfg = PipelineConfig::load(&config)?;
            if let Some(seed) = cli.seed {
                cfg.seed = seed;
            }
            let data = data.or_else(|| cfg.data.clone()).context("no training data given")?;
            let corpus = load_corpus(&data)?;
            let cv = evaluation::cross_validate(&corpus, &cfg, folds, cfg.seed)?;
            print!("{}", metrics_table(&cv.folds));
            println!(
                "mean accuracy {} (sd {}) mean coverage {:.4}",
                cv.mean_accuracy.map_or("-".into(), |a| format!("{a:.4}")),
                cv.stdev_accuracy.map_or("-".into(), |s| format!("{s:.4}")),
                cv.mean_coverage
            );
            if let Some(report) = report {
                write_json(&report, &cv)?;
            }
        }
        Command::Serve { bundle: path, rules, port, host } => {
            let state = AppState::new(rules.load()?, rules.options());
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind((host.as_str(), port)).await?;
                eprintln!("listening on {}", listener.local_addr()?);
                let loader = state.clone();
                let load = tokio::task::spawn_blocking(move || bundle::load(&path).map(|e| loader.set_engine(e)));
                let serving = tokio::spawn(server::serve(listener, state));
                load.await??;
                eprintln!("bundle loaded");
                serving.await??;
                anyhow::Ok(())
            })?;
        }
        Command::GenData { out, n } => {
            let cfg = SyntheticConfig { n_tickets: n, seed: cli.seed.unwrap_or(0), ..Default::default() };
            write_tickets(&synthetic::generate(&cfg), &out)?;
            eprintln!("wrote {n} tickets to {}", out.display());
        }
        Command::Split { data, train_out, test_out, test_fraction } => {
            let corpus = load_corpus(&data)?;
            let (train, test) = evaluation::split_holdout(&corpus, test_fraction, cli.seed.unwrap_or(0))?;
            write_tickets(train.tickets(), &train_out)?;
            write_tickets(test.tickets(), &test_out)?;
            eprintln!("{} train / {} test tickets", train.len(), test.len());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
