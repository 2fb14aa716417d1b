use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use anyhow::{bail, Context, Result};
use carecall_core::campaign::render_table;
use carecall_core::config::Config;
use carecall_core::nlu::{parse_examples_jsonl, parse_examples_toml, ExampleSource, Lexicon};
use carecall_core::spread::{self, oracle_posterior};
use carecall_core::Timestamp;
use carecall_service::service::{wall_clock, LabelInput, LabelRequest, Service, SpreadRequest};
use carecall_service::simulate::{self, SimulationPlan};
use carecall_service::{router, AppState};
use chrono::NaiveDate;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "carecall",
    version,
    about = "Symptom-check call campaigns, triage and spread estimation"
)]
struct Cli {
    /// Store directory holding one sub-directory per campaign.
    #[arg(long, global = true, default_value = "carecall-data")]
    store: PathBuf,

    /// TOML configuration file; defaults apply to anything it leaves out.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a full simulated campaign and write its event log and report.
    Simulate {
        #[arg(long, default_value_t = 400)]
        subjects: usize,
        #[arg(long, default_value_t = 14)]
        days: u32,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        /// Print the report as JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Turn-level error report for the latest campaign.
    Report {
        #[arg(long)]
        from: Option<NaiveDate>,
        #[arg(long)]
        to: Option<NaiveDate>,
        #[arg(long)]
        json: bool,
    },
    /// Active-learning batches and operator labels.
    #[command(subcommand)]
    Hitl(HitlCommand),
    /// Infection-rate posterior from symptom observations.
    #[command(subcommand)]
    Spread(SpreadCommand),
    /// Remove transcripts and escalations older than the retention period.
    Purge {
        #[arg(long)]
        now: Option<Timestamp>,
    },
    /// Serve the HTTP API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
        /// Require `Authorization: Bearer <token>` on every request.
        #[arg(long)]
        token: Option<String>,
    },
    /// Lexicon maintenance.
    #[command(subcommand)]
    Lexicon(LexiconCommand),
}

#[derive(Subcommand)]
enum HitlCommand {
    /// Print the k most uncertain unlabelled utterances as JSON lines.
    Batch {
        #[arg(long, default_value_t = 50)]
        k: usize,
    },
    /// Retrain on a JSON-lines file of `{"text", "label"}` rows.
    Label {
        #[arg(long)]
        file: PathBuf,
        #[arg(long)]
        now: Option<Timestamp>,
    },
}

#[derive(Subcommand)]
enum SpreadCommand {
    Estimate(EstimateArgs),
}

#[derive(Args)]
struct EstimateArgs {
    /// JSON-lines observations `{id, features: {name: 0|1}, confirmed}`.
    #[arg(long)]
    obs: PathBuf,
    #[arg(long)]
    grid: Option<usize>,
    /// Print the full posterior (grid arrays included) as JSON.
    #[arg(long)]
    json: bool,
    /// Also run the enumeration and fine-grid reference computations.
    #[arg(long)]
    oracle: bool,
}

#[derive(Subcommand)]
enum LexiconCommand {
    /// Build a lexicon from labelled examples (TOML `[[example]]` rows or
    /// JSON lines).
    Build {
        #[arg(long)]
        examples: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        smoothing: f64,
    },
}

fn load_config(path: Option<&Path>) -> Result<Config> {
    match path {
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            Config::from_toml(&text).with_context(|| format!("loading {}", p.display()))
        }
        None => Ok(Config::default()),
    }
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let config = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Simulate {
            subjects,
            days,
            seed,
            json,
        } => {
            let mut service = Service::open(&cli.store, config.clone())?;
            let id = service.next_campaign_id();
            let plan = SimulationPlan::new(subjects, days, seed, config);
            let outcome = simulate::run(&plan, &id)?;
            service.insert_campaign(outcome.campaign)?;
            let dir = service.campaign_dir(&id).expect("opened on a store");
            let report = outcome.report;
            fs::write(dir.join("report.json"), serde_json::to_string_pretty(&report)? + "\n")?;
            fs::write(dir.join("report.txt"), report.render())?;
            if json {
                print_json(&report)?;
            } else {
                print!("{}", report.render());
                eprintln!("campaign {id} written to {}", dir.display());
            }
        }
        Command::Report { from, to, json } => {
            let service = Service::open(&cli.store, config)?;
            let report = service.metrics(from, to)?;
            if json {
                print_json(&report)?;
            } else {
                print!("{}", render_table(std::slice::from_ref(&report)));
            }
        }
        Command::Hitl(HitlCommand::Batch { k }) => {
            let service = Service::open(&cli.store, config)?;
            for item in service.hitl_batch(k)? {
                println!("{}", serde_json::to_string(&item)?);
            }
        }
        Command::Hitl(HitlCommand::Label { file, now }) => {
            let mut service = Service::open(&cli.store, config)?;
            let text = fs::read_to_string(&file).with_context(|| format!("reading {}", file.display()))?;
            let labels = parse_examples_jsonl(&text, ExampleSource::Operator)?
                .into_iter()
                .map(|e| LabelInput {
                    text: e.text,
                    label: e.label,
                })
                .collect();
            let outcome = service.apply_labels(LabelRequest {
                labels,
                now: Some(now.unwrap_or_else(wall_clock)),
            })?;
            println!(
                "applied {} labels; lexicon version {}",
                outcome.applied, outcome.lexicon_version
            );
        }
        Command::Spread(SpreadCommand::Estimate(args)) => estimate(&config, &args)?,
        Command::Purge { now } => {
            let mut service = Service::open(&cli.store, config)?;
            let outcome = service.purge(now.unwrap_or_else(wall_clock))?;
            println!("purge_count {} (horizon {})", outcome.purge_count, outcome.horizon);
        }
        Command::Serve { addr, token } => serve(&cli.store, config, addr, token)?,
        Command::Lexicon(LexiconCommand::Build {
            examples,
            out,
            smoothing,
        }) => {
            let text = fs::read_to_string(&examples).with_context(|| format!("reading {}", examples.display()))?;
            let rows = if examples.extension().is_some_and(|e| e == "toml") {
                parse_examples_toml(&text, ExampleSource::Seed)?
            } else {
                parse_examples_jsonl(&text, ExampleSource::Seed)?
            };
            let lexicon = Lexicon::empty(smoothing).train_update(&rows)?;
            fs::write(&out, lexicon.to_json() + "\n")?;
            println!(
                "{} examples, {} tokens -> {}",
                rows.len(),
                lexicon.vocabulary().len(),
                out.display()
            );
        }
    }
    Ok(())
}

fn estimate(config: &Config, args: &EstimateArgs) -> Result<()> {
    let text = fs::read_to_string(&args.obs).with_context(|| format!("reading {}", args.obs.display()))?;
    let mut observations = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value =
            serde_json::from_str(line).with_context(|| format!("{} line {}", args.obs.display(), i + 1))?;
        observations.push(value);
    }
    let service = Service::in_memory(config.clone());
    let result = service.spread_estimate(SpreadRequest {
        observations: observations.clone(),
        grid: args.grid,
        ..Default::default()
    })?;
    if args.json {
        print_json(&result)?;
    } else {
        println!("p_T1 = {:?}", result.p_t1);
        println!("q_mean = {:.6}", result.q_mean);
        println!("q_mean | outbreak = {:.6}", result.q_mean_outbreak);
        println!("q 95% interval = [{:.6}, {:.6}]", result.q_ci[0], result.q_ci[1]);
        for z in &result.z_post {
            println!("z[{}] = {:.6}", z.id, z.p_infected);
        }
    }
    if args.oracle {
        let fm = config.spread.feature_model();
        let parsed = spread::observations_from_json(&observations, &fm)?;
        let report = oracle_posterior(&config.spread.prior, &fm, &parsed, config.spread.grid)?;
        if let Some(e) = &report.enumeration {
            println!("enumeration: p_T1 = {:?} q_mean = {:.6}", e.p_t1, e.q_mean);
        }
        println!(
            "fine grid:   p_T1 = {:?} q_mean = {:.6}",
            report.fine_grid.p_t1, report.fine_grid.q_mean
        );
    }
    Ok(())
}

fn serve(store: &Path, config: Config, addr: SocketAddr, token: Option<String>) -> Result<()> {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "info".into()))
        .init();
    let service = Service::open(store, config)?;
    if token.as_deref().is_some_and(str::is_empty) {
        bail!("--token must not be empty");
    }
    let state = AppState {
        service: Arc::new(RwLock::new(service)),
        token,
    };
    let runtime = tokio::runtime::Runtime::new()?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr).await?;
        tracing::info!("listening on {}", listener.local_addr()?);
        axum::serve(listener, router(state))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await?;
        Ok(())
    })
}
