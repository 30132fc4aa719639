//! Command-line surface.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use smartfridge_backend::{BackendConfig, DEFAULT_TOKEN_TTL};
use smartfridge_broker::{BrokerConfig, DEFAULT_QUEUE_CAPACITY};
use smartfridge_sim::DeviceSummary;
use tracing::info;

use crate::experiment::{export_run, write_experiment, ExportFormat};
use crate::stack::{join_fleet, load_device_model, spawn_fleet, FleetConfig, Stack, StackConfig};

#[derive(Debug, Parser)]
#[command(name = "smartfridge", version, about = "Smart fridge broker, backend, device simulator and calibration experiments")]
#[command(subcommand_required = true, arg_required_else_help = true)]
pub struct Cli {
    /// Log filter, e.g. `info` or `smartfridge_broker=debug`. RUST_LOG wins when set.
    #[arg(long, global = true, default_value = "info")]
    pub log_level: String,
    /// Seed for every stochastic component.
    #[arg(long, global = true, default_value_t = 7)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the pub-sub broker.
    Broker(BrokerArgs),
    /// Run the ingestion backend and HTTP API.
    Backend(BackendArgs),
    /// Run simulated devices against a broker, or the whole stack with --all-in-one.
    Simulate(SimulateArgs),
    /// Train BCE, focal and AdaFocal models and write calibration reports.
    Experiment(ExperimentArgs),
    /// Convert a run's reliability tables to CSV, TSV or JSON.
    Export(ExportArgs),
}

#[derive(Debug, Args)]
pub struct BrokerArgs {
    #[arg(long, default_value = "0.0.0.0:1884")]
    pub listen: SocketAddr,
    /// Frames buffered per subscriber before the oldest is dropped.
    #[arg(long, default_value_t = DEFAULT_QUEUE_CAPACITY)]
    pub queue_capacity: usize,
    /// Seconds of silence before a session is closed; 0 disables.
    #[arg(long, default_value_t = 60)]
    pub keepalive: u64,
}

impl BrokerArgs {
    fn config(&self) -> BrokerConfig {
        broker_config(self.queue_capacity, self.keepalive)
    }
}

fn broker_config(queue_capacity: usize, keepalive: u64) -> BrokerConfig {
    BrokerConfig {
        queue_capacity,
        keepalive: (keepalive > 0).then(|| Duration::from_secs(keepalive)),
    }
}

#[derive(Debug, Args)]
pub struct BackendArgs {
    #[arg(long, default_value = "0.0.0.0:8080")]
    pub listen: SocketAddr,
    #[arg(long, default_value = "data")]
    pub data_dir: PathBuf,
    #[arg(long, default_value = "127.0.0.1:1884")]
    pub broker: SocketAddr,
    #[arg(long, default_value = "recipes.json")]
    pub recipes: PathBuf,
    /// Experiment output directory served at /api/calibration/report.
    #[arg(long)]
    pub reports_dir: Option<PathBuf>,
    /// Session token lifetime in seconds.
    #[arg(long, default_value_t = DEFAULT_TOKEN_TTL.as_secs())]
    pub token_ttl: u64,
    /// fdatasync after every stored record.
    #[arg(long)]
    pub sync_writes: bool,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Broker to connect to (ignored with --all-in-one).
    #[arg(long, default_value = "127.0.0.1:1884")]
    pub broker: SocketAddr,
    #[arg(long, default_value_t = 1)]
    pub devices: usize,
    /// Device ids are this prefix followed by 1, 2, ...
    #[arg(long, default_value = "fridge")]
    pub device_prefix: String,
    /// Reporting periods per device; runs until interrupted when omitted.
    #[arg(long)]
    pub minutes: Option<u64>,
    /// Simulated seconds between reports.
    #[arg(long, default_value_t = 60.0)]
    pub cadence: f64,
    /// Simulated time per wall-clock time; `inf` runs as fast as possible.
    #[arg(long, default_value_t = 1.0)]
    pub acceleration: f64,
    /// Model document from `experiment`; a focal model is trained when omitted.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Temperature fit applied to device confidences.
    #[arg(long)]
    pub temperature: Option<PathBuf>,

    /// Run broker, backend and devices in this process.
    #[arg(long)]
    pub all_in_one: bool,
    #[arg(long, default_value = "127.0.0.1:1884")]
    pub broker_listen: SocketAddr,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub http_listen: SocketAddr,
    #[arg(long, default_value = "data")]
    pub data_dir: PathBuf,
    #[arg(long, default_value = "recipes.json")]
    pub recipes: PathBuf,
    #[arg(long)]
    pub reports_dir: Option<PathBuf>,
    #[arg(long)]
    pub sync_writes: bool,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    #[arg(long, default_value_t = smartfridge_core::trainer::DEFAULT_EPOCHS)]
    pub epochs: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    /// Directory written by `experiment`.
    #[arg(long)]
    pub run: PathBuf,
    #[arg(long, value_enum, default_value_t = ExportFormat::Csv)]
    pub format: ExportFormat,
    /// Defaults to `<run>/export`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn runtime() -> Result<tokio::runtime::Runtime> {
    tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .context("starting async runtime")
}

async fn until_ctrl_c() -> Result<()> {
    tokio::signal::ctrl_c().await.context("waiting for Ctrl-C")?;
    info!("interrupted, shutting down");
    Ok(())
}

fn print_summaries(summaries: &[DeviceSummary]) {
    for s in summaries {
        println!(
            "device {} minutes={} settings_applied={} settings_rejected={}",
            s.device_id, s.minutes, s.settings_applied, s.settings_rejected
        );
    }
}

pub fn dispatch(cli: Cli) -> Result<()> {
    let seed = cli.seed;
    match cli.command {
        Command::Broker(a) => runtime()?.block_on(async {
            let handle = smartfridge_broker::spawn(a.listen, a.config())
                .await
                .with_context(|| format!("binding {}", a.listen))?;
            println!("broker listening on {}", handle.local_addr());
            until_ctrl_c().await?;
            handle.shutdown().await;
            Ok(())
        }),
        Command::Backend(a) => runtime()?.block_on(async {
            let mut cfg = BackendConfig::new(&a.data_dir, a.broker, &a.recipes);
            cfg.listen = a.listen;
            cfg.reports_dir = a.reports_dir;
            cfg.token_ttl = Duration::from_secs(a.token_ttl);
            cfg.sync_writes = a.sync_writes;
            let handle = smartfridge_backend::start(cfg).await?;
            println!("backend listening on http://{}", handle.http_addr());
            until_ctrl_c().await?;
            handle.shutdown().await;
            Ok(())
        }),
        Command::Simulate(a) => simulate(a, seed),
        Command::Experiment(a) => {
            let summary = write_experiment(seed, a.epochs, &a.out)?;
            for (name, m) in &summary.models {
                println!(
                    "{name:<9} accuracy={:.4} confidence={:.4} gap={:+.4} ece={:.4}",
                    m.accuracy, m.mean_confidence, m.confidence_gap, m.ece
                );
            }
            let t = &summary.temperature;
            println!(
                "focal temperature={:.4} ece {:.4} -> {:.4} ({:.1}% lower)",
                t.values[0],
                t.test_ece_before,
                t.test_ece_after,
                100.0 * t.test_ece_reduction
            );
            println!("verdict holds={}", summary.verdict.holds);
            Ok(())
        }
        Command::Export(a) => {
            let out = a.out.unwrap_or_else(|| a.run.join("export"));
            for path in export_run(&a.run, a.format, &out)? {
                println!("{}", path.display());
            }
            Ok(())
        }
    }
}

fn simulate(a: SimulateArgs, seed: u64) -> Result<()> {
    if a.devices == 0 {
        bail!("--devices must be at least 1");
    }
    if !(a.cadence.is_finite() && a.cadence > 0.0) {
        bail!("--cadence must be a positive number of seconds");
    }
    if a.acceleration.is_nan() || a.acceleration <= 0.0 {
        bail!("--acceleration must be positive");
    }
    let model = load_device_model(a.model.as_deref(), a.temperature.as_deref(), seed)?;
    let fleet = FleetConfig {
        devices: a.devices,
        device_prefix: a.device_prefix.clone(),
        seed,
        minutes: a.minutes,
        cadence_secs: a.cadence,
        acceleration: a.acceleration,
    };
    runtime()?.block_on(async move {
        if a.all_in_one {
            let cfg = StackConfig {
                broker_listen: a.broker_listen,
                broker: BrokerConfig::default(),
                http_listen: a.http_listen,
                data_dir: a.data_dir,
                recipes: a.recipes,
                reports_dir: a.reports_dir,
                sync_writes: a.sync_writes,
                fleet,
            };
            let mut stack = Stack::start(cfg, model).await?;
            println!("ready broker={} http={}", stack.broker_addr(), stack.http_addr());
            if a.minutes.is_some() {
                let summaries = tokio::select! {
                    s = stack.wait_devices() => s?,
                    r = until_ctrl_c() => { r?; Vec::new() }
                };
                print_summaries(&summaries);
            } else {
                until_ctrl_c().await?;
            }
            stack.shutdown().await;
        } else {
            let set = spawn_fleet(a.broker, &fleet, std::sync::Arc::new(model));
            let summaries = tokio::select! {
                s = join_fleet(set) => s?,
                r = until_ctrl_c() => { r?; Vec::new() }
            };
            print_summaries(&summaries);
        }
        Ok(())
    })
}
