//! Command-line front end and live gateway for the evaluation toolkit.

pub mod gateway;

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use cobench_core::battery::{BatterySpec, TaskClass};
use cobench_core::metrics::GridAxis;
use cobench_core::motor::DEFAULT_MEYER_N_MAX;
use cobench_core::session::{self, comparison_report, FitModel, ReportOptions, SessionRecord};
use cobench_core::sim::{self, PerformerParams};
use cobench_core::taxonomy::{build_chart, DeviceDescriptor};

/// Environment variable naming the default data directory.
pub const DATA_DIR_ENV: &str = "COBENCH_DATA_DIR";

#[derive(Debug, Parser)]
#[command(
    name = "cobench",
    version,
    about = "Evaluate input devices used as musical controllers"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelArg {
    Fitts,
    Meyer,
    Steering,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a trial plan from a battery spec (TOML).
    Plan {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a simulated performer through a plan and write the session log.
    Simulate {
        #[arg(long)]
        plan: PathBuf,
        /// Performer parameters (TOML): a, b and optional noise settings.
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Device descriptor (TOML); defaults to a bare descriptor named after the plan's device.
        #[arg(long)]
        device: Option<PathBuf>,
    },
    /// Fit a motor law to the trials of a session log.
    Fit {
        #[arg(long)]
        log: PathBuf,
        #[arg(long, value_enum)]
        model: ModelArg,
        #[arg(long, default_value_t = DEFAULT_MEYER_N_MAX)]
        n_max: u32,
        /// Print JSON instead of text.
        #[arg(long)]
        json: bool,
    },
    /// Compare devices across session logs.
    Report {
        #[arg(long, num_args = 1.., required = true)]
        logs: Vec<PathBuf>,
        /// Output file; a `.json` extension selects the JSON document.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = ModelArg::Fitts)]
        model: ModelArg,
        #[arg(long, default_value_t = DEFAULT_MEYER_N_MAX)]
        n_max: u32,
        /// Explorability grid axis as `lo:hi:bins`; repeat per feature dimension.
        #[arg(long = "grid", value_parser = parse_axis)]
        grid: Vec<GridAxis>,
    },
    /// Draw the controller chart for a set of device descriptors.
    Chart {
        #[arg(long, num_args = 1.., required = true)]
        devices: Vec<PathBuf>,
        /// Output file; a `.svg` extension selects SVG, anything else text.
        #[arg(long)]
        out: PathBuf,
    },
    /// Serve a plan to performer clients over WebSocket.
    Serve {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        port: u16,
        /// Directory for session logs.
        #[arg(long, env = DATA_DIR_ENV)]
        data_dir: Option<PathBuf>,
    },
}

fn parse_axis(s: &str) -> Result<GridAxis, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [lo, hi, bins] = parts.as_slice() else {
        return Err(format!("expected lo:hi:bins, got {s:?}"));
    };
    Ok(GridAxis {
        lo: lo.parse().map_err(|e| format!("bad lower bound: {e}"))?,
        hi: hi.parse().map_err(|e| format!("bad upper bound: {e}"))?,
        bins: bins.parse().map_err(|e| format!("bad bin count: {e}"))?,
    })
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn load_device(path: &Path) -> Result<DeviceDescriptor> {
    DeviceDescriptor::from_toml(&read(path)?).with_context(|| format!("in {}", path.display()))
}

fn load_session(path: &Path) -> Result<SessionRecord> {
    SessionRecord::import_log(&read(path)?).with_context(|| format!("in {}", path.display()))
}

/// Default data directory: the environment variable, else `./cobench-data`.
pub fn data_dir() -> PathBuf {
    std::env::var_os(DATA_DIR_ENV).map_or_else(|| PathBuf::from("cobench-data"), PathBuf::from)
}

fn fit_model(model: ModelArg, n_max: u32) -> FitModel {
    match model {
        ModelArg::Meyer => FitModel::Meyer { n_max },
        ModelArg::Fitts | ModelArg::Steering => FitModel::Fitts,
    }
}

/// Text (or JSON) describing the fits of one session.
pub fn fit_log(session: &SessionRecord, model: ModelArg, n_max: u32, json: bool) -> Result<String> {
    let options = ReportOptions {
        model: fit_model(model, n_max),
        grid: None,
    };
    let report = comparison_report(std::slice::from_ref(session), &options)?;
    let classes: &[TaskClass] = match model {
        ModelArg::Steering => &[TaskClass::Steering],
        _ => &[TaskClass::Acquisition, TaskClass::PitchAcquisition],
    };
    let cells: Vec<_> = report
        .cells
        .iter()
        .filter(|c| classes.contains(&c.class))
        .collect();
    if cells.is_empty() {
        bail!(
            "session {} has no trials for the {:?} model",
            session.id,
            model
        );
    }
    if json {
        let fits: Vec<_> = cells
            .iter()
            .map(|c| {
                serde_json::json!({
                    "device": c.device,
                    "class": c.class,
                    "fit": c.fit,
                    "note": c.fit_note,
                })
            })
            .collect();
        return Ok(serde_json::to_string_pretty(&fits)? + "\n");
    }
    let mut out = String::new();
    for c in cells {
        match &c.fit {
            Some(f) => {
                let n = f.params.n.map(|n| format!(", n = {n}")).unwrap_or_default();
                let ip =
                    f.ip.map_or_else(|| "undefined".to_string(), |ip| format!("{ip:.6} bits/s"));
                out += &format!(
                    "{} [{}]: a = {:.6} s, b = {:.6}{n}, r2 = {:.6}, ip = {ip}, points = {}\n",
                    c.device,
                    c.class.label(),
                    f.params.a,
                    f.params.b,
                    f.r_squared,
                    f.n_points
                );
            }
            None => {
                let note = c.fit_note.as_deref().unwrap_or("no successful trials");
                out += &format!("{} [{}]: no fit ({note})\n", c.device, c.class.label());
            }
        }
    }
    Ok(out)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Plan { spec, out } => {
            let spec = BatterySpec::from_toml(&read(&spec)?)
                .with_context(|| format!("in {}", spec.display()))?;
            let plan = spec.generate()?;
            write(&out, &session::export_plan(&plan))?;
            eprintln!("wrote {} trials to {}", plan.trials.len(), out.display());
        }
        Command::Simulate {
            plan,
            params,
            seed,
            out,
            device,
        } => {
            let plan = session::import_plan(&read(&plan)?)
                .with_context(|| format!("in {}", plan.display()))?;
            let params = PerformerParams::from_toml(&read(&params)?)
                .map_err(anyhow::Error::msg)
                .with_context(|| format!("in {}", params.display()))?;
            let device = device.as_deref().map(load_device).transpose()?;
            let session = sim::simulate_plan(&plan, &params, seed, device)?;
            write(&out, &session.export_log())?;
            eprintln!("wrote session {} to {}", session.id, out.display());
        }
        Command::Fit {
            log,
            model,
            n_max,
            json,
        } => {
            print!("{}", fit_log(&load_session(&log)?, model, n_max, json)?);
        }
        Command::Report {
            logs,
            out,
            model,
            n_max,
            grid,
        } => {
            let sessions = logs
                .iter()
                .map(|p| load_session(p))
                .collect::<Result<Vec<_>>>()?;
            let options = ReportOptions {
                model: fit_model(model, n_max),
                grid: (!grid.is_empty()).then_some(grid),
            };
            let report = comparison_report(&sessions, &options)?;
            let text = if out.extension().is_some_and(|e| e == "json") {
                report.to_json()
            } else {
                report.render_text()
            };
            write(&out, &text)?;
        }
        Command::Chart { devices, out } => {
            let devices = devices
                .iter()
                .map(|p| load_device(p))
                .collect::<Result<Vec<_>>>()?;
            let chart = build_chart(&devices)?;
            let text = if out.extension().is_some_and(|e| e == "svg") {
                chart.render_svg()
            } else {
                chart.render_text()
            };
            write(&out, &text)?;
        }
        Command::Serve {
            plan,
            port,
            data_dir: dir,
        } => {
            let plan = session::import_plan(&read(&plan)?)
                .with_context(|| format!("in {}", plan.display()))?;
            let config = gateway::GatewayConfig {
                plan,
                data_dir: Some(dir.unwrap_or_else(data_dir)),
            };
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(async move {
                let listener = tokio::net::TcpListener::bind(("127.0.0.1", port)).await?;
                eprintln!("listening on ws://{}", listener.local_addr()?);
                gateway::serve(listener, config).await
            })?;
        }
    }
    Ok(())
}
