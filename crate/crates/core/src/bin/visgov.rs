use std::net::TcpListener;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use visgov::scenario::{build_or_load_moas, run_scenario, Pipeline, ScenarioConfig, ScenarioError};
use visgov::teleop::{serve, session_from_config, ServeOptions, TeleopError};

#[derive(Parser)]
#[command(name = "visgov", version, about = "Reference governor for camera visibility constraints")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build (or load from cache) the admissible set and print its metadata.
    BuildMoas(Common),
    /// Run a scenario and write trajectory.csv and summary.json.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
    },
    /// Live teleoperation service (newline-delimited JSON over TCP).
    Serve {
        #[command(flatten)]
        common: Common,
        #[arg(long, env = "VISGOV_ADDR", default_value = "127.0.0.1:7878")]
        addr: String,
        #[arg(long)]
        as_fast_as_possible: bool,
        /// Stop after this many control periods.
        #[arg(long)]
        max_steps: Option<u64>,
        /// Do not start the loop before a client connects; stop when it leaves.
        #[arg(long)]
        single_session: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Preset {
    Circle,
    Waypoints,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Args)]
struct Common {
    /// JSON scenario file; without it the preset is used.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "circle")]
    preset: Preset,
    #[arg(long, default_value = ".visgov-cache")]
    cache_dir: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    /// Override the governor switch from the config.
    #[arg(long, value_enum)]
    rg: Option<Switch>,
}

impl Common {
    fn config(&self) -> Result<ScenarioConfig, ScenarioError> {
        let mut cfg = match &self.config {
            Some(p) => ScenarioConfig::from_file(p)?,
            None => match self.preset {
                Preset::Circle => ScenarioConfig::circle(),
                Preset::Waypoints => ScenarioConfig::waypoints(),
            },
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(rg) = self.rg {
            cfg.rg_on = matches!(rg, Switch::On);
        }
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<(), ScenarioError> {
    match cli.cmd {
        Cmd::BuildMoas(common) => {
            let cfg = common.config()?;
            let pipe = Pipeline::new(&cfg)?;
            let (moas, status) = build_or_load_moas(&cfg, &pipe, &common.cache_dir)?;
            println!(
                "{status:?}: k* = {}, {} rows over {} coordinates, provenance {}",
                moas.k_star,
                moas.nrows(),
                moas.support.len(),
                &moas.provenance[..16]
            );
            println!(
                "reduced FoV {:.2} x {:.2} deg, depth margin {:.4} m",
                pipe.fov.alpha_h_eff.to_degrees(),
                pipe.fov.alpha_v_eff.to_degrees(),
                pipe.fov.eps_z_eff
            );
        }
        Cmd::Run { common, out_dir } => {
            let cfg = common.config()?;
            let pipe = Pipeline::new(&cfg)?;
            let (moas, _) = build_or_load_moas(&cfg, &pipe, &common.cache_dir)?;
            let s = run_scenario(&cfg, &pipe, &moas, &out_dir)?;
            println!(
                "{} steps, max violation {:.4}, lambda mean {:.3}, step {:.3} ms mean / {:.3} ms max",
                s.run.steps, s.run.max_violation, s.run.lambda_mean, s.run.mean_step_ms, s.run.max_step_ms
            );
            if let Some(a) = &s.run.aborted {
                println!("aborted: {a}");
            }
            println!("wrote {}", out_dir.display());
        }
        Cmd::Serve { common, addr, as_fast_as_possible, max_steps, single_session } => {
            let cfg = common.config()?;
            let pipe = Pipeline::new(&cfg)?;
            let (moas, _) = build_or_load_moas(&cfg, &pipe, &common.cache_dir)?;
            let mut session = session_from_config(&cfg, &pipe, &moas)?;
            let listener = TcpListener::bind(&addr)?;
            // Tests parse this line to find the port.
            println!("listening on {}", listener.local_addr()?);
            let opts = ServeOptions {
                as_fast_as_possible,
                max_steps,
                wait_for_client: single_session || as_fast_as_possible,
                stop_on_disconnect: single_session,
                ..ServeOptions::default()
            };
            let stats = serve(listener, &mut session, &opts, Arc::new(AtomicBool::new(false))).map_err(|e| match e {
                TeleopError::Governor(g) => ScenarioError::Governor(g),
                TeleopError::Io(io) => ScenarioError::Io(io),
            })?;
            println!("{}", serde_json::to_string(&stats)?);
        }
    }
    Ok(())
}
