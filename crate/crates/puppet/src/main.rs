use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use puppet::model_file::load_model;
use puppet::net::{self, ServeConfig};
use puppet::record::{replay, DemoRecord, ReplayError};
use puppet::scenario::FollowerParams;
use puppet::{load_scenario, run_scenario, RunError};
use puppet_core::RobotModel;

const EXIT_VALIDATION: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_MISMATCH: u8 = 3;

#[derive(Parser)]
#[command(name = "puppet", version, about = "Simulated leader-follower teleoperation")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario on the lockstep virtual clock.
    Run {
        scenario: PathBuf,
        /// Write the demonstration record (JSON lines).
        #[arg(long)]
        record: Option<PathBuf>,
        /// Write run metrics (JSON).
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Write the gate event log (JSON lines).
        #[arg(long)]
        events: Option<PathBuf>,
    },
    /// Recompute the follower from a record and check it bit for bit.
    Replay { record: PathBuf },
    /// Interactive mode: leader loop plus the console gateway.
    Serve {
        #[arg(long, default_value = "builtin:panda")]
        model: PathBuf,
        #[arg(long, env = "PUPPET_HOST", default_value = "127.0.0.1")]
        host: String,
        /// Leader↔follower port.
        #[arg(long, env = "PUPPET_PORT", default_value_t = puppet::wire::DEFAULT_PORT)]
        port: u16,
        /// Console gateway (WebSocket) port.
        #[arg(long, env = "PUPPET_UI_PORT", default_value_t = puppet::wire::DEFAULT_UI_PORT)]
        ui_port: u16,
        /// Connect to a follower started with `puppet follower` instead of
        /// running one in-process.
        #[arg(long)]
        external_follower: bool,
    },
    /// Run only the follower, listening for a leader.
    Follower {
        #[arg(long, default_value = "builtin:panda")]
        model: PathBuf,
        #[arg(long, env = "PUPPET_HOST", default_value = "127.0.0.1")]
        host: String,
        #[arg(long, env = "PUPPET_PORT", default_value_t = puppet::wire::DEFAULT_PORT)]
        port: u16,
    },
    /// Validate a robot model file.
    Validate { model: PathBuf },
}

fn fail(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {msg}");
    ExitCode::from(code)
}

fn write(path: &Path, contents: &str) -> Result<(), ExitCode> {
    std::fs::write(path, contents).map_err(|e| fail(EXIT_RUNTIME, format!("{}: {e}", path.display())))
}

fn home_for(model: &RobotModel) -> puppet_core::JointConfig {
    if model.dof() == 7 {
        RobotModel::panda_home()
    } else {
        puppet_core::JointConfig::zeros(model.dof())
    }
}

fn run(cmd: Cmd) -> Result<(), ExitCode> {
    match cmd {
        Cmd::Run {
            scenario,
            record,
            metrics,
            events,
        } => {
            let (s, model) = load_scenario(&scenario)
                .map_err(|e| fail(EXIT_VALIDATION, format!("{}: {e}", scenario.display())))?;
            let out = run_scenario(&s, &model).map_err(|e| match e {
                RunError::Setup(_) => fail(EXIT_RUNTIME, e),
                _ => fail(EXIT_VALIDATION, e),
            })?;
            if let Some(p) = record {
                write(&p, &out.record.to_jsonl())?;
            }
            let m = serde_json::to_string_pretty(&out.metrics).expect("metrics serialise");
            match metrics {
                Some(p) => write(&p, &(m + "\n"))?,
                None => println!("{m}"),
            }
            if let Some(p) = events {
                let log: String = out
                    .events
                    .iter()
                    .map(|e| serde_json::to_string(e).expect("event serialises") + "\n")
                    .collect();
                write(&p, &log)?;
            }
            if let Some(f) = out.follower_fault {
                return Err(fail(EXIT_RUNTIME, format!("follower fault: {f}")));
            }
            Ok(())
        }
        Cmd::Replay { record } => {
            let src = std::fs::read_to_string(&record)
                .map_err(|e| fail(EXIT_VALIDATION, format!("{}: {e}", record.display())))?;
            let demo = DemoRecord::from_jsonl(&src)
                .map_err(|e| fail(EXIT_VALIDATION, format!("{}: {e}", record.display())))?;
            match replay(&demo) {
                Ok(()) => {
                    let m = puppet::metrics::compute(&demo);
                    println!("{}", serde_json::to_string_pretty(&m).expect("metrics serialise"));
                    eprintln!("replay ok: {} rows bit-identical", demo.rows.len());
                    Ok(())
                }
                Err(e @ ReplayError::Header(_)) => Err(fail(EXIT_VALIDATION, e)),
                Err(e @ ReplayError::Mismatch(_)) => Err(fail(EXIT_MISMATCH, e)),
            }
        }
        Cmd::Serve {
            model,
            host,
            port,
            ui_port,
            external_follower,
        } => {
            let model = load_model(&model).map_err(|e| fail(EXIT_VALIDATION, format!("{}: {e}", model.display())))?;
            let follower = FollowerParams::default();
            if !external_follower && follower.kp.len() != model.dof() {
                return Err(fail(EXIT_VALIDATION, "default follower gains need a 7-joint model"));
            }
            let h = net::serve(ServeConfig {
                initial_q: home_for(&model),
                model,
                host,
                port,
                ui_port,
                spawn_follower: !external_follower,
                follower,
            })
            .map_err(|e| fail(EXIT_RUNTIME, e))?;
            eprintln!("follower on {}, console gateway on ws://{}", h.follower_addr, h.ui_addr);
            h.join();
            Ok(())
        }
        Cmd::Follower { model, host, port } => {
            let model = load_model(&model).map_err(|e| fail(EXIT_VALIDATION, format!("{}: {e}", model.display())))?;
            let params = FollowerParams::default();
            if params.kp.len() != model.dof() {
                return Err(fail(EXIT_VALIDATION, "default follower gains need a 7-joint model"));
            }
            let h = net::start_follower(&model, home_for(&model), &params, &host, port)
                .map_err(|e| fail(EXIT_RUNTIME, e))?;
            eprintln!("follower listening on {}", h.addr);
            h.join();
            Ok(())
        }
        Cmd::Validate { model } => {
            let m = load_model(&model).map_err(|e| fail(EXIT_VALIDATION, format!("{}: {e}", model.display())))?;
            println!("{}: ok ({} joints)", m.name(), m.dof());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse().cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(code) => code,
    }
}
