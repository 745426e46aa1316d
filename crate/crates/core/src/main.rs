use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use deformable_cbf::bridge::{serve, BridgeSession, ServeOptions};
use deformable_cbf::scenario::{compute_metrics, load_scenario, run, write_outputs, RunOptions, ScenarioError};

#[derive(Parser)]
#[command(version, about = "Deformable-object co-manipulation with barrier-function safety filters")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario headless, or serve it live over WebSocket.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// Seconds of simulated time.
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        substeps: Option<usize>,
        /// Control ticks per second.
        #[arg(long)]
        hz: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Apply nominal commands unfiltered.
        #[arg(long)]
        no_qp: bool,
        #[arg(long)]
        serve: bool,
        #[arg(long, default_value_t = 8765, requires = "serve")]
        port: u16,
    },
}

const EXIT_INVALID: u8 = 2;
const EXIT_DIVERGED: u8 = 3;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let Command::Run { scenario, duration, out, substeps, hz, seed, no_qp, serve: live, port } = Cli::parse().command;

    let mut config = match load_scenario(&scenario) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_INVALID);
        }
    };
    if let Some(d) = duration {
        config.run.duration = d;
    }
    if let Some(n) = substeps {
        config.sim.num_substeps = n;
    }
    if let Some(r) = hz {
        config.run.tick_rate = r;
        config.sim.dt = None;
    }
    if let Some(s) = seed {
        config.run.seed = s;
    }
    if let Err(e) = config.validate() {
        eprintln!("error: {e}");
        return ExitCode::from(EXIT_INVALID);
    }
    let options = RunOptions { bypass_qp: no_qp };

    if live {
        let mut bridge = match BridgeSession::new(config, options) {
            Ok(b) => b,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(EXIT_INVALID);
            }
        };
        bridge.scenario_dir = scenario.parent().map(PathBuf::from);
        let mut server = match serve(bridge, ServeOptions { port, ..ServeOptions::default() }) {
            Ok(s) => s,
            Err(e) => {
                eprintln!("error: {e}");
                return ExitCode::from(EXIT_INVALID);
            }
        };
        println!("serving on ws://{}", server.addr);
        return match server.join() {
            Ok(()) => ExitCode::SUCCESS,
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(EXIT_DIVERGED)
            }
        };
    }

    match run(&config, &options) {
        Ok(output) => {
            if let Err(e) = write_outputs(&out, &config, &output.logs, Some(&output.metrics)) {
                eprintln!("error: {e}");
                return ExitCode::from(EXIT_INVALID);
            }
            let m = &output.metrics;
            println!(
                "{}: {} ticks, min_h_coll {}, max pair distance {}, rms error {:.4e}, mean solve {:.3e} s",
                config.name,
                m.ticks,
                m.min_h_coll.map_or("n/a".into(), |h| format!("{h:.4}")),
                m.max_pair_distance.map_or("n/a".into(), |d| format!("{d:.4}")),
                m.rms_tracking_error,
                m.mean_solve_time,
            );
            ExitCode::SUCCESS
        }
        Err(ScenarioError::Diverged { tick, source, partial }) => {
            eprintln!("error: diverged at tick {tick}: {source}");
            let metrics = compute_metrics(&partial).ok();
            if let Err(e) = write_outputs(&out, &config, &partial, metrics.as_ref()) {
                eprintln!("error: {e}");
            }
            ExitCode::from(EXIT_DIVERGED)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_INVALID)
        }
    }
}
