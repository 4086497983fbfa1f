//! Command-line front end: compile graphs to nets, validate, simulate,
//! render, and run quarry scenarios. One command per invocation; outputs go
//! exactly where the flags say (relative output paths can be redirected
//! with the `QCN_OUT_DIR` environment variable).
//!
//! Exit codes: 0 success, 1 validation or runtime failure, 2 usage error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use qcn::circulation::{run, RunParams};
use qcn::io::{
    export_trace, format_metrics, import_trace, parse_graph, parse_net, parse_quarry_config,
    parse_state, render_frames, serialize_net, FrameFormat, IoError,
};
use qcn::quarry::{build_quarry, compute_metrics, simulate};
use qcn::state::{Mode, SimState};

#[derive(Parser)]
#[command(
    name = "qcn",
    version,
    about = "Quasi cellular net simulator: discrete and continuous flows on circle-packed structures"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Discrete,
    Continuous,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Ascii,
    Pgm,
}

#[derive(Subcommand)]
enum Command {
    /// Compile a basic-graph file into a net file.
    Build {
        /// Graph document (vertices, edges, branch rules).
        #[arg(long)]
        graph: PathBuf,
        /// Cell radius R.
        #[arg(long)]
        radius: f64,
        /// Net file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Validate a net file and print the structural report.
    Validate {
        #[arg(long)]
        net: PathBuf,
    },
    /// Run a simulation and write the trace.
    Simulate {
        #[arg(long)]
        net: PathBuf,
        /// Steps to run.
        #[arg(long)]
        steps: u64,
        /// Simulation time step theta.
        #[arg(long, default_value_t = 1.0)]
        theta: f64,
        #[arg(long, value_enum, default_value = "discrete")]
        mode: ModeArg,
        /// Continuous transfer quantum (continuous mode only).
        #[arg(long, default_value_t = 1.0)]
        delta: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Snapshot capture stride.
        #[arg(long, default_value_t = 1)]
        stride: u64,
        /// Initial-state document (tokens / levels); empty state if omitted.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Trace file to write.
        #[arg(long)]
        trace: PathBuf,
    },
    /// Render one frame per trace snapshot.
    Render {
        #[arg(long)]
        net: PathBuf,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, value_enum, default_value = "ascii")]
        format: FormatArg,
        /// Pixels per cell diameter (pgm).
        #[arg(long, default_value_t = 16)]
        scale: u32,
        /// Directory receiving frame files.
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Run a quarry scenario: trace plus metrics.
    Quarry {
        /// Quarry config document.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        steps: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1)]
        stride: u64,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long)]
        metrics: PathBuf,
    },
    /// Recompute metrics from an existing trace.
    Metrics {
        #[arg(long)]
        trace: PathBuf,
        /// The quarry config the trace was produced from.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(message) => {
            eprintln!("error: {message}");
            ExitCode::from(1)
        }
    }
}

/// Resolve an output path: relative paths land under `QCN_OUT_DIR` when the
/// variable is set.
fn out_path(path: &Path) -> PathBuf {
    if path.is_relative() {
        if let Ok(base) = std::env::var("QCN_OUT_DIR") {
            if !base.is_empty() {
                return PathBuf::from(base).join(path);
            }
        }
    }
    path.to_path_buf()
}

fn read(path: &Path) -> Result<String, String> {
    fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))
}

fn write(path: &Path, contents: &str) -> Result<(), String> {
    let path = out_path(path);
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| format!("{}: {e}", parent.display()))?;
        }
    }
    fs::write(&path, contents).map_err(|e| format!("{}: {e}", path.display()))
}

fn stringify(error: IoError) -> String {
    error.to_string()
}

fn dispatch(command: Command) -> Result<ExitCode, String> {
    match command {
        Command::Build { graph, radius, out } => {
            let (graph, rules) = parse_graph::<f64>(&read(&graph)?).map_err(stringify)?;
            let net = qcn::synthesis::build_from_graph(&graph, radius, &rules)
                .map_err(|e| e.to_string())?;
            let report = net.validate();
            if !report.is_clean() {
                eprint!("{report}");
            }
            write(&out, &serialize_net(&net))?;
            println!("built net with {} cells", net.len());
            Ok(ExitCode::SUCCESS)
        }

        Command::Validate { net } => match parse_net::<f64>(&read(&net)?) {
            Ok(net) => {
                print!("{}", net.validate());
                Ok(ExitCode::SUCCESS)
            }
            Err(IoError::ValidationFailed(report)) => {
                print!("{report}");
                Ok(ExitCode::from(1))
            }
            Err(other) => Err(other.to_string()),
        },

        Command::Simulate {
            net,
            steps,
            theta,
            mode,
            delta,
            seed,
            stride,
            init,
            trace,
        } => {
            let net = parse_net::<f64>(&read(&net)?).map_err(stringify)?;
            let mode = match mode {
                ModeArg::Discrete => Mode::Discrete,
                ModeArg::Continuous => Mode::Continuous,
            };
            let (state, warnings) = match init {
                Some(path) => parse_state(&read(&path)?, &net, theta, mode).map_err(stringify)?,
                None => SimState::init(&net, theta, mode),
            };
            for warning in warnings {
                eprintln!("warning: {warning}");
            }
            let params = RunParams {
                mode,
                steps,
                seed,
                snapshot_stride: stride,
                delta,
                conflict_policy: Default::default(),
            };
            let result =
                run(&net, state, theta, &params, &[], &mut ()).map_err(|e| e.to_string())?;
            write(&trace, &export_trace(&result, &net, 1))?;
            println!(
                "simulated {steps} steps: {} events, {} snapshots",
                result.events.len(),
                result.snapshots.len()
            );
            Ok(ExitCode::SUCCESS)
        }

        Command::Render {
            net,
            trace,
            format,
            scale,
            out_dir,
        } => {
            let net = parse_net::<f64>(&read(&net)?).map_err(stringify)?;
            let trace = import_trace::<f64>(&read(&trace)?, &net).map_err(stringify)?;
            let format = match format {
                FormatArg::Ascii => FrameFormat::Ascii,
                FormatArg::Pgm => FrameFormat::Pgm,
            };
            let frames = render_frames(&net, &trace, format, scale).map_err(stringify)?;
            let count = frames.len();
            for (name, content) in frames {
                write(&out_dir.join(name), &content)?;
            }
            println!("rendered {count} frames");
            Ok(ExitCode::SUCCESS)
        }

        Command::Quarry {
            config,
            steps,
            seed,
            stride,
            trace,
            metrics,
        } => {
            let config = parse_quarry_config::<f64>(&read(&config)?).map_err(stringify)?;
            let (result, warnings) =
                simulate(&config, steps, seed, stride).map_err(|e| e.to_string())?;
            for warning in warnings {
                eprintln!("warning: {warning}");
            }
            let (net, _, _) = build_quarry(&config).map_err(|e| e.to_string())?;
            write(&trace, &export_trace(&result, &net, 1))?;
            let computed = compute_metrics(&result, &config).map_err(|e| e.to_string())?;
            write(&metrics, &format_metrics(&computed))?;
            println!(
                "quarry run: {} loads, {} deliveries over {steps} steps",
                computed.loads_completed, computed.deliveries
            );
            Ok(ExitCode::SUCCESS)
        }

        Command::Metrics { trace, config, out } => {
            let config = parse_quarry_config::<f64>(&read(&config)?).map_err(stringify)?;
            let (net, _, _) = build_quarry(&config).map_err(|e| e.to_string())?;
            let trace = import_trace::<f64>(&read(&trace)?, &net).map_err(stringify)?;
            let computed = compute_metrics(&trace, &config).map_err(|e| e.to_string())?;
            write(&out, &format_metrics(&computed))?;
            println!("metrics written");
            Ok(ExitCode::SUCCESS)
        }
    }
}
