//! `dcl3d`: synthetic data, flow conversion, two-stream training, evaluation,
//! fusion, gradient checks and neuron visualization.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::{ConfigError, Settings};

#[derive(Parser, Debug)]
#[command(name = "dcl3d", version, about = "Two-stream 3D CNN with a discriminative code layer")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct GlobalArgs {
    /// Flat `key = value` file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory [default: out]
    #[arg(long, global = true)]
    out: Option<String>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker thread cap.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// tiny or full [default: tiny]
    #[arg(long, global = true)]
    profile: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic action dataset under <out>/data.
    Synth {
        #[arg(long)]
        videos_per_class: Option<usize>,
        #[arg(long)]
        train_per_class: Option<usize>,
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Convert a dataset to optical-flow videos under <out>/flow.
    Flow {
        #[arg(long)]
        data: Option<String>,
        /// Also dump every flow image as PPM.
        #[arg(long)]
        ppm: Option<bool>,
        #[arg(long)]
        flow_scale: Option<f64>,
        #[arg(long)]
        flow_alpha: Option<f64>,
        #[arg(long)]
        flow_iterations: Option<usize>,
    },
    /// Train one stream.
    Train {
        #[command(flatten)]
        stream: StreamArgs,
        #[command(flatten)]
        train: TrainArgs,
        /// Network spec string; defaults to the profile's.
        #[arg(long)]
        spec: Option<String>,
    },
    /// Evaluate a trained stream on both splits.
    Eval {
        #[command(flatten)]
        stream: StreamArgs,
        #[arg(long)]
        checkpoint: Option<String>,
        #[arg(long)]
        knn_k: Option<usize>,
        #[arg(long)]
        gamma: Option<f64>,
    },
    /// Fuse the IR and flow predictions written by `eval`.
    Fuse {
        /// late1, late2, nn1 or nn2
        #[arg(long)]
        method: Option<String>,
        #[arg(long)]
        ir_predictions: Option<String>,
        #[arg(long)]
        flow_predictions: Option<String>,
        #[arg(long)]
        w_ir: Option<f64>,
        #[arg(long)]
        w_flow: Option<f64>,
        #[arg(long)]
        knn_k: Option<usize>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        hidden: Option<usize>,
        #[command(flatten)]
        train: TrainArgs,
    },
    /// Finite-difference check of every gradient on a small fixture net.
    Gradcheck {
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Synthesize an input that excites one code neuron.
    Viz {
        #[command(flatten)]
        stream: StreamArgs,
        #[arg(long)]
        checkpoint: Option<String>,
        #[arg(long)]
        neuron: Option<usize>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        eta: Option<f64>,
        #[arg(long)]
        decay: Option<f64>,
    },
}

#[derive(Args, Debug)]
struct StreamArgs {
    /// ir or flow
    #[arg(long)]
    stream: Option<String>,
    /// Dataset directory with train/ and test/ splits.
    #[arg(long)]
    data: Option<String>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    wd: Option<f64>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    momentum: Option<f64>,
}

fn overlay_all(cli: &Cli) -> Result<Settings, ConfigError> {
    let mut s = match &cli.global.config {
        Some(path) => Settings::load(path)?,
        None => Settings::default(),
    };
    let g = &cli.global;
    s.overlay("out", g.out.clone())?;
    s.overlay("seed", g.seed)?;
    s.overlay("threads", g.threads)?;
    s.overlay("profile", g.profile.clone())?;
    let stream = |s: &mut Settings, a: &StreamArgs| -> Result<(), ConfigError> {
        s.overlay("stream", a.stream.clone())?;
        s.overlay("data", a.data.clone())
    };
    let train = |s: &mut Settings, a: &TrainArgs| -> Result<(), ConfigError> {
        s.overlay("alpha", a.alpha)?;
        s.overlay("lr", a.lr)?;
        s.overlay("batch", a.batch)?;
        s.overlay("wd", a.wd)?;
        s.overlay("iters", a.iters)?;
        s.overlay("momentum", a.momentum)
    };
    match &cli.command {
        Command::Synth { videos_per_class, train_per_class, noise } => {
            s.overlay("videos_per_class", *videos_per_class)?;
            s.overlay("train_per_class", *train_per_class)?;
            s.overlay("noise", *noise)?;
        }
        Command::Flow { data, ppm, flow_scale, flow_alpha, flow_iterations } => {
            s.overlay("data", data.clone())?;
            s.overlay("ppm", *ppm)?;
            s.overlay("flow_scale", *flow_scale)?;
            s.overlay("flow_alpha", *flow_alpha)?;
            s.overlay("flow_iterations", *flow_iterations)?;
        }
        Command::Train { stream: st, train: tr, spec } => {
            stream(&mut s, st)?;
            train(&mut s, tr)?;
            s.overlay("spec", spec.clone())?;
        }
        Command::Eval { stream: st, checkpoint, knn_k, gamma } => {
            stream(&mut s, st)?;
            s.overlay("checkpoint", checkpoint.clone())?;
            s.overlay("knn_k", *knn_k)?;
            s.overlay("gamma", *gamma)?;
        }
        Command::Fuse { method, ir_predictions, flow_predictions, w_ir, w_flow, knn_k, gamma, hidden, train: tr } => {
            s.overlay("method", method.clone())?;
            s.overlay("ir_predictions", ir_predictions.clone())?;
            s.overlay("flow_predictions", flow_predictions.clone())?;
            s.overlay("w_ir", *w_ir)?;
            s.overlay("w_flow", *w_flow)?;
            s.overlay("knn_k", *knn_k)?;
            s.overlay("gamma", *gamma)?;
            s.overlay("hidden", *hidden)?;
            train(&mut s, tr)?;
        }
        Command::Gradcheck { alpha } => s.overlay("alpha", *alpha)?,
        Command::Viz { stream: st, checkpoint, neuron, steps, eta, decay } => {
            stream(&mut s, st)?;
            s.overlay("checkpoint", checkpoint.clone())?;
            s.overlay("neuron", *neuron)?;
            s.overlay("steps", *steps)?;
            s.overlay("eta", *eta)?;
            s.overlay("decay", *decay)?;
        }
    }
    Ok(s)
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Synth { .. } => "synth",
        Command::Flow { .. } => "flow",
        Command::Train { .. } => "train",
        Command::Eval { .. } => "eval",
        Command::Fuse { .. } => "fuse",
        Command::Gradcheck { .. } => "gradcheck",
        Command::Viz { .. } => "viz",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let settings = match overlay_all(&cli) {
        Ok(s) => s,
        Err(e) => return report(e.into()),
    };
    match commands::run(command_name(&cli.command), settings) {
        Ok(code) => code,
        Err(e) => report(e),
    }
}

fn report(e: commands::Failure) -> ExitCode {
    eprintln!("error: {e}");
    match e {
        commands::Failure::Config(ConfigError::Usage(_)) => ExitCode::from(2),
        _ => ExitCode::from(1),
    }
}
