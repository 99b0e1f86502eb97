//! Command bodies. Each resolves its settings, writes artifacts under the
//! output directory and dumps the effective configuration.

use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use dcl3d::eval::{
    classify_stream, fuse_streams, intra_inter_cosine, metrics, write_code_heatmap, FusionConfig, FusionMethod, Metrics,
    StreamSplits, VideoPrediction,
};
use dcl3d::flow::{flow_images, flow_video, FlowParams};
use dcl3d::image::write_ppm;
use dcl3d::nn::{Init, Network, NetworkSpec};
use dcl3d::pipeline::{clip_sets, prepare_stream, Profile, ProfileConfig, Stream};
use dcl3d::trainer::{fixture, gradcheck, train, write_loss_csv, Checkpoint, GradcheckConfig, TrainConfig};
use dcl3d::video::{generate_synthetic, load_dataset, save_dataset, train_test_split, VideoRecord};
use dcl3d::viz::{visualize_neuron, write_viz, VizConfig};
use rayon::prelude::*;
use serde_json::{json, Value};

use crate::config::{ConfigError, Settings};

#[derive(Debug)]
pub enum Failure {
    Config(ConfigError),
    Core(dcl3d::Error),
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(e) => e.fmt(f),
            Failure::Core(e) => e.fmt(f),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e)
    }
}

impl From<dcl3d::Error> for Failure {
    fn from(e: dcl3d::Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Core(e.into())
    }
}

type Outcome<T = ()> = Result<T, Failure>;

fn invalid(msg: impl Into<String>) -> Failure {
    Failure::Config(ConfigError::Invalid(msg.into()))
}

/// Settings shared by every command.
struct Common {
    out: PathBuf,
    seed: u64,
    profile: ProfileConfig,
}

pub fn run(command: &str, mut s: Settings) -> Outcome<ExitCode> {
    let out = PathBuf::from(s.get("out", "out".to_string())?);
    let seed = s.get("seed", 0u64)?;
    let threads = s.get("threads", 0usize)?;
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| invalid(format!("cannot size thread pool: {e}")))?;
    }
    let profile: Profile = s.get("profile", Profile::Tiny)?;
    let c = Common { out, seed, profile: profile.config() };
    fs::create_dir_all(&c.out)?;
    let code = match command {
        "synth" => synth(&c, &mut s).map(|_| ExitCode::SUCCESS),
        "flow" => flow(&c, &mut s).map(|_| ExitCode::SUCCESS),
        "train" => train_stream(&c, &mut s).map(|_| ExitCode::SUCCESS),
        "eval" => eval(&c, &mut s).map(|_| ExitCode::SUCCESS),
        "fuse" => fuse(&c, &mut s).map(|_| ExitCode::SUCCESS),
        "gradcheck" => grad_check(&c, &mut s),
        "viz" => viz(&c, &mut s).map(|_| ExitCode::SUCCESS),
        other => Err(Failure::Config(ConfigError::Usage(format!("unknown command `{other}`")))),
    }?;
    fs::write(c.out.join(format!("{command}.config")), s.effective())?;
    Ok(code)
}

fn path_setting(s: &mut Settings, key: &str, default: PathBuf) -> Outcome<PathBuf> {
    Ok(PathBuf::from(s.get(key, default.display().to_string())?))
}

fn write_json(path: &Path, value: &Value) -> Outcome {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| invalid(e.to_string()))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn synth(c: &Common, s: &mut Settings) -> Outcome {
    let mut spec = c.profile.synthetic(c.seed);
    spec.videos_per_class = s.get("videos_per_class", spec.videos_per_class)?;
    spec.noise = s.get("noise", spec.noise)?;
    let per_class_train = s.get("train_per_class", c.profile.train_per_class)?;
    let videos = generate_synthetic(&spec)?;
    let (train, test) = train_test_split(&videos, per_class_train, c.seed)?;
    let dir = c.out.join("data");
    save_dataset(&dir.join("train"), &train)?;
    save_dataset(&dir.join("test"), &test)?;
    println!("wrote {} train and {} test videos to {}", train.len(), test.len(), dir.display());
    Ok(())
}

fn flow(c: &Common, s: &mut Settings) -> Outcome {
    let data = path_setting(s, "data", c.out.join("data"))?;
    let defaults = FlowParams::default();
    let params = FlowParams {
        alpha: s.get("flow_alpha", defaults.alpha)?,
        iterations: s.get("flow_iterations", defaults.iterations)?,
        scale: s.get("flow_scale", defaults.scale)?,
    };
    let ppm = s.get("ppm", false)?;
    let dest = c.out.join("flow");
    for split in ["train", "test"] {
        let videos = load_dataset(&data.join(split))?;
        let flows = videos.par_iter().map(|v| flow_video(v, &params)).collect::<dcl3d::Result<Vec<_>>>()?;
        save_dataset(&dest.join(split), &flows)?;
        if ppm {
            for v in &videos {
                let dir = dest.join("ppm").join(split).join(&v.id);
                fs::create_dir_all(&dir)?;
                for (i, img) in flow_images(&v.frames, &params)?.iter().enumerate() {
                    let mut w = BufWriter::new(fs::File::create(dir.join(format!("flow_{i}.ppm")))?);
                    write_ppm(&mut w, img.height, img.width, &img.pixels)?;
                    w.flush()?;
                }
            }
        }
        println!("{split}: {} flow videos", flows.len());
    }
    Ok(())
}

/// Stream name and its dataset, resized to the profile frame size.
fn stream_data(c: &Common, s: &mut Settings) -> Outcome<(Stream, Vec<VideoRecord>, Vec<VideoRecord>)> {
    let stream: Stream = s.get("stream", Stream::Ir)?;
    let default = match stream {
        Stream::Ir => c.out.join("data"),
        Stream::Flow => c.out.join("flow"),
    };
    let data = path_setting(s, "data", default)?;
    let flow = FlowParams::default();
    let load = |split: &str| -> Outcome<Vec<VideoRecord>> {
        let videos = load_dataset(&data.join(split))?;
        Ok(prepare_stream(&videos, Stream::Ir, &c.profile, &flow)?)
    };
    let train = load("train")?;
    let test = load("test")?;
    Ok((stream, train, test))
}

fn train_config(c: &Common, s: &mut Settings) -> Outcome<TrainConfig> {
    let d = c.profile.train;
    Ok(TrainConfig {
        learning_rate: s.get("lr", d.learning_rate)?,
        batch_size: s.get("batch", d.batch_size)?,
        weight_decay: s.get("wd", d.weight_decay)?,
        max_iterations: s.get("iters", d.max_iterations)?,
        momentum: s.get("momentum", d.momentum)?,
        alpha: s.get("alpha", d.alpha)?,
        seed: c.seed,
    })
}

fn train_stream(c: &Common, s: &mut Settings) -> Outcome {
    let (stream, train_videos, test_videos) = stream_data(c, s)?;
    let cfg = train_config(c, s)?;
    let spec: NetworkSpec = s.get("spec", c.profile.spec.clone())?.parse()?;
    let (train_set, _) = clip_sets(&train_videos, &test_videos, &c.profile)?;
    let net = Network::<f32>::new(spec, &c.profile.input_shape(), Init::Gaussian { seed: c.seed })?;
    let every = (cfg.max_iterations / 20).max(1);
    let outcome = train(net, &train_set, &cfg, |r| {
        if r.iteration % every == 0 {
            eprintln!("iter {:>6}  L {:.5}  L_c {:.5}  L_d {:.5}", r.iteration, r.total, r.classification, r.code);
        }
    })?;
    let dir = c.out.join(stream.to_string());
    fs::create_dir_all(&dir)?;
    outcome.checkpoint.save(&dir.join("checkpoint.ckpt"))?;
    let mut csv = BufWriter::new(fs::File::create(dir.join("loss.csv"))?);
    write_loss_csv(&mut csv, &outcome.history)?;
    csv.flush()?;
    println!("saved {}", dir.join("checkpoint.ckpt").display());
    Ok(())
}

fn load_network(c: &Common, s: &mut Settings, stream: Stream) -> Outcome<Network<f32>> {
    let path = path_setting(s, "checkpoint", c.out.join(stream.to_string()).join("checkpoint.ckpt"))?;
    Ok(Checkpoint::<f32>::load(&path)?.network)
}

fn fusion_config(s: &mut Settings) -> Outcome<FusionConfig> {
    let d = FusionConfig::default();
    Ok(FusionConfig {
        w_flow: s.get("w_flow", d.w_flow)?,
        w_ir: s.get("w_ir", d.w_ir)?,
        knn_k: s.get("knn_k", d.knn_k)?,
        gamma: s.get("gamma", d.gamma)?,
        nn_hidden: s.get("hidden", d.nn_hidden)?,
    })
}

fn write_metrics_csv(path: &Path, m: &Metrics) -> Outcome {
    let mut w = BufWriter::new(fs::File::create(path)?);
    m.write_confusion_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

fn to_value<T: serde::Serialize>(v: &T) -> Outcome<Value> {
    serde_json::to_value(v).map_err(|e| invalid(e.to_string()))
}

fn eval(c: &Common, s: &mut Settings) -> Outcome {
    let (stream, train_videos, test_videos) = stream_data(c, s)?;
    let net = load_network(c, s, stream)?;
    let fcfg = fusion_config(s)?;
    let (train_set, test_set) = clip_sets(&train_videos, &test_videos, &c.profile)?;
    let train_pred = dcl3d::eval::infer_videos(&net, &train_set.center_cropped())?;
    let test_pred = dcl3d::eval::infer_videos(&net, &test_set)?;
    let classes = net.classes();
    let labels: Vec<usize> = test_pred.iter().map(|v| v.label).collect();
    let preds = classify_stream(&train_pred, &test_pred, classes, &fcfg)?;
    let dir = c.out.join(stream.to_string());
    fs::create_dir_all(&dir)?;
    let mut summary = serde_json::Map::new();
    let mut named = vec![("softmax", preds.softmax)];
    named.extend(preds.knn.map(|p| ("knn", p)));
    named.extend(preds.knn_probs.map(|p| ("knn_probs", p)));
    for (name, p) in named {
        let m = metrics(&p, &labels, classes)?;
        write_metrics_csv(&dir.join(format!("confusion_{name}.csv")), &m)?;
        println!("{name:>9}: AP {:.4}", m.ap);
        summary.insert(name.into(), to_value(&m)?);
    }
    let codes: Vec<Vec<f64>> = test_pred.iter().map(|v| v.rep.mean_code.clone()).collect();
    if codes.iter().all(|c| !c.is_empty()) {
        let (intra, inter) = intra_inter_cosine(&codes, &labels);
        summary.insert("intra_cosine".into(), json!(intra));
        summary.insert("inter_cosine".into(), json!(inter));
        let mut w = BufWriter::new(fs::File::create(dir.join("codes.pgm"))?);
        write_code_heatmap(&mut w, &codes)?;
        w.flush()?;
    }
    write_json(&dir.join("metrics.json"), &Value::Object(summary))?;
    let mut w = BufWriter::new(fs::File::create(dir.join("predictions.jsonl"))?);
    for (split, rows) in [("train", &train_pred), ("test", &test_pred)] {
        for p in rows.iter() {
            let mut v = to_value(p)?;
            v["split"] = json!(split);
            writeln!(w, "{v}")?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_predictions(path: &Path) -> Outcome<(Vec<VideoPrediction>, Vec<VideoPrediction>)> {
    let file = fs::File::open(path).map_err(|e| invalid(format!("cannot open {}: {e}", path.display())))?;
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |e: &dyn fmt::Display| invalid(format!("{} line {}: {e}", path.display(), n + 1));
        let mut v: Value = serde_json::from_str(&line).map_err(|e| bad(&e))?;
        let split = v.as_object_mut().and_then(|o| o.remove("split")).and_then(|s| s.as_str().map(String::from));
        let p: VideoPrediction = serde_json::from_value(v).map_err(|e| bad(&e))?;
        match split.as_deref() {
            Some("train") => train.push(p),
            Some("test") => test.push(p),
            _ => return Err(bad(&"split must be train or test")),
        }
    }
    Ok((train, test))
}

fn fuse(c: &Common, s: &mut Settings) -> Outcome {
    let method: FusionMethod = s.get("method", FusionMethod::Late2)?;
    let ir_path = path_setting(s, "ir_predictions", c.out.join("ir").join("predictions.jsonl"))?;
    let flow_path = path_setting(s, "flow_predictions", c.out.join("flow").join("predictions.jsonl"))?;
    let fcfg = fusion_config(s)?;
    let d = TrainConfig::default();
    let tcfg = TrainConfig {
        learning_rate: s.get("lr", d.learning_rate)?,
        batch_size: s.get("batch", d.batch_size)?,
        weight_decay: s.get("wd", d.weight_decay)?,
        max_iterations: s.get("iters", d.max_iterations)?,
        momentum: s.get("momentum", d.momentum)?,
        alpha: 0.0,
        seed: c.seed,
    };
    let (ir_train, ir_test) = read_predictions(&ir_path)?;
    let (flow_train, flow_test) = read_predictions(&flow_path)?;
    let classes = ir_test
        .first()
        .map(|v| v.rep.mean_probs.len())
        .ok_or_else(|| invalid(format!("{} has no test rows", ir_path.display())))?;
    let preds = fuse_streams(
        method,
        StreamSplits { train: &ir_train, test: &ir_test },
        StreamSplits { train: &flow_train, test: &flow_test },
        classes,
        &fcfg,
        &tcfg,
    )?;
    let labels: Vec<usize> = ir_test.iter().map(|v| v.label).collect();
    let m = metrics(&preds, &labels, classes)?;
    let dir = c.out.join(format!("fuse_{method}"));
    fs::create_dir_all(&dir)?;
    write_json(&dir.join("metrics.json"), &to_value(&m)?)?;
    write_metrics_csv(&dir.join("confusion.csv"), &m)?;
    println!("{method}: AP {:.4}", m.ap);
    Ok(())
}

fn grad_check(c: &Common, s: &mut Settings) -> Outcome<ExitCode> {
    let cfg = GradcheckConfig { seed: c.seed, alpha: s.get("alpha", GradcheckConfig::default().alpha)?, ..Default::default() };
    let (net, batch) = fixture(c.seed)?;
    let report = gradcheck(&net, &batch, &cfg)?;
    fs::write(c.out.join("gradcheck.txt"), report.to_string())?;
    print!("{report}");
    Ok(if report.passed() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn viz(c: &Common, s: &mut Settings) -> Outcome {
    let stream: Stream = s.get("stream", Stream::Ir)?;
    let net = load_network(c, s, stream)?;
    let d = VizConfig::default();
    let cfg = VizConfig {
        neuron: s.get("neuron", d.neuron)?,
        steps: s.get("steps", d.steps)?,
        step_size: s.get("eta", d.step_size)?,
        decay: s.get("decay", d.decay)?,
        seed: c.seed,
        ..d
    };
    let result = visualize_neuron(&net, &cfg)?;
    let dir = c.out.join(format!("neuron_{}", cfg.neuron));
    write_viz(&dir, &result)?;
    let first = result.activations.first().copied().unwrap_or(0.0);
    let last = result.activations.last().copied().unwrap_or(0.0);
    println!("neuron {}: activation {first:.5} -> {last:.5}", cfg.neuron);
    Ok(())
}
