//! One PASS/FAIL line per acceptance criterion. Exits nonzero on any failure.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use dcl3d::dcl::{build_target_code, dcl_gradients, CodeAllocation};
use dcl3d::eval::{
    argmax, classify_stream, distances_to_probs, fuse_streams, fuse_weighted, intra_inter_cosine, metrics, FusionConfig,
    FusionMethod, StreamSplits, VideoPrediction,
};
use dcl3d::flow::{decode_flow_image, encode_flow_image, estimate_flow, flow_images, FlowField, FlowParams};
use dcl3d::nn::{Init, LayerSpec, Network, NetworkSpec, REFERENCE_SPEC};
use dcl3d::pipeline::{clip_sets, prepare_stream, run_stream, Profile, Stream};
use dcl3d::trainer::{check_gradients, fixture, gradcheck, train, GradcheckConfig, TrainConfig};
use dcl3d::video::{generate_synthetic, train_test_split, ClipBatch, SyntheticSpec};
use dcl3d::viz::{visualize_neuron, VizConfig};
use dcl3d::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn secs(d: Duration) -> String {
    format!("{:.1}s", d.as_secs_f64())
}

fn ac1_gradients() -> Verdict {
    let start = Instant::now();
    let (net, batch) = fixture(7).unwrap();
    let cfg = GradcheckConfig { seed: 7, alpha: 0.02, ..Default::default() };
    let report = gradcheck(&net, &batch, &cfg).unwrap();
    let covered = ["code.weight", "features"].iter().all(|n| report.tensors.iter().any(|t| t.name == *n));
    let (_, mut perturbed) = net.forward_backward(&batch, cfg.alpha).unwrap();
    for t in &mut perturbed.tensors {
        t.data_mut().iter_mut().for_each(|v| *v += 1e-2);
    }
    let control = check_gradients(&net, &batch, &perturbed, &cfg).unwrap();
    let elapsed = start.elapsed();
    verdict(
        report.passed() && covered && !control.passed() && elapsed < Duration::from_secs(120),
        format!(
            "worst rel {:.2e} over {} tensors, control worst {:.2e} ({}), {}",
            report.worst(),
            report.tensors.len(),
            control.worst(),
            if control.passed() { "not detected" } else { "detected" },
            secs(elapsed)
        ),
    )
}

fn ac2_shapes() -> Verdict {
    let start = Instant::now();
    let spec: NetworkSpec = REFERENCE_SPEC.parse().unwrap();
    let input = [3, 16, 112, 112];
    let shapes = spec.trunk_shapes(&input).unwrap();
    let pool5 = shapes.iter().any(|s| s == &[512, 1, 4, 4]);
    let pooled: Vec<Vec<usize>> = spec
        .trunk()
        .iter()
        .zip(&shapes)
        .filter(|(l, _)| matches!(l, LayerSpec::Pool3d(_)))
        .map(|(_, s)| s.clone())
        .collect();
    let stages = shapes[0] == [64, 16, 112, 112]
        && pooled == [vec![64, 16, 56, 56], vec![128, 8, 28, 28], vec![256, 4, 14, 14], vec![512, 2, 7, 7], vec![512, 1, 4, 4]];
    let net = Network::<f32>::new(spec, &input, Init::Gaussian { seed: 1 }).unwrap();
    let clip = Tensor::<f32>::from_fn(&input, |i| ((i % 255) as f32) / 255.0);
    let out = net.forward(&clip).unwrap();
    let fc: Vec<usize> = net
        .spec()
        .trunk()
        .iter()
        .zip(&shapes)
        .filter(|(l, _)| matches!(l, LayerSpec::Fc { .. }))
        .map(|(_, s)| s[0])
        .collect();
    let alloc = CodeAllocation::new(12, 4096).unwrap();
    let class1 = (341..=343).all(|j| alloc.class_of(j) == Some(1));
    let elapsed = start.elapsed();
    let ok = pool5
        && stages
        && fc == [4096, 4096]
        && out.features.len() == 4096
        && out.probs.len() == 12
        && out.code.as_ref().map(Tensor::len) == Some(4096)
        && alloc.block_size() == 341
        && alloc.block_start(1) == 341
        && class1
        && elapsed < Duration::from_secs(60);
    verdict(
        ok,
        format!(
            "pool5 512x1x4x4 {pool5}, all stages {stages}, fc {fc:?}, softmax {}, p={} class1 block at {}, {}",
            out.probs.len(),
            alloc.block_size(),
            alloc.block_start(1),
            secs(elapsed)
        ),
    )
}

fn ac3_closed_form() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    for i in 0..100u64 {
        let n_in = rng.random_range(2..10);
        let hidden = rng.random_range(2..10);
        let classes = rng.random_range(2..5);
        let code = classes + rng.random_range(0..8);
        let alpha = rng.random_range(0.001..1.0);
        let spec = format!("FC({hidden})-SM({classes})-DC({code})");
        let net: Network<f64> = Network::new(spec.parse().unwrap(), &[n_in], Init::Gaussian { seed: i }).unwrap();
        let label = rng.random_range(0..classes);
        let x = Tensor::from_fn(&[n_in], |_| rng.random_range(-1.0..1.0));
        let batch = ClipBatch::from_samples(std::slice::from_ref(&x), vec![label], vec![("x".into(), 0)]).unwrap();
        let (_, grads) = net.forward_backward(&batch, alpha).unwrap();
        let features = net.trace(&x).unwrap().features;
        let q = build_target_code(net.allocation().unwrap(), label).unwrap();
        let closed = dcl_gradients(&features, net.code_weight().unwrap(), &q, alpha).unwrap();
        worst = worst.max(grads.tensors.last().unwrap().sub(&closed.weight).unwrap().max_abs());
    }
    verdict(worst < 1e-10, format!("max |backprop - closed form| {worst:.2e} over 100 instances"))
}

fn ac4_zero_alpha() -> Verdict {
    let profile = Profile::Tiny.config();
    let spec = SyntheticSpec { videos_per_class: 4, ..profile.synthetic(4) };
    let videos = generate_synthetic(&spec).unwrap();
    let (set, _) = clip_sets(&videos, &videos, &profile).unwrap();
    let with = "C(3,4,1)-P(1,2,1,2)-C(3,4,1)-P(2,2,2,2)-FC(16)-SM(6)-DC(12)";
    let without = "C(3,4,1)-P(1,2,1,2)-C(3,4,1)-P(2,2,2,2)-FC(16)-SM(6)";
    let cfg = TrainConfig { max_iterations: 10, alpha: 0.0, seed: 4, ..profile.train };
    let run = |s: &str| {
        let net: Network<f64> = Network::new(s.parse().unwrap(), &profile.input_shape(), Init::Gaussian { seed: 4 }).unwrap();
        train(net, &set, &cfg, |_| {}).unwrap().checkpoint.network
    };
    let (a, b) = (run(with), run(without));
    let shared = b.params().len();
    let identical = a.params().len() == shared + 1
        && a.params()[..shared].iter().zip(b.params()).all(|(x, y)| {
            x.data().iter().zip(y.data()).all(|(p, q)| p.to_bits() == q.to_bits())
        });
    verdict(identical, format!("{shared} shared tensors bitwise equal after 10 iterations: {identical}"))
}

struct StreamStats {
    softmax: Vec<f64>,
    knn: Vec<f64>,
    cosine_gap: Vec<f64>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

struct EndToEnd {
    ir: StreamStats,
    flow: StreamStats,
    late2: Vec<f64>,
    elapsed: Duration,
    trained_ir: Network<f32>,
}

fn end_to_end() -> EndToEnd {
    let start = Instant::now();
    let profile = Profile::Tiny.config();
    let fusion = FusionConfig::default();
    let mut ir = StreamStats { softmax: vec![], knn: vec![], cosine_gap: vec![] };
    let mut flow = StreamStats { softmax: vec![], knn: vec![], cosine_gap: vec![] };
    let mut late2 = Vec::new();
    let mut trained_ir = None;
    for seed in 0..5u64 {
        let videos = generate_synthetic(&profile.synthetic(seed)).unwrap();
        let (train_v, test_v) = train_test_split(&videos, profile.train_per_class, seed).unwrap();
        let mut preds: Vec<(Vec<VideoPrediction>, Vec<VideoPrediction>)> = Vec::new();
        for (stream, stats) in [(Stream::Ir, &mut ir), (Stream::Flow, &mut flow)] {
            let fp = FlowParams::default();
            let tr = prepare_stream(&train_v, stream, &profile, &fp).unwrap();
            let te = prepare_stream(&test_v, stream, &profile, &fp).unwrap();
            let cfg = TrainConfig { seed, ..profile.train };
            let run = run_stream(&tr, &te, &profile, &cfg, |_| {}).unwrap();
            let labels: Vec<usize> = run.test_predictions.iter().map(|v| v.label).collect();
            let p = classify_stream(&run.train_predictions, &run.test_predictions, profile.classes, &fusion).unwrap();
            let ap = |pred: &[usize]| metrics(pred, &labels, profile.classes).unwrap().ap;
            stats.softmax.push(ap(&p.softmax));
            stats.knn.push(ap(p.knn.as_ref().unwrap()));
            let codes: Vec<Vec<f64>> = run.test_predictions.iter().map(|v| v.rep.mean_code.clone()).collect();
            let (intra, inter) = intra_inter_cosine(&codes, &labels);
            stats.cosine_gap.push(intra - inter);
            eprintln!(
                "  seed {seed} {stream}: softmax {:.3} knn {:.3} cosine {intra:.3}/{inter:.3}",
                stats.softmax.last().unwrap(),
                stats.knn.last().unwrap()
            );
            if seed == 0 && stream == Stream::Ir {
                trained_ir = Some(run.outcome.checkpoint.network.clone());
            }
            preds.push((run.train_predictions, run.test_predictions));
        }
        let splits = |i: usize| StreamSplits { train: &preds[i].0, test: &preds[i].1 };
        let fused = fuse_streams(FusionMethod::Late2, splits(0), splits(1), profile.classes, &fusion, &profile.train).unwrap();
        let labels: Vec<usize> = preds[0].1.iter().map(|v| v.label).collect();
        late2.push(metrics(&fused, &labels, profile.classes).unwrap().ap);
        eprintln!("  seed {seed} late2: {:.3}", late2.last().unwrap());
    }
    EndToEnd { ir, flow, late2, elapsed: start.elapsed(), trained_ir: trained_ir.unwrap() }
}

fn ac5_end_to_end(e: &EndToEnd) -> Verdict {
    let (ir_sm, fl_sm) = (mean(&e.ir.softmax), mean(&e.flow.softmax));
    let (ir_knn, fl_knn) = (mean(&e.ir.knn), mean(&e.flow.knn));
    let best_single = ir_sm.max(fl_sm).max(ir_knn).max(fl_knn);
    let late2 = mean(&e.late2);
    let iterations = Profile::Tiny.config().train.max_iterations;
    let ok = ir_sm >= 0.95
        && fl_sm >= 0.95
        && ir_knn >= ir_sm - 0.02
        && fl_knn >= fl_sm - 0.02
        && late2 >= best_single - 0.02
        && iterations <= 2000
        && e.elapsed < Duration::from_secs(30 * 60);
    verdict(
        ok,
        format!(
            "mean AP ir softmax {ir_sm:.3} knn {ir_knn:.3}, flow softmax {fl_sm:.3} knn {fl_knn:.3}, late2 {late2:.3}; {iterations} iterations, {}",
            secs(e.elapsed)
        ),
    )
}

fn ac6_code_structure(e: &EndToEnd) -> Verdict {
    let (ir, flow) = (mean(&e.ir.cosine_gap), mean(&e.flow.cosine_gap));
    let worst = e.ir.cosine_gap.iter().chain(&e.flow.cosine_gap).copied().fold(f64::INFINITY, f64::min);
    verdict(ir >= 0.2 && flow >= 0.2, format!("mean intra-inter cosine gap ir {ir:.3}, flow {flow:.3} (worst run {worst:.3})"))
}

fn ac7_flow() -> Verdict {
    let p = FlowParams::default();
    let still = Tensor::<f32>::from_fn(&[3, 3, 12, 16], |i| ((i * 37) % 101) as f32 / 101.0);
    let frame = still.index_axis0(0).unwrap();
    let video = Tensor::stack(&[frame.clone(), frame.clone(), frame]).unwrap();
    let images = flow_images(&video, &p).unwrap();
    let n = 12 * 16;
    let still_ok = images.iter().all(|im| {
        im.pixels[..n].iter().all(|&v| v == 128) && im.pixels[n..2 * n].iter().all(|&v| v == 128) && im.pixels[2 * n..].iter().all(|&v| v == 0)
    });

    let blob = |cx: f64| {
        Tensor::<f64>::from_fn(&[32, 32], |i| {
            let (y, x) = ((i / 32) as f64, (i % 32) as f64);
            20.0 + 200.0 * (-((y - 16.0).powi(2) + (x - cx).powi(2)) / 32.0).exp()
        })
    };
    let (a, b) = (blob(14.0), blob(15.0));
    let f = estimate_flow(&a, &b, &p).unwrap();
    let inside: Vec<usize> = (0..32 * 32).filter(|&i| a.data()[i] > 70.0).collect();
    let u = inside.iter().map(|&i| f.u[i]).sum::<f64>() / inside.len() as f64;

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let field = FlowField {
            height: 4,
            width: 4,
            u: (0..16).map(|_| rng.random_range(-15.0..15.0)).collect(),
            v: (0..16).map(|_| rng.random_range(-15.0..15.0)).collect(),
        };
        let back = decode_flow_image(&encode_flow_image(&field, p.scale).unwrap(), p.scale);
        for i in 0..16 {
            worst = worst.max((back.u[i] - field.u[i]).abs()).max((back.v[i] - field.v[i]).abs());
        }
    }
    let bound = 0.5 / p.scale;
    verdict(
        still_ok && (u - 1.0).abs() <= 0.5 && worst <= bound + 1e-12,
        format!("still frames exact {still_ok}, unit shift mean u {u:.3}, quantization {worst:.4} <= {bound}"),
    )
}

fn ac8_fusion_metrics() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut simplex_ok = true;
    for _ in 0..1000 {
        let m = rng.random_range(2..13);
        let d: Vec<f64> = (0..m).map(|_| rng.random_range(0.0..50.0)).collect();
        let p = distances_to_probs(&d, rng.random_range(0.001..1.0)).unwrap();
        let argmin = (0..m).fold(0, |b, i| if d[i] < d[b] { i } else { b });
        simplex_ok &= p.iter().all(|&v| v >= 0.0) && (p.iter().sum::<f64>() - 1.0).abs() < 1e-9 && argmax(&p) == argmin;
    }
    let fused = fuse_weighted(&[0.0, 1.0], &[1.0, 0.0], 1.0, 2.0).unwrap();
    let fuse_ok = (fused[0] - 2.0 / 3.0).abs() < 1e-15 && (fused[1] - 1.0 / 3.0).abs() < 1e-15;
    let ap = metrics(&[0, 0, 0, 1, 1, 0], &[0, 0, 0, 0, 1, 1], 2).unwrap().ap;
    verdict(
        simplex_ok && fuse_ok && (ap - 0.625).abs() < 1e-12,
        format!("1000 profiles on simplex with argmax=argmin {simplex_ok}, fused {fused:?}, AP {:.1}%", ap * 100.0),
    )
}

fn ac9_visualization(net: &Network<f32>) -> Verdict {
    let n = net.code_weight().unwrap().shape()[0];
    let neurons: Vec<usize> = (0..20).map(|i| i * n / 20).collect();
    let mut up = 0;
    let mut down = 0;
    for &j in &neurons {
        let r = visualize_neuron(net, &VizConfig { neuron: j, seed: j as u64, ..Default::default() }).unwrap();
        if r.activations.last() > r.activations.first() {
            up += 1;
        }
        let neg = VizConfig { neuron: j, seed: j as u64, step_size: -VizConfig::default().step_size, ..Default::default() };
        let r = visualize_neuron(net, &neg).unwrap();
        if r.activations.last() < r.activations.first() {
            down += 1;
        }
    }
    let need = (neurons.len() * 9).div_ceil(10);
    verdict(up >= need && down >= need, format!("{up}/20 neurons increased, negative step decreased {down}/20"))
}

fn main() -> ExitCode {
    let mut failed = 0;
    let mut report = |id: usize, name: &str, v: Verdict| {
        println!("AC{id} {name}: {} ({})", if v.pass { "PASS" } else { "FAIL" }, v.detail);
        if !v.pass {
            failed += 1;
        }
    };
    report(1, "gradient fidelity", ac1_gradients());
    report(2, "shape fidelity", ac2_shapes());
    report(3, "analytic formula", ac3_closed_form());
    report(4, "zero alpha equivalence", ac4_zero_alpha());
    let e = end_to_end();
    report(5, "desk-scale end-to-end", ac5_end_to_end(&e));
    report(6, "code structure", ac6_code_structure(&e));
    report(7, "flow contracts", ac7_flow());
    report(8, "fusion and metrics", ac8_fusion_metrics());
    report(9, "visualization", ac9_visualization(&e.trained_ir));
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
