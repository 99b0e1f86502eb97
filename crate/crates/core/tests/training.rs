use dcl3d::nn::{Init, Network};
use dcl3d::trainer::{train, Checkpoint, Sgd, TrainConfig};
use dcl3d::video::{ClipBatch, ClipSource, VectorSet};
use dcl3d::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SPEC: &str = "FC(12)-SM(3)-DC(9)";

/// Three Gaussian clusters in 6 dimensions.
fn clusters(per_class: usize, seed: u64) -> VectorSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut vectors = Vec::new();
    let mut labels = Vec::new();
    for i in 0..3 * per_class {
        let c = i % 3;
        vectors.push(Tensor::from_fn(&[6], |j| {
            let center = if j % 3 == c { 1.0 } else { 0.0 };
            center + 0.2 * rng.random_range(-1.0f32..1.0)
        }));
        labels.push(c);
    }
    VectorSet::new(vectors, labels).unwrap()
}

fn cfg(iters: usize, alpha: f64) -> TrainConfig {
    TrainConfig { learning_rate: 0.05, batch_size: 4, max_iterations: iters, momentum: 0.5, alpha, seed: 5, ..TrainConfig::default() }
}

fn net<T: dcl3d::Real>(spec: &str) -> Network<T> {
    Network::new(spec.parse().unwrap(), &[6], Init::Gaussian { seed: 8 }).unwrap()
}

#[test]
fn training_is_deterministic() {
    let data = clusters(5, 1);
    let a = train(net::<f32>(SPEC), &data, &cfg(20, 0.02), |_| {}).unwrap();
    let b = train(net::<f32>(SPEC), &data, &cfg(20, 0.02), |_| {}).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.checkpoint.to_bytes(), b.checkpoint.to_bytes());
}

#[test]
fn zero_alpha_matches_net_without_code_head() {
    let data = clusters(5, 2);
    let with = train(net::<f64>(SPEC), &data, &cfg(10, 0.0), |_| {}).unwrap().checkpoint.network;
    let without = train(net::<f64>("FC(12)-SM(3)"), &data, &cfg(10, 0.0), |_| {}).unwrap().checkpoint.network;
    let shared = without.params().len();
    assert_eq!(with.params().len(), shared + 1);
    for (a, b) in with.params()[..shared].iter().zip(without.params()) {
        assert_eq!(a.data(), b.data());
    }
}

#[test]
fn loss_decreases_on_separable_data() {
    let data = clusters(10, 3);
    let mut first = None;
    let out = train(net::<f32>(SPEC), &data, &TrainConfig { batch_size: 30, ..cfg(50, 0.02) }, |r| {
        first.get_or_insert(r.total);
    })
    .unwrap();
    let initial = first.unwrap();
    let last = out.history.last().unwrap().total;
    assert!(last < initial, "{initial} -> {last}");
    let net = out.checkpoint.network;
    let correct = (0..data.len())
        .filter(|&i| {
            let p = net.forward(&data.clip(i, 0).unwrap()).unwrap().probs;
            dcl3d::eval::argmax(&p.data().iter().map(|&v| f64::from(v)).collect::<Vec<_>>()) == data.label(i)
        })
        .count();
    assert_eq!(correct, data.len());
}

#[test]
fn zero_iterations_return_initial_network() {
    let data = clusters(2, 4);
    let out = train(net::<f32>(SPEC), &data, &cfg(0, 0.02), |_| {}).unwrap();
    assert!(out.history.is_empty());
    assert_eq!(out.checkpoint.network, net::<f32>(SPEC));
}

#[test]
fn sgd_step_on_quadratic_toy_loss() {
    // L_d(A) = (1 - a0)^2 + a1^2 with curvature 2 alpha: steps below 1/alpha descend.
    let alpha = 0.5;
    let data = VectorSet::new(vec![Tensor::full(&[1], 1.0)], vec![0]).unwrap();
    let batch = ClipBatch::<f64>::gather(&data, &[0], 0).unwrap();
    let step = |lr: f64| {
        let mut n: Network<f64> = Network::new("SM(2)-DC(2)".parse().unwrap(), &[1], Init::Zeros).unwrap();
        n.params_mut()[2].data_mut().copy_from_slice(&[3.0, -2.0]);
        let before = n.loss(&batch, alpha).unwrap().code;
        let (_, g) = n.forward_backward(&batch, alpha).unwrap();
        let cfg = TrainConfig { learning_rate: lr, weight_decay: 0.0, ..TrainConfig::default() };
        Sgd::new(&n).step(&mut n, &g, &cfg).unwrap();
        (before, n.loss(&batch, alpha).unwrap().code)
    };
    for lr in [0.1, 1.0, 1.9] {
        let (before, after) = step(lr);
        assert!(after < before, "lr {lr}: {before} -> {after}");
    }
    let (before, after) = step(2.5);
    assert!(after > before);
}

#[test]
fn checkpoint_of_trained_net_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let data = clusters(3, 6);
    let ckpt = train(net::<f32>(SPEC), &data, &cfg(7, 0.02), |_| {}).unwrap().checkpoint;
    let path = dir.path().join("net.ckpt");
    ckpt.save(&path).unwrap();
    let loaded = Checkpoint::<f32>::load(&path).unwrap();
    assert_eq!(loaded.iteration, 7);
    assert_eq!(loaded.to_bytes(), std::fs::read(&path).unwrap());
    assert_eq!(loaded.network, ckpt.network);
}
