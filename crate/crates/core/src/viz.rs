//! Gradient-ascent synthesis of inputs that excite one code neuron.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{shape_mismatch, Error, Result};
use crate::image::{normalize_to_bytes, write_ppm};
use crate::nn::Network;
use crate::tensor::{Real, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct VizConfig {
    pub neuron: usize,
    pub steps: usize,
    pub step_size: f64,
    /// L2 decay `λ_v`.
    pub decay: f64,
    pub seed: u64,
    /// Defaults to the network's input shape.
    pub input_shape: Option<Vec<usize>>,
    /// Keep the clip inside `[0, 1]` after every step.
    pub clamp: bool,
}

impl Default for VizConfig {
    fn default() -> Self {
        Self { neuron: 0, steps: 200, step_size: 1.0, decay: 1e-4, seed: 0, input_shape: None, clamp: true }
    }
}

#[derive(Debug, Clone)]
pub struct VizResult<T> {
    pub clip: Tensor<T>,
    /// Activation at the start and after every step (`steps + 1` values).
    pub activations: Vec<f64>,
}

/// Seeded uniform noise in `[0.4, 0.6]`.
pub fn initial_clip<T: Real>(shape: &[usize], seed: u64) -> Tensor<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| T::from_f64_lossy(rng.random_range(0.4..=0.6)))
}

/// Ascends `a_j` with `x ← x + η ∂a_j/∂x − λ_v x`. Network weights are not
/// touched.
pub fn visualize_neuron<T: Real>(net: &Network<T>, cfg: &VizConfig) -> Result<VizResult<T>> {
    let n = net.code_weight().ok_or(Error::MissingCodeLayer)?.shape()[0];
    if cfg.neuron >= n {
        return Err(Error::OutOfBounds(format!("code neuron {} of {n}", cfg.neuron)));
    }
    if !(cfg.step_size.is_finite() && cfg.decay >= 0.0) {
        return Err(Error::InvalidConfig("viz step size must be finite and decay >= 0".into()));
    }
    let shape = cfg.input_shape.clone().unwrap_or_else(|| net.input_shape().to_vec());
    if shape != net.input_shape() {
        return Err(shape_mismatch("viz input", &shape, net.input_shape()));
    }
    let eta = T::from_f64_lossy(cfg.step_size);
    let keep = T::one() - T::from_f64_lossy(cfg.decay);
    let mut x = initial_clip::<T>(&shape, cfg.seed);
    let mut activations = Vec::with_capacity(cfg.steps + 1);
    for _ in 0..cfg.steps {
        let (a, grad) = net.code_neuron_gradient(&x, cfg.neuron)?;
        activations.push(a.as_f64());
        for (xi, &gi) in x.data_mut().iter_mut().zip(grad.data()) {
            let mut v = keep * *xi + eta * gi;
            if cfg.clamp {
                v = v.max(T::zero()).min(T::one());
            }
            *xi = v;
        }
    }
    let last = net.forward(&x)?.code.expect("code head present").data()[cfg.neuron];
    activations.push(last.as_f64());
    Ok(VizResult { clip: x, activations })
}

/// Writes `frame_<t>.ppm` for each time step of a `[3, t, H, W]` clip,
/// min-max normalized over the whole clip, plus `activations.csv`.
pub fn write_viz<T: Real>(dir: &Path, result: &VizResult<T>) -> Result<()> {
    let s = result.clip.shape();
    if s.len() != 4 || s[0] != 3 {
        return Err(Error::InvalidShape { shape: s.to_vec(), reason: "frames need a [3, t, H, W] clip".into() });
    }
    fs::create_dir_all(dir)?;
    let values: Vec<f64> = result.clip.data().iter().map(|v| v.as_f64()).collect();
    let bytes = normalize_to_bytes(&values);
    let (t, h, w) = (s[1], s[2], s[3]);
    for f in 0..t {
        let mut planar = Vec::with_capacity(3 * h * w);
        for c in 0..3 {
            let start = (c * t + f) * h * w;
            planar.extend_from_slice(&bytes[start..start + h * w]);
        }
        let mut out = BufWriter::new(fs::File::create(dir.join(format!("frame_{f}.ppm")))?);
        write_ppm(&mut out, h, w, &planar)?;
        out.flush()?;
    }
    let mut csv = BufWriter::new(fs::File::create(dir.join("activations.csv"))?);
    writeln!(csv, "step,activation")?;
    for (i, a) in result.activations.iter().enumerate() {
        writeln!(csv, "{i},{a:e}")?;
    }
    csv.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Init;

    fn linear() -> Network<f64> {
        Network::new("SM(2)-DC(2)".parse().unwrap(), &[4], Init::Gaussian { seed: 3 }).unwrap()
    }

    #[test]
    fn zero_steps_returns_init() {
        let net = linear();
        let r = visualize_neuron(&net, &VizConfig { steps: 0, seed: 9, ..Default::default() }).unwrap();
        assert_eq!(r.clip, initial_clip::<f64>(&[4], 9));
        assert_eq!(r.activations.len(), 1);
        assert!(r.clip.data().iter().all(|&v| (0.4..=0.6).contains(&v)));
    }

    #[test]
    fn linear_neuron_gains_eta_norm_squared() {
        let net = linear();
        let cfg = VizConfig { steps: 1, step_size: 0.1, decay: 0.0, clamp: false, ..Default::default() };
        let r = visualize_neuron(&net, &cfg).unwrap();
        let w = &net.code_weight().unwrap().data()[..4];
        let norm2: f64 = w.iter().map(|v| v * v).sum();
        assert!((r.activations[1] - r.activations[0] - 0.1 * norm2).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        let net = linear();
        assert!(visualize_neuron(&net, &VizConfig { neuron: 2, ..Default::default() }).is_err());
        let bad = VizConfig { input_shape: Some(vec![5]), ..Default::default() };
        assert!(visualize_neuron(&net, &bad).is_err());
        let plain: Network<f64> = Network::new("SM(2)".parse().unwrap(), &[4], Init::Zeros).unwrap();
        assert!(matches!(visualize_neuron(&plain, &VizConfig::default()), Err(Error::MissingCodeLayer)));
    }
}
