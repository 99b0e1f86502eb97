use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{shape_mismatch, Result};
use crate::nn::{Gradients, Init, Network};
use crate::tensor::Tensor;
use crate::video::ClipBatch;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradcheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Coordinates sampled per tensor.
    pub max_coords: usize,
    pub tolerance: f64,
    pub seed: u64,
    pub alpha: f64,
    /// Lower bound of the relative-error denominator.
    pub floor: f64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            max_coords: 200,
            tolerance: 1e-4,
            seed: 0,
            alpha: crate::dcl::DEFAULT_ALPHA,
            floor: 1e-6,
        }
    }
}

/// Result for one gradient tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    /// Coordinates whose ±step probes crossed a ReLU or pooling switch.
    pub skipped: usize,
    pub worst_rel: f64,
    pub worst_coord: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradcheckReport {
    pub tensors: Vec<TensorCheck>,
    pub tolerance: f64,
}

impl GradcheckReport {
    pub fn worst(&self) -> f64 {
        self.tensors.iter().map(|t| t.worst_rel).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.tensors.iter().all(|t| t.checked > 0 && t.worst_rel < self.tolerance)
    }
}

impl fmt::Display for GradcheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "tensor\tchecked\tskipped\tworst_rel\tstatus")?;
        for t in &self.tensors {
            let ok = t.checked > 0 && t.worst_rel < self.tolerance;
            writeln!(
                f,
                "{}\t{}\t{}\t{:.3e}\t{}",
                t.name,
                t.checked,
                t.skipped,
                t.worst_rel,
                if ok { "PASS" } else { "FAIL" }
            )?;
        }
        write!(
            f,
            "worst {:.3e} tolerance {:.1e}: {}",
            self.worst(),
            self.tolerance,
            if self.passed() { "PASS" } else { "FAIL" }
        )
    }
}

fn sample_coords(len: usize, max: usize, seed: u64, stream: u64) -> Vec<usize> {
    if len <= max {
        return (0..len).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut idx = rand::seq::index::sample(&mut rng, len, max).into_vec();
    idx.sort_unstable();
    idx
}

fn rel_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares `analytic` parameter gradients against central differences of
/// the batch loss.
pub fn check_gradients(
    net: &Network<f64>,
    batch: &ClipBatch<f64>,
    analytic: &Gradients<f64>,
    cfg: &GradcheckConfig,
) -> Result<GradcheckReport> {
    let infos = net.param_infos();
    if analytic.tensors.len() != infos.len() {
        return Err(shape_mismatch("gradcheck", &[infos.len()], &[analytic.tensors.len()]));
    }
    let (_, base) = net.loss_with_fingerprint(batch, cfg.alpha)?;
    let mut probe = net.clone();
    let mut tensors = Vec::with_capacity(infos.len());
    for (k, info) in infos.iter().enumerate() {
        let grad = &analytic.tensors[k];
        let len = net.params()[k].len();
        if grad.len() != len {
            return Err(shape_mismatch("gradcheck", net.params()[k].shape(), grad.shape()));
        }
        let mut check = TensorCheck { name: info.name.clone(), checked: 0, skipped: 0, worst_rel: 0.0, worst_coord: None };
        for i in sample_coords(len, cfg.max_coords, cfg.seed, k as u64) {
            let original = net.params()[k].data()[i];
            probe.params_mut()[k].data_mut()[i] = original + cfg.step;
            let (plus, fp_plus) = probe.loss_with_fingerprint(batch, cfg.alpha)?;
            probe.params_mut()[k].data_mut()[i] = original - cfg.step;
            let (minus, fp_minus) = probe.loss_with_fingerprint(batch, cfg.alpha)?;
            probe.params_mut()[k].data_mut()[i] = original;
            if fp_plus != base || fp_minus != base {
                check.skipped += 1;
                continue;
            }
            let numeric = (plus.total - minus.total) / (2.0 * cfg.step);
            let rel = rel_error(grad.data()[i], numeric, cfg.floor);
            check.checked += 1;
            if rel > check.worst_rel || check.worst_coord.is_none() {
                check.worst_rel = check.worst_rel.max(rel);
                check.worst_coord = Some(i);
            }
        }
        tensors.push(check);
    }
    Ok(GradcheckReport { tensors, tolerance: cfg.tolerance })
}

/// Per-sample `∂L/∂x` at the trunk output, both heads included.
pub fn feature_gradients(net: &Network<f64>, batch: &ClipBatch<f64>, alpha: f64) -> Result<Vec<(Tensor<f64>, Tensor<f64>)>> {
    (0..batch.len())
        .map(|i| {
            let trace = net.trace(&batch.sample(i)?)?;
            let g = net.head_backward(&trace.features, batch.labels()[i], alpha)?;
            Ok((trace.features, g.features))
        })
        .collect()
}

/// Checks supplied per-sample feature gradients against central differences
/// of the per-sample head loss.
pub fn check_feature_gradients(
    net: &Network<f64>,
    batch: &ClipBatch<f64>,
    analytic: &[(Tensor<f64>, Tensor<f64>)],
    cfg: &GradcheckConfig,
) -> Result<TensorCheck> {
    let mut check = TensorCheck { name: "features".into(), checked: 0, skipped: 0, worst_rel: 0.0, worst_coord: None };
    let per_sample = (cfg.max_coords / analytic.len().max(1)).max(1);
    for (s, (features, grad)) in analytic.iter().enumerate() {
        let label = batch.labels()[s];
        let mut x = features.clone();
        for i in sample_coords(x.len(), per_sample, cfg.seed, 1_000 + s as u64) {
            let original = x.data()[i];
            x.data_mut()[i] = original + cfg.step;
            let plus = net.head_loss(&x, label, cfg.alpha)?;
            x.data_mut()[i] = original - cfg.step;
            let minus = net.head_loss(&x, label, cfg.alpha)?;
            x.data_mut()[i] = original;
            let numeric = (plus - minus) / (2.0 * cfg.step);
            let rel = rel_error(grad.data()[i], numeric, cfg.floor);
            check.checked += 1;
            if rel > check.worst_rel || check.worst_coord.is_none() {
                check.worst_rel = check.worst_rel.max(rel);
                check.worst_coord = Some(s * x.len() + i);
            }
        }
    }
    Ok(check)
}

/// Full check: every parameter tensor plus the trunk-output gradient.
pub fn gradcheck(net: &Network<f64>, batch: &ClipBatch<f64>, cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let (_, analytic) = net.forward_backward(batch, cfg.alpha)?;
    let mut report = check_gradients(net, batch, &analytic, cfg)?;
    let features = feature_gradients(net, batch, cfg.alpha)?;
    report.tensors.push(check_feature_gradients(net, batch, &features, cfg)?);
    Ok(report)
}
/// Two-conv net with both heads used by the command-line check.
pub const FIXTURE_SPEC: &str = "C(3,4,1)-P(1,2,1,2)-C(3,4,1)-P(2,2,2,2)-FC(16)-SM(3)-DC(8)";
pub const FIXTURE_INPUT: [usize; 4] = [3, 4, 8, 8];

/// Seeded fixture network and a two-clip batch of uniform `[-1, 1)` inputs.
pub fn fixture(seed: u64) -> Result<(Network<f64>, ClipBatch<f64>)> {
    let net = Network::new(FIXTURE_SPEC.parse()?, &FIXTURE_INPUT, Init::Gaussian { seed })?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5EED);
    let labels = vec![rng.random_range(0..3), rng.random_range(0..3)];
    let samples: Vec<Tensor<f64>> =
        labels.iter().map(|_| Tensor::from_fn(&FIXTURE_INPUT, |_| rng.random_range(-1.0..1.0))).collect();
    let prov = (0..labels.len()).map(|i| (format!("fixture{i}"), 0)).collect();
    Ok((net, ClipBatch::from_samples(&samples, labels, prov)?))
}

