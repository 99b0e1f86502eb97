//! Discriminative code layer: neuron-to-class allocation, p-hot targets and
//! the code loss `L_d = ‖q − A x‖²` with its closed-form gradients.
//!
//! Classes are 0-based. With `N = p·m + r`, class `c` owns the contiguous
//! block `[p·c, p·(c+1))` and the `r` tail neurons `p·m .. N` go one each to
//! `priority_classes` in order.

use crate::error::{shape_mismatch, Error, Result};
use crate::nn::layers::{outer, softmax_logloss};
use crate::tensor::{Real, Tensor};

pub const DEFAULT_ALPHA: f64 = 0.02;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodeAllocation {
    classes: usize,
    code_length: usize,
    priority_classes: Vec<usize>,
}

impl CodeAllocation {
    /// Allocation whose extra neurons go to the first `r` classes.
    pub fn new(classes: usize, code_length: usize) -> Result<Self> {
        if classes == 0 || code_length < classes {
            return Err(Error::InvalidConfig(format!(
                "code length {code_length} must be at least the class count {classes}"
            )));
        }
        let r = code_length % classes;
        Self::with_priority(classes, code_length, (0..r).collect())
    }

    pub fn with_priority(classes: usize, code_length: usize, priority_classes: Vec<usize>) -> Result<Self> {
        if classes == 0 || code_length < classes {
            return Err(Error::InvalidConfig(format!(
                "code length {code_length} must be at least the class count {classes}"
            )));
        }
        let r = code_length % classes;
        if priority_classes.len() != r {
            return Err(Error::InvalidConfig(format!(
                "{r} remainder neurons need {r} priority classes, got {}",
                priority_classes.len()
            )));
        }
        let mut seen = vec![false; classes];
        for &c in &priority_classes {
            if c >= classes || std::mem::replace(&mut seen[c], true) {
                return Err(Error::InvalidConfig(format!(
                    "priority classes {priority_classes:?} must be distinct and below {classes}"
                )));
            }
        }
        Ok(Self { classes, code_length, priority_classes })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn code_length(&self) -> usize {
        self.code_length
    }

    /// `p = floor(N / m)`.
    pub fn block_size(&self) -> usize {
        self.code_length / self.classes
    }

    /// `r = N − p·m`.
    pub fn remainder(&self) -> usize {
        self.code_length - self.block_size() * self.classes
    }

    pub fn priority_classes(&self) -> &[usize] {
        &self.priority_classes
    }

    pub fn block_start(&self, class: usize) -> usize {
        self.block_size() * class
    }

    /// Class owning neuron `j`.
    pub fn class_of(&self, neuron: usize) -> Option<usize> {
        let p = self.block_size();
        if neuron < p * self.classes {
            Some(neuron / p)
        } else {
            self.priority_classes.get(neuron - p * self.classes).copied()
        }
    }
}

/// Binary p-hot target vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TargetCode {
    bits: Vec<bool>,
}

impl TargetCode {
    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn ones(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        Tensor::from_fn(&[self.bits.len()], |i| if self.bits[i] { T::one() } else { T::zero() })
    }
}

pub fn build_target_code(alloc: &CodeAllocation, class: usize) -> Result<TargetCode> {
    if class >= alloc.classes {
        return Err(Error::LabelOutOfRange { label: class, classes: alloc.classes });
    }
    let p = alloc.block_size();
    let mut bits = vec![false; alloc.code_length];
    bits[p * class..p * (class + 1)].fill(true);
    for (i, &c) in alloc.priority_classes.iter().enumerate() {
        if c == class {
            bits[p * alloc.classes + i] = true;
        }
    }
    Ok(TargetCode { bits })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub alpha: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { alpha: DEFAULT_ALPHA }
    }
}

impl LossConfig {
    pub fn new(alpha: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(Error::InvalidConfig(format!("alpha must be >= 0, got {alpha}")));
        }
        Ok(Self { alpha })
    }
}

/// Predicted code `x_d = A x` (no bias, no nonlinearity).
pub fn dcl_forward<T: Real>(features: &Tensor<T>, code_weight: &Tensor<T>) -> Result<Tensor<T>> {
    let ws = code_weight.shape();
    if ws.len() != 2 || ws[1] != features.len() {
        return Err(shape_mismatch("dcl forward", features.shape(), ws));
    }
    code_weight.matmul(&features.reshape(&[features.len(), 1])?)?.into_reshaped(&[ws[0]])
}

/// `‖q − x_d‖²`.
pub fn dcl_loss<T: Real>(code: &Tensor<T>, target: &TargetCode) -> Result<T> {
    if code.len() != target.bits.len() {
        return Err(shape_mismatch("dcl loss", code.shape(), &[target.bits.len()]));
    }
    Ok(code
        .data()
        .iter()
        .zip(&target.bits)
        .map(|(&x, &b)| {
            let d = if b { T::one() - x } else { x };
            d * d
        })
        .sum())
}

/// `L = L_c + α·L_d` for one sample.
pub fn combined_loss<T: Real>(
    probs: &Tensor<T>,
    label: usize,
    code: &Tensor<T>,
    target: &TargetCode,
    cfg: LossConfig,
) -> Result<T> {
    let lc = softmax_logloss(probs, label)?;
    let ld = dcl_loss(code, target)?;
    Ok(lc + T::from_f64_lossy(cfg.alpha) * ld)
}

/// Closed-form gradients of `α·L_d`.
#[derive(Debug, Clone)]
pub struct DclGradients<T> {
    /// `2α(Ax − q)xᵀ`
    pub weight: Tensor<T>,
    /// `2α Aᵀ(Ax − q)`, the code-loss part of `∂L/∂x`.
    pub features: Tensor<T>,
}

pub fn dcl_gradients<T: Real>(
    features: &Tensor<T>,
    code_weight: &Tensor<T>,
    target: &TargetCode,
    alpha: f64,
) -> Result<DclGradients<T>> {
    let code = dcl_forward(features, code_weight)?;
    let q = target.to_tensor::<T>();
    if q.len() != code.len() {
        return Err(shape_mismatch("dcl gradients", code.shape(), q.shape()));
    }
    let residual = code.sub(&q)?.scale(T::from_f64_lossy(2.0 * alpha));
    let flat = features.flatten();
    Ok(DclGradients {
        weight: outer(&residual, &flat)?,
        features: code_weight
            .transpose2()?
            .matmul(&residual.reshape(&[residual.len(), 1])?)?
            .into_reshaped(features.shape())?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(data: &[f64]) -> Tensor<f64> {
        Tensor::from_slice(&[data.len()], data).unwrap()
    }

    #[test]
    fn target_code_examples() {
        let alloc = CodeAllocation::new(3, 6).unwrap();
        let q = build_target_code(&alloc, 1).unwrap();
        assert_eq!(q.to_tensor::<f64>().data(), &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
        let onehot = CodeAllocation::new(4, 4).unwrap();
        assert_eq!(build_target_code(&onehot, 2).unwrap().to_tensor::<f64>().data(), &[0.0, 0.0, 1.0, 0.0]);
        assert!(build_target_code(&alloc, 3).is_err());
    }

    #[test]
    fn reference_head_blocks() {
        let alloc = CodeAllocation::new(12, 4096).unwrap();
        assert_eq!(alloc.block_size(), 341);
        assert_eq!(alloc.remainder(), 4);
        assert_eq!(alloc.block_start(1), 341);
        let q = build_target_code(&alloc, 1).unwrap();
        assert!(!q.bits()[340] && q.bits()[341] && q.bits()[681] && !q.bits()[682]);
        // class 1 is a default priority class, so it also owns tail neuron 4093
        assert!(q.bits()[4093]);
        assert_eq!(q.ones(), 342);
        assert_eq!(build_target_code(&alloc, 7).unwrap().ones(), 341);
        assert_eq!(alloc.class_of(4095), Some(3));
    }

    #[test]
    fn priority_validation() {
        assert!(CodeAllocation::with_priority(3, 8, vec![2, 0]).is_ok());
        assert!(CodeAllocation::with_priority(3, 8, vec![2]).is_err());
        assert!(CodeAllocation::with_priority(3, 8, vec![2, 2]).is_err());
        assert!(CodeAllocation::with_priority(3, 8, vec![2, 3]).is_err());
        assert!(CodeAllocation::new(5, 4).is_err());
    }

    #[test]
    fn forward_examples() {
        let x = v(&[1.0, 2.0]);
        assert_eq!(dcl_forward(&x, &Tensor::eye(2)).unwrap(), x);
        assert_eq!(dcl_forward(&x, &Tensor::zeros(&[3, 2])).unwrap(), Tensor::zeros(&[3]));
        let a = Tensor::from_slice(&[2, 2], &[1.0, 1.0, 0.0, 1.0]).unwrap();
        assert_eq!(dcl_forward(&x, &a).unwrap().data(), &[3.0, 2.0]);
        assert!(dcl_forward(&v(&[1.0]), &a).is_err());
    }

    #[test]
    fn loss_examples() {
        let alloc = CodeAllocation::new(2, 2).unwrap();
        let q = build_target_code(&alloc, 0).unwrap();
        assert_eq!(dcl_loss(&v(&[1.0, 0.0]), &q).unwrap(), 0.0);
        assert_eq!(dcl_loss(&v(&[0.5, 0.5]), &q).unwrap(), 0.5);
        assert!(dcl_loss(&v(&[0.5]), &q).is_err());

        let probs = v(&[1.0, 0.0]);
        let combined = combined_loss(&probs, 0, &v(&[0.5, 0.5]), &q, LossConfig::default()).unwrap();
        assert!((combined - 0.01).abs() < 1e-15);
        let soft = v(&[0.25, 0.75]);
        let only_c = combined_loss(&soft, 0, &v(&[0.5, 0.5]), &q, LossConfig::new(0.0).unwrap()).unwrap();
        assert!((only_c - 4f64.ln()).abs() < 1e-15);
        assert!(LossConfig::new(-1.0).is_err());
    }

    #[test]
    fn gradient_examples() {
        let alloc = CodeAllocation::new(2, 2).unwrap();
        let q1 = build_target_code(&alloc, 1).unwrap();
        let g = dcl_gradients(&v(&[1.0, 0.0]), &Tensor::eye(2), &q1, 0.5).unwrap();
        assert_eq!(g.weight.data(), &[1.0, 0.0, -1.0, 0.0]);
        assert_eq!(g.features.data(), &[1.0, -1.0]);

        let exact = dcl_gradients(&v(&[0.0, 1.0]), &Tensor::eye(2), &q1, 0.5).unwrap();
        assert!(exact.weight.data().iter().chain(exact.features.data()).all(|&x| x == 0.0));
        let off = dcl_gradients(&v(&[3.0, 1.0]), &Tensor::eye(2), &q1, 0.0).unwrap();
        assert!(off.weight.data().iter().chain(off.features.data()).all(|&x| x == 0.0));
    }
}
