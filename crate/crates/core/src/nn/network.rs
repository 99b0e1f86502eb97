//! A network instantiated from a [`NetworkSpec`]: shared trunk, softmax head
//! and optional discriminative code head, with full backpropagation.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::dcl::{build_target_code, dcl_loss, CodeAllocation, TargetCode};
use crate::error::{shape_mismatch, Error, Result};
use crate::nn::layers::{
    conv3d_backward, conv3d_forward, fc_backward, fc_forward, maxpool3d_backward, maxpool3d_forward,
    relu_backward, relu_forward, softmax_cross_entropy, softmax_logloss_backward, LayerParams,
    PoolIndices, PoolWindow,
};
use crate::nn::spec::{LayerSpec, NetworkSpec};
use crate::tensor::{Real, Tensor};
use crate::video::ClipBatch;

#[derive(Debug, Clone, PartialEq)]
enum TrunkLayer<T> {
    Conv { params: LayerParams<T>, stride: usize, pad: usize },
    Pool(PoolWindow),
    Fc(LayerParams<T>),
    Relu,
}

/// Parameter initialization scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Zero-mean Gaussian weights with std `sqrt(2 / fan_in)`, zero biases.
    /// Each layer draws from its own ChaCha stream, so adding or removing the
    /// code head leaves every other layer's values unchanged.
    Gaussian { seed: u64 },
    Zeros,
}

/// Name and weight-decay flag of one parameter tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamInfo {
    pub name: String,
    pub decay: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T> {
    spec: NetworkSpec,
    input_shape: Vec<usize>,
    trunk: Vec<TrunkLayer<T>>,
    classifier: LayerParams<T>,
    code: Option<Tensor<T>>,
    allocation: Option<CodeAllocation>,
}

/// Per-sample inference result.
#[derive(Debug, Clone)]
pub struct Output<T> {
    pub features: Tensor<T>,
    pub probs: Tensor<T>,
    pub code: Option<Tensor<T>>,
}

/// Intermediate values of one forward pass, kept for backpropagation.
#[derive(Debug, Clone)]
pub struct Trace<T> {
    layer_inputs: Vec<Tensor<T>>,
    pool_indices: Vec<Option<PoolIndices>>,
    feature_shape: Vec<usize>,
    pub features: Tensor<T>,
    pub logits: Tensor<T>,
    pub code: Option<Tensor<T>>,
}

impl<T: Real> Trace<T> {
    /// Hash of every ReLU on/off state and pooling argmax. Two inputs with the
    /// same fingerprint sit in the same linear piece of the trunk.
    pub fn fingerprint(&self, net: &Network<T>) -> u64 {
        let mut h = DefaultHasher::new();
        for (i, layer) in net.trunk.iter().enumerate() {
            match layer {
                TrunkLayer::Relu => {
                    for &v in self.layer_inputs[i].data() {
                        (v > T::zero()).hash(&mut h);
                    }
                }
                TrunkLayer::Pool(_) => {
                    if let Some(idx) = &self.pool_indices[i] {
                        idx.argmax.hash(&mut h);
                    }
                }
                _ => {}
            }
        }
        h.finish()
    }
}

/// Batch-mean loss terms.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossComponents {
    /// `L = L_c + α·L_d`
    pub total: f64,
    pub classification: f64,
    pub code: f64,
}

/// One gradient tensor per parameter, in [`Network::params`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros_like(net: &Network<T>) -> Self {
        Self {
            tensors: net.params().iter().map(|p| Tensor::zeros(p.shape())).collect(),
        }
    }

    fn accumulate(&mut self, other: &[Tensor<T>]) -> Result<()> {
        for (acc, g) in self.tensors.iter_mut().zip(other) {
            acc.axpy(T::one(), g)?;
        }
        Ok(())
    }

    fn scale(&mut self, factor: T) {
        for t in &mut self.tensors {
            for v in t.data_mut() {
                *v = *v * factor;
            }
        }
    }
}

/// Output-head part of one sample's backward pass.
#[derive(Debug, Clone)]
pub struct HeadGradients<T> {
    pub classification: T,
    pub code: T,
    /// `∂L/∂x` at the features, both heads included.
    pub features: Tensor<T>,
    pub softmax_weight: Tensor<T>,
    pub softmax_bias: Tensor<T>,
    pub code_weight: Option<Tensor<T>>,
}

struct SampleOutcome<T> {
    classification: T,
    code: T,
    grads: Vec<Tensor<T>>,
}

impl<T: Real> Network<T> {
    pub fn new(spec: NetworkSpec, input_shape: &[usize], init: Init) -> Result<Self> {
        let shapes = spec.trunk_shapes(input_shape)?;
        let mut ordinal = 0u64;
        let mut make = |shape: &[usize], fan_in: usize| -> Tensor<T> {
            let t = match init {
                Init::Zeros => Tensor::zeros(shape),
                Init::Gaussian { seed } => {
                    let mut rng = ChaCha8Rng::seed_from_u64(seed);
                    rng.set_stream(ordinal);
                    let std = (2.0 / fan_in as f64).sqrt();
                    Tensor::from_fn(shape, |_| {
                        T::from_f64_lossy(std * rng.sample::<f64, _>(StandardNormal))
                    })
                }
            };
            ordinal += 1;
            t
        };

        let mut trunk = Vec::with_capacity(spec.trunk().len());
        let mut current = input_shape.to_vec();
        for (layer, out_shape) in spec.trunk().iter().zip(&shapes) {
            trunk.push(match *layer {
                LayerSpec::Conv3d { kernel, filters, stride } => {
                    let channels = current[0];
                    TrunkLayer::Conv {
                        params: LayerParams {
                            weight: make(&[filters, channels, kernel, kernel, kernel], channels * kernel.pow(3)),
                            bias: Some(Tensor::zeros(&[filters])),
                        },
                        stride,
                        pad: LayerSpec::conv_pad(kernel),
                    }
                }
                LayerSpec::Pool3d(w) => TrunkLayer::Pool(w),
                LayerSpec::Fc { units } => {
                    let fan_in: usize = current.iter().product();
                    TrunkLayer::Fc(LayerParams {
                        weight: make(&[units, fan_in], fan_in),
                        bias: Some(Tensor::zeros(&[units])),
                    })
                }
                LayerSpec::Relu => TrunkLayer::Relu,
                LayerSpec::Softmax { .. } | LayerSpec::Code { .. } => {
                    return Err(Error::InvalidConfig("heads cannot appear in the trunk".into()))
                }
            });
            current = out_shape.clone();
        }
        let features: usize = current.iter().product();
        let classifier = LayerParams {
            weight: make(&[spec.classes(), features], features),
            bias: Some(Tensor::zeros(&[spec.classes()])),
        };
        let (code, allocation) = match spec.code_length() {
            Some(n) => (
                Some(make(&[n, features], features)),
                Some(CodeAllocation::new(spec.classes(), n)?),
            ),
            None => (None, None),
        };
        Ok(Self {
            spec,
            input_shape: input_shape.to_vec(),
            trunk,
            classifier,
            code,
            allocation,
        })
    }

    /// Rebuilds a network from its spec and parameter tensors in
    /// [`Network::params`] order.
    pub fn from_params(
        spec: NetworkSpec,
        input_shape: &[usize],
        params: Vec<Tensor<T>>,
        allocation: Option<CodeAllocation>,
    ) -> Result<Self> {
        let mut net = Self::new(spec, input_shape, Init::Zeros)?;
        if params.len() != net.params().len() {
            return Err(Error::Format(format!(
                "expected {} parameter tensors, got {}",
                net.params().len(),
                params.len()
            )));
        }
        for (slot, value) in net.params_mut().into_iter().zip(params) {
            if slot.shape() != value.shape() {
                return Err(shape_mismatch("parameter", slot.shape(), value.shape()));
            }
            *slot = value;
        }
        if let Some(alloc) = allocation {
            net = net.with_allocation(alloc)?;
        }
        Ok(net)
    }

    pub fn with_allocation(mut self, alloc: CodeAllocation) -> Result<Self> {
        match self.spec.code_length() {
            Some(n) if n == alloc.code_length() && alloc.classes() == self.spec.classes() => {
                self.allocation = Some(alloc);
                Ok(self)
            }
            Some(_) => Err(Error::InvalidConfig("allocation does not match the code head".into())),
            None => Err(Error::MissingCodeLayer),
        }
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn classes(&self) -> usize {
        self.spec.classes()
    }

    pub fn allocation(&self) -> Option<&CodeAllocation> {
        self.allocation.as_ref()
    }

    pub fn code_weight(&self) -> Option<&Tensor<T>> {
        self.code.as_ref()
    }

    pub fn classifier(&self) -> &LayerParams<T> {
        &self.classifier
    }

    pub fn feature_len(&self) -> usize {
        self.classifier.weight.shape()[1]
    }

    pub fn param_infos(&self) -> Vec<ParamInfo> {
        let mut infos = Vec::new();
        let (mut convs, mut fcs) = (0, 0);
        let mut push = |layer: String, bias: bool| {
            infos.push(ParamInfo { name: format!("{layer}.weight"), decay: true });
            if bias {
                infos.push(ParamInfo { name: format!("{layer}.bias"), decay: false });
            }
        };
        for layer in &self.trunk {
            match layer {
                TrunkLayer::Conv { .. } => {
                    convs += 1;
                    push(format!("conv{convs}"), true);
                }
                TrunkLayer::Fc(_) => {
                    fcs += 1;
                    push(format!("fc{fcs}"), true);
                }
                _ => {}
            }
        }
        push("softmax".into(), true);
        if self.code.is_some() {
            push("code".into(), false);
        }
        infos
    }

    pub fn params(&self) -> Vec<&Tensor<T>> {
        let mut out = Vec::new();
        for layer in &self.trunk {
            if let TrunkLayer::Conv { params, .. } | TrunkLayer::Fc(params) = layer {
                out.push(&params.weight);
                out.extend(params.bias.as_ref());
            }
        }
        out.push(&self.classifier.weight);
        out.extend(self.classifier.bias.as_ref());
        out.extend(self.code.as_ref());
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = Vec::new();
        for layer in &mut self.trunk {
            if let TrunkLayer::Conv { params, .. } | TrunkLayer::Fc(params) = layer {
                out.push(&mut params.weight);
                out.extend(params.bias.as_mut());
            }
        }
        out.push(&mut self.classifier.weight);
        out.extend(self.classifier.bias.as_mut());
        out.extend(self.code.as_mut());
        out
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        let cast_params = |p: &LayerParams<T>| LayerParams {
            weight: p.weight.cast(),
            bias: p.bias.as_ref().map(Tensor::cast),
        };
        Network {
            spec: self.spec.clone(),
            input_shape: self.input_shape.clone(),
            trunk: self
                .trunk
                .iter()
                .map(|l| match l {
                    TrunkLayer::Conv { params, stride, pad } => TrunkLayer::Conv {
                        params: cast_params(params),
                        stride: *stride,
                        pad: *pad,
                    },
                    TrunkLayer::Pool(w) => TrunkLayer::Pool(*w),
                    TrunkLayer::Fc(p) => TrunkLayer::Fc(cast_params(p)),
                    TrunkLayer::Relu => TrunkLayer::Relu,
                })
                .collect(),
            classifier: cast_params(&self.classifier),
            code: self.code.as_ref().map(Tensor::cast),
            allocation: self.allocation.clone(),
        }
    }

    fn layer_name(&self, index: usize) -> String {
        let kind = match &self.trunk[index] {
            TrunkLayer::Conv { .. } => "conv",
            TrunkLayer::Pool(_) => "pool",
            TrunkLayer::Fc(_) => "fc",
            TrunkLayer::Relu => "relu",
        };
        let ordinal = self.trunk[..=index]
            .iter()
            .filter(|l| std::mem::discriminant(*l) == std::mem::discriminant(&self.trunk[index]))
            .count();
        format!("{kind}{ordinal}")
    }

    pub fn trace(&self, clip: &Tensor<T>) -> Result<Trace<T>> {
        if clip.shape() != self.input_shape.as_slice() {
            return Err(shape_mismatch("network input", clip.shape(), &self.input_shape));
        }
        let mut layer_inputs = Vec::with_capacity(self.trunk.len());
        let mut pool_indices = Vec::with_capacity(self.trunk.len());
        let mut current = clip.clone();
        for (i, layer) in self.trunk.iter().enumerate() {
            let (next, idx) = match layer {
                TrunkLayer::Conv { params, stride, pad } => (conv3d_forward(&current, params, *stride, *pad)?, None),
                TrunkLayer::Pool(w) => {
                    let (y, idx) = maxpool3d_forward(&current, *w)?;
                    (y, Some(idx))
                }
                TrunkLayer::Fc(params) => (fc_forward(&current, params)?, None),
                TrunkLayer::Relu => (relu_forward(&current), None),
            };
            if !next.all_finite() {
                return Err(Error::NonFinite { layer: self.layer_name(i) });
            }
            layer_inputs.push(std::mem::replace(&mut current, next));
            pool_indices.push(idx);
        }
        let feature_shape = current.shape().to_vec();
        let features = current.flatten();
        let logits = fc_forward(&features, &self.classifier)?;
        if !logits.all_finite() {
            return Err(Error::NonFinite { layer: "softmax".into() });
        }
        let code = match &self.code {
            Some(a) => {
                let c = fc_forward(&features, &LayerParams { weight: a.clone(), bias: None })?;
                if !c.all_finite() {
                    return Err(Error::NonFinite { layer: "code".into() });
                }
                Some(c)
            }
            None => None,
        };
        Ok(Trace { layer_inputs, pool_indices, feature_shape, features, logits, code })
    }

    pub fn forward(&self, clip: &Tensor<T>) -> Result<Output<T>> {
        let trace = self.trace(clip)?;
        Ok(Output {
            probs: crate::nn::layers::softmax_forward(&trace.logits)?,
            features: trace.features,
            code: trace.code,
        })
    }

    fn target(&self, label: usize) -> Result<Option<TargetCode>> {
        self.allocation.as_ref().map(|a| build_target_code(a, label)).transpose()
    }

    /// Backpropagates `grad_features` through the trunk. Returns trunk
    /// parameter gradients in parameter order and, when asked, the input
    /// gradient.
    fn backward_trunk(
        &self,
        trace: &Trace<T>,
        grad_features: Tensor<T>,
        need_input: bool,
    ) -> Result<(Vec<Tensor<T>>, Option<Tensor<T>>)> {
        let mut grad = grad_features.into_reshaped(&trace.feature_shape)?;
        let mut rev_grads: Vec<Tensor<T>> = Vec::new();
        for (i, layer) in self.trunk.iter().enumerate().rev() {
            let x = &trace.layer_inputs[i];
            let want_input = need_input || i > 0;
            grad = match layer {
                TrunkLayer::Conv { params, stride, pad } => {
                    let g = conv3d_backward(x, params, &grad, *stride, *pad, want_input)?;
                    rev_grads.push(g.bias);
                    rev_grads.push(g.weight);
                    match g.input {
                        Some(gx) => gx,
                        None => break,
                    }
                }
                TrunkLayer::Pool(_) => {
                    let idx = trace.pool_indices[i].as_ref().expect("pool indices recorded");
                    maxpool3d_backward(&grad, idx)?
                }
                TrunkLayer::Fc(params) => {
                    let g = fc_backward(x, params, &grad)?;
                    rev_grads.push(g.bias);
                    rev_grads.push(g.weight);
                    g.input
                }
                TrunkLayer::Relu => relu_backward(x, &grad)?,
            };
        }
        rev_grads.reverse();
        let input_grad = need_input.then_some(grad);
        Ok((rev_grads, input_grad))
    }

    /// Losses and gradients of both heads for one feature vector.
    pub fn head_backward(&self, features: &Tensor<T>, label: usize, alpha: f64) -> Result<HeadGradients<T>> {
        if label >= self.classes() {
            return Err(Error::LabelOutOfRange { label, classes: self.classes() });
        }
        let alpha = T::from_f64_lossy(alpha);
        let features = features.flatten();
        let logits = fc_forward(&features, &self.classifier)?;
        let (probs, classification) = softmax_cross_entropy(&logits, label)?;
        let grad_logits = softmax_logloss_backward(&probs, label)?;
        let head = fc_backward(&features, &self.classifier, &grad_logits)?;
        let mut grad_features = head.input;

        let mut code_loss = T::zero();
        let mut code_weight = None;
        if let Some(a) = &self.code {
            let q = self.target(label)?.expect("allocation present with code head");
            let a_params = LayerParams { weight: a.clone(), bias: None };
            let code = fc_forward(&features, &a_params)?;
            code_loss = dcl_loss(&code, &q)?;
            let mut g_code = None;
            if alpha != T::zero() {
                // ∂(α L_d)/∂x_d = 2α(x_d − q)
                let grad_code = code.sub(&q.to_tensor::<T>())?.scale(alpha + alpha);
                let g = fc_backward(&features, &a_params, &grad_code)?;
                grad_features.axpy(T::one(), &g.input)?;
                g_code = Some(g.weight);
            }
            code_weight = Some(g_code.unwrap_or_else(|| Tensor::zeros(a.shape())));
        }
        if !classification.is_finite() || !code_loss.is_finite() {
            return Err(Error::NonFinite { layer: "loss".into() });
        }
        Ok(HeadGradients {
            classification,
            code: code_loss,
            features: grad_features,
            softmax_weight: head.weight,
            softmax_bias: head.bias,
            code_weight,
        })
    }

    /// `L_c + α·L_d` for one feature vector.
    pub fn head_loss(&self, features: &Tensor<T>, label: usize, alpha: f64) -> Result<f64> {
        if label >= self.classes() {
            return Err(Error::LabelOutOfRange { label, classes: self.classes() });
        }
        let features = features.flatten();
        let lc = softmax_cross_entropy(&fc_forward(&features, &self.classifier)?, label)?.1;
        let mut ld = T::zero();
        if let Some(a) = &self.code {
            let q = self.target(label)?.expect("allocation present with code head");
            ld = dcl_loss(&fc_forward(&features, &LayerParams { weight: a.clone(), bias: None })?, &q)?;
        }
        Ok((lc + T::from_f64_lossy(alpha) * ld).as_f64())
    }

    fn sample_outcome(&self, clip: &Tensor<T>, label: usize, alpha: f64) -> Result<SampleOutcome<T>> {
        let trace = self.trace(clip)?;
        let head = self.head_backward(&trace.features, label, alpha)?;
        let (mut grads, _) = self.backward_trunk(&trace, head.features, false)?;
        grads.push(head.softmax_weight);
        grads.push(head.softmax_bias);
        grads.extend(head.code_weight);
        Ok(SampleOutcome { classification: head.classification, code: head.code, grads })
    }

    fn check_batch(&self, batch: &ClipBatch<T>) -> Result<()> {
        let shape = batch.clips().shape();
        if shape.len() != self.input_shape.len() + 1 || shape[1..] != self.input_shape[..] {
            return Err(shape_mismatch("batch", &shape[1..], &self.input_shape));
        }
        Ok(())
    }

    /// Batch-mean losses and parameter gradients.
    ///
    /// Samples are evaluated in parallel; their gradients are summed in
    /// sample order, so the result does not depend on the thread count.
    pub fn forward_backward(&self, batch: &ClipBatch<T>, alpha: f64) -> Result<(LossComponents, Gradients<T>)> {
        self.check_batch(batch)?;
        let alpha_t = T::from_f64_lossy(alpha);
        let n = batch.len();
        let mut grads = Gradients::zeros_like(self);
        let (mut lc, mut ld) = (T::zero(), T::zero());
        let group = rayon::current_num_threads().max(1);
        for start in (0..n).step_by(group) {
            let outcomes: Vec<Result<SampleOutcome<T>>> = (start..(start + group).min(n))
                .into_par_iter()
                .map(|i| self.sample_outcome(&batch.sample(i)?, batch.labels()[i], alpha))
                .collect();
            for outcome in outcomes {
                let o = outcome?;
                lc += o.classification;
                ld += o.code;
                grads.accumulate(&o.grads)?;
            }
        }
        let inv = T::one() / T::from_usize(n).expect("batch size");
        grads.scale(inv);
        Ok((losses(lc * inv, ld * inv, alpha_t), grads))
    }

    /// Batch-mean losses without gradients.
    pub fn loss(&self, batch: &ClipBatch<T>, alpha: f64) -> Result<LossComponents> {
        Ok(self.loss_with_fingerprint(batch, alpha)?.0)
    }

    /// Batch-mean losses plus the combined activation-pattern fingerprint.
    pub fn loss_with_fingerprint(&self, batch: &ClipBatch<T>, alpha: f64) -> Result<(LossComponents, u64)> {
        self.check_batch(batch)?;
        let alpha_t = T::from_f64_lossy(alpha);
        let (mut lc, mut ld) = (T::zero(), T::zero());
        let mut h = DefaultHasher::new();
        for i in 0..batch.len() {
            let label = batch.labels()[i];
            let trace = self.trace(&batch.sample(i)?)?;
            trace.fingerprint(self).hash(&mut h);
            lc += softmax_cross_entropy(&trace.logits, label)?.1;
            if let Some(code) = &trace.code {
                let q = self.target(label)?.expect("allocation present with code head");
                ld += dcl_loss(code, &q)?;
            }
        }
        let inv = T::one() / T::from_usize(batch.len()).expect("batch size");
        Ok((losses(lc * inv, ld * inv, alpha_t), h.finish()))
    }

    /// Activation of code neuron `neuron` and its gradient with respect to
    /// the input clip.
    pub fn code_neuron_gradient(&self, clip: &Tensor<T>, neuron: usize) -> Result<(T, Tensor<T>)> {
        let a = self.code.as_ref().ok_or(Error::MissingCodeLayer)?;
        let n = a.shape()[0];
        if neuron >= n {
            return Err(Error::OutOfBounds(format!("code neuron {neuron} of {n}")));
        }
        let trace = self.trace(clip)?;
        let activation = trace.code.as_ref().expect("code computed").data()[neuron];
        let width = a.shape()[1];
        let row = Tensor::new(vec![width], a.data()[neuron * width..(neuron + 1) * width].to_vec())?;
        let (_, input_grad) = self.backward_trunk(&trace, row, true)?;
        Ok((activation, input_grad.expect("input gradient requested")))
    }
}

fn losses<T: Real>(lc: T, ld: T, alpha: T) -> LossComponents {
    LossComponents {
        total: (lc + alpha * ld).as_f64(),
        classification: lc.as_f64(),
        code: ld.as_f64(),
    }
}
