//! Video-level aggregation, softmax and k-NN classification, fusion and
//! metrics.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{shape_mismatch, Error, Result};
use crate::image::{normalize_to_bytes, write_pgm};
use crate::nn::{Init, Network, NetworkSpec};
use crate::tensor::Tensor;
use crate::trainer::{train, TrainConfig};
use crate::video::{ClipSet, ClipSource, VectorSet};

/// Outputs of one clip. `code` is empty for nets without a code head.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipOutput {
    pub probs: Vec<f64>,
    pub code: Vec<f64>,
}

/// Clip-averaged outputs of one video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoRepresentation {
    pub mean_probs: Vec<f64>,
    pub mean_code: Vec<f64>,
}

fn mean_of<'a>(rows: impl Iterator<Item = &'a [f64]>, len: usize) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; len];
    let mut n = 0usize;
    for r in rows {
        if r.len() != len {
            return Err(shape_mismatch("aggregate", &[len], &[r.len()]));
        }
        acc.iter_mut().zip(r).for_each(|(a, &b)| *a += b);
        n += 1;
    }
    acc.iter_mut().for_each(|a| *a /= n as f64);
    Ok(acc)
}

pub fn aggregate_video(clips: &[ClipOutput]) -> Result<VideoRepresentation> {
    let first = clips.first().ok_or(Error::EmptyDataset)?;
    Ok(VideoRepresentation {
        mean_probs: mean_of(clips.iter().map(|c| c.probs.as_slice()), first.probs.len())?,
        mean_code: mean_of(clips.iter().map(|c| c.code.as_slice()), first.code.len())?,
    })
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

pub fn classify_softmax(rep: &VideoRepresentation) -> usize {
    argmax(&rep.mean_probs)
}

/// Training codes with their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCodes {
    codes: Vec<Vec<f64>>,
    labels: Vec<usize>,
    classes: usize,
}

impl LabeledCodes {
    pub fn new(codes: Vec<Vec<f64>>, labels: Vec<usize>, classes: usize) -> Result<Self> {
        if codes.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if codes.len() != labels.len() {
            return Err(shape_mismatch("labeled codes", &[codes.len()], &[labels.len()]));
        }
        let dim = codes[0].len();
        if let Some(c) = codes.iter().find(|c| c.len() != dim) {
            return Err(shape_mismatch("labeled codes", &[dim], &[c.len()]));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::LabelOutOfRange { label: l, classes });
        }
        Ok(Self { codes, labels, classes })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn codes(&self) -> &[Vec<f64>] {
        &self.codes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    fn require_global(&self, code: &[f64], k: usize) -> Result<()> {
        if code.len() != self.codes[0].len() {
            return Err(shape_mismatch("k-NN query", &[self.codes[0].len()], &[code.len()]));
        }
        if k == 0 {
            return Err(Error::InvalidConfig("k must be at least 1".into()));
        }
        if self.codes.len() < k {
            return Err(Error::InsufficientData(format!("{} training codes, k = {k}", self.codes.len())));
        }
        Ok(())
    }

    fn require_per_class(&self, code: &[f64], k: usize) -> Result<()> {
        self.require_global(code, k)?;
        let mut counts = vec![0usize; self.classes];
        self.labels.iter().for_each(|&l| counts[l] += 1);
        if let Some((c, &n)) = counts.iter().enumerate().find(|(_, &n)| n < k) {
            return Err(Error::InsufficientData(format!("class {c} has {n} training codes, k = {k}")));
        }
        Ok(())
    }

    fn distances(&self, code: &[f64]) -> Vec<f64> {
        self.codes.iter().map(|c| euclidean(c, code)).collect()
    }
}

pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Majority vote among the `k` globally nearest training codes. Vote ties go
/// to the smaller summed distance, then to the lower class index.
pub fn knn_classify(code: &[f64], train: &LabeledCodes, k: usize) -> Result<usize> {
    train.require_global(code, k)?;
    let d = train.distances(code);
    let mut order: Vec<usize> = (0..d.len()).collect();
    order.sort_by(|&a, &b| d[a].total_cmp(&d[b]));
    let mut votes = vec![0usize; train.classes];
    let mut total = vec![0.0; train.classes];
    for &i in &order[..k] {
        votes[train.labels[i]] += 1;
        total[train.labels[i]] += d[i];
    }
    let mut best = 0;
    for c in 1..train.classes {
        if votes[c] > votes[best] || (votes[c] == votes[best] && total[c] < total[best]) {
            best = c;
        }
    }
    Ok(best)
}

/// Mean distance to each class's `k` nearest training codes.
pub fn class_distances(code: &[f64], train: &LabeledCodes, k: usize) -> Result<Vec<f64>> {
    train.require_per_class(code, k)?;
    let d = train.distances(code);
    let mut per_class: Vec<Vec<f64>> = vec![Vec::new(); train.classes];
    for (i, &l) in train.labels.iter().enumerate() {
        per_class[l].push(d[i]);
    }
    Ok(per_class
        .into_iter()
        .map(|mut ds| {
            ds.sort_by(f64::total_cmp);
            ds[..k].iter().sum::<f64>() / k as f64
        })
        .collect())
}

/// `exp(−γ d²)` followed by l1 normalization.
pub fn distances_to_probs(d: &[f64], gamma: f64) -> Result<Vec<f64>> {
    if !(gamma > 0.0) {
        return Err(Error::InvalidConfig("gamma must be positive".into()));
    }
    // Shifting by the smallest distance keeps the largest weight at 1.
    let dmin = d.iter().copied().fold(f64::INFINITY, f64::min);
    let w: Vec<f64> = d.iter().map(|&di| (-gamma * (di * di - dmin * dmin)).exp()).collect();
    let s: f64 = w.iter().sum();
    Ok(w.iter().map(|x| x / s).collect())
}

pub fn code_to_probs(code: &[f64], train: &LabeledCodes, k: usize, gamma: f64) -> Result<Vec<f64>> {
    distances_to_probs(&class_distances(code, train, k)?, gamma)
}

/// `(w_ir·p_ir + w_flow·p_flow) / (w_ir + w_flow)`.
pub fn fuse_weighted(p_ir: &[f64], p_flow: &[f64], w_ir: f64, w_flow: f64) -> Result<Vec<f64>> {
    if p_ir.len() != p_flow.len() {
        return Err(shape_mismatch("fuse", &[p_ir.len()], &[p_flow.len()]));
    }
    if !(w_ir >= 0.0 && w_flow >= 0.0 && w_ir + w_flow > 0.0) {
        return Err(Error::InvalidConfig("fusion weights must be nonnegative and not both zero".into()));
    }
    if w_ir == 0.0 {
        return Ok(p_flow.to_vec());
    }
    if w_flow == 0.0 {
        return Ok(p_ir.to_vec());
    }
    let t = w_flow / (w_ir + w_flow);
    Ok(p_ir.iter().zip(p_flow).map(|(a, b)| a + t * (b - a)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionConfig {
    pub w_flow: f64,
    pub w_ir: f64,
    pub knn_k: usize,
    pub gamma: f64,
    pub nn_hidden: usize,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self { w_flow: 2.0, w_ir: 1.0, knn_k: 5, gamma: 0.05, nn_hidden: 50 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionHead {
    /// Linear map to class scores plus softmax.
    Single,
    /// Dense layer with ReLU, then the single head.
    TwoLayer { hidden: usize },
}

impl FusionHead {
    pub fn spec(self, classes: usize) -> Result<NetworkSpec> {
        match self {
            FusionHead::Single => format!("SM({classes})").parse(),
            FusionHead::TwoLayer { hidden } => format!("FC({hidden})-SM({classes})").parse(),
        }
    }
}

pub fn concat_codes(ir: &[Vec<f64>], flow: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    if ir.len() != flow.len() {
        return Err(Error::InvalidConfig(format!("streams are misaligned: {} vs {} videos", ir.len(), flow.len())));
    }
    Ok(ir.iter().zip(flow).map(|(a, b)| a.iter().chain(b).copied().collect()).collect())
}

fn to_vectors(rows: &[Vec<f64>]) -> Result<Vec<Tensor<f32>>> {
    rows.iter().map(|r| Tensor::new(vec![r.len()], r.iter().map(|&x| x as f32).collect())).collect()
}

/// Trains a fusion head on concatenated `[ir, flow]` training codes and
/// returns it with the class probabilities of every test row.
pub fn fuse_nn(
    train_rows: &[Vec<f64>],
    train_labels: &[usize],
    test_rows: &[Vec<f64>],
    classes: usize,
    head: FusionHead,
    init: Init,
    cfg: &TrainConfig,
) -> Result<(Network<f32>, Vec<Vec<f64>>)> {
    let set = VectorSet::new(to_vectors(train_rows)?, train_labels.to_vec())?;
    let net = Network::<f32>::new(head.spec(classes)?, set.shape(), init)?;
    let trained = train(net, &set, cfg, |_| {})?.checkpoint.network;
    let probs = to_vectors(test_rows)?
        .iter()
        .map(|x| Ok(trained.forward(x)?.probs.data().iter().map(|&p| f64::from(p)).collect()))
        .collect::<Result<Vec<_>>>()?;
    Ok((trained, probs))
}

/// Confusion matrix and macro-averaged per-class recognition rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub classes: usize,
    pub samples: usize,
    /// `confusion[true][predicted]`
    pub confusion: Vec<Vec<usize>>,
    /// `None` for classes without test samples.
    pub per_class_precision: Vec<Option<f64>>,
    pub excluded_classes: Vec<usize>,
    pub ap: f64,
}

pub fn metrics(predictions: &[usize], labels: &[usize], classes: usize) -> Result<Metrics> {
    if predictions.len() != labels.len() {
        return Err(shape_mismatch("metrics", &[predictions.len()], &[labels.len()]));
    }
    let mut confusion = vec![vec![0usize; classes]; classes];
    for (&p, &t) in predictions.iter().zip(labels) {
        if p >= classes || t >= classes {
            return Err(Error::LabelOutOfRange { label: p.max(t), classes });
        }
        confusion[t][p] += 1;
    }
    let per_class: Vec<Option<f64>> = confusion
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let n: usize = row.iter().sum();
            (n > 0).then(|| row[i] as f64 / n as f64)
        })
        .collect();
    let present: Vec<f64> = per_class.iter().flatten().copied().collect();
    let ap = if present.is_empty() { 0.0 } else { present.iter().sum::<f64>() / present.len() as f64 };
    Ok(Metrics {
        classes,
        samples: labels.len(),
        excluded_classes: (0..classes).filter(|&c| per_class[c].is_none()).collect(),
        per_class_precision: per_class,
        confusion,
        ap,
    })
}

impl Metrics {
    pub fn write_confusion_csv(&self, w: &mut impl Write) -> Result<()> {
        let header: Vec<String> = (0..self.classes).map(|c| format!("pred_{c}")).collect();
        writeln!(w, "true,{}", header.join(","))?;
        for (i, row) in self.confusion.iter().enumerate() {
            let cells: Vec<String> = row.iter().map(usize::to_string).collect();
            writeln!(w, "{i},{}", cells.join(","))?;
        }
        Ok(())
    }
}

/// Grayscale heatmap of a code matrix, one row per video.
pub fn write_code_heatmap(w: &mut impl Write, codes: &[Vec<f64>]) -> Result<()> {
    let width = codes.first().map_or(0, Vec::len);
    let flat: Vec<f64> = codes.iter().flatten().copied().collect();
    write_pgm(w, codes.len(), width, &normalize_to_bytes(&flat))
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Mean pairwise cosine similarity within classes and across classes.
pub fn intra_inter_cosine(codes: &[Vec<f64>], labels: &[usize]) -> (f64, f64) {
    let (mut intra, mut ni, mut inter, mut nx) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..codes.len() {
        for j in i + 1..codes.len() {
            let c = cosine(&codes[i], &codes[j]);
            if labels[i] == labels[j] {
                intra += c;
                ni += 1;
            } else {
                inter += c;
                nx += 1;
            }
        }
    }
    (intra / ni.max(1) as f64, inter / nx.max(1) as f64)
}

/// One evaluated video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoPrediction {
    pub id: String,
    pub label: usize,
    #[serde(flatten)]
    pub rep: VideoRepresentation,
}

/// Runs `net` on every clip of `set` and averages per video. Clips are
/// evaluated in parallel; results keep the set's order.
pub fn infer_videos(net: &Network<f32>, set: &ClipSet) -> Result<Vec<VideoPrediction>> {
    let outputs = (0..set.len())
        .into_par_iter()
        .map(|i| {
            let out = net.forward(&set.clip(i, 0)?)?;
            let widen = |t: &Tensor<f32>| t.data().iter().map(|&x| f64::from(x)).collect::<Vec<f64>>();
            Ok(ClipOutput { probs: widen(&out.probs), code: out.code.as_ref().map(widen).unwrap_or_default() })
        })
        .collect::<Result<Vec<_>>>()?;
    set.videos()
        .into_iter()
        .map(|(id, label, members)| {
            let clips: Vec<ClipOutput> = members.iter().map(|&i| outputs[i].clone()).collect();
            Ok(VideoPrediction { id, label, rep: aggregate_video(&clips)? })
        })
        .collect()
}

/// Predictions of the three single-stream classifiers.
#[derive(Debug, Clone, PartialEq)]
pub struct StreamPredictions {
    pub softmax: Vec<usize>,
    pub knn: Option<Vec<usize>>,
    /// Argmax of the Gaussian-kernel code probabilities.
    pub knn_probs: Option<Vec<usize>>,
}

pub fn classify_stream(
    train: &[VideoPrediction],
    test: &[VideoPrediction],
    classes: usize,
    cfg: &FusionConfig,
) -> Result<StreamPredictions> {
    let softmax = test.iter().map(|v| classify_softmax(&v.rep)).collect();
    if test.iter().chain(train).any(|v| v.rep.mean_code.is_empty()) {
        return Ok(StreamPredictions { softmax, knn: None, knn_probs: None });
    }
    let bank = LabeledCodes::new(
        train.iter().map(|v| v.rep.mean_code.clone()).collect(),
        train.iter().map(|v| v.label).collect(),
        classes,
    )?;
    let knn = test.iter().map(|v| knn_classify(&v.rep.mean_code, &bank, cfg.knn_k)).collect::<Result<_>>()?;
    let knn_probs = test
        .iter()
        .map(|v| Ok(argmax(&code_to_probs(&v.rep.mean_code, &bank, cfg.knn_k, cfg.gamma)?)))
        .collect::<Result<_>>()?;
    Ok(StreamPredictions { softmax, knn: Some(knn), knn_probs: Some(knn_probs) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionMethod {
    /// Weighted average of the clip-averaged softmax outputs.
    Late1,
    /// Weighted average of the code-based k-NN probabilities.
    Late2,
    /// Single-layer head on concatenated codes.
    Nn1,
    /// Two-layer head on concatenated codes.
    Nn2,
}

impl std::str::FromStr for FusionMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "late1" => Ok(FusionMethod::Late1),
            "late2" => Ok(FusionMethod::Late2),
            "nn1" => Ok(FusionMethod::Nn1),
            "nn2" => Ok(FusionMethod::Nn2),
            _ => Err(Error::Parse { input: s.into(), reason: "expected late1, late2, nn1 or nn2".into() }),
        }
    }
}

impl std::fmt::Display for FusionMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FusionMethod::Late1 => "late1",
            FusionMethod::Late2 => "late2",
            FusionMethod::Nn1 => "nn1",
            FusionMethod::Nn2 => "nn2",
        })
    }
}

/// Per-stream predictions on both splits.
#[derive(Debug, Clone, Copy)]
pub struct StreamSplits<'a> {
    pub train: &'a [VideoPrediction],
    pub test: &'a [VideoPrediction],
}

fn check_aligned(a: &[VideoPrediction], b: &[VideoPrediction]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::InvalidConfig(format!("streams are misaligned: {} vs {} videos", a.len(), b.len())));
    }
    for (x, y) in a.iter().zip(b) {
        if x.id != y.id || x.label != y.label {
            return Err(Error::InvalidConfig(format!("streams are misaligned at video {:?} vs {:?}", x.id, y.id)));
        }
    }
    Ok(())
}

fn code_bank(videos: &[VideoPrediction], classes: usize) -> Result<LabeledCodes> {
    LabeledCodes::new(videos.iter().map(|v| v.rep.mean_code.clone()).collect(), videos.iter().map(|v| v.label).collect(), classes)
}

/// Class probabilities of every test video from one stream: softmax means
/// for `Late1`, code k-NN probabilities otherwise.
pub fn stream_probs(
    stream: StreamSplits<'_>,
    classes: usize,
    code_based: bool,
    cfg: &FusionConfig,
) -> Result<Vec<Vec<f64>>> {
    if !code_based {
        return Ok(stream.test.iter().map(|v| v.rep.mean_probs.clone()).collect());
    }
    let bank = code_bank(stream.train, classes)?;
    stream.test.iter().map(|v| code_to_probs(&v.rep.mean_code, &bank, cfg.knn_k, cfg.gamma)).collect()
}

/// Fused test-set predictions. `train_cfg` and `seed` only matter for the
/// trained heads.
pub fn fuse_streams(
    method: FusionMethod,
    ir: StreamSplits<'_>,
    flow: StreamSplits<'_>,
    classes: usize,
    cfg: &FusionConfig,
    train_cfg: &TrainConfig,
) -> Result<Vec<usize>> {
    check_aligned(ir.train, flow.train)?;
    check_aligned(ir.test, flow.test)?;
    match method {
        FusionMethod::Late1 | FusionMethod::Late2 => {
            let code_based = method == FusionMethod::Late2;
            let p_ir = stream_probs(ir, classes, code_based, cfg)?;
            let p_flow = stream_probs(flow, classes, code_based, cfg)?;
            p_ir.iter()
                .zip(&p_flow)
                .map(|(a, b)| Ok(argmax(&fuse_weighted(a, b, cfg.w_ir, cfg.w_flow)?)))
                .collect()
        }
        FusionMethod::Nn1 | FusionMethod::Nn2 => {
            let head = if method == FusionMethod::Nn1 {
                FusionHead::Single
            } else {
                FusionHead::TwoLayer { hidden: cfg.nn_hidden }
            };
            let codes = |v: &[VideoPrediction]| v.iter().map(|p| p.rep.mean_code.clone()).collect::<Vec<_>>();
            let train_rows = concat_codes(&codes(ir.train), &codes(flow.train))?;
            let test_rows = concat_codes(&codes(ir.test), &codes(flow.test))?;
            let labels: Vec<usize> = ir.train.iter().map(|v| v.label).collect();
            let init = Init::Gaussian { seed: train_cfg.seed };
            let (_, probs) = fuse_nn(&train_rows, &labels, &test_rows, classes, head, init, train_cfg)?;
            Ok(probs.iter().map(|p| argmax(p)).collect())
        }
    }
}
