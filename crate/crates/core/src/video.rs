//! Labeled videos, clip splitting, resize/crop, a synthetic motion dataset
//! and the on-disk dataset layout.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{shape_mismatch, Error, Result};
use crate::tensor::{Real, Tensor};

/// A video as frames-first `[F, 3, H, W]` with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoRecord {
    pub frames: Tensor<f32>,
    pub label: usize,
    pub id: String,
}

impl VideoRecord {
    pub fn new(frames: Tensor<f32>, label: usize, id: impl Into<String>) -> Result<Self> {
        if frames.rank() != 4 || frames.shape()[1] != 3 {
            return Err(Error::InvalidShape {
                shape: frames.shape().to_vec(),
                reason: "video frames must be [F, 3, H, W]".into(),
            });
        }
        Ok(Self { frames, label, id: id.into() })
    }

    pub fn frame_count(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn frame_size(&self) -> (usize, usize) {
        (self.frames.shape()[2], self.frames.shape()[3])
    }
}

/// A mini-batch of network-layout clips `[B, 3, t, h, w]` and their labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipBatch<T> {
    clips: Tensor<T>,
    labels: Vec<usize>,
    provenance: Vec<(String, usize)>,
}

impl<T: Real> ClipBatch<T> {
    pub fn new(clips: Tensor<T>, labels: Vec<usize>, provenance: Vec<(String, usize)>) -> Result<Self> {
        let b = clips.shape().first().copied().unwrap_or(0);
        if clips.rank() < 2 || labels.len() != b || provenance.len() != b {
            return Err(Error::InvalidShape {
                shape: clips.shape().to_vec(),
                reason: format!("{} labels and {} provenance entries", labels.len(), provenance.len()),
            });
        }
        Ok(Self { clips, labels, provenance })
    }

    /// Builds a batch from individual samples sharing one shape.
    pub fn from_samples(samples: &[Tensor<T>], labels: Vec<usize>, provenance: Vec<(String, usize)>) -> Result<Self> {
        Self::new(Tensor::stack(samples)?, labels, provenance)
    }

    /// Gathers `indices` from `source`, cropping each clip with its own seed.
    pub fn gather(source: &dyn ClipSource, indices: &[usize], seed: u64) -> Result<Self> {
        let mut samples = Vec::with_capacity(indices.len());
        let mut labels = Vec::with_capacity(indices.len());
        let mut provenance = Vec::with_capacity(indices.len());
        for (pos, &i) in indices.iter().enumerate() {
            let clip_seed = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(pos as u64);
            samples.push(source.clip(i, clip_seed)?.cast::<T>());
            labels.push(source.label(i));
            provenance.push(source.provenance(i));
        }
        Self::from_samples(&samples, labels, provenance)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn clips(&self) -> &Tensor<T> {
        &self.clips
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn provenance(&self) -> &[(String, usize)] {
        &self.provenance
    }

    pub fn sample(&self, i: usize) -> Result<Tensor<T>> {
        self.clips.index_axis0(i)
    }
}

/// Indexed collection of training samples.
pub trait ClipSource: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn label(&self, index: usize) -> usize;

    fn provenance(&self, index: usize) -> (String, usize);

    /// Sample `index` in network layout. `seed` drives any augmentation.
    fn clip(&self, index: usize, seed: u64) -> Result<Tensor<f32>>;
}

/// Non-overlapping `t`-frame windows; trailing frames are dropped.
pub fn split_clips(video: &VideoRecord, t: usize) -> Result<Vec<Tensor<f32>>> {
    let f = video.frame_count();
    if t == 0 || f < t {
        return Err(Error::TooShort { id: video.id.clone(), frames: f, needed: t });
    }
    let (h, w) = video.frame_size();
    (0..f / t)
        .map(|i| video.frames.slice(&[i * t..(i + 1) * t, 0..3, 0..h, 0..w]))
        .collect()
}

/// `[t, C, H, W]` → `[C, t, H, W]`.
pub fn to_network_layout(clip: &Tensor<f32>) -> Result<Tensor<f32>> {
    clip.permute(&[1, 0, 2, 3])
}

/// Bilinear resize of `[F, C, H, W]` frames with half-pixel centers.
pub fn resize_bilinear(frames: &Tensor<f32>, height: usize, width: usize) -> Result<Tensor<f32>> {
    if frames.rank() != 4 || height == 0 || width == 0 {
        return Err(Error::InvalidShape { shape: frames.shape().to_vec(), reason: "resize needs [F, C, H, W]".into() });
    }
    let s = frames.shape();
    let (f, c, h, w) = (s[0], s[1], s[2], s[3]);
    if (h, w) == (height, width) {
        return Ok(frames.clone());
    }
    let axis = |out: usize, src: usize| -> Vec<(usize, usize, f32)> {
        let scale = src as f64 / out as f64;
        (0..out)
            .map(|o| {
                let pos = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
                let lo = pos.floor() as usize;
                let hi = (lo + 1).min(src - 1);
                (lo, hi, (pos - lo as f64) as f32)
            })
            .collect()
    };
    let ys = axis(height, h);
    let xs = axis(width, w);
    let src = frames.data();
    let mut out = Vec::with_capacity(f * c * height * width);
    for plane in 0..f * c {
        let base = plane * h * w;
        for &(y0, y1, fy) in &ys {
            for &(x0, x1, fx) in &xs {
                let p = |y: usize, x: usize| src[base + y * w + x];
                let top = p(y0, x0) * (1.0 - fx) + p(y0, x1) * fx;
                let bottom = p(y1, x0) * (1.0 - fx) + p(y1, x1) * fx;
                out.push(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    Tensor::new(vec![f, c, height, width], out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CropMode {
    Random { seed: u64 },
    Center,
}

/// Top-left corner of a `crop` window inside `frame`.
pub fn crop_offsets(frame: (usize, usize), crop: (usize, usize), mode: CropMode) -> Result<(usize, usize)> {
    if crop.0 == 0 || crop.1 == 0 || crop.0 > frame.0 || crop.1 > frame.1 {
        return Err(Error::InvalidConfig(format!("crop {crop:?} does not fit in frame {frame:?}")));
    }
    Ok(match mode {
        CropMode::Center => ((frame.0 - crop.0) / 2, (frame.1 - crop.1) / 2),
        CropMode::Random { seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (rng.random_range(0..=frame.0 - crop.0), rng.random_range(0..=frame.1 - crop.1))
        }
    })
}

/// Spatial crop applied identically to every frame of `[F, C, H, W]`.
pub fn crop_frames(frames: &Tensor<f32>, crop: (usize, usize), mode: CropMode) -> Result<Tensor<f32>> {
    let s = frames.shape();
    if s.len() != 4 {
        return Err(Error::InvalidShape { shape: s.to_vec(), reason: "crop needs [F, C, H, W]".into() });
    }
    let (y, x) = crop_offsets((s[2], s[3]), crop, mode)?;
    frames.slice(&[0..s[0], 0..s[1], y..y + crop.0, x..x + crop.1])
}

pub fn resize_and_crop(
    frames: &Tensor<f32>,
    resize: (usize, usize),
    crop: (usize, usize),
    mode: CropMode,
) -> Result<Tensor<f32>> {
    crop_frames(&resize_bilinear(frames, resize.0, resize.1)?, crop, mode)
}

/// Motion of the bright blob in a synthetic video.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Motion {
    /// Constant velocity; components in {-1, 0, 1}.
    Translate { dx: i8, dy: i8 },
    OscillateHorizontal,
    OscillateVertical,
    Expand,
    Contract,
}

impl Motion {
    /// The program list used for class `c`. The first six are right, left,
    /// down, up, horizontal oscillation and expansion.
    pub fn for_class(c: usize) -> Option<Motion> {
        use Motion::*;
        const PROGRAMS: [Motion; 12] = [
            Translate { dx: 1, dy: 0 },
            Translate { dx: -1, dy: 0 },
            Translate { dx: 0, dy: 1 },
            Translate { dx: 0, dy: -1 },
            OscillateHorizontal,
            Expand,
            Translate { dx: 1, dy: 1 },
            Translate { dx: -1, dy: -1 },
            Translate { dx: 1, dy: -1 },
            Translate { dx: -1, dy: 1 },
            OscillateVertical,
            Contract,
        ];
        PROGRAMS.get(c).copied()
    }

    /// Blob center `(y, x)` as a fraction of the frame and radius as a fraction
    /// of the shorter side, at progress `s ∈ [0, 1]`, before per-video jitter.
    pub fn state(self, s: f64) -> (f64, f64, f64) {
        let base_r = 0.14;
        match self {
            Motion::Translate { dx, dy } => {
                let travel = 0.5;
                let y = 0.5 + f64::from(dy) * travel * (s - 0.5);
                let x = 0.5 + f64::from(dx) * travel * (s - 0.5);
                (y, x, base_r)
            }
            Motion::OscillateHorizontal => (0.5, 0.5 + 0.22 * (3.0 * std::f64::consts::PI * s).sin(), base_r),
            Motion::OscillateVertical => (0.5 + 0.22 * (3.0 * std::f64::consts::PI * s).sin(), 0.5, base_r),
            Motion::Expand => (0.5, 0.5, 0.07 + 0.18 * s),
            Motion::Contract => (0.5, 0.5, 0.25 - 0.18 * s),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub videos_per_class: usize,
    /// Standard deviation of additive Gaussian pixel noise.
    pub noise: f64,
    /// Per-video random variation of position, speed, size and brightness.
    pub jitter: bool,
    pub seed: u64,
}

fn render_video(spec: &SyntheticSpec, motion: Motion, rng: &mut ChaCha8Rng) -> Tensor<f32> {
    let (h, w, f) = (spec.height, spec.width, spec.frames);
    let short = h.min(w) as f64;
    let (oy, ox, speed, size, peak, bg) = if spec.jitter {
        (
            rng.random_range(-0.06..0.06),
            rng.random_range(-0.06..0.06),
            rng.random_range(0.85..1.15),
            rng.random_range(0.85..1.15),
            rng.random_range(0.65..0.9),
            rng.random_range(0.05..0.15),
        )
    } else {
        (0.0, 0.0, 1.0, 1.0, 0.8, 0.1)
    };
    let mut data = Vec::with_capacity(f * 3 * h * w);
    let mut plane = vec![0f32; h * w];
    for i in 0..f {
        let s = if f > 1 { i as f64 / (f - 1) as f64 } else { 0.0 };
        let s = (0.5 + (s - 0.5) * speed).clamp(0.0, 1.0);
        let (cy, cx, r) = motion.state(s);
        let (cy, cx) = ((cy + oy) * h as f64, (cx + ox) * w as f64);
        let sigma = r * size * short;
        for y in 0..h {
            for x in 0..w {
                let d2 = (y as f64 + 0.5 - cy).powi(2) + (x as f64 + 0.5 - cx).powi(2);
                let mut v = bg + peak * (-d2 / (2.0 * sigma * sigma)).exp();
                if spec.noise > 0.0 {
                    v += spec.noise * rng.sample::<f64, _>(StandardNormal);
                }
                plane[y * w + x] = v.clamp(0.0, 1.0) as f32;
            }
        }
        for _ in 0..3 {
            data.extend_from_slice(&plane);
        }
    }
    Tensor::new(vec![f, 3, h, w], data).expect("consistent synthetic shape")
}

/// Class-balanced synthetic videos, ordered by class then index.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<VideoRecord>> {
    if spec.classes == 0 || spec.videos_per_class == 0 || spec.frames == 0 || spec.height < 3 || spec.width < 3 {
        return Err(Error::InvalidConfig(format!("degenerate synthetic spec {spec:?}")));
    }
    let mut out = Vec::with_capacity(spec.classes * spec.videos_per_class);
    for c in 0..spec.classes {
        let motion = Motion::for_class(c)
            .ok_or_else(|| Error::InvalidConfig(format!("no motion program for class {c}")))?;
        for v in 0..spec.videos_per_class {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream((c * spec.videos_per_class + v) as u64);
            let frames = render_video(spec, motion, &mut rng);
            out.push(VideoRecord::new(frames, c, format!("c{c:02}_v{v:03}"))?);
        }
    }
    Ok(out)
}

/// Seeded per-class split with `per_class_train` training videos per class.
pub fn train_test_split(
    videos: &[VideoRecord],
    per_class_train: usize,
    seed: u64,
) -> Result<(Vec<VideoRecord>, Vec<VideoRecord>)> {
    if videos.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let classes = videos.iter().map(|v| v.label).max().unwrap_or(0) + 1;
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); classes];
    for (i, v) in videos.iter().enumerate() {
        by_class[v.label].push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut train_idx = Vec::new();
    let mut test_idx = Vec::new();
    for (c, members) in by_class.iter_mut().enumerate() {
        if members.len() <= per_class_train {
            return Err(Error::InsufficientData(format!(
                "class {c} has {} videos, needs more than {per_class_train}",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        let (tr, te) = members.split_at(per_class_train);
        train_idx.extend_from_slice(tr);
        test_idx.extend_from_slice(te);
    }
    train_idx.sort_unstable();
    test_idx.sort_unstable();
    let pick = |idx: &[usize]| idx.iter().map(|&i| videos[i].clone()).collect();
    Ok((pick(&train_idx), pick(&test_idx)))
}

pub const MANIFEST: &str = "manifest.txt";

/// Writes one directory per class, one tensor blob per video, and a manifest
/// of `relative-path label frame-count` lines.
pub fn save_dataset(dir: &Path, videos: &[VideoRecord]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut manifest = BufWriter::new(fs::File::create(dir.join(MANIFEST))?);
    for v in videos {
        if v.id.is_empty() || v.id.contains(['/', '\\', ' ']) {
            return Err(Error::InvalidConfig(format!("video id {:?} is not a plain file name", v.id)));
        }
        let rel = format!("class_{:02}/{}.t3d", v.label, v.id);
        let path = dir.join(&rel);
        fs::create_dir_all(path.parent().expect("class directory"))?;
        let mut w = BufWriter::new(fs::File::create(&path)?);
        v.frames.write_to(&mut w)?;
        w.flush()?;
        writeln!(manifest, "{rel} {} {}", v.label, v.frame_count())?;
    }
    manifest.flush()?;
    Ok(())
}

pub fn load_dataset(dir: &Path) -> Result<Vec<VideoRecord>> {
    let manifest = BufReader::new(fs::File::open(dir.join(MANIFEST))?);
    let mut out = Vec::new();
    for (n, line) in manifest.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split_whitespace().collect();
        let bad = |reason: &str| Error::Parse { input: line.clone(), reason: format!("manifest line {}: {reason}", n + 1) };
        let [rel, label, frames] = parts[..] else {
            return Err(bad("expected `path label frames`"));
        };
        let label: usize = label.parse().map_err(|_| bad("bad label"))?;
        let frames: usize = frames.parse().map_err(|_| bad("bad frame count"))?;
        let mut r = BufReader::new(fs::File::open(dir.join(rel))?);
        let tensor = Tensor::<f32>::read_from(&mut r)?;
        if tensor.shape().first() != Some(&frames) {
            return Err(bad("frame count disagrees with the blob"));
        }
        let id = Path::new(rel)
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| bad("bad path"))?
            .to_string();
        out.push(VideoRecord::new(tensor, label, id)?);
    }
    if out.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(out)
}

/// Clips cut from a set of videos, cropped on demand.
#[derive(Debug, Clone)]
pub struct ClipSet {
    clips: Vec<Tensor<f32>>,
    labels: Vec<usize>,
    provenance: Vec<(String, usize)>,
    crop: (usize, usize),
    random_crop: bool,
    norm: Option<ChannelNorm>,
}

/// Per-channel affine input normalization `(x - mean) / std`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChannelNorm {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl ChannelNorm {
    pub fn offset(offset: f32) -> Self {
        Self { mean: [offset; 3], std: [1.0; 3] }
    }

    /// Applies to a `[3, ...]` tensor.
    pub fn apply(&self, x: &mut Tensor<f32>) {
        let per = x.len() / 3;
        for (i, v) in x.data_mut().iter_mut().enumerate() {
            let c = i / per;
            *v = (*v - self.mean[c]) / self.std[c];
        }
    }
}

impl ClipSet {
    /// Splits every video into `t`-frame clips. Videos shorter than `t` are
    /// an error.
    pub fn from_videos(videos: &[VideoRecord], t: usize, crop: (usize, usize), random_crop: bool) -> Result<Self> {
        if videos.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut set = Self {
            clips: Vec::new(),
            labels: Vec::new(),
            provenance: Vec::new(),
            crop,
            random_crop,
            norm: None,
        };
        for v in videos {
            crop_offsets(v.frame_size(), crop, CropMode::Center)?;
            for (i, clip) in split_clips(v, t)?.into_iter().enumerate() {
                set.clips.push(clip);
                set.labels.push(v.label);
                set.provenance.push((v.id.clone(), i));
            }
        }
        Ok(set)
    }

    pub fn with_norm(mut self, norm: ChannelNorm) -> Self {
        self.norm = Some(norm);
        self
    }

    /// Per-channel mean and standard deviation over every stored frame,
    /// with the deviation floored at `min_std`.
    pub fn channel_stats(&self, min_std: f32) -> ChannelNorm {
        let mut sum = [0f64; 3];
        let mut sq = [0f64; 3];
        let mut n = 0usize;
        for clip in &self.clips {
            let plane = clip.shape()[2] * clip.shape()[3];
            for (i, &v) in clip.data().iter().enumerate() {
                let c = (i / plane) % 3;
                sum[c] += f64::from(v);
                sq[c] += f64::from(v) * f64::from(v);
            }
            n += clip.len() / 3;
        }
        let n = n.max(1) as f64;
        let mean = sum.map(|s| s / n);
        let mut std = [0f32; 3];
        for c in 0..3 {
            std[c] = ((sq[c] / n - mean[c] * mean[c]).max(0.0).sqrt() as f32).max(min_std);
        }
        ChannelNorm { mean: mean.map(|m| m as f32), std }
    }

    /// Same clips with center crops.
    pub fn center_cropped(&self) -> Self {
        Self { random_crop: false, ..self.clone() }
    }

    /// Clip indices grouped by video, in first-appearance order.
    pub fn videos(&self) -> Vec<(String, usize, Vec<usize>)> {
        let mut out: Vec<(String, usize, Vec<usize>)> = Vec::new();
        for (i, (id, _)) in self.provenance.iter().enumerate() {
            match out.last_mut() {
                Some((last, _, members)) if last == id => members.push(i),
                _ => out.push((id.clone(), self.labels[i], vec![i])),
            }
        }
        out
    }

    pub fn shape(&self) -> Vec<usize> {
        let s = self.clips[0].shape();
        vec![s[1], s[0], self.crop.0, self.crop.1]
    }
}

impl ClipSource for ClipSet {
    fn len(&self) -> usize {
        self.clips.len()
    }

    fn label(&self, index: usize) -> usize {
        self.labels[index]
    }

    fn provenance(&self, index: usize) -> (String, usize) {
        self.provenance[index].clone()
    }

    fn clip(&self, index: usize, seed: u64) -> Result<Tensor<f32>> {
        let clip = self
            .clips
            .get(index)
            .ok_or_else(|| Error::OutOfBounds(format!("clip {index} of {}", self.clips.len())))?;
        let mode = if self.random_crop { CropMode::Random { seed } } else { CropMode::Center };
        let mut out = to_network_layout(&crop_frames(clip, self.crop, mode)?)?;
        if let Some(norm) = &self.norm {
            norm.apply(&mut out);
        }
        Ok(out)
    }
}

/// Plain feature vectors with labels, used to train fusion heads.
#[derive(Debug, Clone)]
pub struct VectorSet {
    vectors: Vec<Tensor<f32>>,
    labels: Vec<usize>,
}

impl VectorSet {
    pub fn new(vectors: Vec<Tensor<f32>>, labels: Vec<usize>) -> Result<Self> {
        let first = vectors.first().ok_or(Error::EmptyDataset)?.shape().to_vec();
        if labels.len() != vectors.len() {
            return Err(shape_mismatch("vector set", &[vectors.len()], &[labels.len()]));
        }
        if let Some(v) = vectors.iter().find(|v| v.shape() != first.as_slice()) {
            return Err(shape_mismatch("vector set", &first, v.shape()));
        }
        Ok(Self { vectors, labels })
    }

    pub fn shape(&self) -> &[usize] {
        self.vectors[0].shape()
    }
}

impl ClipSource for VectorSet {
    fn len(&self) -> usize {
        self.vectors.len()
    }

    fn label(&self, index: usize) -> usize {
        self.labels[index]
    }

    fn provenance(&self, index: usize) -> (String, usize) {
        (format!("row{index}"), 0)
    }

    fn clip(&self, index: usize, _seed: u64) -> Result<Tensor<f32>> {
        self.vectors
            .get(index)
            .cloned()
            .ok_or_else(|| Error::OutOfBounds(format!("vector {index} of {}", self.vectors.len())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn video(frames: usize) -> VideoRecord {
        VideoRecord::new(Tensor::from_fn(&[frames, 3, 2, 2], |i| i as f32), 0, "v").unwrap()
    }

    #[test]
    fn split_examples() {
        let clips = split_clips(&video(40), 16).unwrap();
        assert_eq!(clips.len(), 2);
        assert_eq!(clips[1].data()[0], (16 * 12) as f32);
        let one = split_clips(&video(16), 16).unwrap();
        assert_eq!(one[0], video(16).frames);
        assert!(matches!(split_clips(&video(15), 16), Err(Error::TooShort { frames: 15, .. })));
    }

    #[test]
    fn center_crop_offsets() {
        assert_eq!(crop_offsets((128, 171), (112, 112), CropMode::Center).unwrap(), (8, 29));
        assert_eq!(crop_offsets((4, 4), (4, 4), CropMode::Random { seed: 5 }).unwrap(), (0, 0));
        assert!(crop_offsets((4, 4), (5, 4), CropMode::Center).is_err());
    }

    #[test]
    fn resize_constant_and_identity() {
        let c = Tensor::full(&[2, 3, 5, 7], 0.25f32);
        let r = resize_bilinear(&c, 128, 171).unwrap();
        assert!(r.data().iter().all(|&v| (v - 0.25).abs() < 1e-7));
        let x = Tensor::from_fn(&[1, 1, 3, 4], |i| i as f32);
        assert_eq!(resize_bilinear(&x, 3, 4).unwrap(), x);
    }

    #[test]
    fn resize_doubles_linear_ramp() {
        let x = Tensor::from_fn(&[1, 1, 1, 4], |i| i as f32);
        let r = resize_bilinear(&x, 1, 8).unwrap();
        assert_eq!(r.data(), &[0.0, 0.25, 0.75, 1.25, 1.75, 2.25, 2.75, 3.0]);
    }

    #[test]
    fn clipset_groups_videos() {
        let a = video(17);
        let mut b = video(8);
        b.id = "w".into();
        b.label = 1;
        let set = ClipSet::from_videos(&[a, b], 8, (2, 2), false).unwrap();
        assert_eq!(set.len(), 3);
        assert_eq!(set.videos(), vec![("v".into(), 0, vec![0, 1]), ("w".into(), 1, vec![2])]);
        assert_eq!(set.clip(2, 0).unwrap().shape(), &[3, 8, 2, 2]);
        assert_eq!(set.shape(), vec![3, 8, 2, 2]);
    }
}
