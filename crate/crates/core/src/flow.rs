//! Horn-Schunck optical flow and the 3-channel 8-bit flow image encoding.

use rayon::prelude::*;

use crate::error::{shape_mismatch, Error, Result};
use crate::tensor::Tensor;
use crate::video::VideoRecord;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowParams {
    /// Smoothness weight, in 0..255 intensity units.
    pub alpha: f64,
    pub iterations: usize,
    /// Encoding scale `s`.
    pub scale: f64,
}

impl Default for FlowParams {
    fn default() -> Self {
        Self { alpha: 10.0, iterations: 100, scale: 8.0 }
    }
}

/// Displacement in pixels per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub height: usize,
    pub width: usize,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

/// Planar `[3, H, W]` bytes: encoded u, encoded v, encoded magnitude.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlowImage {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<u8>,
}

impl FlowImage {
    pub fn channel(&self, c: usize) -> &[u8] {
        let plane = self.height * self.width;
        &self.pixels[c * plane..(c + 1) * plane]
    }
}

/// Channel mean of one `[3, H, W]` frame, scaled to 0..255.
pub fn grayscale(frame: &Tensor<f32>) -> Result<Tensor<f64>> {
    let s = frame.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::InvalidShape { shape: s.to_vec(), reason: "frame must be [3, H, W]".into() });
    }
    let plane = s[1] * s[2];
    let d = frame.data();
    Ok(Tensor::from_fn(&[s[1], s[2]], |i| {
        255.0 * (f64::from(d[i]) + f64::from(d[plane + i]) + f64::from(d[2 * plane + i])) / 3.0
    }))
}

/// Horn-Schunck flow from `a` to `b` (grayscale `[H, W]`), Jacobi iterations
/// from zero flow with replicated borders.
pub fn estimate_flow(a: &Tensor<f64>, b: &Tensor<f64>, params: &FlowParams) -> Result<FlowField> {
    if a.shape() != b.shape() {
        return Err(shape_mismatch("estimate_flow", a.shape(), b.shape()));
    }
    let s = a.shape();
    if s.len() != 2 || s[0] < 3 || s[1] < 3 {
        return Err(Error::InvalidShape { shape: s.to_vec(), reason: "flow needs frames of at least 3x3".into() });
    }
    if !(params.alpha > 0.0) {
        return Err(Error::InvalidConfig("flow alpha must be positive".into()));
    }
    let (h, w) = (s[0], s[1]);
    let (da, db) = (a.data(), b.data());
    let at = |y: isize, x: isize| -> usize {
        let y = y.clamp(0, h as isize - 1) as usize;
        let x = x.clamp(0, w as isize - 1) as usize;
        y * w + x
    };
    let n = h * w;
    let (mut ix, mut iy, mut it) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = at(y, x);
            let m = |j: usize| 0.5 * (da[j] + db[j]);
            ix[i] = 0.5 * (m(at(y, x + 1)) - m(at(y, x - 1)));
            iy[i] = 0.5 * (m(at(y + 1, x)) - m(at(y - 1, x)));
            it[i] = db[i] - da[i];
        }
    }
    let a2 = params.alpha * params.alpha;
    let (mut u, mut v) = (vec![0.0; n], vec![0.0; n]);
    let (mut nu, mut nv) = (vec![0.0; n], vec![0.0; n]);
    for _ in 0..params.iterations {
        for y in 0..h as isize {
            for x in 0..w as isize {
                let i = at(y, x);
                let nb = [at(y - 1, x), at(y + 1, x), at(y, x - 1), at(y, x + 1)];
                let ubar = 0.25 * nb.iter().map(|&j| u[j]).sum::<f64>();
                let vbar = 0.25 * nb.iter().map(|&j| v[j]).sum::<f64>();
                let t = (ix[i] * ubar + iy[i] * vbar + it[i]) / (a2 + ix[i] * ix[i] + iy[i] * iy[i]);
                nu[i] = ubar - ix[i] * t;
                nv[i] = vbar - iy[i] * t;
            }
        }
        std::mem::swap(&mut u, &mut nu);
        std::mem::swap(&mut v, &mut nv);
    }
    Ok(FlowField { height: h, width: w, u, v })
}

fn quantize(x: f64) -> u8 {
    x.round().clamp(0.0, 255.0) as u8
}

pub fn encode_flow_image(f: &FlowField, scale: f64) -> Result<FlowImage> {
    if !(scale > 0.0) {
        return Err(Error::InvalidConfig("flow scale must be positive".into()));
    }
    let n = f.height * f.width;
    let mut pixels = Vec::with_capacity(3 * n);
    pixels.extend(f.u.iter().map(|&u| quantize(128.0 + scale * u)));
    pixels.extend(f.v.iter().map(|&v| quantize(128.0 + scale * v)));
    pixels.extend(f.u.iter().zip(&f.v).map(|(&u, &v)| quantize(scale * u.hypot(v))));
    Ok(FlowImage { height: f.height, width: f.width, pixels })
}

/// Inverse of the u and v channels of [`encode_flow_image`].
pub fn decode_flow_image(img: &FlowImage, scale: f64) -> FlowField {
    let dec = |c: &[u8]| c.iter().map(|&p| (f64::from(p) - 128.0) / scale).collect();
    FlowField { height: img.height, width: img.width, u: dec(img.channel(0)), v: dec(img.channel(1)) }
}

/// Flow images for each consecutive pair of `[F, 3, H, W]` frames.
pub fn flow_images(frames: &Tensor<f32>, params: &FlowParams) -> Result<Vec<FlowImage>> {
    let s = frames.shape();
    if s.len() != 4 || s[1] != 3 {
        return Err(Error::InvalidShape { shape: s.to_vec(), reason: "frames must be [F, 3, H, W]".into() });
    }
    if s[0] < 2 {
        return Err(Error::TooShort { id: "flow input".into(), frames: s[0], needed: 2 });
    }
    let gray = (0..s[0])
        .map(|i| grayscale(&frames.index_axis0(i)?))
        .collect::<Result<Vec<_>>>()?;
    (0..s[0] - 1)
        .into_par_iter()
        .map(|i| encode_flow_image(&estimate_flow(&gray[i], &gray[i + 1], params)?, params.scale))
        .collect()
}

fn stack_images(images: &[FlowImage]) -> Result<Tensor<f32>> {
    let (h, w) = (images[0].height, images[0].width);
    let mut data = Vec::with_capacity(images.len() * 3 * h * w);
    for img in images {
        data.extend(img.pixels.iter().map(|&p| f32::from(p) / 255.0));
    }
    Tensor::new(vec![images.len(), 3, h, w], data)
}

/// `t + 1` frames `[t+1, 3, H, W]` to a network-layout flow clip
/// `[3, t, H, W]` with values in `[0, 1]`.
pub fn video_to_flow_clip(frames: &Tensor<f32>, params: &FlowParams) -> Result<Tensor<f32>> {
    stack_images(&flow_images(frames, params)?)?.permute(&[1, 0, 2, 3])
}

/// The flow stream's view of a video: `F − 1` flow frames, frames-first.
pub fn flow_video(video: &VideoRecord, params: &FlowParams) -> Result<VideoRecord> {
    if video.frame_count() < 2 {
        return Err(Error::TooShort { id: video.id.clone(), frames: video.frame_count(), needed: 2 });
    }
    VideoRecord::new(stack_images(&flow_images(&video.frames, params)?)?, video.label, video.id.clone())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn field(u: f64, v: f64) -> FlowField {
        FlowField { height: 1, width: 1, u: vec![u], v: vec![v] }
    }

    #[test]
    fn encode_examples() {
        assert_eq!(encode_flow_image(&field(0.0, 0.0), 8.0).unwrap().pixels, vec![128, 128, 0]);
        assert_eq!(encode_flow_image(&field(10.0, -10.0), 1.0).unwrap().pixels, vec![138, 118, 14]);
        assert_eq!(encode_flow_image(&field(200.0, 0.0), 8.0).unwrap().pixels[0], 255);
        assert!(encode_flow_image(&field(0.0, 0.0), 0.0).is_err());
    }

    #[test]
    fn identical_and_uniform_frames_give_zero_flow() {
        let a = Tensor::from_fn(&[5, 6], |i| ((i * 37) % 11) as f64);
        let f = estimate_flow(&a, &a, &FlowParams::default()).unwrap();
        assert!(f.u.iter().chain(&f.v).all(|&x| x == 0.0));
        let flat = Tensor::full(&[4, 4], 3.0);
        let g = estimate_flow(&flat, &Tensor::full(&[4, 4], 9.0), &FlowParams::default()).unwrap();
        assert!(g.u.iter().chain(&g.v).all(|&x| x == 0.0));
    }

    #[test]
    fn degenerate_frames_rejected() {
        let p = FlowParams::default();
        assert!(estimate_flow(&Tensor::zeros(&[1, 1]), &Tensor::zeros(&[1, 1]), &p).is_err());
        assert!(estimate_flow(&Tensor::zeros(&[3, 3]), &Tensor::zeros(&[3, 4]), &p).is_err());
    }

    #[test]
    fn clip_from_identical_frames() {
        let frames = Tensor::full(&[2, 3, 4, 5], 0.5f32);
        let clip = video_to_flow_clip(&frames, &FlowParams::default()).unwrap();
        assert_eq!(clip.shape(), &[3, 1, 4, 5]);
        let expect = [128.0 / 255.0, 128.0 / 255.0, 0.0];
        for (c, e) in expect.iter().enumerate() {
            assert!(clip.data()[c * 20..(c + 1) * 20].iter().all(|&x| x == *e as f32));
        }
        assert!(video_to_flow_clip(&Tensor::full(&[1, 3, 4, 5], 0.5f32), &FlowParams::default()).is_err());
    }
}
