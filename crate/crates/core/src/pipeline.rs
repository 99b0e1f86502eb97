//! Profiles and stream plumbing shared by the command line and the
//! end-to-end tests.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::eval::{infer_videos, VideoPrediction};
use crate::flow::{flow_video, FlowParams};
use crate::nn::{Init, Network, NetworkSpec, REFERENCE_SPEC};
use crate::trainer::{train, LossRecord, TrainConfig, TrainOutcome};
use crate::video::{resize_bilinear, ClipSet, SyntheticSpec, VideoRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    /// Desk-scale geometry used by the end-to-end tests.
    Tiny,
    /// Reference geometry: 128×171 frames, 112×112 crops, 16-frame clips.
    Full,
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tiny" => Ok(Profile::Tiny),
            "full" => Ok(Profile::Full),
            _ => Err(Error::Parse { input: s.into(), reason: "expected tiny or full".into() }),
        }
    }
}

impl fmt::Display for Profile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Profile::Tiny => "tiny",
            Profile::Full => "full",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Ir,
    Flow,
}

impl FromStr for Stream {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ir" => Ok(Stream::Ir),
            "flow" => Ok(Stream::Flow),
            _ => Err(Error::Parse { input: s.into(), reason: "expected ir or flow".into() }),
        }
    }
}

impl fmt::Display for Stream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stream::Ir => "ir",
            Stream::Flow => "flow",
        })
    }
}

/// Geometry, network and training defaults of a profile.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileConfig {
    pub frame: (usize, usize),
    pub crop: (usize, usize),
    pub clip_len: usize,
    pub classes: usize,
    pub frames_per_video: usize,
    pub videos_per_class: usize,
    pub train_per_class: usize,
    pub noise: f64,
    pub spec: String,
    pub train: TrainConfig,
}

pub const TINY_SPEC: &str = "C(3,8,1)-P(1,2,1,2)-C(3,16,1)-P(2,2,2,2)-FC(64)-FC(64)-SM(6)-DC(60)";

impl Profile {
    pub fn config(self) -> ProfileConfig {
        match self {
            Profile::Tiny => ProfileConfig {
                frame: (24, 32),
                crop: (20, 28),
                clip_len: 8,
                classes: 6,
                frames_per_video: 17,
                videos_per_class: 50,
                train_per_class: 30,
                noise: 0.03,
                spec: TINY_SPEC.into(),
                train: TrainConfig {
                    learning_rate: 0.003,
                    batch_size: 16,
                    weight_decay: 5e-4,
                    max_iterations: 400,
                    momentum: 0.9,
                    ..TrainConfig::default()
                },
            },
            Profile::Full => ProfileConfig {
                frame: (128, 171),
                crop: (112, 112),
                clip_len: 16,
                classes: 12,
                frames_per_video: 33,
                videos_per_class: 50,
                train_per_class: 30,
                noise: 0.03,
                spec: REFERENCE_SPEC.into(),
                train: TrainConfig::default(),
            },
        }
    }
}

impl ProfileConfig {
    pub fn synthetic(&self, seed: u64) -> SyntheticSpec {
        SyntheticSpec {
            classes: self.classes,
            height: self.frame.0,
            width: self.frame.1,
            frames: self.frames_per_video,
            videos_per_class: self.videos_per_class,
            noise: self.noise,
            jitter: true,
            seed,
        }
    }

    pub fn network_spec(&self) -> Result<NetworkSpec> {
        self.spec.parse()
    }

    pub fn input_shape(&self) -> Vec<usize> {
        vec![3, self.clip_len, self.crop.0, self.crop.1]
    }

    pub fn new_network(&self, seed: u64) -> Result<Network<f32>> {
        Network::new(self.network_spec()?, &self.input_shape(), Init::Gaussian { seed })
    }
}

/// Resizes to the profile frame size and, for the flow stream, replaces each
/// video by its flow images.
pub fn prepare_stream(videos: &[VideoRecord], stream: Stream, profile: &ProfileConfig, flow: &FlowParams) -> Result<Vec<VideoRecord>> {
    videos
        .par_iter()
        .map(|v| {
            let resized = VideoRecord::new(resize_bilinear(&v.frames, profile.frame.0, profile.frame.1)?, v.label, v.id.clone())?;
            match stream {
                Stream::Ir => Ok(resized),
                Stream::Flow => flow_video(&resized, flow),
            }
        })
        .collect()
}

/// Floor for the per-channel input deviation.
pub const MIN_INPUT_STD: f32 = 1e-3;

/// Training clips use random crops, evaluation clips center crops. Both are
/// standardized per channel with training-set statistics.
pub fn clip_sets(train: &[VideoRecord], test: &[VideoRecord], profile: &ProfileConfig) -> Result<(ClipSet, ClipSet)> {
    let train = ClipSet::from_videos(train, profile.clip_len, profile.crop, true)?;
    let norm = train.channel_stats(MIN_INPUT_STD);
    Ok((train.with_norm(norm), ClipSet::from_videos(test, profile.clip_len, profile.crop, false)?.with_norm(norm)))
}

/// Result of training and evaluating one stream.
#[derive(Debug, Clone)]
pub struct StreamRun {
    pub outcome: TrainOutcome<f32>,
    pub train_predictions: Vec<VideoPrediction>,
    pub test_predictions: Vec<VideoPrediction>,
}

/// Trains a fresh network on prepared stream videos and evaluates it on both
/// splits.
pub fn run_stream(
    train_videos: &[VideoRecord],
    test_videos: &[VideoRecord],
    profile: &ProfileConfig,
    cfg: &TrainConfig,
    on_step: impl FnMut(&LossRecord),
) -> Result<StreamRun> {
    let (train_set, test_set) = clip_sets(train_videos, test_videos, profile)?;
    let net = profile.new_network(cfg.seed)?;
    let outcome = train(net, &train_set, cfg, on_step)?;
    let net = &outcome.checkpoint.network;
    let train_predictions = infer_videos(net, &train_set.center_cropped())?;
    let test_predictions = infer_videos(net, &test_set)?;
    Ok(StreamRun { outcome, train_predictions, test_predictions })
}
