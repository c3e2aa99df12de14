use rand_chacha::ChaCha8Rng;

use crate::autodiff::{ConvGeom, Tape, Var};
use crate::error::{Error, Result};
use crate::params::{init, ParamId, ParamStore};
use crate::sample::Image;
use crate::tensor::Tensor;

/// Where a feature map came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MapSource {
    Image,
    Frame(usize),
}

impl MapSource {
    /// Temporal index used by the frame embedding; stills sit at 0.
    pub fn frame_index(self) -> usize {
        match self {
            MapSource::Image => 0,
            MapSource::Frame(f) => f,
        }
    }
}

/// A channel-major `[d_m, H', W']` feature map on a tape.
#[derive(Clone, Copy, Debug)]
pub struct FeatureMap {
    pub grid: Var,
    pub source: MapSource,
}

struct ConvLayer {
    w: ParamId,
    b: ParamId,
    stride: usize,
}

/// Three 3×3 convolutions (strides 2, 2, 1) with ReLU, total stride 4.
pub struct VisionPeripheral {
    layers: Vec<ConvLayer>,
    pub in_channels: usize,
    pub d_m: usize,
}

pub const VISION_STRIDE: usize = 4;

impl VisionPeripheral {
    pub fn new(store: &mut ParamStore, rng: &mut ChaCha8Rng, in_channels: usize, d_m: usize, trainable: bool) -> Self {
        let plan = [(in_channels, 16, 2), (16, 32, 2), (32, d_m, 1)];
        let layers = plan
            .iter()
            .enumerate()
            .map(|(i, &(cin, cout, stride))| {
                let fan_in = cin * 9;
                let w = init::uniform(rng, &[cout, cin, 3, 3], (6.0 / fan_in as f64).sqrt());
                ConvLayer {
                    w: store.add(format!("vision.conv{i}.w"), w, trainable),
                    b: store.add(format!("vision.conv{i}.b"), Tensor::zeros(&[cout]), trainable),
                    stride,
                }
            })
            .collect();
        VisionPeripheral { layers, in_channels, d_m }
    }

    pub fn output_side(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if h % VISION_STRIDE != 0 || w % VISION_STRIDE != 0 || h == 0 || w == 0 {
            return Err(Error::Config(format!(
                "image {h}x{w} not divisible by the vision stride {VISION_STRIDE}"
            )));
        }
        Ok((h / VISION_STRIDE, w / VISION_STRIDE))
    }

    /// Runs the CNN on a `[C, H, W]` tape variable.
    pub fn forward(&self, tape: &mut Tape<'_>, chw: Var) -> Result<Var> {
        let mut x = chw;
        for l in &self.layers {
            let w = tape.param(l.w);
            let b = tape.param(l.b);
            x = tape.conv2d(x, w, Some(b), ConvGeom { stride: l.stride, pad: 1 })?;
            x = tape.relu(x)?;
        }
        Ok(x)
    }

    pub fn encode_image(&self, tape: &mut Tape<'_>, img: &Image) -> Result<FeatureMap> {
        self.check(img)?;
        let x = tape.constant(img.to_chw());
        Ok(FeatureMap { grid: self.forward(tape, x)?, source: MapSource::Image })
    }

    pub fn encode_video(&self, tape: &mut Tape<'_>, frames: &[Image]) -> Result<Vec<FeatureMap>> {
        if frames.is_empty() {
            return Err(Error::EmptyInput("video with zero frames".into()));
        }
        frames
            .iter()
            .enumerate()
            .map(|(f, img)| {
                let fm = self.encode_image(tape, img)?;
                Ok(FeatureMap { source: MapSource::Frame(f), ..fm })
            })
            .collect()
    }

    /// Forward pass outside any training tape, for precomputing frozen features.
    pub fn features(&self, store: &ParamStore, img: &Image) -> Result<Tensor> {
        self.check(img)?;
        let mut tape = Tape::with_params(store);
        let x = tape.constant(img.to_chw());
        let y = self.forward(&mut tape, x)?;
        Ok(tape.tensor(y))
    }

    fn check(&self, img: &Image) -> Result<()> {
        if img.channels != self.in_channels {
            return Err(Error::Config(format!(
                "image has {} channels, vision peripheral expects {}",
                img.channels, self.in_channels
            )));
        }
        self.output_side(img.height, img.width).map(|_| ())
    }

    pub fn params(&self) -> Vec<ParamId> {
        self.layers.iter().flat_map(|l| [l.w, l.b]).collect()
    }
}
