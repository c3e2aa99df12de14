//! Raw multimodal records.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// An `H × W × C` image, channel-last, values nominally in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Shape(format!(
                "image {height}x{width}x{channels} given {} values",
                data.len()
            )));
        }
        Ok(Image { height, width, channels, data })
    }

    pub fn filled(height: usize, width: usize, channels: usize, v: f64) -> Self {
        Image { height, width, channels, data: vec![v; height * width * channels] }
    }

    pub fn at(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// Channel-major `[C, H, W]` copy.
    pub fn to_chw(&self) -> Tensor {
        let (h, w, c) = (self.height, self.width, self.channels);
        Tensor::from_fn(&[c, h, w], |k| {
            let ch = k / (h * w);
            let y = (k / w) % h;
            let x = k % w;
            self.data[(y * w + x) * c + ch]
        })
    }

    pub fn from_chw(t: &Tensor) -> Result<Self> {
        let [c, h, w] = *t.shape() else {
            return Err(Error::Shape(format!("expected [C, H, W], got {:?}", t.shape())));
        };
        let mut img = Image::filled(h, w, c, 0.0);
        for ch in 0..c {
            for y in 0..h {
                for x in 0..w {
                    img.set(y, x, ch, t.data()[(ch * h + y) * w + x]);
                }
            }
        }
        Ok(img)
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.height, self.width, self.channels], self.data.clone()).expect("image invariant")
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let [h, w, c] = *t.shape() else {
            return Err(Error::Shape(format!("expected [H, W, C], got {:?}", t.shape())));
        };
        Image::new(h, w, c, t.data().to_vec())
    }

    pub fn mean_abs_diff(&self, other: &Image) -> f64 {
        self.data.iter().zip(&other.data).map(|(a, b)| (a - b).abs()).sum::<f64>() / self.data.len().max(1) as f64
    }
}

/// One structured source: a state id per categorical feature plus numeric values.
#[derive(Clone, Debug, PartialEq)]
pub struct StructuredSample {
    pub categorical: Vec<usize>,
    pub numeric: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Label {
    Class(usize),
    Score(f64),
    Frame(Image),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Option<Image>,
    pub video: Option<Vec<Image>>,
    pub text: Option<String>,
    pub structured: Vec<StructuredSample>,
    pub label: Label,
    pub task_id: usize,
}

impl Sample {
    pub fn has_modality(&self) -> bool {
        self.image.is_some() || self.video.is_some() || self.text.is_some() || !self.structured.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        if !self.has_modality() {
            return Err(Error::EmptyInput("sample carries no modality".into()));
        }
        if let Some(v) = &self.video {
            if v.is_empty() {
                return Err(Error::EmptyInput("video with zero frames".into()));
            }
        }
        Ok(())
    }
}
