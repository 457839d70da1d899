//! In-engine numeric views: pixel embedding maps, embedding vectors and
//! real-valued H×W maps. Storage on disk is f32; arithmetic here is f64.

use crate::error::{Error, Result};
use crate::tensor_io::Tensor;

/// One embedding vector (a text, a tag, or a pooled image).
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding(pub Vec<f64>);

impl Embedding {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        if t.dims().len() != 1 {
            return Err(Error::Shape(format!("embedding must be 1-d, got dims {:?}", t.dims())));
        }
        Ok(Self(t.data().iter().map(|&v| f64::from(v)).collect()))
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(vec![self.0.len()], self.0.iter().map(|&v| v as f32).collect()).expect("finite embedding")
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self(self.0.iter().map(|v| v * k).collect())
    }
}

/// H×W×C pixel embeddings, row-major with channels innermost.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelMap {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl PixelMap {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height * width * channels != data.len() {
            return Err(Error::Shape(format!(
                "pixel map {height}x{width}x{channels} needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let &[h, w, c] = t.dims() else {
            return Err(Error::Shape(format!(
                "pixel embedding map must be 3-d (H, W, C), got dims {:?}",
                t.dims()
            )));
        };
        Self::new(h, w, c, t.data().iter().map(|&v| f64::from(v)).collect())
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            vec![self.height, self.width, self.channels],
            self.data.iter().map(|&v| v as f32).collect(),
        )
        .expect("finite pixel map")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Embedding at flat position `i = h * width + w`.
    pub fn pixel(&self, i: usize) -> &[f64] {
        &self.data[i * self.channels..(i + 1) * self.channels]
    }

    pub fn pixel_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.channels..(i + 1) * self.channels]
    }

    pub fn pixels(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.channels.max(1))
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            data: vec![0.0; self.data.len()],
            ..*self
        }
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            data: self.data.iter().map(|v| v * k).collect(),
            ..*self
        }
    }

    /// Returns a copy with every pixel embedding transformed by `f`.
    pub fn map_pixels(&self, f: impl Fn(&[f64]) -> Vec<f64>) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for px in self.pixels() {
            data.extend(f(px));
        }
        Self { data, ..*self }
    }
}

/// A real-valued H×W map: similarity maps, normalized maps, pseudo-labels.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl ScalarMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height * width != values.len() {
            return Err(Error::Shape(format!(
                "map {height}x{width} needs {} values, got {}",
                height * width,
                values.len()
            )));
        }
        Ok(Self { height, width, values })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            values: vec![0.0; height * width],
        }
    }

    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let &[h, w] = t.dims() else {
            return Err(Error::Shape(format!("map must be 2-d, got dims {:?}", t.dims())));
        };
        Self::new(h, w, t.data().iter().map(|&v| f64::from(v)).collect())
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            vec![self.height, self.width],
            self.values.iter().map(|&v| v as f32).collect(),
        )
        .expect("finite map")
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, h: usize, w: usize) -> f64 {
        self.values[h * self.width + w]
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}
