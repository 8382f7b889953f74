//! Plain row-major containers for intensity images, normal maps and masks.
//!
//! Row 0 is the top of the image. Camera coordinates put `+x` to the right,
//! `+y` up and `+z` toward the viewer.

use crate::error::{Error, Result};
use crate::geometry::UnitVector3;

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Image {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn from_data(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Input(format!(
                "{} values do not fill a {height}x{width}x{channels} image",
                data.len()
            )));
        }
        Ok(Image {
            height,
            width,
            channels,
            data,
        })
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

    pub fn n_pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn pixel(&self, index: usize) -> &[f64] {
        &self.data[index * self.channels..(index + 1) * self.channels]
    }

    pub fn pixel_mut(&mut self, index: usize) -> &mut [f64] {
        &mut self.data[index * self.channels..(index + 1) * self.channels]
    }

    /// Channel mean at a pixel.
    pub fn gray(&self, index: usize) -> f64 {
        let p = self.pixel(index);
        p.iter().sum::<f64>() / p.len() as f64
    }

    pub fn scale(&mut self, c: f64) {
        self.data.iter_mut().for_each(|v| *v *= c);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    height: usize,
    width: usize,
    data: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Input(format!(
                "{} mask entries do not fill {height}x{width}",
                data.len()
            )));
        }
        Ok(Mask {
            height,
            width,
            data,
        })
    }

    pub fn full(height: usize, width: usize) -> Self {
        Mask {
            height,
            width,
            data: vec![true; height * width],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn get(&self, index: usize) -> bool {
        self.data[index]
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&m| m).count()
    }

    pub fn indices(&self) -> Vec<usize> {
        self.data
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
            .collect()
    }
}

/// Per-pixel normals. Masked-out pixels hold `[0, 0, 0]`.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalMap {
    height: usize,
    width: usize,
    data: Vec<[f64; 3]>,
}

impl NormalMap {
    pub fn zeros(height: usize, width: usize) -> Self {
        NormalMap {
            height,
            width,
            data: vec![[0.0; 3]; height * width],
        }
    }

    pub fn from_data(height: usize, width: usize, data: Vec<[f64; 3]>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Input(format!(
                "{} normals do not fill {height}x{width}",
                data.len()
            )));
        }
        Ok(NormalMap {
            height,
            width,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[[f64; 3]] {
        &self.data
    }

    pub fn get(&self, index: usize) -> [f64; 3] {
        self.data[index]
    }

    pub fn set(&mut self, index: usize, n: [f64; 3]) {
        self.data[index] = n;
    }

    pub fn unit(&self, index: usize) -> Result<UnitVector3> {
        let [x, y, z] = self.data[index];
        UnitVector3::normalize(x, y, z)
    }
}
