//! Soft selection of `M` out of `K` image-light inputs through an annealed
//! column softmax of a learnable `K × M` weight matrix.
//!
//! The stacked input `V` holds one column per bin. Selection is the product
//! `V̂ = V · softmax_columns(α_r · W)` with `α_r = β · r²` growing with the
//! epoch `r`, so each column of the softmax sharpens toward a one-hot pick.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::UnitVector3;
use crate::image::Image;
use crate::lightspace::GridShape;
use crate::tensor::{softmax_columns, Tape, Tensor, Var};

pub const DEFAULT_BETA: f64 = 10.0;
/// Features per pixel per input: three intensities and the light direction.
pub const FEATURES_PER_PIXEL: usize = 6;

pub fn anneal_alpha(epoch: usize, beta: f64) -> Result<f64> {
    if epoch < 1 {
        return Err(Error::Range(format!("epoch {epoch} must be >= 1")));
    }
    Ok(beta * (epoch * epoch) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionMatrix {
    weights: Tensor,
    beta: f64,
    epoch: usize,
}

impl SelectionMatrix {
    /// All-ones `K × M` weights at epoch 1.
    pub fn new(k: usize, m: usize, beta: f64) -> Result<Self> {
        if m == 0 || m > k {
            return Err(Error::Configuration(format!(
                "cannot select {m} of {k} inputs"
            )));
        }
        Ok(SelectionMatrix {
            weights: Tensor::filled(k, m, 1.0),
            beta,
            epoch: 1,
        })
    }

    pub fn from_weights(weights: Tensor, beta: f64, epoch: usize) -> Result<Self> {
        if weights.cols() == 0 || weights.cols() > weights.rows() {
            return Err(Error::Configuration(format!(
                "cannot select {} of {} inputs",
                weights.cols(),
                weights.rows()
            )));
        }
        anneal_alpha(epoch, beta)?;
        Ok(SelectionMatrix {
            weights,
            beta,
            epoch,
        })
    }

    pub fn k(&self) -> usize {
        self.weights.rows()
    }

    pub fn m(&self) -> usize {
        self.weights.cols()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn set_epoch(&mut self, epoch: usize) -> Result<()> {
        anneal_alpha(epoch, self.beta)?;
        self.epoch = epoch;
        Ok(())
    }

    pub fn alpha(&self) -> f64 {
        self.beta * (self.epoch * self.epoch) as f64
    }

    pub fn weights(&self) -> &Tensor {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut Tensor {
        &mut self.weights
    }

    /// `softmax_columns(α · W)` at the current epoch.
    pub fn soft_weights(&self) -> Tensor {
        softmax_columns(&self.weights, self.alpha())
    }

    /// Largest softmax entry of every column at the current epoch.
    pub fn column_max_weights(&self) -> Vec<f64> {
        let s = self.soft_weights();
        (0..s.cols())
            .map(|c| s.column(c).into_iter().fold(0.0, f64::max))
            .collect()
    }
}

/// `V · softmax_columns(alpha · W)` recorded on the tape.
pub fn soft_select(tape: &mut Tape, stack: Var, weights: Var, alpha: f64) -> Result<Var> {
    let [k, m] = tape.shape(weights);
    if m > k {
        return Err(Error::Configuration(format!(
            "cannot select {m} of {k} inputs"
        )));
    }
    let hat = tape.softmax_columns(weights, alpha);
    tape.matmul(stack, hat)
}

/// Per-column argmax of the selection weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hardened {
    /// Row index picked by each column.
    pub indices: Vec<usize>,
    /// Column pairs that picked the same row.
    pub duplicates: Vec<(usize, usize)>,
}

impl Hardened {
    /// Picks in column order with repeats removed.
    pub fn distinct(&self) -> Vec<usize> {
        let mut out: Vec<usize> = Vec::with_capacity(self.indices.len());
        for &i in &self.indices {
            if !out.contains(&i) {
                out.push(i);
            }
        }
        out
    }
}

/// Argmax of each column of `W`; ties go to the lowest row.
pub fn harden(sel: &SelectionMatrix) -> Hardened {
    let w = sel.weights();
    let indices: Vec<usize> = (0..w.cols())
        .map(|c| {
            let mut best = 0;
            for r in 1..w.rows() {
                if w.get(r, c) > w.get(best, c) {
                    best = r;
                }
            }
            best
        })
        .collect();
    let mut duplicates = Vec::new();
    for a in 0..indices.len() {
        for b in a + 1..indices.len() {
            if indices[a] == indices[b] {
                duplicates.push((a, b));
            }
        }
    }
    if !duplicates.is_empty() {
        log::warn!("selection columns share an argmax: {duplicates:?}");
    }
    Hardened {
        indices,
        duplicates,
    }
}

/// Stacked image-light inputs, one column per bin.
///
/// Row `6·i + f` holds feature `f` of pixel `i`: the three intensities then
/// the light direction.
#[derive(Debug, Clone, PartialEq)]
pub struct InputStack {
    values: Tensor,
    pixels: usize,
}

impl InputStack {
    /// Builds the stack for the listed pixels of each `(image, light)` input.
    pub fn from_inputs(inputs: &[(&Image, UnitVector3)], pixels: &[usize]) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::Input("no inputs to stack".into()));
        }
        let k = inputs.len();
        let q = pixels.len();
        let mut values = vec![0.0; FEATURES_PER_PIXEL * q * k];
        for (col, (img, l)) in inputs.iter().enumerate() {
            if img.channels() != 3 {
                return Err(Error::Input(format!(
                    "expected 3-channel images, got {}",
                    img.channels()
                )));
            }
            let light = l.as_array();
            for (i, &p) in pixels.iter().enumerate() {
                let px = img.pixel(p);
                let base = FEATURES_PER_PIXEL * i;
                for f in 0..3 {
                    values[(base + f) * k + col] = px[f];
                    values[(base + 3 + f) * k + col] = light[f];
                }
            }
        }
        Ok(InputStack {
            values: Tensor::new(FEATURES_PER_PIXEL * q, k, values)?,
            pixels: q,
        })
    }

    pub fn pixels(&self) -> usize {
        self.pixels
    }

    pub fn k(&self) -> usize {
        self.values.cols()
    }

    pub fn tensor(&self) -> &Tensor {
        &self.values
    }

    pub fn into_tensor(self) -> Tensor {
        self.values
    }
}

/// Learned configuration as written by `train`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct LearnedConfig {
    pub K: usize,
    pub M: usize,
    pub beta: f64,
    pub bin_indices: Vec<usize>,
    pub grid: GridShape,
}
