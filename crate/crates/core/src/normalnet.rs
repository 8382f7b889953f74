//! Per-pixel normal regression from a set of selected image-light inputs.
//!
//! Every input's per-pixel feature (three intensities plus the light
//! direction) runs through a shared extractor, the extracted features are
//! max-fused across inputs, and a small head regresses a normal that is
//! finally l2-normalized. Layers act on single pixels, so this is the
//! shared-extractor / max-fuse / head layout with a 1×1 receptive field.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::UnitVector3;
use crate::image::{Image, Mask, NormalMap};
use crate::selector::FEATURES_PER_PIXEL;
use crate::tensor::{Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetShape {
    pub extractor_layers: usize,
    pub head_layers: usize,
    pub width: usize,
}

impl Default for NetShape {
    fn default() -> Self {
        NetShape {
            extractor_layers: 7,
            head_layers: 4,
            width: 64,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormalNetParams {
    shape: NetShape,
    /// Extractor layers then head layers, each as (weight, bias).
    layers: Vec<(Tensor, Tensor)>,
}

/// Parameter handles of a network placed on a tape.
#[derive(Debug, Clone)]
pub struct NetVars {
    layers: Vec<(Var, Var)>,
    extractor_layers: usize,
}

impl NetVars {
    pub fn all(&self) -> Vec<Var> {
        self.layers.iter().flat_map(|(w, b)| [*w, *b]).collect()
    }
}

impl NormalNetParams {
    /// Glorot-uniform weights, zero biases.
    pub fn init(shape: NetShape, seed: u64) -> Result<Self> {
        if shape.extractor_layers == 0 || shape.head_layers == 0 || shape.width == 0 {
            return Err(Error::Configuration(format!(
                "network needs at least one layer of nonzero width: {shape:?}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(shape.extractor_layers + shape.head_layers);
        for (fan_in, fan_out) in layer_dims(shape) {
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.gen_range(-bound..bound))
                .collect();
            layers.push((
                Tensor::new(fan_in, fan_out, w)?,
                Tensor::zeros(1, fan_out),
            ));
        }
        Ok(NormalNetParams { shape, layers })
    }

    /// Rebuilds parameters from weights and biases interleaved in layer
    /// order, as returned by [`tensors`](Self::tensors).
    pub fn from_tensors(shape: NetShape, tensors: Vec<Tensor>) -> Result<Self> {
        let dims: Vec<(usize, usize)> = layer_dims(shape).collect();
        if tensors.len() != 2 * dims.len() {
            return Err(Error::Shape {
                op: "NormalNetParams::from_tensors",
                lhs: vec![tensors.len()],
                rhs: vec![2 * dims.len()],
            });
        }
        let mut layers = Vec::with_capacity(dims.len());
        let mut it = tensors.into_iter();
        for (fan_in, fan_out) in dims {
            let (w, b) = (it.next().unwrap(), it.next().unwrap());
            if w.shape() != [fan_in, fan_out] || b.shape() != [1, fan_out] {
                return Err(Error::Shape {
                    op: "NormalNetParams::from_tensors",
                    lhs: vec![w.rows(), w.cols(), b.rows(), b.cols()],
                    rhs: vec![fan_in, fan_out, 1, fan_out],
                });
            }
            layers.push((w, b));
        }
        Ok(NormalNetParams { shape, layers })
    }

    pub fn shape(&self) -> NetShape {
        self.shape
    }

    pub fn n_tensors(&self) -> usize {
        self.layers.len() * 2
    }

    /// Weights and biases interleaved, in layer order.
    pub fn tensors(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|(w, b)| [w, b]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers.iter_mut().flat_map(|(w, b)| [w, b]).collect()
    }

    pub fn to_tape(&self, tape: &mut Tape, trainable: bool) -> NetVars {
        NetVars {
            layers: self
                .layers
                .iter()
                .map(|(w, b)| (tape.leaf(w.clone(), trainable), tape.leaf(b.clone(), trainable)))
                .collect(),
            extractor_layers: self.shape.extractor_layers,
        }
    }

    /// Writes `<stem>.bin` (little-endian f64 values, layer order) and
    /// `<stem>.json` (shape manifest).
    pub fn save(&self, bin_path: &Path, manifest_path: &Path) -> Result<()> {
        let mut blob = Vec::new();
        let mut entries = Vec::new();
        for (i, t) in self.tensors().into_iter().enumerate() {
            let kind = if i % 2 == 0 { "weight" } else { "bias" };
            entries.push(ManifestEntry {
                name: format!("layer{}.{kind}", i / 2),
                shape: t.shape().to_vec(),
            });
            for v in t.values() {
                blob.extend_from_slice(&v.to_le_bytes());
            }
        }
        let manifest = Manifest {
            dtype: "f64le".into(),
            net: self.shape,
            tensors: entries,
        };
        fs::write(bin_path, blob)?;
        fs::write(manifest_path, serde_json::to_string_pretty(&manifest)?)?;
        Ok(())
    }

    pub fn load(bin_path: &Path, manifest_path: &Path) -> Result<Self> {
        let manifest: Manifest = serde_json::from_str(&fs::read_to_string(manifest_path)?)
            .map_err(|e| Error::format(manifest_path, e.to_string()))?;
        if manifest.dtype != "f64le" {
            return Err(Error::format(
                manifest_path,
                format!("unsupported dtype {}", manifest.dtype),
            ));
        }
        let expected: Vec<Vec<usize>> = layer_dims(manifest.net)
            .flat_map(|(i, o)| [vec![i, o], vec![1, o]])
            .collect();
        let found: Vec<Vec<usize>> = manifest.tensors.iter().map(|e| e.shape.clone()).collect();
        if expected != found {
            return Err(Error::format(
                manifest_path,
                "tensor shapes do not match the declared network",
            ));
        }
        let blob = fs::read(bin_path)?;
        let total: usize = found.iter().map(|s| s.iter().product::<usize>()).sum();
        if blob.len() != total * 8 {
            return Err(Error::format(
                bin_path,
                format!("expected {} bytes, found {}", total * 8, blob.len()),
            ));
        }
        let mut values = blob
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let mut tensors = Vec::with_capacity(found.len());
        for s in &found {
            let n = s[0] * s[1];
            tensors.push(Tensor::new(s[0], s[1], values.by_ref().take(n).collect())?);
        }
        let mut it = tensors.into_iter();
        let mut layers = Vec::new();
        while let (Some(w), Some(b)) = (it.next(), it.next()) {
            layers.push((w, b));
        }
        Ok(NormalNetParams {
            shape: manifest.net,
            layers,
        })
    }

    /// Normals for every masked pixel given the chosen inputs.
    pub fn predict(&self, inputs: &[(&Image, UnitVector3)], mask: &Mask) -> Result<NormalMap> {
        if inputs.is_empty() {
            return Err(Error::Configuration("network needs at least one input".into()));
        }
        let pixels = mask.indices();
        let mut out = NormalMap::zeros(mask.height(), mask.width());
        // bounded chunks keep the tape small
        for chunk in pixels.chunks(4096) {
            let mut tape = Tape::new();
            let vars = self.to_tape(&mut tape, false);
            let feats = stack_inputs(inputs, chunk)?;
            let x = tape.constant(feats);
            let n = forward(&mut tape, &vars, x, inputs.len(), chunk.len())?;
            let values = tape.value(n).values();
            for (i, &p) in chunk.iter().enumerate() {
                out.set(p, [values[3 * i], values[3 * i + 1], values[3 * i + 2]]);
            }
        }
        Ok(out)
    }
}

fn layer_dims(shape: NetShape) -> impl Iterator<Item = (usize, usize)> {
    let w = shape.width;
    let extractor = (0..shape.extractor_layers).map(move |i| {
        if i == 0 {
            (FEATURES_PER_PIXEL, w)
        } else {
            (w, w)
        }
    });
    let head = (0..shape.head_layers).map(move |i| {
        if i + 1 == shape.head_layers {
            (w, 3)
        } else {
            (w, w)
        }
    });
    extractor.chain(head)
}

#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    dtype: String,
    net: NetShape,
    tensors: Vec<ManifestEntry>,
}

/// `[M·P, 6]` per-input pixel features, input-major: row `m·P + i` is
/// pixel `i` of input `m`.
pub fn stack_inputs(inputs: &[(&Image, UnitVector3)], pixels: &[usize]) -> Result<Tensor> {
    let p = pixels.len();
    let mut values = Vec::with_capacity(inputs.len() * p * FEATURES_PER_PIXEL);
    for (img, l) in inputs {
        if img.channels() != 3 {
            return Err(Error::Input(format!(
                "expected 3-channel images, got {}",
                img.channels()
            )));
        }
        let light = l.as_array();
        for &px in pixels {
            values.extend_from_slice(img.pixel(px));
            values.extend_from_slice(&light);
        }
    }
    Tensor::new(inputs.len() * p, FEATURES_PER_PIXEL, values)
}

/// Rearranges a soft-selected stack `[6·P, M]` into input-major rows
/// `[M·P, 6]` as expected by [`forward`].
pub fn selected_to_rows(tape: &mut Tape, selected: Var, pixels: usize) -> Result<Var> {
    let [rows, m] = tape.shape(selected);
    if rows != FEATURES_PER_PIXEL * pixels {
        return Err(Error::Shape {
            op: "selected_to_rows",
            lhs: vec![rows, m],
            rhs: vec![FEATURES_PER_PIXEL * pixels],
        });
    }
    let t = tape.transpose(selected);
    tape.reshape(t, m * pixels, FEATURES_PER_PIXEL)
}

/// Runs the network on `[M·P, 6]` input-major features; returns `[P, 3]`
/// unit normals.
pub fn forward(tape: &mut Tape, net: &NetVars, features: Var, m: usize, pixels: usize) -> Result<Var> {
    if m == 0 {
        return Err(Error::Configuration("network needs at least one input".into()));
    }
    if tape.shape(features) != [m * pixels, FEATURES_PER_PIXEL] {
        return Err(Error::Shape {
            op: "normalnet forward",
            lhs: tape.shape(features).to_vec(),
            rhs: vec![m * pixels, FEATURES_PER_PIXEL],
        });
    }
    let mut x = features;
    for (w, b) in &net.layers[..net.extractor_layers] {
        let y = tape.affine(x, *w, *b)?;
        x = tape.relu(y);
    }
    let width = tape.shape(x)[1];
    let grouped = tape.reshape(x, m, pixels * width)?;
    let fused = tape.max_rows(grouped)?;
    let mut x = tape.reshape(fused, pixels, width)?;
    let head = &net.layers[net.extractor_layers..];
    for (i, (w, b)) in head.iter().enumerate() {
        let y = tape.affine(x, *w, *b)?;
        x = if i + 1 == head.len() { y } else { tape.relu(y) };
    }
    Ok(tape.l2_normalize_rows(x))
}

/// `(1/N_mask) · Σ_p mask_p ‖N̂_p − N_p‖²` on the tape.
pub fn normal_loss(tape: &mut Tape, predicted: Var, target: Var, mask: &[f64]) -> Result<Var> {
    let n_mask: f64 = mask.iter().sum();
    if n_mask <= 0.0 {
        return Err(Error::Input("normal loss over an empty mask".into()));
    }
    let diff = tape.sub(predicted, target)?;
    let ss = tape.masked_sum_of_squares(diff, mask)?;
    Ok(tape.scale(ss, 1.0 / n_mask))
}

/// The same loss evaluated directly on normal maps.
pub fn normal_loss_maps(predicted: &NormalMap, target: &NormalMap, mask: &Mask) -> Result<f64> {
    let idx = mask.indices();
    if idx.is_empty() {
        return Err(Error::Input("normal loss over an empty mask".into()));
    }
    let total: f64 = idx
        .iter()
        .map(|&i| {
            let (a, b) = (predicted.get(i), target.get(i));
            (0..3).map(|c| (a[c] - b[c]).powi(2)).sum::<f64>()
        })
        .sum();
    Ok(total / idx.len() as f64)
}
