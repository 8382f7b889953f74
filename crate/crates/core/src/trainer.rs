//! Joint training of the selection matrix and the normal network.

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{common_bins, BinnedSample};
use crate::error::{Error, Result};
use crate::geometry::UnitVector3;
use crate::image::Image;
use crate::normalnet::{forward, normal_loss, selected_to_rows, NetShape, NormalNetParams};
use crate::selector::{harden, soft_select, Hardened, InputStack, SelectionMatrix, DEFAULT_BETA};
use crate::tensor::{adam_step, Adam, AdamState, Tape, Tensor, DEFAULT_LEARNING_RATE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub m: usize,
    pub epochs: usize,
    /// Epoch whose hardened selection is reported as the early-stopped
    /// configuration. Training still runs for `epochs`.
    pub early_stop_epoch: Option<usize>,
    /// Scene draws per optimizer step.
    pub batch_size: usize,
    /// Masked pixels sampled from each drawn scene.
    pub pixels_per_scene: usize,
    pub steps_per_epoch: usize,
    pub lr: f64,
    pub beta: f64,
    pub seed: u64,
    pub net: NetShape,
    /// Keep `W` fixed and train only the network.
    pub freeze_selection: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            m: 10,
            epochs: 30,
            early_stop_epoch: Some(10),
            batch_size: 32,
            pixels_per_scene: 1024,
            steps_per_epoch: 16,
            lr: DEFAULT_LEARNING_RATE,
            beta: DEFAULT_BETA,
            seed: 0,
            net: NetShape::default(),
            freeze_selection: false,
        }
    }
}

impl TrainConfig {
    fn validate(&self, k: usize) -> Result<()> {
        if self.m == 0 || self.m > k {
            return Err(Error::Configuration(format!(
                "M = {} must lie in 1..={k}",
                self.m
            )));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.pixels_per_scene == 0 || self.steps_per_epoch == 0 {
            return Err(Error::Configuration(
                "epochs, batch size, pixels per scene and steps per epoch must be positive".into(),
            ));
        }
        if !(self.lr > 0.0) || !(self.beta >= 0.0) {
            return Err(Error::Configuration(format!(
                "bad learning rate {} or beta {}",
                self.lr, self.beta
            )));
        }
        Ok(())
    }
}

/// State at the end of one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub epoch: usize,
    /// Selection weights over the trained bins.
    pub weights: Tensor,
    pub net: NormalNetParams,
    /// Mean batch loss over the epoch.
    pub loss: f64,
    /// Grid bin picked by each column.
    pub bin_indices: Vec<usize>,
    /// Largest softmax weight of each column at this epoch's α.
    pub max_weights: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub selection: SelectionMatrix,
    pub net: NormalNetParams,
    pub checkpoints: Vec<Checkpoint>,
    /// Grid bin behind each row of the selection matrix.
    pub active_bins: Vec<usize>,
    pub early_stop_epoch: Option<usize>,
}

impl TrainOutcome {
    pub fn hardened(&self) -> Hardened {
        let h = harden(&self.selection);
        Hardened {
            indices: h.indices.iter().map(|&r| self.active_bins[r]).collect(),
            duplicates: h.duplicates,
        }
    }

    /// Final selection as grid bins.
    pub fn bin_indices(&self) -> Vec<usize> {
        self.hardened().indices
    }

    /// Selection recorded at the early-stop epoch, if one was requested and
    /// reached.
    pub fn early_stop_indices(&self) -> Option<&[usize]> {
        let e = self.early_stop_epoch?;
        self.checkpoints
            .iter()
            .find(|c| c.epoch == e)
            .map(|c| c.bin_indices.as_slice())
    }
}

struct Scene<'a> {
    inputs: Vec<(&'a Image, UnitVector3)>,
    pixels: Vec<usize>,
    sample: &'a BinnedSample,
}

struct Batch {
    stack: Tensor,
    target: Tensor,
    pixels: usize,
}

fn draw_batch(scenes: &[Scene<'_>], cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Result<Batch> {
    let k = scenes[0].inputs.len();
    let mut stack = Vec::new();
    let mut target = Vec::new();
    let mut pixels = 0;
    for _ in 0..cfg.batch_size {
        let scene = &scenes[rng.gen_range(0..scenes.len())];
        let n = scene.pixels.len();
        let chosen: Vec<usize> = if n <= cfg.pixels_per_scene {
            scene.pixels.clone()
        } else {
            let mut idx = sample_indices(rng, n, cfg.pixels_per_scene).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|i| scene.pixels[i]).collect()
        };
        let part = InputStack::from_inputs(&scene.inputs, &chosen)?;
        stack.extend_from_slice(part.tensor().values());
        for &p in &chosen {
            target.extend_from_slice(&scene.sample.sample.normals_gt.unit(p)?.as_array());
        }
        pixels += chosen.len();
    }
    Ok(Batch {
        stack: Tensor::new(stack.len() / k, k, stack)?,
        target: Tensor::new(pixels, 3, target)?,
        pixels,
    })
}

/// Loss and gradients of one batch with respect to `[W, net tensors...]`.
fn step(
    params: &[Tensor],
    shape: NetShape,
    alpha: f64,
    batch: &Batch,
    m: usize,
) -> Result<(f64, Vec<Tensor>)> {
    let mut tape = Tape::new();
    let w = tape.param(params[0].clone());
    let net = NormalNetParams::from_tensors(shape, params[1..].to_vec())?;
    let vars = net.to_tape(&mut tape, true);
    let v = tape.constant(batch.stack.clone());
    let selected = soft_select(&mut tape, v, w, alpha)?;
    let rows = selected_to_rows(&mut tape, selected, batch.pixels)?;
    let pred = forward(&mut tape, &vars, rows, m, batch.pixels)?;
    let target = tape.constant(batch.target.clone());
    let loss = normal_loss(&mut tape, pred, target, &vec![1.0; batch.pixels])?;
    tape.backward(loss)?;
    let value = tape.value(loss).item();
    let mut grads = Vec::with_capacity(params.len());
    for (var, p) in std::iter::once(w).chain(vars.all()).zip(params) {
        grads.push(tape.grad(var).unwrap_or_else(|| Tensor::zeros(p.rows(), p.cols())));
    }
    Ok((value, grads))
}

/// Trains `W` and the network together with the annealing schedule
/// `α_r = β r²`. Bins left unassigned in the samples are dropped; every
/// sample must cover the same bins.
pub fn fit(samples: &[BinnedSample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    let k = common_bins(samples)?.len();
    cfg.validate(k)?;
    fit_from(samples, cfg, Tensor::filled(k, cfg.m, 1.0))
}

/// [`fit`] starting from given selection weights over the active bins
/// instead of all ones.
pub fn fit_from(samples: &[BinnedSample], cfg: &TrainConfig, weights: Tensor) -> Result<TrainOutcome> {
    let active_bins = common_bins(samples)?;
    cfg.validate(active_bins.len())?;
    if weights.shape() != [active_bins.len(), cfg.m] {
        return Err(Error::Shape {
            op: "fit_from",
            lhs: weights.shape().to_vec(),
            rhs: vec![active_bins.len(), cfg.m],
        });
    }
    let scenes = samples
        .iter()
        .map(|s| {
            let pixels = s.sample.mask.indices();
            if pixels.is_empty() {
                return Err(Error::Dataset("sample with an empty mask".into()));
            }
            Ok(Scene {
                inputs: s.inputs(&active_bins)?,
                pixels,
                sample: s,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let net = NormalNetParams::init(cfg.net, rng.gen())?;
    let mut selection = SelectionMatrix::from_weights(weights, cfg.beta, 1)?;
    let mut params: Vec<Tensor> = std::iter::once(selection.weights().clone())
        .chain(net.tensors().into_iter().cloned())
        .collect();
    let mut state = AdamState::new(&params);
    let opt = Adam {
        lr: cfg.lr,
        ..Adam::default()
    };

    let mut checkpoints = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        selection.set_epoch(epoch)?;
        let alpha = selection.alpha();
        let mut total = 0.0;
        for _ in 0..cfg.steps_per_epoch {
            let batch = draw_batch(&scenes, cfg, &mut rng)?;
            let (loss, mut grads) = step(&params, cfg.net, alpha, &batch, cfg.m)?;
            if cfg.freeze_selection {
                grads[0] = Tensor::zeros(grads[0].rows(), grads[0].cols());
            }
            adam_step(&mut params, &grads, &mut state, &opt)?;
            total += loss;
        }
        *selection.weights_mut() = params[0].clone();
        let h = harden(&selection);
        checkpoints.push(Checkpoint {
            epoch,
            weights: params[0].clone(),
            net: NormalNetParams::from_tensors(cfg.net, params[1..].to_vec())?,
            loss: total / cfg.steps_per_epoch as f64,
            bin_indices: h.indices.iter().map(|&r| active_bins[r]).collect(),
            max_weights: selection.column_max_weights(),
        });
        log::info!(
            "epoch {epoch}: loss {:.6}, bins {:?}",
            total / cfg.steps_per_epoch as f64,
            checkpoints.last().map(|c| &c.bin_indices)
        );
    }
    let net = NormalNetParams::from_tensors(cfg.net, params[1..].to_vec())?;
    Ok(TrainOutcome {
        selection,
        net,
        checkpoints,
        active_bins,
        early_stop_epoch: cfg.early_stop_epoch,
    })
}

/// CSV of `epoch,column,argmax_bin,max_softmax_weight`, one row per column
/// per checkpoint.
pub fn evolution_report(checkpoints: &[Checkpoint]) -> String {
    let mut out = String::from("epoch,column,argmax_bin,max_softmax_weight\n");
    for c in checkpoints {
        for (col, (bin, w)) in c.bin_indices.iter().zip(&c.max_weights).enumerate() {
            out.push_str(&format!("{},{col},{bin},{w}\n", c.epoch));
        }
    }
    out
}
