//! Training harness: Adam over mini-batches of cross-entropy loss, with
//! deterministic seeded shuffling and order-stable gradient reduction so
//! a fixed seed reproduces bit-identical weights regardless of thread count.

use ndarray::{Array2, Array4, Axis};
use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::layers::softmax;
use crate::model::net::{Layer, LayerGrad, Network};
use crate::model::{ClassifierSpec, TrainConfig, TrainedClassifier};
use crate::rng;

/// Per-example sub-batch size for parallel gradient evaluation. Fixed so
/// that the reduction order (and therefore every float) is independent of
/// the worker count.
const GRAD_CHUNK: usize = 16;

pub(crate) struct Adam {
    t: u64,
    beta1: f32,
    beta2: f32,
    eps: f32,
    slots: Vec<Option<MomentPair>>,
}

struct MomentPair {
    mw: Array2<f32>,
    vw: Array2<f32>,
    mb: Vec<f32>,
    vb: Vec<f32>,
}

impl Adam {
    pub fn new(net: &Network) -> Self {
        let slots = net
            .layers
            .iter()
            .map(|layer| match layer {
                Layer::Conv(c) => Some(MomentPair {
                    mw: Array2::zeros(c.weight.dim()),
                    vw: Array2::zeros(c.weight.dim()),
                    mb: vec![0.0; c.bias.len()],
                    vb: vec![0.0; c.bias.len()],
                }),
                Layer::Dense(d) => Some(MomentPair {
                    mw: Array2::zeros(d.weight.dim()),
                    vw: Array2::zeros(d.weight.dim()),
                    mb: vec![0.0; d.bias.len()],
                    vb: vec![0.0; d.bias.len()],
                }),
                _ => None,
            })
            .collect();
        Self { t: 0, beta1: 0.9, beta2: 0.999, eps: 1e-8, slots }
    }

    pub fn step(&mut self, net: &mut Network, grads: &[LayerGrad], lr: f32) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (slot, (layer, grad)) in
            self.slots.iter_mut().zip(net.layers.iter_mut().zip(grads.iter()))
        {
            let Some(pair) = slot else { continue };
            let (weight, bias, dw, db) = match (layer, grad) {
                (Layer::Conv(c), LayerGrad::Conv { dw, db }) => {
                    (&mut c.weight, &mut c.bias, dw, db)
                }
                (Layer::Dense(d), LayerGrad::Dense { dw, db }) => {
                    (&mut d.weight, &mut d.bias, dw, db)
                }
                _ => continue,
            };
            azip_adam(
                weight.as_slice_mut().expect("standard layout"),
                pair.mw.as_slice_mut().expect("standard layout"),
                pair.vw.as_slice_mut().expect("standard layout"),
                dw.as_slice().expect("standard layout"),
                self.beta1,
                self.beta2,
                self.eps,
                lr,
                bc1,
                bc2,
            );
            azip_adam(bias, &mut pair.mb, &mut pair.vb, db, self.beta1, self.beta2, self.eps, lr, bc1, bc2);
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn azip_adam(
    params: &mut [f32],
    m: &mut [f32],
    v: &mut [f32],
    grad: &[f32],
    beta1: f32,
    beta2: f32,
    eps: f32,
    lr: f32,
    bc1: f32,
    bc2: f32,
) {
    for i in 0..params.len() {
        m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Adds `other` into `acc`, layer by layer.
pub(crate) fn accumulate(acc: &mut Vec<LayerGrad>, other: Vec<LayerGrad>) {
    if acc.is_empty() {
        *acc = other;
        return;
    }
    for (a, o) in acc.iter_mut().zip(other) {
        match (a, o) {
            (LayerGrad::Conv { dw, db }, LayerGrad::Conv { dw: dw2, db: db2 })
            | (LayerGrad::Dense { dw, db }, LayerGrad::Dense { dw: dw2, db: db2 }) => {
                *dw += &dw2;
                for (b, b2) in db.iter_mut().zip(db2) {
                    *b += b2;
                }
            }
            (LayerGrad::None, LayerGrad::None) => {}
            _ => unreachable!("gradient structure mismatch"),
        }
    }
}

/// Converts dataset examples (HWC in [0,1]) into one `[N, C, H, W]` tensor.
pub(crate) fn dataset_tensor(dataset: &Dataset) -> Array4<f32> {
    let shape = dataset.image_shape().expect("non-empty dataset");
    let (h, w, c) = (shape.height, shape.width, shape.channels);
    let mut out = Array4::<f32>::zeros((dataset.len(), c, h, w));
    for (n, ex) in dataset.examples.iter().enumerate() {
        let values = ex.image.values();
        for ch in 0..c {
            for row in 0..h {
                for col in 0..w {
                    out[[n, ch, row, col]] = values[(row * w + col) * c + ch];
                }
            }
        }
    }
    out
}

/// Gathers the rows of `tensor` selected by `indices` into a fresh batch.
fn gather(tensor: &Array4<f32>, indices: &[usize]) -> Array4<f32> {
    tensor.select(Axis(0), indices)
}

/// Mean cross-entropy loss and summed parameter gradients for one batch.
/// Returns (loss, grads) with grads already scaled by 1/batch.
fn batch_loss_and_grads(
    net: &Network,
    batch: &Array4<f32>,
    labels: &[usize],
) -> (f64, Vec<LayerGrad>) {
    let total = labels.len();
    let ranges: Vec<(usize, usize)> = (0..total)
        .step_by(GRAD_CHUNK)
        .map(|start| (start, (start + GRAD_CHUNK).min(total)))
        .collect();
    let chunk_results: Vec<(f64, Vec<LayerGrad>)> = ranges
        .into_par_iter()
        .map(|(start, end)| {
            let chunk = batch.slice(ndarray::s![start..end, .., .., ..]).to_owned();
            let chunk_labels = &labels[start..end];
            let pass = net.forward(&chunk, true);
            let mut loss = 0.0f64;
            let mut dlogits = Array2::<f32>::zeros(pass.logits.dim());
            for (i, (&label, logit_row)) in
                chunk_labels.iter().zip(pass.logits.rows()).enumerate()
            {
                let probs = softmax(logit_row.as_slice().expect("contiguous row"));
                loss += -(probs[label].max(1e-12) as f64).ln();
                for (j, &p) in probs.iter().enumerate() {
                    let target = if j == label { 1.0 } else { 0.0 };
                    dlogits[[i, j]] = (p - target) / total as f32;
                }
            }
            let (grads, _) = net.backward(&pass, dlogits, true, false);
            (loss, grads)
        })
        .collect();

    let mut loss = 0.0;
    let mut grads: Vec<LayerGrad> = Vec::new();
    for (chunk_loss, chunk_grads) in chunk_results {
        loss += chunk_loss;
        accumulate(&mut grads, chunk_grads);
    }
    (loss / total as f64, grads)
}

/// Trains a classifier on `dataset` under `config`.
pub fn train(
    spec: &ClassifierSpec,
    dataset: &Dataset,
    config: &TrainConfig,
) -> Result<TrainedClassifier> {
    spec.validate()?;
    config.validate()?;
    if dataset.is_empty() {
        return Err(Error::config("cannot train on an empty dataset"));
    }
    if dataset.num_classes != spec.num_classes {
        return Err(Error::config(format!(
            "dataset has {} classes, spec expects {}",
            dataset.num_classes, spec.num_classes
        )));
    }
    let shape = dataset.image_shape().expect("non-empty");
    if shape != spec.input {
        return Err(Error::config(format!(
            "dataset images are {:?}, spec expects {:?}",
            shape, spec.input
        )));
    }

    let mut net = Network::new(spec.architecture, spec.input, spec.num_classes, config.seed)?;
    let mut adam = Adam::new(&net);
    let tensor = dataset_tensor(dataset);
    let labels: Vec<usize> = dataset.examples.iter().map(|ex| ex.label).collect();

    let mut order: Vec<usize> = (0..dataset.len()).collect();
    for epoch in 0..config.epochs {
        rng::shuffle(&mut order, rng::derive_seed(config.seed, "epoch", epoch as u64));
        for batch_indices in order.chunks(config.batch_size) {
            let batch = gather(&tensor, batch_indices);
            let batch_labels: Vec<usize> =
                batch_indices.iter().map(|&i| labels[i]).collect();
            let (loss, grads) = batch_loss_and_grads(&net, &batch, &batch_labels);
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged { last_stable_epoch: epoch });
            }
            adam.step(&mut net, &grads, config.learning_rate);
        }
    }

    Ok(TrainedClassifier::from_parts(spec.clone(), net, config.clone()))
}
