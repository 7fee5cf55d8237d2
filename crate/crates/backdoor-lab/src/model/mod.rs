//! Differentiable classifier contract, training harness, and evaluation
//! metrics (benign accuracy, attack success rate, confidence profiles).

pub(crate) mod layers;
mod metrics;
mod net;
pub mod stub;
mod train;

pub use layers::{argmax, softmax};
pub use metrics::{
    attack_success_rate, benign_accuracy, confidence_profile, loss_gap_term, ConfidenceHistogram,
    ConfidenceProfile, MetricsReport,
};
pub use train::train;

use std::path::Path;

use ndarray::{Array2, Array4};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{ImageShape, ImageTensor};
use crate::error::{Error, Result};
use crate::report::{read_json, write_atomic, write_json};

pub(crate) use net::Network;

/// Inference batch size for chunked parallel forward passes.
const INFER_CHUNK: usize = 64;

/// Supported network architectures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Architecture {
    /// Six 3×3 conv layers (two per pooling block) and two dense layers.
    Cnn6_2,
    /// Two 3×3 conv layers with pooling and one dense layer; the desk-scale
    /// default.
    Cnn2_1,
    /// A single dense layer over flattened pixels. The penultimate
    /// representation is the input itself, which makes closed-form test
    /// oracles straightforward.
    Linear,
}

/// Model architecture plus input/output dimensions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassifierSpec {
    pub architecture: Architecture,
    pub input: ImageShape,
    pub num_classes: usize,
}

impl ClassifierSpec {
    pub fn new(architecture: Architecture, input: ImageShape, num_classes: usize) -> Result<Self> {
        let spec = Self { architecture, input, num_classes };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::config(format!(
                "classifiers need at least 2 classes, got {}",
                self.num_classes
            )));
        }
        if self.input.is_empty() {
            return Err(Error::config("input shape must be non-empty"));
        }
        Ok(())
    }
}

/// Training hyperparameters. The loss is always cross-entropy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    /// First-order stochastic optimizer; `"adam"` or `"sgd"`.
    pub optimizer: String,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 10, batch_size: 32, learning_rate: 2e-3, optimizer: "adam".into(), seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch_size must be >= 1"));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("learning_rate must be positive and finite"));
        }
        if self.optimizer != "adam" && self.optimizer != "sgd" {
            return Err(Error::config(format!("unsupported optimizer '{}'", self.optimizer)));
        }
        Ok(())
    }
}

/// A scalar objective over the model output, with its gradient with respect
/// to the logits. Used by [`input_gradient`] and the patch optimizer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    /// A constant; its gradient is zero everywhere.
    Constant(f32),
    /// The raw logit of one class.
    Logit(usize),
    /// The softmax probability of one class.
    Prob(usize),
    /// `(p_z - 1)^2` on the softmax output: maximizing it drives the
    /// probability of class `z` toward zero.
    LeaveLabel(usize),
}

impl Objective {
    pub fn value(&self, logits: &[f32]) -> f64 {
        match *self {
            Objective::Constant(c) => c as f64,
            Objective::Logit(z) => logits[z] as f64,
            Objective::Prob(z) => softmax_f64(logits)[z],
            Objective::LeaveLabel(z) => {
                let p = softmax_f64(logits)[z];
                (p - 1.0) * (p - 1.0)
            }
        }
    }

    /// Objective gradient with respect to the logits. Softmax terms are
    /// evaluated in f64 so that nearly saturated outputs keep a nonzero
    /// (if tiny) gradient instead of rounding to zero in f32.
    pub fn dlogits(&self, logits: &[f32]) -> Vec<f32> {
        match *self {
            Objective::Constant(_) => vec![0.0; logits.len()],
            Objective::Logit(z) => {
                let mut d = vec![0.0; logits.len()];
                d[z] = 1.0;
                d
            }
            Objective::Prob(z) => {
                let p = softmax_f64(logits);
                softmax_row_jacobian(&p, z, 1.0)
            }
            Objective::LeaveLabel(z) => {
                let p = softmax_f64(logits);
                softmax_row_jacobian(&p, z, 2.0 * (p[z] - 1.0))
            }
        }
    }
}

fn softmax_f64(logits: &[f32]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let exps: Vec<f64> = logits.iter().map(|&v| ((v as f64) - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|v| v / sum).collect()
}

/// `scale * d p_z / d logits` for a softmax output `p`.
fn softmax_row_jacobian(p: &[f64], z: usize, scale: f64) -> Vec<f32> {
    p.iter()
        .enumerate()
        .map(|(j, &pj)| {
            let kron = if j == z { 1.0 } else { 0.0 };
            (scale * p[z] * (kron - pj)) as f32
        })
        .collect()
}

/// The classifier contract shared by trained networks and test stubs:
/// a deterministic map from images to logits, plus (for differentiable
/// models) input gradients and a penultimate representation.
pub trait Classifier: Send + Sync {
    fn num_classes(&self) -> usize;
    fn input_shape(&self) -> ImageShape;
    fn logits(&self, image: &ImageTensor) -> Result<Vec<f32>>;

    fn logits_batch(&self, images: &[&ImageTensor]) -> Result<Vec<Vec<f32>>> {
        images.iter().map(|img| self.logits(img)).collect()
    }

    /// Softmax probability vector; components sum to 1 within 1e-5.
    fn predict_proba(&self, image: &ImageTensor) -> Result<Vec<f32>> {
        Ok(softmax(&self.logits(image)?))
    }

    /// Predicted label: argmax with ties broken toward the smaller index.
    fn predicted_label(&self, image: &ImageTensor) -> Result<usize> {
        Ok(argmax(&self.logits(image)?))
    }

    /// Gradient of an objective with respect to each image, given the
    /// objective gradient with respect to the logits of each image.
    /// Gradients use the image's own row-major (row, col, channel) layout.
    fn input_gradients_batch(
        &self,
        images: &[&ImageTensor],
        dlogits: &[Vec<f32>],
    ) -> Result<Vec<Vec<f32>>>;

    /// Logits and objective input-gradients in one call. The default runs
    /// two forward passes; differentiable models override this with a
    /// single cached pass.
    fn objective_gradients_batch(
        &self,
        images: &[&ImageTensor],
        objective: Objective,
    ) -> Result<(Vec<Vec<f32>>, Vec<Vec<f32>>)> {
        let logits = self.logits_batch(images)?;
        let dlogits: Vec<Vec<f32>> = logits.iter().map(|row| objective.dlogits(row)).collect();
        let grads = self.input_gradients_batch(images, &dlogits)?;
        Ok((logits, grads))
    }

    /// Activation entering the final dense layer.
    fn penultimate(&self, image: &ImageTensor) -> Result<Vec<f32>> {
        let mut rows = self.penultimate_batch(&[image])?;
        Ok(rows.pop().expect("one row per image"))
    }

    fn penultimate_batch(&self, images: &[&ImageTensor]) -> Result<Vec<Vec<f32>>>;
}

/// Softmax probabilities for one image; errors if its shape does not match
/// the model input.
pub fn predict_proba(model: &dyn Classifier, image: &ImageTensor) -> Result<Vec<f32>> {
    model.predict_proba(image)
}

/// Gradient of `objective` with respect to the input pixels, in the image's
/// row-major (row, col, channel) layout.
pub fn input_gradient(
    model: &dyn Classifier,
    image: &ImageTensor,
    objective: Objective,
) -> Result<Vec<f32>> {
    let logits = model.logits(image)?;
    let dlogits = objective.dlogits(&logits);
    let mut grads = model.input_gradients_batch(&[image], &[dlogits])?;
    Ok(grads.pop().expect("one gradient per image"))
}

/// A trained network with its spec and the config that produced it.
#[derive(Debug, Clone)]
pub struct TrainedClassifier {
    spec: ClassifierSpec,
    net: Network,
    train_config: TrainConfig,
}

impl TrainedClassifier {
    pub(crate) fn from_parts(spec: ClassifierSpec, net: Network, train_config: TrainConfig) -> Self {
        Self { spec, net, train_config }
    }

    /// Builds a classifier with externally supplied dense-layer weights.
    /// Only the `Linear` architecture is supported; this exists so tests
    /// and examples can construct models with closed-form behavior.
    pub fn linear_from_weights(
        input: ImageShape,
        num_classes: usize,
        weight_rows: &[Vec<f32>],
        bias: &[f32],
    ) -> Result<Self> {
        let spec = ClassifierSpec::new(Architecture::Linear, input, num_classes)?;
        if weight_rows.len() != num_classes || bias.len() != num_classes {
            return Err(Error::config("need one weight row and bias per class"));
        }
        let features = input.len();
        let mut net = Network::new(Architecture::Linear, input, num_classes, 0)?;
        let mut weight = Array2::<f32>::zeros((features, num_classes));
        for (class, row) in weight_rows.iter().enumerate() {
            if row.len() != features {
                return Err(Error::config(format!(
                    "weight row {class} has {} entries, expected {features}",
                    row.len()
                )));
            }
            for (f, &v) in row.iter().enumerate() {
                weight[[f, class]] = v;
            }
        }
        match net.layers.last_mut() {
            Some(net::Layer::Dense(dense)) => {
                dense.weight = weight;
                dense.bias = bias.to_vec();
            }
            _ => unreachable!("linear nets end in a dense layer"),
        }
        Ok(Self::from_parts(spec, net, TrainConfig::default()))
    }

    pub fn spec(&self) -> &ClassifierSpec {
        &self.spec
    }

    pub fn train_config(&self) -> &TrainConfig {
        &self.train_config
    }

    /// Width of the penultimate representation (the final dense layer's
    /// input features).
    pub fn penultimate_width(&self) -> usize {
        self.net.penultimate_width()
    }

    /// SHA-256 of the serialized weights.
    pub fn weights_checksum(&self) -> String {
        hex::encode(Sha256::digest(self.net.weight_blob()))
    }

    fn check_shape(&self, image: &ImageTensor) -> Result<()> {
        if image.shape() != self.spec.input {
            return Err(Error::config(format!(
                "image shape {:?} does not match model input {:?}",
                image.shape(),
                self.spec.input
            )));
        }
        Ok(())
    }

    fn batch_tensor(&self, images: &[&ImageTensor]) -> Result<Array4<f32>> {
        let shape = self.spec.input;
        let mut out = Array4::<f32>::zeros((images.len(), shape.channels, shape.height, shape.width));
        for (n, image) in images.iter().enumerate() {
            self.check_shape(image)?;
            let values = image.values();
            for ch in 0..shape.channels {
                for row in 0..shape.height {
                    for col in 0..shape.width {
                        out[[n, ch, row, col]] =
                            values[(row * shape.width + col) * shape.channels + ch];
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Converts a `[B, C, H, W]` gradient back to per-image HWC vectors.
fn chw_to_hwc_rows(grad: &Array4<f32>, shape: ImageShape) -> Vec<Vec<f32>> {
    let (b, c, h, w) = grad.dim();
    debug_assert_eq!((c, h, w), (shape.channels, shape.height, shape.width));
    (0..b)
        .map(|n| {
            let mut row = vec![0.0f32; shape.len()];
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        row[(y * w + x) * c + ch] = grad[[n, ch, y, x]];
                    }
                }
            }
            row
        })
        .collect()
}

impl Classifier for TrainedClassifier {
    fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    fn input_shape(&self) -> ImageShape {
        self.spec.input
    }

    fn logits(&self, image: &ImageTensor) -> Result<Vec<f32>> {
        let batch = self.batch_tensor(&[image])?;
        let pass = self.net.forward(&batch, false);
        Ok(pass.logits.row(0).to_vec())
    }

    fn logits_batch(&self, images: &[&ImageTensor]) -> Result<Vec<Vec<f32>>> {
        let chunks: Vec<Result<Vec<Vec<f32>>>> = images
            .par_chunks(INFER_CHUNK)
            .map(|chunk| {
                let batch = self.batch_tensor(chunk)?;
                let pass = self.net.forward(&batch, false);
                Ok(pass.logits.rows().into_iter().map(|r| r.to_vec()).collect())
            })
            .collect();
        let mut out = Vec::with_capacity(images.len());
        for chunk in chunks {
            out.extend(chunk?);
        }
        Ok(out)
    }

    fn input_gradients_batch(
        &self,
        images: &[&ImageTensor],
        dlogits: &[Vec<f32>],
    ) -> Result<Vec<Vec<f32>>> {
        if images.len() != dlogits.len() {
            return Err(Error::config("need one dlogits row per image"));
        }
        let pairs: Vec<(usize, &[&ImageTensor], &[Vec<f32>])> = images
            .chunks(INFER_CHUNK)
            .zip(dlogits.chunks(INFER_CHUNK))
            .map(|(imgs, ds)| (imgs.len(), imgs, ds))
            .collect();
        let chunks: Vec<Result<Vec<Vec<f32>>>> = pairs
            .into_par_iter()
            .map(|(len, imgs, ds)| {
                let batch = self.batch_tensor(imgs)?;
                let pass = self.net.forward(&batch, true);
                let mut dl = Array2::<f32>::zeros((len, self.spec.num_classes));
                for (i, row) in ds.iter().enumerate() {
                    for (j, &v) in row.iter().enumerate() {
                        dl[[i, j]] = v;
                    }
                }
                let (_, dinput) = self.net.backward(&pass, dl, false, true);
                Ok(chw_to_hwc_rows(&dinput.expect("input gradient requested"), self.spec.input))
            })
            .collect();
        let mut out = Vec::with_capacity(images.len());
        for chunk in chunks {
            out.extend(chunk?);
        }
        Ok(out)
    }

    fn objective_gradients_batch(
        &self,
        images: &[&ImageTensor],
        objective: Objective,
    ) -> Result<(Vec<Vec<f32>>, Vec<Vec<f32>>)> {
        let chunks: Vec<Result<(Vec<Vec<f32>>, Vec<Vec<f32>>)>> = images
            .par_chunks(INFER_CHUNK)
            .map(|chunk| {
                let batch = self.batch_tensor(chunk)?;
                let pass = self.net.forward(&batch, true);
                let logits: Vec<Vec<f32>> =
                    pass.logits.rows().into_iter().map(|r| r.to_vec()).collect();
                let mut dl = Array2::<f32>::zeros((chunk.len(), self.spec.num_classes));
                for (i, row) in logits.iter().enumerate() {
                    for (j, &v) in objective.dlogits(row).iter().enumerate() {
                        dl[[i, j]] = v;
                    }
                }
                let (_, dinput) = self.net.backward(&pass, dl, false, true);
                let grads =
                    chw_to_hwc_rows(&dinput.expect("input gradient requested"), self.spec.input);
                Ok((logits, grads))
            })
            .collect();
        let mut logits = Vec::with_capacity(images.len());
        let mut grads = Vec::with_capacity(images.len());
        for chunk in chunks {
            let (l, g) = chunk?;
            logits.extend(l);
            grads.extend(g);
        }
        Ok((logits, grads))
    }

    fn penultimate_batch(&self, images: &[&ImageTensor]) -> Result<Vec<Vec<f32>>> {
        let chunks: Vec<Result<Vec<Vec<f32>>>> = images
            .par_chunks(INFER_CHUNK)
            .map(|chunk| {
                let batch = self.batch_tensor(chunk)?;
                let pass = self.net.forward(&batch, false);
                Ok(pass.penultimate.rows().into_iter().map(|r| r.to_vec()).collect())
            })
            .collect();
        let mut out = Vec::with_capacity(images.len());
        for chunk in chunks {
            out.extend(chunk?);
        }
        Ok(out)
    }
}

/// Checkpoint sidecar: spec, seed, train config, optional metrics, and the
/// checksum of the weights blob.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub spec: ClassifierSpec,
    pub train_config: TrainConfig,
    pub metrics: Option<MetricsReport>,
    pub weights_checksum: String,
}

pub const CHECKPOINT_WEIGHTS: &str = "model.bin";
pub const CHECKPOINT_META: &str = "model.json";

/// Writes `model.bin` (weights) and `model.json` (sidecar) under `dir`.
pub fn save_checkpoint(
    model: &TrainedClassifier,
    dir: &Path,
    metrics: Option<&MetricsReport>,
) -> Result<CheckpointMeta> {
    std::fs::create_dir_all(dir)?;
    let blob = model.net.weight_blob();
    let meta = CheckpointMeta {
        spec: model.spec.clone(),
        train_config: model.train_config.clone(),
        metrics: metrics.cloned(),
        weights_checksum: hex::encode(Sha256::digest(&blob)),
    };
    write_atomic(&dir.join(CHECKPOINT_WEIGHTS), &blob)?;
    write_json(&dir.join(CHECKPOINT_META), &meta)?;
    Ok(meta)
}

/// Loads a checkpoint directory, verifying the weights checksum.
pub fn load_checkpoint(dir: &Path) -> Result<(TrainedClassifier, CheckpointMeta)> {
    let meta: CheckpointMeta = read_json(&dir.join(CHECKPOINT_META))?;
    let blob = std::fs::read(dir.join(CHECKPOINT_WEIGHTS))?;
    let actual = hex::encode(Sha256::digest(&blob));
    if actual != meta.weights_checksum {
        return Err(Error::corruption(format!(
            "weights checksum mismatch: sidecar {}, payload {actual}",
            meta.weights_checksum
        )));
    }
    let mut net = Network::new(
        meta.spec.architecture,
        meta.spec.input,
        meta.spec.num_classes,
        meta.train_config.seed,
    )?;
    net.load_weight_blob(&blob)?;
    Ok((TrainedClassifier::from_parts(meta.spec.clone(), net, meta.train_config.clone()), meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_synthetic;

    #[test]
    fn probabilities_sum_to_one() {
        let data = generate_synthetic(4, 20, 16, 2).unwrap();
        let spec =
            ClassifierSpec::new(Architecture::Cnn2_1, ImageShape::new(16, 16, 3), 4).unwrap();
        let config = TrainConfig { epochs: 1, ..Default::default() };
        let model = train(&spec, &data, &config).unwrap();
        for ex in data.examples.iter().take(10) {
            let p = model.predict_proba(&ex.image).unwrap();
            assert!((p.iter().sum::<f32>() - 1.0).abs() < 1e-5);
            let p2 = model.predict_proba(&ex.image).unwrap();
            assert_eq!(p, p2);
        }
    }

    #[test]
    fn linear_model_matches_closed_form_softmax() {
        // 1x1x3 input, 2 classes, hand-picked weights.
        let shape = ImageShape::new(1, 1, 3);
        let model = TrainedClassifier::linear_from_weights(
            shape,
            2,
            &[vec![1.0, 0.0, -1.0], vec![0.5, 2.0, 0.0]],
            &[0.1, -0.2],
        )
        .unwrap();
        let image = ImageTensor::new(shape, vec![0.3, 0.6, 0.9]).unwrap();
        // logits: [1*0.3 - 1*0.9 + 0.1, 0.5*0.3 + 2*0.6 - 0.2] = [-0.5, 1.15]
        let logits = model.logits(&image).unwrap();
        assert!((logits[0] - -0.5).abs() < 1e-6);
        assert!((logits[1] - 1.15).abs() < 1e-6);
        let p = model.predict_proba(&image).unwrap();
        let e0 = (-0.5f64).exp();
        let e1 = (1.15f64).exp();
        assert!((p[0] as f64 - e0 / (e0 + e1)).abs() < 1e-6);
        assert!((p[1] as f64 - e1 / (e0 + e1)).abs() < 1e-6);
    }

    #[test]
    fn constant_objective_has_zero_gradient() {
        let shape = ImageShape::new(1, 1, 3);
        let model = TrainedClassifier::linear_from_weights(
            shape,
            2,
            &[vec![1.0, 2.0, 3.0], vec![-1.0, 0.0, 1.0]],
            &[0.0, 0.0],
        )
        .unwrap();
        let image = ImageTensor::new(shape, vec![0.5, 0.5, 0.5]).unwrap();
        let grad = input_gradient(&model, &image, Objective::Constant(3.0)).unwrap();
        assert!(grad.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn logit_objective_gradient_is_the_weight_row() {
        let shape = ImageShape::new(1, 2, 3);
        let rows = vec![vec![1.0, -2.0, 3.0, 0.5, 0.0, -1.0], vec![0.0; 6]];
        let model = TrainedClassifier::linear_from_weights(shape, 2, &rows, &[0.0, 0.0]).unwrap();
        let image = ImageTensor::new(shape, vec![0.1; 6]).unwrap();
        let grad = input_gradient(&model, &image, Objective::Logit(0)).unwrap();
        for (g, w) in grad.iter().zip(&rows[0]) {
            assert!((g - w).abs() < 1e-6);
        }
    }

    #[test]
    fn checkpoint_round_trips_and_detects_corruption() {
        let data = generate_synthetic(4, 20, 16, 2).unwrap();
        let spec =
            ClassifierSpec::new(Architecture::Cnn2_1, ImageShape::new(16, 16, 3), 4).unwrap();
        let config = TrainConfig { epochs: 1, ..Default::default() };
        let model = train(&spec, &data, &config).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(&model, dir.path(), None).unwrap();
        let (loaded, meta) = load_checkpoint(dir.path()).unwrap();
        assert_eq!(loaded.weights_checksum(), model.weights_checksum());
        assert_eq!(meta.weights_checksum, model.weights_checksum());

        let mut blob = std::fs::read(dir.path().join(CHECKPOINT_WEIGHTS)).unwrap();
        let last = blob.len() - 1;
        blob[last] ^= 0x01;
        std::fs::write(dir.path().join(CHECKPOINT_WEIGHTS), blob).unwrap();
        assert!(matches!(load_checkpoint(dir.path()), Err(Error::Corruption(_))));
    }
}
