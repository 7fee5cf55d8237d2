//! The fixed-architecture feed-forward network behind [`crate::model::TrainedClassifier`]:
//! forward, parameter/input backward, seeded initialization, and the
//! weights blob format.

use ndarray::{Array2, Array4, Axis};
use rand::Rng;

use crate::data::ImageShape;
use crate::error::{Error, Result};
use crate::model::layers::{
    col2im3x3, im2col3x3, maxpool2, maxpool2_backward, relu_backward_inplace, relu_inplace,
};
use crate::model::Architecture;
use crate::rng;

/// Convolution weights stored im2col-ready: `[in_c * 9, out_c]`.
#[derive(Debug, Clone)]
pub struct Conv {
    pub weight: Array2<f32>,
    pub bias: Vec<f32>,
    pub in_c: usize,
    pub out_c: usize,
}

#[derive(Debug, Clone)]
pub struct Dense {
    /// `[in_features, out_features]`.
    pub weight: Array2<f32>,
    pub bias: Vec<f32>,
}

#[derive(Debug, Clone)]
pub enum Layer {
    Conv(Conv),
    Relu,
    MaxPool2,
    Flatten,
    Dense(Dense),
}

/// Intermediate activations: image-shaped until `Flatten`, flat afterwards.
#[derive(Debug, Clone)]
enum Act {
    Image(Array4<f32>),
    Flat(Array2<f32>),
}

enum Cache {
    Conv { col: Array2<f32>, h: usize, w: usize },
    Relu { output: Act },
    MaxPool2 { winners: Vec<u8>, h: usize, w: usize },
    Flatten { c: usize, h: usize, w: usize },
    Dense { input: Array2<f32> },
}

/// Per-layer parameter gradients, aligned with `Network::layers`.
pub enum LayerGrad {
    Conv { dw: Array2<f32>, db: Vec<f32> },
    Dense { dw: Array2<f32>, db: Vec<f32> },
    None,
}

pub struct ForwardPass {
    pub logits: Array2<f32>,
    /// Activation entering the final dense layer.
    pub penultimate: Array2<f32>,
    caches: Option<Vec<Cache>>,
}

#[derive(Debug, Clone)]
pub struct Network {
    pub layers: Vec<Layer>,
}

impl Network {
    /// Builds a seeded network for the given architecture.
    pub fn new(
        architecture: Architecture,
        input: ImageShape,
        num_classes: usize,
        seed: u64,
    ) -> Result<Self> {
        let pools = match architecture {
            Architecture::Linear => 0,
            Architecture::Cnn2_1 => 2,
            Architecture::Cnn6_2 => 3,
        };
        let divisor = 1usize << pools;
        if input.height % divisor != 0 || input.width % divisor != 0 {
            return Err(Error::config(format!(
                "{architecture:?} needs image sides divisible by {divisor}, got {}x{}",
                input.height, input.width
            )));
        }

        let mut rng = rng::stream(seed, "init", 0);
        let mut layers = Vec::new();
        let mut c = input.channels;
        let (mut h, mut w) = (input.height, input.width);

        let conv_plan: &[&[usize]] = match architecture {
            Architecture::Linear => &[],
            Architecture::Cnn2_1 => &[&[8], &[16]],
            Architecture::Cnn6_2 => &[&[16, 16], &[32, 32], &[64, 64]],
        };
        for block in conv_plan {
            for &out_c in *block {
                layers.push(Layer::Conv(init_conv(c, out_c, &mut rng)));
                layers.push(Layer::Relu);
                c = out_c;
            }
            layers.push(Layer::MaxPool2);
            h /= 2;
            w /= 2;
        }
        layers.push(Layer::Flatten);
        let mut features = c * h * w;
        if matches!(architecture, Architecture::Cnn6_2) {
            layers.push(Layer::Dense(init_dense(features, 128, &mut rng)));
            layers.push(Layer::Relu);
            features = 128;
        }
        layers.push(Layer::Dense(init_dense(features, num_classes, &mut rng)));

        Ok(Self { layers })
    }

    /// Width of the activation entering the final dense layer.
    pub fn penultimate_width(&self) -> usize {
        match self.layers.last() {
            Some(Layer::Dense(d)) => d.weight.dim().0,
            _ => unreachable!("networks always end in a dense layer"),
        }
    }

    pub fn forward(&self, batch: &Array4<f32>, want_caches: bool) -> ForwardPass {
        let mut act = Act::Image(batch.clone());
        let mut caches = want_caches.then(Vec::new);
        let mut penultimate = None;

        for (i, layer) in self.layers.iter().enumerate() {
            let is_final_dense = i + 1 == self.layers.len();
            match layer {
                Layer::Conv(conv) => {
                    let input = match &act {
                        Act::Image(x) => x,
                        Act::Flat(_) => unreachable!("conv after flatten"),
                    };
                    let (b, _, h, w) = input.dim();
                    let col = im2col3x3(input);
                    let mut out_mat = col.dot(&conv.weight);
                    for mut row in out_mat.rows_mut() {
                        for (v, &bias) in row.iter_mut().zip(&conv.bias) {
                            *v += bias;
                        }
                    }
                    let out = mat_to_image(&out_mat, b, conv.out_c, h, w);
                    if let Some(c) = caches.as_mut() {
                        c.push(Cache::Conv { col, h, w });
                    }
                    act = Act::Image(out);
                }
                Layer::Relu => {
                    match &mut act {
                        Act::Image(x) => relu_inplace(x.as_slice_mut().expect("contiguous")),
                        Act::Flat(x) => relu_inplace(x.as_slice_mut().expect("contiguous")),
                    }
                    if let Some(c) = caches.as_mut() {
                        c.push(Cache::Relu { output: act.clone() });
                    }
                }
                Layer::MaxPool2 => {
                    let input = match &act {
                        Act::Image(x) => x,
                        Act::Flat(_) => unreachable!("pool after flatten"),
                    };
                    let (_, _, h, w) = input.dim();
                    let (out, winners) = maxpool2(input);
                    if let Some(c) = caches.as_mut() {
                        c.push(Cache::MaxPool2 { winners, h, w });
                    }
                    act = Act::Image(out);
                }
                Layer::Flatten => {
                    let input = match act {
                        Act::Image(x) => x,
                        Act::Flat(_) => unreachable!("double flatten"),
                    };
                    let (b, c, h, w) = input.dim();
                    if let Some(cs) = caches.as_mut() {
                        cs.push(Cache::Flatten { c, h, w });
                    }
                    // Features are ordered (row, col, channel) to match the
                    // image layout, so dense weight rows, penultimate
                    // vectors, and input gradients all share it.
                    let hwc = input.permuted_axes([0, 2, 3, 1]);
                    act = Act::Flat(
                        hwc.as_standard_layout()
                            .to_owned()
                            .into_shape_with_order((b, c * h * w))
                            .expect("contiguous reshape"),
                    );
                }
                Layer::Dense(dense) => {
                    let input = match &act {
                        Act::Flat(x) => x.clone(),
                        Act::Image(_) => unreachable!("dense before flatten"),
                    };
                    if is_final_dense {
                        penultimate = Some(input.clone());
                    }
                    let mut out = input.dot(&dense.weight);
                    for mut row in out.rows_mut() {
                        for (v, &bias) in row.iter_mut().zip(&dense.bias) {
                            *v += bias;
                        }
                    }
                    if let Some(c) = caches.as_mut() {
                        c.push(Cache::Dense { input });
                    }
                    act = Act::Flat(out);
                }
            }
        }

        let logits = match act {
            Act::Flat(x) => x,
            Act::Image(_) => unreachable!("network ends flat"),
        };
        ForwardPass {
            logits,
            penultimate: penultimate.expect("final dense captured its input"),
            caches,
        }
    }

    /// Backpropagates `dlogits` through the cached forward pass.
    ///
    /// Returns parameter gradients (when `want_params`) and the gradient
    /// with respect to the input batch (when `want_input`).
    pub fn backward(
        &self,
        pass: &ForwardPass,
        dlogits: Array2<f32>,
        want_params: bool,
        want_input: bool,
    ) -> (Vec<LayerGrad>, Option<Array4<f32>>) {
        let caches = pass.caches.as_ref().expect("forward was run with caches");
        let mut grads: Vec<LayerGrad> = Vec::with_capacity(self.layers.len());
        let mut dact = Act::Flat(dlogits);

        for (layer, cache) in self.layers.iter().zip(caches.iter()).rev() {
            match (layer, cache) {
                (Layer::Dense(dense), Cache::Dense { input }) => {
                    let dout = match &dact {
                        Act::Flat(d) => d,
                        Act::Image(_) => unreachable!(),
                    };
                    if want_params {
                        let dw = input.t().dot(dout);
                        let db = dout.sum_axis(Axis(0)).to_vec();
                        grads.push(LayerGrad::Dense { dw, db });
                    } else {
                        grads.push(LayerGrad::None);
                    }
                    dact = Act::Flat(dout.dot(&dense.weight.t()));
                }
                (Layer::Flatten, Cache::Flatten { c, h, w }) => {
                    let dout = match dact {
                        Act::Flat(d) => d,
                        Act::Image(_) => unreachable!(),
                    };
                    let b = dout.dim().0;
                    grads.push(LayerGrad::None);
                    let bhwc = dout
                        .into_shape_with_order((b, *h, *w, *c))
                        .expect("contiguous reshape");
                    dact = Act::Image(
                        bhwc.permuted_axes([0, 3, 1, 2]).as_standard_layout().to_owned(),
                    );
                }
                (Layer::MaxPool2, Cache::MaxPool2 { winners, h, w }) => {
                    let dout = match &dact {
                        Act::Image(d) => d,
                        Act::Flat(_) => unreachable!(),
                    };
                    grads.push(LayerGrad::None);
                    dact = Act::Image(maxpool2_backward(dout, winners, *h, *w));
                }
                (Layer::Relu, Cache::Relu { output }) => {
                    match (&mut dact, output) {
                        (Act::Image(d), Act::Image(y)) => relu_backward_inplace(
                            d.as_slice_mut().expect("contiguous"),
                            y.as_slice().expect("contiguous"),
                        ),
                        (Act::Flat(d), Act::Flat(y)) => relu_backward_inplace(
                            d.as_slice_mut().expect("contiguous"),
                            y.as_slice().expect("contiguous"),
                        ),
                        _ => unreachable!("relu shape mismatch"),
                    }
                    grads.push(LayerGrad::None);
                }
                (Layer::Conv(conv), Cache::Conv { col, h, w }) => {
                    let dout = match &dact {
                        Act::Image(d) => d,
                        Act::Flat(_) => unreachable!(),
                    };
                    let b = dout.dim().0;
                    let dout_mat = image_to_mat(dout);
                    if want_params {
                        let dw = col.t().dot(&dout_mat);
                        let db = dout_mat.sum_axis(Axis(0)).to_vec();
                        grads.push(LayerGrad::Conv { dw, db });
                    } else {
                        grads.push(LayerGrad::None);
                    }
                    let is_first = std::ptr::eq(layer, &self.layers[0]);
                    if want_input || !is_first {
                        let dcol = dout_mat.dot(&conv.weight.t());
                        dact = Act::Image(col2im3x3(&dcol, b, conv.in_c, *h, *w));
                    }
                }
                _ => unreachable!("layer/cache mismatch"),
            }
        }
        grads.reverse();

        let dinput = want_input.then(|| match dact {
            Act::Image(d) => d,
            // Every architecture starts image-shaped (Conv or Flatten).
            Act::Flat(_) => unreachable!("input gradient is image-shaped"),
        });
        (grads, dinput)
    }

    /// Serializes all parameters as little-endian f32, prefixed with a magic tag.
    pub fn weight_blob(&self) -> Vec<u8> {
        let mut blob = Vec::new();
        blob.extend_from_slice(WEIGHTS_MAGIC);
        for layer in &self.layers {
            match layer {
                Layer::Conv(c) => {
                    push_f32s(&mut blob, c.weight.as_slice().expect("standard layout"));
                    push_f32s(&mut blob, &c.bias);
                }
                Layer::Dense(d) => {
                    push_f32s(&mut blob, d.weight.as_slice().expect("standard layout"));
                    push_f32s(&mut blob, &d.bias);
                }
                _ => {}
            }
        }
        blob
    }

    /// Restores parameters from a blob produced by [`Network::weight_blob`].
    pub fn load_weight_blob(&mut self, blob: &[u8]) -> Result<()> {
        if blob.len() < WEIGHTS_MAGIC.len() || &blob[..WEIGHTS_MAGIC.len()] != WEIGHTS_MAGIC {
            return Err(Error::format("weights blob has wrong magic tag"));
        }
        let mut cursor = WEIGHTS_MAGIC.len();
        let take = |cursor: &mut usize, n: usize| -> Result<Vec<f32>> {
            let bytes = n * 4;
            if *cursor + bytes > blob.len() {
                return Err(Error::format("weights blob truncated"));
            }
            let values = blob[*cursor..*cursor + bytes]
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            *cursor += bytes;
            Ok(values)
        };
        for layer in &mut self.layers {
            match layer {
                Layer::Conv(c) => {
                    let (rows, cols) = c.weight.dim();
                    let values = take(&mut cursor, rows * cols)?;
                    c.weight = Array2::from_shape_vec((rows, cols), values).expect("shape fixed");
                    c.bias = take(&mut cursor, c.out_c)?;
                }
                Layer::Dense(d) => {
                    let (rows, cols) = d.weight.dim();
                    let values = take(&mut cursor, rows * cols)?;
                    d.weight = Array2::from_shape_vec((rows, cols), values).expect("shape fixed");
                    d.bias = take(&mut cursor, cols)?;
                }
                _ => {}
            }
        }
        if cursor != blob.len() {
            return Err(Error::format("weights blob has trailing bytes"));
        }
        Ok(())
    }
}

pub const WEIGHTS_MAGIC: &[u8] = b"BKDRLAB1";

fn push_f32s(blob: &mut Vec<u8>, values: &[f32]) {
    for v in values {
        blob.extend_from_slice(&v.to_le_bytes());
    }
}

/// `[B*H*W, C]` (rows ordered batch, row, col) → `[B, C, H, W]`.
fn mat_to_image(mat: &Array2<f32>, b: usize, c: usize, h: usize, w: usize) -> Array4<f32> {
    let bhwc = mat
        .to_owned()
        .into_shape_with_order((b, h, w, c))
        .expect("contiguous reshape");
    let mut out = bhwc.permuted_axes([0, 3, 1, 2]);
    out = out.as_standard_layout().to_owned();
    out
}

/// `[B, C, H, W]` → `[B*H*W, C]` with rows ordered (batch, row, col).
fn image_to_mat(image: &Array4<f32>) -> Array2<f32> {
    let (b, c, h, w) = image.dim();
    let bhwc = image.view().permuted_axes([0, 2, 3, 1]);
    bhwc.as_standard_layout()
        .to_owned()
        .into_shape_with_order((b * h * w, c))
        .expect("contiguous reshape")
}

fn init_conv(in_c: usize, out_c: usize, rng: &mut impl Rng) -> Conv {
    let fan_in = in_c * 9;
    let bound = (6.0 / fan_in as f32).sqrt();
    let weight = Array2::from_shape_fn((fan_in, out_c), |_| rng.gen_range(-bound..bound));
    Conv { weight, bias: vec![0.0; out_c], in_c, out_c }
}

fn init_dense(in_f: usize, out_f: usize, rng: &mut impl Rng) -> Dense {
    let bound = (6.0 / in_f as f32).sqrt();
    let weight = Array2::from_shape_fn((in_f, out_f), |_| rng.gen_range(-bound..bound));
    Dense { weight, bias: vec![0.0; out_f] }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_net() -> Network {
        Network::new(Architecture::Cnn2_1, ImageShape::new(8, 8, 3), 4, 7).unwrap()
    }

    #[test]
    fn forward_shapes_are_consistent() {
        let net = tiny_net();
        let batch = Array4::<f32>::zeros((5, 3, 8, 8));
        let pass = net.forward(&batch, false);
        assert_eq!(pass.logits.dim(), (5, 4));
        assert_eq!(pass.penultimate.dim(), (5, 16 * 2 * 2));
    }

    #[test]
    fn weight_blob_round_trips() {
        let net = tiny_net();
        let blob = net.weight_blob();
        let mut other = Network::new(Architecture::Cnn2_1, ImageShape::new(8, 8, 3), 4, 99).unwrap();
        other.load_weight_blob(&blob).unwrap();
        assert_eq!(blob, other.weight_blob());
    }

    #[test]
    fn load_rejects_truncated_blob() {
        let net = tiny_net();
        let blob = net.weight_blob();
        let mut other = tiny_net();
        assert!(other.load_weight_blob(&blob[..blob.len() - 4]).is_err());
    }

    #[test]
    fn odd_image_sides_are_rejected_for_cnns() {
        assert!(Network::new(Architecture::Cnn2_1, ImageShape::new(17, 17, 3), 4, 7).is_err());
        assert!(Network::new(Architecture::Linear, ImageShape::new(17, 17, 3), 4, 7).is_ok());
    }
}
