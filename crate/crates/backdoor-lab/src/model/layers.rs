//! Layer primitives: 3×3 same-padding convolution via im2col + GEMM,
//! 2×2 max pooling, dense layers, ReLU. Everything is f32 and batched
//! as `[batch, channels, height, width]`.

use ndarray::{Array2, Array4};

/// im2col for a 3×3 kernel with padding 1 and stride 1.
/// `[B, C, H, W]` → `[B*H*W, C*9]`, rows ordered (batch, row, col).
pub fn im2col3x3(input: &Array4<f32>) -> Array2<f32> {
    let (b, c, h, w) = input.dim();
    let cols = c * 9;
    let mut col = Array2::<f32>::zeros((b * h * w, cols));
    let col_slice = col.as_slice_mut().expect("freshly allocated is contiguous");
    let in_slice = input.as_slice().expect("standard layout");

    for bi in 0..b {
        for ci in 0..c {
            let plane = &in_slice[(bi * c + ci) * h * w..(bi * c + ci + 1) * h * w];
            for y in 0..h {
                let row_base = (bi * h + y) * w;
                for ky in 0..3usize {
                    let yy = y as isize + ky as isize - 1;
                    if yy < 0 || yy >= h as isize {
                        continue;
                    }
                    let src_row = &plane[yy as usize * w..(yy as usize + 1) * w];
                    for kx in 0..3usize {
                        let k = ci * 9 + ky * 3 + kx;
                        // x + kx - 1 must fall inside [0, w)
                        let x_lo = if kx == 0 { 1 } else { 0 };
                        let x_hi = if kx == 2 { w - 1 } else { w };
                        for x in x_lo..x_hi {
                            let xx = x + kx - 1;
                            col_slice[(row_base + x) * cols + k] = src_row[xx];
                        }
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col3x3`]: scatter-adds `[B*H*W, C*9]` back to `[B, C, H, W]`.
pub fn col2im3x3(dcol: &Array2<f32>, b: usize, c: usize, h: usize, w: usize) -> Array4<f32> {
    let cols = c * 9;
    let mut out = Array4::<f32>::zeros((b, c, h, w));
    let out_slice = out.as_slice_mut().expect("freshly allocated is contiguous");
    let dcol_slice = dcol.as_slice().expect("standard layout");

    for bi in 0..b {
        for ci in 0..c {
            let plane_base = (bi * c + ci) * h * w;
            for y in 0..h {
                let row_base = (bi * h + y) * w;
                for ky in 0..3usize {
                    let yy = y as isize + ky as isize - 1;
                    if yy < 0 || yy >= h as isize {
                        continue;
                    }
                    let dst_row = plane_base + yy as usize * w;
                    for kx in 0..3usize {
                        let k = ci * 9 + ky * 3 + kx;
                        let x_lo = if kx == 0 { 1 } else { 0 };
                        let x_hi = if kx == 2 { w - 1 } else { w };
                        for x in x_lo..x_hi {
                            let xx = x + kx - 1;
                            out_slice[dst_row + xx] += dcol_slice[(row_base + x) * cols + k];
                        }
                    }
                }
            }
        }
    }
    out
}

/// 2×2 max pooling with stride 2. Returns the pooled map and the winning
/// quadrant (0..4) per output cell for the backward pass.
pub fn maxpool2(input: &Array4<f32>) -> (Array4<f32>, Vec<u8>) {
    let (b, c, h, w) = input.dim();
    debug_assert!(h % 2 == 0 && w % 2 == 0);
    let (oh, ow) = (h / 2, w / 2);
    let mut out = Array4::<f32>::zeros((b, c, oh, ow));
    let mut winners = vec![0u8; b * c * oh * ow];
    let in_slice = input.as_slice().expect("standard layout");
    let out_slice = out.as_slice_mut().expect("contiguous");

    for plane in 0..b * c {
        let src = &in_slice[plane * h * w..(plane + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let y = oy * 2;
                let x = ox * 2;
                let candidates = [
                    src[y * w + x],
                    src[y * w + x + 1],
                    src[(y + 1) * w + x],
                    src[(y + 1) * w + x + 1],
                ];
                let mut best = 0usize;
                for (i, &v) in candidates.iter().enumerate().skip(1) {
                    if v > candidates[best] {
                        best = i;
                    }
                }
                let o = plane * oh * ow + oy * ow + ox;
                out_slice[o] = candidates[best];
                winners[o] = best as u8;
            }
        }
    }
    (out, winners)
}

/// Routes pooled-output gradients back to the winning input cells.
pub fn maxpool2_backward(
    dout: &Array4<f32>,
    winners: &[u8],
    h: usize,
    w: usize,
) -> Array4<f32> {
    let (b, c, oh, ow) = dout.dim();
    let mut din = Array4::<f32>::zeros((b, c, h, w));
    let din_slice = din.as_slice_mut().expect("contiguous");
    let dout_slice = dout.as_slice().expect("standard layout");

    for plane in 0..b * c {
        for oy in 0..oh {
            for ox in 0..ow {
                let o = plane * oh * ow + oy * ow + ox;
                let which = winners[o] as usize;
                let y = oy * 2 + which / 2;
                let x = ox * 2 + which % 2;
                din_slice[plane * h * w + y * w + x] = dout_slice[o];
            }
        }
    }
    din
}

/// In-place ReLU; returns nothing, the activation itself is the backward mask.
pub fn relu_inplace(x: &mut [f32]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// dL/dx = dL/dy where the forward output was positive, else 0.
pub fn relu_backward_inplace(dout: &mut [f32], forward_out: &[f32]) {
    for (d, &y) in dout.iter_mut().zip(forward_out) {
        if y <= 0.0 {
            *d = 0.0;
        }
    }
}

/// Numerically stable softmax of one logit row.
pub fn softmax(logits: &[f32]) -> Vec<f32> {
    let max = logits.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f32> = logits.iter().map(|&v| (v - max).exp()).collect();
    let sum: f32 = exps.iter().sum();
    exps.into_iter().map(|v| v / sum).collect()
}

/// Argmax with ties broken toward the smaller index.
pub fn argmax(values: &[f32]) -> usize {
    let mut best = 0usize;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array4;

    #[test]
    fn im2col_center_tap_reproduces_input() {
        let mut input = Array4::<f32>::zeros((1, 2, 4, 4));
        for (i, v) in input.iter_mut().enumerate() {
            *v = i as f32;
        }
        let col = im2col3x3(&input);
        // Column (ci*9 + 4) is the center tap: equals the input pixel itself.
        for y in 0..4 {
            for x in 0..4 {
                for ci in 0..2 {
                    assert_eq!(col[[y * 4 + x, ci * 9 + 4]], input[[0, ci, y, x]]);
                }
            }
        }
    }

    #[test]
    fn col2im_is_the_adjoint_of_im2col() {
        // <im2col(x), y> == <x, col2im(y)> for random x, y.
        use rand::Rng;
        let mut rng = crate::rng::stream(42, "adjoint", 0);
        let x = Array4::from_shape_fn((2, 3, 4, 4), |_| rng.gen_range(-1.0f32..1.0));
        let y = Array2::from_shape_fn((2 * 4 * 4, 3 * 9), |_| rng.gen_range(-1.0f32..1.0));
        let lhs: f64 = im2col3x3(&x).iter().zip(y.iter()).map(|(&a, &b)| (a * b) as f64).sum();
        let back = col2im3x3(&y, 2, 3, 4, 4);
        let rhs: f64 = x.iter().zip(back.iter()).map(|(&a, &b)| (a * b) as f64).sum();
        assert!((lhs - rhs).abs() < 1e-3, "{lhs} vs {rhs}");
    }

    #[test]
    fn maxpool_picks_the_max_and_routes_gradients() {
        let input = Array4::from_shape_vec(
            (1, 1, 2, 2),
            vec![1.0, 5.0, 3.0, 2.0],
        )
        .unwrap();
        let (out, winners) = maxpool2(&input);
        assert_eq!(out[[0, 0, 0, 0]], 5.0);
        let dout = Array4::from_elem((1, 1, 1, 1), 2.0);
        let din = maxpool2_backward(&dout, &winners, 2, 2);
        assert_eq!(din[[0, 0, 0, 1]], 2.0);
        assert_eq!(din[[0, 0, 0, 0]], 0.0);
    }

    #[test]
    fn softmax_sums_to_one_and_argmax_breaks_ties_low() {
        let p = softmax(&[1.0, 2.0, 3.0]);
        assert!((p.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        assert_eq!(argmax(&[0.5, 0.5, 0.1]), 0);
    }
}
