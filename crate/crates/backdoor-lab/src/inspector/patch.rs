//! Patch learning: find a mask/pattern pair that flips the predictions of
//! the high-confidence samples of a label, under an L1 penalty on the mask
//! whose weight is adjusted dynamically to keep the flip rate high while
//! shrinking the patched area.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::attacks::{apply_trigger, Trigger, TriggerKind};
use crate::data::{ImageShape, ImageTensor};
use crate::error::{Error, Result};
use crate::model::{argmax, Classifier, Objective};
use crate::rng;

/// Optimizer settings for [`learn_patch`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PatchOptConfig {
    pub max_iters: usize,
    /// Adam step size on the latent mask/pattern variables.
    pub step_size: f32,
    /// Flip rate is evaluated and the λ schedule advanced every this many
    /// iterations.
    pub check_every: usize,
    /// Flip rate the schedule tries to keep (the paper's "no less than 95%").
    pub flip_target: f64,
    pub lambda_init: f64,
    pub lambda_factor: f64,
    /// Consecutive checks on one side of the target before λ moves.
    pub lambda_patience: usize,
    pub lambda_min: f64,
    pub lambda_max: f64,
    /// Stop early after this many consecutive checks at or above the flip
    /// target (the mask has been shrinking the whole time); 0 disables.
    pub early_stop_checks: usize,
    pub seed: u64,
}

impl Default for PatchOptConfig {
    fn default() -> Self {
        Self {
            max_iters: 500,
            step_size: 0.1,
            check_every: 5,
            flip_target: 0.95,
            lambda_init: 1e-2,
            lambda_factor: 1.5,
            lambda_patience: 5,
            lambda_min: 1e-7,
            lambda_max: 10.0,
            early_stop_checks: 14,
            seed: 0,
        }
    }
}

/// A learned patch: mask `M` (H×W) and pattern `P` (H×W×C), both in `[0,1]`
/// by construction, plus the final λ and the flip rate it achieved on the
/// high-confidence samples it was trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub shape: ImageShape,
    pub mask: Vec<f32>,
    pub pattern: Vec<f32>,
    pub lambda: f64,
    pub mask_l1: f64,
    pub achieved_flip_rate: f64,
}

impl Patch {
    /// View of the patch as a compositing trigger:
    /// `x' = (1 - M) ⊙ x + M ⊙ P`.
    pub fn to_trigger(&self) -> Trigger {
        Trigger {
            kind: TriggerKind::Patch,
            shape: self.shape,
            mask: Some(self.mask.clone()),
            pattern: self.pattern.clone(),
            alpha: None,
            placement: None,
        }
    }

    /// Applies the patch to one image.
    pub fn apply(&self, image: &ImageTensor) -> Result<ImageTensor> {
        apply_trigger(image, &self.to_trigger())
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// The patch objective for a fixed model, sample set, and label:
///
/// `J(m, p) = Σ_x (g_z(x') - 1)² - λ ||M||₁`
///
/// with `M = σ(m)`, `P = σ(p)`, `x' = (1 - M) ⊙ x + M ⊙ P`. Maximizing `J`
/// drives the label-`z` probability of every patched sample toward zero
/// while shrinking the mask. Exposed as a struct so the gradient can be
/// checked against finite differences of [`PatchProblem::objective`].
pub struct PatchProblem<'a> {
    model: &'a dyn Classifier,
    images: Vec<&'a ImageTensor>,
    label: usize,
    shape: ImageShape,
}

impl<'a> PatchProblem<'a> {
    pub fn new(
        model: &'a dyn Classifier,
        images: &[&'a ImageTensor],
        label: usize,
    ) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::config("patch learning needs at least one sample"));
        }
        let shape = images[0].shape();
        if images.iter().any(|img| img.shape() != shape) {
            return Err(Error::config("patch learning needs uniformly shaped samples"));
        }
        if label >= model.num_classes() {
            return Err(Error::config(format!("label {label} out of range")));
        }
        Ok(Self { model, images: images.to_vec(), label, shape })
    }

    pub fn mask_len(&self) -> usize {
        self.shape.height * self.shape.width
    }

    pub fn pattern_len(&self) -> usize {
        self.shape.len()
    }

    /// Squashes latents and composes the patched images.
    fn compose(
        &self,
        mask_latent: &[f64],
        pattern_latent: &[f64],
    ) -> (Vec<f64>, Vec<f64>, Vec<ImageTensor>) {
        let mask: Vec<f64> = mask_latent.iter().map(|&m| sigmoid(m)).collect();
        let pattern: Vec<f64> = pattern_latent.iter().map(|&p| sigmoid(p)).collect();
        let channels = self.shape.channels;
        let patched = self
            .images
            .iter()
            .map(|image| {
                let values = image
                    .values()
                    .iter()
                    .enumerate()
                    .map(|(i, &x)| {
                        let m = mask[i / channels];
                        (((1.0 - m) * x as f64 + m * pattern[i]) as f32).clamp(0.0, 1.0)
                    })
                    .collect();
                ImageTensor::new(self.shape, values).expect("convex combination stays in [0,1]")
            })
            .collect();
        (mask, pattern, patched)
    }

    /// Objective value at the given latents.
    pub fn objective(&self, mask_latent: &[f64], pattern_latent: &[f64], lambda: f64) -> Result<f64> {
        let (mask, _, patched) = self.compose(mask_latent, pattern_latent);
        let refs: Vec<&ImageTensor> = patched.iter().collect();
        let logits = self.model.logits_batch(&refs)?;
        let objective = Objective::LeaveLabel(self.label);
        let fit: f64 = logits.iter().map(|row| objective.value(row)).sum();
        let l1: f64 = mask.iter().sum::<f64>();
        Ok(fit - lambda * l1)
    }

    /// Objective value, its gradient with respect to both latents, and the
    /// per-sample logits at the current point. The latent chain runs in f64
    /// so that the vanishing gradients of nearly saturated samples keep
    /// their direction instead of flushing to zero.
    pub fn gradients(
        &self,
        mask_latent: &[f64],
        pattern_latent: &[f64],
        lambda: f64,
    ) -> Result<(f64, Vec<f64>, Vec<f64>, Vec<Vec<f32>>)> {
        let (mask, pattern, patched) = self.compose(mask_latent, pattern_latent);
        let refs: Vec<&ImageTensor> = patched.iter().collect();
        let objective = Objective::LeaveLabel(self.label);
        let (logits, grads) = self.model.objective_gradients_batch(&refs, objective)?;

        let channels = self.shape.channels;
        let mut dmask = vec![0.0f64; self.mask_len()];
        let mut dpattern = vec![0.0f64; self.pattern_len()];
        for (image, dx) in self.images.iter().zip(&grads) {
            let values = image.values();
            for (i, &g) in dx.iter().enumerate() {
                let pixel = i / channels;
                // x' = (1-M)x + MP  =>  ∂x'/∂M = P - x, ∂x'/∂P = M
                dmask[pixel] += g as f64 * (pattern[i] - values[i] as f64);
                dpattern[i] += g as f64 * mask[pixel];
            }
        }
        // L1 term: J includes -λ ΣM and M >= 0, so ∂J/∂M gets -λ.
        for (dm, &m) in dmask.iter_mut().zip(mask.iter()) {
            *dm -= lambda;
            *dm *= m * (1.0 - m); // σ'(latent) through M = σ(latent)
        }
        for (dp, &p) in dpattern.iter_mut().zip(pattern.iter()) {
            *dp *= p * (1.0 - p);
        }

        let fit: f64 = logits.iter().map(|row| objective.value(row)).sum();
        let l1: f64 = mask.iter().sum::<f64>();
        let value = fit - lambda * l1;
        if !value.is_finite() {
            return Err(Error::Optimization("patch objective is not finite".into()));
        }
        Ok((value, dmask, dpattern, logits))
    }
}

/// Latent bound: the sigmoid never saturates to the point where the L1
/// pull (proportional to sigma') loses its grip.
const LATENT_BOUND: f64 = 4.0;

/// Plain momentum ascent in f64 (the direction fed in is already
/// preconditioned to O(1) scale).
struct LatentMomentum {
    m: Vec<f64>,
}

impl LatentMomentum {
    fn new(len: usize) -> Self {
        Self { m: vec![0.0; len] }
    }

    /// Ascent step (the objective is maximized).
    fn ascend(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        for (i, (p, &g)) in params.iter_mut().zip(grad).enumerate() {
            self.m[i] = 0.9 * self.m[i] + 0.1 * g;
            *p = (*p + lr * self.m[i]).clamp(-LATENT_BOUND, LATENT_BOUND);
        }
    }
}

/// Per-coordinate adaptive ascent (Adam with a zero-denominator guard in
/// place of the usual epsilon floor, in f64). Scale-free per coordinate,
/// which is what makes the grow phase reliable against saturated models
/// whose gradients span many orders of magnitude.
struct LatentAdam {
    t: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl LatentAdam {
    fn new(len: usize) -> Self {
        Self { t: 0, m: vec![0.0; len], v: vec![0.0; len] }
    }

    fn ascend(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - 0.9f64.powi(self.t as i32);
        let bc2 = 1.0 - 0.999f64.powi(self.t as i32);
        for i in 0..params.len() {
            self.m[i] = 0.9 * self.m[i] + 0.1 * grad[i];
            self.v[i] = 0.999 * self.v[i] + 0.001 * grad[i] * grad[i];
            let denom = (self.v[i] / bc2).sqrt();
            if denom > 0.0 {
                params[i] =
                    (params[i] + lr * (self.m[i] / bc1) / denom).clamp(-LATENT_BOUND, LATENT_BOUND);
            }
        }
    }
}

/// Learns a patch that flips the model's predictions away from `label` on
/// the given high-confidence samples.
///
/// λ starts at `lambda_init`; after `lambda_patience` consecutive checks at
/// or above the flip target it grows by `lambda_factor` (shrinking the
/// mask), and after as many consecutive misses it shrinks. The best patch
/// seen — highest flip rate, then smallest mask L1 — is returned.
pub fn learn_patch(
    model: &dyn Classifier,
    high_confidence: &[&ImageTensor],
    label: usize,
    config: &PatchOptConfig,
) -> Result<Patch> {
    let problem = PatchProblem::new(model, high_confidence, label)?;
    let shape = problem.shape;

    // Mask starts small (σ(-2.2) ≈ 0.1), pattern near mid-gray, both with
    // seeded jitter to break symmetry.
    let mut jitter = rng::stream(config.seed, "patch-init", label as u64);
    let mut mask_latent: Vec<f64> =
        (0..problem.mask_len()).map(|_| -2.2 + jitter.gen_range(-0.1..0.1)).collect();
    let mut pattern_latent: Vec<f64> =
        (0..problem.pattern_len()).map(|_| jitter.gen_range(-0.5..0.5)).collect();

    let mut adam_mask = LatentAdam::new(mask_latent.len());
    let mut adam_pattern = LatentAdam::new(pattern_latent.len());
    let mut momentum_mask = LatentMomentum::new(mask_latent.len());
    let mut momentum_pattern = LatentMomentum::new(pattern_latent.len());

    // The optimization runs in two phases.
    //
    // Grow: per-coordinate adaptive ascent with no L1 penalty until the
    // patch first reaches the flip target. Against confident models the
    // fit gradient can sit 10+ orders of magnitude below any usable λ, so
    // sparsity pressure during growth would flatten the mask before it
    // covers anything.
    //
    // Shrink: the fit gradient, normalized by the largest magnitude seen
    // so far (at the optimum it collapses to numerical dust, so a running
    // reference is needed), competes against the λ·σ' pull of the L1 term,
    // with λ following the configured multiplicative schedule. Tensor-level
    // normalization preserves the cross-pixel structure that singles out
    // trigger pixels, so λ prunes redundant mask area while pixels that
    // actually hold the flips defend themselves.
    let mut shrinking = false;
    let mut lambda = 0.0f64;
    let mut above_streak = 0usize;
    let mut below_streak = 0usize;
    let mut stall_checks = 0usize;
    let mut l1_at_last_check = f64::INFINITY;
    let mut scale_ref = 0.0f64;

    let mut best: Option<Patch> = None;
    let n = high_confidence.len() as f64;

    for iter in 0..config.max_iters {
        let (_, fit_dmask, fit_dpattern, logits) =
            problem.gradients(&mask_latent, &pattern_latent, 0.0)?;
        let scale = fit_dmask
            .iter()
            .chain(&fit_dpattern)
            .fold(0.0f64, |acc, &g| acc.max(g.abs()));
        scale_ref = scale_ref.max(scale);

        // Flip rate of the current patch (pre-update).
        let flips = logits.iter().filter(|row| argmax(row) != label).count();
        let flip_rate = flips as f64 / n;
        let mask: Vec<f32> = mask_latent.iter().map(|&m| sigmoid(m) as f32).collect();
        let mask_l1: f64 = mask.iter().map(|&m| m as f64).sum();
        let improves = match &best {
            None => true,
            Some(b) => {
                flip_rate > b.achieved_flip_rate
                    || (flip_rate == b.achieved_flip_rate && mask_l1 < b.mask_l1)
            }
        };
        if improves {
            best = Some(Patch {
                shape,
                pattern: pattern_latent.iter().map(|&p| sigmoid(p) as f32).collect(),
                mask,
                lambda,
                mask_l1,
                achieved_flip_rate: flip_rate,
            });
        }

        if iter % config.check_every == 0 {
            if std::env::var_os("PATCH_DEBUG").is_some() && iter % 50 == 0 {
                eprintln!(
                    "patch[{label}] iter {iter}: shrink {shrinking} flip {flip_rate:.2} l1 {mask_l1:.1} lambda {lambda:.2e} scale {scale:.2e} best_l1 {:.1}",
                    best.as_ref().map(|b| b.mask_l1).unwrap_or(f64::NAN)
                );
            }
            if !shrinking && flip_rate >= config.flip_target {
                shrinking = true;
                lambda = config.lambda_init;
            }
            if flip_rate >= config.flip_target {
                above_streak += 1;
                below_streak = 0;
            } else {
                below_streak += 1;
                above_streak = 0;
            }
            if shrinking {
                if above_streak >= config.lambda_patience {
                    lambda = (lambda * config.lambda_factor).min(config.lambda_max);
                    above_streak = 0;
                }
                if below_streak >= config.lambda_patience {
                    lambda = (lambda / config.lambda_factor).max(config.lambda_min);
                    below_streak = 0;
                }
            }
            // Early stop once the best mask's footprint has stopped
            // improving while the flip target holds.
            let best_l1 = best.as_ref().map(|b| b.mask_l1).unwrap_or(f64::INFINITY);
            let meets_target =
                best.as_ref().map(|b| b.achieved_flip_rate >= config.flip_target).unwrap_or(false);
            if meets_target && best_l1 > 0.99 * l1_at_last_check {
                stall_checks += 1;
            } else {
                stall_checks = 0;
            }
            l1_at_last_check = best_l1;
            if config.early_stop_checks > 0 && stall_checks >= config.early_stop_checks {
                break;
            }
        }

        if shrinking {
            let inv = if scale_ref > 0.0 { 1.0 / scale_ref } else { 0.0 };
            let dmask: Vec<f64> = fit_dmask
                .iter()
                .zip(&mask_latent)
                .map(|(&g, &latent)| {
                    let m = sigmoid(latent);
                    g * inv - lambda * m * (1.0 - m)
                })
                .collect();
            let dpattern: Vec<f64> = fit_dpattern.iter().map(|&g| g * inv).collect();
            momentum_mask.ascend(&mut mask_latent, &dmask, config.step_size as f64);
            momentum_pattern.ascend(&mut pattern_latent, &dpattern, config.step_size as f64);
        } else {
            adam_mask.ascend(&mut mask_latent, &fit_dmask, config.step_size as f64);
            adam_pattern.ascend(&mut pattern_latent, &fit_dpattern, config.step_size as f64);
        }
    }

    best.ok_or_else(|| Error::Optimization("patch optimization produced no iterate".into()))
}

/// Applies `patch` to every low-confidence sample and returns the fraction
/// whose prediction left `label`, along with the sample count.
pub fn transfer_ratio(
    model: &dyn Classifier,
    patch: &Patch,
    low_confidence: &[&ImageTensor],
    label: usize,
) -> Result<(f64, usize)> {
    if low_confidence.is_empty() {
        return Err(Error::config("transfer ratio needs at least one sample"));
    }
    let patched: Vec<ImageTensor> =
        low_confidence.iter().map(|img| patch.apply(img)).collect::<Result<_>>()?;
    let refs: Vec<&ImageTensor> = patched.iter().collect();
    let logits = model.logits_batch(&refs)?;
    let flips = logits.iter().filter(|row| argmax(row) != label).count();
    Ok((flips as f64 / low_confidence.len() as f64, low_confidence.len()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::ImageShape;
    use crate::model::TrainedClassifier;

    /// 2-class linear model on a 4x4 RGB image whose class-1 logit is
    /// dominated by one pixel (row 1, col 2, all channels). Weights are
    /// sized so hot images sit near 0.9 confidence, not at saturation.
    fn single_pixel_backdoor_model() -> TrainedClassifier {
        let shape = ImageShape::new(4, 4, 3);
        let hot = (4 + 2) * 3; // flat HWC offset of (1, 2, 0)
        let mut row1 = vec![0.0f32; shape.len()];
        for ch in 0..3 {
            row1[hot + ch] = 2.0;
        }
        // Class 0 mildly prefers overall brightness.
        let row0 = vec![0.01f32; shape.len()];
        TrainedClassifier::linear_from_weights(shape, 2, &[row0, row1], &[0.0, -3.0]).unwrap()
    }

    fn hot_images(shape: ImageShape) -> Vec<ImageTensor> {
        // High-confidence class-1 samples: the hot pixel is lit.
        (0..6)
            .map(|i| {
                let mut values = vec![0.3 + 0.01 * i as f32; shape.len()];
                for ch in 0..3 {
                    values[(4 + 2) * 3 + ch] = 1.0;
                }
                ImageTensor::new(shape, values).unwrap()
            })
            .collect()
    }

    #[test]
    fn empty_sample_set_is_an_error() {
        let model = single_pixel_backdoor_model();
        assert!(learn_patch(&model, &[], 1, &PatchOptConfig::default()).is_err());
    }

    #[test]
    fn learned_mask_concentrates_on_the_planted_pixel() {
        let model = single_pixel_backdoor_model();
        let shape = ImageShape::new(4, 4, 3);
        let images = hot_images(shape);
        let refs: Vec<&ImageTensor> = images.iter().collect();
        // All samples are predicted class 1 via the hot pixel.
        for r in &refs {
            assert_eq!(model.predicted_label(r).unwrap(), 1);
        }
        let config =
            PatchOptConfig { max_iters: 800, early_stop_checks: 0, seed: 3, ..Default::default() };
        let patch = learn_patch(&model, &refs, 1, &config).unwrap();
        assert!(patch.achieved_flip_rate >= 0.99, "flip rate {}", patch.achieved_flip_rate);
        let hot_mass = patch.mask[4 + 2] as f64;
        assert!(
            hot_mass >= 0.5 * patch.mask_l1,
            "hot pixel mass {hot_mass} of total {}",
            patch.mask_l1
        );
    }

    #[test]
    fn zero_mask_patch_never_flips_selected_samples() {
        let model = single_pixel_backdoor_model();
        let shape = ImageShape::new(4, 4, 3);
        let images = hot_images(shape);
        let refs: Vec<&ImageTensor> = images.iter().collect();
        let identity = Patch {
            shape,
            mask: vec![0.0; 16],
            pattern: vec![0.0; shape.len()],
            lambda: 0.0,
            mask_l1: 0.0,
            achieved_flip_rate: 0.0,
        };
        let (r, n) = transfer_ratio(&model, &identity, &refs, 1).unwrap();
        assert_eq!(r, 0.0);
        assert_eq!(n, refs.len());
    }

    #[test]
    fn full_mask_patch_collapses_every_input_to_the_pattern() {
        let model = single_pixel_backdoor_model();
        let shape = ImageShape::new(4, 4, 3);
        let images = hot_images(shape);
        let refs: Vec<&ImageTensor> = images.iter().collect();
        // Pattern with the hot pixel dark: model predicts class 0 on it.
        let pattern = vec![0.2; shape.len()];
        let as_image = ImageTensor::new(shape, pattern.clone()).unwrap();
        assert_ne!(model.predicted_label(&as_image).unwrap(), 1);
        let full = Patch {
            shape,
            mask: vec![1.0; 16],
            pattern,
            lambda: 0.0,
            mask_l1: 16.0,
            achieved_flip_rate: 1.0,
        };
        let (r, _) = transfer_ratio(&model, &full, &refs, 1).unwrap();
        assert_eq!(r, 1.0);
    }

    #[test]
    fn transfer_ratio_matches_enumerated_forward_passes() {
        // Hand-built 2-class model and a 4-point low-confidence set; the
        // oracle is the model's own closed form evaluated per point.
        let shape = ImageShape::new(1, 2, 3);
        // Class 1 logit = 4 * x[0]; class 0 logit = 1.
        let model = TrainedClassifier::linear_from_weights(
            shape,
            2,
            &[vec![0.0; 6], vec![4.0, 0.0, 0.0, 0.0, 0.0, 0.0]],
            &[1.0, 0.0],
        )
        .unwrap();
        let values = [0.9f32, 0.8, 0.6, 0.5];
        let images: Vec<ImageTensor> = values
            .iter()
            .map(|&v| ImageTensor::new(shape, vec![v, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap())
            .collect();
        let refs: Vec<&ImageTensor> = images.iter().collect();
        // Patch halves the first pixel: masks it 50% toward 0.
        let patch = Patch {
            shape,
            mask: vec![0.5, 0.0],
            pattern: vec![0.0; 6],
            lambda: 0.0,
            mask_l1: 0.5,
            achieved_flip_rate: 0.0,
        };
        // Patched first pixel = v/2; prediction leaves class 1 when
        // 4 * v/2 < 1, i.e. v < 0.5. For v in {0.9, 0.8, 0.6, 0.5}: 2*v =
        // {1.8, 1.6, 1.2, 1.0}; logit0 = 1.0, ties go to class 0 at v=0.5.
        let (r, n) = transfer_ratio(&model, &patch, &refs, 1).unwrap();
        assert_eq!(n, 4);
        assert_eq!(r, 0.25);
    }
}
