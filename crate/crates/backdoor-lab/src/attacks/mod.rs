//! Triggers and data poisoning: corner patches, sinusoidal additive
//! signals, blended patterns, and the poisoning variants built from them
//! (single-target, clean-label, partial, multi-trigger).

mod schedule;

pub use schedule::{schedule_poisoning, ModelTrainer, ScheduleOutcome, Trainer};

use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, ImageShape, ImageTensor};
use crate::error::{Error, Result};
use crate::rng;

/// How a trigger combines with an image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TriggerKind {
    /// `out = (1 - mask) * x + mask * pattern`, binary mask.
    Patch,
    /// `out = clip(x + pattern, 0, 1)`.
    Additive,
    /// `out = (1 - alpha) * x + alpha * pattern` over the whole image.
    Blended,
}

/// Where a square patch sits in the image (top-left corner offsets for
/// `Custom`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    LowerRight,
    LowerLeft,
    UpperLeft,
    Custom { row: usize, col: usize },
}

/// Fill of a badnet square.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PatternValue {
    White,
    Black,
    Solid { r: f32, g: f32, b: f32 },
    Seeded { seed: u64 },
}

/// A materialized trigger for one image shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Trigger {
    pub kind: TriggerKind,
    pub shape: ImageShape,
    /// H×W mask in `[0, 1]`; present for patch and blended kinds.
    pub mask: Option<Vec<f32>>,
    /// H×W×C pattern; `[0, 1]` for patch/blended, `[-1, 1]` for additive.
    pub pattern: Vec<f32>,
    /// Blend weight, only meaningful for the blended kind.
    pub alpha: Option<f32>,
    pub placement: Option<Placement>,
}

impl Trigger {
    /// Sum of the mask (patch/blended) — the trigger's pixel footprint.
    pub fn mask_l1(&self) -> f64 {
        self.mask.as_ref().map(|m| m.iter().map(|&v| v as f64).sum()).unwrap_or(0.0)
    }
}

fn square_bounds(shape: ImageShape, size: usize, placement: Placement) -> Result<(usize, usize)> {
    let (h, w) = (shape.height, shape.width);
    if size >= h.min(w) {
        return Err(Error::config(format!(
            "trigger size {size} must be smaller than the image side {}",
            h.min(w)
        )));
    }
    let (row, col) = match placement {
        Placement::LowerRight => (h - size, w - size),
        Placement::LowerLeft => (h - size, 0),
        Placement::UpperLeft => (0, 0),
        Placement::Custom { row, col } => (row, col),
    };
    if row + size > h || col + size > w {
        return Err(Error::config(format!(
            "trigger square at ({row}, {col}) with size {size} leaves the {h}x{w} image"
        )));
    }
    Ok((row, col))
}

/// A `size`×`size` square patch at `placement`, filled per `value`.
pub fn make_badnet_trigger(
    shape: ImageShape,
    size: usize,
    placement: Placement,
    value: PatternValue,
) -> Result<Trigger> {
    let (row0, col0) = square_bounds(shape, size, placement)?;
    let mut mask = vec![0.0f32; shape.height * shape.width];
    let mut pattern = vec![0.0f32; shape.len()];
    let mut seeded = match value {
        PatternValue::Seeded { seed } => Some(rng::stream(seed, "badnet-pattern", 0)),
        _ => None,
    };
    for row in row0..row0 + size {
        for col in col0..col0 + size {
            mask[row * shape.width + col] = 1.0;
            let rgb = match value {
                PatternValue::White => [1.0, 1.0, 1.0],
                PatternValue::Black => [0.0, 0.0, 0.0],
                PatternValue::Solid { r, g, b } => [r, g, b],
                PatternValue::Seeded { .. } => {
                    let rng = seeded.as_mut().expect("seeded stream");
                    [rng.gen_range(0.0..=1.0), rng.gen_range(0.0..=1.0), rng.gen_range(0.0..=1.0)]
                }
            };
            for ch in 0..shape.channels {
                pattern[(row * shape.width + col) * shape.channels + ch] =
                    rgb[ch.min(2)].clamp(0.0, 1.0);
            }
        }
    }
    Ok(Trigger {
        kind: TriggerKind::Patch,
        shape,
        mask: Some(mask),
        pattern,
        alpha: None,
        placement: Some(placement),
    })
}

/// A horizontal sinusoid added to every row and channel:
/// `pattern(i, j, ch) = delta * sin(2π * j * freq / width)`.
pub fn make_sig_trigger(shape: ImageShape, delta: f32, freq: usize) -> Result<Trigger> {
    if !(0.0..=0.25).contains(&delta) {
        return Err(Error::config(format!("sig delta must lie in [0, 0.25], got {delta}")));
    }
    if freq == 0 {
        return Err(Error::config("sig freq must be >= 1"));
    }
    let mut pattern = vec![0.0f32; shape.len()];
    for col in 0..shape.width {
        let value = delta
            * (2.0 * std::f32::consts::PI * col as f32 * freq as f32 / shape.width as f32).sin();
        for row in 0..shape.height {
            for ch in 0..shape.channels {
                pattern[(row * shape.width + col) * shape.channels + ch] = value;
            }
        }
    }
    Ok(Trigger {
        kind: TriggerKind::Additive,
        shape,
        mask: None,
        pattern,
        alpha: None,
        placement: None,
    })
}

/// A full-image seeded random pattern blended at weight `alpha`.
pub fn make_blended_trigger(shape: ImageShape, pattern_seed: u64, alpha: f32) -> Result<Trigger> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::config(format!("blend alpha must lie in (0, 1], got {alpha}")));
    }
    let mut rng = rng::stream(pattern_seed, "blended-pattern", 0);
    let pattern: Vec<f32> = (0..shape.len()).map(|_| rng.gen_range(0.0..=1.0)).collect();
    Ok(Trigger {
        kind: TriggerKind::Blended,
        shape,
        mask: Some(vec![alpha; shape.height * shape.width]),
        pattern,
        alpha: Some(alpha),
        placement: None,
    })
}

/// Stamps a trigger onto a copy of `image`.
pub fn apply_trigger(image: &ImageTensor, trigger: &Trigger) -> Result<ImageTensor> {
    let shape = image.shape();
    if shape != trigger.shape {
        return Err(Error::config(format!(
            "trigger was built for {:?}, image is {:?}",
            trigger.shape, shape
        )));
    }
    let mut out = image.values().to_vec();
    match trigger.kind {
        TriggerKind::Patch => {
            let mask = trigger.mask.as_ref().expect("patch triggers carry a mask");
            for row in 0..shape.height {
                for col in 0..shape.width {
                    let m = mask[row * shape.width + col];
                    if m == 0.0 {
                        continue;
                    }
                    for ch in 0..shape.channels {
                        let i = (row * shape.width + col) * shape.channels + ch;
                        out[i] = (1.0 - m) * out[i] + m * trigger.pattern[i];
                    }
                }
            }
        }
        TriggerKind::Blended => {
            let alpha = trigger.alpha.expect("blended triggers carry alpha");
            for (o, &p) in out.iter_mut().zip(&trigger.pattern) {
                *o = (1.0 - alpha) * *o + alpha * p;
            }
        }
        TriggerKind::Additive => {
            for (o, &p) in out.iter_mut().zip(&trigger.pattern) {
                *o = (*o + p).clamp(0.0, 1.0);
            }
        }
    }
    ImageTensor::new(shape, out)
}

/// Poisoning variants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackType {
    Badnet,
    SigCleanLabel,
    Blended,
    Partial,
    Mtot,
    Mtmt,
}

impl AttackType {
    pub fn is_clean_label(self) -> bool {
        matches!(self, AttackType::SigCleanLabel)
    }
}

/// A fully materialized poisoning plan: triggers, targets, sources, rate.
#[derive(Debug, Clone)]
pub struct PoisonSpec {
    pub attack_type: AttackType,
    /// (trigger, target label) pairs; one for single-trigger attacks,
    /// three for MTOT/MTMT.
    pub pairs: Vec<(Trigger, usize)>,
    /// Optional restriction of the source labels poison is drawn from.
    pub source_labels: Option<BTreeSet<usize>>,
    /// Poisoning rate per eligible source label.
    pub rate: f64,
    pub seed: u64,
}

impl PoisonSpec {
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if !(0.0..=1.0).contains(&self.rate) {
            return Err(Error::spec(format!("rate must lie in [0, 1], got {}", self.rate)));
        }
        if self.pairs.is_empty() {
            return Err(Error::spec("need at least one (trigger, target) pair"));
        }
        for (_, target) in &self.pairs {
            if *target >= num_classes {
                return Err(Error::spec(format!(
                    "target {target} out of range for {num_classes} classes"
                )));
            }
        }
        if let Some(sources) = &self.source_labels {
            if let Some(&bad) = sources.iter().find(|&&z| z >= num_classes) {
                return Err(Error::spec(format!("source label {bad} out of range")));
            }
        }
        match self.attack_type {
            AttackType::Badnet | AttackType::Blended | AttackType::SigCleanLabel => {
                if self.pairs.len() != 1 {
                    return Err(Error::spec(format!(
                        "{:?} uses exactly one (trigger, target) pair",
                        self.attack_type
                    )));
                }
            }
            AttackType::Partial => {
                if self.pairs.len() != 1 {
                    return Err(Error::spec("partial attacks use one (trigger, target) pair"));
                }
                if self.source_labels.as_ref().is_none_or(|s| s.is_empty()) {
                    return Err(Error::spec("partial attacks need explicit source labels"));
                }
            }
            AttackType::Mtot => {
                if self.pairs.len() != 3 {
                    return Err(Error::spec("MTOT uses exactly three triggers"));
                }
                let target = self.pairs[0].1;
                if self.pairs.iter().any(|(_, t)| *t != target) {
                    return Err(Error::spec("MTOT maps every trigger to the same target"));
                }
            }
            AttackType::Mtmt => {
                if self.pairs.len() != 3 {
                    return Err(Error::spec("MTMT uses exactly three (trigger, target) pairs"));
                }
                let targets: BTreeSet<usize> = self.pairs.iter().map(|(_, t)| *t).collect();
                if targets.len() != 3 {
                    return Err(Error::spec("MTMT targets must be distinct"));
                }
                if self.source_labels.is_some() {
                    return Err(Error::spec(
                        "MTMT partitions sources itself; source_labels is not supported",
                    ));
                }
            }
        }
        if self.attack_type.is_clean_label() {
            let target = self.pairs[0].1;
            let expected: BTreeSet<usize> = [target].into();
            if self.source_labels.as_ref() != Some(&expected) {
                return Err(Error::spec(format!(
                    "clean-label attacks poison only the target label: source_labels must be {{{target}}}"
                )));
            }
        }
        Ok(())
    }

    /// Source labels each pair draws poison from.
    pub fn pair_sources(&self, pair_idx: usize, num_classes: usize) -> BTreeSet<usize> {
        let target = self.pairs[pair_idx].1;
        match self.attack_type {
            AttackType::SigCleanLabel => [target].into(),
            AttackType::Mtmt => {
                let targets: BTreeSet<usize> = self.pairs.iter().map(|(_, t)| *t).collect();
                (0..num_classes)
                    .filter(|z| z % self.pairs.len() == pair_idx && !targets.contains(z))
                    .collect()
            }
            _ => {
                let base: BTreeSet<usize> = match &self.source_labels {
                    Some(sources) => sources.clone(),
                    None => (0..num_classes).collect(),
                };
                base.into_iter().filter(|&z| z != target).collect()
            }
        }
    }
}

/// Which examples were poisoned, with what, and how hard each label was hit.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PoisonRecord {
    pub poisoned_indices: BTreeSet<usize>,
    pub assignments: Vec<PoisonAssignment>,
    /// Achieved poisoning rate per source label.
    pub rates: BTreeMap<usize, f64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PoisonAssignment {
    pub index: usize,
    /// Index into the spec's pair list.
    pub trigger: usize,
    pub target: usize,
}

/// Number of examples to poison in a class of `n` at `rate`: `ceil(rate*n)`
/// with a tolerance so that exact products do not round up.
fn poison_count(rate: f64, n: usize) -> usize {
    ((rate * n as f64) - 1e-9).ceil().max(0.0) as usize
}

/// Applies a poisoning spec to a dataset.
///
/// For each eligible source label `z`, `ceil(rate * n_z)` examples chosen
/// uniformly under the spec seed receive a trigger. Change-label attacks
/// relabel to the assigned target and keep `original_label`; the clean-label
/// attack never relabels. Example order and indices are preserved.
pub fn poison_dataset(dataset: &Dataset, spec: &PoisonSpec) -> Result<(Dataset, PoisonRecord)> {
    spec.validate(dataset.num_classes)?;

    // label -> (pair index, member indices chosen for poisoning)
    let mut chosen: BTreeMap<usize, (usize, Vec<usize>)> = BTreeMap::new();
    let mut record = PoisonRecord::default();

    // MTOT pairs share one source set and are assigned round-robin below,
    // so selection runs once; every other attack selects per pair (MTMT
    // source partitions are disjoint by construction).
    let selection_pairs: Vec<usize> = if spec.attack_type == AttackType::Mtot {
        vec![0]
    } else {
        (0..spec.pairs.len()).collect()
    };
    for &pair_idx in &selection_pairs {
        for z in spec.pair_sources(pair_idx, dataset.num_classes) {
            let members: Vec<usize> = dataset
                .examples
                .iter()
                .filter(|ex| ex.label == z)
                .map(|ex| ex.index)
                .collect();
            if members.is_empty() {
                continue;
            }
            let count = poison_count(spec.rate, members.len());
            if count == 0 {
                continue;
            }
            let mut order: Vec<usize> = (0..members.len()).collect();
            rng::shuffle(&mut order, rng::derive_seed(spec.seed, "poison", z as u64));
            let picked: Vec<usize> = order[..count.min(members.len())]
                .iter()
                .map(|&slot| members[slot])
                .collect();
            record
                .rates
                .insert(z, picked.len() as f64 / members.len() as f64);
            chosen.insert(z, (pair_idx, picked));
        }
    }

    // Flatten to (example index -> pair index). MTOT round-robins its three
    // triggers over the whole poisoned set in index order.
    let mut assignment: BTreeMap<usize, usize> = BTreeMap::new();
    if spec.attack_type == AttackType::Mtot {
        let mut all: Vec<usize> = chosen.values().flat_map(|(_, v)| v.iter().copied()).collect();
        all.sort_unstable();
        for (position, index) in all.into_iter().enumerate() {
            assignment.insert(index, position % spec.pairs.len());
        }
    } else {
        for (pair_idx, indices) in chosen.values() {
            for &index in indices {
                assignment.insert(index, *pair_idx);
            }
        }
    }

    let mut examples = dataset.examples.clone();
    for ex in &mut examples {
        let Some(&pair_idx) = assignment.get(&ex.index) else { continue };
        let (trigger, target) = &spec.pairs[pair_idx];
        ex.image = apply_trigger(&ex.image, trigger)?;
        if !spec.attack_type.is_clean_label() {
            ex.label = *target;
        }
        record.poisoned_indices.insert(ex.index);
        record.assignments.push(PoisonAssignment {
            index: ex.index,
            trigger: pair_idx,
            target: *target,
        });
    }
    record.assignments.sort_by_key(|a| a.index);

    let poisoned = Dataset {
        examples,
        num_classes: dataset.num_classes,
        name: format!("{}-poisoned", dataset.name),
    };
    Ok((poisoned, record))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate_synthetic;

    fn shape32() -> ImageShape {
        ImageShape::new(32, 32, 3)
    }

    #[test]
    fn badnet_mask_sits_in_the_lower_right_corner() {
        let trigger =
            make_badnet_trigger(shape32(), 4, Placement::LowerRight, PatternValue::White).unwrap();
        let mask = trigger.mask.as_ref().unwrap();
        for row in 0..32 {
            for col in 0..32 {
                let expected = (28..32).contains(&row) && (28..32).contains(&col);
                assert_eq!(mask[row * 32 + col], if expected { 1.0 } else { 0.0 });
            }
        }
        assert_eq!(trigger.mask_l1(), 16.0);
    }

    #[test]
    fn badnet_upper_left_on_a_small_image() {
        let shape = ImageShape::new(8, 8, 3);
        let trigger =
            make_badnet_trigger(shape, 2, Placement::UpperLeft, PatternValue::White).unwrap();
        let mask = trigger.mask.as_ref().unwrap();
        for row in 0..8 {
            for col in 0..8 {
                let expected = row < 2 && col < 2;
                assert_eq!(mask[row * 8 + col], if expected { 1.0 } else { 0.0 });
            }
        }
        assert_eq!(trigger.mask_l1(), 4.0);
    }

    #[test]
    fn badnet_rejects_oversized_trigger() {
        assert!(make_badnet_trigger(shape32(), 32, Placement::LowerRight, PatternValue::White)
            .is_err());
    }

    #[test]
    fn sig_pattern_follows_the_sine_formula() {
        let shape = ImageShape::new(8, 8, 3);
        let trigger = make_sig_trigger(shape, 0.1, 2).unwrap();
        // Independent evaluation of delta * sin(2*pi*j*freq/width) at j=1:
        // 0.1 * sin(pi/2) = 0.1.
        let expected = 0.1 * (2.0 * std::f32::consts::PI * 1.0 * 2.0 / 8.0).sin();
        assert!((expected - 0.1).abs() < 1e-6);
        for row in 0..8 {
            for ch in 0..3 {
                assert!((trigger.pattern[(row * 8 + 1) * 3 + ch] - expected).abs() < 1e-7);
            }
        }
        let max = trigger.pattern.iter().fold(0.0f32, |acc, &v| acc.max(v.abs()));
        assert!(max <= 0.1 + 1e-7);
    }

    #[test]
    fn sig_with_zero_delta_is_the_identity() {
        let shape = ImageShape::new(8, 8, 3);
        let trigger = make_sig_trigger(shape, 0.0, 2).unwrap();
        let data = generate_synthetic(4, 20, 16, 1).unwrap();
        let _ = data; // image below is independent of the dataset
        let image = ImageTensor::filled(shape, 0.25).unwrap();
        let out = apply_trigger(&image, &trigger).unwrap();
        assert_eq!(out, image);
    }

    #[test]
    fn sig_rejects_out_of_range_parameters() {
        assert!(make_sig_trigger(shape32(), 0.3, 2).is_err());
        assert!(make_sig_trigger(shape32(), 0.1, 0).is_err());
    }

    #[test]
    fn blended_alpha_one_returns_the_pattern() {
        let shape = ImageShape::new(8, 8, 3);
        let trigger = make_blended_trigger(shape, 7, 1.0).unwrap();
        let image = ImageTensor::filled(shape, 0.6).unwrap();
        let out = apply_trigger(&image, &trigger).unwrap();
        assert_eq!(out.values(), trigger.pattern.as_slice());
    }

    #[test]
    fn blended_scales_a_black_input_by_alpha() {
        let shape = ImageShape::new(8, 8, 3);
        let trigger = make_blended_trigger(shape, 7, 0.1).unwrap();
        let black = ImageTensor::zeros(shape);
        let out = apply_trigger(&black, &trigger).unwrap();
        for (o, p) in out.values().iter().zip(&trigger.pattern) {
            assert_eq!(*o, 0.1 * p);
        }
        assert_eq!(make_blended_trigger(shape, 7, 0.1).unwrap(), trigger);
        assert!(make_blended_trigger(shape, 7, 0.0).is_err());
    }

    #[test]
    fn patch_compositing_is_exact_on_a_zero_image() {
        let shape = ImageShape::new(8, 8, 3);
        let trigger =
            make_badnet_trigger(shape, 2, Placement::LowerRight, PatternValue::White).unwrap();
        let out = apply_trigger(&ImageTensor::zeros(shape), &trigger).unwrap();
        for row in 0..8 {
            for col in 0..8 {
                for ch in 0..3 {
                    let expected = if row >= 6 && col >= 6 { 1.0 } else { 0.0 };
                    assert_eq!(out.get(row, col, ch), expected);
                }
            }
        }
    }

    #[test]
    fn zero_mask_patch_is_bit_exact_identity() {
        let shape = ImageShape::new(8, 8, 3);
        let trigger = Trigger {
            kind: TriggerKind::Patch,
            shape,
            mask: Some(vec![0.0; 64]),
            pattern: vec![1.0; shape.len()],
            alpha: None,
            placement: None,
        };
        let data = generate_synthetic(4, 20, 16, 3).unwrap();
        let _ = data;
        let image = ImageTensor::filled(shape, 0.123).unwrap();
        let out = apply_trigger(&image, &trigger).unwrap();
        assert_eq!(out.values(), image.values());
    }

    #[test]
    fn additive_clips_at_one() {
        let shape = ImageShape::new(8, 8, 3);
        let trigger = make_sig_trigger(shape, 0.2, 2).unwrap();
        let white = ImageTensor::filled(shape, 1.0).unwrap();
        let out = apply_trigger(&white, &trigger).unwrap();
        let max = out.values().iter().fold(0.0f32, |acc, &v| acc.max(v));
        assert_eq!(max, 1.0);
        assert!(out.values().iter().all(|&v| v <= 1.0));
    }

    #[test]
    fn badnet_poisons_ceil_rate_per_non_target_class() {
        let data = generate_synthetic(10, 100, 16, 7).unwrap();
        let trigger = make_badnet_trigger(
            ImageShape::new(16, 16, 3),
            4,
            Placement::LowerRight,
            PatternValue::White,
        )
        .unwrap();
        let spec = PoisonSpec {
            attack_type: AttackType::Badnet,
            pairs: vec![(trigger, 0)],
            source_labels: None,
            rate: 0.03,
            seed: 9,
        };
        let (poisoned, record) = poison_dataset(&data, &spec).unwrap();
        assert_eq!(record.poisoned_indices.len(), 27); // ceil(0.03*100)=3 over 9 classes
        for assignment in &record.assignments {
            assert_eq!(assignment.target, 0);
        }
        for ex in &poisoned.examples {
            if record.poisoned_indices.contains(&ex.index) {
                assert_eq!(ex.label, 0);
                assert_ne!(ex.original_label, 0);
            } else {
                assert_eq!(ex.label, ex.original_label);
            }
        }
        // Class 0 (the target) is never poisoned.
        assert!(!record.rates.contains_key(&0));
        assert_eq!(poisoned.len(), data.len());
    }

    #[test]
    fn zero_rate_changes_nothing() {
        let data = generate_synthetic(4, 20, 16, 7).unwrap();
        let trigger = make_badnet_trigger(
            ImageShape::new(16, 16, 3),
            2,
            Placement::LowerRight,
            PatternValue::White,
        )
        .unwrap();
        let spec = PoisonSpec {
            attack_type: AttackType::Badnet,
            pairs: vec![(trigger, 0)],
            source_labels: None,
            rate: 0.0,
            seed: 9,
        };
        let (poisoned, record) = poison_dataset(&data, &spec).unwrap();
        assert!(record.poisoned_indices.is_empty());
        assert_eq!(poisoned.examples, data.examples);
    }

    #[test]
    fn partial_attack_draws_only_from_its_source_label() {
        let data = generate_synthetic(10, 50, 16, 7).unwrap();
        let trigger = make_badnet_trigger(
            ImageShape::new(16, 16, 3),
            4,
            Placement::LowerRight,
            PatternValue::White,
        )
        .unwrap();
        let spec = PoisonSpec {
            attack_type: AttackType::Partial,
            pairs: vec![(trigger, 0)],
            source_labels: Some([1].into()),
            rate: 0.2,
            seed: 9,
        };
        let (_, record) = poison_dataset(&data, &spec).unwrap();
        assert_eq!(record.poisoned_indices.len(), 10);
        let class1: BTreeSet<usize> = data
            .examples
            .iter()
            .filter(|ex| ex.label == 1)
            .map(|ex| ex.index)
            .collect();
        assert!(record.poisoned_indices.is_subset(&class1));
    }

    #[test]
    fn clean_label_never_relabels_and_requires_source_eq_target() {
        let data = generate_synthetic(10, 50, 16, 7).unwrap();
        let shape = ImageShape::new(16, 16, 3);
        let sig = make_sig_trigger(shape, 0.1, 4).unwrap();
        let bad_spec = PoisonSpec {
            attack_type: AttackType::SigCleanLabel,
            pairs: vec![(sig.clone(), 0)],
            source_labels: Some([1].into()),
            rate: 0.2,
            seed: 9,
        };
        assert!(matches!(poison_dataset(&data, &bad_spec), Err(Error::Spec(_))));

        let spec = PoisonSpec {
            attack_type: AttackType::SigCleanLabel,
            pairs: vec![(sig, 0)],
            source_labels: Some([0].into()),
            rate: 0.2,
            seed: 9,
        };
        let (poisoned, record) = poison_dataset(&data, &spec).unwrap();
        assert_eq!(record.poisoned_indices.len(), 10);
        for ex in &poisoned.examples {
            if record.poisoned_indices.contains(&ex.index) {
                assert_eq!(ex.label, 0);
                assert_eq!(ex.original_label, 0);
            }
        }
    }

    #[test]
    fn mtot_round_robins_triggers_over_the_poisoned_set() {
        let data = generate_synthetic(10, 30, 16, 7).unwrap();
        let shape = ImageShape::new(16, 16, 3);
        let pairs = vec![
            (make_badnet_trigger(shape, 3, Placement::LowerRight, PatternValue::White).unwrap(), 0),
            (make_badnet_trigger(shape, 3, Placement::LowerLeft, PatternValue::White).unwrap(), 0),
            (make_badnet_trigger(shape, 3, Placement::UpperLeft, PatternValue::White).unwrap(), 0),
        ];
        let spec = PoisonSpec {
            attack_type: AttackType::Mtot,
            pairs,
            source_labels: None,
            rate: 0.1,
            seed: 9,
        };
        let (_, record) = poison_dataset(&data, &spec).unwrap();
        assert_eq!(record.poisoned_indices.len(), 27); // ceil(0.1*30)=3 across 9 classes
        let in_order: Vec<usize> = record.assignments.iter().map(|a| a.trigger).collect();
        let expected: Vec<usize> = (0..27).map(|i| i % 3).collect();
        assert_eq!(in_order, expected);
    }

    #[test]
    fn mtmt_partitions_sources_by_label_mod_three() {
        let data = generate_synthetic(10, 30, 16, 7).unwrap();
        let shape = ImageShape::new(16, 16, 3);
        let pairs = vec![
            (make_badnet_trigger(shape, 3, Placement::LowerRight, PatternValue::White).unwrap(), 0),
            (make_badnet_trigger(shape, 3, Placement::LowerLeft, PatternValue::White).unwrap(), 1),
            (make_badnet_trigger(shape, 3, Placement::UpperLeft, PatternValue::White).unwrap(), 2),
        ];
        let spec = PoisonSpec {
            attack_type: AttackType::Mtmt,
            pairs,
            source_labels: None,
            rate: 0.1,
            seed: 9,
        };
        assert_eq!(spec.pair_sources(0, 10), [3, 6, 9].into());
        assert_eq!(spec.pair_sources(1, 10), [4, 7].into());
        assert_eq!(spec.pair_sources(2, 10), [5, 8].into());

        let (poisoned, record) = poison_dataset(&data, &spec).unwrap();
        for assignment in &record.assignments {
            let original = poisoned
                .examples
                .iter()
                .find(|ex| ex.index == assignment.index)
                .unwrap()
                .original_label;
            assert_eq!(original % 3, assignment.trigger);
            assert_eq!(assignment.target, assignment.trigger);
        }
    }

    #[test]
    fn poisoned_count_matches_the_sum_of_ceilings() {
        let data = generate_synthetic(7, 23, 16, 7).unwrap();
        let trigger = make_badnet_trigger(
            ImageShape::new(16, 16, 3),
            2,
            Placement::LowerRight,
            PatternValue::White,
        )
        .unwrap();
        let spec = PoisonSpec {
            attack_type: AttackType::Badnet,
            pairs: vec![(trigger, 2)],
            source_labels: None,
            rate: 0.17,
            seed: 1,
        };
        let (_, record) = poison_dataset(&data, &spec).unwrap();
        let per_class = (0.17f64 * 23.0 - 1e-9).ceil() as usize;
        assert_eq!(record.poisoned_indices.len(), per_class * 6);
    }
}
