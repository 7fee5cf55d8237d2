//! The confidence-based distribution-transfer inspector.
//!
//! Per prediction label: sort training examples by confidence, learn a
//! patch on the top-K (high-confidence) samples that flips their
//! predictions, apply it to the bottom-K (low-confidence) samples, and
//! record the transfer ratio. Infected labels show anomalously *low*
//! transfer ratios under MAD scoring; a model with any such label is
//! trojaned unless every label transfers above the ratio floor.

pub mod anomaly;
mod patch;

pub use anomaly::{
    anomaly_indices, two_sided_indices, AnomalyAssessment, AnomalyScore, ANOMALY_THRESHOLD,
    MAD_SCALE, RATIO_FLOOR,
};
pub use patch::{learn_patch, transfer_ratio, Patch, PatchOptConfig, PatchProblem};

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{Dataset, ImageTensor, LabeledExample};
use crate::error::{Error, Result};
use crate::model::{argmax, softmax, Classifier};
use crate::report::{write_atomic, write_json};
use crate::rng;

/// The high/low confidence sample split for one prediction label.
#[derive(Debug, Clone)]
pub struct ConfidenceSample {
    pub label: usize,
    /// Top-K samples by confidence, descending.
    pub high: Vec<LabeledExample>,
    /// Bottom-K samples by confidence.
    pub low: Vec<LabeledExample>,
    pub k_requested: usize,
    pub k_effective: usize,
    /// True when fewer than `2 * k_requested` examples were available and
    /// K was clamped to half the member count.
    pub clamped: bool,
}

/// Inspector settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InspectionConfig {
    /// Sample count per side (|D_h| = |D_l| = K).
    pub k: usize,
    pub patch: PatchOptConfig,
    pub seed: u64,
}

impl Default for InspectionConfig {
    fn default() -> Self {
        Self { k: 50, patch: PatchOptConfig::default(), seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Trojaned,
    Clean,
}

/// Per-label inspection outcome. Skipped labels (no predicted members)
/// keep `skipped = true` and carry no statistics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LabelInspection {
    #[serde(rename = "z")]
    pub label: usize,
    #[serde(rename = "r")]
    pub transfer_ratio: Option<f64>,
    #[serde(rename = "n")]
    pub sample_count: Option<usize>,
    pub anomaly_index: Option<f64>,
    pub degenerate: bool,
    pub mask_l1: Option<f64>,
    pub flip_rate: Option<f64>,
    pub lambda: Option<f64>,
    pub skipped: bool,
    pub clamped: bool,
    /// The learned patch; persisted separately via [`save_patches`], not in
    /// `report.json`.
    #[serde(skip)]
    pub patch: Option<Patch>,
}

/// The inspector's verdict for one model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InspectionReport {
    pub verdict: Verdict,
    pub max_anomaly_index: f64,
    pub infected_labels: BTreeSet<usize>,
    pub labels: Vec<LabelInspection>,
    pub config: InspectionConfig,
    pub seed: u64,
}

/// Sorts the training examples predicted as `label` by the probability of
/// `label` (descending, ties toward the smaller example index) and returns
/// the top-K as `high` and bottom-K as `low`. With fewer than 2K members,
/// K is clamped to half the member count and the sample is flagged.
pub fn select_confidence_samples(
    model: &dyn Classifier,
    train_set: &Dataset,
    label: usize,
    k: usize,
) -> Result<ConfidenceSample> {
    if k == 0 {
        return Err(Error::config("K must be >= 1"));
    }
    let images: Vec<&ImageTensor> = train_set.examples.iter().map(|ex| &ex.image).collect();
    let logits = model.logits_batch(&images)?;
    select_from_logits(train_set, &logits, label, k)
}

/// Sampling core shared by the inspector and the KL baseline: both consume
/// the identical split for a given model, train set, label, and K.
fn select_from_logits(
    train_set: &Dataset,
    logits: &[Vec<f32>],
    label: usize,
    k: usize,
) -> Result<ConfidenceSample> {
    let mut members: Vec<(f32, &LabeledExample)> = Vec::new();
    for (row, ex) in logits.iter().zip(&train_set.examples) {
        let probs = softmax(row);
        if argmax(&probs) == label {
            members.push((probs[label], ex));
        }
    }
    if members.is_empty() {
        return Err(Error::EmptyClass { label });
    }
    members.sort_by(|a, b| {
        b.0.partial_cmp(&a.0)
            .expect("finite confidences")
            .then(a.1.index.cmp(&b.1.index))
    });

    let (k_effective, clamped) = if members.len() >= 2 * k {
        (k, false)
    } else {
        ((members.len() / 2).max(1), true)
    };
    let high: Vec<LabeledExample> =
        members[..k_effective].iter().map(|(_, ex)| (*ex).clone()).collect();
    let low: Vec<LabeledExample> = members[members.len() - k_effective..]
        .iter()
        .map(|(_, ex)| (*ex).clone())
        .collect();
    Ok(ConfidenceSample { label, high, low, k_requested: k, k_effective, clamped })
}

/// Runs the full select → learn → transfer → MAD pipeline over every label.
///
/// A label is infected when its anomaly score exceeds the threshold (or is
/// degenerate per the MAD = 0 rule) *and* its transfer ratio is at or below
/// [`RATIO_FLOOR`]; the verdict is trojaned exactly when some label is
/// infected. Labels with no predicted members are recorded as skipped.
pub fn inspect(
    model: &dyn Classifier,
    train_set: &Dataset,
    config: &InspectionConfig,
) -> Result<InspectionReport> {
    let num_classes = model.num_classes();
    let images: Vec<&ImageTensor> = train_set.examples.iter().map(|ex| &ex.image).collect();
    let logits = model.logits_batch(&images)?;

    let mut labels: Vec<LabelInspection> = Vec::with_capacity(num_classes);
    for label in 0..num_classes {
        let sample = match select_from_logits(train_set, &logits, label, config.k) {
            Ok(sample) => sample,
            Err(Error::EmptyClass { .. }) => {
                labels.push(LabelInspection {
                    label,
                    transfer_ratio: None,
                    sample_count: None,
                    anomaly_index: None,
                    degenerate: false,
                    mask_l1: None,
                    flip_rate: None,
                    lambda: None,
                    skipped: true,
                    clamped: false,
                    patch: None,
                });
                continue;
            }
            Err(other) => return Err(other),
        };
        let high_refs: Vec<&ImageTensor> = sample.high.iter().map(|ex| &ex.image).collect();
        let low_refs: Vec<&ImageTensor> = sample.low.iter().map(|ex| &ex.image).collect();
        let patch_config = PatchOptConfig {
            seed: rng::derive_seed(config.seed, "patch", label as u64),
            ..config.patch.clone()
        };
        let patch = learn_patch(model, &high_refs, label, &patch_config)?;
        let (ratio, n) = transfer_ratio(model, &patch, &low_refs, label)?;
        labels.push(LabelInspection {
            label,
            transfer_ratio: Some(ratio),
            sample_count: Some(n),
            anomaly_index: None,
            degenerate: false,
            mask_l1: Some(patch.mask_l1),
            flip_rate: Some(patch.achieved_flip_rate),
            lambda: Some(patch.lambda),
            skipped: false,
            clamped: sample.clamped,
            patch: Some(patch),
        });
    }

    let scored: Vec<(usize, f64)> = labels
        .iter()
        .filter_map(|l| l.transfer_ratio.map(|r| (l.label, r)))
        .collect();
    if scored.is_empty() {
        return Err(Error::InspectionFailed("every label was skipped".into()));
    }
    if scored.len() < 3 {
        return Err(Error::InspectionFailed(format!(
            "only {} labels produced transfer ratios; MAD scoring needs 3",
            scored.len()
        )));
    }
    let ratios: Vec<f64> = scored.iter().map(|(_, r)| *r).collect();
    let assessment = anomaly_indices(&ratios)?;

    let mut infected = BTreeSet::new();
    for ((label_idx, ratio), score) in scored.iter().zip(&assessment.scores) {
        let entry = labels
            .iter_mut()
            .find(|l| l.label == *label_idx)
            .expect("scored labels exist");
        entry.anomaly_index = score.index;
        entry.degenerate = score.degenerate;
        if score.exceeds && *ratio <= RATIO_FLOOR {
            infected.insert(*label_idx);
        }
    }

    let verdict = if infected.is_empty() { Verdict::Clean } else { Verdict::Trojaned };
    Ok(InspectionReport {
        verdict,
        max_anomaly_index: assessment.max_index(),
        infected_labels: infected,
        labels,
        config: config.clone(),
        seed: config.seed,
    })
}

/// Persists every learned patch under `dir/patches/` as the dataset binary
/// format (mask floats then pattern floats, little-endian) plus a JSON
/// manifest per label, for visual audit.
pub fn save_patches(report: &InspectionReport, dir: &Path) -> Result<()> {
    let patch_dir = dir.join("patches");
    for label in &report.labels {
        let Some(patch) = &label.patch else { continue };
        let mut payload = Vec::with_capacity((patch.mask.len() + patch.pattern.len()) * 4);
        for v in patch.mask.iter().chain(&patch.pattern) {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        let checksum = hex::encode(Sha256::digest(&payload));
        write_atomic(&patch_dir.join(format!("label_{}.bin", label.label)), &payload)?;
        write_json(
            &patch_dir.join(format!("label_{}.json", label.label)),
            &serde_json::json!({
                "z": label.label,
                "height": patch.shape.height,
                "width": patch.shape.width,
                "channels": patch.shape.channels,
                "mask_l1": patch.mask_l1,
                "flip_rate": patch.achieved_flip_rate,
                "lambda": patch.lambda,
                "checksum": checksum,
            }),
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{Dataset, ImageShape, LabeledExample};
    use crate::model::stub::PixelConfidenceClassifier;

    /// Tiny dataset whose pixel (0,0,0) scripts the stub's confidence.
    fn scripted_dataset(confidences: &[f32]) -> Dataset {
        let shape = ImageShape::new(2, 2, 3);
        let examples = confidences
            .iter()
            .enumerate()
            .map(|(i, &c)| {
                let mut values = vec![0.0f32; shape.len()];
                values[0] = c;
                LabeledExample {
                    image: ImageTensor::new(shape, values).unwrap(),
                    label: 0,
                    original_label: 0,
                    index: i,
                }
            })
            .collect();
        Dataset::new(examples, 4, "scripted".into()).unwrap()
    }

    #[test]
    fn selection_takes_top_and_bottom_k() {
        let data = scripted_dataset(&[0.99, 0.98, 0.97, 0.60, 0.55, 0.50]);
        let model = PixelConfidenceClassifier::new(0, 4, ImageShape::new(2, 2, 3));
        let sample = select_confidence_samples(&model, &data, 0, 2).unwrap();
        assert!(!sample.clamped);
        let high: Vec<usize> = sample.high.iter().map(|ex| ex.index).collect();
        let low: Vec<usize> = sample.low.iter().map(|ex| ex.index).collect();
        assert_eq!(high, vec![0, 1]);
        assert_eq!(low, vec![4, 5]);
        let min_high = sample
            .high
            .iter()
            .map(|ex| ex.image.get(0, 0, 0))
            .fold(f32::INFINITY, f32::min);
        let max_low = sample
            .low
            .iter()
            .map(|ex| ex.image.get(0, 0, 0))
            .fold(f32::NEG_INFINITY, f32::max);
        assert!(min_high >= max_low);
    }

    #[test]
    fn ties_break_by_ascending_example_index() {
        let data = scripted_dataset(&[0.8; 6]);
        let model = PixelConfidenceClassifier::new(0, 4, ImageShape::new(2, 2, 3));
        let sample = select_confidence_samples(&model, &data, 0, 2).unwrap();
        let high: Vec<usize> = sample.high.iter().map(|ex| ex.index).collect();
        let low: Vec<usize> = sample.low.iter().map(|ex| ex.index).collect();
        assert_eq!(high, vec![0, 1]);
        assert_eq!(low, vec![4, 5]);
    }

    #[test]
    fn oversized_k_is_clamped_and_flagged() {
        let data = scripted_dataset(&[0.9, 0.8, 0.7, 0.6, 0.5]);
        let model = PixelConfidenceClassifier::new(0, 4, ImageShape::new(2, 2, 3));
        let sample = select_confidence_samples(&model, &data, 0, 4).unwrap();
        assert!(sample.clamped);
        assert_eq!(sample.k_effective, 2);
        assert_eq!(sample.high.len(), 2);
        assert_eq!(sample.low.len(), 2);
    }

    #[test]
    fn labels_with_no_predicted_members_error() {
        let data = scripted_dataset(&[0.9, 0.8]);
        let model = PixelConfidenceClassifier::new(0, 4, ImageShape::new(2, 2, 3));
        assert!(matches!(
            select_confidence_samples(&model, &data, 2, 1),
            Err(Error::EmptyClass { label: 2 })
        ));
    }
}
