//! Evaluation metrics: benign accuracy, per-pair attack success rate,
//! per-label confidence profiles, and the poisoned-loss-gap diagnostic.

use serde::{Deserialize, Serialize};

use crate::attacks::{apply_trigger, PoisonRecord, Trigger};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::layers::{argmax, softmax};
use crate::model::Classifier;

/// Headline numbers for one trained model.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Accuracy on clean test inputs (against the original labels).
    pub benign_accuracy: f64,
    /// Attack success rate per (trigger, target) pair.
    pub asr: Vec<f64>,
    /// Accuracy of the matching un-poisoned model, when one was trained.
    pub original_accuracy: Option<f64>,
}

/// Prediction confidences of one label's training examples, split into the
/// poisoned and clean subsets.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfidenceProfile {
    pub label: usize,
    pub poisoned: Vec<f64>,
    pub clean: Vec<f64>,
    pub mean_poisoned: Option<f64>,
    pub mean_clean: Option<f64>,
    pub histogram: ConfidenceHistogram,
}

/// Fixed-width histogram over `[0, 1]` confidences.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConfidenceHistogram {
    pub bins: usize,
    pub poisoned: Vec<usize>,
    pub clean: Vec<usize>,
}

const HISTOGRAM_BINS: usize = 20;

/// Fraction of clean test examples whose prediction matches their original label.
pub fn benign_accuracy(model: &dyn Classifier, clean_test: &Dataset) -> Result<f64> {
    if clean_test.is_empty() {
        return Err(Error::config("benign accuracy needs a non-empty test set"));
    }
    let images: Vec<&crate::data::ImageTensor> =
        clean_test.examples.iter().map(|ex| &ex.image).collect();
    let logits = model.logits_batch(&images)?;
    let hits = logits
        .iter()
        .zip(&clean_test.examples)
        .filter(|(row, ex)| argmax(row) == ex.original_label)
        .count();
    Ok(hits as f64 / clean_test.len() as f64)
}

/// Attack success rate for each (trigger, target) pair: the fraction of test
/// examples with `original_label != target` whose triggered version is
/// predicted as the target.
pub fn attack_success_rate(
    model: &dyn Classifier,
    clean_test: &Dataset,
    pairs: &[(Trigger, usize)],
) -> Result<Vec<f64>> {
    if pairs.is_empty() {
        return Err(Error::config("attack_success_rate needs at least one (trigger, target) pair"));
    }
    let mut rates = Vec::with_capacity(pairs.len());
    for (trigger, target) in pairs {
        let eligible: Vec<&crate::data::LabeledExample> = clean_test
            .examples
            .iter()
            .filter(|ex| ex.original_label != *target)
            .collect();
        if eligible.is_empty() {
            return Err(Error::config(format!(
                "no test examples with original label != {target}"
            )));
        }
        let triggered: Vec<crate::data::ImageTensor> = eligible
            .iter()
            .map(|ex| apply_trigger(&ex.image, trigger))
            .collect::<Result<_>>()?;
        let refs: Vec<&crate::data::ImageTensor> = triggered.iter().collect();
        let logits = model.logits_batch(&refs)?;
        let hits = logits.iter().filter(|row| argmax(row) == *target).count();
        rates.push(hits as f64 / eligible.len() as f64);
    }
    Ok(rates)
}

/// Confidence profile of the training examples *predicted* as `label`,
/// partitioned by membership in the poison record.
pub fn confidence_profile(
    model: &dyn Classifier,
    train_set: &Dataset,
    record: &PoisonRecord,
    label: usize,
) -> Result<ConfidenceProfile> {
    if label >= model.num_classes() {
        return Err(Error::config(format!(
            "label {label} out of range for {} classes",
            model.num_classes()
        )));
    }
    let images: Vec<&crate::data::ImageTensor> =
        train_set.examples.iter().map(|ex| &ex.image).collect();
    let logits = model.logits_batch(&images)?;

    let mut poisoned = Vec::new();
    let mut clean = Vec::new();
    for (row, ex) in logits.iter().zip(&train_set.examples) {
        let probs = softmax(row);
        let predicted = argmax(&probs);
        if predicted != label {
            continue;
        }
        let confidence = probs[predicted] as f64;
        if record.poisoned_indices.contains(&ex.index) {
            poisoned.push(confidence);
        } else {
            clean.push(confidence);
        }
    }

    let histogram = ConfidenceHistogram {
        bins: HISTOGRAM_BINS,
        poisoned: bin_counts(&poisoned),
        clean: bin_counts(&clean),
    };
    Ok(ConfidenceProfile {
        label,
        mean_poisoned: mean(&poisoned),
        mean_clean: mean(&clean),
        poisoned,
        clean,
        histogram,
    })
}

fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

fn bin_counts(values: &[f64]) -> Vec<usize> {
    let mut counts = vec![0usize; HISTOGRAM_BINS];
    for &v in values {
        let bin = ((v * HISTOGRAM_BINS as f64) as usize).min(HISTOGRAM_BINS - 1);
        counts[bin] += 1;
    }
    counts
}

/// Summed absolute cross-entropy difference over poisoned examples,
/// weighted per source label by its achieved poisoning rate: a diagnostic
/// of how far the trojaned model moved the poisoned points.
///
/// For each poisoned example `x` with original label `z`, the term is
/// `|CE(clean(x), z) - CE(trojaned(x), target)|`, and label `z`'s group is
/// weighted by its rate `a_z`.
pub fn loss_gap_term(
    clean_model: &dyn Classifier,
    trojaned_model: &dyn Classifier,
    poisoned_train: &Dataset,
    record: &PoisonRecord,
    target: usize,
) -> Result<f64> {
    if record.poisoned_indices.is_empty() {
        return Ok(0.0);
    }
    let poisoned: Vec<&crate::data::LabeledExample> = poisoned_train
        .examples
        .iter()
        .filter(|ex| record.poisoned_indices.contains(&ex.index))
        .collect();
    let images: Vec<&crate::data::ImageTensor> = poisoned.iter().map(|ex| &ex.image).collect();
    let clean_logits = clean_model.logits_batch(&images)?;
    let trojan_logits = trojaned_model.logits_batch(&images)?;

    let mut total = 0.0f64;
    for ((ex, c_row), t_row) in poisoned.iter().zip(&clean_logits).zip(&trojan_logits) {
        let z = ex.original_label;
        let a_z = record.rates.get(&z).copied().unwrap_or(0.0);
        let ce_clean = cross_entropy(c_row, z);
        let ce_trojan = cross_entropy(t_row, target);
        total += a_z * (ce_clean - ce_trojan).abs();
    }
    Ok(total)
}

fn cross_entropy(logits: &[f32], label: usize) -> f64 {
    let p = softmax(logits);
    -(p[label].max(1e-12) as f64).ln()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attacks::{make_badnet_trigger, PatternValue, Placement, PoisonRecord};
    use crate::data::{generate_synthetic, ImageShape};
    use crate::model::stub::{ConstantClassifier, MemorizerClassifier};

    fn small_data() -> Dataset {
        generate_synthetic(10, 20, 16, 4).unwrap()
    }

    #[test]
    fn memorizer_scores_perfectly_on_its_own_data() {
        let data = small_data();
        let model = MemorizerClassifier::from_dataset(&data);
        assert_eq!(benign_accuracy(&model, &data).unwrap(), 1.0);
    }

    #[test]
    fn constant_model_scores_chance_on_balanced_data() {
        let data = small_data();
        let model = ConstantClassifier::new(3, 10, ImageShape::new(16, 16, 3));
        let accuracy = benign_accuracy(&model, &data).unwrap();
        assert!((accuracy - 0.1).abs() < 1e-9);
    }

    #[test]
    fn asr_is_one_for_constant_target_and_zero_otherwise() {
        let data = small_data();
        let trigger = make_badnet_trigger(
            ImageShape::new(16, 16, 3),
            4,
            Placement::LowerRight,
            PatternValue::White,
        )
        .unwrap();
        let hit = ConstantClassifier::new(0, 10, ImageShape::new(16, 16, 3));
        let miss = ConstantClassifier::new(5, 10, ImageShape::new(16, 16, 3));
        assert_eq!(attack_success_rate(&hit, &data, &[(trigger.clone(), 0)]).unwrap(), vec![1.0]);
        assert_eq!(attack_success_rate(&miss, &data, &[(trigger, 0)]).unwrap(), vec![0.0]);
    }

    #[test]
    fn asr_requires_pairs_and_eligible_examples() {
        let data = small_data();
        let model = ConstantClassifier::new(0, 10, ImageShape::new(16, 16, 3));
        assert!(attack_success_rate(&model, &data, &[]).is_err());
    }

    #[test]
    fn empty_record_puts_everything_in_the_clean_subset() {
        let data = small_data();
        let model = MemorizerClassifier::from_dataset(&data);
        let profile =
            confidence_profile(&model, &data, &PoisonRecord::default(), 3).unwrap();
        assert!(profile.poisoned.is_empty());
        assert_eq!(profile.clean.len(), 20);
        assert!(profile.mean_poisoned.is_none());
    }

    #[test]
    fn loss_gap_is_zero_for_empty_record_or_identical_models() {
        let data = small_data();
        let model = MemorizerClassifier::from_dataset(&data);
        let gap =
            loss_gap_term(&model, &model, &data, &PoisonRecord::default(), 0).unwrap();
        assert_eq!(gap, 0.0);

        // Same model on both sides and z == t for every poisoned example.
        let mut record = PoisonRecord::default();
        for ex in data.examples.iter().filter(|ex| ex.label == 0).take(5) {
            record.poisoned_indices.insert(ex.index);
            record.assignments.push(crate::attacks::PoisonAssignment {
                index: ex.index,
                trigger: 0,
                target: 0,
            });
        }
        record.rates.insert(0, 0.25);
        let gap = loss_gap_term(&model, &model, &data, &record, 0).unwrap();
        assert!(gap.abs() < 1e-12);
    }
}
