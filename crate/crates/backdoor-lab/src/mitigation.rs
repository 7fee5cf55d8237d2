//! Patch-guided data cleansing and retraining: superimpose the infected
//! label's learned patch onto that label's training samples, drop the ones
//! whose prediction moves away from the reference label, retrain from
//! scratch on what remains.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::attacks::Trigger;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::inspector::{InspectionReport, Verdict};
use crate::model::{
    argmax, attack_success_rate, benign_accuracy, Classifier, ClassifierSpec, MetricsReport,
    TrainConfig, TrainedClassifier,
};
use crate::rng;

/// Which label a patched prediction is compared against when deciding
/// removal.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CleanseMode {
    /// Compare against the stored pre-poisoning ground truth. Matches the
    /// original procedure but assumes the defender knows it.
    OriginalLabel,
    /// Compare against the current (possibly poisoned) label — what a real
    /// defender actually has.
    CurrentLabel,
}

/// Result of a cleanse pass.
#[derive(Debug, Clone)]
pub struct CleanseOutcome {
    /// Retained examples, reindexed to `0..len`.
    pub cleaned: Dataset,
    /// Original indices of removed examples.
    pub removed: BTreeSet<usize>,
    /// New index -> original index for every retained example.
    pub provenance: Vec<usize>,
}

/// Removes suspected poison from `train_set`, guided by the report's
/// learned patches. Only examples whose current label is infected are
/// candidates; one whose patched prediction differs from its reference
/// label (per `mode`) is removed.
pub fn cleanse(
    model: &dyn Classifier,
    train_set: &Dataset,
    report: &InspectionReport,
    mode: CleanseMode,
) -> Result<CleanseOutcome> {
    if report.verdict != Verdict::Trojaned || report.infected_labels.is_empty() {
        return Err(Error::config("cleanse needs a trojaned verdict with infected labels"));
    }

    let mut removed = BTreeSet::new();
    for &label in &report.infected_labels {
        let patch = report
            .labels
            .iter()
            .find(|l| l.label == label)
            .and_then(|l| l.patch.as_ref())
            .ok_or_else(|| {
                Error::InspectionFailed(format!("report carries no patch for label {label}"))
            })?;
        let members: Vec<&crate::data::LabeledExample> =
            train_set.examples.iter().filter(|ex| ex.label == label).collect();
        let patched: Vec<crate::data::ImageTensor> =
            members.iter().map(|ex| patch.apply(&ex.image)).collect::<Result<_>>()?;
        let refs: Vec<&crate::data::ImageTensor> = patched.iter().collect();
        let logits = model.logits_batch(&refs)?;
        for (ex, row) in members.iter().zip(&logits) {
            let reference = match mode {
                CleanseMode::OriginalLabel => ex.original_label,
                CleanseMode::CurrentLabel => ex.label,
            };
            if argmax(row) != reference {
                removed.insert(ex.index);
            }
        }
    }

    let mut cleaned_examples = Vec::with_capacity(train_set.len() - removed.len());
    let mut provenance = Vec::with_capacity(train_set.len() - removed.len());
    for ex in &train_set.examples {
        if removed.contains(&ex.index) {
            continue;
        }
        let mut kept = ex.clone();
        provenance.push(ex.index);
        kept.index = cleaned_examples.len();
        cleaned_examples.push(kept);
    }
    let cleaned = Dataset::new(
        cleaned_examples,
        train_set.num_classes,
        format!("{}-cleaned", train_set.name),
    )?;
    Ok(CleanseOutcome { cleaned, removed, provenance })
}

/// Everything `mitigate` produces, ready to serialize as `mitigation.json`
/// (minus the retrained weights, which go to a checkpoint).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MitigationRecord {
    pub mode: CleanseMode,
    pub removed_indices: BTreeSet<usize>,
    pub removed_per_label: BTreeMap<usize, usize>,
    pub before: MetricsReport,
    pub after: MetricsReport,
    /// Labels that lost more than half their examples during cleansing.
    pub shrunken_labels: BTreeSet<usize>,
}

pub struct MitigationOutcome {
    pub retrained: TrainedClassifier,
    pub cleanse: CleanseOutcome,
    pub record: MitigationRecord,
}

/// Cleanses the training set and retrains from scratch, reporting metrics
/// before and after. Retraining reuses `train_config` with a freshly
/// derived seed.
#[allow(clippy::too_many_arguments)]
pub fn mitigate(
    model: &dyn Classifier,
    spec: &ClassifierSpec,
    train_set: &Dataset,
    test_set: &Dataset,
    report: &InspectionReport,
    train_config: &TrainConfig,
    pairs: &[(Trigger, usize)],
    mode: CleanseMode,
) -> Result<MitigationOutcome> {
    let before = MetricsReport {
        benign_accuracy: benign_accuracy(model, test_set)?,
        asr: attack_success_rate(model, test_set, pairs)?,
        original_accuracy: None,
    };

    let cleanse_outcome = cleanse(model, train_set, report, mode)?;

    let mut removed_per_label = BTreeMap::new();
    let mut shrunken = BTreeSet::new();
    for label in 0..train_set.num_classes {
        let original = train_set.class_count(label);
        let remaining = cleanse_outcome.cleaned.class_count(label);
        let removed_count = original - remaining;
        if removed_count > 0 {
            removed_per_label.insert(label, removed_count);
        }
        if original > 0 && remaining * 2 < original {
            shrunken.insert(label);
        }
    }

    let retrain_config = TrainConfig {
        seed: rng::derive_seed(train_config.seed, "retrain", 0),
        ..train_config.clone()
    };
    let retrained = crate::model::train(spec, &cleanse_outcome.cleaned, &retrain_config)?;

    let after = MetricsReport {
        benign_accuracy: benign_accuracy(&retrained, test_set)?,
        asr: attack_success_rate(&retrained, test_set, pairs)?,
        original_accuracy: None,
    };

    let record = MitigationRecord {
        mode,
        removed_indices: cleanse_outcome.removed.clone(),
        removed_per_label,
        before,
        after,
        shrunken_labels: shrunken,
    };
    Ok(MitigationOutcome { retrained, cleanse: cleanse_outcome, record })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, ImageShape};
    use crate::inspector::{InspectionConfig, LabelInspection, Patch};
    use crate::model::stub::ConstantClassifier;

    fn fabricated_report(infected: &[usize], shape: ImageShape, verdict: Verdict) -> InspectionReport {
        let labels = (0..4)
            .map(|label| LabelInspection {
                label,
                transfer_ratio: Some(if infected.contains(&label) { 0.1 } else { 1.0 }),
                sample_count: Some(8),
                anomaly_index: Some(if infected.contains(&label) { 10.0 } else { 0.0 }),
                degenerate: false,
                mask_l1: Some(1.0),
                flip_rate: Some(1.0),
                lambda: Some(1e-4),
                skipped: false,
                clamped: false,
                patch: Some(Patch {
                    shape,
                    mask: vec![0.0; shape.height * shape.width],
                    pattern: vec![0.0; shape.len()],
                    lambda: 1e-4,
                    mask_l1: 0.0,
                    achieved_flip_rate: 1.0,
                }),
            })
            .collect();
        InspectionReport {
            verdict,
            max_anomaly_index: 10.0,
            infected_labels: infected.iter().copied().collect(),
            labels,
            config: InspectionConfig::default(),
            seed: 0,
        }
    }

    #[test]
    fn clean_verdict_is_rejected() {
        let data = generate_synthetic(4, 20, 16, 3).unwrap();
        let shape = ImageShape::new(16, 16, 3);
        let model = ConstantClassifier::new(0, 4, shape);
        let report = fabricated_report(&[], shape, Verdict::Clean);
        assert!(cleanse(&model, &data, &report, CleanseMode::OriginalLabel).is_err());
    }

    #[test]
    fn unchanged_predictions_remove_nothing() {
        // Constant label-0 model on clean data: every label-0 example keeps
        // its prediction (== original label) under the identity patch.
        let data = generate_synthetic(4, 20, 16, 3).unwrap();
        let shape = ImageShape::new(16, 16, 3);
        let model = ConstantClassifier::new(0, 4, shape);
        let report = fabricated_report(&[0], shape, Verdict::Trojaned);
        let outcome = cleanse(&model, &data, &report, CleanseMode::OriginalLabel).unwrap();
        assert!(outcome.removed.is_empty());
        assert_eq!(outcome.cleaned.len(), data.len());
        assert_eq!(
            outcome.cleaned.examples.iter().map(|e| e.image.clone()).collect::<Vec<_>>(),
            data.examples.iter().map(|e| e.image.clone()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn removal_stays_inside_infected_labels_and_partitions_the_set() {
        // A model that predicts 1 for everything: label-0 members all get
        // removed (patched prediction 1 != original 0), others untouched.
        let data = generate_synthetic(4, 20, 16, 3).unwrap();
        let shape = ImageShape::new(16, 16, 3);
        let model = ConstantClassifier::new(1, 4, shape);
        let report = fabricated_report(&[0], shape, Verdict::Trojaned);
        let outcome = cleanse(&model, &data, &report, CleanseMode::OriginalLabel).unwrap();
        let class0: BTreeSet<usize> =
            data.examples.iter().filter(|ex| ex.label == 0).map(|ex| ex.index).collect();
        assert_eq!(outcome.removed, class0);
        // cleaned ∪ removed == original indices.
        let mut union: Vec<usize> = outcome.provenance.clone();
        union.extend(outcome.removed.iter().copied());
        union.sort_unstable();
        assert_eq!(union, (0..data.len()).collect::<Vec<_>>());
        // cleaned is reindexed contiguously.
        for (i, ex) in outcome.cleaned.examples.iter().enumerate() {
            assert_eq!(ex.index, i);
        }
    }
}
