//! Direct data-inspection baseline: KL divergence between the softmax of
//! the mean penultimate representations of the high- and low-confidence
//! samples, scored with two-sided MAD. Shares the inspector's sampling
//! path so comparisons isolate the scoring method.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, ImageTensor};
use crate::error::{Error, Result};
use crate::inspector::{select_confidence_samples, two_sided_indices, Verdict};
use crate::model::{softmax, Classifier};

/// Activation entering the model's final dense layer.
pub fn penultimate_representation(model: &dyn Classifier, image: &ImageTensor) -> Result<Vec<f32>> {
    model.penultimate(image)
}

/// `KL(p ‖ q) = Σ p_i ln(p_i / q_i)` over two distributions.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .map(|(&pi, &qi)| if pi > 0.0 { pi * (pi / qi.max(1e-12)).ln() } else { 0.0 })
        .sum()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaselineLabel {
    pub z: usize,
    pub kl: Option<f64>,
    pub anomaly_index: Option<f64>,
    pub degenerate: bool,
    pub skipped: bool,
}

/// `baseline.json` contents.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaselineReport {
    pub verdict: Verdict,
    pub max_anomaly_index: f64,
    pub labels: Vec<BaselineLabel>,
    /// KL direction is fixed to high-confidence ‖ low-confidence.
    pub direction: String,
    pub k: usize,
}

/// Per label: sample D_h/D_l exactly as the inspector does, average the
/// penultimate representations of each side, softmax-normalize, and score
/// `KL(high ‖ low)`. Anomaly detection is two-sided MAD at the standard
/// threshold; the model is called trojaned when any label exceeds it.
pub fn kl_data_inspection(
    model: &dyn Classifier,
    train_set: &Dataset,
    k: usize,
) -> Result<BaselineReport> {
    let mut labels = Vec::with_capacity(model.num_classes());
    let mut scored: Vec<(usize, f64)> = Vec::new();
    for label in 0..model.num_classes() {
        let sample = match select_confidence_samples(model, train_set, label, k) {
            Ok(sample) => sample,
            Err(Error::EmptyClass { .. }) => {
                labels.push(BaselineLabel {
                    z: label,
                    kl: None,
                    anomaly_index: None,
                    degenerate: false,
                    skipped: true,
                });
                continue;
            }
            Err(other) => return Err(other),
        };
        let high: Vec<&ImageTensor> = sample.high.iter().map(|ex| &ex.image).collect();
        let low: Vec<&ImageTensor> = sample.low.iter().map(|ex| &ex.image).collect();
        let p = softmax_of_mean(model, &high)?;
        let q = softmax_of_mean(model, &low)?;
        let kl = kl_divergence(&p, &q);
        scored.push((label, kl));
        labels.push(BaselineLabel {
            z: label,
            kl: Some(kl),
            anomaly_index: None,
            degenerate: false,
            skipped: false,
        });
    }
    if scored.len() < 3 {
        return Err(Error::InspectionFailed(format!(
            "only {} labels produced KL scores; MAD scoring needs 3",
            scored.len()
        )));
    }

    let values: Vec<f64> = scored.iter().map(|(_, v)| *v).collect();
    let assessment = two_sided_indices(&values)?;
    let mut any_exceeds = false;
    for ((z, _), score) in scored.iter().zip(&assessment.scores) {
        let entry = labels.iter_mut().find(|l| l.z == *z).expect("scored labels exist");
        entry.anomaly_index = score.index;
        entry.degenerate = score.degenerate;
        any_exceeds |= score.exceeds;
    }

    Ok(BaselineReport {
        verdict: if any_exceeds { Verdict::Trojaned } else { Verdict::Clean },
        max_anomaly_index: assessment.max_index(),
        labels,
        direction: "high_vs_low".into(),
        k,
    })
}

fn softmax_of_mean(model: &dyn Classifier, images: &[&ImageTensor]) -> Result<Vec<f64>> {
    let rows = model.penultimate_batch(images)?;
    let width = rows.first().map(|r| r.len()).unwrap_or(0);
    let mut mean = vec![0.0f32; width];
    for row in &rows {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    for m in &mut mean {
        *m /= rows.len() as f32;
    }
    Ok(softmax(&mean).into_iter().map(|v| v as f64).collect())
}
