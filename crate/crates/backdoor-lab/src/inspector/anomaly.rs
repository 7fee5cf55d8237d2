//! MAD-based anomaly scoring of per-label statistics.
//!
//! The transfer-ratio detector is one-sided: only ratios *below* the median
//! are suspicious, because an infected label shows up as an unusually low
//! transfer ratio. The KL baseline reuses the same machinery two-sided.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// 1.4826 converts the median absolute deviation into a consistent
/// estimator of the standard deviation under normality.
pub const MAD_SCALE: f64 = 1.4826;

/// Anomaly indices above this are outliers (three-sigma style cutoff).
pub const ANOMALY_THRESHOLD: f64 = 3.5;

/// Transfer ratios above this are never treated as infected, and a
/// degenerate (MAD = 0) deviation only counts when the ratio is at or
/// below it.
pub const RATIO_FLOOR: f64 = 0.90;

/// Score of one entry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnomalyScore {
    /// `deviation / (1.4826 * MAD)`; `None` when MAD is zero and the
    /// deviation is not (the degenerate case).
    pub index: Option<f64>,
    /// True when MAD = 0 made the index undefined for this entry.
    pub degenerate: bool,
    /// Whether this entry counts as exceeding the detection threshold.
    pub exceeds: bool,
}

/// Scores for one statistic vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnomalyAssessment {
    pub median: f64,
    pub mad: f64,
    pub scores: Vec<AnomalyScore>,
}

impl AnomalyAssessment {
    /// Largest finite index (0 when none exists).
    pub fn max_index(&self) -> f64 {
        self.scores.iter().filter_map(|s| s.index).fold(0.0, f64::max)
    }
}

fn median_of(values: &[f64]) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite statistics"));
    let n = sorted.len();
    if n % 2 == 0 {
        (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0
    } else {
        sorted[n / 2]
    }
}

fn check_input(values: &[f64]) -> Result<()> {
    if values.len() < 3 {
        return Err(Error::config(format!(
            "anomaly detection needs at least 3 values, got {}",
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::config("anomaly detection needs finite values"));
    }
    Ok(())
}

/// One-sided MAD scoring of transfer ratios: only entries below the median
/// receive an index. With a zero MAD, zero-deviation entries score 0 and
/// any other entry is degenerate, exceeding the threshold iff its ratio is
/// at or below [`RATIO_FLOOR`].
pub fn anomaly_indices(ratios: &[f64]) -> Result<AnomalyAssessment> {
    check_input(ratios)?;
    let median = median_of(ratios);
    let deviations: Vec<f64> = ratios.iter().map(|r| (r - median).abs()).collect();
    let mad = median_of(&deviations);

    let scores = ratios
        .iter()
        .zip(&deviations)
        .map(|(&ratio, &dev)| {
            if mad == 0.0 {
                if dev == 0.0 {
                    AnomalyScore { index: Some(0.0), degenerate: false, exceeds: false }
                } else {
                    AnomalyScore { index: None, degenerate: true, exceeds: ratio <= RATIO_FLOOR }
                }
            } else {
                let index = if ratio < median { dev / (MAD_SCALE * mad) } else { 0.0 };
                AnomalyScore {
                    index: Some(index),
                    degenerate: false,
                    exceeds: index > ANOMALY_THRESHOLD,
                }
            }
        })
        .collect();
    Ok(AnomalyAssessment { median, mad, scores })
}

/// Two-sided MAD scoring (used by the KL baseline, where large scores in
/// either direction are anomalous). A zero MAD with a nonzero deviation is
/// degenerate and counts as exceeding.
pub fn two_sided_indices(values: &[f64]) -> Result<AnomalyAssessment> {
    check_input(values)?;
    let median = median_of(values);
    let deviations: Vec<f64> = values.iter().map(|v| (v - median).abs()).collect();
    let mad = median_of(&deviations);

    let scores = deviations
        .iter()
        .map(|&dev| {
            if mad == 0.0 {
                if dev == 0.0 {
                    AnomalyScore { index: Some(0.0), degenerate: false, exceeds: false }
                } else {
                    AnomalyScore { index: None, degenerate: true, exceeds: true }
                }
            } else {
                let index = dev / (MAD_SCALE * mad);
                AnomalyScore {
                    index: Some(index),
                    degenerate: false,
                    exceeds: index > ANOMALY_THRESHOLD,
                }
            }
        })
        .collect();
    Ok(AnomalyAssessment { median, mad, scores })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed_infected_vector() {
        let ratios = [0.96, 0.98, 1.00, 0.94, 0.10];
        let assessment = anomaly_indices(&ratios).unwrap();
        // median 0.96, deviations [0, .02, .04, .02, .86], MAD 0.02
        assert_eq!(assessment.median, 0.96);
        assert!((assessment.mad - 0.02).abs() < 1e-12);
        let expected = 0.86 / (MAD_SCALE * 0.02);
        let low = assessment.scores[4];
        assert!((low.index.unwrap() - expected).abs() < 1e-9);
        assert!(low.exceeds);
        for score in &assessment.scores[..4] {
            assert!(score.index.unwrap() < ANOMALY_THRESHOLD);
            assert!(!score.exceeds);
        }
    }

    #[test]
    fn all_equal_ratios_score_zero() {
        let assessment = anomaly_indices(&[1.0, 1.0, 1.0, 1.0]).unwrap();
        for score in &assessment.scores {
            assert_eq!(score.index, Some(0.0));
            assert!(!score.exceeds);
            assert!(!score.degenerate);
        }
        assert_eq!(assessment.max_index(), 0.0);
    }

    #[test]
    fn tight_clean_vector_stays_below_threshold() {
        let ratios = [0.97, 0.99, 1.00, 0.98, 0.96];
        let assessment = anomaly_indices(&ratios).unwrap();
        // median 0.98, deviations [.01, .01, .02, 0, .02], MAD 0.01;
        // the low side max is 0.02/(1.4826*0.01) ≈ 1.349.
        let expected = 0.02 / (MAD_SCALE * 0.01);
        assert!((assessment.max_index() - expected).abs() < 1e-9);
        assert!(assessment.max_index() < ANOMALY_THRESHOLD);
        assert!(assessment.scores.iter().all(|s| !s.exceeds));
    }

    #[test]
    fn one_sided_ignores_high_outliers() {
        // 5.0 is far above the median but must not be flagged.
        let assessment = anomaly_indices(&[0.9, 0.91, 0.92, 0.9, 5.0]).unwrap();
        assert_eq!(assessment.scores[4].index, Some(0.0));
        assert!(!assessment.scores[4].exceeds);
    }

    #[test]
    fn degenerate_mad_uses_the_ratio_floor() {
        // MAD = 0 (majority identical); the deviating low entry exceeds
        // only if its ratio is <= 0.90.
        let low = anomaly_indices(&[1.0, 1.0, 1.0, 1.0, 0.5]).unwrap();
        assert!(low.scores[4].degenerate);
        assert!(low.scores[4].exceeds);

        let high = anomaly_indices(&[1.0, 1.0, 1.0, 1.0, 0.95]).unwrap();
        assert!(high.scores[4].degenerate);
        assert!(!high.scores[4].exceeds);
    }

    #[test]
    fn rejects_short_or_non_finite_input() {
        assert!(anomaly_indices(&[1.0, 0.9]).is_err());
        assert!(anomaly_indices(&[1.0, 0.9, f64::NAN]).is_err());
    }

    #[test]
    fn two_sided_flags_large_values() {
        let assessment = two_sided_indices(&[0.1, 0.12, 0.11, 0.1, 3.0]).unwrap();
        assert!(assessment.scores[4].exceeds);
        assert!(!assessment.scores[0].exceeds);
    }
}
