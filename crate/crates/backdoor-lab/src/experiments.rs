//! End-to-end pipelines (data → attack → train → inspect) and the named
//! experiment sweeps the CLI exposes. Every sweep writes one CSV (plus
//! optional PNG plots) and keeps going when a cell fails, recording the
//! error in that row.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attacks::{
    poison_dataset, schedule_poisoning, AttackType, ModelTrainer, PoisonRecord, PoisonSpec,
};
use crate::baseline::kl_data_inspection;
use crate::config::{RunConfig, TriggerConfig};
use crate::data::{generate_synthetic, split, Dataset, DatasetSplits};
use crate::error::{Error, Result};
use crate::inspector::{inspect, InspectionReport, Verdict};
use crate::mitigation::{mitigate, MitigationRecord};
use crate::model::{
    attack_success_rate, benign_accuracy, confidence_profile, train, TrainedClassifier,
};
use crate::plot::LinePlot;
use crate::report::{write_atomic, write_json};

/// Generates and splits the synthetic dataset described by the config.
pub fn prepare_data(config: &RunConfig) -> Result<DatasetSplits> {
    let data = generate_synthetic(
        config.data.num_classes,
        config.data.per_class,
        config.data.image_size,
        config.data.seed,
    )?;
    let (train_set, test_set) = split(&data, config.data.test_fraction, config.data.seed)?;
    Ok(DatasetSplits { train: train_set, test: test_set, seed: config.data.seed })
}

/// A completed attack: the trojaned model plus everything needed to judge it.
pub struct AttackRun {
    pub model: TrainedClassifier,
    pub poisoned_train: Dataset,
    pub record: PoisonRecord,
    pub spec: PoisonSpec,
    pub benign_accuracy: f64,
    /// Standard per-pair ASR on the clean test set.
    pub asr: Vec<f64>,
    /// Scheduler stopping statistic (min source-restricted pair flip rate).
    pub effectiveness: f64,
    pub final_rate: f64,
    pub target_met: bool,
    pub scheduled: bool,
}

impl AttackRun {
    /// Worst-case pair ASR; the single pair's ASR for basic attacks.
    pub fn min_asr(&self) -> f64 {
        self.asr.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Poisons the training split and trains the attacked model, either at the
/// fixed config rate or through the scheduler when one is configured.
pub fn run_attack(config: &RunConfig, splits: &DatasetSplits) -> Result<AttackRun> {
    let shape = config.data.image_shape();
    let spec_template = config.attack.poison_spec(shape, config.data.num_classes)?;
    let trainer = ModelTrainer {
        spec: config.train.classifier_spec(shape, config.data.num_classes)?,
        config: config.train.train_config(),
    };

    if let Some(schedule) = &config.attack.schedule {
        let outcome = schedule_poisoning(
            &splits.train,
            &splits.test,
            &spec_template,
            &trainer,
            schedule.asr_target,
            schedule.rate_step,
            schedule.rate_cap,
        )?;
        let ba = benign_accuracy(&outcome.model, &splits.test)?;
        let spec = PoisonSpec { rate: outcome.final_rate, ..spec_template };
        Ok(AttackRun {
            benign_accuracy: ba,
            asr: outcome.asr,
            effectiveness: outcome.effectiveness,
            final_rate: outcome.final_rate,
            target_met: outcome.target_met,
            scheduled: true,
            model: outcome.model,
            poisoned_train: outcome.poisoned_train,
            record: outcome.record,
            spec,
        })
    } else {
        let (poisoned_train, record) = poison_dataset(&splits.train, &spec_template)?;
        let model = train(&trainer.spec, &poisoned_train, &trainer.config)?;
        let ba = benign_accuracy(&model, &splits.test)?;
        let asr = attack_success_rate(&model, &splits.test, &spec_template.pairs)?;
        let effectiveness = asr.iter().copied().fold(f64::INFINITY, f64::min);
        Ok(AttackRun {
            benign_accuracy: ba,
            asr,
            effectiveness,
            final_rate: spec_template.rate,
            target_met: true,
            scheduled: false,
            model,
            poisoned_train,
            record,
            spec: spec_template,
        })
    }
}

/// Trains the un-poisoned reference model.
pub fn train_clean(config: &RunConfig, splits: &DatasetSplits) -> Result<TrainedClassifier> {
    let shape = config.data.image_shape();
    let spec = config.train.classifier_spec(shape, config.data.num_classes)?;
    train(&spec, &splits.train, &config.train.train_config())
}

/// The experiment names accepted by `backdoor-lab experiment`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentName {
    Fig1Confidence,
    Table2Advanced,
    Table4TriggerSize,
    Table5Baseline,
    Table6Adaptive,
    Table7Mitigation,
    Table9SamplingSize,
}

impl ExperimentName {
    pub const ALL: [(&'static str, ExperimentName); 7] = [
        ("fig1-confidence", ExperimentName::Fig1Confidence),
        ("table2-advanced", ExperimentName::Table2Advanced),
        ("table4-trigger-size", ExperimentName::Table4TriggerSize),
        ("table5-baseline", ExperimentName::Table5Baseline),
        ("table6-adaptive", ExperimentName::Table6Adaptive),
        ("table7-mitigation", ExperimentName::Table7Mitigation),
        ("table9-sampling-size", ExperimentName::Table9SamplingSize),
    ];

    pub fn as_str(&self) -> &'static str {
        Self::ALL.iter().find(|(_, e)| e == self).expect("listed").0
    }
}

impl std::str::FromStr for ExperimentName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .find(|(name, _)| *name == s)
            .map(|(_, e)| *e)
            .ok_or_else(|| {
                let names: Vec<&str> = Self::ALL.iter().map(|(n, _)| *n).collect();
                Error::config(format!("unknown experiment '{s}'; expected one of {names:?}"))
            })
    }
}

/// Runs an experiment with its default sweep and writes artifacts to
/// `out_dir`. Returns the CSV path.
pub fn run_experiment(
    name: ExperimentName,
    config: &RunConfig,
    out_dir: &Path,
    plots: bool,
) -> Result<PathBuf> {
    std::fs::create_dir_all(out_dir)?;
    write_json(&out_dir.join(format!("{}.config.json", name.as_str())), config)?;
    match name {
        ExperimentName::Fig1Confidence => {
            fig1_confidence(config, &[0.005, 0.01, 0.02, 0.03, 0.05], out_dir, plots)
        }
        ExperimentName::Table2Advanced => table2_advanced(config, out_dir, plots),
        ExperimentName::Table4TriggerSize => {
            table4_trigger_size(config, &[4, 8, 12, 16], out_dir)
        }
        ExperimentName::Table5Baseline => table5_baseline(config, out_dir),
        ExperimentName::Table6Adaptive => {
            table6_adaptive(config, &[0.05, 0.02, 0.01, 0.005, 0.002], out_dir, plots)
        }
        ExperimentName::Table7Mitigation => table7_mitigation(config, out_dir),
        ExperimentName::Table9SamplingSize => table9_sampling_size(config, &[20, 50, 100], out_dir),
    }
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in rows {
        writer
            .serialize(row)
            .map_err(|e| Error::format(format!("csv serialization failed: {e}")))?;
    }
    let bytes =
        writer.into_inner().map_err(|e| Error::format(format!("csv flush failed: {e}")))?;
    write_atomic(path, &bytes)
}

fn verdict_str(verdict: Verdict) -> &'static str {
    match verdict {
        Verdict::Trojaned => "trojaned",
        Verdict::Clean => "clean",
    }
}

/// One row of the confidence-observation sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Fig1Row {
    pub rate: f64,
    pub benign_accuracy: Option<f64>,
    pub asr: Option<f64>,
    pub mean_confidence_poisoned: Option<f64>,
    pub mean_confidence_clean: Option<f64>,
    pub error: Option<String>,
}

/// Poisoning rate vs BA, ASR, and the mean prediction confidence of the
/// poisoned and clean subsets of the target label.
pub fn fig1_confidence(
    config: &RunConfig,
    rates: &[f64],
    out_dir: &Path,
    plots: bool,
) -> Result<PathBuf> {
    let splits = prepare_data(config)?;
    let target = config.attack.target;
    let mut rows = Vec::new();
    for &rate in rates {
        let mut cell_config = config.clone();
        cell_config.attack.rate = rate;
        cell_config.attack.schedule = None;
        let row = match run_attack(&cell_config, &splits).and_then(|run| {
            let profile = confidence_profile(&run.model, &run.poisoned_train, &run.record, target)?;
            Ok((run, profile))
        }) {
            Ok((run, profile)) => Fig1Row {
                rate,
                benign_accuracy: Some(run.benign_accuracy),
                asr: Some(run.min_asr()),
                mean_confidence_poisoned: profile.mean_poisoned,
                mean_confidence_clean: profile.mean_clean,
                error: None,
            },
            Err(e) => Fig1Row {
                rate,
                benign_accuracy: None,
                asr: None,
                mean_confidence_poisoned: None,
                mean_confidence_clean: None,
                error: Some(e.to_string()),
            },
        };
        rows.push(row);
    }
    let csv_path = out_dir.join("fig1-confidence.csv");
    write_csv(&csv_path, &rows)?;

    if plots {
        let good: Vec<&Fig1Row> = rows.iter().filter(|r| r.error.is_none()).collect();
        let series = |f: fn(&Fig1Row) -> Option<f64>| -> Vec<(f64, f64)> {
            good.iter().filter_map(|r| f(r).map(|v| (r.rate, v))).collect()
        };
        LinePlot::new("confidence vs poisoning rate", "rate", "value")
            .series("conf poisoned", series(|r| r.mean_confidence_poisoned))
            .series("conf clean", series(|r| r.mean_confidence_clean))
            .series("ba", series(|r| r.benign_accuracy))
            .series("asr", series(|r| r.asr))
            .render(&out_dir.join("fig1-confidence.png"))?;
    }
    Ok(csv_path)
}

/// One row of the advanced-attack table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdvancedRow {
    pub attack: String,
    pub benign_accuracy: Option<f64>,
    pub min_asr: Option<f64>,
    pub final_rate: Option<f64>,
    pub verdict: Option<String>,
    pub max_anomaly_index: Option<f64>,
    pub infected_labels: Option<String>,
    pub flagged_a_true_target: Option<bool>,
    pub error: Option<String>,
}

/// Detection results for the partial, MTOT, and MTMT attacks.
pub fn table2_advanced(config: &RunConfig, out_dir: &Path, plots: bool) -> Result<PathBuf> {
    let splits = prepare_data(config)?;
    let mut rows = Vec::new();
    for attack_type in [AttackType::Partial, AttackType::Mtot, AttackType::Mtmt] {
        let mut cell_config = config.clone();
        cell_config.attack.attack_type = attack_type;
        match attack_type {
            AttackType::Partial => {
                // Poison a single source label hard instead of scheduling:
                // overall ASR is capped by the source restriction.
                cell_config.attack.source_labels = Some(vec![1]);
                cell_config.attack.rate = 0.4;
                cell_config.attack.schedule = None;
            }
            _ => {
                if let Some(schedule) = cell_config.attack.schedule.as_mut() {
                    schedule.rate_step = 0.02;
                    schedule.rate_cap = 0.2;
                }
            }
        }
        let row = match run_attack(&cell_config, &splits).and_then(|run| {
            let report = inspect(&run.model, &run.poisoned_train, &cell_config.inspect)?;
            Ok((run, report))
        }) {
            Ok((run, report)) => {
                let true_targets: Vec<usize> = run.spec.pairs.iter().map(|(_, t)| *t).collect();
                if plots {
                    save_report_patches(&report, out_dir, &format!("{attack_type:?}"))?;
                }
                AdvancedRow {
                    attack: format!("{attack_type:?}").to_lowercase(),
                    benign_accuracy: Some(run.benign_accuracy),
                    min_asr: Some(run.min_asr()),
                    final_rate: Some(run.final_rate),
                    verdict: Some(verdict_str(report.verdict).into()),
                    max_anomaly_index: Some(report.max_anomaly_index),
                    infected_labels: Some(format!("{:?}", report.infected_labels)),
                    flagged_a_true_target: Some(
                        report.infected_labels.iter().any(|z| true_targets.contains(z)),
                    ),
                    error: None,
                }
            }
            Err(e) => AdvancedRow {
                attack: format!("{attack_type:?}").to_lowercase(),
                benign_accuracy: None,
                min_asr: None,
                final_rate: None,
                verdict: None,
                max_anomaly_index: None,
                infected_labels: None,
                flagged_a_true_target: None,
                error: Some(e.to_string()),
            },
        };
        rows.push(row);
    }
    let csv_path = out_dir.join("table2-advanced.csv");
    write_csv(&csv_path, &rows)?;
    Ok(csv_path)
}

fn save_report_patches(report: &InspectionReport, out_dir: &Path, tag: &str) -> Result<()> {
    for label in &report.labels {
        if let Some(patch) = &label.patch {
            crate::plot::save_patch_png(
                patch,
                &out_dir.join(format!("{}-patch-label{}.png", tag.to_lowercase(), label.label)),
            )?;
        }
    }
    Ok(())
}

/// One row of the trigger-size sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TriggerSizeRow {
    pub size: usize,
    pub benign_accuracy: Option<f64>,
    pub asr: Option<f64>,
    pub verdict: Option<String>,
    pub max_anomaly_index: Option<f64>,
    pub error: Option<String>,
}

/// BadNet at growing trigger sizes, fixed poisoning rate.
pub fn table4_trigger_size(
    config: &RunConfig,
    sizes: &[usize],
    out_dir: &Path,
) -> Result<PathBuf> {
    let splits = prepare_data(config)?;
    let mut rows = Vec::new();
    for &size in sizes {
        let mut cell_config = config.clone();
        cell_config.attack.attack_type = AttackType::Badnet;
        cell_config.attack.trigger = TriggerConfig::default_badnet(size);
        cell_config.attack.rate = 0.05;
        cell_config.attack.schedule = None;
        let row = match run_attack(&cell_config, &splits).and_then(|run| {
            let report = inspect(&run.model, &run.poisoned_train, &cell_config.inspect)?;
            Ok((run, report))
        }) {
            Ok((run, report)) => TriggerSizeRow {
                size,
                benign_accuracy: Some(run.benign_accuracy),
                asr: Some(run.min_asr()),
                verdict: Some(verdict_str(report.verdict).into()),
                max_anomaly_index: Some(report.max_anomaly_index),
                error: None,
            },
            Err(e) => TriggerSizeRow {
                size,
                benign_accuracy: None,
                asr: None,
                verdict: None,
                max_anomaly_index: None,
                error: Some(e.to_string()),
            },
        };
        rows.push(row);
    }
    let csv_path = out_dir.join("table4-trigger-size.csv");
    write_csv(&csv_path, &rows)?;
    Ok(csv_path)
}

/// One row of the adaptive-attack sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdaptiveRow {
    pub rate: f64,
    pub benign_accuracy: Option<f64>,
    pub asr: Option<f64>,
    pub verdict: Option<String>,
    pub max_anomaly_index: Option<f64>,
    pub error: Option<String>,
}

/// Decreasing poisoning rates: the attacker lowers confidence, the detector
/// holds on while the attack stays effective.
pub fn table6_adaptive(
    config: &RunConfig,
    rates: &[f64],
    out_dir: &Path,
    plots: bool,
) -> Result<PathBuf> {
    let splits = prepare_data(config)?;
    let mut rows = Vec::new();
    for &rate in rates {
        let mut cell_config = config.clone();
        cell_config.attack.rate = rate;
        cell_config.attack.schedule = None;
        let row = match run_attack(&cell_config, &splits).and_then(|run| {
            let report = inspect(&run.model, &run.poisoned_train, &cell_config.inspect)?;
            Ok((run, report))
        }) {
            Ok((run, report)) => AdaptiveRow {
                rate,
                benign_accuracy: Some(run.benign_accuracy),
                asr: Some(run.min_asr()),
                verdict: Some(verdict_str(report.verdict).into()),
                max_anomaly_index: Some(report.max_anomaly_index),
                error: None,
            },
            Err(e) => AdaptiveRow {
                rate,
                benign_accuracy: None,
                asr: None,
                verdict: None,
                max_anomaly_index: None,
                error: Some(e.to_string()),
            },
        };
        rows.push(row);
    }
    let csv_path = out_dir.join("table6-adaptive.csv");
    write_csv(&csv_path, &rows)?;

    if plots {
        let good: Vec<&AdaptiveRow> = rows.iter().filter(|r| r.error.is_none()).collect();
        LinePlot::new("adaptive attack", "rate", "value")
            .series(
                "asr",
                good.iter().filter_map(|r| r.asr.map(|v| (r.rate, v))).collect(),
            )
            .series(
                "index/10",
                good.iter()
                    .filter_map(|r| r.max_anomaly_index.map(|v| (r.rate, v / 10.0)))
                    .collect(),
            )
            .render(&out_dir.join("table6-adaptive.png"))?;
    }
    Ok(csv_path)
}

/// One row of the sampling-size sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplingRow {
    pub k: usize,
    pub verdict: Option<String>,
    pub max_anomaly_index: Option<f64>,
    pub clamped_labels: Option<usize>,
    pub error: Option<String>,
}

/// Detection at different sampling sizes K over one attacked model.
pub fn table9_sampling_size(config: &RunConfig, ks: &[usize], out_dir: &Path) -> Result<PathBuf> {
    let splits = prepare_data(config)?;
    let run = run_attack(config, &splits)?;
    let mut rows = Vec::new();
    for &k in ks {
        let mut inspect_config = config.inspect.clone();
        inspect_config.k = k;
        let row = match inspect(&run.model, &run.poisoned_train, &inspect_config) {
            Ok(report) => SamplingRow {
                k,
                verdict: Some(verdict_str(report.verdict).into()),
                max_anomaly_index: Some(report.max_anomaly_index),
                clamped_labels: Some(report.labels.iter().filter(|l| l.clamped).count()),
                error: None,
            },
            Err(e) => SamplingRow {
                k,
                verdict: None,
                max_anomaly_index: None,
                clamped_labels: None,
                error: Some(e.to_string()),
            },
        };
        rows.push(row);
    }
    let csv_path = out_dir.join("table9-sampling-size.csv");
    write_csv(&csv_path, &rows)?;
    Ok(csv_path)
}

/// One row of the baseline comparison.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BaselineRow {
    pub model: String,
    pub method: String,
    pub verdict: Option<String>,
    pub max_anomaly_index: Option<f64>,
    pub error: Option<String>,
}

/// Inspector vs the KL data-inspection baseline on a clean/trojaned pair.
pub fn table5_baseline(config: &RunConfig, out_dir: &Path) -> Result<PathBuf> {
    let splits = prepare_data(config)?;
    let mut rows = Vec::new();

    let clean_model = train_clean(config, &splits)?;
    let attack = run_attack(config, &splits)?;
    let cases: [(&str, &TrainedClassifier, &Dataset); 2] = [
        ("clean", &clean_model, &splits.train),
        ("trojaned", &attack.model, &attack.poisoned_train),
    ];
    for (model_name, model, train_set) in cases {
        match inspect(model, train_set, &config.inspect) {
            Ok(report) => {
                write_json(&out_dir.join(format!("report-{model_name}.json")), &report)?;
                rows.push(BaselineRow {
                    model: model_name.into(),
                    method: "inspector".into(),
                    verdict: Some(verdict_str(report.verdict).into()),
                    max_anomaly_index: Some(report.max_anomaly_index),
                    error: None,
                });
            }
            Err(e) => rows.push(BaselineRow {
                model: model_name.into(),
                method: "inspector".into(),
                verdict: None,
                max_anomaly_index: None,
                error: Some(e.to_string()),
            }),
        }
        match kl_data_inspection(model, train_set, config.baseline.k) {
            Ok(report) => {
                write_json(&out_dir.join(format!("baseline-{model_name}.json")), &report)?;
                rows.push(BaselineRow {
                    model: model_name.into(),
                    method: "kl_baseline".into(),
                    verdict: Some(verdict_str(report.verdict).into()),
                    max_anomaly_index: Some(report.max_anomaly_index),
                    error: None,
                });
            }
            Err(e) => rows.push(BaselineRow {
                model: model_name.into(),
                method: "kl_baseline".into(),
                verdict: None,
                max_anomaly_index: None,
                error: Some(e.to_string()),
            }),
        }
    }
    let csv_path = out_dir.join("table5-baseline.csv");
    write_csv(&csv_path, &rows)?;
    Ok(csv_path)
}

/// One row of the mitigation table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MitigationRow {
    pub attack: String,
    pub original_accuracy: Option<f64>,
    pub benign_accuracy_before: Option<f64>,
    pub asr_before: Option<f64>,
    pub benign_accuracy_after: Option<f64>,
    pub asr_after: Option<f64>,
    pub removed: Option<usize>,
    pub error: Option<String>,
}

/// Cleanse-and-retrain on the attacked model; accuracy before/after.
pub fn table7_mitigation(config: &RunConfig, out_dir: &Path) -> Result<PathBuf> {
    let splits = prepare_data(config)?;
    let clean_model = train_clean(config, &splits)?;
    let original_accuracy = benign_accuracy(&clean_model, &splits.test)?;

    let mut rows = Vec::new();
    let attack_name = format!("{:?}", config.attack.attack_type).to_lowercase();
    let row = match run_attack(config, &splits).and_then(|run| {
        let report = inspect(&run.model, &run.poisoned_train, &config.inspect)?;
        let shape = config.data.image_shape();
        let spec = config.train.classifier_spec(shape, config.data.num_classes)?;
        let outcome = mitigate(
            &run.model,
            &spec,
            &run.poisoned_train,
            &splits.test,
            &report,
            &config.train.train_config(),
            &run.spec.pairs,
            config.mitigation.mode,
        )?;
        write_json(&out_dir.join("mitigation.json"), &outcome.record)?;
        Ok(outcome.record)
    }) {
        Ok(record) => MitigationRow {
            attack: attack_name.clone(),
            original_accuracy: Some(original_accuracy),
            benign_accuracy_before: Some(record.before.benign_accuracy),
            asr_before: record.before.asr.iter().copied().reduce(f64::min),
            benign_accuracy_after: Some(record.after.benign_accuracy),
            asr_after: record.after.asr.iter().copied().reduce(f64::max),
            removed: Some(record.removed_indices.len()),
            error: None,
        },
        Err(e) => MitigationRow {
            attack: attack_name,
            original_accuracy: Some(original_accuracy),
            benign_accuracy_before: None,
            asr_before: None,
            benign_accuracy_after: None,
            asr_after: None,
            removed: None,
            error: Some(e.to_string()),
        },
    };
    rows.push(row);
    let csv_path = out_dir.join("table7-mitigation.csv");
    write_csv(&csv_path, &rows)?;
    Ok(csv_path)
}

/// Records one mitigation outcome for reuse by callers that already ran it.
pub fn write_mitigation_record(record: &MitigationRecord, out_dir: &Path) -> Result<()> {
    write_json(&out_dir.join("mitigation.json"), record)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn experiment_names_parse() {
        for (name, expected) in ExperimentName::ALL {
            let parsed: ExperimentName = name.parse().unwrap();
            assert_eq!(parsed, expected);
            assert_eq!(parsed.as_str(), name);
        }
        assert!("table3-unknown".parse::<ExperimentName>().is_err());
    }

    #[test]
    fn prepare_data_respects_the_config() {
        let mut config = RunConfig::default();
        config.data.num_classes = 4;
        config.data.per_class = 20;
        config.data.image_size = 16;
        let splits = prepare_data(&config).unwrap();
        assert_eq!(splits.train.len() + splits.test.len(), 80);
        assert_eq!(splits.train.num_classes, 4);
    }
}
