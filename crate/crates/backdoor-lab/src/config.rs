//! The single structured run configuration consumed by the CLI and the
//! experiment runners. Every section has workable defaults; sweep runners
//! copy the config and mutate one key per cell. Each output artifact echoes
//! the effective config so a run is reproducible from its artifacts alone.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::attacks::{
    make_badnet_trigger, make_blended_trigger, make_sig_trigger, AttackType, PatternValue,
    Placement, PoisonSpec, Trigger,
};
use crate::data::ImageShape;
use crate::error::{Error, Result};
use crate::inspector::InspectionConfig;
use crate::mitigation::CleanseMode;
use crate::model::{Architecture, ClassifierSpec, TrainConfig};

/// Synthetic dataset parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    pub num_classes: usize,
    pub per_class: usize,
    pub image_size: usize,
    pub seed: u64,
    pub test_fraction: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { num_classes: 10, per_class: 250, image_size: 32, seed: 7, test_fraction: 0.2 }
    }
}

impl DataConfig {
    pub fn image_shape(&self) -> ImageShape {
        ImageShape::new(self.image_size, self.image_size, 3)
    }
}

/// Trigger descriptor; materialized against an image shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TriggerConfig {
    Badnet { size: usize, placement: Placement, value: PatternValue },
    Sig { delta: f32, freq: usize },
    Blended { pattern_seed: u64, alpha: f32 },
}

impl TriggerConfig {
    pub fn materialize(&self, shape: ImageShape) -> Result<Trigger> {
        match *self {
            TriggerConfig::Badnet { size, placement, value } => {
                make_badnet_trigger(shape, size, placement, value)
            }
            TriggerConfig::Sig { delta, freq } => make_sig_trigger(shape, delta, freq),
            TriggerConfig::Blended { pattern_seed, alpha } => {
                make_blended_trigger(shape, pattern_seed, alpha)
            }
        }
    }

    pub fn default_badnet(size: usize) -> Self {
        TriggerConfig::Badnet {
            size,
            placement: Placement::LowerRight,
            value: PatternValue::White,
        }
    }
}

/// Scheduler parameters ("raise the rate until the attack sticks").
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScheduleConfig {
    pub asr_target: f64,
    pub rate_step: f64,
    pub rate_cap: f64,
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self { asr_target: 0.95, rate_step: 0.01, rate_cap: 0.10 }
    }
}

/// Attack section: what to plant and how hard.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AttackConfig {
    #[serde(rename = "type")]
    pub attack_type: AttackType,
    pub target: usize,
    /// MTMT target triple; ignored by other attacks.
    pub targets: Vec<usize>,
    pub rate: f64,
    pub seed: u64,
    /// Trigger for single-trigger attacks.
    pub trigger: TriggerConfig,
    /// Trigger triple for MTOT/MTMT; defaults to white squares at three
    /// corners.
    pub triggers: Option<Vec<TriggerConfig>>,
    pub source_labels: Option<Vec<usize>>,
    pub schedule: Option<ScheduleConfig>,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            attack_type: AttackType::Badnet,
            target: 0,
            targets: vec![0, 1, 2],
            rate: 0.03,
            seed: 11,
            trigger: TriggerConfig::default_badnet(4),
            triggers: None,
            source_labels: None,
            schedule: Some(ScheduleConfig::default()),
        }
    }
}

impl AttackConfig {
    fn corner_triggers(&self, size: usize) -> Vec<TriggerConfig> {
        [Placement::LowerRight, Placement::LowerLeft, Placement::UpperLeft]
            .into_iter()
            .map(|placement| TriggerConfig::Badnet {
                size,
                placement,
                value: PatternValue::White,
            })
            .collect()
    }

    /// Builds the materialized poison spec for a given image shape.
    pub fn poison_spec(&self, shape: ImageShape, num_classes: usize) -> Result<PoisonSpec> {
        let multi = matches!(self.attack_type, AttackType::Mtot | AttackType::Mtmt);
        let pairs: Vec<(Trigger, usize)> = if multi {
            let configs = match &self.triggers {
                Some(list) => list.clone(),
                None => {
                    let size = match self.trigger {
                        TriggerConfig::Badnet { size, .. } => size,
                        _ => 4,
                    };
                    self.corner_triggers(size)
                }
            };
            if configs.len() != 3 {
                return Err(Error::spec("MTOT/MTMT need exactly three triggers"));
            }
            let targets: Vec<usize> = match self.attack_type {
                AttackType::Mtot => vec![self.target; 3],
                _ => {
                    if self.targets.len() != 3 {
                        return Err(Error::spec("MTMT needs exactly three targets"));
                    }
                    self.targets.clone()
                }
            };
            configs
                .iter()
                .zip(targets)
                .map(|(cfg, target)| Ok((cfg.materialize(shape)?, target)))
                .collect::<Result<_>>()?
        } else {
            vec![(self.trigger.materialize(shape)?, self.target)]
        };

        let source_labels: Option<BTreeSet<usize>> = match self.attack_type {
            AttackType::SigCleanLabel => Some([self.target].into()),
            _ => self.source_labels.as_ref().map(|v| v.iter().copied().collect()),
        };

        let spec = PoisonSpec {
            attack_type: self.attack_type,
            pairs,
            source_labels,
            rate: self.rate,
            seed: self.seed,
        };
        spec.validate(num_classes)?;
        Ok(spec)
    }
}

/// Training section: architecture plus hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    pub architecture: Architecture,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f32,
    pub optimizer: String,
    pub seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self {
            architecture: Architecture::Cnn2_1,
            epochs: 10,
            batch_size: 32,
            learning_rate: 2e-3,
            optimizer: "adam".into(),
            seed: 3,
        }
    }
}

impl TrainSection {
    pub fn classifier_spec(&self, shape: ImageShape, num_classes: usize) -> Result<ClassifierSpec> {
        ClassifierSpec::new(self.architecture, shape, num_classes)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            optimizer: self.optimizer.clone(),
            seed: self.seed,
        }
    }
}

/// Mitigation section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MitigationConfig {
    pub mode: CleanseMode,
}

impl Default for MitigationConfig {
    fn default() -> Self {
        Self { mode: CleanseMode::OriginalLabel }
    }
}

/// Baseline section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BaselineConfig {
    pub k: usize,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self { k: 50 }
    }
}

/// The whole run configuration.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub data: DataConfig,
    pub attack: AttackConfig,
    pub train: TrainSection,
    pub inspect: InspectionConfig,
    pub mitigation: MitigationConfig,
    pub baseline: BaselineConfig,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}
