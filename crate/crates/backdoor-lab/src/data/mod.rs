//! Desk-scale labeled image datasets: generation, splitting, persistence.
//!
//! Everything here is deterministic in its seed arguments and immutable
//! after construction, so datasets can be shared read-only across workers.

mod io;
mod synthetic;

pub use io::{load_dataset, save_dataset, DatasetManifest};
pub use synthetic::generate_synthetic;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Height/width/channel dimensions of one image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl ImageShape {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Self { height, width, channels }
    }

    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// An H×W×C image with float pixels in `[0, 1]`, stored row-major
/// (row, column, channel).
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    shape: ImageShape,
    values: Vec<f32>,
}

impl ImageTensor {
    /// Builds an image, validating dimensions and the `[0, 1]` pixel range.
    pub fn new(shape: ImageShape, values: Vec<f32>) -> Result<Self> {
        if shape.height == 0 || shape.width == 0 || shape.channels == 0 {
            return Err(Error::config("image dimensions must be positive"));
        }
        if values.len() != shape.len() {
            return Err(Error::config(format!(
                "expected {} pixel values, got {}",
                shape.len(),
                values.len()
            )));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::config("pixel values must lie in [0, 1]"));
        }
        Ok(Self { shape, values })
    }

    /// All-zero (black) image.
    pub fn zeros(shape: ImageShape) -> Self {
        Self { shape, values: vec![0.0; shape.len()] }
    }

    /// Constant-valued image; `value` must lie in `[0, 1]`.
    pub fn filled(shape: ImageShape, value: f32) -> Result<Self> {
        Self::new(shape, vec![value; shape.len()])
    }

    pub fn shape(&self) -> ImageShape {
        self.shape
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize, channel: usize) -> f32 {
        self.values[(row * self.shape.width + col) * self.shape.channels + channel]
    }

    pub(crate) fn set(&mut self, row: usize, col: usize, channel: usize, value: f32) {
        self.values[(row * self.shape.width + col) * self.shape.channels + channel] = value;
    }

    /// Builds from raw values without range validation. Dimensions are
    /// still checked. Intended for trusted binary payloads already
    /// produced by this crate.
    pub(crate) fn from_raw(shape: ImageShape, values: Vec<f32>) -> Result<Self> {
        if values.len() != shape.len() {
            return Err(Error::format(format!(
                "payload holds {} values for an image of {}",
                values.len(),
                shape.len()
            )));
        }
        Ok(Self { shape, values })
    }
}

/// One dataset entry. `original_label` is the pre-poisoning ground truth;
/// it equals `label` until a poisoner mutates `label`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledExample {
    pub image: ImageTensor,
    pub label: usize,
    pub original_label: usize,
    pub index: usize,
}

/// An ordered collection of labeled examples over `num_classes` labels.
///
/// Constructors produce contiguous indices `0..n`; transformations such as
/// [`crate::attacks::poison_dataset`] and [`split`] preserve the original
/// indices so that provenance survives the whole pipeline.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub examples: Vec<LabeledExample>,
    pub num_classes: usize,
    pub name: String,
}

impl Dataset {
    /// Validates labels against `num_classes` and uniqueness of indices.
    pub fn new(examples: Vec<LabeledExample>, num_classes: usize, name: String) -> Result<Self> {
        let mut seen = vec![false; examples.len().max(1)];
        for ex in &examples {
            if ex.label >= num_classes || ex.original_label >= num_classes {
                return Err(Error::config(format!(
                    "example {} has label out of range (c = {num_classes})",
                    ex.index
                )));
            }
            if let Some(slot) = seen.get_mut(ex.index) {
                if *slot {
                    return Err(Error::config(format!("duplicate example index {}", ex.index)));
                }
                *slot = true;
            }
        }
        Ok(Self { examples, num_classes, name })
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    /// Shape of the first example; datasets are homogeneous by construction.
    pub fn image_shape(&self) -> Option<ImageShape> {
        self.examples.first().map(|ex| ex.image.shape())
    }

    /// Number of examples currently labeled `label`.
    pub fn class_count(&self, label: usize) -> usize {
        self.examples.iter().filter(|ex| ex.label == label).count()
    }
}

/// A train/test pair produced by [`split`] plus the seed that generated it,
/// which is what the on-disk dataset directory stores.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplits {
    pub train: Dataset,
    pub test: Dataset,
    pub seed: u64,
}

/// Stratified train/test split. Per class, `round(test_fraction * n)`
/// examples go to the test side. Original example indices are preserved,
/// so the union of indices equals the input's indices exactly.
pub fn split(dataset: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::config(format!(
            "test_fraction must lie in (0, 1), got {test_fraction}"
        )));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for label in 0..dataset.num_classes {
        let members: Vec<&LabeledExample> =
            dataset.examples.iter().filter(|ex| ex.label == label).collect();
        if members.is_empty() {
            continue;
        }
        let n_test = ((test_fraction * members.len() as f64).round() as usize)
            .clamp(1, members.len().saturating_sub(1).max(1));
        let mut order: Vec<usize> = (0..members.len()).collect();
        crate::rng::shuffle(&mut order, crate::rng::derive_seed(seed, "split", label as u64));
        for (i, &slot) in order.iter().enumerate() {
            if i < n_test {
                test.push(members[slot].clone());
            } else {
                train.push(members[slot].clone());
            }
        }
    }
    train.sort_by_key(|ex| ex.index);
    test.sort_by_key(|ex| ex.index);
    let train = Dataset { examples: train, num_classes: dataset.num_classes, name: format!("{}-train", dataset.name) };
    let test = Dataset { examples: test, num_classes: dataset.num_classes, name: format!("{}-test", dataset.name) };
    Ok((train, test))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn image_rejects_out_of_range_pixels() {
        let shape = ImageShape::new(2, 2, 3);
        let mut values = vec![0.5; shape.len()];
        values[3] = 1.5;
        assert!(matches!(ImageTensor::new(shape, values), Err(Error::Config(_))));
    }

    #[test]
    fn image_indexing_is_row_major_hwc() {
        let shape = ImageShape::new(2, 3, 3);
        let values: Vec<f32> = (0..shape.len()).map(|i| i as f32 / 100.0).collect();
        let img = ImageTensor::new(shape, values).unwrap();
        // (row 1, col 2, ch 0) = ((1*3)+2)*3 + 0 = 15
        assert_eq!(img.get(1, 2, 0), 0.15);
    }

    #[test]
    fn dataset_rejects_label_out_of_range() {
        let shape = ImageShape::new(2, 2, 3);
        let ex = LabeledExample {
            image: ImageTensor::zeros(shape),
            label: 4,
            original_label: 0,
            index: 0,
        };
        assert!(Dataset::new(vec![ex], 4, "bad".into()).is_err());
    }

    #[test]
    fn split_is_stratified_and_seed_stable() {
        let data = generate_synthetic(10, 100, 32, 7).unwrap();
        let (train, test) = split(&data, 0.2, 3).unwrap();
        assert_eq!(train.len(), 800);
        assert_eq!(test.len(), 200);
        for label in 0..10 {
            assert_eq!(train.class_count(label), 80);
            assert_eq!(test.class_count(label), 20);
        }
        let (train2, test2) = split(&data, 0.2, 3).unwrap();
        assert_eq!(train, train2);
        assert_eq!(test, test2);
    }

    #[test]
    fn split_union_of_indices_is_input() {
        let data = generate_synthetic(10, 100, 16, 7).unwrap();
        let (train, test) = split(&data, 0.2, 3).unwrap();
        let mut indices: Vec<usize> = train
            .examples
            .iter()
            .chain(test.examples.iter())
            .map(|ex| ex.index)
            .collect();
        indices.sort_unstable();
        assert_eq!(indices, (0..1000).collect::<Vec<_>>());
    }

    #[test]
    fn split_rejects_bad_fraction() {
        let data = generate_synthetic(4, 20, 16, 7).unwrap();
        assert!(split(&data, 0.0, 1).is_err());
        assert!(split(&data, 1.0, 1).is_err());
    }
}
