//! Deterministic classifier stubs for tests and the book examples.
//!
//! All stubs are piecewise-constant in their input, so their honest input
//! gradient is zero everywhere.

use std::collections::HashMap;

use crate::data::{ImageShape, ImageTensor};
use crate::error::{Error, Result};
use crate::model::Classifier;

const CONFIDENT_LOGIT: f32 = 12.0;

fn zero_grads(images: &[&ImageTensor]) -> Vec<Vec<f32>> {
    images.iter().map(|img| vec![0.0; img.shape().len()]).collect()
}

/// Always predicts the same label, with high confidence.
#[derive(Debug, Clone)]
pub struct ConstantClassifier {
    label: usize,
    num_classes: usize,
    shape: ImageShape,
}

impl ConstantClassifier {
    pub fn new(label: usize, num_classes: usize, shape: ImageShape) -> Self {
        assert!(label < num_classes);
        Self { label, num_classes, shape }
    }
}

impl Classifier for ConstantClassifier {
    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn input_shape(&self) -> ImageShape {
        self.shape
    }

    fn logits(&self, _image: &ImageTensor) -> Result<Vec<f32>> {
        let mut logits = vec![0.0; self.num_classes];
        logits[self.label] = CONFIDENT_LOGIT;
        Ok(logits)
    }

    fn input_gradients_batch(
        &self,
        images: &[&ImageTensor],
        _dlogits: &[Vec<f32>],
    ) -> Result<Vec<Vec<f32>>> {
        Ok(zero_grads(images))
    }

    fn penultimate_batch(&self, _images: &[&ImageTensor]) -> Result<Vec<Vec<f32>>> {
        Err(Error::config("constant stub has no penultimate layer"))
    }
}

/// Predicts the label it memorized for each exact image; uniform logits for
/// anything unseen.
#[derive(Debug, Clone)]
pub struct MemorizerClassifier {
    memory: HashMap<Vec<u8>, usize>,
    num_classes: usize,
    shape: ImageShape,
}

impl MemorizerClassifier {
    pub fn from_dataset(dataset: &crate::data::Dataset) -> Self {
        let shape = dataset.image_shape().expect("non-empty dataset");
        let memory = dataset
            .examples
            .iter()
            .map(|ex| (image_key(&ex.image), ex.label))
            .collect();
        Self { memory, num_classes: dataset.num_classes, shape }
    }
}

fn image_key(image: &ImageTensor) -> Vec<u8> {
    image.values().iter().flat_map(|v| v.to_le_bytes()).collect()
}

impl Classifier for MemorizerClassifier {
    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn input_shape(&self) -> ImageShape {
        self.shape
    }

    fn logits(&self, image: &ImageTensor) -> Result<Vec<f32>> {
        let mut logits = vec![0.0; self.num_classes];
        if let Some(&label) = self.memory.get(&image_key(image)) {
            logits[label] = CONFIDENT_LOGIT;
        }
        Ok(logits)
    }

    fn input_gradients_batch(
        &self,
        images: &[&ImageTensor],
        _dlogits: &[Vec<f32>],
    ) -> Result<Vec<Vec<f32>>> {
        Ok(zero_grads(images))
    }

    fn penultimate_batch(&self, _images: &[&ImageTensor]) -> Result<Vec<Vec<f32>>> {
        Err(Error::config("memorizer stub has no penultimate layer"))
    }
}

/// Predicts a fixed label whose confidence is read from pixel (0, 0, 0):
/// the model assigns that pixel value as the probability of `label` and
/// spreads the rest uniformly. Useful for scripting exact confidence
/// orderings in sampling tests.
#[derive(Debug, Clone)]
pub struct PixelConfidenceClassifier {
    label: usize,
    num_classes: usize,
    shape: ImageShape,
}

impl PixelConfidenceClassifier {
    pub fn new(label: usize, num_classes: usize, shape: ImageShape) -> Self {
        assert!(label < num_classes && num_classes >= 2);
        Self { label, num_classes, shape }
    }
}

impl Classifier for PixelConfidenceClassifier {
    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn input_shape(&self) -> ImageShape {
        self.shape
    }

    fn logits(&self, image: &ImageTensor) -> Result<Vec<f32>> {
        let p = image.get(0, 0, 0).clamp(1e-4, 1.0 - 1e-4);
        let rest = (1.0 - p) / (self.num_classes - 1) as f32;
        Ok((0..self.num_classes)
            .map(|i| if i == self.label { p.ln() } else { rest.ln() })
            .collect())
    }

    fn input_gradients_batch(
        &self,
        images: &[&ImageTensor],
        _dlogits: &[Vec<f32>],
    ) -> Result<Vec<Vec<f32>>> {
        Ok(zero_grads(images))
    }

    fn penultimate_batch(&self, _images: &[&ImageTensor]) -> Result<Vec<Vec<f32>>> {
        Err(Error::config("pixel-confidence stub has no penultimate layer"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::layers::softmax;

    #[test]
    fn pixel_confidence_reproduces_the_scripted_probability() {
        let shape = ImageShape::new(2, 2, 3);
        let stub = PixelConfidenceClassifier::new(1, 4, shape);
        let mut values = vec![0.0; shape.len()];
        values[0] = 0.85;
        let image = ImageTensor::new(shape, values).unwrap();
        let probs = softmax(&stub.logits(&image).unwrap());
        assert!((probs[1] - 0.85).abs() < 1e-5);
        assert_eq!(stub.predicted_label(&image).unwrap(), 1);
    }
}
