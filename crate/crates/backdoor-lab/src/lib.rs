//! A laboratory for poisoning-based backdoor attacks on small image
//! classifiers and for detecting them by confidence-guided distribution
//! transfer.
//!
//! The crate covers the full loop:
//!
//! 1. [`data`] generates reproducible synthetic image datasets.
//! 2. [`attacks`] plants triggers (corner patches, sinusoidal signals,
//!    blended patterns) into training data under several attack variants.
//! 3. [`model`] trains small CNNs and measures benign accuracy, attack
//!    success rate, and prediction confidence.
//! 4. [`inspector`] decides whether a trained model carries a backdoor:
//!    it learns a patch on high-confidence samples per label, measures how
//!    well that patch transfers to low-confidence samples, and flags labels
//!    whose transfer ratio is an anomaly under MAD scoring.
//! 5. [`mitigation`] removes suspected poison guided by the learned patch
//!    and retrains.
//! 6. [`baseline`] is a direct data-inspection comparator (KL divergence
//!    between mean penultimate representations).
//!
//! The `backdoor-lab` CLI in this workspace drives the same modules from
//! config files; see the book under `book/` for a guided tour.

pub mod attacks;
pub mod baseline;
pub mod config;
pub mod data;
mod error;
pub mod experiments;
pub mod inspector;
pub mod mitigation;
pub mod model;
pub mod plot;
pub mod report;
pub mod rng;

mod book;

pub use error::{Error, Result};

pub use data::{Dataset, DatasetSplits, ImageShape, ImageTensor, LabeledExample};
pub use model::{Classifier, ClassifierSpec, TrainConfig, TrainedClassifier};
