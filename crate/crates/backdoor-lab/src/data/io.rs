//! On-disk dataset format: `manifest.json` plus one little-endian float32
//! payload per split (`train.bin`, `test.bin`). Round trips are bit-exact
//! and the manifest checksum is verified on load.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{Dataset, DatasetSplits, ImageShape, ImageTensor, LabeledExample};
use crate::error::{Error, Result};
use crate::report::write_atomic;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Sidecar describing the binary payloads of a dataset directory.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub num_classes: usize,
    /// Example count per split, keyed by split name.
    pub counts: BTreeMap<String, usize>,
    pub image: ImageShape,
    pub seed: u64,
    /// SHA-256 of each split's binary payload, keyed by split name.
    pub checksums: BTreeMap<String, String>,
}

/// Writes `manifest.json`, `train.bin`, and `test.bin` under `dir`.
pub fn save_dataset(splits: &DatasetSplits, dir: &Path) -> Result<DatasetManifest> {
    let shape = splits
        .train
        .image_shape()
        .or_else(|| splits.test.image_shape())
        .ok_or_else(|| Error::config("cannot save an empty dataset"))?;
    fs::create_dir_all(dir)?;

    let mut counts = BTreeMap::new();
    let mut checksums = BTreeMap::new();
    for (split_name, dataset) in [("train", &splits.train), ("test", &splits.test)] {
        let payload = encode_split(dataset, shape)?;
        checksums.insert(split_name.to_string(), sha256_hex(&payload));
        counts.insert(split_name.to_string(), dataset.len());
        write_atomic(&dir.join(format!("{split_name}.bin")), &payload)?;
    }

    let manifest = DatasetManifest {
        name: splits.train.name.trim_end_matches("-train").to_string(),
        num_classes: splits.train.num_classes,
        counts,
        image: shape,
        seed: splits.seed,
        checksums,
    };
    write_atomic(&dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)?.as_bytes())?;
    Ok(manifest)
}

/// Loads a dataset directory, verifying payload checksums and counts.
pub fn load_dataset(dir: &Path) -> Result<DatasetSplits> {
    let manifest_path = dir.join(MANIFEST_FILE);
    if !manifest_path.exists() {
        return Err(Error::format(format!("missing {} in {}", MANIFEST_FILE, dir.display())));
    }
    let manifest: DatasetManifest = serde_json::from_str(&fs::read_to_string(manifest_path)?)?;

    let mut datasets = BTreeMap::new();
    for split_name in ["train", "test"] {
        let payload = fs::read(dir.join(format!("{split_name}.bin")))?;
        let expected = manifest
            .checksums
            .get(split_name)
            .ok_or_else(|| Error::format(format!("manifest lacks checksum for {split_name}")))?;
        let actual = sha256_hex(&payload);
        if &actual != expected {
            return Err(Error::corruption(format!(
                "{split_name}.bin checksum mismatch: manifest {expected}, payload {actual}"
            )));
        }
        let dataset = decode_split(
            &payload,
            manifest.image,
            manifest.num_classes,
            format!("{}-{split_name}", manifest.name),
        )?;
        let expected_count = manifest.counts.get(split_name).copied().unwrap_or(0);
        if dataset.len() != expected_count {
            return Err(Error::format(format!(
                "{split_name}.bin holds {} examples, manifest says {expected_count}",
                dataset.len()
            )));
        }
        datasets.insert(split_name, dataset);
    }
    Ok(DatasetSplits {
        train: datasets.remove("train").expect("train decoded"),
        test: datasets.remove("test").expect("test decoded"),
        seed: manifest.seed,
    })
}

fn encode_split(dataset: &Dataset, shape: ImageShape) -> Result<Vec<u8>> {
    let record = 12 + shape.len() * 4;
    let mut payload = Vec::with_capacity(dataset.len() * record);
    for ex in &dataset.examples {
        if ex.image.shape() != shape {
            return Err(Error::config(format!(
                "example {} has shape {:?}, dataset shape is {:?}",
                ex.index,
                ex.image.shape(),
                shape
            )));
        }
        payload.extend_from_slice(&(ex.label as u32).to_le_bytes());
        payload.extend_from_slice(&(ex.original_label as u32).to_le_bytes());
        payload.extend_from_slice(&(ex.index as u32).to_le_bytes());
        for v in ex.image.values() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(payload)
}

fn decode_split(
    payload: &[u8],
    shape: ImageShape,
    num_classes: usize,
    name: String,
) -> Result<Dataset> {
    let record = 12 + shape.len() * 4;
    if payload.len() % record != 0 {
        return Err(Error::format(format!(
            "payload length {} is not a multiple of the {record}-byte record",
            payload.len()
        )));
    }
    let mut examples = Vec::with_capacity(payload.len() / record);
    for chunk in payload.chunks_exact(record) {
        let label = u32::from_le_bytes(chunk[0..4].try_into().unwrap()) as usize;
        let original_label = u32::from_le_bytes(chunk[4..8].try_into().unwrap()) as usize;
        let index = u32::from_le_bytes(chunk[8..12].try_into().unwrap()) as usize;
        let values: Vec<f32> = chunk[12..]
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
            .collect();
        examples.push(LabeledExample {
            image: ImageTensor::from_raw(shape, values)?,
            label,
            original_label,
            index,
        });
    }
    Dataset::new(examples, num_classes, name)
}

fn sha256_hex(payload: &[u8]) -> String {
    hex::encode(Sha256::digest(payload))
}
