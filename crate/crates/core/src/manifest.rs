//! Run manifests and dataset statistics: the machine-readable accounting of
//! what a pipeline run read, emitted, and dropped.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::io::FileDigest;

pub const MANIFEST_SCHEMA_VERSION: u32 = 1;
pub const RECORD_SCHEMA_VERSION: u32 = 1;

/// `{num_images, num_samples}` accounting for one emitted sample set.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SetCounts {
    pub num_images: u64,
    pub num_samples: u64,
}

/// One output file listed in a manifest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ManifestFile {
    pub path: String,
    pub sha256: String,
    pub records: u64,
    pub schema_version: u32,
}

impl From<FileDigest> for ManifestFile {
    fn from(d: FileDigest) -> Self {
        ManifestFile {
            path: d.path,
            sha256: d.sha256,
            records: d.records,
            schema_version: RECORD_SCHEMA_VERSION,
        }
    }
}

/// The record written after every forge run: effective configuration,
/// input/output accounting, drop reasons, and a digest of every emitted
/// file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub tool_version: String,
    pub command: String,
    pub config_hash: String,
    pub effective_config: serde_json::Value,
    pub started_at: String,
    pub finished_at: String,
    pub input_counts: BTreeMap<String, u64>,
    pub per_source_counts: BTreeMap<String, u64>,
    pub output_counts: BTreeMap<String, SetCounts>,
    pub drop_counts: BTreeMap<String, BTreeMap<String, u64>>,
    pub files: Vec<ManifestFile>,
    pub notes: Vec<String>,
}

impl RunManifest {
    pub fn new(command: &str, effective_config: serde_json::Value) -> Self {
        RunManifest {
            schema_version: MANIFEST_SCHEMA_VERSION,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config_hash: config_hash(&effective_config),
            effective_config,
            started_at: now_rfc3339(),
            finished_at: String::new(),
            input_counts: BTreeMap::new(),
            per_source_counts: BTreeMap::new(),
            output_counts: BTreeMap::new(),
            drop_counts: BTreeMap::new(),
            files: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn finish(&mut self) {
        self.finished_at = now_rfc3339();
    }
}

pub fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

/// Hash of the effective configuration. `serde_json::Value` objects keep
/// sorted keys, so the serialization is canonical.
pub fn config_hash(config: &serde_json::Value) -> String {
    let body = serde_json::to_string(config).expect("config serialization cannot fail");
    let mut hasher = Sha256::new();
    hasher.update(body.as_bytes());
    hex::encode(&hasher.finalize()[..16])
}

/// Counting accumulator for one sample set.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct DatasetStats {
    pub samples: u64,
    pub unique_images: u64,
    pub unique_captions: u64,
    pub per_app: BTreeMap<String, u64>,
}

impl DatasetStats {
    /// One pass over `(app_id, image_path, caption)` rows.
    pub fn compute<'a>(rows: impl IntoIterator<Item = (&'a str, &'a str, &'a str)>) -> Self {
        let mut images = std::collections::BTreeSet::new();
        let mut captions = std::collections::BTreeSet::new();
        let mut per_app: BTreeMap<String, u64> = BTreeMap::new();
        let mut samples = 0u64;
        for (app, image, caption) in rows {
            samples += 1;
            images.insert(image.to_string());
            captions.insert(caption.to_string());
            *per_app.entry(app.to_string()).or_insert(0) += 1;
        }
        DatasetStats {
            samples,
            unique_images: images.len() as u64,
            unique_captions: captions.len() as u64,
            per_app,
        }
    }

    pub fn set_counts(&self) -> SetCounts {
        SetCounts {
            num_images: self.unique_images,
            num_samples: self.samples,
        }
    }
}
