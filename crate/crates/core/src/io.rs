//! JSONL and atomic file-writing helpers shared by the pipelines, plus the
//! screenshot decode cache.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {detail}")]
    Record {
        path: PathBuf,
        line: usize,
        detail: String,
    },
    #[error("failed to decode image {path}: {detail}")]
    ImageDecode { path: PathBuf, detail: String },
}

/// Digest and record count of a written output file, as listed in run
/// manifests.
#[derive(Debug, Clone, Serialize)]
pub struct FileDigest {
    pub path: String,
    pub sha256: String,
    pub records: u64,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Write one JSON record per line to `path` atomically (temp file in the same
/// directory, then rename). An interrupted run never leaves a partial file at
/// the final path.
pub fn write_jsonl_atomic<T: Serialize>(path: &Path, items: &[T]) -> Result<FileDigest, IoError> {
    write_atomic(path, |w| {
        let mut hasher = Sha256::new();
        for item in items {
            let line = serde_json::to_string(item).expect("record serialization cannot fail");
            hasher.update(line.as_bytes());
            hasher.update(b"\n");
            writeln!(w, "{line}")?;
        }
        Ok((hasher, items.len() as u64))
    })
}

/// Atomically write a single JSON document (pretty-printed, trailing newline).
pub fn write_json_atomic<T: Serialize>(path: &Path, value: &T) -> Result<FileDigest, IoError> {
    write_atomic(path, |w| {
        let body = serde_json::to_string_pretty(value).expect("serialization cannot fail");
        let mut hasher = Sha256::new();
        hasher.update(body.as_bytes());
        hasher.update(b"\n");
        writeln!(w, "{body}")?;
        Ok((hasher, 1))
    })
}

fn write_atomic(
    path: &Path,
    body: impl FnOnce(&mut dyn Write) -> std::io::Result<(Sha256, u64)>,
) -> Result<FileDigest, IoError> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir).map_err(io_err(path))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err(path))?;
    let (hasher, records) = body(tmp.as_file_mut()).map_err(io_err(path))?;
    tmp.as_file_mut().flush().map_err(io_err(path))?;
    tmp.persist(path).map_err(|e| IoError::Io {
        path: path.to_path_buf(),
        source: e.error,
    })?;
    Ok(FileDigest {
        path: path
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| path.display().to_string()),
        sha256: hex::encode(hasher.finalize()),
        records,
    })
}

/// Read a JSONL file into typed records, reporting the file and line of any
/// malformed record.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, IoError> {
    let file = File::open(path).map_err(io_err(path))?;
    let reader = BufReader::new(file);
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: T = serde_json::from_str(&line).map_err(|e| IoError::Record {
            path: path.to_path_buf(),
            line: idx + 1,
            detail: e.to_string(),
        })?;
        out.push(rec);
    }
    Ok(out)
}

/// Decoded-screenshot cache keyed by resolved path. Shared read-mostly across
/// pipeline workers; each image is decoded once.
pub struct ImageStore {
    root: PathBuf,
    cache: Mutex<HashMap<PathBuf, Arc<image::RgbaImage>>>,
}

impl ImageStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        ImageStore {
            root: root.into(),
            cache: Mutex::new(HashMap::new()),
        }
    }

    /// Resolve `image_path` (relative paths are joined to the store root) and
    /// return the decoded RGBA image.
    pub fn get(&self, image_path: &str) -> Result<Arc<image::RgbaImage>, IoError> {
        let rel = Path::new(image_path);
        let resolved = if rel.is_absolute() {
            rel.to_path_buf()
        } else {
            self.root.join(rel)
        };
        if let Some(img) = self.cache.lock().unwrap().get(&resolved) {
            return Ok(Arc::clone(img));
        }
        let img = image::open(&resolved)
            .map_err(|e| IoError::ImageDecode {
                path: resolved.clone(),
                detail: e.to_string(),
            })?
            .to_rgba8();
        let img = Arc::new(img);
        self.cache
            .lock()
            .unwrap()
            .insert(resolved, Arc::clone(&img));
        Ok(img)
    }
}
