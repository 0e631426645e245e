//! Durable model registry.
//!
//! Each model lives in its own directory under the registry root:
//! `<root>/<id>/record.json` (human-readable metadata and train report) next
//! to `<root>/<id>/model.blob` (the self-contained parameter blob). Writes go
//! through a temp file and rename, the record file is written last so its
//! presence marks a complete entry, and overwriting moves the previous pair
//! into `archive/NNN/` instead of destroying it.

use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::models::blob::ModelBlob;
use crate::models::TrainReport;
use crate::query::{feature_spec_to_json, filter_spec_to_json};

const RECORD_FILE: &str = "record.json";
const BLOB_FILE: &str = "model.blob";

/// A registered model: identity and provenance around the parameter blob.
/// The blob carries everything inference needs (class map, filter and
/// feature specs, layer ids, window size, parameters), so a record loaded
/// from the registry is usable with the training data gone.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelRecord {
    pub id: String,
    /// RFC 3339 creation time, set by the training pipeline.
    pub created_at: String,
    pub report: TrainReport,
    pub blob: ModelBlob,
}

impl ModelRecord {
    pub fn architecture(&self) -> &'static str {
        self.blob.model.architecture_name()
    }
}

/// Mirror of `record.json`. Blob metadata is duplicated here so the entry is
/// inspectable without a blob decoder; the blob stays authoritative and `get`
/// cross-checks the two.
#[derive(Serialize, Deserialize)]
struct RecordFile {
    id: String,
    architecture: String,
    created_at: String,
    window_size: usize,
    class_map: Vec<String>,
    layer_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    ndvi_bands: Option<(usize, usize)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    feature_spec: Option<Value>,
    filter_spec: Value,
    blob_file: String,
    report: TrainReport,
}

pub struct ModelRegistry {
    root: PathBuf,
    /// Writers to the same id queue up here; readers never lock.
    write_locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl ModelRegistry {
    /// Open a registry rooted at `root`, creating the directory if needed.
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root)?;
        Ok(Self {
            root,
            write_locks: Mutex::new(HashMap::new()),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    /// Persist a record. Refuses an existing id unless `overwrite` is set,
    /// in which case the current pair is archived first.
    pub fn put(&self, record: &ModelRecord, overwrite: bool) -> Result<String> {
        validate_id(&record.id)?;
        let lock = self.id_lock(&record.id);
        let _guard = lock.lock().unwrap();

        let dir = self.model_dir(&record.id);
        if dir.join(RECORD_FILE).is_file() {
            if !overwrite {
                return Err(Error::ModelExists(record.id.clone()));
            }
            archive_current(&dir)?;
        }
        fs::create_dir_all(&dir)?;

        let file = RecordFile {
            id: record.id.clone(),
            architecture: record.architecture().to_string(),
            created_at: record.created_at.clone(),
            window_size: record.blob.window_size,
            class_map: record.blob.class_map.clone(),
            layer_ids: record.blob.layer_ids.clone(),
            ndvi_bands: record.blob.ndvi_bands,
            feature_spec: record.blob.feature_spec.as_ref().map(feature_spec_to_json),
            filter_spec: filter_spec_to_json(&record.blob.filter_spec),
            blob_file: BLOB_FILE.to_string(),
            report: record.report.clone(),
        };
        write_atomic(&dir.join(BLOB_FILE), &record.blob.encode())?;
        write_atomic(&dir.join(RECORD_FILE), &serde_json::to_vec_pretty(&file)?)?;
        Ok(record.id.clone())
    }

    pub fn get(&self, id: &str) -> Result<ModelRecord> {
        let file = self.read_record_file(id)?;
        if file.blob_file.contains(['/', '\\']) {
            return Err(Error::RegistryCorrupt(format!(
                "{id}: blob reference {:?} escapes the model directory",
                file.blob_file
            )));
        }
        let blob_path = self.model_dir(id).join(&file.blob_file);
        let bytes = fs::read(&blob_path).map_err(|e| match e.kind() {
            io::ErrorKind::NotFound => {
                Error::RegistryCorrupt(format!("{id}: blob file {} missing", file.blob_file))
            }
            _ => Error::Io(e),
        })?;
        let blob = ModelBlob::decode(&bytes)?;

        let mismatch = |field: &str| {
            Err(Error::RegistryCorrupt(format!(
                "{id}: record and blob disagree on {field}"
            )))
        };
        if file.id != id {
            return Err(Error::RegistryCorrupt(format!(
                "directory {id} holds a record for id {}",
                file.id
            )));
        }
        if file.architecture != blob.model.architecture_name() {
            return mismatch("architecture");
        }
        if file.class_map != blob.class_map {
            return mismatch("class map");
        }
        if file.window_size != blob.window_size {
            return mismatch("window size");
        }
        Ok(ModelRecord {
            id: file.id,
            created_at: file.created_at,
            report: file.report,
            blob,
        })
    }

    /// The stored blob, byte for byte.
    pub fn blob_bytes(&self, id: &str) -> Result<Vec<u8>> {
        let file = self.read_record_file(id)?;
        if file.blob_file.contains(['/', '\\']) {
            return Err(Error::RegistryCorrupt(format!(
                "{id}: blob reference {:?} escapes the model directory",
                file.blob_file
            )));
        }
        Ok(fs::read(self.model_dir(id).join(&file.blob_file))?)
    }

    /// All registered ids, sorted.
    pub fn list(&self) -> Result<Vec<String>> {
        let mut ids = Vec::new();
        for entry in fs::read_dir(&self.root)? {
            let entry = entry?;
            if entry.path().join(RECORD_FILE).is_file() {
                if let Some(name) = entry.file_name().to_str() {
                    ids.push(name.to_string());
                }
            }
        }
        ids.sort();
        Ok(ids)
    }

    fn read_record_file(&self, id: &str) -> Result<RecordFile> {
        validate_id(id)?;
        let path = self.model_dir(id).join(RECORD_FILE);
        if !path.is_file() {
            return Err(Error::UnknownModel(id.to_string()));
        }
        Ok(serde_json::from_slice(&fs::read(&path)?)?)
    }

    fn model_dir(&self, id: &str) -> PathBuf {
        self.root.join(id)
    }

    fn id_lock(&self, id: &str) -> Arc<Mutex<()>> {
        let mut map = self.write_locks.lock().unwrap();
        map.entry(id.to_string())
            .or_insert_with(|| Arc::new(Mutex::new(())))
            .clone()
    }
}

/// Ids double as directory names, so keep them filesystem-safe.
fn validate_id(id: &str) -> Result<()> {
    let ok = !id.is_empty()
        && id.len() <= 128
        && !id.starts_with('.')
        && id
            .bytes()
            .all(|b| b.is_ascii_alphanumeric() || matches!(b, b'_' | b'-' | b'.'));
    if ok {
        Ok(())
    } else {
        Err(Error::BadModelId(id.to_string()))
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Move the current record/blob pair into the next `archive/NNN/` slot.
fn archive_current(dir: &Path) -> Result<()> {
    let archive_root = dir.join("archive");
    fs::create_dir_all(&archive_root)?;
    let next = fs::read_dir(&archive_root)?
        .filter_map(|e| {
            let name = e.ok()?.file_name();
            name.to_str()?.parse::<u32>().ok()
        })
        .max()
        .unwrap_or(0)
        + 1;
    let slot = archive_root.join(format!("{next:03}"));
    fs::create_dir(&slot)?;
    for name in [RECORD_FILE, BLOB_FILE] {
        let from = dir.join(name);
        if from.is_file() {
            fs::rename(&from, slot.join(name))?;
        }
    }
    Ok(())
}
