//! On-disk formats: versioned model files, CSV tables and the output manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use adham_core::data::{load_csv, Dataset, FoldSplit, SurvivalRecord};
use adham_core::model::AdhamModel;
use adham_core::refinement::RefinementPlan;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::RunConfig;
use crate::error::{CliError, CliResult};

pub const MODEL_FORMAT: &str = "adham-model";
pub const MODEL_VERSION: u32 = 1;
pub const MODEL_FILE: &str = "model.json";

/// Where a model came from: enough to rebuild its fold split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lineage {
    pub fold: usize,
    pub folds: usize,
    pub split_seed: u64,
    pub train_seed: u64,
    pub data_sha256: String,
    pub best_epoch: Option<usize>,
    /// Hash of the model file this one was derived from.
    pub parent_sha256: Option<String>,
    pub refinement: Option<RefinementPlan>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub lineage: Lineage,
    pub model: AdhamModel,
}

impl ModelFile {
    pub fn new(lineage: Lineage, model: AdhamModel) -> Self {
        Self {
            format: MODEL_FORMAT.into(),
            version: MODEL_VERSION,
            lineage,
            model,
        }
    }
}

/// A model file together with the hash of its bytes.
pub struct LoadedModel {
    pub sha256: String,
    pub file: ModelFile,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

pub fn file_sha256(path: &Path) -> CliResult<String> {
    let bytes = fs::read(path)
        .map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    Ok(sha256_hex(&bytes))
}

pub fn read_model(path: &Path) -> CliResult<LoadedModel> {
    let bytes = fs::read(path)
        .map_err(|e| CliError::Data(format!("cannot read model {}: {e}", path.display())))?;
    let file: ModelFile = serde_json::from_slice(&bytes)
        .map_err(|e| CliError::Data(format!("{} is not a model file: {e}", path.display())))?;
    if file.format != MODEL_FORMAT || file.version != MODEL_VERSION {
        return Err(CliError::Data(format!(
            "{}: unsupported model format {} version {}",
            path.display(),
            file.format,
            file.version
        )));
    }
    file.model.validate()?;
    Ok(LoadedModel {
        sha256: sha256_hex(&bytes),
        file,
    })
}

/// A single model file, or every `fold*/model.json` under a directory.
pub fn read_models(path: &Path) -> CliResult<Vec<LoadedModel>> {
    if path.is_file() {
        return Ok(vec![read_model(path)?]);
    }
    let entries = fs::read_dir(path)
        .map_err(|e| CliError::Data(format!("cannot open model path {}: {e}", path.display())))?;
    let mut files = Vec::new();
    for entry in entries {
        let dir = entry?.path();
        let candidate = dir.join(MODEL_FILE);
        let is_fold = dir
            .file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.starts_with("fold"));
        if is_fold && candidate.is_file() {
            files.push(read_model(&candidate)?);
        }
    }
    if files.is_empty() {
        return Err(CliError::Data(format!("no fold models found under {}", path.display())));
    }
    files.sort_by_key(|m| m.file.lineage.fold);
    Ok(files)
}

/// Loads the raw CSV named by the configuration.
pub fn read_dataset(cfg: &RunConfig) -> CliResult<(Dataset, String)> {
    let path = cfg
        .data
        .as_ref()
        .ok_or_else(|| CliError::Usage("--data is required".into()))?;
    let (time, event) = cfg.outcome_columns()?;
    let data = load_csv(path, time, event)?;
    Ok((data, file_sha256(path)?))
}

/// Columns must match the model's covariates exactly, in order.
pub fn check_features(model: &AdhamModel, data: &Dataset) -> CliResult<()> {
    if model.feature_names == data.feature_names {
        return Ok(());
    }
    let missing: Vec<&str> = model
        .feature_names
        .iter()
        .filter(|n| !data.feature_names.contains(n))
        .map(String::as_str)
        .collect();
    let unexpected: Vec<&str> = data
        .feature_names
        .iter()
        .filter(|n| !model.feature_names.contains(n))
        .map(String::as_str)
        .collect();
    let msg = if missing.is_empty() && unexpected.is_empty() {
        "dataset columns are in a different order than the model's covariates".to_string()
    } else {
        format!(
            "dataset does not match the model: missing columns [{}], unexpected columns [{}]",
            missing.join(", "),
            unexpected.join(", ")
        )
    };
    Err(CliError::Data(msg))
}

/// The raw dataset z-scored with the statistics stored in `model`.
pub fn standardized_for(model: &AdhamModel, raw: &Dataset) -> CliResult<Dataset> {
    check_features(model, raw)?;
    let records = raw
        .records
        .iter()
        .map(|r| SurvivalRecord {
            x: model.stats.apply(&r.x),
            t: r.t,
            event: r.event,
        })
        .collect();
    let mut out = Dataset::new(records, raw.feature_names.clone())?;
    out.standardization = Some(model.stats.clone());
    Ok(out)
}

/// The fold split recorded in a model's lineage.
pub fn lineage_split(lineage: &Lineage, data: &Dataset, data_sha: &str) -> CliResult<FoldSplit> {
    if lineage.data_sha256 != data_sha {
        log::warn!("dataset differs from the one the model was trained on");
    }
    let folds = adham_core::data::split_folds(data.n(), lineage.folds, lineage.split_seed)?;
    folds
        .into_iter()
        .nth(lineage.fold)
        .ok_or_else(|| CliError::Data(format!("fold {} is out of range", lineage.fold)))
}

pub fn na(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

/// Collects written files and records them in `manifest.json`.
pub struct Outputs {
    root: PathBuf,
    written: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub sha256: String,
    pub bytes: u64,
    pub command: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Manifest {
    pub tool_version: String,
    /// Resolved configuration of the most recent command, per command.
    pub configs: BTreeMap<String, BTreeMap<String, String>>,
    /// Output paths relative to the output directory.
    pub files: BTreeMap<String, ManifestEntry>,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl Outputs {
    pub fn create(root: &Path) -> CliResult<Self> {
        fs::create_dir_all(root).map_err(|e| {
            CliError::Data(format!("cannot create output directory {}: {e}", root.display()))
        })?;
        Ok(Self {
            root: root.to_path_buf(),
            written: Vec::new(),
        })
    }

    /// Writes `bytes` to `relative`, creating parent directories.
    pub fn write(&mut self, relative: impl AsRef<Path>, bytes: &[u8]) -> CliResult<PathBuf> {
        let path = self.root.join(relative.as_ref());
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes)
            .map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))?;
        self.written.push(relative.as_ref().to_path_buf());
        Ok(path)
    }

    pub fn write_json<T: Serialize>(&mut self, relative: impl AsRef<Path>, value: &T) -> CliResult<PathBuf> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.write(relative, &bytes)
    }

    pub fn write_csv(
        &mut self,
        relative: impl AsRef<Path>,
        header: &[String],
        rows: &[Vec<String>],
    ) -> CliResult<PathBuf> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(header)?;
        for row in rows {
            w.write_record(row)?;
        }
        let bytes = w.into_inner().map_err(|e| CliError::Data(e.to_string()))?;
        self.write(relative, &bytes)
    }

    /// Records this command's files in the manifest, keeping entries from
    /// earlier commands that wrote to the same directory.
    pub fn finish(self, command: &str, cfg: &RunConfig) -> CliResult<()> {
        let path = self.root.join(MANIFEST_FILE);
        let mut manifest: Manifest = match fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes).unwrap_or_default(),
            Err(_) => Manifest::default(),
        };
        manifest.tool_version = env!("CARGO_PKG_VERSION").to_string();
        manifest.configs.insert(command.to_string(), cfg.to_map());
        for rel in &self.written {
            let bytes = fs::read(self.root.join(rel))?;
            let key = rel.to_string_lossy().replace('\\', "/");
            manifest.files.insert(
                key,
                ManifestEntry {
                    sha256: sha256_hex(&bytes),
                    bytes: bytes.len() as u64,
                    command: command.to_string(),
                },
            );
        }
        let mut bytes = serde_json::to_vec_pretty(&manifest)?;
        bytes.push(b'\n');
        fs::write(&path, bytes)?;
        Ok(())
    }
}
