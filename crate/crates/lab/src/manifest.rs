use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use repalign_core::analysis::{Modality, ModelSpec};

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}:{column}: {message}")]
    Json { path: PathBuf, line: usize, column: usize, message: String },
    #[error("{path}: duplicate model name '{name}'")]
    DuplicateName { path: PathBuf, name: String },
    #[error("{path}: model '{model}' references missing file {file}")]
    MissingFile { path: PathBuf, model: String, file: PathBuf },
    #[error("{path}: model '{model}': {message}")]
    BadSpec { path: PathBuf, model: String, message: String },
    #[error("{path}: manifest lists no models")]
    Empty { path: PathBuf },
}

/// Architecture and training-data description of one model, as written in
/// the manifest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecEntry {
    pub params_count: u64,
    pub depth: u64,
    pub width: u64,
    pub text_tokens: u64,
    pub image_tokens: u64,
    /// One of `llm`, `text_emb`, `mm_text`, `mm_image`, `image_foundation`.
    pub modality: String,
    pub year: i32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEntry {
    pub name: String,
    pub embedding_path: PathBuf,
    pub sae_k: usize,
    /// Trained `SAE1` artifact; when absent, `--sae-dir/<name>.sae` is used.
    #[serde(default)]
    pub sae_path: Option<PathBuf>,
    pub spec: SpecEntry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub dataset_name: String,
    pub models: Vec<ModelEntry>,
    #[serde(default)]
    pub frequency_table_path: Option<PathBuf>,
    #[serde(default)]
    pub row_subset_path: Option<PathBuf>,
}

impl Manifest {
    /// Parses and validates a manifest. Relative paths are resolved against
    /// the manifest's directory.
    pub fn load(path: &Path) -> Result<Self, ManifestError> {
        let text = fs::read_to_string(path).map_err(|source| ManifestError::Io { path: path.into(), source })?;
        let mut manifest: Manifest = serde_json::from_str(&text).map_err(|e| ManifestError::Json {
            path: path.into(),
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        manifest.resolve(base);
        manifest.validate(path)?;
        Ok(manifest)
    }

    fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        for m in &mut self.models {
            fix(&mut m.embedding_path);
            if let Some(p) = m.sae_path.as_mut() {
                fix(p);
            }
        }
        if let Some(p) = self.frequency_table_path.as_mut() {
            fix(p);
        }
        if let Some(p) = self.row_subset_path.as_mut() {
            fix(p);
        }
    }

    fn validate(&self, path: &Path) -> Result<(), ManifestError> {
        if self.models.is_empty() {
            return Err(ManifestError::Empty { path: path.into() });
        }
        let mut names = BTreeSet::new();
        let missing = |model: &str, file: &Path| ManifestError::MissingFile {
            path: path.into(),
            model: model.into(),
            file: file.into(),
        };
        for m in &self.models {
            if !names.insert(m.name.as_str()) {
                return Err(ManifestError::DuplicateName { path: path.into(), name: m.name.clone() });
            }
            if !m.embedding_path.is_file() {
                return Err(missing(&m.name, &m.embedding_path));
            }
            if let Some(p) = &m.sae_path {
                if !p.is_file() {
                    return Err(missing(&m.name, p));
                }
            }
            if m.sae_k == 0 {
                return Err(ManifestError::BadSpec {
                    path: path.into(),
                    model: m.name.clone(),
                    message: "sae_k must be at least 1".into(),
                });
            }
            m.model_spec().map_err(|message| ManifestError::BadSpec {
                path: path.into(),
                model: m.name.clone(),
                message,
            })?;
        }
        for p in [&self.frequency_table_path, &self.row_subset_path].into_iter().flatten() {
            if !p.is_file() {
                return Err(missing("<dataset>", p));
            }
        }
        Ok(())
    }

    pub fn model_specs(&self) -> Vec<ModelSpec> {
        self.models
            .iter()
            .map(|m| m.model_spec().expect("validated on load"))
            .collect()
    }
}

impl ModelEntry {
    pub fn model_spec(&self) -> Result<ModelSpec, String> {
        let modality: Modality = self.spec.modality.parse().map_err(|e| format!("{e}"))?;
        Ok(ModelSpec {
            name: self.name.clone(),
            params_count: self.spec.params_count,
            depth: self.spec.depth,
            width: self.spec.width,
            text_tokens: self.spec.text_tokens,
            image_tokens: self.spec.image_tokens,
            modality,
            year: self.spec.year,
        })
    }
}
