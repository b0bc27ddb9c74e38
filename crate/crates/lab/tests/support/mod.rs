#![allow(dead_code)]

use std::path::{Path, PathBuf};

use repalign::formats::write_embeddings;
use repalign_core::numerics::{Matrix, Rng};
use serde_json::{json, Value};

/// A scratch directory holding embedding files and a manifest.
pub struct Fixture {
    pub dir: tempfile::TempDir,
}

pub struct ModelFile<'a> {
    pub name: &'a str,
    pub file: &'a str,
    pub sae_k: usize,
    pub spec: Value,
}

impl Fixture {
    pub fn new() -> Self {
        Self { dir: tempfile::tempdir().expect("tempdir") }
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    pub fn embeddings(&self, file: &str, m: &Matrix) -> PathBuf {
        let path = self.path(file);
        write_embeddings(&path, m).expect("write embeddings");
        path
    }

    /// Absolute path of `name` inside the fixture, as a CLI argument.
    pub fn arg(&self, name: &str) -> String {
        self.path(name).to_str().expect("utf-8 temp path").to_string()
    }

    pub fn text(&self, file: &str, contents: &str) -> PathBuf {
        let path = self.path(file);
        std::fs::write(&path, contents).expect("write file");
        path
    }

    pub fn manifest(&self, models: &[ModelFile], extra: Value) -> PathBuf {
        let models: Vec<Value> = models
            .iter()
            .map(|m| json!({"name": m.name, "embedding_path": m.file, "sae_k": m.sae_k, "spec": m.spec}))
            .collect();
        let mut doc = json!({"dataset_name": "fixture", "models": models});
        if let Value::Object(extra) = extra {
            doc.as_object_mut().unwrap().extend(extra);
        }
        self.text("manifest.json", &serde_json::to_string_pretty(&doc).unwrap())
    }
}

/// A plausible spec entry that varies with `i`.
pub fn spec(i: usize) -> Value {
    let modalities = ["llm", "text_emb", "mm_text", "mm_image", "image_foundation"];
    json!({
        "params_count": 10_000_000u64 * (i as u64 + 1) * (i as u64 % 3 + 1),
        "depth": 6 + 2 * (i % 7),
        "width": 256 * (1 + i % 4),
        "text_tokens": if i % 5 == 4 { 0 } else { 1_000_000_000u64 * (i as u64 % 6 + 1) },
        "image_tokens": if i % 5 < 2 { 0 } else { 1_000_000u64 * (i as u64 % 4 + 1) },
        "modality": modalities[i % 5],
        "year": 2019 + (i % 6) as i32,
    })
}

pub fn random_unit_rows(n: usize, d: usize, rng: &mut Rng) -> Matrix {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let v = rng.normal_vec(d);
            let s = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / s).collect()
        })
        .collect();
    Matrix::from_rows(&rows).unwrap()
}

/// Rows of a report CSV, header first.
pub fn read_csv(path: &Path) -> Vec<Vec<String>> {
    let mut reader = csv::ReaderBuilder::new().has_headers(false).from_path(path).expect("open csv");
    reader
        .records()
        .map(|r| r.expect("csv record").iter().map(str::to_string).collect())
        .collect()
}

/// Value of the row whose leading columns equal `key`.
pub fn lookup(rows: &[Vec<String>], key: &[&str]) -> Option<String> {
    rows.iter()
        .find(|r| r.len() > key.len() && r.iter().zip(key).all(|(a, b)| a == b))
        .map(|r| r.last().unwrap().clone())
}
