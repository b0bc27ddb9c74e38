use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::str::FromStr;

use super::{AnalysisError, Result};
use crate::numerics::{solve_symmetric, Matrix, NumericsError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Modality {
    Llm,
    TextEmb,
    MmText,
    MmImage,
    ImageFoundation,
}

impl Modality {
    pub fn name(self) -> &'static str {
        match self {
            Modality::Llm => "llm",
            Modality::TextEmb => "text_emb",
            Modality::MmText => "mm_text",
            Modality::MmImage => "mm_image",
            Modality::ImageFoundation => "image_foundation",
        }
    }

    /// Whether the model embeds captions rather than images.
    pub fn represents_text(self) -> bool {
        matches!(self, Modality::Llm | Modality::TextEmb | Modality::MmText)
    }
}

impl FromStr for Modality {
    type Err = AnalysisError;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "llm" => Modality::Llm,
            "text_emb" => Modality::TextEmb,
            "mm_text" => Modality::MmText,
            "mm_image" => Modality::MmImage,
            "image_foundation" => Modality::ImageFoundation,
            other => return Err(AnalysisError::Invalid(alloc::format!("unknown modality '{other}'"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub name: String,
    pub params_count: u64,
    pub depth: u64,
    pub width: u64,
    pub text_tokens: u64,
    pub image_tokens: u64,
    pub modality: Modality,
    pub year: i32,
}

pub const SPEC_FEATURE_NAMES: [&str; 15] = [
    "log_params_min",
    "log_params_max",
    "depth_min",
    "depth_max",
    "log_width_min",
    "log_width_max",
    "log_images_min",
    "log_images_max",
    "log_tokens_min",
    "log_tokens_max",
    "year_min",
    "year_max",
    "text_text",
    "text_img",
    "img_img",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SpecFeatureMatrix {
    /// Model indices `(i, j)` with `i < j`, in lexicographic order.
    pub pair_index: Vec<(usize, usize)>,
    pub pair_names: Vec<(String, String)>,
    /// Centered, unit-norm columns.
    pub features: Matrix,
    /// Per-pair values before centering.
    pub raw_features: Matrix,
    pub feature_names: Vec<String>,
    /// Columns that are constant over all pairs; they stay zero after centering.
    pub constant_columns: Vec<usize>,
}

fn per_model(spec: &ModelSpec) -> Result<[f64; 6]> {
    if spec.params_count == 0 || spec.width == 0 {
        return Err(AnalysisError::Invalid(alloc::format!(
            "model '{}' needs positive params_count and width",
            spec.name
        )));
    }
    Ok([
        libm::log10(spec.params_count as f64),
        spec.depth as f64,
        libm::log10(spec.width as f64),
        libm::log10(spec.image_tokens as f64 + 1.0),
        libm::log10(spec.text_tokens as f64 + 1.0),
        spec.year as f64,
    ])
}

/// Pairwise spec features over all unordered model pairs.
pub fn build_spec_features(specs: &[ModelSpec]) -> Result<SpecFeatureMatrix> {
    if specs.len() < 2 {
        return Err(AnalysisError::TooFewModels(specs.len()));
    }
    let base = specs.iter().map(per_model).collect::<Result<Vec<_>>>()?;
    let mut pair_index = Vec::new();
    let mut data = Vec::new();
    for i in 0..specs.len() {
        for j in i + 1..specs.len() {
            pair_index.push((i, j));
            for (a, b) in base[i].iter().zip(&base[j]) {
                data.push(a.min(*b));
                data.push(a.max(*b));
            }
            let texts = [specs[i].modality, specs[j].modality]
                .iter()
                .filter(|m| m.represents_text())
                .count();
            data.push((texts == 2) as u8 as f64);
            data.push((texts == 1) as u8 as f64);
            data.push((texts == 0) as u8 as f64);
        }
    }
    let p = pair_index.len();
    let raw_features = Matrix::from_vec(p, SPEC_FEATURE_NAMES.len(), data)?;

    let mut features = raw_features.center_columns();
    let mut constant_columns = Vec::new();
    for c in 0..features.cols() {
        let norm = libm::sqrt((0..p).map(|r| features.get(r, c) * features.get(r, c)).sum());
        let scale = (0..p).fold(0.0f64, |m, r| m.max(raw_features.get(r, c).abs()));
        if norm <= 1e-12 * scale.max(1.0) {
            constant_columns.push(c);
            for r in 0..p {
                features.set(r, c, 0.0);
            }
        } else {
            for r in 0..p {
                features.set(r, c, features.get(r, c) / norm);
            }
        }
    }
    Ok(SpecFeatureMatrix {
        pair_names: pair_index
            .iter()
            .map(|&(i, j)| (specs[i].name.clone(), specs[j].name.clone()))
            .collect(),
        pair_index,
        features,
        raw_features,
        feature_names: SPEC_FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        constant_columns,
    })
}

/// Ridge coefficients `(XᵀX + λI)⁻¹ Xᵀy`.
pub fn ridge_fit(x: &Matrix, y: &[f64], lambda: f64) -> Result<Vec<f64>> {
    if x.rows() == 0 {
        return Err(AnalysisError::TooFewRows { needed: 1, got: 0 });
    }
    if y.len() != x.rows() {
        return Err(AnalysisError::LengthMismatch { left: x.rows(), right: y.len() });
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(AnalysisError::Invalid("lambda must be finite and non-negative".into()));
    }
    let mut gram = x.t_matmul(x)?;
    for i in 0..gram.cols() {
        gram.set(i, i, gram.get(i, i) + lambda);
    }
    let rhs: Vec<f64> = (0..x.cols())
        .map(|c| (0..x.rows()).map(|r| x.get(r, c) * y[r]).sum())
        .collect();
    solve_symmetric(&gram, &rhs).map_err(|e| match e {
        NumericsError::Singular => AnalysisError::Singular,
        other => other.into(),
    })
}
