//! Binary and text formats: `EMB1` embedding matrices (with a headerless
//! CSV fallback), `SAE1` autoencoder artifacts, frequency tables and row
//! subset lists.
//!
//! Binary layouts are little-endian throughout. `EMB1` is the 4-byte magic,
//! `n` and `d` as `u32`, then `n·d` `f32` values row-major. `SAE1` is the
//! magic, `d_model`, `d_sparse`, `k` as `u32`, then encoder weight
//! (`d_sparse × d_model`), encoder bias, decoder weight (`d_model × d_sparse`)
//! and decoder bias, all `f32` row-major.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use repalign_core::numerics::{norm, unit_normalize_rows, Matrix, NumericsError};
use repalign_core::sae::{SaeError, SaeParams};

pub const EMB_MAGIC: [u8; 4] = *b"EMB1";
pub const SAE_MAGIC: [u8; 4] = *b"SAE1";

/// Rows whose stored norm differs from 1 by more than this are counted.
pub const NORM_WARN_TOL: f64 = 1e-3;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("{path}: bad magic {found:?}, expected {expected:?}")]
    BadMagic { path: PathBuf, found: Vec<u8>, expected: &'static str },
    #[error("{path}: truncated payload, expected {expected} bytes, found {found}")]
    TruncatedPayload { path: PathBuf, expected: usize, found: usize },
    #[error("{path}: non-finite value at row {row}, column {col}")]
    NonFinite { path: PathBuf, row: usize, col: usize },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{path}: {source}")]
    Numerics { path: PathBuf, source: NumericsError },
    #[error("{path}: {source}")]
    Sae { path: PathBuf, source: SaeError },
    #[error("{path}: dimension {value} does not fit the 32-bit header")]
    TooLarge { path: PathBuf, value: usize },
}

pub type Result<T> = std::result::Result<T, FormatError>;

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> FormatError + '_ {
    move |source| FormatError::Io { path: path.to_path_buf(), source }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> FormatError {
    FormatError::Parse { path: path.to_path_buf(), line, message: message.into() }
}

/// An embedding matrix after boundary normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedEmbeddings {
    pub matrix: Matrix,
    /// Rows whose norm on disk deviated from 1 by more than [`NORM_WARN_TOL`].
    pub renormalized_rows: usize,
}

/// Reads an embedding file and unit-normalizes its rows.
///
/// Files ending in `.csv` are read as headerless numeric rows, everything
/// else as `EMB1`.
pub fn load_embeddings(path: &Path) -> Result<LoadedEmbeddings> {
    let raw = read_embeddings_raw(path)?;
    let renormalized_rows = raw
        .row_iter()
        .filter(|r| (norm(r) - 1.0).abs() > NORM_WARN_TOL)
        .count();
    let matrix = unit_normalize_rows(&raw).map_err(|source| FormatError::Numerics { path: path.to_path_buf(), source })?;
    Ok(LoadedEmbeddings { matrix, renormalized_rows })
}

/// Reads an embedding file without normalizing.
pub fn read_embeddings_raw(path: &Path) -> Result<Matrix> {
    if is_csv(path) {
        read_embeddings_csv(path)
    } else {
        let bytes = fs::read(path).map_err(io_err(path))?;
        decode_emb1(path, &bytes)
    }
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

fn check_magic(path: &Path, bytes: &[u8], magic: [u8; 4], name: &'static str) -> Result<()> {
    if bytes.len() < 4 || bytes[..4] != magic {
        return Err(FormatError::BadMagic {
            path: path.to_path_buf(),
            found: bytes[..bytes.len().min(4)].to_vec(),
            expected: name,
        });
    }
    Ok(())
}

fn read_u32s<const N: usize>(path: &Path, bytes: &[u8]) -> Result<[usize; N]> {
    let header = 4 + 4 * N;
    if bytes.len() < header {
        return Err(FormatError::TruncatedPayload { path: path.to_path_buf(), expected: header, found: bytes.len() });
    }
    let mut out = [0usize; N];
    for (i, o) in out.iter_mut().enumerate() {
        let at = 4 + 4 * i;
        *o = u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4-byte slice")) as usize;
    }
    Ok(out)
}

/// Decodes `count` little-endian `f32` values, rejecting NaN and infinities.
/// `width` is used only to report row/column positions.
fn read_f32s(path: &Path, bytes: &[u8], count: usize, width: usize) -> Result<Vec<f64>> {
    bytes[..4 * count]
        .chunks_exact(4)
        .enumerate()
        .map(|(i, c)| {
            let v = f32::from_le_bytes(c.try_into().expect("4-byte chunk"));
            if v.is_finite() {
                Ok(v as f64)
            } else {
                let w = width.max(1);
                Err(FormatError::NonFinite { path: path.to_path_buf(), row: i / w, col: i % w })
            }
        })
        .collect()
}

fn expect_len(path: &Path, bytes: &[u8], expected: usize) -> Result<()> {
    if bytes.len() != expected {
        return Err(FormatError::TruncatedPayload { path: path.to_path_buf(), expected, found: bytes.len() });
    }
    Ok(())
}

pub fn decode_emb1(path: &Path, bytes: &[u8]) -> Result<Matrix> {
    check_magic(path, bytes, EMB_MAGIC, "EMB1")?;
    let [n, d] = read_u32s::<2>(path, bytes)?;
    let payload = &bytes[12..];
    expect_len(path, payload, n * d * 4)?;
    let data = read_f32s(path, payload, n * d, d)?;
    Ok(Matrix::from_vec(n, d, data).expect("length checked"))
}

fn header_u32(path: &Path, value: usize) -> Result<[u8; 4]> {
    u32::try_from(value)
        .map(u32::to_le_bytes)
        .map_err(|_| FormatError::TooLarge { path: path.to_path_buf(), value })
}

fn push_f32s(out: &mut Vec<u8>, values: &[f64]) {
    for &v in values {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
}

pub fn encode_emb1(path: &Path, m: &Matrix) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(12 + 4 * m.rows() * m.cols());
    out.extend_from_slice(&EMB_MAGIC);
    out.extend_from_slice(&header_u32(path, m.rows())?);
    out.extend_from_slice(&header_u32(path, m.cols())?);
    push_f32s(&mut out, m.as_slice());
    Ok(out)
}

/// Writes `m` as `EMB1`, or as CSV when the path ends in `.csv`.
pub fn write_embeddings(path: &Path, m: &Matrix) -> Result<()> {
    if is_csv(path) {
        let mut w = csv::WriterBuilder::new().has_headers(false).from_path(path).map_err(|e| csv_io(path, e))?;
        for r in m.row_iter() {
            w.write_record(r.iter().map(|v| (*v as f32).to_string())).map_err(|e| csv_io(path, e))?;
        }
        w.flush().map_err(io_err(path))
    } else {
        fs::write(path, encode_emb1(path, m)?).map_err(io_err(path))
    }
}

fn csv_io(path: &Path, e: csv::Error) -> FormatError {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(source) => FormatError::Io { path: path.to_path_buf(), source },
        other => parse_err(path, line, format!("{other:?}")),
    }
}

fn read_embeddings_csv(path: &Path) -> Result<Matrix> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_io(path, e))?;
    let mut data = Vec::new();
    let mut width = None;
    let mut rows = 0;
    for record in reader.records() {
        let record = record.map_err(|e| csv_io(path, e))?;
        let line = record.position().map_or(rows + 1, |p| p.line() as usize);
        if width.is_some_and(|w| w != record.len()) {
            return Err(parse_err(
                path,
                line,
                format!("expected {} fields, found {}", width.unwrap_or(0), record.len()),
            ));
        }
        width = Some(record.len());
        for (col, field) in record.iter().enumerate() {
            let v: f32 = field
                .parse()
                .map_err(|_| parse_err(path, line, format!("field {} is not a number: {field:?}", col + 1)))?;
            if !v.is_finite() {
                return Err(FormatError::NonFinite { path: path.to_path_buf(), row: rows, col });
            }
            data.push(v as f64);
        }
        rows += 1;
    }
    Ok(Matrix::from_vec(rows, width.unwrap_or(0), data).expect("rectangular by construction"))
}

/// A trained autoencoder together with the `k` it was trained for.
#[derive(Debug, Clone, PartialEq)]
pub struct SaeArtifact {
    pub params: SaeParams,
    pub k: usize,
}

pub fn encode_sae1(path: &Path, artifact: &SaeArtifact) -> Result<Vec<u8>> {
    let p = &artifact.params;
    let (d_model, d_sparse) = (p.d_model(), p.d_sparse());
    let mut out = Vec::with_capacity(16 + 4 * (2 * d_model * d_sparse + d_model + d_sparse));
    out.extend_from_slice(&SAE_MAGIC);
    for v in [d_model, d_sparse, artifact.k] {
        out.extend_from_slice(&header_u32(path, v)?);
    }
    push_f32s(&mut out, p.encoder_weight().as_slice());
    push_f32s(&mut out, p.encoder_bias());
    push_f32s(&mut out, p.decoder_weight().as_slice());
    push_f32s(&mut out, p.decoder_bias());
    Ok(out)
}

pub fn decode_sae1(path: &Path, bytes: &[u8]) -> Result<SaeArtifact> {
    check_magic(path, bytes, SAE_MAGIC, "SAE1")?;
    let [d_model, d_sparse, k] = read_u32s::<3>(path, bytes)?;
    let payload = &bytes[16..];
    let sizes = [d_sparse * d_model, d_sparse, d_model * d_sparse, d_model];
    let total: usize = sizes.iter().sum();
    expect_len(path, payload, 4 * total)?;
    let mut offset = 0;
    let mut parts = Vec::with_capacity(4);
    for (size, width) in sizes.into_iter().zip([d_model, d_sparse, d_sparse, d_model]) {
        parts.push(read_f32s(path, &payload[4 * offset..], size, width)?);
        offset += size;
    }
    let decoder_bias = parts.pop().expect("four parts");
    let decoder = Matrix::from_vec(d_model, d_sparse, parts.pop().expect("four parts")).expect("sized");
    let encoder_bias = parts.pop().expect("four parts");
    let encoder = Matrix::from_vec(d_sparse, d_model, parts.pop().expect("four parts")).expect("sized");
    let sae = |source| FormatError::Sae { path: path.to_path_buf(), source };
    let params = SaeParams::from_parts(encoder, encoder_bias, decoder, decoder_bias).map_err(sae)?;
    if k == 0 || k > d_sparse {
        return Err(sae(SaeError::InvalidConfig(format!("k = {k} outside 1..={d_sparse}"))));
    }
    Ok(SaeArtifact { params, k })
}

pub fn write_sae(path: &Path, artifact: &SaeArtifact) -> Result<()> {
    fs::write(path, encode_sae1(path, artifact)?).map_err(io_err(path))
}

pub fn read_sae(path: &Path) -> Result<SaeArtifact> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    decode_sae1(path, &bytes)
}

/// Token frequencies in embedding row order.
#[derive(Debug, Clone, PartialEq)]
pub struct FrequencyTable {
    pub tokens: Vec<String>,
    pub frequencies: Vec<f64>,
}

/// Reads `token<TAB>relative_frequency` lines. Frequencies must be positive
/// and the rows sorted by descending frequency.
pub fn read_frequency_table(path: &Path) -> Result<FrequencyTable> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let mut table = FrequencyTable { tokens: Vec::new(), frequencies: Vec::new() };
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let (token, value) = line
            .rsplit_once('\t')
            .ok_or_else(|| parse_err(path, line_no, "expected token<TAB>frequency"))?;
        let f: f64 = value
            .trim()
            .parse()
            .map_err(|_| parse_err(path, line_no, format!("frequency {value:?} is not a number")))?;
        if !(f.is_finite() && f > 0.0) {
            return Err(parse_err(path, line_no, format!("frequency {f} is not strictly positive")));
        }
        if table.frequencies.last().is_some_and(|&prev| f > prev) {
            return Err(parse_err(path, line_no, "rows are not sorted by descending frequency"));
        }
        table.tokens.push(token.to_string());
        table.frequencies.push(f);
    }
    Ok(table)
}

/// Reads one zero-based row index per line.
pub fn read_row_subset(path: &Path) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            l.trim()
                .parse()
                .map_err(|_| parse_err(path, i + 1, format!("row index {:?} is not a non-negative integer", l.trim())))
        })
        .collect()
}
