//! On-disk formats: tensors (text and binary), matrices (binary), fitted
//! models (directory of factor blocks plus a JSON sidecar), and jackknife
//! results bundles (manifest + standard-error matrices + stored submodels).
//!
//! The text tensor format is line-oriented: the first line is
//! `N I_1 I_2 ... I_N`, followed by whitespace-separated values in
//! generalized column-major order. Values are written with Rust's shortest
//! round-trip `f64` formatting, so text files reload bit-exactly. The binary
//! formats carry an 8-byte magic (`DTNSR001` for tensors, `DMATR001` for
//! matrices), little-endian `u64` shape words, then the raw `f64` payload.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{CpError, Result};
use crate::flops::FlopCounter;
use crate::jackknife::{
    AlignmentDiagnostics, JackknifeMethod, JackknifeOutput, SubmodelSet, UncertaintyResult,
};
use crate::matrix::Matrix;
use crate::model::{CpModel, FitConfig};
use crate::tensor::DenseTensor;

pub const TENSOR_MAGIC: &[u8; 8] = b"DTNSR001";
pub const MATRIX_MAGIC: &[u8; 8] = b"DMATR001";

fn parse_err(path: &Path, what: impl std::fmt::Display) -> CpError {
    CpError::Parse(format!("{}: {what}", path.display()))
}

// ---------------------------------------------------------------------------
// Tensor text format

pub fn write_tensor_text(path: &Path, t: &DenseTensor) -> Result<()> {
    let mut out = String::new();
    out.push_str(&t.ndims().to_string());
    for &d in t.dims() {
        out.push(' ');
        out.push_str(&d.to_string());
    }
    out.push('\n');
    for chunk in t.data().chunks(8) {
        let line: Vec<String> = chunk.iter().map(|v| v.to_string()).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn read_tensor_text(path: &Path) -> Result<DenseTensor> {
    let s = fs::read_to_string(path)?;
    let header_end = s
        .find('\n')
        .ok_or_else(|| parse_err(path, "missing value lines after the header"))?;
    let mut header = s[..header_end].split_whitespace();
    let ndims: usize = header
        .next()
        .ok_or_else(|| parse_err(path, "empty header"))?
        .parse()
        .map_err(|e| parse_err(path, format!("bad mode count: {e}")))?;
    let dims: Vec<usize> = header
        .map(|tok| {
            tok.parse()
                .map_err(|e| parse_err(path, format!("bad dimension {tok:?}: {e}")))
        })
        .collect::<Result<_>>()?;
    if dims.len() != ndims {
        return Err(parse_err(
            path,
            format!(
                "header declares {ndims} modes but lists {} sizes",
                dims.len()
            ),
        ));
    }
    let expected: usize = dims.iter().product();
    let data: Vec<f64> = s[header_end..]
        .split_whitespace()
        .map(|tok| {
            tok.parse()
                .map_err(|e| parse_err(path, format!("bad value {tok:?}: {e}")))
        })
        .collect::<Result<_>>()?;
    if data.len() != expected {
        return Err(parse_err(
            path,
            format!(
                "expected {expected} values for dims {dims:?}, found {}",
                data.len()
            ),
        ));
    }
    DenseTensor::new(dims, data)
}

// ---------------------------------------------------------------------------
// Binary helpers

fn push_u64(buf: &mut Vec<u8>, v: u64) {
    buf.extend_from_slice(&v.to_le_bytes());
}

fn push_f64s(buf: &mut Vec<u8>, vals: &[f64]) {
    buf.reserve(vals.len() * 8);
    for v in vals {
        buf.extend_from_slice(&v.to_le_bytes());
    }
}

struct BinReader<'a> {
    path: &'a Path,
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> BinReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(parse_err(self.path, "file truncated"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn magic(&mut self, expected: &[u8; 8]) -> Result<()> {
        let got = self.take(8)?;
        if got != expected {
            return Err(parse_err(
                self.path,
                format!(
                    "bad magic {:?}, expected {:?}",
                    String::from_utf8_lossy(got),
                    String::from_utf8_lossy(expected)
                ),
            ));
        }
        Ok(())
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64s(&mut self, count: usize) -> Result<Vec<f64>> {
        let raw = self.take(count * 8)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(parse_err(
                self.path,
                format!("{} trailing bytes", self.bytes.len() - self.pos),
            ));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// Tensor binary format

pub fn write_tensor_binary(path: &Path, t: &DenseTensor) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + 8 * (t.ndims() + t.element_count()));
    buf.extend_from_slice(TENSOR_MAGIC);
    push_u64(&mut buf, t.ndims() as u64);
    for &d in t.dims() {
        push_u64(&mut buf, d as u64);
    }
    push_f64s(&mut buf, t.data());
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_tensor_binary(path: &Path) -> Result<DenseTensor> {
    let bytes = fs::read(path)?;
    let mut r = BinReader {
        path,
        bytes: &bytes,
        pos: 0,
    };
    r.magic(TENSOR_MAGIC)?;
    let ndims = r.u64()? as usize;
    let mut dims = Vec::with_capacity(ndims);
    for _ in 0..ndims {
        dims.push(r.u64()? as usize);
    }
    let count = dims.iter().product();
    let data = r.f64s(count)?;
    r.finish()?;
    DenseTensor::new(dims, data)
}

/// Writes binary when the extension is `bin` or `dtnsr`, text otherwise.
pub fn write_tensor(path: &Path, t: &DenseTensor) -> Result<()> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("bin") | Some("dtnsr") => write_tensor_binary(path, t),
        _ => write_tensor_text(path, t),
    }
}

/// Reads either format, deciding by the leading magic bytes.
pub fn read_tensor(path: &Path) -> Result<DenseTensor> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(TENSOR_MAGIC) {
        let mut r = BinReader {
            path,
            bytes: &bytes,
            pos: 0,
        };
        r.magic(TENSOR_MAGIC)?;
        let ndims = r.u64()? as usize;
        let mut dims = Vec::with_capacity(ndims);
        for _ in 0..ndims {
            dims.push(r.u64()? as usize);
        }
        let count = dims.iter().product();
        let data = r.f64s(count)?;
        r.finish()?;
        DenseTensor::new(dims, data)
    } else {
        read_tensor_text(path)
    }
}

// ---------------------------------------------------------------------------
// Matrix binary format

pub fn write_matrix(path: &Path, m: &Matrix) -> Result<()> {
    let mut buf = Vec::with_capacity(24 + 8 * m.data().len());
    buf.extend_from_slice(MATRIX_MAGIC);
    push_u64(&mut buf, m.rows() as u64);
    push_u64(&mut buf, m.cols() as u64);
    push_f64s(&mut buf, m.data());
    fs::write(path, buf)?;
    Ok(())
}

pub fn read_matrix(path: &Path) -> Result<Matrix> {
    let bytes = fs::read(path)?;
    let mut r = BinReader {
        path,
        bytes: &bytes,
        pos: 0,
    };
    r.magic(MATRIX_MAGIC)?;
    let rows = r.u64()? as usize;
    let cols = r.u64()? as usize;
    let data = r.f64s(rows * cols)?;
    r.finish()?;
    Matrix::from_vec(rows, cols, data)
}

// ---------------------------------------------------------------------------
// Model directories

#[derive(Serialize, Deserialize)]
struct ModelMeta {
    dims: Vec<usize>,
    rank: usize,
    errors: Vec<f64>,
    iterations: usize,
}

fn factor_path(dir: &Path, n: usize) -> PathBuf {
    dir.join(format!("factor_{n}.mat"))
}

/// Writes a model as `factor_<n>.mat` blocks plus a `model.json` sidecar
/// recording `{dims, rank, errors, iterations}`.
pub fn save_model(dir: &Path, model: &CpModel) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (n, f) in model.factors().iter().enumerate() {
        write_matrix(&factor_path(dir, n), f)?;
    }
    let meta = ModelMeta {
        dims: model.dims(),
        rank: model.rank(),
        errors: model.errors.clone(),
        iterations: model.iterations,
    };
    fs::write(
        dir.join("model.json"),
        serde_json::to_string_pretty(&meta).map_err(|e| CpError::Parse(e.to_string()))?,
    )?;
    Ok(())
}

pub fn load_model(dir: &Path) -> Result<CpModel> {
    let meta_path = dir.join("model.json");
    let meta: ModelMeta = serde_json::from_str(&fs::read_to_string(&meta_path)?)
        .map_err(|e| parse_err(&meta_path, e))?;
    let mut factors = Vec::with_capacity(meta.dims.len());
    for n in 0..meta.dims.len() {
        factors.push(read_matrix(&factor_path(dir, n))?);
    }
    let mut model = CpModel::from_factors(factors)?;
    if model.dims() != meta.dims || model.rank() != meta.rank {
        return Err(parse_err(
            &meta_path,
            format!(
                "sidecar says dims {:?} rank {}, factors give dims {:?} rank {}",
                meta.dims,
                meta.rank,
                model.dims(),
                model.rank()
            ),
        ));
    }
    model.errors = meta.errors;
    model.iterations = meta.iterations;
    Ok(model)
}

// ---------------------------------------------------------------------------
// Jackknife results bundle

#[derive(Serialize, Deserialize)]
struct ManifestSubmodel {
    group: Vec<usize>,
    status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    iterations: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    final_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    message: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    alignment: Option<AlignmentDiagnostics>,
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    sampled_mode: usize,
    d: usize,
    method: String,
    fit: FitConfig,
    convention: String,
    flops: FlopCounter,
    submodels: Vec<ManifestSubmodel>,
}

/// A loaded results bundle: everything needed to inspect a run or recompute
/// its standard errors from the stored submodels.
pub struct ResultsBundle {
    pub method: JackknifeMethod,
    pub fit: FitConfig,
    pub overall: CpModel,
    pub output: JackknifeOutput,
}

fn submodel_dir(dir: &Path, p: usize) -> PathBuf {
    dir.join(format!("submodel_{p}"))
}

fn stddev_path(dir: &Path, n: usize) -> PathBuf {
    dir.join(format!("stddev_mode_{n}.mat"))
}

/// Writes a results bundle: `manifest.json`, the overall model under
/// `overall/`, every fitted submodel under `submodel_<p>/`, and the
/// standard-error matrices as `stddev_mode_<n>.mat`. Stored submodels are
/// post-alignment, so reloading and re-running the standard-error estimator
/// reproduces the stored matrices exactly.
pub fn save_results(
    dir: &Path,
    overall: &CpModel,
    method: JackknifeMethod,
    fit: &FitConfig,
    out: &JackknifeOutput,
) -> Result<()> {
    fs::create_dir_all(dir)?;
    save_model(&dir.join("overall"), overall)?;
    let set = &out.submodels;
    let mut entries = Vec::with_capacity(set.n_groups());
    for (p, (group, sub)) in set.groups.iter().zip(&set.submodels).enumerate() {
        let entry = match sub {
            Ok(m) => {
                save_model(&submodel_dir(dir, p), m)?;
                ManifestSubmodel {
                    group: group.clone(),
                    status: "ok".into(),
                    iterations: Some(m.iterations),
                    final_error: m.final_error(),
                    message: None,
                    alignment: out.uncertainty.alignment[p].clone(),
                }
            }
            Err(msg) => ManifestSubmodel {
                group: group.clone(),
                status: "failed".into(),
                iterations: None,
                final_error: None,
                message: Some(msg.clone()),
                alignment: None,
            },
        };
        entries.push(entry);
    }
    for (n, s) in out.uncertainty.stddev.iter().enumerate() {
        if let Some(s) = s {
            write_matrix(&stddev_path(dir, n), s)?;
        }
    }
    let manifest = Manifest {
        sampled_mode: set.sampled_mode,
        d: set.d,
        method: method.name().to_string(),
        fit: fit.clone(),
        convention: out.uncertainty.convention.clone(),
        flops: out.flops,
        submodels: entries,
    };
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).map_err(|e| CpError::Parse(e.to_string()))?,
    )?;
    Ok(())
}

pub fn load_results(dir: &Path) -> Result<ResultsBundle> {
    let manifest_path = dir.join("manifest.json");
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(&manifest_path)?)
        .map_err(|e| parse_err(&manifest_path, e))?;
    let overall = load_model(&dir.join("overall"))?;
    let mut groups = Vec::with_capacity(manifest.submodels.len());
    let mut submodels = Vec::with_capacity(manifest.submodels.len());
    let mut alignment = Vec::with_capacity(manifest.submodels.len());
    for (p, entry) in manifest.submodels.iter().enumerate() {
        groups.push(entry.group.clone());
        alignment.push(entry.alignment.clone());
        if entry.status == "ok" {
            submodels.push(Ok(load_model(&submodel_dir(dir, p))?));
        } else {
            submodels.push(Err(entry.message.clone().unwrap_or_default()));
        }
    }
    let mut stddev = Vec::with_capacity(overall.ndims());
    for n in 0..overall.ndims() {
        if n == manifest.sampled_mode {
            stddev.push(None);
        } else {
            stddev.push(Some(read_matrix(&stddev_path(dir, n))?));
        }
    }
    let output = JackknifeOutput {
        submodels: SubmodelSet {
            sampled_mode: manifest.sampled_mode,
            d: manifest.d,
            groups,
            submodels,
        },
        uncertainty: UncertaintyResult {
            sampled_mode: manifest.sampled_mode,
            stddev,
            alignment,
            convention: manifest.convention,
        },
        flops: manifest.flops,
    };
    Ok(ResultsBundle {
        method: manifest.method.parse()?,
        fit: manifest.fit,
        overall,
        output,
    })
}
