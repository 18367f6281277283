//! Binary container for shape models.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! magic   8 bytes  "SFMODEL1"
//! kind    u8       1 = PCA model, 2 = GP deformation model
//! PCA:    u64 point_count, u64 components,
//!         mean [3M f64], basis [3M x d f64 row-major],
//!         eigenvalues [d f64], noise_sigma2 f64
//! GP:     u64 point_count, u64 rank,
//!         reference [3M f64], mean_deformation [3M f64],
//!         eigenvalues [r f64], eigenfields [3M x r f64 row-major],
//!         gaussian_sigma f64, gaussian_amplitude f64
//! ```
//!
//! Writers also emit a human-readable JSON sidecar (`<path>.json`) with
//! the model kind, dimensions, and kernel hyperparameters. Readers ignore
//! the sidecar; the binary file is self-contained and fully re-validated
//! on load (including basis orthonormality), so a corrupted or hostile
//! file is rejected rather than producing a silently broken model.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::IoError;
use crate::completion::{GpShapeModel, PcaShapeModel};
use crate::geometry::PointCloud;

pub const MODEL_MAGIC: &[u8; 8] = b"SFMODEL1";

const KIND_PCA: u8 = 1;
const KIND_GP: u8 = 2;

/// A shape model as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub enum ShapeModelFile {
    Pca(PcaShapeModel),
    Gp(GpShapeModel),
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    kind: String,
    point_count: usize,
    rank: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    noise_sigma2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gaussian_sigma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    gaussian_amplitude: Option<f64>,
}

/// Serializes a model to bytes.
pub fn model_to_bytes(model: &ShapeModelFile) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MODEL_MAGIC);
    match model {
        ShapeModelFile::Pca(m) => {
            out.push(KIND_PCA);
            push_u64(&mut out, m.point_count() as u64);
            push_u64(&mut out, m.components() as u64);
            push_vector(&mut out, m.mean());
            push_matrix(&mut out, m.basis());
            push_vector(&mut out, m.eigenvalues());
            push_f64(&mut out, m.noise_sigma2());
        }
        ShapeModelFile::Gp(m) => {
            out.push(KIND_GP);
            push_u64(&mut out, m.reference().len() as u64);
            push_u64(&mut out, m.rank() as u64);
            push_vector(&mut out, &crate::completion::flatten(m.reference()));
            push_vector(&mut out, m.mean_deformation());
            push_vector(&mut out, m.eigenvalues());
            push_matrix(&mut out, m.eigenfields());
            push_f64(&mut out, m.gaussian_sigma());
            push_f64(&mut out, m.gaussian_amplitude());
        }
    }
    out
}

/// Parses a model from bytes, re-validating every invariant.
pub fn model_from_bytes(bytes: &[u8]) -> Result<ShapeModelFile, IoError> {
    let mut cursor = Cursor { bytes, pos: 0 };
    let magic = cursor.take(8)?;
    if magic != MODEL_MAGIC {
        return Err(IoError::Format("not a shape model file (bad magic)".to_string()));
    }
    let kind = cursor.take(1)?[0];
    match kind {
        KIND_PCA => {
            let points = cursor.take_count()?;
            let components = cursor.take_count()?;
            let dim = points
                .checked_mul(3)
                .ok_or_else(|| cursor.err("point count overflows"))?;
            cursor.ensure_remaining_f64(
                dim + dim * components + components + 1,
                "PCA model payload",
            )?;
            let mean = cursor.take_vector(dim)?;
            let basis = cursor.take_matrix(dim, components)?;
            let eigenvalues = cursor.take_vector(components)?;
            let noise_sigma2 = cursor.take_f64()?;
            cursor.expect_end()?;
            let model = PcaShapeModel::new(mean, basis, eigenvalues, noise_sigma2)
                .map_err(|e| IoError::Format(format!("invalid PCA model: {e}")))?;
            Ok(ShapeModelFile::Pca(model))
        }
        KIND_GP => {
            let points = cursor.take_count()?;
            let rank = cursor.take_count()?;
            let dim = points
                .checked_mul(3)
                .ok_or_else(|| cursor.err("point count overflows"))?;
            cursor.ensure_remaining_f64(
                dim + dim + rank + dim * rank + 2,
                "GP model payload",
            )?;
            let reference_flat = cursor.take_vector(dim)?;
            let mean_deformation = cursor.take_vector(dim)?;
            let eigenvalues = cursor.take_vector(rank)?;
            let eigenfields = cursor.take_matrix(dim, rank)?;
            let gaussian_sigma = cursor.take_f64()?;
            let gaussian_amplitude = cursor.take_f64()?;
            cursor.expect_end()?;
            let reference = cloud_from_flat(&reference_flat)
                .map_err(|e| IoError::Format(format!("invalid GP reference: {e}")))?;
            let model = GpShapeModel::new(
                reference,
                mean_deformation,
                eigenvalues,
                eigenfields,
                gaussian_sigma,
                gaussian_amplitude,
            )
            .map_err(|e| IoError::Format(format!("invalid GP model: {e}")))?;
            Ok(ShapeModelFile::Gp(model))
        }
        other => Err(IoError::Format(format!("unknown model kind {other}"))),
    }
}

/// Writes the binary container and its JSON sidecar.
pub fn write_model(path: &Path, model: &ShapeModelFile) -> Result<(), IoError> {
    std::fs::write(path, model_to_bytes(model))?;
    let sidecar = match model {
        ShapeModelFile::Pca(m) => Sidecar {
            kind: "pca".to_string(),
            point_count: m.point_count(),
            rank: m.components(),
            noise_sigma2: Some(m.noise_sigma2()),
            gaussian_sigma: None,
            gaussian_amplitude: None,
        },
        ShapeModelFile::Gp(m) => Sidecar {
            kind: "gp".to_string(),
            point_count: m.reference().len(),
            rank: m.rank(),
            noise_sigma2: None,
            gaussian_sigma: Some(m.gaussian_sigma()),
            gaussian_amplitude: Some(m.gaussian_amplitude()),
        },
    };
    let json = serde_json::to_string_pretty(&sidecar)
        .map_err(|e| IoError::Format(format!("sidecar serialization failed: {e}")))?;
    std::fs::write(sidecar_path(path), json)?;
    Ok(())
}

pub fn read_model(path: &Path) -> Result<ShapeModelFile, IoError> {
    let bytes = std::fs::read(path)?;
    model_from_bytes(&bytes)
}

fn sidecar_path(path: &Path) -> std::path::PathBuf {
    let mut os = path.as_os_str().to_owned();
    os.push(".json");
    std::path::PathBuf::from(os)
}

fn cloud_from_flat(v: &DVector<f64>) -> Result<PointCloud, crate::geometry::GeometryError> {
    let points = (0..v.len() / 3)
        .map(|i| nalgebra::Point3::new(v[3 * i], v[3 * i + 1], v[3 * i + 2]))
        .collect();
    PointCloud::new(points)
}

fn push_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_f64(out: &mut Vec<u8>, v: f64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_vector(out: &mut Vec<u8>, v: &DVector<f64>) {
    for x in v.iter() {
        push_f64(out, *x);
    }
}

fn push_matrix(out: &mut Vec<u8>, m: &DMatrix<f64>) {
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            push_f64(out, m[(r, c)]);
        }
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn err(&self, message: impl Into<String>) -> IoError {
        IoError::binary(self.pos, message)
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], IoError> {
        if self.pos + n > self.bytes.len() {
            return Err(self.err("unexpected end of data"));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn take_f64(&mut self) -> Result<f64, IoError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn take_count(&mut self) -> Result<usize, IoError> {
        let raw = u64::from_le_bytes(self.take(8)?.try_into().unwrap());
        usize::try_from(raw).map_err(|_| self.err(format!("count {raw} too large")))
    }

    /// Guards allocations: the remaining payload must actually contain
    /// `count` doubles before any buffer is reserved.
    fn ensure_remaining_f64(&self, count: usize, what: &str) -> Result<(), IoError> {
        let needed = count
            .checked_mul(8)
            .ok_or_else(|| self.err(format!("{what} size overflows")))?;
        if self.bytes.len() - self.pos < needed {
            return Err(self.err(format!(
                "{what} needs {needed} bytes but only {} remain",
                self.bytes.len() - self.pos
            )));
        }
        Ok(())
    }

    fn take_vector(&mut self, len: usize) -> Result<DVector<f64>, IoError> {
        self.ensure_remaining_f64(len, "vector")?;
        let mut v = DVector::zeros(len);
        for i in 0..len {
            v[i] = self.take_f64()?;
        }
        Ok(v)
    }

    fn take_matrix(&mut self, rows: usize, cols: usize) -> Result<DMatrix<f64>, IoError> {
        let total = rows
            .checked_mul(cols)
            .ok_or_else(|| self.err("matrix size overflows"))?;
        self.ensure_remaining_f64(total, "matrix")?;
        let mut m = DMatrix::zeros(rows, cols);
        for r in 0..rows {
            for c in 0..cols {
                m[(r, c)] = self.take_f64()?;
            }
        }
        Ok(m)
    }

    fn expect_end(&self) -> Result<(), IoError> {
        if self.pos != self.bytes.len() {
            return Err(self.err(format!("{} trailing bytes", self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}
