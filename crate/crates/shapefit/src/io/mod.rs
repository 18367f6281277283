//! Readers and writers for the on-disk formats: PLY and OBJ point clouds,
//! CSV point tables, region index lists, correspondence tables, and the
//! binary shape-model container.
//!
//! All parsers accept untrusted bytes: they never panic, bound their
//! allocations by the input size, and report the offending line or byte
//! offset. Writers emit deterministic bytes; numeric fields use the
//! shortest decimal form that parses back to the identical `f64`, so a
//! write/parse cycle is value-exact and a parse of writer output followed
//! by a rewrite is byte-identical.

use std::path::Path;

use thiserror::Error;

use crate::geometry::{GeometryError, PointCloud};

mod correspondence;
mod model;
mod obj;
mod pointcsv;
mod ply;
mod region;

pub use correspondence::{
    read_correspondence_csv, write_correspondence_csv, CorrespondenceRow,
};
pub use model::{model_from_bytes, model_to_bytes, read_model, write_model, ShapeModelFile, MODEL_MAGIC};
pub use obj::{parse_obj, write_obj};
pub use pointcsv::{parse_point_csv, write_point_csv};
pub use ply::{parse_ply, write_ply_ascii, write_ply_binary, write_ply_scalar_field};
pub use region::{parse_index_list, write_index_list};

#[derive(Debug, Error)]
pub enum IoError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("byte {offset}: {message}")]
    Binary { offset: usize, message: String },
    #[error("{0}")]
    Format(String),
    #[error("unsupported file extension {extension:?} (expected ply, obj, or csv)")]
    UnsupportedExtension { extension: String },
}

impl IoError {
    fn parse(line: usize, message: impl Into<String>) -> Self {
        IoError::Parse { line, message: message.into() }
    }

    fn binary(offset: usize, message: impl Into<String>) -> Self {
        IoError::Binary { offset, message: message.into() }
    }
}

/// Reads a point cloud, choosing the parser from the file extension.
pub fn read_point_cloud(path: &Path) -> Result<PointCloud, IoError> {
    let bytes = std::fs::read(path)?;
    match extension_of(path).as_deref() {
        Some("ply") => parse_ply(&bytes),
        Some("obj") => parse_obj(&bytes),
        Some("csv") => parse_point_csv(&bytes),
        other => Err(IoError::UnsupportedExtension {
            extension: other.unwrap_or_default().to_string(),
        }),
    }
}

/// Writes a point cloud, choosing the format from the file extension.
/// PLY output is ASCII; use [`write_ply_binary`] directly for binary.
pub fn write_point_cloud(path: &Path, cloud: &PointCloud) -> Result<(), IoError> {
    let bytes = match extension_of(path).as_deref() {
        Some("ply") => write_ply_ascii(cloud),
        Some("obj") => write_obj(cloud),
        Some("csv") => write_point_csv(cloud),
        other => {
            return Err(IoError::UnsupportedExtension {
                extension: other.unwrap_or_default().to_string(),
            })
        }
    };
    std::fs::write(path, bytes)?;
    Ok(())
}

fn extension_of(path: &Path) -> Option<String> {
    path.extension().map(|e| e.to_string_lossy().to_ascii_lowercase())
}

/// Formats an `f64` in its shortest form that parses back bit-identically.
pub(crate) fn fmt_f64(value: f64) -> String {
    let mut s = format!("{value}");
    // Keep output unambiguous for other tools: "1" -> "1" is fine for
    // coordinates, but normalize negative zero for determinism.
    if s == "-0" {
        s = "0".to_string();
    }
    s
}

/// Normalizes a raw normal vector read from a file. Near-unit vectors are
/// renormalized; degenerate ones become `None`.
pub(crate) fn sanitize_normal(
    x: f64,
    y: f64,
    z: f64,
) -> Option<nalgebra::Vector3<f64>> {
    let v = nalgebra::Vector3::new(x, y, z);
    let norm = v.norm();
    if norm.is_finite() && norm > 1e-9 {
        Some(v / norm)
    } else {
        None
    }
}
