//! Wavefront OBJ reader and writer for point data.
//!
//! Only `v` and `vn` records are consumed; faces and every other record
//! are ignored. When the file carries exactly one `vn` per `v` the normals
//! are attached positionally, which is the common convention for
//! point-cloud OBJ exports; otherwise normals are dropped.

use nalgebra::{Point3, Vector3};

use super::{fmt_f64, sanitize_normal, IoError};
use crate::geometry::PointCloud;

pub fn parse_obj(bytes: &[u8]) -> Result<PointCloud, IoError> {
    let text = std::str::from_utf8(bytes)
        .map_err(|_| IoError::Format("OBJ data is not valid UTF-8".to_string()))?;
    let mut positions = Vec::new();
    let mut raw_normals: Vec<Option<Vector3<f64>>> = Vec::new();

    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        let mut tokens = line.split_ascii_whitespace();
        let Some(keyword) = tokens.next() else { continue };
        match keyword {
            "v" | "vn" => {
                let mut coords = [0.0f64; 3];
                for c in &mut coords {
                    let token = tokens.next().ok_or_else(|| {
                        IoError::parse(line_no, format!("{keyword} record has fewer than 3 values"))
                    })?;
                    *c = token.parse().map_err(|_| {
                        IoError::parse(line_no, format!("invalid number {token:?}"))
                    })?;
                }
                // Extra components (vertex w, colors) are tolerated.
                if keyword == "v" {
                    positions.push(Point3::new(coords[0], coords[1], coords[2]));
                } else {
                    raw_normals.push(sanitize_normal(coords[0], coords[1], coords[2]));
                }
            }
            _ => {}
        }
    }

    let cloud = PointCloud::new(positions)?;
    if !raw_normals.is_empty() && raw_normals.len() == cloud.len() {
        Ok(cloud.with_optional_normals(raw_normals)?)
    } else {
        Ok(cloud)
    }
}

pub fn write_obj(cloud: &PointCloud) -> Vec<u8> {
    let mut out = String::new();
    for p in cloud.points() {
        out.push_str("v ");
        out.push_str(&fmt_f64(p.x));
        out.push(' ');
        out.push_str(&fmt_f64(p.y));
        out.push(' ');
        out.push_str(&fmt_f64(p.z));
        out.push('\n');
    }
    if cloud.has_complete_normals() {
        for i in 0..cloud.len() {
            let n = cloud.normal(i).expect("complete normals");
            out.push_str("vn ");
            out.push_str(&fmt_f64(n.x));
            out.push(' ');
            out.push_str(&fmt_f64(n.y));
            out.push(' ');
            out.push_str(&fmt_f64(n.z));
            out.push('\n');
        }
    }
    out.into_bytes()
}
