//! PLY point-cloud reader and writers.
//!
//! Reads ASCII and binary little-endian PLY. Only the `vertex` element is
//! consumed: `x`, `y`, `z` must be `float` or `double`, `nx`, `ny`, `nz`
//! are picked up when present, and all other elements and properties
//! (faces included) are skipped. Writers emit double-precision vertices.

use nalgebra::{Point3, Vector3};

use super::{fmt_f64, sanitize_normal, IoError};
use crate::geometry::PointCloud;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn is_float(self) -> bool {
        matches!(self, Scalar::F32 | Scalar::F64)
    }
}

#[derive(Debug, Clone)]
enum Property {
    Scalar { name: String, ty: Scalar },
    List { count_ty: Scalar, item_ty: Scalar },
}

#[derive(Debug, Clone)]
struct Element {
    name: String,
    count: usize,
    properties: Vec<Property>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Format {
    Ascii,
    BinaryLittleEndian,
}

struct Header {
    format: Format,
    elements: Vec<Element>,
    /// Byte offset of the first data byte after `end_header`.
    data_start: usize,
    /// Number of header lines, for ASCII line-number reporting.
    lines: usize,
}

pub fn parse_ply(bytes: &[u8]) -> Result<PointCloud, IoError> {
    let header = parse_header(bytes)?;
    let data = &bytes[header.data_start..];
    match header.format {
        Format::Ascii => parse_ascii_body(&header, data),
        Format::BinaryLittleEndian => parse_binary_body(&header, data, header.data_start),
    }
}

fn parse_header(bytes: &[u8]) -> Result<Header, IoError> {
    let mut pos = 0usize;
    let mut line_no = 0usize;
    let mut next_line = || -> Result<(usize, String), IoError> {
        if pos >= bytes.len() {
            return Err(IoError::parse(line_no + 1, "unexpected end of header"));
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos] != b'\n' {
            pos += 1;
        }
        let mut end = pos;
        if pos < bytes.len() {
            pos += 1; // consume '\n'
        }
        if end > start && bytes[end - 1] == b'\r' {
            end -= 1;
        }
        line_no += 1;
        let text = std::str::from_utf8(&bytes[start..end])
            .map_err(|_| IoError::parse(line_no, "header is not valid UTF-8"))?;
        Ok((line_no, text.to_string()))
    };

    let (line, magic) = next_line()?;
    if magic.trim() != "ply" {
        return Err(IoError::parse(line, "missing `ply` magic"));
    }

    let mut format = None;
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let (line, text) = next_line()?;
        let trimmed = text.trim();
        if trimmed == "end_header" {
            break;
        }
        let mut tokens = trimmed.split_ascii_whitespace();
        match tokens.next() {
            None => continue, // blank line
            Some("comment") | Some("obj_info") => continue,
            Some("format") => {
                let kind = tokens.next().unwrap_or("");
                let version = tokens.next().unwrap_or("");
                if version != "1.0" {
                    return Err(IoError::parse(line, format!("unsupported PLY version {version:?}")));
                }
                format = Some(match kind {
                    "ascii" => Format::Ascii,
                    "binary_little_endian" => Format::BinaryLittleEndian,
                    other => {
                        return Err(IoError::parse(
                            line,
                            format!("unsupported PLY format {other:?}"),
                        ))
                    }
                });
            }
            Some("element") => {
                let name = tokens
                    .next()
                    .ok_or_else(|| IoError::parse(line, "element without a name"))?;
                let count: usize = tokens
                    .next()
                    .and_then(|c| c.parse().ok())
                    .ok_or_else(|| IoError::parse(line, "element without a valid count"))?;
                elements.push(Element { name: name.to_string(), count, properties: Vec::new() });
            }
            Some("property") => {
                let element = elements
                    .last_mut()
                    .ok_or_else(|| IoError::parse(line, "property before any element"))?;
                let first = tokens
                    .next()
                    .ok_or_else(|| IoError::parse(line, "property without a type"))?;
                if first == "list" {
                    let count_ty = tokens
                        .next()
                        .and_then(Scalar::from_name)
                        .ok_or_else(|| IoError::parse(line, "bad list count type"))?;
                    let item_ty = tokens
                        .next()
                        .and_then(Scalar::from_name)
                        .ok_or_else(|| IoError::parse(line, "bad list item type"))?;
                    if tokens.next().is_none() {
                        return Err(IoError::parse(line, "list property without a name"));
                    }
                    element.properties.push(Property::List { count_ty, item_ty });
                } else {
                    let ty = Scalar::from_name(first)
                        .ok_or_else(|| IoError::parse(line, format!("unknown type {first:?}")))?;
                    let name = tokens
                        .next()
                        .ok_or_else(|| IoError::parse(line, "property without a name"))?;
                    element.properties.push(Property::Scalar { name: name.to_string(), ty });
                }
            }
            Some(other) => {
                return Err(IoError::parse(line, format!("unknown header keyword {other:?}")));
            }
        }
    }

    let format = format.ok_or_else(|| IoError::parse(line_no, "missing format line"))?;
    Ok(Header { format, elements, data_start: pos, lines: line_no })
}

/// Column layout of the vertex element: indices of x/y/z and nx/ny/nz
/// within the property list.
struct VertexLayout {
    xyz: [usize; 3],
    normal: Option<[usize; 3]>,
}

fn vertex_layout(element: &Element) -> Result<VertexLayout, IoError> {
    let find = |wanted: &str| -> Option<(usize, Scalar)> {
        element.properties.iter().enumerate().find_map(|(i, p)| match p {
            Property::Scalar { name, ty } if name == wanted => Some((i, *ty)),
            _ => None,
        })
    };
    let mut xyz = [0usize; 3];
    for (slot, name) in ["x", "y", "z"].iter().enumerate() {
        let (index, ty) = find(name).ok_or_else(|| {
            IoError::Format(format!("vertex element lacks required property {name:?}"))
        })?;
        if !ty.is_float() {
            return Err(IoError::Format(format!(
                "vertex property {name:?} must be float or double"
            )));
        }
        xyz[slot] = index;
    }
    let normal_slots: Vec<(usize, Scalar)> =
        ["nx", "ny", "nz"].iter().filter_map(|n| find(n)).collect();
    let normal = if normal_slots.len() == 3 && normal_slots.iter().all(|(_, ty)| ty.is_float()) {
        Some([normal_slots[0].0, normal_slots[1].0, normal_slots[2].0])
    } else {
        None
    };
    Ok(VertexLayout { xyz, normal })
}

fn build_cloud(
    positions: Vec<Point3<f64>>,
    normals: Option<Vec<Option<Vector3<f64>>>>,
) -> Result<PointCloud, IoError> {
    let cloud = PointCloud::new(positions)?;
    match normals {
        Some(ns) => Ok(cloud.with_optional_normals(ns)?),
        None => Ok(cloud),
    }
}

fn parse_ascii_body(header: &Header, data: &[u8]) -> Result<PointCloud, IoError> {
    let text = std::str::from_utf8(data)
        .map_err(|_| IoError::parse(header.lines + 1, "ASCII body is not valid UTF-8"))?;
    let mut lines = text.lines().enumerate().map(|(i, l)| (header.lines + 1 + i, l));
    let mut next_row = || -> Result<(usize, Vec<&str>), IoError> {
        for (line_no, line) in lines.by_ref() {
            let tokens: Vec<&str> = line.split_ascii_whitespace().collect();
            if !tokens.is_empty() {
                return Ok((line_no, tokens));
            }
        }
        Err(IoError::parse(header.lines + 1, "unexpected end of data"))
    };

    let mut result = None;
    for element in &header.elements {
        if element.name == "vertex" {
            let layout = vertex_layout(element)?;
            let mut positions = Vec::with_capacity(element.count.min(data.len()));
            let mut normals: Vec<Option<Vector3<f64>>> = Vec::new();
            for _ in 0..element.count {
                let (line_no, tokens) = next_row()?;
                let values = scan_ascii_row(&element.properties, &tokens, line_no)?;
                positions.push(Point3::new(
                    values[layout.xyz[0]],
                    values[layout.xyz[1]],
                    values[layout.xyz[2]],
                ));
                if let Some(n) = layout.normal {
                    normals.push(sanitize_normal(values[n[0]], values[n[1]], values[n[2]]));
                }
            }
            result = Some(build_cloud(positions, layout.normal.map(|_| normals))?);
        } else {
            for _ in 0..element.count {
                let (line_no, tokens) = next_row()?;
                scan_ascii_row(&element.properties, &tokens, line_no)?;
            }
        }
    }
    result.ok_or_else(|| IoError::Format("no vertex element".to_string()))
}

/// Parses one ASCII element row, returning the scalar property values in
/// property order (list properties contribute a placeholder 0).
fn scan_ascii_row(
    properties: &[Property],
    tokens: &[&str],
    line_no: usize,
) -> Result<Vec<f64>, IoError> {
    let mut values = Vec::with_capacity(properties.len());
    let mut cursor = 0usize;
    let take = |cursor: &mut usize| -> Result<f64, IoError> {
        let token = tokens
            .get(*cursor)
            .ok_or_else(|| IoError::parse(line_no, "row has too few values"))?;
        *cursor += 1;
        token
            .parse::<f64>()
            .map_err(|_| IoError::parse(line_no, format!("invalid number {token:?}")))
    };
    for property in properties {
        match property {
            Property::Scalar { .. } => values.push(take(&mut cursor)?),
            Property::List { .. } => {
                let count = take(&mut cursor)?;
                if !(0.0..=tokens.len() as f64).contains(&count) || count.fract() != 0.0 {
                    return Err(IoError::parse(line_no, format!("invalid list count {count}")));
                }
                for _ in 0..count as usize {
                    take(&mut cursor)?;
                }
                values.push(0.0);
            }
        }
    }
    if cursor != tokens.len() {
        return Err(IoError::parse(line_no, "row has too many values"));
    }
    Ok(values)
}

struct BinCursor<'a> {
    data: &'a [u8],
    pos: usize,
    base: usize,
}

impl<'a> BinCursor<'a> {
    fn read(&mut self, n: usize) -> Result<&'a [u8], IoError> {
        if self.pos + n > self.data.len() {
            return Err(IoError::binary(self.base + self.pos, "unexpected end of data"));
        }
        let slice = &self.data[self.pos..self.pos + n];
        self.pos += n;
        Ok(slice)
    }

    fn read_scalar(&mut self, ty: Scalar) -> Result<f64, IoError> {
        let raw = self.read(ty.size())?;
        Ok(match ty {
            Scalar::I8 => raw[0] as i8 as f64,
            Scalar::U8 => raw[0] as f64,
            Scalar::I16 => i16::from_le_bytes([raw[0], raw[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([raw[0], raw[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(raw.try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(raw.try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(raw.try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(raw.try_into().unwrap()),
        })
    }
}

fn parse_binary_body(header: &Header, data: &[u8], base: usize) -> Result<PointCloud, IoError> {
    let mut cursor = BinCursor { data, pos: 0, base };
    let mut result = None;
    for element in &header.elements {
        // Minimum bytes per row bounds the allocation for hostile counts.
        let min_row: usize = element
            .properties
            .iter()
            .map(|p| match p {
                Property::Scalar { ty, .. } => ty.size(),
                Property::List { count_ty, .. } => count_ty.size(),
            })
            .sum();
        if min_row > 0 && element.count > (data.len() - cursor.pos) / min_row {
            return Err(IoError::binary(
                base + cursor.pos,
                format!("element {:?} count {} exceeds available data", element.name, element.count),
            ));
        }

        if element.name == "vertex" {
            let layout = vertex_layout(element)?;
            let mut positions = Vec::with_capacity(element.count);
            let mut normals: Vec<Option<Vector3<f64>>> = Vec::new();
            for _ in 0..element.count {
                let values = scan_binary_row(&element.properties, &mut cursor)?;
                positions.push(Point3::new(
                    values[layout.xyz[0]],
                    values[layout.xyz[1]],
                    values[layout.xyz[2]],
                ));
                if let Some(n) = layout.normal {
                    normals.push(sanitize_normal(values[n[0]], values[n[1]], values[n[2]]));
                }
            }
            result = Some(build_cloud(positions, layout.normal.map(|_| normals))?);
        } else {
            for _ in 0..element.count {
                scan_binary_row(&element.properties, &mut cursor)?;
            }
        }
    }
    result.ok_or_else(|| IoError::Format("no vertex element".to_string()))
}

fn scan_binary_row(properties: &[Property], cursor: &mut BinCursor) -> Result<Vec<f64>, IoError> {
    let mut values = Vec::with_capacity(properties.len());
    for property in properties {
        match property {
            Property::Scalar { ty, .. } => values.push(cursor.read_scalar(*ty)?),
            Property::List { count_ty, item_ty } => {
                let count = cursor.read_scalar(*count_ty)?;
                if count < 0.0 || count.fract() != 0.0 {
                    return Err(IoError::binary(cursor.base + cursor.pos, "invalid list count"));
                }
                cursor.read(count as usize * item_ty.size())?;
                values.push(0.0);
            }
        }
    }
    Ok(values)
}

fn header_lines(cloud: &PointCloud, format: &str, extra_property: Option<&str>) -> String {
    let mut h = String::new();
    h.push_str("ply\n");
    h.push_str(&format!("format {format} 1.0\n"));
    h.push_str(&format!("element vertex {}\n", cloud.len()));
    h.push_str("property double x\nproperty double y\nproperty double z\n");
    if cloud.has_complete_normals() {
        h.push_str("property double nx\nproperty double ny\nproperty double nz\n");
    }
    if let Some(name) = extra_property {
        h.push_str(&format!("property double {name}\n"));
    }
    h.push_str("end_header\n");
    h
}

/// Serializes as ASCII PLY. Normals are written only when every point has
/// one; partial normal sets are omitted entirely.
pub fn write_ply_ascii(cloud: &PointCloud) -> Vec<u8> {
    let with_normals = cloud.has_complete_normals();
    let mut out = header_lines(cloud, "ascii", None);
    for (i, p) in cloud.points().iter().enumerate() {
        out.push_str(&fmt_f64(p.x));
        out.push(' ');
        out.push_str(&fmt_f64(p.y));
        out.push(' ');
        out.push_str(&fmt_f64(p.z));
        if with_normals {
            let n = cloud.normal(i).expect("complete normals");
            for c in [n.x, n.y, n.z] {
                out.push(' ');
                out.push_str(&fmt_f64(c));
            }
        }
        out.push('\n');
    }
    out.into_bytes()
}

/// Serializes as binary little-endian PLY with double-precision vertices.
pub fn write_ply_binary(cloud: &PointCloud) -> Vec<u8> {
    let with_normals = cloud.has_complete_normals();
    let mut out = header_lines(cloud, "binary_little_endian", None).into_bytes();
    for (i, p) in cloud.points().iter().enumerate() {
        for c in [p.x, p.y, p.z] {
            out.extend_from_slice(&c.to_le_bytes());
        }
        if with_normals {
            let n = cloud.normal(i).expect("complete normals");
            for c in [n.x, n.y, n.z] {
                out.extend_from_slice(&c.to_le_bytes());
            }
        }
    }
    out
}

/// ASCII PLY with one extra per-vertex scalar property (e.g. a deformation
/// magnitude for heat-map rendering). `values` must match the point count.
pub fn write_ply_scalar_field(
    cloud: &PointCloud,
    property: &str,
    values: &[f64],
) -> Result<Vec<u8>, IoError> {
    if values.len() != cloud.len() {
        return Err(IoError::Format(format!(
            "scalar field has {} values for {} points",
            values.len(),
            cloud.len()
        )));
    }
    if property.is_empty() || !property.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
        return Err(IoError::Format(format!("invalid property name {property:?}")));
    }
    let mut out = header_lines(cloud, "ascii", Some(property));
    for (i, p) in cloud.points().iter().enumerate() {
        out.push_str(&fmt_f64(p.x));
        out.push(' ');
        out.push_str(&fmt_f64(p.y));
        out.push(' ');
        out.push_str(&fmt_f64(p.z));
        if cloud.has_complete_normals() {
            let n = cloud.normal(i).expect("complete normals");
            for c in [n.x, n.y, n.z] {
                out.push(' ');
                out.push_str(&fmt_f64(c));
            }
        }
        out.push(' ');
        out.push_str(&fmt_f64(values[i]));
        out.push('\n');
    }
    Ok(out.into_bytes())
}
