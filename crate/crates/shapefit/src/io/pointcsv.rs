//! CSV point tables: `x,y,z` or `x,y,z,nx,ny,nz` with a header row.

use nalgebra::{Point3, Vector3};

use super::{fmt_f64, sanitize_normal, IoError};
use crate::geometry::PointCloud;

pub fn parse_point_csv(bytes: &[u8]) -> Result<PointCloud, IoError> {
    let text = std::str::from_utf8(bytes)
        .map_err(|_| IoError::Format("CSV data is not valid UTF-8".to_string()))?;
    let mut lines = text.lines().enumerate();

    let header = loop {
        match lines.next() {
            Some((_, line)) if line.trim().is_empty() => continue,
            Some((_, line)) => break line,
            None => return Err(IoError::Format("empty CSV".to_string())),
        }
    };
    let columns: Vec<String> =
        header.split(',').map(|c| c.trim().to_ascii_lowercase()).collect();
    let column_refs: Vec<&str> = columns.iter().map(String::as_str).collect();
    let with_normals = match column_refs.as_slice() {
        ["x", "y", "z"] => false,
        ["x", "y", "z", "nx", "ny", "nz"] => true,
        _ => {
            return Err(IoError::parse(
                1,
                format!("unrecognized header {header:?} (expected x,y,z[,nx,ny,nz])"),
            ))
        }
    };
    let expected = if with_normals { 6 } else { 3 };

    let mut positions = Vec::new();
    let mut normals = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut values = [0.0f64; 6];
        let mut count = 0usize;
        for field in line.split(',') {
            if count >= expected {
                count += 1;
                break;
            }
            values[count] = field.trim().parse().map_err(|_| {
                IoError::parse(line_no, format!("invalid number {:?}", field.trim()))
            })?;
            count += 1;
        }
        if count != expected {
            return Err(IoError::parse(
                line_no,
                format!("expected {expected} fields, found {count}"),
            ));
        }
        positions.push(Point3::new(values[0], values[1], values[2]));
        if with_normals {
            normals.push(sanitize_normal(values[3], values[4], values[5]));
        }
    }

    let cloud = PointCloud::new(positions)?;
    if with_normals {
        Ok(cloud.with_optional_normals(normals)?)
    } else {
        Ok(cloud)
    }
}

pub fn write_point_csv(cloud: &PointCloud) -> Vec<u8> {
    let with_normals = cloud.has_complete_normals();
    let mut out = String::new();
    out.push_str(if with_normals { "x,y,z,nx,ny,nz\n" } else { "x,y,z\n" });
    for (i, p) in cloud.points().iter().enumerate() {
        out.push_str(&fmt_f64(p.x));
        out.push(',');
        out.push_str(&fmt_f64(p.y));
        out.push(',');
        out.push_str(&fmt_f64(p.z));
        if with_normals {
            let n: Vector3<f64> = cloud.normal(i).expect("complete normals");
            for c in [n.x, n.y, n.z] {
                out.push(',');
                out.push_str(&fmt_f64(c));
            }
        }
        out.push('\n');
    }
    out.into_bytes()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bit_exact() {
        let cloud = PointCloud::new(vec![
            Point3::new(0.1, 0.2, 0.30000000000000004),
            Point3::new(-7.5, 2e-12, 9.0),
        ])
        .unwrap()
        .with_normals(vec![Vector3::y(), Vector3::z()])
        .unwrap();
        let bytes = write_point_csv(&cloud);
        let back = parse_point_csv(&bytes).unwrap();
        assert_eq!(back.points(), cloud.points());
        assert_eq!(back.normals(), cloud.normals());
        assert_eq!(write_point_csv(&back), bytes);
    }

    #[test]
    fn accepts_spaces_and_mixed_case_header() {
        let text = b"X, Y, Z\n1, 2, 3\n";
        let cloud = parse_point_csv(text).unwrap();
        assert_eq!(cloud.points()[0], Point3::new(1.0, 2.0, 3.0));
    }

    #[test]
    fn rejects_unknown_header() {
        let err = parse_point_csv(b"a,b,c\n1,2,3\n").unwrap_err();
        assert!(err.to_string().contains("unrecognized header"), "{err}");
    }

    #[test]
    fn rejects_wrong_field_count() {
        let err = parse_point_csv(b"x,y,z\n1,2\n").unwrap_err();
        assert!(err.to_string().contains("expected 3 fields"), "{err}");
    }

    #[test]
    fn rejects_bad_number_with_line_info() {
        let err = parse_point_csv(b"x,y,z\n1,2,3\n4,five,6\n").unwrap_err();
        assert_eq!(err.to_string(), "line 3: invalid number \"five\"");
    }
}
