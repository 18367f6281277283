//! Correspondence tables: `template_index,target_index,distance` rows,
//! with `-1` and an empty distance for unmatched template points.

use nalgebra::Point3;

use super::{fmt_f64, IoError};
use crate::geometry::{CorrespondenceMap, PointCloud};

/// One parsed row of a correspondence table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrespondenceRow {
    pub template_index: usize,
    pub target_index: Option<usize>,
    pub distance: Option<f64>,
}

/// Writes one row per template point. Distances are Euclidean, measured
/// between `registered` (the template in target space, e.g. deformed or
/// rigidly moved) and the assigned target point.
pub fn write_correspondence_csv(
    map: &CorrespondenceMap,
    registered: &PointCloud,
    target: &PointCloud,
) -> Result<Vec<u8>, IoError> {
    if registered.len() != map.template_len() {
        return Err(IoError::Format(format!(
            "correspondence map covers {} template points but cloud has {}",
            map.template_len(),
            registered.len()
        )));
    }
    let mut out = String::from("template_index,target_index,distance\n");
    for (m, assignment) in map.assignments().iter().enumerate() {
        match assignment {
            Some(t) => {
                let d = distance(&registered.points()[m], target.points().get(*t))?;
                out.push_str(&format!("{m},{t},{}\n", fmt_f64(d)));
            }
            None => out.push_str(&format!("{m},-1,\n")),
        }
    }
    Ok(out.into_bytes())
}

fn distance(a: &Point3<f64>, b: Option<&Point3<f64>>) -> Result<f64, IoError> {
    let b = b.ok_or_else(|| {
        IoError::Format("correspondence references a target index out of range".to_string())
    })?;
    Ok((a - b).norm())
}

pub fn read_correspondence_csv(bytes: &[u8]) -> Result<Vec<CorrespondenceRow>, IoError> {
    let text = std::str::from_utf8(bytes)
        .map_err(|_| IoError::Format("correspondence CSV is not valid UTF-8".to_string()))?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        if line_no == 1 {
            if line.trim() != "template_index,target_index,distance" {
                return Err(IoError::parse(1, format!("unrecognized header {line:?}")));
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(IoError::parse(line_no, format!("expected 3 fields, found {}", fields.len())));
        }
        let template_index: usize = fields[0]
            .parse()
            .map_err(|_| IoError::parse(line_no, format!("invalid template index {:?}", fields[0])))?;
        let target_index = match fields[1] {
            "-1" => None,
            raw => Some(raw.parse::<usize>().map_err(|_| {
                IoError::parse(line_no, format!("invalid target index {raw:?}"))
            })?),
        };
        let distance = match fields[2] {
            "" => None,
            raw => {
                let d: f64 = raw
                    .parse()
                    .map_err(|_| IoError::parse(line_no, format!("invalid distance {raw:?}")))?;
                if !d.is_finite() {
                    return Err(IoError::parse(line_no, format!("non-finite distance {raw:?}")));
                }
                Some(d)
            }
        };
        if target_index.is_some() != distance.is_some() {
            return Err(IoError::parse(line_no, "distance must accompany a target index"));
        }
        rows.push(CorrespondenceRow { template_index, target_index, distance });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    #[test]
    fn writes_and_reads_back() {
        let registered = PointCloud::new(vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(2.0, 0.0, 0.0),
        ])
        .unwrap();
        let target = PointCloud::new(vec![
            Point3::new(0.0, 0.5, 0.0),
            Point3::new(2.0, 0.0, 0.25),
        ])
        .unwrap();
        let map = CorrespondenceMap::new(
            vec![Some(0), None, Some(1)],
            BTreeSet::new(),
            1.0,
            target.len(),
        )
        .unwrap();
        let bytes = write_correspondence_csv(&map, &registered, &target).unwrap();
        let rows = read_correspondence_csv(&bytes).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0], CorrespondenceRow {
            template_index: 0,
            target_index: Some(0),
            distance: Some(0.5),
        });
        assert_eq!(rows[1], CorrespondenceRow {
            template_index: 1,
            target_index: None,
            distance: None,
        });
        assert_eq!(rows[2].target_index, Some(1));
        assert_eq!(rows[2].distance, Some(0.25));
    }

    #[test]
    fn rejects_inconsistent_missing_row() {
        let err = read_correspondence_csv(
            b"template_index,target_index,distance\n0,-1,3.5\n",
        )
        .unwrap_err();
        assert!(err.to_string().contains("must accompany"), "{err}");
    }
}
