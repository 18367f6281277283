//! Surface normal estimation from local neighborhood covariance.

use nalgebra::{Matrix3, Vector3};

use super::{GeometryError, KdTree, PointCloud};

/// Estimates one unit normal per point from the covariance of its
/// k-nearest neighborhood (the point plus its `k` nearest others).
///
/// The normal is the eigenvector of the smallest covariance eigenvalue,
/// oriented away from the cloud centroid. Neighborhoods of rank < 2
/// (coincident or collinear) get no normal; their indices are returned so
/// callers can log or inspect them.
pub fn estimate_normals(
    cloud: &PointCloud,
    k: usize,
) -> Result<(PointCloud, Vec<usize>), GeometryError> {
    if k < 3 {
        return Err(GeometryError::InvalidNeighborhood { k });
    }
    if cloud.len() < k + 1 {
        return Err(GeometryError::NeighborhoodTooLarge { points: cloud.len(), k });
    }
    let centroid = cloud.centroid()?;
    let tree = KdTree::build(cloud.points());
    let mut normals: Vec<Option<Vector3<f64>>> = Vec::with_capacity(cloud.len());
    let mut degenerate = Vec::new();

    for (i, p) in cloud.points().iter().enumerate() {
        let neighborhood = tree.k_nearest(p, k + 1);
        let mut mean = Vector3::zeros();
        for &(j, _) in &neighborhood {
            mean += cloud.points()[j].coords;
        }
        mean /= neighborhood.len() as f64;
        let mut cov = Matrix3::zeros();
        for &(j, _) in &neighborhood {
            let d = cloud.points()[j].coords - mean;
            cov += d * d.transpose();
        }
        cov /= neighborhood.len() as f64;

        let eig = cov.symmetric_eigen();
        let mut order = [0usize, 1, 2];
        order.sort_by(|&a, &b| {
            eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).expect("finite eigenvalue")
        });
        let largest = eig.eigenvalues[order[0]];
        let middle = eig.eigenvalues[order[1]];
        let smallest = order[2];
        if !(largest > 0.0) || middle.max(0.0) <= largest * 1e-12 {
            log::warn!("degenerate neighborhood at point {i}: rank < 2 covariance");
            normals.push(None);
            degenerate.push(i);
            continue;
        }

        let mut n = eig.eigenvectors.column(smallest).normalize();
        let outward = p.coords - centroid.coords;
        let alignment = n.dot(&outward);
        if alignment < 0.0 {
            n = -n;
        } else if alignment == 0.0 {
            n = canonical_sign(n);
        }
        normals.push(Some(n));
    }

    let with = PointCloud::from_parts_unchecked(
        cloud.points().to_vec(),
        Some(normals),
        cloud.labels().map(<[String]>::to_vec),
    );
    Ok((with, degenerate))
}

/// Flips `n` so its largest-magnitude component is positive, giving points
/// exactly on the centroid surface a deterministic orientation.
fn canonical_sign(n: Vector3<f64>) -> Vector3<f64> {
    let mut dominant = 0;
    for a in 1..3 {
        if n[a].abs() > n[dominant].abs() {
            dominant = a;
        }
    }
    if n[dominant] < 0.0 {
        -n
    } else {
        n
    }
}

/// Ensures `cloud` carries normals, estimating them with neighborhood size
/// `k` when absent. Returns the cloud unchanged if normals exist.
pub(crate) fn ensure_normals(cloud: &PointCloud, k: usize) -> Result<PointCloud, GeometryError> {
    if cloud.has_normals() {
        Ok(cloud.clone())
    } else {
        estimate_normals(cloud, k).map(|(c, _)| c)
    }
}
