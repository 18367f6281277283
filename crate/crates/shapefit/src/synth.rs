//! Deterministic synthetic test shapes with known correspondences.
//!
//! The generator samples an asymmetric, bumpy ellipsoid patch: low-order
//! sinusoidal bumps break every rotational and mirror symmetry (so rigid
//! alignment of two copies has a unique optimum), and the open boundary
//! in both surface parameters makes the patch occludable from any side.
//! All shapes are functions of their seeds alone.
//!
//! A [`PatchFamily`] fixes one set of surface parameter samples and
//! derives members from it by smooth, seeded displacement fields, so
//! family members correspond point-by-point by construction: point `i`
//! of every member is a deformation of point `i` of the base shape.

use nalgebra::{Point3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::geometry::PointCloud;

/// Ellipsoid semi-axes in millimetres: roughly palm-sized, like the
/// anatomy scans this toolkit targets.
const SEMI_AXES: (f64, f64, f64) = (22.0, 14.0, 30.0);
/// Length scale of member deformation fields, in millimetres. Large
/// relative to point spacing so the fields are smooth and coherent.
const DEFORMATION_SCALE: f64 = 12.0;

/// Point on the bumpy ellipsoid patch at surface parameters
/// `(theta, phi)` with `theta` in `[0.2 pi, 0.9 pi]` (polar) and `phi`
/// in `[0.1 pi, 1.6 pi]` (azimuthal).
fn surface_point(theta: f64, phi: f64) -> Point3<f64> {
    let bump = 1.0
        + 0.12 * (3.0 * theta).sin() * (2.0 * phi + 0.7).cos()
        + 0.08 * (5.0 * theta + 1.3).cos() * (3.0 * phi).sin()
        + 0.05 * (7.0 * theta + 0.5).sin() * (5.0 * phi + 2.1).sin();
    let (a, b, c) = SEMI_AXES;
    Point3::new(
        bump * a * theta.sin() * phi.cos(),
        bump * b * theta.sin() * phi.sin(),
        bump * c * theta.cos(),
    )
}

/// A base shape plus the machinery to derive corresponded variants.
#[derive(Debug, Clone)]
pub struct PatchFamily {
    parameters: Vec<(f64, f64)>,
}

impl PatchFamily {
    /// Samples `point_count` surface parameters with the given seed.
    pub fn new(point_count: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let parameters = (0..point_count)
            .map(|_| {
                let theta = rng.random_range(0.2..0.9) * std::f64::consts::PI;
                let phi = rng.random_range(0.1..1.6) * std::f64::consts::PI;
                (theta, phi)
            })
            .collect();
        Self { parameters }
    }

    /// The undeformed patch.
    pub fn base(&self) -> PointCloud {
        let points = self
            .parameters
            .iter()
            .map(|&(theta, phi)| surface_point(theta, phi))
            .collect();
        PointCloud::new(points).expect("surface points are finite")
    }

    /// A member deformed by a smooth random field with root-mean-square
    /// displacement `magnitude` (mm). `magnitude` 0 returns the base
    /// shape exactly. Members correspond to the base point-by-point.
    pub fn member(&self, deformation_seed: u64, magnitude: f64) -> PointCloud {
        let base = self.base();
        if magnitude == 0.0 {
            return base;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(deformation_seed);
        // Four low-frequency vector sinusoids: smooth everywhere, with
        // gradients bounded by amplitude / DEFORMATION_SCALE.
        let waves: Vec<(Vector3<f64>, Vector3<f64>, f64)> = (0..4)
            .map(|_| {
                let amplitude = Vector3::new(
                    rng.sample::<f64, _>(StandardNormal),
                    rng.sample::<f64, _>(StandardNormal),
                    rng.sample::<f64, _>(StandardNormal),
                );
                let direction = Vector3::new(
                    rng.sample::<f64, _>(StandardNormal),
                    rng.sample::<f64, _>(StandardNormal),
                    rng.sample::<f64, _>(StandardNormal),
                )
                .normalize();
                let phase = rng.random_range(0.0..std::f64::consts::TAU);
                (amplitude, direction, phase)
            })
            .collect();
        let raw: Vec<Vector3<f64>> = base
            .points()
            .iter()
            .map(|p| {
                waves
                    .iter()
                    .map(|(amplitude, direction, phase)| {
                        amplitude * (p.coords.dot(direction) / DEFORMATION_SCALE + phase).sin()
                    })
                    .sum()
            })
            .collect();
        let rms =
            (raw.iter().map(Vector3::norm_squared).sum::<f64>() / raw.len() as f64).sqrt();
        let scale = if rms > 0.0 { magnitude / rms } else { 0.0 };
        let points = base
            .points()
            .iter()
            .zip(&raw)
            .map(|(p, d)| p + d * scale)
            .collect();
        PointCloud::new(points).expect("deformed points are finite")
    }

    pub fn len(&self) -> usize {
        self.parameters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parameters.is_empty()
    }
}

/// Convenience wrapper: the base patch of `PatchFamily::new(n, seed)`.
pub fn bumpy_patch(point_count: usize, seed: u64) -> PointCloud {
    PatchFamily::new(point_count, seed).base()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_deterministic() {
        let a = bumpy_patch(500, 3);
        let b = bumpy_patch(500, 3);
        assert_eq!(a, b);
        let family = PatchFamily::new(200, 9);
        assert_eq!(family.member(4, 1.5), family.member(4, 1.5));
        assert_ne!(family.member(4, 1.5), family.member(5, 1.5));
        assert_ne!(bumpy_patch(500, 3), bumpy_patch(500, 4));
    }

    #[test]
    fn members_share_indices_with_the_base() {
        let family = PatchFamily::new(300, 1);
        let base = family.base();
        let member = family.member(11, 2.0);
        assert_eq!(member.len(), base.len());
        assert_eq!(family.member(11, 0.0), base);
        // The realized RMS displacement equals the requested magnitude.
        let rms = (member
            .points()
            .iter()
            .zip(base.points())
            .map(|(a, b)| (a - b).norm_squared())
            .sum::<f64>()
            / base.len() as f64)
            .sqrt();
        assert!((rms - 2.0).abs() < 1e-9, "rms {rms}");
    }

    #[test]
    fn patch_has_plausible_extent() {
        let cloud = bumpy_patch(1000, 0);
        let diameter = cloud.diameter().unwrap();
        assert!((40.0..110.0).contains(&diameter), "diameter {diameter}");
    }
}
