use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::geometry::GridSpec;

pub const LATERAL_RADIUS_RANGE: (f64, f64) = (2e-3, 20e-3);
pub const AXIAL_RADIUS_RANGE: (f64, f64) = (2e-3, 10e-3);
pub const ROTATION_RANGE_DEG: (f64, f64) = (-60.0, 60.0);

/// Rotated ellipse in physical coordinates (metres, depth `z`, lateral `x`
/// measured from the grid's top-left node).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Ellipse {
    pub center_z: f64,
    pub center_x: f64,
    pub radius_lateral: f64,
    pub radius_axial: f64,
    /// Rotation of the lateral semi-axis away from the lateral direction.
    pub rotation_deg: f64,
}

impl Ellipse {
    /// Rotated, normalized radius; `<= 1` inside.
    pub fn normalized_radius(&self, z: f64, x: f64) -> f64 {
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        let dz = z - self.center_z;
        let dx = x - self.center_x;
        let u = dx * c + dz * s;
        let v = -dx * s + dz * c;
        ((u / self.radius_lateral).powi(2) + (v / self.radius_axial).powi(2)).sqrt()
    }

    pub fn contains(&self, z: f64, x: f64) -> bool {
        self.normalized_radius(z, x) <= 1.0
    }

    /// Half of the ellipse's extent along depth.
    pub fn axial_half_extent(&self) -> f64 {
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        ((self.radius_lateral * s).powi(2) + (self.radius_axial * c).powi(2)).sqrt()
    }

    pub fn lateral_half_extent(&self) -> f64 {
        let (s, c) = self.rotation_deg.to_radians().sin_cos();
        ((self.radius_lateral * c).powi(2) + (self.radius_axial * s).powi(2)).sqrt()
    }

    /// Grid nodes inside the ellipse.
    pub fn mask(&self, grid: &GridSpec) -> Array2<bool> {
        let mut mask = Array2::from_elem((grid.nz, grid.nx), false);
        self.for_each_inside(grid, |i, j| mask[[i, j]] = true);
        mask
    }

    /// Visit every node inside the ellipse, row-major.
    pub fn for_each_inside(&self, grid: &GridSpec, mut f: impl FnMut(usize, usize)) {
        let hz = self.axial_half_extent();
        let hx = self.lateral_half_extent();
        let lo = |c: f64, h: f64| ((c - h) / grid.dx).floor().max(0.0) as usize;
        let hi = |c: f64, h: f64, n: usize| (((c + h) / grid.dx).ceil().max(0.0) as usize + 1).min(n);
        let (i0, i1) = (lo(self.center_z, hz), hi(self.center_z, hz, grid.nz));
        let (j0, j1) = (lo(self.center_x, hx), hi(self.center_x, hx, grid.nx));
        for i in i0..i1 {
            let z = i as f64 * grid.dx;
            for j in j0..j1 {
                if self.contains(z, j as f64 * grid.dx) {
                    f(i, j);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid() -> GridSpec {
        GridSpec {
            nz: 100,
            nx: 200,
            dx: 1e-4,
            dt: 1e-8,
            cfl: 0.3,
            n_time_steps: 1,
        }
    }

    #[test]
    fn bounding_box_does_not_clip() {
        let e = Ellipse {
            center_z: 5e-3,
            center_x: 10e-3,
            radius_lateral: 4e-3,
            radius_axial: 2e-3,
            rotation_deg: 35.0,
        };
        let g = grid();
        let mask = e.mask(&g);
        for ((i, j), &inside) in mask.indexed_iter() {
            assert_eq!(inside, e.contains(i as f64 * g.dx, j as f64 * g.dx));
        }
        assert!(mask.iter().filter(|&&m| m).count() > 0);
    }

    #[test]
    fn unrotated_extents() {
        let e = Ellipse {
            center_z: 0.0,
            center_x: 0.0,
            radius_lateral: 3.0,
            radius_axial: 1.0,
            rotation_deg: 0.0,
        };
        assert!((e.axial_half_extent() - 1.0).abs() < 1e-12);
        assert!((e.lateral_half_extent() - 3.0).abs() < 1e-12);
        assert!(e.contains(0.99, 0.0));
        assert!(!e.contains(1.01, 0.0));
        assert!(e.contains(0.0, 2.99));
    }
}
