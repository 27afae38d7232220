use ndarray::{Array2, Array3};

use super::{GeometryError, Plane, Result};

/// A 3-D scalar grid indexed (x, y, z), isotropic spacing.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    voxels: Array3<f32>,
    spacing: f64,
}

impl Volume {
    pub fn new(voxels: Array3<f32>, spacing: f64) -> Result<Self> {
        let shape = voxels.dim();
        if shape.0 < 8 || shape.1 < 8 || shape.2 < 8 {
            return Err(GeometryError::InvalidVolume(format!(
                "shape components must be >= 8, got {:?}",
                shape
            )));
        }
        if !(spacing.is_finite() && spacing > 0.0) {
            return Err(GeometryError::InvalidVolume(format!(
                "spacing must be positive and finite, got {spacing}"
            )));
        }
        if voxels.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::InvalidVolume("non-finite voxel value".into()));
        }
        Ok(Volume { voxels, spacing })
    }

    pub fn shape(&self) -> [usize; 3] {
        let (x, y, z) = self.voxels.dim();
        [x, y, z]
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn voxels(&self) -> &Array3<f32> {
        &self.voxels
    }

    /// Grid center in index coordinates: ((nx-1)/2, (ny-1)/2, (nz-1)/2).
    pub fn center(&self) -> [f64; 3] {
        let s = self.shape();
        [
            (s[0] as f64 - 1.0) / 2.0,
            (s[1] as f64 - 1.0) / 2.0,
            (s[2] as f64 - 1.0) / 2.0,
        ]
    }

    /// Trilinear sample at a continuous index coordinate; 0 outside.
    pub fn sample(&self, p: [f64; 3]) -> f64 {
        let (nx, ny, nz) = self.voxels.dim();
        let (x, y, z) = (p[0], p[1], p[2]);
        if !(x.is_finite() && y.is_finite() && z.is_finite()) {
            return 0.0;
        }
        if x < -1.0 || y < -1.0 || z < -1.0 {
            return 0.0;
        }
        if x > nx as f64 || y > ny as f64 || z > nz as f64 {
            return 0.0;
        }
        let x0 = x.floor();
        let y0 = y.floor();
        let z0 = z.floor();
        let fx = x - x0;
        let fy = y - y0;
        let fz = z - z0;
        let at = |i: i64, j: i64, k: i64| -> f64 {
            if i < 0 || j < 0 || k < 0 || i >= nx as i64 || j >= ny as i64 || k >= nz as i64 {
                0.0
            } else {
                self.voxels[(i as usize, j as usize, k as usize)] as f64
            }
        };
        let (i, j, k) = (x0 as i64, y0 as i64, z0 as i64);
        let c000 = at(i, j, k);
        let c100 = at(i + 1, j, k);
        let c010 = at(i, j + 1, k);
        let c110 = at(i + 1, j + 1, k);
        let c001 = at(i, j, k + 1);
        let c101 = at(i + 1, j, k + 1);
        let c011 = at(i, j + 1, k + 1);
        let c111 = at(i + 1, j + 1, k + 1);
        let c00 = c000 * (1.0 - fx) + c100 * fx;
        let c10 = c010 * (1.0 - fx) + c110 * fx;
        let c01 = c001 * (1.0 - fx) + c101 * fx;
        let c11 = c011 * (1.0 - fx) + c111 * fx;
        let c0 = c00 * (1.0 - fy) + c10 * fy;
        let c1 = c01 * (1.0 - fy) + c11 * fy;
        c0 * (1.0 - fz) + c1 * fz
    }
}

/// An S×S resampled image of a plane through a volume, together with the
/// frame it was sampled in.
#[derive(Debug, Clone)]
pub struct PlaneImage {
    pub pixels: Array2<f32>,
    pub plane: Plane,
    /// Two orthonormal in-plane basis vectors.
    pub basis: [[f64; 3]; 2],
    /// The sampling center (plane point closest to the volume center).
    pub center: [f64; 3],
}

impl PlaneImage {
    pub fn side(&self) -> usize {
        self.pixels.dim().0
    }
}
