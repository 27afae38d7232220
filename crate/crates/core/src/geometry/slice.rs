use ndarray::Array2;

use super::{GeometryError, Plane, PlaneImage, Result, Volume};

fn cross(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    [v[0] / n, v[1] / n, v[2] / n]
}

/// Deterministic in-plane basis for a plane normal.
///
/// `e` is the standard axis with the smallest |normal·e| (ties broken in
/// x, y, z order); `u = normalize(normal × e)`, `v = normal × u`.
pub fn plane_basis(normal: [f64; 3]) -> [[f64; 3]; 2] {
    let mut best = 0;
    let mut best_abs = normal[0].abs();
    for i in 1..3 {
        if normal[i].abs() < best_abs {
            best_abs = normal[i].abs();
            best = i;
        }
    }
    let mut e = [0.0; 3];
    e[best] = 1.0;
    let u = normalize(cross(normal, e));
    let v = cross(normal, u);
    [u, v]
}

/// Resample an S×S image of the plane through the volume at unit-voxel
/// spacing, centered on the plane point closest to the volume center.
/// Samples outside the volume read 0.
pub fn slice_volume(vol: &Volume, plane: &Plane, side: usize) -> Result<PlaneImage> {
    if side < 8 {
        return Err(GeometryError::SliceTooSmall(side));
    }
    let center = plane.closest_point_to(vol.center());
    let basis = plane_basis(plane.normal());
    let mut pixels = Array2::<f32>::zeros((side, side));
    let half = (side as f64 - 1.0) / 2.0;
    for i in 0..side {
        let a = i as f64 - half;
        for j in 0..side {
            let b = j as f64 - half;
            let p = [
                center[0] + a * basis[0][0] + b * basis[1][0],
                center[1] + a * basis[0][1] + b * basis[1][1],
                center[2] + a * basis[0][2] + b * basis[1][2],
            ];
            pixels[(i, j)] = vol.sample(p) as f32;
        }
    }
    Ok(PlaneImage {
        pixels,
        plane: *plane,
        basis,
        center,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use ndarray::Array3;

    fn constant_volume(c: f32) -> Volume {
        Volume::new(Array3::from_elem((32, 32, 32), c), 1.0).unwrap()
    }

    fn ramp_volume() -> Volume {
        let mut v = Array3::zeros((32, 32, 32));
        for ((_, _, z), val) in v.indexed_iter_mut() {
            *val = z as f32;
        }
        Volume::new(v, 1.0).unwrap()
    }

    #[test]
    fn basis_is_orthonormal_and_in_plane() {
        let normals = [
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
            [0.0, 0.0, 1.0],
            normalize([1.0, 2.0, 3.0]),
            normalize([-0.3, 0.9, 0.1]),
        ];
        for n in normals {
            let [u, v] = plane_basis(n);
            let dot = |a: [f64; 3], b: [f64; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
            assert_abs_diff_eq!(dot(u, u), 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(dot(v, v), 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(dot(u, v), 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(dot(u, n), 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(dot(v, n), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn constant_volume_slices_constant() {
        let vol = constant_volume(3.5);
        let plane = Plane::from_params(20.0, 75.0, 80.0, 1.0).unwrap();
        let img = slice_volume(&vol, &plane, 8).unwrap();
        // The 8x8 patch around the center stays interior for this plane.
        for &p in img.pixels.iter() {
            assert_abs_diff_eq!(p as f64, 3.5, epsilon = 1e-6);
        }
    }

    #[test]
    fn ramp_volume_reads_plane_height() {
        let vol = ramp_volume();
        // Plane z = center_z + d; take d = 4.5 -> z = 20.
        let plane = Plane::from_params(90.0, 90.0, 0.0, 4.5).unwrap();
        let img = slice_volume(&vol, &plane, 16).unwrap();
        for &p in img.pixels.iter() {
            assert_abs_diff_eq!(p as f64, 20.0, epsilon = 1e-6);
        }
    }

    #[test]
    fn outside_volume_is_zero() {
        let vol = constant_volume(2.0);
        let plane = Plane::from_params(0.0, 90.0, 90.0, 500.0).unwrap();
        let img = slice_volume(&vol, &plane, 8).unwrap();
        assert!(img.pixels.iter().all(|&p| p == 0.0));
    }

    #[test]
    fn translation_equivariance_along_normal() {
        // Moving the content by integer t along z and increasing d by t gives
        // the same interior image for the z-normal plane.
        let mut a = Array3::<f32>::zeros((32, 32, 32));
        for ((x, y, z), val) in a.indexed_iter_mut() {
            *val = ((x * 7 + y * 3 + z * 11) % 17) as f32;
        }
        let mut b = Array3::<f32>::zeros((32, 32, 32));
        let t = 3usize;
        for ((x, y, z), val) in b.indexed_iter_mut() {
            if z >= t {
                *val = a[(x, y, z - t)];
            }
        }
        let va = Volume::new(a, 1.0).unwrap();
        let vb = Volume::new(b, 1.0).unwrap();
        // Content shifted +t along the normal is recovered at d' = d + t.
        let d = 2.0;
        let pa = Plane::from_params(90.0, 90.0, 0.0, d).unwrap();
        let pb = Plane::from_params(90.0, 90.0, 0.0, d + t as f64).unwrap();
        let ia = slice_volume(&va, &pa, 12).unwrap();
        let ib = slice_volume(&vb, &pb, 12).unwrap();
        for (x, y) in ia.pixels.iter().zip(ib.pixels.iter()) {
            assert_abs_diff_eq!(*x, *y, epsilon = 1e-6);
        }
    }

    #[test]
    fn too_small_slice_rejected() {
        let vol = constant_volume(0.0);
        let plane = Plane::from_params(0.0, 90.0, 90.0, 0.0).unwrap();
        assert!(slice_volume(&vol, &plane, 7).is_err());
    }
}
