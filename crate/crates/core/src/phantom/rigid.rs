use nalgebra::{Matrix3, Vector3};
use ndarray::Array3;

use super::{generator::Landmark, PhantomError, Result};
use crate::geometry::{Plane, Volume};

/// A proper rigid motion `x' = R x + t` in voxel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        RigidTransform {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Construct from a rotation matrix and translation, validating that the
    /// rotation is orthonormal with determinant +1.
    pub fn new(rotation: [[f64; 3]; 3], translation: [f64; 3]) -> Result<Self> {
        let r = Matrix3::from_fn(|i, j| rotation[i][j]);
        let rtr = r.transpose() * r;
        let dev = (rtr - Matrix3::identity()).abs().max();
        if dev > 1e-9 {
            return Err(PhantomError::Degenerate(format!(
                "rotation not orthonormal (max deviation {dev:.3e})"
            )));
        }
        if (r.determinant() - 1.0).abs() > 1e-9 {
            return Err(PhantomError::Degenerate(format!(
                "rotation determinant {} != +1",
                r.determinant()
            )));
        }
        Ok(RigidTransform {
            rotation: r,
            translation: Vector3::from_column_slice(&translation),
        })
    }

    /// Rotation about a (non-zero) axis by `degrees`, then translation.
    pub fn from_axis_angle(axis: [f64; 3], degrees: f64, translation: [f64; 3]) -> Self {
        let axis = Vector3::from_column_slice(&axis);
        let r = nalgebra::Rotation3::from_axis_angle(
            &nalgebra::Unit::new_normalize(axis),
            degrees.to_radians(),
        );
        RigidTransform {
            rotation: *r.matrix(),
            translation: Vector3::from_column_slice(&translation),
        }
    }

    pub fn rotation(&self) -> [[f64; 3]; 3] {
        let mut out = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                out[i][j] = self.rotation[(i, j)];
            }
        }
        out
    }

    pub fn translation(&self) -> [f64; 3] {
        [
            self.translation[0],
            self.translation[1],
            self.translation[2],
        ]
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        RigidTransform {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: apply `other` first.
    pub fn compose(&self, other: &RigidTransform) -> Self {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn apply_point(&self, p: [f64; 3]) -> [f64; 3] {
        let v = self.rotation * Vector3::from_column_slice(&p) + self.translation;
        [v[0], v[1], v[2]]
    }

    /// Transform a plane anchored at `center`: the normal rotates and `d` is
    /// recomputed so the transformed point set satisfies the new equation.
    pub fn apply_plane(&self, plane: &Plane, center: [f64; 3]) -> Result<Plane> {
        let n = plane.normal();
        let rn = self.rotation * Vector3::from_column_slice(&n);
        let p0 = self.apply_point(plane.closest_point_to(center));
        let d = rn[0] * (p0[0] - center[0]) + rn[1] * (p0[1] - center[1])
            + rn[2] * (p0[2] - center[2]);
        Ok(Plane::from_normal([rn[0], rn[1], rn[2]], d)?)
    }

    /// Resample a volume under the motion by trilinear pullback:
    /// `out(p) = in(T⁻¹ p)`.
    pub fn apply_volume(&self, vol: &Volume) -> Result<Volume> {
        let inv = self.inverse();
        let s = vol.shape();
        let mut out = Array3::<f32>::zeros((s[0], s[1], s[2]));
        for ((x, y, z), v) in out.indexed_iter_mut() {
            let q = inv.apply_point([x as f64, y as f64, z as f64]);
            *v = vol.sample(q) as f32;
        }
        Ok(Volume::new(out, vol.spacing())?)
    }
}

/// Least-squares rigid alignment (rotation + translation, no scaling) of
/// labeled source points onto labeled atlas points, minimizing
/// Σ‖R·src_i + t − atlas_i‖². Solved in closed form via the orthogonal
/// Procrustes construction with determinant correction.
pub fn align_landmarks(src: &[Landmark], atlas: &[Landmark]) -> Result<RigidTransform> {
    if src.len() < 3 {
        return Err(PhantomError::TooFewPoints(src.len()));
    }
    // Pair by label.
    let mut pairs = Vec::with_capacity(src.len());
    for s in src {
        let a = atlas
            .iter()
            .find(|a| a.label == s.label)
            .ok_or_else(|| PhantomError::LabelMismatch(s.label.clone()))?;
        pairs.push((Vector3::from_column_slice(&s.p), Vector3::from_column_slice(&a.p)));
    }
    let n = pairs.len() as f64;
    let cs: Vector3<f64> = pairs.iter().map(|(s, _)| s).sum::<Vector3<f64>>() / n;
    let ca: Vector3<f64> = pairs.iter().map(|(_, a)| a).sum::<Vector3<f64>>() / n;

    let mut h = Matrix3::zeros();
    for (s, a) in &pairs {
        h += (s - cs) * (a - ca).transpose();
    }
    // Collinearity check: the centered source must span at least a plane.
    let svd_h = h.svd(true, true);
    let centered_rank_proxy = {
        // Use the source scatter's singular values directly.
        let mut scatter = Matrix3::zeros();
        for (s, _) in &pairs {
            scatter += (s - cs) * (s - cs).transpose();
        }
        let sv = scatter.symmetric_eigen().eigenvalues;
        let mut v: Vec<f64> = sv.iter().cloned().collect();
        v.sort_by(|a, b| b.partial_cmp(a).unwrap());
        v[1].max(0.0).sqrt()
    };
    if centered_rank_proxy < 1e-9 {
        return Err(PhantomError::Degenerate(
            "source landmarks are collinear".into(),
        ));
    }
    let u = svd_h.u.ok_or_else(|| PhantomError::Degenerate("svd failed".into()))?;
    let vt = svd_h.v_t.ok_or_else(|| PhantomError::Degenerate("svd failed".into()))?;
    let v = vt.transpose();
    let mut r = v * u.transpose();
    if r.determinant() < 0.0 {
        let mut v2 = v;
        for i in 0..3 {
            v2[(i, 2)] = -v2[(i, 2)];
        }
        r = v2 * u.transpose();
    }
    let t = ca - r * cs;
    Ok(RigidTransform {
        rotation: r,
        translation: t,
    })
}

/// Root-mean-square distance between correspondingly labeled point sets.
pub fn landmark_rmsd(a: &[Landmark], b: &[Landmark]) -> f64 {
    let mut s = 0.0;
    let mut n = 0usize;
    for la in a {
        if let Some(lb) = b.iter().find(|l| l.label == la.label) {
            for i in 0..3 {
                let e = la.p[i] - lb.p[i];
                s += e * e;
            }
            n += 1;
        }
    }
    (s / n as f64).sqrt()
}
