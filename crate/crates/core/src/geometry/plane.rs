use super::{GeometryError, Result};

/// A plane in direction-cosine form: `normal · (p - center) + d = 0`.
///
/// `angles` are the direction angles of the canonical unit normal, in
/// degrees; `d` is the signed distance from the volume center, in voxels.
/// The representation is canonicalized so that the first component of the
/// normal with magnitude above 1e-9 is positive (flipping `d` along with
/// the normal leaves the point set unchanged).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    angles: [f64; 3],
    normal: [f64; 3],
    d: f64,
}

impl Plane {
    /// Build a plane from raw direction angles (degrees) and a signed
    /// distance (voxels). The cosine vector is normalized and `d` is rescaled
    /// by the same factor so the point set is preserved.
    pub fn from_params(zeta: f64, beta: f64, phi: f64, d: f64) -> Result<Self> {
        let v = [
            zeta.to_radians().cos(),
            beta.to_radians().cos(),
            phi.to_radians().cos(),
        ];
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if norm < 1e-12 {
            return Err(GeometryError::DegenerateCosines { norm });
        }
        let mut normal = [v[0] / norm, v[1] / norm, v[2] / norm];
        let mut d = d / norm;
        // Canonical sign: first component with |c| > 1e-9 must be positive.
        for c in normal {
            if c.abs() > 1e-9 {
                if c < 0.0 {
                    for n in normal.iter_mut() {
                        *n = -*n;
                    }
                    d = -d;
                }
                break;
            }
        }
        let angles = [
            normal[0].clamp(-1.0, 1.0).acos().to_degrees(),
            normal[1].clamp(-1.0, 1.0).acos().to_degrees(),
            normal[2].clamp(-1.0, 1.0).acos().to_degrees(),
        ];
        Ok(Plane { angles, normal, d })
    }

    /// Plane through the canonical representation of an arbitrary normal
    /// vector (not necessarily unit) and center-distance `d`.
    pub fn from_normal(normal: [f64; 3], d: f64) -> Result<Self> {
        let norm = (normal[0] * normal[0] + normal[1] * normal[1] + normal[2] * normal[2]).sqrt();
        if norm < 1e-12 {
            return Err(GeometryError::DegenerateCosines { norm });
        }
        let angles = [
            (normal[0] / norm).clamp(-1.0, 1.0).acos().to_degrees(),
            (normal[1] / norm).clamp(-1.0, 1.0).acos().to_degrees(),
            (normal[2] / norm).clamp(-1.0, 1.0).acos().to_degrees(),
        ];
        Self::from_params(angles[0], angles[1], angles[2], d / norm)
    }

    /// Direction angles (ζ, β, φ) of the canonical normal, degrees.
    pub fn angles(&self) -> [f64; 3] {
        self.angles
    }

    /// Canonical unit normal.
    pub fn normal(&self) -> [f64; 3] {
        self.normal
    }

    /// Signed distance from the volume center, voxels.
    pub fn d(&self) -> f64 {
        self.d
    }

    /// The plane point closest to the volume center: `center + d * normal`.
    pub fn closest_point_to(&self, center: [f64; 3]) -> [f64; 3] {
        [
            center[0] + self.d * self.normal[0],
            center[1] + self.d * self.normal[1],
            center[2] + self.d * self.normal[2],
        ]
    }

    /// Signed residual of a point against the plane equation
    /// `normal · (p - center) - d`, zero for points on the plane.
    pub fn residual(&self, p: [f64; 3], center: [f64; 3]) -> f64 {
        self.normal[0] * (p[0] - center[0])
            + self.normal[1] * (p[1] - center[1])
            + self.normal[2] * (p[2] - center[2])
            - self.d
    }
}

/// Unsigned dihedral angle between two planes, degrees in [0, 90].
pub fn dihedral_angle(a: &Plane, b: &Plane) -> f64 {
    let na = a.normal();
    let nb = b.normal();
    let dot = (na[0] * nb[0] + na[1] * nb[1] + na[2] * nb[2]).abs();
    dot.clamp(-1.0, 1.0).acos().to_degrees()
}

/// Absolute difference of the canonical signed center distances, voxels.
pub fn origin_distance_diff(a: &Plane, b: &Plane) -> f64 {
    (a.d() - b.d()).abs()
}

/// Euclidean metric over the 4-vector (normal, d / d_norm).
///
/// `d_norm` makes orientation and position errors commensurate; half the
/// volume diagonal is the conventional choice.
#[derive(Debug, Clone, Copy)]
pub struct ParamMetric {
    d_norm: f64,
}

impl ParamMetric {
    pub fn new(d_norm: f64) -> Self {
        assert!(d_norm > 0.0, "d_norm must be positive");
        ParamMetric { d_norm }
    }

    /// Metric for a volume of the given shape: d_norm = half the diagonal.
    pub fn for_shape(shape: [usize; 3]) -> Self {
        let dx = shape[0] as f64;
        let dy = shape[1] as f64;
        let dz = shape[2] as f64;
        Self::new(0.5 * (dx * dx + dy * dy + dz * dz).sqrt())
    }

    pub fn d_norm(&self) -> f64 {
        self.d_norm
    }

    /// ‖(n_p, d_p/D) − (n_g, d_g/D)‖₂ over canonical representations.
    pub fn distance(&self, p: &Plane, g: &Plane) -> f64 {
        let np = p.normal();
        let ng = g.normal();
        let mut s = 0.0;
        for i in 0..3 {
            let e = np[i] - ng[i];
            s += e * e;
        }
        let ed = (p.d() - g.d()) / self.d_norm;
        (s + ed * ed).sqrt()
    }
}
