use ndarray::Array3;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::{PhantomError, Result, RigidTransform};
use crate::geometry::{Plane, Volume};

/// A labeled 3-D point in voxel coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct Landmark {
    pub label: String,
    pub p: [f64; 3],
}

/// Generation parameters for one synthetic case.
#[derive(Debug, Clone, PartialEq)]
pub struct PhantomConfig {
    /// Cubic volume side, >= 48.
    pub shape: usize,
    /// Per-plane rotation range (degrees) around its landmark line; keeps all
    /// pairwise ground-truth dihedral angles within 90° ± spread.
    pub angle_spread: f64,
    /// Maximum joint pose rotation, degrees.
    pub max_rotation: f64,
    /// Maximum joint pose translation per axis, voxels.
    pub max_translation: f64,
    /// Multiplicative speckle noise level (std of the factor around 1).
    pub noise: f64,
    /// Landmark annotation jitter: uniform per-coordinate offset in
    /// [-jitter, jitter] applied to the observed landmarks only.
    pub landmark_jitter: f64,
}

impl Default for PhantomConfig {
    fn default() -> Self {
        PhantomConfig {
            shape: 64,
            angle_spread: 12.0,
            max_rotation: 30.0,
            max_translation: 8.0,
            noise: 0.08,
            landmark_jitter: 0.5,
        }
    }
}

impl PhantomConfig {
    pub fn validate(&self) -> Result<()> {
        if self.shape < 48 {
            return Err(PhantomError::InvalidConfig(format!(
                "shape must be >= 48, got {}",
                self.shape
            )));
        }
        if !(0.0..=45.0).contains(&self.angle_spread) {
            return Err(PhantomError::InvalidConfig(format!(
                "angle_spread must be in [0, 45], got {}",
                self.angle_spread
            )));
        }
        if self.noise < 0.0 {
            return Err(PhantomError::InvalidConfig("noise must be >= 0".into()));
        }
        if self.landmark_jitter < 0.0 {
            return Err(PhantomError::InvalidConfig("jitter must be >= 0".into()));
        }
        if self.max_rotation < 0.0 || self.max_translation < 0.0 {
            return Err(PhantomError::InvalidConfig("pose ranges must be >= 0".into()));
        }
        Ok(())
    }
}

/// One synthetic volume with its planted ground truth.
#[derive(Debug, Clone)]
pub struct PhantomCase {
    pub volume: Volume,
    /// Planes indexed 0..3 (mirroring the S/T/C triplet).
    pub gt_planes: [Plane; 3],
    /// Exact landmark positions (each lies on its designated planes).
    pub landmarks: Vec<Landmark>,
    /// Landmarks as an annotator would mark them (jitter applied).
    pub landmarks_observed: Vec<Landmark>,
    pub seed: u64,
    pub meta: PhantomConfig,
}

impl PhantomCase {
    pub fn center(&self) -> [f64; 3] {
        self.volume.center()
    }

    /// Labels of the landmarks planted on plane `k`.
    pub fn designated_landmarks(k: usize) -> [&'static str; 2] {
        match k {
            0 => ["center", "p3"],
            1 => ["center", "p1"],
            _ => ["center", "p2"],
        }
    }
}

fn landmark_radius(shape: usize) -> f64 {
    shape as f64 * 0.2
}

/// The base orthonormal triplet the three planes are built around. All three
/// directions keep an x-component of 1/√3, which holds every ground-truth
/// normal well away from the canonical-sign boundary of the plane
/// representation.
pub(crate) fn base_triplet() -> [[f64; 3]; 3] {
    let a = 1.0 / 3f64.sqrt();
    let b = (2.0 / 3.0f64).sqrt();
    let c = 1.0 / 6f64.sqrt();
    let d = 1.0 / 2f64.sqrt();
    [[a, b, 0.0], [a, -c, d], [a, -c, -d]]
}

/// The canonical landmark configuration of an unperturbed phantom: analytic,
/// seed-independent positions used as the registration atlas.
pub fn atlas_landmarks(shape: usize) -> Vec<Landmark> {
    let c = (shape as f64 - 1.0) / 2.0;
    let r = landmark_radius(shape);
    let s = base_triplet();
    let mut out = vec![Landmark { label: "center".into(), p: [c, c, c] }];
    for (i, dir) in s.iter().enumerate() {
        out.push(Landmark {
            label: format!("p{}", i + 1),
            p: [c + r * dir[0], c + r * dir[1], c + r * dir[2]],
        });
    }
    out
}

struct CanonicalPattern {
    center: [f64; 3],
    semi_axes: [f64; 3],
    /// Plane normals in the canonical (pre-pose) frame.
    normals: [[f64; 3]; 3],
    blob_r: f64,
    landmark_pts: Vec<[f64; 3]>,
}

impl CanonicalPattern {
    /// Analytic intensity at a canonical-frame point.
    fn eval(&self, q: [f64; 3]) -> f64 {
        let c = self.center;
        let rel = [q[0] - c[0], q[1] - c[1], q[2] - c[2]];
        let rho = ((rel[0] / self.semi_axes[0]).powi(2)
            + (rel[1] / self.semi_axes[1]).powi(2)
            + (rel[2] / self.semi_axes[2]).powi(2))
        .sqrt();
        // Smooth organ boundary; background is anechoic.
        let organ = 1.0 / (1.0 + ((rho - 1.0) * 6.0).exp());
        if organ < 1e-4 {
            return 0.0;
        }
        let mut v = 0.55;
        // Mild, distinct intensity ramps along each canonical axis give every
        // slice an orientation- and position-dependent shading.
        v += 0.22 * rel[0] / self.semi_axes[0];
        v += 0.16 * rel[1] / self.semi_axes[1];
        v += 0.10 * rel[2] / self.semi_axes[2];
        // Bright sheet on each target plane plus a step across it, so both
        // the plane position and its near side are visible in-slice.
        let amps = [0.55, 0.48, 0.42];
        for (k, n) in self.normals.iter().enumerate() {
            let s = n[0] * rel[0] + n[1] * rel[1] + n[2] * rel[2];
            v += amps[k] * (-(s / 1.3) * (s / 1.3)).exp();
            v += 0.16 * (s / 2.0).tanh() * (-(s / 5.0) * (s / 5.0)).exp();
        }
        // Bright nodules at the landmark positions anchor the frame.
        for p in &self.landmark_pts {
            let d2 = (q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2) + (q[2] - p[2]).powi(2);
            v += 0.35 * (-d2 / (self.blob_r * self.blob_r)).exp();
        }
        // One off-axis dark inclusion breaks residual mirror symmetries.
        let dk = [c[0] + 0.45 * self.semi_axes[0], c[1] - 0.35 * self.semi_axes[1], c[2] + 0.3 * self.semi_axes[2]];
        let d2 = (q[0] - dk[0]).powi(2) + (q[1] - dk[1]).powi(2) + (q[2] - dk[2]).powi(2);
        v -= 0.3 * (-d2 / (2.2 * self.blob_r * self.blob_r)).exp();
        (v * organ).max(0.0)
    }
}

/// Deterministically generate one case from `(seed, cfg)`.
///
/// Construction: three near-orthogonal planes each rotated by an angle drawn
/// within ±`angle_spread` about the line through its designated landmarks,
/// an ellipsoidal organ with plane-marking sheets and landmark nodules, a
/// joint rigid pose perturbation, and multiplicative speckle noise.
pub fn generate_phantom(seed: u64, cfg: &PhantomConfig) -> Result<PhantomCase> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = cfg.shape;
    let c = (n as f64 - 1.0) / 2.0;
    let center = [c, c, c];

    // Per-plane rotation about its landmark line. With base directions
    // s1, s2, s3 the normals become
    //   n0 = cos(ψ0) s1 + sin(ψ0) s2   (pivot s3, holds center + p3)
    //   n1 = cos(ψ1) s2 + sin(ψ1) s3   (pivot s1, holds center + p1)
    //   n2 = cos(ψ2) s3 + sin(ψ2) s1   (pivot s2, holds center + p2)
    // so each pairwise dot product is sin(ψi)cos(ψj), keeping every
    // dihedral within 90° ± angle_spread.
    let psi: [f64; 3] = [
        rng.gen_range(-cfg.angle_spread..=cfg.angle_spread),
        rng.gen_range(-cfg.angle_spread..=cfg.angle_spread),
        rng.gen_range(-cfg.angle_spread..=cfg.angle_spread),
    ];
    let s = base_triplet();
    let mix = |i: usize, j: usize, psi_deg: f64| -> [f64; 3] {
        let (sn, cs) = psi_deg.to_radians().sin_cos();
        [
            cs * s[i][0] + sn * s[j][0],
            cs * s[i][1] + sn * s[j][1],
            cs * s[i][2] + sn * s[j][2],
        ]
    };
    let canon_normals = [mix(0, 1, psi[0]), mix(1, 2, psi[1]), mix(2, 0, psi[2])];

    // Joint pose.
    let axis = loop {
        let v: [f64; 3] = [
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
            rng.sample::<f64, _>(StandardNormal),
        ];
        let norm = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        if norm > 1e-6 {
            break [v[0] / norm, v[1] / norm, v[2] / norm];
        }
    };
    let angle = rng.gen_range(0.0..=cfg.max_rotation);
    let t = [
        rng.gen_range(-cfg.max_translation..=cfg.max_translation),
        rng.gen_range(-cfg.max_translation..=cfg.max_translation),
        rng.gen_range(-cfg.max_translation..=cfg.max_translation),
    ];
    // Rotate about the volume center, then translate: x' = R(x-c) + c + t.
    let about_center = RigidTransform::from_axis_angle(axis, angle, [0.0; 3]);
    let recenter = {
        let rc = about_center.apply_point(center);
        [
            center[0] - rc[0] + t[0],
            center[1] - rc[1] + t[1],
            center[2] - rc[2] + t[2],
        ]
    };
    let pose = RigidTransform::new(about_center.rotation(), recenter)?;

    // Ground truth in the posed frame.
    let mut gt_planes = Vec::with_capacity(3);
    for nrm in canon_normals {
        let canon = Plane::from_normal(nrm, 0.0)?;
        gt_planes.push(pose.apply_plane(&canon, center)?);
    }
    let gt_planes: [Plane; 3] = [gt_planes[0], gt_planes[1], gt_planes[2]];
    let atlas = atlas_landmarks(n);
    let landmarks: Vec<Landmark> = atlas
        .iter()
        .map(|l| Landmark {
            label: l.label.clone(),
            p: pose.apply_point(l.p),
        })
        .collect();
    let landmarks_observed: Vec<Landmark> = landmarks
        .iter()
        .map(|l| Landmark {
            label: l.label.clone(),
            p: [
                l.p[0] + rng.gen_range(-cfg.landmark_jitter..=cfg.landmark_jitter),
                l.p[1] + rng.gen_range(-cfg.landmark_jitter..=cfg.landmark_jitter),
                l.p[2] + rng.gen_range(-cfg.landmark_jitter..=cfg.landmark_jitter),
            ],
        })
        .collect();

    // Voxel synthesis: evaluate the canonical pattern at the inverse-posed
    // coordinate, then apply speckle.
    let pattern = CanonicalPattern {
        center,
        semi_axes: [0.42 * n as f64, 0.36 * n as f64, 0.3 * n as f64],
        normals: canon_normals,
        blob_r: n as f64 * 0.05,
        landmark_pts: atlas.iter().map(|l| l.p).collect(),
    };
    let unpose = pose.inverse();
    let mut vox = Array3::<f32>::zeros((n, n, n));
    for z in 0..n {
        for y in 0..n {
            for x in 0..n {
                let q = unpose.apply_point([x as f64, y as f64, z as f64]);
                vox[(x, y, z)] = pattern.eval(q) as f32;
            }
        }
    }
    if cfg.noise > 0.0 {
        for z in 0..n {
            for y in 0..n {
                for x in 0..n {
                    let eta: f64 = rng.sample(StandardNormal);
                    let v = vox[(x, y, z)] as f64 * (1.0 + cfg.noise * eta);
                    vox[(x, y, z)] = v.max(0.0) as f32;
                }
            }
        }
    }

    Ok(PhantomCase {
        volume: Volume::new(vox, 1.0)?,
        gt_planes,
        landmarks,
        landmarks_observed,
        seed,
        meta: cfg.clone(),
    })
}
