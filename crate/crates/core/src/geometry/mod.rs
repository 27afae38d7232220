//! Plane parametrization, oblique slicing of volumes, and spatial/content
//! similarity metrics.
//!
//! A plane is stored as unit direction cosines plus a signed distance `d`
//! measured from the volume center along the normal: a point `p` lies on the
//! plane iff `normal · (p - center) = d`.

mod io;
mod plane;
mod slice;
mod ssim;
mod volume;

pub use io::{read_plane_line, read_volume, write_plane_line, write_volume};
pub use plane::{dihedral_angle, origin_distance_diff, ParamMetric, Plane};
pub use slice::{plane_basis, slice_volume};
pub use ssim::ssim;
pub use volume::{PlaneImage, Volume};

use thiserror::Error;

/// Errors raised by geometric constructions and metrics.
#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("degenerate direction cosines: |(cos z, cos b, cos p)| = {norm:.3e} < 1e-12")]
    DegenerateCosines { norm: f64 },
    #[error("image shape mismatch: {a:?} vs {b:?}")]
    ShapeMismatch { a: (usize, usize), b: (usize, usize) },
    #[error("invalid volume: {0}")]
    InvalidVolume(String),
    #[error("slice size must be >= 8, got {0}")]
    SliceTooSmall(usize),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed file: {0}")]
    Malformed(String),
}

pub type Result<T> = std::result::Result<T, GeometryError>;
