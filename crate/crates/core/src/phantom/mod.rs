//! Procedural 3D volumes with planted ground-truth planes and landmarks,
//! plus landmark-based rigid alignment used as the localization warm start.

mod dataset;
mod generator;
mod rigid;

pub use dataset::{load_case, load_dataset, write_case, CASE_DIR_PREFIX};
pub use generator::{atlas_landmarks, generate_phantom, Landmark, PhantomCase, PhantomConfig};
pub use rigid::{align_landmarks, landmark_rmsd, RigidTransform};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum PhantomError {
    #[error("invalid generation config: {0}")]
    InvalidConfig(String),
    #[error("degenerate landmark configuration: {0}")]
    Degenerate(String),
    #[error("landmark label mismatch: {0}")]
    LabelMismatch(String),
    #[error("need at least 3 correspondences, got {0}")]
    TooFewPoints(usize),
    #[error("geometry error: {0}")]
    Geometry(#[from] crate::geometry::GeometryError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed case data: {0}")]
    Malformed(String),
}

pub type Result<T> = std::result::Result<T, PhantomError>;
