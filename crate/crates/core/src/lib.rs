//! Collaborative multi-agent Q-learning with architecture-searched agents for
//! localizing multiple planes in 3D volumes.
//!
//! The crate is organized around the training pipeline:
//!
//! * [`geometry`] — plane parametrization, oblique slicing, spatial/content metrics
//! * [`phantom`] — procedural volumes with planted ground-truth planes and landmarks
//! * [`env`] — the multi-agent episodic environment (step, reward, rollout)
//! * [`replay`] — prioritized experience replay
//! * [`nn`] — a small reverse-mode autodiff engine the networks are built on
//! * [`nas`] — cell search spaces, GDAS/DARTS sampling, genotype derivation
//! * [`qlearn`] — DDQN training and architecture-search loops
//! * [`eval`] — test-time metrics, aggregation and comparison reports
//! * [`expconfig`] — flat key=value experiment configuration

pub mod env;
pub mod eval;
pub mod expconfig;
pub mod geometry;
pub mod nas;
pub mod nn;
pub mod phantom;
pub mod qlearn;
pub mod replay;

pub use env::{ActionId, MultiAgentEnv, MultiAgentState, Transition};
pub use geometry::{Plane, PlaneImage, Volume};
pub use nas::{ArchParams, Genotype};
pub use phantom::{PhantomCase, RigidTransform};
pub use qlearn::TrainerConfig;
pub use replay::ReplayBuffer;
