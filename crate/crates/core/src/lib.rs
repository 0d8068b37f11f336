//! Actionable-object occupancy modeling at desk scale.
//!
//! The crate generates keypoint-annotated occupancy datasets from analytic
//! deformation engines (forward kinematics, linear blend skinning, convex
//! soft fields), trains a cascaded-attention occupancy model end-to-end
//! with BCE, and evaluates it against retrieval baselines with volumetric
//! metrics, a sensor-gap study, and attention attribution.
//!
//! Module map:
//! - [`numerics`] — tensors, reverse-mode autodiff, attention, Adam
//! - [`deform`] — FK / LBS / soft deformation maps and keypoint attachment
//! - [`datagen`] — procedural objects, voxelization, sampling, sensor sim
//! - [`model`] — the token/keypoint cascade, training, checkpointing
//! - [`baselines`] — storage-budgeted retrieval baselines
//! - [`eval`] — dense grid query, metrics, error maps, attribution

pub mod baselines;
pub mod datagen;
pub mod deform;
pub mod error;
pub mod eval;
pub mod geo;
pub mod model;
pub mod numerics;

pub use error::{Error, Result};
