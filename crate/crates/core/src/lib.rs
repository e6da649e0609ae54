//! Desk-scale offline reinforcement learning for trajectory-level driving
//! policies: a deterministic 2D closed-loop simulator, k-means trajectory
//! action vocabularies, fixed-dataset collection from noisy behavior
//! policies, behavior-regularized discrete actor-critic training, and
//! closed-loop safety/efficiency evaluation.
//!
//! The math layer (geometry, clustering, networks) is generic over the
//! [`scalar::Real`] scalar; the pipeline binds everything to [`Scalar`]
//! (f64) through the concrete aliases below, and all file formats store
//! 64-bit floats.

pub mod geometry;
pub mod hashing;
pub mod io;
pub mod neural;
pub mod pseudo_expert;
pub mod scalar;
pub mod simulator;
pub mod vocabulary;

pub use scalar::Real;

/// Pipeline-wide scalar. Gradient checks and byte-stable artifacts assume
/// 64-bit floats.
pub type Scalar = f64;

pub type Pose2D = geometry::Pose2D<Scalar>;
pub type Polyline = geometry::Polyline<Scalar>;
pub type OrientedBox = geometry::OrientedBox<Scalar>;
pub type Projection = geometry::Projection<Scalar>;
pub type Trajectory = vocabulary::Trajectory<Scalar>;
pub type ActionVocabulary = vocabulary::ActionVocabulary<Scalar>;
pub type MlpParams = neural::MlpParams<Scalar>;
pub type OptimizerState = neural::OptimizerState<Scalar>;
pub type TargetParams = neural::TargetParams<Scalar>;
pub type NetworkCheckpoint = neural::NetworkCheckpoint<Scalar>;
