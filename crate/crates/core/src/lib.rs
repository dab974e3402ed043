//! Object-level semantic mapping and loop closure back-end.
//!
//! The crate takes per-frame 3D object detections and drifting odometry,
//! builds a map of labelled cuboid landmarks, and closes loops by matching
//! scene graphs of those landmarks. A deterministic simulator stands in for
//! the detector and odometry front-ends.
//!
//! Module map:
//!
//! - [`geometry`]: SE(3) algebra, cuboids, projection, IoU.
//! - [`features`]: color histograms, embeddings, detection files.
//! - [`association`]: detection-to-landmark matching and map bookkeeping.
//! - [`solver`] and [`refinement`]: manifold Gauss-Newton and the sliding window.
//! - [`scene_graph`]: graph construction, layout descriptors, match verification.
//! - [`loop_closure`]: drift estimation and frame pose-graph correction.
//! - [`simulation`]: synthetic worlds, trajectories, odometry and detections.
//! - [`evaluation`] and [`pipeline`]: metrics and the end-to-end driver.

pub mod association;
pub mod evaluation;
pub mod features;
pub mod geometry;
pub mod hungarian;
pub mod loop_closure;
pub mod pipeline;
pub mod refinement;
pub mod scene_graph;
pub mod simulation;
pub mod solver;
pub mod tum;

pub use geometry::{BBox2D, CameraIntrinsics, Cuboid, GeometryError, Pose, Twist};
