//! Scan-to-CAD inspection.
//!
//! Registers a scanned point cloud against a reference triangle mesh and
//! reports manufacturing deviation at three levels: the whole part, the
//! analytic surface patches it decomposes into, and its circular holes.

pub mod error;
mod numeric;
pub mod features;
pub mod geometry;
pub mod primitives;
pub mod registration;
pub mod report;

pub use error::{Error, Result};
pub use geometry::{Point3, PointCloud, RigidTransform, TriangleMesh, Vector3};
