//! Geometry stack: ground-truth oracles, meshes, isosurface extraction and
//! the metric suite.

pub mod marching;
pub mod mesh;
pub mod metrics;
pub mod oracle;

pub use marching::{marching_cubes, Extraction};
pub use mesh::{icosphere, winding_number, MeshDistance, MeshNormalization, TriBvh, TriMesh};
pub use metrics::{
    chamfer, estimate_normals, volume_metrics, volume_metrics_fn, KdTree, MetricsConfig,
    VolumeMetrics,
};
pub use oracle::{distance_batch_parallel, SdfOracle};
