//! Feature level: edge points from curvature-weighted tensor voting, circles
//! from multi-circle fitting, and the metrics comparing them to a reference.

pub mod circle;
pub mod mcfs;
pub mod metrics;
pub mod tensor;

pub use circle::{circle_change, circumcircle, fit_circle, fit_circle_iterative, point_to_circle_distance, Circle3D, IterativeCircleFit};
pub use mcfs::{
    cluster_labels, generate_hypotheses, generate_local_hypotheses, mcfs, reduce_hypotheses, refine_coverage, residual_matrix,
    CircleHypothesis, CircleLabeling, McfsParams, ResidualMatrix,
};
pub use metrics::{feature_level_error, fn_fp_counts, match_circles, misclassification_error, FeatureError};
pub use tensor::{default_vote_radius, detect_edge_points, edge_scores, tensor_vote, EdgeDetection, VoteTensor};
