//! Pipeline orchestration, configuration, the assessment report and
//! synthetic test scenes.

pub mod assessment;
pub mod cad;
pub mod config;
pub mod pipeline;
pub mod synth;

pub use assessment::{emit_report, parse_report, AssessmentReport, CircleRow, InputRecord, PrimitiveRow, ReportFormat, StageTimings, FORMAT_VERSION};
pub use cad::{circle_loops, observed_circles, observed_patches, smooth_patches, CadCircle, SmoothPatches};
pub use config::PipelineConfig;
pub use pipeline::{assess, global_error, run_pipeline, Assessment, OutputOptions};
pub use synth::{generate_synthetic_scene, write_scene, SceneSpec, SyntheticScene, TruthRecord};
