use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::features::{EdgeDetection, McfsParams};
use crate::primitives::{RegionGrowing, Weights};
use crate::{Error, Result};

/// Every tunable of the assessment pipeline.
///
/// Read from a flat TOML document in which every key is optional, so an
/// empty file gives the defaults. Optional values with no key fall back to a
/// rule computed from the data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub weight_fidelity: f64,
    pub weight_simplicity: f64,
    pub weight_completeness: f64,
    /// Inlier distance ε of primitives and circles.
    pub epsilon: f64,
    /// Convergence threshold η of the iterative circle fit.
    pub eta: f64,
    /// Iteration cap I_t of the iterative circle fit.
    pub circle_max_iter: usize,
    pub edge_threshold: f64,
    pub vote_sigma: f64,
    /// Default: four times the point spacing.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vote_radius: Option<f64>,
    pub vote_min_contrast: f64,
    pub icp_max_iter: usize,
    pub icp_tol: f64,
    /// Scan points used to estimate the pose.
    pub icp_max_points: usize,
    /// Default: the larger of 50 000 and twice the scan size.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cad_samples: Option<usize>,
    pub outlier_k: usize,
    pub outlier_stddev: f64,
    pub normal_k: usize,
    pub region_angle_deg: f64,
    pub region_curvature: f64,
    /// Smallest primitive σ. Default: one in 500 points, at least 30.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_points: Option<usize>,
    pub bandwidth: f64,
    pub min_cluster: usize,
    /// Default: 20 per edge point, at most 5000.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub hypotheses: Option<usize>,
    /// Center and radius tolerance when pairing fitted and CAD circles.
    pub match_tol: f64,
    /// Scan points the feature stage works on. Edge detection depends on
    /// curvature estimated over a fixed neighbour count, which becomes noise
    /// dominated once the point spacing nears the scan noise.
    pub feature_max_points: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let w = Weights::default();
        let mcfs = McfsParams::default();
        let edges = EdgeDetection::default();
        let region = RegionGrowing::default();
        PipelineConfig {
            weight_fidelity: w.fidelity,
            weight_simplicity: w.simplicity,
            weight_completeness: w.completeness,
            epsilon: 0.1,
            eta: mcfs.eta,
            circle_max_iter: mcfs.max_iter,
            edge_threshold: edges.threshold,
            vote_sigma: edges.sigma,
            vote_radius: None,
            vote_min_contrast: edges.min_contrast,
            icp_max_iter: crate::registration::DEFAULT_MAX_ITER,
            icp_tol: crate::registration::DEFAULT_TOL,
            icp_max_points: 50_000,
            cad_samples: None,
            outlier_k: 8,
            outlier_stddev: 3.0,
            normal_k: region.k,
            region_angle_deg: region.angle_threshold.to_degrees(),
            region_curvature: region.curvature_threshold,
            min_points: None,
            bandwidth: mcfs.bandwidth,
            min_cluster: mcfs.min_cluster,
            hypotheses: None,
            match_tol: 0.2,
            feature_max_points: 60_000,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: PipelineConfig = toml::from_str(text).map_err(|e| {
            let location = e.span().map_or_else(|| "document".to_string(), |s| format!("bytes {}..{}", s.start, s.end));
            Error::parse("<config>", location, e.message())
        })?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Parse { location, message, .. } => Error::parse(path, location, message),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn weights(&self) -> Weights {
        Weights {
            fidelity: self.weight_fidelity,
            simplicity: self.weight_simplicity,
            completeness: self.weight_completeness,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.weights().validate()?;
        let positive = [
            ("epsilon", self.epsilon),
            ("eta", self.eta),
            ("edge_threshold", self.edge_threshold),
            ("vote_sigma", self.vote_sigma),
            ("icp_tol", self.icp_tol),
            ("outlier_stddev", self.outlier_stddev),
            ("region_angle_deg", self.region_angle_deg),
            ("region_curvature", self.region_curvature),
            ("bandwidth", self.bandwidth),
            ("match_tol", self.match_tol),
        ];
        for (name, v) in positive.into_iter().chain(self.vote_radius.map(|r| ("vote_radius", r))) {
            if !(v > 0.0) || v.is_nan() {
                return Err(Error::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.vote_min_contrast >= 0.0) {
            return Err(Error::InvalidArgument("vote_min_contrast must be non-negative".into()));
        }
        let counts = [
            ("circle_max_iter", self.circle_max_iter),
            ("icp_max_iter", self.icp_max_iter),
            ("outlier_k", self.outlier_k),
            ("min_cluster", self.min_cluster),
            ("icp_max_points", self.icp_max_points),
            ("feature_max_points", self.feature_max_points),
            ("cad_samples", self.cad_samples.unwrap_or(1)),
            ("min_points", self.min_points.unwrap_or(1)),
            ("hypotheses", self.hypotheses.unwrap_or(1)),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidArgument(format!("{name} must be at least 1")));
        }
        if self.normal_k < 3 {
            return Err(Error::InvalidArgument("normal_k must be at least 3".into()));
        }
        Ok(())
    }

    pub fn edge_detection(&self) -> EdgeDetection {
        EdgeDetection {
            radius: self.vote_radius,
            threshold: self.edge_threshold,
            sigma: self.vote_sigma,
            min_contrast: self.vote_min_contrast,
        }
    }

    pub fn region_growing(&self, cloud_size: usize) -> RegionGrowing {
        RegionGrowing {
            k: self.normal_k,
            angle_threshold: self.region_angle_deg.to_radians(),
            curvature_threshold: self.region_curvature,
            min_points: self
                .min_points
                .unwrap_or_else(|| crate::primitives::Configuration::default_min_points(cloud_size)),
            epsilon: self.epsilon,
            weights: self.weights(),
        }
    }

    pub fn mcfs(&self) -> McfsParams {
        McfsParams {
            inlier_eps: self.epsilon,
            eta: self.eta,
            max_iter: self.circle_max_iter,
            min_cluster: self.min_cluster,
            hypotheses: self.hypotheses,
            bandwidth: self.bandwidth,
            seed: self.seed,
            ..McfsParams::default()
        }
    }

    pub fn cad_sample_count(&self, scan_size: usize) -> usize {
        self.cad_samples.unwrap_or_else(|| (2 * scan_size).max(50_000))
    }
}
