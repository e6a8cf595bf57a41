use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::PipelineConfig;
use crate::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

/// Wall-clock seconds per pipeline stage.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct StageTimings {
    pub registration: f64,
    pub global: f64,
    pub part: f64,
    pub feature: f64,
    /// From input loading to the finished report.
    pub total: f64,
}

/// One row of the primitive table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimitiveRow {
    pub kind: String,
    pub inliers: usize,
    pub fit_rms: f64,
    /// Mean and largest inlier distance to the CAD surface.
    pub deviation_mean: f64,
    pub deviation_max: f64,
}

/// One row of the circle table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CircleRow {
    pub center: [f64; 3],
    pub radius: f64,
    pub normal: [f64; 3],
    pub inliers: usize,
    /// Index of the paired CAD circle.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub radius_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub centroid_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputRecord {
    pub scan: String,
    pub scan_sha256: String,
    pub scan_points: usize,
    pub mesh: String,
    pub mesh_sha256: String,
    pub mesh_triangles: usize,
}

/// The three-level assessment of one scan against its CAD model.
///
/// Field order is the order of the structured output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssessmentReport {
    pub format_version: u32,
    pub e_reg: f64,
    pub e_global: f64,
    pub e_part_avg: f64,
    pub e_part_max: f64,
    pub e_comp_radius_avg: f64,
    pub e_comp_radius_max: f64,
    pub e_comp_centroid_avg: f64,
    pub e_comp_centroid_max: f64,
    pub f_n: usize,
    pub f_p: usize,
    pub outliers_removed: usize,
    pub edge_points: usize,
    pub reference_circles: usize,
    /// Scan-to-CAD transform as a row-major 4 × 4 matrix.
    pub transform: [[f64; 4]; 4],
    pub icp_iterations: usize,
    pub icp_converged: bool,
    pub timings: StageTimings,
    pub inputs: InputRecord,
    pub config: PipelineConfig,
    pub primitives: Vec<PrimitiveRow>,
    pub circles: Vec<CircleRow>,
}

/// Output flavour of [`emit_report`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    /// Versioned TOML document.
    Structured,
    /// Aligned text tables.
    Human,
}

impl AssessmentReport {
    /// The same report with every timing zeroed, for run-to-run comparison.
    pub fn without_timings(&self) -> AssessmentReport {
        AssessmentReport {
            timings: StageTimings::default(),
            ..self.clone()
        }
    }

    fn check_finite(&self) -> Result<()> {
        let t = &self.timings;
        let mut values = vec![
            self.e_reg,
            self.e_global,
            self.e_part_avg,
            self.e_part_max,
            self.e_comp_radius_avg,
            self.e_comp_radius_max,
            self.e_comp_centroid_avg,
            self.e_comp_centroid_max,
            t.registration,
            t.global,
            t.part,
            t.feature,
            t.total,
        ];
        values.extend(self.transform.iter().flatten());
        for p in &self.primitives {
            values.extend([p.fit_rms, p.deviation_mean, p.deviation_max]);
        }
        for c in &self.circles {
            values.extend(c.center.iter().chain(&c.normal).chain([&c.radius]));
            values.extend(c.radius_error.into_iter().chain(c.centroid_error));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("report holds a non-finite value".into()));
        }
        Ok(())
    }

    pub fn to_structured(&self) -> Result<String> {
        self.check_finite()?;
        toml::to_string(self).map_err(|e| Error::InvalidArgument(format!("report serialization: {e}")))
    }

    pub fn from_structured(text: &str) -> Result<AssessmentReport> {
        let report: AssessmentReport = toml::from_str(text).map_err(|e| {
            let location = e.span().map_or_else(|| "document".to_string(), |s| format!("bytes {}..{}", s.start, s.end));
            Error::parse("<report>", location, e.message())
        })?;
        if report.format_version != FORMAT_VERSION {
            return Err(Error::parse(
                "<report>",
                "format_version",
                format!("unsupported format version {}", report.format_version),
            ));
        }
        Ok(report)
    }

    pub fn to_human(&self) -> String {
        let mut s = String::new();
        let i = &self.inputs;
        let _ = writeln!(s, "Assessment report (format {})", self.format_version);
        let _ = writeln!(s, "  scan  {} ({} points, sha256 {})", i.scan, i.scan_points, short(&i.scan_sha256));
        let _ = writeln!(s, "  mesh  {} ({} triangles, sha256 {})", i.mesh, i.mesh_triangles, short(&i.mesh_sha256));
        let _ = writeln!(s, "  seed  {}", self.config.seed);
        s.push('\n');

        let rows = [
            ("Registration", "E_reg", fmt(self.e_reg)),
            ("Global", "E_global (RMSE)", fmt(self.e_global)),
            ("Part", "E_part avg", fmt(self.e_part_avg)),
            ("", "E_part max", fmt(self.e_part_max)),
            ("Feature", "radius avg", fmt(self.e_comp_radius_avg)),
            ("", "radius max", fmt(self.e_comp_radius_max)),
            ("", "centroid avg", fmt(self.e_comp_centroid_avg)),
            ("", "centroid max", fmt(self.e_comp_centroid_max)),
            ("", "f_n / f_p", format!("{} / {}", self.f_n, self.f_p)),
        ];
        let _ = writeln!(s, "{:<14}{:<18}{:>12}", "Level", "Error", "Value");
        for (level, name, value) in rows {
            let _ = writeln!(s, "{level:<14}{name:<18}{value:>12}");
        }
        s.push('\n');

        let t = &self.timings;
        let _ = writeln!(s, "{:<14}{:>8}{:>8}{:>8}{:>8}{:>8}", "Time (s)", "reg", "global", "part", "feature", "total");
        let _ = writeln!(
            s,
            "{:<14}{:>8.1}{:>8.1}{:>8.1}{:>8.1}{:>8.1}",
            "", t.registration, t.global, t.part, t.feature, t.total
        );
        s.push('\n');

        let _ = writeln!(s, "Primitives ({})", self.primitives.len());
        let _ = writeln!(s, "{:>4}  {:<9}{:>9}{:>12}{:>12}{:>12}", "#", "kind", "inliers", "fit rms", "dev mean", "dev max");
        for (k, p) in self.primitives.iter().enumerate() {
            let _ = writeln!(
                s,
                "{k:>4}  {:<9}{:>9}{:>12}{:>12}{:>12}",
                p.kind,
                p.inliers,
                fmt(p.fit_rms),
                fmt(p.deviation_mean),
                fmt(p.deviation_max)
            );
        }
        s.push('\n');

        let _ = writeln!(s, "Circles ({} fitted, {} on the CAD model)", self.circles.len(), self.reference_circles);
        let _ = writeln!(
            s,
            "{:>4}  {:>30}{:>10}{:>9}{:>6}{:>12}{:>12}",
            "#", "center", "radius", "inliers", "ref", "d radius", "d center"
        );
        for (k, c) in self.circles.iter().enumerate() {
            let center = format!("({:.3}, {:.3}, {:.3})", c.center[0], c.center[1], c.center[2]);
            let opt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), fmt);
            let _ = writeln!(
                s,
                "{k:>4}  {center:>30}{:>10.4}{:>9}{:>6}{:>12}{:>12}",
                c.radius,
                c.inliers,
                c.reference.map_or_else(|| "-".to_string(), |r| r.to_string()),
                opt(c.radius_error),
                opt(c.centroid_error)
            );
        }
        s
    }
}

fn fmt(v: f64) -> String {
    format!("{v:.5}")
}

fn short(hash: &str) -> &str {
    &hash[..hash.len().min(12)]
}

/// Writes `report` to `path` in the given format.
pub fn emit_report(report: &AssessmentReport, path: impl AsRef<Path>, format: ReportFormat) -> Result<()> {
    let path = path.as_ref();
    let text = match format {
        ReportFormat::Structured => report.to_structured()?,
        ReportFormat::Human => report.to_human(),
    };
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn parse_report(path: impl AsRef<Path>) -> Result<AssessmentReport> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    AssessmentReport::from_structured(&text).map_err(|e| match e {
        Error::Parse { location, message, .. } => Error::parse(path, location, message),
        other => other,
    })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn zero_report() -> AssessmentReport {
        AssessmentReport {
            format_version: FORMAT_VERSION,
            e_reg: 0.0,
            e_global: 0.0,
            e_part_avg: 0.0,
            e_part_max: 0.0,
            e_comp_radius_avg: 0.0,
            e_comp_radius_max: 0.0,
            e_comp_centroid_avg: 0.0,
            e_comp_centroid_max: 0.0,
            f_n: 0,
            f_p: 0,
            outliers_removed: 0,
            edge_points: 0,
            reference_circles: 0,
            transform: crate::RigidTransform::identity().to_rows(),
            icp_iterations: 0,
            icp_converged: true,
            timings: StageTimings::default(),
            inputs: InputRecord {
                scan: "scan.ply".into(),
                scan_sha256: "0".repeat(64),
                scan_points: 0,
                mesh: "part.obj".into(),
                mesh_sha256: "f".repeat(64),
                mesh_triangles: 0,
            },
            config: PipelineConfig::default(),
            primitives: Vec::new(),
            circles: Vec::new(),
        }
    }

    fn sample_report() -> AssessmentReport {
        AssessmentReport {
            e_reg: 0.0123456789,
            e_global: 1.0 / 3.0,
            e_part_max: 2.5e-7,
            f_n: 1,
            timings: StageTimings {
                registration: 1.25,
                global: 0.05,
                part: 2.0,
                feature: 3.5,
                total: 6.9,
            },
            primitives: vec![PrimitiveRow {
                kind: "plane".into(),
                inliers: 1200,
                fit_rms: 0.004,
                deviation_mean: 0.003,
                deviation_max: 0.02,
            }],
            circles: vec![
                CircleRow {
                    center: [1.0, 2.0, 0.1 + 0.2],
                    radius: 0.3,
                    normal: [0.0, 0.0, 1.0],
                    inliers: 60,
                    reference: Some(3),
                    radius_error: Some(0.01),
                    centroid_error: Some(0.02),
                },
                CircleRow {
                    center: [5.0, 5.0, 0.0],
                    radius: 1.0,
                    normal: [0.0, 1.0, 0.0],
                    inliers: 30,
                    reference: None,
                    radius_error: None,
                    centroid_error: None,
                },
            ],
            config: PipelineConfig {
                vote_radius: Some(0.2),
                ..PipelineConfig::default()
            },
            ..zero_report()
        }
    }

    #[test]
    fn structured_round_trip() {
        let r = sample_report();
        let text = r.to_structured().unwrap();
        assert_eq!(AssessmentReport::from_structured(&text).unwrap(), r);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.toml");
        emit_report(&r, &path, ReportFormat::Structured).unwrap();
        assert_eq!(parse_report(&path).unwrap(), r);
    }

    #[test]
    fn field_order_is_fixed() {
        let text = sample_report().to_structured().unwrap();
        assert!(text.starts_with("format_version = 1\ne_reg = "));
        let pos = |key: &str| text.find(&format!("\n{key} ")).unwrap_or_else(|| panic!("{key}"));
        let keys = ["e_reg", "e_global", "e_part_avg", "e_part_max", "e_comp_radius_avg", "e_comp_centroid_max", "f_n", "f_p"];
        assert!(keys.windows(2).all(|w| pos(w[0]) < pos(w[1])));
        assert_eq!(text, sample_report().to_structured().unwrap());
    }

    #[test]
    fn zero_report_renders_cleanly() {
        let r = zero_report();
        for text in [r.to_structured().unwrap(), r.to_human()] {
            let lower = text.to_lowercase();
            assert!(!lower.contains("nan") && !lower.contains("inf"), "{text}");
        }
        assert_eq!(AssessmentReport::from_structured(&r.to_structured().unwrap()).unwrap(), r);
    }

    #[test]
    fn human_table_rounds_timings() {
        let text = sample_report().to_human();
        assert!(text.contains("     1.2     0.1     2.0     3.5     6.9") || text.contains("     1.3     0.1     2.0     3.5     6.9"), "{text}");
        assert!(text.contains("f_n / f_p"));
    }

    #[test]
    fn rejects_bad_documents() {
        let mut r = sample_report();
        r.e_global = f64::NAN;
        assert!(r.to_structured().is_err());
        let text = sample_report().to_structured().unwrap().replace("format_version = 1", "format_version = 2");
        assert!(AssessmentReport::from_structured(&text).is_err());
        assert!(AssessmentReport::from_structured("e_reg = 1.0").is_err());
        let dir = tempfile::tempdir().unwrap();
        assert!(emit_report(&r, dir.path().join("missing/report.toml"), ReportFormat::Human).is_err());
    }
}
