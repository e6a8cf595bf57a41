use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::assessment::{AssessmentReport, CircleRow, InputRecord, PrimitiveRow, ReportFormat, StageTimings, FORMAT_VERSION};
use super::cad::observed_circles;
use super::config::PipelineConfig;
use crate::features::{detect_edge_points, feature_level_error, match_circles, mcfs, Circle3D, CircleLabeling};
use crate::geometry::io::{load_mesh, load_point_cloud, write_ply_points, write_ply_polylines, PlyChannels};
use crate::geometry::{estimate_normals_and_curvature, remove_outliers, sample_mesh};
use crate::primitives::{part_level_error, refine, region_grow};
use crate::registration::{register, registration_error};
use crate::{Error, PointCloud, Result, TriangleMesh};

/// Segments of the circle polylines in diagnostic output.
pub const CIRCLE_SEGMENTS: usize = 64;

/// Root mean square distance of the registered points to the mesh surface.
pub fn global_error(registered: &PointCloud, mesh: &TriangleMesh) -> Result<f64> {
    if registered.is_empty() {
        return Err(Error::InvalidArgument("global error needs a non-empty cloud".into()));
    }
    let sq: Vec<f64> = registered.points().par_iter().map(|p| mesh.distance(p).powi(2)).collect();
    Ok((sq.iter().sum::<f64>() / sq.len() as f64).sqrt())
}

/// Sorted indices of at most `max` of `n` items, drawn with `seed`.
fn subsample(n: usize, max: usize, seed: u64) -> Vec<usize> {
    if n <= max {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = rand::seq::index::sample(&mut rng, n, max).into_vec();
    keep.sort_unstable();
    keep
}

/// The report together with the intermediate data behind it.
#[derive(Debug, Clone)]
pub struct Assessment {
    pub report: AssessmentReport,
    /// The filtered scan in the CAD frame, with normals and curvatures.
    pub registered: PointCloud,
    /// Primitive id per registered point, `-1` when unassigned.
    pub segments: Vec<i32>,
    /// Indices into `registered`.
    pub edge_points: Vec<usize>,
    pub circles: CircleLabeling,
    pub reference_circles: Vec<Circle3D>,
}

/// Which diagnostic files [`Assessment::write`] adds next to the report.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OutputOptions {
    pub dump_segments: bool,
    pub dump_edges: bool,
    pub dump_circles: bool,
    /// ASCII rather than binary PLY.
    pub ascii: bool,
}

fn in_stage<T>(stage: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Stage {
        stage,
        source: Box::new(e),
    })
}

fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(format!("{:x}", Sha256::digest(&bytes)))
}

/// Loads both inputs and runs [`assess`]. Failures are tagged with the stage
/// they happened in; loading counts as the `load` stage.
pub fn run_pipeline(scan_path: impl AsRef<Path>, mesh_path: impl AsRef<Path>, config: &PipelineConfig) -> Result<Assessment> {
    let start = Instant::now();
    let (scan_path, mesh_path) = (scan_path.as_ref(), mesh_path.as_ref());
    let (scan, mesh, inputs) = in_stage(
        "load",
        (|| {
            config.validate()?;
            let scan = load_point_cloud(scan_path)?;
            let mesh = load_mesh(mesh_path)?;
            let inputs = InputRecord {
                scan: scan_path.display().to_string(),
                scan_sha256: sha256_file(scan_path)?,
                scan_points: scan.len(),
                mesh: mesh_path.display().to_string(),
                mesh_sha256: sha256_file(mesh_path)?,
                mesh_triangles: mesh.triangles().len(),
            };
            Ok((scan, mesh, inputs))
        })(),
    )?;
    let mut out = assess(&scan, &mesh, config, inputs)?;
    out.report.timings.total = start.elapsed().as_secs_f64();
    Ok(out)
}

/// Registration, then global, part and feature level analysis of an
/// in-memory scan against its CAD mesh.
pub fn assess(scan: &PointCloud, mesh: &TriangleMesh, config: &PipelineConfig, inputs: InputRecord) -> Result<Assessment> {
    let start = Instant::now();
    in_stage("load", config.validate())?;
    let mut timings = StageTimings::default();

    let t = Instant::now();
    let (filtered, removed, target, icp) = in_stage(
        "registration",
        (|| {
            let filtered = remove_outliers(scan, config.outlier_k, config.outlier_stddev);
            if filtered.cloud.len() < 4 {
                return Err(Error::Degenerate("fewer than 4 scan points survive outlier removal".into()));
            }
            let target = sample_mesh(mesh, config.cad_sample_count(filtered.cloud.len()), config.seed)?;
            let source = filtered.cloud.select(&subsample(filtered.cloud.len(), config.icp_max_points, config.seed));
            let icp = register(&source, &target, config.icp_max_iter, config.icp_tol)?;
            Ok((filtered.cloud, filtered.removed, target, icp))
        })(),
    )?;
    let registered = filtered.transformed(&icp.transform);
    let e_reg = registration_error(&registered, &target);
    timings.registration = t.elapsed().as_secs_f64();
    log::info!("registration: E_reg {e_reg:.5} after {} ICP iterations", icp.iterations);

    let t = Instant::now();
    let e_global = in_stage("global", global_error(&registered, mesh))?;
    timings.global = t.elapsed().as_secs_f64();
    log::info!("global: E_global {e_global:.5}");

    let t = Instant::now();
    let (cloud, fine, part) = in_stage(
        "part",
        (|| {
            let cloud = estimate_normals_and_curvature(&registered, config.normal_k)?.cloud;
            let coarse = region_grow(&cloud, &config.region_growing(cloud.len()))?;
            let (fine, stats) = refine(&coarse, &cloud);
            log::info!(
                "part: {} coarse segments, {} after {} operations",
                coarse.primitives.len(),
                fine.primitives.len(),
                stats.applied.len()
            );
            let part = part_level_error(&fine, &cloud, mesh)?;
            Ok((cloud, fine, part))
        })(),
    )?;
    timings.part = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let (edge_points, labeling, references) = in_stage(
        "feature",
        (|| {
            let (sparse, edge_cloud) = if cloud.len() > config.feature_max_points {
                let keep = subsample(cloud.len(), config.feature_max_points, config.seed);
                let sparse = estimate_normals_and_curvature(&registered.select(&keep), config.normal_k)?.cloud;
                (Some(keep), sparse)
            } else {
                (None, cloud.clone())
            };
            let local = detect_edge_points(&edge_cloud, &config.edge_detection())?;
            let pts: Vec<_> = local.iter().map(|&i| edge_cloud.points()[i]).collect();
            let edges: Vec<usize> = match &sparse {
                Some(keep) => local.iter().map(|&i| keep[i]).collect(),
                None => local,
            };
            let labeling = match mcfs(&pts, &config.mcfs()) {
                Ok(l) => l,
                Err(Error::Degenerate(msg)) => {
                    log::warn!("no circle fitting on the edge points: {msg}");
                    CircleLabeling::unlabeled(pts.len())
                }
                Err(e) => return Err(e),
            };
            let refs = observed_circles(mesh, cloud.points(), config.epsilon);
            Ok((edges, labeling, refs))
        })(),
    )?;
    let pairs = match_circles(&labeling.circles, &references, config.match_tol);
    let feature = feature_level_error(&labeling.circles, &references, config.match_tol).ok();
    timings.feature = t.elapsed().as_secs_f64();
    log::info!(
        "feature: {} edge points, {} circles fitted, {} on the CAD model, {} matched",
        edge_points.len(),
        labeling.circles.len(),
        references.len(),
        pairs.len()
    );

    let primitives = fine
        .primitives
        .iter()
        .zip(part.patch_mean.iter().zip(&part.patch_max))
        .map(|(p, (&mean, &max))| PrimitiveRow {
            kind: p.kind().name().to_string(),
            inliers: p.inliers.len(),
            fit_rms: p.fit_rms,
            deviation_mean: mean,
            deviation_max: max,
        })
        .collect();
    let circles = labeling
        .circles
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let reference = pairs.iter().find(|p| p.0 == i).map(|p| p.1);
            CircleRow {
                center: c.center.coords.into(),
                radius: c.radius,
                normal: c.normal.into(),
                inliers: labeling.labels.iter().filter(|&&l| l == i as i32).count(),
                reference,
                radius_error: reference.map(|j| (c.radius - references[j].radius).abs()),
                centroid_error: reference.map(|j| (c.center - references[j].center).norm()),
            }
        })
        .collect();
    timings.total = start.elapsed().as_secs_f64();

    let report = AssessmentReport {
        format_version: FORMAT_VERSION,
        e_reg,
        e_global,
        e_part_avg: part.average,
        e_part_max: part.maximum,
        e_comp_radius_avg: feature.map_or(0.0, |f| f.radius_avg),
        e_comp_radius_max: feature.map_or(0.0, |f| f.radius_max),
        e_comp_centroid_avg: feature.map_or(0.0, |f| f.centroid_avg),
        e_comp_centroid_max: feature.map_or(0.0, |f| f.centroid_max),
        f_n: references.len() - pairs.len(),
        f_p: labeling.circles.len() - pairs.len(),
        outliers_removed: removed,
        edge_points: edge_points.len(),
        reference_circles: references.len(),
        transform: icp.transform.to_rows(),
        icp_iterations: icp.iterations,
        icp_converged: icp.converged,
        timings,
        inputs,
        config: config.clone(),
        primitives,
        circles,
    };
    Ok(Assessment {
        report,
        segments: fine.labels(),
        registered: cloud,
        edge_points,
        circles: labeling,
        reference_circles: references,
    })
}

/// A distinct colour per label, grey for `-1`.
fn label_colors(labels: &[i32]) -> Vec<[u8; 3]> {
    labels
        .iter()
        .map(|&l| {
            if l < 0 {
                return [128, 128, 128];
            }
            // golden-angle hue walk
            let h = (l as f64 * 137.507_764).rem_euclid(360.0) / 60.0;
            let x = (1.0 - (h % 2.0 - 1.0).abs()) * 255.0;
            let (r, g, b) = match h as u32 {
                0 => (255.0, x, 0.0),
                1 => (x, 255.0, 0.0),
                2 => (0.0, 255.0, x),
                3 => (0.0, x, 255.0),
                4 => (x, 0.0, 255.0),
                _ => (255.0, 0.0, x),
            };
            [r as u8, g as u8, b as u8]
        })
        .collect()
}

impl Assessment {
    /// Writes `report.toml`, `report.txt` and the requested diagnostics into
    /// `dir`, creating it if needed. Files are staged under temporary names
    /// and renamed only once all of them were written, so a failure leaves
    /// no partial output behind.
    pub fn write(&self, dir: impl AsRef<Path>, options: &OutputOptions) -> Result<Vec<PathBuf>> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut staged: Vec<(PathBuf, PathBuf)> = Vec::new();
        let result = self.stage_files(dir, options, &mut staged);
        let result = result.and_then(|()| {
            for (tmp, fin) in &staged {
                std::fs::rename(tmp, fin).map_err(|e| Error::io(fin, e))?;
            }
            Ok(())
        });
        match result {
            Ok(()) => Ok(staged.into_iter().map(|(_, f)| f).collect()),
            Err(e) => {
                for (tmp, _) in &staged {
                    let _ = std::fs::remove_file(tmp);
                }
                Err(e)
            }
        }
    }

    fn stage_files(&self, dir: &Path, options: &OutputOptions, staged: &mut Vec<(PathBuf, PathBuf)>) -> Result<()> {
        let mut next = |name: &str| -> PathBuf {
            let fin = dir.join(name);
            let tmp = dir.join(format!(".{name}.partial"));
            staged.push((tmp.clone(), fin));
            tmp
        };
        super::assessment::emit_report(&self.report, next("report.toml"), ReportFormat::Structured)?;
        super::assessment::emit_report(&self.report, next("report.txt"), ReportFormat::Human)?;
        if options.dump_edges {
            let pts: Vec<_> = self.edge_points.iter().map(|&i| self.registered.points()[i]).collect();
            let channels = PlyChannels {
                labels: Some(&self.circles.labels),
                ..PlyChannels::default()
            };
            write_ply_points(next("edges.ply"), &pts, channels, options.ascii)?;
        }
        if options.dump_segments {
            let colors = label_colors(&self.segments);
            let channels = PlyChannels {
                normals: self.registered.normals(),
                colors: Some(&colors),
                labels: Some(&self.segments),
            };
            write_ply_points(next("segments.ply"), self.registered.points(), channels, options.ascii)?;
        }
        if options.dump_circles {
            let rings: Vec<_> = self.circles.circles.iter().map(|c| c.polyline(CIRCLE_SEGMENTS)).collect();
            write_ply_polylines(next("circles.ply"), &rings, true, options.ascii)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::mesh::closest_point_on_triangle;
    use crate::{Point3, Vector3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn square() -> TriangleMesh {
        TriangleMesh::new(
            vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(1.0, 1.0, 0.0),
                Point3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2], [0, 2, 3]],
        )
        .unwrap()
    }

    #[test]
    fn global_error_hand_cases() {
        let cloud = PointCloud::new(vec![Point3::new(0.5, 0.5, 3.0), Point3::new(0.2, 0.7, -4.0)]).unwrap();
        assert!((global_error(&cloud, &square()).unwrap() - 12.5f64.sqrt()).abs() < 1e-12);
        let on = PointCloud::new(vec![Point3::new(0.1, 0.2, 0.0), Point3::new(1.0, 1.0, 0.0)]).unwrap();
        assert!(global_error(&on, &square()).unwrap() < 1e-12);
    }

    #[test]
    fn global_error_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let verts: Vec<Point3> = (0..60).map(|_| Point3::new(rng.random(), rng.random(), rng.random())).collect();
        let tris: Vec<[u32; 3]> = (0..40).map(|k| [k, k + 7, k + 13]).collect();
        let mesh = TriangleMesh::new(verts, tris).unwrap();
        let pts: Vec<Point3> = (0..1000)
            .map(|_| Point3::from(Vector3::new(rng.random(), rng.random(), rng.random()) * 3.0 - Vector3::repeat(1.0)))
            .collect();
        let brute: f64 = pts
            .iter()
            .map(|p| {
                (0..mesh.triangles().len())
                    .map(|t| {
                        let [a, b, c] = mesh.triangle(t);
                        (p - closest_point_on_triangle(p, &a, &b, &c)).norm_squared()
                    })
                    .fold(f64::INFINITY, f64::min)
            })
            .sum::<f64>();
        let e = global_error(&PointCloud::new(pts).unwrap(), &mesh).unwrap();
        assert!((e - (brute / 1000.0).sqrt()).abs() < 1e-9);
    }

    #[test]
    fn label_colors_are_distinct_for_neighbours() {
        let c = label_colors(&[-1, 0, 1, 2, 3]);
        assert_eq!(c[0], [128, 128, 128]);
        assert!(c[1..].windows(2).all(|w| w[0] != w[1]));
    }
}
