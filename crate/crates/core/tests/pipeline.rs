use cadinspect::geometry::sample_mesh;
use cadinspect::report::synth::{cube_spec, plate_spec, PoseSpec};
use cadinspect::report::{
    assess, generate_synthetic_scene, parse_report, run_pipeline, write_scene, InputRecord, OutputOptions, PipelineConfig,
};
use cadinspect::Error;

fn synthetic_inputs(points: usize, triangles: usize) -> InputRecord {
    InputRecord {
        scan: "memory".into(),
        scan_sha256: String::new(),
        scan_points: points,
        mesh: "memory".into(),
        mesh_sha256: String::new(),
        mesh_triangles: triangles,
    }
}

#[test]
fn plate_with_sixteen_holes_end_to_end() {
    let mut spec = plate_spec(0.01, 50_000);
    spec.pose = Some(PoseSpec {
        max_rotation_deg: 20.0,
        max_translation: 1.0,
    });
    let scene = generate_synthetic_scene(&spec, 4).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_scene(&scene, 4, dir.path(), false).unwrap();
    let config = PipelineConfig::default();
    let a = run_pipeline(dir.path().join("scan.ply"), dir.path().join("part.obj"), &config).unwrap();
    let r = &a.report;
    assert!((0.008..=0.02).contains(&r.e_global), "E_global {}", r.e_global);
    assert_eq!(r.circles.len(), 16);
    assert_eq!(r.reference_circles, 16);
    assert_eq!((r.f_n, r.f_p), (0, 0));
    assert_eq!(r.inputs.scan_points, 50_000);
    assert_eq!(r.inputs.scan_sha256.len(), 64);

    // same inputs and seed: identical report apart from timings
    let b = run_pipeline(dir.path().join("scan.ply"), dir.path().join("part.obj"), &config).unwrap();
    assert_eq!(a.report.without_timings(), b.report.without_timings());
    assert_eq!(
        a.report.without_timings().to_structured().unwrap(),
        b.report.without_timings().to_structured().unwrap()
    );

    let out = dir.path().join("out");
    let files = a
        .write(
            &out,
            &OutputOptions {
                dump_segments: true,
                dump_edges: true,
                dump_circles: true,
                ascii: false,
            },
        )
        .unwrap();
    assert_eq!(files.len(), 5);
    assert_eq!(parse_report(out.join("report.toml")).unwrap(), a.report);
    assert!(std::fs::read_dir(&out).unwrap().all(|e| !e.unwrap().file_name().to_string_lossy().ends_with(".partial")));
}

#[test]
fn exact_mesh_samples_have_no_error() {
    // with the CAD sample set equal to the scan every level reports zero
    let mesh = generate_synthetic_scene(&cube_spec(4.0, 0.0, 100), 0).unwrap().mesh.unwrap();
    let config = PipelineConfig {
        cad_samples: Some(30_000),
        seed: 2,
        ..PipelineConfig::default()
    };
    let scan = sample_mesh(&mesh, 30_000, 2).unwrap();
    let a = assess(&scan, &mesh, &config, synthetic_inputs(scan.len(), mesh.triangles().len())).unwrap();
    let r = &a.report;
    for (name, v) in [
        ("E_reg", r.e_reg),
        ("E_global", r.e_global),
        ("E_part_avg", r.e_part_avg),
        ("E_part_max", r.e_part_max),
        ("radius avg", r.e_comp_radius_avg),
        ("radius max", r.e_comp_radius_max),
        ("centroid avg", r.e_comp_centroid_avg),
        ("centroid max", r.e_comp_centroid_max),
    ] {
        assert!(v < 1e-6, "{name} = {v}");
    }
    assert_eq!((r.f_n, r.f_p), (0, 0));
    assert_eq!(r.primitives.len(), 6);
}

#[test]
fn missing_mesh_is_a_load_error_and_writes_nothing() {
    let scene = generate_synthetic_scene(&cube_spec(2.0, 0.01, 2_000), 0).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_scene(&scene, 0, dir.path(), true).unwrap();
    let err = run_pipeline(dir.path().join("scan.ply"), dir.path().join("absent.obj"), &PipelineConfig::default()).unwrap_err();
    assert_eq!(err.stage(), Some("load"));
    assert!(matches!(err, Error::Stage { .. }));
    assert!(!dir.path().join("assessment").exists());
}

#[test]
fn invalid_config_is_rejected_before_loading() {
    let config = PipelineConfig {
        weight_fidelity: 0.9,
        ..PipelineConfig::default()
    };
    let err = run_pipeline("nowhere.ply", "nowhere.obj", &config).unwrap_err();
    assert_eq!(err.stage(), Some("load"));
}
