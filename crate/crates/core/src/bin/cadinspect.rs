use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cadinspect::features::mcfs;
use cadinspect::geometry::io::{load_point_cloud, write_ply_polylines};
use cadinspect::report::pipeline::CIRCLE_SEGMENTS;
use cadinspect::report::{generate_synthetic_scene, run_pipeline, write_scene, OutputOptions, PipelineConfig, SceneSpec};
use cadinspect::Error;

/// Scan-to-CAD manufacturing error assessment. Distances are in model units,
/// millimetres by convention.
#[derive(Parser)]
#[command(name = "cadinspect", version)]
struct Cli {
    /// More log output (-v info, -vv debug). RUST_LOG overrides.
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Register a scan to its CAD mesh and report global, part and feature errors.
    Assess {
        /// Scanned points (PLY or XYZ).
        scan: PathBuf,
        /// CAD mesh (OBJ or PLY).
        mesh: PathBuf,
        /// Flat TOML file of pipeline settings; missing keys keep their defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "assessment")]
        out: PathBuf,
        /// Overrides the seed of the config file.
        #[arg(long)]
        seed: Option<u64>,
        /// Write the registered scan coloured by primitive.
        #[arg(long)]
        dump_segments: bool,
        /// Write the detected edge points.
        #[arg(long)]
        dump_edges: bool,
        /// Write the fitted circles as polylines.
        #[arg(long)]
        dump_circles: bool,
        /// ASCII instead of binary PLY.
        #[arg(long)]
        ascii: bool,
    },
    /// Generate a synthetic scan, mesh and ground truth from a scene spec.
    Synth {
        /// Scene description (TOML).
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        ascii: bool,
    },
    /// Fit circles to a file of edge points.
    FitCircles {
        edges: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Write the circles as polylines to this PLY file.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        ascii: bool,
    },
}

/// Exit code 2 for bad input, 3 for a failure inside the pipeline.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Stage { stage: "load", .. } => 2,
        Error::Stage { .. } => 3,
        _ => 2,
    }
}

fn load_config(path: Option<&PathBuf>, seed: Option<u64>) -> Result<PipelineConfig, Error> {
    let mut config = match path {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = seed {
        config.seed = s;
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Assess {
            scan,
            mesh,
            config,
            out,
            seed,
            dump_segments,
            dump_edges,
            dump_circles,
            ascii,
        } => {
            let config = load_config(config.as_ref(), seed)?;
            let assessment = run_pipeline(&scan, &mesh, &config)?;
            let options = OutputOptions {
                dump_segments,
                dump_edges,
                dump_circles,
                ascii,
            };
            let files = assessment.write(&out, &options).map_err(|e| Error::Stage {
                stage: "output",
                source: Box::new(e),
            })?;
            print!("{}", assessment.report.to_human());
            for f in files {
                eprintln!("wrote {}", f.display());
            }
        }
        Command::Synth { spec, out, seed, ascii } => {
            let spec = SceneSpec::load(&spec)?;
            let scene = generate_synthetic_scene(&spec, seed)?;
            for f in write_scene(&scene, seed, &out, ascii)? {
                eprintln!("wrote {}", f.display());
            }
        }
        Command::FitCircles {
            edges,
            config,
            seed,
            out,
            ascii,
        } => {
            let config = load_config(config.as_ref(), seed)?;
            let cloud = load_point_cloud(&edges)?;
            let labeling = mcfs(cloud.points(), &config.mcfs()).map_err(|e| Error::Stage {
                stage: "feature",
                source: Box::new(e),
            })?;
            println!("{:>4}  {:>12}{:>12}{:>12}{:>10}{:>9}{:>9}{:>9}{:>9}", "#", "x", "y", "z", "radius", "nx", "ny", "nz", "inliers");
            for (k, c) in labeling.circles.iter().enumerate() {
                let inliers = labeling.labels.iter().filter(|&&l| l == k as i32).count();
                println!(
                    "{k:>4}  {:>12.5}{:>12.5}{:>12.5}{:>10.5}{:>9.4}{:>9.4}{:>9.4}{inliers:>9}",
                    c.center.x, c.center.y, c.center.z, c.radius, c.normal.x, c.normal.y, c.normal.z
                );
            }
            if let Some(path) = out {
                let rings: Vec<_> = labeling.circles.iter().map(|c| c.polyline(CIRCLE_SEGMENTS)).collect();
                write_ply_polylines(&path, &rings, true, ascii)?;
                eprintln!("wrote {}", path.display());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
