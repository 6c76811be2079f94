use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use thiserror::Error;

use skyfuse::config::{ConfigError, PipelineConfig};
use skyfuse::eval::{align_clouds, ate_metrics, cloud_rmse, depth_metrics, voxel_downsample, AlignParams, EvalError};
use skyfuse::geometry::{CameraIntrinsics, SimilarityTransform};
use skyfuse::io::{self, Dataset, IoError};
use skyfuse::pipeline::{run_pipeline, PipelineError, RunStatus};
use skyfuse::sampler::{check_pair, ImageBundle, BUNDLE_SIZE};
use skyfuse::sgm::{hierarchical_estimate, SgmError};
use skyfuse::synth::{SceneError, SyntheticScene, DEFAULT_HEIGHT, DEFAULT_WIDTH};

#[derive(Parser)]
#[command(name = "skyfuse", version, about = "Incremental reconstruction from posed aerial image sequences")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic orbit dataset.
    Synth {
        out_dir: PathBuf,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 60)]
        frames: usize,
        /// Orbit step between frames, in degrees.
        #[arg(long, default_value_t = 4.8)]
        step: f64,
        #[arg(long, default_value_t = DEFAULT_WIDTH)]
        width: usize,
        #[arg(long, default_value_t = DEFAULT_HEIGHT)]
        height: usize,
        #[arg(short, long)]
        config: Option<PathBuf>,
    },
    /// Run the full pipeline on a dataset directory.
    Reconstruct {
        dataset: PathBuf,
        out_dir: PathBuf,
        #[arg(short, long)]
        config: Option<PathBuf>,
    },
    /// Estimate the depth map of one five-frame bundle.
    Depth {
        dataset: PathBuf,
        /// Index of the first frame of the bundle.
        start: usize,
        output: PathBuf,
        #[arg(short, long)]
        config: Option<PathBuf>,
    },
    /// Absolute trajectory error after similarity alignment.
    EvalTraj {
        estimate: PathBuf,
        groundtruth: PathBuf,
        #[arg(short, long)]
        config: Option<PathBuf>,
    },
    /// Depth map metrics after median scaling.
    EvalDepth {
        estimate: PathBuf,
        groundtruth: PathBuf,
        #[arg(short, long)]
        config: Option<PathBuf>,
    },
    /// Point cloud error after alignment.
    EvalCloud {
        estimate: PathBuf,
        groundtruth: PathBuf,
        /// Estimated and ground-truth trajectories used to pre-align the clouds.
        #[arg(long, num_args = 2, value_names = ["EST", "GT"])]
        trajectories: Option<Vec<PathBuf>>,
        #[arg(short, long)]
        config: Option<PathBuf>,
    },
}

#[derive(Debug, Error)]
enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Io(#[from] IoError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
    #[error(transparent)]
    Depth(#[from] SgmError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error("reconstruction failed: {0} of {1} registrations failed")]
    Failed(usize, usize),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 2,
            _ => 1,
        }
    }
}

fn load_config(path: &Option<PathBuf>) -> Result<PipelineConfig, CliError> {
    Ok(match path {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    })
}

/// Decimal with at most nine fractional digits and no trailing zeros.
fn num(v: f64) -> String {
    let s = format!("{v:.9}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" {
        "0".into()
    } else {
        s.into()
    }
}

fn synth(
    out_dir: &Path,
    seed: u64,
    frames: usize,
    step: f64,
    width: usize,
    height: usize,
    config: &PipelineConfig,
) -> Result<(), CliError> {
    let mut scene = SyntheticScene::orbit_scene(frames, step, seed);
    if (width, height) != (DEFAULT_WIDTH, DEFAULT_HEIGHT) {
        let s = width as f64 / DEFAULT_WIDTH as f64;
        let k = scene.intrinsics;
        scene.intrinsics = CameraIntrinsics::new(
            k.fx * s,
            k.fy * s,
            (width as f64 - 1.0) / 2.0,
            (height as f64 - 1.0) / 2.0,
            width,
            height,
        )
        .map_err(|e| CliError::Usage(e.to_string()))?;
    }
    if config.eval.voxel > 0.0 {
        scene.gt_voxel = config.eval.voxel;
    }
    let data = io::generate_synthetic(&scene, out_dir)?;
    println!("frames={} gt_points={}", data.len(), data.gt_cloud.map_or(0, |c| c.len()));
    Ok(())
}

fn reconstruct(dataset: &Path, out_dir: &Path, config: &PipelineConfig) -> Result<(), CliError> {
    let data = Dataset::load(dataset)?;
    let out = run_pipeline(config, &data)?;
    std::fs::create_dir_all(out_dir.join("depth")).map_err(|source| IoError::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    io::write_ply(&out.cloud(), &out_dir.join("model.ply"))?;
    if let Some(traj) = out.trajectory() {
        io::write_trajectory(&traj, &out_dir.join("trajectory.txt"))?;
    }
    for d in &out.depth_maps {
        io::write_depth(&d.estimate.depth, &out_dir.join("depth").join(format!("{:06}.pfm", d.reference.id)))?;
    }
    let report = out.report.to_string();
    std::fs::write(out_dir.join("report.txt"), format!("{report}\n")).map_err(|source| IoError::Io {
        path: out_dir.join("report.txt"),
        source,
    })?;
    println!("{report}");
    if out.report.status == RunStatus::Failed {
        return Err(CliError::Failed(out.report.registration_failures, out.report.registrations));
    }
    Ok(())
}

fn depth(dataset: &Path, start: usize, output: &Path, config: &PipelineConfig) -> Result<(), CliError> {
    let data = Dataset::load(dataset)?;
    let frames = data.keyframes();
    let Some(frames) = frames.get(start..start + BUNDLE_SIZE) else {
        return Err(CliError::Usage(format!(
            "a bundle starting at frame {start} needs {BUNDLE_SIZE} frames, the dataset has {}",
            data.len()
        )));
    };
    let criteria = config.sampling_criteria();
    if frames.windows(2).any(|w| !check_pair(&criteria, &w[0].pose, &w[1].pose)) {
        log::warn!("frames {start}..{} do not satisfy the sampling criteria", start + BUNDLE_SIZE);
    }
    let bundle = ImageBundle {
        frames: frames.to_vec(),
        intrinsics: data.intrinsics,
    };
    let est = hierarchical_estimate(&bundle, &config.depth_range()?, &config.depth_params())?;
    io::write_depth(&est.depth, output)?;
    println!("valid={}", est.depth.valid_count());
    if let Some(gt) = data.depth.get(bundle.reference().id as usize) {
        let m = depth_metrics(&est.depth, gt, config.eval.depth_cap)?;
        println!(
            "rmse={} mae={} delta_125={} delta_105={}",
            num(m.rmse),
            num(m.mae),
            num(m.delta_125),
            num(m.delta_105)
        );
    }
    Ok(())
}

fn eval_traj(est: &Path, gt: &Path) -> Result<(), CliError> {
    let m = ate_metrics(&io::read_trajectory(est)?, &io::read_trajectory(gt)?)?;
    println!("rmse={} mae={} sigma={} matched={}", num(m.rmse), num(m.mae), num(m.sigma), m.matched);
    Ok(())
}

fn eval_depth(est: &Path, gt: &Path, config: &PipelineConfig) -> Result<(), CliError> {
    let m = depth_metrics(&io::read_depth(est)?, &io::read_depth(gt)?, config.eval.depth_cap)?;
    println!(
        "rmse={} mae={} delta_125={} delta_105={} count={} scale={}",
        num(m.rmse),
        num(m.mae),
        num(m.delta_125),
        num(m.delta_105),
        m.count,
        num(m.scale)
    );
    Ok(())
}

fn eval_cloud(est: &Path, gt: &Path, trajectories: &Option<Vec<PathBuf>>, config: &PipelineConfig) -> Result<(), CliError> {
    let mut est = io::read_ply(est)?;
    let gt = io::read_ply(gt)?;
    if config.eval.voxel > 0.0 {
        est = voxel_downsample(&est, config.eval.voxel)?;
    }
    let init = match trajectories.as_deref() {
        Some([e, g]) => ate_metrics(&io::read_trajectory(e)?, &io::read_trajectory(g)?)?.alignment,
        _ => SimilarityTransform::identity(),
    };
    let (aligned, sim) = align_clouds(&est, &gt, &init, &AlignParams::default())?;
    println!(
        "rmse={} raw_rmse={} scale={} points={}",
        num(cloud_rmse(&aligned, &gt)),
        num(cloud_rmse(&est.transformed(&init), &gt)),
        num(sim.scale),
        aligned.len()
    );
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth {
            out_dir,
            seed,
            frames,
            step,
            width,
            height,
            config,
        } => synth(&out_dir, seed, frames, step, width, height, &load_config(&config)?),
        Command::Reconstruct { dataset, out_dir, config } => reconstruct(&dataset, &out_dir, &load_config(&config)?),
        Command::Depth {
            dataset,
            start,
            output,
            config,
        } => depth(&dataset, start, &output, &load_config(&config)?),
        Command::EvalTraj { estimate, groundtruth, config } => {
            load_config(&config)?;
            eval_traj(&estimate, &groundtruth)
        }
        Command::EvalDepth { estimate, groundtruth, config } => {
            eval_depth(&estimate, &groundtruth, &load_config(&config)?)
        }
        Command::EvalCloud {
            estimate,
            groundtruth,
            trajectories,
            config,
        } => eval_cloud(&estimate, &groundtruth, &trajectories, &load_config(&config)?),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    // clap exits with status 2 on usage errors
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
