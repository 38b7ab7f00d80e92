//! `rayletdf` command-line driver.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{Align, Encoding, SceneKind};
use rayletdf::features::FeatureMode;
use rayletdf::field::BlendMode;

#[derive(Debug, Parser)]
#[command(name = "rayletdf", version, about = "Raylet distance fields: synthesize, train, render, evaluate")]
pub struct Cli {
    /// Seed for every random choice of the run.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Base run configuration; explicit flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write an analytic scene, its cameras and exact distance maps.
    Synth(SynthArgs),
    /// Train a field on a scene and supervised views.
    Train(TrainArgs),
    /// Render distance (and normal) maps from a trained model.
    Render(RenderArgs),
    /// Compare predicted and reference distance maps.
    EvalDepth(EvalDepthArgs),
    /// Fuse distance maps into a TSDF volume and extract a mesh.
    Fuse(FuseArgs),
    /// Compare two meshes.
    EvalMesh(EvalMeshArgs),
    /// Check tiled candidate selection against the exhaustive scan and time both.
    IntersectBench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: Option<String>,
    #[arg(long, value_enum)]
    pub scene: Option<SceneKind>,
    #[arg(long, value_enum)]
    pub encoding: Option<Encoding>,
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long)]
    pub views: Option<usize>,
    #[arg(long)]
    pub test_views: Option<usize>,
    #[arg(long)]
    pub width: Option<u32>,
    #[arg(long)]
    pub height: Option<u32>,
    #[arg(long)]
    pub fov_y: Option<f64>,
    #[arg(long)]
    pub orbit_radius: Option<f64>,
    #[arg(long)]
    pub orbit_height: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Scene PLY (points or Gaussians).
    #[arg(long)]
    pub scene: Option<String>,
    /// View manifest with distance maps.
    #[arg(long)]
    pub manifest: Option<String>,
    /// Precomputed per-point features (implies `--feature-mode loaded`).
    #[arg(long)]
    pub features: Option<String>,
    #[arg(long)]
    pub out: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub batch_rays: Option<usize>,
    #[arg(long)]
    pub max_rays_per_view: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub hidden: Option<usize>,
    #[arg(long)]
    pub hidden_layers: Option<usize>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub channels: Option<usize>,
    #[arg(long, value_parser = parse_feature_mode)]
    pub feature_mode: Option<FeatureMode>,
    #[arg(long)]
    pub include_opacity: Option<bool>,
    #[arg(long)]
    pub pe_frequencies: Option<usize>,
    #[arg(long)]
    pub blend: Option<BlendMode>,
    #[arg(long)]
    pub t_train: Option<usize>,
    #[arg(long)]
    pub t_test: Option<usize>,
    #[arg(long)]
    pub tile_px: Option<u32>,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    /// Training output directory (checkpoint, features, config).
    #[arg(long)]
    pub model: Option<String>,
    /// Scene PLY; defaults to the one the model was trained on.
    #[arg(long)]
    pub scene: Option<String>,
    /// Single camera JSON.
    #[arg(long, conflicts_with = "manifest")]
    pub camera: Option<String>,
    /// View manifest.
    #[arg(long)]
    pub manifest: Option<String>,
    #[arg(long)]
    pub out: Option<String>,
    #[arg(long)]
    pub t_test: Option<usize>,
    /// Also write normal maps.
    #[arg(long)]
    pub normals: bool,
}

#[derive(Debug, Args)]
pub struct EvalDepthArgs {
    /// Predicted distance PFMs.
    #[arg(long, num_args = 1..)]
    pub pred: Vec<String>,
    /// Reference distance PFMs, paired with `--pred` in order.
    #[arg(long, num_args = 1..)]
    pub gt: Vec<String>,
    #[arg(long, value_enum)]
    pub align: Option<Align>,
    #[arg(long)]
    pub delta_threshold: Option<f64>,
    /// Directory for the CSV and config; the CSV always goes to stdout.
    #[arg(long)]
    pub out: Option<String>,
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    /// View manifest with distance maps.
    #[arg(long)]
    pub manifest: Option<String>,
    #[arg(long)]
    pub out: Option<String>,
    #[arg(long)]
    pub voxel: Option<f64>,
    #[arg(long)]
    pub truncation: Option<f64>,
    /// `xmin ymin zmin xmax ymax zmax`.
    #[arg(long, num_args = 6, allow_negative_numbers = true)]
    pub bounds: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
pub struct EvalMeshArgs {
    /// Predicted mesh (PLY or OBJ).
    #[arg(long)]
    pub pred: Option<String>,
    /// Reference mesh (PLY or OBJ).
    #[arg(long)]
    pub gt: Option<String>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub out: Option<String>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long)]
    pub scenes: Option<usize>,
    #[arg(long)]
    pub points: Option<usize>,
    #[arg(long)]
    pub rays: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub t: Option<Vec<usize>>,
    #[arg(long, value_enum)]
    pub encoding: Option<Encoding>,
    #[arg(long)]
    pub out: Option<String>,
}

fn parse_feature_mode(s: &str) -> Result<FeatureMode, String> {
    match s {
        "none" => Ok(FeatureMode::None),
        "learnable-table" => Ok(FeatureMode::LearnableTable),
        "loaded" => Ok(FeatureMode::Loaded),
        _ => Err(format!("unknown feature mode '{s}' (none, learnable-table, loaded)")),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
