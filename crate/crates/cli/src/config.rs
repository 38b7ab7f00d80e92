//! Run configuration written into every output directory.

use std::path::Path;

use rayletdf::field::TrainConfig;
use rayletdf::metrics::{DEFAULT_DELTA_THRESHOLD, DEFAULT_MESH_SAMPLES, DEFAULT_MESH_THRESHOLD};
use serde::{Deserialize, Serialize};

pub const CONFIG_FILE: &str = "config.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SceneKind {
    #[default]
    SphereInBox,
    Sphere,
    Plane,
    Box,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Encoding {
    #[default]
    Points,
    Gaussians,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Align {
    #[default]
    None,
    MedianMad,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub scene: Option<String>,
    pub manifest: Option<String>,
    pub features: Option<String>,
    pub model: Option<String>,
    pub camera: Option<String>,
    pub pred: Vec<String>,
    pub gt: Vec<String>,
    pub out: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSettings {
    pub scene: SceneKind,
    pub encoding: Encoding,
    pub points: usize,
    pub views: usize,
    pub test_views: usize,
    pub width: u32,
    pub height: u32,
    pub fov_y: f64,
    pub orbit_radius: f64,
    pub orbit_height: f64,
    /// Height jitter of the held-out cameras.
    pub height_jitter: f64,
}

impl Default for SynthSettings {
    fn default() -> Self {
        SynthSettings {
            scene: SceneKind::SphereInBox,
            encoding: Encoding::Points,
            points: 10_000,
            views: 30,
            test_views: 5,
            width: 160,
            height: 120,
            fov_y: 1.0,
            orbit_radius: 1.5,
            orbit_height: 0.3,
            height_jitter: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RenderSettings {
    pub normals: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub align: Align,
    pub delta_threshold: f64,
    pub mesh_samples: usize,
    pub mesh_threshold: f64,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            align: Align::None,
            delta_threshold: DEFAULT_DELTA_THRESHOLD,
            mesh_samples: DEFAULT_MESH_SAMPLES,
            mesh_threshold: DEFAULT_MESH_THRESHOLD,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FuseSettings {
    pub voxel: f64,
    /// Defaults to four voxels.
    pub truncation: Option<f64>,
    /// `[xmin, ymin, zmin, xmax, ymax, zmax]`; derived from the depth maps
    /// when absent.
    pub bounds: Option<[f64; 6]>,
}

impl Default for FuseSettings {
    fn default() -> Self {
        FuseSettings {
            voxel: 0.02,
            truncation: None,
            bounds: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSettings {
    pub scenes: usize,
    pub points: usize,
    pub rays: usize,
    pub t_values: Vec<usize>,
    pub encoding: Encoding,
}

impl Default for BenchSettings {
    fn default() -> Self {
        BenchSettings {
            scenes: 2,
            points: 10_000,
            rays: 1_000,
            t_values: vec![1, 5, 10, 20],
            encoding: Encoding::Points,
        }
    }
}

/// Every knob of a run. Sections not used by a command keep their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub command: String,
    pub seed: u64,
    pub threads: Option<usize>,
    pub paths: Paths,
    pub synth: SynthSettings,
    pub train: TrainConfig,
    pub render: RenderSettings,
    pub eval: EvalSettings,
    pub fuse: FuseSettings,
    pub bench: BenchSettings,
}

impl RunConfig {
    pub fn read(path: &Path) -> rayletdf::Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serializes");
        s.push('\n');
        s
    }

    pub fn write_into(&self, dir: &Path) -> rayletdf::Result<()> {
        std::fs::write(dir.join(CONFIG_FILE), self.to_json())?;
        Ok(())
    }
}
