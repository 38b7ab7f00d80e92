//! Camera JSON files and the view manifest.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scene::{Camera, RigidTransform};

/// One camera: pinhole intrinsics and a row-major 4×4 camera-to-world matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraJson {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
    pub world_from_camera: [f64; 16],
}

impl From<&Camera> for CameraJson {
    fn from(c: &Camera) -> Self {
        CameraJson {
            fx: c.fx,
            fy: c.fy,
            cx: c.cx,
            cy: c.cy,
            width: c.width,
            height: c.height,
            world_from_camera: c.world_from_camera.to_row_major(),
        }
    }
}

impl CameraJson {
    pub fn to_camera(&self) -> Result<Camera> {
        let m = &self.world_from_camera;
        let bottom = [m[12], m[13], m[14], m[15]];
        if bottom != [0.0, 0.0, 0.0, 1.0] {
            return Err(Error::invalid("world_from_camera bottom row must be 0 0 0 1"));
        }
        Camera::new(
            self.fx,
            self.fy,
            self.cx,
            self.cy,
            self.width,
            self.height,
            RigidTransform::from_row_major(m),
        )
    }
}

pub fn parse_camera_json(data: &[u8]) -> Result<Camera> {
    serde_json::from_slice::<CameraJson>(data)?.to_camera()
}

pub fn camera_to_json(camera: &Camera) -> String {
    serde_json::to_string_pretty(&CameraJson::from(camera)).expect("camera serializes")
}

pub fn read_camera(path: impl AsRef<Path>) -> Result<Camera> {
    parse_camera_json(&std::fs::read(path)?)
}

/// A view: camera file plus an optional distance map, both relative to the
/// manifest's directory.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ViewEntry {
    pub camera: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub views: Vec<ViewEntry>,
}

impl Manifest {
    pub fn parse(data: &[u8]) -> Result<Self> {
        Ok(serde_json::from_slice(data)?)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&std::fs::read(path)?)
    }

    /// Resolves entry paths against `base`.
    pub fn resolve(&self, base: &Path) -> Vec<(PathBuf, Option<PathBuf>)> {
        self.views
            .iter()
            .map(|v| (base.join(&v.camera), v.distance.as_ref().map(|d| base.join(d))))
            .collect()
    }
}
