//! Evaluating raylets with a trained network or any other distance field.

use serde::{Deserialize, Serialize};

use super::blend::{BlendConfig, BlendMode};
use super::mlp::{Activations, Mlp, MlpShape};
use crate::error::{Error, Result};
use crate::features::{knn, write_input, FeatureConfig, PerPointFeatures};
use crate::scene::Raylet;
use crate::scene_model::SceneModel;

/// Anything that maps raylets to `(d, s)`: the trained network, or an
/// analytic stand-in for testing the rest of the pipeline.
pub trait RayletField: Sync {
    /// Writes one `[d, s]` per raylet into `out` (cleared first).
    fn predict(&self, raylets: &[Raylet], out: &mut Vec<[f64; 2]>) -> Result<()>;

    fn blend_mode(&self) -> BlendMode {
        BlendMode::Softmax
    }
}

/// Layout of a trained field, stored next to its weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldLayout {
    pub features: FeatureConfig,
    pub blend: BlendConfig,
    pub hidden: usize,
    pub hidden_layers: usize,
}

impl FieldLayout {
    pub fn shape(&self) -> MlpShape {
        MlpShape {
            input: self.features.input_dim(),
            hidden: self.hidden,
            hidden_layers: self.hidden_layers,
        }
    }
}

/// Network weights plus the per-point feature table they were trained with.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldModel {
    pub layout: FieldLayout,
    pub mlp: Mlp<f32>,
    pub features: PerPointFeatures,
}

impl FieldModel {
    pub fn new(layout: FieldLayout, mlp: Mlp<f32>, features: PerPointFeatures) -> Result<Self> {
        if *mlp.shape() != layout.shape() {
            return Err(Error::Shape {
                expected: layout.shape().input,
                got: mlp.shape().input,
            });
        }
        if features.channels != layout.features.channels {
            return Err(Error::Shape {
                expected: layout.features.channels,
                got: features.channels,
            });
        }
        Ok(FieldModel { layout, mlp, features })
    }

    /// Binds the model to the scene whose points supply its features.
    pub fn bind<'a>(&'a self, scene: &'a SceneModel) -> Result<NeuralField<'a>> {
        self.layout.features.validate()?;
        self.features.check(scene.len(), &self.layout.features)?;
        Ok(NeuralField { model: self, scene })
    }
}

/// A [`FieldModel`] evaluated against a specific scene.
#[derive(Debug, Clone, Copy)]
pub struct NeuralField<'a> {
    model: &'a FieldModel,
    scene: &'a SceneModel,
}

impl NeuralField<'_> {
    /// Forward pass for one raylet.
    pub fn evaluate(&self, raylet: &Raylet, acts: &mut Activations<f32>) -> Result<[f32; 2]> {
        let cfg = &self.model.layout.features;
        let neighbors = knn(&raylet.start, self.scene.grid(), cfg.k)?;
        let feats = &self.model.features;
        write_input(
            cfg,
            raylet,
            &neighbors,
            self.scene,
            |n, c| feats.values[n * feats.channels + c],
            acts.input_mut(),
        );
        Ok(self.model.mlp.forward_into(acts))
    }
}

impl RayletField for NeuralField<'_> {
    fn predict(&self, raylets: &[Raylet], out: &mut Vec<[f64; 2]>) -> Result<()> {
        out.clear();
        let mut acts = Activations::new(self.model.mlp.shape());
        for r in raylets {
            let [d, s] = self.evaluate(r, &mut acts)?;
            out.push([d as f64, s as f64]);
        }
        Ok(())
    }

    fn blend_mode(&self) -> BlendMode {
        self.model.layout.blend.mode
    }
}
