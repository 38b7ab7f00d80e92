//! Supervised training of the raylet field with Adam and an ℓ1 ray loss.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::blend::{blend, blend_backward, loss_l1, BlendConfig, BlendTerm};
use super::mlp::{real, Activations, Mlp, Real};
use super::model::{FieldLayout, FieldModel};
use crate::error::{Error, Result};
use crate::features::{knn, write_input, FeatureConfig, FeatureMode, PerPointFeatures};
use crate::render::DepthMap;
use crate::sampling::DEFAULT_TILE_PX;
use crate::scene::{Camera, Raylet};
use crate::scene_model::SceneModel;

/// A view with ground-truth ray-surface distances.
#[derive(Debug, Clone)]
pub struct TrainingView {
    pub camera: Camera,
    pub distance: DepthMap,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Decay the step size to zero along a half cosine.
    pub cosine_decay: bool,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            cosine_decay: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    /// Stop after this many steps even if epochs remain.
    pub max_steps: Option<usize>,
    pub batch_rays: usize,
    /// Randomly keep at most this many supervised pixels per view.
    pub max_rays_per_view: Option<usize>,
    pub optimizer: AdamConfig,
    pub features: FeatureConfig,
    pub feature_mode: FeatureMode,
    pub blend: BlendConfig,
    pub hidden: usize,
    pub hidden_layers: usize,
    pub tile_px: u32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            seed: 0,
            epochs: 10,
            max_steps: None,
            batch_rays: 1024,
            max_rays_per_view: None,
            optimizer: AdamConfig::default(),
            features: FeatureConfig {
                channels: 0,
                ..FeatureConfig::default()
            },
            feature_mode: FeatureMode::None,
            blend: BlendConfig::default(),
            hidden: 256,
            hidden_layers: 8,
            tile_px: DEFAULT_TILE_PX,
        }
    }
}

impl TrainConfig {
    pub fn layout(&self) -> FieldLayout {
        FieldLayout {
            features: self.features,
            blend: self.blend,
            hidden: self.hidden,
            hidden_layers: self.hidden_layers,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.features.validate()?;
        self.blend.validate()?;
        if self.epochs == 0 || self.batch_rays == 0 || self.hidden == 0 {
            return Err(Error::invalid("epochs, batch size and width must be positive"));
        }
        let o = &self.optimizer;
        if !(o.learning_rate > 0.0 && o.beta1 > 0.0 && o.beta1 < 1.0 && o.beta2 > 0.0 && o.beta2 < 1.0 && o.epsilon > 0.0) {
            return Err(Error::invalid("optimizer hyperparameters out of range"));
        }
        if self.feature_mode == FeatureMode::None && self.features.channels != 0 {
            return Err(Error::invalid("per-point channels require a feature table"));
        }
        Ok(())
    }
}

/// One supervised ray: a span of raylets and its target distance.
#[derive(Debug, Clone, Copy)]
struct RaySample {
    first: u32,
    count: u32,
    target: f64,
}

/// Supervised rays with their raylets and neighbor lists precomputed. The
/// scene geometry is fixed during training, so only the network and the
/// feature table change between steps.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    features: FeatureConfig,
    samples: Vec<RaySample>,
    raylets: Vec<Raylet>,
    /// `‖p_cam − p_l‖` per raylet.
    offsets: Vec<f64>,
    neighbors: Vec<u32>,
    /// Valid-target pixels whose ray found no candidate.
    pub discarded: usize,
}

impl TrainingSet {
    pub fn build(
        scene: &SceneModel,
        views: &[TrainingView],
        features: &FeatureConfig,
        t: usize,
        max_rays_per_view: Option<usize>,
        tile_px: u32,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if views.is_empty() {
            return Err(Error::Empty("training views"));
        }
        features.validate()?;
        let mut set = TrainingSet {
            features: *features,
            samples: Vec::new(),
            raylets: Vec::new(),
            offsets: Vec::new(),
            neighbors: Vec::new(),
            discarded: 0,
        };
        for view in views {
            let cam = &view.camera;
            if (cam.width, cam.height) != (view.distance.width, view.distance.height) {
                return Err(Error::Shape {
                    expected: cam.pixel_count(),
                    got: view.distance.len(),
                });
            }
            let mut pixels: Vec<(u32, u32)> = cam.pixels().filter(|&(x, y)| view.distance.get(x, y).is_some()).collect();
            if let Some(limit) = max_rays_per_view {
                if pixels.len() > limit {
                    pixels.shuffle(rng);
                    pixels.truncate(limit);
                    pixels.sort_unstable_by_key(|&(x, y)| (y, x));
                }
            }
            let tiles = scene.tile_index(cam, tile_px);
            let per_pixel: Vec<_> = pixels
                .par_iter()
                .map(|&(x, y)| {
                    let cands = tiles.candidates_for_pixel(scene.primitives(), x, y, t);
                    let ray = cam.pixel_ray(x, y);
                    let mut rows = Vec::with_capacity(cands.len());
                    for c in &cands {
                        let nb = knn(&c.raylet.start, scene.grid(), features.k)?;
                        rows.push((c.raylet, (c.raylet.start - ray.origin).norm(), nb));
                    }
                    Ok((view.distance.get(x, y).unwrap_or(0.0), rows))
                })
                .collect::<Result<_>>()?;
            for (target, rows) in per_pixel {
                if rows.is_empty() {
                    set.discarded += 1;
                    continue;
                }
                set.samples.push(RaySample {
                    first: set.raylets.len() as u32,
                    count: rows.len() as u32,
                    target,
                });
                for (r, off, nb) in rows {
                    set.raylets.push(r);
                    set.offsets.push(off);
                    set.neighbors.extend(nb.into_iter().map(|i| i as u32));
                }
            }
        }
        if set.samples.is_empty() {
            return Err(Error::NoSupervision);
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn raylet_count(&self) -> usize {
        self.raylets.len()
    }

    /// Target distance of sample `i`.
    pub fn target(&self, i: usize) -> f64 {
        self.samples[i].target
    }

    /// Distance to the first-ranked candidate's start, i.e. the blended
    /// distance of a field that always predicts `d = 0` with `T = 1`.
    pub fn nearest_candidate_distance(&self, i: usize) -> f64 {
        self.offsets[self.samples[i].first as usize]
    }
}

/// Mean ℓ1 loss over a batch with its gradients.
#[derive(Debug, Clone)]
pub struct BatchGradient<R> {
    pub loss: R,
    pub rays: usize,
    pub params: Vec<R>,
    /// Gradient of the per-point feature table (empty when it is frozen).
    pub table: Vec<R>,
}

struct ChunkAccum<R> {
    loss: R,
    rays: usize,
    params: Vec<R>,
    table: Vec<(u32, R)>,
}

fn chunk_gradient<R: Real>(
    set: &TrainingSet,
    scene: &SceneModel,
    mode: super::BlendMode,
    mlp: &Mlp<R>,
    table: &[R],
    table_trainable: bool,
    batch: &[usize],
) -> ChunkAccum<R> {
    let cfg = &set.features;
    let k = cfg.k;
    let channels = cfg.channels;
    let mut acc = ChunkAccum {
        loss: R::zero(),
        rays: 0,
        params: vec![R::zero(); mlp.params().len()],
        table: Vec::new(),
    };
    let mut acts: Vec<Activations<R>> = Vec::new();
    let mut scratch = Vec::new();
    let mut grad_input = vec![R::zero(); cfg.input_dim()];
    for &i in batch {
        let sample = set.samples[i];
        let first = sample.first as usize;
        let count = sample.count as usize;
        while acts.len() < count {
            acts.push(Activations::new(mlp.shape()));
        }
        let mut terms = Vec::with_capacity(count);
        for j in 0..count {
            let r = first + j;
            let neighbors: Vec<usize> = set.neighbors[r * k..(r + 1) * k].iter().map(|&n| n as usize).collect();
            write_input(
                cfg,
                &set.raylets[r],
                &neighbors,
                scene,
                |n, c| table[n * channels + c],
                acts[j].input_mut(),
            );
            let [d, s] = mlp.forward_into(&mut acts[j]);
            terms.push(BlendTerm {
                value: real::<R>(set.offsets[r]) + d,
                score: s,
                t_start: set.raylets[r].t_start,
            });
        }
        let Some(blended) = blend(&terms, mode) else { continue };
        let Some((loss, dl)) = loss_l1(blended.distance, real(sample.target)) else { continue };
        acc.loss += loss;
        acc.rays += 1;
        if dl == R::zero() {
            continue;
        }
        for (j, (gv, gs)) in blend_backward(&terms, mode, &blended, dl).into_iter().enumerate() {
            let r = first + j;
            let gi = table_trainable.then_some(&mut grad_input[..]);
            mlp.backward(&acts[j], [gv, gs], &mut acc.params, gi, &mut scratch);
            if table_trainable {
                for (slot, &n) in set.neighbors[r * k..(r + 1) * k].iter().enumerate() {
                    let off = cfg.channel_offset(slot);
                    for c in 0..channels {
                        acc.table.push((n * channels as u32 + c as u32, grad_input[off + c]));
                    }
                }
            }
        }
    }
    acc
}

/// Rays per gradient chunk. Chunks are reduced in order, so the result does
/// not depend on the number of worker threads.
const CHUNK_RAYS: usize = 32;

/// Mean ℓ1 loss of `batch` and its exact gradient w.r.t. the network
/// parameters and, when `table_trainable`, the per-point feature table.
#[allow(clippy::too_many_arguments)]
pub fn batch_gradient<R: Real>(
    set: &TrainingSet,
    scene: &SceneModel,
    mode: super::BlendMode,
    mlp: &Mlp<R>,
    table: &[R],
    table_trainable: bool,
    batch: &[usize],
) -> BatchGradient<R> {
    let chunks: Vec<ChunkAccum<R>> = batch
        .par_chunks(CHUNK_RAYS)
        .map(|c| chunk_gradient(set, scene, mode, mlp, table, table_trainable, c))
        .collect();
    let mut out = BatchGradient {
        loss: R::zero(),
        rays: 0,
        params: vec![R::zero(); mlp.params().len()],
        table: if table_trainable { vec![R::zero(); table.len()] } else { Vec::new() },
    };
    for c in chunks {
        out.loss += c.loss;
        out.rays += c.rays;
        for (a, b) in out.params.iter_mut().zip(&c.params) {
            *a += *b;
        }
        for (i, g) in c.table {
            out.table[i as usize] += g;
        }
    }
    if out.rays > 0 {
        let inv = R::one() / real(out.rays as f64);
        out.loss *= inv;
        out.params.iter_mut().for_each(|g| *g *= inv);
        out.table.iter_mut().for_each(|g| *g *= inv);
    }
    out
}

/// Adam moments for one parameter vector.
#[derive(Debug, Clone)]
struct Adam {
    m: Vec<f32>,
    v: Vec<f32>,
}

impl Adam {
    fn new(n: usize) -> Self {
        Adam {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }

    fn step(&mut self, cfg: &AdamConfig, lr: f64, step: usize, params: &mut [f32], grads: &[f32]) {
        let (b1, b2) = (cfg.beta1 as f32, cfg.beta2 as f32);
        let c1 = 1.0 - cfg.beta1.powi(step as i32);
        let c2 = 1.0 - cfg.beta2.powi(step as i32);
        let step_size = (lr / c1) as f32;
        let c2_sqrt = c2.sqrt() as f32;
        let eps = cfg.epsilon as f32;
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= step_size * *m / ((*v).sqrt() / c2_sqrt + eps);
        }
    }
}

fn learning_rate(cfg: &AdamConfig, step: usize, total: usize) -> f64 {
    if !cfg.cosine_decay || total <= 1 {
        return cfg.learning_rate;
    }
    let progress = step as f64 / total as f64;
    0.5 * cfg.learning_rate * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Result of [`train`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: FieldModel,
    /// `(step, mean batch loss)` for every optimizer step, starting at 1.
    pub loss_trace: Vec<(usize, f64)>,
    pub rays: usize,
    pub discarded: usize,
}

/// Initial per-point table for a training run.
fn initial_table(scene: &SceneModel, cfg: &TrainConfig, loaded: Option<&PerPointFeatures>, rng: &mut ChaCha8Rng) -> Result<PerPointFeatures> {
    match cfg.feature_mode {
        FeatureMode::None => Ok(PerPointFeatures::none(scene.len())),
        FeatureMode::Loaded => {
            let f = loaded.ok_or_else(|| Error::invalid("feature mode 'loaded' needs a feature table"))?;
            f.check(scene.len(), &cfg.features)?;
            Ok(PerPointFeatures { mode: FeatureMode::Loaded, ..f.clone() })
        }
        FeatureMode::LearnableTable => {
            let n = scene.len() * cfg.features.channels;
            let values = (0..n).map(|_| rng.gen_range(-0.01f32..=0.01)).collect();
            PerPointFeatures::new(FeatureMode::LearnableTable, scene.len(), cfg.features.channels, values)
        }
    }
}

/// Trains a field on the supervised pixels of `views`.
pub fn train(
    scene: &SceneModel,
    views: &[TrainingView],
    cfg: &TrainConfig,
    loaded_features: Option<&PerPointFeatures>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let set = TrainingSet::build(
        scene,
        views,
        &cfg.features,
        cfg.blend.t_train,
        cfg.max_rays_per_view,
        cfg.tile_px,
        &mut rng,
    )?;
    let layout = cfg.layout();
    let mut mlp = Mlp::<f32>::kaiming(layout.shape(), &mut rng);
    let mut table = initial_table(scene, cfg, loaded_features, &mut rng)?;
    let trainable = table.trainable();

    let batches_per_epoch = set.len().div_ceil(cfg.batch_rays);
    let mut total = cfg.epochs * batches_per_epoch;
    if let Some(max) = cfg.max_steps {
        total = total.min(max);
    }
    let mut adam = Adam::new(mlp.params().len());
    let mut adam_table = Adam::new(if trainable { table.values.len() } else { 0 });
    let mut order: Vec<usize> = (0..set.len()).collect();
    let mut trace = Vec::with_capacity(total);
    let mut step = 0;
    'epochs: for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_rays) {
            if step >= total {
                break 'epochs;
            }
            let g = batch_gradient(&set, scene, cfg.blend.mode, &mlp, &table.values, trainable, batch);
            let lr = learning_rate(&cfg.optimizer, step, total);
            step += 1;
            adam.step(&cfg.optimizer, lr, step, mlp.params_mut(), &g.params);
            if trainable {
                adam_table.step(&cfg.optimizer, lr, step, &mut table.values, &g.table);
            }
            trace.push((step, g.loss as f64));
            if step % 100 == 0 || step == total {
                log::info!("epoch {epoch} step {step}/{total} loss {:.5}", g.loss);
            }
        }
    }
    if mlp.params().iter().any(|p| !p.is_finite()) {
        return Err(Error::invalid("training diverged to non-finite parameters"));
    }
    Ok(TrainOutcome {
        model: FieldModel::new(layout, mlp, table)?,
        loss_trace: trace,
        rays: set.len(),
        discarded: set.discarded,
    })
}
