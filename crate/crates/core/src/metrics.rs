//! Ray-distance and mesh evaluation metrics.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::TriangleMesh;
use crate::scene::Vec3;
use crate::spatial::UniformGrid;

pub const DEFAULT_DELTA_THRESHOLD: f64 = 1.25;
pub const DEFAULT_MESH_THRESHOLD: f64 = 0.05;
pub const DEFAULT_MESH_SAMPLES: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RayMetrics {
    pub ade: f64,
    pub rmse: f64,
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub delta: f64,
    pub n_samples: usize,
}

impl RayMetrics {
    pub const CSV_HEADER: &'static str = "ade,rmse,abs_rel,sq_rel,delta,n_samples";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{}",
            self.ade, self.rmse, self.abs_rel, self.sq_rel, self.delta, self.n_samples
        )
    }
}

fn check_pairs(pred: &[f64], gt: &[f64]) -> Result<()> {
    if pred.len() != gt.len() {
        return Err(Error::Shape {
            expected: gt.len(),
            got: pred.len(),
        });
    }
    if gt.is_empty() {
        return Err(Error::Empty("metric samples"));
    }
    Ok(())
}

/// ADE, RMSE, Abs-Rel, Sq-Rel and threshold accuracy
/// (fraction with `max(p/g, g/p) < 1.25`).
pub fn ray_metrics(pred: &[f64], gt: &[f64]) -> Result<RayMetrics> {
    ray_metrics_with_threshold(pred, gt, DEFAULT_DELTA_THRESHOLD)
}

pub fn ray_metrics_with_threshold(pred: &[f64], gt: &[f64], delta_threshold: f64) -> Result<RayMetrics> {
    check_pairs(pred, gt)?;
    if let Some(i) = gt.iter().position(|g| !(*g > 0.0 && g.is_finite())) {
        return Err(Error::invalid(format!("ground truth sample {i} is not a positive distance")));
    }
    if let Some(i) = pred.iter().position(|p| !(*p > 0.0 && p.is_finite())) {
        return Err(Error::invalid(format!("prediction {i} is not a positive distance")));
    }
    let (mut abs, mut sq, mut abs_rel, mut sq_rel, mut hits) = (0.0, 0.0, 0.0, 0.0, 0usize);
    for (&p, &g) in pred.iter().zip(gt) {
        let e = p - g;
        abs += e.abs();
        sq += e * e;
        abs_rel += e.abs() / g;
        sq_rel += e * e / g;
        if (p / g).max(g / p) < delta_threshold {
            hits += 1;
        }
    }
    let n = gt.len() as f64;
    Ok(RayMetrics {
        ade: abs / n,
        rmse: (sq / n).sqrt(),
        abs_rel: abs_rel / n,
        sq_rel: sq_rel / n,
        delta: hits as f64 / n,
        n_samples: gt.len(),
    })
}

pub fn median(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Empty("median input"));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Ok(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Mean absolute deviation from the median.
pub fn median_spread(values: &[f64]) -> Result<(f64, f64)> {
    let m = median(values)?;
    let s = values.iter().map(|v| (v - m).abs()).sum::<f64>() / values.len() as f64;
    Ok((m, s))
}

/// Maps `pred` onto the median and median-spread of `gt`:
/// `(pred − m_pred) / s_pred · s_gt + m_gt`.
pub fn scale_align(pred: &[f64], gt: &[f64]) -> Result<Vec<f64>> {
    check_pairs(pred, gt)?;
    let (mp, sp) = median_spread(pred)?;
    let (mg, sg) = median_spread(gt)?;
    if !(sp > 0.0) {
        return Err(Error::ConstantPrediction);
    }
    Ok(pred.iter().map(|p| (p - mp) / sp * sg + mg).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeshMetrics {
    pub accuracy: f64,
    pub completion: f64,
    pub chamfer_l1: f64,
    pub normal_accuracy: f64,
    pub normal_completion: f64,
    pub normal_consistency: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub threshold: f64,
}

impl MeshMetrics {
    pub const CSV_HEADER: &'static str =
        "accuracy,completion,chamfer_l1,normal_accuracy,normal_completion,normal_consistency,precision,recall,f1,threshold";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.accuracy,
            self.completion,
            self.chamfer_l1,
            self.normal_accuracy,
            self.normal_completion,
            self.normal_consistency,
            self.precision,
            self.recall,
            self.f1,
            self.threshold
        )
    }
}

/// Per-sample nearest distance and unsigned normal agreement from `from` to `to`.
fn directed(from: (&[Vec3], &[Vec3]), to: (&[Vec3], &[Vec3]), grid: &UniformGrid) -> Vec<(f64, f64)> {
    from.0
        .par_iter()
        .zip(from.1.par_iter())
        .map(|(p, n)| {
            let nn = grid.knn(p, 1)[0];
            let cos = n.dot(&to.1[nn.index]).abs().min(1.0);
            (nn.distance, cos)
        })
        .collect()
}

/// The nine mesh metrics between point-and-normal samples of a predicted
/// and a reference surface.
pub fn point_set_metrics(
    pred: (&[Vec3], &[Vec3]),
    gt: (&[Vec3], &[Vec3]),
    threshold: f64,
) -> Result<MeshMetrics> {
    if pred.0.is_empty() || gt.0.is_empty() {
        return Err(Error::Empty("mesh samples"));
    }
    if pred.0.len() != pred.1.len() || gt.0.len() != gt.1.len() {
        return Err(Error::Shape {
            expected: pred.0.len(),
            got: pred.1.len(),
        });
    }
    let gt_grid = UniformGrid::new(gt.0.to_vec());
    let pred_grid = UniformGrid::new(pred.0.to_vec());
    let to_gt = directed(pred, gt, &gt_grid);
    let to_pred = directed(gt, pred, &pred_grid);
    let mean = |v: &[(f64, f64)], f: fn(&(f64, f64)) -> f64| v.iter().map(f).sum::<f64>() / v.len() as f64;
    let accuracy = mean(&to_gt, |x| x.0);
    let completion = mean(&to_pred, |x| x.0);
    let normal_accuracy = mean(&to_gt, |x| x.1);
    let normal_completion = mean(&to_pred, |x| x.1);
    let precision = to_gt.iter().filter(|x| x.0 < threshold).count() as f64 / to_gt.len() as f64;
    let recall = to_pred.iter().filter(|x| x.0 < threshold).count() as f64 / to_pred.len() as f64;
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    Ok(MeshMetrics {
        accuracy,
        completion,
        chamfer_l1: (accuracy + completion) / 2.0,
        normal_accuracy,
        normal_completion,
        normal_consistency: (normal_accuracy + normal_completion) / 2.0,
        precision,
        recall,
        f1,
        threshold,
    })
}

/// Samples `n_samples` points from each mesh (same seed) and compares them.
pub fn mesh_metrics(
    pred: &TriangleMesh,
    gt: &TriangleMesh,
    n_samples: usize,
    threshold: f64,
    seed: u64,
) -> Result<MeshMetrics> {
    if pred.is_empty() || gt.is_empty() {
        return Err(Error::Empty("mesh"));
    }
    if n_samples == 0 {
        return Err(Error::invalid("sample count must be at least 1"));
    }
    let p = pred.sample_surface(n_samples, seed)?;
    let g = gt.sample_surface(n_samples, seed)?;
    point_set_metrics((&p.points, &p.normals), (&g.points, &g.normals), threshold)
}
