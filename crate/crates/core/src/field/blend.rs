//! Combining the predictions of the `T` raylets sampled for one ray.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use super::mlp::{real, Real};
use crate::error::{Error, Result};

/// How per-raylet scores become blend weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BlendMode {
    /// `e^{s_t} / Σ e^{s}`.
    #[default]
    Softmax,
    /// Uniform `1/T`; scores are ignored.
    Mean,
    /// `σ(s_t)` used as opacity, composited front to back by `t_start`.
    Alpha,
    /// `σ(s_t) / Σ σ(s)`.
    Sigmoid,
}

impl BlendMode {
    pub const ALL: [BlendMode; 4] = [BlendMode::Softmax, BlendMode::Mean, BlendMode::Alpha, BlendMode::Sigmoid];

    pub fn code(self) -> u8 {
        match self {
            BlendMode::Softmax => 0,
            BlendMode::Mean => 1,
            BlendMode::Alpha => 2,
            BlendMode::Sigmoid => 3,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.code() == code)
            .ok_or_else(|| Error::invalid(format!("unknown blend mode code {code}")))
    }

    pub fn name(self) -> &'static str {
        match self {
            BlendMode::Softmax => "softmax",
            BlendMode::Mean => "mean",
            BlendMode::Alpha => "alpha",
            BlendMode::Sigmoid => "sigmoid",
        }
    }
}

impl std::str::FromStr for BlendMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::invalid(format!("unknown blend mode {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlendConfig {
    pub mode: BlendMode,
    /// Raylets per ray while training.
    pub t_train: usize,
    /// Raylets per ray at inference; may differ from `t_train`.
    pub t_test: usize,
}

impl Default for BlendConfig {
    fn default() -> Self {
        BlendConfig {
            mode: BlendMode::Softmax,
            t_train: 5,
            t_test: 5,
        }
    }
}

impl BlendConfig {
    pub fn validate(&self) -> Result<()> {
        if self.t_train == 0 || self.t_test == 0 {
            return Err(Error::invalid("T must be at least 1"));
        }
        Ok(())
    }
}

/// One candidate's contribution: `value = ‖p_cam − p_l‖ + d` and score `s`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlendTerm<R> {
    pub value: R,
    pub score: R,
    /// Ray parameter of the raylet start, used by alpha compositing.
    pub t_start: f64,
}

/// Blended distance with the weight given to each term (in input order).
#[derive(Debug, Clone, PartialEq)]
pub struct Blended<R> {
    pub distance: R,
    pub weights: Vec<R>,
}

#[inline]
fn sigmoid<R: Real>(x: R) -> R {
    if x >= R::zero() {
        R::one() / (R::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (R::one() + e)
    }
}

fn canonical_order<R: Real>(terms: &[BlendTerm<R>], mode: BlendMode) -> Vec<usize> {
    let mut order: Vec<usize> = (0..terms.len()).collect();
    let key = |a: &BlendTerm<R>, b: &BlendTerm<R>| -> Ordering {
        let ord = match mode {
            BlendMode::Alpha => a.t_start.total_cmp(&b.t_start),
            _ => Ordering::Equal,
        };
        let (sa, sb) = (a.score.to_f64().unwrap_or(0.0), b.score.to_f64().unwrap_or(0.0));
        let (va, vb) = (a.value.to_f64().unwrap_or(0.0), b.value.to_f64().unwrap_or(0.0));
        ord.then(sa.total_cmp(&sb)).then(va.total_cmp(&vb))
    };
    // Stable sort: exact duplicates keep input order, which cannot change the result.
    order.sort_by(|&i, &j| key(&terms[i], &terms[j]));
    order
}

fn sorted_sum<R: Real>(order: &[usize], f: impl Fn(usize) -> R) -> R {
    order.iter().fold(R::zero(), |acc, &i| acc + f(i))
}

fn alpha_raw<R: Real>(alphas: &[R], order: &[usize]) -> Vec<R> {
    let mut raw = vec![R::zero(); alphas.len()];
    let mut trans = R::one();
    for &i in order {
        raw[i] = alphas[i] * trans;
        trans = trans * (R::one() - alphas[i]);
    }
    raw
}

/// Blends candidate values into one distance. Terms are processed in a
/// canonical order so the result does not depend on the input order.
/// Returns `None` for an empty candidate list (the ray is discarded).
pub fn blend<R: Real>(terms: &[BlendTerm<R>], mode: BlendMode) -> Option<Blended<R>> {
    if terms.is_empty() {
        return None;
    }
    let n = terms.len();
    let order = canonical_order(terms, mode);
    let mut weights = match mode {
        BlendMode::Softmax => {
            let m = terms.iter().map(|t| t.score).fold(R::neg_infinity(), R::max);
            terms.iter().map(|t| (t.score - m).exp()).collect::<Vec<_>>()
        }
        BlendMode::Mean => vec![R::one(); n],
        BlendMode::Sigmoid => terms.iter().map(|t| sigmoid(t.score)).collect(),
        BlendMode::Alpha => {
            let alphas: Vec<R> = terms.iter().map(|t| sigmoid(t.score)).collect();
            alpha_raw(&alphas, &order)
        }
    };
    let total = sorted_sum(&order, |i| weights[i]);
    if total > R::zero() && total.is_finite() {
        weights.iter_mut().for_each(|w| *w = *w / total);
    } else {
        let u = R::one() / real(n as f64);
        weights.iter_mut().for_each(|w| *w = u);
    }
    let d = sorted_sum(&order, |i| weights[i] * terms[i].value);
    let lo = terms.iter().map(|t| t.value).fold(R::infinity(), R::min);
    let hi = terms.iter().map(|t| t.value).fold(R::neg_infinity(), R::max);
    Some(Blended {
        distance: d.max(lo).min(hi),
        weights,
    })
}

/// Gradients of the blended distance w.r.t. each term's value and score,
/// scaled by `upstream = ∂L/∂D`.
pub fn blend_backward<R: Real>(terms: &[BlendTerm<R>], mode: BlendMode, blended: &Blended<R>, upstream: R) -> Vec<(R, R)> {
    let w = &blended.weights;
    let d = blended.distance;
    let mut out: Vec<(R, R)> = w.iter().map(|&wt| (upstream * wt, R::zero())).collect();
    match mode {
        BlendMode::Mean => {}
        BlendMode::Softmax => {
            for (t, term) in terms.iter().enumerate() {
                out[t].1 = upstream * w[t] * (term.value - d);
            }
        }
        BlendMode::Sigmoid => {
            let sig: Vec<R> = terms.iter().map(|t| sigmoid(t.score)).collect();
            let total: R = sig.iter().copied().sum();
            if total > R::zero() {
                for (t, term) in terms.iter().enumerate() {
                    out[t].1 = upstream * (term.value - d) / total * sig[t] * (R::one() - sig[t]);
                }
            }
        }
        BlendMode::Alpha => {
            let order = canonical_order(terms, mode);
            let alphas: Vec<R> = terms.iter().map(|t| sigmoid(t.score)).collect();
            let raw = alpha_raw(&alphas, &order);
            let total: R = raw.iter().copied().sum();
            if !(total > R::zero()) {
                return out;
            }
            // ∂D/∂raw_t = (v_t − D)/S; raw_t = α_t ∏_{j before t}(1 − α_j).
            let g_raw: Vec<R> = terms.iter().map(|t| (t.value - d) / total).collect();
            let pos: Vec<usize> = {
                let mut p = vec![0; terms.len()];
                for (rank, &i) in order.iter().enumerate() {
                    p[i] = rank;
                }
                p
            };
            for k in 0..terms.len() {
                let mut g_alpha = R::zero();
                for t in 0..terms.len() {
                    if pos[t] < pos[k] {
                        continue;
                    }
                    let mut prod = if t == k { R::one() } else { -alphas[t] };
                    for &j in &order[..pos[t]] {
                        if j != k {
                            prod = prod * (R::one() - alphas[j]);
                        }
                    }
                    g_alpha += g_raw[t] * prod;
                }
                out[k].1 = upstream * g_alpha * alphas[k] * (R::one() - alphas[k]);
            }
        }
    }
    out
}

/// `|pred − gt|` with subgradient `sign(pred − gt)` (0 at equality).
/// Returns `None` when `gt` is not positive and the sample must be skipped.
pub fn loss_l1<R: Real>(pred: R, gt: R) -> Option<(R, R)> {
    if !(gt > R::zero()) {
        return None;
    }
    let diff = pred - gt;
    let grad = if diff > R::zero() {
        R::one()
    } else if diff < R::zero() {
        -R::one()
    } else {
        R::zero()
    };
    Some((diff.abs(), grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn terms(values: &[f64], scores: &[f64]) -> Vec<BlendTerm<f64>> {
        values
            .iter()
            .zip(scores)
            .enumerate()
            .map(|(i, (&value, &score))| BlendTerm {
                value,
                score,
                t_start: i as f64 + 1.0,
            })
            .collect()
    }

    #[test]
    fn single_candidate() {
        let b = blend(&terms(&[2.0 + 0.3], &[-4.0]), BlendMode::Softmax).unwrap();
        assert_eq!(b.distance, 2.3);
        assert_eq!(b.weights, vec![1.0]);
    }

    #[test]
    fn equal_scores_average() {
        for mode in BlendMode::ALL {
            if mode == BlendMode::Alpha {
                continue;
            }
            let b = blend(&terms(&[2.0, 3.0], &[0.7, 0.7]), mode).unwrap();
            assert!((b.distance - 2.5).abs() < 1e-15, "{mode:?}");
        }
    }

    #[test]
    fn closed_form_softmax() {
        let b = blend(&terms(&[3.0, 0.0], &[2f64.ln(), 0.0]), BlendMode::Softmax).unwrap();
        assert!((b.weights[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((b.weights[1] - 1.0 / 3.0).abs() < 1e-15);
        assert!((b.distance - 2.0).abs() < 1e-15);
    }

    #[test]
    fn alpha_front_to_back() {
        // σ(0) = 0.5 each: raw weights 0.5, 0.25, renormalized to 2/3, 1/3.
        let b = blend(&terms(&[3.0, 6.0], &[0.0, 0.0]), BlendMode::Alpha).unwrap();
        assert!((b.weights[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((b.distance - 4.0).abs() < 1e-14);
    }

    #[test]
    fn empty_is_discarded() {
        assert!(blend::<f64>(&[], BlendMode::Softmax).is_none());
    }

    #[test]
    fn extreme_scores_stay_finite() {
        let b = blend(&terms(&[1.0, 2.0], &[1000.0, -1000.0]), BlendMode::Softmax).unwrap();
        assert_eq!(b.distance, 1.0);
        let b = blend(&terms(&[1.0, 2.0], &[-800.0, -800.0]), BlendMode::Alpha).unwrap();
        assert!(b.distance.is_finite());
    }

    #[test]
    fn l1_cases() {
        assert_eq!(loss_l1(2.3, 2.3), Some((0.0, 0.0)));
        assert_eq!(loss_l1(2.0, 3.0), Some((1.0, -1.0)));
        let batch = [(1.0, 2.0), (4.0, 2.0)];
        let mean: f64 = batch.iter().map(|&(p, g)| loss_l1(p, g).unwrap().0).sum::<f64>() / 2.0;
        assert_eq!(mean, 1.5);
        assert_eq!(loss_l1(1.0, 0.0), None);
        assert_eq!(loss_l1(1.0, -2.0), None);
    }

    #[test]
    fn mean_blend_gradient_is_uniform() {
        let t = terms(&[1.0, 4.0, 2.0], &[0.3, -2.0, 5.0]);
        let b = blend(&t, BlendMode::Mean).unwrap();
        for (gv, gs) in blend_backward(&t, BlendMode::Mean, &b, 1.0) {
            assert!((gv - 1.0 / 3.0).abs() < 1e-15);
            assert_eq!(gs, 0.0);
        }
    }

    #[test]
    fn mode_codes_round_trip() {
        for m in BlendMode::ALL {
            assert_eq!(BlendMode::from_code(m.code()).unwrap(), m);
            assert_eq!(m.name().parse::<BlendMode>().unwrap(), m);
        }
        assert!(BlendMode::from_code(9).is_err());
    }

    fn finite_difference_check(t: &[BlendTerm<f64>], mode: BlendMode) {
        let b = blend(t, mode).unwrap();
        let g = blend_backward(t, mode, &b, 1.0);
        let h = 1e-6;
        let eval = |t: &[BlendTerm<f64>]| blend(t, mode).unwrap().distance;
        for i in 0..t.len() {
            let mut tp = t.to_vec();
            tp[i].score += h;
            let up = eval(&tp);
            tp[i].score -= 2.0 * h;
            let fd = (up - eval(&tp)) / (2.0 * h);
            assert!((fd - g[i].1).abs() < 1e-7, "{mode:?} score {i}: {fd} vs {}", g[i].1);
            let mut tp = t.to_vec();
            tp[i].value += h;
            let up = eval(&tp);
            tp[i].value -= 2.0 * h;
            let fd = (up - eval(&tp)) / (2.0 * h);
            assert!((fd - g[i].0).abs() < 1e-7, "{mode:?} value {i}");
        }
    }

    proptest! {
        #[test]
        fn weights_are_convex(values in prop::collection::vec(0.1f64..10.0, 1..6), seed in 0u64..1000) {
            let scores: Vec<f64> = (0..values.len()).map(|i| ((seed + i as u64 * 7919) % 97) as f64 / 10.0 - 5.0).collect();
            for mode in BlendMode::ALL {
                let b = blend(&terms(&values, &scores), mode).unwrap();
                let sum: f64 = b.weights.iter().sum();
                prop_assert!((sum - 1.0).abs() < 1e-12);
                prop_assert!(b.weights.iter().all(|&w| w >= 0.0));
                let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                prop_assert!(b.distance >= lo && b.distance <= hi);
            }
        }

        #[test]
        fn softmax_permutation_invariant(values in prop::collection::vec(0.1f64..10.0, 2..6), rot in 0usize..5) {
            let scores: Vec<f64> = values.iter().map(|v| (v * 3.7).sin() * 4.0).collect();
            let t = terms(&values, &scores);
            let mut p = t.clone();
            p.rotate_left(rot % t.len());
            p.reverse();
            let a = blend(&t, BlendMode::Softmax).unwrap().distance;
            let b = blend(&p, BlendMode::Softmax).unwrap().distance;
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }

        #[test]
        fn softmax_shift_invariant(values in prop::collection::vec(0.1f64..10.0, 1..6), shift in -50i32..50) {
            // Dyadic scores keep the shift exact, so the result is bitwise equal.
            let scores: Vec<f64> = values.iter().map(|v| (v * 8.0).round() / 8.0).collect();
            let shifted: Vec<f64> = scores.iter().map(|s| s + shift as f64).collect();
            let a = blend(&terms(&values, &scores), BlendMode::Softmax).unwrap().distance;
            let b = blend(&terms(&values, &shifted), BlendMode::Softmax).unwrap().distance;
            prop_assert_eq!(a.to_bits(), b.to_bits());
        }

        #[test]
        fn softmax_shift_invariant_general(values in prop::collection::vec(0.1f64..10.0, 1..6), shift in -20.0f64..20.0) {
            let scores: Vec<f64> = values.iter().map(|v| (v * 1.3).cos()).collect();
            let shifted: Vec<f64> = scores.iter().map(|s| s + shift).collect();
            let a = blend(&terms(&values, &scores), BlendMode::Softmax).unwrap().distance;
            let b = blend(&terms(&values, &shifted), BlendMode::Softmax).unwrap().distance;
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }

        #[test]
        fn equal_predictions_agree_across_modes(v in 0.1f64..10.0, n in 1usize..6, s in -3.0f64..3.0) {
            let values = vec![v; n];
            let scores: Vec<f64> = (0..n).map(|i| s + i as f64).collect();
            let a = blend(&terms(&values, &scores), BlendMode::Mean).unwrap().distance;
            let b = blend(&terms(&values, &scores), BlendMode::Softmax).unwrap().distance;
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn gradients_match_finite_differences(values in prop::collection::vec(0.5f64..5.0, 1..6), seed in 0u64..500) {
            let scores: Vec<f64> = (0..values.len()).map(|i| (((seed * 31 + i as u64 * 17) % 41) as f64 / 10.0) - 2.0).collect();
            let t = terms(&values, &scores);
            for mode in BlendMode::ALL {
                finite_difference_check(&t, mode);
            }
        }
    }
}
