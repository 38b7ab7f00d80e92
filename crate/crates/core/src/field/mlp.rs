//! Fully connected ReLU network with hand-written reverse-mode gradients.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Scalar type for network parameters: `f32` for training, `f64` for gradient checks.
pub trait Real:
    Float + FromPrimitive + ToPrimitive + AddAssign + SubAssign + MulAssign + Sum + Send + Sync + Debug + Default + 'static
{
}

impl Real for f32 {}
impl Real for f64 {}

#[inline]
pub(crate) fn real<R: Real>(v: f64) -> R {
    R::from_f64(v).expect("representable")
}

/// Layer widths: `input → hidden` then `hidden_layers × (hidden → hidden)`,
/// all with ReLU, then a linear `hidden → 2` head emitting `(d, s)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpShape {
    pub input: usize,
    pub hidden: usize,
    pub hidden_layers: usize,
}

impl MlpShape {
    pub const OUTPUTS: usize = 2;

    /// 256-wide with eight hidden layers.
    pub fn standard(input: usize) -> Self {
        MlpShape {
            input,
            hidden: 256,
            hidden_layers: 8,
        }
    }

    /// `(inputs, outputs)` of every layer in evaluation order.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = vec![(self.input, self.hidden)];
        dims.extend(std::iter::repeat((self.hidden, self.hidden)).take(self.hidden_layers));
        dims.push((self.hidden, Self::OUTPUTS));
        dims
    }

    pub fn param_count(&self) -> usize {
        self.layer_dims().iter().map(|(i, o)| i * o + o).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Span {
    inputs: usize,
    outputs: usize,
    weights: usize,
    bias: usize,
}

/// Network parameters, stored flat in layer order (row-major weights of
/// shape `outputs × inputs`, then bias) so optimizers and checkpoints see one
/// contiguous vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp<R> {
    shape: MlpShape,
    spans: Vec<Span>,
    params: Vec<R>,
}

fn spans(shape: &MlpShape) -> Vec<Span> {
    let mut off = 0;
    shape
        .layer_dims()
        .into_iter()
        .map(|(inputs, outputs)| {
            let s = Span {
                inputs,
                outputs,
                weights: off,
                bias: off + inputs * outputs,
            };
            off += inputs * outputs + outputs;
            s
        })
        .collect()
}

#[inline]
fn dot<R: Real>(a: &[R], b: &[R]) -> R {
    let mut acc = [R::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    let mut tail = R::zero();
    for (x, y) in ra.iter().zip(rb) {
        tail += *x * *y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

#[inline]
fn axpy<R: Real>(alpha: R, x: &[R], y: &mut [R]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * *xi;
    }
}

/// Per-sample activations kept for the backward pass: the input of every
/// layer followed by the network output.
#[derive(Debug, Clone)]
pub struct Activations<R> {
    buf: Vec<R>,
    offsets: Vec<usize>,
}

impl<R: Real> Activations<R> {
    pub fn new(shape: &MlpShape) -> Self {
        let dims = shape.layer_dims();
        let mut offsets = Vec::with_capacity(dims.len() + 2);
        let mut off = 0;
        for (i, _) in &dims {
            offsets.push(off);
            off += i;
        }
        offsets.push(off);
        off += MlpShape::OUTPUTS;
        offsets.push(off);
        Activations {
            buf: vec![R::zero(); off],
            offsets,
        }
    }

    /// Network input slot, to be filled before [`Mlp::forward_into`].
    pub fn input_mut(&mut self) -> &mut [R] {
        let end = self.offsets[1];
        &mut self.buf[..end]
    }

    pub fn input(&self) -> &[R] {
        &self.buf[..self.offsets[1]]
    }

    pub fn output(&self) -> [R; 2] {
        let o = self.offsets[self.offsets.len() - 2];
        [self.buf[o], self.buf[o + 1]]
    }

    fn layer(&self, l: usize) -> &[R] {
        &self.buf[self.offsets[l]..self.offsets[l + 1]]
    }
}

impl<R: Real> Mlp<R> {
    pub fn zeros(shape: MlpShape) -> Self {
        let spans = spans(&shape);
        Mlp {
            params: vec![R::zero(); shape.param_count()],
            spans,
            shape,
        }
    }

    /// Kaiming-uniform (fan-in) weights for ReLU layers, a small uniform
    /// head, and zero biases, so an untrained network predicts `d ≈ 0`.
    pub fn kaiming(shape: MlpShape, rng: &mut impl Rng) -> Self {
        let mut mlp = Mlp::zeros(shape);
        let last = mlp.spans.len() - 1;
        for (l, span) in mlp.spans.clone().iter().enumerate() {
            let fan_in = span.inputs.max(1) as f64;
            let bound = if l == last {
                0.1 / fan_in.sqrt()
            } else {
                (6.0 / fan_in).sqrt()
            };
            for w in &mut mlp.params[span.weights..span.bias] {
                *w = real(rng.gen_range(-bound..=bound));
            }
        }
        mlp
    }

    pub fn from_params(shape: MlpShape, params: Vec<R>) -> Result<Self> {
        if params.len() != shape.param_count() {
            return Err(Error::Shape {
                expected: shape.param_count(),
                got: params.len(),
            });
        }
        Ok(Mlp {
            spans: spans(&shape),
            shape,
            params,
        })
    }

    pub fn shape(&self) -> &MlpShape {
        &self.shape
    }

    pub fn params(&self) -> &[R] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [R] {
        &mut self.params
    }

    /// Sets the output-layer bias to `(b_d, b_s)`.
    pub fn set_output_bias(&mut self, b_d: R, b_s: R) {
        let s = self.spans[self.spans.len() - 1];
        self.params[s.bias] = b_d;
        self.params[s.bias + 1] = b_s;
    }

    pub fn cast<S: Real>(&self) -> Mlp<S> {
        Mlp {
            shape: self.shape,
            spans: self.spans.clone(),
            params: self
                .params
                .iter()
                .map(|v| S::from(*v).expect("finite parameter"))
                .collect(),
        }
    }

    /// `(d, s)` for one input vector.
    pub fn forward(&self, input: &[R]) -> Result<[R; 2]> {
        if input.len() != self.shape.input {
            return Err(Error::Shape {
                expected: self.shape.input,
                got: input.len(),
            });
        }
        let mut acts = Activations::new(&self.shape);
        acts.input_mut().copy_from_slice(input);
        Ok(self.forward_into(&mut acts))
    }

    /// Runs the network on the input already stored in `acts`, keeping every
    /// intermediate activation.
    pub fn forward_into(&self, acts: &mut Activations<R>) -> [R; 2] {
        let last = self.spans.len() - 1;
        for (l, span) in self.spans.iter().enumerate() {
            let (head, tail) = acts.buf.split_at_mut(acts.offsets[l + 1]);
            let x = &head[acts.offsets[l]..];
            let y = &mut tail[..span.outputs];
            let w = &self.params[span.weights..span.bias];
            let b = &self.params[span.bias..span.bias + span.outputs];
            for j in 0..span.outputs {
                let v = dot(&w[j * span.inputs..(j + 1) * span.inputs], x) + b[j];
                y[j] = if l < last { v.max(R::zero()) } else { v };
            }
        }
        acts.output()
    }

    /// Accumulates `∂L/∂θ` into `grads` given `∂L/∂(d, s)` for one sample,
    /// and optionally writes `∂L/∂input` into `grad_input`.
    pub fn backward(
        &self,
        acts: &Activations<R>,
        grad_out: [R; 2],
        grads: &mut [R],
        grad_input: Option<&mut [R]>,
        scratch: &mut Vec<R>,
    ) {
        debug_assert_eq!(grads.len(), self.params.len());
        let widest = self.shape.input.max(self.shape.hidden).max(2);
        scratch.clear();
        scratch.resize(2 * widest, R::zero());
        let (g_out, g_in) = scratch.split_at_mut(widest);
        g_out[0] = grad_out[0];
        g_out[1] = grad_out[1];
        let mut g_out: &mut [R] = g_out;
        let mut g_in: &mut [R] = g_in;
        for (l, span) in self.spans.iter().enumerate().rev() {
            let x = acts.layer(l);
            let g = &g_out[..span.outputs];
            let (gw, gb) = grads[span.weights..span.bias + span.outputs].split_at_mut(span.inputs * span.outputs);
            for j in 0..span.outputs {
                if g[j] != R::zero() {
                    axpy(g[j], x, &mut gw[j * span.inputs..(j + 1) * span.inputs]);
                    gb[j] += g[j];
                }
            }
            if l == 0 && grad_input.is_none() {
                break;
            }
            let gi = &mut g_in[..span.inputs];
            gi.iter_mut().for_each(|v| *v = R::zero());
            let w = &self.params[span.weights..span.bias];
            for j in 0..span.outputs {
                if g[j] != R::zero() {
                    axpy(g[j], &w[j * span.inputs..(j + 1) * span.inputs], gi);
                }
            }
            if l > 0 {
                // ReLU: gradient flows only where the layer input was positive.
                for (gv, xv) in gi.iter_mut().zip(x) {
                    if *xv <= R::zero() {
                        *gv = R::zero();
                    }
                }
            }
            std::mem::swap(&mut g_out, &mut g_in);
        }
        if let Some(out) = grad_input {
            out.copy_from_slice(&g_out[..self.shape.input]);
        }
    }
}
