//! Fully connected tanh networks as vector fields.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rhs::Rhs;
use crate::scalar::{tanh, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
}

/// Layer widths `(n, hidden.., n)`; tanh on hidden layers, identity output.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub layer_widths: Vec<usize>,
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(layer_widths: Vec<usize>) -> Result<Self> {
        let spec = MlpSpec {
            layer_widths,
            activation: Activation::Tanh,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let w = &self.layer_widths;
        if w.len() < 3 {
            return Err(Error::invalid("network needs at least one hidden layer"));
        }
        if w.first() != w.last() {
            return Err(Error::invalid("input and output widths must match"));
        }
        if w.contains(&0) {
            return Err(Error::invalid("layer widths must be positive"));
        }
        Ok(())
    }

    pub fn state_dim(&self) -> usize {
        self.layer_widths[0]
    }

    fn layers(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.layer_widths.windows(2).map(|w| (w[0], w[1]))
    }

    fn max_width(&self) -> usize {
        *self.layer_widths.iter().max().unwrap()
    }
}

/// `sum_l (w_l * w_{l+1} + w_{l+1})`.
pub fn mlp_param_count(spec: &MlpSpec) -> usize {
    spec.layers().map(|(i, o)| i * o + o).sum()
}

/// Forward pass; weights are row-major `(out x in)` followed by biases, per layer.
pub fn mlp_eval<S: Scalar>(spec: &MlpSpec, params: &[S], x: &[S]) -> Vec<S> {
    let mut out = vec![S::zero(); spec.state_dim()];
    eval_into(spec, params, x, &mut out);
    out
}

/// Dot product with four interleaved partial sums.
#[inline]
fn dot<S: Scalar>(a: &[S], b: &[S]) -> S {
    let mut acc = [S::zero(); 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (u, v) in ca.zip(cb) {
        for k in 0..4 {
            acc[k] += u[k] * v[k];
        }
    }
    for (u, v) in ra.iter().zip(rb) {
        acc[0] += *u * *v;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3])
}

const STACK_WIDTH: usize = 64;

fn eval_into<S: Scalar>(spec: &MlpSpec, params: &[S], x: &[S], out: &mut [S]) {
    let cap = spec.max_width();
    if cap <= STACK_WIDTH {
        let mut a = [S::zero(); STACK_WIDTH];
        let mut b = [S::zero(); STACK_WIDTH];
        forward(spec, params, x, out, &mut a, &mut b);
    } else {
        let mut a = vec![S::zero(); cap];
        let mut b = vec![S::zero(); cap];
        forward(spec, params, x, out, &mut a, &mut b);
    }
}

fn forward<'a, S: Scalar>(spec: &MlpSpec, params: &[S], x: &[S], out: &mut [S], mut cur: &'a mut [S], mut next: &'a mut [S]) {
    let n_layers = spec.layer_widths.len() - 1;
    cur[..x.len()].copy_from_slice(x);
    let mut off = 0;
    for (l, (fan_in, fan_out)) in spec.layers().enumerate() {
        let w = &params[off..off + fan_in * fan_out];
        let b = &params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
        off += fan_in * fan_out + fan_out;
        for r in 0..fan_out {
            let acc = b[r] + dot(&w[r * fan_in..(r + 1) * fan_in], &cur[..fan_in]);
            next[r] = if l + 1 < n_layers { acc.tanh() } else { acc };
        }
        std::mem::swap(&mut cur, &mut next);
    }
    out.copy_from_slice(&cur[..out.len()]);
}

/// Glorot-uniform weights and zero biases from a seeded stream.
pub fn mlp_init(spec: &MlpSpec, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = Vec::with_capacity(mlp_param_count(spec));
    for (fan_in, fan_out) in spec.layers() {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        params.extend((0..fan_in * fan_out).map(|_| rng.gen_range(-limit..limit)));
        params.extend(std::iter::repeat_n(0.0, fan_out));
    }
    params
}

/// A network as a field; parameters are the flat weight vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpRhs {
    pub spec: MlpSpec,
}

impl MlpRhs {
    pub fn new(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        Ok(MlpRhs { spec })
    }
}

impl Rhs for MlpRhs {
    fn state_dim(&self) -> usize {
        self.spec.state_dim()
    }

    fn param_count(&self) -> usize {
        mlp_param_count(&self.spec)
    }

    fn eval<S: Scalar>(&self, coeffs: &[S], x: &[S], out: &mut [S]) {
        eval_into(&self.spec, coeffs, x, out);
    }

    fn vjp(&self, coeffs: &[f64], x: &[f64], cot: &[f64], x_bar: &mut [f64], coeff_bar: &mut [f64]) {
        let spec = &self.spec;
        let n_layers = spec.layer_widths.len() - 1;
        let mut acts: Vec<Vec<f64>> = Vec::with_capacity(n_layers + 1);
        let mut offsets = Vec::with_capacity(n_layers);
        acts.push(x.to_vec());
        let mut off = 0;
        for (l, (fan_in, fan_out)) in spec.layers().enumerate() {
            offsets.push(off);
            let w = &coeffs[off..off + fan_in * fan_out];
            let b = &coeffs[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
            off += fan_in * fan_out + fan_out;
            let prev = &acts[l];
            let layer: Vec<f64> = (0..fan_out)
                .map(|r| {
                    let z = b[r] + dot(&w[r * fan_in..(r + 1) * fan_in], prev);
                    if l + 1 < n_layers {
                        tanh(z)
                    } else {
                        z
                    }
                })
                .collect();
            acts.push(layer);
        }

        let mut delta = cot.to_vec();
        for (l, (fan_in, fan_out)) in spec.layers().enumerate().collect::<Vec<_>>().into_iter().rev() {
            let off = offsets[l];
            let prev = &acts[l];
            let mut prev_bar = vec![0.0; fan_in];
            for r in 0..fan_out {
                let d = delta[r];
                let row = off + r * fan_in;
                for c in 0..fan_in {
                    coeff_bar[row + c] += d * prev[c];
                    prev_bar[c] += d * coeffs[row + c];
                }
                coeff_bar[off + fan_in * fan_out + r] += d;
            }
            if l == 0 {
                for (xb, pb) in x_bar.iter_mut().zip(&prev_bar) {
                    *xb += pb;
                }
            } else {
                delta = prev_bar
                    .iter()
                    .zip(prev)
                    .map(|(pb, h)| pb * (1.0 - h * h))
                    .collect();
            }
        }
    }
}

/// Serialized network: widths, activation and the flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub widths: Vec<usize>,
    pub activation: Activation,
    pub params: Vec<f64>,
}
