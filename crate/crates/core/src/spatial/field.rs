//! Direction-to-depth MLP with a softplus output.

use nalgebra::{DMatrix, DVector, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Columns evaluated per parallel chunk; fixes the reduction order.
const CHUNK: usize = 512;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldArchitecture {
    pub hidden_layers: usize,
    pub width: usize,
    /// Frequency octaves of the periodic direction encoding.
    pub octaves: usize,
}

impl Default for FieldArchitecture {
    fn default() -> Self {
        FieldArchitecture {
            hidden_layers: 2,
            width: 32,
            octaves: 6,
        }
    }
}

impl FieldArchitecture {
    /// `[d, sin(2ᵏ d), cos(2ᵏ d)]` for `k < octaves`.
    pub fn input_dim(&self) -> usize {
        3 + 6 * self.octaves
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

pub(crate) fn softplus_inv(y: f64) -> f64 {
    if y > 30.0 {
        y
    } else {
        y.exp_m1().ln()
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// A tanh MLP mapping a unit direction to a positive depth.
#[derive(Clone, Debug, PartialEq)]
pub struct GeometricField {
    arch: FieldArchitecture,
    weights: Vec<DMatrix<f64>>,
    biases: Vec<DVector<f64>>,
}

/// Encodes directions column-wise into a `input_dim × n` matrix.
pub(crate) fn encode_dirs(arch: &FieldArchitecture, dirs: &[Vector3<f64>]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(arch.input_dim(), dirs.len());
    for (j, d) in dirs.iter().enumerate() {
        let mut col = m.column_mut(j);
        for a in 0..3 {
            col[a] = d[a];
        }
        for k in 0..arch.octaves {
            let f = (1u64 << k) as f64;
            for a in 0..3 {
                let (s, c) = (f * d[a]).sin_cos();
                col[3 + 6 * k + a] = s;
                col[6 + 6 * k + a] = c;
            }
        }
    }
    m
}

impl GeometricField {
    /// Glorot-normal hidden weights from `seed`; zero output weights and an
    /// output bias chosen so the field starts constant at `initial_depth`.
    pub fn new(arch: FieldArchitecture, seed: u64, initial_depth: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        let mut fan_in = arch.input_dim();
        for _ in 0..arch.hidden_layers {
            let std = (2.0 / (fan_in + arch.width) as f64).sqrt();
            let n = Normal::new(0.0, std).unwrap();
            weights.push(DMatrix::from_fn(arch.width, fan_in, |_, _| n.sample(&mut rng)));
            biases.push(DVector::zeros(arch.width));
            fan_in = arch.width;
        }
        weights.push(DMatrix::zeros(1, fan_in));
        biases.push(DVector::from_element(1, softplus_inv(initial_depth.max(1e-6))));
        GeometricField { arch, weights, biases }
    }

    pub fn architecture(&self) -> &FieldArchitecture {
        &self.arch
    }

    pub fn param_count(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum::<usize>() + self.biases.iter().map(|b| b.len()).sum::<usize>()
    }

    /// Parameters flattened layer by layer, weights (column-major) then bias.
    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w.as_slice());
            out.extend_from_slice(b.as_slice());
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.param_count(), "parameter count mismatch");
        let mut at = 0;
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            let n = w.len();
            w.as_mut_slice().copy_from_slice(&flat[at..at + n]);
            at += n;
            let n = b.len();
            b.as_mut_slice().copy_from_slice(&flat[at..at + n]);
            at += n;
        }
    }

    pub fn eval(&self, dir: &Vector3<f64>) -> f64 {
        self.eval_encoded(&encode_dirs(&self.arch, std::slice::from_ref(dir)))[0]
    }

    pub fn eval_many(&self, dirs: &[Vector3<f64>]) -> Vec<f64> {
        self.eval_encoded(&encode_dirs(&self.arch, dirs))
    }

    fn forward(&self, x: DMatrix<f64>) -> (Vec<DMatrix<f64>>, DMatrix<f64>) {
        let mut acts = vec![x];
        let last = self.weights.len() - 1;
        for (w, b) in self.weights[..last].iter().zip(&self.biases) {
            let mut z = w * acts.last().unwrap();
            for mut col in z.column_iter_mut() {
                col += b;
            }
            z.apply(|v| *v = v.tanh());
            acts.push(z);
        }
        let mut out = &self.weights[last] * acts.last().unwrap();
        out.apply(|v| *v += self.biases[last][0]);
        (acts, out)
    }

    pub(crate) fn eval_encoded(&self, x: &DMatrix<f64>) -> Vec<f64> {
        let chunks: Vec<Vec<f64>> = (0..x.ncols())
            .step_by(CHUNK)
            .collect::<Vec<_>>()
            .into_par_iter()
            .map(|c0| {
                let n = CHUNK.min(x.ncols() - c0);
                let (_, z) = self.forward(x.columns(c0, n).into_owned());
                z.iter().map(|v| softplus(*v)).collect()
            })
            .collect();
        chunks.concat()
    }

    /// Parameter gradient of `Σᵢ upstreamᵢ · field(xᵢ)`.
    pub(crate) fn backprop(&self, x: &DMatrix<f64>, upstream: &[f64]) -> Vec<f64> {
        let starts: Vec<usize> = (0..x.ncols()).step_by(CHUNK).collect();
        let partials: Vec<Vec<f64>> = starts
            .into_par_iter()
            .map(|c0| {
                let n = CHUNK.min(x.ncols() - c0);
                let (acts, z) = self.forward(x.columns(c0, n).into_owned());
                let dz = DMatrix::from_fn(1, n, |_, j| upstream[c0 + j] * sigmoid(z[j]));
                let mut dws = Vec::with_capacity(self.weights.len());
                let mut dbs = Vec::with_capacity(self.weights.len());
                let mut delta = dz;
                for l in (0..self.weights.len()).rev() {
                    let input = &acts[l];
                    dws.push(&delta * input.transpose());
                    dbs.push(delta.column_sum());
                    if l > 0 {
                        let mut back = self.weights[l].transpose() * &delta;
                        back.zip_apply(input, |g, h| *g *= 1.0 - h * h);
                        delta = back;
                    }
                }
                dws.reverse();
                dbs.reverse();
                let mut flat = Vec::with_capacity(self.param_count());
                for (w, b) in dws.iter().zip(&dbs) {
                    flat.extend_from_slice(w.as_slice());
                    flat.extend_from_slice(b.as_slice());
                }
                flat
            })
            .collect();
        let mut total = vec![0.0; self.param_count()];
        for p in partials {
            for (t, v) in total.iter_mut().zip(p) {
                *t += v;
            }
        }
        total
    }
}
