//! Weight initialisers and the builder that registers parameters.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::params::{ParamId, ParamStore};
use crate::autodiff::{Element, Tensor};
use crate::error::Result;

/// Glorot-uniform over `shape`; fans follow the usual convention for
/// kernels whose leading axes form the receptive field.
pub fn glorot_uniform(shape: &[usize], rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = shape.len();
    let receptive: usize = shape[..n.saturating_sub(2)].iter().product();
    let fan_in = if n >= 2 { shape[n - 2] } else { shape[0] } * receptive;
    let fan_out = shape[n - 1] * receptive;
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let count: usize = shape.iter().product();
    (0..count).map(|_| rng.random_range(-limit..limit)).collect()
}

/// `rows × cols` matrix with orthonormal rows (if `rows ≤ cols`) or columns.
pub fn orthogonal(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    // Gram-Schmidt over the vectors of the longer side
    let (vecs, dim) = if rows <= cols { (rows, cols) } else { (cols, rows) };
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(vecs);
    while basis.len() < vecs {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        for _ in 0..2 {
            for q in &basis {
                let d: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(q).for_each(|(a, b)| *a -= d * b);
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-8 {
            v.iter_mut().for_each(|a| *a /= norm);
            basis.push(v);
        }
    }
    let mut out = vec![0.0; rows * cols];
    for (i, q) in basis.iter().enumerate() {
        for (j, &x) in q.iter().enumerate() {
            if rows <= cols {
                out[i * cols + j] = x;
            } else {
                out[j * cols + i] = x;
            }
        }
    }
    out
}

/// Registers parameters under a name prefix with a seeded generator.
pub struct Builder<'a, T> {
    store: &'a mut ParamStore<T>,
    rng: ChaCha8Rng,
    prefix: Vec<String>,
}

impl<'a, T: Element> Builder<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, seed: u64) -> Self {
        Builder {
            store,
            rng: ChaCha8Rng::seed_from_u64(seed),
            prefix: Vec::new(),
        }
    }

    pub fn push(&mut self, scope: &str) {
        self.prefix.push(scope.to_string());
    }

    pub fn pop(&mut self) {
        self.prefix.pop();
    }

    /// Full name of `leaf` in the current scope.
    pub fn path(&self, leaf: &str) -> String {
        let mut parts = self.prefix.clone();
        parts.push(leaf.to_string());
        parts.join("/")
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn add(&mut self, leaf: &str, shape: &[usize], data: &[f64], trainable: bool) -> Result<ParamId> {
        let t = Tensor::from_f64(shape, data)?;
        let name = self.path(leaf);
        self.store.add(name, t, trainable)
    }

    pub fn glorot(&mut self, leaf: &str, shape: &[usize]) -> Result<ParamId> {
        let data = glorot_uniform(shape, &mut self.rng);
        self.add(leaf, shape, &data, true)
    }

    pub fn orthogonal(&mut self, leaf: &str, rows: usize, cols: usize) -> Result<ParamId> {
        let data = orthogonal(rows, cols, &mut self.rng);
        self.add(leaf, &[rows, cols], &data, true)
    }

    pub fn constant(&mut self, leaf: &str, shape: &[usize], value: f64, trainable: bool) -> Result<ParamId> {
        let n: usize = shape.iter().product();
        self.add(leaf, shape, &vec![value; n], trainable)
    }
}
