//! Finite-difference checks of every layer on small random instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use super::{
    AttentionBlock, BiLstm, BlockCommon, Builder, ConvBlock, ConvBlockConfig, DenseSoftmax, Forward, Gcn, Lstm,
    MinCutPool, Mode, MultiHeadAttention, PRelu, ParamId, ParamStore, PoolConfig,
};
use crate::autodiff::{grad_check_many, Padding, Tape, Tensor, Var, DEFAULT_EPS, DEFAULT_TOL};
use crate::debruijn::normalize_adjacency;
use crate::error::Result;

/// Outcome of checking one layer on one seed.
#[derive(Clone, Debug, Serialize)]
pub struct LayerCheck {
    pub layer: &'static str,
    pub seed: u64,
    pub params: usize,
    pub max_rel_error: f64,
    pub passed: bool,
}

fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::from_vec(shape, data).expect("random shape")
}

/// Fixed, position-dependent weights so the scalar probe touches every output.
fn probe(tape: &mut Tape<f64>, y: Var) -> Result<Var> {
    let shape = tape.shape(y).to_vec();
    let n: usize = shape.iter().product();
    let w: Vec<f64> = (0..n).map(|i| (1.3 * i as f64 + 0.7).sin()).collect();
    let w = tape.constant(Tensor::from_vec(&shape, w)?);
    let p = tape.mul(y, w)?;
    Ok(tape.sum(p))
}

/// Path graph adjacency, normalised, repeated over the batch.
fn path_adjacency(batch: usize, n: usize) -> Tensor<f64> {
    let mut a = vec![0.0; n * n];
    for i in 1..n {
        a[(i - 1) * n + i] = 1.0;
        a[i * n + i - 1] = 1.0;
    }
    let norm = normalize_adjacency(&a, n).expect("path graph");
    let data: Vec<f64> = (0..batch).flat_map(|_| norm.iter().copied()).collect();
    Tensor::from_vec(&[batch, n, n], data).expect("adjacency shape")
}

/// Checks gradients w.r.t. every trainable parameter and every input.
fn check<L>(
    layer: &'static str,
    seed: u64,
    build: impl FnOnce(&mut Builder<f64>) -> Result<L>,
    inputs: Vec<Tensor<f64>>,
    constants: Vec<Tensor<f64>>,
    mode: Mode,
    f: impl Fn(&L, &mut Forward<f64>, &[Var]) -> Result<Var>,
) -> Result<LayerCheck> {
    let mut store = ParamStore::new();
    let l = build(&mut Builder::new(&mut store, seed))?;
    // move parameters off their structured initial values
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let ids: Vec<ParamId> = store.ids().filter(|&id| store.get(id).trainable).collect();
    for &id in &ids {
        let old = store.value(id);
        let data = old.data().iter().map(|&x| x + 0.1 * rng.sample::<f64, _>(StandardNormal)).collect();
        let v = Tensor::from_vec(old.shape(), data)?;
        store.set(id, v)?;
    }
    let n_inputs = inputs.len();
    let mut tensors = inputs;
    tensors.extend(ids.iter().map(|&id| store.value(id).clone()));
    let params = store.trainable_count();
    let report = grad_check_many(
        |tape, vars| {
            let bindings: Vec<(ParamId, Var)> = ids.iter().copied().zip(vars[n_inputs..].iter().copied()).collect();
            let mut xs = vars[..n_inputs].to_vec();
            xs.extend(constants.iter().map(|c| tape.constant(c.clone())));
            let mut cx = Forward::new(tape, &store, mode, true, seed).with_bindings(&bindings);
            let y = f(&l, &mut cx, &xs)?;
            probe(cx.tape, y)
        },
        &tensors,
        DEFAULT_EPS,
        DEFAULT_TOL,
    )?;
    Ok(LayerCheck {
        layer,
        seed,
        params,
        max_rel_error: report.max_rel_error,
        passed: report.passed,
    })
}

pub const SUITE_LAYERS: [&str; 9] = [
    "PReLU",
    "conv block",
    "multi-head attention",
    "attention block",
    "LSTM",
    "BiLSTM",
    "GCN",
    "MinCutPool",
    "dense softmax",
];

/// Runs every layer check for each seed. Each instance has at most 200
/// learnable parameters.
pub fn layer_suite(seeds: &[u64]) -> Result<Vec<LayerCheck>> {
    let mut out = Vec::new();
    for &seed in seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let common = BlockCommon {
            prelu_init: 0.25,
            bn_momentum: 0.99,
            bn_eps: 1e-3,
        };
        out.push(check(
            "PReLU",
            seed,
            |b| PRelu::new(b, "prelu", 3, 0.25),
            vec![random(&[2, 4, 3], &mut rng)],
            vec![],
            Mode::Train,
            |l, cx, x| l.forward(cx, x[0]),
        )?);
        let cfg = ConvBlockConfig {
            filters: 3,
            kernel: 3,
            pool: PoolConfig {
                size: 2,
                stride: 2,
                padding: Padding::Valid,
            },
            dropout: 0.2,
        };
        out.push(check(
            "conv block",
            seed,
            |b| ConvBlock::new(b, "block", 2, cfg, common),
            vec![random(&[2, 6, 2], &mut rng)],
            vec![],
            Mode::Train,
            |l, cx, x| l.forward(cx, x[0], "block"),
        )?);
        out.push(check(
            "multi-head attention",
            seed,
            |b| MultiHeadAttention::new(b, "mha", 4, 2),
            vec![random(&[2, 3, 4], &mut rng)],
            vec![],
            Mode::Train,
            |l, cx, x| l.forward(cx, x[0]),
        )?);
        out.push(check(
            "attention block",
            seed,
            |b| AttentionBlock::new(b, "attn", 4, 4, 1, 2),
            vec![random(&[2, 3, 4], &mut rng)],
            vec![],
            Mode::Train,
            |l, cx, x| l.forward(cx, x[0], "attn"),
        )?);
        out.push(check(
            "LSTM",
            seed,
            |b| Lstm::new(b, "lstm", 3, 3),
            vec![random(&[2, 4, 3], &mut rng)],
            vec![],
            Mode::Train,
            |l, cx, x| l.last(cx, x[0]),
        )?);
        out.push(check(
            "BiLSTM",
            seed,
            |b| BiLstm::new(b, "bilstm", 3, 3),
            vec![random(&[2, 4, 3], &mut rng)],
            vec![],
            Mode::Train,
            |l, cx, x| l.forward(cx, x[0]),
        )?);
        out.push(check(
            "GCN",
            seed,
            |b| Gcn::new(b, "gcn", 3, 4),
            vec![random(&[2, 5, 3], &mut rng)],
            vec![path_adjacency(2, 5)],
            Mode::Train,
            |l, cx, x| l.forward(cx, x[0], x[1]),
        )?);
        out.push(check(
            "MinCutPool",
            seed,
            |b| MinCutPool::new(b, "pool", 3, 2),
            vec![random(&[2, 6, 3], &mut rng)],
            vec![path_adjacency(2, 6)],
            Mode::Train,
            |l, cx, x| {
                let p = l.forward(cx, x[0], x[1])?;
                let fx = cx.tape.reshape(p.x, &[2, 6])?;
                let fa = cx.tape.reshape(p.a, &[2, 4])?;
                let both = cx.tape.concat(&[fx, fa], 1)?;
                let aux = cx.tape.add(p.cut_loss, p.ortho_loss)?;
                let aux = cx.tape.reshape(aux, &[1, 1])?;
                let aux = cx.tape.broadcast_to(aux, &[2, 1])?;
                cx.tape.concat(&[both, aux], 1)
            },
        )?);
        out.push(check(
            "dense softmax",
            seed,
            |b| DenseSoftmax::new(b, "head", 5, 2),
            vec![random(&[3, 5], &mut rng)],
            vec![],
            Mode::Train,
            |l, cx, x| l.forward(cx, x[0]).map(|(_, p)| p),
        )?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_passes_on_one_seed() {
        let r = layer_suite(&[1]).unwrap();
        assert_eq!(r.len(), SUITE_LAYERS.len());
        for c in &r {
            assert!(c.params <= 200, "{c:?}");
            assert!(c.passed, "{c:?}");
        }
    }
}
