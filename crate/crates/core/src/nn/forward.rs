use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::params::{ParamId, ParamStore};
use crate::autodiff::{Element, Gradients, Tape, Tensor, Var};
use crate::error::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Infer,
}

/// One recorded layer output: block, layer and the per-sample shape.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TraceRow {
    pub block: String,
    pub layer: String,
    pub shape: Vec<usize>,
}

/// State threaded through one forward pass: the tape, the bound parameters,
/// dropout randomness and the side outputs layers produce.
pub struct Forward<'a, T: Element> {
    pub tape: &'a mut Tape<T>,
    params: &'a ParamStore<T>,
    bound: Vec<Option<Var>>,
    mode: Mode,
    differentiate: bool,
    rng: ChaCha8Rng,
    bn_updates: Vec<(ParamId, Tensor<T>)>,
    aux: Vec<(String, Var)>,
    trace: Option<Vec<TraceRow>>,
    update_step: Option<u64>,
}

impl<'a, T: Element> Forward<'a, T> {
    /// Trainable parameters become tracked leaves when `differentiate` is set.
    pub fn new(
        tape: &'a mut Tape<T>,
        params: &'a ParamStore<T>,
        mode: Mode,
        differentiate: bool,
        seed: u64,
    ) -> Self {
        Forward {
            tape,
            params,
            bound: vec![None; params.len()],
            mode,
            differentiate,
            rng: ChaCha8Rng::seed_from_u64(seed),
            bn_updates: Vec::new(),
            aux: Vec::new(),
            trace: None,
            update_step: None,
        }
    }

    /// Uses caller-supplied vars for the given parameters.
    pub fn with_bindings(mut self, pairs: &[(ParamId, Var)]) -> Self {
        for &(id, v) in pairs {
            self.bound[id.0] = Some(v);
        }
        self
    }

    pub fn with_trace(mut self) -> Self {
        self.trace = Some(Vec::new());
        self
    }

    /// Number of optimizer updates applied so far. Moving averages use it to
    /// warm up: the effective momentum is `min(m, (1 + t) / (10 + t))`.
    pub fn with_update_step(mut self, t: u64) -> Self {
        self.update_step = Some(t);
        self
    }

    /// Momentum for a moving-average update with nominal momentum `m`.
    pub fn ema_momentum(&self, m: f64) -> f64 {
        match self.update_step {
            Some(t) => m.min((1.0 + t as f64) / (10.0 + t as f64)),
            None => m,
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn training(&self) -> bool {
        self.mode == Mode::Train
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn params(&self) -> &ParamStore<T> {
        self.params
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let p = self.params.get(id);
        let v = if self.differentiate && p.trainable {
            self.tape.variable(p.value.clone())
        } else {
            self.tape.constant(p.value.clone())
        };
        self.bound[id.0] = Some(v);
        v
    }

    pub fn bound(&self, id: ParamId) -> Option<Var> {
        self.bound[id.0]
    }

    pub fn push_bn_update(&mut self, id: ParamId, value: Tensor<T>) {
        self.bn_updates.push((id, value));
    }

    pub fn bn_updates(&self) -> &[(ParamId, Tensor<T>)] {
        &self.bn_updates
    }

    pub fn take_bn_updates(&mut self) -> Vec<(ParamId, Tensor<T>)> {
        std::mem::take(&mut self.bn_updates)
    }

    pub fn push_aux(&mut self, name: impl Into<String>, loss: Var) {
        self.aux.push((name.into(), loss));
    }

    pub fn aux_losses(&self) -> &[(String, Var)] {
        &self.aux
    }

    /// Records `v`'s shape without the batch axis.
    pub fn record(&mut self, block: &str, layer: &str, v: Var) {
        if let Some(t) = self.trace.as_mut() {
            let shape = self.tape.shape(v)[1..].to_vec();
            t.push(TraceRow {
                block: block.to_string(),
                layer: layer.to_string(),
                shape,
            });
        }
    }

    pub fn take_trace(&mut self) -> Vec<TraceRow> {
        self.trace.take().unwrap_or_default()
    }

    /// Gradients of every bound trainable parameter, in store order.
    pub fn param_grads(&self, grads: &Gradients<T>) -> Vec<(ParamId, Option<Tensor<T>>)> {
        self.params
            .ids()
            .filter(|&id| self.params.get(id).trainable)
            .map(|id| (id, self.bound[id.0].and_then(|v| grads.get(v).cloned())))
            .collect()
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.tape.constant(t)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        self.tape.value(v)
    }

    pub fn shape(&self, v: Var) -> Vec<usize> {
        self.tape.shape(v).to_vec()
    }
}

/// Runs `f` and tags any error with `layer`.
pub(crate) fn in_layer<R>(layer: &str, f: impl FnOnce() -> Result<R>) -> Result<R> {
    f().map_err(|e| e.in_layer(layer))
}
