use crate::autodiff::{Element, Tensor};
use crate::error::{Error, Result};
use crate::nn::{ParamId, ParamStore};

use super::config::{OptimizerKind, TrainConfig};

/// First-order optimizer state for every parameter of one store.
#[derive(Clone, Debug)]
pub struct Optimizer<T> {
    kind: OptimizerKind,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    rho: f64,
    /// Update count.
    t: u64,
    m: Vec<Option<Tensor<T>>>,
    v: Vec<Option<Tensor<T>>>,
}

impl<T: Element> Optimizer<T> {
    pub fn new(cfg: &TrainConfig) -> Self {
        Optimizer {
            kind: cfg.optimizer,
            beta1: cfg.adam.beta1,
            beta2: cfg.adam.beta2,
            epsilon: cfg.adam.epsilon,
            rho: cfg.rho,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn adam(beta1: f64, beta2: f64, epsilon: f64) -> Self {
        let mut cfg = TrainConfig::default();
        cfg.adam = super::config::AdamConfig { beta1, beta2, epsilon };
        Self::new(&cfg)
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update. Parameters without a gradient are left alone.
    /// All gradients are checked before anything is modified, so a
    /// non-finite gradient leaves parameters and state untouched.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &[(ParamId, Option<Tensor<T>>)], lr: f64) -> Result<()> {
        for (id, g) in grads {
            if let Some(g) = g {
                if !g.all_finite() {
                    return Err(Error::Divergence(format!(
                        "non-finite gradient for parameter '{}'",
                        store.get(*id).name
                    )));
                }
            }
        }
        if self.m.len() < store.len() {
            self.m.resize(store.len(), None);
            self.v.resize(store.len(), None);
        }
        self.t += 1;
        let t = self.t as i32;
        let (b1, b2, eps) = (T::of(self.beta1), T::of(self.beta2), T::of(self.epsilon));
        let c1 = T::of(1.0 - self.beta1.powi(t));
        let c2 = T::of(1.0 - self.beta2.powi(t));
        let rho = T::of(self.rho);
        let lr = T::of(lr);
        let one = T::one();
        for (id, g) in grads {
            let Some(g) = g else { continue };
            let i = id.index();
            let shape = g.shape().to_vec();
            let w = store.value_mut(*id).data_mut();
            let gd = g.data();
            match self.kind {
                OptimizerKind::Sgd => {
                    for (w, &g) in w.iter_mut().zip(gd) {
                        *w = *w - lr * g;
                    }
                }
                OptimizerKind::Rmsprop => {
                    let v = self.v[i].get_or_insert_with(|| Tensor::zeros(&shape)).data_mut();
                    for ((w, &g), v) in w.iter_mut().zip(gd).zip(v.iter_mut()) {
                        *v = rho * *v + (one - rho) * g * g;
                        *w = *w - lr * g / (v.sqrt() + eps);
                    }
                }
                OptimizerKind::Adam => {
                    let m = self.m[i].get_or_insert_with(|| Tensor::zeros(&shape)).data_mut();
                    let v = self.v[i].get_or_insert_with(|| Tensor::zeros(&shape)).data_mut();
                    for (((w, &g), m), v) in w.iter_mut().zip(gd).zip(m.iter_mut()).zip(v.iter_mut()) {
                        *m = b1 * *m + (one - b1) * g;
                        *v = b2 * *v + (one - b2) * g * g;
                        let m_hat = *m / c1;
                        let v_hat = *v / c2;
                        *w = *w - lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store(w: f64) -> (ParamStore<f64>, ParamId) {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::from_f64(&[1], &[w]).unwrap(), true).unwrap();
        (s, id)
    }

    #[test]
    fn zero_gradient_leaves_parameters_and_counts_the_step() {
        let (mut s, id) = store(0.7);
        let mut opt = Optimizer::<f64>::adam(0.9, 0.999, 1e-7);
        opt.step(&mut s, &[(id, Some(Tensor::zeros(&[1])))], 0.1).unwrap();
        assert_eq!(s.value(id).data()[0], 0.7);
        assert_eq!(opt.steps(), 1);
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let (mut s, id) = store(0.7);
        let mut opt = Optimizer::<f64>::adam(0.9, 0.999, 1e-7);
        let err = opt
            .step(&mut s, &[(id, Some(Tensor::from_f64(&[1], &[f64::NAN]).unwrap()))], 0.1)
            .unwrap_err();
        assert!(err.to_string().contains("'w'"), "{err}");
        assert_eq!(s.value(id).data()[0], 0.7);
        assert_eq!(opt.steps(), 0);
    }

    #[test]
    fn sgd_is_plain_gradient_descent() {
        let (mut s, id) = store(1.0);
        let cfg = TrainConfig { optimizer: OptimizerKind::Sgd, ..TrainConfig::default() };
        let mut opt = Optimizer::<f64>::new(&cfg);
        opt.step(&mut s, &[(id, Some(Tensor::from_f64(&[1], &[2.0]).unwrap()))], 0.1).unwrap();
        assert!((s.value(id).data()[0] - 0.8).abs() < 1e-15);
    }
}
