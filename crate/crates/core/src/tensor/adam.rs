use super::{GradientSet, ParamStore, Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { lr: 0.01, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig { lr, ..Self::default() }
    }
}

/// First/second moment estimates for every parameter of one store.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamStore<T>, config: AdamConfig) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|(_, p)| Tensor::zeros(p.value.dims().to_vec()))
                .collect::<Vec<_>>()
        };
        AdamState { config, m: zeros(), v: zeros(), t: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self, index: usize) -> &Tensor<T> {
        &self.m[index]
    }

    pub fn second_moment(&self, index: usize) -> &Tensor<T> {
        &self.v[index]
    }

    /// One bias-corrected Adam update. Parameters absent from `grads` are
    /// treated as having zero gradient. Nothing is modified on error.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &GradientSet<T>) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::shape(format!(
                "optimizer tracks {} parameters, store has {}",
                self.m.len(),
                params.len()
            )));
        }
        for (id, g) in grads.iter() {
            if g.dims() != params.get(id).dims() {
                return Err(Error::shape(format!(
                    "gradient for `{}` is {:?}, parameter is {:?}",
                    params.name(id),
                    g.dims(),
                    params.get(id).dims()
                )));
            }
            if g.data().iter().any(|v| v.is_nan()) {
                return Err(Error::NanGradient(params.name(id).to_string()));
            }
        }

        self.t += 1;
        let c = self.config;
        let b1 = T::from_f64(c.beta1).unwrap();
        let b2 = T::from_f64(c.beta2).unwrap();
        let lr = T::from_f64(c.lr).unwrap();
        let eps = T::from_f64(c.eps).unwrap();
        let bc1 = T::from_f64(1.0 - c.beta1.powi(self.t as i32)).unwrap();
        let bc2 = T::from_f64(1.0 - c.beta2.powi(self.t as i32)).unwrap();
        let one = T::one();

        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            let i = id.index();
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            let w = params.get_mut(id).data_mut();
            match grads.get(id) {
                Some(g) => {
                    for (((w, m), v), &g) in w.iter_mut().zip(m).zip(v.iter_mut()).zip(g.data()) {
                        *m = b1 * *m + (one - b1) * g;
                        *v = b2 * *v + (one - b2) * g * g;
                        *w = *w - lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
                    }
                }
                None => {
                    for ((w, m), v) in w.iter_mut().zip(m).zip(v.iter_mut()) {
                        *m = b1 * *m;
                        *v = b2 * *v;
                        *w = *w - lr * (*m / bc1) / ((*v / bc2).sqrt() + eps);
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
    use crate::tensor::Tape;

    fn scalar_store(w: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.register("w", Tensor::from_chw(1, 1, 1, vec![w]).unwrap()).unwrap();
        s
    }

    fn grad_of_square(s: &ParamStore<f64>) -> GradientSet<f64> {
        let id = s.find("w").unwrap();
        let mut tape = Tape::new(s);
        let w = tape.param(id).unwrap();
        let sq = tape.hadamard(w, w).unwrap();
        let l = tape.sum(sq).unwrap();
        tape.backward(l).unwrap()
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut s = scalar_store(0.3);
        let mut adam = AdamState::new(&s, AdamConfig::default());
        adam.step(&mut s, &GradientSet::default()).unwrap();
        assert_eq!(s.get(s.find("w").unwrap()).data()[0], 0.3);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn first_step_is_a_sign_step() {
        for g in [1e-3, 0.5, 40.0] {
            let mut s = scalar_store(0.0);
            let id = s.find("w").unwrap();
            let mut grads = GradientSet::default();
            grads.accumulate_for_test(id, Tensor::from_chw(1, 1, 1, vec![g]).unwrap());
            let mut adam = AdamState::new(&s, AdamConfig::default());
            adam.step(&mut s, &grads).unwrap();
            let w = s.get(id).data()[0];
            assert!((w + 0.01 * g / (g + 1e-8)).abs() < 1e-12);
            assert!((w + 0.01).abs() < 1e-7);
        }
    }

    #[test]
    fn ten_steps_on_a_parabola_match_scalar_oracle() {
        // hand-rolled scalar Adam
        let (mut w, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        let (lr, b1, b2, eps) = (0.01, 0.9, 0.999, 1e-8);
        for t in 1..=10 {
            let g = 2.0 * w;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            w -= lr * mh / (vh.sqrt() + eps);
        }

        let mut s = scalar_store(1.0);
        let mut adam = AdamState::new(&s, AdamConfig::default());
        for _ in 0..10 {
            let g = grad_of_square(&s);
            adam.step(&mut s, &g).unwrap();
        }
        let got = s.get(s.find("w").unwrap()).data()[0];
        assert!((got - w).abs() < 1e-6, "{got} vs {w}");
        assert!(adam.second_moment(0).data()[0] >= 0.0);
    }

    #[test]
    fn nan_gradient_names_the_parameter() {
        let mut s = scalar_store(1.0);
        let id = s.find("w").unwrap();
        let mut grads = GradientSet::default();
        grads.accumulate_for_test(id, Tensor::from_chw(1, 1, 1, vec![f64::NAN]).unwrap());
        let mut adam = AdamState::new(&s, AdamConfig::default());
        match adam.step(&mut s, &grads) {
            Err(Error::NanGradient(name)) => assert_eq!(name, "w"),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(adam.step_count(), 0);
        assert_eq!(s.get(id).data()[0], 1.0);
    }
}
