use super::{ParamStore, Real};
use crate::error::{shape_err, Result};

/// Adam moments and hyper-parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    first: Vec<Vec<T>>,
    second: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        Self::with_betas(params, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(params: &ParamStore<T>, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Vec<T>> = params.iter().map(|(_, p)| vec![T::zero(); p.tensor.len()]).collect();
        Self {
            beta1,
            beta2,
            eps,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }
}

/// One bias-corrected Adam update of every trainable parameter.
pub fn adam_step<T: Real>(params: &mut ParamStore<T>, grads: &[Vec<T>], state: &mut AdamState<T>, lr: f64) -> Result<()> {
    if grads.len() != params.len() || state.first.len() != params.len() {
        return Err(shape_err!(
            "adam: {} parameters, {} gradients, {} moment buffers",
            params.len(),
            grads.len(),
            state.first.len()
        ));
    }
    for ((p, g), m) in params.params_mut().zip(grads).zip(&state.first) {
        if g.len() != p.tensor.len() || m.len() != p.tensor.len() {
            return Err(shape_err!("adam: gradient for {:?} has {} entries, expected {}", p.name, g.len(), p.tensor.len()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::of(state.beta1), T::of(state.beta2));
    let c1 = T::one() / (T::one() - T::of(state.beta1.powi(t)));
    let c2 = T::one() / (T::one() - T::of(state.beta2.powi(t)));
    let (lr, eps) = (T::of(lr), T::of(state.eps));
    for (((p, g), m), v) in params.params_mut().zip(grads).zip(&mut state.first).zip(&mut state.second) {
        if !p.trainable {
            continue;
        }
        for (((w, &g), m), v) in p.tensor.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = b1 * *m + (T::one() - b1) * g;
            *v = b2 * *v + (T::one() - b2) * g * g;
            let m_hat = *m * c1;
            let v_hat = *v * c2;
            *w -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Tensor;

    fn one_param(v: f64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        s.add("w", Tensor::scalar(v), true).unwrap();
        s
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut s = one_param(0.7);
        let mut st = AdamState::new(&s);
        for _ in 0..5 {
            adam_step(&mut s, &[vec![0.0]], &mut st, 1e-2).unwrap();
        }
        assert_eq!(s.tensor(s.id("w").unwrap()).item(), 0.7);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut s = one_param(1.0);
        let mut st = AdamState::new(&s);
        adam_step(&mut s, &[vec![1.0]], &mut st, 1e-4).unwrap();
        // m_hat = v_hat = 1, so the step is lr / (1 + eps).
        let w = s.tensor(s.id("w").unwrap()).item();
        assert!((1.0 - w - 1e-4 / (1.0 + 1e-8)).abs() < 1e-15);
    }

    #[test]
    fn frozen_parameters_do_not_move() {
        let mut s = ParamStore::<f64>::new();
        s.add("frozen", Tensor::scalar(3.0), false).unwrap();
        let mut st = AdamState::new(&s);
        adam_step(&mut s, &[vec![5.0]], &mut st, 0.1).unwrap();
        assert_eq!(s.tensor(s.id("frozen").unwrap()).item(), 3.0);
    }

    #[test]
    fn mismatched_gradients_rejected() {
        let mut s = one_param(1.0);
        let mut st = AdamState::new(&s);
        assert!(adam_step(&mut s, &[vec![1.0, 2.0]], &mut st, 0.1).is_err());
        assert!(adam_step(&mut s, &[], &mut st, 0.1).is_err());
    }
}
