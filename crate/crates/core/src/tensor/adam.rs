//! Adaptive moment estimation optimizer.

use super::{Result, Tensor, TensorError};
use crate::num::Scalar;

/// Optimizer state: bias-corrected first/second moments per parameter.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub step_count: u64,
    pub first_moment: Vec<Tensor<T>>,
    pub second_moment: Vec<Tensor<T>>,
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl<T: Scalar> AdamState<T> {
    /// Fresh state with zero moments matching the parameter shapes.
    pub fn new(param_shapes: &[&[usize]], alpha: f64) -> Self {
        AdamState {
            step_count: 0,
            first_moment: param_shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            second_moment: param_shapes.iter().map(|s| Tensor::zeros(s)).collect(),
            alpha,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }

    pub fn with_hyper(mut self, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        self.beta1 = beta1;
        self.beta2 = beta2;
        self.epsilon = epsilon;
        self
    }
}

/// One bias-corrected ADAM update over an aligned parameter/gradient list.
pub fn adam_step<T: Scalar>(
    params: &mut [&mut Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
) -> Result<()> {
    if params.len() != grads.len()
        || params.len() != state.first_moment.len()
        || params.len() != state.second_moment.len()
    {
        return Err(TensorError::Invalid(format!(
            "adam_step: {} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.first_moment.len()
        )));
    }
    for (i, (p, g)) in params.iter().map(|p| &**p).zip(grads).enumerate() {
        if p.shape() != g.shape() || p.shape() != state.first_moment[i].shape() {
            return Err(TensorError::shape(
                "adam_step",
                format!(
                    "param {:?} vs grad {:?} vs moment {:?} at index {i}",
                    p.shape(),
                    g.shape(),
                    state.first_moment[i].shape()
                ),
            ));
        }
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let bc1 = 1.0 - b1.powi(t);
    let bc2 = 1.0 - b2.powi(t);
    for i in 0..params.len() {
        let m = state.first_moment[i].data_mut();
        let v = state.second_moment[i].data_mut();
        let g = grads[i].data();
        let p = params[i].data_mut();
        for j in 0..p.len() {
            let gj = g[j].as_f64();
            let mj = b1 * m[j].as_f64() + (1.0 - b1) * gj;
            let vj = b2 * v[j].as_f64() + (1.0 - b2) * gj * gj;
            m[j] = T::of_f64(mj);
            v[j] = T::of_f64(vj);
            let m_hat = mj / bc1;
            let v_hat = vj / bc2;
            let upd = p[j].as_f64() - state.alpha * m_hat / (v_hat.sqrt() + state.epsilon);
            if !upd.is_finite() {
                return Err(TensorError::NotFinite {
                    context: format!("adam_step parameter {i}"),
                });
            }
            p[j] = T::of_f64(upd);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_alpha_sign() {
        let mut store = vec![Tensor::<f64>::new(&[2], vec![1.0, -1.0]).unwrap()];
        let grads = vec![Tensor::new(&[2], vec![0.5, -0.25]).unwrap()];
        let mut st = AdamState::new(&[&[2]], 0.01);
        let mut params: Vec<&mut Tensor<f64>> = store.iter_mut().collect();
        adam_step(&mut params, &grads, &mut st).unwrap();
        let params = store;
        // bias correction is exact at step 1: update = -alpha * g/(|g| + eps')
        assert!((params[0].data()[0] - (1.0 - 0.01)).abs() < 1e-6);
        assert!((params[0].data()[1] - (-1.0 + 0.01)).abs() < 1e-6);
        assert_eq!(st.step_count, 1);
    }

    #[test]
    fn zero_gradient_leaves_fresh_params_unchanged() {
        let mut store = vec![Tensor::<f64>::new(&[2], vec![3.0, 4.0]).unwrap()];
        let grads = vec![Tensor::zeros(&[2])];
        let mut st = AdamState::new(&[&[2]], 0.1);
        let mut params: Vec<&mut Tensor<f64>> = store.iter_mut().collect();
        adam_step(&mut params, &grads, &mut st).unwrap();
        assert_eq!(params[0].data(), &[3.0, 4.0]);

        // after a real step the moments decay geometrically under zero grads
        let g1 = vec![Tensor::new(&[2], vec![1.0, 1.0]).unwrap()];
        adam_step(&mut params, &g1, &mut st).unwrap();
        let m_before = st.first_moment[0].data()[0];
        adam_step(&mut params, &grads, &mut st).unwrap();
        let m_after = st.first_moment[0].data()[0];
        assert!((m_after - 0.9 * m_before).abs() < 1e-12);
    }

    #[test]
    fn converges_on_quadratic() {
        // run the recurrence: f(w) = (w-3)^2, f'(w) = 2(w-3)
        let mut store = vec![Tensor::<f64>::scalar(0.0)];
        let mut st = AdamState::new(&[&[1]], 0.1);
        for _ in 0..200 {
            let w = store[0].item();
            let grads = vec![Tensor::scalar(2.0 * (w - 3.0))];
            let mut params: Vec<&mut Tensor<f64>> = store.iter_mut().collect();
            adam_step(&mut params, &grads, &mut st).unwrap();
        }
        assert!((store[0].item() - 3.0).abs() < 0.1);
    }

    #[test]
    fn shape_mismatch_is_error() {
        let mut store = vec![Tensor::<f64>::zeros(&[2])];
        let grads = vec![Tensor::zeros(&[3])];
        let mut st = AdamState::new(&[&[2]], 0.1);
        let mut params: Vec<&mut Tensor<f64>> = store.iter_mut().collect();
        assert!(adam_step(&mut params, &grads, &mut st).is_err());
    }
}
