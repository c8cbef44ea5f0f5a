use crate::autodiff::Tensor;

/// Adam moments for a parameter list.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor<f32>>,
    pub v: Vec<Tensor<f32>>,
    /// Updates applied so far.
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &[Tensor<f32>], beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros = || params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        Self {
            m: zeros(),
            v: zeros(),
            t: 0,
            beta1,
            beta2,
            eps,
        }
    }
}

/// One bias-corrected Adam step in place.
pub fn adam_update(params: &mut [Tensor<f32>], grads: &[Tensor<f32>], state: &mut AdamState, lr: f64) {
    assert_eq!(params.len(), grads.len(), "one gradient per parameter");
    state.t += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        assert_eq!(p.shape(), g.shape(), "gradient shape differs from parameter");
        let (pd, gd) = (p.data_mut(), g.data());
        for (i, (m, v)) in m.data_mut().iter_mut().zip(v.data_mut().iter_mut()).enumerate() {
            let gi = gd[i] as f64;
            let mi = b1 * *m as f64 + (1.0 - b1) * gi;
            let vi = b2 * *v as f64 + (1.0 - b2) * gi * gi;
            *m = mi as f32;
            *v = vi as f32;
            let step = lr * (mi / c1) / ((vi / c2).sqrt() + state.eps);
            pd[i] = (pd[i] as f64 - step) as f32;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(v: f32) -> Vec<Tensor<f32>> {
        vec![Tensor::new(&[2], vec![v, v])]
    }

    #[test]
    fn first_unit_gradient_moves_by_lr() {
        let mut p = one(1.0);
        let mut s = AdamState::new(&p, 0.9, 0.999, 1e-8);
        adam_update(&mut p, &one(1.0), &mut s, 1e-3);
        assert!((p[0].data()[0] - (1.0 - 1e-3)).abs() < 1e-7);
    }

    #[test]
    fn zero_gradient_keeps_weights() {
        let mut p = one(0.25);
        let mut s = AdamState::new(&p, 0.9, 0.999, 1e-8);
        adam_update(&mut p, &one(0.0), &mut s, 1e-1);
        assert_eq!(p, one(0.25));
    }

    #[test]
    fn moments_decay_after_zero_gradients() {
        let mut p = one(0.0);
        let mut s = AdamState::new(&p, 0.9, 0.999, 1e-8);
        adam_update(&mut p, &one(2.0), &mut s, 0.0);
        let (m0, v0) = (s.m[0].data()[0] as f64, s.v[0].data()[0] as f64);
        assert!((m0 - 0.2).abs() < 1e-7 && (v0 - 0.004).abs() < 1e-9);
        for _ in 0..3 {
            adam_update(&mut p, &one(0.0), &mut s, 0.0);
        }
        assert!((s.m[0].data()[0] as f64 - m0 * 0.9f64.powi(3)).abs() < 1e-7);
        assert!((s.v[0].data()[0] as f64 - v0 * 0.999f64.powi(3)).abs() < 1e-9);
        assert_eq!(p, one(0.0));
    }
}
