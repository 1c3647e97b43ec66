//! Decoupled-weight-decay adaptive-moment optimizer.

use ndarray::{ArrayD, ArrayViewD, ArrayViewMutD, NdFloat, Zip};

/// AdamW with bias-corrected moment estimates. Weight decay is applied
/// directly to the parameters, outside the adaptive rescaling, so decay
/// strength does not depend on the gradient history.
#[derive(Debug, Clone)]
pub struct AdamW<F> {
    pub learning_rate: F,
    pub beta1: F,
    pub beta2: F,
    pub eps: F,
    pub weight_decay: F,
    t: i32,
    m: Vec<ArrayD<F>>,
    v: Vec<ArrayD<F>>,
}

impl<F: NdFloat> AdamW<F> {
    /// Betas (0.9, 0.999) and epsilon 1e-8.
    pub fn new(learning_rate: f64, weight_decay: f64) -> Self {
        let f = |x: f64| F::from(x).unwrap();
        Self {
            learning_rate: f(learning_rate),
            beta1: f(0.9),
            beta2: f(0.999),
            eps: f(1e-8),
            weight_decay: f(weight_decay),
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// One update step. `params` and `grads` must list the same tensors in
    /// the same order; moment buffers are allocated on first use and keyed
    /// by position.
    pub fn step(
        &mut self,
        params: &mut [(String, ArrayViewMutD<F>)],
        grads: &[(String, ArrayViewD<F>)],
    ) {
        assert_eq!(params.len(), grads.len(), "parameter/gradient count mismatch");
        if self.m.is_empty() {
            self.m = grads.iter().map(|(_, g)| ArrayD::zeros(g.raw_dim())).collect();
            self.v = grads.iter().map(|(_, g)| ArrayD::zeros(g.raw_dim())).collect();
        }
        self.t += 1;
        let one = F::one();
        let (b1, b2) = (self.beta1, self.beta2);
        let (lr, wd, eps) = (self.learning_rate, self.weight_decay, self.eps);
        let bc1 = one - b1.powi(self.t);
        let bc2 = one - b2.powi(self.t);
        for (i, ((name, p), (gname, g))) in params.iter_mut().zip(grads).enumerate() {
            assert_eq!(name, gname, "parameter/gradient name mismatch");
            Zip::from(&mut *p)
                .and(&mut self.m[i])
                .and(&mut self.v[i])
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + (one - b1) * g;
                    *v = b2 * *v + (one - b2) * g * g;
                    let mhat = *m / bc1;
                    let vhat = *v / bc2;
                    *p = *p - lr * (mhat / (vhat.sqrt() + eps) + wd * *p);
                });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;

    #[test]
    fn single_step_matches_the_closed_form_update() {
        // f(θ) = 0.5·(θ − 3)², so the gradient at θ₀ = 1 is −2. With fresh
        // moments the bias corrections cancel: m̂ = g and v̂ = g².
        let theta0 = 1.0f64;
        let g = theta0 - 3.0;
        let (lr, wd, eps) = (0.1, 0.01, 1e-8);

        let mut p = ArrayD::from_elem(IxDyn(&[1]), theta0);
        let grad = ArrayD::from_elem(IxDyn(&[1]), g);
        let mut opt = AdamW::<f64>::new(lr, wd);
        {
            let mut params = vec![("theta".to_string(), p.view_mut())];
            let grads = vec![("theta".to_string(), grad.view())];
            opt.step(&mut params, &grads);
        }

        let expect = theta0 - lr * (g / (g.abs() + eps) + wd * theta0);
        assert!((p[[0]] - expect).abs() < 1e-10, "got {}, want {expect}", p[[0]]);
    }

    #[test]
    fn second_step_carries_the_moment_state() {
        let (lr, wd, eps) = (0.05, 0.02, 1e-8);
        let (b1, b2) = (0.9, 0.999);
        let grad_at = |theta: f64| theta - 3.0;

        let mut p = ArrayD::from_elem(IxDyn(&[1]), 1.0f64);
        let mut opt = AdamW::<f64>::new(lr, wd);
        let mut reference = p[[0]];
        let (mut m, mut v) = (0.0f64, 0.0f64);
        for t in 1..=2 {
            let g = grad_at(p[[0]]);
            let grad = ArrayD::from_elem(IxDyn(&[1]), g);
            {
                let mut params = vec![("theta".to_string(), p.view_mut())];
                let grads = vec![("theta".to_string(), grad.view())];
                opt.step(&mut params, &grads);
            }

            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mhat = m / (1.0 - b1.powi(t));
            let vhat = v / (1.0 - b2.powi(t));
            reference -= lr * (mhat / (vhat.sqrt() + eps) + wd * reference);
            assert!(
                (p[[0]] - reference).abs() < 1e-10,
                "step {t}: got {}, want {reference}",
                p[[0]]
            );
        }
    }

    #[test]
    fn tensors_keep_independent_moments() {
        // two parameters with very different gradient scales must not share
        // second-moment state, or the small one would barely move
        let mut a = ArrayD::from_elem(IxDyn(&[1]), 0.0f64);
        let mut b = ArrayD::from_elem(IxDyn(&[2]), 0.0f64);
        let ga = ArrayD::from_elem(IxDyn(&[1]), 100.0f64);
        let gb = ArrayD::from_elem(IxDyn(&[2]), 1e-3f64);
        let mut opt = AdamW::<f64>::new(0.1, 0.0);
        {
            let mut params =
                vec![("a".to_string(), a.view_mut()), ("b".to_string(), b.view_mut())];
            let grads = vec![("a".to_string(), ga.view()), ("b".to_string(), gb.view())];
            opt.step(&mut params, &grads);
        }
        // with per-tensor moments both see |update| ≈ lr on the first step
        assert!((a[[0]] + 0.1).abs() < 1e-6);
        assert!((b[[0]] + 0.1).abs() < 1e-6);
        assert!((b[[0]] - b[[1]]).abs() < 1e-15);
    }
}
