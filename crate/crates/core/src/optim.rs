//! Adam with bias correction.

use crate::error::{Error, Result};
use crate::gradcore::{Gradients, ParamSet};
use crate::tensor::Tensor;

pub const DEFAULT_LR: f64 = 0.002;
pub const DEFAULT_BETA1: f64 = 0.9;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps_hat: f64,
    /// Rescale gradients whose global L2 norm exceeds this value.
    pub clip_norm: Option<f64>,
    pub t: u64,
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
}

impl AdamState {
    /// Fresh state with zero moments shaped like `params`.
    pub fn new(params: &ParamSet, lr: f64) -> Self {
        let zeros: Vec<Tensor> = params
            .iter()
            .map(|(_, t)| Tensor::zeros(t.shape()))
            .collect();
        Self {
            lr,
            beta1: DEFAULT_BETA1,
            beta2: DEFAULT_BETA2,
            eps_hat: DEFAULT_EPS,
            clip_norm: None,
            t: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    /// One update:
    /// `m ← β₁m + (1-β₁)g`, `v ← β₂v + (1-β₂)g²`,
    /// `p ← p - lr·m̂/(√v̂ + ε̂)` with `m̂ = m/(1-β₁ᵗ)`, `v̂ = v/(1-β₂ᵗ)`.
    ///
    /// On error nothing is modified.
    pub fn step(&mut self, params: &mut ParamSet, grads: &Gradients) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::ShapeMismatch {
                op: "adam_step",
                left: vec![params.len()],
                right: vec![grads.len()],
            });
        }
        for ((_, p), (_, g)) in params.iter().zip(grads.iter()) {
            if p.shape() != g.shape() {
                return Err(Error::ShapeMismatch {
                    op: "adam_step",
                    left: p.shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
            if !g.is_finite() {
                return Err(Error::NonFinite { op: "adam_step" });
            }
        }

        let scale = match self.clip_norm {
            Some(limit) => {
                let norm = grads
                    .tensors()
                    .flat_map(|t| t.data())
                    .map(|v| v * v)
                    .sum::<f64>()
                    .sqrt();
                if norm > limit {
                    limit / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };

        let t = (self.t + 1) as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let moved_finite = params
            .iter()
            .zip(grads.tensors())
            .zip(self.m.iter().zip(&self.v))
            .all(|(((_, p), g), (m, v))| {
                p.data()
                    .iter()
                    .zip(g.data())
                    .zip(m.data().iter().zip(v.data()))
                    .all(|((&pi, &gi), (&mi, &vi))| {
                        let gi = gi * scale;
                        let mi = self.beta1 * mi + (1.0 - self.beta1) * gi;
                        let vi = self.beta2 * vi + (1.0 - self.beta2) * gi * gi;
                        (pi - self.lr * (mi / bc1) / ((vi / bc2).sqrt() + self.eps_hat)).is_finite()
                    })
            });
        if !moved_finite {
            return Err(Error::NonFinite { op: "adam_step" });
        }

        self.t += 1;
        for (((p, g), m), v) in params
            .tensors_mut()
            .zip(grads.tensors())
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for (((pi, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                let gi = gi * scale;
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *pi -= self.lr * m_hat / (v_hat.sqrt() + self.eps_hat);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcore::{value_and_grad, Graph, Var};

    fn single(value: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("p", Tensor::scalar(value)).unwrap();
        p
    }

    fn grad_of(f: impl Fn(&Graph, &[Var]) -> Result<Var>, params: &ParamSet) -> Gradients {
        value_and_grad(&f, params.as_slice()).unwrap().1
    }

    fn constant_grad(g: f64) -> impl Fn(&Graph, &[Var]) -> Result<Var> {
        move |graph: &Graph, v: &[Var]| graph.scale(v[0], g)
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut params = single(1.25);
        let mut state = AdamState::new(&params, DEFAULT_LR);
        let grads = grad_of(constant_grad(0.0), &params);
        state.step(&mut params, &grads).unwrap();
        assert_eq!(params.get("p").unwrap().item(), 1.25);
        assert_eq!(state.t, 1);
    }

    #[test]
    fn first_step_hand_value() {
        let mut params = single(0.0);
        let mut state = AdamState::new(&params, 0.002);
        let grads = grad_of(constant_grad(0.3), &params);
        state.step(&mut params, &grads).unwrap();
        // m̂ = 0.3, v̂ = 0.09
        let want = -0.002 * 0.3 / (0.3 + 1e-8);
        let got = params.get("p").unwrap().item();
        assert!((got - want).abs() < 1e-15, "{got} vs {want}");
        assert!((got + 0.002).abs() < 1e-10);
    }

    #[test]
    fn constant_gradient_moves_monotonically() {
        for g in [0.7, -0.05] {
            let mut params = single(1.0);
            let mut state = AdamState::new(&params, 0.01);
            let grads = grad_of(constant_grad(g), &params);
            let p0 = params.get("p").unwrap().item();
            state.step(&mut params, &grads).unwrap();
            let p1 = params.get("p").unwrap().item();
            state.step(&mut params, &grads).unwrap();
            let p2 = params.get("p").unwrap().item();
            assert!((p1 - p0) * g < 0.0 && (p2 - p1) * g < 0.0);
        }
    }

    #[test]
    fn first_step_magnitude_bounded_by_lr() {
        for g in [1e-6, 1e-3, 0.5, 40.0, -3.0] {
            let mut params = single(0.0);
            let mut state = AdamState::new(&params, DEFAULT_LR);
            let grads = grad_of(constant_grad(g), &params);
            state.step(&mut params, &grads).unwrap();
            let dp = params.get("p").unwrap().item().abs();
            assert!(dp > 0.0 && dp <= DEFAULT_LR);
            if g.abs() > 1e-3 {
                assert!((dp - DEFAULT_LR).abs() < 1e-7);
            }
        }
    }

    #[test]
    fn converges_on_quadratic() {
        let mut params = single(0.0);
        let mut state = AdamState::new(&params, 0.05);
        let f = |g: &Graph, v: &[Var]| g.square(g.shift(v[0], -3.0)?);
        let mut reached = None;
        for step in 0..5000 {
            let grads = grad_of(f, &params);
            state.step(&mut params, &grads).unwrap();
            if (params.get("p").unwrap().item() - 3.0).abs() < 0.01 {
                reached = Some(step);
                break;
            }
        }
        assert!(reached.is_some());
    }

    #[test]
    fn rejects_non_finite_and_mismatched_gradients() {
        let mut params = single(0.0);
        let mut state = AdamState::new(&params, DEFAULT_LR);
        let mut other = ParamSet::new();
        other.insert("p", Tensor::row(&[1.0, 2.0])).unwrap();
        let grads = grad_of(|g, v| g.sum(v[0], None), &other);
        assert!(matches!(
            state.step(&mut params, &grads),
            Err(Error::ShapeMismatch { .. })
        ));

        let mut grads = grad_of(constant_grad(1.0), &params);
        grads.tensors_mut().next().unwrap().data_mut()[0] = f64::NAN;
        assert!(matches!(
            state.step(&mut params, &grads),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn overflowing_update_is_rejected_untouched() {
        let mut params = single(f64::MAX);
        let mut state = AdamState::new(&params, f64::MAX);
        let grads = grad_of(constant_grad(-1.0), &params);
        let before = state.clone();
        assert!(matches!(
            state.step(&mut params, &grads),
            Err(Error::NonFinite { .. })
        ));
        assert_eq!(state, before);
        assert_eq!(params.get("p").unwrap().item(), f64::MAX);
    }

    #[test]
    fn clipping_caps_global_norm() {
        let mut params = single(0.0);
        let mut clipped = AdamState::new(&params, DEFAULT_LR);
        clipped.clip_norm = Some(1.0);
        let grads = grad_of(constant_grad(50.0), &params);
        clipped.step(&mut params, &grads).unwrap();
        // the clipped gradient is 1.0, so m = 0.1
        assert!((clipped.m[0].item() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn updates_are_deterministic() {
        let run = || {
            let mut params = single(0.4);
            let mut state = AdamState::new(&params, DEFAULT_LR);
            for g in [0.3, -1.2, 0.05] {
                let grads = grad_of(constant_grad(g), &params);
                state.step(&mut params, &grads).unwrap();
            }
            params.get("p").unwrap().item().to_bits()
        };
        assert_eq!(run(), run());
    }
}
