//! The flow-augmented training objective.
//!
//! Per datum the loss to minimise is
//!
//! ```text
//! total = Σ (x - x̂)²  +  ½ Σ (μ² + σ² - 1 - log σ²)  -  Σₖ log|1 + ûₖᵀψₖ(z_{k-1})|
//!         recon          kl                              flow_correction
//! ```
//!
//! with `z0 = μ + ε·σ`, `z_K` the flowed sample, and `x̂` the decoding of
//! `z_K`. The prior and entropy terms of `q0` are folded into the closed-form
//! Gaussian KL; the only Monte-Carlo quantity is the single `ε` draw.

use crate::error::{Error, Result};
use crate::flows::{stack_forward_graph, FlowStack};
use crate::gradcore::{Graph, Var};
use crate::nets::{reparameterize_graph, BoundVae, GaussianLatent, LatentVars, VaeModel};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElboBreakdown {
    pub recon: f64,
    pub kl: f64,
    /// `-Σ log-det`, as it enters `total`.
    pub flow_correction: f64,
    pub total: f64,
}

/// Graph nodes of one objective evaluation.
#[derive(Debug, Clone, Copy)]
pub struct ElboNodes {
    pub latent: LatentVars,
    pub z0: Var,
    pub z_k: Var,
    pub x_hat: Var,
    pub recon: Var,
    pub kl: Var,
    pub flow_correction: Var,
    pub total: Var,
}

impl ElboNodes {
    pub fn breakdown(&self, g: &Graph) -> ElboBreakdown {
        ElboBreakdown {
            recon: g.item(self.recon),
            kl: g.item(self.kl),
            flow_correction: g.item(self.flow_correction),
            total: g.item(self.total),
        }
    }
}

/// `KL(N(μ, σ²) ‖ N(0, I)) = ½ Σ (μ² + σ² - 1 - log σ²)`, evaluated in the
/// same operation order as [`gaussian_kl_graph`].
pub fn gaussian_kl(latent: &GaussianLatent) -> f64 {
    0.5 * latent
        .mu
        .iter()
        .zip(&latent.logvar)
        .map(|(m, lv)| (m * m + lv.exp()) - (lv + 1.0))
        .sum::<f64>()
}

pub fn gaussian_kl_graph(g: &Graph, latent: &LatentVars) -> Result<Var> {
    let mu2 = g.square(latent.mu)?;
    let var = g.exp(latent.logvar)?;
    let inner = g.sub(g.add(mu2, var)?, g.shift(latent.logvar, 1.0)?)?;
    g.scale(g.sum(inner, None)?, 0.5)
}

pub fn reconstruction_loss(x: &[f64], x_hat: &[f64]) -> Result<f64> {
    if x.len() != x_hat.len() {
        return Err(Error::ShapeMismatch {
            op: "reconstruction_loss",
            left: vec![x.len()],
            right: vec![x_hat.len()],
        });
    }
    Ok(x.iter().zip(x_hat).map(|(a, b)| (a - b) * (a - b)).sum())
}

pub fn reconstruction_loss_graph(g: &Graph, x: Var, x_hat: Var) -> Result<Var> {
    g.sum(g.square(g.sub(x, x_hat)?)?, None)
}

/// Builds the single-sample objective for datum `x` with base noise `eps`.
pub fn flow_elbo_graph(g: &Graph, model: &BoundVae, x: &[f64], eps: &[f64]) -> Result<ElboNodes> {
    let xv = g.constant(Tensor::row(x))?;
    let latent = model.encode(g, xv)?;
    let z0 = reparameterize_graph(g, &latent, eps)?;
    let (z_k, sum_logdet) = stack_forward_graph(g, &model.flows, z0)?;
    let x_hat = model.decode(g, z_k)?;
    let recon = reconstruction_loss_graph(g, xv, x_hat)?;
    let kl = gaussian_kl_graph(g, &latent)?;
    let flow_correction = g.neg(sum_logdet)?;
    let total = g.add(g.add(recon, kl)?, flow_correction)?;
    Ok(ElboNodes {
        latent,
        z0,
        z_k,
        x_hat,
        recon,
        kl,
        flow_correction,
        total,
    })
}

pub fn flow_elbo(model: &VaeModel, x: &[f64], eps: &[f64]) -> Result<ElboBreakdown> {
    let g = Graph::new();
    let bound = model.bind(&g)?;
    Ok(flow_elbo_graph(&g, &bound, x, eps)?.breakdown(&g))
}

/// Monte-Carlo estimate of `E_{q_K}[f(z)] = E_{q0}[f(f_K ∘ … ∘ f_1(z0))]`.
/// Returns the sample mean and its standard error.
pub fn mc_expectation<F, S>(f: F, mut sampler: S, stack: &FlowStack, n: usize) -> Result<(f64, f64)>
where
    F: Fn(&[f64]) -> f64,
    S: FnMut() -> Vec<f64>,
{
    if n < 2 {
        return Err(Error::Config(format!(
            "mc_expectation needs n >= 2, got {n}"
        )));
    }
    // Welford
    let mut mean = 0.0;
    let mut m2 = 0.0;
    for k in 1..=n {
        let z = stack.forward(&sampler(), false)?.z_k;
        let v = f(&z);
        let delta = v - mean;
        mean += delta / k as f64;
        m2 += delta * (v - mean);
    }
    let var = m2 / (n - 1) as f64;
    Ok((mean, (var / n as f64).sqrt()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::VaeConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn kl_closed_form_cases() {
        let zero = GaussianLatent {
            mu: vec![0.0, 0.0],
            logvar: vec![0.0, 0.0],
        };
        assert_eq!(gaussian_kl(&zero), 0.0);
        let shifted = GaussianLatent {
            mu: vec![1.0],
            logvar: vec![0.0],
        };
        assert_eq!(gaussian_kl(&shifted), 0.5);
    }

    #[test]
    fn kl_graph_matches_plain() {
        let g = Graph::new();
        let latent = GaussianLatent {
            mu: vec![0.3, -1.2],
            logvar: vec![0.5, -2.0],
        };
        let vars = LatentVars {
            mu: g.constant(Tensor::row(&latent.mu)).unwrap(),
            logvar: g.constant(Tensor::row(&latent.logvar)).unwrap(),
        };
        let kl = gaussian_kl_graph(&g, &vars).unwrap();
        assert_eq!(g.item(kl), gaussian_kl(&latent));
    }

    #[test]
    fn recon_cases() {
        assert_eq!(reconstruction_loss(&[0.2, 0.7], &[0.2, 0.7]).unwrap(), 0.0);
        assert_eq!(reconstruction_loss(&[1.0, 0.0], &[0.5, 0.5]).unwrap(), 0.5);
        let (a, b) = ([0.1, 0.9, 0.4], [0.3, 0.2, 0.8]);
        assert_eq!(
            reconstruction_loss(&a, &b).unwrap(),
            reconstruction_loss(&b, &a).unwrap()
        );
        assert!(reconstruction_loss(&a, &b[..2]).is_err());
    }

    #[test]
    fn total_is_sum_of_terms() {
        let cfg = VaeConfig {
            input_dim: 5,
            hidden_dims: vec![4],
            latent_dim: 2,
            flow_length: 3,
        };
        let model = VaeModel::init(cfg, 2).unwrap();
        let e = flow_elbo(&model, &[0.1, 0.5, 0.9, 0.0, 1.0], &[0.4, -0.8]).unwrap();
        assert_eq!(e.total, e.recon + e.kl + e.flow_correction);
        assert!(e.kl >= 0.0);
    }

    #[test]
    fn mc_expectation_constant_and_second_moment() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (est, se) = mc_expectation(
            |_| 0.1,
            || {
                vec![
                    StandardNormal.sample(&mut rng),
                    StandardNormal.sample(&mut rng),
                ]
            },
            &FlowStack::empty(),
            1000,
        )
        .unwrap();
        assert_eq!((est, se), (0.1, 0.0));

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let (est, se) = mc_expectation(
            |z| z.iter().map(|v| v * v).sum(),
            || {
                vec![
                    StandardNormal.sample(&mut rng),
                    StandardNormal.sample(&mut rng),
                ]
            },
            &FlowStack::empty(),
            100_000,
        )
        .unwrap();
        assert!((est - 2.0).abs() < 3.0 * se, "{est} ± {se}");
        assert!(mc_expectation(|_| 0.0, Vec::new, &FlowStack::empty(), 1).is_err());
    }
}
