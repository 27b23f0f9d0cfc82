//! Planar flows `f(z) = z + û·tanh(wᵀz + b)` and their stacks.
//!
//! Each flow keeps an unconstrained `u`; the effective `û` returned by
//! [`constrain_u`] satisfies `wᵀû > -1`, which makes every flow invertible with
//! a strictly positive Jacobian determinant `1 + ûᵀψ(z)`, where
//! `ψ(z) = (1 - tanh²(wᵀz + b))·w`.
//!
//! Two evaluation paths are provided: plain `f64` methods on [`PlanarFlow`] and
//! [`FlowStack`] for sampling, density grids and export, and graph builders
//! ([`constrain_u_graph`], [`flow_forward_graph`], [`stack_forward_graph`])
//! used by the training objective. The two are kept in agreement by tests.

use rand::Rng;

use crate::error::{Error, Result};
use crate::gradcore::{softplus, Graph, Var};
use crate::tensor::Tensor;

/// Floor applied inside `log(1 + ûᵀψ)`.
pub const LOG_DET_FLOOR: f64 = 1e-7;

/// Norms of `w` below this are rejected.
pub const MIN_W_NORM: f64 = 1e-12;

/// Half-width of the uniform initialisation of the free part of `u`.
pub const INIT_SCALE: f64 = 0.01;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn dim_check(op: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::ShapeMismatch {
            op,
            left: vec![expected],
            right: vec![got],
        });
    }
    Ok(())
}

/// `m(a) = -1 + log(1 + eᵃ)`, the target value of `wᵀû`.
pub fn constraint_target(a: f64) -> f64 {
    -1.0 + softplus(a)
}

/// `û = u + (m(wᵀu) - wᵀu)·w/‖w‖²`, so that `wᵀû = m(wᵀu) > -1`.
pub fn constrain_u(u: &[f64], w: &[f64]) -> Result<Vec<f64>> {
    dim_check("constrain_u", w.len(), u.len())?;
    let norm2 = dot(w, w);
    if norm2.sqrt() < MIN_W_NORM {
        return Err(Error::ZeroW);
    }
    let a = dot(w, u);
    let coef = (constraint_target(a) - a) / norm2;
    Ok(u.iter().zip(w).map(|(ui, wi)| ui + coef * wi).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanarFlow {
    pub u: Vec<f64>,
    pub w: Vec<f64>,
    pub b: f64,
}

impl PlanarFlow {
    pub fn new(u: Vec<f64>, w: Vec<f64>, b: f64) -> Result<Self> {
        dim_check("planar_flow", w.len(), u.len())?;
        if !(u.iter().chain(&w).all(|v| v.is_finite()) && b.is_finite()) {
            return Err(Error::NonFinite { op: "planar_flow" });
        }
        Ok(Self { u, w, b })
    }

    /// Initialisation at the identity map: `w` and the free part of `u` are
    /// drawn from `uniform(-INIT_SCALE, INIT_SCALE)` and `w` is rescaled to unit
    /// norm, `b = 0`, and the component of `u` along `w` is set so that
    /// `m(wᵀu) = 0`. The effective `û` is then the part of the draw orthogonal
    /// to `w`, so `wᵀû = 0` and every log-det term starts at zero.
    pub fn init_near_identity<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        let mut w: Vec<f64>;
        loop {
            w = (0..dim)
                .map(|_| rng.random_range(-INIT_SCALE..INIT_SCALE))
                .collect();
            let norm = dot(&w, &w).sqrt();
            if norm > INIT_SCALE * 1e-3 {
                w.iter_mut().for_each(|v| *v /= norm);
                break;
            }
        }
        let free: Vec<f64> = (0..dim)
            .map(|_| rng.random_range(-INIT_SCALE..INIT_SCALE))
            .collect();
        let shift = (std::f64::consts::E - 1.0).ln() - dot(&w, &free);
        let u = free.iter().zip(&w).map(|(f, wi)| f + shift * wi).collect();
        Self { u, w, b: 0.0 }
    }

    pub fn dim(&self) -> usize {
        self.w.len()
    }

    pub fn u_hat(&self) -> Result<Vec<f64>> {
        constrain_u(&self.u, &self.w)
    }

    fn preactivation(&self, z: &[f64]) -> Result<f64> {
        dim_check("planar_flow", self.dim(), z.len())?;
        Ok(dot(&self.w, z) + self.b)
    }

    /// `ψ(z) = (1 - tanh²(wᵀz + b))·w`.
    pub fn psi(&self, z: &[f64]) -> Result<Vec<f64>> {
        let slope = 1.0 - self.preactivation(z)?.tanh().powi(2);
        Ok(self.w.iter().map(|wi| slope * wi).collect())
    }

    pub fn forward(&self, z: &[f64]) -> Result<Vec<f64>> {
        let h = self.preactivation(z)?.tanh();
        let u_hat = self.u_hat()?;
        Ok(z.iter().zip(&u_hat).map(|(zi, ui)| zi + ui * h).collect())
    }

    /// `log|1 + ûᵀψ(z)|`, floored at [`LOG_DET_FLOOR`] inside the log.
    pub fn log_det(&self, z: &[f64]) -> Result<f64> {
        let psi = self.psi(z)?;
        let u_hat = self.u_hat()?;
        Ok((1.0 + dot(&u_hat, &psi)).abs().max(LOG_DET_FLOOR).ln())
    }

    /// Forward map and log-det in one pass.
    pub fn forward_with_log_det(&self, z: &[f64]) -> Result<(Vec<f64>, f64)> {
        let h = self.preactivation(z)?.tanh();
        let u_hat = self.u_hat()?;
        let z_next = z.iter().zip(&u_hat).map(|(zi, ui)| zi + ui * h).collect();
        let det = 1.0 + (1.0 - h * h) * dot(&u_hat, &self.w);
        Ok((z_next, det.abs().max(LOG_DET_FLOOR).ln()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowResult {
    pub z_k: Vec<f64>,
    pub sum_logdet: f64,
    /// `z_0, …, z_K` when requested.
    pub trajectory: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FlowStack {
    flows: Vec<PlanarFlow>,
}

impl FlowStack {
    pub fn new(flows: Vec<PlanarFlow>) -> Result<Self> {
        if let Some(first) = flows.first() {
            for f in &flows {
                dim_check("flow_stack", first.dim(), f.dim())?;
            }
        }
        Ok(Self { flows })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.flows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flows.is_empty()
    }

    pub fn flows(&self) -> &[PlanarFlow] {
        &self.flows
    }

    /// Applies `f_1, …, f_K` in order, summing the per-flow log-dets.
    pub fn forward(&self, z0: &[f64], record_trajectory: bool) -> Result<FlowResult> {
        let mut trajectory = record_trajectory.then(|| vec![z0.to_vec()]);
        let mut z = z0.to_vec();
        let mut sum_logdet = 0.0;
        for flow in &self.flows {
            let (next, ld) = flow.forward_with_log_det(&z)?;
            z = next;
            sum_logdet += ld;
            if let Some(t) = trajectory.as_mut() {
                t.push(z.clone());
            }
        }
        Ok(FlowResult {
            z_k: z,
            sum_logdet,
            trajectory,
        })
    }
}

/// `log q_K(z_K) = log q_0(z_0) - Σ log|1 + ûₖᵀψₖ(z_{k-1})|`.
pub fn log_density_after_flows(base_log_q0: f64, result: &FlowResult) -> f64 {
    base_log_q0 - result.sum_logdet
}

/// Log density of `N(0, I)` at `z`.
pub fn standard_normal_log_pdf(z: &[f64]) -> f64 {
    -0.5 * (z.len() as f64 * (2.0 * std::f64::consts::PI).ln() + dot(z, z))
}

/// Graph handles of one flow's parameters: `u` and `w` as `[1, D]` rows, `b`
/// as a `[1]` tensor.
#[derive(Debug, Clone, Copy)]
pub struct FlowVars {
    pub u: Var,
    pub w: Var,
    pub b: Var,
}

/// Differentiable [`constrain_u`]; `u` and `w` are `[1, D]` rows.
pub fn constrain_u_graph(g: &Graph, u: Var, w: Var) -> Result<Var> {
    let wt = g.transpose(w)?;
    let a = g.matmul(u, wt)?;
    let m = g.shift(g.softplus(a)?, -1.0)?;
    let norm2 = g.sum(g.square(w)?, None)?;
    if g.item(norm2).sqrt() < MIN_W_NORM {
        return Err(Error::ZeroW);
    }
    let coef = g.div(g.sub(m, a)?, norm2)?;
    g.add(u, g.mul(coef, w)?)
}

/// One flow applied to a `[1, D]` row; returns `(z', log-det)`.
pub fn flow_forward_graph(g: &Graph, flow: &FlowVars, z: Var) -> Result<(Var, Var)> {
    let u_hat = constrain_u_graph(g, flow.u, flow.w)?;
    let wt = g.transpose(flow.w)?;
    let pre = g.add(g.matmul(z, wt)?, flow.b)?;
    let h = g.tanh(pre)?;
    let z_next = g.add(z, g.mul(h, u_hat)?)?;
    let slope = g.shift(g.neg(g.square(h)?)?, 1.0)?;
    let uw = g.matmul(u_hat, wt)?;
    let det = g.shift(g.mul(slope, uw)?, 1.0)?;
    let log_det = g.log(g.clamp(det, LOG_DET_FLOOR, f64::INFINITY)?)?;
    Ok((z_next, g.sum(log_det, None)?))
}

/// Differentiable stack evaluation; the log-det sum is a scalar node (a zero
/// constant for an empty stack).
pub fn stack_forward_graph(g: &Graph, flows: &[FlowVars], z0: Var) -> Result<(Var, Var)> {
    let mut z = z0;
    let mut total = g.constant(Tensor::scalar(0.0))?;
    for flow in flows {
        let (next, ld) = flow_forward_graph(g, flow, z)?;
        z = next;
        total = g.add(total, ld)?;
    }
    Ok((z, total))
}
