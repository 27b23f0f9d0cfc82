//! Dense encoder/decoder networks, the Gaussian latent head and the
//! reparametrization `z0 = μ + ε·exp(½·logvar)`.
//!
//! Parameter naming, in registration order:
//!
//! | group   | names                                          |
//! |---------|------------------------------------------------|
//! | encoder | `enc.{i}.w`, `enc.{i}.b` per hidden layer       |
//! | heads   | `enc.mu.{w,b}`, `enc.logvar.{w,b}`              |
//! | flows   | `flow.{k}.u`, `flow.{k}.w`, `flow.{k}.b`        |
//! | decoder | `dec.{i}.{w,b}` per hidden layer, `dec.out.{w,b}` |
//!
//! Inputs flow through the graph as `[1, n]` rows; weights are `[fan_in, fan_out]`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::flows::{FlowStack, FlowVars, PlanarFlow};
use crate::gradcore::{Graph, ParamSet, Var};
use crate::tensor::Tensor;

/// Bounds applied to the encoder's log-variance output.
pub const LOGVAR_CLAMP: (f64, f64) = (-10.0, 10.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Tanh,
}

/// `input_dim → hidden_dims… → output_dim`; hidden layers use
/// `hidden_activation`, the output layer is linear.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub output_dim: usize,
    pub hidden_activation: Activation,
}

impl MlpConfig {
    fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_dims.len() + 1);
        let mut fan_in = self.input_dim;
        for &h in self
            .hidden_dims
            .iter()
            .chain(std::iter::once(&self.output_dim))
        {
            dims.push((fan_in, h));
            fan_in = h;
        }
        dims
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseWeights {
    pub w: Tensor,
    pub b: Tensor,
}

/// Glorot-uniform weights, `a = sqrt(6 / (fan_in + fan_out))`, zero biases.
/// Deterministic in `seed`.
pub fn init_weights(config: &MlpConfig, seed: u64) -> Vec<DenseWeights> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    config
        .layer_dims()
        .into_iter()
        .map(|(fan_in, fan_out)| {
            let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let data = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-a..=a))
                .collect();
            DenseWeights {
                w: Tensor::new(vec![fan_in, fan_out], data).expect("dims match"),
                b: Tensor::zeros(&[1, fan_out]),
            }
        })
        .collect()
}

/// Architecture of the flow VAE. The decoder mirrors `hidden_dims`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VaeConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub latent_dim: usize,
    pub flow_length: usize,
}

impl VaeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.latent_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(Error::Config(format!(
                "dimensions must be positive: {self:?}"
            )));
        }
        Ok(())
    }

    pub fn encoder_mlp(&self) -> MlpConfig {
        MlpConfig {
            input_dim: self.input_dim,
            hidden_dims: self.hidden_dims.clone(),
            output_dim: self.latent_dim,
            hidden_activation: Activation::Tanh,
        }
    }

    pub fn decoder_mlp(&self) -> MlpConfig {
        MlpConfig {
            input_dim: self.latent_dim,
            hidden_dims: self.hidden_dims.iter().rev().copied().collect(),
            output_dim: self.input_dim,
            hidden_activation: Activation::Tanh,
        }
    }

    fn encoder_width(&self) -> usize {
        self.hidden_dims.last().copied().unwrap_or(self.input_dim)
    }

    /// Parameter names and shapes in registration order.
    pub fn param_specs(&self) -> Vec<(String, Vec<usize>)> {
        fn dense(
            specs: &mut Vec<(String, Vec<usize>)>,
            prefix: &str,
            fan_in: usize,
            fan_out: usize,
        ) {
            specs.push((format!("{prefix}.w"), vec![fan_in, fan_out]));
            specs.push((format!("{prefix}.b"), vec![1, fan_out]));
        }
        let mut specs = Vec::new();
        let enc = self.encoder_mlp().layer_dims();
        for (i, &(fi, fo)) in enc[..enc.len() - 1].iter().enumerate() {
            dense(&mut specs, &format!("enc.{i}"), fi, fo);
        }
        dense(&mut specs, "enc.mu", self.encoder_width(), self.latent_dim);
        dense(
            &mut specs,
            "enc.logvar",
            self.encoder_width(),
            self.latent_dim,
        );
        for k in 0..self.flow_length {
            specs.push((format!("flow.{k}.u"), vec![1, self.latent_dim]));
            specs.push((format!("flow.{k}.w"), vec![1, self.latent_dim]));
            specs.push((format!("flow.{k}.b"), vec![1]));
        }
        let dec = self.decoder_mlp().layer_dims();
        let (out_layer, hidden) = dec.split_last().expect("output layer");
        for (i, &(fi, fo)) in hidden.iter().enumerate() {
            dense(&mut specs, &format!("dec.{i}"), fi, fo);
        }
        dense(&mut specs, "dec.out", out_layer.0, out_layer.1);
        specs
    }
}

/// Which part of the model a parameter belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ParamGroup {
    Encoder,
    Heads,
    Flows,
    Decoder,
}

impl ParamGroup {
    pub fn of(name: &str) -> ParamGroup {
        if name.starts_with("enc.mu.") || name.starts_with("enc.logvar.") {
            ParamGroup::Heads
        } else if name.starts_with("enc.") {
            ParamGroup::Encoder
        } else if name.starts_with("flow.") {
            ParamGroup::Flows
        } else {
            ParamGroup::Decoder
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ParamGroup::Encoder => "encoder",
            ParamGroup::Heads => "heads",
            ParamGroup::Flows => "flows",
            ParamGroup::Decoder => "decoder",
        }
    }
}

/// Encoder output defining `q0 = N(mu, diag(exp(logvar)))`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianLatent {
    pub mu: Vec<f64>,
    pub logvar: Vec<f64>,
}

/// Graph handles for a [`GaussianLatent`]; both are `[1, D]` rows.
#[derive(Debug, Clone, Copy)]
pub struct LatentVars {
    pub mu: Var,
    pub logvar: Var,
}

#[derive(Debug, Clone, Copy)]
pub struct DenseVars {
    pub w: Var,
    pub b: Var,
}

fn dense(g: &Graph, layer: &DenseVars, x: Var) -> Result<Var> {
    g.add(g.matmul(x, layer.w)?, layer.b)
}

/// A [`VaeModel`]'s parameters registered on one graph.
#[derive(Debug, Clone)]
pub struct BoundVae {
    pub encoder: Vec<DenseVars>,
    pub mu_head: DenseVars,
    pub logvar_head: DenseVars,
    pub flows: Vec<FlowVars>,
    pub decoder: Vec<DenseVars>,
    pub output: DenseVars,
    input_dim: usize,
    latent_dim: usize,
}

impl BoundVae {
    pub fn encode(&self, g: &Graph, x: Var) -> Result<LatentVars> {
        let shape = g.shape(x);
        if shape != [1, self.input_dim] {
            return Err(Error::ShapeMismatch {
                op: "encode",
                left: vec![1, self.input_dim],
                right: shape,
            });
        }
        let mut h = x;
        for layer in &self.encoder {
            h = g.tanh(dense(g, layer, h)?)?;
        }
        let mu = dense(g, &self.mu_head, h)?;
        let raw = dense(g, &self.logvar_head, h)?;
        let logvar = g.clamp(raw, LOGVAR_CLAMP.0, LOGVAR_CLAMP.1)?;
        Ok(LatentVars { mu, logvar })
    }

    pub fn decode(&self, g: &Graph, z: Var) -> Result<Var> {
        let shape = g.shape(z);
        if shape != [1, self.latent_dim] {
            return Err(Error::ShapeMismatch {
                op: "decode",
                left: vec![1, self.latent_dim],
                right: shape,
            });
        }
        let mut h = z;
        for layer in &self.decoder {
            h = g.tanh(dense(g, layer, h)?)?;
        }
        g.sigmoid(dense(g, &self.output, h)?)
    }
}

/// `z0 = mu + eps ∘ exp(½·logvar)` with `eps` held constant.
pub fn reparameterize_graph(g: &Graph, latent: &LatentVars, eps: &[f64]) -> Result<Var> {
    let d = g.shape(latent.mu)[1];
    if eps.len() != d {
        return Err(Error::ShapeMismatch {
            op: "reparameterize",
            left: vec![d],
            right: vec![eps.len()],
        });
    }
    let eps = g.constant(Tensor::row(eps))?;
    let sigma = g.exp(g.scale(latent.logvar, 0.5)?)?;
    g.add(latent.mu, g.mul(eps, sigma)?)
}

pub fn reparameterize(latent: &GaussianLatent, eps: &[f64]) -> Result<Vec<f64>> {
    if eps.len() != latent.mu.len() {
        return Err(Error::ShapeMismatch {
            op: "reparameterize",
            left: vec![latent.mu.len()],
            right: vec![eps.len()],
        });
    }
    Ok(latent
        .mu
        .iter()
        .zip(&latent.logvar)
        .zip(eps)
        .map(|((m, lv), e)| m + e * (0.5 * lv).exp())
        .collect())
}

/// splitmix64 finaliser, used to derive independent sub-seeds.
pub(crate) fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VaeModel {
    config: VaeConfig,
    params: ParamSet,
}

impl VaeModel {
    pub fn init(config: VaeConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let enc = init_weights(&config.encoder_mlp(), derive_seed(seed, 1));
        let lv_head = init_weights(
            &MlpConfig {
                input_dim: config.encoder_width(),
                hidden_dims: vec![],
                output_dim: config.latent_dim,
                hidden_activation: Activation::Tanh,
            },
            derive_seed(seed, 2),
        );
        let dec = init_weights(&config.decoder_mlp(), derive_seed(seed, 3));
        let mut flow_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 4));
        let flows: Vec<PlanarFlow> = (0..config.flow_length)
            .map(|_| PlanarFlow::init_near_identity(config.latent_dim, &mut flow_rng))
            .collect();

        let mut params = ParamSet::new();
        let (mu_head, enc_hidden) = enc.split_last().expect("output layer");
        for (i, layer) in enc_hidden.iter().enumerate() {
            params.insert(format!("enc.{i}.w"), layer.w.clone())?;
            params.insert(format!("enc.{i}.b"), layer.b.clone())?;
        }
        params.insert("enc.mu.w", mu_head.w.clone())?;
        params.insert("enc.mu.b", mu_head.b.clone())?;
        params.insert("enc.logvar.w", lv_head[0].w.clone())?;
        params.insert("enc.logvar.b", lv_head[0].b.clone())?;
        for (k, f) in flows.iter().enumerate() {
            params.insert(format!("flow.{k}.u"), Tensor::row(&f.u))?;
            params.insert(format!("flow.{k}.w"), Tensor::row(&f.w))?;
            params.insert(format!("flow.{k}.b"), Tensor::new(vec![1], vec![f.b])?)?;
        }
        let (out, dec_hidden) = dec.split_last().expect("output layer");
        for (i, layer) in dec_hidden.iter().enumerate() {
            params.insert(format!("dec.{i}.w"), layer.w.clone())?;
            params.insert(format!("dec.{i}.b"), layer.b.clone())?;
        }
        params.insert("dec.out.w", out.w.clone())?;
        params.insert("dec.out.b", out.b.clone())?;
        Self::from_params(config, params)
    }

    /// Wraps an existing parameter set, checking names and shapes against the
    /// layout implied by `config`.
    pub fn from_params(config: VaeConfig, params: ParamSet) -> Result<Self> {
        config.validate()?;
        let specs = config.param_specs();
        if specs.len() != params.len() {
            return Err(Error::Config(format!(
                "expected {} parameter tensors, found {}",
                specs.len(),
                params.len()
            )));
        }
        for ((name, shape), (pname, t)) in specs.iter().zip(params.iter()) {
            if name != pname || shape.as_slice() != t.shape() {
                return Err(Error::Config(format!(
                    "parameter {pname} {:?} does not match expected {name} {shape:?}",
                    t.shape()
                )));
            }
        }
        Ok(Self { config, params })
    }

    pub fn config(&self) -> &VaeConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Builds [`BoundVae`] from vars registered in [`ParamSet`] order.
    pub fn bind_vars(&self, vars: &[Var]) -> BoundVae {
        let n_enc = self.config.hidden_dims.len();
        let mut it = vars.chunks(2);
        let mut next_dense = || {
            let c = it.next().expect("layout");
            DenseVars { w: c[0], b: c[1] }
        };
        let encoder = (0..n_enc).map(|_| next_dense()).collect();
        let mu_head = next_dense();
        let logvar_head = next_dense();
        let flow_start = 2 * n_enc + 4;
        let flow_end = flow_start + 3 * self.config.flow_length;
        let flows = vars[flow_start..flow_end]
            .chunks(3)
            .map(|c| FlowVars {
                u: c[0],
                w: c[1],
                b: c[2],
            })
            .collect();
        let mut dec_it = vars[flow_end..]
            .chunks(2)
            .map(|c| DenseVars { w: c[0], b: c[1] });
        let decoder = (0..n_enc).map(|_| dec_it.next().expect("layout")).collect();
        let output = dec_it.next().expect("layout");
        BoundVae {
            encoder,
            mu_head,
            logvar_head,
            flows,
            decoder,
            output,
            input_dim: self.config.input_dim,
            latent_dim: self.config.latent_dim,
        }
    }

    pub fn bind(&self, g: &Graph) -> Result<BoundVae> {
        let vars = self.params.bind(g)?;
        Ok(self.bind_vars(&vars))
    }

    pub fn encode(&self, x: &[f64]) -> Result<GaussianLatent> {
        let g = Graph::new();
        let bound = self.bind(&g)?;
        let xv = g.constant(Tensor::row(x))?;
        let latent = bound.encode(&g, xv)?;
        Ok(GaussianLatent {
            mu: g.value(latent.mu).into_data(),
            logvar: g.value(latent.logvar).into_data(),
        })
    }

    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>> {
        let g = Graph::new();
        let bound = self.bind(&g)?;
        let zv = g.constant(Tensor::row(z))?;
        Ok(g.value(bound.decode(&g, zv)?).into_data())
    }

    pub fn flow_stack(&self) -> Result<FlowStack> {
        let flows = (0..self.config.flow_length)
            .map(|k| {
                let get = |p: &str| {
                    self.params
                        .get(&format!("flow.{k}.{p}"))
                        .expect("flow parameter present")
                        .data()
                        .to_vec()
                };
                PlanarFlow::new(get("u"), get("w"), get("b")[0])
            })
            .collect::<Result<Vec<_>>>()?;
        FlowStack::new(flows)
    }
}
