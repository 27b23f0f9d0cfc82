//! Full-covariance Gaussian mixtures fitted by EM, and the BIC-gap
//! multimodality score.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nets::derive_seed;

/// Added to covariance diagonals after every M-step.
const COV_FLOOR: f64 = 1e-6;
/// EM stops once the log-likelihood gain per point drops below this.
const TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    /// Row-major `d × d`.
    pub covs: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmFit {
    pub mixture: GaussianMixture,
    pub log_likelihood: f64,
    pub iterations: usize,
    /// Index of the restart that produced this fit.
    pub restart: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GmmOptions {
    pub components: usize,
    pub restarts: usize,
    pub max_iter: usize,
    pub seed: u64,
}

/// Lower-triangular Cholesky factor of a row-major SPD matrix.
fn cholesky(a: &[f64], d: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i * d + k] * l[j * d + k]).sum();
            if i == j {
                let v = a[i * d + i] - s;
                if !(v > 0.0) {
                    return None;
                }
                l[i * d + i] = v.sqrt();
            } else {
                l[i * d + j] = (a[i * d + j] - s) / l[j * d + j];
            }
        }
    }
    Some(l)
}

struct Component {
    log_norm: f64,
    mean: Vec<f64>,
    chol: Vec<f64>,
}

impl Component {
    fn new(weight: f64, mean: &[f64], cov: &[f64]) -> Option<Self> {
        let d = mean.len();
        let chol = cholesky(cov, d)?;
        let log_det: f64 = (0..d).map(|i| 2.0 * chol[i * d + i].ln()).sum();
        let log_norm = weight.ln() - 0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + log_det);
        Some(Self {
            log_norm,
            mean: mean.to_vec(),
            chol,
        })
    }

    /// `log w + log N(x; μ, Σ)`.
    fn log_weighted_pdf(&self, x: &[f64], scratch: &mut [f64]) -> f64 {
        let d = x.len();
        let mut maha = 0.0;
        for i in 0..d {
            let s: f64 = (0..i).map(|k| self.chol[i * d + k] * scratch[k]).sum();
            scratch[i] = (x[i] - self.mean[i] - s) / self.chol[i * d + i];
            maha += scratch[i] * scratch[i];
        }
        self.log_norm - 0.5 * maha
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn covariance(points: &[Vec<f64>], d: usize) -> (Vec<f64>, Vec<f64>) {
    let n = points.len() as f64;
    let mut mean = vec![0.0; d];
    for p in points {
        for (m, v) in mean.iter_mut().zip(p) {
            *m += v / n;
        }
    }
    let mut cov = vec![0.0; d * d];
    for p in points {
        for i in 0..d {
            for j in 0..d {
                cov[i * d + j] += (p[i] - mean[i]) * (p[j] - mean[j]) / n;
            }
        }
    }
    for i in 0..d {
        cov[i * d + i] += COV_FLOOR;
    }
    (mean, cov)
}

/// k-means++ style seeding: each further mean is drawn with probability
/// proportional to the squared distance to the nearest chosen one.
fn seed_means(points: &[Vec<f64>], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let mut means = vec![points[rng.random_range(0..points.len())].clone()];
    let mut dist: Vec<f64> = points.iter().map(|p| sq(p, &means[0])).collect();
    while means.len() < k {
        let total: f64 = dist.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            dist.iter()
                .position(|&w| {
                    r -= w;
                    r < 0.0
                })
                .unwrap_or(points.len() - 1)
        } else {
            rng.random_range(0..points.len())
        };
        means.push(points[pick].clone());
        let last = means.last().expect("non-empty");
        for (dv, p) in dist.iter_mut().zip(points) {
            *dv = dv.min(sq(p, last));
        }
    }
    means
}

fn em_once(
    points: &[Vec<f64>],
    k: usize,
    max_iter: usize,
    seed: u64,
) -> (GaussianMixture, f64, usize) {
    let d = points[0].len();
    let n = points.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (_, global_cov) = covariance(points, d);
    let mut mix = GaussianMixture {
        weights: vec![1.0 / k as f64; k],
        means: seed_means(points, k, &mut rng),
        covs: vec![global_cov; k],
    };
    let mut resp = vec![0.0; n * k];
    let mut scratch = vec![0.0; d];
    let mut prev_ll = f64::NEG_INFINITY;
    let mut ll = f64::NEG_INFINITY;
    let mut iterations = 0;
    for it in 0..max_iter {
        iterations = it + 1;
        let comps: Vec<Option<Component>> = (0..k)
            .map(|c| {
                (mix.weights[c] > 0.0)
                    .then(|| Component::new(mix.weights[c], &mix.means[c], &mix.covs[c]))
                    .flatten()
            })
            .collect();
        // E-step
        ll = 0.0;
        let mut logs = vec![0.0; k];
        for (i, p) in points.iter().enumerate() {
            for (c, comp) in comps.iter().enumerate() {
                logs[c] = comp.as_ref().map_or(f64::NEG_INFINITY, |comp| {
                    comp.log_weighted_pdf(p, &mut scratch)
                });
            }
            let lse = log_sum_exp(&logs);
            ll += lse;
            for c in 0..k {
                resp[i * k + c] = (logs[c] - lse).exp();
            }
        }
        if ll - prev_ll < TOL * n as f64 {
            break;
        }
        prev_ll = ll;
        // M-step
        for c in 0..k {
            let nk: f64 = (0..n).map(|i| resp[i * k + c]).sum();
            if nk < 1e-8 {
                mix.weights[c] = 0.0;
                continue;
            }
            let mut mean = vec![0.0; d];
            for (i, p) in points.iter().enumerate() {
                let r = resp[i * k + c];
                for (m, v) in mean.iter_mut().zip(p) {
                    *m += r * v;
                }
            }
            mean.iter_mut().for_each(|m| *m /= nk);
            let mut cov = vec![0.0; d * d];
            for (i, p) in points.iter().enumerate() {
                let r = resp[i * k + c];
                for a in 0..d {
                    let da = p[a] - mean[a];
                    for b in 0..=a {
                        cov[a * d + b] += r * da * (p[b] - mean[b]);
                    }
                }
            }
            for a in 0..d {
                for b in 0..=a {
                    let v = cov[a * d + b] / nk;
                    cov[a * d + b] = v;
                    cov[b * d + a] = v;
                }
                cov[a * d + a] += COV_FLOOR;
            }
            mix.weights[c] = nk / n as f64;
            mix.means[c] = mean;
            mix.covs[c] = cov;
        }
    }
    (mix, ll, iterations)
}

/// Best of `restarts` EM runs by final log-likelihood; ties go to the
/// earliest restart. Restarts run on separate threads with independent
/// seeds, so the result does not depend on the thread count.
pub fn fit_gmm(points: &[Vec<f64>], opts: GmmOptions) -> Result<GmmFit> {
    if points.is_empty() {
        return Err(Error::EmptySet);
    }
    let d = points[0].len();
    if d == 0 || points.iter().any(|p| p.len() != d) {
        return Err(Error::Config(
            "GMM points must share a positive dimension".into(),
        ));
    }
    if opts.components == 0 || opts.restarts == 0 || opts.max_iter == 0 {
        return Err(Error::Config(
            "GMM needs positive components, restarts and iterations".into(),
        ));
    }
    if points.len() < opts.components {
        return Err(Error::Config(format!(
            "{} points cannot support {} components",
            points.len(),
            opts.components
        )));
    }
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let restarts: Vec<usize> = (0..opts.restarts).collect();
    let chunk = restarts.len().div_ceil(threads);
    let fits: Vec<GmmFit> = std::thread::scope(|s| {
        let handles: Vec<_> = restarts
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || {
                    part.iter()
                        .map(|&r| {
                            let seed = derive_seed(opts.seed, r as u64);
                            let (mixture, log_likelihood, iterations) =
                                em_once(points, opts.components, opts.max_iter, seed);
                            GmmFit {
                                mixture,
                                log_likelihood,
                                iterations,
                                restart: r,
                            }
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("EM thread panicked"))
            .collect()
    });
    let mut best: Option<GmmFit> = None;
    for f in fits {
        if f.log_likelihood.is_finite()
            && best
                .as_ref()
                .is_none_or(|b| f.log_likelihood > b.log_likelihood)
        {
            best = Some(f);
        }
    }
    best.ok_or_else(|| Error::Config("every EM restart diverged".into()))
}

/// Free parameters of a `k`-component full-covariance mixture in `d`
/// dimensions.
pub fn n_params(k: usize, d: usize) -> usize {
    (k - 1) + k * d + k * d * (d + 1) / 2
}

/// `-2 log L + p ln N`.
pub fn bic(log_likelihood: f64, k: usize, d: usize, n: usize) -> f64 {
    -2.0 * log_likelihood + n_params(k, d) as f64 * (n as f64).ln()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Multimodality {
    pub bic_single: f64,
    pub bic_mixture: f64,
    /// `bic_single - bic_mixture`; positive when the mixture is preferred.
    pub score: f64,
}

/// BIC of a single Gaussian minus BIC of an `opts.components` mixture.
pub fn multimodality_score(points: &[Vec<f64>], opts: GmmOptions) -> Result<Multimodality> {
    let n = points.len();
    let d = points.first().map_or(0, Vec::len);
    let single = fit_gmm(
        points,
        GmmOptions {
            components: 1,
            ..opts
        },
    )?;
    let mixture = fit_gmm(points, opts)?;
    let bic_single = bic(single.log_likelihood, 1, d, n);
    let bic_mixture = bic(mixture.log_likelihood, opts.components, d, n);
    Ok(Multimodality {
        bic_single,
        bic_mixture,
        score: bic_single - bic_mixture,
    })
}
