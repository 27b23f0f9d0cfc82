//! Latent export: encode, reparameterize with fresh noise, push through the
//! flows.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::checkpoint::Checkpoint;
use super::config::RunConfig;
use crate::data::{MnistSet, Split};
use crate::error::{Error, Result};
use crate::flows::FlowStack;
use crate::nets::{derive_seed, reparameterize, VaeModel};

pub const LATENTS_FILE: &str = "latents.csv";
pub const MEANS_FILE: &str = "latent_means.csv";

const EXPORT_TAG: u64 = 0x6c6174656e74;

#[derive(Debug, Clone, PartialEq)]
pub struct LatentRecord {
    /// Position of the example in its split.
    pub idx: usize,
    pub label: u8,
    pub z0: Vec<f64>,
    pub z_k: Vec<f64>,
    pub sum_logdet: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DigitMean {
    pub label: u8,
    pub count: usize,
    pub mean: Vec<f64>,
}

/// `idx,label,z0_0..,zK_0..,sum_logdet` for latent dimension `dim`.
pub fn latents_header(dim: usize) -> String {
    let mut cols = vec!["idx".to_string(), "label".to_string()];
    cols.extend((0..dim).map(|i| format!("z0_{i}")));
    cols.extend((0..dim).map(|i| format!("zK_{i}")));
    cols.push("sum_logdet".into());
    cols.join(",")
}

pub fn means_header(dim: usize) -> String {
    let mut cols = vec!["label".to_string(), "count".to_string()];
    cols.extend((0..dim).map(|i| format!("zK_{i}")));
    cols.join(",")
}

/// The first `n` examples of every digit, in dataset order.
pub fn select_per_class(set: &MnistSet, n: usize) -> Vec<usize> {
    let mut taken = [0usize; 10];
    (0..set.len())
        .filter(|&i| {
            let c = &mut taken[set.label(i) as usize];
            *c += 1;
            *c <= n
        })
        .collect()
}

fn export_one(
    model: &VaeModel,
    stack: &FlowStack,
    set: &MnistSet,
    idx: usize,
    seed: u64,
) -> Result<LatentRecord> {
    let latent = model.encode(set.image(idx))?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(derive_seed(seed, EXPORT_TAG), idx as u64));
    let eps: Vec<f64> = (0..latent.mu.len())
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let z0 = reparameterize(&latent, &eps)?;
    let flowed = stack.forward(&z0, false)?;
    Ok(LatentRecord {
        idx,
        label: set.label(idx),
        z0,
        z_k: flowed.z_k,
        sum_logdet: flowed.sum_logdet,
    })
}

/// One record per entry of `indices`, in the same order. The noise for an
/// example depends only on `seed` and its index, so work is split across
/// threads without changing the output.
pub fn export_latents(
    model: &VaeModel,
    set: &MnistSet,
    indices: &[usize],
    seed: u64,
) -> Result<Vec<LatentRecord>> {
    if let Some(&bad) = indices.iter().find(|&&i| i >= set.len()) {
        return Err(Error::Config(format!("example index {bad} out of range")));
    }
    let stack = &model.flow_stack()?;
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let chunk = indices.len().div_ceil(threads).max(1);
    let parts: Vec<Result<Vec<LatentRecord>>> = std::thread::scope(|s| {
        let handles: Vec<_> = indices
            .chunks(chunk)
            .map(|part| {
                s.spawn(move || {
                    part.iter()
                        .map(|&i| export_one(model, stack, set, i, seed))
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("export thread panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(indices.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Mean `z_K` of every digit present in `records`, ordered by label.
pub fn digit_means(records: &[LatentRecord]) -> Vec<DigitMean> {
    let dim = records.first().map_or(0, |r| r.z_k.len());
    let mut sums = vec![(0usize, vec![0.0; dim]); 10];
    for r in records {
        let (count, sum) = &mut sums[r.label as usize];
        *count += 1;
        for (s, z) in sum.iter_mut().zip(&r.z_k) {
            *s += z;
        }
    }
    sums.into_iter()
        .enumerate()
        .filter(|(_, (count, _))| *count > 0)
        .map(|(label, (count, sum))| DigitMean {
            label: label as u8,
            count,
            mean: sum.into_iter().map(|s| s / count as f64).collect(),
        })
        .collect()
}

fn join(values: &[f64]) -> String {
    values
        .iter()
        .map(f64::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

pub fn latents_csv(records: &[LatentRecord]) -> String {
    let dim = records.first().map_or(0, |r| r.z0.len());
    let mut out = latents_header(dim);
    out.push('\n');
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.idx,
            r.label,
            join(&r.z0),
            join(&r.z_k),
            r.sum_logdet
        )
        .expect("write to String");
    }
    out
}

pub fn means_csv(means: &[DigitMean]) -> String {
    let dim = means.first().map_or(0, |m| m.mean.len());
    let mut out = means_header(dim);
    out.push('\n');
    for m in means {
        writeln!(out, "{},{},{}", m.label, m.count, join(&m.mean)).expect("write to String");
    }
    out
}

/// Parses a file written by [`latents_csv`].
pub fn parse_latents_csv(text: &str) -> Result<Vec<LatentRecord>> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format("empty latents file".into()))?;
    let cols = header.split(',').count();
    if cols < 5 || (cols - 3) % 2 != 0 || header != latents_header((cols - 3) / 2) {
        return Err(Error::Format(format!(
            "unexpected latents header `{header}`"
        )));
    }
    let dim = (cols - 3) / 2;
    lines
        .filter(|l| !l.is_empty())
        .map(|line| {
            let bad = || Error::Format(format!("malformed latents row `{line}`"));
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != cols {
                return Err(bad());
            }
            let nums = f[2..]
                .iter()
                .map(|v| v.parse::<f64>().map_err(|_| bad()))
                .collect::<Result<Vec<_>>>()?;
            Ok(LatentRecord {
                idx: f[0].parse().map_err(|_| bad())?,
                label: f[1].parse().map_err(|_| bad())?,
                z0: nums[..dim].to_vec(),
                z_k: nums[dim..2 * dim].to_vec(),
                sum_logdet: nums[2 * dim],
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct LatentsOutcome {
    pub records: Vec<LatentRecord>,
    pub means: Vec<DigitMean>,
    pub latents_path: PathBuf,
    pub means_path: PathBuf,
}

pub(crate) fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes both CSV files for `records` into `dir`.
pub fn write_latents(dir: &Path, records: Vec<LatentRecord>) -> Result<LatentsOutcome> {
    let means = digit_means(&records);
    let latents_path = dir.join(LATENTS_FILE);
    let means_path = dir.join(MEANS_FILE);
    write_file(&latents_path, latents_csv(&records).as_bytes())?;
    write_file(&means_path, means_csv(&means).as_bytes())?;
    Ok(LatentsOutcome {
        records,
        means,
        latents_path,
        means_path,
    })
}

/// Loads the model saved at `checkpoint` and the data split described by
/// `config` (whose `input_dim` is taken from the checkpoint).
pub(crate) fn load_model_and_split(
    config: &RunConfig,
    checkpoint: &Path,
    split: Split,
) -> Result<(VaeModel, MnistSet)> {
    let ckpt = Checkpoint::load(checkpoint)?;
    let model = VaeModel::from_params(ckpt.config.vae(), ckpt.params)?;
    let mut data_cfg = config.clone();
    data_cfg.input_dim = model.config().input_dim;
    let set = data_cfg.load_split(split)?;
    Ok((model, set))
}

/// Exports `samples_per_class` latents per digit of `split` to
/// `config.out_dir`.
pub fn cmd_latents(
    config: &RunConfig,
    checkpoint: impl AsRef<Path>,
    split: Split,
) -> Result<LatentsOutcome> {
    let (model, set) = load_model_and_split(config, checkpoint.as_ref(), split)?;
    let indices = select_per_class(&set, config.samples_per_class);
    let records = export_latents(&model, &set, &indices, config.seed)?;
    write_latents(&config.out_dir, records)
}
