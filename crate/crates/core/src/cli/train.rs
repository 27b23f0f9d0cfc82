//! The training loop, its CSV log and checkpointing.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::checkpoint::Checkpoint;
use super::config::RunConfig;
use crate::data::{iterate, BatchStream, MnistSet, Split};
use crate::elbo::{flow_elbo_graph, ElboBreakdown};
use crate::error::{Error, Result};
use crate::gradcore::{Gradients, Graph};
use crate::nets::{derive_seed, VaeModel};
use crate::optim::AdamState;

pub const LOG_HEADER: &str = "iter,recon,kl,flow_correction,total";
pub const LOG_FILE: &str = "training_log.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";

const NOISE_TAG: u64 = 0x6e6f697365;
const DATA_TAG: u64 = 0x64617461;

/// One training-log row: the loss terms averaged over the iterations since
/// the previous row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub iter: u64,
    pub terms: ElboBreakdown,
}

impl LogRow {
    pub fn to_csv(&self) -> String {
        let t = &self.terms;
        format!(
            "{},{},{},{},{}",
            self.iter, t.recon, t.kl, t.flow_correction, t.total
        )
    }

    pub fn parse(line: &str) -> Result<Self> {
        let fields: Vec<&str> = line.trim().split(',').collect();
        let bad = || Error::Format(format!("malformed log row `{line}`"));
        if fields.len() != 5 {
            return Err(bad());
        }
        let f = |i: usize| fields[i].parse::<f64>().map_err(|_| bad());
        Ok(Self {
            iter: fields[0].parse().map_err(|_| bad())?,
            terms: ElboBreakdown {
                recon: f(1)?,
                kl: f(2)?,
                flow_correction: f(3)?,
                total: f(4)?,
            },
        })
    }
}

pub fn read_log(path: impl AsRef<Path>) -> Result<Vec<LogRow>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if n == 0 {
            if line != LOG_HEADER {
                return Err(Error::Format(format!("unexpected log header `{line}`")));
            }
            continue;
        }
        if !line.is_empty() {
            rows.push(LogRow::parse(&line)?);
        }
    }
    Ok(rows)
}

/// Mean `total` of the first and of the last `window` rows.
pub fn smoothed_totals(rows: &[LogRow], window: usize) -> Option<(f64, f64)> {
    if rows.is_empty() || window == 0 {
        return None;
    }
    let w = window.min(rows.len());
    let mean = |s: &[LogRow]| s.iter().map(|r| r.terms.total).sum::<f64>() / s.len() as f64;
    Some((mean(&rows[..w]), mean(&rows[rows.len() - w..])))
}

/// Model, optimizer and the two random streams (data order, base noise).
#[derive(Debug)]
pub struct Trainer<'a> {
    config: RunConfig,
    data: &'a MnistSet,
    model: VaeModel,
    adam: AdamState,
    stream: BatchStream,
    noise: ChaCha8Rng,
    iteration: u64,
}

impl<'a> Trainer<'a> {
    pub fn new(config: RunConfig, data: &'a MnistSet) -> Result<Self> {
        config.validate()?;
        let model = VaeModel::init(config.vae(), config.seed)?;
        let mut adam = AdamState::new(model.params(), config.lr);
        adam.clip_norm = config.clip_norm;
        let stream = iterate(
            data,
            config.batch_size,
            derive_seed(config.seed, DATA_TAG),
            config.subset,
        )?;
        let noise = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, NOISE_TAG));
        Self::check_data(&config, data)?;
        Ok(Self {
            config,
            data,
            model,
            adam,
            stream,
            noise,
            iteration: 0,
        })
    }

    /// Continues from `ckpt` under `config`, which may change the iteration
    /// budget and output settings but not anything that shapes the run.
    pub fn resume(config: RunConfig, ckpt: Checkpoint, data: &'a MnistSet) -> Result<Self> {
        config.validate()?;
        let old = &ckpt.config;
        let same = old.vae() == config.vae()
            && old.seed == config.seed
            && old.batch_size == config.batch_size
            && old.subset == config.subset
            && old.lr == config.lr
            && old.clip_norm == config.clip_norm;
        if !same {
            return Err(Error::Config(
                "checkpoint was written by a run with a different model, seed, batch size, subset, lr or clip".into(),
            ));
        }
        Self::check_data(&config, data)?;
        let model = VaeModel::from_params(config.vae(), ckpt.params)?;
        let mut stream = iterate(
            data,
            config.batch_size,
            derive_seed(config.seed, DATA_TAG),
            config.subset,
        )?;
        stream.seek(ckpt.iteration);
        Ok(Self {
            config,
            data,
            model,
            adam: ckpt.adam,
            stream,
            noise: ckpt.rng,
            iteration: ckpt.iteration,
        })
    }

    fn check_data(config: &RunConfig, data: &MnistSet) -> Result<()> {
        if data.dim() != config.input_dim {
            return Err(Error::Dimension {
                expected: config.input_dim,
                found: data.dim(),
            });
        }
        if let Some(n) = config.subset {
            if n > data.len() {
                return Err(Error::Config(format!(
                    "subset {n} exceeds the {} available images",
                    data.len()
                )));
            }
        }
        Ok(())
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    pub fn model(&self) -> &VaeModel {
        &self.model
    }

    pub fn config(&self) -> &RunConfig {
        &self.config
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.config.clone(),
            params: self.model.params().clone(),
            adam: self.adam.clone(),
            iteration: self.iteration,
            rng: self.noise.clone(),
        }
    }

    /// One optimizer update on the next batch; returns the batch-mean loss
    /// terms evaluated before the update. On a non-finite loss or gradient
    /// the trainer is left exactly as before the call.
    pub fn step(&mut self) -> Result<ElboBreakdown> {
        let noise_before = self.noise.clone();
        let result = self.try_step();
        if result.is_err() {
            self.noise = noise_before;
            self.stream.seek(self.iteration);
        }
        let terms = result?;
        self.iteration += 1;
        Ok(terms)
    }

    fn try_step(&mut self) -> Result<ElboBreakdown> {
        let iter = self.iteration + 1;
        let nan = |e: Error| match e {
            Error::NonFinite { .. } => Error::NanLoss { iter },
            other => other,
        };
        let batch = self.stream.batch_at(self.iteration);
        self.stream.seek(self.iteration + 1);
        let latent = self.config.latent_dim;
        let mut sum = ElboBreakdown {
            recon: 0.0,
            kl: 0.0,
            flow_correction: 0.0,
            total: 0.0,
        };
        let mut grads: Option<Gradients> = None;
        for &i in &batch.indices {
            let eps: Vec<f64> = (0..latent)
                .map(|_| StandardNormal.sample(&mut self.noise))
                .collect();
            let g = Graph::new();
            let bound = self.model.bind(&g)?;
            let nodes = flow_elbo_graph(&g, &bound, self.data.image(i), &eps).map_err(nan)?;
            let b = nodes.breakdown(&g);
            let these = g.backward(nodes.total).map_err(nan)?;
            sum.recon += b.recon;
            sum.kl += b.kl;
            sum.flow_correction += b.flow_correction;
            sum.total += b.total;
            match &mut grads {
                Some(acc) => acc.accumulate(&these),
                None => grads = Some(these),
            }
        }
        let mut grads = grads.expect("batch is non-empty");
        let n = batch.indices.len() as f64;
        if n > 1.0 {
            grads.scale(1.0 / n);
            sum.recon /= n;
            sum.kl /= n;
            sum.flow_correction /= n;
            sum.total /= n;
        }
        if !sum.total.is_finite() {
            return Err(Error::NanLoss { iter });
        }
        self.adam
            .step(self.model.params_mut(), &grads)
            .map_err(nan)?;
        Ok(sum)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: VaeModel,
    /// Rows written by this invocation.
    pub rows: Vec<LogRow>,
    pub log_path: PathBuf,
    pub checkpoint_path: PathBuf,
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Drops rows past `iteration` from an existing log and opens it for
/// appending, or starts a fresh log.
fn open_log(path: &Path, keep_through: Option<u64>) -> Result<File> {
    let keep = match keep_through {
        Some(it) if path.exists() => read_log(path)?
            .into_iter()
            .filter(|r| r.iter <= it)
            .collect(),
        _ => Vec::new(),
    };
    let mut file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut text = format!("{LOG_HEADER}\n");
    for r in keep {
        text.push_str(&r.to_csv());
        text.push('\n');
    }
    file.write_all(text.as_bytes())
        .map_err(|e| Error::io(path, e))?;
    file.flush().map_err(|e| Error::io(path, e))?;
    drop(file);
    OpenOptions::new()
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))
}

/// Runs `trainer` to `config.iterations`, appending to the log in
/// `config.out_dir` and writing checkpoints there.
pub fn run(mut trainer: Trainer<'_>, resumed: bool) -> Result<TrainOutcome> {
    let config = trainer.config().clone();
    create_dir(&config.out_dir)?;
    let log_path = config.out_dir.join(LOG_FILE);
    let checkpoint_path = config.out_dir.join(CHECKPOINT_FILE);
    let start = trainer.iteration();
    let mut log = open_log(&log_path, resumed.then_some(start))?;

    let mut rows = Vec::new();
    let mut acc = [0.0; 4];
    let mut count = 0u64;
    while trainer.iteration() < config.iterations {
        let terms = match trainer.step() {
            Ok(t) => t,
            Err(e @ Error::NanLoss { .. }) => {
                trainer.checkpoint().save(&checkpoint_path)?;
                return Err(e);
            }
            Err(e) => return Err(e),
        };
        acc[0] += terms.recon;
        acc[1] += terms.kl;
        acc[2] += terms.flow_correction;
        acc[3] += terms.total;
        count += 1;
        let it = trainer.iteration();
        if it % config.log_interval == 0 || it == config.iterations {
            let c = count as f64;
            let row = LogRow {
                iter: it,
                terms: ElboBreakdown {
                    recon: acc[0] / c,
                    kl: acc[1] / c,
                    flow_correction: acc[2] / c,
                    total: acc[3] / c,
                },
            };
            writeln!(log, "{}", row.to_csv()).map_err(|e| Error::io(&log_path, e))?;
            log.flush().map_err(|e| Error::io(&log_path, e))?;
            rows.push(row);
            acc = [0.0; 4];
            count = 0;
        }
        if config.checkpoint_every > 0 && it % config.checkpoint_every == 0 {
            trainer.checkpoint().save(&checkpoint_path)?;
        }
    }
    trainer.checkpoint().save(&checkpoint_path)?;
    Ok(TrainOutcome {
        model: trainer.model().clone(),
        rows,
        log_path,
        checkpoint_path,
    })
}

/// Trains from scratch on the training split.
pub fn cmd_train(config: &RunConfig) -> Result<TrainOutcome> {
    config.validate()?;
    let data = config.load_split(Split::Train)?;
    train_on(config, &data)
}

/// Trains from scratch on an already loaded dataset.
pub fn train_on(config: &RunConfig, data: &MnistSet) -> Result<TrainOutcome> {
    run(Trainer::new(config.clone(), data)?, false)
}

/// Continues the run saved at `checkpoint` up to `config.iterations`.
pub fn cmd_resume(config: &RunConfig, checkpoint: impl AsRef<Path>) -> Result<TrainOutcome> {
    config.validate()?;
    let ckpt = Checkpoint::load(checkpoint)?;
    let data = config.load_split(Split::Train)?;
    resume_on(config, ckpt, &data)
}

pub fn resume_on(config: &RunConfig, ckpt: Checkpoint, data: &MnistSet) -> Result<TrainOutcome> {
    run(Trainer::resume(config.clone(), ckpt, data)?, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn fixture(n: usize, dim: usize) -> MnistSet {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let pixels = (0..n * dim).map(|_| rng.random::<f64>()).collect();
        let labels = (0..n).map(|i| (i % 10) as u8).collect();
        MnistSet::new(pixels, dim, labels, Split::Train).unwrap()
    }

    fn small(out: &Path) -> RunConfig {
        let mut c = RunConfig::default();
        c.input_dim = 8;
        c.hidden_dims = vec![4];
        c.flow_length = 2;
        c.iterations = 40;
        c.log_interval = 10;
        c.checkpoint_every = 20;
        c.out_dir = out.to_path_buf();
        c
    }

    #[test]
    fn log_row_round_trip() {
        let row = LogRow {
            iter: 7,
            terms: ElboBreakdown {
                recon: 0.1 + 0.2,
                kl: 1e-300,
                flow_correction: -0.0,
                total: 3.5,
            },
        };
        let back = LogRow::parse(&row.to_csv()).unwrap();
        assert_eq!(back.to_csv(), row.to_csv());
        assert!(LogRow::parse("1,2,3").is_err());
    }

    #[test]
    fn smoothing_windows() {
        let rows: Vec<LogRow> = (1..=6)
            .map(|i| LogRow {
                iter: i,
                terms: ElboBreakdown {
                    recon: 0.0,
                    kl: 0.0,
                    flow_correction: 0.0,
                    total: i as f64,
                },
            })
            .collect();
        assert_eq!(smoothed_totals(&rows, 2), Some((1.5, 5.5)));
        assert_eq!(smoothed_totals(&rows, 100), Some((3.5, 3.5)));
        assert_eq!(smoothed_totals(&[], 2), None);
    }

    #[test]
    fn writes_log_rows_and_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let data = fixture(12, 8);
        let out = train_on(&small(dir.path()), &data).unwrap();
        assert_eq!(
            out.rows.iter().map(|r| r.iter).collect::<Vec<_>>(),
            [10, 20, 30, 40]
        );
        assert_eq!(read_log(&out.log_path).unwrap(), out.rows);
        let ckpt = Checkpoint::load(&out.checkpoint_path).unwrap();
        assert_eq!(ckpt.iteration, 40);
        assert_eq!(&ckpt.params, out.model.params());
    }

    #[test]
    fn failed_step_leaves_state_untouched() {
        let data = fixture(4, 8);
        let mut c = small(Path::new("unused"));
        c.lr = 1e300;
        let mut t = Trainer::new(c, &data).unwrap();
        let mut err = None;
        for _ in 0..20 {
            let before = t.checkpoint();
            match t.step() {
                Ok(_) => {}
                Err(e) => {
                    assert_eq!(t.checkpoint(), before);
                    err = Some(e);
                    break;
                }
            }
        }
        assert!(matches!(err, Some(Error::NanLoss { .. })), "{err:?}");
    }

    #[test]
    fn resume_rejects_incompatible_config() {
        let data = fixture(4, 8);
        let c = small(Path::new("unused"));
        let ckpt = Trainer::new(c.clone(), &data).unwrap().checkpoint();
        let mut other = c;
        other.seed = 99;
        assert!(matches!(
            Trainer::resume(other, ckpt, &data),
            Err(Error::Config(_))
        ));
    }
}
