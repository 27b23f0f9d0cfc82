//! Run configuration: defaults, profiles, `key = value` files and overrides.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::{MnistSet, Split};
use crate::error::{Error, Result};
use crate::nets::VaeConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    /// Full training set, 500,000 iterations.
    Paper,
    /// 10,000-image subset, 50,000 iterations.
    Desk,
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(Profile::Paper),
            "desk" => Ok(Profile::Desk),
            other => Err(Error::Config(format!(
                "unknown profile `{other}` (paper|desk)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub latent_dim: usize,
    pub flow_length: usize,
    pub lr: f64,
    pub iterations: u64,
    pub batch_size: usize,
    pub seed: u64,
    /// Directory searched for the standard IDX file names.
    pub data_dir: PathBuf,
    pub train_images: Option<PathBuf>,
    pub train_labels: Option<PathBuf>,
    pub test_images: Option<PathBuf>,
    pub test_labels: Option<PathBuf>,
    /// Train on a seeded random subset of this many images.
    pub subset: Option<usize>,
    pub out_dir: PathBuf,
    pub log_interval: u64,
    /// Periodic checkpoint interval in iterations; `0` writes only the final one.
    pub checkpoint_every: u64,
    pub clip_norm: Option<f64>,
    /// Log rows averaged for the initial and final smoothed totals.
    pub smooth_window: usize,
    pub samples_per_class: usize,
    pub grid_resolution: usize,
    /// `xmin,xmax,ymin,ymax`; derived from the samples when absent.
    pub grid_bounds: Option<[f64; 4]>,
    pub write_pgm: bool,
    pub gmm_components: usize,
    pub gmm_restarts: usize,
    pub gmm_max_iter: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self::for_profile(Profile::Paper)
    }
}

/// Every key accepted by [`RunConfig::set`], in echo order.
pub const KEYS: &[&str] = &[
    "input_dim",
    "hidden_dims",
    "latent_dim",
    "flow_length",
    "lr",
    "iterations",
    "batch_size",
    "seed",
    "data_dir",
    "train_images",
    "train_labels",
    "test_images",
    "test_labels",
    "subset",
    "out_dir",
    "log_interval",
    "checkpoint_every",
    "clip_norm",
    "smooth_window",
    "samples_per_class",
    "grid_resolution",
    "grid_bounds",
    "write_pgm",
    "gmm_components",
    "gmm_restarts",
    "gmm_max_iter",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

fn parse_opt<T: FromStr>(key: &str, value: &str) -> Result<Option<T>> {
    if value == "none" {
        Ok(None)
    } else {
        parse(key, value).map(Some)
    }
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    let trimmed = value.trim_start_matches('[').trim_end_matches(']').trim();
    if trimmed.is_empty() {
        return Ok(Vec::new());
    }
    trimmed.split(',').map(|v| parse(key, v.trim())).collect()
}

fn show_opt<T: ToString>(v: &Option<T>) -> String {
    v.as_ref().map_or_else(|| "none".to_string(), T::to_string)
}

fn show_path(v: &Option<PathBuf>) -> String {
    v.as_ref()
        .map_or_else(|| "none".to_string(), |p| p.display().to_string())
}

fn show_list<T: ToString>(v: &[T]) -> String {
    v.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn for_profile(profile: Profile) -> Self {
        let mut cfg = Self {
            input_dim: 784,
            hidden_dims: vec![10, 10, 10, 10],
            latent_dim: 2,
            flow_length: 4,
            lr: 0.002,
            iterations: 500_000,
            batch_size: 1,
            seed: 0,
            data_dir: PathBuf::from("data/mnist"),
            train_images: None,
            train_labels: None,
            test_images: None,
            test_labels: None,
            subset: None,
            out_dir: PathBuf::from("runs/paper"),
            log_interval: 1000,
            checkpoint_every: 50_000,
            clip_norm: None,
            smooth_window: 10,
            samples_per_class: 500,
            grid_resolution: 200,
            grid_bounds: None,
            write_pgm: true,
            gmm_components: 10,
            gmm_restarts: 50,
            gmm_max_iter: 200,
        };
        if profile == Profile::Desk {
            cfg.data_dir = PathBuf::from("data/mnist-desk");
            cfg.subset = Some(10_000);
            cfg.iterations = 50_000;
            cfg.out_dir = PathBuf::from("runs/desk");
            cfg.log_interval = 500;
            cfg.checkpoint_every = 10_000;
        }
        cfg
    }

    /// Assigns one field from its textual form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "input_dim" => self.input_dim = parse(key, value)?,
            "hidden_dims" => self.hidden_dims = parse_list(key, value)?,
            "latent_dim" => self.latent_dim = parse(key, value)?,
            "flow_length" | "K" => self.flow_length = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "iterations" => self.iterations = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "data_dir" => self.data_dir = PathBuf::from(value),
            "train_images" => self.train_images = parse_opt(key, value)?,
            "train_labels" => self.train_labels = parse_opt(key, value)?,
            "test_images" => self.test_images = parse_opt(key, value)?,
            "test_labels" => self.test_labels = parse_opt(key, value)?,
            "subset" => self.subset = parse_opt(key, value)?,
            "out_dir" => self.out_dir = PathBuf::from(value),
            "log_interval" => self.log_interval = parse(key, value)?,
            "checkpoint_every" => self.checkpoint_every = parse(key, value)?,
            "clip_norm" => self.clip_norm = parse_opt(key, value)?,
            "smooth_window" => self.smooth_window = parse(key, value)?,
            "samples_per_class" => self.samples_per_class = parse(key, value)?,
            "grid_resolution" => self.grid_resolution = parse(key, value)?,
            "grid_bounds" => {
                self.grid_bounds = if value == "none" {
                    None
                } else {
                    let v: Vec<f64> = parse_list(key, value)?;
                    let b: [f64; 4] = v.try_into().map_err(|_| {
                        Error::Config("grid_bounds needs xmin,xmax,ymin,ymax".into())
                    })?;
                    Some(b)
                }
            }
            "write_pgm" => self.write_pgm = parse(key, value)?,
            "gmm_components" => self.gmm_components = parse(key, value)?,
            "gmm_restarts" => self.gmm_restarts = parse(key, value)?,
            "gmm_max_iter" => self.gmm_max_iter = parse(key, value)?,
            other => return Err(Error::Config(format!("unknown config key `{other}`"))),
        }
        Ok(())
    }

    /// Applies every `key = value` line of `text`. Blank lines and `#`
    /// comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        self.apply_text(&text)
    }

    /// Parses a full echo produced by [`RunConfig::to_text`].
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply_text(text)?;
        Ok(cfg)
    }

    /// All fields as `key = value` lines in [`KEYS`] order.
    pub fn to_text(&self) -> String {
        let bounds = self
            .grid_bounds
            .map_or_else(|| "none".into(), |b| show_list(&b));
        let values = [
            self.input_dim.to_string(),
            show_list(&self.hidden_dims),
            self.latent_dim.to_string(),
            self.flow_length.to_string(),
            self.lr.to_string(),
            self.iterations.to_string(),
            self.batch_size.to_string(),
            self.seed.to_string(),
            self.data_dir.display().to_string(),
            show_path(&self.train_images),
            show_path(&self.train_labels),
            show_path(&self.test_images),
            show_path(&self.test_labels),
            show_opt(&self.subset),
            self.out_dir.display().to_string(),
            self.log_interval.to_string(),
            self.checkpoint_every.to_string(),
            show_opt(&self.clip_norm),
            self.smooth_window.to_string(),
            self.samples_per_class.to_string(),
            self.grid_resolution.to_string(),
            bounds,
            self.write_pgm.to_string(),
            self.gmm_components.to_string(),
            self.gmm_restarts.to_string(),
            self.gmm_max_iter.to_string(),
        ];
        let mut out = String::new();
        for (k, v) in KEYS.iter().zip(values) {
            writeln!(out, "{k} = {v}").expect("write to String");
        }
        out
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("input_dim", self.input_dim as u64),
            ("latent_dim", self.latent_dim as u64),
            ("iterations", self.iterations),
            ("batch_size", self.batch_size as u64),
            ("log_interval", self.log_interval),
            ("smooth_window", self.smooth_window as u64),
            ("samples_per_class", self.samples_per_class as u64),
            ("grid_resolution", self.grid_resolution as u64),
            ("gmm_components", self.gmm_components as u64),
            ("gmm_restarts", self.gmm_restarts as u64),
            ("gmm_max_iter", self.gmm_max_iter as u64),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.hidden_dims.contains(&0) {
            return Err(Error::Config("hidden_dims entries must be positive".into()));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!(
                "lr must be positive, got {}",
                self.lr
            )));
        }
        if self.subset == Some(0) {
            return Err(Error::Config("subset must be positive".into()));
        }
        if self.clip_norm.is_some_and(|c| !(c.is_finite() && c > 0.0)) {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        if self.checkpoint_every % self.log_interval != 0 {
            // resume restarts at a log boundary so rows stay identical
            return Err(Error::Config(
                "checkpoint_every must be a multiple of log_interval".into(),
            ));
        }
        if let Some([x0, x1, y0, y1]) = self.grid_bounds {
            if !(x0 < x1 && y0 < y1) {
                return Err(Error::Config(
                    "grid_bounds must satisfy xmin<xmax, ymin<ymax".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn vae(&self) -> VaeConfig {
        VaeConfig {
            input_dim: self.input_dim,
            hidden_dims: self.hidden_dims.clone(),
            latent_dim: self.latent_dim,
            flow_length: self.flow_length,
        }
    }

    fn locate(&self, explicit: &Option<PathBuf>, stem: &str) -> PathBuf {
        if let Some(p) = explicit {
            return p.clone();
        }
        let raw = self.data_dir.join(stem);
        let gz = self.data_dir.join(format!("{stem}.gz"));
        if !raw.exists() && gz.exists() {
            gz
        } else {
            raw
        }
    }

    /// Image and label paths for `split`, preferring explicit settings over
    /// the standard names under `data_dir` (raw or `.gz`).
    pub fn split_paths(&self, split: Split) -> (PathBuf, PathBuf) {
        match split {
            Split::Train => (
                self.locate(&self.train_images, "train-images-idx3-ubyte"),
                self.locate(&self.train_labels, "train-labels-idx1-ubyte"),
            ),
            Split::Test => (
                self.locate(&self.test_images, "t10k-images-idx3-ubyte"),
                self.locate(&self.test_labels, "t10k-labels-idx1-ubyte"),
            ),
        }
    }

    /// Loads `split` and checks its image size against `input_dim`.
    pub fn load_split(&self, split: Split) -> Result<MnistSet> {
        let (images, labels) = self.split_paths(split);
        let set = MnistSet::load(images, labels, split)?;
        if set.dim() != self.input_dim {
            return Err(Error::Dimension {
                expected: self.input_dim,
                found: set.dim(),
            });
        }
        Ok(set)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_reference_setup() {
        let c = RunConfig::default();
        assert_eq!(c.input_dim, 784);
        assert_eq!(c.hidden_dims, vec![10; 4]);
        assert_eq!((c.latent_dim, c.flow_length, c.batch_size), (2, 4, 1));
        assert_eq!((c.lr, c.iterations), (0.002, 500_000));
        assert_eq!(c.subset, None);
        let d = RunConfig::for_profile(Profile::Desk);
        assert_eq!((d.subset, d.iterations), (Some(10_000), 50_000));
        c.validate().unwrap();
        d.validate().unwrap();
    }

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::for_profile(Profile::Desk);
        c.clip_norm = Some(2.5);
        c.grid_bounds = Some([-3.0, 3.0, -2.5, 4.0]);
        c.lr = 0.1 + 0.2;
        c.train_images = Some("a/b.idx".into());
        let text = c.to_text();
        let back = RunConfig::from_text(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn file_syntax_comments_and_errors() {
        let mut c = RunConfig::default();
        c.apply_text("# header\n\nlatent_dim = 3  # trailing\nhidden_dims = [4, 5]\nsubset=none\n")
            .unwrap();
        assert_eq!(
            (c.latent_dim, c.hidden_dims.clone(), c.subset),
            (3, vec![4, 5], None)
        );
        assert!(c.apply_text("no_equals_here").is_err());
        assert!(c.apply_text("unknown_key = 1").is_err());
        assert!(c.apply_text("lr = fast").is_err());
    }

    #[test]
    fn validation_rejects_bad_values() {
        let bad = |f: fn(&mut RunConfig)| {
            let mut c = RunConfig::default();
            f(&mut c);
            assert!(matches!(c.validate(), Err(Error::Config(_))));
        };
        bad(|c| c.iterations = 0);
        bad(|c| c.hidden_dims = vec![10, 0]);
        bad(|c| c.lr = -1.0);
        bad(|c| c.subset = Some(0));
        bad(|c| c.checkpoint_every = 1500);
        bad(|c| c.grid_bounds = Some([1.0, 0.0, 0.0, 1.0]));
        let mut ok = RunConfig::default();
        ok.flow_length = 0;
        ok.validate().unwrap();
    }

    #[test]
    fn split_paths_prefer_gz_when_raw_missing() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("train-images-idx3-ubyte.gz"), b"").unwrap();
        let mut c = RunConfig::default();
        c.data_dir = dir.path().to_path_buf();
        let (img, lbl) = c.split_paths(Split::Train);
        assert!(img.to_string_lossy().ends_with(".gz"));
        assert!(lbl.to_string_lossy().ends_with("labels-idx1-ubyte"));
    }
}
