#![allow(dead_code)]

use std::path::{Path, PathBuf};

use pfvae::cli::RunConfig;
use pfvae::data::{MnistSet, Split};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// `n` 4×4 images whose stripe pattern depends on the label, plus noise.
pub fn fixture_set(n: usize, seed: u64) -> MnistSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pixels = Vec::with_capacity(n * 16);
    let labels: Vec<u8> = (0..n).map(|i| (i % 10) as u8).collect();
    for &label in &labels {
        for j in 0..16usize {
            let on = (j + label as usize) % 3 == 0;
            let base = if on { 0.9 } else { 0.05 };
            let v: f64 = base + rng.random_range(-0.05..0.05);
            // quantise like real 8-bit pixels
            pixels.push((v.clamp(0.0, 1.0) * 255.0).round() / 255.0);
        }
    }
    MnistSet::new(pixels, 16, labels, Split::Train).unwrap()
}

/// Writes `set` as gzip-free IDX files into `dir` under the standard names.
pub fn write_fixture(dir: &Path, set: &MnistSet) {
    let (images, labels) = set.to_idx(4, 4).unwrap();
    std::fs::write(dir.join("train-images-idx3-ubyte"), &images).unwrap();
    std::fs::write(dir.join("train-labels-idx1-ubyte"), &labels).unwrap();
    std::fs::write(dir.join("t10k-images-idx3-ubyte"), &images).unwrap();
    std::fs::write(dir.join("t10k-labels-idx1-ubyte"), &labels).unwrap();
}

/// Small-model config reading the fixture in `data` and writing to `out`.
pub fn small_config(data: &Path, out: &Path) -> RunConfig {
    let mut c = RunConfig::default();
    c.input_dim = 16;
    c.hidden_dims = vec![8];
    c.latent_dim = 2;
    c.flow_length = 2;
    c.iterations = 200;
    c.log_interval = 10;
    c.checkpoint_every = 100;
    c.smooth_window = 5;
    c.samples_per_class = 3;
    c.grid_resolution = 60;
    c.gmm_restarts = 4;
    c.gmm_components = 3;
    c.seed = 7;
    c.data_dir = data.to_path_buf();
    c.out_dir = out.to_path_buf();
    c
}

/// Repository checkout root.
pub fn repo_root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}
