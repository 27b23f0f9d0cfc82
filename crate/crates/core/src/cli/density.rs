//! Kernel density estimate of the 2-D aggregate latent on a regular grid.
//!
//! Each grid value is the kernel mass falling in its cell divided by the cell
//! area, so the grid never carries more than unit mass.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::config::RunConfig;
use super::latents::{export_latents, load_model_and_split, select_per_class, write_file};
use crate::data::Split;
use crate::error::{Error, Result};

pub const DENSITY_FILE: &str = "density.csv";
pub const PGM_FILE: &str = "density.pgm";
pub const DENSITY_HEADER: &str = "x,y,density";

/// Default bounds extend this many bandwidths past the data.
const BOUNDS_PAD: f64 = 4.0;

#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    /// `[xmin, xmax, ymin, ymax]`.
    pub bounds: [f64; 4],
    pub nx: usize,
    pub ny: usize,
    /// Row-major with `y` as the outer index.
    pub values: Vec<f64>,
}

impl DensityGrid {
    pub fn dx(&self) -> f64 {
        (self.bounds[1] - self.bounds[0]) / self.nx as f64
    }

    pub fn dy(&self) -> f64 {
        (self.bounds[3] - self.bounds[2]) / self.ny as f64
    }

    pub fn cell_area(&self) -> f64 {
        self.dx() * self.dy()
    }

    /// Centre of column `i`.
    pub fn x(&self, i: usize) -> f64 {
        self.bounds[0] + (i as f64 + 0.5) * self.dx()
    }

    /// Centre of row `j`.
    pub fn y(&self, j: usize) -> f64 {
        self.bounds[2] + (j as f64 + 0.5) * self.dy()
    }

    pub fn value(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.nx + i]
    }

    /// Σ density × cell area.
    pub fn mass(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.cell_area()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    /// Number of 4-connected groups of cells whose density is at least
    /// `fraction` of the maximum.
    pub fn high_density_regions(&self, fraction: f64) -> usize {
        let threshold = fraction * self.max();
        let high: Vec<bool> = self
            .values
            .iter()
            .map(|&v| v > 0.0 && v >= threshold)
            .collect();
        let mut seen = vec![false; high.len()];
        let mut regions = 0;
        for start in 0..high.len() {
            if !high[start] || seen[start] {
                continue;
            }
            regions += 1;
            seen[start] = true;
            let mut queue = VecDeque::from([start]);
            while let Some(c) = queue.pop_front() {
                let (i, j) = (c % self.nx, c / self.nx);
                let mut next = Vec::with_capacity(4);
                if i > 0 {
                    next.push(c - 1);
                }
                if i + 1 < self.nx {
                    next.push(c + 1);
                }
                if j > 0 {
                    next.push(c - self.nx);
                }
                if j + 1 < self.ny {
                    next.push(c + self.nx);
                }
                for n in next {
                    if high[n] && !seen[n] {
                        seen[n] = true;
                        queue.push_back(n);
                    }
                }
            }
        }
        regions
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{DENSITY_HEADER}\n");
        for j in 0..self.ny {
            for i in 0..self.nx {
                writeln!(out, "{},{},{}", self.x(i), self.y(j), self.value(i, j))
                    .expect("write to String");
            }
        }
        out
    }

    /// Binary 8-bit greymap scaled so the maximum is 255; the top image row
    /// is the largest `y`.
    pub fn to_pgm(&self) -> Vec<u8> {
        let max = self.max();
        let mut out = format!("P5\n{} {}\n255\n", self.nx, self.ny).into_bytes();
        for j in (0..self.ny).rev() {
            for i in 0..self.nx {
                let v = if max > 0.0 {
                    self.value(i, j) / max
                } else {
                    0.0
                };
                out.push((v * 255.0).round().clamp(0.0, 255.0) as u8);
            }
        }
        out
    }
}

fn std_dev(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0).max(1.0);
    var.sqrt()
}

/// Scott's rule per axis: `h = σ · n^(-1/(d+4))` with `d = 2`.
pub fn scott_bandwidth(points: &[[f64; 2]]) -> [f64; 2] {
    let factor = (points.len() as f64).powf(-1.0 / 6.0);
    let h = |axis: usize| {
        let s = std_dev(points.iter().map(move |p| p[axis]));
        (s * factor).max(1e-9)
    };
    [h(0), h(1)]
}

/// Data range widened by a few bandwidths on every side.
pub fn default_bounds(points: &[[f64; 2]], bandwidth: [f64; 2]) -> [f64; 4] {
    let mut b = [
        f64::INFINITY,
        f64::NEG_INFINITY,
        f64::INFINITY,
        f64::NEG_INFINITY,
    ];
    for p in points {
        b[0] = b[0].min(p[0]);
        b[1] = b[1].max(p[0]);
        b[2] = b[2].min(p[1]);
        b[3] = b[3].max(p[1]);
    }
    [
        b[0] - BOUNDS_PAD * bandwidth[0],
        b[1] + BOUNDS_PAD * bandwidth[0],
        b[2] - BOUNDS_PAD * bandwidth[1],
        b[3] + BOUNDS_PAD * bandwidth[1],
    ]
}

fn normal_cdf(t: f64) -> f64 {
    0.5 * libm::erfc(-t / std::f64::consts::SQRT_2)
}

/// Mass of `N(centre, h²)` in each of `n` equal cells spanning `[lo, hi]`.
fn cell_masses(centre: f64, h: f64, lo: f64, hi: f64, n: usize, out: &mut [f64]) {
    let step = (hi - lo) / n as f64;
    let mut prev = normal_cdf((lo - centre) / h);
    for (k, o) in out.iter_mut().enumerate() {
        let edge = if k + 1 == n {
            hi
        } else {
            lo + (k + 1) as f64 * step
        };
        let next = normal_cdf((edge - centre) / h);
        *o = (next - prev).max(0.0);
        prev = next;
    }
}

/// Product-Gaussian KDE with per-axis bandwidth `bandwidth`.
pub fn kde_grid(
    points: &[[f64; 2]],
    bounds: [f64; 4],
    resolution: usize,
    bandwidth: [f64; 2],
) -> Result<DensityGrid> {
    if points.is_empty() {
        return Err(Error::EmptySet);
    }
    if resolution == 0 || !(bounds[0] < bounds[1] && bounds[2] < bounds[3]) {
        return Err(Error::Config("empty density grid".into()));
    }
    let (nx, ny) = (resolution, resolution);
    let mut values = vec![0.0; nx * ny];
    let mut mx = vec![0.0; nx];
    let mut my = vec![0.0; ny];
    for p in points {
        cell_masses(p[0], bandwidth[0], bounds[0], bounds[1], nx, &mut mx);
        cell_masses(p[1], bandwidth[1], bounds[2], bounds[3], ny, &mut my);
        for (j, &wy) in my.iter().enumerate() {
            if wy == 0.0 {
                continue;
            }
            for (v, &wx) in values[j * nx..(j + 1) * nx].iter_mut().zip(&mx) {
                *v += wx * wy;
            }
        }
    }
    let mut grid = DensityGrid {
        bounds,
        nx,
        ny,
        values,
    };
    let norm = 1.0 / (points.len() as f64 * grid.cell_area());
    for v in &mut grid.values {
        *v *= norm;
    }
    Ok(grid)
}

/// KDE with Scott bandwidth on `bounds`, or on [`default_bounds`] if none.
pub fn estimate_density(
    points: &[[f64; 2]],
    bounds: Option<[f64; 4]>,
    resolution: usize,
) -> Result<DensityGrid> {
    if points.is_empty() {
        return Err(Error::EmptySet);
    }
    let h = scott_bandwidth(points);
    let bounds = bounds.unwrap_or_else(|| default_bounds(points, h));
    kde_grid(points, bounds, resolution, h)
}

#[derive(Debug, Clone)]
pub struct DensityOutcome {
    pub grid: DensityGrid,
    pub csv_path: PathBuf,
    pub pgm_path: Option<PathBuf>,
}

/// Density grid of `z_K` over `samples_per_class` examples per digit.
pub fn cmd_density(
    config: &RunConfig,
    checkpoint: impl AsRef<Path>,
    split: Split,
) -> Result<DensityOutcome> {
    let (model, set) = load_model_and_split(config, checkpoint.as_ref(), split)?;
    let dim = model.config().latent_dim;
    if dim != 2 {
        return Err(Error::Dimension {
            expected: 2,
            found: dim,
        });
    }
    let indices = select_per_class(&set, config.samples_per_class);
    let records = export_latents(&model, &set, &indices, config.seed)?;
    let points: Vec<[f64; 2]> = records.iter().map(|r| [r.z_k[0], r.z_k[1]]).collect();
    let grid = estimate_density(&points, config.grid_bounds, config.grid_resolution)?;

    let csv_path = config.out_dir.join(DENSITY_FILE);
    write_file(&csv_path, grid.to_csv().as_bytes())?;
    let pgm_path = if config.write_pgm {
        let p = config.out_dir.join(PGM_FILE);
        write_file(&p, &grid.to_pgm())?;
        Some(p)
    } else {
        None
    };
    Ok(DensityOutcome {
        grid,
        csv_path,
        pgm_path,
    })
}
