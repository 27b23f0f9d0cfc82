use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pfvae::cli::{self, GradcheckConfig, Profile, RunConfig};
use pfvae::data::Split;
use pfvae::gradcore::GradFault;

#[derive(Parser)]
#[command(name = "pfvae", version, about = "Planar-flow VAE on MNIST")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// `key = value` config file applied on top of the profile defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory (same as `--out_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,

    #[arg(long, global = true, default_value = "paper")]
    profile: String,

    #[command(flatten)]
    overrides: Overrides,
}

/// One flag per config key; each wins over the config file.
#[derive(Args, Default)]
struct Overrides {
    #[arg(long = "input_dim", global = true)]
    input_dim: Option<String>,
    #[arg(long = "hidden_dims", global = true, value_name = "A,B,..")]
    hidden_dims: Option<String>,
    #[arg(long = "latent_dim", global = true)]
    latent_dim: Option<String>,
    #[arg(long = "flow_length", global = true)]
    flow_length: Option<String>,
    #[arg(long = "lr", global = true)]
    lr: Option<String>,
    #[arg(long = "iterations", global = true)]
    iterations: Option<String>,
    #[arg(long = "batch_size", global = true)]
    batch_size: Option<String>,
    #[arg(long = "data_dir", global = true)]
    data_dir: Option<String>,
    #[arg(long = "train_images", global = true)]
    train_images: Option<String>,
    #[arg(long = "train_labels", global = true)]
    train_labels: Option<String>,
    #[arg(long = "test_images", global = true)]
    test_images: Option<String>,
    #[arg(long = "test_labels", global = true)]
    test_labels: Option<String>,
    #[arg(long = "subset", global = true, value_name = "N|none")]
    subset: Option<String>,
    #[arg(long = "out_dir", global = true)]
    out_dir: Option<String>,
    #[arg(long = "log_interval", global = true)]
    log_interval: Option<String>,
    #[arg(long = "checkpoint_every", global = true)]
    checkpoint_every: Option<String>,
    #[arg(long = "clip_norm", global = true, value_name = "X|none")]
    clip_norm: Option<String>,
    #[arg(long = "smooth_window", global = true)]
    smooth_window: Option<String>,
    #[arg(long = "samples_per_class", global = true)]
    samples_per_class: Option<String>,
    #[arg(long = "grid_resolution", global = true)]
    grid_resolution: Option<String>,
    #[arg(
        long = "grid_bounds",
        global = true,
        value_name = "XMIN,XMAX,YMIN,YMAX"
    )]
    grid_bounds: Option<String>,
    #[arg(long = "write_pgm", global = true)]
    write_pgm: Option<String>,
    #[arg(long = "gmm_components", global = true)]
    gmm_components: Option<String>,
    #[arg(long = "gmm_restarts", global = true)]
    gmm_restarts: Option<String>,
    #[arg(long = "gmm_max_iter", global = true)]
    gmm_max_iter: Option<String>,
}

impl Overrides {
    fn pairs(&self) -> Vec<(&'static str, &Option<String>)> {
        vec![
            ("input_dim", &self.input_dim),
            ("hidden_dims", &self.hidden_dims),
            ("latent_dim", &self.latent_dim),
            ("flow_length", &self.flow_length),
            ("lr", &self.lr),
            ("iterations", &self.iterations),
            ("batch_size", &self.batch_size),
            ("data_dir", &self.data_dir),
            ("train_images", &self.train_images),
            ("train_labels", &self.train_labels),
            ("test_images", &self.test_images),
            ("test_labels", &self.test_labels),
            ("subset", &self.subset),
            ("out_dir", &self.out_dir),
            ("log_interval", &self.log_interval),
            ("checkpoint_every", &self.checkpoint_every),
            ("clip_norm", &self.clip_norm),
            ("smooth_window", &self.smooth_window),
            ("samples_per_class", &self.samples_per_class),
            ("grid_resolution", &self.grid_resolution),
            ("grid_bounds", &self.grid_bounds),
            ("write_pgm", &self.write_pgm),
            ("gmm_components", &self.gmm_components),
            ("gmm_restarts", &self.gmm_restarts),
            ("gmm_max_iter", &self.gmm_max_iter),
        ]
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train a model, or continue one with `--resume`.
    Train {
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Export z0 / zK for `samples_per_class` examples per digit.
    Latents {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "train")]
        split: Split,
    },
    /// KDE of the exported zK on a grid (latent dimension 2 only).
    Density {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "train")]
        split: Split,
    },
    /// Compare backward-pass gradients with finite differences.
    Gradcheck {
        #[arg(long, value_delimiter = ',', default_value = "0,2,4")]
        flow_lengths: Vec<usize>,
        /// Break the tanh backward rule; the check must then fail.
        #[arg(long)]
        corrupt_grad: bool,
    },
    /// Train the configured K and K = 0 side by side and score both latents.
    Compare,
}

fn build_config(cli: &Cli) -> pfvae::Result<RunConfig> {
    let profile: Profile = cli.profile.parse()?;
    let mut config = RunConfig::for_profile(profile);
    if let Some(path) = &cli.config {
        config.apply_file(path)?;
    }
    for (key, value) in cli.overrides.pairs() {
        if let Some(v) = value {
            config.set(key, v)?;
        }
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.out_dir = out.clone();
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: &Cli) -> pfvae::Result<ExitCode> {
    let config = build_config(cli)?;
    match &cli.command {
        Command::Train { resume } => {
            let outcome = match resume {
                Some(ckpt) => cli::cmd_resume(&config, ckpt)?,
                None => cli::cmd_train(&config)?,
            };
            if let Some(last) = outcome.rows.last() {
                println!("iter {} total {}", last.iter, last.terms.total);
            }
            println!("log: {}", outcome.log_path.display());
            println!("checkpoint: {}", outcome.checkpoint_path.display());
        }
        Command::Latents { checkpoint, split } => {
            let out = cli::cmd_latents(&config, checkpoint, *split)?;
            println!(
                "{} latents: {}",
                out.records.len(),
                out.latents_path.display()
            );
            println!("digit means: {}", out.means_path.display());
        }
        Command::Density { checkpoint, split } => {
            let out = cli::cmd_density(&config, checkpoint, *split)?;
            println!("grid mass {:.6}", out.grid.mass());
            println!("density: {}", out.csv_path.display());
            if let Some(p) = out.pgm_path {
                println!("heatmap: {}", p.display());
            }
        }
        Command::Gradcheck {
            flow_lengths,
            corrupt_grad,
        } => {
            let gc = GradcheckConfig {
                flow_lengths: flow_lengths.clone(),
                seed: config.seed,
                fault: corrupt_grad.then_some(GradFault::TanhBackward),
                ..GradcheckConfig::default()
            };
            let report = cli::cmd_gradcheck(&gc)?;
            print!("{}", report.to_text());
            if !report.passed() {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Compare => {
            let report = cli::cmd_compare(&config)?;
            print!("{}", report.to_csv());
            println!("report: {}", report.path.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
