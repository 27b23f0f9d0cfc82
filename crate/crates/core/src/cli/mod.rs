//! Commands behind the `pfvae` binary.
//!
//! | command     | entry point                        | outputs in `out_dir`                      |
//! |-------------|------------------------------------|-------------------------------------------|
//! | `train`     | [`cmd_train`], [`cmd_resume`]      | `training_log.csv`, `checkpoint.bin`      |
//! | `latents`   | [`cmd_latents`]                    | `latents.csv`, `latent_means.csv`         |
//! | `density`   | [`cmd_density`]                    | `density.csv`, `density.pgm`              |
//! | `gradcheck` | [`cmd_gradcheck`]                  | report on stdout                          |
//! | `compare`   | [`cmd_compare`]                    | `compare.csv`, `flow/`, `vanilla/`        |

pub mod checkpoint;
pub mod compare;
pub mod config;
pub mod density;
pub mod gmm;
pub mod gradcheck;
pub mod latents;
pub mod train;

pub use checkpoint::Checkpoint;
pub use compare::{cmd_compare, compare_on, CompareReport, CompareRow};
pub use config::{Profile, RunConfig};
pub use density::{cmd_density, estimate_density, DensityGrid};
pub use gmm::{fit_gmm, multimodality_score, GmmOptions, Multimodality};
pub use gradcheck::{cmd_gradcheck, GradcheckConfig, GradcheckReport};
pub use latents::{cmd_latents, export_latents, LatentRecord};
pub use train::{cmd_resume, cmd_train, resume_on, train_on, LogRow, TrainOutcome, Trainer};
