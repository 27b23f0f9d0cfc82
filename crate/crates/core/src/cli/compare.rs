//! Flow run versus vanilla run on identical data and seeds.

use std::fmt::Write as _;
use std::path::PathBuf;

use super::config::RunConfig;
use super::gmm::{multimodality_score, GmmOptions, Multimodality};
use super::latents::{export_latents, select_per_class, write_file, write_latents};
use super::train::{smoothed_totals, train_on, TrainOutcome};
use crate::data::{MnistSet, Split};
use crate::error::{Error, Result};
use crate::nets::derive_seed;

pub const COMPARE_FILE: &str = "compare.csv";
pub const COMPARE_HEADER: &str = "run,flow_length,iterations,initial_smoothed_total,\
final_smoothed_total,max_abs_flow_correction,bic_1,bic_k,multimodality_score";

const GMM_TAG: u64 = 0x676d6d;

#[derive(Debug, Clone, PartialEq)]
pub struct CompareRow {
    /// `flow` or `vanilla`.
    pub run: String,
    pub flow_length: usize,
    pub iterations: u64,
    pub initial_smoothed_total: f64,
    pub final_smoothed_total: f64,
    /// Largest `|flow_correction|` over all log rows.
    pub max_abs_flow_correction: f64,
    pub multimodality: Multimodality,
}

impl CompareRow {
    pub fn loss_decreased(&self) -> bool {
        self.final_smoothed_total < self.initial_smoothed_total
    }

    pub fn to_csv(&self) -> String {
        let m = &self.multimodality;
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.run,
            self.flow_length,
            self.iterations,
            self.initial_smoothed_total,
            self.final_smoothed_total,
            self.max_abs_flow_correction,
            m.bic_single,
            m.bic_mixture,
            m.score
        )
    }
}

#[derive(Debug, Clone)]
pub struct CompareReport {
    /// The flow run first, then the vanilla run.
    pub rows: Vec<CompareRow>,
    pub path: PathBuf,
}

impl CompareReport {
    pub fn flow(&self) -> &CompareRow {
        &self.rows[0]
    }

    pub fn vanilla(&self) -> &CompareRow {
        &self.rows[1]
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{COMPARE_HEADER}\n");
        for r in &self.rows {
            writeln!(out, "{}", r.to_csv()).expect("write to String");
        }
        out
    }
}

fn summarize(
    name: &str,
    config: &RunConfig,
    data: &MnistSet,
    outcome: &TrainOutcome,
) -> Result<CompareRow> {
    let (initial, last) = smoothed_totals(&outcome.rows, config.smooth_window)
        .ok_or_else(|| Error::Config("training produced no log rows".into()))?;
    let indices = select_per_class(data, config.samples_per_class);
    let records = export_latents(&outcome.model, data, &indices, config.seed)?;
    let points: Vec<Vec<f64>> = records.iter().map(|r| r.z_k.clone()).collect();
    let multimodality = multimodality_score(
        &points,
        GmmOptions {
            components: config.gmm_components,
            restarts: config.gmm_restarts,
            max_iter: config.gmm_max_iter,
            seed: derive_seed(config.seed, GMM_TAG),
        },
    )?;
    write_latents(&config.out_dir, records)?;
    Ok(CompareRow {
        run: name.to_string(),
        flow_length: config.flow_length,
        iterations: outcome.rows.last().map_or(0, |r| r.iter),
        initial_smoothed_total: initial,
        final_smoothed_total: last,
        max_abs_flow_correction: outcome
            .rows
            .iter()
            .map(|r| r.terms.flow_correction.abs())
            .fold(0.0, f64::max),
        multimodality,
    })
}

/// Trains the configured flow length and `K = 0` side by side on `data`,
/// each under its own subdirectory of `config.out_dir`.
pub fn compare_on(config: &RunConfig, data: &MnistSet) -> Result<CompareReport> {
    config.validate()?;
    let mut flow = config.clone();
    flow.out_dir = config.out_dir.join("flow");
    let mut vanilla = config.clone();
    vanilla.flow_length = 0;
    vanilla.out_dir = config.out_dir.join("vanilla");

    let run = |cfg: &RunConfig, name: &str| -> Result<CompareRow> {
        let outcome = train_on(cfg, data)?;
        summarize(name, cfg, data, &outcome)
    };
    let (a, b) = std::thread::scope(|s| {
        let h = s.spawn(|| run(&vanilla, "vanilla"));
        let a = run(&flow, "flow");
        (a, h.join().expect("vanilla run panicked"))
    });
    let report = CompareReport {
        rows: vec![a?, b?],
        path: config.out_dir.join(COMPARE_FILE),
    };
    write_file(&report.path, report.to_csv().as_bytes())?;
    Ok(report)
}

pub fn cmd_compare(config: &RunConfig) -> Result<CompareReport> {
    config.validate()?;
    let data = config.load_split(Split::Train)?;
    compare_on(config, &data)
}
