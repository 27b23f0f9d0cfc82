mod common;

use common::{fixture_set, small_config, write_fixture};
use pfvae::cli::checkpoint::Checkpoint;
use pfvae::cli::train::{read_log, smoothed_totals, LOG_HEADER};
use pfvae::cli::{cmd_resume, cmd_train, resume_on, train_on, RunConfig};
use pfvae::Error;

fn setup() -> (tempfile::TempDir, RunConfig) {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    std::fs::create_dir(&data).unwrap();
    write_fixture(&data, &fixture_set(32, 1));
    let cfg = small_config(&data, &dir.path().join("out"));
    (dir, cfg)
}

#[test]
fn smoke_run_reduces_smoothed_loss() {
    let (_dir, cfg) = setup();
    let out = cmd_train(&cfg).unwrap();
    assert_eq!(out.rows.len(), 20);
    assert_eq!(out.rows.last().unwrap().iter, 200);
    let (first, last) = smoothed_totals(&out.rows, cfg.smooth_window).unwrap();
    assert!(last < first, "smoothed total {first} -> {last}");
    let text = std::fs::read_to_string(&out.log_path).unwrap();
    assert_eq!(text.lines().next(), Some(LOG_HEADER));
    for r in &out.rows {
        let t = r.terms;
        assert!(t.recon >= 0.0 && t.kl >= 0.0);
        assert!(
            (t.total - (t.recon + t.kl + t.flow_correction)).abs() < 1e-9 * t.total.abs().max(1.0)
        );
    }
}

#[test]
fn empty_stack_logs_zero_flow_correction() {
    let (_dir, mut cfg) = setup();
    cfg.flow_length = 0;
    let out = cmd_train(&cfg).unwrap();
    assert!(!out.rows.is_empty());
    for r in read_log(&out.log_path).unwrap() {
        assert_eq!(r.terms.flow_correction, 0.0);
    }
}

#[test]
fn identical_runs_write_identical_files() {
    let (dir, cfg) = setup();
    let a = cmd_train(&cfg).unwrap();
    let mut cfg_b = cfg.clone();
    cfg_b.out_dir = dir.path().join("out_b");
    let b = cmd_train(&cfg_b).unwrap();
    assert_eq!(
        std::fs::read(&a.log_path).unwrap(),
        std::fs::read(&b.log_path).unwrap()
    );
    let ca = Checkpoint::load(&a.checkpoint_path).unwrap();
    let cb = Checkpoint::load(&b.checkpoint_path).unwrap();
    assert_eq!(ca.params, cb.params);
    assert_eq!(ca.adam, cb.adam);
}

#[test]
fn different_seeds_diverge() {
    let (dir, cfg) = setup();
    let a = cmd_train(&cfg).unwrap();
    let mut other = cfg.clone();
    other.seed += 1;
    other.out_dir = dir.path().join("other");
    let b = cmd_train(&other).unwrap();
    assert_ne!(a.rows, b.rows);
}

#[test]
fn interrupted_run_resumes_bit_exactly() {
    let (dir, cfg) = setup();
    let full = cmd_train(&cfg).unwrap();

    let mut part = cfg.clone();
    part.out_dir = dir.path().join("resumed");
    part.iterations = 100;
    let first = cmd_train(&part).unwrap();
    assert_eq!(
        Checkpoint::load(&first.checkpoint_path).unwrap().iteration,
        100
    );

    let mut rest = part.clone();
    rest.iterations = cfg.iterations;
    cmd_resume(&rest, &first.checkpoint_path).unwrap();

    assert_eq!(
        std::fs::read(&full.log_path).unwrap(),
        std::fs::read(part.out_dir.join("training_log.csv")).unwrap()
    );
    let a = Checkpoint::load(&full.checkpoint_path).unwrap();
    let b = Checkpoint::load(&first.checkpoint_path).unwrap();
    assert_eq!(
        (a.params, a.adam, a.iteration, a.rng),
        (b.params, b.adam, b.iteration, b.rng)
    );
}

#[test]
fn resume_discards_log_rows_past_the_checkpoint() {
    let (dir, cfg) = setup();
    let data = fixture_set(32, 1);
    let full = train_on(&cfg, &data).unwrap();

    // a crash after iteration 150 leaves rows the periodic checkpoint at 100
    // does not cover
    let mut crashed = cfg.clone();
    crashed.out_dir = dir.path().join("crashed");
    crashed.iterations = 100;
    let ckpt = Checkpoint::load(train_on(&crashed, &data).unwrap().checkpoint_path).unwrap();
    crashed.iterations = 150;
    std::fs::remove_file(crashed.out_dir.join("checkpoint.bin")).unwrap();
    let mut partial = crashed.clone();
    partial.out_dir = dir.path().join("scratch");
    let extra = train_on(&partial, &data).unwrap();
    std::fs::copy(&extra.log_path, crashed.out_dir.join("training_log.csv")).unwrap();

    crashed.iterations = cfg.iterations;
    resume_on(&crashed, ckpt, &data).unwrap();
    assert_eq!(
        std::fs::read(&full.log_path).unwrap(),
        std::fs::read(crashed.out_dir.join("training_log.csv")).unwrap()
    );
}

#[test]
fn nan_loss_aborts_and_keeps_last_good_checkpoint() {
    let (_dir, mut cfg) = setup();
    cfg.lr = 1e300;
    let err = cmd_train(&cfg).unwrap_err();
    let Error::NanLoss { iter } = err else {
        panic!("expected NanLoss, got {err:?}");
    };
    let ckpt = Checkpoint::load(cfg.out_dir.join("checkpoint.bin")).unwrap();
    assert_eq!(ckpt.iteration, iter - 1);
    assert!(ckpt.params.iter().all(|(_, t)| t.is_finite()));
    // the log keeps every completed row
    let rows = read_log(cfg.out_dir.join("training_log.csv")).unwrap();
    assert!(rows.iter().all(|r| r.iter < iter));
}

#[test]
fn dataset_errors_surface() {
    let (dir, mut cfg) = setup();
    cfg.data_dir = dir.path().join("missing");
    assert!(matches!(cmd_train(&cfg), Err(Error::Io { .. })));
    let (_dir, mut cfg) = setup();
    cfg.input_dim = 784;
    assert!(matches!(
        cmd_train(&cfg),
        Err(Error::Dimension {
            expected: 784,
            found: 16
        })
    ));
}
