mod common;

use std::process::Command;

use common::{fixture_set, repo_root, small_config, write_fixture};
use pfvae::cli::checkpoint::{Checkpoint, VERSION};
use pfvae::cli::latents::{latents_header, parse_latents_csv, MEANS_FILE};
use pfvae::cli::{cmd_density, cmd_latents, cmd_train, compare_on, Profile, RunConfig, Trainer};
use pfvae::data::Split;
use pfvae::Error;

fn trained(k: usize) -> (tempfile::TempDir, RunConfig, std::path::PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    std::fs::create_dir(&data).unwrap();
    write_fixture(&data, &fixture_set(40, 2));
    let mut cfg = small_config(&data, &dir.path().join("train"));
    cfg.flow_length = k;
    cfg.iterations = 60;
    let ckpt = cmd_train(&cfg).unwrap().checkpoint_path;
    cfg.out_dir = dir.path().join("export");
    (dir, cfg, ckpt)
}

#[test]
fn latents_csv_layout_and_means() {
    let (_dir, cfg, ckpt) = trained(2);
    let out = cmd_latents(&cfg, &ckpt, Split::Test).unwrap();
    let text = std::fs::read_to_string(&out.latents_path).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "idx,label,z0_0,z0_1,zK_0,zK_1,sum_logdet"
    );
    assert_eq!(latents_header(2), text.lines().next().unwrap());
    // 40 fixture images hold 4 of every digit; 3 are requested per digit
    assert_eq!(text.lines().count() - 1, 30);

    // recompute per-digit means from the emitted file
    let records = parse_latents_csv(&text).unwrap();
    let means = std::fs::read_to_string(&out.means_path).unwrap();
    let mut lines = means.lines();
    assert_eq!(lines.next(), Some("label,count,zK_0,zK_1"));
    for line in lines {
        let f: Vec<f64> = line.split(',').map(|v| v.parse().unwrap()).collect();
        let rows: Vec<_> = records.iter().filter(|r| r.label as f64 == f[0]).collect();
        assert_eq!(rows.len() as f64, f[1]);
        for d in 0..2 {
            let m = rows.iter().map(|r| r.z_k[d]).sum::<f64>() / rows.len() as f64;
            assert!((m - f[2 + d]).abs() < 1e-12);
        }
    }
    assert!(out.means_path.ends_with(MEANS_FILE));
}

#[test]
fn latents_with_empty_stack_keep_z0() {
    let (_dir, cfg, ckpt) = trained(0);
    for r in cmd_latents(&cfg, &ckpt, Split::Train).unwrap().records {
        assert_eq!(r.z0, r.z_k);
        assert_eq!(r.sum_logdet, 0.0);
    }
}

#[test]
fn latents_are_reproducible() {
    let (dir, mut cfg, ckpt) = trained(2);
    let a = std::fs::read(cmd_latents(&cfg, &ckpt, Split::Train).unwrap().latents_path).unwrap();
    cfg.out_dir = dir.path().join("again");
    let b = std::fs::read(cmd_latents(&cfg, &ckpt, Split::Train).unwrap().latents_path).unwrap();
    assert_eq!(a, b);
}

#[test]
fn latents_reject_other_checkpoint_versions() {
    let (_dir, cfg, ckpt) = trained(2);
    let mut bytes = std::fs::read(&ckpt).unwrap();
    bytes[8..12].copy_from_slice(&(VERSION + 1).to_le_bytes());
    std::fs::write(&ckpt, bytes).unwrap();
    assert!(matches!(
        cmd_latents(&cfg, &ckpt, Split::Train),
        Err(Error::VersionMismatch { .. })
    ));
}

#[test]
fn checkpoint_file_round_trips_byte_identically() {
    let (dir, _cfg, ckpt) = trained(2);
    let bytes = std::fs::read(&ckpt).unwrap();
    let again = dir.path().join("again.bin");
    Checkpoint::load(&ckpt).unwrap().save(&again).unwrap();
    assert_eq!(std::fs::read(again).unwrap(), bytes);
}

#[test]
fn density_grid_outputs() {
    let (_dir, cfg, ckpt) = trained(2);
    let out = cmd_density(&cfg, &ckpt, Split::Train).unwrap();
    let g = &out.grid;
    assert!(g.values.iter().all(|&v| v >= 0.0));
    let mass = g.mass();
    assert!((0.9..=1.0).contains(&mass), "{mass}");

    let csv = std::fs::read_to_string(&out.csv_path).unwrap();
    assert_eq!(csv.lines().next(), Some("x,y,density"));
    assert_eq!(
        csv.lines().count() - 1,
        cfg.grid_resolution * cfg.grid_resolution
    );

    let pgm = std::fs::read(out.pgm_path.unwrap()).unwrap();
    let header = format!("P5\n{0} {0}\n255\n", cfg.grid_resolution);
    assert!(pgm.starts_with(header.as_bytes()));
    assert_eq!(pgm.len(), header.len() + cfg.grid_resolution.pow(2));
}

#[test]
fn density_requires_two_latent_dimensions() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    std::fs::create_dir(&data).unwrap();
    write_fixture(&data, &fixture_set(20, 3));
    let mut cfg = small_config(&data, &dir.path().join("out"));
    cfg.latent_dim = 3;
    cfg.iterations = 5;
    let ckpt = cmd_train(&cfg).unwrap().checkpoint_path;
    assert!(matches!(
        cmd_density(&cfg, ckpt, Split::Train),
        Err(Error::Dimension {
            expected: 2,
            found: 3
        })
    ));
}

#[test]
fn untrained_vanilla_model_has_one_density_mode() {
    let mut cfg = RunConfig::for_profile(Profile::Desk);
    cfg.data_dir = repo_root().join("data/mnist-desk");
    cfg.flow_length = 0;
    let data = cfg.load_split(Split::Train).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let ckpt = dir.path().join("init.bin");
    Trainer::new(cfg.clone(), &data)
        .unwrap()
        .checkpoint()
        .save(&ckpt)
        .unwrap();
    cfg.out_dir = dir.path().to_path_buf();
    cfg.write_pgm = false;
    let out = cmd_density(&cfg, &ckpt, Split::Train).unwrap();
    assert_eq!(out.grid.high_density_regions(0.25), 1);
    assert!((0.9..=1.0).contains(&out.grid.mass()));
}

#[test]
fn compare_writes_two_consistent_rows() {
    let dir = tempfile::tempdir().unwrap();
    let data = fixture_set(40, 4);
    let mut cfg = small_config(dir.path(), &dir.path().join("cmp"));
    cfg.iterations = 100;
    let report = compare_on(&cfg, &data).unwrap();
    assert_eq!(report.rows.len(), 2);
    assert_eq!(report.flow().iterations, report.vanilla().iterations);
    assert_eq!(
        (report.flow().flow_length, report.vanilla().flow_length),
        (2, 0)
    );
    assert_eq!(report.vanilla().max_abs_flow_correction, 0.0);
    let text = std::fs::read_to_string(&report.path).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(cfg.out_dir.join("flow/latents.csv").exists());
    assert!(cfg.out_dir.join("vanilla/latents.csv").exists());
}

fn pfvae() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pfvae"))
}

#[test]
fn binary_gradcheck_exit_codes() {
    let ok = pfvae()
        .args(["gradcheck", "--flow-lengths", "0,4"])
        .output()
        .unwrap();
    assert!(
        ok.status.success(),
        "{}",
        String::from_utf8_lossy(&ok.stdout)
    );
    let bad = pfvae()
        .args(["gradcheck", "--flow-lengths", "2", "--corrupt-grad"])
        .output()
        .unwrap();
    assert!(!bad.status.success());
}

#[test]
fn binary_train_config_file_and_flag_overrides() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    std::fs::create_dir(&data).unwrap();
    write_fixture(&data, &fixture_set(20, 5));
    let conf = dir.path().join("run.conf");
    std::fs::write(
        &conf,
        format!(
            "# tiny run\ninput_dim = 16\nhidden_dims = 8\niterations = 1000\nlog_interval = 10\n\
             checkpoint_every = 0\ndata_dir = {}\n",
            data.display()
        ),
    )
    .unwrap();
    let out = dir.path().join("out");
    let status = pfvae()
        .args([
            "train",
            "--profile",
            "desk",
            "--subset",
            "none",
            "--iterations",
            "30",
            "--seed",
            "4",
        ])
        .arg("--config")
        .arg(&conf)
        .arg("--out")
        .arg(&out)
        .output()
        .unwrap()
        .status;
    assert!(status.success());
    let log = std::fs::read_to_string(out.join("training_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 4);
    let ckpt = Checkpoint::load(out.join("checkpoint.bin")).unwrap();
    assert_eq!((ckpt.iteration, ckpt.config.seed), (30, 4));
    assert_eq!(ckpt.config.hidden_dims, vec![8]);

    let latents = dir.path().join("lat");
    let status = pfvae()
        .args(["latents", "--samples_per_class", "2", "--split", "test"])
        .arg("--checkpoint")
        .arg(out.join("checkpoint.bin"))
        .arg("--data_dir")
        .arg(&data)
        .arg("--out")
        .arg(&latents)
        .output()
        .unwrap()
        .status;
    assert!(status.success());
    let text = std::fs::read_to_string(latents.join("latents.csv")).unwrap();
    assert_eq!(text.lines().count(), 21);
}

#[test]
fn binary_reports_bad_config() {
    let out = pfvae().args(["train", "--lr", "fast"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lr"));
    let out = pfvae()
        .args(["train", "--profile", "huge"])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
}
