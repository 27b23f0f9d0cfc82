use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use pfvae::cli::checkpoint::Checkpoint;
use pfvae::cli::RunConfig;
use pfvae::data::{
    encode_idx_images, encode_idx_labels, parse_idx_images, parse_idx_labels, IdxImages,
};
use pfvae::flows::{constrain_u, PlanarFlow};
use pfvae::nets::{reparameterize, GaussianLatent, VaeModel};
use pfvae::optim::AdamState;
use pfvae::Error;

fn idx_images() -> impl Strategy<Value = IdxImages> {
    (1usize..5, 1usize..5, 0usize..6).prop_flat_map(|(rows, cols, count)| {
        proptest::collection::vec(any::<u8>(), rows * cols * count)
            .prop_map(move |pixels| IdxImages { rows, cols, pixels })
    })
}

proptest! {
    #[test]
    fn idx_images_round_trip(images in idx_images()) {
        let bytes = encode_idx_images(&images);
        prop_assert_eq!(parse_idx_images(&bytes).unwrap(), images);
    }

    #[test]
    fn idx_labels_round_trip(labels in proptest::collection::vec(0u8..10, 0..40)) {
        prop_assert_eq!(parse_idx_labels(&encode_idx_labels(&labels)).unwrap(), labels);
    }

    #[test]
    fn truncated_idx_never_panics(images in idx_images(), cut in 0usize..64) {
        let bytes = encode_idx_images(&images);
        let cut = cut.min(bytes.len());
        let r = parse_idx_images(&bytes[..cut]);
        if cut < bytes.len() {
            let truncated = matches!(r, Err(Error::Truncated { .. }));
            prop_assert!(truncated);
        }
    }

    #[test]
    fn arbitrary_bytes_never_panic(bytes in proptest::collection::vec(any::<u8>(), 0..64)) {
        let _ = parse_idx_images(&bytes);
        let _ = parse_idx_labels(&bytes);
        let _ = Checkpoint::from_bytes(&bytes);
    }

    #[test]
    fn constrained_u_keeps_flows_invertible(
        u in proptest::collection::vec(-3.0f64..3.0, 2),
        w in proptest::collection::vec(-3.0f64..3.0, 2),
        b in -3.0f64..3.0,
        z in proptest::collection::vec(-5.0f64..5.0, 2),
    ) {
        prop_assume!(w.iter().map(|v| v * v).sum::<f64>() > 1e-6);
        let u_hat = constrain_u(&u, &w).unwrap();
        let dot: f64 = u_hat.iter().zip(&w).map(|(a, b)| a * b).sum();
        prop_assert!(dot > -1.0);
        let flow = PlanarFlow::new(u, w, b).unwrap();
        prop_assert!(flow.log_det(&z).unwrap().is_finite());
    }

    #[test]
    fn config_echo_round_trips(
        latent in 1usize..5,
        k in 0usize..8,
        lr in 1e-6f64..1.0,
        hidden in proptest::collection::vec(1usize..64, 0..5),
        subset in proptest::option::of(1usize..100_000),
        seed in any::<u64>(),
    ) {
        let mut c = RunConfig::default();
        c.latent_dim = latent;
        c.flow_length = k;
        c.lr = lr;
        c.hidden_dims = hidden;
        c.subset = subset;
        c.seed = seed;
        let back = RunConfig::from_text(&c.to_text()).unwrap();
        prop_assert_eq!(back, c);
    }
}

#[test]
fn checkpoint_round_trip_after_updates() {
    let mut config = RunConfig::default();
    config.input_dim = 9;
    config.hidden_dims = vec![5, 4];
    config.flow_length = 3;
    let model = VaeModel::init(config.vae(), 21).unwrap();
    let mut adam = AdamState::new(model.params(), 0.01);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for t in adam.m.iter_mut().chain(adam.v.iter_mut()) {
        for v in t.data_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
    }
    adam.t = 12345;
    let ckpt = Checkpoint {
        config,
        params: model.params().clone(),
        adam,
        iteration: 12345,
        rng,
    };
    let bytes = ckpt.to_bytes();
    let back = Checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(back, ckpt);
    assert_eq!(back.to_bytes(), bytes);
}

#[test]
fn reparameterized_samples_match_moments() {
    let latent = GaussianLatent {
        mu: vec![0.7, -1.5],
        logvar: vec![-0.4, 0.9],
    };
    let n = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut sum = [0.0; 2];
    let mut sq = [0.0; 2];
    for _ in 0..n {
        let eps: Vec<f64> = (0..2).map(|_| StandardNormal.sample(&mut rng)).collect();
        let z = reparameterize(&latent, &eps).unwrap();
        for d in 0..2 {
            sum[d] += z[d];
            sq[d] += z[d] * z[d];
        }
    }
    for d in 0..2 {
        let var = latent.logvar[d].exp();
        let mean = sum[d] / n as f64;
        let sample_var = sq[d] / n as f64 - mean * mean;
        // 4 standard errors of the mean and of the variance
        assert!((mean - latent.mu[d]).abs() < 4.0 * (var / n as f64).sqrt());
        assert!((sample_var - var).abs() < 4.0 * var * (2.0 / n as f64).sqrt());
    }
}
