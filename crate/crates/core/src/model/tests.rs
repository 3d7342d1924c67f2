use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::blocks::{PathNet, PathShape};
use super::*;

fn small(n_blocks: usize) -> ModelConfig {
    ModelConfig {
        n_blocks,
        channels: 4,
        steps: n_blocks,
        stft: StftConfig::new(64, 32).unwrap(),
        ..ModelConfig::default()
    }
}

fn random_grid(rows: usize, cols: usize, seed: u64, lo: f64, hi: f64) -> Grid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Grid::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

fn set(model: &mut Sedm, name: &str, values: &[f32]) {
    let id = model.store().find(name).unwrap_or_else(|| panic!("no parameter {name}"));
    model.store_mut().get_mut(id).value.data_mut().copy_from_slice(values);
}

#[test]
fn parameter_count_matches_closed_form() {
    for cfg in [small(2), ModelConfig::default()] {
        let m = Sedm::new(cfg.clone(), 1).unwrap();
        assert_eq!(m.num_params(), Sedm::expected_params(&cfg));
    }
    let cfg = ModelConfig {
        phase_aware: false,
        ..small(2)
    };
    assert_eq!(Sedm::new(cfg.clone(), 1).unwrap().num_params(), Sedm::expected_params(&cfg));
}

#[test]
fn config_validation() {
    assert!(Sedm::new(ModelConfig { channels: 0, ..small(2) }, 0).is_err());
    assert!(Sedm::new(ModelConfig { n_blocks: 0, steps: 0, ..small(2) }, 0).is_err());
    assert!(Sedm::new(ModelConfig { kernel: 4, ..small(2) }, 0).is_err());
    assert!(Sedm::new(ModelConfig { steps: 3, ..small(2) }, 0).is_err());
}

#[test]
fn same_seed_same_parameters() {
    let a = Sedm::new(small(2), 9).unwrap();
    let b = Sedm::new(small(2), 9).unwrap();
    let c = Sedm::new(small(2), 10).unwrap();
    let vals = |m: &Sedm| m.store().params().iter().map(|p| p.value.clone()).collect::<Vec<_>>();
    assert_eq!(vals(&a), vals(&b));
    assert_ne!(vals(&a), vals(&c));
}

#[test]
fn paths_are_parameter_disjoint() {
    let m = Sedm::new(small(2), 0).unwrap();
    let names: Vec<&str> = m.store().params().iter().map(|p| p.name.as_str()).collect();
    assert!(names.iter().all(|n| n.starts_with("mag.") || n.starts_with("phase.")));
    let mut sorted = names.clone();
    sorted.sort();
    sorted.dedup();
    assert_eq!(sorted.len(), names.len());
}

#[test]
fn zero_heads_collapse_reverse_step() {
    let model = Sedm::new(small(3), 2).unwrap();
    let y = random_grid(10, 33, 4, 0.1, 2.0);
    for m in 1..=3 {
        let (g, _) = model.coefficients(Path::Magnitude, m).unwrap();
        let sigma = model.sigma(Path::Magnitude, m).unwrap();
        let (prev, i_hat, _) = model.reverse_step_grid(Path::Magnitude, &y, m).unwrap();
        assert!(i_hat.data.iter().all(|v| *v == 0.0));
        for (a, b) in prev.data.iter().zip(&y.data) {
            assert!((a - (b / g as f64 + sigma)).abs() < 1e-5);
        }
    }
    let mut model = model;
    set(&mut model, "mag.up1.theta", &[0.0]);
    let (g, _) = model.coefficients(Path::Magnitude, 2).unwrap();
    let (prev, _, _) = model.reverse_step_grid(Path::Magnitude, &y, 2).unwrap();
    for (a, b) in prev.data.iter().zip(&y.data) {
        assert_eq!(*a as f32, (*b as f32) * (1.0 / g));
    }
}

#[test]
fn reverse_step_scalar_example() {
    let cfg = ModelConfig {
        gamma_start: 0.9,
        gamma_end: 0.9,
        ..small(3)
    };
    let mut model = Sedm::new(cfg, 0).unwrap();
    set(&mut model, "mag.up2.gamma", &[0.9]);
    set(&mut model, "mag.up2.theta", &[0.2]);
    let f = model.config().bins();
    set(&mut model, "mag.up2.noise.b", &vec![5.0; f]);
    let y = Grid::filled(8, f, 1.0);
    let (prev, i_hat, _) = model.reverse_step_grid(Path::Magnitude, &y, 3).unwrap();
    assert!(i_hat.data.iter().all(|v| (v - 0.5).abs() < 1e-6));
    let expect = (1.0 / 0.9) * (1.0 - (0.2 / 0.1) * 0.5) + (0.19 / 0.271) * 0.2;
    for v in &prev.data {
        assert!((v - expect).abs() < 1e-6, "{v} vs {expect}");
    }
}

#[test]
fn enhance_preserves_shape_and_sign() {
    let model = Sedm::new(small(2), 3).unwrap();
    for frames in [1, 4, 7, 13] {
        let mag = random_grid(frames, 33, frames as u64, 0.0, 3.0);
        let phase = random_grid(frames, 33, 100 + frames as u64, -3.14, 3.14);
        let noisy = MagPhase::new(mag, phase).unwrap();
        let out = model.enhance(&noisy).unwrap();
        assert_eq!(out.mag.shape(), noisy.mag.shape());
        assert!(out.mag.data.iter().all(|v| *v >= 0.0));
        assert!(out.phase.data.iter().all(|v| *v > -std::f64::consts::PI - 1e-9 && *v <= std::f64::consts::PI + 1e-9));
    }
}

#[test]
fn enhance_rejects_bad_input_and_nan_parameters() {
    let mut model = Sedm::new(small(2), 3).unwrap();
    let wrong = MagPhase::new(Grid::zeros(4, 10), Grid::zeros(4, 10)).unwrap();
    assert!(matches!(model.enhance(&wrong), Err(Error::Dimension { .. })));
    set(&mut model, "mag.up0.gamma", &[f32::NAN]);
    let ok = MagPhase::new(Grid::filled(4, 33, 1.0), Grid::zeros(4, 33)).unwrap();
    assert!(matches!(model.enhance(&ok), Err(Error::NonFinite(_))));
}

#[test]
fn untrained_enhance_is_close_to_identity_in_magnitude() {
    let model = Sedm::new(small(2), 3).unwrap();
    let mag = random_grid(8, 33, 1, 0.5, 2.0);
    let noisy = MagPhase::new(mag.clone(), random_grid(8, 33, 2, -1.0, 1.0)).unwrap();
    let out = model.enhance(&noisy).unwrap();
    let scale = mag.rms();
    let bias = model.schedule().reverse_bias();
    for (a, b) in out.mag.data.iter().zip(&mag.data) {
        assert!((a - b).abs() <= bias * scale * 1.01 + 1e-4, "{a} {b}");
    }
}

#[test]
fn clamp_coefficients_warns() {
    let mut model = Sedm::new(small(2), 3).unwrap();
    set(&mut model, "mag.up0.gamma", &[1.5]);
    set(&mut model, "phase.up1.theta", &[-0.2]);
    let w = model.clamp_coefficients();
    assert_eq!(w.len(), 2);
    assert_eq!(model.coefficients(Path::Magnitude, 1).unwrap().0, COEFF_MAX);
    assert_eq!(model.coefficients(Path::Phase, 2).unwrap().1, COEFF_MIN);
    assert!(model.clamp_coefficients().is_empty());
}

#[test]
fn passthrough_block_latent_is_downsampled_input() {
    let c = 5;
    let mut store = ParamStore::new();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let shape = PathShape {
        in_channels: c,
        out_channels: c,
        channels: c,
        kernel: 3,
        layers: 2,
        blocks: 1,
    };
    let net = PathNet::new(&mut store, "p", &shape, &[(0.9, 0.1)], &mut rng);
    let mut eye = vec![0.0f32; c * c];
    for i in 0..c {
        eye[i * c + i] = 1.0;
    }
    for p in store.params_mut() {
        let identity = ["p.input.w", "p.down0.res.w", "p.latent.w"].contains(&p.name.as_str());
        if identity {
            p.value.data_mut().copy_from_slice(&eye);
        } else if !p.name.ends_with("prelu") && !p.name.ends_with("gamma") && !p.name.ends_with("theta") {
            p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
    }
    let tape = Tape::new();
    let x = Tensor::uniform(&[c, 8], 1.0, &mut rng);
    let out = net.forward(&tape, &store, tape.constant(x.clone()), 1).unwrap();
    let lat = out.latent.value();
    assert_eq!(lat.shape(), &[c, 4]);
    for ch in 0..c {
        for j in 0..4 {
            assert_eq!(lat.data()[ch * 4 + j], x.data()[ch * 8 + 2 * j]);
        }
    }
}

#[test]
fn chain_strips_padding() {
    let model = Sedm::new(small(2), 1).unwrap();
    let tape = Tape::new();
    let start = random_grid(5, 33, 3, 0.0, 1.0);
    let chain = model.run_chain(&tape, Path::Magnitude, &start).unwrap();
    assert_eq!(chain.steps.len(), 2);
    assert_eq!(chain.steps.iter().map(|s| s.m).collect::<Vec<_>>(), vec![2, 1]);
    assert_eq!(chain.final_speech().shape(), vec![33, 5]);
    assert_eq!(chain.steps[0].y_prev.shape(), vec![33, 8]);
}

#[test]
fn no_diffusion_runs_single_step() {
    let cfg = ModelConfig {
        diffusion: false,
        ..small(2)
    };
    let model = Sedm::new(cfg, 1).unwrap();
    assert_eq!(model.chain_len(), 1);
    let mag = random_grid(6, 33, 1, 0.5, 2.0);
    let noisy = MagPhase::new(mag.clone(), Grid::zeros(6, 33)).unwrap();
    let out = model.enhance(&noisy).unwrap();
    for (a, b) in out.mag.data.iter().zip(&mag.data) {
        assert!((a - b).abs() < 1e-5);
    }
}

#[test]
fn checkpoint_round_trip_and_crc() {
    let mut model = Sedm::new(small(2), 5).unwrap();
    set(&mut model, "mag.up1.speech.b", &vec![0.3; 33]);
    let bytes = checkpoint::to_bytes(&model);
    assert_eq!(&bytes[..4], b"SEDM");
    let loaded = checkpoint::from_bytes(&bytes).unwrap();
    assert_eq!(checkpoint::to_bytes(&loaded), bytes);
    let noisy = MagPhase::new(random_grid(9, 33, 1, 0.0, 2.0), random_grid(9, 33, 2, -3.0, 3.0)).unwrap();
    assert_eq!(model.enhance(&noisy).unwrap(), loaded.enhance(&noisy).unwrap());

    let mut bad = bytes.clone();
    bad[40] ^= 1;
    assert!(matches!(checkpoint::from_bytes(&bad), Err(Error::Crc { .. })));
    assert!(checkpoint::from_bytes(&bytes[..10]).is_err());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.sedm");
    checkpoint::save(&model, &path).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), bytes);
    assert_eq!(checkpoint::to_bytes(&checkpoint::load(&path).unwrap()), bytes);
}
