use facesr_core::image::test_card;
use facesr_core::meta::TrainState;
use facesr_core::harness::config::RunConfig;
use facesr_core::nets::{
    Checkpoint, DiscConfig, Discriminator, MaskMode, MaskNet, MaskNetConfig, Perceptual, SrNet, SrNetConfig,
};
use facesr_core::Image;
use facesr_grad::gradcheck::check_gradients;
use facesr_grad::{ParamSet, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(dims: [usize; 4], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::new(dims, (0..dims.iter().product()).map(|_| rng.random_range(0.0..1.0)).collect()).unwrap()
}

/// Every tensor redrawn, so zero-initialised heads do not hide gradients.
fn scrambled(p: &ParamSet, seed: u64) -> ParamSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let vals = p
        .values()
        .iter()
        .map(|t| Tensor::new(t.shape().clone(), (0..t.len()).map(|_| rng.random_range(-0.4..0.4)).collect()).unwrap())
        .collect();
    p.with_values(vals).unwrap()
}

#[test]
fn srnet_shape_and_determinism() {
    let net = SrNet::new(SrNetConfig::default()).unwrap();
    let p = net.init(1);
    let lr = Var::constant(random([1, 3, 16, 16], 2));
    let a = net.forward(&p.constants(), &lr).unwrap();
    assert_eq!(a.dims(), &[1, 3, 64, 64]);
    assert!(a.value().bit_eq(net.forward(&p.constants(), &lr).unwrap().value()));
    assert_eq!(p, net.init(1));
    assert_ne!(p, net.init(2));
}

#[test]
fn networks_pass_the_gradient_audit_on_8x8_inputs() {
    let sr = SrNet::new(SrNetConfig { width: 4, blocks: 1, scale: 2, tail_gain: 1.0 }).unwrap();
    let lr = Var::constant(random([1, 3, 4, 4], 1));
    let target = Var::constant(random([1, 3, 8, 8], 2));
    let r = check_gradients(
        |p| Ok(sr.forward(p, &lr).map_err(|e| facesr_grad::GradError::Shape(e.to_string()))?.sub(&target)?.square()?.sum()?),
        scrambled(&sr.init(3), 4).values(),
        1e-4,
    )
    .unwrap();
    assert!(r.rel_err < 1e-4, "srnet {r:?}");

    let mask = MaskNet::new(MaskNetConfig { mode: MaskMode::DegradedReference, width: 4, kernel: 3, layers: 3, scale: 2 }).unwrap();
    let bfr = Var::constant(random([1, 3, 8, 8], 5));
    let r = check_gradients(
        |p| Ok(mask.forward(p, Some(&lr), &bfr).map_err(|e| facesr_grad::GradError::Shape(e.to_string()))?.square()?.sum()?),
        scrambled(&mask.init(6), 7).values(),
        1e-4,
    )
    .unwrap();
    assert!(r.rel_err < 1e-4, "masknet {r:?}");

    let disc = Discriminator::new(DiscConfig { width: 4, depth: 2 }).unwrap();
    let r = check_gradients(
        |p| Ok(disc.forward(p, &target).map_err(|e| facesr_grad::GradError::Shape(e.to_string()))?.square()?.sum()?),
        scrambled(&disc.init(8), 9).values(),
        1e-4,
    )
    .unwrap();
    assert!(r.rel_err < 1e-4, "discriminator {r:?}");
}

#[test]
fn trained_looking_masks_stay_nonnegative_and_shaped() {
    for mode in [MaskMode::DegradedReference, MaskMode::NoReference] {
        let net = MaskNet::new(MaskNetConfig { mode, width: 6, kernel: 3, layers: 4, scale: 4 }).unwrap();
        let p = scrambled(&net.init(1), 2).constants();
        let lr = Var::constant(random([1, 3, 5, 6], 3));
        let bfr = Var::constant(random([1, 3, 20, 24], 4));
        let m = net.forward(&p, Some(&lr), &bfr).unwrap();
        assert_eq!(m.dims(), &[1, 1, 20, 24]);
        assert!(m.value().data().iter().all(|&v| v >= 0.0));
        if mode == MaskMode::NoReference {
            let other = Var::constant(random([1, 3, 5, 6], 99));
            assert!(m.value().bit_eq(net.forward(&p, Some(&other), &bfr).unwrap().value()));
            assert!(m.value().bit_eq(net.forward(&p, None, &bfr).unwrap().value()));
        }
    }
}

#[test]
fn discriminator_logits_shrink_by_the_stride_product() {
    let d = Discriminator::new(DiscConfig { width: 4, depth: 3 }).unwrap();
    let out = d.forward(&d.init(1).constants(), &Var::constant(random([2, 3, 32, 16], 1))).unwrap();
    assert_eq!(out.dims(), &[2, 1, 4, 2]);
    assert!(out.value().data().iter().all(|&v| v == 0.0));
}

#[test]
fn perceptual_distance_examples() {
    let p = Perceptual::new();
    let card = test_card();
    let gray = Image::filled(3, 64, 64, 0.5);
    assert_eq!(p.image_distance(&card, &card).unwrap(), 0.0);
    let ab = p.image_distance(&card, &gray).unwrap();
    assert!(ab > 0.0);
    assert_eq!(ab, p.image_distance(&gray, &card).unwrap());
    assert_eq!(Perceptual::new().params(), p.params());
}

#[test]
fn checkpoint_files_round_trip_bit_exactly() {
    let cfg = RunConfig::default();
    let models = cfg.models().unwrap();
    let state = TrainState::init(&models, 11);
    let ck = state.to_checkpoint(&cfg.to_toml().unwrap());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a.ckpt");
    ck.save(&path).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    let back = Checkpoint::load(&path).unwrap();
    assert_eq!(back.to_bytes(), bytes);
    assert_eq!(back.hash(), ck.hash());
    assert_eq!(RunConfig::from_toml(&back.config).unwrap(), cfg);
    assert_eq!(TrainState::from_checkpoint(&models, &back).unwrap(), state);
}
