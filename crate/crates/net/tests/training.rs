use ndarray::Array3;
use pantcr_core::cloud::scene::generate_scene;
use pantcr_core::cloud::{make_sample, CloudSpec, Morphology};
use pantcr_core::{Error, MultiBandRaster};
use pantcr_net::checkpoint::load_checkpoint;
use pantcr_net::train::{
    evaluate, fit, l1_loss, EpochRecord, TrainConfig, TrainSample, BEST_DIR, LOG_FILE,
    NAN_SNAPSHOT_FILE,
};
use pantcr_net::{NetworkConfig, PanTcr};
use proptest::prelude::*;

fn samples(model: &PanTcr, n: usize) -> Vec<TrainSample> {
    let side = 16;
    let (hr, pan) = generate_scene(3, 2 * side, 2 * side).unwrap();
    (0..n)
        .map(|i| {
            let (y, x) = ((i / 2 % 2) * side, (i % 2) * side);
            let cloud = CloudSpec {
                seed: i as u64,
                morphology: Morphology::ALL[i % 4],
                thickness: 0.5,
            };
            let pair = make_sample(
                format!("s{i}"),
                &hr.crop(y, x, side, side).unwrap(),
                &pan.crop(y, x, side, side).unwrap(),
                &cloud,
                4,
            )
            .unwrap();
            TrainSample::new(model, &pair).unwrap()
        })
        .collect()
}

fn records(dir: &std::path::Path) -> Vec<EpochRecord> {
    std::fs::read_to_string(dir.join(LOG_FILE))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn one_epoch_persists_and_reloads() {
    let dir = tempfile::tempdir().unwrap();
    let mut model = PanTcr::new(NetworkConfig::tiny(), 5).unwrap();
    let set = samples(&model, 2);
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 2,
        ..TrainConfig::default()
    };
    let (best, summary) = fit(&mut model, &set, &set, &cfg, dir.path()).unwrap();
    let log = records(dir.path());
    assert_eq!(log.len(), 1);
    assert!(log[0].train_l1.is_finite() && log[0].train_l1 > 0.0);
    assert_eq!(summary.steps, 1);
    let reloaded = load_checkpoint(dir.path().join(BEST_DIR)).unwrap();
    let a = evaluate(&best, &set).unwrap();
    let b = evaluate(&reloaded, &set).unwrap();
    assert_eq!(a.0.to_bits(), b.0.to_bits());
    assert_eq!(a.1.to_bits(), b.1.to_bits());
    assert_eq!(a.0.to_bits(), log[0].val_psnr.to_bits());
}

#[test]
fn same_seed_gives_same_curve() {
    let run = || {
        let dir = tempfile::tempdir().unwrap();
        let mut model = PanTcr::new(NetworkConfig::tiny(), 9).unwrap();
        let set = samples(&model, 4);
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 2,
            seed: 9,
            ..TrainConfig::default()
        };
        fit(&mut model, &set, &set[..2], &cfg, dir.path()).unwrap();
        records(dir.path())
    };
    let (a, b) = (run(), run());
    assert_eq!(a.len(), 3);
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.train_l1, y.train_l1);
        assert_eq!(x.val_psnr, y.val_psnr);
        assert_eq!(x.lr, y.lr);
    }
}

#[test]
fn thread_count_does_not_change_gradients() {
    let model = PanTcr::new(NetworkConfig::tiny(), 2).unwrap();
    let set = samples(&model, 4);
    let batch: Vec<&TrainSample> = set.iter().collect();
    let serial = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap();
    let wide = rayon::ThreadPoolBuilder::new()
        .num_threads(4)
        .build()
        .unwrap();
    let a = serial.install(|| pantcr_net::train::batch_gradients(&model, &batch));
    let b = wide.install(|| pantcr_net::train::batch_gradients(&model, &batch));
    assert_eq!(a.0.to_bits(), b.0.to_bits());
    assert_eq!(a.1, b.1);
}

#[test]
fn nan_weights_abort_with_snapshot() {
    let dir = tempfile::tempdir().unwrap();
    let mut model = PanTcr::new(NetworkConfig::tiny(), 1).unwrap();
    let set = samples(&model, 2);
    let id = model.params().find("head.weight").unwrap();
    model.params_mut().get_mut(id).data[0] = f64::NAN;
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 2,
        ..TrainConfig::default()
    };
    let err = fit(&mut model, &set, &set, &cfg, dir.path()).unwrap_err();
    assert!(matches!(err, Error::Numeric(_)), "{err}");
    let snap: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join(NAN_SNAPSHOT_FILE)).unwrap())
            .unwrap();
    assert_eq!(snap["batch"].as_array().unwrap().len(), 2);
}

fn raster(data: Vec<f32>, h: usize, w: usize, c: usize) -> MultiBandRaster {
    let wl = (0..c).map(|i| 500.0 + 100.0 * i as f64).collect();
    MultiBandRaster::new(Array3::from_shape_vec((h, w, c), data).unwrap(), wl, 1.0).unwrap()
}

proptest! {
    #[test]
    fn l1_is_invariant_to_pixel_permutation(
        a in prop::collection::vec(0.0f32..1.0, 36),
        b in prop::collection::vec(0.0f32..1.0, 36),
        shift in 1usize..18,
    ) {
        // 18 pixels of 2 bands; rotate whole pixels, keeping band pairs intact.
        let rot = |v: &[f32]| {
            let mut px: Vec<&[f32]> = v.chunks(2).collect();
            px.rotate_left(shift);
            px.concat()
        };
        let base = l1_loss(&raster(a.clone(), 3, 6, 2), &raster(b.clone(), 3, 6, 2)).unwrap();
        let moved = l1_loss(&raster(rot(&a), 3, 6, 2), &raster(rot(&b), 3, 6, 2)).unwrap();
        prop_assert!((base - moved).abs() <= 1e-12 * base.max(1.0));
    }
}
