use hybrid_avoid::depth_net::*;
use hybrid_avoid::nn::*;
use hybrid_avoid::perception::{DepthDataset, DepthMap, DepthUnits, Resolution, RgbImage};
use hybrid_avoid::seed;
use rand::Rng;

fn small_config() -> DepthNetConfig {
    DepthNetConfig { input_height: 32, input_width: 64, channel_divisor: 8, ..DepthNetConfig::default() }
}

fn random_image(h: usize, w: usize, rng: &mut seed::Rng) -> RgbImage {
    RgbImage { height: h, width: w, data: (0..h * w * 3).map(|_| rng.random::<f32>()).collect() }
}

#[test]
fn full_network_maps_frame_to_reduced_grid() {
    let net = DepthNet::new(DepthNetConfig::default(), 1).unwrap();
    let shapes: Vec<(usize, usize, usize, usize)> = net
        .params
        .layers()
        .iter()
        .map(|l| (l.kernel(), l.stride(), l.inputs(), l.outputs()))
        .collect();
    assert_eq!(
        shapes,
        vec![(5, 2, 3, 32), (5, 2, 32, 64), (3, 2, 64, 128), (3, 2, 128, 256), (3, 1, 256, 128), (3, 1, 128, 32), (3, 1, 32, 1)]
    );
    let img = random_image(144, 256, &mut seed::rng(2));
    let p = net.predict(&img).unwrap();
    assert_eq!((p.map.rows, p.map.cols), (9, 16));
    assert_eq!(p, net.predict(&img).unwrap());
    let wrong = random_image(72, 128, &mut seed::rng(2));
    assert!(matches!(net.predict(&wrong), Err(hybrid_avoid::Error::Config(_))));
}

#[test]
fn zero_parameters_give_zero_output() {
    let mut net = DepthNet::new(small_config(), 3).unwrap();
    for i in 0..net.params.len() {
        for t in net.params.layer_mut(i).tensors_mut() {
            t.fill(0.0);
        }
    }
    let img = random_image(32, 64, &mut seed::rng(4));
    assert!(net.predict(&img).unwrap().map.values.iter().all(|&v| v == 0.0));
}

#[test]
fn inference_is_independent_of_batch_order() {
    let mut net = DepthNet::new(small_config(), 5).unwrap();
    let mut rng = seed::rng(6);
    let xs: Vec<Vec<f64>> = (0..4).map(|_| random_image(32, 64, &mut rng).to_network_input()).collect();
    let ys: Vec<Vec<f64>> = (0..4).map(|_| vec![0.0; 8]).collect();
    let forward: Vec<Vec<f64>> = xs.iter().map(|x| net.forward(x).unwrap()).collect();
    let reversed: Vec<Vec<f64>> = xs.iter().rev().map(|x| net.forward(x).unwrap()).collect();
    assert_eq!(forward, reversed.into_iter().rev().collect::<Vec<_>>());
    let loss = LossSpec::Huber { delta: 1.0 };
    let a = net.batch_loss(&xs, &ys, loss, false).unwrap();
    let mut rx = xs.clone();
    rx.reverse();
    let b = net.batch_loss(&rx, &ys, loss, false).unwrap();
    assert!((a - b).abs() < 1e-15);
}

#[test]
fn huber_loss_closed_forms() {
    let t = DepthMap::filled(9, 16, 0.2, Resolution::Reduced, DepthUnits::Normalized);
    let mut p = t.clone();
    assert_eq!(huber_loss(&p, &t, 1.0).unwrap(), 0.0);
    p.values.iter_mut().for_each(|v| *v += 0.5);
    assert!((huber_loss(&p, &t, 1.0).unwrap() - 0.125).abs() < 1e-9);
    let p2 = DepthMap::filled(9, 16, 2.2, Resolution::Reduced, DepthUnits::Normalized);
    assert!((huber_loss(&p2, &t, 1.0).unwrap() - 1.5).abs() < 1e-9);
    let wrong = DepthMap::filled(8, 16, 0.0, Resolution::Reduced, DepthUnits::Normalized);
    assert!(huber_loss(&wrong, &t, 1.0).is_err());
}

#[test]
fn huber_bounds_relative_to_squared_error() {
    for k in 0..=400 {
        let e = -4.0 + k as f64 * 0.02;
        let h = huber(e, 1.0);
        if e.abs() <= 1.0 {
            assert!((h - 0.5 * e * e).abs() < 1e-15);
        } else {
            assert!(h < 0.5 * e * e);
            assert!((h - (e.abs() - 0.5)).abs() < 1e-12);
        }
    }
}

#[test]
fn metric_closed_forms() {
    let t: Vec<f64> = (0..144).map(|i| (i as f64 / 143.0) * 1.6 - 0.9).collect();
    let perfect = metrics_from_pairs(&[(t.clone(), t.clone()), (t.clone(), t.clone())], 1.0);
    assert_eq!((perfect.mae.mean, perfect.mse.mean, perfect.rmsle.mean, perfect.huber.mean), (0.0, 0.0, 0.0, 0.0));
    let shifted: Vec<f64> = t.iter().map(|v| v + 0.1).collect();
    let m = metrics_from_pairs(&[(shifted.clone(), t.clone())], 1.0);
    assert!((m.mae.mean - 0.1).abs() < 1e-9);
    assert!((m.mse.mean - 0.01).abs() < 1e-9);
    assert!((m.huber.mean - 0.005).abs() < 1e-9);
    let rmsle: f64 = (t.iter().zip(&shifted).map(|(y, p)| ((2.0 - p).ln() - (2.0 - y).ln()).powi(2)).sum::<f64>() / 144.0).sqrt();
    assert!((m.rmsle.mean - rmsle).abs() < 1e-12);
}

#[test]
fn standard_error_matches_definition() {
    let m = MeanSe::of(&[1.0, 2.0, 3.0, 4.0]);
    assert_eq!(m.mean, 2.5);
    assert!((m.se - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
}

#[test]
fn eighth_scale_network_passes_gradient_check() {
    let cfg = DepthNetConfig { input_height: 18, input_width: 32, channel_divisor: 8, ..DepthNetConfig::default() };
    let mut net = DepthNet::new(cfg, 7).unwrap();
    let mut rng = seed::rng(8);
    let xs: Vec<Vec<f64>> = (0..2).map(|_| random_image(18, 32, &mut rng).to_network_input()).collect();
    let ys: Vec<Vec<f64>> = (0..2).map(|_| (0..4).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let r = gradient_check_report(&mut net, &xs, &ys, LossSpec::Huber { delta: 1.0 }, GradCheckOptions::default()).unwrap();
    assert!(r.max_relative_error < 1e-3, "{r:?}");
    assert!(r.skipped_kinks * 100 <= r.checked, "{r:?}");
}

fn synthetic_dataset(n: usize, duplicate: bool) -> DepthDataset {
    let mut rng = seed::rng(11);
    let mut ds = DepthDataset::new(32, 64, 2, 4, 100.0, 11);
    let first = random_image(32, 64, &mut rng);
    for _ in 0..n {
        let img = if duplicate { first.clone() } else { random_image(32, 64, &mut rng) };
        // depth tied to mean brightness of each block
        let mut d = vec![0.0; 8];
        for (k, v) in d.iter_mut().enumerate() {
            let (br, bc) = (k / 4, k % 4);
            let mut s = 0.0;
            for r in br * 16..br * 16 + 16 {
                for c in bc * 16..bc * 16 + 16 {
                    s += img.pixel(r, c)[0] as f64;
                }
            }
            *v = ((s / 256.0) * 8.0 - 4.0).tanh();
        }
        let map = DepthMap::new(2, 4, d, Resolution::Reduced, DepthUnits::Normalized).unwrap();
        ds.push(&img, &map).unwrap();
    }
    ds
}

#[test]
fn zero_learning_rate_keeps_validation_constant() {
    let ds = synthetic_dataset(30, false);
    let mut net = DepthNet::new(small_config(), 12).unwrap();
    let sched = DepthSchedule {
        epochs: 3,
        batch_size: 8,
        optimizer: AdamConfig::with_learning_rate(0.0),
        seed: 1,
    };
    let log = train_depth(&ds, &mut net, &sched, |_| {}).unwrap();
    assert_eq!(log.epochs.len(), 3);
    assert!(log.epochs.windows(2).all(|w| w[0].val_huber == w[1].val_huber));
}

#[test]
fn duplicate_images_are_memorized() {
    let ds = synthetic_dataset(20, true);
    let mut net = DepthNet::new(small_config(), 13).unwrap();
    let sched = DepthSchedule {
        epochs: 60,
        batch_size: 6,
        optimizer: AdamConfig::with_learning_rate(1e-3),
        seed: 2,
    };
    let log = train_depth(&ds, &mut net, &sched, |_| {}).unwrap();
    let last = log.epochs.last().unwrap();
    assert!(last.train_huber < 1e-4, "train huber {}", last.train_huber);
    assert!(log.epochs[0].train_huber > 10.0 * last.train_huber);
}

#[test]
fn empty_dataset_is_rejected() {
    let ds = DepthDataset::new(32, 64, 2, 4, 100.0, 0);
    let mut net = DepthNet::new(small_config(), 1).unwrap();
    assert!(matches!(
        train_depth(&ds, &mut net, &DepthSchedule::default(), |_| {}),
        Err(hybrid_avoid::Error::Data(_))
    ));
}

#[test]
fn training_log_csv_has_header_and_rows() {
    let ds = synthetic_dataset(20, false);
    let mut net = DepthNet::new(small_config(), 14).unwrap();
    let sched = DepthSchedule { epochs: 2, batch_size: 8, ..DepthSchedule::default() };
    let log = train_depth(&ds, &mut net, &sched, |_| {}).unwrap();
    let path = std::env::temp_dir().join(format!("hav-depth-log-{}.csv", std::process::id()));
    log.write_csv(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "epoch,train_huber,val_huber,val_mae,val_mse,val_rmsle");
    assert_eq!(lines.len(), 3);
    std::fs::remove_file(path).unwrap();
}
