use hybrid_avoid::nn::*;
use hybrid_avoid::seed;
use proptest::prelude::*;
use rand::Rng;

fn conv_layer(weight: Tensor, bias: Tensor, stride: usize, act: Activation) -> Layer {
    Layer::from_parts(LayerKind::Conv2d { stride }, act, weight, bias, None).unwrap()
}

/// Direct nested-loop "same" convolution.
fn conv_oracle(input: &Tensor, w: &Tensor, b: &Tensor, stride: usize) -> Vec<f64> {
    let (h, wd, c) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (oc, k) = (w.shape()[0], w.shape()[1]);
    let oh = (h + stride - 1) / stride;
    let ow = (wd + stride - 1) / stride;
    let pad = |n: usize, o: usize| (((o - 1) * stride + k) as isize - n as isize).max(0) / 2;
    let (pt, pl) = (pad(h, oh), pad(wd, ow));
    let mut out = vec![0.0; oh * ow * oc];
    for oy in 0..oh {
        for ox in 0..ow {
            for o in 0..oc {
                let mut s = b.data()[o];
                for ky in 0..k {
                    for kx in 0..k {
                        let iy = (oy * stride + ky) as isize - pt;
                        let ix = (ox * stride + kx) as isize - pl;
                        if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                            continue;
                        }
                        for ci in 0..c {
                            let xv = input.data()[(iy as usize * wd + ix as usize) * c + ci];
                            let wv = w.data()[((o * k + ky) * k + kx) * c + ci];
                            s += xv * wv;
                        }
                    }
                }
                out[(oy * ow + ox) * oc + o] = s;
            }
        }
    }
    out
}

fn random_tensor(shape: &[usize], rng: &mut seed::Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

#[test]
fn zero_kernel_gives_zero_output() {
    let mut rng = seed::rng(1);
    let input = random_tensor(&[7, 5, 2], &mut rng);
    let layer = conv_layer(Tensor::zeros(&[3, 3, 3, 2]), Tensor::zeros(&[3]), 2, Activation::leaky());
    let y = conv2d_forward(&input, &layer).unwrap();
    assert_eq!(y.shape(), &[4, 3, 3]);
    assert!(y.data().iter().all(|&v| v == 0.0));
}

#[test]
fn unit_kernel_is_identity() {
    let mut rng = seed::rng(2);
    let input = random_tensor(&[6, 9, 1], &mut rng);
    let layer = conv_layer(Tensor::filled(&[1, 1, 1, 1], 1.0), Tensor::zeros(&[1]), 1, Activation::Identity);
    let y = conv2d_forward(&input, &layer).unwrap();
    assert_eq!(y, input);
}

#[test]
fn convolution_matches_nested_loop_oracle() {
    let mut rng = seed::rng(3);
    let input = random_tensor(&[6, 6, 1], &mut rng);
    let w = random_tensor(&[1, 3, 3, 1], &mut rng);
    let b = random_tensor(&[1], &mut rng);
    let y = conv2d_forward(&input, &conv_layer(w.clone(), b.clone(), 2, Activation::Identity)).unwrap();
    let want = conv_oracle(&input, &w, &b, 2);
    assert_eq!(y.shape(), &[3, 3, 1]);
    for (a, e) in y.data().iter().zip(&want) {
        assert!((a - e).abs() < 1e-9);
    }

    // multi-channel, odd sizes, 5×5 kernel
    let input = random_tensor(&[9, 11, 3], &mut rng);
    let w = random_tensor(&[4, 5, 5, 3], &mut rng);
    let b = random_tensor(&[4], &mut rng);
    let y = conv2d_forward(&input, &conv_layer(w.clone(), b.clone(), 2, Activation::Identity)).unwrap();
    for (a, e) in y.data().iter().zip(conv_oracle(&input, &w, &b, 2)) {
        assert!((a - e).abs() < 1e-9);
    }
}

#[test]
fn channel_mismatch_is_a_config_error() {
    let input = Tensor::zeros(&[4, 4, 2]);
    let layer = conv_layer(Tensor::zeros(&[1, 3, 3, 3]), Tensor::zeros(&[1]), 1, Activation::Identity);
    assert!(matches!(conv2d_forward(&input, &layer), Err(hybrid_avoid::Error::Config(_))));
}

#[test]
fn dense_examples() {
    let bias = Tensor::from_vec(vec![0.5, -1.0, 2.0]);
    let zero = Layer::from_parts(LayerKind::Dense, Activation::Identity, Tensor::zeros(&[3, 4]), bias.clone(), None)
        .unwrap();
    assert_eq!(dense_forward(&[1.0, 2.0, 3.0, 4.0], &zero, None).unwrap(), bias.data());

    let mut eye = Tensor::zeros(&[3, 3]);
    for i in 0..3 {
        eye.data_mut()[i * 3 + i] = 1.0;
    }
    let id = Layer::from_parts(LayerKind::Dense, Activation::Identity, eye, Tensor::zeros(&[3]), None).unwrap();
    assert_eq!(dense_forward(&[0.1, -7.0, 3.5], &id, None).unwrap(), vec![0.1, -7.0, 3.5]);

    assert!(matches!(dense_forward(&[1.0], &id, None), Err(hybrid_avoid::Error::Config(_))));
}

#[test]
fn noisy_layer_is_seed_deterministic_and_zero_noise_without_seed() {
    let mut rng = seed::rng(4);
    let noisy = Layer::noisy_dense(5, 3, Activation::Identity, &mut rng);
    let x = [0.3, -0.2, 0.9, 1.1, -0.5];
    let a = dense_forward(&x, &noisy, Some(17)).unwrap();
    let b = dense_forward(&x, &noisy, Some(17)).unwrap();
    let c = dense_forward(&x, &noisy, Some(18)).unwrap();
    assert_eq!(a, b);
    assert_ne!(a, c);

    let plain = Layer::from_parts(
        LayerKind::Dense,
        Activation::Identity,
        noisy.weight.clone(),
        noisy.bias.clone(),
        None,
    )
    .unwrap();
    assert_eq!(dense_forward(&x, &noisy, None).unwrap(), dense_forward(&x, &plain, None).unwrap());
}

#[test]
fn leaky_relu_examples() {
    assert_eq!(leaky_relu(5.0, DEFAULT_LEAKY_SLOPE), 5.0);
    assert_eq!(leaky_relu(0.0, DEFAULT_LEAKY_SLOPE), 0.0);
    assert!((leaky_relu(-2.0, DEFAULT_LEAKY_SLOPE) + 0.02).abs() < 1e-15);
    assert_eq!(Activation::leaky().apply(-2.0), leaky_relu(-2.0, 0.01));
}

fn regression_data(n: usize, seed_: u64) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut rng = seed::rng(seed_);
    let xs: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let ys = xs.iter().map(|x| 2.0 * x).collect::<Vec<_>>();
    (xs.into_iter().map(|x| vec![x]).collect(), ys.into_iter().map(|y| vec![y]).collect())
}

fn single_weight_model(w0: f64) -> Mlp {
    let layer = Layer::from_parts(
        LayerKind::Dense,
        Activation::Identity,
        Tensor::new(vec![1, 1], vec![w0]).unwrap(),
        Tensor::zeros(&[1]),
        None,
    )
    .unwrap();
    Mlp::from_params(NetworkParams::new(vec![layer]).unwrap())
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let (x, y) = regression_data(16, 5);
    let mut m = Mlp::new(&[1, 4, 1], Activation::leaky(), 9).unwrap();
    let before = m.params.flat();
    let opt = AdamConfig::with_learning_rate(0.0);
    let l1 = train_step(&mut m, &x, &y, LossSpec::SquaredTd, &opt).unwrap();
    let l2 = train_step(&mut m, &x, &y, LossSpec::SquaredTd, &opt).unwrap();
    assert_eq!(before, m.params.flat());
    assert!(l1 > 0.0);
    assert_eq!(l1, l2);
}

#[test]
fn linear_regression_converges_to_least_squares_slope() {
    let (x, y) = regression_data(64, 6);
    // closed-form least squares through the origin
    let sxy: f64 = x.iter().zip(&y).map(|(a, b)| a[0] * b[0]).sum();
    let sxx: f64 = x.iter().map(|a| a[0] * a[0]).sum();
    let oracle = sxy / sxx;
    assert!((oracle - 2.0).abs() < 1e-12);

    let mut m = single_weight_model(0.0);
    let opt = AdamConfig::with_learning_rate(0.01);
    let losses: Vec<f64> = (0..500)
        .map(|_| train_step(&mut m, &x, &y, LossSpec::SquaredTd, &opt).unwrap())
        .collect();
    for w in losses[10..].windows(2) {
        assert!(w[1] <= w[0], "loss rose: {} -> {}", w[0], w[1]);
    }
    let slope = m.params.layer(0).weight.data()[0];
    assert!((slope - oracle).abs() < 0.05, "slope {slope}");
}

#[test]
fn training_is_deterministic() {
    let (x, y) = regression_data(32, 7);
    let run = || {
        let mut m = Mlp::new(&[1, 8, 8, 1], Activation::leaky(), 11).unwrap();
        let opt = AdamConfig::with_learning_rate(1e-3);
        for _ in 0..20 {
            train_step(&mut m, &x, &y, LossSpec::Huber { delta: 1.0 }, &opt).unwrap();
        }
        m.params.flat()
    };
    assert_eq!(run(), run());
}

#[test]
fn non_finite_loss_reports_batch_index() {
    let mut m = single_weight_model(0.0);
    let x = vec![vec![f64::NAN]];
    let y = vec![vec![1.0]];
    let err = train_step(&mut m, &x, &y, LossSpec::SquaredTd, &AdamConfig::default()).unwrap_err();
    assert!(matches!(err, hybrid_avoid::Error::NonFiniteLoss { batch: 0 }));
}

#[test]
fn dense_network_gradients_match_finite_differences() {
    let mut m = Mlp::new(&[6, 10, 8, 3], Activation::leaky(), 21).unwrap();
    let mut rng = seed::rng(22);
    let x: Vec<Vec<f64>> = (0..3).map(|_| (0..6).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
    let y: Vec<Vec<f64>> = (0..3).map(|_| (0..3).map(|_| rng.random_range(-2.0..2.0)).collect()).collect();
    let err = gradient_check(&mut m, &x, &y, LossSpec::Huber { delta: 1.0 }, GradCheckOptions::default()).unwrap();
    assert!(err < 1e-4, "relative error {err}");
}

#[test]
fn zero_network_has_zero_gradients() {
    let layers = vec![
        Layer::from_parts(LayerKind::Dense, Activation::leaky(), Tensor::zeros(&[4, 3]), Tensor::zeros(&[4]), None)
            .unwrap(),
        Layer::from_parts(LayerKind::Dense, Activation::Identity, Tensor::zeros(&[2, 4]), Tensor::zeros(&[2]), None)
            .unwrap(),
    ];
    let mut m = Mlp::from_params(NetworkParams::new(layers).unwrap());
    let x = vec![vec![0.0; 3]];
    let y = vec![vec![0.0; 2]];
    let err = gradient_check(&mut m, &x, &y, LossSpec::Huber { delta: 1.0 }, GradCheckOptions::default()).unwrap();
    assert_eq!(err, 0.0);
    m.params.zero_grads();
    m.batch_loss(&x, &y, LossSpec::Huber { delta: 1.0 }, true).unwrap();
    assert!(m.params.grads().iter().flatten().all(|t| t.data().iter().all(|&g| g == 0.0)));
}

#[test]
fn checkpoint_round_trip_is_bit_identical() {
    let mut rng = seed::rng(30);
    let layers = vec![
        Layer::conv2d(3, 4, 3, 2, Activation::leaky(), &mut rng),
        Layer::dense(8, 5, Activation::Relu, &mut rng),
        Layer::noisy_dense(5, 2, Activation::Identity, &mut rng),
    ];
    let params = NetworkParams::new(layers).unwrap();
    let dir = tempdir();
    let path = dir.join("net.ckpt");
    params.save(&path).unwrap();
    let loaded = NetworkParams::load(&path).unwrap();
    assert_eq!(params.flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
               loaded.flat().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    assert_eq!(params, loaded);
    let x = [0.1, 0.2, -0.3, 0.4, 0.5];
    assert_eq!(
        dense_forward(&x, params.layer(2), Some(3)).unwrap(),
        dense_forward(&x, loaded.layer(2), Some(3)).unwrap()
    );
    assert!(NetworkParams::from_bytes(b"garbage").is_err());
    assert!(matches!(
        NetworkParams::load(&dir.join("missing.ckpt")),
        Err(hybrid_avoid::Error::MissingArtifact(_))
    ));
}

fn tempdir() -> std::path::PathBuf {
    let d = std::env::temp_dir().join(format!("hav-nn-{}", std::process::id()));
    std::fs::create_dir_all(&d).unwrap();
    d
}

#[test]
fn conv_extent_is_ceil_division_for_all_sizes() {
    let mut rng = seed::rng(40);
    for stride in 1..=3 {
        let layer = Layer::conv2d(1, 1, 3, stride, Activation::Identity, &mut rng);
        for n in 1..=256 {
            assert_eq!(conv_out_extent(n, stride), n.div_ceil(stride));
            if n % 17 == 0 || n <= 8 {
                let y = conv2d_forward(&Tensor::zeros(&[n, 2, 1]), &layer).unwrap();
                assert_eq!(y.shape()[0], n.div_ceil(stride));
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn random_mlps_pass_gradient_check(
        widths in proptest::collection::vec(1usize..12, 2..5),
        batch in 1usize..4,
        seed_ in any::<u64>(),
    ) {
        let mut m = Mlp::new(&widths, Activation::leaky(), seed_).unwrap();
        prop_assume!(m.params.parameter_count() < 5000);
        let mut rng = seed::rng(seed_ ^ 1);
        let x: Vec<Vec<f64>> = (0..batch).map(|_| (0..widths[0]).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let y: Vec<Vec<f64>> = (0..batch).map(|_| (0..*widths.last().unwrap()).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let err = gradient_check(&mut m, &x, &y, LossSpec::SquaredTd, GradCheckOptions::default()).unwrap();
        prop_assert!(err < 1e-3, "relative error {}", err);
    }

    #[test]
    fn noisy_forward_is_reproducible(seed_ in any::<u64>(), noise in any::<u64>()) {
        let mut rng = seed::rng(seed_);
        let layer = Layer::noisy_dense(4, 3, Activation::Relu, &mut rng);
        let x = [0.5, -0.1, 0.25, 1.0];
        let a = dense_forward(&x, &layer, Some(noise)).unwrap();
        let b = dense_forward(&x, &layer, Some(noise)).unwrap();
        prop_assert_eq!(a.iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }
}
