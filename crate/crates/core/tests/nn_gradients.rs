use rand::Rng;
use rand_chacha::ChaCha8Rng;
use ranksurge::nn::{
    seeded_rng, BatchNorm2d, ChannelAffine, Conv2d, GlobalAvgPool, Layer, LeakyRelu, Linear, MaxPool2d, Mode,
    PixelShuffle, ResidualBlock, Sequential, Tensor,
};

fn random_tensor(rng: &mut ChaCha8Rng, shape: [usize; 4]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect())
}

fn loss(layer: &mut dyn Layer<f64>, x: &Tensor<f64>, r: &Tensor<f64>, mode: Mode) -> f64 {
    let y = layer.forward(x, mode);
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / (a.abs() + b.abs()).max(1e-3)
}

/// Compares analytic input and parameter gradients against central differences.
fn check(name: &str, layer: &mut dyn Layer<f64>, shape: [usize; 4], mode: Mode) {
    let mut rng = seeded_rng(11, name);
    let x = random_tensor(&mut rng, shape);
    let y = layer.forward(&x, mode);
    let r = random_tensor(&mut rng, y.shape());
    for p in layer.params_mut() {
        p.zero_grad();
    }
    layer.forward(&x, mode);
    let dx = layer.backward(&r, true);
    assert_eq!(dx.shape(), x.shape(), "{name}: input gradient shape");
    let h = 1e-6;
    for i in (0..x.len()).step_by((x.len() / 25).max(1)) {
        let mut xp = x.clone();
        xp.data_mut()[i] += h;
        let mut xm = x.clone();
        xm.data_mut()[i] -= h;
        let num = (loss(layer, &xp, &r, mode) - loss(layer, &xm, &r, mode)) / (2.0 * h);
        assert!(rel_err(num, dx.data()[i]) < 1e-4, "{name}: dx[{i}] analytic {} numeric {num}", dx.data()[i]);
    }
    let grads: Vec<Vec<f64>> = layer.params().iter().map(|p| p.grad.clone()).collect();
    for (pi, g) in grads.iter().enumerate() {
        for j in (0..g.len()).step_by((g.len() / 10).max(1)) {
            let orig = layer.params()[pi].value[j];
            layer.params_mut()[pi].value[j] = orig + h;
            let lp = loss(layer, &x, &r, mode);
            layer.params_mut()[pi].value[j] = orig - h;
            let lm = loss(layer, &x, &r, mode);
            layer.params_mut()[pi].value[j] = orig;
            let num = (lp - lm) / (2.0 * h);
            assert!(rel_err(num, g[j]) < 1e-4, "{name}: param {pi}[{j}] analytic {} numeric {num}", g[j]);
        }
    }
}

fn conv(rng: &mut ChaCha8Rng, i: usize, o: usize, k: usize, s: usize, p: usize) -> Conv2d<f64> {
    let mut c = Conv2d::new(i, o, k, s, p).with_init(rng, 1.0);
    c.bias.value.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
    c
}

#[test]
fn conv_gradients() {
    let mut rng = seeded_rng(0, "conv");
    check("conv3", &mut conv(&mut rng, 3, 4, 3, 1, 1), [2, 3, 6, 5], Mode::Train);
    check("conv4s2", &mut conv(&mut rng, 2, 3, 4, 2, 1), [2, 2, 8, 6], Mode::Train);
    check("conv1", &mut conv(&mut rng, 3, 2, 1, 1, 0), [1, 3, 4, 4], Mode::Train);
}

#[test]
fn linear_gradients() {
    let mut rng = seeded_rng(0, "linear");
    check("linear", &mut Linear::new(12, 3).with_init(&mut rng, 1.0), [4, 3, 2, 2], Mode::Train);
}

#[test]
fn batchnorm_gradients() {
    let mut bn = BatchNorm2d::<f64>::new(3);
    bn.gamma.value = vec![0.5, 1.5, -1.0];
    bn.beta.value = vec![0.1, -0.2, 0.3];
    check("bn-train", &mut bn, [3, 3, 4, 4], Mode::Train);
    bn.running_mean = vec![0.1, 0.0, -0.2];
    bn.running_var = vec![0.5, 2.0, 1.0];
    check("bn-eval", &mut bn, [3, 3, 4, 4], Mode::Eval);
}

#[test]
fn elementwise_and_pooling_gradients() {
    check("lrelu", &mut LeakyRelu::new(0.2), [2, 3, 4, 4], Mode::Train);
    check("maxpool", &mut MaxPool2d::new(), [2, 2, 6, 4], Mode::Train);
    check("shuffle", &mut PixelShuffle::new(2), [2, 8, 3, 2], Mode::Train);
    check("gap", &mut GlobalAvgPool::new(), [2, 3, 4, 5], Mode::Train);
    check("affine", &mut ChannelAffine::new(vec![0.4, 0.5, 0.6], vec![0.2, 0.3, 0.25]), [2, 3, 3, 3], Mode::Train);
}

#[test]
fn composite_gradients() {
    let mut rng = seeded_rng(0, "composite");
    let mut body = Sequential::new();
    body.push(conv(&mut rng, 4, 4, 3, 1, 1)).push(LeakyRelu::relu()).push(conv(&mut rng, 4, 4, 3, 1, 1));
    let mut net = Sequential::new();
    net.push(conv(&mut rng, 3, 4, 3, 1, 1))
        .push(BatchNorm2d::new(4))
        .push(LeakyRelu::new(0.2))
        .push(ResidualBlock::new(body))
        .push(conv(&mut rng, 4, 4, 4, 2, 1))
        .push(GlobalAvgPool::new())
        .push(Linear::new(4, 1).with_init(&mut rng, 1.0));
    check("net", &mut net, [3, 3, 8, 8], Mode::Train);
}

#[test]
fn pixel_shuffle_layout() {
    let x = Tensor::<f64>::new([1, 4, 1, 1], vec![0.0, 1.0, 2.0, 3.0]);
    let y = PixelShuffle::new(2).forward(&x, Mode::Infer);
    assert_eq!(y.shape(), [1, 1, 2, 2]);
    assert_eq!(y.data(), &[0.0, 1.0, 2.0, 3.0]);
}

#[test]
fn conv_matches_direct_sum() {
    let mut rng = seeded_rng(1, "direct");
    let mut c = conv(&mut rng, 2, 3, 3, 2, 1);
    let x = random_tensor(&mut rng, [1, 2, 5, 6]);
    let y = c.forward(&x, Mode::Infer);
    let (oh, ow) = (y.height(), y.width());
    assert_eq!((oh, ow), (3, 3));
    for o in 0..3 {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = c.bias.value[o];
                for i in 0..2 {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let (iy, ix) = ((oy * 2 + ky) as isize - 1, (ox * 2 + kx) as isize - 1);
                            if iy >= 0 && iy < 5 && ix >= 0 && ix < 6 {
                                acc += c.weight.value[((o * 2 + i) * 3 + ky) * 3 + kx]
                                    * x.data()[(i * 5 + iy as usize) * 6 + ix as usize];
                            }
                        }
                    }
                }
                let got = y.data()[(o * oh + oy) * ow + ox];
                assert!((got - acc).abs() < 1e-12);
            }
        }
    }
}
