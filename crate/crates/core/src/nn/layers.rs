use super::{Mode, Param, Scalar, Tensor};

pub trait Layer<T: Scalar>: Send + Sync {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Tensor<T>;

    /// Gradient w.r.t. the input of the most recent caching forward pass.
    /// Parameter gradients are accumulated only when `param_grads` is set.
    fn backward(&mut self, grad: &Tensor<T>, param_grads: bool) -> Tensor<T>;

    fn params(&self) -> Vec<&Param<T>> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        Vec::new()
    }

    /// Non-trainable state (normalization running statistics).
    fn buffers(&self) -> Vec<&[T]> {
        Vec::new()
    }

    fn buffers_mut(&mut self) -> Vec<&mut [T]> {
        Vec::new()
    }

    fn box_clone(&self) -> Box<dyn Layer<T>>;

    /// Drops cached activations.
    fn clear_cache(&mut self) {}
}

impl<T: Scalar> Clone for Box<dyn Layer<T>> {
    fn clone(&self) -> Self {
        self.box_clone()
    }
}

#[derive(Clone)]
pub struct Conv2d<T: Scalar> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// `[out, in * k * k]`
    pub weight: Param<T>,
    pub bias: Param<T>,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        let k = in_channels * kernel * kernel;
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weight: Param::new(vec![T::zero(); out_channels * k]),
            bias: Param::new(vec![T::zero(); out_channels]),
            input: None,
        }
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel * self.kernel
    }

    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let oh = (h + 2 * self.padding).saturating_sub(self.kernel) / self.stride + 1;
        let ow = (w + 2 * self.padding).saturating_sub(self.kernel) / self.stride + 1;
        if h + 2 * self.padding < self.kernel || w + 2 * self.padding < self.kernel {
            (0, 0)
        } else {
            (oh, ow)
        }
    }

    /// Output columns `ox` whose input column `ox * stride + kx - padding` lies inside `[0, w)`.
    fn valid_cols(&self, kx: usize, w: usize, ow: usize) -> (usize, usize) {
        let (s, p) = (self.stride, self.padding);
        let lo = if kx >= p { 0 } else { (p - kx).div_ceil(s) };
        let hi = if w + p > kx { ((w + p - kx - 1) / s + 1).min(ow) } else { 0 };
        (lo.min(hi), hi)
    }

    fn im2col(&self, x: &[T], h: usize, w: usize, oh: usize, ow: usize, col: &mut [T]) {
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        let l = oh * ow;
        for c in 0..self.in_channels {
            let plane = &x[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let (lo, hi) = self.valid_cols(kx, w, ow);
                    let row = &mut col[((c * k + ky) * k + kx) * l..][..l];
                    for oy in 0..oh {
                        let dst = &mut row[oy * ow..(oy + 1) * ow];
                        let iy = (oy * s + ky).wrapping_sub(p);
                        if iy >= h || lo == hi {
                            dst.fill(T::zero());
                            continue;
                        }
                        dst[..lo].fill(T::zero());
                        dst[hi..].fill(T::zero());
                        let src = &plane[iy * w..(iy + 1) * w];
                        let first = lo * s + kx - p;
                        if s == 1 {
                            dst[lo..hi].copy_from_slice(&src[first..first + hi - lo]);
                        } else {
                            for (j, d) in dst[lo..hi].iter_mut().enumerate() {
                                *d = src[first + j * s];
                            }
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, col: &[T], h: usize, w: usize, oh: usize, ow: usize, dx: &mut [T]) {
        let (k, s, p) = (self.kernel, self.stride, self.padding);
        let l = oh * ow;
        for c in 0..self.in_channels {
            let plane = &mut dx[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let (lo, hi) = self.valid_cols(kx, w, ow);
                    if lo == hi {
                        continue;
                    }
                    let row = &col[((c * k + ky) * k + kx) * l..][..l];
                    for oy in 0..oh {
                        let iy = (oy * s + ky).wrapping_sub(p);
                        if iy >= h {
                            continue;
                        }
                        let dst = &mut plane[iy * w..(iy + 1) * w];
                        let src = &row[oy * ow + lo..oy * ow + hi];
                        let first = lo * s + kx - p;
                        if s == 1 {
                            for (d, &g) in dst[first..first + hi - lo].iter_mut().zip(src) {
                                *d = *d + g;
                            }
                        } else {
                            for (j, &g) in src.iter().enumerate() {
                                dst[first + j * s] = dst[first + j * s] + g;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Writes the `cols x rows` transpose of row-major `src` into `dst`.
fn transpose<T: Copy>(src: &[T], rows: usize, cols: usize, dst: &mut [T]) {
    const B: usize = 32;
    for r0 in (0..rows).step_by(B) {
        for c0 in (0..cols).step_by(B) {
            for r in r0..(r0 + B).min(rows) {
                for c in c0..(c0 + B).min(cols) {
                    dst[c * rows + r] = src[r * cols + c];
                }
            }
        }
    }
}

impl<T: Scalar> Layer<T> for Conv2d<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Tensor<T> {
        let [n, c, h, w] = x.shape();
        assert_eq!(c, self.in_channels, "conv input channels");
        let (oh, ow) = self.output_hw(h, w);
        assert!(oh > 0 && ow > 0, "conv input {h}x{w} smaller than kernel {}", self.kernel);
        let (kk, l) = (self.fan_in(), oh * ow);
        let mut col = vec![T::zero(); kk * l];
        let mut out = Tensor::zeros([n, self.out_channels, oh, ow]);
        for i in 0..n {
            self.im2col(x.item(i), h, w, oh, ow, &mut col);
            let y = out.item_mut(i);
            for (o, row) in y.chunks_exact_mut(l).enumerate() {
                row.iter_mut().for_each(|v| *v = self.bias.value[o]);
            }
            T::gemm(self.out_channels, kk, l, T::one(), &self.weight.value, (kk as isize, 1), &col, (l as isize, 1), T::one(), y, l as isize);
        }
        self.input = mode.caches().then(|| x.clone());
        out
    }

    fn backward(&mut self, grad: &Tensor<T>, param_grads: bool) -> Tensor<T> {
        let x = self.input.as_ref().expect("conv backward without cached forward");
        let [n, _, h, w] = x.shape();
        let (oh, ow) = (grad.height(), grad.width());
        let (kk, l) = (self.fan_in(), oh * ow);
        let mut col = vec![T::zero(); kk * l];
        let mut col_t = vec![T::zero(); kk * l];
        let mut dcol = vec![T::zero(); kk * l];
        let mut dx = Tensor::zeros(x.shape());
        for i in 0..n {
            let dy = grad.item(i);
            if param_grads {
                self.im2col(x.item(i), h, w, oh, ow, &mut col);
                // gemm packs a long strided operand slowly, so transpose explicitly.
                transpose(&col, kk, l, &mut col_t);
                T::gemm(self.out_channels, l, kk, T::one(), dy, (l as isize, 1), &col_t, (kk as isize, 1), T::one(), &mut self.weight.grad, kk as isize);
                for (o, row) in dy.chunks_exact(l).enumerate() {
                    self.bias.grad[o] = self.bias.grad[o] + row.iter().copied().sum::<T>();
                }
            }
            T::gemm(kk, self.out_channels, l, T::one(), &self.weight.value, (1, kk as isize), dy, (l as isize, 1), T::zero(), &mut dcol, l as isize);
            self.col2im(&dcol, h, w, oh, ow, dx.item_mut(i));
        }
        dx
    }

    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bias]
    }

    fn box_clone(&self) -> Box<dyn Layer<T>> {
        Box::new(self.clone())
    }

    fn clear_cache(&mut self) {
        self.input = None;
    }
}

#[derive(Clone)]
pub struct Linear<T: Scalar> {
    pub in_features: usize,
    pub out_features: usize,
    /// `[out, in]`
    pub weight: Param<T>,
    pub bias: Param<T>,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(in_features: usize, out_features: usize) -> Self {
        Self {
            in_features,
            out_features,
            weight: Param::new(vec![T::zero(); in_features * out_features]),
            bias: Param::new(vec![T::zero(); out_features]),
            input: None,
        }
    }
}

impl<T: Scalar> Layer<T> for Linear<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Tensor<T> {
        let n = x.batch();
        let (fi, fo) = (self.in_features, self.out_features);
        assert_eq!(x.item_len(), fi, "linear input features");
        let mut out = Tensor::zeros([n, fo, 1, 1]);
        for i in 0..n {
            out.item_mut(i).copy_from_slice(&self.bias.value);
        }
        T::gemm(n, fi, fo, T::one(), x.data(), (fi as isize, 1), &self.weight.value, (1, fi as isize), T::one(), out.data_mut(), fo as isize);
        self.input = mode.caches().then(|| x.clone());
        out
    }

    fn backward(&mut self, grad: &Tensor<T>, param_grads: bool) -> Tensor<T> {
        let x = self.input.as_ref().expect("linear backward without cached forward");
        let n = x.batch();
        let (fi, fo) = (self.in_features, self.out_features);
        if param_grads {
            T::gemm(fo, n, fi, T::one(), grad.data(), (1, fo as isize), x.data(), (fi as isize, 1), T::one(), &mut self.weight.grad, fi as isize);
            for i in 0..n {
                for (b, &g) in self.bias.grad.iter_mut().zip(grad.item(i)) {
                    *b = *b + g;
                }
            }
        }
        let mut dx = Tensor::zeros(x.shape());
        T::gemm(n, fo, fi, T::one(), grad.data(), (fo as isize, 1), &self.weight.value, (fi as isize, 1), T::zero(), dx.data_mut(), fi as isize);
        dx
    }

    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bias]
    }

    fn box_clone(&self) -> Box<dyn Layer<T>> {
        Box::new(self.clone())
    }

    fn clear_cache(&mut self) {
        self.input = None;
    }
}

#[derive(Clone)]
struct BnCache<T: Scalar> {
    xhat: Tensor<T>,
    inv_std: Vec<T>,
    batch_stats: bool,
}

/// Per-channel batch normalization (momentum 0.1, eps 1e-5).
#[derive(Clone)]
pub struct BatchNorm2d<T: Scalar> {
    pub channels: usize,
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: f64,
    pub eps: f64,
    cache: Option<BnCache<T>>,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            gamma: Param::new(vec![T::one(); channels]),
            beta: Param::new(vec![T::zero(); channels]),
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            momentum: 0.1,
            eps: 1e-5,
            cache: None,
        }
    }
}

impl<T: Scalar> Layer<T> for BatchNorm2d<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Tensor<T> {
        let [n, c, h, w] = x.shape();
        assert_eq!(c, self.channels, "batchnorm channels");
        let hw = h * w;
        let m = n * hw;
        let eps = T::c(self.eps);
        let (mean, var) = if mode == Mode::Train {
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            for ch in 0..c {
                let mut s = 0.0f64;
                for i in 0..n {
                    s += x.item(i)[ch * hw..(ch + 1) * hw].iter().map(|v| v.to_f64().unwrap()).sum::<f64>();
                }
                let mu = s / m as f64;
                let mut q = 0.0f64;
                for i in 0..n {
                    q += x.item(i)[ch * hw..(ch + 1) * hw].iter().map(|v| (v.to_f64().unwrap() - mu).powi(2)).sum::<f64>();
                }
                let biased = q / m as f64;
                let unbiased = if m > 1 { q / (m - 1) as f64 } else { biased };
                mean[ch] = T::c(mu);
                var[ch] = T::c(biased);
                let mom = self.momentum;
                self.running_mean[ch] = T::c((1.0 - mom) * self.running_mean[ch].to_f64().unwrap() + mom * mu);
                self.running_var[ch] = T::c((1.0 - mom) * self.running_var[ch].to_f64().unwrap() + mom * unbiased);
            }
            (mean, var)
        } else {
            (self.running_mean.clone(), self.running_var.clone())
        };
        let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut xhat = Tensor::zeros(x.shape());
        let mut out = Tensor::zeros(x.shape());
        for i in 0..n {
            let (src, xh) = (x.item(i), xhat.item_mut(i));
            for ch in 0..c {
                for j in ch * hw..(ch + 1) * hw {
                    xh[j] = (src[j] - mean[ch]) * inv_std[ch];
                }
            }
            let (xh, y) = (xhat.item(i), out.item_mut(i));
            for ch in 0..c {
                let (g, b) = (self.gamma.value[ch], self.beta.value[ch]);
                for j in ch * hw..(ch + 1) * hw {
                    y[j] = g * xh[j] + b;
                }
            }
        }
        self.cache = mode.caches().then(|| BnCache { xhat, inv_std, batch_stats: mode == Mode::Train });
        out
    }

    fn backward(&mut self, grad: &Tensor<T>, param_grads: bool) -> Tensor<T> {
        let cache = self.cache.as_ref().expect("batchnorm backward without cached forward");
        let [n, c, h, w] = grad.shape();
        let hw = h * w;
        let m = T::from_usize(n * hw).unwrap();
        let mut dx = Tensor::zeros(grad.shape());
        for ch in 0..c {
            let (mut sum_dy, mut sum_dy_xhat) = (T::zero(), T::zero());
            for i in 0..n {
                let (dy, xh) = (&grad.item(i)[ch * hw..(ch + 1) * hw], &cache.xhat.item(i)[ch * hw..(ch + 1) * hw]);
                for (&g, &x) in dy.iter().zip(xh) {
                    sum_dy = sum_dy + g;
                    sum_dy_xhat = sum_dy_xhat + g * x;
                }
            }
            if param_grads {
                self.gamma.grad[ch] = self.gamma.grad[ch] + sum_dy_xhat;
                self.beta.grad[ch] = self.beta.grad[ch] + sum_dy;
            }
            let g = self.gamma.value[ch];
            let inv = cache.inv_std[ch];
            for i in 0..n {
                let off = ch * hw;
                let dy = &grad.item(i)[off..off + hw];
                let xh = &cache.xhat.item(i)[off..off + hw];
                let out = &mut dx.item_mut(i)[off..off + hw];
                if cache.batch_stats {
                    let k = g * inv / m;
                    for j in 0..hw {
                        out[j] = k * (m * dy[j] - sum_dy - xh[j] * sum_dy_xhat);
                    }
                } else {
                    for j in 0..hw {
                        out[j] = g * inv * dy[j];
                    }
                }
            }
        }
        dx
    }

    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.gamma, &self.beta]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.gamma, &mut self.beta]
    }

    fn buffers(&self) -> Vec<&[T]> {
        vec![&self.running_mean, &self.running_var]
    }

    fn buffers_mut(&mut self) -> Vec<&mut [T]> {
        vec![&mut self.running_mean, &mut self.running_var]
    }

    fn box_clone(&self) -> Box<dyn Layer<T>> {
        Box::new(self.clone())
    }

    fn clear_cache(&mut self) {
        self.cache = None;
    }
}

/// Leaky rectifier; slope 0 gives a plain ReLU.
#[derive(Clone)]
pub struct LeakyRelu {
    pub slope: f64,
    mask: Option<Vec<bool>>,
}

impl LeakyRelu {
    pub fn new(slope: f64) -> Self {
        Self { slope, mask: None }
    }

    pub fn relu() -> Self {
        Self::new(0.0)
    }
}

impl<T: Scalar> Layer<T> for LeakyRelu {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Tensor<T> {
        let s = T::c(self.slope);
        if mode.caches() {
            self.mask = Some(x.data().iter().map(|&v| v > T::zero()).collect());
        }
        x.map(|v| if v > T::zero() { v } else { v * s })
    }

    fn backward(&mut self, grad: &Tensor<T>, _param_grads: bool) -> Tensor<T> {
        let mask = self.mask.as_ref().expect("activation backward without cached forward");
        let s = T::c(self.slope);
        let data = grad.data().iter().zip(mask).map(|(&g, &pos)| if pos { g } else { g * s }).collect();
        Tensor::new(grad.shape(), data)
    }

    fn box_clone(&self) -> Box<dyn Layer<T>> {
        Box::new(self.clone())
    }

    fn clear_cache(&mut self) {
        self.mask = None;
    }
}

/// 2x2 max pooling with stride 2 (odd trailing rows/columns are dropped).
#[derive(Clone, Default)]
pub struct MaxPool2d {
    cache: Option<([usize; 4], Vec<usize>)>,
}

impl MaxPool2d {
    pub fn new() -> Self {
        Self::default()
    }
}

impl<T: Scalar> Layer<T> for MaxPool2d {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Tensor<T> {
        let [n, c, h, w] = x.shape();
        let (oh, ow) = (h / 2, w / 2);
        let mut out = Tensor::zeros([n, c, oh, ow]);
        let mut arg = Vec::with_capacity(n * c * oh * ow);
        let src = x.data();
        for nc in 0..n * c {
            let base = nc * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + 2 * oy * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let j = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if src[j] > src[best] {
                            best = j;
                        }
                    }
                    out.data_mut()[(nc * oh + oy) * ow + ox] = src[best];
                    arg.push(best);
                }
            }
        }
        self.cache = mode.caches().then_some((x.shape(), arg));
        out
    }

    fn backward(&mut self, grad: &Tensor<T>, _param_grads: bool) -> Tensor<T> {
        let (shape, arg) = self.cache.as_ref().expect("maxpool backward without cached forward");
        let mut dx = Tensor::zeros(*shape);
        for (&j, &g) in arg.iter().zip(grad.data()) {
            dx.data_mut()[j] = dx.data()[j] + g;
        }
        dx
    }

    fn box_clone(&self) -> Box<dyn Layer<T>> {
        Box::new(self.clone())
    }

    fn clear_cache(&mut self) {
        self.cache = None;
    }
}

/// Rearranges `[n, c r^2, h, w]` into `[n, c, h r, w r]`.
#[derive(Clone)]
pub struct PixelShuffle {
    pub factor: usize,
}

impl PixelShuffle {
    pub fn new(factor: usize) -> Self {
        Self { factor }
    }

    fn out_index(&self, shape: [usize; 4], n: usize, ci: usize, y: usize, x: usize) -> usize {
        let [_, c, h, w] = shape;
        let r = self.factor;
        let co = ci / (r * r);
        let (i, j) = ((ci % (r * r)) / r, ci % r);
        let (oc, oh, ow) = (c / (r * r), h * r, w * r);
        ((n * oc + co) * oh + y * r + i) * ow + x * r + j
    }
}

impl<T: Scalar> Layer<T> for PixelShuffle {
    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Tensor<T> {
        let shape = x.shape();
        let [n, c, h, w] = shape;
        let r = self.factor;
        assert_eq!(c % (r * r), 0, "pixel shuffle channels");
        let mut out = Tensor::zeros([n, c / (r * r), h * r, w * r]);
        let mut src = 0;
        for b in 0..n {
            for ci in 0..c {
                for y in 0..h {
                    for xx in 0..w {
                        out.data_mut()[self.out_index(shape, b, ci, y, xx)] = x.data()[src];
                        src += 1;
                    }
                }
            }
        }
        out
    }

    fn backward(&mut self, grad: &Tensor<T>, _param_grads: bool) -> Tensor<T> {
        let [n, oc, oh, ow] = grad.shape();
        let r = self.factor;
        let shape = [n, oc * r * r, oh / r, ow / r];
        let mut dx = Tensor::zeros(shape);
        let mut dst = 0;
        for b in 0..n {
            for ci in 0..shape[1] {
                for y in 0..shape[2] {
                    for xx in 0..shape[3] {
                        dx.data_mut()[dst] = grad.data()[self.out_index(shape, b, ci, y, xx)];
                        dst += 1;
                    }
                }
            }
        }
        dx
    }

    fn box_clone(&self) -> Box<dyn Layer<T>> {
        Box::new(self.clone())
    }
}

/// Mean over spatial positions: `[n, c, h, w]` to `[n, c, 1, 1]`.
#[derive(Clone, Default)]
pub struct GlobalAvgPool {
    shape: Option<[usize; 4]>,
}

impl GlobalAvgPool {
    pub fn new() -> Self {
        Self::default()
    }
}

impl<T: Scalar> Layer<T> for GlobalAvgPool {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Tensor<T> {
        let [n, c, h, w] = x.shape();
        let hw = h * w;
        let inv = T::one() / T::from_usize(hw).unwrap();
        let data = x.data().chunks_exact(hw).map(|p| p.iter().copied().sum::<T>() * inv).collect();
        self.shape = mode.caches().then_some(x.shape());
        Tensor::new([n, c, 1, 1], data)
    }

    fn backward(&mut self, grad: &Tensor<T>, _param_grads: bool) -> Tensor<T> {
        let shape = self.shape.expect("pool backward without cached forward");
        let hw = shape[2] * shape[3];
        let inv = T::one() / T::from_usize(hw).unwrap();
        let data = grad.data().iter().flat_map(|&g| std::iter::repeat_n(g * inv, hw)).collect();
        Tensor::new(shape, data)
    }

    fn box_clone(&self) -> Box<dyn Layer<T>> {
        Box::new(self.clone())
    }

    fn clear_cache(&mut self) {
        self.shape = None;
    }
}

/// Fixed per-channel `(x - mean) / std`.
#[derive(Clone)]
pub struct ChannelAffine {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ChannelAffine {
    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Self {
        assert_eq!(mean.len(), std.len());
        Self { mean, std }
    }
}

impl<T: Scalar> Layer<T> for ChannelAffine {
    fn forward(&mut self, x: &Tensor<T>, _mode: Mode) -> Tensor<T> {
        let [n, c, h, w] = x.shape();
        assert_eq!(c, self.mean.len(), "affine channels");
        let hw = h * w;
        let mut out = x.clone();
        for i in 0..n {
            for (ch, plane) in out.item_mut(i).chunks_exact_mut(hw).enumerate() {
                let (m, s) = (T::c(self.mean[ch]), T::c(1.0 / self.std[ch]));
                plane.iter_mut().for_each(|v| *v = (*v - m) * s);
            }
        }
        out
    }

    fn backward(&mut self, grad: &Tensor<T>, _param_grads: bool) -> Tensor<T> {
        let hw = grad.height() * grad.width();
        let mut dx = grad.clone();
        for i in 0..grad.batch() {
            for (ch, plane) in dx.item_mut(i).chunks_exact_mut(hw).enumerate() {
                let s = T::c(1.0 / self.std[ch]);
                plane.iter_mut().for_each(|v| *v = *v * s);
            }
        }
        dx
    }

    fn box_clone(&self) -> Box<dyn Layer<T>> {
        Box::new(self.clone())
    }
}

#[derive(Clone, Default)]
pub struct Sequential<T: Scalar> {
    pub layers: Vec<Box<dyn Layer<T>>>,
}

impl<T: Scalar> Sequential<T> {
    pub fn new() -> Self {
        Self { layers: Vec::new() }
    }

    pub fn push(&mut self, layer: impl Layer<T> + 'static) -> &mut Self {
        self.layers.push(Box::new(layer));
        self
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }
}

impl<T: Scalar> Layer<T> for Sequential<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Tensor<T> {
        let mut cur = x.clone();
        for l in &mut self.layers {
            cur = l.forward(&cur, mode);
        }
        cur
    }

    fn backward(&mut self, grad: &Tensor<T>, param_grads: bool) -> Tensor<T> {
        let mut g = grad.clone();
        for l in self.layers.iter_mut().rev() {
            g = l.backward(&g, param_grads);
        }
        g
    }

    fn params(&self) -> Vec<&Param<T>> {
        self.layers.iter().flat_map(|l| l.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.layers.iter_mut().flat_map(|l| l.params_mut()).collect()
    }

    fn buffers(&self) -> Vec<&[T]> {
        self.layers.iter().flat_map(|l| l.buffers()).collect()
    }

    fn buffers_mut(&mut self) -> Vec<&mut [T]> {
        self.layers.iter_mut().flat_map(|l| l.buffers_mut()).collect()
    }

    fn box_clone(&self) -> Box<dyn Layer<T>> {
        Box::new(self.clone())
    }

    fn clear_cache(&mut self) {
        self.layers.iter_mut().for_each(|l| l.clear_cache());
    }
}

/// `x + body(x)`.
#[derive(Clone)]
pub struct ResidualBlock<T: Scalar> {
    pub body: Sequential<T>,
}

impl<T: Scalar> ResidualBlock<T> {
    pub fn new(body: Sequential<T>) -> Self {
        Self { body }
    }
}

impl<T: Scalar> Layer<T> for ResidualBlock<T> {
    fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Tensor<T> {
        self.body.forward(x, mode).add(x)
    }

    fn backward(&mut self, grad: &Tensor<T>, param_grads: bool) -> Tensor<T> {
        self.body.backward(grad, param_grads).add(grad)
    }

    fn params(&self) -> Vec<&Param<T>> {
        self.body.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.body.params_mut()
    }

    fn buffers(&self) -> Vec<&[T]> {
        self.body.buffers()
    }

    fn buffers_mut(&mut self) -> Vec<&mut [T]> {
        self.body.buffers_mut()
    }

    fn box_clone(&self) -> Box<dyn Layer<T>> {
        Box::new(self.clone())
    }

    fn clear_cache(&mut self) {
        self.body.clear_cache();
    }
}
