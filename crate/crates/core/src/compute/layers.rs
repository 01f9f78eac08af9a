//! Layers with explicit forward/backward passes.
//!
//! Activations work on `[B, C, T]` tensors; the classifier head works on
//! `[B, C]`. Each layer caches what its backward pass needs when run in
//! train mode; eval-mode forwards (`infer`) take `&self` so a frozen
//! model can be shared across threads.

use rand::Rng;

use super::tensor::{Scalar, Tensor};
use super::ComputeError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A named trainable array together with its gradient and momentum buffer.
#[derive(Clone, Debug)]
pub struct Parameter<F> {
    pub name: String,
    pub value: Tensor<F>,
    pub grad: Tensor<F>,
    pub momentum: Tensor<F>,
    /// Whether SGD applies weight decay to this parameter. Conv and
    /// linear weights do; biases and batch-norm affine terms do not.
    pub weight_decay: bool,
}

impl<F: Scalar> Parameter<F> {
    pub fn new(name: impl Into<String>, value: Tensor<F>, weight_decay: bool) -> Self {
        let shape = value.shape().to_vec();
        Parameter {
            name: name.into(),
            value,
            grad: Tensor::zeros(&shape),
            momentum: Tensor::zeros(&shape),
            weight_decay,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(F::zero());
    }
}

/// Xavier-uniform sample in f64 so that a given seed yields the same
/// initial weights regardless of the scalar type.
fn xavier<F: Scalar, R: Rng>(rng: &mut R, fan_in: usize, fan_out: usize) -> F {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    F::from_f64((rng.random::<f64>() * 2.0 - 1.0) * bound)
}

fn expect_input<F: Scalar>(
    context: &'static str,
    x: &Tensor<F>,
    rank: usize,
    channel_dim: usize,
    channels: usize,
) -> Result<(), ComputeError> {
    if x.rank() != rank || x.dim(channel_dim) != channels {
        return Err(ComputeError::ShapeMismatch {
            context,
            expected: vec![rank, channels],
            got: x.shape().to_vec(),
        });
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Depthwise 1-D convolution along time
// ---------------------------------------------------------------------------

/// Per-channel convolution along the time axis with "same" zero padding,
/// so the output always has the input's length. No bias.
pub struct DepthwiseConv1d<F> {
    pub weight: Parameter<F>, // [C, K]
    channels: usize,
    kernel: usize,
    dilation: usize,
    cache: Option<Tensor<F>>,
}

impl<F: Scalar> DepthwiseConv1d<F> {
    pub fn new<R: Rng>(
        name: impl Into<String>,
        channels: usize,
        kernel: usize,
        dilation: usize,
        rng: &mut R,
    ) -> Self {
        assert!(kernel % 2 == 1, "kernel width must be odd");
        let mut data = Vec::with_capacity(channels * kernel);
        for _ in 0..channels * kernel {
            data.push(xavier::<F, R>(rng, kernel, kernel));
        }
        let value = Tensor::from_vec(&[channels, kernel], data).unwrap();
        DepthwiseConv1d {
            weight: Parameter::new(name, value, true),
            channels,
            kernel,
            dilation,
            cache: None,
        }
    }

    fn padding(&self) -> usize {
        (self.kernel - 1) * self.dilation / 2
    }

    fn compute(&self, x: &Tensor<F>) -> Tensor<F> {
        let (b_n, c_n, t_n) = (x.dim(0), x.dim(1), x.dim(2));
        let mut y = Tensor::zeros(&[b_n, c_n, t_n]);
        let pad = self.padding() as isize;
        let w = self.weight.value.data();
        for b in 0..b_n {
            for c in 0..c_n {
                let xo = x.idx3(b, c, 0);
                let xrow = &x.data()[xo..xo + t_n];
                let yrow = &mut y.data_mut()[xo..xo + t_n];
                for k in 0..self.kernel {
                    let wk = w[c * self.kernel + k];
                    let off = (k * self.dilation) as isize - pad;
                    let t0 = (-off).max(0) as usize;
                    let t1 = ((t_n as isize - off).min(t_n as isize)).max(0) as usize;
                    for t in t0..t1 {
                        yrow[t] += wk * xrow[(t as isize + off) as usize];
                    }
                }
            }
        }
        y
    }

    pub fn forward(&mut self, x: &Tensor<F>, mode: Mode) -> Result<Tensor<F>, ComputeError> {
        expect_input("conv1d_depthwise", x, 3, 1, self.channels)?;
        let y = self.compute(x);
        if mode == Mode::Train {
            self.cache = Some(x.clone());
        }
        Ok(y)
    }

    pub fn infer(&self, x: &Tensor<F>) -> Result<Tensor<F>, ComputeError> {
        expect_input("conv1d_depthwise", x, 3, 1, self.channels)?;
        Ok(self.compute(x))
    }

    pub fn backward(&mut self, dy: &Tensor<F>) -> Tensor<F> {
        let x = self.cache.take().expect("depthwise backward without forward");
        let (b_n, c_n, t_n) = (x.dim(0), x.dim(1), x.dim(2));
        let pad = self.padding() as isize;
        let mut dx = Tensor::zeros(&[b_n, c_n, t_n]);
        let w = self.weight.value.data();
        let dw = self.weight.grad.data_mut();
        for b in 0..b_n {
            for c in 0..c_n {
                let o = x.idx3(b, c, 0);
                let xrow = &x.data()[o..o + t_n];
                let dyrow = &dy.data()[o..o + t_n];
                let dxrow = &mut dx.data_mut()[o..o + t_n];
                for k in 0..self.kernel {
                    let off = (k * self.dilation) as isize - pad;
                    let t0 = (-off).max(0) as usize;
                    let t1 = ((t_n as isize - off).min(t_n as isize)).max(0) as usize;
                    let wk = w[c * self.kernel + k];
                    let mut acc = F::zero();
                    for t in t0..t1 {
                        let xi = (t as isize + off) as usize;
                        acc += dyrow[t] * xrow[xi];
                        dxrow[xi] += wk * dyrow[t];
                    }
                    dw[c * self.kernel + k] += acc;
                }
            }
        }
        dx
    }
}

// ---------------------------------------------------------------------------
// Pointwise (1x1) convolution
// ---------------------------------------------------------------------------

/// Cross-channel 1x1 convolution with bias: `y[o,t] = b[o] + sum_c w[o,c] x[c,t]`.
pub struct PointwiseConv1d<F> {
    pub weight: Parameter<F>, // [O, C]
    pub bias: Parameter<F>,   // [O]
    in_channels: usize,
    out_channels: usize,
    cache: Option<Tensor<F>>,
}

impl<F: Scalar> PointwiseConv1d<F> {
    pub fn new<R: Rng>(
        name_prefix: &str,
        in_channels: usize,
        out_channels: usize,
        rng: &mut R,
    ) -> Self {
        let mut data = Vec::with_capacity(out_channels * in_channels);
        for _ in 0..out_channels * in_channels {
            data.push(xavier::<F, R>(rng, in_channels, out_channels));
        }
        let weight = Tensor::from_vec(&[out_channels, in_channels], data).unwrap();
        PointwiseConv1d {
            weight: Parameter::new(format!("{name_prefix}.weight"), weight, true),
            bias: Parameter::new(
                format!("{name_prefix}.bias"),
                Tensor::zeros(&[out_channels]),
                false,
            ),
            in_channels,
            out_channels,
            cache: None,
        }
    }

    fn compute(&self, x: &Tensor<F>) -> Tensor<F> {
        let (b_n, _, t_n) = (x.dim(0), x.dim(1), x.dim(2));
        let mut y = Tensor::zeros(&[b_n, self.out_channels, t_n]);
        let w = self.weight.value.data();
        let bias = self.bias.value.data();
        for b in 0..b_n {
            for o in 0..self.out_channels {
                let yo = y.idx3(b, o, 0);
                {
                    let yrow = &mut y.data_mut()[yo..yo + t_n];
                    yrow.iter_mut().for_each(|v| *v = bias[o]);
                }
                for c in 0..self.in_channels {
                    let woc = w[o * self.in_channels + c];
                    let xo = x.idx3(b, c, 0);
                    let xrow = &x.data()[xo..xo + t_n];
                    let yrow = &mut y.data_mut()[yo..yo + t_n];
                    for t in 0..t_n {
                        yrow[t] += woc * xrow[t];
                    }
                }
            }
        }
        y
    }

    pub fn forward(&mut self, x: &Tensor<F>, mode: Mode) -> Result<Tensor<F>, ComputeError> {
        expect_input("conv1d_pointwise", x, 3, 1, self.in_channels)?;
        let y = self.compute(x);
        if mode == Mode::Train {
            self.cache = Some(x.clone());
        }
        Ok(y)
    }

    pub fn infer(&self, x: &Tensor<F>) -> Result<Tensor<F>, ComputeError> {
        expect_input("conv1d_pointwise", x, 3, 1, self.in_channels)?;
        Ok(self.compute(x))
    }

    pub fn backward(&mut self, dy: &Tensor<F>) -> Tensor<F> {
        let x = self.cache.take().expect("pointwise backward without forward");
        let (b_n, _, t_n) = (x.dim(0), x.dim(1), x.dim(2));
        let mut dx = Tensor::zeros(x.shape());
        let w = self.weight.value.data();
        let dw = self.weight.grad.data_mut();
        let db = self.bias.grad.data_mut();
        for b in 0..b_n {
            for o in 0..self.out_channels {
                let dyo = dy.idx3(b, o, 0);
                let dyrow = &dy.data()[dyo..dyo + t_n];
                db[o] += dyrow.iter().fold(F::zero(), |acc, &v| acc + v);
                for c in 0..self.in_channels {
                    let woc = w[o * self.in_channels + c];
                    let xo = x.idx3(b, c, 0);
                    let xrow = &x.data()[xo..xo + t_n];
                    let dxrow = &mut dx.data_mut()[xo..xo + t_n];
                    let mut acc = F::zero();
                    for t in 0..t_n {
                        acc += dyrow[t] * xrow[t];
                        dxrow[t] += woc * dyrow[t];
                    }
                    dw[o * self.in_channels + c] += acc;
                }
            }
        }
        dx
    }
}

// ---------------------------------------------------------------------------
// Batch normalization over (batch, time) per channel
// ---------------------------------------------------------------------------

struct BnCache<F> {
    xhat: Tensor<F>,
    inv_std: Vec<F>,
}

pub struct BatchNorm1d<F> {
    pub gamma: Parameter<F>, // [C]
    pub beta: Parameter<F>,  // [C]
    pub running_mean: Tensor<F>,
    pub running_var: Tensor<F>,
    channels: usize,
    eps: f64,
    stat_momentum: f64,
    cache: Option<BnCache<F>>,
}

impl<F: Scalar> BatchNorm1d<F> {
    pub fn new(name_prefix: &str, channels: usize) -> Self {
        BatchNorm1d {
            gamma: Parameter::new(
                format!("{name_prefix}.gamma"),
                Tensor::full(&[channels], F::one()),
                false,
            ),
            beta: Parameter::new(
                format!("{name_prefix}.beta"),
                Tensor::zeros(&[channels]),
                false,
            ),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], F::one()),
            channels,
            eps: 1e-5,
            stat_momentum: 0.1,
            cache: None,
        }
    }

    pub fn name_prefix(&self) -> &str {
        self.gamma.name.trim_end_matches(".gamma")
    }

    pub fn forward(&mut self, x: &Tensor<F>, mode: Mode) -> Result<Tensor<F>, ComputeError> {
        expect_input("batch_norm", x, 3, 1, self.channels)?;
        match mode {
            Mode::Eval => self.infer(x),
            Mode::Train => Ok(self.forward_train(x)),
        }
    }

    fn forward_train(&mut self, x: &Tensor<F>) -> Tensor<F> {
        let (b_n, c_n, t_n) = (x.dim(0), x.dim(1), x.dim(2));
        let n = F::from_f64((b_n * t_n) as f64);
        let mut y = Tensor::zeros(x.shape());
        let mut xhat = Tensor::zeros(x.shape());
        let mut inv_std = vec![F::zero(); c_n];
        let eps = F::from_f64(self.eps);
        let m = F::from_f64(self.stat_momentum);
        for c in 0..c_n {
            let mut sum = F::zero();
            for b in 0..b_n {
                let o = x.idx3(b, c, 0);
                for &v in &x.data()[o..o + t_n] {
                    sum += v;
                }
            }
            let mean = sum / n;
            let mut var_sum = F::zero();
            for b in 0..b_n {
                let o = x.idx3(b, c, 0);
                for &v in &x.data()[o..o + t_n] {
                    let d = v - mean;
                    var_sum += d * d;
                }
            }
            let var = var_sum / n;
            let istd = F::one() / (var + eps).sqrt();
            inv_std[c] = istd;
            let g = self.gamma.value.data()[c];
            let be = self.beta.value.data()[c];
            for b in 0..b_n {
                let o = x.idx3(b, c, 0);
                for t in 0..t_n {
                    let xh = (x.data()[o + t] - mean) * istd;
                    xhat.data_mut()[o + t] = xh;
                    y.data_mut()[o + t] = g * xh + be;
                }
            }
            let rm = self.running_mean.data_mut();
            rm[c] = (F::one() - m) * rm[c] + m * mean;
            let rv = self.running_var.data_mut();
            rv[c] = (F::one() - m) * rv[c] + m * var;
        }
        self.cache = Some(BnCache { xhat, inv_std });
        y
    }

    pub fn infer(&self, x: &Tensor<F>) -> Result<Tensor<F>, ComputeError> {
        expect_input("batch_norm", x, 3, 1, self.channels)?;
        let (b_n, c_n, t_n) = (x.dim(0), x.dim(1), x.dim(2));
        let mut y = Tensor::zeros(x.shape());
        let eps = F::from_f64(self.eps);
        for c in 0..c_n {
            let mean = self.running_mean.data()[c];
            let istd = F::one() / (self.running_var.data()[c] + eps).sqrt();
            let g = self.gamma.value.data()[c];
            let be = self.beta.value.data()[c];
            for b in 0..b_n {
                let o = x.idx3(b, c, 0);
                for t in 0..t_n {
                    y.data_mut()[o + t] = g * (x.data()[o + t] - mean) * istd + be;
                }
            }
        }
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor<F>) -> Tensor<F> {
        let BnCache { xhat, inv_std } =
            self.cache.take().expect("batch_norm backward without forward");
        let (b_n, c_n, t_n) = (xhat.dim(0), xhat.dim(1), xhat.dim(2));
        let n = F::from_f64((b_n * t_n) as f64);
        let mut dx = Tensor::zeros(xhat.shape());
        for c in 0..c_n {
            let g = self.gamma.value.data()[c];
            let mut sum_dy = F::zero();
            let mut sum_dy_xhat = F::zero();
            for b in 0..b_n {
                let o = xhat.idx3(b, c, 0);
                for t in 0..t_n {
                    let d = dy.data()[o + t];
                    sum_dy += d;
                    sum_dy_xhat += d * xhat.data()[o + t];
                }
            }
            self.gamma.grad.data_mut()[c] += sum_dy_xhat;
            self.beta.grad.data_mut()[c] += sum_dy;
            // dx = g*istd/n * (n*dy - sum(dy) - xhat * sum(dy*xhat))
            let scale = g * inv_std[c] / n;
            for b in 0..b_n {
                let o = xhat.idx3(b, c, 0);
                for t in 0..t_n {
                    let d = dy.data()[o + t];
                    dx.data_mut()[o + t] =
                        scale * (n * d - sum_dy - xhat.data()[o + t] * sum_dy_xhat);
                }
            }
        }
        dx
    }
}

// ---------------------------------------------------------------------------
// Elementwise activations
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActKind {
    Tanh,
    Relu,
}

/// Elementwise tanh or relu; caches its output for the backward pass.
pub struct Activation<F> {
    kind: ActKind,
    cache: Option<Tensor<F>>,
}

impl<F: Scalar> Activation<F> {
    pub fn new(kind: ActKind) -> Self {
        Activation { kind, cache: None }
    }

    fn compute(&self, x: &Tensor<F>) -> Tensor<F> {
        match self.kind {
            ActKind::Tanh => x.map(|v| v.tanh()),
            ActKind::Relu => x.map(|v| if v > F::zero() { v } else { F::zero() }),
        }
    }

    pub fn forward(&mut self, x: &Tensor<F>, mode: Mode) -> Tensor<F> {
        let y = self.compute(x);
        if mode == Mode::Train {
            self.cache = Some(y.clone());
        }
        y
    }

    pub fn infer(&self, x: &Tensor<F>) -> Tensor<F> {
        self.compute(x)
    }

    pub fn backward(&mut self, dy: &Tensor<F>) -> Tensor<F> {
        let y = self.cache.take().expect("activation backward without forward");
        let mut dx = Tensor::zeros(y.shape());
        match self.kind {
            ActKind::Tanh => {
                for i in 0..y.len() {
                    let yv = y.data()[i];
                    dx.data_mut()[i] = dy.data()[i] * (F::one() - yv * yv);
                }
            }
            ActKind::Relu => {
                for i in 0..y.len() {
                    dx.data_mut()[i] = if y.data()[i] > F::zero() {
                        dy.data()[i]
                    } else {
                        F::zero()
                    };
                }
            }
        }
        dx
    }
}

// ---------------------------------------------------------------------------
// Global average pooling over time
// ---------------------------------------------------------------------------

pub struct GlobalAvgPool {
    cache_t: Option<usize>,
}

impl GlobalAvgPool {
    pub fn new() -> Self {
        GlobalAvgPool { cache_t: None }
    }

    pub fn forward<F: Scalar>(&mut self, x: &Tensor<F>, mode: Mode) -> Tensor<F> {
        if mode == Mode::Train {
            self.cache_t = Some(x.dim(2));
        }
        Self::compute(x)
    }

    pub fn infer<F: Scalar>(&self, x: &Tensor<F>) -> Tensor<F> {
        Self::compute(x)
    }

    fn compute<F: Scalar>(x: &Tensor<F>) -> Tensor<F> {
        let (b_n, c_n, t_n) = (x.dim(0), x.dim(1), x.dim(2));
        let inv_t = F::one() / F::from_f64(t_n as f64);
        let mut y = Tensor::zeros(&[b_n, c_n]);
        for b in 0..b_n {
            for c in 0..c_n {
                let o = x.idx3(b, c, 0);
                let s = x.data()[o..o + t_n]
                    .iter()
                    .fold(F::zero(), |acc, &v| acc + v);
                let yi = y.idx2(b, c);
                y.data_mut()[yi] = s * inv_t;
            }
        }
        y
    }

    pub fn backward<F: Scalar>(&mut self, dy: &Tensor<F>) -> Tensor<F> {
        let t_n = self.cache_t.take().expect("pool backward without forward");
        let (b_n, c_n) = (dy.dim(0), dy.dim(1));
        let inv_t = F::one() / F::from_f64(t_n as f64);
        let mut dx = Tensor::zeros(&[b_n, c_n, t_n]);
        for b in 0..b_n {
            for c in 0..c_n {
                let g = dy.data()[dy.idx2(b, c)] * inv_t;
                let o = dx.idx3(b, c, 0);
                for t in 0..t_n {
                    dx.data_mut()[o + t] = g;
                }
            }
        }
        dx
    }
}

impl Default for GlobalAvgPool {
    fn default() -> Self {
        Self::new()
    }
}

// ---------------------------------------------------------------------------
// Affine head
// ---------------------------------------------------------------------------

pub struct Linear<F> {
    pub weight: Parameter<F>, // [O, I]
    pub bias: Parameter<F>,   // [O]
    in_features: usize,
    out_features: usize,
    cache: Option<Tensor<F>>,
}

impl<F: Scalar> Linear<F> {
    pub fn new<R: Rng>(name_prefix: &str, in_features: usize, out_features: usize, rng: &mut R) -> Self {
        let mut data = Vec::with_capacity(out_features * in_features);
        for _ in 0..out_features * in_features {
            data.push(xavier::<F, R>(rng, in_features, out_features));
        }
        Linear {
            weight: Parameter::new(
                format!("{name_prefix}.weight"),
                Tensor::from_vec(&[out_features, in_features], data).unwrap(),
                true,
            ),
            bias: Parameter::new(
                format!("{name_prefix}.bias"),
                Tensor::zeros(&[out_features]),
                false,
            ),
            in_features,
            out_features,
            cache: None,
        }
    }

    fn compute(&self, x: &Tensor<F>) -> Tensor<F> {
        let b_n = x.dim(0);
        let mut y = Tensor::zeros(&[b_n, self.out_features]);
        let w = self.weight.value.data();
        for b in 0..b_n {
            for o in 0..self.out_features {
                let mut acc = self.bias.value.data()[o];
                for i in 0..self.in_features {
                    acc += w[o * self.in_features + i] * x.data()[x.idx2(b, i)];
                }
                let yi = y.idx2(b, o);
                y.data_mut()[yi] = acc;
            }
        }
        y
    }

    pub fn forward(&mut self, x: &Tensor<F>, mode: Mode) -> Result<Tensor<F>, ComputeError> {
        expect_input("linear", x, 2, 1, self.in_features)?;
        let y = self.compute(x);
        if mode == Mode::Train {
            self.cache = Some(x.clone());
        }
        Ok(y)
    }

    pub fn infer(&self, x: &Tensor<F>) -> Result<Tensor<F>, ComputeError> {
        expect_input("linear", x, 2, 1, self.in_features)?;
        Ok(self.compute(x))
    }

    pub fn backward(&mut self, dy: &Tensor<F>) -> Tensor<F> {
        let x = self.cache.take().expect("linear backward without forward");
        let b_n = x.dim(0);
        let mut dx = Tensor::zeros(x.shape());
        let w = self.weight.value.data();
        let dw = self.weight.grad.data_mut();
        let db = self.bias.grad.data_mut();
        for b in 0..b_n {
            for o in 0..self.out_features {
                let g = dy.data()[dy.idx2(b, o)];
                db[o] += g;
                for i in 0..self.in_features {
                    dw[o * self.in_features + i] += g * x.data()[x.idx2(b, i)];
                    let dxi = dx.idx2(b, i);
                    dx.data_mut()[dxi] += g * w[o * self.in_features + i];
                }
            }
        }
        dx
    }
}

// ---------------------------------------------------------------------------
// Residual time-channel separable block
// ---------------------------------------------------------------------------

/// Depthwise-then-pointwise convolution with batch norm, an optional
/// 1x1-projected residual added before the activation, and tanh or relu
/// on top. With `kernel == None` the depthwise stage is skipped and the
/// block is a plain 1x1 conv + BN + activation.
pub struct SepConvBlock<F> {
    pub dw: Option<DepthwiseConv1d<F>>,
    pub pw: PointwiseConv1d<F>,
    pub bn: BatchNorm1d<F>,
    pub skip: Option<PointwiseConv1d<F>>,
    pub act: Activation<F>,
}

pub struct SepConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: Option<usize>,
    pub dilation: usize,
    pub with_skip: bool,
    pub act: ActKind,
}

impl<F: Scalar> SepConvBlock<F> {
    pub fn new<R: Rng>(prefix: &str, spec: &SepConvSpec, rng: &mut R) -> Self {
        let dw = spec.kernel.map(|k| {
            DepthwiseConv1d::new(
                format!("{prefix}/dw.weight"),
                spec.in_channels,
                k,
                spec.dilation,
                rng,
            )
        });
        let pw = PointwiseConv1d::new(
            &format!("{prefix}/pw"),
            spec.in_channels,
            spec.out_channels,
            rng,
        );
        let bn = BatchNorm1d::new(&format!("{prefix}/bn"), spec.out_channels);
        let skip = spec.with_skip.then(|| {
            PointwiseConv1d::new(&format!("{prefix}/skip"), spec.in_channels, spec.out_channels, rng)
        });
        SepConvBlock {
            dw,
            pw,
            bn,
            skip,
            act: Activation::new(spec.act),
        }
    }

    pub fn forward(&mut self, x: &Tensor<F>, mode: Mode) -> Result<Tensor<F>, ComputeError> {
        let h = match &mut self.dw {
            Some(dw) => dw.forward(x, mode)?,
            None => x.clone(),
        };
        let h = self.pw.forward(&h, mode)?;
        let mut h = self.bn.forward(&h, mode)?;
        if let Some(skip) = &mut self.skip {
            h.add_assign(&skip.forward(x, mode)?);
        }
        Ok(self.act.forward(&h, mode))
    }

    pub fn infer(&self, x: &Tensor<F>) -> Result<Tensor<F>, ComputeError> {
        let h = match &self.dw {
            Some(dw) => dw.infer(x)?,
            None => x.clone(),
        };
        let h = self.pw.infer(&h)?;
        let mut h = self.bn.infer(&h)?;
        if let Some(skip) = &self.skip {
            h.add_assign(&skip.infer(x)?);
        }
        Ok(self.act.infer(&h))
    }

    pub fn backward(&mut self, dy: &Tensor<F>) -> Tensor<F> {
        let da = self.act.backward(dy);
        let dbn = self.bn.backward(&da);
        let dpw = self.pw.backward(&dbn);
        let mut dx = match &mut self.dw {
            Some(dw) => dw.backward(&dpw),
            None => dpw,
        };
        if let Some(skip) = &mut self.skip {
            dx.add_assign(&skip.backward(&da));
        }
        dx
    }

    pub fn params_mut(&mut self) -> Vec<&mut Parameter<F>> {
        let mut out = Vec::new();
        if let Some(dw) = &mut self.dw {
            out.push(&mut dw.weight);
        }
        out.push(&mut self.pw.weight);
        out.push(&mut self.pw.bias);
        out.push(&mut self.bn.gamma);
        out.push(&mut self.bn.beta);
        if let Some(skip) = &mut self.skip {
            out.push(&mut skip.weight);
            out.push(&mut skip.bias);
        }
        out
    }

    pub fn params(&self) -> Vec<&Parameter<F>> {
        let mut out = Vec::new();
        if let Some(dw) = &self.dw {
            out.push(&dw.weight);
        }
        out.push(&self.pw.weight);
        out.push(&self.pw.bias);
        out.push(&self.bn.gamma);
        out.push(&self.bn.beta);
        if let Some(skip) = &self.skip {
            out.push(&skip.weight);
            out.push(&skip.bias);
        }
        out
    }

    /// Batch-norm running statistics as named tensors.
    pub fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor<F>)> {
        let prefix = self.bn.gamma.name.trim_end_matches(".gamma").to_string();
        vec![
            (format!("{prefix}.running_mean"), &mut self.bn.running_mean),
            (format!("{prefix}.running_var"), &mut self.bn.running_var),
        ]
    }

    pub fn buffers(&self) -> Vec<(String, &Tensor<F>)> {
        let prefix = self.bn.gamma.name.trim_end_matches(".gamma").to_string();
        vec![
            (format!("{prefix}.running_mean"), &self.bn.running_mean),
            (format!("{prefix}.running_var"), &self.bn.running_var),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compute::gradcheck::op_max_rel_err;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn depthwise_delta_kernel_is_identity() {
        let mut conv = DepthwiseConv1d::<f64>::new("dw", 2, 3, 1, &mut rng());
        conv.weight.value.data_mut().copy_from_slice(&[0.0, 1.0, 0.0, 0.0, 1.0, 0.0]);
        let x = Tensor::from_vec(&[1, 2, 4], (0..8).map(f64::from).collect()).unwrap();
        let y = conv.infer(&x).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn depthwise_box_kernel_sums_neighbors() {
        // constant 1 input, k=3 all-ones kernel: interior 3, edges 2
        let mut conv = DepthwiseConv1d::<f64>::new("dw", 1, 3, 1, &mut rng());
        conv.weight.value.fill(1.0);
        let x = Tensor::full(&[1, 1, 5], 1.0);
        let y = conv.infer(&x).unwrap();
        assert_eq!(y.data(), &[2.0, 3.0, 3.0, 3.0, 2.0]);
    }

    #[test]
    fn depthwise_rejects_wrong_channels() {
        let conv = DepthwiseConv1d::<f64>::new("dw", 4, 3, 1, &mut rng());
        let x = Tensor::zeros(&[1, 3, 5]);
        assert!(conv.infer(&x).is_err());
    }

    #[test]
    fn depthwise_gradients_match_finite_differences() {
        for seed in [1u64, 2, 3] {
            let mut conv = DepthwiseConv1d::<f64>::new("dw", 4, 3, 1, &mut rng());
            let err = op_max_rel_err(
                &mut conv,
                &[1, 4, 8],
                seed,
                |l, x| l.forward(x, Mode::Train).unwrap(),
                |l, dy| l.backward(dy),
                |l| vec![&mut l.weight],
            );
            assert!(err < 1e-4, "seed {seed}: rel err {err}");
        }
    }

    #[test]
    fn dilated_depthwise_keeps_length_and_gradients() {
        let mut conv = DepthwiseConv1d::<f64>::new("dw", 2, 5, 2, &mut rng());
        let x = Tensor::full(&[1, 2, 9], 1.0);
        assert_eq!(conv.infer(&x).unwrap().shape(), &[1, 2, 9]);
        let err = op_max_rel_err(
            &mut conv,
            &[2, 2, 9],
            11,
            |l, x| l.forward(x, Mode::Train).unwrap(),
            |l, dy| l.backward(dy),
            |l| vec![&mut l.weight],
        );
        assert!(err < 1e-4);
    }

    #[test]
    fn pointwise_identity_weights() {
        let mut conv = PointwiseConv1d::<f64>::new("pw", 2, 2, &mut rng());
        conv.weight.value.data_mut().copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        conv.bias.value.fill(0.0);
        let x = Tensor::from_vec(&[1, 2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(conv.infer(&x).unwrap(), x);
    }

    #[test]
    fn pointwise_hand_value() {
        // column [1, 2], w = [[1, 1]], b = [0.5] -> 3.5
        let mut conv = PointwiseConv1d::<f64>::new("pw", 2, 1, &mut rng());
        conv.weight.value.data_mut().copy_from_slice(&[1.0, 1.0]);
        conv.bias.value.data_mut()[0] = 0.5;
        let x = Tensor::from_vec(&[1, 2, 1], vec![1.0, 2.0]).unwrap();
        let y = conv.infer(&x).unwrap();
        assert_eq!(y.data(), &[3.5]);
    }

    #[test]
    fn pointwise_gradients_match_finite_differences() {
        for seed in [4u64, 5, 6] {
            let mut conv = PointwiseConv1d::<f64>::new("pw", 3, 5, &mut rng());
            let err = op_max_rel_err(
                &mut conv,
                &[2, 3, 6],
                seed,
                |l, x| l.forward(x, Mode::Train).unwrap(),
                |l, dy| l.backward(dy),
                |l| vec![&mut l.weight, &mut l.bias],
            );
            assert!(err < 1e-4, "seed {seed}: rel err {err}");
        }
    }

    #[test]
    fn batch_norm_leaves_standardized_input() {
        let mut bn = BatchNorm1d::<f64>::new("bn", 1);
        // zero-mean unit-variance channel (population stats)
        let x = Tensor::from_vec(&[1, 1, 4], vec![-1.0, 1.0, -1.0, 1.0]).unwrap();
        let y = bn.forward(&x, Mode::Train).unwrap();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn batch_norm_train_standardizes_per_channel() {
        let mut bn = BatchNorm1d::<f64>::new("bn", 3);
        let mut r = rng();
        let data: Vec<f64> = (0..2 * 3 * 7).map(|_| r.random::<f64>() * 4.0 - 1.0).collect();
        let x = Tensor::from_vec(&[2, 3, 7], data).unwrap();
        let y = bn.forward(&x, Mode::Train).unwrap();
        for c in 0..3 {
            let mut vals = Vec::new();
            for b in 0..2 {
                for t in 0..7 {
                    vals.push(y.data()[y.idx3(b, c, t)]);
                }
            }
            let n = vals.len() as f64;
            let mean: f64 = vals.iter().sum::<f64>() / n;
            let var: f64 = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            assert!(mean.abs() < 1e-5);
            assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn batch_norm_eval_uses_running_stats() {
        let mut bn = BatchNorm1d::<f64>::new("bn", 1);
        bn.running_mean.data_mut()[0] = 2.0;
        bn.running_var.data_mut()[0] = 4.0;
        let x = Tensor::from_vec(&[1, 1, 2], vec![2.0, 4.0]).unwrap();
        let y = bn.infer(&x).unwrap();
        assert!((y.data()[0] - 0.0).abs() < 1e-5);
        assert!((y.data()[1] - 1.0).abs() < 1e-3); // 2/sqrt(4+eps)
    }

    #[test]
    fn batch_norm_gradients_match_finite_differences() {
        for seed in [7u64, 8, 9] {
            let mut bn = BatchNorm1d::<f64>::new("bn", 3);
            // non-trivial affine so gamma/beta gradients are exercised
            let mut r = rng();
            for v in bn.gamma.value.data_mut() {
                *v = 0.5 + r.random::<f64>();
            }
            let err = op_max_rel_err(
                &mut bn,
                &[2, 3, 5],
                seed,
                |l, x| l.forward(x, Mode::Train).unwrap(),
                |l, dy| l.backward(dy),
                |l| vec![&mut l.gamma, &mut l.beta],
            );
            assert!(err < 1e-4, "seed {seed}: rel err {err}");
        }
    }

    #[test]
    fn activation_values() {
        let mut tanh = Activation::<f64>::new(ActKind::Tanh);
        let mut relu = Activation::<f64>::new(ActKind::Relu);
        let x = Tensor::from_vec(&[1, 1, 3], vec![0.0, -1.0, 1.0]).unwrap();
        let yt = tanh.forward(&x, Mode::Eval);
        assert_eq!(yt.data()[0], 0.0);
        assert!((yt.data()[2] - 1.0f64.tanh()).abs() < 1e-15);
        let yr = relu.forward(&x, Mode::Eval);
        assert_eq!(yr.data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn activation_gradients_match_finite_differences() {
        for (kind, seed) in [(ActKind::Tanh, 10u64), (ActKind::Relu, 11), (ActKind::Tanh, 12)] {
            let mut act = Activation::<f64>::new(kind);
            let err = op_max_rel_err(
                &mut act,
                &[1, 2, 6],
                seed,
                |l, x| l.forward(x, Mode::Train),
                |l, dy| l.backward(dy),
                |_| vec![],
            );
            assert!(err < 1e-4, "{kind:?} seed {seed}: rel err {err}");
        }
    }

    #[test]
    fn residual_add_zero_is_identity() {
        let x = Tensor::from_vec(&[1, 2, 2], vec![1.0, -2.0, 3.0, 0.5]).unwrap();
        let z = Tensor::zeros(&[1, 2, 2]);
        assert_eq!(x.add(&z).unwrap(), x);
    }

    #[test]
    fn pool_averages_time_and_spreads_gradient() {
        let mut pool = GlobalAvgPool::new();
        let x = Tensor::from_vec(&[1, 2, 2], vec![1.0, 3.0, -2.0, 2.0]).unwrap();
        let y = pool.forward(&x, Mode::Train);
        assert_eq!(y.data(), &[2.0, 0.0]);
        let dy = Tensor::from_vec(&[1, 2], vec![4.0, 2.0]).unwrap();
        let dx = pool.backward(&dy);
        assert_eq!(dx.data(), &[2.0, 2.0, 1.0, 1.0]);
    }

    #[test]
    fn linear_gradients_match_finite_differences() {
        for seed in [13u64, 14] {
            let mut lin = Linear::<f64>::new("head", 4, 3, &mut rng());
            let err = op_max_rel_err(
                &mut lin,
                &[2, 4],
                seed,
                |l, x| l.forward(x, Mode::Train).unwrap(),
                |l, dy| l.backward(dy),
                |l| vec![&mut l.weight, &mut l.bias],
            );
            assert!(err < 1e-4, "seed {seed}: rel err {err}");
        }
    }

    #[test]
    fn sep_conv_block_gradients_match_finite_differences() {
        for seed in [15u64, 16] {
            let mut block = SepConvBlock::<f64>::new(
                "blk",
                &SepConvSpec {
                    in_channels: 3,
                    out_channels: 4,
                    kernel: Some(5),
                    dilation: 1,
                    with_skip: true,
                    act: ActKind::Tanh,
                },
                &mut rng(),
            );
            let err = op_max_rel_err(
                &mut block,
                &[2, 3, 6],
                seed,
                |l, x| l.forward(x, Mode::Train).unwrap(),
                |l, dy| l.backward(dy),
                |l| l.params_mut(),
            );
            assert!(err < 1e-4, "seed {seed}: rel err {err}");
        }
    }

    #[test]
    fn sep_conv_block_param_names_are_prefixed() {
        let mut block = SepConvBlock::<f32>::new(
            "gate/block2",
            &SepConvSpec {
                in_channels: 2,
                out_channels: 2,
                kernel: Some(3),
                dilation: 1,
                with_skip: true,
                act: ActKind::Tanh,
            },
            &mut rng(),
        );
        let names: Vec<String> = block.params_mut().iter().map(|p| p.name.clone()).collect();
        assert_eq!(
            names,
            vec![
                "gate/block2/dw.weight",
                "gate/block2/pw.weight",
                "gate/block2/pw.bias",
                "gate/block2/bn.gamma",
                "gate/block2/bn.beta",
                "gate/block2/skip.weight",
                "gate/block2/skip.bias",
            ]
        );
        let buffer_names: Vec<String> = block.buffers().into_iter().map(|(n, _)| n).collect();
        assert_eq!(
            buffer_names,
            vec!["gate/block2/bn.running_mean", "gate/block2/bn.running_var"]
        );
    }
}
