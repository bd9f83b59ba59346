//! Differentiable building blocks: 3x3 same-padded convolution, batch
//! normalization, frequency max-pooling, time-distributed dense layers,
//! dropout, edge padding, and the two-head loss.
//!
//! Layers are descriptions only; weights live in the [`ParamStore`] under
//! `<layer name>.<block>` keys. Forward passes return whatever cache their
//! backward pass needs.

use rand::Rng;
use rand_chacha::ChaCha12Rng;

use super::params::{Grads, ParamStore, StatsUpdate};
use super::tensor::Tensor;
use super::{scalar, Scalar};

pub(crate) fn init_uniform<T: Scalar>(
    store: &mut ParamStore<T>,
    name: &str,
    shape: Vec<usize>,
    fan_in: usize,
    rng: &mut ChaCha12Rng,
) {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| scalar(rng.random_range(-bound..bound)))
        .collect();
    store.insert(name, shape, data, true);
}

pub(crate) fn init_const<T: Scalar>(
    store: &mut ParamStore<T>,
    name: &str,
    shape: Vec<usize>,
    value: f64,
    trainable: bool,
) {
    let n: usize = shape.iter().product();
    store.insert(name, shape, vec![scalar(value); n], trainable);
}

/// Rectifier; the cache is the output itself.
pub fn relu_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let mut y = x.clone();
    for v in y.data_mut() {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
    y
}

pub fn relu_backward<T: Scalar>(y: &Tensor<T>, gout: &Tensor<T>) -> Tensor<T> {
    let mut gin = gout.clone();
    for (g, &o) in gin.data_mut().iter_mut().zip(y.data()) {
        if o <= T::zero() {
            *g = T::zero();
        }
    }
    gin
}

/// 3x3 convolution, stride 1, zero padding preserving the time x width size.
/// Kernel block layout is `[3, 3, in, out]` with the output axis contiguous.
#[derive(Debug, Clone)]
pub struct Conv2d {
    pub name: String,
    pub in_ch: usize,
    pub out_ch: usize,
}

impl Conv2d {
    pub fn new(name: impl Into<String>, in_ch: usize, out_ch: usize) -> Self {
        Self {
            name: name.into(),
            in_ch,
            out_ch,
        }
    }

    fn kernel_name(&self) -> String {
        format!("{}.kernel", self.name)
    }

    fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn block_shapes(&self) -> Vec<(String, Vec<usize>, bool)> {
        vec![
            (self.kernel_name(), vec![3, 3, self.in_ch, self.out_ch], true),
            (self.bias_name(), vec![self.out_ch], true),
        ]
    }

    pub fn init<T: Scalar>(&self, store: &mut ParamStore<T>, rng: &mut ChaCha12Rng) {
        init_uniform(
            store,
            &self.kernel_name(),
            vec![3, 3, self.in_ch, self.out_ch],
            9 * self.in_ch,
            rng,
        );
        init_const(store, &self.bias_name(), vec![self.out_ch], 0.0, true);
    }

    pub fn forward<T: Scalar>(&self, p: &ParamStore<T>, x: &Tensor<T>) -> Tensor<T> {
        let [l, w, cin] = x.shape();
        assert_eq!(cin, self.in_ch, "{}: channel mismatch", self.name);
        let kernel = &p.get(&self.kernel_name()).data;
        let bias = &p.get(&self.bias_name()).data;
        let cout = self.out_ch;
        let mut out = Tensor::zeros([l, w, cout]);
        for t in 0..l {
            for f in 0..w {
                let out_row = out.row_mut(t, f);
                out_row.copy_from_slice(bias);
                for dt in 0..3usize {
                    let Some(ti) = (t + dt).checked_sub(1) else { continue };
                    if ti >= l {
                        continue;
                    }
                    for df in 0..3usize {
                        let Some(fi) = (f + df).checked_sub(1) else { continue };
                        if fi >= w {
                            continue;
                        }
                        let x_row = x.row(ti, fi);
                        let k_base = (dt * 3 + df) * cin * cout;
                        for (ci, &xv) in x_row.iter().enumerate() {
                            if xv == T::zero() {
                                continue;
                            }
                            let k_row = &kernel[k_base + ci * cout..k_base + (ci + 1) * cout];
                            for (o, &kv) in k_row.iter().enumerate() {
                                out_row[o] += xv * kv;
                            }
                        }
                    }
                }
            }
        }
        out
    }

    /// Returns the input gradient; parameter gradients accumulate in place.
    pub fn backward<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        x: &Tensor<T>,
        gout: &Tensor<T>,
        grads: &mut Grads<T>,
    ) -> Tensor<T> {
        let [l, w, cin] = x.shape();
        let cout = self.out_ch;
        let kernel = &p.get(&self.kernel_name()).data;
        let mut gin = Tensor::zeros([l, w, cin]);

        {
            let gbias = grads.block_mut(&self.bias_name());
            for t in 0..l {
                for f in 0..w {
                    for (o, &g) in gout.row(t, f).iter().enumerate() {
                        gbias[o] += g;
                    }
                }
            }
        }

        let gkernel = grads.block_mut(&self.kernel_name());
        for t in 0..l {
            for f in 0..w {
                let g_row = gout.row(t, f);
                for dt in 0..3usize {
                    let Some(ti) = (t + dt).checked_sub(1) else { continue };
                    if ti >= l {
                        continue;
                    }
                    for df in 0..3usize {
                        let Some(fi) = (f + df).checked_sub(1) else { continue };
                        if fi >= w {
                            continue;
                        }
                        let x_row = x.row(ti, fi);
                        let gin_row = gin.row_mut(ti, fi);
                        let k_base = (dt * 3 + df) * cin * cout;
                        for ci in 0..cin {
                            let xv = x_row[ci];
                            let k_row = &kernel[k_base + ci * cout..k_base + (ci + 1) * cout];
                            let gk_row =
                                &mut gkernel[k_base + ci * cout..k_base + (ci + 1) * cout];
                            let mut acc = T::zero();
                            for o in 0..cout {
                                let g = g_row[o];
                                acc += k_row[o] * g;
                                gk_row[o] += xv * g;
                            }
                            gin_row[ci] += acc;
                        }
                    }
                }
            }
        }
        gin
    }
}

/// Per-channel batch normalization over the time x width positions of one
/// sequence. Train phase normalizes by batch statistics and emits a running
/// update; infer phase reads the stored running statistics.
#[derive(Debug, Clone)]
pub struct BatchNorm {
    pub name: String,
    pub channels: usize,
}

pub struct BatchNormCache<T> {
    xhat: Tensor<T>,
    inv_std: Vec<T>,
}

pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.99;

impl BatchNorm {
    pub fn new(name: impl Into<String>, channels: usize) -> Self {
        Self {
            name: name.into(),
            channels,
        }
    }

    fn block(&self, which: &str) -> String {
        format!("{}.{which}", self.name)
    }

    pub fn block_shapes(&self) -> Vec<(String, Vec<usize>, bool)> {
        vec![
            (self.block("gamma"), vec![self.channels], true),
            (self.block("beta"), vec![self.channels], true),
            (self.block("running_mean"), vec![self.channels], false),
            (self.block("running_var"), vec![self.channels], false),
        ]
    }

    pub fn init<T: Scalar>(&self, store: &mut ParamStore<T>) {
        init_const(store, &self.block("gamma"), vec![self.channels], 1.0, true);
        init_const(store, &self.block("beta"), vec![self.channels], 0.0, true);
        init_const(
            store,
            &self.block("running_mean"),
            vec![self.channels],
            0.0,
            false,
        );
        init_const(
            store,
            &self.block("running_var"),
            vec![self.channels],
            1.0,
            false,
        );
    }

    pub fn forward_train<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        x: &Tensor<T>,
    ) -> (Tensor<T>, BatchNormCache<T>, StatsUpdate<T>) {
        let [l, w, c] = x.shape();
        assert_eq!(c, self.channels);
        let n = (l * w) as f64;
        let mut mean = vec![T::zero(); c];
        for t in 0..l {
            for f in 0..w {
                for (ch, &v) in x.row(t, f).iter().enumerate() {
                    mean[ch] += v;
                }
            }
        }
        let inv_n: T = scalar(1.0 / n);
        for m in &mut mean {
            *m *= inv_n;
        }
        let mut var = vec![T::zero(); c];
        for t in 0..l {
            for f in 0..w {
                for (ch, &v) in x.row(t, f).iter().enumerate() {
                    let d = v - mean[ch];
                    var[ch] += d * d;
                }
            }
        }
        for v in &mut var {
            *v *= inv_n;
        }
        let eps: T = scalar(BN_EPSILON);
        let inv_std: Vec<T> = var.iter().map(|&v| (v + eps).sqrt().recip()).collect();

        let gamma = &p.get(&self.block("gamma")).data;
        let beta = &p.get(&self.block("beta")).data;
        let mut xhat = Tensor::zeros([l, w, c]);
        let mut y = Tensor::zeros([l, w, c]);
        for t in 0..l {
            for f in 0..w {
                let x_row = x.row(t, f);
                let xh_row = xhat.row_mut(t, f);
                for ch in 0..c {
                    xh_row[ch] = (x_row[ch] - mean[ch]) * inv_std[ch];
                }
                let y_row = y.row_mut(t, f);
                for ch in 0..c {
                    y_row[ch] = gamma[ch] * xh_row[ch] + beta[ch];
                }
            }
        }
        let update = StatsUpdate {
            mean_block: self.block("running_mean"),
            var_block: self.block("running_var"),
            mean,
            var,
        };
        (y, BatchNormCache { xhat, inv_std }, update)
    }

    pub fn forward_infer<T: Scalar>(&self, p: &ParamStore<T>, x: &Tensor<T>) -> Tensor<T> {
        let [l, w, c] = x.shape();
        let mean = &p.get(&self.block("running_mean")).data;
        let var = &p.get(&self.block("running_var")).data;
        let gamma = &p.get(&self.block("gamma")).data;
        let beta = &p.get(&self.block("beta")).data;
        let eps: T = scalar(BN_EPSILON);
        let scale: Vec<T> = (0..c)
            .map(|ch| gamma[ch] * (var[ch] + eps).sqrt().recip())
            .collect();
        let mut y = Tensor::zeros([l, w, c]);
        for t in 0..l {
            for f in 0..w {
                let x_row = x.row(t, f);
                let y_row = y.row_mut(t, f);
                for ch in 0..c {
                    y_row[ch] = scale[ch] * (x_row[ch] - mean[ch]) + beta[ch];
                }
            }
        }
        y
    }

    pub fn backward<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        cache: &BatchNormCache<T>,
        gout: &Tensor<T>,
        grads: &mut Grads<T>,
    ) -> Tensor<T> {
        let [l, w, c] = gout.shape();
        let n: T = scalar((l * w) as f64);
        let gamma = &p.get(&self.block("gamma")).data;

        let mut sum_g = vec![T::zero(); c];
        let mut sum_gx = vec![T::zero(); c];
        for t in 0..l {
            for f in 0..w {
                let g_row = gout.row(t, f);
                let xh_row = cache.xhat.row(t, f);
                for ch in 0..c {
                    sum_g[ch] += g_row[ch];
                    sum_gx[ch] += g_row[ch] * xh_row[ch];
                }
            }
        }
        {
            let gbeta = grads.block_mut(&self.block("beta"));
            for ch in 0..c {
                gbeta[ch] += sum_g[ch];
            }
        }
        {
            let ggamma = grads.block_mut(&self.block("gamma"));
            for ch in 0..c {
                ggamma[ch] += sum_gx[ch];
            }
        }

        // dx = gamma * inv_std / N * (N*g - sum_g - xhat * sum_gx)
        let mut gin = Tensor::zeros([l, w, c]);
        for t in 0..l {
            for f in 0..w {
                let g_row = gout.row(t, f);
                let xh_row = cache.xhat.row(t, f);
                let gi_row = gin.row_mut(t, f);
                for ch in 0..c {
                    gi_row[ch] = gamma[ch] * cache.inv_std[ch] / n
                        * (n * g_row[ch] - sum_g[ch] - xh_row[ch] * sum_gx[ch]);
                }
            }
        }
        gin
    }
}

/// Max pooling along the width (frequency) axis; ties route to the lowest
/// index on the backward pass.
#[derive(Debug, Clone)]
pub struct MaxPoolFreq {
    pub pool: usize,
}

pub struct MaxPoolCache {
    argmax: Vec<u32>,
    in_shape: [usize; 3],
}

impl MaxPoolFreq {
    pub fn new(pool: usize) -> Self {
        Self { pool }
    }

    pub fn forward<T: Scalar>(&self, x: &Tensor<T>) -> (Tensor<T>, MaxPoolCache) {
        let [l, w, c] = x.shape();
        assert_eq!(
            w % self.pool,
            0,
            "width {w} not divisible by pool {}",
            self.pool
        );
        let wo = w / self.pool;
        let mut out = Tensor::zeros([l, wo, c]);
        let mut argmax = vec![0u32; l * wo * c];
        for t in 0..l {
            for fo in 0..wo {
                let out_row = out.row_mut(t, fo);
                let arg_base = (t * wo + fo) * c;
                for (k, fi) in (fo * self.pool..(fo + 1) * self.pool).enumerate() {
                    let x_row = x.row(t, fi);
                    if k == 0 {
                        out_row.copy_from_slice(x_row);
                        for ch in 0..c {
                            argmax[arg_base + ch] = fi as u32;
                        }
                    } else {
                        for ch in 0..c {
                            if x_row[ch] > out_row[ch] {
                                out_row[ch] = x_row[ch];
                                argmax[arg_base + ch] = fi as u32;
                            }
                        }
                    }
                }
            }
        }
        (
            out,
            MaxPoolCache {
                argmax,
                in_shape: [l, w, c],
            },
        )
    }

    pub fn backward<T: Scalar>(&self, cache: &MaxPoolCache, gout: &Tensor<T>) -> Tensor<T> {
        let [l, wo, c] = gout.shape();
        let mut gin = Tensor::zeros(cache.in_shape);
        for t in 0..l {
            for fo in 0..wo {
                let g_row = gout.row(t, fo);
                let arg_base = (t * wo + fo) * c;
                for ch in 0..c {
                    let fi = cache.argmax[arg_base + ch] as usize;
                    let slot = gin.index(t, fi, ch);
                    gin.data_mut()[slot] += g_row[ch];
                }
            }
        }
        gin
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DenseActivation {
    Linear,
    Sigmoid,
}

/// Time-distributed affine map on `(L, in, 1)` tensors. Weight layout is
/// `[in, out]` with the output axis contiguous.
#[derive(Debug, Clone)]
pub struct Dense {
    pub name: String,
    pub input: usize,
    pub output: usize,
    pub activation: DenseActivation,
}

pub struct DenseCache<T> {
    input: Tensor<T>,
    output: Tensor<T>,
}

impl Dense {
    pub fn new(
        name: impl Into<String>,
        input: usize,
        output: usize,
        activation: DenseActivation,
    ) -> Self {
        Self {
            name: name.into(),
            input,
            output,
            activation,
        }
    }

    fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn block_shapes(&self) -> Vec<(String, Vec<usize>, bool)> {
        vec![
            (self.weight_name(), vec![self.input, self.output], true),
            (self.bias_name(), vec![self.output], true),
        ]
    }

    pub fn init<T: Scalar>(&self, store: &mut ParamStore<T>, rng: &mut ChaCha12Rng) {
        init_uniform(
            store,
            &self.weight_name(),
            vec![self.input, self.output],
            self.input,
            rng,
        );
        init_const(store, &self.bias_name(), vec![self.output], 0.0, true);
    }

    pub fn forward<T: Scalar>(&self, p: &ParamStore<T>, x: &Tensor<T>) -> (Tensor<T>, DenseCache<T>) {
        let [l, w_in, ch] = x.shape();
        assert_eq!(ch, 1, "{}: dense input must have one channel", self.name);
        assert_eq!(w_in, self.input, "{}: input width mismatch", self.name);
        let weight = &p.get(&self.weight_name()).data;
        let bias = &p.get(&self.bias_name()).data;
        let o = self.output;
        let mut y = Tensor::zeros([l, o, 1]);
        for t in 0..l {
            let x_row = &x.data()[t * w_in..(t + 1) * w_in];
            let y_row = &mut y.data_mut()[t * o..(t + 1) * o];
            y_row.copy_from_slice(bias);
            for (i, &xv) in x_row.iter().enumerate() {
                if xv == T::zero() {
                    continue;
                }
                let w_row = &weight[i * o..(i + 1) * o];
                for (j, &wv) in w_row.iter().enumerate() {
                    y_row[j] += xv * wv;
                }
            }
            if self.activation == DenseActivation::Sigmoid {
                for v in y_row.iter_mut() {
                    *v = T::one() / (T::one() + (-*v).exp());
                }
            }
        }
        let cache = DenseCache {
            input: x.clone(),
            output: y.clone(),
        };
        (y, cache)
    }

    pub fn backward<T: Scalar>(
        &self,
        p: &ParamStore<T>,
        cache: &DenseCache<T>,
        gout: &Tensor<T>,
        grads: &mut Grads<T>,
    ) -> Tensor<T> {
        let [l, o, _] = gout.shape();
        let w_in = self.input;
        let weight = &p.get(&self.weight_name()).data;
        let mut gin = Tensor::zeros([l, w_in, 1]);

        // Pre-activation gradient.
        let mut gpre = gout.clone();
        if self.activation == DenseActivation::Sigmoid {
            for (g, &y) in gpre.data_mut().iter_mut().zip(cache.output.data()) {
                *g *= y * (T::one() - y);
            }
        }

        {
            let gbias = grads.block_mut(&self.bias_name());
            for t in 0..l {
                let g_row = &gpre.data()[t * o..(t + 1) * o];
                for (j, &g) in g_row.iter().enumerate() {
                    gbias[j] += g;
                }
            }
        }
        let gweight = grads.block_mut(&self.weight_name());
        for t in 0..l {
            let g_row = &gpre.data()[t * o..(t + 1) * o];
            let x_row = &cache.input.data()[t * w_in..(t + 1) * w_in];
            let gx_row = &mut gin.data_mut()[t * w_in..(t + 1) * w_in];
            for i in 0..w_in {
                let xv = x_row[i];
                let w_row = &weight[i * o..(i + 1) * o];
                let gw_row = &mut gweight[i * o..(i + 1) * o];
                let mut acc = T::zero();
                for j in 0..o {
                    let g = g_row[j];
                    acc += w_row[j] * g;
                    gw_row[j] += xv * g;
                }
                gx_row[i] += acc;
            }
        }
        gin
    }
}

/// Inverted dropout: surviving activations are scaled by `1/(1-rate)` so the
/// expectation is unchanged; inference is the identity.
#[derive(Debug, Clone)]
pub struct Dropout {
    pub rate: f64,
}

impl Dropout {
    pub fn new(rate: f64) -> Self {
        assert!((0.0..1.0).contains(&rate), "dropout rate {rate} outside [0, 1)");
        Self { rate }
    }

    pub fn forward_train<T: Scalar>(
        &self,
        x: &Tensor<T>,
        rng: &mut ChaCha12Rng,
    ) -> (Tensor<T>, Vec<bool>) {
        if self.rate == 0.0 {
            return (x.clone(), Vec::new());
        }
        let keep_scale: T = scalar(1.0 / (1.0 - self.rate));
        let mut y = x.clone();
        let mask: Vec<bool> = (0..x.len())
            .map(|_| rng.random::<f64>() >= self.rate)
            .collect();
        for (v, &keep) in y.data_mut().iter_mut().zip(&mask) {
            *v = if keep { *v * keep_scale } else { T::zero() };
        }
        (y, mask)
    }

    pub fn backward<T: Scalar>(&self, mask: &[bool], gout: &Tensor<T>) -> Tensor<T> {
        if self.rate == 0.0 {
            return gout.clone();
        }
        let keep_scale: T = scalar(1.0 / (1.0 - self.rate));
        let mut gin = gout.clone();
        for (g, &keep) in gin.data_mut().iter_mut().zip(mask) {
            *g = if keep { *g * keep_scale } else { T::zero() };
        }
        gin
    }
}

/// Pad the width axis up to `target` by replicating the edge columns
/// (left-biased split). The backward pass folds pad gradients onto the
/// edges.
#[derive(Debug, Clone)]
pub struct EdgePadFreq {
    pub target: usize,
}

impl EdgePadFreq {
    pub fn new(target: usize) -> Self {
        Self { target }
    }

    pub fn forward<T: Scalar>(&self, x: &Tensor<T>) -> Tensor<T> {
        let [l, w, c] = x.shape();
        assert!(self.target >= w, "pad target below input width");
        let left = (self.target - w) / 2;
        let mut y = Tensor::zeros([l, self.target, c]);
        for t in 0..l {
            for fo in 0..self.target {
                let fi = fo.saturating_sub(left).min(w - 1);
                y.row_mut(t, fo).copy_from_slice(x.row(t, fi));
            }
        }
        y
    }

    pub fn backward<T: Scalar>(&self, in_shape: [usize; 3], gout: &Tensor<T>) -> Tensor<T> {
        let [l, w, c] = in_shape;
        let left = (self.target - w) / 2;
        let mut gin = Tensor::zeros(in_shape);
        for t in 0..l {
            for fo in 0..self.target {
                let fi = fo.saturating_sub(left).min(w - 1);
                let g_row = gout.row(t, fo);
                let gi_row = gin.row_mut(t, fi);
                for ch in 0..c {
                    gi_row[ch] += g_row[ch];
                }
            }
        }
        gin
    }
}

/// Loss values for one sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValues {
    pub mse: f64,
    pub bce: f64,
    pub total: f64,
}

pub const BCE_CLAMP: f64 = 1e-7;

/// Summed two-head loss: mean squared error on the pseudo-spectrum head plus
/// binary cross entropy on the DOA head, each averaged over the elements of
/// the first `valid_frames` frames. Returns the loss values and the
/// gradients with respect to both predictions (zero on padded frames).
pub fn losses<T: Scalar>(
    sps_pred: &Tensor<T>,
    sps_target: &Tensor<T>,
    doa_pred: &Tensor<T>,
    doa_target: &Tensor<T>,
    valid_frames: usize,
    weights: (f64, f64),
) -> (LossValues, Tensor<T>, Tensor<T>) {
    assert_eq!(sps_pred.shape(), sps_target.shape(), "SPS head shape mismatch");
    assert_eq!(doa_pred.shape(), doa_target.shape(), "DOA head shape mismatch");
    let valid = valid_frames.min(sps_pred.shape()[0]);

    let sps_width = sps_pred.shape()[1] * sps_pred.shape()[2];
    let n_sps = (valid * sps_width) as f64;
    let mut grad_sps = Tensor::zeros(sps_pred.shape());
    let mut mse = 0.0f64;
    if n_sps > 0.0 {
        let scale: T = scalar(weights.0 * 2.0 / n_sps);
        for t in 0..valid {
            for f in 0..sps_pred.shape()[1] {
                for c in 0..sps_pred.shape()[2] {
                    let d = sps_pred.at(t, f, c) - sps_target.at(t, f, c);
                    mse += d.to_f64().unwrap().powi(2);
                    grad_sps.set(t, f, c, d * scale);
                }
            }
        }
        mse /= n_sps;
    }

    let doa_width = doa_pred.shape()[1] * doa_pred.shape()[2];
    let n_doa = (valid * doa_width) as f64;
    let mut grad_doa = Tensor::zeros(doa_pred.shape());
    let mut bce = 0.0f64;
    if n_doa > 0.0 {
        let scale: T = scalar(weights.1 / n_doa);
        let lo: T = scalar(BCE_CLAMP);
        let hi: T = scalar(1.0 - BCE_CLAMP);
        for t in 0..valid {
            for f in 0..doa_pred.shape()[1] {
                for c in 0..doa_pred.shape()[2] {
                    let p = doa_pred.at(t, f, c).max(lo).min(hi);
                    let y = doa_target.at(t, f, c);
                    let pf = p.to_f64().unwrap();
                    let yf = y.to_f64().unwrap();
                    bce -= yf * pf.ln() + (1.0 - yf) * (1.0 - pf).ln();
                    grad_doa.set(t, f, c, (-(y / p) + (T::one() - y) / (T::one() - p)) * scale);
                }
            }
        }
        bce /= n_doa;
    }

    let total = weights.0 * mse + weights.1 * bce;
    (LossValues { mse, bce, total }, grad_sps, grad_doa)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::testutil::{check_input_gradient, check_param_gradients, seeded_tensor};
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;

    #[test]
    fn conv_identity_kernel_passes_through() {
        let conv = Conv2d::new("c", 3, 3);
        let mut p = ParamStore::<f64>::new();
        let mut kernel = vec![0.0; 3 * 3 * 3 * 3];
        // Center tap (dt=1, df=1), diagonal channels.
        for ch in 0..3 {
            kernel[((1 * 3 + 1) * 3 + ch) * 3 + ch] = 1.0;
        }
        p.insert("c.kernel", vec![3, 3, 3, 3], kernel, true);
        p.insert("c.bias", vec![3], vec![0.0; 3], true);
        let x = seeded_tensor([5, 7, 3], 1);
        let y = conv.forward(&p, &x);
        for (a, b) in y.data().iter().zip(x.data()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn conv_zero_input_yields_bias_map() {
        let conv = Conv2d::new("c", 2, 4);
        let mut p = ParamStore::<f64>::new();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        conv.init(&mut p, &mut rng);
        p.get_mut("c.bias").data = vec![0.5, -1.0, 0.0, 2.0];
        let x = Tensor::zeros([3, 4, 2]);
        let y = conv.forward(&p, &x);
        for t in 0..3 {
            for f in 0..4 {
                assert_eq!(y.row(t, f), &[0.5, -1.0, 0.0, 2.0]);
            }
        }
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let conv = Conv2d::new("c", 3, 2);
        let mut p = ParamStore::<f64>::new();
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        conv.init(&mut p, &mut rng);
        let x = seeded_tensor([6, 8, 3], 2);
        let fwd = |p: &ParamStore<f64>, x: &Tensor<f64>| conv.forward(p, x);
        let bwd = |p: &ParamStore<f64>, x: &Tensor<f64>, g: &Tensor<f64>, grads: &mut Grads<f64>| {
            conv.backward(p, x, g, grads)
        };
        check_param_gradients(&p, &x, fwd, bwd, 40);
        check_input_gradient(&p, &x, fwd, bwd, 40);
    }

    #[test]
    fn batchnorm_standardized_input_is_identity() {
        let bn = BatchNorm::new("b", 2);
        let mut p = ParamStore::<f64>::new();
        bn.init(&mut p);
        // Construct a zero-mean unit-variance batch per channel.
        let vals = [-1.5, -0.5, 0.5, 1.5];
        let norm = (vals.iter().map(|v| v * v).sum::<f64>() / 4.0).sqrt();
        let mut x = Tensor::zeros([4, 1, 2]);
        for (t, v) in vals.iter().enumerate() {
            x.set(t, 0, 0, v / norm);
            x.set(t, 0, 1, -v / norm);
        }
        let (y, _, update) = bn.forward_train(&p, &x);
        for (a, b) in y.data().iter().zip(x.data()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-4);
        }
        assert_abs_diff_eq!(update.mean[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(update.var[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn batchnorm_constant_input_collapses_to_beta() {
        let bn = BatchNorm::new("b", 1);
        let mut p = ParamStore::<f64>::new();
        bn.init(&mut p);
        p.get_mut("b.beta").data = vec![0.7];
        let x = Tensor::from_vec([5, 3, 1], vec![4.25; 15]);
        let (y, _, _) = bn.forward_train(&p, &x);
        for &v in y.data() {
            assert_abs_diff_eq!(v, 0.7, epsilon = 1e-9);
        }
    }

    #[test]
    fn batchnorm_gradients_match_finite_differences() {
        let bn = BatchNorm::new("b", 3);
        let mut p = ParamStore::<f64>::new();
        bn.init(&mut p);
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        p.get_mut("b.gamma")
            .data
            .iter_mut()
            .for_each(|v| *v = rng.random_range(0.5..1.5));
        p.get_mut("b.beta")
            .data
            .iter_mut()
            .for_each(|v| *v = rng.random_range(-0.5..0.5));
        let x = seeded_tensor([4, 5, 3], 6);
        let fwd = |p: &ParamStore<f64>, x: &Tensor<f64>| {
            let (y, cache, _) = bn.forward_train(p, x);
            (y, cache)
        };
        let bwd = |p: &ParamStore<f64>,
                   cache: &BatchNormCache<f64>,
                   g: &Tensor<f64>,
                   grads: &mut Grads<f64>| bn.backward(p, cache, g, grads);
        check_param_gradients(&p, &x, fwd, bwd, 12);
        check_input_gradient(&p, &x, fwd, bwd, 40);
    }

    #[test]
    fn maxpool_shapes_and_identity() {
        let x = seeded_tensor([2, 8, 3], 9);
        let (y1, _) = MaxPoolFreq::new(1).forward(&x);
        assert_eq!(y1, x);
        let (y, _) = MaxPoolFreq::new(4).forward(&x);
        assert_eq!(y.shape(), [2, 2, 3]);
        assert!(MaxPoolFreq::new(2).forward(&seeded_tensor([1, 4, 1], 0)).0.shape() == [1, 2, 1]);
    }

    #[test]
    fn maxpool_ties_route_to_lowest_index() {
        let x = Tensor::from_vec([1, 4, 1], vec![3.0, 3.0, 1.0, 3.0]);
        let pool = MaxPoolFreq::new(4);
        let (y, cache) = pool.forward(&x);
        assert_eq!(y.data(), &[3.0]);
        let gin = pool.backward(&cache, &Tensor::from_vec([1, 1, 1], vec![1.0]));
        assert_eq!(gin.data(), &[1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn maxpool_gradients_match_finite_differences() {
        let pool = MaxPoolFreq::new(2);
        let p = ParamStore::<f64>::new();
        let x = seeded_tensor([3, 8, 2], 14);
        let fwd = |_: &ParamStore<f64>, x: &Tensor<f64>| pool.forward(x);
        let bwd = |_: &ParamStore<f64>,
                   cache: &MaxPoolCache,
                   g: &Tensor<f64>,
                   _grads: &mut Grads<f64>| pool.backward(cache, g);
        check_input_gradient(&p, &x, fwd, bwd, 40);
    }

    #[test]
    fn dense_identity_and_sigmoid_midpoint() {
        let dense = Dense::new("d", 3, 3, DenseActivation::Linear);
        let mut p = ParamStore::<f64>::new();
        let mut w = vec![0.0; 9];
        for i in 0..3 {
            w[i * 3 + i] = 1.0;
        }
        p.insert("d.weight", vec![3, 3], w, true);
        p.insert("d.bias", vec![3], vec![0.0; 3], true);
        let x = seeded_tensor([4, 3, 1], 21);
        let (y, _) = dense.forward(&p, &x);
        for (a, b) in y.data().iter().zip(x.data()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }

        let sig = Dense::new("s", 2, 5, DenseActivation::Sigmoid);
        let mut p = ParamStore::<f64>::new();
        p.insert("s.weight", vec![2, 5], vec![0.0; 10], true);
        p.insert("s.bias", vec![5], vec![0.0; 5], true);
        let (y, _) = sig.forward(&p, &seeded_tensor([3, 2, 1], 22));
        for &v in y.data() {
            assert_abs_diff_eq!(v, 0.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn dense_gradients_match_finite_differences() {
        for activation in [DenseActivation::Linear, DenseActivation::Sigmoid] {
            let dense = Dense::new("d", 4, 3, activation);
            let mut p = ParamStore::<f64>::new();
            let mut rng = ChaCha12Rng::seed_from_u64(31);
            dense.init(&mut p, &mut rng);
            let x = seeded_tensor([5, 4, 1], 32);
            let fwd = |p: &ParamStore<f64>, x: &Tensor<f64>| dense.forward(p, x);
            let bwd = |p: &ParamStore<f64>,
                       cache: &DenseCache<f64>,
                       g: &Tensor<f64>,
                       grads: &mut Grads<f64>| dense.backward(p, cache, g, grads);
            check_param_gradients(&p, &x, fwd, bwd, 30);
            check_input_gradient(&p, &x, fwd, bwd, 30);
        }
    }

    #[test]
    fn dropout_statistics_and_expectation() {
        let drop = Dropout::new(0.25);
        let mut rng = ChaCha12Rng::seed_from_u64(41);
        let x = Tensor::<f64>::from_vec([100, 100, 1], vec![1.0; 10_000]);
        let (y, mask) = drop.forward_train(&x, &mut rng);
        let zeroed = mask.iter().filter(|&&k| !k).count() as f64 / mask.len() as f64;
        assert!((zeroed - 0.25).abs() <= 0.02, "zeroed fraction {zeroed}");
        let mean = y.data().iter().sum::<f64>() / y.len() as f64;
        assert!((mean - 1.0).abs() <= 0.01, "post-dropout mean {mean}");
    }

    #[test]
    fn edge_pad_round_trip_gradient() {
        let pad = EdgePadFreq::new(9);
        let x = seeded_tensor([2, 5, 2], 55);
        let y = pad.forward(&x);
        assert_eq!(y.shape(), [2, 9, 2]);
        // Left pad replicates column 0, right pad replicates column 4.
        assert_eq!(y.row(0, 0), x.row(0, 0));
        assert_eq!(y.row(0, 1), x.row(0, 0));
        assert_eq!(y.row(0, 2), x.row(0, 0));
        assert_eq!(y.row(0, 8), x.row(0, 4));
        let p = ParamStore::<f64>::new();
        let fwd = |_: &ParamStore<f64>, x: &Tensor<f64>| (pad.forward(x), x.shape());
        let bwd = |_: &ParamStore<f64>,
                   shape: &[usize; 3],
                   g: &Tensor<f64>,
                   _grads: &mut Grads<f64>| pad.backward(*shape, g);
        check_input_gradient(&p, &x, fwd, bwd, 30);
    }

    #[test]
    fn loss_reference_values() {
        let sps = seeded_tensor([2, 4, 1], 60);
        let doa = Tensor::<f64>::from_vec([2, 3, 1], vec![0.5; 6]);
        let target = Tensor::<f64>::from_vec([2, 3, 1], vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let (vals, gs, _gd) = losses(&sps, &sps, &doa, &target, 2, (1.0, 1.0));
        assert_abs_diff_eq!(vals.mse, 0.0);
        assert_abs_diff_eq!(vals.bce, std::f64::consts::LN_2, epsilon = 1e-12);
        assert!(gs.data().iter().all(|&g| g == 0.0));

        // Perfect hard predictions sit at the clamp floor.
        let (vals, _, _) = losses(&sps, &sps, &target, &target, 2, (1.0, 1.0));
        assert!(vals.bce > 0.0 && vals.bce < 2.0 * BCE_CLAMP * 1.01 + 1e-9);
    }

    #[test]
    fn loss_masks_padded_frames() {
        let sps_pred = Tensor::<f64>::from_vec([2, 2, 1], vec![1.0, 1.0, 9.0, 9.0]);
        let sps_target = Tensor::<f64>::zeros([2, 2, 1]);
        let doa = Tensor::<f64>::from_vec([2, 2, 1], vec![0.5; 4]);
        let (vals, gs, gd) = losses(&sps_pred, &sps_target, &doa, &doa, 1, (1.0, 1.0));
        // Only the first frame contributes.
        assert_abs_diff_eq!(vals.mse, 1.0, epsilon = 1e-12);
        assert!(gs.data()[2] == 0.0 && gs.data()[3] == 0.0);
        assert!(gd.data()[2] == 0.0 && gd.data()[3] == 0.0);
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(71);
        let sps_pred = seeded_tensor([3, 5, 1], 72);
        let sps_target = seeded_tensor([3, 5, 1], 73);
        let mut doa_pred = Tensor::<f64>::zeros([3, 4, 1]);
        for v in doa_pred.data_mut() {
            *v = rng.random_range(0.05..0.95);
        }
        let mut doa_target = Tensor::<f64>::zeros([3, 4, 1]);
        for v in doa_target.data_mut() {
            *v = if rng.random::<f64>() < 0.3 { 1.0 } else { 0.0 };
        }
        let (_, gs, gd) = losses(&sps_pred, &sps_target, &doa_pred, &doa_target, 2, (1.0, 1.0));
        let h = 1e-6;
        for idx in [0usize, 3, 7, 11] {
            let mut plus = sps_pred.clone();
            plus.data_mut()[idx] += h;
            let mut minus = sps_pred.clone();
            minus.data_mut()[idx] -= h;
            let lp = losses(&plus, &sps_target, &doa_pred, &doa_target, 2, (1.0, 1.0)).0.total;
            let lm = losses(&minus, &sps_target, &doa_pred, &doa_target, 2, (1.0, 1.0)).0.total;
            let fd = (lp - lm) / (2.0 * h);
            assert_abs_diff_eq!(gs.data()[idx], fd, epsilon = 1e-6);
        }
        for idx in [0usize, 5, 9] {
            let mut plus = doa_pred.clone();
            plus.data_mut()[idx] += h;
            let mut minus = doa_pred.clone();
            minus.data_mut()[idx] -= h;
            let lp = losses(&sps_pred, &sps_target, &plus, &doa_target, 2, (1.0, 1.0)).0.total;
            let lm = losses(&sps_pred, &sps_target, &minus, &doa_target, 2, (1.0, 1.0)).0.total;
            let fd = (lp - lm) / (2.0 * h);
            assert_abs_diff_eq!(gd.data()[idx], fd, epsilon = 1e-6);
        }
    }
}
