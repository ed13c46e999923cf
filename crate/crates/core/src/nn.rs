//! Differentiable building blocks with explicit backward passes.
//!
//! Layers do not store activations; callers keep whatever the backward pass
//! needs (usually the layer input) and hand it back. Parameter gradients
//! accumulate into [`Param::grad`] until [`Parameters::zero_grad`].

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use alloc::format;

use rand::Rng;

use crate::error::{Error, Result};
use crate::math;

/// Row-major `rows x cols` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Mat {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Mat { rows, cols, data }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn add_assign(&mut self, other: &Mat) {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += b);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// A trainable tensor and its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
}

impl Param {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Param { shape: shape.to_vec(), value: vec![0.0; n], grad: vec![0.0; n] }
    }

    pub fn filled(shape: &[usize], v: f64) -> Self {
        let mut p = Self::zeros(shape);
        p.value.fill(v);
        p
    }

    /// Uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn fan_in_uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(shape);
        let bound = 1.0 / math::sqrt(fan_in.max(1) as f64);
        p.value.iter_mut().for_each(|v| *v = rng.random_range(-bound..bound));
        p
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Named traversal over every trainable tensor, in a fixed order.
pub trait Parameters {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param));

    fn zero_grad(&mut self) {
        self.visit_mut("", &mut |_, p| p.grad.fill(0.0));
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, p| n += p.len());
        n
    }

    fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit("", &mut |name, _| names.push(String::from(name)));
        names
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        String::from(name)
    } else {
        format!("{prefix}.{name}")
    }
}

/// 1-D convolution over time with "same" zero padding.
/// Input `in_ch x T`, output `out_ch x T`, weight `[out_ch, in_ch, kernel]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub dilation: usize,
    pub weight: Param,
    pub bias: Param,
}

impl Conv1d {
    pub fn new<R: Rng + ?Sized>(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        dilation: usize,
        rng: &mut R,
    ) -> Self {
        assert!(kernel % 2 == 1, "odd kernel keeps 'same' padding symmetric");
        let fan_in = in_ch * kernel;
        Conv1d {
            in_ch,
            out_ch,
            kernel,
            dilation,
            weight: Param::fan_in_uniform(&[out_ch, in_ch, kernel], fan_in, rng),
            bias: Param::fan_in_uniform(&[out_ch], fan_in, rng),
        }
    }

    /// Offset of tap `k` relative to the output position.
    fn shift(&self, k: usize) -> isize {
        (k as isize - (self.kernel / 2) as isize) * self.dilation as isize
    }

    /// Output positions `t` for which `t + shift` stays inside `0..len`.
    fn valid(shift: isize, len: usize) -> core::ops::Range<usize> {
        let lo = (-shift).max(0) as usize;
        let hi = (len as isize - shift.max(0)).max(0) as usize;
        lo.min(hi)..hi
    }

    pub fn forward(&self, x: &Mat) -> Result<Mat> {
        if x.rows != self.in_ch {
            return Err(Error::Shape(format!(
                "convolution expects {} input channels, got {}",
                self.in_ch, x.rows
            )));
        }
        let t_len = x.cols;
        let mut y = Mat::zeros(self.out_ch, t_len);
        for o in 0..self.out_ch {
            let yo = &mut y.data[o * t_len..(o + 1) * t_len];
            yo.fill(self.bias.value[o]);
            for i in 0..self.in_ch {
                let xi = x.row(i);
                for k in 0..self.kernel {
                    let w = self.weight.value[(o * self.in_ch + i) * self.kernel + k];
                    let s = self.shift(k);
                    for t in Self::valid(s, t_len) {
                        yo[t] += w * xi[(t as isize + s) as usize];
                    }
                }
            }
        }
        Ok(y)
    }

    pub fn backward(&mut self, x: &Mat, dy: &Mat) -> Mat {
        let t_len = x.cols;
        let mut dx = Mat::zeros(self.in_ch, t_len);
        for o in 0..self.out_ch {
            let dyo = dy.row(o);
            self.bias.grad[o] += dyo.iter().sum::<f64>();
            for i in 0..self.in_ch {
                let xi = x.row(i);
                for k in 0..self.kernel {
                    let widx = (o * self.in_ch + i) * self.kernel + k;
                    let w = self.weight.value[widx];
                    let s = self.shift(k);
                    let mut g = 0.0;
                    let dxi = &mut dx.data[i * t_len..(i + 1) * t_len];
                    for t in Self::valid(s, t_len) {
                        let src = (t as isize + s) as usize;
                        g += dyo[t] * xi[src];
                        dxi[src] += w * dyo[t];
                    }
                    self.weight.grad[widx] += g;
                }
            }
        }
        dx
    }
}

impl Parameters for Conv1d {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

/// Affine map applied to each row: `y = x W^T + b`, weight `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub input: usize,
    pub output: usize,
    pub weight: Param,
    pub bias: Param,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(input: usize, output: usize, rng: &mut R) -> Self {
        Linear {
            input,
            output,
            weight: Param::fan_in_uniform(&[output, input], input, rng),
            bias: Param::fan_in_uniform(&[output], input, rng),
        }
    }

    pub fn forward(&self, x: &Mat) -> Result<Mat> {
        if x.cols != self.input {
            return Err(Error::Shape(format!(
                "linear layer expects width {}, got {}",
                self.input, x.cols
            )));
        }
        let mut y = Mat::zeros(x.rows, self.output);
        for r in 0..x.rows {
            let xr = x.row(r);
            let yr = y.row_mut(r);
            for (o, yo) in yr.iter_mut().enumerate() {
                let w = &self.weight.value[o * self.input..(o + 1) * self.input];
                *yo = self.bias.value[o] + w.iter().zip(xr).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        Ok(y)
    }

    pub fn backward(&mut self, x: &Mat, dy: &Mat) -> Mat {
        let mut dx = Mat::zeros(x.rows, self.input);
        for r in 0..x.rows {
            let xr = x.row(r);
            let dyr = dy.row(r);
            let dxr = &mut dx.data[r * self.input..(r + 1) * self.input];
            for (o, &g) in dyr.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                self.bias.grad[o] += g;
                let base = o * self.input;
                let w = &self.weight.value[base..base + self.input];
                let gw = &mut self.weight.grad[base..base + self.input];
                for j in 0..self.input {
                    gw[j] += g * xr[j];
                    dxr[j] += g * w[j];
                }
            }
        }
        dx
    }
}

impl Parameters for Linear {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "weight"), &self.weight);
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "weight"), &mut self.weight);
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

/// Layer normalization over each row, with learned gain and offset.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub dim: usize,
    pub gamma: Param,
    pub beta: Param,
    pub eps: f64,
}

/// Per-row normalized values and inverse standard deviations.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormCache {
    xhat: Mat,
    inv_std: Vec<f64>,
}

impl LayerNorm {
    pub fn new(dim: usize) -> Self {
        LayerNorm { dim, gamma: Param::filled(&[dim], 1.0), beta: Param::zeros(&[dim]), eps: 1e-5 }
    }

    pub fn forward(&self, x: &Mat) -> Result<(Mat, LayerNormCache)> {
        if x.cols != self.dim {
            return Err(Error::Shape(format!("layer norm expects width {}, got {}", self.dim, x.cols)));
        }
        let n = self.dim as f64;
        let mut xhat = Mat::zeros(x.rows, x.cols);
        let mut y = Mat::zeros(x.rows, x.cols);
        let mut inv_std = Vec::with_capacity(x.rows);
        for r in 0..x.rows {
            let xr = x.row(r);
            let mean = xr.iter().sum::<f64>() / n;
            let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
            let is = 1.0 / math::sqrt(var + self.eps);
            inv_std.push(is);
            for j in 0..self.dim {
                let h = (xr[j] - mean) * is;
                xhat.data[r * self.dim + j] = h;
                y.data[r * self.dim + j] = h * self.gamma.value[j] + self.beta.value[j];
            }
        }
        Ok((y, LayerNormCache { xhat, inv_std }))
    }

    pub fn backward(&mut self, cache: &LayerNormCache, dy: &Mat) -> Mat {
        let n = self.dim as f64;
        let mut dx = Mat::zeros(dy.rows, dy.cols);
        for r in 0..dy.rows {
            let dyr = dy.row(r);
            let xh = cache.xhat.row(r);
            let mut dxhat = vec![0.0; self.dim];
            for j in 0..self.dim {
                self.gamma.grad[j] += dyr[j] * xh[j];
                self.beta.grad[j] += dyr[j];
                dxhat[j] = dyr[j] * self.gamma.value[j];
            }
            let mean_d = dxhat.iter().sum::<f64>() / n;
            let mean_dx = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / n;
            let is = cache.inv_std[r];
            for j in 0..self.dim {
                dx.data[r * self.dim + j] = is * (dxhat[j] - mean_d - xh[j] * mean_dx);
            }
        }
        dx
    }
}

impl Parameters for LayerNorm {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Param)) {
        f(&join(prefix, "gamma"), &self.gamma);
        f(&join(prefix, "beta"), &self.beta);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Param)) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
    }
}

pub fn relu(x: &Mat) -> Mat {
    Mat { data: x.data.iter().map(|&v| v.max(0.0)).collect(), ..*x }
}

/// Gradient through a rectifier given its pre-activation.
pub fn relu_backward(pre: &Mat, dy: &Mat) -> Mat {
    Mat {
        data: pre.data.iter().zip(&dy.data).map(|(&p, &g)| if p > 0.0 { g } else { 0.0 }).collect(),
        ..*dy
    }
}

/// Inverted-dropout mask (`0` or `1 / (1 - p)` per element), or `None` when
/// dropout is inactive.
pub fn dropout_mask<R: Rng + ?Sized>(len: usize, p: f64, rng: Option<&mut R>) -> Option<Vec<f64>> {
    let rng = rng?;
    if p <= 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - p);
    Some((0..len).map(|_| if rng.random::<f64>() < p { 0.0 } else { keep }).collect())
}

pub fn apply_mask(x: &mut [f64], mask: Option<&Vec<f64>>) {
    if let Some(m) = mask {
        x.iter_mut().zip(m).for_each(|(v, k)| *v *= k);
    }
}

/// Softmax of one row.
pub fn softmax(xs: &[f64]) -> Vec<f64> {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = xs.iter().map(|&x| math::exp(x - max)).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Backward of a row softmax: `dx = p * (dy - <dy, p>)`.
pub fn softmax_backward(p: &[f64], dy: &[f64]) -> Vec<f64> {
    let dot: f64 = p.iter().zip(dy).map(|(a, b)| a * b).sum();
    p.iter().zip(dy).map(|(pi, gi)| pi * (gi - dot)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    /// Central differences of `sum(r * f(x))` with respect to `x`.
    fn fd_input(f: &dyn Fn(&Mat) -> Mat, x: &Mat, r: &Mat) -> Vec<f64> {
        let h = 1e-6;
        (0..x.data.len())
            .map(|i| {
                let mut xp = x.clone();
                xp.data[i] += h;
                let mut xm = x.clone();
                xm.data[i] -= h;
                let fp: f64 = f(&xp).data.iter().zip(&r.data).map(|(a, b)| a * b).sum();
                let fm: f64 = f(&xm).data.iter().zip(&r.data).map(|(a, b)| a * b).sum();
                (fp - fm) / (2.0 * h)
            })
            .collect()
    }

    fn random_mat(rows: usize, cols: usize, seed: u64) -> Mat {
        let mut g = rng::derived(seed, 0, 0);
        Mat::from_vec(rows, cols, (0..rows * cols).map(|_| g.random_range(-1.0..1.0)).collect())
    }

    #[test]
    fn conv_identity_kernel() {
        let mut g = rng::derived(0, 0, 0);
        let mut conv = Conv1d::new(1, 1, 3, 2, &mut g);
        conv.weight.value = vec![0.0, 1.0, 0.0];
        conv.bias.value = vec![0.5];
        let x = Mat::from_vec(1, 4, vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(conv.forward(&x).unwrap().data, vec![1.5, 2.5, 3.5, 4.5]);
        conv.weight.value = vec![1.0, 0.0, 0.0];
        conv.bias.value = vec![0.0];
        // dilation 2: y[t] = x[t - 2]
        assert_eq!(conv.forward(&x).unwrap().data, vec![0.0, 0.0, 1.0, 2.0]);
    }

    #[test]
    fn conv_input_gradient() {
        let mut g = rng::derived(1, 0, 0);
        let mut conv = Conv1d::new(3, 2, 3, 2, &mut g);
        let x = random_mat(3, 7, 2);
        let r = random_mat(2, 7, 3);
        let dx = conv.backward(&x, &r);
        let fd = fd_input(&|x| conv.forward(x).unwrap(), &x, &r);
        for (a, b) in dx.data.iter().zip(&fd) {
            assert!((a - b).abs() < 1e-7, "{a} vs {b}");
        }
    }

    #[test]
    fn layer_norm_input_gradient() {
        let mut ln = LayerNorm::new(5);
        ln.gamma.value = vec![0.5, 1.5, -1.0, 2.0, 1.0];
        let x = random_mat(2, 5, 4);
        let r = random_mat(2, 5, 5);
        let (_, cache) = ln.forward(&x).unwrap();
        let dx = ln.backward(&cache, &r);
        let fd = fd_input(&|x| ln.forward(x).unwrap().0, &x, &r);
        for (a, b) in dx.data.iter().zip(&fd) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn linear_input_gradient() {
        let mut g = rng::derived(6, 0, 0);
        let mut lin = Linear::new(4, 3, &mut g);
        let x = random_mat(2, 4, 7);
        let r = random_mat(2, 3, 8);
        let dx = lin.backward(&x, &r);
        let fd = fd_input(&|x| lin.forward(x).unwrap(), &x, &r);
        for (a, b) in dx.data.iter().zip(&fd) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn softmax_sums_to_one() {
        let p = softmax(&[1000.0, 999.0, -5.0]);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shape_errors() {
        let mut g = rng::derived(0, 0, 0);
        let conv = Conv1d::new(2, 2, 3, 1, &mut g);
        assert!(matches!(conv.forward(&Mat::zeros(3, 4)), Err(Error::Shape(_))));
        let lin = Linear::new(2, 2, &mut g);
        assert!(lin.forward(&Mat::zeros(1, 3)).is_err());
    }
}
