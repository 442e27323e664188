//! Differentiable layer primitives: 3×3 same-padded convolution, 2×2 max
//! pooling, ReLU, inverted dropout, affine maps and row-wise softmax.
//!
//! Spatial primitives work on batched `[B, C, H, W]` tensors. The free
//! functions at the bottom of the module take single `[C, H, W]` samples.

use rand::Rng;

use crate::autodiff::{Graph, Primitive, Tensor, Var};
use crate::error::{Error, Result};

pub const KERNEL: usize = 3;
const TAPS: usize = KERNEL * KERNEL;

/// `c = a · b + beta · c` for strided row/column-major views.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    (rsa, csa): (usize, usize),
    b: &[f64],
    (rsb, csb): (usize, usize),
    beta: f64,
    c: &mut [f64],
) {
    assert!(m == 0 || k == 0 || (m - 1) * rsa + (k - 1) * csa < a.len());
    assert!(k == 0 || n == 0 || (k - 1) * rsb + (n - 1) * csb < b.len());
    assert!(c.len() >= m * n);
    // SAFETY: the asserts above keep every strided access inside the slices,
    // and `c` is a contiguous row-major m×n block that does not alias a or b.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn dims4(context: &str, t: &Tensor) -> Result<[usize; 4]> {
    match *t.shape() {
        [b, c, h, w] => Ok([b, c, h, w]),
        _ => Err(Error::Invalid(format!(
            "{context} expects a [B, C, H, W] tensor, got {:?}",
            t.shape()
        ))),
    }
}

/// Unfolds `[B, C, H, W]` into a `[C·9, B·H·W]` patch matrix with zero padding.
fn im2col(x: &[f64], [batch, chans, h, w]: [usize; 4]) -> Vec<f64> {
    let hw = h * w;
    let ncols = batch * hw;
    let mut cols = vec![0.0; chans * TAPS * ncols];
    for c in 0..chans {
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = (c * TAPS + ky * KERNEL + kx) * ncols;
                let (x_lo, x_hi) = (1usize.saturating_sub(kx), (w + 1 - kx).min(w));
                for b in 0..batch {
                    let src = &x[(b * chans + c) * hw..][..hw];
                    for y in 0..h {
                        let sy = y + ky;
                        if sy < 1 || sy > h {
                            continue;
                        }
                        let sy = sy - 1;
                        let dst = row + b * hw + y * w;
                        for xx in x_lo..x_hi {
                            cols[dst + xx] = src[sy * w + xx + kx - 1];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: folds patch gradients back onto the input grid.
fn col2im(cols: &[f64], [batch, chans, h, w]: [usize; 4]) -> Vec<f64> {
    let hw = h * w;
    let ncols = batch * hw;
    let mut x = vec![0.0; batch * chans * hw];
    for c in 0..chans {
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = (c * TAPS + ky * KERNEL + kx) * ncols;
                let (x_lo, x_hi) = (1usize.saturating_sub(kx), (w + 1 - kx).min(w));
                for b in 0..batch {
                    let base = (b * chans + c) * hw;
                    for y in 0..h {
                        let sy = y + ky;
                        if sy < 1 || sy > h {
                            continue;
                        }
                        let sy = sy - 1;
                        let src = row + b * hw + y * w;
                        for xx in x_lo..x_hi {
                            x[base + sy * w + xx + kx - 1] += cols[src + xx];
                        }
                    }
                }
            }
        }
    }
    x
}

/// Zero-padded ("same") 3×3 convolution, stride 1.
///
/// Operands: input `[B, C_in, H, W]`, filters `[C_out, C_in, 3, 3]`,
/// biases `[C_out]`. Output: `[B, C_out, H, W]`.
#[derive(Debug, Clone, Copy)]
pub struct Conv2d;

impl Conv2d {
    fn check(inputs: &[&Tensor]) -> Result<([usize; 4], usize)> {
        let dims = dims4("conv2d", inputs[0])?;
        let [c_out, c_in, kh, kw] = dims4("conv2d filters", inputs[1])?;
        if kh != KERNEL || kw != KERNEL {
            return Err(Error::Invalid(format!("conv2d kernel must be 3x3, got {kh}x{kw}")));
        }
        if c_in != dims[1] {
            return Err(Error::Invalid(format!(
                "conv2d channel mismatch: input has {} channels, filters expect {c_in}",
                dims[1]
            )));
        }
        inputs[2].expect_shape("conv2d biases", &[c_out])?;
        Ok((dims, c_out))
    }
}

impl Primitive for Conv2d {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let (dims @ [batch, c_in, h, w], c_out) = Self::check(inputs)?;
        let hw = h * w;
        let ncols = batch * hw;
        let cols = im2col(inputs[0].data(), dims);
        let mut prod = vec![0.0; c_out * ncols];
        let k = c_in * TAPS;
        gemm(c_out, k, ncols, inputs[1].data(), (k, 1), &cols, (ncols, 1), 0.0, &mut prod);

        let bias = inputs[2].data();
        let mut out = vec![0.0; batch * c_out * hw];
        for b in 0..batch {
            for co in 0..c_out {
                let src = &prod[co * ncols + b * hw..][..hw];
                let dst = &mut out[(b * c_out + co) * hw..][..hw];
                for (d, s) in dst.iter_mut().zip(src) {
                    *d = s + bias[co];
                }
            }
        }
        Tensor::new([batch, c_out, h, w], out)
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor) -> Result<Vec<Tensor>> {
        let (dims @ [batch, c_in, h, w], c_out) = Self::check(inputs)?;
        let hw = h * w;
        let ncols = batch * hw;
        let k = c_in * TAPS;

        // [B, C_out, HW] -> [C_out, B·HW]
        let g = grad.data();
        let mut gmat = vec![0.0; c_out * ncols];
        let mut dbias = vec![0.0; c_out];
        for b in 0..batch {
            for co in 0..c_out {
                let src = &g[(b * c_out + co) * hw..][..hw];
                gmat[co * ncols + b * hw..][..hw].copy_from_slice(src);
                dbias[co] += src.iter().sum::<f64>();
            }
        }

        let cols = im2col(inputs[0].data(), dims);
        let mut dfilters = vec![0.0; c_out * k];
        gemm(c_out, ncols, k, &gmat, (ncols, 1), &cols, (1, ncols), 0.0, &mut dfilters);
        drop(cols);

        let mut dcols = vec![0.0; k * ncols];
        gemm(k, c_out, ncols, inputs[1].data(), (1, k), &gmat, (ncols, 1), 0.0, &mut dcols);
        let dx = col2im(&dcols, dims);

        Ok(vec![
            Tensor::new(inputs[0].shape(), dx)?,
            Tensor::new(inputs[1].shape(), dfilters)?,
            Tensor::new([c_out], dbias)?,
        ])
    }
}

/// Non-overlapping 2×2 max pooling with stride 2. A trailing odd row or
/// column is dropped; on ties the first entry in row-major order wins.
#[derive(Debug, Clone, Copy)]
pub struct MaxPool2;

impl MaxPool2 {
    fn check(x: &Tensor) -> Result<[usize; 4]> {
        let dims = dims4("maxpool2", x)?;
        if dims[2] < 2 || dims[3] < 2 {
            return Err(Error::Invalid(format!(
                "maxpool2 needs at least 2x2 spatial extent, got {}x{}",
                dims[2], dims[3]
            )));
        }
        Ok(dims)
    }

    /// Flat input index of the winner of every output cell.
    fn argmax(x: &Tensor) -> Result<(Vec<usize>, [usize; 4])> {
        let [batch, chans, h, w] = Self::check(x)?;
        let (oh, ow) = (h / 2, w / 2);
        let data = x.data();
        let mut winners = Vec::with_capacity(batch * chans * oh * ow);
        for plane in 0..batch * chans {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let top = base + 2 * oy * w + 2 * ox;
                    let mut best = top;
                    for cand in [top + 1, top + w, top + w + 1] {
                        if data[cand] > data[best] {
                            best = cand;
                        }
                    }
                    winners.push(best);
                }
            }
        }
        Ok((winners, [batch, chans, oh, ow]))
    }
}

impl Primitive for MaxPool2 {
    fn name(&self) -> &'static str {
        "maxpool2"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let (winners, shape) = Self::argmax(inputs[0])?;
        let data = inputs[0].data();
        Tensor::new(shape, winners.iter().map(|&i| data[i]).collect())
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor) -> Result<Vec<Tensor>> {
        let (winners, _) = Self::argmax(inputs[0])?;
        let mut dx = Tensor::zeros(inputs[0].shape());
        let d = dx.data_mut();
        for (&i, g) in winners.iter().zip(grad.data()) {
            d[i] += g;
        }
        Ok(vec![dx])
    }

    fn branch_signature(&self, inputs: &[&Tensor]) -> Vec<u8> {
        let Ok((winners, [.., oh, ow])) = Self::argmax(inputs[0]) else {
            return Vec::new();
        };
        let w = inputs[0].shape()[3];
        winners
            .iter()
            .enumerate()
            .map(|(k, &i)| {
                let (oy, ox) = ((k / ow) % oh, k % ow);
                let local = i % w;
                let row = (i / w) % inputs[0].shape()[2];
                ((row - 2 * oy) * 2 + (local - 2 * ox)) as u8
            })
            .collect()
    }
}

/// `max(0, x)`, with subgradient 0 at the kink.
#[derive(Debug, Clone, Copy)]
pub struct Relu;

impl Primitive for Relu {
    fn name(&self) -> &'static str {
        "relu"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        Ok(inputs[0].map(|x| x.max(0.0)))
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor) -> Result<Vec<Tensor>> {
        let data = inputs[0]
            .data()
            .iter()
            .zip(grad.data())
            .map(|(&x, &g)| if x > 0.0 { g } else { 0.0 })
            .collect();
        Ok(vec![Tensor::new(inputs[0].shape(), data)?])
    }

    fn branch_signature(&self, inputs: &[&Tensor]) -> Vec<u8> {
        inputs[0].data().iter().map(|&x| u8::from(x > 0.0)).collect()
    }
}

/// Affine map `x · Wᵀ + b` on a batch of rows.
///
/// Operands: input `[B, in]`, weights `[out, in]`, biases `[out]`.
#[derive(Debug, Clone, Copy)]
pub struct Dense;

impl Dense {
    fn check(inputs: &[&Tensor]) -> Result<(usize, usize, usize)> {
        let (&[batch, in_dim], &[out_dim, w_in]) = (inputs[0].shape(), inputs[1].shape()) else {
            return Err(Error::Invalid(format!(
                "dense expects [B, in] input and [out, in] weights, got {:?} and {:?}",
                inputs[0].shape(),
                inputs[1].shape()
            )));
        };
        if in_dim != w_in {
            return Err(Error::Invalid(format!(
                "dense dimension mismatch: input width {in_dim}, weights expect {w_in}"
            )));
        }
        inputs[2].expect_shape("dense biases", &[out_dim])?;
        Ok((batch, in_dim, out_dim))
    }
}

impl Primitive for Dense {
    fn name(&self) -> &'static str {
        "dense"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let (batch, in_dim, out_dim) = Self::check(inputs)?;
        let mut out: Vec<f64> = (0..batch).flat_map(|_| inputs[2].data().iter().copied()).collect();
        gemm(batch, in_dim, out_dim, inputs[0].data(), (in_dim, 1), inputs[1].data(), (1, in_dim), 1.0, &mut out);
        Tensor::new([batch, out_dim], out)
    }

    fn backward(&self, inputs: &[&Tensor], _: &Tensor, grad: &Tensor) -> Result<Vec<Tensor>> {
        let (batch, in_dim, out_dim) = Self::check(inputs)?;
        let g = grad.data();
        let mut dx = vec![0.0; batch * in_dim];
        gemm(batch, out_dim, in_dim, g, (out_dim, 1), inputs[1].data(), (in_dim, 1), 0.0, &mut dx);
        let mut dw = vec![0.0; out_dim * in_dim];
        gemm(out_dim, batch, in_dim, g, (1, out_dim), inputs[0].data(), (in_dim, 1), 0.0, &mut dw);
        let mut db = vec![0.0; out_dim];
        for row in g.chunks_exact(out_dim) {
            for (d, v) in db.iter_mut().zip(row) {
                *d += v;
            }
        }
        Ok(vec![
            Tensor::new([batch, in_dim], dx)?,
            Tensor::new([out_dim, in_dim], dw)?,
            Tensor::new([out_dim], db)?,
        ])
    }
}

/// Softmax over the last axis of a `[C]` or `[B, C]` tensor, computed as
/// `exp(z - max z) / Σ`.
#[derive(Debug, Clone, Copy)]
pub struct Softmax;

impl Softmax {
    fn classes(z: &Tensor) -> Result<usize> {
        let classes = match *z.shape() {
            [c] | [_, c] => c,
            _ => {
                return Err(Error::Invalid(format!(
                    "softmax expects [C] or [B, C], got {:?}",
                    z.shape()
                )))
            }
        };
        if classes < 2 {
            return Err(Error::Invalid(format!("softmax needs at least 2 classes, got {classes}")));
        }
        Ok(classes)
    }
}

impl Primitive for Softmax {
    fn name(&self) -> &'static str {
        "softmax"
    }

    fn forward(&self, inputs: &[&Tensor]) -> Result<Tensor> {
        let z = inputs[0];
        let classes = Self::classes(z)?;
        if !z.all_finite() {
            return Err(Error::NonFinite("softmax logits".into()));
        }
        let mut out = Vec::with_capacity(z.len());
        for row in z.data().chunks_exact(classes) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let start = out.len();
            out.extend(row.iter().map(|&v| (v - max).exp()));
            let total: f64 = out[start..].iter().sum();
            for p in &mut out[start..] {
                *p /= total;
            }
        }
        Tensor::new(z.shape(), out)
    }

    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Result<Vec<Tensor>> {
        let classes = Self::classes(inputs[0])?;
        let mut dz = Vec::with_capacity(output.len());
        for (p, g) in output.data().chunks_exact(classes).zip(grad.data().chunks_exact(classes)) {
            let dot: f64 = p.iter().zip(g).map(|(p, g)| p * g).sum();
            dz.extend(p.iter().zip(g).map(|(p, g)| p * (g - dot)));
        }
        Ok(vec![Tensor::new(output.shape(), dz)?])
    }
}

/// Filters `[C_out, C_in, 3, 3]` and biases `[C_out]` of one convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvParams {
    pub filters: Tensor,
    pub biases: Tensor,
}

impl ConvParams {
    pub fn new(filters: Tensor, biases: Tensor) -> Result<Self> {
        let [c_out, _, kh, kw] = dims4("conv filters", &filters)?;
        if kh != KERNEL || kw != KERNEL {
            return Err(Error::Invalid(format!("conv kernel must be 3x3, got {kh}x{kw}")));
        }
        biases.expect_shape("conv biases", &[c_out])?;
        Ok(ConvParams { filters, biases })
    }

    pub fn out_channels(&self) -> usize {
        self.filters.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.filters.shape()[1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams {
    pub weights: Tensor,
    pub biases: Tensor,
}

impl DenseParams {
    pub fn new(weights: Tensor, biases: Tensor) -> Result<Self> {
        let &[out_dim, _] = weights.shape() else {
            return Err(Error::Invalid(format!(
                "dense weights must be [out, in], got {:?}",
                weights.shape()
            )));
        };
        biases.expect_shape("dense biases", &[out_dim])?;
        Ok(DenseParams { weights, biases })
    }

    pub fn out_dim(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn in_dim(&self) -> usize {
        self.weights.shape()[1]
    }
}

/// Whether stochastic layers are active.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Training,
    Inference,
}

/// Inverted-dropout keep mask: each entry is `1/(1-rate)` with probability
/// `1 - rate`, otherwise 0.
pub fn dropout_mask(shape: &[usize], rate: f64, rng: &mut impl Rng) -> Result<Tensor> {
    check_rate(rate)?;
    let mut mask = Tensor::zeros(shape);
    let keep = 1.0 - rate;
    for m in mask.data_mut() {
        if rng.gen::<f64>() < keep {
            *m = 1.0 / keep;
        }
    }
    Ok(mask)
}

fn check_rate(rate: f64) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::Invalid(format!("dropout rate must lie in [0, 1), got {rate}")));
    }
    Ok(())
}

impl Graph {
    pub fn conv2d(&mut self, x: Var, params: (Var, Var)) -> Result<Var> {
        self.apply(Conv2d, &[x, params.0, params.1])
    }

    pub fn maxpool2(&mut self, x: Var) -> Result<Var> {
        self.apply(MaxPool2, &[x])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        self.apply(Relu, &[x])
    }

    pub fn dense(&mut self, x: Var, params: (Var, Var)) -> Result<Var> {
        self.apply(Dense, &[x, params.0, params.1])
    }

    pub fn softmax(&mut self, z: Var) -> Result<Var> {
        self.apply(Softmax, &[z])
    }

    /// Inverted dropout. The sampled mask enters the graph as a constant
    /// leaf. Inference mode and `rate == 0` return `x` unchanged.
    pub fn dropout(&mut self, x: Var, rate: f64, mode: Mode, rng: &mut impl Rng) -> Result<Var> {
        check_rate(rate)?;
        if mode == Mode::Inference || rate == 0.0 {
            return Ok(x);
        }
        let mask = dropout_mask(&self.value(x).shape().to_vec(), rate, rng)?;
        let mask = self.constant(mask);
        self.mul(x, mask)
    }
}

fn eval_single(input: &Tensor, f: impl FnOnce(&mut Graph, Var) -> Result<Var>) -> Result<Tensor> {
    let mut g = Graph::inference();
    let x = g.constant(input.clone());
    let y = f(&mut g, x)?;
    Ok(g.value(y).clone())
}

fn as_batch_of_one(input: &Tensor, context: &str) -> Result<Tensor> {
    match *input.shape() {
        [c, h, w] => input.clone().reshape([1, c, h, w]),
        _ => Err(Error::Invalid(format!(
            "{context} expects a [C, H, W] sample, got {:?}",
            input.shape()
        ))),
    }
}

/// Same-padded 3×3 convolution of one `[C_in, H, W]` sample.
pub fn conv2d(input: &Tensor, params: &ConvParams) -> Result<Tensor> {
    let x = as_batch_of_one(input, "conv2d")?;
    let out = eval_single(&x, |g, x| {
        let w = g.constant(params.filters.clone());
        let b = g.constant(params.biases.clone());
        g.conv2d(x, (w, b))
    })?;
    let [_, c, h, w] = dims4("conv2d", &out)?;
    out.reshape([c, h, w])
}

/// 2×2 max pooling of one `[C, H, W]` sample.
pub fn maxpool2(input: &Tensor) -> Result<Tensor> {
    let x = as_batch_of_one(input, "maxpool2")?;
    let out = eval_single(&x, |g, x| g.maxpool2(x))?;
    let [_, c, h, w] = dims4("maxpool2", &out)?;
    out.reshape([c, h, w])
}

pub fn relu(input: &Tensor) -> Tensor {
    input.map(|x| x.max(0.0))
}

/// Inverted dropout on a plain tensor.
pub fn dropout(input: &Tensor, rate: f64, rng: &mut impl Rng, mode: Mode) -> Result<Tensor> {
    eval_single(input, |g, x| g.dropout(x, rate, mode, rng))
}

/// `W · x + b` for a single `[in]` vector.
pub fn dense(input: &Tensor, params: &DenseParams) -> Result<Tensor> {
    let x = input.clone().reshape([1, input.len()])?;
    let out = eval_single(&x, |g, x| {
        let w = g.constant(params.weights.clone());
        let b = g.constant(params.biases.clone());
        g.dense(x, (w, b))
    })?;
    out.reshape([params.out_dim()])
}

pub fn softmax(z: &Tensor) -> Result<Tensor> {
    Softmax.forward(&[z])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{finite_difference_gradient, relative_error};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(shape: &[usize], data: &[f64]) -> Tensor {
        Tensor::new(shape, data.to_vec()).unwrap()
    }

    fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        t(shape, &(0..n).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<_>>())
    }

    /// Naive direct convolution used as an independent reference.
    fn direct_conv(x: &Tensor, w: &Tensor, b: &Tensor) -> Tensor {
        let [bn, ci, h, wd] = dims4("", x).unwrap();
        let co = w.shape()[0];
        let mut out = Tensor::zeros([bn, co, h, wd]);
        for n in 0..bn {
            for o in 0..co {
                for y in 0..h as isize {
                    for xx in 0..wd as isize {
                        let mut acc = b.data()[o];
                        for c in 0..ci {
                            for ky in 0..3isize {
                                for kx in 0..3isize {
                                    let (sy, sx) = (y + ky - 1, xx + kx - 1);
                                    if sy < 0 || sx < 0 || sy >= h as isize || sx >= wd as isize {
                                        continue;
                                    }
                                    let xi = ((n * ci + c) * h + sy as usize) * wd + sx as usize;
                                    let wi = ((o * ci + c) * 3 + ky as usize) * 3 + kx as usize;
                                    acc += x.data()[xi] * w.data()[wi];
                                }
                            }
                        }
                        out.data_mut()[((n * co + o) * h + y as usize) * wd + xx as usize] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv_identity_kernel_on_single_pixel() {
        let mut w = vec![0.0; 9];
        w[4] = 1.0;
        let params = ConvParams::new(t(&[1, 1, 3, 3], &w), Tensor::zeros([1])).unwrap();
        let out = conv2d(&t(&[1, 1, 1], &[5.0]), &params).unwrap();
        assert_eq!(out.data(), &[5.0]);
    }

    #[test]
    fn conv_all_ones_counts_neighbours() {
        let params = ConvParams::new(Tensor::ones([1, 1, 3, 3]), Tensor::zeros([1])).unwrap();
        let out = conv2d(&Tensor::ones([1, 3, 3]), &params).unwrap();
        assert_eq!(out.data(), &[4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn conv_matches_direct_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random(&[2, 3, 5, 4], &mut rng);
        let w = random(&[4, 3, 3, 3], &mut rng);
        let b = random(&[4], &mut rng);
        let got = Conv2d.forward(&[&x, &w, &b]).unwrap();
        let want = direct_conv(&x, &w, &b);
        for (a, e) in got.data().iter().zip(want.data()) {
            assert!((a - e).abs() < 1e-12);
        }
    }

    #[test]
    fn conv_channel_mismatch() {
        let params = ConvParams::new(Tensor::ones([2, 3, 3, 3]), Tensor::zeros([2])).unwrap();
        assert!(conv2d(&Tensor::ones([2, 4, 4]), &params).is_err());
        assert!(ConvParams::new(Tensor::ones([2, 3, 5, 5]), Tensor::zeros([2])).is_err());
    }

    #[test]
    fn conv_preserves_spatial_shape() {
        for (h, w) in [(1, 1), (1, 7), (6, 1), (5, 9)] {
            let params = ConvParams::new(Tensor::ones([3, 2, 3, 3]), Tensor::zeros([3])).unwrap();
            let out = conv2d(&Tensor::ones([2, h, w]), &params).unwrap();
            assert_eq!(out.shape(), &[3, h, w]);
        }
    }

    #[test]
    fn pool_takes_window_max() {
        let out = maxpool2(&t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0])).unwrap();
        assert_eq!(out.data(), &[4.0]);
    }

    #[test]
    fn pool_floors_odd_extent() {
        let x = t(&[1, 3, 3], &[1.0, 7.0, 99.0, 2.0, 3.0, 99.0, 99.0, 99.0, 99.0]);
        let out = maxpool2(&x).unwrap();
        assert_eq!(out.shape(), &[1, 1, 1]);
        assert_eq!(out.data(), &[7.0]);
        assert!(maxpool2(&Tensor::ones([1, 1, 4])).is_err());
    }

    #[test]
    fn pool_tie_routes_to_first() {
        let mut g = Graph::new();
        let x = g.param(Tensor::full([1, 1, 2, 4], 2.5));
        let y = g.maxpool2(x).unwrap();
        assert_eq!(g.value(y).data(), &[2.5, 2.5]);
        let s = g.sum(y).unwrap();
        let grads = g.backward(s, &Tensor::scalar(1.0)).unwrap();
        assert_eq!(
            grads.get(x).unwrap().data(),
            &[1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0]
        );
    }

    #[test]
    fn relu_values_and_dead_gradient() {
        assert_eq!(relu(&Tensor::from_vec(vec![-1.0, 0.0, 2.0])).data(), &[0.0, 0.0, 2.0]);
        let mut g = Graph::new();
        let x = g.param(Tensor::from_vec(vec![-1.0, -0.5, -3.0]));
        let y = g.relu(x).unwrap();
        assert_eq!(g.value(y), &Tensor::zeros([3]));
        let s = g.sum(y).unwrap();
        let grads = g.backward(s, &Tensor::scalar(1.0)).unwrap();
        assert_eq!(grads.get(x).unwrap(), &Tensor::zeros([3]));
    }

    #[test]
    fn relu_gradient_away_from_kink() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = Tensor::from_vec(
            (0..50)
                .map(|_| loop {
                    let v: f64 = rng.gen_range(-1.0..1.0);
                    if v.abs() >= 1e-3 {
                        break v;
                    }
                })
                .collect(),
        );
        let weights = random(&[50], &mut rng);
        let loss = |x: &Tensor| -> Result<f64> {
            Ok(relu(x).data().iter().zip(weights.data()).map(|(a, b)| a * b).sum())
        };
        let mut g = Graph::new();
        let xv = g.param(x.clone());
        let y = g.relu(xv).unwrap();
        let grads = g.backward(y, &weights).unwrap();
        let numeric = finite_difference_gradient(loss, &x, 1e-5).unwrap();
        for (a, n) in grads.get(xv).unwrap().data().iter().zip(numeric.data()) {
            assert!(relative_error(*a, *n) <= 1e-5);
        }
    }

    #[test]
    fn dropout_contracts() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = Tensor::from_vec(vec![1.0, -2.0, 3.0]);
        assert_eq!(dropout(&x, 0.0, &mut rng, Mode::Training).unwrap(), x);
        assert_eq!(dropout(&x, 0.0, &mut rng, Mode::Inference).unwrap(), x);
        assert_eq!(dropout(&x, 0.5, &mut rng, Mode::Inference).unwrap(), x);
        assert!(dropout(&x, 1.0, &mut rng, Mode::Training).is_err());
        assert!(dropout(&x, -0.1, &mut rng, Mode::Training).is_err());
    }

    #[test]
    fn inverted_dropout_preserves_expectation() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let x = Tensor::from_vec(vec![1.0, -2.0, 0.5, 4.0]);
        let trials = 10_000;
        let mut acc = vec![0.0; 4];
        for _ in 0..trials {
            let y = dropout(&x, 0.5, &mut rng, Mode::Training).unwrap();
            for (a, v) in acc.iter_mut().zip(y.data()) {
                *a += v;
            }
        }
        for (a, v) in acc.iter().zip(x.data()) {
            let mean = a / trials as f64;
            assert!((mean - v).abs() <= 0.02 * v.abs(), "{mean} vs {v}");
        }
    }

    #[test]
    fn dense_examples() {
        let eye = DenseParams::new(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]), Tensor::zeros([2])).unwrap();
        let x = Tensor::from_vec(vec![0.3, -7.0]);
        assert_eq!(dense(&x, &eye).unwrap(), x);
        let p = DenseParams::new(t(&[1, 2], &[1.0, 1.0]), Tensor::from_vec(vec![0.5])).unwrap();
        assert_eq!(dense(&Tensor::from_vec(vec![2.0, 3.0]), &p).unwrap().data(), &[5.5]);
        assert!(dense(&Tensor::from_vec(vec![1.0, 2.0, 3.0]), &p).is_err());
    }

    #[test]
    fn softmax_examples() {
        assert_eq!(softmax(&Tensor::from_vec(vec![0.0, 0.0])).unwrap().data(), &[0.5, 0.5]);
        let p = softmax(&Tensor::from_vec(vec![3f64.ln(), 0.0])).unwrap();
        assert!((p.data()[0] - 0.75).abs() < 1e-15 && (p.data()[1] - 0.25).abs() < 1e-15);
        let p = softmax(&Tensor::from_vec(vec![1000.0, 0.0])).unwrap();
        assert!(p.all_finite());
        assert!((p.data()[0] - 1.0).abs() < 1e-15 && p.data()[1] < 1e-300);
        assert!(softmax(&Tensor::from_vec(vec![1.0])).is_err());
        assert!(softmax(&Tensor::from_vec(vec![f64::NAN, 0.0])).is_err());
    }

    proptest::proptest! {
        #[test]
        fn softmax_rows_sum_to_one(z in proptest::collection::vec(-1000.0f64..1000.0, 2..12)) {
            let p = softmax(&Tensor::from_vec(z)).unwrap();
            proptest::prop_assert!((p.sum() - 1.0).abs() <= 1e-12);
            proptest::prop_assert!(p.data().iter().all(|&v| v >= 0.0));
        }
    }
}
