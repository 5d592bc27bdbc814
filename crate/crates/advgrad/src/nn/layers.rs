//! Layer definitions and their per-sample compute kernels.
//!
//! Every kernel operates on one sample's flat, row-major data. The batch
//! drivers in [`super`] parallelize over samples; because no kernel ever
//! reduces across samples, outputs are bit-identical for any batch size or
//! worker count.

use ndarray::{ArrayD, ArrayView2, ArrayViewMut2, IxDyn};
use ndarray::linalg::general_mat_mul;

use crate::element::Element;
use crate::error::{Error, Result};

/// A layer of a feed-forward network.
///
/// Parameter tensors are stored as dynamic-dimension arrays with fixed,
/// documented shapes; see each variant's constructor.
#[derive(Debug, Clone)]
pub enum Layer<E: Element> {
    Conv2d(Conv2d<E>),
    Dense(Dense<E>),
    Relu,
    MaxPool2d(Pool2d),
    AvgPool2d(Pool2d),
    BatchNorm(BatchNorm<E>),
    Flatten,
}

/// 2-D convolution. Weights `(c_out, c_in, kh, kw)`, bias `(c_out)`.
#[derive(Debug, Clone)]
pub struct Conv2d<E: Element> {
    pub weights: ArrayD<E>,
    pub bias: ArrayD<E>,
    pub stride: (usize, usize),
    pub padding: (usize, usize),
}

/// Fully-connected layer. Weights `(out_features, in_features)`, bias `(out_features)`.
#[derive(Debug, Clone)]
pub struct Dense<E: Element> {
    pub weights: ArrayD<E>,
    pub bias: ArrayD<E>,
}

/// Pooling window geometry shared by max and average pooling. No padding.
#[derive(Debug, Clone, Copy)]
pub struct Pool2d {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
}

/// Inference-mode batch normalization over the channel axis.
///
/// `gamma`/`beta` are trainable; `mean`/`var` are frozen running statistics
/// and never receive gradients.
#[derive(Debug, Clone)]
pub struct BatchNorm<E: Element> {
    pub gamma: ArrayD<E>,
    pub beta: ArrayD<E>,
    pub mean: ArrayD<E>,
    pub var: ArrayD<E>,
    pub eps: E,
}

impl<E: Element> Conv2d<E> {
    pub fn new(
        weights: ArrayD<E>,
        bias: ArrayD<E>,
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Self> {
        if weights.ndim() != 4 {
            return Err(Error::shape("Conv2d weights", &[0, 0, 0, 0], weights.shape()));
        }
        let c_out = weights.shape()[0];
        if bias.shape() != [c_out] {
            return Err(Error::shape("Conv2d bias", &[c_out], bias.shape()));
        }
        if stride.0 == 0 || stride.1 == 0 {
            return Err(Error::config("conv.stride", "stride must be positive"));
        }
        Ok(Self { weights, bias, stride, padding })
    }

    pub fn out_channels(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn kernel(&self) -> (usize, usize) {
        (self.weights.shape()[2], self.weights.shape()[3])
    }
}

impl<E: Element> Dense<E> {
    pub fn new(weights: ArrayD<E>, bias: ArrayD<E>) -> Result<Self> {
        if weights.ndim() != 2 {
            return Err(Error::shape("Dense weights", &[0, 0], weights.shape()));
        }
        let out = weights.shape()[0];
        if bias.shape() != [out] {
            return Err(Error::shape("Dense bias", &[out], bias.shape()));
        }
        Ok(Self { weights, bias })
    }

    pub fn out_features(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn in_features(&self) -> usize {
        self.weights.shape()[1]
    }
}

impl<E: Element> BatchNorm<E> {
    pub fn new(
        gamma: ArrayD<E>,
        beta: ArrayD<E>,
        mean: ArrayD<E>,
        var: ArrayD<E>,
        eps: E,
    ) -> Result<Self> {
        let c = gamma.len();
        for (name, t) in [("beta", &beta), ("mean", &mean), ("var", &var)] {
            if t.len() != c || t.ndim() != 1 {
                return Err(Error::shape(format!("BatchNorm {name}"), &[c], t.shape()));
            }
        }
        if gamma.ndim() != 1 {
            return Err(Error::shape("BatchNorm gamma", &[c], gamma.shape()));
        }
        if var.iter().any(|&v| v <= E::zero()) {
            return Err(Error::config("batchnorm.var", "variance entries must be strictly positive"));
        }
        if eps <= E::zero() {
            return Err(Error::config("batchnorm.eps", "eps must be strictly positive"));
        }
        Ok(Self { gamma, beta, mean, var, eps })
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

fn pool_out_extent(extent: usize, kernel: usize, stride: usize) -> Option<usize> {
    if kernel == 0 || stride == 0 || kernel > extent {
        None
    } else {
        Some((extent - kernel) / stride + 1)
    }
}

fn conv_out_extent(extent: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = extent + 2 * padding;
    if kernel == 0 || stride == 0 || kernel > padded {
        None
    } else {
        Some((padded - kernel) / stride + 1)
    }
}

impl<E: Element> Layer<E> {
    pub fn name(&self) -> &'static str {
        match self {
            Layer::Conv2d(_) => "Conv2d",
            Layer::Dense(_) => "Dense",
            Layer::Relu => "ReLU",
            Layer::MaxPool2d(_) => "MaxPool2d",
            Layer::AvgPool2d(_) => "AvgPool2d",
            Layer::BatchNorm(_) => "BatchNorm",
            Layer::Flatten => "Flatten",
        }
    }

    /// Per-sample output shape for a given per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let err = |expected: &[usize]| Err(Error::shape(self.name(), expected, input));
        match self {
            Layer::Conv2d(c) => {
                let (kh, kw) = c.kernel();
                if input.len() != 3 || input[0] != c.in_channels() {
                    return err(&[c.in_channels(), 0, 0]);
                }
                let oh = conv_out_extent(input[1], kh, c.stride.0, c.padding.0);
                let ow = conv_out_extent(input[2], kw, c.stride.1, c.padding.1);
                match (oh, ow) {
                    (Some(oh), Some(ow)) => Ok(vec![c.out_channels(), oh, ow]),
                    _ => err(&[c.in_channels(), kh, kw]),
                }
            }
            Layer::Dense(d) => {
                if input != [d.in_features()] {
                    return err(&[d.in_features()]);
                }
                Ok(vec![d.out_features()])
            }
            Layer::Relu => Ok(input.to_vec()),
            Layer::MaxPool2d(p) | Layer::AvgPool2d(p) => {
                if input.len() != 3 {
                    return err(&[0, 0, 0]);
                }
                let oh = pool_out_extent(input[1], p.kernel.0, p.stride.0);
                let ow = pool_out_extent(input[2], p.kernel.1, p.stride.1);
                match (oh, ow) {
                    (Some(oh), Some(ow)) => Ok(vec![input[0], oh, ow]),
                    _ => err(&[input[0], p.kernel.0, p.kernel.1]),
                }
            }
            Layer::BatchNorm(b) => {
                if input.is_empty() || input[0] != b.channels() {
                    return err(&[b.channels()]);
                }
                Ok(input.to_vec())
            }
            Layer::Flatten => Ok(vec![input.iter().product()]),
        }
    }

    /// Trainable parameter tensors, in the order used by gradient buffers.
    pub fn params(&self) -> Vec<&ArrayD<E>> {
        match self {
            Layer::Conv2d(c) => vec![&c.weights, &c.bias],
            Layer::Dense(d) => vec![&d.weights, &d.bias],
            Layer::BatchNorm(b) => vec![&b.gamma, &b.beta],
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<&mut ArrayD<E>> {
        match self {
            Layer::Conv2d(c) => vec![&mut c.weights, &mut c.bias],
            Layer::Dense(d) => vec![&mut d.weights, &mut d.bias],
            Layer::BatchNorm(b) => vec![&mut b.gamma, &mut b.beta],
            _ => Vec::new(),
        }
    }

    /// Zero gradient buffers matching [`Layer::params`].
    pub fn zero_grads(&self) -> Vec<ArrayD<E>> {
        self.params()
            .into_iter()
            .map(|p| ArrayD::zeros(IxDyn(p.shape())))
            .collect()
    }

    pub fn convert<F: Element>(&self) -> Layer<F> {
        let cast = |t: &ArrayD<E>| t.mapv(|v| F::of(v.as_f64()));
        match self {
            Layer::Conv2d(c) => Layer::Conv2d(Conv2d {
                weights: cast(&c.weights),
                bias: cast(&c.bias),
                stride: c.stride,
                padding: c.padding,
            }),
            Layer::Dense(d) => Layer::Dense(Dense {
                weights: cast(&d.weights),
                bias: cast(&d.bias),
            }),
            Layer::Relu => Layer::Relu,
            Layer::MaxPool2d(p) => Layer::MaxPool2d(*p),
            Layer::AvgPool2d(p) => Layer::AvgPool2d(*p),
            Layer::BatchNorm(b) => Layer::BatchNorm(BatchNorm {
                gamma: cast(&b.gamma),
                beta: cast(&b.beta),
                mean: cast(&b.mean),
                var: cast(&b.var),
                eps: F::of(b.eps.as_f64()),
            }),
            Layer::Flatten => Layer::Flatten,
        }
    }
}

/// Reusable per-worker buffers for the convolution kernels.
#[derive(Debug)]
pub(crate) struct Scratch<E> {
    cols: Vec<E>,
}

impl<E> Default for Scratch<E> {
    fn default() -> Self {
        Self { cols: Vec::new() }
    }
}

fn view2<E: Element>(data: &[E], rows: usize, cols: usize) -> ArrayView2<'_, E> {
    ArrayView2::from_shape((rows, cols), data).expect("consistent matrix shape")
}

fn view2_mut<E: Element>(data: &mut [E], rows: usize, cols: usize) -> ArrayViewMut2<'_, E> {
    ArrayViewMut2::from_shape((rows, cols), data).expect("consistent matrix shape")
}

/// Expand one sample into column form: output is `(c_in*kh*kw, oh*ow)` row-major.
#[allow(clippy::too_many_arguments)]
fn im2col<E: Element>(
    input: &[E],
    (c_in, h, w): (usize, usize, usize),
    (kh, kw): (usize, usize),
    (sh, sw): (usize, usize),
    (ph, pw): (usize, usize),
    (oh, ow): (usize, usize),
    cols: &mut [E],
) {
    let ohw = oh * ow;
    debug_assert_eq!(cols.len(), c_in * kh * kw * ohw);
    for ci in 0..c_in {
        let plane = &input[ci * h * w..(ci + 1) * h * w];
        for ky in 0..kh {
            for kx in 0..kw {
                let row = ((ci * kh + ky) * kw + kx) * ohw;
                for oy in 0..oh {
                    let iy = (oy * sh + ky) as isize - ph as isize;
                    let dst = &mut cols[row + oy * ow..row + (oy + 1) * ow];
                    if iy < 0 || iy >= h as isize {
                        dst.fill(E::zero());
                        continue;
                    }
                    let src_row = &plane[iy as usize * w..(iy as usize + 1) * w];
                    if sw == 1 && kx >= pw && kx + ow <= w + pw {
                        // Fully in range, unit stride: straight copy.
                        dst.copy_from_slice(&src_row[kx - pw..kx - pw + ow]);
                    } else {
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * sw + kx) as isize - pw as isize;
                            *d = if ix >= 0 && ix < w as isize {
                                src_row[ix as usize]
                            } else {
                                E::zero()
                            };
                        }
                    }
                }
            }
        }
    }
}

/// Transpose of [`im2col`]: scatter-add column-form gradients back to the input.
#[allow(clippy::too_many_arguments)]
fn col2im_add<E: Element>(
    cols: &[E],
    (c_in, h, w): (usize, usize, usize),
    (kh, kw): (usize, usize),
    (sh, sw): (usize, usize),
    (ph, pw): (usize, usize),
    (oh, ow): (usize, usize),
    grad_in: &mut [E],
) {
    let ohw = oh * ow;
    for ci in 0..c_in {
        let plane_off = ci * h * w;
        for ky in 0..kh {
            for kx in 0..kw {
                let row = ((ci * kh + ky) * kw + kx) * ohw;
                for oy in 0..oh {
                    let iy = (oy * sh + ky) as isize - ph as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &cols[row + oy * ow..row + (oy + 1) * ow];
                    let dst_row = plane_off + iy as usize * w;
                    for (ox, &v) in src.iter().enumerate() {
                        let ix = (ox * sw + kx) as isize - pw as isize;
                        if ix >= 0 && ix < w as isize {
                            grad_in[dst_row + ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

impl<E: Element> Layer<E> {
    /// Forward one sample. `input`/`output` are flat row-major buffers whose
    /// shapes were validated at network construction time.
    pub(crate) fn forward_sample(
        &self,
        input: &[E],
        in_shape: &[usize],
        output: &mut [E],
        out_shape: &[usize],
        scratch: &mut Scratch<E>,
    ) {
        match self {
            Layer::Conv2d(c) => {
                let (c_in, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
                let (c_out, oh, ow) = (out_shape[0], out_shape[1], out_shape[2]);
                let (kh, kw) = c.kernel();
                let k = c_in * kh * kw;
                let ohw = oh * ow;
                scratch.cols.resize(k * ohw, E::zero());
                im2col(
                    input,
                    (c_in, h, w),
                    (kh, kw),
                    c.stride,
                    c.padding,
                    (oh, ow),
                    &mut scratch.cols,
                );
                let wmat = view2(c.weights.as_slice().expect("contiguous weights"), c_out, k);
                general_mat_mul(
                    E::one(),
                    &wmat,
                    &view2(&scratch.cols, k, ohw),
                    E::zero(),
                    &mut view2_mut(output, c_out, ohw),
                );
                let bias = c.bias.as_slice().expect("contiguous bias");
                for co in 0..c_out {
                    let b = bias[co];
                    for v in &mut output[co * ohw..(co + 1) * ohw] {
                        *v += b;
                    }
                }
            }
            Layer::Dense(d) => {
                let (out, inf) = (d.out_features(), d.in_features());
                let wmat = view2(d.weights.as_slice().expect("contiguous weights"), out, inf);
                general_mat_mul(
                    E::one(),
                    &wmat,
                    &view2(input, inf, 1),
                    E::zero(),
                    &mut view2_mut(output, out, 1),
                );
                for (v, &b) in output.iter_mut().zip(d.bias.iter()) {
                    *v += b;
                }
            }
            Layer::Relu => {
                for (o, &x) in output.iter_mut().zip(input.iter()) {
                    *o = if x > E::zero() { x } else { E::zero() };
                }
            }
            Layer::MaxPool2d(p) => {
                pool_forward(input, in_shape, output, out_shape, *p, true);
            }
            Layer::AvgPool2d(p) => {
                pool_forward(input, in_shape, output, out_shape, *p, false);
            }
            Layer::BatchNorm(b) => {
                let c = b.channels();
                let spatial = in_shape.iter().skip(1).product::<usize>().max(1);
                for ci in 0..c {
                    let scale = b.gamma[ci] / (b.var[ci] + b.eps).sqrt();
                    let shift = b.beta[ci] - b.mean[ci] * scale;
                    for j in 0..spatial {
                        output[ci * spatial + j] = input[ci * spatial + j] * scale + shift;
                    }
                }
            }
            Layer::Flatten => output.copy_from_slice(input),
        }
    }

    /// Backward one sample.
    ///
    /// `grad_in`, when present, receives the gradient with respect to this
    /// layer's input (overwritten, not accumulated). `param_grads`, when
    /// present, is accumulated into, in [`Layer::params`] order.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn backward_sample(
        &self,
        input: &[E],
        in_shape: &[usize],
        grad_out: &[E],
        out_shape: &[usize],
        grad_in: Option<&mut [E]>,
        param_grads: Option<&mut [ArrayD<E>]>,
        scratch: &mut Scratch<E>,
    ) {
        match self {
            Layer::Conv2d(c) => {
                let (c_in, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
                let (c_out, oh, ow) = (out_shape[0], out_shape[1], out_shape[2]);
                let (kh, kw) = c.kernel();
                let k = c_in * kh * kw;
                let ohw = oh * ow;
                let g_out = view2(grad_out, c_out, ohw);
                if let Some(grads) = param_grads {
                    scratch.cols.resize(k * ohw, E::zero());
                    im2col(
                        input,
                        (c_in, h, w),
                        (kh, kw),
                        c.stride,
                        c.padding,
                        (oh, ow),
                        &mut scratch.cols,
                    );
                    let (gw, gb) = {
                        let (a, b) = grads.split_at_mut(1);
                        (&mut a[0], &mut b[0])
                    };
                    let cols = view2(&scratch.cols, k, ohw);
                    general_mat_mul(
                        E::one(),
                        &g_out,
                        &cols.t(),
                        E::one(),
                        &mut view2_mut(gw.as_slice_mut().expect("contiguous"), c_out, k),
                    );
                    let gb = gb.as_slice_mut().expect("contiguous");
                    for co in 0..c_out {
                        let mut s = E::zero();
                        for &g in &grad_out[co * ohw..(co + 1) * ohw] {
                            s += g;
                        }
                        gb[co] += s;
                    }
                }
                if let Some(gin) = grad_in {
                    // grad_cols = W^T * g_out, then scatter back through im2col.
                    scratch.cols.resize(k * ohw, E::zero());
                    let wmat = view2(c.weights.as_slice().expect("contiguous"), c_out, k);
                    general_mat_mul(
                        E::one(),
                        &wmat.t(),
                        &g_out,
                        E::zero(),
                        &mut view2_mut(&mut scratch.cols, k, ohw),
                    );
                    gin.fill(E::zero());
                    col2im_add(
                        &scratch.cols,
                        (c_in, h, w),
                        (kh, kw),
                        c.stride,
                        c.padding,
                        (oh, ow),
                        gin,
                    );
                }
            }
            Layer::Dense(d) => {
                let (out, inf) = (d.out_features(), d.in_features());
                if let Some(grads) = param_grads {
                    let (gw, gb) = {
                        let (a, b) = grads.split_at_mut(1);
                        (&mut a[0], &mut b[0])
                    };
                    general_mat_mul(
                        E::one(),
                        &view2(grad_out, out, 1),
                        &view2(input, 1, inf),
                        E::one(),
                        &mut view2_mut(gw.as_slice_mut().expect("contiguous"), out, inf),
                    );
                    for (g, &go) in gb.iter_mut().zip(grad_out.iter()) {
                        *g += go;
                    }
                }
                if let Some(gin) = grad_in {
                    let wmat = view2(d.weights.as_slice().expect("contiguous"), out, inf);
                    general_mat_mul(
                        E::one(),
                        &wmat.t(),
                        &view2(grad_out, out, 1),
                        E::zero(),
                        &mut view2_mut(gin, inf, 1),
                    );
                }
            }
            Layer::Relu => {
                if let Some(gin) = grad_in {
                    // Subgradient 0 at the kink.
                    for ((g, &x), &go) in gin.iter_mut().zip(input.iter()).zip(grad_out.iter()) {
                        *g = if x > E::zero() { go } else { E::zero() };
                    }
                }
            }
            Layer::MaxPool2d(p) => {
                if let Some(gin) = grad_in {
                    gin.fill(E::zero());
                    pool_backward_max(input, in_shape, grad_out, out_shape, *p, gin);
                }
            }
            Layer::AvgPool2d(p) => {
                if let Some(gin) = grad_in {
                    gin.fill(E::zero());
                    pool_backward_avg(in_shape, grad_out, out_shape, *p, gin);
                }
            }
            Layer::BatchNorm(b) => {
                let c = b.channels();
                let spatial = in_shape.iter().skip(1).product::<usize>().max(1);
                if let Some(grads) = param_grads {
                    let (gg, gb) = {
                        let (a, rest) = grads.split_at_mut(1);
                        (&mut a[0], &mut rest[0])
                    };
                    for ci in 0..c {
                        let inv_std = E::one() / (b.var[ci] + b.eps).sqrt();
                        let mut sg = E::zero();
                        let mut sb = E::zero();
                        for j in 0..spatial {
                            let go = grad_out[ci * spatial + j];
                            sg += go * (input[ci * spatial + j] - b.mean[ci]) * inv_std;
                            sb += go;
                        }
                        gg[ci] += sg;
                        gb[ci] += sb;
                    }
                }
                if let Some(gin) = grad_in {
                    for ci in 0..c {
                        let scale = b.gamma[ci] / (b.var[ci] + b.eps).sqrt();
                        for j in 0..spatial {
                            gin[ci * spatial + j] = grad_out[ci * spatial + j] * scale;
                        }
                    }
                }
            }
            Layer::Flatten => {
                if let Some(gin) = grad_in {
                    gin.copy_from_slice(grad_out);
                }
            }
        }
    }
}

fn pool_forward<E: Element>(
    input: &[E],
    in_shape: &[usize],
    output: &mut [E],
    out_shape: &[usize],
    p: Pool2d,
    is_max: bool,
) {
    let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
    let (oh, ow) = (out_shape[1], out_shape[2]);
    let (kh, kw) = p.kernel;
    let (sh, sw) = p.stride;
    let win = E::from_usize(kh * kw).unwrap();
    for ci in 0..c {
        let plane = &input[ci * h * w..(ci + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let (y0, x0) = (oy * sh, ox * sw);
                let mut acc = if is_max { plane[y0 * w + x0] } else { E::zero() };
                for ky in 0..kh {
                    for kx in 0..kw {
                        let v = plane[(y0 + ky) * w + (x0 + kx)];
                        if is_max {
                            if v > acc {
                                acc = v;
                            }
                        } else {
                            acc += v;
                        }
                    }
                }
                output[(ci * oh + oy) * ow + ox] = if is_max { acc } else { acc / win };
            }
        }
    }
}

/// Max-pool gradient: the entire window gradient goes to the first maximal
/// element in row-major window order.
fn pool_backward_max<E: Element>(
    input: &[E],
    in_shape: &[usize],
    grad_out: &[E],
    out_shape: &[usize],
    p: Pool2d,
    grad_in: &mut [E],
) {
    let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
    let (oh, ow) = (out_shape[1], out_shape[2]);
    let (kh, kw) = p.kernel;
    let (sh, sw) = p.stride;
    for ci in 0..c {
        let plane = &input[ci * h * w..(ci + 1) * h * w];
        for oy in 0..oh {
            for ox in 0..ow {
                let (y0, x0) = (oy * sh, ox * sw);
                let mut best = plane[y0 * w + x0];
                let mut best_idx = y0 * w + x0;
                for ky in 0..kh {
                    for kx in 0..kw {
                        let idx = (y0 + ky) * w + (x0 + kx);
                        if plane[idx] > best {
                            best = plane[idx];
                            best_idx = idx;
                        }
                    }
                }
                grad_in[ci * h * w + best_idx] += grad_out[(ci * oh + oy) * ow + ox];
            }
        }
    }
}

fn pool_backward_avg<E: Element>(
    in_shape: &[usize],
    grad_out: &[E],
    out_shape: &[usize],
    p: Pool2d,
    grad_in: &mut [E],
) {
    let (c, h, w) = (in_shape[0], in_shape[1], in_shape[2]);
    let (oh, ow) = (out_shape[1], out_shape[2]);
    let (kh, kw) = p.kernel;
    let (sh, sw) = p.stride;
    let inv = E::one() / E::from_usize(kh * kw).unwrap();
    for ci in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let g = grad_out[(ci * oh + oy) * ow + ox] * inv;
                let (y0, x0) = (oy * sh, ox * sw);
                for ky in 0..kh {
                    for kx in 0..kw {
                        grad_in[ci * h * w + (y0 + ky) * w + (x0 + kx)] += g;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;

    fn arr<E: Element>(shape: &[usize], data: Vec<E>) -> ArrayD<E> {
        ArrayD::from_shape_vec(IxDyn(shape), data).unwrap()
    }

    #[test]
    fn conv_identity_kernel_dot_product() {
        // 2x2 kernel [[1,0],[0,1]] over [[1,2],[3,4]] -> 1 + 4 = 5
        let conv = Conv2d::new(
            arr(&[1, 1, 2, 2], vec![1.0f64, 0.0, 0.0, 1.0]),
            arr(&[1], vec![0.0]),
            (1, 1),
            (0, 0),
        )
        .unwrap();
        let layer = Layer::Conv2d(conv);
        let out_shape = layer.output_shape(&[1, 2, 2]).unwrap();
        assert_eq!(out_shape, vec![1, 1, 1]);
        let input = [1.0, 2.0, 3.0, 4.0];
        let mut out = [0.0];
        layer.forward_sample(&input, &[1, 2, 2], &mut out, &out_shape, &mut Scratch::default());
        assert_eq!(out[0], 5.0);
    }

    #[test]
    fn conv_padding_shapes() {
        let conv = Conv2d::new(
            arr(&[4, 3, 3, 3], vec![0.0f32; 4 * 3 * 9]),
            arr(&[4], vec![0.0; 4]),
            (1, 1),
            (1, 1),
        )
        .unwrap();
        let layer = Layer::Conv2d(conv);
        assert_eq!(layer.output_shape(&[3, 8, 8]).unwrap(), vec![4, 8, 8]);
        assert!(layer.output_shape(&[2, 8, 8]).is_err());
    }

    #[test]
    fn relu_forward_definition() {
        let layer: Layer<f64> = Layer::Relu;
        let mut out = [0.0, 0.0];
        layer.forward_sample(&[-1.0, 2.0], &[2], &mut out, &[2], &mut Scratch::default());
        assert_eq!(out, [0.0, 2.0]);
    }

    #[test]
    fn dense_identity_weights() {
        let dense = Dense::new(
            arr(&[2, 2], vec![1.0f64, 0.0, 0.0, 1.0]),
            arr(&[2], vec![0.0, 0.0]),
        )
        .unwrap();
        let layer = Layer::Dense(dense);
        let mut out = [0.0, 0.0];
        layer.forward_sample(&[0.3, 0.7], &[2], &mut out, &[2], &mut Scratch::default());
        assert_eq!(out, [0.3, 0.7]);
    }

    #[test]
    fn maxpool_routes_gradient_to_first_max_on_ties() {
        let layer: Layer<f64> = Layer::MaxPool2d(Pool2d { kernel: (2, 2), stride: (2, 2) });
        let input = [1.0, 1.0, 1.0, 1.0]; // all tied
        let mut grad_in = [0.0; 4];
        layer.backward_sample(
            &input,
            &[1, 2, 2],
            &[1.0],
            &[1, 1, 1],
            Some(&mut grad_in),
            None,
            &mut Scratch::default(),
        );
        assert_eq!(grad_in, [1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn avgpool_forward_and_backward() {
        let layer: Layer<f64> = Layer::AvgPool2d(Pool2d { kernel: (2, 2), stride: (2, 2) });
        let input = [1.0, 2.0, 3.0, 4.0];
        let mut out = [0.0];
        layer.forward_sample(&input, &[1, 2, 2], &mut out, &[1, 1, 1], &mut Scratch::default());
        assert_eq!(out[0], 2.5);
        let mut grad_in = [0.0; 4];
        layer.backward_sample(
            &input,
            &[1, 2, 2],
            &[1.0],
            &[1, 1, 1],
            Some(&mut grad_in),
            None,
            &mut Scratch::default(),
        );
        assert_eq!(grad_in, [0.25; 4]);
    }

    #[test]
    fn batchnorm_rejects_nonpositive_variance() {
        let r = BatchNorm::new(
            arr(&[1], vec![1.0f32]),
            arr(&[1], vec![0.0]),
            arr(&[1], vec![0.0]),
            arr(&[1], vec![0.0]),
            1e-5,
        );
        assert!(r.is_err());
    }

    #[test]
    fn im2col_col2im_adjoint() {
        // <im2col(x), y> == <x, col2im(y)> for random-ish fixed data.
        let (c, h, w) = (2usize, 5usize, 4usize);
        let geom = ((c, h, w), (3, 2), (2, 1), (1, 0), (3, 3));
        let x: Vec<f64> = (0..c * h * w).map(|i| (i as f64 * 0.7).sin()).collect();
        let k = c * 3 * 2;
        let ohw = 9;
        let mut cols = vec![0.0; k * ohw];
        im2col(&x, geom.0, geom.1, geom.2, geom.3, geom.4, &mut cols);
        let y: Vec<f64> = (0..k * ohw).map(|i| (i as f64 * 0.3).cos()).collect();
        let mut back = vec![0.0; c * h * w];
        col2im_add(&y, geom.0, geom.1, geom.2, geom.3, geom.4, &mut back);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10, "{lhs} vs {rhs}");
    }
}
