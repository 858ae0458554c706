//! Minimal CNN forward/backward pass and SGD, generic over `f32`/`f64`.
//!
//! Tensors are flat row-major buffers: a batch of `B` feature maps of shape
//! `H×W×C` is `B·H·W·C` scalars in HWC order. Convolutions are lowered to
//! matrix products with im2col patches ordered `(ky, kx, c)`.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::AddAssign;

use num_traits::{Float, FromPrimitive};
use rand::Rng;

use crate::data::ImageShape;
use crate::grammar::{Activation, OptimizerGene, PoolKind};

use super::phenotype::{LayerSpec, Phenotype};

/// Floating-point scalar with a matching GEMM kernel.
pub trait Real:
    Float + FromPrimitive + Default + Debug + Sum + AddAssign + Send + Sync + 'static
{
    /// `c = a · b + beta · c` on raw strided matrices.
    ///
    /// # Safety
    /// Pointers and strides must describe valid, non-aliasing `m×k`, `k×n`
    /// and `m×n` matrices.
    #[allow(clippy::too_many_arguments)]
    unsafe fn raw_gemm(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Real for f32 {
    unsafe fn raw_gemm(
        m: usize,
        k: usize,
        n: usize,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Real for f64 {
    unsafe fn raw_gemm(
        m: usize,
        k: usize,
        n: usize,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// `c (m×n) = op(a) · op(b) + beta · c`, all row-major. With `ta` set, `a` is
/// stored as `k×m`; with `tb` set, `b` is stored as `n×k`.
#[allow(clippy::too_many_arguments)]
fn gemm<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    ta: bool,
    b: &[T],
    tb: bool,
    beta: T,
    c: &mut [T],
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: bounds asserted above; `c` is a unique borrow distinct from a and b.
    unsafe {
        T::raw_gemm(
            m,
            k,
            n,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        )
    }
}

#[inline]
fn cast<T: Real>(v: f64) -> T {
    T::from_f64(v).expect("representable")
}

fn activate<T: Real>(act: Activation, xs: &mut [T]) {
    let one = T::one();
    match act {
        Activation::Relu => xs.iter_mut().for_each(|x| *x = x.max(T::zero())),
        Activation::Elu => xs.iter_mut().for_each(|x| {
            if *x <= T::zero() {
                *x = x.exp() - one
            }
        }),
        Activation::Sigmoid => xs.iter_mut().for_each(|x| *x = one / (one + (-*x).exp())),
        Activation::Softmax => unreachable!("softmax is applied by the loss"),
    }
}

/// Multiplies `delta` by the activation derivative expressed through the output `y`.
fn activation_backward<T: Real>(act: Activation, y: &[T], delta: &mut [T]) {
    let one = T::one();
    let zero = T::zero();
    match act {
        Activation::Relu => delta.iter_mut().zip(y).for_each(|(d, &y)| {
            if y <= zero {
                *d = zero
            }
        }),
        // elu'(z) = exp(z) = y + 1 for z <= 0
        Activation::Elu => delta.iter_mut().zip(y).for_each(|(d, &y)| {
            if y <= zero {
                *d = *d * (y + one)
            }
        }),
        Activation::Sigmoid => delta
            .iter_mut()
            .zip(y)
            .for_each(|(d, &y)| *d = *d * y * (one - y)),
        Activation::Softmax => unreachable!(),
    }
}

/// Weights, biases, their gradients and momentum buffers.
#[derive(Clone, Debug)]
struct Params<T> {
    w: Vec<T>,
    b: Vec<T>,
    gw: Vec<T>,
    gb: Vec<T>,
    vw: Vec<T>,
    vb: Vec<T>,
}

impl<T: Real> Params<T> {
    /// Glorot-uniform weights, zero biases. An empty bias means no bias term.
    fn xavier<R: Rng + ?Sized>(
        fan_in: usize,
        fan_out: usize,
        count: usize,
        bias: usize,
        rng: &mut R,
    ) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w: Vec<T> = (0..count)
            .map(|_| cast(rng.gen_range(-limit..=limit)))
            .collect();
        Params {
            gw: vec![T::zero(); count],
            vw: vec![T::zero(); count],
            w,
            b: vec![T::zero(); bias],
            gb: vec![T::zero(); bias],
            vb: vec![T::zero(); bias],
        }
    }

    fn add_bias(&self, out: &mut [T]) {
        if self.b.is_empty() {
            return;
        }
        for row in out.chunks_exact_mut(self.b.len()) {
            row.iter_mut().zip(&self.b).for_each(|(o, &b)| *o += b);
        }
    }

    fn bias_grad(&mut self, delta: &[T], accumulate: bool) {
        if self.b.is_empty() {
            return;
        }
        if !accumulate {
            self.gb.iter_mut().for_each(|g| *g = T::zero());
        }
        for row in delta.chunks_exact(self.b.len()) {
            self.gb.iter_mut().zip(row).for_each(|(g, &d)| *g += d);
        }
    }

    fn sgd_step(&mut self, lr: T, momentum: T, nesterov: bool) {
        let update = |w: &mut [T], g: &[T], v: &mut [T]| {
            for ((w, &g), v) in w.iter_mut().zip(g).zip(v.iter_mut()) {
                *v = momentum * *v - lr * g;
                if nesterov {
                    *w += momentum * *v - lr * g;
                } else {
                    *w += *v;
                }
            }
        };
        update(&mut self.w, &self.gw, &mut self.vw);
        update(&mut self.b, &self.gb, &mut self.vb);
    }
}

#[derive(Clone, Debug)]
struct Conv<T> {
    input: ImageShape,
    output: ImageShape,
    kernel: usize,
    stride: usize,
    activation: Activation,
    params: Params<T>,
    cols: Vec<T>,
    dcols: Vec<T>,
}

/// Upper bound on im2col scratch, in scalars.
const COLS_BUDGET: usize = 1 << 21;

impl<T: Real> Conv<T> {
    fn patch_len(&self) -> usize {
        self.kernel * self.kernel * self.input.channels
    }

    fn positions(&self) -> usize {
        self.output.height * self.output.width
    }

    /// Samples per im2col group.
    fn group(&self, batch: usize) -> usize {
        (COLS_BUDGET / (self.positions() * self.patch_len()).max(1)).clamp(1, batch.max(1))
    }

    fn im2col(&self, x: &[T], cols: &mut [T]) {
        let (w, c) = (self.input.width, self.input.channels);
        let run = self.kernel * c;
        let mut off = 0;
        for oy in 0..self.output.height {
            for ox in 0..self.output.width {
                for ky in 0..self.kernel {
                    let base = ((oy * self.stride + ky) * w + ox * self.stride) * c;
                    cols[off..off + run].copy_from_slice(&x[base..base + run]);
                    off += run;
                }
            }
        }
    }

    fn col2im(&self, cols: &[T], dx: &mut [T]) {
        let (w, c) = (self.input.width, self.input.channels);
        let run = self.kernel * c;
        let mut off = 0;
        for oy in 0..self.output.height {
            for ox in 0..self.output.width {
                for ky in 0..self.kernel {
                    let base = ((oy * self.stride + ky) * w + ox * self.stride) * c;
                    dx[base..base + run]
                        .iter_mut()
                        .zip(&cols[off..off + run])
                        .for_each(|(d, &v)| *d += v);
                    off += run;
                }
            }
        }
    }

    fn forward(&mut self, x: &[T], batch: usize, out: &mut [T]) {
        let (inl, outl) = (self.input.len(), self.output.len());
        let (p, kk, f) = (self.positions(), self.patch_len(), self.output.channels);
        let g = self.group(batch);
        let mut cols = std::mem::take(&mut self.cols);
        cols.resize(g * p * kk, T::zero());
        let mut s = 0;
        while s < batch {
            let n = g.min(batch - s);
            for i in 0..n {
                self.im2col(
                    &x[(s + i) * inl..(s + i + 1) * inl],
                    &mut cols[i * p * kk..(i + 1) * p * kk],
                );
            }
            let o = &mut out[s * outl..(s + n) * outl];
            gemm(
                n * p,
                kk,
                f,
                &cols,
                false,
                &self.params.w,
                false,
                T::zero(),
                o,
            );
            s += n;
        }
        self.cols = cols;
        self.params.add_bias(&mut out[..batch * outl]);
        activate(self.activation, &mut out[..batch * outl]);
    }

    fn backward(&mut self, x: &[T], y: &[T], delta: &mut [T], batch: usize, dx: Option<&mut [T]>) {
        let (inl, outl) = (self.input.len(), self.output.len());
        let (p, kk, f) = (self.positions(), self.patch_len(), self.output.channels);
        activation_backward(
            self.activation,
            &y[..batch * outl],
            &mut delta[..batch * outl],
        );
        self.params.bias_grad(&delta[..batch * outl], false);
        self.params.gw.iter_mut().for_each(|g| *g = T::zero());

        let g = self.group(batch);
        let mut cols = std::mem::take(&mut self.cols);
        let mut dcols = std::mem::take(&mut self.dcols);
        cols.resize(g * p * kk, T::zero());
        let mut dx = dx;
        if dx.is_some() {
            dcols.resize(g * p * kk, T::zero());
        }
        let mut s = 0;
        while s < batch {
            let n = g.min(batch - s);
            for i in 0..n {
                self.im2col(
                    &x[(s + i) * inl..(s + i + 1) * inl],
                    &mut cols[i * p * kk..(i + 1) * p * kk],
                );
            }
            let d = &delta[s * outl..(s + n) * outl];
            gemm(
                kk,
                n * p,
                f,
                &cols,
                true,
                d,
                false,
                T::one(),
                &mut self.params.gw,
            );
            if let Some(dx) = dx.as_deref_mut() {
                gemm(
                    n * p,
                    f,
                    kk,
                    d,
                    false,
                    &self.params.w,
                    true,
                    T::zero(),
                    &mut dcols,
                );
                for i in 0..n {
                    self.col2im(
                        &dcols[i * p * kk..(i + 1) * p * kk],
                        &mut dx[(s + i) * inl..(s + i + 1) * inl],
                    );
                }
            }
            s += n;
        }
        self.cols = cols;
        self.dcols = dcols;
    }
}

#[derive(Clone, Debug)]
struct Pool {
    kind: PoolKind,
    size: usize,
    stride: usize,
    input: ImageShape,
    output: ImageShape,
    argmax: Vec<u32>,
}

impl Pool {
    /// Input offset of the first channel of window cell `(ky, kx)` for output `(oy, ox)`.
    #[inline]
    fn base(&self, oy: usize, ox: usize, ky: usize, kx: usize) -> usize {
        ((oy * self.stride + ky) * self.input.width + ox * self.stride + kx) * self.input.channels
    }

    // Channels are innermost in HWC, so every window cell is a contiguous run of `c` values.
    fn forward<T: Real>(&mut self, x: &[T], batch: usize, out: &mut [T]) {
        let (inl, outl, c) = (self.input.len(), self.output.len(), self.input.channels);
        let norm: T = cast(1.0 / (self.size * self.size) as f64);
        let mut argmax = std::mem::take(&mut self.argmax);
        if self.kind == PoolKind::Max {
            argmax.resize(batch * outl, 0);
        }
        for s in 0..batch {
            let xs = &x[s * inl..(s + 1) * inl];
            let os = &mut out[s * outl..(s + 1) * outl];
            let mut o = 0;
            for oy in 0..self.output.height {
                for ox in 0..self.output.width {
                    let acc = &mut os[o..o + c];
                    match self.kind {
                        PoolKind::Avg => {
                            acc.iter_mut().for_each(|v| *v = T::zero());
                            for ky in 0..self.size {
                                for kx in 0..self.size {
                                    let b = self.base(oy, ox, ky, kx);
                                    acc.iter_mut()
                                        .zip(&xs[b..b + c])
                                        .for_each(|(a, &v)| *a += v);
                                }
                            }
                            acc.iter_mut().for_each(|v| *v = *v * norm);
                        }
                        PoolKind::Max => {
                            let arg = &mut argmax[s * outl + o..s * outl + o + c];
                            let b = self.base(oy, ox, 0, 0);
                            acc.copy_from_slice(&xs[b..b + c]);
                            for (ch, a) in arg.iter_mut().enumerate() {
                                *a = (b + ch) as u32;
                            }
                            // strict `>` keeps the first maximum in window order
                            for ky in 0..self.size {
                                for kx in 0..self.size {
                                    let b = self.base(oy, ox, ky, kx);
                                    for ch in 0..c {
                                        let v = xs[b + ch];
                                        if v > acc[ch] {
                                            acc[ch] = v;
                                            arg[ch] = (b + ch) as u32;
                                        }
                                    }
                                }
                            }
                        }
                    }
                    o += c;
                }
            }
        }
        self.argmax = argmax;
    }

    fn backward<T: Real>(&self, delta: &[T], batch: usize, dx: &mut [T]) {
        let (inl, outl, c) = (self.input.len(), self.output.len(), self.input.channels);
        let norm: T = cast(1.0 / (self.size * self.size) as f64);
        for s in 0..batch {
            let ds = &delta[s * outl..(s + 1) * outl];
            let dxs = &mut dx[s * inl..(s + 1) * inl];
            match self.kind {
                PoolKind::Max => {
                    for (o, &d) in ds.iter().enumerate() {
                        dxs[self.argmax[s * outl + o] as usize] += d;
                    }
                }
                PoolKind::Avg => {
                    let mut o = 0;
                    for oy in 0..self.output.height {
                        for ox in 0..self.output.width {
                            let d = &ds[o..o + c];
                            for ky in 0..self.size {
                                for kx in 0..self.size {
                                    let b = self.base(oy, ox, ky, kx);
                                    dxs[b..b + c]
                                        .iter_mut()
                                        .zip(d)
                                        .for_each(|(g, &v)| *g += v * norm);
                                }
                            }
                            o += c;
                        }
                    }
                }
            }
        }
    }
}

#[derive(Clone, Debug)]
struct Dense<T> {
    inputs: usize,
    units: usize,
    /// `None` for the softmax output layer, whose activation lives in the loss.
    activation: Option<Activation>,
    params: Params<T>,
}

impl<T: Real> Dense<T> {
    fn forward(&mut self, x: &[T], batch: usize, out: &mut [T]) {
        let out = &mut out[..batch * self.units];
        gemm(
            batch,
            self.inputs,
            self.units,
            x,
            false,
            &self.params.w,
            false,
            T::zero(),
            out,
        );
        self.params.add_bias(out);
        if let Some(a) = self.activation {
            activate(a, out);
        }
    }

    fn backward(&mut self, x: &[T], y: &[T], delta: &mut [T], batch: usize, dx: Option<&mut [T]>) {
        let n = batch * self.units;
        if let Some(a) = self.activation {
            activation_backward(a, &y[..n], &mut delta[..n]);
        }
        let d = &delta[..n];
        self.params.bias_grad(d, false);
        gemm(
            self.inputs,
            batch,
            self.units,
            x,
            true,
            d,
            false,
            T::zero(),
            &mut self.params.gw,
        );
        if let Some(dx) = dx {
            gemm(
                batch,
                self.units,
                self.inputs,
                d,
                false,
                &self.params.w,
                true,
                T::zero(),
                dx,
            );
        }
    }
}

#[derive(Clone, Debug)]
struct Dropout<T> {
    rate: f64,
    mask: Vec<T>,
    active: bool,
}

#[derive(Clone, Debug)]
enum Layer<T> {
    Conv(Conv<T>),
    Pool(Pool),
    Dense(Dense<T>),
    Dropout(Dropout<T>),
}

/// A trainable network built from a phenotype.
#[derive(Clone, Debug)]
pub struct Network<T> {
    input_len: usize,
    classes: usize,
    layers: Vec<Layer<T>>,
    sizes: Vec<usize>,
    acts: Vec<Vec<T>>,
    probs: Vec<T>,
    optimizer: OptimizerGene,
    iterations: u64,
}

impl<T: Real> Network<T> {
    /// Builds layers with Glorot-uniform weights drawn from `rng`.
    pub fn new<R: Rng + ?Sized>(p: &Phenotype, rng: &mut R) -> Self {
        let mut layers = Vec::new();
        let mut sizes = vec![p.input.len()];
        for spec in &p.layers {
            let layer = match *spec {
                LayerSpec::Conv {
                    filters,
                    kernel,
                    stride,
                    activation,
                    use_bias,
                    input,
                    output,
                } => {
                    let kk = kernel * kernel;
                    Layer::Conv(Conv {
                        input,
                        output,
                        kernel,
                        stride,
                        activation,
                        params: Params::xavier(
                            kk * input.channels,
                            kk * filters,
                            kk * input.channels * filters,
                            if use_bias { filters } else { 0 },
                            rng,
                        ),
                        cols: Vec::new(),
                        dcols: Vec::new(),
                    })
                }
                LayerSpec::Pool {
                    kind,
                    size,
                    stride,
                    input,
                    output,
                } => Layer::Pool(Pool {
                    kind,
                    size,
                    stride,
                    input,
                    output,
                    argmax: Vec::new(),
                }),
                LayerSpec::Flatten { .. } => continue,
                LayerSpec::Dense {
                    units,
                    activation,
                    use_bias,
                    inputs,
                } => Layer::Dense(Dense {
                    inputs,
                    units,
                    activation: Some(activation),
                    params: Params::xavier(
                        inputs,
                        units,
                        inputs * units,
                        if use_bias { units } else { 0 },
                        rng,
                    ),
                }),
                LayerSpec::Output {
                    units,
                    use_bias,
                    inputs,
                } => Layer::Dense(Dense {
                    inputs,
                    units,
                    activation: None,
                    params: Params::xavier(
                        inputs,
                        units,
                        inputs * units,
                        if use_bias { units } else { 0 },
                        rng,
                    ),
                }),
                LayerSpec::Dropout { rate, .. } => Layer::Dropout(Dropout {
                    rate,
                    mask: Vec::new(),
                    active: false,
                }),
            };
            sizes.push(spec.output_len());
            layers.push(layer);
        }
        Network {
            input_len: p.input.len(),
            classes: p.class_count,
            acts: vec![Vec::new(); sizes.len()],
            layers,
            sizes,
            probs: Vec::new(),
            optimizer: p.optimizer.clone(),
            iterations: 0,
        }
    }

    pub fn class_count(&self) -> usize {
        self.classes
    }

    /// Runs the forward pass and returns softmax probabilities (`batch × classes`).
    /// Dropout is active only when `train` is set.
    pub fn forward<R: Rng + ?Sized>(
        &mut self,
        x: &[T],
        batch: usize,
        train: bool,
        rng: &mut R,
    ) -> &[T] {
        assert_eq!(x.len(), batch * self.input_len);
        self.acts[0].clear();
        self.acts[0].extend_from_slice(x);
        for i in 0..self.layers.len() {
            let (before, after) = self.acts.split_at_mut(i + 1);
            let input = &before[i];
            let out = &mut after[0];
            out.resize(batch * self.sizes[i + 1], T::zero());
            match &mut self.layers[i] {
                Layer::Conv(c) => c.forward(input, batch, out),
                Layer::Pool(p) => p.forward(input, batch, out),
                Layer::Dense(d) => d.forward(input, batch, out),
                Layer::Dropout(d) => {
                    out.copy_from_slice(input);
                    d.active = train && d.rate > 0.0;
                    if d.active {
                        let keep = 1.0 - d.rate;
                        let scale: T = cast(1.0 / keep);
                        d.mask.clear();
                        d.mask.extend((0..out.len()).map(|_| {
                            if rng.gen_bool(keep) {
                                scale
                            } else {
                                T::zero()
                            }
                        }));
                        out.iter_mut().zip(&d.mask).for_each(|(o, &m)| *o = *o * m);
                    }
                }
            }
        }
        let logits = self.acts.last().expect("output layer");
        self.probs.clear();
        self.probs.extend_from_slice(logits);
        for row in self.probs.chunks_exact_mut(self.classes) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut sum = T::zero();
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            row.iter_mut().for_each(|v| *v = *v / sum);
        }
        &self.probs
    }

    /// Mean sparse categorical cross-entropy of the last forward pass, plus the
    /// number of correct arg-max predictions.
    fn loss_of_last(&self, labels: &[usize]) -> (f64, usize) {
        let mut loss = 0.0;
        let mut correct = 0;
        for (row, &y) in self.probs.chunks_exact(self.classes).zip(labels) {
            let p = row[y].to_f64().unwrap_or(0.0);
            loss -= p.max(f64::MIN_POSITIVE).ln();
            let arg = row
                .iter()
                .enumerate()
                .fold(
                    (0, T::neg_infinity()),
                    |b, (i, &v)| if v > b.1 { (i, v) } else { b },
                )
                .0;
            if arg == y {
                correct += 1;
            }
        }
        (loss / labels.len() as f64, correct)
    }

    /// Forward pass only; returns the mean loss.
    pub fn loss<R: Rng + ?Sized>(
        &mut self,
        x: &[T],
        labels: &[usize],
        train: bool,
        rng: &mut R,
    ) -> f64 {
        self.forward(x, labels.len(), train, rng);
        self.loss_of_last(labels).0
    }

    /// Forward and backward pass; fills parameter gradients and returns the mean loss.
    pub fn loss_and_grad<R: Rng + ?Sized>(
        &mut self,
        x: &[T],
        labels: &[usize],
        train: bool,
        rng: &mut R,
    ) -> f64 {
        let batch = labels.len();
        self.forward(x, batch, train, rng);
        let (loss, _) = self.loss_of_last(labels);

        let inv: T = cast(1.0 / batch as f64);
        let mut delta = self.probs.clone();
        for (row, &y) in delta.chunks_exact_mut(self.classes).zip(labels) {
            row[y] = row[y] - T::one();
            row.iter_mut().for_each(|v| *v = *v * inv);
        }
        // nothing upstream of the first trainable layer needs a gradient
        let first = self
            .layers
            .iter()
            .position(|l| matches!(l, Layer::Conv(_) | Layer::Dense(_)))
            .unwrap_or(0);
        let mut next: Vec<T> = Vec::new();
        for i in (first..self.layers.len()).rev() {
            let need_dx = i > first;
            if need_dx {
                next.clear();
                next.resize(batch * self.sizes[i], T::zero());
            }
            let x = &self.acts[i];
            let y = &self.acts[i + 1];
            let dx = if need_dx { Some(&mut next[..]) } else { None };
            match &mut self.layers[i] {
                Layer::Conv(c) => c.backward(x, y, &mut delta, batch, dx),
                Layer::Dense(d) => d.backward(x, y, &mut delta, batch, dx),
                Layer::Pool(p) => {
                    if let Some(dx) = dx {
                        p.backward(&delta, batch, dx);
                    }
                }
                Layer::Dropout(d) => {
                    if let Some(dx) = dx {
                        if d.active {
                            dx.iter_mut()
                                .zip(&delta)
                                .zip(&d.mask)
                                .for_each(|((o, &g), &m)| *o = g * m);
                        } else {
                            dx.copy_from_slice(&delta[..dx.len()]);
                        }
                    }
                }
            }
            if need_dx {
                std::mem::swap(&mut delta, &mut next);
            }
        }
        loss
    }

    /// One SGD update with momentum, optional Nesterov correction and
    /// inverse-time decay `lr / (1 + decay · t)`, `t` counting prior updates.
    pub fn sgd_step(&mut self) {
        let o = &self.optimizer;
        let lr: T = cast(o.learning_rate / (1.0 + o.decay * self.iterations as f64));
        let momentum: T = cast(o.momentum);
        let nesterov = o.nesterov;
        for layer in &mut self.layers {
            match layer {
                Layer::Conv(c) => c.params.sgd_step(lr, momentum, nesterov),
                Layer::Dense(d) => d.params.sgd_step(lr, momentum, nesterov),
                _ => {}
            }
        }
        self.iterations += 1;
    }

    fn params(&self) -> impl Iterator<Item = &Params<T>> {
        self.layers.iter().filter_map(|l| match l {
            Layer::Conv(c) => Some(&c.params),
            Layer::Dense(d) => Some(&d.params),
            _ => None,
        })
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut Params<T>> {
        self.layers.iter_mut().filter_map(|l| match l {
            Layer::Conv(c) => Some(&mut c.params),
            Layer::Dense(d) => Some(&mut d.params),
            _ => None,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.params().map(|p| p.w.len() + p.b.len()).sum()
    }

    fn locate(&self, mut i: usize) -> (usize, bool, usize) {
        for (li, p) in self.params().enumerate() {
            if i < p.w.len() {
                return (li, false, i);
            }
            i -= p.w.len();
            if i < p.b.len() {
                return (li, true, i);
            }
            i -= p.b.len();
        }
        panic!("parameter index out of range");
    }

    /// Flat parameter access in layer order, weights before biases.
    pub fn parameter(&self, i: usize) -> T {
        let (li, bias, j) = self.locate(i);
        let p = self.params().nth(li).expect("located");
        if bias {
            p.b[j]
        } else {
            p.w[j]
        }
    }

    pub fn set_parameter(&mut self, i: usize, v: T) {
        let (li, bias, j) = self.locate(i);
        let p = self.params_mut().nth(li).expect("located");
        if bias {
            p.b[j] = v
        } else {
            p.w[j] = v
        }
    }

    /// Gradient from the last `loss_and_grad` call, same indexing as `parameter`.
    pub fn gradient(&self, i: usize) -> T {
        let (li, bias, j) = self.locate(i);
        let p = self.params().nth(li).expect("located");
        if bias {
            p.gb[j]
        } else {
            p.gw[j]
        }
    }
}
