//! Forward operators and their hand-written reverse-mode counterparts.
//!
//! Sequence operators accept `[L, C]` or batched `[N, L, C]`; image
//! operators accept `[H, W, C]` or batched `[N, H, W, C]`. Every operator
//! works on the trailing channel axis.

use crate::error::{Error, Result};
use crate::tensor::{gemm, MatRef, Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Padding {
    Same,
    Valid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PoolMode {
    Max,
    Avg,
}

/// Output extent and leading pad for a sliding window along one axis.
///
/// `Same` follows the usual `ceil(n / stride)` rule with the extra padding
/// cell on the trailing side; `Valid` never reads outside the input.
pub fn window_geometry(n: usize, k: usize, stride: usize, padding: Padding) -> Option<(usize, usize)> {
    if k == 0 || stride == 0 || n == 0 {
        return None;
    }
    match padding {
        Padding::Same => {
            let out = n.div_ceil(stride);
            let total = ((out - 1) * stride + k).saturating_sub(n);
            Some((out, total / 2))
        }
        Padding::Valid => {
            if k > n {
                None
            } else {
                Some(((n - k) / stride + 1, 0))
            }
        }
    }
}

// ---------------------------------------------------------------- pointwise

/// Per-position channel mixing: `out[r, j] = sum_i x[r, i] w[i, j] + b[j]`.
pub fn pointwise_conv<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (rows, cin) = x.as_rows();
    let (wi, cout) = matrix_dims(w, "pointwise_conv")?;
    if wi != cin {
        return Err(Error::dim("pointwise_conv", x.shape(), w.shape()));
    }
    if b.shape() != [cout] {
        return Err(Error::dim("pointwise_conv bias", w.shape(), b.shape()));
    }
    let mut out = Vec::with_capacity(rows * cout);
    for _ in 0..rows {
        out.extend_from_slice(b.data());
    }
    gemm(
        MatRef::new(x.data(), rows, cin),
        MatRef::new(w.data(), cin, cout),
        T::one(),
        &mut out,
    );
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = cout;
    Tensor::new(&shape, out)
}

pub struct PointwiseGrads<T> {
    pub dx: Tensor<T>,
    pub dw: Tensor<T>,
    pub db: Tensor<T>,
}

pub fn pointwise_conv_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
) -> Result<PointwiseGrads<T>> {
    let (rows, cin) = x.as_rows();
    let (_, cout) = matrix_dims(w, "pointwise_conv")?;
    if dy.as_rows() != (rows, cout) {
        return Err(Error::dim("pointwise_conv backward", x.shape(), dy.shape()));
    }
    let mut dw = vec![T::zero(); cin * cout];
    gemm(
        MatRef::new(x.data(), rows, cin).t(),
        MatRef::new(dy.data(), rows, cout),
        T::zero(),
        &mut dw,
    );
    let mut db = vec![T::zero(); cout];
    for row in dy.data().chunks_exact(cout) {
        for (acc, &g) in db.iter_mut().zip(row) {
            *acc = *acc + g;
        }
    }
    let mut dx = vec![T::zero(); rows * cin];
    gemm(
        MatRef::new(dy.data(), rows, cout),
        MatRef::new(w.data(), cin, cout).t(),
        T::zero(),
        &mut dx,
    );
    Ok(PointwiseGrads {
        dx: Tensor::new(x.shape(), dx)?,
        dw: Tensor::new(w.shape(), dw)?,
        db: Tensor::new(&[cout], db)?,
    })
}

/// Fully connected layer on `[Cin]` or `[N, Cin]`.
pub fn dense<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if x.rank() > 2 {
        return Err(Error::Shape {
            layer: "dense".into(),
            reason: format!("expected [Cin] or [N, Cin], got {:?}", x.shape()),
        });
    }
    pointwise_conv(x, w, b)
}

fn matrix_dims<T: Real>(w: &Tensor<T>, op: &'static str) -> Result<(usize, usize)> {
    match *w.shape() {
        [r, c] => Ok((r, c)),
        _ => Err(Error::Shape {
            layer: op.into(),
            reason: format!("weights must be [Cin, Cout], got {:?}", w.shape()),
        }),
    }
}

// ---------------------------------------------------------------- depthwise

/// Kernel-size-1 depthwise convolution: one scalar per channel.
pub fn depthwise_scale<T: Real>(x: &Tensor<T>, d: &Tensor<T>) -> Result<Tensor<T>> {
    let c = x.channels();
    if d.shape() != [c] {
        return Err(Error::dim("depthwise_scale", x.shape(), d.shape()));
    }
    let mut out = x.clone();
    for row in out.data_mut().chunks_exact_mut(c) {
        for (v, &s) in row.iter_mut().zip(d.data()) {
            *v = *v * s;
        }
    }
    Ok(out)
}

pub fn depthwise_scale_backward<T: Real>(
    x: &Tensor<T>,
    d: &Tensor<T>,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    if x.shape() != dy.shape() {
        return Err(Error::dim("depthwise_scale backward", x.shape(), dy.shape()));
    }
    let c = x.channels();
    let dx = depthwise_scale(dy, d)?;
    let mut dd = vec![T::zero(); c];
    for (xr, gr) in x.data().chunks_exact(c).zip(dy.data().chunks_exact(c)) {
        for i in 0..c {
            dd[i] = dd[i] + xr[i] * gr[i];
        }
    }
    Ok((dx, Tensor::new(&[c], dd)?))
}

// ---------------------------------------------------------------- pooling

/// Stride-1, same-padded max pooling along the sequence axis.
///
/// Returns the pooled tensor and, per output cell, the sequence index that
/// won (lowest index on ties).
pub fn maxpool_seq<T: Real>(x: &Tensor<T>, k: usize) -> Result<(Tensor<T>, Vec<u32>)> {
    if k == 0 {
        return Err(Error::Argument("maxpool window must be >= 1".into()));
    }
    let (n, l, c) = x.seq_dims("maxpool_seq")?;
    let before = (k - 1) / 2;
    let xs = x.data();
    let mut out = vec![T::zero(); xs.len()];
    let mut arg = vec![0u32; xs.len()];
    for s in 0..n {
        let base = s * l * c;
        for pos in 0..l {
            let lo = pos.saturating_sub(before);
            let hi = (pos + k - before).min(l);
            for ch in 0..c {
                let mut best = lo;
                let mut best_v = xs[base + lo * c + ch];
                for j in lo + 1..hi {
                    let v = xs[base + j * c + ch];
                    if v > best_v {
                        best_v = v;
                        best = j;
                    }
                }
                out[base + pos * c + ch] = best_v;
                arg[base + pos * c + ch] = best as u32;
            }
        }
    }
    Ok((Tensor::new(x.shape(), out)?, arg))
}

pub fn maxpool_seq_backward<T: Real>(
    shape: &[usize],
    argmax: &[u32],
    dy: &Tensor<T>,
) -> Result<Tensor<T>> {
    if dy.shape() != shape {
        return Err(Error::dim("maxpool_seq backward", shape, dy.shape()));
    }
    let (n, l, c) = dy.seq_dims("maxpool_seq")?;
    let mut dx = vec![T::zero(); dy.numel()];
    for s in 0..n {
        let base = s * l * c;
        for pos in 0..l {
            for ch in 0..c {
                let i = base + pos * c + ch;
                let src = base + argmax[i] as usize * c + ch;
                dx[src] = dx[src] + dy.data()[i];
            }
        }
    }
    Tensor::new(shape, dx)
}

/// Mean over the sequence axis: `[L, C] -> [C]`, `[N, L, C] -> [N, C]`.
pub fn global_avg_pool<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, l, c) = x.seq_dims("global_avg_pool")?;
    let inv = T::one() / T::from_usize(l).unwrap();
    let mut out = vec![T::zero(); n * c];
    for s in 0..n {
        let acc = &mut out[s * c..(s + 1) * c];
        for row in x.data()[s * l * c..(s + 1) * l * c].chunks_exact(c) {
            for (a, &v) in acc.iter_mut().zip(row) {
                *a = *a + v;
            }
        }
        acc.iter_mut().for_each(|a| *a = *a * inv);
    }
    if x.rank() == 2 {
        Tensor::new(&[c], out)
    } else {
        Tensor::new(&[n, c], out)
    }
}

pub fn global_avg_pool_backward<T: Real>(input_shape: &[usize], dy: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, l, c) = match *input_shape {
        [l, c] => (1, l, c),
        [n, l, c] => (n, l, c),
        _ => return Err(Error::dim("global_avg_pool backward", input_shape, dy.shape())),
    };
    if dy.numel() != n * c {
        return Err(Error::dim("global_avg_pool backward", input_shape, dy.shape()));
    }
    let inv = T::one() / T::from_usize(l).unwrap();
    let mut dx = Vec::with_capacity(n * l * c);
    for s in 0..n {
        let g = &dy.data()[s * c..(s + 1) * c];
        for _ in 0..l {
            dx.extend(g.iter().map(|&v| v * inv));
        }
    }
    Tensor::new(input_shape, dx)
}

// ---------------------------------------------------------------- 2-D ops

#[derive(Clone, Copy, Debug)]
struct Geometry2d {
    n: usize,
    h: usize,
    w: usize,
    c: usize,
    k: usize,
    stride: usize,
    oh: usize,
    ow: usize,
    pad_top: usize,
    pad_left: usize,
}

impl Geometry2d {
    fn new<T: Real>(x: &Tensor<T>, k: usize, stride: usize, padding: Padding, op: &'static str) -> Result<Self> {
        let (n, h, w, c) = x.image_dims(op)?;
        let fail = || Error::Shape {
            layer: op.into(),
            reason: format!("window {k} stride {stride} {padding:?} does not fit {h}x{w} input"),
        };
        let (oh, pad_top) = window_geometry(h, k, stride, padding).ok_or_else(fail)?;
        let (ow, pad_left) = window_geometry(w, k, stride, padding).ok_or_else(fail)?;
        Ok(Geometry2d {
            n,
            h,
            w,
            c,
            k,
            stride,
            oh,
            ow,
            pad_top,
            pad_left,
        })
    }

    /// Input coordinate of window tap `t` for output index `o`, if inside.
    #[inline]
    fn src(&self, o: usize, t: usize, pad: usize, extent: usize) -> Option<usize> {
        let p = (o * self.stride + t) as isize - pad as isize;
        (p >= 0 && (p as usize) < extent).then_some(p as usize)
    }

    fn out_shape(&self, rank: usize, c: usize) -> Vec<usize> {
        if rank == 3 {
            vec![self.oh, self.ow, c]
        } else {
            vec![self.n, self.oh, self.ow, c]
        }
    }
}

fn im2col<T: Real>(g: &Geometry2d, img: &[T], cols: &mut [T]) {
    let patch = g.k * g.k * g.c;
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            let row = &mut cols[(oy * g.ow + ox) * patch..][..patch];
            for ky in 0..g.k {
                for kx in 0..g.k {
                    let dst = &mut row[(ky * g.k + kx) * g.c..][..g.c];
                    match (g.src(oy, ky, g.pad_top, g.h), g.src(ox, kx, g.pad_left, g.w)) {
                        (Some(iy), Some(ix)) => {
                            dst.copy_from_slice(&img[(iy * g.w + ix) * g.c..][..g.c]);
                        }
                        _ => dst.iter_mut().for_each(|v| *v = T::zero()),
                    }
                }
            }
        }
    }
}

fn col2im<T: Real>(g: &Geometry2d, cols: &[T], img: &mut [T]) {
    let patch = g.k * g.k * g.c;
    for oy in 0..g.oh {
        for ox in 0..g.ow {
            let row = &cols[(oy * g.ow + ox) * patch..][..patch];
            for ky in 0..g.k {
                for kx in 0..g.k {
                    if let (Some(iy), Some(ix)) =
                        (g.src(oy, ky, g.pad_top, g.h), g.src(ox, kx, g.pad_left, g.w))
                    {
                        let src = &row[(ky * g.k + kx) * g.c..][..g.c];
                        let dst = &mut img[(iy * g.w + ix) * g.c..][..g.c];
                        for (d, &s) in dst.iter_mut().zip(src) {
                            *d = *d + s;
                        }
                    }
                }
            }
        }
    }
}

fn conv_kernel_dims<T: Real>(w: &Tensor<T>, cin: usize, x: &Tensor<T>) -> Result<(usize, usize)> {
    match *w.shape() {
        [k, k2, ci, co] if k == k2 && ci == cin => Ok((k, co)),
        _ => Err(Error::dim("conv2d", x.shape(), w.shape())),
    }
}

/// Cross-correlation of `[H, W, Cin]` (optionally batched) with
/// `[k, k, Cin, Cout]` weights.
pub fn conv2d<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    b: &Tensor<T>,
    stride: usize,
    padding: Padding,
) -> Result<Tensor<T>> {
    let (_, _, _, cin) = x.image_dims("conv2d")?;
    let (k, cout) = conv_kernel_dims(w, cin, x)?;
    if b.shape() != [cout] {
        return Err(Error::dim("conv2d bias", w.shape(), b.shape()));
    }
    let g = Geometry2d::new(x, k, stride, padding, "conv2d")?;
    let patch = k * k * cin;
    let spatial = g.oh * g.ow;
    let mut cols = vec![T::zero(); spatial * patch];
    let mut out = Vec::with_capacity(g.n * spatial * cout);
    for s in 0..g.n {
        im2col(&g, &x.data()[s * g.h * g.w * cin..][..g.h * g.w * cin], &mut cols);
        let start = out.len();
        for _ in 0..spatial {
            out.extend_from_slice(b.data());
        }
        gemm(
            MatRef::new(&cols, spatial, patch),
            MatRef::new(w.data(), patch, cout),
            T::one(),
            &mut out[start..],
        );
    }
    Tensor::new(&g.out_shape(x.rank(), cout), out)
}

pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    dy: &Tensor<T>,
    stride: usize,
    padding: Padding,
) -> Result<PointwiseGrads<T>> {
    let (_, _, _, cin) = x.image_dims("conv2d")?;
    let (k, cout) = conv_kernel_dims(w, cin, x)?;
    let g = Geometry2d::new(x, k, stride, padding, "conv2d")?;
    if dy.shape() != g.out_shape(x.rank(), cout).as_slice() {
        return Err(Error::dim("conv2d backward", x.shape(), dy.shape()));
    }
    let patch = k * k * cin;
    let spatial = g.oh * g.ow;
    let img = g.h * g.w * cin;
    let mut cols = vec![T::zero(); spatial * patch];
    let mut dcols = vec![T::zero(); spatial * patch];
    let mut dw = vec![T::zero(); patch * cout];
    let mut db = vec![T::zero(); cout];
    let mut dx = vec![T::zero(); x.numel()];
    for s in 0..g.n {
        let gy = &dy.data()[s * spatial * cout..][..spatial * cout];
        im2col(&g, &x.data()[s * img..][..img], &mut cols);
        gemm(
            MatRef::new(&cols, spatial, patch).t(),
            MatRef::new(gy, spatial, cout),
            T::one(),
            &mut dw,
        );
        for row in gy.chunks_exact(cout) {
            for (a, &v) in db.iter_mut().zip(row) {
                *a = *a + v;
            }
        }
        gemm(
            MatRef::new(gy, spatial, cout),
            MatRef::new(w.data(), patch, cout).t(),
            T::zero(),
            &mut dcols,
        );
        col2im(&g, &dcols, &mut dx[s * img..][..img]);
    }
    Ok(PointwiseGrads {
        dx: Tensor::new(x.shape(), dx)?,
        dw: Tensor::new(w.shape(), dw)?,
        db: Tensor::new(&[cout], db)?,
    })
}

/// 2-D pooling. `Avg` divides by the number of in-image cells in the window.
///
/// Returns the pooled tensor and the routing table used by the backward
/// pass (argmax input offset for `Max`, in-image cell count for `Avg`).
pub fn pool2d<T: Real>(
    x: &Tensor<T>,
    k: usize,
    stride: usize,
    padding: Padding,
    mode: PoolMode,
) -> Result<(Tensor<T>, Vec<u32>)> {
    let g = Geometry2d::new(x, k, stride, padding, "pool2d")?;
    let c = g.c;
    let mut out = vec![T::zero(); g.n * g.oh * g.ow * c];
    let mut route = vec![0u32; out.len()];
    for s in 0..g.n {
        let img = &x.data()[s * g.h * g.w * c..][..g.h * g.w * c];
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let o = ((s * g.oh + oy) * g.ow + ox) * c;
                for ch in 0..c {
                    let mut best = T::neg_infinity();
                    let mut best_at = 0usize;
                    let mut sum = T::zero();
                    let mut count = 0u32;
                    for ky in 0..k {
                        let Some(iy) = g.src(oy, ky, g.pad_top, g.h) else { continue };
                        for kx in 0..k {
                            let Some(ix) = g.src(ox, kx, g.pad_left, g.w) else { continue };
                            let at = (iy * g.w + ix) * c + ch;
                            let v = img[at];
                            if v > best {
                                best = v;
                                best_at = at;
                            }
                            sum = sum + v;
                            count += 1;
                        }
                    }
                    match mode {
                        PoolMode::Max => {
                            out[o + ch] = best;
                            route[o + ch] = best_at as u32;
                        }
                        PoolMode::Avg => {
                            out[o + ch] = sum / T::from_u32(count).unwrap();
                            route[o + ch] = count;
                        }
                    }
                }
            }
        }
    }
    Ok((Tensor::new(&g.out_shape(x.rank(), c), out)?, route))
}

pub fn pool2d_backward<T: Real>(
    x_shape: &[usize],
    route: &[u32],
    dy: &Tensor<T>,
    k: usize,
    stride: usize,
    padding: Padding,
    mode: PoolMode,
) -> Result<Tensor<T>> {
    let probe = Tensor::<T>::zeros(x_shape);
    let g = Geometry2d::new(&probe, k, stride, padding, "pool2d")?;
    if dy.shape() != g.out_shape(x_shape.len(), g.c).as_slice() {
        return Err(Error::dim("pool2d backward", x_shape, dy.shape()));
    }
    let c = g.c;
    let mut dx = probe.into_data();
    for s in 0..g.n {
        let img = &mut dx[s * g.h * g.w * c..][..g.h * g.w * c];
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let o = ((s * g.oh + oy) * g.ow + ox) * c;
                for ch in 0..c {
                    let grad = dy.data()[o + ch];
                    match mode {
                        PoolMode::Max => {
                            let at = route[o + ch] as usize;
                            img[at] = img[at] + grad;
                        }
                        PoolMode::Avg => {
                            let share = grad / T::from_u32(route[o + ch]).unwrap();
                            for ky in 0..k {
                                let Some(iy) = g.src(oy, ky, g.pad_top, g.h) else { continue };
                                for kx in 0..k {
                                    let Some(ix) = g.src(ox, kx, g.pad_left, g.w) else { continue };
                                    let at = (iy * g.w + ix) * c + ch;
                                    img[at] = img[at] + share;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(x_shape, dx)
}

// ---------------------------------------------------------------- batch norm

/// Saved state from a training-mode batch norm, consumed by the backward pass.
#[derive(Clone, Debug)]
pub struct BatchNormCache<T> {
    pub xhat: Tensor<T>,
    pub inv_std: Vec<T>,
    pub batch_mean: Vec<T>,
    pub batch_var: Vec<T>,
}

/// Training-mode batch norm: statistics per channel over every leading axis.
pub fn batch_norm_train<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: T,
) -> Result<(Tensor<T>, BatchNormCache<T>)> {
    let (rows, c) = x.as_rows();
    check_bn_params(x, gamma, beta)?;
    if rows == 0 {
        return Err(Error::Argument("batch norm over an empty batch".into()));
    }
    let m = T::from_usize(rows).unwrap();
    let mut mean = vec![T::zero(); c];
    for row in x.data().chunks_exact(c) {
        for (a, &v) in mean.iter_mut().zip(row) {
            *a = *a + v;
        }
    }
    mean.iter_mut().for_each(|a| *a = *a / m);
    let mut var = vec![T::zero(); c];
    for row in x.data().chunks_exact(c) {
        for i in 0..c {
            let d = row[i] - mean[i];
            var[i] = var[i] + d * d;
        }
    }
    var.iter_mut().for_each(|a| *a = *a / m);
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let mut xhat = x.clone();
    let mut y = x.clone();
    for (xr, yr) in xhat.data_mut().chunks_exact_mut(c).zip(y.data_mut().chunks_exact_mut(c)) {
        for i in 0..c {
            let h = (xr[i] - mean[i]) * inv_std[i];
            xr[i] = h;
            yr[i] = gamma.data()[i] * h + beta.data()[i];
        }
    }
    Ok((
        y,
        BatchNormCache {
            xhat,
            inv_std,
            batch_mean: mean,
            batch_var: var,
        },
    ))
}

pub fn batch_norm_infer<T: Real>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
    eps: T,
) -> Result<Tensor<T>> {
    let c = x.channels();
    check_bn_params(x, gamma, beta)?;
    if running_mean.shape() != [c] || running_var.shape() != [c] {
        return Err(Error::dim("batch_norm running stats", x.shape(), running_mean.shape()));
    }
    let scale: Vec<T> = (0..c)
        .map(|i| gamma.data()[i] / (running_var.data()[i] + eps).sqrt())
        .collect();
    let shift: Vec<T> = (0..c)
        .map(|i| beta.data()[i] - running_mean.data()[i] * scale[i])
        .collect();
    let mut y = x.clone();
    for row in y.data_mut().chunks_exact_mut(c) {
        for i in 0..c {
            row[i] = row[i] * scale[i] + shift[i];
        }
    }
    Ok(y)
}

fn check_bn_params<T: Real>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>) -> Result<()> {
    let c = x.channels();
    if gamma.shape() != [c] {
        return Err(Error::dim("batch_norm scale", x.shape(), gamma.shape()));
    }
    if beta.shape() != [c] {
        return Err(Error::dim("batch_norm shift", x.shape(), beta.shape()));
    }
    Ok(())
}

/// Returns `(dx, dgamma, dbeta)`.
pub fn batch_norm_backward<T: Real>(
    cache: &BatchNormCache<T>,
    gamma: &Tensor<T>,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    if dy.shape() != cache.xhat.shape() {
        return Err(Error::dim("batch_norm backward", cache.xhat.shape(), dy.shape()));
    }
    let (rows, c) = dy.as_rows();
    let m = T::from_usize(rows).unwrap();
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for (hr, gr) in cache.xhat.data().chunks_exact(c).zip(dy.data().chunks_exact(c)) {
        for i in 0..c {
            dgamma[i] = dgamma[i] + gr[i] * hr[i];
            dbeta[i] = dbeta[i] + gr[i];
        }
    }
    // dx = gamma * inv_std / m * (m * dy - sum(dy) - xhat * sum(dy * xhat))
    let mut dx = dy.clone();
    for (dr, hr) in dx.data_mut().chunks_exact_mut(c).zip(cache.xhat.data().chunks_exact(c)) {
        for i in 0..c {
            let k = gamma.data()[i] * cache.inv_std[i] / m;
            dr[i] = k * (m * dr[i] - dbeta[i] - hr[i] * dgamma[i]);
        }
    }
    Ok((dx, Tensor::new(&[c], dgamma)?, Tensor::new(&[c], dbeta)?))
}

// ---------------------------------------------------------------- activations and loss

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.max(T::zero()))
}

/// Gradient of ReLU given its output (zero where the unit was inactive).
pub fn relu_backward<T: Real>(y: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
    y.zip_map(dy, |o, g| if o > T::zero() { g } else { T::zero() })
}

/// Mean softmax cross-entropy over `[K]` or `[N, K]` logits and the
/// gradient of that mean with respect to the logits.
pub fn softmax_xent<T: Real>(logits: &Tensor<T>, labels: &[usize]) -> Result<(T, Tensor<T>)> {
    let (n, k) = logits.as_rows();
    if labels.len() != n {
        return Err(Error::dim("softmax_xent labels", logits.shape(), &[labels.len()]));
    }
    let inv_n = T::one() / T::from_usize(n).unwrap();
    let mut loss = T::zero();
    let mut grad = logits.clone();
    for (row, &label) in grad.data_mut().chunks_exact_mut(k).zip(labels) {
        if label >= k {
            return Err(Error::Index {
                what: "class label",
                index: label,
                bound: k,
            });
        }
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut z = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            z = z + *v;
        }
        let target = row[label];
        loss = loss + (z.ln() - target.ln());
        for v in row.iter_mut() {
            *v = *v / z * inv_n;
        }
        row[label] = row[label] - inv_n;
    }
    Ok((loss * inv_n, grad))
}

/// Row-wise softmax probabilities.
pub fn softmax<T: Real>(logits: &Tensor<T>) -> Tensor<T> {
    let k = logits.channels();
    let mut out = logits.clone();
    for row in out.data_mut().chunks_exact_mut(k) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut z = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            z = z + *v;
        }
        row.iter_mut().for_each(|v| *v = *v / z);
    }
    out
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn pointwise_examples() {
        let x = t(&[1, 2], &[1.0, 2.0]);
        let y = pointwise_conv(&x, &t(&[2, 1], &[1.0, 1.0]), &t(&[1], &[0.0])).unwrap();
        assert_eq!(y.data(), &[3.0]);

        let x = t(&[3, 2], &[1.0, -2.0, 0.5, 4.0, 3.0, 3.0]);
        let eye = t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let y = pointwise_conv(&x, &eye, &t(&[2], &[0.0, 0.0])).unwrap();
        assert_eq!(y.data(), x.data());

        let zeros = Tensor::<f64>::zeros(&[2, 4, 3]);
        let w = t(&[3, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let y = pointwise_conv(&zeros, &w, &t(&[2], &[0.5, -1.0])).unwrap();
        assert_eq!(y.shape(), &[2, 4, 2]);
        assert!(y.data().chunks(2).all(|r| r == [0.5, -1.0]));
    }

    #[test]
    fn pointwise_rejects_mismatch() {
        let x = t(&[1, 3], &[1.0, 2.0, 3.0]);
        let err = pointwise_conv(&x, &t(&[2, 1], &[1.0, 1.0]), &t(&[1], &[0.0])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[1, 3]") && msg.contains("[2, 1]"), "{msg}");
    }

    #[test]
    fn depthwise_examples() {
        let x = t(&[1, 2], &[2.0, 3.0]);
        assert_eq!(depthwise_scale(&x, &t(&[2], &[4.0, 5.0])).unwrap().data(), &[8.0, 15.0]);
        assert_eq!(depthwise_scale(&x, &t(&[2], &[1.0, 1.0])).unwrap().data(), x.data());
        assert_eq!(depthwise_scale(&x, &t(&[2], &[0.0, 0.0])).unwrap().data(), &[0.0, 0.0]);
        assert!(depthwise_scale(&x, &t(&[3], &[1.0, 1.0, 1.0])).is_err());
    }

    #[test]
    fn maxpool_seq_examples() {
        let x = t(&[3, 1], &[1.0, 5.0, 2.0]);
        assert_eq!(maxpool_seq(&x, 3).unwrap().0.data(), &[5.0, 5.0, 5.0]);
        assert_eq!(maxpool_seq(&x, 1).unwrap().0.data(), x.data());
        let c = Tensor::<f64>::full(&[2, 5, 3], 1.5);
        assert_eq!(maxpool_seq(&c, 3).unwrap().0, c);
        let x = t(&[5, 1], &[1.0, 5.0, 2.0, 0.0, 7.0]);
        assert_eq!(maxpool_seq(&x, 3).unwrap().0.data(), &[5.0, 5.0, 5.0, 7.0, 7.0]);
    }

    #[test]
    fn conv2d_examples() {
        let x = Tensor::<f64>::full(&[3, 3, 1], 1.0);
        let w = Tensor::<f64>::full(&[3, 3, 1, 1], 1.0);
        let y = conv2d(&x, &w, &t(&[1], &[0.0]), 1, Padding::Valid).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1]);
        assert_eq!(y.data(), &[9.0]);

        let x = Tensor::<f64>::zeros(&[7, 7, 2]);
        let w = Tensor::<f64>::zeros(&[5, 5, 2, 3]);
        let y = conv2d(&x, &w, &Tensor::zeros(&[3]), 1, Padding::Valid).unwrap();
        assert_eq!(y.shape(), &[3, 3, 3]);

        // 1x1 identity kernel passes channels through.
        let x = t(&[2, 2, 2], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0]);
        let eye = t(&[1, 1, 2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let y = conv2d(&x, &eye, &Tensor::zeros(&[2]), 1, Padding::Same).unwrap();
        assert_eq!(y, x);

        let big = Tensor::<f64>::zeros(&[3, 3, 1, 1]);
        let x = Tensor::<f64>::zeros(&[2, 2, 1]);
        assert!(conv2d(&x, &big, &Tensor::zeros(&[1]), 1, Padding::Valid).is_err());
    }

    #[test]
    fn conv2d_same_padding_sums_neighbourhood() {
        let x = t(&[3, 3, 1], &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]);
        let w = Tensor::<f64>::full(&[3, 3, 1, 1], 1.0);
        let y = conv2d(&x, &w, &t(&[1], &[0.0]), 1, Padding::Same).unwrap();
        assert_eq!(y.data(), &[12.0, 21.0, 16.0, 27.0, 45.0, 33.0, 24.0, 39.0, 28.0]);
    }

    #[test]
    fn pool2d_examples() {
        let x = t(&[2, 2, 1], &[1.0, 2.0, 3.0, 4.0]);
        let (y, _) = pool2d(&x, 2, 1, Padding::Valid, PoolMode::Avg).unwrap();
        assert_eq!(y.data(), &[2.5]);
        let (y, _) = pool2d(&x, 2, 1, Padding::Valid, PoolMode::Max).unwrap();
        assert_eq!(y.data(), &[4.0]);
        let (y, _) = pool2d(&x, 1, 1, Padding::Valid, PoolMode::Max).unwrap();
        assert_eq!(y, x);
        let x = Tensor::<f64>::zeros(&[7, 7, 4]);
        let (y, _) = pool2d(&x, 3, 1, Padding::Valid, PoolMode::Max).unwrap();
        assert_eq!(y.shape(), &[5, 5, 4]);
    }

    #[test]
    fn window_geometry_rules() {
        assert_eq!(window_geometry(7, 3, 1, Padding::Same), Some((7, 1)));
        assert_eq!(window_geometry(7, 3, 2, Padding::Same), Some((4, 1)));
        assert_eq!(window_geometry(7, 2, 1, Padding::Same), Some((7, 0)));
        assert_eq!(window_geometry(7, 5, 1, Padding::Valid), Some((3, 0)));
        assert_eq!(window_geometry(7, 3, 2, Padding::Valid), Some((3, 0)));
        assert_eq!(window_geometry(2, 3, 1, Padding::Valid), None);
    }

    #[test]
    fn global_avg_pool_examples() {
        let x = t(&[1, 3], &[1.0, 2.0, 3.0]);
        assert_eq!(global_avg_pool(&x).unwrap().data(), &[1.0, 2.0, 3.0]);
        let x = t(&[2, 2], &[0.0, 0.0, 2.0, 2.0]);
        assert_eq!(global_avg_pool(&x).unwrap().data(), &[1.0, 1.0]);
        let x = Tensor::<f64>::full(&[3, 4, 2], -0.25);
        let y = global_avg_pool(&x).unwrap();
        assert_eq!(y.shape(), &[3, 2]);
        assert!(y.data().iter().all(|&v| v == -0.25));
    }

    #[test]
    fn batch_norm_examples() {
        let eps = 1e-3;
        let ones = t(&[1], &[1.0]);
        let zero = t(&[1], &[0.0]);
        let x = t(&[2, 1], &[-1.0, 1.0]);
        let (y, cache) = batch_norm_train(&x, &ones, &zero, eps).unwrap();
        let expect = 1.0 / (1.0f64 + eps).sqrt();
        assert!(close(y.data(), &[-expect, expect], 1e-12));
        assert_eq!(cache.batch_mean, vec![0.0]);
        assert_eq!(cache.batch_var, vec![1.0]);

        // zero-mean unit-variance input passes through within tolerance
        let x = t(&[4, 1], &[-1.0, 1.0, -1.0, 1.0]);
        let (y, _) = batch_norm_train(&x, &ones, &zero, 1e-9).unwrap();
        assert!(close(y.data(), x.data(), 1e-6));

        let x = Tensor::<f64>::zeros(&[3, 1]);
        let (y, _) = batch_norm_train(&x, &ones, &t(&[1], &[2.5]), eps).unwrap();
        assert!(y.data().iter().all(|&v| v == 2.5));

        let y = batch_norm_infer(&t(&[2, 1], &[3.0, 5.0]), &ones, &zero, &t(&[1], &[4.0]), &t(&[1], &[1.0]), 0.0)
            .unwrap();
        assert_eq!(y.data(), &[-1.0, 1.0]);
    }

    #[test]
    fn loss_examples() {
        let (loss, _) = softmax_xent(&t(&[2], &[1.0, 0.0]), &[0]).unwrap();
        assert!((loss - (1.0 + (-1.0f64).exp()).ln()).abs() < 1e-12);
        assert!((loss - 0.3133).abs() < 1e-4);
        let (loss, _) = softmax_xent(&t(&[5], &[0.7; 5]), &[3]).unwrap();
        assert!((loss - 5f64.ln()).abs() < 1e-12);
        assert!(matches!(
            softmax_xent(&t(&[2], &[0.0, 0.0]), &[2]),
            Err(Error::Index { index: 2, bound: 2, .. })
        ));
    }

    #[test]
    fn relu_examples() {
        assert_eq!(relu(&t(&[2], &[-3.0, 3.0])).data(), &[0.0, 3.0]);
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }
}
