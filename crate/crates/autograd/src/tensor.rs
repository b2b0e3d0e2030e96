//! Dense row-major `f64` tensors and the numeric kernels the tape is built on.
//!
//! Storage is reference counted, so cloning a tensor is cheap and mutation
//! goes through copy-on-write.

use std::fmt;
use std::sync::Arc;

#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<f64> = self.data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("head", &preview)
            .finish()
    }
}

/// Geometry of a 2-D convolution window, shared by `im2col` and `col2im`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeometry {
    pub batch: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub padding: usize,
    pub stride: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.padding - self.kernel_h) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.padding - self.kernel_w) / self.stride + 1
    }

    fn col_shape(&self) -> [usize; 2] {
        [
            self.channels * self.kernel_h * self.kernel_w,
            self.batch * self.out_height() * self.out_width(),
        ]
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

fn strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(
            numel(&shape),
            data.len(),
            "shape {:?} does not match {} elements",
            shape,
            data.len()
        );
        Tensor {
            shape,
            data: Arc::new(data),
        }
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        Tensor::new(shape.to_vec(), vec![value; numel(shape)])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor::full(shape, 0.0)
    }

    pub fn ones(shape: &[usize]) -> Self {
        Tensor::full(shape, 1.0)
    }

    pub fn scalar(value: f64) -> Self {
        Tensor::new(Vec::new(), vec![value])
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    pub fn into_vec(self) -> Vec<f64> {
        Arc::try_unwrap(self.data).unwrap_or_else(|shared| (*shared).clone())
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn reshape(&self, shape: &[usize]) -> Tensor {
        assert_eq!(
            numel(shape),
            self.numel(),
            "cannot reshape {:?} into {:?}",
            self.shape,
            shape
        );
        Tensor {
            shape: shape.to_vec(),
            data: Arc::clone(&self.data),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::new(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        assert_eq!(self.shape, other.shape, "elementwise shape mismatch");
        Tensor::new(
            self.shape.clone(),
            self.data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.numel() as f64
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Row `index` along the leading axis.
    pub fn index_first(&self, index: usize) -> Tensor {
        let inner = numel(&self.shape[1..]);
        Tensor::new(
            self.shape[1..].to_vec(),
            self.data[index * inner..(index + 1) * inner].to_vec(),
        )
    }

    /// Stack equally shaped tensors along a new leading axis.
    pub fn stack(items: &[Tensor]) -> Tensor {
        assert!(!items.is_empty(), "stack of zero tensors");
        let inner = items[0].shape.clone();
        let mut data = Vec::with_capacity(items.len() * items[0].numel());
        for t in items {
            assert_eq!(t.shape, inner, "stack shape mismatch");
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![items.len()];
        shape.extend(inner);
        Tensor::new(shape, data)
    }

    /// Matrix product of two rank-2 tensors, optionally transposing either operand.
    pub fn matmul(&self, rhs: &Tensor, trans_a: bool, trans_b: bool) -> Tensor {
        assert_eq!(self.rank(), 2, "matmul lhs must be rank 2");
        assert_eq!(rhs.rank(), 2, "matmul rhs must be rank 2");
        let (ar, ac) = (self.shape[0], self.shape[1]);
        let (br, bc) = (rhs.shape[0], rhs.shape[1]);
        let (m, k, rsa, csa) = if trans_a {
            (ac, ar, 1isize, ac as isize)
        } else {
            (ar, ac, ac as isize, 1isize)
        };
        let (k2, n, rsb, csb) = if trans_b {
            (bc, br, 1isize, bc as isize)
        } else {
            (br, bc, bc as isize, 1isize)
        };
        assert_eq!(
            k, k2,
            "matmul inner dimensions differ: {:?}{} x {:?}{}",
            self.shape,
            if trans_a { "^T" } else { "" },
            rhs.shape,
            if trans_b { "^T" } else { "" }
        );
        let mut out = vec![0.0; m * n];
        if m > 0 && n > 0 && k > 0 {
            // SAFETY: every pointer/stride pair addresses a buffer of the
            // stated logical size; `out` is freshly allocated and unaliased.
            unsafe {
                matrixmultiply::dgemm(
                    m,
                    k,
                    n,
                    1.0,
                    self.data.as_ptr(),
                    rsa,
                    csa,
                    rhs.data.as_ptr(),
                    rsb,
                    csb,
                    0.0,
                    out.as_mut_ptr(),
                    n as isize,
                    1,
                );
            }
        }
        Tensor::new(vec![m, n], out)
    }

    /// Unfold convolution windows of an NCHW tensor into a `[C*kh*kw, N*OH*OW]` matrix.
    pub fn im2col(&self, g: &ConvGeometry) -> Tensor {
        assert_eq!(
            self.shape,
            vec![g.batch, g.channels, g.height, g.width],
            "im2col geometry mismatch"
        );
        let (oh, ow) = (g.out_height(), g.out_width());
        let [rows, cols] = g.col_shape();
        let mut out = vec![0.0; rows * cols];
        let src = &self.data;
        let pad = g.padding as isize;
        for c in 0..g.channels {
            for ki in 0..g.kernel_h {
                for kj in 0..g.kernel_w {
                    let row = (c * g.kernel_h + ki) * g.kernel_w + kj;
                    let dst_row = &mut out[row * cols..(row + 1) * cols];
                    for n in 0..g.batch {
                        let plane = &src[(n * g.channels + c) * g.height * g.width..][..g.height * g.width];
                        for oy in 0..oh {
                            let iy = (oy * g.stride + ki) as isize - pad;
                            let base = (n * oh + oy) * ow;
                            if iy < 0 || iy >= g.height as isize {
                                continue;
                            }
                            let line = &plane[iy as usize * g.width..][..g.width];
                            if g.stride == 1 {
                                let (lo, hi) = valid_span(kj, g.padding, g.width, ow);
                                if lo < hi {
                                    let ix = lo + kj - g.padding;
                                    dst_row[base + lo..base + hi].copy_from_slice(&line[ix..ix + hi - lo]);
                                }
                                continue;
                            }
                            for ox in 0..ow {
                                let ix = (ox * g.stride + kj) as isize - pad;
                                if ix >= 0 && ix < g.width as isize {
                                    dst_row[base + ox] = line[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        Tensor::new(vec![rows, cols], out)
    }

    /// Adjoint of [`Tensor::im2col`]: fold a column matrix back, summing overlaps.
    pub fn col2im(&self, g: &ConvGeometry) -> Tensor {
        let [rows, cols] = g.col_shape();
        assert_eq!(self.shape, vec![rows, cols], "col2im geometry mismatch");
        let (oh, ow) = (g.out_height(), g.out_width());
        let mut out = vec![0.0; g.batch * g.channels * g.height * g.width];
        let pad = g.padding as isize;
        for c in 0..g.channels {
            for ki in 0..g.kernel_h {
                for kj in 0..g.kernel_w {
                    let row = (c * g.kernel_h + ki) * g.kernel_w + kj;
                    let src_row = &self.data[row * cols..(row + 1) * cols];
                    for n in 0..g.batch {
                        let plane = &mut out[(n * g.channels + c) * g.height * g.width..][..g.height * g.width];
                        for oy in 0..oh {
                            let iy = (oy * g.stride + ki) as isize - pad;
                            if iy < 0 || iy >= g.height as isize {
                                continue;
                            }
                            let base = (n * oh + oy) * ow;
                            let line = &mut plane[iy as usize * g.width..][..g.width];
                            if g.stride == 1 {
                                let (lo, hi) = valid_span(kj, g.padding, g.width, ow);
                                if lo < hi {
                                    let ix = lo + kj - g.padding;
                                    for (d, &v) in line[ix..ix + hi - lo].iter_mut().zip(&src_row[base + lo..base + hi]) {
                                        *d += v;
                                    }
                                }
                                continue;
                            }
                            for ox in 0..ow {
                                let ix = (ox * g.stride + kj) as isize - pad;
                                if ix >= 0 && ix < g.width as isize {
                                    line[ix as usize] += src_row[base + ox];
                                }
                            }
                        }
                    }
                }
            }
        }
        Tensor::new(vec![g.batch, g.channels, g.height, g.width], out)
    }

    /// 2x2 average pooling over the last two axes of an NCHW tensor.
    pub fn avg_pool2(&self) -> Tensor {
        let [n, c, h, w] = self.nchw();
        assert!(h % 2 == 0 && w % 2 == 0, "avg_pool2 needs even spatial dims, got {h}x{w}");
        let (oh, ow) = (h / 2, w / 2);
        let mut out = vec![0.0; n * c * oh * ow];
        for plane in 0..n * c {
            let src = &self.data[plane * h * w..][..h * w];
            let dst = &mut out[plane * oh * ow..][..oh * ow];
            for y in 0..oh {
                for x in 0..ow {
                    let top = 2 * y * w + 2 * x;
                    dst[y * ow + x] =
                        0.25 * (src[top] + src[top + 1] + src[top + w] + src[top + w + 1]);
                }
            }
        }
        Tensor::new(vec![n, c, oh, ow], out)
    }

    /// Nearest-neighbour 2x upsampling over the last two axes of an NCHW tensor.
    pub fn upsample2(&self) -> Tensor {
        let [n, c, h, w] = self.nchw();
        let (oh, ow) = (2 * h, 2 * w);
        let mut out = vec![0.0; n * c * oh * ow];
        for plane in 0..n * c {
            let src = &self.data[plane * h * w..][..h * w];
            let dst = &mut out[plane * oh * ow..][..oh * ow];
            for y in 0..oh {
                for x in 0..ow {
                    dst[y * ow + x] = src[(y / 2) * w + x / 2];
                }
            }
        }
        Tensor::new(vec![n, c, oh, ow], out)
    }

    fn nchw(&self) -> [usize; 4] {
        assert_eq!(self.rank(), 4, "expected NCHW tensor, got {:?}", self.shape);
        [self.shape[0], self.shape[1], self.shape[2], self.shape[3]]
    }

    /// Reorder axes: output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Tensor {
        assert_eq!(perm.len(), self.rank(), "permutation rank mismatch");
        let out_shape: Vec<usize> = perm.iter().map(|&p| self.shape[p]).collect();
        let in_strides = strides(&self.shape);
        let src_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
        let total = self.numel();
        let mut out = Vec::with_capacity(total);
        let rank = out_shape.len();
        if rank == 0 {
            return self.clone();
        }
        let mut index = vec![0usize; rank];
        let mut offset = 0usize;
        let last = rank - 1;
        let inner = out_shape[last];
        let inner_stride = src_strides[last];
        if total == 0 {
            return Tensor::new(out_shape, out);
        }
        loop {
            for i in 0..inner {
                out.push(self.data[offset + i * inner_stride]);
            }
            // advance all but the innermost axis
            let mut axis = last;
            loop {
                if axis == 0 {
                    return Tensor::new(out_shape, out);
                }
                axis -= 1;
                index[axis] += 1;
                offset += src_strides[axis];
                if index[axis] < out_shape[axis] {
                    break;
                }
                offset -= src_strides[axis] * out_shape[axis];
                index[axis] = 0;
            }
        }
    }

    /// Repeat size-one axes up to `shape`. Ranks must match.
    pub fn broadcast_to(&self, shape: &[usize]) -> Tensor {
        if self.shape == shape {
            return self.clone();
        }
        assert_eq!(self.rank(), shape.len(), "broadcast rank mismatch {:?} -> {:?}", self.shape, shape);
        for (&s, &t) in self.shape.iter().zip(shape) {
            assert!(s == t || s == 1, "cannot broadcast {:?} to {:?}", self.shape, shape);
        }
        let runs = collapse_runs(shape, |axis| self.shape[axis] == 1);
        let strides = run_strides(&runs);
        let mut out = Vec::with_capacity(numel(shape));
        if numel(shape) > 0 {
            expand_runs(&self.data, &runs, &strides, &mut out);
        }
        Tensor::new(shape.to_vec(), out)
    }

    /// Sum over the axes where `shape` has size one. Adjoint of `broadcast_to`.
    pub fn sum_to(&self, shape: &[usize]) -> Tensor {
        if self.shape == shape {
            return self.clone();
        }
        assert_eq!(self.rank(), shape.len(), "sum_to rank mismatch {:?} -> {:?}", self.shape, shape);
        for (&s, &t) in self.shape.iter().zip(shape) {
            assert!(s == t || t == 1, "cannot reduce {:?} to {:?}", self.shape, shape);
        }
        let runs = collapse_runs(&self.shape, |axis| shape[axis] == 1);
        let strides = run_strides(&runs);
        let mut out = vec![0.0; numel(shape)];
        if self.numel() > 0 {
            reduce_runs(&self.data, &runs, &strides, &mut out);
        }
        Tensor::new(shape.to_vec(), out)
    }

    /// Concatenate along `axis`; all other axes must agree.
    pub fn concat(items: &[&Tensor], axis: usize) -> Tensor {
        assert!(!items.is_empty(), "concat of zero tensors");
        let base = items[0].shape();
        let outer = numel(&base[..axis]);
        let inner = numel(&base[axis + 1..]);
        let mut total_axis = 0;
        for t in items {
            assert_eq!(t.rank(), base.len(), "concat rank mismatch");
            for (i, (&a, &b)) in t.shape.iter().zip(base).enumerate() {
                assert!(i == axis || a == b, "concat shape mismatch {:?} vs {:?}", t.shape, base);
            }
            total_axis += t.shape[axis];
        }
        let mut out = Vec::with_capacity(outer * total_axis * inner);
        for o in 0..outer {
            for t in items {
                let len = t.shape[axis] * inner;
                out.extend_from_slice(&t.data[o * len..(o + 1) * len]);
            }
        }
        let mut shape = base.to_vec();
        shape[axis] = total_axis;
        Tensor::new(shape, out)
    }

    /// Slice `len` entries starting at `start` along `axis`.
    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Tensor {
        assert!(start + len <= self.shape[axis], "narrow out of range");
        let outer = numel(&self.shape[..axis]);
        let inner = numel(&self.shape[axis + 1..]);
        let full = self.shape[axis] * inner;
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let row = &self.data[o * full..(o + 1) * full];
            out.extend_from_slice(&row[start * inner..(start + len) * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = len;
        Tensor::new(shape, out)
    }

    /// Zero-pad along `axis`. Adjoint of `narrow`.
    pub fn pad_axis(&self, axis: usize, before: usize, after: usize) -> Tensor {
        let outer = numel(&self.shape[..axis]);
        let inner = numel(&self.shape[axis + 1..]);
        let len = self.shape[axis];
        let full = len + before + after;
        let mut out = vec![0.0; outer * full * inner];
        for o in 0..outer {
            out[(o * full + before) * inner..(o * full + before + len) * inner]
                .copy_from_slice(&self.data[o * len * inner..(o + 1) * len * inner]);
        }
        let mut shape = self.shape.clone();
        shape[axis] = full;
        Tensor::new(shape, out)
    }
}

/// Merge adjacent axes of `shape` into runs that are either all repeated
/// (`true`) or all dense (`false`). Axes of extent one are dropped.
fn collapse_runs(shape: &[usize], repeated: impl Fn(usize) -> bool) -> Vec<(usize, bool)> {
    let mut runs: Vec<(usize, bool)> = Vec::new();
    for (axis, &extent) in shape.iter().enumerate() {
        if extent == 1 {
            continue;
        }
        let rep = repeated(axis);
        match runs.last_mut() {
            Some((n, r)) if *r == rep => *n *= extent,
            _ => runs.push((extent, rep)),
        }
    }
    if runs.is_empty() {
        runs.push((1, false));
    }
    runs
}

/// Offset step in the compact (non-repeated) tensor for each run; zero for repeated runs.
fn run_strides(runs: &[(usize, bool)]) -> Vec<usize> {
    let mut strides = vec![0; runs.len()];
    let mut acc = 1;
    for (i, &(n, rep)) in runs.iter().enumerate().rev() {
        if !rep {
            strides[i] = acc;
            acc *= n;
        }
    }
    strides
}

fn expand_runs(src: &[f64], runs: &[(usize, bool)], strides: &[usize], out: &mut Vec<f64>) {
    let (n, rep) = runs[0];
    if runs.len() == 1 {
        if rep {
            out.extend(std::iter::repeat_n(src[0], n));
        } else {
            out.extend_from_slice(&src[..n]);
        }
        return;
    }
    for i in 0..n {
        expand_runs(&src[i * strides[0]..], &runs[1..], &strides[1..], out);
    }
}

fn reduce_runs(src: &[f64], runs: &[(usize, bool)], strides: &[usize], out: &mut [f64]) {
    let (n, rep) = runs[0];
    if runs.len() == 1 {
        if rep {
            out[0] += src[..n].iter().sum::<f64>();
        } else {
            for (o, &v) in out[..n].iter_mut().zip(src) {
                *o += v;
            }
        }
        return;
    }
    let inner: usize = runs[1..].iter().map(|r| r.0).product();
    for i in 0..n {
        reduce_runs(&src[i * inner..], &runs[1..], &strides[1..], &mut out[i * strides[0]..]);
    }
}

/// Output columns `lo..hi` whose stride-one input column `ox + kj - pad` lies inside `0..width`.
fn valid_span(kj: usize, pad: usize, width: usize, ow: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(kj);
    let hi = (width + pad).saturating_sub(kj).min(ow);
    (lo, hi.max(lo))
}
