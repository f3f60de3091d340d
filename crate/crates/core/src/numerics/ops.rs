//! Differentiable operations on [`Var`].

use std::rc::Rc;

use super::real::gemm;
use super::{Array, Real, Var};

fn same_tape<T: Real>(a: &Var<'_, T>, b: &Var<'_, T>) {
    assert!(std::ptr::eq(a.tape, b.tape), "variables from different tapes");
}

fn lit<T: Real>(v: f64) -> T {
    T::lit(v)
}

impl<'t, T: Real> Var<'t, T> {
    fn unary<F, B>(self, forward: F, backward: B) -> Var<'t, T>
    where
        F: Fn(T) -> T,
        B: Fn(T, T, T) -> T + 'static,
    {
        let x = self.value();
        let y = x.map(forward);
        self.tape.op(&[self.id], y, move |ctx| {
            let x = ctx.input(0).data();
            let y = ctx.output.data();
            let data = ctx
                .grad
                .data()
                .iter()
                .enumerate()
                .map(|(i, &g)| backward(x[i], y[i], g))
                .collect();
            vec![Some(Array::from_vec(ctx.output.shape(), data).unwrap())]
        })
    }

    pub fn add(self, other: Var<'t, T>) -> Var<'t, T> {
        same_tape(&self, &other);
        assert_eq!(self.shape(), other.shape(), "add shapes");
        let y = self.value().zip_map(&other.value(), |a, b| a + b);
        self.tape.op(&[self.id, other.id], y, |ctx| {
            vec![Some(ctx.grad.clone()), Some(ctx.grad.clone())]
        })
    }

    pub fn sub(self, other: Var<'t, T>) -> Var<'t, T> {
        same_tape(&self, &other);
        assert_eq!(self.shape(), other.shape(), "sub shapes");
        let y = self.value().zip_map(&other.value(), |a, b| a - b);
        self.tape.op(&[self.id, other.id], y, |ctx| {
            vec![Some(ctx.grad.clone()), Some(ctx.grad.map(|g| -g))]
        })
    }

    pub fn mul(self, other: Var<'t, T>) -> Var<'t, T> {
        same_tape(&self, &other);
        assert_eq!(self.shape(), other.shape(), "mul shapes");
        let y = self.value().zip_map(&other.value(), |a, b| a * b);
        self.tape.op(&[self.id, other.id], y, |ctx| {
            vec![
                ctx.needs[0].then(|| ctx.grad.zip_map(ctx.input(1), |g, b| g * b)),
                ctx.needs[1].then(|| ctx.grad.zip_map(ctx.input(0), |g, a| g * a)),
            ]
        })
    }

    pub fn scale(self, c: T) -> Var<'t, T> {
        let y = self.value().map(|v| v * c);
        self.tape
            .op(&[self.id], y, move |ctx| vec![Some(ctx.grad.map(|g| g * c))])
    }

    pub fn add_scalar(self, c: T) -> Var<'t, T> {
        let y = self.value().map(|v| v + c);
        self.tape.op(&[self.id], y, |ctx| vec![Some(ctx.grad.clone())])
    }

    /// Elementwise product with a constant array.
    pub fn mul_const(self, m: &Array<T>) -> Var<'t, T> {
        assert_eq!(self.value().shape(), m.shape(), "mul_const shapes");
        let y = self.value().zip_map(m, |a, b| a * b);
        let m = Rc::new(m.clone());
        self.tape.op(&[self.id], y, move |ctx| {
            vec![Some(ctx.grad.zip_map(&m, |g, b| g * b))]
        })
    }

    /// `self - target` for a constant target.
    pub fn sub_const(self, target: &Array<T>) -> Var<'t, T> {
        assert_eq!(self.value().shape(), target.shape(), "sub_const shapes");
        let y = self.value().zip_map(target, |a, b| a - b);
        self.tape.op(&[self.id], y, |ctx| vec![Some(ctx.grad.clone())])
    }

    pub fn square(self) -> Var<'t, T> {
        let two = lit::<T>(2.0);
        self.unary(|x| x * x, move |x, _, g| two * x * g)
    }

    pub fn powf(self, p: T) -> Var<'t, T> {
        self.unary(move |x| x.powf(p), move |x, _, g| g * p * x.powf(p - T::one()))
    }

    pub fn tanh(self) -> Var<'t, T> {
        self.unary(|x| x.tanh(), |_, y, g| g * (T::one() - y * y))
    }

    pub fn relu(self) -> Var<'t, T> {
        self.unary(
            |x| x.max(T::zero()),
            |x, _, g| if x > T::zero() { g } else { T::zero() },
        )
    }

    pub fn leaky_relu(self, slope: T) -> Var<'t, T> {
        self.unary(
            move |x| if x > T::zero() { x } else { x * slope },
            move |x, _, g| if x > T::zero() { g } else { g * slope },
        )
    }

    /// `ln(1 + e^x)`, numerically stable.
    pub fn softplus(self) -> Var<'t, T> {
        self.unary(softplus, |x, _, g| g * sigmoid(x))
    }

    pub fn sum(self) -> Var<'t, T> {
        let y = Array::scalar(self.value().sum());
        self.tape.op(&[self.id], y, |ctx| {
            let g = ctx.grad.item();
            vec![Some(Array::full(ctx.input(0).shape(), g))]
        })
    }

    pub fn mean(self) -> Var<'t, T> {
        let n = T::from_usize(self.value().len()).unwrap();
        self.sum().scale(T::one() / n)
    }

    /// Mean over all axes but the first: `[N, ...] -> [N]`.
    pub fn mean_per_row(self) -> Var<'t, T> {
        let x = self.value();
        let n = x.dim(0);
        let inner = x.len() / n;
        let inv = T::one() / T::from_usize(inner).unwrap();
        let data = x
            .data()
            .chunks(inner)
            .map(|c| c.iter().copied().sum::<T>() * inv)
            .collect();
        let y = Array::from_vec(&[n], data).unwrap();
        self.tape.op(&[self.id], y, move |ctx| {
            let shape = ctx.input(0).shape();
            let mut out = Vec::with_capacity(n * inner);
            for &g in ctx.grad.data() {
                out.extend(std::iter::repeat_n(g * inv, inner));
            }
            vec![Some(Array::from_vec(shape, out).unwrap())]
        })
    }

    /// Sum over the last axis.
    pub fn sum_last(self) -> Var<'t, T> {
        let x = self.value();
        let shape = x.shape();
        let k = *shape.last().expect("sum_last on scalar");
        let out_shape = &shape[..shape.len() - 1];
        let data = x.data().chunks(k).map(|c| c.iter().copied().sum()).collect();
        let y = Array::from_vec(out_shape, data).unwrap();
        self.tape.op(&[self.id], y, move |ctx| {
            let mut out = Vec::with_capacity(ctx.input(0).len());
            for &g in ctx.grad.data() {
                out.extend(std::iter::repeat_n(g, k));
            }
            vec![Some(Array::from_vec(ctx.input(0).shape(), out).unwrap())]
        })
    }

    pub fn reshape(self, shape: &[usize]) -> Var<'t, T> {
        let y = (*self.value()).clone().reshape(shape).expect("reshape");
        self.tape.op(&[self.id], y, |ctx| {
            vec![Some(ctx.grad.clone().reshape(ctx.input(0).shape()).unwrap())]
        })
    }

    /// Matrix product `op(a) · op(b)` of 2-D variables.
    pub fn matmul(self, other: Var<'t, T>, trans_a: bool, trans_b: bool) -> Var<'t, T> {
        same_tape(&self, &other);
        let (a, b) = (self.value(), other.value());
        assert!(a.shape().len() == 2 && b.shape().len() == 2, "matmul needs 2-D");
        let (m, ka) = if trans_a { (a.dim(1), a.dim(0)) } else { (a.dim(0), a.dim(1)) };
        let (kb, n) = if trans_b { (b.dim(1), b.dim(0)) } else { (b.dim(0), b.dim(1)) };
        assert_eq!(ka, kb, "matmul inner dimensions");
        let k = ka;
        let mut c = vec![T::zero(); m * n];
        gemm(m, k, n, T::one(), a.data(), trans_a, b.data(), trans_b, T::zero(), &mut c);
        let y = Array::from_vec(&[m, n], c).unwrap();
        self.tape.op(&[self.id, other.id], y, move |ctx| {
            let (a, b, g) = (ctx.input(0), ctx.input(1), ctx.grad.data());
            let da = ctx.needs[0].then(|| {
                let mut d = vec![T::zero(); m * k];
                if trans_a {
                    // dA[k×m] = op(B) · Gᵀ
                    gemm(k, n, m, T::one(), b.data(), trans_b, g, true, T::zero(), &mut d);
                } else {
                    // dA[m×k] = G · op(B)ᵀ
                    gemm(m, n, k, T::one(), g, false, b.data(), !trans_b, T::zero(), &mut d);
                }
                Array::from_vec(a.shape(), d).unwrap()
            });
            let db = ctx.needs[1].then(|| {
                let mut d = vec![T::zero(); k * n];
                if trans_b {
                    // dB[n×k] = Gᵀ · op(A)
                    gemm(n, m, k, T::one(), g, true, a.data(), trans_a, T::zero(), &mut d);
                } else {
                    // dB[k×n] = op(A)ᵀ · G
                    gemm(k, m, n, T::one(), a.data(), !trans_a, g, false, T::zero(), &mut d);
                }
                Array::from_vec(b.shape(), d).unwrap()
            });
            vec![da, db]
        })
    }

    /// Fully connected layer: `x[N, in] · w[out, in]ᵀ + b[out]`.
    pub fn linear(self, w: Var<'t, T>, b: Var<'t, T>) -> Var<'t, T> {
        self.matmul(w, false, true).add_channel_bias(b)
    }

    /// Adds `b[C]` along axis 1 of `x[N, C, ...]`.
    pub fn add_channel_bias(self, b: Var<'t, T>) -> Var<'t, T> {
        same_tape(&self, &b);
        let (x, bv) = (self.value(), b.value());
        let c = x.dim(1);
        assert_eq!(bv.shape(), &[c], "bias shape");
        let inner: usize = x.shape()[2..].iter().product();
        let mut y = (*x).clone();
        for (i, v) in y.data_mut().iter_mut().enumerate() {
            *v += bv.data()[(i / inner) % c];
        }
        self.tape.op(&[self.id, b.id], y, move |ctx| {
            let db = ctx.needs[1].then(|| {
                let mut d = vec![T::zero(); c];
                for (i, &g) in ctx.grad.data().iter().enumerate() {
                    d[(i / inner) % c] += g;
                }
                Array::from_vec(&[c], d).unwrap()
            });
            vec![Some(ctx.grad.clone()), db]
        })
    }

    /// Multiplies `x[N, C, ...]` by per-sample, per-channel factors `s[N, C]`.
    pub fn scale_channels(self, s: Var<'t, T>) -> Var<'t, T> {
        same_tape(&self, &s);
        let (x, sv) = (self.value(), s.value());
        let (n, c) = (x.dim(0), x.dim(1));
        assert_eq!(sv.shape(), &[n, c], "scale_channels factor shape");
        let inner: usize = x.shape()[2..].iter().product();
        let mut y = (*x).clone();
        for (i, v) in y.data_mut().iter_mut().enumerate() {
            *v *= sv.data()[i / inner];
        }
        self.tape.op(&[self.id, s.id], y, move |ctx| {
            let (x, s, g) = (ctx.input(0).data(), ctx.input(1).data(), ctx.grad.data());
            let dx = ctx.needs[0].then(|| {
                let d = g.iter().enumerate().map(|(i, &gv)| gv * s[i / inner]).collect();
                Array::from_vec(ctx.input(0).shape(), d).unwrap()
            });
            let ds = ctx.needs[1].then(|| {
                let d = g
                    .chunks(inner)
                    .zip(x.chunks(inner))
                    .map(|(gc, xc)| gc.iter().zip(xc).map(|(&a, &b)| a * b).sum())
                    .collect();
                Array::from_vec(&[n, c], d).unwrap()
            });
            vec![dx, ds]
        })
    }

    /// Repeats a `[1, ...]` variable `n` times along the leading axis.
    pub fn broadcast_rows(self, n: usize) -> Var<'t, T> {
        let x = self.value();
        assert_eq!(x.dim(0), 1, "broadcast_rows needs a leading axis of 1");
        let inner = x.len();
        let mut shape = x.shape().to_vec();
        shape[0] = n;
        let mut data = Vec::with_capacity(n * inner);
        for _ in 0..n {
            data.extend_from_slice(x.data());
        }
        let y = Array::from_vec(&shape, data).unwrap();
        self.tape.op(&[self.id], y, move |ctx| {
            let mut d = vec![T::zero(); inner];
            for chunk in ctx.grad.data().chunks(inner) {
                for (a, &g) in d.iter_mut().zip(chunk) {
                    *a += g;
                }
            }
            vec![Some(Array::from_vec(ctx.input(0).shape(), d).unwrap())]
        })
    }

    /// Selects `x[:, index, :]` from a `[N, B, D]` variable.
    pub fn select_axis1(self, index: usize) -> Var<'t, T> {
        let x = self.value();
        let (n, b, d) = (x.dim(0), x.dim(1), x.dim(2));
        assert!(index < b, "select index");
        let mut out = Vec::with_capacity(n * d);
        for i in 0..n {
            out.extend_from_slice(&x.data()[(i * b + index) * d..(i * b + index + 1) * d]);
        }
        let y = Array::from_vec(&[n, d], out).unwrap();
        self.tape.op(&[self.id], y, move |ctx| {
            let mut dx = Array::zeros(&[n, b, d]);
            for i in 0..n {
                dx.data_mut()[(i * b + index) * d..(i * b + index + 1) * d]
                    .copy_from_slice(&ctx.grad.data()[i * d..(i + 1) * d]);
            }
            vec![Some(dx)]
        })
    }

    /// 2-D convolution, `x[N, C, H, W]` with `w[O, C, KH, KW]`, zero padding.
    pub fn conv2d(self, w: Var<'t, T>, stride: usize, pad: usize) -> Var<'t, T> {
        same_tape(&self, &w);
        let (x, wv) = (self.value(), w.value());
        let geo = ConvGeom::new(x.shape(), wv.shape(), stride, pad);
        let y = conv_forward(x.data(), wv.data(), &geo);
        self.tape.op(&[self.id, w.id], y, move |ctx| {
            let (x, wt, gy) = (ctx.input(0).data(), ctx.input(1).data(), ctx.grad.data());
            let (ck, o) = (geo.ck(), geo.o);
            let mut dx = ctx.needs[0].then(|| vec![T::zero(); x.len()]);
            let mut dw = ctx.needs[1].then(|| vec![T::zero(); wt.len()]);
            for (n0, cnt) in geo.chunks() {
                let cols = cnt * geo.p();
                let g = gather_onp(gy, &geo, n0, cnt);
                if let Some(dx) = dx.as_mut() {
                    let mut dcols = vec![T::zero(); ck * cols];
                    gemm(ck, o, cols, T::one(), wt, true, &g, false, T::zero(), &mut dcols);
                    col2im(&dcols, &geo, n0, cnt, dx);
                }
                if let Some(dw) = dw.as_mut() {
                    let c = im2col(x, &geo, n0, cnt);
                    gemm(o, cols, ck, T::one(), &g, false, &c, true, T::one(), dw);
                }
            }
            vec![
                dx.map(|d| Array::from_vec(ctx.input(0).shape(), d).unwrap()),
                dw.map(|d| Array::from_vec(ctx.input(1).shape(), d).unwrap()),
            ]
        })
    }

    /// Nearest-neighbour 2× upsampling of `[N, C, H, W]`.
    pub fn upsample2x(self) -> Var<'t, T> {
        let x = self.value();
        let (n, c, h, w) = (x.dim(0), x.dim(1), x.dim(2), x.dim(3));
        let mut y = vec![T::zero(); n * c * h * w * 4];
        for p in 0..n * c {
            let src = &x.data()[p * h * w..(p + 1) * h * w];
            let dst = &mut y[p * h * w * 4..(p + 1) * h * w * 4];
            for i in 0..2 * h {
                for j in 0..2 * w {
                    dst[i * 2 * w + j] = src[(i / 2) * w + j / 2];
                }
            }
        }
        let y = Array::from_vec(&[n, c, 2 * h, 2 * w], y).unwrap();
        self.tape.op(&[self.id], y, move |ctx| {
            let g = ctx.grad.data();
            let mut dx = vec![T::zero(); n * c * h * w];
            for p in 0..n * c {
                let src = &g[p * h * w * 4..(p + 1) * h * w * 4];
                let dst = &mut dx[p * h * w..(p + 1) * h * w];
                for i in 0..2 * h {
                    for j in 0..2 * w {
                        dst[(i / 2) * w + j / 2] += src[i * 2 * w + j];
                    }
                }
            }
            vec![Some(Array::from_vec(ctx.input(0).shape(), dx).unwrap())]
        })
    }

    /// `[N, C, H, W] -> [N, C]` spatial mean.
    pub fn global_avg_pool(self) -> Var<'t, T> {
        let x = self.value();
        let (n, c) = (x.dim(0), x.dim(1));
        self.reshape(&[n, c, x.len() / (n * c)])
            .sum_last()
            .scale(T::one() / T::from_usize(x.len() / (n * c)).unwrap())
    }

    /// Mean softmax cross-entropy of `logits[N, K]` against class indices.
    pub fn cross_entropy(self, labels: &[usize]) -> Var<'t, T> {
        let x = self.value();
        let (n, k) = (x.dim(0), x.dim(1));
        assert_eq!(labels.len(), n, "one label per row");
        let probs = softmax_rows(x.data(), k);
        let mut loss = T::zero();
        for (i, &l) in labels.iter().enumerate() {
            assert!(l < k, "label out of range");
            loss -= probs[i * k + l].max(lit(1e-30)).ln();
        }
        let inv_n = T::one() / T::from_usize(n).unwrap();
        let y = Array::scalar(loss * inv_n);
        let labels = labels.to_vec();
        self.tape.op(&[self.id], y, move |ctx| {
            let g = ctx.grad.item() * inv_n;
            let mut d = probs.clone();
            for (i, &l) in labels.iter().enumerate() {
                d[i * k + l] -= T::one();
            }
            for v in &mut d {
                *v *= g;
            }
            vec![Some(Array::from_vec(&[n, k], d).unwrap())]
        })
    }
}

pub fn softplus<T: Real>(x: T) -> T {
    if x > lit(20.0) {
        x
    } else if x < lit(-20.0) {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn softmax_rows<T: Real>(x: &[T], k: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks(k) {
        let m = row.iter().copied().fold(T::neg_infinity(), T::max);
        let e: Vec<T> = row.iter().map(|&v| (v - m).exp()).collect();
        let s: T = e.iter().copied().sum();
        out.extend(e.into_iter().map(|v| v / s));
    }
    out
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub o: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    fn new(x: &[usize], w: &[usize], stride: usize, pad: usize) -> Self {
        assert!(x.len() == 4 && w.len() == 4, "conv2d needs 4-D input and weight");
        assert_eq!(x[1], w[1], "conv2d channel mismatch");
        assert!(stride >= 1);
        let (h, wd, kh, kw) = (x[2], x[3], w[2], w[3]);
        assert!(h + 2 * pad >= kh && wd + 2 * pad >= kw, "kernel larger than input");
        Self {
            n: x[0],
            c: x[1],
            h,
            w: wd,
            o: w[0],
            kh,
            kw,
            stride,
            pad,
            ho: (h + 2 * pad - kh) / stride + 1,
            wo: (wd + 2 * pad - kw) / stride + 1,
        }
    }

    fn ck(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn p(&self) -> usize {
        self.ho * self.wo
    }

    /// Output columns `lo..hi` whose kernel tap `kj` lands inside the input.
    fn valid_ox(&self, kj: usize) -> (usize, usize) {
        // ix = ox·stride + kj − pad must satisfy 0 ≤ ix < w.
        let lo = self.pad.saturating_sub(kj).div_ceil(self.stride);
        let hi = if self.w + self.pad > kj {
            ((self.w + self.pad - kj - 1) / self.stride + 1).min(self.wo)
        } else {
            0
        };
        (lo.min(hi), hi)
    }

    /// Splits the batch into runs of samples whose column matrix stays
    /// around [`CONV_CHUNK_COLS`] wide, keeping each GEMM cache-resident.
    fn chunks(&self) -> impl Iterator<Item = (usize, usize)> {
        let per = (CONV_CHUNK_COLS / self.p()).clamp(1, self.n.max(1));
        let n = self.n;
        (0..n).step_by(per).map(move |n0| (n0, per.min(n - n0)))
    }
}

const CONV_CHUNK_COLS: usize = 1024;

/// Columns `[C·KH·KW, cnt·Ho·Wo]` for samples `n0..n0 + cnt`.
fn im2col<T: Real>(x: &[T], g: &ConvGeom, n0: usize, cnt: usize) -> Vec<T> {
    let np = cnt * g.p();
    let mut cols = vec![T::zero(); g.ck() * np];
    for c in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * np..(row + 1) * np];
                for n in 0..cnt {
                    let src = &x[((n0 + n) * g.c + c) * g.h * g.w..((n0 + n) * g.c + c + 1) * g.h * g.w];
                    for oy in 0..g.ho {
                        let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let srow = &src[iy as usize * g.w..(iy as usize + 1) * g.w];
                        let base = n * g.p() + oy * g.wo;
                        let (lo, hi) = g.valid_ox(kj);
                        let ix0 = lo * g.stride + kj - g.pad;
                        let d = &mut dst[base + lo..base + hi];
                        if g.stride == 1 {
                            d.copy_from_slice(&srow[ix0..ix0 + (hi - lo)]);
                        } else {
                            for (i, v) in d.iter_mut().enumerate() {
                                *v = srow[ix0 + i * g.stride];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Scatter-adds columns of samples `n0..n0 + cnt` back into `x`.
fn col2im<T: Real>(cols: &[T], g: &ConvGeom, n0: usize, cnt: usize, x: &mut [T]) {
    let np = cnt * g.p();
    for c in 0..g.c {
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * np..(row + 1) * np];
                for n in 0..cnt {
                    let dst = &mut x[((n0 + n) * g.c + c) * g.h * g.w..((n0 + n) * g.c + c + 1) * g.h * g.w];
                    for oy in 0..g.ho {
                        let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let base = n * g.p() + oy * g.wo;
                        let (lo, hi) = g.valid_ox(kj);
                        let ix0 = iy as usize * g.w + lo * g.stride + kj - g.pad;
                        for (i, &v) in src[base + lo..base + hi].iter().enumerate() {
                            dst[ix0 + i * g.stride] += v;
                        }
                    }
                }
            }
        }
    }
}

fn conv_forward<T: Real>(x: &[T], w: &[T], g: &ConvGeom) -> Array<T> {
    let p = g.p();
    let mut out = vec![T::zero(); g.n * g.o * p];
    for (n0, cnt) in g.chunks() {
        let cols = im2col(x, g, n0, cnt);
        let dst = &mut out[n0 * g.o * p..(n0 + cnt) * g.o * p];
        if cnt == 1 {
            gemm(g.o, g.ck(), p, T::one(), w, false, &cols, false, T::zero(), dst);
            continue;
        }
        // [O, cnt, P] -> [cnt, O, P]
        let mut y = vec![T::zero(); g.o * cnt * p];
        gemm(g.o, g.ck(), cnt * p, T::one(), w, false, &cols, false, T::zero(), &mut y);
        for o in 0..g.o {
            for n in 0..cnt {
                dst[(n * g.o + o) * p..(n * g.o + o + 1) * p].copy_from_slice(&y[(o * cnt + n) * p..(o * cnt + n + 1) * p]);
            }
        }
    }
    Array::from_vec(&[g.n, g.o, g.ho, g.wo], out).unwrap()
}

/// Gradient rows of samples `n0..n0 + cnt` as `[O, cnt, P]`.
fn gather_onp<T: Real>(gy: &[T], geo: &ConvGeom, n0: usize, cnt: usize) -> Vec<T> {
    let p = geo.p();
    let mut out = vec![T::zero(); geo.o * cnt * p];
    for n in 0..cnt {
        for o in 0..geo.o {
            out[(o * cnt + n) * p..(o * cnt + n + 1) * p]
                .copy_from_slice(&gy[((n0 + n) * geo.o + o) * p..((n0 + n) * geo.o + o + 1) * p]);
        }
    }
    out
}
