//! Layers with hand-derived backward passes. Parameters live in one flat
//! buffer; each layer stores offsets into it, and gradients are accumulated
//! into a buffer with the same layout.

use super::tensor::{matmul, Scalar, Tensor};

/// How a parameter tensor is initialized.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) enum Init {
    Zeros,
    Ones,
    /// Uniform in `(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    FanInUniform(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
    pub init: Init,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub(crate) struct ParamLayout {
    pub entries: Vec<ParamEntry>,
    pub total: usize,
}

impl ParamLayout {
    pub fn alloc(&mut self, name: impl Into<String>, shape: &[usize], init: Init) -> usize {
        let len = shape.iter().product();
        let offset = self.total;
        self.entries.push(ParamEntry {
            name: name.into(),
            shape: shape.to_vec(),
            offset,
            len,
            init,
        });
        self.total += len;
        offset
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Conv2d {
    pub cin: usize,
    pub cout: usize,
    /// Square kernel side, 1 or 3; stride 1 with "same" zero padding.
    pub k: usize,
    pub w: usize,
    pub b: usize,
}

impl Conv2d {
    pub fn new(layout: &mut ParamLayout, name: &str, cin: usize, cout: usize, k: usize, zero: bool) -> Self {
        let fan_in = cin * k * k;
        let winit = if zero { Init::Zeros } else { Init::FanInUniform(fan_in) };
        let w = layout.alloc(format!("{name}.weight"), &[cout, cin, k, k], winit);
        let b = layout.alloc(format!("{name}.bias"), &[cout], Init::Zeros);
        Self { cin, cout, k, w, b }
    }

    fn wlen(&self) -> usize {
        self.cout * self.cin * self.k * self.k
    }

    fn im2col<T: Scalar>(&self, x: &Tensor<T>, cols: &mut Vec<T>) {
        let (h, w) = (x.h, x.w);
        let hw = h * w;
        cols.clear();
        cols.resize(self.cin * 9 * hw, T::ZERO);
        for ci in 0..self.cin {
            let src = &x.data[ci * hw..(ci + 1) * hw];
            for ky in 0..3 {
                for kx in 0..3 {
                    let row = &mut cols[((ci * 9) + ky * 3 + kx) * hw..][..hw];
                    let x_lo = 1usize.saturating_sub(kx);
                    let x_hi = (w + 1 - kx).min(w);
                    for y in 0..h {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let sy = sy as usize;
                        let dst = &mut row[y * w + x_lo..y * w + x_hi];
                        let s0 = sy * w + x_lo + kx - 1;
                        dst.copy_from_slice(&src[s0..s0 + (x_hi - x_lo)]);
                    }
                }
            }
        }
    }

    fn col2im<T: Scalar>(&self, cols: &[T], h: usize, w: usize) -> Tensor<T> {
        let hw = h * w;
        let mut out = Tensor::zeros(self.cin, h, w);
        for ci in 0..self.cin {
            let dst = &mut out.data[ci * hw..(ci + 1) * hw];
            for ky in 0..3 {
                for kx in 0..3 {
                    let row = &cols[((ci * 9) + ky * 3 + kx) * hw..][..hw];
                    let x_lo = 1usize.saturating_sub(kx);
                    let x_hi = (w + 1 - kx).min(w);
                    for y in 0..h {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let sy = sy as usize;
                        let s0 = sy * w + x_lo + kx - 1;
                        let d = &mut dst[s0..s0 + (x_hi - x_lo)];
                        for (a, &b) in d.iter_mut().zip(&row[y * w + x_lo..y * w + x_hi]) {
                            *a += b;
                        }
                    }
                }
            }
        }
        out
    }

    pub fn forward<T: Scalar>(&self, p: &[T], x: &Tensor<T>) -> Tensor<T> {
        debug_assert_eq!(x.c, self.cin);
        let hw = x.hw();
        let mut out = Tensor::zeros(self.cout, x.h, x.w);
        let bias = &p[self.b..self.b + self.cout];
        for (co, &bv) in bias.iter().enumerate() {
            out.data[co * hw..(co + 1) * hw].fill(bv);
        }
        let weight = &p[self.w..self.w + self.wlen()];
        let kk = self.cin * self.k * self.k;
        if self.k == 1 {
            matmul(self.cout, kk, hw, weight, false, &x.data, false, &mut out.data, true);
        } else {
            let mut cols = Vec::new();
            self.im2col(x, &mut cols);
            matmul(self.cout, kk, hw, weight, false, &cols, false, &mut out.data, true);
        }
        out
    }

    /// Accumulates weight/bias gradients and returns the input gradient when asked.
    pub fn backward<T: Scalar>(
        &self,
        p: &[T],
        g: &mut [T],
        x: &Tensor<T>,
        dy: &Tensor<T>,
        need_dx: bool,
    ) -> Option<Tensor<T>> {
        let hw = x.hw();
        let kk = self.cin * self.k * self.k;
        {
            let gb = &mut g[self.b..self.b + self.cout];
            for (co, gbv) in gb.iter_mut().enumerate() {
                let mut s = T::ZERO;
                for &v in &dy.data[co * hw..(co + 1) * hw] {
                    s += v;
                }
                *gbv += s;
            }
        }
        let cols_owned;
        let cols: &[T] = if self.k == 1 {
            &x.data
        } else {
            let mut c = Vec::new();
            self.im2col(x, &mut c);
            cols_owned = c;
            &cols_owned
        };
        let wl = self.wlen();
        matmul(self.cout, hw, kk, &dy.data, false, cols, true, &mut g[self.w..self.w + wl], true);
        if !need_dx {
            return None;
        }
        let weight = &p[self.w..self.w + wl];
        let mut dcols = vec![T::ZERO; kk * hw];
        matmul(kk, self.cout, hw, weight, true, &dy.data, false, &mut dcols, false);
        if self.k == 1 {
            Some(Tensor::from_vec(self.cin, x.h, x.w, dcols))
        } else {
            Some(self.col2im(&dcols, x.h, x.w))
        }
    }
}

#[derive(Debug, Clone)]
pub(crate) struct GroupNorm {
    pub c: usize,
    pub groups: usize,
    pub gamma: usize,
    pub beta: usize,
}

pub(crate) struct GnCache<T> {
    xhat: Vec<T>,
    inv_std: Vec<T>,
}

const GN_EPS: f64 = 1e-5;

impl GroupNorm {
    pub fn new(layout: &mut ParamLayout, name: &str, c: usize, groups: usize) -> Self {
        let gamma = layout.alloc(format!("{name}.gamma"), &[c], Init::Ones);
        let beta = layout.alloc(format!("{name}.beta"), &[c], Init::Zeros);
        Self { c, groups, gamma, beta }
    }

    pub fn forward<T: Scalar>(&self, p: &[T], x: &Tensor<T>) -> (Tensor<T>, GnCache<T>) {
        let hw = x.hw();
        let cpg = self.c / self.groups;
        let n = (cpg * hw) as f64;
        let mut y = x.same_shape();
        let mut xhat = vec![T::ZERO; x.data.len()];
        let mut inv_std = Vec::with_capacity(self.groups);
        for g in 0..self.groups {
            let span = g * cpg * hw..(g + 1) * cpg * hw;
            let xs = &x.data[span.clone()];
            // Statistics in f64 regardless of T.
            let mean = xs.iter().map(|v| v.to_f64()).sum::<f64>() / n;
            let var = xs.iter().map(|v| (v.to_f64() - mean).powi(2)).sum::<f64>() / n;
            let istd = 1.0 / (var + GN_EPS).sqrt();
            let mean_t = T::from_f64(mean);
            let istd_t = T::from_f64(istd);
            inv_std.push(istd_t);
            for (i, &v) in xs.iter().enumerate() {
                xhat[span.start + i] = (v - mean_t) * istd_t;
            }
            for ci in g * cpg..(g + 1) * cpg {
                let ga = p[self.gamma + ci];
                let be = p[self.beta + ci];
                for i in ci * hw..(ci + 1) * hw {
                    y.data[i] = ga * xhat[i] + be;
                }
            }
        }
        (y, GnCache { xhat, inv_std })
    }

    pub fn backward<T: Scalar>(&self, p: &[T], grads: &mut [T], cache: &GnCache<T>, dy: &Tensor<T>) -> Tensor<T> {
        let hw = dy.hw();
        let cpg = self.c / self.groups;
        let n = T::from_f64((cpg * hw) as f64);
        let mut dx = dy.same_shape();
        for ci in 0..self.c {
            let mut dg = T::ZERO;
            let mut db = T::ZERO;
            for i in ci * hw..(ci + 1) * hw {
                dg += dy.data[i] * cache.xhat[i];
                db += dy.data[i];
            }
            grads[self.gamma + ci] += dg;
            grads[self.beta + ci] += db;
        }
        for g in 0..self.groups {
            let mut sum_d = T::ZERO;
            let mut sum_dx = T::ZERO;
            for ci in g * cpg..(g + 1) * cpg {
                let ga = p[self.gamma + ci];
                for i in ci * hw..(ci + 1) * hw {
                    let d = dy.data[i] * ga;
                    sum_d += d;
                    sum_dx += d * cache.xhat[i];
                }
            }
            let istd = cache.inv_std[g];
            for ci in g * cpg..(g + 1) * cpg {
                let ga = p[self.gamma + ci];
                for i in ci * hw..(ci + 1) * hw {
                    let d = dy.data[i] * ga;
                    dx.data[i] = istd * (d - (sum_d + cache.xhat[i] * sum_dx) / n);
                }
            }
        }
        dx
    }
}

#[inline]
fn sigmoid<T: Scalar>(v: T) -> T {
    T::ONE / (T::ONE + (-v).exp())
}

pub(crate) fn silu<T: Scalar>(x: &[T]) -> Vec<T> {
    x.iter().map(|&v| v * sigmoid(v)).collect()
}

pub(crate) fn silu_backward<T: Scalar>(x: &[T], dy: &[T]) -> Vec<T> {
    x.iter()
        .zip(dy)
        .map(|(&v, &d)| {
            let s = sigmoid(v);
            d * s * (T::ONE + v * (T::ONE - s))
        })
        .collect()
}

pub(crate) fn silu_t<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    Tensor::from_vec(x.c, x.h, x.w, silu(&x.data))
}

pub(crate) fn silu_backward_t<T: Scalar>(x: &Tensor<T>, dy: &Tensor<T>) -> Tensor<T> {
    Tensor::from_vec(x.c, x.h, x.w, silu_backward(&x.data, &dy.data))
}

#[derive(Debug, Clone)]
pub(crate) struct Linear {
    pub inp: usize,
    pub out: usize,
    pub w: usize,
    pub b: usize,
}

impl Linear {
    pub fn new(layout: &mut ParamLayout, name: &str, inp: usize, out: usize) -> Self {
        let w = layout.alloc(format!("{name}.weight"), &[out, inp], Init::FanInUniform(inp));
        let b = layout.alloc(format!("{name}.bias"), &[out], Init::Zeros);
        Self { inp, out, w, b }
    }

    pub fn forward<T: Scalar>(&self, p: &[T], x: &[T]) -> Vec<T> {
        (0..self.out)
            .map(|o| {
                let row = &p[self.w + o * self.inp..self.w + (o + 1) * self.inp];
                let mut acc = p[self.b + o];
                for (&a, &b) in row.iter().zip(x) {
                    acc += a * b;
                }
                acc
            })
            .collect()
    }

    /// Accumulates parameter gradients and adds the input gradient into `dx`.
    pub fn backward<T: Scalar>(&self, p: &[T], g: &mut [T], x: &[T], dy: &[T], dx: Option<&mut [T]>) {
        for o in 0..self.out {
            g[self.b + o] += dy[o];
            let row = &mut g[self.w + o * self.inp..self.w + (o + 1) * self.inp];
            for (gw, &xv) in row.iter_mut().zip(x) {
                *gw += dy[o] * xv;
            }
        }
        if let Some(dx) = dx {
            for o in 0..self.out {
                let row = &p[self.w + o * self.inp..self.w + (o + 1) * self.inp];
                for (d, &wv) in dx.iter_mut().zip(row) {
                    *d += dy[o] * wv;
                }
            }
        }
    }
}

pub(crate) fn avg_pool2<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (oh, ow) = (x.h / 2, x.w / 2);
    let quarter = T::from_f64(0.25);
    let mut out = Tensor::zeros(x.c, oh, ow);
    for c in 0..x.c {
        let src = &x.data[c * x.hw()..];
        let dst = &mut out.data[c * oh * ow..];
        for r in 0..oh {
            for col in 0..ow {
                let i = 2 * r * x.w + 2 * col;
                dst[r * ow + col] = (src[i] + src[i + 1] + src[i + x.w] + src[i + x.w + 1]) * quarter;
            }
        }
    }
    out
}

pub(crate) fn avg_pool2_backward<T: Scalar>(dy: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (dy.h * 2, dy.w * 2);
    let quarter = T::from_f64(0.25);
    let mut out = Tensor::zeros(dy.c, h, w);
    for c in 0..dy.c {
        for r in 0..h {
            for col in 0..w {
                out.data[c * h * w + r * w + col] = dy.data[c * dy.hw() + (r / 2) * dy.w + col / 2] * quarter;
            }
        }
    }
    out
}

pub(crate) fn upsample2<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    let (h, w) = (x.h * 2, x.w * 2);
    let mut out = Tensor::zeros(x.c, h, w);
    for c in 0..x.c {
        for r in 0..h {
            for col in 0..w {
                out.data[c * h * w + r * w + col] = x.data[c * x.hw() + (r / 2) * x.w + col / 2];
            }
        }
    }
    out
}

pub(crate) fn upsample2_backward<T: Scalar>(dy: &Tensor<T>) -> Tensor<T> {
    let (oh, ow) = (dy.h / 2, dy.w / 2);
    let mut out = Tensor::zeros(dy.c, oh, ow);
    for c in 0..dy.c {
        for r in 0..dy.h {
            for col in 0..dy.w {
                out.data[c * oh * ow + (r / 2) * ow + col / 2] += dy.data[c * dy.hw() + r * dy.w + col];
            }
        }
    }
    out
}

pub(crate) fn concat<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    debug_assert_eq!((a.h, a.w), (b.h, b.w));
    let mut data = Vec::with_capacity(a.data.len() + b.data.len());
    data.extend_from_slice(&a.data);
    data.extend_from_slice(&b.data);
    Tensor::from_vec(a.c + b.c, a.h, a.w, data)
}

pub(crate) fn split<T: Scalar>(x: &Tensor<T>, first: usize) -> (Tensor<T>, Tensor<T>) {
    let cut = first * x.hw();
    (
        Tensor::from_vec(first, x.h, x.w, x.data[..cut].to_vec()),
        Tensor::from_vec(x.c - first, x.h, x.w, x.data[cut..].to_vec()),
    )
}
