//! Convolution kernels.
//!
//! Dense convolutions lower each sample to an `im2col` matrix and run one
//! `dgemm`; depthwise convolutions (one group per input channel, optionally
//! several filters per channel) use a direct sliding kernel. All products
//! are accumulated in `f64`.

use crate::element::Element;
use crate::error::{Result, TensorError};
use crate::kernels::gemm::{gemm, Trans};
use crate::parallel;

/// Resolved geometry of a 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
    pub oh: usize,
    pub ow: usize,
}

/// Output extent of one spatial axis.
pub fn conv_out_dim(input: usize, kernel: usize, stride: usize, pad: usize) -> usize {
    (input + 2 * pad - kernel) / stride + 1
}

impl ConvGeom {
    pub fn new(
        op: &'static str,
        input: &[usize],
        weight: &[usize],
        stride: usize,
        pad: usize,
        groups: usize,
    ) -> Result<Self> {
        let (n, c, h, w) = match *input {
            [n, c, h, w] => (n, c, h, w),
            _ => return Err(TensorError::dim(op, format!("input must be NCHW, got {input:?}"))),
        };
        let (k, wc, kh, kw) = match *weight {
            [k, wc, kh, kw] => (k, wc, kh, kw),
            _ => return Err(TensorError::dim(op, format!("weight must be KCHW, got {weight:?}"))),
        };
        if stride == 0 {
            return Err(TensorError::Precondition(format!("{op}: stride must be >= 1")));
        }
        if kh == 0 || kw == 0 {
            return Err(TensorError::Precondition(format!("{op}: empty kernel {kh}x{kw}")));
        }
        if groups == 0 || c % groups != 0 || k % groups != 0 {
            return Err(TensorError::dim(
                op,
                format!("groups {groups} must divide input channels {c} and filters {k}"),
            ));
        }
        if groups != 1 && groups != c {
            return Err(TensorError::dim(
                op,
                format!("only dense (groups=1) or depthwise (groups={c}) supported, got {groups}"),
            ));
        }
        if wc != c / groups {
            return Err(TensorError::dim(
                op,
                format!(
                    "weight expects {} input channels per group, input has {} ({} groups)",
                    wc,
                    c / groups,
                    groups
                ),
            ));
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(TensorError::dim(
                op,
                format!("kernel {kh}x{kw} larger than padded input {h}x{w} (pad {pad})"),
            ));
        }
        Ok(ConvGeom {
            n,
            c,
            h,
            w,
            k,
            kh,
            kw,
            stride,
            pad,
            groups,
            oh: conv_out_dim(h, kh, stride, pad),
            ow: conv_out_dim(w, kw, stride, pad),
        })
    }

    pub fn output_shape(&self) -> [usize; 4] {
        [self.n, self.k, self.oh, self.ow]
    }

    pub fn is_depthwise(&self) -> bool {
        self.groups > 1
    }

    /// Multiply-accumulates for the whole batch.
    pub fn macs(&self) -> u64 {
        (self.n * self.oh * self.ow * self.k * (self.c / self.groups) * self.kh * self.kw) as u64
    }

    fn col_rows(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    /// Output columns `[ox_lo, ox_hi)` whose input column `ox*stride + kx - pad` is in range.
    fn valid_cols(&self, kx: usize) -> (usize, usize) {
        let lo = if self.pad > kx {
            (self.pad - kx).div_ceil(self.stride)
        } else {
            0
        };
        let hi = if self.w + self.pad > kx {
            ((self.w - 1 + self.pad - kx) / self.stride + 1).min(self.ow)
        } else {
            0
        };
        (lo.min(hi), hi)
    }
}

fn im2col<T: Element>(x: &[T], g: &ConvGeom, cols: &mut [f64]) {
    let ohw = g.oh * g.ow;
    if g.is_pointwise() {
        for (dst, src) in cols.iter_mut().zip(x) {
            *dst = src.to_f64();
        }
        return;
    }
    for c in 0..g.c {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * ohw..(row + 1) * ohw];
                let (lo, hi) = g.valid_cols(kx);
                for oy in 0..g.oh {
                    let out_row = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        out_row.fill(0.0);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    out_row[..lo].fill(0.0);
                    out_row[hi..].fill(0.0);
                    for ox in lo..hi {
                        out_row[ox] = src[ox * g.stride + kx - g.pad].to_f64();
                    }
                }
            }
        }
    }
}

fn col2im_add(cols: &[f64], g: &ConvGeom, gx: &mut [f64]) {
    let ohw = g.oh * g.ow;
    if g.is_pointwise() {
        for (dst, src) in gx.iter_mut().zip(cols) {
            *dst += *src;
        }
        return;
    }
    for c in 0..g.c {
        let plane = &mut gx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let src = &cols[row * ohw..(row + 1) * ohw];
                let (lo, hi) = g.valid_cols(kx);
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in lo..hi {
                        dst[ox * g.stride + kx - g.pad] += src[oy * g.ow + ox];
                    }
                }
            }
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for i in 0..4 {
            acc[i] += x[i] * y[i];
        }
    }
    acc.iter().sum::<f64>() + tail
}

fn to_f64<T: Element>(v: &[T]) -> Vec<f64> {
    v.iter().map(|x| x.to_f64()).collect()
}

/// Forward convolution; dispatches on `groups`.
pub fn conv_forward<T: Element>(x: &[T], weight: &[T], g: &ConvGeom) -> Vec<T> {
    if g.is_depthwise() {
        depthwise_forward(x, weight, g)
    } else {
        dense_forward(x, weight, g)
    }
}

/// Gradients `(d input, d weight)` of a convolution.
pub fn conv_backward<T: Element>(
    x: &[T],
    weight: &[T],
    gy: &[f64],
    g: &ConvGeom,
    need_input: bool,
    need_weight: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    if g.is_depthwise() {
        depthwise_backward(x, weight, gy, g, need_input, need_weight)
    } else {
        dense_backward(x, weight, gy, g, need_input, need_weight)
    }
}

fn dense_forward<T: Element>(x: &[T], weight: &[T], g: &ConvGeom) -> Vec<T> {
    let ohw = g.oh * g.ow;
    let rows = g.col_rows();
    let w64 = to_f64(weight);
    let in_len = g.c * g.h * g.w;
    let mut out = vec![T::zero(); g.n * g.k * ohw];
    parallel::for_each_chunk(&mut out, g.k * ohw, |n, dst| {
        let mut cols = vec![0.0f64; rows * ohw];
        im2col(&x[n * in_len..(n + 1) * in_len], g, &mut cols);
        let mut acc = vec![0.0f64; g.k * ohw];
        gemm(g.k, rows, ohw, &w64, Trans::No, &cols, Trans::No, &mut acc, 0.0);
        for (d, v) in dst.iter_mut().zip(&acc) {
            *d = T::from_f64(*v);
        }
    });
    out
}

fn dense_backward<T: Element>(
    x: &[T],
    weight: &[T],
    gy: &[f64],
    g: &ConvGeom,
    need_input: bool,
    need_weight: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let ohw = g.oh * g.ow;
    let rows = g.col_rows();
    let in_len = g.c * g.h * g.w;
    let w64 = to_f64(weight);
    let mut gw = need_weight.then(|| vec![0.0f64; g.k * rows]);
    let mut gx = need_input.then(|| vec![0.0f64; x.len()]);
    let mut cols = vec![0.0f64; rows * ohw];
    let mut gcols = vec![0.0f64; rows * ohw];
    for n in 0..g.n {
        let gy64 = &gy[n * g.k * ohw..(n + 1) * g.k * ohw];
        if let Some(gw) = gw.as_mut() {
            im2col(&x[n * in_len..(n + 1) * in_len], g, &mut cols);
            // dW += dY · colsᵀ
            gemm(g.k, ohw, rows, gy64, Trans::No, &cols, Trans::Yes, gw, 1.0);
        }
        if let Some(gx) = gx.as_mut() {
            // dcols = Wᵀ · dY
            gemm(rows, g.k, ohw, &w64, Trans::Yes, gy64, Trans::No, &mut gcols, 0.0);
            col2im_add(&gcols, g, &mut gx[n * in_len..(n + 1) * in_len]);
        }
    }
    (gx, gw)
}

fn depthwise_forward<T: Element>(x: &[T], weight: &[T], g: &ConvGeom) -> Vec<T> {
    let ohw = g.oh * g.ow;
    let mult = g.k / g.c;
    let ksz = g.kh * g.kw;
    let plane_len = g.h * g.w;
    let mut out = vec![T::zero(); g.n * g.k * ohw];
    parallel::for_each_chunk(&mut out, g.k * ohw, |n, dst| {
        let mut acc = vec![0.0f64; ohw];
        for ic in 0..g.c {
            let base = (n * g.c + ic) * plane_len;
            let plane = to_f64(&x[base..base + plane_len]);
            for j in 0..mult {
                let oc = ic * mult + j;
                let wk = &weight[oc * ksz..(oc + 1) * ksz];
                acc.fill(0.0);
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        let wv = wk[ky * g.kw + kx].to_f64();
                        let (lo, hi) = g.valid_cols(kx);
                        for oy in 0..g.oh {
                            let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                            if iy < 0 || iy >= g.h as isize {
                                continue;
                            }
                            let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                            let row = &mut acc[oy * g.ow..(oy + 1) * g.ow];
                            if g.stride == 1 {
                                let off = lo + kx - g.pad;
                                for (a, s) in row[lo..hi].iter_mut().zip(&src[off..off + hi - lo]) {
                                    *a += wv * s;
                                }
                            } else {
                                for ox in lo..hi {
                                    row[ox] += wv * src[ox * g.stride + kx - g.pad];
                                }
                            }
                        }
                    }
                }
                for (d, v) in dst[oc * ohw..(oc + 1) * ohw].iter_mut().zip(&acc) {
                    *d = T::from_f64(*v);
                }
            }
        }
    });
    out
}

fn depthwise_backward<T: Element>(
    x: &[T],
    weight: &[T],
    gy: &[f64],
    g: &ConvGeom,
    need_input: bool,
    need_weight: bool,
) -> (Option<Vec<f64>>, Option<Vec<f64>>) {
    let ohw = g.oh * g.ow;
    let mult = g.k / g.c;
    let ksz = g.kh * g.kw;
    let plane_len = g.h * g.w;
    let mut gw = need_weight.then(|| vec![0.0f64; weight.len()]);
    let mut gx = need_input.then(|| vec![0.0f64; x.len()]);
    let mut gplane = vec![0.0f64; plane_len];
    for n in 0..g.n {
        for ic in 0..g.c {
            let base = (n * g.c + ic) * plane_len;
            let plane = to_f64(&x[base..base + plane_len]);
            gplane.fill(0.0);
            for j in 0..mult {
                let oc = ic * mult + j;
                let gyo = &gy[(n * g.k + oc) * ohw..(n * g.k + oc + 1) * ohw];
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        let wv = weight[oc * ksz + ky * g.kw + kx].to_f64();
                        let (lo, hi) = g.valid_cols(kx);
                        let mut wacc = 0.0f64;
                        for oy in 0..g.oh {
                            let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                            if iy < 0 || iy >= g.h as isize {
                                continue;
                            }
                            let iy = iy as usize;
                            let grow = &gyo[oy * g.ow..(oy + 1) * g.ow];
                            if g.stride == 1 {
                                let off = iy * g.w + lo + kx - g.pad;
                                let gs = &grow[lo..hi];
                                wacc += dot(gs, &plane[off..off + gs.len()]);
                                for (d, v) in gplane[off..off + gs.len()].iter_mut().zip(gs) {
                                    *d += wv * v;
                                }
                            } else {
                                for ox in lo..hi {
                                    let ix = iy * g.w + ox * g.stride + kx - g.pad;
                                    wacc += grow[ox] * plane[ix];
                                    gplane[ix] += wv * grow[ox];
                                }
                            }
                        }
                        if let Some(gw) = gw.as_mut() {
                            gw[oc * ksz + ky * g.kw + kx] += wacc;
                        }
                    }
                }
            }
            if let Some(gx) = gx.as_mut() {
                gx[base..base + plane_len].copy_from_slice(&gplane);
            }
        }
    }
    (gx, gw)
}
