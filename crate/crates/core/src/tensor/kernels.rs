//! Numerical kernels shared by the recording tape and the eager evaluator.
//!
//! Everything here works on flat row-major slices. Parallel kernels split
//! work by output plane so every output element is accumulated by a single
//! thread in a fixed order; results do not depend on the thread count.

use rayon::prelude::*;

use super::PoolMode;
use crate::error::{Error, Result};

/// Largest `f64` strictly below one.
const BELOW_ONE: f64 = 1.0 - f64::EPSILON / 2.0;

/// Resolved extents of a 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub pad: usize,
    pub stride: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn new(
        input: &[usize],
        weight: &[usize],
        bias: &[usize],
        pad: usize,
        stride: usize,
    ) -> Result<Self> {
        const OP: &str = "conv2d";
        if input.len() != 4 {
            return Err(Error::shape(OP, "input rank", format!("expected 4, got {input:?}")));
        }
        if weight.len() != 4 {
            return Err(Error::shape(OP, "weight rank", format!("expected 4, got {weight:?}")));
        }
        let [n, cin, h, w] = [input[0], input[1], input[2], input[3]];
        let [cout, wcin, kh, kw] = [weight[0], weight[1], weight[2], weight[3]];
        if wcin != cin {
            return Err(Error::shape(
                OP,
                "input channels",
                format!("input has {cin}, weight expects {wcin}"),
            ));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::shape(OP, "kernel size", format!("{kh}x{kw} is not odd")));
        }
        if bias != [cout] {
            return Err(Error::shape(
                OP,
                "bias",
                format!("expected [{cout}], got {bias:?}"),
            ));
        }
        if stride == 0 {
            return Err(Error::invalid("stride", "must be at least 1"));
        }
        if h + 2 * pad < kh || w + 2 * pad < kw {
            return Err(Error::shape(
                OP,
                "spatial extent",
                format!("{h}x{w} padded by {pad} is smaller than kernel {kh}x{kw}"),
            ));
        }
        Ok(Self {
            n,
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            pad,
            stride,
            oh: (h + 2 * pad - kh) / stride + 1,
            ow: (w + 2 * pad - kw) / stride + 1,
        })
    }

    pub fn output_shape(&self) -> Vec<usize> {
        vec![self.n, self.cout, self.oh, self.ow]
    }

    /// Output columns `[lo, hi)` whose input column for kernel tap `kx`
    /// falls inside the image.
    fn col_range(&self, kx: usize) -> (usize, usize) {
        let lo = if self.pad > kx {
            (self.pad - kx).div_ceil(self.stride).min(self.ow)
        } else {
            0
        };
        let hi = if self.w + self.pad > kx {
            ((self.w - 1 + self.pad - kx) / self.stride + 1).min(self.ow)
        } else {
            0
        };
        (lo, hi.max(lo))
    }

    fn input_row(&self, oy: usize, ky: usize) -> Option<usize> {
        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
        (iy >= 0 && (iy as usize) < self.h).then_some(iy as usize)
    }

    fn widx(&self, co: usize, ci: usize, ky: usize, kx: usize) -> usize {
        ((co * self.cin + ci) * self.kh + ky) * self.kw + kx
    }
}

pub fn conv2d_forward(x: &[f64], weight: &[f64], bias: &[f64], g: &ConvGeom) -> Vec<f64> {
    let in_plane = g.h * g.w;
    let out_plane = g.oh * g.ow;
    let mut out = vec![0.0; g.n * g.cout * out_plane];
    if out_plane == 0 {
        return out;
    }
    out.par_chunks_mut(out_plane)
        .enumerate()
        .for_each(|(idx, plane)| {
            let (n, co) = (idx / g.cout, idx % g.cout);
            plane.fill(bias[co]);
            for ci in 0..g.cin {
                let xin = &x[(n * g.cin + ci) * in_plane..][..in_plane];
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        let wv = weight[g.widx(co, ci, ky, kx)];
                        let (lo, hi) = g.col_range(kx);
                        if lo == hi {
                            continue;
                        }
                        for oy in 0..g.oh {
                            let Some(iy) = g.input_row(oy, ky) else { continue };
                            let row_in = &xin[iy * g.w..][..g.w];
                            let row_out = &mut plane[oy * g.ow..][..g.ow];
                            if g.stride == 1 {
                                let off = lo + kx - g.pad;
                                for (o, i) in row_out[lo..hi].iter_mut().zip(&row_in[off..]) {
                                    *o += wv * i;
                                }
                            } else {
                                for (ox, o) in row_out.iter_mut().enumerate().take(hi).skip(lo) {
                                    *o += wv * row_in[ox * g.stride + kx - g.pad];
                                }
                            }
                        }
                    }
                }
            }
        });
    out
}

pub fn conv2d_backward_input(grad_out: &[f64], weight: &[f64], g: &ConvGeom) -> Vec<f64> {
    let in_plane = g.h * g.w;
    let out_plane = g.oh * g.ow;
    let mut gx = vec![0.0; g.n * g.cin * in_plane];
    if in_plane == 0 {
        return gx;
    }
    gx.par_chunks_mut(in_plane)
        .enumerate()
        .for_each(|(idx, plane)| {
            let (n, ci) = (idx / g.cin, idx % g.cin);
            for co in 0..g.cout {
                let gout = &grad_out[(n * g.cout + co) * out_plane..][..out_plane];
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        let wv = weight[g.widx(co, ci, ky, kx)];
                        let (lo, hi) = g.col_range(kx);
                        if lo == hi {
                            continue;
                        }
                        for oy in 0..g.oh {
                            let Some(iy) = g.input_row(oy, ky) else { continue };
                            let row_g = &gout[oy * g.ow..][..g.ow];
                            let row_x = &mut plane[iy * g.w..][..g.w];
                            if g.stride == 1 {
                                let off = lo + kx - g.pad;
                                for (xv, gv) in row_x[off..].iter_mut().zip(&row_g[lo..hi]) {
                                    *xv += wv * gv;
                                }
                            } else {
                                for ox in lo..hi {
                                    row_x[ox * g.stride + kx - g.pad] += wv * row_g[ox];
                                }
                            }
                        }
                    }
                }
            }
        });
    gx
}

pub fn conv2d_backward_weight(grad_out: &[f64], x: &[f64], g: &ConvGeom) -> Vec<f64> {
    let in_plane = g.h * g.w;
    let out_plane = g.oh * g.ow;
    let per_cout = g.cin * g.kh * g.kw;
    let mut gw = vec![0.0; g.cout * per_cout];
    if per_cout == 0 {
        return gw;
    }
    gw.par_chunks_mut(per_cout)
        .enumerate()
        .for_each(|(co, chunk)| {
            for ci in 0..g.cin {
                for ky in 0..g.kh {
                    for kx in 0..g.kw {
                        let (lo, hi) = g.col_range(kx);
                        if lo == hi {
                            continue;
                        }
                        let mut acc = 0.0;
                        for n in 0..g.n {
                            let gout = &grad_out[(n * g.cout + co) * out_plane..][..out_plane];
                            let xin = &x[(n * g.cin + ci) * in_plane..][..in_plane];
                            for oy in 0..g.oh {
                                let Some(iy) = g.input_row(oy, ky) else { continue };
                                let row_g = &gout[oy * g.ow..][..g.ow];
                                let row_x = &xin[iy * g.w..][..g.w];
                                for ox in lo..hi {
                                    acc += row_g[ox] * row_x[ox * g.stride + kx - g.pad];
                                }
                            }
                        }
                        chunk[(ci * g.kh + ky) * g.kw + kx] = acc;
                    }
                }
            }
        });
    gw
}

pub fn conv2d_backward_bias(grad_out: &[f64], g: &ConvGeom) -> Vec<f64> {
    let out_plane = g.oh * g.ow;
    (0..g.cout)
        .map(|co| {
            (0..g.n)
                .map(|n| {
                    grad_out[(n * g.cout + co) * out_plane..][..out_plane]
                        .iter()
                        .sum::<f64>()
                })
                .sum()
        })
        .collect()
}

pub fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| if v > 0.0 { v } else { 0.0 }).collect()
}

pub fn relu_backward(x: &[f64], grad_out: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(grad_out)
        .map(|(&v, &g)| if v > 0.0 { g } else { 0.0 })
        .collect()
}

/// Logistic function, evaluated without overflow and kept strictly inside
/// `(0, 1)` at saturation.
pub fn sigmoid_scalar(v: f64) -> f64 {
    let s = if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    };
    s.clamp(f64::MIN_POSITIVE, BELOW_ONE)
}

pub fn sigmoid(x: &[f64]) -> Vec<f64> {
    x.iter().map(|&v| sigmoid_scalar(v)).collect()
}

/// Gradient through the logistic function given its forward output.
pub fn sigmoid_backward(out: &[f64], grad_out: &[f64]) -> Vec<f64> {
    out.iter()
        .zip(grad_out)
        .map(|(&s, &g)| g * s * (1.0 - s))
        .collect()
}

fn rank4(op: &'static str, shape: &[usize]) -> Result<[usize; 4]> {
    match shape {
        &[n, c, h, w] => Ok([n, c, h, w]),
        _ => Err(Error::shape(op, "rank", format!("expected 4-D tensor, got {shape:?}"))),
    }
}

/// Global pooling over height and width. Returns the pooled values and,
/// for max mode, the flat index of the first maximal element per channel.
pub fn pool_spatial(
    x: &[f64],
    shape: &[usize],
    mode: PoolMode,
) -> Result<(Vec<f64>, Vec<usize>)> {
    let [n, c, h, w] = rank4("pool_spatial", shape)?;
    let plane = h * w;
    if plane == 0 {
        return Err(Error::shape("pool_spatial", "spatial extent", "empty plane"));
    }
    let mut out = Vec::with_capacity(n * c);
    let mut arg = Vec::new();
    for (p, vals) in x.chunks(plane).enumerate().take(n * c) {
        match mode {
            PoolMode::Max => {
                let mut best = 0;
                for (i, &v) in vals.iter().enumerate() {
                    if v > vals[best] {
                        best = i;
                    }
                }
                out.push(vals[best]);
                arg.push(p * plane + best);
            }
            PoolMode::Avg => out.push(vals.iter().sum::<f64>() / plane as f64),
        }
    }
    Ok((out, arg))
}

pub fn pool_spatial_backward(
    grad_out: &[f64],
    shape: &[usize],
    mode: PoolMode,
    argmax: &[usize],
) -> Vec<f64> {
    let plane = shape[2] * shape[3];
    let mut gx = vec![0.0; shape.iter().product()];
    match mode {
        PoolMode::Max => {
            for (&idx, &g) in argmax.iter().zip(grad_out) {
                gx[idx] += g;
            }
        }
        PoolMode::Avg => {
            let scale = 1.0 / plane as f64;
            for (chunk, &g) in gx.chunks_mut(plane).zip(grad_out) {
                chunk.fill(g * scale);
            }
        }
    }
    gx
}

/// Pooling across the channel axis at every pixel. Max mode records the
/// flat input index of the first maximal channel.
pub fn pool_channel(
    x: &[f64],
    shape: &[usize],
    mode: PoolMode,
) -> Result<(Vec<f64>, Vec<usize>)> {
    let [n, c, h, w] = rank4("pool_channel", shape)?;
    if c == 0 {
        return Err(Error::shape("pool_channel", "channels", "zero channels"));
    }
    let plane = h * w;
    let mut out = vec![0.0; n * plane];
    let mut arg = Vec::new();
    if mode == PoolMode::Max {
        arg = vec![0; n * plane];
    }
    for b in 0..n {
        let base = b * c * plane;
        for p in 0..plane {
            let o = b * plane + p;
            match mode {
                PoolMode::Max => {
                    let mut best = base + p;
                    for ch in 1..c {
                        let idx = base + ch * plane + p;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                    out[o] = x[best];
                    arg[o] = best;
                }
                PoolMode::Avg => {
                    let s: f64 = (0..c).map(|ch| x[base + ch * plane + p]).sum();
                    out[o] = s / c as f64;
                }
            }
        }
    }
    Ok((out, arg))
}

pub fn pool_channel_backward(
    grad_out: &[f64],
    shape: &[usize],
    mode: PoolMode,
    argmax: &[usize],
) -> Vec<f64> {
    let (c, plane) = (shape[1], shape[2] * shape[3]);
    let mut gx = vec![0.0; shape.iter().product()];
    match mode {
        PoolMode::Max => {
            for (&idx, &g) in argmax.iter().zip(grad_out) {
                gx[idx] += g;
            }
        }
        PoolMode::Avg => {
            let scale = 1.0 / c as f64;
            for (o, &g) in grad_out.iter().enumerate() {
                let (b, p) = (o / plane, o % plane);
                for ch in 0..c {
                    gx[(b * c + ch) * plane + p] = g * scale;
                }
            }
        }
    }
    gx
}

pub fn concat_shape(a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let [n, ca, h, w] = rank4("concat_channels", a)?;
    let [nb, cb, hb, wb] = rank4("concat_channels", b)?;
    if n != nb {
        return Err(Error::shape("concat_channels", "batch", format!("{n} vs {nb}")));
    }
    if (h, w) != (hb, wb) {
        return Err(Error::shape(
            "concat_channels",
            "spatial extent",
            format!("{h}x{w} vs {hb}x{wb}"),
        ));
    }
    Ok(vec![n, ca + cb, h, w])
}

pub fn concat_channels(a: &[f64], sa: &[usize], b: &[f64], sb: &[usize]) -> Vec<f64> {
    let n = sa[0];
    let (la, lb) = (a.len() / n.max(1), b.len() / n.max(1));
    let mut out = Vec::with_capacity(a.len() + b.len());
    for i in 0..n {
        out.extend_from_slice(&a[i * la..][..la]);
        out.extend_from_slice(&b[i * lb..][..lb]);
    }
    debug_assert_eq!(out.len(), sa.iter().product::<usize>() + sb.iter().product::<usize>());
    out
}

/// Splits a concatenated gradient back into the two operand gradients.
pub fn concat_backward(grad_out: &[f64], sa: &[usize], sb: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let n = sa[0];
    let la: usize = sa[1..].iter().product();
    let lb: usize = sb[1..].iter().product();
    let mut ga = Vec::with_capacity(n * la);
    let mut gb = Vec::with_capacity(n * lb);
    for chunk in grad_out.chunks(la + lb).take(n) {
        ga.extend_from_slice(&chunk[..la]);
        gb.extend_from_slice(&chunk[la..]);
    }
    (ga, gb)
}

pub fn slice_shape(shape: &[usize], start: usize, len: usize) -> Result<Vec<usize>> {
    let [n, c, h, w] = rank4("slice_channels", shape)?;
    if start + len > c {
        return Err(Error::shape(
            "slice_channels",
            "channels",
            format!("range {start}..{} exceeds {c} channels", start + len),
        ));
    }
    Ok(vec![n, len, h, w])
}

pub fn slice_channels(x: &[f64], shape: &[usize], start: usize, len: usize) -> Vec<f64> {
    let (n, c, plane) = (shape[0], shape[1], shape[2] * shape[3]);
    let mut out = Vec::with_capacity(n * len * plane);
    for b in 0..n {
        out.extend_from_slice(&x[(b * c + start) * plane..][..len * plane]);
    }
    out
}

pub fn slice_backward(grad_out: &[f64], shape: &[usize], start: usize, len: usize) -> Vec<f64> {
    let (n, c, plane) = (shape[0], shape[1], shape[2] * shape[3]);
    let mut gx = vec![0.0; shape.iter().product()];
    for b in 0..n {
        gx[(b * c + start) * plane..][..len * plane]
            .copy_from_slice(&grad_out[b * len * plane..][..len * plane]);
    }
    gx
}

/// Strides that map an index of `full` onto `part`, with zero stride along
/// axes where `part` broadcasts. `part` must have the same rank and each
/// extent either equal to `full`'s or one.
pub fn broadcast_strides(op: &'static str, full: &[usize], part: &[usize]) -> Result<Vec<usize>> {
    if full.len() != part.len() {
        return Err(Error::shape(op, "rank", format!("{full:?} vs {part:?}")));
    }
    let mut strides = vec![0; part.len()];
    let mut acc = 1;
    for axis in (0..part.len()).rev() {
        if part[axis] == full[axis] {
            strides[axis] = if part[axis] == 1 { 0 } else { acc };
        } else if part[axis] != 1 {
            return Err(Error::shape(
                op,
                "broadcast",
                format!("{part:?} cannot broadcast over {full:?} (axis {axis})"),
            ));
        }
        acc *= part[axis];
    }
    Ok(strides)
}

/// Flat index into the broadcast operand for every element of `full`.
pub fn broadcast_index(full: &[usize], strides: &[usize]) -> Vec<usize> {
    let numel: usize = full.iter().product();
    let mut out = Vec::with_capacity(numel);
    let mut coord = vec![0usize; full.len()];
    for _ in 0..numel {
        out.push(coord.iter().zip(strides).map(|(c, s)| c * s).sum());
        for axis in (0..full.len()).rev() {
            coord[axis] += 1;
            if coord[axis] < full[axis] {
                break;
            }
            coord[axis] = 0;
        }
    }
    out
}

/// Sum of squared differences, accumulated in index order.
pub fn squared_error(pred: &[f64], target: &[f64]) -> f64 {
    pred.iter()
        .zip(target)
        .map(|(p, t)| (t - p) * (t - p))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_hand_counted_overlap() {
        let g = ConvGeom::new(&[1, 1, 3, 3], &[1, 1, 3, 3], &[1], 1, 1).unwrap();
        let out = conv2d_forward(&[1.0; 9], &[1.0; 9], &[0.0], &g);
        assert_eq!(out, vec![4.0, 6.0, 4.0, 6.0, 9.0, 6.0, 4.0, 6.0, 4.0]);
    }

    #[test]
    fn conv_geometry_errors_name_dimension() {
        let err = ConvGeom::new(&[1, 2, 5, 5], &[1, 3, 3, 3], &[1], 1, 1).unwrap_err();
        assert!(err.to_string().contains("input channels"), "{err}");
        let err = ConvGeom::new(&[1, 3, 5, 5], &[1, 3, 2, 2], &[1], 1, 1).unwrap_err();
        assert!(err.to_string().contains("kernel size"), "{err}");
        let err = ConvGeom::new(&[1, 3, 5, 5], &[2, 3, 3, 3], &[1], 1, 1).unwrap_err();
        assert!(err.to_string().contains("bias"), "{err}");
    }

    #[test]
    fn strided_conv_matches_naive_loop() {
        let x: Vec<f64> = (0..2 * 2 * 7 * 6).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let w: Vec<f64> = (0..3 * 2 * 3 * 5).map(|i| ((i * 13) % 7) as f64 - 3.0).collect();
        let b = [0.5, -1.0, 2.0];
        let g = ConvGeom::new(&[2, 2, 7, 6], &[3, 2, 3, 5], &[3], 2, 2).unwrap();
        let out = conv2d_forward(&x, &w, &b, &g);
        for n in 0..2 {
            for co in 0..3 {
                for oy in 0..g.oh {
                    for ox in 0..g.ow {
                        let mut acc = b[co];
                        for ci in 0..2 {
                            for ky in 0..3 {
                                for kx in 0..5 {
                                    let iy = (oy * 2 + ky) as isize - 2;
                                    let ix = (ox * 2 + kx) as isize - 2;
                                    if iy < 0 || ix < 0 || iy >= 7 || ix >= 6 {
                                        continue;
                                    }
                                    acc += w[((co * 2 + ci) * 3 + ky) * 5 + kx]
                                        * x[((n * 2 + ci) * 7 + iy as usize) * 6 + ix as usize];
                                }
                            }
                        }
                        let got = out[((n * 3 + co) * g.oh + oy) * g.ow + ox];
                        assert!((got - acc).abs() < 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn sigmoid_stays_inside_open_interval() {
        assert_eq!(sigmoid_scalar(0.0), 0.5);
        let hi = sigmoid_scalar(50.0);
        assert!((1.0 - 1e-15..1.0).contains(&hi));
        let lo = sigmoid_scalar(-800.0);
        assert!(lo > 0.0);
        assert!(sigmoid_scalar(f64::MAX).is_finite());
    }

    #[test]
    fn broadcast_rejects_incompatible() {
        assert!(broadcast_strides("mul", &[1, 3, 2, 2], &[1, 2, 1, 1]).is_err());
        assert_eq!(
            broadcast_strides("mul", &[2, 3, 2, 2], &[2, 3, 1, 1]).unwrap(),
            vec![3, 1, 0, 0]
        );
        assert_eq!(
            broadcast_strides("mul", &[2, 3, 2, 2], &[2, 1, 2, 2]).unwrap(),
            vec![4, 0, 2, 1]
        );
    }

    #[test]
    fn pool_max_takes_first_of_ties() {
        let (v, arg) = pool_spatial(&[1.0, 3.0, 3.0, 0.0], &[1, 1, 2, 2], PoolMode::Max).unwrap();
        assert_eq!(v, vec![3.0]);
        assert_eq!(arg, vec![1]);
        let (v, arg) = pool_channel(&[2.0, 2.0], &[1, 2, 1, 1], PoolMode::Max).unwrap();
        assert_eq!((v, arg), (vec![2.0], vec![0]));
    }
}
