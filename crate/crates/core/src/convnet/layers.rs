//! Layer plan and the per-example forward/backward kernels.
//!
//! Activations are `[channels][depth][height][width]`, flattened. Every
//! convolution-shaped layer (shared or local weights) reads its input
//! through a precomputed gather table mapping `(kernel tap, output
//! position)` to an input offset, so forward is a gather followed by a
//! dense multiply and backward is the transpose scatter.

use alloc::format;
use alloc::vec::Vec;

use super::spec::NetworkSpec;
use crate::error::{Error, Result};

/// Marks a tap that falls in the zero padding.
pub(crate) const PAD: u32 = u32::MAX;

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Window {
    pub in_shape: [usize; 4],
    pub out_shape: [usize; 4],
    /// Taps per output position: `in_channels · kd · kh · kw`.
    pub taps: usize,
    /// Output positions per channel: `od · oh · ow`.
    pub positions: usize,
    /// `taps × positions`, tap-major.
    pub gather: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct PoolWindow {
    pub in_shape: [usize; 4],
    pub out_shape: [usize; 4],
    pub window_len: usize,
    /// `out_len × window_len` input offsets.
    pub gather: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) enum Layer {
    /// Shared weights `[filters][taps]`, bias `[filters]`.
    Conv(Window),
    /// Untied weights `[filters][taps][positions]`, bias `[filters][positions]`.
    Local(Window),
    Pool(PoolWindow),
    Relu,
    /// Weights `[n_out][n_in]`, bias `[n_out]`, DropConnect-masked.
    Dense {
        n_in: usize,
        n_out: usize,
    },
}

impl Layer {
    /// `(weight count, bias count)` of a parametric layer.
    pub fn param_shape(&self) -> Option<(usize, usize)> {
        match self {
            Layer::Conv(w) => Some((w.out_shape[0] * w.taps, w.out_shape[0])),
            Layer::Local(w) => Some((w.out_shape[0] * w.taps * w.positions, w.out_shape[0] * w.positions)),
            Layer::Dense { n_in, n_out } => Some((n_in * n_out, *n_out)),
            Layer::Pool(_) | Layer::Relu => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Plan {
    pub input: [usize; 4],
    pub layers: Vec<Layer>,
    /// Output length of each layer.
    pub sizes: Vec<usize>,
}

fn out_dim(n: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let span = n + 2 * pad;
    (span >= k).then(|| (span - k) / stride + 1)
}

fn len(shape: [usize; 4]) -> usize {
    shape.iter().product()
}

fn window(
    in_shape: [usize; 4],
    filters: usize,
    k: [usize; 3],
    stride: [usize; 3],
    pad: [usize; 3],
    what: &str,
) -> Result<Window> {
    let [c, d, h, w] = in_shape;
    let dims = [d, h, w];
    let mut out = [0usize; 3];
    for a in 0..3 {
        out[a] = out_dim(dims[a], k[a], stride[a], pad[a])
            .ok_or_else(|| Error::arg(format!("{what}: kernel {k:?} does not fit input {in_shape:?}")))?;
    }
    let taps = c * k[0] * k[1] * k[2];
    let positions = out[0] * out[1] * out[2];
    let mut gather = Vec::with_capacity(taps * positions);
    for ci in 0..c {
        for kz in 0..k[0] {
            for ky in 0..k[1] {
                for kx in 0..k[2] {
                    for oz in 0..out[0] {
                        for oy in 0..out[1] {
                            for ox in 0..out[2] {
                                let z = (oz * stride[0] + kz) as i64 - pad[0] as i64;
                                let y = (oy * stride[1] + ky) as i64 - pad[1] as i64;
                                let x = (ox * stride[2] + kx) as i64 - pad[2] as i64;
                                let inside = z >= 0 && y >= 0 && x >= 0 && z < d as i64 && y < h as i64 && x < w as i64;
                                gather.push(if inside {
                                    (((ci * d + z as usize) * h + y as usize) * w + x as usize) as u32
                                } else {
                                    PAD
                                });
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(Window { in_shape, out_shape: [filters, out[0], out[1], out[2]], taps, positions, gather })
}

fn pool_window(in_shape: [usize; 4], k: [usize; 3], stride: [usize; 3]) -> Result<PoolWindow> {
    let [c, d, h, w] = in_shape;
    let dims = [d, h, w];
    let mut out = [0usize; 3];
    for a in 0..3 {
        out[a] = out_dim(dims[a], k[a], stride[a], 0)
            .ok_or_else(|| Error::arg(format!("pool: window {k:?} does not fit input {in_shape:?}")))?;
    }
    let window_len = k[0] * k[1] * k[2];
    let mut gather = Vec::with_capacity(c * out[0] * out[1] * out[2] * window_len);
    for ci in 0..c {
        for oz in 0..out[0] {
            for oy in 0..out[1] {
                for ox in 0..out[2] {
                    for kz in 0..k[0] {
                        for ky in 0..k[1] {
                            for kx in 0..k[2] {
                                let (z, y, x) = (oz * stride[0] + kz, oy * stride[1] + ky, ox * stride[2] + kx);
                                gather.push((((ci * d + z) * h + y) * w + x) as u32);
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(PoolWindow { in_shape, out_shape: [c, out[0], out[1], out[2]], window_len, gather })
}

impl Plan {
    pub fn build(spec: &NetworkSpec) -> Result<Plan> {
        let volumetric = spec.is_volumetric();
        let cube = |n: usize, flat: usize| if volumetric { [n, n, n] } else { [flat, n, n] };
        let input = spec.effective_input();
        if len(input) > u32::MAX as usize / 2 {
            return Err(Error::arg("network input too large"));
        }
        let mut shape = input;
        let mut layers = Vec::new();
        for (i, c) in spec.conv.iter().enumerate() {
            let win = window(
                shape,
                c.filters,
                cube(c.kernel, 1),
                cube(c.stride, 1),
                cube(c.padding, 0),
                &format!("conv{i}"),
            )?;
            shape = win.out_shape;
            layers.push(Layer::Conv(win));
            layers.push(Layer::Relu);
            if let Some(p) = c.pool {
                let pw = pool_window(shape, cube(p.window, 1), cube(p.stride, 1))?;
                shape = pw.out_shape;
                layers.push(Layer::Pool(pw));
            }
        }
        for (i, l) in spec.locally_connected.iter().enumerate() {
            let win = window(shape, l.filters, cube(l.kernel, 1), [1; 3], cube(l.padding, 0), &format!("local{i}"))?;
            shape = win.out_shape;
            layers.push(Layer::Local(win));
            layers.push(Layer::Relu);
        }
        let mut n_in = len(shape);
        for &width in &spec.fully_connected {
            layers.push(Layer::Dense { n_in, n_out: width });
            layers.push(Layer::Relu);
            n_in = width;
        }
        layers.push(Layer::Dense { n_in, n_out: spec.n_classes });

        let mut sizes = Vec::with_capacity(layers.len());
        let mut cur = len(input);
        for layer in &layers {
            cur = match layer {
                Layer::Conv(w) | Layer::Local(w) => len(w.out_shape),
                Layer::Pool(p) => len(p.out_shape),
                Layer::Relu => cur,
                Layer::Dense { n_out, .. } => *n_out,
            };
            sizes.push(cur);
        }
        Ok(Plan { input, layers, sizes })
    }
}

/// Gather the input columns `[taps][positions]` of a window.
pub(crate) fn im2col(win: &Window, input: &[f64], col: &mut [f64]) {
    for (dst, &src) in col.iter_mut().zip(&win.gather) {
        *dst = if src == PAD { 0.0 } else { input[src as usize] };
    }
}

/// Scatter-add column gradients back onto the input gradient.
pub(crate) fn col2im(win: &Window, dcol: &[f64], dinput: &mut [f64]) {
    for (&g, &src) in dcol.iter().zip(&win.gather) {
        if src != PAD {
            dinput[src as usize] += g;
        }
    }
}

pub(crate) fn conv_forward(win: &Window, weights: &[f64], bias: &[f64], col: &[f64], out: &mut [f64]) {
    let (taps, pos) = (win.taps, win.positions);
    for (f, out_f) in out.chunks_exact_mut(pos).enumerate() {
        out_f.fill(bias[f]);
        let w_f = &weights[f * taps..(f + 1) * taps];
        for (&w, col_k) in w_f.iter().zip(col.chunks_exact(pos)) {
            if w != 0.0 {
                for (o, &x) in out_f.iter_mut().zip(col_k) {
                    *o += w * x;
                }
            }
        }
    }
}

/// Accumulates weight/bias gradients; writes column gradients into `dcol`
/// when given.
pub(crate) fn conv_backward(
    win: &Window,
    weights: &[f64],
    col: &[f64],
    dout: &[f64],
    dweights: &mut [f64],
    dbias: &mut [f64],
    dcol: Option<&mut [f64]>,
) {
    let (taps, pos) = (win.taps, win.positions);
    for (f, dout_f) in dout.chunks_exact(pos).enumerate() {
        dbias[f] += dout_f.iter().sum::<f64>();
        let dw_f = &mut dweights[f * taps..(f + 1) * taps];
        for (dw, col_k) in dw_f.iter_mut().zip(col.chunks_exact(pos)) {
            *dw += dout_f.iter().zip(col_k).map(|(a, b)| a * b).sum::<f64>();
        }
    }
    if let Some(dcol) = dcol {
        dcol.fill(0.0);
        for (f, dout_f) in dout.chunks_exact(pos).enumerate() {
            let w_f = &weights[f * taps..(f + 1) * taps];
            for (&w, dcol_k) in w_f.iter().zip(dcol.chunks_exact_mut(pos)) {
                for (d, &g) in dcol_k.iter_mut().zip(dout_f) {
                    *d += w * g;
                }
            }
        }
    }
}

pub(crate) fn local_forward(win: &Window, weights: &[f64], bias: &[f64], col: &[f64], out: &mut [f64]) {
    let (taps, pos) = (win.taps, win.positions);
    for (f, out_f) in out.chunks_exact_mut(pos).enumerate() {
        out_f.copy_from_slice(&bias[f * pos..(f + 1) * pos]);
        let w_f = &weights[f * taps * pos..(f + 1) * taps * pos];
        for (w_k, col_k) in w_f.chunks_exact(pos).zip(col.chunks_exact(pos)) {
            for ((o, &w), &x) in out_f.iter_mut().zip(w_k).zip(col_k) {
                *o += w * x;
            }
        }
    }
}

pub(crate) fn local_backward(
    win: &Window,
    weights: &[f64],
    col: &[f64],
    dout: &[f64],
    dweights: &mut [f64],
    dbias: &mut [f64],
    dcol: Option<&mut [f64]>,
) {
    let (taps, pos) = (win.taps, win.positions);
    for (f, dout_f) in dout.chunks_exact(pos).enumerate() {
        for (db, &g) in dbias[f * pos..(f + 1) * pos].iter_mut().zip(dout_f) {
            *db += g;
        }
        let dw_f = &mut dweights[f * taps * pos..(f + 1) * taps * pos];
        for (dw_k, col_k) in dw_f.chunks_exact_mut(pos).zip(col.chunks_exact(pos)) {
            for ((dw, &x), &g) in dw_k.iter_mut().zip(col_k).zip(dout_f) {
                *dw += g * x;
            }
        }
    }
    if let Some(dcol) = dcol {
        dcol.fill(0.0);
        for (f, dout_f) in dout.chunks_exact(pos).enumerate() {
            let w_f = &weights[f * taps * pos..(f + 1) * taps * pos];
            for (w_k, dcol_k) in w_f.chunks_exact(pos).zip(dcol.chunks_exact_mut(pos)) {
                for ((d, &w), &g) in dcol_k.iter_mut().zip(w_k).zip(dout_f) {
                    *d += w * g;
                }
            }
        }
    }
}

/// Max-pool; records the first maximal input of each window.
pub(crate) fn pool_forward(pw: &PoolWindow, input: &[f64], out: &mut [f64], argmax: &mut [u32]) {
    for ((o, am), taps) in out.iter_mut().zip(argmax.iter_mut()).zip(pw.gather.chunks_exact(pw.window_len)) {
        let mut best = taps[0];
        let mut best_v = input[best as usize];
        for &t in &taps[1..] {
            let v = input[t as usize];
            if v > best_v {
                best = t;
                best_v = v;
            }
        }
        *o = best_v;
        *am = best;
    }
}

pub(crate) fn pool_backward(argmax: &[u32], dout: &[f64], dinput: &mut [f64]) {
    dinput.fill(0.0);
    for (&a, &g) in argmax.iter().zip(dout) {
        dinput[a as usize] += g;
    }
}
