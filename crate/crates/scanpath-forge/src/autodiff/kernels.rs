//! Convolution and dense-layer arithmetic shared by the tape operations.
//!
//! Everything here works on flat `f64` slices with explicit geometry. Inner
//! loops are written so the stride-1 case runs over contiguous slices, which
//! is what the optimizer vectorizes.

/// `out += a * inp`, elementwise over equal-length slices.
#[inline]
pub(crate) fn axpy(out: &mut [f64], inp: &[f64], a: f64) {
    for (o, i) in out.iter_mut().zip(inp) {
        *o += a * *i;
    }
}

/// Dot product with four independent accumulators. The summation order is
/// fixed, so results are bitwise reproducible.
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let chunks = n / 4;
    let mut acc = [0.0f64; 4];
    for i in 0..chunks {
        let j = i * 4;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for j in chunks * 4..n {
        s += a[j] * b[j];
    }
    s
}

/// Geometry of a same-padded cross-correlation. Output spatial size is
/// `ceil(size / stride)`; total padding follows the usual SAME convention
/// with the smaller half in front.
#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub pad_y: usize,
    pub pad_x: usize,
}

impl ConvGeom {
    pub fn new_2d(c_in: usize, h: usize, w: usize, c_out: usize, k: usize, stride: usize) -> Self {
        let out_h = h.div_ceil(stride);
        let out_w = w.div_ceil(stride);
        let pad_y = ((out_h - 1) * stride + k).saturating_sub(h) / 2;
        let pad_x = ((out_w - 1) * stride + k).saturating_sub(w) / 2;
        ConvGeom {
            c_in,
            h,
            w,
            c_out,
            k,
            stride,
            out_h,
            out_w,
            pad_y,
            pad_x,
        }
    }
}

/// Output indices `o` for which `i = o * stride + k_off - pad` stays inside
/// `[0, in_size)`, as an inclusive range plus the index shift.
#[inline]
fn valid_range(
    k_off: usize,
    pad: usize,
    stride: usize,
    in_size: usize,
    out_size: usize,
) -> Option<(usize, usize, isize)> {
    let shift = k_off as isize - pad as isize;
    let lo = if shift < 0 {
        ((-shift) as usize).div_ceil(stride)
    } else {
        0
    };
    let max_num = in_size as isize - 1 - shift;
    if max_num < 0 {
        return None;
    }
    let hi = ((max_num as usize) / stride).min(out_size - 1);
    if lo > hi {
        return None;
    }
    Some((lo, hi, shift))
}

pub(crate) fn conv2d_forward(inp: &[f64], wts: &[f64], g: &ConvGeom) -> Vec<f64> {
    if g.stride == 1 {
        return conv2d_forward_gemm(inp, wts, g);
    }
    let mut out = vec![0.0; g.c_out * g.out_h * g.out_w];
    for co in 0..g.c_out {
        for ci in 0..g.c_in {
            let w_base = (co * g.c_in + ci) * g.k * g.k;
            accumulate_channel_forward(
                &inp[ci * g.h * g.w..(ci + 1) * g.h * g.w],
                &wts[w_base..w_base + g.k * g.k],
                &mut out[co * g.out_h * g.out_w..(co + 1) * g.out_h * g.out_w],
                g,
            );
        }
    }
    out
}

pub(crate) fn conv2d_backward(
    inp: &[f64],
    wts: &[f64],
    gout: &[f64],
    g: &ConvGeom,
) -> (Vec<f64>, Vec<f64>) {
    if g.stride == 1 {
        return conv2d_backward_gemm(inp, wts, gout, g);
    }
    let mut dinp = vec![0.0; g.c_in * g.h * g.w];
    let mut dwts = vec![0.0; wts.len()];
    for co in 0..g.c_out {
        let gout_ch = &gout[co * g.out_h * g.out_w..(co + 1) * g.out_h * g.out_w];
        for ci in 0..g.c_in {
            let w_base = (co * g.c_in + ci) * g.k * g.k;
            backward_channel(
                &inp[ci * g.h * g.w..(ci + 1) * g.h * g.w],
                &wts[w_base..w_base + g.k * g.k],
                gout_ch,
                &mut dinp[ci * g.h * g.w..(ci + 1) * g.h * g.w],
                &mut dwts[w_base..w_base + g.k * g.k],
                g,
            );
        }
    }
    (dinp, dwts)
}

/// Unfolds the zero-padded input into a `[c_in * k * k, out_h * out_w]`
/// patch matrix so the stride-1 convolution becomes a plain matrix product
/// with long contiguous inner spans.
fn im2col(inp: &[f64], g: &ConvGeom) -> Vec<f64> {
    let spatial = g.out_h * g.out_w;
    let mut cols = vec![0.0; g.c_in * g.k * g.k * spatial];
    for ci in 0..g.c_in {
        let ch = &inp[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = &mut cols[((ci * g.k + ky) * g.k + kx) * spatial
                    ..((ci * g.k + ky) * g.k + kx + 1) * spatial];
                let Some((ox_lo, ox_hi, sx)) = valid_range(kx, g.pad_x, 1, g.w, g.out_w) else {
                    continue;
                };
                let n = ox_hi - ox_lo + 1;
                let ix0 = (ox_lo as isize + sx) as usize;
                let Some((oy_lo, oy_hi, sy)) = valid_range(ky, g.pad_y, 1, g.h, g.out_h) else {
                    continue;
                };
                for oy in oy_lo..=oy_hi {
                    let iy = (oy as isize + sy) as usize;
                    row[oy * g.out_w + ox_lo..oy * g.out_w + ox_lo + n]
                        .copy_from_slice(&ch[iy * g.w + ix0..iy * g.w + ix0 + n]);
                }
            }
        }
    }
    cols
}

/// Scatter-add inverse of [`im2col`].
fn col2im(cols: &[f64], g: &ConvGeom) -> Vec<f64> {
    let spatial = g.out_h * g.out_w;
    let mut inp = vec![0.0; g.c_in * g.h * g.w];
    for ci in 0..g.c_in {
        let ch = &mut inp[ci * g.h * g.w..(ci + 1) * g.h * g.w];
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = &cols[((ci * g.k + ky) * g.k + kx) * spatial
                    ..((ci * g.k + ky) * g.k + kx + 1) * spatial];
                let Some((ox_lo, ox_hi, sx)) = valid_range(kx, g.pad_x, 1, g.w, g.out_w) else {
                    continue;
                };
                let n = ox_hi - ox_lo + 1;
                let ix0 = (ox_lo as isize + sx) as usize;
                let Some((oy_lo, oy_hi, sy)) = valid_range(ky, g.pad_y, 1, g.h, g.out_h) else {
                    continue;
                };
                for oy in oy_lo..=oy_hi {
                    let iy = (oy as isize + sy) as usize;
                    axpy(
                        &mut ch[iy * g.w + ix0..iy * g.w + ix0 + n],
                        &row[oy * g.out_w + ox_lo..oy * g.out_w + ox_lo + n],
                        1.0,
                    );
                }
            }
        }
    }
    inp
}

fn conv2d_forward_gemm(inp: &[f64], wts: &[f64], g: &ConvGeom) -> Vec<f64> {
    let spatial = g.out_h * g.out_w;
    let kk = g.c_in * g.k * g.k;
    let cols = im2col(inp, g);
    let mut out = vec![0.0; g.c_out * spatial];
    for co in 0..g.c_out {
        let out_row = &mut out[co * spatial..(co + 1) * spatial];
        let w_row = &wts[co * kk..(co + 1) * kk];
        for (kidx, &wv) in w_row.iter().enumerate() {
            axpy(out_row, &cols[kidx * spatial..(kidx + 1) * spatial], wv);
        }
    }
    out
}

fn conv2d_backward_gemm(
    inp: &[f64],
    wts: &[f64],
    gout: &[f64],
    g: &ConvGeom,
) -> (Vec<f64>, Vec<f64>) {
    let spatial = g.out_h * g.out_w;
    let kk = g.c_in * g.k * g.k;
    let cols = im2col(inp, g);
    let mut dwts = vec![0.0; wts.len()];
    let mut dcols = vec![0.0; cols.len()];
    for co in 0..g.c_out {
        let gout_row = &gout[co * spatial..(co + 1) * spatial];
        let w_row = &wts[co * kk..(co + 1) * kk];
        let dw_row = &mut dwts[co * kk..(co + 1) * kk];
        for kidx in 0..kk {
            let col = &cols[kidx * spatial..(kidx + 1) * spatial];
            dw_row[kidx] += dot(gout_row, col);
            axpy(
                &mut dcols[kidx * spatial..(kidx + 1) * spatial],
                gout_row,
                w_row[kidx],
            );
        }
    }
    (col2im(&dcols, g), dwts)
}

pub(crate) fn depthwise2d_forward(inp: &[f64], wts: &[f64], g: &ConvGeom) -> Vec<f64> {
    debug_assert_eq!(g.c_in, g.c_out);
    let mut out = vec![0.0; g.c_out * g.out_h * g.out_w];
    for c in 0..g.c_in {
        let w_base = c * g.k * g.k;
        accumulate_channel_forward(
            &inp[c * g.h * g.w..(c + 1) * g.h * g.w],
            &wts[w_base..w_base + g.k * g.k],
            &mut out[c * g.out_h * g.out_w..(c + 1) * g.out_h * g.out_w],
            g,
        );
    }
    out
}

pub(crate) fn depthwise2d_backward(
    inp: &[f64],
    wts: &[f64],
    gout: &[f64],
    g: &ConvGeom,
) -> (Vec<f64>, Vec<f64>) {
    let mut dinp = vec![0.0; inp.len()];
    let mut dwts = vec![0.0; wts.len()];
    for c in 0..g.c_in {
        let w_base = c * g.k * g.k;
        backward_channel(
            &inp[c * g.h * g.w..(c + 1) * g.h * g.w],
            &wts[w_base..w_base + g.k * g.k],
            &gout[c * g.out_h * g.out_w..(c + 1) * g.out_h * g.out_w],
            &mut dinp[c * g.h * g.w..(c + 1) * g.h * g.w],
            &mut dwts[w_base..w_base + g.k * g.k],
            g,
        );
    }
    (dinp, dwts)
}

/// One (input-channel, output-channel) slice of a same-padded 2D
/// cross-correlation: `out += kernel * inp`.
fn accumulate_channel_forward(inp: &[f64], kernel: &[f64], out: &mut [f64], g: &ConvGeom) {
    for ky in 0..g.k {
        let Some((oy_lo, oy_hi, sy)) = valid_range(ky, g.pad_y, g.stride, g.h, g.out_h) else {
            continue;
        };
        for kx in 0..g.k {
            let wv = kernel[ky * g.k + kx];
            let Some((ox_lo, ox_hi, sx)) = valid_range(kx, g.pad_x, g.stride, g.w, g.out_w) else {
                continue;
            };
            let n = ox_hi - ox_lo + 1;
            for oy in oy_lo..=oy_hi {
                let iy = (oy * g.stride) as isize + sy;
                let in_row = iy as usize * g.w;
                let out_row = oy * g.out_w;
                if g.stride == 1 {
                    let ix0 = (ox_lo as isize + sx) as usize;
                    axpy(
                        &mut out[out_row + ox_lo..out_row + ox_lo + n],
                        &inp[in_row + ix0..in_row + ix0 + n],
                        wv,
                    );
                } else {
                    for ox in ox_lo..=ox_hi {
                        let ix = (ox * g.stride) as isize + sx;
                        out[out_row + ox] += wv * inp[in_row + ix as usize];
                    }
                }
            }
        }
    }
}

/// Gradient of [`accumulate_channel_forward`] with respect to the input and
/// the kernel, accumulated in place.
fn backward_channel(
    inp: &[f64],
    kernel: &[f64],
    gout: &[f64],
    dinp: &mut [f64],
    dkernel: &mut [f64],
    g: &ConvGeom,
) {
    for ky in 0..g.k {
        let Some((oy_lo, oy_hi, sy)) = valid_range(ky, g.pad_y, g.stride, g.h, g.out_h) else {
            continue;
        };
        for kx in 0..g.k {
            let wv = kernel[ky * g.k + kx];
            let Some((ox_lo, ox_hi, sx)) = valid_range(kx, g.pad_x, g.stride, g.w, g.out_w) else {
                continue;
            };
            let n = ox_hi - ox_lo + 1;
            let mut wgrad = 0.0;
            for oy in oy_lo..=oy_hi {
                let iy = (oy * g.stride) as isize + sy;
                let in_row = iy as usize * g.w;
                let out_row = oy * g.out_w;
                if g.stride == 1 {
                    let ix0 = (ox_lo as isize + sx) as usize;
                    let gout_row = &gout[out_row + ox_lo..out_row + ox_lo + n];
                    axpy(&mut dinp[in_row + ix0..in_row + ix0 + n], gout_row, wv);
                    wgrad += dot(gout_row, &inp[in_row + ix0..in_row + ix0 + n]);
                } else {
                    for ox in ox_lo..=ox_hi {
                        let ix = ((ox * g.stride) as isize + sx) as usize;
                        let go = gout[out_row + ox];
                        dinp[in_row + ix] += wv * go;
                        wgrad += go * inp[in_row + ix];
                    }
                }
            }
            dkernel[ky * g.k + kx] += wgrad;
        }
    }
}

/// Same-padded 1D cross-correlation along the sequence axis, stride 1.
pub(crate) fn conv1d_forward(
    inp: &[f64],
    wts: &[f64],
    c_in: usize,
    len: usize,
    c_out: usize,
    k: usize,
) -> Vec<f64> {
    let pad = (k - 1) / 2;
    let mut out = vec![0.0; c_out * len];
    for co in 0..c_out {
        let out_row = &mut out[co * len..(co + 1) * len];
        for ci in 0..c_in {
            let in_row = &inp[ci * len..(ci + 1) * len];
            let w_base = (co * c_in + ci) * k;
            for kk in 0..k {
                let wv = wts[w_base + kk];
                let Some((lo, hi, shift)) = valid_range(kk, pad, 1, len, len) else {
                    continue;
                };
                let i0 = (lo as isize + shift) as usize;
                let n = hi - lo + 1;
                axpy(&mut out_row[lo..lo + n], &in_row[i0..i0 + n], wv);
            }
        }
    }
    out
}

pub(crate) fn conv1d_backward(
    inp: &[f64],
    wts: &[f64],
    gout: &[f64],
    c_in: usize,
    len: usize,
    c_out: usize,
    k: usize,
) -> (Vec<f64>, Vec<f64>) {
    let pad = (k - 1) / 2;
    let mut dinp = vec![0.0; inp.len()];
    let mut dwts = vec![0.0; wts.len()];
    for co in 0..c_out {
        let gout_row = &gout[co * len..(co + 1) * len];
        for ci in 0..c_in {
            let in_row = &inp[ci * len..(ci + 1) * len];
            let din_row = &mut dinp[ci * len..(ci + 1) * len];
            let w_base = (co * c_in + ci) * k;
            for kk in 0..k {
                let wv = wts[w_base + kk];
                let Some((lo, hi, shift)) = valid_range(kk, pad, 1, len, len) else {
                    continue;
                };
                let i0 = (lo as isize + shift) as usize;
                let n = hi - lo + 1;
                axpy(&mut din_row[i0..i0 + n], &gout_row[lo..lo + n], wv);
                dwts[w_base + kk] += dot(&gout_row[lo..lo + n], &in_row[i0..i0 + n]);
            }
        }
    }
    (dinp, dwts)
}

/// Affine map `W x + b` with `W` of shape `[m, n]`.
pub(crate) fn dense_forward(
    inp: &[f64],
    wts: &[f64],
    bias: &[f64],
    m: usize,
    n: usize,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(m);
    for i in 0..m {
        out.push(dot(&wts[i * n..(i + 1) * n], inp) + bias[i]);
    }
    out
}

pub(crate) fn dense_backward(
    inp: &[f64],
    wts: &[f64],
    gout: &[f64],
    m: usize,
    n: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut dinp = vec![0.0; n];
    let mut dwts = vec![0.0; m * n];
    for i in 0..m {
        let go = gout[i];
        axpy(&mut dinp, &wts[i * n..(i + 1) * n], go);
        axpy(&mut dwts[i * n..(i + 1) * n], inp, go);
    }
    (dinp, dwts, gout.to_vec())
}
