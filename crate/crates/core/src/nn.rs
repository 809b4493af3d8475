//! Layer kernels on channel-major batch tensors (`C x N x H x W`).
//!
//! Keeping the channel axis outermost lets a 3x3 convolution over the whole
//! batch run as a single `[co, ci*9] x [ci*9, N*H*W]` product whose output is
//! already in the next layer's layout.

use crate::scalar::Scalar;

/// Lay `N x C x H x W` samples out as `C x N x H x W`.
pub fn to_channel_major<T: Scalar>(samples: &[&[f32]], channels: usize, plane: usize) -> Vec<T> {
    let n = samples.len();
    let mut out = vec![T::zero(); channels * n * plane];
    for (i, s) in samples.iter().enumerate() {
        for c in 0..channels {
            let dst = &mut out[(c * n + i) * plane..(c * n + i + 1) * plane];
            for (d, &v) in dst.iter_mut().zip(&s[c * plane..(c + 1) * plane]) {
                *d = T::of_f32(v);
            }
        }
    }
    out
}

/// Unfold 3x3 zero-padded neighbourhoods: rows `(ci, ky, kx)`, columns `(n, y, x)`.
pub fn im2col<T: Scalar>(x: &[T], ci: usize, n: usize, h: usize, w: usize) -> Vec<T> {
    let cols_per_row = n * h * w;
    let mut cols = vec![T::zero(); ci * 9 * cols_per_row];
    for c in 0..ci {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[((c * 9) + ky * 3 + kx) * cols_per_row..][..cols_per_row];
                for s in 0..n {
                    let src = &x[(c * n + s) * h * w..][..h * w];
                    let dst = &mut row[s * h * w..][..h * w];
                    for y in 0..h {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let src_row = &src[sy as usize * w..][..w];
                        let dst_row = &mut dst[y * w..][..w];
                        // x range whose source column x + kx - 1 is inside the image
                        let lo = if kx == 0 { 1 } else { 0 };
                        let hi = if kx == 2 { w - 1 } else { w };
                        for xx in lo..hi {
                            dst_row[xx] = src_row[xx + kx - 1];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add column gradients back onto the input grid.
pub fn col2im<T: Scalar>(dcols: &[T], ci: usize, n: usize, h: usize, w: usize) -> Vec<T> {
    let cols_per_row = n * h * w;
    let mut dx = vec![T::zero(); ci * n * h * w];
    for c in 0..ci {
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &dcols[((c * 9) + ky * 3 + kx) * cols_per_row..][..cols_per_row];
                for s in 0..n {
                    let dst = &mut dx[(c * n + s) * h * w..][..h * w];
                    let src = &row[s * h * w..][..h * w];
                    for y in 0..h {
                        let sy = y as isize + ky as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let lo = if kx == 0 { 1 } else { 0 };
                        let hi = if kx == 2 { w - 1 } else { w };
                        let dst_row = &mut dst[sy as usize * w..][..w];
                        let src_row = &src[y * w..][..w];
                        for xx in lo..hi {
                            dst_row[xx + kx - 1] += src_row[xx];
                        }
                    }
                }
            }
        }
    }
    dx
}

/// 2x2 stride-2 max pool. Returns pooled values and the flat argmax index
/// of every output cell. Odd trailing rows/columns are dropped.
pub fn max_pool2<T: Scalar>(x: &[T], planes: usize, h: usize, w: usize) -> (Vec<T>, Vec<u32>) {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![T::zero(); planes * oh * ow];
    let mut arg = vec![0u32; planes * oh * ow];
    for p in 0..planes {
        let base = p * h * w;
        for y in 0..oh {
            for xx in 0..ow {
                let mut best = base + 2 * y * w + 2 * xx;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = base + (2 * y + dy) * w + 2 * xx + dx;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                let o = (p * oh + y) * ow + xx;
                out[o] = x[best];
                arg[o] = best as u32;
            }
        }
    }
    (out, arg)
}

pub fn max_pool2_backward<T: Scalar>(dout: &[T], arg: &[u32], input_len: usize) -> Vec<T> {
    let mut dx = vec![T::zero(); input_len];
    for (&g, &a) in dout.iter().zip(arg) {
        dx[a as usize] += g;
    }
    dx
}

/// Global average pool of `C x N x (H*W)` into `C x N`.
pub fn global_avg_pool<T: Scalar>(x: &[T], planes: usize, plane: usize) -> Vec<T> {
    let scale = T::one() / T::of_usize(plane);
    x.chunks_exact(plane).take(planes).map(|p| p.iter().copied().sum::<T>() * scale).collect()
}
