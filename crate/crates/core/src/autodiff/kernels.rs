//! Raw forward/backward kernels over flat slices.

use super::tensor::Real;

/// `c = op(a)·op(b)` where op transposes when the flag is set.
/// `a` is stored `m×k` (or `k×m` when transposed), `b` is `k×n` (or `n×k`).
pub fn gemm<T: Real>(m: usize, k: usize, n: usize, a: &[T], a_t: bool, b: &[T], b_t: bool, c: &mut [T], accumulate: bool) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: lengths are asserted above and strides describe those buffers.
    unsafe {
        T::gemm(
            m,
            k,
            n,
            T::one(),
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
        );
    }
}

/// Geometry of a 3×3, pad-1 convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub stride: usize,
    pub out_height: usize,
    pub out_width: usize,
}

impl ConvGeom {
    pub fn new(channels: usize, height: usize, width: usize, stride: usize) -> Self {
        Self {
            channels,
            height,
            width,
            stride,
            out_height: (height + 2 - 3) / stride + 1,
            out_width: (width + 2 - 3) / stride + 1,
        }
    }

    pub fn out_len(&self) -> usize {
        self.out_height * self.out_width
    }

    fn source(&self, o: usize, kk: usize, n: usize) -> Option<usize> {
        let p = (o * self.stride + kk) as isize - 1;
        (p >= 0 && (p as usize) < n).then_some(p as usize)
    }
}

/// Unfolds `[C,H,W]` into `[C·9, Ho·Wo]` (row index `c·9 + ky·3 + kx`), zero padded.
pub fn im2col<T: Real>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let ol = g.out_len();
    let mut cols = vec![T::zero(); g.channels * 9 * ol];
    for c in 0..g.channels {
        let plane = &x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut cols[((c * 9) + ky * 3 + kx) * ol..((c * 9) + ky * 3 + kx + 1) * ol];
                for oy in 0..g.out_height {
                    let Some(sy) = g.source(oy, ky, g.height) else { continue };
                    for ox in 0..g.out_width {
                        if let Some(sx) = g.source(ox, kx, g.width) {
                            row[oy * g.out_width + ox] = plane[sy * g.width + sx];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: folds `[C·9, Ho·Wo]` back onto `[C,H,W]`, summing overlaps.
pub fn col2im<T: Real>(cols: &[T], g: &ConvGeom) -> Vec<T> {
    let ol = g.out_len();
    let mut x = vec![T::zero(); g.channels * g.height * g.width];
    for c in 0..g.channels {
        let plane = &mut x[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &cols[((c * 9) + ky * 3 + kx) * ol..((c * 9) + ky * 3 + kx + 1) * ol];
                for oy in 0..g.out_height {
                    let Some(sy) = g.source(oy, ky, g.height) else { continue };
                    for ox in 0..g.out_width {
                        if let Some(sx) = g.source(ox, kx, g.width) {
                            plane[sy * g.width + sx] += row[oy * g.out_width + ox];
                        }
                    }
                }
            }
        }
    }
    x
}

/// k×k mean filter over each of `planes` H×W planes, clamp padding.
pub fn box_filter<T: Real>(x: &[T], planes: usize, h: usize, w: usize, k: usize) -> Vec<T> {
    let r = (k / 2) as isize;
    let norm = T::of(1.0 / (k * k) as f64);
    let mut out = vec![T::zero(); x.len()];
    for p in 0..planes {
        let src = &x[p * h * w..(p + 1) * h * w];
        let dst = &mut out[p * h * w..(p + 1) * h * w];
        for y in 0..h {
            for xx in 0..w {
                let mut acc = T::zero();
                for dy in -r..=r {
                    let sy = clamp_index(y as isize + dy, h);
                    for dx in -r..=r {
                        let sx = clamp_index(xx as isize + dx, w);
                        acc += src[sy * w + sx];
                    }
                }
                dst[y * w + xx] = acc * norm;
            }
        }
    }
    out
}

pub fn box_filter_backward<T: Real>(g: &[T], planes: usize, h: usize, w: usize, k: usize) -> Vec<T> {
    let r = (k / 2) as isize;
    let norm = T::of(1.0 / (k * k) as f64);
    let mut dx = vec![T::zero(); g.len()];
    for p in 0..planes {
        let src = &g[p * h * w..(p + 1) * h * w];
        let dst = &mut dx[p * h * w..(p + 1) * h * w];
        for y in 0..h {
            for xx in 0..w {
                let v = src[y * w + xx] * norm;
                for dy in -r..=r {
                    let sy = clamp_index(y as isize + dy, h);
                    for dx_ in -r..=r {
                        let sx = clamp_index(xx as isize + dx_, w);
                        dst[sy * w + sx] += v;
                    }
                }
            }
        }
    }
    dx
}

fn clamp_index(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// Forward difference along one of the two trailing axes, zero in the last slot.
/// `axis_last == true` differences along W (x), otherwise along H (y).
pub fn forward_diff<T: Real>(x: &[T], planes: usize, h: usize, w: usize, axis_last: bool) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for p in 0..planes {
        let base = p * h * w;
        for y in 0..h {
            for xx in 0..w {
                let i = base + y * w + xx;
                if axis_last && xx + 1 < w {
                    out[i] = x[i + 1] - x[i];
                } else if !axis_last && y + 1 < h {
                    out[i] = x[i + w] - x[i];
                }
            }
        }
    }
    out
}

pub fn forward_diff_backward<T: Real>(g: &[T], planes: usize, h: usize, w: usize, axis_last: bool) -> Vec<T> {
    let mut dx = vec![T::zero(); g.len()];
    for p in 0..planes {
        let base = p * h * w;
        for y in 0..h {
            for xx in 0..w {
                let i = base + y * w + xx;
                if axis_last && xx + 1 < w {
                    dx[i + 1] += g[i];
                    dx[i] -= g[i];
                } else if !axis_last && y + 1 < h {
                    dx[i + w] += g[i];
                    dx[i] -= g[i];
                }
            }
        }
    }
    dx
}
