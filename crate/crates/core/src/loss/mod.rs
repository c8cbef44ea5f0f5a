//! Photometric reconstruction loss with per-pixel minimum over render frames,
//! edge-aware smoothness on normalized inverse depth, and invalid-ray discard.
//!
//! Patch tensors are `[P, C, h, w]`; rendered rays are patch-major with pixels
//! row-major inside each patch.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Real, Tensor, Var};
use crate::error::{Error, Result};
use crate::geometry::ImageGrid;

pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
/// SSIM window size.
pub const SSIM_WINDOW: usize = 3;
/// Expected depth is floored at this value before inversion.
pub const DEPTH_EPS: f64 = 1e-3;
/// Added to the error of invalid frames so the minimum never selects them
/// while a valid frame exists.
const INVALID_PENALTY: f64 = 1e4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub l1: f64,
    pub ssim: f64,
    pub eas: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            l1: 0.15,
            ssim: 0.85,
            eas: 0.002,
        }
    }
}

/// Per-pixel, per-channel SSIM of two `[P, C, h, w]` nodes, 3×3 box window, clamp padding.
pub fn ssim_node<T: Real>(g: &mut Graph<T>, x: Var, y: Var) -> Var {
    assert_eq!(g.shape(x), g.shape(y), "shape mismatch in ssim: {:?} vs {:?}", g.shape(x), g.shape(y));
    let k = SSIM_WINDOW;
    let mx = g.box_filter(x, k);
    let my = g.box_filter(y, k);
    let xx = g.mul(x, x);
    let yy = g.mul(y, y);
    let xy = g.mul(x, y);
    let bxx = g.box_filter(xx, k);
    let byy = g.box_filter(yy, k);
    let bxy = g.box_filter(xy, k);
    let mx2 = g.mul(mx, mx);
    let my2 = g.mul(my, my);
    let mxy = g.mul(mx, my);
    let sxx = g.sub(bxx, mx2);
    let syy = g.sub(byy, my2);
    let sxy = g.sub(bxy, mxy);
    let n1 = g.scale(mxy, T::of(2.0));
    let n1 = g.add_scalar(n1, T::of(SSIM_C1));
    let n2 = g.scale(sxy, T::of(2.0));
    let n2 = g.add_scalar(n2, T::of(SSIM_C2));
    let d1 = g.add(mx2, my2);
    let d1 = g.add_scalar(d1, T::of(SSIM_C1));
    let d2 = g.add(sxx, syy);
    let d2 = g.add_scalar(d2, T::of(SSIM_C2));
    let num = g.mul(n1, n2);
    let den = g.mul(d1, d2);
    g.div(num, den)
}

/// Mean over axis 1 of `[P, C, h, w]`: `[P, h·w]`.
fn channel_mean<T: Real>(g: &mut Graph<T>, x: Var) -> Var {
    let s = g.shape(x).to_vec();
    let (p, c, hw) = (s[0], s[1], s[2] * s[3]);
    let r = g.reshape(x, &[p, c, hw]);
    let t = g.transpose_last2(r);
    let sum = g.sum_last(t);
    g.scale(sum, T::of(1.0 / c as f64))
}

/// `λ_L1·|P − P̂| + λ_SSIM·(1 − SSIM)/2`, averaged over channels: `[P, h·w]`.
pub fn photometric_error_node<T: Real>(g: &mut Graph<T>, target: Var, recon: Var, w: &LossWeights) -> Var {
    let diff = g.sub(target, recon);
    let l1 = g.abs(diff);
    let l1 = g.scale(l1, T::of(w.l1));
    let ssim = ssim_node(g, target, recon);
    let dssim = g.scale(ssim, T::of(-0.5 * w.ssim));
    let dssim = g.add_scalar(dssim, T::of(0.5 * w.ssim));
    let e = g.add(l1, dssim);
    channel_mean(g, e)
}

/// Per-pixel minimum over frames that are valid for that pixel.
/// `valid[k][i]` flags frame `k` at pixel `i`. Returns the masked `[P, h·w]`
/// map and the per-pixel keep mask (false iff every frame is invalid).
pub fn photometric_min_node<T: Real>(g: &mut Graph<T>, errors: &[Var], valid: &[Vec<bool>]) -> (Var, Vec<bool>) {
    assert!(!errors.is_empty(), "photometric minimum needs at least one reconstruction");
    assert_eq!(errors.len(), valid.len(), "one validity mask per reconstruction");
    let shape = g.shape(errors[0]).to_vec();
    let n: usize = shape.iter().product();
    let k = errors.len();
    let stacked = g.stack_last(errors);
    let mut penalty = vec![T::zero(); n * k];
    let mut keep = vec![false; n];
    for (j, v) in valid.iter().enumerate() {
        assert_eq!(v.len(), n, "validity mask length");
        for i in 0..n {
            if v[i] {
                keep[i] = true;
            } else {
                penalty[i * k + j] = T::of(INVALID_PENALTY);
            }
        }
    }
    let mut pshape = shape.clone();
    pshape.push(k);
    let pen = g.constant(Tensor::new(&pshape, penalty));
    let penalized = g.add(stacked, pen);
    let m = g.min_last(penalized);
    let mask = g.constant(Tensor::new(&shape, keep.iter().map(|&b| if b { T::one() } else { T::zero() }).collect()));
    (g.mul(m, mask), keep)
}

/// `d* = (1/d) / mean_patch(1/d)` for depths `[P, h·w]`.
pub fn normalized_inverse_depth_node<T: Real>(g: &mut Graph<T>, depth: Var) -> Var {
    let s = g.shape(depth).to_vec();
    let hw = s[1];
    let d = g.add_scalar(depth, T::of(-DEPTH_EPS));
    let d = g.relu(d);
    let d = g.add_scalar(d, T::of(DEPTH_EPS));
    let inv = g.recip(d);
    let sum = g.sum_last(inv);
    let mean = g.scale(sum, T::of(1.0 / hw as f64));
    let mean = g.expand_last(mean, hw);
    g.div(inv, mean)
}

/// Edge-aware smoothness `|∂x d*|·e^{−|∂x P|} + |∂y d*|·e^{−|∂y P|}`.
/// `d_star` is `[P, h, w]`, `target` is `[P, C, h, w]` (constant).
pub fn smoothness_node<T: Real>(g: &mut Graph<T>, d_star: Var, target: &Tensor<T>) -> Var {
    let ts = target.shape();
    let (p, c, h, w) = (ts[0], ts[1], ts[2], ts[3]);
    assert_eq!(g.shape(d_star), &[p, h, w], "depth patch shape");
    let edge = |axis_last: bool| -> Tensor<T> {
        let diff = crate::autodiff::kernels::forward_diff(target.data(), p * c, h, w, axis_last);
        let mut out = vec![T::zero(); p * h * w];
        for pi in 0..p {
            for i in 0..h * w {
                let mut acc = T::zero();
                for ch in 0..c {
                    acc += diff[(pi * c + ch) * h * w + i].abs();
                }
                out[pi * h * w + i] = (-(acc / T::of(c as f64))).exp();
            }
        }
        Tensor::new(&[p, h, w], out)
    };
    let ex = g.constant(edge(true));
    let ey = g.constant(edge(false));
    let dx = g.forward_diff(d_star, true);
    let dy = g.forward_diff(d_star, false);
    let dx = g.abs(dx);
    let dy = g.abs(dy);
    let sx = g.mul(dx, ex);
    let sy = g.mul(dy, ey);
    g.add(sx, sy)
}

/// `valid[k][i] = ¬(IV_raw(k)[i] > τ)`.
pub fn invalid_ray_mask(iv_raw: &[Vec<f64>], tau: f64) -> Vec<Vec<bool>> {
    iv_raw.iter().map(|iv| iv.iter().map(|&v| v <= tau).collect()).collect()
}

/// Loss nodes of a patch batch.
#[derive(Debug, Clone)]
pub struct PatchLoss {
    pub total: Var,
    pub photometric: Var,
    pub smoothness: Var,
    /// Pixels kept by the invalid-ray policy.
    pub kept: usize,
    pub pixels: usize,
}

/// Builds the full loss from rendered colors (`[R, 3]` per render frame),
/// rendered depth (`[R, 1]`), target patches `[P, 3, h, w]` and validity.
pub fn patch_loss_node<T: Real>(
    g: &mut Graph<T>,
    target: &Tensor<T>,
    recon: &[Var],
    depth: Var,
    valid: &[Vec<bool>],
    w: &LossWeights,
) -> PatchLoss {
    let ts = target.shape().to_vec();
    let (p, c, h, wd) = (ts[0], ts[1], ts[2], ts[3]);
    let hw = h * wd;
    let t = g.constant(target.clone());
    let errors: Vec<Var> = recon
        .iter()
        .map(|&r| {
            let r = g.reshape(r, &[p, hw, c]);
            let r = g.transpose_last2(r);
            let r = g.reshape(r, &[p, c, h, wd]);
            photometric_error_node(g, t, r, w)
        })
        .collect();
    let (ph, keep) = photometric_min_node(g, &errors, valid);
    let photometric = g.sum(ph);
    let d = g.reshape(depth, &[p, hw]);
    let d_star = normalized_inverse_depth_node(g, d);
    let d_star = g.reshape(d_star, &[p, h, wd]);
    let sm = smoothness_node(g, d_star, target);
    let smoothness = g.sum(sm);
    let weighted = g.scale(smoothness, T::of(w.eas));
    let total = g.add(photometric, weighted);
    PatchLoss {
        total,
        photometric,
        smoothness,
        kept: keep.iter().filter(|&&k| k).count(),
        pixels: p * hw,
    }
}

// ---- value-level API over images -------------------------------------------

fn patch_tensor(img: &ImageGrid) -> Tensor<f64> {
    crate::field::image_to_chw::<f64>(img, 0.0, 1.0).reshaped(&[1, img.channels(), img.height(), img.width()])
}

fn check_same(a: &ImageGrid, b: &ImageGrid) -> Result<()> {
    if (a.channels(), a.height(), a.width()) != (b.channels(), b.height(), b.width()) {
        return Err(Error::InvalidImage(format!(
            "patch shapes differ: {}x{}x{} vs {}x{}x{}",
            a.channels(),
            a.height(),
            a.width(),
            b.channels(),
            b.height(),
            b.width()
        )));
    }
    Ok(())
}

/// Per-pixel SSIM averaged over channels, row-major.
pub fn ssim_map(a: &ImageGrid, b: &ImageGrid) -> Result<Vec<f64>> {
    check_same(a, b)?;
    let mut g = Graph::<f64>::new();
    let x = g.constant(patch_tensor(a));
    let y = g.constant(patch_tensor(b));
    let s = ssim_node(&mut g, x, y);
    let m = channel_mean(&mut g, s);
    Ok(g.value(m).data().to_vec())
}

/// Per-frame error maps `e_k`, row-major.
pub fn photometric_errors(target: &ImageGrid, recon: &[&ImageGrid], w: &LossWeights) -> Result<Vec<Vec<f64>>> {
    let mut g = Graph::<f64>::new();
    let t = g.constant(patch_tensor(target));
    recon
        .iter()
        .map(|r| {
            check_same(target, r)?;
            let rv = g.constant(patch_tensor(r));
            let e = photometric_error_node(&mut g, t, rv, w);
            Ok(g.value(e).data().to_vec())
        })
        .collect()
}

/// Masked per-pixel minimum over valid frames, plus the keep mask.
pub fn photometric_min(
    target: &ImageGrid,
    recon: &[(&ImageGrid, Vec<bool>)],
    w: &LossWeights,
) -> Result<(Vec<f64>, Vec<bool>)> {
    if recon.is_empty() {
        return Err(Error::InvalidConfig("photometric minimum needs at least one reconstruction".into()));
    }
    let images: Vec<&ImageGrid> = recon.iter().map(|r| r.0).collect();
    let errors = photometric_errors(target, &images, w)?;
    let mut g = Graph::<f64>::new();
    let n = target.width() * target.height();
    let vars: Vec<Var> = errors.into_iter().map(|e| g.constant(Tensor::new(&[1, n], e))).collect();
    let valid: Vec<Vec<bool>> = recon.iter().map(|r| r.1.clone()).collect();
    let (m, keep) = photometric_min_node(&mut g, &vars, &valid);
    Ok((g.value(m).data().to_vec(), keep))
}

/// Inverse depth divided by its mean.
pub fn inverse_mean_normalized(depth: &[f64]) -> Vec<f64> {
    let inv: Vec<f64> = depth.iter().map(|d| 1.0 / d.max(DEPTH_EPS)).collect();
    let mean = inv.iter().sum::<f64>() / inv.len() as f64;
    inv.iter().map(|v| v / mean).collect()
}

/// Edge-aware smoothness map of `d_star` (row-major, patch-shaped) against `target`.
pub fn edge_aware_smoothness(d_star: &[f64], target: &ImageGrid) -> Result<Vec<f64>> {
    let (h, w) = (target.height(), target.width());
    if d_star.len() != h * w {
        return Err(Error::InvalidImage(format!("depth patch has {} values, expected {}", d_star.len(), h * w)));
    }
    let mut g = Graph::<f64>::new();
    let d = g.constant(Tensor::new(&[1, h, w], d_star.to_vec()));
    let s = smoothness_node(&mut g, d, &patch_tensor(target));
    Ok(g.value(s).data().to_vec())
}

/// One loss patch with its reconstructions, already rendered.
#[derive(Debug, Clone)]
pub struct PatchSpec {
    pub frame: usize,
    pub top: usize,
    pub left: usize,
    pub target: ImageGrid,
    pub recon: Vec<ImageGrid>,
    /// `[k][pixel]`.
    pub valid: Vec<Vec<bool>>,
    /// Expected depth per pixel, row-major.
    pub depth: Vec<f64>,
}

/// Σ over patches and pixels of masked L_ph + λ_eas·L_eas.
pub fn total_loss(patches: &[PatchSpec], w: &LossWeights) -> Result<f64> {
    if patches.is_empty() {
        return Err(Error::InvalidConfig("total loss needs at least one patch".into()));
    }
    let mut total = 0.0;
    for p in patches {
        let recon: Vec<(&ImageGrid, Vec<bool>)> = p.recon.iter().zip(&p.valid).map(|(r, v)| (r, v.clone())).collect();
        let (ph, _) = photometric_min(&p.target, &recon, w)?;
        let sm = edge_aware_smoothness(&inverse_mean_normalized(&p.depth), &p.target)?;
        total += ph.iter().sum::<f64>() + w.eas * sm.iter().sum::<f64>();
    }
    Ok(total)
}

#[cfg(test)]
mod tests;
