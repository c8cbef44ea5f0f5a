use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::ImageGrid;
use crate::loss::ssim_map;

/// Default depth cap for evaluation (m).
pub const MAX_EVAL_DEPTH: f64 = 80.0;
/// Predictions are floored here before ratios and logs.
pub const MIN_PRED_DEPTH: f64 = 1e-3;
/// PSNR reported for identical images.
pub const PSNR_CAP: f64 = 99.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DepthMetrics {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    pub rmse_log: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub valid_pixels: usize,
}

/// Standard depth metrics over pixels with `0 < gt ≤ max_depth`.
pub fn depth_metrics(pred: &ImageGrid, gt: &ImageGrid, max_depth: f64) -> Result<DepthMetrics> {
    depth_metrics_masked(pred, gt, max_depth, None)
}

/// As [`depth_metrics`], restricted to pixels where `mask` is nonzero.
pub fn depth_metrics_masked(
    pred: &ImageGrid,
    gt: &ImageGrid,
    max_depth: f64,
    mask: Option<&ImageGrid>,
) -> Result<DepthMetrics> {
    if (pred.width(), pred.height()) != (gt.width(), gt.height()) || pred.channels() != 1 || gt.channels() != 1 {
        return Err(Error::InvalidImage(format!(
            "depth maps must be single-channel and equal-sized, got {}x{}x{} and {}x{}x{}",
            pred.channels(),
            pred.height(),
            pred.width(),
            gt.channels(),
            gt.height(),
            gt.width()
        )));
    }
    let mut acc = [0.0f64; 7];
    let mut n = 0usize;
    for (i, (&p, &g)) in pred.data().iter().zip(gt.data()).enumerate() {
        let (p, g) = (p as f64, g as f64);
        if !(g > 0.0 && g <= max_depth) || mask.is_some_and(|m| m.data()[i] == 0.0) {
            continue;
        }
        let p = p.max(MIN_PRED_DEPTH);
        let ratio = (p / g).max(g / p);
        let d = p - g;
        let dl = p.ln() - g.ln();
        acc[0] += d.abs() / g;
        acc[1] += d * d / g;
        acc[2] += d * d;
        acc[3] += dl * dl;
        acc[4] += (ratio < 1.25) as u8 as f64;
        acc[5] += (ratio < 1.25 * 1.25) as u8 as f64;
        acc[6] += (ratio < 1.25 * 1.25 * 1.25) as u8 as f64;
        n += 1;
    }
    if n == 0 {
        return Err(Error::NoValidPixels);
    }
    let m = acc.map(|v| v / n as f64);
    Ok(DepthMetrics {
        abs_rel: m[0],
        sq_rel: m[1],
        rmse: m[2].sqrt(),
        rmse_log: m[3].sqrt(),
        delta1: m[4],
        delta2: m[5],
        delta3: m[6],
        valid_pixels: n,
    })
}

fn same_shape(a: &ImageGrid, b: &ImageGrid) -> Result<()> {
    if (a.channels(), a.height(), a.width()) != (b.channels(), b.height(), b.width()) {
        return Err(Error::InvalidImage("images differ in shape".into()));
    }
    Ok(())
}

/// PSNR in dB for images in [0,1]; capped at [`PSNR_CAP`].
pub fn psnr(a: &ImageGrid, b: &ImageGrid) -> Result<f64> {
    psnr_masked(a, b, None)
}

/// PSNR over pixels where `mask` (single channel) is nonzero.
pub fn psnr_masked(a: &ImageGrid, b: &ImageGrid, mask: Option<&ImageGrid>) -> Result<f64> {
    same_shape(a, b)?;
    let c = a.channels();
    let (mut sum, mut n) = (0.0f64, 0usize);
    for (i, (pa, pb)) in a.data().chunks_exact(c).zip(b.data().chunks_exact(c)).enumerate() {
        if mask.is_some_and(|m| m.data()[i] == 0.0) {
            continue;
        }
        for (x, y) in pa.iter().zip(pb) {
            let d = *x as f64 - *y as f64;
            sum += d * d;
        }
        n += c;
    }
    if n == 0 {
        return Err(Error::NoValidPixels);
    }
    let mse = sum / n as f64;
    Ok(if mse == 0.0 {
        PSNR_CAP
    } else {
        (-10.0 * mse.log10()).min(PSNR_CAP)
    })
}

/// Mean SSIM over the image.
pub fn ssim_global(a: &ImageGrid, b: &ImageGrid) -> Result<f64> {
    same_shape(a, b)?;
    let m = ssim_map(a, b)?;
    Ok(m.iter().sum::<f64>() / m.len() as f64)
}

/// Mean SSIM over pixels where `mask` (single channel) is nonzero.
pub fn ssim_masked(a: &ImageGrid, b: &ImageGrid, mask: Option<&ImageGrid>) -> Result<f64> {
    same_shape(a, b)?;
    let m = ssim_map(a, b)?;
    let (mut sum, mut n) = (0.0, 0usize);
    for (i, v) in m.iter().enumerate() {
        if mask.is_some_and(|k| k.data()[i] == 0.0) {
            continue;
        }
        sum += v;
        n += 1;
    }
    if n == 0 {
        return Err(Error::NoValidPixels);
    }
    Ok(sum / n as f64)
}
