use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense image of `channels × height × width` reals, stored row-major with
/// channels interleaved (HWC).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageGrid {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f32>,
}

/// What [`bilinear_sample`] does with coordinates outside [-1,1]².
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Border {
    /// Clamp to the border texel; the sample is always valid.
    Clamp,
    /// Sample (clamped) but flag it invalid.
    MarkInvalid,
}

impl ImageGrid {
    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::InvalidImage(format!("empty image {channels}x{height}x{width}")));
        }
        if data.len() != channels * height * width {
            return Err(Error::InvalidImage(format!(
                "data length {} does not match {channels}x{height}x{width}",
                data.len()
            )));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    /// Color image; values are clamped to [0,1].
    pub fn from_colors(channels: usize, height: usize, width: usize, mut data: Vec<f32>) -> Result<Self> {
        for v in &mut data {
            *v = if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) };
        }
        Self::new(channels, height, width, data)
    }

    pub fn filled(channels: usize, height: usize, width: usize, value: f32) -> Self {
        Self::new(channels, height, width, vec![value; channels * height * width]).expect("non-empty dimensions")
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn texel(&self, row: usize, col: usize) -> &[f32] {
        let i = (row * self.width + col) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn texel_mut(&mut self, row: usize, col: usize) -> &mut [f32] {
        let i = (row * self.width + col) * self.channels;
        &mut self.data[i..i + self.channels]
    }

    /// Copies a `size×size` window whose top-left texel is (`row`, `col`).
    pub fn crop(&self, row: usize, col: usize, rows: usize, cols: usize) -> ImageGrid {
        let mut data = Vec::with_capacity(rows * cols * self.channels);
        for r in row..row + rows {
            for c in col..col + cols {
                data.extend_from_slice(self.texel(r, c));
            }
        }
        ImageGrid::new(self.channels, rows, cols, data).expect("crop inside image")
    }

    /// Single channel as a planar vector.
    pub fn plane(&self, channel: usize) -> Vec<f32> {
        self.data.iter().skip(channel).step_by(self.channels).copied().collect()
    }
}

/// Bilinear interpolation weights for a normalized coordinate.
///
/// Texel centers sit at (i+0.5)/N in [0,1], i.e. `px = (u+1)/2·W − 0.5`;
/// positions are clamped to the texel-center box before interpolation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BilinearTaps {
    pub x0: usize,
    pub x1: usize,
    pub y0: usize,
    pub y1: usize,
    pub wx: f64,
    pub wy: f64,
    pub inside: bool,
}

impl BilinearTaps {
    pub fn new(u: [f64; 2], width: usize, height: usize) -> Self {
        let inside = (-1.0..=1.0).contains(&u[0]) && (-1.0..=1.0).contains(&u[1]);
        let (x0, x1, wx) = axis_taps(u[0], width);
        let (y0, y1, wy) = axis_taps(u[1], height);
        Self {
            x0,
            x1,
            y0,
            y1,
            wx,
            wy,
            inside,
        }
    }

    /// (flat texel index, weight) for the four taps.
    pub fn taps(&self, width: usize) -> [(usize, f64); 4] {
        [
            (self.y0 * width + self.x0, (1.0 - self.wx) * (1.0 - self.wy)),
            (self.y0 * width + self.x1, self.wx * (1.0 - self.wy)),
            (self.y1 * width + self.x0, (1.0 - self.wx) * self.wy),
            (self.y1 * width + self.x1, self.wx * self.wy),
        ]
    }
}

fn axis_taps(u: f64, n: usize) -> (usize, usize, f64) {
    let max = (n - 1) as f64;
    let u = if u.is_finite() { u } else { 0.0 };
    let p = ((u + 1.0) * 0.5 * n as f64 - 0.5).clamp(0.0, max);
    let i0 = p.floor();
    let w = p - i0;
    let i0 = i0 as usize;
    let i1 = (i0 + 1).min(n - 1);
    (i0, i1, w)
}

/// Bilinear sample of `grid` at normalized coordinate `u`.
pub fn bilinear_sample(grid: &ImageGrid, u: [f64; 2], border: Border) -> (Vec<f32>, bool) {
    let mut out = vec![0.0; grid.channels];
    let valid = bilinear_sample_into(grid, u, border, &mut out);
    (out, valid)
}

/// Allocation-free variant of [`bilinear_sample`]; returns the validity flag.
pub fn bilinear_sample_into(grid: &ImageGrid, u: [f64; 2], border: Border, out: &mut [f32]) -> bool {
    let c = grid.channels;
    debug_assert_eq!(out.len(), c);
    let taps = BilinearTaps::new(u, grid.width, grid.height);
    let mut acc = [0.0f64; 8];
    let mut acc_vec;
    let acc: &mut [f64] = if c <= 8 {
        &mut acc[..c]
    } else {
        acc_vec = vec![0.0f64; c];
        &mut acc_vec
    };
    for (idx, w) in taps.taps(grid.width) {
        if w == 0.0 {
            continue;
        }
        let texel = &grid.data[idx * c..idx * c + c];
        for (a, &t) in acc.iter_mut().zip(texel) {
            *a += w * t as f64;
        }
    }
    for (o, a) in out.iter_mut().zip(acc.iter()) {
        *o = *a as f32;
    }
    match border {
        Border::Clamp => true,
        Border::MarkInvalid => taps.inside,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_texel_is_constant() {
        let g = ImageGrid::new(2, 1, 1, vec![0.25, 0.75]).unwrap();
        for u in [[-1.0, -1.0], [0.3, -0.9], [5.0, 2.0]] {
            assert_eq!(bilinear_sample(&g, u, Border::Clamp).0, vec![0.25, 0.75]);
        }
    }

    #[test]
    fn center_of_two_by_two_averages() {
        let g = ImageGrid::new(1, 2, 2, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let (v, valid) = bilinear_sample(&g, [0.0, 0.0], Border::Clamp);
        assert!(valid);
        assert!((v[0] - 1.5).abs() < 1e-6);
    }

    #[test]
    fn mark_invalid_outside() {
        let g = ImageGrid::new(1, 2, 2, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        assert!(!bilinear_sample(&g, [2.0, 0.0], Border::MarkInvalid).1);
        assert!(bilinear_sample(&g, [2.0, 0.0], Border::Clamp).1);
        assert!(bilinear_sample(&g, [1.0, -1.0], Border::MarkInvalid).1);
    }

    #[test]
    fn exact_at_texel_centers_and_linear_between() {
        let data: Vec<f32> = (0..12).map(|i| (i * i) as f32 * 0.1).collect();
        let g = ImageGrid::new(1, 3, 4, data).unwrap();
        for row in 0..3 {
            for col in 0..4 {
                let u = [2.0 * (col as f64 + 0.5) / 4.0 - 1.0, 2.0 * (row as f64 + 0.5) / 3.0 - 1.0];
                let (v, _) = bilinear_sample(&g, u, Border::Clamp);
                assert!((v[0] - g.texel(row, col)[0]).abs() < 1e-6);
            }
        }
        // Quarter of the way from texel (1,1) to (1,2).
        let u = [2.0 * 1.75 / 4.0 - 1.0, 2.0 * 1.5 / 3.0 - 1.0];
        let (v, _) = bilinear_sample(&g, u, Border::Clamp);
        let expect = 0.75 * g.texel(1, 1)[0] + 0.25 * g.texel(1, 2)[0];
        assert!((v[0] - expect).abs() < 1e-5);
    }

    #[test]
    fn colors_are_clamped() {
        let g = ImageGrid::from_colors(1, 1, 3, vec![-0.5, 0.5, 1.5]).unwrap();
        assert_eq!(g.data(), &[0.0, 0.5, 1.0]);
        assert!(ImageGrid::new(3, 2, 2, vec![0.0; 5]).is_err());
    }
}
