use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Vec3;

/// Surface color as a function of the world-space hit point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Albedo {
    Solid { color: [f32; 3] },
    /// Two-color checkerboard on the face plane (the axis of the surface
    /// normal is dropped).
    Checker { a: [f32; 3], b: [f32; 3], period: f64 },
    /// Trilinearly interpolated random colors on a cubic lattice with spacing
    /// `cell`: `base ± spread` per channel.
    RandomCells {
        seed: u64,
        cell: f64,
        base: [f32; 3],
        spread: f32,
    },
}

impl Albedo {
    pub fn validate(&self) -> Result<()> {
        let colors_ok = |cs: &[[f32; 3]]| cs.iter().flatten().all(|c| (0.0..=1.0).contains(c));
        let ok = match self {
            Albedo::Solid { color } => colors_ok(&[*color]),
            Albedo::Checker { a, b, period } => colors_ok(&[*a, *b]) && *period > 0.0,
            Albedo::RandomCells { cell, base, spread, .. } => colors_ok(&[*base]) && *cell > 0.0 && *spread >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidScene(format!("bad albedo {self:?}")))
        }
    }

    pub fn eval(&self, p: Vec3, normal: Vec3) -> [f32; 3] {
        match self {
            Albedo::Solid { color } => *color,
            Albedo::Checker { a, b, period } => {
                let n = [normal.x.abs(), normal.y.abs(), normal.z.abs()];
                let drop = (0..3).max_by(|&i, &j| n[i].total_cmp(&n[j])).unwrap_or(2);
                let parity: i64 = (0..3)
                    .filter(|&i| i != drop)
                    .map(|i| (p[i] / period).floor() as i64)
                    .sum();
                if parity.rem_euclid(2) == 0 {
                    *a
                } else {
                    *b
                }
            }
            Albedo::RandomCells {
                seed,
                cell,
                base,
                spread,
            } => {
                let q = [p.x / cell, p.y / cell, p.z / cell];
                let i0 = q.map(|v| v.floor());
                let f = [q[0] - i0[0], q[1] - i0[1], q[2] - i0[2]];
                let i0 = i0.map(|v| v as i64);
                let mut out = [0.0f32; 3];
                for (ch, o) in out.iter_mut().enumerate() {
                    let mut acc = 0.0;
                    for corner in 0..8 {
                        let d = [corner & 1, (corner >> 1) & 1, (corner >> 2) & 1];
                        let mut wgt = 1.0;
                        for a in 0..3 {
                            wgt *= if d[a] == 1 { f[a] } else { 1.0 - f[a] };
                        }
                        if wgt == 0.0 {
                            continue;
                        }
                        let key = [i0[0] + d[0] as i64, i0[1] + d[1] as i64, i0[2] + d[2] as i64];
                        acc += wgt * lattice_value(*seed, key, ch);
                    }
                    *o = (base[ch] + spread * (2.0 * acc as f32 - 1.0)).clamp(0.0, 1.0);
                }
                out
            }
        }
    }
}

/// Uniform value in [0,1) hashed from a lattice point and channel.
fn lattice_value(seed: u64, key: [i64; 3], channel: usize) -> f64 {
    let mut h = seed ^ 0x9e37_79b9_7f4a_7c15;
    for v in [key[0] as u64, key[1] as u64, key[2] as u64, channel as u64] {
        h = splitmix(h ^ v);
    }
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
