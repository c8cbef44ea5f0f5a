use std::f64::consts::TAU;

use serde::{Deserialize, Serialize};

use crate::geometry::Vec3;
use crate::synthworld::VehiclePose;

/// Default number of azimuth bins.
pub const DEFAULT_BINS: usize = 360;

/// Free space carved by one range scan: per azimuth bin, the smallest
/// horizontal distance of any slice point (`None` when the bin is empty).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanBins {
    pub vehicle_pose: VehiclePose,
    pub min_distance: Vec<Option<f64>>,
}

/// Free space carved by a sequence of scans; scan 0 is taken at the input
/// frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarvedOccupancy {
    pub y_range: [f64; 2],
    pub bins: usize,
    pub scans: Vec<ScanBins>,
}

/// Azimuth (radians in [0, 2π)) and horizontal distance of `x` in the frame
/// of `pose`.
fn polar(pose: &VehiclePose, x: Vec3) -> (f64, f64) {
    let dx = x.x - pose.position.x;
    let dz = x.z - pose.position.z;
    let a = (dx.atan2(dz) - pose.yaw).rem_euclid(TAU);
    // rem_euclid may return TAU for tiny negative inputs.
    (if a >= TAU { 0.0 } else { a }, dx.hypot(dz))
}

/// Bins the slice points of every scan (y relative to the pose within
/// `[y_min, y_max]`) and keeps the per-bin minimum distance.
pub fn build_carved(scans: &[(VehiclePose, Vec<Vec3>)], y_min: f64, y_max: f64, bins: usize) -> CarvedOccupancy {
    let bins = bins.max(1);
    let width = TAU / bins as f64;
    let scans = scans
        .iter()
        .map(|(pose, points)| {
            let mut min_distance: Vec<Option<f64>> = vec![None; bins];
            for &p in points {
                let y = p.y - pose.position.y;
                if y < y_min || y > y_max {
                    continue;
                }
                let (a, r) = polar(pose, p);
                if r <= 0.0 {
                    continue;
                }
                let j = ((a / width) as usize).min(bins - 1);
                min_distance[j] = Some(min_distance[j].map_or(r, |m: f64| m.min(r)));
            }
            ScanBins {
                vehicle_pose: *pose,
                min_distance,
            }
        })
        .collect();
    CarvedOccupancy {
        y_range: [y_min, y_max],
        bins,
        scans,
    }
}

impl ScanBins {
    /// Interpolated free distance in direction `a` (radians): the value of
    /// the bin containing `a`, blended linearly towards the adjacent bin on
    /// the side of `a` when that bin holds a measurement. `None` when the
    /// containing bin is empty.
    pub fn threshold(&self, a: f64) -> Option<f64> {
        let b = self.min_distance.len();
        let width = TAU / b as f64;
        let own = ((a / width) as usize).min(b - 1);
        let d_own = self.min_distance[own]?;
        // Offset from the bin center in units of bins, in [-0.5, 0.5).
        let off = a / width - (own as f64 + 0.5);
        let nb = if off >= 0.0 { (own + 1) % b } else { (own + b - 1) % b };
        Some(match self.min_distance[nb] {
            Some(d_nb) => d_own + off.abs() * (d_nb - d_own),
            None => d_own,
        })
    }

    /// Strictly closer than the carved surface in its direction.
    pub fn is_free(&self, x: Vec3) -> bool {
        let (a, r) = polar(&self.vehicle_pose, x);
        self.threshold(a).is_some_and(|t| r < t)
    }
}

impl CarvedOccupancy {
    /// Occupied unless some scan carves `x` out.
    pub fn occ(&self, x: Vec3) -> bool {
        !self.scans.iter().any(|s| s.is_free(x))
    }

    /// Visible from the first scan, i.e. carved by it.
    pub fn vis(&self, x: Vec3) -> bool {
        self.scans.first().is_some_and(|s| s.is_free(x))
    }
}
