use super::*;
use proptest::prelude::*;

fn img(h: usize, w: usize, f: impl Fn(usize) -> f32) -> ImageGrid {
    ImageGrid::from_colors(3, h, w, (0..h * w * 3).map(f).collect()).unwrap()
}

fn noise(seed: u32) -> impl Fn(usize) -> f32 {
    move |i| ((i as u32).wrapping_mul(2654435761).wrapping_add(seed.wrapping_mul(40503)) % 1000) as f32 / 999.0
}

#[test]
fn ssim_identity_is_one() {
    let a = img(4, 5, noise(1));
    assert!(ssim_map(&a, &a).unwrap().iter().all(|v| (v - 1.0).abs() < 1e-12));
}

#[test]
fn ssim_of_constant_zero_vs_one() {
    let z = ImageGrid::filled(3, 3, 3, 0.0);
    let o = ImageGrid::filled(3, 3, 3, 1.0);
    let expected = SSIM_C1 / (1.0 + SSIM_C1);
    for v in ssim_map(&z, &o).unwrap() {
        assert!((v - expected).abs() < 1e-12, "{v}");
        assert!((v - 1.0e-4).abs() < 1e-7);
    }
}

#[test]
fn ssim_shape_mismatch_is_an_error() {
    assert!(ssim_map(&ImageGrid::filled(3, 2, 2, 0.0), &ImageGrid::filled(3, 2, 3, 0.0)).is_err());
}

#[test]
fn photometric_min_examples() {
    let w = LossWeights::default();
    let p = img(8, 8, noise(3));
    let garbage = img(8, 8, noise(9));
    let all = vec![true; 64];
    let (m, keep) = photometric_min(&p, &[(&p, all.clone())], &w).unwrap();
    assert!(m.iter().all(|&v| v.abs() < 1e-12));
    assert!(keep.iter().all(|&k| k));
    let (m, _) = photometric_min(&p, &[(&garbage, all.clone()), (&p, all.clone())], &w).unwrap();
    assert!(m.iter().all(|&v| v.abs() < 1e-12));
    let none = vec![false; 64];
    let (m, keep) = photometric_min(&p, &[(&garbage, none.clone()), (&garbage, none)], &w).unwrap();
    assert!(m.iter().all(|&v| v == 0.0));
    assert!(keep.iter().all(|&k| !k));
}

#[test]
fn smoothness_examples() {
    let flat = img(4, 4, |_| 0.3);
    let s = edge_aware_smoothness(&[1.0; 16], &flat).unwrap();
    assert!(s.iter().all(|&v| v == 0.0));
    // 1×2 patch: d* step of 0.1 across a black→white edge.
    let edge = img(1, 2, |i| if i < 3 { 0.0 } else { 1.0 });
    let s = edge_aware_smoothness(&[1.0, 1.1], &edge).unwrap();
    assert!((s[0] - 0.1 * (-1.0f64).exp()).abs() < 1e-9, "{s:?}");
    assert!((s[0] - 0.0368).abs() < 1e-4);
    assert_eq!(s[1], 0.0);
}

#[test]
fn smoothness_is_depth_scale_invariant() {
    let p = img(3, 4, noise(5));
    let d: Vec<f64> = (0..12).map(|i| 3.0 + (i as f64 * 0.7).sin()).collect();
    let d2: Vec<f64> = d.iter().map(|v| 2.0 * v).collect();
    let a = edge_aware_smoothness(&inverse_mean_normalized(&d), &p).unwrap();
    let b = edge_aware_smoothness(&inverse_mean_normalized(&d2), &p).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-12);
    }
}

#[test]
fn invalid_mask_uses_strict_inequality() {
    let v = invalid_ray_mask(&[vec![0.0, 0.3, 0.300001, 1.0]], 0.3);
    assert_eq!(v[0], vec![true, true, false, false]);
}

fn spec(target: ImageGrid, recon: Vec<ImageGrid>, depth: Vec<f64>) -> PatchSpec {
    let n = target.width() * target.height();
    let k = recon.len();
    PatchSpec {
        frame: 0,
        top: 0,
        left: 0,
        target,
        recon,
        valid: vec![vec![true; n]; k],
        depth,
    }
}

#[test]
fn total_loss_examples() {
    let w = LossWeights::default();
    let p = img(8, 8, noise(2));
    assert_eq!(total_loss(&[spec(p.clone(), vec![p.clone()], vec![5.0; 64])], &w).unwrap(), 0.0);
    assert!(total_loss(&[], &w).is_err());

    let g1 = img(8, 8, noise(7));
    let g2 = img(8, 8, noise(8));
    let depth: Vec<f64> = (0..64).map(|i| 4.0 + (i % 5) as f64).collect();
    let both = total_loss(&[spec(p.clone(), vec![g1.clone(), g2.clone()], depth.clone())], &w).unwrap();
    let only1 = total_loss(&[spec(p.clone(), vec![g1.clone()], depth.clone())], &w).unwrap();
    let only2 = total_loss(&[spec(p.clone(), vec![g2.clone()], depth.clone())], &w).unwrap();
    assert!(both <= only1 + 1e-12 && both <= only2 + 1e-12);

    let photo = total_loss(
        &[spec(p.clone(), vec![g1.clone()], depth.clone())],
        &LossWeights { eas: 0.0, ..w },
    )
    .unwrap();
    let doubled = total_loss(
        &[spec(p.clone(), vec![g1], depth)],
        &LossWeights { eas: 2.0 * w.eas, ..w },
    )
    .unwrap();
    assert!(((doubled - photo) - 2.0 * (only1 - photo)).abs() < 1e-9);
}

proptest! {
    #[test]
    fn min_is_below_every_valid_frame(seeds in prop::collection::vec(0u32..1000, 1..4), mask_bits in any::<u64>()) {
        let w = LossWeights::default();
        let p = img(4, 4, noise(1000));
        let recon: Vec<ImageGrid> = seeds.iter().map(|&s| img(4, 4, noise(s))).collect();
        let refs: Vec<&ImageGrid> = recon.iter().collect();
        let errors = photometric_errors(&p, &refs, &w).unwrap();
        let valid: Vec<Vec<bool>> = (0..recon.len())
            .map(|k| (0..16).map(|i| (mask_bits >> ((k * 16 + i) % 64)) & 1 == 1).collect())
            .collect();
        let pairs: Vec<(&ImageGrid, Vec<bool>)> = recon.iter().zip(&valid).map(|(r, v)| (r, v.clone())).collect();
        let (m, keep) = photometric_min(&p, &pairs, &w).unwrap();
        for i in 0..16 {
            prop_assert!(m[i] >= 0.0);
            for k in 0..recon.len() {
                if valid[k][i] {
                    prop_assert!(m[i] <= errors[k][i] + 1e-12);
                }
            }
            prop_assert_eq!(keep[i], valid.iter().any(|v| v[i]));
        }
        // Dropping a frame that is invalid everywhere changes nothing.
        let mut with_dead = pairs.clone();
        let dead = img(4, 4, noise(4242));
        with_dead.push((&dead, vec![false; 16]));
        let (m2, keep2) = photometric_min(&p, &with_dead, &w).unwrap();
        prop_assert_eq!(m, m2);
        prop_assert_eq!(keep, keep2);
    }

    #[test]
    fn ssim_is_symmetric_and_bounded(a in 0u32..500, b in 0u32..500) {
        let x = img(5, 4, noise(a));
        let y = img(5, 4, noise(b));
        let s1 = ssim_map(&x, &y).unwrap();
        let s2 = ssim_map(&y, &x).unwrap();
        for (u, v) in s1.iter().zip(&s2) {
            prop_assert!((u - v).abs() < 1e-12);
            prop_assert!(*u <= 1.0 + 1e-9 && *u >= -1.0 - 1e-9);
        }
    }

    #[test]
    fn total_loss_is_nonnegative(a in 0u32..500, b in 0u32..500, scale in 0.5f64..20.0) {
        let p = img(8, 8, noise(a));
        let r = img(8, 8, noise(b));
        let depth: Vec<f64> = (0..64).map(|i| scale * (1.0 + (i as f64 * 0.37).sin().abs())).collect();
        let l = total_loss(&[spec(p, vec![r], depth)], &LossWeights::default()).unwrap();
        prop_assert!(l >= 0.0);
    }
}
