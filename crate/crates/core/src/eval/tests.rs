use super::*;
use crate::synthworld::{make_benchmark_scene, Albedo, Primitive, Shape};
use proptest::prelude::*;

fn origin() -> VehiclePose {
    VehiclePose {
        position: Vec3::ZERO,
        yaw: 0.0,
    }
}

/// Point at azimuth `deg` (0 = +z, 90 = +x) and horizontal distance `r`.
fn at(deg: f64, r: f64) -> Vec3 {
    let a = deg.to_radians();
    Vec3::new(r * a.sin(), 0.5, r * a.cos())
}

fn depth(values: &[f32]) -> ImageGrid {
    ImageGrid::new(1, 1, values.len(), values.to_vec()).unwrap()
}

#[test]
fn empty_scans_leave_everything_occupied() {
    let c = build_carved(&[(origin(), vec![])], 0.0, 1.0, DEFAULT_BINS);
    for x in [at(0.0, 1.0), at(123.0, 0.1), at(359.9, 50.0)] {
        assert!(c.occ(x));
        assert!(!c.vis(x));
    }
    assert!(build_carved(&[], 0.0, 1.0, DEFAULT_BINS).occ(at(0.0, 1.0)));
}

#[test]
fn single_return_carves_its_bin() {
    let c = build_carved(&[(origin(), vec![at(0.0, 10.0)])], 0.0, 1.0, DEFAULT_BINS);
    assert!(!c.occ(at(0.0, 5.0)));
    assert!(c.vis(at(0.0, 5.0)));
    assert!(c.occ(at(0.0, 10.0)));
    assert!(c.occ(at(0.0, 12.0)));
    assert!(c.occ(at(90.0, 1.0)));
    // Points outside the height slice are ignored.
    let c = build_carved(&[(origin(), vec![Vec3::new(0.0, 3.0, 10.0)])], 0.0, 1.0, DEFAULT_BINS);
    assert!(c.occ(at(0.0, 5.0)));
}

#[test]
fn thresholds_interpolate_between_bin_centers() {
    let pts = vec![at(10.5, 10.0), at(11.5, 20.0)];
    let c = build_carved(&[(origin(), pts)], 0.0, 1.0, DEFAULT_BINS);
    let s = &c.scans[0];
    let t = s.threshold(11f64.to_radians()).unwrap();
    assert!((t - 15.0).abs() < 1e-9, "{t}");
    assert!((s.threshold(10.5f64.to_radians()).unwrap() - 10.0).abs() < 1e-9);
    assert!((s.threshold(10.75f64.to_radians()).unwrap() - 12.5).abs() < 1e-9);
    // Beyond the last measured bin the own value is kept.
    assert!((s.threshold(11.9f64.to_radians()).unwrap() - 20.0).abs() < 1e-9);
    assert!(s.threshold(12.5f64.to_radians()).is_none());
}

#[test]
fn interpolation_wraps_around() {
    let pts = vec![at(359.5, 10.0), at(0.5, 20.0)];
    let c = build_carved(&[(origin(), pts)], 0.0, 1.0, DEFAULT_BINS);
    assert!((c.scans[0].threshold(0.0).unwrap() - 15.0).abs() < 1e-9);
}

#[test]
fn yaw_rotates_the_bins() {
    let pose = VehiclePose {
        position: Vec3::new(1.0, 0.0, 2.0),
        yaw: 0.5,
    };
    let p = pose.position + Vec3::new(0.5f64.sin() * 8.0, 0.5, 0.5f64.cos() * 8.0);
    let c = build_carved(&[(pose, vec![p])], 0.0, 1.0, DEFAULT_BINS);
    assert!(c.scans[0].min_distance[0].is_some());
    assert!(!c.occ(pose.position + Vec3::new(0.5f64.sin() * 4.0, 0.5, 0.5f64.cos() * 4.0)));
}

#[test]
fn carving_matches_oracle_on_occlusion_benchmark() {
    let b = make_benchmark_scene(0, "two_object_occlusion").unwrap();
    let c = carve_scene(&b.scene, &b.trajectory, DEFAULT_SCAN_RAYS, [0.0, 1.0], DEFAULT_BINS);
    let pts = EvalCuboid::default().points();
    assert_eq!(pts.len(), 2720);
    let agree = pts.iter().filter(|&&x| c.occ(x) == b.scene.occupied(x)).count();
    assert!(agree as f64 >= 0.95 * pts.len() as f64, "{agree}/2720");
    // Scan 0 cannot see behind the first object.
    let labels = OccupancyLabels::oracle(&b.scene, &c, &pts);
    let ie = (0..pts.len()).filter(|&i| !labels.vis[i] && !labels.occ[i]).count();
    assert!(ie as f64 >= 0.05 * pts.len() as f64, "{ie}");
}

#[test]
fn report_edge_cases() {
    let b = make_benchmark_scene(2, "two_object_occlusion").unwrap();
    let c = carve_scene(&b.scene, &b.trajectory, 1800, [0.0, 1.0], DEFAULT_BINS);
    let pts = EvalCuboid::default().points();
    let labels = OccupancyLabels::oracle(&b.scene, &c, &pts);
    let n = pts.len();

    let full = occupancy_report(&labels, &vec![10.0; n]).unwrap();
    assert_eq!(full.ie_rec, Some(0.0));
    let empty = occupancy_report(&labels, &vec![0.0; n]).unwrap();
    assert_eq!(empty.ie_rec, Some(1.0));
    let empty_frac = labels.occ.iter().filter(|&&o| !o).count() as f64 / n as f64;
    assert!((empty.o_acc.unwrap() - empty_frac).abs() < 1e-12);

    let oracle = occupancy_metrics(&OracleDensity::new(&b.scene), &labels, &pts).unwrap();
    assert_eq!((oracle.o_acc, oracle.ie_acc, oracle.ie_rec), (Some(1.0), Some(1.0), Some(1.0)));
    assert_eq!(oracle.n_points, 2720);

    // vis = false ⇒ counted as invisible.
    assert_eq!(oracle.n_invisible, labels.vis.iter().filter(|&&v| !v).count());

    let all_visible = OccupancyLabels {
        occ: vec![false; 3],
        vis: vec![true; 3],
    };
    let r = occupancy_report(&all_visible, &[0.0; 3]).unwrap();
    assert_eq!((r.ie_acc, r.ie_rec), (None, None));
    assert!(occupancy_report(&all_visible, &[0.0; 2]).is_err());
}

#[test]
fn depth_metric_examples() {
    let gt = depth(&[2.0, 4.0, 7.5, 10.0, 0.0, 90.0]);
    let m = depth_metrics(&gt, &gt, MAX_EVAL_DEPTH).unwrap();
    assert_eq!(m.valid_pixels, 4);
    assert_eq!((m.abs_rel, m.sq_rel, m.rmse, m.rmse_log), (0.0, 0.0, 0.0, 0.0));
    assert_eq!((m.delta1, m.delta2, m.delta3), (1.0, 1.0, 1.0));

    let scaled = |f: f32| depth(&gt.data().iter().map(|v| v * f).collect::<Vec<_>>());
    let m = depth_metrics(&scaled(1.2), &gt, MAX_EVAL_DEPTH).unwrap();
    assert!((m.abs_rel - 0.2).abs() < 1e-6, "{}", m.abs_rel);
    assert_eq!(m.delta1, 1.0);
    let m = depth_metrics(&scaled(1.25), &gt, MAX_EVAL_DEPTH).unwrap();
    assert_eq!(m.delta1, 0.0);
    assert_eq!(m.delta2, 1.0);

    assert!(matches!(depth_metrics(&depth(&[1.0]), &depth(&[0.0]), 80.0), Err(Error::NoValidPixels)));
    assert!(depth_metrics(&depth(&[1.0]), &depth(&[1.0, 2.0]), 80.0).is_err());
}

#[test]
fn psnr_and_ssim_examples() {
    let a = ImageGrid::filled(3, 4, 4, 0.0);
    let b = ImageGrid::filled(3, 4, 4, 0.1);
    assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
    assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-5);
    assert!((ssim_global(&b, &b).unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(ssim_global(&a, &b).unwrap(), ssim_global(&b, &a).unwrap());
    let mask = ImageGrid::new(1, 4, 4, (0..16).map(|i| (i < 4) as u8 as f32).collect()).unwrap();
    let mut c = a.clone();
    c.data_mut()[3 * 10] = 1.0;
    assert_eq!(psnr_masked(&a, &c, Some(&mask)).unwrap(), PSNR_CAP);
    assert!(psnr(&a, &c).unwrap() < PSNR_CAP);
    assert_eq!(ssim_masked(&a, &b, None).unwrap(), ssim_global(&a, &b).unwrap());
    let none = ImageGrid::filled(1, 4, 4, 0.0);
    assert!(matches!(ssim_masked(&a, &b, Some(&none)), Err(Error::NoValidPixels)));
}

#[test]
fn slice_of_zero_density_is_black() {
    let s = Scene::empty([0.0; 3]);
    let img = export_density_slice(&OracleDensity::new(&s), [-4.0, 4.0], [3.0, 20.0], [0.0, 1.0], [32, 20], 4, None).unwrap();
    assert_eq!((img.width(), img.height(), img.channels()), (32, 20, 1));
    assert!(img.data().iter().all(|&v| v == 0.0));
}

#[test]
fn slice_shows_box_footprint() {
    let mut s = Scene::empty([0.0; 3]);
    s.primitives.push(Primitive {
        shape: Shape::Box {
            center: Vec3::new(1.0, 0.5, 10.0),
            half_extent: Vec3::new(1.0, 1.0, 2.0),
        },
        albedo: Albedo::Solid { color: [0.5; 3] },
    });
    // 0.5 m cells over x ∈ [-4,4], z ∈ [4,20] (row 0 is z ≈ 20).
    let img = export_density_slice(&OracleDensity::new(&s), [-4.0, 4.0], [4.0, 20.0], [0.0, 1.0], [16, 32], 3, Some(0.5)).unwrap();
    for row in 0..32 {
        let z = 20.0 - 0.5 * (row as f64 + 0.5);
        for col in 0..16 {
            let x = -4.0 + 0.5 * (col as f64 + 0.5);
            let inside = (0.0..=2.0).contains(&x) && (8.0..=12.0).contains(&z);
            assert_eq!(img.texel(row, col)[0] == 1.0, inside, "row {row} col {col}");
        }
    }
}

proptest! {
    #[test]
    fn adding_a_scan_never_unfrees(
        a in prop::collection::vec((0.0..360.0f64, 0.5..30.0f64), 0..40),
        b in prop::collection::vec((0.0..360.0f64, 0.5..30.0f64), 0..40),
        q in prop::collection::vec((0.0..360.0f64, 0.0..30.0f64), 20),
        shift in -3.0..3.0f64,
    ) {
        let pose_b = VehiclePose { position: Vec3::new(0.0, 0.0, shift), yaw: 0.0 };
        let pts_a: Vec<Vec3> = a.iter().map(|&(d, r)| at(d, r)).collect();
        let pts_b: Vec<Vec3> = b.iter().map(|&(d, r)| pose_b.position + at(d, r)).collect();
        let one = build_carved(&[(origin(), pts_a.clone())], 0.0, 1.0, 90);
        let two = build_carved(&[(origin(), pts_a), (pose_b, pts_b)], 0.0, 1.0, 90);
        for &(d, r) in &q {
            let x = at(d, r);
            if !one.occ(x) {
                prop_assert!(!two.occ(x));
            }
            prop_assert_eq!(one.vis(x), two.vis(x));
        }
    }

    #[test]
    fn depth_metrics_are_scale_invariant(
        vals in prop::collection::vec((0.5..30.0f32, 0.5..2.0f32), 1..20),
        k in prop::sample::select(vec![0.5f32, 2.0, 4.0]),
    ) {
        let gt: Vec<f32> = vals.iter().map(|v| v.0).collect();
        let pred: Vec<f32> = vals.iter().map(|v| v.0 * v.1).collect();
        let m1 = depth_metrics(&depth(&pred), &depth(&gt), 1e9).unwrap();
        let m2 = depth_metrics(
            &depth(&pred.iter().map(|v| v * k).collect::<Vec<_>>()),
            &depth(&gt.iter().map(|v| v * k).collect::<Vec<_>>()),
            1e9,
        )
        .unwrap();
        prop_assert!((m1.abs_rel - m2.abs_rel).abs() < 1e-9);
        prop_assert_eq!(m1.delta1, m2.delta1);
        prop_assert_eq!(m1.delta2, m2.delta2);
    }
}
