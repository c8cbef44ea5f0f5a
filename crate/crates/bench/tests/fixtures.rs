use densefield::field::ExtractorMode;
use densefield_bench::{plane_fixture, ramp, ramp_image};

#[test]
fn ramp_is_deterministic_and_in_range() {
    let a = ramp(500, 0.3);
    assert_eq!(a, ramp(500, 0.3));
    assert!(a.iter().all(|v| (0.0..1.0).contains(v)));
    assert_eq!(ramp_image(3, 4, 5, 0.0).data().len(), 60);
}

#[test]
fn plane_fixture_trains_one_step_in_both_modes() {
    for mode in [ExtractorMode::Direct, ExtractorMode::Conv] {
        let f = plane_fixture(mode);
        let mut t = f.trainer();
        let r = t.train_step(std::slice::from_ref(&f.scene)).unwrap();
        assert!(r.loss.is_finite() && !r.skipped);
        assert_eq!(f.input_rays(64).len(), 64);
        let pts = f.cuboid_points(100);
        assert!(pts.iter().all(|p| (-4.0..=4.0).contains(&p.x) && (0.0..=1.0).contains(&p.y) && (3.0..=20.0).contains(&p.z)));
        let _ = f.model();
    }
}
