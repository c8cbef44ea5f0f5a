use super::*;
use crate::autodiff::{gradcheck, GradcheckOptions};
use crate::field::{Activation, ExtractorMode, FieldConfig};
use rand::rngs::mock::StepRng;

fn cam() -> Camera {
    Camera::pinhole(1.0, 1.0, 0.0, 0.0, 8, 8, 1.0, 20.0).unwrap()
}

fn checker(w: usize, h: usize) -> ImageGrid {
    let data = (0..w * h)
        .flat_map(|i| {
            let v = ((i % w + i / w) % 2) as f32;
            [v, 0.5 * v, 1.0 - v]
        })
        .collect();
    ImageGrid::from_colors(3, h, w, data).unwrap()
}

fn empty_model() -> DensityModel<f64> {
    let cfg = FieldConfig {
        activation: Activation::Relu,
        ..FieldConfig::new(ExtractorMode::Direct, 2, 8, 8)
    };
    let mut m = DensityModel::zeroed(cfg).unwrap();
    m.set_input(&checker(8, 8), &cam()).unwrap();
    m
}

#[test]
fn stratified_formula_example() {
    let d = stratified_depths_with(2, 1.0, 100.0, |_| 0.5);
    assert!((d[0] - 1.3289).abs() < 1e-4, "{d:?}");
    assert!((d[1] - 3.8835).abs() < 1e-4, "{d:?}");
    let d = stratified_depths_with(4, 2.0, 30.0, |_| 0.0);
    assert_eq!(d[0], 2.0);
}

#[test]
fn stratified_depths_increase_within_range() {
    let mut rng = ray_rng(3, 0);
    for _ in 0..1000 {
        let d = stratified_depths(32, 2.0, 40.0, &mut rng);
        assert!(d[0] >= 2.0 && d[31] <= 40.0);
        assert!(d.windows(2).all(|w| w[1] > w[0]));
    }
}

#[test]
fn inverse_depth_uniform_within_bins() {
    // χ² over 10 sub-bins of the position inside bin 1, 10⁴ draws.
    let (s, near, far) = (4usize, 1.0, 50.0);
    let mut rng = ray_rng(17, 0);
    let mut counts = [0usize; 10];
    let n = 10_000;
    for _ in 0..n {
        let d = stratified_depths(s, near, far, &mut rng);
        let si = (1.0 / d[1] - 1.0 / near) / (1.0 / far - 1.0 / near);
        let frac = si * s as f64 - 1.0;
        counts[((frac * 10.0) as usize).min(9)] += 1;
    }
    let e = n as f64 / 10.0;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
    // 99.9% quantile of χ² with 9 dof.
    assert!(chi2 < 27.88, "chi2 = {chi2}, counts {counts:?}");
}

#[test]
fn zero_density_renders_nothing() {
    let c = composite_weights(&[0.0; 5], &[1.0; 5]);
    assert!(c.alphas.iter().all(|&a| a == 0.0));
    assert!(c.weights.iter().all(|&w| w == 0.0));
    let m = empty_model();
    let img = checker(8, 8);
    let ray = cam().ray_for_pixel([0.1, -0.2]);
    let out = composite(&m, &ray, &[Frame::new(&img, &cam())], 16, &mut ray_rng(0, 0)).unwrap();
    assert_eq!(out.depth, 0.0);
    assert_eq!(out.weight_sum, 0.0);
    assert_eq!(out.colors[0], [0.0; 3]);
}

#[test]
fn ln2_steps_halve_transmittance() {
    let c = composite_weights(&[std::f64::consts::LN_2; 6], &[1.0; 6]);
    for (i, w) in c.weights.iter().enumerate() {
        assert!((w - 0.5f64.powi(i as i32 + 1)).abs() < 1e-12);
        assert!((c.alphas[i] - 0.5).abs() < 1e-12);
    }
}

#[test]
fn opaque_sample_takes_all_weight() {
    let depths = [3.0, 4.0, 5.0, 6.0];
    let c = composite_weights(&[0.0, 0.0, 1e9, 0.0], &deltas(&depths, 10.0));
    let d: f64 = c.weights.iter().zip(depths).map(|(w, d)| w * d).sum();
    assert!((d - 5.0).abs() < 1e-9);
    assert_eq!(c.transmittance[0], 1.0);
}

#[test]
fn last_delta_reaches_far_plane() {
    assert_eq!(deltas(&[1.0, 2.0, 4.0], 10.0), vec![1.0, 2.0, 6.0]);
}

#[test]
fn graph_matches_single_ray_path() {
    let cfg = FieldConfig::new(ExtractorMode::Direct, 3, 8, 8);
    let mut m = DensityModel::<f64>::new(cfg, 4).unwrap();
    let img = checker(8, 8);
    m.set_input(&img, &cam()).unwrap();
    let other = cam().looking_from(Vec3::new(0.5, 0.0, 0.0), 0.1, 0.0);
    let c = cam();
    let frames = [Frame::new(&img, &c), Frame::new(&img, &other)];
    let ray = cam().ray_for_pixel([0.3, 0.1]);
    let a = composite(&m, &ray, &frames, 12, &mut ray_rng(5, 0)).unwrap();
    let b = &render_rays(&m, &[ray], &frames, 12, 5).unwrap()[0];
    assert!((a.depth - b.depth).abs() < 1e-9);
    assert!((a.weight_sum - b.weight_sum).abs() < 1e-12);
    for k in 0..2 {
        assert!((a.iv_raw[k] - b.iv_raw[k]).abs() < 1e-12);
        for ch in 0..3 {
            assert!((a.colors[k][ch] - b.colors[k][ch]).abs() < 1e-5);
        }
    }
}

#[test]
fn identical_frames_identical_colors() {
    let cfg = FieldConfig::new(ExtractorMode::Direct, 3, 8, 8);
    let mut m = DensityModel::<f64>::new(cfg, 8).unwrap();
    let img = checker(8, 8);
    m.set_input(&img, &cam()).unwrap();
    let c = cam();
    let frames = [Frame::new(&img, &c), Frame::new(&img, &c), Frame::new(&img, &c)];
    let rays: Vec<Ray> = (0..10).map(|i| cam().ray_for_pixel([0.1 * i as f64 - 0.5, 0.2])).collect();
    for o in render_rays(&m, &rays, &frames, 16, 1).unwrap() {
        assert_eq!(o.colors[0], o.colors[1]);
        assert_eq!(o.colors[1], o.colors[2]);
        assert!(o.weight_sum <= 1.0 + 1e-5);
        assert!(o.iv_raw.iter().all(|&iv| iv >= 0.0 && iv <= o.weight_sum + 1e-12));
    }
}

#[test]
fn out_of_frame_mass_counts_as_invalid() {
    let cfg = FieldConfig::new(ExtractorMode::Direct, 3, 8, 8);
    let mut m = DensityModel::<f64>::new(cfg, 2).unwrap();
    let img = checker(8, 8);
    m.set_input(&img, &cam()).unwrap();
    // A camera looking the other way never sees the samples.
    let away = cam().looking_from(Vec3::new(0.0, 0.0, 0.0), std::f64::consts::PI, 0.0);
    let ray = cam().ray_for_pixel([0.0, 0.0]);
    let (rs, out) = sample_ray(&m, &ray, &[Frame::new(&img, &away)], 8, &mut StepRng::new(0, 1)).unwrap();
    assert!(rs.out_of_frame.iter().all(|o| o[0]));
    assert!((out.iv_raw[0] - out.weight_sum).abs() < 1e-12);
    assert_eq!(out.colors[0], [0.0; 3]);
}

#[test]
fn empty_model_maps() {
    let m = empty_model();
    let target = cam().with_resolution(6, 4).unwrap();
    let d = render_depth_map(&m, &target, 8, 0).unwrap();
    assert_eq!((d.width(), d.height()), (6, 4));
    assert!(d.data().iter().all(|&v| v == 0.0));
    let img = checker(8, 8);
    let nv = render_novel_view(&m, Frame::new(&img, &cam()), &target, 8, 0.3, 0).unwrap();
    assert!(nv.image.data().iter().all(|&v| v == 0.0));
    assert!(nv.valid.data().iter().all(|&v| v == 0.0));
}

#[test]
fn render_gradcheck_through_density() {
    let cfg = FieldConfig {
        hidden: 5,
        n_freq: 2,
        ..FieldConfig::new(ExtractorMode::Direct, 2, 8, 8)
    };
    let m = DensityModel::<f64>::new(cfg, 21).unwrap();
    let img = checker(8, 8);
    let c = cam();
    let other = c.looking_from(Vec3::new(0.4, 0.0, 0.0), 0.0, 0.0);
    let rays: Vec<Ray> = [[0.1, 0.2], [-0.4, 0.3]].iter().map(|&u| c.ray_for_pixel(u)).collect();
    let bundle = RayBundle::stratified(rays, 6, c.z_near(), c.z_far(), 3, 0);
    let opts = GradcheckOptions {
        max_entries: 16,
        ..Default::default()
    };
    let r = gradcheck(m.params(), opts, |g, v| {
        let vars = FieldVars { params: v.to_vec() };
        let f = m.features_node(g, &vars, &img).unwrap();
        let frames = [Frame::new(&img, &c), Frame::new(&img, &other)];
        let n = render_nodes(g, &m, &vars, f, &c, &bundle, &frames);
        let a = g.sum(n.colors[0]);
        let b = g.sum(n.colors[1]);
        let d = g.sum(n.depth);
        let ab = g.add(a, b);
        g.add(ab, d)
    })
    .unwrap();
    assert!(r.max_rel_error < 1e-4, "{r:?}");
}
