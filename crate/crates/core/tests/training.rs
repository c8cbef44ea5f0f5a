use densefield::field::ExtractorMode;
use densefield::synthworld::{make_benchmark_scene, CameraRole};
use densefield::trainer::{TrainConfig, TrainScene, Trainer};

const VIEWS: [CameraRole; 3] = [CameraRole::Stereo, CameraRole::Previous, CameraRole::Lateral];

fn plane_trainer(steps: usize) -> (Trainer, TrainScene) {
    let bench = make_benchmark_scene(0, "plane").unwrap();
    let scene = TrainScene::from_benchmark(&bench, &VIEWS).unwrap();
    let cfg = TrainConfig {
        mode: ExtractorMode::Direct,
        batch_size: 1,
        lr: 1e-3,
        lr_final: 1e-4,
        steps,
        ..TrainConfig::desk()
    };
    let cam = &bench.rig.input;
    (Trainer::new(cfg, cam.width(), cam.height()).unwrap(), scene)
}

#[test]
fn plane_loss_halves_within_200_steps() {
    let (mut t, scene) = plane_trainer(200);
    let pool = [scene];
    let losses: Vec<f64> = (0..200).map(|_| t.train_step(&pool).unwrap()).map(|r| {
        assert!(!r.skipped && r.loss.is_finite());
        r.loss
    }).collect();
    let mean = |s: &[f64]| s.iter().sum::<f64>() / s.len() as f64;
    let (first, last) = (mean(&losses[..10]), mean(&losses[190..]));
    assert!(last < 0.5 * first, "loss {first:.4} -> {last:.4}");
}

#[test]
fn checkpoint_round_trip_continues_identically() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.bin");
    let (mut a, scene) = plane_trainer(8);
    let pool = [scene];
    for _ in 0..4 {
        a.train_step(&pool).unwrap();
    }
    a.save(&path).unwrap();
    let mut b = Trainer::load(&path, None).unwrap();
    assert_eq!(b.step, 4);
    for _ in 0..4 {
        let (ra, rb) = (a.train_step(&pool).unwrap(), b.train_step(&pool).unwrap());
        assert_eq!(ra.loss.to_bits(), rb.loss.to_bits());
    }
    assert_eq!(a.model.params(), b.model.params());
}
