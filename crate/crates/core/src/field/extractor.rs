use super::{image_to_chw, ExtractorMode, FieldConfig, Init};
use crate::autodiff::{Graph, Real, Var};
use crate::geometry::ImageGrid;

/// Input normalization of the conv encoder.
const IMAGE_MEAN: f64 = 0.45;
const IMAGE_STD: f64 = 0.225;

const ENCODER: [usize; 4] = [3, 16, 32, 64];

fn he(fan_in: usize) -> Init {
    Init::Uniform((6.0 / fan_in as f64).sqrt())
}

pub(super) fn param_specs(cfg: &FieldConfig) -> Vec<(String, Vec<usize>, Init)> {
    let c = cfg.channels;
    match cfg.mode {
        ExtractorMode::Direct => vec![(
            "extractor.features".into(),
            vec![c, cfg.height, cfg.width],
            Init::Uniform(cfg.direct_init),
        )],
        ExtractorMode::Conv => {
            let mut v = Vec::new();
            for (i, pair) in ENCODER.windows(2).enumerate() {
                let (cin, cout) = (pair[0], pair[1]);
                v.push((format!("extractor.enc{}.w", i + 1), vec![cout, cin, 3, 3], he(cin * 9)));
                v.push((format!("extractor.enc{}.b", i + 1), vec![cout], Init::Const(0.0)));
            }
            // Transposed convs: weight [Cin, Cout, 3, 3].
            let dec = [(3, 64, 64), (2, 64 + 32, c), (1, c + 16, c)];
            for (level, cin, cout) in dec {
                v.push((format!("extractor.dec{level}.w"), vec![cin, cout, 3, 3], he(cin * 9 / 4)));
                v.push((format!("extractor.dec{level}.b"), vec![cout], Init::Const(0.0)));
            }
            v
        }
    }
}

pub(super) fn param_count(cfg: &FieldConfig) -> usize {
    match cfg.mode {
        ExtractorMode::Direct => 1,
        ExtractorMode::Conv => 12,
    }
}

/// `[H, W, C]` feature node.
pub(super) fn features<T: Real>(g: &mut Graph<T>, cfg: &FieldConfig, p: &[Var], image: &ImageGrid) -> Var {
    match cfg.mode {
        ExtractorMode::Direct => g.chw_to_hwc(p[0]),
        ExtractorMode::Conv => {
            let x = g.constant(image_to_chw(image, IMAGE_MEAN, 1.0 / IMAGE_STD));
            let e1 = g.conv2d(x, p[0], p[1], 2);
            let e1 = g.relu(e1);
            let e2 = g.conv2d(e1, p[2], p[3], 2);
            let e2 = g.relu(e2);
            let e3 = g.conv2d(e2, p[4], p[5], 2);
            let e3 = g.relu(e3);
            let d3 = g.conv_transpose2d(e3, p[6], p[7]);
            let d3 = g.relu(d3);
            let s2 = g.concat0(&[d3, e2]);
            let d2 = g.conv_transpose2d(s2, p[8], p[9]);
            let d2 = g.relu(d2);
            let s1 = g.concat0(&[d2, e1]);
            let d1 = g.conv_transpose2d(s1, p[10], p[11]);
            g.chw_to_hwc(d1)
        }
    }
}
