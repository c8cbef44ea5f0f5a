use std::f64::consts::PI;

/// Frequencies used for both the distance and pixel encodings.
pub const DEFAULT_FREQUENCIES: usize = 7;

/// Encoded width of one scalar: the raw value plus a sin/cos pair per frequency.
pub const fn encoded_width(n_freq: usize) -> usize {
    1 + 2 * n_freq
}

/// γ(x) = [x, sin(πx·2⁰), cos(πx·2⁰), …, sin(πx·2ⁿ⁻¹), cos(πx·2ⁿ⁻¹)], applied per element.
pub fn positional_encode(values: &[f64], n_freq: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(values.len() * encoded_width(n_freq));
    positional_encode_into(values, n_freq, &mut out);
    out
}

pub fn positional_encode_into(values: &[f64], n_freq: usize, out: &mut Vec<f64>) {
    for &x in values {
        out.push(x);
        if n_freq == 0 {
            continue;
        }
        // Higher octaves by the double-angle identities.
        let (mut s, mut c) = (x * PI).sin_cos();
        for k in 0..n_freq {
            out.push(s);
            out.push(c);
            if k + 1 < n_freq {
                (s, c) = (2.0 * s * c, (c - s) * (c + s));
            }
        }
    }
}

/// Maps a distance to [-1,1], linear in inverse depth: z_near → −1, z_far → +1.
/// Distances outside [z_near, z_far] are clamped.
pub fn normalize_inverse_depth(d: f64, z_near: f64, z_far: f64) -> f64 {
    let d = d.max(1e-9);
    let t = (1.0 / d - 1.0 / z_near) / (1.0 / z_far - 1.0 / z_near);
    (2.0 * t - 1.0).clamp(-1.0, 1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64]) {
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() < 1e-9, "{a:?} vs {b:?}");
        }
    }

    #[test]
    fn encodes_zero() {
        let e = positional_encode(&[0.0], 7);
        close(&e, &[0.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn encodes_one() {
        let e = positional_encode(&[1.0], 7);
        close(&e, &[1.0, 0.0, -1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
    }

    #[test]
    fn encodes_half() {
        let e = positional_encode(&[0.5], 7);
        close(&e[..3], &[0.5, 1.0, 0.0]);
    }

    #[test]
    fn octaves_match_direct_evaluation() {
        for i in 0..=200 {
            let x = -1.0 + i as f64 / 100.0;
            let e = positional_encode(&[x], 7);
            for k in 0..7 {
                let (s, c) = (x * PI * 2f64.powi(k as i32)).sin_cos();
                assert!((e[1 + 2 * k] - s).abs() < 1e-12 && (e[2 + 2 * k] - c).abs() < 1e-12, "x={x} k={k}");
            }
        }
    }

    #[test]
    fn vector_width() {
        assert_eq!(positional_encode(&[0.1, -0.4], 7).len(), 30);
        assert_eq!(encoded_width(7), 15);
    }

    #[test]
    fn inverse_depth_endpoints() {
        assert!((normalize_inverse_depth(3.0, 3.0, 80.0) + 1.0).abs() < 1e-12);
        assert!((normalize_inverse_depth(80.0, 3.0, 80.0) - 1.0).abs() < 1e-12);
        assert_eq!(normalize_inverse_depth(0.5, 3.0, 80.0), -1.0);
        assert_eq!(normalize_inverse_depth(1e6, 3.0, 80.0), 1.0);
    }
}
