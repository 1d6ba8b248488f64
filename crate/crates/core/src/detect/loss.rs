//! Per-element training losses of the detection head.

const PROB_CLAMP: f64 = 1e-7;

/// `-alpha_t (1 - p_t)^gamma ln(p_t)`, with `p_t = p` and `alpha_t = alpha`
/// for positives, `1 - p` and `1 - alpha` otherwise. `p` is clamped to
/// `[1e-7, 1 - 1e-7]`.
pub fn focal_loss(p: f64, target: bool, alpha: f64, gamma: f64) -> f64 {
    let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    let (pt, at) = if target { (p, alpha) } else { (1.0 - p, 1.0 - alpha) };
    -at * (1.0 - pt).powf(gamma) * pt.ln()
}

pub const FOCAL_ALPHA: f64 = 0.25;
pub const FOCAL_GAMMA: f64 = 2.0;
pub const SMOOTH_L1_BETA: f64 = 1.0 / 9.0;

/// Quadratic below `beta`, linear above.
pub fn smooth_l1(diff: f64, beta: f64) -> f64 {
    let d = diff.abs();
    if d < beta {
        0.5 * d * d / beta
    } else {
        d - 0.5 * beta
    }
}

/// Negative log-softmax of the target direction bin.
pub fn direction_ce(logits: [f64; 2], target: usize) -> f64 {
    let m = logits[0].max(logits[1]);
    let lse = m + ((logits[0] - m).exp() + (logits[1] - m).exp()).ln();
    lse - logits[target]
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    #[test]
    fn focal_cases() {
        assert!((focal_loss(0.5, true, 1.0, 0.0) - LN_2).abs() < 1e-12);
        assert!((focal_loss(0.5, false, 0.0, 0.0) - LN_2).abs() < 1e-12);
        assert!(focal_loss(1.0 - 1e-12, true, 0.25, 2.0) < 1e-15);
        let want = 0.25 * 0.01 * -(0.9f64.ln());
        assert!((focal_loss(0.9, true, FOCAL_ALPHA, FOCAL_GAMMA) - want).abs() < 1e-15);
        assert!((want - 2.634e-4).abs() < 1e-7);
        assert!(focal_loss(0.0, true, 0.25, 2.0).is_finite());
    }

    #[test]
    fn smooth_l1_cases() {
        let b = SMOOTH_L1_BETA;
        assert_eq!(smooth_l1(0.0, b), 0.0);
        assert!((smooth_l1(b, b) - 0.5 * b).abs() < 1e-15);
        assert!((smooth_l1(2.0 * b, b) - 1.5 * b).abs() < 1e-15);
        assert_eq!(smooth_l1(-2.0, b), smooth_l1(2.0, b));
    }

    #[test]
    fn smooth_l1_continuous_and_differentiable_at_beta() {
        let b = 0.3;
        let eps = 1e-7;
        assert!((smooth_l1(b - 1e-12, b) - smooth_l1(b + 1e-12, b)).abs() < 1e-9);
        let left = (smooth_l1(b, b) - smooth_l1(b - eps, b)) / eps;
        let right = (smooth_l1(b + eps, b) - smooth_l1(b, b)) / eps;
        assert!((left - 1.0).abs() < 1e-5 && (right - 1.0).abs() < 1e-5);
    }

    #[test]
    fn direction_cases() {
        assert!((direction_ce([0.0, 0.0], 1) - LN_2).abs() < 1e-15);
        let v = direction_ce([10.0, -10.0], 0);
        assert!((v - 2.06e-9).abs() < 1e-11);
        assert!(direction_ce([10.0, -10.0], 1) > 19.0);
        assert!(direction_ce([3.0, 1.0], 0) >= 0.0);
    }
}
