//! Mixed cross-entropy / KL loss over the two heads.
//!
//! Per head `λ·CCE(t, p) + (1 − λ)·KL(t‖p)`. Since `CCE = H(t) + KL`, the
//! gradient in `p` does not depend on λ.

use super::{ClassDistribution, Result, NUM_CLASSES};

/// Lower clamp applied to predictions before taking logs.
pub const PROB_CLAMP: f64 = 1e-12;

#[inline]
fn clamp(p: f64) -> f64 {
    p.max(PROB_CLAMP)
}

/// `−Σ t_i ln p_i`.
pub fn categorical_cross_entropy(t: &[f64; NUM_CLASSES], p: &[f64; NUM_CLASSES]) -> f64 {
    t.iter().zip(p).filter(|(&ti, _)| ti > 0.0).map(|(&ti, &pi)| -ti * clamp(pi).ln()).sum()
}

/// Forward KL `Σ t_i ln(t_i / p_i)` with `0·ln 0 = 0`.
pub fn kl_divergence(t: &[f64; NUM_CLASSES], p: &[f64; NUM_CLASSES]) -> f64 {
    t.iter()
        .zip(p)
        .filter(|(&ti, _)| ti > 0.0)
        .map(|(&ti, &pi)| if ti == pi { 0.0 } else { ti * (ti.ln() - clamp(pi).ln()) })
        .sum()
}

/// Shannon entropy in nats.
pub fn entropy(t: &[f64; NUM_CLASSES]) -> f64 {
    t.iter().filter(|&&ti| ti > 0.0).map(|&ti| -ti * ti.ln()).sum()
}

/// Numerically stable softmax.
pub fn softmax(z: &[f64; NUM_CLASSES]) -> [f64; NUM_CLASSES] {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = [0.0; NUM_CLASSES];
    let mut s = 0.0;
    for (o, &zi) in out.iter_mut().zip(z) {
        *o = (zi - m).exp();
        s += *o;
    }
    for o in &mut out {
        *o /= s;
    }
    out
}

/// Per-component breakdown of the loss.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTerms {
    pub cce: [f64; 2],
    pub kl: [f64; 2],
    pub total: f64,
}

/// Raw loss on unvalidated arrays; used by the trainer's inner loop.
pub(crate) fn loss_terms_raw(
    pred: [&[f64; NUM_CLASSES]; 2],
    target: [&[f64; NUM_CLASSES]; 2],
    lambda: f64,
) -> LossTerms {
    let mut cce = [0.0; 2];
    let mut kl = [0.0; 2];
    let mut total = 0.0;
    for h in 0..2 {
        cce[h] = categorical_cross_entropy(target[h], pred[h]);
        kl[h] = kl_divergence(target[h], pred[h]);
        total += lambda * cce[h] + (1.0 - lambda) * kl[h];
    }
    LossTerms { cce, kl, total }
}

/// Loss over both heads; inputs must be valid simplexes.
pub fn loss(
    pred_yaw: &ClassDistribution,
    pred_pitch: &ClassDistribution,
    target_yaw: &ClassDistribution,
    target_pitch: &ClassDistribution,
    lambda: f64,
) -> Result<LossTerms> {
    for d in [pred_yaw, pred_pitch, target_yaw, target_pitch] {
        d.validate()?;
    }
    Ok(loss_terms_raw([&pred_yaw.0, &pred_pitch.0], [&target_yaw.0, &target_pitch.0], lambda))
}

/// Gradient of one head's loss with respect to its probabilities, computed
/// as the sum of the CCE part `−λ t/p` and the KL part `−(1 − λ) t/p`.
pub fn loss_grad_probs(t: &[f64; NUM_CLASSES], p: &[f64; NUM_CLASSES], lambda: f64) -> [f64; NUM_CLASSES] {
    let mut g = [0.0; NUM_CLASSES];
    for i in 0..NUM_CLASSES {
        if p[i] > PROB_CLAMP {
            let r = t[i] / p[i];
            g[i] = lambda * -r + (1.0 - lambda) * -r;
        }
    }
    g
}

/// Gradient of one head's loss with respect to its softmax logits: `p − t`.
pub fn loss_grad_logits(t: &[f64; NUM_CLASSES], p: &[f64; NUM_CLASSES]) -> [f64; NUM_CLASSES] {
    let mut g = [0.0; NUM_CLASSES];
    for i in 0..NUM_CLASSES {
        g[i] = p[i] - t[i];
    }
    g
}

#[cfg(test)]
mod tests {
    use super::super::{smooth_label, ClassDistribution};
    use super::*;

    #[test]
    fn uniform_vs_one_hot() {
        let u = ClassDistribution::uniform();
        let t = ClassDistribution::one_hot(2).unwrap();
        let l = loss(&u, &u, &t, &t, 0.1).unwrap();
        let ln7 = 7f64.ln();
        assert!((l.cce[0] - ln7).abs() < 1e-12 && (l.kl[0] - ln7).abs() < 1e-12);
        assert!((l.total - 2.0 * ln7).abs() < 1e-12);
    }

    #[test]
    fn identical_pred_target() {
        let t = smooth_label(3).unwrap();
        let l = loss(&t, &t, &t, &t, 0.1).unwrap();
        assert_eq!(l.kl, [0.0, 0.0]);
        assert!((l.total - 0.1 * 2.0 * entropy(&t.0)).abs() < 1e-15);
    }

    #[test]
    fn rejects_non_simplex() {
        let bad = ClassDistribution([0.5; 7]);
        let u = ClassDistribution::uniform();
        assert!(loss(&bad, &u, &u, &u, 0.1).is_err());
    }

    #[test]
    fn logit_grad_matches_chain_rule() {
        let z = [0.3, -1.2, 0.5, 2.0, 0.0, -0.4, 1.1];
        let t = smooth_label(4).unwrap().0;
        let p = softmax(&z);
        let gp = loss_grad_probs(&t, &p, 0.1);
        let mut chained = [0.0; 7];
        for j in 0..7 {
            for i in 0..7 {
                let jac = if i == j { p[i] * (1.0 - p[i]) } else { -p[i] * p[j] };
                chained[j] += gp[i] * jac;
            }
        }
        let gz = loss_grad_logits(&t, &p);
        for j in 0..7 {
            assert!((chained[j] - gz[j]).abs() < 1e-12);
        }
    }
}
