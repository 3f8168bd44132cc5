use super::TrainingError;

/// Probabilities are clamped to `[BCE_EPS, 1 - BCE_EPS]` before taking logs.
pub const BCE_EPS: f64 = 1e-7;

/// Masked mean negative log-likelihood: `-(sum m_i * lp_i) / sum m_i`.
pub fn eval_e2e_loss(logprobs: &[f64], mask: &[u8]) -> Result<f64, TrainingError> {
    if logprobs.len() != mask.len() {
        return Err(TrainingError::LengthMismatch { logprobs: logprobs.len(), mask: mask.len() });
    }
    let (sum, count) = logprobs
        .iter()
        .zip(mask)
        .filter(|(_, &m)| m != 0)
        .fold((0.0, 0usize), |(s, n), (lp, _)| (s + lp, n + 1));
    if count == 0 {
        return Err(TrainingError::EmptyMask);
    }
    Ok(-sum / count as f64)
}

/// Binary cross-entropy of one prediction.
pub fn eval_bce(p: f64, y: u8) -> f64 {
    let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
    if y == 0 {
        -(1.0 - p).ln()
    } else {
        -p.ln()
    }
}

/// Summed BCE over a dataset of (probability, label) pairs.
pub fn eval_bce_total(preds: &[(f64, u8)]) -> f64 {
    preds.iter().map(|&(p, y)| eval_bce(p, y)).sum()
}

/// Generator objective: summed negative log-likelihood over the response
/// tokens of every pair.
pub fn eval_generator_loss(response_logprobs: &[Vec<f64>]) -> f64 {
    -response_logprobs.iter().flatten().sum::<f64>()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::LN_2;

    #[test]
    fn e2e_loss_examples() {
        let l = eval_e2e_loss(&[-9.0, -LN_2, -LN_2], &[0, 1, 1]).unwrap();
        assert!((l - LN_2).abs() < 1e-15);
        assert_eq!(eval_e2e_loss(&[0.0, 0.0], &[1, 1]).unwrap(), 0.0);
        assert_eq!(eval_e2e_loss(&[-1.0], &[0]), Err(TrainingError::EmptyMask));
        assert!(matches!(eval_e2e_loss(&[-1.0], &[1, 0]), Err(TrainingError::LengthMismatch { .. })));
    }

    #[test]
    fn bce_examples() {
        assert!((eval_bce(0.5, 1) - LN_2).abs() < 1e-15);
        assert!((eval_bce(0.9, 0) - 2.302_585_092_994_045_5).abs() < 1e-12);
        assert!(eval_bce(1.0, 1) < 2e-7);
        assert!(eval_bce(0.0, 0) < 2e-7);
        assert!(eval_bce(0.0, 1).is_finite());
    }

    #[test]
    fn bce_is_non_negative() {
        for i in 0..=100 {
            let p = f64::from(i) / 100.0;
            assert!(eval_bce(p, 0) >= 0.0 && eval_bce(p, 1) >= 0.0);
        }
    }

    #[test]
    fn generator_loss_sums() {
        assert!((eval_generator_loss(&[vec![-1.0, -0.5], vec![-0.25]]) - 1.75).abs() < 1e-15);
        assert_eq!(eval_generator_loss(&[]), 0.0);
    }
}
