use crate::{Error, Result};

/// Cross-entropy of `softmax(logits)` against a one-hot target.
///
/// Returns the loss together with its gradient w.r.t. the logits,
/// `softmax(logits) - onehot(target)`, whose entries sum to zero.
pub fn softmax_cross_entropy(logits: &[f64], target_class: usize) -> Result<(f64, Vec<f64>)> {
    if logits.is_empty() {
        return Err(Error::Shape("softmax_cross_entropy on empty logits".into()));
    }
    if target_class >= logits.len() {
        return Err(Error::Shape(format!(
            "target class {target_class} out of range for {} logits",
            logits.len()
        )));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::Parameter("logits must be finite".into()));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|&z| (z - max).exp()).collect();
    let denom: f64 = exp.iter().sum();
    let log_denom = denom.ln();
    let loss = log_denom - (logits[target_class] - max);
    let mut grad: Vec<f64> = exp.iter().map(|e| e / denom).collect();
    grad[target_class] -= 1.0;
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uniform_logits() {
        let (loss, grad) = softmax_cross_entropy(&[0.0; 4], 0).unwrap();
        assert!((loss - 4.0f64.ln()).abs() < 1e-12);
        assert!((grad[0] - (-0.75)).abs() < 1e-12);
        assert!(grad.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn saturated_correct_class() {
        let (loss, _) = softmax_cross_entropy(&[100.0, 0.0], 0).unwrap();
        assert!(loss < 1e-12);
    }

    #[test]
    fn two_class_closed_form() {
        // loss = ln(1 + e^{-1}) for logits (1, 2) and target 1
        let (loss, _) = softmax_cross_entropy(&[1.0, 2.0], 1).unwrap();
        assert!((loss - (1.0 + (-1.0f64).exp()).ln()).abs() < 1e-12);
        assert!((loss - 0.3132616875182228).abs() < 1e-12);
    }

    #[test]
    fn empty_logits_is_shape_error() {
        assert!(matches!(
            softmax_cross_entropy(&[], 0),
            Err(crate::Error::Shape(_))
        ));
    }

    proptest! {
        // Analytic gradient matches central finite differences.
        #[test]
        fn gradient_matches_finite_differences(
            logits in proptest::collection::vec(-3.0f64..3.0, 2..6),
            target_frac in 0.0f64..1.0,
        ) {
            let target = ((logits.len() as f64 * target_frac) as usize).min(logits.len() - 1);
            let (_, grad) = softmax_cross_entropy(&logits, target).unwrap();
            let h = 1e-6;
            for k in 0..logits.len() {
                let mut up = logits.clone();
                up[k] += h;
                let mut down = logits.clone();
                down[k] -= h;
                let (lu, _) = softmax_cross_entropy(&up, target).unwrap();
                let (ld, _) = softmax_cross_entropy(&down, target).unwrap();
                let fd = (lu - ld) / (2.0 * h);
                prop_assert!((fd - grad[k]).abs() < 1e-6);
            }
        }

        #[test]
        fn gradient_sums_to_zero(
            logits in proptest::collection::vec(-5.0f64..5.0, 2..8),
        ) {
            let (_, grad) = softmax_cross_entropy(&logits, 0).unwrap();
            prop_assert!(grad.iter().sum::<f64>().abs() < 1e-12);
        }
    }
}
