use crate::error::{Error, Result};
use crate::types::NextTokenDistribution;

/// Floor applied to `log p_uncond`, i.e. `ln(1e-12)`.
pub const CAD_LOG_FLOOR: f64 = -27.631021115928547;

/// Context-aware decoding: `softmax((1 + alpha) log p_cond - alpha log p_uncond)`.
///
/// Unconditional log-probabilities are floored at [`CAD_LOG_FLOOR`] so zero
/// entries stay finite. A token with zero conditional probability keeps
/// probability zero, which makes `alpha = 0` an exact identity.
pub fn apply_cad(
    cond: &NextTokenDistribution,
    uncond: &NextTokenDistribution,
    alpha: f64,
) -> Result<NextTokenDistribution> {
    if cond.len() != uncond.len() {
        return Err(Error::contract("conditional and unconditional sizes differ"));
    }
    if !(alpha >= 0.0 && alpha.is_finite()) {
        return Err(Error::contract(format!("CAD alpha {alpha} must be >= 0")));
    }
    let scores: Vec<f64> = cond
        .probs()
        .iter()
        .zip(uncond.probs())
        .map(|(&c, &u)| {
            if c > 0.0 {
                (1.0 + alpha) * c.ln() - alpha * u.ln().max(CAD_LOG_FLOOR)
            } else {
                f64::NEG_INFINITY
            }
        })
        .collect();
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let weights: Vec<f64> = scores.iter().map(|&s| (s - max).exp()).collect();
    NextTokenDistribution::normalized(weights, cond.kind())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::DistributionKind;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn d(p: Vec<f64>) -> NextTokenDistribution {
        NextTokenDistribution::new(p, DistributionKind::Conditional).unwrap()
    }

    #[test]
    fn floor_constant() {
        assert_eq!(CAD_LOG_FLOOR, (1e-12f64).ln());
    }

    #[test]
    fn alpha_zero_is_identity() {
        let c = d(vec![0.6, 0.4, 0.0]);
        let u = d(vec![0.1, 0.0, 0.9]);
        let out = apply_cad(&c, &u, 0.0).unwrap();
        for (a, b) in out.probs().iter().zip(c.probs()) {
            assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn worked_example() {
        // Independent arithmetic: 0.6^1.5 / 0.9^0.5 and 0.4^1.5 / 0.1^0.5.
        let a = 0.6f64.powf(1.5) / 0.9f64.sqrt();
        let b = 0.4f64.powf(1.5) / 0.1f64.sqrt();
        assert_relative_eq!(a, 0.48990, epsilon = 1e-5);
        assert_relative_eq!(b, 0.8, epsilon = 1e-12);
        let out = apply_cad(&d(vec![0.6, 0.4]), &d(vec![0.9, 0.1]), 0.5).unwrap();
        assert_relative_eq!(out.prob(0), a / (a + b), epsilon = 1e-12);
        // Exact value is 0.379796; the quoted 0.37978 holds to four places.
        assert_relative_eq!(out.prob(0), 0.37978, epsilon = 1e-4);
        assert_relative_eq!(out.prob(1), 0.62022, epsilon = 1e-4);
    }

    #[test]
    fn zero_unconditional_is_floored() {
        let out = apply_cad(&d(vec![0.5, 0.5]), &d(vec![1.0, 0.0]), 1.0).unwrap();
        assert!(out.prob(1) > 0.999);
        assert!(out.probs().iter().all(|p| p.is_finite()));
    }

    proptest! {
        #[test]
        fn equal_inputs_cancel(w in prop::collection::vec(0.0f64..1.0, 2..10), alpha in 0.0f64..5.0) {
            prop_assume!(w.iter().sum::<f64>() > 1e-3);
            let c = NextTokenDistribution::normalized(w, DistributionKind::Conditional).unwrap();
            let out = apply_cad(&c, &c, alpha).unwrap();
            for (a, b) in out.probs().iter().zip(c.probs()) {
                prop_assert!((a - b).abs() <= 1e-9);
            }
            prop_assert_eq!(out.argmax(), c.argmax());
        }
    }
}
