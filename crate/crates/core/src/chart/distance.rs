//! Distances between attention distributions. Both are bounded in `[0, 1]`.

use super::ChartError;

/// Square root of the base-2 Jensen-Shannon divergence.
///
/// Entries that are zero (or tiny negatives from rounding) contribute
/// nothing, following `0 log 0 = 0`.
pub fn jsd(p: &[f64], q: &[f64]) -> Result<f64, ChartError> {
    check_lengths(p, q)?;
    Ok(jsd_unchecked(p, q))
}

/// `sqrt(1 - sum_x sqrt(p_x q_x))`, evaluated as `sqrt(0.5 sum (sqrt p - sqrt q)^2)`
/// so that identical inputs give exactly zero.
pub fn hellinger(p: &[f64], q: &[f64]) -> Result<f64, ChartError> {
    check_lengths(p, q)?;
    Ok(hellinger_unchecked(p, q))
}

pub(crate) fn jsd_unchecked(p: &[f64], q: &[f64]) -> f64 {
    // a log(2a / (a + b)) written as a ln_1p((a - b) / (a + b)) so that
    // nearly equal inputs cancel to second order instead of to roundoff
    let mut div = 0.0;
    for (&a, &b) in p.iter().zip(q) {
        let a = a.max(0.0);
        let b = b.max(0.0);
        let s = a + b;
        if s == 0.0 {
            continue;
        }
        let r = (a - b) / s;
        if a > 0.0 {
            div += a * r.ln_1p();
        }
        if b > 0.0 {
            div += b * (-r).ln_1p();
        }
    }
    (0.5 * div / std::f64::consts::LN_2).clamp(0.0, 1.0).sqrt()
}

pub(crate) fn hellinger_unchecked(p: &[f64], q: &[f64]) -> f64 {
    let sq: f64 = p
        .iter()
        .zip(q)
        .map(|(&a, &b)| {
            let d = a.max(0.0).sqrt() - b.max(0.0).sqrt();
            d * d
        })
        .sum();
    (0.5 * sq).clamp(0.0, 1.0).sqrt()
}

fn check_lengths(p: &[f64], q: &[f64]) -> Result<(), ChartError> {
    if p.len() != q.len() {
        return Err(ChartError::LengthMismatch(p.len(), q.len()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    // Closed forms evaluated independently of the implementation.
    fn jsd_closed_half_vs_onehot() -> f64 {
        // p = [1/2, 1/2], q = [1, 0], m = [3/4, 1/4]
        let kl_p = 0.5 * (0.5f64 / 0.75).log2() + 0.5 * (0.5f64 / 0.25).log2();
        let kl_q = (1.0f64 / 0.75).log2();
        (0.5 * (kl_p + kl_q)).sqrt()
    }

    #[test]
    fn jsd_examples() {
        let p = [0.2, 0.3, 0.5];
        assert_eq!(jsd(&p, &p).unwrap(), 0.0);
        assert!((jsd(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - 1.0).abs() < 1e-15);
        let v = jsd(&[0.5, 0.5], &[1.0, 0.0]).unwrap();
        assert!((v - jsd_closed_half_vs_onehot()).abs() < 1e-12);
        assert!((v - 0.5579).abs() < 5e-5);
    }

    #[test]
    fn hellinger_examples() {
        let p = [0.2, 0.3, 0.5];
        assert_eq!(hellinger(&p, &p).unwrap(), 0.0);
        assert!((hellinger(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - 1.0).abs() < 1e-15);
        let v = hellinger(&[0.5, 0.5], &[1.0, 0.0]).unwrap();
        let closed = (1.0 - 0.5f64.sqrt()).sqrt();
        assert!((v - closed).abs() < 1e-12);
        assert!((v - 0.5412).abs() < 5e-5);
    }

    #[test]
    fn length_mismatch() {
        assert!(matches!(jsd(&[1.0], &[0.5, 0.5]), Err(ChartError::LengthMismatch(1, 2))));
        assert!(hellinger(&[1.0], &[0.5, 0.5]).is_err());
    }
}
