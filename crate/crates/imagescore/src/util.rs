//! Small shared helpers: stable hashing, seed derivation, split assignment.

/// FNV-1a 64-bit hash. Stable across platforms and compiler versions, which
/// matters because train/validation splits and derived RNG seeds must not
/// change when the toolchain does.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derive a child seed from a parent seed and a label, so per-SERP or
/// per-item RNG streams are independent of processing order.
pub fn derive_seed(parent: u64, label: &str) -> u64 {
    fnv1a64(format!("{parent}:{label}").as_bytes())
}

/// Deterministic train/validation split by SERP id hash.
///
/// `val_percent` is in 0..=100; a SERP lands in the validation split when
/// its hash bucket (0..100) falls below it.
pub fn is_validation_serp(serp_id: &str, val_percent: u8) -> bool {
    (fnv1a64(serp_id.as_bytes()) % 100) < u64::from(val_percent)
}

/// Numerically stable logistic function.
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable `ln(1 + e^x)`.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_is_stable() {
        // Reference value for the empty string and a known vector.
        assert_eq!(fnv1a64(b""), 0xcbf2_9ce4_8422_2325);
        assert_eq!(fnv1a64(b"a"), 0xaf63_dc4c_8601_ec8c);
    }

    #[test]
    fn split_is_deterministic_and_roughly_proportional() {
        let n = 10_000;
        let in_val = (0..n)
            .filter(|i| is_validation_serp(&format!("serp-{i}"), 20))
            .count();
        let frac = in_val as f64 / n as f64;
        assert!((frac - 0.20).abs() < 0.02, "val fraction {frac}");
        assert_eq!(
            is_validation_serp("serp-1", 20),
            is_validation_serp("serp-1", 20)
        );
    }

    #[test]
    fn logistic_and_softplus_agree_with_direct_formulas() {
        for x in [-30.0, -2.0, -0.5, 0.0, 0.5, 2.0, 30.0] {
            let direct = 1.0 / (1.0 + f64::exp(-x));
            assert!((logistic(x) - direct).abs() < 1e-15);
            let sp = f64::ln(1.0 + f64::exp(x.min(30.0)));
            if x < 30.0 {
                assert!((softplus(x) - sp).abs() < 1e-12, "x={x}");
            }
        }
        // Extremes stay finite and ordered.
        assert_eq!(logistic(1000.0), 1.0);
        assert_eq!(logistic(-1000.0), 0.0);
        assert_eq!(softplus(1000.0), 1000.0);
        assert_eq!(softplus(-1000.0), 0.0);
    }
}
