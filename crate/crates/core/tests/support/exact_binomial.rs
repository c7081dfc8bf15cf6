//! Exact Binomial rows for f64 probabilities, shared by the oracle tests.

use num_bigint::BigInt;
use num_traits::{Float, One, Signed, ToPrimitive, Zero};

/// Exact Binomial(n, p) row for an f64 `p = m / 2^d`: integer numerators over
/// the common denominator `2^(d*n)`.
pub struct ExactRow {
    pub terms: Vec<BigInt>,
    pub denom_log2: i64,
}

pub fn exact_row(n: u32, p: f64) -> ExactRow {
    let (mantissa, exp, _) = p.integer_decode();
    let (m, d) = if exp >= 0 {
        // only p = 1 gets here
        (BigInt::from(mantissa) << exp as usize, 0i64)
    } else {
        (BigInt::from(mantissa), -exp as i64)
    };
    let q = (BigInt::one() << d as usize) - &m;
    let n = n as usize;
    let mut m_pow = vec![BigInt::one()];
    let mut q_pow = vec![BigInt::one()];
    for i in 0..n {
        m_pow.push(&m_pow[i] * &m);
        q_pow.push(&q_pow[i] * &q);
    }
    let mut choose = BigInt::one();
    let terms = (0..=n)
        .map(|k| {
            if k > 0 {
                choose = choose.clone() * BigInt::from(n - k + 1) / BigInt::from(k);
            }
            &choose * &m_pow[k] * &q_pow[n - k]
        })
        .collect();
    ExactRow {
        terms,
        denom_log2: d * n as i64,
    }
}

/// `num / 2^denom_log2` rounded to f64 (relative error about 2^-53).
pub fn to_f64(num: &BigInt, denom_log2: i64) -> f64 {
    if num.is_zero() {
        return 0.0;
    }
    let bits = num.bits() as i64;
    let shift = (bits - 64).max(0);
    let top = (num.abs() >> shift as usize).to_u64().unwrap() as f64;
    let mut e = shift - denom_log2;
    if e < -1200 {
        return 0.0;
    }
    let mut x = top;
    while e < -500 {
        x *= 2f64.powi(-500);
        e += 500;
    }
    while e > 500 {
        x *= 2f64.powi(500);
        e -= 500;
    }
    x * 2f64.powi(e as i32)
}

/// Exact cdf numerators: `prefix[k + 1]` is the sum of terms `0..=k`.
pub fn prefix_sums(row: &ExactRow) -> Vec<BigInt> {
    let mut prefix = vec![BigInt::zero()];
    for x in &row.terms {
        let next = prefix.last().unwrap() + x;
        prefix.push(next);
    }
    prefix
}
