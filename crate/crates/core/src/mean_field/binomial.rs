//! Binomial pmf/cdf for the trial counts used by the flip probabilities.
//!
//! Terms are evaluated in log space from an incrementally built log binomial
//! coefficient, which keeps the relative error around 1e-13 for n up to a few
//! hundred and lets deep-tail terms underflow gracefully to zero.

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum BinomError {
    #[error("k={k} outside 0..={n}")]
    KOutOfRange { k: i64, n: u32 },
    #[error("probability {0} outside [0, 1]")]
    BadProbability(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BinomialTerms {
    pub pmf: f64,
    pub cdf: f64,
}

/// All pmf values of Binomial(n, p) with prefix sums.
#[derive(Debug, Clone)]
pub struct BinomialTable {
    pmf: Vec<f64>,
    cdf: Vec<f64>,
}

impl BinomialTable {
    pub fn new(n: u32, p: f64) -> Result<Self, BinomError> {
        if !(0.0..=1.0).contains(&p) {
            return Err(BinomError::BadProbability(p));
        }
        let len = n as usize + 1;
        let mut pmf = vec![0.0; len];
        if p == 0.0 {
            pmf[0] = 1.0;
        } else if p == 1.0 {
            pmf[n as usize] = 1.0;
        } else {
            let ln_p = p.ln();
            let ln_q = (-p).ln_1p();
            let mut ln_choose = 0.0;
            for (k, slot) in pmf.iter_mut().enumerate() {
                if k > 0 {
                    ln_choose += ((n as usize - k + 1) as f64 / k as f64).ln();
                }
                let kf = k as f64;
                *slot = (ln_choose + kf * ln_p + (n as f64 - kf) * ln_q).exp();
            }
        }
        let mut acc = 0.0;
        let cdf = pmf
            .iter()
            .map(|&x| {
                acc += x;
                acc.min(1.0)
            })
            .collect();
        Ok(BinomialTable { pmf, cdf })
    }

    pub fn trials(&self) -> u32 {
        (self.pmf.len() - 1) as u32
    }

    /// Probability of exactly `k` successes; zero outside `0..=n`.
    pub fn pmf(&self, k: i64) -> f64 {
        if k < 0 {
            return 0.0;
        }
        self.pmf.get(k as usize).copied().unwrap_or(0.0)
    }

    /// Probability of at most `k` successes; 0 below zero, 1 beyond n.
    pub fn cdf(&self, k: i64) -> f64 {
        if k < 0 {
            0.0
        } else {
            self.cdf[(k as usize).min(self.cdf.len() - 1)]
        }
    }
}

/// `d(k; n, p)` and `F(k; n, p)`.
pub fn binom(k: i64, n: u32, p: f64) -> Result<BinomialTerms, BinomError> {
    if k < 0 || k > n as i64 {
        return Err(BinomError::KOutOfRange { k, n });
    }
    let table = BinomialTable::new(n, p)?;
    Ok(BinomialTerms {
        pmf: table.pmf(k),
        cdf: table.cdf(k),
    })
}
