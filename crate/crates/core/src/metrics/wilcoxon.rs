//! Two-sided Wilcoxon signed-rank test.
//!
//! Zero differences are dropped and tied magnitudes share the average rank.
//! Up to [`EXACT_LIMIT`] pairs the null distribution of the positive rank sum
//! is enumerated exactly over all `2^n` sign assignments (by counting rank
//! sums, which visits the same assignments without listing them). Beyond
//! that a normal approximation with continuity and tie corrections is used.

use statrs::function::erf::erfc;

use crate::{Error, Result};

pub const EXACT_LIMIT: usize = 25;
pub const MIN_PAIRS: usize = 6;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WilcoxonMethod {
    Exact,
    Normal,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WilcoxonResult {
    /// Sum of ranks of the positive differences `x - y`.
    pub statistic: f64,
    pub p_value: f64,
    /// Pairs left after dropping zero differences.
    pub n: usize,
    pub method: WilcoxonMethod,
}

/// Ranked non-zero differences of a paired sample.
#[derive(Clone, Debug, PartialEq)]
pub struct SignedRanks {
    /// Average ranks doubled, so ties stay integral.
    doubled: Vec<u64>,
    positive: Vec<bool>,
    tie_sizes: Vec<usize>,
}

impl SignedRanks {
    pub fn new(x: &[f64], y: &[f64]) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::shape(format!("paired samples of length {} and {}", x.len(), y.len())));
        }
        let mut diffs: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).filter(|d| *d != 0.0).collect();
        diffs.sort_by(|a, b| a.abs().total_cmp(&b.abs()));
        let n = diffs.len();
        let mut doubled = vec![0; n];
        let mut tie_sizes = Vec::new();
        let mut i = 0;
        while i < n {
            let mut j = i;
            while j + 1 < n && diffs[j + 1].abs() == diffs[i].abs() {
                j += 1;
            }
            // ranks i+1..=j+1 share (i+1 + j+1)/2
            let r2 = (i + 1 + j + 1) as u64;
            doubled[i..=j].iter_mut().for_each(|r| *r = r2);
            tie_sizes.push(j - i + 1);
            i = j + 1;
        }
        Ok(Self {
            doubled,
            positive: diffs.iter().map(|d| *d > 0.0).collect(),
            tie_sizes,
        })
    }

    pub fn len(&self) -> usize {
        self.doubled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.doubled.is_empty()
    }

    pub fn ranks(&self) -> Vec<f64> {
        self.doubled.iter().map(|&r| r as f64 / 2.0).collect()
    }

    fn w_plus_doubled(&self) -> u64 {
        self.doubled.iter().zip(&self.positive).filter(|(_, &p)| p).map(|(&r, _)| r).sum()
    }

    pub fn w_plus(&self) -> f64 {
        self.w_plus_doubled() as f64 / 2.0
    }

    /// Exact two-sided p-value from the full sign-assignment distribution.
    pub fn exact_p(&self) -> f64 {
        let total: u64 = self.doubled.iter().sum();
        let mut counts = vec![0f64; total as usize + 1];
        counts[0] = 1.0;
        let mut reach = 0usize;
        for &r in &self.doubled {
            let r = r as usize;
            for s in (0..=reach).rev() {
                if counts[s] != 0.0 {
                    counts[s + r] += counts[s];
                }
            }
            reach += r;
        }
        let all = 2f64.powi(self.len() as i32);
        let w = self.w_plus_doubled() as usize;
        let lower: f64 = counts[..=w].iter().sum::<f64>() / all;
        let upper: f64 = counts[w..].iter().sum::<f64>() / all;
        (2.0 * lower.min(upper)).min(1.0)
    }

    /// Normal approximation with continuity and tie-variance corrections.
    pub fn normal_p(&self) -> f64 {
        let n = self.len() as f64;
        let mean = n * (n + 1.0) / 4.0;
        let ties: f64 = self.tie_sizes.iter().map(|&t| (t * t * t - t) as f64).sum();
        let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - ties / 48.0;
        if var <= 0.0 {
            return 1.0;
        }
        let z = ((self.w_plus() - mean).abs() - 0.5).max(0.0) / var.sqrt();
        erfc(z / std::f64::consts::SQRT_2).min(1.0)
    }
}

pub fn wilcoxon_signed_rank(x: &[f64], y: &[f64]) -> Result<WilcoxonResult> {
    let ranks = SignedRanks::new(x, y)?;
    let n = ranks.len();
    if n < MIN_PAIRS {
        return Err(Error::TooFewSamples(n));
    }
    let (p_value, method) = if n <= EXACT_LIMIT {
        (ranks.exact_p(), WilcoxonMethod::Exact)
    } else {
        (ranks.normal_p(), WilcoxonMethod::Normal)
    };
    Ok(WilcoxonResult {
        statistic: ranks.w_plus(),
        p_value,
        n,
        method,
    })
}
