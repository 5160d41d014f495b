//! Finite-sample conformal quantiles.
//!
//! Every calibration in this crate reduces to one primitive: the
//! `⌈(1−α)(n+1)⌉`-th smallest of `n` scores. When that rank exceeds `n`
//! the adjustment is unbounded and the result is reported as `+∞` with a
//! degenerate flag instead of an error.

use serde::{Deserialize, Serialize};

use crate::error::{probability, Error, Result};

/// Ranks and floors are computed from products like `0.85 * 20` which land a
/// few ulps off the integer they represent. Values this close to an integer
/// are snapped before rounding.
const SNAP: f64 = 1e-9;

pub(crate) fn snapped_ceil(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() <= SNAP * r.abs().max(1.0) {
        r
    } else {
        x.ceil()
    }
}

pub(crate) fn snapped_floor(x: f64) -> f64 {
    let r = x.round();
    if (x - r).abs() <= SNAP * r.abs().max(1.0) {
        r
    } else {
        x.floor()
    }
}

/// Rank `k = ⌈(1−α)(n+1)⌉` of the conformal order statistic. May exceed `n`.
pub fn conformal_rank(n: usize, alpha: f64) -> usize {
    snapped_ceil((1.0 - alpha) * (n as f64 + 1.0)).max(1.0) as usize
}

/// Result of [`conformal_quantile`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConformalQuantile {
    /// The k-th smallest score, or `+∞` when `k > n`.
    pub value: f64,
    /// 1-based rank that was requested.
    pub rank: usize,
    /// Set when `k > n`.
    pub degenerate: bool,
}

/// The `⌈(1−α)(n+1)⌉`-th smallest score.
pub fn conformal_quantile(scores: &[f64], alpha: f64) -> Result<ConformalQuantile> {
    probability("alpha", alpha)?;
    if scores.is_empty() {
        return Err(Error::Empty("score list"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::NonFinite { context: "scores" });
    }
    let rank = conformal_rank(scores.len(), alpha);
    if rank > scores.len() {
        return Ok(ConformalQuantile { value: f64::INFINITY, rank, degenerate: true });
    }
    let mut buf = scores.to_vec();
    Ok(ConformalQuantile { value: select_kth(&mut buf, rank), rank, degenerate: false })
}

/// `⌊α(n+1)⌋ / (n+1)`, the miscoverage actually delivered by the order
/// statistic at sample size `n`.
pub fn effective_alpha(n: usize, alpha: f64) -> Result<f64> {
    probability("alpha", alpha)?;
    if n == 0 {
        return Err(Error::Empty("calibration set"));
    }
    let m = n as f64 + 1.0;
    Ok(snapped_floor(alpha * m) / m)
}

/// Plain empirical quantile of a sample: the `⌈p·m⌉`-th smallest, rank
/// clamped to `[1, m]`. No finite-sample inflation.
pub fn empirical_quantile(values: &[f64], p: f64) -> Result<f64> {
    probability("quantile level", p)?;
    if values.is_empty() {
        return Err(Error::Empty("sample list"));
    }
    let mut buf = values.to_vec();
    Ok(select_kth(&mut buf, plain_rank(values.len(), p)))
}

pub(crate) fn plain_rank(m: usize, p: f64) -> usize {
    (snapped_ceil(p * m as f64) as usize).clamp(1, m)
}

/// k-th smallest (1-based) in place. Callers guarantee `1 <= k <= len` and no NaN.
pub(crate) fn select_kth(values: &mut [f64], k: usize) -> f64 {
    let (_, kth, _) = values.select_nth_unstable_by(k - 1, f64::total_cmp);
    *kth
}

/// Order statistic at `rank`, `+∞` past the end. Shared by hot loops that
/// have already validated their inputs.
pub(crate) fn rank_or_infinity(values: &mut [f64], rank: usize) -> f64 {
    if rank > values.len() {
        f64::INFINITY
    } else {
        select_kth(values, rank)
    }
}

/// Fraction of entries that equal some other entry.
pub fn duplicate_fraction(scores: &[f64]) -> f64 {
    if scores.len() < 2 {
        return 0.0;
    }
    let mut sorted = scores.to_vec();
    sorted.sort_unstable_by(f64::total_cmp);
    let mut dup = 0usize;
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        if j - i > 1 {
            dup += j - i;
        }
        i = j;
    }
    dup as f64 / scores.len() as f64
}

/// Target miscoverage for one calibration mode.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum MiscoverageSpec {
    Symmetric { alpha: f64 },
    Asymmetric { alpha_lo: f64, alpha_hi: f64 },
}

impl MiscoverageSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            MiscoverageSpec::Symmetric { alpha } => probability("alpha", alpha).map(|_| ()),
            MiscoverageSpec::Asymmetric { alpha_lo, alpha_hi } => {
                probability("alpha_lo", alpha_lo)?;
                probability("alpha_hi", alpha_hi)?;
                if alpha_lo + alpha_hi >= 1.0 {
                    return Err(Error::InvalidParameter(format!(
                        "alpha_lo + alpha_hi must be < 1, got {}",
                        alpha_lo + alpha_hi
                    )));
                }
                Ok(())
            }
        }
    }

    /// Finite-sample adjusted rates at calibration size `n`: one entry for
    /// symmetric, `(lo, hi)` for asymmetric.
    pub fn effective(&self, n: usize) -> Result<Vec<f64>> {
        self.validate()?;
        match *self {
            MiscoverageSpec::Symmetric { alpha } => Ok(vec![effective_alpha(n, alpha)?]),
            MiscoverageSpec::Asymmetric { alpha_lo, alpha_hi } => {
                Ok(vec![effective_alpha(n, alpha_lo)?, effective_alpha(n, alpha_hi)?])
            }
        }
    }
}
