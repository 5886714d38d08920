//! Equal-tailed credible intervals.

use crate::error::{Error, Result};

/// Smallest sample accepted by [`equal_tailed_interval`].
pub const MIN_DRAWS: usize = 10;

/// Sample quantile by linear interpolation between order statistics at
/// zero-based position `(M − 1) q`.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// `(lo, hi)` at the `(1 − level)/2` and `(1 + level)/2` sample quantiles.
pub fn equal_tailed_interval(draws: &[f64], level: f64) -> Result<(f64, f64)> {
    if draws.len() < MIN_DRAWS {
        return Err(Error::Argument(format!("need at least {MIN_DRAWS} draws for an interval, got {}", draws.len())));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Argument(format!("credible level must lie in (0, 1), got {level}")));
    }
    if draws.iter().any(|v| !v.is_finite()) {
        return Err(Error::Argument("draws must be finite".into()));
    }
    let mut sorted = draws.to_vec();
    sorted.sort_by(f64::total_cmp);
    let alpha = 0.5 * (1.0 - level);
    Ok((quantile_sorted(&sorted, alpha), quantile_sorted(&sorted, 1.0 - alpha)))
}
