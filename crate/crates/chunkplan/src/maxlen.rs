//! Max-feasible-length sweep: for a corpus family and a fixed activation
//! budget, finds the largest sequence length whose baseline profile fits,
//! and the largest whose best chunk plan fits. Pure estimation; nothing is
//! executed, so arbitrarily large shapes cost only arithmetic.

use thiserror::Error;

use crate::corpus::{build_corpus, CorpusError, CorpusFamily, CorpusParams};
use crate::memory::profile;
use crate::select::{select, CostParams, SelectError};

#[derive(Debug, Clone)]
pub struct MaxLenReport {
    pub family: CorpusFamily,
    pub budget_bytes: u64,
    pub length_cap: u64,
    pub unchunked_max_len: u64,
    pub chunked_max_len: u64,
    /// `chunked_max_len / unchunked_max_len`.
    pub ratio: f64,
}

#[derive(Debug, Error)]
pub enum MaxLenError {
    #[error("budget of {budget} bytes does not fit length {min_len} even chunked")]
    BudgetTooSmall { budget: u64, min_len: u64 },
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

const MIN_LEN: u64 = 4;

/// Binary-searches the largest length (up to `cap`) fitting `budget`,
/// with and without chunking.
pub fn max_feasible_lengths(
    family: CorpusFamily,
    base: &CorpusParams,
    budget: u64,
    cap: u64,
    params: &CostParams,
) -> Result<MaxLenReport, MaxLenError> {
    let cap = cap.max(MIN_LEN);

    let baseline_fits = |len: u64| -> Result<bool, MaxLenError> {
        let g = build_corpus(family, &CorpusParams { seq: len, ..*base })?;
        Ok(profile(&g).peak_bytes < budget)
    };
    let chunked_fits = |len: u64| -> Result<bool, MaxLenError> {
        let g = build_corpus(family, &CorpusParams { seq: len, ..*base })?;
        match select(&g, budget, params) {
            Ok(_) => Ok(true),
            Err(SelectError::BudgetUnachievable { .. }) => Ok(false),
            Err(SelectError::BadParams(m)) => panic!("invalid params in sweep: {m}"),
        }
    };

    if !chunked_fits(MIN_LEN)? {
        return Err(MaxLenError::BudgetTooSmall { budget, min_len: MIN_LEN });
    }
    let chunked_max_len = largest_fitting(MIN_LEN, cap, &chunked_fits)?;
    let unchunked_max_len = if baseline_fits(MIN_LEN)? {
        largest_fitting(MIN_LEN, cap, &baseline_fits)?
    } else {
        0
    };

    let ratio = if unchunked_max_len == 0 {
        f64::INFINITY
    } else {
        chunked_max_len as f64 / unchunked_max_len as f64
    };
    Ok(MaxLenReport {
        family,
        budget_bytes: budget,
        length_cap: cap,
        unchunked_max_len,
        chunked_max_len,
        ratio,
    })
}

/// Largest `len` in `[lo, cap]` with `fits(len)`, assuming monotonicity.
/// `fits(lo)` must hold.
fn largest_fitting(
    lo: u64,
    cap: u64,
    fits: &dyn Fn(u64) -> Result<bool, MaxLenError>,
) -> Result<u64, MaxLenError> {
    let mut good = lo;
    let mut hi = lo;
    while hi < cap {
        hi = (hi * 2).min(cap);
        if fits(hi)? {
            good = hi;
        } else {
            break;
        }
    }
    if good == hi {
        return Ok(good); // fit all the way to the cap
    }
    // Invariant: fits(good), !fits(hi).
    while hi - good > 1 {
        let mid = good + (hi - good) / 2;
        if fits(mid)? {
            good = mid;
        } else {
            hi = mid;
        }
    }
    Ok(good)
}
