//! Topic-usage regularizer `r = γ Σ_k ln Σ_dn exp g_k(x_dn)`.
//!
//! Without it, putting every item into the same topic is a high-probability
//! configuration. Training uses the Jensen lower bound with responsibilities
//! `r_dnk`, and in the stochastic setting replaces the per-topic denominator
//! by a running average over batches.

use crate::error::{Error, Result};
use crate::math::log_sum_exp_unchecked;
use crate::scalar::Scalar;

fn check_g<T: Scalar>(g_all: &[Vec<T>]) -> Result<usize> {
    let k = g_all
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::contract("regularizer needs at least one item"))?;
    if k == 0 || g_all.iter().any(|g| g.len() != k) {
        return Err(Error::contract(
            "log-probability vectors must share a positive length",
        ));
    }
    if g_all.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::domain("log-probabilities must be finite"));
    }
    Ok(k)
}

fn topic_column<T: Scalar>(g_all: &[Vec<T>], k: usize) -> Vec<T> {
    g_all.iter().map(|g| g[k]).collect()
}

/// γ Σ_k ln Σ_dn exp g_k(x_dn).
pub fn regularizer_value<T: Scalar>(g_all: &[Vec<T>], gamma: T) -> Result<T> {
    let k = check_g(g_all)?;
    let total: T = (0..k)
        .map(|t| log_sum_exp_unchecked(&topic_column(g_all, t)))
        .sum();
    Ok(gamma * total)
}

/// r_dnk = exp g_k(x_dn) / Σ_dn exp g_k(x_dn); indexed `[item][topic]`.
pub fn responsibilities<T: Scalar>(g_all: &[Vec<T>]) -> Result<Vec<Vec<T>>> {
    let k = check_g(g_all)?;
    let lse: Vec<T> = (0..k)
        .map(|t| log_sum_exp_unchecked(&topic_column(g_all, t)))
        .collect();
    Ok(g_all
        .iter()
        .map(|g| g.iter().zip(&lse).map(|(v, l)| (*v - *l).exp()).collect())
        .collect())
}

/// γ Σ_k Σ_dn r_dnk ln(exp g_k(x_dn) / r_dnk), a lower bound on
/// [`regularizer_value`] for any column-normalized `r`. Zero entries of `r`
/// contribute nothing.
pub fn bound_value<T: Scalar>(g_all: &[Vec<T>], r: &[Vec<T>], gamma: T) -> Result<T> {
    let k = check_g(g_all)?;
    if r.len() != g_all.len() || r.iter().any(|row| row.len() != k) {
        return Err(Error::contract(
            "responsibilities must match the log-probabilities",
        ));
    }
    let mut total = T::zero();
    for (g, rr) in g_all.iter().zip(r) {
        for (gv, rv) in g.iter().zip(rr) {
            if *rv < T::zero() || !rv.is_finite() {
                return Err(Error::domain("responsibilities must be finite and non-negative"));
            }
            if *rv > T::zero() {
                total += *rv * (*gv - rv.ln());
            }
        }
    }
    Ok(gamma * total)
}

/// Running per-topic average of `exp g_k` over items.
#[derive(Debug, Clone, PartialEq)]
pub struct RegularizerState<T> {
    ema: Option<Vec<T>>,
    items_seen: u64,
    rho: T,
}

impl<T: Scalar> RegularizerState<T> {
    pub fn new(rho: T) -> Result<Self> {
        if !(rho >= T::zero() && rho < T::one()) {
            return Err(Error::contract("rho must lie in [0, 1)"));
        }
        Ok(RegularizerState {
            ema: None,
            items_seen: 0,
            rho,
        })
    }

    /// Rebuilds a state from persisted parts.
    pub fn from_parts(ema: Option<Vec<T>>, items_seen: u64, rho: T) -> Result<Self> {
        let mut state = Self::new(rho)?;
        if let Some(e) = &ema {
            if e.is_empty() || e.iter().any(|v| !(v.is_finite() && *v > T::zero())) {
                return Err(Error::contract("running averages must be positive"));
            }
        }
        state.ema = ema;
        state.items_seen = items_seen;
        Ok(state)
    }

    /// Per-topic running mean of exp g_k, if any batch has been seen.
    pub fn ema(&self) -> Option<&[T]> {
        self.ema.as_deref()
    }

    pub fn items_seen(&self) -> u64 {
        self.items_seen
    }

    pub fn rho(&self) -> T {
        self.rho
    }
}

/// Folds a batch into the running averages and returns r̂ for the batch:
///
/// ```text
/// ema_k ← ρ ema_k + (1 − ρ) mean_batch(exp g_k)     (first batch: ema_k ← mean)
/// r̂_dnk = exp g_k(x_dn) / (total_items · ema_k)
/// ```
pub fn update_running_estimate<T: Scalar>(
    state: &mut RegularizerState<T>,
    g_batch: &[Vec<T>],
    total_items: usize,
) -> Result<Vec<Vec<T>>> {
    let k = check_g(g_batch)?;
    if total_items < g_batch.len() {
        return Err(Error::contract("total_items must be at least the batch size"));
    }
    let ln_batch = T::from_usize_lossy(g_batch.len()).ln();
    let batch_mean: Vec<T> = (0..k)
        .map(|t| (log_sum_exp_unchecked(&topic_column(g_batch, t)) - ln_batch).exp())
        .collect();
    let ema = match state.ema.take() {
        Some(prev) if prev.len() == k => prev
            .iter()
            .zip(&batch_mean)
            .map(|(e, m)| state.rho * *e + (T::one() - state.rho) * *m)
            .collect(),
        Some(_) => return Err(Error::contract("topic count changed between batches")),
        None => batch_mean,
    };
    let ema: Vec<T> = ema.into_iter().map(|e| e.max(T::min_positive_value())).collect();
    let ln_total = T::from_usize_lossy(total_items).ln();
    let ln_denom: Vec<T> = ema.iter().map(|e| ln_total + e.ln()).collect();
    let r_hat = g_batch
        .iter()
        .map(|g| g.iter().zip(&ln_denom).map(|(v, d)| (*v - *d).exp()).collect())
        .collect();
    state.ema = Some(ema);
    state.items_seen += g_batch.len() as u64;
    Ok(r_hat)
}
