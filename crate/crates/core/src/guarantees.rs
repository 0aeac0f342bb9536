//! Closed-form statistics behind the purity and coverage certificates, and
//! the resampling budget planner.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GuaranteeParams {
    pub delta: f64,
    pub purity: f64,
    pub coverage_target: f64,
    pub epsilon: f64,
}

impl Default for GuaranteeParams {
    fn default() -> Self {
        GuaranteeParams {
            delta: 0.001,
            purity: 0.995,
            coverage_target: 0.75,
            epsilon: 0.005,
        }
    }
}

impl GuaranteeParams {
    /// `coverage_target` may be 0 (stop after the first tree).
    pub fn validate(&self) -> Result<()> {
        open_unit("delta", self.delta)?;
        open_unit("purity", self.purity)?;
        open_unit("epsilon", self.epsilon)?;
        if !(0.0..=1.0).contains(&self.coverage_target) {
            return Err(Error::param("coverage_target", "must be in [0, 1]"));
        }
        Ok(())
    }

    /// The false-positive fraction is bounded by `1 − R`, so a requested error
    /// below that cannot be certified.
    pub fn epsilon_consistent(&self) -> bool {
        self.epsilon >= (1.0 - self.purity) - 1e-12
    }
}

fn open_unit(name: &'static str, v: f64) -> Result<()> {
    if v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(Error::param(name, format!("{v} is outside (0, 1)")))
    }
}

/// `1 − R^n`: confidence that at least a fraction `R` of a region is positive
/// after `n` all-positive uniform samples.
pub fn wilks_confidence(n: u64, purity: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::param("n", "must be at least 1"));
    }
    open_unit("purity", purity)?;
    Ok(1.0 - purity.powf(n as f64))
}

/// Smallest `n ≥ 1` with `wilks_confidence(n, R) ≥ 1 − δ`, i.e.
/// `ceil(ln δ / ln R)`.
pub fn wilks_n(delta: f64, purity: f64) -> Result<u64> {
    open_unit("delta", delta)?;
    open_unit("purity", purity)?;
    let target = 1.0 - delta;
    let ratio = delta.ln() / purity.ln();
    if !ratio.is_finite() || ratio > 1e15 {
        return Err(Error::Overflow("wilks sample size"));
    }
    let mut n = (ratio.ceil() as u64).max(1);
    // settle floating-point rounding at the ceiling
    while wilks_confidence(n, purity)? < target {
        n += 1;
    }
    while n > 1 && wilks_confidence(n - 1, purity)? >= target {
        n -= 1;
    }
    Ok(n)
}

/// Purity implied by `n` all-positive samples at confidence `1 − δ`:
/// `R = δ^(1/n)`.
pub fn purity_for(n: u64, delta: f64) -> Result<f64> {
    if n == 0 {
        return Err(Error::param("n", "must be at least 1"));
    }
    open_unit("delta", delta)?;
    Ok(delta.powf(1.0 / n as f64))
}

/// Chernoff bound on fewer than the required samples landing in one
/// `ξ`-cell: `exp(−(1 − 1/α)² μ / 2)` with `μ = m ξ^N`.
pub fn chernoff_miss_probability(m: u64, xi: f64, dim: u32, alpha: f64) -> Result<f64> {
    if alpha.is_nan() || alpha <= 1.0 {
        return Err(Error::param("alpha", "must exceed 1"));
    }
    let mu = m as f64 * xi.powi(dim as i32);
    let s = 1.0 - 1.0 / alpha;
    Ok((-s * s * mu / 2.0).exp())
}

/// Whether `m > n α / ξ^N`, the sample-size premise of the Chernoff bound.
pub fn chernoff_premise_holds(m: u64, n: u64, xi: f64, dim: u32, alpha: f64) -> bool {
    m as f64 > n as f64 * alpha / xi.powi(dim as i32)
}

/// Union bound over the `ξ`-cells of `B̂`: `min(1, Vol(B̂)/ξ^N · p^T)`.
pub fn forest_miss_probability(p_neg: f64, trees: u64, vol_b_hat: f64, xi: f64, dim: u32) -> f64 {
    if vol_b_hat <= 0.0 {
        return 0.0;
    }
    let cells = vol_b_hat / xi.powi(dim as i32);
    (cells * p_neg.powf(trees as f64)).min(1.0)
}

/// `((k − 2)/k)^N`, the guaranteed covered fraction of a `kξ`-bounded preimage.
pub fn coverage_lower_bound(k_factor: u32, dim: u32) -> Result<f64> {
    if k_factor < 3 {
        return Err(Error::param("k_factor", "must be at least 3"));
    }
    if dim == 0 {
        return Err(Error::param("dim", "must be at least 1"));
    }
    Ok(((k_factor as f64 - 2.0) / k_factor as f64).powi(dim as i32))
}

/// `(1 − R) Vol(B^A)`, the bound on false-positive volume.
pub fn error_upper_bound(purity: f64, vol_ba: f64) -> f64 {
    (1.0 - purity) * vol_ba
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetPlan {
    pub n_per_box: u64,
    pub max_boxes: u64,
    pub total_resamples: u64,
    pub trees: u64,
    pub depth: u32,
}

/// `max_boxes = T · 2^(D−1)` pure leaves, each needing `wilks_n(δ, R)` draws.
pub fn plan_budget(params: &GuaranteeParams, trees: u64, depth: u32) -> Result<BudgetPlan> {
    if trees == 0 {
        return Err(Error::param("trees", "must be at least 1"));
    }
    if depth == 0 || depth > 63 {
        return Err(Error::param("depth", "must be in 1..=63"));
    }
    let n_per_box = wilks_n(params.delta, params.purity)?;
    let max_boxes = trees
        .checked_mul(1u64 << (depth - 1))
        .ok_or(Error::Overflow("max_boxes"))?;
    let total_resamples = n_per_box
        .checked_mul(max_boxes)
        .ok_or(Error::Overflow("total_resamples"))?;
    Ok(BudgetPlan {
        n_per_box,
        max_boxes,
        total_resamples,
        trees,
        depth,
    })
}
