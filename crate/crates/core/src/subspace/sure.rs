//! Stein's unbiased risk estimate for singular-value hard thresholding and
//! the rank selection built on it.
//!
//! For `X̂ = Σ_{s_i > δ} s_i u_i v_iᵀ` computed from `Y = X + N(0, σ²)` of size
//! m×n, the risk `E‖X̂ − X‖²_F` is estimated by
//!
//! ```text
//! SURE(δ) = −m·n·σ² + Σ_{s_i ≤ δ} s_i² + 2σ²·div(δ)
//! div(δ)  = Σ_{s_i > δ} (1 + |m − n|) + 2·Σ_{s_i > δ} Σ_{j ≠ i} s_i² / (s_i² − s_j²)
//! ```
//!
//! where `j` runs over all `min(m, n)` singular values.

use serde::{Deserialize, Serialize};

use super::SubspaceDecomposition;
use crate::error::{Error, Result};
use crate::par;
use crate::stack::StackMatrix;

/// How the retained subspace is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "mode", content = "value")]
pub enum ThresholdConfig {
    /// Minimize SURE over the midpoint grid.
    SureAuto,
    /// Keep exactly K components.
    FixedRank(usize),
    /// Keep the components with singular value above δ.
    FixedThreshold(f64),
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        ThresholdConfig::SureAuto
    }
}

/// SURE evaluated over the candidate thresholds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SureReport {
    /// Candidate thresholds in decreasing order.
    pub delta: Vec<f64>,
    /// SURE at each candidate (empty when the mode does not need it and σ = 0).
    pub sure: Vec<f64>,
    pub selected_delta: f64,
    pub selected_k: usize,
    /// Set when every component was thresholded away.
    pub empty_subspace: bool,
    /// Ground-truth squared error at each candidate, when supplied.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mse: Option<Vec<f64>>,
}

/// Singular values as seen by the risk estimate: the computed ones plus, for
/// truncated factorizations, a flat model of the uncomputed tail.
struct Spectrum {
    values: Vec<f64>,
    rows: usize,
    cols: usize,
    /// Largest number of components that may be retained.
    max_keep: usize,
}

impl Spectrum {
    fn of(d: &SubspaceDecomposition) -> Self {
        let mut values = d.singular_values().to_vec();
        let max_keep = values.len();
        if let Some(tail) = d.tail() {
            if tail.count > 0 {
                let level = (tail.energy.max(0.0) / tail.count as f64).sqrt();
                // keep the model below the last computed value
                let level = level.min(values.last().copied().unwrap_or(level));
                values.extend(std::iter::repeat(level).take(tail.count));
            }
        }
        Self {
            values,
            rows: d.rows(),
            cols: d.cols(),
            max_keep,
        }
    }
}

/// Divergence of singular-value hard thresholding at `delta`.
///
/// Singular values missing from `s` (fewer than `min(m, n)` supplied) count as
/// zeros. Retained pairs contribute `s_i²/(s_i²−s_j²) + s_j²/(s_j²−s_i²) = 1`,
/// which is added directly so tied retained values are harmless.
pub fn divergence(s: &[f64], m: usize, n: usize, delta: f64) -> f64 {
    let r = m.min(n);
    let implicit_zeros = r.saturating_sub(s.len()) as f64;
    let kept: Vec<f64> = s.iter().copied().filter(|&x| x > delta).collect();
    let k = kept.len() as f64;
    let mut div = k * (1.0 + m.abs_diff(n) as f64) + k * (k - 1.0);
    for &si in &kept {
        let si2 = si * si;
        let mut cross = implicit_zeros;
        for &sj in s.iter().filter(|&&x| x <= delta) {
            cross += si2 / (si2 - sj * sj);
        }
        div += 2.0 * cross;
    }
    div
}

pub fn sure_hard_threshold(s: &[f64], m: usize, n: usize, sigma: f64, delta: f64) -> Result<f64> {
    if !(sigma > 0.0) {
        return Err(Error::ZeroSigma);
    }
    if s.iter().any(|&x| x == delta) {
        return Err(Error::InvalidParameter(format!(
            "threshold {delta} coincides with a singular value"
        )));
    }
    let residual: f64 = s.iter().filter(|&&x| x <= delta).map(|x| x * x).sum();
    let var = sigma * sigma;
    Ok(-(m as f64) * (n as f64) * var + residual + 2.0 * var * divergence(s, m, n, delta))
}

/// Candidate thresholds in decreasing order: one above the largest value,
/// midpoints between consecutive distinct values, one below the smallest.
fn candidate_grid(values: &[f64], max_keep: usize) -> Vec<f64> {
    let mut distinct: Vec<f64> = Vec::new();
    for &v in values {
        if distinct.last().map_or(true, |&l| v < l) {
            distinct.push(v);
        }
    }
    let Some(&top) = distinct.first() else {
        return vec![1.0];
    };
    let mut grid = vec![if top > 0.0 { 2.0 * top } else { 1.0 }];
    for w in distinct.windows(2) {
        grid.push(0.5 * (w[0] + w[1]));
    }
    let bottom = *distinct.last().unwrap();
    if bottom > 0.0 {
        grid.push(0.5 * bottom);
    }
    grid.retain(|&d| values.iter().filter(|&&x| x > d).count() <= max_keep);
    grid
}

pub fn select_rank(
    d: &SubspaceDecomposition,
    sigma: f64,
    cfg: &ThresholdConfig,
) -> Result<SureReport> {
    let spec = Spectrum::of(d);
    let count = |delta: f64| spec.values.iter().filter(|&&x| x > delta).count();
    let evaluate = |grid: &[f64]| -> Result<Vec<f64>> {
        par::map_slice(grid, |&delta| {
            sure_hard_threshold(&spec.values, spec.rows, spec.cols, sigma, delta)
        })
        .into_iter()
        .collect()
    };
    let grid = candidate_grid(&spec.values, spec.max_keep);

    let (selected_delta, selected_k, sure) = match *cfg {
        ThresholdConfig::SureAuto => {
            if !(sigma > 0.0) {
                return Err(Error::ZeroSigma);
            }
            let sure = evaluate(&grid)?;
            // grid is in decreasing δ, so a strict comparison keeps the larger δ on ties
            let mut best = 0;
            for (i, v) in sure.iter().enumerate() {
                if *v < sure[best] {
                    best = i;
                }
            }
            (grid[best], count(grid[best]), sure)
        }
        ThresholdConfig::FixedRank(k) => {
            if k == 0 || k > spec.max_keep {
                return Err(Error::InvalidParameter(format!(
                    "fixed rank {k} outside 1..={}",
                    spec.max_keep
                )));
            }
            let v = &spec.values;
            let delta = if k < v.len() { 0.5 * (v[k - 1] + v[k]) } else { 0.5 * v[k - 1] };
            let sure = if sigma > 0.0 { evaluate(&grid)? } else { Vec::new() };
            (delta, k, sure)
        }
        ThresholdConfig::FixedThreshold(delta) => {
            if !(delta >= 0.0) {
                return Err(Error::InvalidParameter(format!("threshold must be >= 0, got {delta}")));
            }
            let sure = if sigma > 0.0 { evaluate(&grid)? } else { Vec::new() };
            (delta, count(delta).min(spec.max_keep), sure)
        }
    };
    let delta = if sure.is_empty() { Vec::new() } else { grid };
    Ok(SureReport {
        delta,
        sure,
        selected_delta,
        selected_k,
        empty_subspace: selected_k == 0,
        mse: None,
    })
}

impl SureReport {
    /// `Σ_{s_i ≤ δ} s_i²` at each candidate, the residual part of SURE.
    pub fn residual_terms(&self, singular_values: &[f64]) -> Vec<f64> {
        self.delta
            .iter()
            .map(|&d| singular_values.iter().filter(|&&x| x <= d).map(|x| x * x).sum())
            .collect()
    }
}

/// `‖Σ_{s_i > δ} s_i u_i v_iᵀ − X‖²_F` for each δ, given the exact
/// decomposition of the noisy matrix and the clean matrix `truth`.
pub fn true_mse_curve(
    d: &SubspaceDecomposition,
    truth: &StackMatrix,
    deltas: &[f64],
) -> Result<Vec<f64>> {
    if truth.rows() != d.rows() || truth.cols() != d.cols() {
        return Err(Error::Dimension("truth does not match decomposition".into()));
    }
    let x = truth.view();
    let xx: f64 = truth.values().iter().map(|v| v * v).sum();
    let proj = d.u_view().t().dot(&x); // r × cols
    let s = d.singular_values();
    let overlap: Vec<f64> = (0..d.rank())
        .map(|i| {
            proj.row(i)
                .iter()
                .zip(d.v_column(i))
                .map(|(a, b)| a * b)
                .sum::<f64>()
        })
        .collect();
    Ok(deltas
        .iter()
        .map(|&delta| {
            let mut e = xx;
            for i in 0..d.rank() {
                if s[i] > delta {
                    e += s[i] * s[i] - 2.0 * s[i] * overlap[i];
                }
            }
            e
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::subspace::svd_thin;

    #[test]
    fn everything_thresholded_is_zero_estimator() {
        let s = [9.0, 4.0, 1.0];
        let (m, n, sigma) = (10, 3, 0.7);
        let v = sure_hard_threshold(&s, m, n, sigma, 10.0).unwrap();
        let expect = -(m as f64 * n as f64) * sigma * sigma + 81.0 + 16.0 + 1.0;
        assert!((v - expect).abs() < 1e-12);
    }

    #[test]
    fn keeping_everything_is_identity_risk() {
        // X̂ = Y has risk m·n·σ² exactly
        let s = [9.0, 4.0, 1.0];
        let (m, n, sigma) = (10, 3, 0.7);
        let v = sure_hard_threshold(&s, m, n, sigma, 0.5).unwrap();
        assert!((v - (m * n) as f64 * sigma * sigma).abs() < 1e-9);
        assert!((divergence(&s, m, n, 0.5) - (m * n) as f64).abs() < 1e-9);
    }

    #[test]
    fn zero_sigma_rejected() {
        assert!(matches!(
            sure_hard_threshold(&[1.0], 2, 1, 0.0, 0.5),
            Err(Error::ZeroSigma)
        ));
    }

    #[test]
    fn tied_retained_values_are_finite() {
        let s = [5.0, 5.0, 5.0, 1.0];
        let d = divergence(&s, 8, 4, 2.0);
        assert!(d.is_finite());
        // 3·(1+4) + 3·2 + 2·3·(25/24)
        assert!((d - (15.0 + 6.0 + 6.0 * 25.0 / 24.0)).abs() < 1e-12);
    }

    fn diag_decomp(values: &[f64], rows: usize) -> SubspaceDecomposition {
        let n = values.len();
        let mut m = vec![0.0; rows * n];
        for (i, v) in values.iter().enumerate() {
            m[i * rows + i] = *v;
        }
        svd_thin(&StackMatrix::new(rows, n, m).unwrap()).unwrap()
    }

    #[test]
    fn clean_gap_selects_rank() {
        let d = diag_decomp(&[500.0, 300.0, 200.0, 0.0, 0.0, 0.0], 40);
        let rep = select_rank(&d, 1e-3, &ThresholdConfig::SureAuto).unwrap();
        assert_eq!(rep.selected_k, 3);
        assert!(!rep.empty_subspace);
        assert_eq!(rep.delta.len(), rep.sure.len());
        assert!(rep.delta.windows(2).all(|w| w[0] > w[1]));
    }

    #[test]
    fn huge_sigma_gives_empty_subspace() {
        let d = diag_decomp(&[5.0, 3.0, 1.0], 10);
        let rep = select_rank(&d, 50.0, &ThresholdConfig::SureAuto).unwrap();
        assert_eq!(rep.selected_k, 0);
        assert!(rep.empty_subspace);
        assert!(rep.selected_delta > 5.0);
    }

    #[test]
    fn fixed_modes() {
        let d = diag_decomp(&[5.0, 3.0, 1.0], 10);
        let rep = select_rank(&d, 0.0, &ThresholdConfig::FixedRank(2)).unwrap();
        assert_eq!(rep.selected_k, 2);
        assert_eq!(rep.selected_delta, 2.0);
        assert!(rep.sure.is_empty());
        let rep = select_rank(&d, 0.0, &ThresholdConfig::FixedThreshold(0.5)).unwrap();
        assert_eq!(rep.selected_k, 3);
        assert!(select_rank(&d, 0.0, &ThresholdConfig::FixedRank(4)).is_err());
        assert!(select_rank(&d, 0.0, &ThresholdConfig::FixedRank(0)).is_err());
        assert!(select_rank(&d, 0.0, &ThresholdConfig::SureAuto).is_err());
    }

    #[test]
    fn residual_term_monotone() {
        let d = diag_decomp(&[9.0, 7.0, 7.0, 2.0, 0.5], 12);
        let rep = select_rank(&d, 1.0, &ThresholdConfig::SureAuto).unwrap();
        let r = rep.residual_terms(d.singular_values());
        // δ decreasing → residual non-increasing
        assert!(r.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn report_json_field_names() {
        let rep = SureReport {
            delta: vec![2.0, 1.0],
            sure: vec![0.5, 0.25],
            selected_delta: 1.0,
            selected_k: 1,
            empty_subspace: false,
            mse: None,
        };
        let v: serde_json::Value = serde_json::to_value(&rep).unwrap();
        for key in ["delta", "sure", "selected_delta", "selected_k"] {
            assert!(v.get(key).is_some(), "{key}");
        }
    }
}
