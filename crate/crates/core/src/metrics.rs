//! Diagnostics: balance-law regression, coding entropy, decorrelation, and
//! the mutual-information trace bound with its traffic reduction. All
//! entropies and log-odds are in nats.

use std::collections::BTreeMap;

use ndarray::{ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sparsity::TrafficRecord;

/// Why a balance fit carries no usable regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FitStatus {
    Ok,
    /// All usable units share one degree; the regression is undefined. This
    /// is the expected outcome for a dense control run.
    ConstantDegree,
    /// Fewer than two non-saturated units.
    TooFewUnits,
}

/// Ordinary least squares of `ln((1-a)/a)` against degree `k` over
/// non-saturated units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceFit {
    pub status: FitStatus,
    /// Estimated beta, nats per edge. Meaningless unless status is Ok.
    #[serde(with = "crate::serde_ext::nullable_f64")]
    pub slope: f64,
    #[serde(with = "crate::serde_ext::nullable_f64")]
    pub intercept: f64,
    #[serde(with = "crate::serde_ext::nullable_f64")]
    pub r_squared: f64,
    pub n_units_used: usize,
    pub excluded_saturated: usize,
}

impl BalanceFit {
    pub fn defined(&self) -> bool {
        self.status == FitStatus::Ok
    }
}

/// Fit the balance law over a traffic snapshot. Units are used only when
/// their degree lies strictly inside `(m, max_degree)`; clipped units carry
/// no signal about the law. With fewer than two usable units, or a single
/// distinct degree among them, the fit is flagged instead of computed.
pub fn fit_balance(records: &[TrafficRecord], m: usize, max_degree: usize) -> BalanceFit {
    let usable: Vec<&TrafficRecord> = records
        .iter()
        .filter(|r| r.k > m && r.k < max_degree && r.a > 0.0 && r.a < 1.0)
        .collect();
    let excluded_saturated = records.len() - usable.len();
    let undefined = |status| BalanceFit {
        status,
        slope: f64::NAN,
        intercept: f64::NAN,
        r_squared: f64::NAN,
        n_units_used: usable.len(),
        excluded_saturated,
    };
    // A single degree across the whole snapshot is the dense-control
    // signature, whether or not that degree is clipped.
    if records.len() >= 2 && records.iter().all(|r| r.k == records[0].k) {
        return undefined(FitStatus::ConstantDegree);
    }
    if usable.len() < 2 {
        return undefined(FitStatus::TooFewUnits);
    }
    let first_k = usable[0].k;
    if usable.iter().all(|r| r.k == first_k) {
        return undefined(FitStatus::ConstantDegree);
    }

    let n = usable.len() as f64;
    let xs: Vec<f64> = usable.iter().map(|r| r.k as f64).collect();
    let ys: Vec<f64> = usable.iter().map(|r| ((1.0 - r.a) / r.a).ln()).collect();
    let x_mean = xs.iter().sum::<f64>() / n;
    let y_mean = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - x_mean) * (x - x_mean)).sum();
    let sxy: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (x - x_mean) * (y - y_mean))
        .sum();
    let slope = sxy / sxx;
    let intercept = y_mean - slope * x_mean;
    let ss_tot: f64 = ys.iter().map(|y| (y - y_mean) * (y - y_mean)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let e = y - (intercept + slope * x);
            e * e
        })
        .sum();
    let r_squared = if ss_tot <= 1e-12 {
        1.0
    } else {
        (1.0 - ss_res / ss_tot).clamp(0.0, 1.0)
    };
    BalanceFit {
        status: FitStatus::Ok,
        slope,
        intercept,
        r_squared,
        n_units_used: usable.len(),
        excluded_saturated,
    }
}

/// Sum of per-unit binary entropies in nats, with `0 ln 0 := 0`. Under weak
/// correlation this approximates the layer's coding entropy.
pub fn binary_entropy_sum(rates: &[f64]) -> Result<f64> {
    let mut total = 0.0;
    for (i, &a) in rates.iter().enumerate() {
        if !(0.0..=1.0).contains(&a) {
            return Err(Error::contract(format!(
                "rate[{i}] = {a} outside [0, 1]"
            )));
        }
        if a > 0.0 && a < 1.0 {
            total += -a * a.ln() - (1.0 - a) * (1.0 - a).ln();
        }
    }
    Ok(total)
}

/// Plug-in Shannon entropy (nats) of the empirical distribution over
/// binarized activation patterns. Activations are binarized at strictly
/// positive, matching the on-rate definition. Limited to 20 units so the
/// pattern histogram stays tractable.
pub fn empirical_code_entropy(activations: ArrayView2<'_, f64>) -> Result<f64> {
    let units = activations.ncols();
    if units > 20 {
        return Err(Error::config(format!(
            "{units} units is too many for a pattern histogram; \
             use binary_entropy_sum for wide layers"
        )));
    }
    let n = activations.nrows();
    if n == 0 {
        return Err(Error::undefined("code entropy of an empty sample"));
    }
    // BTreeMap keeps the summation order fixed, so equal samples always
    // produce bitwise-equal entropies.
    let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
    for row in activations.rows() {
        let mut key = 0u32;
        for (j, &v) in row.iter().enumerate() {
            if v > 0.0 {
                key |= 1 << j;
            }
        }
        *counts.entry(key).or_insert(0) += 1;
    }
    let n = n as f64;
    Ok(counts
        .values()
        .map(|&c| {
            let p = c as f64 / n;
            -p * p.ln()
        })
        .sum())
}

/// Plug-in mutual information (nats) between a discrete grouping variable
/// and the binarized code: H(code) minus the group-weighted mean of the
/// within-group code entropies. Grouping by the clean stimulus makes this
/// an estimate of the information the code carries about the stimulus, with
/// jitter-driven pattern diversity cancelled by the conditional term.
pub fn empirical_mi_estimate(
    activations: ArrayView2<'_, f64>,
    groups: &[usize],
) -> Result<f64> {
    if groups.len() != activations.nrows() {
        return Err(Error::shape(format!(
            "{} group labels for {} rows",
            groups.len(),
            activations.nrows()
        )));
    }
    let marginal = empirical_code_entropy(activations)?;
    let mut ids: Vec<usize> = groups.to_vec();
    ids.sort_unstable();
    ids.dedup();
    let n = groups.len() as f64;
    let mut conditional = 0.0;
    for id in ids {
        let members: Vec<usize> = (0..groups.len()).filter(|&r| groups[r] == id).collect();
        let rows = activations.select(Axis(0), &members);
        conditional += members.len() as f64 / n * empirical_code_entropy(rows.view())?;
    }
    Ok(marginal - conditional)
}

/// Pearson correlation of two equal-length series; None when either side
/// has zero variance or fewer than two points.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
        sxy += (a - mx) * (b - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Mean absolute pairwise correlation over units, excluding and counting
/// zero-variance units. `mean_abs_r` is None when fewer than two units have
/// defined variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSummary {
    pub mean_abs_r: Option<f64>,
    pub pairs_used: usize,
    pub excluded_zero_variance: usize,
}

pub fn mean_abs_correlation(activations: ArrayView2<'_, f64>) -> CorrelationSummary {
    let units = activations.ncols();
    let n = activations.nrows();
    let mut valid: Vec<usize> = Vec::new();
    let mut excluded = 0;
    if n >= 2 {
        for u in 0..units {
            let col = activations.column(u);
            let mean = col.sum() / n as f64;
            let var = col.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>();
            if var > 0.0 {
                valid.push(u);
            } else {
                excluded += 1;
            }
        }
    } else {
        excluded = units;
    }
    if valid.len() < 2 {
        return CorrelationSummary {
            mean_abs_r: None,
            pairs_used: 0,
            excluded_zero_variance: excluded,
        };
    }
    let mut total = 0.0;
    let mut pairs = 0;
    for (i, &u) in valid.iter().enumerate() {
        let xu: Vec<f64> = activations.column(u).to_vec();
        for &v in &valid[i + 1..] {
            let xv: Vec<f64> = activations.column(v).to_vec();
            if let Some(r) = pearson(&xu, &xv) {
                total += r.abs();
                pairs += 1;
            }
        }
    }
    CorrelationSummary {
        mean_abs_r: if pairs > 0 { Some(total / pairs as f64) } else { None },
        pairs_used: pairs,
        excluded_zero_variance: excluded,
    }
}

/// `(1/(2 sigma2)) * tr(W^T Cov(Z) W)`: the Gaussian-channel bound on
/// I(Z;Y). The covariance must be square, symmetric within 1e-9, and agree
/// with W's row count.
pub fn mi_trace_bound(
    w_effective: ArrayView2<'_, f64>,
    cov_z: ArrayView2<'_, f64>,
    sigma2: f64,
) -> Result<f64> {
    if !(sigma2 > 0.0) {
        return Err(Error::config(format!("sigma2 must be positive, got {sigma2}")));
    }
    let d = cov_z.nrows();
    if cov_z.ncols() != d {
        return Err(Error::shape(format!(
            "covariance must be square, got {} x {}",
            d,
            cov_z.ncols()
        )));
    }
    if w_effective.nrows() != d {
        return Err(Error::shape(format!(
            "W has {} rows, covariance is {d} x {d}",
            w_effective.nrows()
        )));
    }
    for i in 0..d {
        for j in (i + 1)..d {
            if (cov_z[[i, j]] - cov_z[[j, i]]).abs() > 1e-9 {
                return Err(Error::contract(format!(
                    "covariance asymmetric at ({i}, {j}): {} vs {}",
                    cov_z[[i, j]],
                    cov_z[[j, i]]
                )));
            }
        }
    }
    // tr(W^T C W) = sum_j w_j^T C w_j over columns of W.
    let cw = cov_z.dot(&w_effective);
    let trace: f64 = w_effective
        .iter()
        .zip(cw.iter())
        .map(|(&w, &c)| w * c)
        .sum();
    Ok(trace / (2.0 * sigma2))
}

/// `(C/(2 sigma2)) * sum a_i k_i`: the weak-correlation reduction of the
/// trace bound, turning total traffic into an information budget.
pub fn mi_traffic_bound(records: &[TrafficRecord], c: f64, sigma2: f64) -> Result<f64> {
    if !(c > 0.0) {
        return Err(Error::config(format!("C must be positive, got {c}")));
    }
    if !(sigma2 > 0.0) {
        return Err(Error::config(format!("sigma2 must be positive, got {sigma2}")));
    }
    let traffic: f64 = records.iter().map(|r| r.a * r.k as f64).sum();
    Ok(c / (2.0 * sigma2) * traffic)
}

/// Both MI bounds for one snapshot, side by side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiBoundReport {
    pub sigma2: f64,
    pub c: f64,
    pub trace_bound: f64,
    pub traffic_bound: f64,
    pub traffic_sum: f64,
}

impl MiBoundReport {
    pub fn compute(
        w_effective: ArrayView2<'_, f64>,
        cov_z: ArrayView2<'_, f64>,
        records: &[TrafficRecord],
        c: f64,
        sigma2: f64,
    ) -> Result<Self> {
        let trace_bound = mi_trace_bound(w_effective, cov_z, sigma2)?;
        let traffic_bound = mi_traffic_bound(records, c, sigma2)?;
        Ok(MiBoundReport {
            sigma2,
            c,
            trace_bound,
            traffic_bound,
            traffic_sum: records.iter().map(|r| r.a * r.k as f64).sum(),
        })
    }
}
