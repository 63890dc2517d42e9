//! Traffic-budgeted structural plasticity.
//!
//! Each unit `i` carries a traffic budget `t_i = a_i * k_i`: its on-rate
//! times its degree on the managed side of one weight matrix. Two enforcement
//! styles are provided.
//!
//! * A degree controller (`refresh_masks`) that periodically rebuilds the
//!   mask so every unit's degree tracks `clip(round(d0 + ln((1-a)/a) / beta),
//!   m, D)`. At that degree the stationary traffic obeys the balance law
//!   `ln((1-a)/a) = beta * (k - d0)`, so log-odds of silence are linear in
//!   degree. Regrowth ranks the full weight row or column, masked entries
//!   included, by absolute value; masked weights are frozen by the trainer,
//!   so a refresh can resurrect exactly what pruning hid.
//! * A hard gate (`threshold_prune`) that trims the weakest outgoing edges of
//!   any unit whose traffic exceeds `tau`, and never grows anything back.
//!
//! `SP_IN` manages columns (fan-in of the matrix's output units); `SP_OUT`
//! manages rows (fan-out of its input units).

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{MaskedLayer, Network};

/// Which side of a weight matrix the budget applies to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MaskSide {
    /// Columns: each output unit's incoming degree is managed.
    SpIn,
    /// Rows: each input unit's outgoing degree is managed.
    SpOut,
}

/// Parameters of the budget rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BudgetConfig {
    /// Slope of the balance law, nats per edge. Must be positive.
    pub beta: f64,
    /// Degree offset: the target degree of a unit with on-rate 1/2.
    pub d0: f64,
    /// Traffic ceiling for `threshold_prune`. May be infinite.
    pub tau: f64,
    /// Minimum degree any unit is clipped to.
    pub m: usize,
    /// Maximum degree; at most the width of the managed side.
    pub max_degree: usize,
    /// Steps between refresh attempts.
    pub delta: u64,
    /// Steps before the first refresh may fire.
    pub warmup: u64,
    /// EMA rate for the activity tracker.
    pub alpha: f64,
    /// On-rate clamp floor; rates live in `[eps, 1 - eps]`.
    pub eps_clamp: f64,
    pub side: MaskSide,
}

impl BudgetConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return Err(Error::config(format!("beta must be positive, got {}", self.beta)));
        }
        if !self.d0.is_finite() {
            return Err(Error::config(format!("d0 must be finite, got {}", self.d0)));
        }
        if !(self.tau > 0.0) {
            return Err(Error::config(format!("tau must be positive, got {}", self.tau)));
        }
        if self.max_degree == 0 {
            return Err(Error::config("max_degree must be at least 1"));
        }
        if self.m == 0 {
            return Err(Error::config("m must be at least 1"));
        }
        if self.m > self.max_degree {
            return Err(Error::config(format!(
                "m = {} exceeds max_degree = {}",
                self.m, self.max_degree
            )));
        }
        if self.delta == 0 {
            return Err(Error::config("delta must be at least 1"));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::config(format!(
                "alpha must be in (0, 1], got {}",
                self.alpha
            )));
        }
        if !(self.eps_clamp > 0.0 && self.eps_clamp < 0.5) {
            return Err(Error::config(format!(
                "eps_clamp must be in (0, 0.5), got {}",
                self.eps_clamp
            )));
        }
        Ok(())
    }

    /// Width of the managed side of a layer, i.e. the number of units.
    pub fn unit_count(&self, layer: &MaskedLayer) -> usize {
        match self.side {
            MaskSide::SpIn => layer.out_dim(),
            MaskSide::SpOut => layer.in_dim(),
        }
    }

    /// Number of potential edges per managed unit.
    pub fn edge_slots(&self, layer: &MaskedLayer) -> usize {
        match self.side {
            MaskSide::SpIn => layer.in_dim(),
            MaskSide::SpOut => layer.out_dim(),
        }
    }
}

/// Exponential moving average of per-unit on-rates, initialized neutral at
/// 1/2 and clamped to `[eps, 1 - eps]` so log-odds stay finite.
#[derive(Debug, Clone)]
pub struct ActivityTracker {
    rates: Vec<f64>,
    eps: f64,
}

impl ActivityTracker {
    pub fn new(units: usize, eps: f64) -> Result<Self> {
        if units == 0 {
            return Err(Error::config("tracker needs at least one unit"));
        }
        if !(eps > 0.0 && eps < 0.5) {
            return Err(Error::config(format!("eps must be in (0, 0.5), got {eps}")));
        }
        Ok(ActivityTracker {
            rates: vec![0.5; units],
            eps,
        })
    }

    pub fn len(&self) -> usize {
        self.rates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rates.is_empty()
    }

    pub fn rates(&self) -> &[f64] {
        &self.rates
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    /// Overwrite the stored rates, clamping into `[eps, 1 - eps]`.
    pub fn set_rates(&mut self, rates: &[f64]) -> Result<()> {
        if rates.len() != self.rates.len() {
            return Err(Error::shape(format!(
                "got {} rates for {} units",
                rates.len(),
                self.rates.len()
            )));
        }
        let eps = self.eps;
        for (slot, &r) in self.rates.iter_mut().zip(rates) {
            *slot = r.clamp(eps, 1.0 - eps);
        }
        Ok(())
    }
}

/// Fold one batch of activations (`[n x units]`, post-nonlinearity) into the
/// tracker. A unit counts as on when its activation is strictly positive.
/// The batch on-rate enters the EMA as `a <- (1 - alpha) a + alpha b`, so the
/// result does not depend on sample order within the batch.
pub fn update_activity(
    tracker: &mut ActivityTracker,
    activations: ArrayView2<'_, f64>,
    alpha: f64,
) -> Result<()> {
    if activations.ncols() != tracker.rates.len() {
        return Err(Error::shape(format!(
            "activations have {} columns, tracker has {} units",
            activations.ncols(),
            tracker.rates.len()
        )));
    }
    if activations.nrows() == 0 {
        return Err(Error::undefined("on-rate of an empty batch"));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::config(format!("alpha must be in (0, 1], got {alpha}")));
    }
    let n = activations.nrows() as f64;
    let eps = tracker.eps;
    for (u, slot) in tracker.rates.iter_mut().enumerate() {
        let on = activations
            .column(u)
            .iter()
            .filter(|&&v| v > 0.0)
            .count() as f64;
        let b = on / n;
        *slot = ((1.0 - alpha) * *slot + alpha * b).clamp(eps, 1.0 - eps);
    }
    Ok(())
}

/// Target degree for a unit with on-rate `a`: `clip(round(d0 + ln((1-a)/a) /
/// beta), m, max_degree)`. Rounding is half-up. Quiet units earn wide fans,
/// busy units narrow ones.
pub fn target_degree(a: f64, cfg: &BudgetConfig) -> Result<usize> {
    if !(a > 0.0 && a < 1.0) {
        return Err(Error::undefined(format!("target degree at on-rate {a}")));
    }
    let raw = cfg.d0 + ((1.0 - a) / a).ln() / cfg.beta;
    let rounded = (raw + 0.5).floor();
    let clipped = rounded.max(cfg.m as f64).min(cfg.max_degree as f64);
    Ok(clipped as usize)
}

/// One unit's budget state at a sample point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficRecord {
    pub unit: usize,
    /// Tracked on-rate.
    pub a: f64,
    /// Active degree on the managed side.
    pub k: usize,
    /// Traffic `a * k`.
    pub t: f64,
    /// True when `k` sits on or outside the clip bounds, i.e. not strictly
    /// between `m` and `max_degree`; such units carry no balance-law signal.
    pub saturated: bool,
}

/// What a refresh attempt did.
#[derive(Debug, Clone, PartialEq)]
pub struct RefreshOutcome {
    /// False when the warmup/interval gate swallowed the attempt.
    pub refreshed: bool,
    /// Output channels whose incoming mask column became empty.
    pub dead_channels: Vec<usize>,
}

fn top_k_indices(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&i, &j| {
        scores[j]
            .total_cmp(&scores[i])
            .then_with(|| i.cmp(&j))
    });
    order.truncate(k.min(scores.len()));
    order
}

/// Rebuild the managed side of the mask from current on-rates. Gated: does
/// nothing unless `step >= warmup` and `step` is a multiple of `delta`. For
/// each unit the target degree is computed from the tracker and the
/// strongest `k` weights of the full row or column are kept, ties broken
/// toward lower indices. The new mask depends only on the weights, the
/// rates, and the config, never on the previous mask. Afterwards every
/// output channel whose active fan-in count changed has its rescale factor
/// multiplied by `sqrt(prev/cur)`.
pub fn refresh_masks(
    layer: &mut MaskedLayer,
    tracker: &ActivityTracker,
    cfg: &BudgetConfig,
    step: u64,
) -> Result<RefreshOutcome> {
    cfg.validate()?;
    if tracker.len() != cfg.unit_count(layer) {
        return Err(Error::shape(format!(
            "tracker has {} units, managed side has {}",
            tracker.len(),
            cfg.unit_count(layer)
        )));
    }
    if cfg.max_degree > cfg.edge_slots(layer) {
        return Err(Error::config(format!(
            "max_degree = {} exceeds the {} edge slots per unit",
            cfg.max_degree,
            cfg.edge_slots(layer)
        )));
    }
    if step < cfg.warmup || step % cfg.delta != 0 {
        return Ok(RefreshOutcome {
            refreshed: false,
            dead_channels: Vec::new(),
        });
    }

    let old_mask = layer.mask().to_owned();
    let weights = layer.weights().to_owned();
    let mut mask = Array2::zeros(weights.dim());
    for (u, &a) in tracker.rates().iter().enumerate() {
        let k = target_degree(a, cfg)?;
        let scores: Vec<f64> = match cfg.side {
            MaskSide::SpOut => weights.row(u).iter().map(|w| w.abs()).collect(),
            MaskSide::SpIn => weights.column(u).iter().map(|w| w.abs()).collect(),
        };
        for idx in top_k_indices(&scores, k) {
            match cfg.side {
                MaskSide::SpOut => mask[[u, idx]] = 1.0,
                MaskSide::SpIn => mask[[idx, u]] = 1.0,
            }
        }
    }
    layer.set_mask(mask)?;
    let dead_channels = variance_rescale(layer, old_mask.view());
    Ok(RefreshOutcome {
        refreshed: true,
        dead_channels,
    })
}

/// Compensate a mask change: for each output channel `j` with `prev` active
/// incoming edges before and `cur` after, multiply `rescale[j]` by
/// `sqrt(prev/cur)`, which preserves the channel's pre-activation second
/// moment when weight magnitudes are comparable. Channels that just lost
/// their last edge are returned as dead and left unscaled; channels with no
/// prior edges are left alone.
pub fn variance_rescale(layer: &mut MaskedLayer, old_mask: ArrayView2<'_, f64>) -> Vec<usize> {
    let mut dead = Vec::new();
    let mut rescale = layer.rescale().to_owned();
    for j in 0..layer.out_dim() {
        let prev = old_mask.column(j).iter().filter(|&&m| m != 0.0).count();
        let cur = layer.col_degree(j);
        if prev == 0 {
            continue;
        }
        if cur == 0 {
            dead.push(j);
        } else if cur != prev {
            rescale[j] *= (prev as f64 / cur as f64).sqrt();
        }
    }
    layer
        .set_rescale(rescale)
        .expect("rescale length unchanged");
    dead
}

/// Result of a `threshold_prune` sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PruneOutcome {
    pub edges_removed: usize,
    pub units_pruned: usize,
}

/// Hard budget gate on outgoing edges: any row whose traffic `a * k`
/// exceeds `tau` loses its weakest active edges, in ascending `|W|` order,
/// until the budget holds or only `m` edges remain. Nothing is regrown and
/// rescale factors are untouched, so applying it twice is a no-op.
pub fn threshold_prune(
    layer: &mut MaskedLayer,
    tracker: &ActivityTracker,
    tau: f64,
    m: usize,
) -> Result<PruneOutcome> {
    if !(tau > 0.0) {
        return Err(Error::config(format!("tau must be positive, got {tau}")));
    }
    if tracker.len() != layer.in_dim() {
        return Err(Error::shape(format!(
            "tracker has {} units, layer has {} rows",
            tracker.len(),
            layer.in_dim()
        )));
    }
    let mut outcome = PruneOutcome {
        edges_removed: 0,
        units_pruned: 0,
    };
    let mut mask = layer.mask().to_owned();
    for (u, &a) in tracker.rates().iter().enumerate() {
        let mut active: Vec<usize> = (0..layer.out_dim())
            .filter(|&j| mask[[u, j]] != 0.0)
            .collect();
        let mut k = active.len();
        if a * k as f64 <= tau {
            continue;
        }
        active.sort_by(|&i, &j| {
            layer.weights()[[u, i]]
                .abs()
                .total_cmp(&layer.weights()[[u, j]].abs())
                .then_with(|| i.cmp(&j))
        });
        let mut removed_here = 0;
        for &j in &active {
            if a * k as f64 <= tau || k <= m {
                break;
            }
            mask[[u, j]] = 0.0;
            k -= 1;
            removed_here += 1;
        }
        if removed_here > 0 {
            outcome.edges_removed += removed_here;
            outcome.units_pruned += 1;
        }
    }
    layer.set_mask(mask)?;
    Ok(outcome)
}

/// Budget state of every managed unit, in unit order.
pub fn traffic_snapshot(
    layer: &MaskedLayer,
    tracker: &ActivityTracker,
    cfg: &BudgetConfig,
) -> Result<Vec<TrafficRecord>> {
    if tracker.len() != cfg.unit_count(layer) {
        return Err(Error::shape(format!(
            "tracker has {} units, managed side has {}",
            tracker.len(),
            cfg.unit_count(layer)
        )));
    }
    Ok(tracker
        .rates()
        .iter()
        .enumerate()
        .map(|(u, &a)| {
            let k = match cfg.side {
                MaskSide::SpOut => layer.row_degree(u),
                MaskSide::SpIn => layer.col_degree(u),
            };
            TrafficRecord {
                unit: u,
                a,
                k,
                t: a * k as f64,
                saturated: k <= cfg.m || k >= cfg.max_degree,
            }
        })
        .collect())
}

/// Keep the globally strongest `round(density * total)` weights across the
/// given layers and mask the rest. Every entry competes, masked or not. Ties
/// resolve toward earlier layers and lower flat indices. Returns the number
/// of entries kept.
pub fn magnitude_prune_global(
    network: &mut Network,
    density: f64,
    layers: &[usize],
) -> Result<usize> {
    if !(density > 0.0 && density <= 1.0) {
        return Err(Error::config(format!(
            "density must be in (0, 1], got {density}"
        )));
    }
    if layers.is_empty() {
        return Err(Error::config("magnitude prune needs at least one layer"));
    }
    for &l in layers {
        if l >= network.num_layers() {
            return Err(Error::config(format!(
                "layer index {l} out of range ({} layers)",
                network.num_layers()
            )));
        }
    }
    let mut entries: Vec<(f64, usize, usize)> = Vec::new();
    for &l in layers {
        let w = network.layer(l).weights();
        for (flat, &v) in w.iter().enumerate() {
            entries.push((v.abs(), l, flat));
        }
    }
    let keep = ((density * entries.len() as f64) + 0.5).floor() as usize;
    entries.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then_with(|| a.1.cmp(&b.1))
            .then_with(|| a.2.cmp(&b.2))
    });
    entries.truncate(keep);

    for &l in layers {
        let dim = network.layer(l).weights().dim();
        network
            .layer_mut(l)
            .set_mask(Array2::zeros(dim))
            .expect("same shape");
    }
    for &(_, l, flat) in &entries {
        let cols = network.layer(l).out_dim();
        let mut mask = network.layer(l).mask().to_owned();
        mask[[flat / cols, flat % cols]] = 1.0;
        network.layer_mut(l).set_mask(mask).expect("same shape");
    }
    Ok(keep)
}

/// Fixed-degree baseline: every managed unit keeps exactly its `k_fixed`
/// strongest weights. Same regrowth semantics as `refresh_masks`, but no
/// tracker and no rescale adjustment.
pub fn activation_topk_prune(
    layer: &mut MaskedLayer,
    side: MaskSide,
    k_fixed: usize,
) -> Result<()> {
    let slots = match side {
        MaskSide::SpIn => layer.in_dim(),
        MaskSide::SpOut => layer.out_dim(),
    };
    if k_fixed == 0 || k_fixed > slots {
        return Err(Error::config(format!(
            "k_fixed must be in [1, {slots}], got {k_fixed}"
        )));
    }
    let units = match side {
        MaskSide::SpIn => layer.out_dim(),
        MaskSide::SpOut => layer.in_dim(),
    };
    let weights = layer.weights().to_owned();
    let mut mask = Array2::zeros(weights.dim());
    for u in 0..units {
        let scores: Vec<f64> = match side {
            MaskSide::SpOut => weights.row(u).iter().map(|w| w.abs()).collect(),
            MaskSide::SpIn => weights.column(u).iter().map(|w| w.abs()).collect(),
        };
        for idx in top_k_indices(&scores, k_fixed) {
            match side {
                MaskSide::SpOut => mask[[u, idx]] = 1.0,
                MaskSide::SpIn => mask[[idx, u]] = 1.0,
            }
        }
    }
    layer.set_mask(mask)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init_network;
    use crate::rng::seed_stream;
    use ndarray::{array, Array2};
    use proptest::prelude::*;
    use rand::Rng;

    fn cfg(side: MaskSide, beta: f64, d0: f64, m: usize, max_degree: usize) -> BudgetConfig {
        BudgetConfig {
            beta,
            d0,
            tau: f64::INFINITY,
            m,
            max_degree,
            delta: 1,
            warmup: 0,
            alpha: 0.1,
            eps_clamp: 1e-4,
            side,
        }
    }

    fn layer_from(weights: Array2<f64>) -> MaskedLayer {
        let mut net = init_network(&[weights.nrows(), weights.ncols()], 0).unwrap();
        net.layer_mut(0).weights_mut().assign(&weights);
        net.layer(0).clone()
    }

    fn tracker_with(rates: &[f64]) -> ActivityTracker {
        let mut t = ActivityTracker::new(rates.len(), 1e-4).unwrap();
        t.set_rates(rates).unwrap();
        t
    }

    #[test]
    fn activity_full_replacement() {
        // 3 of 10 samples active with alpha = 1 leaves exactly the batch rate.
        let mut t = ActivityTracker::new(1, 1e-4).unwrap();
        let mut acts = Array2::zeros((10, 1));
        acts[[0, 0]] = 1.0;
        acts[[4, 0]] = 0.2;
        acts[[9, 0]] = 3.0;
        update_activity(&mut t, acts.view(), 1.0).unwrap();
        assert_eq!(t.rates()[0], 0.3);
    }

    #[test]
    fn activity_ema_step() {
        let mut t = ActivityTracker::new(1, 1e-4).unwrap();
        let acts = Array2::ones((8, 1));
        update_activity(&mut t, acts.view(), 0.1).unwrap();
        assert!((t.rates()[0] - 0.55).abs() < 1e-12);
    }

    #[test]
    fn activity_clamps_at_floor() {
        let mut t = ActivityTracker::new(2, 1e-4).unwrap();
        let acts = Array2::zeros((4, 2));
        update_activity(&mut t, acts.view(), 1.0).unwrap();
        assert_eq!(t.rates(), &[1e-4, 1e-4]);
        let ones = Array2::ones((4, 2));
        update_activity(&mut t, ones.view(), 1.0).unwrap();
        assert_eq!(t.rates(), &[1.0 - 1e-4, 1.0 - 1e-4]);
    }

    #[test]
    fn activity_counts_only_strictly_positive() {
        let mut t = ActivityTracker::new(4, 1e-4).unwrap();
        let acts = array![[1.0, 0.0, -2.0, 1e-9]];
        update_activity(&mut t, acts.view(), 1.0).unwrap();
        assert_eq!(t.rates()[0], 1.0 - 1e-4);
        assert_eq!(t.rates()[1], 1e-4);
        assert_eq!(t.rates()[2], 1e-4);
        assert_eq!(t.rates()[3], 1.0 - 1e-4);
    }

    #[test]
    fn activity_is_order_independent() {
        let mut rng = seed_stream(1, "test/order");
        let acts = Array2::from_shape_fn((64, 5), |_| rng.random_range(-1.0..1.0));
        let mut shuffled = acts.clone();
        for r in (1..64).rev() {
            let s = rng.random_range(0..=r);
            for c in 0..5 {
                let tmp = shuffled[[r, c]];
                shuffled[[r, c]] = shuffled[[s, c]];
                shuffled[[s, c]] = tmp;
            }
        }
        let mut a = ActivityTracker::new(5, 1e-4).unwrap();
        let mut b = ActivityTracker::new(5, 1e-4).unwrap();
        update_activity(&mut a, acts.view(), 0.3).unwrap();
        update_activity(&mut b, shuffled.view(), 0.3).unwrap();
        assert_eq!(a.rates(), b.rates());
    }

    #[test]
    fn activity_rejects_empty_batch() {
        let mut t = ActivityTracker::new(2, 1e-4).unwrap();
        let acts = Array2::zeros((0, 2));
        assert!(update_activity(&mut t, acts.view(), 0.5).is_err());
    }

    #[test]
    fn target_degree_neutral_rate_gives_d0() {
        let c = cfg(MaskSide::SpOut, 0.5, 32.0, 1, 128);
        assert_eq!(target_degree(0.5, &c).unwrap(), 32);
    }

    #[test]
    fn target_degree_quiet_unit() {
        // 32 + ln(4) / 0.5 = 34.77..., rounds half-up to 35.
        let c = cfg(MaskSide::SpOut, 0.5, 32.0, 1, 128);
        assert_eq!(target_degree(0.2, &c).unwrap(), 35);
    }

    #[test]
    fn target_degree_clips_both_ends() {
        let c = cfg(MaskSide::SpOut, 0.5, 32.0, 1, 40);
        // 32 + ln(99)/0.5 = 41.19 -> 41 -> clipped to 40.
        assert_eq!(target_degree(0.01, &c).unwrap(), 40);
        // 32 + ln(1/99)/0.5 = 22.8 -> 23; floor clip at m.
        let tight = cfg(MaskSide::SpOut, 0.05, 32.0, 25, 40);
        assert_eq!(target_degree(0.99, &tight).unwrap(), 25);
    }

    #[test]
    fn target_degree_rejects_degenerate_rates() {
        let c = cfg(MaskSide::SpOut, 0.5, 32.0, 1, 128);
        assert!(target_degree(0.0, &c).is_err());
        assert!(target_degree(1.0, &c).is_err());
    }

    #[test]
    fn refresh_is_gated_by_warmup_and_interval() {
        let mut layer = layer_from(array![[0.9, 0.1], [0.2, 0.8]]);
        let tracker = tracker_with(&[0.5, 0.5]);
        let mut c = cfg(MaskSide::SpOut, 1.0, 1.0, 1, 2);
        c.warmup = 100;
        c.delta = 10;
        let before = layer.mask().to_owned();
        let out = refresh_masks(&mut layer, &tracker, &c, 90).unwrap();
        assert!(!out.refreshed);
        assert_eq!(layer.mask(), before.view());
        let out = refresh_masks(&mut layer, &tracker, &c, 105).unwrap();
        assert!(!out.refreshed);
        let out = refresh_masks(&mut layer, &tracker, &c, 100).unwrap();
        assert!(out.refreshed);
    }

    #[test]
    fn refresh_regrows_from_masked_entries() {
        // Strongest weight is currently masked; a refresh with k = 1 must
        // pick it anyway.
        let mut layer = layer_from(array![[0.9, 0.1]]);
        layer.set_mask(array![[0.0, 1.0]]).unwrap();
        let tracker = tracker_with(&[0.5]);
        let c = cfg(MaskSide::SpOut, 1.0, 1.0, 1, 2);
        refresh_masks(&mut layer, &tracker, &c, 0).unwrap();
        assert_eq!(layer.mask(), array![[1.0, 0.0]].view());
    }

    #[test]
    fn refresh_breaks_ties_toward_low_indices() {
        let mut layer = layer_from(array![[0.5, 0.5, 0.2]]);
        let tracker = tracker_with(&[0.5]);
        let c = cfg(MaskSide::SpOut, 1.0, 2.0, 1, 3);
        refresh_masks(&mut layer, &tracker, &c, 0).unwrap();
        assert_eq!(layer.mask(), array![[1.0, 1.0, 0.0]].view());
    }

    #[test]
    fn refresh_sp_in_masks_columns() {
        let mut layer = layer_from(array![[0.9, 0.05], [0.1, 0.6], [0.5, 0.4]]);
        let tracker = tracker_with(&[0.5, 0.5]);
        let c = cfg(MaskSide::SpIn, 1.0, 1.0, 1, 3);
        refresh_masks(&mut layer, &tracker, &c, 0).unwrap();
        assert_eq!(
            layer.mask(),
            array![[1.0, 0.0], [0.0, 1.0], [0.0, 0.0]].view()
        );
    }

    #[test]
    fn refresh_applies_variance_rescale() {
        // Column 0 goes from 8 active to 2 active: rescale *= sqrt(8/2) = 2.
        let mut net = init_network(&[8, 1], 3).unwrap();
        net.layer_mut(0)
            .weights_mut()
            .assign(&array![[0.8], [0.7], [0.6], [0.5], [0.4], [0.3], [0.2], [0.1]]);
        let mut layer = net.layer(0).clone();
        let tracker = tracker_with(&[0.5]);
        let c = cfg(MaskSide::SpIn, 1.0, 2.0, 1, 8);
        refresh_masks(&mut layer, &tracker, &c, 0).unwrap();
        assert_eq!(layer.col_degree(0), 2);
        assert_eq!(layer.rescale()[0], 2.0);
    }

    #[test]
    fn rescale_identity_when_counts_match() {
        let mut layer = layer_from(array![[0.9, 0.1], [0.2, 0.8]]);
        let old = layer.mask().to_owned();
        let dead = variance_rescale(&mut layer, old.view());
        assert!(dead.is_empty());
        assert_eq!(layer.rescale(), array![1.0, 1.0].view());
    }

    #[test]
    fn rescale_reports_newly_dead_channels() {
        let mut layer = layer_from(array![[0.9, 0.1], [0.2, 0.8]]);
        let old = layer.mask().to_owned();
        layer.set_mask(array![[0.0, 1.0], [0.0, 0.0]]).unwrap();
        let dead = variance_rescale(&mut layer, old.view());
        assert_eq!(dead, vec![0]);
        assert_eq!(layer.rescale()[0], 1.0);
        assert_eq!(layer.rescale()[1], 2.0_f64.sqrt());
    }

    #[test]
    fn rescale_factor_sqrt_prev_over_cur() {
        let mut net = init_network(&[9, 1], 4).unwrap();
        let mut layer = net.layer_mut(0).clone();
        let old = layer.mask().to_owned();
        let mut mask = Array2::zeros((9, 1));
        for i in 0..4 {
            mask[[i, 0]] = 1.0;
        }
        layer.set_mask(mask).unwrap();
        variance_rescale(&mut layer, old.view());
        assert!((layer.rescale()[0] - 1.5).abs() < 1e-12);
    }

    #[test]
    fn rescale_preserves_second_moment_for_equal_magnitudes() {
        // Equal-magnitude random-sign weights, i.i.d. standard normal inputs:
        // E[z^2] = k w^2 exactly, and the sqrt(prev/cur) factor keeps it
        // fixed through a prune. Monte Carlo check within a few percent.
        let mut rng = seed_stream(5, "test/moment");
        let w = 0.3;
        let weights =
            Array2::from_shape_fn((16, 1), |_| if rng.random::<bool>() { w } else { -w });
        let mut layer = layer_from(weights);
        let inputs = Array2::from_shape_fn((20_000, 16), |_| {
            rand_distr::Distribution::sample(
                &rand_distr::Normal::new(0.0, 1.0).unwrap(),
                &mut rng,
            )
        });
        let second_moment = |layer: &MaskedLayer| {
            let eff = layer.effective_weights();
            let z = inputs.dot(&eff);
            z.iter().map(|v| v * v).sum::<f64>() / z.len() as f64
        };
        let before = second_moment(&layer);
        let tracker = tracker_with(&[0.5]);
        let c = cfg(MaskSide::SpIn, 1.0, 5.0, 1, 16);
        refresh_masks(&mut layer, &tracker, &c, 0).unwrap();
        assert_eq!(layer.col_degree(0), 5);
        let after = second_moment(&layer);
        assert!(
            (after / before - 1.0).abs() < 0.05,
            "second moment drifted: {before} -> {after}"
        );
    }

    #[test]
    fn threshold_leaves_quiet_units_alone() {
        let mut layer = layer_from(Array2::from_elem((1, 10), 0.5));
        let tracker = tracker_with(&[0.11]);
        let out = threshold_prune(&mut layer, &tracker, 2.0, 1).unwrap();
        assert_eq!(out.edges_removed, 0);
        assert_eq!(layer.row_degree(0), 10);
    }

    #[test]
    fn threshold_prunes_busy_unit_to_budget() {
        let weights = Array2::from_shape_fn((1, 10), |(_, j)| 0.1 * (j + 1) as f64);
        let mut layer = layer_from(weights);
        let tracker = tracker_with(&[0.72]);
        let out = threshold_prune(&mut layer, &tracker, 2.0, 1).unwrap();
        // 0.72 * k <= 2 first holds at k = 2; the two largest weights stay.
        assert_eq!(layer.row_degree(0), 2);
        assert_eq!(out.edges_removed, 8);
        assert_eq!(out.units_pruned, 1);
        assert_eq!(layer.mask()[[0, 8]], 1.0);
        assert_eq!(layer.mask()[[0, 9]], 1.0);
    }

    #[test]
    fn threshold_respects_degree_floor() {
        let mut layer = layer_from(Array2::from_elem((1, 10), 0.5));
        let tracker = tracker_with(&[0.9]);
        threshold_prune(&mut layer, &tracker, 0.5, 3).unwrap();
        assert_eq!(layer.row_degree(0), 3);
    }

    #[test]
    fn threshold_infinite_tau_is_a_no_op() {
        let mut layer = layer_from(Array2::from_elem((4, 6), 0.5));
        let tracker = tracker_with(&[0.9, 0.9, 0.9, 0.9]);
        let out = threshold_prune(&mut layer, &tracker, f64::INFINITY, 1).unwrap();
        assert_eq!(out.edges_removed, 0);
        assert_eq!(out.units_pruned, 0);
        assert_eq!(layer.active_count(), 24);
    }

    #[test]
    fn threshold_is_idempotent() {
        let mut rng = seed_stream(6, "test/idem");
        let weights = Array2::from_shape_fn((8, 12), |_| rng.random_range(-1.0..1.0));
        let mut layer = layer_from(weights);
        let rates: Vec<f64> = (0..8).map(|_| rng.random_range(0.05..0.95)).collect();
        let tracker = tracker_with(&rates);
        threshold_prune(&mut layer, &tracker, 3.0, 1).unwrap();
        let first = layer.mask().to_owned();
        let out = threshold_prune(&mut layer, &tracker, 3.0, 1).unwrap();
        assert_eq!(layer.mask(), first.view());
        assert_eq!(out.edges_removed, 0);
    }

    #[test]
    fn snapshot_reports_traffic_and_saturation() {
        let mut layer = layer_from(Array2::from_elem((3, 128), 0.5));
        let mut mask = Array2::ones((3, 128));
        for j in 0..128 {
            mask[[0, j]] = if j < 32 { 1.0 } else { 0.0 };
            mask[[1, j]] = 0.0;
        }
        layer.set_mask(mask).unwrap();
        let tracker = tracker_with(&[0.5, 0.3, 0.25]);
        let c = cfg(MaskSide::SpOut, 0.1, 64.0, 1, 128);
        let records = traffic_snapshot(&layer, &tracker, &c).unwrap();
        assert_eq!(records.len(), 3);
        assert_eq!(records[0].unit, 0);
        assert_eq!(records[0].k, 32);
        assert!((records[0].t - 16.0).abs() < 1e-12);
        assert!(!records[0].saturated);
        // All-zero row: k = 0 <= m, saturated.
        assert_eq!(records[1].k, 0);
        assert_eq!(records[1].t, 0.0);
        assert!(records[1].saturated);
        // Full row sits at max_degree, also saturated.
        assert_eq!(records[2].k, 128);
        assert!(records[2].saturated);
    }

    #[test]
    fn magnitude_prune_keeps_strongest_global_half() {
        let mut net = init_network(&[2, 2, 1], 7).unwrap();
        net.layer_mut(0)
            .weights_mut()
            .assign(&array![[0.4, 0.1], [0.3, 0.2]]);
        let kept = magnitude_prune_global(&mut net, 0.5, &[0]).unwrap();
        assert_eq!(kept, 2);
        assert_eq!(
            net.layer(0).mask(),
            array![[1.0, 0.0], [1.0, 0.0]].view()
        );
    }

    #[test]
    fn magnitude_prune_density_one_keeps_everything() {
        let mut net = init_network(&[5, 7, 1], 8).unwrap();
        magnitude_prune_global(&mut net, 1.0, &[0, 1]).unwrap();
        assert_eq!(net.layer(0).active_count(), 35);
        assert_eq!(net.layer(1).active_count(), 7);
    }

    #[test]
    fn magnitude_prune_pools_across_layers() {
        let mut net = init_network(&[2, 2, 2], 9).unwrap();
        net.layer_mut(0)
            .weights_mut()
            .assign(&array![[0.9, 0.8], [0.7, 0.6]]);
        net.layer_mut(1)
            .weights_mut()
            .assign(&array![[0.1, 0.2], [0.1, 0.1]]);
        magnitude_prune_global(&mut net, 0.5, &[0, 1]).unwrap();
        assert_eq!(net.layer(0).active_count(), 4);
        assert_eq!(net.layer(1).active_count(), 0);
    }

    #[test]
    fn magnitude_prune_rejects_bad_density() {
        let mut net = init_network(&[2, 2], 10).unwrap();
        assert!(magnitude_prune_global(&mut net, 0.0, &[0]).is_err());
        assert!(magnitude_prune_global(&mut net, 1.5, &[0]).is_err());
        assert!(magnitude_prune_global(&mut net, 0.5, &[]).is_err());
        assert!(magnitude_prune_global(&mut net, 0.5, &[3]).is_err());
    }

    #[test]
    fn topk_prune_fixed_degree() {
        let mut layer = layer_from(array![[0.9, 0.1, 0.5], [0.2, 0.8, 0.3]]);
        activation_topk_prune(&mut layer, MaskSide::SpOut, 1).unwrap();
        assert_eq!(
            layer.mask(),
            array![[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]].view()
        );
        activation_topk_prune(&mut layer, MaskSide::SpOut, 3).unwrap();
        assert_eq!(layer.active_count(), 6);
        assert!(activation_topk_prune(&mut layer, MaskSide::SpOut, 4).is_err());
        assert!(activation_topk_prune(&mut layer, MaskSide::SpOut, 0).is_err());
    }

    #[test]
    fn config_validation_names_offending_values() {
        let mut c = cfg(MaskSide::SpOut, 0.5, 32.0, 1, 128);
        c.beta = -1.0;
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("beta"), "message was: {err}");
        let mut c = cfg(MaskSide::SpOut, 0.5, 32.0, 1, 128);
        c.alpha = 0.0;
        assert!(c.validate().unwrap_err().to_string().contains("alpha"));
        let c = cfg(MaskSide::SpOut, 0.5, 32.0, 200, 128);
        assert!(c.validate().is_err());
    }

    proptest! {
        #[test]
        fn target_degree_is_monotone_decreasing_in_rate(
            a1 in 0.01f64..0.99,
            a2 in 0.01f64..0.99,
            beta in 0.05f64..2.0,
            d0 in 0.0f64..64.0,
        ) {
            let c = cfg(MaskSide::SpOut, beta, d0, 1, 1000);
            let (lo, hi) = if a1 <= a2 { (a1, a2) } else { (a2, a1) };
            let k_lo = target_degree(lo, &c).unwrap();
            let k_hi = target_degree(hi, &c).unwrap();
            prop_assert!(k_lo >= k_hi);
        }

        #[test]
        fn refresh_hits_target_degrees_exactly(
            rows in 2usize..8,
            cols in 2usize..10,
            seed in 0u64..500,
            beta in 0.1f64..1.5,
        ) {
            let mut rng = seed_stream(seed, "prop/degrees");
            let weights = Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0));
            let mut layer = layer_from(weights);
            let rates: Vec<f64> = (0..rows).map(|_| rng.random_range(0.01..0.99)).collect();
            let tracker = tracker_with(&rates);
            let c = cfg(MaskSide::SpOut, beta, cols as f64 / 2.0, 1, cols);
            refresh_masks(&mut layer, &tracker, &c, 0).unwrap();
            for (u, &a) in rates.iter().enumerate() {
                let want = target_degree(a, &c).unwrap();
                prop_assert_eq!(layer.row_degree(u), want);
            }
        }

        #[test]
        fn refresh_ignores_previous_mask(
            rows in 2usize..7,
            cols in 2usize..9,
            seed in 0u64..500,
        ) {
            let mut rng = seed_stream(seed, "prop/maskfree");
            let weights = Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0));
            let rates: Vec<f64> = (0..rows).map(|_| rng.random_range(0.05..0.95)).collect();
            let tracker = tracker_with(&rates);
            let c = cfg(MaskSide::SpOut, 0.5, cols as f64 / 2.0, 1, cols);

            let mut a = layer_from(weights.clone());
            let prior = Array2::from_shape_fn((rows, cols), |_| {
                if rng.random::<bool>() { 1.0 } else { 0.0 }
            });
            a.set_mask(prior).unwrap();
            let mut b = layer_from(weights);
            refresh_masks(&mut a, &tracker, &c, 0).unwrap();
            refresh_masks(&mut b, &tracker, &c, 0).unwrap();
            prop_assert_eq!(a.mask(), b.mask());
        }

        #[test]
        fn sp_in_is_transpose_of_sp_out(
            rows in 2usize..7,
            cols in 2usize..9,
            seed in 0u64..500,
        ) {
            let mut rng = seed_stream(seed, "prop/transpose");
            let weights = Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0));
            let rates: Vec<f64> = (0..rows).map(|_| rng.random_range(0.05..0.95)).collect();
            let tracker = tracker_with(&rates);

            let mut out_layer = layer_from(weights.clone());
            let c_out = cfg(MaskSide::SpOut, 0.5, cols as f64 / 2.0, 1, cols);
            refresh_masks(&mut out_layer, &tracker, &c_out, 0).unwrap();

            let mut in_layer = layer_from(weights.t().to_owned());
            let c_in = cfg(MaskSide::SpIn, 0.5, cols as f64 / 2.0, 1, cols);
            refresh_masks(&mut in_layer, &tracker, &c_in, 0).unwrap();

            let transposed = out_layer.mask().t().to_owned();
            prop_assert_eq!(transposed, in_layer.mask().to_owned());
        }

        #[test]
        fn threshold_prune_is_idempotent_prop(
            rows in 1usize..6,
            cols in 2usize..10,
            seed in 0u64..500,
            tau in 0.5f64..4.0,
        ) {
            let mut rng = seed_stream(seed, "prop/threshidem");
            let weights = Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0));
            let mut layer = layer_from(weights);
            let rates: Vec<f64> = (0..rows).map(|_| rng.random_range(0.05..0.95)).collect();
            let tracker = tracker_with(&rates);
            threshold_prune(&mut layer, &tracker, tau, 1).unwrap();
            let first = layer.mask().to_owned();
            for (u, &a) in rates.iter().enumerate() {
                let k = layer.row_degree(u);
                prop_assert!(a * k as f64 <= tau || k <= 1);
            }
            let again = threshold_prune(&mut layer, &tracker, tau, 1).unwrap();
            prop_assert_eq!(again.edges_removed, 0);
            prop_assert_eq!(layer.mask(), first.view());
        }

        #[test]
        fn magnitude_prune_counts_match_density(
            rows in 2usize..7,
            cols in 2usize..9,
            density in 0.05f64..1.0,
            seed in 0u64..500,
        ) {
            let mut net = init_network(&[rows, cols, 2], seed).unwrap();
            let kept = magnitude_prune_global(&mut net, density, &[0]).unwrap();
            let total = rows * cols;
            let want = ((density * total as f64) + 0.5).floor() as usize;
            prop_assert_eq!(kept, want);
            prop_assert_eq!(net.layer(0).active_count(), want.min(total));
            prop_assert_eq!(net.layer(1).active_count(), cols * 2);
        }
    }
}
