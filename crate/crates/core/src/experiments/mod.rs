//! Experiment orchestration shared across the didactic tasks.
//!
//! Each runner owns its network, activity tracker, and data streams, so seeds
//! run in parallel without shared state. Training alternates fixed-length SGD
//! phases with at most one mask maintenance attempt per cycle; metric rows are
//! always sampled before any structural change at the same step.

mod dnf;
mod entropy;
mod shock;
mod xor;

pub use dnf::{run_dnf_safety, run_dnf_witness, run_scaling_sweep, SweepPoint, SweepTable};
pub use entropy::{run_entropy_comparison, EntropySide};
pub use shock::run_shock_recovery;
pub use xor::run_xor_balance;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentKind, RunConfig};
use crate::error::{Error, Result};
use crate::metrics::{self, BalanceFit};
use crate::nn::{self, Batch, Network};
use crate::sparsity::{
    self, ActivityTracker, BudgetConfig, MaskSide, TrafficRecord,
};

/// Mask maintenance policy applied between SGD phases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RefreshMode {
    /// Degree-law controller: rebuild masks to the target degree each cycle.
    Controller,
    /// Traffic threshold: drop weakest edges while a unit's traffic exceeds tau.
    Threshold,
    /// No structural plasticity; masks stay at their initial value.
    None,
}

impl RefreshMode {
    pub fn id(self) -> &'static str {
        match self {
            RefreshMode::Controller => "controller",
            RefreshMode::Threshold => "threshold",
            RefreshMode::None => "none",
        }
    }
}

/// Whether a witness run interleaves refreshes with SGD or trains plain SGD.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainMode {
    SgdOnly,
    BbAlternating,
}

impl TrainMode {
    pub fn id(self) -> &'static str {
        match self {
            TrainMode::SgdOnly => "sgd-only",
            TrainMode::BbAlternating => "bb-alternating",
        }
    }
}

/// One alternation schedule: SGD phase length plus the maintenance policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CyclePlan {
    pub sgd_steps_per_cycle: usize,
    pub refresh_mode: RefreshMode,
    pub max_cycles: usize,
    /// Evaluation-set accuracy at or above which a run counts as solved.
    pub success_accuracy: f64,
}

impl CyclePlan {
    pub fn validate(&self) -> Result<()> {
        if self.sgd_steps_per_cycle == 0 {
            return Err(Error::config("plan.sgd_steps_per_cycle must be positive"));
        }
        if self.max_cycles == 0 {
            return Err(Error::config("plan.max_cycles must be positive"));
        }
        if !(self.success_accuracy > 0.0 && self.success_accuracy <= 1.0) {
            return Err(Error::config(format!(
                "plan.success_accuracy must be in (0, 1], got {}",
                self.success_accuracy
            )));
        }
        Ok(())
    }

    pub fn total_steps(&self) -> u64 {
        self.sgd_steps_per_cycle as u64 * self.max_cycles as u64
    }
}

/// Metric sample; `traffic` covers every unit on the managed side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub step: u64,
    pub cycle: u64,
    pub accuracy: f64,
    pub loss: f64,
    /// Active-mask fraction of the managed layer.
    pub density: f64,
    /// Sum of per-unit binary entropies of the tracked rates, in nats.
    pub entropy_sum: f64,
    /// Mean absolute pairwise correlation of tracked activations; NaN when
    /// fewer than two units vary.
    #[serde(with = "crate::serde_ext::nullable_f64")]
    pub mean_abs_corr: f64,
    pub traffic: Vec<TrafficRecord>,
}

/// Unit chosen to stand in for one feature, by activation correlation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectorAssignment {
    pub feature: usize,
    pub frequency: f64,
    pub unit: usize,
    pub correlation: f64,
}

/// Entropy/decorrelation metrics for one arm of the comparison run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmSummary {
    pub realized_density: f64,
    pub entropy_sum: f64,
    pub code_entropy: f64,
    pub mean_abs_corr: f64,
    pub traffic_sum: f64,
}

/// Probe-layer state at one budget level of the traffic ladder: the trained
/// network with its masks rebuilt at the given degree offset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MiCheckpoint {
    /// Degree offset the controller was reapplied with.
    pub d0: f64,
    /// Total traffic of the probe units.
    pub traffic_sum: f64,
    /// Plug-in entropy of the probe units' binarized pattern, in nats; the
    /// empirical stand-in for the mutual information carried downstream.
    pub code_entropy: f64,
}

/// Experiment-specific outcome fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Details {
    Balance {
        refresh_mode: RefreshMode,
        success_cycle: Option<u64>,
    },
    Safety {
        tau: f64,
        detectors: Vec<DetectorAssignment>,
        inconclusive: bool,
        rare_ever_exceeded: bool,
        common_exceeded: bool,
        common_final_within: bool,
        prune_events: u64,
    },
    Witness {
        mode: TrainMode,
        w: usize,
    },
    Shock {
        fraction: f64,
        shock_step: u64,
        pre_shock_loss: f64,
        /// Steps until loss re-entered the recovery margin, per branch;
        /// `None` means the budget ran out first.
        recovery_enabled: Option<u64>,
        recovery_disabled: Option<u64>,
    },
    Entropy {
        bb: ArmSummary,
        baseline: ArmSummary,
        density_matched: bool,
        checkpoints: Vec<MiCheckpoint>,
        #[serde(with = "crate::serde_ext::nullable_f64")]
        traffic_mi_correlation: f64,
    },
}

/// Outcome of one seeded run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentResult {
    pub experiment: ExperimentKind,
    pub seed: u64,
    pub success: bool,
    pub cycles_used: u64,
    pub final_accuracy: f64,
    pub balance: Option<BalanceFit>,
    pub rows: Vec<MetricRow>,
    pub details: Details,
}

impl ExperimentResult {
    /// Bookkeeping checks shared by all runners.
    pub fn validate(&self, max_cycles: usize) -> Result<()> {
        if self.cycles_used > max_cycles as u64 {
            return Err(Error::contract(format!(
                "cycles_used {} exceeds max_cycles {max_cycles}",
                self.cycles_used
            )));
        }
        for pair in self.rows.windows(2) {
            if pair[1].step <= pair[0].step {
                return Err(Error::contract(format!(
                    "metric rows out of order at step {}",
                    pair[1].step
                )));
            }
        }
        Ok(())
    }
}

/// Network, tracker, and budget wiring for one managed layer.
#[derive(Clone)]
pub(crate) struct Harness {
    pub net: Network,
    pub tracker: ActivityTracker,
    pub budget: BudgetConfig,
    pub managed_layer: usize,
    pub lr: f64,
    pub alpha: f64,
}

impl Harness {
    pub fn new(cfg: &RunConfig, seed: u64) -> Result<Self> {
        let sizes = cfg.resolved_layer_sizes()?;
        let net = nn::init_network(&sizes, seed)?;
        let budget = cfg.budget_config()?;
        let managed_layer = cfg.budget.managed_layer;
        if managed_layer >= net.num_layers() {
            return Err(Error::config(format!(
                "budget.managed_layer {} out of range for {} layers",
                managed_layer,
                net.num_layers()
            )));
        }
        if budget.side == MaskSide::SpOut && managed_layer == 0 {
            return Err(Error::config(
                "sp-out on layer 0 would track raw inputs; manage a hidden layer",
            ));
        }
        let units = budget.unit_count(net.layer(managed_layer));
        let tracker = ActivityTracker::new(units, budget.eps_clamp)?;
        Ok(Harness {
            net,
            tracker,
            budget,
            managed_layer,
            lr: cfg.network.lr,
            alpha: cfg.budget.alpha,
        })
    }

    /// Index into `ForwardPass::activations` (input excluded) whose
    /// post-rectifier activity feeds the tracker: the masked rows' source
    /// units for SP-out, the masked columns' destination units for SP-in.
    pub fn tracked_activation(&self) -> usize {
        match self.budget.side {
            MaskSide::SpOut => self.managed_layer - 1,
            MaskSide::SpIn => self.managed_layer,
        }
    }

    /// One SGD step: update the activity EMA from the forward pass, then
    /// apply the gradient update. Returns the pre-update loss.
    pub fn step(&mut self, batch: &Batch) -> Result<f64> {
        let pass = nn::forward(&self.net, batch)?;
        let tracked = &pass.activations[self.tracked_activation()];
        sparsity::update_activity(&mut self.tracker, tracked.view(), self.alpha)?;
        nn::train_step(&mut self.net, batch, self.lr)
    }

    /// One maintenance attempt at the end of a cycle. Returns true when the
    /// mask actually changed (the warmup/interval gate may turn it down).
    pub fn maintain(&mut self, mode: RefreshMode) -> Result<bool> {
        let step = self.net.steps();
        match mode {
            RefreshMode::None => Ok(false),
            RefreshMode::Controller => {
                let layer = self.net.layer_mut(self.managed_layer);
                let out = sparsity::refresh_masks(layer, &self.tracker, &self.budget, step)?;
                Ok(out.refreshed)
            }
            RefreshMode::Threshold => {
                if step < self.budget.warmup || step % self.budget.delta != 0 {
                    return Ok(false);
                }
                let layer = self.net.layer_mut(self.managed_layer);
                let out =
                    sparsity::threshold_prune(layer, &self.tracker, self.budget.tau, self.budget.m)?;
                Ok(out.edges_removed > 0)
            }
        }
    }

    /// Traffic snapshot of every unit on the managed side, sorted by unit.
    pub fn traffic(&self) -> Result<Vec<TrafficRecord>> {
        sparsity::traffic_snapshot(self.net.layer(self.managed_layer), &self.tracker, &self.budget)
    }

    pub fn density(&self) -> f64 {
        self.net.layer(self.managed_layer).density()
    }

    /// Metric row from the current state, evaluated on `eval`.
    pub fn sample_row(&self, cycle: u64, eval: &Batch) -> Result<MetricRow> {
        let accuracy = nn::evaluate_accuracy(&self.net, eval, 0.5)?;
        let loss = nn::evaluate_loss(&self.net, eval)?;
        let pass = nn::forward(&self.net, eval)?;
        let tracked = &pass.activations[self.tracked_activation()];
        let corr = metrics::mean_abs_correlation(tracked.view());
        let entropy_sum = metrics::binary_entropy_sum(self.tracker.rates())?;
        Ok(MetricRow {
            step: self.net.steps(),
            cycle,
            accuracy,
            loss,
            density: self.density(),
            entropy_sum,
            mean_abs_corr: corr.mean_abs_r.unwrap_or(f64::NAN),
            traffic: self.traffic()?,
        })
    }
}

/// Pearson correlation between each unit's firing indicator (activation
/// above zero, matching the on-rate the budget rule tracks) and a 0/1
/// feature indicator, returning the best unit per indicator column.
pub(crate) fn assign_detectors(
    activations: ArrayView2<'_, f64>,
    indicators: ArrayView2<'_, f64>,
    frequencies: &[f64],
    floor: f64,
) -> Vec<Option<DetectorAssignment>> {
    let mut out = Vec::with_capacity(indicators.ncols());
    for f in 0..indicators.ncols() {
        let ind: Vec<f64> = indicators.column(f).to_vec();
        let mut best: Option<(usize, f64)> = None;
        for u in 0..activations.ncols() {
            let act: Vec<f64> = activations
                .column(u)
                .iter()
                .map(|&v| if v > 0.0 { 1.0 } else { 0.0 })
                .collect::<Vec<f64>>();
            if let Some(r) = metrics::pearson(&act, &ind) {
                if best.map_or(true, |(_, b)| r > b) {
                    best = Some((u, r));
                }
            }
        }
        out.push(best.and_then(|(unit, correlation)| {
            if correlation >= floor {
                Some(DetectorAssignment {
                    feature: f,
                    frequency: frequencies[f],
                    unit,
                    correlation,
                })
            } else {
                None
            }
        }));
    }
    out
}

/// Slices a fixed pool into consecutive wrapping minibatches.
#[derive(Clone)]
pub(crate) struct BatchCycler {
    pool: Batch,
    batch_size: usize,
    cursor: usize,
}

impl BatchCycler {
    pub fn new(pool: Batch, batch_size: usize) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::config("batch_size must be positive"));
        }
        if pool.is_empty() {
            return Err(Error::config("training pool is empty"));
        }
        Ok(BatchCycler { pool, batch_size, cursor: 0 })
    }

    /// Next minibatch; wraps around the pool, which keeps the step count
    /// independent of the pool length.
    pub fn next_batch(&mut self) -> Batch {
        let n = self.pool.len();
        let take = self.batch_size.min(n);
        let mut inputs = Array2::zeros((take, self.pool.inputs.ncols()));
        let mut targets = Array2::zeros((take, self.pool.targets.ncols()));
        for r in 0..take {
            let src = (self.cursor + r) % n;
            inputs.row_mut(r).assign(&self.pool.inputs.row(src));
            targets.row_mut(r).assign(&self.pool.targets.row(src));
        }
        self.cursor = (self.cursor + take) % n;
        Batch::new(inputs, targets).expect("pool rows are consistent")
    }
}
