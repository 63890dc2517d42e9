//! Run configuration: TOML parsing, per-experiment defaults, validation,
//! and content hashing for artifact headers.
//!
//! A config file only needs to name the experiment; every other key has a
//! default chosen for that experiment. Unknown keys are rejected at any
//! nesting level, and error messages carry the offending key path.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::experiments::{CyclePlan, RefreshMode};
use crate::sparsity::{BudgetConfig, MaskSide};
use crate::tasks::DnfSpec;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    XorBalance,
    DnfSafety,
    DnfWitness,
    ScalingSweep,
    ShockRecovery,
    EntropyComparison,
}

impl ExperimentKind {
    pub fn id(self) -> &'static str {
        match self {
            ExperimentKind::XorBalance => "xor-balance",
            ExperimentKind::DnfSafety => "dnf-safety",
            ExperimentKind::DnfWitness => "dnf-witness",
            ExperimentKind::ScalingSweep => "scaling-sweep",
            ExperimentKind::ShockRecovery => "shock-recovery",
            ExperimentKind::EntropyComparison => "entropy-comparison",
        }
    }

    pub fn all() -> [ExperimentKind; 6] {
        [
            ExperimentKind::XorBalance,
            ExperimentKind::DnfSafety,
            ExperimentKind::DnfWitness,
            ExperimentKind::ScalingSweep,
            ExperimentKind::ShockRecovery,
            ExperimentKind::EntropyComparison,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkSection {
    /// Full layer widths, input and output included. Empty means derived:
    /// the witness/sweep presets size the net from the clause count.
    pub layer_sizes: Vec<usize>,
    pub lr: f64,
    pub batch_size: usize,
    /// Gaussian jitter applied to generated task inputs where supported.
    pub noise_std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BudgetSection {
    pub beta: f64,
    /// 0 means derived: 45% of the dense width of the managed side for the
    /// witness tasks, `entropy.density_target` times that width for the
    /// entropy comparison.
    pub d0: f64,
    pub tau: f64,
    pub m: usize,
    /// 0 means derived from the dense width of the managed side.
    pub max_degree: usize,
    pub delta: u64,
    pub warmup: u64,
    pub alpha: f64,
    pub eps_clamp: f64,
    pub side: MaskSide,
    pub managed_layer: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanSection {
    pub sgd_steps_per_cycle: usize,
    pub refresh_mode: RefreshMode,
    /// 0 means derived: ceil(10 * W * ln(W + 1)) for the witness tasks.
    pub max_cycles: usize,
    pub success_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DnfSection {
    pub num_clauses: usize,
    pub literals_per_clause: usize,
    pub feature_freqs: Vec<f64>,
    pub negatives_per_positive: f64,
    /// Clause count parameter for the witness task (W + 1 clauses are built).
    pub witness_w: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSection {
    pub w_grid: Vec<usize>,
    pub seeds_per_w: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShockSection {
    pub fraction: f64,
    pub shock_step: u64,
    pub post_steps: u64,
    /// Recovered once loss falls within (1 + margin) x pre-shock loss.
    pub recovery_margin: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropySection {
    /// Requested managed-layer density; the baseline arm always matches the
    /// budgeted arm's realized density, this guides the preset only.
    pub density_target: f64,
    pub probe_units: usize,
}

/// Fully resolved run configuration. Serializes to the same TOML dialect it
/// is parsed from, so a resolved echo re-parses to an identical value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub experiment: ExperimentKind,
    pub seeds: Vec<u64>,
    pub out_dir: String,
    pub eval_every: usize,
    pub network: NetworkSection,
    pub budget: BudgetSection,
    pub plan: PlanSection,
    pub dnf: DnfSection,
    pub sweep: SweepSection,
    pub shock: ShockSection,
    pub entropy: EntropySection,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartialNetwork {
    layer_sizes: Option<Vec<usize>>,
    lr: Option<f64>,
    batch_size: Option<usize>,
    noise_std: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartialBudget {
    beta: Option<f64>,
    d0: Option<f64>,
    tau: Option<f64>,
    m: Option<usize>,
    max_degree: Option<usize>,
    delta: Option<u64>,
    warmup: Option<u64>,
    alpha: Option<f64>,
    eps_clamp: Option<f64>,
    side: Option<MaskSide>,
    managed_layer: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartialPlan {
    sgd_steps_per_cycle: Option<usize>,
    refresh_mode: Option<RefreshMode>,
    max_cycles: Option<usize>,
    success_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartialDnf {
    num_clauses: Option<usize>,
    literals_per_clause: Option<usize>,
    feature_freqs: Option<Vec<f64>>,
    negatives_per_positive: Option<f64>,
    witness_w: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartialSweep {
    w_grid: Option<Vec<usize>>,
    seeds_per_w: Option<usize>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartialShock {
    fraction: Option<f64>,
    shock_step: Option<u64>,
    post_steps: Option<u64>,
    recovery_margin: Option<f64>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartialEntropy {
    density_target: Option<f64>,
    probe_units: Option<usize>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartialConfig {
    experiment: ExperimentKind,
    seeds: Option<Vec<u64>>,
    out_dir: Option<String>,
    eval_every: Option<usize>,
    #[serde(default)]
    network: PartialNetwork,
    #[serde(default)]
    budget: PartialBudget,
    #[serde(default)]
    plan: PartialPlan,
    #[serde(default)]
    dnf: PartialDnf,
    #[serde(default)]
    sweep: PartialSweep,
    #[serde(default)]
    shock: PartialShock,
    #[serde(default)]
    entropy: PartialEntropy,
}

fn default_config(kind: ExperimentKind) -> RunConfig {
    let mut cfg = RunConfig {
        experiment: kind,
        seeds: (0..10).collect(),
        out_dir: format!("runs/{}", kind.id()),
        eval_every: 200,
        network: NetworkSection {
            layer_sizes: vec![2, 64, 128, 1],
            lr: 0.1,
            batch_size: 64,
            noise_std: 0.1,
        },
        budget: BudgetSection {
            beta: 0.08,
            d0: 64.0,
            tau: 16.0,
            m: 1,
            max_degree: 0,
            delta: 200,
            warmup: 200,
            alpha: 0.05,
            eps_clamp: 1e-4,
            side: MaskSide::SpOut,
            managed_layer: 1,
        },
        plan: PlanSection {
            sgd_steps_per_cycle: 200,
            refresh_mode: RefreshMode::Controller,
            max_cycles: 40,
            success_accuracy: 1.0,
        },
        dnf: DnfSection {
            num_clauses: 3,
            literals_per_clause: 3,
            feature_freqs: vec![0.11, 0.72, 0.22],
            negatives_per_positive: 1.0,
            witness_w: 8,
        },
        sweep: SweepSection {
            w_grid: vec![4, 8, 16, 32],
            seeds_per_w: 20,
        },
        shock: ShockSection {
            fraction: 0.5,
            shock_step: 3000,
            post_steps: 6000,
            recovery_margin: 0.1,
        },
        entropy: EntropySection {
            density_target: 0.35,
            probe_units: 12,
        },
    };
    match kind {
        ExperimentKind::XorBalance => {
            cfg.seeds = (0..7).collect();
            cfg.budget.tau = 12.0;
            cfg.budget.m = 24;
        }
        ExperimentKind::DnfSafety => {
            cfg.network.layer_sizes = vec![9, 32, 64, 1];
            cfg.network.lr = 0.3;
            cfg.network.noise_std = 0.0;
            cfg.eval_every = 400;
            cfg.budget.tau = 28.0;
            cfg.budget.d0 = 32.0;
            cfg.budget.alpha = 0.2;
            cfg.budget.warmup = 600;
            cfg.plan.refresh_mode = RefreshMode::Threshold;
            cfg.plan.max_cycles = 15;
        }
        ExperimentKind::DnfWitness | ExperimentKind::ScalingSweep => {
            cfg.network.layer_sizes = Vec::new();
            cfg.network.lr = 0.05;
            cfg.network.batch_size = 2;
            cfg.network.noise_std = 0.0;
            cfg.budget.beta = 0.3;
            cfg.budget.d0 = 0.0;
            cfg.budget.m = 2;
            cfg.budget.alpha = 0.2;
            cfg.budget.side = MaskSide::SpIn;
            cfg.budget.managed_layer = 0;
            cfg.budget.delta = 200;
            cfg.budget.warmup = 400;
            cfg.plan.max_cycles = 0;
            cfg.dnf.negatives_per_positive = 2.0;
            if kind == ExperimentKind::DnfWitness {
                cfg.seeds = (0..40).collect();
            } else {
                cfg.seeds = Vec::new();
            }
        }
        ExperimentKind::ShockRecovery => {
            cfg.plan.max_cycles = 60;
        }
        ExperimentKind::EntropyComparison => {
            cfg.network.layer_sizes = vec![9, 32, 64, 1];
            cfg.network.lr = 0.05;
            cfg.network.noise_std = 0.4;
            cfg.budget.beta = 0.3;
            cfg.budget.d0 = 0.0;
            cfg.budget.m = 2;
            cfg.budget.alpha = 0.05;
            cfg.budget.side = MaskSide::SpIn;
            cfg.budget.managed_layer = 1;
            cfg.budget.delta = 100;
            cfg.budget.warmup = 500;
            cfg.plan.sgd_steps_per_cycle = 100;
            cfg.plan.max_cycles = 25;
            cfg.eval_every = 100;
        }
    }
    cfg
}

fn merge(kind: ExperimentKind, p: PartialConfig) -> RunConfig {
    let d = default_config(kind);
    RunConfig {
        experiment: kind,
        seeds: p.seeds.unwrap_or(d.seeds),
        out_dir: p.out_dir.unwrap_or(d.out_dir),
        eval_every: p.eval_every.unwrap_or(d.eval_every),
        network: NetworkSection {
            layer_sizes: p.network.layer_sizes.unwrap_or(d.network.layer_sizes),
            lr: p.network.lr.unwrap_or(d.network.lr),
            batch_size: p.network.batch_size.unwrap_or(d.network.batch_size),
            noise_std: p.network.noise_std.unwrap_or(d.network.noise_std),
        },
        budget: BudgetSection {
            beta: p.budget.beta.unwrap_or(d.budget.beta),
            d0: p.budget.d0.unwrap_or(d.budget.d0),
            tau: p.budget.tau.unwrap_or(d.budget.tau),
            m: p.budget.m.unwrap_or(d.budget.m),
            max_degree: p.budget.max_degree.unwrap_or(d.budget.max_degree),
            delta: p.budget.delta.unwrap_or(d.budget.delta),
            warmup: p.budget.warmup.unwrap_or(d.budget.warmup),
            alpha: p.budget.alpha.unwrap_or(d.budget.alpha),
            eps_clamp: p.budget.eps_clamp.unwrap_or(d.budget.eps_clamp),
            side: p.budget.side.unwrap_or(d.budget.side),
            managed_layer: p.budget.managed_layer.unwrap_or(d.budget.managed_layer),
        },
        plan: PlanSection {
            sgd_steps_per_cycle: p
                .plan
                .sgd_steps_per_cycle
                .unwrap_or(d.plan.sgd_steps_per_cycle),
            refresh_mode: p.plan.refresh_mode.unwrap_or(d.plan.refresh_mode),
            max_cycles: p.plan.max_cycles.unwrap_or(d.plan.max_cycles),
            success_accuracy: p.plan.success_accuracy.unwrap_or(d.plan.success_accuracy),
        },
        dnf: DnfSection {
            num_clauses: p.dnf.num_clauses.unwrap_or(d.dnf.num_clauses),
            literals_per_clause: p
                .dnf
                .literals_per_clause
                .unwrap_or(d.dnf.literals_per_clause),
            feature_freqs: p.dnf.feature_freqs.unwrap_or(d.dnf.feature_freqs),
            negatives_per_positive: p
                .dnf
                .negatives_per_positive
                .unwrap_or(d.dnf.negatives_per_positive),
            witness_w: p.dnf.witness_w.unwrap_or(d.dnf.witness_w),
        },
        sweep: SweepSection {
            w_grid: p.sweep.w_grid.unwrap_or(d.sweep.w_grid),
            seeds_per_w: p.sweep.seeds_per_w.unwrap_or(d.sweep.seeds_per_w),
        },
        shock: ShockSection {
            fraction: p.shock.fraction.unwrap_or(d.shock.fraction),
            shock_step: p.shock.shock_step.unwrap_or(d.shock.shock_step),
            post_steps: p.shock.post_steps.unwrap_or(d.shock.post_steps),
            recovery_margin: p.shock.recovery_margin.unwrap_or(d.shock.recovery_margin),
        },
        entropy: EntropySection {
            density_target: p.entropy.density_target.unwrap_or(d.entropy.density_target),
            probe_units: p.entropy.probe_units.unwrap_or(d.entropy.probe_units),
        },
    }
}

/// Number of cycles after which a witness run is declared stuck.
pub fn auto_max_cycles(w: usize) -> usize {
    (10.0 * w as f64 * ((w + 1) as f64).ln()).ceil() as usize
}

impl RunConfig {
    /// Parse a TOML file, apply the experiment's defaults, resolve derived
    /// fields, and validate.
    pub fn parse_file(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::config(format!("cannot read {}: {e}", path.display()))
        })?;
        RunConfig::parse_str(&text)
    }

    pub fn parse_str(text: &str) -> Result<RunConfig> {
        let partial: PartialConfig = toml::from_str(text)
            .map_err(|e| Error::config(format!("config parse error: {}", e.message())))?;
        let mut cfg = merge(partial.experiment, partial);
        cfg.resolve()?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Fill in derived fields (dense degree bound, auto cycle limits,
    /// witness layer sizes) so the echoed config is concrete.
    fn resolve(&mut self) -> Result<()> {
        match self.experiment {
            ExperimentKind::DnfWitness => {
                let w = self.dnf.witness_w;
                let c = self.dnf.literals_per_clause;
                if self.network.layer_sizes.is_empty() {
                    self.network.layer_sizes = vec![(w + 1) * c, w + 1, 1];
                }
                if self.plan.max_cycles == 0 {
                    self.plan.max_cycles = auto_max_cycles(w);
                }
                if self.budget.d0 == 0.0 {
                    if let Some(d) = self.dense_degree() {
                        self.budget.d0 = (0.45 * d as f64).round();
                    }
                }
            }
            ExperimentKind::ScalingSweep => {
                // Layer sizes and cycle limits vary with W; they stay derived.
            }
            ExperimentKind::EntropyComparison => {
                if self.budget.d0 == 0.0 {
                    if let Some(d) = self.dense_degree() {
                        self.budget.d0 = (self.entropy.density_target * d as f64).round();
                    }
                }
                if self.plan.max_cycles == 0 {
                    return Err(Error::config(
                        "plan.max_cycles: 0 (auto) is only defined for the witness tasks",
                    ));
                }
            }
            _ => {
                if self.plan.max_cycles == 0 {
                    return Err(Error::config(
                        "plan.max_cycles: 0 (auto) is only defined for the witness tasks",
                    ));
                }
            }
        }
        if self.max_degree_is_derivable() {
            if let Some(d) = self.dense_degree() {
                if self.budget.max_degree == 0 {
                    self.budget.max_degree = d;
                }
            }
        }
        Ok(())
    }

    fn max_degree_is_derivable(&self) -> bool {
        !self.network.layer_sizes.is_empty()
    }

    /// Dense width of the managed side, when layer sizes are concrete.
    fn dense_degree(&self) -> Option<usize> {
        let sizes = &self.network.layer_sizes;
        let l = self.budget.managed_layer;
        if l + 1 >= sizes.len() {
            return None;
        }
        Some(match self.budget.side {
            MaskSide::SpOut => sizes[l + 1],
            MaskSide::SpIn => sizes[l],
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.experiment != ExperimentKind::ScalingSweep && self.seeds.is_empty() {
            return Err(Error::config("seeds: at least one seed is required"));
        }
        if self.experiment == ExperimentKind::ScalingSweep && !self.seeds.is_empty() {
            return Err(Error::config(
                "seeds: the scaling sweep derives its seeds from sweep.seeds_per_w; leave the list empty",
            ));
        }
        if self.eval_every == 0 {
            return Err(Error::config("eval_every must be positive"));
        }
        let derived_net = self.network.layer_sizes.is_empty();
        if derived_net && self.experiment != ExperimentKind::ScalingSweep {
            return Err(Error::config(
                "network.layer_sizes: empty (derived) is only defined for the witness tasks",
            ));
        }
        if !derived_net {
            if self.network.layer_sizes.len() < 2 {
                return Err(Error::config(
                    "network.layer_sizes: need at least input and output widths",
                ));
            }
            if self.network.layer_sizes.iter().any(|&s| s == 0) {
                return Err(Error::config("network.layer_sizes: widths must be positive"));
            }
            let l = self.budget.managed_layer;
            if l + 1 >= self.network.layer_sizes.len() {
                return Err(Error::config(format!(
                    "budget.managed_layer: {l} out of range for {} layers",
                    self.network.layer_sizes.len() - 1
                )));
            }
            if self.budget.side == MaskSide::SpOut && l == 0 {
                return Err(Error::config(
                    "budget.side: sp-out on layer 0 would budget raw inputs; pick a hidden layer",
                ));
            }
            self.budget_config()
                .map_err(|e| prefix_key_path("budget", e))?;
        } else if self.budget.max_degree != 0 {
            return Err(Error::config(
                "budget.max_degree: must stay 0 (derived) when layer_sizes are derived",
            ));
        }
        if !(self.network.lr > 0.0 && self.network.lr.is_finite()) {
            return Err(Error::config(format!(
                "network.lr: must be positive, got {}",
                self.network.lr
            )));
        }
        if !(self.network.noise_std >= 0.0 && self.network.noise_std.is_finite()) {
            return Err(Error::config(format!(
                "network.noise_std: must be nonnegative, got {}",
                self.network.noise_std
            )));
        }
        if self.experiment != ExperimentKind::ScalingSweep {
            self.cycle_plan()
                .validate()
                .map_err(|e| prefix_key_path("plan", e))?;
        }
        match self.experiment {
            ExperimentKind::XorBalance | ExperimentKind::ShockRecovery => {
                if self.network.batch_size == 0 {
                    return Err(Error::config("network.batch_size must be positive"));
                }
            }
            ExperimentKind::DnfSafety | ExperimentKind::EntropyComparison => {
                if self.network.batch_size == 0 {
                    return Err(Error::config("network.batch_size must be positive"));
                }
                self.dnf_spec().map_err(|e| prefix_key_path("dnf", e))?;
            }
            ExperimentKind::DnfWitness | ExperimentKind::ScalingSweep => {
                if self.dnf.literals_per_clause == 0 || self.dnf.literals_per_clause > 20 {
                    return Err(Error::config(format!(
                        "dnf.literals_per_clause: must be in 1..=20, got {}",
                        self.dnf.literals_per_clause
                    )));
                }
                if !(self.dnf.negatives_per_positive >= 0.0
                    && self.dnf.negatives_per_positive.is_finite())
                {
                    return Err(Error::config(format!(
                        "dnf.negatives_per_positive: must be nonnegative, got {}",
                        self.dnf.negatives_per_positive
                    )));
                }
            }
        }
        match self.experiment {
            ExperimentKind::DnfWitness => {
                if self.dnf.witness_w == 0 {
                    return Err(Error::config("dnf.witness_w must be positive"));
                }
            }
            ExperimentKind::ScalingSweep => {
                if self.sweep.w_grid.is_empty() {
                    return Err(Error::config("sweep.w_grid must not be empty"));
                }
                if self.sweep.w_grid.iter().any(|&w| w == 0) {
                    return Err(Error::config("sweep.w_grid entries must be positive"));
                }
                if self.sweep.seeds_per_w == 0 {
                    return Err(Error::config("sweep.seeds_per_w must be positive"));
                }
            }
            ExperimentKind::ShockRecovery => {
                if !(self.shock.fraction >= 0.0 && self.shock.fraction < 1.0) {
                    return Err(Error::config(format!(
                        "shock.fraction: must be in [0, 1), got {}",
                        self.shock.fraction
                    )));
                }
                if self.shock.shock_step == 0 {
                    return Err(Error::config("shock.shock_step must be positive"));
                }
                if self.shock.post_steps == 0 {
                    return Err(Error::config("shock.post_steps must be positive"));
                }
                if !(self.shock.recovery_margin > 0.0 && self.shock.recovery_margin.is_finite()) {
                    return Err(Error::config(format!(
                        "shock.recovery_margin: must be positive, got {}",
                        self.shock.recovery_margin
                    )));
                }
            }
            ExperimentKind::EntropyComparison => {
                if !(self.entropy.density_target > 0.0 && self.entropy.density_target <= 1.0) {
                    return Err(Error::config(format!(
                        "entropy.density_target: must be in (0, 1], got {}",
                        self.entropy.density_target
                    )));
                }
                if self.entropy.probe_units == 0 || self.entropy.probe_units > 12 {
                    return Err(Error::config(format!(
                        "entropy.probe_units: must be in 1..=12, got {}",
                        self.entropy.probe_units
                    )));
                }
                if self.plan.refresh_mode != RefreshMode::Controller {
                    return Err(Error::config(
                        "plan.refresh_mode: the entropy comparison and its traffic \
                         ladder are defined for the degree controller",
                    ));
                }
            }
            _ => {}
        }
        Ok(())
    }

    /// The sparsity-side budget settings. Only callable once max_degree is
    /// concrete (i.e. layer sizes resolved).
    pub fn budget_config(&self) -> Result<BudgetConfig> {
        let b = BudgetConfig {
            beta: self.budget.beta,
            d0: self.budget.d0,
            tau: self.budget.tau,
            m: self.budget.m,
            max_degree: self.budget.max_degree,
            delta: self.budget.delta,
            warmup: self.budget.warmup,
            alpha: self.budget.alpha,
            eps_clamp: self.budget.eps_clamp,
            side: self.budget.side,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn cycle_plan(&self) -> CyclePlan {
        CyclePlan {
            sgd_steps_per_cycle: self.plan.sgd_steps_per_cycle,
            refresh_mode: self.plan.refresh_mode,
            max_cycles: self.plan.max_cycles,
            success_accuracy: self.plan.success_accuracy,
        }
    }

    pub fn dnf_spec(&self) -> Result<DnfSpec> {
        let spec = DnfSpec {
            num_clauses: self.dnf.num_clauses,
            literals_per_clause: self.dnf.literals_per_clause,
            feature_freqs: self.dnf.feature_freqs.clone(),
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Concrete layer widths for this run.
    pub fn resolved_layer_sizes(&self) -> Result<Vec<usize>> {
        if self.network.layer_sizes.is_empty() {
            return Err(Error::config(
                "network.layer_sizes are derived per sweep point; use the sweep runner",
            ));
        }
        Ok(self.network.layer_sizes.clone())
    }

    /// The resolved config as TOML, suitable for echoing next to artifacts.
    pub fn resolved_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Hex digest of the resolved config; stamped into every output file.
    pub fn config_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.resolved_toml().as_bytes());
        let digest = h.finalize();
        let mut out = String::with_capacity(64);
        for byte in digest {
            out.push_str(&format!("{byte:02x}"));
        }
        out
    }
}

fn prefix_key_path(section: &str, e: Error) -> Error {
    match e {
        Error::Config(msg) => Error::Config(format!("{section}.{msg}")),
        other => other,
    }
}
