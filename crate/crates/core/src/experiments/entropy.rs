//! Entropy/decorrelation comparison: a budgeted arm against a global
//! magnitude-pruning baseline held to the budgeted arm's realized density
//! at every cycle, so the two codes are compared at matched sparsity.

use ndarray::s;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::Result;
use crate::metrics::{binary_entropy_sum, empirical_code_entropy, mean_abs_correlation, pearson};
use crate::nn::{self, Batch};
use crate::rng::seed_stream;
use crate::sparsity::magnitude_prune_global;
use crate::tasks::gen_dnf_safety;

use super::{
    ArmSummary, BatchCycler, Details, ExperimentResult, Harness, MetricRow, MiCheckpoint,
};

/// Which maintenance rule an arm of the comparison uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntropySide {
    Budgeted,
    Magnitude,
}

pub fn run_entropy_comparison(cfg: &RunConfig, seed: u64) -> Result<ExperimentResult> {
    let plan = cfg.cycle_plan();
    plan.validate()?;
    let spec = cfg.dnf_spec()?;
    let n_eval = 8192;
    let n_train = 2048;
    let (full, _) = gen_dnf_safety(&spec, n_train + n_eval, seed)?;
    // The block patterns alone span only a handful of distinct inputs, so the
    // task is jittered the same way the XOR corners are: Gaussian noise on the
    // training inputs, labels untouched. Accuracy is still read off the clean
    // split; the code probes run on a fixed jittered copy of it so pattern
    // counts reflect how finely the layer resolves its noisy input space.
    let train = jitter(
        &slice(&full, 0, n_train),
        cfg.network.noise_std,
        seed,
        "entropy/train-jitter",
    );
    let eval = slice(&full, n_train, n_eval);
    let probe_set = jitter(&eval, cfg.network.noise_std, seed, "entropy/probe-jitter");
    let probe = cfg.entropy.probe_units;

    // Budgeted arm, recording the density after each cycle's refresh so the
    // baseline can be held to the same trajectory.
    let mut bb = Harness::new(cfg, seed)?;
    let mut bb_cycler = BatchCycler::new(train.clone(), cfg.network.batch_size)?;
    let mut rows: Vec<MetricRow> = Vec::new();
    let mut density_after: Vec<f64> = Vec::new();
    for cycle in 1..=plan.max_cycles as u64 {
        for _ in 0..plan.sgd_steps_per_cycle {
            let batch = bb_cycler.next_batch();
            bb.step(&batch)?;
            if bb.net.steps() % cfg.eval_every as u64 == 0 {
                rows.push(bb.sample_row(cycle, &eval)?);
            }
        }
        bb.maintain(plan.refresh_mode)?;
        density_after.push(bb.density());
    }
    let bb_summary = arm_summary(&bb, &probe_set, probe)?;

    // Traffic ladder: retrain the budgeted arm at a grid of degree offsets
    // spanning the floor to the dense width, identical seed and batches, and
    // probe each trained network once. Every rung is a network that actually
    // lives at its traffic level, so the ladder reads how the budget moves
    // the information the probe code carries.
    let mut checkpoints: Vec<MiCheckpoint> = Vec::new();
    for level in ladder_grid(cfg.budget.m, bb.budget.max_degree, LADDER_RUNGS) {
        let mut rung_cfg = cfg.clone();
        rung_cfg.budget.d0 = level as f64;
        let mut rung = Harness::new(&rung_cfg, seed)?;
        let mut cycler = BatchCycler::new(train.clone(), cfg.network.batch_size)?;
        for _ in 0..plan.max_cycles {
            for _ in 0..plan.sgd_steps_per_cycle {
                let batch = cycler.next_batch();
                rung.step(&batch)?;
            }
            rung.maintain(plan.refresh_mode)?;
        }
        checkpoints.push(probe_checkpoint(&rung, &probe_set, probe)?);
    }

    // Baseline arm: identical init, identical batches; the only difference
    // is the maintenance rule.
    let mut base = Harness::new(cfg, seed)?;
    let mut base_cycler = BatchCycler::new(train, cfg.network.batch_size)?;
    for cycle in 0..plan.max_cycles {
        for _ in 0..plan.sgd_steps_per_cycle {
            let batch = base_cycler.next_batch();
            base.step(&batch)?;
        }
        let target = density_after[cycle];
        if target < 1.0 {
            magnitude_prune_global(&mut base.net, target, &[base.managed_layer])?;
        }
    }
    let base_summary = arm_summary(&base, &probe_set, probe)?;

    let density_matched =
        (bb_summary.realized_density - base_summary.realized_density).abs() <= 0.02;
    let xs: Vec<f64> = checkpoints.iter().map(|c| c.traffic_sum).collect();
    let ys: Vec<f64> = checkpoints.iter().map(|c| c.code_entropy).collect();
    let traffic_mi_correlation = pearson(&xs, &ys).unwrap_or(f64::NAN);

    let success = density_matched
        && bb_summary.entropy_sum > base_summary.entropy_sum
        && bb_summary.mean_abs_corr < base_summary.mean_abs_corr;
    let final_accuracy = nn::evaluate_accuracy(&bb.net, &eval, 0.5)?;
    let result = ExperimentResult {
        experiment: cfg.experiment,
        seed,
        success,
        cycles_used: plan.max_cycles as u64,
        final_accuracy,
        balance: None,
        rows,
        details: Details::Entropy {
            bb: bb_summary,
            baseline: base_summary,
            density_matched,
            checkpoints,
            traffic_mi_correlation,
        },
    };
    result.validate(plan.max_cycles)?;
    Ok(result)
}

fn slice(full: &Batch, start: usize, len: usize) -> Batch {
    let inputs = full.inputs.slice(s![start..start + len, ..]).to_owned();
    let targets = full.targets.slice(s![start..start + len, ..]).to_owned();
    Batch::new(inputs, targets).expect("slice keeps rows aligned")
}

const LADDER_RUNGS: usize = 26;

/// Integer degree offsets from `lo` to `hi` inclusive, spaced roughly
/// geometrically with a minimum step of one. Log spacing matches the
/// controller's log-odds scale, putting more rungs where a degree changes
/// the code the most.
fn ladder_grid(lo: usize, hi: usize, n: usize) -> Vec<usize> {
    if hi <= lo {
        return vec![lo];
    }
    let ratio = (hi as f64 / lo.max(1) as f64).powf(1.0 / (n.max(2) - 1) as f64);
    let mut grid = vec![lo];
    let mut prev = lo;
    while prev < hi {
        let next = ((prev as f64 * ratio).round().max((prev + 1) as f64) as usize).min(hi);
        grid.push(next);
        prev = next;
    }
    grid
}

fn jitter(batch: &Batch, std: f64, seed: u64, stream: &str) -> Batch {
    if std <= 0.0 {
        return batch.clone();
    }
    let mut rng = seed_stream(seed, stream);
    let noise = Normal::new(0.0, std).expect("finite std");
    let mut inputs = batch.inputs.clone();
    for v in inputs.iter_mut() {
        *v += noise.sample(&mut rng);
    }
    Batch::new(inputs, batch.targets.clone()).expect("jitter keeps rows aligned")
}

fn probe_checkpoint(harness: &Harness, eval: &Batch, probe: usize) -> Result<MiCheckpoint> {
    let records = harness.traffic()?;
    let traffic_sum = records.iter().take(probe).map(|r| r.t).sum();
    let pass = nn::forward(&harness.net, eval)?;
    let tracked = &pass.activations[harness.tracked_activation()];
    let probe_acts = tracked.slice(s![.., ..probe]);
    let code_entropy = empirical_code_entropy(probe_acts)?;
    Ok(MiCheckpoint {
        d0: harness.budget.d0,
        traffic_sum,
        code_entropy,
    })
}

fn arm_summary(harness: &Harness, eval: &Batch, probe: usize) -> Result<ArmSummary> {
    let records = harness.traffic()?;
    let pass = nn::forward(&harness.net, eval)?;
    let tracked = &pass.activations[harness.tracked_activation()];
    let corr = mean_abs_correlation(tracked.view());
    let probe_acts = tracked.slice(s![.., ..probe]);
    Ok(ArmSummary {
        realized_density: harness.density(),
        entropy_sum: binary_entropy_sum(harness.tracker.rates())?,
        code_entropy: empirical_code_entropy(probe_acts)?,
        mean_abs_corr: corr.mean_abs_r.unwrap_or(f64::NAN),
        traffic_sum: records.iter().map(|r| r.t).sum(),
    })
}
