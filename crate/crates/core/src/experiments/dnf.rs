//! DNF experiments: rare-feature safety under the traffic threshold, the
//! witness optimization barrier, and the cycle-count scaling sweep.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{auto_max_cycles, RunConfig};
use crate::error::{Error, Result};
use crate::metrics::pearson;
use crate::nn::{self, Batch};
use crate::tasks::{coupon_collector_oracle, gen_dnf_safety, gen_dnf_witness};

use super::{
    assign_detectors, BatchCycler, Details, ExperimentResult, Harness, MetricRow, RefreshMode,
    TrainMode,
};

const DETECTOR_FLOOR: f64 = 0.3;
const ORACLE_TRIALS: usize = 4000;

pub fn run_dnf_safety(cfg: &RunConfig, seed: u64) -> Result<ExperimentResult> {
    let plan = cfg.cycle_plan();
    plan.validate()?;
    let spec = cfg.dnf_spec()?;
    let mut harness = Harness::new(cfg, seed)?;

    // One draw split into train and held-out parts so they never overlap.
    let n_eval = 512;
    let n_train = 2048;
    let (full, meta) = gen_dnf_safety(&spec, n_train + n_eval, seed)?;
    let train = slice_batch(&full, 0, n_train);
    let eval = slice_batch(&full, n_train, n_eval);
    let eval_indicators = meta
        .indicators
        .slice(ndarray::s![n_train..n_train + n_eval, ..])
        .to_owned();
    let mut cycler = BatchCycler::new(train, cfg.network.batch_size)?;

    let mut rows: Vec<MetricRow> = Vec::new();
    let mut prune_events = 0u64;
    let mut success_cycle: Option<u64> = None;
    for cycle in 1..=plan.max_cycles as u64 {
        for _ in 0..plan.sgd_steps_per_cycle {
            let batch = cycler.next_batch();
            harness.step(&batch)?;
            if harness.net.steps() % cfg.eval_every as u64 == 0 {
                rows.push(harness.sample_row(cycle, &eval)?);
            }
        }
        if success_cycle.is_none() {
            let acc = nn::evaluate_accuracy(&harness.net, &eval, 0.5)?;
            if acc >= plan.success_accuracy {
                success_cycle = Some(cycle);
            }
        }
        if harness.maintain(plan.refresh_mode)? {
            prune_events += 1;
        }
    }

    // Attribution happens on the trained network; traffic trajectories are
    // then read back per assigned unit.
    let pass = nn::forward(&harness.net, &eval)?;
    let tracked = &pass.activations[harness.tracked_activation()];
    let assignments = assign_detectors(
        tracked.view(),
        eval_indicators.view(),
        &meta.feature_freqs,
        DETECTOR_FLOOR,
    );
    let inconclusive = assignments.iter().any(|a| a.is_none());
    let detectors: Vec<_> = assignments.into_iter().flatten().collect();

    let tau = harness.budget.tau;
    let mut rare_ever_exceeded = false;
    let mut common_exceeded = false;
    let mut common_final_within = false;
    if !inconclusive {
        let rare = argmin_freq(&meta.feature_freqs);
        let common = argmax_freq(&meta.feature_freqs);
        let rare_unit = detectors[rare].unit;
        let common_unit = detectors[common].unit;
        for row in &rows {
            if row.traffic[rare_unit].t > tau {
                rare_ever_exceeded = true;
            }
            if row.traffic[common_unit].t > tau {
                common_exceeded = true;
            }
        }
        // "Ends" means the state after the last maintenance pass, where the
        // threshold rule has fully settled.
        let final_traffic = harness.traffic()?;
        if final_traffic[rare_unit].t > tau {
            rare_ever_exceeded = true;
        }
        common_final_within = final_traffic[common_unit].t <= tau;
    }

    let final_accuracy = nn::evaluate_accuracy(&harness.net, &eval, 0.5)?;
    let success =
        !inconclusive && !rare_ever_exceeded && common_exceeded && common_final_within;
    let result = ExperimentResult {
        experiment: cfg.experiment,
        seed,
        success,
        cycles_used: success_cycle.unwrap_or(plan.max_cycles as u64),
        final_accuracy,
        balance: None,
        rows,
        details: Details::Safety {
            tau,
            detectors,
            inconclusive,
            rare_ever_exceeded,
            common_exceeded,
            common_final_within,
            prune_events,
        },
    };
    result.validate(plan.max_cycles)?;
    Ok(result)
}

fn slice_batch(full: &Batch, start: usize, len: usize) -> Batch {
    let inputs = full
        .inputs
        .slice(ndarray::s![start..start + len, ..])
        .to_owned();
    let targets = full
        .targets
        .slice(ndarray::s![start..start + len, ..])
        .to_owned();
    Batch::new(inputs, targets).expect("slice keeps rows aligned")
}

fn argmin_freq(freqs: &[f64]) -> usize {
    freqs
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .expect("nonempty freqs")
}

fn argmax_freq(freqs: &[f64]) -> usize {
    freqs
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .expect("nonempty freqs")
}

/// Clone the witness/sweep config with concrete sizes for one W.
pub(crate) fn witness_instance(cfg: &RunConfig, w: usize) -> RunConfig {
    let mut inst = cfg.clone();
    let c = inst.dnf.literals_per_clause;
    inst.dnf.witness_w = w;
    inst.network.layer_sizes = vec![(w + 1) * c, w + 1, 1];
    inst.budget.max_degree = (w + 1) * c;
    if inst.budget.d0 == 0.0 {
        inst.budget.d0 = (0.45 * inst.budget.max_degree as f64).round();
    }
    if inst.plan.max_cycles == 0 {
        inst.plan.max_cycles = auto_max_cycles(w);
    }
    inst
}

pub fn run_dnf_witness(cfg: &RunConfig, seed: u64, mode: TrainMode) -> Result<ExperimentResult> {
    witness_run(cfg, seed, mode, true)
}

/// Inner witness loop; `keep_rows` is off for sweep points to bound memory.
fn witness_run(
    cfg: &RunConfig,
    seed: u64,
    mode: TrainMode,
    keep_rows: bool,
) -> Result<ExperimentResult> {
    let plan = cfg.cycle_plan();
    plan.validate()?;
    let w = cfg.dnf.witness_w;
    let mut harness = Harness::new(cfg, seed)?;
    let witness = gen_dnf_witness(
        w,
        cfg.dnf.literals_per_clause,
        cfg.dnf.negatives_per_positive,
        seed,
    )?;
    let batch = witness.batch.clone();
    let mut cycler = if cfg.network.batch_size > 0 {
        Some(BatchCycler::new(batch.clone(), cfg.network.batch_size)?)
    } else {
        None
    };

    let mut rows: Vec<MetricRow> = Vec::new();
    let mut success_cycle: Option<u64> = None;
    'cycles: for cycle in 1..=plan.max_cycles as u64 {
        for _ in 0..plan.sgd_steps_per_cycle {
            match &mut cycler {
                Some(cy) => {
                    let mini = cy.next_batch();
                    harness.step(&mini)?;
                }
                None => {
                    harness.step(&batch)?;
                }
            }
            if keep_rows && harness.net.steps() % cfg.eval_every as u64 == 0 {
                rows.push(harness.sample_row(cycle, &batch)?);
            }
        }
        let acc = nn::evaluate_accuracy(&harness.net, &batch, 0.5)?;
        if acc >= plan.success_accuracy {
            success_cycle = Some(cycle);
            break 'cycles;
        }
        if mode == TrainMode::BbAlternating {
            harness.maintain(RefreshMode::Controller)?;
        }
    }

    let final_accuracy = nn::evaluate_accuracy(&harness.net, &batch, 0.5)?;
    let result = ExperimentResult {
        experiment: cfg.experiment,
        seed,
        success: success_cycle.is_some(),
        cycles_used: success_cycle.unwrap_or(plan.max_cycles as u64),
        final_accuracy,
        balance: None,
        rows,
        details: Details::Witness { mode, w },
    };
    result.validate(plan.max_cycles)?;
    Ok(result)
}

/// One grid point of the scaling sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub w: usize,
    pub seeds: usize,
    pub successes: usize,
    /// Median cycles over successful seeds; NaN when the point is excluded.
    #[serde(with = "crate::serde_ext::nullable_f64")]
    pub median_cycles: f64,
    pub oracle: f64,
    pub excluded: bool,
}

/// Sweep output: per-W medians plus the fit against W ln W.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub points: Vec<SweepPoint>,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub oracle_correlation: f64,
}

pub fn run_scaling_sweep(cfg: &RunConfig) -> Result<SweepTable> {
    if cfg.sweep.w_grid.is_empty() {
        return Err(Error::config("sweep.w_grid must not be empty"));
    }
    let jobs: Vec<(usize, u64)> = cfg
        .sweep
        .w_grid
        .iter()
        .flat_map(|&w| (0..cfg.sweep.seeds_per_w as u64).map(move |s| (w, s)))
        .collect();
    let runs: Vec<Result<(usize, u64, ExperimentResult)>> = jobs
        .par_iter()
        .map(|&(w, seed)| {
            let inst = witness_instance(cfg, w);
            let res = witness_run(&inst, seed, TrainMode::BbAlternating, false)?;
            Ok((w, seed, res))
        })
        .collect();

    let mut points = Vec::with_capacity(cfg.sweep.w_grid.len());
    for &w in &cfg.sweep.w_grid {
        let mut cycles: Vec<f64> = Vec::new();
        let mut total = 0usize;
        for r in &runs {
            let (rw, _, res) = r.as_ref().map_err(clone_err)?;
            if *rw == w {
                total += 1;
                if res.success {
                    cycles.push(res.cycles_used as f64);
                }
            }
        }
        let successes = cycles.len();
        let excluded = (successes as f64) < 0.5 * total as f64;
        let median_cycles = if excluded { f64::NAN } else { median(&mut cycles) };
        let oracle = coupon_collector_oracle(w, ORACLE_TRIALS, 0)?;
        points.push(SweepPoint {
            w,
            seeds: total,
            successes,
            median_cycles,
            oracle,
            excluded,
        });
    }

    let included: Vec<&SweepPoint> = points.iter().filter(|p| !p.excluded).collect();
    if included.len() < 2 {
        return Err(Error::undefined(
            "scaling sweep: fewer than two grid points had a 50% success rate",
        ));
    }
    let xs: Vec<f64> = included
        .iter()
        .map(|p| p.w as f64 * (p.w as f64).ln())
        .collect();
    let ys: Vec<f64> = included.iter().map(|p| p.median_cycles).collect();
    let (slope, intercept, r_squared) = least_squares(&xs, &ys);
    let oracle_vals: Vec<f64> = included.iter().map(|p| p.oracle).collect();
    let oracle_correlation = pearson(&ys, &oracle_vals).unwrap_or(f64::NAN);
    Ok(SweepTable {
        points,
        slope,
        intercept,
        r_squared,
        oracle_correlation,
    })
}

fn clone_err(e: &Error) -> Error {
    Error::contract(format!("sweep worker failed: {e}"))
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n == 0 {
        return f64::NAN;
    }
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let x_mean = xs.iter().sum::<f64>() / n;
    let y_mean = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - x_mean) * (x - x_mean)).sum();
    let sxy: f64 = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (x - x_mean) * (y - y_mean))
        .sum();
    let slope = sxy / sxx;
    let intercept = y_mean - slope * x_mean;
    let ss_tot: f64 = ys.iter().map(|y| (y - y_mean) * (y - y_mean)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(ys)
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
    (slope, intercept, r_squared)
}
