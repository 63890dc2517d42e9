//! XOR balance run: trains a small MLP on jittered XOR while the budget
//! controller manages the first hidden layer's fan-out, then fits the
//! balance law over the resulting traffic snapshot.

use crate::config::RunConfig;
use crate::error::Result;
use crate::metrics::fit_balance;
use crate::nn::{self, Batch};
use crate::tasks::gen_xor;

use super::{BatchCycler, Details, ExperimentResult, Harness, MetricRow};

/// The four clean corners used for evaluation and the success rule.
pub(crate) fn xor_eval_set() -> Batch {
    gen_xor(1, 0.0, 0).expect("corner set")
}

pub fn run_xor_balance(cfg: &RunConfig, seed: u64) -> Result<ExperimentResult> {
    let plan = cfg.cycle_plan();
    plan.validate()?;
    let mut harness = Harness::new(cfg, seed)?;
    let pool = gen_xor(256, cfg.network.noise_std, seed)?;
    let mut cycler = BatchCycler::new(pool, cfg.network.batch_size)?;
    let eval = xor_eval_set();

    let mut rows: Vec<MetricRow> = Vec::new();
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
        harness.maintain(plan.refresh_mode)?;
    }

    let final_accuracy = nn::evaluate_accuracy(&harness.net, &eval, 0.5)?;
    let records = harness.traffic()?;
    let balance = fit_balance(&records, harness.budget.m, harness.budget.max_degree);
    let result = ExperimentResult {
        experiment: cfg.experiment,
        seed,
        success: success_cycle.is_some(),
        cycles_used: success_cycle.unwrap_or(plan.max_cycles as u64),
        final_accuracy,
        balance: Some(balance),
        rows,
        details: Details::Balance {
            refresh_mode: plan.refresh_mode,
            success_cycle,
        },
    };
    result.validate(plan.max_cycles)?;
    Ok(result)
}
