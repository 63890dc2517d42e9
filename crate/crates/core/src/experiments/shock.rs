//! Shock recovery: train an XOR net to convergence under the controller,
//! knock out a random fraction of the managed layer's active connections,
//! then race two branches — refresh enabled vs. disabled — on identical
//! data until each climbs back inside the recovery margin.

use rand::seq::SliceRandom;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::nn::{self};
use crate::rng::seed_stream;

use super::xor::xor_eval_set;
use super::{BatchCycler, Details, ExperimentResult, Harness, MetricRow, RefreshMode};
use crate::tasks::gen_xor;

pub fn run_shock_recovery(cfg: &RunConfig, seed: u64) -> Result<ExperimentResult> {
    let plan = cfg.cycle_plan();
    plan.validate()?;
    let shock_step = cfg.shock.shock_step;
    if shock_step > plan.total_steps() {
        return Err(Error::config(format!(
            "shock.shock_step {shock_step} exceeds the training budget {}",
            plan.total_steps()
        )));
    }
    let mut harness = Harness::new(cfg, seed)?;
    let pool = gen_xor(256, cfg.network.noise_std, seed)?;
    let mut cycler = BatchCycler::new(pool, cfg.network.batch_size)?;
    let eval = xor_eval_set();
    let steps_per_cycle = plan.sgd_steps_per_cycle as u64;

    // Pre-shock phase: plain controller training on the cycle cadence.
    let mut rows: Vec<MetricRow> = Vec::new();
    let mut success_cycle: Option<u64> = None;
    while harness.net.steps() < shock_step {
        let batch = cycler.next_batch();
        harness.step(&batch)?;
        let step = harness.net.steps();
        let cycle = step.div_ceil(steps_per_cycle);
        if step % cfg.eval_every as u64 == 0 {
            rows.push(harness.sample_row(cycle, &eval)?);
        }
        if step % steps_per_cycle == 0 {
            if success_cycle.is_none()
                && nn::evaluate_accuracy(&harness.net, &eval, 0.5)? >= plan.success_accuracy
            {
                success_cycle = Some(cycle);
            }
            harness.maintain(plan.refresh_mode)?;
        }
    }

    let converged = nn::evaluate_accuracy(&harness.net, &eval, 0.5)? >= plan.success_accuracy;
    let pre_shock_loss = nn::evaluate_loss(&harness.net, &eval)?;
    if !converged {
        // No point shocking a net that never solved the task.
        let result = ExperimentResult {
            experiment: cfg.experiment,
            seed,
            success: false,
            cycles_used: shock_step.div_ceil(steps_per_cycle),
            final_accuracy: nn::evaluate_accuracy(&harness.net, &eval, 0.5)?,
            balance: None,
            rows,
            details: Details::Shock {
                fraction: cfg.shock.fraction,
                shock_step,
                pre_shock_loss,
                recovery_enabled: None,
                recovery_disabled: None,
            },
        };
        result.validate(plan.max_cycles)?;
        return Ok(result);
    }

    apply_shock(&mut harness, cfg.shock.fraction, seed);
    let threshold = pre_shock_loss * (1.0 + cfg.shock.recovery_margin);

    let (recovery_enabled, final_accuracy) = run_branch(
        harness.clone(),
        cycler.clone(),
        &eval,
        cfg,
        threshold,
        true,
        Some(&mut rows),
    )?;
    let (recovery_disabled, _) = run_branch(
        harness,
        cycler,
        &eval,
        cfg,
        threshold,
        false,
        None,
    )?;

    let result = ExperimentResult {
        experiment: cfg.experiment,
        seed,
        success: recovery_enabled.is_some(),
        cycles_used: success_cycle.unwrap_or(shock_step.div_ceil(steps_per_cycle)),
        final_accuracy,
        balance: None,
        rows,
        details: Details::Shock {
            fraction: cfg.shock.fraction,
            shock_step,
            pre_shock_loss,
            recovery_enabled,
            recovery_disabled,
        },
    };
    result.validate(plan.max_cycles)?;
    Ok(result)
}

/// Zero a random fraction of the managed layer's active mask entries. The
/// weights underneath stay frozen, as after any masking.
fn apply_shock(harness: &mut Harness, fraction: f64, seed: u64) {
    if fraction <= 0.0 {
        return;
    }
    let layer = harness.net.layer_mut(harness.managed_layer);
    let mut active: Vec<(usize, usize)> = Vec::new();
    for ((i, j), &m) in layer.mask().indexed_iter() {
        if m != 0.0 {
            active.push((i, j));
        }
    }
    let hit = (fraction * active.len() as f64).round() as usize;
    let mut rng = seed_stream(seed, "shock/knockout");
    active.shuffle(&mut rng);
    let mut mask = layer.mask().to_owned();
    for &(i, j) in active.iter().take(hit) {
        mask[[i, j]] = 0.0;
    }
    layer.set_mask(mask).expect("shock keeps mask shape");
}

/// Post-shock training until the loss re-enters the margin or the budget
/// runs out. Returns the steps taken to recover and the branch's final
/// accuracy. A branch that logs rows keeps training to the full budget so
/// the trajectory is complete; a silent branch stops once recovered.
fn run_branch(
    mut harness: Harness,
    mut cycler: BatchCycler,
    eval: &crate::nn::Batch,
    cfg: &RunConfig,
    threshold: f64,
    refresh_enabled: bool,
    mut rows: Option<&mut Vec<MetricRow>>,
) -> Result<(Option<u64>, f64)> {
    let steps_per_cycle = cfg.plan.sgd_steps_per_cycle as u64;
    let mut recovered = None;
    if nn::evaluate_loss(&harness.net, eval)? <= threshold {
        recovered = Some(0);
    }
    for s in 1..=cfg.shock.post_steps {
        if recovered.is_some() && rows.is_none() {
            break;
        }
        let batch = cycler.next_batch();
        harness.step(&batch)?;
        let step = harness.net.steps();
        if let Some(rows) = rows.as_deref_mut() {
            if step % cfg.eval_every as u64 == 0 {
                let cycle = step.div_ceil(steps_per_cycle);
                rows.push(harness.sample_row(cycle, eval)?);
            }
        }
        if refresh_enabled && step % steps_per_cycle == 0 {
            harness.maintain(RefreshMode::Controller)?;
        }
        if recovered.is_none() && nn::evaluate_loss(&harness.net, eval)? <= threshold {
            recovered = Some(s);
        }
    }
    let final_accuracy = nn::evaluate_accuracy(&harness.net, eval, 0.5)?;
    Ok((recovered, final_accuracy))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick_cfg() -> RunConfig {
        let mut cfg = RunConfig::parse_str("experiment = \"shock-recovery\"").unwrap();
        cfg.plan.sgd_steps_per_cycle = 50;
        cfg.budget.delta = 50;
        cfg.budget.warmup = 50;
        cfg.eval_every = 50;
        cfg.shock.shock_step = 500;
        cfg.shock.post_steps = 1500;
        cfg.plan.max_cycles = 60;
        cfg
    }

    #[test]
    fn null_shock_recovers_immediately() {
        let mut cfg = quick_cfg();
        cfg.shock.fraction = 0.0;
        let res = run_shock_recovery(&cfg, 0).unwrap();
        match res.details {
            Details::Shock {
                recovery_enabled,
                recovery_disabled,
                ..
            } => {
                assert_eq!(recovery_enabled, Some(0));
                assert_eq!(recovery_disabled, Some(0));
            }
            _ => panic!("wrong details variant"),
        }
    }

    #[test]
    fn shock_run_is_reproducible() {
        let cfg = quick_cfg();
        let a = run_shock_recovery(&cfg, 1).unwrap();
        let b = run_shock_recovery(&cfg, 1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn half_shock_hits_half_the_edges() {
        let cfg = quick_cfg();
        let mut harness = Harness::new(&cfg, 3).unwrap();
        let before = harness.net.layer(1).active_count();
        apply_shock(&mut harness, 0.5, 3);
        let after = harness.net.layer(1).active_count();
        assert_eq!(after, before - (before as f64 * 0.5).round() as usize);
    }

    #[test]
    fn rows_keep_increasing_across_the_shock() {
        let res = run_shock_recovery(&quick_cfg(), 2).unwrap();
        for pair in res.rows.windows(2) {
            assert!(pair[1].step > pair[0].step);
        }
    }
}
