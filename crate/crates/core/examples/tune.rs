// Scratch calibration harness; not part of the shipped crate.

use bb_core::config::RunConfig;
use bb_core::experiments::{
    run_dnf_safety, run_dnf_witness, run_entropy_comparison, run_scaling_sweep,
    run_shock_recovery, run_xor_balance, Details, RefreshMode, TrainMode,
};
use bb_core::metrics::FitStatus;

fn main() {
    let which = std::env::args().nth(1).unwrap_or_else(|| "xor".into());
    match which.as_str() {
        "xor" => xor(),
        "safety" => safety(),
        "witness" => witness(),
        "sweep" => sweep(),
        "entropy" => entropy(),
        "entrace" => entrace(),
        "shock" => shock(),
        "scatter" => scatter(),
        "safetytrace" => safetytrace(),
        "witdist" => witdist(),
        "wittrace" => wittrace(),
        "witgates" => witgates(),
        other => eprintln!("unknown pilot {other}"),
    }
}

fn xor() {
    let warmup: Option<u64> = std::env::args().nth(2).and_then(|s| s.parse().ok());
    let delta: Option<u64> = std::env::args().nth(3).and_then(|s| s.parse().ok());
    let m: Option<usize> = std::env::args().nth(4).and_then(|s| s.parse().ok());
    let tau: Option<f64> = std::env::args().nth(5).and_then(|s| s.parse().ok());
    for mode in [RefreshMode::Controller, RefreshMode::Threshold, RefreshMode::None] {
        let mut cfg = RunConfig::parse_str("experiment = \"xor-balance\"").unwrap();
        if let Some(v) = warmup {
            cfg.budget.warmup = v;
        }
        if let Some(v) = delta {
            cfg.budget.delta = v;
        }
        if let Some(v) = m {
            cfg.budget.m = v;
        }
        if let Some(v) = tau {
            cfg.budget.tau = v;
        }
        cfg.plan.refresh_mode = mode;
        let mut r2s = Vec::new();
        let start = std::time::Instant::now();
        for seed in 0..7 {
            let res = run_xor_balance(&cfg, seed).unwrap();
            let fit = res.balance.clone().unwrap();
            println!(
                "mode={:?} seed={seed} acc={} success_cycle={:?} fit status={:?} slope={:.4} r2={:.4} used={} excl={}",
                mode,
                res.final_accuracy,
                match &res.details { Details::Balance { success_cycle, .. } => *success_cycle, _ => None },
                fit.status,
                fit.slope,
                fit.r_squared,
                fit.n_units_used,
                fit.excluded_saturated,
            );
            if fit.status == FitStatus::Ok {
                r2s.push(fit.r_squared);
            }
        }
        let mean = r2s.iter().sum::<f64>() / r2s.len().max(1) as f64;
        println!(
            "mode={:?} mean_r2={:.4} elapsed={:.1?}\n",
            mode,
            mean,
            start.elapsed()
        );
    }
}

fn scatter() {
    let warmup: u64 = std::env::args()
        .nth(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(6000);
    let delta: u64 = std::env::args()
        .nth(3)
        .and_then(|s| s.parse().ok())
        .unwrap_or(2000);
    let mut cfg = RunConfig::parse_str("experiment = \"xor-balance\"").unwrap();
    cfg.budget.warmup = warmup;
    cfg.budget.delta = delta;
    cfg.plan.refresh_mode = RefreshMode::Threshold;
    let res = run_xor_balance(&cfg, 0).unwrap();
    let last = res.rows.last().unwrap();
    let mut recs: Vec<_> = last.traffic.iter().collect();
    recs.sort_by(|x, y| x.a.total_cmp(&y.a));
    for r in recs {
        let lo = (((1.0 - r.a) / r.a.max(1e-12)) as f64).max(1e-12).ln();
        println!(
            "unit={:2} a={:.4} k={:3} t={:.2} logodds={:.3}",
            r.unit, r.a, r.k, r.t, lo
        );
    }
}

fn safety() {
    let cfg = RunConfig::parse_str("experiment = \"dnf-safety\"").unwrap();
    let mut pass = 0;
    for seed in 0..10 {
        let res = run_dnf_safety(&cfg, seed).unwrap();
        if let Details::Safety {
            detectors,
            inconclusive,
            rare_ever_exceeded,
            common_exceeded,
            common_final_within,
            prune_events,
            ..
        } = &res.details
        {
            println!(
                "seed={seed} acc={:.3} inconcl={inconclusive} rare_exc={rare_ever_exceeded} common_exc={common_exceeded} common_final_ok={common_final_within} prunes={prune_events} success={} dets={:?}",
                res.final_accuracy,
                res.success,
                detectors
                    .iter()
                    .map(|d| (d.feature, d.unit, (d.correlation * 100.0).round() / 100.0))
                    .collect::<Vec<_>>()
            );
            if res.success {
                pass += 1;
            }
        }
    }
    println!("safety passes: {pass}/10");
}

fn safetytrace() {
    let seed: u64 = std::env::args()
        .nth(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    let cfg = RunConfig::parse_str("experiment = \"dnf-safety\"").unwrap();
    let res = run_dnf_safety(&cfg, seed).unwrap();
    if let Details::Safety { detectors, tau, .. } = &res.details {
        let units: Vec<usize> = detectors.iter().map(|d| d.unit).collect();
        println!("tau={tau} detector units (feature, unit): {:?}", detectors
            .iter().map(|d| (d.feature, d.unit)).collect::<Vec<_>>());
        for row in &res.rows {
            let ts: Vec<String> = units
                .iter()
                .map(|&u| format!("{:.1}(a={:.2},k={})", row.traffic[u].t, row.traffic[u].a, row.traffic[u].k))
                .collect();
            println!("step={:5} {}", row.step, ts.join("  "));
        }
    }
}

fn witness() {
    let arg_w: usize = std::env::args()
        .nth(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(8);
    let seeds: u64 = std::env::args()
        .nth(3)
        .and_then(|s| s.parse().ok())
        .unwrap_or(40);
    let lr: f64 = std::env::args()
        .nth(4)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0.2);
    let steps: u64 = std::env::args()
        .nth(5)
        .and_then(|s| s.parse().ok())
        .unwrap_or(200);
    let c: usize = std::env::args()
        .nth(6)
        .and_then(|s| s.parse().ok())
        .unwrap_or(3);
    let ratio: f64 = std::env::args()
        .nth(7)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1.0);
    let text = format!(
        "experiment = \"dnf-witness\"\n[network]\nlr = {lr}\n[plan]\nsgd_steps_per_cycle = {steps}\n[dnf]\nwitness_w = {arg_w}\nliterals_per_clause = {c}\nnegatives_per_positive = {ratio}\n"
    );
    let cfg = RunConfig::parse_str(&text).unwrap();
    let start = std::time::Instant::now();
    for mode in [TrainMode::SgdOnly, TrainMode::BbAlternating] {
        let mut succ = 0;
        let mut cycles = Vec::new();
        let mut accs = Vec::new();
        for seed in 0..seeds {
            let res = run_dnf_witness(&cfg, seed, mode).unwrap();
            if res.success {
                succ += 1;
                cycles.push(res.cycles_used);
            } else {
                accs.push(res.final_accuracy);
            }
        }
        cycles.sort();
        let med = if cycles.is_empty() {
            f64::NAN
        } else {
            cycles[cycles.len() / 2] as f64
        };
        let fail_acc = accs.iter().sum::<f64>() / accs.len().max(1) as f64;
        println!(
            "W={arg_w} lr={lr} steps={steps} mode={mode:?} success={succ}/{seeds} median_cycles={med} fail_acc={fail_acc:.3} elapsed={:.1?}",
            start.elapsed()
        );
    }
}

fn witdist() {
    let lr: f64 = std::env::args()
        .nth(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0.001);
    let beta: f64 = std::env::args()
        .nth(3)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1.0);
    let d0: f64 = std::env::args()
        .nth(4)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1.0);
    let m: usize = std::env::args()
        .nth(5)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1);
    let eps: f64 = std::env::args()
        .nth(6)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1e-4);
    let steps: u64 = std::env::args()
        .nth(7)
        .and_then(|s| s.parse().ok())
        .unwrap_or(200);
    let c: usize = std::env::args()
        .nth(8)
        .and_then(|s| s.parse().ok())
        .unwrap_or(3);
    let ratio: f64 = std::env::args()
        .nth(9)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1.0);
    let h1: usize = std::env::args()
        .nth(10)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    let h2: usize = std::env::args()
        .nth(11)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    let bs: usize = std::env::args()
        .nth(12)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    let w: usize = std::env::args()
        .nth(13)
        .and_then(|s| s.parse().ok())
        .unwrap_or(8);
    let dim = (w + 1) * c;
    let arch = if h2 > 0 {
        format!(
            "layer_sizes = [{dim}, {h1}, {h2}, 1]\n"
        )
    } else if h1 > 0 {
        format!("layer_sizes = [{dim}, {h1}, 1]\n")
    } else {
        String::new()
    };
    let budget_site = if h2 > 0 {
        format!("side = \"sp-out\"\nmanaged_layer = 1\nmax_degree = {h2}\n")
    } else {
        String::new()
    };
    let text = format!(
        "experiment = \"dnf-witness\"\n[network]\nlr = {lr}\nbatch_size = {bs}\n{arch}[budget]\nbeta = {beta}\nd0 = {d0}\nm = {m}\neps_clamp = {eps}\ndelta = {steps}\nwarmup = {}\n{budget_site}[plan]\nsgd_steps_per_cycle = {steps}\n[dnf]\nliterals_per_clause = {c}\nnegatives_per_positive = {ratio}\nwitness_w = {w}\n",
        2 * steps
    );
    let cfg = RunConfig::parse_str(&text).unwrap();
    for mode in [TrainMode::SgdOnly, TrainMode::BbAlternating] {
        let mut cycles = Vec::new();
        for seed in 0..40 {
            let res = run_dnf_witness(&cfg, seed, mode).unwrap();
            cycles.push(if res.success {
                res.cycles_used as i64
            } else {
                -1
            });
        }
        cycles.sort();
        let succ = cycles.iter().filter(|&&x| x >= 0).count();
        println!(
            "lr={lr} beta={beta} d0={d0} m={m} eps={eps} steps={steps} c={c} ratio={ratio} mode={mode:?} succ={succ}/40 cycles={cycles:?}"
        );
    }
}

fn wittrace() {
    let lr: f64 = std::env::args()
        .nth(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0.0006);
    let beta: f64 = std::env::args()
        .nth(3)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0.5);
    let d0: f64 = std::env::args()
        .nth(4)
        .and_then(|s| s.parse().ok())
        .unwrap_or(2.0);
    let seed: u64 = std::env::args()
        .nth(5)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0);
    let text = format!(
        "experiment = \"dnf-witness\"\n[network]\nlr = {lr}\n[budget]\nbeta = {beta}\nd0 = {d0}\n"
    );
    let cfg = RunConfig::parse_str(&text).unwrap();
    let res = run_dnf_witness(&cfg, seed, TrainMode::BbAlternating).unwrap();
    for (i, row) in res.rows.iter().enumerate() {
        if i % 8 != 0 && i + 1 != res.rows.len() {
            continue;
        }
        let aks: Vec<String> = row
            .traffic
            .iter()
            .map(|r| format!("{:.2}/{}", r.a, r.k))
            .collect();
        println!(
            "step={:5} cyc={:3} acc={:.3} loss={:.4} units[a/k]={}",
            row.step,
            row.cycle,
            row.accuracy,
            row.loss,
            aks.join(" ")
        );
    }
    println!("success={} cycles_used={}", res.success, res.cycles_used);
}

fn witgates() {
    use bb_core::nn::{evaluate_accuracy, forward, init_network, train_step};
    use bb_core::tasks::gen_dnf_witness;
    let lr: f64 = std::env::args()
        .nth(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(0.3);
    let steps: usize = std::env::args()
        .nth(3)
        .and_then(|s| s.parse().ok())
        .unwrap_or(35200);
    let c: usize = std::env::args()
        .nth(4)
        .and_then(|s| s.parse().ok())
        .unwrap_or(3);
    let ratio: f64 = std::env::args()
        .nth(5)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1.0);
    let w = 8usize;
    let mut stuck_rows = 0;
    let mut fails = 0;
    for seed in 0..40u64 {
        let ws = gen_dnf_witness(w, c, ratio, seed).unwrap();
        let h = w + 1;
        let mut net = init_network(&[ws.input_dim(), h, 1], seed).unwrap();
        for _ in 0..steps {
            train_step(&mut net, &ws.batch, lr).unwrap();
        }
        let acc = evaluate_accuracy(&net, &ws.batch, 0.5).unwrap();
        let pass = forward(&net, &ws.batch).unwrap();
        let hidden = &pass.activations[0];
        let mut gate_counts = Vec::new();
        for r in 0..ws.num_positives() {
            let on = (0..h).filter(|&u| hidden[[r, u]] > 0.0).count();
            gate_counts.push(on);
        }
        let zeros = gate_counts.iter().filter(|&&g| g == 0).count();
        stuck_rows += zeros;
        if acc < 1.0 || zeros > 0 {
            let b_out = net.layer(1).bias()[0];
            let v = net.layer(1).effective_weights();
            let vsigns: Vec<i8> = (0..h)
                .map(|u| if v[[u, 0]] > 0.0 { 1 } else { -1 })
                .collect();
            let n_rows = ws.batch.len();
            let neg_on = (ws.num_positives()..n_rows)
                .filter(|&r| (0..h).any(|u| hidden[[r, u]] > 0.0))
                .count();
            println!(
                "seed={seed} acc={acc:.3} zero_gated_pos={zeros} b_out={b_out:.3} v_signs={vsigns:?} negatives_gated_on={neg_on}/{}",
                n_rows - ws.num_positives()
            );
        }
        if acc < 1.0 {
            fails += 1;
        }
    }
    println!(
        "lr={lr} steps={steps} c={c} ratio={ratio} fails={fails}/40 stuck_positive_rows_total={stuck_rows}"
    );
}

fn sweep() {
    let mut cfg = RunConfig::parse_str("experiment = \"scaling-sweep\"").unwrap();
    if let Some(n) = std::env::args().nth(2).and_then(|s| s.parse().ok()) {
        cfg.sweep.seeds_per_w = n;
    }
    let start = std::time::Instant::now();
    let table = run_scaling_sweep(&cfg).unwrap();
    for p in &table.points {
        println!(
            "W={} successes={}/{} median={} oracle={:.2} excluded={}",
            p.w, p.successes, p.seeds, p.median_cycles, p.oracle, p.excluded
        );
    }
    println!(
        "slope={:.4} intercept={:.2} r2={:.4} oracle_corr={:.4} elapsed={:.1?}",
        table.slope,
        table.intercept,
        table.r_squared,
        table.oracle_correlation,
        start.elapsed()
    );
}

fn entropy_cfg() -> RunConfig {
    let arg = |i: usize, d: f64| -> f64 {
        std::env::args()
            .nth(i)
            .and_then(|s| s.parse().ok())
            .unwrap_or(d)
    };
    let lr = arg(2, 0.05);
    let noise = arg(3, 0.4);
    let beta = arg(4, 0.3);
    let alpha = arg(5, 0.05);
    let dt = arg(6, 0.35);
    let warmup = arg(7, 500.0) as u64;
    let delta = arg(8, 100.0) as u64;
    let spc = arg(9, 100.0) as usize;
    let cycles = arg(10, 25.0) as usize;
    let toml = format!(
        "experiment = \"entropy-comparison\"\n\
         [network]\nlr = {lr}\nnoise_std = {noise}\n\
         [budget]\nbeta = {beta}\nalpha = {alpha}\nwarmup = {warmup}\ndelta = {delta}\n\
         [plan]\nsgd_steps_per_cycle = {spc}\nmax_cycles = {cycles}\n\
         [entropy]\ndensity_target = {dt}\n"
    );
    RunConfig::parse_str(&toml).unwrap()
}

fn entrace() {
    let cfg = entropy_cfg();
    for seed in [0u64, 4, 6] {
        let res = run_entropy_comparison(&cfg, seed).unwrap();
        if let Details::Entropy {
            checkpoints,
            traffic_mi_correlation,
            ..
        } = &res.details
        {
            println!("seed={seed} miR={traffic_mi_correlation:.3}");
            for c in checkpoints {
                println!("  d0={:5.1} traffic={:8.2} mi={:.3}", c.d0, c.traffic_sum, c.code_entropy);
            }
        }
    }
}

fn entropy() {
    let cfg = entropy_cfg();
    let mut both = 0;
    let mut mi_ok = 0;
    for seed in 0..10 {
        let res = run_entropy_comparison(&cfg, seed).unwrap();
        if let Details::Entropy {
            bb,
            baseline,
            density_matched,
            traffic_mi_correlation,
            ..
        } = &res.details
        {
            println!(
                "seed={seed} matched={density_matched} bb(H={:.3} |r|={:.3} rho={:.3}) base(H={:.3} |r|={:.3} rho={:.3}) miR={:.3}",
                bb.entropy_sum,
                bb.mean_abs_corr,
                bb.realized_density,
                baseline.entropy_sum,
                baseline.mean_abs_corr,
                baseline.realized_density,
                traffic_mi_correlation
            );
            if res.success {
                both += 1;
            }
            if *traffic_mi_correlation >= 0.8 {
                mi_ok += 1;
            }
        }
    }
    println!("entropy wins: {both}/10, mi-correlation >= 0.8 on {mi_ok}/10");
}

fn shock() {
    let cfg = RunConfig::parse_str("experiment = \"shock-recovery\"").unwrap();
    let mut en = Vec::new();
    let mut dis = Vec::new();
    for seed in 0..10 {
        let res = run_shock_recovery(&cfg, seed).unwrap();
        if let Details::Shock {
            pre_shock_loss,
            recovery_enabled,
            recovery_disabled,
            ..
        } = res.details
        {
            println!(
                "seed={seed} pre_loss={pre_shock_loss:.5} enabled={recovery_enabled:?} disabled={recovery_disabled:?}"
            );
            en.push(recovery_enabled.map(|v| v as f64).unwrap_or(f64::INFINITY));
            dis.push(recovery_disabled.map(|v| v as f64).unwrap_or(f64::INFINITY));
        }
    }
    en.sort_by(|a, b| a.total_cmp(b));
    dis.sort_by(|a, b| a.total_cmp(b));
    println!(
        "median enabled={} disabled={}",
        0.5 * (en[4] + en[5]),
        0.5 * (dis[4] + dis[5])
    );
}
