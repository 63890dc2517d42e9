//! Synthetic binary tasks: jittered XOR and two disjoint-clause DNF
//! families, plus the coupon-collector Monte Carlo oracle used as the
//! reference curve for the witness scaling law.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::Batch;
use crate::rng::seed_stream;

/// A disjunctive normal form over disjoint literal blocks: clause `f` is the
/// AND of inputs `[f*c, (f+1)*c)`, the label the OR of all clauses. Feature
/// `f` of an example is "on" when its whole block is 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DnfSpec {
    pub num_clauses: usize,
    pub literals_per_clause: usize,
    /// Per-clause probability that the block is on; one entry per clause.
    pub feature_freqs: Vec<f64>,
}

impl DnfSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_clauses == 0 {
            return Err(Error::config("num_clauses must be at least 1"));
        }
        if self.literals_per_clause == 0 {
            return Err(Error::config("literals_per_clause must be at least 1"));
        }
        if self.literals_per_clause > 20 {
            return Err(Error::config(format!(
                "literals_per_clause = {} is too wide; patterns are enumerated per block",
                self.literals_per_clause
            )));
        }
        if self.feature_freqs.len() != self.num_clauses {
            return Err(Error::config(format!(
                "feature_freqs has {} entries for {} clauses",
                self.feature_freqs.len(),
                self.num_clauses
            )));
        }
        for (i, &p) in self.feature_freqs.iter().enumerate() {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::config(format!(
                    "feature_freqs[{i}] must be in (0, 1), got {p}"
                )));
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.num_clauses * self.literals_per_clause
    }

    /// True when clause `f` is satisfied by `row`.
    pub fn clause_on(&self, row: &[f64], f: usize) -> bool {
        let c = self.literals_per_clause;
        row[f * c..(f + 1) * c].iter().all(|&v| v > 0.5)
    }

    /// DNF label of `row`: 1.0 when any clause fires.
    pub fn label(&self, row: &[f64]) -> f64 {
        if (0..self.num_clauses).any(|f| self.clause_on(row, f)) {
            1.0
        } else {
            0.0
        }
    }
}

/// Per-example feature indicators accompanying a safety batch.
#[derive(Debug, Clone)]
pub struct SafetyMeta {
    /// `[n x num_clauses]`, entry 1.0 when the feature's block was drawn on.
    pub indicators: Array2<f64>,
    pub feature_freqs: Vec<f64>,
}

/// Jittered XOR: `n_per_corner` samples at each of the four corners of the
/// unit square with isotropic Gaussian noise of the given standard deviation
/// added to the inputs. Labels are the exact XOR of the corner, untouched by
/// the noise.
pub fn gen_xor(n_per_corner: usize, noise_std: f64, seed: u64) -> Result<Batch> {
    if n_per_corner == 0 {
        return Err(Error::config("n_per_corner must be at least 1"));
    }
    if !(noise_std >= 0.0) {
        return Err(Error::config(format!(
            "noise_std must be nonnegative, got {noise_std}"
        )));
    }
    let corners = [(0.0, 0.0, 0.0), (0.0, 1.0, 1.0), (1.0, 0.0, 1.0), (1.0, 1.0, 0.0)];
    let n = 4 * n_per_corner;
    let mut inputs = Array2::zeros((n, 2));
    let mut targets = Array2::zeros((n, 1));
    let mut rng = seed_stream(seed, "task/xor");
    let noise = Normal::new(0.0, noise_std.max(f64::MIN_POSITIVE)).expect("finite std");
    let mut r = 0;
    for &(x, y, label) in &corners {
        for _ in 0..n_per_corner {
            let (dx, dy) = if noise_std > 0.0 {
                (noise.sample(&mut rng), noise.sample(&mut rng))
            } else {
                (0.0, 0.0)
            };
            inputs[[r, 0]] = x + dx;
            inputs[[r, 1]] = y + dy;
            targets[[r, 0]] = label;
            r += 1;
        }
    }
    Batch::new(inputs, targets)
}

/// Safety task: each feature's block is all-ones with its own frequency,
/// otherwise all-zeros, independently across features and examples; the
/// label is the OR of the feature indicators. Returns the batch and the
/// indicator matrix.
pub fn gen_dnf_safety(spec: &DnfSpec, n: usize, seed: u64) -> Result<(Batch, SafetyMeta)> {
    spec.validate()?;
    let c = spec.literals_per_clause;
    let mut inputs = Array2::zeros((n, spec.input_dim()));
    let mut targets = Array2::zeros((n, 1));
    let mut indicators = Array2::zeros((n, spec.num_clauses));
    let mut rng = seed_stream(seed, "task/dnf-safety");
    for r in 0..n {
        let mut any = false;
        for (f, &p) in spec.feature_freqs.iter().enumerate() {
            let on = rng.random::<f64>() < p;
            if on {
                any = true;
                indicators[[r, f]] = 1.0;
                for j in 0..c {
                    inputs[[r, f * c + j]] = 1.0;
                }
            }
        }
        targets[[r, 0]] = if any { 1.0 } else { 0.0 };
    }
    let batch = Batch::new(inputs, targets)?;
    Ok((
        batch,
        SafetyMeta {
            indicators,
            feature_freqs: spec.feature_freqs.clone(),
        },
    ))
}

/// A witness training set: `w + 1` disjoint clauses, one positive example
/// per clause (exactly that clause satisfied), and negatives that satisfy
/// no clause: mostly near-misses matching the positives' on-bit count,
/// plus a few all-zero rows.
#[derive(Debug, Clone)]
pub struct WitnessSet {
    pub batch: Batch,
    /// For each positive example, in order, the clause it witnesses.
    /// Positives occupy the first `clause_index.len()` batch rows.
    pub clause_index: Vec<usize>,
    pub num_clauses: usize,
    pub literals_per_clause: usize,
}

impl WitnessSet {
    pub fn num_positives(&self) -> usize {
        self.clause_index.len()
    }

    pub fn input_dim(&self) -> usize {
        self.num_clauses * self.literals_per_clause
    }
}

/// Build the witness set for barrier experiments. `w + 1` clauses of `c`
/// literals each; `round(negatives_per_positive * (w + 1))` negatives.
pub fn gen_dnf_witness(
    w: usize,
    c: usize,
    negatives_per_positive: f64,
    seed: u64,
) -> Result<WitnessSet> {
    if w == 0 {
        return Err(Error::config("w must be at least 1"));
    }
    if c == 0 || c > 20 {
        return Err(Error::config(format!("c must be in [1, 20], got {c}")));
    }
    if !(negatives_per_positive >= 0.0) {
        return Err(Error::config(format!(
            "negatives_per_positive must be nonnegative, got {negatives_per_positive}"
        )));
    }
    let clauses = w + 1;
    let dim = clauses * c;
    let negatives = ((negatives_per_positive * clauses as f64) + 0.5).floor() as usize;
    let n = clauses + negatives;
    let mut inputs = Array2::zeros((n, dim));
    let mut targets = Array2::zeros((n, 1));
    for f in 0..clauses {
        for j in 0..c {
            inputs[[f, f * c + j]] = 1.0;
        }
        targets[[f, 0]] = 1.0;
    }
    // Most negatives are near-misses: a primary block keeps c - s of its
    // literals and s other blocks get one stray literal each, with s drawn
    // uniformly from [1, min(c - 1, w)]. Every near-miss has exactly c
    // on-bits like the positives, no block reaches all-ones, and any unit
    // reading across blocks fires on some negative, so only per-clause
    // conjunctions separate the classes. The last few negatives stay
    // all-zero: the empty input satisfies no clause and pins the response
    // of a network with every hidden unit silent to the negative class.
    // With c = 1 every non-satisfying input is all-zeros already.
    let mut rng = seed_stream(seed, "task/dnf-witness");
    if c > 1 {
        let anchors = if negatives > 0 { (negatives / 3).max(1) } else { 0 };
        let max_strays = (c - 1).min(clauses - 1);
        for r in clauses..n - anchors {
            let f = rng.random_range(0..clauses);
            let strays = rng.random_range(1..=max_strays);
            let mut kept: Vec<usize> = (0..c).collect();
            for _ in 0..strays {
                let drop = rng.random_range(0..kept.len());
                kept.swap_remove(drop);
            }
            for &j in &kept {
                inputs[[r, f * c + j]] = 1.0;
            }
            let mut blocks: Vec<usize> = (0..clauses).filter(|&b| b != f).collect();
            for _ in 0..strays {
                let pick = rng.random_range(0..blocks.len());
                let g = blocks.swap_remove(pick);
                inputs[[r, g * c + rng.random_range(0..c)]] = 1.0;
            }
        }
    }
    let batch = Batch::new(inputs, targets)?;
    Ok(WitnessSet {
        batch,
        clause_index: (0..clauses).collect(),
        num_clauses: clauses,
        literals_per_clause: c,
    })
}

/// Monte Carlo estimate of the expected number of uniform draws needed to
/// see all `w` distinct coupons; the analytic value is `w * H_w`.
pub fn coupon_collector_oracle(w: usize, trials: usize, seed: u64) -> Result<f64> {
    if w == 0 {
        return Err(Error::config("w must be at least 1"));
    }
    if trials == 0 {
        return Err(Error::config("trials must be at least 1"));
    }
    let mut rng = seed_stream(seed, "oracle/coupon");
    let mut total = 0u64;
    let mut seen = vec![false; w];
    for _ in 0..trials {
        seen.fill(false);
        let mut distinct = 0;
        while distinct < w {
            total += 1;
            let draw = rng.random_range(0..w);
            if !seen[draw] {
                seen[draw] = true;
                distinct += 1;
            }
        }
    }
    Ok(total as f64 / trials as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn harmonic(n: usize) -> f64 {
        (1..=n).map(|i| 1.0 / i as f64).sum()
    }

    #[test]
    fn xor_without_noise_hits_exact_corners() {
        let batch = gen_xor(2, 0.0, 7).unwrap();
        assert_eq!(batch.len(), 8);
        for r in 0..8 {
            let x = batch.inputs[[r, 0]];
            let y = batch.inputs[[r, 1]];
            assert!(x == 0.0 || x == 1.0);
            assert!(y == 0.0 || y == 1.0);
            let want = if (x > 0.5) != (y > 0.5) { 1.0 } else { 0.0 };
            assert_eq!(batch.targets[[r, 0]], want);
        }
    }

    #[test]
    fn xor_labels_ignore_jitter() {
        let batch = gen_xor(50, 0.3, 11).unwrap();
        // Rows come in corner blocks of 50; labels follow the corner, not
        // the noisy coordinates.
        for (block, want) in [(0, 0.0), (1, 1.0), (2, 1.0), (3, 0.0)] {
            for i in 0..50 {
                assert_eq!(batch.targets[[block * 50 + i, 0]], want);
            }
        }
        let spread = batch
            .inputs
            .iter()
            .filter(|&&v| v != 0.0 && v != 1.0)
            .count();
        assert!(spread > 350, "noise was not applied: {spread}");
    }

    #[test]
    fn xor_is_deterministic_per_seed() {
        let a = gen_xor(10, 0.1, 3).unwrap();
        let b = gen_xor(10, 0.1, 3).unwrap();
        let c = gen_xor(10, 0.1, 4).unwrap();
        assert_eq!(a.inputs, b.inputs);
        assert_ne!(a.inputs, c.inputs);
    }

    #[test]
    fn safety_marginals_match_frequencies() {
        let spec = DnfSpec {
            num_clauses: 3,
            literals_per_clause: 3,
            feature_freqs: vec![0.11, 0.72, 0.22],
        };
        let n = 10_000;
        let (_, meta) = gen_dnf_safety(&spec, n, 5).unwrap();
        for (f, &p) in spec.feature_freqs.iter().enumerate() {
            let emp = meta.indicators.column(f).sum() / n as f64;
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!(
                (emp - p).abs() <= 3.0 * se,
                "feature {f}: empirical {emp} vs {p} (3se = {})",
                3.0 * se
            );
        }
    }

    #[test]
    fn safety_labels_are_the_or_of_blocks() {
        let spec = DnfSpec {
            num_clauses: 3,
            literals_per_clause: 3,
            feature_freqs: vec![0.11, 0.72, 0.22],
        };
        let (batch, meta) = gen_dnf_safety(&spec, 500, 9).unwrap();
        for r in 0..500 {
            let row: Vec<f64> = batch.inputs.row(r).to_vec();
            // Independent evaluation: a clause fires iff its whole block is 1.
            let mut fired = false;
            for f in 0..3 {
                let on = (0..3).all(|j| row[f * 3 + j] == 1.0);
                assert_eq!(on, meta.indicators[[r, f]] == 1.0);
                // Blocks are all-or-nothing.
                let any = (0..3).any(|j| row[f * 3 + j] == 1.0);
                assert_eq!(on, any);
                fired |= on;
            }
            assert_eq!(batch.targets[[r, 0]], if fired { 1.0 } else { 0.0 });
        }
    }

    #[test]
    fn safety_empty_batch_is_valid() {
        let spec = DnfSpec {
            num_clauses: 2,
            literals_per_clause: 2,
            feature_freqs: vec![0.5, 0.5],
        };
        let (batch, meta) = gen_dnf_safety(&spec, 0, 1).unwrap();
        assert_eq!(batch.len(), 0);
        assert_eq!(meta.indicators.nrows(), 0);
        assert_eq!(meta.feature_freqs, vec![0.5, 0.5]);
    }

    #[test]
    fn safety_rejects_bad_freqs() {
        let spec = DnfSpec {
            num_clauses: 2,
            literals_per_clause: 2,
            feature_freqs: vec![0.5],
        };
        assert!(gen_dnf_safety(&spec, 10, 1).is_err());
        let spec = DnfSpec {
            num_clauses: 1,
            literals_per_clause: 2,
            feature_freqs: vec![1.0],
        };
        assert!(gen_dnf_safety(&spec, 10, 1).is_err());
    }

    #[test]
    fn witness_positives_satisfy_exactly_their_clause() {
        let ws = gen_dnf_witness(8, 3, 1.0, 13).unwrap();
        let spec = DnfSpec {
            num_clauses: ws.num_clauses,
            literals_per_clause: ws.literals_per_clause,
            feature_freqs: vec![0.5; ws.num_clauses],
        };
        assert_eq!(ws.num_positives(), 9);
        assert_eq!(ws.batch.len(), 18);
        for (i, &f) in ws.clause_index.iter().enumerate() {
            let row: Vec<f64> = ws.batch.inputs.row(i).to_vec();
            assert_eq!(ws.batch.targets[[i, 0]], 1.0);
            for g in 0..ws.num_clauses {
                assert_eq!(spec.clause_on(&row, g), g == f, "positive {i} clause {g}");
            }
        }
    }

    #[test]
    fn witness_negatives_satisfy_no_clause() {
        let ws = gen_dnf_witness(16, 3, 2.0, 17).unwrap();
        let spec = DnfSpec {
            num_clauses: ws.num_clauses,
            literals_per_clause: ws.literals_per_clause,
            feature_freqs: vec![0.5; ws.num_clauses],
        };
        assert_eq!(ws.batch.len(), 17 + 34);
        for r in ws.num_positives()..ws.batch.len() {
            let row: Vec<f64> = ws.batch.inputs.row(r).to_vec();
            assert_eq!(ws.batch.targets[[r, 0]], 0.0);
            assert_eq!(spec.label(&row), 0.0, "negative {r} fires a clause");
        }
    }

    #[test]
    fn witness_negative_count_follows_ratio() {
        let ws = gen_dnf_witness(4, 2, 0.5, 3).unwrap();
        // round(0.5 * 5) = 3 negatives (half-up).
        assert_eq!(ws.batch.len(), 5 + 3);
        let ws = gen_dnf_witness(4, 2, 0.0, 3).unwrap();
        assert_eq!(ws.batch.len(), 5);
    }

    #[test]
    fn coupon_oracle_matches_analytic_mean() {
        // W=2: expectation 2 * (1 + 1/2) = 3.
        let est = coupon_collector_oracle(2, 100_000, 5).unwrap();
        assert!((est - 3.0).abs() < 0.03, "W=2 estimate {est}");
        // W=16: 16 * H_16 = 54.09...
        let want = 16.0 * harmonic(16);
        let est = coupon_collector_oracle(16, 100_000, 5).unwrap();
        assert!(
            (est - want).abs() / want < 0.01,
            "W=16 estimate {est} vs {want}"
        );
        assert_eq!(coupon_collector_oracle(1, 1000, 0).unwrap(), 1.0);
    }

    #[test]
    fn coupon_oracle_is_deterministic() {
        let a = coupon_collector_oracle(8, 5000, 42).unwrap();
        let b = coupon_collector_oracle(8, 5000, 42).unwrap();
        assert_eq!(a, b);
    }
}
