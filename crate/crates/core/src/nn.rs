//! Minimal dense MLP with per-layer binary masks.
//!
//! Layers store weights source-major, `[in_dim x out_dim]`: row `i` holds the
//! outgoing fan of input unit `i`, column `j` the incoming fan of output unit
//! `j`. The effective weight used in both passes is `W[i,j] * M[i,j] *
//! rescale[j]`, so masked entries are frozen: they contribute nothing forward
//! and receive a zero gradient, but keep their stored value.
//!
//! Hidden layers are rectifiers; the output layer is logistic and training
//! minimizes binary cross-entropy computed from logits.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::rng::seed_stream;

/// One affine layer plus its mask and per-output-channel rescale factors.
#[derive(Debug, Clone)]
pub struct MaskedLayer {
    weights: Array2<f64>,
    mask: Array2<f64>,
    bias: Array1<f64>,
    rescale: Array1<f64>,
}

impl MaskedLayer {
    fn he_init(in_dim: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let std = (2.0 / in_dim as f64).sqrt();
        let normal = Normal::new(0.0, std).expect("finite std");
        let weights = Array2::from_shape_fn((in_dim, out_dim), |_| normal.sample(rng));
        MaskedLayer {
            weights,
            mask: Array2::ones((in_dim, out_dim)),
            bias: Array1::zeros(out_dim),
            rescale: Array1::ones(out_dim),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn weights(&self) -> ArrayView2<'_, f64> {
        self.weights.view()
    }

    /// Mutable weight access. Masked entries may be edited freely; they stay
    /// inert until a refresh reactivates them.
    pub fn weights_mut(&mut self) -> ArrayViewMut2<'_, f64> {
        self.weights.view_mut()
    }

    pub fn mask(&self) -> ArrayView2<'_, f64> {
        self.mask.view()
    }

    pub fn bias(&self) -> ArrayView1<'_, f64> {
        self.bias.view()
    }

    pub fn rescale(&self) -> ArrayView1<'_, f64> {
        self.rescale.view()
    }

    /// Replace the mask. Entries must be exactly 0 or 1.
    pub fn set_mask(&mut self, mask: Array2<f64>) -> Result<()> {
        if mask.dim() != self.weights.dim() {
            return Err(Error::shape(format!(
                "mask shape {:?} does not match weights {:?}",
                mask.dim(),
                self.weights.dim()
            )));
        }
        if mask.iter().any(|&m| m != 0.0 && m != 1.0) {
            return Err(Error::config("mask entries must be 0 or 1"));
        }
        self.mask = mask;
        Ok(())
    }

    pub fn set_rescale(&mut self, rescale: Array1<f64>) -> Result<()> {
        if rescale.len() != self.out_dim() {
            return Err(Error::shape(format!(
                "rescale length {} does not match out_dim {}",
                rescale.len(),
                self.out_dim()
            )));
        }
        self.rescale = rescale;
        Ok(())
    }

    /// `W * M` with each output column scaled by its rescale factor.
    pub fn effective_weights(&self) -> Array2<f64> {
        &(&self.weights * &self.mask) * &self.rescale
    }

    /// Number of unmasked entries.
    pub fn active_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m != 0.0).count()
    }

    /// Fraction of entries unmasked.
    pub fn density(&self) -> f64 {
        self.active_count() as f64 / (self.in_dim() * self.out_dim()) as f64
    }

    /// Active entries in row `u` (outgoing degree of input unit `u`).
    pub fn row_degree(&self, u: usize) -> usize {
        self.mask.row(u).iter().filter(|&&m| m != 0.0).count()
    }

    /// Active entries in column `u` (incoming degree of output unit `u`).
    pub fn col_degree(&self, u: usize) -> usize {
        self.mask.column(u).iter().filter(|&&m| m != 0.0).count()
    }
}

/// Feed-forward network: rectifier hidden layers, logistic output.
#[derive(Debug, Clone)]
pub struct Network {
    layers: Vec<MaskedLayer>,
    sizes: Vec<usize>,
    steps: u64,
}

impl Network {
    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn num_layers(&self) -> usize {
        self.layers.len()
    }

    pub fn layer(&self, idx: usize) -> &MaskedLayer {
        &self.layers[idx]
    }

    pub fn layer_mut(&mut self, idx: usize) -> &mut MaskedLayer {
        &mut self.layers[idx]
    }

    /// Optimizer steps taken so far.
    pub fn steps(&self) -> u64 {
        self.steps
    }
}

/// A batch of examples: `inputs` is `[n x in_dim]`, `targets` `[n x out_dim]`
/// with entries in {0, 1}.
#[derive(Debug, Clone)]
pub struct Batch {
    pub inputs: Array2<f64>,
    pub targets: Array2<f64>,
}

impl Batch {
    pub fn new(inputs: Array2<f64>, targets: Array2<f64>) -> Result<Self> {
        if inputs.nrows() != targets.nrows() {
            return Err(Error::shape(format!(
                "inputs have {} rows, targets {}",
                inputs.nrows(),
                targets.nrows()
            )));
        }
        Ok(Batch { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Everything the forward pass produces: post-activation values per layer
/// (input excluded) and the output-layer logits.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub activations: Vec<Array2<f64>>,
    pub logits: Array2<f64>,
}

impl ForwardPass {
    /// Output-layer probabilities.
    pub fn outputs(&self) -> &Array2<f64> {
        self.activations.last().expect("network has layers")
    }
}

/// Build a network with He-initialized weights, zero biases, all-ones masks,
/// and unit rescale factors. `layer_sizes` lists unit counts from input to
/// output and needs at least two entries.
pub fn init_network(layer_sizes: &[usize], seed: u64) -> Result<Network> {
    if layer_sizes.len() < 2 {
        return Err(Error::config(format!(
            "layer_sizes needs at least 2 entries, got {}",
            layer_sizes.len()
        )));
    }
    if let Some(pos) = layer_sizes.iter().position(|&s| s == 0) {
        return Err(Error::config(format!("layer_sizes[{pos}] must be positive")));
    }
    let layers = layer_sizes
        .windows(2)
        .enumerate()
        .map(|(l, pair)| {
            let mut rng = seed_stream(seed, &format!("init/layer{l}"));
            MaskedLayer::he_init(pair[0], pair[1], &mut rng)
        })
        .collect();
    Ok(Network {
        layers,
        sizes: layer_sizes.to_vec(),
        steps: 0,
    })
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Mean binary cross-entropy computed from logits, elementwise-stable.
fn bce_from_logits(logits: &Array2<f64>, targets: &Array2<f64>) -> f64 {
    let n = logits.len() as f64;
    let total: f64 = logits
        .iter()
        .zip(targets.iter())
        .map(|(&z, &t)| z.max(0.0) - t * z + (-z.abs()).exp().ln_1p())
        .sum();
    total / n
}

/// Run the network on a batch. Errors if the batch width does not match the
/// input layer. Pure: no state changes, identical inputs give identical bits.
pub fn forward(network: &Network, batch: &Batch) -> Result<ForwardPass> {
    if batch.inputs.ncols() != network.sizes[0] {
        return Err(Error::shape(format!(
            "batch width {} does not match input dim {}",
            batch.inputs.ncols(),
            network.sizes[0]
        )));
    }
    let last = network.layers.len() - 1;
    let mut activations = Vec::with_capacity(network.layers.len());
    let mut current = batch.inputs.clone();
    let mut logits = Array2::zeros((0, 0));
    for (l, layer) in network.layers.iter().enumerate() {
        let z = current.dot(&layer.effective_weights()) + &layer.bias;
        if l == last {
            logits = z.clone();
            current = z.mapv(logistic);
        } else {
            current = z.mapv(|v| v.max(0.0));
        }
        activations.push(current.clone());
    }
    Ok(ForwardPass { activations, logits })
}

/// One full-batch gradient step at rate `lr`. Returns the pre-update loss.
/// A non-finite loss aborts with an error naming the current step; the
/// network is left unmodified in that case.
pub fn train_step(network: &mut Network, batch: &Batch, lr: f64) -> Result<f64> {
    if batch.targets.ncols() != *network.sizes.last().expect("sizes nonempty") {
        return Err(Error::shape(format!(
            "target width {} does not match output dim {}",
            batch.targets.ncols(),
            network.sizes.last().unwrap()
        )));
    }
    if batch.is_empty() {
        return Err(Error::config("cannot train on an empty batch"));
    }
    let pass = forward(network, batch)?;
    let loss = bce_from_logits(&pass.logits, &batch.targets);
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss {
            step: network.steps,
        });
    }

    // d(loss)/d(logits) for mean BCE is (sigma(z) - t) / n.
    let n = pass.logits.len() as f64;
    let mut delta = (pass.outputs() - &batch.targets) / n;

    let mut grads: Vec<(Array2<f64>, Array1<f64>)> = Vec::with_capacity(network.layers.len());
    for l in (0..network.layers.len()).rev() {
        let layer = &network.layers[l];
        let upstream = if l == 0 {
            &batch.inputs
        } else {
            &pass.activations[l - 1]
        };
        // z_j = sum_i x_i W[i,j] M[i,j] s_j + b_j, so dW = (x^T delta) * M * s.
        let grad_w = &(&upstream.t().dot(&delta) * &layer.mask) * &layer.rescale;
        let grad_b = delta.sum_axis(Axis(0));
        if l > 0 {
            let dx = delta.dot(&layer.effective_weights().t());
            let gate = pass.activations[l - 1].mapv(|a| if a > 0.0 { 1.0 } else { 0.0 });
            delta = dx * gate;
        }
        grads.push((grad_w, grad_b));
    }
    grads.reverse();

    for (layer, (grad_w, grad_b)) in network.layers.iter_mut().zip(grads) {
        layer.weights.scaled_add(-lr, &grad_w);
        layer.bias.scaled_add(-lr, &grad_b);
    }
    network.steps += 1;
    Ok(loss)
}

/// Fraction of examples whose every output matches its target after
/// thresholding. `output > threshold` predicts class 1, so an exact tie
/// predicts class 0.
pub fn evaluate_accuracy(network: &Network, batch: &Batch, threshold: f64) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::undefined("accuracy of an empty batch"));
    }
    let pass = forward(network, batch)?;
    let outputs = pass.outputs();
    let correct = outputs
        .axis_iter(Axis(0))
        .zip(batch.targets.axis_iter(Axis(0)))
        .filter(|(out, tgt)| {
            out.iter()
                .zip(tgt.iter())
                .all(|(&o, &t)| (o > threshold) == (t > 0.5))
        })
        .count();
    Ok(correct as f64 / batch.len() as f64)
}

/// Mean loss of the current parameters on a batch, without training.
pub fn evaluate_loss(network: &Network, batch: &Batch) -> Result<f64> {
    let pass = forward(network, batch)?;
    Ok(bce_from_logits(&pass.logits, &batch.targets))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;

    fn assert_close(a: f64, b: f64, atol: f64, rtol: f64) {
        let tol = atol + rtol * a.abs().max(b.abs());
        assert!(
            (a - b).abs() <= tol,
            "values differ: {a} vs {b} (tol {tol})"
        );
    }

    fn toy_batch(n: usize, in_dim: usize, out_dim: usize, seed: u64) -> Batch {
        let mut rng = seed_stream(seed, "test/batch");
        let inputs = Array2::from_shape_fn((n, in_dim), |_| rng.random_range(-1.0..1.0));
        let targets =
            Array2::from_shape_fn((n, out_dim), |_| if rng.random::<bool>() { 1.0 } else { 0.0 });
        Batch::new(inputs, targets).unwrap()
    }

    #[test]
    fn init_rejects_short_or_zero_sizes() {
        assert!(init_network(&[4], 0).is_err());
        assert!(init_network(&[4, 0, 2], 0).is_err());
    }

    #[test]
    fn init_is_deterministic_and_seed_sensitive() {
        let a = init_network(&[3, 8, 1], 42).unwrap();
        let b = init_network(&[3, 8, 1], 42).unwrap();
        let c = init_network(&[3, 8, 1], 43).unwrap();
        assert_eq!(a.layer(0).weights(), b.layer(0).weights());
        assert_eq!(a.layer(1).weights(), b.layer(1).weights());
        assert_ne!(a.layer(0).weights(), c.layer(0).weights());
        assert!(a.layer(0).bias().iter().all(|&b| b == 0.0));
        assert!(a.layer(0).mask().iter().all(|&m| m == 1.0));
        assert!(a.layer(0).rescale().iter().all(|&r| r == 1.0));
    }

    #[test]
    fn he_init_matches_fan_in_scale() {
        // 200 x 100 draws give a sample std within a few percent of
        // sqrt(2/200); loose bounds keep this robust.
        let net = init_network(&[200, 100, 1], 9).unwrap();
        let w = net.layer(0).weights();
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let var = w.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / w.len() as f64;
        let expected = 2.0 / 200.0;
        assert_close(var, expected, 0.0, 0.08);
    }

    #[test]
    fn zero_weights_give_half_outputs() {
        let mut net = init_network(&[2, 4, 1], 1).unwrap();
        for l in 0..net.num_layers() {
            net.layer_mut(l).weights_mut().fill(0.0);
        }
        let batch = toy_batch(5, 2, 1, 3);
        let pass = forward(&net, &batch).unwrap();
        assert!(pass.activations[0].iter().all(|&h| h == 0.0));
        assert!(pass.outputs().iter().all(|&o| o == 0.5));
    }

    #[test]
    fn fully_masked_layer_passes_only_bias() {
        let mut net = init_network(&[3, 2, 1], 5).unwrap();
        let dim = net.layer(0).weights().dim();
        net.layer_mut(0).set_mask(Array2::zeros(dim)).unwrap();
        net.layer_mut(0)
            .bias
            .assign(&array![0.7, -0.3]);
        let a = forward(&net, &toy_batch(4, 3, 1, 7)).unwrap();
        let b = forward(&net, &toy_batch(4, 3, 1, 8)).unwrap();
        assert_eq!(a.activations[0], b.activations[0]);
        assert!(a.activations[0]
            .rows()
            .into_iter()
            .all(|r| r[0] == 0.7 && r[1] == 0.0));
    }

    #[test]
    fn rescale_matches_scaled_weights() {
        let base = init_network(&[3, 6, 2, 1], 11).unwrap();
        let mut rescaled = base.clone();
        let mut doubled = base.clone();
        let factors = Array1::from_elem(rescaled.layer(1).out_dim(), 2.0);
        rescaled.layer_mut(1).set_rescale(factors).unwrap();
        doubled.layer_mut(1).weights_mut().mapv_inplace(|w| 2.0 * w);
        let batch = toy_batch(6, 3, 1, 13);
        let a = forward(&rescaled, &batch).unwrap();
        let b = forward(&doubled, &batch).unwrap();
        assert_eq!(a.outputs(), b.outputs());
    }

    #[test]
    fn forward_rejects_width_mismatch() {
        let net = init_network(&[3, 4, 1], 2).unwrap();
        let batch = toy_batch(2, 5, 1, 2);
        assert!(matches!(forward(&net, &batch), Err(Error::Shape(_))));
    }

    #[test]
    fn forward_is_pure() {
        let net = init_network(&[2, 8, 1], 21).unwrap();
        let batch = toy_batch(16, 2, 1, 22);
        let a = forward(&net, &batch).unwrap();
        let b = forward(&net, &batch).unwrap();
        assert_eq!(a.outputs(), b.outputs());
        assert_eq!(net.steps(), 0);
    }

    #[test]
    fn training_is_deterministic() {
        let batch = toy_batch(32, 4, 1, 31);
        let mut a = init_network(&[4, 16, 1], 30).unwrap();
        let mut b = init_network(&[4, 16, 1], 30).unwrap();
        for _ in 0..100 {
            train_step(&mut a, &batch, 0.1).unwrap();
            train_step(&mut b, &batch, 0.1).unwrap();
        }
        assert_eq!(a.layer(0).weights(), b.layer(0).weights());
        assert_eq!(a.layer(1).bias(), b.layer(1).bias());
        assert_eq!(a.steps(), 100);
    }

    #[test]
    fn masked_entries_are_frozen() {
        let mut net = init_network(&[4, 8, 1], 40).unwrap();
        let mut mask = Array2::ones(net.layer(0).weights().dim());
        mask[[0, 0]] = 0.0;
        mask[[2, 5]] = 0.0;
        mask[[3, 7]] = 0.0;
        net.layer_mut(0).set_mask(mask).unwrap();
        let frozen = [
            net.layer(0).weights()[[0, 0]],
            net.layer(0).weights()[[2, 5]],
            net.layer(0).weights()[[3, 7]],
        ];
        let batch = toy_batch(16, 4, 1, 41);
        for _ in 0..50 {
            train_step(&mut net, &batch, 0.2).unwrap();
        }
        assert_eq!(net.layer(0).weights()[[0, 0]], frozen[0]);
        assert_eq!(net.layer(0).weights()[[2, 5]], frozen[1]);
        assert_eq!(net.layer(0).weights()[[3, 7]], frozen[2]);
    }

    #[test]
    fn one_step_decreases_separable_loss() {
        let mut net = init_network(&[2, 1], 50).unwrap();
        let batch = Batch::new(
            array![[1.0, 0.5], [-1.0, -0.5]],
            array![[1.0], [0.0]],
        )
        .unwrap();
        let first = train_step(&mut net, &batch, 0.1).unwrap();
        let second = train_step(&mut net, &batch, 0.1).unwrap();
        assert!(second < first, "loss did not decrease: {first} -> {second}");
    }

    #[test]
    fn non_finite_loss_is_a_structured_error() {
        let mut net = init_network(&[2, 1], 60).unwrap();
        net.layer_mut(0).weights_mut().fill(f64::NAN);
        let batch = toy_batch(4, 2, 1, 61);
        match train_step(&mut net, &batch, 0.1) {
            Err(Error::NonFiniteLoss { step }) => assert_eq!(step, 0),
            other => panic!("expected NonFiniteLoss, got {other:?}"),
        }
    }

    #[test]
    fn gradients_match_central_differences() {
        // Small net, <= 100 parameters, with a nontrivial mask and rescale so
        // the whole effective-weight chain is exercised.
        let mut net = init_network(&[3, 5, 1], 70).unwrap();
        let mut mask = Array2::ones(net.layer(0).weights().dim());
        mask[[1, 2]] = 0.0;
        mask[[2, 4]] = 0.0;
        net.layer_mut(0).set_mask(mask).unwrap();
        net.layer_mut(0)
            .set_rescale(array![1.0, 1.3, 0.7, 1.0, 2.0])
            .unwrap();
        let batch = toy_batch(8, 3, 1, 71);

        let lr = 1.0;
        let eps = 1e-5;
        let mut stepped = net.clone();
        train_step(&mut stepped, &batch, lr).unwrap();

        for l in 0..net.num_layers() {
            let (rows, cols) = net.layer(l).weights().dim();
            for i in 0..rows {
                for j in 0..cols {
                    let grad = (net.layer(l).weights()[[i, j]]
                        - stepped.layer(l).weights()[[i, j]])
                        / lr;
                    let mut plus = net.clone();
                    plus.layer_mut(l).weights_mut()[[i, j]] += eps;
                    let mut minus = net.clone();
                    minus.layer_mut(l).weights_mut()[[i, j]] -= eps;
                    let fd = (evaluate_loss(&plus, &batch).unwrap()
                        - evaluate_loss(&minus, &batch).unwrap())
                        / (2.0 * eps);
                    assert_close(grad, fd, 1e-8, 1e-4);
                    if net.layer(l).mask()[[i, j]] == 0.0 {
                        assert_eq!(grad, 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn bias_gradients_match_central_differences() {
        let net = init_network(&[3, 5, 1], 75).unwrap();
        let batch = toy_batch(8, 3, 1, 76);
        let lr = 1.0;
        let eps = 1e-5;
        let mut stepped = net.clone();
        train_step(&mut stepped, &batch, lr).unwrap();
        for l in 0..net.num_layers() {
            for j in 0..net.layer(l).out_dim() {
                let grad = (net.layer(l).bias()[j] - stepped.layer(l).bias()[j]) / lr;
                let mut plus = net.clone();
                plus.layer_mut(l).bias[j] += eps;
                let mut minus = net.clone();
                minus.layer_mut(l).bias[j] -= eps;
                let fd = (evaluate_loss(&plus, &batch).unwrap()
                    - evaluate_loss(&minus, &batch).unwrap())
                    / (2.0 * eps);
                assert_close(grad, fd, 1e-8, 1e-4);
            }
        }
    }

    #[test]
    fn tie_outputs_predict_class_zero() {
        let mut net = init_network(&[2, 1], 80).unwrap();
        net.layer_mut(0).weights_mut().fill(0.0);
        // Outputs are exactly 0.5 everywhere; predictions are all class 0,
        // so accuracy equals the base rate of class 0.
        let batch = Batch::new(
            array![[0.3, 0.1], [0.2, 0.9], [0.5, 0.5], [0.1, 0.1]],
            array![[0.0], [1.0], [1.0], [0.0]],
        )
        .unwrap();
        let acc = evaluate_accuracy(&net, &batch, 0.5).unwrap();
        assert_eq!(acc, 0.5);
    }

    #[test]
    fn accuracy_matches_direct_recount() {
        let net = init_network(&[4, 12, 1], 90).unwrap();
        let batch = toy_batch(10_000, 4, 1, 91);
        let acc = evaluate_accuracy(&net, &batch, 0.5).unwrap();
        let outputs = forward(&net, &batch).unwrap().outputs().clone();
        let mut correct = 0usize;
        for r in 0..batch.len() {
            let pred = if outputs[[r, 0]] > 0.5 { 1.0 } else { 0.0 };
            if pred == batch.targets[[r, 0]] {
                correct += 1;
            }
        }
        assert_eq!(acc, correct as f64 / 10_000.0);
    }

    #[test]
    fn empty_batch_accuracy_is_an_error() {
        let net = init_network(&[2, 1], 95).unwrap();
        let batch = Batch::new(Array2::zeros((0, 2)), Array2::zeros((0, 1))).unwrap();
        assert!(matches!(
            evaluate_accuracy(&net, &batch, 0.5),
            Err(Error::Undefined(_))
        ));
    }
}
