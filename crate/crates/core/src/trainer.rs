//! Minibatch training of masked dense ReLU networks with hand-written
//! backpropagation. Hidden layers apply ReLU (derivative 0 at 0); the output
//! layer is linear. The networks carry no bias terms.

use std::time::Instant;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netcore::SparseNet;
use crate::rng::{self, Stream};
use crate::tasks::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Loss {
    /// Mean over rows and outputs of the squared error.
    Mse,
    /// Mean over rows of the cross-entropy of softmax outputs.
    SoftmaxCrossEntropy,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Sgd { lr: f64, momentum: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
}

impl Optimizer {
    pub fn adam(lr: f64) -> Self {
        Optimizer::Adam { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    fn lr(&self) -> f64 {
        match *self {
            Optimizer::Sgd { lr, .. } | Optimizer::Adam { lr, .. } => lr,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LrDecay {
    Constant,
    /// Multiply the rate by `factor` after every epoch.
    ExponentialPerEpoch { factor: f64 },
    /// Multiply the rate by `factor` at each listed epoch.
    StepDrop { epochs: Vec<usize>, factor: f64 },
}

impl LrDecay {
    /// Multiplier for 0-based `epoch`.
    pub fn factor(&self, epoch: usize) -> f64 {
        match self {
            LrDecay::Constant => 1.0,
            LrDecay::ExponentialPerEpoch { factor } => factor.powi(epoch as i32),
            LrDecay::StepDrop { epochs, factor } => factor.powi(epochs.iter().filter(|&&e| e <= epoch).count() as i32),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub lr_decay: LrDecay,
    pub loss: Loss,
    pub seed: u64,
}

impl Default for TrainConfig {
    /// Adam at 1e-3 decayed by 0.95 per epoch, batch 32, MSE, 10 epochs.
    fn default() -> Self {
        TrainConfig {
            epochs: 10,
            batch_size: 32,
            optimizer: Optimizer::adam(1e-3),
            lr_decay: LrDecay::ExponentialPerEpoch { factor: 0.95 },
            loss: Loss::Mse,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if !(self.optimizer.lr() > 0.0) {
            return bad(format!("learning rate must be positive, got {}", self.optimizer.lr()));
        }
        if let Optimizer::Sgd { momentum, .. } = self.optimizer {
            if !(0.0..1.0).contains(&momentum) {
                return bad(format!("momentum must lie in [0, 1), got {momentum}"));
            }
        }
        Ok(())
    }
}

/// Activations of every unit layer (inputs first) and the hidden
/// pre-activations, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub activations: Vec<Array2<f64>>,
    pub pre_activations: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn outputs(&self) -> &Array2<f64> {
        self.activations.last().unwrap()
    }
}

fn dense_weights(net: &SparseNet, layer: usize) -> Result<Array2<f64>> {
    let arch = net.arch();
    if !arch.layer_kinds()[layer].is_dense() {
        return Err(Error::DenseOnly { layer });
    }
    let (n_src, n_dst) = arch.layer_shape(layer);
    Ok(Array2::from_shape_vec((n_dst, n_src), net.masked_layer(layer)).expect("layer shape"))
}

pub fn forward(net: &SparseNet, inputs: &ArrayView2<f64>) -> Result<ForwardCache> {
    let arch = net.arch();
    if inputs.ncols() != arch.input_dim() {
        return Err(Error::ShapeMismatch {
            expected: format!("{} input columns", arch.input_dim()),
            found: format!("{} input columns", inputs.ncols()),
        });
    }
    let depth = arch.parametrized_layer_count();
    let mut activations = vec![inputs.to_owned()];
    let mut pre_activations = Vec::with_capacity(depth);
    for l in 0..depth {
        let w = dense_weights(net, l)?;
        let z = activations[l].dot(&w.t());
        if l + 1 < depth {
            activations.push(z.mapv(|v| v.max(0.0)));
            pre_activations.push(z);
        } else {
            activations.push(z);
        }
    }
    Ok(ForwardCache { activations, pre_activations })
}

fn softmax_rows(y: &Array2<f64>) -> Array2<f64> {
    let mut p = y.clone();
    for mut row in p.rows_mut() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    p
}

/// Loss value and its gradient with respect to the outputs.
pub fn loss_with_grad(outputs: &Array2<f64>, targets: &ArrayView2<f64>, loss: Loss) -> Result<(f64, Array2<f64>)> {
    if outputs.dim() != targets.dim() {
        return Err(Error::ShapeMismatch {
            expected: format!("targets {:?}", outputs.dim()),
            found: format!("targets {:?}", targets.dim()),
        });
    }
    let rows = outputs.nrows();
    if rows == 0 {
        return Err(Error::EmptyBatch);
    }
    match loss {
        Loss::Mse => {
            let diff = outputs - targets;
            let n = diff.len() as f64;
            let value = diff.iter().map(|d| d * d).sum::<f64>() / n;
            Ok((value, diff * (2.0 / n)))
        }
        Loss::SoftmaxCrossEntropy => {
            let p = softmax_rows(outputs);
            let value = -p
                .iter()
                .zip(targets.iter())
                .filter(|(_, &t)| t != 0.0)
                .map(|(&q, &t)| t * q.max(f64::MIN_POSITIVE).ln())
                .sum::<f64>()
                / rows as f64;
            // d/dy of -sum_k t_k log p_k is p * sum_k t_k - t
            let mut grad = p;
            for (mut g, t) in grad.rows_mut().into_iter().zip(targets.rows()) {
                let mass = t.sum();
                g.zip_mut_with(&t, |gi, &ti| *gi = (*gi * mass - ti) / rows as f64);
            }
            Ok((value, grad))
        }
    }
}

pub fn loss_value(outputs: &Array2<f64>, targets: &ArrayView2<f64>, loss: Loss) -> Result<f64> {
    loss_with_grad(outputs, targets, loss).map(|(v, _)| v)
}

/// Per-parameter gradients, laid out like the weights; zero wherever the
/// mask is zero.
pub fn backward(net: &SparseNet, cache: &ForwardCache, output_grad: Array2<f64>) -> Result<Vec<Vec<f64>>> {
    let depth = net.arch().parametrized_layer_count();
    let mut grads = vec![Vec::new(); depth];
    let mut delta = output_grad;
    for l in (0..depth).rev() {
        let g = delta.t().dot(&cache.activations[l]);
        let mask = net.mask().layer(l);
        grads[l] = g.iter().zip(mask).map(|(&v, &m)| if m { v } else { 0.0 }).collect();
        if l > 0 {
            let w = dense_weights(net, l)?;
            let mut prev = delta.dot(&w);
            prev.zip_mut_with(&cache.pre_activations[l - 1], |d, &z| {
                if z <= 0.0 {
                    *d = 0.0;
                }
            });
            delta = prev;
        }
    }
    Ok(grads)
}

/// Forward, loss and backward in one call.
pub fn loss_and_gradients(
    net: &SparseNet,
    inputs: &ArrayView2<f64>,
    targets: &ArrayView2<f64>,
    loss: Loss,
) -> Result<(f64, Vec<Vec<f64>>)> {
    if inputs.nrows() == 0 {
        return Err(Error::EmptyBatch);
    }
    let cache = forward(net, inputs)?;
    let (value, grad) = loss_with_grad(cache.outputs(), targets, loss)?;
    Ok((value, backward(net, &cache, grad)?))
}

/// Loss (and classification accuracy for cross-entropy) on a dataset.
pub fn evaluate(net: &SparseNet, data: &Dataset, loss: Loss) -> Result<(f64, Option<f64>)> {
    let cache = forward(net, &data.inputs.view())?;
    let value = loss_value(cache.outputs(), &data.targets.view(), loss)?;
    let accuracy = match loss {
        Loss::Mse => None,
        Loss::SoftmaxCrossEntropy => {
            let argmax = |r: ndarray::ArrayView1<f64>| {
                r.iter().enumerate().fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b }).0
            };
            let hits = cache
                .outputs()
                .rows()
                .into_iter()
                .zip(data.targets.rows())
                .filter(|(o, t)| argmax(o.view()) == argmax(t.view()))
                .count();
            Some(hits as f64 / data.len() as f64)
        }
    };
    Ok((value, accuracy))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    pub epoch: usize,
    pub learning_rate: f64,
    pub train_loss: f64,
    pub eval_loss: Option<f64>,
    pub eval_accuracy: Option<f64>,
    #[serde(skip)]
    pub wall_time_secs: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochReport>,
    pub final_train_loss: Option<f64>,
    pub final_eval_loss: Option<f64>,
    pub final_eval_accuracy: Option<f64>,
}

fn opt_cell(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| format!("{x:e}"))
}

impl TrainReport {
    /// One row per epoch. Wall time is left out so reruns are byte-identical;
    /// see [`TrainReport::timing_csv`].
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,learning_rate,train_loss,eval_loss,eval_accuracy\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{:e},{:e},{},{}\n",
                e.epoch,
                e.learning_rate,
                e.train_loss,
                opt_cell(e.eval_loss),
                opt_cell(e.eval_accuracy)
            ));
        }
        out
    }

    pub fn timing_csv(&self) -> String {
        let mut out = String::from("epoch,wall_time_secs\n");
        for e in &self.epochs {
            out.push_str(&format!("{},{}\n", e.epoch, e.wall_time_secs));
        }
        out
    }

    /// The report with wall times zeroed, for reproducibility comparisons.
    pub fn without_timing(&self) -> TrainReport {
        let mut r = self.clone();
        for e in &mut r.epochs {
            e.wall_time_secs = 0.0;
        }
        r
    }
}

/// Optimizer state over the active parameters only.
struct OptimizerState {
    active: Vec<Vec<usize>>,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step: i32,
}

impl OptimizerState {
    fn new(net: &SparseNet) -> Self {
        let active: Vec<Vec<usize>> = net
            .mask()
            .layers()
            .iter()
            .map(|l| l.iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect())
            .collect();
        let zeros = |a: &Vec<Vec<usize>>| a.iter().map(|l| vec![0.0; l.len()]).collect();
        OptimizerState { first: zeros(&active), second: zeros(&active), active, step: 0 }
    }

    fn update(&mut self, weights: &mut [Vec<f64>], grads: &[Vec<f64>], opt: Optimizer, lr: f64) {
        self.step += 1;
        for (l, idx) in self.active.iter().enumerate() {
            for (slot, &i) in idx.iter().enumerate() {
                let g = grads[l][i];
                match opt {
                    Optimizer::Sgd { momentum, .. } => {
                        let v = &mut self.first[l][slot];
                        *v = momentum * *v + g;
                        weights[l][i] -= lr * *v;
                    }
                    Optimizer::Adam { beta1, beta2, eps, .. } => {
                        let m = &mut self.first[l][slot];
                        *m = beta1 * *m + (1.0 - beta1) * g;
                        let v = &mut self.second[l][slot];
                        *v = beta2 * *v + (1.0 - beta2) * g * g;
                        let m_hat = *m / (1.0 - beta1.powi(self.step));
                        let v_hat = *v / (1.0 - beta2.powi(self.step));
                        weights[l][i] -= lr * m_hat / (v_hat.sqrt() + eps);
                    }
                }
            }
        }
    }
}

/// Trains the masked network. Only active weights are ever updated, so the
/// mask (and density) is unchanged. Deterministic in `(net, data, config)`.
pub fn train(
    net: &SparseNet,
    train_data: &Dataset,
    eval_data: Option<&Dataset>,
    config: &TrainConfig,
) -> Result<(SparseNet, TrainReport)> {
    config.validate()?;
    if train_data.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if let Some(layer) = net.arch().first_conv_layer() {
        return Err(Error::DenseOnly { layer });
    }
    let mut current = net.apply_mask();
    let mut weights = current.all_weights().to_vec();
    let mut state = OptimizerState::new(net);
    let mut rng = rng::stream(config.seed, Stream::Train);
    let mut order: Vec<usize> = (0..train_data.len()).collect();
    let mut report = TrainReport::default();

    for epoch in 0..config.epochs {
        let started = Instant::now();
        let lr = config.optimizer.lr() * config.lr_decay.factor(epoch);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let x = train_data.inputs.select(Axis(0), chunk);
            let t = train_data.targets.select(Axis(0), chunk);
            let (value, grads) = loss_and_gradients(&current, &x.view(), &t.view(), config.loss)?;
            if !value.is_finite() {
                return Err(Error::Divergence { epoch, loss: value });
            }
            loss_sum += value * chunk.len() as f64;
            state.update(&mut weights, &grads, config.optimizer, lr);
            current = current.with_weights(weights.clone())?;
        }
        let train_loss = loss_sum / train_data.len() as f64;
        if !train_loss.is_finite() || weights.iter().flatten().any(|w| !w.is_finite()) {
            return Err(Error::Divergence { epoch, loss: train_loss });
        }
        let (eval_loss, eval_accuracy) = match eval_data {
            Some(d) => {
                let (l, a) = evaluate(&current, d, config.loss)?;
                (Some(l), a)
            }
            None => (None, None),
        };
        report.epochs.push(EpochReport {
            epoch,
            learning_rate: lr,
            train_loss,
            eval_loss,
            eval_accuracy,
            wall_time_secs: started.elapsed().as_secs_f64(),
        });
    }
    report.final_train_loss = report.epochs.last().map(|e| e.train_loss);
    report.final_eval_loss = report.epochs.last().and_then(|e| e.eval_loss);
    report.final_eval_accuracy = report.epochs.last().and_then(|e| e.eval_accuracy);
    Ok((current, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::{build_network, Architecture, InitSpec, Mask};
    use crate::tasks::Split;
    use ndarray::array;

    fn net_from(sizes: &[usize], weights: Vec<Vec<f64>>) -> SparseNet {
        let arch = Architecture::dense(sizes).unwrap();
        SparseNet::from_parts(arch.clone(), InitSpec::Kaiming, weights, Mask::ones(&arch), 0).unwrap()
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let net = net_from(&[3, 4, 2], vec![vec![0.0; 12], vec![0.0; 8]]);
        let x = array![[1.0, -2.0, 3.0], [0.5, 0.5, 0.5]];
        assert!(forward(&net, &x.view()).unwrap().outputs().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_path_passes_positive_input() {
        let net = net_from(&[1, 1, 1, 1], vec![vec![1.0]; 3]);
        let x = array![[2.5]];
        assert_eq!(forward(&net, &x.view()).unwrap().outputs()[[0, 0]], 2.5);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let net = net_from(&[2, 1], vec![vec![1.0, 1.0]]);
        let x = array![[1.0, 2.0, 3.0]];
        assert!(matches!(forward(&net, &x.view()), Err(Error::ShapeMismatch { .. })));
    }

    #[test]
    fn masked_gradient_is_zero_and_perfect_fit_has_zero_gradient() {
        let arch = Architecture::dense(&[3, 4, 2]).unwrap();
        let net = build_network(&arch, InitSpec::Kaiming, 1).unwrap();
        let mut mask = Mask::ones(&arch);
        mask.set(0, 5, false);
        mask.set(1, 2, false);
        let net = net.with_mask(mask).unwrap();
        let x = array![[1.0, -0.5, 0.3], [0.2, 0.9, -1.0]];
        let t = array![[0.1, 0.2], [0.3, -0.4]];
        let (_, g) = loss_and_gradients(&net, &x.view(), &t.view(), Loss::Mse).unwrap();
        assert_eq!(g[0][5], 0.0);
        assert_eq!(g[1][2], 0.0);

        let y = forward(&net, &x.view()).unwrap().outputs().clone();
        let (l, g) = loss_and_gradients(&net, &x.view(), &y.view(), Loss::Mse).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.iter().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_epochs_is_identity() {
        let arch = Architecture::dense(&[2, 3, 1]).unwrap();
        let net = build_network(&arch, InitSpec::Kaiming, 1).unwrap();
        let data = Dataset::new(array![[1.0, 2.0]], array![[1.0]], None, Split::Train).unwrap();
        let cfg = TrainConfig { epochs: 0, ..Default::default() };
        let (trained, report) = train(&net, &data, None, &cfg).unwrap();
        assert_eq!(trained, net);
        assert!(report.epochs.is_empty());
    }

    #[test]
    fn linear_regression_decreases_monotonically() {
        let net = net_from(&[1, 1], vec![vec![0.0]]);
        let xs: Vec<f64> = (0..64).map(|i| (i as f64 - 32.0) / 16.0).collect();
        let inputs = Array2::from_shape_vec((64, 1), xs.clone()).unwrap();
        let targets = inputs.mapv(|x| 2.0 * x);
        let data = Dataset::new(inputs, targets, None, Split::Train).unwrap();
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 8,
            optimizer: Optimizer::Sgd { lr: 0.05, momentum: 0.0 },
            lr_decay: LrDecay::Constant,
            loss: Loss::Mse,
            seed: 3,
        };
        let (trained, report) = train(&net, &data, Some(&data), &cfg).unwrap();
        let losses: Vec<f64> = report.epochs.iter().map(|e| e.eval_loss.unwrap()).collect();
        assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
        assert!((trained.weights(0)[0] - 2.0).abs() < 0.1);
    }

    #[test]
    fn training_keeps_mask_and_is_deterministic() {
        let arch = Architecture::dense(&[4, 8, 3]).unwrap();
        let net = build_network(&arch, InitSpec::Kaiming, 2).unwrap();
        let mut mask = Mask::ones(&arch);
        for i in (0..32).step_by(2) {
            mask.set(0, i, false);
        }
        let net = net.with_mask(mask).unwrap();
        let inputs = Array2::from_shape_fn((40, 4), |(i, j)| ((i * 7 + j * 3) % 11) as f64 / 11.0);
        let targets = Array2::from_shape_fn((40, 3), |(i, j)| ((i + j) % 5) as f64 / 5.0);
        let data = Dataset::new(inputs, targets, None, Split::Train).unwrap();
        let cfg = TrainConfig { epochs: 3, batch_size: 7, ..Default::default() };
        let (a, ra) = train(&net, &data, Some(&data), &cfg).unwrap();
        let (b, rb) = train(&net, &data, Some(&data), &cfg).unwrap();
        assert_eq!(a.mask(), net.mask());
        assert_eq!(a.density(), net.density());
        assert_eq!(a, b);
        assert_eq!(ra.without_timing(), rb.without_timing());
        assert_eq!(ra.to_csv(), rb.to_csv());
        assert!(a.weights(0).iter().step_by(2).all(|&w| w == 0.0));
    }

    #[test]
    fn cross_entropy_gradient_and_accuracy() {
        let net = net_from(&[2, 2], vec![vec![1.0, 0.0, 0.0, 1.0]]);
        let x = array![[2.0, 0.0], [0.0, 3.0]];
        let t = array![[1.0, 0.0], [0.0, 1.0]];
        let data = Dataset::new(x, t, None, Split::Test).unwrap();
        let (loss, acc) = evaluate(&net, &data, Loss::SoftmaxCrossEntropy).unwrap();
        assert_eq!(acc, Some(1.0));
        let expect = ((1.0 + (-2f64).exp()).ln() + (1.0 + (-3f64).exp()).ln()) / 2.0;
        assert!((loss - expect).abs() < 1e-12);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
        let sgd = |lr, momentum| TrainConfig { optimizer: Optimizer::Sgd { lr, momentum }, ..Default::default() };
        assert!(sgd(0.0, 0.0).validate().is_err());
        assert!(sgd(0.1, 1.0).validate().is_err());
        assert!(sgd(0.1, 0.9).validate().is_ok());
    }

    #[test]
    fn divergence_is_reported() {
        let net = net_from(&[1, 1], vec![vec![1.0]]);
        let data = Dataset::new(array![[1e200]], array![[0.0]], None, Split::Train).unwrap();
        let cfg = TrainConfig { epochs: 2, ..Default::default() };
        assert!(matches!(train(&net, &data, None, &cfg), Err(Error::Divergence { epoch: 0, .. })));
    }

    #[test]
    fn decay_factors() {
        assert!((LrDecay::ExponentialPerEpoch { factor: 0.95 }.factor(2) - 0.9025).abs() < 1e-15);
        let step = LrDecay::StepDrop { epochs: vec![2, 4], factor: 0.1 };
        assert_eq!(step.factor(1), 1.0);
        assert!((step.factor(2) - 0.1).abs() < 1e-15);
        assert!((step.factor(5) - 0.01).abs() < 1e-15);
    }
}
