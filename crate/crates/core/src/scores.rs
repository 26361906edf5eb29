//! Saliency scores and iterative score-based pruning.
//!
//! SynFlow (path norm L1) and SynFlow-L2 (path norm L2) are evaluated in
//! closed form. For a path norm `g` (`|w|` or `w^2`) the forward accumulator
//! `F(u)` sums `prod g(w)` over active partial paths from the inputs to `u`
//! and the backward accumulator `B(v)` does the same from `v` to the
//! outputs. Then, for an active parameter `w` on the edge `u -> v`:
//!
//! * objective `R = sum_outputs F`,
//! * score `|w| * F(u) * B(v)`,
//! * with `g = w^2`, the path-kernel trace is `sum_w F(u) * B(v)`.
//!
//! Kernel entries of convolutional layers are treated as parallel edges of
//! the channel graph.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netcore::{io, target_count, Architecture, LayerKind, Mask, SparseNet};
use crate::rng::{self, Stream};
use crate::tasks::Dataset;
use crate::trainer::{self, Loss};

/// Accumulators above this magnitude are treated as overflow.
pub const OVERFLOW_LIMIT: f64 = 1e300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathNorm {
    /// Sum of `|path product|`.
    L1,
    /// Sum of squared path products.
    L2,
}

impl PathNorm {
    #[inline]
    fn apply(self, w: f64) -> f64 {
        match self {
            PathNorm::L1 => w.abs(),
            PathNorm::L2 => w * w,
        }
    }

    pub fn power(self) -> u32 {
        match self {
            PathNorm::L1 => 1,
            PathNorm::L2 => 2,
        }
    }
}

/// Forward and backward path sums per unit layer (inputs first).
#[derive(Debug, Clone, PartialEq)]
pub struct TraceAccumulators {
    pub forward: Vec<Vec<f64>>,
    pub backward: Vec<Vec<f64>>,
}

fn check_layer(values: &[f64], layer: usize) -> Result<()> {
    if values.iter().any(|v| !v.is_finite() || *v > OVERFLOW_LIMIT) {
        return Err(Error::Overflow { layer });
    }
    Ok(())
}

/// One forward and one backward sweep of masked `g(w)` products.
pub fn trace_accumulators(net: &SparseNet, norm: PathNorm) -> Result<TraceAccumulators> {
    let arch = net.arch();
    let depth = arch.parametrized_layer_count();
    let sizes = arch.layer_sizes();

    let mut forward = Vec::with_capacity(depth + 1);
    forward.push(vec![1.0; sizes[0]]);
    for l in 0..depth {
        let (n_src, n_dst) = arch.layer_shape(l);
        let area = arch.kernel_area(l);
        let w = net.weights(l);
        let mask = net.mask().layer(l);
        let prev = &forward[l];
        let mut next = vec![0.0; n_dst];
        for (dst, out) in next.iter_mut().enumerate() {
            let mut acc = 0.0;
            for src in 0..n_src {
                let base = (dst * n_src + src) * area;
                let mut g = 0.0;
                for i in base..base + area {
                    if mask[i] {
                        g += norm.apply(w[i]);
                    }
                }
                acc += prev[src] * g;
            }
            *out = acc;
        }
        check_layer(&next, l)?;
        forward.push(next);
    }

    let mut backward = vec![Vec::new(); depth + 1];
    backward[depth] = vec![1.0; sizes[depth]];
    for l in (0..depth).rev() {
        let (n_src, n_dst) = arch.layer_shape(l);
        let area = arch.kernel_area(l);
        let w = net.weights(l);
        let mask = net.mask().layer(l);
        let mut prev = vec![0.0; n_src];
        for dst in 0..n_dst {
            let b = backward[l + 1][dst];
            if b == 0.0 {
                continue;
            }
            for (src, out) in prev.iter_mut().enumerate() {
                let base = (dst * n_src + src) * area;
                let mut g = 0.0;
                for i in base..base + area {
                    if mask[i] {
                        g += norm.apply(w[i]);
                    }
                }
                *out += g * b;
            }
        }
        check_layer(&prev, l)?;
        backward[l] = prev;
    }
    Ok(TraceAccumulators { forward, backward })
}

/// `R = sum over active paths of |path product|^power`.
pub fn synflow_objective(net: &SparseNet, norm: PathNorm) -> Result<f64> {
    let acc = trace_accumulators(net, norm)?;
    let total: f64 = acc.forward.last().unwrap().iter().sum();
    if !total.is_finite() || total > OVERFLOW_LIMIT {
        return Err(Error::Overflow { layer: net.arch().parametrized_layer_count() - 1 });
    }
    Ok(total)
}

/// Natural log of [`synflow_objective`], computed in the log domain so it
/// stays finite where the direct sum overflows. `-inf` when no path exists.
pub fn log_synflow_objective(net: &SparseNet, norm: PathNorm) -> f64 {
    let arch = net.arch();
    let mut log_f = vec![0.0f64; arch.input_dim()];
    for l in 0..arch.parametrized_layer_count() {
        let (n_src, n_dst) = arch.layer_shape(l);
        let area = arch.kernel_area(l);
        let w = net.weights(l);
        let mask = net.mask().layer(l);
        let mut next = vec![f64::NEG_INFINITY; n_dst];
        for (dst, out) in next.iter_mut().enumerate() {
            let mut terms = Vec::new();
            for src in 0..n_src {
                if log_f[src] == f64::NEG_INFINITY {
                    continue;
                }
                let base = (dst * n_src + src) * area;
                for i in base..base + area {
                    if mask[i] && w[i] != 0.0 {
                        terms.push(log_f[src] + norm.apply(w[i]).ln());
                    }
                }
            }
            *out = log_sum_exp(&terms);
        }
        log_f = next;
    }
    log_sum_exp(&log_f)
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// Trace of the path kernel: `sum_p sum_{w in p} (pi_p / w)^2`.
pub fn path_kernel_trace(net: &SparseNet) -> Result<f64> {
    let acc = trace_accumulators(net, PathNorm::L2)?;
    let arch = net.arch();
    let mut total = 0.0;
    for (l, i) in net.mask().active_entries() {
        let (src, dst, _) = arch.entry_coords(l, i);
        total += acc.forward[l][src] * acc.backward[l + 1][dst];
    }
    Ok(total)
}

/// Nonnegative per-parameter scores laid out like the weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreMap {
    layers: Vec<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScoreDocument {
    version: u32,
    layer_sizes: Vec<usize>,
    layer_kinds: Vec<LayerKind>,
    scores: Vec<Vec<String>>,
}

impl ScoreMap {
    pub fn from_layers(layers: Vec<Vec<f64>>) -> Self {
        ScoreMap { layers }
    }

    pub fn layers(&self) -> &[Vec<f64>] {
        &self.layers
    }

    pub fn get(&self, layer: usize, index: usize) -> f64 {
        self.layers[layer][index]
    }

    pub fn to_json(&self, arch: &Architecture) -> String {
        let doc = ScoreDocument {
            version: io::FORMAT_VERSION,
            layer_sizes: arch.layer_sizes().to_vec(),
            layer_kinds: arch.layer_kinds().to_vec(),
            scores: self.layers.iter().map(|l| io::encode_f64(l)).collect(),
        };
        serde_json::to_string_pretty(&doc).expect("serializable scores")
    }

    pub fn from_json(text: &str) -> Result<(Architecture, ScoreMap)> {
        let doc: ScoreDocument = serde_json::from_str(text)?;
        let arch = Architecture::new(doc.layer_sizes, doc.layer_kinds)?;
        let layers = doc.scores.iter().map(|l| io::decode_f64(l)).collect::<Result<Vec<_>>>()?;
        Ok((arch, ScoreMap { layers }))
    }
}

/// SynFlow scores `|w| * F(u) * B(v)` under the given path norm.
pub fn synflow_score(net: &SparseNet, norm: PathNorm) -> Result<ScoreMap> {
    let acc = trace_accumulators(net, norm)?;
    let arch = net.arch();
    let layers = (0..arch.parametrized_layer_count())
        .map(|l| {
            let w = net.weights(l);
            let mask = net.mask().layer(l);
            (0..arch.layer_len(l))
                .map(|i| {
                    if !mask[i] {
                        return 0.0;
                    }
                    let (src, dst, _) = arch.entry_coords(l, i);
                    w[i].abs() * acc.forward[l][src] * acc.backward[l + 1][dst]
                })
                .collect()
        })
        .collect();
    Ok(ScoreMap { layers })
}

/// `|w|` per active entry.
pub fn magnitude_score(net: &SparseNet) -> ScoreMap {
    let layers = (0..net.arch().parametrized_layer_count())
        .map(|l| net.masked_layer(l).iter().map(|w| w.abs()).collect())
        .collect();
    ScoreMap { layers }
}

/// I.i.d. uniform scores on the open interval (0, 1).
pub fn random_score(net: &SparseNet, seed: u64) -> ScoreMap {
    let mut rng = rng::stream(seed, Stream::Score);
    let layers = (0..net.arch().parametrized_layer_count())
        .map(|l| {
            (0..net.arch().layer_len(l))
                .map(|_| loop {
                    let u: f64 = rng.random();
                    if u > 0.0 {
                        break u;
                    }
                })
                .collect()
        })
        .collect();
    ScoreMap { layers }
}

/// SNIP connection sensitivity `|dL/dw * w|`, with gradients of the masked
/// net accumulated over consecutive batches of `batch_size` rows.
pub fn snip_score(net: &SparseNet, data: &Dataset, batch_size: usize, loss: Loss) -> Result<ScoreMap> {
    if data.is_empty() || batch_size == 0 {
        return Err(Error::EmptyBatch);
    }
    let arch = net.arch();
    let mut grads: Vec<Vec<f64>> = (0..arch.parametrized_layer_count()).map(|l| vec![0.0; arch.layer_len(l)]).collect();
    let mut start = 0;
    while start < data.len() {
        let end = (start + batch_size).min(data.len());
        let batch = data.slice(start..end);
        let (_, g) = trainer::loss_and_gradients(net, &batch.inputs.view(), &batch.targets.view(), loss)?;
        for (acc, layer) in grads.iter_mut().zip(g) {
            for (a, x) in acc.iter_mut().zip(layer) {
                *a += x;
            }
        }
        start = end;
    }
    let layers = grads
        .into_iter()
        .enumerate()
        .map(|(l, g)| g.iter().zip(net.weights(l)).map(|(g, w)| (g * w).abs()).collect())
        .collect();
    Ok(ScoreMap { layers })
}

/// Exponential density decay: iteration `t` of `T` targets `rho^(t/T)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PruneSchedule {
    pub iterations: usize,
}

impl Default for PruneSchedule {
    fn default() -> Self {
        PruneSchedule { iterations: 100 }
    }
}

impl PruneSchedule {
    pub fn one_shot() -> Self {
        PruneSchedule { iterations: 1 }
    }

    /// Densities targeted at iterations `1..=T`.
    pub fn densities(&self, target: f64) -> Vec<f64> {
        let t = self.iterations.max(1);
        (1..=t)
            .map(|i| if i == t { target } else { target.powf(i as f64 / t as f64) })
            .collect()
    }

    /// Active-parameter counts kept at each iteration, non-increasing and
    /// ending at `ceil(target * M)`.
    pub fn counts(&self, target: f64, total: usize) -> Vec<usize> {
        let mut prev = total;
        self.densities(target)
            .into_iter()
            .map(|d| {
                prev = prev.min(target_count(d, total));
                prev
            })
            .collect()
    }
}

/// Score functions usable by [`prune_by_score`].
#[derive(Debug, Clone, Copy)]
pub enum Scorer<'a> {
    SynFlow,
    SynFlowL2,
    Magnitude,
    Random { seed: u64 },
    Snip { data: &'a Dataset, batch_size: usize, loss: Loss },
}

impl Scorer<'_> {
    /// Whether scores are recomputed along the schedule; the others are one-shot.
    pub fn is_iterative(&self) -> bool {
        matches!(self, Scorer::SynFlow | Scorer::SynFlowL2)
    }

    pub fn score(&self, net: &SparseNet) -> Result<ScoreMap> {
        match *self {
            Scorer::SynFlow => synflow_score(net, PathNorm::L1),
            Scorer::SynFlowL2 => synflow_score(net, PathNorm::L2),
            Scorer::Magnitude => Ok(magnitude_score(net)),
            Scorer::Random { seed } => Ok(random_score(net, seed)),
            Scorer::Snip { data, batch_size, loss } => snip_score(net, data, batch_size, loss),
        }
    }
}

/// Keeps the `keep` highest-scoring active entries (global ranking, ties to
/// the lower flat index).
pub fn keep_top(net: &SparseNet, scores: &ScoreMap, keep: usize) -> Mask {
    let arch = net.arch();
    let mut ranked: Vec<(f64, usize, usize, usize)> = Vec::with_capacity(net.active_count());
    for (l, i) in net.mask().active_entries() {
        ranked.push((scores.get(l, i), arch.layer_offset(l) + i, l, i));
    }
    ranked.sort_unstable_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut mask = Mask::zeros(arch);
    for &(_, _, l, i) in ranked.iter().take(keep) {
        mask.set(l, i, true);
    }
    mask
}

/// Iteratively deactivates the globally lowest-scoring active entries,
/// rescoring after every step of the schedule.
pub fn prune_by_score(
    net: &SparseNet,
    scorer: Scorer<'_>,
    schedule: PruneSchedule,
    target_density: f64,
) -> Result<SparseNet> {
    if !(target_density > 0.0 && target_density <= 1.0) {
        return Err(Error::InvalidArgument(format!("target density {target_density} not in (0, 1]")));
    }
    if schedule.iterations == 0 {
        return Err(Error::InvalidArgument("schedule needs at least one iteration".into()));
    }
    let schedule = if scorer.is_iterative() { schedule } else { PruneSchedule::one_shot() };
    let total = net.arch().total_params();
    let mut current = net.clone();
    for keep in schedule.counts(target_density, total) {
        let keep = keep.min(current.active_count());
        let scores = scorer.score(&current)?;
        let mask = keep_top(&current, &scores, keep);
        current = current.with_mask(mask)?;
    }
    Ok(current)
}
