//! Path selection by random walks over the layered unit graph.
//!
//! A walk starts at an input unit (forward) or an output unit (backward)
//! and takes one hop per parametrized layer, so every walk is a complete
//! input-output path. The next hop is drawn from the weights leaving (or,
//! backwards, entering) the current unit according to a [`WalkBias`].
//! Pruning keeps exactly the union of the traversed parameters.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netcore::{min_density, target_count, Architecture, Mask, SparseNet};
use crate::rng::{self, Stream};

/// Offset keeping inverse-magnitude weights finite.
pub const INVERSE_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WalkBias {
    /// Next hop proportional to `|w|`.
    WeightBiased,
    Uniform,
    /// Next hop proportional to `1 / (|w| + 1e-12)`.
    InverseWeightBiased,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Forward,
    Backward,
}

/// Normalized next-hop distribution for the given candidate weights.
pub fn transition_probs(weights: &[f64], bias: WalkBias) -> Result<Vec<f64>> {
    if weights.is_empty() {
        return Err(Error::InvalidArgument("no candidate hops".into()));
    }
    let raw: Vec<f64> = match bias {
        WalkBias::WeightBiased => weights.iter().map(|w| w.abs()).collect(),
        WalkBias::Uniform => vec![1.0; weights.len()],
        WalkBias::InverseWeightBiased => {
            weights.iter().map(|w| 1.0 / (w.abs() + INVERSE_EPSILON)).collect()
        }
    };
    let total: f64 = raw.iter().sum();
    if total <= 0.0 {
        return Err(Error::DegenerateDistribution { len: weights.len() });
    }
    Ok(raw.into_iter().map(|x| x / total).collect())
}

fn sample_from(probs: &[f64], rng: &mut rng::Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // u landed in the rounding gap above the last cumulative sum
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

/// One traversed parameter group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hop {
    pub layer: usize,
    pub src: usize,
    pub dst: usize,
    /// Selected kernel entry on convolutional layers; `None` on dense
    /// layers or when the whole kernel is conserved.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel_entry: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WalkRecord {
    pub direction: Direction,
    pub start_unit: usize,
    /// Hops in traversal order (descending layer for backward walks).
    pub hops: Vec<Hop>,
}

impl WalkRecord {
    /// Hops sorted by layer, input side first.
    pub fn hops_by_layer(&self) -> Vec<Hop> {
        let mut hops = self.hops.clone();
        hops.sort_by_key(|h| h.layer);
        hops
    }

    /// Local indices of every parameter the walk conserves, as `(layer, index)`.
    pub fn entries(&self, arch: &Architecture) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.hops.len());
        for h in &self.hops {
            let area = arch.kernel_area(h.layer);
            match (arch.layer_kinds()[h.layer].is_dense(), h.kernel_entry) {
                (true, _) => out.push((h.layer, arch.entry_index(h.layer, h.src, h.dst, 0))),
                (false, Some(k)) => out.push((h.layer, arch.entry_index(h.layer, h.src, h.dst, k))),
                (false, None) => {
                    out.extend((0..area).map(|k| (h.layer, arch.entry_index(h.layer, h.src, h.dst, k))))
                }
            }
        }
        out
    }
}

/// Ordered record of every walk of a pruning run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct WalkTraceLog {
    pub walks: Vec<WalkRecord>,
}

impl WalkTraceLog {
    pub fn len(&self) -> usize {
        self.walks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.walks.is_empty()
    }

    /// One JSON object per line.
    pub fn to_ndjson(&self) -> String {
        let mut out = String::new();
        for w in &self.walks {
            out.push_str(&serde_json::to_string(w).expect("serializable walk"));
            out.push('\n');
        }
        out
    }

    pub fn from_ndjson(text: &str) -> Result<Self> {
        let walks = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<Vec<_>, _>>()?;
        Ok(WalkTraceLog { walks })
    }
}

/// Per-edge magnitudes of one layer, destination-major (`dst * n_src + src`).
/// Kernels contribute their L1 norm.
struct LayerView<'a> {
    n_src: usize,
    n_dst: usize,
    area: usize,
    weights: &'a [f64],
    edge_mag: Vec<f64>,
}

impl<'a> LayerView<'a> {
    fn new(net: &'a SparseNet, layer: usize) -> Self {
        let arch = net.arch();
        let (n_src, n_dst) = arch.layer_shape(layer);
        let area = arch.kernel_area(layer);
        let weights = net.weights(layer);
        let edge_mag = weights.chunks(area).map(|k| k.iter().map(|w| w.abs()).sum()).collect();
        LayerView { n_src, n_dst, area, weights, edge_mag }
    }
}

/// Draws balanced, alternating walks over one network.
///
/// Forward walks start at input units in round-robin order and backward
/// walks at output units, alternating forward, backward, forward, ...
pub struct WalkSampler<'a> {
    arch: &'a Architecture,
    layers: Vec<LayerView<'a>>,
    bias: WalkBias,
    conserve_kernels: bool,
    rng: rng::Rng,
    next_forward: bool,
    next_input: usize,
    next_output: usize,
    forward_starts: Vec<usize>,
    backward_starts: Vec<usize>,
    fallbacks: usize,
}

impl<'a> WalkSampler<'a> {
    pub fn new(net: &'a SparseNet, bias: WalkBias, conserve_kernels: bool, rng: rng::Rng) -> Self {
        let arch = net.arch();
        WalkSampler {
            arch,
            layers: (0..arch.parametrized_layer_count()).map(|l| LayerView::new(net, l)).collect(),
            bias,
            conserve_kernels,
            rng,
            next_forward: true,
            next_input: 0,
            next_output: 0,
            forward_starts: vec![0; arch.input_dim()],
            backward_starts: vec![0; arch.output_dim()],
            fallbacks: 0,
        }
    }

    pub fn next_walk(&mut self) -> WalkRecord {
        let record = if self.next_forward {
            let start = self.next_input;
            self.next_input = (self.next_input + 1) % self.arch.input_dim();
            self.forward_starts[start] += 1;
            self.walk(Direction::Forward, start)
        } else {
            let start = self.next_output;
            self.next_output = (self.next_output + 1) % self.arch.output_dim();
            self.backward_starts[start] += 1;
            self.walk(Direction::Backward, start)
        };
        self.next_forward = !self.next_forward;
        record
    }

    /// Runs one walk from an explicit start unit, counted like a scheduled one.
    pub fn walk_from(&mut self, direction: Direction, start: usize) -> Result<WalkRecord> {
        let starts = match direction {
            Direction::Forward => &mut self.forward_starts,
            Direction::Backward => &mut self.backward_starts,
        };
        if start >= starts.len() {
            return Err(Error::InvalidArgument(format!(
                "start unit {start} out of range for a boundary layer of {} units",
                starts.len()
            )));
        }
        starts[start] += 1;
        Ok(self.walk(direction, start))
    }

    /// Walks started at each input unit.
    pub fn forward_starts(&self) -> &[usize] {
        &self.forward_starts
    }

    /// Walks started at each output unit.
    pub fn backward_starts(&self) -> &[usize] {
        &self.backward_starts
    }

    /// Hops that fell back to a uniform draw because every candidate weight was zero.
    pub fn fallbacks(&self) -> usize {
        self.fallbacks
    }

    fn walk(&mut self, direction: Direction, start: usize) -> WalkRecord {
        let depth = self.layers.len();
        let mut hops = Vec::with_capacity(depth);
        let mut unit = start;
        match direction {
            Direction::Forward => {
                for layer in 0..depth {
                    let hop = self.hop_forward(layer, unit);
                    unit = hop.dst;
                    hops.push(hop);
                }
            }
            Direction::Backward => {
                for layer in (0..depth).rev() {
                    let hop = self.hop_backward(layer, unit);
                    unit = hop.src;
                    hops.push(hop);
                }
            }
        }
        WalkRecord { direction, start_unit: start, hops }
    }

    fn draw(&mut self, candidates: &[f64]) -> usize {
        let probs = match transition_probs(candidates, self.bias) {
            Ok(p) => p,
            Err(_) => {
                self.fallbacks += 1;
                log::warn!("all {} candidate weights are zero; drawing uniformly", candidates.len());
                transition_probs(candidates, WalkBias::Uniform).expect("nonempty candidates")
            }
        };
        sample_from(&probs, &mut self.rng)
    }

    fn hop_forward(&mut self, layer: usize, src: usize) -> Hop {
        let view = &self.layers[layer];
        let candidates: Vec<f64> = (0..view.n_dst).map(|d| view.edge_mag[d * view.n_src + src]).collect();
        let dst = self.draw(&candidates);
        self.finish_hop(layer, src, dst)
    }

    fn hop_backward(&mut self, layer: usize, dst: usize) -> Hop {
        let view = &self.layers[layer];
        let row = &view.edge_mag[dst * view.n_src..(dst + 1) * view.n_src];
        let candidates = row.to_vec();
        let src = self.draw(&candidates);
        self.finish_hop(layer, src, dst)
    }

    fn finish_hop(&mut self, layer: usize, src: usize, dst: usize) -> Hop {
        let view = &self.layers[layer];
        let kernel_entry = if view.area == 1 || self.conserve_kernels {
            None
        } else {
            let base = (dst * view.n_src + src) * view.area;
            let kernel = view.weights[base..base + view.area].to_vec();
            Some(self.draw(&kernel))
        };
        Hop { layer, src, dst, kernel_entry }
    }
}

/// Runs a single walk from `start_unit` on the input (forward) or output
/// (backward) boundary. Walks read the raw weights and ignore the mask.
pub fn run_walk(
    net: &SparseNet,
    direction: Direction,
    start_unit: usize,
    bias: WalkBias,
    conserve_kernels: bool,
    rng: rng::Rng,
) -> Result<WalkRecord> {
    let arch = net.arch();
    let boundary = match direction {
        Direction::Forward => arch.input_dim(),
        Direction::Backward => arch.output_dim(),
    };
    if start_unit >= boundary {
        return Err(Error::InvalidArgument(format!(
            "start unit {start_unit} out of range for a boundary layer of {boundary} units"
        )));
    }
    let mut sampler = WalkSampler::new(net, bias, conserve_kernels, rng);
    Ok(sampler.walk(direction, start_unit))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhewConfig {
    pub bias: WalkBias,
    /// Conserve whole kernels on convolutional layers instead of one entry.
    pub conserve_kernels: bool,
    /// Upper bound on the number of walks before giving up.
    pub max_walks: usize,
}

impl Default for PhewConfig {
    fn default() -> Self {
        PhewConfig { bias: WalkBias::WeightBiased, conserve_kernels: false, max_walks: 50_000_000 }
    }
}

impl PhewConfig {
    pub fn with_bias(bias: WalkBias) -> Self {
        PhewConfig { bias, ..Default::default() }
    }
}

/// Walk accounting of a pruning run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkBudget {
    pub target_density: f64,
    pub target_params: usize,
    /// Number of walks `W` taken.
    pub walk_count: usize,
    pub active_params: usize,
    pub achieved_density: f64,
    pub forward_starts: Vec<usize>,
    pub backward_starts: Vec<usize>,
    pub uniform_fallbacks: usize,
}

/// Builds a mask from the union of biased walks.
///
/// Walks run until the number of distinct active parameters reaches
/// `ceil(target_density * M)`. The last walk is kept whole, so the result
/// may exceed the target by at most one walk's worth of parameters.
pub fn phew_prune(
    net: &SparseNet,
    target_density: f64,
    config: &PhewConfig,
    seed: u64,
) -> Result<(SparseNet, WalkBudget, WalkTraceLog)> {
    let arch = net.arch();
    let rho_min = min_density(arch);
    if !(target_density <= 1.0) {
        return Err(Error::InvalidArgument(format!("target density {target_density} not in (0, 1]")));
    }
    if target_density < rho_min * (1.0 - 1e-12) {
        return Err(Error::DensityBelowMinimum { target: target_density, rho_min });
    }
    let total = arch.total_params();
    let target = target_count(target_density, total).max(arch.parametrized_layer_count());

    let mut sampler = WalkSampler::new(net, config.bias, config.conserve_kernels, rng::stream(seed, Stream::Walk));
    let mut mask = Mask::zeros(arch);
    let mut active = 0usize;
    let mut log = WalkTraceLog::default();
    while active < target {
        if log.walks.len() >= config.max_walks {
            return Err(Error::WalkLimit { walks: log.walks.len(), active, target });
        }
        let walk = sampler.next_walk();
        for (layer, index) in walk.entries(arch) {
            if mask.activate(layer, index) {
                active += 1;
            }
        }
        log.walks.push(walk);
    }
    let budget = WalkBudget {
        target_density,
        target_params: target,
        walk_count: log.walks.len(),
        active_params: active,
        achieved_density: active as f64 / total as f64,
        forward_starts: sampler.forward_starts().to_vec(),
        backward_starts: sampler.backward_starts().to_vec(),
        uniform_fallbacks: sampler.fallbacks(),
    };
    Ok((net.with_mask(mask)?, budget, log))
}

/// Number of walks through each unit, per unit layer (inputs first).
pub fn walk_unit_histogram(log: &WalkTraceLog, arch: &Architecture) -> Vec<Vec<usize>> {
    let mut counts: Vec<Vec<usize>> = arch.layer_sizes().iter().map(|&n| vec![0; n]).collect();
    for walk in &log.walks {
        for hop in &walk.hops {
            // each walk has one hop per layer; count its source side, plus
            // the destination for the final layer
            counts[hop.layer][hop.src] += 1;
            if hop.layer + 1 == arch.parametrized_layer_count() {
                counts[hop.layer + 1][hop.dst] += 1;
            }
        }
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::{build_network, InitSpec, LayerKind};
    use proptest::prelude::*;

    fn net_with(sizes: &[usize], weights: Vec<Vec<f64>>) -> SparseNet {
        let arch = Architecture::dense(sizes).unwrap();
        let mask = Mask::ones(&arch);
        SparseNet::from_parts(arch, InitSpec::Kaiming, weights, mask, 0).unwrap()
    }

    #[test]
    fn transition_examples() {
        let p = transition_probs(&[3.0, -1.0], WalkBias::WeightBiased).unwrap();
        assert_eq!(p, vec![0.75, 0.25]);
        let p = transition_probs(&[0.3, -7.0, 1.0, 0.0], WalkBias::Uniform).unwrap();
        assert_eq!(p, vec![0.25; 4]);
        let p = transition_probs(&[2.0, -2.0], WalkBias::InverseWeightBiased).unwrap();
        assert_eq!(p, vec![0.5, 0.5]);
        let p = transition_probs(&[1.0, 3.0], WalkBias::InverseWeightBiased).unwrap();
        assert!((p[0] - 0.75).abs() < 1e-9);
    }

    #[test]
    fn transition_errors() {
        assert!(transition_probs(&[], WalkBias::Uniform).is_err());
        assert!(matches!(
            transition_probs(&[0.0, 0.0], WalkBias::WeightBiased),
            Err(Error::DegenerateDistribution { len: 2 })
        ));
    }

    #[test]
    fn zero_weights_fall_back_to_uniform() {
        let net = net_with(&[1, 3, 1], vec![vec![0.0; 3], vec![1.0; 3]]);
        let mut sampler = WalkSampler::new(&net, WalkBias::WeightBiased, false, rng::stream(0, Stream::Walk));
        let walk = sampler.next_walk();
        assert_eq!(walk.hops.len(), 2);
        assert_eq!(sampler.fallbacks(), 1);
    }

    #[test]
    fn single_path_network() {
        let net = net_with(&[1, 1, 1], vec![vec![0.5], vec![-2.0]]);
        for dir in [Direction::Forward, Direction::Backward] {
            let w = run_walk(&net, dir, 0, WalkBias::WeightBiased, false, rng::stream(1, Stream::Walk)).unwrap();
            let hops = w.hops_by_layer();
            assert_eq!(hops, vec![
                Hop { layer: 0, src: 0, dst: 0, kernel_entry: None },
                Hop { layer: 1, src: 0, dst: 0, kernel_entry: None },
            ]);
        }
        assert!(run_walk(&net, Direction::Forward, 1, WalkBias::Uniform, false, rng::stream(1, Stream::Walk)).is_err());
    }

    #[test]
    fn dominant_edge_is_followed() {
        // from either input, hidden unit 1 carries weight 1e6 against 1
        let net = net_with(&[2, 2, 2], vec![vec![1.0, 1.0, 1e6, 1e6], vec![1.0; 4]]);
        let mut sampler = WalkSampler::new(&net, WalkBias::WeightBiased, false, rng::stream(3, Stream::Walk));
        let mut hits = 0;
        let mut forward = 0;
        for _ in 0..10_000 {
            let w = sampler.next_walk();
            if w.direction == Direction::Forward {
                forward += 1;
                if w.hops[0].dst == 1 {
                    hits += 1;
                }
            }
        }
        assert!(hits as f64 / forward as f64 > 0.99);
    }

    #[test]
    fn conv_walk_selects_one_entry_per_conv_layer() {
        let arch = Architecture::new(
            vec![3, 4, 2],
            vec![LayerKind::ConvChannel { kernel_h: 3, kernel_w: 3 }, LayerKind::Dense],
        )
        .unwrap();
        let net = build_network(&arch, InitSpec::Kaiming, 2).unwrap();
        let mut sampler = WalkSampler::new(&net, WalkBias::WeightBiased, false, rng::stream(0, Stream::Walk));
        for _ in 0..20 {
            let w = sampler.next_walk();
            let hops = w.hops_by_layer();
            assert!(hops[0].kernel_entry.is_some_and(|k| k < 9));
            assert!(hops[1].kernel_entry.is_none());
            assert_eq!(w.entries(&arch).len(), 2);
        }
        let mut kernel = WalkSampler::new(&net, WalkBias::WeightBiased, true, rng::stream(0, Stream::Walk));
        assert_eq!(kernel.next_walk().entries(&arch).len(), 10);
    }

    #[test]
    fn minimum_density_gives_single_walk() {
        let arch = Architecture::dense(&[5, 7, 6, 3]).unwrap();
        let net = build_network(&arch, InitSpec::Kaiming, 0).unwrap();
        let rho = min_density(&arch);
        let (pruned, budget, log) = phew_prune(&net, rho, &PhewConfig::default(), 1).unwrap();
        assert_eq!(budget.walk_count, 1);
        assert_eq!(log.len(), 1);
        assert_eq!(pruned.mask().layer_active_counts(), vec![1, 1, 1]);
        let below = phew_prune(&net, rho - 1.0 / arch.total_params() as f64, &PhewConfig::default(), 1);
        match below {
            Err(Error::DensityBelowMinimum { rho_min, .. }) => assert_eq!(rho_min, rho),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn full_density_on_single_path() {
        let net = net_with(&[1, 1, 1], vec![vec![1.0], vec![1.0]]);
        let (pruned, budget, _) = phew_prune(&net, 1.0, &PhewConfig::default(), 0).unwrap();
        assert_eq!(budget.walk_count, 1);
        assert_eq!(pruned.density(), 1.0);
    }

    #[test]
    fn mask_is_union_of_walks_and_deterministic() {
        let arch = Architecture::dense(&[8, 64, 64, 8]).unwrap();
        let net = build_network(&arch, InitSpec::Kaiming, 4).unwrap();
        let (a, budget, log) = phew_prune(&net, 0.2, &PhewConfig::default(), 9).unwrap();
        let (b, _, _) = phew_prune(&net, 0.2, &PhewConfig::default(), 9).unwrap();
        assert_eq!(a.mask(), b.mask());

        let mut union = Mask::zeros(&arch);
        for w in &log.walks {
            for (l, i) in w.entries(&arch) {
                union.set(l, i, true);
            }
        }
        assert_eq!(&union, a.mask());
        let target = target_count(0.2, arch.total_params());
        assert!(budget.active_params >= target);
        assert!(budget.active_params < target + arch.parametrized_layer_count());
        assert!(budget.forward_starts.iter().max().unwrap() - budget.forward_starts.iter().min().unwrap() <= 1);
        assert!(budget.backward_starts.iter().max().unwrap() - budget.backward_starts.iter().min().unwrap() <= 1);
        // directions alternate starting forward
        for (i, w) in log.walks.iter().enumerate() {
            let expected = if i % 2 == 0 { Direction::Forward } else { Direction::Backward };
            assert_eq!(w.direction, expected);
        }
    }

    #[test]
    fn histogram_conservation() {
        let arch = Architecture::dense(&[4, 6, 5, 3]).unwrap();
        let net = build_network(&arch, InitSpec::Kaiming, 4).unwrap();
        let (_, _, log) = phew_prune(&net, min_density(&arch), &PhewConfig::default(), 0).unwrap();
        let h = walk_unit_histogram(&log, &arch);
        for layer in &h[1..3] {
            assert_eq!(layer.iter().filter(|&&c| c == 1).count(), 1);
        }
        let (_, _, log) = phew_prune(&net, 0.5, &PhewConfig::default(), 0).unwrap();
        for layer in walk_unit_histogram(&log, &arch) {
            assert_eq!(layer.iter().sum::<usize>(), log.len());
        }
    }

    #[test]
    fn ndjson_round_trip() {
        let arch = Architecture::dense(&[3, 4, 2]).unwrap();
        let net = build_network(&arch, InitSpec::Kaiming, 4).unwrap();
        let (_, _, log) = phew_prune(&net, 0.5, &PhewConfig::default(), 0).unwrap();
        let text = log.to_ndjson();
        assert_eq!(text.lines().count(), log.len());
        assert_eq!(WalkTraceLog::from_ndjson(&text).unwrap(), log);
    }

    proptest! {
        #[test]
        fn probabilities_normalized_and_equivariant(
            w in proptest::collection::vec(-10.0f64..10.0, 1..12),
            rot in 0usize..12,
            bias in prop_oneof![Just(WalkBias::WeightBiased), Just(WalkBias::Uniform), Just(WalkBias::InverseWeightBiased)],
        ) {
            prop_assume!(w.iter().any(|x| *x != 0.0));
            let p = transition_probs(&w, bias).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|&x| x >= 0.0));
            let k = rot % w.len();
            let mut rotated = w.clone();
            rotated.rotate_left(k);
            let mut expected = p.clone();
            expected.rotate_left(k);
            let q = transition_probs(&rotated, bias).unwrap();
            for (a, b) in q.iter().zip(&expected) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn phew_never_collapses(seed in 0u64..1000, extra in 0usize..40) {
            let arch = Architecture::dense(&[3, 6, 5, 2]).unwrap();
            let net = build_network(&arch, InitSpec::Kaiming, seed).unwrap();
            let m = arch.parametrized_layer_count() + extra;
            let rho = m as f64 / arch.total_params() as f64;
            let (pruned, _, _) = phew_prune(&net, rho, &PhewConfig::default(), seed).unwrap();
            prop_assert!(pruned.mask().layer_active_counts().iter().all(|&c| c >= 1));
        }
    }
}
