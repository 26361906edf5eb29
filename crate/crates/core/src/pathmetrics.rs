//! Structural diagnostics of masked networks: path counts, layer widths,
//! layer collapse, and exhaustive mask search for small architectures.

use num_bigint::BigUint;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netcore::{Architecture, Mask, SparseNet};
use crate::scores::{self, PathNorm};

/// Exact number of active input-output paths. Kernel entries of
/// convolutional layers count as parallel edges.
pub fn count_paths(net: &SparseNet) -> BigUint {
    let arch = net.arch();
    let mut paths: Vec<BigUint> = vec![BigUint::from(1u32); arch.input_dim()];
    for l in 0..arch.parametrized_layer_count() {
        let (n_src, n_dst) = arch.layer_shape(l);
        let area = arch.kernel_area(l);
        let mask = net.mask().layer(l);
        let mut next = vec![BigUint::zero(); n_dst];
        for (dst, out) in next.iter_mut().enumerate() {
            for (src, p) in paths.iter().enumerate() {
                if p.is_zero() {
                    continue;
                }
                let base = (dst * n_src + src) * area;
                let parallel = mask[base..base + area].iter().filter(|&&b| b).count();
                if parallel > 0 {
                    *out += p * BigUint::from(parallel);
                }
            }
        }
        paths = next;
    }
    paths.into_iter().sum()
}

/// Active-unit count per unit layer (inputs first). A hidden unit is active
/// when it has at least one active incoming and one active outgoing
/// parameter; input and output units need only the side they have.
pub fn layer_widths(net: &SparseNet) -> Vec<usize> {
    let (has_in, has_out) = unit_connectivity(net);
    let last = has_in.len() - 1;
    (0..=last)
        .map(|u| {
            (0..has_in[u].len())
                .filter(|&i| {
                    let inn = u == 0 || has_in[u][i];
                    let out = u == last || has_out[u][i];
                    inn && out
                })
                .count()
        })
        .collect()
}

/// Per unit layer: (has an active incoming entry, has an active outgoing entry).
fn unit_connectivity(net: &SparseNet) -> (Vec<Vec<bool>>, Vec<Vec<bool>>) {
    let arch = net.arch();
    let mut has_in: Vec<Vec<bool>> = arch.layer_sizes().iter().map(|&n| vec![false; n]).collect();
    let mut has_out = has_in.clone();
    for (l, i) in net.mask().active_entries() {
        let (src, dst, _) = arch.entry_coords(l, i);
        has_out[l][src] = true;
        has_in[l + 1][dst] = true;
    }
    (has_in, has_out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum Collapse {
    None,
    /// `layer` (0-based parametrized layer) is the first empty layer while
    /// another layer still has active parameters.
    Collapsed { layer: usize },
    /// No layer has any active parameter.
    EmptyNetwork,
}

impl Collapse {
    pub fn is_collapsed(&self) -> bool {
        matches!(self, Collapse::Collapsed { .. })
    }
}

pub fn detect_layer_collapse(net: &SparseNet) -> Collapse {
    let counts = net.mask().layer_active_counts();
    if counts.iter().all(|&c| c == 0) {
        return Collapse::EmptyNetwork;
    }
    match counts.iter().position(|&c| c == 0) {
        Some(layer) => Collapse::Collapsed { layer },
        None => Collapse::None,
    }
}

/// Width `n = sqrt(D^2 + m) - D` shared by both hidden layers of the
/// two-hidden-layer network with the most paths for `m` parameters, when
/// `m = D (n1 + n2) + n1 n2`. Real valued; rounding is left to the caller.
pub fn max_paths_width(inputs: usize, params: f64) -> Result<(f64, f64)> {
    if !(params > 0.0) || inputs == 0 {
        return Err(Error::InvalidArgument(format!(
            "need a positive parameter budget and input width, got m = {params}, D = {inputs}"
        )));
    }
    let d = inputs as f64;
    let n = (d * d + params).sqrt() - d;
    Ok((n, n))
}

/// If the active entries form a complete layered subnetwork (every active
/// unit connected to every active unit of the neighbouring layers, all
/// inputs and outputs in use), returns its hidden-layer widths.
pub fn fully_connected_widths(net: &SparseNet) -> Option<Vec<usize>> {
    let arch = net.arch();
    let widths = layer_widths(net);
    let (has_in, has_out) = unit_connectivity(net);
    let last = widths.len() - 1;
    if widths[0] != arch.input_dim() || widths[last] != arch.output_dim() {
        return None;
    }
    let active = |u: usize, i: usize| (u == 0 || has_in[u][i]) && (u == last || has_out[u][i]);
    for l in 0..arch.parametrized_layer_count() {
        for i in 0..arch.layer_len(l) {
            let (src, dst, _) = arch.entry_coords(l, i);
            if net.mask().get(l, i) != (active(l, src) && active(l + 1, dst)) {
                return None;
            }
        }
    }
    Some(widths[1..last].to_vec())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchObjective {
    /// Path-kernel trace of the masked network.
    Trace,
    /// Number of input-output paths, with every input and every output
    /// required to keep at least one connection.
    Paths,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchResult {
    pub mask: Mask,
    pub value: f64,
    /// Number of complete masks scored.
    pub evaluated: u64,
}

pub const DEFAULT_SEARCH_LIMIT: f64 = 1e6;

/// Binomial coefficient as a float.
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Exhaustive search over every mask with exactly `m` active parameters,
/// guarded by `C(M, m) <= 1e6`. See [`brute_force_best_mask_with_limit`].
pub fn brute_force_best_mask(net: &SparseNet, m: usize, objective: SearchObjective) -> Result<SearchResult> {
    brute_force_best_mask_with_limit(net, m, objective, DEFAULT_SEARCH_LIMIT)
}

/// Exhaustive search over every mask with exactly `m` active parameters,
/// returning one that maximizes `objective` (the network's own mask is
/// ignored). Ties go to the lexicographically lowest list of active flat
/// indices.
///
/// Masks are enumerated layer by layer; the forward state after each layer
/// (path sums `F` and partial traces `G`) is shared by every completion of
/// that prefix, so the last layer costs one pass over its active entries.
/// Dense layers only, at most 24 parameters per layer.
pub fn brute_force_best_mask_with_limit(
    net: &SparseNet,
    m: usize,
    objective: SearchObjective,
    limit: f64,
) -> Result<SearchResult> {
    let arch = net.arch();
    let total = arch.total_params();
    if m == 0 || m > total {
        return Err(Error::InvalidArgument(format!("mask size {m} outside 1..={total}")));
    }
    if let Some(layer) = arch.first_conv_layer() {
        return Err(Error::DenseOnly { layer });
    }
    let candidates = binomial(total, m);
    if candidates > limit {
        return Err(Error::SearchTooLarge { candidates, limit });
    }
    let depth = arch.parametrized_layer_count();
    if let Some(l) = (0..depth).find(|&l| arch.layer_len(l) > 24 || arch.layer_sizes()[l + 1] > 32) {
        return Err(Error::InvalidArgument(format!("layer {l} is too large for exhaustive search")));
    }
    let mut search = Search::new(net, objective, m);
    let inputs = vec![1.0; arch.input_dim()];
    let zeros = vec![0.0; arch.input_dim()];
    search.descend(0, m, &inputs, &zeros);
    let best = search.best.ok_or_else(|| {
        Error::InvalidArgument(format!("no admissible mask with {m} parameters"))
    })?;
    let mut mask = Mask::zeros(arch);
    for (l, bits) in best.0.iter().enumerate() {
        for i in 0..arch.layer_len(l) {
            if bits >> i & 1 == 1 {
                mask.set(l, i, true);
            }
        }
    }
    Ok(SearchResult { mask, value: best.1, evaluated: search.evaluated })
}

struct LayerTable {
    /// Subsets of the layer's entries grouped by popcount, ascending.
    by_count: Vec<Vec<u32>>,
    src: Vec<usize>,
    dst: Vec<usize>,
    /// Per-entry multiplier: squared weight (trace) or 1 (paths).
    gain: Vec<f64>,
    n_src: usize,
    n_dst: usize,
}

struct Search {
    tables: Vec<LayerTable>,
    objective: SearchObjective,
    remaining_capacity: Vec<usize>,
    stack: Vec<u32>,
    best: Option<(Vec<u32>, f64)>,
    evaluated: u64,
}

/// `a` precedes `b` in lexicographic order of sorted active flat indices.
fn lex_less(a: &[u32], b: &[u32]) -> bool {
    for (x, y) in a.iter().zip(b) {
        if x != y {
            let d = (x ^ y).trailing_zeros();
            return x >> d & 1 == 1;
        }
    }
    false
}

impl Search {
    fn new(net: &SparseNet, objective: SearchObjective, m: usize) -> Self {
        let arch = net.arch();
        let depth = arch.parametrized_layer_count();
        let tables = (0..depth)
            .map(|l| {
                let len = arch.layer_len(l);
                let mut by_count = vec![Vec::new(); len.min(m) + 1];
                for s in 0u32..(1u32 << len) {
                    let c = s.count_ones() as usize;
                    if c <= m {
                        by_count[c].push(s);
                    }
                }
                let coords: Vec<_> = (0..len).map(|i| arch.entry_coords(l, i)).collect();
                let (n_src, n_dst) = arch.layer_shape(l);
                LayerTable {
                    by_count,
                    src: coords.iter().map(|c| c.0).collect(),
                    dst: coords.iter().map(|c| c.1).collect(),
                    gain: net
                        .weights(l)
                        .iter()
                        .map(|w| match objective {
                            SearchObjective::Trace => w * w,
                            SearchObjective::Paths => 1.0,
                        })
                        .collect(),
                    n_src,
                    n_dst,
                }
            })
            .collect();
        let remaining_capacity = (0..=depth).map(|l| (l..depth).map(|k| arch.layer_len(k)).sum()).collect();
        Search { tables, objective, remaining_capacity, stack: Vec::with_capacity(depth), best: None, evaluated: 0 }
    }

    fn covers(&self, bits: u32, layer: usize, sources: bool) -> bool {
        let t = &self.tables[layer];
        let n = if sources { t.n_src } else { t.n_dst };
        let mut seen = 0u64;
        let mut b = bits;
        while b != 0 {
            let i = b.trailing_zeros() as usize;
            seen |= 1 << if sources { t.src[i] } else { t.dst[i] };
            b &= b - 1;
        }
        seen.count_ones() as usize == n
    }

    fn descend(&mut self, layer: usize, remaining: usize, f: &[f64], g: &[f64]) {
        let last = layer + 1 == self.tables.len();
        let later = self.remaining_capacity[layer + 1];
        let lo = remaining.saturating_sub(later);
        let hi = if last { remaining } else { remaining.min(self.tables[layer].by_count.len() - 1) };
        if lo > hi || lo >= self.tables[layer].by_count.len() {
            return;
        }
        let need_cover = self.objective == SearchObjective::Paths;
        for count in lo..=hi {
            let subsets = std::mem::take(&mut self.tables[layer].by_count[count]);
            for &bits in &subsets {
                if need_cover && layer == 0 && !self.covers(bits, 0, true) {
                    continue;
                }
                if last {
                    if need_cover && !self.covers(bits, layer, false) {
                        continue;
                    }
                    self.finish(layer, bits, f, g);
                } else {
                    let t = &self.tables[layer];
                    let mut nf = vec![0.0; t.n_dst];
                    let mut ng = vec![0.0; t.n_dst];
                    let mut b = bits;
                    while b != 0 {
                        let i = b.trailing_zeros() as usize;
                        let (s, d, w) = (t.src[i], t.dst[i], t.gain[i]);
                        nf[d] += f[s] * w;
                        ng[d] += g[s] * w + f[s];
                        b &= b - 1;
                    }
                    self.stack.push(bits);
                    self.descend(layer + 1, remaining - count, &nf, &ng);
                    self.stack.pop();
                }
            }
            self.tables[layer].by_count[count] = subsets;
        }
    }

    fn finish(&mut self, layer: usize, bits: u32, f: &[f64], g: &[f64]) {
        self.evaluated += 1;
        let t = &self.tables[layer];
        let mut value = 0.0;
        let mut b = bits;
        while b != 0 {
            let i = b.trailing_zeros() as usize;
            let s = t.src[i];
            value += match self.objective {
                SearchObjective::Paths => f[s],
                SearchObjective::Trace => g[s] * t.gain[i] + f[s],
            };
            b &= b - 1;
        }
        let better = match &self.best {
            None => true,
            Some((best_bits, best)) => {
                value > *best || (value == *best && {
                    self.stack.push(bits);
                    let less = lex_less(&self.stack, best_bits);
                    self.stack.pop();
                    less
                })
            }
        };
        if better {
            let mut bits_all = self.stack.clone();
            bits_all.push(bits);
            self.best = Some((bits_all, value));
        }
    }
}

/// Per-parametrized-layer row of a [`StructureReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerStructure {
    /// 0-based parametrized layer index.
    pub layer: usize,
    pub kind: String,
    pub active_params: usize,
    pub total_params: usize,
    pub density: f64,
    /// Active units in the layer's destination unit layer.
    pub width: usize,
    pub unpruned_width: usize,
    /// Mean density of all layers whose destination has the same unpruned width.
    pub width_group_density: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StructureReport {
    pub layers: Vec<LayerStructure>,
    pub input_width: usize,
    pub hidden_layer_count: usize,
    pub parametrized_layer_count: usize,
    pub active_params: usize,
    pub total_params: usize,
    pub density: f64,
    /// Exact path count in decimal.
    pub paths: String,
    pub log10_paths: f64,
    /// Path-kernel trace; `None` when the accumulators overflow.
    pub trace: Option<f64>,
    /// Natural log of the squared-path objective, always available.
    pub log_synflow_l2: f64,
    pub collapse: Collapse,
}

impl StructureReport {
    pub fn collapsed(&self) -> bool {
        self.collapse.is_collapsed()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "layer,kind,active_params,total_params,density,width,unpruned_width,width_group_density\n",
        );
        for r in &self.layers {
            out.push_str(&format!(
                "{},{},{},{},{:e},{},{},{:e}\n",
                r.layer, r.kind, r.active_params, r.total_params, r.density, r.width, r.unpruned_width, r.width_group_density
            ));
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("serializable report")
    }
}

fn log10_big(n: &BigUint) -> f64 {
    if n.is_zero() {
        return f64::NEG_INFINITY;
    }
    match n.to_f64() {
        Some(x) if x.is_finite() => x.log10(),
        _ => {
            let s = n.to_string();
            let head: f64 = s[..17].parse().unwrap();
            head.log10() + (s.len() - 17) as f64
        }
    }
}

pub fn structure_report(net: &SparseNet) -> StructureReport {
    let arch: &Architecture = net.arch();
    let widths = layer_widths(net);
    let counts = net.mask().layer_active_counts();
    let depth = arch.parametrized_layer_count();
    let densities: Vec<f64> = (0..depth).map(|l| counts[l] as f64 / arch.layer_len(l) as f64).collect();
    let layers = (0..depth)
        .map(|l| {
            let w = arch.layer_sizes()[l + 1];
            let group: Vec<f64> = (0..depth).filter(|&k| arch.layer_sizes()[k + 1] == w).map(|k| densities[k]).collect();
            LayerStructure {
                layer: l,
                kind: match arch.layer_kinds()[l] {
                    crate::netcore::LayerKind::Dense => "dense".into(),
                    crate::netcore::LayerKind::ConvChannel { kernel_h, kernel_w } => format!("conv{kernel_h}x{kernel_w}"),
                },
                active_params: counts[l],
                total_params: arch.layer_len(l),
                density: densities[l],
                width: widths[l + 1],
                unpruned_width: w,
                width_group_density: group.iter().sum::<f64>() / group.len() as f64,
            }
        })
        .collect();
    let paths = count_paths(net);
    StructureReport {
        layers,
        input_width: widths[0],
        hidden_layer_count: arch.hidden_layer_count(),
        parametrized_layer_count: depth,
        active_params: net.active_count(),
        total_params: arch.total_params(),
        density: net.density(),
        log10_paths: log10_big(&paths),
        paths: paths.to_string(),
        trace: scores::path_kernel_trace(net).ok(),
        log_synflow_l2: scores::log_synflow_objective(net, PathNorm::L2),
        collapse: detect_layer_collapse(net),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::{build_network, InitSpec, LayerKind};

    fn dense_net(sizes: &[usize], seed: u64) -> SparseNet {
        build_network(&Architecture::dense(sizes).unwrap(), InitSpec::Kaiming, seed).unwrap()
    }

    #[test]
    fn full_and_single_path_counts() {
        assert_eq!(count_paths(&dense_net(&[2, 3, 2], 0)), BigUint::from(12u32));
        let net = dense_net(&[3, 4, 2], 0);
        let mut mask = Mask::zeros(net.arch());
        mask.set(0, net.arch().entry_index(0, 1, 2, 0), true);
        mask.set(1, net.arch().entry_index(1, 2, 0, 0), true);
        let single = net.with_mask(mask).unwrap();
        assert_eq!(count_paths(&single), BigUint::from(1u32));
        assert_eq!(layer_widths(&single), vec![1, 1, 1]);
    }

    #[test]
    fn big_path_counts_do_not_overflow() {
        let arch = Architecture::dense(&[200; 12]).unwrap();
        let net = SparseNet::from_parts(
            arch.clone(),
            InitSpec::Kaiming,
            (0..11).map(|l| vec![1.0; arch.layer_len(l)]).collect(),
            Mask::ones(&arch),
            0,
        )
        .unwrap();
        assert_eq!(count_paths(&net), BigUint::from(200u32).pow(12));
        assert!((log10_big(&count_paths(&net)) - 12.0 * 200f64.log10()).abs() < 1e-9);
    }

    #[test]
    fn conv_entries_are_parallel_paths() {
        let arch = Architecture::new(vec![1, 1, 1], vec![LayerKind::ConvChannel { kernel_h: 2, kernel_w: 2 }, LayerKind::Dense]).unwrap();
        let net = build_network(&arch, InitSpec::Kaiming, 0).unwrap();
        assert_eq!(count_paths(&net), BigUint::from(4u32));
    }

    #[test]
    fn widths_require_both_sides() {
        let net = dense_net(&[2, 3, 2], 1);
        assert_eq!(layer_widths(&net), vec![2, 3, 2]);
        let arch = net.arch().clone();
        let mut mask = Mask::zeros(&arch);
        // hidden 0: in and out; hidden 1: only in
        mask.set(0, arch.entry_index(0, 0, 0, 0), true);
        mask.set(1, arch.entry_index(1, 0, 0, 0), true);
        mask.set(0, arch.entry_index(0, 1, 1, 0), true);
        let net = net.with_mask(mask).unwrap();
        assert_eq!(layer_widths(&net), vec![2, 1, 1]);
    }

    #[test]
    fn collapse_cases() {
        let net = dense_net(&[2, 3, 3, 2], 0);
        assert_eq!(detect_layer_collapse(&net), Collapse::None);
        let mut mask = Mask::ones(net.arch());
        for b in mask.layer_mut(2) {
            *b = false;
        }
        assert_eq!(detect_layer_collapse(&net.with_mask(mask).unwrap()), Collapse::Collapsed { layer: 2 });
        let empty = net.with_mask(Mask::zeros(net.arch())).unwrap();
        assert_eq!(detect_layer_collapse(&empty), Collapse::EmptyNetwork);
        assert!(!detect_layer_collapse(&empty).is_collapsed());
    }

    #[test]
    fn closed_form_widths() {
        let (n1, n2) = max_paths_width(4, 48.0).unwrap();
        assert_eq!((n1, n2), (4.0, 4.0));
        assert_eq!(4.0 * (n1 + n2) + n1 * n2, 48.0);
        let (n, _) = max_paths_width(1, 3.0).unwrap();
        assert_eq!(n, 1.0);
        assert!(max_paths_width(4, 0.0).is_err());
    }

    #[test]
    fn full_budget_has_full_mask() {
        let net = dense_net(&[2, 2, 2], 0);
        let r = brute_force_best_mask(&net, 8, SearchObjective::Paths).unwrap();
        assert_eq!(&r.mask, &Mask::ones(net.arch()));
        assert_eq!(r.value, 8.0);
        assert_eq!(r.evaluated, 1);
    }

    #[test]
    fn search_guard() {
        let net = dense_net(&[4, 8, 4], 0);
        assert!(matches!(
            brute_force_best_mask(&net, 32, SearchObjective::Paths),
            Err(Error::SearchTooLarge { .. })
        ));
    }

    #[test]
    fn search_visits_every_mask() {
        let net = dense_net(&[2, 3, 2], 0);
        let r = brute_force_best_mask(&net, 5, SearchObjective::Trace).unwrap();
        assert_eq!(r.evaluated as f64, binomial(12, 5));
        assert_eq!(r.mask.active_count(), 5);
        let traced = scores::path_kernel_trace(&net.with_mask(r.mask.clone()).unwrap()).unwrap();
        assert!((traced - r.value).abs() <= 1e-12 * traced);
    }

    #[test]
    fn fully_connected_detection() {
        let net = dense_net(&[2, 4, 2], 0);
        assert_eq!(fully_connected_widths(&net), Some(vec![4]));
        let arch = net.arch().clone();
        let mut mask = Mask::zeros(&arch);
        for s in 0..2 {
            mask.set(0, arch.entry_index(0, s, 3, 0), true);
            mask.set(1, arch.entry_index(1, 3, s, 0), true);
        }
        assert_eq!(fully_connected_widths(&net.with_mask(mask.clone()).unwrap()), Some(vec![1]));
        mask.set(0, arch.entry_index(0, 0, 1, 0), true);
        assert_eq!(fully_connected_widths(&net.with_mask(mask).unwrap()), None);
    }

    #[test]
    fn report_shape() {
        let net = dense_net(&[3, 5, 5, 2], 0);
        let r = structure_report(&net);
        assert_eq!(r.layers.len(), 3);
        assert_eq!(r.paths, "150");
        assert_eq!(r.density, 1.0);
        assert!(r.trace.is_some());
        assert_eq!(r.to_csv().lines().count(), 4);
        let back: StructureReport = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(back.paths, r.paths);
    }
}
