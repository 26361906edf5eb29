//! Numerical checks of the structural results on paths, walks and minimum
//! density. Each check returns a row with the expected and measured values
//! rather than panicking, so callers can tabulate them.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::Result;
use crate::netcore::{build_network, min_density, target_count, Architecture, InitSpec, SparseNet};
use crate::pathmetrics::{
    binomial, brute_force_best_mask_with_limit, count_paths, detect_layer_collapse, fully_connected_widths,
    layer_widths, max_paths_width, Collapse, SearchObjective,
};
use crate::rng::{self, derive_seed, Stream};
use crate::scores::{prune_by_score, PruneSchedule, Scorer};
use crate::walks::{phew_prune, PhewConfig, WalkBias, WalkRecord, WalkSampler};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaCheck {
    pub name: String,
    pub expected: String,
    pub measured: String,
    pub passed: bool,
}

impl LemmaCheck {
    fn new(name: &str, expected: impl Into<String>, measured: impl Into<String>, passed: bool) -> Self {
        LemmaCheck { name: name.to_string(), expected: expected.into(), measured: measured.into(), passed }
    }
}

/// Renders rows as CSV with a header.
pub fn checks_to_csv(rows: &[LemmaCheck]) -> String {
    let mut out = String::from("name,expected,measured,passed\n");
    for r in rows {
        out.push_str(&format!("{},\"{}\",\"{}\",{}\n", r.name, r.expected, r.measured, r.passed));
    }
    out
}

/// Exhaustive search limit used by the checks; large enough for the
/// two-hidden-layer case (`C(32, 12)` masks).
pub const LEMMA_SEARCH_LIMIT: f64 = 3e8;

/// Best trace mask on a `D-N-D` network with `m = 2 n D` parameters keeps
/// `n` fully connected hidden units. Passes when at least 90% of the seeds
/// agree.
pub fn trace_argmax_check(inputs: usize, hidden: usize, kept: usize, seeds: &[u64]) -> Result<LemmaCheck> {
    let arch = Architecture::dense(&[inputs, hidden, inputs])?;
    let m = 2 * kept * inputs;
    let mut hits = 0;
    for &seed in seeds {
        let net = build_network(&arch, InitSpec::NormalFixed { std: 1.0 }, seed)?;
        let best = brute_force_best_mask_with_limit(&net, m, SearchObjective::Trace, LEMMA_SEARCH_LIMIT)?;
        if fully_connected_widths(&net.with_mask(best.mask)?) == Some(vec![kept]) {
            hits += 1;
        }
    }
    Ok(LemmaCheck::new(
        "trace_argmax_fully_connected",
        format!("{kept} fully connected hidden units on >= 90% of {} nets", seeds.len()),
        format!("{hits}/{}", seeds.len()),
        hits * 10 >= seeds.len() * 9,
    ))
}

/// Best path-count mask on `D-N-D` with `m` parameters: `m / 2D` fully
/// connected hidden units and `D^2 m / 2D` paths.
pub fn paths_single_hidden_check(inputs: usize, hidden: usize, m: usize) -> Result<LemmaCheck> {
    let arch = Architecture::dense(&[inputs, hidden, inputs])?;
    let net = build_network(&arch, InitSpec::Kaiming, 0)?;
    let best = brute_force_best_mask_with_limit(&net, m, SearchObjective::Paths, LEMMA_SEARCH_LIMIT)?;
    let masked = net.with_mask(best.mask)?;
    let widths = fully_connected_widths(&masked);
    let paths = count_paths(&masked);
    let n = m / (2 * inputs);
    let expected_paths = inputs * inputs * n;
    Ok(LemmaCheck::new(
        "max_paths_one_hidden",
        format!("{n} fully connected hidden units, P = {expected_paths}"),
        format!("widths {widths:?}, P = {paths}"),
        widths == Some(vec![n]) && paths == expected_paths.into(),
    ))
}

/// Best path-count mask on `D-N-N-D` with `m` parameters has equal hidden widths.
pub fn paths_two_hidden_check(inputs: usize, hidden: usize, m: usize, expected: (usize, usize)) -> Result<LemmaCheck> {
    let arch = Architecture::dense(&[inputs, hidden, hidden, inputs])?;
    let net = build_network(&arch, InitSpec::Kaiming, 0)?;
    let best = brute_force_best_mask_with_limit(&net, m, SearchObjective::Paths, LEMMA_SEARCH_LIMIT)?;
    let masked = net.with_mask(best.mask)?;
    let widths = layer_widths(&masked);
    let measured = (widths[1], widths[2]);
    Ok(LemmaCheck::new(
        "max_paths_two_hidden",
        format!("hidden widths {expected:?}, {} masks searched", binomial(arch.total_params(), m)),
        format!("hidden widths {measured:?}, P = {}", count_paths(&masked)),
        measured == expected,
    ))
}

/// Closed-form equal widths against an integer search over `(n1, n2)` with
/// `D (n1 + n2) + n1 n2 <= m`.
pub fn closed_form_width_check(inputs: usize, m: usize) -> Result<LemmaCheck> {
    let (n, _) = max_paths_width(inputs, m as f64)?;
    let d = inputs;
    let mut best = (0, 0, 0usize);
    for n1 in 1..=m {
        for n2 in 1..=m {
            if d * (n1 + n2) + n1 * n2 <= m && d * d * n1 * n2 > best.2 {
                best = (n1, n2, d * d * n1 * n2);
            }
        }
    }
    Ok(LemmaCheck::new(
        "max_paths_closed_form",
        format!("n = sqrt(D^2 + m) - D = {n}"),
        format!("integer argmax ({}, {})", best.0, best.1),
        (n - n.round()).abs() < 1e-12 && best.0 == n.round() as usize && best.1 == best.0,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WalkUniformity {
    pub walks: usize,
    pub networks: usize,
    pub chi_square: f64,
    pub critical: f64,
    pub degrees_of_freedom: usize,
    /// max - min walks started per input unit.
    pub forward_start_spread: usize,
    pub backward_start_spread: usize,
}

/// Visits per hidden unit of weight-biased walks against the uniform
/// expectation `W / N`, by chi-square at level `alpha`.
///
/// The expectation is over initializations, so the `walks` are spread over
/// independent networks, `per_network` walks each. Walk starts continue
/// their round-robin across networks.
pub fn walk_uniformity(
    arch: &Architecture,
    walks: usize,
    per_network: usize,
    alpha: f64,
    seed: u64,
) -> Result<WalkUniformity> {
    let layer = 1;
    let width = arch.layer_sizes()[layer];
    let mut visits = vec![0usize; width];
    let mut fwd = vec![0usize; arch.input_dim()];
    let mut bwd = vec![0usize; arch.output_dim()];
    let networks = walks.div_ceil(per_network.max(1));
    let mut done = 0;
    let mut counter = 0usize;
    for k in 0..networks {
        let net = build_network(arch, InitSpec::Kaiming, derive_seed(seed, &format!("net{k}")))?;
        let mut sampler = WalkSampler::new(&net, WalkBias::WeightBiased, false, rng::stream(derive_seed(seed, &format!("walks{k}")), Stream::Lemma));
        let take = per_network.min(walks - done);
        for _ in 0..take {
            let walk = round_robin_walk(&mut sampler, &net, counter)?;
            counter += 1;
            let hop = walk.hops.iter().find(|h| h.layer == layer).expect("one hop per layer");
            visits[hop.src] += 1;
            match walk.direction {
                crate::walks::Direction::Forward => fwd[walk.start_unit] += 1,
                crate::walks::Direction::Backward => bwd[walk.start_unit] += 1,
            }
        }
        done += take;
    }
    let expected = walks as f64 / width as f64;
    let chi_square = visits.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let df = width - 1;
    let critical = ChiSquared::new(df as f64).expect("positive df").inverse_cdf(1.0 - alpha);
    let spread = |v: &[usize]| v.iter().max().unwrap() - v.iter().min().unwrap();
    Ok(WalkUniformity {
        walks,
        networks,
        chi_square,
        critical,
        degrees_of_freedom: df,
        forward_start_spread: spread(&fwd),
        backward_start_spread: spread(&bwd),
    })
}

/// Draws walk number `index` of a global alternating round-robin schedule
/// from a sampler that may have been created part way through it.
fn round_robin_walk(sampler: &mut WalkSampler<'_>, net: &SparseNet, index: usize) -> Result<WalkRecord> {
    let arch = net.arch();
    let (direction, start) = if index % 2 == 0 {
        (crate::walks::Direction::Forward, (index / 2) % arch.input_dim())
    } else {
        (crate::walks::Direction::Backward, (index / 2) % arch.output_dim())
    };
    sampler.walk_from(direction, start)
}

pub fn walk_uniformity_check(arch: &Architecture, walks: usize, per_network: usize, seed: u64) -> Result<LemmaCheck> {
    let r = walk_uniformity(arch, walks, per_network, 0.01, seed)?;
    Ok(LemmaCheck::new(
        "walk_visits_uniform",
        format!("chi2 < {:.2} (df {}, alpha 0.01), start spread <= 1", r.critical, r.degrees_of_freedom),
        format!("chi2 = {:.2}, start spread {}/{}", r.chi_square, r.forward_start_spread, r.backward_start_spread),
        r.chi_square < r.critical && r.forward_start_spread <= 1 && r.backward_start_spread <= 1,
    ))
}

/// Mean over `paths` sampled paths of `sum_l prod_{i != l} theta_i^2`,
/// the path's contribution to the kernel trace.
pub fn mean_path_contribution(net: &SparseNet, bias: WalkBias, paths: usize, seed: u64) -> Result<f64> {
    let mut sampler = WalkSampler::new(net, bias, false, rng::stream(seed, Stream::Lemma));
    let mut total = 0.0;
    for i in 0..paths {
        let walk = round_robin_walk(&mut sampler, net, i)?;
        let sq: Vec<f64> = walk
            .hops
            .iter()
            .map(|h| {
                let w = net.weights(h.layer)[net.arch().entry_index(h.layer, h.src, h.dst, 0)];
                w * w
            })
            .collect();
        total += (0..sq.len())
            .map(|l| sq.iter().enumerate().filter(|&(i, _)| i != l).map(|(_, v)| v).product::<f64>())
            .sum::<f64>();
    }
    Ok(total / paths as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasRatio {
    pub hidden_layers: usize,
    pub biased: f64,
    pub uniform: f64,
    pub ratio: f64,
    pub expected: f64,
}

/// Ratio of mean path contributions of weight-biased to uniform paths on a
/// Kaiming network with `hidden_layers` hidden layers of `width` units.
pub fn bias_ratio(width: usize, hidden_layers: usize, paths: usize, seed: u64) -> Result<BiasRatio> {
    let sizes = vec![width; hidden_layers + 2];
    let net = build_network(&Architecture::dense(&sizes)?, InitSpec::Kaiming, seed)?;
    let biased = mean_path_contribution(&net, WalkBias::WeightBiased, paths, derive_seed(seed, "biased"))?;
    let uniform = mean_path_contribution(&net, WalkBias::Uniform, paths, derive_seed(seed, "uniform"))?;
    Ok(BiasRatio {
        hidden_layers,
        biased,
        uniform,
        ratio: biased / uniform,
        expected: 2f64.powi(hidden_layers as i32),
    })
}

pub fn bias_ratio_check(width: usize, hidden_layers: usize, paths: usize, seed: u64) -> Result<LemmaCheck> {
    let r = bias_ratio(width, hidden_layers, paths, seed)?;
    Ok(LemmaCheck::new(
        &format!("biased_path_ratio_h{hidden_layers}"),
        format!("{} in [{}, {}]", r.expected, 0.75 * r.expected, 1.25 * r.expected),
        format!("{:.4}", r.ratio),
        r.ratio >= 0.75 * r.expected && r.ratio <= 1.25 * r.expected,
    ))
}

/// Walk pruning succeeds at exactly `L / M` with one entry per layer and
/// rejects `(L - 1) / M`.
pub fn min_density_check(arch: &Architecture, seed: u64) -> Result<LemmaCheck> {
    let net = build_network(arch, InitSpec::Kaiming, seed)?;
    let rho = min_density(arch);
    let (pruned, budget, _) = phew_prune(&net, rho, &PhewConfig::default(), seed)?;
    let counts = pruned.mask().layer_active_counts();
    let one_each = counts.iter().all(|&c| c == 1) && budget.walk_count == 1;
    let below = (arch.parametrized_layer_count() - 1) as f64 / arch.total_params() as f64;
    let rejected = phew_prune(&net, below, &PhewConfig::default(), seed).is_err();
    Ok(LemmaCheck::new(
        "min_density_boundary",
        format!("rho = {rho:.6e} gives one entry per layer; rho - 1/M rejected"),
        format!("counts {counts:?}, below rejected: {rejected}"),
        one_each && rejected && detect_layer_collapse(&pruned) == Collapse::None,
    ))
}

/// Iterative SynFlow slightly above the minimum density keeps every layer.
pub fn synflow_no_collapse_check(arch: &Architecture, seeds: &[u64]) -> Result<LemmaCheck> {
    let total = arch.total_params();
    let rho = min_density(arch) + 0.5 / total as f64;
    let mut ok = 0;
    for &seed in seeds {
        let net = build_network(arch, InitSpec::Kaiming, seed)?;
        let pruned = prune_by_score(&net, Scorer::SynFlow, PruneSchedule::default(), rho)?;
        debug_assert!(pruned.active_count() == target_count(rho, total));
        if detect_layer_collapse(&pruned) == Collapse::None {
            ok += 1;
        }
    }
    Ok(LemmaCheck::new(
        "synflow_min_density",
        format!("no collapse on {} nets", seeds.len()),
        format!("{ok}/{}", seeds.len()),
        ok == seeds.len(),
    ))
}

/// Sizes and sample counts of the standard suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LemmaSuite {
    pub seeds: Vec<u64>,
    pub walk_count: usize,
    pub walks_per_network: usize,
    pub path_samples: usize,
    pub ratio_width: usize,
}

impl Default for LemmaSuite {
    fn default() -> Self {
        LemmaSuite { seeds: (0..10).collect(), walk_count: 10_000, walks_per_network: 40, path_samples: 10_000, ratio_width: 100 }
    }
}

/// Runs every check. Errors inside a check become failed rows.
pub fn run_suite(suite: &LemmaSuite) -> Vec<LemmaCheck> {
    let seed = suite.seeds.first().copied().unwrap_or(0);
    let mut rows = Vec::new();
    let mut push = |name: &str, r: Result<LemmaCheck>| {
        rows.push(r.unwrap_or_else(|e| LemmaCheck::new(name, "check runs", format!("error: {e}"), false)))
    };
    push("trace_argmax_fully_connected", trace_argmax_check(2, 4, 2, &suite.seeds));
    push("max_paths_one_hidden", paths_single_hidden_check(2, 4, 8));
    push("max_paths_two_hidden", paths_two_hidden_check(2, 4, 12, (2, 2)));
    push("max_paths_closed_form", closed_form_width_check(4, 48));
    let walk_arch = Architecture::dense(&[20, 50, 20]).expect("valid");
    push("walk_visits_uniform", walk_uniformity_check(&walk_arch, suite.walk_count, suite.walks_per_network, seed));
    for h in 1..=3 {
        push(&format!("biased_path_ratio_h{h}"), bias_ratio_check(suite.ratio_width, h, suite.path_samples, seed));
    }
    let small = Architecture::dense(&[8, 16, 16, 8]).expect("valid");
    push("min_density_boundary", min_density_check(&small, seed));
    push("synflow_min_density", synflow_no_collapse_check(&small, &suite.seeds));
    rows
}
