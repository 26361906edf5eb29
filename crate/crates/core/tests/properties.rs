//! Property tests over random architectures, weights and masks.

use proptest::prelude::*;
use sparsenet::netcore::{build_network, io, min_density, target_count, Architecture, InitSpec, Mask, SparseNet};
use sparsenet::pathmetrics::{count_paths, detect_layer_collapse, layer_widths, Collapse};
use sparsenet::scores::{keep_top, magnitude_score, path_kernel_trace, prune_by_score, PruneSchedule, Scorer};
use sparsenet::shuffle::{shuffle_width_with, ShuffleMode};
use sparsenet::walks::{phew_prune, PhewConfig, WalkBias};

fn arch_strategy() -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1usize..7, 3..6)
}

fn masked(sizes: &[usize], seed: u64, bits: &[bool]) -> SparseNet {
    let arch = Architecture::dense(sizes).unwrap();
    let net = build_network(&arch, InitSpec::Kaiming, seed).unwrap();
    let mut it = bits.iter().cycle();
    let layers = (0..arch.parametrized_layer_count())
        .map(|l| (0..arch.layer_len(l)).map(|_| *it.next().unwrap()).collect())
        .collect();
    net.with_mask(Mask::from_layers(layers)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn phew_meets_target_without_collapse(sizes in arch_strategy(), seed in 0u64..1000, frac in 0.0f64..1.0) {
        let arch = Architecture::dense(&sizes).unwrap();
        let net = build_network(&arch, InitSpec::Kaiming, seed).unwrap();
        let rho_min = min_density(&arch);
        let rho = rho_min + frac * (1.0 - rho_min);
        let (pruned, budget, log) = phew_prune(&net, rho, &PhewConfig::default(), seed).unwrap();
        let target = target_count(rho, arch.total_params()).max(arch.parametrized_layer_count());
        prop_assert!(pruned.active_count() >= target);
        // the last walk adds at most one entry per layer
        prop_assert!(pruned.active_count() < target + arch.parametrized_layer_count());
        prop_assert_eq!(detect_layer_collapse(&pruned), Collapse::None);
        prop_assert_eq!(budget.walk_count, log.len());
        let mut union = Mask::zeros(&arch);
        for w in &log.walks {
            for (l, i) in w.entries(&arch) {
                union.set(l, i, true);
            }
        }
        prop_assert_eq!(&union, pruned.mask());
    }

    #[test]
    fn walk_starts_are_balanced(sizes in arch_strategy(), seed in 0u64..1000, bias in prop_oneof![
        Just(WalkBias::WeightBiased), Just(WalkBias::Uniform), Just(WalkBias::InverseWeightBiased)
    ]) {
        let arch = Architecture::dense(&sizes).unwrap();
        let net = build_network(&arch, InitSpec::Kaiming, seed).unwrap();
        let (_, budget, _) = phew_prune(&net, 1.0, &PhewConfig::with_bias(bias), seed).unwrap();
        let spread = |v: &[usize]| v.iter().max().unwrap() - v.iter().min().unwrap();
        prop_assert!(spread(&budget.forward_starts) <= 1);
        prop_assert!(spread(&budget.backward_starts) <= 1);
        let f: usize = budget.forward_starts.iter().sum();
        let b: usize = budget.backward_starts.iter().sum();
        prop_assert!(f == b || f == b + 1);
    }

    #[test]
    fn score_pruning_hits_exact_count(sizes in arch_strategy(), seed in 0u64..1000, rho in 0.05f64..1.0, iterative in any::<bool>()) {
        let arch = Architecture::dense(&sizes).unwrap();
        let net = build_network(&arch, InitSpec::Kaiming, seed).unwrap();
        let schedule = PruneSchedule { iterations: if iterative { 10 } else { 1 } };
        for scorer in [Scorer::SynFlow, Scorer::SynFlowL2, Scorer::Magnitude, Scorer::Random { seed }] {
            let pruned = prune_by_score(&net, scorer, schedule, rho).unwrap();
            prop_assert_eq!(pruned.active_count(), target_count(rho, arch.total_params()));
        }
    }

    #[test]
    fn keep_top_keeps_the_largest(sizes in arch_strategy(), seed in 0u64..1000, keep_frac in 0.0f64..1.0) {
        let net = build_network(&Architecture::dense(&sizes).unwrap(), InitSpec::Kaiming, seed).unwrap();
        let scores = magnitude_score(&net);
        let keep = (keep_frac * net.active_count() as f64) as usize;
        let mask = keep_top(&net, &scores, keep);
        prop_assert_eq!(mask.active_count(), keep);
        let kept_min = mask.active_entries().map(|(l, i)| scores.get(l, i)).fold(f64::INFINITY, f64::min);
        let dropped_max = net.mask().active_entries().filter(|&(l, i)| !mask.get(l, i))
            .map(|(l, i)| scores.get(l, i)).fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(keep == 0 || dropped_max <= kept_min);
    }

    #[test]
    fn trace_is_invariant_to_hidden_permutations(sizes in arch_strategy(), seed in 0u64..1000, bits in prop::collection::vec(any::<bool>(), 1..64), rot in 0usize..7) {
        let net = masked(&sizes, seed, &bits);
        let arch = net.arch().clone();
        // rotate the units of the first hidden layer
        let n = sizes[1];
        let perm = |u: usize| (u + rot) % n;
        let mut w = net.all_weights().to_vec();
        let mut m: Vec<Vec<bool>> = net.mask().layers().to_vec();
        for (l, side) in [(0usize, 1usize), (1, 0)] {
            let (n_src, n_dst) = arch.layer_shape(l);
            let old_w = net.weights(l).to_vec();
            let old_m = net.mask().layer(l).to_vec();
            for s in 0..n_src {
                for d in 0..n_dst {
                    let (ps, pd) = if side == 1 { (s, perm(d)) } else { (perm(s), d) };
                    let from = arch.entry_index(l, s, d, 0);
                    let to = arch.entry_index(l, ps, pd, 0);
                    w[l][to] = old_w[from];
                    m[l][to] = old_m[from];
                }
            }
        }
        let permuted = SparseNet::from_parts(arch, InitSpec::Kaiming, w, Mask::from_layers(m), seed).unwrap();
        let (a, b) = (path_kernel_trace(&net).unwrap(), path_kernel_trace(&permuted).unwrap());
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1e-300));
        prop_assert_eq!(count_paths(&net), count_paths(&permuted));
    }

    #[test]
    fn collapse_means_no_paths(sizes in arch_strategy(), seed in 0u64..1000, bits in prop::collection::vec(any::<bool>(), 1..64)) {
        let net = masked(&sizes, seed, &bits);
        if detect_layer_collapse(&net) != Collapse::None {
            prop_assert_eq!(count_paths(&net), 0u32.into());
        }
        let widths = layer_widths(&net);
        prop_assert!(widths.iter().zip(&sizes).all(|(w, s)| w <= s));
    }

    #[test]
    fn shuffle_preserves_layer_counts(sizes in arch_strategy(), seed in 0u64..1000, bits in prop::collection::vec(any::<bool>(), 1..64), x in 0.0f64..=1.0, resample in any::<bool>()) {
        let net = masked(&sizes, seed, &bits);
        let mode = if resample { ShuffleMode::Resample } else { ShuffleMode::Incremental };
        let (out, o) = shuffle_width_with(&net, x, mode, seed).unwrap();
        prop_assert_eq!(out.mask().layer_active_counts(), net.mask().layer_active_counts());
        prop_assert_eq!(out.all_weights(), net.all_weights());
        prop_assert_eq!(&o.achieved, &layer_widths(&out));
        if mode == ShuffleMode::Incremental {
            for (a, b) in o.achieved.iter().zip(&o.before) {
                prop_assert!(a >= b);
            }
        }
    }

    #[test]
    fn network_files_round_trip(sizes in arch_strategy(), seed in 0u64..1000, bits in prop::collection::vec(any::<bool>(), 1..64)) {
        let net = masked(&sizes, seed, &bits);
        let back = io::net_from_json(&io::net_to_json(&net)).unwrap();
        prop_assert_eq!(back.mask(), net.mask());
        for (a, b) in back.all_weights().iter().zip(net.all_weights()) {
            prop_assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }
}
