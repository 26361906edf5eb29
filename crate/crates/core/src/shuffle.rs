//! Width shuffling: rearranges a mask inside each layer so more units stay
//! connected, keeping every layer's parameter count.

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::netcore::{Mask, SparseNet};
use crate::pathmetrics::layer_widths;
use crate::rng::{self, Stream};

/// How entries are moved to widen a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShuffleMode {
    /// Relocates one randomly chosen entry at a time, from a place where it
    /// is not the only connection of either endpoint to an unused unit,
    /// until the target width is met. Everything else stays in place.
    #[default]
    Incremental,
    /// Discards the layer's arrangement and places its entries at random
    /// among the target units, covering each of them.
    Resample,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShuffleOutcome {
    pub width_factor: f64,
    /// Active width per unit layer before shuffling.
    pub before: Vec<usize>,
    /// Requested width `round(w + x (W - w))` per unit layer.
    pub requested: Vec<usize>,
    pub achieved: Vec<usize>,
    /// False when some requested width could not be reached exactly.
    pub feasible: bool,
}

/// Shuffles each layer's active entries so that unit layer `u` ends up
/// with about `round(w + x (W - w))` active units, `w` its current and `W`
/// its unpruned width. `x = 0` returns the mask unchanged. The number of
/// active entries of every parametrized layer is preserved exactly.
///
/// A hidden unit needs an incoming and an outgoing entry to count as
/// active, so a width is capped by the entry counts of both adjacent
/// layers. When the cap binds, the closest reachable width is used and
/// `feasible` is false.
pub fn shuffle_width(net: &SparseNet, x: f64, seed: u64) -> Result<(SparseNet, ShuffleOutcome)> {
    shuffle_width_with(net, x, ShuffleMode::default(), seed)
}

/// [`shuffle_width`] with an explicit [`ShuffleMode`].
pub fn shuffle_width_with(net: &SparseNet, x: f64, mode: ShuffleMode, seed: u64) -> Result<(SparseNet, ShuffleOutcome)> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::InvalidArgument(format!("width factor {x} not in [0, 1]")));
    }
    let arch = net.arch();
    let sizes = arch.layer_sizes();
    let before = layer_widths(net);
    let requested: Vec<usize> = before
        .iter()
        .zip(sizes)
        .map(|(&w, &full)| (w as f64 + x * (full - w) as f64).round() as usize)
        .collect();
    if x == 0.0 {
        let outcome = ShuffleOutcome { width_factor: x, before: before.clone(), requested, achieved: before, feasible: true };
        return Ok((net.clone(), outcome));
    }

    let mut rng = rng::stream(seed, Stream::Shuffle);
    let counts = net.mask().layer_active_counts();
    let depth = arch.parametrized_layer_count();
    let caps: Vec<usize> = (0..sizes.len())
        .map(|u| {
            let mut cap = sizes[u];
            if u > 0 {
                cap = cap.min(counts[u - 1]);
            }
            if u < depth {
                cap = cap.min(counts[u]);
            }
            requested[u].min(cap)
        })
        .collect();
    let mask = match mode {
        ShuffleMode::Incremental => incremental(net, &caps, &mut rng),
        ShuffleMode::Resample => resample(net, &caps, &mut rng),
    };
    debug_assert_eq!(mask.layer_active_counts(), counts);
    let shuffled = net.with_mask(mask)?;
    let achieved = layer_widths(&shuffled);
    let feasible = achieved == requested;
    if !feasible {
        log::warn!("width shuffle reached {achieved:?} instead of {requested:?}");
    }
    Ok((shuffled, ShuffleOutcome { width_factor: x, before, requested, achieved, feasible }))
}

/// Degrees of every unit: entries into it and out of it.
struct Degrees {
    into: Vec<Vec<usize>>,
    out: Vec<Vec<usize>>,
}

impl Degrees {
    fn active(&self, u: usize, i: usize) -> bool {
        (u == 0 || self.into[u][i] > 0) && (u + 1 == self.into.len() || self.out[u][i] > 0)
    }
}

fn incremental(net: &SparseNet, goals: &[usize], rng: &mut rng::Rng) -> Mask {
    let arch = net.arch();
    let sizes = arch.layer_sizes();
    let last = sizes.len() - 1;
    let mut mask = net.mask().clone();
    let mut deg = Degrees {
        into: sizes.iter().map(|&n| vec![0; n]).collect(),
        out: sizes.iter().map(|&n| vec![0; n]).collect(),
    };
    for (l, i) in mask.active_entries() {
        let (s, d, _) = arch.entry_coords(l, i);
        deg.out[l][s] += 1;
        deg.into[l + 1][d] += 1;
    }
    // Moves one entry of layer `l` so that it connects `src -> dst`
    // (either side given); false when no entry can be spared.
    let relocate = |mask: &mut Mask, deg: &mut Degrees, l: usize, src: Option<usize>, dst: Option<usize>, rng: &mut rng::Rng| -> bool {
        let mut pool: Vec<usize> = mask.layer(l).iter().enumerate().filter(|(_, &b)| b).map(|(i, _)| i).collect();
        pool.shuffle(rng);
        let spare = pool.into_iter().find(|&i| {
            let (s, d, _) = arch.entry_coords(l, i);
            deg.out[l][s] >= 2 && deg.into[l + 1][d] >= 2
        });
        let Some(old) = spare else { return false };
        let pick_active = |u: usize, deg: &Degrees, rng: &mut rng::Rng| -> Option<usize> {
            let units: Vec<usize> = (0..sizes[u]).filter(|&i| deg.active(u, i)).collect();
            (!units.is_empty()).then(|| units[rng.random_range(0..units.len())])
        };
        let (Some(s), Some(d)) = (
            src.or_else(|| pick_active(l, deg, rng)),
            dst.or_else(|| pick_active(l + 1, deg, rng)),
        ) else {
            return false;
        };
        let (os, od, _) = arch.entry_coords(l, old);
        mask.set(l, old, false);
        deg.out[l][os] -= 1;
        deg.into[l + 1][od] -= 1;
        let k = rng.random_range(0..arch.kernel_area(l));
        mask.set(l, arch.entry_index(l, s, d, k), true);
        deg.out[l][s] += 1;
        deg.into[l + 1][d] += 1;
        true
    };
    for u in 0..=last {
        loop {
            let idle: Vec<usize> = (0..sizes[u]).filter(|&i| !deg.active(u, i)).collect();
            if sizes[u] - idle.len() >= goals[u] || idle.is_empty() {
                break;
            }
            let v = idle[rng.random_range(0..idle.len())];
            let mut ok = true;
            if u > 0 && deg.into[u][v] == 0 {
                ok &= relocate(&mut mask, &mut deg, u - 1, None, Some(v), rng);
            }
            if ok && u < last && deg.out[u][v] == 0 {
                ok &= relocate(&mut mask, &mut deg, u, Some(v), None, rng);
            }
            if !ok {
                break;
            }
        }
    }
    mask
}

fn resample(net: &SparseNet, goals: &[usize], rng: &mut rng::Rng) -> Mask {
    let arch = net.arch();
    let sizes = arch.layer_sizes();
    let counts = net.mask().layer_active_counts();
    let depth = arch.parametrized_layer_count();
    let current = active_sets(net);

    // Unit sets to connect, one per unit layer.
    let mut sets: Vec<Vec<usize>> = Vec::with_capacity(sizes.len());
    for u in 0..sizes.len() {
        let goal = goals[u];
        let mut chosen = current[u].clone();
        chosen.shuffle(rng);
        chosen.truncate(goal);
        let mut rest: Vec<usize> = (0..sizes[u]).filter(|i| !chosen.contains(i)).collect();
        rest.shuffle(rng);
        let missing = goal - chosen.len();
        chosen.extend_from_slice(&rest[..missing]);
        sets.push(chosen);
    }
    // Every layer's entries must fit inside the chosen block.
    for l in 0..depth {
        let area = arch.kernel_area(l);
        while sets[l].len() * sets[l + 1].len() * area < counts[l] {
            let grow = if sets[l].len() * sizes[l + 1] <= sets[l + 1].len() * sizes[l] { l } else { l + 1 };
            let grow = if sets[grow].len() == sizes[grow] { l + l + 1 - grow } else { grow };
            let extra: Vec<usize> = (0..sizes[grow]).filter(|i| !sets[grow].contains(i)).collect();
            let pick = extra[rng.random_range(0..extra.len())];
            sets[grow].push(pick);
        }
    }

    let mut mask = Mask::zeros(arch);
    for l in 0..depth {
        let area = arch.kernel_area(l);
        let (src, dst) = (&sets[l], &sets[l + 1]);
        if counts[l] == 0 || src.is_empty() || dst.is_empty() {
            continue;
        }
        let cover = src.len().max(dst.len()).min(counts[l]);
        for i in 0..cover {
            let k = rng.random_range(0..area);
            mask.set(l, arch.entry_index(l, src[i % src.len()], dst[i % dst.len()], k), true);
        }
        let mut free: Vec<usize> = Vec::with_capacity(src.len() * dst.len() * area);
        for &s in src {
            for &d in dst {
                for k in 0..area {
                    let idx = arch.entry_index(l, s, d, k);
                    if !mask.get(l, idx) {
                        free.push(idx);
                    }
                }
            }
        }
        free.sort_unstable();
        let (picked, _) = free.partial_shuffle(rng, counts[l] - cover);
        for &idx in picked.iter() {
            mask.set(l, idx, true);
        }
    }
    mask
}

/// Active units of each unit layer.
fn active_sets(net: &SparseNet) -> Vec<Vec<usize>> {
    let arch = net.arch();
    let sizes = arch.layer_sizes();
    let last = sizes.len() - 1;
    let mut has_in: Vec<Vec<bool>> = sizes.iter().map(|&n| vec![false; n]).collect();
    let mut has_out = has_in.clone();
    for (l, i) in net.mask().active_entries() {
        let (s, d, _) = arch.entry_coords(l, i);
        has_out[l][s] = true;
        has_in[l + 1][d] = true;
    }
    (0..=last)
        .map(|u| {
            (0..sizes[u])
                .filter(|&i| (u == 0 || has_in[u][i]) && (u == last || has_out[u][i]))
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netcore::{build_network, Architecture, InitSpec};
    use crate::scores::{prune_by_score, PruneSchedule, Scorer};

    fn narrow_net(seed: u64) -> SparseNet {
        let arch = Architecture::dense(&[8, 32, 32, 8]).unwrap();
        let net = build_network(&arch, InitSpec::Kaiming, seed).unwrap();
        prune_by_score(&net, Scorer::SynFlowL2, PruneSchedule { iterations: 20 }, 0.1).unwrap()
    }

    #[test]
    fn zero_factor_is_identity() {
        let net = narrow_net(0);
        let (out, o) = shuffle_width(&net, 0.0, 1).unwrap();
        assert_eq!(out.mask(), net.mask());
        assert_eq!(o.before, o.achieved);
    }

    #[test]
    fn full_factor_reaches_full_width() {
        let net = narrow_net(1);
        let (out, o) = shuffle_width(&net, 1.0, 7).unwrap();
        assert_eq!(out.mask().layer_active_counts(), net.mask().layer_active_counts());
        let counts = net.mask().layer_active_counts();
        let sizes = [8, 32, 32, 8];
        for u in 0..4 {
            let mut cap = sizes[u];
            if u > 0 {
                cap = cap.min(counts[u - 1]);
            }
            if u < 3 {
                cap = cap.min(counts[u]);
            }
            assert_eq!(o.achieved[u], cap, "unit layer {u}, counts {counts:?}");
        }
        assert!(o.before[1] < 32);
    }

    #[test]
    fn counts_preserved_for_every_factor() {
        let net = narrow_net(2);
        for &x in &[0.1, 0.25, 0.5, 0.75, 1.0] {
            let (out, o) = shuffle_width(&net, x, 3).unwrap();
            assert_eq!(out.mask().layer_active_counts(), net.mask().layer_active_counts(), "x = {x}");
            for u in 0..o.achieved.len() {
                assert!(o.achieved[u] >= o.before[u].min(o.requested[u]));
            }
        }
    }

    #[test]
    fn infeasible_width_is_best_effort() {
        let arch = Architecture::dense(&[4, 16, 4]).unwrap();
        let net = build_network(&arch, InitSpec::Kaiming, 0).unwrap();
        let mut mask = Mask::zeros(&arch);
        for s in 0..4 {
            mask.set(0, arch.entry_index(0, s, 0, 0), true);
            mask.set(1, arch.entry_index(1, 0, s, 0), true);
        }
        let net = net.with_mask(mask).unwrap();
        // every entry is some unit's only connection, so nothing can move
        let (out, o) = shuffle_width(&net, 1.0, 0).unwrap();
        assert!(!o.feasible);
        assert_eq!(o.achieved, o.before);
        assert_eq!(out.mask(), net.mask());
        let (out, o) = shuffle_width_with(&net, 1.0, ShuffleMode::Resample, 0).unwrap();
        assert!(!o.feasible);
        assert_eq!(o.achieved[1], 4);
        assert_eq!(out.mask().layer_active_counts(), vec![4, 4]);
    }

    #[test]
    fn deterministic() {
        let net = narrow_net(3);
        for mode in [ShuffleMode::Incremental, ShuffleMode::Resample] {
            let a = shuffle_width_with(&net, 0.5, mode, 11).unwrap().0;
            let b = shuffle_width_with(&net, 0.5, mode, 11).unwrap().0;
            assert_eq!(a.mask(), b.mask());
        }
    }

    #[test]
    fn incremental_moves_few_entries() {
        let net = narrow_net(4);
        let (out, o) = shuffle_width(&net, 1.0, 2).unwrap();
        let moved: usize = net
            .mask()
            .active_entries()
            .filter(|&(l, i)| !out.mask().get(l, i))
            .count();
        let gained: usize = o.achieved.iter().zip(&o.before).map(|(a, b)| a - b).sum();
        assert!(moved <= 2 * gained, "{moved} moved for {gained} units");
    }

    #[test]
    fn rejects_bad_factor() {
        let net = narrow_net(0);
        assert!(shuffle_width(&net, 1.5, 0).is_err());
        assert!(shuffle_width(&net, -0.1, 0).is_err());
    }
}
