use rand::Rng as _;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};

use super::{Architecture, Mask};
use crate::error::{Error, Result};
use crate::rng::{self, Stream};

/// Weight initialization scheme.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum InitSpec {
    /// Zero-mean normal with variance `2 / N_l`, where `N_l` is the width of
    /// the unit layer the weights feed into.
    #[default]
    Kaiming,
    NormalFixed { std: f64 },
    /// Uniform on `[-a, a]` with `a = sqrt(6 / (fan_in + fan_out))`.
    XavierUniform,
}

impl InitSpec {
    /// Variance of the weight sampler for a parametrized layer.
    pub fn layer_variance(&self, arch: &Architecture, layer: usize) -> f64 {
        let (n_src, n_dst) = arch.layer_shape(layer);
        match *self {
            InitSpec::Kaiming => 2.0 / n_dst as f64,
            InitSpec::NormalFixed { std } => std * std,
            InitSpec::XavierUniform => {
                let area = arch.kernel_area(layer) as f64;
                let a2 = 6.0 / ((n_src as f64 + n_dst as f64) * area);
                a2 / 3.0
            }
        }
    }

    fn validate(&self) -> Result<()> {
        if let InitSpec::NormalFixed { std } = *self {
            if !(std.is_finite() && std > 0.0) {
                return Err(Error::InvalidArgument(format!("normal std must be positive, got {std}")));
            }
        }
        Ok(())
    }

    fn sample_layer(&self, arch: &Architecture, layer: usize, rng: &mut rng::Rng) -> Vec<f64> {
        let n = arch.layer_len(layer);
        let var = self.layer_variance(arch, layer);
        match self {
            InitSpec::XavierUniform => {
                let a = (3.0 * var).sqrt();
                let dist = Uniform::new_inclusive(-a, a).expect("finite bounds");
                (0..n).map(|_| dist.sample(rng)).collect()
            }
            _ => {
                let dist = Normal::new(0.0, var.sqrt()).expect("positive variance");
                (0..n).map(|_| dist.sample(rng)).collect()
            }
        }
    }
}

/// Weight re-sampling schemes applied after a mask has been chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reinit {
    /// Original per-layer variance.
    Dense,
    /// Per-layer variance divided by the layer's density.
    LayerwiseSparse,
    /// Per-unit variance `2 / d`, `d` the unit's active fan-in.
    NeuronwiseSparse,
}

/// An architecture with one weight and one mask bit per parameter.
///
/// Values are immutable once built; every transformation returns a new net.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseNet {
    arch: Architecture,
    init: InitSpec,
    weights: Vec<Vec<f64>>,
    mask: Mask,
    seed: u64,
}

/// Samples a fully dense network. Deterministic in `(arch, init, seed)`.
pub fn build_network(arch: &Architecture, init: InitSpec, seed: u64) -> Result<SparseNet> {
    init.validate()?;
    if arch.total_params() == 0 {
        return Err(Error::InvalidArchitecture("no parameters".into()));
    }
    let mut rng = rng::stream(seed, Stream::Init);
    let weights = (0..arch.parametrized_layer_count())
        .map(|l| init.sample_layer(arch, l, &mut rng))
        .collect();
    Ok(SparseNet { arch: arch.clone(), init, weights, mask: Mask::ones(arch), seed })
}

impl SparseNet {
    /// Assembles a net from explicit parts, checking shapes.
    pub fn from_parts(
        arch: Architecture,
        init: InitSpec,
        weights: Vec<Vec<f64>>,
        mask: Mask,
        seed: u64,
    ) -> Result<Self> {
        let shapes_ok = weights.len() == arch.parametrized_layer_count()
            && weights.iter().enumerate().all(|(l, w)| w.len() == arch.layer_len(l));
        if !shapes_ok {
            return Err(Error::ShapeMismatch {
                expected: format!("{:?}", layer_lens(&arch)),
                found: format!("{:?}", weights.iter().map(Vec::len).collect::<Vec<_>>()),
            });
        }
        if !mask.matches(&arch) {
            return Err(Error::ShapeMismatch {
                expected: format!("{:?}", layer_lens(&arch)),
                found: format!("{:?}", mask.layers().iter().map(Vec::len).collect::<Vec<_>>()),
            });
        }
        Ok(SparseNet { arch, init, weights, mask, seed })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn init(&self) -> InitSpec {
        self.init
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    /// Raw (unmasked) weights of a layer.
    pub fn weights(&self, layer: usize) -> &[f64] {
        &self.weights[layer]
    }

    pub fn all_weights(&self) -> &[Vec<f64>] {
        &self.weights
    }

    /// Weight as seen by forward passes and scores: `weight * mask`.
    #[inline]
    pub fn masked_weight(&self, layer: usize, index: usize) -> f64 {
        if self.mask.get(layer, index) {
            self.weights[layer][index]
        } else {
            0.0
        }
    }

    pub fn masked_layer(&self, layer: usize) -> Vec<f64> {
        self.weights[layer]
            .iter()
            .zip(self.mask.layer(layer))
            .map(|(&w, &m)| if m { w } else { 0.0 })
            .collect()
    }

    pub fn with_mask(&self, mask: Mask) -> Result<SparseNet> {
        if !mask.matches(&self.arch) {
            return Err(Error::ShapeMismatch {
                expected: format!("{:?}", layer_lens(&self.arch)),
                found: format!("{:?}", mask.layers().iter().map(Vec::len).collect::<Vec<_>>()),
            });
        }
        Ok(SparseNet { mask, ..self.clone() })
    }

    pub fn with_weights(&self, weights: Vec<Vec<f64>>) -> Result<SparseNet> {
        SparseNet::from_parts(self.arch.clone(), self.init, weights, self.mask.clone(), self.seed)
    }

    pub fn active_count(&self) -> usize {
        self.mask.active_count()
    }

    /// Density `m / M`.
    pub fn density(&self) -> f64 {
        self.mask.active_count() as f64 / self.arch.total_params() as f64
    }

    /// Zeroes every weight whose mask bit is 0. Idempotent.
    pub fn apply_mask(&self) -> SparseNet {
        let weights = (0..self.weights.len()).map(|l| self.masked_layer(l)).collect();
        SparseNet { weights, ..self.clone() }
    }

    /// Resamples all weights, leaving the mask untouched. Units with no
    /// active fan-in under [`Reinit::NeuronwiseSparse`] get zero weights.
    pub fn reinitialize(&self, scheme: Reinit, seed: u64) -> SparseNet {
        let arch = &self.arch;
        let weights = match scheme {
            Reinit::Dense => {
                let mut rng = rng::stream(seed, Stream::Init);
                (0..arch.parametrized_layer_count())
                    .map(|l| self.init.sample_layer(arch, l, &mut rng))
                    .collect()
            }
            Reinit::LayerwiseSparse => {
                let mut rng = rng::stream(seed, Stream::Reinit);
                (0..arch.parametrized_layer_count())
                    .map(|l| {
                        let active = self.mask.layer(l).iter().filter(|&&b| b).count();
                        if active == 0 {
                            return vec![0.0; arch.layer_len(l)];
                        }
                        let density = active as f64 / arch.layer_len(l) as f64;
                        let var = self.init.layer_variance(arch, l) / density;
                        sample_normal(arch.layer_len(l), var, &mut rng)
                    })
                    .collect()
            }
            Reinit::NeuronwiseSparse => {
                let mut rng = rng::stream(seed, Stream::Reinit);
                (0..arch.parametrized_layer_count())
                    .map(|l| self.neuronwise_layer(l, &mut rng))
                    .collect()
            }
        };
        SparseNet { weights, seed, ..self.clone() }
    }

    fn neuronwise_layer(&self, layer: usize, rng: &mut rng::Rng) -> Vec<f64> {
        let arch = &self.arch;
        let (n_src, n_dst) = arch.layer_shape(layer);
        let row = n_src * arch.kernel_area(layer);
        let mask = self.mask.layer(layer);
        let mut out = vec![0.0; arch.layer_len(layer)];
        for dst in 0..n_dst {
            let span = dst * row..(dst + 1) * row;
            let fan_in = mask[span.clone()].iter().filter(|&&b| b).count();
            if fan_in == 0 {
                continue;
            }
            let std = (2.0 / fan_in as f64).sqrt();
            for w in &mut out[span] {
                *w = std * rng.sample::<f64, _>(rand_distr::StandardNormal);
            }
        }
        out
    }
}

fn sample_normal(n: usize, var: f64, rng: &mut rng::Rng) -> Vec<f64> {
    let dist = Normal::new(0.0, var.sqrt()).expect("positive variance");
    (0..n).map(|_| dist.sample(rng)).collect()
}

fn layer_lens(arch: &Architecture) -> Vec<usize> {
    (0..arch.parametrized_layer_count()).map(|l| arch.layer_len(l)).collect()
}

/// Density `m / M` of a network.
pub fn density(net: &SparseNet) -> f64 {
    net.density()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dense(sizes: &[usize]) -> Architecture {
        Architecture::dense(sizes).unwrap()
    }

    #[test]
    fn kaiming_variance_uses_destination_width() {
        let arch = dense(&[10, 50, 5]);
        assert!((InitSpec::Kaiming.layer_variance(&arch, 0) - 0.04).abs() < 1e-15);
        assert!((InitSpec::Kaiming.layer_variance(&arch, 1) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn kaiming_empirical_variance() {
        let arch = dense(&[2000, 50]);
        let net = build_network(&arch, InitSpec::Kaiming, 3).unwrap();
        let w = net.weights(0);
        assert_eq!(w.len(), 100_000);
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (w.len() - 1) as f64;
        assert!((0.036..=0.044).contains(&var), "variance {var}");
    }

    #[test]
    fn build_is_deterministic() {
        let arch = dense(&[4, 8, 3]);
        let a = build_network(&arch, InitSpec::Kaiming, 11).unwrap();
        let b = build_network(&arch, InitSpec::Kaiming, 11).unwrap();
        let bits = |n: &SparseNet| -> Vec<u64> {
            n.all_weights().iter().flatten().map(|w| w.to_bits()).collect()
        };
        assert_eq!(bits(&a), bits(&b));
        assert_ne!(bits(&a), bits(&build_network(&arch, InitSpec::Kaiming, 12).unwrap()));
        assert_eq!(a.density(), 1.0);
    }

    #[test]
    fn rejects_bad_std() {
        let arch = dense(&[2, 2]);
        assert!(build_network(&arch, InitSpec::NormalFixed { std: 0.0 }, 0).is_err());
    }

    #[test]
    fn density_counts() {
        let arch = dense(&[2, 4, 2]);
        let net = build_network(&arch, InitSpec::Kaiming, 0).unwrap();
        assert_eq!(density(&net.with_mask(Mask::zeros(&arch)).unwrap()), 0.0);
        let mut m = Mask::zeros(&arch);
        for i in 0..4 {
            m.set(0, i, true);
            m.set(1, i, true);
        }
        assert_eq!(net.with_mask(m).unwrap().density(), 0.5);
    }

    #[test]
    fn apply_mask_cases() {
        let arch = dense(&[3, 3, 2]);
        let net = build_network(&arch, InitSpec::Kaiming, 1).unwrap();
        assert_eq!(net.apply_mask(), net);
        let zeroed = net.with_mask(Mask::zeros(&arch)).unwrap().apply_mask();
        assert!(zeroed.all_weights().iter().flatten().all(|&w| w == 0.0));
        let mut m = Mask::ones(&arch);
        m.set(0, 2, false);
        m.set(1, 5, false);
        let once = net.with_mask(m).unwrap().apply_mask();
        assert_eq!(once.apply_mask(), once);
        assert_eq!(once.weights(0)[2], 0.0);
    }

    #[test]
    fn dense_reinit_matches_fresh_build() {
        let arch = dense(&[3, 5, 2]);
        let net = build_network(&arch, InitSpec::Kaiming, 1).unwrap();
        let re = net.reinitialize(Reinit::Dense, 9);
        assert_eq!(re, build_network(&arch, InitSpec::Kaiming, 9).unwrap());
    }

    #[test]
    fn reinit_keeps_mask() {
        let arch = dense(&[4, 6, 3]);
        let net = build_network(&arch, InitSpec::Kaiming, 1).unwrap();
        let mut m = Mask::zeros(&arch);
        for i in (0..24).step_by(3) {
            m.set(0, i, true);
        }
        m.set(1, 4, true);
        let net = net.with_mask(m).unwrap();
        for scheme in [Reinit::Dense, Reinit::LayerwiseSparse, Reinit::NeuronwiseSparse] {
            let re = net.reinitialize(scheme, 5);
            assert_eq!(re.mask(), net.mask());
        }
    }

    #[test]
    fn neuronwise_zero_fan_in_stays_zero() {
        let arch = dense(&[3, 2]);
        let net = build_network(&arch, InitSpec::Kaiming, 0).unwrap();
        let mut m = Mask::zeros(&arch);
        m.set(0, 0, true); // unit 0 has fan-in 1, unit 1 has none
        let re = net.with_mask(m).unwrap().reinitialize(Reinit::NeuronwiseSparse, 1);
        assert!(re.weights(0)[3..].iter().all(|&w| w == 0.0));
        assert!(re.weights(0)[0] != 0.0);
    }

    #[test]
    fn neuronwise_variance_follows_active_fan_in() {
        // destination unit with active fan-in 4 -> variance 2/4
        let arch = dense(&[8, 1]);
        let base = build_network(&arch, InitSpec::Kaiming, 0).unwrap();
        let mut m = Mask::zeros(&arch);
        for i in 0..4 {
            m.set(0, i, true);
        }
        let net = base.with_mask(m).unwrap();
        let mut samples = Vec::new();
        for seed in 0..10_000u64 {
            let re = net.reinitialize(Reinit::NeuronwiseSparse, seed);
            samples.push(re.weights(0)[0]);
        }
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        // sd of the sample variance is ~ 0.5*sqrt(2/n) = 0.007
        assert!((var - 0.5).abs() < 0.03, "variance {var}");
    }
}
