//! Pruning methods selectable from the command line.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sparsenet::netcore::SparseNet;
use sparsenet::rng::derive_seed;
use sparsenet::scores::{prune_by_score, PruneSchedule, Scorer};
use sparsenet::tasks::Dataset;
use sparsenet::walks::{phew_prune, PhewConfig, WalkBias, WalkBudget, WalkTraceLog};

use crate::config::PruneConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Method {
    Phew,
    PhewUniform,
    PhewInverse,
    /// Walks that conserve whole convolution kernels.
    PhewKernel,
    Synflow,
    SynflowL2,
    Snip,
    Magnitude,
    Random,
}

pub const ALL_METHODS: [Method; 9] = [
    Method::Phew,
    Method::PhewUniform,
    Method::PhewInverse,
    Method::PhewKernel,
    Method::Synflow,
    Method::SynflowL2,
    Method::Snip,
    Method::Magnitude,
    Method::Random,
];

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Phew => "phew",
            Method::PhewUniform => "phew-uniform",
            Method::PhewInverse => "phew-inverse",
            Method::PhewKernel => "phew-kernel",
            Method::Synflow => "synflow",
            Method::SynflowL2 => "synflow-l2",
            Method::Snip => "snip",
            Method::Magnitude => "magnitude",
            Method::Random => "random",
        }
    }

    pub fn needs_data(self) -> bool {
        self == Method::Snip
    }

    fn walk_config(self, max_walks: usize) -> Option<PhewConfig> {
        let (bias, conserve_kernels) = match self {
            Method::Phew => (WalkBias::WeightBiased, false),
            Method::PhewUniform => (WalkBias::Uniform, false),
            Method::PhewInverse => (WalkBias::InverseWeightBiased, false),
            Method::PhewKernel => (WalkBias::WeightBiased, true),
            _ => return None,
        };
        Some(PhewConfig { bias, conserve_kernels, max_walks })
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ALL_METHODS.iter().copied().find(|m| m.name() == s).ok_or_else(|| {
            let names: Vec<_> = ALL_METHODS.iter().map(|m| m.name()).collect();
            format!("unknown method {s:?}; expected one of {}", names.join(", "))
        })
    }
}

impl TryFrom<String> for Method {
    type Error = String;

    fn try_from(s: String) -> Result<Self, Self::Error> {
        s.parse()
    }
}

impl From<Method> for String {
    fn from(m: Method) -> String {
        m.name().to_string()
    }
}

pub struct Pruned {
    pub net: SparseNet,
    pub budget: Option<WalkBudget>,
    pub walks: Option<WalkTraceLog>,
}

/// Seed of a method's own randomness within a cell.
pub fn method_seed(seed: u64, method: Method, density: f64) -> u64 {
    derive_seed(seed, &format!("{method}/{density}"))
}

/// Prunes `net` to `density`, then applies the configured reinitialization.
pub fn prune(
    net: &SparseNet,
    method: Method,
    density: f64,
    cfg: &PruneConfig,
    data: Option<&Dataset>,
    seed: u64,
) -> anyhow::Result<Pruned> {
    let own = method_seed(seed, method, density);
    let schedule = PruneSchedule { iterations: cfg.synflow_iterations };
    let mut out = if let Some(walk) = method.walk_config(cfg.max_walks) {
        let (net, budget, walks) = phew_prune(net, density, &walk, own)?;
        Pruned { net, budget: Some(budget), walks: Some(walks) }
    } else {
        let scorer = match method {
            Method::Synflow => Scorer::SynFlow,
            Method::SynflowL2 => Scorer::SynFlowL2,
            Method::Magnitude => Scorer::Magnitude,
            Method::Random => Scorer::Random { seed: own },
            Method::Snip => Scorer::Snip {
                data: data.ok_or_else(|| anyhow::anyhow!("snip needs training data"))?,
                batch_size: cfg.snip_batch_size,
                loss: sparsenet::trainer::Loss::Mse,
            },
            _ => unreachable!("walk methods handled above"),
        };
        Pruned { net: prune_by_score(net, scorer, schedule, density)?, budget: None, walks: None }
    };
    if let Some(scheme) = cfg.reinit {
        out.net = out.net.reinitialize(scheme, derive_seed(own, "reinit"));
    }
    Ok(out)
}
