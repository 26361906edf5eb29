//! Pruning sparse networks at initialization.
//!
//! The crate builds masked multilayer networks, prunes them with biased
//! random walks ([`walks`]) or saliency scores ([`scores`]), measures the
//! resulting structure ([`pathmetrics`]) and trains them ([`trainer`]) on
//! small synthetic tasks ([`tasks`]).
//!
//! ```
//! use sparsenet::netcore::{build_network, Architecture, InitSpec};
//! use sparsenet::walks::{phew_prune, PhewConfig};
//!
//! let arch = Architecture::dense(&[8, 32, 32, 4]).unwrap();
//! let net = build_network(&arch, InitSpec::Kaiming, 7).unwrap();
//! let (pruned, budget, _) = phew_prune(&net, 0.2, &PhewConfig::default(), 7).unwrap();
//! assert!(pruned.density() >= 0.2);
//! assert!(budget.walk_count > 0);
//! ```

pub mod error;
pub mod lemmas;
pub mod netcore;
pub mod pathmetrics;
pub mod rng;
pub mod scores;
pub mod shuffle;
pub mod tasks;
pub mod trainer;
pub mod walks;

pub use error::{Error, Result};

#[cfg(doctest)]
pub mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/networks.md")]
    pub mod networks {}
    #[doc = include_str!("../../../book/src/walks.md")]
    pub mod walks {}
    #[doc = include_str!("../../../book/src/scores.md")]
    pub mod scores {}
    #[doc = include_str!("../../../book/src/paths.md")]
    pub mod paths {}
    #[doc = include_str!("../../../book/src/training.md")]
    pub mod training {}
}
