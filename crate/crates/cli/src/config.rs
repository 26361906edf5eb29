//! Experiment configuration files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use sparsenet::netcore::{Architecture, InitSpec, LayerKind, Reinit};
use sparsenet::shuffle::ShuffleMode;
use sparsenet::tasks::TransformTask;
use sparsenet::trainer::{Loss, LrDecay, Optimizer, TrainConfig};

use crate::methods::Method;

/// Densities used when a config does not list any. Fixed constants, not
/// calibrated against any particular baseline.
pub const DEFAULT_DENSITIES: [f64; 4] = [0.05, 0.1, 0.2, 0.5];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub network: NetworkConfig,
    #[serde(default)]
    pub prune: PruneConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<TaskConfig>,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub shuffle: ShuffleConfig,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Parallel cells. Has no effect on any result.
    #[serde(default = "default_workers", skip_serializing)]
    pub workers: usize,
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

fn default_workers() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkConfig {
    pub layer_sizes: Vec<usize>,
    /// All dense when omitted.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layer_kinds: Option<Vec<LayerKind>>,
    #[serde(default)]
    pub init: InitSpec,
}

impl NetworkConfig {
    pub fn architecture(&self) -> sparsenet::Result<Architecture> {
        match &self.layer_kinds {
            Some(kinds) => Architecture::new(self.layer_sizes.clone(), kinds.clone()),
            None => Architecture::dense(&self.layer_sizes),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PruneConfig {
    pub methods: Vec<Method>,
    pub densities: Vec<f64>,
    pub synflow_iterations: usize,
    /// Weight resampling applied after pruning.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reinit: Option<Reinit>,
    pub max_walks: usize,
    pub snip_batch_size: usize,
    /// Also write the ordered walk log of walk-based methods.
    pub write_walks: bool,
}

impl Default for PruneConfig {
    fn default() -> Self {
        PruneConfig {
            methods: vec![Method::Phew, Method::SynflowL2, Method::Random],
            densities: DEFAULT_DENSITIES.to_vec(),
            synflow_iterations: 100,
            reinit: None,
            max_walks: 50_000_000,
            snip_batch_size: 256,
            write_walks: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdxFiles {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskConfig {
    pub image_side: usize,
    pub classes: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub angle_step_deg: f64,
    pub max_shear: f64,
    /// Source images in IDX format; synthetic blobs when omitted.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub idx: Option<IdxFiles>,
}

impl Default for TaskConfig {
    fn default() -> Self {
        let t = TransformTask::default();
        TaskConfig {
            image_side: t.image_side,
            classes: t.classes,
            train_per_class: t.train_per_class,
            test_per_class: t.test_per_class,
            angle_step_deg: t.angle_step_deg,
            max_shear: t.max_shear,
            idx: None,
        }
    }
}

impl TaskConfig {
    pub fn transform_task(&self) -> TransformTask {
        TransformTask {
            image_side: self.image_side,
            classes: self.classes,
            train_per_class: self.train_per_class,
            test_per_class: self.test_per_class,
            angle_step_deg: self.angle_step_deg,
            max_shear: self.max_shear,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: Optimizer,
    pub lr_decay: LrDecay,
    pub loss: Loss,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection { epochs: t.epochs, batch_size: t.batch_size, optimizer: t.optimizer, lr_decay: t.lr_decay, loss: t.loss }
    }
}

impl TrainSection {
    pub fn with_seed(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            optimizer: self.optimizer,
            lr_decay: self.lr_decay.clone(),
            loss: self.loss,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ShuffleConfig {
    pub width_factor: f64,
    pub mode: ShuffleMode,
}

impl Default for ShuffleConfig {
    fn default() -> Self {
        ShuffleConfig { width_factor: 1.0, mode: ShuffleMode::Incremental }
    }
}

/// Config problems; reported with exit code 2.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for ConfigError {}

impl ExperimentConfig {
    /// Parses TOML text. Syntax and schema errors carry line and column.
    pub fn from_toml(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| ConfigError(format!("{origin}: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text, &path.display().to_string())
    }

    /// A config for the given layer sizes with every other field at its default.
    pub fn for_sizes(sizes: &[usize]) -> Self {
        ExperimentConfig {
            network: NetworkConfig { layer_sizes: sizes.to_vec(), layer_kinds: None, init: InitSpec::Kaiming },
            prune: PruneConfig::default(),
            task: None,
            train: TrainSection::default(),
            shuffle: ShuffleConfig::default(),
            seeds: default_seeds(),
            workers: 1,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError(m));
        let arch = self.network.architecture().map_err(|e| ConfigError(format!("network: {e}")))?;
        if self.seeds.is_empty() {
            return bad("seeds: at least one seed is required".into());
        }
        if self.workers == 0 {
            return bad("workers: must be at least 1".into());
        }
        if self.prune.methods.is_empty() {
            return bad("prune.methods: at least one method is required".into());
        }
        if let Some(d) = self.prune.densities.iter().find(|d| !(**d > 0.0 && **d <= 1.0)) {
            return bad(format!("prune.densities: {d} is not in (0, 1]"));
        }
        if self.prune.densities.is_empty() {
            return bad("prune.densities: at least one density is required".into());
        }
        if self.prune.synflow_iterations == 0 {
            return bad("prune.synflow_iterations: must be at least 1".into());
        }
        if self.prune.snip_batch_size == 0 {
            return bad("prune.snip_batch_size: must be at least 1".into());
        }
        if !(0.0..=1.0).contains(&self.shuffle.width_factor) {
            return bad(format!("shuffle.width_factor: {} is not in [0, 1]", self.shuffle.width_factor));
        }
        self.train.with_seed(0).validate().map_err(|e| ConfigError(format!("train: {e}")))?;
        if let Some(task) = &self.task {
            let dim = task.image_side * task.image_side;
            if arch.input_dim() != dim || arch.output_dim() != dim {
                return bad(format!(
                    "task: images have {dim} pixels but the network maps {} inputs to {} outputs",
                    arch.input_dim(),
                    arch.output_dim()
                ));
            }
        }
        if self.task.is_none() && self.prune.methods.iter().any(|m| m.needs_data()) {
            return bad("prune.methods: data-dependent methods need a [task] section".into());
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON form, excluding the worker count.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("serializable config");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// Parses `0,1,2` or `0..3`.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>, ConfigError> {
    let err = || ConfigError(format!("--seeds: cannot parse {text:?}; use a list like 0,1,2 or a range like 0..3"));
    if let Some((a, b)) = text.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse().map_err(|_| err())?, b.trim().parse().map_err(|_| err())?);
        if a >= b {
            return Err(err());
        }
        return Ok((a..b).collect());
    }
    text.split(',').map(|s| s.trim().parse().map_err(|_| err())).collect()
}

pub fn parse_densities(text: &str) -> Result<Vec<f64>, ConfigError> {
    text.split(',')
        .map(|s| s.trim().parse().map_err(|_| ConfigError(format!("--densities: cannot parse {s:?}"))))
        .collect()
}

pub fn parse_methods(text: &str) -> Result<Vec<Method>, ConfigError> {
    text.split(',').map(|s| s.trim().parse().map_err(ConfigError)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
seeds = [0, 1]

[network]
layer_sizes = [144, 100, 100, 144]

[prune]
methods = ["phew", "random"]
densities = [0.1]

[task]
train_per_class = 20

[train]
epochs = 2
optimizer = { kind = "adam", lr = 0.001, beta1 = 0.9, beta2 = 0.999, eps = 1e-8 }
"#;

    #[test]
    fn parses_sample() {
        let cfg = ExperimentConfig::from_toml(SAMPLE, "sample").unwrap();
        assert_eq!(cfg.prune.methods, vec![Method::Phew, Method::Random]);
        assert_eq!(cfg.task.as_ref().unwrap().train_per_class, 20);
        assert_eq!(cfg.task.as_ref().unwrap().test_per_class, 50);
        assert_eq!(cfg.train.epochs, 2);
        assert_eq!(cfg.prune.synflow_iterations, 100);
    }

    #[test]
    fn unknown_key_reports_position() {
        let text = SAMPLE.replace("epochs = 2", "epochs = 2\nepoch = 3");
        let err = ExperimentConfig::from_toml(&text, "sample").unwrap_err().0;
        assert!(err.contains("epoch"), "{err}");
        assert!(err.contains("line"), "{err}");
    }

    #[test]
    fn semantic_errors() {
        let e = ExperimentConfig::from_toml(&SAMPLE.replace("[0.1]", "[1.5]"), "s").unwrap_err().0;
        assert!(e.contains("prune.densities"), "{e}");
        let e = ExperimentConfig::from_toml(&SAMPLE.replace("144]", "100]"), "s").unwrap_err().0;
        assert!(e.contains("task"), "{e}");
        let no_task = SAMPLE.split("[task]").next().unwrap().replace("\"random\"", "\"snip\"");
        let e = ExperimentConfig::from_toml(&no_task, "s").unwrap_err().0;
        assert!(e.contains("data-dependent"), "{e}");
    }

    #[test]
    fn hash_ignores_workers() {
        let mut a = ExperimentConfig::from_toml(SAMPLE, "s").unwrap();
        let h = a.hash();
        a.workers = 4;
        assert_eq!(a.hash(), h);
        a.seeds.push(9);
        assert_ne!(a.hash(), h);
    }

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seeds("0,1, 2").unwrap(), vec![0, 1, 2]);
        assert_eq!(parse_seeds("3..6").unwrap(), vec![3, 4, 5]);
        assert!(parse_seeds("a").is_err());
        assert!(parse_seeds("5..5").is_err());
        assert_eq!(parse_densities("0.1,0.5").unwrap(), vec![0.1, 0.5]);
        assert!(parse_methods("phew,nope").is_err());
    }
}
