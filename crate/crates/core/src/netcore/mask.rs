use serde::{Deserialize, Serialize};

use super::Architecture;

/// Binary keep/prune mask, one boolean per parameter, laid out like the
/// weights of an [`Architecture`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Mask {
    layers: Vec<Vec<bool>>,
}

impl Mask {
    pub fn filled(arch: &Architecture, value: bool) -> Self {
        let layers = (0..arch.parametrized_layer_count())
            .map(|l| vec![value; arch.layer_len(l)])
            .collect();
        Mask { layers }
    }

    pub fn ones(arch: &Architecture) -> Self {
        Mask::filled(arch, true)
    }

    pub fn zeros(arch: &Architecture) -> Self {
        Mask::filled(arch, false)
    }

    pub fn from_layers(layers: Vec<Vec<bool>>) -> Self {
        Mask { layers }
    }

    pub fn layers(&self) -> &[Vec<bool>] {
        &self.layers
    }

    pub fn layer(&self, layer: usize) -> &[bool] {
        &self.layers[layer]
    }

    pub fn layer_mut(&mut self, layer: usize) -> &mut [bool] {
        &mut self.layers[layer]
    }

    pub fn get(&self, layer: usize, index: usize) -> bool {
        self.layers[layer][index]
    }

    /// Sets an entry, returning whether it was newly activated.
    pub fn activate(&mut self, layer: usize, index: usize) -> bool {
        !std::mem::replace(&mut self.layers[layer][index], true)
    }

    pub fn set(&mut self, layer: usize, index: usize, value: bool) {
        self.layers[layer][index] = value;
    }

    pub fn active_count(&self) -> usize {
        self.layers.iter().map(|l| layer_active(l)).sum()
    }

    pub fn layer_active_counts(&self) -> Vec<usize> {
        self.layers.iter().map(|l| layer_active(l)).collect()
    }

    pub fn total_len(&self) -> usize {
        self.layers.iter().map(Vec::len).sum()
    }

    pub fn matches(&self, arch: &Architecture) -> bool {
        self.layers.len() == arch.parametrized_layer_count()
            && self.layers.iter().enumerate().all(|(l, v)| v.len() == arch.layer_len(l))
    }

    /// Iterates `(layer, index)` of active entries in global flat order.
    pub fn active_entries(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(l, v)| v.iter().enumerate().filter(|(_, &b)| b).map(move |(i, _)| (l, i)))
    }
}

fn layer_active(layer: &[bool]) -> usize {
    layer.iter().filter(|&&b| b).count()
}
