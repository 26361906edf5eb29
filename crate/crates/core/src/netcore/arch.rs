use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Kind of a parametrized layer.
///
/// Convolutional layers are modelled on the channel graph only: every
/// (input channel, output channel) pair is one edge carrying a
/// `kernel_h x kernel_w` kernel. Spatial feature maps are not represented.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerKind {
    Dense,
    ConvChannel { kernel_h: usize, kernel_w: usize },
}

impl LayerKind {
    pub fn kernel_area(&self) -> usize {
        match *self {
            LayerKind::Dense => 1,
            LayerKind::ConvChannel { kernel_h, kernel_w } => kernel_h * kernel_w,
        }
    }

    pub fn is_dense(&self) -> bool {
        matches!(self, LayerKind::Dense)
    }
}

/// Layer widths and kinds of an unpruned network.
///
/// `layer_sizes[0]` is the input dimension and the last entry the output
/// dimension. Parametrized layer `l` (0-based) connects unit layer `l` to
/// unit layer `l + 1`; its entries are stored destination-major:
/// `(dst * n_src + src) * kernel_area + k`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    layer_sizes: Vec<usize>,
    layer_kinds: Vec<LayerKind>,
}

impl Architecture {
    pub fn new(layer_sizes: Vec<usize>, layer_kinds: Vec<LayerKind>) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::InvalidArchitecture(format!(
                "need at least an input and an output layer, got {} sizes",
                layer_sizes.len()
            )));
        }
        if let Some(i) = layer_sizes.iter().position(|&n| n == 0) {
            return Err(Error::InvalidArchitecture(format!("layer {i} has zero units")));
        }
        if layer_kinds.len() != layer_sizes.len() - 1 {
            return Err(Error::InvalidArchitecture(format!(
                "{} layer sizes need {} layer kinds, got {}",
                layer_sizes.len(),
                layer_sizes.len() - 1,
                layer_kinds.len()
            )));
        }
        if let Some(i) = layer_kinds.iter().position(|k| k.kernel_area() == 0) {
            return Err(Error::InvalidArchitecture(format!("layer {i} has an empty kernel")));
        }
        Ok(Architecture { layer_sizes, layer_kinds })
    }

    /// All-dense architecture.
    pub fn dense(layer_sizes: &[usize]) -> Result<Self> {
        let kinds = vec![LayerKind::Dense; layer_sizes.len().saturating_sub(1)];
        Architecture::new(layer_sizes.to_vec(), kinds)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn layer_kinds(&self) -> &[LayerKind] {
        &self.layer_kinds
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    /// Number of weight layers, output layer included.
    pub fn parametrized_layer_count(&self) -> usize {
        self.layer_kinds.len()
    }

    pub fn hidden_layer_count(&self) -> usize {
        self.layer_sizes.len() - 2
    }

    pub fn is_dense(&self) -> bool {
        self.layer_kinds.iter().all(LayerKind::is_dense)
    }

    pub fn first_conv_layer(&self) -> Option<usize> {
        self.layer_kinds.iter().position(|k| !k.is_dense())
    }

    pub fn kernel_area(&self, layer: usize) -> usize {
        self.layer_kinds[layer].kernel_area()
    }

    /// (source width, destination width) of a parametrized layer.
    pub fn layer_shape(&self, layer: usize) -> (usize, usize) {
        (self.layer_sizes[layer], self.layer_sizes[layer + 1])
    }

    /// Number of scalar parameters in a parametrized layer.
    pub fn layer_len(&self, layer: usize) -> usize {
        let (src, dst) = self.layer_shape(layer);
        src * dst * self.kernel_area(layer)
    }

    /// Total parameter count `M`.
    pub fn total_params(&self) -> usize {
        (0..self.parametrized_layer_count()).map(|l| self.layer_len(l)).sum()
    }

    /// Offset of a layer's first entry in the global flat parameter order.
    pub fn layer_offset(&self, layer: usize) -> usize {
        (0..layer).map(|l| self.layer_len(l)).sum()
    }

    /// Local index of entry `k` of the edge `src -> dst` in `layer`.
    #[inline]
    pub fn entry_index(&self, layer: usize, src: usize, dst: usize, k: usize) -> usize {
        let (n_src, _) = self.layer_shape(layer);
        (dst * n_src + src) * self.kernel_area(layer) + k
    }

    /// Inverse of [`Architecture::entry_index`]: `(src, dst, k)`.
    #[inline]
    pub fn entry_coords(&self, layer: usize, index: usize) -> (usize, usize, usize) {
        let area = self.kernel_area(layer);
        let (n_src, _) = self.layer_shape(layer);
        let edge = index / area;
        (edge % n_src, edge / n_src, index % area)
    }
}

/// Smallest density at which a path-conserving method keeps every layer
/// populated: one edge per parametrized layer.
pub fn min_density(arch: &Architecture) -> f64 {
    arch.parametrized_layer_count() as f64 / arch.total_params() as f64
}

/// Number of active parameters for a target density, `ceil(density * M)`.
///
/// A relative slack of 1e-9 absorbs rounding in `density * M`, so that
/// `k as f64 / M as f64` maps back to exactly `k`.
pub fn target_count(density: f64, total: usize) -> usize {
    let x = density * total as f64;
    let c = (x - 1e-9 * x.abs().max(1.0)).ceil();
    (c.max(0.0) as usize).min(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes() {
        assert!(Architecture::dense(&[3]).is_err());
        assert!(Architecture::dense(&[3, 0, 2]).is_err());
        assert!(Architecture::new(vec![2, 2], vec![]).is_err());
        assert!(Architecture::new(
            vec![2, 2],
            vec![LayerKind::ConvChannel { kernel_h: 0, kernel_w: 3 }]
        )
        .is_err());
    }

    #[test]
    fn parameter_counts() {
        let a = Architecture::dense(&[4, 8, 8, 4]).unwrap();
        assert_eq!(a.total_params(), 128);
        assert_eq!(a.parametrized_layer_count(), 3);
        assert_eq!(a.hidden_layer_count(), 2);
        assert_eq!(a.layer_offset(2), 96);

        let c = Architecture::new(
            vec![3, 4, 2],
            vec![LayerKind::ConvChannel { kernel_h: 3, kernel_w: 3 }, LayerKind::Dense],
        )
        .unwrap();
        assert_eq!(c.total_params(), 3 * 4 * 9 + 8);
    }

    #[test]
    fn minimum_density_values() {
        assert_eq!(min_density(&Architecture::dense(&[2, 4, 2]).unwrap()), 0.125);
        assert_eq!(min_density(&Architecture::dense(&[1, 1, 1]).unwrap()), 1.0);
        assert_eq!(min_density(&Architecture::dense(&[4, 8, 8, 4]).unwrap()), 3.0 / 128.0);
    }

    #[test]
    fn entry_index_round_trips() {
        let c = Architecture::new(
            vec![3, 4],
            vec![LayerKind::ConvChannel { kernel_h: 2, kernel_w: 3 }],
        )
        .unwrap();
        for i in 0..c.layer_len(0) {
            let (s, d, k) = c.entry_coords(0, i);
            assert_eq!(c.entry_index(0, s, d, k), i);
        }
    }

    #[test]
    fn target_count_is_exact_on_integer_ratios() {
        for total in [2usize, 16, 128, 10240] {
            for k in 0..=total.min(300) {
                assert_eq!(target_count(k as f64 / total as f64, total), k);
            }
        }
        assert_eq!(target_count(0.1, 10240), 1024);
        assert_eq!(target_count(0.2, 7), 2);
    }
}
