//! Versioned JSON document for architectures and masked networks.
//!
//! Masks are run-length encoded per layer, starting with a run of zeros
//! (possibly empty) and alternating. Weights are 16-digit lowercase hex
//! renderings of the IEEE-754 bit pattern, so round trips are bit-exact.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Architecture, InitSpec, LayerKind, Mask, SparseNet};
use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NetDocument {
    version: u32,
    layer_sizes: Vec<usize>,
    layer_kinds: Vec<LayerKind>,
    init: InitSpec,
    seed: u64,
    mask: Vec<Vec<usize>>,
    weights: Vec<Vec<String>>,
}

/// Run-length encodes a bit vector: zeros, ones, zeros, ...
pub fn rle_encode(bits: &[bool]) -> Vec<usize> {
    let mut runs = Vec::new();
    let mut current = false;
    let mut len = 0;
    for &b in bits {
        if b == current {
            len += 1;
        } else {
            runs.push(len);
            current = b;
            len = 1;
        }
    }
    runs.push(len);
    runs
}

pub fn rle_decode(runs: &[usize]) -> Vec<bool> {
    let mut out = Vec::with_capacity(runs.iter().sum());
    for (i, &r) in runs.iter().enumerate() {
        out.extend(std::iter::repeat_n(i % 2 == 1, r));
    }
    out
}

pub fn encode_f64(values: &[f64]) -> Vec<String> {
    values.iter().map(|v| hex::encode(v.to_bits().to_be_bytes())).collect()
}

pub fn decode_f64(values: &[String]) -> Result<Vec<f64>> {
    values
        .iter()
        .map(|s| {
            let mut buf = [0u8; 8];
            hex::decode_to_slice(s, &mut buf).map_err(|e| Error::Format {
                offset: 0,
                message: format!("bad hex float {s:?}: {e}"),
            })?;
            Ok(f64::from_bits(u64::from_be_bytes(buf)))
        })
        .collect()
}

pub fn net_to_json(net: &SparseNet) -> String {
    let arch = net.arch();
    let doc = NetDocument {
        version: FORMAT_VERSION,
        layer_sizes: arch.layer_sizes().to_vec(),
        layer_kinds: arch.layer_kinds().to_vec(),
        init: net.init(),
        seed: net.seed(),
        mask: net.mask().layers().iter().map(|l| rle_encode(l)).collect(),
        weights: net.all_weights().iter().map(|w| encode_f64(w)).collect(),
    };
    serde_json::to_string_pretty(&doc).expect("serializable document")
}

pub fn net_from_json(text: &str) -> Result<SparseNet> {
    let doc: NetDocument = serde_json::from_str(text)?;
    if doc.version != FORMAT_VERSION {
        return Err(Error::Format {
            offset: 0,
            message: format!("unsupported document version {}", doc.version),
        });
    }
    let arch = Architecture::new(doc.layer_sizes, doc.layer_kinds)?;
    let mask = Mask::from_layers(doc.mask.iter().map(|r| rle_decode(r)).collect());
    let weights = doc.weights.iter().map(|w| decode_f64(w)).collect::<Result<Vec<_>>>()?;
    SparseNet::from_parts(arch, doc.init, weights, mask, doc.seed)
}

pub fn write_net(path: &Path, net: &SparseNet) -> Result<()> {
    std::fs::write(path, net_to_json(net)).map_err(|e| Error::io(path, e))
}

pub fn read_net(path: &Path) -> Result<SparseNet> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    net_from_json(&text)
}
