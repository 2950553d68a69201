//! Cost model for the stitching layer inserted between consecutive blocks:
//! norm → 1×1 projection → activation, with a flatten or reshape when layouts differ.

use serde::{Deserialize, Serialize};

use crate::zoo::{Interface, Layout};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AdapterKind {
    #[serde(rename = "cnn->cnn")]
    CnnToCnn,
    #[serde(rename = "cnn->seq")]
    CnnToSeq,
    #[serde(rename = "seq->cnn")]
    SeqToCnn,
    #[serde(rename = "seq->seq")]
    SeqToSeq,
}

impl AdapterKind {
    pub fn between(from: Layout, to: Layout) -> Self {
        match (from, to) {
            (Layout::Spatial, Layout::Spatial) => AdapterKind::CnnToCnn,
            (Layout::Spatial, Layout::Tokens) => AdapterKind::CnnToSeq,
            (Layout::Tokens, Layout::Spatial) => AdapterKind::SeqToCnn,
            (Layout::Tokens, Layout::Tokens) => AdapterKind::SeqToSeq,
        }
    }

    /// Spatial resampling (nearest-neighbour reshape) the adapter declares; parameter-free.
    pub fn resample(self) -> &'static str {
        match self {
            AdapterKind::CnnToCnn => "none",
            AdapterKind::CnnToSeq => "flatten",
            AdapterKind::SeqToCnn => "reshape",
            AdapterKind::SeqToSeq => "none",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StitchAdapter {
    pub kind: AdapterKind,
    pub in_iface: Interface,
    pub out_iface: Interface,
    pub param_count: u64,
    pub flops: f64,
}

/// Adapter from `from` to `to`.
///
/// Parameters: `c_in·c_out + c_out` for the projection with bias plus `2·c_in` norm
/// affine terms; the activation has none. FLOPs: `h·w·c_in·c_out` at the downstream
/// spatial (or `tokens × 1`) size.
pub fn adapter_cost(from: &Interface, to: &Interface) -> StitchAdapter {
    let c_in = u64::from(from.channels);
    let c_out = u64::from(to.channels);
    let positions = f64::from(to.height) * f64::from(to.width);
    StitchAdapter {
        kind: AdapterKind::between(from.layout, to.layout),
        in_iface: *from,
        out_iface: *to,
        param_count: c_in * c_out + c_out + 2 * c_in,
        flops: positions * (c_in * c_out) as f64,
    }
}
