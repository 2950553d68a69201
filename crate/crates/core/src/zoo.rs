//! Model-zoo domain types: manifests, path-graph models, blocks and their costs.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::defaults;
use crate::error::{Error, Result};
use crate::formats::{self, CODE_MAGIC, FEATURE_MAGIC};

pub const MANIFEST_VERSION: &str = "dery-zoo/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    Spatial,
    Tokens,
}

/// Shape of the tensor crossing a block boundary. Token layouts use `(tokens, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Interface {
    pub channels: u32,
    pub height: u32,
    pub width: u32,
    pub layout: Layout,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeMeta {
    pub node_id: usize,
    pub param_count: u64,
    /// Multiply-accumulates per probe example.
    pub flops: f64,
    pub out_channels: u32,
    pub out_spatial: (u32, u32),
    pub layout: Layout,
    pub feature_ref: Option<PathBuf>,
    pub code_ref: Option<PathBuf>,
}

impl NodeMeta {
    pub fn out_iface(&self) -> Interface {
        Interface {
            channels: self.out_channels,
            height: self.out_spatial.0,
            width: self.out_spatial.1,
            layout: self.layout,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelGraph {
    pub model_id: String,
    pub nodes: Vec<NodeMeta>,
    pub input_shape: (u32, u32, u32),
}

impl ModelGraph {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn total_params(&self) -> u64 {
        self.nodes.iter().map(|n| n.param_count).sum()
    }

    pub fn total_flops(&self) -> f64 {
        self.nodes.iter().map(|n| n.flops).sum()
    }

    pub fn param_counts(&self) -> Vec<u64> {
        self.nodes.iter().map(|n| n.param_count).collect()
    }

    pub fn input_iface(&self) -> Interface {
        Interface {
            channels: self.input_shape.0,
            height: self.input_shape.1,
            width: self.input_shape.2,
            layout: Layout::Spatial,
        }
    }

    /// Interface entering node `node` (the raw input for node 0).
    pub fn iface_before(&self, node: usize) -> Interface {
        if node == 0 {
            self.input_iface()
        } else {
            self.nodes[node - 1].out_iface()
        }
    }
}

#[derive(Debug, Clone)]
pub struct ZooManifest {
    pub version: String,
    pub probe_count: usize,
    pub models: Vec<ModelGraph>,
    /// Directory that relative file references resolve against.
    pub base_dir: PathBuf,
}

impl PartialEq for ZooManifest {
    fn eq(&self, other: &Self) -> bool {
        self.version == other.version
            && self.probe_count == other.probe_count
            && self.models == other.models
    }
}

impl ZooManifest {
    pub fn resolve(&self, rel: &Path) -> PathBuf {
        if rel.is_absolute() {
            rel.to_path_buf()
        } else {
            self.base_dir.join(rel)
        }
    }

    pub fn model_index(&self, model_id: &str) -> Option<usize> {
        self.models.iter().position(|m| m.model_id == model_id)
    }

    pub fn node_counts(&self) -> Vec<usize> {
        self.models.iter().map(ModelGraph::len).collect()
    }
}

/// A contiguous run of nodes `[first, last]`, the `stage`-th (0-based) of K in its model.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub model_index: usize,
    pub model_id: String,
    pub stage: usize,
    pub first: usize,
    pub last: usize,
    pub param_count: u64,
    pub flops: f64,
    pub in_iface: Interface,
    pub out_iface: Interface,
}

impl Block {
    pub fn new(model: &ModelGraph, model_index: usize, stage: usize, first: usize, last: usize) -> Self {
        let (param_count, flops) = node_range_cost(model, first, last);
        Block {
            model_index,
            model_id: model.model_id.clone(),
            stage,
            first,
            last,
            param_count,
            flops,
            in_iface: model.iface_before(first),
            out_iface: model.nodes[last].out_iface(),
        }
    }

    pub fn len(&self) -> usize {
        self.last + 1 - self.first
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

fn node_range_cost(model: &ModelGraph, first: usize, last: usize) -> (u64, f64) {
    model.nodes[first..=last]
        .iter()
        .fold((0u64, 0.0f64), |(p, f), n| (p + n.param_count, f + n.flops))
}

/// Exact parameter and FLOP sums over the block's node range.
pub fn block_cost(block: &Block) -> (u64, f64) {
    (block.param_count, block.flops)
}

/// Start (inclusive) and end (exclusive) of each block given cut positions.
///
/// A cut is the ordinal of the first node of the next block, so `K-1` cuts split
/// `len` nodes into `K` runs.
pub fn cut_bounds(len: usize, cuts: &[usize]) -> Vec<(usize, usize)> {
    let mut out = Vec::with_capacity(cuts.len() + 1);
    let mut start = 0;
    for &c in cuts {
        out.push((start, c));
        start = c;
    }
    out.push((start, len));
    out
}

/// Blocks for a model given valid cuts (every run nonempty).
pub fn blocks_from_cuts(model: &ModelGraph, model_index: usize, cuts: &[usize]) -> Vec<Block> {
    cut_bounds(model.len(), cuts)
        .into_iter()
        .enumerate()
        .map(|(stage, (s, e))| Block::new(model, model_index, stage, s, e - 1))
        .collect()
}

/// Size bound on one block: `params < (1+eps)·total/K`. A zero-parameter model is unconstrained.
pub fn within_size_bound(block_params: u64, total_params: u64, k: usize, eps: f64) -> bool {
    total_params == 0 || (block_params as f64) < (1.0 + eps) * total_params as f64 / k as f64
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    EmptyBlock { stage: usize },
    Oversize { stage: usize, params: u64, limit: f64 },
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Violation::EmptyBlock { stage } => write!(f, "block {} is empty", stage + 1),
            Violation::Oversize { stage, params, limit } => {
                write!(f, "block {} has {params} params, bound is < {limit}", stage + 1)
            }
        }
    }
}

/// Checks a K-way cut (`K = cuts.len() + 1`) of `model` against the nonempty and size rules.
///
/// Cuts must be strictly increasing and within `0..=len`; otherwise this is an error rather than
/// a violation. All violations are collected.
pub fn validate_partition(model: &ModelGraph, cuts: &[usize], eps: Option<f64>) -> Result<Vec<Violation>> {
    let eps = eps.unwrap_or(defaults::EPS);
    let len = model.len();
    if let Some(&c) = cuts.iter().find(|&&c| c > len) {
        return Err(Error::MalformedCuts {
            model: model.model_id.clone(),
            message: format!("cut {c} out of range 0..={len}"),
        });
    }
    if cuts.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::MalformedCuts {
            model: model.model_id.clone(),
            message: format!("cuts {cuts:?} are not strictly increasing"),
        });
    }
    let k = cuts.len() + 1;
    let total = model.total_params();
    let limit = (1.0 + eps) * total as f64 / k as f64;
    let mut violations = Vec::new();
    for (stage, (s, e)) in cut_bounds(len, cuts).into_iter().enumerate() {
        if s == e {
            violations.push(Violation::EmptyBlock { stage });
            continue;
        }
        let params: u64 = model.nodes[s..e].iter().map(|n| n.param_count).sum();
        if !within_size_bound(params, total, k, eps) {
            violations.push(Violation::Oversize { stage, params, limit });
        }
    }
    Ok(violations)
}

// ---------------------------------------------------------------------------
// manifest file

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestFile {
    version: String,
    probe_count: usize,
    models: Vec<ModelEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelEntry {
    model_id: String,
    input_shape: [u32; 3],
    nodes: Vec<NodeEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeEntry {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    node_id: Option<usize>,
    param_count: u64,
    flops: f64,
    out_channels: u32,
    out_h: u32,
    out_w: u32,
    layout: Layout,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    feature_file: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    code_file: Option<String>,
}

fn node_context(model: &str, node: usize) -> String {
    format!("model {model}, node {node}")
}

fn convert(file: ManifestFile, base_dir: PathBuf) -> Result<ZooManifest> {
    if file.version != MANIFEST_VERSION {
        return Err(Error::consistency(
            "manifest",
            format!("unsupported version {:?}, expected {MANIFEST_VERSION:?}", file.version),
        ));
    }
    if file.probe_count == 0 {
        return Err(Error::consistency("manifest", "probe_count must be positive"));
    }
    if file.models.is_empty() {
        return Err(Error::consistency("manifest", "no models"));
    }
    let mut seen = HashSet::new();
    let mut models = Vec::with_capacity(file.models.len());
    for m in file.models {
        if m.model_id.is_empty() {
            return Err(Error::consistency("manifest", "empty model_id"));
        }
        if !seen.insert(m.model_id.clone()) {
            return Err(Error::consistency(
                format!("model {}", m.model_id),
                "duplicate model_id",
            ));
        }
        if m.nodes.is_empty() {
            return Err(Error::consistency(format!("model {}", m.model_id), "model has no nodes"));
        }
        if m.input_shape.iter().any(|&v| v == 0) {
            return Err(Error::consistency(
                format!("model {}", m.model_id),
                "input_shape entries must be positive",
            ));
        }
        let mut nodes = Vec::with_capacity(m.nodes.len());
        for (ordinal, n) in m.nodes.into_iter().enumerate() {
            let ctx = node_context(&m.model_id, ordinal);
            if let Some(id) = n.node_id {
                if id != ordinal {
                    return Err(Error::consistency(
                        ctx,
                        format!("node_id {id} breaks the path order (expected {ordinal})"),
                    ));
                }
            }
            if !n.flops.is_finite() || n.flops < 0.0 {
                return Err(Error::consistency(ctx, "flops must be finite and non-negative"));
            }
            if n.out_channels == 0 || n.out_h == 0 || n.out_w == 0 {
                return Err(Error::consistency(ctx, "output channels and spatial dims must be positive"));
            }
            nodes.push(NodeMeta {
                node_id: ordinal,
                param_count: n.param_count,
                flops: n.flops,
                out_channels: n.out_channels,
                out_spatial: (n.out_h, n.out_w),
                layout: n.layout,
                feature_ref: n.feature_file.map(PathBuf::from),
                code_ref: n.code_file.map(PathBuf::from),
            });
        }
        models.push(ModelGraph {
            model_id: m.model_id,
            nodes,
            input_shape: (m.input_shape[0], m.input_shape[1], m.input_shape[2]),
        });
    }
    Ok(ZooManifest {
        version: file.version,
        probe_count: file.probe_count,
        models,
        base_dir,
    })
}

fn check_refs(manifest: &ZooManifest) -> Result<()> {
    for m in &manifest.models {
        for n in &m.nodes {
            let refs = [(&n.feature_ref, FEATURE_MAGIC), (&n.code_ref, CODE_MAGIC)];
            for (r, magic) in refs {
                let Some(rel) = r else { continue };
                let path = manifest.resolve(rel);
                let header = formats::read_header(&path, magic).map_err(|e| {
                    Error::consistency(node_context(&m.model_id, n.node_id), e.to_string())
                })?;
                if header.rows != manifest.probe_count {
                    return Err(Error::consistency(
                        node_context(&m.model_id, n.node_id),
                        format!(
                            "{} has {} rows but probe_count is {}",
                            path.display(),
                            header.rows,
                            manifest.probe_count
                        ),
                    ));
                }
            }
        }
    }
    Ok(())
}

/// Parses a manifest from JSON text; relative references resolve against `base_dir`.
/// Referenced matrix files are header-checked.
pub fn parse_manifest(text: &str, base_dir: &Path, origin: &Path) -> Result<ZooManifest> {
    let file: ManifestFile = serde_json::from_str(text).map_err(|e| Error::Parse {
        path: origin.to_path_buf(),
        message: e.to_string(),
    })?;
    let manifest = convert(file, base_dir.to_path_buf())?;
    check_refs(&manifest)?;
    Ok(manifest)
}

pub fn load_manifest(path: &Path) -> Result<ZooManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    parse_manifest(&text, &base, path)
}

pub fn manifest_to_json(manifest: &ZooManifest) -> Result<String> {
    let file = ManifestFile {
        version: manifest.version.clone(),
        probe_count: manifest.probe_count,
        models: manifest
            .models
            .iter()
            .map(|m| ModelEntry {
                model_id: m.model_id.clone(),
                input_shape: [m.input_shape.0, m.input_shape.1, m.input_shape.2],
                nodes: m
                    .nodes
                    .iter()
                    .map(|n| NodeEntry {
                        node_id: Some(n.node_id),
                        param_count: n.param_count,
                        flops: n.flops,
                        out_channels: n.out_channels,
                        out_h: n.out_spatial.0,
                        out_w: n.out_spatial.1,
                        layout: n.layout,
                        feature_file: n.feature_ref.as_ref().map(|p| path_string(p)),
                        code_file: n.code_ref.as_ref().map(|p| path_string(p)),
                    })
                    .collect(),
            })
            .collect(),
    };
    let mut s = serde_json::to_string_pretty(&file)?;
    s.push('\n');
    Ok(s)
}

fn path_string(p: &Path) -> String {
    p.to_string_lossy().replace('\\', "/")
}

pub fn save_manifest(manifest: &ZooManifest, path: &Path) -> Result<()> {
    std::fs::write(path, manifest_to_json(manifest)?).map_err(|e| Error::io(path, e))
}


#[cfg(test)]
pub(crate) use tests::uniform_model;
