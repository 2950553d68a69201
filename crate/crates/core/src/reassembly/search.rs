//! Random search over feasible candidates, ranked by mean NASWOT score over probe batches.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::defaults;
use crate::error::{Error, Result};
use crate::formats::{read_codes, BinaryCodes};
use crate::reassembly::adapter::AdapterKind;
use crate::reassembly::candidate::{AssemblyCandidate, CandidateSpace, Constraints, Rejection};
use crate::reassembly::naswot::score_codes_auto;
use crate::seeding::derive_seed;
use crate::zoo::{Block, Interface, ZooManifest};

/// Draw cap as a multiple of the requested candidate count.
pub const DRAW_CAP_FACTOR: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BatchSpec {
    pub num_batches: usize,
    pub batch_size: usize,
}

impl Default for BatchSpec {
    fn default() -> Self {
        BatchSpec {
            num_batches: defaults::BATCHES,
            batch_size: defaults::BATCH_SIZE,
        }
    }
}

/// Per-node binary codes of a zoo, keyed by `(model, node)`.
#[derive(Debug, Clone, Default)]
pub struct CodeBank {
    probe_count: usize,
    codes: HashMap<(usize, usize), BinaryCodes>,
}

impl CodeBank {
    pub fn new(probe_count: usize) -> Self {
        CodeBank {
            probe_count,
            codes: HashMap::new(),
        }
    }

    /// Reads every `code_file` the manifest references.
    pub fn load(manifest: &ZooManifest) -> Result<Self> {
        let mut bank = CodeBank::new(manifest.probe_count);
        for (i, m) in manifest.models.iter().enumerate() {
            for (n, node) in m.nodes.iter().enumerate() {
                if let Some(rel) = &node.code_ref {
                    bank.insert(i, n, read_codes(&manifest.resolve(rel))?)?;
                }
            }
        }
        Ok(bank)
    }

    pub fn insert(&mut self, model: usize, node: usize, codes: BinaryCodes) -> Result<()> {
        if codes.rows() != self.probe_count {
            return Err(Error::DimensionMismatch(format!(
                "codes for model {model} node {node} have {} rows, probe has {}",
                codes.rows(),
                self.probe_count
            )));
        }
        self.codes.insert((model, node), codes);
        Ok(())
    }

    pub fn probe_count(&self) -> usize {
        self.probe_count
    }

    /// Codes of every node in the block, concatenated column-wise.
    pub fn block_codes(&self, block: &Block) -> Result<BinaryCodes> {
        let parts = (block.first..=block.last)
            .map(|n| {
                self.codes.get(&(block.model_index, n)).ok_or_else(|| {
                    Error::Unscorable(format!("{} node {n} has no code file", block.model_id))
                })
            })
            .collect::<Result<Vec<_>>>()?;
        BinaryCodes::hstack(&parts)
    }

    pub fn candidate_codes(&self, candidate: &AssemblyCandidate) -> Result<BinaryCodes> {
        let parts = candidate
            .blocks
            .iter()
            .map(|b| self.block_codes(b))
            .collect::<Result<Vec<_>>>()?;
        BinaryCodes::hstack(&parts.iter().collect::<Vec<_>>())
    }
}

/// `num_batches` sorted row subsets of size `batch_size`, drawn without replacement.
pub fn probe_batches(probe_count: usize, spec: BatchSpec, seed: u64) -> Result<Vec<Vec<usize>>> {
    if spec.num_batches == 0 || spec.batch_size == 0 {
        return Err(Error::InvalidArgument("batch count and size must be positive".into()));
    }
    if spec.batch_size > probe_count {
        return Err(Error::InvalidArgument(format!(
            "batch size {} exceeds {probe_count} probe rows",
            spec.batch_size
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..spec.num_batches)
        .map(|_| {
            let mut idx = rand::seq::index::sample(&mut rng, probe_count, spec.batch_size).into_vec();
            idx.sort_unstable();
            idx
        })
        .collect())
}

/// The probe batches [`search`] scores every candidate on.
pub fn search_batches(probe_count: usize, spec: BatchSpec, seed: u64) -> Result<Vec<Vec<usize>>> {
    probe_batches(probe_count, spec, derive_seed(seed, 1))
}

/// Mean NASWOT score of the concatenated block codes over the given batches; `-inf`
/// if any batch kernel stays singular after the ridge.
pub fn score_candidate(candidate: &AssemblyCandidate, bank: &CodeBank, batches: &[Vec<usize>]) -> Result<f64> {
    let codes = bank.candidate_codes(candidate)?;
    Ok(score_batches(&codes, batches))
}

pub fn score_batches(codes: &BinaryCodes, batches: &[Vec<usize>]) -> f64 {
    let mut total = 0.0;
    for idx in batches {
        let s: f64 = score_codes_auto(&codes.select_rows(idx));
        if !s.is_finite() {
            return f64::NEG_INFINITY;
        }
        total += s;
    }
    total / batches.len() as f64
}

/// Budget headroom of an emitted candidate; `None` for an unconstrained dimension.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Audit {
    pub param_slack: Option<f64>,
    pub flops_slack: Option<f64>,
}

impl Audit {
    pub fn of(candidate: &AssemblyCandidate, c: &Constraints) -> Self {
        Audit {
            param_slack: c.max_params.map(|m| m - candidate.total_params as f64),
            flops_slack: c.max_flops.map(|m| m - candidate.total_flops),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPlan {
    pub candidate: AssemblyCandidate,
    pub naswot_score: f64,
    pub audit: Audit,
    /// 1-based position in the ranking.
    pub rank: usize,
}

/// Draw accounting: `accepted + duplicates + rejections == draws`.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplerStats {
    pub draws: usize,
    pub accepted: usize,
    pub duplicates: usize,
    pub group: usize,
    pub budget_param: usize,
    pub budget_flops: usize,
}

impl SamplerStats {
    pub fn reject(&mut self, r: Rejection) {
        match r {
            Rejection::Group => self.group += 1,
            Rejection::BudgetParam => self.budget_param += 1,
            Rejection::BudgetFlops => self.budget_flops += 1,
        }
    }

    pub fn rejected(&self) -> usize {
        self.group + self.budget_param + self.budget_flops
    }

    pub fn balanced(&self) -> bool {
        self.accepted + self.duplicates + self.rejected() == self.draws
    }
}

#[derive(Debug, Clone)]
pub struct SearchResult {
    pub plans: Vec<ScoredPlan>,
    pub stats: SamplerStats,
    /// The draw cap was hit before enough distinct feasible candidates were found.
    pub exhausted: bool,
}

/// Score descending with `-inf` last, then fewer parameters, then block ids.
pub fn rank_order(a: &ScoredPlan, b: &ScoredPlan) -> Ordering {
    b.naswot_score
        .total_cmp(&a.naswot_score)
        .then(a.candidate.total_params.cmp(&b.candidate.total_params))
        .then_with(|| a.candidate.block_ids().cmp(&b.candidate.block_ids()))
}

/// Distinct feasible candidates from seeded stage-major draws.
pub fn draw_candidates(
    space: &CandidateSpace,
    constraints: &Constraints,
    num_candidates: usize,
    seed: u64,
) -> (Vec<AssemblyCandidate>, SamplerStats) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cap = num_candidates.saturating_mul(DRAW_CAP_FACTOR);
    let mut stats = SamplerStats::default();
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    while out.len() < num_candidates && stats.draws < cap {
        stats.draws += 1;
        match space.sample(constraints, &mut rng) {
            Ok(c) => {
                if seen.insert(c.key()) {
                    stats.accepted += 1;
                    out.push(c);
                } else {
                    stats.duplicates += 1;
                }
            }
            Err(r) => stats.reject(r),
        }
    }
    (out, stats)
}

/// Scores candidates in parallel and returns them ranked.
pub fn rank_candidates(
    candidates: Vec<AssemblyCandidate>,
    bank: &CodeBank,
    batches: &[Vec<usize>],
    constraints: &Constraints,
) -> Result<Vec<ScoredPlan>> {
    let scores: Vec<f64> = candidates
        .par_iter()
        .map(|c| score_candidate(c, bank, batches))
        .collect::<Result<_>>()?;
    let mut plans: Vec<ScoredPlan> = candidates
        .into_iter()
        .zip(scores)
        .map(|(candidate, naswot_score)| ScoredPlan {
            audit: Audit::of(&candidate, constraints),
            candidate,
            naswot_score,
            rank: 0,
        })
        .collect();
    plans.sort_by(rank_order);
    for (r, p) in plans.iter_mut().enumerate() {
        p.rank = r + 1;
    }
    Ok(plans)
}

/// Random search: draw, dedupe, score on shared probe batches, rank.
pub fn search(
    space: &CandidateSpace,
    bank: &CodeBank,
    constraints: &Constraints,
    num_candidates: usize,
    batch_spec: BatchSpec,
    seed: u64,
) -> Result<SearchResult> {
    let batches = search_batches(bank.probe_count(), batch_spec, seed)?;
    let (candidates, stats) = draw_candidates(space, constraints, num_candidates, derive_seed(seed, 0));
    let exhausted = candidates.len() < num_candidates;
    info!(
        "{} draws: {} accepted, {} duplicate, {} group, {} budget:param, {} budget:flops",
        stats.draws, stats.accepted, stats.duplicates, stats.group, stats.budget_param, stats.budget_flops
    );
    if exhausted {
        warn!(
            "draw cap reached with {} of {num_candidates} feasible candidates",
            candidates.len()
        );
    }
    let plans = rank_candidates(candidates, bank, &batches, constraints)?;
    Ok(SearchResult { plans, stats, exhausted })
}

// ---------------------------------------------------------------------------
// plans.json

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockRecord {
    pub model_id: String,
    /// 1-based stage within the home model.
    pub stage: usize,
    /// 1-based equivalence set.
    pub set: usize,
    /// Inclusive node ordinals.
    pub node_range: [usize; 2],
    pub param_count: u64,
    pub flops: f64,
    pub in_iface: Interface,
    pub out_iface: Interface,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdapterRecord {
    /// Sits between positions `after` and `after + 1` (1-based).
    pub after: usize,
    pub kind: AdapterKind,
    pub resample: String,
    pub c_in: u32,
    pub c_out: u32,
    pub in_iface: Interface,
    pub out_iface: Interface,
    pub param_count: u64,
    pub flops: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanRecord {
    pub rank: usize,
    /// `null` for a singular kernel.
    pub score: Option<f64>,
    pub blocks: Vec<BlockRecord>,
    pub adapters: Vec<AdapterRecord>,
    pub total_params: u64,
    pub total_flops: f64,
    pub audit: Audit,
    /// Set entries of X and Y as `[row, column]`, rows `model·K + stage`.
    pub selection_x: Vec<[usize; 2]>,
    pub selection_y: Vec<[usize; 2]>,
}

impl PlanRecord {
    pub fn from_plan(plan: &ScoredPlan) -> Self {
        let c = &plan.candidate;
        PlanRecord {
            rank: plan.rank,
            score: plan.naswot_score.is_finite().then_some(plan.naswot_score),
            blocks: c
                .blocks
                .iter()
                .zip(&c.sets)
                .map(|(b, &s)| BlockRecord {
                    model_id: b.model_id.clone(),
                    stage: b.stage + 1,
                    set: s + 1,
                    node_range: [b.first, b.last],
                    param_count: b.param_count,
                    flops: b.flops,
                    in_iface: b.in_iface,
                    out_iface: b.out_iface,
                })
                .collect(),
            adapters: c
                .adapters
                .iter()
                .enumerate()
                .map(|(i, a)| AdapterRecord {
                    after: i + 1,
                    kind: a.kind,
                    resample: a.kind.resample().into(),
                    c_in: a.in_iface.channels,
                    c_out: a.out_iface.channels,
                    in_iface: a.in_iface,
                    out_iface: a.out_iface,
                    param_count: a.param_count,
                    flops: a.flops,
                })
                .collect(),
            total_params: c.total_params,
            total_flops: c.total_flops,
            audit: plan.audit,
            selection_x: c.selection.x.iter().map(|&(r, j)| [r, j]).collect(),
            selection_y: c.selection.y.iter().map(|&(r, j)| [r, j]).collect(),
        }
    }
}
