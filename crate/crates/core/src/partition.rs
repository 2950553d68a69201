//! Joint block partition and equivalence-set clustering over a model zoo.
//!
//! Every model is cut into K contiguous blocks and every block is assigned to one of K
//! equivalence sets, each represented by an anchor block drawn from its members. The
//! objective is the summed functional similarity of each block to its set's anchor:
//!
//! ```text
//! J = Σ_i Σ_k S(B_i^k, anchor(set(i, k)))
//! ```
//!
//! Optimization alternates Kernighan–Lin style single-node moves across block
//! boundaries, anchor re-selection, and nearest-anchor reassignment. Each step is an
//! argmax over a candidate set containing the incumbent, so `J` never decreases within
//! a restart.

use std::cmp::Ordering;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::defaults;
use crate::error::{Error, Result};
use crate::numeric::Real;
use crate::seeding::derive_seed;
use crate::similarity::functional::{span_similarity, Span};
use crate::similarity::SimilarityTable;
use crate::zoo::{cut_bounds, validate_partition, within_size_bound, Block, ZooManifest};

/// Rejection-sampling attempts before falling back to the most balanced cut.
pub const INIT_ATTEMPTS: usize = 1000;

/// Reference to block `stage` (0-based) of model `model`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BlockRef {
    pub model: usize,
    pub stage: usize,
}

const RANDOM_ASSIGNMENT_ATTEMPTS: usize = 1000;

/// Block-to-set assignment; `sets[i][k]` is the set of block `k` of model `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    k: usize,
    sets: Vec<Vec<usize>>,
}

impl Assignment {
    /// Block `k` of every model starts in set `k`.
    pub fn stage_aligned(num_models: usize, k: usize) -> Self {
        Assignment {
            k,
            sets: vec![(0..k).collect(); num_models],
        }
    }

    /// Uniform random set per block, redrawn until every set is nonempty. Falls back
    /// to the stage-aligned assignment if no draw succeeds.
    pub fn random(num_models: usize, k: usize, rng: &mut impl RngCore) -> Self {
        for _ in 0..RANDOM_ASSIGNMENT_ATTEMPTS {
            let sets: Vec<Vec<usize>> = (0..num_models)
                .map(|_| (0..k).map(|_| rng.random_range(0..k)).collect())
                .collect();
            let mut seen = vec![false; k];
            sets.iter().flatten().for_each(|&j| seen[j] = true);
            if seen.iter().all(|&x| x) {
                return Assignment { k, sets };
            }
        }
        Self::stage_aligned(num_models, k)
    }

    pub fn from_sets(k: usize, sets: Vec<Vec<usize>>) -> Result<Self> {
        for row in &sets {
            if row.len() != k || row.iter().any(|&j| j >= k) {
                return Err(Error::InvalidArgument(format!(
                    "assignment row {row:?} is not K={k} set indices"
                )));
            }
        }
        Ok(Assignment { k, sets })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn set_of(&self, b: BlockRef) -> usize {
        self.sets[b.model][b.stage]
    }

    pub fn sets(&self) -> &[Vec<usize>] {
        &self.sets
    }

    pub fn members(&self, set: usize) -> Vec<BlockRef> {
        let mut out = Vec::new();
        for (model, row) in self.sets.iter().enumerate() {
            for (stage, &j) in row.iter().enumerate() {
                if j == set {
                    out.push(BlockRef { model, stage });
                }
            }
        }
        out
    }

    /// Dense 0/1 matrix with one row per `(model, stage)` and one column per set.
    pub fn to_matrix(&self) -> Vec<Vec<u8>> {
        let mut rows = Vec::new();
        for row in &self.sets {
            for &j in row {
                let mut r = vec![0u8; self.k];
                r[j] = 1;
                rows.push(r);
            }
        }
        rows
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ZooPartition<T> {
    /// Per model, K-1 cut ordinals; a cut is the first node of the next block.
    pub cuts: Vec<Vec<usize>>,
    pub assignment: Assignment,
    /// Anchor block of each set.
    pub anchors: Vec<BlockRef>,
    pub objective: T,
}

impl<T: Real> ZooPartition<T> {
    pub fn k(&self) -> usize {
        self.assignment.k
    }

    pub fn num_models(&self) -> usize {
        self.cuts.len()
    }
}

/// Seed of restart `r`, independent of the order restarts run in.
pub fn restart_seed(base: u64, r: usize) -> u64 {
    derive_seed(base, r as u64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizeOptions {
    pub max_iters: usize,
    pub tol: f64,
    pub restarts: usize,
    pub seed: u64,
}

impl Default for OptimizeOptions {
    fn default() -> Self {
        OptimizeOptions {
            max_iters: defaults::MAX_ITERS,
            tol: defaults::TOL,
            restarts: defaults::RESTARTS,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RestartSummary<T> {
    pub restart: usize,
    /// `None` when the restart hit an empty equivalence set.
    pub objective: Option<T>,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after initialization and after every iteration.
    pub trace: Vec<T>,
    /// Sub-steps where the objective dropped by more than `1e-9`.
    pub monotonicity_violations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizeReport<T> {
    pub best: ZooPartition<T>,
    pub best_restart: usize,
    pub restarts: Vec<RestartSummary<T>>,
}

impl<T: Real> OptimizeReport<T> {
    pub fn degenerate_restarts(&self) -> usize {
        self.restarts.iter().filter(|r| r.objective.is_none()).count()
    }

    pub fn monotonicity_violations(&self) -> usize {
        self.restarts.iter().map(|r| r.monotonicity_violations).sum()
    }
}

/// Everything the partition steps need: the similarity table, per-node parameter
/// counts, K and the size coefficient.
#[derive(Debug, Clone)]
pub struct PartitionProblem<'a, T> {
    table: &'a SimilarityTable<T>,
    model_ids: Vec<String>,
    params: Vec<Vec<u64>>,
    totals: Vec<u64>,
    k: usize,
    eps: f64,
}

impl<'a, T: Real> PartitionProblem<'a, T> {
    /// Fails if a model has fewer than K nodes or admits no cut within the size bound.
    pub fn new(table: &'a SimilarityTable<T>, manifest: &ZooManifest, k: usize, eps: f64) -> Result<Self> {
        Self::from_parts(
            table,
            manifest.models.iter().map(|m| m.model_id.clone()).collect(),
            manifest.models.iter().map(|m| m.param_counts()).collect(),
            k,
            eps,
        )
    }

    pub fn from_parts(
        table: &'a SimilarityTable<T>,
        model_ids: Vec<String>,
        params: Vec<Vec<u64>>,
        k: usize,
        eps: f64,
    ) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidArgument("K must be positive".into()));
        }
        if !(eps >= 0.0) {
            return Err(Error::InvalidArgument(format!("eps {eps} must be non-negative")));
        }
        if model_ids.len() != params.len() || table.num_models() != params.len() {
            return Err(Error::consistency(
                "partition",
                "similarity table and manifest disagree on the number of models",
            ));
        }
        for (i, p) in params.iter().enumerate() {
            if table.len(i) != p.len() {
                return Err(Error::consistency(
                    format!("model {}", model_ids[i]),
                    format!("table has {} nodes, manifest has {}", table.len(i), p.len()),
                ));
            }
            if p.len() < k {
                return Err(Error::TooFewNodes {
                    model: model_ids[i].clone(),
                    nodes: p.len(),
                    k,
                });
            }
        }
        let totals = params.iter().map(|p| p.iter().sum()).collect();
        let problem = PartitionProblem {
            table,
            model_ids,
            params,
            totals,
            k,
            eps,
        };
        for i in 0..problem.num_models() {
            if problem.balanced_cuts(i).is_none() {
                return Err(Error::InfeasibleSizeBound {
                    model: problem.model_ids[i].clone(),
                    k,
                    eps,
                });
            }
        }
        Ok(problem)
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn num_models(&self) -> usize {
        self.params.len()
    }

    pub fn model_ids(&self) -> &[String] {
        &self.model_ids
    }

    pub fn model_len(&self, model: usize) -> usize {
        self.params[model].len()
    }

    pub fn table(&self) -> &SimilarityTable<T> {
        self.table
    }

    fn run_params(&self, model: usize, start: usize, end: usize) -> u64 {
        self.params[model][start..end].iter().sum()
    }

    fn run_ok(&self, model: usize, start: usize, end: usize) -> bool {
        end > start && within_size_bound(self.run_params(model, start, end), self.totals[model], self.k, self.eps)
    }

    /// True when the K-1 cuts give nonempty blocks that all satisfy the size bound.
    pub fn cuts_feasible(&self, model: usize, cuts: &[usize]) -> bool {
        let len = self.model_len(model);
        cuts.len() + 1 == self.k
            && cuts.windows(2).all(|w| w[0] < w[1])
            && cuts.iter().all(|&c| c > 0 && c < len)
            && cut_bounds(len, cuts)
                .into_iter()
                .all(|(s, e)| self.run_ok(model, s, e))
    }

    /// The cut minimizing the largest block's parameter count, if it satisfies the bound.
    pub fn balanced_cuts(&self, model: usize) -> Option<Vec<usize>> {
        balanced_cuts(&self.params[model], self.k, self.eps)
    }

    /// Every feasible K-1 cut set of one model, in lexicographic order.
    pub fn feasible_cut_sets(&self, model: usize) -> Vec<Vec<usize>> {
        let len = self.model_len(model);
        let mut out = Vec::new();
        let mut cur = Vec::with_capacity(self.k);
        self.extend_cuts(model, len, 0, &mut cur, &mut out);
        out
    }

    fn extend_cuts(&self, model: usize, len: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        let remaining = self.k - 1 - cur.len();
        if remaining == 0 {
            if self.run_ok(model, start, len) {
                out.push(cur.clone());
            }
            return;
        }
        for c in (start + 1)..=(len - remaining) {
            if !self.run_ok(model, start, c) {
                continue;
            }
            cur.push(c);
            self.extend_cuts(model, len, c, cur, out);
            cur.pop();
        }
    }

    /// Uniform draw over feasible cut sets by rejection, falling back to [`Self::balanced_cuts`].
    pub fn random_cuts(&self, model: usize, rng: &mut impl RngCore) -> Vec<usize> {
        let len = self.model_len(model);
        if self.k > 1 {
            for _ in 0..INIT_ATTEMPTS {
                let mut cuts: Vec<usize> = rand::seq::index::sample(rng, len - 1, self.k - 1)
                    .into_iter()
                    .map(|c| c + 1)
                    .collect();
                cuts.sort_unstable();
                if self.cuts_feasible(model, &cuts) {
                    return cuts;
                }
            }
        }
        self.balanced_cuts(model).expect("feasibility checked at construction")
    }

    pub fn span_of(&self, cuts: &[Vec<usize>], b: BlockRef) -> Span {
        let cs = &cuts[b.model];
        let first = if b.stage == 0 { 0 } else { cs[b.stage - 1] };
        let end = if b.stage + 1 == self.k { self.model_len(b.model) } else { cs[b.stage] };
        (b.model, first, end - 1)
    }

    /// Functional similarity between two spans; both must lie inside the table.
    pub fn similarity(&self, a: Span, b: Span) -> T {
        span_similarity(self.table, a, b).expect("spans lie inside the validated table")
    }

    fn block_refs(&self) -> impl Iterator<Item = BlockRef> + '_ {
        let k = self.k;
        (0..self.num_models()).flat_map(move |model| (0..k).map(move |stage| BlockRef { model, stage }))
    }

    fn objective_parts(&self, cuts: &[Vec<usize>], assignment: &Assignment, anchors: &[BlockRef]) -> T {
        let anchor_spans: Vec<Span> = anchors.iter().map(|&a| self.span_of(cuts, a)).collect();
        let mut total = T::zero();
        for b in self.block_refs() {
            total += self.similarity(self.span_of(cuts, b), anchor_spans[assignment.set_of(b)]);
        }
        total
    }

    /// `J`: summed functional similarity of each block to its set's anchor.
    pub fn objective(&self, p: &ZooPartition<T>) -> T {
        self.objective_parts(&p.cuts, &p.assignment, &p.anchors)
    }

    /// Checks cut feasibility, the assignment shape and anchor membership.
    pub fn check(&self, p: &ZooPartition<T>) -> Result<()> {
        if p.cuts.len() != self.num_models() || p.assignment.sets.len() != self.num_models() {
            return Err(Error::consistency("partition", "model count mismatch"));
        }
        if p.assignment.k != self.k || p.anchors.len() != self.k {
            return Err(Error::consistency("partition", "K mismatch"));
        }
        for (i, cuts) in p.cuts.iter().enumerate() {
            if !self.cuts_feasible(i, cuts) {
                return Err(Error::consistency(
                    format!("model {}", self.model_ids[i]),
                    format!("cuts {cuts:?} are infeasible"),
                ));
            }
        }
        for (j, a) in p.anchors.iter().enumerate() {
            if a.model >= self.num_models() || a.stage >= self.k || p.assignment.set_of(*a) != j {
                return Err(Error::consistency(
                    "partition",
                    format!("anchor of set {} is not a member of it", j + 1),
                ));
            }
        }
        Ok(())
    }

    /// Evaluates no move, a forward move (last node of block `boundary` joins the next
    /// block) and a backward move (first node of block `boundary+1` joins the previous
    /// block), returning the best. Ties keep the earlier option in that order; moves
    /// that empty a block or break the size bound are skipped.
    pub fn swap_step(&self, p: &ZooPartition<T>, model: usize, boundary: usize) -> ZooPartition<T> {
        let mut out = p.clone();
        self.swap_in_place(&mut out, model, boundary);
        out
    }

    fn swap_in_place(&self, p: &mut ZooPartition<T>, model: usize, boundary: usize) -> bool {
        let base = p.cuts[model][boundary];
        let mut best = self.objective(p);
        let mut best_cut = base;
        for cand in [base.checked_sub(1), Some(base + 1)].into_iter().flatten() {
            p.cuts[model][boundary] = cand;
            if self.cuts_feasible(model, &p.cuts[model]) {
                let j = self.objective(p);
                if j > best {
                    best = j;
                    best_cut = cand;
                }
            }
        }
        p.cuts[model][boundary] = best_cut;
        p.objective = best;
        best_cut != base
    }

    /// One ascending `(model, boundary)` pass of [`Self::swap_step`]; returns whether anything moved.
    fn sweep(&self, p: &mut ZooPartition<T>) -> bool {
        let mut moved = false;
        for model in 0..self.num_models() {
            for boundary in 0..self.k.saturating_sub(1) {
                moved |= self.swap_in_place(p, model, boundary);
            }
        }
        moved
    }

    /// Re-selects each set's anchor as the member with the largest summed similarity to
    /// all members; ties go to the smallest `(model_id, stage)`.
    pub fn update_anchors(&self, p: &ZooPartition<T>) -> Result<ZooPartition<T>> {
        let mut anchors = Vec::with_capacity(self.k);
        for j in 0..self.k {
            let members = p.assignment.members(j);
            if members.is_empty() {
                return Err(Error::DegenerateClustering { set: j });
            }
            let spans: Vec<Span> = members.iter().map(|&m| self.span_of(&p.cuts, m)).collect();
            let mut best: Option<(T, BlockRef)> = None;
            for (c, &cand) in members.iter().enumerate() {
                let total: T = spans.iter().map(|&s| self.similarity(s, spans[c])).sum();
                let better = match &best {
                    None => true,
                    Some((v, inc)) => total > *v || (total == *v && self.tie_key(cand) < self.tie_key(*inc)),
                };
                if better {
                    best = Some((total, cand));
                }
            }
            anchors.push(best.expect("nonempty set").1);
        }
        let mut out = p.clone();
        out.anchors = anchors;
        out.objective = self.objective(&out);
        Ok(out)
    }

    fn tie_key(&self, b: BlockRef) -> (&str, usize) {
        (self.model_ids[b.model].as_str(), b.stage)
    }

    /// Moves every non-anchor block to the set whose anchor it is most similar to; ties
    /// stay in the current set, then go to the lowest set index. Anchor blocks stay in
    /// the set they represent.
    pub fn update_assignment(&self, p: &ZooPartition<T>) -> ZooPartition<T> {
        let anchor_spans: Vec<Span> = p.anchors.iter().map(|&a| self.span_of(&p.cuts, a)).collect();
        let mut out = p.clone();
        for b in self.block_refs() {
            if let Some(j) = p.anchors.iter().position(|&a| a == b) {
                out.assignment.sets[b.model][b.stage] = j;
                continue;
            }
            let span = self.span_of(&p.cuts, b);
            let current = p.assignment.set_of(b);
            let mut best_set = current;
            let mut best = self.similarity(span, anchor_spans[current]);
            for (j, &a) in anchor_spans.iter().enumerate() {
                let v = self.similarity(span, a);
                if v > best {
                    best = v;
                    best_set = j;
                }
            }
            out.assignment.sets[b.model][b.stage] = best_set;
        }
        out.objective = self.objective(&out);
        out
    }

    /// True when no single forward or backward move at any boundary raises `J` by more
    /// than `threshold`.
    pub fn is_swap_local_optimum(&self, p: &ZooPartition<T>, threshold: T) -> bool {
        let base = self.objective(p);
        let mut probe = p.clone();
        for model in 0..self.num_models() {
            for boundary in 0..self.k.saturating_sub(1) {
                let c = p.cuts[model][boundary];
                for cand in [c.checked_sub(1), Some(c + 1)].into_iter().flatten() {
                    probe.cuts[model][boundary] = cand;
                    if self.cuts_feasible(model, &probe.cuts[model]) && self.objective(&probe) > base + threshold {
                        return false;
                    }
                }
                probe.cuts[model][boundary] = c;
            }
        }
        true
    }

    /// Random feasible cuts and anchors chosen from the initial assignment, which is
    /// stage-aligned when `aligned` is set and uniformly random otherwise.
    pub fn initial_partition(&self, aligned: bool, rng: &mut impl RngCore) -> Result<ZooPartition<T>> {
        let cuts = (0..self.num_models()).map(|i| self.random_cuts(i, rng)).collect();
        let assignment = if aligned {
            Assignment::stage_aligned(self.num_models(), self.k)
        } else {
            Assignment::random(self.num_models(), self.k, rng)
        };
        let seed = ZooPartition {
            cuts,
            assignment,
            anchors: (0..self.k).map(|stage| BlockRef { model: 0, stage }).collect(),
            objective: T::zero(),
        };
        self.update_anchors(&seed)
    }

    /// Runs one restart to convergence: a fixed point of {sweep, anchors, assignment}
    /// whose last gain is at most `tol`, or `max_iters` iterations.
    pub fn run_restart(&self, restart: usize, opts: &OptimizeOptions) -> (Option<ZooPartition<T>>, RestartSummary<T>) {
        let mut rng = ChaCha8Rng::seed_from_u64(restart_seed(opts.seed, restart));
        let mut summary = RestartSummary {
            restart,
            objective: None,
            iterations: 0,
            converged: false,
            trace: Vec::new(),
            monotonicity_violations: 0,
        };
        let mut p = match self.initial_partition(restart == 0, &mut rng) {
            Ok(p) => p,
            Err(_) => return (None, summary),
        };
        let slack = T::of(1e-9);
        let tol = T::of(opts.tol);
        summary.trace.push(p.objective);
        for t in 1..=opts.max_iters {
            let prev = p.objective;
            let prev_state = (p.cuts.clone(), p.assignment.clone(), p.anchors.clone());

            let moved = self.sweep(&mut p);
            let after_sweep = self.objective(&p);
            let anchored = match self.update_anchors(&p) {
                Ok(a) => a,
                Err(_) => {
                    summary.iterations = t;
                    return (None, summary);
                }
            };
            let assigned = self.update_assignment(&anchored);

            for (before, after) in [
                (prev, after_sweep),
                (after_sweep, anchored.objective),
                (anchored.objective, assigned.objective),
            ] {
                if after < before - slack {
                    summary.monotonicity_violations += 1;
                }
            }
            p = assigned;
            summary.trace.push(p.objective);
            summary.iterations = t;

            let changed = moved || prev_state != (p.cuts.clone(), p.assignment.clone(), p.anchors.clone());
            if p.objective - prev <= tol && !changed {
                summary.converged = true;
                break;
            }
        }
        summary.objective = Some(p.objective);
        (Some(p), summary)
    }

    /// Multi-restart optimization; restarts run on the current rayon pool and the best
    /// objective wins, ties to the lowest restart index.
    pub fn optimize(&self, opts: &OptimizeOptions) -> Result<OptimizeReport<T>> {
        if opts.restarts == 0 {
            return Err(Error::InvalidArgument("restarts must be positive".into()));
        }
        let results: Vec<(Option<ZooPartition<T>>, RestartSummary<T>)> =
            (0..opts.restarts).into_par_iter().map(|r| self.run_restart(r, opts)).collect();
        let mut best: Option<(usize, ZooPartition<T>)> = None;
        let mut summaries = Vec::with_capacity(results.len());
        for (r, (p, s)) in results.into_iter().enumerate() {
            if let Some(p) = p {
                let better = match &best {
                    None => true,
                    Some((_, b)) => p.objective.partial_cmp(&b.objective) == Some(Ordering::Greater),
                };
                if better {
                    best = Some((r, p));
                }
            }
            summaries.push(s);
        }
        let (best_restart, best) = best.ok_or(Error::AllRestartsDegenerate {
            restarts: opts.restarts,
        })?;
        Ok(OptimizeReport {
            best,
            best_restart,
            restarts: summaries,
        })
    }

    /// Block descriptors for a partition.
    pub fn blocks(&self, manifest: &ZooManifest, p: &ZooPartition<T>) -> Vec<Vec<Block>> {
        p.cuts
            .iter()
            .enumerate()
            .map(|(i, cuts)| crate::zoo::blocks_from_cuts(&manifest.models[i], i, cuts))
            .collect()
    }
}

/// Cut of `params` into `k` nonempty runs minimizing the largest run's parameter count,
/// or `None` if even that run breaks the size bound.
pub fn balanced_cuts(params: &[u64], k: usize, eps: f64) -> Option<Vec<usize>> {
    let len = params.len();
    if k == 0 || len < k {
        return None;
    }
    let mut prefix = vec![0u64; len + 1];
    for (i, &p) in params.iter().enumerate() {
        prefix[i + 1] = prefix[i] + p;
    }
    // best[b][e]: minimal max-run params splitting nodes [0, e) into b runs
    let mut best = vec![vec![u64::MAX; len + 1]; k + 1];
    let mut from = vec![vec![0usize; len + 1]; k + 1];
    best[0][0] = 0;
    for b in 1..=k {
        for e in b..=len {
            for s in (b - 1)..e {
                if best[b - 1][s] == u64::MAX {
                    continue;
                }
                let v = best[b - 1][s].max(prefix[e] - prefix[s]);
                if v < best[b][e] {
                    best[b][e] = v;
                    from[b][e] = s;
                }
            }
        }
    }
    if !within_size_bound(best[k][len], prefix[len], k, eps) {
        return None;
    }
    let mut cuts = Vec::with_capacity(k - 1);
    let mut e = len;
    for b in (2..=k).rev() {
        let s = from[b][e];
        cuts.push(s);
        e = s;
    }
    cuts.reverse();
    Some(cuts)
}

/// Convenience wrapper: builds the problem and runs [`PartitionProblem::optimize`].
pub fn optimize_partition<T: Real>(
    table: &SimilarityTable<T>,
    manifest: &ZooManifest,
    k: usize,
    eps: f64,
    opts: &OptimizeOptions,
) -> Result<OptimizeReport<T>> {
    PartitionProblem::new(table, manifest, k, eps)?.optimize(opts)
}

/// `J` recomputed from scratch.
pub fn objective_j<T: Real>(problem: &PartitionProblem<'_, T>, p: &ZooPartition<T>) -> T {
    problem.objective(p)
}

// ---------------------------------------------------------------------------
// partition.json

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelCuts {
    pub model_id: String,
    pub cuts: Vec<usize>,
    /// Inclusive node ranges, one per stage.
    pub blocks: Vec<[usize; 2]>,
}

/// `(model_id, stage, set)`, stage and set numbered from 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AssignmentEntry {
    pub model_id: String,
    pub stage: usize,
    pub set: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnchorEntry {
    pub set: usize,
    pub model_id: String,
    pub stage: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionRecord {
    pub k: usize,
    pub eps: f64,
    pub objective: f64,
    pub models: Vec<ModelCuts>,
    pub assignment: Vec<AssignmentEntry>,
    pub anchors: Vec<AnchorEntry>,
    pub best_restart: usize,
    pub restart_objectives: Vec<Option<f64>>,
    pub restart_histogram: Vec<HistogramBin>,
    pub degenerate_restarts: usize,
}

pub fn histogram(values: &[f64], bins: usize) -> Vec<HistogramBin> {
    if values.is_empty() || bins == 0 {
        return Vec::new();
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        return vec![HistogramBin { lo, hi, count: values.len() }];
    }
    let width = (hi - lo) / bins as f64;
    let mut out: Vec<HistogramBin> = (0..bins)
        .map(|b| HistogramBin {
            lo: lo + width * b as f64,
            hi: if b + 1 == bins { hi } else { lo + width * (b + 1) as f64 },
            count: 0,
        })
        .collect();
    for &v in values {
        let b = (((v - lo) / width) as usize).min(bins - 1);
        out[b].count += 1;
    }
    out
}

impl PartitionRecord {
    pub fn from_report<T: Real>(problem: &PartitionProblem<'_, T>, report: &OptimizeReport<T>) -> Self {
        let p = &report.best;
        let ids = problem.model_ids();
        let models = p
            .cuts
            .iter()
            .enumerate()
            .map(|(i, cuts)| ModelCuts {
                model_id: ids[i].clone(),
                cuts: cuts.clone(),
                blocks: cut_bounds(problem.model_len(i), cuts)
                    .into_iter()
                    .map(|(s, e)| [s, e - 1])
                    .collect(),
            })
            .collect();
        let mut assignment = Vec::new();
        for (i, row) in p.assignment.sets().iter().enumerate() {
            for (stage, &set) in row.iter().enumerate() {
                assignment.push(AssignmentEntry {
                    model_id: ids[i].clone(),
                    stage: stage + 1,
                    set: set + 1,
                });
            }
        }
        let anchors = p
            .anchors
            .iter()
            .enumerate()
            .map(|(j, a)| AnchorEntry {
                set: j + 1,
                model_id: ids[a.model].clone(),
                stage: a.stage + 1,
            })
            .collect();
        let restart_objectives: Vec<Option<f64>> = report
            .restarts
            .iter()
            .map(|r| r.objective.map(Real::to_f64_lossy))
            .collect();
        let finite: Vec<f64> = restart_objectives.iter().flatten().copied().collect();
        PartitionRecord {
            k: problem.k(),
            eps: problem.eps(),
            objective: p.objective.to_f64_lossy(),
            models,
            assignment,
            anchors,
            best_restart: report.best_restart,
            restart_objectives,
            restart_histogram: histogram(&finite, 10),
            degenerate_restarts: report.degenerate_restarts(),
        }
    }

    /// Cuts, assignment and anchors in manifest model order, with ranges checked.
    pub fn decode(&self, ids: &[String]) -> Result<(Vec<Vec<usize>>, Assignment, Vec<BlockRef>)> {
        let k = self.k;
        let bad = |m: String| Error::consistency("partition file", m);
        let index_of = |id: &str| ids.iter().position(|m| m == id).ok_or_else(|| bad(format!("unknown model {id}")));
        if self.models.len() != ids.len() {
            return Err(bad("model count differs from manifest".into()));
        }
        let mut cuts = vec![None; ids.len()];
        for m in &self.models {
            let i = index_of(&m.model_id)?;
            if m.cuts.len() + 1 != k {
                return Err(bad(format!("{} has {} cuts for K={k}", m.model_id, m.cuts.len())));
            }
            cuts[i] = Some(m.cuts.clone());
        }
        let cuts: Vec<Vec<usize>> = cuts
            .into_iter()
            .collect::<Option<_>>()
            .ok_or_else(|| bad("a model is listed twice".into()))?;
        let mut sets = vec![vec![usize::MAX; k]; ids.len()];
        for e in &self.assignment {
            let i = index_of(&e.model_id)?;
            if e.stage == 0 || e.stage > k || e.set == 0 || e.set > k {
                return Err(bad("stage or set out of range".into()));
            }
            sets[i][e.stage - 1] = e.set - 1;
        }
        if sets.iter().flatten().any(|&s| s == usize::MAX) {
            return Err(bad("assignment does not cover every block".into()));
        }
        if self.anchors.len() != k {
            return Err(bad("expected one anchor per set".into()));
        }
        let mut anchors = vec![None; k];
        for a in &self.anchors {
            if a.set == 0 || a.set > k || a.stage == 0 || a.stage > k {
                return Err(bad("anchor out of range".into()));
            }
            anchors[a.set - 1] = Some(BlockRef {
                model: index_of(&a.model_id)?,
                stage: a.stage - 1,
            });
        }
        let anchors = anchors
            .into_iter()
            .collect::<Option<_>>()
            .ok_or_else(|| bad("a set has two anchors".into()))?;
        Ok((cuts, Assignment::from_sets(k, sets)?, anchors))
    }

    /// Rebuilds the in-memory partition against `problem`, checking every constraint.
    pub fn to_partition<T: Real>(&self, problem: &PartitionProblem<'_, T>) -> Result<ZooPartition<T>> {
        if self.k != problem.k() {
            return Err(Error::consistency(
                "partition file",
                format!("K={} but problem has K={}", self.k, problem.k()),
            ));
        }
        let (cuts, assignment, anchors) = self.decode(problem.model_ids())?;
        let mut p = ZooPartition {
            cuts,
            assignment,
            anchors,
            objective: T::zero(),
        };
        problem.check(&p)?;
        p.objective = problem.objective(&p);
        Ok(p)
    }
}

/// Per-model size-rule violations of a partition, for reporting.
pub fn partition_violations<T: Real>(manifest: &ZooManifest, p: &ZooPartition<T>, eps: f64) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for (m, cuts) in manifest.models.iter().zip(&p.cuts) {
        for v in validate_partition(m, cuts, Some(eps))? {
            out.push(format!("{}: {v}", m.model_id));
        }
    }
    Ok(out)
}
