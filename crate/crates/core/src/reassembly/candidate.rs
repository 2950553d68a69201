//! Stage-major candidate sampling under one-per-set, one-per-stage and budget constraints.

use rand::Rng;

use crate::error::{Error, Result};
use crate::partition::Assignment;
use crate::reassembly::adapter::{adapter_cost, StitchAdapter};
use crate::zoo::{blocks_from_cuts, validate_partition, Block, Violation, ZooManifest};

/// Hard budgets; `None` leaves a dimension unconstrained.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Constraints {
    pub max_params: Option<f64>,
    pub max_flops: Option<f64>,
}

/// `X[(i,k), j] = 1` iff block `k` of model `i` fills set `j`;
/// `Y[(i,k), j] = 1` iff that block occupies stage `j`. Rows are `i·K + k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectionMatrices {
    pub k: usize,
    pub rows: usize,
    /// Set entries of X as `(row, column)`.
    pub x: Vec<(usize, usize)>,
    pub y: Vec<(usize, usize)>,
}

impl SelectionMatrices {
    pub fn from_choice(num_models: usize, k: usize, blocks: &[Block], sets: &[usize]) -> Self {
        let row = |b: &Block| b.model_index * k + b.stage;
        SelectionMatrices {
            k,
            rows: num_models * k,
            x: blocks.iter().zip(sets).map(|(b, &s)| (row(b), s)).collect(),
            y: blocks.iter().enumerate().map(|(pos, b)| (row(b), pos)).collect(),
        }
    }

    pub fn dense(entries: &[(usize, usize)], rows: usize, k: usize) -> Vec<Vec<u8>> {
        let mut m = vec![vec![0u8; k]; rows];
        for &(r, c) in entries {
            m[r][c] = 1;
        }
        m
    }

    pub fn column_sums(entries: &[(usize, usize)], k: usize) -> Vec<usize> {
        let mut sums = vec![0; k];
        for &(_, c) in entries {
            sums[c] += 1;
        }
        sums
    }

    /// Every column of X and of Y sums to one.
    pub fn is_valid(&self) -> bool {
        let ok = |e: &[(usize, usize)]| {
            e.len() == self.k
                && e.iter().all(|&(r, c)| r < self.rows && c < self.k)
                && Self::column_sums(e, self.k).iter().all(|&s| s == 1)
        };
        ok(&self.x) && ok(&self.y)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AssemblyCandidate {
    /// Chosen blocks in stage order.
    pub blocks: Vec<Block>,
    /// Set of each chosen block.
    pub sets: Vec<usize>,
    /// Adapter between stage `k` and `k+1`.
    pub adapters: Vec<StitchAdapter>,
    pub total_params: u64,
    pub total_flops: f64,
    pub selection: SelectionMatrices,
}

impl AssemblyCandidate {
    pub fn key(&self) -> Vec<(usize, usize)> {
        self.blocks.iter().map(|b| (b.model_index, b.stage)).collect()
    }

    /// `(model_id, stage)` per position, the lexicographic tie-breaker.
    pub fn block_ids(&self) -> Vec<(&str, usize)> {
        self.blocks.iter().map(|b| (b.model_id.as_str(), b.stage)).collect()
    }

    pub fn within(&self, c: &Constraints) -> bool {
        c.max_params.is_none_or(|m| self.total_params as f64 <= m)
            && c.max_flops.is_none_or(|m| self.total_flops <= m)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Rejection {
    /// No block of the current stage has an unused set.
    Group,
    BudgetParam,
    BudgetFlops,
}

impl Rejection {
    pub fn as_str(self) -> &'static str {
        match self {
            Rejection::Group => "group",
            Rejection::BudgetParam => "budget:param",
            Rejection::BudgetFlops => "budget:flops",
        }
    }
}

/// Blocks of a partition, grouped by stage, with their set labels.
#[derive(Debug, Clone)]
pub struct CandidateSpace {
    k: usize,
    num_models: usize,
    /// `stages[k]` holds block `k` of every model.
    stages: Vec<Vec<(Block, usize)>>,
}

impl CandidateSpace {
    pub fn new(manifest: &ZooManifest, cuts: &[Vec<usize>], assignment: &Assignment) -> Result<Self> {
        let k = assignment.k();
        if cuts.len() != manifest.models.len() || assignment.sets().len() != cuts.len() {
            return Err(Error::consistency("partition", "model count differs from manifest"));
        }
        let mut stages = vec![Vec::new(); k];
        for (i, (model, c)) in manifest.models.iter().zip(cuts).enumerate() {
            if c.len() + 1 != k {
                return Err(Error::MalformedCuts {
                    model: model.model_id.clone(),
                    message: format!("{} cuts for K={k}", c.len()),
                });
            }
            let empty = validate_partition(model, c, None)?
                .into_iter()
                .find(|v| matches!(v, Violation::EmptyBlock { .. }));
            if let Some(v) = empty {
                return Err(Error::MalformedCuts {
                    model: model.model_id.clone(),
                    message: v.to_string(),
                });
            }
            for b in blocks_from_cuts(model, i, c) {
                let set = assignment.sets()[i][b.stage];
                stages[b.stage].push((b, set));
            }
        }
        for j in 0..k {
            if !stages.iter().flatten().any(|(_, s)| *s == j) {
                return Err(Error::DegenerateClustering { set: j });
            }
        }
        Ok(CandidateSpace {
            k,
            num_models: cuts.len(),
            stages,
        })
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn num_models(&self) -> usize {
        self.num_models
    }

    pub fn stage(&self, k: usize) -> &[(Block, usize)] {
        &self.stages[k]
    }

    /// Candidate from one block per stage, `picks[k]` indexing into `stage(k)`.
    /// Returns `Group` if two picks share a set.
    pub fn assemble(&self, picks: &[usize], constraints: &Constraints) -> std::result::Result<AssemblyCandidate, Rejection> {
        let mut blocks = Vec::with_capacity(self.k);
        let mut sets = Vec::with_capacity(self.k);
        for (stage, &p) in picks.iter().enumerate() {
            let (b, s) = &self.stages[stage][p];
            if sets.contains(s) {
                return Err(Rejection::Group);
            }
            blocks.push(b.clone());
            sets.push(*s);
        }
        self.finish(blocks, sets, constraints)
    }

    fn finish(
        &self,
        blocks: Vec<Block>,
        sets: Vec<usize>,
        constraints: &Constraints,
    ) -> std::result::Result<AssemblyCandidate, Rejection> {
        let adapters: Vec<StitchAdapter> = blocks
            .windows(2)
            .map(|w| adapter_cost(&w[0].out_iface, &w[1].in_iface))
            .collect();
        let total_params = blocks.iter().map(|b| b.param_count).sum::<u64>()
            + adapters.iter().map(|a| a.param_count).sum::<u64>();
        let total_flops =
            blocks.iter().map(|b| b.flops).sum::<f64>() + adapters.iter().map(|a| a.flops).sum::<f64>();
        if constraints.max_params.is_some_and(|m| total_params as f64 > m) {
            return Err(Rejection::BudgetParam);
        }
        if constraints.max_flops.is_some_and(|m| total_flops > m) {
            return Err(Rejection::BudgetFlops);
        }
        let selection = SelectionMatrices::from_choice(self.num_models, self.k, &blocks, &sets);
        let candidate = AssemblyCandidate {
            blocks,
            sets,
            adapters,
            total_params,
            total_flops,
            selection,
        };
        assert!(candidate.within(constraints) && candidate.selection.is_valid());
        Ok(candidate)
    }

    /// One stage-major draw: at each stage a uniform block among those whose set is unused.
    pub fn sample(&self, constraints: &Constraints, rng: &mut impl Rng) -> std::result::Result<AssemblyCandidate, Rejection> {
        let mut used = vec![false; self.k];
        let mut blocks = Vec::with_capacity(self.k);
        let mut sets = Vec::with_capacity(self.k);
        for stage in &self.stages {
            let open: Vec<&(Block, usize)> = stage.iter().filter(|(_, s)| !used[*s]).collect();
            if open.is_empty() {
                return Err(Rejection::Group);
            }
            let (b, s) = open[rng.random_range(0..open.len())];
            used[*s] = true;
            blocks.push(b.clone());
            sets.push(*s);
        }
        self.finish(blocks, sets, constraints)
    }
}

/// Free-function form of [`CandidateSpace::sample`].
pub fn sample_candidate(
    space: &CandidateSpace,
    constraints: &Constraints,
    rng: &mut impl Rng,
) -> std::result::Result<AssemblyCandidate, Rejection> {
    space.sample(constraints, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::zoo::{Interface, Layout, ModelGraph, NodeMeta};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model(id: &str, params: &[u64], c: u32) -> ModelGraph {
        ModelGraph {
            model_id: id.into(),
            nodes: params
                .iter()
                .enumerate()
                .map(|(n, &p)| NodeMeta {
                    node_id: n,
                    param_count: p,
                    flops: p as f64,
                    out_channels: c,
                    out_spatial: (1, 1),
                    layout: Layout::Tokens,
                    feature_ref: None,
                    code_ref: None,
                })
                .collect(),
            input_shape: (c, 1, 1),
        }
    }

    fn manifest(models: Vec<ModelGraph>) -> ZooManifest {
        ZooManifest {
            version: crate::zoo::MANIFEST_VERSION.into(),
            probe_count: 4,
            models,
            base_dir: Default::default(),
        }
    }

    #[test]
    fn over_budget_by_adapter_is_rejected() {
        // 29.5M in blocks plus a c=768 adapter (≈0.59M) against a 30M budget
        let m = manifest(vec![model("a", &[14_750_000, 14_750_000], 768)]);
        let space = CandidateSpace::new(&m, &[vec![1]], &Assignment::stage_aligned(1, 2)).unwrap();
        let adapter = 768 * 768 + 768 + 2 * 768;
        assert_eq!(adapter, 592_128);
        let c = Constraints {
            max_params: Some(30e6),
            max_flops: None,
        };
        assert_eq!(space.assemble(&[0, 0], &c).unwrap_err(), Rejection::BudgetParam);
        assert_eq!(Rejection::BudgetParam.as_str(), "budget:param");
        let loose = Constraints {
            max_params: Some(31e6),
            max_flops: None,
        };
        let ok = space.assemble(&[0, 0], &loose).unwrap();
        assert_eq!(ok.total_params, 29_500_000 + adapter);
        assert_eq!(ok.adapters.len(), 1);
    }

    #[test]
    fn flops_budget() {
        let m = manifest(vec![model("a", &[10, 10], 2)]);
        let space = CandidateSpace::new(&m, &[vec![1]], &Assignment::stage_aligned(1, 2)).unwrap();
        let c = Constraints {
            max_params: None,
            max_flops: Some(20.0),
        };
        // adapter adds 1·1·2·2 = 4 flops
        assert_eq!(space.assemble(&[0, 0], &c).unwrap_err(), Rejection::BudgetFlops);
    }

    #[test]
    fn stage_aligned_draws_always_feasible() {
        let m = manifest(vec![model("a", &[1, 1, 1], 2), model("b", &[1, 1, 1, 1], 3)]);
        let cuts = vec![vec![1, 2], vec![1, 3]];
        let space = CandidateSpace::new(&m, &cuts, &Assignment::stage_aligned(2, 3)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let c = space.sample(&Constraints::default(), &mut rng).unwrap();
            assert_eq!(c.sets, vec![0, 1, 2]);
            assert!(c.selection.is_valid());
            let dense = SelectionMatrices::dense(&c.selection.x, 6, 3);
            for col in 0..3 {
                assert_eq!(dense.iter().map(|r| r[col] as usize).sum::<usize>(), 1);
            }
            let bp: u64 = c.blocks.iter().map(|b| b.param_count).sum();
            let ap: u64 = c.adapters.iter().map(|a| a.param_count).sum();
            assert_eq!(c.total_params, bp + ap);
        }
    }

    #[test]
    fn group_collision_rejected() {
        let m = manifest(vec![model("a", &[1, 1], 1), model("b", &[1, 1], 1)]);
        let cuts = vec![vec![1], vec![1]];
        // model a: both blocks in set 0; model b: both in set 1
        let a = Assignment::from_sets(2, vec![vec![0, 0], vec![1, 1]]).unwrap();
        let space = CandidateSpace::new(&m, &cuts, &a).unwrap();
        assert_eq!(space.assemble(&[0, 0], &Constraints::default()).unwrap_err(), Rejection::Group);
        let c = space.assemble(&[0, 1], &Constraints::default()).unwrap();
        assert_eq!(c.sets, vec![0, 1]);
        assert_eq!(c.selection.y, vec![(0, 0), (3, 1)]);
    }

    #[test]
    fn adapter_interfaces_follow_blocks() {
        let m = manifest(vec![model("a", &[1, 1], 5), model("b", &[1, 1], 7)]);
        let cuts = vec![vec![1], vec![1]];
        let space = CandidateSpace::new(&m, &cuts, &Assignment::stage_aligned(2, 2)).unwrap();
        let c = space.assemble(&[0, 1], &Constraints::default()).unwrap();
        let expect = Interface {
            channels: 5,
            height: 1,
            width: 1,
            layout: Layout::Tokens,
        };
        assert_eq!(c.adapters[0].in_iface, expect);
        assert_eq!(c.adapters[0].out_iface.channels, 7);
    }
}
