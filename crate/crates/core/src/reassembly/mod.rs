//! Candidate networks assembled from one block per equivalence set and stage,
//! with stitch-adapter costs and training-free ranking.

pub mod adapter;
pub mod candidate;
pub mod naswot;
pub mod search;

pub use adapter::{adapter_cost, AdapterKind, StitchAdapter};
pub use candidate::{sample_candidate, AssemblyCandidate, CandidateSpace, Constraints, Rejection, SelectionMatrices};
pub use naswot::{default_ridge, hamming_kernel, naswot_score, score_codes, score_codes_auto};
pub use search::{
    draw_candidates, probe_batches, rank_candidates, rank_order, score_candidate, search, search_batches, Audit, BatchSpec, CodeBank, PlanRecord,
    SamplerStats, ScoredPlan, SearchResult,
};
