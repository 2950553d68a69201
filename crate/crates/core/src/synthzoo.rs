//! Synthetic zoos of small affine + ReLU line graphs with exact forward evaluation.
//!
//! Used as ground truth: features and codes are exact, a cloned "family" of models
//! plants known structure, and [`brute_force_partition`] gives the global partition
//! optimum on instances small enough to enumerate.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::formats::{write_codes, write_features, BinaryCodes};
use crate::linalg::Mat;
use crate::partition::{balanced_cuts, Assignment, BlockRef, PartitionProblem, ZooPartition};
use crate::similarity::Span;
use crate::zoo::{save_manifest, Layout, ModelGraph, NodeMeta, ZooManifest, MANIFEST_VERSION};

/// Largest enumeration [`brute_force_partition`] accepts.
pub const BRUTE_FORCE_LIMIT: u128 = 1_000_000;

/// Generation attempts per model when a feasible K-way cut is required.
const FEASIBILITY_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub num_models: usize,
    /// Inclusive node-count range.
    pub nodes: (usize, usize),
    /// Inclusive width range; also the range the probe dimension is drawn from.
    pub widths: (usize, usize),
    pub probe_n: usize,
    /// Models `1..family` are exact clones of model 0.
    pub family: usize,
    /// Redraw each model until it admits a K-way cut within `(K, eps)`.
    pub feasible_for: Option<(usize, f64)>,
}

impl SynthSpec {
    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(format!("synth spec: {m}")));
        if self.num_models == 0 {
            return bad("need at least one model");
        }
        if self.nodes.0 == 0 || self.nodes.0 > self.nodes.1 {
            return bad("node range must be nonempty and start at 1 or more");
        }
        if self.widths.0 == 0 || self.widths.0 > self.widths.1 {
            return bad("width range must be nonempty and start at 1 or more");
        }
        if self.probe_n < 2 {
            return bad("probe needs at least 2 rows");
        }
        if self.family > self.num_models {
            return bad("family larger than the zoo");
        }
        Ok(())
    }
}

/// `relu(W·x + b)` with `W` of shape `d_out × d_in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthNode {
    pub weight: Vec<Vec<f64>>,
    pub bias: Vec<f64>,
}

impl SynthNode {
    pub fn d_in(&self) -> usize {
        self.weight.first().map_or(0, Vec::len)
    }

    pub fn d_out(&self) -> usize {
        self.weight.len()
    }

    pub fn param_count(&self) -> u64 {
        (self.d_out() * self.d_in() + self.d_out()) as u64
    }

    pub fn flops(&self) -> f64 {
        (self.d_out() * self.d_in()) as f64
    }

    /// Applies the node to each row of `x` (`n × d_in`).
    pub fn apply(&self, x: &Mat<f64>) -> Result<Mat<f64>> {
        if x.cols() != self.d_in() {
            return Err(Error::DimensionMismatch(format!(
                "node expects width {}, got {}",
                self.d_in(),
                x.cols()
            )));
        }
        Ok(Mat::from_fn(x.rows(), self.d_out(), |r, o| {
            let row = x.row(r);
            let z: f64 = self.bias[o] + self.weight[o].iter().zip(row).map(|(w, v)| w * v).sum::<f64>();
            z.max(0.0)
        }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthModel {
    pub model_id: String,
    pub nodes: Vec<SynthNode>,
}

impl SynthModel {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn param_counts(&self) -> Vec<u64> {
        self.nodes.iter().map(SynthNode::param_count).collect()
    }

    pub fn graph(&self, input_dim: usize) -> ModelGraph {
        ModelGraph {
            model_id: self.model_id.clone(),
            nodes: self
                .nodes
                .iter()
                .enumerate()
                .map(|(i, n)| NodeMeta {
                    node_id: i,
                    param_count: n.param_count(),
                    flops: n.flops(),
                    out_channels: n.d_out() as u32,
                    out_spatial: (1, 1),
                    layout: Layout::Tokens,
                    feature_ref: None,
                    code_ref: None,
                })
                .collect(),
            input_shape: (input_dim as u32, 1, 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthZoo {
    pub seed: u64,
    pub spec: SynthSpec,
    pub input_dim: usize,
    pub models: Vec<SynthModel>,
    /// `probe_n × input_dim`.
    pub probe: Vec<Vec<f64>>,
}

fn random_node(rng: &mut ChaCha8Rng, d_in: usize, d_out: usize) -> SynthNode {
    let w = Normal::new(0.0, (2.0 / d_in as f64).sqrt()).expect("positive std");
    let weight = (0..d_out)
        .map(|_| (0..d_in).map(|_| w.sample(rng)).collect())
        .collect();
    let bias = (0..d_out).map(|_| 0.1 * rng.sample::<f64, _>(StandardNormal)).collect();
    SynthNode { weight, bias }
}

fn random_model(rng: &mut ChaCha8Rng, spec: &SynthSpec, id: String, input_dim: usize) -> SynthModel {
    let len = rng.random_range(spec.nodes.0..=spec.nodes.1);
    let mut d_in = input_dim;
    let mut nodes = Vec::with_capacity(len);
    for _ in 0..len {
        let d_out = rng.random_range(spec.widths.0..=spec.widths.1);
        nodes.push(random_node(rng, d_in, d_out));
        d_in = d_out;
    }
    SynthModel { model_id: id, nodes }
}

/// Deterministic zoo for `(spec, seed)`.
pub fn generate(spec: &SynthSpec, seed: u64) -> Result<SynthZoo> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input_dim = rng.random_range(spec.widths.0..=spec.widths.1);
    let probe = (0..spec.probe_n)
        .map(|_| (0..input_dim).map(|_| rng.sample(StandardNormal)).collect())
        .collect();
    let mut models: Vec<SynthModel> = Vec::with_capacity(spec.num_models);
    for i in 0..spec.num_models {
        let id = format!("synth{i}");
        if i > 0 && i < spec.family {
            models.push(SynthModel {
                model_id: id,
                nodes: models[0].nodes.clone(),
            });
            continue;
        }
        let mut attempt = 0;
        let model = loop {
            let m = random_model(&mut rng, spec, id.clone(), input_dim);
            let ok = spec
                .feasible_for
                .is_none_or(|(k, eps)| balanced_cuts(&m.param_counts(), k, eps).is_some());
            if ok {
                break m;
            }
            attempt += 1;
            if attempt == FEASIBILITY_ATTEMPTS {
                return Err(Error::InvalidArgument(format!(
                    "no feasible model after {FEASIBILITY_ATTEMPTS} draws for {id}"
                )));
            }
        };
        models.push(model);
    }
    Ok(SynthZoo {
        seed,
        spec: spec.clone(),
        input_dim,
        models,
        probe,
    })
}

impl SynthZoo {
    pub fn probe_matrix(&self) -> Mat<f64> {
        Mat::from_fn(self.probe.len(), self.input_dim, |r, c| self.probe[r][c])
    }

    /// Manifest without file references.
    pub fn manifest(&self) -> ZooManifest {
        ZooManifest {
            version: MANIFEST_VERSION.into(),
            probe_count: self.probe.len(),
            models: self.models.iter().map(|m| m.graph(self.input_dim)).collect(),
            base_dir: PathBuf::new(),
        }
    }

    /// Post-activation features of every node of `model` on `inputs`.
    pub fn forward(&self, model: usize, inputs: &Mat<f64>) -> Result<Vec<Mat<f64>>> {
        let mut out = Vec::with_capacity(self.models[model].len());
        let mut x = inputs.clone();
        for node in &self.models[model].nodes {
            x = node.apply(&x)?;
            out.push(x.clone());
        }
        Ok(out)
    }

    /// Features of every node of a stitched chain of spans `(model, first, last)`,
    /// with identity adapters between consecutive spans.
    ///
    /// An identity adapter is the rectangular identity projection followed by a leaky
    /// ReLU (slope 0.01); its own output is not part of the returned features.
    pub fn forward_stitched(&self, spans: &[Span], inputs: &Mat<f64>) -> Result<Vec<Mat<f64>>> {
        let mut out = Vec::new();
        let mut x = inputs.clone();
        for (pos, &(model, first, last)) in spans.iter().enumerate() {
            let nodes = &self.models[model].nodes[first..=last];
            if pos > 0 {
                x = identity_adapter(&x, nodes[0].d_in());
            }
            for node in nodes {
                x = node.apply(&x)?;
                out.push(x.clone());
            }
        }
        Ok(out)
    }

    /// Writes `manifest.json`, `weights.json`, and per-node `features/*.fmx` and
    /// `codes/*.bcx` under `dir`, returning the manifest as loaded from there.
    pub fn write(&self, dir: &Path) -> Result<ZooManifest> {
        for sub in ["features", "codes"] {
            let p = dir.join(sub);
            fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
        }
        let probe = self.probe_matrix();
        let mut manifest = self.manifest();
        for (i, graph) in manifest.models.iter_mut().enumerate() {
            let feats = self.forward(i, &probe)?;
            for (n, f) in feats.iter().enumerate() {
                let stem = format!("{}_{n}", graph.model_id);
                let feature_rel = PathBuf::from("features").join(format!("{stem}.fmx"));
                let code_rel = PathBuf::from("codes").join(format!("{stem}.bcx"));
                write_features(&dir.join(&feature_rel), &f.cast::<f32>())?;
                write_codes(&dir.join(&code_rel), &BinaryCodes::from_features(f))?;
                graph.nodes[n].feature_ref = Some(feature_rel);
                graph.nodes[n].code_ref = Some(code_rel);
            }
        }
        manifest.base_dir = dir.to_path_buf();
        save_manifest(&manifest, &dir.join("manifest.json"))?;
        let weights = dir.join("weights.json");
        let json = serde_json::to_string(self)?;
        fs::write(&weights, json + "\n").map_err(|e| Error::io(&weights, e))?;
        Ok(manifest)
    }
}

fn identity_adapter(x: &Mat<f64>, d_out: usize) -> Mat<f64> {
    Mat::from_fn(x.rows(), d_out, |r, c| {
        let v = if c < x.cols() { x[(r, c)] } else { 0.0 };
        if v > 0.0 {
            v
        } else {
            0.01 * v
        }
    })
}

/// Node features mapped to codes, concatenated column-wise.
pub fn codes_of(features: &[Mat<f64>]) -> Result<BinaryCodes> {
    let parts: Vec<BinaryCodes> = features.iter().map(BinaryCodes::from_features).collect();
    BinaryCodes::hstack(&parts.iter().collect::<Vec<_>>())
}

#[derive(Debug, Clone)]
pub struct BruteForceResult {
    pub partition: ZooPartition<f64>,
    /// Cut configurations enumerated.
    pub configurations: u128,
}

/// Cut configurations an exhaustive search would visit.
pub fn configuration_count(problem: &PartitionProblem<'_, f64>) -> u128 {
    (0..problem.num_models())
        .map(|i| problem.feasible_cut_sets(i).len() as u128)
        .product()
}

/// Global maximum of `J` over every feasible cut configuration and every choice of K
/// anchor blocks; each other block joins the anchor it is most similar to.
pub fn brute_force_partition(problem: &PartitionProblem<'_, f64>) -> Result<BruteForceResult> {
    let per_model: Vec<Vec<Vec<usize>>> = (0..problem.num_models()).map(|i| problem.feasible_cut_sets(i)).collect();
    let configurations: u128 = per_model.iter().map(|c| c.len() as u128).product();
    if configurations > BRUTE_FORCE_LIMIT {
        return Err(Error::InstanceTooLarge {
            configurations,
            limit: BRUTE_FORCE_LIMIT,
        });
    }
    if configurations == 0 {
        return Err(Error::InvalidArgument("a model has no feasible cut".into()));
    }
    let k = problem.k();
    let n = problem.num_models();
    let refs: Vec<BlockRef> = (0..n)
        .flat_map(|model| (0..k).map(move |stage| BlockRef { model, stage }))
        .collect();
    let subsets = k_subsets(refs.len(), k);
    let radices: Vec<usize> = per_model.iter().map(Vec::len).collect();

    let best = (0..configurations as usize)
        .into_par_iter()
        .map(|code| {
            let cuts = decode(code, &radices, &per_model);
            let spans: Vec<Span> = refs.iter().map(|&b| problem.span_of(&cuts, b)).collect();
            let m = spans.len();
            let mut s = vec![0.0; m * m];
            for a in 0..m {
                for b in 0..m {
                    s[a * m + b] = problem.similarity(spans[a], spans[b]);
                }
            }
            let mut best: Option<(f64, usize)> = None;
            for (si, anchors) in subsets.iter().enumerate() {
                let mut j = 0.0;
                for b in 0..m {
                    j += match anchors.iter().position(|&a| a == b) {
                        Some(_) => s[b * m + b],
                        None => anchors.iter().map(|&a| s[b * m + a]).fold(f64::NEG_INFINITY, f64::max),
                    };
                }
                if best.is_none_or(|(v, _)| j > v) {
                    best = Some((j, si));
                }
            }
            let (j, si) = best.expect("at least one anchor subset");
            (j, code, si)
        })
        .reduce_with(|a, b| if b.0 > a.0 || (b.0 == a.0 && b.1 < a.1) { b } else { a })
        .expect("nonempty enumeration");

    let (_, code, si) = best;
    let cuts = decode(code, &radices, &per_model);
    let anchors: Vec<BlockRef> = subsets[si].iter().map(|&i| refs[i]).collect();
    let anchor_spans: Vec<Span> = anchors.iter().map(|&a| problem.span_of(&cuts, a)).collect();
    let mut sets = vec![vec![0; k]; n];
    for &b in &refs {
        sets[b.model][b.stage] = match anchors.iter().position(|&a| a == b) {
            Some(j) => j,
            None => {
                let span = problem.span_of(&cuts, b);
                let mut best_j = 0;
                for j in 1..k {
                    if problem.similarity(span, anchor_spans[j]) > problem.similarity(span, anchor_spans[best_j]) {
                        best_j = j;
                    }
                }
                best_j
            }
        };
    }
    let mut partition = ZooPartition {
        cuts,
        assignment: Assignment::from_sets(k, sets)?,
        anchors,
        objective: 0.0,
    };
    partition.objective = problem.objective(&partition);
    Ok(BruteForceResult {
        partition,
        configurations,
    })
}

fn decode(mut code: usize, radices: &[usize], per_model: &[Vec<Vec<usize>>]) -> Vec<Vec<usize>> {
    radices
        .iter()
        .zip(per_model)
        .map(|(&r, opts)| {
            let c = opts[code % r].clone();
            code /= r;
            c
        })
        .collect()
}

/// All `k`-element subsets of `0..n` in lexicographic order.
fn k_subsets(n: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut cur = Vec::with_capacity(k);
    fn rec(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    rec(0, n, k, &mut cur, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reassembly::naswot_score;
    use crate::similarity::{linear_cka, SimilarityTable};
    use crate::zoo::load_manifest;

    fn spec() -> SynthSpec {
        SynthSpec {
            num_models: 4,
            nodes: (6, 8),
            widths: (4, 16),
            probe_n: 64,
            family: 2,
            feasible_for: None,
        }
    }

    #[test]
    fn deterministic_and_costs_follow_shapes() {
        let a = generate(&spec(), 7).unwrap();
        assert_eq!(a, generate(&spec(), 7).unwrap());
        assert_ne!(a, generate(&spec(), 8).unwrap());
        for m in &a.models {
            assert!((6..=8).contains(&m.len()));
            for n in &m.nodes {
                assert!((4..=16).contains(&n.d_out()));
                assert_eq!(n.param_count(), (n.d_out() * n.d_in() + n.d_out()) as u64);
            }
        }
        assert_eq!(a.models[0].nodes, a.models[1].nodes);
    }

    #[test]
    fn invalid_specs() {
        let mut s = spec();
        s.probe_n = 1;
        assert!(generate(&s, 0).is_err());
        let mut s = spec();
        s.widths = (0, 3);
        assert!(generate(&s, 0).is_err());
    }

    #[test]
    fn family_clones_have_unit_cka() {
        let z = generate(&spec(), 3).unwrap();
        let p = z.probe_matrix();
        let f0 = z.forward(0, &p).unwrap();
        let f1 = z.forward(1, &p).unwrap();
        for (a, b) in f0.iter().zip(&f1) {
            assert!((linear_cka(a, b).unwrap() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_and_identity_weights() {
        let zero = SynthNode {
            weight: vec![vec![0.0; 3]; 2],
            bias: vec![0.0; 2],
        };
        let x = Mat::from_fn(4, 3, |r, c| (r + c) as f64 + 1.0);
        let y = zero.apply(&x).unwrap();
        assert!(y.as_slice().iter().all(|&v| v == 0.0));
        assert!(BinaryCodes::from_features(&y).as_slice().iter().all(|&b| b == 0));
        let id = SynthNode {
            weight: (0..3).map(|i| (0..3).map(|j| f64::from(u8::from(i == j))).collect()).collect(),
            bias: vec![0.0; 3],
        };
        let y = id.apply(&x).unwrap();
        assert_eq!(y, x);
        assert!(BinaryCodes::from_features(&y).as_slice().iter().all(|&b| b == 1));
        assert!(id.apply(&Mat::zeros(2, 4)).is_err());
    }

    #[test]
    fn written_zoo_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let z = generate(&spec(), 7).unwrap();
        let m = z.write(dir.path()).unwrap();
        let loaded = load_manifest(&dir.path().join("manifest.json")).unwrap();
        assert_eq!(loaded, m);
        let f = crate::formats::read_features(&loaded.resolve(loaded.models[2].nodes[1].feature_ref.as_ref().unwrap())).unwrap();
        let exact = z.forward(2, &z.probe_matrix()).unwrap();
        assert_eq!(f, exact[1].cast::<f32>());
        let dir2 = tempfile::tempdir().unwrap();
        z.write(dir2.path()).unwrap();
        for rel in ["manifest.json", "weights.json", "codes/synth3_0.bcx", "features/synth0_5.fmx"] {
            assert_eq!(fs::read(dir.path().join(rel)).unwrap(), fs::read(dir2.path().join(rel)).unwrap());
        }
    }

    #[test]
    fn stitched_clone_blocks_match_home_codes() {
        let mut s = spec();
        s.family = 4;
        s.nodes = (6, 6);
        let z = generate(&s, 11).unwrap();
        let p = z.probe_matrix();
        let home = codes_of(&z.forward(0, &p).unwrap()).unwrap();
        let stitched = codes_of(&z.forward_stitched(&[(1, 0, 1), (3, 2, 4), (2, 5, 5)], &p).unwrap()).unwrap();
        assert_eq!(home, stitched);
        let a: f64 = naswot_score(&[&home], 0.0).unwrap();
        let b: f64 = naswot_score(&[&stitched], 0.0).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_model_counts_cut_positions() {
        let t = SimilarityTable::filled(vec![3], 1.0);
        let prob = PartitionProblem::from_parts(&t, vec!["m".into()], vec![vec![0, 0, 0]], 2, 0.2).unwrap();
        assert_eq!(configuration_count(&prob), 2);
        let r = brute_force_partition(&prob).unwrap();
        assert_eq!(r.configurations, 2);
        assert_eq!(r.partition.objective, prob.objective(&r.partition));
    }

    #[test]
    fn guard_rejects_large_instances() {
        let t = SimilarityTable::filled(vec![30; 5], 1.0);
        let prob = PartitionProblem::from_parts(
            &t,
            (0..5).map(|i| format!("m{i}")).collect(),
            vec![vec![0; 30]; 5],
            4,
            0.2,
        )
        .unwrap();
        assert!(matches!(brute_force_partition(&prob), Err(Error::InstanceTooLarge { .. })));
    }

    #[test]
    fn k_subsets_count() {
        assert_eq!(k_subsets(5, 2).len(), 10);
        assert_eq!(k_subsets(4, 4), vec![vec![0, 1, 2, 3]]);
    }
}
