//! `dery` command-line interface.
//!
//! Every JSON artifact carries the tool name and version, the resolved configuration
//! (without paths, worker count or log level, so outputs are byte-identical across
//! machines and thread counts) and SHA-256 digests of its inputs.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::defaults;
use crate::error::{Error, Result};
use crate::partition::{partition_violations, OptimizeOptions, PartitionProblem, PartitionRecord};
use crate::reassembly::{search, BatchSpec, CandidateSpace, CodeBank, Constraints, PlanRecord, SamplerStats};
use crate::similarity::table::subsample_rows;
use crate::similarity::{
    build_similarity_table, diagonal_statistic, table_key, BuildStats, LinearCka, SimilarityTable, TableOptions,
};
use crate::synthzoo::{generate, SynthSpec};
use crate::zoo::{load_manifest, ZooManifest};

pub const TOOL: &str = "dery";
pub const VERSION: &str = env!("CARGO_PKG_VERSION");
pub const CACHE_DIR_ENV: &str = "DERY_CACHE_DIR";

#[derive(Debug, Parser)]
#[command(name = "dery", version, about = "Partition a model zoo into functional equivalence sets and reassemble blocks under budgets")]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    /// error, warn, info, debug or trace.
    #[arg(long, global = true, default_value = "warn")]
    pub log_level: String,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic zoo (manifest, features, codes, weights).
    Synth(SynthArgs),
    /// Build (or load from cache) the node-pair similarity table.
    Similarity(SimilarityArgs),
    /// Cut and cluster every model into K equivalence sets.
    Partition(PartitionArgs),
    /// Sample and rank reassembled candidates under budgets.
    Reassemble(ReassembleArgs),
    /// Render plans and similarity summaries as text.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 4)]
    pub models: usize,
    /// Inclusive node-count range, `a..b`.
    #[arg(long, default_value = "6..8", value_parser = parse_range)]
    pub nodes: (usize, usize),
    /// Inclusive width range, `a..b`.
    #[arg(long, default_value = "4..16", value_parser = parse_range)]
    pub widths: (usize, usize),
    /// Probe rows.
    #[arg(long, default_value_t = 64)]
    pub probe: usize,
    /// Models `synth1..` cloned from `synth0`, counting `synth0`.
    #[arg(long, default_value_t = 0)]
    pub family: usize,
    /// Redraw models until each admits a K-way cut within the size bound.
    #[arg(long)]
    pub feasible_k: Option<usize>,
    #[arg(long, default_value_t = defaults::EPS)]
    pub feasible_eps: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct TableArgs {
    /// Fraction of probe rows used for the table.
    #[arg(long, default_value_t = defaults::SUBSAMPLE)]
    pub subsample: f64,
    /// Seed of the row subsample.
    #[arg(long, default_value_t = 0)]
    pub sim_seed: u64,
    /// Cache file (default: `$DERY_CACHE_DIR` or `<manifest dir>/.dery-cache`).
    #[arg(long)]
    pub sim_cache: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SimilarityArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[command(flatten)]
    pub table: TableArgs,
    /// JSON dump of the table and its diagonal-pattern summary.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PartitionArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value_t = defaults::K)]
    pub k: usize,
    #[arg(long, default_value_t = defaults::EPS)]
    pub eps: f64,
    #[arg(long, default_value_t = defaults::RESTARTS)]
    pub restarts: usize,
    #[arg(long, default_value_t = defaults::TOL)]
    pub tol: f64,
    #[arg(long, default_value_t = defaults::MAX_ITERS)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[command(flatten)]
    pub table: TableArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReassembleArgs {
    #[arg(long)]
    pub partition: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub max_params: Option<f64>,
    #[arg(long)]
    pub max_flops: Option<f64>,
    #[arg(long, default_value_t = defaults::CANDIDATES)]
    pub candidates: usize,
    #[arg(long, default_value_t = defaults::BATCHES)]
    pub batches: usize,
    #[arg(long, default_value_t = defaults::BATCH_SIZE)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Plans written, best first.
    #[arg(long, default_value_t = 20)]
    pub top: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long)]
    pub plans: Option<PathBuf>,
    /// Output of `dery similarity --out`.
    #[arg(long)]
    pub similarity: Option<PathBuf>,
    /// Write the report here instead of stdout.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn parse_range(s: &str) -> std::result::Result<(usize, usize), String> {
    let parse = |t: &str| t.trim().parse::<usize>().map_err(|e| format!("{t:?}: {e}"));
    let (lo, hi) = match s.split_once("..") {
        Some((a, b)) => (parse(a)?, parse(b.trim_start_matches('='))?),
        None => {
            let v = parse(s)?;
            (v, v)
        }
    };
    if lo > hi {
        return Err(format!("empty range {s}"));
    }
    Ok((lo, hi))
}

/// Artifact envelope; the payload's fields sit beside the provenance fields.
#[derive(Debug, Serialize, Deserialize)]
pub struct Artifact<P> {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: serde_json::Value,
    /// Input name to SHA-256 hex digest, sorted by name.
    pub inputs: BTreeMap<String, String>,
    #[serde(flatten)]
    pub payload: P,
}

impl<P: Serialize> Artifact<P> {
    fn new(command: &str, config: serde_json::Value, inputs: BTreeMap<String, String>, payload: P) -> Self {
        Artifact {
            tool: TOOL.into(),
            version: VERSION.into(),
            command: command.into(),
            config,
            inputs,
            payload,
        }
    }

    fn write(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)? + "\n";
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

pub fn read_artifact<P: DeserializeOwned>(path: &Path) -> Result<Artifact<P>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

pub fn file_sha256(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(bytes)))
}

/// Digest over every code file the manifest references, in manifest order.
pub fn codes_sha256(manifest: &ZooManifest) -> Result<String> {
    let mut h = Sha256::new();
    for m in &manifest.models {
        for n in &m.nodes {
            if let Some(rel) = &n.code_ref {
                let path = manifest.resolve(rel);
                let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
                h.update((bytes.len() as u64).to_le_bytes());
                h.update(bytes);
            }
        }
    }
    Ok(hex::encode(h.finalize()))
}

/// Cache path for a table key: `--sim-cache`, else `$DERY_CACHE_DIR`, else next to the manifest.
pub fn cache_path(explicit: Option<&Path>, manifest_path: &Path, key: &str) -> PathBuf {
    if let Some(p) = explicit {
        return p.to_path_buf();
    }
    let name = format!("sim-{}.stb", &key[..16.min(key.len())]);
    match std::env::var_os(CACHE_DIR_ENV) {
        Some(dir) if !dir.is_empty() => PathBuf::from(dir).join(name),
        _ => manifest_path
            .parent()
            .unwrap_or(Path::new("."))
            .join(".dery-cache")
            .join(name),
    }
}

fn table_options(a: &TableArgs) -> TableOptions {
    TableOptions {
        subsample: a.subsample,
        seed: a.sim_seed,
    }
}

fn load_table(manifest_path: &Path, manifest: &ZooManifest, args: &TableArgs) -> Result<(SimilarityTable<f64>, String, BuildStats)> {
    let opts = table_options(args);
    let key = table_key(manifest, &opts)?;
    let cache = cache_path(args.sim_cache.as_deref(), manifest_path, &key);
    let (table, stats) = build_similarity_table::<f64>(manifest, &opts, &LinearCka, Some(&cache))?;
    Ok((table, key, stats))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SynthRecord {
    pub models: Vec<String>,
    pub input_dim: usize,
    pub files: Vec<String>,
}

fn cmd_synth(a: &SynthArgs) -> Result<()> {
    let spec = SynthSpec {
        num_models: a.models,
        nodes: a.nodes,
        widths: a.widths,
        probe_n: a.probe,
        family: a.family,
        feasible_for: a.feasible_k.map(|k| (k, a.feasible_eps)),
    };
    let zoo = generate(&spec, a.seed)?;
    let manifest = zoo.write(&a.out)?;
    let config = serde_json::json!({ "spec": spec, "seed": a.seed });
    let record = SynthRecord {
        models: manifest.models.iter().map(|m| m.model_id.clone()).collect(),
        input_dim: zoo.input_dim,
        files: vec!["manifest.json".into(), "weights.json".into()],
    };
    Artifact::new("synth", config, BTreeMap::new(), record).write(&a.out.join("synth.json"))?;
    info!("wrote {} models to {}", manifest.models.len(), a.out.display());
    Ok(())
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PairCells {
    pub model_a: String,
    pub model_b: String,
    /// `len(model_a) × len(model_b)` similarities.
    pub cells: Vec<Vec<f64>>,
    /// Relative-depth diagonal mean minus off-diagonal mean (cross-model pairs only).
    pub diagonal_statistic: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SimilarityRecord {
    pub table_key: String,
    pub rows_used: usize,
    pub degenerate_entries: usize,
    pub pairs: Vec<PairCells>,
}

fn similarity_record(
    manifest: &ZooManifest,
    table: &SimilarityTable<f64>,
    key: String,
    rows_used: usize,
    degenerate_entries: usize,
) -> SimilarityRecord {
    let n = table.num_models();
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in i..n {
            let cells = (0..table.len(i))
                .map(|a| (0..table.len(j)).map(|b| table.get(i, a, j, b).unwrap_or(0.0)).collect())
                .collect();
            pairs.push(PairCells {
                model_a: manifest.models[i].model_id.clone(),
                model_b: manifest.models[j].model_id.clone(),
                cells,
                diagonal_statistic: if i == j { None } else { diagonal_statistic(table, i, j) },
            });
        }
    }
    SimilarityRecord {
        table_key: key,
        rows_used,
        degenerate_entries,
        pairs,
    }
}

fn cmd_similarity(a: &SimilarityArgs) -> Result<()> {
    let manifest = load_manifest(&a.manifest)?;
    let (table, key, stats) = load_table(&a.manifest, &manifest, &a.table)?;
    info!(
        "similarity table: {} evaluations, cache hit: {}",
        stats.evaluations, stats.from_cache
    );
    if let Some(out) = &a.out {
        let config = serde_json::json!({ "subsample": a.table.subsample, "sim_seed": a.table.sim_seed });
        let mut inputs = BTreeMap::new();
        inputs.insert("manifest".into(), file_sha256(&a.manifest)?);
        inputs.insert("table".into(), key.clone());
        let rows_used = subsample_rows(manifest.probe_count, a.table.subsample, a.table.sim_seed)?.len();
        let record = similarity_record(&manifest, &table, key, rows_used, stats.warnings.len());
        Artifact::new("similarity", config, inputs, record).write(out)?;
    }
    Ok(())
}

fn cmd_partition(a: &PartitionArgs) -> Result<()> {
    let manifest = load_manifest(&a.manifest)?;
    let (table, key, _) = load_table(&a.manifest, &manifest, &a.table)?;
    let problem = PartitionProblem::new(&table, &manifest, a.k, a.eps)?;
    let opts = OptimizeOptions {
        max_iters: a.max_iters,
        tol: a.tol,
        restarts: a.restarts,
        seed: a.seed,
    };
    let report = problem.optimize(&opts)?;
    if report.monotonicity_violations() > 0 {
        warn!("{} monotonicity violations across restarts", report.monotonicity_violations());
    }
    let record = PartitionRecord::from_report(&problem, &report);
    info!("partition J = {} (restart {})", record.objective, record.best_restart);
    let config = serde_json::json!({
        "k": a.k,
        "eps": a.eps,
        "restarts": a.restarts,
        "tol": a.tol,
        "max_iters": a.max_iters,
        "seed": a.seed,
        "subsample": a.table.subsample,
        "sim_seed": a.table.sim_seed,
    });
    let mut inputs = BTreeMap::new();
    inputs.insert("manifest".into(), file_sha256(&a.manifest)?);
    inputs.insert("table".into(), key);
    Artifact::new("partition", config, inputs, record).write(&a.out)
}

#[derive(Debug, Serialize, Deserialize)]
pub struct PlansRecord {
    pub exhausted: bool,
    pub sampler: SamplerStats,
    pub plans: Vec<PlanRecord>,
}

fn cmd_reassemble(a: &ReassembleArgs) -> Result<()> {
    let manifest = load_manifest(&a.manifest)?;
    let partition: Artifact<PartitionRecord> = read_artifact(&a.partition)?;
    let record = partition.payload;
    let ids: Vec<String> = manifest.models.iter().map(|m| m.model_id.clone()).collect();
    let (cuts, assignment, _) = record.decode(&ids)?;
    let probe = crate::partition::ZooPartition {
        cuts: cuts.clone(),
        assignment: assignment.clone(),
        anchors: Vec::new(),
        objective: 0.0,
    };
    if let Some(v) = partition_violations(&manifest, &probe, record.eps)?.first() {
        return Err(Error::consistency("partition file", v.clone()));
    }
    let space = CandidateSpace::new(&manifest, &cuts, &assignment)?;
    let bank = CodeBank::load(&manifest)?;
    let constraints = Constraints {
        max_params: a.max_params,
        max_flops: a.max_flops,
    };
    let spec = BatchSpec {
        num_batches: a.batches,
        batch_size: a.batch_size,
    };
    let result = search(&space, &bank, &constraints, a.candidates, spec, a.seed)?;
    let plans = result.plans.iter().take(a.top).map(PlanRecord::from_plan).collect();
    let config = serde_json::json!({
        "max_params": a.max_params,
        "max_flops": a.max_flops,
        "candidates": a.candidates,
        "batches": a.batches,
        "batch_size": a.batch_size,
        "seed": a.seed,
        "top": a.top,
    });
    let mut inputs = BTreeMap::new();
    inputs.insert("manifest".into(), file_sha256(&a.manifest)?);
    inputs.insert("partition".into(), file_sha256(&a.partition)?);
    inputs.insert("codes".into(), codes_sha256(&manifest)?);
    let body = PlansRecord {
        exhausted: result.exhausted,
        sampler: result.stats,
        plans,
    };
    Artifact::new("reassemble", config, inputs, body).write(&a.out)
}

/// Human-readable plan table.
pub fn render_plans(plans: &PlansRecord) -> String {
    let mut s = String::new();
    let st = &plans.sampler;
    let _ = writeln!(
        s,
        "draws {}  accepted {}  duplicate {}  group {}  budget:param {}  budget:flops {}{}",
        st.draws,
        st.accepted,
        st.duplicates,
        st.group,
        st.budget_param,
        st.budget_flops,
        if plans.exhausted { "  (draw cap reached)" } else { "" }
    );
    let _ = writeln!(s, "{:>4}  {:>12}  {:>12}  {:>14}  blocks", "rank", "score", "params", "flops");
    for p in &plans.plans {
        let score = p.score.map_or("-inf".to_string(), |v| format!("{v:.6}"));
        let blocks: Vec<String> = p
            .blocks
            .iter()
            .map(|b| format!("{}:s{}[{}-{}]→G{}", b.model_id, b.stage, b.node_range[0], b.node_range[1], b.set))
            .collect();
        let _ = writeln!(
            s,
            "{:>4}  {:>12}  {:>12}  {:>14.0}  {}",
            p.rank,
            score,
            p.total_params,
            p.total_flops,
            blocks.join(" | ")
        );
    }
    s
}

/// Per-pair diagonal-pattern summary.
pub fn render_similarity(sim: &SimilarityRecord) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "similarity table {} ({} probe rows, {} degenerate entries)", &sim.table_key[..16.min(sim.table_key.len())], sim.rows_used, sim.degenerate_entries);
    let _ = writeln!(s, "{:<20} {:<20} {:>10}", "model a", "model b", "diagonal");
    for p in sim.pairs.iter().filter(|p| p.model_a != p.model_b) {
        let d = p.diagonal_statistic.map_or("n/a".to_string(), |v| format!("{v:+.4}"));
        let _ = writeln!(s, "{:<20} {:<20} {:>10}", p.model_a, p.model_b, d);
    }
    s
}

fn cmd_report(a: &ReportArgs) -> Result<()> {
    if a.plans.is_none() && a.similarity.is_none() {
        return Err(Error::InvalidArgument("report needs --plans and/or --similarity".into()));
    }
    let mut text = String::new();
    if let Some(p) = &a.plans {
        let plans: Artifact<PlansRecord> = read_artifact(p)?;
        text += &render_plans(&plans.payload);
    }
    if let Some(p) = &a.similarity {
        let sim: Artifact<SimilarityRecord> = read_artifact(p)?;
        if !text.is_empty() {
            text.push('\n');
        }
        text += &render_similarity(&sim.payload);
    }
    match &a.out {
        Some(out) => fs::write(out, text).map_err(|e| Error::io(out, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

pub fn execute(cli: &Cli) -> Result<()> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cli.workers.unwrap_or(0))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    pool.install(|| match &cli.command {
        Command::Synth(a) => cmd_synth(a),
        Command::Similarity(a) => cmd_similarity(a),
        Command::Partition(a) => cmd_partition(a),
        Command::Reassemble(a) => cmd_reassemble(a),
        Command::Report(a) => cmd_report(a),
    })
}

/// Parses `args` (program name first), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    let _ = env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .format_timestamp(None)
        .try_init();
    match execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            let class = e.class();
            eprintln!("error[{}]: {}", class.as_str(), e.to_string().replace('\n', " "));
            class.exit_code()
        }
    }
}

pub fn main() -> i32 {
    run(std::env::args_os())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranges() {
        assert_eq!(parse_range("6..8"), Ok((6, 8)));
        assert_eq!(parse_range("4..=16"), Ok((4, 16)));
        assert_eq!(parse_range("5"), Ok((5, 5)));
        assert!(parse_range("8..6").is_err());
        assert!(parse_range("a..b").is_err());
    }

    #[test]
    fn shipped_defaults() {
        let cli = Cli::try_parse_from(["dery", "partition", "--manifest", "m.json", "--out", "p.json"]).unwrap();
        let Command::Partition(p) = cli.command else { panic!() };
        assert_eq!((p.k, p.eps, p.restarts), (4, 0.2, 200));
        assert_eq!(p.table.subsample, 0.05);
        let cli = Cli::try_parse_from(["dery", "reassemble", "--partition", "p", "--manifest", "m", "--out", "o"]).unwrap();
        let Command::Reassemble(r) = cli.command else { panic!() };
        assert_eq!((r.candidates, r.batches, r.batch_size), (500, 5, 32));
    }

    #[test]
    fn cache_path_precedence() {
        let m = Path::new("/zoo/manifest.json");
        let key = "0123456789abcdef0123";
        assert_eq!(cache_path(Some(Path::new("/x.stb")), m, key), PathBuf::from("/x.stb"));
        if std::env::var_os(CACHE_DIR_ENV).is_none() {
            assert_eq!(cache_path(None, m, key), PathBuf::from("/zoo/.dery-cache/sim-0123456789abcdef.stb"));
        }
    }

    #[test]
    fn missing_input_is_class_input() {
        let dir = tempfile::tempdir().unwrap();
        let code = run([
            "dery".into(),
            "similarity".into(),
            "--manifest".into(),
            dir.path().join("absent.json").into_os_string(),
        ]);
        assert_eq!(code, 2);
    }
}
