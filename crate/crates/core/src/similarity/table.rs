//! Offline node-pair similarity table and its `STB1` cache file.
//!
//! Every node output of every model is compared with every node output of every
//! other model once. Partition search then reads block similarities from the table
//! without touching features again.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::defaults;
use crate::error::{Error, Result};
use crate::formats;
use crate::linalg::Mat;
use crate::numeric::Real;
use crate::similarity::cka::SimilarityIndex;
use crate::zoo::{manifest_to_json, ZooManifest};

pub const TABLE_MAGIC: &[u8; 4] = b"STB1";

/// Dense node-pair similarities. Only pairs `(i, j)` with `i ≤ j` are stored; the other
/// orientation is read transposed.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityTable<T> {
    lens: Vec<usize>,
    pairs: Vec<Mat<T>>,
}

impl<T: Real> SimilarityTable<T> {
    pub fn filled(lens: Vec<usize>, value: T) -> Self {
        let n = lens.len();
        let mut pairs = Vec::with_capacity(n * (n + 1) / 2);
        for i in 0..n {
            for j in i..n {
                pairs.push(Mat::from_fn(lens[i], lens[j], |_, _| value));
            }
        }
        SimilarityTable { lens, pairs }
    }

    pub fn num_models(&self) -> usize {
        self.lens.len()
    }

    pub fn len(&self, model: usize) -> usize {
        self.lens[model]
    }

    pub fn lens(&self) -> &[usize] {
        &self.lens
    }

    pub fn is_empty(&self) -> bool {
        self.lens.is_empty()
    }

    /// Matrix for the model pair `(i, j)`, `i ≤ j`, shape `L_i × L_j`.
    pub fn pair(&self, i: usize, j: usize) -> &Mat<T> {
        &self.pairs[self.offset(i, j)]
    }

    fn offset(&self, i: usize, j: usize) -> usize {
        // rows p < i hold n - p pairs each
        let n = self.lens.len();
        i * n - i * i.saturating_sub(1) / 2 + (j - i)
    }

    pub fn get(&self, i: usize, a: usize, j: usize, b: usize) -> Option<T> {
        if i >= self.lens.len() || j >= self.lens.len() {
            return None;
        }
        let (i, a, j, b) = if i <= j { (i, a, j, b) } else { (j, b, i, a) };
        if a >= self.lens[i] || b >= self.lens[j] {
            return None;
        }
        Some(self.pairs[self.offset(i, j)][(a, b)])
    }

    /// Sets `s(i:a, j:b)`; within one model both orientations are written.
    pub fn set(&mut self, i: usize, a: usize, j: usize, b: usize, v: T) {
        let (i, a, j, b) = if i <= j { (i, a, j, b) } else { (j, b, i, a) };
        let off = self.offset(i, j);
        self.pairs[off][(a, b)] = v;
        if i == j {
            self.pairs[off][(b, a)] = v;
        }
    }

    pub fn max_asymmetry(&self) -> f64 {
        let mut worst = 0.0f64;
        for i in 0..self.lens.len() {
            let m = self.pair(i, i);
            for a in 0..m.rows() {
                for b in 0..m.cols() {
                    worst = worst.max((m[(a, b)] - m[(b, a)]).abs().to_f64_lossy());
                }
            }
        }
        worst
    }

    fn unordered_cell_count(&self) -> usize {
        self.pairs.iter().map(|m| m.rows() * m.cols()).sum()
    }
}

/// One degenerate entry recorded (and zeroed) during a build.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EntryWarning {
    pub model_a: usize,
    pub node_a: usize,
    pub model_b: usize,
    pub node_b: usize,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BuildStats {
    /// Similarity-index evaluations performed by this build (0 on a cache hit).
    pub evaluations: usize,
    pub from_cache: bool,
    pub rows_used: usize,
    pub warnings: Vec<EntryWarning>,
}

#[derive(Debug, Clone, Copy)]
pub struct TableOptions {
    /// Fraction of probe rows used; 1.0 keeps all.
    pub subsample: f64,
    pub seed: u64,
}

impl Default for TableOptions {
    fn default() -> Self {
        TableOptions {
            subsample: defaults::SUBSAMPLE,
            seed: 0,
        }
    }
}

/// Probe rows used for the table: all rows when `subsample ≥ 1`, otherwise a seeded
/// sorted sample of `max(2, ⌈n·subsample⌉)` rows.
pub fn subsample_rows(n: usize, subsample: f64, seed: u64) -> Result<Vec<usize>> {
    if !(subsample > 0.0) || !subsample.is_finite() {
        return Err(Error::InvalidArgument(format!("subsample fraction {subsample} must be in (0, 1]")));
    }
    if subsample >= 1.0 {
        return Ok((0..n).collect());
    }
    let m = ((n as f64 * subsample).ceil() as usize).max(2).min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = rand::seq::index::sample(&mut rng, n, m).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// Cache key: digest of the canonical manifest, every referenced feature file, and the
/// build options.
pub fn table_key(manifest: &ZooManifest, opts: &TableOptions) -> Result<String> {
    let mut h = Sha256::new();
    h.update(manifest_to_json(manifest)?.as_bytes());
    for m in &manifest.models {
        for n in &m.nodes {
            if let Some(rel) = &n.feature_ref {
                let path = manifest.resolve(rel);
                let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
                h.update((bytes.len() as u64).to_le_bytes());
                h.update(&bytes);
            }
        }
    }
    h.update(opts.subsample.to_le_bytes());
    h.update(opts.seed.to_le_bytes());
    Ok(hex::encode(h.finalize()))
}

fn load_features<T: Real>(manifest: &ZooManifest, rows: &[usize]) -> Result<Vec<Vec<Mat<T>>>> {
    manifest
        .models
        .iter()
        .map(|m| {
            m.nodes
                .iter()
                .map(|n| {
                    let rel = n.feature_ref.as_ref().ok_or_else(|| {
                        Error::consistency(
                            format!("model {}, node {}", m.model_id, n.node_id),
                            "node has no feature_file",
                        )
                    })?;
                    let f = formats::read_features(&manifest.resolve(rel))?;
                    Ok(f.select_rows(rows).cast::<T>())
                })
                .collect()
        })
        .collect()
}

/// Computes every cell of the table with `index`, or reads it from `cache` when the key
/// matches. Degenerate features yield 0 and a warning instead of an error.
pub fn build_similarity_table<T: Real>(
    manifest: &ZooManifest,
    opts: &TableOptions,
    index: &dyn SimilarityIndex<T>,
    cache: Option<&Path>,
) -> Result<(SimilarityTable<T>, BuildStats)> {
    let key = table_key(manifest, opts)?;
    let lens = manifest.node_counts();
    if let Some(path) = cache {
        if path.exists() {
            match read_cache::<T>(path, &key, &lens) {
                Ok(Some(table)) => {
                    info!("similarity table loaded from cache {}", path.display());
                    return Ok((
                        table,
                        BuildStats {
                            from_cache: true,
                            ..BuildStats::default()
                        },
                    ));
                }
                Ok(None) => info!("cache {} is stale, rebuilding", path.display()),
                Err(e) => warn!("ignoring unreadable cache {}: {e}", path.display()),
            }
        }
    }

    let rows = subsample_rows(manifest.probe_count, opts.subsample, opts.seed)?;
    let features = load_features::<T>(manifest, &rows)?;
    let mut table = SimilarityTable::filled(lens.clone(), T::zero());

    let n = lens.len();
    let mut tasks = Vec::with_capacity(table.unordered_cell_count());
    for i in 0..n {
        for j in i..n {
            for a in 0..lens[i] {
                // self tables are symmetric, so only their upper triangle is evaluated
                for b in (if i == j { a } else { 0 })..lens[j] {
                    tasks.push((i, a, j, b));
                }
            }
        }
    }
    let results: Vec<(T, Option<String>)> = tasks
        .par_iter()
        .map(|&(i, a, j, b)| match index.similarity(&features[i][a], &features[j][b]) {
            Ok(v) => (v, None),
            Err(e) => (T::zero(), Some(e.to_string())),
        })
        .collect();

    let mut warnings = Vec::new();
    for (&(i, a, j, b), (v, msg)) in tasks.iter().zip(results) {
        if let Some(message) = msg {
            warn!("degenerate similarity at model {i} node {a} vs model {j} node {b}: {message}");
            warnings.push(EntryWarning {
                model_a: i,
                node_a: a,
                model_b: j,
                node_b: b,
                message,
            });
        }
        table.set(i, a, j, b, v);
    }

    let stats = BuildStats {
        evaluations: tasks.len(),
        from_cache: false,
        rows_used: rows.len(),
        warnings,
    };
    if let Some(path) = cache {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        write_cache(path, &key, &table)?;
    }
    Ok((table, stats))
}

/// Whether cell `(a, b)` of an `la × lb` block lies on the relative-depth diagonal:
/// either node is the other's nearest counterpart at the same relative depth.
pub fn on_diagonal(a: usize, la: usize, b: usize, lb: usize) -> bool {
    let scale = |x: usize, from: usize, to: usize| {
        if from <= 1 {
            0
        } else {
            (x as f64 * (to - 1) as f64 / (from - 1) as f64).round() as usize
        }
    };
    scale(a, la, lb) == b || scale(b, lb, la) == a
}

/// Mean similarity on the relative-depth diagonal minus the mean off it, for the
/// cross-model block `(i, j)`; `None` if either part is empty.
pub fn diagonal_statistic<T: Real>(table: &SimilarityTable<T>, i: usize, j: usize) -> Option<f64> {
    let (la, lb) = (table.len(i), table.len(j));
    let (mut on, mut n_on, mut off, mut n_off) = (0.0, 0usize, 0.0, 0usize);
    for a in 0..la {
        for b in 0..lb {
            let v = table.get(i, a, j, b)?.to_f64_lossy();
            if on_diagonal(a, la, b, lb) {
                on += v;
                n_on += 1;
            } else {
                off += v;
                n_off += 1;
            }
        }
    }
    (n_on > 0 && n_off > 0).then(|| on / n_on as f64 - off / n_off as f64)
}

pub fn write_cache<T: Real>(path: &Path, key: &str, table: &SimilarityTable<T>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let run = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        w.write_all(TABLE_MAGIC)?;
        w.write_all(&(key.len() as u32).to_le_bytes())?;
        w.write_all(key.as_bytes())?;
        w.write_all(&(table.lens.len() as u32).to_le_bytes())?;
        for &l in &table.lens {
            w.write_all(&(l as u32).to_le_bytes())?;
        }
        for m in &table.pairs {
            for v in m.as_slice() {
                w.write_all(&v.to_f64_lossy().to_le_bytes())?;
            }
        }
        w.flush()
    };
    run(&mut w).map_err(|e| Error::io(path, e))
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// `Ok(None)` when the file is a valid table for a different key or shape.
pub fn read_cache<T: Real>(path: &Path, key: &str, lens: &[usize]) -> Result<Option<SimilarityTable<T>>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    let fmt_err = |message: &str| Error::Format {
        path: path.to_path_buf(),
        message: message.to_string(),
    };
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|_| fmt_err("truncated header"))?;
    if &magic != TABLE_MAGIC {
        return Err(fmt_err("bad magic"));
    }
    let klen = read_u32(&mut r).map_err(|_| fmt_err("truncated key"))? as usize;
    let mut kbytes = vec![0u8; klen];
    r.read_exact(&mut kbytes).map_err(|_| fmt_err("truncated key"))?;
    if kbytes != key.as_bytes() {
        return Ok(None);
    }
    let n = read_u32(&mut r).map_err(|_| fmt_err("truncated shape"))? as usize;
    let mut stored = Vec::with_capacity(n);
    for _ in 0..n {
        stored.push(read_u32(&mut r).map_err(|_| fmt_err("truncated shape"))? as usize);
    }
    if stored != lens {
        return Ok(None);
    }
    let mut table = SimilarityTable::filled(stored, T::zero());
    let mut buf = [0u8; 8];
    for m in &mut table.pairs {
        let (rows, cols) = (m.rows(), m.cols());
        for a in 0..rows {
            for b in 0..cols {
                r.read_exact(&mut buf).map_err(|_| fmt_err("truncated payload"))?;
                m[(a, b)] = T::of(f64::from_le_bytes(buf));
            }
        }
    }
    let mut rest = Vec::new();
    r.read_to_end(&mut rest).map_err(|e| Error::io(path, e))?;
    if !rest.is_empty() {
        return Err(fmt_err("trailing bytes"));
    }
    Ok(Some(table))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::similarity::cka::LinearCka;
    use crate::zoo::{save_manifest, Layout, ModelGraph, NodeMeta, MANIFEST_VERSION};
    use rand::Rng;

    fn zoo_on_disk(dir: &Path, lens: &[usize], n: usize) -> ZooManifest {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let models = lens
            .iter()
            .enumerate()
            .map(|(i, &l)| ModelGraph {
                model_id: format!("m{i}"),
                input_shape: (3, 1, 1),
                nodes: (0..l)
                    .map(|a| {
                        let name = format!("m{i}_n{a}.fmx");
                        let f = Mat::<f32>::from_fn(n, 3 + a, |_, _| rng.random::<f32>());
                        formats::write_features(&dir.join(&name), &f).unwrap();
                        NodeMeta {
                            node_id: a,
                            param_count: 10,
                            flops: 10.0,
                            out_channels: (3 + a) as u32,
                            out_spatial: (1, 1),
                            layout: Layout::Tokens,
                            feature_ref: Some(name.into()),
                            code_ref: None,
                        }
                    })
                    .collect(),
            })
            .collect();
        let m = ZooManifest {
            version: MANIFEST_VERSION.into(),
            probe_count: n,
            models,
            base_dir: dir.to_path_buf(),
        };
        save_manifest(&m, &dir.join("manifest.json")).unwrap();
        m
    }

    #[test]
    fn offsets_cover_all_pairs_once() {
        let t = SimilarityTable::<f64>::filled(vec![2, 3, 4, 1], 0.0);
        let mut seen = Vec::new();
        for i in 0..4 {
            for j in i..4 {
                let off = t.offset(i, j);
                assert_eq!(t.pairs[off].rows(), t.lens[i]);
                assert_eq!(t.pairs[off].cols(), t.lens[j]);
                seen.push(off);
            }
        }
        seen.sort_unstable();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn get_reads_either_orientation() {
        let mut t = SimilarityTable::<f64>::filled(vec![2, 3], 0.0);
        t.set(1, 2, 0, 1, 0.7);
        assert_eq!(t.get(0, 1, 1, 2), Some(0.7));
        assert_eq!(t.get(1, 2, 0, 1), Some(0.7));
        assert_eq!(t.get(0, 2, 1, 0), None);
        assert_eq!(t.get(2, 0, 0, 0), None);
    }

    #[test]
    fn counts_and_warm_cache() {
        let dir = tempfile::tempdir().unwrap();
        let m = zoo_on_disk(dir.path(), &[3, 4], 20);
        let cache = dir.path().join("cache").join("t.stb");
        let opts = TableOptions { subsample: 1.0, seed: 0 };
        let (t, stats) = build_similarity_table::<f64>(&m, &opts, &LinearCka, Some(&cache)).unwrap();
        assert_eq!(stats.evaluations, 3 * 4 + 6 + 10);
        assert!(!stats.from_cache);
        assert_eq!(t.max_asymmetry(), 0.0);
        for i in 0..2 {
            for a in 0..t.len(i) {
                assert!((t.get(i, a, i, a).unwrap() - 1.0).abs() < 1e-6);
            }
        }
        let (t2, stats2) = build_similarity_table::<f64>(&m, &opts, &LinearCka, Some(&cache)).unwrap();
        assert_eq!(stats2.evaluations, 0);
        assert!(stats2.from_cache);
        assert_eq!(t, t2);

        // a different seed changes the key, so the cache is rebuilt
        let other = TableOptions { subsample: 0.5, seed: 3 };
        let (_, stats3) = build_similarity_table::<f64>(&m, &other, &LinearCka, Some(&cache)).unwrap();
        assert!(!stats3.from_cache);
        assert_eq!(stats3.rows_used, 10);
    }

    #[test]
    fn degenerate_feature_zeroes_entries_with_warning() {
        let dir = tempfile::tempdir().unwrap();
        let m = zoo_on_disk(dir.path(), &[2], 8);
        formats::write_features(&dir.path().join("m0_n1.fmx"), &Mat::<f32>::zeros(8, 4)).unwrap();
        let (t, stats) = build_similarity_table::<f64>(
            &m,
            &TableOptions { subsample: 1.0, seed: 0 },
            &LinearCka,
            None,
        )
        .unwrap();
        assert_eq!(t.get(0, 1, 0, 1), Some(0.0));
        assert_eq!(t.get(0, 0, 0, 1), Some(0.0));
        assert_eq!(stats.warnings.len(), 2);
    }

    #[test]
    fn subsample_is_seeded_and_bounded() {
        assert_eq!(subsample_rows(5, 1.0, 1).unwrap(), vec![0, 1, 2, 3, 4]);
        assert_eq!(subsample_rows(100, 0.05, 4).unwrap().len(), 5);
        assert_eq!(subsample_rows(10, 0.01, 4).unwrap().len(), 2);
        assert_eq!(subsample_rows(100, 0.05, 4).unwrap(), subsample_rows(100, 0.05, 4).unwrap());
        assert!(subsample_rows(10, 0.0, 0).is_err());
    }

    #[test]
    fn diagonal_pattern() {
        assert!(on_diagonal(0, 3, 0, 5) && on_diagonal(2, 3, 4, 5) && on_diagonal(1, 3, 2, 5));
        assert!(!on_diagonal(0, 3, 4, 5));
        let mut t = SimilarityTable::filled(vec![3, 3], 0.2);
        for a in 0..3 {
            t.set(0, a, 1, a, 0.9);
        }
        let d = diagonal_statistic(&t, 0, 1).unwrap();
        assert!((d - 0.7).abs() < 1e-12);
        let flat = SimilarityTable::filled(vec![1, 1], 0.5);
        assert_eq!(diagonal_statistic(&flat, 0, 1), None);
    }
}
