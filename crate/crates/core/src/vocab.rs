//! Audio-word vocabulary: k-means centroids of normalized window features.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rand::seq::index;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::ClipId;
use crate::features::{FeatureMatrix, NormalizationStats};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocabTrainConfig {
    pub k: usize,
    pub max_clips: usize,
    pub max_iters: usize,
    /// Stop once the relative inertia improvement of an iteration drops below this.
    pub tol: f64,
    pub seed: u64,
    pub restarts: usize,
}

impl Default for VocabTrainConfig {
    fn default() -> Self {
        Self {
            k: 300,
            max_clips: 1000,
            max_iters: 100,
            tol: 1e-6,
            seed: 0,
            restarts: 1,
        }
    }
}

impl VocabTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::InvalidParameter(format!(
                "k must be at least 2, got {}",
                self.k
            )));
        }
        if self.max_clips == 0 {
            return Err(Error::InvalidParameter(
                "max_clips must be at least 1".into(),
            ));
        }
        if self.tol.is_nan() || self.tol < 0.0 {
            return Err(Error::InvalidParameter(format!(
                "tol must be non-negative, got {}",
                self.tol
            )));
        }
        if self.restarts == 0 || self.max_iters == 0 {
            return Err(Error::InvalidParameter(
                "restarts and max_iters must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Uniform sample without replacement of `min(max_clips, |ids|)` clips.
///
/// Ids are sorted before sampling so the result depends only on the id set
/// and the seed. The returned subset is sorted.
pub fn sample_training_clips(ids: &[ClipId], max_clips: usize, seed: u64) -> Vec<ClipId> {
    let mut sorted: Vec<ClipId> = ids.to_vec();
    sorted.sort();
    sorted.dedup();
    if sorted.len() <= max_clips {
        return sorted;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = index::sample(&mut rng, sorted.len(), max_clips).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| sorted[i].clone()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    pub dim: usize,
    /// k × dim, row-major
    pub centroids: Vec<f64>,
    pub assignments: Vec<usize>,
    pub inertia: f64,
    /// Inertia after every assignment step, ending with the inertia of the
    /// final centroids.
    pub history: Vec<f64>,
}

impl KMeansResult {
    pub fn k(&self) -> usize {
        self.centroids.len() / self.dim
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(row: &[f64], centroids: &[f64], dim: usize) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.chunks_exact(dim).enumerate() {
        let d = sq_dist(row, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// k-means++ seeding. Fails when fewer than `k` distinct rows exist.
fn kmeans_pp_init(data: &[f64], dim: usize, k: usize, rng: &mut impl Rng) -> Result<Vec<f64>> {
    let n = data.len() / dim;
    let row = |i: usize| &data[i * dim..(i + 1) * dim];
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.random_range(0..n);
    centroids.extend_from_slice(row(first));
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(row(i), row(first))).collect();
    for _ in 1..k {
        let total: f64 = d2.iter().sum();
        if total.is_nan() || total <= 0.0 {
            let distinct = data
                .chunks_exact(dim)
                .map(|r| r.iter().map(|v| v.to_bits()).collect::<Vec<_>>())
                .collect::<HashSet<_>>()
                .len();
            return Err(Error::InsufficientData { rows: distinct, k });
        }
        let mut target = rng.random_range(0.0..total);
        let mut chosen = n - 1;
        for (i, &w) in d2.iter().enumerate() {
            if w > 0.0 {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
                chosen = i;
            }
        }
        let c = row(chosen).to_vec();
        d2.par_iter_mut().enumerate().for_each(|(i, slot)| {
            let d = sq_dist(row(i), &c);
            if d < *slot {
                *slot = d;
            }
        });
        centroids.extend_from_slice(&c);
    }
    Ok(centroids)
}

fn lloyd(
    data: &[f64],
    dim: usize,
    mut centroids: Vec<f64>,
    max_iters: usize,
    tol: f64,
) -> KMeansResult {
    let n = data.len() / dim;
    let k = centroids.len() / dim;
    let mut history = Vec::new();
    let mut assignments: Vec<usize> = Vec::new();
    for _ in 0..max_iters {
        let assigned: Vec<(usize, f64)> = data
            .par_chunks_exact(dim)
            .map(|r| nearest(r, &centroids, dim))
            .collect();
        let mut new_assign: Vec<usize> = assigned.iter().map(|a| a.0).collect();
        let mut dists: Vec<f64> = assigned.iter().map(|a| a.1).collect();

        // re-seed empty clusters with the point farthest from its centroid,
        // only taking points whose cluster keeps at least one member
        let mut counts = vec![0usize; k];
        new_assign.iter().for_each(|&j| counts[j] += 1);
        for j in 0..k {
            if counts[j] > 0 {
                continue;
            }
            let far = (0..n)
                .filter(|&i| counts[new_assign[i]] > 1)
                .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)));
            if let Some(i) = far {
                counts[new_assign[i]] -= 1;
                counts[j] = 1;
                new_assign[i] = j;
                dists[i] = 0.0;
                centroids[j * dim..(j + 1) * dim].copy_from_slice(&data[i * dim..(i + 1) * dim]);
            }
        }

        let inertia: f64 = dists.iter().sum();
        let unchanged = new_assign == assignments;
        let prev = history.last().copied();
        history.push(inertia);
        assignments = new_assign;
        centroids = cluster_means(data, dim, &assignments, &centroids);
        if unchanged {
            break;
        }
        if let Some(prev) = prev {
            if prev - inertia <= tol * prev {
                break;
            }
        }
    }
    let inertia: f64 = data
        .chunks_exact(dim)
        .zip(&assignments)
        .map(|(r, &j)| sq_dist(r, &centroids[j * dim..(j + 1) * dim]))
        .sum();
    history.push(inertia);
    KMeansResult {
        dim,
        centroids,
        assignments,
        inertia,
        history,
    }
}

fn cluster_means(data: &[f64], dim: usize, assignments: &[usize], previous: &[f64]) -> Vec<f64> {
    let k = previous.len() / dim;
    let mut sums = vec![0.0; k * dim];
    let mut counts = vec![0usize; k];
    for (r, &j) in data.chunks_exact(dim).zip(assignments) {
        counts[j] += 1;
        sums[j * dim..(j + 1) * dim]
            .iter_mut()
            .zip(r)
            .for_each(|(s, x)| *s += x);
    }
    for j in 0..k {
        let slot = &mut sums[j * dim..(j + 1) * dim];
        if counts[j] == 0 {
            slot.copy_from_slice(&previous[j * dim..(j + 1) * dim]);
        } else {
            let c = counts[j] as f64;
            slot.iter_mut().for_each(|s| *s /= c);
        }
    }
    sums
}

/// Lloyd's algorithm with k-means++ seeding and squared Euclidean distance.
/// With several restarts the lowest-inertia run wins (earliest on ties).
pub fn kmeans(
    data: &[f64],
    dim: usize,
    k: usize,
    max_iters: usize,
    tol: f64,
    restarts: usize,
    rng: &mut impl RngCore,
) -> Result<KMeansResult> {
    if dim == 0 || !data.len().is_multiple_of(dim) {
        return Err(Error::InvalidParameter(
            "data length is not a multiple of dim".into(),
        ));
    }
    if k < 1 {
        return Err(Error::InvalidParameter("k must be at least 1".into()));
    }
    let n = data.len() / dim;
    if n < k {
        return Err(Error::InsufficientData { rows: n, k });
    }
    let mut best: Option<KMeansResult> = None;
    for _ in 0..restarts.max(1) {
        let mut run_rng = ChaCha8Rng::seed_from_u64(rng.next_u64());
        let init = kmeans_pp_init(data, dim, k, &mut run_rng)?;
        let run = lloyd(data, dim, init, max_iters.max(1), tol);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Trained audio-words plus the normalization they were trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioWordVocabulary {
    dim: usize,
    centroids: Vec<f64>,
    centroid_norms: Vec<f64>,
    norm_stats: NormalizationStats,
    seed: u64,
    inertia: f64,
}

impl AudioWordVocabulary {
    pub fn new(
        dim: usize,
        centroids: Vec<f64>,
        norm_stats: NormalizationStats,
        seed: u64,
        inertia: f64,
    ) -> Result<Self> {
        if dim == 0 || !centroids.len().is_multiple_of(dim) || centroids.len() / dim < 2 {
            return Err(Error::InvalidParameter(
                "vocabulary needs k >= 2 centroids of positive dimension".into(),
            ));
        }
        if norm_stats.dim() != dim || norm_stats.std.len() != dim {
            return Err(Error::Shape {
                context: "vocabulary normalization stats",
                expected: dim,
                found: norm_stats.dim(),
            });
        }
        if centroids
            .iter()
            .chain(&norm_stats.mean)
            .chain(&norm_stats.std)
            .any(|v| !v.is_finite())
        {
            return Err(Error::Validation(
                "vocabulary contains non-finite values".into(),
            ));
        }
        let centroid_norms = centroids
            .chunks_exact(dim)
            .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect();
        Ok(Self {
            dim,
            centroids,
            centroid_norms,
            norm_stats,
            seed,
            inertia,
        })
    }

    pub fn k(&self) -> usize {
        self.centroids.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn centroid(&self, i: usize) -> &[f64] {
        &self.centroids[i * self.dim..(i + 1) * self.dim]
    }

    pub fn centroids(&self) -> &[f64] {
        &self.centroids
    }

    pub fn centroid_norms(&self) -> &[f64] {
        &self.centroid_norms
    }

    pub fn norm_stats(&self) -> &NormalizationStats {
        &self.norm_stats
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn inertia(&self) -> f64 {
        self.inertia
    }

    /// CRC32 of the serialized vocabulary.
    pub fn checksum(&self) -> u32 {
        let bytes = self.to_bytes();
        u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().expect("4 bytes"))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = format!(
            "{VOCAB_MAGIC}{VOCAB_VERSION} {} {} {}\n",
            self.k(),
            self.dim,
            self.seed
        )
        .into_bytes();
        for v in self
            .centroids
            .iter()
            .chain(&self.norm_stats.mean)
            .chain(&self.norm_stats.std)
            .chain(std::iter::once(&self.inertia))
        {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let nl = bytes
            .iter()
            .take(128)
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Format("vocabulary file has no header line".into()))?;
        let header = std::str::from_utf8(&bytes[..nl])
            .map_err(|_| Error::Format("vocabulary header is not UTF-8".into()))?;
        let mut parts = header.split(' ');
        let magic = parts.next().unwrap_or_default();
        let version = magic
            .strip_prefix(VOCAB_MAGIC)
            .ok_or_else(|| Error::Format(format!("not a vocabulary file (header `{header}`)")))?;
        if version != VOCAB_VERSION {
            return Err(Error::Format(format!(
                "vocabulary format version {version} is not supported (expected {VOCAB_VERSION})"
            )));
        }
        let mut field = |what: &str| -> Result<u64> {
            parts
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Format(format!("vocabulary header lacks {what}")))
        };
        let k = field("k")? as usize;
        let dim = field("dimension")? as usize;
        let seed = field("seed")?;
        let floats = k
            .checked_mul(dim)
            .and_then(|n| n.checked_add(2 * dim + 1))
            .ok_or_else(|| Error::Format("vocabulary header sizes overflow".into()))?;
        let expected = nl + 1 + floats * 8 + 4;
        if bytes.len() != expected {
            return Err(Error::Format(format!(
                "vocabulary file is {} bytes, header implies {expected}",
                bytes.len()
            )));
        }
        let (body, crc) = bytes.split_at(bytes.len() - 4);
        if crc32fast::hash(body) != u32::from_le_bytes(crc.try_into().expect("4 bytes")) {
            return Err(Error::Format("vocabulary checksum mismatch".into()));
        }
        let values: Vec<f64> = body[nl + 1..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        let (centroids, rest) = values.split_at(k * dim);
        let (mean, rest) = rest.split_at(dim);
        let (std, inertia) = rest.split_at(dim);
        let stats = NormalizationStats {
            mean: mean.to_vec(),
            std: std.to_vec(),
        };
        Self::new(dim, centroids.to_vec(), stats, seed, inertia[0])
            .map_err(|e| Error::Format(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    /// Errors unless feature rows of width `dim` can be encoded.
    pub fn check_dim(&self, dim: usize) -> Result<()> {
        if dim != self.dim {
            return Err(Error::Shape {
                context: "feature dimension vs vocabulary",
                expected: self.dim,
                found: dim,
            });
        }
        Ok(())
    }
}

const VOCAB_MAGIC: &str = "ADSMVOC";
const VOCAB_VERSION: &str = "1";

/// Normalizes the pooled windows of the sampled clips and clusters them.
///
/// Rows are ordered by `(clip id, window index)` before clustering, so the
/// order in which clips are supplied has no effect.
pub fn train_vocabulary(
    pool: &[(&ClipId, &FeatureMatrix)],
    norm_stats: NormalizationStats,
    cfg: &VocabTrainConfig,
) -> Result<AudioWordVocabulary> {
    cfg.validate()?;
    let mut pool = pool.to_vec();
    pool.sort_by(|a, b| a.0.cmp(b.0));
    let dim = norm_stats.dim();
    let mut data = Vec::new();
    for (_, m) in &pool {
        if m.dim() != dim {
            return Err(Error::Shape {
                context: "vocabulary training features",
                expected: dim,
                found: m.dim(),
            });
        }
        data.extend_from_slice(norm_stats.apply(m)?.as_slice());
    }
    let rows = data.len() / dim.max(1);
    if rows < cfg.k {
        return Err(Error::InsufficientData { rows, k: cfg.k });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let result = kmeans(
        &data,
        dim,
        cfg.k,
        cfg.max_iters,
        cfg.tol,
        cfg.restarts,
        &mut rng,
    )?;
    log::debug!(
        "k-means: k={} rows={} iterations={} inertia={}",
        cfg.k,
        rows,
        result.history.len() - 1,
        result.inertia
    );
    AudioWordVocabulary::new(dim, result.centroids, norm_stats, cfg.seed, result.inertia)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha8Rng;

    fn ids(n: usize) -> Vec<ClipId> {
        (0..n).map(|i| ClipId::new(format!("clip{i:05}"))).collect()
    }

    #[test]
    fn sampling_caps_and_is_deterministic() {
        let small = ids(50);
        assert_eq!(sample_training_clips(&small, 1000, 1).len(), 50);
        let big = ids(5000);
        let a = sample_training_clips(&big, 1000, 9);
        let b = sample_training_clips(&big, 1000, 9);
        assert_eq!(a, b);
        assert_eq!(a.len(), 1000);
        assert_eq!(a.iter().collect::<HashSet<_>>().len(), 1000);
        assert_ne!(a, sample_training_clips(&big, 1000, 10));
        let mut shuffled = big.clone();
        shuffled.reverse();
        assert_eq!(a, sample_training_clips(&shuffled, 1000, 9));
    }

    fn blobs(seed: u64) -> (Vec<f64>, [[f64; 2]; 2]) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let means = [[-5.0, 0.0], [5.0, 3.0]];
        let mut data = Vec::new();
        for m in &means {
            for _ in 0..500 {
                // sum of uniforms: roughly Gaussian, sd ~0.5
                for &mu in m {
                    let z: f64 = (0..12).map(|_| rng.random_range(0.0..1.0)).sum::<f64>() - 6.0;
                    data.push(mu + 0.5 * z);
                }
            }
        }
        (data, means)
    }

    #[test]
    fn two_blobs_recover_means() {
        let (data, means) = blobs(3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let r = kmeans(&data, 2, 2, 100, 1e-9, 1, &mut rng).unwrap();
        for m in &means {
            let close = r
                .centroids
                .chunks_exact(2)
                .any(|c| ((c[0] - m[0]).powi(2) + (c[1] - m[1]).powi(2)).sqrt() < 0.1);
            assert!(close, "no centroid near {m:?}: {:?}", r.centroids);
        }
    }

    #[test]
    fn k_equal_to_distinct_points_gives_zero_inertia() {
        let data = [0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 0.0];
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let r = kmeans(&data, 2, 3, 50, 0.0, 1, &mut rng).unwrap();
        assert_eq!(r.inertia, 0.0);
    }

    #[test]
    fn too_few_rows_or_distinct_points() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            kmeans(&[1.0, 2.0], 1, 3, 10, 0.0, 1, &mut rng),
            Err(Error::InsufficientData { rows: 2, k: 3 })
        ));
        assert!(matches!(
            kmeans(&[1.0, 1.0, 1.0, 2.0], 1, 3, 10, 0.0, 1, &mut rng),
            Err(Error::InsufficientData { rows: 2, k: 3 })
        ));
    }

    #[test]
    fn inertia_history_never_increases_and_centroids_are_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for trial in 0..50 {
            let n = rng.random_range(20..200);
            let data: Vec<f64> = (0..n * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let k = rng.random_range(2..10);
            let r = kmeans(&data, 3, k, 100, 0.0, 1, &mut rng).unwrap();
            for w in r.history.windows(2) {
                assert!(w[1] <= w[0], "trial {trial}: {:?}", r.history);
            }
            let means = cluster_means(&data, 3, &r.assignments, &r.centroids);
            for j in 0..k {
                assert!(r.assignments.contains(&j), "empty cluster {j}");
                for d in 0..3 {
                    assert!((means[j * 3 + d] - r.centroids[j * 3 + d]).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn empty_clusters_are_reseeded() {
        // three centroids, two of them far from every point
        let data = [0.0, 0.1, 0.2, 10.0, 10.1];
        let init = vec![0.1, 100.0, 200.0];
        let r = lloyd(&data, 1, init, 20, 0.0);
        let used: HashSet<usize> = r.assignments.iter().copied().collect();
        assert_eq!(used.len(), 3);
        assert!(r.history.windows(2).all(|w| w[1] <= w[0]));
    }

    fn sample_vocab(seed: u64) -> AudioWordVocabulary {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stats = NormalizationStats {
            mean: (0..4).map(|_| rng.random_range(-1.0..1.0)).collect(),
            std: (0..4).map(|_| rng.random_range(0.5..2.0)).collect(),
        };
        let centroids = (0..5 * 4).map(|_| rng.random_range(-3.0..3.0)).collect();
        AudioWordVocabulary::new(4, centroids, stats, seed, 12.5).unwrap()
    }

    #[test]
    fn vocabulary_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let v = sample_vocab(77);
        let path = dir.path().join("v.awv");
        v.save(&path).unwrap();
        let back = AudioWordVocabulary::load(&path).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.checksum(), v.checksum());
        assert!(back.check_dim(39).is_err());
        assert!(back.check_dim(4).is_ok());
    }

    #[test]
    fn vocabulary_format_errors() {
        let bytes = sample_vocab(5).to_bytes();
        assert!(matches!(
            AudioWordVocabulary::from_bytes(&bytes[..bytes.len() - 9]),
            Err(Error::Format(_))
        ));
        let mut flipped = bytes.clone();
        let mid = bytes.len() / 2;
        flipped[mid] ^= 0x40;
        match AudioWordVocabulary::from_bytes(&flipped) {
            Err(Error::Format(msg)) => assert!(msg.contains("checksum"), "{msg}"),
            other => panic!("{other:?}"),
        }
        let mut v2 = bytes.clone();
        v2[7] = b'2';
        match AudioWordVocabulary::from_bytes(&v2) {
            Err(Error::Format(msg)) => assert!(msg.contains("version"), "{msg}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn training_is_deterministic_and_order_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let clips: Vec<(ClipId, FeatureMatrix)> = (0..6)
            .map(|i| {
                let data = (0..40 * 3).map(|_| rng.random_range(-2.0..2.0)).collect();
                (
                    ClipId::new(format!("c{i}")),
                    FeatureMatrix::new(3, data).unwrap(),
                )
            })
            .collect();
        let pool: Vec<(&ClipId, &FeatureMatrix)> = clips.iter().map(|(a, b)| (a, b)).collect();
        let stats = NormalizationStats::fit(clips.iter().map(|c| &c.1)).unwrap();
        let cfg = VocabTrainConfig {
            k: 8,
            seed: 3,
            ..Default::default()
        };
        let a = train_vocabulary(&pool, stats.clone(), &cfg).unwrap();
        let b = train_vocabulary(&pool, stats.clone(), &cfg).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        let mut reversed = pool.clone();
        reversed.reverse();
        let c = train_vocabulary(&reversed, stats.clone(), &cfg).unwrap();
        assert!((a.inertia() - c.inertia()).abs() <= 1e-9);
        assert_eq!(a.to_bytes(), c.to_bytes());

        let too_big = VocabTrainConfig { k: 1000, ..cfg };
        assert!(matches!(
            train_vocabulary(&pool, stats, &too_big),
            Err(Error::InsufficientData { .. })
        ));
    }
}
