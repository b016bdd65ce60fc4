//! Vector representations of windows, clips and tags.
//!
//! Every representation lives in the k-dimensional audio-word space (or a
//! concatenation / SVD reduction of it):
//!
//! - a window is a point on the probability simplex over audio-words,
//! - an AUDIO clip embedding is the mean of its window encodings,
//! - a tag is the mean AUDIO embedding of the training clips carrying it,
//!   reweighted with positive pointwise mutual information,
//! - an ADSM clip embedding is the mean of its tags' PPMI rows,
//! - a FUSION embedding mixes AUDIO and ADSM vectors with weight `w`.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::corpus::ClipId;
use crate::features::FeatureMatrix;
use crate::vocab::AudioWordVocabulary;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Space {
    Audio,
    Adsm,
    AdsmAutotag,
    Fusion,
    FusionAutotag,
}

impl Space {
    pub const ALL: [Space; 5] = [
        Space::Audio,
        Space::Adsm,
        Space::AdsmAutotag,
        Space::Fusion,
        Space::FusionAutotag,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Space::Audio => "audio",
            Space::Adsm => "adsm",
            Space::AdsmAutotag => "adsm-autotag",
            Space::Fusion => "fusion",
            Space::FusionAutotag => "fusion-autotag",
        }
    }

    /// Whether clip tags come from the auto-tagger instead of annotations.
    pub fn uses_autotag(self) -> bool {
        matches!(self, Space::AdsmAutotag | Space::FusionAutotag)
    }

    pub fn is_semantic(self) -> bool {
        self != Space::Audio
    }

    pub fn is_fusion(self) -> bool {
        matches!(self, Space::Fusion | Space::FusionAutotag)
    }
}

impl fmt::Display for Space {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Space {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Space::ALL
            .into_iter()
            .find(|sp| sp.as_str() == s.to_ascii_lowercase().replace('_', "-"))
            .ok_or_else(|| Error::InvalidParameter(format!("unknown embedding space `{s}`")))
    }
}

/// How a window's similarities to the audio-words become weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Encoding {
    /// Cosine similarities clipped at zero and normalized to sum to one.
    #[default]
    SoftCosine,
    /// All weight on the nearest audio-word (Euclidean).
    Hard,
}

impl FromStr for Encoding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "soft-cosine" => Ok(Encoding::SoftCosine),
            "hard" => Ok(Encoding::Hard),
            _ => Err(Error::InvalidParameter(format!("unknown encoding `{s}`"))),
        }
    }
}

fn nearest_centroid(x: &[f64], vocab: &AudioWordVocabulary) -> usize {
    let mut best = (0, f64::INFINITY);
    for i in 0..vocab.k() {
        let d: f64 = x
            .iter()
            .zip(vocab.centroid(i))
            .map(|(a, b)| (a - b) * (a - b))
            .sum();
        if d < best.1 {
            best = (i, d);
        }
    }
    best.0
}

fn one_hot(k: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; k];
    v[i] = 1.0;
    v
}

/// Encodes one already-normalized feature vector as audio-word weights.
///
/// Soft-cosine falls back to hard assignment when `x` is the zero vector or
/// no audio-word has a positive cosine with it.
pub fn encode_window(
    x: &[f64],
    vocab: &AudioWordVocabulary,
    encoding: Encoding,
) -> Result<Vec<f64>> {
    vocab.check_dim(x.len())?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Validation(
            "window feature vector is not finite".into(),
        ));
    }
    let k = vocab.k();
    if encoding == Encoding::Hard {
        return Ok(one_hot(k, nearest_centroid(x, vocab)));
    }
    let x_norm = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    if x_norm == 0.0 {
        return Ok(one_hot(k, nearest_centroid(x, vocab)));
    }
    let mut weights: Vec<f64> = (0..k)
        .map(|i| {
            let cn = vocab.centroid_norms()[i];
            if cn == 0.0 {
                return 0.0;
            }
            let dot: f64 = x.iter().zip(vocab.centroid(i)).map(|(a, b)| a * b).sum();
            (dot / (x_norm * cn)).max(0.0)
        })
        .collect();
    let total: f64 = weights.iter().sum();
    if total.is_nan() || total <= 0.0 {
        return Ok(one_hot(k, nearest_centroid(x, vocab)));
    }
    weights.iter_mut().for_each(|w| *w /= total);
    Ok(weights)
}

/// AUDIO embedding: normalizes each raw window with the vocabulary's
/// statistics, encodes it, and averages the encodings.
pub fn clip_audio_embedding(
    m: &FeatureMatrix,
    vocab: &AudioWordVocabulary,
    encoding: Encoding,
) -> Result<Vec<f64>> {
    vocab.check_dim(m.dim())?;
    if m.is_empty() {
        return Err(Error::Empty("clip feature matrix"));
    }
    let k = vocab.k();
    let mut acc = vec![0.0; k];
    let mut normed = vec![0.0; m.dim()];
    for row in m.iter_rows() {
        vocab.norm_stats().apply_row(row, &mut normed);
        let e = encode_window(&normed, vocab, encoding)?;
        acc.iter_mut().zip(&e).for_each(|(a, w)| *a += w);
    }
    let n = m.rows() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    Ok(acc)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipEmbedding {
    pub clip_id: ClipId,
    pub space: Space,
    pub vector: Vec<f64>,
}

/// PPMI reweighting of a non-negative `rows × cols` matrix (row-major),
/// with marginals taken over the matrix itself. Zero cells stay zero.
pub fn ppmi_weight(raw: &[f64], rows: usize, cols: usize) -> Result<Vec<f64>> {
    if rows * cols != raw.len() || cols == 0 {
        return Err(Error::Shape {
            context: "PPMI input",
            expected: rows * cols,
            found: raw.len(),
        });
    }
    if raw.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::Validation(
            "PPMI input must be finite and non-negative".into(),
        ));
    }
    let total: f64 = raw.iter().sum();
    if total.is_nan() || total <= 0.0 {
        return Err(Error::Validation("PPMI input sums to zero".into()));
    }
    let row_sums: Vec<f64> = raw.chunks_exact(cols).map(|r| r.iter().sum()).collect();
    let mut col_sums = vec![0.0; cols];
    for r in raw.chunks_exact(cols) {
        col_sums.iter_mut().zip(r).for_each(|(c, v)| *c += v);
    }
    Ok(raw
        .iter()
        .enumerate()
        .map(|(idx, &x)| {
            if x == 0.0 {
                return 0.0;
            }
            let (i, j) = (idx / cols, idx % cols);
            // p_ij / (p_i p_j) = x S / (r_i c_j)
            ((x / row_sums[i]) * (total / col_sums[j])).ln().max(0.0)
        })
        .collect())
}

/// Tag embeddings: raw mean clip embeddings and their PPMI view.
#[derive(Debug, Clone, PartialEq)]
pub struct TagMatrix {
    tags: Vec<String>,
    dim: usize,
    raw: Vec<f64>,
    ppmi: Vec<f64>,
    ppmi_unit: Vec<f64>,
    index: HashMap<String, usize>,
}

impl TagMatrix {
    pub fn from_parts(tags: Vec<String>, dim: usize, raw: Vec<f64>) -> Result<Self> {
        if tags.is_empty() {
            return Err(Error::Empty("tag matrix"));
        }
        let ppmi = ppmi_weight(&raw, tags.len(), dim)?;
        let ppmi_unit = ppmi
            .chunks_exact(dim)
            .flat_map(|row| {
                let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
                row.iter().map(move |v| if n > 0.0 { v / n } else { 0.0 })
            })
            .collect();
        let mut index = HashMap::with_capacity(tags.len());
        for (i, t) in tags.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::Validation(format!("duplicate tag `{t}`")));
            }
        }
        Ok(Self {
            tags,
            dim,
            raw,
            ppmi,
            ppmi_unit,
            index,
        })
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn tag_index(&self, tag: &str) -> Option<usize> {
        self.index.get(tag).copied()
    }

    pub fn raw_row(&self, i: usize) -> &[f64] {
        &self.raw[i * self.dim..(i + 1) * self.dim]
    }

    pub fn ppmi_row(&self, i: usize) -> &[f64] {
        &self.ppmi[i * self.dim..(i + 1) * self.dim]
    }

    /// PPMI row scaled to unit length (all zeros for an all-zero row).
    pub fn ppmi_unit_row(&self, i: usize) -> &[f64] {
        &self.ppmi_unit[i * self.dim..(i + 1) * self.dim]
    }

    pub fn raw(&self) -> &[f64] {
        &self.raw
    }

    pub fn ppmi(&self) -> &[f64] {
        &self.ppmi
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = format!("{TAG_MAGIC} {} {}\n", self.tags.len(), self.dim).into_bytes();
        for t in &self.tags {
            out.extend_from_slice(t.as_bytes());
            out.push(b'\n');
        }
        for v in &self.raw {
            out.extend_from_slice(&v.to_le_bytes());
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    /// The PPMI view is recomputed from the stored raw matrix.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fmt_err = |m: &str| Error::Format(format!("tag matrix: {m}"));
        if bytes.len() < 4 {
            return Err(fmt_err("truncated"));
        }
        let (body, crc) = bytes.split_at(bytes.len() - 4);
        if crc32fast::hash(body) != u32::from_le_bytes(crc.try_into().expect("4 bytes")) {
            return Err(fmt_err("checksum mismatch"));
        }
        let mut pos = 0;
        let mut next_line = || -> Result<&str> {
            let nl = body[pos..]
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| fmt_err("truncated header"))?;
            let line =
                std::str::from_utf8(&body[pos..pos + nl]).map_err(|_| fmt_err("non UTF-8 text"))?;
            pos += nl + 1;
            Ok(line)
        };
        let header = next_line()?;
        let parts: Vec<&str> = header.split(' ').collect();
        if parts.len() != 3 || parts[0] != TAG_MAGIC {
            return Err(fmt_err("bad header"));
        }
        let t: usize = parts[1].parse().map_err(|_| fmt_err("bad tag count"))?;
        let dim: usize = parts[2].parse().map_err(|_| fmt_err("bad dimension"))?;
        let tags = (0..t)
            .map(|_| next_line().map(str::to_owned))
            .collect::<Result<Vec<_>>>()?;
        let payload = &body[pos..];
        if payload.len() != t * dim * 8 {
            return Err(fmt_err("payload size does not match header"));
        }
        let raw = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Self::from_parts(tags, dim, raw)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}

const TAG_MAGIC: &str = "ADSMTAG1";

/// Averages the AUDIO embeddings of the clips carrying each tag.
///
/// `tag_list` fixes the row order; tags no clip carries are dropped with a
/// warning. Clips without tags contribute nothing.
pub fn build_tag_matrix(
    tag_list: &[String],
    clips: &[(&BTreeSet<String>, &[f64])],
) -> Result<TagMatrix> {
    let dim = clips
        .first()
        .ok_or(Error::Empty("tag matrix training clips"))?
        .1
        .len();
    let mut sums = vec![0.0; tag_list.len() * dim];
    let mut counts = vec![0usize; tag_list.len()];
    let position: HashMap<&str, usize> = tag_list
        .iter()
        .enumerate()
        .map(|(i, t)| (t.as_str(), i))
        .collect();
    for (tags, emb) in clips {
        if emb.len() != dim {
            return Err(Error::Shape {
                context: "tag matrix clip embedding",
                expected: dim,
                found: emb.len(),
            });
        }
        for tag in tags.iter() {
            if let Some(&i) = position.get(tag.as_str()) {
                counts[i] += 1;
                sums[i * dim..(i + 1) * dim]
                    .iter_mut()
                    .zip(emb.iter())
                    .for_each(|(s, v)| *s += v);
            }
        }
    }
    let mut tags = Vec::new();
    let mut raw = Vec::new();
    for (i, tag) in tag_list.iter().enumerate() {
        if counts[i] == 0 {
            log::warn!("tag `{tag}` has no annotated training clip; dropped");
            continue;
        }
        tags.push(tag.clone());
        let n = counts[i] as f64;
        raw.extend(sums[i * dim..(i + 1) * dim].iter().map(|s| s / n));
    }
    if tags.is_empty() {
        return Err(Error::Empty("tagged training clips"));
    }
    TagMatrix::from_parts(tags, dim, raw)
}

/// Mean of the PPMI rows of the clip's tags that the matrix knows.
pub fn semantic_clip_embedding<'a, I>(clip: &ClipId, tags: I, tm: &TagMatrix) -> Result<Vec<f64>>
where
    I: IntoIterator<Item = &'a str>,
{
    let mut acc = vec![0.0; tm.dim()];
    let mut n = 0usize;
    for tag in tags {
        match tm.tag_index(tag) {
            Some(i) => {
                acc.iter_mut()
                    .zip(tm.ppmi_row(i))
                    .for_each(|(a, v)| *a += v);
                n += 1;
            }
            None => log::warn!("clip `{clip}`: tag `{tag}` has no training row; ignored"),
        }
    }
    if n == 0 {
        return Err(Error::NoTags(clip.clone()));
    }
    acc.iter_mut().for_each(|a| *a /= n as f64);
    Ok(acc)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FusionMode {
    #[default]
    Average,
    Concatenate,
}

impl FromStr for FusionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "average" => Ok(FusionMode::Average),
            "concatenate" => Ok(FusionMode::Concatenate),
            _ => Err(Error::InvalidParameter(format!(
                "unknown fusion mode `{s}`"
            ))),
        }
    }
}

impl fmt::Display for FusionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FusionMode::Average => "average",
            FusionMode::Concatenate => "concatenate",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    /// Weight of the semantic part.
    pub w: f64,
    pub mode: FusionMode,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            w: 0.9,
            mode: FusionMode::Average,
        }
    }
}

/// `w·semantic + (1−w)·audio`, or the concatenation `[w·semantic, (1−w)·audio]`.
pub fn fuse(audio: &[f64], semantic: &[f64], cfg: &FusionConfig) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&cfg.w) {
        return Err(Error::InvalidParameter(format!(
            "fusion weight {} outside [0, 1]",
            cfg.w
        )));
    }
    let w = cfg.w;
    match cfg.mode {
        FusionMode::Average => {
            if audio.len() != semantic.len() {
                return Err(Error::Shape {
                    context: "weighted-average fusion",
                    expected: audio.len(),
                    found: semantic.len(),
                });
            }
            Ok(semantic
                .iter()
                .zip(audio)
                .map(|(s, a)| w * s + (1.0 - w) * a)
                .collect())
        }
        FusionMode::Concatenate => Ok(semantic
            .iter()
            .map(|s| w * s)
            .chain(audio.iter().map(|a| (1.0 - w) * a))
            .collect()),
    }
}

/// Projection onto the top right singular vectors of a training matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvdProjector {
    rank: usize,
    input_dim: usize,
    /// input_dim × rank, row-major; columns are orthonormal
    basis: Vec<f64>,
    singular_values: Vec<f64>,
    fitted_on: Space,
}

impl SvdProjector {
    /// Fits on `rows` (each of equal length) without mean-centering.
    pub fn fit<R: AsRef<[f64]>>(rows: &[R], rank: usize, fitted_on: Space) -> Result<Self> {
        let m = rows.len();
        let n = rows
            .first()
            .ok_or(Error::Empty("SVD training matrix"))?
            .as_ref()
            .len();
        if rank == 0 || rank > m.min(n) {
            return Err(Error::InvalidParameter(format!(
                "SVD rank {rank} must be in 1..={} for a {m}x{n} matrix",
                m.min(n)
            )));
        }
        let mut data = Vec::with_capacity(m * n);
        for r in rows {
            let r = r.as_ref();
            if r.len() != n {
                return Err(Error::Shape {
                    context: "SVD training rows",
                    expected: n,
                    found: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        let mat = DMatrix::from_row_slice(m, n, &data);
        let svd = mat.svd(false, true);
        let v_t = svd
            .v_t
            .ok_or_else(|| Error::Validation("SVD did not converge".into()))?;
        let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
        order.sort_by(|&a, &b| {
            svd.singular_values[b]
                .total_cmp(&svd.singular_values[a])
                .then(a.cmp(&b))
        });
        let mut basis = vec![0.0; n * rank];
        let mut singular_values = Vec::with_capacity(rank);
        for (col, &idx) in order.iter().take(rank).enumerate() {
            let v: Vec<f64> = (0..n).map(|i| v_t[(idx, i)]).collect();
            // sign convention: largest-magnitude component positive
            let pivot = v
                .iter()
                .copied()
                .enumerate()
                .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then(b.0.cmp(&a.0)))
                .map(|(_, x)| x)
                .unwrap_or(1.0);
            let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
            for (i, x) in v.into_iter().enumerate() {
                basis[i * rank + col] = sign * x;
            }
            singular_values.push(svd.singular_values[idx]);
        }
        Ok(Self {
            rank,
            input_dim: n,
            basis,
            singular_values,
            fitted_on,
        })
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn fitted_on(&self) -> Space {
        self.fitted_on
    }

    pub fn singular_values(&self) -> &[f64] {
        &self.singular_values
    }

    /// Column `j` of the basis.
    pub fn basis_column(&self, j: usize) -> Vec<f64> {
        (0..self.input_dim)
            .map(|i| self.basis[i * self.rank + j])
            .collect()
    }

    pub fn project(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.input_dim {
            return Err(Error::Shape {
                context: "SVD projection",
                expected: self.input_dim,
                found: v.len(),
            });
        }
        let mut out = vec![0.0; self.rank];
        for (x, row) in v.iter().zip(self.basis.chunks_exact(self.rank)) {
            out.iter_mut().zip(row).for_each(|(o, b)| *o += x * b);
        }
        Ok(out)
    }
}
