//! Triplet-constraint evaluation: per-fold pipeline, repeated
//! cross-validation and parameter sweeps.
//!
//! Within a fold everything (vocabulary sample, normalization, k-means,
//! tag matrix, SVD) is fitted on training clips only; test clips are only
//! ever embedded. A constraint `(a, b, c)` is satisfied when
//! `cos(a, b) > cos(a, c)`, ties counting as violations.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{ClipId, Corpus, FeatureStore, FoldAssignment, TripletConstraint};
use crate::embed::{
    build_tag_matrix, clip_audio_embedding, fuse, semantic_clip_embedding, Encoding, FusionConfig,
    FusionMode, Space, SvdProjector, TagMatrix,
};
use crate::features::{FeatureMatrix, NormalizationStats};
use crate::tagger::{autotag, cosine};
use crate::vocab::{
    sample_training_clips, train_vocabulary, AudioWordVocabulary, VocabTrainConfig,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FeatureKind {
    #[default]
    Mfccdd,
    Imported,
}

/// Which clips the Z-normalization statistics are fitted on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormScope {
    /// The fold's vocabulary-training clips.
    #[default]
    FoldTrain,
    /// Every clip with features, test clips included.
    Global,
}

/// What ADSM / FUSION do with a clip that has no usable annotation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UntaggedPolicy {
    #[default]
    Autotag,
    /// Leave the clip unembedded; constraints touching it are not scored.
    Skip,
}

macro_rules! kebab_from_str {
    ($ty:ty, $($name:literal => $variant:expr),+ $(,)?) => {
        impl FromStr for $ty {
            type Err = Error;
            fn from_str(s: &str) -> Result<Self> {
                match s {
                    $($name => Ok($variant),)+
                    _ => Err(Error::InvalidParameter(format!(concat!("unknown ", stringify!($ty), " `{}`"), s))),
                }
            }
        }
    };
}

kebab_from_str!(FeatureKind, "mfccdd" => FeatureKind::Mfccdd, "imported" => FeatureKind::Imported, "import" => FeatureKind::Imported);
kebab_from_str!(NormScope, "fold-train" => NormScope::FoldTrain, "global" => NormScope::Global);
kebab_from_str!(UntaggedPolicy, "autotag" => UntaggedPolicy::Autotag, "skip" => UntaggedPolicy::Skip);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MethodSpec {
    pub space: Space,
    pub feature_kind: FeatureKind,
    pub k: usize,
    pub svd_rank: Option<usize>,
    pub w: f64,
    pub fusion_mode: FusionMode,
    pub n_tags: usize,
    pub encoding: Encoding,
    pub vocab_clips: usize,
    pub max_iters: usize,
    pub tol: f64,
    pub restarts: usize,
    pub norm_scope: NormScope,
    pub untagged: UntaggedPolicy,
}

impl Default for MethodSpec {
    fn default() -> Self {
        Self {
            space: Space::Audio,
            feature_kind: FeatureKind::Mfccdd,
            k: 300,
            svd_rank: None,
            w: 0.9,
            fusion_mode: FusionMode::Average,
            n_tags: 20,
            encoding: Encoding::SoftCosine,
            vocab_clips: 1000,
            max_iters: 100,
            tol: 1e-6,
            restarts: 1,
            norm_scope: NormScope::FoldTrain,
            untagged: UntaggedPolicy::Autotag,
        }
    }
}

impl MethodSpec {
    pub fn with_space(space: Space) -> Self {
        Self {
            space,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.vocab_config(0).validate()?;
        if !(0.0..=1.0).contains(&self.w) {
            return Err(Error::InvalidParameter(format!(
                "w = {} outside [0, 1]",
                self.w
            )));
        }
        if self.n_tags == 0 {
            return Err(Error::InvalidParameter("n_tags must be at least 1".into()));
        }
        if self.svd_rank == Some(0) {
            return Err(Error::InvalidParameter(
                "svd rank must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn vocab_config(&self, seed: u64) -> VocabTrainConfig {
        VocabTrainConfig {
            k: self.k,
            max_clips: self.vocab_clips,
            max_iters: self.max_iters,
            tol: self.tol,
            seed,
            restarts: self.restarts,
        }
    }

    pub fn fusion(&self) -> FusionConfig {
        FusionConfig {
            w: self.w,
            mode: self.fusion_mode,
        }
    }

    pub fn label(&self) -> &'static str {
        self.space.as_str()
    }
}

/// Clip embeddings in one space, keyed by clip id.
pub type Embeddings = BTreeMap<ClipId, Vec<f64>>;

fn lookup<'a>(emb: &'a Embeddings, id: &ClipId) -> Result<&'a [f64]> {
    emb.get(id)
        .map(Vec::as_slice)
        .ok_or_else(|| Error::MissingEmbedding(id.clone()))
}

/// `cos(a, b) > cos(a, c)`; exact ties are violations.
pub fn constraint_satisfied(c: &TripletConstraint, emb: &Embeddings) -> Result<bool> {
    let a = lookup(emb, &c.a)?;
    let b = lookup(emb, &c.b)?;
    let o = lookup(emb, &c.c)?;
    Ok(cosine(a, b)? > cosine(a, o)?)
}

/// Fraction of constraints satisfied.
pub fn accuracy(constraints: &[TripletConstraint], emb: &Embeddings) -> Result<f64> {
    if constraints.is_empty() {
        return Err(Error::Empty("constraint list"));
    }
    let mut hits = 0usize;
    for c in constraints {
        if constraint_satisfied(c, emb)? {
            hits += 1;
        }
    }
    Ok(hits as f64 / constraints.len() as f64)
}

/// Which clips fed each fitted component of a fold.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FoldAudit {
    pub vocab_clips: BTreeSet<ClipId>,
    pub norm_clips: BTreeSet<ClipId>,
    pub tag_clips: BTreeSet<ClipId>,
    pub svd_clips: BTreeSet<ClipId>,
}

impl FoldAudit {
    /// Errors if any held-out clip touched a fitted component.
    pub fn check_disjoint(&self, held_out: &BTreeSet<ClipId>, norm_scope: NormScope) -> Result<()> {
        let mut parts = vec![
            ("vocabulary sample", &self.vocab_clips),
            ("tag matrix", &self.tag_clips),
            ("SVD fit", &self.svd_clips),
        ];
        if norm_scope == NormScope::FoldTrain {
            parts.push(("normalization fit", &self.norm_clips));
        }
        for (what, set) in parts {
            if let Some(id) = set.intersection(held_out).next() {
                return Err(Error::Validation(format!(
                    "test clip `{id}` leaked into the {what}"
                )));
            }
        }
        Ok(())
    }
}

/// Everything fitted on a fold's training clips.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub method: MethodSpec,
    pub vocab: AudioWordVocabulary,
    pub tags: Option<TagMatrix>,
    pub svd: Option<SvdProjector>,
    pub audit: FoldAudit,
}

fn features_for<'a>(store: &'a FeatureStore, id: &ClipId) -> Result<&'a FeatureMatrix> {
    store
        .get(id)
        .ok_or_else(|| Error::Validation(format!("no features for clip `{id}`")))
}

impl TrainedModel {
    /// Samples vocabulary clips, fits normalization and k-means, then the
    /// tag matrix and SVD.
    pub fn train(
        corpus: &Corpus,
        features: &FeatureStore,
        train_ids: &[ClipId],
        method: &MethodSpec,
        seed: u64,
    ) -> Result<Self> {
        method.validate()?;
        let train_ids = with_features(train_ids, features);
        if train_ids.is_empty() {
            return Err(Error::Empty("training clips with features"));
        }
        let vocab_ids = sample_training_clips(&train_ids, method.vocab_clips, seed);
        let norm_ids: Vec<ClipId> = match method.norm_scope {
            NormScope::FoldTrain => vocab_ids.clone(),
            NormScope::Global => features.keys().cloned().collect(),
        };
        let norm = NormalizationStats::fit(norm_ids.iter().map(|id| &features[id]))?;
        let pool: Vec<(&ClipId, &FeatureMatrix)> = vocab_ids
            .iter()
            .map(|id| features_for(features, id).map(|m| (id, m)))
            .collect::<Result<_>>()?;
        let vocab = train_vocabulary(&pool, norm, &method.vocab_config(seed))?;
        let mut model = Self::with_vocabulary(corpus, features, &train_ids, method, vocab)?;
        model.audit.vocab_clips = vocab_ids.into_iter().collect();
        model.audit.norm_clips = norm_ids.into_iter().collect();
        Ok(model)
    }

    /// Builds the tag matrix and SVD on top of an existing vocabulary.
    pub fn with_vocabulary(
        corpus: &Corpus,
        features: &FeatureStore,
        train_ids: &[ClipId],
        method: &MethodSpec,
        vocab: AudioWordVocabulary,
    ) -> Result<Self> {
        method.validate()?;
        let train_ids = with_features(train_ids, features);
        let mut model = Self {
            method: method.clone(),
            vocab,
            tags: None,
            svd: None,
            audit: FoldAudit::default(),
        };
        let audio = model.audio_embeddings(&train_ids, features)?;

        if method.space.is_semantic() {
            let mut tagged = Vec::new();
            for id in &train_ids {
                let clip = corpus
                    .clip(id.as_str())
                    .ok_or_else(|| Error::MissingEmbedding(id.clone()))?;
                if !clip.tags.is_empty() {
                    tagged.push((&clip.tags, audio[id].as_slice()));
                    model.audit.tag_clips.insert(id.clone());
                }
            }
            if tagged.is_empty() {
                return Err(Error::Empty("tagged training clips"));
            }
            model.tags = Some(build_tag_matrix(corpus.tag_vocabulary(), &tagged)?);
        }

        if let Some(rank) = method.svd_rank {
            let space_emb = model.space_embeddings(corpus, &audio)?;
            let rows: Vec<&[f64]> = space_emb.values().map(Vec::as_slice).collect();
            model.svd = Some(SvdProjector::fit(&rows, rank, method.space)?);
            model.audit.svd_clips = space_emb.into_keys().collect();
        }
        Ok(model)
    }

    pub fn audio_embedding(&self, m: &FeatureMatrix) -> Result<Vec<f64>> {
        clip_audio_embedding(m, &self.vocab, self.method.encoding)
    }

    pub fn audio_embeddings(&self, ids: &[ClipId], features: &FeatureStore) -> Result<Embeddings> {
        ids.par_iter()
            .map(|id| {
                let m = features_for(features, id)?;
                self.audio_embedding(m).map(|e| (id.clone(), e))
            })
            .collect()
    }

    fn autotag_embedding(&self, id: &ClipId, audio: &[f64], tm: &TagMatrix) -> Result<Vec<f64>> {
        let predicted = autotag(audio, tm, self.method.n_tags)?;
        semantic_clip_embedding(id, predicted.iter().map(|p| p.tag.as_str()), tm)
    }

    /// Embedding in the method's space, before SVD. `None` when the clip is
    /// untagged and the policy is to skip it.
    pub fn space_embedding(
        &self,
        corpus: &Corpus,
        id: &ClipId,
        audio: &[f64],
    ) -> Result<Option<Vec<f64>>> {
        let space = self.method.space;
        if space == Space::Audio {
            return Ok(Some(audio.to_vec()));
        }
        let tm = self
            .tags
            .as_ref()
            .expect("semantic spaces always build a tag matrix");
        let semantic = if space.uses_autotag() {
            self.autotag_embedding(id, audio, tm)?
        } else {
            let clip = corpus
                .clip(id.as_str())
                .ok_or_else(|| Error::MissingEmbedding(id.clone()))?;
            match semantic_clip_embedding(id, clip.tags.iter().map(String::as_str), tm) {
                Ok(v) => v,
                Err(Error::NoTags(_)) => match self.method.untagged {
                    UntaggedPolicy::Autotag => {
                        log::warn!("clip `{id}` has no usable tags; falling back to auto-tagging");
                        self.autotag_embedding(id, audio, tm)?
                    }
                    UntaggedPolicy::Skip => {
                        log::warn!("clip `{id}` has no usable tags; skipped");
                        return Ok(None);
                    }
                },
                Err(e) => return Err(e),
            }
        };
        if space.is_fusion() {
            fuse(audio, &semantic, &self.method.fusion()).map(Some)
        } else {
            Ok(Some(semantic))
        }
    }

    fn space_embeddings(&self, corpus: &Corpus, audio: &Embeddings) -> Result<Embeddings> {
        let pairs: Vec<(&ClipId, &Vec<f64>)> = audio.iter().collect();
        let out: Vec<Option<(ClipId, Vec<f64>)>> = pairs
            .par_iter()
            .map(|(id, a)| {
                Ok(self
                    .space_embedding(corpus, id, a)?
                    .map(|e| ((*id).clone(), e)))
            })
            .collect::<Result<_>>()?;
        Ok(out.into_iter().flatten().collect())
    }

    /// Final embeddings (method space, SVD-projected when configured).
    pub fn embed(
        &self,
        corpus: &Corpus,
        features: &FeatureStore,
        ids: &[ClipId],
    ) -> Result<Embeddings> {
        let audio = self.audio_embeddings(ids, features)?;
        let mut emb = self.space_embeddings(corpus, &audio)?;
        if let Some(svd) = &self.svd {
            for v in emb.values_mut() {
                *v = svd.project(v)?;
            }
        }
        Ok(emb)
    }
}

fn with_features(ids: &[ClipId], features: &FeatureStore) -> Vec<ClipId> {
    let kept: Vec<ClipId> = ids
        .iter()
        .filter(|id| features.contains_key(*id))
        .cloned()
        .collect();
    if kept.len() < ids.len() {
        log::warn!(
            "{} training clips have no features and are ignored",
            ids.len() - kept.len()
        );
    }
    kept
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldOutcome {
    pub fold: usize,
    pub seed: u64,
    pub accuracy: f64,
    /// Per test constraint; `None` where a clip was skipped.
    pub verdicts: Vec<Option<bool>>,
    pub audit: FoldAudit,
}

/// Trains on the fold's training clips and scores its test constraints.
/// Training constraints are not used.
pub fn run_fold(
    corpus: &Corpus,
    features: &FeatureStore,
    fold: &FoldAssignment,
    method: &MethodSpec,
    seed: u64,
) -> Result<FoldOutcome> {
    let test_clips = fold.test_clips();
    let train_ids = corpus.training_clips(fold);
    let model = TrainedModel::train(corpus, features, &train_ids, method, seed)?;
    model.audit.check_disjoint(&test_clips, method.norm_scope)?;

    let test_ids: Vec<ClipId> = test_clips.iter().cloned().collect();
    for id in &test_ids {
        features_for(features, id)?;
    }
    let emb = model.embed(corpus, features, &test_ids)?;
    let verdicts: Vec<Option<bool>> = fold
        .test
        .iter()
        .map(|c| {
            if c.clips().iter().all(|id| emb.contains_key(*id)) {
                constraint_satisfied(c, &emb).map(Some)
            } else {
                Ok(None)
            }
        })
        .collect::<Result<_>>()?;
    let scored: Vec<bool> = verdicts.iter().flatten().copied().collect();
    if scored.is_empty() {
        return Err(Error::Empty("scorable test constraints"));
    }
    let skipped = verdicts.len() - scored.len();
    if skipped > 0 {
        log::warn!(
            "fold {}: {skipped} constraints not scored (untagged clips skipped)",
            fold.index
        );
    }
    let accuracy = scored.iter().filter(|&&v| v).count() as f64 / scored.len() as f64;
    Ok(FoldOutcome {
        fold: fold.index,
        seed,
        accuracy,
        verdicts,
        audit: model.audit,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldScore {
    pub repeat: usize,
    pub fold: usize,
    pub seed: u64,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub method: MethodSpec,
    pub runs: Vec<FoldScore>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub repeats: usize,
    pub seeds: Vec<u64>,
}

impl EvalResult {
    fn from_runs(method: MethodSpec, runs: Vec<FoldScore>, seeds: Vec<u64>) -> Self {
        let n = runs.len() as f64;
        let mean = runs.iter().map(|r| r.accuracy).sum::<f64>() / n;
        let var = runs
            .iter()
            .map(|r| (r.accuracy - mean).powi(2))
            .sum::<f64>()
            / n;
        Self {
            method,
            repeats: seeds.len(),
            runs,
            mean_accuracy: mean,
            std_accuracy: var.sqrt(),
            seeds,
        }
    }

    /// `method,repeat,fold,accuracy` rows followed by a summary row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("method,repeat,fold,accuracy\n");
        let label = self.method.label();
        for r in &self.runs {
            let _ = writeln!(out, "{label},{},{},{:.6}", r.repeat, r.fold, r.accuracy);
        }
        let _ = writeln!(out, "{label},mean,all,{:.6}", self.mean_accuracy);
        out
    }
}

/// Runs every fold `repeats` times. Repeat `r` uses seed `base_seed + r` for
/// both the vocabulary sample and k-means.
pub fn run_cv(
    corpus: &Corpus,
    features: &FeatureStore,
    method: &MethodSpec,
    repeats: usize,
    base_seed: u64,
) -> Result<EvalResult> {
    if corpus.folds().is_empty() {
        return Err(Error::Empty("fold list"));
    }
    if repeats == 0 {
        return Err(Error::InvalidParameter("repeats must be at least 1".into()));
    }
    method.validate()?;
    let seeds: Vec<u64> = (0..repeats as u64)
        .map(|r| base_seed.wrapping_add(r))
        .collect();
    let jobs: Vec<(usize, &FoldAssignment)> = (0..repeats)
        .flat_map(|r| corpus.folds().iter().map(move |f| (r, f)))
        .collect();
    let runs = jobs
        .par_iter()
        .map(|&(repeat, fold)| {
            let seed = seeds[repeat];
            let outcome = run_fold(corpus, features, fold, method, seed)?;
            log::info!(
                "{} repeat {repeat} fold {}: accuracy {:.4}",
                method.label(),
                fold.index,
                outcome.accuracy
            );
            Ok(FoldScore {
                repeat,
                fold: fold.index,
                seed,
                accuracy: outcome.accuracy,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalResult::from_runs(method.clone(), runs, seeds))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepAxis {
    W,
    NTags,
    K,
    SvdRank,
    VocabClips,
}

kebab_from_str!(
    SweepAxis,
    "w" => SweepAxis::W,
    "n-tags" => SweepAxis::NTags,
    "n" => SweepAxis::NTags,
    "k" => SweepAxis::K,
    "svd-rank" => SweepAxis::SvdRank,
    "svd" => SweepAxis::SvdRank,
    "vocab-clips" => SweepAxis::VocabClips,
);

impl SweepAxis {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepAxis::W => "w",
            SweepAxis::NTags => "n-tags",
            SweepAxis::K => "k",
            SweepAxis::SvdRank => "svd-rank",
            SweepAxis::VocabClips => "vocab-clips",
        }
    }

    /// Copy of `base` with this axis set to `value`. An SVD rank of 0 turns
    /// SVD off.
    pub fn apply(self, base: &MethodSpec, value: f64) -> Result<MethodSpec> {
        let count = || -> Result<usize> {
            if value >= 0.0 && value.fract() == 0.0 && value <= usize::MAX as f64 {
                Ok(value as usize)
            } else {
                Err(Error::InvalidParameter(format!(
                    "{} needs a non-negative integer, got {value}",
                    self.as_str()
                )))
            }
        };
        let mut m = base.clone();
        match self {
            SweepAxis::W => m.w = value,
            SweepAxis::NTags => m.n_tags = count()?,
            SweepAxis::K => m.k = count()?,
            SweepAxis::SvdRank => m.svd_rank = Some(count()?).filter(|&r| r > 0),
            SweepAxis::VocabClips => m.vocab_clips = count()?,
        }
        m.validate()?;
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub value: f64,
    pub result: EvalResult,
}

pub fn sweep(
    corpus: &Corpus,
    features: &FeatureStore,
    base: &MethodSpec,
    axis: SweepAxis,
    values: &[f64],
    repeats: usize,
    base_seed: u64,
) -> Result<Vec<SweepPoint>> {
    if values.is_empty() {
        return Err(Error::Empty("sweep values"));
    }
    values
        .iter()
        .map(|&value| {
            let method = axis.apply(base, value)?;
            Ok(SweepPoint {
                value,
                result: run_cv(corpus, features, &method, repeats, base_seed)?,
            })
        })
        .collect()
}

pub fn sweep_csv(axis: SweepAxis, points: &[SweepPoint]) -> String {
    let mut out = String::from("axis,value,method,mean_accuracy,std_accuracy,runs\n");
    for p in points {
        let _ = writeln!(
            out,
            "{},{},{},{:.6},{:.6},{}",
            axis.as_str(),
            p.value,
            p.result.method.label(),
            p.result.mean_accuracy,
            p.result.std_accuracy,
            p.result.runs.len()
        );
    }
    out
}
