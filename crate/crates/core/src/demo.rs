//! Synthetic three-class corpus: harmonic tones, white noise and repeated
//! chirps, each class with its own pair of tags. Test constraints always
//! pair two clips of one class against a clip of another, so a
//! representation that separates the classes scores 1.0.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::corpus::{
    export_features, write_annotations_tsv, write_constraints, ClipId, ClipRecord, Corpus,
    FeatureStore, FoldAssignment, TripletConstraint,
};
use crate::embed::Space;
use crate::eval::MethodSpec;
use crate::features::{write_wav, AudioBuffer, MfccExtractor, WindowingConfig, TARGET_SAMPLE_RATE};
use crate::{Error, Result};

/// Class name and its two tags.
pub const CLASSES: [(&str, [&str; 2]); 3] = [
    ("tone", ["harmonic", "tonal"]),
    ("noise", ["hiss", "noisy"]),
    ("chirp", ["chirp", "sweep"]),
];

#[derive(Debug, Clone, PartialEq)]
pub struct DemoConfig {
    pub clips_per_class: usize,
    pub seconds: f64,
    pub constraints_per_fold: usize,
    pub seed: u64,
}

impl Default for DemoConfig {
    fn default() -> Self {
        Self {
            clips_per_class: 4,
            seconds: 1.5,
            constraints_per_fold: 10,
            seed: 17,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DemoCorpus {
    pub corpus: Corpus,
    pub audio: BTreeMap<ClipId, AudioBuffer>,
    pub features: FeatureStore,
}

/// Method settings sized for the demo corpus (few windows, six tags).
pub fn demo_method(space: Space) -> MethodSpec {
    MethodSpec {
        space,
        k: 12,
        n_tags: 2,
        restarts: 3,
        ..MethodSpec::default()
    }
}

/// Class of a demo clip id such as `chirp-03`.
pub fn class_of(id: &ClipId) -> &str {
    id.as_str().split('-').next().unwrap_or_default()
}

fn synth(class: usize, n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let sr = f64::from(TARGET_SAMPLE_RATE);
    match class {
        0 => {
            let f0 = rng.random_range(200.0..400.0);
            let phase: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..2.0 * PI)).collect();
            (0..n)
                .map(|i| {
                    let t = i as f64 / sr;
                    let s: f64 = (1..=4)
                        .map(|h| (2.0 * PI * f0 * h as f64 * t + phase[h - 1]).sin() / h as f64)
                        .sum();
                    0.3 * s + rng.random_range(-0.005..0.005)
                })
                .collect()
        }
        1 => {
            let amp = rng.random_range(0.3..0.5);
            (0..n).map(|_| rng.random_range(-amp..amp)).collect()
        }
        _ => {
            let period = rng.random_range(0.2..0.3);
            let (lo, hi) = (
                rng.random_range(300.0..600.0),
                rng.random_range(3000.0..5000.0),
            );
            (0..n)
                .map(|i| {
                    let t = (i as f64 / sr) % period;
                    // instantaneous frequency sweeps lo → hi within each period
                    let phase = 2.0 * PI * (lo * t + (hi - lo) * t * t / (2.0 * period));
                    0.6 * phase.sin() + rng.random_range(-0.005..0.005)
                })
                .collect()
        }
    }
}

/// Builds the corpus, its audio and MFCC+Δ+ΔΔ features.
pub fn generate(cfg: &DemoConfig) -> Result<DemoCorpus> {
    if cfg.clips_per_class < 4 || !cfg.clips_per_class.is_multiple_of(2) {
        return Err(Error::InvalidParameter(
            "clips_per_class must be an even number >= 4".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = (cfg.seconds * f64::from(TARGET_SAMPLE_RATE)) as usize;
    let mut clips = Vec::new();
    let mut audio = BTreeMap::new();
    for (ci, (name, tags)) in CLASSES.iter().enumerate() {
        for j in 0..cfg.clips_per_class {
            let id = ClipId::new(format!("{name}-{j:02}"));
            audio.insert(
                id.clone(),
                AudioBuffer::new(synth(ci, n, &mut rng), TARGET_SAMPLE_RATE)?,
            );
            clips.push(ClipRecord::new(id, tags.iter()));
        }
    }

    // fold f holds out the f-th half of every class
    let half = cfg.clips_per_class / 2;
    let mut folds_tests = Vec::new();
    for f in 0..2 {
        let held: Vec<Vec<ClipId>> = CLASSES
            .iter()
            .map(|(name, _)| {
                (f * half..(f + 1) * half)
                    .map(|j| ClipId::new(format!("{name}-{j:02}")))
                    .collect()
            })
            .collect();
        let mut candidates = Vec::new();
        for (ci, same) in held.iter().enumerate() {
            for a in same {
                for b in same {
                    if a == b {
                        continue;
                    }
                    for (oi, other) in held.iter().enumerate() {
                        if oi != ci {
                            for c in other {
                                candidates.push(TripletConstraint::new(
                                    a.clone(),
                                    b.clone(),
                                    c.clone(),
                                )?);
                            }
                        }
                    }
                }
            }
        }
        candidates.shuffle(&mut rng);
        candidates.truncate(cfg.constraints_per_fold);
        folds_tests.push(candidates);
    }
    let folds = vec![
        FoldAssignment::new(0, folds_tests[1].clone(), folds_tests[0].clone())?,
        FoldAssignment::new(1, folds_tests[0].clone(), folds_tests[1].clone())?,
    ];
    let constraints: Vec<TripletConstraint> = folds_tests.concat();
    let corpus = Corpus::new(clips, constraints, folds)?;

    let windowing = WindowingConfig::default();
    let extractor = MfccExtractor::for_windowing(TARGET_SAMPLE_RATE, &windowing)?;
    let features = audio
        .par_iter()
        .map(|(id, buf)| Ok((id.clone(), extractor.extract(buf, &windowing)?)))
        .collect::<Result<FeatureStore>>()?;
    Ok(DemoCorpus {
        corpus,
        audio,
        features,
    })
}

/// Lays the corpus out the way [`Corpus::load_dir`] expects, plus a
/// `features/` directory of `.fv` files.
pub fn write_dir(demo: &DemoCorpus, dir: &Path) -> Result<()> {
    let mk = |p: &Path| fs::create_dir_all(p).map_err(|e| Error::io(p, e));
    let (audio_dir, feat_dir, fold_dir) =
        (dir.join("audio"), dir.join("features"), dir.join("folds"));
    for d in [dir, &audio_dir, &feat_dir, &fold_dir] {
        mk(d)?;
    }
    write_annotations_tsv(&dir.join("annotations.tsv"), demo.corpus.clips())?;
    write_constraints(&dir.join("constraints.txt"), demo.corpus.constraints())?;
    for fold in demo.corpus.folds() {
        write_constraints(
            &fold_dir.join(format!("fold{}.train", fold.index)),
            &fold.train,
        )?;
        write_constraints(
            &fold_dir.join(format!("fold{}.test", fold.index)),
            &fold.test,
        )?;
    }
    for (id, buf) in &demo.audio {
        write_wav(&audio_dir.join(format!("{id}.wav")), buf)?;
    }
    for (id, m) in &demo.features {
        export_features(&feat_dir.join(format!("{id}.fv")), m)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn demo_shape() {
        let demo = generate(&DemoConfig::default()).unwrap();
        let c = &demo.corpus;
        assert_eq!(c.clips().len(), 12);
        assert_eq!(c.constraints().len(), 20);
        assert_eq!(c.folds().len(), 2);
        assert_eq!(c.tag_vocabulary().len(), 6);
        for fold in c.folds() {
            assert_eq!(fold.test.len(), 10);
            for t in &fold.test {
                assert_eq!(class_of(&t.a), class_of(&t.b));
                assert_ne!(class_of(&t.a), class_of(&t.c));
            }
            let held = fold.test_clips();
            assert!(c.training_clips(fold).iter().all(|id| !held.contains(id)));
        }
        assert!(demo
            .features
            .values()
            .all(|m| m.dim() == 39 && m.rows() == 13));
    }

    #[test]
    fn demo_is_deterministic() {
        let a = generate(&DemoConfig::default()).unwrap();
        let b = generate(&DemoConfig::default()).unwrap();
        assert_eq!(a.features, b.features);
        assert_eq!(a.corpus.constraints(), b.corpus.constraints());
    }

    #[test]
    fn written_corpus_loads_back() {
        let demo = generate(&DemoConfig::default()).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_dir(&demo, dir.path()).unwrap();
        let loaded = Corpus::load_dir(dir.path()).unwrap();
        assert_eq!(loaded.clips().len(), 12);
        assert_eq!(loaded.folds(), demo.corpus.folds());
        assert!(loaded.clips().iter().all(|c| c.audio_path.is_some()));
        let feats = crate::corpus::load_feature_dir(&dir.path().join("features")).unwrap();
        assert_eq!(feats, demo.features);
    }
}
