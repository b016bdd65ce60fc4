//! One function per subcommand.

use std::collections::BTreeSet;
use std::fs;
use std::io::ErrorKind;
use std::path::{Path, PathBuf};

use adsm_core::corpus::{
    encode_features, import_features, load_annotations, load_constraints, load_feature_dir,
    load_folds, AnnotationFormat, ClipId, ClipRecord, Corpus, FeatureStore,
};
use adsm_core::demo::{self, demo_method, DemoConfig};
use adsm_core::embed::{build_tag_matrix, Space, TagMatrix};
use adsm_core::eval::{run_cv, sweep, sweep_csv, FeatureKind, MethodSpec, NormScope, TrainedModel};
use adsm_core::features::{
    decode_and_resample, FeatureMatrix, MfccExtractor, NormalizationStats, TARGET_SAMPLE_RATE,
};
use adsm_core::tagger::autotag;
use adsm_core::vocab::{sample_training_clips, train_vocabulary, AudioWordVocabulary};
use adsm_core::Error;
use rayon::prelude::*;
use serde_json::json;

use crate::args::{
    AutotagArgs, DemoArgs, EmbedArgs, EvaluateArgs, ExtractArgs, ExtractKind, ModelArgs, SweepArgs,
    TrainVocabArgs, ValidateConfigArgs, VocabArgs,
};
use crate::config::{CorpusPaths, RunConfig};
use crate::error::CliError;
use crate::output::{Manifest, Staging};

/// Sidecar describing an embedding directory.
pub const SIDECAR_NAME: &str = "embedding.json";
pub const TAG_MATRIX_NAME: &str = "tagmatrix.bin";

pub struct Context {
    pub config: RunConfig,
    pub config_path: Option<PathBuf>,
    pub seed: u64,
}

impl Context {
    fn manifest(
        &self,
        command: &str,
        settings: serde_json::Value,
        seeds: Vec<u64>,
    ) -> Result<Manifest, CliError> {
        let config = json!({
            "file": self.config_path,
            "file_contents": self.config,
            "resolved": settings,
        });
        let mut m = Manifest::new(command, config, seeds);
        if let Some(p) = &self.config_path {
            m.add_input("config", p)?;
        }
        Ok(m)
    }
}

fn not_found(path: &Path, what: &str) -> CliError {
    Error::Io {
        path: path.to_path_buf(),
        source: std::io::Error::new(ErrorKind::NotFound, format!("{what} not found")),
    }
    .into()
}

fn required<T>(value: Option<T>, flag: &str) -> Result<T, CliError> {
    value.ok_or_else(|| CliError::Usage(format!("missing required option `{flag}`")))
}

/// Clip ids, one per line; blank lines and `#` comments are skipped.
fn read_id_list(path: &Path) -> Result<Vec<ClipId>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(ClipId::from)
        .collect())
}

fn files_with_ext(dir: &Path, exts: &[&str]) -> Result<Vec<PathBuf>, CliError> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        })?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| exts.contains(&e))
        })
        .collect();
    files.sort();
    Ok(files)
}

fn clip_id_of(path: &Path) -> Result<ClipId, CliError> {
    path.file_stem()
        .and_then(|s| s.to_str())
        .map(ClipId::from)
        .ok_or_else(|| {
            Error::Validation(format!("cannot derive a clip id from {}", path.display())).into()
        })
}

/// Loads annotations, constraints and folds. Evaluation needs all three.
fn load_corpus(paths: &CorpusPaths, for_evaluation: bool) -> Result<Corpus, CliError> {
    let annotations = paths
        .annotations
        .as_ref()
        .ok_or_else(|| CliError::Usage("no corpus given: pass --corpus or --annotations".into()))?;
    if !annotations.exists() {
        return Err(not_found(annotations, "annotation file"));
    }
    let format = if annotations.extension().is_some_and(|e| e == "csv") {
        AnnotationFormat::BinaryMatrix
    } else {
        AnnotationFormat::Tsv
    };
    let mut clips = load_annotations(annotations, format)?;
    if let Some(audio) = paths.audio_dir.as_ref().filter(|d| d.is_dir()) {
        for clip in &mut clips {
            let wav = audio.join(format!("{}.wav", clip.id));
            if clip.audio_path.is_none() && wav.exists() {
                clip.audio_path = Some(wav);
            }
        }
    }
    let known = clips.iter().map(|c| c.id.clone()).collect();
    let constraints = match &paths.constraints {
        Some(p) if p.exists() => load_constraints(p, &known)?,
        Some(p) if for_evaluation => return Err(not_found(p, "constraint file")),
        None if for_evaluation => {
            return Err(CliError::Usage(
                "no constraint file given: pass --constraints".into(),
            ))
        }
        _ => Vec::new(),
    };
    let folds = match &paths.folds {
        Some(p) if p.is_dir() => load_folds(p, &known)?,
        Some(p) if for_evaluation => return Err(not_found(p, "fold directory")),
        None if for_evaluation => {
            return Err(CliError::Usage(
                "no fold directory given: pass --folds".into(),
            ))
        }
        _ => Vec::new(),
    };
    Ok(Corpus::new(clips, constraints, folds)?)
}

/// Feature matrices from the feature directory, or extracted on the fly from
/// the corpus audio when no directory exists and MFCCs are requested.
fn load_features(
    paths: &CorpusPaths,
    corpus: &Corpus,
    kind: FeatureKind,
) -> Result<FeatureStore, CliError> {
    if let Some(dir) = paths.features.as_ref().filter(|d| d.is_dir()) {
        let store = load_feature_dir(dir)?;
        log::info!(
            "loaded {} feature matrices from {}",
            store.len(),
            dir.display()
        );
        return Ok(store);
    }
    if kind == FeatureKind::Imported {
        return Err(match &paths.features {
            Some(dir) => not_found(dir, "feature directory"),
            None => CliError::Usage("imported features need --features".into()),
        });
    }
    let windowing = adsm_core::features::WindowingConfig::default();
    let extractor = MfccExtractor::for_windowing(TARGET_SAMPLE_RATE, &windowing)?;
    let with_audio: Vec<(&ClipId, &Path)> = corpus
        .clips()
        .iter()
        .filter_map(|c| c.audio_path.as_deref().map(|p| (&c.id, p)))
        .collect();
    if with_audio.is_empty() {
        return Err(Error::Empty("feature files or audio files for the corpus").into());
    }
    log::info!("extracting features for {} clips", with_audio.len());
    Ok(with_audio
        .par_iter()
        .map(|(id, path)| {
            Ok((
                (*id).clone(),
                extractor.extract(&decode_and_resample(path)?, &windowing)?,
            ))
        })
        .collect::<adsm_core::Result<FeatureStore>>()?)
}

pub fn extract(ctx: &Context, args: &ExtractArgs) -> Result<(), CliError> {
    let input = required(
        args.audio_dir
            .clone()
            .or_else(|| ctx.config.paths.audio_dir.clone()),
        "--audio-dir",
    )?;
    let out = required(
        args.out
            .clone()
            .or_else(|| ctx.config.paths.features.clone()),
        "--out",
    )?;
    if !input.is_dir() {
        return Err(not_found(&input, "input directory"));
    }
    let windowing = ctx.config.windowing(args.window_ms, args.hop_ms);
    windowing.validate()?;
    let staging = Staging::new(&out)?;

    let (files, settings) = match args.features {
        ExtractKind::Mfccdd => (
            files_with_ext(&input, &["wav"])?,
            json!({
                "features": "mfccdd",
                "sample_rate": TARGET_SAMPLE_RATE,
                "window_ms": windowing.window_ms,
                "hop_ms": windowing.hop_ms,
            }),
        ),
        ExtractKind::Import => (
            files_with_ext(&input, &["fv", "csv"])?,
            json!({ "features": "import" }),
        ),
    };
    if files.is_empty() {
        return Err(Error::Empty("input files").into());
    }
    let extractor = MfccExtractor::for_windowing(TARGET_SAMPLE_RATE, &windowing)?;
    let load = |path: &Path| -> adsm_core::Result<FeatureMatrix> {
        match args.features {
            ExtractKind::Mfccdd => extractor.extract(&decode_and_resample(path)?, &windowing),
            ExtractKind::Import => import_features(path),
        }
    };
    let dims: Vec<Option<usize>> = files
        .par_iter()
        .map(|path| {
            let id = clip_id_of(path)?;
            match load(path) {
                Ok(m) => {
                    staging.write(&format!("{id}.fv"), &encode_features(&m)?)?;
                    Ok(Some(m.dim()))
                }
                Err(e) if args.skip_invalid => {
                    log::warn!("skipping {}: {e}", path.display());
                    Ok(None)
                }
                Err(e) => Err(CliError::from(e)),
            }
        })
        .collect::<Result<_, CliError>>()?;
    let written: BTreeSet<usize> = dims.iter().flatten().copied().collect();
    if written.is_empty() {
        return Err(Error::Empty("readable input files").into());
    }
    if written.len() > 1 {
        return Err(
            Error::Validation(format!("feature files disagree on dimension: {written:?}")).into(),
        );
    }
    let count = dims.iter().flatten().count();
    let mut manifest = ctx.manifest("extract", settings, vec![])?;
    manifest.add_input("input", &input)?;
    staging.commit(manifest)?;
    println!("wrote {count} feature files to {}", out.display());
    Ok(())
}

fn train_ids_from(
    list: Option<&PathBuf>,
    default: impl Iterator<Item = ClipId>,
) -> Result<Vec<ClipId>, CliError> {
    match list {
        Some(p) => read_id_list(p),
        None => Ok(default.collect()),
    }
}

pub fn train_vocab(ctx: &Context, args: &TrainVocabArgs) -> Result<(), CliError> {
    let dir = required(
        args.features
            .clone()
            .or_else(|| ctx.config.paths.features.clone()),
        "--features",
    )?;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("vocab.awv"));
    let store = load_feature_dir(&dir)?;
    let ids = train_ids_from(args.train_clips.as_ref(), store.keys().cloned())?;
    if let Some(missing) = ids.iter().find(|id| !store.contains_key(*id)) {
        return Err(Error::Validation(format!(
            "training clip `{missing}` has no feature file in {}",
            dir.display()
        ))
        .into());
    }
    let method = ctx
        .config
        .method_spec(MethodSpec::default(), &args.vocab, &ModelArgs::default());
    method.validate()?;
    let cfg = method.vocab_config(ctx.seed);
    let sample = sample_training_clips(&ids, cfg.max_clips, ctx.seed);
    let norm = match method.norm_scope {
        NormScope::FoldTrain => NormalizationStats::fit(sample.iter().map(|id| &store[id]))?,
        NormScope::Global => NormalizationStats::fit(store.values())?,
    };
    let pool: Vec<(&ClipId, &FeatureMatrix)> = sample.iter().map(|id| (id, &store[id])).collect();
    let vocab = train_vocabulary(&pool, norm, &cfg)?;

    let (staging, name) = Staging::for_file(&out)?;
    staging.write(&name, &vocab.to_bytes())?;
    let settings = json!({
        "k": cfg.k,
        "max_clips": cfg.max_clips,
        "max_iters": cfg.max_iters,
        "tol": cfg.tol,
        "restarts": cfg.restarts,
        "norm_scope": method.norm_scope,
        "sampled_clips": sample.len(),
    });
    let mut manifest = ctx.manifest("train-vocab", settings, vec![ctx.seed])?;
    manifest.add_input("features", &dir)?;
    if let Some(p) = &args.train_clips {
        manifest.add_input("train-clips", p)?;
    }
    staging.commit(manifest)?;
    println!(
        "vocabulary k={} d={} inertia={:.6} checksum={:08x} from {} clips -> {}",
        vocab.k(),
        vocab.dim(),
        vocab.inertia(),
        vocab.checksum(),
        sample.len(),
        out.display()
    );
    Ok(())
}

pub fn embed(ctx: &Context, args: &EmbedArgs) -> Result<(), CliError> {
    let vocab = AudioWordVocabulary::load(&args.vocab)?;
    let paths = ctx.config.corpus_paths(&args.corpus);
    let out = required(
        args.out.clone().or_else(|| ctx.config.paths.out.clone()),
        "--out",
    )?;
    let base = MethodSpec {
        k: vocab.k(),
        ..MethodSpec::default()
    };
    let mut method = ctx
        .config
        .method_spec(base, &VocabArgs::default(), &args.model);
    method.k = vocab.k();
    method.validate()?;

    let feat_dir = required(paths.features.clone(), "--features")?;
    let store = load_feature_dir(&feat_dir)?;
    let corpus = if paths.annotations.is_some() {
        load_corpus(&paths, false)?
    } else if method.space.is_semantic() {
        return Err(CliError::Usage(format!(
            "space `{}` needs annotations: pass --corpus",
            method.space
        )));
    } else {
        let clips = store
            .keys()
            .map(|id| ClipRecord::new(id.clone(), std::iter::empty::<&str>()));
        Corpus::new(clips.collect(), vec![], vec![])?
    };
    let train_ids = train_ids_from(args.train_clips.as_ref(), corpus.clip_ids().cloned())?;
    let checksum = vocab.checksum();
    let model = TrainedModel::with_vocabulary(&corpus, &store, &train_ids, &method, vocab)?;

    // AUDIO embeddings still get a tag matrix when annotations are present,
    // so that `autotag` can run on them.
    let tags: Option<TagMatrix> = match &model.tags {
        Some(tm) => Some(tm.clone()),
        None if !corpus.tag_vocabulary().is_empty() => {
            let ids: Vec<ClipId> = train_ids
                .iter()
                .filter(|id| store.contains_key(*id))
                .cloned()
                .collect();
            let audio = model.audio_embeddings(&ids, &store)?;
            let tagged: Vec<_> = ids
                .iter()
                .filter_map(|id| corpus.clip(id.as_str()).filter(|c| !c.tags.is_empty()))
                .map(|c| (&c.tags, audio[&c.id].as_slice()))
                .collect();
            if tagged.is_empty() {
                None
            } else {
                Some(build_tag_matrix(corpus.tag_vocabulary(), &tagged)?)
            }
        }
        None => None,
    };

    let embed_ids = train_ids_from(args.clips.as_ref(), store.keys().cloned())?;
    let emb = model.embed(&corpus, &store, &embed_ids)?;
    let dim = emb.values().next().map_or(0, Vec::len);
    let staging = Staging::new(&out)?;
    emb.par_iter()
        .map(|(id, v)| {
            staging.write(
                &format!("{id}.fv"),
                &encode_features(&FeatureMatrix::new(v.len(), v.clone())?)?,
            )
        })
        .collect::<Result<(), CliError>>()?;
    let sidecar = json!({
        "space": method.space,
        "w": method.w,
        "fusion_mode": method.fusion_mode,
        "svd_rank": method.svd_rank,
        "n_tags": method.n_tags,
        "encoding": method.encoding,
        "adsm_untagged": method.untagged,
        "vocabulary_checksum": format!("{checksum:08x}"),
        "k": method.k,
        "dim": dim,
        "clips": emb.len(),
    });
    staging.write(
        SIDECAR_NAME,
        (serde_json::to_string_pretty(&sidecar)? + "\n").as_bytes(),
    )?;
    if let Some(tm) = &tags {
        staging.write(TAG_MATRIX_NAME, &tm.to_bytes())?;
    }
    let mut manifest = ctx.manifest("embed", sidecar, vec![])?;
    manifest.add_input("vocabulary", &args.vocab)?;
    manifest.add_input("features", &feat_dir)?;
    for (role, p) in [
        ("annotations", &paths.annotations),
        ("train-clips", &args.train_clips),
        ("clips", &args.clips),
    ] {
        if let Some(p) = p {
            manifest.add_input(role, p)?;
        }
    }
    staging.commit(manifest)?;
    println!(
        "wrote {} {} embeddings (dim {dim}) to {}",
        emb.len(),
        method.space,
        out.display()
    );
    Ok(())
}

pub fn autotag_cmd(ctx: &Context, args: &AutotagArgs) -> Result<(), CliError> {
    let tm = TagMatrix::load(&args.tags)?;
    let sidecar_path = args.emb.join(SIDECAR_NAME);
    if sidecar_path.exists() {
        let text = fs::read_to_string(&sidecar_path).map_err(|e| Error::Io {
            path: sidecar_path.clone(),
            source: e,
        })?;
        let meta: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| Error::Format(format!("{}: {e}", sidecar_path.display())))?;
        if meta["space"] != json!(Space::Audio) || !meta["svd_rank"].is_null() {
            return Err(Error::Validation(format!(
                "auto-tagging needs AUDIO embeddings without SVD; {} holds space {} with svd {}",
                args.emb.display(),
                meta["space"],
                meta["svd_rank"]
            ))
            .into());
        }
    }
    let store = load_feature_dir(&args.emb)?;
    if store.is_empty() {
        return Err(Error::Empty("embedding directory").into());
    }
    let rows: Vec<(&ClipId, &FeatureMatrix)> = store.iter().collect();
    let lines: Vec<String> = rows
        .par_iter()
        .map(|(id, m)| {
            if m.rows() != 1 {
                return Err(Error::Format(format!(
                    "embedding for `{id}` has {} rows, expected 1",
                    m.rows()
                )));
            }
            Ok(autotag(m.row(0), &tm, args.n)?
                .iter()
                .map(|p| format!("{id}\t{}\t{}\t{:.6}\n", p.rank, p.tag, p.score))
                .collect::<String>())
        })
        .collect::<adsm_core::Result<_>>()?;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("predictions.tsv"));
    let (staging, name) = Staging::for_file(&out)?;
    staging.write(
        &name,
        (String::from("clip_id\trank\ttag\tscore\n") + &lines.concat()).as_bytes(),
    )?;
    let mut manifest = ctx.manifest("autotag", json!({ "n": args.n, "tags": tm.len() }), vec![])?;
    manifest.add_input("embeddings", &args.emb)?;
    manifest.add_input("tag-matrix", &args.tags)?;
    staging.commit(manifest)?;
    println!("tagged {} clips -> {}", store.len(), out.display());
    Ok(())
}

struct EvalSetup {
    corpus: Corpus,
    features: FeatureStore,
    method: MethodSpec,
    repeats: usize,
    inputs: Vec<(&'static str, PathBuf)>,
}

fn eval_setup(ctx: &Context, args: &EvaluateArgs) -> Result<EvalSetup, CliError> {
    let space = args
        .model
        .space
        .or(ctx.config.method.space)
        .unwrap_or(Space::Audio);
    let base = if args.demo {
        demo_method(space)
    } else {
        MethodSpec::with_space(space)
    };
    let method = ctx.config.method_spec(base, &args.vocab, &args.model);
    method.validate()?;
    let repeats = args.repeats.or(ctx.config.repeats).unwrap_or(10);
    if repeats == 0 {
        return Err(CliError::invalid("repeats must be at least 1"));
    }
    if args.demo {
        let d = demo::generate(&DemoConfig::default())?;
        return Ok(EvalSetup {
            corpus: d.corpus,
            features: d.features,
            method,
            repeats,
            inputs: vec![],
        });
    }
    let paths = ctx.config.corpus_paths(&args.corpus);
    let corpus = load_corpus(&paths, true)?;
    let features = load_features(&paths, &corpus, method.feature_kind)?;
    let inputs = [
        ("annotations", &paths.annotations),
        ("constraints", &paths.constraints),
        ("folds", &paths.folds),
        ("features", &paths.features),
    ]
    .into_iter()
    .filter_map(|(role, p)| p.clone().map(|p| (role, p)))
    .collect();
    Ok(EvalSetup {
        corpus,
        features,
        method,
        repeats,
        inputs,
    })
}

fn eval_manifest(
    ctx: &Context,
    command: &str,
    setup: &EvalSetup,
    demo: bool,
    extra: serde_json::Value,
    seeds: Vec<u64>,
) -> Result<Manifest, CliError> {
    let settings = json!({
        "method": setup.method,
        "repeats": setup.repeats,
        "base_seed": ctx.seed,
        "demo": demo,
        "extra": extra,
    });
    let mut manifest = ctx.manifest(command, settings, seeds)?;
    for (role, p) in &setup.inputs {
        manifest.add_input(role, p)?;
    }
    Ok(manifest)
}

pub fn evaluate(ctx: &Context, args: &EvaluateArgs) -> Result<(), CliError> {
    let setup = eval_setup(ctx, args)?;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("results.csv"));
    let result = run_cv(
        &setup.corpus,
        &setup.features,
        &setup.method,
        setup.repeats,
        ctx.seed,
    )?;
    let (staging, name) = Staging::for_file(&out)?;
    staging.write(&name, result.to_csv().as_bytes())?;
    let manifest = eval_manifest(
        ctx,
        "evaluate",
        &setup,
        args.demo,
        json!(null),
        result.seeds.clone(),
    )?;
    staging.commit(manifest)?;
    println!(
        "{}: mean accuracy {:.4} ± {:.4} over {} runs -> {}",
        setup.method.label(),
        result.mean_accuracy,
        result.std_accuracy,
        result.runs.len(),
        out.display()
    );
    Ok(())
}

pub fn sweep_cmd(ctx: &Context, args: &SweepArgs) -> Result<(), CliError> {
    let axis = required(args.axis.or(ctx.config.sweep.axis), "--axis")?;
    let values = required(
        args.values
            .clone()
            .or_else(|| ctx.config.sweep.values.clone()),
        "--values",
    )?;
    let setup = eval_setup(ctx, &args.eval)?;
    let out = args
        .eval
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("sweep.csv"));
    let points = sweep(
        &setup.corpus,
        &setup.features,
        &setup.method,
        axis,
        &values,
        setup.repeats,
        ctx.seed,
    )?;
    let (staging, name) = Staging::for_file(&out)?;
    staging.write(&name, sweep_csv(axis, &points).as_bytes())?;
    let seeds = points
        .first()
        .map(|p| p.result.seeds.clone())
        .unwrap_or_default();
    let extra = json!({ "axis": axis, "values": values });
    let manifest = eval_manifest(ctx, "sweep", &setup, args.eval.demo, extra, seeds)?;
    staging.commit(manifest)?;
    for p in &points {
        println!(
            "{}={}: mean accuracy {:.4}",
            axis.as_str(),
            p.value,
            p.result.mean_accuracy
        );
    }
    Ok(())
}

pub fn validate_config(ctx: &Context, args: &ValidateConfigArgs) -> Result<(), CliError> {
    let path = required(
        args.path.clone().or_else(|| ctx.config_path.clone()),
        "<PATH> or --config",
    )?;
    RunConfig::load(&path)?.validate()?;
    println!("{}: ok", path.display());
    Ok(())
}

pub fn demo_cmd(ctx: &Context, args: &DemoArgs) -> Result<(), CliError> {
    let cfg = DemoConfig {
        clips_per_class: args.clips_per_class,
        seed: args.demo_seed,
        ..DemoConfig::default()
    };
    let d = demo::generate(&cfg)?;
    let staging = Staging::new(&args.out)?;
    demo::write_dir(&d, staging.dir())?;
    let settings = json!({
        "clips_per_class": cfg.clips_per_class,
        "seconds": cfg.seconds,
        "constraints_per_fold": cfg.constraints_per_fold,
    });
    staging.commit(ctx.manifest("demo", settings, vec![cfg.seed])?)?;
    println!(
        "wrote {}-clip demo corpus to {}",
        d.corpus.clips().len(),
        args.out.display()
    );
    Ok(())
}
