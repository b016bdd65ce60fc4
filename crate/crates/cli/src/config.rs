//! TOML run configuration and its merge with command-line flags.
//!
//! Precedence: flag, then configuration file, then built-in default.

use std::fs;
use std::path::{Path, PathBuf};

use adsm_core::embed::{Encoding, FusionMode, Space};
use adsm_core::eval::{FeatureKind, MethodSpec, NormScope, SweepAxis, UntaggedPolicy};
use serde::{Deserialize, Serialize};

use crate::args::{CorpusArgs, LogLevel, ModelArgs, VocabArgs};
use crate::error::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub log_level: Option<LogLevel>,
    pub repeats: Option<usize>,
    pub paths: PathsConfig,
    pub method: MethodConfig,
    pub extract: ExtractConfig,
    pub sweep: SweepConfig,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct PathsConfig {
    pub corpus: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
    pub constraints: Option<PathBuf>,
    pub folds: Option<PathBuf>,
    pub audio_dir: Option<PathBuf>,
    pub features: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct MethodConfig {
    pub space: Option<Space>,
    pub feature_kind: Option<FeatureKind>,
    pub k: Option<usize>,
    /// 0 disables SVD.
    pub svd: Option<usize>,
    pub w: Option<f64>,
    pub fusion_mode: Option<FusionMode>,
    pub n_tags: Option<usize>,
    pub encoding: Option<Encoding>,
    pub vocab_clips: Option<usize>,
    pub max_iters: Option<usize>,
    pub tol: Option<f64>,
    pub restarts: Option<usize>,
    pub norm_scope: Option<NormScope>,
    pub adsm_untagged: Option<UntaggedPolicy>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct ExtractConfig {
    pub window_ms: Option<f64>,
    pub hop_ms: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct SweepConfig {
    pub axis: Option<SweepAxis>,
    pub values: Option<Vec<f64>>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path).map_err(|e| adsm_core::Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        toml::from_str(&text).map_err(|e| CliError::Config {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
    }

    /// Checks value ranges and that every input path exists.
    pub fn validate(&self) -> Result<(), CliError> {
        self.method_spec(
            MethodSpec::default(),
            &VocabArgs::default(),
            &ModelArgs::default(),
        )
        .validate()?;
        if self.workers == Some(0) {
            return Err(CliError::invalid("workers must be at least 1"));
        }
        if self.repeats == Some(0) {
            return Err(CliError::invalid("repeats must be at least 1"));
        }
        if let Some(values) = &self.sweep.values {
            if values.is_empty() {
                return Err(CliError::invalid("sweep values must not be empty"));
            }
        }
        let windowing = self.windowing(None, None);
        windowing.validate()?;
        let p = &self.paths;
        for path in [
            &p.corpus,
            &p.annotations,
            &p.constraints,
            &p.folds,
            &p.audio_dir,
            &p.features,
        ]
        .into_iter()
        .flatten()
        {
            if !path.exists() {
                return Err(adsm_core::Error::Io {
                    path: path.clone(),
                    source: std::io::Error::new(
                        std::io::ErrorKind::NotFound,
                        "configured path does not exist",
                    ),
                }
                .into());
            }
        }
        Ok(())
    }

    pub fn method_spec(
        &self,
        base: MethodSpec,
        vocab: &VocabArgs,
        model: &ModelArgs,
    ) -> MethodSpec {
        let c = &self.method;
        let svd = model
            .svd
            .or(c.svd)
            .map_or(base.svd_rank, |r| Some(r).filter(|&r| r > 0));
        MethodSpec {
            space: model.space.or(c.space).unwrap_or(base.space),
            feature_kind: model
                .feature_kind
                .or(c.feature_kind)
                .unwrap_or(base.feature_kind),
            k: vocab.k.or(c.k).unwrap_or(base.k),
            svd_rank: svd,
            w: model.w.or(c.w).unwrap_or(base.w),
            fusion_mode: model
                .fusion_mode
                .or(c.fusion_mode)
                .unwrap_or(base.fusion_mode),
            n_tags: model.n_tags.or(c.n_tags).unwrap_or(base.n_tags),
            encoding: model.encoding.or(c.encoding).unwrap_or(base.encoding),
            vocab_clips: vocab
                .vocab_clips
                .or(c.vocab_clips)
                .unwrap_or(base.vocab_clips),
            max_iters: vocab.max_iters.or(c.max_iters).unwrap_or(base.max_iters),
            tol: vocab.tol.or(c.tol).unwrap_or(base.tol),
            restarts: vocab.restarts.or(c.restarts).unwrap_or(base.restarts),
            norm_scope: vocab.norm_scope.or(c.norm_scope).unwrap_or(base.norm_scope),
            untagged: model.untagged.or(c.adsm_untagged).unwrap_or(base.untagged),
        }
    }

    pub fn windowing(
        &self,
        window_ms: Option<f64>,
        hop_ms: Option<f64>,
    ) -> adsm_core::features::WindowingConfig {
        let base = adsm_core::features::WindowingConfig::default();
        adsm_core::features::WindowingConfig {
            window_ms: window_ms
                .or(self.extract.window_ms)
                .unwrap_or(base.window_ms),
            hop_ms: hop_ms.or(self.extract.hop_ms).unwrap_or(base.hop_ms),
        }
    }

    /// Corpus paths: explicit flags, then configured paths, then the
    /// conventional file names inside the corpus directory.
    pub fn corpus_paths(&self, args: &CorpusArgs) -> CorpusPaths {
        let p = &self.paths;
        let root = args.corpus.clone().or_else(|| p.corpus.clone());
        let inside = |name: &str| root.as_ref().map(|r| r.join(name));
        let annotations = args
            .annotations
            .clone()
            .or_else(|| p.annotations.clone())
            .or_else(|| {
                let tsv = inside("annotations.tsv")?;
                if tsv.exists() {
                    Some(tsv)
                } else {
                    inside("annotations.csv")
                        .filter(|csv| csv.exists())
                        .or(Some(tsv))
                }
            });
        CorpusPaths {
            annotations,
            constraints: args
                .constraints
                .clone()
                .or_else(|| p.constraints.clone())
                .or_else(|| inside("constraints.txt")),
            folds: args
                .folds
                .clone()
                .or_else(|| p.folds.clone())
                .or_else(|| inside("folds")),
            audio_dir: p.audio_dir.clone().or_else(|| inside("audio")),
            features: args
                .features
                .clone()
                .or_else(|| p.features.clone())
                .or_else(|| inside("features")),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct CorpusPaths {
    pub annotations: Option<PathBuf>,
    pub constraints: Option<PathBuf>,
    pub folds: Option<PathBuf>,
    pub audio_dir: Option<PathBuf>,
    pub features: Option<PathBuf>,
}
