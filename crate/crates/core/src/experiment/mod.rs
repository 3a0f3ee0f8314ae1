//! Config-driven experiments: embedding condition x architecture x seeds.

mod run;
mod table;

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::align::AlignError;
use crate::corpus::{Corpus, CorpusError, Split};
use crate::embed::{EmbedError, EmbeddingConfig};
use crate::eval::EvalError;
use crate::tagger::{ArchKind, TaggerError, TrainSchedule};

pub use run::{
    embedding_cache_key, run_experiment, write_synthetic, RunManifest, RunStatus, SeedArtifacts, MANIFEST_FILE,
};
pub use table::render_table;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("run incomplete ({completed} of {total} seeds finished): {cause}")]
    Partial {
        completed: usize,
        total: usize,
        cause: Box<ExperimentError>,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl ExperimentError {
    /// Process exit code for this failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            ExperimentError::Config(_) => 2,
            ExperimentError::Data(_) | ExperimentError::Io(_) => 3,
            ExperimentError::Numeric(_) => 4,
            ExperimentError::Partial { .. } => 5,
        }
    }
}

impl From<CorpusError> for ExperimentError {
    fn from(e: CorpusError) -> Self {
        match e {
            CorpusError::SynthConfig(_) | CorpusError::BadMinCount => ExperimentError::Config(e.to_string()),
            _ => ExperimentError::Data(e.to_string()),
        }
    }
}

impl From<EmbedError> for ExperimentError {
    fn from(e: EmbedError) -> Self {
        match e {
            EmbedError::Config(_) => ExperimentError::Config(e.to_string()),
            EmbedError::Numeric(_) => ExperimentError::Numeric(e.to_string()),
            EmbedError::Io(e) => ExperimentError::Io(e),
            EmbedError::Usage(_) | EmbedError::Format(_) => ExperimentError::Data(e.to_string()),
        }
    }
}

impl From<AlignError> for ExperimentError {
    fn from(e: AlignError) -> Self {
        match e {
            AlignError::Embed(e) => e.into(),
            AlignError::Io(e) => ExperimentError::Io(e),
            AlignError::Usage(_) => ExperimentError::Config(e.to_string()),
            AlignError::Fit(_) | AlignError::Format(_) => ExperimentError::Data(e.to_string()),
        }
    }
}

impl From<TaggerError> for ExperimentError {
    fn from(e: TaggerError) -> Self {
        match e {
            TaggerError::Config(_) => ExperimentError::Config(e.to_string()),
            TaggerError::Numeric(_) => ExperimentError::Numeric(e.to_string()),
            TaggerError::Io(e) => ExperimentError::Io(e),
            TaggerError::Usage(_) | TaggerError::Format(_) => ExperimentError::Data(e.to_string()),
        }
    }
}

impl From<EvalError> for ExperimentError {
    fn from(e: EvalError) -> Self {
        ExperimentError::Data(e.to_string())
    }
}

/// Source of the tagger's initial word vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Random,
    MonoL1,
    MonoL2,
    Cfm,
    Pcs,
    PseudoCs,
    MultiPivot,
    /// Two monolingual spaces aligned with a seed dictionary and merged.
    Projected,
}

impl Condition {
    pub const ALL: [Condition; 8] = [
        Condition::Random,
        Condition::MonoL1,
        Condition::MonoL2,
        Condition::Cfm,
        Condition::Pcs,
        Condition::PseudoCs,
        Condition::MultiPivot,
        Condition::Projected,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Random => "random",
            Condition::MonoL1 => "mono_l1",
            Condition::MonoL2 => "mono_l2",
            Condition::Cfm => "cfm",
            Condition::Pcs => "pcs",
            Condition::PseudoCs => "pseudo_cs",
            Condition::MultiPivot => "multi_pivot",
            Condition::Projected => "projected",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Condition {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.to_ascii_lowercase();
        Condition::ALL
            .into_iter()
            .find(|c| c.as_str() == lower)
            .ok_or_else(|| ExperimentError::Config(format!("unknown condition {s:?}")))
    }
}

fn default_seeds() -> Vec<u64> {
    vec![1, 2, 3, 4, 5]
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    pub name: String,
    pub output_dir: PathBuf,
    pub condition: Condition,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Seeds trained concurrently.
    #[serde(default = "one")]
    pub parallel_seeds: usize,
    /// Column label in rendered tables; defaults to the test file stem.
    #[serde(default)]
    pub corpus: Option<String>,
    /// Embedding cache shared between runs; defaults to `<output_dir>/cache`.
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Annotated corpora (`INDEX FORM UPOS LID`).
    pub train: PathBuf,
    pub dev: PathBuf,
    pub test: PathBuf,
    /// Second language pair for multi-task POS.
    pub train_b: Option<PathBuf>,
    pub dev_b: Option<PathBuf>,
    /// Unlabelled corpora: raw text or annotated files.
    pub raw_lang1: Option<PathBuf>,
    pub raw_lang2: Option<PathBuf>,
    pub raw_cs: Vec<PathBuf>,
    /// Extra corpora of the other language pair for the pivot condition.
    pub pivot_raw: Vec<PathBuf>,
    /// `source<TAB>target` seed dictionary for the projected condition.
    pub dictionary: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TaggerSection {
    pub kind: ArchKind,
    pub hidden: usize,
    pub dropout: f64,
    pub fine_tune: bool,
}

impl Default for TaggerSection {
    fn default() -> Self {
        let a = crate::tagger::TaggerArch::default();
        TaggerSection {
            kind: a.kind,
            hidden: a.hidden,
            dropout: a.dropout,
            fine_tune: a.fine_tune,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    pub max_epochs: usize,
    pub patience: usize,
    pub lr: f64,
    pub clip_norm: f64,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        let s = TrainSchedule::default();
        ScheduleSection {
            max_epochs: s.max_epochs,
            patience: s.patience,
            lr: s.lr,
            clip_norm: s.clip_norm,
        }
    }
}

impl ScheduleSection {
    pub fn for_seed(&self, seed: u64) -> TrainSchedule {
        TrainSchedule {
            max_epochs: self.max_epochs,
            patience: self.patience,
            seed,
            lr: self.lr,
            clip_norm: self.clip_norm,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub data: DataSection,
    #[serde(default)]
    pub embedding: EmbeddingConfig,
    #[serde(default)]
    pub tagger: TaggerSection,
    #[serde(default)]
    pub schedule: ScheduleSection,
}

/// Parses `key=value` into a dotted path and a TOML value. Values that do
/// not parse as TOML are taken as strings.
fn parse_override(assignment: &str) -> Result<(Vec<String>, toml::Value), ExperimentError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| ExperimentError::Config(format!("override {assignment:?} is not key=value")))?;
    let path: Vec<String> = key.trim().split('.').map(str::to_string).collect();
    if path.iter().any(String::is_empty) {
        return Err(ExperimentError::Config(format!("bad override key {key:?}")));
    }
    let raw = raw.trim();
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    Ok((path, value))
}

fn apply_override(root: &mut toml::Table, path: &[String], value: toml::Value) -> Result<(), ExperimentError> {
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut table = root;
    for p in parents {
        let entry = table
            .entry(p.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| ExperimentError::Config(format!("{p} is not a section")))?;
    }
    table.insert(last.clone(), value);
    Ok(())
}

/// Deserializes TOML text into any config type after applying
/// `key=value` overrides.
pub fn parse_toml_with_overrides<T: DeserializeOwned>(text: &str, overrides: &[String]) -> Result<T, ExperimentError> {
    let mut root: toml::Table = toml::from_str(text).map_err(|e| ExperimentError::Config(e.to_string()))?;
    for o in overrides {
        let (path, value) = parse_override(o)?;
        apply_override(&mut root, &path, value)?;
    }
    toml::Value::Table(root)
        .try_into()
        .map_err(|e: toml::de::Error| ExperimentError::Config(e.to_string()))
}

/// Like [`parse_toml_with_overrides`], reading from a file. With no file
/// the overrides apply to an empty document, so defaults fill the rest.
pub fn load_toml_with_overrides<T: DeserializeOwned>(
    path: Option<&Path>,
    overrides: &[String],
) -> Result<T, ExperimentError> {
    let text = match path {
        Some(p) => fs::read_to_string(p)
            .map_err(|e| ExperimentError::Config(format!("cannot read {}: {e}", p.display())))?,
        None => String::new(),
    };
    parse_toml_with_overrides(&text, overrides)
}

impl ExperimentConfig {
    /// Parses TOML text, applying `key=value` overrides first.
    pub fn from_toml(text: &str, overrides: &[String]) -> Result<ExperimentConfig, ExperimentError> {
        parse_toml_with_overrides(text, overrides)
    }

    /// Loads a config file; relative paths are taken relative to the
    /// file's directory.
    pub fn load(path: &Path, overrides: &[String]) -> Result<ExperimentConfig, ExperimentError> {
        let text = fs::read_to_string(path)
            .map_err(|e| ExperimentError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut config = ExperimentConfig::from_toml(&text, overrides)?;
        if let Some(base) = path.parent() {
            config.resolve_paths(base);
        }
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() && !p.as_os_str().is_empty() {
                *p = base.join(&*p);
            }
        };
        let d = &mut self.data;
        for p in [&mut d.train, &mut d.dev, &mut d.test, &mut self.experiment.output_dir] {
            fix(p);
        }
        for p in [
            &mut d.train_b,
            &mut d.dev_b,
            &mut d.raw_lang1,
            &mut d.raw_lang2,
            &mut d.dictionary,
            &mut self.experiment.cache_dir,
        ]
            .into_iter()
            .flatten()
        {
            fix(p);
        }
        d.raw_cs.iter_mut().chain(d.pivot_raw.iter_mut()).for_each(fix);
    }

    /// Rejects inconsistent configs before any work is done.
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let e = &self.experiment;
        let bad = |m: String| Err(ExperimentError::Config(m));
        if e.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        if e.seeds.iter().collect::<HashSet<_>>().len() != e.seeds.len() {
            return bad("seeds must be distinct".into());
        }
        if e.parallel_seeds == 0 {
            return bad("parallel_seeds must be at least 1".into());
        }
        let d = &self.data;
        for (name, p) in [("train", &d.train), ("dev", &d.dev), ("test", &d.test)] {
            if p.as_os_str().is_empty() {
                return bad(format!("data.{name} is required"));
            }
        }
        let mono = d.raw_lang1.is_some() as usize + d.raw_lang2.is_some() as usize;
        let need = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(ExperimentError::Config(format!("condition {} needs {what}", e.condition)))
            }
        };
        match e.condition {
            Condition::Random => Ok(()),
            Condition::MonoL1 => need(d.raw_lang1.is_some(), "data.raw_lang1"),
            Condition::MonoL2 => need(d.raw_lang2.is_some(), "data.raw_lang2"),
            Condition::Cfm => need(mono == 2, "data.raw_lang1 and data.raw_lang2"),
            Condition::Pcs => need(!d.raw_cs.is_empty(), "at least one data.raw_cs corpus"),
            Condition::PseudoCs => need(
                mono == 2 && !d.raw_cs.is_empty(),
                "data.raw_lang1, data.raw_lang2 and at least one data.raw_cs corpus",
            ),
            Condition::MultiPivot => need(
                mono + d.raw_cs.len() + d.pivot_raw.len() >= 2 && !d.pivot_raw.is_empty(),
                "data.pivot_raw plus the corpora of the main pair",
            ),
            Condition::Projected => need(
                mono == 2 && d.dictionary.is_some(),
                "data.raw_lang1, data.raw_lang2 and data.dictionary",
            ),
        }?;
        if self.tagger.kind == ArchKind::MtlPos && d.train_b.is_none() {
            return bad("architecture mtl_pos needs data.train_b".into());
        }
        self.embedding.validate()?;
        self.schedule.for_seed(0).validate()?;
        self.arch().validate()?;
        Ok(())
    }

    pub fn arch(&self) -> crate::tagger::TaggerArch {
        crate::tagger::TaggerArch {
            kind: self.tagger.kind,
            init: if self.experiment.condition == Condition::Random {
                crate::tagger::EmbeddingInit::Random
            } else {
                crate::tagger::EmbeddingInit::Pretrained
            },
            embedding_dim: self.embedding.dim,
            hidden: self.tagger.hidden,
            dropout: self.tagger.dropout,
            fine_tune: self.tagger.fine_tune,
        }
    }

    /// SHA-256 of the canonical JSON form (sorted keys, defaults filled),
    /// so field order in the file does not matter.
    pub fn hash(&self) -> String {
        canonical_hash(self)
    }

    pub fn corpus_label(&self) -> String {
        self.experiment.corpus.clone().unwrap_or_else(|| {
            self.data
                .test
                .file_stem()
                .map_or_else(|| "test".to_string(), |s| s.to_string_lossy().into_owned())
        })
    }
}

/// Hex SHA-256 of a value's JSON form with object keys sorted.
pub fn canonical_hash<T: Serialize>(value: &T) -> String {
    let v = serde_json::to_value(value).expect("config types serialize");
    hex::encode(Sha256::digest(v.to_string().as_bytes()))
}

/// Reads an annotated corpus.
pub fn load_annotated(path: &Path, split: Split) -> Result<Corpus, ExperimentError> {
    let text = fs::read_to_string(path)
        .map_err(|e| ExperimentError::Data(format!("cannot read {}: {e}", path.display())))?;
    let name = path
        .file_stem()
        .map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    Corpus::from_conllu_like(name, split, &text)
        .map_err(|e| ExperimentError::Data(format!("{}: {e}", path.display())))
}

/// Reads an unlabelled corpus: annotated format when the first content
/// line has four tab-separated columns, otherwise whitespace-tokenized
/// text with one sentence per line.
pub fn load_unlabelled(path: &Path) -> Result<Corpus, ExperimentError> {
    let text = fs::read_to_string(path)
        .map_err(|e| ExperimentError::Data(format!("cannot read {}: {e}", path.display())))?;
    let name = path
        .file_stem()
        .map_or_else(String::new, |s| s.to_string_lossy().into_owned());
    let annotated = text
        .lines()
        .find(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .is_some_and(|l| l.split('\t').count() == 4);
    if annotated {
        Corpus::from_conllu_like(name, Split::Raw, &text)
            .map_err(|e| ExperimentError::Data(format!("{}: {e}", path.display())))
    } else {
        Ok(Corpus::from_raw_text(name, &text))
    }
}
