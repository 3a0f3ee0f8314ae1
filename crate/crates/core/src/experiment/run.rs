use std::fs;
use std::path::{Path, PathBuf};
use std::thread;

use log::info;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

use super::{canonical_hash, load_annotated, load_unlabelled, Condition, ExperimentConfig, ExperimentError};
use crate::align::{merge_tables, procrustes_fit_with_report, project, ProjectionMatrix, SeedDictionary};
use crate::corpus::{generate_synthetic, Corpus, Split, SynthConfig, SyntheticCorpora};
use crate::embed::{compose_corpus, train_embeddings, CompositionKind, CompositionRecipe, EmbeddingConfig, EmbeddingTable};
use crate::eval::{aggregate_seeds, evaluate, render_text, render_tsv, MetricsReport, ScalarMetrics};
use crate::io::publish_atomically;
use crate::tagger::{train_bilstm_crf, train_mtl_pos, train_mtl_pos_lid, ArchKind, TrainingRun};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum RunStatus {
    Complete,
    /// Some seeds failed; `failed` pairs each seed with its error.
    Partial { failed: Vec<(u64, String)> },
}

/// Files written for one seed, relative to the output directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedArtifacts {
    pub seed: u64,
    pub checkpoint: PathBuf,
    pub run_log: PathBuf,
    pub report: PathBuf,
    pub predictions: PathBuf,
    pub best_epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub name: String,
    pub version: String,
    pub config_hash: String,
    pub condition: Condition,
    pub arch: ArchKind,
    pub corpus: String,
    /// Cached embedding model used by every seed, if any.
    pub embedding: Option<PathBuf>,
    /// True when the embedding model came from an earlier run.
    pub embedding_cache_hit: bool,
    pub seeds: Vec<SeedArtifacts>,
    /// Aggregate report over the completed seeds.
    pub report: Option<PathBuf>,
    pub summary: Option<ScalarMetrics>,
    pub status: RunStatus,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<RunManifest, ExperimentError> {
        let text = fs::read_to_string(path)
            .map_err(|e| ExperimentError::Data(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| ExperimentError::Data(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<(), ExperimentError> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        publish_atomically(path, format!("{text}\n").as_bytes())?;
        Ok(())
    }

    /// Every path the manifest references.
    pub fn referenced_paths(&self) -> Vec<&Path> {
        let mut out: Vec<&Path> = self.embedding.iter().chain(&self.report).map(PathBuf::as_path).collect();
        for s in &self.seeds {
            out.extend([&s.checkpoint, &s.run_log, &s.report, &s.predictions].map(PathBuf::as_path));
        }
        out
    }
}

fn file_digest(path: &Path) -> Result<String, ExperimentError> {
    let bytes = fs::read(path).map_err(|e| ExperimentError::Data(format!("cannot read {}: {e}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Cache key of an embedding model: the composition kind, the content
/// digests of its input files and the embedding config.
pub fn embedding_cache_key(kind: CompositionKind, inputs: &[PathBuf], config: &EmbeddingConfig) -> Result<String, ExperimentError> {
    let digests = inputs.iter().map(|p| file_digest(p)).collect::<Result<Vec<_>, _>>()?;
    Ok(canonical_hash(&json!({
        "kind": kind.as_str(),
        "inputs": digests,
        "embedding": config,
    })))
}

struct EmbeddingCache {
    dir: PathBuf,
    hits: usize,
    misses: usize,
}

impl EmbeddingCache {
    fn path_for(&self, key: &str) -> PathBuf {
        self.dir.join(format!("emb-{key}.csemb"))
    }

    /// Loads the model for `kind` over `inputs`, training and publishing
    /// it on a miss.
    fn table(
        &mut self,
        kind: CompositionKind,
        inputs: &[PathBuf],
        config: &EmbeddingConfig,
    ) -> Result<(EmbeddingTable, PathBuf), ExperimentError> {
        let key = embedding_cache_key(kind, inputs, config)?;
        let path = self.path_for(&key);
        if path.exists() {
            info!("embedding cache hit: {}", path.display());
            self.hits += 1;
            return Ok((EmbeddingTable::load(&path)?, path));
        }
        self.misses += 1;
        let corpora = inputs.iter().map(|p| load_unlabelled(p)).collect::<Result<Vec<_>, _>>()?;
        let recipe = CompositionRecipe::new(kind, corpora)?;
        let corpus = compose_corpus(&recipe, config.seed)?;
        info!(
            "training {kind} embeddings on {} sentences ({} tokens)",
            corpus.len(),
            corpus.token_count()
        );
        let table = train_embeddings(&corpus, config)?;
        fs::create_dir_all(&self.dir)?;
        table.save(&path)?;
        Ok((table, path))
    }

    /// Aligns the first-language space onto the second and merges them.
    fn projected(
        &mut self,
        l1: &Path,
        l2: &Path,
        dictionary: &Path,
        config: &EmbeddingConfig,
    ) -> Result<(EmbeddingTable, PathBuf), ExperimentError> {
        let (src, src_path) = self.table(CompositionKind::Mono, &[l1.to_path_buf()], config)?;
        let (tgt, tgt_path) = self.table(CompositionKind::Mono, &[l2.to_path_buf()], config)?;
        let key = canonical_hash(&json!({
            "projected": [src_path.file_name().map(|s| s.to_string_lossy()), tgt_path.file_name().map(|s| s.to_string_lossy())],
            "dictionary": file_digest(dictionary)?,
        }));
        let path = self.dir.join(format!("proj-{key}.csprj"));
        let w = if path.exists() {
            info!("projection cache hit: {}", path.display());
            self.hits += 1;
            ProjectionMatrix::load(&path)?
        } else {
            self.misses += 1;
            let dict = SeedDictionary::load(dictionary)?;
            let (w, report) = procrustes_fit_with_report(&src, &tgt, &dict)?;
            info!(
                "procrustes: {} pairs used, {} filtered, residual {:.4} (identity {:.4})",
                report.pairs_used, report.pairs_filtered, report.residual, report.identity_residual
            );
            w.save(&path)?;
            w
        };
        let merged = merge_tables(&project(&src, &w)?, &tgt)?;
        let merged_path = self.dir.join(format!("merged-{key}.csemb"));
        if !merged_path.exists() {
            merged.save(&merged_path)?;
        }
        Ok((merged, merged_path))
    }
}

/// The embedding model for the configured condition, if it uses one.
fn condition_embeddings(
    config: &ExperimentConfig,
    cache: &mut EmbeddingCache,
) -> Result<Option<(EmbeddingTable, PathBuf)>, ExperimentError> {
    let d = &config.data;
    let emb = &config.embedding;
    let mono = || -> Vec<PathBuf> { d.raw_lang1.iter().chain(&d.raw_lang2).cloned().collect() };
    let recipe = match config.experiment.condition {
        Condition::Random => return Ok(None),
        Condition::Projected => {
            let (l1, l2, dict) = match (&d.raw_lang1, &d.raw_lang2, &d.dictionary) {
                (Some(a), Some(b), Some(c)) => (a, b, c),
                _ => return Err(ExperimentError::Config("projected condition is missing inputs".into())),
            };
            return cache.projected(l1, l2, dict, emb).map(Some);
        }
        Condition::MonoL1 => (CompositionKind::Mono, d.raw_lang1.iter().cloned().collect()),
        Condition::MonoL2 => (CompositionKind::Mono, d.raw_lang2.iter().cloned().collect()),
        Condition::Cfm => (CompositionKind::Cfm, mono()),
        Condition::Pcs => (CompositionKind::Pcs, d.raw_cs.clone()),
        Condition::PseudoCs => (CompositionKind::PseudoCs, [mono(), d.raw_cs.clone()].concat()),
        Condition::MultiPivot => (
            CompositionKind::MultiPivot,
            [mono(), d.raw_cs.clone(), d.pivot_raw.clone()].concat(),
        ),
    };
    cache.table(recipe.0, &recipe.1, emb).map(Some)
}

struct Inputs {
    train: Corpus,
    dev: Corpus,
    test: Corpus,
    train_b: Option<Corpus>,
    dev_b: Option<Corpus>,
}

fn load_inputs(config: &ExperimentConfig) -> Result<Inputs, ExperimentError> {
    let d = &config.data;
    let opt = |p: &Option<PathBuf>, split| p.as_deref().map(|p| load_annotated(p, split)).transpose();
    Ok(Inputs {
        train: load_annotated(&d.train, Split::Train)?,
        dev: load_annotated(&d.dev, Split::Dev)?,
        test: load_annotated(&d.test, Split::Test)?,
        train_b: opt(&d.train_b, Split::Train)?,
        dev_b: opt(&d.dev_b, Split::Dev)?,
    })
}

fn write_text(path: &Path, text: &str) -> Result<(), ExperimentError> {
    publish_atomically(path, text.as_bytes())?;
    Ok(())
}

fn write_report(stem: &Path, report: &MetricsReport, title: &str) -> Result<PathBuf, ExperimentError> {
    let json_path = stem.with_extension("json");
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    write_text(&json_path, &format!("{json}\n"))?;
    write_text(&stem.with_extension("tsv"), &render_tsv(report))?;
    write_text(&stem.with_extension("txt"), &render_text(report, title, 10))?;
    Ok(json_path)
}

fn train_seed(
    config: &ExperimentConfig,
    inputs: &Inputs,
    table: Option<&EmbeddingTable>,
    seed: u64,
) -> Result<TrainingRun, ExperimentError> {
    let arch = config.arch();
    let sched = config.schedule.for_seed(seed);
    let run = match arch.kind {
        ArchKind::BilstmCrf => train_bilstm_crf(&inputs.train, &inputs.dev, &arch, &sched, table)?,
        ArchKind::MtlPosLid => train_mtl_pos_lid(&inputs.train, &inputs.dev, &arch, &sched, table)?,
        ArchKind::MtlPos => {
            let b = inputs
                .train_b
                .as_ref()
                .ok_or_else(|| ExperimentError::Config("mtl_pos needs data.train_b".into()))?;
            train_mtl_pos(&inputs.train, b, &inputs.dev, inputs.dev_b.as_ref(), &arch, &sched, table)?
        }
    };
    Ok(run)
}

/// Trains, evaluates and writes one seed.
fn run_seed(
    config: &ExperimentConfig,
    inputs: &Inputs,
    table: Option<&EmbeddingTable>,
    seed: u64,
) -> Result<(SeedArtifacts, MetricsReport), ExperimentError> {
    let out = &config.experiment.output_dir;
    let rel = PathBuf::from(format!("seed-{seed}"));
    fs::create_dir_all(out.join(&rel))?;
    info!("seed {seed}: training {}", config.tagger.kind);
    let run = train_seed(config, inputs, table, seed)?;
    let pred = run.model.tag(&inputs.test.sentences);
    let report = evaluate(&inputs.test, &pred, table, seed)?;

    let artifacts = SeedArtifacts {
        seed,
        checkpoint: rel.join("model.cstag"),
        run_log: rel.join("run_log.tsv"),
        report: rel.join("report.json"),
        predictions: rel.join("predictions.tsv"),
        best_epoch: run.best_epoch,
    };
    run.model.save(&out.join(&artifacts.checkpoint))?;
    write_text(&out.join(&artifacts.run_log), &run.log.to_tsv())?;
    let tagged = Corpus::new(inputs.test.name.clone(), Split::Test, pred.apply_to(&inputs.test.sentences)?);
    write_text(&out.join(&artifacts.predictions), &tagged.to_conllu_like())?;
    let title = format!("{} / {} / seed {seed}", config.experiment.condition, config.tagger.kind);
    write_report(&out.join(rel.join("report")), &report, &title)?;
    info!("seed {seed}: test accuracy {:.4}", report.metrics.pos_accuracy);
    Ok((artifacts, report))
}

/// Runs every seed of an experiment and writes reports plus a manifest
/// into the output directory. Embedding models are cached under
/// `cache/` and reused by later runs with the same inputs.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunManifest, ExperimentError> {
    config.validate()?;
    let out = config.experiment.output_dir.clone();
    fs::create_dir_all(&out)?;
    let inputs = load_inputs(config)?;
    let mut cache = EmbeddingCache {
        dir: config.experiment.cache_dir.clone().unwrap_or_else(|| out.join("cache")),
        hits: 0,
        misses: 0,
    };
    let embedding = condition_embeddings(config, &mut cache)?;
    let table = embedding.as_ref().map(|(t, _)| t);

    let seeds = &config.experiment.seeds;
    let mut results: Vec<(u64, Result<(SeedArtifacts, MetricsReport), ExperimentError>)> = Vec::new();
    for chunk in seeds.chunks(config.experiment.parallel_seeds) {
        if chunk.len() == 1 {
            results.push((chunk[0], run_seed(config, &inputs, table, chunk[0])));
            continue;
        }
        let inputs = &inputs;
        thread::scope(|scope| {
            let handles: Vec<_> = chunk
                .iter()
                .map(|&s| (s, scope.spawn(move || run_seed(config, inputs, table, s))))
                .collect();
            for (s, h) in handles {
                results.push((s, h.join().expect("seed worker panicked")));
            }
        });
    }

    let mut artifacts = Vec::new();
    let mut reports = Vec::new();
    let mut failed = Vec::new();
    let mut first_error = None;
    for (seed, r) in results {
        match r {
            Ok((a, rep)) => {
                artifacts.push(a);
                reports.push(rep);
            }
            Err(e) => {
                log::error!("seed {seed} failed: {e}");
                failed.push((seed, e.to_string()));
                first_error.get_or_insert(e);
            }
        }
    }

    let (report, summary) = if reports.is_empty() {
        (None, None)
    } else {
        let agg = aggregate_seeds(&reports)?;
        let title = format!("{} / {} / mean over {} seeds", config.experiment.condition, config.tagger.kind, reports.len());
        write_report(&out.join("report"), &agg, &title)?;
        (Some(PathBuf::from("report.json")), Some(agg.metrics))
    };
    let manifest = RunManifest {
        name: config.experiment.name.clone(),
        version: crate::VERSION.to_string(),
        config_hash: config.hash(),
        condition: config.experiment.condition,
        arch: config.tagger.kind,
        corpus: config.corpus_label(),
        embedding: embedding.as_ref().map(|(_, p)| p.strip_prefix(&out).unwrap_or(p).to_path_buf()),
        embedding_cache_hit: cache.hits > 0 && cache.misses == 0,
        seeds: artifacts,
        report,
        summary,
        status: if failed.is_empty() {
            RunStatus::Complete
        } else {
            RunStatus::Partial { failed: failed.clone() }
        },
    };
    manifest.save(&out.join(MANIFEST_FILE))?;
    match first_error {
        None => Ok(manifest),
        Some(e) if manifest.seeds.is_empty() => Err(e),
        Some(e) => Err(ExperimentError::Partial {
            completed: manifest.seeds.len(),
            total: seeds.len(),
            cause: Box::new(e),
        }),
    }
}

/// Generates synthetic corpora and writes them in the file layout an
/// experiment config expects.
pub fn write_synthetic(config: &SynthConfig, dir: &Path) -> Result<SyntheticCorpora, ExperimentError> {
    let data = generate_synthetic(config)?;
    fs::create_dir_all(dir)?;
    for (name, c) in [("train", &data.train), ("dev", &data.dev), ("test", &data.test)] {
        write_text(&dir.join(format!("{name}.tsv")), &c.to_conllu_like())?;
    }
    for (name, c) in [("raw_lang1", &data.raw_lang1), ("raw_lang2", &data.raw_lang2), ("raw_cs", &data.raw_cs)] {
        write_text(&dir.join(format!("{name}.txt")), &c.to_raw_text())?;
    }
    write_text(&dir.join("dictionary.tsv"), &SeedDictionary::new(data.dictionary.clone()).to_tsv())?;
    Ok(data)
}
