use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use log::info;

use cstag::align::{induce_dictionary, merge_tables, precision_at_1, procrustes_fit_with_report, project, AlignError, SeedDictionary};
use cstag::corpus::{corpus_stats, Corpus, CorpusError, Split, SynthConfig};
use cstag::embed::{compose_corpus, train_embeddings, CompositionKind, CompositionRecipe, EmbedError, EmbeddingConfig, EmbeddingTable};
use cstag::eval::{cs_point_rate, evaluate, mean_cs_fragment_len, render_text, render_tsv, EvalError};
use cstag::experiment::{
    load_annotated, load_toml_with_overrides, load_unlabelled, render_table, run_experiment, write_synthetic, ExperimentConfig,
    ExperimentError, RunManifest, MANIFEST_FILE,
};
use cstag::tagger::{
    train_bilstm_crf, train_mtl_pos, train_mtl_pos_lid, ArchKind, EmbeddingInit, TaggerArch, TaggerError, TaggerModel, TrainSchedule,
};

#[derive(Parser)]
#[command(name = "cstag", version, about = "POS tagging for code-switched text")]
struct Cli {
    /// Log verbosity (error, warn, info, debug, trace).
    #[arg(long, global = true, default_value = "info")]
    log_level: String,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and validate a corpus and print statistics.
    Prep(PrepArgs),
    /// Generate a synthetic code-switched language pair.
    Synth(SynthArgs),
    /// Train an embedding model on a composed corpus.
    Embed(EmbedArgs),
    /// Fit an orthogonal map between two embedding models.
    Align(AlignArgs),
    /// Train a tagger.
    Train(TrainArgs),
    /// Tag a test corpus with a trained model and score it.
    Eval(EvalArgs),
    /// Render an accuracy table from finished experiments.
    Report(ReportArgs),
    /// Run a full experiment from a config file.
    Run(RunArgs),
}

#[derive(Args)]
struct PrepArgs {
    corpus: PathBuf,
    /// Treat the input as raw text, one sentence per line.
    #[arg(long)]
    raw: bool,
    /// Write the normalized corpus here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    /// TOML file with generator settings.
    #[arg(long)]
    config: Option<PathBuf>,
    /// `key=value` override, repeatable.
    #[arg(long = "set")]
    overrides: Vec<String>,
}

#[derive(Args)]
struct EmbedArgs {
    /// mono, cfm, pcs, pseudo_cs or multi_pivot.
    #[arg(long)]
    kind: CompositionKind,
    /// Input corpora in recipe order.
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// TOML file with embedding settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "set")]
    overrides: Vec<String>,
    /// Also write vectors in text format.
    #[arg(long)]
    text: Option<PathBuf>,
}

#[derive(Args)]
struct AlignArgs {
    #[arg(long)]
    src: PathBuf,
    #[arg(long)]
    tgt: PathBuf,
    #[arg(long)]
    dictionary: PathBuf,
    /// Projection matrix output.
    #[arg(long)]
    out: PathBuf,
    /// Write the projected source merged with the target here.
    #[arg(long)]
    merged: Option<PathBuf>,
    /// Held-out pairs on which to report precision@1.
    #[arg(long)]
    eval_dictionary: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    dev: PathBuf,
    #[arg(long, default_value = "bilstm_crf")]
    arch: ArchKind,
    /// Second-pair corpora for mtl_pos.
    #[arg(long)]
    train_b: Option<PathBuf>,
    #[arg(long)]
    dev_b: Option<PathBuf>,
    /// Pre-trained embedding model; random init when absent.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Per-epoch log.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    dim: usize,
    #[arg(long, default_value_t = 200)]
    hidden: usize,
    #[arg(long, default_value_t = 0.2)]
    dropout: f64,
    /// Keep pre-trained embeddings fixed.
    #[arg(long)]
    freeze: bool,
    #[arg(long, default_value_t = 50)]
    max_epochs: usize,
    #[arg(long, default_value_t = 5)]
    patience: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    test: PathBuf,
    /// Write predictions here.
    #[arg(long)]
    pred: Option<PathBuf>,
    /// Write the metrics as TSV here.
    #[arg(long)]
    tsv: Option<PathBuf>,
    /// Rows of the error ranking to show.
    #[arg(long, default_value_t = 10)]
    top_errors: usize,
}

#[derive(Args)]
struct ReportArgs {
    /// Experiment output directories or manifest files.
    #[arg(required = true)]
    runs: Vec<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long = "set")]
    overrides: Vec<String>,
}

fn prep(a: PrepArgs) -> Result<()> {
    let corpus = if a.raw {
        load_unlabelled(&a.corpus)?
    } else {
        load_annotated(&a.corpus, Split::Train)?
    };
    print!("{}", corpus_stats(&corpus));
    if corpus.has_lid_annotations() {
        if let Ok(r) = cs_point_rate(&corpus) {
            println!("cs_point_rate\t{r:.4}");
        }
        if let Some(m) = mean_cs_fragment_len(&corpus) {
            println!("mean_cs_fragment_len\t{m:.4}");
        }
    }
    if let Some(out) = a.out {
        let text = if a.raw { corpus.to_raw_text() } else { corpus.to_conllu_like() };
        fs::write(&out, text).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}

fn synth(a: SynthArgs) -> Result<()> {
    let config: SynthConfig = load_toml_with_overrides(a.config.as_deref(), &a.overrides)?;
    let data = write_synthetic(&config, &a.out)?;
    println!(
        "wrote {} train, {} dev, {} test sentences to {}",
        data.train.len(),
        data.dev.len(),
        data.test.len(),
        a.out.display()
    );
    if let Ok(r) = cs_point_rate(&data.train) {
        println!("train cs_point_rate\t{r:.4}");
    }
    Ok(())
}

fn embed(a: EmbedArgs) -> Result<()> {
    let config: EmbeddingConfig = load_toml_with_overrides(a.config.as_deref(), &a.overrides)?;
    let corpora = a.inputs.iter().map(|p| load_unlabelled(p)).collect::<Result<Vec<Corpus>, _>>()?;
    let recipe = CompositionRecipe::new(a.kind, corpora)?;
    let corpus = compose_corpus(&recipe, config.seed)?;
    info!("training on {} sentences, {} tokens", corpus.len(), corpus.token_count());
    let table = train_embeddings(&corpus, &config)?;
    table.save(&a.out)?;
    if let Some(p) = a.text {
        table.write_text(std::io::BufWriter::new(fs::File::create(&p)?))?;
    }
    println!("{} words, dim {} -> {}", table.vocab().len(), table.dim(), a.out.display());
    Ok(())
}

fn align(a: AlignArgs) -> Result<()> {
    let src = EmbeddingTable::load(&a.src)?;
    let tgt = EmbeddingTable::load(&a.tgt)?;
    let dict = SeedDictionary::load(&a.dictionary)?;
    let (w, report) = procrustes_fit_with_report(&src, &tgt, &dict)?;
    w.save(&a.out)?;
    println!(
        "pairs used {}, filtered {}, residual {:.4} (identity {:.4})",
        report.pairs_used, report.pairs_filtered, report.residual, report.identity_residual
    );
    if let Some(p) = a.eval_dictionary {
        let gold = SeedDictionary::load(&p)?;
        let induced = induce_dictionary(&src, &tgt, &w, 1)?;
        println!("precision@1\t{:.4}", precision_at_1(&induced, &gold));
    }
    if let Some(p) = a.merged {
        merge_tables(&project(&src, &w)?, &tgt)?.save(&p)?;
    }
    Ok(())
}

fn train(a: TrainArgs) -> Result<()> {
    let train = load_annotated(&a.train, Split::Train)?;
    let dev = load_annotated(&a.dev, Split::Dev)?;
    let table = a.embeddings.as_deref().map(EmbeddingTable::load).transpose()?;
    let arch = TaggerArch {
        kind: a.arch,
        init: if table.is_some() {
            EmbeddingInit::Pretrained
        } else {
            EmbeddingInit::Random
        },
        embedding_dim: table.as_ref().map_or(a.dim, EmbeddingTable::dim),
        hidden: a.hidden,
        dropout: a.dropout,
        fine_tune: !a.freeze,
    };
    let sched = TrainSchedule {
        max_epochs: a.max_epochs,
        patience: a.patience,
        seed: a.seed,
        lr: a.lr,
        ..TrainSchedule::default()
    };
    let run = match a.arch {
        ArchKind::BilstmCrf => train_bilstm_crf(&train, &dev, &arch, &sched, table.as_ref())?,
        ArchKind::MtlPosLid => train_mtl_pos_lid(&train, &dev, &arch, &sched, table.as_ref())?,
        ArchKind::MtlPos => {
            let Some(tb) = &a.train_b else {
                bail!(ExperimentError::Config("--arch mtl_pos needs --train-b".into()));
            };
            let train_b = load_annotated(tb, Split::Train)?;
            let dev_b = a.dev_b.as_deref().map(|p| load_annotated(p, Split::Dev)).transpose()?;
            train_mtl_pos(&train, &train_b, &dev, dev_b.as_ref(), &arch, &sched, table.as_ref())?
        }
    };
    run.model.save(&a.out)?;
    if let Some(p) = a.log {
        fs::write(&p, run.log.to_tsv()).with_context(|| format!("writing {}", p.display()))?;
    }
    let best = &run.log.epochs[run.best_epoch - 1];
    println!("best epoch {} dev accuracy {:.4}", run.best_epoch, best.dev_acc);
    Ok(())
}

fn eval(a: EvalArgs) -> Result<()> {
    let model = TaggerModel::load(&a.model)?;
    let test = load_annotated(&a.test, Split::Test)?;
    let pred = model.tag(&test.sentences);
    let report = evaluate(&test, &pred, model.backoff.as_ref(), 0)?;
    print!("{}", render_text(&report, &test.name, a.top_errors));
    if let Some(p) = a.tsv {
        fs::write(&p, render_tsv(&report))?;
    }
    if let Some(p) = a.pred {
        let tagged = Corpus::new(test.name.clone(), Split::Test, pred.apply_to(&test.sentences)?);
        fs::write(&p, tagged.to_conllu_like())?;
    }
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let manifests = a
        .runs
        .iter()
        .map(|p| {
            let path = if p.is_dir() { p.join(MANIFEST_FILE) } else { p.clone() };
            RunManifest::load(&path)
        })
        .collect::<Result<Vec<_>, _>>()?;
    print!("{}", render_table(&manifests));
    Ok(())
}

fn run(a: RunArgs) -> Result<()> {
    let config = ExperimentConfig::load(&a.config, &a.overrides)?;
    let manifest = run_experiment(&config)?;
    let out = &config.experiment.output_dir;
    if let Ok(text) = fs::read_to_string(out.join("report.txt")) {
        print!("{text}");
    }
    println!("manifest: {}", Path::new(out).join(MANIFEST_FILE).display());
    info!("config hash {}", manifest.config_hash);
    Ok(())
}

/// Maps the first library error in the chain to its exit code.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<ExperimentError>() {
            return e.exit_code() as u8;
        }
        if let Some(e) = cause.downcast_ref::<TaggerError>() {
            return match e {
                TaggerError::Config(_) => 2,
                TaggerError::Numeric(_) => 4,
                _ => 3,
            };
        }
        if let Some(e) = cause.downcast_ref::<EmbedError>() {
            return match e {
                EmbedError::Config(_) => 2,
                EmbedError::Numeric(_) => 4,
                _ => 3,
            };
        }
        if let Some(e) = cause.downcast_ref::<AlignError>() {
            return match e {
                AlignError::Usage(_) => 2,
                _ => 3,
            };
        }
        if let Some(e) = cause.downcast_ref::<CorpusError>() {
            return match e {
                CorpusError::SynthConfig(_) => 2,
                _ => 3,
            };
        }
        if cause.is::<EvalError>() || cause.is::<std::io::Error>() {
            return 3;
        }
    }
    1
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().parse_filters(&cli.log_level).init();
    let result = match cli.command {
        Command::Prep(a) => prep(a),
        Command::Synth(a) => synth(a),
        Command::Embed(a) => embed(a),
        Command::Align(a) => align(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Report(a) => report(a),
        Command::Run(a) => run(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
