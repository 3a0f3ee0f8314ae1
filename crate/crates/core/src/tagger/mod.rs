//! BiLSTM-CRF taggers: plain POS, two-pair multi-task POS, and joint
//! POS + language identification.

mod checkpoint;

use std::fmt;
use std::io;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Lid, Sentence, Upos, Vocabulary, PAD, UNK};
use crate::embed::EmbeddingTable;
use crate::nn::{Adam, AdamConfig, Matrix, NnError, SequenceModel, TokenInput};

pub use checkpoint::CHECKPOINT_MAGIC;

#[derive(Debug, Error)]
pub enum TaggerError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("malformed checkpoint: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl From<NnError> for TaggerError {
    fn from(e: NnError) -> Self {
        match e {
            NnError::NonFinite { .. } => TaggerError::Numeric(e.to_string()),
            NnError::Usage(m) => TaggerError::Usage(m),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArchKind {
    /// One POS head.
    BilstmCrf,
    /// Two POS heads, one per language pair.
    MtlPos,
    /// A POS head and a language-id head.
    MtlPosLid,
}

impl ArchKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ArchKind::BilstmCrf => "bilstm_crf",
            ArchKind::MtlPos => "mtl_pos",
            ArchKind::MtlPosLid => "mtl_pos_lid",
        }
    }
}

impl fmt::Display for ArchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ArchKind {
    type Err = TaggerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "bilstm_crf" => Ok(ArchKind::BilstmCrf),
            "mtl_pos" => Ok(ArchKind::MtlPos),
            "mtl_pos_lid" => Ok(ArchKind::MtlPosLid),
            _ => Err(TaggerError::Config(format!("unknown architecture {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingInit {
    #[default]
    Random,
    /// Rows copied from a pre-trained embedding table.
    Pretrained,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaggerArch {
    pub kind: ArchKind,
    pub init: EmbeddingInit,
    /// Embedding width; must equal the table's width for pre-trained init.
    pub embedding_dim: usize,
    /// Hidden units per direction.
    pub hidden: usize,
    pub dropout: f64,
    pub fine_tune: bool,
}

impl Default for TaggerArch {
    fn default() -> Self {
        TaggerArch {
            kind: ArchKind::BilstmCrf,
            init: EmbeddingInit::Random,
            embedding_dim: 100,
            hidden: 200,
            dropout: 0.2,
            fine_tune: true,
        }
    }
}

impl TaggerArch {
    pub fn validate(&self) -> Result<(), TaggerError> {
        if self.embedding_dim == 0 || self.hidden == 0 {
            return Err(TaggerError::Config("embedding_dim and hidden must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(TaggerError::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSchedule {
    pub max_epochs: usize,
    /// Epochs without dev improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub lr: f64,
    pub clip_norm: f64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        TrainSchedule {
            max_epochs: 50,
            patience: 5,
            seed: 1,
            lr: 1e-3,
            clip_norm: 5.0,
        }
    }
}

impl TrainSchedule {
    pub fn validate(&self) -> Result<(), TaggerError> {
        if self.max_epochs == 0 || self.patience == 0 || self.patience >= self.max_epochs {
            return Err(TaggerError::Config(format!(
                "need 0 < patience < max_epochs, got patience {} and max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        if !(self.lr >= 0.0) || !(self.clip_norm > 0.0) {
            return Err(TaggerError::Config("lr must be >= 0 and clip_norm > 0".into()));
        }
        Ok(())
    }
}

/// Label inventory of one output head.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum HeadLabels {
    Pos(Vec<Upos>),
    Lid(Vec<Lid>),
}

impl HeadLabels {
    pub fn len(&self) -> usize {
        match self {
            HeadLabels::Pos(v) => v.len(),
            HeadLabels::Lid(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn pos_of(corpus: &Corpus) -> HeadLabels {
        let mut seen = [false; 17];
        corpus.tokens().for_each(|t| seen[t.pos.index()] = true);
        HeadLabels::Pos(Upos::ALL.into_iter().filter(|u| seen[u.index()]).collect())
    }

    fn lid_of(corpus: &Corpus) -> HeadLabels {
        let mut seen = [false; 3];
        corpus.tokens().for_each(|t| seen[t.lid.index()] = true);
        HeadLabels::Lid(Lid::ALL.into_iter().filter(|l| seen[l.index()]).collect())
    }

    fn gold(&self, s: &Sentence) -> Vec<usize> {
        match self {
            HeadLabels::Pos(v) => s
                .tokens()
                .iter()
                .map(|t| v.iter().position(|&u| u == t.pos).expect("tag in inventory"))
                .collect(),
            HeadLabels::Lid(v) => s
                .tokens()
                .iter()
                .map(|t| v.iter().position(|&l| l == t.lid).expect("label in inventory"))
                .collect(),
        }
    }
}

/// Tags predicted for one sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedSentence {
    pub pos: Vec<Upos>,
    pub lid: Option<Vec<Lid>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TaggedOutput {
    pub sentences: Vec<TaggedSentence>,
}

impl TaggedOutput {
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// Copies of `input` carrying the predicted tags. Tokens keep their
    /// input LID label when no LID was predicted.
    pub fn apply_to(&self, input: &[Sentence]) -> Result<Vec<Sentence>, TaggerError> {
        if input.len() != self.sentences.len() {
            return Err(TaggerError::Usage("prediction and input sentence counts differ".into()));
        }
        input
            .iter()
            .zip(&self.sentences)
            .map(|(s, p)| {
                let tokens = s
                    .tokens()
                    .iter()
                    .enumerate()
                    .map(|(i, t)| {
                        let lid = p.lid.as_ref().map_or(t.lid, |l| l[i]);
                        crate::corpus::Token::new(t.form(), p.pos[i], lid)
                            .expect("form taken from a valid token")
                    })
                    .collect();
                Sentence::new(tokens).map_err(|e| TaggerError::Usage(e.to_string()))
            })
            .collect()
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean loss per training step.
    pub train_loss: f64,
    pub dev_acc: f64,
    pub dev_lid_acc: Option<f64>,
    /// Dev accuracy of the second POS head (multi-task POS only).
    pub dev_b_acc: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub epochs: Vec<EpochRecord>,
}

impl RunLog {
    pub fn to_tsv(&self) -> String {
        let lid = self.epochs.iter().any(|e| e.dev_lid_acc.is_some());
        let b = self.epochs.iter().any(|e| e.dev_b_acc.is_some());
        let mut out = String::from("epoch\ttrain_loss\tdev_acc");
        if lid {
            out.push_str("\tdev_lid_acc");
        }
        if b {
            out.push_str("\tdev_b_acc");
        }
        out.push('\n');
        for e in &self.epochs {
            out.push_str(&format!("{}\t{:.6}\t{:.6}", e.epoch, e.train_loss, e.dev_acc));
            if lid {
                out.push_str(&format!("\t{:.6}", e.dev_lid_acc.unwrap_or(f64::NAN)));
            }
            if b {
                out.push_str(&format!("\t{:.6}", e.dev_b_acc.unwrap_or(f64::NAN)));
            }
            out.push('\n');
        }
        out
    }
}

/// A trained tagger: network, vocabulary, head inventories and the
/// optional subword table used for words outside the vocabulary.
#[derive(Debug, Clone, PartialEq)]
pub struct TaggerModel {
    pub arch: TaggerArch,
    pub vocab: Vocabulary,
    pub heads: Vec<HeadLabels>,
    pub network: SequenceModel,
    pub backoff: Option<EmbeddingTable>,
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainingRun {
    /// The best-dev checkpoint.
    pub model: TaggerModel,
    pub log: RunLog,
    /// 1-based epoch of the returned checkpoint.
    pub best_epoch: usize,
}

impl TaggerModel {
    fn inputs(&self, s: &Sentence) -> Vec<TokenInput> {
        s.tokens()
            .iter()
            .map(|t| match (self.vocab.get(t.form()), &self.backoff) {
                (Some(i), _) => TokenInput::Row(i),
                (None, Some(table)) => {
                    TokenInput::Vector(table.lookup(t.form()).into_iter().map(f64::from).collect())
                }
                (None, None) => TokenInput::Row(UNK),
            })
            .collect()
    }

    fn decode_labels(&self, head: usize, ids: &[usize]) -> (Option<Vec<Upos>>, Option<Vec<Lid>>) {
        match &self.heads[head] {
            HeadLabels::Pos(v) => (Some(ids.iter().map(|&i| v[i]).collect()), None),
            HeadLabels::Lid(v) => (None, Some(ids.iter().map(|&i| v[i]).collect())),
        }
    }

    fn tag_prepared(&self, inputs: &[Vec<TokenInput>]) -> TaggedOutput {
        let sentences = inputs
            .iter()
            .map(|inp| {
                let all = if self.arch.kind == ArchKind::MtlPosLid {
                    self.network.decode_all(inp)
                } else {
                    self.network.decode(inp, 0).map(|p| vec![p])
                }
                .expect("inputs are built from the model's own vocabulary");
                let pos = self.decode_labels(0, &all[0]).0.expect("head 0 tags POS");
                let lid = all.get(1).and_then(|ids| self.decode_labels(1, ids).1);
                TaggedSentence { pos, lid }
            })
            .collect();
        TaggedOutput { sentences }
    }

    /// Viterbi-decodes every sentence. LID tags are produced by models
    /// with a language-id head.
    pub fn tag(&self, sentences: &[Sentence]) -> TaggedOutput {
        let inputs: Vec<_> = sentences.iter().map(|s| self.inputs(s)).collect();
        self.tag_prepared(&inputs)
    }

    /// POS tags from the second language pair's head of a multi-task POS
    /// model.
    pub fn tag_pair_b(&self, sentences: &[Sentence]) -> Result<TaggedOutput, TaggerError> {
        if self.arch.kind != ArchKind::MtlPos {
            return Err(TaggerError::Usage("only multi-task POS models have a second POS head".into()));
        }
        let sentences = sentences
            .iter()
            .map(|s| {
                let ids = self.network.decode(&self.inputs(s), 1)?;
                let pos = self.decode_labels(1, &ids).0.expect("head 1 tags POS");
                Ok(TaggedSentence { pos, lid: None })
            })
            .collect::<Result<_, TaggerError>>()?;
        Ok(TaggedOutput { sentences })
    }
}

fn build_model(
    arch: &TaggerArch,
    vocab: Vocabulary,
    heads: Vec<HeadLabels>,
    table: Option<&EmbeddingTable>,
    rng: &mut ChaCha8Rng,
) -> Result<TaggerModel, TaggerError> {
    arch.validate()?;
    let dim = arch.embedding_dim;
    let table = table.map(EmbeddingTable::standardized);
    let mut emb = Matrix::zeros(vocab.len(), dim);
    match (arch.init, &table) {
        (EmbeddingInit::Random, None) => {
            for r in 0..vocab.len() {
                if r == PAD {
                    continue;
                }
                for v in emb.row_mut(r) {
                    *v = rng.random_range(-0.05..0.05);
                }
            }
        }
        (EmbeddingInit::Pretrained, Some(t)) => {
            if t.dim() != dim {
                return Err(TaggerError::Config(format!(
                    "embedding table has dim {}, tagger expects {dim}",
                    t.dim()
                )));
            }
            for r in 2..vocab.len() {
                for (x, y) in emb.row_mut(r).iter_mut().zip(t.lookup(vocab.word(r))) {
                    *x = y as f64;
                }
            }
        }
        (EmbeddingInit::Random, Some(_)) => {
            return Err(TaggerError::Config("random initialization takes no embedding table".into()))
        }
        (EmbeddingInit::Pretrained, None) => {
            return Err(TaggerError::Config("pre-trained initialization needs an embedding table".into()))
        }
    }
    let sizes: Vec<usize> = heads.iter().map(HeadLabels::len).collect();
    let mut network = SequenceModel::new(emb, arch.hidden, &sizes, arch.dropout, rng)?;
    network.embedding.frozen = !arch.fine_tune;
    Ok(TaggerModel {
        arch: arch.clone(),
        vocab,
        heads,
        network,
        backoff: table,
    })
}

/// One training step: which sentence and which heads it trains.
struct Step<'a> {
    inputs: &'a [TokenInput],
    targets: Vec<(usize, &'a [usize])>,
}

struct Prepared {
    inputs: Vec<Vec<TokenInput>>,
    /// `golds[h][i]`: gold label ids of sentence `i` for head `h`.
    golds: Vec<Vec<Vec<usize>>>,
}

fn prepare(model: &TaggerModel, corpus: &Corpus, heads: &[usize]) -> Prepared {
    Prepared {
        inputs: corpus.sentences.iter().map(|s| model.inputs(s)).collect(),
        golds: heads
            .iter()
            .map(|&h| corpus.sentences.iter().map(|s| model.heads[h].gold(s)).collect())
            .collect(),
    }
}

fn token_accuracy<T: PartialEq>(gold: impl Iterator<Item = T>, pred: impl Iterator<Item = T>) -> f64 {
    let (mut ok, mut n) = (0usize, 0usize);
    for (g, p) in gold.zip(pred) {
        n += 1;
        ok += usize::from(g == p);
    }
    if n == 0 {
        0.0
    } else {
        ok as f64 / n as f64
    }
}

fn dev_scores(model: &TaggerModel, dev_inputs: &[Vec<TokenInput>], dev: &Corpus) -> (f64, Option<f64>) {
    let out = model.tag_prepared(dev_inputs);
    let pos = token_accuracy(
        dev.tokens().map(|t| t.pos),
        out.sentences.iter().flat_map(|s| s.pos.iter().copied()),
    );
    let lid = if model.arch.kind == ArchKind::MtlPosLid {
        Some(token_accuracy(
            dev.tokens().map(|t| t.lid),
            out.sentences
                .iter()
                .flat_map(|s| s.lid.as_ref().expect("LID head").iter().copied()),
        ))
    } else {
        None
    };
    (pos, lid)
}

/// Rounds every parameter to `f32` so a saved checkpoint reproduces the
/// in-memory model exactly.
fn round_to_f32(model: &mut TaggerModel) {
    for p in model.network.parameters_mut() {
        p.value.data_mut().iter_mut().for_each(|x| *x = *x as f32 as f64);
    }
}

/// Shared epoch loop. `plan` produces the step order of one epoch.
fn run_training<'a>(
    mut model: TaggerModel,
    sched: &TrainSchedule,
    rng: &mut ChaCha8Rng,
    mut plan: impl FnMut(&mut ChaCha8Rng) -> Vec<Step<'a>>,
    dev: &Corpus,
    dev_b: Option<&Corpus>,
) -> Result<TrainingRun, TaggerError> {
    let dev_inputs: Vec<_> = dev.sentences.iter().map(|s| model.inputs(s)).collect();
    let mut adam = Adam::new(AdamConfig {
        lr: sched.lr,
        clip_norm: Some(sched.clip_norm),
        ..AdamConfig::default()
    });
    let mut log = RunLog::default();
    let mut best: Option<(f64, usize, TaggerModel)> = None;
    let mut stale = 0;
    for epoch in 1..=sched.max_epochs {
        let steps = plan(rng);
        let mut total = 0.0;
        for step in &steps {
            let loss = model.network.forward(step.inputs, &step.targets, rng)?;
            if !loss.is_finite() {
                return Err(TaggerError::Numeric(format!("non-finite training loss in epoch {epoch}")));
            }
            total += loss;
            model.network.backward()?;
            adam.step(&mut model.network.parameters_mut())?;
        }
        let (dev_acc, dev_lid_acc) = dev_scores(&model, &dev_inputs, dev);
        let dev_b_acc = dev_b.map(|d| {
            let out = model.tag_pair_b(&d.sentences).expect("multi-task POS model");
            token_accuracy(
                d.tokens().map(|t| t.pos),
                out.sentences.iter().flat_map(|s| s.pos.iter().copied()),
            )
        });
        let train_loss = total / steps.len().max(1) as f64;
        log::info!("epoch {epoch}: loss {train_loss:.4} dev {dev_acc:.4}");
        log.epochs.push(EpochRecord {
            epoch,
            train_loss,
            dev_acc,
            dev_lid_acc,
            dev_b_acc,
        });
        if best.as_ref().is_none_or(|(b, _, _)| dev_acc > *b) {
            best = Some((dev_acc, epoch, model.clone()));
            stale = 0;
        } else {
            stale += 1;
            if stale >= sched.patience {
                break;
            }
        }
    }
    let (_, best_epoch, mut model) = best.expect("at least one epoch");
    round_to_f32(&mut model);
    Ok(TrainingRun {
        model,
        log,
        best_epoch,
    })
}

fn check_common(train: &Corpus, arch: &TaggerArch, sched: &TrainSchedule, kind: ArchKind) -> Result<(), TaggerError> {
    if arch.kind != kind {
        return Err(TaggerError::Config(format!(
            "architecture {} passed to the {kind} trainer",
            arch.kind
        )));
    }
    arch.validate()?;
    sched.validate()?;
    if train.is_empty() {
        return Err(TaggerError::Usage(format!("training corpus {:?} is empty", train.name)));
    }
    Ok(())
}

fn vocab_of(corpora: &[&Corpus]) -> Result<Vocabulary, TaggerError> {
    Vocabulary::build_from(corpora, 1).map_err(|e| TaggerError::Usage(e.to_string()))
}

/// Trains a single-head BiLSTM-CRF POS tagger.
pub fn train_bilstm_crf(
    train: &Corpus,
    dev: &Corpus,
    arch: &TaggerArch,
    sched: &TrainSchedule,
    table: Option<&EmbeddingTable>,
) -> Result<TrainingRun, TaggerError> {
    check_common(train, arch, sched, ArchKind::BilstmCrf)?;
    let mut rng = ChaCha8Rng::seed_from_u64(sched.seed);
    let model = build_model(arch, vocab_of(&[train])?, vec![HeadLabels::pos_of(train)], table, &mut rng)?;
    let data = prepare(&model, train, &[0]);
    let plan = |rng: &mut ChaCha8Rng| {
        let mut order: Vec<usize> = (0..data.inputs.len()).collect();
        order.shuffle(rng);
        order
            .into_iter()
            .map(|i| Step {
                inputs: &data.inputs[i],
                targets: vec![(0, data.golds[0][i].as_slice())],
            })
            .collect()
    };
    run_training(model, sched, &mut rng, plan, dev, None)
}

/// Trains two POS heads over a shared encoder, alternating one sentence
/// of pair A with one of pair B. The shorter corpus is recycled within
/// each epoch. Model selection uses pair A's dev accuracy.
pub fn train_mtl_pos(
    train_a: &Corpus,
    train_b: &Corpus,
    dev_a: &Corpus,
    dev_b: Option<&Corpus>,
    arch: &TaggerArch,
    sched: &TrainSchedule,
    table: Option<&EmbeddingTable>,
) -> Result<TrainingRun, TaggerError> {
    check_common(train_a, arch, sched, ArchKind::MtlPos)?;
    if train_b.is_empty() {
        return Err(TaggerError::Config("multi-task POS needs a second training corpus".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(sched.seed);
    let heads = vec![HeadLabels::pos_of(train_a), HeadLabels::pos_of(train_b)];
    let model = build_model(arch, vocab_of(&[train_a, train_b])?, heads, table, &mut rng)?;
    let a = prepare(&model, train_a, &[0]);
    let b = prepare(&model, train_b, &[1]);
    let plan = |rng: &mut ChaCha8Rng| {
        let mut oa: Vec<usize> = (0..a.inputs.len()).collect();
        let mut ob: Vec<usize> = (0..b.inputs.len()).collect();
        oa.shuffle(rng);
        ob.shuffle(rng);
        let n = oa.len().max(ob.len());
        let mut steps = Vec::with_capacity(2 * n);
        for k in 0..n {
            let i = oa[k % oa.len()];
            let j = ob[k % ob.len()];
            steps.push(Step {
                inputs: &a.inputs[i],
                targets: vec![(0, a.golds[0][i].as_slice())],
            });
            steps.push(Step {
                inputs: &b.inputs[j],
                targets: vec![(1, b.golds[0][j].as_slice())],
            });
        }
        steps
    };
    run_training(model, sched, &mut rng, plan, dev_a, dev_b)
}

/// Trains a POS head and a language-id head over a shared encoder with
/// the summed loss of both.
pub fn train_mtl_pos_lid(
    train: &Corpus,
    dev: &Corpus,
    arch: &TaggerArch,
    sched: &TrainSchedule,
    table: Option<&EmbeddingTable>,
) -> Result<TrainingRun, TaggerError> {
    check_common(train, arch, sched, ArchKind::MtlPosLid)?;
    if !train.has_lid_annotations() {
        return Err(TaggerError::Config(format!(
            "corpus {:?} has no language-id annotations",
            train.name
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(sched.seed);
    let heads = vec![HeadLabels::pos_of(train), HeadLabels::lid_of(train)];
    let model = build_model(arch, vocab_of(&[train])?, heads, table, &mut rng)?;
    let data = prepare(&model, train, &[0, 1]);
    let plan = |rng: &mut ChaCha8Rng| {
        let mut order: Vec<usize> = (0..data.inputs.len()).collect();
        order.shuffle(rng);
        order
            .into_iter()
            .map(|i| Step {
                inputs: &data.inputs[i],
                targets: vec![(0, data.golds[0][i].as_slice()), (1, data.golds[1][i].as_slice())],
            })
            .collect()
    };
    run_training(model, sched, &mut rng, plan, dev, None)
}

#[cfg(test)]
mod tests;
