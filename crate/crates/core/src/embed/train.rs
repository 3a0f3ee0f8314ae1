//! Skip-gram with negative sampling over composed subword inputs.

use std::sync::atomic::{AtomicU32, AtomicUsize, Ordering};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{subword_table, EmbedError, EmbeddingConfig, EmbeddingTable};
use crate::corpus::{Corpus, Vocabulary};

/// Loss trace of a training run. `ema_*` is an exponential moving average
/// of the per-pair loss with a 1000-pair horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainStats {
    pub pairs: u64,
    pub ema_start: f64,
    pub ema_end: f64,
}

const EMA_HORIZON: f64 = 1000.0;

#[derive(Clone, Copy)]
enum Mat {
    WordIn,
    Bucket,
    Out,
}

/// Row access to the three parameter matrices.
trait ParamStore {
    fn read(&self, m: Mat, row: usize, out: &mut [f32]);
    fn add_to(&self, m: Mat, row: usize, acc: &mut [f32]);
    fn dot(&self, m: Mat, row: usize, v: &[f32]) -> f32;
    fn axpy(&mut self, m: Mat, row: usize, alpha: f32, v: &[f32]);
}

struct PlainStore<'a> {
    dim: usize,
    word_in: &'a mut [f32],
    buckets: &'a mut [f32],
    word_out: &'a mut [f32],
}

impl PlainStore<'_> {
    fn mat(&self, m: Mat) -> &[f32] {
        match m {
            Mat::WordIn => self.word_in,
            Mat::Bucket => self.buckets,
            Mat::Out => self.word_out,
        }
    }
}

impl ParamStore for PlainStore<'_> {
    fn read(&self, m: Mat, row: usize, out: &mut [f32]) {
        let d = self.dim;
        out.copy_from_slice(&self.mat(m)[row * d..(row + 1) * d]);
    }

    fn add_to(&self, m: Mat, row: usize, acc: &mut [f32]) {
        let d = self.dim;
        for (a, x) in acc.iter_mut().zip(&self.mat(m)[row * d..(row + 1) * d]) {
            *a += *x;
        }
    }

    fn dot(&self, m: Mat, row: usize, v: &[f32]) -> f32 {
        let d = self.dim;
        self.mat(m)[row * d..(row + 1) * d]
            .iter()
            .zip(v)
            .map(|(a, b)| a * b)
            .sum()
    }

    fn axpy(&mut self, m: Mat, row: usize, alpha: f32, v: &[f32]) {
        let d = self.dim;
        let data = match m {
            Mat::WordIn => &mut *self.word_in,
            Mat::Bucket => &mut *self.buckets,
            Mat::Out => &mut *self.word_out,
        };
        for (a, x) in data[row * d..(row + 1) * d].iter_mut().zip(v) {
            *a += alpha * *x;
        }
    }
}

/// Parameters shared between workers; element updates are relaxed
/// load/store pairs, so concurrent updates to one element may be lost.
struct SharedStore<'a> {
    dim: usize,
    word_in: &'a [AtomicU32],
    buckets: &'a [AtomicU32],
    word_out: &'a [AtomicU32],
}

impl SharedStore<'_> {
    fn row(&self, m: Mat, row: usize) -> &[AtomicU32] {
        let d = self.dim;
        let data = match m {
            Mat::WordIn => self.word_in,
            Mat::Bucket => self.buckets,
            Mat::Out => self.word_out,
        };
        &data[row * d..(row + 1) * d]
    }
}

fn ld(a: &AtomicU32) -> f32 {
    f32::from_bits(a.load(Ordering::Relaxed))
}

impl ParamStore for SharedStore<'_> {
    fn read(&self, m: Mat, row: usize, out: &mut [f32]) {
        for (o, a) in out.iter_mut().zip(self.row(m, row)) {
            *o = ld(a);
        }
    }

    fn add_to(&self, m: Mat, row: usize, acc: &mut [f32]) {
        for (o, a) in acc.iter_mut().zip(self.row(m, row)) {
            *o += ld(a);
        }
    }

    fn dot(&self, m: Mat, row: usize, v: &[f32]) -> f32 {
        self.row(m, row).iter().zip(v).map(|(a, b)| ld(a) * b).sum()
    }

    fn axpy(&mut self, m: Mat, row: usize, alpha: f32, v: &[f32]) {
        for (a, x) in self.row(m, row).iter().zip(v) {
            a.store((ld(a) + alpha * x).to_bits(), Ordering::Relaxed);
        }
    }
}

/// Cumulative unigram^0.75 distribution for negative sampling.
struct NegativeSampler {
    cumulative: Vec<f64>,
}

impl NegativeSampler {
    fn new(counts: &[u64]) -> NegativeSampler {
        let mut acc = 0.0;
        let cumulative = counts
            .iter()
            .map(|&c| {
                acc += (c as f64).powf(0.75);
                acc
            })
            .collect();
        NegativeSampler { cumulative }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        let total = *self.cumulative.last().unwrap();
        let x = rng.random::<f64>() * total;
        self.cumulative.partition_point(|&c| c <= x).min(self.cumulative.len() - 1)
    }
}

struct Shared<'a> {
    config: &'a EmbeddingConfig,
    subwords: &'a [Vec<u32>],
    sampler: NegativeSampler,
    keep_prob: Vec<f64>,
    distinct_words: usize,
}

fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

/// −log σ(x) computed stably.
fn neg_log_sigmoid(x: f64) -> f64 {
    if x > 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

struct Worker<'a, S: ParamStore> {
    shared: &'a Shared<'a>,
    store: S,
    rng: ChaCha8Rng,
    hidden: Vec<f32>,
    grad: Vec<f32>,
    out_row: Vec<f32>,
    ema: f64,
    ema_start: Option<f64>,
    pairs: u64,
}

impl<'a, S: ParamStore> Worker<'a, S> {
    fn new(shared: &'a Shared<'a>, store: S, seed: u64) -> Self {
        let d = shared.config.dim;
        Worker {
            shared,
            store,
            rng: ChaCha8Rng::seed_from_u64(seed),
            hidden: vec![0.0; d],
            grad: vec![0.0; d],
            out_row: vec![0.0; d],
            ema: 0.0,
            ema_start: None,
            pairs: 0,
        }
    }

    /// One (center, context) update with negative sampling.
    fn update(&mut self, center: usize, context: usize, lr: f32) {
        let subs = &self.shared.subwords[center];
        let scale = 1.0 / (1 + subs.len()) as f32;
        self.store.read(Mat::WordIn, center, &mut self.hidden);
        for &b in subs {
            self.store.add_to(Mat::Bucket, b as usize, &mut self.hidden);
        }
        self.hidden.iter_mut().for_each(|x| *x *= scale);
        self.grad.iter_mut().for_each(|g| *g = 0.0);

        let mut loss = 0.0f64;
        let negatives = self.shared.config.negatives;
        for k in 0..=negatives {
            let (target, label) = if k == 0 {
                (context, 1.0f32)
            } else {
                if self.shared.distinct_words < 2 {
                    break;
                }
                let mut t = self.shared.sampler.sample(&mut self.rng);
                let mut tries = 0;
                while t == context && tries < 16 {
                    t = self.shared.sampler.sample(&mut self.rng);
                    tries += 1;
                }
                if t == context {
                    continue;
                }
                (t, 0.0f32)
            };
            let score = self.store.dot(Mat::Out, target, &self.hidden);
            loss += if label > 0.5 {
                neg_log_sigmoid(score as f64)
            } else {
                neg_log_sigmoid(-score as f64)
            };
            let alpha = lr * (label - sigmoid(score));
            self.store.read(Mat::Out, target, &mut self.out_row);
            for (g, u) in self.grad.iter_mut().zip(&self.out_row) {
                *g += alpha * *u;
            }
            self.store.axpy(Mat::Out, target, alpha, &self.hidden);
        }
        // d(mean)/d(component) = 1/(1+n)
        self.store.axpy(Mat::WordIn, center, scale, &self.grad);
        for &b in subs {
            self.store.axpy(Mat::Bucket, b as usize, scale, &self.grad);
        }

        self.pairs += 1;
        let a = 1.0 / EMA_HORIZON;
        self.ema = if self.pairs == 1 { loss } else { (1.0 - a) * self.ema + a * loss };
        if self.pairs as f64 == EMA_HORIZON {
            self.ema_start = Some(self.ema);
        }
    }

    fn sentence(&mut self, ids: &[usize], lr: f32, buf: &mut Vec<usize>) {
        buf.clear();
        for &w in ids {
            let p = self.shared.keep_prob[w];
            if p >= 1.0 || self.rng.random::<f64>() < p {
                buf.push(w);
            }
        }
        let window = self.shared.config.window;
        for i in 0..buf.len() {
            let b = self.rng.random_range(1..=window);
            let lo = i.saturating_sub(b);
            let hi = (i + b).min(buf.len() - 1);
            for j in lo..=hi {
                if j != i {
                    self.update(buf[i], buf[j], lr);
                }
            }
        }
    }
}

fn init_uniform(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Vec<f32> {
    let r = 1.0 / dim as f32;
    (0..n).map(|_| rng.random_range(-r..r)).collect()
}

pub fn train_embeddings(corpus: &Corpus, config: &EmbeddingConfig) -> Result<EmbeddingTable, EmbedError> {
    train_embeddings_with_stats(corpus, config).map(|(t, _)| t)
}

/// Trains a table and reports the loss trace. With `workers == 1` the result
/// is a deterministic function of (corpus, config).
pub fn train_embeddings_with_stats(
    corpus: &Corpus,
    config: &EmbeddingConfig,
) -> Result<(EmbeddingTable, TrainStats), EmbedError> {
    config.validate()?;
    if corpus.token_count() == 0 {
        return Err(EmbedError::Usage("cannot train embeddings on an empty corpus".into()));
    }
    let mut freq = std::collections::HashMap::<&str, u64>::new();
    for t in corpus.tokens() {
        *freq.entry(t.form()).or_default() += 1;
    }
    let vocab = Vocabulary::from_counts(
        freq.into_iter().map(|(w, n)| (w.to_string(), n)),
        config.min_word_count as u64,
    );
    if vocab.len() <= 2 {
        return Err(EmbedError::Usage("no word reaches min_word_count".into()));
    }
    let sentences: Vec<Vec<usize>> = corpus
        .sentences
        .iter()
        .map(|s| s.tokens().iter().filter_map(|t| vocab.get(t.form())).collect())
        .collect();
    let total_tokens: usize = sentences.iter().map(Vec::len).sum();
    let keep_prob: Vec<f64> = vocab
        .counts()
        .iter()
        .map(|&c| {
            if config.subsample_t <= 0.0 || c == 0 {
                return 1.0;
            }
            let f = c as f64 / total_tokens as f64;
            let r = config.subsample_t / f;
            r.sqrt() + r
        })
        .collect();

    let d = config.dim;
    let mut init_rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut word_in = init_uniform(&mut init_rng, vocab.len() * d, d);
    let mut buckets = init_uniform(&mut init_rng, config.bucket_count * d, d);
    let mut word_out = vec![0.0f32; vocab.len() * d];
    let subwords = subword_table(&vocab, config);

    let shared = Shared {
        config,
        subwords: &subwords,
        sampler: NegativeSampler::new(vocab.counts()),
        keep_prob,
        distinct_words: vocab.len() - 2,
    };
    let planned = (total_tokens * config.epochs).max(1) as f64;
    let lr_at = |done: usize| (config.initial_lr * (1.0 - done as f64 / planned).max(0.0)) as f32;

    let stats = if config.workers == 1 {
        let store = PlainStore {
            dim: d,
            word_in: &mut word_in,
            buckets: &mut buckets,
            word_out: &mut word_out,
        };
        let mut w = Worker::new(&shared, store, config.seed.wrapping_add(1));
        let mut buf = Vec::new();
        let mut done = 0usize;
        for _ in 0..config.epochs {
            for ids in &sentences {
                w.sentence(ids, lr_at(done), &mut buf);
                done += ids.len();
            }
        }
        TrainStats {
            pairs: w.pairs,
            ema_start: w.ema_start.unwrap_or(w.ema),
            ema_end: w.ema,
        }
    } else {
        train_parallel(&shared, &sentences, &mut word_in, &mut buckets, &mut word_out, &lr_at)
    };

    let table = EmbeddingTable {
        config: config.clone(),
        vocab,
        word_in,
        buckets,
        word_out,
        subwords,
    };
    if !table.is_finite() {
        return Err(EmbedError::Numeric("non-finite embedding values after training".into()));
    }
    Ok((table, stats))
}

fn to_atomic(v: &[f32]) -> Vec<AtomicU32> {
    v.iter().map(|x| AtomicU32::new(x.to_bits())).collect()
}

fn from_atomic(src: &[AtomicU32], dst: &mut [f32]) {
    for (d, a) in dst.iter_mut().zip(src) {
        *d = ld(a);
    }
}

fn train_parallel(
    shared: &Shared<'_>,
    sentences: &[Vec<usize>],
    word_in: &mut [f32],
    buckets: &mut [f32],
    word_out: &mut [f32],
    lr_at: &(dyn Fn(usize) -> f32 + Sync),
) -> TrainStats {
    let config = shared.config;
    let a_in = to_atomic(word_in);
    let a_b = to_atomic(buckets);
    let a_out = to_atomic(word_out);
    let done = AtomicUsize::new(0);
    let workers = config.workers;
    let chunk = sentences.len().div_ceil(workers).max(1);
    let results: Vec<TrainStats> = std::thread::scope(|scope| {
        let handles: Vec<_> = sentences
            .chunks(chunk)
            .enumerate()
            .map(|(k, shard)| {
                let (a_in, a_b, a_out, done) = (&a_in, &a_b, &a_out, &done);
                scope.spawn(move || {
                    let store = SharedStore {
                        dim: config.dim,
                        word_in: a_in,
                        buckets: a_b,
                        word_out: a_out,
                    };
                    let mut w = Worker::new(shared, store, config.seed.wrapping_add(1 + k as u64));
                    let mut buf = Vec::new();
                    for _ in 0..config.epochs {
                        for ids in shard {
                            let lr = lr_at(done.load(Ordering::Relaxed));
                            w.sentence(ids, lr, &mut buf);
                            done.fetch_add(ids.len(), Ordering::Relaxed);
                        }
                    }
                    TrainStats {
                        pairs: w.pairs,
                        ema_start: w.ema_start.unwrap_or(w.ema),
                        ema_end: w.ema,
                    }
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("worker panicked")).collect()
    });
    from_atomic(&a_in, word_in);
    from_atomic(&a_b, buckets);
    from_atomic(&a_out, word_out);
    let n = results.len() as f64;
    TrainStats {
        pairs: results.iter().map(|r| r.pairs).sum(),
        ema_start: results.iter().map(|r| r.ema_start).sum::<f64>() / n,
        ema_end: results.iter().map(|r| r.ema_end).sum::<f64>() / n,
    }
}
