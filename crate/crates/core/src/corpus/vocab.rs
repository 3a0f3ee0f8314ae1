use std::collections::HashMap;

use super::{Corpus, CorpusError, Split};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Word index built from training data. `PAD` and `UNK` occupy indices 0
/// and 1; remaining words are ordered by descending frequency, ties broken
/// lexicographically.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    pub fn build(corpus: &Corpus, min_count: usize) -> Result<Vocabulary, CorpusError> {
        Vocabulary::build_from(&[corpus], min_count)
    }

    /// Builds one vocabulary over several TRAIN corpora.
    pub fn build_from(corpora: &[&Corpus], min_count: usize) -> Result<Vocabulary, CorpusError> {
        if min_count < 1 {
            return Err(CorpusError::BadMinCount);
        }
        if let Some(c) = corpora.iter().find(|c| c.split != Split::Train) {
            return Err(CorpusError::NotTrainSplit(c.split));
        }
        let mut freq: HashMap<&str, u64> = HashMap::new();
        for c in corpora {
            for t in c.tokens() {
                *freq.entry(t.form()).or_default() += 1;
            }
        }
        Ok(Vocabulary::from_counts(
            freq.into_iter().map(|(w, n)| (w.to_string(), n)),
            min_count as u64,
        ))
    }

    /// Builds from explicit (word, count) pairs, applying the same ordering
    /// and threshold rules.
    pub fn from_counts<I: IntoIterator<Item = (String, u64)>>(counts: I, min_count: u64) -> Vocabulary {
        let mut entries: Vec<(String, u64)> = counts
            .into_iter()
            .filter(|(w, n)| *n >= min_count && w != PAD_TOKEN && w != UNK_TOKEN)
            .collect();
        entries.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        entries.dedup_by(|a, b| a.0 == b.0);
        let mut words = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        let mut cnt = vec![0, 0];
        for (w, n) in entries {
            words.push(w);
            cnt.push(n);
        }
        Vocabulary::from_parts(words, cnt)
    }

    /// Rebuilds a vocabulary from its serialized word list (index order kept).
    pub(crate) fn from_parts(words: Vec<String>, counts: Vec<u64>) -> Vocabulary {
        let index = words
            .iter()
            .enumerate()
            .skip(2)
            .map(|(i, w)| (w.clone(), i))
            .collect();
        Vocabulary {
            words,
            counts,
            index,
        }
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.len() <= 2
    }

    /// Index of `word`, or `UNK`.
    pub fn lookup(&self, word: &str) -> usize {
        self.get(word).unwrap_or(UNK)
    }

    pub fn get(&self, word: &str) -> Option<usize> {
        self.index.get(word).copied()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.index.contains_key(word)
    }

    pub fn word(&self, idx: usize) -> &str {
        &self.words[idx]
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn count(&self, idx: usize) -> u64 {
        self.counts[idx]
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }
}
