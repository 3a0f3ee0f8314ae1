//! Token-level annotated corpora.
//!
//! Annotated files use a 4-column TSV layout (`INDEX FORM UPOS LID`), one
//! token per line, sentences separated by a blank line, `#` comment lines
//! allowed. Raw files hold one whitespace-tokenized sentence per line.

mod synth;
mod vocab;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use synth::{generate_synthetic, LanguageProfile, SynthConfig, SyntheticCorpora};
pub use vocab::{Vocabulary, PAD, PAD_TOKEN, UNK, UNK_TOKEN};

#[derive(Debug, Error, PartialEq)]
pub enum CorpusError {
    #[error("line {line}: expected 4 tab-separated columns, found {found}")]
    ColumnCount { line: usize, found: usize },
    #[error("line {line}: bad token index {value:?} (expected {expected})")]
    BadIndex {
        line: usize,
        value: String,
        expected: usize,
    },
    #[error("line {line}: unknown POS label {label:?}")]
    UnknownPos { line: usize, label: String },
    #[error("line {line}: unknown LID label {label:?}")]
    UnknownLid { line: usize, label: String },
    #[error("invalid token form {0:?}")]
    InvalidForm(String),
    #[error("empty sentence")]
    EmptySentence,
    #[error("vocabulary must be built from a TRAIN corpus, got {0}")]
    NotTrainSplit(Split),
    #[error("min_count must be at least 1")]
    BadMinCount,
    #[error("synthetic config: {0}")]
    SynthConfig(String),
}

/// The 17 Universal POS tags.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Upos {
    Adj,
    Adp,
    Adv,
    Aux,
    Cconj,
    Det,
    Intj,
    Noun,
    Num,
    Part,
    Pron,
    Propn,
    Punct,
    Sconj,
    Sym,
    Verb,
    X,
}

impl Upos {
    pub const ALL: [Upos; 17] = [
        Upos::Adj,
        Upos::Adp,
        Upos::Adv,
        Upos::Aux,
        Upos::Cconj,
        Upos::Det,
        Upos::Intj,
        Upos::Noun,
        Upos::Num,
        Upos::Part,
        Upos::Pron,
        Upos::Propn,
        Upos::Punct,
        Upos::Sconj,
        Upos::Sym,
        Upos::Verb,
        Upos::X,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Upos::Adj => "ADJ",
            Upos::Adp => "ADP",
            Upos::Adv => "ADV",
            Upos::Aux => "AUX",
            Upos::Cconj => "CCONJ",
            Upos::Det => "DET",
            Upos::Intj => "INTJ",
            Upos::Noun => "NOUN",
            Upos::Num => "NUM",
            Upos::Part => "PART",
            Upos::Pron => "PRON",
            Upos::Propn => "PROPN",
            Upos::Punct => "PUNCT",
            Upos::Sconj => "SCONJ",
            Upos::Sym => "SYM",
            Upos::Verb => "VERB",
            Upos::X => "X",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Upos> {
        Upos::ALL.get(i).copied()
    }
}

impl fmt::Display for Upos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Upos {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Upos::ALL
            .iter()
            .copied()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| s.to_string())
    }
}

/// Token-level language label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Lid {
    Lang1,
    Lang2,
    Other,
}

impl Lid {
    pub const ALL: [Lid; 3] = [Lid::Lang1, Lid::Lang2, Lid::Other];

    pub fn as_str(self) -> &'static str {
        match self {
            Lid::Lang1 => "LANG1",
            Lid::Lang2 => "LANG2",
            Lid::Other => "OTHER",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Lid> {
        Lid::ALL.get(i).copied()
    }

    /// True for LANG1/LANG2.
    pub fn is_language(self) -> bool {
        self != Lid::Other
    }

    pub fn swapped(self) -> Lid {
        match self {
            Lid::Lang1 => Lid::Lang2,
            Lid::Lang2 => Lid::Lang1,
            Lid::Other => Lid::Other,
        }
    }
}

impl fmt::Display for Lid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Lid {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Lid::ALL
            .iter()
            .copied()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| s.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Token {
    form: String,
    pub pos: Upos,
    pub lid: Lid,
}

impl Token {
    pub fn new(form: impl Into<String>, pos: Upos, lid: Lid) -> Result<Token, CorpusError> {
        let form = form.into();
        if form.is_empty() || form.chars().any(char::is_whitespace) {
            return Err(CorpusError::InvalidForm(form));
        }
        Ok(Token { form, pos, lid })
    }

    pub fn form(&self) -> &str {
        &self.form
    }
}

/// A non-empty sequence of annotated tokens.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Sentence {
    tokens: Vec<Token>,
}

impl Sentence {
    pub fn new(tokens: Vec<Token>) -> Result<Sentence, CorpusError> {
        if tokens.is_empty() {
            return Err(CorpusError::EmptySentence);
        }
        Ok(Sentence { tokens })
    }

    pub fn tokens(&self) -> &[Token] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn forms(&self) -> Vec<&str> {
        self.tokens.iter().map(|t| t.form()).collect()
    }

    pub fn pos_tags(&self) -> Vec<Upos> {
        self.tokens.iter().map(|t| t.pos).collect()
    }

    pub fn lid_tags(&self) -> Vec<Lid> {
        self.tokens.iter().map(|t| t.lid).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Split {
    Train,
    Dev,
    Test,
    Raw,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "TRAIN",
            Split::Dev => "DEV",
            Split::Test => "TEST",
            Split::Raw => "RAW",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub name: String,
    pub split: Split,
    pub sentences: Vec<Sentence>,
}

impl Corpus {
    pub fn new(name: impl Into<String>, split: Split, sentences: Vec<Sentence>) -> Corpus {
        Corpus {
            name: name.into(),
            split,
            sentences,
        }
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(Sentence::len).sum()
    }

    pub fn tokens(&self) -> impl Iterator<Item = &Token> {
        self.sentences.iter().flat_map(|s| s.tokens.iter())
    }

    /// True when the corpus has at least one LANG1 or LANG2 token.
    pub fn has_lid_annotations(&self) -> bool {
        self.tokens().any(|t| t.lid.is_language())
    }

    /// False only if both LANG1 and LANG2 occur.
    pub fn is_monolingual(&self) -> bool {
        let mut seen = [false; 2];
        for t in self.tokens() {
            match t.lid {
                Lid::Lang1 => seen[0] = true,
                Lid::Lang2 => seen[1] = true,
                Lid::Other => {}
            }
        }
        !(seen[0] && seen[1])
    }

    pub fn with_split(mut self, split: Split) -> Corpus {
        self.split = split;
        self
    }

    /// Parses the annotated TSV format.
    pub fn from_conllu_like(
        name: impl Into<String>,
        split: Split,
        text: &str,
    ) -> Result<Corpus, CorpusError> {
        Ok(Corpus::new(name, split, parse_conllu_like(text)?))
    }

    /// Parses a raw corpus; tokens carry placeholder tags `X`/`OTHER`.
    pub fn from_raw_text(name: impl Into<String>, text: &str) -> Corpus {
        let sentences = text
            .lines()
            .filter_map(|line| {
                let tokens: Vec<Token> = line
                    .split_whitespace()
                    .map(|w| Token {
                        form: w.to_string(),
                        pos: Upos::X,
                        lid: Lid::Other,
                    })
                    .collect();
                Sentence::new(tokens).ok()
            })
            .collect();
        Corpus::new(name, Split::Raw, sentences)
    }

    pub fn to_conllu_like(&self) -> String {
        let mut out = String::new();
        for s in &self.sentences {
            for (i, t) in s.tokens.iter().enumerate() {
                out.push_str(&format!("{}\t{}\t{}\t{}\n", i + 1, t.form, t.pos, t.lid));
            }
            out.push('\n');
        }
        out
    }

    pub fn to_raw_text(&self) -> String {
        let mut out = String::new();
        for s in &self.sentences {
            out.push_str(&s.forms().join(" "));
            out.push('\n');
        }
        out
    }
}

/// Parses annotated TSV into sentences. Blank lines end a sentence (runs of
/// blank lines are tolerated), `#` lines are ignored.
pub fn parse_conllu_like(text: &str) -> Result<Vec<Sentence>, CorpusError> {
    let mut sentences = Vec::new();
    let mut current: Vec<Token> = Vec::new();
    for (lineno, raw_line) in text.lines().enumerate() {
        let line_no = lineno + 1;
        let line = raw_line.trim_end_matches(['\r', ' ']);
        if line.trim().is_empty() {
            if !current.is_empty() {
                sentences.push(Sentence {
                    tokens: std::mem::take(&mut current),
                });
            }
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(CorpusError::ColumnCount {
                line: line_no,
                found: cols.len(),
            });
        }
        let expected = current.len() + 1;
        match cols[0].trim().parse::<usize>() {
            Ok(i) if i == expected => {}
            _ => {
                return Err(CorpusError::BadIndex {
                    line: line_no,
                    value: cols[0].to_string(),
                    expected,
                })
            }
        }
        let pos = cols[2]
            .trim()
            .parse::<Upos>()
            .map_err(|label| CorpusError::UnknownPos {
                line: line_no,
                label,
            })?;
        let lid = cols[3]
            .trim()
            .parse::<Lid>()
            .map_err(|label| CorpusError::UnknownLid {
                line: line_no,
                label,
            })?;
        current.push(Token::new(cols[1], pos, lid)?);
    }
    if !current.is_empty() {
        sentences.push(Sentence { tokens: current });
    }
    Ok(sentences)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CorpusStats {
    pub sentence_count: usize,
    pub token_count: usize,
    pub lid_counts: BTreeMap<Lid, usize>,
    pub pos_counts: BTreeMap<Upos, usize>,
}

impl fmt::Display for CorpusStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "sentences\t{}", self.sentence_count)?;
        writeln!(f, "tokens\t{}", self.token_count)?;
        for (lid, n) in &self.lid_counts {
            writeln!(f, "lid:{lid}\t{n}")?;
        }
        for (pos, n) in &self.pos_counts {
            if *n > 0 {
                writeln!(f, "pos:{pos}\t{n}")?;
            }
        }
        Ok(())
    }
}

pub fn corpus_stats(corpus: &Corpus) -> CorpusStats {
    let mut lid_counts: BTreeMap<Lid, usize> = Lid::ALL.iter().map(|&l| (l, 0)).collect();
    let mut pos_counts: BTreeMap<Upos, usize> = Upos::ALL.iter().map(|&p| (p, 0)).collect();
    for t in corpus.tokens() {
        *lid_counts.get_mut(&t.lid).unwrap() += 1;
        *pos_counts.get_mut(&t.pos).unwrap() += 1;
    }
    CorpusStats {
        sentence_count: corpus.len(),
        token_count: corpus.token_count(),
        lid_counts,
        pos_counts,
    }
}
