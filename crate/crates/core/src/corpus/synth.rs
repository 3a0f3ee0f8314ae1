//! Synthetic code-switched corpora.
//!
//! Sentences are built by concatenating POS phrase templates. Each
//! (language, tag) pair owns a lexicon stratum whose words share a
//! tag-specific suffix written in the language's own alphabet, so gold tags
//! are recoverable from the word and character n-grams carry signal. Token
//! languages follow a two-state switching chain whose parameters are solved
//! from the requested CS-point rate and mean fragment length.

use std::collections::BTreeSet;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Corpus, CorpusError, Lid, Sentence, Split, Token, Upos};

/// Character inventory and lexicon seed of one synthetic language.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LanguageProfile {
    pub name: String,
    pub consonants: Vec<char>,
    pub vowels: Vec<char>,
    pub lexicon_seed: u64,
}

impl LanguageProfile {
    pub fn alpha() -> Self {
        LanguageProfile {
            name: "alpha".into(),
            consonants: "bdgklmnprst".chars().collect(),
            vowels: "aeiou".chars().collect(),
            lexicon_seed: 0xA1FA,
        }
    }

    pub fn beta() -> Self {
        LanguageProfile {
            name: "beta".into(),
            consonants: "cfhjqvwxzç".chars().collect(),
            vowels: "äöüyå".chars().collect(),
            lexicon_seed: 0xBE7A,
        }
    }

    pub fn gamma() -> Self {
        LanguageProfile {
            name: "gamma".into(),
            consonants: "ßđłŋþšžčř".chars().collect(),
            vowels: "ąęįųė".chars().collect(),
            lexicon_seed: 0x6A33A,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "alpha" => Some(Self::alpha()),
            "beta" => Some(Self::beta()),
            "gamma" => Some(Self::gamma()),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub languages: [LanguageProfile; 2],
    pub lexicon_sizes: [usize; 2],
    /// Surface forms shared by both lexicons, with a different POS in each.
    pub cognates: usize,
    /// Fraction of adjacent language-bearing token pairs that switch.
    pub cs_point_rate: f64,
    pub mean_fragment_length: f64,
    pub train_sentences: usize,
    pub dev_sentences: usize,
    pub test_sentences: usize,
    /// Sentences in each monolingual raw corpus.
    pub raw_mono_sentences: usize,
    pub raw_cs_sentences: usize,
    /// Inclusive sentence length range.
    pub min_length: usize,
    pub max_length: usize,
    pub templates: Vec<Vec<Upos>>,
    /// Zipf exponent of word frequencies inside a stratum.
    pub zipf_exponent: f64,
    pub end_punctuation: bool,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        use Upos::*;
        SynthConfig {
            languages: [LanguageProfile::alpha(), LanguageProfile::beta()],
            lexicon_sizes: [600, 600],
            cognates: 0,
            cs_point_rate: 0.3,
            mean_fragment_length: 2.5,
            train_sentences: 2000,
            dev_sentences: 300,
            test_sentences: 300,
            raw_mono_sentences: 3000,
            raw_cs_sentences: 3000,
            min_length: 5,
            max_length: 14,
            templates: vec![
                vec![Det, Noun],
                vec![Det, Adj, Noun],
                vec![Adj, Noun],
                vec![Pron],
                vec![Propn],
                vec![Verb],
                vec![Aux, Verb],
                vec![Verb, Adv],
                vec![Adv],
                vec![Adp, Det, Noun],
                vec![Adp, Propn],
                vec![Cconj],
                vec![Sconj, Pron, Verb],
                vec![Part, Verb],
                vec![Num, Noun],
            ],
            zipf_exponent: 1.0,
            end_punctuation: true,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpora {
    pub train: Corpus,
    pub dev: Corpus,
    pub test: Corpus,
    pub raw_lang1: Corpus,
    pub raw_lang2: Corpus,
    pub raw_cs: Corpus,
    /// Rank-aligned (lang1 word, lang2 word) pairs from the same POS stratum.
    pub dictionary: Vec<(String, String)>,
}

/// Tags realized by language-neutral forms labelled OTHER.
fn is_neutral(tag: Upos) -> bool {
    matches!(tag, Upos::Punct | Upos::Num | Upos::Sym)
}

fn neutral_forms(tag: Upos) -> Vec<String> {
    match tag {
        Upos::Punct => [".", ",", "!", "?", ";"].iter().map(|s| s.to_string()).collect(),
        Upos::Sym => ["%", "+", "$", "&"].iter().map(|s| s.to_string()).collect(),
        _ => (0..40).map(|i| (i * 7 + 2).to_string()).collect(),
    }
}

fn is_closed_class(tag: Upos) -> bool {
    !matches!(
        tag,
        Upos::Noun | Upos::Verb | Upos::Adj | Upos::Adv | Upos::Propn | Upos::X
    )
}

fn open_weight(tag: Upos) -> f64 {
    match tag {
        Upos::Noun => 0.35,
        Upos::Verb => 0.25,
        Upos::Adj => 0.15,
        Upos::Adv => 0.1,
        Upos::Propn => 0.15,
        _ => 0.05,
    }
}

struct Stratum {
    words: Vec<String>,
    sampler: WeightedIndex<f64>,
}

impl Stratum {
    fn new(words: Vec<String>, zipf: f64) -> Stratum {
        let weights: Vec<f64> = (0..words.len())
            .map(|r| 1.0 / ((r + 1) as f64).powf(zipf))
            .collect();
        let sampler = WeightedIndex::new(&weights).expect("non-empty stratum");
        Stratum { words, sampler }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> &str {
        &self.words[self.sampler.sample(rng)]
    }
}

/// Per-language lexicon: one stratum per language-bearing tag.
struct Lexicon {
    strata: Vec<Option<Stratum>>,
}

impl Lexicon {
    fn stratum(&self, tag: Upos) -> &Stratum {
        self.strata[tag.index()]
            .as_ref()
            .expect("stratum exists for every template tag")
    }
}

fn syllable<R: Rng>(p: &LanguageProfile, rng: &mut R) -> String {
    let mut s = String::new();
    s.push(*p.consonants.choose(rng).unwrap());
    s.push(*p.vowels.choose(rng).unwrap());
    s
}

/// Builds raw word lists for each tag (before cognate insertion).
fn build_word_lists(
    profile: &LanguageProfile,
    size: usize,
    tags: &[Upos],
) -> Vec<(Upos, Vec<String>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(profile.lexicon_seed ^ (size as u64).rotate_left(32));
    let closed: Vec<Upos> = tags.iter().copied().filter(|t| is_closed_class(*t)).collect();
    let open: Vec<Upos> = tags.iter().copied().filter(|t| !is_closed_class(*t)).collect();
    let closed_size = (size / 100).clamp(2, 20);
    let remaining = size.saturating_sub(closed_size * closed.len()).max(open.len());
    let total_w: f64 = open.iter().map(|t| open_weight(*t)).sum();

    let mut suffixes: BTreeSet<String> = BTreeSet::new();
    let mut used: BTreeSet<String> = BTreeSet::new();
    let mut lists = Vec::new();
    for &tag in tags {
        let n = if is_closed_class(tag) {
            closed_size
        } else {
            ((remaining as f64) * open_weight(tag) / total_w).round().max(1.0) as usize
        };
        let suffix = loop {
            let mut s = syllable(profile, &mut rng);
            if rng.random_bool(0.5) {
                s.push(*profile.consonants.choose(&mut rng).unwrap());
            }
            if suffixes.insert(s.clone()) {
                break s;
            }
        };
        let mut words = Vec::with_capacity(n);
        while words.len() < n {
            let syllables = if is_closed_class(tag) {
                1
            } else {
                rng.random_range(1..=3)
            };
            let mut w: String = (0..syllables).map(|_| syllable(profile, &mut rng)).collect();
            w.push_str(&suffix);
            if used.insert(w.clone()) {
                words.push(w);
            }
        }
        lists.push((tag, words));
    }
    lists
}

/// Solves the switching chain: probability of entering (`enter`) and leaving
/// (`leave`) the embedded language per step.
fn switching_chain(rate: f64, mean_fragment: f64) -> Result<(f64, f64), CorpusError> {
    let leave = 1.0 / mean_fragment;
    if rate == 0.0 {
        return Ok((0.0, leave));
    }
    let denom = 2.0 * leave - rate;
    if denom <= 0.0 {
        return Err(CorpusError::SynthConfig(format!(
            "cs_point_rate {rate} is unreachable with mean_fragment_length {mean_fragment}"
        )));
    }
    let enter = rate * leave / denom;
    if enter > 1.0 + 1e-12 {
        return Err(CorpusError::SynthConfig(format!(
            "cs_point_rate {rate} is unreachable with mean_fragment_length {mean_fragment}"
        )));
    }
    Ok((enter.min(1.0), leave))
}

impl SynthConfig {
    fn validate(&self) -> Result<(f64, f64), CorpusError> {
        let bad = |m: &str| Err(CorpusError::SynthConfig(m.to_string()));
        if self.lexicon_sizes.iter().any(|&n| n < 50) {
            return bad("lexicon sizes must be at least 50");
        }
        if !(0.0..=1.0).contains(&self.cs_point_rate) {
            return bad("cs_point_rate must lie in [0, 1]");
        }
        if !(self.mean_fragment_length >= 1.0) {
            return bad("mean_fragment_length must be at least 1");
        }
        if self.min_length < 1 || self.min_length > self.max_length {
            return bad("invalid sentence length range");
        }
        if self.templates.is_empty() || self.templates.iter().any(|t| t.is_empty()) {
            return bad("templates must be non-empty tag sequences");
        }
        for p in &self.languages {
            if p.consonants.is_empty() || p.vowels.is_empty() {
                return bad("language alphabets must be non-empty");
            }
        }
        if self.languages[0].consonants.len() * self.languages[0].vowels.len() < 20
            || self.languages[1].consonants.len() * self.languages[1].vowels.len() < 20
        {
            return bad("alphabets too small to build distinct suffixes");
        }
        switching_chain(self.cs_point_rate, self.mean_fragment_length)
    }

    fn language_tags(&self) -> Vec<Upos> {
        let mut tags: BTreeSet<Upos> = self.templates.iter().flatten().copied().collect();
        tags.retain(|t| !is_neutral(*t));
        tags.into_iter().collect()
    }
}

struct Generator<'a> {
    config: &'a SynthConfig,
    lexicons: [Lexicon; 2],
    neutral: Vec<Option<Vec<String>>>,
    enter: f64,
    leave: f64,
}

#[derive(Clone, Copy)]
enum Mode {
    Mono(usize),
    CodeSwitched,
}

impl Generator<'_> {
    fn tag_sequence<R: Rng>(&self, rng: &mut R) -> Vec<Upos> {
        let c = self.config;
        let target = rng.random_range(c.min_length..=c.max_length);
        let body = if c.end_punctuation && target >= 2 {
            target - 1
        } else {
            target
        };
        let mut tags = Vec::with_capacity(target);
        while tags.len() < body {
            tags.extend_from_slice(c.templates.choose(rng).unwrap());
        }
        tags.truncate(body);
        if body < target {
            tags.push(Upos::Punct);
        }
        tags
    }

    fn sentence<R: Rng>(&self, mode: Mode, rng: &mut R) -> Sentence {
        let tags = self.tag_sequence(rng);
        let (matrix, mut embedded) = match mode {
            Mode::Mono(l) => (l, false),
            Mode::CodeSwitched => {
                let start_embedded = self.enter > 0.0
                    && rng.random_bool(self.enter / (self.enter + self.leave));
                (rng.random_range(0..2), start_embedded)
            }
        };
        let mut first = true;
        let tokens = tags
            .into_iter()
            .map(|tag| {
                if let Some(forms) = &self.neutral[tag.index()] {
                    let f = forms.choose(rng).unwrap();
                    return Token::new(f.as_str(), tag, Lid::Other).unwrap();
                }
                if matches!(mode, Mode::CodeSwitched) && !first {
                    let p = if embedded { self.leave } else { self.enter };
                    if p > 0.0 && rng.random_bool(p.min(1.0)) {
                        embedded = !embedded;
                    }
                }
                first = false;
                let lang = if embedded { 1 - matrix } else { matrix };
                let form = self.lexicons[lang].stratum(tag).sample(rng);
                let lid = if lang == 0 { Lid::Lang1 } else { Lid::Lang2 };
                Token::new(form, tag, lid).unwrap()
            })
            .collect();
        Sentence::new(tokens).unwrap()
    }

    fn corpus<R: Rng>(&self, name: &str, split: Split, n: usize, mode: Mode, rng: &mut R) -> Corpus {
        let sentences = (0..n).map(|_| self.sentence(mode, rng)).collect();
        Corpus::new(name, split, sentences)
    }
}

/// Generates train/dev/test, two monolingual raw corpora, a code-switched
/// raw corpus and a rank-aligned translation dictionary. Output is a pure
/// function of the config.
pub fn generate_synthetic(config: &SynthConfig) -> Result<SyntheticCorpora, CorpusError> {
    let (enter, leave) = config.validate()?;
    let tags = config.language_tags();
    let mut lists = [
        build_word_lists(&config.languages[0], config.lexicon_sizes[0], &tags),
        build_word_lists(&config.languages[1], config.lexicon_sizes[1], &tags),
    ];

    let dictionary: Vec<(String, String)> = lists[0]
        .iter()
        .zip(lists[1].iter())
        .flat_map(|((_, a), (_, b))| a.iter().cloned().zip(b.iter().cloned()))
        .collect();

    if config.cognates > 0 {
        if tags.len() < 2 {
            return Err(CorpusError::SynthConfig(
                "cognates need at least two language-bearing tags".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xC09_4A7E);
        for k in 0..config.cognates {
            let src = k % tags.len();
            let dst = (src + 1 + k / tags.len()) % tags.len();
            let dst = if dst == src { (src + 1) % tags.len() } else { dst };
            let words = &lists[0][src].1;
            let form = words[k / tags.len() % words.len()].clone();
            let target = &mut lists[1][dst].1;
            if !target.contains(&form) {
                let at = rng.random_range(0..=target.len());
                target.insert(at, form);
            }
        }
    }

    let make_lexicon = |lists: &Vec<(Upos, Vec<String>)>| {
        let mut strata: Vec<Option<Stratum>> = (0..Upos::ALL.len()).map(|_| None).collect();
        for (tag, words) in lists {
            strata[tag.index()] = Some(Stratum::new(words.clone(), config.zipf_exponent));
        }
        Lexicon { strata }
    };
    let [l1, l2] = &lists;
    let lexicons = [make_lexicon(l1), make_lexicon(l2)];
    let neutral = Upos::ALL
        .iter()
        .map(|&t| is_neutral(t).then(|| neutral_forms(t)))
        .collect();

    let gen = Generator {
        config,
        lexicons,
        neutral,
        enter,
        leave,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let cs = Mode::CodeSwitched;
    let train = gen.corpus("train", Split::Train, config.train_sentences, cs, &mut rng);
    let dev = gen.corpus("dev", Split::Dev, config.dev_sentences, cs, &mut rng);
    let test = gen.corpus("test", Split::Test, config.test_sentences, cs, &mut rng);
    let raw_lang1 = gen.corpus(
        &format!("raw_{}", config.languages[0].name),
        Split::Raw,
        config.raw_mono_sentences,
        Mode::Mono(0),
        &mut rng,
    );
    let raw_lang2 = gen.corpus(
        &format!("raw_{}", config.languages[1].name),
        Split::Raw,
        config.raw_mono_sentences,
        Mode::Mono(1),
        &mut rng,
    );
    let raw_cs = gen.corpus("raw_cs", Split::Raw, config.raw_cs_sentences, cs, &mut rng);

    Ok(SyntheticCorpora {
        train,
        dev,
        test,
        raw_lang1,
        raw_lang2,
        raw_cs,
        dictionary,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            train_sentences: 200,
            dev_sentences: 20,
            test_sentences: 20,
            raw_mono_sentences: 100,
            raw_cs_sentences: 100,
            ..SynthConfig::default()
        }
    }

    fn measured_rate(c: &Corpus) -> f64 {
        let (mut sw, mut pairs) = (0usize, 0usize);
        for s in &c.sentences {
            for w in s.tokens().windows(2) {
                if w[0].lid.is_language() && w[1].lid.is_language() {
                    pairs += 1;
                    sw += (w[0].lid != w[1].lid) as usize;
                }
            }
        }
        sw as f64 / pairs as f64
    }

    #[test]
    fn zero_rate_gives_monolingual_sentences() {
        let cfg = SynthConfig {
            cs_point_rate: 0.0,
            ..small()
        };
        let out = generate_synthetic(&cfg).unwrap();
        for c in [&out.train, &out.raw_cs] {
            assert_eq!(measured_rate(c), 0.0);
            for s in &c.sentences {
                let langs: BTreeSet<Lid> = s.lid_tags().into_iter().filter(|l| l.is_language()).collect();
                assert!(langs.len() <= 1);
            }
        }
    }

    #[test]
    fn deterministic_given_seed() {
        let a = generate_synthetic(&small()).unwrap();
        let b = generate_synthetic(&small()).unwrap();
        assert_eq!(a.train.to_conllu_like(), b.train.to_conllu_like());
        assert_eq!(a.raw_cs.to_conllu_like(), b.raw_cs.to_conllu_like());
        assert_eq!(a, b);
        let c = generate_synthetic(&SynthConfig { seed: 2, ..small() }).unwrap();
        assert_ne!(a.train, c.train);
    }

    #[test]
    fn monolingual_raw_corpora_are_pure() {
        let out = generate_synthetic(&small()).unwrap();
        assert!(out.raw_lang1.tokens().all(|t| t.lid != Lid::Lang2));
        assert!(out.raw_lang2.tokens().all(|t| t.lid != Lid::Lang1));
        assert!(out.raw_lang1.tokens().any(|t| t.lid == Lid::Lang1));
    }

    #[test]
    fn realized_rate_tracks_config() {
        let cfg = SynthConfig {
            cs_point_rate: 0.3,
            train_sentences: 2000,
            ..small()
        };
        let out = generate_synthetic(&cfg).unwrap();
        let r = measured_rate(&out.train);
        assert!((r - 0.3).abs() <= 0.02, "rate {r}");
    }

    #[test]
    fn infeasible_configs_are_rejected() {
        let cfg = SynthConfig {
            cs_point_rate: 1.0,
            mean_fragment_length: 2.0,
            ..small()
        };
        assert!(matches!(generate_synthetic(&cfg), Err(CorpusError::SynthConfig(_))));
        let cfg = SynthConfig {
            lexicon_sizes: [49, 100],
            ..small()
        };
        assert!(generate_synthetic(&cfg).is_err());
        // alternating every token is reachable
        let cfg = SynthConfig {
            cs_point_rate: 1.0,
            mean_fragment_length: 1.0,
            ..small()
        };
        let out = generate_synthetic(&cfg).unwrap();
        assert_eq!(measured_rate(&out.train), 1.0);
    }

    #[test]
    fn strata_make_tags_recoverable_from_words() {
        let out = generate_synthetic(&small()).unwrap();
        let mut seen = std::collections::HashMap::new();
        for t in out.train.tokens() {
            let prev = seen.insert(t.form().to_string(), t.pos);
            if let Some(p) = prev {
                assert_eq!(p, t.pos, "word {} has two tags", t.form());
            }
        }
    }

    #[test]
    fn cognates_share_forms_with_different_tags() {
        let cfg = SynthConfig {
            cognates: 10,
            ..small()
        };
        let out = generate_synthetic(&cfg).unwrap();
        let mut ambiguous = 0;
        let mut tags = std::collections::HashMap::<String, BTreeSet<(Upos, Lid)>>::new();
        for c in [&out.train, &out.raw_cs, &out.raw_lang1, &out.raw_lang2] {
            for t in c.tokens() {
                tags.entry(t.form().to_string()).or_default().insert((t.pos, t.lid));
            }
        }
        for set in tags.values() {
            let poss: BTreeSet<Upos> = set.iter().map(|x| x.0).collect();
            if poss.len() > 1 {
                ambiguous += 1;
            }
        }
        assert!(ambiguous > 0);
    }

    #[test]
    fn labels_come_from_closed_sets_and_sentences_are_non_empty() {
        let out = generate_synthetic(&small()).unwrap();
        for c in [&out.train, &out.dev, &out.test, &out.raw_lang1, &out.raw_lang2, &out.raw_cs] {
            for s in &c.sentences {
                assert!(s.len() >= 1 && s.len() <= 14);
            }
        }
        assert!(!out.dictionary.is_empty());
    }
}
