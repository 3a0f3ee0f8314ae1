//! Corpus composition for the embedding-training conditions.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EmbedError;
use crate::corpus::{Corpus, Split};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompositionKind {
    /// One monolingual corpus.
    Mono,
    /// Two filtered monolingual corpora, one per language.
    Cfm,
    /// Code-switched corpora only.
    Pcs,
    /// The two CFM corpora plus code-switched corpora.
    PseudoCs,
    /// Everything from two language pairs that share a pivot language.
    MultiPivot,
}

impl CompositionKind {
    pub fn as_str(self) -> &'static str {
        match self {
            CompositionKind::Mono => "mono",
            CompositionKind::Cfm => "cfm",
            CompositionKind::Pcs => "pcs",
            CompositionKind::PseudoCs => "pseudo_cs",
            CompositionKind::MultiPivot => "multi_pivot",
        }
    }
}

impl fmt::Display for CompositionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CompositionKind {
    type Err = EmbedError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s.to_ascii_lowercase().as_str() {
            "mono" => CompositionKind::Mono,
            "cfm" => CompositionKind::Cfm,
            "pcs" => CompositionKind::Pcs,
            "pseudo_cs" | "pseudocs" => CompositionKind::PseudoCs,
            "multi_pivot" | "pivot" => CompositionKind::MultiPivot,
            _ => return Err(EmbedError::Config(format!("unknown composition {s:?}"))),
        })
    }
}

/// A composition kind with its input corpora.
///
/// Input order matters for `PseudoCs`: the first two inputs are the
/// monolingual (CFM) corpora, the rest are code-switched.
#[derive(Debug, Clone)]
pub struct CompositionRecipe {
    pub kind: CompositionKind,
    pub inputs: Vec<Corpus>,
}

impl CompositionRecipe {
    pub fn new(kind: CompositionKind, inputs: Vec<Corpus>) -> Result<Self, EmbedError> {
        let r = CompositionRecipe { kind, inputs };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<(), EmbedError> {
        check_arity(self.kind, self.inputs.len())?;
        let mono_inputs = match self.kind {
            CompositionKind::Cfm | CompositionKind::PseudoCs => 2,
            CompositionKind::Mono => 1,
            _ => 0,
        };
        for c in &self.inputs[..mono_inputs] {
            if !c.is_monolingual() {
                return Err(EmbedError::Config(format!(
                    "{} expects monolingual input, but {:?} mixes languages",
                    self.kind, c.name
                )));
            }
        }
        Ok(())
    }
}

/// Checks the number of inputs a composition kind accepts.
pub fn check_arity(kind: CompositionKind, n: usize) -> Result<(), EmbedError> {
    let ok = match kind {
        CompositionKind::Mono => n == 1,
        CompositionKind::Cfm => n == 2,
        CompositionKind::Pcs => n >= 1,
        CompositionKind::PseudoCs => n >= 3,
        CompositionKind::MultiPivot => n >= 2,
    };
    if ok {
        Ok(())
    } else {
        let want = match kind {
            CompositionKind::Mono => "exactly 1 corpus",
            CompositionKind::Cfm => "exactly 2 monolingual corpora",
            CompositionKind::Pcs => "at least 1 code-switched corpus",
            CompositionKind::PseudoCs => "2 monolingual corpora plus at least 1 code-switched corpus",
            CompositionKind::MultiPivot => "the corpora of two language pairs",
        };
        Err(EmbedError::Config(format!("{kind} needs {want}, got {n}")))
    }
}

/// Concatenates the recipe's sentences and shuffles them with `seed`.
pub fn compose_corpus(recipe: &CompositionRecipe, seed: u64) -> Result<Corpus, EmbedError> {
    recipe.validate()?;
    let mut sentences: Vec<_> = recipe
        .inputs
        .iter()
        .flat_map(|c| c.sentences.iter().cloned())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sentences.shuffle(&mut rng);
    Ok(Corpus::new(recipe.kind.as_str(), Split::Raw, sentences))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Lid, Sentence, Token, Upos};
    use std::collections::BTreeMap;

    fn corpus(name: &str, lid: Lid, lines: &[&str]) -> Corpus {
        let sentences = lines
            .iter()
            .map(|l| {
                Sentence::new(
                    l.split_whitespace()
                        .map(|w| Token::new(w, Upos::X, lid).unwrap())
                        .collect(),
                )
                .unwrap()
            })
            .collect();
        Corpus::new(name, Split::Raw, sentences)
    }

    fn multiset(c: &Corpus) -> BTreeMap<String, usize> {
        let mut m = BTreeMap::new();
        for s in &c.sentences {
            *m.entry(s.forms().join(" ")).or_default() += 1;
        }
        m
    }

    fn union(cs: &[&Corpus]) -> BTreeMap<String, usize> {
        let mut m = BTreeMap::new();
        for c in cs {
            for (k, v) in multiset(c) {
                *m.entry(k).or_default() += v;
            }
        }
        m
    }

    #[test]
    fn mono_preserves_multiset() {
        let a = corpus("a", Lid::Lang1, &["x y", "z", "x y"]);
        let r = CompositionRecipe::new(CompositionKind::Mono, vec![a.clone()]).unwrap();
        assert_eq!(multiset(&compose_corpus(&r, 3).unwrap()), multiset(&a));
    }

    #[test]
    fn pseudo_cs_is_the_union() {
        let a = corpus("a", Lid::Lang1, &["a1 a2", "a3"]);
        let b = corpus("b", Lid::Lang2, &["b1"]);
        let mut c = corpus("c", Lid::Lang1, &["c1 c2"]);
        c.sentences.push(corpus("c", Lid::Lang2, &["c3 c4"]).sentences[0].clone());
        let r = CompositionRecipe::new(
            CompositionKind::PseudoCs,
            vec![a.clone(), b.clone(), c.clone()],
        )
        .unwrap();
        let out = compose_corpus(&r, 9).unwrap();
        assert_eq!(multiset(&out), union(&[&a, &b, &c]));
    }

    #[test]
    fn multi_pivot_preserves_token_count() {
        let pivot = corpus("p", Lid::Lang1, &["p1 p2 p3", "p4"]);
        let l2 = corpus("q", Lid::Lang2, &["q1 q2"]);
        let l3 = corpus("r", Lid::Lang2, &["r1 r2 r3 r4 r5"]);
        let inputs = vec![pivot.clone(), l2.clone(), pivot.clone(), l3.clone()];
        let expected: usize = inputs.iter().map(Corpus::token_count).sum();
        let r = CompositionRecipe::new(CompositionKind::MultiPivot, inputs).unwrap();
        assert_eq!(compose_corpus(&r, 1).unwrap().token_count(), expected);
    }

    #[test]
    fn arity_violations_are_config_errors() {
        let a = corpus("a", Lid::Lang1, &["x"]);
        for (kind, n) in [
            (CompositionKind::Mono, 2),
            (CompositionKind::Cfm, 1),
            (CompositionKind::Cfm, 3),
            (CompositionKind::Pcs, 0),
            (CompositionKind::PseudoCs, 2),
            (CompositionKind::MultiPivot, 1),
        ] {
            let err = CompositionRecipe::new(kind, vec![a.clone(); n]).unwrap_err();
            assert!(matches!(err, EmbedError::Config(_)), "{kind} {n}");
        }
    }

    #[test]
    fn cfm_rejects_mixed_input() {
        let mut mixed = corpus("m", Lid::Lang1, &["x"]);
        mixed.sentences.push(corpus("m", Lid::Lang2, &["y"]).sentences[0].clone());
        let b = corpus("b", Lid::Lang2, &["y"]);
        assert!(CompositionRecipe::new(CompositionKind::Cfm, vec![mixed, b]).is_err());
    }

    #[test]
    fn shuffle_is_deterministic() {
        let a = corpus("a", Lid::Lang1, &["1", "2", "3", "4", "5", "6"]);
        let r = CompositionRecipe::new(CompositionKind::Pcs, vec![a]).unwrap();
        assert_eq!(compose_corpus(&r, 5).unwrap(), compose_corpus(&r, 5).unwrap());
    }

    #[test]
    fn kind_parsing() {
        assert_eq!("PSEUDO_CS".parse::<CompositionKind>().unwrap(), CompositionKind::PseudoCs);
        assert!("nope".parse::<CompositionKind>().is_err());
    }
}
