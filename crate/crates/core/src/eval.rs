//! Tagging metrics, code-switching statistics and seed aggregation.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, Lid, Sentence, Upos};
use crate::embed::{oov_rate, EmbeddingTable};
use crate::tagger::TaggedOutput;

#[derive(Debug, Error, PartialEq)]
pub enum EvalError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("sentence {sentence}: gold has {gold} tokens, prediction has {pred}")]
    LengthMismatch { sentence: usize, gold: usize, pred: usize },
    #[error("code-switching rate undefined: no adjacent pair of language-bearing tokens")]
    UndefinedRate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Field {
    Pos,
    Lid,
}

fn check_aligned(gold: &Corpus, pred: &TaggedOutput) -> Result<(), EvalError> {
    if gold.len() != pred.len() {
        return Err(EvalError::Usage(format!(
            "gold has {} sentences, prediction has {}",
            gold.len(),
            pred.len()
        )));
    }
    for (i, (g, p)) in gold.sentences.iter().zip(&pred.sentences).enumerate() {
        let lid_len = p.lid.as_ref().map_or(g.len(), Vec::len);
        if p.pos.len() != g.len() || lid_len != g.len() {
            return Err(EvalError::LengthMismatch {
                sentence: i,
                gold: g.len(),
                pred: if p.pos.len() != g.len() { p.pos.len() } else { lid_len },
            });
        }
    }
    Ok(())
}

/// Fraction of tokens whose predicted `field` equals the gold label.
pub fn accuracy(gold: &Corpus, pred: &TaggedOutput, field: Field) -> Result<f64, EvalError> {
    check_aligned(gold, pred)?;
    let (mut correct, mut total) = (0u64, 0u64);
    for (g, p) in gold.sentences.iter().zip(&pred.sentences) {
        match field {
            Field::Pos => {
                for (t, &y) in g.tokens().iter().zip(&p.pos) {
                    correct += u64::from(t.pos == y);
                }
            }
            Field::Lid => {
                let lid = p
                    .lid
                    .as_ref()
                    .ok_or_else(|| EvalError::Usage("prediction has no language-id tags".into()))?;
                for (t, &y) in g.tokens().iter().zip(lid) {
                    correct += u64::from(t.lid == y);
                }
            }
        }
        total += g.len() as u64;
    }
    if total == 0 {
        return Err(EvalError::Usage("no tokens to score".into()));
    }
    Ok(correct as f64 / total as f64)
}

/// Counts of `(gold, predicted)` POS pairs, including correct ones.
pub type Confusion = BTreeMap<(Upos, Upos), u64>;

pub fn confusion(gold: &Corpus, pred: &TaggedOutput) -> Result<Confusion, EvalError> {
    check_aligned(gold, pred)?;
    let mut m = Confusion::new();
    for (g, p) in gold.sentences.iter().zip(&pred.sentences) {
        for (t, &y) in g.tokens().iter().zip(&p.pos) {
            *m.entry((t.pos, y)).or_default() += 1;
        }
    }
    Ok(m)
}

/// One off-diagonal confusion cell with its share of all errors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorCell {
    pub gold: Upos,
    pub pred: Upos,
    pub count: u64,
    /// Fraction of all errors, in `[0, 1]`.
    pub share: f64,
}

impl ErrorCell {
    /// `GOLD>PRED`
    pub fn label(&self) -> String {
        format!("{}>{}", self.gold, self.pred)
    }
}

/// Error cells by descending share, ties broken by cell label.
pub fn error_ranking_from(confusion: &Confusion) -> Vec<ErrorCell> {
    let total: u64 = confusion
        .iter()
        .filter(|((g, p), _)| g != p)
        .map(|(_, &c)| c)
        .sum();
    if total == 0 {
        return Vec::new();
    }
    let mut cells: Vec<ErrorCell> = confusion
        .iter()
        .filter(|((g, p), &c)| g != p && c > 0)
        .map(|(&(gold, pred), &count)| ErrorCell {
            gold,
            pred,
            count,
            share: count as f64 / total as f64,
        })
        .collect();
    cells.sort_by(|a, b| b.count.cmp(&a.count).then_with(|| a.label().cmp(&b.label())));
    cells
}

pub fn error_ranking(gold: &Corpus, pred: &TaggedOutput) -> Result<Vec<ErrorCell>, EvalError> {
    Ok(error_ranking_from(&confusion(gold, pred)?))
}

/// `(switching pairs, qualifying pairs)` over adjacent tokens that both
/// carry a language label.
pub fn cs_point_counts(corpus: &Corpus) -> (u64, u64) {
    let (mut switches, mut pairs) = (0, 0);
    for s in &corpus.sentences {
        for w in s.tokens().windows(2) {
            let (a, b) = (w[0].lid, w[1].lid);
            if a.is_language() && b.is_language() {
                pairs += 1;
                switches += u64::from(a != b);
            }
        }
    }
    (switches, pairs)
}

/// Share of adjacent language-bearing token pairs whose labels differ.
pub fn cs_point_rate(corpus: &Corpus) -> Result<f64, EvalError> {
    match cs_point_counts(corpus) {
        (_, 0) => Err(EvalError::UndefinedRate),
        (s, n) => Ok(s as f64 / n as f64),
    }
}

/// Maximal runs of the minority language as 1-based `(start, length)`.
///
/// The minority language is the one with fewer tokens (LANG2 on ties).
/// OTHER tokens neither break a run nor count towards its length.
pub fn cs_fragments(sentence: &Sentence) -> Vec<(usize, usize)> {
    cs_fragments_of(&sentence.lid_tags())
}

pub fn cs_fragments_of(lids: &[Lid]) -> Vec<(usize, usize)> {
    let n1 = lids.iter().filter(|&&l| l == Lid::Lang1).count();
    let n2 = lids.iter().filter(|&&l| l == Lid::Lang2).count();
    if n1 == 0 || n2 == 0 {
        return Vec::new();
    }
    let minority = if n1 < n2 { Lid::Lang1 } else { Lid::Lang2 };
    let mut out = Vec::new();
    let mut current: Option<(usize, usize)> = None;
    for (i, &l) in lids.iter().enumerate() {
        if l == minority {
            match &mut current {
                Some((_, len)) => *len += 1,
                None => current = Some((i + 1, 1)),
            }
        } else if l != Lid::Other {
            out.extend(current.take());
        }
    }
    out.extend(current);
    out
}

/// Mean fragment length over the corpus, `None` without fragments.
pub fn mean_cs_fragment_len(corpus: &Corpus) -> Option<f64> {
    let (mut total, mut count) = (0usize, 0usize);
    for s in &corpus.sentences {
        for (_, len) in cs_fragments(s) {
            total += len;
            count += 1;
        }
    }
    (count > 0).then(|| total as f64 / count as f64)
}

/// The scalar metrics of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarMetrics {
    pub pos_accuracy: f64,
    pub lid_accuracy: Option<f64>,
    pub cs_point_rate: Option<f64>,
    pub mean_cs_fragment_len: Option<f64>,
    pub oov_rate: Option<f64>,
}

impl ScalarMetrics {
    fn named(&self) -> [(&'static str, Option<f64>); 5] {
        [
            ("pos_accuracy", Some(self.pos_accuracy)),
            ("lid_accuracy", self.lid_accuracy),
            ("cs_point_rate", self.cs_point_rate),
            ("mean_cs_fragment_len", self.mean_cs_fragment_len),
            ("oov_rate", self.oov_rate),
        ]
    }

    fn schema(&self) -> [bool; 5] {
        self.named().map(|(_, v)| v.is_some())
    }
}

/// Metrics of one or more seeds. A single-seed report lists itself in
/// `seeds`/`per_seed`; aggregated reports hold the means in `metrics`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub seeds: Vec<u64>,
    pub metrics: ScalarMetrics,
    pub per_seed: Vec<ScalarMetrics>,
    /// `(gold, predicted, count)` for every observed pair.
    pub confusion: Vec<(Upos, Upos, u64)>,
    pub error_ranking: Vec<ErrorCell>,
}

impl MetricsReport {
    pub fn confusion_map(&self) -> Confusion {
        self.confusion.iter().map(|&(g, p, c)| ((g, p), c)).collect()
    }
}

/// Scores one seed's predictions on a test corpus.
pub fn evaluate(
    gold: &Corpus,
    pred: &TaggedOutput,
    table: Option<&EmbeddingTable>,
    seed: u64,
) -> Result<MetricsReport, EvalError> {
    let conf = confusion(gold, pred)?;
    let lid_accuracy = if pred.sentences.iter().all(|s| s.lid.is_some()) && !pred.is_empty() {
        Some(accuracy(gold, pred, Field::Lid)?)
    } else {
        None
    };
    let metrics = ScalarMetrics {
        pos_accuracy: accuracy(gold, pred, Field::Pos)?,
        lid_accuracy,
        cs_point_rate: cs_point_rate(gold).ok(),
        mean_cs_fragment_len: mean_cs_fragment_len(gold),
        oov_rate: table.map(|t| oov_rate(t, gold)),
    };
    Ok(MetricsReport {
        seeds: vec![seed],
        per_seed: vec![metrics.clone()],
        metrics,
        error_ranking: error_ranking_from(&conf),
        confusion: conf.into_iter().map(|((g, p), c)| (g, p, c)).collect(),
    })
}

/// Means of every scalar metric across all seeds of `reports`.
/// Confusion counts are summed and the error ranking recomputed.
pub fn aggregate_seeds(reports: &[MetricsReport]) -> Result<MetricsReport, EvalError> {
    let first = reports
        .first()
        .ok_or_else(|| EvalError::Usage("nothing to aggregate".into()))?;
    let schema = first.metrics.schema();
    let mut seeds = Vec::new();
    let mut per_seed = Vec::new();
    let mut conf = Confusion::new();
    for r in reports {
        if r.seeds.len() != r.per_seed.len() {
            return Err(EvalError::Usage("report seeds and per-seed values disagree".into()));
        }
        if let Some(m) = r.per_seed.iter().find(|m| m.schema() != schema) {
            return Err(EvalError::Usage(format!(
                "metric schema mismatch: {:?} vs {:?}",
                m.schema(),
                schema
            )));
        }
        seeds.extend(&r.seeds);
        per_seed.extend(r.per_seed.iter().cloned());
        for ((g, p), c) in r.confusion_map() {
            *conf.entry((g, p)).or_default() += c;
        }
    }
    let n = per_seed.len() as f64;
    let mean = |f: fn(&ScalarMetrics) -> Option<f64>| -> Option<f64> {
        let vals: Option<Vec<f64>> = per_seed.iter().map(f).collect();
        vals.map(|v| v.iter().sum::<f64>() / n)
    };
    let metrics = ScalarMetrics {
        pos_accuracy: mean(|m| Some(m.pos_accuracy)).expect("always present"),
        lid_accuracy: mean(|m| m.lid_accuracy),
        cs_point_rate: mean(|m| m.cs_point_rate),
        mean_cs_fragment_len: mean(|m| m.mean_cs_fragment_len),
        oov_rate: mean(|m| m.oov_rate),
    };
    Ok(MetricsReport {
        seeds,
        metrics,
        per_seed,
        error_ranking: error_ranking_from(&conf),
        confusion: conf.into_iter().map(|((g, p), c)| (g, p, c)).collect(),
    })
}

/// `0.929 -> "92.90"`
pub fn percent(x: f64) -> String {
    format!("{:.2}", 100.0 * x)
}

/// Human-readable report: metric means with per-seed columns, then the
/// most common errors as `GOLD > PRED share%`.
pub fn render_text(report: &MetricsReport, title: &str, top_errors: usize) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{title}");
    let mut header = format!("{:<24}{:>10}", "metric", "mean");
    for s in &report.seeds {
        header.push_str(&format!("{:>10}", format!("seed {s}")));
    }
    let _ = writeln!(out, "{header}");
    let rows: [(&str, fn(&ScalarMetrics) -> Option<f64>, bool); 5] = [
        ("POS accuracy (%)", |m| Some(m.pos_accuracy), true),
        ("LID accuracy (%)", |m| m.lid_accuracy, true),
        ("CS-point rate (%)", |m| m.cs_point_rate, true),
        ("Mean CSF length", |m| m.mean_cs_fragment_len, false),
        ("OOV rate (%)", |m| m.oov_rate, true),
    ];
    for (name, get, pct) in rows {
        let Some(mean) = get(&report.metrics) else { continue };
        let fmt = |v: f64| if pct { percent(v) } else { format!("{v:.2}") };
        let mut line = format!("{name:<24}{:>10}", fmt(mean));
        for m in &report.per_seed {
            line.push_str(&format!("{:>10}", get(m).map_or("-".to_string(), fmt)));
        }
        let _ = writeln!(out, "{line}");
    }
    if !report.error_ranking.is_empty() {
        let _ = writeln!(out, "\nMost common errors (Gold-POS > Predicted-POS)");
        for e in report.error_ranking.iter().take(top_errors) {
            let _ = writeln!(out, "{:<24}{:>9}%", format!("{} > {}", e.gold, e.pred), percent(e.share));
        }
    }
    out
}

/// One metric per row: `name<TAB>seed<TAB>value`, seed `mean` for the
/// aggregate. Absent metrics are omitted.
pub fn render_tsv(report: &MetricsReport) -> String {
    let mut out = String::from("name\tseed\tvalue\n");
    for (name, value) in report.metrics.named() {
        if let Some(v) = value {
            let _ = writeln!(out, "{name}\tmean\t{v}");
        }
        for (seed, m) in report.seeds.iter().zip(&report.per_seed) {
            if let Some(v) = m.named().iter().find(|(n, _)| *n == name).and_then(|(_, v)| *v) {
                let _ = writeln!(out, "{name}\t{seed}\t{v}");
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Split, Token};
    use crate::tagger::TaggedSentence;
    use proptest::prelude::*;

    fn sentence(tags: &[(Upos, Lid)]) -> Sentence {
        Sentence::new(
            tags.iter()
                .enumerate()
                .map(|(i, &(p, l))| Token::new(format!("w{i}"), p, l).unwrap())
                .collect(),
        )
        .unwrap()
    }

    fn lids(ls: &[Lid]) -> Sentence {
        sentence(&ls.iter().map(|&l| (Upos::Noun, l)).collect::<Vec<_>>())
    }

    fn corpus(sents: Vec<Sentence>) -> Corpus {
        Corpus::new("t", Split::Test, sents)
    }

    fn pred_pos(tags: Vec<Vec<Upos>>) -> TaggedOutput {
        TaggedOutput {
            sentences: tags.into_iter().map(|pos| TaggedSentence { pos, lid: None }).collect(),
        }
    }

    use Lid::{Lang1 as L1, Lang2 as L2, Other as O};

    #[test]
    fn accuracy_basics() {
        let gold = corpus(vec![sentence(&[
            (Upos::Noun, L1),
            (Upos::Verb, L1),
            (Upos::Det, L1),
            (Upos::Adj, L1),
        ])]);
        let same = pred_pos(vec![gold.sentences[0].pos_tags()]);
        assert_eq!(accuracy(&gold, &same, Field::Pos).unwrap(), 1.0);
        let three = pred_pos(vec![vec![Upos::Noun, Upos::Verb, Upos::Det, Upos::Noun]]);
        assert_eq!(accuracy(&gold, &three, Field::Pos).unwrap(), 0.75);
        let short = pred_pos(vec![vec![Upos::Noun]]);
        assert_eq!(
            accuracy(&gold, &short, Field::Pos),
            Err(EvalError::LengthMismatch { sentence: 0, gold: 4, pred: 1 })
        );
        assert!(accuracy(&gold, &same, Field::Lid).is_err());
    }

    #[test]
    fn error_ranking_examples() {
        let mut c = Confusion::new();
        c.insert((Upos::Noun, Upos::Verb), 1);
        c.insert((Upos::Noun, Upos::Noun), 7);
        let r = error_ranking_from(&c);
        assert_eq!(r.len(), 1);
        assert_eq!((r[0].label().as_str(), r[0].share), ("NOUN>VERB", 1.0));

        let mut c = Confusion::new();
        c.insert((Upos::Adj, Upos::Adp), 3);
        c.insert((Upos::Cconj, Upos::Det), 1);
        let r = error_ranking_from(&c);
        assert_eq!(r[0].share, 0.75);
        assert_eq!(r[1].share, 0.25);

        let mut c = Confusion::new();
        c.insert((Upos::Verb, Upos::Noun), 2);
        c.insert((Upos::Adj, Upos::Noun), 2);
        let r = error_ranking_from(&c);
        assert_eq!(r[0].label(), "ADJ>NOUN");
        assert!(error_ranking_from(&Confusion::new()).is_empty());
    }

    #[test]
    fn cs_point_rate_examples() {
        assert_eq!(cs_point_rate(&corpus(vec![lids(&[L1, L2, L1])])).unwrap(), 1.0);
        assert_eq!(cs_point_rate(&corpus(vec![lids(&[L1, L1, L1])])).unwrap(), 0.0);
        assert_eq!(cs_point_rate(&corpus(vec![lids(&[L1, O, L2])])), Err(EvalError::UndefinedRate));
    }

    #[test]
    fn fragment_examples() {
        assert_eq!(cs_fragments(&lids(&[L1, L2, L2, L1])), vec![(2, 2)]);
        assert!(cs_fragments(&lids(&[L1, L1, L1])).is_empty());
        assert_eq!(cs_fragments(&lids(&[L1, L2, O, L2, L1, L1])), vec![(2, 2)]);
        // ties: LANG2 is the minority
        assert_eq!(cs_fragments(&lids(&[L1, L2])), vec![(2, 1)]);
        assert_eq!(cs_fragments(&lids(&[L2, L2, L1, L2, L2])), vec![(3, 1)]);
        assert_eq!(mean_cs_fragment_len(&corpus(vec![lids(&[L1, L2, L2, L1]), lids(&[L1, L1, L2])])), Some(1.5));
    }

    #[test]
    fn aggregation_examples() {
        let gold = corpus(vec![sentence(&[(Upos::Noun, L1), (Upos::Verb, L2)])]);
        let r1 = evaluate(&gold, &pred_pos(vec![vec![Upos::Noun, Upos::Verb]]), None, 1).unwrap();
        assert_eq!(aggregate_seeds(std::slice::from_ref(&r1)).unwrap(), r1);
        let mut a = r1.clone();
        a.metrics.pos_accuracy = 0.90;
        a.per_seed[0].pos_accuracy = 0.90;
        let mut b = r1.clone();
        b.seeds = vec![2];
        b.metrics.pos_accuracy = 0.92;
        b.per_seed[0].pos_accuracy = 0.92;
        let agg = aggregate_seeds(&[a, b]).unwrap();
        assert!((agg.metrics.pos_accuracy - 0.91).abs() < 1e-12);
        assert_eq!(agg.seeds, vec![1, 2]);
        assert_eq!(agg.confusion.iter().map(|c| c.2).sum::<u64>(), 4);

        let mut c = r1.clone();
        c.per_seed[0].lid_accuracy = Some(1.0);
        assert!(aggregate_seeds(&[r1, c]).is_err());
        assert!(aggregate_seeds(&[]).is_err());
    }

    #[test]
    fn rendering() {
        let gold = corpus(vec![sentence(&[(Upos::Adj, L1), (Upos::Noun, L2), (Upos::Punct, O)])]);
        let r = evaluate(&gold, &pred_pos(vec![vec![Upos::Noun, Upos::Noun, Upos::Punct]]), None, 3).unwrap();
        let text = render_text(&r, "test", 5);
        assert!(text.contains("POS accuracy (%)"));
        assert!(text.contains("66.67"));
        assert!(text.contains("ADJ > NOUN"));
        assert!(text.contains("100.00%"));
        let tsv = render_tsv(&r);
        assert!(tsv.starts_with("name\tseed\tvalue\n"));
        assert!(tsv.contains("pos_accuracy\tmean\t"));
        assert!(tsv.contains("pos_accuracy\t3\t"));
        assert!(!tsv.contains("lid_accuracy"));
        assert_eq!(percent(0.929), "92.90");
    }

    fn lid_strategy() -> impl Strategy<Value = Vec<Lid>> {
        prop::collection::vec(prop_oneof![Just(L1), Just(L2), Just(O)], 1..20)
    }

    proptest! {
        #[test]
        fn fragments_are_disjoint_ordered_and_bounded(ls in lid_strategy()) {
            let f = cs_fragments_of(&ls);
            prop_assert!(f.iter().map(|x| x.1).sum::<usize>() <= ls.len());
            for w in f.windows(2) {
                prop_assert!(w[0].0 + w[0].1 <= w[1].0);
            }
        }

        #[test]
        fn rate_is_invariant_under_language_swap(seqs in prop::collection::vec(lid_strategy(), 1..6)) {
            let a = corpus(seqs.iter().map(|s| lids(s)).collect());
            let b = corpus(seqs.iter().map(|s| lids(&s.iter().map(|l| l.swapped()).collect::<Vec<_>>())).collect());
            prop_assert_eq!(cs_point_rate(&a), cs_point_rate(&b));
        }

        #[test]
        fn accuracy_of_gold_is_one(seqs in prop::collection::vec(lid_strategy(), 1..6)) {
            let c = corpus(seqs.iter().map(|s| lids(s)).collect());
            let p = pred_pos(c.sentences.iter().map(|s| s.pos_tags()).collect());
            prop_assert_eq!(accuracy(&c, &p, Field::Pos).unwrap(), 1.0);
        }
    }
}
