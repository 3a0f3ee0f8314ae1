//! Cross-lingual alignment of two embedding spaces by orthogonal Procrustes.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;
use thiserror::Error;

use crate::corpus::Vocabulary;
use crate::embed::{EmbedError, EmbeddingTable};
use crate::io::{publish_atomically, BinReader, BinWriter};

pub const PROJECTION_MAGIC: &[u8; 6] = b"CSPRJ1";

/// Largest tolerated `|WᵀW − I|` entry for a freshly fitted matrix.
pub const ORTHOGONALITY_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum AlignError {
    #[error("usage error: {0}")]
    Usage(String),
    #[error("cannot fit projection: {0}")]
    Fit(String),
    #[error("malformed projection or dictionary: {0}")]
    Format(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Unique `(source, target)` word pairs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SeedDictionary {
    pairs: Vec<(String, String)>,
}

impl SeedDictionary {
    /// Keeps the first occurrence of each pair.
    pub fn new<I, S, T>(pairs: I) -> SeedDictionary
    where
        I: IntoIterator<Item = (S, T)>,
        S: Into<String>,
        T: Into<String>,
    {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        for (s, t) in pairs {
            let p = (s.into(), t.into());
            if seen.insert(p.clone()) {
                out.push(p);
            }
        }
        SeedDictionary { pairs: out }
    }

    /// Parses `source<TAB>target` lines. Blank lines are skipped.
    pub fn parse(text: &str) -> Result<SeedDictionary, AlignError> {
        let mut pairs = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                continue;
            }
            let mut cols = line.split('\t');
            match (cols.next(), cols.next(), cols.next()) {
                (Some(s), Some(t), None) if !s.is_empty() && !t.is_empty() => {
                    pairs.push((s.to_string(), t.to_string()))
                }
                _ => {
                    return Err(AlignError::Format(format!(
                        "dictionary line {}: expected source<TAB>target",
                        i + 1
                    )))
                }
            }
        }
        Ok(SeedDictionary::new(pairs))
    }

    pub fn load(path: &Path) -> Result<SeedDictionary, AlignError> {
        SeedDictionary::parse(&fs::read_to_string(path)?)
    }

    pub fn to_tsv(&self) -> String {
        self.pairs.iter().map(|(s, t)| format!("{s}\t{t}\n")).collect()
    }

    pub fn pairs(&self) -> &[(String, String)] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// Orthogonal `dim x dim` map from the source space to the target space.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionMatrix {
    dim: usize,
    /// Row-major.
    values: Vec<f64>,
}

impl ProjectionMatrix {
    pub fn identity(dim: usize) -> ProjectionMatrix {
        let mut values = vec![0.0; dim * dim];
        for i in 0..dim {
            values[i * dim + i] = 1.0;
        }
        ProjectionMatrix { dim, values }
    }

    /// Wraps a row-major matrix, rejecting non-orthogonal input.
    pub fn from_row_major(dim: usize, values: Vec<f64>, tolerance: f64) -> Result<Self, AlignError> {
        if values.len() != dim * dim {
            return Err(AlignError::Usage(format!(
                "expected {} values for a {dim}x{dim} matrix, got {}",
                dim * dim,
                values.len()
            )));
        }
        let w = ProjectionMatrix { dim, values };
        let dev = w.orthogonality_error();
        if !(dev < tolerance) {
            return Err(AlignError::Fit(format!(
                "matrix is not orthogonal (max |WtW - I| = {dev:e})"
            )));
        }
        Ok(w)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.values[r * self.dim + c]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `max |(WᵀW − I)_ij|`
    pub fn orthogonality_error(&self) -> f64 {
        let m = self.to_nalgebra();
        let g = m.transpose() * &m;
        let mut worst = 0.0f64;
        for i in 0..self.dim {
            for j in 0..self.dim {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g[(i, j)] - target).abs());
            }
        }
        worst
    }

    /// Frobenius distance to another matrix of the same size.
    pub fn frobenius_distance(&self, other: &ProjectionMatrix) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn apply(&self, v: &[f32]) -> Vec<f32> {
        self.apply_f64(&v.iter().map(|&x| x as f64).collect::<Vec<_>>())
            .into_iter()
            .map(|x| x as f32)
            .collect()
    }

    pub fn apply_f64(&self, v: &[f64]) -> Vec<f64> {
        self.values
            .chunks_exact(self.dim)
            .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.dim, self.dim, &self.values)
    }

    pub fn write_binary<W: Write>(&self, out: W) -> io::Result<()> {
        let mut w = BinWriter::new(out);
        w.bytes(PROJECTION_MAGIC)?;
        w.matrix_f32(self.dim, self.dim, self.values.iter().map(|&x| x as f32))?;
        Ok(())
    }

    /// Reads a `CSPRJ1` file. Values are stored as `f32`, so the
    /// orthogonality check on load is looser than at fit time.
    pub fn read_binary<R: Read>(input: R) -> Result<ProjectionMatrix, AlignError> {
        let mut r = BinReader::new(input);
        r.expect_magic(PROJECTION_MAGIC)
            .map_err(|e| AlignError::Format(e.to_string()))?;
        let (rows, cols, data) = r.matrix_f32().map_err(|e| AlignError::Format(e.to_string()))?;
        if rows != cols {
            return Err(AlignError::Format(format!("projection is {rows}x{cols}, not square")));
        }
        ProjectionMatrix::from_row_major(rows, data.into_iter().map(f64::from).collect(), 1e-4)
    }

    pub fn save(&self, path: &Path) -> Result<(), AlignError> {
        let mut buf = Vec::new();
        self.write_binary(&mut buf)?;
        publish_atomically(path, &buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<ProjectionMatrix, AlignError> {
        ProjectionMatrix::read_binary(io::BufReader::new(fs::File::open(path)?))
    }
}

/// Diagnostics of a Procrustes fit.
#[derive(Debug, Clone, PartialEq)]
pub struct FitReport {
    pub pairs_used: usize,
    pub pairs_filtered: usize,
    /// `‖WX − Y‖_F` over the normalized pairs.
    pub residual: f64,
    /// `‖X − Y‖_F`, the identity baseline.
    pub identity_residual: f64,
}

fn normalized(v: Vec<f32>) -> Vec<f64> {
    let v: Vec<f64> = v.into_iter().map(f64::from).collect();
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.into_iter().map(|x| x / n).collect()
    } else {
        v
    }
}

/// Fits the orthogonal `W` minimizing `‖WX − Y‖_F`, where the columns of
/// `X` and `Y` are the L2-normalized vectors of the dictionary pairs.
pub fn procrustes_fit(
    src: &EmbeddingTable,
    tgt: &EmbeddingTable,
    dict: &SeedDictionary,
) -> Result<ProjectionMatrix, AlignError> {
    procrustes_fit_with_report(src, tgt, dict).map(|(w, _)| w)
}

pub fn procrustes_fit_with_report(
    src: &EmbeddingTable,
    tgt: &EmbeddingTable,
    dict: &SeedDictionary,
) -> Result<(ProjectionMatrix, FitReport), AlignError> {
    let dim = src.dim();
    if tgt.dim() != dim {
        return Err(AlignError::Usage(format!(
            "dimension mismatch: source {dim}, target {}",
            tgt.dim()
        )));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut filtered = 0;
    for (s, t) in dict.pairs() {
        if src.contains(s) && tgt.contains(t) {
            xs.push(normalized(src.lookup(s)));
            ys.push(normalized(tgt.lookup(t)));
        } else {
            filtered += 1;
        }
    }
    if filtered > 0 {
        log::warn!("{filtered} dictionary pairs dropped: word missing from a vocabulary");
    }
    if xs.len() < dim {
        return Err(AlignError::Fit(format!(
            "{} usable dictionary pairs, need at least {dim}",
            xs.len()
        )));
    }

    // M = Σ y xᵀ
    let mut m = DMatrix::<f64>::zeros(dim, dim);
    for (x, y) in xs.iter().zip(&ys) {
        for i in 0..dim {
            if y[i] == 0.0 {
                continue;
            }
            for j in 0..dim {
                m[(i, j)] += y[i] * x[j];
            }
        }
    }
    let svd = m.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(AlignError::Fit("SVD did not converge".into())),
    };
    let w = u * v_t;
    let mut values = Vec::with_capacity(dim * dim);
    for r in 0..dim {
        for c in 0..dim {
            values.push(w[(r, c)]);
        }
    }
    let w = ProjectionMatrix::from_row_major(dim, values, ORTHOGONALITY_TOLERANCE)?;

    let residual_of = |f: &dyn Fn(&[f64]) -> Vec<f64>| {
        xs.iter()
            .zip(&ys)
            .map(|(x, y)| {
                f(x).iter()
                    .zip(y)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
            })
            .sum::<f64>()
            .sqrt()
    };
    let report = FitReport {
        pairs_used: xs.len(),
        pairs_filtered: filtered,
        residual: residual_of(&|x| w.apply_f64(x)),
        identity_residual: residual_of(&|x| x.to_vec()),
    };
    Ok((w, report))
}

/// Rotates every stored vector of `table` by `w`. The vocabulary is unchanged.
pub fn project(table: &EmbeddingTable, w: &ProjectionMatrix) -> Result<EmbeddingTable, AlignError> {
    if table.dim() != w.dim() {
        return Err(AlignError::Usage(format!(
            "dimension mismatch: table {}, projection {}",
            table.dim(),
            w.dim()
        )));
    }
    let mut out = table.clone();
    out.map_rows(|v| w.apply(v));
    Ok(out)
}

/// Joins two tables that live in the same space into one.
///
/// The merged vocabulary is the union with summed counts. Bucket and
/// output vectors are averaged. Word vectors are set so that every
/// vocabulary word composes to its vector from the source table (or the
/// average of both when a word occurs in both).
pub fn merge_tables(a: &EmbeddingTable, b: &EmbeddingTable) -> Result<EmbeddingTable, AlignError> {
    let (ca, cb) = (a.config(), b.config());
    if a.dim() != b.dim()
        || ca.bucket_count != cb.bucket_count
        || ca.min_ngram != cb.min_ngram
        || ca.max_ngram != cb.max_ngram
    {
        return Err(AlignError::Usage(
            "tables to merge must share dim, bucket count and n-gram range".into(),
        ));
    }
    let d = a.dim();
    let mut counts: BTreeMap<String, u64> = BTreeMap::new();
    for t in [a, b] {
        for i in 2..t.vocab().len() {
            *counts.entry(t.vocab().word(i).to_string()).or_default() += t.vocab().count(i);
        }
    }
    let vocab = Vocabulary::from_counts(counts, 1);

    let (_, buckets_a, _) = a.raw_parts();
    let (_, buckets_b, _) = b.raw_parts();
    let buckets: Vec<f32> = buckets_a
        .iter()
        .zip(buckets_b)
        .map(|(x, y)| 0.5 * (x + y))
        .collect();

    let mut word_in = vec![0.0f32; vocab.len() * d];
    let mut word_out = vec![0.0f32; vocab.len() * d];
    for i in 2..vocab.len() {
        let word = vocab.word(i);
        let sources: Vec<(&EmbeddingTable, usize)> = [a, b]
            .into_iter()
            .filter_map(|t| t.vocab().get(word).map(|j| (t, j)))
            .collect();
        let k = sources.len() as f32;
        let mut composed = vec![0.0f32; d];
        let out_row = &mut word_out[i * d..(i + 1) * d];
        for &(t, j) in &sources {
            for (x, y) in composed.iter_mut().zip(t.composed_row(j)) {
                *x += y / k;
            }
            for (x, y) in out_row.iter_mut().zip(t.word_output_row(j)) {
                *x += y / k;
            }
        }
        let ids = a.bucket_ids(word);
        let row = &mut word_in[i * d..(i + 1) * d];
        let scale = (1 + ids.len()) as f32;
        for (r, c) in row.iter_mut().zip(&composed) {
            *r = scale * c;
        }
        for &bid in &ids {
            let brow = &buckets[bid as usize * d..(bid as usize + 1) * d];
            for (r, x) in row.iter_mut().zip(brow) {
                *r -= x;
            }
        }
    }
    Ok(EmbeddingTable::from_parts(
        ca.clone(),
        vocab,
        word_in,
        buckets,
        word_out,
    )?)
}

fn normalized_rows(table: &EmbeddingTable, w: Option<&ProjectionMatrix>) -> Vec<Vec<f64>> {
    (0..table.vocab().len())
        .map(|i| {
            let v = normalized(table.composed_row(i));
            match w {
                Some(w) => w.apply_f64(&v),
                None => v,
            }
        })
        .collect()
}

/// For every source vocabulary word, the `k` target words with highest
/// cosine similarity to its projected vector. Ties go to the lower
/// target vocabulary index. Special entries are skipped on both sides.
pub fn induce_dictionary(
    src: &EmbeddingTable,
    tgt: &EmbeddingTable,
    w: &ProjectionMatrix,
    k: usize,
) -> Result<Vec<(String, Vec<String>)>, AlignError> {
    let words: Vec<&str> = src.vocab().words()[2..].iter().map(String::as_str).collect();
    induce_for(src, tgt, w, &words, k)
}

/// [`induce_dictionary`] restricted to the given source words. Words
/// outside the source vocabulary are represented by their subwords.
pub fn induce_for(
    src: &EmbeddingTable,
    tgt: &EmbeddingTable,
    w: &ProjectionMatrix,
    words: &[&str],
    k: usize,
) -> Result<Vec<(String, Vec<String>)>, AlignError> {
    if k == 0 {
        return Err(AlignError::Usage("k must be at least 1".into()));
    }
    if src.dim() != w.dim() || tgt.dim() != w.dim() {
        return Err(AlignError::Usage("dimension mismatch".into()));
    }
    let targets = normalized_rows(tgt, None);
    let candidates: Vec<usize> = (2..tgt.vocab().len()).collect();
    let k = k.min(candidates.len());
    let mut out = Vec::with_capacity(words.len());
    for &word in words {
        let q = w.apply_f64(&normalized(src.lookup(word)));
        let mut scored: Vec<(f64, usize)> = candidates
            .iter()
            .map(|&j| (q.iter().zip(&targets[j]).map(|(a, b)| a * b).sum(), j))
            .collect();
        scored.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
        let top = scored[..k]
            .iter()
            .map(|&(_, j)| tgt.vocab().word(j).to_string())
            .collect();
        out.push((word.to_string(), top));
    }
    Ok(out)
}

/// Fraction of gold pairs whose source word's top induced neighbor is the
/// gold target. Pairs whose source word is absent from `induced` count as
/// misses.
pub fn precision_at_1(induced: &[(String, Vec<String>)], gold: &SeedDictionary) -> f64 {
    if gold.is_empty() {
        return 0.0;
    }
    let best: BTreeMap<&str, &str> = induced
        .iter()
        .filter_map(|(s, ts)| ts.first().map(|t| (s.as_str(), t.as_str())))
        .collect();
    let hits = gold
        .pairs()
        .iter()
        .filter(|(s, t)| best.get(s.as_str()) == Some(&t.as_str()))
        .count();
    hits as f64 / gold.len() as f64
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use crate::embed::EmbeddingConfig;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// A table whose words have no n-grams, so each word's vector is its
    /// own row.
    pub(crate) fn plain_table(words: &[String], vectors: &[Vec<f64>]) -> EmbeddingTable {
        let dim = vectors[0].len();
        let config = EmbeddingConfig {
            dim,
            min_ngram: 30,
            max_ngram: 30,
            bucket_count: 1,
            ..EmbeddingConfig::default()
        };
        let vocab = Vocabulary::from_counts(
            words.iter().enumerate().map(|(i, w)| (w.clone(), 1_000_000 - i as u64)),
            1,
        );
        let mut word_in = vec![0.0f32; vocab.len() * dim];
        for (w, v) in words.iter().zip(vectors) {
            let i = vocab.get(w).unwrap();
            for (x, y) in word_in[i * dim..(i + 1) * dim].iter_mut().zip(v) {
                *x = *y as f32;
            }
        }
        let word_out = vec![0.0f32; vocab.len() * dim];
        EmbeddingTable::from_parts(config, vocab, word_in, vec![0.0; dim], word_out).unwrap()
    }

    pub(crate) fn random_vectors(n: usize, dim: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    }

    /// Random orthogonal matrix from QR of a Gaussian-ish matrix.
    pub(crate) fn random_rotation(dim: usize, rng: &mut ChaCha8Rng) -> ProjectionMatrix {
        let m = DMatrix::<f64>::from_fn(dim, dim, |_, _| rng.random_range(-1.0..1.0));
        let q = m.qr().q();
        let mut values = Vec::new();
        for r in 0..dim {
            for c in 0..dim {
                values.push(q[(r, c)]);
            }
        }
        ProjectionMatrix::from_row_major(dim, values, 1e-9).unwrap()
    }

    fn words(prefix: &str, n: usize) -> Vec<String> {
        (0..n).map(|i| format!("{prefix}{i}")).collect()
    }

    #[test]
    fn self_alignment_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ws = words("w", 40);
        let t = plain_table(&ws, &random_vectors(40, 8, &mut rng));
        let dict = SeedDictionary::new(ws.iter().map(|w| (w.clone(), w.clone())));
        let w = procrustes_fit(&t, &t, &dict).unwrap();
        assert!(w.frobenius_distance(&ProjectionMatrix::identity(8)) < 1e-6);
    }

    #[test]
    fn planted_rotation_is_recovered() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let dim = 10;
        let r = random_rotation(dim, &mut rng);
        let xs = random_vectors(60, dim, &mut rng);
        let ys: Vec<Vec<f64>> = xs.iter().map(|x| r.apply_f64(x)).collect();
        let (sw, tw) = (words("s", 60), words("t", 60));
        let src = plain_table(&sw, &xs);
        let tgt = plain_table(&tw, &ys);
        let dict = SeedDictionary::new(sw.iter().cloned().zip(tw.iter().cloned()));
        let (w, report) = procrustes_fit_with_report(&src, &tgt, &dict).unwrap();
        // f32 storage of the vectors bounds the attainable accuracy
        assert!(w.frobenius_distance(&r) < 1e-4, "{}", w.frobenius_distance(&r));
        assert!(report.residual <= report.identity_residual);

        let projected = project(&src, &w).unwrap();
        for (s, t) in dict.pairs() {
            let a = normalized(projected.lookup(s));
            let b = normalized(tgt.lookup(t));
            let cos: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
            assert!(cos > 0.99);
        }
    }

    #[test]
    fn noisy_self_alignment_stays_near_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let dim = 12;
        let xs = random_vectors(200, dim, &mut rng);
        let ys: Vec<Vec<f64>> = xs
            .iter()
            .map(|x| x.iter().map(|v| v + 0.01 * rng.random_range(-1.0..1.0)).collect())
            .collect();
        let (sw, tw) = (words("s", 200), words("t", 200));
        let dict = SeedDictionary::new(sw.iter().cloned().zip(tw.iter().cloned()));
        let w = procrustes_fit(&plain_table(&sw, &xs), &plain_table(&tw, &ys), &dict).unwrap();
        assert!(w.frobenius_distance(&ProjectionMatrix::identity(dim)) < 0.05);
        assert!(w.orthogonality_error() < ORTHOGONALITY_TOLERANCE);
    }

    #[test]
    fn too_few_pairs_and_dim_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let ws = words("w", 5);
        let t = plain_table(&ws, &random_vectors(5, 8, &mut rng));
        let dict = SeedDictionary::new(ws.iter().map(|w| (w.clone(), w.clone())));
        assert!(matches!(procrustes_fit(&t, &t, &dict), Err(AlignError::Fit(_))));
        let other = plain_table(&ws, &random_vectors(5, 4, &mut rng));
        assert!(matches!(procrustes_fit(&t, &other, &dict), Err(AlignError::Usage(_))));
        assert!(matches!(
            project(&t, &ProjectionMatrix::identity(3)),
            Err(AlignError::Usage(_))
        ));
    }

    #[test]
    fn missing_words_are_filtered_and_counted() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let ws = words("w", 20);
        let t = plain_table(&ws, &random_vectors(20, 4, &mut rng));
        let mut pairs: Vec<_> = ws.iter().map(|w| (w.clone(), w.clone())).collect();
        pairs.push(("ghost".into(), "w1".into()));
        let (_, report) =
            procrustes_fit_with_report(&t, &t, &SeedDictionary::new(pairs)).unwrap();
        assert_eq!((report.pairs_used, report.pairs_filtered), (20, 1));
    }

    #[test]
    fn identity_projection_leaves_table_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let ws = words("w", 10);
        let t = plain_table(&ws, &random_vectors(10, 6, &mut rng));
        let p = project(&t, &ProjectionMatrix::identity(6)).unwrap();
        for w in &ws {
            assert_eq!(p.lookup(w), t.lookup(w));
        }
    }

    #[test]
    fn projection_is_an_isometry() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let ws = words("w", 15);
        let t = plain_table(&ws, &random_vectors(15, 9, &mut rng));
        let r = random_rotation(9, &mut rng);
        let p = project(&t, &r).unwrap();
        let cos = |a: Vec<f32>, b: Vec<f32>| {
            let (a, b) = (normalized(a), normalized(b));
            a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>()
        };
        for a in &ws {
            for b in &ws {
                let before = cos(t.lookup(a), t.lookup(b));
                let after = cos(p.lookup(a), p.lookup(b));
                assert!((before - after).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn induction_on_identical_spaces_finds_self_and_clamps_k() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let ws = words("w", 12);
        let t = plain_table(&ws, &random_vectors(12, 5, &mut rng));
        let induced = induce_dictionary(&t, &t, &ProjectionMatrix::identity(5), 100).unwrap();
        for (s, top) in &induced {
            assert_eq!(&top[0], s);
            assert_eq!(top.len(), 12);
        }
        let gold = SeedDictionary::new(ws.iter().map(|w| (w.clone(), w.clone())));
        assert_eq!(precision_at_1(&induced, &gold), 1.0);
        assert!(induce_dictionary(&t, &t, &ProjectionMatrix::identity(5), 0).is_err());
    }

    #[test]
    fn induction_ties_go_to_lower_index() {
        let ws = words("w", 3);
        let t = plain_table(&ws, &[vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]);
        let first = t.vocab().word(2).to_string();
        let induced = induce_for(&t, &t, &ProjectionMatrix::identity(2), &["w1"], 2).unwrap();
        assert_eq!(induced[0].1[0], first);
    }

    #[test]
    fn merge_preserves_composed_vectors() {
        let cfg = EmbeddingConfig {
            dim: 3,
            min_ngram: 2,
            max_ngram: 3,
            bucket_count: 11,
            ..EmbeddingConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mk = |words: &[&str], rng: &mut ChaCha8Rng| {
            let vocab = Vocabulary::from_counts(words.iter().map(|w| (w.to_string(), 3)), 1);
            let n = vocab.len() * 3;
            let r = |k: usize, rng: &mut ChaCha8Rng| {
                (0..k).map(|_| rng.random_range(-1.0f32..1.0)).collect::<Vec<_>>()
            };
            let (wi, b, wo) = (r(n, rng), r(33, rng), r(n, rng));
            EmbeddingTable::from_parts(cfg.clone(), vocab, wi, b, wo).unwrap()
        };
        let a = mk(&["ab", "cd"], &mut rng);
        let b = mk(&["cd", "ef"], &mut rng);
        let m = merge_tables(&a, &b).unwrap();
        assert_eq!(m.vocab().len(), 5);
        let close = |x: &[f32], y: &[f32]| x.iter().zip(y).all(|(p, q)| (p - q).abs() < 1e-5);
        assert!(close(&m.lookup("ab"), &a.lookup("ab")));
        assert!(close(&m.lookup("ef"), &b.lookup("ef")));
        let avg: Vec<f32> = a
            .lookup("cd")
            .iter()
            .zip(b.lookup("cd"))
            .map(|(x, y)| 0.5 * (x + y))
            .collect();
        assert!(close(&m.lookup("cd"), &avg));
    }

    #[test]
    fn dictionary_parsing_and_dedup() {
        let d = SeedDictionary::parse("a\tb\n\na\tb\nc\td\n").unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(SeedDictionary::parse(&d.to_tsv()).unwrap(), d);
        assert!(SeedDictionary::parse("a b\n").is_err());
        assert!(SeedDictionary::parse("a\tb\tc\n").is_err());
    }

    #[test]
    fn projection_binary_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let r = random_rotation(7, &mut rng);
        let mut buf = Vec::new();
        r.write_binary(&mut buf).unwrap();
        let back = ProjectionMatrix::read_binary(&buf[..]).unwrap();
        assert!(back.frobenius_distance(&r) < 1e-6);
        assert!(ProjectionMatrix::read_binary(&b"CSEMB1"[..]).is_err());
    }
}
