use rand::Rng;

use super::crf::Crf;
use super::lstm::{BiLstm, BiLstmTrace};
use super::matrix::{axpy, Matrix, Parameter};
use super::{dropout_mask, NnError};

/// One token's input to the encoder.
#[derive(Debug, Clone, PartialEq)]
pub enum TokenInput {
    /// Row of the trainable embedding matrix.
    Row(usize),
    /// Externally supplied vector; receives no gradient.
    Vector(Vec<f64>),
}

/// Affine map `y = Wx + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub w: Parameter,
    pub b: Parameter,
}

impl Linear {
    pub fn new<R: Rng>(name: &str, input: usize, output: usize, rng: &mut R) -> Linear {
        let bound = (1.0 / input as f64).sqrt();
        Linear {
            w: Parameter::new(format!("{name}.w"), Matrix::uniform(output, input, bound, rng)),
            b: Parameter::new(format!("{name}.b"), Matrix::zeros(output, 1)),
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.b.value.data().to_vec();
        self.w.value.matvec_add(x, &mut y);
        y
    }

    /// Accumulates parameter gradients and adds `∂/∂x` into `dx`.
    pub fn backprop(&mut self, x: &[f64], dy: &[f64], dx: &mut [f64]) {
        self.w.grad.add_outer(dy, x);
        axpy(1.0, dy, self.b.grad.data_mut());
        self.w.value.matvec_t_add(dy, dx);
    }
}

/// A tagging output: emission projection followed by a CRF.
#[derive(Debug, Clone, PartialEq)]
pub struct CrfHead {
    pub linear: Linear,
    pub crf: Crf,
}

impl CrfHead {
    pub fn new<R: Rng>(name: &str, input: usize, tags: usize, rng: &mut R) -> CrfHead {
        CrfHead {
            linear: Linear::new(&format!("{name}.emit"), input, tags, rng),
            crf: Crf::new(name, tags),
        }
    }

    pub fn tags(&self) -> usize {
        self.crf.tags()
    }

    pub fn emissions(&self, encoded: &[Vec<f64>]) -> Matrix {
        let rows: Vec<Vec<f64>> = encoded.iter().map(|h| self.linear.forward(h)).collect();
        Matrix::from_rows(&rows)
    }
}

/// Gradients waiting for [`SequenceModel::backward`].
#[derive(Debug, Clone)]
struct Pending {
    rows: Vec<Option<usize>>,
    xs: Vec<Vec<f64>>,
    trace: BiLstmTrace,
    masks: Option<Vec<Vec<f64>>>,
    encoded: Vec<Vec<f64>>,
    heads: Vec<(usize, Matrix, Matrix)>,
}

/// Embedding lookup, BiLSTM encoder, and one or more CRF heads sharing
/// the encoder.
#[derive(Debug, Clone)]
pub struct SequenceModel {
    /// `vocab x dim`, sparse.
    pub embedding: Parameter,
    pub encoder: BiLstm,
    pub heads: Vec<CrfHead>,
    pub dropout: f64,
    pending: Option<Pending>,
}

impl PartialEq for SequenceModel {
    fn eq(&self, other: &Self) -> bool {
        self.embedding == other.embedding
            && self.encoder == other.encoder
            && self.heads == other.heads
            && self.dropout == other.dropout
    }
}

impl SequenceModel {
    /// `head_tags[i]` is the tag count of head `i`.
    pub fn new<R: Rng>(
        embedding: Matrix,
        hidden: usize,
        head_tags: &[usize],
        dropout: f64,
        rng: &mut R,
    ) -> Result<SequenceModel, NnError> {
        if !(0.0..1.0).contains(&dropout) {
            return Err(NnError::Usage(format!("dropout rate {dropout} outside [0, 1)")));
        }
        if head_tags.is_empty() || head_tags.contains(&0) {
            return Err(NnError::Usage("every head needs at least one tag".into()));
        }
        let dim = embedding.cols();
        let encoder = BiLstm::new("encoder", dim, hidden, rng);
        let heads = head_tags
            .iter()
            .enumerate()
            .map(|(i, &k)| CrfHead::new(&format!("head{i}"), 2 * hidden, k, rng))
            .collect();
        Ok(SequenceModel {
            embedding: Parameter::sparse("embedding", embedding),
            encoder,
            heads,
            dropout,
            pending: None,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.embedding.value.cols()
    }

    pub fn hidden(&self) -> usize {
        self.encoder.forward.hidden()
    }

    fn embed(&self, inputs: &[TokenInput]) -> Result<Vec<Vec<f64>>, NnError> {
        let d = self.input_dim();
        inputs
            .iter()
            .map(|t| match t {
                TokenInput::Row(r) if *r < self.embedding.value.rows() => {
                    Ok(self.embedding.value.row(*r).to_vec())
                }
                TokenInput::Row(r) => Err(NnError::Usage(format!("embedding row {r} out of range"))),
                TokenInput::Vector(v) if v.len() == d => Ok(v.clone()),
                TokenInput::Vector(v) => Err(NnError::Usage(format!(
                    "input vector has width {}, expected {d}",
                    v.len()
                ))),
            })
            .collect()
    }

    fn head(&self, idx: usize) -> Result<&CrfHead, NnError> {
        self.heads
            .get(idx)
            .ok_or_else(|| NnError::Usage(format!("no head {idx}")))
    }

    /// Encoder output without dropout.
    pub fn encode(&self, inputs: &[TokenInput]) -> Result<Vec<Vec<f64>>, NnError> {
        self.encoder.encode(&self.embed(inputs)?)
    }

    /// Best tag sequence of head `head`.
    pub fn decode(&self, inputs: &[TokenInput], head: usize) -> Result<Vec<usize>, NnError> {
        let h = self.head(head)?;
        let encoded = self.encode(inputs)?;
        Ok(h.crf.decode(&h.emissions(&encoded))?.0)
    }

    /// Best tag sequences of all heads, sharing one encoder pass.
    pub fn decode_all(&self, inputs: &[TokenInput]) -> Result<Vec<Vec<usize>>, NnError> {
        let encoded = self.encode(inputs)?;
        self.heads
            .iter()
            .map(|h| Ok(h.crf.decode(&h.emissions(&encoded))?.0))
            .collect()
    }

    /// Summed negative log-likelihood in inference mode; stores nothing.
    pub fn loss(&self, inputs: &[TokenInput], targets: &[(usize, &[usize])]) -> Result<f64, NnError> {
        let encoded = self.encode(inputs)?;
        let mut total = 0.0;
        for &(idx, gold) in targets {
            let h = self.head(idx)?;
            total += h.crf.neg_log_likelihood(&h.emissions(&encoded), gold)?;
        }
        Ok(total)
    }

    /// Training-mode forward pass. Computes the summed loss of the given
    /// `(head, gold tags)` targets and keeps what [`Self::backward`] needs.
    pub fn forward<R: Rng>(
        &mut self,
        inputs: &[TokenInput],
        targets: &[(usize, &[usize])],
        rng: &mut R,
    ) -> Result<f64, NnError> {
        self.pending = None;
        let xs = self.embed(inputs)?;
        let (mut encoded, trace) = self.encoder.encode_traced(&xs)?;
        let masks = if self.dropout > 0.0 {
            let width = self.encoder.output_dim();
            let masks: Vec<Vec<f64>> = encoded
                .iter()
                .map(|_| dropout_mask(width, self.dropout, rng))
                .collect();
            for (h, m) in encoded.iter_mut().zip(&masks) {
                h.iter_mut().zip(m).for_each(|(a, b)| *a *= b);
            }
            Some(masks)
        } else {
            None
        };
        let mut total = 0.0;
        let mut heads = Vec::with_capacity(targets.len());
        for &(idx, gold) in targets {
            let h = self.head(idx)?;
            let (loss, d_em, d_tr) = h.crf.loss_and_gradients(&h.emissions(&encoded), gold)?;
            total += loss;
            heads.push((idx, d_em, d_tr));
        }
        let rows = inputs
            .iter()
            .map(|t| match t {
                TokenInput::Row(r) => Some(*r),
                TokenInput::Vector(_) => None,
            })
            .collect();
        self.pending = Some(Pending {
            rows,
            xs,
            trace,
            masks,
            encoded,
            heads,
        });
        Ok(total)
    }

    /// Accumulates gradients of the loss from the last [`Self::forward`].
    pub fn backward(&mut self) -> Result<(), NnError> {
        let p = self
            .pending
            .take()
            .ok_or_else(|| NnError::Usage("backward called before forward".into()))?;
        let n = p.encoded.len();
        let width = self.encoder.output_dim();
        let mut d_enc = vec![vec![0.0; width]; n];
        for (idx, d_em, d_tr) in &p.heads {
            let head = &mut self.heads[*idx];
            head.crf.transitions.grad.add_assign(d_tr);
            for t in 0..n {
                head.linear.backprop(&p.encoded[t], d_em.row(t), &mut d_enc[t]);
            }
        }
        if let Some(masks) = &p.masks {
            for (d, m) in d_enc.iter_mut().zip(masks) {
                d.iter_mut().zip(m).for_each(|(a, b)| *a *= b);
            }
        }
        let dxs = self.encoder.backprop(&p.xs, &p.trace, &d_enc);
        if !self.embedding.frozen {
            for (row, dx) in p.rows.iter().zip(&dxs) {
                if let Some(r) = row {
                    self.embedding.accumulate_row(*r, dx);
                }
            }
        }
        Ok(())
    }

    pub fn parameters(&self) -> Vec<&Parameter> {
        let mut out = vec![&self.embedding];
        out.extend(self.encoder.forward.parameters());
        out.extend(self.encoder.backward.parameters());
        for h in &self.heads {
            out.extend([&h.linear.w, &h.linear.b, &h.crf.transitions]);
        }
        out
    }

    pub fn parameters_mut(&mut self) -> Vec<&mut Parameter> {
        let mut out = vec![&mut self.embedding];
        out.extend(self.encoder.forward.parameters_mut());
        out.extend(self.encoder.backward.parameters_mut());
        for h in &mut self.heads {
            out.extend([&mut h.linear.w, &mut h.linear.b, &mut h.crf.transitions]);
        }
        out
    }

    pub fn zero_grad(&mut self) {
        for p in self.parameters_mut() {
            p.zero_grad();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toy_model(seed: u64) -> SequenceModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let emb = Matrix::uniform(6, 8, 0.5, &mut rng);
        let mut m = SequenceModel::new(emb, 3, &[3], 0.0, &mut rng).unwrap();
        // non-zero transitions and biases exercise every gradient path
        for p in m.parameters_mut() {
            if p.name.ends_with(".b") || p.name.ends_with("transitions") {
                let (r, c) = p.value.shape();
                for i in 0..r {
                    for j in 0..c {
                        if p.value.get(i, j) > -100.0 {
                            let v = p.value.get(i, j) + rng.random_range(-0.5..0.5);
                            p.value.set(i, j, v);
                        }
                    }
                }
            }
        }
        m
    }

    #[test]
    fn backward_before_forward_is_an_error() {
        let mut m = toy_model(1);
        assert!(matches!(m.backward(), Err(NnError::Usage(_))));
    }

    #[test]
    fn forward_then_backward_consumes_the_trace() {
        let mut m = toy_model(2);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let inputs = [TokenInput::Row(2), TokenInput::Row(3)];
        m.forward(&inputs, &[(0, &[0, 1])], &mut rng).unwrap();
        m.backward().unwrap();
        assert!(m.backward().is_err());
    }

    #[test]
    fn unused_embedding_rows_get_zero_gradient() {
        let mut m = toy_model(3);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let inputs = [TokenInput::Row(2), TokenInput::Row(4)];
        m.forward(&inputs, &[(0, &[2, 1])], &mut rng).unwrap();
        m.backward().unwrap();
        for r in [0, 1, 3, 5] {
            assert!(m.embedding.grad.row(r).iter().all(|&x| x == 0.0));
        }
        assert!(m.embedding.grad.row(2).iter().any(|&x| x != 0.0));
    }

    #[test]
    fn inference_loss_matches_training_loss_without_dropout() {
        let mut m = toy_model(4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let inputs = [TokenInput::Row(1), TokenInput::Vector(vec![0.1; 8]), TokenInput::Row(5)];
        let gold: &[usize] = &[0, 2, 1];
        let a = m.loss(&inputs, &[(0, gold)]).unwrap();
        let b = m.forward(&inputs, &[(0, gold)], &mut rng).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn bad_inputs_are_usage_errors() {
        let m = toy_model(5);
        assert!(m.decode(&[TokenInput::Row(99)], 0).is_err());
        assert!(m.decode(&[TokenInput::Vector(vec![0.0; 3])], 0).is_err());
        assert!(m.decode(&[TokenInput::Row(1)], 7).is_err());
        assert!(m.decode(&[], 0).is_err());
    }

    fn central_difference(m: &mut SequenceModel, pi: usize, k: usize, f: &dyn Fn(&SequenceModel) -> f64) -> f64 {
        let h = 1e-4;
        let orig = m.parameters()[pi].value.data()[k];
        m.parameters_mut()[pi].value.data_mut()[k] = orig + h;
        let up = f(m);
        m.parameters_mut()[pi].value.data_mut()[k] = orig - h;
        let down = f(m);
        m.parameters_mut()[pi].value.data_mut()[k] = orig;
        (up - down) / (2.0 * h)
    }

    #[test]
    fn gradients_match_finite_differences_two_heads() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let emb = Matrix::uniform(5, 4, 0.5, &mut rng);
        let mut m = SequenceModel::new(emb, 2, &[3, 2], 0.0, &mut rng).unwrap();
        let inputs = vec![TokenInput::Row(1), TokenInput::Row(3), TokenInput::Row(1)];
        let pos: Vec<usize> = vec![0, 2, 1];
        let lid: Vec<usize> = vec![1, 1, 0];
        let targets = [(0, pos.as_slice()), (1, lid.as_slice())];
        m.forward(&inputs, &targets, &mut rng).unwrap();
        m.backward().unwrap();
        let f = |m: &SequenceModel| m.loss(&inputs, &targets).unwrap();
        for pi in 0..m.parameters().len() {
            let analytic = m.parameters()[pi].grad.data().to_vec();
            for (k, a) in analytic.iter().enumerate() {
                let num = central_difference(&mut m, pi, k, &f);
                assert!((a - num).abs() <= 1e-6 + 1e-4 * num.abs(), "{} [{k}]: {a} vs {num}", m.parameters()[pi].name);
            }
        }
    }

    #[test]
    fn frozen_embedding_receives_no_gradient() {
        let mut m = toy_model(7);
        m.embedding.frozen = true;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        m.forward(&[TokenInput::Row(2)], &[(0, &[1])], &mut rng).unwrap();
        m.backward().unwrap();
        assert_eq!(m.embedding.grad.sq_norm(), 0.0);
    }
}
