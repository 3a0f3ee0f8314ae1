//! Linear-chain CRF over `K` tags with virtual START and STOP states.
//!
//! Transition scores live in a `(K+2) x (K+2)` matrix indexed
//! `[from][to]`; START is index `K` and STOP is `K + 1`.

use super::matrix::{log_sum_exp, Matrix, Parameter};
use super::NnError;

/// Score of the transitions that can never occur.
pub const FORBIDDEN: f64 = -10000.0;

/// Posterior quantities of one instance.
#[derive(Debug, Clone)]
pub struct Marginals {
    pub log_partition: f64,
    /// `L x K`: `p(y_t = k | x)`; this is also `∂logZ/∂emissions`.
    pub unary: Matrix,
    /// `(K+2) x (K+2)`: expected transition counts, `∂logZ/∂transitions`.
    pub transitions: Matrix,
}

fn check_shapes(emissions: &Matrix, transitions: &Matrix) -> usize {
    let k = emissions.cols();
    assert_eq!(transitions.shape(), (k + 2, k + 2), "transition matrix shape");
    k
}

/// Forward log-space scores `alpha[t][j]`.
fn forward_scores(emissions: &Matrix, transitions: &Matrix) -> Vec<Vec<f64>> {
    let k = check_shapes(emissions, transitions);
    let start = k;
    let mut alpha = Vec::with_capacity(emissions.rows());
    alpha.push((0..k).map(|j| transitions.get(start, j) + emissions.get(0, j)).collect::<Vec<_>>());
    let mut buf = vec![0.0; k];
    for t in 1..emissions.rows() {
        let prev: &Vec<f64> = &alpha[t - 1];
        let row = (0..k)
            .map(|j| {
                for i in 0..k {
                    buf[i] = prev[i] + transitions.get(i, j);
                }
                log_sum_exp(&buf) + emissions.get(t, j)
            })
            .collect();
        alpha.push(row);
    }
    alpha
}

/// Backward log-space scores `beta[t][i]` (excluding the emission at `t`).
fn backward_scores(emissions: &Matrix, transitions: &Matrix) -> Vec<Vec<f64>> {
    let k = check_shapes(emissions, transitions);
    let stop = k + 1;
    let n = emissions.rows();
    let mut beta = vec![vec![0.0; k]; n];
    for i in 0..k {
        beta[n - 1][i] = transitions.get(i, stop);
    }
    let mut buf = vec![0.0; k];
    for t in (0..n - 1).rev() {
        for i in 0..k {
            for j in 0..k {
                buf[j] = transitions.get(i, j) + emissions.get(t + 1, j) + beta[t + 1][j];
            }
            beta[t][i] = log_sum_exp(&buf);
        }
    }
    beta
}

fn finish(alpha_last: &[f64], transitions: &Matrix, k: usize) -> f64 {
    let v: Vec<f64> = (0..k).map(|j| alpha_last[j] + transitions.get(j, k + 1)).collect();
    log_sum_exp(&v)
}

/// Log of the summed exponentiated scores of all `K^L` tag paths.
pub fn log_partition(emissions: &Matrix, transitions: &Matrix) -> f64 {
    let k = check_shapes(emissions, transitions);
    let alpha = forward_scores(emissions, transitions);
    finish(alpha.last().expect("at least one position"), transitions, k)
}

/// Score of one path, including the START and STOP transitions.
pub fn path_score(emissions: &Matrix, transitions: &Matrix, path: &[usize]) -> f64 {
    let k = check_shapes(emissions, transitions);
    let mut prev = k;
    let mut s = 0.0;
    for (t, &y) in path.iter().enumerate() {
        s += transitions.get(prev, y) + emissions.get(t, y);
        prev = y;
    }
    s + transitions.get(prev, k + 1)
}

/// Forward-backward posteriors.
pub fn marginals(emissions: &Matrix, transitions: &Matrix) -> Marginals {
    let k = check_shapes(emissions, transitions);
    let n = emissions.rows();
    let alpha = forward_scores(emissions, transitions);
    let beta = backward_scores(emissions, transitions);
    let log_z = finish(&alpha[n - 1], transitions, k);
    let mut unary = Matrix::zeros(n, k);
    for t in 0..n {
        for j in 0..k {
            unary.set(t, j, (alpha[t][j] + beta[t][j] - log_z).exp());
        }
    }
    let mut expected = Matrix::zeros(k + 2, k + 2);
    for j in 0..k {
        expected.set(k, j, unary.get(0, j));
        expected.set(j, k + 1, unary.get(n - 1, j));
    }
    for t in 0..n.saturating_sub(1) {
        for i in 0..k {
            for j in 0..k {
                let lp = alpha[t][i] + transitions.get(i, j) + emissions.get(t + 1, j) + beta[t + 1][j] - log_z;
                expected.set(i, j, expected.get(i, j) + lp.exp());
            }
        }
    }
    Marginals {
        log_partition: log_z,
        unary,
        transitions: expected,
    }
}

/// Highest-scoring path and its score. Ties go to the lowest tag index
/// at every backtracking decision.
pub fn viterbi(emissions: &Matrix, transitions: &Matrix) -> (Vec<usize>, f64) {
    let k = check_shapes(emissions, transitions);
    let n = emissions.rows();
    let mut delta: Vec<f64> = (0..k).map(|j| transitions.get(k, j) + emissions.get(0, j)).collect();
    let mut back = vec![vec![0usize; k]; n];
    for t in 1..n {
        let mut next = vec![0.0; k];
        for j in 0..k {
            let mut best = 0;
            let mut best_score = delta[0] + transitions.get(0, j);
            for i in 1..k {
                let s = delta[i] + transitions.get(i, j);
                if s > best_score {
                    best = i;
                    best_score = s;
                }
            }
            back[t][j] = best;
            next[j] = best_score + emissions.get(t, j);
        }
        delta = next;
    }
    let mut last = 0;
    let mut best_score = delta[0] + transitions.get(0, k + 1);
    for j in 1..k {
        let s = delta[j] + transitions.get(j, k + 1);
        if s > best_score {
            last = j;
            best_score = s;
        }
    }
    let mut path = vec![last; n];
    for t in (1..n).rev() {
        path[t - 1] = back[t][path[t]];
    }
    (path, best_score)
}

/// CRF output layer with a trainable transition matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Crf {
    pub transitions: Parameter,
}

impl Crf {
    pub fn new(name: &str, tags: usize) -> Crf {
        let mut m = Matrix::zeros(tags + 2, tags + 2);
        for i in 0..tags + 2 {
            m.set(i, tags, FORBIDDEN);
            m.set(tags + 1, i, FORBIDDEN);
        }
        Crf {
            transitions: Parameter::new(format!("{name}.transitions"), m),
        }
    }

    pub fn tags(&self) -> usize {
        self.transitions.value.rows() - 2
    }

    fn check(&self, emissions: &Matrix) -> Result<(), NnError> {
        if emissions.rows() == 0 {
            return Err(NnError::Usage("CRF input has no positions".into()));
        }
        if emissions.cols() != self.tags() {
            return Err(NnError::Usage(format!(
                "emissions have {} columns, CRF has {} tags",
                emissions.cols(),
                self.tags()
            )));
        }
        Ok(())
    }

    fn check_gold(&self, emissions: &Matrix, gold: &[usize]) -> Result<(), NnError> {
        self.check(emissions)?;
        if gold.len() != emissions.rows() {
            return Err(NnError::Usage(format!(
                "gold has {} tags for {} positions",
                gold.len(),
                emissions.rows()
            )));
        }
        if let Some(&bad) = gold.iter().find(|&&y| y >= self.tags()) {
            return Err(NnError::Usage(format!("tag index {bad} out of range 0..{}", self.tags())));
        }
        Ok(())
    }

    pub fn log_partition(&self, emissions: &Matrix) -> Result<f64, NnError> {
        self.check(emissions)?;
        Ok(log_partition(emissions, &self.transitions.value))
    }

    /// `log Z − score(gold)`, i.e. `−log p(gold | x)`.
    pub fn neg_log_likelihood(&self, emissions: &Matrix, gold: &[usize]) -> Result<f64, NnError> {
        self.check_gold(emissions, gold)?;
        let t = &self.transitions.value;
        Ok(log_partition(emissions, t) - path_score(emissions, t, gold))
    }

    /// Loss with its gradients: returns `(loss, ∂loss/∂emissions,
    /// ∂loss/∂transitions)`. Gradients of the fixed forbidden entries are
    /// zero.
    pub fn loss_and_gradients(&self, emissions: &Matrix, gold: &[usize]) -> Result<(f64, Matrix, Matrix), NnError> {
        self.check_gold(emissions, gold)?;
        let k = self.tags();
        let t = &self.transitions.value;
        let m = marginals(emissions, t);
        let loss = m.log_partition - path_score(emissions, t, gold);
        let mut d_em = m.unary;
        let mut d_tr = m.transitions;
        let mut prev = k;
        for (pos, &y) in gold.iter().enumerate() {
            d_em.set(pos, y, d_em.get(pos, y) - 1.0);
            d_tr.set(prev, y, d_tr.get(prev, y) - 1.0);
            prev = y;
        }
        d_tr.set(prev, k + 1, d_tr.get(prev, k + 1) - 1.0);
        for i in 0..k + 2 {
            d_tr.set(i, k, 0.0);
            d_tr.set(k + 1, i, 0.0);
        }
        Ok((loss, d_em, d_tr))
    }

    pub fn decode(&self, emissions: &Matrix) -> Result<(Vec<usize>, f64), NnError> {
        self.check(emissions)?;
        Ok(viterbi(emissions, &self.transitions.value))
    }
}
