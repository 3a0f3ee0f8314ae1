use rand::Rng;

use super::matrix::{sigmoid, Matrix, Parameter};
use super::NnError;

/// One LSTM direction. Gate blocks are stacked in the order input,
/// forget, cell, output along the rows of `w`, `u` and `b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmCell {
    /// `4H x D`
    pub w: Parameter,
    /// `4H x H`
    pub u: Parameter,
    /// `4H x 1`
    pub b: Parameter,
}

/// Activations of one step, kept for backpropagation.
#[derive(Debug, Clone)]
struct StepCache {
    /// Activated gates `[i, f, g, o]`.
    gates: Vec<f64>,
    c: Vec<f64>,
    tanh_c: Vec<f64>,
    h: Vec<f64>,
}

/// Forward activations of a whole sequence.
#[derive(Debug, Clone)]
pub struct LstmTrace {
    steps: Vec<StepCache>,
}

impl LstmTrace {
    pub fn hidden_states(&self) -> impl Iterator<Item = &[f64]> {
        self.steps.iter().map(|s| s.h.as_slice())
    }
}

impl LstmCell {
    pub fn new<R: Rng>(name: &str, input: usize, hidden: usize, rng: &mut R) -> LstmCell {
        let bound = (1.0 / hidden as f64).sqrt();
        let mut b = Matrix::zeros(4 * hidden, 1);
        for k in hidden..2 * hidden {
            b.set(k, 0, 1.0);
        }
        LstmCell {
            w: Parameter::new(format!("{name}.w"), Matrix::uniform(4 * hidden, input, bound, rng)),
            u: Parameter::new(format!("{name}.u"), Matrix::uniform(4 * hidden, hidden, bound, rng)),
            b: Parameter::new(format!("{name}.b"), b),
        }
    }

    pub fn hidden(&self) -> usize {
        self.u.value.cols()
    }

    pub fn input(&self) -> usize {
        self.w.value.cols()
    }

    pub fn parameters(&self) -> [&Parameter; 3] {
        [&self.w, &self.u, &self.b]
    }

    pub fn parameters_mut(&mut self) -> [&mut Parameter; 3] {
        [&mut self.w, &mut self.u, &mut self.b]
    }

    /// One recurrence step: returns `(h_t, c_t)`.
    pub fn step(&self, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> Result<(Vec<f64>, Vec<f64>), NnError> {
        let hd = self.hidden();
        if x.len() != self.input() || h_prev.len() != hd || c_prev.len() != hd {
            return Err(NnError::Usage(format!(
                "lstm step expects x[{}], h[{hd}], c[{hd}]; got x[{}], h[{}], c[{}]",
                self.input(),
                x.len(),
                h_prev.len(),
                c_prev.len()
            )));
        }
        let s = self.step_cached(x, h_prev, c_prev);
        Ok((s.h, s.c))
    }

    fn step_cached(&self, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> StepCache {
        let hd = self.hidden();
        let mut z = self.b.value.data().to_vec();
        self.w.value.matvec_add(x, &mut z);
        self.u.value.matvec_add(h_prev, &mut z);
        for (k, v) in z.iter_mut().enumerate() {
            *v = if (2 * hd..3 * hd).contains(&k) { v.tanh() } else { sigmoid(*v) };
        }
        let mut c = vec![0.0; hd];
        let mut tanh_c = vec![0.0; hd];
        let mut h = vec![0.0; hd];
        for j in 0..hd {
            let (i, f, g, o) = (z[j], z[hd + j], z[2 * hd + j], z[3 * hd + j]);
            c[j] = f * c_prev[j] + i * g;
            tanh_c[j] = c[j].tanh();
            h[j] = o * tanh_c[j];
        }
        StepCache { gates: z, c, tanh_c, h }
    }

    /// Runs the cell over `xs` in the given order from zero state.
    pub fn run(&self, xs: &[Vec<f64>]) -> LstmTrace {
        let hd = self.hidden();
        let mut steps: Vec<StepCache> = Vec::with_capacity(xs.len());
        let zero = vec![0.0; hd];
        for x in xs {
            let (h_prev, c_prev) = match steps.last() {
                Some(s) => (s.h.as_slice(), s.c.as_slice()),
                None => (zero.as_slice(), zero.as_slice()),
            };
            let s = self.step_cached(x, h_prev, c_prev);
            steps.push(s);
        }
        LstmTrace { steps }
    }

    /// Backpropagation through time. `dh[t]` is the loss gradient with
    /// respect to the output at step `t`. Accumulates parameter gradients
    /// and returns the gradients with respect to the inputs.
    pub fn backprop(&mut self, xs: &[Vec<f64>], trace: &LstmTrace, dh: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let hd = self.hidden();
        let n = xs.len();
        let zero = vec![0.0; hd];
        let mut dxs = vec![vec![0.0; self.input()]; n];
        let mut dh_next = vec![0.0; hd];
        let mut dc_next = vec![0.0; hd];
        let mut dz = vec![0.0; 4 * hd];
        for t in (0..n).rev() {
            let s = &trace.steps[t];
            let (h_prev, c_prev) = if t > 0 {
                (trace.steps[t - 1].h.as_slice(), trace.steps[t - 1].c.as_slice())
            } else {
                (zero.as_slice(), zero.as_slice())
            };
            for j in 0..hd {
                let (i, f, g, o) = (s.gates[j], s.gates[hd + j], s.gates[2 * hd + j], s.gates[3 * hd + j]);
                let dhj = dh[t][j] + dh_next[j];
                let tc = s.tanh_c[j];
                let dc = dhj * o * (1.0 - tc * tc) + dc_next[j];
                dz[j] = dc * g * i * (1.0 - i);
                dz[hd + j] = dc * c_prev[j] * f * (1.0 - f);
                dz[2 * hd + j] = dc * i * (1.0 - g * g);
                dz[3 * hd + j] = dhj * tc * o * (1.0 - o);
                dc_next[j] = dc * f;
            }
            self.w.grad.add_outer(&dz, &xs[t]);
            self.u.grad.add_outer(&dz, h_prev);
            super::matrix::axpy(1.0, &dz, self.b.grad.data_mut());
            self.w.value.matvec_t_add(&dz, &mut dxs[t]);
            dh_next.iter_mut().for_each(|v| *v = 0.0);
            self.u.value.matvec_t_add(&dz, &mut dh_next);
        }
        dxs
    }
}

/// Two independent LSTM directions. The output at step `t` is
/// `[h_fwd_t, h_bwd_t]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BiLstm {
    pub forward: LstmCell,
    pub backward: LstmCell,
}

#[derive(Debug, Clone)]
pub struct BiLstmTrace {
    fwd: LstmTrace,
    bwd: LstmTrace,
    reversed: Vec<Vec<f64>>,
}

impl BiLstm {
    pub fn new<R: Rng>(name: &str, input: usize, hidden: usize, rng: &mut R) -> BiLstm {
        BiLstm {
            forward: LstmCell::new(&format!("{name}.fwd"), input, hidden, rng),
            backward: LstmCell::new(&format!("{name}.bwd"), input, hidden, rng),
        }
    }

    pub fn output_dim(&self) -> usize {
        self.forward.hidden() + self.backward.hidden()
    }

    /// Encodes a non-empty sequence.
    pub fn encode(&self, xs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>, NnError> {
        self.encode_traced(xs).map(|(out, _)| out)
    }

    pub fn encode_traced(&self, xs: &[Vec<f64>]) -> Result<(Vec<Vec<f64>>, BiLstmTrace), NnError> {
        if xs.is_empty() {
            return Err(NnError::Usage("cannot encode an empty sequence".into()));
        }
        if let Some(x) = xs.iter().find(|x| x.len() != self.forward.input()) {
            return Err(NnError::Usage(format!(
                "input width {} does not match encoder input {}",
                x.len(),
                self.forward.input()
            )));
        }
        let fwd = self.forward.run(xs);
        let reversed: Vec<Vec<f64>> = xs.iter().rev().cloned().collect();
        let bwd = self.backward.run(&reversed);
        let n = xs.len();
        let out = (0..n)
            .map(|t| {
                let mut v = fwd.steps[t].h.clone();
                v.extend_from_slice(&bwd.steps[n - 1 - t].h);
                v
            })
            .collect();
        Ok((out, BiLstmTrace { fwd, bwd, reversed }))
    }

    /// Returns input gradients given output gradients.
    pub fn backprop(&mut self, xs: &[Vec<f64>], trace: &BiLstmTrace, d_out: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let hf = self.forward.hidden();
        let n = xs.len();
        let dh_f: Vec<Vec<f64>> = d_out.iter().map(|d| d[..hf].to_vec()).collect();
        let dh_b: Vec<Vec<f64>> = (0..n).map(|t| d_out[n - 1 - t][hf..].to_vec()).collect();
        let mut dx = self.forward.backprop(xs, &trace.fwd, &dh_f);
        let dx_b = self.backward.backprop(&trace.reversed, &trace.bwd, &dh_b);
        for t in 0..n {
            super::matrix::axpy(1.0, &dx_b[n - 1 - t], &mut dx[t]);
        }
        dx
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zeroed(input: usize, hidden: usize) -> LstmCell {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut c = LstmCell::new("t", input, hidden, &mut rng);
        for p in c.parameters_mut() {
            p.value.fill(0.0);
        }
        c
    }

    #[test]
    fn forget_bias_starts_at_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let c = LstmCell::new("t", 4, 3, &mut rng);
        let b = c.b.value.data();
        assert_eq!(&b[3..6], &[1.0, 1.0, 1.0]);
        assert!(b[..3].iter().chain(&b[6..]).all(|&x| x == 0.0));
        let bound = (1.0f64 / 3.0).sqrt();
        assert!(c.w.value.data().iter().all(|x| x.abs() <= bound));
    }

    #[test]
    fn zero_parameters_give_zero_state() {
        let c = zeroed(2, 3);
        let (h, cs) = c.step(&[0.0, 0.0], &[0.0; 3], &[0.0; 3]).unwrap();
        assert_eq!(h, vec![0.0; 3]);
        assert_eq!(cs, vec![0.0; 3]);
    }

    #[test]
    fn hand_computed_step() {
        // H = 2, D = 1; every gate pre-activation is set by hand.
        let mut c = zeroed(1, 2);
        // w column: i, i, f, f, g, g, o, o
        let w = [0.5, -0.5, 1.0, 0.0, 2.0, -1.0, 0.0, 1.0];
        c.w.value.data_mut().copy_from_slice(&w);
        c.u.value.set(0, 0, 1.0); // i_0 also sees h_prev[0]
        c.b.value.set(7, 0, -1.0);
        let x = 1.0;
        let h_prev = [0.2, -0.3];
        let c_prev = [0.4, 0.1];
        let s = |v: f64| 1.0 / (1.0 + (-v).exp());
        let i = [s(0.5 + 0.2), s(-0.5)];
        let f = [s(1.0), s(0.0)];
        let g = [(2.0f64).tanh(), (-1.0f64).tanh()];
        let o = [s(0.0), s(1.0 - 1.0)];
        let mut want_c = [0.0; 2];
        let mut want_h = [0.0; 2];
        for j in 0..2 {
            want_c[j] = f[j] * c_prev[j] + i[j] * g[j];
            want_h[j] = o[j] * want_c[j].tanh();
        }
        let (h, cs) = c.step(&[x], &h_prev, &c_prev).unwrap();
        for j in 0..2 {
            assert!((h[j] - want_h[j]).abs() < 1e-14);
            assert!((cs[j] - want_c[j]).abs() < 1e-14);
        }
    }

    #[test]
    fn step_rejects_bad_shapes() {
        let c = zeroed(2, 3);
        assert!(c.step(&[0.0], &[0.0; 3], &[0.0; 3]).is_err());
    }

    #[test]
    fn hidden_state_is_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = LstmCell::new("t", 3, 4, &mut rng);
        let xs: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, -50.0, 50.0]).collect();
        for s in &c.run(&xs).steps {
            assert!(s.h.iter().all(|v| v.abs() < 1.0));
            assert!(s.c.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn single_step_sequence_sees_same_input_both_ways() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut bi = BiLstm::new("b", 2, 3, &mut rng);
        bi.backward = bi.forward.clone();
        let out = bi.encode(&[vec![0.3, -0.7]]).unwrap();
        assert_eq!(out[0][..3], out[0][3..]);
        assert!(bi.encode(&[]).is_err());
    }

    fn swap_halves(v: &[f64]) -> Vec<f64> {
        let h = v.len() / 2;
        v[h..].iter().chain(&v[..h]).copied().collect()
    }

    #[test]
    fn tied_directions_mirror_on_palindromes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut bi = BiLstm::new("b", 2, 3, &mut rng);
        bi.backward = bi.forward.clone();
        let xs = vec![vec![1.0, 0.0], vec![0.5, 0.5], vec![-1.0, 2.0], vec![0.5, 0.5], vec![1.0, 0.0]];
        let out = bi.encode(&xs).unwrap();
        let n = xs.len();
        for t in 0..n {
            assert_eq!(out[t], swap_halves(&out[n - 1 - t]));
        }
    }

    #[test]
    fn reversal_swaps_direction_roles() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let bi = BiLstm::new("b", 2, 3, &mut rng);
        let swapped = BiLstm {
            forward: bi.backward.clone(),
            backward: bi.forward.clone(),
        };
        let xs: Vec<Vec<f64>> = (0..4).map(|i| vec![i as f64 * 0.3, 1.0 - i as f64]).collect();
        let rev: Vec<Vec<f64>> = xs.iter().rev().cloned().collect();
        let a = bi.encode(&xs).unwrap();
        let b = swapped.encode(&rev).unwrap();
        let n = xs.len();
        for t in 0..n {
            assert_eq!(a[t], swap_halves(&b[n - 1 - t]));
        }
    }
}
