//! Classical sequence models and their CPF correlations by exhaustive
//! enumeration.

use alloc::{format, vec, vec::Vec};

use crate::error::{Error, Result};
use crate::measure::ZERO_PROBABILITY;

const ROW_SUM_TOL: f64 = 1e-12;

/// Joint law of a finite sequence of observations `s₀ → s₁ → … → s_{L−1}`
/// over a common alphabet.
pub trait SequenceModel {
    fn alphabet(&self) -> usize;
    fn length(&self) -> usize;
    fn sequence_probability(&self, seq: &[usize]) -> f64;
}

/// Markov chain with possibly different kernels between observation times.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassicalChain {
    states: usize,
    initial: Vec<f64>,
    /// Row-stochastic `states × states` matrices, row-major.
    kernels: Vec<Vec<f64>>,
}

impl ClassicalChain {
    pub fn new(initial: Vec<f64>, kernels: Vec<Vec<f64>>) -> Result<Self> {
        let states = initial.len();
        if states == 0 {
            return Err(Error::Config("chain needs at least one state".into()));
        }
        check_distribution(&initial, "initial distribution")?;
        for (k, kernel) in kernels.iter().enumerate() {
            if kernel.len() != states * states {
                return Err(Error::Shape(format!("kernel {k} is not {states}x{states}")));
            }
            for row in kernel.chunks(states) {
                check_distribution(row, "kernel row")?;
            }
        }
        Ok(Self { states, initial, kernels })
    }

    /// Time-homogeneous chain observed after the given numbers of steps of
    /// `kernel` (zero steps is the identity).
    pub fn homogeneous(initial: Vec<f64>, kernel: &[f64], steps: &[usize]) -> Result<Self> {
        let states = initial.len();
        if kernel.len() != states * states {
            return Err(Error::Shape(format!("kernel is not {states}x{states}")));
        }
        let kernels = steps.iter().map(|&s| matrix_power(kernel, states, s)).collect();
        Self::new(initial, kernels)
    }

    pub fn states(&self) -> usize {
        self.states
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn kernels(&self) -> &[Vec<f64>] {
        &self.kernels
    }
}

impl SequenceModel for ClassicalChain {
    fn alphabet(&self) -> usize {
        self.states
    }

    fn length(&self) -> usize {
        self.kernels.len() + 1
    }

    fn sequence_probability(&self, seq: &[usize]) -> f64 {
        debug_assert_eq!(seq.len(), self.length());
        let mut p = self.initial[seq[0]];
        for (k, w) in seq.windows(2).enumerate() {
            p *= self.kernels[k][w[0] * self.states + w[1]];
        }
        p
    }
}

/// Noisy observations of an unobserved Markov chain; the observed sequence
/// is in general not Markovian.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenMarkovChain {
    hidden: ClassicalChain,
    observed: usize,
    /// `hidden × observed` emission probabilities, row-major.
    emission: Vec<f64>,
}

impl HiddenMarkovChain {
    pub fn new(hidden: ClassicalChain, observed: usize, emission: Vec<f64>) -> Result<Self> {
        if observed == 0 || emission.len() != hidden.states * observed {
            return Err(Error::Shape(format!("emission matrix must be {}x{observed}", hidden.states)));
        }
        for row in emission.chunks(observed) {
            check_distribution(row, "emission row")?;
        }
        Ok(Self { hidden, observed, emission })
    }

    pub fn hidden(&self) -> &ClassicalChain {
        &self.hidden
    }

    pub fn emission(&self, hidden: usize, observed: usize) -> f64 {
        self.emission[hidden * self.observed + observed]
    }
}

impl SequenceModel for HiddenMarkovChain {
    fn alphabet(&self) -> usize {
        self.observed
    }

    fn length(&self) -> usize {
        self.hidden.length()
    }

    /// Forward recursion over hidden states.
    fn sequence_probability(&self, seq: &[usize]) -> f64 {
        let h = self.hidden.states;
        let mut alpha: Vec<f64> = (0..h).map(|s| self.hidden.initial[s] * self.emission(s, seq[0])).collect();
        for (k, &obs) in seq.iter().enumerate().skip(1) {
            let kernel = &self.hidden.kernels[k - 1];
            alpha = (0..h)
                .map(|j| (0..h).map(|i| alpha[i] * kernel[i * h + j]).sum::<f64>() * self.emission(j, obs))
                .collect();
        }
        alpha.iter().sum()
    }
}

/// `P(z, x | y₁…yₙ)` (z-major) and `P(y₁…yₙ)` for a sequence of length
/// `n + 2`.
pub fn classical_table<M: SequenceModel>(model: &M, y: &[usize]) -> Result<(Vec<f64>, f64)> {
    let a = model.alphabet();
    if model.length() != y.len() + 2 {
        return Err(Error::Config(format!(
            "{} conditioning values for a sequence of length {}",
            y.len(),
            model.length()
        )));
    }
    if y.iter().any(|&s| s >= a) {
        return Err(Error::Config("conditioning value outside the alphabet".into()));
    }
    let mut seq = vec![0; model.length()];
    seq[1..=y.len()].copy_from_slice(y);
    let last = seq.len() - 1;
    let mut joint = vec![0.0; a * a];
    for z in 0..a {
        for x in 0..a {
            seq[0] = x;
            seq[last] = z;
            joint[z * a + x] = model.sequence_probability(&seq);
        }
    }
    let p_y: f64 = joint.iter().sum();
    if !(p_y > ZERO_PROBABILITY) {
        return Err(Error::DegeneratePostSelection { weight: p_y });
    }
    Ok((joint.into_iter().map(|p| p / p_y).collect(), p_y))
}

/// `n`-th order CPF correlation, `n = y.len()`, by exact enumeration.
pub fn classical_cpf<M: SequenceModel>(model: &M, observables: &[f64], y: &[usize]) -> Result<f64> {
    let a = model.alphabet();
    if observables.len() != a {
        return Err(Error::Config(format!("{} observable values for alphabet of size {a}", observables.len())));
    }
    let (table, _) = classical_table(model, y)?;
    let pz: Vec<f64> = (0..a).map(|z| (0..a).map(|x| table[z * a + x]).sum()).collect();
    let px: Vec<f64> = (0..a).map(|x| (0..a).map(|z| table[z * a + x]).sum()).collect();
    let mut c = 0.0;
    for z in 0..a {
        for x in 0..a {
            c += (table[z * a + x] - pz[z] * px[x]) * observables[z] * observables[x];
        }
    }
    Ok(c)
}

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    if p.iter().any(|&v| !(v >= 0.0) || !v.is_finite()) {
        return Err(Error::Config(format!("{what} has a negative or non-finite entry")));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > ROW_SUM_TOL {
        return Err(Error::Config(format!("{what} sums to {total}")));
    }
    Ok(())
}

fn matrix_power(m: &[f64], n: usize, power: usize) -> Vec<f64> {
    let mut out: Vec<f64> = (0..n * n).map(|k| if k / n == k % n { 1.0 } else { 0.0 }).collect();
    for _ in 0..power {
        out = (0..n * n)
            .map(|k| {
                let (i, j) = (k / n, k % n);
                (0..n).map(|l| out[i * n + l] * m[l * n + j]).sum()
            })
            .collect();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symmetric_two_state_chain_is_cpf_independent() {
        let k = [0.8, 0.2, 0.2, 0.8];
        let chain = ClassicalChain::homogeneous(vec![0.5, 0.5], &k, &[1, 1]).unwrap();
        for y in 0..2 {
            assert!(classical_cpf(&chain, &[1.0, -1.0], &[y]).unwrap().abs() < 1e-15);
        }
    }

    #[test]
    fn iid_sequence_vanishes_at_every_order() {
        let row = [0.2, 0.5, 0.3];
        let kernel: Vec<f64> = row.iter().cycle().take(9).copied().collect();
        for n in 1..=3 {
            let chain = ClassicalChain::new(row.to_vec(), vec![kernel.clone(); n + 1]).unwrap();
            let y: Vec<usize> = (0..n).map(|i| i % 3).collect();
            assert!(classical_cpf(&chain, &[1.0, 0.0, -2.0], &y).unwrap().abs() < 1e-15);
        }
    }

    #[test]
    fn hidden_chain_forward_matches_enumeration() {
        let hidden = ClassicalChain::homogeneous(vec![0.7, 0.3], &[0.9, 0.1, 0.25, 0.75], &[1, 2, 1]).unwrap();
        let hmm = HiddenMarkovChain::new(hidden.clone(), 2, vec![0.85, 0.15, 0.3, 0.7]).unwrap();
        let mut total = 0.0;
        for code in 0..16usize {
            let obs: Vec<usize> = (0..4).map(|b| (code >> b) & 1).collect();
            let mut brute = 0.0;
            for hcode in 0..16usize {
                let h: Vec<usize> = (0..4).map(|b| (hcode >> b) & 1).collect();
                let mut p = hidden.sequence_probability(&h);
                for (hs, os) in h.iter().zip(&obs) {
                    p *= hmm.emission(*hs, *os);
                }
                brute += p;
            }
            let fwd = hmm.sequence_probability(&obs);
            assert!((fwd - brute).abs() < 1e-15);
            total += fwd;
        }
        assert!((total - 1.0).abs() < 1e-14);
    }

    #[test]
    fn invalid_chains_rejected() {
        assert!(ClassicalChain::new(vec![0.5, 0.6], vec![]).is_err());
        assert!(ClassicalChain::new(vec![0.5, 0.5], vec![vec![0.5, 0.5, 0.5]]).is_err());
        assert!(ClassicalChain::new(vec![0.5, 0.5], vec![vec![1.5, -0.5, 0.5, 0.5]]).is_err());
    }

    #[test]
    fn impossible_conditioning_is_degenerate() {
        let chain = ClassicalChain::homogeneous(vec![1.0, 0.0], &[1.0, 0.0, 0.0, 1.0], &[1, 1]).unwrap();
        assert!(matches!(classical_cpf(&chain, &[1.0, -1.0], &[1]), Err(Error::DegeneratePostSelection { .. })));
    }
}
