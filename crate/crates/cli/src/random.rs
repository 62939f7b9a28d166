//! Random states, operators and measurement chains for the validation suites.

use cpfsim_core::cpf::{Channel, MeasurementSchedule, MiddleMeasurement};
use cpfsim_core::measure::{KrausSet, Label, Preparation};
use cpfsim_core::qmat::{CMatrix, DensityMatrix, HermitianMatrix, C64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> CMatrix {
    CMatrix::from_fn(rows, cols, |_, _| C64::new(r.sample(StandardNormal), r.sample(StandardNormal)))
}

/// Gram-Schmidt on the columns of a Gaussian matrix (`rows ≥ cols`).
pub fn isometry(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> CMatrix {
    let g = gaussian_matrix(r, rows, cols);
    let mut q: Vec<Vec<C64>> = Vec::with_capacity(cols);
    for j in 0..cols {
        let mut v = g.column(j);
        for u in &q {
            let dot: C64 = u.iter().zip(&v).map(|(a, b)| a.conj() * b).sum();
            for (vi, ui) in v.iter_mut().zip(u) {
                *vi -= dot * ui;
            }
        }
        let n = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        q.push(v.into_iter().map(|z| z / n).collect());
    }
    CMatrix::from_fn(rows, cols, |i, j| q[j][i])
}

pub fn unitary(r: &mut ChaCha8Rng, d: usize) -> CMatrix {
    isometry(r, d, d)
}

pub fn density(r: &mut ChaCha8Rng, d: usize) -> DensityMatrix {
    let g = gaussian_matrix(r, d, d);
    DensityMatrix::from_unnormalized(&g * &g.adjoint()).expect("Gram matrix is a state")
}

pub fn hermitian(r: &mut ChaCha8Rng, d: usize) -> HermitianMatrix {
    let g = gaussian_matrix(r, d, d);
    HermitianMatrix::new((&g + &g.adjoint()).scale(C64::new(0.5, 0.0))).expect("symmetrized")
}

fn labels(n: usize) -> Vec<Label> {
    (0..n as Label).collect()
}

fn values(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.random_range(-2.0..2.0)).collect()
}

/// Rank-one projective read in a random basis with random outcome values.
pub fn projective(r: &mut ChaCha8Rng, d: usize) -> KrausSet {
    let u = unitary(r, d);
    let states: Vec<Vec<C64>> = (0..d).map(|j| u.column(j)).collect();
    let vals = values(r, d);
    KrausSet::projective(&labels(d), &states).and_then(|s| s.with_values(&vals)).expect("orthonormal basis")
}

/// `k` outcome measurement cut from a random isometry.
pub fn generic_kraus(r: &mut ChaCha8Rng, d: usize, k: usize) -> KrausSet {
    let v = isometry(r, k * d, d);
    let ops = (0..k).map(|b| CMatrix::from_fn(d, d, |i, j| v[(b * d + i, j)])).collect();
    let vals = values(r, k);
    KrausSet::with_labels(&labels(k), ops).and_then(|s| s.with_values(&vals)).expect("isometry blocks are complete")
}

pub fn preparation(r: &mut ChaCha8Rng, set: &KrausSet) -> Preparation {
    let d = set.dim();
    let targets = set.labels().into_iter().map(|l| (l, unitary(r, d).column(0))).collect();
    Preparation::new(targets).expect("random targets")
}

pub fn channel(r: &mut ChaCha8Rng, d: usize) -> Channel {
    let k = r.random_range(1..=3);
    let v = isometry(r, k * d, d);
    Channel::new((0..k).map(|b| CMatrix::from_fn(d, d, |i, j| v[(b * d + i, j)])).collect()).expect("complete")
}

/// Rank-one read, or a generic read followed by a causal break.
pub fn refreshing_middle(r: &mut ChaCha8Rng, d: usize) -> MiddleMeasurement {
    if r.random_bool(0.5) {
        MiddleMeasurement::plain(projective(r, d))
    } else {
        let k = r.random_range(2..=3);
        let set = generic_kraus(r, d, k);
        let prep = preparation(r, &set);
        MiddleMeasurement::prepared(set, prep).expect("matching dimensions")
    }
}

/// Generic first and last reads around `n` refreshing intermediate reads,
/// conditioned on their first outcomes.
pub fn refreshing_schedule(r: &mut ChaCha8Rng, d: usize, n: usize) -> MeasurementSchedule {
    let (kf, kl) = (r.random_range(2..=3), r.random_range(2..=3));
    let first = generic_kraus(r, d, kf);
    let last = generic_kraus(r, d, kl);
    let middle: Vec<MiddleMeasurement> = (0..n).map(|_| refreshing_middle(r, d)).collect();
    let mut times = vec![0.0];
    for _ in 0..=n {
        let dt = if r.random_bool(0.1) { 0.0 } else { r.random_range(0.0..3.0) };
        times.push(times[times.len() - 1] + dt);
    }
    let y = middle.iter().map(|m| m.set.labels()[0]).collect();
    MeasurementSchedule::new(first, middle, last, times, y).expect("consistent schedule")
}

/// Row-stochastic `k × k` matrix, row-major, and a distribution.
pub fn markov_chain(r: &mut ChaCha8Rng, k: usize) -> (Vec<f64>, Vec<f64>) {
    let dist = |r: &mut ChaCha8Rng| {
        let w: Vec<f64> = (0..k).map(|_| r.random_range(0.05..1.0)).collect();
        let s: f64 = w.iter().sum();
        w.into_iter().map(|v| v / s).collect::<Vec<f64>>()
    };
    let initial = dist(r);
    let kernel = (0..k).flat_map(|_| dist(r)).collect();
    (initial, kernel)
}
