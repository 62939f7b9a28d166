#![allow(dead_code)]

use cpfsim_core::exec::Executor;
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

/// Orthonormalized columns of a Gaussian matrix (`rows ≥ cols`).
pub fn isometry(r: &mut ChaCha8Rng, rows: usize, cols: usize) -> CMatrix {
    let g = gaussian_matrix(r, rows, cols);
    let mut q: Vec<Vec<C64>> = Vec::new();
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
    DensityMatrix::from_unnormalized(&g * &g.adjoint()).unwrap()
}

pub fn hermitian(r: &mut ChaCha8Rng, d: usize) -> HermitianMatrix {
    let g = gaussian_matrix(r, d, d);
    HermitianMatrix::new((&g + &g.adjoint()).scale(C64::new(0.5, 0.0))).unwrap()
}

fn labels(n: usize) -> Vec<Label> {
    (0..n as Label).collect()
}

/// Rank-one projective measurement in a random basis; outcome values are
/// random reals.
pub fn projective(r: &mut ChaCha8Rng, d: usize) -> KrausSet {
    let u = unitary(r, d);
    let states: Vec<Vec<C64>> = (0..d).map(|j| u.column(j)).collect();
    let values: Vec<f64> = (0..d).map(|_| r.random_range(-2.0..2.0)).collect();
    KrausSet::projective(&labels(d), &states).unwrap().with_values(&values).unwrap()
}

/// Generic `k`-outcome measurement from the blocks of a random isometry.
pub fn generic_kraus(r: &mut ChaCha8Rng, d: usize, k: usize) -> KrausSet {
    let v = isometry(r, k * d, d);
    let ops = (0..k).map(|b| CMatrix::from_fn(d, d, |i, j| v[(b * d + i, j)])).collect();
    let values: Vec<f64> = (0..k).map(|_| r.random_range(-2.0..2.0)).collect();
    KrausSet::with_labels(&labels(k), ops).unwrap().with_values(&values).unwrap()
}

/// Random pure preparation targets for every label of `set`.
pub fn preparation(r: &mut ChaCha8Rng, set: &KrausSet) -> Preparation {
    let d = set.dim();
    let targets = set.labels().into_iter().map(|l| (l, unitary(r, d).column(0))).collect();
    Preparation::new(targets).unwrap()
}

/// Scoped-thread executor with contiguous chunks.
pub struct Threads(pub usize);

impl Executor for Threads {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        let workers = self.0.max(1);
        let chunk = n.div_ceil(workers).max(1);
        let f = &f;
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..n)
                .step_by(chunk)
                .map(|start| s.spawn(move || (start..(start + chunk).min(n)).map(f).collect::<Vec<T>>()))
                .collect();
            handles.into_iter().flat_map(|h| h.join().unwrap()).collect()
        })
    }
}
