//! Markovian dynamics never produce CPF correlations.

mod common;

use common::*;
use cpfsim_core::cpf::{
    cpf_table_bipartite, cpf_table_isolated, cpf_table_markov, cpf_table_n, BipartiteModel, Channel,
    MeasurementSchedule, MiddleMeasurement,
};
use cpfsim_core::qmat::{kron, DensityMatrix, HermitianMatrix, CMatrix};
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const TOL: f64 = 1e-12;

/// Either a rank-one projective read or a generic measurement followed by
/// a causal break.
fn refreshing_middle(r: &mut ChaCha8Rng, d: usize) -> MiddleMeasurement {
    if r.random_bool(0.5) {
        MiddleMeasurement::plain(projective(r, d))
    } else {
        let k = r.random_range(2..=3);
        let set = generic_kraus(r, d, k);
        let prep = preparation(r, &set);
        MiddleMeasurement::prepared(set, prep).unwrap()
    }
}

fn random_schedule(r: &mut ChaCha8Rng, d: usize, n: usize) -> MeasurementSchedule {
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
    MeasurementSchedule::new(first, middle, last, times, y).unwrap()
}

fn random_channel(r: &mut ChaCha8Rng, d: usize) -> Channel {
    let k = r.random_range(1..=3);
    let v = isometry(r, k * d, d);
    Channel::new((0..k).map(|b| CMatrix::from_fn(d, d, |i, j| v[(b * d + i, j)])).collect()).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn isolated_system(seed in any::<u64>(), d in 2usize..=4) {
        let mut r = rng(seed);
        let rho = density(&mut r, d);
        let sched = random_schedule(&mut r, d, 1);
        match cpf_table_isolated(&rho, &sched) {
            Ok(t) => prop_assert!(t.correlation().abs() <= TOL, "C = {}", t.correlation()),
            Err(e) => {
                let degenerate = matches!(e, cpfsim_core::Error::DegeneratePostSelection { .. });
                prop_assert!(degenerate, "{}", e);
            }
        }
    }

    #[test]
    fn markov_channels(seed in any::<u64>(), d in 2usize..=4) {
        let mut r = rng(seed);
        let rho = density(&mut r, d);
        let sched = random_schedule(&mut r, d, 1);
        let (p1, p2) = (random_channel(&mut r, d), random_channel(&mut r, d));
        if let Ok(t) = cpf_table_markov(&rho, &sched, &p1, &p2) {
            prop_assert!(t.correlation().abs() <= TOL, "C = {}", t.correlation());
        }
    }

    #[test]
    fn non_interacting_bipartite(seed in any::<u64>(), ds in 2usize..=3, de in 1usize..=3, n in 1usize..=3) {
        let mut r = rng(seed);
        let h = BipartiteModel::non_interacting_hamiltonian(&hermitian(&mut r, ds), &hermitian(&mut r, de)).unwrap();
        // Initial system–environment correlations do not survive a refreshing read.
        let rho0 = if r.random_bool(0.5) {
            DensityMatrix::new(kron(&density(&mut r, ds), &density(&mut r, de)).unwrap()).unwrap()
        } else {
            density(&mut r, ds * de)
        };
        let model = BipartiteModel::new(ds, de, h, rho0).unwrap();
        let sched = random_schedule(&mut r, ds, n);
        if let Ok(t) = cpf_table_n(&model, &sched) {
            prop_assert!(t.correlation().abs() <= TOL, "C = {}", t.correlation());
        }
        if n == 1 {
            if let Ok(t) = cpf_table_bipartite(&model, &sched) {
                prop_assert!(t.correlation().abs() <= TOL);
            }
        }
    }

    #[test]
    fn measurement_only_chains_any_order(seed in any::<u64>(), d in 2usize..=3, n in 1usize..=3) {
        let mut r = rng(seed);
        let model = BipartiteModel::new(d, 1, HermitianMatrix::from_real_diag(&vec![0.0; d]), density(&mut r, d)).unwrap();
        let sched = random_schedule(&mut r, d, n);
        if let Ok(t) = cpf_table_n(&model, &sched) {
            prop_assert!(t.correlation().abs() <= TOL, "C = {}", t.correlation());
        }
    }
}
