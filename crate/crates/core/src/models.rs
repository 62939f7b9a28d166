//! Exactly solvable dephasing models: a qubit coupled to `N` bath spins
//! through `σ_z ⊗ Σ_k g_k σ_z^{(k)}`, and a qubit under a stochastic field
//! `ξ(t) σ_z`.
//!
//! Basis conventions: the system comes first in tensor products, and index
//! 0 is the `σ_z = +1` state (`|+⟩` for the system, `|↑⟩` for bath spins).

use alloc::{format, vec, vec::Vec};
use num_traits::Float;

use crate::cpf::{BipartiteModel, CpfProbabilityTable, MeasurementSchedule, MiddleMeasurement};
use crate::error::{Error, Result};
use crate::measure::{Axis, KrausSet, Label};
use crate::qmat::{pauli, DensityMatrix, HermitianMatrix, C64};
use crate::stochastic::{dephasing_table, NoiseModel, StochasticSystem};

/// Largest bath handled by the dense bipartite path.
pub const MAX_DENSE_BATH: usize = 11;
const NORM_TOL: f64 = 1e-12;
/// Smallest `|c_t|` at which rates are evaluated.
pub const COHERENCE_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct SpinBathParams {
    couplings: Vec<f64>,
    /// `(α_k, β_k)`: amplitudes of `|↑⟩` and `|↓⟩`.
    bath: Vec<(C64, C64)>,
    /// `(a, b)`: amplitudes of `|+⟩` and `|−⟩`.
    system: (C64, C64),
}

impl SpinBathParams {
    pub fn new(couplings: Vec<f64>, bath: Vec<(C64, C64)>, system: (C64, C64)) -> Result<Self> {
        if couplings.len() != bath.len() {
            return Err(Error::Config(format!("{} couplings for {} bath spins", couplings.len(), bath.len())));
        }
        if couplings.iter().any(|g| !g.is_finite()) {
            return Err(Error::Config("couplings must be finite".into()));
        }
        for (k, (alpha, beta)) in bath.iter().enumerate() {
            let norm = alpha.norm_sqr() + beta.norm_sqr();
            if (norm - 1.0).abs() > NORM_TOL {
                return Err(Error::InvalidState(format!("bath spin {k} has norm² {norm}")));
            }
        }
        let norm = system.0.norm_sqr() + system.1.norm_sqr();
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(Error::InvalidState(format!("system state has norm² {norm}")));
        }
        Ok(Self { couplings, bath, system })
    }

    /// `N` identical spins with `g_k = g/√N`.
    pub fn uniform(n: usize, g: f64, alpha: C64, beta: C64, a: C64, b: C64) -> Result<Self> {
        let gk = if n == 0 { 0.0 } else { g / Float::sqrt(n as f64) };
        Self::new(vec![gk; n], vec![(alpha, beta); n], (a, b))
    }

    /// Equal-weight bath, `|α_k|² = |β_k|² = 1/2`, with the system in `|+⟩`.
    pub fn symmetric(n: usize, g: f64) -> Result<Self> {
        let h = C64::new(core::f64::consts::FRAC_1_SQRT_2, 0.0);
        Self::uniform(n, g, h, h, C64::new(1.0, 0.0), C64::new(0.0, 0.0))
    }

    pub fn len(&self) -> usize {
        self.couplings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.couplings.is_empty()
    }

    pub fn couplings(&self) -> &[f64] {
        &self.couplings
    }

    pub fn bath(&self) -> &[(C64, C64)] {
        &self.bath
    }

    pub fn system(&self) -> (C64, C64) {
        self.system
    }

    /// `√(Σ g_k²)`, the scale of the Gaussian short-time decay.
    pub fn effective_coupling(&self) -> f64 {
        Float::sqrt(self.couplings.iter().map(|g| g * g).sum::<f64>())
    }

    /// `|α_k| = |β_k|` for every spin, within 1e-12.
    pub fn is_symmetric(&self) -> bool {
        self.bath.iter().all(|(a, b)| (a.norm_sqr() - b.norm_sqr()).abs() <= NORM_TOL)
    }

    /// `|a| = 1`, `b = 0`: the case with a closed-form table.
    pub fn starts_in_plus(&self) -> bool {
        (self.system.0.norm_sqr() - 1.0).abs() <= NORM_TOL && self.system.1.norm_sqr() <= NORM_TOL
    }
}

/// Dense bipartite model: diagonal `H_T` of dimension `2^{N+1}` and the
/// pure product initial state.
pub fn build_bipartite(params: &SpinBathParams) -> Result<BipartiteModel> {
    let n = params.len();
    if n > MAX_DENSE_BATH {
        let requested = 1usize.checked_shl(n as u32 + 1).unwrap_or(usize::MAX);
        return Err(Error::Capacity { requested, max: 1 << (MAX_DENSE_BATH + 1) });
    }
    let d_e = 1usize << n;
    let d = 2 * d_e;
    let diag: Vec<f64> = (0..d)
        .map(|i| {
            let s = if i < d_e { 1.0 } else { -1.0 };
            let env = i % d_e;
            let field: f64 = params
                .couplings
                .iter()
                .enumerate()
                .map(|(k, g)| if (env >> (n - 1 - k)) & 1 == 0 { *g } else { -*g })
                .sum();
            s * field
        })
        .collect();
    let hamiltonian = HermitianMatrix::from_real_diag(&diag);

    let mut psi = vec![params.system.0, params.system.1];
    for (alpha, beta) in &params.bath {
        psi = psi.iter().flat_map(|c| [c * alpha, c * beta]).collect();
    }
    BipartiteModel::new(2, d_e, hamiltonian, DensityMatrix::pure(&psi)?)
}

/// `c_t = Π_k (|α_k|² e^{+2ig_kt} + |β_k|² e^{−2ig_kt})`. The dense path's
/// `ρ_{+−}(t)/(a b*)` is the complex conjugate of this.
pub fn coherence_product(params: &SpinBathParams, t: f64) -> C64 {
    if t == 0.0 {
        return C64::new(1.0, 0.0);
    }
    params.couplings.iter().zip(&params.bath).fold(C64::new(1.0, 0.0), |c, (g, (alpha, beta))| {
        let (s, co) = Float::sin_cos(2.0 * g * t);
        let (pa, pb) = (alpha.norm_sqr(), beta.norm_sqr());
        c * C64::new((pa + pb) * co, (pa - pb) * s)
    })
}

/// `f(t) = Re c_t`.
pub fn coherence_factor(params: &SpinBathParams, t: f64) -> f64 {
    coherence_product(params, t).re
}

/// `f(t,τ) = [f(t+τ) + f(t−τ)]/2`.
pub fn joint_coherence_factor(params: &SpinBathParams, t: f64, tau: f64) -> f64 {
    0.5 * (coherence_factor(params, t + tau) + coherence_factor(params, t - tau))
}

/// Large-`N` limit `c_t = e^{−2(gt)²}`.
pub fn gaussian_coherence(g: f64, t: f64) -> f64 {
    Float::exp(-2.0 * g * g * t * t)
}

/// `γ(t) + iω(t) = −ċ_t / c_t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DephasingRates {
    pub omega: f64,
    pub gamma: f64,
}

/// Central-difference rates of a coherence function with step `h`.
pub fn dephasing_rates<F: Fn(f64) -> C64>(coherence: F, t: f64, h: f64) -> Result<DephasingRates> {
    let c = coherence(t);
    let modulus = c.norm();
    if !(modulus > COHERENCE_FLOOR) {
        return Err(Error::SingularCoherence { t, modulus });
    }
    let dc = (coherence(t + h) - coherence(t - h)) / (2.0 * h);
    let r = -dc / c;
    Ok(DephasingRates { omega: r.im, gamma: r.re })
}

/// Spin-bath rates with the default step `1e-4/g_eff`.
pub fn spin_bath_rates(params: &SpinBathParams, t: f64) -> Result<DephasingRates> {
    let g = params.effective_coupling();
    let h = if g > 0.0 { 1e-4 / g } else { 1e-4 };
    dephasing_rates(|s| coherence_product(params, s), t, h)
}

fn require_plus(params: &SpinBathParams) -> Result<()> {
    if !params.starts_in_plus() {
        return Err(Error::Config("the closed-form table holds only for a system started in |+⟩ (a = 1, b = 0)".into()));
    }
    Ok(())
}

/// `P(zx|y) = ¼[1 + xy f(t) + zy f(τ) + zx f(t,τ)]` for x̂-basis projective
/// measurements, outcomes ordered `(+1, −1)`.
pub fn cpf_prob_spin_analytic(params: &SpinBathParams, t: f64, tau: f64, y: Label) -> Result<CpfProbabilityTable> {
    require_plus(params)?;
    dephasing_table(
        coherence_factor(params, t),
        coherence_factor(params, tau),
        joint_coherence_factor(params, t, tau),
        y,
    )
}

/// `C_pf(t,τ) = f(t,τ) − f(t) f(τ)`.
pub fn cpf_spin_exact(params: &SpinBathParams, t: f64, tau: f64) -> Result<f64> {
    require_plus(params)?;
    Ok(joint_coherence_factor(params, t, tau) - coherence_factor(params, t) * coherence_factor(params, tau))
}

/// `[e^{−2g²(t+τ)²} + e^{−2g²(t−τ)²}]/2 − e^{−2g²(t²+τ²)}`.
pub fn cpf_gaussian_approx(g: f64, t: f64, tau: f64) -> f64 {
    let g2 = g * g;
    let sum = t + tau;
    let diff = t - tau;
    0.5 * (Float::exp(-2.0 * g2 * sum * sum) + Float::exp(-2.0 * g2 * diff * diff))
        - Float::exp(-2.0 * g2 * (t * t + tau * tau))
}

/// Three x̂-basis projective measurements at `0`, `t`, `t + τ`.
pub fn x_schedule(t: f64, tau: f64, y: Label) -> Result<MeasurementSchedule> {
    let x = KrausSet::qubit_axis(Axis::X);
    MeasurementSchedule::three_point(x.clone(), MiddleMeasurement::plain(x.clone()), x, t, tau, y)
}

/// `n` intermediate x̂-measurements, all intervals given explicitly.
pub fn x_schedule_n(intervals: &[f64], y: &[Label]) -> Result<MeasurementSchedule> {
    let x = KrausSet::qubit_axis(Axis::X);
    let mut times = Vec::with_capacity(intervals.len() + 1);
    times.push(0.0);
    for dt in intervals {
        times.push(times[times.len() - 1] + dt);
    }
    let middle = y.iter().map(|_| MiddleMeasurement::plain(x.clone())).collect();
    MeasurementSchedule::new(x.clone(), middle, x, times, y.to_vec())
}

/// Qubit under `H(t) = ξ(t) σ_z` started in `|+⟩`, measured along x̂.
#[derive(Debug, Clone)]
pub struct StochasticDephasing {
    pub system: StochasticSystem,
    pub noise: NoiseModel,
}

impl StochasticDephasing {
    pub fn schedule(&self, t: f64, tau: f64, y: Label) -> Result<MeasurementSchedule> {
        x_schedule(t, tau, y)
    }
}

pub fn stochastic_dephasing_model(noise: NoiseModel) -> Result<StochasticDephasing> {
    let generator = HermitianMatrix::new(pauli::sigma_z())?;
    let rho0 = DensityMatrix::pure(&pauli::z_state(1))?;
    Ok(StochasticDephasing { system: StochasticSystem::new(generator, rho0)?, noise })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qmat::{partial_trace, Subsystem};

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn single_spin_hamiltonian() {
        let p = SpinBathParams::uniform(1, 0.7, c(1.0, 0.0), c(0.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)).unwrap();
        let m = build_bipartite(&p).unwrap();
        let h = m.hamiltonian();
        for (i, v) in [0.7, -0.7, -0.7, 0.7].iter().enumerate() {
            assert_eq!(h[(i, i)], c(*v, 0.0));
        }
        assert!(h.is_diagonal());
    }

    #[test]
    fn bath_dimensions_and_capacity() {
        let p = SpinBathParams::symmetric(3, 1.0).unwrap();
        let m = build_bipartite(&p).unwrap();
        assert_eq!(m.dims(), (2, 8));
        assert!((m.initial_state().trace().re - 1.0).abs() < 1e-14);
        assert!((m.initial_state().purity() - 1.0).abs() < 1e-14);
        let big = SpinBathParams::symmetric(12, 1.0).unwrap();
        assert!(matches!(build_bipartite(&big), Err(Error::Capacity { .. })));
    }

    #[test]
    fn coherence_matches_dense_reduced_state() {
        let p = SpinBathParams::new(
            vec![0.3, -1.1, 0.8],
            vec![(c(0.6, 0.0), c(0.0, 0.8)), (c(0.28, 0.96), c(0.0, 0.0)), (c(0.5, 0.5), c(0.5, -0.5))],
            (c(0.6, 0.0), c(0.0, 0.8)),
        )
        .unwrap();
        let m = build_bipartite(&p).unwrap();
        let (a, b) = p.system();
        for t in [0.0, 0.4, 1.3] {
            let u = m.propagator().unitary(t);
            let rho = DensityMatrix::new(m.initial_state().conjugated_by(&u).unwrap()).unwrap();
            let rs = partial_trace(&rho, m.dims(), Subsystem::System).unwrap();
            let dense = rs[(0, 1)] / (a * b.conj());
            assert!((dense - coherence_product(&p, t).conj()).norm() < 1e-12, "t={t}");
        }
    }

    #[test]
    fn pure_branch_has_unit_modulus() {
        let p = SpinBathParams::uniform(5, 1.0, c(1.0, 0.0), c(0.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)).unwrap();
        for t in [0.1, 1.0, 7.0] {
            assert!((coherence_product(&p, t).norm() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn symmetric_bath_is_cos_power() {
        let p = SpinBathParams::symmetric(50, 1.0).unwrap();
        for t in [0.2, 0.5, 1.0] {
            let x: f64 = 2.0 * t / 50f64.sqrt();
            let expect = x.cos().powi(50);
            assert!((coherence_factor(&p, t) - expect).abs() < 1e-13);
            assert!(coherence_product(&p, t).im.abs() < 1e-15);
        }
    }

    #[test]
    fn rates_of_gaussian_limit() {
        let g = 1.0;
        for t in [0.1, 0.5, 1.0] {
            let r = dephasing_rates(|s| c(gaussian_coherence(g, s), 0.0), t, 1e-4).unwrap();
            assert!(r.omega.abs() < 1e-14);
            assert!((r.gamma - 4.0 * g * g * t).abs() < 1e-6);
        }
    }

    #[test]
    fn rates_singular_at_coherence_zero() {
        let p = SpinBathParams::symmetric(1, 1.0).unwrap();
        let t0 = core::f64::consts::FRAC_PI_4;
        assert!(matches!(spin_bath_rates(&p, t0), Err(Error::SingularCoherence { .. })));
    }

    #[test]
    fn analytic_table_boundaries() {
        let p = SpinBathParams::symmetric(8, 1.0).unwrap();
        let t = cpf_prob_spin_analytic(&p, 0.0, 0.0, 1).unwrap();
        for z in [1, -1] {
            for x in [1, -1] {
                let expect = 0.25 * (1.0 + x as f64) * (1.0 + z as f64);
                assert_eq!(t.get(z, x).unwrap(), expect);
            }
        }
        assert_eq!(cpf_spin_exact(&p, 0.7, 0.0).unwrap(), 0.0);
        assert_eq!(cpf_spin_exact(&p, 0.0, 0.7).unwrap(), 0.0);
    }

    #[test]
    fn analytic_table_refuses_other_initial_states() {
        let h = core::f64::consts::FRAC_1_SQRT_2;
        let p = SpinBathParams::uniform(2, 1.0, c(h, 0.0), c(h, 0.0), c(h, 0.0), c(h, 0.0)).unwrap();
        assert!(cpf_prob_spin_analytic(&p, 0.5, 0.5, 1).is_err());
    }

    #[test]
    fn gaussian_approx_golden() {
        // (e^{-8} + 1)/2 − e^{-4}
        let expect = 0.5 * (0.000_335_462_627_902_511_8 + 1.0) - 0.018_315_638_888_734_18;
        assert!((cpf_gaussian_approx(1.0, 1.0, 1.0) - expect).abs() < 1e-15);
        assert!((expect - 0.4819).abs() < 5e-5);
        assert_eq!(cpf_gaussian_approx(1.0, 1.3, 0.0), 0.0);
    }
}
