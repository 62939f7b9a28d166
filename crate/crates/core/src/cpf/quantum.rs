//! Exact quantum CPF tables by outcome enumeration.

use num_traits::Float;
use alloc::{format, vec, vec::Vec};

use super::{CpfProbabilityTable, MeasurementSchedule};
use crate::error::{Error, Result};
use crate::measure::{EffectOperator, ZERO_PROBABILITY};
use crate::qmat::{
    kron, partial_trace_op, CMatrix, DensityMatrix, HermitianMatrix, Subsystem, UnitaryPropagator, C64,
    DEFAULT_MAX_DIM,
};

/// Trace-preserving map in Kraus form.
#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    kraus: Vec<CMatrix>,
}

impl Channel {
    pub fn new(kraus: Vec<CMatrix>) -> Result<Self> {
        let d = kraus.first().map(CMatrix::cols).ok_or_else(|| Error::Config("channel needs Kraus operators".into()))?;
        if kraus.iter().any(|k| k.cols() != d || k.rows() != d) {
            return Err(Error::Shape("Kraus operators must be square and of equal dimension".into()));
        }
        let mut sum = CMatrix::zeros(d, d);
        for k in &kraus {
            sum = &sum + &(&k.adjoint() * k);
        }
        let residual = sum.max_abs_diff(&CMatrix::identity(d));
        if residual > 1e-10 {
            return Err(Error::Completeness { residual });
        }
        Ok(Self { kraus })
    }

    pub fn identity(d: usize) -> Self {
        Self { kraus: vec![CMatrix::identity(d)] }
    }

    pub fn unitary(u: CMatrix) -> Result<Self> {
        Self::new(vec![u])
    }

    /// `ρ ↦ Tr(ρ) I/d`.
    pub fn depolarizing(d: usize) -> Self {
        let s = C64::new(1.0 / Float::sqrt(d as f64), 0.0);
        let mut kraus = Vec::with_capacity(d * d);
        for i in 0..d {
            for j in 0..d {
                let mut k = CMatrix::zeros(d, d);
                k[(i, j)] = s;
                kraus.push(k);
            }
        }
        Self { kraus }
    }

    pub fn dim(&self) -> usize {
        self.kraus[0].rows()
    }

    pub fn apply(&self, op: &CMatrix) -> Result<CMatrix> {
        let mut out = CMatrix::zeros(self.dim(), self.dim());
        for k in &self.kraus {
            out = &out + &op.conjugated_by(k)?;
        }
        Ok(out)
    }
}

fn table_from_weights(
    sched: &MeasurementSchedule,
    weights: &[f64],
    conditional_z: &[Vec<f64>],
) -> Result<CpfProbabilityTable> {
    let total: f64 = weights.iter().sum();
    if !(total > ZERO_PROBABILITY) {
        return Err(Error::DegeneratePostSelection { weight: total });
    }
    let nz = sched.last().len();
    let nx = weights.len();
    let mut probs = vec![0.0; nz * nx];
    for ix in 0..nx {
        let px = weights[ix] / total;
        for iz in 0..nz {
            probs[iz * nx + ix] = conditional_z[ix][iz] * px;
        }
    }
    CpfProbabilityTable::new(
        sched.conditioning().to_vec(),
        sched.last().outcomes().to_vec(),
        sched.first().outcomes().to_vec(),
        probs,
    )
}

fn z_probabilities(sched: &MeasurementSchedule, system_state: &CMatrix) -> Result<Vec<f64>> {
    sched
        .last()
        .operators()
        .iter()
        .map(|op| Ok(system_state.conjugated_by(op)?.trace().re))
        .collect()
}

/// Measurement-only chain (no evolution between measurements).
pub fn cpf_table_isolated(rho0: &DensityMatrix, sched: &MeasurementSchedule) -> Result<CpfProbabilityTable> {
    let id = Channel::identity(rho0.dim());
    cpf_table_markov(rho0, sched, &id, &id)
}

/// Three-measurement chain with outcome-independent propagators `prop1`
/// over `(t_x, t_y)` and `prop2` over `(t_y, t_z)`.
pub fn cpf_table_markov(
    rho0: &DensityMatrix,
    sched: &MeasurementSchedule,
    prop1: &Channel,
    prop2: &Channel,
) -> Result<CpfProbabilityTable> {
    if sched.order() != 1 {
        return Err(Error::Config("Markovian propagator path needs exactly one intermediate measurement".into()));
    }
    let d = rho0.dim();
    if sched.dim() != d || prop1.dim() != d || prop2.dim() != d {
        return Err(Error::Shape("state, measurements and propagators must share a dimension".into()));
    }
    let middle = &sched.middle()[0];
    let y = sched.conditioning()[0];
    let omega_y = middle.set.operator(y)?;
    let refreshed = middle.refreshed_state(y)?.map(|psi| CMatrix::outer(&psi, &psi));

    let mut weights = Vec::with_capacity(sched.first().len());
    let mut conditional_z = Vec::with_capacity(sched.first().len());
    for omega_x in sched.first().operators() {
        let evolved = prop1.apply(&rho0.conjugated_by(omega_x)?)?;
        let post = evolved.conjugated_by(omega_y)?;
        let w = post.trace().re;
        weights.push(w);
        if w <= ZERO_PROBABILITY {
            conditional_z.push(vec![0.0; sched.last().len()]);
            continue;
        }
        let rho_y = match &refreshed {
            Some(r) => r.clone(),
            None => post.scale(C64::new(1.0 / w, 0.0)),
        };
        conditional_z.push(z_probabilities(sched, &prop2.apply(&rho_y)?)?);
    }
    table_from_weights(sched, &weights, &conditional_z)
}

/// System–environment model driven by a total Hamiltonian.
#[derive(Debug, Clone)]
pub struct BipartiteModel {
    d_s: usize,
    d_e: usize,
    hamiltonian: HermitianMatrix,
    rho0: DensityMatrix,
    propagator: UnitaryPropagator,
}

impl BipartiteModel {
    pub fn new(d_s: usize, d_e: usize, hamiltonian: HermitianMatrix, rho0: DensityMatrix) -> Result<Self> {
        let d = d_s.checked_mul(d_e).unwrap_or(usize::MAX);
        if d > DEFAULT_MAX_DIM {
            return Err(Error::Capacity { requested: d, max: DEFAULT_MAX_DIM });
        }
        if hamiltonian.dim() != d || rho0.dim() != d {
            return Err(Error::Shape(format!(
                "Hamiltonian ({}) and initial state ({}) must act on {d_s}x{d_e}",
                hamiltonian.dim(),
                rho0.dim()
            )));
        }
        let propagator = UnitaryPropagator::new(&hamiltonian)?;
        Ok(Self { d_s, d_e, hamiltonian, rho0, propagator })
    }

    /// Model with the product initial state `ρ_s ⊗ σ_e`.
    pub fn with_product_state(hamiltonian: HermitianMatrix, rho_s: &DensityMatrix, sigma_e: &DensityMatrix) -> Result<Self> {
        let joint = DensityMatrix::new(kron(rho_s, sigma_e)?)?;
        Self::new(rho_s.dim(), sigma_e.dim(), hamiltonian, joint)
    }

    /// `H_s ⊗ I + I ⊗ H_e`.
    pub fn non_interacting_hamiltonian(h_s: &HermitianMatrix, h_e: &HermitianMatrix) -> Result<HermitianMatrix> {
        let a = kron(h_s, &CMatrix::identity(h_e.dim()))?;
        let b = kron(&CMatrix::identity(h_s.dim()), h_e)?;
        HermitianMatrix::new(&a + &b)
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.d_s, self.d_e)
    }

    pub fn hamiltonian(&self) -> &HermitianMatrix {
        &self.hamiltonian
    }

    pub fn initial_state(&self) -> &DensityMatrix {
        &self.rho0
    }

    pub fn propagator(&self) -> &UnitaryPropagator {
        &self.propagator
    }
}

/// Memoized `U(Δ)` for the handful of distinct intervals in a schedule.
struct UnitaryCache<'a> {
    propagator: &'a UnitaryPropagator,
    entries: Vec<(f64, CMatrix)>,
}

impl<'a> UnitaryCache<'a> {
    fn new(propagator: &'a UnitaryPropagator) -> Self {
        Self { propagator, entries: Vec::new() }
    }

    fn get(&mut self, dt: f64) -> &CMatrix {
        if let Some(i) = self.entries.iter().position(|(t, _)| *t == dt) {
            return &self.entries[i].1;
        }
        self.entries.push((dt, self.propagator.unitary(dt)));
        &self.entries[self.entries.len() - 1].1
    }

    fn evolve(&mut self, dt: f64, op: &CMatrix) -> Result<CMatrix> {
        if dt == 0.0 {
            return Ok(op.clone());
        }
        op.conjugated_by(self.get(dt))
    }
}

/// Unnormalized joint state right after the last intermediate measurement,
/// for first outcome index `ix`.
fn forward_to_last_middle(
    model: &BipartiteModel,
    sched: &MeasurementSchedule,
    cache: &mut UnitaryCache<'_>,
    lifted_x: &CMatrix,
    lifted_y: &[CMatrix],
) -> Result<CMatrix> {
    let intervals = sched.intervals();
    let mut state = model.rho0.conjugated_by(lifted_x)?;
    state = cache.evolve(intervals[0], &state)?;
    for (k, omega) in lifted_y.iter().enumerate() {
        state = state.conjugated_by(omega)?;
        if k + 1 < lifted_y.len() {
            state = cache.evolve(intervals[k + 1], &state)?;
        }
    }
    Ok(state)
}

fn lifted_middle(model: &BipartiteModel, sched: &MeasurementSchedule) -> Result<Vec<CMatrix>> {
    let id = CMatrix::identity(model.d_e);
    sched
        .middle()
        .iter()
        .zip(sched.conditioning())
        .map(|(m, &y)| kron(m.set.operator(y)?, &id))
        .collect()
}

fn check_schedule(model: &BipartiteModel, sched: &MeasurementSchedule) -> Result<()> {
    if sched.dim() != model.d_s {
        return Err(Error::Shape(format!(
            "measurements act on dimension {} but the system has dimension {}",
            sched.dim(),
            model.d_s
        )));
    }
    Ok(())
}

/// `P(z, x | y₁…yₙ)` for a bipartite model, any `n ≥ 1`.
///
/// The chain is propagated forward outcome by outcome. After `yₙ` the joint
/// state becomes `ρ_{yₙ} ⊗ σ_e` whenever the outcome leaves a past-independent
/// system state (rank-one operator or preparation); otherwise the
/// post-measurement joint state is carried on unchanged.
pub fn cpf_table_n(model: &BipartiteModel, sched: &MeasurementSchedule) -> Result<CpfProbabilityTable> {
    check_schedule(model, sched)?;
    let n = sched.order();
    let y_last = sched.conditioning()[n - 1];
    let refreshed = sched.middle()[n - 1].refreshed_state(y_last)?.map(|psi| CMatrix::outer(&psi, &psi));
    let lifted_x = sched.first().lifted(model.d_e)?;
    let lifted_y = lifted_middle(model, sched)?;
    let mut cache = UnitaryCache::new(&model.propagator);
    let tau = sched.tau();

    let mut weights = Vec::with_capacity(lifted_x.len());
    let mut conditional_z = Vec::with_capacity(lifted_x.len());
    for omega_x in &lifted_x {
        let state = forward_to_last_middle(model, sched, &mut cache, omega_x, &lifted_y)?;
        let w = state.trace().re;
        weights.push(w);
        if w <= ZERO_PROBABILITY {
            conditional_z.push(vec![0.0; sched.last().len()]);
            continue;
        }
        let inv = C64::new(1.0 / w, 0.0);
        let joint = match &refreshed {
            Some(r) => kron(r, &partial_trace_op(&state, model.dims(), Subsystem::Environment)?.scale(inv))?,
            None => state.scale(inv),
        };
        let later = cache.evolve(tau, &joint)?;
        let system = partial_trace_op(&later, model.dims(), Subsystem::System)?;
        conditional_z.push(z_probabilities(sched, &system)?);
    }
    table_from_weights(sched, &weights, &conditional_z)
}

/// Three-measurement bipartite table.
pub fn cpf_table_bipartite(model: &BipartiteModel, sched: &MeasurementSchedule) -> Result<CpfProbabilityTable> {
    if sched.order() != 1 {
        return Err(Error::Config("bipartite three-measurement path needs exactly one intermediate measurement".into()));
    }
    cpf_table_n(model, sched)
}

/// Environment state `σ_e^{y,x}` right after the last intermediate
/// measurement, conditioned on first outcome `x`.
pub fn env_state(model: &BipartiteModel, sched: &MeasurementSchedule, x: crate::measure::Label) -> Result<DensityMatrix> {
    check_schedule(model, sched)?;
    let ix = sched.first().index_of(x)?;
    let lifted_x = sched.first().lifted(model.d_e)?;
    let lifted_y = lifted_middle(model, sched)?;
    let mut cache = UnitaryCache::new(&model.propagator);
    let state = forward_to_last_middle(model, sched, &mut cache, &lifted_x[ix], &lifted_y)?;
    let w = state.trace().re;
    if w <= ZERO_PROBABILITY {
        return Err(Error::DegeneratePostSelection { weight: w });
    }
    DensityMatrix::from_trusted(partial_trace_op(&state, model.dims(), Subsystem::Environment)?.scale(C64::new(1.0 / w, 0.0)))
}

/// Joint effect operator of the intermediate outcomes, referred to time
/// `t_{y1}`: the nested form
/// `Ω₁† U†(Δ₁) [ Ω₂† U†(Δ₂) [ … Ωₙ†Ωₙ … ] U(Δ₂) Ω₂ ] U(Δ₁) Ω₁`.
pub fn effect_operator_n(model: &BipartiteModel, sched: &MeasurementSchedule) -> Result<EffectOperator> {
    check_schedule(model, sched)?;
    let lifted_y = lifted_middle(model, sched)?;
    let intervals = sched.intervals();
    let mut cache = UnitaryCache::new(&model.propagator);
    let n = lifted_y.len();
    let mut effect = &lifted_y[n - 1].adjoint() * &lifted_y[n - 1];
    for k in (0..n - 1).rev() {
        // Heisenberg step back over (t_{yk}, t_{yk+1}).
        let dt = intervals[k + 1];
        if dt != 0.0 {
            let u = cache.get(dt).clone();
            effect = &(&u.adjoint() * &effect) * &u;
        }
        effect = &(&lifted_y[k].adjoint() * &effect) * &lifted_y[k];
    }
    EffectOperator::new(effect)
}

/// `P(x | y₁…yₙ)` through the effect operator: the backward route to the
/// first-measurement marginal of [`cpf_table_n`].
pub fn retrodict_bipartite(model: &BipartiteModel, sched: &MeasurementSchedule) -> Result<Vec<f64>> {
    let effect = effect_operator_n(model, sched)?;
    let mut cache = UnitaryCache::new(&model.propagator);
    let weights = sched
        .first()
        .lifted(model.d_e)?
        .iter()
        .map(|omega| {
            let s = cache.evolve(sched.t(), &model.rho0.conjugated_by(omega)?)?;
            Ok(effect.as_matrix().trace_product(&s)?.re)
        })
        .collect::<Result<Vec<f64>>>()?;
    let total: f64 = weights.iter().sum();
    if !(total > ZERO_PROBABILITY) {
        return Err(Error::DegeneratePostSelection { weight: total });
    }
    Ok(weights.into_iter().map(|w| w / total).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cpf::MiddleMeasurement;
    use crate::measure::{Axis, KrausSet, Preparation};
    use crate::qmat::pauli;

    fn x_schedule(t: f64, tau: f64, y: i32) -> MeasurementSchedule {
        let x = KrausSet::qubit_axis(Axis::X);
        MeasurementSchedule::three_point(x.clone(), MiddleMeasurement::plain(x.clone()), x, t, tau, y).unwrap()
    }

    #[test]
    fn isolated_x_chain_on_plus() {
        // P(x) = 1/2 and nothing evolves, so x = y = z.
        let rho0 = DensityMatrix::pure(&pauli::z_state(1)).unwrap();
        let table = cpf_table_isolated(&rho0, &x_schedule(0.0, 0.0, 1)).unwrap();
        let expected = [(1, 1, 1.0), (1, -1, 0.0), (-1, 1, 0.0), (-1, -1, 0.0)];
        for (z, x, p) in expected {
            assert!((table.get(z, x).unwrap() - p).abs() < 1e-15, "z={z} x={x}");
        }
        assert!(table.correlation().abs() < 1e-15);
    }

    #[test]
    fn repeated_projective_in_eigenbasis() {
        let z = KrausSet::qubit_axis(Axis::Z);
        let rho0 = DensityMatrix::new(CMatrix::from_real_diag(&[0.3, 0.7])).unwrap();
        for y in [1, -1] {
            let s = MeasurementSchedule::three_point(z.clone(), MiddleMeasurement::plain(z.clone()), z.clone(), 0.0, 0.0, y).unwrap();
            let t = cpf_table_isolated(&rho0, &s).unwrap();
            for zz in [1, -1] {
                for xx in [1, -1] {
                    let expect = if zz == y && xx == y { 1.0 } else { 0.0 };
                    assert!((t.get(zz, xx).unwrap() - expect).abs() < 1e-15);
                }
            }
        }
    }

    #[test]
    fn depolarizing_propagator_gives_uniform_future() {
        let rho0 = DensityMatrix::pure(&pauli::z_state(1)).unwrap();
        let t = cpf_table_markov(&rho0, &x_schedule(1.0, 1.0, -1), &Channel::identity(2), &Channel::depolarizing(2)).unwrap();
        for p in t.p_z() {
            assert!((p - 0.5).abs() < 1e-15);
        }
        assert!(t.correlation().abs() < 1e-15);
    }

    #[test]
    fn identity_propagators_reduce_to_isolated() {
        let rho0 = DensityMatrix::pure(&[C64::new(0.6, 0.0), C64::new(0.0, 0.8)]).unwrap();
        let s = x_schedule(0.3, 0.2, 1);
        let a = cpf_table_isolated(&rho0, &s).unwrap();
        let b = cpf_table_markov(&rho0, &s, &Channel::identity(2), &Channel::identity(2)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn weak_middle_without_preparation_breaks_independence() {
        // Without a causal break ρ_y remembers x; with it the chain factorizes.
        let rho0 = DensityMatrix::pure(&pauli::x_state(1)).unwrap();
        let z = KrausSet::qubit_axis(Axis::Z);
        let weak = KrausSet::weak_qubit(0.35);
        let s = MeasurementSchedule::three_point(z.clone(), MiddleMeasurement::plain(weak.clone()), z.clone(), 0.0, 0.0, 1).unwrap();
        let leaky = cpf_table_isolated(&rho0, &s).unwrap();
        assert!(leaky.correlation().abs() > 1e-3);

        let prep = Preparation::new(vec![(1, pauli::y_state(1)), (-1, pauli::z_state(-1))]).unwrap();
        let s = MeasurementSchedule::three_point(z.clone(), MiddleMeasurement::prepared(weak, prep).unwrap(), z, 0.0, 0.0, 1).unwrap();
        assert!(cpf_table_isolated(&rho0, &s).unwrap().correlation().abs() < 1e-15);
    }

    #[test]
    fn degenerate_post_selection_is_an_error() {
        let z = KrausSet::qubit_axis(Axis::Z);
        let rho0 = DensityMatrix::pure(&pauli::z_state(1)).unwrap();
        let s = MeasurementSchedule::three_point(z.clone(), MiddleMeasurement::plain(z.clone()), z, 0.0, 0.0, -1).unwrap();
        assert!(matches!(cpf_table_isolated(&rho0, &s), Err(Error::DegeneratePostSelection { .. })));
    }

    #[test]
    fn capacity_is_enforced() {
        let h = HermitianMatrix::from_real_diag(&[0.0; 2]);
        let err = BipartiteModel::new(2, 4096, h, DensityMatrix::maximally_mixed(2)).unwrap_err();
        assert!(matches!(err, Error::Capacity { requested: 8192, .. }));
    }
}
