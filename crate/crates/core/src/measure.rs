//! Generalized measurements: Kraus sets, state update, retrodiction and the
//! causal-break preparation applied after an intermediate measurement.

use num_traits::Float;
use alloc::{format, vec::Vec};

use crate::error::{Error, Result};
use crate::qmat::{
    kron, normalized, partial_trace_op, pauli, CMatrix, DensityMatrix, HermitianMatrix, Subsystem, C64,
};

/// Residual allowed in `Σ Ω†Ω = I`.
pub const COMPLETENESS_TOL: f64 = 1e-10;
/// Probabilities below this are treated as measure-zero branches.
pub const ZERO_PROBABILITY: f64 = 1e-14;

/// Outcome label of a measurement.
pub type Label = i32;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Outcome {
    pub label: Label,
    /// Observable value attached to the outcome.
    pub value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    X,
    Y,
    Z,
}

/// A labeled family of measurement operators `{Ω_j}` with `Σ Ω_j†Ω_j = I`.
#[derive(Debug, Clone, PartialEq)]
pub struct KrausSet {
    outcomes: Vec<Outcome>,
    operators: Vec<CMatrix>,
}

impl KrausSet {
    pub fn new(outcomes: Vec<Outcome>, operators: Vec<CMatrix>) -> Result<Self> {
        if outcomes.is_empty() || outcomes.len() != operators.len() {
            return Err(Error::Config(format!(
                "{} outcomes for {} measurement operators",
                outcomes.len(),
                operators.len()
            )));
        }
        let d = operators[0].rows();
        if operators.iter().any(|op| !op.is_square() || op.rows() != d) {
            return Err(Error::Shape("measurement operators must be square and of equal dimension".into()));
        }
        for (i, a) in outcomes.iter().enumerate() {
            if outcomes[..i].iter().any(|b| b.label == a.label) {
                return Err(Error::Config(format!("duplicate outcome label {}", a.label)));
            }
            if !a.value.is_finite() {
                return Err(Error::Config(format!("observable value of outcome {} is not finite", a.label)));
            }
        }
        let set = Self { outcomes, operators };
        validate(&set)?;
        Ok(set)
    }

    /// Observable values default to the labels themselves.
    pub fn with_labels(labels: &[Label], operators: Vec<CMatrix>) -> Result<Self> {
        let outcomes = labels.iter().map(|&label| Outcome { label, value: label as f64 }).collect();
        Self::new(outcomes, operators)
    }

    /// Rank-one projectors onto the given (normalized on input) states.
    pub fn projective(labels: &[Label], states: &[Vec<C64>]) -> Result<Self> {
        let ops = states
            .iter()
            .map(|s| normalized(s).map(|v| CMatrix::outer(&v, &v)))
            .collect::<Result<Vec<_>>>()?;
        Self::with_labels(labels, ops)
    }

    /// Projective qubit measurement along a Bloch axis, labels `+1, -1`.
    pub fn qubit_axis(axis: Axis) -> Self {
        let state = match axis {
            Axis::X => pauli::x_state,
            Axis::Y => pauli::y_state,
            Axis::Z => pauli::z_state,
        };
        Self::projective(&[1, -1], &[state(1), state(-1)]).expect("Pauli eigenbases are complete")
    }

    /// Two-outcome weak `σ_z` measurement:
    /// `Ω_± = cos θ |±><±| + sin θ |∓><∓|`.
    pub fn weak_qubit(theta: f64) -> Self {
        let (s, c) = Float::sin_cos(theta);
        Self::with_labels(&[1, -1], alloc::vec![CMatrix::from_real_diag(&[c, s]), CMatrix::from_real_diag(&[s, c])])
            .expect("weak measurement is complete")
    }

    /// Replaces the observable values, in outcome order.
    pub fn with_values(mut self, values: &[f64]) -> Result<Self> {
        if values.len() != self.outcomes.len() || values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("one finite observable value per outcome is required".into()));
        }
        for (o, &v) in self.outcomes.iter_mut().zip(values) {
            o.value = v;
        }
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.operators[0].rows()
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    pub fn outcomes(&self) -> &[Outcome] {
        &self.outcomes
    }

    pub fn operators(&self) -> &[CMatrix] {
        &self.operators
    }

    pub fn labels(&self) -> Vec<Label> {
        self.outcomes.iter().map(|o| o.label).collect()
    }

    pub fn values(&self) -> Vec<f64> {
        self.outcomes.iter().map(|o| o.value).collect()
    }

    pub fn index_of(&self, label: Label) -> Result<usize> {
        self.outcomes
            .iter()
            .position(|o| o.label == label)
            .ok_or_else(|| Error::Config(format!("unknown outcome label {label}")))
    }

    pub fn operator(&self, label: Label) -> Result<&CMatrix> {
        self.index_of(label).map(|i| &self.operators[i])
    }

    /// `E_j = Ω_j†Ω_j`.
    pub fn effect(&self, label: Label) -> Result<EffectOperator> {
        let op = self.operator(label)?;
        EffectOperator::new(&op.adjoint() * op)
    }

    /// Operators lifted to `Ω ⊗ I_e`.
    pub fn lifted(&self, d_e: usize) -> Result<Vec<CMatrix>> {
        let id = CMatrix::identity(d_e);
        self.operators.iter().map(|op| kron(op, &id)).collect()
    }

    /// Normalized range vector `|ψ>` when `Ω_label = |ψ><φ|` has rank one.
    pub fn rank_one_range(&self, label: Label) -> Result<Option<Vec<C64>>> {
        let op = self.operator(label)?;
        Ok(rank_one_range(op))
    }
}

pub(crate) fn rank_one_range(op: &CMatrix) -> Option<Vec<C64>> {
    let scale = op.max_abs();
    if scale == 0.0 {
        return None;
    }
    let best = (0..op.cols())
        .max_by(|&a, &b| column_norm(op, a).total_cmp(&column_norm(op, b)))
        .expect("non-empty matrix");
    let psi = normalized(&op.column(best)).ok()?;
    // Ω - |ψ><ψ|Ω vanishes iff every column is parallel to ψ.
    let proj = CMatrix::outer(&psi, &psi);
    let residual = (&proj * op).max_abs_diff(op);
    (residual <= 1e-12 * scale).then_some(psi)
}

fn column_norm(m: &CMatrix, j: usize) -> f64 {
    (0..m.rows()).map(|i| m[(i, j)].norm_sqr()).sum()
}

/// Checks `‖Σ Ω†Ω − I‖_max ≤ 1e-10`.
pub fn validate(set: &KrausSet) -> Result<()> {
    let d = set.dim();
    let mut sum = CMatrix::zeros(d, d);
    for op in &set.operators {
        sum = &sum + &(&op.adjoint() * op);
    }
    let residual = sum.max_abs_diff(&CMatrix::identity(d));
    if residual > COMPLETENESS_TOL {
        return Err(Error::Completeness { residual });
    }
    Ok(())
}

/// Positive operator with spectrum in `[0, 1]` (up to 1e-10).
#[derive(Debug, Clone, PartialEq)]
pub struct EffectOperator(HermitianMatrix);

impl EffectOperator {
    pub fn new(m: CMatrix) -> Result<Self> {
        let h = HermitianMatrix::new(m)?;
        let (min, max) = spectrum_bounds(&h)?;
        if min < -1e-10 || max > 1.0 + 1e-10 {
            return Err(Error::InvalidState(format!("effect spectrum [{min:.3e}, {max:.3e}] leaves [0, 1]")));
        }
        Ok(Self(h))
    }

    pub fn identity(d: usize) -> Self {
        Self(HermitianMatrix::from_real_diag(&alloc::vec![1.0; d]))
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }

    pub fn as_matrix(&self) -> &CMatrix {
        &self.0
    }
}

fn spectrum_bounds(h: &HermitianMatrix) -> Result<(f64, f64)> {
    let vals = h.eigenvalues()?;
    Ok((vals[0], vals[vals.len() - 1]))
}

/// Applies `Ω`, returning the normalized post-measurement state and the
/// outcome probability `Tr[Ω†Ω ρ]`.
pub fn apply(rho: &DensityMatrix, omega: &CMatrix) -> Result<(DensityMatrix, f64)> {
    if omega.cols() != rho.dim() {
        return Err(Error::Shape(format!("{}x{} operator on a {}-level state", omega.rows(), omega.cols(), rho.dim())));
    }
    let unnormalized = rho.conjugated_by(omega)?;
    let prob = unnormalized.trace().re;
    if prob < ZERO_PROBABILITY {
        return Err(Error::ZeroProbabilityOutcome { prob });
    }
    let post = DensityMatrix::from_unnormalized(unnormalized)?;
    Ok((post, prob.min(1.0)))
}

/// Retrodicted distribution `P(x|y)` of the first measurement given a later
/// effect `E_y`, in the outcome order of `first`.
pub fn retrodict(rho0: &DensityMatrix, first: &KrausSet, effect: &EffectOperator) -> Result<Vec<f64>> {
    if first.dim() != rho0.dim() || effect.dim() != rho0.dim() {
        return Err(Error::Shape("state, measurement and effect dimensions differ".into()));
    }
    let weights = first
        .operators()
        .iter()
        .map(|op| Ok(effect.as_matrix().trace_product(&rho0.conjugated_by(op)?)?.re.max(0.0)))
        .collect::<Result<Vec<f64>>>()?;
    let total: f64 = weights.iter().sum();
    if total <= ZERO_PROBABILITY {
        return Err(Error::DegeneratePostSelection { weight: total });
    }
    Ok(weights.into_iter().map(|w| w / total).collect())
}

/// Outcome-conditioned re-preparation: a projective read `{Π_α}` followed
/// by a rotation `R(y|α)` taking `|α>` to the target `|y>`.
#[derive(Debug, Clone, PartialEq)]
pub struct Preparation {
    targets: Vec<(Label, Vec<C64>)>,
    /// Columns are the read basis `|α>`.
    read_basis: CMatrix,
}

impl Preparation {
    /// Targets are normalized here; the read basis defaults to the
    /// computational basis.
    pub fn new(targets: Vec<(Label, Vec<C64>)>) -> Result<Self> {
        let d = targets
            .first()
            .map(|(_, v)| v.len())
            .ok_or_else(|| Error::Config("preparation needs at least one target".into()))?;
        let mut normalized_targets = Vec::with_capacity(targets.len());
        for (i, (label, v)) in targets.iter().enumerate() {
            if v.len() != d {
                return Err(Error::Shape("preparation targets differ in dimension".into()));
            }
            if targets[..i].iter().any(|(l, _)| l == label) {
                return Err(Error::Config(format!("duplicate preparation label {label}")));
            }
            normalized_targets.push((*label, normalized(v)?));
        }
        Ok(Self { targets: normalized_targets, read_basis: CMatrix::identity(d) })
    }

    /// Uses the columns of `basis` as the projective read.
    pub fn with_read_basis(mut self, basis: CMatrix) -> Result<Self> {
        let d = self.dim();
        if basis.rows() != d || basis.cols() != d {
            return Err(Error::Shape("read basis must be a square matrix of the target dimension".into()));
        }
        if (&basis.adjoint() * &basis).max_abs_diff(&CMatrix::identity(d)) > 1e-12 {
            return Err(Error::Config("read basis is not orthonormal".into()));
        }
        self.read_basis = basis;
        Ok(self)
    }

    /// The identity preparation of a projective measurement: each label maps
    /// to the range of its rank-one operator.
    pub fn from_projective(set: &KrausSet) -> Result<Self> {
        let targets = set
            .labels()
            .into_iter()
            .map(|l| {
                set.rank_one_range(l)?
                    .map(|psi| (l, psi))
                    .ok_or_else(|| Error::Config(format!("outcome {l} is not a rank-one projector")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(targets)
    }

    pub fn dim(&self) -> usize {
        self.read_basis.rows()
    }

    pub fn target(&self, label: Label) -> Result<&[C64]> {
        self.targets
            .iter()
            .find(|(l, _)| *l == label)
            .map(|(_, v)| v.as_slice())
            .ok_or_else(|| Error::Config(format!("no preparation target for outcome {label}")))
    }

    /// `|y><y|`.
    pub fn target_state(&self, label: Label) -> Result<DensityMatrix> {
        DensityMatrix::pure(self.target(label)?)
    }

    /// Unitary `R(y|α)` with `R|α> = |y>`.
    pub fn rotation(&self, label: Label, alpha: usize) -> Result<CMatrix> {
        if alpha >= self.dim() {
            return Err(Error::Config(format!("read outcome {alpha} out of range")));
        }
        let to = complete_basis(self.target(label)?);
        let from = complete_basis(&self.read_basis.column(alpha));
        Ok(&to * &from.adjoint())
    }

    /// Read-then-rotate applied to an unnormalized joint operator on
    /// `d_s ⊗ d_e`, summed over read outcomes:
    /// `Σ_α (R_α Π_α ⊗ I) ρ (Π_α R_α† ⊗ I)`.
    pub fn apply_joint_explicit(&self, label: Label, joint: &CMatrix, d_e: usize) -> Result<CMatrix> {
        let d = self.dim();
        let id = CMatrix::identity(d_e);
        let mut out = CMatrix::zeros(joint.rows(), joint.cols());
        for alpha in 0..d {
            let a = self.read_basis.column(alpha);
            let op = &self.rotation(label, alpha)? * &CMatrix::outer(&a, &a);
            out = &out + &joint.conjugated_by(&kron(&op, &id)?)?;
        }
        Ok(out)
    }

    /// Closed form of [`Self::apply_joint_explicit`]: `|y><y| ⊗ Tr_s ρ`.
    pub fn apply_joint(&self, label: Label, joint: &CMatrix, d_e: usize) -> Result<CMatrix> {
        let env = partial_trace_op(joint, (self.dim(), d_e), Subsystem::Environment)?;
        let y = self.target(label)?;
        kron(&CMatrix::outer(y, y), &env)
    }
}

/// Orthonormal basis (as columns) whose first element is `v`.
fn complete_basis(v: &[C64]) -> CMatrix {
    let d = v.len();
    let mut basis: Vec<Vec<C64>> = Vec::with_capacity(d);
    basis.push(normalized(v).expect("targets are normalized"));
    for k in 0..d {
        if basis.len() == d {
            break;
        }
        let mut w: Vec<C64> = (0..d).map(|i| if i == k { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) }).collect();
        for b in &basis {
            let overlap: C64 = b.iter().zip(&w).map(|(bi, wi)| bi.conj() * wi).sum();
            for (wi, bi) in w.iter_mut().zip(b) {
                *wi -= overlap * bi;
            }
        }
        let norm: f64 = Float::sqrt(w.iter().map(|z| z.norm_sqr()).sum::<f64>());
        if norm > 1e-8 {
            basis.push(w.iter().map(|z| z / norm).collect());
        }
    }
    CMatrix::from_fn(d, d, |i, j| basis[j][i])
}

/// Replaces the post-measurement state by the configured target for
/// `label`, whatever the input.
pub fn causal_break(post_measurement_state: &DensityMatrix, label: Label, prep: &Preparation) -> Result<DensityMatrix> {
    if post_measurement_state.dim() != prep.dim() {
        return Err(Error::Shape("state and preparation dimensions differ".into()));
    }
    prep.target_state(label)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use core::f64::consts::PI;

    fn c(re: f64) -> C64 {
        C64::new(re, 0.0)
    }

    #[test]
    fn validate_examples() {
        assert!(validate(&KrausSet::qubit_axis(Axis::X)).is_ok());
        let half = CMatrix::identity(2).scale(c(core::f64::consts::FRAC_1_SQRT_2));
        assert!(KrausSet::with_labels(&[1, 2], vec![half.clone(), half]).is_ok());
        let err = KrausSet::with_labels(&[1, 2], vec![CMatrix::identity(2), CMatrix::identity(2)]).unwrap_err();
        assert_eq!(err, Error::Completeness { residual: 1.0 });
    }

    #[test]
    fn duplicate_labels_rejected() {
        let p = KrausSet::qubit_axis(Axis::Z);
        assert!(KrausSet::with_labels(&[1, 1], p.operators().to_vec()).is_err());
    }

    #[test]
    fn apply_examples() {
        let plus = DensityMatrix::pure(&pauli::z_state(1)).unwrap();
        let (post, p) = apply(&plus, KrausSet::qubit_axis(Axis::Z).operator(1).unwrap()).unwrap();
        assert_eq!(p, 1.0);
        assert!(post.max_abs_diff(&plus) < 1e-15);

        let (post, p) = apply(&plus, KrausSet::qubit_axis(Axis::X).operator(1).unwrap()).unwrap();
        assert!((p - 0.5).abs() < 1e-15);
        assert!(post.max_abs_diff(&DensityMatrix::pure(&pauli::x_state(1)).unwrap()) < 1e-15);

        let theta = PI / 6.0;
        let weak = KrausSet::weak_qubit(theta);
        let (post, p) = apply(&DensityMatrix::maximally_mixed(2), weak.operator(1).unwrap()).unwrap();
        assert!((p - 0.5).abs() < 1e-15);
        let expected = CMatrix::from_real_diag(&[theta.cos().powi(2), theta.sin().powi(2)]);
        assert!(post.max_abs_diff(&expected) < 1e-15);

        let err = apply(&plus, KrausSet::qubit_axis(Axis::Z).operator(-1).unwrap()).unwrap_err();
        assert!(matches!(err, Error::ZeroProbabilityOutcome { .. }));
    }

    #[test]
    fn retrodict_examples() {
        let rho0 = DensityMatrix::pure(&pauli::x_state(1)).unwrap();
        let z = KrausSet::qubit_axis(Axis::Z);

        let uninformative = retrodict(&rho0, &z, &EffectOperator::identity(2)).unwrap();
        assert!((uninformative[0] - 0.5).abs() < 1e-15 && (uninformative[1] - 0.5).abs() < 1e-15);

        let ex = KrausSet::qubit_axis(Axis::X).effect(1).unwrap();
        let p = retrodict(&rho0, &z, &ex).unwrap();
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);

        let plus = DensityMatrix::pure(&pauli::z_state(1)).unwrap();
        let p = retrodict(&plus, &z, &KrausSet::weak_qubit(0.4).effect(-1).unwrap()).unwrap();
        assert!((p[0] - 1.0).abs() < 1e-15 && p[1] == 0.0);

        let err = retrodict(&plus, &z, &z.effect(-1).unwrap());
        // only x = + occurs, and E_- annihilates it
        assert!(matches!(err, Err(Error::DegeneratePostSelection { .. })));
    }

    #[test]
    fn effect_bounds() {
        assert!(EffectOperator::new(CMatrix::from_real_diag(&[1.2, 0.0])).is_err());
        assert!(EffectOperator::new(CMatrix::from_real_diag(&[0.5, -0.1])).is_err());
        assert!(EffectOperator::new(CMatrix::from_real_diag(&[1.0, 0.0])).is_ok());
    }

    #[test]
    fn causal_break_is_past_independent() {
        let prep = Preparation::new(vec![(1, pauli::x_state(1)), (-1, pauli::x_state(-1))]).unwrap();
        let a = DensityMatrix::maximally_mixed(2);
        let b = DensityMatrix::pure(&pauli::y_state(-1)).unwrap();
        let out_a = causal_break(&a, 1, &prep).unwrap();
        let out_b = causal_break(&b, 1, &prep).unwrap();
        assert_eq!(out_a, out_b);
        assert!(out_a.max_abs_diff(&DensityMatrix::pure(&pauli::x_state(1)).unwrap()) < 1e-15);
        assert!(matches!(causal_break(&a, 7, &prep), Err(Error::Config(_))));
    }

    #[test]
    fn projective_break_is_identity() {
        let x = KrausSet::qubit_axis(Axis::X);
        let prep = Preparation::from_projective(&x).unwrap();
        let rho = DensityMatrix::pure(&[c(0.8), C64::new(0.0, 0.6)]).unwrap();
        let (post, _) = apply(&rho, x.operator(-1).unwrap()).unwrap();
        assert!(causal_break(&post, -1, &prep).unwrap().max_abs_diff(&post) < 1e-15);
        assert!(Preparation::from_projective(&KrausSet::weak_qubit(0.3)).is_err());
    }

    #[test]
    fn rotations_map_read_states_to_targets() {
        let prep = Preparation::new(vec![(0, vec![c(1.0), C64::new(0.0, 1.0), c(-1.0)])]).unwrap();
        let y = prep.target(0).unwrap().to_vec();
        for alpha in 0..3 {
            let r = prep.rotation(0, alpha).unwrap();
            assert!((&r * &r.adjoint()).max_abs_diff(&CMatrix::identity(3)) < 1e-14);
            let mut e = vec![c(0.0); 3];
            e[alpha] = c(1.0);
            let out = r.apply(&e).unwrap();
            assert!(out.iter().zip(&y).all(|(a, b)| (a - b).norm() < 1e-14));
        }
    }

    #[test]
    fn explicit_and_implicit_joint_preparation_agree() {
        let prep = Preparation::new(vec![(1, pauli::y_state(1)), (-1, pauli::x_state(-1))])
            .unwrap()
            .with_read_basis(CMatrix::from_fn(2, 2, |i, j| pauli::x_state(if j == 0 { 1 } else { -1 })[i]))
            .unwrap();
        let joint = CMatrix::from_fn(4, 4, |i, j| C64::new((i + j) as f64 * 0.1, i as f64 * 0.05 - j as f64 * 0.05));
        let joint = &joint * &joint.adjoint();
        for y in [1, -1] {
            let a = prep.apply_joint_explicit(y, &joint, 2).unwrap();
            let b = prep.apply_joint(y, &joint, 2).unwrap();
            assert!(a.max_abs_diff(&b) < 1e-13, "{}", a.max_abs_diff(&b));
        }
    }

    #[test]
    fn rank_one_detection() {
        let x = KrausSet::qubit_axis(Axis::X);
        let psi = x.rank_one_range(-1).unwrap().unwrap();
        let overlap: C64 = psi.iter().zip(pauli::x_state(-1)).map(|(a, b)| a.conj() * b).sum();
        assert!((overlap.norm() - 1.0).abs() < 1e-15);
        assert!(KrausSet::weak_qubit(0.2).rank_one_range(1).unwrap().is_none());
        let swap = CMatrix::outer(&pauli::z_state(1), &pauli::x_state(1));
        assert!(rank_one_range(&swap).is_some());
    }
}
