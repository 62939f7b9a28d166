//! Conditional past-future probabilities and correlations.
//!
//! A [`MeasurementSchedule`] fixes the measurement chain
//! `x → y₁ → … → yₙ → z` and the conditioning outcomes `y`. The quantum
//! paths in [`quantum`] turn a schedule plus dynamics into a
//! [`CpfProbabilityTable`]; [`classical`] does the same for classical
//! sequence models by enumeration.

pub mod classical;
pub mod quantum;

use alloc::{format, vec::Vec};

use crate::error::{Error, Result};
use crate::measure::{KrausSet, Label, Outcome, Preparation};
use crate::qmat::C64;

pub use classical::{classical_cpf, ClassicalChain, HiddenMarkovChain, SequenceModel};
pub use quantum::{
    cpf_table_bipartite, cpf_table_isolated, cpf_table_markov, cpf_table_n, effect_operator_n, env_state,
    retrodict_bipartite, BipartiteModel, Channel,
};

/// Allowed deviation of a table total from one.
pub const TABLE_TOTAL_TOL: f64 = 1e-10;

/// An intermediate measurement, optionally followed by a causal break.
#[derive(Debug, Clone, PartialEq)]
pub struct MiddleMeasurement {
    pub set: KrausSet,
    pub preparation: Option<Preparation>,
}

impl MiddleMeasurement {
    pub fn plain(set: KrausSet) -> Self {
        Self { set, preparation: None }
    }

    pub fn prepared(set: KrausSet, preparation: Preparation) -> Result<Self> {
        if preparation.dim() != set.dim() {
            return Err(Error::Shape("preparation and measurement dimensions differ".into()));
        }
        for label in set.labels() {
            preparation.target(label)?;
        }
        Ok(Self { set, preparation: Some(preparation) })
    }

    /// The system state left behind by outcome `label` when it does not
    /// depend on the past: the preparation target, or the range of a
    /// rank-one operator. `None` means the post-measurement state must be
    /// carried forward as is.
    pub(crate) fn refreshed_state(&self, label: Label) -> Result<Option<Vec<C64>>> {
        match &self.preparation {
            Some(prep) => Ok(Some(prep.target(label)?.to_vec())),
            None => self.set.rank_one_range(label),
        }
    }
}

/// Measurement chain `x → y₁ → … → yₙ → z` at absolute times
/// `t_x ≤ t_{y1} ≤ … ≤ t_{yn} ≤ t_z`, conditioned on outcomes `y`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementSchedule {
    first: KrausSet,
    middle: Vec<MiddleMeasurement>,
    last: KrausSet,
    times: Vec<f64>,
    y: Vec<Label>,
}

impl MeasurementSchedule {
    pub fn new(
        first: KrausSet,
        middle: Vec<MiddleMeasurement>,
        last: KrausSet,
        times: Vec<f64>,
        y: Vec<Label>,
    ) -> Result<Self> {
        let n = middle.len();
        if n == 0 {
            return Err(Error::Config("at least one intermediate measurement is required".into()));
        }
        if y.len() != n {
            return Err(Error::Config(format!("{} conditioning outcomes for {n} intermediate measurements", y.len())));
        }
        if times.len() != n + 2 {
            return Err(Error::Config(format!("{} measurement times for {} measurements", times.len(), n + 2)));
        }
        if times.iter().any(|t| !t.is_finite()) || times.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Config("measurement times must be finite and non-decreasing".into()));
        }
        let d = first.dim();
        if last.dim() != d || middle.iter().any(|m| m.set.dim() != d) {
            return Err(Error::Shape("all measurements must act on the same system".into()));
        }
        for (m, &label) in middle.iter().zip(&y) {
            m.set.index_of(label)?;
        }
        Ok(Self { first, middle, last, times, y })
    }

    /// Three-measurement chain with `t_x = 0`, `t_y = t`, `t_z = t + τ`.
    pub fn three_point(
        first: KrausSet,
        middle: MiddleMeasurement,
        last: KrausSet,
        t: f64,
        tau: f64,
        y: Label,
    ) -> Result<Self> {
        Self::new(first, alloc::vec![middle], last, alloc::vec![0.0, t, t + tau], alloc::vec![y])
    }

    /// Same measurements with new absolute times.
    pub fn with_times(&self, times: Vec<f64>) -> Result<Self> {
        Self::new(self.first.clone(), self.middle.clone(), self.last.clone(), times, self.y.clone())
    }

    /// Same measurements with `t_x = 0`, `t_y = t`, `t_z = t + τ`; n = 1 only.
    pub fn with_intervals(&self, t: f64, tau: f64) -> Result<Self> {
        if self.order() != 1 {
            return Err(Error::Config("intervals (t, τ) only define a three-measurement chain".into()));
        }
        self.with_times(alloc::vec![0.0, t, t + tau])
    }

    pub fn with_conditioning(&self, y: Vec<Label>) -> Result<Self> {
        Self::new(self.first.clone(), self.middle.clone(), self.last.clone(), self.times.clone(), y)
    }

    pub fn first(&self) -> &KrausSet {
        &self.first
    }

    pub fn middle(&self) -> &[MiddleMeasurement] {
        &self.middle
    }

    pub fn last(&self) -> &KrausSet {
        &self.last
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn conditioning(&self) -> &[Label] {
        &self.y
    }

    /// Number of intermediate measurements `n`.
    pub fn order(&self) -> usize {
        self.middle.len()
    }

    pub fn dim(&self) -> usize {
        self.first.dim()
    }

    /// `t = t_{y1} − t_x`.
    pub fn t(&self) -> f64 {
        self.times[1] - self.times[0]
    }

    /// `τ = t_z − t_{yn}`.
    pub fn tau(&self) -> f64 {
        self.times[self.times.len() - 1] - self.times[self.times.len() - 2]
    }

    /// Consecutive interval lengths, `n + 1` of them.
    pub fn intervals(&self) -> Vec<f64> {
        self.times.windows(2).map(|w| w[1] - w[0]).collect()
    }
}

/// `P(z, x | y)` over the outcome alphabets of the last and first
/// measurements, stored z-major.
#[derive(Debug, Clone, PartialEq)]
pub struct CpfProbabilityTable {
    y: Vec<Label>,
    z: Vec<Outcome>,
    x: Vec<Outcome>,
    probs: Vec<f64>,
    stderr: Option<Vec<f64>>,
}

impl CpfProbabilityTable {
    /// Rounding-level negatives (above −1e-12) are clipped to zero; the
    /// total must be one within [`TABLE_TOTAL_TOL`].
    pub fn new(y: Vec<Label>, z: Vec<Outcome>, x: Vec<Outcome>, probs: Vec<f64>) -> Result<Self> {
        Self::with_total_tol(y, z, x, probs, TABLE_TOTAL_TOL)
    }

    pub(crate) fn with_total_tol(
        y: Vec<Label>,
        z: Vec<Outcome>,
        x: Vec<Outcome>,
        mut probs: Vec<f64>,
        total_tol: f64,
    ) -> Result<Self> {
        if probs.len() != z.len() * x.len() {
            return Err(Error::Shape(format!("{} entries for a {}x{} table", probs.len(), z.len(), x.len())));
        }
        for p in probs.iter_mut() {
            if !p.is_finite() || *p < -1e-12 {
                return Err(Error::InvalidState(format!("table entry {p} is not a probability")));
            }
            *p = p.max(0.0);
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > total_tol {
            return Err(Error::InvalidState(format!("table total {total} differs from one")));
        }
        Ok(Self { y, z, x, probs, stderr: None })
    }

    pub(crate) fn set_stderr(&mut self, stderr: Vec<f64>) {
        debug_assert_eq!(stderr.len(), self.probs.len());
        self.stderr = Some(stderr);
    }

    pub fn conditioning(&self) -> &[Label] {
        &self.y
    }

    pub fn z_outcomes(&self) -> &[Outcome] {
        &self.z
    }

    pub fn x_outcomes(&self) -> &[Outcome] {
        &self.x
    }

    /// Entries, z-major.
    pub fn entries(&self) -> &[f64] {
        &self.probs
    }

    /// Per-entry standard errors for Monte Carlo tables.
    pub fn stderr(&self) -> Option<&[f64]> {
        self.stderr.as_deref()
    }

    pub fn at(&self, iz: usize, ix: usize) -> f64 {
        self.probs[iz * self.x.len() + ix]
    }

    pub fn get(&self, z: Label, x: Label) -> Option<f64> {
        let iz = self.z.iter().position(|o| o.label == z)?;
        let ix = self.x.iter().position(|o| o.label == x)?;
        Some(self.at(iz, ix))
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// `P(z|y) = Σ_x P(z,x|y)`.
    pub fn p_z(&self) -> Vec<f64> {
        (0..self.z.len()).map(|iz| (0..self.x.len()).map(|ix| self.at(iz, ix)).sum()).collect()
    }

    /// `P(x|y) = Σ_z P(z,x|y)`.
    pub fn p_x(&self) -> Vec<f64> {
        (0..self.x.len()).map(|ix| (0..self.z.len()).map(|iz| self.at(iz, ix)).sum()).collect()
    }

    /// Largest entrywise difference; infinite when alphabets differ.
    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        if self.z != other.z || self.x != other.x {
            return f64::INFINITY;
        }
        self.probs.iter().zip(&other.probs).fold(0.0, |m, (a, b)| m.max((a - b).abs()))
    }

    /// `C_pf` with the observable values attached to the outcomes.
    pub fn correlation(&self) -> f64 {
        let oz: Vec<f64> = self.z.iter().map(|o| o.value).collect();
        let ox: Vec<f64> = self.x.iter().map(|o| o.value).collect();
        self.correlation_with(&oz, &ox)
    }

    fn correlation_with(&self, oz: &[f64], ox: &[f64]) -> f64 {
        let pz = self.p_z();
        let px = self.p_x();
        let mut c = 0.0;
        for (iz, &vz) in oz.iter().enumerate() {
            for (ix, &vx) in ox.iter().enumerate() {
                c += (self.at(iz, ix) - pz[iz] * px[ix]) * vz * vx;
            }
        }
        c
    }

    /// Derivative of `C_pf` with respect to each entry, z-major.
    pub(crate) fn correlation_gradient(&self) -> Vec<f64> {
        let pz = self.p_z();
        let px = self.p_x();
        let mean_z: f64 = self.z.iter().zip(&pz).map(|(o, p)| o.value * p).sum();
        let mean_x: f64 = self.x.iter().zip(&px).map(|(o, p)| o.value * p).sum();
        let mut g = Vec::with_capacity(self.probs.len());
        for oz in &self.z {
            for ox in &self.x {
                g.push(oz.value * ox.value - oz.value * mean_x - mean_z * ox.value);
            }
        }
        g
    }
}

/// `C_pf = Σ_{z,x} [P(z,x|y) − P(z|y)P(x|y)] O_z O_x` with the values
/// attached to the table outcomes.
pub fn cpf_correlation(table: &CpfProbabilityTable) -> f64 {
    table.correlation()
}

/// `C_pf` with observable values taken from the given measurement sets,
/// matched to the table by label.
pub fn cpf_correlation_with(table: &CpfProbabilityTable, last: &KrausSet, first: &KrausSet) -> Result<f64> {
    let oz = table
        .z
        .iter()
        .map(|o| last.index_of(o.label).map(|i| last.outcomes()[i].value))
        .collect::<Result<Vec<_>>>()?;
    let ox = table
        .x
        .iter()
        .map(|o| first.index_of(o.label).map(|i| first.outcomes()[i].value))
        .collect::<Result<Vec<_>>>()?;
    Ok(table.correlation_with(&oz, &ox))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::measure::Axis;
    use alloc::vec;

    fn pm() -> Vec<Outcome> {
        vec![Outcome { label: 1, value: 1.0 }, Outcome { label: -1, value: -1.0 }]
    }

    #[test]
    fn factorized_table_has_zero_correlation() {
        let pz = [0.3, 0.7];
        let px = [0.6, 0.4];
        let probs = vec![pz[0] * px[0], pz[0] * px[1], pz[1] * px[0], pz[1] * px[1]];
        let t = CpfProbabilityTable::new(vec![1], pm(), pm(), probs).unwrap();
        assert!(t.correlation().abs() < 1e-16);
    }

    #[test]
    fn sign_flip_of_past_observable() {
        let probs = vec![0.4, 0.1, 0.2, 0.3];
        let t = CpfProbabilityTable::new(vec![1], pm(), pm(), probs).unwrap();
        let c = t.correlation();
        let flipped = KrausSet::qubit_axis(Axis::X).with_values(&[-1.0, 1.0]).unwrap();
        let c2 = cpf_correlation_with(&t, &KrausSet::qubit_axis(Axis::X), &flipped).unwrap();
        assert!(c.abs() > 0.05);
        assert_eq!(c, -c2);
    }

    #[test]
    fn table_rejects_bad_totals() {
        assert!(CpfProbabilityTable::new(vec![1], pm(), pm(), vec![0.5, 0.5, 0.5, 0.0]).is_err());
        assert!(CpfProbabilityTable::new(vec![1], pm(), pm(), vec![1.1, -0.1, 0.0, 0.0]).is_err());
        assert!(CpfProbabilityTable::new(vec![1], pm(), pm(), vec![0.5, 0.5]).is_err());
    }

    #[test]
    fn schedule_validation() {
        let x = KrausSet::qubit_axis(Axis::X);
        let m = MiddleMeasurement::plain(x.clone());
        assert!(MeasurementSchedule::new(x.clone(), vec![], x.clone(), vec![0.0, 1.0], vec![]).is_err());
        assert!(MeasurementSchedule::new(x.clone(), vec![m.clone()], x.clone(), vec![0.0, 2.0, 1.0], vec![1]).is_err());
        assert!(MeasurementSchedule::new(x.clone(), vec![m.clone()], x.clone(), vec![0.0, 1.0, 2.0], vec![3]).is_err());
        let s = MeasurementSchedule::three_point(x.clone(), m, x, 0.5, 0.25, -1).unwrap();
        assert_eq!(s.t(), 0.5);
        assert_eq!(s.tau(), 0.25);
        assert_eq!(s.intervals(), vec![0.5, 0.25]);
    }
}
