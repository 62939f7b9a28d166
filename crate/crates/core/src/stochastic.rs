//! Classical-noise environments.
//!
//! The system evolves under `H(t) = ξ(t) G` for a fixed Hermitian generator
//! `G`, so a trajectory only enters through the accumulated phases
//! `Φ(a, b) = ∫_a^b ξ`. Noise-averaged CPF tables are estimated as a ratio
//! of means over one trajectory ensemble: the numerator carries the joint
//! weights of `(x, y, z)` and the denominator the weight of `y`.
//!
//! Every trajectory draws from its own ChaCha stream keyed by
//! `(seed, index)`, and trajectories are reduced in fixed-size batches whose
//! partial sums are merged in batch order. Results are therefore
//! bit-identical for any [`Executor`].

use alloc::{format, vec, vec::Vec};
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::cpf::{CpfProbabilityTable, MeasurementSchedule};
use crate::error::{Error, Result};
use crate::exec::Executor;
use crate::measure::{Label, Outcome, ZERO_PROBABILITY};
use crate::qmat::{CMatrix, DensityMatrix, HermitianMatrix, UnitaryPropagator, C64};

/// Trajectories per reduction batch.
pub const BATCH_SIZE: usize = 1000;
/// Smallest ensemble accepted by the estimators.
pub const MIN_TRAJECTORIES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    /// Stationary Gaussian, `⟨ξ(t)ξ(t′)⟩ = g² e^{−|t−t′|/τ_c}`.
    OrnsteinUhlenbeck,
    /// Delta-correlated Gaussian, `⟨ξ(t)ξ(t′)⟩ = γ_w δ(t−t′)`.
    White,
    /// Telegraph noise `±g` flipping at rate `1/τ_c`.
    Dichotomic,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseModel {
    kind: NoiseKind,
    g: f64,
    tau_c: f64,
    gamma_w: f64,
}

impl NoiseModel {
    /// `τ_c = ∞` gives frozen noise.
    pub fn ornstein_uhlenbeck(g: f64, tau_c: f64) -> Result<Self> {
        check_amplitude(g)?;
        check_correlation_time(tau_c)?;
        Ok(Self { kind: NoiseKind::OrnsteinUhlenbeck, g, tau_c, gamma_w: 2.0 * g * g * tau_c })
    }

    pub fn frozen(g: f64) -> Result<Self> {
        Self::ornstein_uhlenbeck(g, f64::INFINITY)
    }

    pub fn white(gamma_w: f64) -> Result<Self> {
        if !(gamma_w >= 0.0 && gamma_w.is_finite()) {
            return Err(Error::Config(format!("white-noise rate must be finite and non-negative, got {gamma_w}")));
        }
        Ok(Self { kind: NoiseKind::White, g: f64::INFINITY, tau_c: 0.0, gamma_w })
    }

    pub fn dichotomic(g: f64, tau_c: f64) -> Result<Self> {
        check_amplitude(g)?;
        check_correlation_time(tau_c)?;
        Ok(Self { kind: NoiseKind::Dichotomic, g, tau_c, gamma_w: 2.0 * g * g * tau_c })
    }

    pub fn kind(&self) -> NoiseKind {
        self.kind
    }

    /// `g`; infinite for white noise.
    pub fn amplitude(&self) -> f64 {
        self.g
    }

    /// `τ_c`; zero for white noise.
    pub fn correlation_time(&self) -> f64 {
        self.tau_c
    }

    /// `γ_w = 2g²τ_c`.
    pub fn white_rate(&self) -> f64 {
        self.gamma_w
    }

    /// Integration step `min(τ_c/20, 0.01/g)`, or `None` when the phase can
    /// be sampled exactly at the requested times (frozen and white noise).
    pub fn default_step(&self) -> Option<f64> {
        match self.kind {
            NoiseKind::White => None,
            _ if self.tau_c.is_infinite() => None,
            _ => {
                let by_g = if self.g > 0.0 { 0.01 / self.g } else { f64::INFINITY };
                Some((self.tau_c / 20.0).min(by_g))
            }
        }
    }

    /// Coarsest step the OU update is accepted with.
    pub fn max_step(&self) -> Option<f64> {
        match self.kind {
            NoiseKind::OrnsteinUhlenbeck if self.tau_c.is_finite() => Some(self.tau_c / 20.0),
            _ => None,
        }
    }

    pub fn is_gaussian(&self) -> bool {
        self.kind != NoiseKind::Dichotomic
    }

    /// `Var Φ(s, s + len)` for the Gaussian kinds.
    pub fn phase_variance(&self, len: f64) -> Option<f64> {
        let len = len.abs();
        match self.kind {
            NoiseKind::Dichotomic => None,
            NoiseKind::White => Some(self.gamma_w * len),
            NoiseKind::OrnsteinUhlenbeck if self.tau_c.is_infinite() => Some(self.g * self.g * len * len),
            NoiseKind::OrnsteinUhlenbeck => {
                let x = len / self.tau_c;
                Some(2.0 * self.g * self.g * self.tau_c * self.tau_c * ou_shape(x))
            }
        }
    }

    /// `Cov(Φ(a, b), Φ(c, d))` for the Gaussian kinds.
    pub fn phase_covariance(&self, a: f64, b: f64, c: f64, d: f64) -> Option<f64> {
        let v = |s: f64| self.phase_variance(s);
        Some(0.5 * (v(d - a)? + v(c - b)? - v(c - a)? - v(d - b)?))
    }

    /// `c_t = mean e^{−2iΦ(0,t)} = e^{−2 Var Φ(0,t)}` for the Gaussian kinds.
    pub fn coherence(&self, t: f64) -> Option<f64> {
        Some(Float::exp(-2.0 * self.phase_variance(t)?))
    }

    /// `γ(t) = −(d/dt) ln c_t` for the Gaussian kinds.
    pub fn dephasing_rate(&self, t: f64) -> Option<f64> {
        match self.kind {
            NoiseKind::Dichotomic => None,
            NoiseKind::White => Some(2.0 * self.gamma_w),
            NoiseKind::OrnsteinUhlenbeck if self.tau_c.is_infinite() => Some(4.0 * self.g * self.g * t),
            NoiseKind::OrnsteinUhlenbeck => {
                Some(-4.0 * self.g * self.g * self.tau_c * Float::exp_m1(-t / self.tau_c))
            }
        }
    }

    /// `f(t,τ) − f(t)f(τ)` for the x̂-measured dephasing qubit started in
    /// `|+⟩`, with `f(t,τ) = mean cos 2Φ(0,t) cos 2Φ(t,t+τ)`.
    pub fn gaussian_cpf(&self, t: f64, tau: f64) -> Option<f64> {
        let v1 = self.phase_variance(t)?;
        let v2 = self.phase_variance(tau)?;
        let cov = self.phase_covariance(0.0, t, t, t + tau)?;
        let f_joint = 0.5 * (Float::exp(-2.0 * (v1 + v2 + 2.0 * cov)) + Float::exp(-2.0 * (v1 + v2 - 2.0 * cov)));
        Some(f_joint - Float::exp(-2.0 * v1) * Float::exp(-2.0 * v2))
    }
}

fn check_amplitude(g: f64) -> Result<()> {
    if !(g >= 0.0 && g.is_finite()) {
        return Err(Error::Config(format!("noise amplitude must be finite and non-negative, got {g}")));
    }
    Ok(())
}

fn check_correlation_time(tau_c: f64) -> Result<()> {
    if !(tau_c > 0.0) {
        return Err(Error::Config(format!("correlation time must be positive, got {tau_c}")));
    }
    Ok(())
}

/// `x − 1 + e^{−x}`, accurate for small `x`.
fn ou_shape(x: f64) -> f64 {
    if x < 1e-2 {
        let mut term = x * x / 2.0;
        let mut sum = 0.0;
        for k in 3..12 {
            sum += term;
            term *= -x / k as f64;
        }
        sum
    } else {
        x + Float::exp_m1(-x)
    }
}

/// Sampling times: `0 = t₀ < t₁ < … < t_m`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    points: Vec<f64>,
}

impl TimeGrid {
    pub fn new(points: Vec<f64>) -> Result<Self> {
        if points.first() != Some(&0.0) {
            return Err(Error::Config("time grid must start at 0".into()));
        }
        if points.iter().any(|t| !t.is_finite()) || points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("time grid must be finite and strictly increasing".into()));
        }
        Ok(Self { points })
    }

    /// Uniform points `k·step` up to the last checkpoint, merged with the
    /// checkpoints themselves so that phases at the checkpoints are exact
    /// grid values. Without a step the grid is the checkpoints alone.
    pub fn with_checkpoints(step: Option<f64>, checkpoints: &[f64]) -> Result<Self> {
        if checkpoints.iter().any(|t| !(t.is_finite() && *t >= 0.0)) {
            return Err(Error::Config("checkpoints must be finite and non-negative".into()));
        }
        let mut points: Vec<f64> = checkpoints.to_vec();
        points.push(0.0);
        let horizon = points.iter().copied().fold(0.0, f64::max);
        if let Some(step) = step {
            if !(step > 0.0 && step.is_finite()) {
                return Err(Error::Config(format!("grid step must be positive, got {step}")));
            }
            let n = Float::ceil(horizon / step) as usize;
            points.extend((1..n).map(|k| k as f64 * step));
        }
        points.sort_by(f64::total_cmp);
        points.dedup();
        // A uniform point closer than 1e-9 steps to a checkpoint is dropped.
        if let Some(step) = step {
            let tol = 1e-9 * step;
            let mut kept: Vec<f64> = Vec::with_capacity(points.len());
            for &p in &points {
                let is_check = p == 0.0 || checkpoints.contains(&p);
                match kept.last_mut() {
                    Some(last) if p - *last < tol => {
                        if is_check {
                            *last = p;
                        }
                    }
                    _ => kept.push(p),
                }
            }
            points = kept;
        }
        Self::new(points)
    }

    /// Grid suited to `noise` that contains every checkpoint.
    pub fn for_noise(noise: &NoiseModel, checkpoints: &[f64]) -> Result<Self> {
        Self::with_checkpoints(noise.default_step(), checkpoints)
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn horizon(&self) -> f64 {
        self.points[self.points.len() - 1]
    }

    pub fn max_step(&self) -> f64 {
        self.points.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max)
    }
}

/// One noise realization on a [`TimeGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseTrajectory {
    times: Vec<f64>,
    /// `ξ(tᵢ)`; absent for white noise.
    values: Option<Vec<f64>>,
    /// `Φ(0, tᵢ)`.
    phase: Vec<f64>,
}

impl NoiseTrajectory {
    fn from_values(times: Vec<f64>, values: Vec<f64>) -> Self {
        let mut phase = Vec::with_capacity(times.len());
        phase.push(0.0);
        for i in 1..times.len() {
            let h = times[i] - times[i - 1];
            phase.push(phase[i - 1] + 0.5 * h * (values[i - 1] + values[i]));
        }
        Self { times, values: Some(values), phase }
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> Option<&[f64]> {
        self.values.as_deref()
    }

    /// `Φ(0, tᵢ)` on the grid.
    pub fn cumulative_phase(&self) -> &[f64] {
        &self.phase
    }

    /// `Φ(0, t)`. Between grid points the trapezoid-consistent quadratic
    /// interpolant is used (linear for white noise); outside the grid the
    /// value is clamped to the ends.
    pub fn phase_at(&self, t: f64) -> f64 {
        let i = match self.times.binary_search_by(|p| p.total_cmp(&t)) {
            Ok(i) => return self.phase[i],
            Err(0) => return 0.0,
            Err(i) if i >= self.times.len() => return self.phase[self.phase.len() - 1],
            Err(i) => i - 1,
        };
        let h = self.times[i + 1] - self.times[i];
        let s = t - self.times[i];
        match &self.values {
            Some(xi) => self.phase[i] + xi[i] * s + (xi[i + 1] - xi[i]) * s * s / (2.0 * h),
            None => self.phase[i] + (self.phase[i + 1] - self.phase[i]) * s / h,
        }
    }

    /// `Φ(a, b) = ∫_a^b ξ`.
    pub fn phase(&self, a: f64, b: f64) -> f64 {
        self.phase_at(b) - self.phase_at(a)
    }

    /// Keeps every `factor`-th grid point (and the last) and re-integrates.
    /// The OU and telegraph updates are exact, so the subsampled values are
    /// a valid coarser realization of the same path.
    pub fn coarsened(&self, factor: usize) -> Self {
        let factor = factor.max(1);
        let last = self.times.len() - 1;
        let keep: Vec<usize> = (0..=last).filter(|i| i % factor == 0 || *i == last).collect();
        let times: Vec<f64> = keep.iter().map(|&i| self.times[i]).collect();
        match &self.values {
            Some(xi) => Self::from_values(times, keep.iter().map(|&i| xi[i]).collect()),
            None => Self { times, values: None, phase: keep.iter().map(|&i| self.phase[i]).collect() },
        }
    }
}

/// Generator for trajectory `index` under master `seed`.
pub fn trajectory_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Draws trajectory `index` of the ensemble keyed by `seed`.
pub fn sample_trajectory(noise: &NoiseModel, grid: &TimeGrid, seed: u64, index: usize) -> Result<NoiseTrajectory> {
    if let Some(limit) = noise.max_step() {
        let dt = grid.max_step();
        if dt > limit * (1.0 + 1e-12) {
            return Err(Error::StepSize { dt, limit });
        }
    }
    let mut rng = trajectory_rng(seed, index);
    let times = grid.points.clone();
    let g = noise.g;
    let tau_c = noise.tau_c;
    match noise.kind {
        NoiseKind::OrnsteinUhlenbeck => {
            let mut values = Vec::with_capacity(times.len());
            let mut xi = g * normal(&mut rng);
            values.push(xi);
            for w in times.windows(2) {
                if tau_c.is_finite() {
                    let h = w[1] - w[0];
                    let decay = Float::exp(-h / tau_c);
                    let kick = g * Float::sqrt(-Float::exp_m1(-2.0 * h / tau_c));
                    xi = xi * decay + kick * normal(&mut rng);
                }
                values.push(xi);
            }
            Ok(NoiseTrajectory::from_values(times, values))
        }
        NoiseKind::Dichotomic => {
            let mut values = Vec::with_capacity(times.len());
            let mut xi = if rng.random::<bool>() { g } else { -g };
            values.push(xi);
            for w in times.windows(2) {
                if tau_c.is_finite() {
                    // Probability of an odd number of flips in the step.
                    let flip = -0.5 * Float::exp_m1(-2.0 * (w[1] - w[0]) / tau_c);
                    if rng.random::<f64>() < flip {
                        xi = -xi;
                    }
                }
                values.push(xi);
            }
            Ok(NoiseTrajectory::from_values(times, values))
        }
        NoiseKind::White => {
            let mut phase = Vec::with_capacity(times.len());
            phase.push(0.0);
            for w in times.windows(2) {
                let sd = Float::sqrt(noise.gamma_w * (w[1] - w[0]));
                let next = phase[phase.len() - 1] + sd * normal(&mut rng);
                phase.push(next);
            }
            Ok(NoiseTrajectory { times, values: None, phase })
        }
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Monte Carlo mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub n_traj: usize,
    pub seed: u64,
}

impl McEstimate {
    /// `(mean − target)/stderr`; zero when both the deviation and the error
    /// vanish.
    pub fn z_score(&self, target: f64) -> f64 {
        let dev = self.mean - target;
        if self.stderr > 0.0 {
            dev / self.stderr
        } else if dev.abs() <= 1e-15 {
            0.0
        } else {
            f64::INFINITY.copysign(dev)
        }
    }

    /// Whether `target` lies within `k` standard errors.
    pub fn within(&self, target: f64, k: f64) -> bool {
        self.z_score(target).abs() <= k
    }
}

/// Running sums and cross products of a fixed number of per-trajectory
/// observables.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentAccumulator {
    n: usize,
    sums: Vec<f64>,
    cross: Vec<f64>,
}

impl MomentAccumulator {
    pub fn new(k: usize) -> Self {
        Self { n: 0, sums: vec![0.0; k], cross: vec![0.0; k * k] }
    }

    pub fn dim(&self) -> usize {
        self.sums.len()
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn push(&mut self, x: &[f64]) {
        let k = self.dim();
        debug_assert_eq!(x.len(), k);
        self.n += 1;
        for i in 0..k {
            self.sums[i] += x[i];
            for j in i..k {
                self.cross[i * k + j] += x[i] * x[j];
            }
        }
    }

    pub fn merge(&mut self, other: &Self) {
        debug_assert_eq!(self.dim(), other.dim());
        self.n += other.n;
        for (a, b) in self.sums.iter_mut().zip(&other.sums) {
            *a += b;
        }
        for (a, b) in self.cross.iter_mut().zip(&other.cross) {
            *a += b;
        }
    }

    pub fn mean(&self, i: usize) -> f64 {
        self.sums[i] / self.n as f64
    }

    pub fn means(&self) -> Vec<f64> {
        (0..self.dim()).map(|i| self.mean(i)).collect()
    }

    /// Sample covariance with the `n − 1` denominator.
    pub fn covariance(&self, i: usize, j: usize) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        let n = self.n as f64;
        (self.cross[i * self.dim() + j] - self.sums[i] * self.sums[j] / n) / (n - 1.0)
    }

    /// Standard error of the mean of `Σᵢ wᵢ xᵢ`.
    pub fn linear_stderr(&self, w: &[f64]) -> f64 {
        let k = self.dim();
        let mut var = 0.0;
        for i in 0..k {
            if w[i] == 0.0 {
                continue;
            }
            for j in 0..k {
                var += w[i] * w[j] * self.covariance(i, j);
            }
        }
        Float::sqrt(var.max(0.0) / self.n as f64)
    }

    pub fn estimate(&self, w: &[f64], seed: u64) -> McEstimate {
        let mean = w.iter().zip(&self.sums).map(|(w, s)| w * s).sum::<f64>() / self.n as f64;
        McEstimate { mean, stderr: self.linear_stderr(w), n_traj: self.n, seed }
    }
}

fn check_ensemble(n_traj: usize) -> Result<()> {
    if n_traj < MIN_TRAJECTORIES {
        return Err(Error::Config(format!("at least {MIN_TRAJECTORIES} trajectories are required, got {n_traj}")));
    }
    Ok(())
}

/// Runs `record(index, accumulators)` for every trajectory in fixed batches
/// and merges the batch sums in batch order.
fn run_batches<E, M, F>(exec: &E, n_traj: usize, make: M, record: F) -> Result<Vec<MomentAccumulator>>
where
    E: Executor + ?Sized,
    M: Fn() -> Vec<MomentAccumulator> + Sync + Send,
    F: Fn(usize, &mut [MomentAccumulator]) -> Result<()> + Sync + Send,
{
    let batches = n_traj.div_ceil(BATCH_SIZE);
    let parts = exec.map(batches, |b| {
        let mut acc = make();
        for i in b * BATCH_SIZE..((b + 1) * BATCH_SIZE).min(n_traj) {
            record(i, &mut acc)?;
        }
        Ok(acc)
    });
    let mut total = make();
    for part in parts {
        let part: Vec<MomentAccumulator> = part?;
        for (t, p) in total.iter_mut().zip(&part) {
            t.merge(p);
        }
    }
    Ok(total)
}

/// `c_t = mean e^{−2iΦ(0,t)}` as (real, imaginary) estimates.
pub fn coherence_mc<E: Executor + ?Sized>(
    noise: &NoiseModel,
    t: f64,
    n_traj: usize,
    seed: u64,
    exec: &E,
) -> Result<(McEstimate, McEstimate)> {
    check_ensemble(n_traj)?;
    let grid = TimeGrid::for_noise(noise, &[t])?;
    let acc = run_batches(exec, n_traj, || vec![MomentAccumulator::new(2)], |i, acc| {
        let phi = sample_trajectory(noise, &grid, seed, i)?.phase(0.0, t);
        let (s, c) = Float::sin_cos(2.0 * phi);
        acc[0].push(&[c, -s]);
        Ok(())
    })?;
    Ok((acc[0].estimate(&[1.0, 0.0], seed), acc[0].estimate(&[0.0, 1.0], seed)))
}

/// System driven by `H(t) = ξ(t) G`.
#[derive(Debug, Clone)]
pub struct StochasticSystem {
    generator: HermitianMatrix,
    rho0: DensityMatrix,
    propagator: UnitaryPropagator,
}

impl StochasticSystem {
    pub fn new(generator: HermitianMatrix, rho0: DensityMatrix) -> Result<Self> {
        if generator.dim() != rho0.dim() {
            return Err(Error::Shape(format!(
                "generator acts on dimension {} but the state has dimension {}",
                generator.dim(),
                rho0.dim()
            )));
        }
        let propagator = UnitaryPropagator::new(&generator)?;
        Ok(Self { generator, rho0, propagator })
    }

    pub fn dim(&self) -> usize {
        self.rho0.dim()
    }

    pub fn generator(&self) -> &HermitianMatrix {
        &self.generator
    }

    pub fn initial_state(&self) -> &DensityMatrix {
        &self.rho0
    }

    /// `exp(−iΦG)`.
    pub fn unitary(&self, phase: f64) -> CMatrix {
        self.propagator.unitary(phase)
    }
}

/// Monte Carlo CPF table with per-entry standard errors and the derived
/// correlation estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct McCpfTable {
    pub table: CpfProbabilityTable,
    pub correlation: McEstimate,
}

/// Per-trajectory observables of a schedule: `q_{zx}` (z-major) followed by
/// the conditioning weight `Σ_x a_x`.
struct WeightKernel<'a> {
    system: &'a StochasticSystem,
    sched: &'a MeasurementSchedule,
    first_states: Vec<CMatrix>,
    middle: Vec<&'a CMatrix>,
    refreshed: Option<CMatrix>,
}

impl<'a> WeightKernel<'a> {
    fn new(system: &'a StochasticSystem, sched: &'a MeasurementSchedule) -> Result<Self> {
        if sched.dim() != system.dim() {
            return Err(Error::Shape(format!(
                "measurements act on dimension {} but the system has dimension {}",
                sched.dim(),
                system.dim()
            )));
        }
        let first_states = sched
            .first()
            .operators()
            .iter()
            .map(|op| system.rho0.conjugated_by(op))
            .collect::<Result<Vec<_>>>()?;
        let middle = sched
            .middle()
            .iter()
            .zip(sched.conditioning())
            .map(|(m, &y)| m.set.operator(y))
            .collect::<Result<Vec<_>>>()?;
        let n = sched.order();
        let refreshed = sched.middle()[n - 1]
            .refreshed_state(sched.conditioning()[n - 1])?
            .map(|psi| CMatrix::outer(&psi, &psi));
        Ok(Self { system, sched, first_states, middle, refreshed })
    }

    fn width(&self) -> usize {
        self.sched.last().len() * self.sched.first().len() + 1
    }

    /// `phases[k]` is the phase accumulated over the `k`-th interval.
    fn record(&self, phases: &[f64], out: &mut Vec<f64>) -> Result<()> {
        let unitaries: Vec<CMatrix> = phases.iter().map(|&p| self.system.unitary(p)).collect();
        let nx = self.first_states.len();
        let nz = self.sched.last().len();
        out.clear();
        out.resize(self.width(), 0.0);
        let mut denom = 0.0;
        for (ix, start) in self.first_states.iter().enumerate() {
            let mut state = start.clone();
            for (k, omega) in self.middle.iter().enumerate() {
                state = state.conjugated_by(&unitaries[k])?.conjugated_by(omega)?;
            }
            let a = state.trace().re;
            denom += a;
            if let Some(r) = &self.refreshed {
                state = r.scale(C64::new(a, 0.0));
            }
            let later = state.conjugated_by(&unitaries[unitaries.len() - 1])?;
            for (iz, op) in self.sched.last().operators().iter().enumerate() {
                out[iz * nx + ix] = later.conjugated_by(op)?.trace().re;
            }
        }
        out[nz * nx] = denom;
        Ok(())
    }

    fn finish(&self, acc: &MomentAccumulator, seed: u64) -> Result<McCpfTable> {
        let k = self.width();
        let nd = k - 1;
        let mut unit = vec![0.0; k];
        unit[nd] = 1.0;
        let denom = acc.estimate(&unit, seed);
        if !(denom.mean > 3.0 * denom.stderr) || denom.mean <= ZERO_PROBABILITY {
            return Err(Error::DegeneratePostSelection { weight: denom.mean });
        }
        let d = denom.mean;
        let probs: Vec<f64> = (0..nd).map(|i| acc.mean(i) / d).collect();
        let mut table = CpfProbabilityTable::new(
            self.sched.conditioning().to_vec(),
            self.sched.last().outcomes().to_vec(),
            self.sched.first().outcomes().to_vec(),
            probs.clone(),
        )?;
        // Delta method: dP = (dq − P dD)/D.
        let stderr = (0..nd)
            .map(|i| {
                let mut w = vec![0.0; k];
                w[i] = 1.0 / d;
                w[nd] = -probs[i] / d;
                acc.linear_stderr(&w)
            })
            .collect();
        table.set_stderr(stderr);
        let grad = table.correlation_gradient();
        let mut w: Vec<f64> = grad.iter().map(|g| g / d).collect();
        w.push(-grad.iter().zip(&probs).map(|(g, p)| g * p).sum::<f64>() / d);
        let correlation =
            McEstimate { mean: table.correlation(), stderr: acc.linear_stderr(&w), n_traj: acc.count(), seed };
        Ok(McCpfTable { table, correlation })
    }
}

fn schedule_phases(traj: &NoiseTrajectory, times: &[f64], out: &mut Vec<f64>) {
    out.clear();
    out.extend(times.windows(2).map(|w| traj.phase(w[0], w[1])));
}

/// Noise-averaged `P(z, x | y₁…yₙ)` for any `n ≥ 1`.
pub fn cpf_table_stochastic_n<E: Executor + ?Sized>(
    system: &StochasticSystem,
    sched: &MeasurementSchedule,
    noise: &NoiseModel,
    n_traj: usize,
    seed: u64,
    exec: &E,
) -> Result<McCpfTable> {
    check_ensemble(n_traj)?;
    if sched.times()[0] < 0.0 {
        return Err(Error::Config("noise trajectories start at t = 0".into()));
    }
    let kernel = WeightKernel::new(system, sched)?;
    let grid = TimeGrid::for_noise(noise, sched.times())?;
    let width = kernel.width();
    let acc = run_batches(exec, n_traj, || vec![MomentAccumulator::new(width)], |i, acc| {
        let traj = sample_trajectory(noise, &grid, seed, i)?;
        let mut phases = Vec::new();
        let mut row = Vec::new();
        schedule_phases(&traj, sched.times(), &mut phases);
        kernel.record(&phases, &mut row)?;
        acc[0].push(&row);
        Ok(())
    })?;
    kernel.finish(&acc[0], seed)
}

/// Three-measurement noise-averaged table.
pub fn cpf_table_stochastic<E: Executor + ?Sized>(
    system: &StochasticSystem,
    sched: &MeasurementSchedule,
    noise: &NoiseModel,
    n_traj: usize,
    seed: u64,
    exec: &E,
) -> Result<McCpfTable> {
    if sched.order() != 1 {
        return Err(Error::Config("three-measurement path needs exactly one intermediate measurement".into()));
    }
    cpf_table_stochastic_n(system, sched, noise, n_traj, seed, exec)
}

/// Tables on the `(t, τ)` grid, row-major over `t` then `τ`, all from one
/// trajectory ensemble. `sched` supplies the measurements and conditioning;
/// its times are replaced by `(0, t, t + τ)`.
#[allow(clippy::too_many_arguments)]
pub fn cpf_grid_stochastic<E: Executor + ?Sized>(
    system: &StochasticSystem,
    sched: &MeasurementSchedule,
    noise: &NoiseModel,
    ts: &[f64],
    taus: &[f64],
    n_traj: usize,
    seed: u64,
    exec: &E,
) -> Result<Vec<Result<McCpfTable>>> {
    check_ensemble(n_traj)?;
    if sched.order() != 1 {
        return Err(Error::Config("grid sweeps need exactly one intermediate measurement".into()));
    }
    let cells = ts
        .iter()
        .flat_map(|&t| taus.iter().map(move |&tau| (t, tau)))
        .map(|(t, tau)| sched.with_intervals(t, tau))
        .collect::<Result<Vec<_>>>()?;
    let kernels = cells.iter().map(|s| WeightKernel::new(system, s)).collect::<Result<Vec<_>>>()?;
    let checkpoints: Vec<f64> = cells.iter().flat_map(|s| s.times().iter().copied()).collect();
    let grid = TimeGrid::for_noise(noise, &checkpoints)?;
    let width = kernels.first().map_or(1, WeightKernel::width);
    let acc = run_batches(
        exec,
        n_traj,
        || (0..cells.len()).map(|_| MomentAccumulator::new(width)).collect(),
        |i, acc| {
            let traj = sample_trajectory(noise, &grid, seed, i)?;
            let mut phases = Vec::new();
            let mut row = Vec::new();
            for ((s, kernel), a) in cells.iter().zip(&kernels).zip(acc.iter_mut()) {
                schedule_phases(&traj, s.times(), &mut phases);
                kernel.record(&phases, &mut row)?;
                a.push(&row);
            }
            Ok(())
        },
    )?;
    Ok(kernels.iter().zip(&acc).map(|(k, a)| k.finish(a, seed)).collect())
}

/// `f(t)`, `f(τ)` and `f(t,τ)` of the dephasing qubit, estimated on the
/// same trajectories as [`cpf_table_stochastic`] with times `(0, t, t+τ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct DephasingFastPath {
    pub f_t: McEstimate,
    pub f_tau: McEstimate,
    pub f_t_tau: McEstimate,
    /// `Cov(cos 2Φ(0,t), cos 2Φ(t,t+τ))`.
    pub covariance: McEstimate,
}

impl DephasingFastPath {
    /// `P(zx|y) = ¼[1 + xy f(t) + zy f(τ) + zx f(t,τ)]`, outcomes ordered
    /// `(+1, −1)`.
    pub fn table(&self, y: Label) -> Result<CpfProbabilityTable> {
        dephasing_table(self.f_t.mean, self.f_tau.mean, self.f_t_tau.mean, y)
    }

    pub fn correlation(&self) -> f64 {
        self.covariance.mean
    }
}

/// Three-measurement x̂-basis table of the dephasing qubit in terms of the
/// coherence factors.
pub fn dephasing_table(f_t: f64, f_tau: f64, f_t_tau: f64, y: Label) -> Result<CpfProbabilityTable> {
    if y != 1 && y != -1 {
        return Err(Error::Config(format!("conditioning outcome must be ±1, got {y}")));
    }
    let yf = y as f64;
    let pm = [1.0, -1.0];
    let outcomes: Vec<Outcome> = pm.iter().map(|&v| Outcome { label: v as Label, value: v }).collect();
    let mut probs = Vec::with_capacity(4);
    for z in pm {
        for x in pm {
            probs.push(0.25 * (1.0 + x * yf * f_t + z * yf * f_tau + z * x * f_t_tau));
        }
    }
    CpfProbabilityTable::new(vec![y], outcomes.clone(), outcomes, probs)
}

/// Estimates the dephasing coherence factors directly from the phases.
pub fn dephasing_fast_path<E: Executor + ?Sized>(
    noise: &NoiseModel,
    t: f64,
    tau: f64,
    n_traj: usize,
    seed: u64,
    exec: &E,
) -> Result<DephasingFastPath> {
    let mut cells = dephasing_fast_grid(noise, &[t], &[tau], n_traj, seed, exec)?;
    Ok(cells.remove(0))
}

/// [`dephasing_fast_path`] on the `(t, τ)` grid, row-major over `t` then
/// `τ`, from one trajectory ensemble. Uses the same trajectories as
/// [`cpf_grid_stochastic`] with the same axes.
pub fn dephasing_fast_grid<E: Executor + ?Sized>(
    noise: &NoiseModel,
    ts: &[f64],
    taus: &[f64],
    n_traj: usize,
    seed: u64,
    exec: &E,
) -> Result<Vec<DephasingFastPath>> {
    check_ensemble(n_traj)?;
    if ts.iter().chain(taus).any(|v| !(*v >= 0.0)) {
        return Err(Error::Config("intervals must be non-negative".into()));
    }
    let cells: Vec<(f64, f64)> = ts.iter().flat_map(|&t| taus.iter().map(move |&tau| (t, tau))).collect();
    let checkpoints: Vec<f64> = cells.iter().flat_map(|&(t, tau)| [0.0, t, t + tau]).collect();
    let grid = TimeGrid::for_noise(noise, &checkpoints)?;
    // Each distinct time is looked up once per trajectory.
    let mut times = checkpoints.clone();
    times.sort_by(f64::total_cmp);
    times.dedup_by(|a, b| a.to_bits() == b.to_bits());
    let slot = |x: f64| times.binary_search_by(|p| p.total_cmp(&x)).expect("checkpoint is listed");
    let slots: Vec<[usize; 3]> = cells.iter().map(|&(t, tau)| [slot(0.0), slot(t), slot(t + tau)]).collect();
    let acc = run_batches(
        exec,
        n_traj,
        || (0..cells.len()).map(|_| MomentAccumulator::new(3)).collect(),
        |i, acc| {
            let traj = sample_trajectory(noise, &grid, seed, i)?;
            let phases: Vec<f64> = times.iter().map(|&s| traj.phase_at(s)).collect();
            let mut u = 0.0;
            for (k, (&[s0, s1, s2], a)) in slots.iter().zip(acc.iter_mut()).enumerate() {
                if k % taus.len() == 0 {
                    u = Float::cos(2.0 * (phases[s1] - phases[s0]));
                }
                let v = Float::cos(2.0 * (phases[s2] - phases[s1]));
                a.push(&[u, v, u * v]);
            }
            Ok(())
        },
    )?;
    Ok(acc
        .iter()
        .map(|acc| {
            let (mu, mv) = (acc.mean(0), acc.mean(1));
            let mut covariance = acc.estimate(&[0.0, 0.0, 1.0], seed);
            covariance.mean -= mu * mv;
            covariance.stderr = acc.linear_stderr(&[-mv, -mu, 1.0]);
            DephasingFastPath {
                f_t: acc.estimate(&[1.0, 0.0, 0.0], seed),
                f_tau: acc.estimate(&[0.0, 1.0, 0.0], seed),
                f_t_tau: acc.estimate(&[0.0, 0.0, 1.0], seed),
                covariance,
            }
        })
        .collect())
}

/// Outcome of the factorization check `mean[uv] = mean[u]·mean[v]` for
/// `u = cos 2Φ(0,t)`, `v = cos 2Φ(t,t+τ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FactorizationReport {
    pub t: f64,
    pub tau: f64,
    pub covariance: McEstimate,
    pub z_score: f64,
    pub passed: bool,
}

pub fn white_factorization_test<E: Executor + ?Sized>(
    noise: &NoiseModel,
    t: f64,
    tau: f64,
    n_traj: usize,
    seed: u64,
    exec: &E,
) -> Result<FactorizationReport> {
    let fast = dephasing_fast_path(noise, t, tau, n_traj, seed, exec)?;
    let z_score = fast.covariance.z_score(0.0);
    Ok(FactorizationReport { t, tau, covariance: fast.covariance, z_score, passed: z_score.abs() <= 3.0 })
}
