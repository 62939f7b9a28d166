//! Experiment configuration: a single JSON document, strictly validated.

use std::path::{Path, PathBuf};

use cpfsim_core::measure::Label;
use cpfsim_core::qmat::C64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub grid: GridSpec,
    /// Conditioning outcome of the intermediate measurement.
    #[serde(default = "default_y")]
    pub y: Label,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mc: Option<McSettings>,
    #[serde(default, skip_serializing_if = "OutputSpec::is_empty")]
    pub output: OutputSpec,
}

fn default_y() -> Label {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ModelConfig {
    Spinbath(SpinBathConfig),
    Stochastic(StochasticConfig),
    GenericBipartite(BipartiteConfig),
    ClassicalChain(ChainConfig),
}

impl ModelConfig {
    pub fn name(&self) -> &'static str {
        match self {
            ModelConfig::Spinbath(_) => "spinbath",
            ModelConfig::Stochastic(_) => "stochastic",
            ModelConfig::GenericBipartite(_) => "generic-bipartite",
            ModelConfig::ClassicalChain(_) => "classical-chain",
        }
    }

    pub fn is_stochastic(&self) -> bool {
        matches!(self, ModelConfig::Stochastic(_))
    }
}

/// A real number or an `[re, im]` pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Complex {
    Real(f64),
    Pair([f64; 2]),
}

impl Complex {
    pub fn value(self) -> C64 {
        match self {
            Complex::Real(re) => C64::new(re, 0.0),
            Complex::Pair([re, im]) => C64::new(re, im),
        }
    }
}

/// Qubit coupled to `n` bath spins through `σ_z ⊗ σ_z^(k)`. Amplitude pairs
/// are normalized on load, so `alpha = beta = 0.5` is an equal-weight spin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpinBathConfig {
    pub n: usize,
    /// Total coupling; `g_k = g/√N` unless `couplings` is given.
    #[serde(default = "one")]
    pub g: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub couplings: Option<Vec<f64>>,
    pub alpha: Complex,
    pub beta: Complex,
    #[serde(default = "complex_one")]
    pub a: Complex,
    #[serde(default = "complex_zero")]
    pub b: Complex,
}

fn one() -> f64 {
    1.0
}

fn complex_one() -> Complex {
    Complex::Real(1.0)
}

fn complex_zero() -> Complex {
    Complex::Real(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseSpec {
    Ou,
    White,
    Dichotomic,
}

/// Correlation time: a positive number or `"inf"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CorrelationTime {
    Finite(f64),
    Named(String),
}

impl CorrelationTime {
    fn value(&self, field: &str) -> Result<f64, CliError> {
        match self {
            CorrelationTime::Finite(v) => Ok(*v),
            CorrelationTime::Named(s) if s == "inf" => Ok(f64::INFINITY),
            CorrelationTime::Named(s) => Err(CliError::field(field, format!("expected a number or \"inf\", got {s:?}"))),
        }
    }
}

/// Qubit under `ξ(t) σ_z`, started in `|+⟩` and read along x̂.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StochasticConfig {
    pub noise: NoiseSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau_c: Option<CorrelationTime>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma_w: Option<f64>,
}

/// Complex matrix as a list of rows.
pub type MatrixSpec = Vec<Vec<Complex>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum StateSpec {
    /// Pure product state `|ψ_S⟩ ⊗ |ψ_E⟩`.
    Product { system: Vec<Complex>, environment: Vec<Complex> },
    /// Pure joint state, system index major.
    Pure { vector: Vec<Complex> },
    Density { matrix: MatrixSpec },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AxisSpec {
    X,
    Y,
    Z,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MeasurementSpec {
    /// Projective qubit read along a Bloch axis, outcomes `±1`.
    Axis { axis: AxisSpec },
    /// Rank-one projectors onto the given states.
    Projective {
        labels: Vec<Label>,
        states: Vec<Vec<Complex>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        values: Option<Vec<f64>>,
    },
    Kraus {
        labels: Vec<Label>,
        operators: Vec<MatrixSpec>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        values: Option<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreparationTarget {
    pub label: Label,
    pub state: Vec<Complex>,
}

/// System of dimension `d_s` and environment of dimension `d_e` under a
/// total Hamiltonian, system index major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BipartiteConfig {
    pub d_s: usize,
    pub d_e: usize,
    pub hamiltonian: MatrixSpec,
    pub initial_state: StateSpec,
    pub first: MeasurementSpec,
    pub middle: MeasurementSpec,
    /// Causal break after the intermediate read.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preparation: Option<Vec<PreparationTarget>>,
    pub last: MeasurementSpec,
}

/// Time-homogeneous Markov chain sampled every `dt`, optionally seen
/// through a noisy emission matrix. `t` and `τ` are rounded to whole steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainConfig {
    pub initial: Vec<f64>,
    pub kernel: Vec<Vec<f64>>,
    #[serde(default = "one")]
    pub dt: f64,
    /// Observable value of each observed symbol.
    pub values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub emission: Option<Vec<Vec<f64>>>,
}

/// Uniform axes in units of `1/g`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub t_min: f64,
    pub t_max: f64,
    pub n_t: usize,
    pub tau_min: f64,
    pub tau_max: f64,
    pub n_tau: usize,
}

impl GridSpec {
    pub fn t_axis(&self) -> Vec<f64> {
        axis(self.t_min, self.t_max, self.n_t)
    }

    pub fn tau_axis(&self) -> Vec<f64> {
        axis(self.tau_min, self.tau_max, self.n_tau)
    }
}

/// `n` points from `min` to `max`, both ends exact.
pub fn axis(min: f64, max: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![min];
    }
    let last = (n - 1) as f64;
    (0..n).map(|i| if i + 1 == n { max } else { min + (max - min) * (i as f64 / last) }).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct McSettings {
    pub n_traj: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub json: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub svg: Option<PathBuf>,
}

impl OutputSpec {
    pub fn is_empty(&self) -> bool {
        self.csv.is_none() && self.json.is_none() && self.svg.is_none()
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        let cfg: Self = serde_json::from_str(text).map_err(|e| CliError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json(&text)
    }

    /// Applies command-line overrides of the Monte Carlo settings.
    pub fn with_overrides(mut self, seed: Option<u64>, n_traj: Option<usize>) -> Result<Self, CliError> {
        if seed.is_none() && n_traj.is_none() {
            return Ok(self);
        }
        let mc = self.mc.as_mut().ok_or_else(|| {
            CliError::field("mc", "--seed and --traj only apply to stochastic models".to_string())
        })?;
        if let Some(seed) = seed {
            mc.seed = seed;
        }
        if let Some(n) = n_traj {
            mc.n_traj = n;
        }
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let g = &self.grid;
        for (name, v) in [("grid.t_min", g.t_min), ("grid.t_max", g.t_max), ("grid.tau_min", g.tau_min), ("grid.tau_max", g.tau_max)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(CliError::field(name, format!("must be finite and non-negative, got {v}")));
            }
        }
        if g.n_t < 1 {
            return Err(CliError::field("grid.n_t", "must be at least 1".into()));
        }
        if g.n_tau < 1 {
            return Err(CliError::field("grid.n_tau", "must be at least 1".into()));
        }
        if g.t_max < g.t_min {
            return Err(CliError::field("grid.t_max", "must not be below grid.t_min".into()));
        }
        if g.tau_max < g.tau_min {
            return Err(CliError::field("grid.tau_max", "must not be below grid.tau_min".into()));
        }
        match (&self.model, &self.mc) {
            (ModelConfig::Stochastic(_), None) => {
                return Err(CliError::field("mc", "required for the stochastic model".into()));
            }
            (m, Some(_)) if !m.is_stochastic() => {
                return Err(CliError::field("mc", format!("not allowed for the {} model", m.name())));
            }
            (_, Some(mc)) if mc.n_traj < cpfsim_core::stochastic::MIN_TRAJECTORIES => {
                return Err(CliError::field(
                    "mc.n_traj",
                    format!("must be at least {}", cpfsim_core::stochastic::MIN_TRAJECTORIES),
                ));
            }
            _ => {}
        }
        match &self.model {
            ModelConfig::Spinbath(sb) => {
                if !(sb.g.is_finite() && sb.g >= 0.0) {
                    return Err(CliError::field("model.g", "must be finite and non-negative".into()));
                }
                if let Some(c) = &sb.couplings {
                    if c.len() != sb.n {
                        return Err(CliError::field("model.couplings", format!("{} values for n = {}", c.len(), sb.n)));
                    }
                }
                self.require_pm_y()?;
            }
            ModelConfig::Stochastic(st) => {
                self.require_pm_y()?;
                match st.noise {
                    NoiseSpec::Ou | NoiseSpec::Dichotomic => {
                        if st.g.is_none() {
                            return Err(CliError::field("model.g", "required for this noise".into()));
                        }
                        match &st.tau_c {
                            None => return Err(CliError::field("model.tau_c", "required for this noise".into())),
                            Some(tc) => {
                                tc.value("model.tau_c")?;
                            }
                        }
                        if st.gamma_w.is_some() {
                            return Err(CliError::field("model.gamma_w", "only used by white noise".into()));
                        }
                    }
                    NoiseSpec::White => {
                        if st.gamma_w.is_none() {
                            return Err(CliError::field("model.gamma_w", "required for white noise".into()));
                        }
                        if st.g.is_some() || st.tau_c.is_some() {
                            return Err(CliError::field("model", "white noise takes only gamma_w".into()));
                        }
                    }
                }
            }
            ModelConfig::GenericBipartite(bp) => {
                if bp.d_s < 1 || bp.d_e < 1 {
                    return Err(CliError::field("model.d_s", "dimensions must be at least 1".into()));
                }
            }
            ModelConfig::ClassicalChain(ch) => {
                if !(ch.dt.is_finite() && ch.dt > 0.0) {
                    return Err(CliError::field("model.dt", "must be positive".into()));
                }
                if self.y < 0 || self.y as usize >= ch.values.len() {
                    return Err(CliError::field("y", format!("must index one of the {} observed symbols", ch.values.len())));
                }
            }
        }
        Ok(())
    }

    fn require_pm_y(&self) -> Result<(), CliError> {
        if self.y != 1 && self.y != -1 {
            return Err(CliError::field("y", format!("must be +1 or -1 for x̂ reads, got {}", self.y)));
        }
        Ok(())
    }

    /// Correlation time of a stochastic model, `∞` for `"inf"`.
    pub fn tau_c(st: &StochasticConfig) -> Result<Option<f64>, CliError> {
        st.tau_c.as_ref().map(|t| t.value("model.tau_c")).transpose()
    }

    /// SHA-256 of the configuration that determines the cell values (output
    /// paths excluded), lowercase hex.
    pub fn hash(&self) -> String {
        let mut effective = self.clone();
        effective.output = OutputSpec::default();
        let bytes = serde_json::to_vec(&effective).expect("configuration serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SPIN: &str = r#"{
        "model": {"kind": "spinbath", "n": 3, "alpha": 0.5, "beta": 0.5},
        "grid": {"t_min": 0, "t_max": 1, "n_t": 3, "tau_min": 0, "tau_max": 1, "n_tau": 2}
    }"#;

    #[test]
    fn parses_minimal_spin_bath() {
        let cfg = ExperimentConfig::from_json(SPIN).unwrap();
        assert_eq!(cfg.y, 1);
        assert_eq!(cfg.grid.t_axis(), vec![0.0, 0.5, 1.0]);
        assert!(matches!(cfg.model, ModelConfig::Spinbath(SpinBathConfig { n: 3, .. })));
    }

    #[test]
    fn unknown_keys_rejected() {
        let bad = SPIN.replace("\"n\": 3", "\"n\": 3, \"spins\": 3");
        let err = ExperimentConfig::from_json(&bad).unwrap_err().to_string();
        assert!(err.contains("spins") && err.contains("line"), "{err}");
        let bad = SPIN.replace("\"n_tau\": 2", "\"n_tau\": 2, \"step\": 1");
        assert!(ExperimentConfig::from_json(&bad).is_err());
    }

    #[test]
    fn mc_required_iff_stochastic() {
        let with_mc = SPIN.replace("\"grid\"", "\"mc\": {\"n_traj\": 1000, \"seed\": 1}, \"grid\"");
        assert!(ExperimentConfig::from_json(&with_mc).unwrap_err().to_string().contains("mc"));
        let st = r#"{"model": {"kind": "stochastic", "noise": "ou", "g": 1, "tau_c": "inf"},
            "grid": {"t_min": 0, "t_max": 1, "n_t": 1, "tau_min": 0, "tau_max": 1, "n_tau": 1}}"#;
        assert!(ExperimentConfig::from_json(st).is_err());
        let st = st.replace("\"grid\"", "\"mc\": {\"n_traj\": 1000, \"seed\": 1}, \"grid\"");
        let cfg = ExperimentConfig::from_json(&st).unwrap();
        let ModelConfig::Stochastic(s) = &cfg.model else { panic!() };
        assert_eq!(ExperimentConfig::tau_c(s).unwrap(), Some(f64::INFINITY));
    }

    #[test]
    fn empty_grid_count_rejected() {
        let bad = SPIN.replace("\"n_t\": 3", "\"n_t\": 0");
        assert!(ExperimentConfig::from_json(&bad).unwrap_err().to_string().contains("grid.n_t"));
    }

    #[test]
    fn hash_ignores_outputs_but_not_seed() {
        let st = r#"{"model": {"kind": "stochastic", "noise": "white", "gamma_w": 0.5},
            "mc": {"n_traj": 1000, "seed": 1},
            "grid": {"t_min": 0, "t_max": 1, "n_t": 1, "tau_min": 0, "tau_max": 1, "n_tau": 1}}"#;
        let cfg = ExperimentConfig::from_json(st).unwrap();
        let mut moved = cfg.clone();
        moved.output.csv = Some("elsewhere.csv".into());
        assert_eq!(cfg.hash(), moved.hash());
        let reseeded = cfg.clone().with_overrides(Some(2), None).unwrap();
        assert_ne!(cfg.hash(), reseeded.hash());
        assert_eq!(cfg.hash().len(), 64);
    }

    #[test]
    fn complex_entries() {
        let m: MatrixSpec = serde_json::from_str("[[1, [0, -1]], [[0, 1], 2.5]]").unwrap();
        assert_eq!(m[0][1].value(), C64::new(0.0, -1.0));
        assert_eq!(m[1][1].value(), C64::new(2.5, 0.0));
    }
}
