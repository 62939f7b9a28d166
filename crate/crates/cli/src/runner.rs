//! Turns a configuration into a grid of `C_pf` values.

use cpfsim_core::cpf::classical::classical_cpf;
use cpfsim_core::cpf::{cpf_table_bipartite, BipartiteModel, HiddenMarkovChain, MeasurementSchedule, MiddleMeasurement};
use cpfsim_core::cpf::ClassicalChain;
use cpfsim_core::exec::Executor;
use cpfsim_core::measure::{Axis, KrausSet, Label, Preparation};
use cpfsim_core::models::{build_bipartite, cpf_prob_spin_analytic, x_schedule, SpinBathParams, MAX_DENSE_BATH};
use cpfsim_core::qmat::{normalized, CMatrix, DensityMatrix, HermitianMatrix, C64};
use cpfsim_core::stochastic::{dephasing_fast_grid, NoiseModel};
use cpfsim_core::Error;

use crate::config::{
    AxisSpec, BipartiteConfig, ChainConfig, Complex, ExperimentConfig, MatrixSpec, MeasurementSpec, ModelConfig,
    NoiseSpec, SpinBathConfig, StateSpec, StochasticConfig,
};
use crate::error::CliError;
use crate::grid::{Cell, CpfGrid, Metadata};

/// Evaluates every cell of the configured grid.
pub fn run<E: Executor>(cfg: &ExperimentConfig, exec: &E) -> Result<CpfGrid, CliError> {
    let ts = cfg.grid.t_axis();
    let taus = cfg.grid.tau_axis();
    let cells: Vec<(f64, f64)> = ts.iter().flat_map(|&t| taus.iter().map(move |&tau| (t, tau))).collect();
    let values = match &cfg.model {
        ModelConfig::Spinbath(sb) => spin_bath_cells(sb, &cells, cfg.y, exec)?,
        ModelConfig::Stochastic(st) => {
            let mc = cfg.mc.expect("validated: stochastic runs carry MC settings");
            let noise = noise_model(st)?;
            dephasing_fast_grid(&noise, &ts, &taus, mc.n_traj, mc.seed, exec)?
                .into_iter()
                .map(|f| Cell { cpf: f.correlation(), stderr: f.covariance.stderr, error: None })
                .collect()
        }
        ModelConfig::GenericBipartite(bp) => {
            let (model, sched) = bipartite(bp, cfg.y)?;
            collect(exec.map(cells.len(), |k| {
                let (t, tau) = cells[k];
                sched.with_intervals(t, tau).and_then(|s| cpf_table_bipartite(&model, &s)).map(|tab| tab.correlation())
            }))?
        }
        ModelConfig::ClassicalChain(ch) => chain_cells(ch, &cells, cfg.y as usize, exec)?,
    };
    let metadata = Metadata {
        config_sha256: cfg.hash(),
        model: cfg.model.name().to_string(),
        seed: cfg.mc.map(|m| m.seed),
        n_traj: cfg.mc.map(|m| m.n_traj),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
    };
    CpfGrid::new(ts, taus, cfg.y, values, metadata)
}

/// Degenerate conditioning marks the cell; any other failure aborts the run.
fn collect(results: Vec<cpfsim_core::Result<f64>>) -> Result<Vec<Cell>, CliError> {
    results
        .into_iter()
        .map(|r| match r {
            Ok(c) => Ok(Cell::exact(c)),
            Err(e @ (Error::DegeneratePostSelection { .. } | Error::ZeroProbabilityOutcome { .. })) => {
                Ok(Cell::failed(e.to_string()))
            }
            Err(e) => Err(e.into()),
        })
        .collect()
}

pub fn spin_bath_params(sb: &SpinBathConfig) -> Result<SpinBathParams, CliError> {
    let couplings = sb.couplings.clone().unwrap_or_else(|| vec![sb.g / (sb.n.max(1) as f64).sqrt(); sb.n]);
    let pair = |a: Complex, b: Complex, field: &str| {
        let (a, b) = (a.value(), b.value());
        let norm = (a.norm_sqr() + b.norm_sqr()).sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(CliError::field(field, "amplitudes must not both vanish".into()));
        }
        Ok((a / norm, b / norm))
    };
    let spin = pair(sb.alpha, sb.beta, "model.alpha")?;
    let system = pair(sb.a, sb.b, "model.a")?;
    Ok(SpinBathParams::new(couplings, vec![spin; sb.n], system)?)
}

/// Closed form for a system started in `|+⟩`, dense evolution otherwise.
fn spin_bath_cells<E: Executor>(
    sb: &SpinBathConfig,
    cells: &[(f64, f64)],
    y: Label,
    exec: &E,
) -> Result<Vec<Cell>, CliError> {
    let params = spin_bath_params(sb)?;
    if params.starts_in_plus() {
        return collect(exec.map(cells.len(), |k| {
            let (t, tau) = cells[k];
            cpf_prob_spin_analytic(&params, t, tau, y).map(|tab| tab.correlation())
        }));
    }
    if params.len() > MAX_DENSE_BATH {
        return Err(CliError::field(
            "model.n",
            format!("a system not started in |+⟩ needs the dense path, limited to {MAX_DENSE_BATH} spins"),
        ));
    }
    let model = build_bipartite(&params)?;
    collect(exec.map(cells.len(), |k| {
        let (t, tau) = cells[k];
        x_schedule(t, tau, y).and_then(|s| cpf_table_bipartite(&model, &s)).map(|tab| tab.correlation())
    }))
}

pub fn noise_model(st: &StochasticConfig) -> Result<NoiseModel, CliError> {
    let tau_c = ExperimentConfig::tau_c(st)?;
    let noise = match st.noise {
        NoiseSpec::Ou => {
            let (g, tc) = (st.g.unwrap_or(1.0), tau_c.unwrap_or(f64::INFINITY));
            if tc.is_infinite() {
                NoiseModel::frozen(g)?
            } else {
                NoiseModel::ornstein_uhlenbeck(g, tc)?
            }
        }
        NoiseSpec::White => NoiseModel::white(st.gamma_w.unwrap_or(0.0))?,
        NoiseSpec::Dichotomic => NoiseModel::dichotomic(st.g.unwrap_or(1.0), tau_c.unwrap_or(f64::INFINITY))?,
    };
    Ok(noise)
}

fn vector(v: &[Complex]) -> Vec<C64> {
    v.iter().map(|c| c.value()).collect()
}

fn matrix(m: &MatrixSpec, n: usize, field: &str) -> Result<CMatrix, CliError> {
    if m.len() != n || m.iter().any(|row| row.len() != n) {
        return Err(CliError::field(field, format!("expected a {n}x{n} matrix")));
    }
    Ok(CMatrix::from_fn(n, n, |i, j| m[i][j].value()))
}

fn measurement(spec: &MeasurementSpec, d: usize, field: &str) -> Result<KrausSet, CliError> {
    let with_values = |set: KrausSet, values: &Option<Vec<f64>>| match values {
        Some(v) => set.with_values(v),
        None => Ok(set),
    };
    let set = match spec {
        MeasurementSpec::Axis { axis } => {
            if d != 2 {
                return Err(CliError::field(field, "axis reads need a qubit system".into()));
            }
            KrausSet::qubit_axis(match axis {
                AxisSpec::X => Axis::X,
                AxisSpec::Y => Axis::Y,
                AxisSpec::Z => Axis::Z,
            })
        }
        MeasurementSpec::Projective { labels, states, values } => {
            if states.iter().any(|s| s.len() != d) {
                return Err(CliError::field(field, format!("states must have {d} components")));
            }
            let states: Vec<Vec<C64>> = states.iter().map(|s| vector(s)).collect();
            KrausSet::projective(labels, &states).and_then(|s| with_values(s, values))
                .map_err(|e| CliError::field(field, e.to_string()))?
        }
        MeasurementSpec::Kraus { labels, operators, values } => {
            let ops = operators.iter().map(|m| matrix(m, d, field)).collect::<Result<Vec<_>, _>>()?;
            KrausSet::with_labels(labels, ops).and_then(|s| with_values(s, values))
                .map_err(|e| CliError::field(field, e.to_string()))?
        }
    };
    Ok(set)
}

fn bipartite(bp: &BipartiteConfig, y: Label) -> Result<(BipartiteModel, MeasurementSchedule), CliError> {
    let (ds, de) = (bp.d_s, bp.d_e);
    let d = ds * de;
    let h = HermitianMatrix::new(matrix(&bp.hamiltonian, d, "model.hamiltonian")?)
        .map_err(|e| CliError::field("model.hamiltonian", e.to_string()))?;
    let state_err = |e: Error| CliError::field("model.initial_state", e.to_string());
    let rho0 = match &bp.initial_state {
        StateSpec::Product { system, environment } => {
            if system.len() != ds || environment.len() != de {
                return Err(CliError::field("model.initial_state", format!("expected {ds} and {de} components")));
            }
            let s = normalized(&vector(system)).map_err(state_err)?;
            let e = normalized(&vector(environment)).map_err(state_err)?;
            let psi: Vec<C64> = s.iter().flat_map(|a| e.iter().map(move |b| a * b)).collect();
            DensityMatrix::pure(&psi).map_err(state_err)?
        }
        StateSpec::Pure { vector: v } => {
            if v.len() != d {
                return Err(CliError::field("model.initial_state", format!("expected {d} components")));
            }
            DensityMatrix::pure(&normalized(&vector(v)).map_err(state_err)?).map_err(state_err)?
        }
        StateSpec::Density { matrix: m } => {
            DensityMatrix::new(matrix(m, d, "model.initial_state")?).map_err(state_err)?
        }
    };
    let model = BipartiteModel::new(ds, de, h, rho0)?;
    let first = measurement(&bp.first, ds, "model.first")?;
    let last = measurement(&bp.last, ds, "model.last")?;
    let mid = measurement(&bp.middle, ds, "model.middle")?;
    let middle = match &bp.preparation {
        None => MiddleMeasurement::plain(mid),
        Some(targets) => {
            Preparation::new(targets.iter().map(|t| (t.label, vector(&t.state))).collect())
                .and_then(|p| MiddleMeasurement::prepared(mid, p))
                .map_err(|e| CliError::field("model.preparation", e.to_string()))?
        }
    };
    let sched = MeasurementSchedule::three_point(first, middle, last, 0.0, 0.0, y)
        .map_err(|e| CliError::field("y", e.to_string()))?;
    Ok((model, sched))
}

fn chain_cells<E: Executor>(ch: &ChainConfig, cells: &[(f64, f64)], y: usize, exec: &E) -> Result<Vec<Cell>, CliError> {
    let k = ch.initial.len();
    if ch.kernel.len() != k || ch.kernel.iter().any(|r| r.len() != k) {
        return Err(CliError::field("model.kernel", format!("expected a {k}x{k} matrix")));
    }
    let kernel: Vec<f64> = ch.kernel.iter().flatten().copied().collect();
    let observed = match &ch.emission {
        Some(e) => e.first().map_or(0, |r| r.len()),
        None => k,
    };
    if ch.values.len() != observed {
        return Err(CliError::field("model.values", format!("expected {observed} observable values")));
    }
    let steps = |v: f64| (v / ch.dt).round() as usize;
    let results = exec.map(cells.len(), |c| -> Result<Cell, CliError> {
        let (t, tau) = cells[c];
        let hidden = ClassicalChain::homogeneous(ch.initial.clone(), &kernel, &[steps(t), steps(tau)])
            .map_err(|e| CliError::field("model", e.to_string()))?;
        let r = match &ch.emission {
            None => classical_cpf(&hidden, &ch.values, &[y]),
            Some(e) => {
                if e.len() != k || e.iter().any(|r| r.len() != observed) {
                    return Err(CliError::field("model.emission", format!("expected {k} rows of {observed}")));
                }
                let hmm = HiddenMarkovChain::new(hidden, observed, e.iter().flatten().copied().collect())
                    .map_err(|e| CliError::field("model.emission", e.to_string()))?;
                classical_cpf(&hmm, &ch.values, &[y])
            }
        };
        Ok(collect(vec![r])?.remove(0))
    });
    results.into_iter().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use cpfsim_core::exec::Sequential;

    fn run_json(text: &str) -> CpfGrid {
        run(&ExperimentConfig::from_json(text).unwrap(), &Sequential).unwrap()
    }

    #[test]
    fn single_cell_at_origin_is_zero() {
        let g = run_json(
            r#"{"model": {"kind": "spinbath", "n": 50, "alpha": 0.5, "beta": 0.5},
                "grid": {"t_min": 0, "t_max": 0, "n_t": 1, "tau_min": 0, "tau_max": 0, "n_tau": 1}}"#,
        );
        assert_eq!(g.cells.len(), 1);
        assert_eq!(g.cells[0].cpf, 0.0);
    }

    #[test]
    fn dense_route_for_tilted_system_state() {
        let g = run_json(
            r#"{"model": {"kind": "spinbath", "n": 3, "alpha": 0.6, "beta": 0.8, "a": 0.8, "b": [0, 0.6]},
                "grid": {"t_min": 0, "t_max": 1, "n_t": 3, "tau_min": 0, "tau_max": 1, "n_tau": 3}}"#,
        );
        assert!(g.cells.iter().all(|c| c.cpf.is_finite()));
        assert!(g.cells.iter().any(|c| c.cpf.abs() > 1e-3));
    }

    #[test]
    fn bipartite_matches_spin_bath_route() {
        // One bath spin, g = 1: H = σz ⊗ σz, system |+⟩, spin (|↑⟩ + |↓⟩)/√2.
        let bp = run_json(
            r#"{"model": {"kind": "generic-bipartite", "d_s": 2, "d_e": 2,
                  "hamiltonian": [[1,0,0,0],[0,-1,0,0],[0,0,-1,0],[0,0,0,1]],
                  "initial_state": {"type": "product", "system": [1, 1], "environment": [1, 1]},
                  "first": {"type": "axis", "axis": "x"},
                  "middle": {"type": "axis", "axis": "x"},
                  "last": {"type": "axis", "axis": "x"}},
                "grid": {"t_min": 0, "t_max": 1.5, "n_t": 4, "tau_min": 0, "tau_max": 1.5, "n_tau": 4}}"#,
        );
        let sb = run_json(
            r#"{"model": {"kind": "spinbath", "n": 1, "alpha": 1, "beta": 1},
                "grid": {"t_min": 0, "t_max": 1.5, "n_t": 4, "tau_min": 0, "tau_max": 1.5, "n_tau": 4}}"#,
        );
        for (a, b) in bp.cells.iter().zip(&sb.cells) {
            assert!((a.cpf - b.cpf).abs() < 1e-10, "{} vs {}", a.cpf, b.cpf);
        }
    }

    #[test]
    fn impossible_conditioning_marks_cells() {
        // z reads on a z eigenstate: y = -1 never happens.
        let g = run_json(
            r#"{"model": {"kind": "generic-bipartite", "d_s": 2, "d_e": 1,
                  "hamiltonian": [[0,0],[0,0]],
                  "initial_state": {"type": "pure", "vector": [1, 0]},
                  "first": {"type": "axis", "axis": "z"},
                  "middle": {"type": "axis", "axis": "z"},
                  "last": {"type": "axis", "axis": "z"}},
                "y": -1,
                "grid": {"t_min": 0, "t_max": 1, "n_t": 2, "tau_min": 0, "tau_max": 1, "n_tau": 2}}"#,
        );
        assert_eq!(g.failed_cells().count(), 4);
        assert!(g.cells.iter().all(|c| c.cpf.is_nan()));
    }

    #[test]
    fn hidden_markov_chain_is_correlated_and_plain_chain_is_not() {
        let base = r#"{"model": {"kind": "classical-chain", "initial": [0.5, 0.5],
                "kernel": [[0.95, 0.05], [0.05, 0.95]], "values": [1, -1] EMISSION},
              "y": 0,
              "grid": {"t_min": 1, "t_max": 3, "n_t": 3, "tau_min": 1, "tau_max": 3, "n_tau": 3}}"#;
        let plain = run_json(&base.replace("EMISSION", ""));
        assert!(plain.cells.iter().all(|c| c.cpf.abs() < 1e-13));
        let hmm = run_json(&base.replace("EMISSION", r#", "emission": [[0.9, 0.1], [0.3, 0.7]]"#));
        assert!(hmm.cells.iter().all(|c| c.cpf.abs() > 1e-3));
    }

    #[test]
    fn stochastic_cells_carry_errors() {
        let g = run_json(
            r#"{"model": {"kind": "stochastic", "noise": "ou", "g": 1, "tau_c": "inf"},
                "mc": {"n_traj": 2000, "seed": 5},
                "grid": {"t_min": 0.5, "t_max": 1, "n_t": 2, "tau_min": 0.5, "tau_max": 1, "n_tau": 2}}"#,
        );
        assert!(g.cells.iter().all(|c| c.stderr > 0.0 && c.cpf.is_finite()));
        assert_eq!(g.metadata.seed, Some(5));
    }
}
