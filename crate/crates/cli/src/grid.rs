//! Result grids and their CSV / JSON files.

use std::io::Write;
use std::path::Path;

use cpfsim_core::measure::Label;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

pub const CSV_HEADER: [&str; 5] = ["t", "tau", "y", "cpf", "stderr"];

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metadata {
    pub config_sha256: String,
    pub model: String,
    pub seed: Option<u64>,
    pub n_traj: Option<usize>,
    pub code_version: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub cpf: f64,
    /// Zero on exact paths.
    pub stderr: f64,
    /// Set for cells that could not be evaluated; `cpf` is NaN then.
    pub error: Option<String>,
}

impl Cell {
    pub fn exact(cpf: f64) -> Self {
        Self { cpf, stderr: 0.0, error: None }
    }

    pub fn failed(message: String) -> Self {
        Self { cpf: f64::NAN, stderr: f64::NAN, error: Some(message) }
    }
}

/// `C_pf` over the `(t, τ)` axes, row-major over `t` then `τ`.
#[derive(Debug, Clone, PartialEq)]
pub struct CpfGrid {
    pub t: Vec<f64>,
    pub tau: Vec<f64>,
    pub y: Label,
    pub cells: Vec<Cell>,
    pub metadata: Metadata,
}

#[derive(Serialize, Deserialize)]
struct JsonCell {
    t: f64,
    tau: f64,
    cpf: Option<f64>,
    stderr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonGrid {
    metadata: Metadata,
    y: Label,
    t: Vec<f64>,
    tau: Vec<f64>,
    cells: Vec<JsonCell>,
}

fn finite(v: f64) -> Option<f64> {
    v.is_finite().then_some(v)
}

/// Shortest decimal that parses back to the same bits.
fn fmt_f64(v: f64) -> String {
    ryu::Buffer::new().format(v).to_string()
}

impl CpfGrid {
    pub fn new(t: Vec<f64>, tau: Vec<f64>, y: Label, cells: Vec<Cell>, metadata: Metadata) -> Result<Self, CliError> {
        if t.is_empty() || tau.is_empty() || cells.len() != t.len() * tau.len() {
            return Err(CliError::Grid(format!("{} cells for a {}x{} grid", cells.len(), t.len(), tau.len())));
        }
        Ok(Self { t, tau, y, cells, metadata })
    }

    pub fn at(&self, i: usize, j: usize) -> &Cell {
        &self.cells[i * self.tau.len() + j]
    }

    pub fn failed_cells(&self) -> impl Iterator<Item = (f64, f64, &Cell)> + '_ {
        let n_tau = self.tau.len();
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, c)| c.error.is_some())
            .map(move |(k, c)| (self.t[k / n_tau], self.tau[k % n_tau], c))
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), CliError> {
        let m = &self.metadata;
        let opt = |v: Option<String>| v.unwrap_or_else(|| "none".into());
        writeln!(
            w,
            "# config_sha256={} model={} seed={} n_traj={} n_t={} n_tau={} version={}",
            m.config_sha256,
            m.model,
            opt(m.seed.map(|s| s.to_string())),
            opt(m.n_traj.map(|s| s.to_string())),
            self.t.len(),
            self.tau.len(),
            m.code_version
        )
        .map_err(|e| CliError::Grid(e.to_string()))?;
        let mut out = csv::Writer::from_writer(w);
        out.write_record(CSV_HEADER)?;
        let y = self.y.to_string();
        for (k, cell) in self.cells.iter().enumerate() {
            let (t, tau) = (self.t[k / self.tau.len()], self.tau[k % self.tau.len()]);
            out.write_record([fmt_f64(t), fmt_f64(tau), y.clone(), fmt_f64(cell.cpf), fmt_f64(cell.stderr)])?;
        }
        out.flush().map_err(|e| CliError::Grid(e.to_string()))?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv output is UTF-8")
    }

    /// Reads a grid written by [`CpfGrid::write_csv`]; the metadata line is
    /// optional, in which case the axes are recovered from the rows.
    pub fn from_csv_str(text: &str) -> Result<Self, CliError> {
        let mut meta = std::collections::HashMap::new();
        let mut body = String::new();
        for line in text.lines() {
            if let Some(rest) = line.strip_prefix('#') {
                for kv in rest.split_whitespace() {
                    if let Some((k, v)) = kv.split_once('=') {
                        meta.insert(k.to_string(), v.to_string());
                    }
                }
            } else {
                body.push_str(line);
                body.push('\n');
            }
        }
        let mut reader = csv::Reader::from_reader(body.as_bytes());
        let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
        if header != CSV_HEADER {
            return Err(CliError::Grid(format!("expected header {}, got {}", CSV_HEADER.join(","), header.join(","))));
        }
        let parse = |s: &str, line: usize| {
            s.trim().parse::<f64>().map_err(|_| CliError::Grid(format!("row {line}: bad number {s:?}")))
        };
        let mut rows = Vec::new();
        let mut y = None;
        for (line, rec) in reader.records().enumerate() {
            let rec = rec?;
            let row_y: Label = rec[2].trim().parse().map_err(|_| CliError::Grid(format!("row {line}: bad y")))?;
            if *y.get_or_insert(row_y) != row_y {
                return Err(CliError::Grid(format!("row {line}: mixed conditioning outcomes")));
            }
            rows.push([parse(&rec[0], line)?, parse(&rec[1], line)?, parse(&rec[3], line)?, parse(&rec[4], line)?]);
        }
        if rows.is_empty() {
            return Err(CliError::Grid("no rows".into()));
        }
        let n_tau = match meta.get("n_tau").and_then(|v| v.parse::<usize>().ok()) {
            Some(n) if n > 0 => n,
            _ => rows.iter().take_while(|r| r[0].to_bits() == rows[0][0].to_bits()).count(),
        };
        if rows.len() % n_tau != 0 {
            return Err(CliError::Grid(format!("{} rows do not form a grid with {n_tau} τ values", rows.len())));
        }
        let t: Vec<f64> = rows.iter().step_by(n_tau).map(|r| r[0]).collect();
        let tau: Vec<f64> = rows[..n_tau].iter().map(|r| r[1]).collect();
        for (k, r) in rows.iter().enumerate() {
            if r[0].to_bits() != t[k / n_tau].to_bits() || r[1].to_bits() != tau[k % n_tau].to_bits() {
                return Err(CliError::Grid(format!("row {k} is out of row-major (t, τ) order")));
            }
        }
        let cells = rows
            .iter()
            .map(|r| Cell {
                cpf: r[2],
                stderr: r[3],
                error: (!r[2].is_finite()).then(|| "not evaluated".to_string()),
            })
            .collect();
        let get = |k: &str| meta.get(k).filter(|v| v.as_str() != "none").cloned();
        let metadata = Metadata {
            config_sha256: get("config_sha256").unwrap_or_default(),
            model: get("model").unwrap_or_default(),
            seed: get("seed").and_then(|v| v.parse().ok()),
            n_traj: get("n_traj").and_then(|v| v.parse().ok()),
            code_version: get("version").unwrap_or_default(),
        };
        Self::new(t, tau, y.expect("rows are non-empty"), cells, metadata)
    }

    pub fn read_csv(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_csv_str(&text)
    }

    pub fn to_json_string(&self) -> String {
        let n_tau = self.tau.len();
        let doc = JsonGrid {
            metadata: self.metadata.clone(),
            y: self.y,
            t: self.t.clone(),
            tau: self.tau.clone(),
            cells: self
                .cells
                .iter()
                .enumerate()
                .map(|(k, c)| JsonCell {
                    t: self.t[k / n_tau],
                    tau: self.tau[k % n_tau],
                    cpf: finite(c.cpf),
                    stderr: finite(c.stderr),
                    error: c.error.clone(),
                })
                .collect(),
        };
        let mut s = serde_json::to_string_pretty(&doc).expect("grid serializes");
        s.push('\n');
        s
    }

    pub fn from_json_str(text: &str) -> Result<Self, CliError> {
        let doc: JsonGrid = serde_json::from_str(text)?;
        let cells = doc
            .cells
            .into_iter()
            .map(|c| Cell { cpf: c.cpf.unwrap_or(f64::NAN), stderr: c.stderr.unwrap_or(f64::NAN), error: c.error })
            .collect();
        Self::new(doc.t, doc.tau, doc.y, cells, doc.metadata)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> CpfGrid {
        let meta = Metadata {
            config_sha256: "ab".repeat(32),
            model: "spinbath".into(),
            seed: Some(3),
            n_traj: None,
            code_version: "0.1.0".into(),
        };
        let cells = vec![
            Cell::exact(0.0),
            Cell { cpf: 0.1 + 0.2, stderr: 1.0 / 3.0, error: None },
            Cell::exact(-3.0e-23),
            Cell::failed("degenerate".into()),
            Cell::exact(std::f64::consts::PI),
            Cell::exact(5e-324),
        ];
        CpfGrid::new(vec![0.0, 0.1 + 0.2], vec![0.0, 1.0 / 3.0, 2.0], -1, cells, meta).unwrap()
    }

    fn same_bits(a: &CpfGrid, b: &CpfGrid) {
        let bits = |g: &CpfGrid| -> Vec<u64> {
            g.t.iter().chain(&g.tau).chain(g.cells.iter().flat_map(|c| [&c.cpf, &c.stderr])).map(|v| v.to_bits()).collect()
        };
        assert_eq!(bits(a), bits(b));
        assert_eq!(a.metadata, b.metadata);
        assert_eq!(a.y, b.y);
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let g = sample();
        let text = g.to_csv_string();
        assert!(text.lines().nth(1).unwrap() == "t,tau,y,cpf,stderr");
        same_bits(&g, &CpfGrid::from_csv_str(&text).unwrap());
    }

    #[test]
    fn json_round_trip_is_bit_exact() {
        let g = sample();
        let back = CpfGrid::from_json_str(&g.to_json_string()).unwrap();
        same_bits(&g, &back);
        assert_eq!(back.cells[3].error.as_deref(), Some("degenerate"));
    }

    #[test]
    fn csv_without_metadata_recovers_axes() {
        let text = "t,tau,y,cpf,stderr\n0,0,1,0,0\n0,1,1,0.5,0\n2,0,1,0.25,0\n2,1,1,0,0\n";
        let g = CpfGrid::from_csv_str(text).unwrap();
        assert_eq!((g.t.clone(), g.tau.clone()), (vec![0.0, 2.0], vec![0.0, 1.0]));
        assert_eq!(g.at(1, 0).cpf, 0.25);
    }

    #[test]
    fn malformed_csv_rejected() {
        assert!(CpfGrid::from_csv_str("t,tau,cpf\n0,0,0\n").is_err());
        assert!(CpfGrid::from_csv_str("t,tau,y,cpf,stderr\n0,0,1,0,0\n0,1,1,0,0\n1,1,1,0,0\n1,0,1,0,0\n").is_err());
    }
}
