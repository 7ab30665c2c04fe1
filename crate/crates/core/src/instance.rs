//! JSON files read and written by the command-line tool: instances,
//! circuit bundles and reports.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::circuit::{matrix_json, Circuit};
use crate::error::{Error, Result};
use crate::estimation::Mode;
use crate::linalg::CMat;
use crate::oracle::{Oracle, OracleRegistry};
use crate::orthogonalize::BlockRule;
use crate::unitarize::UnitarizationInstance;

pub type MatrixRows = Vec<Vec<[f64; 2]>>;

/// One oracle, given either as a dense matrix or as a gate-list circuit.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OracleSpec {
    pub id: String,
    /// Primary width; defaults to the instance `n` for matrices.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub matrix: Option<MatrixRows>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub circuit: Option<Circuit>,
    /// Declared preparation error.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub eta: f64,
}

fn is_zero(x: &f64) -> bool {
    *x == 0.0
}

impl OracleSpec {
    pub fn from_oracle(o: &Oracle) -> OracleSpec {
        let (matrix, circuit) = match (o.matrix(), o.circuit()) {
            (Some(m), _) => (Some(matrix_json::to_rows(m)), None),
            (None, Some(c)) => (None, Some((**c).clone())),
            (None, None) => (None, None),
        };
        OracleSpec { id: o.id.clone(), n: Some(o.n), matrix, circuit, eta: o.eta }
    }

    pub fn to_oracle(&self, default_n: usize) -> Result<Oracle> {
        let o = match (&self.matrix, &self.circuit) {
            (Some(rows), None) => {
                let m = matrix_json::from_rows(rows).map_err(|e| Error::Parse(format!("oracle `{}`: {e}", self.id)))?;
                Oracle::from_matrix(&self.id, self.n.unwrap_or(default_n), m)
                    .map_err(|e| Error::Parse(format!("oracle `{}`: {e}", self.id)))?
            }
            (None, Some(c)) => Oracle::from_circuit(&self.id, c.clone()),
            _ => return Err(Error::Parse(format!("oracle `{}` needs exactly one of `matrix` or `circuit`", self.id))),
        };
        Ok(o.with_eta(self.eta))
    }
}

fn default_gamma() -> f64 {
    0.05
}

fn default_mode() -> Mode {
    Mode::Exact
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceFile {
    pub n: usize,
    /// Registered in order; circuits may call oracles listed before them.
    pub oracles: Vec<OracleSpec>,
    /// Ids of the state-preparation inputs. Every listed oracle when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inputs: Option<Vec<String>>,
    pub epsilon: f64,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_mode")]
    pub mode: Mode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule: Option<BlockRule>,
}

impl InstanceFile {
    pub fn parse(text: &str) -> Result<InstanceFile> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<InstanceFile> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        InstanceFile::parse(&text)
    }

    pub fn input_ids(&self) -> Vec<String> {
        match &self.inputs {
            Some(ids) => ids.clone(),
            None => self.oracles.iter().map(|o| o.id.clone()).collect(),
        }
    }

    /// Registers every oracle and checks the input ids.
    pub fn registry(&self) -> Result<OracleRegistry> {
        let mut reg = OracleRegistry::new();
        for spec in &self.oracles {
            let o = spec.to_oracle(self.n)?;
            if let Some(c) = o.circuit() {
                for id in c.oracle_counts().keys() {
                    if !reg.contains(id) {
                        return Err(Error::Parse(format!("oracle `{}` calls `{id}` before it is defined", spec.id)));
                    }
                }
            }
            reg.insert(o).map_err(|e| Error::Parse(e.to_string()))?;
        }
        for id in self.input_ids() {
            let o = reg.get(&id).map_err(|e| Error::Parse(e.to_string()))?;
            if o.n != self.n {
                return Err(Error::Parse(format!("input `{id}` has {} primary qubits, instance has {}", o.n, self.n)));
            }
        }
        Ok(reg)
    }

    pub fn unitarization(&self) -> UnitarizationInstance {
        UnitarizationInstance {
            n: self.n,
            oracles: self.input_ids(),
            eps: self.epsilon,
            gamma: self.gamma,
            seed: self.seed,
            mode: self.mode,
            rule: self.rule.unwrap_or(BlockRule::Tight),
        }
    }
}

/// A circuit together with every circuit or matrix oracle it needs that
/// the instance does not define, in dependency order.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CircuitBundle {
    pub circuit: Circuit,
    pub oracles: Vec<OracleSpec>,
    /// Target unitary on the primary register, when known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<MatrixRows>,
}

impl CircuitBundle {
    /// Collects the oracles reachable from `c`, skipping `known` ids.
    pub fn collect(
        reg: &OracleRegistry,
        c: &Circuit,
        known: &HashSet<String>,
        reference: Option<&CMat>,
    ) -> Result<CircuitBundle> {
        let mut out = Vec::new();
        let mut seen: HashSet<String> = known.clone();
        for id in c.oracle_counts().keys() {
            visit(reg, id, &mut seen, &mut out)?;
        }
        Ok(CircuitBundle { circuit: c.clone(), oracles: out, reference: reference.map(matrix_json::to_rows) })
    }

    pub fn load(path: &Path) -> Result<CircuitBundle> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Adds the bundled oracles missing from `reg`.
    pub fn register(&self, reg: &mut OracleRegistry, n: usize) -> Result<()> {
        for spec in &self.oracles {
            if !reg.contains(&spec.id) {
                reg.insert(spec.to_oracle(n)?).map_err(|e| Error::Parse(e.to_string()))?;
            }
        }
        Ok(())
    }

    pub fn reference_matrix(&self) -> Result<Option<CMat>> {
        self.reference.as_ref().map(|rows| matrix_json::from_rows(rows).map_err(Error::Parse)).transpose()
    }
}

fn visit(reg: &OracleRegistry, id: &str, seen: &mut HashSet<String>, out: &mut Vec<OracleSpec>) -> Result<()> {
    if !seen.insert(id.to_string()) {
        return Ok(());
    }
    let o = reg.get(id)?;
    if let Some(c) = o.circuit() {
        for dep in c.oracle_counts().keys() {
            visit(reg, dep, seen, out)?;
        }
    }
    out.push(OracleSpec::from_oracle(o));
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub bound: f64,
}

impl Check {
    pub fn at_most(name: &str, value: f64, bound: f64) -> Check {
        Check { name: name.into(), passed: value <= bound, value, bound }
    }

    pub fn at_least(name: &str, value: f64, bound: f64) -> Check {
        Check { name: name.into(), passed: value >= bound, value, bound }
    }
}

/// Everything in a report except `timing` is a function of the instance,
/// the flags and the seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportFile {
    pub command: String,
    /// Effective parameters after flag overrides.
    pub params: BTreeMap<String, serde_json::Value>,
    pub metrics: BTreeMap<String, serde_json::Value>,
    pub checks: Vec<Check>,
    /// File name of the synthesis trace, when one was written.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<String>,
    pub exit_code: i32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub timing: BTreeMap<String, f64>,
}

impl ReportFile {
    pub fn new(command: &str) -> ReportFile {
        ReportFile {
            command: command.into(),
            params: BTreeMap::new(),
            metrics: BTreeMap::new(),
            checks: Vec::new(),
            trace: None,
            exit_code: 0,
            error: None,
            timing: BTreeMap::new(),
        }
    }

    pub fn metric<T: Serialize>(&mut self, key: &str, value: T) {
        self.metrics.insert(key.into(), serde_json::to_value(value).expect("serializable metric"));
    }

    pub fn param<T: Serialize>(&mut self, key: &str, value: T) {
        self.params.insert(key.into(), serde_json::to_value(value).expect("serializable parameter"));
    }

    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    /// The report with timings removed, for reproducibility comparisons.
    pub fn without_timing(&self) -> ReportFile {
        ReportFile { timing: BTreeMap::new(), ..self.clone() }
    }

    pub fn load(path: &Path) -> Result<ReportFile> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}
