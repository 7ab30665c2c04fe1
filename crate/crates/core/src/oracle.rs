//! Oracles: unitaries on `n + m` qubits registered by id, either as a dense
//! matrix or as a nested circuit.

use std::collections::{BTreeMap, HashMap};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::circuit::{Circuit, Gate, Predicate};
use crate::config::tolerances;
use crate::error::{Error, Result};
use crate::linalg::{unitarity_error, CMat, CVec};

#[derive(Clone, Debug)]
pub enum OracleBody {
    Matrix(Arc<CMat>),
    Circuit(Arc<Circuit>),
}

#[derive(Debug)]
pub struct Oracle {
    pub id: String,
    /// Primary width `n`.
    pub n: usize,
    /// Total width `n + m`.
    pub qubits: usize,
    pub body: OracleBody,
    /// The `n`-qubit state this oracle is meant to prepare from zero.
    pub prepared_state: Option<CVec>,
    /// Declared preparation error.
    pub eta: f64,
    forward_calls: AtomicU64,
    inverse_calls: AtomicU64,
}

impl Clone for Oracle {
    fn clone(&self) -> Self {
        Oracle {
            id: self.id.clone(),
            n: self.n,
            qubits: self.qubits,
            body: self.body.clone(),
            prepared_state: self.prepared_state.clone(),
            eta: self.eta,
            forward_calls: AtomicU64::new(self.forward_calls.load(Ordering::Relaxed)),
            inverse_calls: AtomicU64::new(self.inverse_calls.load(Ordering::Relaxed)),
        }
    }
}

impl Oracle {
    /// A dense oracle on `log2(dim)` qubits with primary width `n`.
    pub fn from_matrix(id: &str, n: usize, m: CMat) -> Result<Oracle> {
        let dim = m.nrows();
        if !m.is_square() || !dim.is_power_of_two() {
            return Err(Error::DimMismatch { expected: dim.next_power_of_two(), got: m.ncols() });
        }
        let qubits = dim.trailing_zeros() as usize;
        if qubits < n {
            return Err(Error::DimMismatch { expected: 1 << n, got: dim });
        }
        let err = unitarity_error(&m);
        if err > tolerances().preparation {
            return Err(Error::InvalidParameter(format!("oracle `{id}` is not unitary (error {err:.2e})")));
        }
        Ok(Oracle::raw(id, n, qubits, OracleBody::Matrix(Arc::new(m))))
    }

    pub fn from_circuit(id: &str, c: Circuit) -> Oracle {
        let n = c.primary();
        let qubits = c.width();
        Oracle::raw(id, n, qubits, OracleBody::Circuit(Arc::new(c)))
    }

    fn raw(id: &str, n: usize, qubits: usize, body: OracleBody) -> Oracle {
        Oracle {
            id: id.to_string(),
            n,
            qubits,
            body,
            prepared_state: None,
            eta: 0.0,
            forward_calls: AtomicU64::new(0),
            inverse_calls: AtomicU64::new(0),
        }
    }

    pub fn with_state(mut self, psi: CVec) -> Oracle {
        self.prepared_state = Some(psi);
        self
    }

    pub fn with_eta(mut self, eta: f64) -> Oracle {
        self.eta = eta;
        self
    }

    /// Workspace width `m`.
    pub fn workspace(&self) -> usize {
        self.qubits - self.n
    }

    pub fn record_call(&self, inverse: bool, times: u64) {
        if inverse {
            self.inverse_calls.fetch_add(times, Ordering::Relaxed);
        } else {
            self.forward_calls.fetch_add(times, Ordering::Relaxed);
        }
    }

    /// `(forward, inverse)` calls executed so far.
    pub fn calls(&self) -> (u64, u64) {
        (self.forward_calls.load(Ordering::Relaxed), self.inverse_calls.load(Ordering::Relaxed))
    }

    pub fn reset_calls(&self) {
        self.forward_calls.store(0, Ordering::Relaxed);
        self.inverse_calls.store(0, Ordering::Relaxed);
    }

    pub fn circuit(&self) -> Option<&Arc<Circuit>> {
        match &self.body {
            OracleBody::Circuit(c) => Some(c),
            OracleBody::Matrix(_) => None,
        }
    }

    pub fn matrix(&self) -> Option<&Arc<CMat>> {
        match &self.body {
            OracleBody::Matrix(m) => Some(m),
            OracleBody::Circuit(_) => None,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct OracleRegistry {
    oracles: BTreeMap<String, Arc<Oracle>>,
    next_id: u64,
}

impl OracleRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers an oracle, validating nested circuits against the registry.
    pub fn insert(&mut self, o: Oracle) -> Result<Arc<Oracle>> {
        if self.oracles.contains_key(&o.id) {
            return Err(Error::InvalidParameter(format!("oracle `{}` registered twice", o.id)));
        }
        if let OracleBody::Circuit(c) = &o.body {
            validate_calls(self, c)?;
        }
        let o = Arc::new(o);
        self.oracles.insert(o.id.clone(), o.clone());
        Ok(o)
    }

    pub fn get(&self, id: &str) -> Result<&Arc<Oracle>> {
        self.oracles.get(id).ok_or_else(|| Error::UnknownOracle(id.to_string()))
    }

    pub fn contains(&self, id: &str) -> bool {
        self.oracles.contains_key(id)
    }

    pub fn ids(&self) -> impl Iterator<Item = &String> {
        self.oracles.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Arc<Oracle>> {
        self.oracles.values()
    }

    /// An id of the form `{prefix}{counter}` not yet in use.
    pub fn fresh_id(&mut self, prefix: &str) -> String {
        loop {
            let id = format!("{prefix}{}", self.next_id);
            self.next_id += 1;
            if !self.oracles.contains_key(&id) {
                return id;
            }
        }
    }

    pub fn reset_calls(&self) {
        for o in self.oracles.values() {
            o.reset_calls();
        }
    }

    /// Executed `(forward, inverse)` calls per oracle with any activity.
    pub fn call_snapshot(&self) -> BTreeMap<String, (u64, u64)> {
        self.oracles
            .iter()
            .filter_map(|(id, o)| {
                let c = o.calls();
                (c != (0, 0)).then(|| (id.clone(), c))
            })
            .collect()
    }
}

/// Checks that every oracle call and oracle-state control matches the
/// width of the oracle it names.
pub fn validate_calls(reg: &OracleRegistry, c: &Circuit) -> Result<()> {
    c.validate()?;
    for g in &c.gates {
        validate_gate_calls(reg, g)?;
    }
    Ok(())
}

fn validate_gate_calls(reg: &OracleRegistry, g: &Gate) -> Result<()> {
    match g {
        Gate::OracleCall { oracle, target, .. } => {
            let o = reg.get(oracle)?;
            if o.qubits != target.width {
                return Err(Error::DimMismatch { expected: o.qubits, got: target.width });
            }
        }
        Gate::Controlled { control, predicate, inner } => {
            if let Predicate::EqualsOracleState { oracle } = predicate {
                let o = reg.get(oracle)?;
                if o.qubits != control.width {
                    return Err(Error::DimMismatch { expected: o.qubits, got: control.width });
                }
            }
            validate_gate_calls(reg, inner)?;
        }
        _ => {}
    }
    Ok(())
}

/// Size after expanding nested circuit oracles in place: a call to a circuit
/// oracle costs the expanded size of that circuit.
pub fn expanded_size(reg: &OracleRegistry, c: &Circuit) -> Result<u64> {
    let mut memo = HashMap::new();
    circuit_expanded_size(reg, c, &mut memo)
}

fn circuit_expanded_size(reg: &OracleRegistry, c: &Circuit, memo: &mut HashMap<String, u64>) -> Result<u64> {
    let mut total = 0u64;
    for g in &c.gates {
        total = total.saturating_add(gate_expanded_size(reg, g, memo)?);
    }
    Ok(total)
}

fn oracle_expanded_size(reg: &OracleRegistry, id: &str, memo: &mut HashMap<String, u64>) -> Result<u64> {
    if let Some(&s) = memo.get(id) {
        return Ok(s);
    }
    let s = match &reg.get(id)?.body {
        OracleBody::Matrix(_) => 1,
        OracleBody::Circuit(c) => circuit_expanded_size(reg, c, memo)?.max(1),
    };
    memo.insert(id.to_string(), s);
    Ok(s)
}

fn gate_expanded_size(reg: &OracleRegistry, g: &Gate, memo: &mut HashMap<String, u64>) -> Result<u64> {
    Ok(match g {
        Gate::OracleCall { oracle, .. } => oracle_expanded_size(reg, oracle, memo)?,
        Gate::Controlled { predicate, inner, .. } => {
            let extra = match predicate {
                Predicate::EqualsOracleState { oracle } => 2 * oracle_expanded_size(reg, oracle, memo)?,
                _ => 0,
            };
            extra + gate_expanded_size(reg, inner, memo)?
        }
        _ => 1,
    })
}

/// Calls to every oracle reachable from `c`, with nested circuits expanded.
pub fn total_calls(reg: &OracleRegistry, c: &Circuit) -> Result<BTreeMap<String, u64>> {
    let mut memo: HashMap<String, BTreeMap<String, u64>> = HashMap::new();
    let mut out = BTreeMap::new();
    for (id, k) in c.oracle_counts() {
        add_scaled(&mut out, &oracle_closure(reg, &id, &mut memo)?, k);
    }
    Ok(out)
}

fn add_scaled(out: &mut BTreeMap<String, u64>, src: &BTreeMap<String, u64>, k: u64) {
    for (id, v) in src {
        let e = out.entry(id.clone()).or_default();
        *e = e.saturating_add(v.saturating_mul(k));
    }
}

/// Calls triggered by one call of `id`, including itself.
fn oracle_closure(
    reg: &OracleRegistry,
    id: &str,
    memo: &mut HashMap<String, BTreeMap<String, u64>>,
) -> Result<BTreeMap<String, u64>> {
    if let Some(m) = memo.get(id) {
        return Ok(m.clone());
    }
    let mut out = BTreeMap::new();
    out.insert(id.to_string(), 1);
    if let OracleBody::Circuit(c) = &reg.get(id)?.body {
        for (child, k) in c.oracle_counts() {
            let sub = oracle_closure(reg, &child, memo)?;
            add_scaled(&mut out, &sub, k);
        }
    }
    memo.insert(id.to_string(), out.clone());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{RegisterLayout, Span, PRIMARY};
    use crate::linalg::{c, CMat};

    fn x_matrix() -> CMat {
        CMat::from_row_slice(2, 2, &[c(0.0, 0.0), c(1.0, 0.0), c(1.0, 0.0), c(0.0, 0.0)])
    }

    #[test]
    fn matrix_oracle_widths() {
        let o = Oracle::from_matrix("X", 1, x_matrix()).unwrap();
        assert_eq!((o.n, o.qubits, o.workspace()), (1, 1, 0));
        assert!(Oracle::from_matrix("bad", 1, CMat::identity(3, 3)).is_err());
        assert!(Oracle::from_matrix("bad", 1, CMat::from_element(2, 2, c(1.0, 0.0))).is_err());
    }

    #[test]
    fn registry_validates_nested_calls() {
        let mut reg = OracleRegistry::new();
        reg.insert(Oracle::from_matrix("X", 1, x_matrix()).unwrap()).unwrap();
        let mut inner = Circuit::new(RegisterLayout::new(1));
        inner.push(Gate::call("X", Span::primary(1))).push(Gate::call_inv("X", Span::primary(1)));
        reg.insert(Oracle::from_circuit("W", inner)).unwrap();

        let mut outer = Circuit::new(RegisterLayout::new(1).with_block("a", 1));
        outer
            .push(Gate::call("W", Span::primary(1)))
            .push(Gate::controlled(
                Span::qubit("a", 0),
                Predicate::EqualsZero,
                Gate::call("W", Span::qubit(PRIMARY, 0)),
            ))
            .push(Gate::h(Span::qubit("a", 0)));
        validate_calls(&reg, &outer).unwrap();
        assert_eq!(expanded_size(&reg, &outer).unwrap(), 5);
        let calls = total_calls(&reg, &outer).unwrap();
        assert_eq!(calls["W"], 2);
        assert_eq!(calls["X"], 4);

        let mut bad = Circuit::new(RegisterLayout::new(2));
        bad.push(Gate::call("X", Span::primary(2)));
        assert!(matches!(validate_calls(&reg, &bad), Err(Error::DimMismatch { .. })));
        bad.gates[0] = Gate::call("nope", Span::primary(1));
        assert!(matches!(validate_calls(&reg, &bad), Err(Error::UnknownOracle(_))));
    }

    #[test]
    fn fresh_ids_are_unique() {
        let mut reg = OracleRegistry::new();
        let a = reg.fresh_id("R");
        reg.insert(Oracle::from_matrix(&a, 1, x_matrix()).unwrap()).unwrap();
        let b = reg.fresh_id("R");
        assert_ne!(a, b);
        assert!(reg.insert(Oracle::from_matrix(&a, 1, x_matrix()).unwrap()).is_err());
    }
}
