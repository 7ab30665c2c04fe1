//! Expansion of a circuit into primitive controlled operations on global
//! qubit indices. Nested circuit oracles are inlined, or contracted to a
//! dense matrix when narrow enough.

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use crate::circuit::{Circuit, Gate, Predicate, RegisterLayout};
use crate::error::{Error, Result};
use crate::linalg::{CMat, C64};
use crate::oracle::{OracleBody, OracleRegistry};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pred {
    Eq(u64),
    Ne(u64),
}

impl Pred {
    #[inline]
    pub fn holds(self, v: u64) -> bool {
        match self {
            Pred::Eq(a) => v == a,
            Pred::Ne(a) => v != a,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Control {
    /// Global qubits, least significant first.
    pub qubits: Vec<usize>,
    pub pred: Pred,
}

#[derive(Clone, Debug)]
pub enum Action {
    Mat2 { m: [C64; 4], q: usize },
    Swap { a: u64, b: u64, qubits: Vec<usize> },
    Dense { m: Arc<CMat>, adjoint: bool, qubits: Vec<usize> },
}

impl Action {
    pub fn qubits(&self) -> Vec<usize> {
        match self {
            Action::Mat2 { q, .. } => vec![*q],
            Action::Swap { qubits, .. } | Action::Dense { qubits, .. } => qubits.clone(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct PrimOp {
    pub controls: Vec<Control>,
    pub action: Action,
}

/// Per-oracle `(forward, inverse)` call counts.
pub type CallCounts = BTreeMap<String, (u64, u64)>;

pub fn add_calls(into: &mut CallCounts, from: &CallCounts, times: u64) {
    for (id, (f, i)) in from {
        let e = into.entry(id.clone()).or_default();
        e.0 += f * times;
        e.1 += i * times;
    }
}

pub struct Flattened {
    pub width: usize,
    pub ops: Vec<PrimOp>,
    pub calls: CallCounts,
}

pub struct Flattener<'a> {
    reg: &'a OracleRegistry,
    materialize_width: usize,
    cache: HashMap<String, (Arc<CMat>, CallCounts)>,
}

impl<'a> Flattener<'a> {
    pub fn new(reg: &'a OracleRegistry, materialize_width: usize) -> Self {
        Flattener { reg, materialize_width, cache: HashMap::new() }
    }

    pub fn flatten(&mut self, c: &Circuit) -> Result<Flattened> {
        c.validate()?;
        let width = c.width();
        let qmap: Vec<usize> = (0..width).collect();
        let mut out = Sink { ops: Vec::new(), calls: CallCounts::new() };
        self.visit_circuit(c, false, &qmap, &[], &mut out)?;
        Ok(Flattened { width, ops: out.ops, calls: out.calls })
    }

    fn visit_circuit(
        &mut self,
        c: &Circuit,
        inverse: bool,
        qmap: &[usize],
        ctrls: &[Control],
        out: &mut Sink,
    ) -> Result<()> {
        if inverse {
            for g in c.gates.iter().rev() {
                self.visit_gate(&c.layout, g, true, qmap, ctrls, out)?;
            }
        } else {
            for g in &c.gates {
                self.visit_gate(&c.layout, g, false, qmap, ctrls, out)?;
            }
        }
        Ok(())
    }

    fn visit_gate(
        &mut self,
        layout: &RegisterLayout,
        g: &Gate,
        inverse: bool,
        qmap: &[usize],
        ctrls: &[Control],
        out: &mut Sink,
    ) -> Result<()> {
        let global = |span| -> Result<Vec<usize>> { Ok(layout.resolve(span)?.into_iter().map(|q| qmap[q]).collect()) };
        match g {
            Gate::SingleQubit { matrix, target } => {
                let q = global(target)?[0];
                let m = if inverse { matrix.adjoint() } else { (**matrix).clone() };
                out.push(ctrls, Action::Mat2 { m: [m[(0, 0)], m[(0, 1)], m[(1, 0)], m[(1, 1)]], q });
            }
            Gate::BasisSwap { a, b, target } => {
                if a != b {
                    out.push(ctrls, Action::Swap { a: *a, b: *b, qubits: global(target)? });
                }
            }
            Gate::DenseUnitary { matrix, target } => {
                out.push(ctrls, Action::Dense { m: matrix.clone(), adjoint: inverse, qubits: global(target)? });
            }
            Gate::OracleCall { oracle, inverse: inv, target } => {
                self.visit_oracle(oracle, *inv != inverse, &global(target)?, ctrls, out)?;
            }
            Gate::Controlled { control, predicate, inner } => {
                let cq = global(control)?;
                let mut inner_ctrls = ctrls.to_vec();
                match predicate {
                    Predicate::EqualsOracleState { oracle } => {
                        // The surrounding V⁻¹ and V cancel wherever the outer
                        // controls fail, so they need no controls of their own.
                        self.visit_oracle(oracle, true, &cq, &[], out)?;
                        inner_ctrls.push(Control { qubits: cq.clone(), pred: Pred::Eq(0) });
                        self.visit_gate(layout, inner, inverse, qmap, &inner_ctrls, out)?;
                        self.visit_oracle(oracle, false, &cq, &[], out)?;
                        return Ok(());
                    }
                    Predicate::EqualsBasis { value } => {
                        inner_ctrls.push(Control { qubits: cq, pred: Pred::Eq(*value) })
                    }
                    Predicate::NotEqualsBasis { value } => {
                        inner_ctrls.push(Control { qubits: cq, pred: Pred::Ne(*value) })
                    }
                    Predicate::EqualsZero => inner_ctrls.push(Control { qubits: cq, pred: Pred::Eq(0) }),
                    Predicate::NotEqualsZero => inner_ctrls.push(Control { qubits: cq, pred: Pred::Ne(0) }),
                }
                self.visit_gate(layout, inner, inverse, qmap, &inner_ctrls, out)?;
            }
        }
        Ok(())
    }

    fn visit_oracle(
        &mut self,
        id: &str,
        inverse: bool,
        qubits: &[usize],
        ctrls: &[Control],
        out: &mut Sink,
    ) -> Result<()> {
        let o = self.reg.get(id)?.clone();
        if o.qubits != qubits.len() {
            return Err(Error::DimMismatch { expected: o.qubits, got: qubits.len() });
        }
        match &o.body {
            OracleBody::Matrix(m) => {
                out.count(id, inverse, 1);
                out.push(ctrls, Action::Dense { m: m.clone(), adjoint: inverse, qubits: qubits.to_vec() });
            }
            OracleBody::Circuit(c) => {
                if o.qubits <= self.materialize_width {
                    let (m, calls) = self.materialized(id, c)?;
                    out.count(id, inverse, 1);
                    for (cid, (f, i)) in &calls {
                        if inverse {
                            out.count(cid, false, *i);
                            out.count(cid, true, *f);
                        } else {
                            out.count(cid, false, *f);
                            out.count(cid, true, *i);
                        }
                    }
                    out.push(ctrls, Action::Dense { m, adjoint: inverse, qubits: qubits.to_vec() });
                } else {
                    out.count(id, inverse, 1);
                    self.visit_circuit(c, inverse, qubits, ctrls, out)?;
                }
            }
        }
        Ok(())
    }

    fn materialized(&mut self, id: &str, c: &Circuit) -> Result<(Arc<CMat>, CallCounts)> {
        if let Some(hit) = self.cache.get(id) {
            return Ok(hit.clone());
        }
        let flat = self.flatten(c)?;
        let dim = 1usize << flat.width;
        let mut m = CMat::identity(dim, dim);
        // Row-major buffer of the transposed matrix: applying the ops to each
        // column means acting on the row index of `m`.
        let mut buf: Vec<C64> = m.transpose().as_slice().to_vec();
        for op in &flat.ops {
            super::kernel::apply_global(&mut buf, flat.width, dim, op);
        }
        m = CMat::from_row_slice(dim, dim, &buf);
        let entry = (Arc::new(m), flat.calls);
        self.cache.insert(id.to_string(), entry.clone());
        Ok(entry)
    }
}

struct Sink {
    ops: Vec<PrimOp>,
    calls: CallCounts,
}

impl Sink {
    fn push(&mut self, ctrls: &[Control], action: Action) {
        self.ops.push(PrimOp { controls: ctrls.to_vec(), action });
    }

    fn count(&mut self, id: &str, inverse: bool, k: u64) {
        if k == 0 {
            return;
        }
        let e = self.calls.entry(id.to_string()).or_default();
        if inverse {
            e.1 += k;
        } else {
            e.0 += k;
        }
    }
}
