//! Gate-level circuit representation over named registers.
//!
//! Qubits are little-endian: within a register, qubit 0 is the least
//! significant bit of the basis index. A [`Span`] concatenates registers in
//! the order listed (first register in the low bits) and selects a window.

use std::collections::{BTreeMap, HashSet};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{c, CMat, ONE, ZERO};

pub const PRIMARY: &str = "q";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Block {
    pub name: String,
    pub width: usize,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegisterLayout {
    pub primary: usize,
    pub ancillas: Vec<Block>,
}

impl RegisterLayout {
    pub fn new(primary: usize) -> Self {
        RegisterLayout { primary, ancillas: Vec::new() }
    }

    /// Appends a block; zero-width blocks are skipped.
    pub fn with_block(mut self, name: &str, width: usize) -> Self {
        self.add_block(name, width);
        self
    }

    pub fn add_block(&mut self, name: &str, width: usize) {
        if width == 0 {
            return;
        }
        match self.ancillas.iter_mut().find(|b| b.name == name) {
            Some(b) => b.width = b.width.max(width),
            None => self.ancillas.push(Block { name: name.to_string(), width }),
        }
    }

    pub fn ancilla_width(&self) -> usize {
        self.ancillas.iter().map(|b| b.width).sum()
    }

    pub fn total_width(&self) -> usize {
        self.primary + self.ancilla_width()
    }

    /// `(offset, width)` of a register within the full layout.
    pub fn register(&self, name: &str) -> Option<(usize, usize)> {
        if name == PRIMARY {
            return Some((0, self.primary));
        }
        let mut off = self.primary;
        for b in &self.ancillas {
            if b.name == name {
                return Some((off, b.width));
            }
            off += b.width;
        }
        None
    }

    pub fn width_of(&self, name: &str) -> usize {
        self.register(name).map(|r| r.1).unwrap_or(0)
    }

    /// Merges blocks by name keeping the larger width.
    pub fn merge(&self, other: &RegisterLayout) -> Result<RegisterLayout> {
        if self.primary != other.primary {
            return Err(Error::LayoutMismatch(format!("primary widths {} and {} differ", self.primary, other.primary)));
        }
        let mut out = self.clone();
        for b in &other.ancillas {
            out.add_block(&b.name, b.width);
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for b in &self.ancillas {
            if b.width == 0 {
                return Err(Error::LayoutMismatch(format!("block `{}` has zero width", b.name)));
            }
            if b.name == PRIMARY || !seen.insert(b.name.as_str()) {
                return Err(Error::LayoutMismatch(format!("duplicate register name `{}`", b.name)));
            }
        }
        Ok(())
    }

    /// Global qubit indices of a span.
    pub fn resolve(&self, span: &Span) -> Result<Vec<usize>> {
        let mut all = Vec::new();
        for name in &span.regs {
            let (off, w) = self.register(name).ok_or_else(|| Error::UnknownRegister(name.clone()))?;
            all.extend(off..off + w);
        }
        if span.offset + span.width > all.len() {
            return Err(Error::LayoutMismatch(format!(
                "span {:?} [{}..{}) exceeds {} available qubits",
                span.regs,
                span.offset,
                span.offset + span.width,
                all.len()
            )));
        }
        Ok(all[span.offset..span.offset + span.width].to_vec())
    }
}

/// A window of `width` qubits starting at `offset` within the concatenation
/// of `regs`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub regs: Vec<String>,
    pub offset: usize,
    pub width: usize,
}

impl Span {
    pub fn new(regs: &[&str], offset: usize, width: usize) -> Self {
        Span { regs: regs.iter().map(|s| s.to_string()).collect(), offset, width }
    }

    pub fn reg(name: &str, width: usize) -> Self {
        Span::new(&[name], 0, width)
    }

    pub fn qubit(name: &str, i: usize) -> Self {
        Span::new(&[name], i, 1)
    }

    pub fn primary(n: usize) -> Self {
        Span::reg(PRIMARY, n)
    }

    /// The first `width` qubits of primary followed by `work`. Omits `work`
    /// when the window fits in the primary register.
    pub fn oracle(n: usize, work: &str, width: usize) -> Self {
        if width <= n {
            Span::primary(width)
        } else {
            Span::new(&[PRIMARY, work], 0, width)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Predicate {
    /// Register holds basis state `value`.
    EqualsBasis { value: u64 },
    /// Register does not hold basis state `value`.
    NotEqualsBasis { value: u64 },
    /// Register is all zeros.
    EqualsZero,
    /// Register is not all zeros.
    NotEqualsZero,
    /// Register holds the state prepared by `oracle` from zero.
    EqualsOracleState { oracle: String },
}

impl Predicate {
    pub fn holds(&self, value: u64) -> bool {
        match self {
            Predicate::EqualsBasis { value: v } => value == *v,
            Predicate::NotEqualsBasis { value: v } => value != *v,
            Predicate::EqualsZero => value == 0,
            Predicate::NotEqualsZero => value != 0,
            Predicate::EqualsOracleState { .. } => panic!("oracle-state predicate has no basis form"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Gate {
    SingleQubit {
        #[serde(with = "matrix_json")]
        matrix: Arc<CMat>,
        target: Span,
    },
    /// Swaps basis states `a` and `b` of the target; `P_a` is `a`, `0`.
    BasisSwap {
        a: u64,
        b: u64,
        target: Span,
    },
    DenseUnitary {
        #[serde(with = "matrix_json")]
        matrix: Arc<CMat>,
        target: Span,
    },
    OracleCall {
        oracle: String,
        inverse: bool,
        target: Span,
    },
    Controlled {
        control: Span,
        predicate: Predicate,
        inner: Box<Gate>,
    },
}

impl Gate {
    pub fn single(m: CMat, target: Span) -> Gate {
        Gate::SingleQubit { matrix: Arc::new(m), target }
    }

    pub fn h(target: Span) -> Gate {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        Gate::single(CMat::from_row_slice(2, 2, &[c(s, 0.0), c(s, 0.0), c(s, 0.0), c(-s, 0.0)]), target)
    }

    pub fn x(target: Span) -> Gate {
        Gate::single(CMat::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO]), target)
    }

    /// `diag(1, i)`.
    pub fn s(target: Span) -> Gate {
        Gate::single(CMat::from_row_slice(2, 2, &[ONE, ZERO, ZERO, c(0.0, 1.0)]), target)
    }

    pub fn swap(a: u64, b: u64, target: Span) -> Gate {
        Gate::BasisSwap { a, b, target }
    }

    pub fn dense(m: CMat, target: Span) -> Gate {
        Gate::DenseUnitary { matrix: Arc::new(m), target }
    }

    pub fn call(oracle: &str, target: Span) -> Gate {
        Gate::OracleCall { oracle: oracle.to_string(), inverse: false, target }
    }

    pub fn call_inv(oracle: &str, target: Span) -> Gate {
        Gate::OracleCall { oracle: oracle.to_string(), inverse: true, target }
    }

    pub fn controlled(control: Span, predicate: Predicate, inner: Gate) -> Gate {
        Gate::Controlled { control, predicate, inner: Box::new(inner) }
    }

    pub fn inverse(&self) -> Gate {
        match self {
            Gate::SingleQubit { matrix, target } => {
                Gate::SingleQubit { matrix: Arc::new(matrix.adjoint()), target: target.clone() }
            }
            Gate::BasisSwap { .. } => self.clone(),
            Gate::DenseUnitary { matrix, target } => {
                Gate::DenseUnitary { matrix: Arc::new(matrix.adjoint()), target: target.clone() }
            }
            Gate::OracleCall { oracle, inverse, target } => {
                Gate::OracleCall { oracle: oracle.clone(), inverse: !inverse, target: target.clone() }
            }
            Gate::Controlled { control, predicate, inner } => Gate::Controlled {
                control: control.clone(),
                predicate: predicate.clone(),
                inner: Box::new(inner.inverse()),
            },
        }
    }

    /// Listed oracle calls, counting the two calls hidden in an oracle-state
    /// predicate.
    pub fn add_oracle_counts(&self, counts: &mut BTreeMap<String, u64>) {
        match self {
            Gate::OracleCall { oracle, .. } => *counts.entry(oracle.clone()).or_default() += 1,
            Gate::Controlled { predicate, inner, .. } => {
                if let Predicate::EqualsOracleState { oracle } = predicate {
                    *counts.entry(oracle.clone()).or_default() += 2;
                }
                inner.add_oracle_counts(counts);
            }
            _ => {}
        }
    }

    fn spans(&self, out: &mut Vec<Span>) {
        match self {
            Gate::SingleQubit { target, .. }
            | Gate::BasisSwap { target, .. }
            | Gate::DenseUnitary { target, .. }
            | Gate::OracleCall { target, .. } => out.push(target.clone()),
            Gate::Controlled { control, inner, .. } => {
                out.push(control.clone());
                inner.spans(out);
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "CircuitDoc", into = "CircuitDoc")]
pub struct Circuit {
    pub layout: RegisterLayout,
    pub gates: Vec<Gate>,
}

impl Circuit {
    pub fn new(layout: RegisterLayout) -> Self {
        Circuit { layout, gates: Vec::new() }
    }

    pub fn empty(n: usize) -> Self {
        Circuit::new(RegisterLayout::new(n))
    }

    pub fn push(&mut self, g: Gate) -> &mut Self {
        self.gates.push(g);
        self
    }

    pub fn extend<I: IntoIterator<Item = Gate>>(&mut self, gs: I) -> &mut Self {
        self.gates.extend(gs);
        self
    }

    pub fn primary(&self) -> usize {
        self.layout.primary
    }

    pub fn width(&self) -> usize {
        self.layout.total_width()
    }

    /// Unit cost per listed gate.
    pub fn size(&self) -> usize {
        self.gates.len()
    }

    pub fn oracle_counts(&self) -> BTreeMap<String, u64> {
        let mut counts = BTreeMap::new();
        for g in &self.gates {
            g.add_oracle_counts(&mut counts);
        }
        counts
    }

    pub fn oracle_count(&self, id: &str) -> u64 {
        self.oracle_counts().get(id).copied().unwrap_or(0)
    }

    /// Checks register names, span bounds, matrix shapes and basis indices.
    /// Oracle widths are checked by the registry.
    pub fn validate(&self) -> Result<()> {
        self.layout.validate()?;
        for g in &self.gates {
            validate_gate(&self.layout, g)?;
        }
        Ok(())
    }

    pub fn inverse(&self) -> Circuit {
        Circuit { layout: self.layout.clone(), gates: self.gates.iter().rev().map(Gate::inverse).collect() }
    }

    /// Every span referenced by the circuit, in gate order.
    pub fn spans(&self) -> Vec<Span> {
        let mut out = Vec::new();
        for g in &self.gates {
            g.spans(&mut out);
        }
        out
    }
}

fn validate_gate(layout: &RegisterLayout, g: &Gate) -> Result<()> {
    match g {
        Gate::SingleQubit { matrix, target } => {
            layout.resolve(target)?;
            if target.width != 1 || matrix.shape() != (2, 2) {
                return Err(Error::LayoutMismatch("single-qubit gate needs a 2x2 matrix on one qubit".into()));
            }
        }
        Gate::BasisSwap { a, b, target } => {
            layout.resolve(target)?;
            let dim = 1u128 << target.width;
            if (*a as u128) >= dim || (*b as u128) >= dim {
                return Err(Error::LayoutMismatch(format!(
                    "basis swap ({a}, {b}) out of range for {} qubits",
                    target.width
                )));
            }
        }
        Gate::DenseUnitary { matrix, target } => {
            layout.resolve(target)?;
            let dim = 1usize << target.width;
            if matrix.shape() != (dim, dim) {
                return Err(Error::DimMismatch { expected: dim, got: matrix.nrows() });
            }
        }
        Gate::OracleCall { target, .. } => {
            layout.resolve(target)?;
        }
        Gate::Controlled { control, inner, .. } => {
            let cq = layout.resolve(control)?;
            let mut inner_spans = Vec::new();
            inner.spans(&mut inner_spans);
            for s in &inner_spans {
                let q = layout.resolve(s)?;
                if q.iter().any(|x| cq.contains(x)) {
                    return Err(Error::LayoutMismatch("control overlaps target".into()));
                }
            }
            validate_gate(layout, inner)?;
        }
    }
    Ok(())
}

/// Concatenation; blocks are merged by name.
pub fn compose(a: &Circuit, b: &Circuit) -> Result<Circuit> {
    let layout = a.layout.merge(&b.layout)?;
    let mut gates = a.gates.clone();
    gates.extend(b.gates.iter().cloned());
    Ok(Circuit { layout, gates })
}

pub fn inverse(c: &Circuit) -> Circuit {
    c.inverse()
}

/// `V⁻¹`, the zero-controlled `inner`, then `V`, acting on `register` (the
/// oracle's `n + m` qubits).
pub fn controlled_on_oracle_state(oracle: &str, inner: Gate, register: Span) -> Vec<Gate> {
    vec![
        Gate::call_inv(oracle, register.clone()),
        Gate::controlled(register.clone(), Predicate::EqualsZero, inner),
        Gate::call(oracle, register),
    ]
}

#[derive(Serialize, Deserialize)]
struct CircuitDoc {
    layout: RegisterLayout,
    gates: Vec<Gate>,
    #[serde(default)]
    size: Option<usize>,
    #[serde(default)]
    oracle_calls: Option<BTreeMap<String, u64>>,
}

impl From<Circuit> for CircuitDoc {
    fn from(c: Circuit) -> Self {
        let size = c.size();
        let oracle_calls = c.oracle_counts();
        CircuitDoc { layout: c.layout, gates: c.gates, size: Some(size), oracle_calls: Some(oracle_calls) }
    }
}

impl TryFrom<CircuitDoc> for Circuit {
    type Error = Error;

    fn try_from(doc: CircuitDoc) -> Result<Circuit> {
        let c = Circuit { layout: doc.layout, gates: doc.gates };
        if let Some(size) = doc.size.filter(|&s| s != c.size()) {
            return Err(Error::Parse(format!("declared size {size} but {} gates listed", c.size())));
        }
        if doc.oracle_calls.is_some_and(|calls| calls != c.oracle_counts()) {
            return Err(Error::Parse("declared oracle calls disagree with gate list".into()));
        }
        c.validate()?;
        Ok(c)
    }
}

/// Complex matrices as row lists of `[re, im]` pairs.
pub mod matrix_json {
    use super::*;
    use serde::de::Error as _;
    use serde::{Deserializer, Serializer};

    pub fn to_rows(m: &CMat) -> Vec<Vec<[f64; 2]>> {
        (0..m.nrows()).map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect()).collect()
    }

    pub fn from_rows(rows: &[Vec<[f64; 2]>]) -> std::result::Result<CMat, String> {
        let nr = rows.len();
        let nc = rows.first().map(|r| r.len()).unwrap_or(0);
        if rows.iter().any(|r| r.len() != nc) {
            return Err("ragged matrix rows".into());
        }
        Ok(CMat::from_fn(nr, nc, |i, j| c(rows[i][j][0], rows[i][j][1])))
    }

    pub fn serialize<S: Serializer>(m: &Arc<CMat>, s: S) -> std::result::Result<S::Ok, S::Error> {
        to_rows(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Arc<CMat>, D::Error> {
        let rows: Vec<Vec<[f64; 2]>> = Vec::deserialize(d)?;
        from_rows(&rows).map(Arc::new).map_err(D::Error::custom)
    }
}
