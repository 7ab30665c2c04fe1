//! Circuits that prepare the component of a state orthogonal to a set of
//! prepared orthonormal states, and the estimate-then-build pipeline around
//! them.

use serde::{Deserialize, Serialize};

use crate::circuit::{Circuit, Gate, Predicate, RegisterLayout, Span};
use crate::config::tolerances;
use crate::error::{Error, Result};
use crate::estimation::{estimate_inner_product_robust, event_seed, reference_state, Mode};
use crate::linalg::{basis_vec, complete_unitary, orthogonal_component, CMat, CVec, C64, ZERO};
use crate::oracle::{Oracle, OracleRegistry};

pub const WORK: &str = "work";

/// Qubits in one block register: `⌈log₂(k+1)⌉`.
pub fn block_width(k: usize) -> usize {
    (usize::BITS - k.leading_zeros()) as usize
}

pub fn block_name(j: usize) -> String {
    format!("b{j}")
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComponentEstimates {
    /// Estimates of `⟨φᵢ|ψ⟩`.
    pub a: Vec<C64>,
    /// Estimate of the orthogonal length.
    pub c: f64,
    pub eps1: f64,
    pub gamma: f64,
    /// Bound on the distance between the estimated and true coordinate vector.
    pub eps2: f64,
    /// Per-index accuracy `ηᵢ + ε₁/k` that holds when the output is nice.
    pub nice_bounds: Vec<f64>,
    /// The raw estimates had norm above one and were rescaled with `C = 0`.
    pub renormalized: bool,
}

impl ComponentEstimates {
    /// Completes raw estimates to a unit coordinate vector.
    pub fn from_raw(raw: Vec<C64>, eps1: f64, gamma: f64) -> ComponentEstimates {
        let s: f64 = raw.iter().map(|z| z.norm_sqr()).sum();
        let (a, c, renormalized) = if s > 1.0 {
            let r = s.sqrt();
            (raw.iter().map(|z| z / r).collect(), 0.0, true)
        } else {
            (raw, (1.0 - s).sqrt(), false)
        };
        let k = a.len().max(1) as f64;
        let nice_bounds = vec![eps1 / k; a.len()];
        ComponentEstimates { a, c, eps1, gamma, eps2: 0.0, nice_bounds, renormalized }
    }

    /// `(C, A₁, …, A_k, 0, …)` of length `dim`.
    pub fn column(&self, dim: usize) -> CVec {
        let mut v = CVec::from_element(dim, ZERO);
        v[0] = C64::new(self.c, 0.0);
        for (i, z) in self.a.iter().enumerate() {
            v[i + 1] = *z;
        }
        v
    }
}

/// The block rotation `R`, a unitary on `⌈log₂(k+1)⌉` qubits whose first
/// column is the coordinate vector.
pub fn build_rotation(est: &ComponentEstimates) -> Result<CMat> {
    let dim = 1usize << block_width(est.a.len());
    let col = est.column(dim);
    let col = col.unscale(col.norm());
    complete_unitary(&[col], dim)
}

/// `ε₂` from `η + ε₁` and a lower bound `δ` on the orthogonal length.
pub fn eps2(eta_plus_eps1: f64, delta: f64) -> f64 {
    let root = 2.0 * eta_plus_eps1.sqrt();
    if 2.0 * eta_plus_eps1 < delta * delta {
        (4.0 * eta_plus_eps1 / delta).min(root)
    } else {
        root
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockRule {
    /// `⌈4 ln(1/min(ε, 1/4)) / δ²⌉`.
    #[default]
    Proof,
    /// Smallest `l` with `2(1−δ²)^{l/2} ≤ ε`.
    Tight,
}

impl std::str::FromStr for BlockRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<BlockRule> {
        match s {
            "proof" => Ok(BlockRule::Proof),
            "tight" => Ok(BlockRule::Tight),
            other => Err(Error::Parse(format!("unknown block rule `{other}`"))),
        }
    }
}

/// Number of ancilla blocks for target error `eps` given `Δ ≥ delta`.
pub fn block_count(eps: f64, delta: f64, rule: BlockRule) -> Result<usize> {
    if delta.is_nan() || delta <= 0.0 {
        return Err(Error::InvalidDelta(delta));
    }
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidParameter(format!("ε = {eps} outside (0, 1)")));
    }
    let raw = match rule {
        BlockRule::Proof => 4.0 * (1.0 / eps.min(0.25)).ln() / (delta * delta),
        BlockRule::Tight => {
            if delta >= 1.0 {
                1.0
            } else {
                let log_alpha = 0.5 * ((1.0 - delta) * (1.0 + delta)).ln();
                (2.0 / eps).ln() / -log_alpha
            }
        }
    };
    let cap = tolerances().max_blocks;
    if !raw.is_finite() || raw > cap as f64 {
        return Err(Error::BudgetExceeded(format!("{raw:.3e} blocks exceeds cap {cap}")));
    }
    Ok((raw.ceil() as usize).max(1))
}

/// The four stages of the orthogonalizer over a shared layout.
pub struct Stages {
    pub layout: RegisterLayout,
    pub a1: Vec<Gate>,
    pub a2: Vec<Gate>,
    pub a3: Vec<Gate>,
    pub a4: Vec<Gate>,
}

impl Stages {
    pub fn circuit(&self, parts: &[&[Gate]]) -> Circuit {
        let mut c = Circuit::new(self.layout.clone());
        for p in parts {
            c.extend(p.iter().cloned());
        }
        c
    }

    pub fn assemble(&self) -> Circuit {
        self.circuit(&[&self.a1, &self.a2, &self.a3, &self.a4])
    }
}

/// Marks the `φᵢ` component in `block` and rotates it to zero, leaving the
/// rest of the register untouched.
fn record_and_return(gates: &mut Vec<Gate>, n: usize, i: usize, u: &Oracle, block: &Span) {
    let reg = Span::oracle(n, WORK, u.qubits);
    gates.push(Gate::call_inv(&u.id, reg.clone()));
    gates.push(Gate::controlled(reg.clone(), Predicate::EqualsZero, Gate::swap(0, i as u64, block.clone())));
    gates.push(Gate::controlled(block.clone(), Predicate::NotEqualsBasis { value: i as u64 }, Gate::call(&u.id, reg)));
}

/// Builds the stages with `l` blocks. `r` must act on `⌈log₂(k+1)⌉` qubits.
pub fn orthogonalizer_stages(reg: &OracleRegistry, v: &str, us: &[String], r: &str, l: usize) -> Result<Stages> {
    let ov = reg.get(v)?;
    let n = ov.n;
    let k = us.len();
    let mut m = ov.workspace();
    let mut uos = Vec::with_capacity(k);
    for id in us {
        let u = reg.get(id)?;
        if u.n != n {
            return Err(Error::DimMismatch { expected: 1 << n, got: 1 << u.n });
        }
        m = m.max(u.workspace());
        uos.push(u.clone());
    }
    let vcall = Gate::call(v, Span::oracle(n, WORK, ov.qubits));
    if k == 0 {
        let layout = RegisterLayout::new(n).with_block(WORK, m);
        return Ok(Stages { layout, a1: vec![vcall], a2: vec![], a3: vec![], a4: vec![] });
    }
    if l == 0 {
        return Err(Error::InvalidParameter("at least one block is required".into()));
    }
    let w = block_width(k);
    let or = reg.get(r)?;
    if or.qubits != w {
        return Err(Error::DimMismatch { expected: 1 << w, got: 1 << or.qubits });
    }
    let mut layout = RegisterLayout::new(n).with_block(WORK, m);
    for j in 0..l {
        layout.add_block(&block_name(j), w);
    }
    let blk = |j: usize| Span::reg(&block_name(j), w);

    let mut a1 = vec![vcall.clone()];
    for (i, u) in uos.iter().enumerate() {
        record_and_return(&mut a1, n, i + 1, u, &blk(0));
    }
    let mut a2 = Vec::new();
    for j in 1..l {
        a2.push(Gate::controlled(blk(j - 1), Predicate::NotEqualsZero, vcall.clone()));
        for (i, u) in uos.iter().enumerate() {
            record_and_return(&mut a2, n, i + 1, u, &blk(j));
        }
    }
    let a3 = (1..l)
        .rev()
        .map(|j| Gate::controlled(blk(j - 1), Predicate::NotEqualsZero, Gate::call_inv(r, blk(j))))
        .collect();
    let a4 = vec![Gate::call_inv(r, blk(0))];
    Ok(Stages { layout, a1, a2, a3, a4 })
}

/// `A = A4·A3·A2·A1` with `l` blocks.
pub fn build_orthogonalizer_with_blocks(
    reg: &OracleRegistry,
    v: &str,
    us: &[String],
    r: &str,
    l: usize,
) -> Result<Circuit> {
    Ok(orthogonalizer_stages(reg, v, us, r, l)?.assemble())
}

/// Orthogonalizer whose block count follows `rule` for target error `eps`
/// and `Δ ≥ delta`.
pub fn build_orthogonalizer(
    reg: &OracleRegistry,
    v: &str,
    us: &[String],
    r: &str,
    eps: f64,
    delta: f64,
    rule: BlockRule,
) -> Result<Circuit> {
    let l = if us.is_empty() { 0 } else { block_count(eps, delta, rule)? };
    build_orthogonalizer_with_blocks(reg, v, us, r, l)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrthoParams {
    pub eps1: f64,
    pub gamma: f64,
    pub eps3: f64,
    /// Components whose estimated length falls below this are skipped.
    pub delta_floor: f64,
    pub mode: Mode,
    pub seed: u64,
    pub rule: BlockRule,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SkipReason {
    BelowFloor { estimate: f64, floor: f64 },
}

/// Error charged to a built component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorLedger {
    pub eps2: f64,
    /// Sum of the declared errors of the input oracles.
    pub eta_inputs: f64,
    pub eta_v: f64,
    pub calls_r: u64,
    pub calls_u: u64,
    pub calls_v: u64,
    pub eps3: f64,
    pub total: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BuiltComponent {
    /// Registered id of the orthogonalizer circuit.
    pub oracle: String,
    pub rotation: Option<String>,
    pub blocks: usize,
    pub delta_used: f64,
    pub ledger: ErrorLedger,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Outcome {
    Built(Box<BuiltComponent>),
    Skipped(SkipReason),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct OrthoResult {
    pub estimates: ComponentEstimates,
    pub outcome: Outcome,
}

impl OrthoResult {
    pub fn built(&self) -> Option<&BuiltComponent> {
        match &self.outcome {
            Outcome::Built(b) => Some(b),
            Outcome::Skipped(_) => None,
        }
    }
}

/// Estimates the coordinates of `V|0⟩` against the states prepared by `xs`.
pub fn estimate_components(
    reg: &OracleRegistry,
    v: &str,
    xs: &[String],
    p: &OrthoParams,
) -> Result<ComponentEstimates> {
    let k = xs.len();
    let mut raw = Vec::with_capacity(k);
    let mut nice = Vec::with_capacity(k);
    for (i, x) in xs.iter().enumerate() {
        let e = estimate_inner_product_robust(
            reg,
            v,
            x,
            p.eps1 / k as f64,
            p.gamma / k as f64,
            p.mode,
            event_seed(p.seed, i as u64),
        )?;
        raw.push(e.value);
        nice.push(reg.get(x)?.eta + p.eps1 / k as f64);
    }
    let mut est = ComponentEstimates::from_raw(raw, p.eps1, p.gamma);
    est.nice_bounds = nice;
    Ok(est)
}

/// Estimates the components of `V|0⟩` along the states of `xs` and, unless
/// the orthogonal part looks negligible, registers a circuit preparing it.
pub fn approx_orthogonal_components(
    reg: &mut OracleRegistry,
    v: &str,
    xs: &[String],
    p: &OrthoParams,
) -> Result<OrthoResult> {
    check_budgets(p)?;
    let est = estimate_components(reg, v, xs, p)?;
    approx_orthogonal_components_from(reg, v, xs, p, est)
}

fn check_budgets(p: &OrthoParams) -> Result<()> {
    for (name, x) in [("ε₁", p.eps1), ("γ", p.gamma), ("ε₃", p.eps3)] {
        if !(x > 0.0 && x < 1.0) {
            return Err(Error::InvalidParameter(format!("{name} = {x} outside (0, 1)")));
        }
    }
    Ok(())
}

/// As [`approx_orthogonal_components`] with the estimates already taken.
pub fn approx_orthogonal_components_from(
    reg: &mut OracleRegistry,
    v: &str,
    xs: &[String],
    p: &OrthoParams,
    mut est: ComponentEstimates,
) -> Result<OrthoResult> {
    check_budgets(p)?;
    if est.a.len() != xs.len() {
        return Err(Error::DimMismatch { expected: xs.len(), got: est.a.len() });
    }
    let eta_inputs: f64 = xs.iter().map(|x| reg.get(x).map(|o| o.eta)).sum::<Result<f64>>()?;
    let eta_v = reg.get(v)?.eta;
    let slack = eta_inputs + eta_v + p.eps1;
    if est.c < p.delta_floor {
        est.eps2 = eps2(slack, p.delta_floor);
        return Ok(OrthoResult {
            outcome: Outcome::Skipped(SkipReason::BelowFloor { estimate: est.c, floor: p.delta_floor }),
            estimates: est,
        });
    }
    let delta_used = (est.c - 2.0 * slack.sqrt()).max(p.delta_floor);
    est.eps2 = eps2(slack, delta_used);

    let (circ, rotation) = if xs.is_empty() {
        (build_orthogonalizer_with_blocks(reg, v, xs, "", 0)?, None)
    } else {
        let rid = reg.fresh_id("R");
        reg.insert(Oracle::from_matrix(&rid, block_width(xs.len()), build_rotation(&est)?)?)?;
        (build_orthogonalizer(reg, v, xs, &rid, p.eps3, delta_used, p.rule)?, Some(rid))
    };
    let blocks = circ.layout.ancillas.iter().filter(|b| b.name != WORK).count();

    let calls = circ.oracle_counts();
    let calls_r = rotation.as_ref().and_then(|r| calls.get(r).copied()).unwrap_or(0);
    let calls_u: u64 = xs.iter().map(|x| calls.get(x).copied().unwrap_or(0)).sum();
    let calls_v = calls.get(v).copied().unwrap_or(0);
    // Without inputs the circuit is V itself.
    let eps3 = if xs.is_empty() { 0.0 } else { p.eps3 };
    let total = (est.eps2 + eta_inputs) * (calls_r + calls_u) as f64 + eta_v * calls_v as f64 + eps3;
    let ledger = ErrorLedger { eps2: est.eps2, eta_inputs, eta_v, calls_r, calls_u, calls_v, eps3, total };

    let phis = xs.iter().map(|x| reference_state(reg, x)).collect::<Result<Vec<_>>>()?;
    let psi = reference_state(reg, v)?;
    let cid = reg.fresh_id("orth");
    let mut oracle = Oracle::from_circuit(&cid, circ).with_eta(total);
    if let (Some(phi), _) = orthogonal_component(&phis, &psi) {
        oracle = oracle.with_state(phi);
    }
    reg.insert(oracle)?;
    Ok(OrthoResult {
        estimates: est,
        outcome: Outcome::Built(Box::new(BuiltComponent { oracle: cid, rotation, blocks, delta_used, ledger })),
    })
}

/// The exact block-register state after the first two stages, for a
/// single-qubit block layout: `|b⟩` of the correctness argument, with
/// `φ` in the primary register and zero workspace.
pub fn block_chain_state(beta: f64, theta: &CVec, phi: &CVec, l: usize, tail_zero: bool) -> CVec {
    // Block register amplitudes over l blocks, each of dim theta.len().
    let d = theta.len();
    let alpha = (1.0 - beta * beta).max(0.0).sqrt();
    let n_dim = phi.len();
    let total = n_dim * d.pow(l as u32);
    let mut out = CVec::from_element(total, ZERO);
    // Index: primary + n_dim * (b0 + d*b1 + ...), zero workspace assumed.
    let mut add_chain = |prefix: usize, amp: C64, primary: &CVec| {
        let mut idxs = vec![(0usize, amp)];
        for j in 0..prefix {
            let stride = d.pow(j as u32);
            idxs = idxs.into_iter().flat_map(|(ix, a)| (0..d).map(move |t| (ix + t * stride, a * theta[t]))).collect();
        }
        for (ix, a) in idxs {
            for (x, p) in primary.iter().enumerate() {
                out[x + n_dim * ix] += a * p;
            }
        }
    };
    for i in 0..l {
        add_chain(i, C64::new(beta * alpha.powi(i as i32), 0.0), phi);
    }
    let last = C64::new(alpha.powi(l as i32), 0.0);
    if tail_zero {
        add_chain(l, last, &basis_vec(n_dim, 0));
    } else {
        add_chain(l, last, phi);
    }
    out
}
