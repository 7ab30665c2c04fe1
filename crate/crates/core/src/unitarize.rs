//! Unitarization: a deferred rotation through an approximate basis, the
//! end-to-end driver, and the reference unitaries used to check it.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::basis::{synthesize_basis_seeded, BasisResult, SynthesisOptions};
use crate::circuit::{controlled_on_oracle_state, Circuit, Gate, Predicate, RegisterLayout, Span};
use crate::config::tolerances;
use crate::error::{Error, Result};
use crate::estimation::{estimate_inner_product_robust, event_seed, reference_state, Mode};
use crate::linalg::{
    self, basis_vec, complete_unitary, gram_matrix, gram_schmidt, gram_schmidt_partial, max_abs, random_state, CMat,
    CVec,
};
use crate::oracle::{expanded_size, total_calls, Oracle, OracleRegistry};
use crate::orthogonalize::{block_width, BlockRule};
use crate::sim::{compile, distance_from_block, zero_ancilla_block, DistanceReport};

/// Register holding the rotated subspace index.
pub const ROT: &str = "rot";
/// Shared oracle workspace.
pub const WORK: &str = "work";
/// The two flag qubits of the naive circuit.
pub const FLAGS: &str = "flag";

fn default_rule() -> BlockRule {
    BlockRule::Tight
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnitarizationInstance {
    pub n: usize,
    /// Ids of `V₁…V_k` in the registry.
    pub oracles: Vec<String>,
    pub eps: f64,
    pub gamma: f64,
    pub seed: u64,
    pub mode: Mode,
    #[serde(default = "default_rule")]
    pub rule: BlockRule,
}

impl UnitarizationInstance {
    pub fn exact(n: usize, oracles: Vec<String>, eps: f64) -> Self {
        UnitarizationInstance { n, oracles, eps, gamma: 0.01, seed: 0, mode: Mode::Exact, rule: BlockRule::Tight }
    }

    pub fn k(&self) -> usize {
        self.oracles.len()
    }

    /// `ε / (100000 k³)`.
    pub fn eps1(&self) -> f64 {
        let k = self.k() as f64;
        self.eps / (100000.0 * k * k * k)
    }

    /// The prepared states, checked to be orthonormal.
    pub fn states(&self, reg: &OracleRegistry) -> Result<Vec<CVec>> {
        let psis: Vec<CVec> = self.oracles.iter().map(|id| reference_state(reg, id)).collect::<Result<_>>()?;
        if let Some(p) = psis.iter().find(|p| p.len() != 1 << self.n) {
            return Err(Error::DimMismatch { expected: 1 << self.n, got: p.len() });
        }
        let k = psis.len();
        let dev = max_abs(&(gram_matrix(&psis) - CMat::identity(k, k)));
        if dev > tolerances().instance_orthonormal {
            return Err(Error::NonOrthogonalInput(format!("Gram matrix deviates from I by {dev:.3e}")));
        }
        Ok(psis)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Distances {
    /// Against the unitary built by the Gram-Schmidt recipe around the circuit.
    pub proof: DistanceReport,
    /// Operator-norm distance to [`reference_unitary`].
    pub reference: f64,
    /// Operator-norm distance to the closest valid unitary in Frobenius sense.
    pub best_valid: f64,
}

#[derive(Clone, Debug)]
pub struct UnitarizationResult {
    pub circuit: Circuit,
    pub basis: BasisResult,
    /// Estimated coefficients of each `ψᵢ` along the basis.
    pub coefficients: Vec<Vec<[f64; 2]>>,
    /// Seed oracles preparing `|i−1⟩`.
    pub seeds: Vec<String>,
    pub eps1: f64,
    /// Present in exact mode.
    pub reference: Option<CMat>,
    pub distances: Option<Distances>,
    pub oracle_calls: BTreeMap<String, u64>,
    pub expanded_size: u64,
    pub success: bool,
}

/// The oracle-free gate `BasisSwap(0, i)` on the primary register as a
/// circuit preparing `|i⟩`.
pub fn basis_state_circuit(n: usize, i: u64) -> Circuit {
    let mut c = Circuit::empty(n);
    if i != 0 {
        c.push(Gate::swap(0, i, Span::primary(n)));
    }
    c
}

/// `U″` on `p` qubits: identity on `|0⟩` and on indices above `m`, `u` on
/// `|1⟩…|m⟩`.
pub fn padded_rotation(u: &CMat, p: usize) -> CMat {
    let m = u.nrows();
    let dim = 1usize << p;
    let mut out = CMat::identity(dim, dim);
    out.view_mut((1, 1), (m, m)).copy_from(u);
    out
}

fn check_coefficients(v: &[CVec], m: usize) -> Result<()> {
    if let Some(bad) = v.iter().find(|x| x.len() != m) {
        return Err(Error::DimMismatch { expected: m, got: bad.len() });
    }
    let k = v.len();
    let dev = max_abs(&(gram_matrix(v) - CMat::identity(k, k)));
    if dev > 0.1 {
        return Err(Error::NonOrthogonalInput(format!("coefficient vectors deviate from orthonormal by {dev:.3e}")));
    }
    Ok(())
}

/// The five-part circuit `A₁ A₂ A₃ A₂⁻¹ A₁⁻¹` moving `|0⟩…|k−1⟩` and the
/// states of `phis` into a `⌈log₂(m+1)⌉`-qubit register, rotating there by
/// the completion of `v`, and moving back.
pub fn build_deferred_rotation(
    reg: &OracleRegistry,
    n: usize,
    k: usize,
    phis: &[String],
    v: &[CVec],
) -> Result<Circuit> {
    let m = k + phis.len();
    if v.len() != k {
        return Err(Error::InvalidParameter(format!("{} coefficient vectors for k = {k}", v.len())));
    }
    if k > 1 << n {
        return Err(Error::InvalidParameter(format!("k = {k} does not fit in {n} qubits")));
    }
    check_coefficients(v, m)?;
    let tol = 1e-6;
    let mut work = 0;
    for id in phis {
        let o = reg.get(id)?;
        if o.n != n {
            return Err(Error::DimMismatch { expected: 1 << n, got: 1 << o.n });
        }
        work = work.max(o.workspace());
        let phi = reference_state(reg, id)?;
        let leak = phi.rows(0, k).norm();
        if leak > tol {
            return Err(Error::NonOrthogonalInput(format!(
                "`{id}` has weight {leak:.3e} on the first {k} basis states"
            )));
        }
    }
    let u = complete_unitary(v, m)?;
    let p = block_width(m);
    let layout = RegisterLayout::new(n).with_block(WORK, work).with_block(ROT, p);
    let rot = Span::reg(ROT, p);
    let q = Span::primary(n);

    let mut a1 = Vec::new();
    for j in 0..k {
        a1.push(Gate::controlled(
            q.clone(),
            Predicate::EqualsBasis { value: j as u64 },
            Gate::swap(0, j as u64 + 1, rot.clone()),
        ));
    }
    for (j, id) in phis.iter().enumerate() {
        let span = Span::oracle(n, WORK, reg.get(id)?.qubits);
        a1.extend(controlled_on_oracle_state(id, Gate::swap(0, (k + j + 1) as u64, rot.clone()), span));
    }

    let mut a2 = Vec::new();
    for j in 0..k {
        if j != 0 {
            a2.push(Gate::controlled(
                rot.clone(),
                Predicate::EqualsBasis { value: j as u64 + 1 },
                Gate::swap(0, j as u64, q.clone()),
            ));
        }
    }
    for (j, id) in phis.iter().enumerate() {
        let span = Span::oracle(n, WORK, reg.get(id)?.qubits);
        a2.push(Gate::controlled(
            rot.clone(),
            Predicate::EqualsBasis { value: (k + j + 1) as u64 },
            Gate::call_inv(id, span),
        ));
    }

    let mut c = Circuit::new(layout);
    c.extend(a1.iter().cloned());
    c.extend(a2.iter().cloned());
    c.push(Gate::dense(padded_rotation(&u, p), rot));
    c.extend(a2.iter().rev().map(Gate::inverse));
    c.extend(a1.iter().rev().map(Gate::inverse));
    Ok(c)
}

/// The unitary the deferred rotation realizes: `B U′ B†` plus identity off
/// the span of `B = (|0⟩…|k−1⟩, φ₁…φ_l)`.
pub fn deferred_rotation_target(n: usize, k: usize, phis: &[CVec], v: &[CVec]) -> Result<CMat> {
    let dim = 1usize << n;
    let m = k + phis.len();
    check_coefficients(v, m)?;
    let u = complete_unitary(v, m)?;
    let cols: Vec<CVec> = (0..k).map(|j| basis_vec(dim, j)).chain(phis.iter().cloned()).collect();
    let b = CMat::from_columns(&cols);
    Ok(&b * u * b.adjoint() + CMat::identity(dim, dim) - &b * b.adjoint())
}

fn projector(vs: &[CVec], dim: usize) -> CMat {
    if vs.is_empty() {
        return CMat::zeros(dim, dim);
    }
    let b = CMat::from_columns(vs);
    &b * b.adjoint()
}

/// Orthonormal basis of `span(|0⟩…|k−1⟩, ψ₁…ψ_k)`, ordered with the
/// computational states first.
fn span_basis(psis: &[CVec]) -> Vec<CVec> {
    let dim = psis[0].len();
    let k = psis.len();
    let ws: Vec<CVec> = (0..k).map(|j| basis_vec(dim, j)).chain(psis.iter().cloned()).collect();
    gram_schmidt_partial(&ws, tolerances().instance_orthonormal.sqrt()).into_iter().flatten().collect()
}

/// Extends the orthonormal `head` by vectors from `pool`, keeping only
/// residuals above `floor`.
fn extend_basis(head: &[CVec], pool: &[CVec], floor: f64) -> Vec<CVec> {
    let ws: Vec<CVec> = head.iter().chain(pool).cloned().collect();
    gram_schmidt_partial(&ws, floor).into_iter().skip(head.len()).flatten().collect()
}

/// A unitary with `U|i−1⟩ = ψᵢ`, identity on the orthogonal complement of
/// `Z = span(|0⟩…|k−1⟩, ψ…)`. On the rest of `Z` it maps the Gram-Schmidt
/// completion of the computational states onto that of the `ψᵢ`, both
/// drawn from the same ordered list.
pub fn reference_unitary(psis: &[CVec]) -> Result<CMat> {
    let dim = psis.first().map(|p| p.len()).ok_or_else(|| Error::InvalidParameter("no states".into()))?;
    let k = psis.len();
    let es: Vec<CVec> = (0..k).map(|j| basis_vec(dim, j)).collect();
    let z = span_basis(psis);
    let floor = 0.5 / (dim as f64).sqrt();
    let from: Vec<CVec> = es.iter().cloned().chain(extend_basis(&es, &z, floor)).collect();
    let to: Vec<CVec> = psis.iter().cloned().chain(extend_basis(psis, &z, floor)).collect();
    if from.len() != z.len() || to.len() != z.len() {
        return Err(Error::InvariantViolated("completion of the constrained span has the wrong dimension".into()));
    }
    let (f, t) = (CMat::from_columns(&from), CMat::from_columns(&to));
    Ok(&t * f.adjoint() + CMat::identity(dim, dim) - projector(&z, dim))
}

/// The valid unitary closest to `y` in Frobenius norm: the free rotation
/// between the two completions is the polar factor of their overlap
/// through `y`.
pub fn best_valid_unitary(psis: &[CVec], y: &CMat) -> Result<CMat> {
    let base = reference_unitary(psis)?;
    let dim = base.nrows();
    let k = psis.len();
    let es: Vec<CVec> = (0..k).map(|j| basis_vec(dim, j)).collect();
    let z = span_basis(psis);
    let floor = 0.5 / (dim as f64).sqrt();
    let a = extend_basis(&es, &z, floor);
    if a.is_empty() {
        return Ok(base);
    }
    let b = extend_basis(psis, &z, floor);
    let (am, bm) = (CMat::from_columns(&a), CMat::from_columns(&b));
    let (u, _, vt) = linalg::svd(&(bm.adjoint() * y * &am));
    let q = u * vt;
    let pc = CMat::from_columns(psis);
    let ec = CMat::from_columns(&es);
    Ok(&pc * ec.adjoint() + &bm * q * am.adjoint() + CMat::identity(dim, dim) - projector(&z, dim))
}

/// The comparison unitary built around the circuit block `y`: the images
/// `ψᵢ`, `y` applied to the basis directions past the computational states,
/// and the untouched rest of `Z`, orthonormalized in that order. The basis
/// states are projected into `Z` first so the result is exactly valid.
pub fn proof_unitary(psis: &[CVec], basis_states: &[CVec], y: &CMat) -> Result<CMat> {
    let dim = psis.first().map(|p| p.len()).ok_or_else(|| Error::InvalidParameter("no states".into()))?;
    let k = psis.len();
    let es: Vec<CVec> = (0..k).map(|j| basis_vec(dim, j)).collect();
    let z = span_basis(psis);
    let pz = projector(&z, dim);
    let projected: Vec<CVec> = basis_states.iter().map(|b| &pz * b).collect();
    let vy = extend_basis(&es, &projected, 0.5);
    let head: Vec<CVec> = es.iter().chain(&vy).cloned().collect();
    let vz = extend_basis(&head, &z, 0.5 / (dim as f64).sqrt());
    let from: Vec<CVec> = head.iter().chain(&vz).cloned().collect();
    if from.len() != z.len() {
        return Err(Error::InvariantViolated(format!("{} directions for a span of dimension {}", from.len(), z.len())));
    }
    let wp: Vec<CVec> =
        psis.iter().cloned().chain(vy.iter().map(|v| &pz * (y * v))).chain(vz.iter().cloned()).collect();
    let w = gram_schmidt(&wp)?;
    let (f, t) = (CMat::from_columns(&from), CMat::from_columns(&w));
    Ok(&t * f.adjoint() + CMat::identity(dim, dim) - pz)
}

/// Distances of a circuit to the three comparison unitaries.
pub fn measure(c: &Circuit, reg: &OracleRegistry, psis: &[CVec], basis_states: &[CVec]) -> Result<(Distances, CMat)> {
    let (y, err) = zero_ancilla_block(c, reg)?;
    let u = proof_unitary(psis, basis_states, &y)?;
    let proof = distance_from_block(&y, &u, err);
    let reference = distance_from_block(&y, &reference_unitary(psis)?, err).operator_norm;
    let best_valid = distance_from_block(&y, &best_valid_unitary(psis, &y)?, err).operator_norm;
    Ok((Distances { proof, reference, best_valid }, u))
}

/// Orthonormal basis of the complement of `span(|0⟩…|k−1⟩, ψ…)`.
pub fn complement_basis(psis: &[CVec]) -> Vec<CVec> {
    let dim = psis[0].len();
    let z = span_basis(psis);
    let pool: Vec<CVec> = (0..dim).map(|i| basis_vec(dim, i)).collect();
    extend_basis(&z, &pool, 0.5)
}

/// Largest `‖C|a,0⟩ − |a,0⟩‖` over `trials` random unit `a` orthogonal to
/// `span(|0⟩…|k−1⟩, ψ…)`. The circuit is simulated once on a basis of that
/// complement and the random states are combined from the columns. Zero
/// when the complement is trivial.
pub fn complement_deviation(c: &Circuit, reg: &OracleRegistry, psis: &[CVec], trials: usize, seed: u64) -> Result<f64> {
    let comp = complement_basis(psis);
    if comp.is_empty() {
        return Ok(0.0);
    }
    let p = compile(c, reg)?;
    let (yc, err) = p.zero_ancilla_block(&comp)?;
    Ok(random_deviation(&yc, &CMat::from_columns(&comp), trials, seed) + err)
}

/// As [`complement_deviation`] from the full ancilla-zero block `y`.
pub fn complement_deviation_from_block(y: &CMat, psis: &[CVec], trials: usize, seed: u64) -> f64 {
    let comp = complement_basis(psis);
    if comp.is_empty() {
        return 0.0;
    }
    let b = CMat::from_columns(&comp);
    random_deviation(&(y * &b), &b, trials, seed)
}

/// `yc` holds the images of the columns of `b`.
fn random_deviation(yc: &CMat, b: &CMat, trials: usize, seed: u64) -> f64 {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for _ in 0..trials {
        let coeffs = random_state(b.ncols(), &mut rng);
        let (a, col) = (b * &coeffs, yc * &coeffs);
        let lost = (1.0 - col.norm_squared()).max(0.0);
        worst = worst.max(((col - a).norm_squared() + lost).sqrt());
    }
    worst
}

fn to_pairs(v: &CVec) -> Vec<[f64; 2]> {
    v.iter().map(|z| [z.re, z.im]).collect()
}

/// Builds the circuit for `inst`, adding the basis oracles to `reg`.
pub fn unitarize(reg: &mut OracleRegistry, inst: &UnitarizationInstance) -> Result<UnitarizationResult> {
    let k = inst.k();
    if k == 0 {
        return Err(Error::InvalidParameter("no oracles".into()));
    }
    if !(inst.eps > 0.0 && inst.eps < 1.0) || !(inst.gamma > 0.0 && inst.gamma < 1.0) {
        return Err(Error::InvalidParameter(format!("ε = {}, γ = {}", inst.eps, inst.gamma)));
    }
    let n = inst.n;
    if k > 1 << n {
        return Err(Error::InvalidParameter(format!("k = {k} states do not fit in {n} qubits")));
    }
    for id in &inst.oracles {
        let o = reg.get(id)?;
        if o.n != n {
            return Err(Error::DimMismatch { expected: 1 << n, got: 1 << o.n });
        }
    }
    // Sampled runs are still measured when the states can be simulated.
    let psis = match inst.mode {
        Mode::Exact => Some(inst.states(reg)?),
        Mode::Sampled => inst.states(reg).ok(),
    };

    let mut seeds = Vec::with_capacity(k);
    for i in 0..k {
        let id = reg.fresh_id("e");
        let o = Oracle::from_circuit(&id, basis_state_circuit(n, i as u64)).with_state(basis_vec(1 << n, i));
        reg.insert(o)?;
        seeds.push(id);
    }

    let eps1 = inst.eps1();
    let opts = SynthesisOptions {
        eps: eps1,
        gamma: inst.gamma / 2.0,
        mode: inst.mode,
        seed: inst.seed,
        rule: inst.rule,
        eps1: None,
    };
    let basis = synthesize_basis_seeded(reg, &seeds, &inst.oracles, &opts)?;
    if !basis.success {
        return Err(Error::BudgetExceeded(format!("basis guards failed: {:?}", basis.guard_failures)));
    }
    let ys = basis.oracles();
    let m = ys.len();
    let phis = &ys[k..];

    let acc = eps1 / (2.0 * k as f64);
    let gamma_pair = inst.gamma / (2.0 * (k * m) as f64);
    let mut v = Vec::with_capacity(k);
    let mut event = 1u64 << 48;
    for id in &inst.oracles {
        let mut col = CVec::zeros(m);
        for (j, y) in ys.iter().enumerate() {
            let e =
                estimate_inner_product_robust(reg, id, y, acc, gamma_pair, inst.mode, event_seed(inst.seed, event))?;
            event += 1;
            col[j] = e.value;
        }
        v.push(col);
    }

    let circuit = build_deferred_rotation(reg, n, k, phis, &v)?;
    let oracle_calls = total_calls(reg, &circuit)?;
    let size = expanded_size(reg, &circuit)?;

    let (reference, distances) = match &psis {
        Some(psis) => {
            let states = basis.states(reg)?;
            let (d, u) = measure(&circuit, reg, psis, &states[k..])?;
            (Some(u), Some(d))
        }
        None => (None, None),
    };
    let success = distances.as_ref().is_none_or(|d| d.proof.operator_norm <= inst.eps);
    Ok(UnitarizationResult {
        circuit,
        basis,
        coefficients: v.iter().map(to_pairs).collect(),
        seeds,
        eps1,
        reference,
        distances,
        oracle_calls,
        expanded_size: size,
        success,
    })
}

/// The two-flag circuit that marks basis inputs, prepares `ψᵢ` under the
/// flag, then clears flags by testing for `ψᵢ`. Only defined for `k = 2`.
pub fn naive_circuit(reg: &OracleRegistry, n: usize, oracles: &[String]) -> Result<Circuit> {
    if oracles.len() != 2 {
        return Err(Error::InvalidParameter(format!("the naive circuit takes 2 oracles, got {}", oracles.len())));
    }
    let mut work = 0;
    for id in oracles {
        let o = reg.get(id)?;
        if o.n != n {
            return Err(Error::DimMismatch { expected: 1 << n, got: 1 << o.n });
        }
        work = work.max(o.workspace());
    }
    let layout = RegisterLayout::new(n).with_block(WORK, work).with_block(FLAGS, 2);
    let q = Span::primary(n);
    let mut c = Circuit::new(layout);
    for i in 0..2 {
        c.push(Gate::controlled(q.clone(), Predicate::EqualsBasis { value: i as u64 }, Gate::x(Span::qubit(FLAGS, i))));
    }
    for (i, id) in oracles.iter().enumerate() {
        let flag = Span::qubit(FLAGS, i);
        let on = Predicate::EqualsBasis { value: 1 };
        if i != 0 {
            c.push(Gate::controlled(flag.clone(), on.clone(), Gate::swap(0, i as u64, q.clone())));
        }
        let span = Span::oracle(n, WORK, reg.get(id)?.qubits);
        c.push(Gate::controlled(flag, on, Gate::call(id, span)));
    }
    for (i, id) in oracles.iter().enumerate() {
        let span = Span::oracle(n, WORK, reg.get(id)?.qubits);
        c.extend(controlled_on_oracle_state(id, Gate::x(Span::qubit(FLAGS, i)), span));
    }
    Ok(c)
}

/// Registers a dense oracle preparing `psi` from zero.
pub fn register_state(reg: &mut OracleRegistry, id: &str, psi: &CVec) -> Result<()> {
    let n = psi.len().trailing_zeros() as usize;
    let u = crate::linalg::preparation_unitary(psi)?;
    reg.insert(Oracle::from_matrix(id, n, u)?.with_state(psi.clone()))?;
    Ok(())
}

/// `n`, `ψ₁`, `ψ₂` for the two-state instance `(|1⟩ ± |3⟩)/√2` on two qubits.
pub fn two_state_example() -> (usize, Vec<CVec>) {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let a = crate::linalg::from_real(&[0.0, s, 0.0, s]);
    let b = crate::linalg::from_real(&[0.0, s, 0.0, -s]);
    (2, vec![a, b])
}

/// `n`, `ψ₁`, `ψ₂` for `(|2⟩ ± |3⟩)/√2`, orthogonal to `|0⟩` and `|1⟩`.
pub fn naive_failure_example() -> (usize, Vec<CVec>) {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let a = crate::linalg::from_real(&[0.0, 0.0, s, s]);
    let b = crate::linalg::from_real(&[0.0, 0.0, s, -s]);
    (2, vec![a, b])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c, from_real, random_orthonormal, ZERO};
    use crate::sim::{circuit_matrix, run, StateVector};

    const S: f64 = std::f64::consts::FRAC_1_SQRT_2;

    #[test]
    fn single_basis_state_is_identity() {
        let mut reg = OracleRegistry::new();
        register_state(&mut reg, "v", &basis_vec(2, 0)).unwrap();
        let inst = UnitarizationInstance::exact(1, vec!["v".into()], 0.05);
        let res = unitarize(&mut reg, &inst).unwrap();
        let d = res.distances.unwrap();
        assert!(d.proof.operator_norm <= 1e-8, "{d:?}");
        let (y, _) = zero_ancilla_block(&res.circuit, &reg).unwrap();
        assert!(max_abs(&(y - CMat::identity(2, 2))) < 1e-10);
    }

    #[test]
    fn deferred_rotation_small_example() {
        let mut reg = OracleRegistry::new();
        register_state(&mut reg, "phi", &basis_vec(4, 2)).unwrap();
        let v = vec![from_real(&[S, S])];
        let circ = build_deferred_rotation(&reg, 2, 1, &["phi".into()], &v).unwrap();
        let target = deferred_rotation_target(2, 1, &[basis_vec(4, 2)], &v).unwrap();
        let (y, _) = zero_ancilla_block(&circ, &reg).unwrap();
        assert!(max_abs(&(&y - &target)) < 1e-12);
        assert!((y[(0, 0)].re - S).abs() < 1e-12 && (y[(2, 0)].re - S).abs() < 1e-12);
        for a in 0..4 {
            assert!((y.column(a).norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn deferred_rotation_case_chains() {
        // Three qubits, k = 2, two basis states orthogonal to |0⟩ and |1⟩.
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let n = 3;
        let dim = 8;
        let sub = random_orthonormal(6, 3, &mut rng);
        let lift = |x: &CVec| CVec::from_iterator(dim, [ZERO, ZERO].into_iter().chain(x.iter().copied()));
        let phis: Vec<CVec> = sub[..2].iter().map(lift).collect();
        let theta = lift(&sub[2]);
        let mut reg = OracleRegistry::new();
        register_state(&mut reg, "p1", &phis[0]).unwrap();
        register_state(&mut reg, "p2", &phis[1]).unwrap();
        let v = random_orthonormal(4, 2, &mut rng);
        let circ = build_deferred_rotation(&reg, n, 2, &["p1".into(), "p2".into()], &v).unwrap();
        let u = complete_unitary(&v, 4).unwrap();
        let basis: Vec<CVec> = vec![basis_vec(dim, 0), basis_vec(dim, 1), phis[0].clone(), phis[1].clone()];
        let expand = |col: usize| -> CVec { (0..4).fold(CVec::zeros(dim), |acc, j| acc + &basis[j] * u[(j, col)]) };
        let width = circ.width();
        for (col, input) in basis.iter().enumerate() {
            let out = run(&circ, &reg, &StateVector::embed(width, input).unwrap()).unwrap();
            let want = StateVector::embed(width, &expand(col)).unwrap();
            assert!((&out.amps - &want.amps).norm() < 1e-10, "column {col}");
        }
        let out = run(&circ, &reg, &StateVector::embed(width, &theta).unwrap()).unwrap();
        let want = StateVector::embed(width, &theta).unwrap();
        assert!((&out.amps - &want.amps).norm() < 1e-10);
    }

    #[test]
    fn deferred_rotation_rejects_bad_inputs() {
        let mut reg = OracleRegistry::new();
        register_state(&mut reg, "phi", &from_real(&[S, 0.0, S, 0.0])).unwrap();
        let v = vec![from_real(&[1.0, 0.0])];
        assert!(matches!(build_deferred_rotation(&reg, 2, 1, &["phi".into()], &v), Err(Error::NonOrthogonalInput(_))));
        register_state(&mut reg, "ok", &basis_vec(4, 3)).unwrap();
        let v = vec![from_real(&[1.0, 1.0])];
        assert!(build_deferred_rotation(&reg, 2, 1, &["ok".into()], &v).is_err());
    }

    #[test]
    fn reference_unitary_meets_constraints() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        for k in 1..=3 {
            let psis = random_orthonormal(8, k, &mut rng);
            let u = reference_unitary(&psis).unwrap();
            assert!(crate::linalg::unitarity_error(&u) < 1e-10);
            for (i, p) in psis.iter().enumerate() {
                assert!((u.column(i) - p).norm() < 1e-10);
            }
            let z = span_basis(&psis);
            let a = random_state(8, &mut rng);
            let r = &a - projector(&z, 8) * &a;
            assert!((&u * &r - &r).norm() < 1e-10);
        }
    }

    #[test]
    fn best_valid_is_no_worse_than_reference() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let psis = random_orthonormal(8, 2, &mut rng);
        let r = reference_unitary(&psis).unwrap();
        let noisy = &r + CMat::from_fn(8, 8, |i, j| c(((i * 3 + j) % 5) as f64 * 1e-3, 0.0));
        let b = best_valid_unitary(&psis, &noisy).unwrap();
        assert!((&noisy - &b).norm() <= (&noisy - &r).norm() + 1e-12);
        for (i, p) in psis.iter().enumerate() {
            assert!((b.column(i) - p).norm() < 1e-10);
        }
    }

    #[test]
    fn two_state_instance_end_to_end() {
        let (n, psis) = two_state_example();
        let mut reg = OracleRegistry::new();
        register_state(&mut reg, "v1", &psis[0]).unwrap();
        register_state(&mut reg, "v2", &psis[1]).unwrap();
        let inst = UnitarizationInstance::exact(n, vec!["v1".into(), "v2".into()], 0.05);
        let res = unitarize(&mut reg, &inst).unwrap();
        let d = res.distances.clone().unwrap();
        assert!(res.success && d.proof.operator_norm <= 0.05, "{d:?}");
        assert!(d.proof.ancilla_mass_max <= 0.1);
        assert!(complement_deviation(&res.circuit, &reg, &psis, 50, 1).unwrap() < 1e-9);
    }

    #[test]
    fn naive_circuit_leaves_flag_set() {
        let (n, psis) = naive_failure_example();
        let mut reg = OracleRegistry::new();
        register_state(&mut reg, "v1", &psis[0]).unwrap();
        register_state(&mut reg, "v2", &psis[1]).unwrap();
        let c1 = naive_circuit(&reg, n, &["v1".into(), "v2".into()]).unwrap();
        // Basis inputs behave.
        let m = circuit_matrix(&c1, &reg).unwrap();
        for (i, p) in psis.iter().enumerate() {
            assert!((m.column(i).rows(0, 4) - p).norm() < 1e-12);
        }
        let out = run(&c1, &reg, &StateVector::embed(c1.width(), &psis[0]).unwrap()).unwrap();
        let flagged = StateVector::embed(c1.width(), &psis[0]).unwrap();
        // First flag qubit sits right after the primary register.
        let shifted: CVec = CVec::from_fn(out.amps.len(), |x, _| if x & 4 != 0 { flagged.amps[x & !4] } else { ZERO });
        assert!(crate::linalg::inner(&shifted, &out.amps).norm() >= 0.99);
    }
}
