//! Circuit execution against registered oracles.
//!
//! Narrow circuits run on a dense statevector; wider ones on a
//! matrix-product state. Both consume the same flattened primitives.

pub mod flatten;
pub mod kernel;
pub mod mps;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::circuit::Circuit;
use crate::config::{tolerances, Tolerances};
use crate::error::{Error, Result};
use crate::linalg::{hermitian_max_eigenvalue, CMat, CVec, C64, ONE, ZERO};
use crate::oracle::OracleRegistry;

use flatten::{CallCounts, Flattener, PrimOp};
use mps::{Mps, SiteMap};

/// Widest register run as a dense vector before switching to the
/// tensor-network backend.
pub const DENSE_RUN_LIMIT: usize = 20;
/// Wider programs try the MPS backend first.
pub const MPS_FIRST_WIDTH: usize = 14;
/// MPS results with a larger error estimate are redone densely when the
/// width allows.
pub const MPS_ACCEPT_ERROR: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    pub width: usize,
    pub amps: CVec,
}

impl StateVector {
    pub fn zero(width: usize) -> Self {
        StateVector::basis(width, 0)
    }

    pub fn basis(width: usize, index: usize) -> Self {
        let mut amps = CVec::zeros(1 << width);
        amps[index] = ONE;
        StateVector { width, amps }
    }

    /// `psi ⊗ |0…0⟩` with `psi` on the low qubits.
    pub fn embed(width: usize, psi: &CVec) -> Result<Self> {
        if psi.len() > 1 << width || !psi.len().is_power_of_two() {
            return Err(Error::DimMismatch { expected: 1 << width, got: psi.len() });
        }
        let mut amps = CVec::zeros(1 << width);
        amps.rows_mut(0, psi.len()).copy_from(psi);
        Ok(StateVector { width, amps })
    }

    pub fn from_amps(amps: CVec) -> Result<Self> {
        if !amps.len().is_power_of_two() {
            return Err(Error::DimMismatch { expected: amps.len().next_power_of_two(), got: amps.len() });
        }
        Ok(StateVector { width: amps.len().trailing_zeros() as usize, amps })
    }

    pub fn norm(&self) -> f64 {
        self.amps.norm()
    }

    /// Probability mass on basis states whose bits outside the low `n` are
    /// not all zero.
    pub fn excited_mass(&self, n: usize) -> f64 {
        self.amps.iter().skip(1 << n).map(|z| z.norm_sqr()).sum()
    }
}

/// A circuit flattened once and runnable many times.
pub struct Program {
    pub width: usize,
    pub primary: usize,
    pub ops: Vec<PrimOp>,
    /// Oracle calls made by one execution.
    pub calls: CallCounts,
    tol: Tolerances,
}

pub fn compile(c: &Circuit, reg: &OracleRegistry) -> Result<Program> {
    let tol = tolerances();
    let flat = Flattener::new(reg, tol.materialize_width).flatten(c)?;
    Ok(Program { width: flat.width, primary: c.primary(), ops: flat.ops, calls: flat.calls, tol })
}

pub fn record_calls(reg: &OracleRegistry, calls: &CallCounts, times: u64) {
    for (id, (f, i)) in calls {
        if let Ok(o) = reg.get(id) {
            o.record_call(false, f * times);
            o.record_call(true, i * times);
        }
    }
}

/// Result of running a batch of inputs: amplitudes on requested outputs.
pub struct Readout {
    /// `values[input][output]`.
    pub values: Vec<Vec<C64>>,
    /// Upper estimate of the simulation error in state norm.
    pub sim_error: f64,
}

impl Program {
    pub fn run_dense(&self, amps: &mut [C64]) {
        for op in &self.ops {
            kernel::apply_global(amps, self.width, 1, op);
        }
    }

    fn run_mps(&self, map: &SiteMap, psi: &CVec) -> Mps {
        let n = psi.len().trailing_zeros() as usize;
        let qubits: Vec<usize> = (0..n).collect();
        let mut m = Mps::basis_product(map.clone(), &qubits, psi.as_slice(), self.tol.svd_cutoff, self.tol.max_bond);
        for op in &self.ops {
            m.apply(op);
        }
        m
    }

    fn site_map(&self) -> SiteMap {
        let always: Vec<usize> = (0..self.primary).collect();
        SiteMap::build(self.width, &self.ops, &always)
    }

    /// Runs each primary-register input (ancillas zero) and reads the
    /// amplitudes of the output basis states listed as sets of one-bits.
    pub fn readout(&self, inputs: &[CVec], outputs: &[Vec<usize>]) -> Result<Readout> {
        for psi in inputs {
            if psi.len() != 1 << self.primary {
                return Err(Error::DimMismatch { expected: 1 << self.primary, got: psi.len() });
            }
        }
        if self.width <= MPS_FIRST_WIDTH {
            return Ok(self.readout_dense(inputs, outputs));
        }
        let r = self.readout_mps(inputs, outputs);
        if r.sim_error > MPS_ACCEPT_ERROR && self.width <= DENSE_RUN_LIMIT {
            return Ok(self.readout_dense(inputs, outputs));
        }
        Ok(r)
    }

    fn readout_dense(&self, inputs: &[CVec], outputs: &[Vec<usize>]) -> Readout {
        let idx: Vec<usize> = outputs.iter().map(|ones| ones.iter().fold(0usize, |a, &q| a | (1 << q))).collect();
        let values = inputs
            .par_iter()
            .map(|psi| {
                let mut sv = StateVector::embed(self.width, psi).expect("checked width");
                self.run_dense(sv.amps.as_mut_slice());
                idx.iter().map(|&i| sv.amps[i]).collect()
            })
            .collect();
        Readout { values, sim_error: 0.0 }
    }

    fn readout_mps(&self, inputs: &[CVec], outputs: &[Vec<usize>]) -> Readout {
        let map = self.site_map();
        let runs: Vec<(Vec<C64>, f64)> = inputs
            .par_iter()
            .map(|psi| {
                let m = self.run_mps(&map, psi);
                let err = m.discarded.max(0.0).sqrt() + (1.0 - m.norm_sqr()).abs();
                (outputs.iter().map(|ones| m.amplitude(ones)).collect(), err)
            })
            .collect();
        let sim_error = runs.iter().map(|r| r.1).fold(0.0, f64::max);
        Readout { values: runs.into_iter().map(|r| r.0).collect(), sim_error }
    }

    /// `Y = (I ⊗ ⟨0|) C (I ⊗ |0⟩)` restricted to the given inputs: column
    /// `j` holds the primary amplitudes with all ancillas zero.
    pub fn zero_ancilla_block(&self, inputs: &[CVec]) -> Result<(CMat, f64)> {
        let dim = 1usize << self.primary;
        let outputs: Vec<Vec<usize>> =
            (0..dim).map(|x| (0..self.primary).filter(|&b| (x >> b) & 1 == 1).collect()).collect();
        let r = self.readout(inputs, &outputs)?;
        let y = CMat::from_fn(dim, inputs.len(), |i, j| r.values[j][i]);
        Ok((y, r.sim_error))
    }
}

/// Runs `c` on a full-register input.
pub fn run(c: &Circuit, reg: &OracleRegistry, input: &StateVector) -> Result<StateVector> {
    if input.width != c.width() {
        return Err(Error::DimMismatch { expected: 1 << c.width(), got: input.amps.len() });
    }
    if input.width > DENSE_RUN_LIMIT {
        return Err(Error::TooWide { qubits: input.width, cap: DENSE_RUN_LIMIT });
    }
    let p = compile(c, reg)?;
    let mut out = input.clone();
    p.run_dense(out.amps.as_mut_slice());
    record_calls(reg, &p.calls, 1);
    Ok(out)
}

/// Full unitary of `c`; column `j` is the image of basis state `j`.
pub fn circuit_matrix(c: &Circuit, reg: &OracleRegistry) -> Result<CMat> {
    let cap = tolerances().width_cap;
    let w = c.width();
    if w > cap {
        return Err(Error::TooWide { qubits: w, cap });
    }
    let p = compile(c, reg)?;
    let dim = 1usize << w;
    let mut buf = vec![ZERO; dim * dim];
    for i in 0..dim {
        buf[i * dim + i] = ONE;
    }
    for op in &p.ops {
        kernel::apply_global(&mut buf, w, dim, op);
    }
    record_calls(reg, &p.calls, dim as u64);
    Ok(CMat::from_row_slice(dim, dim, &buf))
}

/// The ancilla-zero block of `c` on every primary basis input.
pub fn zero_ancilla_block(c: &Circuit, reg: &OracleRegistry) -> Result<(CMat, f64)> {
    let n = c.primary();
    let cap = tolerances().width_cap;
    if n > cap {
        return Err(Error::TooWide { qubits: n, cap });
    }
    let p = compile(c, reg)?;
    let dim = 1usize << n;
    let inputs: Vec<CVec> = (0..dim).map(|i| crate::linalg::basis_vec(dim, i)).collect();
    let out = p.zero_ancilla_block(&inputs)?;
    record_calls(reg, &p.calls, dim as u64);
    Ok(out)
}

/// Measures `qubits` (bit `i` of the outcome is `qubits[i]`) and collapses.
pub fn sample_measurement(state: &StateVector, qubits: &[usize], seed: u64) -> (u64, StateVector) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sample_measurement_with(state, qubits, &mut rng)
}

pub fn sample_measurement_with<R: Rng + ?Sized>(
    state: &StateVector,
    qubits: &[usize],
    rng: &mut R,
) -> (u64, StateVector) {
    let outcome_of =
        |i: usize| -> u64 { qubits.iter().enumerate().fold(0u64, |acc, (b, &q)| acc | ((((i >> q) & 1) as u64) << b)) };
    let total: f64 = state.amps.iter().map(|z| z.norm_sqr()).sum();
    let mut u: f64 = rng.random::<f64>() * total;
    let mut chosen = None;
    for (i, z) in state.amps.iter().enumerate() {
        let p = z.norm_sqr();
        if p == 0.0 {
            continue;
        }
        chosen = Some(i);
        if u < p {
            break;
        }
        u -= p;
    }
    let outcome = outcome_of(chosen.unwrap_or(0));
    let mut amps = state.amps.clone();
    for (i, z) in amps.iter_mut().enumerate() {
        if outcome_of(i) != outcome {
            *z = ZERO;
        }
    }
    let nrm = amps.norm();
    if nrm > 0.0 {
        amps.unscale_mut(nrm);
    }
    (outcome, StateVector { width: state.width, amps })
}

#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DistanceReport {
    /// `sup_a ‖C|a,0⟩ − U|a⟩|0⟩‖` over unit `a`.
    pub operator_norm: f64,
    /// The same maximum over computational basis inputs only.
    pub basis_max: f64,
    /// Largest ancilla-excited probability over basis inputs.
    pub ancilla_mass_max: f64,
    /// Simulation error estimate (zero for dense runs).
    pub sim_error: f64,
}

/// Distance between the ancilla-zero block `y` of a unitary circuit and
/// the target `u`, from `G = (Y−U)†(Y−U) + I − Y†Y`.
pub fn distance_from_block(y: &CMat, u: &CMat, sim_error: f64) -> DistanceReport {
    let dim = u.nrows();
    let d = y - u;
    let g = d.adjoint() * &d + CMat::identity(dim, dim) - y.adjoint() * y;
    let op = hermitian_max_eigenvalue(&g).max(0.0).sqrt();
    let basis = (0..dim).map(|a| g[(a, a)].re).fold(0.0, f64::max).sqrt();
    let mass = (0..dim).map(|a| 1.0 - y.column(a).norm_squared()).fold(0.0, f64::max).max(0.0);
    DistanceReport { operator_norm: op, basis_max: basis, ancilla_mass_max: mass, sim_error }
}

/// How well `c` approximates the `n`-qubit unitary `u` with ancillas
/// starting and ending at zero.
pub fn approximation_distance(c: &Circuit, reg: &OracleRegistry, u: &CMat) -> Result<DistanceReport> {
    let dim = 1usize << c.primary();
    if u.shape() != (dim, dim) {
        return Err(Error::DimMismatch { expected: dim, got: u.nrows() });
    }
    let (y, err) = zero_ancilla_block(c, reg)?;
    Ok(distance_from_block(&y, u, err))
}
