//! Hadamard-test estimation of `⟨φ|ψ⟩` for two state-preparation oracles.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};

use crate::circuit::{Circuit, Gate, Predicate, RegisterLayout, Span};
use crate::config::tolerances;
use crate::error::{Error, Result};
use crate::linalg::{c, inner, CVec, C64};
use crate::oracle::{OracleBody, OracleRegistry};
use crate::sim::flatten::CallCounts;
use crate::sim::{compile, record_calls};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Exact,
    Sampled,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Mode> {
        match s {
            "exact" => Ok(Mode::Exact),
            "sampled" => Ok(Mode::Sampled),
            other => Err(Error::Parse(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AngleEstimate {
    pub value: C64,
    pub additive_error_bound: f64,
    pub failure_prob: f64,
    pub samples_used: u64,
    pub mode: Mode,
}

/// Shots per quadrature: `⌈8 ln(8/γ) / ε²⌉`.
pub fn repetition_count(eps: f64, gamma: f64) -> u64 {
    (8.0 * (8.0 / gamma).ln() / (eps * eps)).ceil() as u64
}

/// Independent per-event seed derived from a run seed.
pub fn event_seed(seed: u64, event: u64) -> u64 {
    let mut z = seed ^ event.wrapping_mul(0x9E3779B97F4A7C15).rotate_left(17);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Register name of the test qubit.
pub const TEST_QUBIT: &str = "had";
const WORK: &str = "work";

/// H on the test qubit, V then U⁻¹ controlled on it, H. With `imaginary`
/// the `|1⟩` branch picks up a phase `i` before V.
pub fn hadamard_test_circuit(reg: &OracleRegistry, v: &str, u: &str, imaginary: bool) -> Result<Circuit> {
    let (ov, ou) = (reg.get(v)?, reg.get(u)?);
    if ov.n != ou.n {
        return Err(Error::DimMismatch { expected: 1 << ov.n, got: 1 << ou.n });
    }
    let n = ov.n;
    let m = ov.workspace().max(ou.workspace());
    let layout = RegisterLayout::new(n).with_block(WORK, m).with_block(TEST_QUBIT, 1);
    let t = Span::qubit(TEST_QUBIT, 0);
    let on = Predicate::EqualsBasis { value: 1 };
    let mut circ = Circuit::new(layout);
    circ.push(Gate::h(t.clone()));
    if imaginary {
        circ.push(Gate::s(t.clone()));
    }
    circ.push(Gate::controlled(t.clone(), on.clone(), Gate::call(v, Span::oracle(n, WORK, ov.qubits))))
        .push(Gate::controlled(t.clone(), on, Gate::call_inv(u, Span::oracle(n, WORK, ou.qubits))))
        .push(Gate::h(t));
    Ok(circ)
}

/// `P(test = 0, register = 0)` and `P(test = 1, register = 0)`.
pub fn hadamard_probabilities(reg: &OracleRegistry, v: &str, u: &str, imaginary: bool) -> Result<(f64, f64)> {
    hadamard_run(reg, v, u, imaginary).map(|(p0, p1, _)| (p0, p1))
}

fn hadamard_run(reg: &OracleRegistry, v: &str, u: &str, imaginary: bool) -> Result<(f64, f64, CallCounts)> {
    let circ = hadamard_test_circuit(reg, v, u, imaginary)?;
    let n = circ.primary();
    let (test, _) = circ.layout.register(TEST_QUBIT).expect("test qubit");
    let p = compile(&circ, reg)?;
    let psi = crate::linalg::basis_vec(1 << n, 0);
    let r = p.readout(&[psi], &[vec![], vec![test]])?;
    Ok((r.values[0][0].norm_sqr(), r.values[0][1].norm_sqr(), p.calls))
}

/// The `n`-qubit state an oracle stands for: its declared state if set,
/// otherwise the primary amplitudes of its output on zero with the
/// workspace projected to zero.
pub fn reference_state(reg: &OracleRegistry, id: &str) -> Result<CVec> {
    let o = reg.get(id)?;
    if let Some(s) = &o.prepared_state {
        return Ok(s.clone());
    }
    let dim = 1usize << o.n;
    match &o.body {
        OracleBody::Matrix(m) => Ok(m.column(0).rows(0, dim).into_owned()),
        OracleBody::Circuit(circ) => {
            let p = compile(circ, reg)?;
            let (y, _) = p.zero_ancilla_block(&[crate::linalg::basis_vec(dim, 0)])?;
            Ok(y.column(0).into_owned())
        }
    }
}

fn sample_difference(p0: f64, p1: f64, shots: u64, rng: &mut ChaCha20Rng) -> Result<f64> {
    let p0 = p0.clamp(0.0, 1.0);
    let c0 = Binomial::new(shots, p0).map_err(|e| Error::EstimationFailure(e.to_string()))?.sample(rng);
    let rest = 1.0 - p0;
    let q = if rest <= 0.0 { 0.0 } else { (p1 / rest).clamp(0.0, 1.0) };
    let c1 = Binomial::new(shots - c0, q).map_err(|e| Error::EstimationFailure(e.to_string()))?.sample(rng);
    Ok((c0 as f64 - c1 as f64) / shots as f64)
}

/// Estimate of `⟨φ|ψ⟩` where `V` prepares `ψ` and `U` prepares `φ`.
pub fn estimate_inner_product(
    reg: &OracleRegistry,
    v: &str,
    u: &str,
    eps: f64,
    gamma: f64,
    mode: Mode,
    seed: u64,
) -> Result<AngleEstimate> {
    let (ov, ou) = (reg.get(v)?, reg.get(u)?);
    if ov.n != ou.n {
        return Err(Error::DimMismatch { expected: 1 << ov.n, got: 1 << ou.n });
    }
    match mode {
        Mode::Exact => {
            let psi = reference_state(reg, v)?;
            let phi = reference_state(reg, u)?;
            Ok(AngleEstimate {
                value: inner(&phi, &psi),
                additive_error_bound: 0.0,
                failure_prob: 0.0,
                samples_used: 0,
                mode,
            })
        }
        Mode::Sampled => {
            if !(eps > 0.0 && eps < 1.0 + 1e-12 && gamma > 0.0 && gamma < 1.0) {
                return Err(Error::InvalidParameter(format!("estimation budgets ε={eps}, γ={gamma}")));
            }
            let shots = repetition_count(eps, gamma);
            let cap = tolerances().max_samples;
            if shots > cap {
                return Err(Error::BudgetExceeded(format!("{shots} shots per quadrature exceeds cap {cap}")));
            }
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let (a0, a1, calls) = hadamard_run(reg, v, u, false)?;
            let re = sample_difference(a0, a1, shots, &mut rng)?;
            let (b0, b1, _) = hadamard_run(reg, v, u, true)?;
            let im = -sample_difference(b0, b1, shots, &mut rng)?;
            record_calls(reg, &calls, 2 * shots);
            Ok(AngleEstimate {
                value: c(re, im),
                additive_error_bound: eps,
                failure_prob: gamma,
                samples_used: 2 * shots,
                mode,
            })
        }
    }
}

/// As [`estimate_inner_product`], with the declared preparation errors of
/// both oracles added to the bound.
pub fn estimate_inner_product_robust(
    reg: &OracleRegistry,
    v: &str,
    u: &str,
    eps: f64,
    gamma: f64,
    mode: Mode,
    seed: u64,
) -> Result<AngleEstimate> {
    let mut est = estimate_inner_product(reg, v, u, eps, gamma, mode, seed)?;
    let eta = reg.get(u)?.eta + reg.get(v)?.eta;
    est.additive_error_bound += eta;
    if mode == Mode::Exact {
        est.additive_error_bound = eta;
    }
    Ok(est)
}
