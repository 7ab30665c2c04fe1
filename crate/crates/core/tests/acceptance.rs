//! End-to-end acceptance checks. Runs as a plain binary and prints one
//! PASS/FAIL line per criterion.

use std::ops::SubAssign;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use statrs::distribution::{Beta, ContinuousCDF};

use unitarize::basis::{depth_bound, synthesize_basis, SynthesisOptions};
use unitarize::circuit::{compose, Circuit, Gate, RegisterLayout, Span, PRIMARY};
use unitarize::cli::flagged_amplitude;
use unitarize::estimation::{estimate_inner_product, hadamard_probabilities, Mode};
use unitarize::instance::ReportFile;
use unitarize::linalg::{
    basis_vec, c, complete_unitary, gram_schmidt, inner, operator_norm, random_orthonormal, random_state,
    random_unitary, residual, CMat, CVec, ONE, ZERO,
};
use unitarize::oracle::OracleRegistry;
use unitarize::orthogonalize::{
    approx_orthogonal_components, build_orthogonalizer_with_blocks, BlockRule, OrthoParams,
};
use unitarize::sim::{approximation_distance, circuit_matrix, run, zero_ancilla_block, StateVector};
use unitarize::unitarize::{
    build_deferred_rotation, deferred_rotation_target, naive_circuit, naive_failure_example, register_state,
    two_state_example, unitarize, UnitarizationInstance,
};

type Outcome = Result<String, String>;
type Criterion = fn() -> Outcome;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn register_all(reg: &mut OracleRegistry, prefix: &str, states: &[CVec]) -> Vec<String> {
    states
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let id = format!("{prefix}{i}");
            register_state(reg, &id, s).unwrap();
            id
        })
        .collect()
}

fn end_to_end() -> Outcome {
    let start = Instant::now();
    let (n, psis) = two_state_example();
    let mut reg = OracleRegistry::new();
    let ids = register_all(&mut reg, "v", &psis);
    let res = unitarize(&mut reg, &UnitarizationInstance::exact(n, ids, 0.05)).map_err(|e| e.to_string())?;
    let secs = start.elapsed().as_secs_f64();
    let d = res.distances.ok_or("no distances in exact mode")?;
    let dist = d.proof.operator_norm + d.proof.sim_error;
    let mass = d.proof.ancilla_mass_max;
    ensure(
        dist <= 0.05 && mass <= 0.1 && secs < 60.0,
        format!("distance {dist:.3e} <= 0.05, ancilla mass {mass:.3e} <= 0.1, {secs:.1} s < 60 s"),
    )
}

/// Resolution of a residual read as `√(2 − 2 Re⟨Φ|y⟩)` plus the simulator's
/// truncation estimate.
const READOUT_FLOOR: f64 = 1e-6;

fn orthogonalizer_residuals() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    let eps = 0.01;
    let mut worst: f64 = 0.0;
    let mut worst_short: f64 = 0.0;
    for trial in 0..100 {
        let n = rng.random_range(2..=4);
        let k = rng.random_range(1..=3);
        let dim = 1usize << n;
        let us = random_orthonormal(dim, k, &mut rng);
        let (psi, delta) = loop {
            let psi = random_state(dim, &mut rng);
            let d = residual(&us, &psi);
            if d >= 0.3 {
                break (psi, d);
            }
        };
        let mut reg = OracleRegistry::new();
        let uids = register_all(&mut reg, "u", &us);
        register_state(&mut reg, "v", &psi).unwrap();
        let p = OrthoParams {
            eps1: 1e-6,
            gamma: 0.01,
            eps3: eps,
            delta_floor: 0.1,
            mode: Mode::Exact,
            seed: trial,
            rule: BlockRule::Proof,
        };
        let res = approx_orthogonal_components(&mut reg, "v", &uids, &p).map_err(|e| format!("trial {trial}: {e}"))?;
        let built = res.built().ok_or(format!("trial {trial}: skipped"))?;
        let l = built.blocks;
        let circ = reg.get(&built.oracle).unwrap().circuit().unwrap().clone();
        let proj = projector(&us, dim);
        let mut phi = &psi - &proj * &psi;
        phi.unscale_mut(phi.norm());
        let dev = orthogonalizer_residual(&circ, &reg, &phi)?;
        let alpha = (1.0 - delta * delta).sqrt();
        let bound = 2.0 * alpha.powi(l as i32);
        let calls = circ.oracle_counts();
        let rot = built.rotation.as_ref().unwrap();
        let calls_ok =
            calls["v"] <= l as u64 && calls[rot] <= l as u64 && uids.iter().all(|u| calls[u] <= 2 * l as u64);
        if !(dev <= eps && dev <= bound + READOUT_FLOOR && calls_ok) {
            return Err(format!("trial {trial}: residual {dev:.3e}, 2α^l {bound:.3e}, l {l}, calls {calls:?}"));
        }
        // Short chains, where 2α^l is far above the readout floor.
        for short in 1..=3 {
            let c = build_orthogonalizer_with_blocks(&reg, "v", &uids, rot, short).map_err(|e| e.to_string())?;
            let d = orthogonalizer_residual(&c, &reg, &phi)?;
            let b = 2.0 * alpha.powi(short as i32);
            if d > b + READOUT_FLOOR {
                return Err(format!("trial {trial}: {short} blocks, residual {d:.3e} > 2α^l {b:.3e}"));
            }
            worst_short = worst_short.max(d / b);
        }
        worst = worst.max(dev);
    }
    Ok(format!(
        "100 instances, max residual {worst:.3e} <= 0.01 and <= 2α^l; with 1-3 blocks max residual/2α^l {worst_short:.3}"
    ))
}

/// `‖A|0⟩ − Φ⊗|0⟩‖` plus the simulator's error estimate. The output is a
/// unit vector, so the distance follows from the overlap alone.
fn orthogonalizer_residual(circ: &Circuit, reg: &OracleRegistry, phi: &CVec) -> Result<f64, String> {
    let (y, sim_error) = zero_ancilla_block(circ, reg).map_err(|e| e.to_string())?;
    let overlap = inner(phi, &y.column(0).into_owned()).re;
    Ok((2.0 - 2.0 * overlap).max(0.0).sqrt() + sim_error)
}

fn projector(vs: &[CVec], dim: usize) -> CMat {
    vs.iter().fold(CMat::zeros(dim, dim), |acc, v| acc + v * v.adjoint())
}

/// Upper end of the one-sided 95% Clopper-Pearson interval.
fn failure_rate_upper(failures: u64, trials: u64) -> f64 {
    if failures == trials {
        return 1.0;
    }
    Beta::new(failures as f64 + 1.0, (trials - failures) as f64).unwrap().inverse_cdf(0.95)
}

fn hadamard_calibration() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let (eps, gamma) = (0.05, 0.05);
    let mut failures = 0u64;
    let mut trials = 0u64;
    let mut worst_prob: f64 = 0.0;
    let mut worst_pair_upper: f64 = 0.0;
    for pair in 0..20u64 {
        let dim = 1usize << rng.random_range(1..=3);
        let (psi, phi) = (random_state(dim, &mut rng), random_state(dim, &mut rng));
        let mut reg = OracleRegistry::new();
        register_state(&mut reg, "V", &psi).unwrap();
        register_state(&mut reg, "U", &phi).unwrap();
        let exact = inner(&phi, &psi);
        let (p0, p1) = hadamard_probabilities(&reg, "V", "U", false).map_err(|e| e.to_string())?;
        let (q0, q1) = hadamard_probabilities(&reg, "V", "U", true).map_err(|e| e.to_string())?;
        let ic = c(0.0, 1.0) * exact;
        for (got, want) in [
            (p0, (ONE + exact).norm_sqr() / 4.0),
            (p1, (ONE - exact).norm_sqr() / 4.0),
            (q0, (ONE + ic).norm_sqr() / 4.0),
            (q1, (ONE - ic).norm_sqr() / 4.0),
        ] {
            worst_prob = worst_prob.max((got - want).abs());
        }
        let mut pair_failures = 0;
        for s in 0..200u64 {
            let est = estimate_inner_product(&reg, "V", "U", eps, gamma, Mode::Sampled, (pair << 32) | s)
                .map_err(|e| e.to_string())?;
            if (est.value - exact).norm() > eps {
                pair_failures += 1;
            }
        }
        worst_pair_upper = worst_pair_upper.max(failure_rate_upper(pair_failures, 200));
        failures += pair_failures;
        trials += 200;
    }
    let upper = failure_rate_upper(failures, trials);
    ensure(
        upper <= gamma && worst_prob <= 1e-9,
        format!(
            "{failures}/{trials} failures, 95% upper rate {upper:.4} <= 0.05 (worst pair {worst_pair_upper:.4}), probability error {worst_prob:.1e}"
        ),
    )
}

fn gram_schmidt_stability() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(4);
    let mut worst_ratio: f64 = 0.0;
    for trial in 0..1000 {
        let k = rng.random_range(2..=8);
        let dim = rng.random_range(k..=64);
        let eps = rng.random_range(0.0..1.0) / (64.0 * (k * k) as f64);
        let vs = random_orthonormal(dim, k, &mut rng);
        // Odd trials tilt every vector toward the ones before it, where the
        // errors compound.
        let tilt = trial % 2 == 1;
        let ws: Vec<CVec> = (0..k)
            .map(|i| {
                let mut dir = random_state(dim, &mut rng);
                if tilt && i > 0 {
                    dir = vs[..i].iter().fold(dir * c(0.1, 0.0), |acc, v| acc + v);
                    dir.unscale_mut(dir.norm());
                }
                let scale = if tilt { eps } else { eps * rng.random_range(0.0..=1.0) };
                &vs[i] + dir * c(scale, 0.0)
            })
            .collect();
        let us = gram_schmidt(&ws).map_err(|e| format!("trial {trial}: {e}"))?;
        let dev = vs.iter().zip(&us).map(|(v, u)| (v - u).norm()).fold(0.0, f64::max);
        let bound = (64 * k + 1) as f64 * eps;
        if dev > bound {
            return Err(format!("trial {trial}: k {k}, dim {dim}, deviation {dev:.3e} > {bound:.3e}"));
        }
        worst_ratio = worst_ratio.max(dev / bound);
    }
    Ok(format!("1000 trials, 0 violations, max deviation/(64k+1)ε {worst_ratio:.3e}"))
}

/// A circuit on `n` primary qubits and one ancilla applying a unitary close
/// to `u ⊗ I`.
fn noisy_circuit<R: Rng>(u: &CMat, noise: f64, rng: &mut R) -> Circuit {
    let n = u.nrows().trailing_zeros() as usize;
    let dim = 2 * u.nrows();
    let a = CMat::from_fn(dim, dim, |_, _| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)));
    let h = (&a + a.adjoint()) * c(noise / 2.0, 0.0);
    let i = CMat::identity(dim, dim);
    let im = c(0.0, 1.0);
    let cayley = (&i - &h * im) * (&i + &h * im).try_inverse().unwrap();
    let m = CMat::identity(2, 2).kronecker(u) * cayley;
    let layout = RegisterLayout::new(n).with_block("anc", 1);
    let mut circ = Circuit::new(layout);
    circ.push(Gate::dense(m, Span::new(&[PRIMARY, "anc"], 0, n + 1)));
    circ
}

fn composition() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let reg = OracleRegistry::new();
    let mut worst_slack = f64::INFINITY;
    for trial in 0..100 {
        let dim = 1usize << rng.random_range(1..=3);
        let (u1, u2) = (random_unitary(dim, &mut rng), random_unitary(dim, &mut rng));
        let c1 = noisy_circuit(&u1, rng.random_range(0.0..0.2), &mut rng);
        let c2 = noisy_circuit(&u2, rng.random_range(0.0..0.2), &mut rng);
        let d = |circ: &Circuit, u: &CMat| approximation_distance(circ, &reg, u).map(|r| r.operator_norm);
        let (d1, d2) = (d(&c1, &u1).unwrap(), d(&c2, &u2).unwrap());
        let both = compose(&c1, &c2).map_err(|e| e.to_string())?;
        let d12 = d(&both, &(&u2 * &u1)).unwrap();
        if d12 > d1 + d2 + 1e-9 {
            return Err(format!("trial {trial}: {d12:.6e} > {d1:.6e} + {d2:.6e}"));
        }
        worst_slack = worst_slack.min(d1 + d2 - d12);
    }
    Ok(format!("100 pairs, min slack {worst_slack:.3e}"))
}

fn basis_synthesis() -> Outcome {
    let mut rng = ChaCha20Rng::seed_from_u64(6);
    let eps = 0.05;
    let mut worst_delta: f64 = 0.0;
    let mut worst_span: f64 = 0.0;
    let mut worst_eta: f64 = 0.0;
    for trial in 0..50u64 {
        let n = rng.random_range(1..=4);
        let k = rng.random_range(1..=4);
        let psis: Vec<CVec> = (0..k).map(|_| random_state(1 << n, &mut rng)).collect();
        let mut reg = OracleRegistry::new();
        let ids = register_all(&mut reg, "v", &psis);
        let opts = SynthesisOptions { seed: trial, ..SynthesisOptions::exact(eps) };
        let res = synthesize_basis(&mut reg, &ids, &opts).map_err(|e| format!("trial {trial}: {e}"))?;
        let ys = res.states(&reg).map_err(|e| e.to_string())?;
        let delta = psis.iter().map(|p| residual(&ys, p)).fold(0.0, f64::max);
        let orth = gram_schmidt_span(&psis);
        let span = ys.iter().map(|y| residual(&orth, y)).fold(0.0, f64::max);
        let depth_ok = res.depth <= depth_bound(k, eps);
        if !(res.success && delta <= eps && span <= 1e-8 && res.total_eta <= eps && depth_ok) {
            return Err(format!(
                "trial {trial}: n {n}, k {k}, Δ {delta:.3e}, span {span:.3e}, Ση {:.3e}, depth {}",
                res.total_eta, res.depth
            ));
        }
        worst_delta = worst_delta.max(delta);
        worst_span = worst_span.max(span);
        worst_eta = worst_eta.max(res.total_eta);
    }

    let mut reg = OracleRegistry::new();
    let p = random_state(8, &mut rng);
    let ids = register_all(&mut reg, "dup", &[p.clone(), p]);
    let res = synthesize_basis(&mut reg, &ids, &SynthesisOptions::exact(eps)).map_err(|e| e.to_string())?;
    ensure(
        res.entries.len() == 1,
        format!(
            "50 instances, max Δ {worst_delta:.3e}, span error {worst_span:.1e}, max Ση {worst_eta:.3e}; duplicate pair gives |X| = {}",
            res.entries.len()
        ),
    )
}

/// Orthonormal basis of the span of `vs`, dropping dependent vectors.
fn gram_schmidt_span(vs: &[CVec]) -> Vec<CVec> {
    let mut out: Vec<CVec> = Vec::new();
    for v in vs {
        let mut r = v.clone();
        for _ in 0..2 {
            for u in &out {
                r -= u * inner(u, &r);
            }
        }
        if r.norm() > 1e-10 {
            out.push(r.unscale(r.norm()));
        }
    }
    out
}

/// States orthogonal to the first `k` basis states of a `2^n` space.
fn lifted_orthonormal<R: Rng>(n: usize, k: usize, count: usize, rng: &mut R) -> Vec<CVec> {
    let dim = 1usize << n;
    random_orthonormal(dim - k, count, rng)
        .into_iter()
        .map(|x| CVec::from_iterator(dim, std::iter::repeat_n(ZERO, k).chain(x.iter().copied())))
        .collect()
}

/// `n`, `k`, the states `φ` and the coefficient vectors.
type RotationCase = (usize, usize, Vec<CVec>, Vec<CVec>);

fn deferred_rotation_instances() -> Vec<RotationCase> {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let real = |xs: &[f64]| CVec::from_iterator(xs.len(), xs.iter().map(|&x| c(x, 0.0)));
    let mut out = vec![
        // Swap |0⟩ with |2⟩.
        (2, 1, vec![basis_vec(4, 2)], vec![real(&[0.0, 1.0])]),
        // |0⟩ onto (|0⟩ + |2⟩)/√2.
        (2, 1, vec![basis_vec(4, 2)], vec![real(&[s, s])]),
        // Phase on |1⟩ only.
        (2, 2, vec![], vec![real(&[1.0, 0.0]), CVec::from_vec(vec![ZERO, c(0.0, 1.0)])]),
        // Exchange |0⟩ and |1⟩, leave the rest alone.
        (2, 2, vec![basis_vec(4, 3)], vec![real(&[0.0, 1.0, 0.0]), real(&[1.0, 0.0, 0.0])]),
        // Three-way cycle through a superposed φ.
        (
            3,
            1,
            vec![CVec::from_vec(vec![ZERO, ZERO, c(s, 0.0), ZERO, ZERO, ZERO, c(0.0, s), ZERO])],
            vec![real(&[0.0, 1.0])],
        ),
    ];
    let mut rng = ChaCha20Rng::seed_from_u64(7);
    while out.len() < 20 {
        let n = rng.random_range(2..=3);
        let k = rng.random_range(1..=3usize).min((1 << n) - 1);
        let l = rng.random_range(0..=((1 << n) - k).min(3));
        let phis = lifted_orthonormal(n, k, l, &mut rng);
        let v = random_orthonormal(k + l, k, &mut rng);
        out.push((n, k, phis, v));
    }
    out
}

/// `sup_a ‖C|a,0⟩ − U|a⟩|0⟩‖` from the full circuit matrix. Working on the
/// stacked columns avoids the cancellation in `I − Y†Y`.
fn stacked_distance(circ: &Circuit, reg: &OracleRegistry, u: &CMat) -> Result<f64, String> {
    let m = circuit_matrix(circ, reg).map_err(|e| e.to_string())?;
    let dim = u.nrows();
    let mut diff = m.columns(0, dim).into_owned();
    diff.view_mut((0, 0), (dim, dim)).sub_assign(u);
    Ok(operator_norm(&diff))
}

fn deferred_rotation() -> Outcome {
    let mut worst_dist: f64 = 0.0;
    let mut worst_chain: f64 = 0.0;
    let mut chains = 0;
    for (idx, (n, k, phis, v)) in deferred_rotation_instances().into_iter().enumerate() {
        let mut reg = OracleRegistry::new();
        let ids = register_all(&mut reg, "phi", &phis);
        let circ = build_deferred_rotation(&reg, n, k, &ids, &v).map_err(|e| format!("instance {idx}: {e}"))?;
        let target = deferred_rotation_target(n, k, &phis, &v).map_err(|e| e.to_string())?;
        let d = stacked_distance(&circ, &reg, &target)?;
        worst_dist = worst_dist.max(d);

        // |i⟩ and |φⱼ⟩ go to the matching columns of the completed rotation
        // expanded over B; anything orthogonal to B is left alone.
        let dim = 1usize << n;
        let m = k + phis.len();
        let u = complete_unitary(&v, m).map_err(|e| e.to_string())?;
        let b: Vec<CVec> = (0..k).map(|j| basis_vec(dim, j)).chain(phis.iter().cloned()).collect();
        let width = circ.width();
        let mut check = |input: &CVec, want: &CVec| -> Result<f64, String> {
            let out = run(&circ, &reg, &StateVector::embed(width, input).map_err(|e| e.to_string())?)
                .map_err(|e| e.to_string())?;
            let want = StateVector::embed(width, want).map_err(|e| e.to_string())?;
            chains += 1;
            Ok((&out.amps - &want.amps).norm())
        };
        for (col, input) in b.iter().enumerate() {
            let want = (0..m).fold(CVec::zeros(dim), |acc, j| acc + &b[j] * u[(j, col)]);
            worst_chain = worst_chain.max(check(input, &want)?);
        }
        let theta =
            gram_schmidt_span(&b.iter().cloned().chain((0..dim).map(|j| basis_vec(dim, j))).collect::<Vec<_>>());
        if let Some(theta) = theta.get(m) {
            worst_chain = worst_chain.max(check(theta, theta)?);
        }
    }
    ensure(
        worst_dist <= 1e-9 && worst_chain <= 1e-9,
        format!("20 instances, max distance {worst_dist:.1e}; {chains} case chains, max error {worst_chain:.1e}"),
    )
}

fn binary(args: &[&str], dir: &Path) -> i32 {
    Command::new(env!("CARGO_BIN_EXE_unitarize"))
        .args(args)
        .current_dir(dir)
        .output()
        .expect("binary runs")
        .status
        .code()
        .expect("exit code")
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

fn naive_regression() -> Outcome {
    let (n, psis) = naive_failure_example();
    let mut reg = OracleRegistry::new();
    let ids = register_all(&mut reg, "v", &psis);
    let c1 = naive_circuit(&reg, n, &ids).map_err(|e| e.to_string())?;
    let amp = flagged_amplitude(&c1, &reg, &psis[0]).map_err(|e| e.to_string())?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let inst = data("naive.json");
    let inst = inst.to_str().unwrap();
    let demo = binary(&["demo-naive", inst, "--out", "naive_c1.json", "--report", "demo.json"], dir.path());
    let verify_naive = binary(&["verify", "naive_c1.json", inst, "--report", "v1.json"], dir.path());
    let flagged = ReportFile::load(&dir.path().join("v1.json")).map_err(|e| e.to_string())?.metrics
        ["ancilla_violation"]
        == serde_json::Value::Bool(true);
    let synth = binary(&["synthesize", inst, "--out", "c.json", "--report", "s.json"], dir.path());
    let verify_ours = binary(&["verify", "c.json", inst, "--report", "v2.json"], dir.path());
    ensure(
        amp >= 0.99 && demo == 0 && verify_naive == 1 && flagged && synth == 0 && verify_ours == 0,
        format!(
            "flag amplitude {amp:.6} >= 0.99; verify(C1) exit {verify_naive}, ancilla violation {flagged}; synthesize exit {synth}, verify exit {verify_ours}"
        ),
    )
}

fn determinism() -> Outcome {
    let reports: Vec<ReportFile> = (0..2)
        .map(|_| {
            let dir = tempfile::tempdir().unwrap();
            let inst = data("two_state.json");
            let code =
                binary(&["synthesize", inst.to_str().unwrap(), "--out", "c.json", "--report", "r.json"], dir.path());
            assert_eq!(code, 0);
            ReportFile::load(&dir.path().join("r.json")).unwrap().without_timing()
        })
        .collect();
    ensure(reports[0] == reports[1], "two synthesize runs give identical reports".into())
}

fn main() {
    let criteria: [(&str, Criterion); 9] = [
        ("end-to-end two-state instance", end_to_end),
        ("orthogonalizer residual bound", orthogonalizer_residuals),
        ("Hadamard-test calibration", hadamard_calibration),
        ("Gram-Schmidt stability", gram_schmidt_stability),
        ("approximate composition", composition),
        ("basis synthesis properties", basis_synthesis),
        ("deferred rotation exactness", deferred_rotation),
        ("naive circuit regression", naive_regression),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {} {name}: {detail} [{secs:.1} s]", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {} {name}: {detail} [{secs:.1} s]", i + 1);
            }
        }
    }
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
