//! Command-line front end. `main_with` is what the binary runs; every
//! command writes a [`ReportFile`] and maps its outcome to an exit code.

use std::collections::HashSet;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::basis::{synthesize_basis, SynthesisOptions};
use crate::circuit::Circuit;
use crate::error::{Error, Result};
use crate::estimation::{estimate_inner_product, reference_state, Mode};
use crate::instance::{Check, CircuitBundle, InstanceFile, ReportFile};
use crate::linalg::{inner, orthogonal_component, residual, CVec, C64};
use crate::oracle::OracleRegistry;
use crate::orthogonalize::{approx_orthogonal_components, BlockRule, OrthoParams, Outcome};
use crate::sim::{distance_from_block, run, zero_ancilla_block, StateVector};
use crate::unitarize::{best_valid_unitary, complement_deviation_from_block, naive_circuit, unitarize};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_PARSE: i32 = 2;
pub const EXIT_BUDGET: i32 = 3;

/// Random complement states tried by `verify`.
const COMPLEMENT_TRIALS: usize = 50;

#[derive(Parser, Debug)]
#[command(name = "unitarize", version, about = "Build and check unitarization circuits from state-preparation oracles")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run the full pipeline and write the circuit bundle.
    Synthesize {
        instance: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Recompute distance, complement identity and ancilla restoration.
    Verify {
        circuit: PathBuf,
        instance: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Build the circuit preparing the part of one input orthogonal to the others.
    Orthogonalize {
        instance: PathBuf,
        /// Oracle to orthogonalize; the last input by default.
        #[arg(long)]
        v: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Estimate the inner product of two inputs.
    EstimateAngle {
        instance: PathBuf,
        #[arg(long)]
        v: Option<String>,
        #[arg(long)]
        u: Option<String>,
        #[command(flatten)]
        common: Common,
    },
    /// Run basis synthesis only.
    Basis {
        instance: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Write the flag-based circuit that leaves garbage on non-basis inputs.
    DemoNaive {
        instance: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// `exact` or `sampled`.
    #[arg(long)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub delta_floor: Option<f64>,
    /// `proof` or `tight` block counts.
    #[arg(long)]
    pub rule: Option<BlockRule>,
    /// Report path; printed to stdout when absent.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

impl Common {
    fn apply(&self, f: &mut InstanceFile) {
        if let Some(x) = self.epsilon {
            f.epsilon = x;
        }
        if let Some(x) = self.gamma {
            f.gamma = x;
        }
        if let Some(x) = self.mode {
            f.mode = x;
        }
        if let Some(x) = self.seed {
            f.seed = x;
        }
        if let Some(x) = self.rule {
            f.rule = Some(x);
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::BudgetExceeded(_) | Error::EstimationFailure(_) | Error::TooWide { .. } => EXIT_BUDGET,
        Error::DegenerateVector { .. } | Error::InvariantViolated(_) => EXIT_BUDGET,
        _ => EXIT_PARSE,
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_PARSE } else { EXIT_OK };
        }
    };
    execute(&cli.command)
}

pub fn execute(cmd: &Command) -> i32 {
    let (name, common) = match cmd {
        Command::Synthesize { common, .. } => ("synthesize", common),
        Command::Verify { common, .. } => ("verify", common),
        Command::Orthogonalize { common, .. } => ("orthogonalize", common),
        Command::EstimateAngle { common, .. } => ("estimate-angle", common),
        Command::Basis { common, .. } => ("basis", common),
        Command::DemoNaive { common, .. } => ("demo-naive", common),
    };
    let mut report = ReportFile::new(name);
    let start = Instant::now();
    let outcome = match cmd {
        Command::Synthesize { instance, out, common } => cmd_synthesize(instance, out, common, &mut report),
        Command::Verify { circuit, instance, common } => cmd_verify(circuit, instance, common, &mut report),
        Command::Orthogonalize { instance, v, out, common } => {
            cmd_orthogonalize(instance, v.as_deref(), out.as_deref(), common, &mut report)
        }
        Command::EstimateAngle { instance, v, u, common } => {
            cmd_estimate_angle(instance, v.as_deref(), u.as_deref(), common, &mut report)
        }
        Command::Basis { instance, common } => cmd_basis(instance, common, &mut report),
        Command::DemoNaive { instance, out, common } => cmd_demo_naive(instance, out, common, &mut report),
    };
    report.timing.insert("wall_s".into(), start.elapsed().as_secs_f64());
    report.exit_code = match outcome {
        Ok(()) if report.all_passed() => EXIT_OK,
        Ok(()) => EXIT_CHECK_FAILED,
        Err(e) => {
            report.error = Some(e.to_string());
            exit_code(&e)
        }
    };
    if let Err(e) = emit(&report, common.report.as_deref()) {
        eprintln!("error: {e}");
        return EXIT_PARSE;
    }
    if let Some(e) = &report.error {
        eprintln!("error: {e}");
    }
    report.exit_code
}

fn emit(report: &ReportFile, path: Option<&Path>) -> Result<()> {
    let text = serde_json::to_string_pretty(report)?;
    match path {
        Some(p) => std::fs::write(p, text + "\n")?,
        None => println!("{text}"),
    }
    Ok(())
}

fn load(path: &Path, common: &Common, report: &mut ReportFile) -> Result<(InstanceFile, OracleRegistry)> {
    let mut f = InstanceFile::load(path)?;
    common.apply(&mut f);
    report.param("n", f.n);
    report.param("epsilon", f.epsilon);
    report.param("gamma", f.gamma);
    report.param("mode", f.mode);
    report.param("seed", f.seed);
    report.param("inputs", f.input_ids());
    let reg = f.registry()?;
    Ok((f, reg))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string(value)? + "\n")?;
    Ok(())
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn cmd_synthesize(instance: &Path, out: &Path, common: &Common, report: &mut ReportFile) -> Result<()> {
    let (f, mut reg) = load(instance, common, report)?;
    let inst = f.unitarization();
    report.param("rule", inst.rule);
    let res = unitarize(&mut reg, &inst)?;

    report.metric("basis_size", res.basis.entries.len());
    report.metric("depth", res.basis.depth);
    report.metric("sum_eta", res.basis.total_eta);
    report.metric("sum_size", res.basis.total_size);
    report.metric("eps1", res.eps1);
    report.metric("oracle_calls", &res.oracle_calls);
    report.metric("expanded_size", res.expanded_size);
    report.metric("width", res.circuit.width());
    report.metric("coefficients", &res.coefficients);

    let trace = out.with_extension("trace.jsonl");
    res.basis.write_trace(std::fs::File::create(&trace)?)?;
    report.trace = Some(file_name(&trace));

    let known: HashSet<String> = f.oracles.iter().map(|o| o.id.clone()).collect();
    let bundle = CircuitBundle::collect(&reg, &res.circuit, &known, res.reference.as_ref())?;
    write_json(out, &bundle)?;

    match &res.distances {
        Some(d) => {
            report.metric("distance", d.proof.operator_norm);
            report.metric("distance_reference", d.reference);
            report.metric("distance_best_valid", d.best_valid);
            report.metric("ancilla_mass_max", d.proof.ancilla_mass_max);
            report.metric("sim_error", d.proof.sim_error);
            report.checks.push(Check::at_most("distance", d.proof.operator_norm, f.epsilon));
        }
        None => report.metric("distance", serde_json::Value::Null),
    }
    Ok(())
}

fn cmd_verify(circuit: &Path, instance: &Path, common: &Common, report: &mut ReportFile) -> Result<()> {
    let (f, mut reg) = load(instance, common, report)?;
    let bundle = CircuitBundle::load(circuit)?;
    bundle.register(&mut reg, f.n)?;
    let c = &bundle.circuit;
    if c.primary() != f.n {
        return Err(Error::Parse(format!("circuit has {} primary qubits, instance has {}", c.primary(), f.n)));
    }
    let inst = f.unitarization();
    let psis = inst.states(&reg)?;
    let (y, err) = zero_ancilla_block(c, &reg)?;
    let (target, which) = match bundle.reference_matrix()? {
        Some(u) => {
            let dim = 1usize << f.n;
            if u.shape() != (dim, dim) {
                return Err(Error::Parse(format!("reference is {}×{}, expected {dim}×{dim}", u.nrows(), u.ncols())));
            }
            (u, "bundled")
        }
        None => (best_valid_unitary(&psis, &y)?, "best_valid"),
    };
    let d = distance_from_block(&y, &target, err);
    let complement = complement_deviation_from_block(&y, &psis, COMPLEMENT_TRIALS, f.seed) + err;
    let input_mass = psis.iter().map(|p| (1.0 - (&y * p).norm_squared()).max(0.0)).fold(0.0, f64::max);
    let ancilla = d.ancilla_mass_max.max(input_mass);

    report.metric("reference", which);
    report.metric("distance", d.operator_norm);
    report.metric("basis_max", d.basis_max);
    report.metric("complement_deviation", complement);
    report.metric("ancilla_mass_max", ancilla);
    report.metric("sim_error", err);
    report.metric("width", c.width());
    report.metric("ancilla_violation", ancilla > 2.0 * f.epsilon);
    report.checks.push(Check::at_most("distance", d.operator_norm, f.epsilon));
    report.checks.push(Check::at_most("complement_identity", complement, f.epsilon));
    report.checks.push(Check::at_most("ancilla_restoration", ancilla, 2.0 * f.epsilon));
    Ok(())
}

fn pick(ids: &[String], given: Option<&str>, fallback: Option<&String>, what: &str) -> Result<String> {
    match given.map(str::to_string).or_else(|| fallback.cloned()) {
        Some(id) => Ok(id),
        None => Err(Error::Parse(format!("no oracle for {what}; {} inputs", ids.len()))),
    }
}

fn cmd_orthogonalize(
    instance: &Path,
    v: Option<&str>,
    out: Option<&Path>,
    common: &Common,
    report: &mut ReportFile,
) -> Result<()> {
    let (f, mut reg) = load(instance, common, report)?;
    let ids = f.input_ids();
    let v = pick(&ids, v, ids.last(), "V")?;
    let us: Vec<String> = ids.iter().filter(|id| **id != v).cloned().collect();
    let floor = common.delta_floor.unwrap_or(f.epsilon);
    report.param("v", &v);
    report.param("delta_floor", floor);
    let p = OrthoParams {
        eps1: f.epsilon,
        gamma: f.gamma,
        eps3: f.epsilon,
        delta_floor: floor,
        mode: f.mode,
        seed: f.seed,
        rule: f.rule.unwrap_or_default(),
    };
    let res = approx_orthogonal_components(&mut reg, &v, &us, &p)?;
    report.metric("estimates", &res.estimates);
    let phis: Vec<CVec> = us.iter().map(|u| reference_state(&reg, u)).collect::<Result<_>>()?;
    let psi = reference_state(&reg, &v)?;
    report.metric("delta_exact", residual(&phis, &psi));
    match &res.outcome {
        Outcome::Skipped(reason) => report.metric("skipped", reason),
        Outcome::Built(b) => {
            report.metric("blocks", b.blocks);
            report.metric("ledger", &b.ledger);
            let c = reg.get(&b.oracle)?.circuit().expect("orthogonalizer is a circuit").clone();
            report.metric("width", c.width());
            if let (Some(phi), _) = orthogonal_component(&phis, &psi) {
                let (y, err) = zero_ancilla_block(&c, &reg)?;
                let dev = (y.column(0) - &phi).norm() + err;
                report.metric("residual_error", dev);
                report.checks.push(Check::at_most("residual_error", dev, b.ledger.total));
            }
            if let Some(path) = out {
                let known: HashSet<String> = f.oracles.iter().map(|o| o.id.clone()).collect();
                write_json(path, &CircuitBundle::collect(&reg, &c, &known, None)?)?;
            }
        }
    }
    Ok(())
}

fn cmd_estimate_angle(
    instance: &Path,
    v: Option<&str>,
    u: Option<&str>,
    common: &Common,
    report: &mut ReportFile,
) -> Result<()> {
    let (f, reg) = load(instance, common, report)?;
    let ids = f.input_ids();
    let v = pick(&ids, v, ids.first(), "V")?;
    let u = pick(&ids, u, ids.get(1).or(ids.first()), "U")?;
    report.param("v", &v);
    report.param("u", &u);
    let est = estimate_inner_product(&reg, &v, &u, f.epsilon, f.gamma, f.mode, f.seed)?;
    let exact = inner(&reference_state(&reg, &u)?, &reference_state(&reg, &v)?);
    let err = (est.value - exact).norm();
    report.metric("estimate", [est.value.re, est.value.im]);
    report.metric("exact", [exact.re, exact.im]);
    report.metric("error", err);
    report.metric("samples", est.samples_used);
    report.checks.push(Check::at_most("estimate_error", err, f.epsilon));
    Ok(())
}

fn cmd_basis(instance: &Path, common: &Common, report: &mut ReportFile) -> Result<()> {
    let (f, mut reg) = load(instance, common, report)?;
    let ids = f.input_ids();
    let opts = SynthesisOptions {
        eps: f.epsilon,
        gamma: f.gamma,
        mode: f.mode,
        seed: f.seed,
        rule: f.rule.unwrap_or_default(),
        eps1: None,
    };
    let res = synthesize_basis(&mut reg, &ids, &opts)?;
    report.metric("basis_size", res.entries.len());
    report.metric("depth", res.depth);
    report.metric("sum_eta", res.total_eta);
    report.metric("sum_size", res.total_size);
    report.metric("eps1", res.eps1);
    report.metric("entries", &res.entries);
    report.metric("guard_failures", &res.guard_failures);
    let ys = res.states(&reg)?;
    let worst = ids
        .iter()
        .map(|id| reference_state(&reg, id).map(|p| residual(&ys, &p)))
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);
    report.metric("max_residual", worst);
    report.checks.push(Check::at_most("max_residual", worst, f.epsilon));
    report.checks.push(Check::at_most("sum_eta", res.total_eta, f.epsilon));
    if let Some(p) = &common.report {
        let trace = p.with_extension("trace.jsonl");
        res.write_trace(std::fs::File::create(&trace)?)?;
        report.trace = Some(file_name(&trace));
    }
    Ok(())
}

fn cmd_demo_naive(instance: &Path, out: &Path, common: &Common, report: &mut ReportFile) -> Result<()> {
    let (f, reg) = load(instance, common, report)?;
    let ids = f.input_ids();
    let c = naive_circuit(&reg, f.n, &ids)?;
    let psi = reference_state(&reg, &ids[0])?;
    let amp = flagged_amplitude(&c, &reg, &psi)?;
    report.metric("width", c.width());
    report.metric("flag_amplitude", amp);
    let known: HashSet<String> = f.oracles.iter().map(|o| o.id.clone()).collect();
    write_json(out, &CircuitBundle::collect(&reg, &c, &known, None)?)?;
    Ok(())
}

/// `|⟨ψ, flag = 10|C₁|ψ, 00⟩|`: the weight left on the first flag.
pub fn flagged_amplitude(c: &Circuit, reg: &OracleRegistry, psi: &CVec) -> Result<f64> {
    let n = c.primary();
    let out = run(c, reg, &StateVector::embed(c.width(), psi)?)?;
    let flag = 1usize << n;
    let overlap: C64 = psi.iter().enumerate().map(|(x, a)| a.conj() * out.amps[x | flag]).sum();
    Ok(overlap.norm())
}
