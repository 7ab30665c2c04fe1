//! Circuits preparing an approximate orthonormal basis of the span of a list
//! of prepared states, built one orthogonal component at a time.

use std::collections::{BTreeSet, HashMap};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimation::{estimate_inner_product_robust, event_seed, reference_state, Mode};
use crate::linalg::{residual, CVec, C64};
use crate::oracle::{expanded_size, OracleRegistry};
use crate::orthogonalize::{
    approx_orthogonal_components_from, eps2, estimate_components, BlockRule, ComponentEstimates, OrthoParams, Outcome,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthesisOptions {
    pub eps: f64,
    pub gamma: f64,
    pub mode: Mode,
    pub seed: u64,
    pub rule: BlockRule,
    /// Fixed estimation budget; chosen automatically when absent.
    pub eps1: Option<f64>,
}

impl SynthesisOptions {
    pub fn exact(eps: f64) -> Self {
        SynthesisOptions { eps, gamma: 0.01, mode: Mode::Exact, seed: 0, rule: BlockRule::Tight, eps1: None }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    /// Already close to the span of the basis.
    Covered,
    /// Orthogonalized against the staged set, then against the full basis.
    TwoStage,
    /// Orthogonalized against the full basis, which then becomes the staged set.
    Promote,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub step: usize,
    pub branch: Branch,
    pub index: usize,
    pub depth: usize,
    /// Estimated distance of the chosen state from the basis.
    pub delta: f64,
    /// Estimated distance from the staged set.
    pub delta_staged: f64,
    pub delta_star: f64,
    pub eta_x: Option<f64>,
    pub size_x: Option<u64>,
    pub blocks: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "index", rename_all = "snake_case")]
pub enum Source {
    Seed(usize),
    State(usize),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BasisEntry {
    pub oracle: String,
    pub source: Source,
    pub eta: f64,
    pub size: u64,
    /// Intermediate circuit of a two-stage build.
    pub staged_oracle: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BasisResult {
    pub entries: Vec<BasisEntry>,
    pub total_eta: f64,
    pub total_size: u64,
    pub depth: usize,
    pub eps1: f64,
    /// Ledger within `ε` and every accuracy guard held.
    pub success: bool,
    pub guard_failures: Vec<String>,
    pub trace: Vec<TraceEvent>,
}

impl BasisResult {
    pub fn oracles(&self) -> Vec<String> {
        self.entries.iter().map(|e| e.oracle.clone()).collect()
    }

    /// Reference states of the entries, where declared.
    pub fn states(&self, reg: &OracleRegistry) -> Result<Vec<CVec>> {
        self.entries
            .iter()
            .map(|e| {
                reg.get(&e.oracle)?
                    .prepared_state
                    .clone()
                    .ok_or_else(|| Error::InvariantViolated(format!("entry `{}` has no reference state", e.oracle)))
            })
            .collect()
    }

    pub fn write_trace<W: Write>(&self, mut w: W) -> Result<()> {
        for ev in &self.trace {
            serde_json::to_writer(&mut w, ev)?;
            writeln!(w)?;
        }
        Ok(())
    }
}

/// `⌈log_{3/2}(16k/ε)⌉ + 1`, capped by `k`.
pub fn depth_bound(k: usize, eps: f64) -> usize {
    let b = ((16.0 * k as f64 / eps).ln() / 1.5f64.ln()).ceil() as usize + 1;
    b.min(k)
}

/// Worst-case error of one built component: inputs with total error
/// `eta_inputs`, `n_inputs` of them, a state oracle with error `eta_v`, and
/// orthogonal length at least `delta`.
fn component_bound(eta_inputs: f64, eta_v: f64, n_inputs: usize, delta: f64, eps1: f64, rule: BlockRule) -> f64 {
    if n_inputs == 0 {
        return eta_v;
    }
    let slack = eta_inputs + eta_v + eps1;
    let e2 = eps2(slack, delta);
    let l = match rule {
        BlockRule::Proof => (4.0 * (1.0 / eps1.min(0.25)).ln() / (delta * delta)).ceil(),
        BlockRule::Tight => ((2.0 / eps1).ln() / -(0.5 * ((1.0 - delta) * (1.0 + delta)).ln())).ceil().max(1.0),
    };
    let calls_ru = l * (1.0 + 2.0 * n_inputs as f64);
    (e2 + eta_inputs) * calls_ru + eta_v * l + eps1
}

/// Worst total basis error over every branch sequence for `k` states.
pub fn worst_case_eta(k: usize, eps: f64, eps1: f64, rule: BlockRule) -> f64 {
    let floor = eps / (16.0 * k as f64);
    let dmax = depth_bound(k, eps);
    // cells[d] = (Σ η over Y, Σ η over the staged set), maximized.
    let mut cells: Vec<Option<(f64, f64)>> = vec![None; dmax + 1];
    cells[0] = Some((0.0, 0.0));
    let mut worst = 0.0f64;
    for j in 0..k {
        let mut next: Vec<Option<(f64, f64)>> = cells.clone();
        let raise = |slot: &mut Option<(f64, f64)>, v: (f64, f64)| {
            *slot = Some(match *slot {
                Some((a, b)) => (a.max(v.0), b.max(v.1)),
                None => v,
            });
        };
        for d in 0..=dmax {
            let Some((e, es)) = cells[d] else { continue };
            let staged = if d == 0 { 0.0 } else { component_bound(es, 0.0, j, floor, eps1, rule) };
            let two_stage = component_bound(e, staged, j, 0.125, eps1, rule);
            raise(&mut next[d], (e + two_stage, es));
            if d < dmax {
                let promote = component_bound(e, 0.0, j, floor, eps1, rule);
                raise(&mut next[d + 1], (e + promote, e));
            }
        }
        cells = next;
        for c in cells.iter().flatten() {
            worst = worst.max(c.0);
        }
    }
    worst
}

/// Largest `ε₁ = 2^{−t}` for which the worst-case ledger satisfies the three
/// accuracy constraints.
pub fn choose_epsilon1(k: usize, eps: f64, rule: BlockRule) -> Result<f64> {
    if k == 0 || !(eps > 0.0 && eps < 1.0) {
        return Err(Error::InvalidParameter(format!("k = {k}, ε = {eps}")));
    }
    let kf = k as f64;
    for t in 1..=256 {
        let eps1 = 0.5f64.powi(t);
        if epsilon1_admissible(k, eps, eps1, worst_case_eta(k, eps, eps1, rule)) {
            return Ok(eps1);
        }
    }
    Err(Error::BudgetExceeded(format!("no ε₁ = 2^-t with t ≤ 256 meets the worst-case ledger for k = {kf}, ε = {eps}")))
}

/// The three constraints on `ε₁` given a total input error `eta`.
pub fn epsilon1_admissible(k: usize, eps: f64, eps1: f64, eta: f64) -> bool {
    let kf = k as f64;
    let s = eta + eps1;
    eta < eps / (16.0 * kf) && 2.0 * s.sqrt() < eps * eps / (1000.0 * kf * kf) && 2.0 * s <= (eps / (16.0 * kf)).powi(2)
}

fn smallest_valid_t(k: usize, eps: f64) -> i32 {
    // With η = 0 the constraints reduce to bounds on ε₁ alone.
    (1..=256).find(|&t| epsilon1_admissible(k, eps, 0.5f64.powi(t), 0.0)).unwrap_or(256)
}

/// Builds the basis for `vs`.
pub fn synthesize_basis(reg: &mut OracleRegistry, vs: &[String], opts: &SynthesisOptions) -> Result<BasisResult> {
    synthesize_basis_seeded(reg, &[], vs, opts)
}

/// As [`synthesize_basis`], starting from exact orthonormal `seeds` that are
/// taken into the basis as they are.
pub fn synthesize_basis_seeded(
    reg: &mut OracleRegistry,
    seeds: &[String],
    vs: &[String],
    opts: &SynthesisOptions,
) -> Result<BasisResult> {
    if !(opts.eps > 0.0 && opts.eps < 1.0) || !(opts.gamma > 0.0 && opts.gamma < 1.0) {
        return Err(Error::InvalidParameter(format!("ε = {}, γ = {}", opts.eps, opts.gamma)));
    }
    let k = seeds.len() + vs.len();
    if let Some(eps1) = opts.eps1 {
        return run_synthesis(reg, seeds, vs, opts, eps1);
    }
    if let Ok(eps1) = choose_epsilon1(k, opts.eps, opts.rule) {
        let mut trial = reg.clone();
        let res = run_synthesis(&mut trial, seeds, vs, opts, eps1)?;
        if res.success {
            *reg = trial;
            return Ok(res);
        }
    }
    // Fall back to the realized ledger: smallest t whose run succeeds.
    let attempt = |t: i32| -> Result<(OracleRegistry, BasisResult)> {
        let mut trial = reg.clone();
        let res = run_synthesis(&mut trial, seeds, vs, opts, 0.5f64.powi(t))?;
        Ok((trial, res))
    };
    let mut t = smallest_valid_t(k, opts.eps);
    let mut lo = t - 1;
    let mut hit = None;
    loop {
        let (trial, res) = attempt(t)?;
        if res.success {
            hit = Some((t, trial, res));
            break;
        }
        if t == 256 {
            break;
        }
        lo = t;
        t = (t + 8).min(256);
    }
    let Some((mut hi, mut trial, mut res)) = hit else {
        return Err(Error::BudgetExceeded(format!(
            "no ε₁ = 2^-t with t ≤ 256 keeps the basis error within {}",
            opts.eps
        )));
    };
    while hi - lo > 1 {
        let mid = (lo + hi) / 2;
        let (tr, r) = attempt(mid)?;
        if r.success {
            hi = mid;
            trial = tr;
            res = r;
        } else {
            lo = mid;
        }
    }
    *reg = trial;
    Ok(res)
}

struct Synth<'a> {
    reg: &'a mut OracleRegistry,
    vs: &'a [String],
    opts: &'a SynthesisOptions,
    eps1: f64,
    /// Per-pair estimation accuracy and failure budget.
    acc: f64,
    gamma_pair: f64,
    cache: HashMap<(usize, String), C64>,
    events: u64,
    entries: Vec<BasisEntry>,
    staged: usize,
    guard_failures: Vec<String>,
}

impl Synth<'_> {
    fn params(&self, floor: f64, n: usize) -> OrthoParams {
        OrthoParams {
            eps1: self.eps1,
            gamma: (self.gamma_pair * n.max(1) as f64).min(0.5),
            eps3: self.eps1,
            delta_floor: floor,
            mode: self.opts.mode,
            seed: event_seed(self.opts.seed, 1 << 40 | self.events),
            rule: self.opts.rule,
        }
    }

    fn estimate(&mut self, i: usize, entry: &str) -> Result<C64> {
        if let Some(z) = self.cache.get(&(i, entry.to_string())) {
            return Ok(*z);
        }
        let e = estimate_inner_product_robust(
            self.reg,
            &self.vs[i],
            entry,
            self.acc,
            self.gamma_pair,
            self.opts.mode,
            event_seed(self.opts.seed, self.events),
        )?;
        self.events += 1;
        self.cache.insert((i, entry.to_string()), e.value);
        Ok(e.value)
    }

    fn cached_estimates(&self, i: usize, upto: usize) -> ComponentEstimates {
        let raw: Vec<C64> = self.entries[..upto].iter().map(|e| self.cache[&(i, e.oracle.clone())]).collect();
        let mut est = ComponentEstimates::from_raw(raw, self.eps1, self.gamma_pair * upto as f64);
        est.nice_bounds = self.entries[..upto].iter().map(|e| e.eta + self.acc).collect();
        est
    }

    fn oracles(&self, upto: usize) -> Vec<String> {
        self.entries[..upto].iter().map(|e| e.oracle.clone()).collect()
    }

    fn eta(&self, upto: usize) -> f64 {
        self.entries[..upto].iter().map(|e| e.eta).sum()
    }

    fn build(&mut self, v: &str, upto: usize, est: ComponentEstimates, floor: f64) -> Result<(String, f64, usize)> {
        let xs = self.oracles(upto);
        let p = self.params(floor, upto);
        self.events += 1;
        let res = approx_orthogonal_components_from(self.reg, v, &xs, &p, est)?;
        match res.outcome {
            Outcome::Built(b) => Ok((b.oracle, b.ledger.total, b.blocks)),
            Outcome::Skipped(r) => Err(Error::InvariantViolated(format!("component unexpectedly skipped: {r:?}"))),
        }
    }

    fn size_of(&self, id: &str) -> Result<u64> {
        match self.reg.get(id)?.circuit() {
            Some(c) => expanded_size(self.reg, c),
            None => Ok(1),
        }
    }
}

/// One synthesis pass with a fixed `ε₁`.
pub fn run_synthesis(
    reg: &mut OracleRegistry,
    seeds: &[String],
    vs: &[String],
    opts: &SynthesisOptions,
    eps1: f64,
) -> Result<BasisResult> {
    let k = seeds.len() + vs.len();
    let kf = k as f64;
    let eps = opts.eps;
    let n = match vs.first().or(seeds.first()) {
        Some(id) => reg.get(id)?.n,
        None => {
            return Ok(BasisResult {
                entries: vec![],
                total_eta: 0.0,
                total_size: 0,
                depth: 0,
                eps1,
                success: true,
                guard_failures: vec![],
                trace: vec![],
            })
        }
    };
    for id in vs.iter().chain(seeds) {
        if reg.get(id)?.n != n {
            return Err(Error::DimMismatch { expected: 1 << n, got: 1 << reg.get(id)?.n });
        }
    }
    let cover = eps / (8.0 * kf);
    let floor = eps / (16.0 * kf);
    let dmax = depth_bound(k, eps);
    let event_budget = (2 * vs.len() * k).max(1) as f64;
    let mut s = Synth {
        reg,
        vs,
        opts,
        eps1,
        acc: eps1 / kf,
        gamma_pair: opts.gamma / event_budget,
        cache: HashMap::new(),
        events: 0,
        entries: Vec::new(),
        staged: 0,
        guard_failures: Vec::new(),
    };
    for (j, id) in seeds.iter().enumerate() {
        let o = s.reg.get(id)?;
        let eta = o.eta;
        let size = s.size_of(id)?;
        s.entries.push(BasisEntry { oracle: id.clone(), source: Source::Seed(j), eta, size, staged_oracle: None });
    }
    let mut uncovered: BTreeSet<usize> = (0..vs.len()).collect();
    let mut depth = 0usize;
    let mut trace = Vec::new();
    let mut step = 0usize;
    while !uncovered.is_empty() {
        step += 1;
        let ny = s.entries.len();
        let ids = s.oracles(ny);
        for &i in &uncovered {
            for id in &ids {
                s.estimate(i, id)?;
            }
        }
        let slack = 2.0 * (s.eta(ny) + eps1).sqrt();
        if slack >= floor {
            s.guard_failures.push(format!("step {step}: estimate slack {slack:.3e} ≥ ε/16k"));
        }
        if slack >= eps * eps / (1000.0 * kf * kf) {
            s.guard_failures.push(format!("step {step}: estimate slack {slack:.3e} ≥ ε²/1000k²"));
        }
        let mut stats: Vec<(usize, f64, f64, f64)> = Vec::new();
        // Exact runs measure residuals on the vectors: the square root of
        // 1 − Σ|⟨y|ψ⟩|² cannot resolve anything below about 1e−8.
        let ys = match opts.mode {
            Mode::Exact => Some(ids.iter().map(|id| reference_state(s.reg, id)).collect::<Result<Vec<CVec>>>()?),
            Mode::Sampled => None,
        };
        for &i in &uncovered {
            let along = |upto: usize| -> f64 {
                s.entries[..upto].iter().map(|e| s.cache[&(i, e.oracle.clone())].norm_sqr()).sum::<f64>()
            };
            let (dy, ds) = match &ys {
                Some(ys) => {
                    let psi = reference_state(s.reg, &vs[i])?;
                    (residual(ys, &psi), residual(&ys[..s.staged], &psi))
                }
                None => ((1.0 - along(ny)).max(0.0).sqrt(), (1.0 - along(s.staged)).max(0.0).sqrt()),
            };
            let dstar = if ds > 0.0 { dy / ds } else { 0.0 };
            stats.push((i, dy, ds, dstar));
        }
        let event = |branch, (i, dy, ds, dstar): (usize, f64, f64, f64), depth| TraceEvent {
            step,
            branch,
            index: i,
            depth,
            delta: dy,
            delta_staged: ds,
            delta_star: dstar,
            eta_x: None,
            size_x: None,
            blocks: vec![],
        };
        if let Some(&st) = stats.iter().find(|st| st.1 < cover) {
            uncovered.remove(&st.0);
            trace.push(event(Branch::Covered, st, depth));
            continue;
        }
        let best_star = stats.iter().fold(None::<(usize, f64, f64, f64)>, |b, &st| match b {
            Some(bb) if bb.3 >= st.3 => Some(bb),
            _ => Some(st),
        });
        let best_star = best_star.expect("nonempty");
        if best_star.3 > 0.5 {
            let i = best_star.0;
            let mut ev = event(Branch::TwoStage, best_star, depth);
            let (vprime, staged_oracle) = if s.staged == 0 {
                (vs[i].clone(), None)
            } else {
                let est = s.cached_estimates(i, s.staged);
                let (id, _, blocks) = s.build(&vs[i], s.staged, est, floor)?;
                ev.blocks.push(blocks);
                (id.clone(), Some(id))
            };
            let est = if staged_oracle.is_none() {
                s.cached_estimates(i, ny)
            } else {
                let xs = s.oracles(ny);
                let p = s.params(floor, ny);
                s.events += ny as u64;
                estimate_components(s.reg, &vprime, &xs, &p)?
            };
            let (id, eta, blocks) = s.build(&vprime, ny, est, floor)?;
            ev.blocks.push(blocks);
            let size = s.size_of(&id)?;
            ev.eta_x = Some(eta);
            ev.size_x = Some(size);
            s.entries.push(BasisEntry { oracle: id, source: Source::State(i), eta, size, staged_oracle });
            uncovered.remove(&i);
            trace.push(ev);
            continue;
        }
        let best = stats
            .iter()
            .fold(None::<(usize, f64, f64, f64)>, |b, &st| match b {
                Some(bb) if bb.1 >= st.1 => Some(bb),
                _ => Some(st),
            })
            .expect("nonempty");
        let i = best.0;
        depth += 1;
        if depth > dmax {
            return Err(Error::InvariantViolated(format!("depth {depth} exceeds bound {dmax}")));
        }
        let mut ev = event(Branch::Promote, best, depth);
        let est = s.cached_estimates(i, ny);
        let (id, eta, blocks) = s.build(&vs[i], ny, est, floor)?;
        s.staged = ny;
        ev.blocks.push(blocks);
        let size = s.size_of(&id)?;
        ev.eta_x = Some(eta);
        ev.size_x = Some(size);
        s.entries.push(BasisEntry { oracle: id, source: Source::State(i), eta, size, staged_oracle: None });
        uncovered.remove(&i);
        trace.push(ev);
    }
    let total_eta: f64 = s.entries.iter().map(|e| e.eta).sum();
    let total_size = s.entries.iter().map(|e| e.size).fold(0u64, u64::saturating_add);
    if total_eta > eps {
        s.guard_failures.push(format!("total error {total_eta:.3e} exceeds ε = {eps}"));
    }
    Ok(BasisResult {
        success: s.guard_failures.is_empty(),
        guard_failures: s.guard_failures,
        entries: s.entries,
        total_eta,
        total_size,
        depth,
        eps1,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{basis_vec, from_real, gram_matrix, preparation_unitary, residual};
    use crate::oracle::Oracle;

    fn prep(reg: &mut OracleRegistry, id: &str, psi: &CVec) {
        let n = psi.len().trailing_zeros() as usize;
        reg.insert(Oracle::from_matrix(id, n, preparation_unitary(psi).unwrap()).unwrap().with_state(psi.clone()))
            .unwrap();
    }

    #[test]
    fn depth_bounds() {
        assert_eq!(depth_bound(2, 0.05), 2);
        // log_{1.5}(16·100/0.05) = 25.6
        assert_eq!(depth_bound(100, 0.05), 27);
    }

    #[test]
    fn epsilon1_predicates_hold() {
        for (k, eps) in [(1, 0.1), (2, 0.05)] {
            let e1 = choose_epsilon1(k, eps, BlockRule::Proof).unwrap();
            assert!(epsilon1_admissible(k, eps, e1, worst_case_eta(k, eps, e1, BlockRule::Proof)));
            assert!(!epsilon1_admissible(k, eps, 2.0 * e1, worst_case_eta(k, eps, 2.0 * e1, BlockRule::Proof)));
        }
        assert!(choose_epsilon1(1, 0.1, BlockRule::Proof).unwrap() <= (0.1f64 / 16.0).powi(2) / 2.0);
        assert!(matches!(choose_epsilon1(4, 1e-9, BlockRule::Proof), Err(Error::BudgetExceeded(_))));
    }

    #[test]
    fn worst_case_is_monotone() {
        let a = worst_case_eta(3, 0.05, 1e-40, BlockRule::Tight);
        let b = worst_case_eta(3, 0.05, 1e-50, BlockRule::Tight);
        assert!(b < a);
    }

    #[test]
    fn single_state_is_its_own_basis() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let mut reg = OracleRegistry::new();
        prep(&mut reg, "V", &from_real(&[s, s]));
        let res = synthesize_basis(&mut reg, &["V".into()], &SynthesisOptions::exact(0.1)).unwrap();
        assert!(res.success);
        assert_eq!(res.entries.len(), 1);
        assert_eq!(res.depth, 0);
        assert_eq!(res.total_eta, 0.0);
        let c = reg.get(&res.entries[0].oracle).unwrap().circuit().unwrap().clone();
        assert_eq!(c.gates.len(), 1);
        assert_eq!(c.oracle_count("V"), 1);
    }

    #[test]
    fn two_state_plane() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let mut reg = OracleRegistry::new();
        let p1 = from_real(&[0.0, s, 0.0, s]);
        let p2 = from_real(&[0.0, s, 0.0, -s]);
        prep(&mut reg, "V1", &p1);
        prep(&mut reg, "V2", &p2);
        let res = synthesize_basis(&mut reg, &["V1".into(), "V2".into()], &SynthesisOptions::exact(0.05)).unwrap();
        assert!(res.success, "{:?}", res.guard_failures);
        assert_eq!(res.entries.len(), 2);
        let ys = res.states(&reg).unwrap();
        assert!((gram_matrix(&ys) - crate::linalg::CMat::identity(2, 2)).norm() < 0.05);
        for y in &ys {
            assert!(y[0].norm() < 1e-12 && y[2].norm() < 1e-12);
        }
        assert!(residual(&ys, &p1) < 1e-12 && residual(&ys, &p2) < 1e-12);
        assert!(res.total_eta <= 0.05);
    }

    #[test]
    fn duplicate_state_is_covered() {
        let mut reg = OracleRegistry::new();
        let p = from_real(&[0.6, 0.0, 0.0, 0.8]);
        prep(&mut reg, "A", &p);
        prep(&mut reg, "B", &p);
        let res = synthesize_basis(&mut reg, &["A".into(), "B".into()], &SynthesisOptions::exact(0.05)).unwrap();
        assert_eq!(res.entries.len(), 1);
        assert!(res.trace.iter().any(|e| e.branch == Branch::Covered && e.index == 1));
    }

    #[test]
    fn seeds_enter_untouched() {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let mut reg = OracleRegistry::new();
        prep(&mut reg, "e0", &basis_vec(4, 0));
        prep(&mut reg, "e1", &basis_vec(4, 1));
        prep(&mut reg, "V", &from_real(&[s, 0.0, s, 0.0]));
        let res = synthesize_basis_seeded(
            &mut reg,
            &["e0".into(), "e1".into()],
            &["V".into()],
            &SynthesisOptions::exact(0.05),
        )
        .unwrap();
        assert_eq!(res.entries.len(), 3);
        assert_eq!(res.entries[0].oracle, "e0");
        let ys = res.states(&reg).unwrap();
        assert!((&ys[2] - basis_vec(4, 2)).norm() < 1e-12);
        let mut buf = Vec::new();
        res.write_trace(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), res.trace.len());
    }
}
