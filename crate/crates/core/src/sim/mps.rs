//! Matrix-product-state backend for circuits too wide for a dense vector.
//!
//! Sites are groups of qubits that every primitive either covers whole or
//! leaves alone. Sites move along the chain by swaps so that each operation
//! acts on a contiguous group; operations whose controls span too many sites
//! are applied as a sum of projected terms and recompressed.

use std::collections::{BTreeSet, HashMap, HashSet};

use crate::linalg::{self, CMat, C64, ONE, ZERO};

use super::flatten::{Action, Pred, PrimOp};
use super::kernel::{self, LocalOp, MaskCtrl};

/// Widest site in qubits.
const MAX_SITE_BITS: usize = 12;
/// Largest group handled by direct contraction.
const MAX_GROUP_BITS: usize = 12;
const MAX_GROUP_SITES: usize = 6;

/// Partition of the touched qubits into sites.
#[derive(Clone, Debug)]
pub struct SiteMap {
    /// Qubits per site, ascending.
    pub sites: Vec<Vec<usize>>,
    /// Site of each global qubit, `None` if no operation touches it.
    pub site_of: Vec<Option<usize>>,
    /// Bit index of each qubit inside its site.
    pub bit_of: Vec<usize>,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

impl SiteMap {
    /// Coarsest partition in which every control set and target set of
    /// `ops` is a union of sites. `always` lists qubits that must be
    /// represented even if untouched.
    pub fn build(width: usize, ops: &[PrimOp], always: &[usize]) -> SiteMap {
        let mut sets: HashSet<Vec<usize>> = HashSet::new();
        for op in ops {
            for c in &op.controls {
                let mut q = c.qubits.clone();
                q.sort_unstable();
                sets.insert(q);
            }
            let mut q = op.action.qubits();
            q.sort_unstable();
            sets.insert(q);
        }
        let mut sets: Vec<Vec<usize>> = sets.into_iter().collect();
        sets.sort();
        let mut sig = vec![0u64; width];
        let mut touched = vec![false; width];
        for (i, s) in sets.iter().enumerate() {
            let h = splitmix(i as u64 + 1);
            for &q in s {
                sig[q] = sig[q].wrapping_add(h);
                touched[q] = true;
            }
        }
        for &q in always {
            touched[q] = true;
        }
        let mut groups: Vec<(u64, Vec<usize>)> = Vec::new();
        let mut index: HashMap<u64, usize> = HashMap::new();
        for q in 0..width {
            if !touched[q] {
                continue;
            }
            let key = if sig[q] == 0 { splitmix(u64::MAX - q as u64) } else { sig[q] };
            match index.get(&key) {
                Some(&g) => groups[g].1.push(q),
                None => {
                    index.insert(key, groups.len());
                    groups.push((key, vec![q]));
                }
            }
        }
        let mut sites: Vec<Vec<usize>> = Vec::new();
        for (_, qs) in groups {
            for chunk in qs.chunks(MAX_SITE_BITS) {
                sites.push(chunk.to_vec());
            }
        }
        sites.sort_by_key(|s| s[0]);
        let mut site_of = vec![None; width];
        let mut bit_of = vec![0; width];
        for (i, s) in sites.iter().enumerate() {
            for (b, &q) in s.iter().enumerate() {
                site_of[q] = Some(i);
                bit_of[q] = b;
            }
        }
        SiteMap { sites, site_of, bit_of }
    }

    pub fn bits(&self, site: usize) -> usize {
        self.sites[site].len()
    }
}

#[derive(Clone, Debug)]
struct Tensor {
    l: usize,
    d: usize,
    r: usize,
    data: Vec<C64>,
}

fn to_mat(data: &[C64], rows: usize, cols: usize) -> CMat {
    CMat::from_row_slice(rows, cols, data)
}

fn from_mat(m: &CMat) -> Vec<C64> {
    m.transpose().as_slice().to_vec()
}

/// Thin SVD with singular values in descending order, truncated.
struct Split {
    u: CMat,
    s: Vec<f64>,
    vt: CMat,
    dropped: f64,
}

fn svd_split(m: CMat, rel_cutoff: f64, max_keep: usize) -> Split {
    let (u, sv, vt) = linalg::svd(&m);
    let smax = sv.first().copied().unwrap_or(0.0);
    let mut k = 0;
    while k < sv.len() && k < max_keep && sv[k] > rel_cutoff * smax && sv[k] > 0.0 {
        k += 1;
    }
    let k = k.max(1);
    let dropped = sv[k..].iter().map(|s| s * s).sum();
    Split { u: u.columns(0, k).into_owned(), s: sv[..k].to_vec(), vt: vt.rows(0, k).into_owned(), dropped }
}

#[derive(Clone, Debug)]
pub struct Mps {
    map: SiteMap,
    dims: Vec<usize>,
    order: Vec<usize>,
    pos: Vec<usize>,
    t: Vec<Tensor>,
    center: usize,
    /// Sum of squared singular values dropped so far.
    pub discarded: f64,
    cutoff: f64,
    max_bond: usize,
    group_sites: usize,
    group_bits: usize,
    /// Operations that have involved each site so far.
    uses: Vec<u64>,
}

impl Mps {
    /// Product state with `states[s]` on site `s`.
    pub fn product(map: SiteMap, states: Vec<Vec<C64>>, cutoff: f64, max_bond: usize) -> Mps {
        let dims: Vec<usize> = map.sites.iter().map(|s| 1usize << s.len()).collect();
        let n = dims.len();
        let t = states
            .into_iter()
            .zip(&dims)
            .map(|(st, &d)| {
                assert_eq!(st.len(), d);
                Tensor { l: 1, d, r: 1, data: st }
            })
            .collect();
        Mps {
            map,
            dims,
            order: (0..n).collect(),
            pos: (0..n).collect(),
            t,
            center: 0,
            discarded: 0.0,
            cutoff,
            max_bond,
            group_sites: MAX_GROUP_SITES,
            group_bits: MAX_GROUP_BITS,
            uses: vec![0; n],
        }
    }

    /// Caps on the groups contracted directly; larger operations go through
    /// the projector sum.
    pub fn set_group_limits(&mut self, sites: usize, bits: usize) {
        self.group_sites = sites;
        self.group_bits = bits.min(MAX_GROUP_BITS);
    }

    /// The state `|x⟩` on the given qubits (bit `i` of `x` on `qubits[i]`)
    /// tensored with zeros elsewhere. Qubits outside the map must be zero.
    pub fn basis_product(map: SiteMap, qubits: &[usize], amps: &[C64], cutoff: f64, max_bond: usize) -> Mps {
        // General input: a superposition over `qubits`, which must all lie in
        // sites made only of these qubits.
        let mut sites_in: BTreeSet<usize> = BTreeSet::new();
        for &q in qubits {
            if let Some(s) = map.site_of[q] {
                sites_in.insert(s);
            }
        }
        let n = map.sites.len();
        let mut states: Vec<Vec<C64>> = (0..n)
            .map(|s| {
                let mut v = vec![ZERO; 1 << map.bits(s)];
                v[0] = ONE;
                v
            })
            .collect();
        if sites_in.len() <= 1 {
            if let Some(&s) = sites_in.iter().next() {
                let mut v = vec![ZERO; 1 << map.bits(s)];
                for (x, a) in amps.iter().enumerate() {
                    let mut local = 0usize;
                    for (i, &q) in qubits.iter().enumerate() {
                        if (x >> i) & 1 == 1 {
                            if map.site_of[q] != Some(s) {
                                panic!("input qubit outside the represented sites");
                            }
                            local |= 1 << map.bit_of[q];
                        }
                    }
                    v[local] += *a;
                }
                states[s] = v;
            }
            return Mps::product(map, states, cutoff, max_bond);
        }
        // Input spread over several sites: build a product of zeros and apply
        // the preparation as a dense operation on the group.
        let mps = Mps::product(map, states, cutoff, max_bond);
        let mut prep = CMat::zeros(amps.len(), amps.len());
        let col = crate::linalg::CVec::from_column_slice(amps);
        let u = crate::linalg::complete_unitary(&[col], amps.len()).expect("unit input");
        prep.copy_from(&u);
        let op = PrimOp {
            controls: vec![],
            action: Action::Dense { m: std::sync::Arc::new(prep), adjoint: false, qubits: qubits.to_vec() },
        };
        let mut mps = mps;
        mps.apply(&op);
        mps
    }

    pub fn site_map(&self) -> &SiteMap {
        &self.map
    }

    pub fn max_bond_dim(&self) -> usize {
        self.t.iter().map(|t| t.r).max().unwrap_or(1)
    }

    fn bits_at(&self, p: usize) -> usize {
        self.dims[self.order[p]].trailing_zeros() as usize
    }

    fn move_center(&mut self, target: usize) {
        while self.center < target {
            let c = self.center;
            let a = &self.t[c];
            let m = to_mat(&a.data, a.l * a.d, a.r);
            let qr = m.qr();
            let q = qr.q();
            let r = qr.r();
            let k = q.ncols();
            let (l, d) = (a.l, a.d);
            self.t[c] = Tensor { l, d, r: k, data: from_mat(&q) };
            let b = &self.t[c + 1];
            let nb = r * to_mat(&b.data, b.l, b.d * b.r);
            let (bd, br) = (b.d, b.r);
            self.t[c + 1] = Tensor { l: k, d: bd, r: br, data: from_mat(&nb) };
            self.center += 1;
        }
        while self.center > target {
            let c = self.center;
            let a = &self.t[c];
            let m = to_mat(&a.data, a.l, a.d * a.r);
            let qr = m.adjoint().qr();
            let q = qr.q();
            let r = qr.r();
            let k = q.ncols();
            let (d, rr) = (a.d, a.r);
            self.t[c] = Tensor { l: k, d, r: rr, data: from_mat(&q.adjoint()) };
            let b = &self.t[c - 1];
            let nb = to_mat(&b.data, b.l * b.d, b.r) * r.adjoint();
            let (bl, bd) = (b.l, b.d);
            self.t[c - 1] = Tensor { l: bl, d: bd, r: k, data: from_mat(&nb) };
            self.center -= 1;
        }
    }

    /// Contracts positions `a..=b` into `(l, D, r)` with position `a` most
    /// significant in `D`.
    fn contract(&self, a: usize, b: usize) -> (usize, usize, usize, Vec<C64>) {
        let first = &self.t[a];
        let l = first.l;
        let mut rows = first.l * first.d;
        let mut data = first.data.clone();
        let mut chi = first.r;
        for p in a + 1..=b {
            let nx = &self.t[p];
            let m = to_mat(&data, rows, chi) * to_mat(&nx.data, nx.l, nx.d * nx.r);
            rows *= nx.d;
            chi = nx.r;
            data = from_mat(&m);
        }
        (l, rows / l, chi, data)
    }

    /// Splits `(l, D, r)` back into positions `a..=b`, left to right. The
    /// orthogonality center ends at `b`.
    #[allow(clippy::too_many_arguments)]
    fn split(&mut self, a: usize, b: usize, l: usize, r: usize, data: Vec<C64>, cutoff: f64, max_bond: usize) {
        let mut rest = data;
        let mut l = l;
        let mut remaining: usize = (a..=b).map(|p| self.dims[self.order[p]]).product();
        for p in a..b {
            let d = self.dims[self.order[p]];
            remaining /= d;
            let m = to_mat(&rest, l * d, remaining * r);
            let sp = svd_split(m, cutoff, max_bond);
            self.discarded += sp.dropped;
            let k = sp.s.len();
            self.t[p] = Tensor { l, d, r: k, data: from_mat(&sp.u) };
            let mut sv = sp.vt;
            for (i, s) in sp.s.iter().enumerate() {
                let mut row = sv.row_mut(i);
                row *= C64::new(*s, 0.0);
            }
            rest = from_mat(&sv);
            l = k;
        }
        let d = self.dims[self.order[b]];
        self.t[b] = Tensor { l, d, r, data: rest };
        self.center = b;
    }

    /// Exchanges the sites at positions `p` and `p + 1`.
    fn swap(&mut self, p: usize) {
        if self.center < p {
            self.move_center(p);
        } else if self.center > p + 1 {
            self.move_center(p + 1);
        }
        let d1 = self.dims[self.order[p]];
        let d2 = self.dims[self.order[p + 1]];
        let (l, _, r, data) = self.contract(p, p + 1);
        let mut out = vec![ZERO; data.len()];
        for a in 0..l {
            for s1 in 0..d1 {
                for s2 in 0..d2 {
                    let src = ((a * d1 + s1) * d2 + s2) * r;
                    let dst = ((a * d2 + s2) * d1 + s1) * r;
                    out[dst..dst + r].copy_from_slice(&data[src..src + r]);
                }
            }
        }
        self.order.swap(p, p + 1);
        self.pos[self.order[p]] = p;
        self.pos[self.order[p + 1]] = p + 1;
        let (cutoff, mb) = (self.cutoff, self.max_bond);
        self.split(p, p + 1, l, r, out, cutoff, mb);
    }

    /// Moves `sites` next to each other preserving their relative order.
    /// The least used site stays put and busier ones travel to it; on a tie
    /// the block goes where the total travel is smallest.
    fn gather(&mut self, sites: &[usize]) -> (usize, usize) {
        let mut ps: Vec<usize> = sites.iter().map(|&s| self.pos[s]).collect();
        ps.sort_unstable();
        let k = ps.len();
        let by_pos: Vec<usize> = ps.iter().map(|&p| self.order[p]).collect();
        let least = by_pos.iter().map(|&s| self.uses[s]).min().unwrap_or(0);
        let cold: Vec<usize> = (0..k).filter(|&i| self.uses[by_pos[i]] == least).collect();
        let x = if cold.len() == 1 {
            ps[cold[0]] - cold[0]
        } else {
            let mut shifted: Vec<usize> = ps.iter().enumerate().map(|(i, &p)| p - i).collect();
            shifted.sort_unstable();
            shifted[(k - 1) / 2]
        };
        for &s in &by_pos {
            self.uses[s] += 1;
        }
        for (i, &s) in by_pos.iter().enumerate() {
            while self.pos[s] > x + i {
                let p = self.pos[s];
                self.swap(p - 1);
            }
        }
        for (i, &s) in by_pos.iter().enumerate().rev() {
            while self.pos[s] < x + i {
                let p = self.pos[s];
                self.swap(p);
            }
        }
        (x, x + k - 1)
    }

    fn group_position(&self, a: usize, b: usize) -> HashMap<usize, usize> {
        // Bit offset of each site inside the contracted group index.
        let mut off = HashMap::new();
        let mut acc = 0;
        for p in (a..=b).rev() {
            off.insert(self.order[p], acc);
            acc += self.bits_at(p);
        }
        off
    }

    /// Applies one primitive.
    pub fn apply(&mut self, op: &PrimOp) {
        let mut op = op.clone();
        // Controls that can never or always hold.
        let mut keep = Vec::new();
        for c in op.controls.drain(..) {
            let v = match c.pred {
                Pred::Eq(v) | Pred::Ne(v) => v,
            };
            let fits = c.qubits.len() >= 64 || v >> c.qubits.len() == 0;
            match (c.pred, fits) {
                (Pred::Eq(_), false) => return,
                (Pred::Ne(_), false) => {}
                _ => keep.push(c),
            }
        }
        op.controls = keep;

        let tq = op.action.qubits();
        let mut tsites: Vec<usize> = tq.iter().map(|&q| self.site(q)).collect();
        tsites.sort_unstable();
        tsites.dedup();
        let mut all: Vec<usize> = tsites.clone();
        for c in &op.controls {
            all.extend(c.qubits.iter().map(|&q| self.site(q)));
        }
        all.sort_unstable();
        all.dedup();
        let bits: usize = all.iter().map(|&s| self.map.bits(s)).sum();
        if all.len() <= self.group_sites && bits <= self.group_bits {
            self.apply_grouped(&op, &all);
        } else {
            self.apply_summed(&op, &tsites);
        }
    }

    fn site(&self, q: usize) -> usize {
        self.map.site_of[q].expect("operation on a qubit outside the site map")
    }

    fn apply_grouped(&mut self, op: &PrimOp, sites: &[usize]) {
        let (a, b) = self.gather(sites);
        let off = self.group_position(a, b);
        let map = &self.map;
        let pos = |q: usize| off[&map.site_of[q].unwrap()] + map.bit_of[q];
        let local = kernel::lower(op, pos).expect("controls pre-filtered");
        let bits: usize = (a..=b).map(|p| self.bits_at(p)).sum();
        if a == b {
            let t = &mut self.t[a];
            kernel::apply(&mut t.data, t.l, bits, t.r, &local);
            return;
        }
        if self.center < a {
            self.move_center(a);
        } else if self.center > b {
            self.move_center(b);
        }
        let (l, _, r, mut data) = self.contract(a, b);
        kernel::apply(&mut data, l, bits, r, &local);
        let (cutoff, mb) = (self.cutoff, self.max_bond);
        self.split(a, b, l, r, data, cutoff, mb);
    }

    /// `C = I + Π ⊗ (G − I)` where `Π` is the product of the control
    /// projectors, expanded into product terms.
    fn apply_summed(&mut self, op: &PrimOp, tsites: &[usize]) {
        let (ta, tb) = self.gather(tsites);
        // Per-term list of (site, mask control) factors with a sign.
        let mut terms: Vec<(f64, Vec<(usize, MaskCtrl)>)> = vec![(1.0, Vec::new())];
        for c in &op.controls {
            let mut by_site: Vec<(usize, Vec<usize>, Vec<usize>)> = Vec::new();
            for (i, &q) in c.qubits.iter().enumerate() {
                let s = self.site(q);
                match by_site.iter_mut().find(|e| e.0 == s) {
                    Some(e) => {
                        e.1.push(i);
                        e.2.push(self.map.bit_of[q]);
                    }
                    None => by_site.push((s, vec![i], vec![self.map.bit_of[q]])),
                }
            }
            let v = match c.pred {
                Pred::Eq(v) | Pred::Ne(v) => v,
            };
            let factors: Vec<(usize, MaskCtrl)> = by_site
                .iter()
                .map(|(s, idx, bits)| {
                    let sub = idx
                        .iter()
                        .enumerate()
                        .fold(0u64, |acc, (j, &i)| acc | ((v.checked_shr(i as u32).unwrap_or(0) & 1) << j));
                    (*s, kernel::mask_ctrl(bits, Pred::Eq(sub)))
                })
                .collect();
            match (c.pred, factors.len()) {
                (Pred::Ne(_), 1) => {
                    let (s, mut m) = factors[0];
                    m.negate = true;
                    for t in terms.iter_mut() {
                        t.1.push((s, m));
                    }
                }
                (Pred::Eq(_), _) => {
                    for t in terms.iter_mut() {
                        t.1.extend(factors.iter().cloned());
                    }
                }
                (Pred::Ne(_), _) => {
                    let mut next = Vec::with_capacity(terms.len() * 2);
                    for (sign, fs) in terms {
                        let mut with = fs.clone();
                        with.extend(factors.iter().cloned());
                        next.push((sign, fs));
                        next.push((-sign, with));
                    }
                    terms = next;
                }
            }
        }

        let mut lo = ta;
        let mut hi = tb;
        for (_, fs) in &terms {
            for (s, _) in fs {
                lo = lo.min(self.pos[*s]);
                hi = hi.max(self.pos[*s]);
            }
        }
        self.move_center(lo);

        let off = self.group_position(ta, tb);
        let map = &self.map;
        let pos = |q: usize| off[&map.site_of[q].unwrap()] + map.bit_of[q];
        let bare = PrimOp { controls: vec![], action: op.action.clone() };
        let local: LocalOp = kernel::lower(&bare, pos).unwrap();
        let gbits: usize = (ta..=tb).map(|p| self.bits_at(p)).sum();

        let mut windows: Vec<Vec<Tensor>> = vec![self.t[lo..=hi].to_vec()];
        for (sign, fs) in &terms {
            let mut w: Vec<Tensor> = self.t[lo..=hi].to_vec();
            for (s, m) in fs {
                let t = &mut w[self.pos[*s] - lo];
                let bits = t.d.trailing_zeros() as usize;
                kernel::project(&mut t.data, t.l, bits, t.r, std::slice::from_ref(m));
            }
            // (G − I) on the target group.
            let (ga, gb) = (ta - lo, tb - lo);
            let (l, r, mut theta) = contract_window(&w, ga, gb);
            let orig = theta.clone();
            kernel::apply(&mut theta, l, gbits, r, &local);
            for (x, o) in theta.iter_mut().zip(&orig) {
                *x -= o;
            }
            let dims: Vec<usize> = (ga..=gb).map(|i| w[i].d).collect();
            split_window(&mut w, ga, gb, l, r, theta, &dims);
            for x in w[0].data.iter_mut() {
                *x *= *sign;
            }
            windows.push(w);
        }
        let summed = sum_windows(&windows);
        for (i, t) in summed.into_iter().enumerate() {
            self.t[lo + i] = t;
        }
        self.center = lo;
        self.recompress(lo, hi);
    }

    /// Left-to-right QR sweep then right-to-left truncating SVD sweep over
    /// `a..=b`; the center must be at `a` and ends at `a`.
    fn recompress(&mut self, a: usize, b: usize) {
        self.center = a;
        self.move_center(b);
        for p in (a + 1..=b).rev() {
            let t = &self.t[p];
            let m = to_mat(&t.data, t.l, t.d * t.r);
            let (d, r) = (t.d, t.r);
            let sp = svd_split(m, self.cutoff, self.max_bond);
            self.discarded += sp.dropped;
            let k = sp.s.len();
            self.t[p] = Tensor { l: k, d, r, data: from_mat(&sp.vt) };
            let mut us = sp.u;
            for (j, s) in sp.s.iter().enumerate() {
                let mut col = us.column_mut(j);
                col *= C64::new(*s, 0.0);
            }
            let prev = &self.t[p - 1];
            let nm = to_mat(&prev.data, prev.l * prev.d, prev.r) * us;
            let (pl, pd) = (prev.l, prev.d);
            self.t[p - 1] = Tensor { l: pl, d: pd, r: k, data: from_mat(&nm) };
            self.center = p - 1;
        }
    }

    pub fn norm_sqr(&self) -> f64 {
        self.t[self.center].data.iter().map(|z| z.norm_sqr()).sum()
    }

    /// Amplitude of the basis state with the given value on each site.
    pub fn amplitude_sites(&self, values: &[usize]) -> C64 {
        let mut v: Vec<C64> = vec![ONE];
        for p in 0..self.t.len() {
            let t = &self.t[p];
            let s = values[self.order[p]];
            let mut nv = vec![ZERO; t.r];
            for (a, va) in v.iter().enumerate() {
                if *va == ZERO {
                    continue;
                }
                let row = &t.data[(a * t.d + s) * t.r..(a * t.d + s + 1) * t.r];
                for (b, x) in row.iter().enumerate() {
                    nv[b] += va * x;
                }
            }
            v = nv;
        }
        v[0]
    }

    /// Amplitude of the global basis state with bits `ones` set and all
    /// other qubits zero. Qubits outside the site map must be zero.
    pub fn amplitude(&self, ones: &[usize]) -> C64 {
        let mut values = vec![0usize; self.map.sites.len()];
        for &q in ones {
            match self.map.site_of[q] {
                Some(s) => values[s] |= 1 << self.map.bit_of[q],
                None => return ZERO,
            }
        }
        self.amplitude_sites(&values)
    }
}

fn contract_window(w: &[Tensor], a: usize, b: usize) -> (usize, usize, Vec<C64>) {
    let first = &w[a];
    let l = first.l;
    let mut rows = first.l * first.d;
    let mut data = first.data.clone();
    let mut chi = first.r;
    for t in &w[a + 1..=b] {
        let m = to_mat(&data, rows, chi) * to_mat(&t.data, t.l, t.d * t.r);
        rows *= t.d;
        chi = t.r;
        data = from_mat(&m);
    }
    (l, chi, data)
}

fn split_window(w: &mut [Tensor], a: usize, b: usize, l: usize, r: usize, data: Vec<C64>, dims: &[usize]) {
    let mut rest = data;
    let mut l = l;
    let mut remaining: usize = dims.iter().product();
    for (i, p) in (a..b).enumerate() {
        let d = dims[i];
        remaining /= d;
        let m = to_mat(&rest, l * d, remaining * r);
        let sp = svd_split(m, 1e-15, usize::MAX);
        let k = sp.s.len();
        w[p] = Tensor { l, d, r: k, data: from_mat(&sp.u) };
        let mut sv = sp.vt;
        for (j, s) in sp.s.iter().enumerate() {
            let mut row = sv.row_mut(j);
            row *= C64::new(*s, 0.0);
        }
        rest = from_mat(&sv);
        l = k;
    }
    w[b] = Tensor { l, d: dims[dims.len() - 1], r, data: rest };
}

/// Direct sum of window MPSs sharing their outer bonds.
fn sum_windows(ws: &[Vec<Tensor>]) -> Vec<Tensor> {
    let len = ws[0].len();
    if len == 1 {
        let mut t = ws[0][0].clone();
        for w in &ws[1..] {
            for (x, y) in t.data.iter_mut().zip(&w[0].data) {
                *x += y;
            }
        }
        return vec![t];
    }
    let mut out = Vec::with_capacity(len);
    for p in 0..len {
        let d = ws[0][p].d;
        let ls: Vec<usize> = ws.iter().map(|w| w[p].l).collect();
        let rs: Vec<usize> = ws.iter().map(|w| w[p].r).collect();
        let (l_tot, r_tot) = if p == 0 {
            (ls[0], rs.iter().sum())
        } else if p == len - 1 {
            (ls.iter().sum(), rs[0])
        } else {
            (ls.iter().sum(), rs.iter().sum())
        };
        let mut data = vec![ZERO; l_tot * d * r_tot];
        let mut loff = 0;
        let mut roff = 0;
        for w in ws {
            let t = &w[p];
            for a in 0..t.l {
                for s in 0..d {
                    for b in 0..t.r {
                        let la = if p == 0 { a } else { loff + a };
                        let rb = if p == len - 1 { b } else { roff + b };
                        data[(la * d + s) * r_tot + rb] = t.data[(a * d + s) * t.r + b];
                    }
                }
            }
            loff += t.l;
            roff += t.r;
        }
        out.push(Tensor { l: l_tot, d, r: r_tot, data });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::circuit::{Circuit, Gate, Predicate, RegisterLayout, Span, PRIMARY};
    use crate::linalg::{random_state, random_unitary, CVec};
    use crate::oracle::OracleRegistry;
    use crate::sim::compile;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const REGS: [(&str, usize); 5] = [(PRIMARY, 2), ("a", 2), ("b", 3), ("c", 1), ("d", 2)];

    fn random_gate(rng: &mut ChaCha8Rng, depth: usize) -> (Gate, Vec<&'static str>) {
        let (name, w) = REGS[rng.random_range(0..REGS.len())];
        let g = match rng.random_range(0..4) {
            0 => Gate::h(Span::qubit(name, rng.random_range(0..w))),
            1 => Gate::dense(random_unitary(1 << w, rng), Span::reg(name, w)),
            2 => Gate::swap(rng.random_range(0..1 << w), rng.random_range(0..1 << w), Span::reg(name, w)),
            _ => Gate::dense(random_unitary(2, rng), Span::qubit(name, 0)),
        };
        if depth == 0 || rng.random_bool(0.3) {
            return (g, vec![name]);
        }
        let others: Vec<(&str, usize)> = REGS.iter().cloned().filter(|r| r.0 != name).collect();
        let k = rng.random_range(1..=others.len().min(3));
        let picked: Vec<(&str, usize)> = others[..k].to_vec();
        let names: Vec<&str> = picked.iter().map(|r| r.0).collect();
        let width: usize = picked.iter().map(|r| r.1).sum();
        let pred = match rng.random_range(0..4) {
            0 => Predicate::EqualsZero,
            1 => Predicate::NotEqualsZero,
            2 => Predicate::EqualsBasis { value: rng.random_range(0..1u64 << width) },
            _ => Predicate::NotEqualsBasis { value: rng.random_range(0..1u64 << width) },
        };
        let mut used = names.clone();
        used.push(name);
        (Gate::controlled(Span::new(&names, 0, width), pred, g), used)
    }

    fn random_circuit(seed: u64) -> Circuit {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layout = RegisterLayout::new(2);
        for (n, w) in &REGS[1..] {
            layout.add_block(n, *w);
        }
        let mut c = Circuit::new(layout);
        for _ in 0..40 {
            c.push(random_gate(&mut rng, 1).0);
        }
        c
    }

    fn compare(seed: u64, group_sites: usize, group_bits: usize) {
        let reg = OracleRegistry::new();
        let c = random_circuit(seed);
        let p = compile(&c, &reg).unwrap();
        let psi: CVec = random_state(4, &mut ChaCha8Rng::seed_from_u64(seed + 100));
        let mut sv = crate::sim::StateVector::embed(p.width, &psi).unwrap();
        p.run_dense(sv.amps.as_mut_slice());

        let always: Vec<usize> = (0..p.width).collect();
        let map = SiteMap::build(p.width, &p.ops, &always);
        let mut m = Mps::basis_product(map, &[0, 1], psi.as_slice(), 1e-14, 1024);
        m.set_group_limits(group_sites, group_bits);
        for op in &p.ops {
            m.apply(op);
        }
        for i in 0..1usize << p.width {
            let ones: Vec<usize> = (0..p.width).filter(|&b| (i >> b) & 1 == 1).collect();
            let a = m.amplitude(&ones);
            assert!((a - sv.amps[i]).norm() < 1e-9, "seed {seed} index {i}: {a} vs {}", sv.amps[i]);
        }
        assert!((m.norm_sqr() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn grouped_path_matches_dense() {
        for seed in 0..6 {
            compare(seed, 6, 12);
        }
    }

    #[test]
    fn summed_path_matches_dense() {
        for seed in 0..6 {
            compare(seed, 1, 3);
        }
    }

    #[test]
    fn site_map_refines_sets() {
        let reg = OracleRegistry::new();
        let mut c = Circuit::new(RegisterLayout::new(2).with_block("a", 3));
        c.push(Gate::dense(random_unitary(4, &mut ChaCha8Rng::seed_from_u64(1)), Span::primary(2)));
        c.push(Gate::controlled(Span::new(&[PRIMARY, "a"], 0, 4), Predicate::EqualsZero, Gate::h(Span::qubit("a", 2))));
        let p = compile(&c, &reg).unwrap();
        let map = SiteMap::build(p.width, &p.ops, &[]);
        let mut sites = map.sites.clone();
        sites.sort();
        assert_eq!(sites, vec![vec![0, 1], vec![2, 3], vec![4]]);
    }
}
