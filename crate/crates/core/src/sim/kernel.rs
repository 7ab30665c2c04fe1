//! In-place application of a controlled primitive to a strided amplitude
//! buffer laid out as `(outer, 2^bits, inner)`, row-major.

use crate::linalg::{CMat, C64, ZERO};

use super::flatten::{Action, Pred, PrimOp};

/// A control as a mask test on the middle index.
#[derive(Clone, Copy, Debug)]
pub struct MaskCtrl {
    pub mask: usize,
    pub value: usize,
    pub negate: bool,
}

impl MaskCtrl {
    #[inline]
    fn holds(&self, s: usize) -> bool {
        ((s & self.mask) == self.value) != self.negate
    }
}

pub enum LocalAction<'a> {
    Mat2 { m: [C64; 4], bit: usize },
    Swap { a: usize, b: usize, mask: usize },
    Dense { m: &'a CMat, adjoint: bool, positions: Vec<usize> },
}

pub struct LocalOp<'a> {
    pub controls: Vec<MaskCtrl>,
    pub action: LocalAction<'a>,
}

/// Scatters the bits of `v` to `positions` (bit `i` of `v` lands at
/// `positions[i]`).
#[inline]
pub fn deposit(v: u64, positions: &[usize]) -> usize {
    let mut out = 0usize;
    for (i, &p) in positions.iter().enumerate() {
        if (v >> i) & 1 == 1 {
            out |= 1 << p;
        }
    }
    out
}

pub fn mask_of(positions: &[usize]) -> usize {
    positions.iter().fold(0, |m, &p| m | (1 << p))
}

pub fn mask_ctrl(positions: &[usize], pred: Pred) -> MaskCtrl {
    let mask = mask_of(positions);
    match pred {
        Pred::Eq(v) => MaskCtrl { mask, value: deposit(v, positions), negate: false },
        Pred::Ne(v) => MaskCtrl { mask, value: deposit(v, positions), negate: true },
    }
}

/// Lowers an op whose qubits are mapped to bit positions by `pos`.
/// Returns `None` when some control value cannot be represented on the
/// given qubits (an `Eq` wider than the register can never hold).
pub fn lower<'a>(op: &'a PrimOp, pos: impl Fn(usize) -> usize) -> Option<LocalOp<'a>> {
    let mut controls = Vec::with_capacity(op.controls.len());
    for c in &op.controls {
        let positions: Vec<usize> = c.qubits.iter().map(|&q| pos(q)).collect();
        let v = match c.pred {
            Pred::Eq(v) | Pred::Ne(v) => v,
        };
        if c.qubits.len() < 64 && v >> c.qubits.len() != 0 {
            match c.pred {
                Pred::Eq(_) => return None,
                Pred::Ne(_) => continue,
            }
        }
        controls.push(mask_ctrl(&positions, c.pred));
    }
    let action = match &op.action {
        Action::Mat2 { m, q } => LocalAction::Mat2 { m: *m, bit: pos(*q) },
        Action::Swap { a, b, qubits } => {
            let positions: Vec<usize> = qubits.iter().map(|&q| pos(q)).collect();
            LocalAction::Swap { a: deposit(*a, &positions), b: deposit(*b, &positions), mask: mask_of(&positions) }
        }
        Action::Dense { m, adjoint, qubits } => {
            LocalAction::Dense { m, adjoint: *adjoint, positions: qubits.iter().map(|&q| pos(q)).collect() }
        }
    };
    Some(LocalOp { controls, action })
}

#[inline]
fn controls_hold(cs: &[MaskCtrl], s: usize) -> bool {
    cs.iter().all(|c| c.holds(s))
}

pub fn apply(buf: &mut [C64], outer: usize, bits: usize, inner: usize, op: &LocalOp) {
    let d = 1usize << bits;
    debug_assert_eq!(buf.len(), outer * d * inner);
    let cs = &op.controls;
    match &op.action {
        LocalAction::Mat2 { m, bit } => {
            let bm = 1usize << bit;
            for o in 0..outer {
                let base = o * d * inner;
                for s in 0..d {
                    if s & bm != 0 || !controls_hold(cs, s) {
                        continue;
                    }
                    let i0 = base + s * inner;
                    let i1 = base + (s | bm) * inner;
                    for r in 0..inner {
                        let a = buf[i0 + r];
                        let b = buf[i1 + r];
                        buf[i0 + r] = m[0] * a + m[1] * b;
                        buf[i1 + r] = m[2] * a + m[3] * b;
                    }
                }
            }
        }
        LocalAction::Swap { a, b, mask } => {
            for o in 0..outer {
                let base = o * d * inner;
                for s in 0..d {
                    if s & mask != *a || !controls_hold(cs, s) {
                        continue;
                    }
                    let s2 = (s & !mask) | b;
                    let (i0, i1) = (base + s * inner, base + s2 * inner);
                    for r in 0..inner {
                        buf.swap(i0 + r, i1 + r);
                    }
                }
            }
        }
        LocalAction::Dense { m, adjoint, positions } => {
            let k = positions.len();
            let kd = 1usize << k;
            let tmask = mask_of(positions);
            let offs: Vec<usize> = (0..kd as u64).map(|j| deposit(j, positions)).collect();
            // Row-major copy of the (possibly adjoint) matrix.
            let mat: Vec<C64> = if *adjoint {
                (0..kd * kd).map(|x| m[(x % kd, x / kd)].conj()).collect()
            } else {
                (0..kd * kd).map(|x| m[(x / kd, x % kd)]).collect()
            };
            let mut vin = vec![ZERO; kd];
            for o in 0..outer {
                let base = o * d * inner;
                for s in 0..d {
                    if s & tmask != 0 || !controls_hold(cs, s) {
                        continue;
                    }
                    for r in 0..inner {
                        for (j, &off) in offs.iter().enumerate() {
                            vin[j] = buf[base + (s | off) * inner + r];
                        }
                        for (j, &off) in offs.iter().enumerate() {
                            let row = &mat[j * kd..(j + 1) * kd];
                            let mut acc = ZERO;
                            for (a, b) in row.iter().zip(&vin) {
                                acc += a * b;
                            }
                            buf[base + (s | off) * inner + r] = acc;
                        }
                    }
                }
            }
        }
    }
}

/// Applies `op` to a buffer whose middle index is the full register of
/// `width` qubits with qubit `q` at bit `q`.
pub fn apply_global(buf: &mut [C64], width: usize, inner: usize, op: &PrimOp) {
    if let Some(local) = lower(op, |q| q) {
        apply(buf, 1, width, inner, &local);
    }
}

/// Zeroes every amplitude whose middle index fails the controls.
pub fn project(buf: &mut [C64], outer: usize, bits: usize, inner: usize, cs: &[MaskCtrl]) {
    let d = 1usize << bits;
    for o in 0..outer {
        let base = o * d * inner;
        for s in 0..d {
            if !controls_hold(cs, s) {
                for r in 0..inner {
                    buf[base + s * inner + r] = ZERO;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{c, ONE};
    use std::sync::Arc;

    use crate::sim::flatten::Control;

    fn x() -> [C64; 4] {
        [ZERO, ONE, ONE, ZERO]
    }

    #[test]
    fn deposit_scatters_bits() {
        assert_eq!(deposit(0b101, &[0, 3, 4]), 0b10001);
        assert_eq!(mask_of(&[1, 2]), 0b110);
    }

    #[test]
    fn controlled_x_on_two_qubits() {
        // CNOT with control 0, target 1 on |01> (qubit 0 set) gives |11>.
        let op = PrimOp {
            controls: vec![Control { qubits: vec![0], pred: Pred::Eq(1) }],
            action: Action::Mat2 { m: x(), q: 1 },
        };
        let mut buf = vec![ZERO; 4];
        buf[1] = ONE;
        apply_global(&mut buf, 2, 1, &op);
        assert_eq!(buf[3], ONE);
        assert_eq!(buf[1], ZERO);
    }

    #[test]
    fn swap_and_dense_agree() {
        // Swap of |1> and |2> on two qubits equals the permutation matrix.
        let mut p = CMat::identity(4, 4);
        p.swap_rows(1, 2);
        let swap = PrimOp { controls: vec![], action: Action::Swap { a: 1, b: 2, qubits: vec![0, 1] } };
        let dense =
            PrimOp { controls: vec![], action: Action::Dense { m: Arc::new(p), adjoint: false, qubits: vec![0, 1] } };
        let v: Vec<C64> = (0..4).map(|i| c(i as f64, -(i as f64))).collect();
        let (mut a, mut b) = (v.clone(), v.clone());
        apply_global(&mut a, 2, 1, &swap);
        apply_global(&mut b, 2, 1, &dense);
        assert_eq!(a, b);
        assert_eq!(a[1], v[2]);
    }

    #[test]
    fn unreachable_eq_control_is_dropped() {
        let op = PrimOp {
            controls: vec![Control { qubits: vec![0], pred: Pred::Eq(2) }],
            action: Action::Mat2 { m: x(), q: 1 },
        };
        assert!(lower(&op, |q| q).is_none());
    }
}
