//! Dense complex linear algebra: Gram-Schmidt, unitary completion and
//! orthogonal components.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::config::tolerances;
use crate::error::{Error, Result};

pub type C64 = Complex<f64>;
pub type CVec = DVector<C64>;
pub type CMat = DMatrix<C64>;

pub const ZERO: C64 = C64 { re: 0.0, im: 0.0 };
pub const ONE: C64 = C64 { re: 1.0, im: 0.0 };

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

/// `⟨a|b⟩`, conjugate-linear in the first argument.
pub fn inner(a: &CVec, b: &CVec) -> C64 {
    a.dotc(b)
}

pub fn basis_vec(dim: usize, i: usize) -> CVec {
    let mut v = CVec::zeros(dim);
    v[i] = ONE;
    v
}

pub fn from_real(xs: &[f64]) -> CVec {
    CVec::from_iterator(xs.len(), xs.iter().map(|&x| c(x, 0.0)))
}

/// Projects `w` off the span of `us` twice (the second pass mops up rounding).
fn project_out(us: &[CVec], w: &CVec) -> CVec {
    let mut r = w.clone();
    for _ in 0..2 {
        for u in us {
            let a = inner(u, &r);
            r.axpy(-a, u, ONE);
        }
    }
    r
}

/// Gram-Schmidt that keeps going past degenerate inputs, reporting them as `None`.
pub fn gram_schmidt_partial(ws: &[CVec], floor: f64) -> Vec<Option<CVec>> {
    let mut kept: Vec<CVec> = Vec::new();
    let mut out = Vec::with_capacity(ws.len());
    for w in ws {
        let r = project_out(&kept, w);
        let norm = r.norm();
        if norm < floor {
            out.push(None);
        } else {
            let u = r.unscale(norm);
            kept.push(u.clone());
            out.push(Some(u));
        }
    }
    out
}

/// Orthonormalizes `ws` in order. Fails on the first residual below the
/// configured degeneracy floor.
pub fn gram_schmidt(ws: &[CVec]) -> Result<Vec<CVec>> {
    gram_schmidt_with_floor(ws, tolerances().degenerate_floor)
}

pub fn gram_schmidt_with_floor(ws: &[CVec], floor: f64) -> Result<Vec<CVec>> {
    if let Some(w) = ws.first() {
        let dim = w.len();
        if let Some(bad) = ws.iter().find(|v| v.len() != dim) {
            return Err(Error::DimMismatch { expected: dim, got: bad.len() });
        }
    }
    let mut kept: Vec<CVec> = Vec::with_capacity(ws.len());
    for (index, w) in ws.iter().enumerate() {
        let r = project_out(&kept, w);
        let residual = r.norm();
        if residual < floor {
            return Err(Error::DegenerateVector { index, residual });
        }
        kept.push(r.unscale(residual));
    }
    Ok(kept)
}

/// An `m × m` unitary whose first columns are `gram_schmidt(ws)`, completed
/// with the standard basis vectors in index order.
pub fn complete_unitary(ws: &[CVec], m: usize) -> Result<CMat> {
    if ws.len() > m {
        return Err(Error::InvalidParameter(format!("{} columns do not fit in dimension {m}", ws.len())));
    }
    if let Some(bad) = ws.iter().find(|v| v.len() != m) {
        return Err(Error::DimMismatch { expected: m, got: bad.len() });
    }
    let floor = tolerances().degenerate_floor;
    let mut cols = gram_schmidt_with_floor(ws, floor)?;
    for i in 0..m {
        if cols.len() == m {
            break;
        }
        let r = project_out(&cols, &basis_vec(m, i));
        let norm = r.norm();
        // A standard basis vector always leaves a residual of at least
        // 1/sqrt(m) against some index, so a fixed threshold is safe here.
        if norm > 0.5 / (m as f64).sqrt() {
            cols.push(r.unscale(norm));
        }
    }
    debug_assert_eq!(cols.len(), m);
    Ok(CMat::from_columns(&cols))
}

/// Splits `psi` into its projection on `phis` and the unit orthogonal
/// direction. The coefficient of the returned direction is real and positive.
/// Returns `None` for the direction when the residual is below `floor`.
pub fn orthogonal_component_with_floor(phis: &[CVec], psi: &CVec, floor: f64) -> (Option<CVec>, f64) {
    let r = project_out(phis, psi);
    let delta = r.norm();
    if delta < floor {
        (None, delta)
    } else {
        (Some(r.unscale(delta)), delta)
    }
}

pub fn orthogonal_component(phis: &[CVec], psi: &CVec) -> (Option<CVec>, f64) {
    orthogonal_component_with_floor(phis, psi, tolerances().degenerate_floor)
}

/// `Δ(phis, psi)` without forming the direction.
pub fn residual(phis: &[CVec], psi: &CVec) -> f64 {
    project_out(phis, psi).norm()
}

pub fn max_abs(m: &CMat) -> f64 {
    m.iter().fold(0.0, |acc, z| acc.max(z.norm()))
}

pub fn unitarity_error(u: &CMat) -> f64 {
    if !u.is_square() {
        return f64::INFINITY;
    }
    let g = u.adjoint() * u;
    max_abs(&(g - CMat::identity(u.nrows(), u.ncols())))
}

pub fn is_unitary(u: &CMat) -> bool {
    unitarity_error(u) <= tolerances().unitary
}

/// Gram matrix `G_ij = ⟨v_i|v_j⟩`.
pub fn gram_matrix(vs: &[CVec]) -> CMat {
    let k = vs.len();
    CMat::from_fn(k, k, |i, j| inner(&vs[i], &vs[j]))
}

/// Thin SVD `m = u · diag(s) · vt`, singular values in decreasing order.
///
/// The factorization is checked and recomputed by one-sided Jacobi when
/// it does not reproduce `m`.
pub fn svd(m: &CMat) -> (CMat, Vec<f64>, CMat) {
    let scale = m.norm().max(f64::MIN_POSITIVE);
    let ok = |f: &(CMat, Vec<f64>, CMat)| {
        let mut us = f.0.clone();
        for (j, s) in f.1.iter().enumerate() {
            us.column_mut(j).scale_mut(*s);
        }
        (us * &f.2 - m).norm() <= 1e-12 * scale
    };
    match faer_svd(m) {
        Some(f) if ok(&f) && f.1.windows(2).all(|w| w[0] >= w[1]) => f,
        _ => jacobi_svd(m),
    }
}

fn faer_svd(m: &CMat) -> Option<(CMat, Vec<f64>, CMat)> {
    let fm = faer::Mat::<faer::c64>::from_fn(m.nrows(), m.ncols(), |i, j| {
        let z = m[(i, j)];
        faer::c64::new(z.re, z.im)
    });
    let svd = fm.thin_svd().ok()?;
    let (u, s, v) = (svd.U(), svd.S().column_vector(), svd.V());
    let k = s.nrows();
    let u = CMat::from_fn(m.nrows(), k, |i, j| {
        let z = u[(i, j)];
        C64::new(z.re, z.im)
    });
    let vt = CMat::from_fn(k, m.ncols(), |i, j| {
        let z = v[(j, i)];
        C64::new(z.re, -z.im)
    });
    Some((u, (0..k).map(|i| s[i].re).collect(), vt))
}

/// One-sided Jacobi on the columns of `m` (or of `m†` when wide).
fn jacobi_svd(m: &CMat) -> (CMat, Vec<f64>, CMat) {
    if m.nrows() < m.ncols() {
        let (u, s, vt) = jacobi_svd(&m.adjoint());
        return (vt.adjoint(), s, u.adjoint());
    }
    let n = m.ncols();
    let mut a = m.clone();
    let mut v = CMat::identity(n, n);
    for _sweep in 0..100 {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in p + 1..n {
                let alpha = a.column(p).norm_squared();
                let beta = a.column(q).norm_squared();
                let gamma = a.column(p).dotc(&a.column(q));
                let g = gamma.norm();
                if g <= 1e-15 * (alpha * beta).sqrt() || g == 0.0 {
                    continue;
                }
                off = off.max(g / (alpha * beta).sqrt());
                // Rotation zeroing the (p, q) entry of the Gram matrix.
                let phase = gamma / g;
                let zeta = (beta - alpha) / (2.0 * g);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let t = if zeta == 0.0 { 1.0 } else { t };
                let cs = 1.0 / (1.0 + t * t).sqrt();
                let sn = cs * t;
                for mat in [&mut a, &mut v] {
                    for r in 0..mat.nrows() {
                        let x = mat[(r, p)];
                        let y = mat[(r, q)];
                        mat[(r, p)] = x * cs - y * phase.conj() * sn;
                        mat[(r, q)] = x * phase * sn + y * cs;
                    }
                }
            }
        }
        if off < 1e-15 {
            break;
        }
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let norms: Vec<f64> = (0..n).map(|j| a.column(j).norm()).collect();
    idx.sort_by(|&x, &y| norms[y].total_cmp(&norms[x]));
    let rows = m.nrows();
    let mut u = CMat::zeros(rows, n);
    for (j, &i) in idx.iter().enumerate() {
        if norms[i] > 0.0 {
            u.set_column(j, &(a.column(i) / C64::new(norms[i], 0.0)));
        }
    }
    // Columns with zero norm get any orthonormal completion.
    let mut basis: Vec<CVec> = Vec::new();
    for j in 0..n {
        if norms[idx[j]] > 0.0 {
            basis.push(u.column(j).into_owned());
        }
    }
    let mut e = 0;
    for j in 0..n {
        if norms[idx[j]] == 0.0 {
            while e < rows {
                let (w, r) = orthogonal_component(&basis, &basis_vec(rows, e));
                e += 1;
                if let Some(w) = w {
                    if r > 0.5 {
                        u.set_column(j, &w);
                        basis.push(w);
                        break;
                    }
                }
            }
        }
    }
    let vt = CMat::from_fn(n, n, |i, j| v[(j, idx[i])].conj());
    (u, idx.iter().map(|&i| norms[i]).collect(), vt)
}

/// Largest singular value.
pub fn operator_norm(m: &CMat) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    let h = m.adjoint() * m;
    hermitian_max_eigenvalue(&h).max(0.0).sqrt()
}

pub fn hermitian_max_eigenvalue(h: &CMat) -> f64 {
    let h = (h + h.adjoint()).scale(0.5);
    let eig = h.symmetric_eigenvalues();
    eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
}

pub fn random_gaussian_vec<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> CVec {
    CVec::from_fn(dim, |_, _| c(rng.sample(StandardNormal), rng.sample(StandardNormal)))
}

/// Haar-ish random unit vector.
pub fn random_state<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> CVec {
    let v = random_gaussian_vec(dim, rng);
    let n = v.norm();
    v.unscale(n)
}

/// Haar random unitary from the QR of a complex Gaussian matrix with the
/// phases of `R`'s diagonal folded back into `Q`.
pub fn random_unitary<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> CMat {
    let g = CMat::from_fn(dim, dim, |_, _| c(rng.sample(StandardNormal), rng.sample(StandardNormal)));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..dim {
        let d = r[(j, j)];
        let ph = if d.norm() > 0.0 { d / d.norm() } else { ONE };
        let mut col = q.column_mut(j);
        col *= ph;
    }
    q
}

/// `k` random orthonormal vectors of dimension `dim`.
pub fn random_orthonormal<R: Rng + ?Sized>(dim: usize, k: usize, rng: &mut R) -> Vec<CVec> {
    let u = random_unitary(dim, rng);
    (0..k).map(|j| u.column(j).into_owned()).collect()
}

/// A unitary whose first column is `psi`: a state-preparation matrix.
pub fn preparation_unitary(psi: &CVec) -> Result<CMat> {
    complete_unitary(std::slice::from_ref(psi), psi.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn close(a: &CVec, b: &CVec, tol: f64) -> bool {
        (a - b).norm() <= tol
    }

    fn check_svd(m: &CMat, f: &(CMat, Vec<f64>, CMat)) {
        let (u, s, vt) = f;
        let mut us = u.clone();
        for (j, x) in s.iter().enumerate() {
            us.column_mut(j).scale_mut(*x);
        }
        assert!((us * vt - m).norm() < 1e-12 * m.norm().max(1.0));
        assert!(s.windows(2).all(|w| w[0] >= w[1]));
        let k = s.len();
        assert!((u.adjoint() * u - CMat::identity(k, k)).norm() < 1e-12);
        assert!((vt * vt.adjoint() - CMat::identity(k, k)).norm() < 1e-12);
    }

    fn low_rank(rows: usize, cols: usize, rank: usize, seed: u64) -> CMat {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = CMat::from_fn(rows, rank, |_, _| c(rng.sample(StandardNormal), rng.sample(StandardNormal)));
        let b = CMat::from_fn(rank, cols, |_, _| c(rng.sample(StandardNormal), rng.sample(StandardNormal)));
        a * b
    }

    #[test]
    fn svd_handles_rank_deficient_shapes() {
        for seed in 0..40 {
            for &(r, cl, k) in &[(4, 6, 2), (6, 4, 2), (4, 4, 1), (8, 3, 3), (2, 9, 1)] {
                let m = low_rank(r, cl, k, seed);
                check_svd(&m, &svd(&m));
                check_svd(&m, &jacobi_svd(&m));
            }
        }
    }

    #[test]
    fn jacobi_matches_singular_values() {
        let m = random_unitary(5, &mut ChaCha8Rng::seed_from_u64(3)).columns(0, 3) * c(2.0, 0.0);
        let (_, s, _) = jacobi_svd(&m);
        assert!(s.iter().all(|x| (x - 2.0).abs() < 1e-12));
    }

    #[test]
    fn gram_schmidt_trivial_cases() {
        let e0 = from_real(&[1.0, 0.0]);
        let e1 = from_real(&[0.0, 1.0]);
        let out = gram_schmidt(&[e0.clone(), e1.clone()]).unwrap();
        assert!(close(&out[0], &e0, 1e-15) && close(&out[1], &e1, 1e-15));

        let s = std::f64::consts::FRAC_1_SQRT_2;
        let out = gram_schmidt(&[e0.clone(), from_real(&[s, s])]).unwrap();
        assert!(close(&out[1], &e1, 1e-12));
    }

    #[test]
    fn gram_schmidt_rejects_dependent_vectors() {
        let a = from_real(&[1.0, 1.0, 0.0]);
        let b = from_real(&[2.0, 2.0, 0.0]);
        match gram_schmidt(&[a.clone(), b.clone()]) {
            Err(Error::DegenerateVector { index: 1, .. }) => {}
            other => panic!("expected degenerate vector, got {other:?}"),
        }
        let partial = gram_schmidt_partial(&[a, b], 1e-8);
        assert!(partial[0].is_some() && partial[1].is_none());
    }

    #[test]
    fn gram_schmidt_perturbed_triple_within_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let eps = 1e-4;
        let vs = random_orthonormal(8, 3, &mut rng);
        let ws: Vec<CVec> = vs
            .iter()
            .map(|v| {
                let d = random_state(8, &mut rng).scale(eps * rng.random::<f64>());
                v + d
            })
            .collect();
        let us = gram_schmidt(&ws).unwrap();
        for (u, v) in us.iter().zip(&vs) {
            assert!((u - v).norm() <= (64.0 * 3.0 + 1.0) * eps);
        }
    }

    #[test]
    fn complete_unitary_examples() {
        let u = complete_unitary(&[from_real(&[1.0, 0.0])], 2).unwrap();
        assert!(max_abs(&(u - CMat::identity(2, 2))) < 1e-15);

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let vs = random_orthonormal(4, 2, &mut rng);
        let u = complete_unitary(&vs, 4).unwrap();
        assert!(unitarity_error(&u) < 1e-12);
        for (j, v) in vs.iter().enumerate() {
            assert!(close(&u.column(j).into_owned(), v, 1e-12));
        }

        let eps = 1e-5;
        let ws: Vec<CVec> = vs.iter().map(|v| v + random_state(4, &mut rng).scale(eps)).collect();
        let u = complete_unitary(&ws, 4).unwrap();
        assert!(unitarity_error(&u) < 1e-12);
        for (j, v) in vs.iter().enumerate() {
            assert!((u.column(j).into_owned() - v).norm() <= (64.0 * 2.0 + 1.0) * eps);
        }
    }

    #[test]
    fn orthogonal_component_examples() {
        let psi = random_state(4, &mut ChaCha8Rng::seed_from_u64(1));
        let (phi, d) = orthogonal_component(&[], &psi);
        assert!(close(&phi.unwrap(), &psi, 1e-14) && (d - 1.0).abs() < 1e-14);

        let s = std::f64::consts::FRAC_1_SQRT_2;
        let psi = from_real(&[0.0, s, s, 0.0]);
        let (phi, d) = orthogonal_component(&[basis_vec(4, 0)], &psi);
        assert!(close(&phi.unwrap(), &psi, 1e-14) && (d - 1.0).abs() < 1e-14);

        let psi = from_real(&[0.0, s, 0.0, s]);
        let (phi, d) = orthogonal_component(&[basis_vec(4, 1)], &psi);
        assert!(close(&phi.unwrap(), &basis_vec(4, 3), 1e-14));
        assert!((d - s).abs() < 1e-14);

        let (phi, d) = orthogonal_component(&[basis_vec(2, 0), basis_vec(2, 1)], &from_real(&[s, s]));
        assert!(phi.is_none() && d < 1e-12);
    }

    #[test]
    fn operator_norm_of_diagonal() {
        let m = CMat::from_diagonal(&from_real(&[0.5, -3.0, 2.0]));
        assert!((operator_norm(&m) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn random_unitary_is_unitary() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for dim in [1, 2, 7, 16] {
            assert!(unitarity_error(&random_unitary(dim, &mut rng)) < 1e-12);
        }
    }
}
