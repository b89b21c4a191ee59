//! Small dense complex linear-algebra helpers on top of nalgebra.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

pub type C64 = Complex64;
pub type CMat = DMatrix<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);

pub fn c(re: f64, im: f64) -> C64 {
    C64::new(re, im)
}

pub fn identity(n: usize) -> CMat {
    CMat::identity(n, n)
}

pub fn kron(a: &CMat, b: &CMat) -> CMat {
    a.kronecker(b)
}

/// Eigen-decomposition of a Hermitian matrix, eigenvalues in nonincreasing
/// order with eigenvectors as matching columns.
pub fn herm_eigen(m: &CMat) -> (Vec<f64>, CMat) {
    let n = m.nrows();
    if n == 0 {
        return (Vec::new(), CMat::zeros(0, 0));
    }
    let h = (m + m.adjoint()).scale(0.5);
    let eig = h.symmetric_eigen();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let vals = idx.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vecs = CMat::zeros(n, n);
    for (k, &i) in idx.iter().enumerate() {
        vecs.set_column(k, &eig.eigenvectors.column(i));
    }
    (vals, vecs)
}

/// Rotate a vector's global phase so that its first significant entry is
/// real and positive.
pub fn canonical_phase(v: &mut [C64]) {
    let max = v.iter().map(|z| z.norm()).fold(0.0, f64::max);
    if max == 0.0 {
        return;
    }
    if let Some(z) = v.iter().find(|z| z.norm() > 1e-6 * max) {
        let ph = z.conj() / z.norm();
        for x in v.iter_mut() {
            *x *= ph;
        }
    }
}

pub fn canonicalize_columns(m: &mut CMat) {
    for j in 0..m.ncols() {
        let mut col: Vec<C64> = m.column(j).iter().copied().collect();
        canonical_phase(&mut col);
        for (i, z) in col.into_iter().enumerate() {
            m[(i, j)] = z;
        }
    }
}

/// Orthonormal basis (as columns) of the orthogonal complement of the span of
/// the orthonormal columns of `basis` inside `C^dim`.
pub fn orth_complement(basis: &CMat, dim: usize) -> CMat {
    let r = basis.ncols();
    if r >= dim {
        return CMat::zeros(dim, 0);
    }
    let proj = identity(dim) - basis * basis.adjoint();
    let (vals, vecs) = herm_eigen(&proj);
    let keep: Vec<usize> = (0..dim).filter(|&i| vals[i] > 0.5).collect();
    let mut out = CMat::zeros(dim, keep.len());
    for (k, &i) in keep.iter().enumerate() {
        out.set_column(k, &vecs.column(i));
    }
    out
}

/// Thin singular value decomposition `m = u diag(s) v_t`, values descending.
pub struct Svd {
    pub u: CMat,
    pub s: Vec<f64>,
    pub v_t: CMat,
}

/// One-sided Jacobi SVD. nalgebra's complex bidiagonal SVD can return
/// singular values off in the third digit on rank-deficient inputs, which is
/// far outside the tolerances this crate verifies against.
pub fn svd(m: &CMat) -> Svd {
    let (rows, cols) = m.shape();
    if rows < cols {
        let t = svd(&m.adjoint());
        return Svd { u: t.v_t.adjoint(), s: t.s, v_t: t.u.adjoint() };
    }
    let mut a = m.clone();
    let mut v = identity(cols);
    for _ in 0..100 {
        let mut rotated = false;
        for p in 0..cols {
            for q in p + 1..cols {
                let alpha: f64 = a.column(p).norm_squared();
                let beta: f64 = a.column(q).norm_squared();
                let gamma = a.column(p).dotc(&a.column(q));
                let g = gamma.norm();
                // tiny columns would push the phase into subnormals
                if g <= 1e-15 * (alpha * beta).sqrt() || alpha.min(beta) < 1e-200 {
                    continue;
                }
                rotated = true;
                let e = gamma.conj() / g;
                let e = e / e.norm();
                let zeta = (beta - alpha) / (2.0 * g);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let cs = 1.0 / (1.0 + t * t).sqrt();
                let sn = cs * t;
                for mat in [&mut a, &mut v] {
                    for i in 0..mat.nrows() {
                        let x = mat[(i, p)];
                        let y = mat[(i, q)] * e;
                        mat[(i, p)] = x * cs - y * sn;
                        mat[(i, q)] = x * sn + y * cs;
                    }
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let norms: Vec<f64> = (0..cols).map(|j| a.column(j).norm()).collect();
    let mut idx: Vec<usize> = (0..cols).collect();
    idx.sort_by(|&x, &y| norms[y].total_cmp(&norms[x]));
    let top = idx.first().map_or(0.0, |&i| norms[i]);
    let mut u = CMat::zeros(rows, cols);
    let mut vs = CMat::zeros(cols, cols);
    let mut live = 0;
    for (k, &i) in idx.iter().enumerate() {
        if norms[i] > 1e-300 && norms[i] > 1e-15 * top {
            u.set_column(k, &a.column(i).unscale(norms[i]));
            live = k + 1;
        }
        vs.set_column(k, &v.column(i));
    }
    if live < cols {
        let comp = orth_complement(&u.columns(0, live).into_owned(), rows);
        for k in live..cols {
            u.set_column(k, &comp.column(k - live));
        }
    }
    Svd { u, s: idx.iter().map(|&i| norms[i]).collect(), v_t: vs.adjoint() }
}

/// Closest unitary (in Frobenius norm) to a square matrix.
pub fn polar_unitary(m: &CMat) -> CMat {
    let d = svd(m);
    d.u * d.v_t
}

/// Extend a partial isometry `m` (out x in, out >= in) to a full isometry:
/// right singular vectors with singular value near 1 keep their image, the
/// rest are sent into the complement of the range. Inputs that are not
/// partial isometries get snapped the same way, so callers can verify the
/// result instead of crashing on it.
pub fn complete_isometry(m: &CMat) -> CMat {
    let (out, inp) = m.shape();
    assert!(out >= inp, "cannot complete {out}x{inp} into an isometry");
    let Svd { u, s, v_t: vt } = svd(m);
    let (kept, dropped): (Vec<usize>, Vec<usize>) = (0..s.len()).partition(|&i| s[i] > 0.5);
    let mut range = CMat::zeros(out, kept.len());
    for (k, &i) in kept.iter().enumerate() {
        range.set_column(k, &u.column(i));
    }
    let comp = orth_complement(&range, out);
    let mut res = CMat::zeros(out, inp);
    for &i in &kept {
        res += u.column(i) * vt.row(i);
    }
    for (k, &i) in dropped.iter().enumerate() {
        res += comp.column(k) * vt.row(i);
    }
    res
}

/// Null space of a Hermitian positive semidefinite Gram operator: eigenvectors
/// with eigenvalue below `tol` times the largest (or absolute `tol` when the
/// operator vanishes).
pub fn psd_null_space(gram: &CMat, tol: f64) -> CMat {
    let (vals, vecs) = herm_eigen(gram);
    let scale = vals.first().copied().unwrap_or(0.0).max(1.0);
    let keep: Vec<usize> = (0..vals.len()).filter(|&i| vals[i] <= tol * scale).collect();
    let mut out = CMat::zeros(gram.nrows(), keep.len());
    for (k, &i) in keep.iter().enumerate() {
        out.set_column(k, &vecs.column(i));
    }
    out
}

pub fn random_complex_gaussian<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> CMat {
    CMat::from_fn(rows, cols, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        c(re, im)
    })
}

/// Haar-ish random isometry (`rows` x `cols`) from the QR factor of a
/// complex Gaussian matrix.
pub fn random_isometry<R: Rng + ?Sized>(rows: usize, cols: usize, rng: &mut R) -> CMat {
    assert!(rows >= cols);
    let g = random_complex_gaussian(rows, cols, rng);
    let q = g.qr().q();
    q.columns(0, cols).into_owned()
}

pub fn random_unitary<R: Rng + ?Sized>(n: usize, rng: &mut R) -> CMat {
    random_isometry(n, n, rng)
}

pub fn max_abs(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Inverse square root of a positive definite Hermitian matrix.
pub fn inv_sqrt_pd(m: &CMat) -> CMat {
    let (vals, vecs) = herm_eigen(m);
    let d = CMat::from_diagonal(&nalgebra::DVector::from_iterator(
        vals.len(),
        vals.iter().map(|&v| c(1.0 / v.max(1e-300).sqrt(), 0.0)),
    ));
    &vecs * d * vecs.adjoint()
}

pub fn sqrt_psd(m: &CMat) -> CMat {
    let (vals, vecs) = herm_eigen(m);
    let d = CMat::from_diagonal(&nalgebra::DVector::from_iterator(
        vals.len(),
        vals.iter().map(|&v| c(v.max(0.0).sqrt(), 0.0)),
    ));
    &vecs * d * vecs.adjoint()
}

/// Trace distance `||a - b||_1 / 2` between Hermitian matrices.
pub fn trace_distance(a: &CMat, b: &CMat) -> f64 {
    let (vals, _) = herm_eigen(&(a - b));
    0.5 * vals.iter().map(|v| v.abs()).sum::<f64>()
}

/// Discrete Fourier matrix `F[i][k] = e^{2 pi i ik/n} / sqrt(n)`.
pub fn fourier(n: usize) -> CMat {
    let s = 1.0 / (n as f64).sqrt();
    CMat::from_fn(n, n, |i, k| {
        let ang = 2.0 * std::f64::consts::PI * ((i * k) % n) as f64 / n as f64;
        C64::from_polar(s, ang)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn check_svd(m: &CMat) {
        let d = svd(m);
        let k = m.nrows().min(m.ncols());
        assert_eq!((d.u.shape(), d.s.len(), d.v_t.shape()), ((m.nrows(), k), k, (k, m.ncols())));
        let sig = CMat::from_diagonal(&nalgebra::DVector::from_iterator(k, d.s.iter().map(|&x| c(x, 0.0))));
        assert!(max_abs(&(&d.u * sig * &d.v_t - m)) < 1e-12);
        assert!(max_abs(&(d.u.adjoint() * &d.u - identity(k))) < 1e-12);
        assert!(max_abs(&(&d.v_t * d.v_t.adjoint() - identity(k))) < 1e-12);
        assert!(d.s.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn svd_of_a_rank_one_wide_matrix() {
        // nalgebra's own SVD reports 1.00078 for this unit-norm matrix
        let v = [
            (0.0, 0.0),
            (0.0, 0.0),
            (-0.06266457903054355, -0.4474960954564316),
            (0.7414895114117833, -0.49599768099507074),
            (1.1998923436798268e-16, -4.623948866224648e-16),
            (1.7284694359452836e-16, -5.116058294436789e-16),
            (1.5240860599568075e-15, -1.0372412893356889e-16),
            (-7.013072085287297e-16, -4.123580045851202e-16),
        ];
        let f = CMat::from_iterator(2, 4, v.iter().map(|&(a, b)| c(a, b)));
        check_svd(&f);
        assert!((svd(&f).s[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn svd_of_random_and_degenerate_matrices() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (r, k) in [(1, 1), (3, 5), (5, 3), (4, 4), (6, 2)] {
            check_svd(&random_complex_gaussian(r, k, &mut rng));
            let low = random_complex_gaussian(r, 1, &mut rng) * random_complex_gaussian(1, k, &mut rng);
            check_svd(&low);
        }
        check_svd(&CMat::zeros(3, 2));
        let mut tiny = random_complex_gaussian(5, 4, &mut rng);
        for i in 0..5 {
            tiny[(i, 3)] *= 1e-156;
        }
        check_svd(&tiny);
    }

    #[test]
    fn completion_is_isometry() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let v = random_isometry(6, 2, &mut rng);
        let w = random_isometry(4, 2, &mut rng);
        let partial = &v * w.adjoint();
        let full = complete_isometry(&partial);
        let err = max_abs(&(full.adjoint() * &full - identity(4)));
        assert!(err < 1e-12, "{err}");
        assert!(max_abs(&(&full * &w - &v)) < 1e-12);
    }

    #[test]
    fn complement_spans_rest() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let v = random_isometry(5, 2, &mut rng);
        let comp = orth_complement(&v, 5);
        assert_eq!(comp.ncols(), 3);
        assert!(max_abs(&(v.adjoint() * &comp)) < 1e-12);
    }

    #[test]
    fn fourier_is_unitary() {
        let f = fourier(5);
        assert!(max_abs(&(f.adjoint() * &f - identity(5))) < 1e-12);
    }

    #[test]
    fn canonical_phase_first_entry_positive() {
        let mut v = vec![c(0.0, 0.0), c(0.0, -1.0), c(1.0, 0.0)];
        canonical_phase(&mut v);
        assert!((v[1] - c(1.0, 0.0)).norm() < 1e-15);
        assert!((v[2] - c(0.0, 1.0)).norm() < 1e-15);
    }
}
