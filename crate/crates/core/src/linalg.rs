//! Dense linear algebra helpers on top of nalgebra.

use nalgebra::{ComplexField, DMatrix, DVector};
use num_complex::Complex64;
use num_traits::Zero;

use crate::error::{Error, Result};
use crate::{CMatrix, CVector};

/// Ordered complex Schur form `M = Q T Q^H` with the selected eigenvalues in
/// the leading `k x k` block of `T`.
pub struct OrderedSchur {
    pub q: CMatrix,
    pub t: CMatrix,
    pub k: usize,
}

/// Swaps the adjacent diagonal entries `j`, `j + 1` of the triangular `t`.
fn swap_adjacent(q: &mut CMatrix, t: &mut CMatrix, j: usize) {
    let n = t.nrows();
    let t11 = t[(j, j)];
    let t22 = t[(j + 1, j + 1)];
    let t12 = t[(j, j + 1)];
    let x = t22 - t11;
    let r = (t12.norm_sqr() + x.norm_sqr()).sqrt();
    if r == 0.0 {
        return;
    }
    // First column of the rotation is the eigenvector of t22 in the block.
    let c = t12 / r;
    let s = x / r;
    // Z = [[c, -conj(s)], [s, conj(c)]]
    for col in 0..n {
        let a = t[(j, col)];
        let b = t[(j + 1, col)];
        t[(j, col)] = c.conj() * a + s.conj() * b;
        t[(j + 1, col)] = -s * a + c * b;
    }
    for row in 0..n {
        let a = t[(row, j)];
        let b = t[(row, j + 1)];
        t[(row, j)] = a * c + b * s;
        t[(row, j + 1)] = -a * s.conj() + b * c.conj();
    }
    for row in 0..n {
        let a = q[(row, j)];
        let b = q[(row, j + 1)];
        q[(row, j)] = a * c + b * s;
        q[(row, j + 1)] = -a * s.conj() + b * c.conj();
    }
    t[(j + 1, j)] = Complex64::zero();
    t[(j, j)] = t22;
    t[(j + 1, j + 1)] = t11;
}

/// Complex Schur decomposition reordered so that `select` eigenvalues come
/// first, keeping the relative order within each group.
pub fn ordered_schur(m: &CMatrix, select: impl Fn(Complex64) -> bool) -> OrderedSchur {
    let n = m.nrows();
    let (mut q, mut t) = m.clone().schur().unpack();
    for i in 0..n {
        for j in 0..i {
            t[(i, j)] = Complex64::zero();
        }
    }
    let mut k = 0;
    for i in 0..n {
        if select(t[(i, i)]) {
            let mut j = i;
            while j > k {
                swap_adjacent(&mut q, &mut t, j - 1);
                j -= 1;
            }
            k += 1;
        }
    }
    OrderedSchur { q, t, k }
}

/// Solves `A X - X B = C` for upper triangular `A` and `B`.
fn triangular_sylvester(a: &CMatrix, b: &CMatrix, c: &CMatrix) -> CMatrix {
    let (p, q) = (a.nrows(), b.nrows());
    let mut x = CMatrix::zeros(p, q);
    for j in 0..q {
        let mut rhs: CVector = c.column(j).into_owned();
        for l in 0..j {
            let blj = b[(l, j)];
            if blj != Complex64::zero() {
                rhs += x.column(l) * blj;
            }
        }
        let shift = b[(j, j)];
        for i in (0..p).rev() {
            let mut acc = rhs[i];
            for l in i + 1..p {
                acc -= a[(i, l)] * x[(l, j)];
            }
            x[(i, j)] = acc / (a[(i, i)] - shift);
        }
    }
    x
}

/// Spectral projector onto the invariant subspace for the selected
/// eigenvalues, along the complementary invariant subspace.
pub fn spectral_projector(m: &CMatrix, select: impl Fn(Complex64) -> bool) -> CMatrix {
    let n = m.nrows();
    let s = ordered_schur(m, select);
    let k = s.k;
    if k == 0 {
        return CMatrix::zeros(n, n);
    }
    if k == n {
        return CMatrix::identity(n, n);
    }
    let t11 = s.t.view((0, 0), (k, k)).into_owned();
    let t12 = s.t.view((0, k), (k, n - k)).into_owned();
    let t22 = s.t.view((k, k), (n - k, n - k)).into_owned();
    let y = triangular_sylvester(&t11, &t22, &t12);
    let mut pt = CMatrix::zeros(n, n);
    for i in 0..k {
        pt[(i, i)] = Complex64::new(1.0, 0.0);
    }
    pt.view_mut((0, k), (k, n - k)).copy_from(&y);
    &s.q * pt * s.q.adjoint()
}

/// Orthonormal basis of the invariant subspace for the selected
/// eigenvalues and the restriction of `m` to it.
pub fn invariant_subspace(m: &CMatrix, select: impl Fn(Complex64) -> bool) -> (CMatrix, CMatrix) {
    let s = ordered_schur(m, select);
    let n = m.nrows();
    let z = s.q.view((0, 0), (n, s.k)).into_owned();
    let t = s.t.view((0, 0), (s.k, s.k)).into_owned();
    (z, t)
}

/// Singular values in descending order.
pub fn singular_values<T: ComplexField<RealField = f64>>(a: &DMatrix<T>) -> Vec<f64> {
    if a.is_empty() {
        return Vec::new();
    }
    let mut sv: Vec<f64> = a.clone().svd(false, false).singular_values.iter().copied().collect();
    sv.sort_by(|x, y| y.total_cmp(x));
    sv
}

pub fn rank<T: ComplexField<RealField = f64>>(a: &DMatrix<T>, tol: f64) -> usize {
    singular_values(a).into_iter().filter(|&s| s > tol).count()
}

/// Orthonormal basis of the null space: right singular vectors for singular
/// values at most `tol`. Columns are ordered by increasing singular value.
pub fn null_space<T: ComplexField<RealField = f64>>(a: &DMatrix<T>, tol: f64) -> DMatrix<T> {
    let cols = a.ncols();
    let padded = if a.nrows() < cols {
        let mut p = DMatrix::<T>::zeros(cols, cols);
        p.view_mut((0, 0), (a.nrows(), cols)).copy_from(a);
        p
    } else {
        a.clone()
    };
    let svd = padded.svd(false, true);
    let v_t = svd.v_t.expect("requested v_t");
    let mut picked: Vec<(f64, usize)> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s <= tol)
        .map(|(i, &s)| (s, i))
        .collect();
    picked.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
    let mut out = DMatrix::<T>::zeros(cols, picked.len());
    for (c, (_, i)) in picked.iter().enumerate() {
        for r in 0..cols {
            out[(r, c)] = v_t[(*i, r)].clone().conjugate();
        }
    }
    out
}

/// Orthonormal basis of the column space (left singular vectors above `tol`).
pub fn column_space<T: ComplexField<RealField = f64>>(a: &DMatrix<T>, tol: f64) -> DMatrix<T> {
    if a.ncols() == 0 {
        return DMatrix::zeros(a.nrows(), 0);
    }
    let svd = a.clone().svd(true, false);
    let u = svd.u.expect("requested u");
    let mut picked: Vec<(f64, usize)> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > tol)
        .map(|(i, &s)| (s, i))
        .collect();
    picked.sort_by(|x, y| y.0.total_cmp(&x.0).then(x.1.cmp(&y.1)));
    let mut out = DMatrix::<T>::zeros(a.nrows(), picked.len());
    for (c, (_, i)) in picked.iter().enumerate() {
        out.set_column(c, &u.column(*i));
    }
    out
}

/// 2-norm condition number.
pub fn condition_number<T: ComplexField<RealField = f64>>(a: &DMatrix<T>) -> f64 {
    let sv = singular_values(a);
    match (sv.first(), sv.last()) {
        (Some(&hi), Some(&lo)) if lo > 0.0 => hi / lo,
        (Some(_), Some(_)) => f64::INFINITY,
        _ => 1.0,
    }
}

pub fn inverse(a: &CMatrix) -> Result<CMatrix> {
    a.clone().lu().try_inverse().ok_or_else(|| Error::Config("singular matrix".into()))
}

/// Largest absolute entry of the imaginary part relative to the matrix norm.
pub fn imaginary_fraction(a: &CMatrix) -> f64 {
    let im = a.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
    im / a.norm().max(f64::MIN_POSITIVE)
}

pub fn real_part(a: &CMatrix) -> DMatrix<f64> {
    a.map(|z| z.re)
}

pub fn to_complex(a: &DMatrix<f64>) -> CMatrix {
    a.map(|x| Complex64::new(x, 0.0))
}

pub fn to_complex_vector(a: &DVector<f64>) -> CVector {
    a.map(|x| Complex64::new(x, 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn projector_for_diagonalizable_matrix() {
        let m = CMatrix::from_row_slice(3, 3, &[c(2.0), c(1.0), c(0.5), c(0.0), c(0.1), c(3.0), c(0.0), c(0.0), c(5.0)]);
        let p = spectral_projector(&m, |z| z.norm() < 1.0);
        assert!((&p * &p - &p).norm() < 1e-12);
        assert!((&m * &p - &p * &m).norm() < 1e-12);
        assert!((p.trace() - c(1.0)).norm() < 1e-12);
    }

    #[test]
    fn reorder_keeps_similarity() {
        let m = CMatrix::from_fn(4, 4, |i, j| c(((i * 7 + j * 3) % 5) as f64 - 2.0));
        let s = ordered_schur(&m, |z| z.re > 0.0);
        let back = &s.q * &s.t * s.q.adjoint();
        assert!((back - &m).norm() < 1e-12);
        for i in 0..s.k {
            assert!(s.t[(i, i)].re > 0.0);
        }
    }

    #[test]
    fn null_space_of_jordan_block() {
        let j = DMatrix::<f64>::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let ns = null_space(&j, 1e-12);
        assert_eq!(ns.ncols(), 1);
        assert!((ns[(0, 0)].abs() - 1.0).abs() < 1e-14);
    }
}
