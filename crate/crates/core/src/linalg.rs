//! Small dense helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector};

/// Thin QR factorization with a nonnegative diagonal in `R`.
///
/// `m = q * r` with `q` having orthonormal columns. Flipping signs so that
/// `diag(r) >= 0` makes the factorization unique for full-rank input, which is
/// what keeps determinant signs of frame blocks continuous.
pub fn qr_positive(m: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
    let qr = m.clone().qr();
    let mut q = qr.q();
    let mut r = qr.r();
    for j in 0..r.nrows() {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
            r.row_mut(j).neg_mut();
        }
    }
    (q, r)
}

/// Orthonormal basis of the column span, same orientation as `m`.
pub fn orthonormalize(m: &DMatrix<f64>) -> DMatrix<f64> {
    qr_positive(m).0
}

/// Eigen-decomposition of a symmetric matrix, eigenvalues ascending.
pub fn sym_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let sym = (m + m.transpose()) * 0.5;
    let eig = sym.symmetric_eigen();
    let n = eig.eigenvalues.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_iterator(n, idx.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (k, &i) in idx.iter().enumerate() {
        vectors.set_column(k, &eig.eigenvectors.column(i));
    }
    (values, vectors)
}

pub fn sym_eigenvalues(m: &DMatrix<f64>) -> DVector<f64> {
    sym_eigen(m).0
}

/// Singular values and right singular vectors, singular values descending.
pub fn svd_sorted(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let svd = m.clone().svd(false, true);
    let v_t = svd.v_t.expect("requested right singular vectors");
    let k = svd.singular_values.len();
    let mut idx: Vec<usize> = (0..k).collect();
    idx.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let values = DVector::from_iterator(k, idx.iter().map(|&i| svd.singular_values[i]));
    let mut v = DMatrix::zeros(m.ncols(), k);
    for (c, &i) in idx.iter().enumerate() {
        v.set_column(c, &v_t.row(i).transpose());
    }
    (values, v)
}

pub fn singular_values(m: &DMatrix<f64>) -> DVector<f64> {
    let mut s: Vec<f64> = m.clone().singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    DVector::from_vec(s)
}

pub fn sigma_min(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .singular_values()
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Spectral norm.
pub fn norm2(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.clone().singular_values().iter().copied().fold(0.0, f64::max)
}

/// Spectral norm of a symmetric matrix (largest absolute eigenvalue).
pub fn sym_norm2(m: &DMatrix<f64>) -> f64 {
    sym_eigenvalues(m).iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Sine of the largest principal angle between the spans of two orthonormal frames.
pub fn subspace_gap(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    let proj = a * (a.transpose() * b);
    norm2(&(b - proj)).min(1.0)
}

/// Sine of the angle between a vector and the span of an orthonormal frame.
pub fn angle_to_span(frame: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    let nv = v.norm();
    if nv == 0.0 {
        return 0.0;
    }
    let resid = v - frame * (frame.transpose() * v);
    (resid.norm() / nv).min(1.0)
}

pub fn diag(values: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_column_slice(values))
}

/// Golden-section minimisation of a unimodal function on `[a, b]`.
pub fn golden_min<F: FnMut(f64) -> f64>(mut f: F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    let mut iter = 0;
    while (b - a).abs() > tol && iter < 200 {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
        iter += 1;
    }
    if fc <= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

/// Bisection on a sign change of `f` in `[a, b]`; returns the midpoint and half-width
/// of the final bracket.
pub fn bisect<F: FnMut(f64) -> f64>(mut f: F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let mut fa = f(a);
    if fa == 0.0 {
        return (a, 0.0);
    }
    for _ in 0..200 {
        if (b - a).abs() <= tol {
            break;
        }
        let m = 0.5 * (a + b);
        if m == a || m == b {
            break;
        }
        let fm = f(m);
        if fm == 0.0 {
            return (m, 0.0);
        }
        if (fm < 0.0) == (fa < 0.0) {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    (0.5 * (a + b), 0.5 * (b - a).abs())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn qr_has_nonnegative_diagonal() {
        let m = DMatrix::from_row_slice(4, 2, &[-1.0, 2.0, 0.5, -3.0, 2.0, 1.0, -0.3, 0.7]);
        let (q, r) = qr_positive(&m);
        assert!((q.transpose() * &q - DMatrix::identity(2, 2)).norm() < 1e-14);
        assert!((&q * &r - &m).norm() < 1e-13);
        assert!(r[(0, 0)] >= 0.0 && r[(1, 1)] >= 0.0);
    }

    #[test]
    fn golden_and_bisect() {
        let (x, _) = golden_min(|x| (x - 0.3).abs(), -1.0, 2.0, 1e-12);
        assert!((x - 0.3).abs() < 1e-10);
        let (r, w) = bisect(|x| x * x - 2.0, 0.0, 2.0, 1e-14);
        assert!((r - 2f64.sqrt()).abs() < 1e-13 && w < 1e-13);
    }

    #[test]
    fn svd_kernel_vector() {
        let m = diag(&[1.0, 0.0]);
        let (s, v) = svd_sorted(&m);
        assert_eq!(s[1], 0.0);
        assert!((v[(1, 1)].abs() - 1.0).abs() < 1e-15);
    }
}
