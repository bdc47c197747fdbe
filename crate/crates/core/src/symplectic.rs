//! Symplectic linear algebra on R^{2n}: the standard form, Lagrangian frames and
//! their intersection with the Dirichlet plane `{p1 = 0}`.
//!
//! A plane is stored as a `2n x n` frame whose top block `X` holds the `p1`
//! (value) rows and bottom block `Y` the `p2 = D u'` rows.

use nalgebra::{DMatrix, DMatrixView, DVector};

use crate::error::{Error, Result};
use crate::linalg;

/// The form `w(v1, v2) = <v1, J v2>` with `J = [[0, -I], [I, 0]]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SymplecticForm {
    n: usize,
}

impl SymplecticForm {
    pub fn new(n: usize) -> Self {
        assert!(n > 0, "symplectic dimension must be positive");
        Self { n }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        let n = self.n;
        let mut j = DMatrix::zeros(2 * n, 2 * n);
        for i in 0..n {
            j[(i, n + i)] = -1.0;
            j[(n + i, i)] = 1.0;
        }
        j
    }

    pub fn product(&self, v1: &DVector<f64>, v2: &DVector<f64>) -> Result<f64> {
        symplectic_product(v1, v2, self)
    }
}

/// Evaluates `<v1, J v2> = <v1_bottom, v2_top> - <v1_top, v2_bottom>`.
pub fn symplectic_product(v1: &DVector<f64>, v2: &DVector<f64>, form: &SymplecticForm) -> Result<f64> {
    let dim = 2 * form.n;
    for v in [v1, v2] {
        if v.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: v.len() });
        }
    }
    let n = form.n;
    let top1 = v1.rows(0, n);
    let bot1 = v1.rows(n, n);
    let top2 = v2.rows(0, n);
    let bot2 = v2.rows(n, n);
    Ok(bot1.dot(&top2) - top1.dot(&bot2))
}

/// Position of a frame along the line; the unstable subspace lives at `-inf`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Position {
    MinusInfinity,
    PlusInfinity,
    At(f64),
}

#[derive(Debug, Clone)]
pub struct LagrangianFrame {
    frame: DMatrix<f64>,
    pub position: Position,
    pub lambda: f64,
}

impl LagrangianFrame {
    /// Stacks the blocks `(X; Y)` without normalizing.
    pub fn from_blocks(x: &DMatrix<f64>, y: &DMatrix<f64>, position: Position, lambda: f64) -> Result<Self> {
        let n = x.nrows();
        if x.ncols() != n {
            return Err(Error::DimensionMismatch { expected: n, got: x.ncols() });
        }
        if y.nrows() != n || y.ncols() != n {
            return Err(Error::DimensionMismatch { expected: n, got: y.nrows().max(y.ncols()) });
        }
        let mut frame = DMatrix::zeros(2 * n, n);
        frame.view_mut((0, 0), (n, n)).copy_from(x);
        frame.view_mut((n, 0), (n, n)).copy_from(y);
        Ok(Self { frame, position, lambda })
    }

    pub fn from_matrix(frame: DMatrix<f64>, position: Position, lambda: f64) -> Result<Self> {
        let n = frame.ncols();
        if frame.nrows() != 2 * n || n == 0 {
            return Err(Error::DimensionMismatch { expected: 2 * n, got: frame.nrows() });
        }
        Ok(Self { frame, position, lambda })
    }

    pub fn n(&self) -> usize {
        self.frame.ncols()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.frame
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.frame
    }

    pub fn top(&self) -> DMatrixView<'_, f64> {
        let n = self.n();
        self.frame.view((0, 0), (n, n))
    }

    pub fn bottom(&self) -> DMatrixView<'_, f64> {
        let n = self.n();
        self.frame.view((n, 0), (n, n))
    }

    /// Same plane with orthonormal columns (QR with positive-diagonal `R`,
    /// so `sign(det X)` is unchanged).
    pub fn orthonormalized(&self) -> Self {
        Self {
            frame: linalg::orthonormalize(&self.frame),
            position: self.position,
            lambda: self.lambda,
        }
    }

    /// Change of basis of the same plane: columns become `frame * g`.
    pub fn right_mul(&self, g: &DMatrix<f64>) -> Self {
        Self { frame: &self.frame * g, position: self.position, lambda: self.lambda }
    }

    pub fn det_top(&self) -> f64 {
        self.top().clone_owned().determinant()
    }

    pub fn sigma_min_top(&self) -> f64 {
        linalg::sigma_min(&self.top().clone_owned())
    }

    /// Spectral norm of `X^T Y - Y^T X`.
    pub fn lagrangian_residual(&self) -> f64 {
        let x = self.top();
        let y = self.bottom();
        let skew = x.transpose() * y - y.transpose() * x;
        linalg::norm2(&skew)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LagrangianCheck {
    pub is_lagrangian: bool,
    /// `||X^T Y - Y^T X||_2`.
    pub residual: f64,
    /// Smallest singular value of the stacked frame.
    pub sigma_min: f64,
}

/// Checks `||X^T Y - Y^T X|| <= tol * max(1, ||F||^2)` and `sigma_min(F) > tol * ||F||`.
pub fn is_lagrangian(frame: &LagrangianFrame, tol: f64) -> LagrangianCheck {
    let sv = linalg::singular_values(frame.matrix());
    let sigma_max = sv.iter().copied().fold(0.0, f64::max);
    let sigma_min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    let residual = frame.lagrangian_residual();
    let scale = sigma_max * sigma_max;
    let is_lagrangian = residual <= tol * scale.max(1.0) && sigma_min > tol * sigma_max.max(1.0);
    LagrangianCheck { is_lagrangian, residual, sigma_min }
}

/// The plane `{(p1, p2) : p1 = 0}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DirichletPlane {
    pub n: usize,
}

impl DirichletPlane {
    pub fn new(n: usize) -> Self {
        Self { n }
    }

    /// `X = 0, Y = I`.
    pub fn canonical_frame(&self) -> LagrangianFrame {
        let z = DMatrix::zeros(self.n, self.n);
        let i = DMatrix::identity(self.n, self.n);
        LagrangianFrame::from_blocks(&z, &i, Position::At(f64::NAN), f64::NAN).expect("square blocks")
    }
}

#[derive(Debug, Clone)]
pub struct DirichletIntersection {
    pub dimension: usize,
    /// `n x k` orthonormal basis of the right null space of `X`.
    pub kernel_basis: DMatrix<f64>,
    /// Singular values of `X`, descending.
    pub singular_values: DVector<f64>,
}

/// Dimension of `span(frame) ∩ D`, i.e. `n - rank(X)` with the rank decided by
/// singular values below `tol_rank * sigma_max(X; Y)`.
pub fn dirichlet_intersection(frame: &LagrangianFrame, tol_rank: f64) -> DirichletIntersection {
    let n = frame.n();
    let scale = linalg::norm2(frame.matrix()).max(f64::MIN_POSITIVE);
    let (s, v) = linalg::svd_sorted(&frame.top().clone_owned());
    let rank = s.iter().filter(|&&sv| sv > tol_rank * scale).count();
    let dimension = n - rank;
    let kernel_basis = v.columns(rank, dimension).clone_owned();
    DirichletIntersection { dimension, kernel_basis, singular_values: s }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn product_examples() {
        let f = SymplecticForm::new(1);
        assert_eq!(symplectic_product(&v(&[1.0, 0.0]), &v(&[0.0, 1.0]), &f).unwrap(), -1.0);
        assert_eq!(symplectic_product(&v(&[1.0, 2.0]), &v(&[3.0, 4.0]), &f).unwrap(), 2.0);
        assert_eq!(symplectic_product(&v(&[0.3, -7.0]), &v(&[0.3, -7.0]), &f).unwrap(), 0.0);
        assert!(matches!(
            symplectic_product(&v(&[1.0]), &v(&[0.0, 1.0]), &f),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn form_matrix_properties() {
        let j = SymplecticForm::new(3).matrix();
        assert_eq!(j.transpose(), -&j);
        assert_eq!(&j * &j, -DMatrix::<f64>::identity(6, 6));
    }

    #[test]
    fn lagrangian_examples() {
        let d = DirichletPlane::new(2).canonical_frame();
        let c = is_lagrangian(&d, 1e-8);
        assert!(c.is_lagrangian);
        assert_eq!(c.residual, 0.0);

        let s = DMatrix::from_row_slice(2, 2, &[2.0, -1.0, -1.0, 0.5]);
        let g = LagrangianFrame::from_blocks(&DMatrix::identity(2, 2), &s, Position::At(0.0), 0.0).unwrap();
        assert!(is_lagrangian(&g, 1e-8).is_lagrangian);

        let y = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]);
        let bad = LagrangianFrame::from_blocks(&DMatrix::identity(2, 2), &y, Position::At(0.0), 0.0).unwrap();
        let c = is_lagrangian(&bad, 1e-8);
        assert!(!c.is_lagrangian);
        assert!((c.residual - 1.0).abs() < 1e-14);
    }

    #[test]
    fn intersection_examples() {
        let d = DirichletPlane::new(3).canonical_frame();
        assert_eq!(dirichlet_intersection(&d, 1e-8).dimension, 3);

        let t = LagrangianFrame::from_blocks(
            &DMatrix::identity(2, 2),
            &DMatrix::zeros(2, 2),
            Position::At(0.0),
            0.0,
        )
        .unwrap();
        assert_eq!(dirichlet_intersection(&t, 1e-8).dimension, 0);

        let f = LagrangianFrame::from_blocks(&linalg::diag(&[1.0, 0.0]), &linalg::diag(&[0.0, 1.0]), Position::At(0.0), 0.0)
            .unwrap();
        let i = dirichlet_intersection(&f, 1e-8);
        assert_eq!(i.dimension, 1);
        assert!(i.kernel_basis[(0, 0)].abs() < 1e-15);
        assert!((i.kernel_basis[(1, 0)].abs() - 1.0).abs() < 1e-15);
        let cols = f.matrix() * &i.kernel_basis;
        assert!(cols.rows(0, 2).norm() < 1e-15);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn product_is_antisymmetric(a in prop::collection::vec(-10.0f64..10.0, 6), b in prop::collection::vec(-10.0f64..10.0, 6)) {
            let f = SymplecticForm::new(3);
            let (va, vb) = (v(&a), v(&b));
            let ab = symplectic_product(&va, &vb, &f).unwrap();
            let ba = symplectic_product(&vb, &va, &f).unwrap();
            prop_assert!((ab + ba).abs() <= 1e-12 * (1.0 + ab.abs()));
        }

        #[test]
        fn intersection_dimension_is_basis_invariant(
            kdim in 0usize..=3,
            sym in prop::collection::vec(-3.0f64..3.0, 9),
            g in prop::collection::vec(-2.0f64..2.0, 9),
        ) {
            // A Lagrangian plane meeting D in exactly `kdim` dimensions: X = diag(0..0, 1..1), Y = I.
            let n = 3;
            let mut x = DMatrix::<f64>::zeros(n, n);
            for i in kdim..n { x[(i, i)] = 1.0; }
            let s = DMatrix::from_row_slice(n, n, &sym);
            let s = (&s + s.transpose()) * 0.5;
            // Y = I + X S X keeps X^T Y symmetric.
            let y = DMatrix::<f64>::identity(n, n) + &x * &s * &x;
            let frame = LagrangianFrame::from_blocks(&x, &y, Position::At(0.0), 0.0).unwrap();
            let gm = DMatrix::from_row_slice(n, n, &g) + DMatrix::<f64>::identity(n, n) * 7.0;
            let moved = frame.right_mul(&gm).orthonormalized();
            prop_assert!(is_lagrangian(&moved, 1e-8).is_lagrangian);
            prop_assert_eq!(dirichlet_intersection(&frame, 1e-8).dimension, kdim);
            prop_assert_eq!(dirichlet_intersection(&moved, 1e-8).dimension, kdim);
        }

        #[test]
        fn det_sign_survives_positive_qr(entries in prop::collection::vec(-5.0f64..5.0, 8)) {
            let m = DMatrix::from_row_slice(4, 2, &entries);
            prop_assume!(linalg::sigma_min(&m) > 1e-6);
            let frame = LagrangianFrame::from_matrix(m, Position::At(0.0), 0.0).unwrap();
            let d0 = frame.det_top();
            prop_assume!(d0.abs() > 1e-9);
            let d1 = frame.orthonormalized().det_top();
            prop_assert_eq!(d0.signum(), d1.signum());
        }
    }
}
