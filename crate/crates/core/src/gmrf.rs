//! Sparse Gaussian Markov random field machinery.
//!
//! The spatial precision operator on the lattice is the SPDE-style square of
//! a first-order operator,
//!
//! ```text
//! Q(kappa) = (kappa^2 I + G)^T (kappa^2 I + G)
//! ```
//!
//! where `G` is the combinatorial graph Laplacian of the 4-neighborhood
//! (degree on the diagonal, -1 for neighbors, no boundary correction). `Q` is
//! symmetric positive definite for every `kappa > 0` and couples cells up to
//! graph distance 2. No variance normalization is applied; the cross-field
//! covariance absorbs the overall scale.
//!
//! Factorizations are sparse LDL^T with a reverse Cuthill-McKee fill-reducing
//! ordering (via `sprs-ldl`). The same wrapper is reused for the sampler's
//! preconditioner, so it works on any symmetric positive definite matrix and
//! exposes solves, log-determinants and exact draws from `N(0, A^{-1})`.
//!
//! The three latent sub-fields are stacked in a [`FieldMatrix`] (3 rows, one
//! per sub-field, field-major layout). Under the separable prior the joint
//! precision of the stacked vector is `Sigma^{-1} (x) Q`, and the quadratic
//! form is evaluated as `tr(Sigma^{-1} X Q X^T)` without ever forming the
//! Kronecker product.

use nalgebra::Matrix3;
use rand::Rng;
use rand_distr::StandardNormal;
use sprs::{CsMat, CsMatView, FillInReduction, PermOwnedI, SymmetryCheck, TriMat};
use sprs_ldl::{ldl_ltsolve, Ldl, LdlNumeric};

use crate::error::{Error, Result};
use crate::lattice::Lattice;
use crate::math::{pairwise_dot, pairwise_sum};

/// Number of latent sub-fields stacked on the lattice.
pub const N_FIELDS: usize = 3;

// ---------------------------------------------------------------------------
// Field storage
// ---------------------------------------------------------------------------

/// Dense 3 x n matrix of latent sub-fields, stored field-major (each row is
/// one sub-field over all cells, rows contiguous).
#[derive(Debug, Clone, PartialEq)]
pub struct FieldMatrix {
    n: usize,
    data: Vec<f64>,
}

impl FieldMatrix {
    pub fn zeros(n: usize) -> Self {
        FieldMatrix {
            n,
            data: vec![0.0; N_FIELDS * n],
        }
    }

    pub fn from_rows(rows: [Vec<f64>; N_FIELDS]) -> Result<Self> {
        let n = rows[0].len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::InvalidArgument(
                "field rows must have equal length".into(),
            ));
        }
        let mut data = Vec::with_capacity(N_FIELDS * n);
        for row in rows {
            data.extend_from_slice(&row);
        }
        Ok(FieldMatrix { n, data })
    }

    pub fn n_cells(&self) -> usize {
        self.n
    }

    pub fn row(&self, field: usize) -> &[f64] {
        &self.data[field * self.n..(field + 1) * self.n]
    }

    pub fn row_mut(&mut self, field: usize) -> &mut [f64] {
        &mut self.data[field * self.n..(field + 1) * self.n]
    }

    pub fn get(&self, field: usize, cell: usize) -> f64 {
        self.data[field * self.n + cell]
    }

    pub fn set(&mut self, field: usize, cell: usize, value: f64) {
        self.data[field * self.n + cell] = value;
    }

    /// Flat field-major view (row 0, then row 1, then row 2).
    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }
}

// ---------------------------------------------------------------------------
// Precision operator
// ---------------------------------------------------------------------------

/// Sparse lattice precision matrix `Q(kappa)` in CSR form.
#[derive(Debug, Clone)]
pub struct SparsePrecision {
    kappa: f64,
    mat: CsMat<f64>,
}

/// First-order operator `kappa^2 I + G` with `G` the combinatorial Laplacian.
/// Row sums are exactly `kappa^2` because Laplacian rows sum to zero.
pub(crate) fn first_order_operator(lattice: &Lattice, kappa: f64) -> CsMat<f64> {
    let n = lattice.n_cells();
    let k2 = kappa * kappa;
    let mut tri = TriMat::new((n, n));
    for i in 0..n {
        tri.add_triplet(i, i, k2 + lattice.degree(i) as f64);
        for j in lattice.neighbors(i) {
            tri.add_triplet(i, j, -1.0);
        }
    }
    tri.to_csr()
}

/// Build the precision operator `Q(kappa)` on a lattice.
pub fn build_precision(lattice: &Lattice, kappa: f64) -> Result<SparsePrecision> {
    if !kappa.is_finite() || kappa <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "kappa must be positive and finite, got {kappa}"
        )));
    }
    let max_diag = (kappa * kappa + 4.0) * (kappa * kappa + 4.0) + 4.0;
    if !max_diag.is_finite() {
        return Err(Error::Numeric(format!(
            "kappa = {kappa} overflows the precision operator"
        )));
    }
    let s = first_order_operator(lattice, kappa);
    // S is symmetric, so Q = S^T S = S * S.
    let mat = &s * &s;
    Ok(SparsePrecision { kappa, mat })
}

impl SparsePrecision {
    /// Wrap an arbitrary symmetric matrix as a precision operator. Used for
    /// degenerate cases in tests and by callers that assemble their own
    /// structure; `build_precision` is the lattice path.
    pub fn from_parts(mat: CsMat<f64>, kappa: f64) -> Result<Self> {
        if mat.rows() != mat.cols() {
            return Err(Error::InvalidArgument(format!(
                "precision matrix must be square, got {} x {}",
                mat.rows(),
                mat.cols()
            )));
        }
        if !sprs::is_symmetric(&mat) {
            return Err(Error::InvalidArgument(
                "precision matrix must be symmetric".into(),
            ));
        }
        Ok(SparsePrecision { kappa, mat })
    }

    pub fn dim(&self) -> usize {
        self.mat.rows()
    }

    pub fn nnz(&self) -> usize {
        self.mat.nnz()
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn matrix(&self) -> CsMatView<'_, f64> {
        self.mat.view()
    }

    /// `out = Q x`, accumulated row by row in index order (deterministic).
    pub fn mul_vec(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.dim());
        debug_assert_eq!(out.len(), self.dim());
        for (row, out_i) in self.mat.outer_iterator().zip(out.iter_mut()) {
            let mut acc = 0.0;
            for (j, v) in row.iter() {
                acc += v * x[j];
            }
            *out_i = acc;
        }
    }

    /// The 3 x 3 scatter matrix `X Q X^T`.
    pub fn field_scatter(&self, x: &FieldMatrix) -> Result<Matrix3<f64>> {
        if x.n_cells() != self.dim() {
            return Err(Error::InvalidArgument(format!(
                "field has {} cells but precision has dimension {}",
                x.n_cells(),
                self.dim()
            )));
        }
        let n = self.dim();
        let mut qx = vec![0.0; N_FIELDS * n];
        for b in 0..N_FIELDS {
            self.mul_vec(x.row(b), &mut qx[b * n..(b + 1) * n]);
        }
        let mut s = Matrix3::zeros();
        for a in 0..N_FIELDS {
            for b in 0..N_FIELDS {
                s[(a, b)] = pairwise_dot(x.row(a), &qx[b * n..(b + 1) * n]);
            }
        }
        Ok(s)
    }
}

// ---------------------------------------------------------------------------
// Factorization
// ---------------------------------------------------------------------------

/// Sparse LDL^T factorization of a symmetric positive definite matrix, with a
/// reverse Cuthill-McKee ordering. Rejects indefinite inputs (sprs-ldl does
/// not pivot, so an indefinite matrix shows up as a non-positive diagonal).
///
/// One-by-one matrices are handled directly (the sparse symbolic machinery
/// requires dimension at least two).
pub struct Factorization {
    kind: FactorKind,
    dim: usize,
    logdet: f64,
}

enum FactorKind {
    Scalar {
        value: f64,
    },
    Ldl {
        numeric: LdlNumeric<f64, usize>,
        perm: PermOwnedI<usize>,
    },
}

impl Factorization {
    /// Factorize an arbitrary symmetric positive definite sparse matrix.
    pub fn from_matrix(mat: CsMatView<'_, f64>) -> Result<Self> {
        if mat.rows() == 1 {
            return Self::from_scalar(mat);
        }
        let ldl = Ldl::new()
            .check_symmetry(SymmetryCheck::DontCheckSymmetry)
            .fill_in_reduction(FillInReduction::ReverseCuthillMcKee);
        let perm = ldl.perm(mat);
        Self::with_perm(mat, perm)
    }

    /// Factorize with a caller-supplied ordering (reused across refactors of
    /// matrices sharing a sparsity pattern).
    pub fn with_perm(mat: CsMatView<'_, f64>, perm: PermOwnedI<usize>) -> Result<Self> {
        if mat.rows() == 1 {
            return Self::from_scalar(mat);
        }
        let dim = mat.rows();
        let numeric =
            LdlNumeric::new_perm(mat, perm.clone(), SymmetryCheck::DontCheckSymmetry).map_err(
                |e| {
                    Error::Numeric(format!(
                        "LDL^T factorization failed (dim {dim}, nnz {}): {e}",
                        mat.nnz()
                    ))
                },
            )?;
        let logdet = Self::checked_logdet(numeric.d(), dim, mat.nnz())?;
        Ok(Factorization {
            kind: FactorKind::Ldl { numeric, perm },
            dim,
            logdet,
        })
    }

    fn from_scalar(mat: CsMatView<'_, f64>) -> Result<Self> {
        let value = *mat.get(0, 0).unwrap_or(&0.0);
        let logdet = Self::checked_logdet(&[value], 1, mat.nnz())?;
        Ok(Factorization {
            kind: FactorKind::Scalar { value },
            dim: 1,
            logdet,
        })
    }

    /// Factorize a lattice precision operator.
    pub fn new(q: &SparsePrecision) -> Result<Self> {
        Self::from_matrix(q.matrix()).map_err(|e| {
            Error::Numeric(format!("factorizing Q(kappa = {}): {e}", q.kappa()))
        })
    }

    /// Refactorize in place with a matrix of identical sparsity pattern.
    pub fn update(&mut self, mat: CsMatView<'_, f64>) -> Result<()> {
        match &mut self.kind {
            FactorKind::Scalar { value } => {
                *value = *mat.get(0, 0).unwrap_or(&0.0);
                self.logdet = Self::checked_logdet(&[*value], 1, mat.nnz())?;
            }
            FactorKind::Ldl { numeric, .. } => {
                numeric.update(mat).map_err(|e| {
                    Error::Numeric(format!(
                        "LDL^T update failed (dim {}, nnz {}): {e}",
                        self.dim,
                        mat.nnz()
                    ))
                })?;
                self.logdet = Self::checked_logdet(numeric.d(), self.dim, mat.nnz())?;
            }
        }
        Ok(())
    }

    fn checked_logdet(d: &[f64], dim: usize, nnz: usize) -> Result<f64> {
        let min_d = d.iter().copied().fold(f64::INFINITY, f64::min);
        if !(min_d > 0.0) || !min_d.is_finite() {
            return Err(Error::Numeric(format!(
                "matrix is not positive definite (dim {dim}, nnz {nnz}, min pivot {min_d:e})"
            )));
        }
        let logs: Vec<f64> = d.iter().map(|&v| v.ln()).collect();
        Ok(pairwise_sum(&logs))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Log-determinant of the factorized matrix.
    pub fn logdet(&self) -> f64 {
        self.logdet
    }

    /// Solve `A x = rhs`.
    pub fn solve(&self, rhs: &[f64]) -> Vec<f64> {
        debug_assert_eq!(rhs.len(), self.dim);
        match &self.kind {
            FactorKind::Scalar { value } => vec![rhs[0] / value],
            FactorKind::Ldl { numeric, .. } => numeric.solve(rhs),
        }
    }

    /// Draw `x ~ N(0, A^{-1})` by solving `L^T w = D^{-1/2} xi` and undoing
    /// the fill-reducing permutation.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.sample_with_sqnorm(rng).0
    }

    /// Like [`Factorization::sample`], additionally returning the squared
    /// norm of the underlying standard-normal draw, which equals
    /// `x^T A x` exactly (useful for proposal densities).
    pub fn sample_with_sqnorm<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec<f64>, f64) {
        match &self.kind {
            FactorKind::Scalar { value } => {
                let z: f64 = rng.sample(StandardNormal);
                (vec![z / value.sqrt()], z * z)
            }
            FactorKind::Ldl { numeric, perm } => {
                let d = numeric.d();
                let mut w = vec![0.0; self.dim];
                let mut sqnorm = 0.0;
                for i in 0..self.dim {
                    let z: f64 = rng.sample(StandardNormal);
                    sqnorm += z * z;
                    w[i] = z / d[i].sqrt();
                }
                ldl_ltsolve(&numeric.l(), &mut w[..]);
                let pinv = perm.inv();
                let out = &pinv * &w[..];
                (out, sqnorm)
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Separable (Kronecker) prior
// ---------------------------------------------------------------------------

/// Separable prior over the stacked fields: cross-field covariance `Sigma`
/// (3 x 3 SPD) and a shared spatial precision `Q`, i.e. the stacked precision
/// is `Sigma^{-1} (x) Q`.
pub struct KroneckerField<'a> {
    sigma: Matrix3<f64>,
    sigma_inv: Matrix3<f64>,
    sigma_chol_lower: Matrix3<f64>,
    q: &'a SparsePrecision,
}

impl<'a> KroneckerField<'a> {
    pub fn new(sigma: Matrix3<f64>, q: &'a SparsePrecision) -> Result<Self> {
        let chol = nalgebra::Cholesky::new(sigma).ok_or_else(|| {
            Error::Numeric("cross-field covariance is not positive definite".into())
        })?;
        let sigma_inv = chol.inverse();
        Ok(KroneckerField {
            sigma,
            sigma_inv,
            sigma_chol_lower: chol.l(),
            q,
        })
    }

    pub fn sigma(&self) -> &Matrix3<f64> {
        &self.sigma
    }

    pub fn sigma_inv(&self) -> &Matrix3<f64> {
        &self.sigma_inv
    }

    pub fn q(&self) -> &SparsePrecision {
        self.q
    }

    /// Log-determinant of `Sigma` (from its Cholesky factor).
    pub fn sigma_logdet(&self) -> f64 {
        let l = &self.sigma_chol_lower;
        2.0 * (l[(0, 0)].ln() + l[(1, 1)].ln() + l[(2, 2)].ln())
    }

    /// `x ~ N(0, Sigma (x) Q^{-1})`: three independent `N(0, Q^{-1})` rows
    /// mixed by the Cholesky factor of `Sigma`.
    pub fn sample_field<R: Rng + ?Sized>(
        &self,
        fact: &Factorization,
        rng: &mut R,
    ) -> Result<FieldMatrix> {
        if fact.dim() != self.q.dim() {
            return Err(Error::InvalidArgument(
                "factorization dimension does not match Q".into(),
            ));
        }
        let n = self.q.dim();
        let w: [Vec<f64>; N_FIELDS] =
            [fact.sample(rng), fact.sample(rng), fact.sample(rng)];
        let mut x = FieldMatrix::zeros(n);
        let l = &self.sigma_chol_lower;
        for a in 0..N_FIELDS {
            let row = x.row_mut(a);
            for b in 0..=a {
                let lab = l[(a, b)];
                if lab != 0.0 {
                    for (r, wv) in row.iter_mut().zip(&w[b]) {
                        *r += lab * wv;
                    }
                }
            }
        }
        Ok(x)
    }

    /// Quadratic form and its scaled gradient in one pass:
    /// returns `(tr(Sigma^{-1} X Q X^T), Sigma^{-1} X Q)`.
    pub fn quadform_with_grad(&self, x: &FieldMatrix) -> Result<(f64, FieldMatrix)> {
        if x.n_cells() != self.q.dim() {
            return Err(Error::InvalidArgument(format!(
                "field has {} cells but Q has dimension {}",
                x.n_cells(),
                self.q.dim()
            )));
        }
        let n = self.q.dim();
        let mut qx = FieldMatrix::zeros(n);
        for b in 0..N_FIELDS {
            let mut out = vec![0.0; n];
            self.q.mul_vec(x.row(b), &mut out);
            qx.row_mut(b).copy_from_slice(&out);
        }
        let mut quad = 0.0;
        for a in 0..N_FIELDS {
            for b in 0..N_FIELDS {
                quad += self.sigma_inv[(a, b)] * pairwise_dot(x.row(a), qx.row(b));
            }
        }
        let mut grad = FieldMatrix::zeros(n);
        for a in 0..N_FIELDS {
            let row = grad.row_mut(a);
            for b in 0..N_FIELDS {
                let w = self.sigma_inv[(a, b)];
                if w != 0.0 {
                    for (g, q) in row.iter_mut().zip(qx.row(b)) {
                        *g += w * q;
                    }
                }
            }
        }
        Ok((quad, grad))
    }
}

/// `tr(Sigma^{-1} X Q X^T)`: the quadratic form of the stacked field under
/// the separable precision `Sigma^{-1} (x) Q`.
pub fn kron_quadform(field: &KroneckerField<'_>, x: &FieldMatrix) -> Result<f64> {
    field.quadform_with_grad(x).map(|(q, _)| q)
}
