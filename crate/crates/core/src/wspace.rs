//! Weighted inner-product geometry: spaces, orthonormal bases, projections
//! and orthogonal complements.
//!
//! All vectors and operators are stored densely in ambient coordinates; the
//! weight vector enters only through inner products.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Absolute tolerance on the deflated column norm below which a column is
/// declared linearly dependent during Gram-Schmidt.
pub const RANK_TOL: f64 = 1e-12;

/// Tolerance to which basis columns must be orthonormal in the weighted
/// inner product.
pub const ORTHO_TOL: f64 = 1e-10;

/// Finite-dimensional Hilbert space `R^D` with inner product
/// `<p, q> = sum_j p_j xi_j q_j` for a positive weight vector `xi`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightedSpace {
    weights: DVector<f64>,
}

impl WeightedSpace {
    /// Builds a space from a positive weight vector.
    pub fn new(weights: DVector<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidParam("weight vector is empty".into()));
        }
        if let Some(j) = weights.iter().position(|&w| !(w > 0.0) || !w.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "weight {} at index {j} is not a positive finite real",
                weights[j]
            )));
        }
        Ok(Self { weights })
    }

    /// Euclidean space of the given dimension (all weights one).
    pub fn standard(dim: usize) -> Self {
        Self {
            weights: DVector::repeat(dim, 1.0),
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    /// Weighted inner product `sum_j p_j xi_j q_j`.
    ///
    /// Panics on dimension mismatch, mirroring `nalgebra` conventions for
    /// shape errors.
    pub fn inner(&self, p: &DVector<f64>, q: &DVector<f64>) -> f64 {
        assert_eq!(p.len(), self.dim(), "inner: lhs dimension mismatch");
        assert_eq!(q.len(), self.dim(), "inner: rhs dimension mismatch");
        let mut acc = 0.0;
        for j in 0..self.dim() {
            acc += p[j] * self.weights[j] * q[j];
        }
        acc
    }

    /// Weighted norm `sqrt(<p, p>)`.
    pub fn norm(&self, p: &DVector<f64>) -> f64 {
        self.inner(p, p).max(0.0).sqrt()
    }
}

/// Dense linear operator on a weighted space, stored in ambient coordinates.
#[derive(Debug, Clone)]
pub struct DenseOperator {
    space: WeightedSpace,
    entries: DMatrix<f64>,
}

impl DenseOperator {
    pub fn new(space: WeightedSpace, entries: DMatrix<f64>) -> Result<Self> {
        if entries.nrows() != space.dim() || entries.ncols() != space.dim() {
            return Err(Error::DimensionMismatch {
                expected: space.dim(),
                got: entries.nrows().max(entries.ncols()),
            });
        }
        Ok(Self { space, entries })
    }

    pub fn space(&self) -> &WeightedSpace {
        &self.space
    }

    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.entries * x
    }
}

/// Orthonormal basis of a `d`-dimensional subspace of a weighted space.
///
/// Columns `phi_1..phi_d` satisfy `<phi_i, phi_j> = delta_ij` to
/// [`ORTHO_TOL`] in the weighted product. The coefficient map
/// [`Basis::project_coeffs`] and the embedding [`Basis::embed`] are adjoint
/// to each other, and their composition is the orthogonal projection onto
/// the span.
#[derive(Debug, Clone)]
pub struct Basis {
    space: WeightedSpace,
    vectors: DMatrix<f64>,
}

impl Basis {
    /// Wraps a set of columns after checking orthonormality.
    pub fn new(space: WeightedSpace, vectors: DMatrix<f64>) -> Result<Self> {
        if vectors.nrows() != space.dim() {
            return Err(Error::DimensionMismatch {
                expected: space.dim(),
                got: vectors.nrows(),
            });
        }
        if vectors.ncols() == 0 || vectors.ncols() > space.dim() {
            return Err(Error::InvalidParam(format!(
                "basis must have between 1 and {} columns, got {}",
                space.dim(),
                vectors.ncols()
            )));
        }
        let d = vectors.ncols();
        let mut deviation: f64 = 0.0;
        for i in 0..d {
            for j in i..d {
                let g = space.inner(&vectors.column(i).into(), &vectors.column(j).into());
                let target = if i == j { 1.0 } else { 0.0 };
                deviation = deviation.max((g - target).abs());
            }
        }
        if deviation > ORTHO_TOL {
            return Err(Error::NotOrthonormal {
                deviation,
                tol: ORTHO_TOL,
            });
        }
        Ok(Self { space, vectors })
    }

    pub fn space(&self) -> &WeightedSpace {
        &self.space
    }

    /// Subspace dimension `d`.
    pub fn dim(&self) -> usize {
        self.vectors.ncols()
    }

    /// Ambient dimension `D`.
    pub fn ambient_dim(&self) -> usize {
        self.space.dim()
    }

    /// The `D x d` matrix whose columns are the basis vectors.
    pub fn vectors(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    /// Coefficient map `x -> (<x, phi_j>)_j`, the operator usually written
    /// as a projection onto coordinates.
    pub fn project_coeffs(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.ambient_dim(), "project_coeffs: dimension");
        let mut out = DVector::zeros(self.dim());
        let w = self.space.weights();
        for j in 0..self.dim() {
            let mut acc = 0.0;
            for i in 0..self.ambient_dim() {
                acc += x[i] * w[i] * self.vectors[(i, j)];
            }
            out[j] = acc;
        }
        out
    }

    /// Adjoint of the coefficient map: `theta -> sum_j theta_j phi_j`.
    pub fn embed(&self, theta: &DVector<f64>) -> DVector<f64> {
        assert_eq!(theta.len(), self.dim(), "embed: dimension");
        &self.vectors * theta
    }

    /// Orthogonal projection onto the span of the basis.
    pub fn project(&self, x: &DVector<f64>) -> DVector<f64> {
        self.embed(&self.project_coeffs(x))
    }

    /// Coefficient matrix `Phi_w = Phi^T diag(xi)` sending ambient
    /// coordinates to subspace coefficients; `project_coeffs(x) = Phi_w x`.
    pub fn coeff_matrix(&self) -> DMatrix<f64> {
        let mut m = self.vectors.transpose();
        for i in 0..self.ambient_dim() {
            let w = self.space.weights()[i];
            for j in 0..self.dim() {
                m[(j, i)] *= w;
            }
        }
        m
    }

    /// Weighted Gram-Schmidt on raw columns. The result spans the same
    /// subspace and is orthonormal to [`ORTHO_TOL`]; each output column has
    /// its first nonzero entry positive.
    ///
    /// Uses modified Gram-Schmidt with a second reorthogonalization pass.
    /// Fails with [`Error::RankDeficient`] when a deflated column norm drops
    /// below [`RANK_TOL`].
    pub fn orthonormalize(space: WeightedSpace, raw: &DMatrix<f64>) -> Result<Self> {
        if raw.nrows() != space.dim() {
            return Err(Error::DimensionMismatch {
                expected: space.dim(),
                got: raw.nrows(),
            });
        }
        let mut cols: Vec<DVector<f64>> = Vec::with_capacity(raw.ncols());
        for k in 0..raw.ncols() {
            let mut v: DVector<f64> = raw.column(k).into();
            for _ in 0..2 {
                for u in &cols {
                    let c = space.inner(&v, u);
                    v -= u * c;
                }
            }
            let n = space.norm(&v);
            if n < RANK_TOL {
                return Err(Error::RankDeficient { column: k, norm: n });
            }
            v /= n;
            fix_sign(&mut v);
            cols.push(v);
        }
        let vectors = DMatrix::from_columns(&cols);
        Basis::new(space, vectors)
    }

    /// Orthonormal basis of the orthogonal complement of this subspace.
    ///
    /// Deflates the coordinate vectors `e_1, .., e_D` against the basis and
    /// against previously accepted directions; exactly `D - d` survive.
    pub fn complement(&self) -> Result<Basis> {
        let d = self.dim();
        let big_d = self.ambient_dim();
        if d >= big_d {
            return Err(Error::InvalidParam(
                "complement is empty: subspace dimension equals ambient dimension".into(),
            ));
        }
        let space = self.space.clone();
        let mut cols: Vec<DVector<f64>> = Vec::with_capacity(big_d - d);
        for i in 0..big_d {
            if cols.len() == big_d - d {
                break;
            }
            let mut v = DVector::zeros(big_d);
            v[i] = 1.0;
            let original = space.norm(&v);
            for _ in 0..2 {
                for j in 0..d {
                    let u: DVector<f64> = self.vectors.column(j).into();
                    let c = space.inner(&v, &u);
                    v -= &u * c;
                }
                for u in &cols {
                    let c = space.inner(&v, u);
                    v -= u * c;
                }
            }
            let n = space.norm(&v);
            if n < 1e-8 * original {
                continue; // e_i lies in the span already collected
            }
            v /= n;
            fix_sign(&mut v);
            cols.push(v);
        }
        if cols.len() != big_d - d {
            return Err(Error::RankDeficient {
                column: cols.len(),
                norm: 0.0,
            });
        }
        Basis::new(space, DMatrix::from_columns(&cols))
    }
}

/// Flips the sign of a column so that its first non-negligible entry is
/// positive. Keeps Gram-Schmidt output deterministic across runs.
fn fix_sign(v: &mut DVector<f64>) {
    let max = v.iter().fold(0.0f64, |m, &x| m.max(x.abs()));
    if max == 0.0 {
        return;
    }
    for &x in v.iter() {
        if x.abs() > 1e-8 * max {
            if x < 0.0 {
                *v = -&*v;
            }
            return;
        }
    }
}
