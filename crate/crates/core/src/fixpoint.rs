//! Population-level machinery for projected linear fixed-point equations:
//! exact and projected solves, the contraction diagnostic `kappa`, the
//! instance-dependent approximation factor and its bounds, and the
//! subspace/ambient solve identity.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::wspace::{Basis, DenseOperator, WeightedSpace};

/// A population pair `(L, b)` over a weighted space together with the
/// subspace the projected equation lives on.
///
/// Construction verifies that `I - L` is invertible (smallest weighted
/// singular value above `1e-10`), so the fixed point `v* = L v* + b` exists
/// and is unique.
#[derive(Debug, Clone)]
pub struct FixedPointInstance {
    space: WeightedSpace,
    op: DenseOperator,
    offset: DVector<f64>,
    basis: Basis,
}

impl FixedPointInstance {
    pub fn new(op: DenseOperator, offset: DVector<f64>, basis: Basis) -> Result<Self> {
        let space = op.space().clone();
        if offset.len() != space.dim() {
            return Err(Error::DimensionMismatch {
                expected: space.dim(),
                got: offset.len(),
            });
        }
        if basis.space() != &space {
            return Err(Error::InvalidParam(
                "basis and operator live on different weighted spaces".into(),
            ));
        }
        let dim = space.dim();
        let mut scaled = DMatrix::identity(dim, dim) - op.entries();
        weight_similarity(&space, &mut scaled);
        let smin = scaled
            .singular_values()
            .iter()
            .fold(f64::INFINITY, |m, &s| m.min(s));
        if smin <= 1e-10 {
            return Err(Error::Singular {
                context: "I - L in instance construction",
            });
        }
        Ok(Self {
            space,
            op,
            offset,
            basis,
        })
    }

    pub fn space(&self) -> &WeightedSpace {
        &self.space
    }

    pub fn operator(&self) -> &DenseOperator {
        &self.op
    }

    pub fn offset(&self) -> &DVector<f64> {
        &self.offset
    }

    pub fn basis(&self) -> &Basis {
        &self.basis
    }

    pub fn ambient_dim(&self) -> usize {
        self.space.dim()
    }

    pub fn subspace_dim(&self) -> usize {
        self.basis.dim()
    }
}

/// The `d`-dimensional pair `(M, h)` the stochastic iteration runs on.
#[derive(Debug, Clone)]
pub struct ProjectedInstance {
    pub m: DMatrix<f64>,
    pub h: DVector<f64>,
}

impl ProjectedInstance {
    pub fn new(m: DMatrix<f64>, h: DVector<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::InvalidParam("projected operator must be square".into()));
        }
        if h.len() != m.nrows() {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                got: h.len(),
            });
        }
        Ok(Self { m, h })
    }

    pub fn dim(&self) -> usize {
        self.h.len()
    }
}

/// Projects a population instance: `M_ij = <phi_i, L phi_j>`, `h_j = <phi_j, b>`.
pub fn project_instance(inst: &FixedPointInstance) -> ProjectedInstance {
    let coeff = inst.basis.coeff_matrix();
    let lphi = inst.op.entries() * inst.basis.vectors();
    let m = &coeff * lphi;
    let h = inst.basis.project_coeffs(&inst.offset);
    ProjectedInstance { m, h }
}

/// `kappa(M) = lambda_max((M + M^T) / 2)`, the contraction diagnostic for
/// the projected equation.
pub fn kappa(m: &DMatrix<f64>) -> f64 {
    assert_eq!(m.nrows(), m.ncols(), "kappa: matrix must be square");
    let sym = (m + m.transpose()) * 0.5;
    sym.symmetric_eigenvalues()
        .iter()
        .fold(f64::NEG_INFINITY, |a, &x| a.max(x))
}

/// Operator norm of `L` in the weighted geometry, computed as the largest
/// singular value of `diag(sqrt(xi)) L diag(1/sqrt(xi))`.
pub fn opnorm(space: &WeightedSpace, op: &DenseOperator) -> f64 {
    let mut scaled = op.entries().clone();
    weight_similarity(space, &mut scaled);
    scaled
        .singular_values()
        .iter()
        .fold(0.0f64, |m, &s| m.max(s))
}

/// In-place similarity transform `A -> W^{1/2} A W^{-1/2}`.
fn weight_similarity(space: &WeightedSpace, a: &mut DMatrix<f64>) {
    let w = space.weights();
    let n = space.dim();
    for i in 0..n {
        let wi = w[i].sqrt();
        for j in 0..n {
            a[(i, j)] *= wi / w[j].sqrt();
        }
    }
}

/// Solves the ambient equation `v = L v + b` by LU factorization with one
/// step of iterative refinement; the weighted residual must come out below
/// `1e-8 (1 + |v*|)`.
pub fn solve_exact(inst: &FixedPointInstance) -> Result<DVector<f64>> {
    let dim = inst.ambient_dim();
    let a = DMatrix::identity(dim, dim) - inst.op.entries();
    let lu = a.clone().lu();
    let mut v = lu.solve(&inst.offset).ok_or(Error::Singular {
        context: "solve_exact: I - L",
    })?;
    let residual = |v: &DVector<f64>| {
        let r = &inst.offset - &a * v;
        inst.space.norm(&r)
    };
    let tol = 1e-8 * (1.0 + inst.space.norm(&v));
    if residual(&v) > tol {
        let r = &inst.offset - &a * &v;
        if let Some(dv) = lu.solve(&r) {
            v += dv;
        }
        let res = residual(&v);
        if res > tol {
            return Err(Error::ResidualTooLarge {
                residual: res,
                tol,
                context: "solve_exact",
            });
        }
    }
    Ok(v)
}

/// Solves the projected equation `theta = M theta + h`. Requires
/// `kappa(M) < 1` so the solution is the unique projected fixed point.
pub fn solve_projected(proj: &ProjectedInstance) -> Result<DVector<f64>> {
    let k = kappa(&proj.m);
    if k >= 1.0 {
        return Err(Error::KappaTooLarge { kappa: k });
    }
    let dim = proj.dim();
    let a = DMatrix::identity(dim, dim) - &proj.m;
    a.lu().solve(&proj.h).ok_or(Error::Singular {
        context: "solve_projected: I - M",
    })
}

/// `lambda_max((I - M)^{-1} S (I - M)^{-T})` via one LU factorization and
/// two multi-column solves; no explicit inverse is formed.
///
/// The congruent matrix is symmetrized before the eigensolve. A relative
/// asymmetry residue above `1e-8` is reported through the `log` facade but
/// does not abort the computation.
pub fn congruence_lambda_max(m: &DMatrix<f64>, s: &DMatrix<f64>) -> Result<f64> {
    Ok(top_eig_of_congruence(m, s)?.0)
}

/// Same as [`congruence_lambda_max`] but also returns the top eigenvector,
/// deterministically chosen among (near-)degenerate directions: the
/// candidate with lexicographically largest absolute entries wins, and the
/// result has its first nonzero entry positive.
pub fn top_eig_of_congruence(m: &DMatrix<f64>, s: &DMatrix<f64>) -> Result<(f64, DVector<f64>)> {
    let dim = m.nrows();
    assert_eq!(m.ncols(), dim, "congruence: M must be square");
    assert_eq!(s.nrows(), dim, "congruence: S row dimension");
    assert_eq!(s.ncols(), dim, "congruence: S column dimension");
    let a = DMatrix::identity(dim, dim) - m;
    let lu = a.lu();
    let x = lu.solve(s).ok_or(Error::Singular {
        context: "congruence: I - M",
    })?;
    let z_t = lu.solve(&x.transpose()).ok_or(Error::Singular {
        context: "congruence: I - M (second solve)",
    })?;
    let z = z_t.transpose();
    let sym = (&z + z.transpose()) * 0.5;
    let asym = (&z - z.transpose()).norm() / z.norm().max(1.0);
    if asym > 1e-8 {
        log::warn!("congruent matrix asymmetry residue {asym:.3e} exceeds 1e-8 after symmetrization");
    }
    let eig = sym.symmetric_eigen();
    let lambda_max = eig.eigenvalues.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
    let near: Vec<usize> = (0..dim)
        .filter(|&i| eig.eigenvalues[i] >= lambda_max - 1e-10 * lambda_max.abs().max(1.0))
        .collect();
    let mut best: Option<DVector<f64>> = None;
    for &i in &near {
        let cand: DVector<f64> = eig.eigenvectors.column(i).into();
        let better = match &best {
            None => true,
            Some(b) => lex_abs_greater(&cand, b),
        };
        if better {
            best = Some(cand);
        }
    }
    let mut u = best.expect("symmetric eigensolve returned no eigenvalues");
    let max = u.amax();
    for i in 0..u.len() {
        if u[i].abs() > 1e-8 * max {
            if u[i] < 0.0 {
                u = -u;
            }
            break;
        }
    }
    Ok((lambda_max, u))
}

fn lex_abs_greater(a: &DVector<f64>, b: &DVector<f64>) -> bool {
    for i in 0..a.len() {
        let (x, y) = (a[i].abs(), b[i].abs());
        if (x - y).abs() > 1e-12 {
            return x > y;
        }
    }
    false
}

/// The approximation factor
/// `alpha(M, s) = 1 + lambda_max((I-M)^{-1} (s^2 I - M M^T) (I-M)^{-T})`.
///
/// Only invertibility of `I - M` is required; `kappa(M) >= 1` produces a
/// warning since the projected solve itself would be ill-posed.
pub fn approx_factor(m: &DMatrix<f64>, s: f64) -> Result<f64> {
    if s < 0.0 {
        return Err(Error::InvalidParam(format!("alpha: s = {s} must be >= 0")));
    }
    let k = kappa(m);
    if k >= 1.0 {
        log::warn!("approx_factor called with kappa(M) = {k} >= 1");
    }
    let dim = m.nrows();
    let smat = DMatrix::identity(dim, dim) * (s * s) - m * m.transpose();
    Ok(1.0 + congruence_lambda_max(m, &smat)?)
}

/// Closed form of the approximation factor when `M` is symmetric with the
/// given eigenvalues: `1 + max_j (s^2 - lambda_j^2) / (1 - lambda_j)^2`.
pub fn approx_factor_symmetric(eigs: &[f64], s: f64) -> Result<f64> {
    if eigs.is_empty() {
        return Err(Error::InvalidParam("eigenvalue list is empty".into()));
    }
    if let Some(&bad) = eigs.iter().find(|&&l| l >= 1.0) {
        return Err(Error::InvalidParam(format!(
            "symmetric closed form requires all eigenvalues < 1, got {bad}"
        )));
    }
    let best = eigs
        .iter()
        .map(|&l| (s * s - l * l) / ((1.0 - l) * (1.0 - l)))
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(1.0 + best)
}

/// The two intermediate bounds on `alpha(M, s)`:
/// `1 + |(I-M)^{-1}|^2 s^2` always, and `1 + 2 |(I-M)^{-1}|` when `s <= 1`.
/// Requires `kappa(M) < 1`.
pub fn approx_factor_bounds(m: &DMatrix<f64>, s: f64) -> Result<(f64, Option<f64>)> {
    let k = kappa(m);
    if k >= 1.0 {
        return Err(Error::KappaTooLarge { kappa: k });
    }
    let dim = m.nrows();
    let a = DMatrix::identity(dim, dim) - m;
    let smin = a
        .singular_values()
        .iter()
        .fold(f64::INFINITY, |m, &s| m.min(s));
    if smin <= 0.0 {
        return Err(Error::Singular {
            context: "approx_factor_bounds: I - M",
        });
    }
    let inv_norm = 1.0 / smin;
    let lemma1a = 1.0 + inv_norm * inv_norm * s * s;
    let lemma1b = (s <= 1.0).then_some(1.0 + 2.0 * inv_norm);
    Ok((lemma1a, lemma1b))
}

/// The coarser of the two classical factors:
/// `1 + s^2 lambda_max((I-M)^{-1} (I-M)^{-T})`.
pub fn yb_factor_1(m: &DMatrix<f64>, s: f64) -> Result<f64> {
    let dim = m.nrows();
    let eye = DMatrix::identity(dim, dim);
    Ok(1.0 + s * s * congruence_lambda_max(m, &eye)?)
}

/// The finer of the two classical factors:
/// `1 + |(I - Pi L)^{-1} Pi L Pi_perp|^2` in the weighted operator norm,
/// evaluated through an explicit complement basis.
pub fn yb_factor_2(inst: &FixedPointInstance) -> Result<f64> {
    let proj = project_instance(inst);
    let comp = inst.basis.complement()?;
    let l_psi = inst.op.entries() * comp.vectors();
    let cross = inst.basis.coeff_matrix() * l_psi;
    let smat = &cross * cross.transpose();
    Ok(1.0 + congruence_lambda_max(&proj.m, &smat)?)
}

/// Squared distance from the fixed point to the subspace:
/// `A(S, v*) = |Pi_perp v*|^2`.
pub fn oracle_error(inst: &FixedPointInstance) -> Result<f64> {
    let vstar = solve_exact(inst)?;
    let resid = &vstar - inst.basis.project(&vstar);
    Ok(inst.space.norm(&resid).powi(2))
}

/// Outcome of checking `|vbar - v*|^2 <= alpha(M, |L|) A(S, v*)` on one
/// instance.
#[derive(Debug, Clone)]
pub struct OracleReport {
    /// `|vbar - v*|^2`
    pub lhs: f64,
    /// `alpha(M, |L|) * A(S, v*)`
    pub rhs: f64,
    /// `lhs / rhs`, defined as 0 when both sides vanish
    pub ratio: f64,
    pub alpha: f64,
    pub oracle_err: f64,
    pub opnorm_l: f64,
    pub kappa: f64,
}

/// Verifies the oracle inequality on an instance, returning the measured
/// two sides and their ratio.
pub fn verify_oracle_inequality(inst: &FixedPointInstance) -> Result<OracleReport> {
    let proj = project_instance(inst);
    let vstar = solve_exact(inst)?;
    let theta_bar = solve_projected(&proj)?;
    let vbar = inst.basis.embed(&theta_bar);
    let diff = &vbar - &vstar;
    let lhs = inst.space.norm(&diff).powi(2);
    let resid = &vstar - inst.basis.project(&vstar);
    let oracle_err = inst.space.norm(&resid).powi(2);
    let opnorm_l = opnorm(&inst.space, &inst.op);
    let alpha = approx_factor(&proj.m, opnorm_l)?;
    let rhs = alpha * oracle_err;
    let scale = 1.0 + inst.space.norm(&vstar).powi(2);
    let ratio = if rhs <= 1e-20 * scale {
        if lhs <= 1e-20 * scale {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        lhs / rhs
    };
    Ok(OracleReport {
        lhs,
        rhs,
        ratio,
        alpha,
        oracle_err,
        opnorm_l,
        kappa: kappa(&proj.m),
    })
}

/// All factor diagnostics of one instance in a single record.
#[derive(Debug, Clone)]
pub struct FactorReport {
    pub alpha: f64,
    pub yb1: f64,
    pub yb2: f64,
    pub lemma1a_bound: f64,
    pub lemma1b_bound: Option<f64>,
    pub kappa: f64,
    pub opnorm_l: f64,
}

impl FactorReport {
    pub fn for_instance(inst: &FixedPointInstance) -> Result<Self> {
        let proj = project_instance(inst);
        let s = opnorm(&inst.space, &inst.op);
        let (lemma1a, lemma1b) = approx_factor_bounds(&proj.m, s)?;
        Ok(Self {
            alpha: approx_factor(&proj.m, s)?,
            yb1: yb_factor_1(&proj.m, s)?,
            yb2: yb_factor_2(inst)?,
            lemma1a_bound: lemma1a,
            lemma1b_bound: lemma1b,
            kappa: kappa(&proj.m),
            opnorm_l: s,
        })
    }

    /// Whether `yb2 <= alpha <= yb1` holds with the given additive slack.
    pub fn sandwich_ok(&self, slack: f64) -> bool {
        self.yb2 <= self.alpha + slack && self.alpha <= self.yb1 + slack
    }
}
