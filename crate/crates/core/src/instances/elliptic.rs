//! One-dimensional elliptic boundary value problem `-(a v')' = f` on
//! `(0, 1)` with zero Dirichlet conditions, discretized in the
//! gradient-normalized Fourier sine basis `phi_j(x) = sqrt(2) sin(j pi x) / (j pi)`
//! and observed through pointwise noisy evaluations of `a` and `f`.
//!
//! The Hilbert space carries the homogeneous first-order Sobolev inner
//! product; in this basis it is the standard Euclidean product, and the
//! infinite-dimensional problem is truncated to `ambient_modes` modes.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::fixpoint::FixedPointInstance;
use crate::sa::ObservationStream;
use crate::wspace::{Basis, DenseOperator, WeightedSpace};

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Gauss-Legendre points per quadrature panel.
const PANEL_ORDER: usize = 8;

/// Coefficient/source pair with uniform ellipticity bounds and the
/// discretization sizes.
#[derive(Clone)]
pub struct EllipticProblem1d {
    coeff: ScalarFn,
    source: ScalarFn,
    mu: f64,
    beta: f64,
    dim: usize,
    quadrature_points: usize,
    ambient_modes: usize,
}

impl fmt::Debug for EllipticProblem1d {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EllipticProblem1d")
            .field("mu", &self.mu)
            .field("beta", &self.beta)
            .field("dim", &self.dim)
            .field("quadrature_points", &self.quadrature_points)
            .field("ambient_modes", &self.ambient_modes)
            .finish()
    }
}

impl EllipticProblem1d {
    pub fn new(
        coeff: impl Fn(f64) -> f64 + Send + Sync + 'static,
        source: impl Fn(f64) -> f64 + Send + Sync + 'static,
        mu: f64,
        beta: f64,
        dim: usize,
    ) -> Result<Self> {
        if !(0.0 < mu && mu <= beta) {
            return Err(Error::InvalidParam(format!(
                "ellipticity bounds must satisfy 0 < mu <= beta, got ({mu}, {beta})"
            )));
        }
        if dim == 0 {
            return Err(Error::InvalidParam("need at least one mode".into()));
        }
        Ok(Self {
            coeff: Arc::new(coeff),
            source: Arc::new(source),
            mu,
            beta,
            dim,
            quadrature_points: 256 * dim,
            ambient_modes: 4 * dim,
        })
    }

    pub fn with_quadrature_points(mut self, q: usize) -> Result<Self> {
        if q < 64 * self.dim {
            return Err(Error::InvalidParam(format!(
                "quadrature_points = {q} below the floor 64 * d = {}",
                64 * self.dim
            )));
        }
        self.quadrature_points = q;
        Ok(self)
    }

    pub fn with_ambient_modes(mut self, modes: usize) -> Result<Self> {
        if modes < self.dim {
            return Err(Error::InvalidParam(
                "ambient truncation cannot be smaller than the subspace".into(),
            ));
        }
        self.ambient_modes = modes;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn ambient_modes(&self) -> usize {
        self.ambient_modes
    }

    /// `phi_j(x) = sqrt(2) sin(j pi x) / (j pi)`, `j` starting at 1.
    pub fn basis_value(j: usize, x: f64) -> f64 {
        let jf = j as f64;
        (2.0f64).sqrt() * (jf * PI * x).sin() / (jf * PI)
    }

    /// `phi_j'(x) = sqrt(2) cos(j pi x)`.
    pub fn basis_deriv(j: usize, x: f64) -> f64 {
        (2.0f64).sqrt() * (j as f64 * PI * x).cos()
    }

    /// Noise constant `sigma_L = (1 + 2/beta) max_j sup |phi_j'|`.
    pub fn sigma_l(&self) -> f64 {
        (1.0 + 2.0 / self.beta) * (2.0f64).sqrt()
    }

    /// Noise constant `sigma_b = (|f|_{L2} + 1)/beta * max_j sup |phi_j|`.
    pub fn sigma_b(&self) -> Result<f64> {
        let quad = composite_rule(self.quadrature_points);
        let mut acc = 0.0;
        for &(x, w) in &quad {
            let fx = (self.source)(x);
            acc += w * fx * fx;
        }
        Ok((acc.max(0.0).sqrt() + 1.0) / self.beta * (2.0f64).sqrt() / PI)
    }

    /// Galerkin assembly of the projected pair on the first `dim` modes.
    pub fn assemble(&self) -> Result<EllipticAssembly> {
        self.assemble_with(self.dim, self.quadrature_points)
    }

    fn assemble_with(&self, modes: usize, points: usize) -> Result<EllipticAssembly> {
        let quad = composite_rule(points);
        let tol = 1e-12 * self.beta.max(1.0);
        for &(x, _) in &quad {
            let a = (self.coeff)(x);
            if a < self.mu - tol || a > self.beta + tol {
                return Err(Error::EllipticityViolated { x, value: a });
            }
        }
        let mut stiffness = DMatrix::zeros(modes, modes);
        let mut load = DVector::zeros(modes);
        for &(x, w) in &quad {
            let a = (self.coeff)(x);
            let f = (self.source)(x);
            let dphi: Vec<f64> = (1..=modes).map(|j| Self::basis_deriv(j, x)).collect();
            for i in 0..modes {
                for j in i..modes {
                    stiffness[(i, j)] += w * a * dphi[i] * dphi[j];
                }
                load[i] += w * f * Self::basis_value(i + 1, x);
            }
        }
        for i in 0..modes {
            for j in 0..i {
                stiffness[(i, j)] = stiffness[(j, i)];
            }
        }
        let m = DMatrix::identity(modes, modes) - &stiffness / self.beta;
        let h = &load / self.beta;
        Ok(EllipticAssembly {
            projected: crate::fixpoint::ProjectedInstance::new(m, h)?,
            stiffness,
            load,
            sigma_l: self.sigma_l(),
            sigma_b: self.sigma_b()?,
            quadrature_nodes: quad.len(),
        })
    }

    /// Frobenius shift of the Galerkin matrix under a 2x quadrature
    /// refinement; the convergence gate requires this to be tiny.
    pub fn quadrature_gate(&self) -> Result<f64> {
        let coarse = self.assemble()?;
        let fine = self.assemble_with(self.dim, 2 * self.quadrature_points)?;
        Ok((&coarse.projected.m - &fine.projected.m).norm())
    }

    /// Fixed-point instance on the `ambient_modes`-dimensional truncation,
    /// with the first `dim` coordinate directions as the subspace.
    pub fn ambient_instance(&self) -> Result<FixedPointInstance> {
        let asm = self.assemble_with(self.ambient_modes, self.quadrature_points)?;
        let big_d = self.ambient_modes;
        let l = DMatrix::identity(big_d, big_d) - &asm.stiffness / self.beta;
        let b = &asm.load / self.beta;
        let space = WeightedSpace::standard(big_d);
        let mut cols = DMatrix::zeros(big_d, self.dim);
        for j in 0..self.dim {
            cols[(j, j)] = 1.0;
        }
        let basis = Basis::new(space.clone(), cols)?;
        FixedPointInstance::new(DenseOperator::new(space, l)?, b, basis)
    }

    /// Seeded stream of pointwise observations
    /// `(M_i)_{jk} = delta_jk - a_i phi_j'(x_i) phi_k'(x_i) / beta`,
    /// `(h_i)_j = f_i phi_j(y_i) / beta`.
    pub fn stream(&self, seed: u64) -> EllipticStream {
        EllipticStream {
            problem: self.clone(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            seed,
        }
    }
}

/// Assembled projected pair plus the noise constants of the observation
/// model.
#[derive(Debug, Clone)]
pub struct EllipticAssembly {
    pub projected: crate::fixpoint::ProjectedInstance,
    pub stiffness: DMatrix<f64>,
    pub load: DVector<f64>,
    pub sigma_l: f64,
    pub sigma_b: f64,
    pub quadrature_nodes: usize,
}

/// Pointwise-evaluation observation stream for the elliptic problem.
pub struct EllipticStream {
    problem: EllipticProblem1d,
    rng: ChaCha8Rng,
    seed: u64,
}

impl ObservationStream for EllipticStream {
    fn dim(&self) -> usize {
        self.problem.dim
    }

    fn next_obs(&mut self) -> (DMatrix<f64>, DVector<f64>) {
        let d = self.problem.dim;
        let beta = self.problem.beta;
        let x: f64 = self.rng.random();
        let y: f64 = self.rng.random();
        let w: f64 = <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut self.rng);
        let wp: f64 = <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut self.rng);
        let a = (self.problem.coeff)(x) + w;
        let f = (self.problem.source)(y) + wp;
        let grads = DVector::from_fn(d, |j, _| EllipticProblem1d::basis_deriv(j + 1, x));
        let mut m = DMatrix::identity(d, d);
        m.ger(-a / beta, &grads, &grads, 1.0);
        let h = DVector::from_fn(d, |j, _| f * EllipticProblem1d::basis_value(j + 1, y) / beta);
        (m, h)
    }

    fn descriptor(&self) -> String {
        format!(
            "elliptic pointwise stream (d = {}, seed = {})",
            self.problem.dim, self.seed
        )
    }
}

/// Composite Gauss-Legendre rule on `[0, 1]` with at least `points` nodes,
/// returned as `(node, weight)` pairs.
fn composite_rule(points: usize) -> Vec<(f64, f64)> {
    let panels = points.div_ceil(PANEL_ORDER).max(1);
    let (nodes, weights) = gauss_legendre(PANEL_ORDER);
    let h = 1.0 / panels as f64;
    let mut rule = Vec::with_capacity(panels * PANEL_ORDER);
    for p in 0..panels {
        let left = p as f64 * h;
        for i in 0..PANEL_ORDER {
            rule.push((left + (nodes[i] + 1.0) * 0.5 * h, weights[i] * 0.5 * h));
        }
    }
    rule
}

/// Nodes and weights of the `g`-point Gauss-Legendre rule on `[-1, 1]`,
/// by Newton iteration on the Legendre polynomial.
fn gauss_legendre(g: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; g];
    let mut weights = vec![0.0; g];
    for i in 0..g {
        let mut x = (PI * (i as f64 + 0.75) / (g as f64 + 0.5)).cos();
        for _ in 0..60 {
            let (p, dp) = legendre(g, x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (_, dp) = legendre(g, x);
        nodes[i] = x;
        weights[i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// Legendre polynomial `P_n` and its derivative at `x` via the three-term
/// recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    if n == 0 {
        return (1.0, 0.0);
    }
    let mut p0 = 1.0;
    let mut p1 = x;
    for k in 2..=n {
        let kf = k as f64;
        let pk = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = pk;
    }
    let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}
