//! Linear regression on a low-dimensional subspace, rewritten as a fixed
//! point of `L = I - Sigma_X / beta`, `b = Sigma_X v* / beta`, with the
//! Gaussian-design observation stream `L_i = I - X_i X_i^T / beta`,
//! `b_i = X_i Y_i / beta`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::fixpoint::FixedPointInstance;
use crate::sa::ObservationStream;
use crate::wspace::{Basis, DenseOperator, WeightedSpace};

/// A well-specified regression model `Y = <v*, X> + eps` with Gaussian
/// design `X ~ N(0, Sigma_X)`, observed through the fixed-point lens.
///
/// The Hilbert space is standard Euclidean `R^D`; the subspace carries the
/// prior knowledge of where `v*` approximately lives.
#[derive(Debug, Clone)]
pub struct RegressionModel {
    sigma_x: DMatrix<f64>,
    v_star: DVector<f64>,
    noise_var: f64,
    basis: Basis,
    beta: f64,
    mu: f64,
    chol: Cholesky<f64, Dyn>,
}

impl RegressionModel {
    pub fn new(
        sigma_x: DMatrix<f64>,
        v_star: DVector<f64>,
        noise_var: f64,
        basis: Basis,
    ) -> Result<Self> {
        let dim = sigma_x.nrows();
        if sigma_x.ncols() != dim || v_star.len() != dim || basis.ambient_dim() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: sigma_x.ncols().max(v_star.len()).max(basis.ambient_dim()),
            });
        }
        if basis.space().weights().iter().any(|&w| (w - 1.0).abs() > 1e-14) {
            return Err(Error::InvalidParam(
                "regression lives in the standard Euclidean space; basis weights must be one".into(),
            ));
        }
        if noise_var < 0.0 {
            return Err(Error::InvalidParam("noise variance must be >= 0".into()));
        }
        let sym = (&sigma_x + sigma_x.transpose()) * 0.5;
        let eigs = sym.symmetric_eigenvalues();
        let mu = eigs.iter().fold(f64::INFINITY, |m, &x| m.min(x));
        let beta = eigs.iter().fold(f64::NEG_INFINITY, |m, &x| m.max(x));
        if mu <= 0.0 {
            return Err(Error::InvalidParam(format!(
                "second-moment matrix must be positive definite (lambda_min = {mu})"
            )));
        }
        let chol = Cholesky::new(sym.clone()).ok_or(Error::Singular {
            context: "regression design covariance",
        })?;
        Ok(Self {
            sigma_x: sym,
            v_star,
            noise_var,
            basis,
            beta,
            mu,
            chol,
        })
    }

    /// Identity-covariance model in `R^d` with the coordinate basis.
    pub fn identity(dim: usize, v_star: DVector<f64>, noise_var: f64) -> Result<Self> {
        let space = WeightedSpace::standard(dim);
        let basis = Basis::new(space, DMatrix::identity(dim, dim))?;
        Self::new(DMatrix::identity(dim, dim), v_star, noise_var, basis)
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    pub fn basis(&self) -> &Basis {
        &self.basis
    }

    pub fn v_star(&self) -> &DVector<f64> {
        &self.v_star
    }

    pub fn ambient_dim(&self) -> usize {
        self.v_star.len()
    }

    pub fn subspace_dim(&self) -> usize {
        self.basis.dim()
    }

    /// The population instance `L = I - Sigma_X / beta`, `b = Sigma_X v* / beta`.
    pub fn instance(&self) -> Result<FixedPointInstance> {
        let dim = self.ambient_dim();
        let l = DMatrix::identity(dim, dim) - &self.sigma_x / self.beta;
        let b = &self.sigma_x * &self.v_star / self.beta;
        let space = WeightedSpace::standard(dim);
        FixedPointInstance::new(DenseOperator::new(space, l)?, b, self.basis.clone())
    }

    /// Seeded Gaussian-design observation stream in projected coordinates.
    pub fn stream(&self, seed: u64) -> RegressionStream {
        RegressionStream {
            model: self.clone(),
            phi_w: self.basis.coeff_matrix(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            seed,
        }
    }

    /// Moment constant `sigma_L = sigma_b = varsigma^2 / beta` implied by
    /// the Gaussian fourth-moment identity `E<u,X>^4 = 3 (u' Sigma u)^2`
    /// together with the noise second moment.
    pub fn moment_sigma(&self) -> f64 {
        let varsigma_sq = (3.0f64).sqrt() * self.beta;
        varsigma_sq.max(self.noise_var) / self.beta
    }

    /// Closed-form projected noise covariance at the projected solution:
    /// `Sigma* = cov(Phi b_1) + cov(Phi (L_1 - L) vbar)` for the Gaussian
    /// design.
    pub fn analytic_sigma_star(&self, vbar: &DVector<f64>) -> DMatrix<f64> {
        let phi_w = self.basis.coeff_matrix(); // d x D, equals Phi^T here
        let sv_star = &self.sigma_x * &self.v_star;
        let sv_bar = &self.sigma_x * vbar;
        let proj_cov = &phi_w * &self.sigma_x * phi_w.transpose();
        let a = &phi_w * &sv_star;
        let c = &phi_w * &sv_bar;
        let quad_star = self.v_star.dot(&sv_star);
        let quad_bar = vbar.dot(&sv_bar);
        let mut sigma = &a * a.transpose() + &c * c.transpose();
        sigma += &proj_cov * (quad_star + quad_bar + self.noise_var);
        sigma /= self.beta * self.beta;
        (&sigma + sigma.transpose()) * 0.5
    }
}

/// Stream of projected observations
/// `(I_d - (Phi X)(Phi X)^T / beta, Y (Phi X) / beta)`.
pub struct RegressionStream {
    model: RegressionModel,
    phi_w: DMatrix<f64>,
    rng: ChaCha8Rng,
    seed: u64,
}

impl RegressionStream {
    /// Draws one ambient design/response pair `(X, Y)`.
    pub fn draw_xy(&mut self) -> (DVector<f64>, f64) {
        let dim = self.model.ambient_dim();
        let z = DVector::from_fn(dim, |_, _| {
            <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut self.rng)
        });
        let x = self.model.chol.l() * z;
        let eps: f64 = if self.model.noise_var > 0.0 {
            let g: f64 = <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut self.rng);
            g * self.model.noise_var.sqrt()
        } else {
            0.0
        };
        let y = self.model.v_star.dot(&x) + eps;
        (x, y)
    }
}

impl ObservationStream for RegressionStream {
    fn dim(&self) -> usize {
        self.model.subspace_dim()
    }

    fn next_obs(&mut self) -> (DMatrix<f64>, DVector<f64>) {
        let (x, y) = self.draw_xy();
        let px = &self.phi_w * &x;
        let d = px.len();
        let mut m = DMatrix::identity(d, d);
        m.ger(-1.0 / self.model.beta, &px, &px, 1.0);
        let h = px * (y / self.model.beta);
        (m, h)
    }

    fn descriptor(&self) -> String {
        format!(
            "gaussian regression stream (D = {}, d = {}, seed = {})",
            self.model.ambient_dim(),
            self.model.subspace_dim(),
            self.seed
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixpoint::{
        approx_factor, opnorm, project_instance, solve_exact, solve_projected,
        verify_oracle_inequality,
    };
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn random_model(seed: u64, big_d: usize, d: usize, noise_var: f64) -> RegressionModel {
        let mut r = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(big_d, big_d, |_, _| {
            <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut r)
        });
        let sigma = &a * a.transpose() / big_d as f64 + DMatrix::identity(big_d, big_d) * 0.3;
        let v_star = DVector::from_fn(big_d, |_, _| {
            <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut r)
        });
        let space = WeightedSpace::standard(big_d);
        let raw = DMatrix::from_fn(big_d, d, |_, _| {
            <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut r)
        });
        let basis = Basis::orthonormalize(space, &raw).unwrap();
        RegressionModel::new(sigma, v_star, noise_var, basis).unwrap()
    }

    #[test]
    fn identity_covariance_collapses_to_zero_operator() {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let v_star = DVector::from_fn(4, |_, _| {
            <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut r)
        });
        let model = RegressionModel::identity(4, v_star.clone(), 1.0).unwrap();
        let inst = model.instance().unwrap();
        assert!(inst.operator().entries().amax() < 1e-14);
        assert!((inst.offset() - &v_star).amax() < 1e-14);
        assert!((solve_exact(&inst).unwrap() - &v_star).amax() < 1e-12);
    }

    #[test]
    fn solve_recovers_v_star_and_opnorm_bound() {
        for seed in 0..10 {
            let model = random_model(seed, 8, 3, 0.5);
            let inst = model.instance().unwrap();
            let v = solve_exact(&inst).unwrap();
            assert!(
                (v - model.v_star()).amax() < 1e-9 * (1.0 + model.v_star().amax()),
                "fixed point is not v*"
            );
            let norm = opnorm(inst.space(), inst.operator());
            assert!(norm <= 1.0 - model.mu() / model.beta() + 1e-10);
        }
    }

    #[test]
    fn projected_solution_solves_projected_normal_equations() {
        // E[(Pi X)(Pi X)^T] vbar = E[Y Pi X] in ambient coordinates
        let model = random_model(3, 7, 3, 0.0);
        let inst = model.instance().unwrap();
        let proj = project_instance(&inst);
        let vbar = model.basis().embed(&solve_projected(&proj).unwrap());
        let proj_mat = model.basis().vectors() * model.basis().coeff_matrix();
        let lhs = &proj_mat * &model.sigma_x * &proj_mat * &vbar;
        let rhs = &proj_mat * (&model.sigma_x * model.v_star());
        assert!(
            (lhs - rhs).amax() < 1e-9,
            "projected normal equations violated"
        );
    }

    #[test]
    fn alpha_matches_projected_covariance_closed_form() {
        // alpha(I - Sigma_proj/beta, 1 - mu/beta) = max_i (mu^2 + 2 beta (lam_i - mu)) / lam_i^2
        for seed in 0..5 {
            let model = random_model(100 + seed, 9, 4, 0.0);
            let inst = model.instance().unwrap();
            let proj = project_instance(&inst);
            let s = 1.0 - model.mu() / model.beta();
            let alpha = approx_factor(&proj.m, s).unwrap();
            let phi_w = model.basis().coeff_matrix();
            let sigma_proj = &phi_w * &model.sigma_x * phi_w.transpose();
            let closed = sigma_proj
                .symmetric_eigenvalues()
                .iter()
                .map(|&lam| {
                    (model.mu() * model.mu() + 2.0 * model.beta() * (lam - model.mu()))
                        / (lam * lam)
                })
                .fold(f64::NEG_INFINITY, f64::max);
            assert_abs_diff_eq!(alpha, closed, epsilon = 1e-8 * closed.abs().max(1.0));
        }
    }

    #[test]
    fn oracle_inequality_holds() {
        for seed in 0..10 {
            let model = random_model(200 + seed, 8, 3, 0.3);
            let inst = model.instance().unwrap();
            let rep = verify_oracle_inequality(&inst).unwrap();
            assert!(rep.ratio <= 1.0 + 1e-8, "ratio = {}", rep.ratio);
        }
    }

    #[test]
    fn stream_mean_matches_population() {
        let model = random_model(7, 6, 3, 0.4);
        let inst = model.instance().unwrap();
        let proj = project_instance(&inst);
        let mut stream = model.stream(42);
        let n = 60_000;
        let d = model.subspace_dim();
        let mut m_sum = DMatrix::<f64>::zeros(d, d);
        let mut m_sq = DMatrix::<f64>::zeros(d, d);
        let mut h_sum = DVector::<f64>::zeros(d);
        let mut h_sq = DVector::<f64>::zeros(d);
        for _ in 0..n {
            let (m, h) = stream.next_obs();
            for i in 0..d {
                for j in 0..d {
                    m_sum[(i, j)] += m[(i, j)];
                    m_sq[(i, j)] += m[(i, j)] * m[(i, j)];
                }
                h_sum[i] += h[i];
                h_sq[i] += h[i] * h[i];
            }
        }
        let nf = n as f64;
        for i in 0..d {
            for j in 0..d {
                let mean = m_sum[(i, j)] / nf;
                let sd = ((m_sq[(i, j)] / nf - mean * mean).max(0.0) / nf).sqrt();
                assert!(
                    (mean - proj.m[(i, j)]).abs() <= 4.0 * sd + 1e-12,
                    "M entry ({i},{j}) off: {mean} vs {}",
                    proj.m[(i, j)]
                );
            }
            let mean = h_sum[i] / nf;
            let sd = ((h_sq[i] / nf - mean * mean).max(0.0) / nf).sqrt();
            assert!(
                (mean - proj.h[i]).abs() <= 4.0 * sd + 1e-12,
                "h entry {i} off"
            );
        }
    }

    #[test]
    fn gaussian_fourth_moment_identity() {
        // E<u,X>^4 = 3 (u' Sigma u)^2 for the sampled design
        let model = random_model(11, 5, 2, 0.0);
        let mut stream = model.stream(5);
        let mut r = ChaCha8Rng::seed_from_u64(99);
        let u = {
            let v = DVector::from_fn(5, |_, _| {
                <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut r)
            });
            let n = v.norm();
            v / n
        };
        let n = 400_000;
        let mut acc = 0.0;
        let mut acc_sq = 0.0;
        for _ in 0..n {
            let (x, _) = stream.draw_xy();
            let t = u.dot(&x).powi(4);
            acc += t;
            acc_sq += t * t;
        }
        let mean = acc / n as f64;
        let sd = ((acc_sq / n as f64 - mean * mean).max(0.0) / n as f64).sqrt();
        let expected = 3.0 * (u.dot(&(&model.sigma_x * &u))).powi(2);
        assert!(
            (mean - expected).abs() <= 5.0 * sd + 1e-9,
            "fourth moment {mean} vs {expected} (sd {sd})"
        );
    }

    #[test]
    fn analytic_sigma_star_identity_design() {
        // identity design with v* = 0: Sigma* = noise_var * I
        let model = RegressionModel::identity(4, DVector::zeros(4), 1.7).unwrap();
        let sigma = model.analytic_sigma_star(&DVector::zeros(4));
        assert!((sigma - DMatrix::identity(4, 4) * 1.7).amax() < 1e-12);
    }

    #[test]
    fn analytic_sigma_star_matches_empirical() {
        let model = random_model(13, 5, 3, 0.8);
        let inst = model.instance().unwrap();
        let proj = project_instance(&inst);
        let vbar_coeffs = solve_projected(&proj).unwrap();
        let vbar = model.basis().embed(&vbar_coeffs);
        let analytic = model.analytic_sigma_star(&vbar);

        // empirical covariance of Phi b_i plus covariance of Phi (L_i - L) vbar,
        // accumulated separately to match the population definition
        let mut stream = model.stream(31);
        let n = 100_000;
        let d = model.subspace_dim();
        let phi_w = model.basis().coeff_matrix();
        let mut b_sum = DVector::<f64>::zeros(d);
        let mut b_outer = DMatrix::<f64>::zeros(d, d);
        let mut l_sum = DVector::<f64>::zeros(d);
        let mut l_outer = DMatrix::<f64>::zeros(d, d);
        for _ in 0..n {
            let (x, y) = stream.draw_xy();
            let pb = &phi_w * (&x * (y / model.beta()));
            let lv = &vbar - &x * (x.dot(&vbar) / model.beta());
            let pl = &phi_w * lv;
            b_outer.ger(1.0, &pb, &pb, 1.0);
            l_outer.ger(1.0, &pl, &pl, 1.0);
            b_sum += pb;
            l_sum += pl;
        }
        let nf = n as f64;
        let b_mean = &b_sum / nf;
        let l_mean = &l_sum / nf;
        let emp = (b_outer / nf - &b_mean * b_mean.transpose())
            + (l_outer / nf - &l_mean * l_mean.transpose());
        let rel = (&emp - &analytic).norm() / analytic.norm();
        assert!(rel < 0.2, "Sigma* relative error {rel} above 20%");
    }
}
