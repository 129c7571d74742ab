//! Linear stochastic approximation in projected coordinates with
//! Polyak-Ruppert averaging, the default step-size schedule, and the error
//! functionals the averaged iterate is compared against.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::fixpoint::ProjectedInstance;

/// Iterates are aborted once their Euclidean norm passes this guard.
pub const DIVERGENCE_GUARD: f64 = 1e12;

/// Default value of the schedule constant `c_0`.
pub const DEFAULT_C0: f64 = 24.0;

/// Seeded source of unbiased projected observations `(M_i, h_i)`.
///
/// Sample means of the observations converge to the population pair of the
/// generating instance; generators are responsible for testing that
/// statistically.
pub trait ObservationStream: Send {
    /// Projected dimension `d`.
    fn dim(&self) -> usize;

    /// Draws the next observation pair.
    fn next_obs(&mut self) -> (DMatrix<f64>, DVector<f64>);

    /// Human-readable provenance string.
    fn descriptor(&self) -> String;
}

/// A stream that repeats a fixed pair; the noiseless limit of the
/// observation model.
pub struct ConstantStream {
    pub m: DMatrix<f64>,
    pub h: DVector<f64>,
    descriptor: String,
}

impl ConstantStream {
    pub fn new(m: DMatrix<f64>, h: DVector<f64>) -> Self {
        Self {
            m,
            h,
            descriptor: "constant".into(),
        }
    }

    pub fn from_projected(proj: &ProjectedInstance, descriptor: &str) -> Self {
        Self {
            m: proj.m.clone(),
            h: proj.h.clone(),
            descriptor: descriptor.into(),
        }
    }
}

impl ObservationStream for ConstantStream {
    fn dim(&self) -> usize {
        self.h.len()
    }

    fn next_obs(&mut self) -> (DMatrix<f64>, DVector<f64>) {
        (self.m.clone(), self.h.clone())
    }

    fn descriptor(&self) -> String {
        self.descriptor.clone()
    }
}

/// Parameters of one stochastic approximation run.
#[derive(Debug, Clone)]
pub struct SaConfig {
    /// Stepsize `eta > 0`.
    pub stepsize: f64,
    /// Total number of iterations `n`.
    pub total: usize,
    /// Burn-in `n_0 < n`; the average runs over `t` in `(n_0, n]`.
    pub burn_in: usize,
    /// Starting iterate `theta_0`.
    pub initial: DVector<f64>,
    /// Keep every `record_every`-th iterate in the result.
    pub record_every: usize,
}

impl SaConfig {
    pub fn new(stepsize: f64, total: usize, burn_in: usize, initial: DVector<f64>) -> Result<Self> {
        let cfg = Self {
            stepsize,
            total,
            burn_in,
            initial,
            record_every: usize::MAX,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_record_every(mut self, record_every: usize) -> Result<Self> {
        self.record_every = record_every;
        self.validate()?;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        if !(self.stepsize > 0.0) || !self.stepsize.is_finite() {
            return Err(Error::InvalidParam(format!(
                "stepsize {} must be positive and finite",
                self.stepsize
            )));
        }
        if self.total == 0 || self.burn_in >= self.total {
            return Err(Error::InvalidParam(format!(
                "burn-in {} must be below total {}",
                self.burn_in, self.total
            )));
        }
        if self.record_every == 0 {
            return Err(Error::InvalidParam("record_every must be positive".into()));
        }
        Ok(())
    }
}

/// Stepsize/burn-in fragment produced by [`default_schedule`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Schedule {
    pub stepsize: f64,
    pub burn_in: usize,
}

/// The default schedule `eta = 1 / (c0 sigma_L sqrt(d n))`, `n_0 = floor(n/2)`.
pub fn default_schedule(sigma_l: f64, d: usize, n: usize, c0: f64) -> Result<Schedule> {
    if sigma_l <= 0.0 {
        return Err(Error::InvalidParam(format!(
            "sigma_L = {sigma_l} must be positive for the default schedule"
        )));
    }
    if c0 <= 0.0 || d == 0 || n == 0 {
        return Err(Error::InvalidParam(
            "default_schedule requires c0 > 0, d >= 1 and n >= 1".into(),
        ));
    }
    Ok(Schedule {
        stepsize: 1.0 / (c0 * sigma_l * ((d * n) as f64).sqrt()),
        burn_in: n / 2,
    })
}

/// Result of one stochastic approximation run.
#[derive(Debug, Clone, PartialEq)]
pub struct SaResult {
    /// Polyak-Ruppert average of the iterates with `t` in `(n_0, n]`.
    pub theta_hat: DVector<f64>,
    /// Last iterate `theta_n`.
    pub theta_final: DVector<f64>,
    /// Recorded `(t, theta_t)` pairs at multiples of `record_every`.
    pub recorded: Vec<(usize, DVector<f64>)>,
    /// Echo of the configuration that produced this result.
    pub stepsize: f64,
    pub total: usize,
    pub burn_in: usize,
}

/// Runs the projected stochastic approximation recursion
/// `theta_{t+1} = (1 - eta) theta_t + eta (M_{t+1} theta_t + h_{t+1})`
/// and returns the Polyak-Ruppert average over the post-burn-in window.
///
/// Deterministic for a deterministic stream; a non-finite or exploding
/// iterate aborts with the offending step index.
pub fn run_sa(stream: &mut dyn ObservationStream, cfg: &SaConfig) -> Result<SaResult> {
    cfg.validate()?;
    let d = stream.dim();
    if cfg.initial.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: cfg.initial.len(),
        });
    }
    let eta = cfg.stepsize;
    let mut theta = cfg.initial.clone();
    let mut sum = DVector::zeros(d);
    let mut recorded = Vec::new();
    for t in 1..=cfg.total {
        let (m, h) = stream.next_obs();
        theta = &theta * (1.0 - eta) + (&m * &theta + &h) * eta;
        let norm = theta.norm();
        if !norm.is_finite() || norm > DIVERGENCE_GUARD {
            return Err(Error::Diverged { step: t, norm });
        }
        if t > cfg.burn_in {
            sum += &theta;
        }
        if t % cfg.record_every == 0 {
            recorded.push((t, theta.clone()));
        }
    }
    let window = (cfg.total - cfg.burn_in) as f64;
    Ok(SaResult {
        theta_hat: sum / window,
        theta_final: theta,
        recorded,
        stepsize: cfg.stepsize,
        total: cfg.total,
        burn_in: cfg.burn_in,
    })
}

/// Leading statistical error
/// `eps_n = trace((I-M)^{-1} Sigma* (I-M)^{-T}) / n`.
pub fn stat_error(m: &DMatrix<f64>, sigma_star: &DMatrix<f64>, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::InvalidParam("stat_error needs n >= 1".into()));
    }
    let d = m.nrows();
    assert_eq!(m.ncols(), d, "stat_error: M must be square");
    assert_eq!(sigma_star.nrows(), d, "stat_error: Sigma* dimension");
    assert_eq!(sigma_star.ncols(), d, "stat_error: Sigma* dimension");
    let a = DMatrix::identity(d, d) - m;
    let lu = a.lu();
    let x = lu.solve(sigma_star).ok_or(Error::Singular {
        context: "stat_error: I - M",
    })?;
    let z_t = lu.solve(&x.transpose()).ok_or(Error::Singular {
        context: "stat_error: I - M (second solve)",
    })?;
    Ok(z_t.trace() / n as f64)
}

/// Higher-order error term
/// `H_n = sigma_L / (1-kappa)^3 (d/n)^{3/2} (|vbar|^2 sigma_L^2 + sigma_b^2)`.
pub fn hot_term(
    sigma_l: f64,
    sigma_b: f64,
    kappa: f64,
    d: usize,
    n: usize,
    vbar_norm: f64,
) -> Result<f64> {
    if kappa >= 1.0 {
        return Err(Error::KappaTooLarge { kappa });
    }
    if n == 0 {
        return Err(Error::InvalidParam("hot_term needs n >= 1".into()));
    }
    let ratio = d as f64 / n as f64;
    Ok(sigma_l / (1.0 - kappa).powi(3)
        * ratio.powf(1.5)
        * (vbar_norm * vbar_norm * sigma_l * sigma_l + sigma_b * sigma_b))
}

/// Assembles the oracle-inequality upper bound
/// `(1 + omega) alpha A + c (1 + 1/omega)(eps_n + H_n)`.
pub fn theorem1_bound(
    approx_err: f64,
    alpha: f64,
    eps_n: f64,
    hot: f64,
    omega: f64,
    c: f64,
) -> Result<f64> {
    if omega <= 0.0 {
        return Err(Error::InvalidParam(format!("omega = {omega} must be > 0")));
    }
    Ok((1.0 + omega) * alpha * approx_err + c * (1.0 + 1.0 / omega) * (eps_n + hot))
}

/// Empirical noise statistics of a stream around a projected instance.
#[derive(Debug, Clone)]
pub struct NoiseStats {
    pub sigma_l: f64,
    pub sigma_b: f64,
    /// Symmetrized, PSD-clipped covariance of `(h_i - mean) + (M_i - mean) vbar`.
    pub sigma_star: DMatrix<f64>,
}

/// Estimates `(sigma_L, sigma_b, Sigma*)` from `samples` draws.
///
/// `sigma_L` probes the coordinate directions plus `vbar/|vbar|`; this is a
/// finite probe of the unit sphere and therefore an under-approximation of
/// the worst direction.
pub fn estimate_noise(
    stream: &mut dyn ObservationStream,
    vbar: &DVector<f64>,
    samples: usize,
) -> Result<NoiseStats> {
    if samples < 2 {
        return Err(Error::InvalidParam("estimate_noise needs samples >= 2".into()));
    }
    let d = stream.dim();
    if vbar.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: vbar.len(),
        });
    }
    let mut probes: Vec<DVector<f64>> = (0..d)
        .map(|j| {
            let mut e = DVector::zeros(d);
            e[j] = 1.0;
            e
        })
        .collect();
    let vbar_norm = vbar.norm();
    if vbar_norm > 0.0 {
        probes.push(vbar / vbar_norm);
    }

    // single pass over moments shifted by the first observation, which
    // keeps the variance formula exact for deterministic streams: first
    // and second moments of (M_i u) per probe, of h_i, and of
    // z_i = h_i + M_i vbar for the covariance
    let (m_ref, h_ref) = stream.next_obs();
    let mu_ref: Vec<DVector<f64>> = probes.iter().map(|u| &m_ref * u).collect();
    let z_ref = &h_ref + &m_ref * vbar;
    let np = probes.len();
    let mut mu_sum = vec![DVector::<f64>::zeros(d); np];
    let mut mu_sq = vec![DVector::<f64>::zeros(d); np];
    let mut h_sum = DVector::<f64>::zeros(d);
    let mut h_sq = DVector::<f64>::zeros(d);
    let mut z_sum = DVector::<f64>::zeros(d);
    let mut z_outer = DMatrix::<f64>::zeros(d, d);
    for _ in 1..samples {
        let (m, h) = stream.next_obs();
        for (p, u) in probes.iter().enumerate() {
            let mu = &m * u - &mu_ref[p];
            for j in 0..d {
                mu_sum[p][j] += mu[j];
                mu_sq[p][j] += mu[j] * mu[j];
            }
        }
        let z = &h + &m * vbar - &z_ref;
        for j in 0..d {
            let hd = h[j] - h_ref[j];
            h_sum[j] += hd;
            h_sq[j] += hd * hd;
        }
        z_outer.ger(1.0, &z, &z, 1.0);
        z_sum += z;
    }
    let ns = samples as f64;
    let mut sigma_l_sq = 0.0f64;
    for p in 0..np {
        for j in 0..d {
            let mean = mu_sum[p][j] / ns;
            let var = (mu_sq[p][j] / ns - mean * mean).max(0.0);
            sigma_l_sq = sigma_l_sq.max(var);
        }
    }
    let mut sigma_b_sq = 0.0f64;
    for j in 0..d {
        let mean = h_sum[j] / ns;
        let var = (h_sq[j] / ns - mean * mean).max(0.0);
        sigma_b_sq = sigma_b_sq.max(var);
    }
    let z_mean = &z_sum / ns;
    let mut cov = z_outer / ns - &z_mean * z_mean.transpose();
    cov = (&cov + cov.transpose()) * 0.5;
    // clip negative eigenvalues so the estimate is PSD
    let mut eig = cov.symmetric_eigen();
    for v in eig.eigenvalues.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    let clipped = eig.recompose();
    let sigma_star = (&clipped + clipped.transpose()) * 0.5;
    Ok(NoiseStats {
        sigma_l: sigma_l_sq.sqrt(),
        sigma_b: sigma_b_sq.sqrt(),
        sigma_star,
    })
}

/// Monte-Carlo summary of `|theta_hat - target|^2` over independent seeds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MseSummary {
    pub mean: f64,
    pub stderr: f64,
}

/// Runs `repeats` independent seeded SA runs and reports the mean and
/// standard error of the squared distance to `target`.
///
/// Repeats execute in parallel; results are reduced in seed order so the
/// output is deterministic. A divergent run surfaces as an error rather
/// than being dropped.
pub fn mse_experiment<F>(
    stream_factory: F,
    cfg: &SaConfig,
    target: &DVector<f64>,
    repeats: usize,
) -> Result<MseSummary>
where
    F: Fn(u64) -> Box<dyn ObservationStream> + Sync,
{
    if repeats < 2 {
        return Err(Error::InvalidParam("mse_experiment needs repeats >= 2".into()));
    }
    let runs: Vec<Result<f64>> = (0..repeats as u64)
        .into_par_iter()
        .map(|seed| {
            let mut stream = stream_factory(seed);
            let result = run_sa(stream.as_mut(), cfg)?;
            Ok((result.theta_hat - target).norm_squared())
        })
        .collect();
    let mut values = Vec::with_capacity(repeats);
    for r in runs {
        values.push(r?);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    Ok(MseSummary {
        mean,
        stderr: (var / n).sqrt(),
    })
}
