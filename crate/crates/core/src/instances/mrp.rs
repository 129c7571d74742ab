//! Discounted Markov reward processes with linear features: random-graph
//! generators (simple random walk on a giant component), feature whitening,
//! the LSTD population solve, and the TD(0) observation stream.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::fixpoint::FixedPointInstance;
use crate::sa::ObservationStream;
use crate::wspace::{Basis, DenseOperator, WeightedSpace};

/// Minimal eigenvalue of the feature second-moment matrix below which the
/// features are treated as dependent on the support of the stationary law.
const FEATURE_RANK_TOL: f64 = 1e-8;

const FEATURE_RETRIES: usize = 16;

/// A finite discounted Markov reward process with a feature map attached.
#[derive(Debug, Clone)]
pub struct MarkovRewardProcess {
    transition: DMatrix<f64>,
    reward: DVector<f64>,
    gamma: f64,
    features: DMatrix<f64>,
    stationary: DVector<f64>,
}

impl MarkovRewardProcess {
    /// Validates row-stochasticity, stationarity of `xi`, and linear
    /// independence of the feature columns under `xi`.
    pub fn new(
        transition: DMatrix<f64>,
        reward: DVector<f64>,
        gamma: f64,
        features: DMatrix<f64>,
        stationary: DVector<f64>,
    ) -> Result<Self> {
        let n = transition.nrows();
        if transition.ncols() != n || reward.len() != n || features.nrows() != n
            || stationary.len() != n
        {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: transition
                    .ncols()
                    .max(reward.len())
                    .max(features.nrows())
                    .max(stationary.len()),
            });
        }
        if !(0.0 < gamma && gamma < 1.0) {
            return Err(Error::InvalidParam(format!(
                "discount factor {gamma} must lie in (0, 1)"
            )));
        }
        for i in 0..n {
            let row_sum: f64 = transition.row(i).iter().sum();
            if (row_sum - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidParam(format!(
                    "transition row {i} sums to {row_sum}, not 1"
                )));
            }
            if transition.row(i).iter().any(|&p| p < 0.0) {
                return Err(Error::InvalidParam(format!(
                    "transition row {i} has a negative entry"
                )));
            }
        }
        if stationary.iter().any(|&x| !(x > 0.0)) {
            return Err(Error::InvalidParam(
                "stationary distribution must be strictly positive".into(),
            ));
        }
        let mass: f64 = stationary.iter().sum();
        if (mass - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParam(format!(
                "stationary distribution sums to {mass}, not 1"
            )));
        }
        let drift = (transition.transpose() * &stationary - &stationary).amax();
        if drift > 1e-10 {
            return Err(Error::InvalidParam(format!(
                "xi P differs from xi by {drift:.3e}"
            )));
        }
        let mrp = Self {
            transition,
            reward,
            gamma,
            features,
            stationary,
        };
        let lmin = mrp.feature_lambda_min();
        if lmin <= FEATURE_RANK_TOL {
            return Err(Error::FeatureRankDeficient {
                retries: 0,
                lambda_min: lmin,
            });
        }
        Ok(mrp)
    }

    pub fn num_states(&self) -> usize {
        self.transition.nrows()
    }

    pub fn dim(&self) -> usize {
        self.features.ncols()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn transition(&self) -> &DMatrix<f64> {
        &self.transition
    }

    pub fn reward(&self) -> &DVector<f64> {
        &self.reward
    }

    pub fn features(&self) -> &DMatrix<f64> {
        &self.features
    }

    pub fn stationary(&self) -> &DVector<f64> {
        &self.stationary
    }

    /// Replaces the reward vector, keeping everything else.
    pub fn with_reward(mut self, reward: DVector<f64>) -> Result<Self> {
        if reward.len() != self.num_states() {
            return Err(Error::DimensionMismatch {
                expected: self.num_states(),
                got: reward.len(),
            });
        }
        self.reward = reward;
        Ok(self)
    }

    /// The weighted state space `L^2(S, xi)`.
    pub fn space(&self) -> Result<WeightedSpace> {
        WeightedSpace::new(self.stationary.clone())
    }

    /// Feature second-moment matrix `B = E_xi[psi psi^T]`.
    pub fn feature_second_moment(&self) -> DMatrix<f64> {
        let weighted = scale_rows(&self.features, &self.stationary);
        self.features.transpose() * weighted
    }

    fn feature_lambda_min(&self) -> f64 {
        self.feature_second_moment()
            .symmetric_eigenvalues()
            .iter()
            .fold(f64::INFINITY, |a, &x| a.min(x))
    }

    /// One-step feature cross moment `F = E_xi[psi(s) psi(s+)^T]`.
    pub fn feature_cross_moment(&self) -> DMatrix<f64> {
        let weighted = scale_rows(&self.features, &self.stationary);
        weighted.transpose() * &self.transition * &self.features
    }

    /// The value function `(I - gamma P)^{-1} r`.
    pub fn value_function(&self) -> Result<DVector<f64>> {
        let n = self.num_states();
        let a = DMatrix::identity(n, n) - &self.transition * self.gamma;
        a.lu().solve(&self.reward).ok_or(Error::Singular {
            context: "value function: I - gamma P",
        })
    }

    /// Population LSTD coefficients: `(B - gamma F) vartheta = E_xi[r psi]`.
    pub fn lstd_solution(&self) -> Result<DVector<f64>> {
        let b = self.feature_second_moment();
        let f = self.feature_cross_moment();
        let weighted = scale_rows(&self.features, &self.stationary);
        let g = weighted.transpose() * &self.reward;
        (b - f * self.gamma).lu().solve(&g).ok_or(Error::Singular {
            context: "LSTD normal equations",
        })
    }

    /// Ambient value of a coefficient vector: `s -> psi(s)^T vartheta`.
    pub fn evaluate(&self, vartheta: &DVector<f64>) -> DVector<f64> {
        &self.features * vartheta
    }

    /// Fixed-point instance `L = gamma P`, `b = r` over `L^2(S, xi)` with
    /// the whitened feature basis.
    pub fn ambient_instance(&self) -> Result<FixedPointInstance> {
        let space = self.space()?;
        let proj = mrp_projected(self)?;
        let basis = Basis::new(space.clone(), proj.whitened)?;
        let op = DenseOperator::new(space, &self.transition * self.gamma)?;
        FixedPointInstance::new(op, self.reward.clone(), basis)
    }

    /// TD(0) observation stream; `reward_noise` is the standard deviation
    /// of additive Gaussian noise on the observed rewards.
    pub fn stream(&self, reward_noise: f64, seed: u64) -> TdStream {
        td_stream(self, reward_noise, seed)
    }
}

/// Row scaling `diag(w) A`.
fn scale_rows(a: &DMatrix<f64>, w: &DVector<f64>) -> DMatrix<f64> {
    let mut out = a.clone();
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            out[(i, j)] *= w[i];
        }
    }
    out
}

/// Whitened projection of an MRP.
#[derive(Debug, Clone)]
pub struct MrpProjection {
    /// `M = gamma B^{-1/2} E_xi[psi(s) psi(s+)^T] B^{-1/2}`
    pub m: DMatrix<f64>,
    /// Feature second-moment matrix `B`
    pub b_mat: DMatrix<f64>,
    /// Symmetric inverse square root of `B`
    pub b_inv_sqrt: DMatrix<f64>,
    /// Whitened feature matrix `Phi = Psi B^{-1/2}` (rows are states)
    pub whitened: DMatrix<f64>,
    /// Projected offset `h_j = <phi_j, r>`
    pub h: DVector<f64>,
}

/// Whitens the features and forms the projected pair. The whitened
/// features must satisfy `E_xi[phi phi^T] = I` to `1e-8`.
pub fn mrp_projected(mrp: &MarkovRewardProcess) -> Result<MrpProjection> {
    let b = mrp.feature_second_moment();
    let mut eig = b.clone().symmetric_eigen();
    let lmin = eig.eigenvalues.iter().fold(f64::INFINITY, |a, &x| a.min(x));
    if lmin <= FEATURE_RANK_TOL {
        return Err(Error::FeatureRankDeficient {
            retries: 0,
            lambda_min: lmin,
        });
    }
    for v in eig.eigenvalues.iter_mut() {
        *v = 1.0 / v.sqrt();
    }
    let b_inv_sqrt = eig.recompose();
    let b_inv_sqrt = (&b_inv_sqrt + b_inv_sqrt.transpose()) * 0.5;
    let whitened = &mrp.features * &b_inv_sqrt;
    let weighted = scale_rows(&whitened, &mrp.stationary);
    let gram = whitened.transpose() * &weighted;
    let dev = (&gram - DMatrix::identity(mrp.dim(), mrp.dim())).amax();
    if dev > 1e-8 {
        return Err(Error::NotOrthonormal {
            deviation: dev,
            tol: 1e-8,
        });
    }
    let m = weighted.transpose() * &mrp.transition * &whitened * mrp.gamma;
    let h = weighted.transpose() * &mrp.reward;
    Ok(MrpProjection {
        m,
        b_mat: b,
        b_inv_sqrt,
        whitened,
        h,
    })
}

/// Random graph family used to generate MRP state spaces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraphKind {
    /// Edge between each pair independently with probability `a / N`.
    ErdosRenyi,
    /// Vertices are standard Gaussian points in `R^d`; edge when the
    /// Euclidean distance is at most `r`. The points double as features.
    Geometric,
}

/// Builds the simple-random-walk MRP on the giant component of a random
/// graph, with i.i.d. standard Gaussian vertex features, stationary law
/// `xi_v = deg(v) / (2 |E|)` and zero reward.
///
/// `param` is the mean-degree parameter `a` for Erdos-Renyi (requires
/// `a > 1`) and the connection radius for the geometric graph. When the
/// feature second-moment matrix on the giant component is rank-deficient,
/// features are redrawn with the next sub-seed, up to 16 times.
pub fn graph_mrp(
    kind: GraphKind,
    n: usize,
    d: usize,
    param: f64,
    gamma: f64,
    seed: u64,
) -> Result<MarkovRewardProcess> {
    if n == 0 || d == 0 {
        return Err(Error::InvalidParam("need n >= 1 and d >= 1".into()));
    }
    if !(0.0 < gamma && gamma < 1.0) {
        return Err(Error::InvalidParam(format!(
            "discount factor {gamma} must lie in (0, 1)"
        )));
    }
    if kind == GraphKind::ErdosRenyi && param <= 1.0 {
        return Err(Error::InvalidParam(format!(
            "Erdos-Renyi mean degree a = {param} must exceed 1 for a giant component"
        )));
    }
    if kind == GraphKind::Geometric && param <= 0.0 {
        return Err(Error::InvalidParam("geometric radius must be positive".into()));
    }

    let mut last_lambda = 0.0;
    for attempt in 0..FEATURE_RETRIES {
        let mut feat_rng = sub_rng(seed, 1 + attempt as u64);
        let features_all =
            DMatrix::from_fn(n, d, |_, _| {
                <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut feat_rng)
            });
        let adjacency = match kind {
            GraphKind::ErdosRenyi => {
                // the graph is fixed across feature retries
                let mut edge_rng = sub_rng(seed, 0);
                let p = (param / n as f64).min(1.0);
                let mut adj = vec![Vec::new(); n];
                for i in 0..n {
                    for j in (i + 1)..n {
                        if edge_rng.random::<f64>() < p {
                            adj[i].push(j);
                            adj[j].push(i);
                        }
                    }
                }
                adj
            }
            GraphKind::Geometric => {
                let mut adj = vec![Vec::new(); n];
                let r_sq = param * param;
                for i in 0..n {
                    for j in (i + 1)..n {
                        let mut dist_sq = 0.0;
                        for k in 0..d {
                            let diff = features_all[(i, k)] - features_all[(j, k)];
                            dist_sq += diff * diff;
                        }
                        if dist_sq <= r_sq {
                            adj[i].push(j);
                            adj[j].push(i);
                        }
                    }
                }
                adj
            }
        };

        let giant = giant_component(&adjacency);
        if giant.len() < d.max(2) {
            return Err(Error::GiantTooSmall {
                size: giant.len(),
                need: d.max(2),
            });
        }

        let size = giant.len();
        let mut index = vec![usize::MAX; n];
        for (new, &old) in giant.iter().enumerate() {
            index[old] = new;
        }
        let mut transition = DMatrix::zeros(size, size);
        let mut degree = vec![0usize; size];
        for (new, &old) in giant.iter().enumerate() {
            degree[new] = adjacency[old].len();
            let inv_deg = 1.0 / adjacency[old].len() as f64;
            for &nb in &adjacency[old] {
                transition[(new, index[nb])] = inv_deg;
            }
        }
        let two_edges: usize = degree.iter().sum();
        let stationary =
            DVector::from_fn(size, |v, _| degree[v] as f64 / two_edges as f64);
        let features = DMatrix::from_fn(size, d, |v, k| features_all[(giant[v], k)]);

        let candidate = MarkovRewardProcess {
            transition,
            reward: DVector::zeros(size),
            gamma,
            features,
            stationary,
        };
        last_lambda = candidate.feature_lambda_min();
        if last_lambda > FEATURE_RANK_TOL {
            return Ok(candidate);
        }
    }
    Err(Error::FeatureRankDeficient {
        retries: FEATURE_RETRIES,
        lambda_min: last_lambda,
    })
}

/// Largest connected component, vertices in ascending label order. Among
/// equal-size components the one whose smallest vertex label is smallest
/// wins.
fn giant_component(adjacency: &[Vec<usize>]) -> Vec<usize> {
    let n = adjacency.len();
    let mut visited = vec![false; n];
    let mut best: Vec<usize> = Vec::new();
    let mut queue = std::collections::VecDeque::new();
    for start in 0..n {
        if visited[start] {
            continue;
        }
        let mut component = Vec::new();
        visited[start] = true;
        queue.push_back(start);
        while let Some(v) = queue.pop_front() {
            component.push(v);
            for &w in &adjacency[v] {
                if !visited[w] {
                    visited[w] = true;
                    queue.push_back(w);
                }
            }
        }
        // scanning starts in ascending order, so the first component of a
        // given size has the smallest minimum label
        if component.len() > best.len() {
            best = component;
        }
    }
    best.sort_unstable();
    best
}

fn sub_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// TD(0) observation stream over i.i.d. tuples `(s, s+, R)` with
/// `s ~ xi`, `s+ ~ P(s, .)` and `E[R | s] = r(s)`.
pub struct TdStream {
    whitened: DMatrix<f64>,
    features: DMatrix<f64>,
    reward: DVector<f64>,
    gamma: f64,
    reward_noise: f64,
    xi_cdf: Vec<f64>,
    row_cdfs: Vec<Vec<f64>>,
    rng: ChaCha8Rng,
    seed: u64,
}

/// Builds the TD(0) stream for an MRP; projected observations are the
/// whitened pairs `M_i = I - phi phi^T + gamma phi phi+^T`, `h_i = R phi`.
pub fn td_stream(mrp: &MarkovRewardProcess, reward_noise: f64, seed: u64) -> TdStream {
    let proj = mrp_projected(mrp).expect("whitening failed; construct MRPs through validated paths");
    let n = mrp.num_states();
    let xi_cdf = cumulative(mrp.stationary().iter().copied());
    let row_cdfs = (0..n)
        .map(|i| cumulative(mrp.transition().row(i).iter().copied()))
        .collect();
    TdStream {
        whitened: proj.whitened,
        features: mrp.features().clone(),
        reward: mrp.reward().clone(),
        gamma: mrp.gamma(),
        reward_noise,
        xi_cdf,
        row_cdfs,
        rng: ChaCha8Rng::seed_from_u64(seed),
        seed,
    }
}

fn cumulative(probs: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut acc = 0.0;
    let mut out: Vec<f64> = probs
        .map(|p| {
            acc += p;
            acc
        })
        .collect();
    if let Some(last) = out.last_mut() {
        *last = 1.0;
    }
    out
}

fn sample_cdf(cdf: &[f64], u: f64) -> usize {
    match cdf.binary_search_by(|probe| probe.partial_cmp(&u).unwrap()) {
        Ok(i) => (i + 1).min(cdf.len() - 1),
        Err(i) => i.min(cdf.len() - 1),
    }
}

impl TdStream {
    /// Draws one raw observation tuple `(s, s_plus, R)`.
    pub fn draw_tuple(&mut self) -> (usize, usize, f64) {
        let s = sample_cdf(&self.xi_cdf, self.rng.random());
        let s_plus = sample_cdf(&self.row_cdfs[s], self.rng.random());
        let mut reward = self.reward[s];
        if self.reward_noise > 0.0 {
            let g: f64 = <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut self.rng);
            reward += self.reward_noise * g;
        }
        (s, s_plus, reward)
    }

    /// Raw feature vector `psi(s)`.
    pub fn raw_feature(&self, s: usize) -> DVector<f64> {
        self.features.row(s).transpose()
    }

    /// Whitened feature vector `phi(s)`.
    pub fn whitened_feature(&self, s: usize) -> DVector<f64> {
        self.whitened.row(s).transpose()
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

impl ObservationStream for TdStream {
    fn dim(&self) -> usize {
        self.whitened.ncols()
    }

    fn next_obs(&mut self) -> (DMatrix<f64>, DVector<f64>) {
        let (s, s_plus, reward) = self.draw_tuple();
        let phi = self.whitened_feature(s);
        let phi_plus = self.whitened_feature(s_plus);
        let d = phi.len();
        let mut m = DMatrix::identity(d, d);
        m.ger(-1.0, &phi, &phi, 1.0);
        m.ger(self.gamma, &phi, &phi_plus, 1.0);
        let h = &phi * reward;
        (m, h)
    }

    fn descriptor(&self) -> String {
        format!(
            "TD(0) stream ({} states, d = {}, seed = {})",
            self.whitened.nrows(),
            self.dim(),
            self.seed
        )
    }
}

/// Polyak-Ruppert averaged TD(0) in the raw feature coordinates:
/// `vartheta_{t+1} = vartheta_t - eta psi(s) ((psi(s) - gamma psi(s+))^T vartheta_t - R)`.
#[derive(Debug, Clone)]
pub struct Td0Result {
    pub vartheta_hat: DVector<f64>,
    pub vartheta_final: DVector<f64>,
}

pub fn td0_run(
    stream: &mut TdStream,
    stepsize: f64,
    total: usize,
    burn_in: usize,
    initial: &DVector<f64>,
) -> Result<Td0Result> {
    if !(stepsize > 0.0) || total == 0 || burn_in >= total {
        return Err(Error::InvalidParam(
            "td0_run needs a positive stepsize and burn_in < total".into(),
        ));
    }
    let d = stream.dim();
    if initial.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: initial.len(),
        });
    }
    let mut vartheta = initial.clone();
    let mut sum = DVector::zeros(d);
    for t in 1..=total {
        let (s, s_plus, reward) = stream.draw_tuple();
        let psi = stream.raw_feature(s);
        let psi_plus = stream.raw_feature(s_plus);
        let temporal_diff = (&psi - &psi_plus * stream.gamma).dot(&vartheta) - reward;
        vartheta -= &psi * (stepsize * temporal_diff);
        let norm = vartheta.norm();
        if !norm.is_finite() || norm > crate::sa::DIVERGENCE_GUARD {
            return Err(Error::Diverged { step: t, norm });
        }
        if t > burn_in {
            sum += &vartheta;
        }
    }
    Ok(Td0Result {
        vartheta_hat: sum / (total - burn_in) as f64,
        vartheta_final: vartheta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixpoint::{project_instance, solve_projected};
    use approx::assert_abs_diff_eq;

    fn chain_mrp(seed: u64, n: usize, d: usize) -> MarkovRewardProcess {
        graph_mrp(GraphKind::ErdosRenyi, n, d, 3.0, 0.9, seed).unwrap()
    }

    #[test]
    fn complete_graph_three_vertices() {
        let mrp = chain_mrp(0, 3, 1);
        assert_eq!(mrp.num_states(), 3);
        for i in 0..3 {
            for j in 0..3 {
                let expected = if i == j { 0.0 } else { 0.5 };
                assert_abs_diff_eq!(mrp.transition()[(i, j)], expected, epsilon = 1e-15);
            }
            assert_abs_diff_eq!(mrp.stationary()[i], 1.0 / 3.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn stationary_is_degree_over_twice_edges() {
        let mrp = chain_mrp(3, 60, 3);
        let p = mrp.transition();
        let xi = mrp.stationary();
        let drift = (p.transpose() * xi - xi).amax();
        assert!(drift < 1e-12, "xi P != xi, drift {drift}");
    }

    #[test]
    fn giant_component_prefers_smallest_label_on_ties() {
        // two disjoint edges: components {0,1} and {2,3}
        let adj = vec![vec![1], vec![0], vec![3], vec![2]];
        assert_eq!(giant_component(&adj), vec![0, 1]);
    }

    #[test]
    fn single_state_mrp_projects_to_gamma() {
        let transition = DMatrix::from_element(1, 1, 1.0);
        let features = DMatrix::from_element(1, 1, 1.0);
        let mrp = MarkovRewardProcess::new(
            transition,
            DVector::from_element(1, 0.3),
            0.7,
            features,
            DVector::from_element(1, 1.0),
        )
        .unwrap();
        let proj = mrp_projected(&mrp).unwrap();
        assert_abs_diff_eq!(proj.m[(0, 0)], 0.7, epsilon = 1e-14);
    }

    #[test]
    fn orthonormal_features_leave_b_identity() {
        let mrp = chain_mrp(5, 40, 3);
        let proj = mrp_projected(&mrp).unwrap();
        let gram = {
            let weighted = scale_rows(&proj.whitened, mrp.stationary());
            proj.whitened.transpose() * weighted
        };
        assert!((gram - DMatrix::identity(3, 3)).amax() < 1e-10);
    }

    #[test]
    fn whitened_projection_matches_weighted_space_projection() {
        // two paths to M: whitened moments vs project_instance on L = gamma P
        let mrp = chain_mrp(7, 50, 4).with_reward_random(77);
        let proj = mrp_projected(&mrp).unwrap();
        let inst = mrp.ambient_instance().unwrap();
        let via_space = project_instance(&inst);
        assert!(
            (&proj.m - &via_space.m).amax() < 1e-8,
            "two-path M mismatch"
        );
        assert!((&proj.h - &via_space.h).amax() < 1e-8);
    }

    impl MarkovRewardProcess {
        fn with_reward_random(self, seed: u64) -> Self {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n = self.num_states();
            let r = DVector::from_fn(n, |_, _| {
                <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng)
            });
            self.with_reward(r).unwrap()
        }
    }

    #[test]
    fn lstd_solution_agrees_with_projected_solve() {
        let mrp = chain_mrp(9, 45, 3).with_reward_random(99);
        let vartheta = mrp.lstd_solution().unwrap();
        let proj = mrp_projected(&mrp).unwrap();
        let theta = solve_projected(&crate::fixpoint::ProjectedInstance::new(
            proj.m.clone(),
            proj.h.clone(),
        )
        .unwrap())
        .unwrap();
        let v_raw = mrp.evaluate(&vartheta);
        let v_whitened = &proj.whitened * theta;
        assert!(
            (v_raw - v_whitened).amax() < 1e-9,
            "raw LSTD and whitened solve disagree"
        );
    }

    #[test]
    fn value_function_solves_bellman() {
        let mrp = chain_mrp(11, 30, 2).with_reward_random(11);
        let v = mrp.value_function().unwrap();
        let rhs = mrp.reward() + mrp.transition() * &v * mrp.gamma();
        assert!((rhs - &v).amax() < 1e-10);
    }

    #[test]
    fn rejects_corrupted_transition_row() {
        let mrp = chain_mrp(13, 20, 2);
        let mut bad = mrp.transition().clone();
        bad[(0, 0)] -= 0.01; // row sum 0.99
        let out = MarkovRewardProcess::new(
            bad,
            mrp.reward().clone(),
            mrp.gamma(),
            mrp.features().clone(),
            mrp.stationary().clone(),
        );
        assert!(matches!(out, Err(Error::InvalidParam(_))));
    }

    #[test]
    fn er_requires_supercritical_degree() {
        assert!(graph_mrp(GraphKind::ErdosRenyi, 50, 2, 1.0, 0.9, 0).is_err());
    }

    #[test]
    fn stream_moments_match_population() {
        let mrp = chain_mrp(15, 40, 3).with_reward_random(15);
        let proj = mrp_projected(&mrp).unwrap();
        let mut stream = mrp.stream(0.0, 5);
        let n = 100_000;
        let d = 3;
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
                    (mean - proj.m[(i, j)]).abs() <= 4.0 * sd + 1e-10,
                    "M moment ({i},{j}) off"
                );
            }
            let mean = h_sum[i] / nf;
            let sd = ((h_sq[i] / nf - mean * mean).max(0.0) / nf).sqrt();
            assert!((mean - proj.h[i]).abs() <= 4.0 * sd + 1e-10, "h moment {i} off");
        }
    }

    #[test]
    fn deterministic_single_state_stream_is_constant() {
        let transition = DMatrix::from_element(1, 1, 1.0);
        let features = DMatrix::from_element(1, 1, 2.0);
        let mrp = MarkovRewardProcess::new(
            transition,
            DVector::from_element(1, 1.0),
            0.5,
            features,
            DVector::from_element(1, 1.0),
        )
        .unwrap();
        let mut stream = mrp.stream(0.0, 0);
        let (m0, h0) = stream.next_obs();
        for _ in 0..5 {
            let (m, h) = stream.next_obs();
            assert_eq!(m, m0);
            assert_eq!(h, h0);
        }
    }

    #[test]
    fn td0_matches_lstd_on_moderate_sample() {
        let mrp = chain_mrp(17, 25, 2).with_reward_random(17);
        let vartheta_bar = mrp.lstd_solution().unwrap();
        let mut stream = mrp.stream(0.0, 3);
        let out = td0_run(&mut stream, 5e-3, 400_000, 200_000, &DVector::zeros(2)).unwrap();
        let space = mrp.space().unwrap();
        let err = mrp.evaluate(&(out.vartheta_hat.clone() - &vartheta_bar));
        assert!(
            space.norm(&err) < 0.05,
            "averaged TD far from LSTD: {}",
            space.norm(&err)
        );
    }
}
