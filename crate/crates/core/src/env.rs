//! Finite episodic MDPs with bilinear factored transitions.
//!
//! Instances are built by an anchor-mixture construction: every `phi(s,a)` is
//! a point on the probability simplex over `d` anchors, every anchor row of a
//! core is a convex combination of `r` per-task distributions over states
//! (mixing weights shared across tasks), and `psi` is the indicator basis. Each
//! core is then exactly row-stochastic under any simplex feature and all cores
//! share one rank-`r` column space. The orthonormal shared factor is read off
//! the stacked cores by a thin SVD.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngExt};
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::rng::{substream, Purpose};

/// Stochasticity tolerance on row sums of generated kernels.
pub const ROW_SUM_TOL: f64 = 1e-9;
/// Smallest entry a valid kernel may carry (rounding noise only).
pub const MIN_ENTRY: f64 = -1e-12;
/// Row sum deviation above which sampling refuses the distribution.
pub const SAMPLE_SUM_TOL: f64 = 1e-6;
const MAX_GENERATION_ATTEMPTS: usize = 10;
/// Largest state count for which `C_psi` is measured by exhaustive sign enumeration.
const EXACT_C_PSI_MAX_STATES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StartRule {
    /// Every episode of every task starts in state 0.
    #[default]
    Fixed,
    /// Start states drawn uniformly from a seeded per-(task, episode) stream.
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InstanceConfig {
    pub n_states: usize,
    pub n_actions: usize,
    pub d: usize,
    pub d_prime: usize,
    pub r: usize,
    pub tasks: usize,
    pub seed: u64,
    /// How many anchors each `phi(s,a)` mixes.
    #[serde(default = "default_anchors_per_row")]
    pub anchors_per_row: usize,
    #[serde(default)]
    pub start: StartRule,
}

fn default_anchors_per_row() -> usize {
    2
}

impl InstanceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_states == 0 || self.n_actions == 0 {
            return param("n_states and n_actions must be positive");
        }
        if self.d == 0 || self.r == 0 || self.tasks == 0 {
            return param("d, r and tasks must be positive");
        }
        if self.d_prime != self.n_states {
            return param(format!(
                "indicator psi requires d_prime = n_states ({} != {})",
                self.d_prime, self.n_states
            ));
        }
        if self.r > self.d.min(self.d_prime) {
            return param(format!("r = {} exceeds min(d, d_prime) = {}", self.r, self.d.min(self.d_prime)));
        }
        if self.anchors_per_row == 0 || self.anchors_per_row > self.d {
            return param("anchors_per_row must lie in 1..=d");
        }
        if self.tasks >= 1 << 16 {
            return param("too many tasks");
        }
        Ok(())
    }
}

/// The embeddings `phi`, `psi` with their bounds and regularity constants.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMaps {
    n_states: usize,
    n_actions: usize,
    /// Row `s * n_actions + a` is `phi(s, a)`.
    phi: DMatrix<f64>,
    /// Row `s` is `psi(s)`.
    psi: DMatrix<f64>,
    pub l_phi: f64,
    pub l_psi: f64,
    k_psi: DMatrix<f64>,
    k_psi_inv: DMatrix<f64>,
    /// Upper bound on `||Psi^T v||_2 / ||v||_inf`.
    pub c_psi: f64,
    /// `||Psi K_psi^{-1}||_{2,inf}` (largest row norm).
    pub c_psi_prime: f64,
}

impl FeatureMaps {
    /// Builds feature maps, checking the declared norm bounds and that
    /// `K_psi` is positive definite.
    pub fn new(
        n_states: usize,
        n_actions: usize,
        phi: DMatrix<f64>,
        psi: DMatrix<f64>,
        l_phi: f64,
        l_psi: f64,
    ) -> Result<Self> {
        if phi.nrows() != n_states * n_actions || psi.nrows() != n_states {
            return param("feature matrix shapes do not match the state/action counts");
        }
        if max_row_norm(&phi) > l_phi * (1.0 + 1e-12) {
            return param("a phi row exceeds its declared norm bound");
        }
        if max_row_norm(&psi) > l_psi * (1.0 + 1e-12) {
            return param("a psi row exceeds its declared norm bound");
        }
        let k_psi = psi.transpose() * &psi;
        let min_eig = k_psi.clone().symmetric_eigen().eigenvalues.min();
        if !(min_eig >= 1e-8) {
            return param(format!("K_psi is not positive definite (min eigenvalue {min_eig:e})"));
        }
        let k_psi_inv = k_psi
            .clone()
            .cholesky()
            .ok_or_else(|| Error::Numerical("K_psi factorization".into()))?
            .inverse();
        let c_psi = measure_c_psi(&psi);
        let c_psi_prime = max_row_norm(&(&psi * &k_psi_inv));
        Ok(Self { n_states, n_actions, phi, psi, l_phi, l_psi, k_psi, k_psi_inv, c_psi, c_psi_prime })
    }

    pub fn indicator_psi(n_states: usize, n_actions: usize, phi: DMatrix<f64>, l_phi: f64) -> Result<Self> {
        Self::new(n_states, n_actions, phi, DMatrix::identity(n_states, n_states), l_phi, 1.0)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn d(&self) -> usize {
        self.phi.ncols()
    }

    pub fn d_prime(&self) -> usize {
        self.psi.ncols()
    }

    pub fn phi_matrix(&self) -> &DMatrix<f64> {
        &self.phi
    }

    pub fn psi_matrix(&self) -> &DMatrix<f64> {
        &self.psi
    }

    pub fn k_psi(&self) -> &DMatrix<f64> {
        &self.k_psi
    }

    pub fn k_psi_inv(&self) -> &DMatrix<f64> {
        &self.k_psi_inv
    }

    /// Spectral norm of `K_psi^{-1}`.
    pub fn k_psi_inv_norm(&self) -> f64 {
        self.k_psi_inv.clone().symmetric_eigen().eigenvalues.max()
    }

    pub fn sa_index(&self, s: usize, a: usize) -> usize {
        s * self.n_actions + a
    }

    pub fn phi(&self, s: usize, a: usize) -> DVector<f64> {
        self.phi.row(self.sa_index(s, a)).transpose()
    }

    /// Regression target `K_psi^{-1} psi(s')`.
    pub fn psi_tilde(&self, next_state: usize) -> DVector<f64> {
        &self.k_psi_inv * self.psi.row(next_state).transpose()
    }

    /// Features `phi~(s,a) = B^T phi(s,a)` of dimension `B.ncols()`.
    pub fn projected(&self, b: &DMatrix<f64>) -> Result<Self> {
        if b.nrows() != self.d() {
            return param("projection matrix has the wrong number of rows");
        }
        let phi = &self.phi * b;
        let measured = max_row_norm(&phi);
        let bound = if measured <= self.l_phi { self.l_phi } else { measured };
        Self::new(self.n_states, self.n_actions, phi, self.psi.clone(), bound, self.l_psi)
    }
}

fn max_row_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter().map(|r| r.norm()).fold(0.0, f64::max)
}

/// `sup_v ||Psi^T v||_2 / ||v||_inf`. The supremum of a convex function over
/// the unit box sits at a vertex, so small state spaces are enumerated
/// exactly; larger ones get the bound `sigma_max(Psi) sqrt(|S|)`.
fn measure_c_psi(psi: &DMatrix<f64>) -> f64 {
    let n = psi.nrows();
    if n <= EXACT_C_PSI_MAX_STATES {
        let mut best: f64 = 0.0;
        // v and -v give the same norm: fix the sign of the last coordinate.
        for mask in 0u32..(1u32 << (n - 1)) {
            let mut acc = psi.row(n - 1).transpose();
            for s in 0..n - 1 {
                let sign = if mask >> s & 1 == 1 { -1.0 } else { 1.0 };
                acc += psi.row(s).transpose() * sign;
            }
            best = best.max(acc.norm());
        }
        best
    } else {
        let smax = psi.clone().svd(false, false).singular_values.max();
        smax * (n as f64).sqrt()
    }
}

/// A `d x d'` core inducing the kernel `Phi M Psi^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionCore {
    pub m: DMatrix<f64>,
    pub s_bound: f64,
}

impl TransitionCore {
    pub fn max_column_norm(&self) -> f64 {
        self.m.column_iter().map(|c| c.norm()).fold(0.0, f64::max)
    }

    /// Checks the column-norm cap and stochasticity of every induced row.
    pub fn validate(&self, features: &FeatureMaps) -> Result<()> {
        if self.max_column_norm() > self.s_bound * (1.0 + 1e-12) {
            return Err(Error::Generation("core column exceeds S bound".into()));
        }
        let p = transition_matrix(self, features);
        let (dev, min) = stochasticity_defect(&p);
        if dev > ROW_SUM_TOL || min < MIN_ENTRY {
            return Err(Error::Generation(format!(
                "kernel not stochastic: max row-sum deviation {dev:e}, min entry {min:e}"
            )));
        }
        Ok(())
    }
}

/// `(max |row sum - 1|, min entry)` of a kernel.
pub fn stochasticity_defect(p: &DMatrix<f64>) -> (f64, f64) {
    let dev = p.row_iter().map(|r| (r.sum() - 1.0).abs()).fold(0.0, f64::max);
    (dev, p.min())
}

/// `Phi M Psi^T`, one row per `(s, a)`. Works on raw matrices; validity is checked separately.
pub fn transition_matrix(core: &TransitionCore, features: &FeatureMaps) -> DMatrix<f64> {
    features.phi_matrix() * &core.m * features.psi_matrix().transpose()
}

/// Draws from a (nearly) stochastic row. Negative rounding noise is clamped
/// to zero and the row renormalized.
pub fn sample_from_row<R: Rng + ?Sized>(row: &[f64], rng: &mut R) -> Result<usize> {
    let total: f64 = row.iter().map(|&p| p.max(0.0)).sum();
    if !((total - 1.0).abs() <= SAMPLE_SUM_TOL) {
        return Err(Error::Environment(format!("transition row sums to {total}")));
    }
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in row.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = i;
            if u < acc {
                return Ok(i);
            }
        }
    }
    Ok(last)
}

pub fn sample_step<R: Rng + ?Sized>(
    core: &TransitionCore,
    features: &FeatureMaps,
    s: usize,
    a: usize,
    rng: &mut R,
) -> Result<usize> {
    let row = features.phi(s, a).transpose() * &core.m * features.psi_matrix().transpose();
    sample_from_row(row.as_slice(), rng)
}

/// Value tables for `h = 0..H` (0-based); `v[H]` is the zero terminal vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Values {
    pub v: Vec<DVector<f64>>,
    pub q: Vec<DMatrix<f64>>,
}

impl Values {
    pub fn horizon(&self) -> usize {
        self.q.len()
    }

    /// Greedy action table per step, ties to the lowest index.
    pub fn greedy_policy(&self) -> Policy {
        Policy { actions: self.q.iter().map(|q| (0..q.nrows()).map(|s| argmax_row(q, s)).collect()).collect() }
    }
}

pub fn argmax_row(q: &DMatrix<f64>, s: usize) -> usize {
    let mut best = 0;
    for a in 1..q.ncols() {
        if q[(s, a)] > q[(s, best)] {
            best = a;
        }
    }
    best
}

/// Deterministic non-stationary policy: `actions[h][s]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Policy {
    pub actions: Vec<Vec<usize>>,
}

/// A task with its kernel materialized, used on hot paths.
#[derive(Debug, Clone)]
pub struct TaskMdp {
    pub n_states: usize,
    pub n_actions: usize,
    /// Row `s * n_actions + a` is `P(. | s, a)`.
    pub kernel: DMatrix<f64>,
    /// `rewards[(s, a)]` in `[0, 1]`.
    pub rewards: DMatrix<f64>,
}

impl TaskMdp {
    pub fn new(core: &TransitionCore, features: &FeatureMaps, rewards: DMatrix<f64>) -> Self {
        Self {
            n_states: features.n_states(),
            n_actions: features.n_actions(),
            kernel: transition_matrix(core, features),
            rewards,
        }
    }

    /// `P(. | s, a)^T v`.
    pub fn expect(&self, s: usize, a: usize, v: &DVector<f64>) -> f64 {
        self.kernel.row(s * self.n_actions + a).dot(&v.transpose())
    }

    pub fn sample<R: Rng + ?Sized>(&self, s: usize, a: usize, rng: &mut R) -> Result<usize> {
        let row = self.kernel.row(s * self.n_actions + a);
        let buf: Vec<f64> = row.iter().copied().collect();
        sample_from_row(&buf, rng)
    }

    /// Optimal values by backward induction on the true kernel.
    pub fn exact_values(&self, horizon: usize) -> Values {
        let (ns, na) = (self.n_states, self.n_actions);
        let mut v = vec![DVector::zeros(ns); horizon + 1];
        let mut q = vec![DMatrix::zeros(ns, na); horizon];
        for h in (0..horizon).rev() {
            let next = self.kernel.clone() * &v[h + 1];
            for s in 0..ns {
                for a in 0..na {
                    q[h][(s, a)] = self.rewards[(s, a)] + next[s * na + a];
                }
                v[h][s] = q[h].row(s).max();
            }
        }
        Values { v, q }
    }

    /// Exact value of a deterministic policy; returns `V_1` (all states).
    pub fn evaluate_policy(&self, policy: &Policy) -> DVector<f64> {
        self.evaluate_policy_all(policy).swap_remove(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub state: usize,
    pub action: usize,
    pub next_state: usize,
    pub reward: f64,
}

/// One trajectory of length `H` in one task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub task: usize,
    pub episode: usize,
    pub start_state: usize,
    pub steps: Vec<Step>,
}

impl TaskMdp {
    /// Runs `policy` from `start` for `policy.actions.len()` steps.
    pub fn rollout<R: Rng + ?Sized>(
        &self,
        policy: &Policy,
        start: usize,
        task: usize,
        episode: usize,
        rng: &mut R,
    ) -> Result<EpisodeRecord> {
        let mut steps = Vec::with_capacity(policy.actions.len());
        let mut s = start;
        for table in &policy.actions {
            let a = table[s];
            let next = self.sample(s, a, rng)?;
            steps.push(Step { state: s, action: a, next_state: next, reward: self.rewards[(s, a)] });
            s = next;
        }
        Ok(EpisodeRecord { task, episode, start_state: start, steps })
    }

    /// Exact values of a deterministic policy for every step; entry `H` is zero.
    pub fn evaluate_policy_all(&self, policy: &Policy) -> Vec<DVector<f64>> {
        let ns = self.n_states;
        let horizon = policy.actions.len();
        let mut out = vec![DVector::zeros(ns); horizon + 1];
        for h in (0..horizon).rev() {
            for s in 0..ns {
                let a = policy.actions[h][s];
                out[h][s] = self.rewards[(s, a)] + self.expect(s, a, &out[h + 1]);
            }
        }
        out
    }
}

pub fn exact_values(core: &TransitionCore, features: &FeatureMaps, rewards: &DMatrix<f64>, horizon: usize) -> Values {
    TaskMdp::new(core, features, rewards.clone()).exact_values(horizon)
}

/// A family of tasks whose cores share one orthonormal left factor.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskFamily {
    pub config: InstanceConfig,
    pub b_star: DMatrix<f64>,
    pub a_star: Vec<DMatrix<f64>>,
    pub cores: Vec<TransitionCore>,
    pub rewards: Vec<DMatrix<f64>>,
    /// One entry when features are shared, otherwise one per task.
    pub features: Vec<FeatureMaps>,
}

impl TaskFamily {
    pub fn tasks(&self) -> usize {
        self.cores.len()
    }

    pub fn features_for(&self, task: usize) -> &FeatureMaps {
        if self.features.len() == 1 {
            &self.features[0]
        } else {
            &self.features[task]
        }
    }

    pub fn mdp(&self, task: usize) -> TaskMdp {
        TaskMdp::new(&self.cores[task], self.features_for(task), self.rewards[task].clone())
    }

    pub fn start_state(&self, seed: u64, task: usize, episode: usize) -> usize {
        match self.config.start {
            StartRule::Fixed => 0,
            StartRule::Uniform => {
                substream(seed, Purpose::StartState, task, episode).random_range(0..self.config.n_states)
            }
        }
    }

    /// Checks every structural invariant; used after generation and loading.
    pub fn validate(&self) -> Result<()> {
        let p = self.tasks();
        if self.a_star.len() != p || self.rewards.len() != p || !(self.features.len() == 1 || self.features.len() == p) {
            return Err(Error::Generation("task family lists have inconsistent lengths".into()));
        }
        if crate::linalg::orthonormality_defect(&self.b_star) > 1e-10 {
            return Err(Error::Generation("B_star columns are not orthonormal".into()));
        }
        for t in 0..p {
            let core = &self.cores[t];
            core.validate(self.features_for(t))?;
            if (&core.m - &self.b_star * &self.a_star[t]).norm() > 1e-10 {
                return Err(Error::Generation(format!("core {t} does not factor through B_star")));
            }
            let cap = (self.config.d_prime as f64).sqrt() * core.s_bound;
            if self.a_star[t].norm() > cap * (1.0 + 1e-12) {
                return Err(Error::Generation(format!("A_star[{t}] exceeds its Frobenius cap")));
            }
            let r = &self.rewards[t];
            if r.iter().any(|&x| !(0.0..=1.0).contains(&x)) {
                return Err(Error::Generation(format!("rewards of task {t} leave [0, 1]")));
            }
        }
        Ok(())
    }

    /// Singular values of the horizontally stacked cores, descending.
    pub fn stacked_singular_values(&self) -> Vec<f64> {
        let stacked = hstack(self.cores.iter().map(|c| &c.m));
        let mut sv: Vec<f64> = stacked.svd(false, false).singular_values.iter().copied().collect();
        sv.sort_by(|a, b| b.total_cmp(a));
        sv
    }
}

fn hstack<'a>(blocks: impl Iterator<Item = &'a DMatrix<f64>>) -> DMatrix<f64> {
    let blocks: Vec<_> = blocks.collect();
    let rows = blocks[0].nrows();
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut c0 = 0;
    for b in blocks {
        out.view_mut((0, c0), (rows, b.ncols())).copy_from(b);
        c0 += b.ncols();
    }
    out
}

/// A point drawn uniformly from the simplex in `n` dimensions, optionally
/// sharpened by raising the exponential spacings to `power`.
fn simplex_point<R: Rng + ?Sized>(rng: &mut R, n: usize, power: f64) -> Vec<f64> {
    let mut w: Vec<f64> = (0..n).map(|_| (-(1.0 - rng.random::<f64>()).ln()).powf(power)).collect();
    let total: f64 = w.iter().sum();
    for x in &mut w {
        *x /= total;
    }
    w
}

pub fn make_instance(config: &InstanceConfig) -> Result<TaskFamily> {
    config.validate()?;
    let mut last_err = None;
    for attempt in 0..MAX_GENERATION_ATTEMPTS {
        let mut rng = substream(config.seed, Purpose::Instance, 0, attempt);
        match generate(config, &mut rng) {
            Ok(family) => return Ok(family),
            Err(e @ Error::Generation(_)) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last_err.unwrap_or_else(|| Error::Generation("no attempts made".into())))
}

fn generate<R: Rng + ?Sized>(config: &InstanceConfig, rng: &mut R) -> Result<TaskFamily> {
    let (ns, na, d, r, p) = (config.n_states, config.n_actions, config.d, config.r, config.tasks);

    // Shared mixing weights: anchor i mixes the r latent distributions by row i.
    let mut mixing = DMatrix::zeros(d, r);
    for i in 0..d {
        for (k, w) in simplex_point(rng, r, 1.0).into_iter().enumerate() {
            mixing[(i, k)] = w;
        }
    }
    let cores_raw: Vec<DMatrix<f64>> = (0..p)
        .map(|_| {
            let mut latent = DMatrix::zeros(r, ns);
            for k in 0..r {
                for (s, w) in simplex_point(rng, ns, 2.0).into_iter().enumerate() {
                    latent[(k, s)] = w;
                }
            }
            &mixing * latent
        })
        .collect();

    let mut phi = DMatrix::zeros(ns * na, d);
    for row in 0..ns * na {
        let anchors = rand::seq::index::sample(rng, d, config.anchors_per_row);
        let weights = simplex_point(rng, config.anchors_per_row, 1.0);
        for (i, w) in anchors.into_iter().zip(weights) {
            phi[(row, i)] = w;
        }
    }
    let rewards: Vec<DMatrix<f64>> =
        (0..p).map(|_| DMatrix::from_fn(ns, na, |_, _| rng.random::<f64>())).collect();

    let features = FeatureMaps::indicator_psi(ns, na, phi, 1.0)?;

    let stacked = hstack(cores_raw.iter());
    let svd = stacked.svd(true, false);
    let u = svd.u.as_ref().ok_or_else(|| Error::Numerical("svd without U".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));
    let sigma1 = svd.singular_values[order[0]];
    if !(svd.singular_values[order[r - 1]] > 1e-8 * sigma1) {
        return Err(Error::Generation("stacked cores are rank deficient".into()));
    }
    if order.len() > r && svd.singular_values[order[r]] > 1e-8 * sigma1 {
        return Err(Error::Generation("stacked cores exceed rank r".into()));
    }
    let mut b_star = DMatrix::zeros(d, r);
    for (k, &j) in order.iter().take(r).enumerate() {
        let mut col = u.column(j).into_owned();
        // Sign convention: the largest-magnitude entry is positive.
        let pivot = col.iter().copied().fold(0.0f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if pivot < 0.0 {
            col = -col;
        }
        b_star.set_column(k, &col);
    }

    let s_bound = cores_raw
        .iter()
        .flat_map(|m| m.column_iter().map(|c| c.norm()).collect::<Vec<_>>())
        .fold(0.0, f64::max);
    let a_star: Vec<DMatrix<f64>> = cores_raw.iter().map(|m| b_star.transpose() * m).collect();
    let cores: Vec<TransitionCore> = cores_raw.into_iter().map(|m| TransitionCore { m, s_bound }).collect();

    let family = TaskFamily { config: config.clone(), b_star, a_star, cores, rewards, features: vec![features] };
    family.validate()?;
    Ok(family)
}

// ---------------------------------------------------------------------------
// JSON snapshots
// ---------------------------------------------------------------------------

pub const INSTANCE_SCHEMA: &str = "matrixrl.instance.v1";

pub type Rows = Vec<Vec<f64>>;

pub fn to_rows(m: &DMatrix<f64>) -> Rows {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

pub fn from_rows(rows: &Rows) -> Result<DMatrix<f64>> {
    let nrows = rows.len();
    let ncols = rows.first().map_or(0, |r| r.len());
    if rows.iter().any(|r| r.len() != ncols) {
        return param("ragged matrix rows");
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSnapshot {
    pub phi: Rows,
    pub psi: Rows,
    pub l_phi: f64,
    pub l_psi: f64,
    pub c_psi: f64,
    pub c_psi_prime: f64,
}

/// On-disk form of a [`TaskFamily`]. Matrices are row-major nested arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceSnapshot {
    pub schema: String,
    pub config: InstanceConfig,
    pub seed: u64,
    pub s_bound: f64,
    pub features: Vec<FeatureSnapshot>,
    pub b_star: Rows,
    pub a_star: Vec<Rows>,
    pub cores: Vec<Rows>,
    pub rewards: Vec<Rows>,
}

impl TaskFamily {
    pub fn snapshot(&self) -> InstanceSnapshot {
        InstanceSnapshot {
            schema: INSTANCE_SCHEMA.to_string(),
            config: self.config.clone(),
            seed: self.config.seed,
            s_bound: self.cores.first().map_or(0.0, |c| c.s_bound),
            features: self
                .features
                .iter()
                .map(|f| FeatureSnapshot {
                    phi: to_rows(&f.phi),
                    psi: to_rows(&f.psi),
                    l_phi: f.l_phi,
                    l_psi: f.l_psi,
                    c_psi: f.c_psi,
                    c_psi_prime: f.c_psi_prime,
                })
                .collect(),
            b_star: to_rows(&self.b_star),
            a_star: self.a_star.iter().map(to_rows).collect(),
            cores: self.cores.iter().map(|c| to_rows(&c.m)).collect(),
            rewards: self.rewards.iter().map(to_rows).collect(),
        }
    }

    pub fn from_snapshot(snap: &InstanceSnapshot) -> Result<Self> {
        if snap.schema != INSTANCE_SCHEMA {
            return param(format!("unknown instance schema {:?}", snap.schema));
        }
        let cfg = &snap.config;
        let features = snap
            .features
            .iter()
            .map(|f| {
                let mut maps = FeatureMaps::new(
                    cfg.n_states,
                    cfg.n_actions,
                    from_rows(&f.phi)?,
                    from_rows(&f.psi)?,
                    f.l_phi,
                    f.l_psi,
                )?;
                maps.c_psi = f.c_psi;
                maps.c_psi_prime = f.c_psi_prime;
                Ok(maps)
            })
            .collect::<Result<Vec<_>>>()?;
        let family = TaskFamily {
            config: cfg.clone(),
            b_star: from_rows(&snap.b_star)?,
            a_star: snap.a_star.iter().map(from_rows).collect::<Result<_>>()?,
            cores: snap
                .cores
                .iter()
                .map(|rows| Ok(TransitionCore { m: from_rows(rows)?, s_bound: snap.s_bound }))
                .collect::<Result<_>>()?,
            rewards: snap.rewards.iter().map(from_rows).collect::<Result<_>>()?,
            features,
        };
        family.validate()?;
        Ok(family)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.snapshot())?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_snapshot(&serde_json::from_str(text)?)
    }
}
