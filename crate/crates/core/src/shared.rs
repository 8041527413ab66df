//! Shared-MatrixRL: joint factorized ridge `M_p = B A_p` with a common
//! orthonormal `B`, the joint confidence radius, per-task radius allocation
//! and bonus planning.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::env::{from_rows, to_rows, EpisodeRecord, FeatureMaps, Rows, Values};
use crate::error::{param, Error, Result};
use crate::linalg::GramState;
use crate::planner::PlanningModel;

pub const ESTIMATE_SCHEMA: &str = "matrixrl.estimate.v1";

/// Alternating-minimization settings for [`joint_factorized_ridge`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlsOptions {
    pub tol: f64,
    pub max_sweeps: usize,
    /// Upper bound on `||A_p||_F` (and so on `||B A_p||_F`), if any.
    pub cap: Option<f64>,
}

impl Default for AlsOptions {
    fn default() -> Self {
        Self { tol: 1e-8, max_sweeps: 100, cap: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SharedEstimate {
    pub b: DMatrix<f64>,
    pub a: Vec<DMatrix<f64>>,
    /// Joint objective after initialization and after every accepted sweep.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    pub sweeps: usize,
}

impl SharedEstimate {
    /// `B` = first `r` canonical columns, every `A_p = 0`.
    pub fn canonical(d: usize, d_prime: usize, r: usize, tasks: usize) -> Self {
        Self {
            b: DMatrix::identity(d, r),
            a: vec![DMatrix::zeros(r, d_prime); tasks],
            objective_trace: vec![0.0],
            converged: true,
            sweeps: 0,
        }
    }

    pub fn product(&self, p: usize) -> DMatrix<f64> {
        &self.b * &self.a[p]
    }

    pub fn final_objective(&self) -> f64 {
        self.objective_trace.last().copied().unwrap_or(f64::INFINITY)
    }

    pub fn rank(&self) -> usize {
        self.b.ncols()
    }

    pub fn snapshot(&self) -> EstimateSnapshot {
        EstimateSnapshot {
            schema: ESTIMATE_SCHEMA.to_string(),
            b: to_rows(&self.b),
            a: self.a.iter().map(to_rows).collect(),
            objective_trace: self.objective_trace.clone(),
            converged: self.converged,
            sweeps: self.sweeps,
        }
    }

    pub fn from_snapshot(snap: &EstimateSnapshot) -> Result<Self> {
        if snap.schema != ESTIMATE_SCHEMA {
            return Err(Error::Config(format!("unknown estimate schema {:?}", snap.schema)));
        }
        let b = from_rows(&snap.b)?;
        let a = snap.a.iter().map(from_rows).collect::<Result<Vec<_>>>()?;
        if a.iter().any(|x| x.nrows() != b.ncols()) {
            return Err(Error::Config("estimate factor shapes disagree".into()));
        }
        Ok(Self { b, a, objective_trace: snap.objective_trace.clone(), converged: snap.converged, sweeps: snap.sweeps })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateSnapshot {
    pub schema: String,
    pub b: Rows,
    pub a: Vec<Rows>,
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    pub sweeps: usize,
}

/// Per-task pieces of the objective that do not depend on `(B, A)`.
struct TaskData<'a> {
    gram: &'a GramState,
    ridge: DMatrix<f64>,
    offset: f64,
}

impl TaskData<'_> {
    /// `Y - tr(T^T Sigma^{-1} T) + ||Sigma^{1/2} (M - M_ridge)||_F^2`, equal to
    /// `lambda ||A||_F^2 + sum ||psi - M^T phi||^2` whenever `B` is orthonormal.
    fn objective(&self, m: &DMatrix<f64>) -> f64 {
        self.offset + self.gram.weighted_frobenius_sq(&(m - &self.ridge))
    }
}

fn joint_objective(tasks: &[TaskData], b: &DMatrix<f64>, a: &[DMatrix<f64>]) -> f64 {
    tasks.iter().zip(a).map(|(t, ap)| t.objective(&(b * ap))).sum()
}

/// `argmin_A ||Sigma^{1/2}(B A - M_ridge)||^2` subject to `||A||_F <= cap`, for orthonormal `B`.
fn a_step(b: &DMatrix<f64>, task: &TaskData, cap: Option<f64>) -> DMatrix<f64> {
    let g = b.transpose() * task.gram.sigma() * b;
    let rhs = b.transpose() * task.gram.target();
    let eig = SymmetricEigen::new(g);
    let proj = eig.eigenvectors.transpose() * &rhs;
    let solve = |mu: f64| {
        let mut scaled = proj.clone();
        for (i, mut row) in scaled.row_iter_mut().enumerate() {
            row /= eig.eigenvalues[i] + mu;
        }
        &eig.eigenvectors * scaled
    };
    let a0 = solve(0.0);
    let Some(cap) = cap else { return a0 };
    if a0.norm() <= cap {
        return a0;
    }
    // ||A(mu)||_F decreases in mu; ||A(mu)|| <= ||rhs|| / mu bounds the bracket.
    let (mut lo, mut hi) = (0.0, rhs.norm() / cap);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if solve(mid).norm() > cap {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-15 * hi {
            break;
        }
    }
    solve(hi)
}

/// Minimizer over all `d x r` matrices of `sum_p ||Sigma_p^{1/2}(B A_p - M_p)||^2` at fixed `A`.
fn b_step(tasks: &[TaskData], a: &[DMatrix<f64>], d: usize, r: usize) -> Option<DMatrix<f64>> {
    let mut lhs = DMatrix::<f64>::zeros(d * r, d * r);
    let mut rhs = DMatrix::<f64>::zeros(d, r);
    for (t, ap) in tasks.iter().zip(a) {
        let aat = ap * ap.transpose();
        lhs += aat.kronecker(t.gram.sigma());
        rhs += t.gram.target() * ap.transpose();
    }
    if lhs.amax() == 0.0 {
        return None;
    }
    let rhs = DVector::from_column_slice(rhs.as_slice());
    let sol = match lhs.clone().cholesky() {
        Some(ch) => ch.solve(&rhs),
        None => lhs.svd(true, true).solve(&rhs, 1e-12).ok()?,
    };
    Some(DMatrix::from_column_slice(d, r, sol.as_slice()))
}

fn spectral_init(tasks: &[TaskData], d: usize, r: usize) -> DMatrix<f64> {
    let mut stacked = DMatrix::<f64>::zeros(d, d);
    for t in tasks {
        stacked += &t.ridge * t.ridge.transpose();
    }
    let eig = SymmetricEigen::new(stacked);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let mut b = DMatrix::zeros(d, r);
    for (k, &i) in order.iter().take(r).enumerate() {
        let mut col = eig.eigenvectors.column(i).into_owned();
        // Deterministic sign: largest-magnitude entry positive.
        if col[col.iamax()] < 0.0 {
            col = -col;
        }
        b.set_column(k, &col);
    }
    b
}

/// Joint factorized ridge by alternating minimization.
///
/// `grams[p]` must hold targets of a common output dimension. `init` warm
/// starts from a previous `(B, A)`; otherwise `B` comes from the top-`r`
/// eigenvectors of `sum_p M_p M_p^T` over the per-task ridge estimates.
pub fn joint_factorized_ridge(
    grams: &[GramState],
    r: usize,
    init: Option<&SharedEstimate>,
    opts: &AlsOptions,
) -> Result<SharedEstimate> {
    let Some(first) = grams.first() else { return param("no tasks") };
    let (d, dp) = (first.dim(), first.out_dim());
    if r == 0 || r > d {
        return param(format!("rank {r} must lie in 1..={d}"));
    }
    if grams.iter().any(|g| g.dim() != d || g.out_dim() != dp) {
        return param("task Gram states disagree in dimension");
    }
    if !(opts.tol >= 0.0) {
        return param("tolerance must be nonnegative");
    }
    if let Some(init) = init {
        if init.b.shape() != (d, r) || init.a.len() != grams.len() {
            return param("warm start has the wrong shape");
        }
    }
    if grams.iter().all(|g| g.count() == 0) {
        return Ok(SharedEstimate::canonical(d, dp, r, grams.len()));
    }

    let tasks: Vec<TaskData> = grams
        .iter()
        .map(|g| {
            let ridge = g.ridge_solve();
            let offset = g.target_sq() - g.target().dot(&ridge);
            TaskData { gram: g, ridge, offset }
        })
        .collect();

    let cold_b = spectral_init(&tasks, d, r);
    let cold_a = tasks.iter().map(|t| a_step(&cold_b, t, opts.cap)).collect();
    let cold = alternate(&tasks, cold_b, cold_a, opts);
    let Some(e) = init else { return Ok(cold) };
    // Warm start from the previous iterate; the spectral restart is kept only if strictly better.
    let mut warm_a: Vec<DMatrix<f64>> = tasks.iter().map(|t| a_step(&e.b, t, opts.cap)).collect();
    if joint_objective(&tasks, &e.b, &e.a) < joint_objective(&tasks, &e.b, &warm_a) {
        warm_a = e.a.clone();
    }
    let warm = alternate(&tasks, e.b.clone(), warm_a, opts);
    Ok(if cold.final_objective() < warm.final_objective() { cold } else { warm })
}

fn alternate(tasks: &[TaskData], mut b: DMatrix<f64>, mut a: Vec<DMatrix<f64>>, opts: &AlsOptions) -> SharedEstimate {
    let (d, r) = b.shape();
    let mut current = joint_objective(tasks, &b, &a);
    let mut trace = vec![current];
    let mut converged = false;
    let mut sweeps = 0;

    while sweeps < opts.max_sweeps {
        sweeps += 1;
        let Some(mut b_new) = b_step(tasks, &a, d, r) else {
            converged = true;
            break;
        };
        if let Some(cap) = opts.cap {
            let feasible = |m: &DMatrix<f64>| a.iter().all(|ap| (m * ap).norm() <= cap);
            if !feasible(&b_new) {
                // The objective is convex in B, so any point on the segment is no worse.
                let (mut lo, mut hi) = (0.0, 1.0);
                for _ in 0..60 {
                    let mid = 0.5 * (lo + hi);
                    if feasible(&(&b * (1.0 - mid) + &b_new * mid)) {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                b_new = &b * (1.0 - lo) + &b_new * lo;
            }
        }
        let qr = b_new.qr();
        let (q, rr) = (qr.q(), qr.r());
        let mut a_new: Vec<DMatrix<f64>> = a.iter().map(|ap| &rr * ap).collect();
        let b_next = q;
        for (ap, t) in a_new.iter_mut().zip(tasks) {
            let fresh = a_step(&b_next, t, opts.cap);
            if t.objective(&(&b_next * &fresh)) <= t.objective(&(&b_next * &*ap)) {
                *ap = fresh;
            }
        }
        let next = joint_objective(tasks, &b_next, &a_new);
        if !(next <= current) {
            converged = true;
            break;
        }
        let decrease = current - next;
        b = b_next;
        a = a_new;
        current = next;
        trace.push(current);
        if decrease <= opts.tol * current.abs().max(f64::MIN_POSITIVE) {
            converged = true;
            break;
        }
    }
    SharedEstimate { b, a, objective_trace: trace, converged, sweeps }
}

/// Constants of the joint radius
/// `beta' = 1 + L_phi S + b^2/(2R^2) + (q R^2 + l b)(ll lnln(2nHP) + c0 + ln(1/delta)
///          + (dr + r d' P)(ln(cover_offset + cover_scale S) + ln(nHP) + ln(2 R L_phi)))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LemmaConstants {
    pub quad: f64,
    pub lin: f64,
    pub lnln: f64,
    pub offset: f64,
    pub cover_offset: f64,
    pub cover_scale: f64,
}

impl LemmaConstants {
    pub const STATEMENT: Self = Self { quad: 12.0, lin: 1.0, lnln: 2.0, offset: 3.0, cover_offset: 0.0, cover_scale: 5.0 };

    /// Constants as they appear in the longer derivation.
    pub fn derivation() -> Self {
        Self { quad: 10.0, lin: 0.41, lnln: 1.4, offset: 5.2f64.ln(), cover_offset: 3.0, cover_scale: 2.0 }
    }
}

impl Default for LemmaConstants {
    fn default() -> Self {
        Self::STATEMENT
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SharedRadius {
    pub delta: f64,
    pub lambda: f64,
    pub r_sub: f64,
    /// `2 R d' S L_psi`.
    pub b: f64,
    pub l_phi: f64,
    pub s_bound: f64,
    pub d: usize,
    pub r: usize,
    pub d_prime: usize,
    pub tasks: usize,
    pub horizon: usize,
    pub constants: LemmaConstants,
}

impl SharedRadius {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        features: &FeatureMaps,
        s_bound: f64,
        lambda: f64,
        delta: f64,
        r: usize,
        tasks: usize,
        horizon: usize,
        constants: LemmaConstants,
    ) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return param(format!("delta must lie in (0, 1), got {delta}"));
        }
        if !(lambda > 0.0) || !(s_bound > 0.0) || horizon == 0 || tasks == 0 || r == 0 {
            return param("lambda, S, H, P and r must be positive");
        }
        let r_sub = features.k_psi_inv_norm() * features.l_psi + s_bound * features.l_phi;
        let dp = features.d_prime();
        Ok(Self {
            delta,
            lambda,
            r_sub,
            b: 2.0 * r_sub * dp as f64 * s_bound * features.l_psi,
            l_phi: features.l_phi,
            s_bound,
            d: features.d(),
            r,
            d_prime: dp,
            tasks,
            horizon,
            constants,
        })
    }

    pub fn beta_prime(&self, n: usize) -> f64 {
        let c = &self.constants;
        let big_r2 = self.r_sub * self.r_sub;
        let nhp = (n.max(1) * self.horizon * self.tasks) as f64;
        let dims = (self.d * self.r + self.r * self.d_prime * self.tasks) as f64;
        let cover = (c.cover_offset + c.cover_scale * self.s_bound).ln() + nhp.ln() + (2.0 * self.r_sub * self.l_phi).ln();
        let log_terms = c.lnln * (2.0 * nhp).ln().ln() + c.offset + (1.0 / self.delta).ln() + dims * cover;
        1.0 + self.l_phi * self.s_bound + self.b * self.b / (2.0 * big_r2) + (c.quad * big_r2 + c.lin * self.b) * log_terms
    }

    /// `gamma_n = 2 beta'_n + 2 P sqrt(d') S lambda`.
    pub fn gamma(&self, n: usize) -> f64 {
        2.0 * self.beta_prime(n) + 2.0 * self.tasks as f64 * (self.d_prime as f64).sqrt() * self.s_bound * self.lambda
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JointMembership {
    pub lhs: f64,
    pub gamma: f64,
    pub member: bool,
}

/// `sum_p ||Sigma_p^{1/2}(M_p - B A_p)||_F^2` against `gamma`.
pub fn check_joint_membership(est: &SharedEstimate, truth: &[DMatrix<f64>], grams: &[GramState], gamma: f64) -> JointMembership {
    let lhs = truth
        .iter()
        .zip(grams)
        .enumerate()
        .map(|(p, (m, g))| g.weighted_frobenius_sq(&(m - est.product(p))))
        .sum();
    JointMembership { lhs, gamma, member: lhs <= gamma }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AllocationMethod {
    #[default]
    Equal,
    Greedy,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RadiusAllocation {
    pub tau: Vec<f64>,
    pub budget: f64,
}

impl RadiusAllocation {
    pub fn feasible(&self) -> bool {
        self.tau.iter().all(|&t| t >= 0.0) && self.tau.iter().map(|t| t * t).sum::<f64>() <= self.budget + 1e-9
    }
}

/// Per-task input to the allocation: a frozen planning model, the bonus
/// coefficient per unit of radius, and the known start state.
#[derive(Debug, Clone)]
pub struct TaskPlanContext {
    pub model: PlanningModel,
    pub coef_per_tau: f64,
    pub start: usize,
    pub horizon: usize,
}

impl TaskPlanContext {
    pub fn value(&self, tau: f64) -> f64 {
        self.model.initial_value(self.coef_per_tau * tau, self.horizon, self.start)
    }

    pub fn plan(&self, tau: f64) -> Values {
        self.model.plan(self.coef_per_tau * tau, self.horizon)
    }
}

pub const GREEDY_SWEEPS: usize = 20;

/// Splits the budget `sum tau_p^2 <= budget` across tasks.
pub fn allocate_radii(budget: f64, contexts: &[TaskPlanContext], method: AllocationMethod) -> Result<RadiusAllocation> {
    if !(budget >= 0.0) {
        return param("radius budget must be nonnegative");
    }
    let p = contexts.len();
    if p == 0 {
        return param("no tasks to allocate");
    }
    let share = budget / p as f64;
    let mut u = vec![share; p];
    if method == AllocationMethod::Greedy && budget > 0.0 && p > 1 {
        let mut vals: Vec<f64> = contexts.iter().map(|c| c.value(share.sqrt())).collect();
        let mut step = share / 2.0;
        for _ in 0..GREEDY_SWEEPS {
            let mut moved = false;
            for i in 0..p {
                for j in 0..p {
                    if i == j || u[j] <= 0.0 {
                        continue;
                    }
                    let amount = step.min(u[j]);
                    let (ui, uj) = (u[i] + amount, u[j] - amount);
                    let (vi, vj) = (contexts[i].value(ui.sqrt()), contexts[j].value(uj.max(0.0).sqrt()));
                    if vi + vj > vals[i] + vals[j] + 1e-12 {
                        u[i] = ui;
                        u[j] = uj.max(0.0);
                        vals[i] = vi;
                        vals[j] = vj;
                        moved = true;
                    }
                }
            }
            if !moved {
                step /= 2.0;
            }
        }
        // Guard against rounding drift in the transfers.
        let total: f64 = u.iter().sum();
        if total > budget {
            u.iter_mut().for_each(|x| *x *= budget / total);
        }
    }
    Ok(RadiusAllocation { tau: u.into_iter().map(f64::sqrt).collect(), budget })
}

/// Backward induction for task `p` with model `B A_p` and bonus `coef_per_tau * tau_p`.
pub fn plan_task(
    p: usize,
    est: &SharedEstimate,
    tau_p: f64,
    coef_per_tau: f64,
    gram_p: &GramState,
    rewards_p: &DMatrix<f64>,
    features: &FeatureMaps,
    horizon: usize,
) -> Values {
    PlanningModel::new(features, &est.product(p), gram_p, rewards_p).plan(coef_per_tau * tau_p, horizon)
}

/// One round's plans for all tasks.
#[derive(Debug, Clone)]
pub struct RoundPlan {
    pub values: Vec<Values>,
    pub allocation: RadiusAllocation,
    pub gamma: f64,
    /// Bonus coefficients `c_p` actually used.
    pub coefs: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct SharedAgent {
    features: Vec<FeatureMaps>,
    grams: Vec<GramState>,
    estimate: SharedEstimate,
    radius: SharedRadius,
    allocation: AllocationMethod,
    bonus_scale: f64,
    als: AlsOptions,
    horizon: usize,
    episode: usize,
}

impl SharedAgent {
    /// `features` holds one map per task, or a single map shared by all tasks.
    pub fn new(
        features: Vec<FeatureMaps>,
        tasks: usize,
        radius: SharedRadius,
        allocation: AllocationMethod,
        bonus_scale: f64,
        als: AlsOptions,
    ) -> Result<Self> {
        if !(bonus_scale >= 0.0) {
            return param("bonus scale must be nonnegative");
        }
        let features = match features.len() {
            1 => vec![features[0].clone(); tasks],
            n if n == tasks => features,
            _ => return param("need one feature map per task or a single shared map"),
        };
        let (d, dp) = (features[0].d(), features[0].d_prime());
        if features.iter().any(|f| f.d() != d || f.d_prime() != dp) {
            return param("feature maps disagree in dimension");
        }
        if radius.r > d {
            return param("rank exceeds feature dimension");
        }
        let grams = (0..tasks).map(|_| GramState::with_targets(d, dp, radius.lambda)).collect::<Result<Vec<_>>>()?;
        let estimate = SharedEstimate::canonical(d, dp, radius.r, tasks);
        let horizon = radius.horizon;
        Ok(Self { features, grams, estimate, radius, allocation, bonus_scale, als, horizon, episode: 1 })
    }

    pub fn tasks(&self) -> usize {
        self.grams.len()
    }

    pub fn episode(&self) -> usize {
        self.episode
    }

    pub fn estimate(&self) -> &SharedEstimate {
        &self.estimate
    }

    pub fn grams(&self) -> &[GramState] {
        &self.grams
    }

    pub fn radius(&self) -> &SharedRadius {
        &self.radius
    }

    pub fn features(&self, p: usize) -> &FeatureMaps {
        &self.features[p]
    }

    pub fn gamma(&self) -> f64 {
        self.radius.gamma(self.episode)
    }

    /// Bonus coefficient per unit radius for task `p`: `scale * 2 C_psi H`.
    pub fn coef_per_tau(&self, p: usize) -> f64 {
        self.bonus_scale * 2.0 * self.features[p].c_psi * self.horizon as f64
    }

    pub fn membership(&self, truth: &[DMatrix<f64>], radius_mult: f64) -> JointMembership {
        check_joint_membership(&self.estimate, truth, &self.grams, radius_mult * radius_mult * self.gamma())
    }

    pub fn plan_round(&self, rewards: &[DMatrix<f64>], starts: &[usize]) -> Result<RoundPlan> {
        let p = self.tasks();
        if rewards.len() != p || starts.len() != p {
            return param("need rewards and a start state for every task");
        }
        let contexts: Vec<TaskPlanContext> = (0..p)
            .map(|i| TaskPlanContext {
                model: PlanningModel::new(&self.features[i], &self.estimate.product(i), &self.grams[i], &rewards[i]),
                coef_per_tau: self.coef_per_tau(i),
                start: starts[i],
                horizon: self.horizon,
            })
            .collect();
        let gamma = self.gamma();
        let allocation = allocate_radii(gamma, &contexts, self.allocation)?;
        let values = contexts.iter().zip(&allocation.tau).map(|(c, &t)| c.plan(t)).collect();
        let coefs = contexts.iter().zip(&allocation.tau).map(|(c, &t)| c.coef_per_tau * t).collect();
        Ok(RoundPlan { values, allocation, gamma, coefs })
    }

    /// Absorbs one episode per task and refits the joint estimate from the previous one.
    pub fn update(&mut self, episodes: &[EpisodeRecord]) -> Result<()> {
        let p = self.tasks();
        if episodes.len() != p {
            return param(format!("expected {p} episodes, got {}", episodes.len()));
        }
        let mut seen = vec![false; p];
        for rec in episodes {
            if rec.task >= p || seen[rec.task] {
                return param(format!("episode for task {} is duplicated or out of range", rec.task));
            }
            if rec.steps.len() != self.horizon {
                return param("episode length differs from the horizon");
            }
            seen[rec.task] = true;
        }
        for rec in episodes {
            let f = &self.features[rec.task];
            for st in &rec.steps {
                self.grams[rec.task].absorb(&f.phi(st.state, st.action), &f.psi_tilde(st.next_state))?;
            }
        }
        self.estimate = joint_factorized_ridge(&self.grams, self.radius.r, Some(&self.estimate), &self.als)?;
        self.episode += 1;
        Ok(())
    }
}
