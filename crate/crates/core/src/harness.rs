//! Experiment orchestration: runs the selected algorithms on a task family,
//! records exact regret and runs the audits.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngExt};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{Algorithm, ExperimentConfig};
use crate::env::{make_instance, EpisodeRecord, Policy, TaskFamily, TaskMdp, Values};
use crate::error::{param, Result};
use crate::linalg::{check_det_lemma, check_lazy_lemma, check_quadform_det};
use crate::rng::{substream, Purpose};
use crate::shared::{AlsOptions, SharedAgent, SharedRadius};
use crate::single::{ConfidenceSchedule, SingleAgent};

/// Slack for the value comparisons in the audits.
pub const VALUE_TOL: f64 = 1e-9;
/// Slack for the Bellman-error bound.
pub const BELLMAN_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RegretTrace {
    pub algorithm: Algorithm,
    pub seed: u64,
    /// `sum_p V*_1(s_1) - V^{pi_n}_1(s_1)` for each episode.
    pub instant: Vec<f64>,
    pub cumulative: Vec<f64>,
}

impl RegretTrace {
    fn new(algorithm: Algorithm, seed: u64) -> Self {
        Self { algorithm, seed, instant: Vec::new(), cumulative: Vec::new() }
    }

    fn push(&mut self, r: f64) {
        let prev = self.cumulative.last().copied().unwrap_or(0.0);
        self.instant.push(r);
        self.cumulative.push(prev + r);
    }

    pub fn total(&self) -> f64 {
        self.cumulative.last().copied().unwrap_or(0.0)
    }
}

/// Counts of checks of the form `lhs <= rhs` and the largest `lhs - rhs` seen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tally {
    pub checked: u64,
    pub violations: u64,
    pub worst_excess: f64,
}

impl Default for Tally {
    fn default() -> Self {
        Self { checked: 0, violations: 0, worst_excess: f64::NEG_INFINITY }
    }
}

impl Tally {
    pub fn record(&mut self, lhs: f64, rhs: f64) {
        let excess = lhs - rhs;
        self.checked += 1;
        if !(excess <= 0.0) {
            self.violations += 1;
        }
        self.worst_excess = self.worst_excess.max(excess);
    }

    pub fn passed(&self) -> bool {
        self.violations == 0
    }

    pub fn merge(&mut self, other: &Tally) {
        self.checked += other.checked;
        self.violations += other.violations;
        self.worst_excess = self.worst_excess.max(other.worst_excess);
    }
}

/// Confidence-set membership over a run. A unit is a task for single-task
/// learners and the whole family for the shared learner.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MembershipReport {
    pub units: usize,
    pub episodes: u64,
    pub violations: u64,
    /// Units whose set missed the truth at least once.
    pub units_violated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MartingaleReport {
    pub steps: u64,
    pub sum: f64,
    pub bound: f64,
    pub holds: bool,
}

/// `2 (4H) sqrt(T log(6 log(T) / 0.1))`, with the inner logarithm kept at least 1.
pub fn martingale_bound(horizon: usize, steps: u64) -> f64 {
    let t = steps as f64;
    let inner = (6.0 * t.ln() / 0.1).max(std::f64::consts::E);
    8.0 * horizon as f64 * (t * inner.ln()).sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlgorithmAudit {
    pub algorithm: Algorithm,
    pub regret_nonnegative: Tally,
    /// Present when audited; optimism is only checked at theory-scale bonuses.
    pub optimism: Option<Tally>,
    pub membership: Option<MembershipReport>,
    pub bellman: Option<Tally>,
    pub martingale: Option<MartingaleReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", content = "detail", rename_all = "snake_case")]
pub enum SeedStatus {
    Ok,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedResult {
    pub seed: u64,
    pub status: SeedStatus,
    pub traces: Vec<RegretTrace>,
    pub audits: Vec<AlgorithmAudit>,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub seeds: Vec<SeedResult>,
    /// The instance of the first seed.
    pub instance: Option<TaskFamily>,
}

impl ExperimentResult {
    pub fn traces(&self) -> impl Iterator<Item = &RegretTrace> {
        self.seeds.iter().flat_map(|s| s.traces.iter())
    }

    /// Mean cumulative regret curve of one algorithm over the seeds that ran it.
    pub fn mean_cumulative(&self, alg: Algorithm) -> Option<Vec<f64>> {
        let traces: Vec<&RegretTrace> = self.traces().filter(|t| t.algorithm == alg).collect();
        let n = traces.first()?.cumulative.len();
        let mut mean = vec![0.0; n];
        for t in &traces {
            for (m, c) in mean.iter_mut().zip(&t.cumulative) {
                *m += c / traces.len() as f64;
            }
        }
        Some(mean)
    }
}

/// The planner's output for one episode, all tasks.
struct RoundValues {
    values: Vec<Values>,
}

enum Learner {
    Single(Vec<SingleAgent>),
    Shared(SharedAgent),
}

impl Learner {
    fn build(config: &ExperimentConfig, fam: &TaskFamily, alg: Algorithm) -> Result<Self> {
        let p = fam.tasks();
        let s_bound = fam.cores.iter().map(|c| c.s_bound).fold(0.0, f64::max);
        match alg {
            Algorithm::Independent | Algorithm::Oracle => {
                let agents = (0..p)
                    .map(|t| {
                        let f = match alg {
                            Algorithm::Oracle => fam.features_for(t).projected(&fam.b_star)?,
                            _ => fam.features_for(t).clone(),
                        };
                        let sched = ConfidenceSchedule::new(
                            &f,
                            fam.cores[t].s_bound,
                            config.lambda,
                            config.delta,
                            config.horizon,
                            config.bonus_form,
                        )?;
                        SingleAgent::new(f, sched, config.bonus_scale)
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(Learner::Single(agents))
            }
            Algorithm::Shared => {
                let radius = SharedRadius::new(
                    fam.features_for(0),
                    s_bound,
                    config.lambda,
                    config.delta,
                    config.r,
                    p,
                    config.horizon,
                    config.lemma_constants.constants(),
                )?;
                let cap = (config.d_prime as f64).sqrt() * s_bound;
                let als = AlsOptions { cap: Some(cap), ..config.als() };
                let agent = SharedAgent::new(fam.features.clone(), p, radius, config.allocation, config.bonus_scale, als)?;
                Ok(Learner::Shared(agent))
            }
        }
    }

    fn plan(&self, fam: &TaskFamily, starts: &[usize]) -> Result<RoundValues> {
        Ok(match self {
            Learner::Single(agents) => {
                RoundValues { values: agents.iter().zip(&fam.rewards).map(|(a, r)| a.plan(r)).collect() }
            }
            Learner::Shared(agent) => RoundValues { values: agent.plan_round(&fam.rewards, starts)?.values },
        })
    }

    /// Membership per unit at the start of the episode.
    fn membership(&self, truths: &[DMatrix<f64>], mult: f64) -> Vec<bool> {
        match self {
            Learner::Single(agents) => agents.iter().zip(truths).map(|(a, m)| a.frobenius_membership(m, mult).member).collect(),
            Learner::Shared(agent) => vec![agent.membership(truths, mult).member],
        }
    }

    fn update(&mut self, records: &[EpisodeRecord]) -> Result<()> {
        match self {
            Learner::Single(agents) => agents.iter_mut().zip(records).try_for_each(|(a, r)| a.update(r)),
            Learner::Shared(agent) => agent.update(records),
        }
    }
}

/// Runs one algorithm for the configured number of episodes on `fam`.
pub fn run_algorithm(
    config: &ExperimentConfig,
    fam: &TaskFamily,
    seed: u64,
    alg: Algorithm,
) -> Result<(RegretTrace, AlgorithmAudit)> {
    let p = fam.tasks();
    let h = config.horizon;
    let mdps: Vec<TaskMdp> = (0..p).map(|t| fam.mdp(t)).collect();
    let v_star: Vec<DVector<f64>> = mdps.iter().map(|m| m.exact_values(h).v[0].clone()).collect();
    let truths: Vec<DMatrix<f64>> = match alg {
        Algorithm::Oracle => fam.a_star.clone(),
        _ => fam.cores.iter().map(|c| c.m.clone()).collect(),
    };
    let mut learner = Learner::build(config, fam, alg)?;

    let check_optimism = config.audit_optimism && config.bonus_scale >= 1.0;
    let check_membership = config.audit_membership || check_optimism || config.audit_bellman;
    let check_bellman = config.audit_bellman && alg == Algorithm::Shared;
    let units = if alg == Algorithm::Shared { 1 } else { p };

    let mut trace = RegretTrace::new(alg, seed);
    let mut nonneg = Tally::default();
    let mut optimism = Tally::default();
    let mut bellman = Tally::default();
    let mut member_eps = 0u64;
    let mut member_viol = 0u64;
    let mut unit_violated = vec![false; units];
    let mut mg_sum = 0.0;
    let mut mg_steps = 0u64;
    let stream = if config.paired { 0 } else { alg.stream_tag() };

    for n in 0..config.episodes {
        let starts: Vec<usize> = (0..p).map(|t| fam.start_state(seed, t, n)).collect();
        let covered = if check_membership { learner.membership(&truths, config.radius_multiplier) } else { vec![] };
        for (u, &c) in covered.iter().enumerate() {
            member_eps += 1;
            if !c {
                member_viol += 1;
                unit_violated[u] = true;
            }
        }
        let round = learner.plan(fam, &starts)?;

        if check_optimism {
            match alg {
                Algorithm::Shared => {
                    if covered[0] {
                        let planned: f64 = (0..p).map(|t| round.values[t].v[0][starts[t]]).sum();
                        let best: f64 = (0..p).map(|t| v_star[t][starts[t]]).sum();
                        optimism.record(best - VALUE_TOL, planned);
                    }
                }
                _ => {
                    for t in (0..p).filter(|&t| covered[t]) {
                        optimism.record(v_star[t][starts[t]] - VALUE_TOL, round.values[t].v[0][starts[t]]);
                    }
                }
            }
        }

        let mut records = Vec::with_capacity(p);
        let mut instant = 0.0;
        for t in 0..p {
            let policy: Policy = round.values[t].greedy_policy();
            let mut rng = substream(seed, Purpose::Transitions(stream), t, n);
            let rec = mdps[t].rollout(&policy, starts[t], t, n, &mut rng)?;
            let gap = v_star[t][starts[t]] - mdps[t].evaluate_policy(&policy)[starts[t]];
            nonneg.record(-gap, VALUE_TOL);
            instant += gap;
            if config.audit_martingale {
                let vals = &round.values[t];
                for (k, st) in rec.steps.iter().enumerate() {
                    let next = &vals.v[k + 1];
                    mg_sum += mdps[t].expect(st.state, st.action, next) - next[st.next_state];
                    mg_steps += 1;
                }
            }
            records.push(rec);
        }
        trace.push(instant);

        if check_bellman && covered[0] {
            if let Learner::Shared(agent) = &learner {
                let gamma = agent.gamma();
                for k in 0..h {
                    let mut err = 0.0;
                    let mut norms = 0.0;
                    let mut c_psi: f64 = 0.0;
                    for t in 0..p {
                        let st = &records[t].steps[k];
                        let f = agent.features(t);
                        let q = round.values[t].q[k][(st.state, st.action)];
                        err += q - fam.rewards[t][(st.state, st.action)] - mdps[t].expect(st.state, st.action, &round.values[t].v[k + 1]);
                        norms += agent.grams()[t].inv_norm_sq(&f.phi(st.state, st.action));
                        c_psi = c_psi.max(f.c_psi);
                    }
                    let bound = 2.0 * c_psi * h as f64 * (gamma * norms).sqrt() + BELLMAN_TOL;
                    bellman.record(err, bound);
                }
            }
        }
        learner.update(&records)?;
    }

    let audit = AlgorithmAudit {
        algorithm: alg,
        regret_nonnegative: nonneg,
        optimism: check_optimism.then_some(optimism),
        membership: check_membership.then(|| MembershipReport {
            units,
            episodes: member_eps,
            violations: member_viol,
            units_violated: unit_violated.iter().filter(|&&v| v).count(),
        }),
        bellman: check_bellman.then_some(bellman),
        martingale: config.audit_martingale.then(|| {
            let bound = martingale_bound(h, mg_steps);
            MartingaleReport { steps: mg_steps, sum: mg_sum, bound, holds: mg_sum.abs() <= bound }
        }),
    };
    Ok((trace, audit))
}

fn audit_failure(audit: &AlgorithmAudit) -> Option<String> {
    let name = audit.algorithm;
    if !audit.regret_nonnegative.passed() {
        return Some(format!("{name}: negative instantaneous regret ({:.3e})", -audit.regret_nonnegative.worst_excess));
    }
    if let Some(o) = audit.optimism.filter(|o| !o.passed()) {
        return Some(format!("{name}: optimism violated on {} of {} covered episodes", o.violations, o.checked));
    }
    if let Some(b) = audit.bellman.filter(|b| !b.passed()) {
        return Some(format!("{name}: Bellman-error bound exceeded on {} of {} steps", b.violations, b.checked));
    }
    None
}

pub fn run_seed(config: &ExperimentConfig, seed: u64) -> (SeedResult, Option<TaskFamily>) {
    let fam = match make_instance(&config.instance(seed)) {
        Ok(f) => f,
        Err(e) => {
            let res = SeedResult { seed, status: SeedStatus::Failed(e.to_string()), traces: vec![], audits: vec![] };
            return (res, None);
        }
    };
    let mut traces = Vec::new();
    let mut audits = Vec::new();
    let mut problems = Vec::new();
    for &alg in &config.algorithms {
        match run_algorithm(config, &fam, seed, alg) {
            Ok((t, a)) => {
                problems.extend(audit_failure(&a));
                traces.push(t);
                audits.push(a);
            }
            Err(e) => problems.push(format!("{alg}: {e}")),
        }
    }
    let status = if problems.is_empty() { SeedStatus::Ok } else { SeedStatus::Failed(problems.join("; ")) };
    (SeedResult { seed, status, traces, audits }, Some(fam))
}

/// Runs every seed (in parallel on the current rayon pool); results keep the seed order.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentResult> {
    config.validate()?;
    let mut results: Vec<(SeedResult, Option<TaskFamily>)> =
        config.seeds.par_iter().map(|&s| run_seed(config, s)).collect();
    let instance = results.first_mut().and_then(|r| r.1.take());
    Ok(ExperimentResult { seeds: results.into_iter().map(|r| r.0).collect(), instance })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageReport {
    pub runs: usize,
    pub delta: f64,
    pub radius_multiplier: f64,
    /// Fraction of (run, task) pairs whose single-task set missed the truth at least once.
    pub single_rate: f64,
    /// Fraction of runs whose joint set missed the truth at least once.
    pub shared_rate: f64,
    pub single_episode_rate: f64,
    pub shared_episode_rate: f64,
    pub failed_runs: usize,
}

/// Monte-Carlo coverage of the single-task and joint confidence sets.
///
/// Run `i` uses seed `seeds[0] + i` and `coverage_episodes` episodes.
pub fn coverage_audit(config: &ExperimentConfig, n_runs: usize, radius_multiplier: f64) -> Result<CoverageReport> {
    if n_runs < 100 {
        return param(format!("coverage needs at least 100 runs, got {n_runs}"));
    }
    let mut cfg = config.clone();
    cfg.episodes = config.coverage_episodes;
    cfg.radius_multiplier = radius_multiplier;
    cfg.audit_membership = true;
    cfg.audit_optimism = false;
    cfg.audit_bellman = false;
    cfg.audit_martingale = false;
    cfg.validate()?;
    let base = config.seeds[0];
    let per_run: Vec<Result<[MembershipReport; 2]>> = (0..n_runs)
        .into_par_iter()
        .map(|i| {
            let seed = base.wrapping_add(i as u64);
            let fam = make_instance(&cfg.instance(seed))?;
            let (_, single) = run_algorithm(&cfg, &fam, seed, Algorithm::Independent)?;
            let (_, shared) = run_algorithm(&cfg, &fam, seed, Algorithm::Shared)?;
            Ok([single.membership.expect("membership audited"), shared.membership.expect("membership audited")])
        })
        .collect();
    let mut failed = 0;
    let (mut s_units, mut s_viol_units, mut s_eps, mut s_viol_eps) = (0usize, 0usize, 0u64, 0u64);
    let (mut j_runs, mut j_viol_runs, mut j_eps, mut j_viol_eps) = (0usize, 0usize, 0u64, 0u64);
    for r in per_run {
        match r {
            Ok([single, shared]) => {
                s_units += single.units;
                s_viol_units += single.units_violated;
                s_eps += single.episodes;
                s_viol_eps += single.violations;
                j_runs += 1;
                j_viol_runs += shared.units_violated;
                j_eps += shared.episodes;
                j_viol_eps += shared.violations;
            }
            Err(_) => failed += 1,
        }
    }
    let rate = |a: f64, b: f64| if b > 0.0 { a / b } else { 0.0 };
    Ok(CoverageReport {
        runs: n_runs,
        delta: config.delta,
        radius_multiplier,
        single_rate: rate(s_viol_units as f64, s_units as f64),
        shared_rate: rate(j_viol_runs as f64, j_runs as f64),
        single_episode_rate: rate(s_viol_eps as f64, s_eps as f64),
        shared_episode_rate: rate(j_viol_eps as f64, j_eps as f64),
        failed_runs: failed,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialTally {
    pub trials: usize,
    pub failures: usize,
    /// Largest `lhs - rhs` over the trials (negative when every trial holds).
    pub worst_margin: f64,
}

impl TrialTally {
    fn new() -> Self {
        Self { trials: 0, failures: 0, worst_margin: f64::NEG_INFINITY }
    }

    fn record(&mut self, holds: bool, margin: f64) {
        self.trials += 1;
        if !holds {
            self.failures += 1;
        }
        self.worst_margin = self.worst_margin.max(margin);
    }

    pub fn passed(&self) -> bool {
        self.failures == 0 && self.trials > 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LemmaSuite {
    pub det_lemma: TrialTally,
    pub lazy_lemma: TrialTally,
    pub quadform_det: TrialTally,
}

impl LemmaSuite {
    pub fn passed(&self) -> bool {
        self.det_lemma.passed() && self.lazy_lemma.passed() && self.quadform_det.passed()
    }
}

fn random_vector<R: Rng + ?Sized>(rng: &mut R, d: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(d, |_, _| scale * (2.0 * rng.random::<f64>() - 1.0))
}

fn random_spd<R: Rng + ?Sized>(rng: &mut R, d: usize) -> DMatrix<f64> {
    let x = DMatrix::from_fn(d, d, |_, _| 2.0 * rng.random::<f64>() - 1.0);
    &x * x.transpose() + DMatrix::identity(d, d) * (0.01 + rng.random::<f64>())
}

/// Randomized trials of the determinant, lazy-update and quadratic-form inequalities
/// (`d <= 8`, at most 200 vectors, horizon at most 5).
pub fn lemma_suite(trials: usize, probes: usize, seed: u64) -> Result<LemmaSuite> {
    if trials == 0 || probes == 0 {
        return param("lemma suite needs at least one trial and one probe");
    }
    let mut det = TrialTally::new();
    let mut lazy = TrialTally::new();
    let mut quad = TrialTally::new();
    for i in 0..trials {
        let mut rng = substream(seed, Purpose::Audit, 0, i);
        let d = rng.random_range(1..=8);
        let n = rng.random_range(1..=200);
        let scale = 0.1 + 2.0 * rng.random::<f64>();
        let lambda = 0.05 + 2.0 * rng.random::<f64>();
        let b = 0.25 + 2.0 * rng.random::<f64>();
        let xs: Vec<DVector<f64>> = (0..n).map(|_| random_vector(&mut rng, d, scale)).collect();
        let rep = check_det_lemma(&xs, lambda, b)?;
        let margin = (rep.potential.lhs - rep.potential.rhs).max(rep.log_det.lhs - rep.log_det.rhs);
        det.record(rep.holds(), margin);

        let mut rng = substream(seed, Purpose::Audit, 1, i);
        let d = rng.random_range(1..=8);
        let h = rng.random_range(1..=5);
        let episodes = rng.random_range(1..=200 / h);
        let scale = 0.1 + 2.0 * rng.random::<f64>();
        let lambda = 0.05 + 2.0 * rng.random::<f64>();
        let xs: Vec<Vec<DVector<f64>>> =
            (0..episodes).map(|_| (0..h).map(|_| random_vector(&mut rng, d, scale)).collect()).collect();
        let rep = check_lazy_lemma(&xs, lambda, h)?;
        lazy.record(rep.holds, rep.lhs - rep.rhs);

        let mut rng = substream(seed, Purpose::Audit, 2, i);
        let d = rng.random_range(1..=8);
        let c = random_spd(&mut rng, d);
        let k = rng.random_range(1..=d);
        let y = DMatrix::from_fn(d, k, |_, _| 2.0 * rng.random::<f64>() - 1.0);
        let b = &c + &y * y.transpose();
        let pr: Vec<DVector<f64>> = (0..probes).map(|_| random_vector(&mut rng, d, 1.0)).collect();
        let rep = check_quadform_det(&b, &c, &pr)?;
        quad.record(rep.holds, rep.lhs - rep.rhs);
    }
    Ok(LemmaSuite { det_lemma: det, lazy_lemma: lazy, quadform_det: quad })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::StartRule;

    fn tiny() -> ExperimentConfig {
        ExperimentConfig {
            n_states: 4,
            n_actions: 2,
            d: 5,
            d_prime: 4,
            r: 2,
            tasks: 3,
            horizon: 3,
            episodes: 20,
            seeds: vec![1, 2],
            start: StartRule::Uniform,
            audit_optimism: true,
            audit_membership: true,
            audit_bellman: true,
            audit_martingale: true,
            coverage_episodes: 5,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn single_episode_cumulative_equals_instant() {
        let cfg = ExperimentConfig { episodes: 1, seeds: vec![3], ..tiny() };
        let res = run_experiment(&cfg).unwrap();
        for t in res.traces() {
            assert_eq!(t.instant.len(), 1);
            assert_eq!(t.cumulative[0], t.instant[0]);
        }
        assert_eq!(res.traces().count(), 3);
    }

    #[test]
    fn experiment_is_deterministic_and_audits_pass() {
        let cfg = tiny();
        let a = run_experiment(&cfg).unwrap();
        let b = run_experiment(&cfg).unwrap();
        assert_eq!(a.seeds, b.seeds);
        for s in &a.seeds {
            assert_eq!(s.status, SeedStatus::Ok, "seed {}", s.seed);
            for t in &s.traces {
                assert!(t.instant.iter().all(|&r| r >= -VALUE_TOL));
                assert!(t.cumulative.windows(2).all(|w| w[1] >= w[0] - VALUE_TOL));
            }
            for au in &s.audits {
                assert!(au.martingale.as_ref().unwrap().holds);
                assert!(au.optimism.unwrap().checked > 0);
            }
        }
    }

    #[test]
    fn oracle_with_full_rank_tracks_independent() {
        // With r = d the projection is a rotation, and ridge is rotation invariant.
        let cfg = ExperimentConfig {
            r: 4,
            d: 4,
            paired: true,
            algorithms: vec![Algorithm::Independent, Algorithm::Oracle],
            audit_optimism: false,
            audit_membership: false,
            audit_bellman: false,
            audit_martingale: false,
            ..tiny()
        };
        let res = run_experiment(&cfg).unwrap();
        for s in &res.seeds {
            let (ind, ora) = (&s.traces[0], &s.traces[1]);
            assert!((ind.total() - ora.total()).abs() <= 1e-6 * ind.total().max(1.0));
        }
    }

    #[test]
    fn martingale_bound_values() {
        assert!(martingale_bound(5, 1).is_finite());
        let t: f64 = 2000.0 * 5.0;
        let want = 40.0 * (t * (6.0 * t.ln() / 0.1).ln()).sqrt();
        assert!((martingale_bound(5, 10_000) - want).abs() < 1e-9 * want);
    }

    #[test]
    fn coverage_requires_runs_and_widens_with_radius() {
        let cfg = tiny();
        assert!(coverage_audit(&cfg, 10, 1.0).is_err());
        let wide = coverage_audit(&cfg, 100, 10.0).unwrap();
        assert_eq!(wide.single_rate, 0.0);
        assert_eq!(wide.shared_rate, 0.0);
        assert_eq!(wide.failed_runs, 0);
    }

    #[test]
    fn small_lemma_suite_holds() {
        let s = lemma_suite(50, 8, 0).unwrap();
        assert!(s.passed(), "{s:?}");
        assert!(lemma_suite(0, 8, 0).is_err());
    }
}
