//! Single-task MatrixRL: ridge estimation of the core, the self-normalized
//! confidence radius, and bonus-based optimistic planning.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::env::{EpisodeRecord, FeatureMaps, Values};
use crate::error::{param, Result};
use crate::linalg::GramState;
use crate::planner::PlanningModel;

/// Which confidence set the exploration bonus is calibrated to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BonusForm {
    /// Frobenius set, width `sqrt(d' beta)`: bonus `2 C_psi H sqrt(d' beta_n)`.
    #[default]
    Frobenius,
    /// (2,1) set, width `d' sqrt(beta)`: bonus `2 C_psi H d' sqrt(beta_n)`.
    TwoOne,
    /// Bonus `2 L_psi H sqrt(beta_n)`.
    LPsi,
}

/// Radii `beta_n(delta)` of the single-task confidence sets.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfidenceSchedule {
    pub delta: f64,
    pub lambda: f64,
    pub s_bound: f64,
    pub l_phi: f64,
    pub l_psi: f64,
    pub c_psi: f64,
    /// `||K_psi^{-1}|| L_psi + S L_phi`.
    pub r_sub: f64,
    pub d: usize,
    pub d_prime: usize,
    pub horizon: usize,
    pub form: BonusForm,
}

impl ConfidenceSchedule {
    pub fn new(
        features: &FeatureMaps,
        s_bound: f64,
        lambda: f64,
        delta: f64,
        horizon: usize,
        form: BonusForm,
    ) -> Result<Self> {
        if !(delta > 0.0 && delta < 1.0) {
            return param(format!("delta must lie in (0, 1), got {delta}"));
        }
        if !(lambda > 0.0) || !(s_bound > 0.0) || horizon == 0 {
            return param("lambda, S and H must be positive");
        }
        let r_sub = features.k_psi_inv_norm() * features.l_psi + s_bound * features.l_phi;
        Ok(Self {
            delta,
            lambda,
            s_bound,
            l_phi: features.l_phi,
            l_psi: features.l_psi,
            c_psi: features.c_psi,
            r_sub,
            d: features.d(),
            d_prime: features.d_prime(),
            horizon,
            form,
        })
    }

    /// `sqrt(beta_n) = R sqrt(d log((d' + d' n H L_phi^2 / lambda) / delta)) + sqrt(lambda) S`.
    pub fn sqrt_beta(&self, n: usize) -> f64 {
        let dp = self.d_prime as f64;
        let growth = dp + dp * n as f64 * self.horizon as f64 * self.l_phi * self.l_phi / self.lambda;
        self.r_sub * (self.d as f64 * (growth / self.delta).ln()).sqrt() + self.lambda.sqrt() * self.s_bound
    }

    pub fn beta(&self, n: usize) -> f64 {
        self.sqrt_beta(n).powi(2)
    }

    /// Width of the Frobenius set, `sqrt(d' beta_n)`.
    pub fn frobenius_radius(&self, n: usize) -> f64 {
        (self.d_prime as f64).sqrt() * self.sqrt_beta(n)
    }

    /// Width of the (2,1) set, `d' sqrt(beta_n)`.
    pub fn two_one_radius(&self, n: usize) -> f64 {
        self.d_prime as f64 * self.sqrt_beta(n)
    }

    /// Theory-scale coefficient multiplying `||phi||_{Sigma_n^{-1}}`.
    pub fn bonus_coef(&self, n: usize) -> f64 {
        let h = self.horizon as f64;
        match self.form {
            BonusForm::Frobenius => 2.0 * self.c_psi * h * self.frobenius_radius(n),
            BonusForm::TwoOne => 2.0 * self.c_psi * h * self.two_one_radius(n),
            BonusForm::LPsi => 2.0 * self.l_psi * h * self.sqrt_beta(n),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Membership {
    pub lhs: f64,
    pub radius: f64,
    pub member: bool,
}

/// One MatrixRL learner. Estimates change only at episode boundaries.
#[derive(Debug, Clone)]
pub struct SingleAgent {
    features: FeatureMaps,
    gram: GramState,
    m_tilde: DMatrix<f64>,
    schedule: ConfidenceSchedule,
    bonus_scale: f64,
    /// 1-based index of the next episode to be played.
    episode: usize,
}

impl SingleAgent {
    pub fn new(features: FeatureMaps, schedule: ConfidenceSchedule, bonus_scale: f64) -> Result<Self> {
        if !(bonus_scale >= 0.0) {
            return param("bonus scale must be nonnegative");
        }
        let gram = GramState::with_targets(features.d(), features.d_prime(), schedule.lambda)?;
        let m_tilde = DMatrix::zeros(features.d(), features.d_prime());
        Ok(Self { features, gram, m_tilde, schedule, bonus_scale, episode: 1 })
    }

    pub fn episode(&self) -> usize {
        self.episode
    }

    pub fn gram(&self) -> &GramState {
        &self.gram
    }

    pub fn m_tilde(&self) -> &DMatrix<f64> {
        &self.m_tilde
    }

    pub fn schedule(&self) -> &ConfidenceSchedule {
        &self.schedule
    }

    pub fn features(&self) -> &FeatureMaps {
        &self.features
    }

    /// Bonus coefficient actually used this episode (theory coefficient times scale).
    pub fn bonus_coef(&self) -> f64 {
        self.bonus_scale * self.schedule.bonus_coef(self.episode)
    }

    pub fn planning_model(&self, rewards: &DMatrix<f64>) -> PlanningModel {
        PlanningModel::new(&self.features, &self.m_tilde, &self.gram, rewards)
    }

    pub fn plan(&self, rewards: &DMatrix<f64>) -> Values {
        self.planning_model(rewards).plan(self.bonus_coef(), self.schedule.horizon)
    }

    /// Absorbs the episode's `(phi, K_psi^{-1} psi(s'))` pairs and refreshes the estimate.
    pub fn update(&mut self, record: &EpisodeRecord) -> Result<()> {
        if record.steps.len() != self.schedule.horizon {
            return param("episode length differs from the horizon");
        }
        for step in &record.steps {
            let phi = self.features.phi(step.state, step.action);
            self.gram.absorb(&phi, &self.features.psi_tilde(step.next_state))?;
        }
        self.m_tilde = self.gram.ridge_solve();
        self.episode += 1;
        Ok(())
    }

    /// Whether `truth` lies in the current Frobenius set, with its width scaled by `radius_mult`.
    pub fn frobenius_membership(&self, truth: &DMatrix<f64>, radius_mult: f64) -> Membership {
        let lhs = self.gram.weighted_frobenius_sq(&(truth - &self.m_tilde)).sqrt();
        let radius = radius_mult * self.schedule.frobenius_radius(self.episode);
        Membership { lhs, radius, member: lhs <= radius }
    }

    /// Whether `truth` lies in the current (2,1) set.
    pub fn two_one_membership(&self, truth: &DMatrix<f64>, radius_mult: f64) -> Membership {
        let diff = truth - &self.m_tilde;
        let lhs = diff.column_iter().map(|c| self.gram.weighted_frobenius_sq(&DMatrix::from_column_slice(c.len(), 1, c.as_slice())).sqrt()).sum();
        let radius = radius_mult * self.schedule.two_one_radius(self.episode);
        Membership { lhs, radius, member: lhs <= radius }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{make_instance, InstanceConfig, Policy, StartRule, TaskFamily};
    use crate::rng::{substream, Purpose};
    use nalgebra::DVector;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn family(seed: u64) -> TaskFamily {
        make_instance(&InstanceConfig {
            n_states: 4,
            n_actions: 2,
            d: 3,
            d_prime: 4,
            r: 2,
            tasks: 1,
            seed,
            anchors_per_row: 2,
            start: StartRule::Fixed,
        })
        .unwrap()
    }

    /// Straight transcription of the radius formula, kept separate from the implementation.
    fn sqrt_beta_reference(r: f64, d: f64, dp: f64, n: f64, h: f64, l: f64, lambda: f64, delta: f64, s: f64) -> f64 {
        let inner = (dp + dp * n * h * l.powi(2) / lambda) / delta;
        r * (d * inner.ln()).sqrt() + lambda.sqrt() * s
    }

    #[test]
    fn radius_degenerate_and_reference() {
        let fam = family(0);
        let f = fam.features_for(0);
        let mut sched = ConfidenceSchedule::new(f, 1.0, 1.0, 0.1, 5, BonusForm::Frobenius).unwrap();
        sched.r_sub = 0.0;
        assert!((sched.sqrt_beta(1) - 1.0).abs() < 1e-15);

        let sched = ConfidenceSchedule::new(f, 0.8, 0.5, 0.05, 3, BonusForm::Frobenius).unwrap();
        assert!((sched.r_sub - (1.0 + 0.8)).abs() < 1e-12);
        for n in [1usize, 7, 100, 5000] {
            let want = sqrt_beta_reference(1.8, 3.0, 4.0, n as f64, 3.0, 1.0, 0.5, 0.05, 0.8);
            assert!((sched.sqrt_beta(n) - want).abs() < 1e-12 * want);
        }
        assert!((sched.frobenius_radius(3) - 2.0 * sched.sqrt_beta(3)).abs() < 1e-12);
        assert!((sched.two_one_radius(3) - 4.0 * sched.sqrt_beta(3)).abs() < 1e-12);
        let c = sched.c_psi;
        assert!((sched.bonus_coef(3) - 2.0 * c * 3.0 * sched.frobenius_radius(3)).abs() < 1e-9);
    }

    #[test]
    fn beta_nondecreasing() {
        let fam = family(1);
        for form in [BonusForm::Frobenius, BonusForm::TwoOne, BonusForm::LPsi] {
            let sched = ConfidenceSchedule::new(fam.features_for(0), 0.9, 1.0, 0.1, 4, form).unwrap();
            let mut prev = 0.0;
            for n in 1..=1000 {
                let b = sched.beta(n);
                assert!(b >= prev);
                prev = b;
            }
        }
    }

    #[test]
    fn bad_schedule_parameters() {
        let fam = family(1);
        let f = fam.features_for(0);
        assert!(ConfidenceSchedule::new(f, 1.0, 1.0, 0.0, 4, BonusForm::Frobenius).is_err());
        assert!(ConfidenceSchedule::new(f, 1.0, 1.0, 1.0, 4, BonusForm::Frobenius).is_err());
        assert!(ConfidenceSchedule::new(f, 1.0, 0.0, 0.1, 4, BonusForm::Frobenius).is_err());
    }

    fn agent(fam: &TaskFamily, horizon: usize, scale: f64) -> SingleAgent {
        let f = fam.features_for(0).clone();
        let sched = ConfidenceSchedule::new(&f, fam.cores[0].s_bound, 1.0, 0.1, horizon, BonusForm::Frobenius).unwrap();
        SingleAgent::new(f, sched, scale).unwrap()
    }

    #[test]
    fn fresh_agent_has_zero_estimate() {
        let fam = family(2);
        let a = agent(&fam, 3, 1.0);
        assert_eq!(a.m_tilde(), &DMatrix::zeros(3, 4));
        assert_eq!(a.episode(), 1);
    }

    #[test]
    fn incremental_updates_equal_batch_refit() {
        let fam = family(3);
        let mdp = fam.mdp(0);
        let mut a = agent(&fam, 4, 1.0);
        let mut batch_xs = Vec::new();
        for n in 0..30 {
            let policy = a.plan(&mdp.rewards).greedy_policy();
            let mut rng = substream(3, Purpose::Transitions(0), 0, n);
            let rec = mdp.rollout(&policy, 0, 0, n, &mut rng).unwrap();
            for st in &rec.steps {
                batch_xs.push((a.features().phi(st.state, st.action), a.features().psi_tilde(st.next_state)));
            }
            a.update(&rec).unwrap();
        }
        let (d, dp) = (3, 4);
        let mut sigma = DMatrix::<f64>::identity(d, d);
        let mut target = DMatrix::<f64>::zeros(d, dp);
        for (x, y) in &batch_xs {
            sigma += x * x.transpose();
            target += x * y.transpose();
        }
        let batch = sigma.try_inverse().unwrap() * target;
        assert!((a.m_tilde() - &batch).norm() <= 1e-9 * batch.norm().max(1.0));
        assert_eq!(a.episode(), 31);
    }

    #[test]
    fn wrong_length_episode_rejected() {
        let fam = family(3);
        let mut a = agent(&fam, 4, 1.0);
        let rec = EpisodeRecord { task: 0, episode: 0, start_state: 0, steps: vec![] };
        assert!(a.update(&rec).is_err());
    }

    #[test]
    fn optimism_on_covered_episodes() {
        for seed in 0..4u64 {
            let fam = family(10 + seed);
            let mdp = fam.mdp(0);
            let h = 3;
            let star = mdp.exact_values(h).v[0][0];
            let mut a = agent(&fam, h, 1.0);
            for n in 0..50 {
                let vals = a.plan(&mdp.rewards);
                assert!(vals.v.iter().flatten().all(|&x| (0.0..=h as f64).contains(&x)));
                if a.frobenius_membership(&fam.cores[0].m, 1.0).member {
                    assert!(vals.v[0][0] >= star - 1e-9);
                }
                let mut rng = substream(seed, Purpose::Transitions(0), 0, n);
                let rec = mdp.rollout(&vals.greedy_policy(), 0, 0, n, &mut rng).unwrap();
                a.update(&rec).unwrap();
            }
        }
    }

    #[test]
    fn bonus_dominates_sampled_set_members() {
        // At every layer the bonus-form Q upper-bounds r + phi^T M Psi^T V_{h+1}
        // for any M in the Frobenius set, with the same continuation values.
        let fam = family(5);
        let mdp = fam.mdp(0);
        let h = 3;
        let mut a = agent(&fam, h, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for n in 0..10 {
            let vals = a.plan(&mdp.rewards);
            let radius = a.schedule().frobenius_radius(a.episode());
            let l = a.gram().chol_l();
            let f = a.features();
            for _ in 0..50 {
                let z = DMatrix::from_fn(3, 4, |_, _| rng.random::<f64>() * 2.0 - 1.0);
                let z = &z * (radius * rng.random::<f64>() / z.norm());
                // ||L^T D||_F = ||Z||_F  <=>  D = L^{-T} Z.
                let delta = l.transpose().solve_upper_triangular(&z).unwrap();
                let member = a.m_tilde() + &delta;
                assert!(a.gram().weighted_frobenius_sq(&delta).sqrt() <= radius * (1.0 + 1e-9));
                for step in 0..h {
                    let next: &DVector<f64> = &vals.v[step + 1];
                    for s in 0..4 {
                        for act in 0..2 {
                            let set_q = mdp.rewards[(s, act)]
                                + (f.phi(s, act).transpose() * &member * f.psi_matrix().transpose() * next)[0];
                            assert!(vals.q[step][(s, act)] >= set_q - 1e-9);
                        }
                    }
                }
            }
            let mut env_rng = substream(5, Purpose::Transitions(0), 0, n);
            let rec = mdp.rollout(&vals.greedy_policy(), 0, 0, n, &mut env_rng).unwrap();
            a.update(&rec).unwrap();
        }
    }

    #[test]
    fn deterministic_mdp_is_learned() {
        // Deterministic transitions, full excitation: every (s, a) visited.
        let (ns, na) = (6usize, 2usize);
        let phi = DMatrix::<f64>::identity(ns * na, ns * na);
        let f = FeatureMaps::indicator_psi(ns, na, phi, 1.0).unwrap();
        let m = DMatrix::from_fn(ns * na, ns, |i, j| if (i * 5 + 1) % ns == j { 1.0 } else { 0.0 });
        let core = crate::env::TransitionCore { m: m.clone(), s_bound: 2.0 };
        let rewards = DMatrix::from_fn(ns, na, |s, a| ((s + a) % 3) as f64 / 2.0);
        let mdp = crate::env::TaskMdp::new(&core, &f, rewards.clone());
        let sched = ConfidenceSchedule::new(&f, 2.0, 1.0, 0.1, 5, BonusForm::Frobenius).unwrap();
        let mut a = SingleAgent::new(f.clone(), sched, 0.02).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for n in 0..2000 {
            // Uniform exploration policy so that every pair keeps being excited.
            let actions = (0..5).map(|_| (0..ns).map(|_| rng.random_range(0..na)).collect()).collect();
            let start = rng.random_range(0..ns);
            let rec = mdp.rollout(&Policy { actions }, start, 0, n, &mut rng).unwrap();
            a.update(&rec).unwrap();
        }
        let est = f.phi_matrix() * a.m_tilde() * f.psi_matrix().transpose();
        let truth = f.phi_matrix() * &m * f.psi_matrix().transpose();
        assert!((est - truth).amax() < 0.05);
    }
}
