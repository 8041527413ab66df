//! Positive-definite Gram bookkeeping and the determinant-lemma verifiers.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{param, Result};

/// Additive slack used by every inequality check in this module.
pub const INEQ_SLACK: f64 = 1e-9;

/// Regularized design matrix `lambda I + sum phi phi^T` together with the
/// accumulated regression targets `sum phi psi_tilde^T`.
///
/// The Cholesky factor is refreshed by full refactorization on every absorb;
/// at the dimensions used here (`d <= 64`) this is cheap and sidesteps
/// drift from repeated rank-one updates.
#[derive(Debug, Clone)]
pub struct GramState {
    lambda: f64,
    sigma: DMatrix<f64>,
    chol: Cholesky<f64, Dyn>,
    target: DMatrix<f64>,
    target_sq: f64,
    count: usize,
}

impl GramState {
    /// Design-only state (no regression targets).
    pub fn new(dim: usize, lambda: f64) -> Result<Self> {
        Self::with_targets(dim, 0, lambda)
    }

    pub fn with_targets(dim: usize, out_dim: usize, lambda: f64) -> Result<Self> {
        if dim == 0 {
            return param("gram dimension must be positive");
        }
        if !(lambda > 0.0) || !lambda.is_finite() {
            return param(format!("ridge regularizer must be positive, got {lambda}"));
        }
        let sigma = DMatrix::identity(dim, dim) * lambda;
        let chol = Cholesky::new(sigma.clone()).expect("lambda I is positive definite");
        Ok(Self {
            lambda,
            sigma,
            chol,
            target: DMatrix::zeros(dim, out_dim),
            target_sq: 0.0,
            count: 0,
        })
    }

    pub fn dim(&self) -> usize {
        self.sigma.nrows()
    }

    pub fn out_dim(&self) -> usize {
        self.target.ncols()
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn chol_l(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    pub fn target(&self) -> &DMatrix<f64> {
        &self.target
    }

    /// Accumulated `sum ||psi_tilde||^2`, needed to evaluate least-squares objectives
    /// from sufficient statistics.
    pub fn target_sq(&self) -> f64 {
        self.target_sq
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// `sigma - lambda I`, the unregularized data Gram.
    pub fn data_gram(&self) -> DMatrix<f64> {
        let mut g = self.sigma.clone();
        for i in 0..g.nrows() {
            g[(i, i)] -= self.lambda;
        }
        g
    }

    pub fn absorb(&mut self, phi: &DVector<f64>, psi_tilde: &DVector<f64>) -> Result<()> {
        if phi.len() != self.dim() || psi_tilde.len() != self.out_dim() {
            return param(format!(
                "absorb: expected ({}, {}) got ({}, {})",
                self.dim(),
                self.out_dim(),
                phi.len(),
                psi_tilde.len()
            ));
        }
        self.sigma.ger(1.0, phi, phi, 1.0);
        self.target.ger(1.0, phi, psi_tilde, 1.0);
        self.target_sq += psi_tilde.norm_squared();
        self.count += 1;
        self.refactor();
        Ok(())
    }

    /// Design-only absorb for states built with [`GramState::new`].
    pub fn absorb_feature(&mut self, phi: &DVector<f64>) -> Result<()> {
        let empty = DVector::zeros(self.out_dim());
        if self.out_dim() != 0 {
            return param("absorb_feature on a state that carries regression targets");
        }
        self.absorb(phi, &empty)
    }

    fn refactor(&mut self) {
        // Re-symmetrize so rounding in the outer products cannot accumulate.
        let s = &mut self.sigma;
        for i in 0..s.nrows() {
            for j in 0..i {
                let v = 0.5 * (s[(i, j)] + s[(j, i)]);
                s[(i, j)] = v;
                s[(j, i)] = v;
            }
        }
        self.chol = Cholesky::new(self.sigma.clone())
            .expect("lambda I plus PSD terms stays positive definite");
    }

    /// Ridge estimate `sigma^{-1} target`; column `i` minimizes the per-column
    /// ridge objective.
    pub fn ridge_solve(&self) -> DMatrix<f64> {
        self.chol.solve(&self.target)
    }

    pub fn solve(&self, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(rhs)
    }

    pub fn inv_norm_sq(&self, x: &DVector<f64>) -> f64 {
        assert_eq!(x.len(), self.dim(), "inv_norm: dimension mismatch");
        let l = self.chol.l_dirty();
        let mut y = x.clone();
        // Forward substitution against the lower factor: ||L^{-1} x||^2 = x^T sigma^{-1} x.
        l.solve_lower_triangular_mut(&mut y);
        y.norm_squared()
    }

    /// `sqrt(x^T sigma^{-1} x)`.
    pub fn inv_norm(&self, x: &DVector<f64>) -> f64 {
        self.inv_norm_sq(x).sqrt()
    }

    pub fn log_det(&self) -> f64 {
        log_det_from_chol(&self.chol)
    }

    /// `||sigma^{1/2} D||_F^2 = tr(D^T sigma D)`.
    pub fn weighted_frobenius_sq(&self, delta: &DMatrix<f64>) -> f64 {
        assert_eq!(delta.nrows(), self.dim());
        let sd = &self.sigma * delta;
        delta.component_mul(&sd).sum().max(0.0)
    }
}

fn log_det_from_chol(chol: &Cholesky<f64, Dyn>) -> f64 {
    let l = chol.l_dirty();
    2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
}

/// Log-determinant of a symmetric positive-definite matrix.
pub fn log_det_spd(m: &DMatrix<f64>) -> Option<f64> {
    Cholesky::new(m.clone()).map(|c| log_det_from_chol(&c))
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct LemmaReport {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

impl LemmaReport {
    fn new(lhs: f64, rhs: f64) -> Self {
        Self { lhs, rhs, holds: lhs <= rhs + INEQ_SLACK }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct DetLemmaReport {
    /// `sum_q min(b, ||x_q||^2_{D_q^{-1}})` against `(1+b) d log(1 + M L^2/(lambda d))`.
    pub potential: LemmaReport,
    /// `log(det D_{M+1} / det(lambda I))` against `d log(1 + M L^2/(lambda d))`.
    pub log_det: LemmaReport,
}

impl DetLemmaReport {
    pub fn holds(&self) -> bool {
        self.potential.holds && self.log_det.holds
    }
}

fn max_norm<'a>(xs: impl IntoIterator<Item = &'a DVector<f64>>) -> f64 {
    xs.into_iter().map(|x| x.norm()).fold(0.0, f64::max)
}

/// Elliptical-potential check over a sequence of vectors, with `L` taken as
/// the largest norm in the sequence.
pub fn check_det_lemma(xs: &[DVector<f64>], lambda: f64, b: f64) -> Result<DetLemmaReport> {
    if !(b > 0.0) {
        return param("check_det_lemma: b must be positive");
    }
    if xs.is_empty() {
        let zero = LemmaReport::new(0.0, 0.0);
        GramState::new(1, lambda)?;
        return Ok(DetLemmaReport { potential: zero, log_det: zero });
    }
    let d = xs[0].len();
    if xs.iter().any(|x| x.len() != d) {
        return param("check_det_lemma: ragged vector sequence");
    }
    let mut gram = GramState::new(d, lambda)?;
    let mut potential = 0.0;
    for x in xs {
        potential += b.min(gram.inv_norm_sq(x));
        gram.absorb_feature(x)?;
    }
    let l = max_norm(xs);
    let m = xs.len() as f64;
    let dd = d as f64;
    let growth = dd * (1.0 + m * l * l / (lambda * dd)).ln();
    let ratio = gram.log_det() - dd * lambda.ln();
    Ok(DetLemmaReport {
        potential: LemmaReport::new(potential, (1.0 + b) * growth),
        log_det: LemmaReport::new(ratio, growth),
    })
}

/// Lazy (episode-frozen) inverse norms against step-updated inverse norms.
///
/// `xs[n][h]` is the vector at episode `n`, step `h`. `D_n` includes every
/// vector of episodes before `n`; `D_{n,h}` additionally includes steps
/// `h' < h` of episode `n`.
pub fn check_lazy_lemma(xs: &[Vec<DVector<f64>>], lambda: f64, horizon: usize) -> Result<LemmaReport> {
    if horizon == 0 {
        return param("check_lazy_lemma: horizon must be positive");
    }
    if xs.iter().any(|ep| ep.len() != horizon) {
        return param("check_lazy_lemma: every episode must have exactly `horizon` vectors");
    }
    let Some(d) = xs.iter().flatten().next().map(|x| x.len()) else {
        return Ok(LemmaReport::new(0.0, 0.0));
    };
    if xs.iter().flatten().any(|x| x.len() != d) {
        return param("check_lazy_lemma: ragged vector sequence");
    }
    let mut step_gram = GramState::new(d, lambda)?;
    let mut frozen_sum = 0.0;
    let mut step_sum = 0.0;
    for episode in xs {
        let frozen = step_gram.clone();
        for x in episode {
            frozen_sum += frozen.inv_norm(x);
            step_sum += step_gram.inv_norm(x);
            step_gram.absorb_feature(x)?;
        }
    }
    let l = max_norm(xs.iter().flatten());
    let ratio = step_gram.log_det() - d as f64 * lambda.ln();
    let rhs = 2.0 * step_sum + 2.0 * horizon as f64 * l / lambda.sqrt() * ratio;
    Ok(LemmaReport::new(frozen_sum, rhs))
}

/// For `B >= C > 0`: the largest probed Rayleigh ratio `x^T B x / x^T C x`
/// against `det(B) / det(C)`.
pub fn check_quadform_det(b: &DMatrix<f64>, c: &DMatrix<f64>, probes: &[DVector<f64>]) -> Result<LemmaReport> {
    if b.shape() != c.shape() || !b.is_square() {
        return param("check_quadform_det: B and C must be square and of equal shape");
    }
    let (Some(ldb), Some(ldc)) = (log_det_spd(b), log_det_spd(c)) else {
        return param("check_quadform_det: B and C must be positive definite");
    };
    let mut lhs: f64 = 0.0;
    for x in probes {
        let den = x.dot(&(c * x));
        if den > 0.0 {
            lhs = lhs.max(x.dot(&(b * x)) / den);
        }
    }
    Ok(LemmaReport::new(lhs, (ldb - ldc).exp()))
}

/// Orthonormality defect `||B^T B - I||_max`.
pub fn orthonormality_defect(b: &DMatrix<f64>) -> f64 {
    let g = b.transpose() * b;
    let mut worst: f64 = 0.0;
    for i in 0..g.nrows() {
        for j in 0..g.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            worst = worst.max((g[(i, j)] - target).abs());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
        DVector::from_fn(n, |_, _| rng.random::<f64>() * 2.0 - 1.0)
    }

    fn rel_frob(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        (a - b).norm() / b.norm().max(1e-300)
    }

    #[test]
    fn fresh_state_is_scaled_identity() {
        let g = GramState::new(3, 1.0).unwrap();
        assert_eq!(g.sigma(), &DMatrix::<f64>::identity(3, 3));
        assert_eq!(g.log_det(), 0.0);
        assert_eq!(g.count(), 0);
        let g = GramState::new(1, 2.5).unwrap();
        assert_eq!(g.sigma()[(0, 0)], 2.5);
    }

    #[test]
    fn bad_parameters_rejected() {
        assert!(GramState::new(2, 0.0).is_err());
        assert!(GramState::new(2, -1.0).is_err());
        assert!(GramState::new(0, 1.0).is_err());
        assert!(GramState::new(2, f64::NAN).is_err());
    }

    #[test]
    fn hand_rank_one_update() {
        let mut g = GramState::with_targets(2, 1, 1.0).unwrap();
        g.absorb(&DVector::from_vec(vec![1.0, 0.0]), &DVector::from_vec(vec![0.5])).unwrap();
        assert_eq!(g.sigma(), &DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 1.0]));
        assert_eq!(g.target(), &DMatrix::from_row_slice(2, 1, &[0.5, 0.0]));
        assert_eq!(g.count(), 1);
    }

    #[test]
    fn zero_vector_only_counts() {
        let mut g = GramState::with_targets(3, 2, 1.5).unwrap();
        let before = g.sigma().clone();
        g.absorb(&DVector::zeros(3), &DVector::zeros(2)).unwrap();
        assert_eq!(g.sigma(), &before);
        assert_eq!(g.count(), 1);
    }

    #[test]
    fn dimension_mismatch_is_error() {
        let mut g = GramState::with_targets(3, 2, 1.0).unwrap();
        assert!(g.absorb(&DVector::zeros(2), &DVector::zeros(2)).is_err());
        assert!(g.absorb(&DVector::zeros(3), &DVector::zeros(3)).is_err());
        assert_eq!(g.count(), 0);
    }

    #[test]
    fn absorbs_match_batch_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (d, dp, lambda) = (5, 3, 0.7);
        let mut g = GramState::with_targets(d, dp, lambda).unwrap();
        let mut batch = DMatrix::<f64>::identity(d, d) * lambda;
        for _ in 0..50 {
            let phi = rand_vec(&mut rng, d);
            g.absorb(&phi, &rand_vec(&mut rng, dp)).unwrap();
            batch += &phi * phi.transpose();
        }
        assert!(rel_frob(g.sigma(), &batch) < 1e-10);
        assert_eq!(g.count(), 50);
        let l = g.chol_l();
        assert!(rel_frob(&(&l * l.transpose()), g.sigma()) < 1e-10);
    }

    #[test]
    fn ridge_solve_hand_cases() {
        let g = GramState::with_targets(2, 3, 1.0).unwrap();
        assert_eq!(g.ridge_solve(), DMatrix::zeros(2, 3));
        let mut g = GramState::with_targets(2, 1, 1.0).unwrap();
        g.absorb(&DVector::from_vec(vec![1.0, 0.0]), &DVector::from_vec(vec![1.0])).unwrap();
        let m = g.ridge_solve();
        assert!((m[(0, 0)] - 0.5).abs() < 1e-15);
        assert!(m[(1, 0)].abs() < 1e-15);
    }

    /// Gradient descent directly on `sum ||y_i - M^T x_i||^2 + lambda ||M||_F^2`,
    /// using the raw samples rather than the accumulated statistics.
    fn ridge_by_gradient_descent(
        xs: &[DVector<f64>],
        ys: &[DVector<f64>],
        lambda: f64,
    ) -> DMatrix<f64> {
        let (d, dp) = (xs[0].len(), ys[0].len());
        // Step 1/L with L the largest Hessian eigenvalue (bounded by the trace).
        let lip = 2.0 * (lambda + xs.iter().map(|x| x.norm_squared()).sum::<f64>());
        let step = 1.0 / lip;
        let mut m = DMatrix::<f64>::zeros(d, dp);
        // Nesterov acceleration keeps the iteration count modest.
        let mut prev = m.clone();
        for k in 0..200_000 {
            let mom = (k as f64) / (k as f64 + 3.0);
            let look = &m + (&m - &prev) * mom;
            let mut grad = &look * (2.0 * lambda);
            for (x, y) in xs.iter().zip(ys) {
                let resid = look.transpose() * x - y;
                grad += x * resid.transpose() * 2.0;
            }
            prev = m;
            m = look - grad * step;
            if (&m - &prev).norm() < 1e-15 {
                break;
            }
        }
        m
    }

    #[test]
    fn ridge_matches_direct_minimization() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (d, dp, lambda) = (4, 3, 0.5);
        let xs: Vec<_> = (0..20).map(|_| rand_vec(&mut rng, d)).collect();
        let ys: Vec<_> = (0..20).map(|_| rand_vec(&mut rng, dp)).collect();
        let mut g = GramState::with_targets(d, dp, lambda).unwrap();
        for (x, y) in xs.iter().zip(&ys) {
            g.absorb(x, y).unwrap();
        }
        let oracle = ridge_by_gradient_descent(&xs, &ys, lambda);
        assert!(rel_frob(&g.ridge_solve(), &oracle) < 1e-6);
    }

    #[test]
    fn inv_norm_cases() {
        let g = GramState::new(2, 4.0).unwrap();
        assert!((g.inv_norm(&DVector::from_vec(vec![2.0, 0.0])) - 1.0).abs() < 1e-15);
        assert_eq!(g.inv_norm(&DVector::zeros(2)), 0.0);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut g = GramState::new(6, 0.3).unwrap();
        for _ in 0..15 {
            g.absorb_feature(&rand_vec(&mut rng, 6)).unwrap();
        }
        let inv = g.sigma().clone().try_inverse().unwrap();
        for _ in 0..20 {
            let x = rand_vec(&mut rng, 6);
            let explicit = x.dot(&(&inv * &x)).sqrt();
            assert!((g.inv_norm(&x) - explicit).abs() < 1e-10 * explicit.max(1.0));
        }
    }

    #[test]
    fn det_lemma_cases() {
        let e1 = DVector::from_vec(vec![1.0, 0.0, 0.0]);
        let r = check_det_lemma(std::slice::from_ref(&e1), 1.0, 1.0).unwrap();
        // D_1 = I, so ||x||^2 = 1 and min(1, 1) = 1; the (lambda + 1) form appears
        // only in the subsequent D_2.
        assert!((r.potential.lhs - 1.0).abs() < 1e-15);
        assert!(r.holds());

        let r = check_det_lemma(&[], 1.0, 1.0).unwrap();
        assert_eq!(r.potential.lhs, 0.0);
        assert!(r.holds());

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let xs: Vec<_> = (0..1000)
            .map(|_| {
                let v = rand_vec(&mut rng, 8);
                &v / v.norm()
            })
            .collect();
        assert!(check_det_lemma(&xs, 1.0, 1.0).unwrap().holds());
    }

    #[test]
    fn lazy_lemma_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let h1: Vec<Vec<_>> = (0..30).map(|_| vec![rand_vec(&mut rng, 3)]).collect();
        let r = check_lazy_lemma(&h1, 1.0, 1).unwrap();
        assert!(r.holds && r.lhs <= r.rhs);

        let zeros: Vec<Vec<_>> = (0..10).map(|_| vec![DVector::zeros(4); 3]).collect();
        let r = check_lazy_lemma(&zeros, 1.0, 3).unwrap();
        assert_eq!((r.lhs, r.rhs), (0.0, 0.0));
        assert!(r.holds);

        let xs: Vec<Vec<_>> = (0..100)
            .map(|_| (0..5).map(|_| rand_vec(&mut rng, 6) * 0.4).collect())
            .collect();
        assert!(check_lazy_lemma(&xs, 1.0, 5).unwrap().holds);
        assert!(check_lazy_lemma(&xs, 1.0, 4).is_err());
    }

    #[test]
    fn quadform_det_identity_pair() {
        let b = DMatrix::<f64>::identity(3, 3) * 2.0;
        let c = DMatrix::<f64>::identity(3, 3);
        let probes = [DVector::from_vec(vec![1.0, 2.0, 3.0])];
        let r = check_quadform_det(&b, &c, &probes).unwrap();
        assert!((r.lhs - 2.0).abs() < 1e-12);
        assert!((r.rhs - 8.0).abs() < 1e-12);
        assert!(r.holds);
    }

    #[test]
    fn orthonormality_of_identity_columns() {
        let b = DMatrix::<f64>::identity(4, 2);
        assert_eq!(orthonormality_defect(&b), 0.0);
    }
}
