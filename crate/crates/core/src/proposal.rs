//! Adaptive Gaussian random-walk proposal.
//!
//! The proposal tracks the weighted mean and covariance of every chain state
//! it has absorbed. Draws are taken from `N(center, (γ^stage · scale)² cov + ε I)`
//! where `γ` is the delayed-rejection shrink factor, so all stages share one
//! Cholesky factor.

use nalgebra::{Cholesky, DMatrix};

use crate::error::{Error, Result};
use crate::rng::RngState;

const EPSILON_FLOOR: f64 = 1e-300;
const FACTORIZE_RETRIES: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NotPositiveDefinite {
    pub epsilon: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdaptationRecord {
    pub iteration: u64,
    pub measure: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProposalState {
    pub mean: Vec<f64>,
    pub cov: DMatrix<f64>,
    /// Lower Cholesky factor of `scale²·cov + epsilon·I`.
    pub chol_lower: DMatrix<f64>,
    pub scale: f64,
    /// Relative regularization; `epsilon` is recomputed from it on every
    /// factorization as `epsilon_factor · tr(cov) / ndim`.
    pub epsilon_factor: f64,
    pub epsilon: f64,
    /// Total weight absorbed.
    pub sample_count: u64,
    /// Number of distinct chain rows absorbed.
    pub distinct_count: u64,
    pub adaptation_count: u64,
}

impl ProposalState {
    pub fn new(
        mean: Vec<f64>,
        cov: DMatrix<f64>,
        scale: f64,
        epsilon_factor: f64,
    ) -> std::result::Result<Self, NotPositiveDefinite> {
        let d = mean.len();
        let mut state = ProposalState {
            mean,
            cov,
            chol_lower: DMatrix::zeros(d, d),
            scale,
            epsilon_factor,
            epsilon: 0.0,
            sample_count: 0,
            distinct_count: 0,
            adaptation_count: 0,
        };
        state.factorize()?;
        Ok(state)
    }

    /// Identity covariance centred on `start`, nothing absorbed yet.
    pub fn initial(start: &[f64], scale: f64, epsilon_factor: f64) -> Self {
        let d = start.len();
        Self::new(start.to_vec(), DMatrix::identity(d, d), scale, epsilon_factor)
            .expect("identity covariance factorizes")
    }

    pub fn ndim(&self) -> usize {
        self.mean.len()
    }

    pub fn effective_cov(&self) -> DMatrix<f64> {
        let d = self.ndim();
        let mut m = &self.cov * (self.scale * self.scale);
        for i in 0..d {
            m[(i, i)] += self.epsilon;
        }
        m
    }

    /// Refreshes `chol_lower`. On failure `epsilon` is doubled and the
    /// factorization retried, up to ten times.
    pub fn factorize(&mut self) -> std::result::Result<(), NotPositiveDefinite> {
        let d = self.ndim();
        let trace: f64 = (0..d).map(|i| self.cov[(i, i)]).sum();
        self.epsilon = (self.epsilon_factor * trace / d as f64).max(EPSILON_FLOOR);
        for attempt in 0..=FACTORIZE_RETRIES {
            if attempt > 0 {
                self.epsilon *= 2.0;
            }
            let m = self.effective_cov();
            if let Some(ch) = Cholesky::new(m) {
                self.chol_lower = ch.l();
                return Ok(());
            }
        }
        Err(NotPositiveDefinite { epsilon: self.epsilon })
    }

    /// Absorbs weighted states into the running mean/covariance (population
    /// normalization) and refactorizes. Batches combine exactly, so absorbing
    /// in pieces matches absorbing all at once.
    pub fn update_mean_cov(
        &self,
        batch: &[(&[f64], u64)],
    ) -> std::result::Result<ProposalState, NotPositiveDefinite> {
        let mut next = self.clone();
        next.absorb(batch);
        next.factorize()?;
        Ok(next)
    }

    fn absorb(&mut self, batch: &[(&[f64], u64)]) {
        let d = self.ndim();
        let total: u64 = batch.iter().map(|(_, w)| *w).sum();
        if total == 0 {
            return;
        }
        let wb = total as f64;
        let mut batch_mean = vec![0.0; d];
        for (x, w) in batch {
            for i in 0..d {
                batch_mean[i] += *w as f64 * x[i];
            }
        }
        batch_mean.iter_mut().for_each(|m| *m /= wb);
        let mut batch_m2 = DMatrix::<f64>::zeros(d, d);
        let mut dev = vec![0.0; d];
        for (x, w) in batch {
            let w = *w as f64;
            for i in 0..d {
                dev[i] = x[i] - batch_mean[i];
            }
            for i in 0..d {
                for j in 0..=i {
                    batch_m2[(i, j)] += w * dev[i] * dev[j];
                }
            }
        }
        fill_upper(&mut batch_m2);

        if self.sample_count == 0 {
            self.mean = batch_mean;
            self.cov = batch_m2 / wb;
        } else {
            let wa = self.sample_count as f64;
            let n = wa + wb;
            let delta: Vec<f64> = (0..d).map(|i| batch_mean[i] - self.mean[i]).collect();
            let mut m2 = &self.cov * wa + batch_m2;
            let c = wa * wb / n;
            for i in 0..d {
                for j in 0..=i {
                    m2[(i, j)] += delta[i] * delta[j] * c;
                }
            }
            fill_upper(&mut m2);
            for i in 0..d {
                self.mean[i] += delta[i] * wb / n;
            }
            self.cov = m2 / n;
        }
        self.sample_count += total;
        self.distinct_count += batch.len() as u64;
    }

    /// Discards the accumulated statistics and restarts them from `batch`.
    pub fn recentered(
        &self,
        batch: &[(&[f64], u64)],
    ) -> std::result::Result<ProposalState, NotPositiveDefinite> {
        let mut next = self.clone();
        next.sample_count = 0;
        next.distinct_count = 0;
        next.absorb(batch);
        next.factorize()?;
        Ok(next)
    }

    /// `center + γ^stage · L z` for caller-supplied standard deviates.
    pub fn propose_with(&self, center: &[f64], dr_scale_factor: f64, stage: usize, z: &[f64]) -> Vec<f64> {
        let d = self.ndim();
        let f = dr_scale_factor.powi(stage as i32);
        let mut out = center.to_vec();
        for i in 0..d {
            let mut acc = 0.0;
            for j in 0..=i {
                acc += self.chol_lower[(i, j)] * z[j];
            }
            out[i] += f * acc;
        }
        out
    }

    /// Draws one candidate, consuming exactly `ndim` normal deviates in
    /// coordinate order whatever the stage.
    pub fn propose(&self, center: &[f64], dr_scale_factor: f64, stage: usize, rng: &mut RngState) -> Vec<f64> {
        let mut z = vec![0.0; self.ndim()];
        rng.fill_gauss(&mut z);
        self.propose_with(center, dr_scale_factor, stage, &z)
    }

    /// Log of the stage kernel density of `to` given `from`, without the
    /// normalizing constant (it cancels in every acceptance ratio).
    pub fn log_kernel(&self, from: &[f64], to: &[f64], dr_scale_factor: f64, stage: usize) -> f64 {
        let f = dr_scale_factor.powi(stage as i32);
        let diff: Vec<f64> = to.iter().zip(from).map(|(a, b)| a - b).collect();
        -0.5 * forward_solve_norm_sq(&self.chol_lower, &diff) / (f * f)
    }
}

fn fill_upper(m: &mut DMatrix<f64>) {
    let d = m.nrows();
    for i in 0..d {
        for j in 0..i {
            m[(j, i)] = m[(i, j)];
        }
    }
}

/// `|L⁻¹ b|²` for lower-triangular `L`.
fn forward_solve_norm_sq(l: &DMatrix<f64>, b: &[f64]) -> f64 {
    let d = b.len();
    let mut v = vec![0.0; d];
    for i in 0..d {
        let mut acc = b[i];
        for j in 0..i {
            acc -= l[(i, j)] * v[j];
        }
        v[i] = acc / l[(i, i)];
    }
    v.iter().map(|t| t * t).sum()
}

fn log_det_from_chol(l: &DMatrix<f64>) -> f64 {
    (0..l.nrows()).map(|i| 2.0 * l[(i, i)].ln()).sum()
}

/// Upper bound on the total variation distance between the effective
/// Gaussians of two proposals: `sqrt(H² (2 − H²))` with `H²` the squared
/// Hellinger distance `1 − BC`. Returns a value in [0, 1].
pub fn adaptation_measure(old: &ProposalState, new: &ProposalState) -> Result<f64> {
    if old.ndim() != new.ndim() {
        return Err(Error::Usage(format!(
            "proposal dimensions differ: {} vs {}",
            old.ndim(),
            new.ndim()
        )));
    }
    let s1 = old.effective_cov();
    let s2 = new.effective_cov();
    let avg = (&s1 + &s2) * 0.5;
    let l_avg = Cholesky::new(avg)
        .ok_or_else(|| Error::Numerical {
            iteration: 0,
            msg: "average proposal covariance is singular".into(),
        })?
        .l();
    let l1 = Cholesky::new(s1).map(|c| c.l()).unwrap_or_else(|| old.chol_lower.clone());
    let l2 = Cholesky::new(s2).map(|c| c.l()).unwrap_or_else(|| new.chol_lower.clone());
    let dmu: Vec<f64> = new.mean.iter().zip(&old.mean).map(|(a, b)| a - b).collect();
    let maha = forward_solve_norm_sq(&l_avg, &dmu);
    let log_bc = 0.25 * log_det_from_chol(&l1) + 0.25 * log_det_from_chol(&l2)
        - 0.5 * log_det_from_chol(&l_avg)
        - 0.125 * maha;
    // H² = 1 − BC, evaluated through expm1 to keep tiny distances accurate.
    let h2 = (-log_bc.min(0.0).exp_m1()).clamp(0.0, 1.0);
    Ok((h2 * (2.0 - h2)).sqrt().clamp(0.0, 1.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_pass(points: &[Vec<f64>]) -> (Vec<f64>, DMatrix<f64>) {
        let n = points.len() as f64;
        let d = points[0].len();
        let mean: Vec<f64> = (0..d).map(|i| points.iter().map(|p| p[i]).sum::<f64>() / n).collect();
        let cov = DMatrix::from_fn(d, d, |i, j| {
            points.iter().map(|p| (p[i] - mean[i]) * (p[j] - mean[j])).sum::<f64>() / n
        });
        (mean, cov)
    }

    fn empty(d: usize) -> ProposalState {
        ProposalState::initial(&vec![0.0; d], 1.0, 1e-12)
    }

    #[test]
    fn single_point_gives_zero_covariance() {
        let x = [1.0, -2.0, 0.5];
        let s = empty(3).update_mean_cov(&[(&x, 1)]).unwrap();
        assert_eq!(s.mean, x.to_vec());
        assert!(s.cov.iter().all(|v| *v == 0.0));
        assert_eq!(s.epsilon, 1e-300);
        assert_eq!(s.sample_count, 1);
    }

    #[test]
    fn weighted_basis_vectors_match_two_pass() {
        let basis: Vec<Vec<f64>> = (0..4)
            .map(|k| (0..4).map(|i| if i == k { 1.0 } else { 0.0 }).collect())
            .collect();
        let batch: Vec<(&[f64], u64)> = basis.iter().map(|b| (b.as_slice(), 2)).collect();
        let s = empty(4).update_mean_cov(&batch).unwrap();
        let expanded: Vec<Vec<f64>> = basis.iter().flat_map(|b| [b.clone(), b.clone()]).collect();
        let (mean, cov) = two_pass(&expanded);
        for i in 0..4 {
            assert!((s.mean[i] - mean[i]).abs() < 1e-15);
            for j in 0..4 {
                assert!((s.cov[(i, j)] - cov[(i, j)]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn halves_equal_whole() {
        let mut rng = RngState::new(11, 0);
        let pts: Vec<Vec<f64>> = (0..50).map(|_| (0..3).map(|_| rng.gauss() * 3.0 + 1.0).collect()).collect();
        let weights: Vec<u64> = (0..50).map(|i| 1 + (i % 4) as u64).collect();
        let batch: Vec<(&[f64], u64)> = pts.iter().zip(&weights).map(|(p, w)| (p.as_slice(), *w)).collect();
        let whole = empty(3).update_mean_cov(&batch).unwrap();
        let half = empty(3).update_mean_cov(&batch[..23]).unwrap().update_mean_cov(&batch[23..]).unwrap();
        for i in 0..3 {
            assert!((whole.mean[i] - half.mean[i]).abs() <= 1e-12 * whole.mean[i].abs().max(1.0));
            for j in 0..3 {
                let a = whole.cov[(i, j)];
                assert!((a - half.cov[(i, j)]).abs() <= 1e-12 * a.abs().max(1.0));
            }
        }
        assert_eq!(whole.sample_count, half.sample_count);
    }

    #[test]
    fn identity_and_diagonal_factorization() {
        let s = ProposalState::new(vec![0.0; 3], DMatrix::identity(3, 3), 1.0, 1e-12).unwrap();
        assert!((s.chol_lower.clone() - DMatrix::<f64>::identity(3, 3)).amax() < 1e-11);
        let s = ProposalState::new(vec![0.0; 2], DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![4.0, 9.0])), 1.0, 1e-300).unwrap();
        assert!((s.chol_lower[(0, 0)] - 2.0).abs() < 1e-12);
        assert!((s.chol_lower[(1, 1)] - 3.0).abs() < 1e-12);
        assert_eq!(s.chol_lower[(1, 0)], 0.0);
    }

    #[test]
    fn random_spd_reconstruction() {
        let mut rng = RngState::new(3, 3);
        let m = DMatrix::from_fn(4, 4, |_, _| rng.gauss());
        let a = &m * m.transpose() + DMatrix::<f64>::identity(4, 4) * 0.1;
        let s = ProposalState::new(vec![0.0; 4], a, 1.3, 1e-12).unwrap();
        let recon = &s.chol_lower * s.chol_lower.transpose();
        let target = s.effective_cov();
        assert!((recon - &target).norm() / target.norm() < 1e-10);
    }

    #[test]
    fn factorization_failure_after_retries() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        let err = ProposalState::new(vec![0.0; 2], cov, 1.0, 1e-12).unwrap_err();
        assert!(err.epsilon > 0.0);
    }

    #[test]
    fn zero_deviates_return_center() {
        let s = ProposalState::initial(&[0.0; 4], 1.0, 1e-12);
        let c = [0.5, -1.0, 2.0, 3.0];
        assert_eq!(s.propose_with(&c, 0.5, 0, &[0.0; 4]), c.to_vec());
    }

    #[test]
    fn unit_deviate_steps_along_axis() {
        let mut s = ProposalState::initial(&[0.0; 4], 1.0, 1e-12);
        s.chol_lower = DMatrix::identity(4, 4);
        let c = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(s.propose_with(&c, 0.5, 0, &[1.0, 0.0, 0.0, 0.0]), vec![2.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.propose_with(&c, 0.5, 1, &[1.0, 0.0, 0.0, 0.0]), vec![1.5, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn propose_consumes_fixed_deviates_per_stage() {
        let s = ProposalState::initial(&[0.0; 3], 1.0, 1e-12);
        let mut a = RngState::new(1, 1);
        let mut b = a;
        s.propose(&[0.0; 3], 0.5, 0, &mut a);
        s.propose(&[0.0; 3], 0.5, 2, &mut b);
        assert_eq!(a, b);
    }

    #[test]
    fn empirical_proposal_covariance() {
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 1.0]);
        let s = ProposalState::new(vec![0.0; 2], cov, 0.8, 1e-12).unwrap();
        let mut rng = RngState::new(21, 0);
        let center = [1.0, -1.0];
        let n = 100_000;
        let draws: Vec<Vec<f64>> = (0..n).map(|_| s.propose(&center, 0.5, 0, &mut rng)).collect();
        let (_, emp) = two_pass(&draws);
        let target = s.effective_cov();
        assert!((emp - &target).norm() / target.norm() < 0.05);
    }

    #[test]
    fn measure_zero_for_identical() {
        let cov = DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 1.0]);
        let s = ProposalState::new(vec![0.3, 0.1], cov, 1.1, 1e-12).unwrap();
        assert_eq!(adaptation_measure(&s, &s.clone()).unwrap(), 0.0);
    }

    #[test]
    fn measure_tends_to_one_for_distant_means() {
        let a = ProposalState::initial(&[0.0, 0.0], 1.0, 1e-12);
        let b = ProposalState::initial(&[1e3, 0.0], 1.0, 1e-12);
        let m = adaptation_measure(&a, &b).unwrap();
        assert!((m - 1.0).abs() < 1e-12);
    }

    #[test]
    fn measure_one_dimensional_closed_form() {
        // N(0,1) vs N(0,4): BC = sqrt(2·1·2/(1+4)), H² = 1 − BC.
        let a = ProposalState::new(vec![0.0], DMatrix::from_element(1, 1, 1.0), 1.0, 1e-300).unwrap();
        let b = ProposalState::new(vec![0.0], DMatrix::from_element(1, 1, 4.0), 1.0, 1e-300).unwrap();
        let bc = (2.0 * 1.0 * 2.0 / 5.0f64).sqrt();
        let h2 = 1.0 - bc;
        let expected = (h2 * (2.0 - h2)).sqrt();
        let m = adaptation_measure(&a, &b).unwrap();
        assert!((m - expected).abs() < 1e-12, "{m} vs {expected}");
        assert!((adaptation_measure(&b, &a).unwrap() - m).abs() < 1e-15);
    }
}
