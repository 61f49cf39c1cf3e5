//! Which rank supplies each accepted state follows a geometric law when every
//! worker accepts independently with probability `p`. With `n` workers only
//! ranks `1..=n` exist, so the observed law is the geometric truncated at `n`.

use crate::chain_io::CompactChain;

#[derive(Clone, Debug, PartialEq)]
pub struct ContributionStats {
    /// `counts[k-1]` = accepted states supplied by rank `k`.
    pub counts: Vec<u64>,
    pub fitted_p: f64,
    /// Total variation between the empirical and fitted laws.
    pub fit_distance: f64,
    /// Support bound used by the fit, if truncated.
    pub max_rank: Option<usize>,
}

impl ContributionStats {
    /// Rank histogram of a chain, ignoring the start row (rank 0).
    pub fn counts_from_chain(chain: &CompactChain, num_workers: usize) -> Vec<u64> {
        let top = chain.rows.iter().map(|r| r.process_id as usize).max().unwrap_or(0);
        let mut counts = vec![0u64; num_workers.max(top)];
        for r in chain.rows.iter().filter(|r| r.process_id >= 1) {
            counts[r.process_id as usize - 1] += 1;
        }
        counts
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

pub fn geometric_pmf(p: f64, k: usize) -> f64 {
    p * (1.0 - p).powi(k as i32 - 1)
}

pub fn truncated_geometric_pmf(p: f64, k: usize, n: usize) -> f64 {
    if k == 0 || k > n {
        return 0.0;
    }
    if p <= 0.0 {
        return 1.0 / n as f64;
    }
    geometric_pmf(p, k) / (1.0 - (1.0 - p).powi(n as i32))
}

fn tv(counts: &[u64], pmf: impl Fn(usize) -> f64, tail: f64) -> f64 {
    let total: u64 = counts.iter().sum();
    let body: f64 = counts
        .iter()
        .enumerate()
        .map(|(i, c)| (*c as f64 / total as f64 - pmf(i + 1)).abs())
        .sum();
    0.5 * (body + tail)
}

/// Untruncated MLE `p̂ = N / Σ k·c_k`.
pub fn fit_geometric(counts: &[u64]) -> ContributionStats {
    let n: u64 = counts.iter().sum();
    assert!(n > 0, "fit_geometric needs at least one count");
    let moment: u64 = counts.iter().enumerate().map(|(i, c)| (i as u64 + 1) * c).sum();
    let p = n as f64 / moment as f64;
    let covered: f64 = (1..=counts.len()).map(|k| geometric_pmf(p, k)).sum();
    ContributionStats {
        counts: counts.to_vec(),
        fitted_p: p,
        fit_distance: tv(counts, |k| geometric_pmf(p, k), (1.0 - covered).max(0.0)),
        max_rank: None,
    }
}

fn truncated_mean(p: f64, n: usize) -> f64 {
    let q = 1.0 - p;
    let qn = q.powi(n as i32);
    1.0 / p - n as f64 * qn / (1.0 - qn)
}

/// MLE of the geometric law truncated to ranks `1..=n`: solves
/// `E_p[K] = mean rank`, whose left side falls monotonically from
/// `(n+1)/2` at `p → 0` to 1 at `p = 1`.
pub fn fit_truncated_geometric(counts: &[u64], n: usize) -> ContributionStats {
    let total: u64 = counts.iter().sum();
    assert!(total > 0, "fit needs at least one count");
    assert!(counts.len() <= n && n >= 1, "counts beyond rank {n}");
    let mean = counts.iter().enumerate().map(|(i, c)| (i + 1) as f64 * *c as f64).sum::<f64>() / total as f64;
    let p = if mean <= 1.0 {
        1.0
    } else if mean >= (n as f64 + 1.0) / 2.0 {
        0.0
    } else {
        let (mut lo, mut hi) = (1e-12, 1.0);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if truncated_mean(mid, n) > mean {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    };
    ContributionStats {
        counts: counts.to_vec(),
        fitted_p: p,
        fit_distance: tv(counts, |k| truncated_geometric_pmf(p, k, n), 0.0),
        max_rank: Some(n),
    }
}

/// Expected chain steps per fork-join cycle relative to one serial step:
/// `(1 − (1−μ)^n) / μ`. Communication cost is not modelled.
pub fn predict_speedup(mu: f64, n: usize) -> f64 {
    assert!(mu > 0.0 && mu <= 1.0, "per-candidate acceptance must lie in (0, 1]");
    if mu == 1.0 {
        return 1.0;
    }
    -(n as f64 * (-mu).ln_1p()).exp_m1() / mu
}

/// Smallest `n` reaching 99% of the asymptotic speedup `1/μ`.
pub fn optimal_num_workers(mu: f64) -> usize {
    assert!(mu > 0.0 && mu <= 1.0, "per-candidate acceptance must lie in (0, 1]");
    if mu == 1.0 {
        return 1;
    }
    let reached = |n: usize| (1.0 - mu).powi(n as i32) <= 0.01;
    let mut n = (0.01f64.ln() / (-mu).ln_1p()).ceil().max(1.0) as usize;
    // guard the closed form against rounding at exact integers
    while !reached(n) {
        n += 1;
    }
    while n > 1 && reached(n - 1) {
        n -= 1;
    }
    n
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpeedupModel {
    pub mu: f64,
    /// `curve[n-1] = S(n)`.
    pub curve: Vec<f64>,
    pub optimal_n: usize,
}

impl SpeedupModel {
    pub fn new(mu: f64, n_max: usize) -> Self {
        SpeedupModel {
            mu,
            curve: (1..=n_max.max(1)).map(|n| predict_speedup(mu, n)).collect(),
            optimal_n: optimal_num_workers(mu),
        }
    }

    /// Curve long enough to show the optimum and the configured worker count.
    pub fn for_report(mu: f64, num_workers: usize) -> Self {
        let opt = optimal_num_workers(mu);
        Self::new(mu, (2 * opt).max(num_workers))
    }
}
