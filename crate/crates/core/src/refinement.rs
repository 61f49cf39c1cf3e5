//! Autocorrelation analysis and recursive chain refinement.
//!
//! Autocorrelations use the per-lag unbiased normalization
//! `ρ(k) = [Σ d_t d_{t+k} / (N−k)] / [Σ d_t² / N]`. The integrated
//! autocorrelation time sums `ρ` up to (excluding) the first non-positive lag.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::chain_io::CompactChain;
use crate::error::{Error, Result};
use crate::exec::{self, Execution};

/// Refinement stops once the worst series has `τ` at or below this value.
pub const IAC_THRESHOLD: f64 = 1.05;
/// ... or once every lag-1 autocorrelation is within this many standard
/// errors (`1/√n`) of zero. With a few hundred points `τ` estimates of white
/// noise routinely exceed [`IAC_THRESHOLD`], so the threshold alone would keep
/// halving an already independent sample.
pub const LAG1_SIGMAS: f64 = 3.0;
/// ... or once thinning has left fewer than this many points.
pub const MIN_REFINED_SIZE: usize = 10;

#[derive(Clone, Debug, PartialEq)]
pub struct RefinedSample {
    pub states: Vec<Vec<f64>>,
    pub logf: Vec<f64>,
    /// Worst-series `τ` of each refinement pass.
    pub iac_history: Vec<f64>,
    pub source_burnin: usize,
}

impl RefinedSample {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn column(&self, dim: usize) -> Vec<f64> {
        self.states.iter().map(|s| s[dim]).collect()
    }

    /// The sample as a unit-weight chain, e.g. to refine it again.
    pub fn to_chain(&self) -> CompactChain {
        let ndim = self.states.first().map_or(0, Vec::len);
        let rows = self
            .states
            .iter()
            .zip(&self.logf)
            .map(|(s, l)| crate::chain_io::ChainRow {
                process_id: 1,
                dr_stage: 0,
                mean_accept_rate: 0.0,
                adaptation_measure: 0.0,
                burnin_loc: 0,
                weight: 1,
                logf: *l,
                state: s.clone(),
            })
            .collect();
        CompactChain::from_rows(ndim, rows)
    }
}

/// Autocorrelation `ρ(0..=max_lag)` of the verbose expansion of weighted
/// values, computed from overlaps of the weight runs without expanding them.
pub fn weighted_acf(rows: &[(f64, u64)], max_lag: usize) -> Result<Vec<f64>> {
    let n: u64 = rows.iter().map(|r| r.1).sum();
    if n < 2 {
        return Err(Error::Usage(format!("weighted_acf needs at least 2 verbose elements, got {n}")));
    }
    if max_lag as u64 >= n {
        return Err(Error::Usage(format!("max_lag {max_lag} must be below the series length {n}")));
    }
    let mean = rows.iter().map(|(v, w)| v * *w as f64).sum::<f64>() / n as f64;
    let dev: Vec<f64> = rows.iter().map(|(v, _)| v - mean).collect();
    let c0 = rows.iter().zip(&dev).map(|((_, w), d)| *w as f64 * d * d).sum::<f64>() / n as f64;
    let mut acf = vec![0.0; max_lag + 1];
    acf[0] = 1.0;
    if c0 <= 0.0 {
        return Ok(acf);
    }
    let mut starts = Vec::with_capacity(rows.len());
    let mut s = 0u64;
    for (_, w) in rows {
        starts.push(s);
        s += w;
    }
    for (k, slot) in acf.iter_mut().enumerate().skip(1) {
        let k = k as u64;
        let mut sum = 0.0;
        for (i, (_, wi)) in rows.iter().enumerate() {
            let lo = starts[i] + k;
            let hi = starts[i] + wi + k;
            if lo >= n {
                break;
            }
            // first run containing position lo
            let mut j = starts.partition_point(|&st| st <= lo) - 1;
            while j < rows.len() && starts[j] < hi {
                let a = lo.max(starts[j]);
                let b = hi.min(starts[j] + rows[j].1);
                if b > a {
                    sum += dev[i] * dev[j] * (b - a) as f64;
                }
                j += 1;
            }
        }
        *slot = sum / (n - k) as f64 / c0;
    }
    Ok(acf)
}

/// Full autocorrelation of an explicit series (lags `0..len`) via FFT.
pub fn autocorrelation(series: &[f64]) -> Vec<f64> {
    let n = series.len();
    if n == 0 {
        return Vec::new();
    }
    let mean = series.iter().sum::<f64>() / n as f64;
    let m = (2 * n).next_power_of_two();
    let mut buf: Vec<Complex<f64>> = series
        .iter()
        .map(|x| Complex::new(x - mean, 0.0))
        .chain(std::iter::repeat(Complex::new(0.0, 0.0)))
        .take(m)
        .collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(m).process(&mut buf);
    for c in buf.iter_mut() {
        *c = Complex::new(c.norm_sqr(), 0.0);
    }
    planner.plan_fft_inverse(m).process(&mut buf);
    let c0 = buf[0].re / m as f64 / n as f64;
    let mut acf = vec![0.0; n];
    acf[0] = 1.0;
    if !(c0 > 0.0) || c0 < 1e-300 {
        return acf;
    }
    // round-off floor for an exactly constant series
    let scale = series.iter().map(|x| x.abs()).fold(0.0, f64::max);
    if c0.sqrt() <= 1e-14 * scale {
        return acf;
    }
    for k in 1..n {
        acf[k] = buf[k].re / m as f64 / (n - k) as f64 / c0;
    }
    acf
}

/// `τ = 1 + 2 Σ_{k=1}^{K} ρ(k)` with `K` the lag before the first
/// non-positive `ρ`; floored at 1.
pub fn integrated_autocorrelation(acf: &[f64]) -> f64 {
    let sum: f64 = acf.iter().skip(1).take_while(|r| **r > 0.0).sum();
    (1.0 + 2.0 * sum).max(1.0)
}

pub fn series_iac(series: &[f64]) -> f64 {
    if series.len() < 2 {
        return 1.0;
    }
    integrated_autocorrelation(&autocorrelation(series))
}

/// Post-burn-in verbose expansion: column 0 is logf, then one column per
/// coordinate.
fn expand(chain: &CompactChain, burnin: usize) -> Vec<Vec<f64>> {
    (0..=chain.ndim)
        .map(|c| chain.expand_column(if c == 0 { None } else { Some(c - 1) }, burnin))
        .collect()
}

fn worst_iac(columns: &[Vec<f64>], exec: Execution) -> f64 {
    exec::map(exec, columns, |_, s| series_iac(s)).into_iter().fold(1.0, f64::max)
}

/// Worst-series `τ` and largest lag-1 autocorrelation.
fn worst_iac_and_lag1(columns: &[Vec<f64>], exec: Execution) -> (f64, f64) {
    exec::map(exec, columns, |_, s| {
        let acf = autocorrelation(s);
        (integrated_autocorrelation(&acf), acf.get(1).copied().unwrap_or(0.0))
    })
    .into_iter()
    .fold((1.0, f64::NEG_INFINITY), |(t, r), (ts, rs)| (t.max(ts), r.max(rs)))
}

pub fn refine(chain: &CompactChain, burnin: usize) -> RefinedSample {
    refine_with(chain, burnin, Execution::default())
}

/// Drops the rows before `burnin`, expands the weights, then repeatedly thins
/// by `ceil(τ)` (keeping indices 0, stride, 2·stride, ...) until no series
/// shows autocorrelation distinguishable from zero, or the sample has shrunk
/// below [`MIN_REFINED_SIZE`] points.
pub fn refine_with(chain: &CompactChain, burnin: usize, exec: Execution) -> RefinedSample {
    let burnin = burnin.min(chain.rows.len());
    let mut columns = expand(chain, burnin);
    let n = columns[0].len();
    let mut iac_history = Vec::new();
    if n >= 2 {
        loop {
            let len = columns[0].len();
            let (tau, lag1) = worst_iac_and_lag1(&columns, exec);
            iac_history.push(tau);
            // Below LAG1_SIGMAS² points no lag-1 value can be significant.
            let indistinct = (len as f64) > LAG1_SIGMAS * LAG1_SIGMAS && lag1 < LAG1_SIGMAS / (len as f64).sqrt();
            if tau <= IAC_THRESHOLD || indistinct {
                break;
            }
            let stride = tau.ceil() as usize;
            for col in columns.iter_mut() {
                *col = col.iter().step_by(stride).copied().collect();
            }
            if columns[0].len() < MIN_REFINED_SIZE {
                break;
            }
        }
    } else {
        for col in columns.iter_mut() {
            col.truncate(1);
        }
    }
    let len = columns[0].len();
    let states = (0..len).map(|t| columns[1..].iter().map(|c| c[t]).collect()).collect();
    RefinedSample {
        states,
        logf: std::mem::take(&mut columns[0]),
        iac_history,
        source_burnin: burnin,
    }
}

/// `N / τ` over the post-burn-in verbose chain, `τ` being the worst-series
/// value of the first refinement pass.
pub fn effective_sample_size(chain: &CompactChain, burnin: usize) -> f64 {
    effective_sample_size_with(chain, burnin, Execution::default())
}

pub fn effective_sample_size_with(chain: &CompactChain, burnin: usize, exec: Execution) -> f64 {
    let columns = expand(chain, burnin.min(chain.rows.len()));
    let n = columns[0].len();
    if n < 2 {
        return n as f64;
    }
    n as f64 / worst_iac(&columns, exec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain_io::ChainRow;
    use crate::rng::RngState;

    /// Direct O(N·K) estimator on an explicit series.
    fn brute_acf(x: &[f64], max_lag: usize) -> Vec<f64> {
        let n = x.len();
        let mean = x.iter().sum::<f64>() / n as f64;
        let c0 = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        (0..=max_lag)
            .map(|k| {
                if k == 0 {
                    return 1.0;
                }
                if c0 == 0.0 {
                    return 0.0;
                }
                let s: f64 = (0..n - k).map(|t| (x[t] - mean) * (x[t + k] - mean)).sum();
                s / (n - k) as f64 / c0
            })
            .collect()
    }

    fn chain_from(values: &[(f64, u64)]) -> CompactChain {
        CompactChain::from_rows(
            1,
            values
                .iter()
                .map(|(v, w)| ChainRow {
                    process_id: 1,
                    dr_stage: 0,
                    mean_accept_rate: 0.0,
                    adaptation_measure: 0.0,
                    burnin_loc: 0,
                    weight: *w,
                    logf: -0.5 * v * v,
                    state: vec![*v],
                })
                .collect(),
        )
    }

    fn ar1(phi: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = RngState::new(seed, 0);
        let mut x = 0.0;
        let s = (1.0 - phi * phi).sqrt();
        (0..n)
            .map(|_| {
                x = phi * x + s * rng.gauss();
                x
            })
            .collect()
    }

    #[test]
    fn constant_series_zero_branch() {
        let acf = weighted_acf(&[(1.0, 1), (1.0, 1), (1.0, 1)], 1).unwrap();
        assert_eq!(acf, vec![1.0, 0.0]);
        assert_eq!(autocorrelation(&[2.5; 16])[1], 0.0);
    }

    #[test]
    fn weighted_matches_expansion() {
        let (a, b) = (0.7, -1.3);
        let acf = weighted_acf(&[(a, 2), (b, 3)], 4).unwrap();
        let brute = brute_acf(&[a, a, b, b, b], 4);
        for (x, y) in acf.iter().zip(&brute) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn weighted_acf_argument_checks() {
        assert!(weighted_acf(&[(1.0, 1)], 0).is_err());
        assert!(weighted_acf(&[(1.0, 1), (2.0, 1)], 2).is_err());
    }

    #[test]
    fn fft_matches_brute_force() {
        let x = ar1(0.6, 300, 4);
        let fft = autocorrelation(&x);
        let brute = brute_acf(&x, 299);
        for k in 0..300 {
            assert!((fft[k] - brute[k]).abs() < 1e-10, "lag {k}");
        }
    }

    #[test]
    fn white_noise_band() {
        let mut rng = RngState::new(8, 0);
        let x: Vec<f64> = (0..10_000).map(|_| rng.gauss()).collect();
        let acf = autocorrelation(&x);
        let band = 3.0 / (x.len() as f64).sqrt();
        for k in 1..=10 {
            assert!(acf[k].abs() < band, "lag {k}: {}", acf[k]);
        }
    }

    #[test]
    fn iac_rules() {
        assert_eq!(integrated_autocorrelation(&[1.0, 0.0, 0.0]), 1.0);
        assert_eq!(integrated_autocorrelation(&[1.0, -0.2, 0.5]), 1.0);
        // analytic AR(1), φ = 0.5, truncated far out
        let acf: Vec<f64> = (0..60).map(|k| 0.5f64.powi(k)).collect();
        assert!((integrated_autocorrelation(&acf) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn ar1_iac_estimate() {
        let x = ar1(0.5, 100_000, 12);
        let tau = series_iac(&x);
        assert!((tau - 3.0).abs() < 0.3, "tau {tau}");
    }

    #[test]
    fn hand_built_step_chain() {
        let (a, b) = (1.0, 2.0);
        let c = chain_from(&[(a, 4), (b, 4)]);
        let r = refine(&c, 0);
        assert_eq!(r.iac_history.len(), 1);
        assert_eq!(r.iac_history[0].ceil(), 4.0);
        assert_eq!(r.column(0), vec![a, b]);
    }

    #[test]
    fn uncorrelated_chain_single_pass() {
        let mut rng = RngState::new(2, 0);
        let vals: Vec<(f64, u64)> = (0..2000).map(|_| (rng.gauss(), 1)).collect();
        let c = chain_from(&vals);
        let r = refine(&c, 0);
        assert_eq!(r.iac_history.len(), 1);
        assert!(r.iac_history[0] <= IAC_THRESHOLD);
        assert_eq!(r.len(), 2000);
        let again = refine(&r.to_chain(), 0);
        assert_eq!(again.states, r.states);
    }

    #[test]
    fn short_white_noise_is_not_thinned() {
        // τ estimates of a few hundred independent points often exceed the
        // threshold; the lag-1 test has to stop refinement anyway.
        let mut kept = 0;
        for seed in 0..50 {
            let mut rng = RngState::new(seed, 4);
            let vals: Vec<(f64, u64)> = (0..300).map(|_| (rng.gauss(), 1)).collect();
            if refine(&chain_from(&vals), 0).len() == 300 {
                kept += 1;
            }
        }
        assert!(kept >= 45, "{kept}/50 samples kept whole");
    }

    #[test]
    fn thinned_ar1_has_no_lag1_correlation() {
        let x = ar1(0.95, 50_000, 21);
        let r = refine(&chain_from(&x.iter().map(|v| (*v, 1)).collect::<Vec<_>>()), 0);
        let n = r.len();
        assert!(n >= 500, "{n}");
        let acf = brute_acf(&r.column(0), 1);
        assert!(acf[1] < LAG1_SIGMAS / (n as f64).sqrt(), "{}", acf[1]);
    }

    #[test]
    fn burnin_rows_dropped() {
        let c = chain_from(&[(10.0, 5), (0.1, 1), (-0.2, 1), (0.3, 1)]);
        let r = refine(&c, 1);
        assert_eq!(r.source_burnin, 1);
        assert!(r.states.iter().all(|s| s[0].abs() < 1.0));
    }

    #[test]
    fn degenerate_single_point() {
        let c = chain_from(&[(5.0, 3), (0.5, 1)]);
        let r = refine(&c, 1);
        assert_eq!(r.states, vec![vec![0.5]]);
        assert!(r.iac_history.is_empty());
    }

    #[test]
    fn ess_cases() {
        let mut rng = RngState::new(6, 0);
        let white: Vec<(f64, u64)> = (0..1000).map(|_| (rng.gauss(), 1)).collect();
        let ess = effective_sample_size(&chain_from(&white), 0);
        assert!(ess > 700.0 && ess <= 1000.0, "{ess}");
        let constant = chain_from(&[(1.0, 50)]);
        assert_eq!(effective_sample_size(&constant, 0), 50.0);
    }

    #[test]
    fn execution_modes_agree() {
        let x = ar1(0.8, 5000, 3);
        let c = chain_from(&x.iter().map(|v| (*v, 1 + (v.abs() * 3.0) as u64)).collect::<Vec<_>>());
        let a = refine_with(&c, 0, Execution::Sequential);
        let b = refine_with(&c, 0, Execution::Parallel);
        assert_eq!(a, b);
    }
}
