use dramforge::chain_io::{
    read_chain, read_restart, read_sample, write_chain, write_restart_checkpoint, write_sample, ChainRow,
    RestartCheckpoint,
};
use dramforge::parallel::{kolmogorov_q, ks_two_sample, predict_speedup, truncated_geometric_pmf};
use dramforge::proposal::AdaptationRecord;
use dramforge::refinement::{refine, weighted_acf, MIN_REFINED_SIZE};
use dramforge::spec::{ChainFormat, FileEncoding};
use dramforge::{adaptation_measure, CompactChain, ProposalState, RefinedSample, RngState};
use nalgebra::DMatrix;
use proptest::prelude::*;
use statrs::distribution::{ContinuousCDF, Normal};

fn real() -> impl Strategy<Value = f64> {
    prop_oneof![
        prop::num::f64::NORMAL,
        prop::num::f64::SUBNORMAL,
        Just(0.0),
        -1e3..1e3f64,
    ]
}

fn row(ndim: usize) -> impl Strategy<Value = ChainRow> {
    (0u32..64, 0u32..4, 0.0..=1.0f64, 0.0..=1.0f64, 0u64..1 << 40, 1u64..1000, real(), prop::collection::vec(real(), ndim))
        .prop_map(|(process_id, dr_stage, mean_accept_rate, adaptation_measure, burnin_loc, weight, logf, state)| {
            ChainRow { process_id, dr_stage, mean_accept_rate, adaptation_measure, burnin_loc, weight, logf, state }
        })
}

fn chain() -> impl Strategy<Value = CompactChain> {
    (1usize..5)
        .prop_flat_map(|d| (Just(d), prop::collection::vec(row(d), 1..25)))
        .prop_filter("consecutive rows must differ", |(_, rows)| {
            rows.windows(2).all(|w| w[0].state != w[1].state || w[0].logf != w[1].logf)
        })
        .prop_map(|(d, rows)| CompactChain::from_rows(d, rows))
}

fn spd(d: usize) -> impl Strategy<Value = DMatrix<f64>> {
    (prop::collection::vec(-2.0..2.0f64, d * d), 0.05..2.0f64).prop_map(move |(a, ridge)| {
        let a = DMatrix::from_vec(d, d, a);
        &a * a.transpose() + DMatrix::identity(d, d) * ridge
    })
}

fn proposal(d: usize) -> impl Strategy<Value = ProposalState> {
    (prop::collection::vec(-3.0..3.0f64, d), spd(d), 0.1..3.0f64)
        .prop_map(|(m, c, s)| ProposalState::new(m, c, s, 1e-10).unwrap())
}

fn checkpoint(d: usize, workers: usize) -> impl Strategy<Value = RestartCheckpoint> {
    (
        proposal(d),
        prop::collection::vec(real(), d),
        prop::collection::vec((any::<u64>(), any::<u64>(), prop::option::of(real())), workers),
        (any::<u32>(), 0u64..1 << 40, 0u64..1 << 30, -1e5..0.0f64),
        prop::option::of((1u64..1 << 40, 0.0..=1.0f64)),
    )
        .prop_map(move |(proposal, state, rngs, (idx, it, rows, logf), adaptation)| RestartCheckpoint {
            checkpoint_index: idx as u64,
            iteration: it,
            rows_emitted: rows,
            absorbed_rows: rows / 2,
            accepted_count: rows + 1,
            pending_weight: it % 17,
            current_logf: logf,
            current_state: state,
            live_process_id: idx % 9,
            live_dr_stage: idx % 3,
            last_measure: adaptation.map_or(0.0, |a| a.1),
            adaptation: adaptation.map(|(iteration, measure)| AdaptationRecord { iteration, measure }),
            rngs: rngs
                .into_iter()
                .map(|(state, stream_id, gauss_cache)| RngState { state, stream_id, gauss_cache })
                .collect(),
            proposal,
        })
}

fn brute_acf(x: &[f64], lag: usize) -> f64 {
    let n = x.len();
    let m = x.iter().sum::<f64>() / n as f64;
    let c0 = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n as f64;
    if c0 == 0.0 {
        return if lag == 0 { 1.0 } else { 0.0 };
    }
    (0..n - lag).map(|t| (x[t] - m) * (x[t + lag] - m)).sum::<f64>() / (n - lag) as f64 / c0
}

/// Exact TV between two 1-D normals by integrating |p − q| between crossings.
fn tv_1d(m1: f64, s1: f64, m2: f64, s2: f64) -> f64 {
    let (p, q) = (Normal::new(m1, s1).unwrap(), Normal::new(m2, s2).unwrap());
    let a = 0.5 / (s2 * s2) - 0.5 / (s1 * s1);
    let b = m1 / (s1 * s1) - m2 / (s2 * s2);
    let c = m2 * m2 / (2.0 * s2 * s2) - m1 * m1 / (2.0 * s1 * s1) + (s2 / s1).ln();
    let mut cuts = vec![f64::NEG_INFINITY, f64::INFINITY];
    if a.abs() < 1e-14 {
        if b != 0.0 {
            cuts.push(-c / b);
        }
    } else if b * b - 4.0 * a * c > 0.0 {
        let r = (b * b - 4.0 * a * c).sqrt();
        cuts.extend([(-b - r) / (2.0 * a), (-b + r) / (2.0 * a)]);
    }
    cuts.sort_by(f64::total_cmp);
    0.5 * cuts.windows(2).map(|w| ((p.cdf(w[1]) - p.cdf(w[0])) - (q.cdf(w[1]) - q.cdf(w[0]))).abs()).sum::<f64>()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn chain_files_round_trip(c in chain(), binary in any::<bool>(), verbose in any::<bool>()) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c");
        let enc = if binary { FileEncoding::Binary } else { FileEncoding::Ascii };
        let fmt = if verbose { ChainFormat::Verbose } else { ChainFormat::Compact };
        write_chain(&c, &p, fmt, enc).unwrap();
        prop_assert_eq!(read_chain(&p).unwrap(), c);
    }

    #[test]
    fn restart_files_round_trip(
        ckpts in (1usize..4, 1usize..4).prop_flat_map(|(d, w)| prop::collection::vec(checkpoint(d, w), 1..4)),
        binary in any::<bool>(),
    ) {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r");
        let enc = if binary { FileEncoding::Binary } else { FileEncoding::Ascii };
        write_restart_checkpoint(&ckpts, &p, enc).unwrap();
        prop_assert_eq!(read_restart(&p).unwrap(), ckpts);
    }

    #[test]
    fn sample_files_round_trip(d in 1usize..4, vals in prop::collection::vec(real(), 4..60)) {
        let n = vals.len() / (d + 1);
        prop_assume!(n > 0);
        let sample = RefinedSample {
            logf: vals[..n].to_vec(),
            states: (0..n).map(|i| vals[n + i * d..n + (i + 1) * d].to_vec()).collect(),
            iac_history: vec![1.0],
            source_burnin: 0,
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s");
        write_sample(&sample, &p).unwrap();
        let back = read_sample(&p).unwrap();
        prop_assert_eq!(back.logf, sample.logf);
        prop_assert_eq!(back.states, sample.states);
    }

    #[test]
    fn weighted_acf_equals_expanded(rows in prop::collection::vec((-5.0..5.0f64, 1u64..6), 2..40), lag in 0usize..8) {
        let expanded: Vec<f64> = rows.iter().flat_map(|(v, w)| std::iter::repeat_n(*v, *w as usize)).collect();
        prop_assume!(lag < expanded.len());
        let acf = weighted_acf(&rows, lag).unwrap();
        for (k, got) in acf.iter().enumerate() {
            let want = brute_acf(&expanded, k);
            prop_assert!((got - want).abs() < 1e-9 * want.abs().max(1.0), "lag {}: {} vs {}", k, got, want);
        }
    }

    #[test]
    fn refinement_is_idempotent(phi in 0.0..0.97f64, n in 50usize..3000, seed in any::<u64>(), heavy in any::<bool>()) {
        let mut rng = RngState::new(seed, 0);
        let mut x = 0.0;
        let rows: Vec<ChainRow> = (0..n).map(|_| {
            x = phi * x + rng.gauss();
            let weight = if heavy { 1 + rng.next_u64() % 4 } else { 1 };
            ChainRow { process_id: 1, dr_stage: 0, mean_accept_rate: 0.5, adaptation_measure: 0.0, burnin_loc: 0, weight, logf: -0.5 * x * x, state: vec![x] }
        }).collect();
        let r = refine(&CompactChain::from_rows(1, rows), 0);
        prop_assert!(r.iac_history.iter().all(|t| *t >= 1.0));
        prop_assume!(r.len() >= MIN_REFINED_SIZE);
        let again = refine(&r.to_chain(), 0);
        prop_assert_eq!(again.states, r.states);
        prop_assert_eq!(again.iac_history.len(), 1);
    }

    #[test]
    fn adaptation_measure_bounds_tv(a in proposal(1), b in proposal(1)) {
        let m = adaptation_measure(&a, &b).unwrap();
        prop_assert!((0.0..=1.0).contains(&m));
        prop_assert!((m - adaptation_measure(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!(adaptation_measure(&a, &a).unwrap() <= 1e-12);
        let (ca, cb) = (a.effective_cov(), b.effective_cov());
        let tv = tv_1d(a.mean[0], ca[(0, 0)].sqrt(), b.mean[0], cb[(0, 0)].sqrt());
        prop_assert!(m >= tv - 1e-9, "{} < {}", m, tv);
    }

    #[test]
    fn measure_symmetric_in_higher_dimensions(a in proposal(3), b in proposal(3)) {
        let ab = adaptation_measure(&a, &b).unwrap();
        prop_assert!((ab - adaptation_measure(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&ab));
    }

    #[test]
    fn batched_updates_equal_two_pass(
        pts in prop::collection::vec((prop::collection::vec(-5.0..5.0f64, 2), 1u64..5), 3..30),
        split in 1usize..29,
    ) {
        let split = split.min(pts.len() - 1);
        let batch: Vec<(&[f64], u64)> = pts.iter().map(|(p, w)| (p.as_slice(), *w)).collect();
        let start = ProposalState::initial(&[0.0, 0.0], 1.0, 1e-10);
        // Tiny ridge keeps near-collinear draws factorizable.
        let one = start.update_mean_cov(&batch);
        let two = start.update_mean_cov(&batch[..split]).and_then(|s| s.update_mean_cov(&batch[split..]));
        prop_assume!(one.is_ok() && two.is_ok());
        let (one, two) = (one.unwrap(), two.unwrap());
        let total: f64 = pts.iter().map(|(_, w)| *w as f64).sum();
        let mean: Vec<f64> = (0..2).map(|i| pts.iter().map(|(p, w)| p[i] * *w as f64).sum::<f64>() / total).collect();
        for i in 0..2 {
            prop_assert!((one.mean[i] - mean[i]).abs() < 1e-10);
            prop_assert!((two.mean[i] - mean[i]).abs() < 1e-10);
            for j in 0..2 {
                let c = pts.iter().map(|(p, w)| (p[i] - mean[i]) * (p[j] - mean[j]) * *w as f64).sum::<f64>() / total;
                prop_assert!((one.cov[(i, j)] - c).abs() < 1e-9 * c.abs().max(1.0));
                prop_assert!((two.cov[(i, j)] - c).abs() < 1e-9 * c.abs().max(1.0));
            }
        }
    }

    #[test]
    fn cholesky_reproduces_effective_cov(p in (1usize..5).prop_flat_map(proposal)) {
        let l = &p.chol_lower;
        let want = p.effective_cov();
        let got = l * l.transpose();
        prop_assert!((got - &want).abs().max() <= 1e-10 * want.abs().max());
    }

    #[test]
    fn ks_statistic_matches_brute_force(a in prop::collection::vec(-3i32..3, 1..30), b in prop::collection::vec(-3i32..3, 1..30)) {
        let (af, bf): (Vec<f64>, Vec<f64>) = (a.iter().map(|v| *v as f64).collect(), b.iter().map(|v| *v as f64).collect());
        let ecdf = |s: &[f64], x: f64| s.iter().filter(|v| **v <= x).count() as f64 / s.len() as f64;
        let d = af.iter().chain(&bf).map(|x| (ecdf(&af, *x) - ecdf(&bf, *x)).abs()).fold(0.0, f64::max);
        let r = ks_two_sample(&af, &bf);
        prop_assert!((r.statistic - d).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&r.p_value));
    }

    #[test]
    fn geometric_model_shapes(mu in 0.01..0.99f64, n in 1usize..40) {
        let mass: f64 = (1..=n).map(|k| truncated_geometric_pmf(mu, k, n)).sum();
        prop_assert!((mass - 1.0).abs() < 1e-12);
        let s = predict_speedup(mu, n);
        prop_assert!(s >= 1.0 - 1e-12 && s <= (n as f64).min(1.0 / mu) + 1e-12);
        prop_assert!(predict_speedup(mu, n + 1) >= s);
    }

    #[test]
    fn kolmogorov_q_decreases(a in 0.0..4.0f64, b in 0.0..4.0f64) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        prop_assert!(kolmogorov_q(lo) >= kolmogorov_q(hi) - 1e-15);
    }
}
