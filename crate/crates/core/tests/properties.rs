use approx::assert_relative_eq;
use mkhawkes_core::analysis::{arrival_probability, event_shares};
use mkhawkes_core::diagnostics::{count_local_maxima, residuals, scan_conditional_max, ScanGrid, PLATEAU_TOL};
use mkhawkes_core::estimate::log_grid;
use mkhawkes_core::ingest::{dedupe_and_order, mid_price_events, QuoteRecord};
use mkhawkes_core::likelihood::log_likelihood;
use mkhawkes_core::model::{advance_state, apply_event, intensity_at, MarkovState};
use mkhawkes_core::simulate::{simulate_path, EnsembleSummary, SimConfig};
use mkhawkes_core::{ConstraintProfile, EventRecord, EventStream, ModelParams};
use proptest::prelude::*;
use rust_decimal::Decimal;

/// Stationary FULL model with m ≤ 2, K ≤ 3.
fn full_params() -> impl Strategy<Value = ModelParams> {
    (1usize..=2, 1usize..=3).prop_flat_map(|(m, k)| {
        let n = k * m * m;
        (
            prop::collection::vec(0.05f64..1.0, m),
            prop::collection::vec(0.0f64..0.9, n),
            prop::collection::vec(0.2f64..50.0, n),
        )
            .prop_map(move |(mu, frac, beta)| {
                // branching fraction spread over the k·m entries of each row keeps ρ < 1
                let cube = |v: &[f64]| -> Vec<Vec<Vec<f64>>> {
                    (0..k).map(|kk| (0..m).map(|i| v[(kk * m + i) * m..(kk * m + i + 1) * m].to_vec()).collect()).collect()
                };
                let alpha: Vec<f64> = frac.iter().zip(&beta).map(|(f, b)| f * b / (k * m) as f64).collect();
                ModelParams::full(mu, cube(&alpha), cube(&beta)).unwrap()
            })
    })
}

fn sym2_params() -> impl Strategy<Value = ModelParams> {
    (1usize..=3).prop_flat_map(|k| {
        (
            0.05f64..1.0,
            prop::collection::vec((0.0f64..0.45, 0.0f64..0.45, 0.2f64..100.0), k),
        )
            .prop_map(move |(mu, ker)| {
                let s: Vec<f64> = ker.iter().map(|(a, _, b)| a * b / k as f64).collect();
                let c: Vec<f64> = ker.iter().map(|(_, a, b)| a * b / k as f64).collect();
                let b: Vec<f64> = ker.iter().map(|x| x.2).collect();
                ModelParams::symmetric_bivariate(mu, &s, &c, &b).unwrap()
            })
    })
}

/// A stream of `n` events on `[0, horizon]` with types in 1..=m.
fn stream_for(m: usize, max_n: usize) -> impl Strategy<Value = EventStream> {
    prop::collection::vec((0.0f64..100.0, 1usize..=m), 1..max_n).prop_map(move |mut ev| {
        ev.sort_by(|a, b| a.0.total_cmp(&b.0));
        ev.dedup_by(|a, b| (a.0 * 1e9).round() == (b.0 * 1e9).round());
        let times: Vec<f64> = ev.iter().map(|e| e.0).collect();
        let types: Vec<usize> = ev.iter().map(|e| e.1).collect();
        EventStream::from_seconds(m, &times, &types, 100.0).unwrap()
    })
}

fn params_and_stream() -> impl Strategy<Value = (ModelParams, EventStream)> {
    full_params().prop_flat_map(|p| {
        let m = p.dim();
        (Just(p), stream_for(m, 60))
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn advance_is_a_semigroup(p in full_params(), a in 0.0f64..5.0, b in 0.0f64..5.0, ty in 1usize..=2) {
        let ty = ty.min(p.dim());
        let s0 = apply_event(&p, &MarkovState::stationary_mean(&p).unwrap(), ty).unwrap();
        let once = advance_state(&p, &s0, a + b).unwrap();
        let twice = advance_state(&p, &advance_state(&p, &s0, a).unwrap(), b).unwrap();
        for (x, y) in once.raw().iter().zip(twice.raw()) {
            prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1e-300) + 1e-300);
        }
    }

    #[test]
    fn intensity_never_drops_below_baseline((p, s) in params_and_stream()) {
        let mut state = MarkovState::zero(&p);
        let mut prev = 0.0;
        for r in s.records() {
            let t = (r.timestamp_ns - s.start_ns()) as f64 / 1e9;
            state = advance_state(&p, &state, t - prev).unwrap();
            prev = t;
            for (lam, mu) in intensity_at(&p, &state).iter().zip(p.mu()) {
                prop_assert!(lam >= mu);
            }
            state = apply_event(&p, &state, r.event_type).unwrap();
        }
    }

    #[test]
    fn likelihood_is_shift_invariant((p, s) in params_and_stream(), delta in -1_000_000_000_000i64..1_000_000_000_000) {
        let a = log_likelihood(&p, &s).unwrap();
        let b = log_likelihood(&p, &s.shifted(delta)).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
    }

    #[test]
    fn kernel_order_does_not_change_the_likelihood((p, s) in params_and_stream()) {
        let c = p.canonicalize();
        prop_assert_eq!(c.canonicalize(), c.clone());
        for k in 1..c.kernels() {
            prop_assert!(c.kernel_speed(k - 1) >= c.kernel_speed(k));
        }
        let a = log_likelihood(&p, &s).unwrap();
        let b = log_likelihood(&c, &s).unwrap();
        prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
    }

    #[test]
    fn shares_sum_to_one((p, s) in params_and_stream()) {
        for sh in event_shares(&p, &s).unwrap() {
            prop_assert!(sh.iter().all(|&x| x >= 0.0));
            prop_assert!((sh.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn residuals_are_positive_and_bounded_by_the_compensator((p, s) in params_and_stream()) {
        let r = residuals(&p, &s).unwrap();
        for (i, per) in r.per_type.iter().enumerate() {
            prop_assert!(per.iter().all(|&x| x > 0.0));
            prop_assert!(per.iter().sum::<f64>() <= r.compensator_total[i] * (1.0 + 1e-12));
        }
    }

    #[test]
    fn params_json_round_trip(p in prop_oneof![full_params(), sym2_params()]) {
        let back = ModelParams::from_json(&p.to_json().unwrap()).unwrap();
        prop_assert_eq!(back, p);
    }

    #[test]
    fn sym2_is_a_symmetric_special_case(p in sym2_params()) {
        prop_assert_eq!(p.profile(), ConstraintProfile::SymmetricBivariate);
        for k in 0..p.kernels() {
            prop_assert_eq!(p.alpha(k, 0, 0), p.alpha(k, 1, 1));
            prop_assert_eq!(p.alpha(k, 0, 1), p.alpha(k, 1, 0));
        }
        prop_assert_eq!(p.mu()[0], p.mu()[1]);
    }

    #[test]
    fn arrival_probability_is_monotone(a in 0.0f64..50.0, da in 0.0f64..5.0, b in 0.1f64..100.0, u in 0.0f64..10.0, du in 0.0f64..1.0) {
        let p = arrival_probability(a, b, u);
        prop_assert!((0.0..=1.0).contains(&p));
        prop_assert!(arrival_probability(a, b, u + du) >= p);
        prop_assert!(arrival_probability(a + da, b, u) >= p);
        prop_assert!(arrival_probability(a, b, f64::INFINITY) >= p);
    }

    #[test]
    fn dedupe_is_idempotent_and_strict(raw in prop::collection::vec((0i64..50, 1usize..=2), 0..80)) {
        let mut ev: Vec<EventRecord> = raw.iter().map(|&(t, k)| EventRecord { timestamp_ns: t, event_type: k }).collect();
        ev.sort_by_key(|e| e.timestamp_ns);
        let (once, _, _) = dedupe_and_order(&ev);
        prop_assert!(once.windows(2).all(|w| w[0].timestamp_ns < w[1].timestamp_ns));
        let (twice, c, s) = dedupe_and_order(&once);
        prop_assert_eq!(twice, once);
        prop_assert_eq!((c, s), (0, 0));
    }

    #[test]
    fn ingest_reconstructs_net_moves(ticks in prop::collection::vec(-3i64..=3, 1..100), spread in 1i64..4) {
        // bid walks in cents; strictly increasing timestamps
        let mut bid = 10_000i64;
        let quotes: Vec<QuoteRecord> = ticks
            .iter()
            .enumerate()
            .map(|(n, &d)| {
                bid += d;
                QuoteRecord {
                    timestamp_ns: n as i64 * 1000,
                    bid: Decimal::new(bid, 2),
                    ask: Decimal::new(bid + spread, 2),
                }
            })
            .collect();
        let (s, rep) = mid_price_events(&quotes, None).unwrap();
        let ups = ticks[1..].iter().filter(|&&d| d > 0).count();
        let downs = ticks[1..].iter().filter(|&&d| d < 0).count();
        prop_assert_eq!((rep.events_up, rep.events_down), (ups, downs));
        let net: i64 = s.types().iter().map(|&t| if t == 0 { 1 } else { -1 }).sum();
        prop_assert_eq!(net, ups as i64 - downs as i64);
    }

    #[test]
    fn plateaus_count_once(n in 2usize..30, level in -1e3f64..1e3, noise in prop::collection::vec(0.0f64..1e-7, 30)) {
        let values: Vec<Option<f64>> = (0..n).map(|i| Some(level + noise[i])).collect();
        prop_assert_eq!(count_local_maxima(&[n], &values, PLATEAU_TOL), 1);
    }

    #[test]
    fn peak_counts(n in 5usize..40, at in 0.0f64..1.0, gap in 2usize..10) {
        let peak = ((n - 1) as f64 * at) as usize;
        let one: Vec<Option<f64>> = (0..n).map(|i| Some(-((i as f64) - peak as f64).powi(2))).collect();
        prop_assert_eq!(count_local_maxima(&[n], &one, PLATEAU_TOL), 1);
        // two separated peaks; a missing cell between them does not merge them
        let m = 2 * gap + 3;
        let mut two: Vec<Option<f64>> = (0..m)
            .map(|i| Some(-((i as f64 - 1.0).abs().min((i as f64 - (m - 2) as f64).abs()))))
            .collect();
        two[m / 2] = None;
        prop_assert_eq!(count_local_maxima(&[m], &two, PLATEAU_TOL), 2);
    }

    #[test]
    fn log_grid_is_descending(lo in 1e-3f64..10.0, ratio in 1.5f64..1e4, n in 2usize..40) {
        let g = log_grid(lo, lo * ratio, n);
        prop_assert_eq!(g.len(), n);
        prop_assert!(g.windows(2).all(|w| w[0] > w[1]));
        assert_relative_eq!(g[0], lo * ratio, max_relative = 1e-12);
        assert_relative_eq!(g[n - 1], lo, max_relative = 1e-12);
    }
}

#[test]
fn single_path_ensemble_equals_the_path() {
    let p = ModelParams::symmetric_bivariate(0.5, &[3.0], &[1.0], &[10.0]).unwrap();
    let cfg = SimConfig::new(300.0, 1, 21);
    let s = simulate_path(&p, &cfg, 0).unwrap();
    let c = s.counts();
    let e = EnsembleSummary::from_counts(std::slice::from_ref(&c), 300.0, 21);
    assert_eq!(e.mean_counts, vec![c[0] as f64, c[1] as f64]);
    assert_eq!(e.mean_products[0][1], (c[0] * c[1]) as f64);
    assert_eq!(e.se_counts, vec![0.0, 0.0]);
}

#[test]
fn scan_is_deterministic() {
    let p = ModelParams::univariate(0.3, &[1.2], &[2.0]).unwrap();
    let s = simulate_path(&p, &SimConfig::new(400.0, 1, 5), 0).unwrap();
    let grid = ScanGrid::log_spaced(0.1, 50.0, 25, 1);
    let a = scan_conditional_max(&s, 1, ConstraintProfile::ScalarPerKernel, &grid).unwrap();
    let b = scan_conditional_max(&s, 1, ConstraintProfile::ScalarPerKernel, &grid).unwrap();
    assert_eq!(a.lstar, b.lstar);
    assert_eq!(a.local_maxima, b.local_maxima);
}
