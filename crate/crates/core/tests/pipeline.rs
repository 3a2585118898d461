use mkhawkes_core::analysis::attribute_causes;
use mkhawkes_core::diagnostics::{diagnose, ks_exponential};
use mkhawkes_core::estimate::{fit_profile, select_model, FitResult, GridSpec};
use mkhawkes_core::ingest::ingest_path;
use mkhawkes_core::likelihood::log_likelihood;
use mkhawkes_core::simulate::{simulate_ensemble, simulate_path, SimConfig};
use mkhawkes_core::{ConstraintProfile, EventStream, ModelParams};
use tempfile::TempDir;

fn two_kernel() -> ModelParams {
    ModelParams::symmetric_bivariate(0.3, &[30.0, 0.6], &[10.0, 0.3], &[100.0, 2.0]).unwrap()
}

#[test]
fn event_csv_round_trip_keeps_the_likelihood() {
    let dir = TempDir::new().unwrap();
    let p = two_kernel();
    let s = simulate_path(&p, &SimConfig::new(500.0, 1, 31), 0).unwrap();
    let path = dir.path().join("ev.csv");
    s.write_csv_path(&path).unwrap();
    let back = EventStream::read_csv_path(&path, Some(2), Some((s.start_ns(), s.end_ns()))).unwrap();
    assert_eq!(back, s);
    assert_eq!(log_likelihood(&p, &back).unwrap(), log_likelihood(&p, &s).unwrap());
}

#[test]
fn fit_json_file_round_trip() {
    let dir = TempDir::new().unwrap();
    let s = simulate_path(&two_kernel(), &SimConfig::new(800.0, 1, 32), 0).unwrap();
    let f = fit_profile(&s, 1, ConstraintProfile::SymmetricBivariate, &GridSpec::default().with_points(9)).unwrap();
    let path = dir.path().join("fit.json");
    std::fs::write(&path, f.to_json().unwrap()).unwrap();
    let back = FitResult::from_json(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(back.to_json().unwrap(), f.to_json().unwrap());
    assert_eq!(back.params_hat, f.params_hat);
    assert_eq!(log_likelihood(&back.params_hat, &s).unwrap(), f.loglik);
}

#[test]
fn aic_prefers_the_true_kernel_count() {
    let s = simulate_path(&two_kernel(), &SimConfig::new(3000.0, 1, 33), 0).unwrap();
    let sel = select_model(&s, &[1, 2], ConstraintProfile::SymmetricBivariate, &GridSpec::default().with_points(11)).unwrap();
    assert_eq!(sel.best().kernels, 2);
    assert!(sel.aic_of(1).unwrap() > sel.aic_of(2).unwrap());
}

#[test]
fn poisson_thinning_gives_exponential_gaps() {
    let p = ModelParams::symmetric_bivariate(0.6, &[0.0], &[0.0], &[1.0]).unwrap();
    let s = simulate_path(&p, &SimConfig::new(10_000.0, 1, 34), 0).unwrap();
    let t = s.times_sec();
    assert!(t.len() > 10_000);
    let gaps: Vec<f64> = t.windows(2).map(|w| (w[1] - w[0]) * 1.2).take(10_000).collect();
    let ks = ks_exponential(&gaps).unwrap();
    assert!(ks.p_value > 0.01, "KS {ks:?}");
}

#[test]
fn poisson_counts_match_the_rate() {
    let p = ModelParams::symmetric_bivariate(0.2, &[0.0], &[0.0], &[1.0]).unwrap();
    let e = simulate_ensemble(&p, &SimConfig::new(1000.0, 1000, 35)).unwrap();
    for i in 0..2 {
        let z = (e.mean_counts[i] - 200.0) / e.se_counts[i];
        assert!(z.abs() < 3.0, "type {i}: z = {z}");
    }
}

#[test]
fn quotes_to_fit_to_attribution() {
    let dir = TempDir::new().unwrap();
    // quotes whose mid follows a simulated up/down path
    let s = simulate_path(&two_kernel(), &SimConfig::new(1500.0, 1, 36), 0).unwrap();
    let mut text = String::from("timestamp_ns,bid,ask\n0,100.00,100.02\n");
    let mut cents = 10_000i64;
    for r in s.records() {
        cents += if r.event_type == 1 { 1 } else { -1 };
        text.push_str(&format!("{},{}.{:02},{}.{:02}\n", r.timestamp_ns, cents / 100, cents % 100, (cents + 2) / 100, (cents + 2) % 100));
    }
    let path = dir.path().join("quotes.csv");
    std::fs::write(&path, text).unwrap();
    let (ev, rep) = ingest_path(&path, None).unwrap();
    assert_eq!(ev.times_ns(), s.times_ns());
    assert_eq!(ev.types(), s.types());
    assert!(rep.malformed.is_empty());

    let f = fit_profile(&ev, 2, ConstraintProfile::SymmetricBivariate, &GridSpec::default().with_points(11)).unwrap();
    let (diag, _, _) = diagnose(&f.params_hat, &ev).unwrap();
    assert!(diag.ks_pooled.p_value > 1e-3, "{diag:?}");
    let a = attribute_causes(&f.params_hat, &ev).unwrap();
    let total = a.pooled.base + a.pooled.kernels.iter().sum::<f64>();
    assert!((total - 1.0).abs() < 1e-9);
    // true base share is 0.6 / (total rate)
    assert!(a.pooled.base > 0.0 && a.pooled.base < 0.5);
}
