mod common;

use common::rng;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use zonal_market::detection::{aggregate_states, classify_point, fit_null, run_tdsd, Band, ErrorPair, NullModel, Region, State};

fn normal(r: &mut impl Rng) -> f64 {
    StandardNormal.sample(r)
}

fn normals(r: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| normal(r)).collect()
}

#[test]
fn null_interval_has_nominal_type_one_error() {
    let mut r = rng(71);
    let null = fit_null(&normals(&mut r, 10_000), 0.975).unwrap();
    let fresh = normals(&mut r, 10_000);
    let rate = fresh.iter().filter(|&&e| null.rejects(e)).count() as f64 / 1e4;
    assert!((rate - 0.025).abs() <= 0.01, "rate {rate}");
}

#[test]
fn pure_null_series_rejects_at_nominal_rate_per_axis() {
    let mut r = rng(72);
    let n = 10_000;
    let target: Vec<Vec<Option<f64>>> = (0..n).map(|_| vec![Some(r.random_range(20.0..80.0))]).collect();
    let tb: Vec<Vec<Option<f64>>> = target.iter().map(|p| vec![Some(p[0].unwrap() - 3.0 * normal(&mut r))]).collect();
    let gt: Vec<Vec<Option<f64>>> = target.iter().map(|p| vec![Some(p[0].unwrap() + 1.0 + 2.0 * normal(&mut r))]).collect();
    let s = run_tdsd(&tb, &gt, &target, 0.975).unwrap();
    let nulls = &s.nulls[0];
    let tb_rate = s.errors.iter().filter(|row| nulls.tb.rejects(row[0].unwrap().e_tb)).count() as f64 / n as f64;
    let gt_rate = s.errors.iter().filter(|row| nulls.gt.rejects(row[0].unwrap().e_gt)).count() as f64 / n as f64;
    assert!((tb_rate - 0.025).abs() <= 0.01, "tb {tb_rate}");
    assert!((gt_rate - 0.025).abs() <= 0.01, "gt {gt_rate}");
}

#[test]
fn shared_small_noise_is_mostly_null() {
    let mut r = rng(73);
    let n = 10_000;
    let target: Vec<Vec<Option<f64>>> = (0..n).map(|_| vec![Some(50.0), Some(40.0)]).collect();
    let model: Vec<Vec<Option<f64>>> =
        target.iter().map(|p| p.iter().map(|v| Some(v.unwrap() + 0.01 * normal(&mut r))).collect()).collect();
    let s = run_tdsd(&model, &model, &target, 0.975).unwrap();
    let points = s.labels.iter().flatten().count() as f64;
    let s0 = s.labels.iter().flatten().filter(|l| l.unwrap().state == State::S0).count() as f64;
    assert!((s0 / points - 0.975).abs() <= 0.01, "{}", s0 / points);
}

#[test]
fn injected_strategic_hours_are_recovered() {
    let mut r = rng(74);
    let n = 10_000;
    let mut target = Vec::new();
    let mut tb = Vec::new();
    let mut gt = Vec::new();
    let mut injected = Vec::new();
    for t in 0..n {
        let p: f64 = r.random_range(20.0..80.0);
        let (e_tb, e_gt) = (normal(&mut r), normal(&mut r));
        if t % 20 == 7 {
            let sign = if r.random_bool(0.5) { 1.0 } else { -1.0 };
            injected.push(t);
            target.push(vec![Some(p)]);
            tb.push(vec![Some(p - sign * 5.0)]);
            gt.push(vec![Some(p)]);
        } else {
            target.push(vec![Some(p)]);
            tb.push(vec![Some(p - e_tb)]);
            gt.push(vec![Some(p - e_gt)]);
        }
    }
    let s = run_tdsd(&tb, &gt, &target, 0.975).unwrap();
    let hits = injected.iter().filter(|&&t| s.aggregate[t] == Some(State::Gt)).count();
    let recall = hits as f64 / injected.len() as f64;
    assert!(recall >= 0.9, "recall {recall}");
}

#[test]
fn single_zone_aggregate_is_the_zone_label() {
    let mut r = rng(75);
    let target: Vec<Vec<Option<f64>>> = (0..500).map(|_| vec![Some(30.0)]).collect();
    let tb: Vec<Vec<Option<f64>>> = (0..500).map(|_| vec![Some(30.0 + normal(&mut r))]).collect();
    let gt: Vec<Vec<Option<f64>>> = (0..500).map(|_| vec![Some(30.0 + normal(&mut r))]).collect();
    let s = run_tdsd(&tb, &gt, &target, 0.9).unwrap();
    for (row, agg) in s.labels.iter().zip(&s.aggregate) {
        assert_eq!(row[0].map(|l| l.state), *agg);
    }
}

#[test]
fn misaligned_series_are_rejected() {
    let a = vec![vec![Some(1.0)]; 3];
    let b = vec![vec![Some(1.0)]; 2];
    assert!(run_tdsd(&a, &b, &a, 0.975).is_err());
}

#[test]
fn every_band_pair_has_its_own_region() {
    let bands = [Band::Low, Band::In, Band::High];
    let mut seen = Vec::new();
    for tb in bands {
        for gt in bands {
            let region = Region::from_bands(tb, gt);
            assert!(!seen.contains(&region));
            seen.push(region);
        }
    }
    assert_eq!(seen.len(), 9);
}

fn state_strategy() -> impl Strategy<Value = State> {
    prop::sample::select(State::ALL.to_vec())
}

proptest! {
    #[test]
    fn adding_a_zone_never_lowers_the_aggregate(
        states in prop::collection::vec(state_strategy(), 1..8),
        extra in state_strategy(),
    ) {
        let before = aggregate_states(&states).unwrap();
        let mut more = states.clone();
        more.push(extra);
        prop_assert!(aggregate_states(&more).unwrap() >= before);
    }

    #[test]
    fn shifting_errors_shifts_the_interval(
        seed in 0u64..1000,
        shift in -50.0f64..50.0,
    ) {
        let mut r = rng(seed);
        let e: Vec<f64> = normals(&mut r, 200);
        let g: Vec<f64> = normals(&mut r, 200);
        let shifted: Vec<f64> = e.iter().map(|v| v + shift).collect();
        let (a, b, ng) = (fit_null(&e, 0.975).unwrap(), fit_null(&shifted, 0.975).unwrap(), fit_null(&g, 0.975).unwrap());
        prop_assert!((b.ci_lo - a.ci_lo - shift).abs() <= 1e-9);
        prop_assert!((b.ci_hi - a.ci_hi - shift).abs() <= 1e-9);
        for (k, (&x, &y)) in e.iter().zip(&shifted).enumerate() {
            let pa = classify_point(ErrorPair { e_tb: x, e_gt: g[k] }, &a, &ng);
            let pb = classify_point(ErrorPair { e_tb: y, e_gt: g[k] }, &b, &ng);
            // Boundary points may flip by rounding.
            let near = |n: &NullModel, v: f64| (v - n.ci_lo).abs() < 1e-9 || (v - n.ci_hi).abs() < 1e-9;
            if !near(&a, x) {
                prop_assert_eq!(pa, pb);
            }
        }
    }
}
