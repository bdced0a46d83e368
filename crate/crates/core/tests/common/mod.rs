//! Randomized invariant checks shared by the proptest suite and the
//! acceptance harness.

#![allow(dead_code)]

use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};
use sero_core::allocation::impute_doses;
use sero_core::completion::split_fully_by_vaccine;
use sero_core::corpus::{compute_delivery_shares, standardize_raw, DeliveryRecord, VaccineCatalog};
use sero_core::infection::{combine_seroprevalence, predict_theta_i, InfectionPosterior};
use sero_core::pipeline::aggregate::{world_trend, CountryDraws};
use sero_core::rng::StreamKey;
use sero_core::vaccination::sample_effective_count;

pub const CASES: u32 = 10_000;
const EPS: f64 = 1e-12;

pub type Check = fn(&mut TestRunner) -> Result<(), String>;

pub fn runner() -> TestRunner {
    TestRunner::new(Config { cases: CASES, failure_persistence: None, ..Config::default() })
}

fn amount() -> impl Strategy<Value = f64> {
    prop_oneof![1 => Just(0.0), 3 => 0.0..1e6f64]
}

pub fn delivery_share_simplex(runner: &mut TestRunner) -> Result<(), String> {
    let strategy = (1usize..6, 1usize..7).prop_flat_map(|(n, k)| {
        (Just(n), prop::collection::vec((0..n, prop::collection::vec(amount(), k)), 0..8))
    });
    runner
        .run(&strategy, |(n, recs)| {
            let k = recs.first().map(|r| r.1.len()).unwrap_or(1);
            let deliveries: Vec<DeliveryRecord> =
                recs.into_iter().map(|(country, amounts)| DeliveryRecord { country, amounts }).collect();
            let any_positive = deliveries.iter().any(|d| d.amounts.iter().sum::<f64>() > 0.0);
            match compute_delivery_shares(&deliveries, n, k) {
                Err(_) => prop_assert!(!any_positive),
                Ok(s) => {
                    prop_assert_eq!(s.shares.len(), n);
                    for row in &s.shares {
                        prop_assert!(row.iter().all(|&v| v >= 0.0));
                        prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                    }
                }
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
}

pub fn imputed_doses_sum_to_total(runner: &mut TestRunner) -> Result<(), String> {
    let strategy = (0u64..10_000_000, prop::collection::vec(prop_oneof![Just(0.0), 0.0..100.0f64], 1..9), -6.0..6.0f64, any::<u64>());
    runner
        .run(&strategy, |(total, w, beta, seed)| {
            let mut rng = StreamKey::new(seed, 1).stream(0, 0);
            match impute_doses(total, &w, beta, &mut rng) {
                Err(_) => prop_assert!(w.iter().all(|&v| v <= 0.0)),
                Ok(split) => {
                    prop_assert_eq!(split.iter().sum::<u64>(), total);
                    for (n, wk) in split.iter().zip(&w) {
                        prop_assert!(*wk > 0.0 || *n == 0);
                    }
                }
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
}

pub fn fully_split_sums_to_total(runner: &mut TestRunner) -> Result<(), String> {
    let catalog = VaccineCatalog::bundled();
    let k = catalog.len();
    let counts = || prop::collection::vec(prop_oneof![Just(0u64), 0u64..1_000_000], k);
    let strategy = (counts(), counts(), 0.0..=1.0f64, any::<u64>());
    runner
        .run(&strategy, |(now, lagged, u, seed)| {
            let type1: u64 = catalog.of_type(1).map(|i| now[i]).sum();
            let multi: u64 = (0..k).filter(|&i| catalog.doses_required(i) > 1).map(|i| now[i]).sum();
            // mostly feasible, with some Y below the single-dose total
            let y = ((type1 + multi) as f64 * u).round() as u64;
            let mut rng = StreamKey::new(seed, 2).stream(0, 0);
            let s = split_fully_by_vaccine(y, &now, &lagged, &catalog, &mut rng);
            let sum: u64 = s.per_vaccine.iter().sum();
            if y < type1 {
                prop_assert!(s.infeasible);
                prop_assert_eq!(sum, type1);
            } else {
                prop_assert!(!s.infeasible);
                prop_assert_eq!(sum, y);
            }
            for i in catalog.of_type(1) {
                prop_assert_eq!(s.per_vaccine[i], now[i]);
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
}

pub fn effective_count_within_doses(runner: &mut TestRunner) -> Result<(), String> {
    let catalog = VaccineCatalog::bundled();
    let k = catalog.len();
    let strategy = (
        prop::collection::vec(0u64..1_000_000, k),
        prop::collection::vec(0u64..1_000_000, k),
        prop::collection::vec((0.0..=1.0f64, 0.0..=1.0f64), k),
        any::<u64>(),
    );
    runner
        .run(&strategy, |(x, y, eff, seed)| {
            let mut rng = StreamKey::new(seed, 3).stream(0, 0);
            let draw = sample_effective_count(&x, &y, &eff, &catalog, &mut rng);
            prop_assert!(draw.m <= x.iter().sum::<u64>());
            prop_assert_eq!(draw.m, draw.components.iter().map(|(f, p)| f + p).sum::<u64>());
            for ((f, p), xk) in draw.components.iter().zip(&x) {
                prop_assert!(f + p <= *xk);
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
}

pub fn theta_i_bounded_and_monotone(runner: &mut TestRunner) -> Result<(), String> {
    let draw = (-3.0..4.0f64, 0.01..3.0f64, 0.01..2.0f64, -1.0..1.0f64, -1.0..1.0f64, -3.0..4.0f64);
    let strategy = (
        prop::collection::vec(draw, 1..6),
        prop::collection::vec(prop_oneof![Just(0.0), 0.0..0.09f64], 1..11),
        any::<bool>(),
        0usize..2,
        (-2.0..2.0f64, -2.0..2.0f64),
        any::<u64>(),
    );
    runner
        .run(&strategy, |(draws, steps, surveyed, country, (pd, g), seed)| {
            let cov = standardize_raw(&[pd, pd + 1.0], &[g, g - 0.5]).map_err(|e| TestCaseError::fail(e.to_string()))?;
            let mean: Vec<f64> = draws.iter().map(|d| d.5).collect();
            let mut country_mean = vec![None, None];
            if surveyed {
                country_mean[country] = Some(mean);
            }
            let post = InfectionPosterior {
                mu0: draws.iter().map(|d| d.0).collect(),
                sigma: draws.iter().map(|d| d.1).collect(),
                tau: draws.iter().map(|d| d.2).collect(),
                beta1: draws.iter().map(|d| d.3).collect(),
                beta2: draws.iter().map(|d| d.4).collect(),
                country_mean,
            };
            let theta_c: Vec<f64> = steps
                .iter()
                .scan(0.0, |acc, s| {
                    *acc += s;
                    Some(*acc)
                })
                .collect();
            let horizon = *theta_c.last().unwrap();
            let out = predict_theta_i(&post, country, &cov, &theta_c, horizon, &StreamKey::new(seed, 4));
            prop_assert_eq!(out.len(), draws.len());
            for path in &out {
                for (t, (&ti, &tc)) in path.iter().zip(&theta_c).enumerate() {
                    prop_assert!(ti >= tc - EPS && ti <= 1.0, "θI {} outside [{}, 1]", ti, tc);
                    if t > 0 {
                        prop_assert!(ti >= path[t - 1]);
                    }
                }
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
}

pub fn combine_bounds(runner: &mut TestRunner) -> Result<(), String> {
    let unit = || prop_oneof![1 => Just(0.0), 1 => Just(1.0), 8 => 0.0..=1.0f64];
    runner
        .run(&(unit(), unit()), |(v, i)| {
            let t = combine_seroprevalence(v, i);
            prop_assert!(t >= v.max(i) - EPS);
            prop_assert!(t <= (v + i).min(1.0) + EPS);
            Ok(())
        })
        .map_err(|e| e.to_string())
}

pub fn aggregation_convexity(runner: &mut TestRunner) -> Result<(), String> {
    let strategy = (1usize..4, 1usize..5).prop_flat_map(|(d, t)| {
        let grid = move || prop::collection::vec(prop::collection::vec(0.0..=1.0f64, t), d);
        (Just(t), prop::collection::vec((1.0..1e9f64, grid(), grid()), 1..6))
    });
    runner
        .run(&strategy, |(n_dates, raw)| {
            let countries: Vec<CountryDraws> = raw
                .into_iter()
                .enumerate()
                .map(|(c, (population, theta_v, theta_i))| CountryDraws {
                    code: format!("C{c}"),
                    population,
                    theta_v,
                    theta_i,
                })
                .collect();
            let dates: Vec<i64> = (0..n_dates as i64).collect();
            let w = world_trend(&countries, &dates).map_err(|e| TestCaseError::fail(e.to_string()))?;
            for d in 0..countries[0].theta_v.len() {
                for t in 0..n_dates {
                    let quantities: [(f64, Box<dyn Fn(&CountryDraws) -> f64>); 3] = [
                        (w.theta_v[d][t], Box::new(|c: &CountryDraws| c.theta_v[d][t])),
                        (w.theta_i[d][t], Box::new(|c: &CountryDraws| c.theta_i[d][t])),
                        (w.theta[d][t], Box::new(|c: &CountryDraws| c.theta(d, t))),
                    ];
                    for (world, of) in quantities {
                        let lo = countries.iter().map(&of).fold(f64::INFINITY, f64::min);
                        let hi = countries.iter().map(&of).fold(f64::NEG_INFINITY, f64::max);
                        prop_assert!(world >= lo - 1e-9 && world <= hi + 1e-9, "{} outside [{}, {}]", world, lo, hi);
                    }
                }
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
}

pub const SUITE: [(&str, Check); 7] = [
    ("delivery shares on the simplex", delivery_share_simplex),
    ("imputed doses sum to X", imputed_doses_sum_to_total),
    ("fully vaccinated split sums to Y", fully_split_sums_to_total),
    ("0 <= M <= X", effective_count_within_doses),
    ("theta_I in [theta_C, 1] and monotone", theta_i_bounded_and_monotone),
    ("combined seroprevalence bounds", combine_bounds),
    ("aggregation convexity", aggregation_convexity),
];
