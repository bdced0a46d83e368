//! Simulated datasets with known parameters: model-level data for the
//! recovery checks and a small end-to-end corpus.

use crate::allocation::{allocation_probs, AllocationWeights, ObservedSplit};
use crate::completion::{completion_mean, context_from_wstar, CompletionRow};
use crate::corpus::{
    bundled_trials, AccuracyEvidence, CountryStats, Corpus, Day, DeliveryRecord, Serosurvey, VaccinationReport,
    VaccineCatalog, VaccineCatalogEntry,
};
use crate::infection::{apparent_prevalence, combine_seroprevalence};
use crate::rng::{binomial, multinomial, StreamKey, StreamRng};
use crate::truncnorm::TruncatedNormal;
use chrono::NaiveDate;
use rand::Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

/// Posterior means reported for the 2021 data, used as simulation truth.
pub const ALLOCATION_BETA: f64 = 1.0;
pub const COMPLETION_BETA0: f64 = -0.935;
pub const COMPLETION_BETA1: f64 = 1.15;
pub const INFECTION_BETA1: f64 = 0.079;
pub const INFECTION_BETA2: f64 = -0.581;

/// Observed splits drawn from the allocation model itself.
pub fn allocation_dataset(seed: u64, n_rows: usize, beta: f64) -> (Vec<ObservedSplit>, AllocationWeights) {
    let mut rng = StreamKey::named(seed, "synthetic-allocation").stream(0, 0);
    let k_max = 3;
    let mut w = Vec::with_capacity(n_rows);
    let mut rows = Vec::with_capacity(n_rows);
    for i in 0..n_rows {
        let weights: Vec<f64> = (0..k_max).map(|_| 10f64.powf(rng.random_range(2.0..5.0))).collect();
        let total = rng.random_range(200..3000);
        let p = allocation_probs(&weights, beta).expect("positive weights");
        rows.push(ObservedSplit { row: (i, 0), counts: multinomial(total, &p, &mut rng) });
        w.push(vec![weights]);
    }
    (rows, AllocationWeights { dw: w.clone(), w })
}

/// Completion rows with Poisson counts at the given coefficients. Vaccines
/// are one single-dose, one two-dose and one three-dose product.
pub fn completion_dataset(seed: u64, n_rows: usize, beta0: f64, beta1: f64) -> Vec<CompletionRow> {
    let mut rng = StreamKey::named(seed, "synthetic-completion").stream(0, 0);
    let catalog = VaccineCatalog::new(vec![
        VaccineCatalogEntry { vaccine_id: 1, manufacturer_name: "One".into(), vtype: 1, interval_days: 0 },
        VaccineCatalogEntry { vaccine_id: 2, manufacturer_name: "Two".into(), vtype: 2, interval_days: 21 },
        VaccineCatalogEntry { vaccine_id: 3, manufacturer_name: "Three".into(), vtype: 3, interval_days: 56 },
    ])
    .expect("valid catalog");
    (0..n_rows)
        .map(|i| {
            let x: u64 = rng.random_range(20_000..2_000_000);
            let z = x as f64 / rng.random_range(15.0..80.0);
            let raw: Vec<f64> = vec![rng.random_range(0.0..0.3), rng.random_range(0.2..1.0), rng.random_range(0.0..0.5)];
            let total: f64 = raw.iter().sum();
            let wstar = raw.iter().map(|v| v / total).collect();
            let ctx = context_from_wstar((i, 1), Some(0), z, wstar, &catalog, false, false);
            let lambda = completion_mean(x, &ctx, beta0, beta1).expect("defined mean");
            let count = Poisson::new(lambda).map(|p| p.sample(&mut rng)).unwrap_or(lambda) as u64;
            CompletionRow { x, count, ctx }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InfectionTruth {
    pub mu0: f64,
    pub sigma: f64,
    pub tau: f64,
    pub beta1: f64,
    pub beta2: f64,
}

impl Default for InfectionTruth {
    fn default() -> Self {
        Self { mu0: 1.0, sigma: 0.4, tau: 0.3, beta1: INFECTION_BETA1, beta2: INFECTION_BETA2 }
    }
}

fn country_code(i: usize) -> String {
    let a = (b'A' + (i / 26 % 26) as u8) as char;
    let b = (b'A' + (i % 26) as u8) as char;
    format!("Q{a}{b}")
}

/// Survey-only corpus drawn from the hierarchical infection model with no
/// vaccination. Two surveys per country.
pub fn infection_corpus(seed: u64, n_countries: usize, truth: InfectionTruth) -> Corpus {
    let mut rng = StreamKey::named(seed, "synthetic-infection").stream(0, 0);
    let last_day = 120;
    let mut countries = Vec::with_capacity(n_countries);
    for i in 0..n_countries {
        let population = rng.random_range(1_000_000..50_000_000u64);
        let final_ratio = rng.random_range(0.005..0.06);
        let confirmed = (0..=last_day)
            .step_by(10)
            .map(|d| (d, (population as f64 * final_ratio * (0.2 + 0.8 * d as f64 / last_day as f64)) as u64))
            .collect();
        countries.push(CountryStats {
            code: country_code(i),
            population,
            pop_density: (rng.random_range(2.0..7.0f64)).exp(),
            gdp_per_capita: (rng.random_range(7.0..11.0f64)).exp(),
            confirmed,
            rollout_start: None,
        });
    }
    let cov = crate::corpus::standardize_covariates(&countries).expect("spread covariates");
    let mut surveys = Vec::new();
    let normal = Normal::new(truth.mu0, truth.sigma).expect("positive sigma");
    for (i, c) in countries.iter().enumerate() {
        let beta_i = normal.sample(&mut rng);
        let mean = beta_i + truth.beta1 * cov.density[i] + truth.beta2 * cov.gdp[i];
        for day in [60, 115] {
            let theta_c = c.confirmed_at(day) as f64 / c.population as f64;
            let tn = TruncatedNormal::new(mean, truth.tau, 0.0, -theta_c.ln()).expect("valid interval");
            let theta_i = (theta_c * tn.sample(&mut rng).exp()).min(1.0);
            let (tp, fn_) = (rng.random_range(80..200u64), rng.random_range(2..15u64));
            let (tn_, fp) = (rng.random_range(150..400u64), rng.random_range(0..6u64));
            let p_plus = rand_distr::Beta::new(tp as f64 + 1.0, fn_ as f64 + 1.0).unwrap().sample(&mut rng);
            let p_minus = rand_distr::Beta::new(tn_ as f64 + 1.0, fp as f64 + 1.0).unwrap().sample(&mut rng);
            let n = rng.random_range(800..4000u64);
            let x = binomial(n, apparent_prevalence(theta_i, p_plus, p_minus), &mut rng);
            surveys.push(Serosurvey {
                survey_id: surveys.len() + 1,
                country: i,
                end_date: day,
                n_samples: n,
                n_positive: x,
                sensitivity: AccuracyEvidence::Counts { correct: tp, incorrect: fn_ },
                specificity: AccuracyEvidence::Counts { correct: tn_, incorrect: fp },
            });
        }
    }
    Corpus {
        epoch: NaiveDate::from_ymd_opt(2021, 1, 1).expect("valid date"),
        last_day,
        catalog: VaccineCatalog::bundled(),
        countries,
        vaccination: vec![Vec::new(); n_countries],
        deliveries: Vec::new(),
        trials: bundled_trials(),
        surveys,
    }
}

/// Generating values behind the end-to-end fixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixtureTruth {
    pub seed: u64,
    pub efficacy_full: f64,
    pub efficacy_partial: f64,
    pub infection: InfectionTruth,
    /// Country mean log ratio per country.
    pub country_mean: Vec<f64>,
    /// True θ_V, θ_I and θ at each survey.
    pub survey_theta_v: Vec<f64>,
    pub survey_theta_i: Vec<f64>,
    pub survey_theta: Vec<f64>,
}

struct FixtureCountry {
    code: &'static str,
    population: u64,
    density: f64,
    gdp: f64,
    rollout: Option<Day>,
    /// Start day and share per vaccine, `None` when never used.
    vaccines: [Option<(Day, f64)>; 3],
    daily_rate: f64,
    final_confirmed: f64,
}

fn fixture_countries() -> Vec<FixtureCountry> {
    vec![
        FixtureCountry {
            code: "AAA",
            population: 4_200_000,
            density: 85.0,
            gdp: 42_000.0,
            rollout: Some(12),
            vaccines: [Some((12, 0.7)), Some((20, 0.3)), None],
            daily_rate: 0.0045,
            final_confirmed: 0.045,
        },
        FixtureCountry {
            code: "BBB",
            population: 18_000_000,
            density: 320.0,
            gdp: 9_000.0,
            rollout: Some(20),
            vaccines: [Some((20, 0.5)), Some((20, 0.3)), Some((55, 0.2))],
            daily_rate: 0.003,
            final_confirmed: 0.03,
        },
        FixtureCountry {
            code: "CCC",
            population: 9_500_000,
            density: 24.0,
            gdp: 2_500.0,
            rollout: None,
            vaccines: [None, Some((30, 0.6)), Some((30, 0.4))],
            daily_rate: 0.0015,
            final_confirmed: 0.012,
        },
        FixtureCountry {
            code: "DDD",
            population: 31_000_000,
            density: 150.0,
            gdp: 15_000.0,
            rollout: Some(15),
            vaccines: [Some((15, 0.8)), None, Some((40, 0.2))],
            daily_rate: 0.004,
            final_confirmed: 0.06,
        },
        FixtureCountry {
            code: "EEE",
            population: 6_000_000,
            density: 510.0,
            gdp: 60_000.0,
            rollout: Some(8),
            vaccines: [Some((8, 0.4)), Some((8, 0.35)), Some((25, 0.25))],
            daily_rate: 0.005,
            final_confirmed: 0.025,
        },
    ]
}

/// Per-day cumulative `(X_k, Y_k)` from a first-dose schedule with every
/// recipient returning after the recommended interval.
fn simulate_doses(c: &FixtureCountry, catalog: &VaccineCatalog, days: usize) -> Vec<Vec<(u64, u64)>> {
    let mut first = vec![vec![0.0f64; days]; 3];
    for (k, v) in c.vaccines.iter().enumerate() {
        let Some((start, share)) = *v else { continue };
        for t in (start as usize)..days {
            let ramp = ((t as f64 - start as f64 + 1.0) / 30.0).min(1.0);
            first[k][t] = c.population as f64 * c.daily_rate * share * ramp;
        }
    }
    (0..days)
        .map(|t| {
            (0..3)
                .map(|k| {
                    let cum_first: f64 = first[k][..=t].iter().sum();
                    let (x, y) = match catalog.doses_required(k) {
                        1 => (cum_first, cum_first),
                        _ => {
                            let lag = catalog.interval(k) as usize;
                            let done: f64 = if t >= lag { first[k][..=t - lag].iter().sum() } else { 0.0 };
                            (cum_first + done, done)
                        }
                    };
                    (x.round() as u64, y.round() as u64)
                })
                .collect()
        })
        .collect()
}

pub fn fixture_catalog() -> VaccineCatalog {
    VaccineCatalog::new(vec![
        VaccineCatalogEntry { vaccine_id: 1, manufacturer_name: "Pfizer".into(), vtype: 2, interval_days: 21 },
        VaccineCatalogEntry { vaccine_id: 2, manufacturer_name: "AstraZeneca".into(), vtype: 2, interval_days: 84 },
        VaccineCatalogEntry { vaccine_id: 3, manufacturer_name: "Janssen".into(), vtype: 1, interval_days: 0 },
    ])
    .expect("valid catalog")
}

/// Five countries, three vaccines, ten surveys over 120 days.
pub fn fixture_corpus(seed: u64) -> (Corpus, FixtureTruth) {
    let key = StreamKey::named(seed, "fixture");
    let mut rng: StreamRng = key.stream(0, 0);
    let days = 120usize;
    let catalog = fixture_catalog();
    let spec = fixture_countries();
    let (e_full, e_partial) = (0.9, 0.65);

    let mut countries = Vec::new();
    let mut vaccination = Vec::new();
    let mut deliveries = Vec::new();
    let mut schedules = Vec::new();
    for (i, c) in spec.iter().enumerate() {
        let start_ratio = c.final_confirmed * rng.random_range(0.1..0.2);
        let mut cum = 0u64;
        let confirmed = (0..days as Day)
            .map(|d| {
                let frac = (d as f64 / (days - 1) as f64).powf(1.3);
                let target = (c.population as f64 * (start_ratio + (c.final_confirmed - start_ratio) * frac)) as u64;
                cum = cum.max(target);
                (d, cum)
            })
            .collect();
        countries.push(CountryStats {
            code: c.code.into(),
            population: c.population,
            pop_density: c.density,
            gdp_per_capita: c.gdp,
            confirmed,
            rollout_start: c.rollout,
        });

        let doses = simulate_doses(c, &catalog, days);
        let first_day = c.vaccines.iter().flatten().map(|v| v.0).min().expect("some vaccine");
        let mut reports = Vec::new();
        let mut d = first_day + rng.random_range(1..4);
        while (d as usize) < days {
            let t = d as usize;
            let x: u64 = doses[t].iter().map(|v| v.0).sum();
            let y: u64 = doses[t].iter().map(|v| v.1).sum();
            let in_use: Vec<usize> =
                (0..3).filter(|&k| matches!(c.vaccines[k], Some((s, _)) if s <= d)).collect();
            reports.push(VaccinationReport {
                country: i,
                date: d,
                cum_doses: x,
                cum_fully: rng.random_bool(0.6).then_some(y),
                vaccines_in_use: in_use,
                per_vaccine_doses: rng.random_bool(0.35).then(|| doses[t].iter().map(|v| v.0).collect()),
            });
            d += rng.random_range(3..8);
        }
        vaccination.push(reports);

        let total = c.population as f64 * 0.8;
        deliveries.push(DeliveryRecord {
            country: i,
            amounts: c
                .vaccines
                .iter()
                .map(|v| v.map(|(_, s)| (total * s * rng.random_range(0.85..1.15)).round()).unwrap_or(0.0))
                .collect(),
        });
        schedules.push(doses);
    }

    let cov = crate::corpus::standardize_covariates(&countries).expect("spread covariates");
    let infection = InfectionTruth { mu0: 1.5, sigma: 0.3, tau: 0.25, ..Default::default() };
    let normal = Normal::new(infection.mu0, infection.sigma).expect("positive sigma");
    let country_mean: Vec<f64> = (0..spec.len())
        .map(|i| normal.sample(&mut rng) + infection.beta1 * cov.density[i] + infection.beta2 * cov.gdp[i])
        .collect();

    // (country, day, sensitivity, specificity)
    let plan: [(usize, Day, AccuracyEvidence, AccuracyEvidence); 10] = [
        (0, 20, AccuracyEvidence::Counts { correct: 92, incorrect: 8 }, AccuracyEvidence::Counts { correct: 198, incorrect: 2 }),
        (0, 110, AccuracyEvidence::Counts { correct: 180, incorrect: 12 }, AccuracyEvidence::Counts { correct: 300, incorrect: 3 }),
        (1, 15, AccuracyEvidence::Fixed(0.93), AccuracyEvidence::Fixed(1.0)),
        (1, 118, AccuracyEvidence::Counts { correct: 140, incorrect: 10 }, AccuracyEvidence::Counts { correct: 250, incorrect: 4 }),
        (2, 40, AccuracyEvidence::Counts { correct: 120, incorrect: 9 }, AccuracyEvidence::Counts { correct: 240, incorrect: 3 }),
        (2, 95, AccuracyEvidence::Counts { correct: 120, incorrect: 9 }, AccuracyEvidence::Counts { correct: 240, incorrect: 3 }),
        (3, 30, AccuracyEvidence::Counts { correct: 110, incorrect: 6 }, AccuracyEvidence::Counts { correct: 220, incorrect: 1 }),
        (3, 100, AccuracyEvidence::Fixed(0.9), AccuracyEvidence::Fixed(0.99)),
        (4, 45, AccuracyEvidence::Counts { correct: 95, incorrect: 5 }, AccuracyEvidence::Counts { correct: 200, incorrect: 2 }),
        (4, 105, AccuracyEvidence::Counts { correct: 95, incorrect: 5 }, AccuracyEvidence::Counts { correct: 200, incorrect: 2 }),
    ];
    let mut surveys = Vec::new();
    let (mut tv, mut ti, mut tt) = (Vec::new(), Vec::new(), Vec::new());
    for (l, (i, day, sens, spec_ev)) in plan.into_iter().enumerate() {
        let c = &countries[i];
        let theta_c = c.confirmed_at(day) as f64 / c.population as f64;
        let tn = TruncatedNormal::new(country_mean[i], infection.tau, 0.0, -theta_c.ln()).expect("valid interval");
        let theta_i = (theta_c * tn.sample(&mut rng).exp()).min(1.0);
        let doses = &schedules[i][day as usize];
        let effective: f64 = (0..3)
            .map(|k| {
                let (x, y) = doses[k];
                let partial = if catalog.doses_required(k) > 1 { x.saturating_sub(2 * y) } else { 0 };
                y as f64 * e_full + partial as f64 * e_partial
            })
            .sum();
        let theta_v = (effective / c.population as f64).min(1.0);
        let theta = combine_seroprevalence(theta_v, theta_i);
        let accuracy = |e: &AccuracyEvidence| match *e {
            AccuracyEvidence::Counts { correct, incorrect } => correct as f64 / (correct + incorrect) as f64,
            AccuracyEvidence::Fixed(v) => v,
        };
        let n = rng.random_range(1500..4000u64);
        let x = binomial(n, apparent_prevalence(theta, accuracy(&sens), accuracy(&spec_ev)), &mut rng);
        surveys.push(Serosurvey {
            survey_id: l + 1,
            country: i,
            end_date: day,
            n_samples: n,
            n_positive: x,
            sensitivity: sens,
            specificity: spec_ev,
        });
        tv.push(theta_v);
        ti.push(theta_i);
        tt.push(theta);
    }

    let corpus = Corpus {
        epoch: NaiveDate::from_ymd_opt(2021, 1, 1).expect("valid date"),
        last_day: days as Day - 1,
        catalog,
        countries,
        vaccination,
        deliveries,
        trials: bundled_trials(),
        surveys,
    };
    let truth = FixtureTruth {
        seed,
        efficacy_full: e_full,
        efficacy_partial: e_partial,
        infection,
        country_mean,
        survey_theta_v: tv,
        survey_theta_i: ti,
        survey_theta: tt,
    };
    (corpus, truth)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixture_shape() {
        let (c, truth) = fixture_corpus(7);
        assert_eq!(c.n_countries(), 5);
        assert_eq!(c.n_vaccines(), 3);
        assert_eq!(c.surveys.len(), 10);
        assert_eq!(c.last_day, 119);
        assert_eq!(truth.survey_theta.len(), 10);
        for reps in &c.vaccination {
            assert!(reps.windows(2).all(|w| w[0].date < w[1].date && w[0].cum_doses <= w[1].cum_doses));
            for r in reps {
                assert!(r.cum_fully.is_none_or(|y| y <= r.cum_doses));
                if let Some(p) = &r.per_vaccine_doses {
                    assert_eq!(p.iter().sum::<u64>(), r.cum_doses);
                    assert!(p.iter().enumerate().all(|(k, &n)| n == 0 || r.uses(k)));
                }
            }
        }
        assert_eq!(fixture_corpus(7).0, c);
    }

    #[test]
    fn completion_rows_follow_the_mean() {
        let rows = completion_dataset(3, 200, COMPLETION_BETA0, COMPLETION_BETA1);
        let ratio: f64 = rows
            .iter()
            .map(|r| r.count as f64 / completion_mean(r.x, &r.ctx, COMPLETION_BETA0, COMPLETION_BETA1).unwrap())
            .sum::<f64>()
            / rows.len() as f64;
        assert!((ratio - 1.0).abs() < 0.01, "{ratio}");
    }

    #[test]
    fn infection_corpus_is_consistent() {
        let c = infection_corpus(1, 40, InfectionTruth::default());
        assert_eq!(c.surveys.len(), 80);
        assert!(c.surveys.iter().all(|s| s.n_positive <= s.n_samples));
        assert!(c.confirmed_ratio(0, 60).unwrap() > 0.0);
    }
}
