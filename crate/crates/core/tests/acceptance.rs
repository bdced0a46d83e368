//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any fails.

mod common;

use chrono::NaiveDate;
use sero_core::allocation::{allocation_loglik, check_theorem1, AllocationModel, ObservedSplit};
use sero_core::completion::{check_theorem2, completion_loglik, CompletionModel};
use sero_core::corpus::{bundled_trials, AccuracyEvidence, CountryStats, Corpus, Serosurvey, VaccineCatalog};
use sero_core::efficacy::{fit_efficacy, PoissonTrialModel};
use sero_core::infection::{survey_points, InfectionModel, RatioPrior, ThetaVPrior};
use sero_core::mcmc::{run_chains, ChainConfig, McmcError, PosteriorStore};
use sero_core::optim::{nelder_mead, NelderMeadOptions};
use sero_core::pipeline::{run_pipeline, sha256_file, Config};
use sero_core::synthetic::{
    allocation_dataset, completion_dataset, infection_corpus, InfectionTruth, ALLOCATION_BETA, COMPLETION_BETA0,
    COMPLETION_BETA1, INFECTION_BETA1, INFECTION_BETA2,
};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

type Outcome = Result<String, String>;

fn protocol(seed: u64) -> ChainConfig {
    ChainConfig { n_chains: 4, n_iter: 4000, n_burnin: 2000, seed, adapt_window: 50 }
}

fn within(budget_s: f64, start: Instant, detail: String) -> Outcome {
    let t = start.elapsed().as_secs_f64();
    if t < budget_s {
        Ok(format!("{detail}; {t:.1} s < {budget_s} s"))
    } else {
        Err(format!("{detail}; {t:.1} s exceeds {budget_s} s"))
    }
}

fn ks_distance(draws: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut x = draws.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    x.iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = cdf(v);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

fn country(code: &str, population: u64, confirmed: u64, density: f64, gdp: f64) -> CountryStats {
    CountryStats {
        code: code.into(),
        population,
        pop_density: density,
        gdp_per_capita: gdp,
        confirmed: vec![(0, confirmed), (100, confirmed)],
        rollout_start: None,
    }
}

fn conjugate_oracle() -> Outcome {
    let start = Instant::now();
    let (n, x) = (1000u64, 30u64);
    let population = 1_000_000;
    let confirmed = 25_000;
    let theta_c = confirmed as f64 / population as f64;
    let corpus = Corpus {
        epoch: NaiveDate::from_ymd_opt(2021, 1, 1).unwrap(),
        last_day: 100,
        catalog: VaccineCatalog::bundled(),
        countries: vec![
            country("AAA", population, confirmed, 100.0, 20_000.0),
            country("BBB", 3 * population, 1_000, 30.0, 4_000.0),
        ],
        vaccination: vec![Vec::new(), Vec::new()],
        deliveries: Vec::new(),
        trials: bundled_trials(),
        surveys: vec![Serosurvey {
            survey_id: 1,
            country: 0,
            end_date: 50,
            n_samples: n,
            n_positive: x,
            sensitivity: AccuracyEvidence::Fixed(1.0),
            specificity: AccuracyEvidence::Fixed(1.0),
        }],
    };
    let surveys = survey_points(&corpus, 200.0).map_err(|e| e.to_string())?;
    let cov = corpus.covariates().map_err(|e| e.to_string())?;
    let model = InfectionModel::new(surveys, &corpus, &cov, ThetaVPrior::Zero, RatioPrior::FlatTheta)
        .map_err(|e| e.to_string())?;
    let mut store = run_chains(&model, &protocol(101)).map_err(|e| e.to_string())?;
    model.add_derived(&mut store).map_err(|e| e.to_string())?;
    let draws = store.require("theta_i_1").map_err(|e| e.to_string())?;

    // binomial likelihood times a flat prior on (θ_C, 1), midpoint rule
    let m = 1_000_000;
    let h = (1.0 - theta_c) / m as f64;
    let ln_f = |t: f64| x as f64 * t.ln() + (n - x) as f64 * (1.0 - t).ln();
    let peak = ln_f((x as f64 / n as f64).max(theta_c));
    let mut cum = Vec::with_capacity(m + 1);
    cum.push(0.0);
    for i in 0..m {
        let t = theta_c + (i as f64 + 0.5) * h;
        cum.push(cum[i] + (ln_f(t) - peak).exp() * h);
    }
    let total = cum[m];
    let cdf = |t: f64| {
        let u = ((t - theta_c) / h).clamp(0.0, m as f64);
        let i = (u.floor() as usize).min(m - 1);
        (cum[i] + (u - i as f64) * (cum[i + 1] - cum[i])) / total
    };
    let d = ks_distance(draws, cdf);
    let detail = format!("KS {d:.4} over {} draws", draws.len());
    if d >= 0.05 {
        return Err(detail + " (limit 0.05)");
    }
    within(30.0, start, detail)
}

fn efficacy_sanity() -> Outcome {
    let start = Instant::now();
    let fit = fit_efficacy(&bundled_trials(), &VaccineCatalog::bundled()).map_err(|e| e.to_string())?;
    let pfizer = fit
        .trials
        .iter()
        .find(|t| t.manufacturer == "Pfizer" && t.dose_stage == 2)
        .ok_or("no Pfizer full-dose trial")?;
    if !(0.90..=0.97).contains(&pfizer.mean) {
        return Err(format!("Pfizer full-dose mean {:.4} outside [0.90, 0.97]", pfizer.mean));
    }
    let worst = fit
        .trials
        .iter()
        .max_by(|a, b| (a.mean - a.crude).abs().total_cmp(&(b.mean - b.crude).abs()))
        .ok_or("no trials")?;
    let gap = (worst.mean - worst.crude).abs();
    let detail = format!(
        "Pfizer full {:.4}; largest gap to crude {gap:.4} ({} dose {})",
        pfizer.mean, worst.manufacturer, worst.dose_stage
    );
    if gap > 0.05 {
        return Err(detail + " exceeds 0.05");
    }
    within(10.0, start, detail)
}

fn rate_prior_independence() -> Outcome {
    let catalog = VaccineCatalog::bundled();
    let trials = bundled_trials();
    let fit = fit_efficacy(&trials, &catalog).map_err(|e| e.to_string())?;
    let mut worst = (0.0f64, String::new());
    for (t, s) in trials.iter().zip(&fit.trials) {
        let h = fit.hyper(s.group);
        // separate seeds, since the E chain would otherwise repeat exactly
        let mean = |shape: f64, rate: f64, seed: u64| -> Result<f64, String> {
            let model = PoissonTrialModel { trial: t.clone(), alpha: h.alpha, beta: h.beta, lambda_shape: shape, lambda_rate: rate };
            let cfg = ChainConfig { n_iter: 8000, ..protocol(seed) };
            let store = run_chains(&model, &cfg).map_err(|e| e.to_string())?;
            Ok(store.diagnostic("E").ok_or("no E column")?.mean)
        };
        let diff = (mean(1.0, 1.0, 303)? - mean(0.01, 0.01, 304)?).abs();
        if diff > worst.0 {
            worst = (diff, format!("{} dose {}", t.manufacturer_name, t.dose_stage));
        }
    }
    let detail = format!("largest E-mean difference {:.4} ({}) across {} trials", worst.0, worst.1, trials.len());
    if worst.0 < 0.01 {
        Ok(detail)
    } else {
        Err(detail + ", limit 0.01")
    }
}

fn covers(store: &PosteriorStore, name: &str, truth: f64) -> Result<bool, String> {
    let d = store.diagnostic(name).ok_or(format!("no column {name}"))?;
    Ok(d.q025 <= truth && truth <= d.q975)
}

fn recovery() -> Outcome {
    let start = Instant::now();
    let reps = 20u64;
    let chains = |seed| ChainConfig { n_chains: 4, n_iter: 3000, n_burnin: 1500, seed, adapt_window: 50 };
    let mut hits = [0u32; 4];
    for r in 0..reps {
        let (rows, weights) = allocation_dataset(1000 + r, 20, ALLOCATION_BETA);
        let (model, _) = AllocationModel::new(rows, weights);
        let store = run_chains(&model, &chains(r)).map_err(|e| e.to_string())?;
        hits[0] += covers(&store, "beta_v1", ALLOCATION_BETA)? as u32;

        let model = CompletionModel { rows: completion_dataset(2000 + r, 40, COMPLETION_BETA0, COMPLETION_BETA1) };
        let store = run_chains(&model, &chains(r)).map_err(|e| e.to_string())?;
        hits[1] += (covers(&store, "beta0_v2", COMPLETION_BETA0)? && covers(&store, "beta1_v2", COMPLETION_BETA1)?) as u32;

        let corpus = infection_corpus(3000 + r, 40, InfectionTruth::default());
        let surveys = survey_points(&corpus, 200.0).map_err(|e| e.to_string())?;
        let cov = corpus.covariates().map_err(|e| e.to_string())?;
        let model = InfectionModel::new(surveys, &corpus, &cov, ThetaVPrior::Zero, RatioPrior::Hierarchical)
            .map_err(|e| e.to_string())?;
        let store = run_chains(&model, &chains(r)).map_err(|e| e.to_string())?;
        hits[2] += covers(&store, "beta1_i", INFECTION_BETA1)? as u32;
        hits[3] += covers(&store, "beta2_i", INFECTION_BETA2)? as u32;
    }
    let detail = format!(
        "coverage of {reps}: allocation {}, completion {}, infection beta1 {}, infection beta2 {}",
        hits[0], hits[1], hits[2], hits[3]
    );
    if hits.iter().any(|&h| h < 18) {
        return Err(detail + " (need 18)");
    }
    within(1200.0, start, detail)
}

fn propriety_guards() -> Outcome {
    let mut notes = Vec::new();
    let refused = |r: Result<PosteriorStore, McmcError>, what: &str| -> Result<String, String> {
        match r {
            Err(McmcError::Improper(w)) if !w.is_empty() => Ok(w),
            Err(e) => Err(format!("{what}: unexpected error {e}")),
            Ok(_) => Err(format!("{what}: sampled a fixture that violates the condition")),
        }
    };
    let short = ChainConfig { n_chains: 2, n_iter: 600, n_burnin: 300, seed: 5, adapt_window: 50 };

    // allocation: every observed split concentrated on one vaccine
    let (rows, weights) = allocation_dataset(55, 12, ALLOCATION_BETA);
    let single: Vec<ObservedSplit> = rows
        .iter()
        .map(|r| {
            let n: u64 = r.counts.iter().sum();
            let mut counts = vec![0; r.counts.len()];
            counts[r.row.0 % r.counts.len()] = n;
            ObservedSplit { row: r.row, counts }
        })
        .collect();
    let (bad, _) = AllocationModel::new(single, weights.clone());
    notes.push(refused(run_chains(&bad, &short), "allocation")?);
    let witness = check_theorem1(&rows, &weights).ok_or("allocation fixture has no witness row")?;
    let (good, _) = AllocationModel::new(rows.clone(), weights.clone());
    run_chains(&good, &short).map_err(|e| format!("allocation (witness {witness:?}): {e}"))?;
    let f = |b: &[f64]| -allocation_loglik(&rows, &weights, b[0]);
    let opt = nelder_mead(f, &[0.0], NelderMeadOptions::default());
    let edge = allocation_loglik(&rows, &weights, 50.0).max(allocation_loglik(&rows, &weights, -50.0));
    let drop_a = -opt.value - edge;

    // completion: one regressor value repeated
    let rows = completion_dataset(66, 30, COMPLETION_BETA0, COMPLETION_BETA1);
    let same = vec![rows[0].clone(); 10];
    notes.push(refused(run_chains(&CompletionModel { rows: same }, &short), "completion")?);
    let pair = check_theorem2(&rows).ok_or("completion fixture has no witness pair")?;
    run_chains(&CompletionModel { rows: rows.clone() }, &short).map_err(|e| format!("completion (witness {pair:?}): {e}"))?;
    let f = |b: &[f64]| -completion_loglik(&rows, b[0], b[1]);
    let opt_c = nelder_mead(f, &[0.0, 0.0], NelderMeadOptions::default());
    let edge_c = (0..16)
        .map(|k| {
            let a = k as f64 * std::f64::consts::PI / 8.0;
            completion_loglik(&rows, 50.0 * a.cos(), 50.0 * a.sin())
        })
        .fold(f64::NEG_INFINITY, f64::max);
    let drop_c = -opt_c.value - edge_c;

    // infection: two survey countries cannot identify three regression terms
    let corpus = infection_corpus(77, 2, InfectionTruth::default());
    let surveys = survey_points(&corpus, 200.0).map_err(|e| e.to_string())?;
    let cov = corpus.covariates().map_err(|e| e.to_string())?;
    let bad = InfectionModel::new(surveys, &corpus, &cov, ThetaVPrior::Zero, RatioPrior::Hierarchical)
        .map_err(|e| e.to_string())?;
    notes.push(refused(run_chains(&bad, &short), "infection")?);
    let corpus = infection_corpus(77, 8, InfectionTruth::default());
    let surveys = survey_points(&corpus, 200.0).map_err(|e| e.to_string())?;
    let cov = corpus.covariates().map_err(|e| e.to_string())?;
    let good = InfectionModel::new(surveys, &corpus, &cov, ThetaVPrior::Zero, RatioPrior::Hierarchical)
        .map_err(|e| e.to_string())?;
    run_chains(&good, &short).map_err(|e| format!("infection: {e}"))?;

    let detail = format!(
        "3 refusals with witnesses, 3 satisfying fixtures sampled; drop at |beta|=50: allocation {drop_a:.0}, completion {drop_c:.0} nats"
    );
    for (i, n) in notes.iter().enumerate() {
        println!("    refusal {}: {n}", i + 1);
    }
    if drop_a > 100.0 && drop_c > 100.0 {
        Ok(detail)
    } else {
        Err(detail + " (need > 100)")
    }
}

fn invariants() -> Outcome {
    let mut failed = Vec::new();
    for (name, check) in common::SUITE {
        if let Err(e) = check(&mut common::runner()) {
            failed.push(format!("{name}: {e}"));
        }
    }
    let detail = format!("{} invariants x {} cases", common::SUITE.len(), common::CASES);
    if failed.is_empty() {
        Ok(detail + ", no violations")
    } else {
        Err(format!("{detail}; {}", failed.join("; ")))
    }
}

fn fixture_config() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/synthetic/config.json")
}

fn run_fixture(out: &Path) -> Result<(), String> {
    let mut config = Config::load(&fixture_config()).map_err(|e| e.to_string())?;
    config.out_dir = out.to_path_buf();
    run_pipeline(&config).map_err(|e| e.to_string())
}

fn manifest_mismatches(out: &Path) -> Result<Vec<String>, String> {
    let text = std::fs::read_to_string(out.join("manifest.json")).map_err(|e| e.to_string())?;
    let manifest: serde_json::Value = serde_json::from_str(&text).map_err(|e| e.to_string())?;
    let stages = manifest["stages"].as_object().ok_or("manifest has no stages")?;
    let mut bad = Vec::new();
    for rec in stages.values() {
        for (file, hash) in rec["outputs"].as_object().into_iter().flatten() {
            let actual = sha256_file(&out.join(file)).map_err(|e| format!("{file}: {e}"))?;
            if Some(actual.as_str()) != hash.as_str() {
                bad.push(file.clone());
            }
        }
    }
    Ok(bad)
}

fn determinism(a: &Path, b: &Path) -> Outcome {
    let start = Instant::now();
    run_fixture(a)?;
    let first = start.elapsed().as_secs_f64();
    run_fixture(b)?;
    let read = |p: &Path| std::fs::read(p.join("trend.csv")).map_err(|e| e.to_string());
    if read(a)? != read(b)? {
        return Err("trend.csv differs between runs".into());
    }
    for out in [a, b] {
        let bad = manifest_mismatches(out)?;
        if !bad.is_empty() {
            return Err(format!("hashes differ from manifest: {}", bad.join(", ")));
        }
    }
    let manifests_equal = std::fs::read(a.join("manifest.json")).ok() == std::fs::read(b.join("manifest.json")).ok();
    if !manifests_equal {
        return Err("manifest.json differs between runs".into());
    }
    if first >= 300.0 {
        return Err(format!("single run took {first:.1} s"));
    }
    Ok(format!("trend.csv and manifest identical, all hashes match; one run {first:.1} s < 300 s"))
}

fn diagnostics(out: &Path) -> Outcome {
    let mut worst_rhat = (0.0f64, String::new());
    let mut worst_ess = (f64::INFINITY, String::new());
    let mut missing = Vec::new();
    for component in ["allocation", "completion", "infection"] {
        let store = PosteriorStore::load(&out.join(component)).map_err(|e| format!("{component}: {e}"))?;
        for d in store.diagnostics() {
            match (d.rhat, d.ess) {
                (Some(r), Some(e)) => {
                    if r > worst_rhat.0 {
                        worst_rhat = (r, format!("{component}/{}", d.name));
                    }
                    if e < worst_ess.0 {
                        worst_ess = (e, format!("{component}/{}", d.name));
                    }
                }
                _ => missing.push(format!("{component}/{}", d.name)),
            }
        }
    }
    let detail = format!(
        "max R-hat {:.3} ({}), min ESS {:.0} ({})",
        worst_rhat.0, worst_rhat.1, worst_ess.0, worst_ess.1
    );
    if !missing.is_empty() {
        return Err(format!("{detail}; no diagnostics for {}", missing.join(", ")));
    }
    if worst_rhat.0 < 1.1 && worst_ess.0 > 200.0 {
        Ok(detail)
    } else {
        Err(detail + " (need R-hat < 1.1, ESS > 200)")
    }
}

fn main() -> ExitCode {
    let dir = tempfile::tempdir().expect("temporary directory");
    let (a, b) = (dir.path().join("run-a"), dir.path().join("run-b"));
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome>)> = vec![
        ("conjugate oracle", Box::new(conjugate_oracle)),
        ("efficacy sanity", Box::new(efficacy_sanity)),
        ("rate-prior independence", Box::new(rate_prior_independence)),
        ("synthetic recovery", Box::new(recovery)),
        ("propriety guards", Box::new(propriety_guards)),
        ("invariant suite", Box::new(invariants)),
        ("end-to-end determinism", Box::new(|| determinism(&a, &b))),
        ("fixture diagnostics", Box::new(|| diagnostics(&a))),
    ];
    let mut failures = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        match run() {
            Ok(detail) => println!("PASS {} {name}: {detail}", i + 1),
            Err(detail) => {
                failures += 1;
                println!("FAIL {} {name}: {detail}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
