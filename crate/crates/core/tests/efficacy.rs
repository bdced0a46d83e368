use sero_core::corpus::{bundled_trials, VaccineCatalog};
use sero_core::efficacy::{fit_efficacy, PoissonTrialModel};
use sero_core::mcmc::{run_chains, ChainConfig};

fn pfizer_full() -> sero_core::corpus::ClinicalTrial {
    bundled_trials().into_iter().find(|t| t.manufacturer_name == "Pfizer" && t.dose_stage == 2).unwrap()
}

fn e_mean(shape: f64, rate: f64, seed: u64) -> f64 {
    let model = PoissonTrialModel { trial: pfizer_full(), alpha: 8.0, beta: 2.0, lambda_shape: shape, lambda_rate: rate };
    let cfg = ChainConfig { n_chains: 4, n_iter: 6000, n_burnin: 2000, seed, adapt_window: 50 };
    let store = run_chains(&model, &cfg).unwrap();
    store.diagnostic("E").unwrap().mean
}

#[test]
fn efficacy_posterior_ignores_rate_prior() {
    let (a, b) = (e_mean(1.0, 1.0, 17), e_mean(0.01, 0.01, 18));
    assert!((a - b).abs() < 0.01, "{a} vs {b}");
}

#[test]
fn posterior_means_shrink_toward_prior() {
    let trials = bundled_trials();
    let fit = fit_efficacy(&trials, &VaccineCatalog::bundled()).unwrap();
    for s in &fit.trials {
        let prior = fit.hyper(s.group).prior_mean();
        let (lo, hi) = if prior < s.crude { (prior, s.crude) } else { (s.crude, prior) };
        assert!(s.mean >= lo - 1e-3 && s.mean <= hi + 1e-3, "{} dose {}: {} not in [{lo}, {hi}]", s.manufacturer, s.dose_stage, s.mean);
    }
}
