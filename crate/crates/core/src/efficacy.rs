//! Vaccine efficacy from clinical trials: a Beta-distributed efficacy per
//! trial with empirical-Bayes hyperparameters.
//!
//! Conditioning on the total case count turns the two Poisson counts of a
//! trial into one binomial, `n_V ~ Binomial(n_V + n_C, g(E))`, so the
//! combined-rate parameter drops out and each posterior is one-dimensional.
//! Those posteriors are handled by deterministic quadrature on the logit
//! scale.

use crate::corpus::{ClinicalTrial, VaccineCatalog};
use crate::mcmc::{Model, ParamSpec, Support};
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::rng::StreamRng;
use crate::special::{beta_ln_pdf, binomial_ln_pmf, ln_beta_fn, logistic, poisson_ln_pmf, softplus};
use rand::Rng;
use rand_distr::{Beta, Distribution};
use serde::{Deserialize, Serialize};

const QUAD_INTERVALS: usize = 1000;
/// Integration stops where the log integrand is this far below its peak.
const TAIL_DROP: f64 = 60.0;
const Z_LIMIT: f64 = 740.0;
const LOG_HYPER_MIN: f64 = -6.907_755_278_982_137; // ln 1e-3
const LOG_HYPER_MAX: f64 = 13.815_510_557_964_274; // ln 1e6

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EfficacyError {
    #[error("non-finite integrand for trial {0}")]
    NonFiniteIntegrand(String),
    #[error("hyperparameter fit failed: {0}")]
    OptimizationFailed(String),
    #[error("hyperparameters must be positive (alpha {alpha}, beta {beta})")]
    BadHyperparameters { alpha: f64, beta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum GroupKind {
    Partial,
    Full,
}

/// Case split of a trial conditional on the total number of cases.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReducedTrial {
    pub n_total: u64,
    pub n_vaccinated: u64,
    /// `N_V / N_C`
    pub ratio: f64,
}

impl ReducedTrial {
    /// Probability that a case is in the vaccinated arm given efficacy `e`.
    pub fn success_prob(&self, e: f64) -> f64 {
        let a = (1.0 - e) * self.ratio;
        a / (1.0 + a)
    }

    /// `ln Binomial(n_V | n, g(E))` with `E = logistic(z)`, stable for large |z|.
    fn ln_lik_z(&self, z: f64) -> f64 {
        // (1 − E) r = r / (1 + e^z); g = r / (1 + r + e^z)
        let ln_r = self.ratio.ln();
        let ln_denominator = log_add(ln_one_plus(self.ratio), z);
        let ln_g = ln_r - ln_denominator;
        let ln_1mg = softplus(z) - ln_denominator;
        let nv = self.n_vaccinated as f64;
        let nc = (self.n_total - self.n_vaccinated) as f64;
        crate::special::ln_choose(self.n_total, self.n_vaccinated)
            + if nv > 0.0 { nv * ln_g } else { 0.0 }
            + if nc > 0.0 { nc * ln_1mg } else { 0.0 }
    }

    pub fn crude_efficacy(&self, trial: &ClinicalTrial) -> f64 {
        trial.crude_efficacy()
    }
}

fn ln_one_plus(x: f64) -> f64 {
    x.ln_1p()
}

fn log_add(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

pub fn reduce_trial(trial: &ClinicalTrial) -> ReducedTrial {
    ReducedTrial {
        n_total: trial.vaccinated_cases + trial.placebo_cases,
        n_vaccinated: trial.vaccinated_cases,
        ratio: trial.vaccinated_size as f64 / trial.placebo_size as f64,
    }
}

/// Log of the unnormalized posterior density on the logit scale,
/// `ln [Binomial · Beta(E) · E(1 − E)]` at `E = logistic(z)`.
fn ln_integrand(t: &ReducedTrial, alpha: f64, beta: f64, z: f64) -> f64 {
    // ln E = −softplus(−z), ln(1 − E) = −softplus(z)
    t.ln_lik_z(z) - alpha * softplus(-z) - beta * softplus(z) - ln_beta_fn(alpha, beta)
}

/// Quadrature grid for one trial's posterior on the logit scale.
#[derive(Debug, Clone)]
pub struct PosteriorGrid {
    /// Nodes in z.
    pub z: Vec<f64>,
    /// Normalized weights: integrand times Simpson weight times dz/dt.
    pub weights: Vec<f64>,
    /// `ln ∫ integrand`
    pub ln_marginal: f64,
}

fn golden_max<F: Fn(f64) -> f64>(f: F, mut a: f64, mut b: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..200 {
        if (b - a).abs() < 1e-10 {
            break;
        }
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    (a + b) / 2.0
}

impl PosteriorGrid {
    pub fn build(trial: &ReducedTrial, alpha: f64, beta: f64) -> Self {
        let f = |z: f64| ln_integrand(trial, alpha, beta, z);

        // locate the mode: coarse scan, then golden-section refinement
        let step = 0.25;
        let (mut best_z, mut best) = (0.0, f64::NEG_INFINITY);
        let mut z = -60.0;
        while z <= 60.0 {
            let v = f(z);
            if v > best {
                best = v;
                best_z = z;
            }
            z += step;
        }
        let mode = golden_max(f, best_z - step, best_z + step);
        let peak = f(mode).max(best);

        // curvature sets the grid scale
        let h = 1e-3;
        let second = (f(mode + h) - 2.0 * f(mode) + f(mode - h)) / (h * h);
        let scale = if second < 0.0 { (1.0 / (-second).sqrt()).clamp(1e-4, 5.0) } else { 1.0 };

        let reach = |dir: f64| -> f64 {
            let mut d = scale;
            loop {
                let zz = mode + dir * d;
                if zz.abs() >= Z_LIMIT {
                    return dir * Z_LIMIT;
                }
                if f(zz) < peak - TAIL_DROP {
                    return zz;
                }
                d *= 1.5;
            }
        };
        let (lo, hi) = (reach(-1.0), reach(1.0));

        // z = mode + scale·sinh(t), Simpson in t
        let (t_lo, t_hi) = (((lo - mode) / scale).asinh(), ((hi - mode) / scale).asinh());
        let n = QUAD_INTERVALS;
        let dt = (t_hi - t_lo) / n as f64;
        let mut zs = Vec::with_capacity(n + 1);
        let mut ln_w = Vec::with_capacity(n + 1);
        for i in 0..=n {
            let t = t_lo + i as f64 * dt;
            let zi = mode + scale * t.sinh();
            let simpson = if i == 0 || i == n {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            zs.push(zi);
            ln_w.push(f(zi) + (scale * t.cosh() * simpson * dt / 3.0).ln());
        }
        let max = ln_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = ln_w.iter().map(|v| (v - max).exp()).sum();
        let ln_marginal = max + sum.ln();
        let weights = ln_w.iter().map(|v| (v - max).exp() / sum).collect();
        Self { z: zs, weights, ln_marginal }
    }

    pub fn mean(&self) -> f64 {
        self.z.iter().zip(&self.weights).map(|(&z, w)| logistic(z) * w).sum()
    }

    /// Inverse CDF with linear interpolation between nodes.
    pub fn quantile(&self, u: f64) -> f64 {
        let mut acc = 0.0;
        for i in 0..self.z.len() {
            let next = acc + self.weights[i];
            if next >= u && self.weights[i] > 0.0 {
                let z = if i == 0 {
                    self.z[0]
                } else {
                    let frac = ((u - acc) / self.weights[i]).clamp(0.0, 1.0);
                    self.z[i - 1] + frac * (self.z[i] - self.z[i - 1])
                };
                return clamp_unit(logistic(z));
            }
            acc = next;
        }
        clamp_unit(logistic(*self.z.last().expect("grid has nodes")))
    }

    pub fn sample(&self, rng: &mut StreamRng) -> f64 {
        self.quantile(rng.random::<f64>())
    }
}

fn clamp_unit(e: f64) -> f64 {
    e.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

fn check_hyper(alpha: f64, beta: f64) -> Result<(), EfficacyError> {
    if alpha > 0.0 && beta > 0.0 && alpha.is_finite() && beta.is_finite() {
        Ok(())
    } else {
        Err(EfficacyError::BadHyperparameters { alpha, beta })
    }
}

/// `Σ_k ln ∫ Binomial(n_V,k | n_k, g(E)) Beta(E; α, β) dE`.
pub fn marginal_loglik(trials: &[ClinicalTrial], alpha: f64, beta: f64) -> Result<f64, EfficacyError> {
    check_hyper(alpha, beta)?;
    let mut total = 0.0;
    for t in trials {
        let grid = PosteriorGrid::build(&reduce_trial(t), alpha, beta);
        if !grid.ln_marginal.is_finite() {
            return Err(EfficacyError::NonFiniteIntegrand(format!("{} dose {}", t.manufacturer_name, t.dose_stage)));
        }
        total += grid.ln_marginal;
    }
    Ok(total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartTrace {
    pub start: (f64, f64),
    pub alpha: f64,
    pub beta: f64,
    pub loglik: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HyperFit {
    pub alpha: f64,
    pub beta: f64,
    pub loglik: f64,
    /// Fit reached the box limit on (ln α, ln β).
    pub at_bound: bool,
    pub trace: Vec<StartTrace>,
}

impl HyperFit {
    pub fn prior_mean(&self) -> f64 {
        self.alpha / (self.alpha + self.beta)
    }
}

/// Maximizes the marginal likelihood over `(ln α, ln β)` with Nelder–Mead
/// from nine starts on a log grid.
pub fn fit_hyperparams(trials: &[ClinicalTrial]) -> Result<HyperFit, EfficacyError> {
    if trials.len() < 2 {
        return Err(EfficacyError::OptimizationFailed(format!(
            "need at least two trials, got {}",
            trials.len()
        )));
    }
    let objective = |p: &[f64]| -> f64 {
        if p.iter().any(|&v| !(LOG_HYPER_MIN..=LOG_HYPER_MAX).contains(&v)) {
            return f64::INFINITY;
        }
        marginal_loglik(trials, p[0].exp(), p[1].exp()).map(|v| -v).unwrap_or(f64::INFINITY)
    };
    let grid = [0.0, 5f64.ln(), 25f64.ln()];
    let mut trace = Vec::new();
    for &a in &grid {
        for &b in &grid {
            let start_value = objective(&[a, b]);
            let m = nelder_mead(objective, &[a, b], NelderMeadOptions { f_tol: 1e-9, x_tol: 1e-6, ..Default::default() });
            if m.value.is_finite() && m.value <= start_value {
                trace.push(StartTrace {
                    start: (a.exp(), b.exp()),
                    alpha: m.x[0].exp(),
                    beta: m.x[1].exp(),
                    loglik: -m.value,
                    iterations: m.iterations,
                    converged: m.converged,
                });
            }
        }
    }
    let best = trace
        .iter()
        .max_by(|a, b| a.loglik.total_cmp(&b.loglik))
        .ok_or_else(|| EfficacyError::OptimizationFailed("no start reached a finite marginal likelihood".into()))?;
    let near = |v: f64| (v.ln() - LOG_HYPER_MAX).abs() < 1e-3 || (v.ln() - LOG_HYPER_MIN).abs() < 1e-3;
    let at_bound = near(best.alpha) || near(best.beta);
    if at_bound {
        log::warn!("efficacy hyperparameters at the search limit: alpha {}, beta {}", best.alpha, best.beta);
    }
    Ok(HyperFit { alpha: best.alpha, beta: best.beta, loglik: best.loglik, at_bound, trace: trace.clone() })
}

/// Posterior of one trial's efficacy under fitted hyperparameters.
pub fn posterior_grid(trial: &ClinicalTrial, alpha: f64, beta: f64) -> PosteriorGrid {
    PosteriorGrid::build(&reduce_trial(trial), alpha, beta)
}

pub fn posterior_efficacy(
    trial: &ClinicalTrial,
    alpha: f64,
    beta: f64,
    n_draws: usize,
    rng: &mut StreamRng,
) -> Vec<f64> {
    let grid = posterior_grid(trial, alpha, beta);
    (0..n_draws).map(|_| grid.sample(rng)).collect()
}

/// Efficacy distribution for a vaccine without trial data: the fitted prior.
#[derive(Debug, Clone, Copy)]
pub struct UnlistedPrior {
    dist: Beta<f64>,
}

impl UnlistedPrior {
    pub fn sample(&self, rng: &mut StreamRng) -> f64 {
        clamp_unit(self.dist.sample(rng))
    }
}

pub fn efficacy_prior_for_unlisted(fit: &HyperFit) -> UnlistedPrior {
    UnlistedPrior { dist: Beta::new(fit.alpha, fit.beta).expect("fitted hyperparameters are positive") }
}

/// Full-group trials are those at a vaccine's required dose count. Vaccines
/// missing from `catalog` are looked up in the bundled catalog.
pub fn group_of(trial: &ClinicalTrial, catalog: &VaccineCatalog) -> GroupKind {
    let required = match catalog.index_of(&trial.manufacturer_name) {
        Some(k) => Some(catalog.doses_required(k)),
        None => {
            let bundled = VaccineCatalog::bundled();
            bundled.index_of(&trial.manufacturer_name).map(|k| bundled.doses_required(k))
        }
    };
    match required {
        Some(d) if trial.dose_stage >= d => GroupKind::Full,
        Some(_) => GroupKind::Partial,
        None => {
            log::warn!("trial manufacturer {} not in any catalog; treated as partial", trial.manufacturer_name);
            GroupKind::Partial
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialSummary {
    pub manufacturer: String,
    pub dose_stage: u8,
    pub group: GroupKind,
    pub crude: f64,
    pub mean: f64,
    pub q025: f64,
    pub q975: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficacyFit {
    pub full: HyperFit,
    pub partial: HyperFit,
    pub trials: Vec<TrialSummary>,
    pub note: String,
}

impl EfficacyFit {
    pub fn hyper(&self, group: GroupKind) -> &HyperFit {
        match group {
            GroupKind::Full => &self.full,
            GroupKind::Partial => &self.partial,
        }
    }
}

/// Splits trials into the two groups, fits each and summarizes every trial.
pub fn fit_efficacy(trials: &[ClinicalTrial], catalog: &VaccineCatalog) -> Result<EfficacyFit, EfficacyError> {
    let (full, partial): (Vec<ClinicalTrial>, Vec<ClinicalTrial>) =
        trials.iter().cloned().partition(|t| group_of(t, catalog) == GroupKind::Full);
    let full_fit = fit_hyperparams(&full)?;
    let partial_fit = fit_hyperparams(&partial)?;
    let summaries = trials
        .iter()
        .map(|t| {
            let group = group_of(t, catalog);
            let h = if group == GroupKind::Full { &full_fit } else { &partial_fit };
            let grid = posterior_grid(t, h.alpha, h.beta);
            TrialSummary {
                manufacturer: t.manufacturer_name.clone(),
                dose_stage: t.dose_stage,
                group,
                crude: t.crude_efficacy(),
                mean: grid.mean(),
                q025: grid.quantile(0.025),
                q975: grid.quantile(0.975),
            }
        })
        .collect();
    Ok(EfficacyFit {
        full: full_fit,
        partial: partial_fit,
        trials: summaries,
        note: "hyperparameters are plug-in maximum marginal likelihood estimates; their uncertainty is not propagated"
            .into(),
    })
}

/// Per-vaccine efficacy samplers: the trial posterior where a trial exists
/// for the vaccine in the group, the fitted group prior otherwise.
#[derive(Debug, Clone)]
pub struct EfficacySampler {
    full: Vec<Source>,
    partial: Vec<Source>,
}

#[derive(Debug, Clone)]
enum Source {
    Trial(PosteriorGrid),
    Prior(UnlistedPrior),
}

impl Source {
    fn sample(&self, rng: &mut StreamRng) -> f64 {
        match self {
            Source::Trial(g) => g.sample(rng),
            Source::Prior(p) => p.sample(rng),
        }
    }
}

impl EfficacySampler {
    pub fn new(fit: &EfficacyFit, trials: &[ClinicalTrial], catalog: &VaccineCatalog) -> Self {
        let build = |group: GroupKind| -> Vec<Source> {
            let h = fit.hyper(group);
            (0..catalog.len())
                .map(|k| {
                    let trial = trials.iter().find(|t| {
                        catalog.index_of(&t.manufacturer_name) == Some(k) && group_of(t, catalog) == group
                    });
                    match trial {
                        // the partial group may hold several stages; the highest one below full is used
                        Some(_) => {
                            let t = trials
                                .iter()
                                .filter(|t| {
                                    catalog.index_of(&t.manufacturer_name) == Some(k) && group_of(t, catalog) == group
                                })
                                .max_by_key(|t| t.dose_stage)
                                .expect("at least one match");
                            Source::Trial(posterior_grid(t, h.alpha, h.beta))
                        }
                        None => Source::Prior(efficacy_prior_for_unlisted(h)),
                    }
                })
                .collect()
        };
        Self { full: build(GroupKind::Full), partial: build(GroupKind::Partial) }
    }

    /// One `(E_full, E_partial)` draw per vaccine.
    pub fn draw(&self, rng: &mut StreamRng) -> Vec<(f64, f64)> {
        self.full.iter().zip(&self.partial).map(|(f, p)| (f.sample(rng), p.sample(rng))).collect()
    }
}

/// Two-Poisson trial model in `(E, λ)` with a Gamma prior on λ, for checking
/// that the efficacy posterior does not depend on the λ prior.
#[derive(Debug, Clone)]
pub struct PoissonTrialModel {
    pub trial: ClinicalTrial,
    pub alpha: f64,
    pub beta: f64,
    pub lambda_shape: f64,
    pub lambda_rate: f64,
}

impl Model for PoissonTrialModel {
    type Latent = ();

    fn params(&self) -> Vec<ParamSpec> {
        vec![ParamSpec::new("E", Support::UNIT), ParamSpec::new("lambda", Support::Positive)]
    }

    fn initial_state(&self, rng: &mut StreamRng) -> Vec<f64> {
        let n = (self.trial.vaccinated_cases + self.trial.placebo_cases).max(1) as f64;
        vec![rng.random_range(0.2..0.8), n * rng.random_range(0.8..1.2)]
    }

    fn initial_latent(&self, _: &mut StreamRng) {}

    fn log_density(&self, x: &[f64], _: &()) -> f64 {
        let (e, lambda) = (x[0], x[1]);
        let g = reduce_trial(&self.trial).success_prob(e);
        poisson_ln_pmf(self.trial.vaccinated_cases, lambda * g)
            + poisson_ln_pmf(self.trial.placebo_cases, lambda * (1.0 - g))
            + beta_ln_pdf(e, self.alpha, self.beta)
            + (self.lambda_shape - 1.0) * lambda.ln()
            - self.lambda_rate * lambda
    }
}

/// Binomial likelihood of the reduced trial, for tests and plug-in limits.
pub fn reduced_ln_likelihood(trial: &ClinicalTrial, e: f64) -> f64 {
    let r = reduce_trial(trial);
    binomial_ln_pmf(r.n_vaccinated, r.n_total, r.success_prob(e))
}
