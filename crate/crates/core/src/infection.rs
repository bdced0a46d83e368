//! Infection seroprevalence from serosurveys.
//!
//! Each survey observes `Binomial(N, p⁺θ + (1 − p⁻)(1 − θ))` where θ
//! combines vaccination and infection seroprevalence. Infection enters
//! through `r = ln(θ_I / θ_C) ∈ (0, −ln θ_C)`, a truncated normal around a
//! country mean `a_i = β_i + β1·PD_i + β2·G_i` with `β_i ~ N(μ0, σ)`. The
//! sampler works with `a_i` directly so the regression block
//! `(μ0, β1, β2)` only touches the Gaussian country-level prior.

use crate::corpus::{AccuracyEvidence, Corpus, CorpusError, Covariates, Day};
use crate::mcmc::{slice_update, Model, ParamSpec, PosteriorStore, StoreError, Support};
use crate::rng::{StreamKey, StreamRng};
use crate::special::{beta_ln_pdf, binomial_ln_pmf, normal_ln_pdf};
use crate::truncnorm::TruncatedNormal;
use rand::Rng;
use rand_distr::{Beta, Distribution, Gamma, Normal, StandardNormal};

/// Upper limit of the uniform prior on the between-country scale σ.
pub const SCALE_LIMIT: f64 = 10.0;
/// Upper limit of the uniform prior on the within-country scale τ. Much
/// wider limits let the truncated ratio prior flatten into an exponential
/// on `(0, −ln θ_C)`, and the country means then drift to −∞ along a ridge
/// whose volume swamps the likelihood when surveys are few.
pub const TAU_LIMIT: f64 = 1.0;
pub const DEFAULT_ACCURACY_CONCENTRATION: f64 = 200.0;

#[derive(Debug, thiserror::Error)]
pub enum InfectionError {
    #[error("no usable serosurveys")]
    NoSurveys,
    #[error("confirmed ratio {0} leaves no room for infections beyond confirmed cases")]
    NonpositiveBound(f64),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// `p⁺θ + (1 − p⁻)(1 − θ)`
pub fn apparent_prevalence(theta: f64, p_plus: f64, p_minus: f64) -> f64 {
    p_plus * theta + (1.0 - p_minus) * (1.0 - theta)
}

/// `1 − (1 − θ_V)(1 − θ_I)`, written so either argument at 0 or 1 is exact.
pub fn combine_seroprevalence(theta_v: f64, theta_i: f64) -> f64 {
    theta_v + theta_i * (1.0 - theta_v)
}

/// Truncated-normal log density of a log ratio on `(0, upper)`.
pub fn ratio_logdensity(log_ratio: f64, mean: f64, tau: f64, upper: f64) -> f64 {
    match TruncatedNormal::new(mean, tau, 0.0, upper) {
        Ok(tn) => tn.ln_pdf(log_ratio),
        Err(_) => f64::NEG_INFINITY,
    }
}

/// `−ln θ_C`, the largest log ratio that keeps θ_I ≤ 1.
pub fn ratio_bound(theta_c: f64) -> Result<f64, InfectionError> {
    if theta_c >= 1.0 || theta_c.is_nan() {
        Err(InfectionError::NonpositiveBound(theta_c))
    } else {
        Ok(-theta_c.ln())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AccuracyPrior {
    Constant(f64),
    Beta { a: f64, b: f64 },
}

impl AccuracyPrior {
    pub fn from_evidence(e: &AccuracyEvidence, concentration: f64) -> Self {
        match *e {
            AccuracyEvidence::Counts { correct, incorrect } => {
                AccuracyPrior::Beta { a: correct as f64 + 1.0, b: incorrect as f64 + 1.0 }
            }
            AccuracyEvidence::Fixed(v) if v <= 0.0 || v >= 1.0 => AccuracyPrior::Constant(v.clamp(0.0, 1.0)),
            AccuracyEvidence::Fixed(v) => AccuracyPrior::Beta { a: concentration * v, b: concentration * (1.0 - v) },
        }
    }

    fn mean(&self) -> f64 {
        match *self {
            AccuracyPrior::Constant(v) => v,
            AccuracyPrior::Beta { a, b } => a / (a + b),
        }
    }
}

/// One survey prepared for the model.
#[derive(Debug, Clone, PartialEq)]
pub struct SurveyPoint {
    pub survey_id: usize,
    pub country: usize,
    pub date: Day,
    pub n: u64,
    pub x: u64,
    pub theta_c: f64,
    pub bound: f64,
    pub sensitivity: AccuracyPrior,
    pub specificity: AccuracyPrior,
}

/// Surveys with a positive confirmed ratio; the rest are skipped with a
/// warning since their infection level would be pinned at zero.
pub fn survey_points(corpus: &Corpus, concentration: f64) -> Result<Vec<SurveyPoint>, InfectionError> {
    let mut out = Vec::new();
    for s in &corpus.surveys {
        let theta_c = corpus.confirmed_ratio(s.country, s.end_date)?;
        if theta_c <= 0.0 {
            log::warn!("survey {} skipped: no confirmed cases by its end date", s.survey_id);
            continue;
        }
        out.push(SurveyPoint {
            survey_id: s.survey_id,
            country: s.country,
            date: s.end_date,
            n: s.n_samples,
            x: s.n_positive,
            theta_c,
            bound: ratio_bound(theta_c)?,
            sensitivity: AccuracyPrior::from_evidence(&s.sensitivity, concentration),
            specificity: AccuracyPrior::from_evidence(&s.specificity, concentration),
        });
    }
    if out.is_empty() {
        return Err(InfectionError::NoSurveys);
    }
    Ok(out)
}

/// Per-iteration source of θ_V at each survey.
pub enum ThetaVPrior {
    Zero,
    /// Precomputed draws, `[draw][survey]`; one is picked per iteration.
    Pool(Vec<Vec<f64>>),
    /// Fresh generative draw per iteration.
    Generator(Box<dyn Fn(&mut StreamRng) -> Vec<f64> + Send + Sync>),
}

impl ThetaVPrior {
    fn draw(&self, n: usize, rng: &mut StreamRng) -> Vec<f64> {
        match self {
            ThetaVPrior::Zero => vec![0.0; n],
            ThetaVPrior::Pool(p) => p[rng.random_range(0..p.len())].clone(),
            ThetaVPrior::Generator(g) => g(rng),
        }
    }
}

/// How the log ratios are tied together.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RatioPrior {
    Hierarchical,
    /// θ_I uniform on `(θ_C, 1)` for every survey, no country structure.
    FlatTheta,
}

#[derive(Debug, Clone, Copy)]
enum Block {
    Ratio(usize),
    CountryMean(usize),
    Regression,
    Sigma,
    Tau,
    Accuracy(usize),
}

pub struct InfectionModel {
    pub surveys: Vec<SurveyPoint>,
    /// Corpus indices of countries with surveys.
    pub countries: Vec<usize>,
    pub country_codes: Vec<String>,
    /// Standardized covariates of each survey country.
    pub density: Vec<f64>,
    pub gdp: Vec<f64>,
    pub theta_v: ThetaVPrior,
    pub ratio_prior: RatioPrior,
    survey_country: Vec<usize>,
    members: Vec<Vec<usize>>,
    sens_idx: Vec<Option<usize>>,
    spec_idx: Vec<Option<usize>>,
    n_params: usize,
    blocks: Vec<(Block, Vec<usize>)>,
}

impl InfectionModel {
    pub fn new(
        surveys: Vec<SurveyPoint>,
        corpus: &Corpus,
        covariates: &Covariates,
        theta_v: ThetaVPrior,
        ratio_prior: RatioPrior,
    ) -> Result<Self, InfectionError> {
        if surveys.is_empty() {
            return Err(InfectionError::NoSurveys);
        }
        let mut countries: Vec<usize> = surveys.iter().map(|s| s.country).collect();
        countries.sort_unstable();
        countries.dedup();
        let survey_country: Vec<usize> =
            surveys.iter().map(|s| countries.binary_search(&s.country).expect("listed")).collect();
        let mut members = vec![Vec::new(); countries.len()];
        for (l, &c) in survey_country.iter().enumerate() {
            members[c].push(l);
        }
        let (nl, nc) = (surveys.len(), countries.len());
        let mut next = match ratio_prior {
            RatioPrior::Hierarchical => nl + nc + 5,
            RatioPrior::FlatTheta => nl,
        };
        let mut sens_idx = Vec::with_capacity(nl);
        let mut spec_idx = Vec::with_capacity(nl);
        for s in &surveys {
            for (prior, idx) in [(s.sensitivity, &mut sens_idx), (s.specificity, &mut spec_idx)] {
                idx.push(match prior {
                    AccuracyPrior::Beta { .. } => {
                        next += 1;
                        Some(next - 1)
                    }
                    AccuracyPrior::Constant(_) => None,
                });
            }
        }
        let mut blocks: Vec<(Block, Vec<usize>)> = (0..nl).map(|l| (Block::Ratio(l), vec![l])).collect();
        if ratio_prior == RatioPrior::Hierarchical {
            blocks.extend((0..nc).map(|c| (Block::CountryMean(c), vec![nl + c])));
            blocks.push((Block::Regression, vec![nl + nc, nl + nc + 1, nl + nc + 2]));
            blocks.push((Block::Sigma, vec![nl + nc + 3]));
            blocks.push((Block::Tau, vec![nl + nc + 4]));
        }
        for l in 0..nl {
            for i in [sens_idx[l], spec_idx[l]].into_iter().flatten() {
                blocks.push((Block::Accuracy(l), vec![i]));
            }
        }
        Ok(Self {
            density: countries.iter().map(|&i| covariates.density[i]).collect(),
            gdp: countries.iter().map(|&i| covariates.gdp[i]).collect(),
            country_codes: countries.iter().map(|&i| corpus.countries[i].code.clone()).collect(),
            surveys,
            countries,
            theta_v,
            ratio_prior,
            survey_country,
            members,
            sens_idx,
            spec_idx,
            n_params: next,
            blocks,
        })
    }

    fn nl(&self) -> usize {
        self.surveys.len()
    }

    fn nc(&self) -> usize {
        self.countries.len()
    }

    fn global(&self, x: &[f64]) -> (f64, f64, f64, f64, f64) {
        let g = self.nl() + self.nc();
        (x[g], x[g + 1], x[g + 2], x[g + 3], x[g + 4])
    }

    fn accuracy(&self, x: &[f64], l: usize) -> (f64, f64) {
        let s = &self.surveys[l];
        let pick = |prior: AccuracyPrior, idx: Option<usize>| match idx {
            Some(i) => x[i],
            None => prior.mean(),
        };
        (pick(s.sensitivity, self.sens_idx[l]), pick(s.specificity, self.spec_idx[l]))
    }

    fn survey_loglik(&self, x: &[f64], theta_v: &[f64], l: usize) -> f64 {
        let s = &self.surveys[l];
        let theta_i = (s.theta_c * x[l].exp()).min(1.0);
        let theta = combine_seroprevalence(theta_v[l], theta_i);
        let (pp, pm) = self.accuracy(x, l);
        binomial_ln_pmf(s.x, s.n, apparent_prevalence(theta, pp, pm))
    }

    fn ratio_prior_term(&self, x: &[f64], l: usize) -> f64 {
        match self.ratio_prior {
            // density of r when θ_I is uniform: ∝ e^r
            RatioPrior::FlatTheta => x[l],
            RatioPrior::Hierarchical => {
                let mean = x[self.nl() + self.survey_country[l]];
                let tau = self.global(x).4;
                ratio_logdensity(x[l], mean, tau, self.surveys[l].bound)
            }
        }
    }

    fn country_prior(&self, x: &[f64], c: usize) -> f64 {
        let (mu0, b1, b2, sigma, _) = self.global(x);
        normal_ln_pdf(x[self.nl() + c], mu0 + b1 * self.density[c] + b2 * self.gdp[c], sigma)
    }

    fn accuracy_prior_term(&self, x: &[f64], l: usize) -> f64 {
        let s = &self.surveys[l];
        let mut t = 0.0;
        for (prior, idx) in [(s.sensitivity, self.sens_idx[l]), (s.specificity, self.spec_idx[l])] {
            if let (AccuracyPrior::Beta { a, b }, Some(i)) = (prior, idx) {
                t += beta_ln_pdf(x[i], a, b);
            }
        }
        t
    }

    /// Indices into the store names for the per-country mean of survey
    /// country `c`.
    pub fn mean_name(&self, c: usize) -> String {
        format!("mean_{}", self.country_codes[c])
    }

    /// Adds `beta_<code>` (random effects) and `theta_i_<survey>` columns.
    pub fn add_derived(&self, store: &mut PosteriorStore) -> Result<(), InfectionError> {
        if self.ratio_prior == RatioPrior::Hierarchical {
            let b1 = store.require("beta1_i")?.to_vec();
            let b2 = store.require("beta2_i")?.to_vec();
            for c in 0..self.nc() {
                let a = store.require(&self.mean_name(c))?;
                let beta: Vec<f64> = a
                    .iter()
                    .zip(b1.iter().zip(&b2))
                    .map(|(a, (b1, b2))| a - b1 * self.density[c] - b2 * self.gdp[c])
                    .collect();
                store.push_column(format!("beta_{}", self.country_codes[c]), beta);
            }
        }
        for s in &self.surveys {
            let r = store.require(&format!("log_ratio_{}", s.survey_id))?;
            let th: Vec<f64> = r.iter().map(|r| (s.theta_c * r.exp()).min(1.0)).collect();
            store.push_column(format!("theta_i_{}", s.survey_id), th);
        }
        Ok(())
    }
}

impl Model for InfectionModel {
    type Latent = Vec<f64>;

    fn params(&self) -> Vec<ParamSpec> {
        let mut p: Vec<ParamSpec> = self
            .surveys
            .iter()
            .map(|s| ParamSpec::new(format!("log_ratio_{}", s.survey_id), Support::Interval { lo: 0.0, hi: s.bound }))
            .collect();
        if self.ratio_prior == RatioPrior::Hierarchical {
            p.extend((0..self.nc()).map(|c| ParamSpec::new(self.mean_name(c), Support::Real)));
            p.push(ParamSpec::new("mu0", Support::Real));
            p.push(ParamSpec::new("beta1_i", Support::Real));
            p.push(ParamSpec::new("beta2_i", Support::Real));
            p.push(ParamSpec::new("sigma", Support::Interval { lo: 0.0, hi: SCALE_LIMIT }));
            p.push(ParamSpec::new("tau", Support::Interval { lo: 0.0, hi: TAU_LIMIT }));
        }
        for (l, s) in self.surveys.iter().enumerate() {
            if self.sens_idx[l].is_some() {
                p.push(ParamSpec::new(format!("p_plus_{}", s.survey_id), Support::UNIT));
            }
            if self.spec_idx[l].is_some() {
                p.push(ParamSpec::new(format!("p_minus_{}", s.survey_id), Support::UNIT));
            }
        }
        debug_assert_eq!(p.len(), self.n_params);
        p
    }

    fn blocks(&self) -> Vec<Vec<usize>> {
        self.blocks.iter().map(|(_, b)| b.clone()).collect()
    }

    fn initial_state(&self, rng: &mut StreamRng) -> Vec<f64> {
        let mut x = vec![0.0; self.n_params];
        for (l, s) in self.surveys.iter().enumerate() {
            let crude = s.x as f64 / s.n as f64;
            let r = (crude.max(s.theta_c * 1.5) / s.theta_c).ln();
            let frac = (r / s.bound).clamp(0.05, 0.95) * rng.random_range(0.9..1.1);
            x[l] = s.bound * frac.clamp(0.01, 0.99);
        }
        if self.ratio_prior == RatioPrior::Hierarchical {
            let nl = self.nl();
            for c in 0..self.nc() {
                let m = &self.members[c];
                x[nl + c] = m.iter().map(|&l| x[l]).sum::<f64>() / m.len() as f64 + rng.random_range(-0.1..0.1);
            }
            let g = nl + self.nc();
            x[g] = (0..self.nc()).map(|c| x[nl + c]).sum::<f64>() / self.nc() as f64;
            x[g + 1] = rng.random_range(-0.1..0.1);
            x[g + 2] = rng.random_range(-0.1..0.1);
            x[g + 3] = rng.random_range(0.5..1.5);
            x[g + 4] = rng.random_range(0.3..1.0);
        }
        for (l, s) in self.surveys.iter().enumerate() {
            for (prior, idx) in [(s.sensitivity, self.sens_idx[l]), (s.specificity, self.spec_idx[l])] {
                if let (AccuracyPrior::Beta { a, b }, Some(i)) = (prior, idx) {
                    x[i] = Beta::new(a, b).map(|d| d.sample(rng)).unwrap_or(a / (a + b)).clamp(1e-6, 1.0 - 1e-6);
                }
            }
        }
        x
    }

    fn initial_latent(&self, rng: &mut StreamRng) -> Vec<f64> {
        self.theta_v.draw(self.nl(), rng)
    }

    fn log_density(&self, x: &[f64], theta_v: &Vec<f64>) -> f64 {
        let mut t = 0.0;
        for l in 0..self.nl() {
            t += self.survey_loglik(x, theta_v, l) + self.ratio_prior_term(x, l) + self.accuracy_prior_term(x, l);
        }
        if self.ratio_prior == RatioPrior::Hierarchical {
            for c in 0..self.nc() {
                t += self.country_prior(x, c);
            }
        }
        t
    }

    fn block_log_density(&self, x: &[f64], theta_v: &Vec<f64>, block: usize) -> f64 {
        match self.blocks[block].0 {
            Block::Ratio(l) => self.survey_loglik(x, theta_v, l) + self.ratio_prior_term(x, l),
            Block::CountryMean(c) => {
                self.members[c].iter().map(|&l| self.ratio_prior_term(x, l)).sum::<f64>() + self.country_prior(x, c)
            }
            Block::Regression | Block::Sigma => (0..self.nc()).map(|c| self.country_prior(x, c)).sum(),
            Block::Tau => (0..self.nl()).map(|l| self.ratio_prior_term(x, l)).sum(),
            Block::Accuracy(l) => self.survey_loglik(x, theta_v, l) + self.accuracy_prior_term(x, l),
        }
    }

    fn refresh_latent(&self, _x: &[f64], latent: &mut Vec<f64>, rng: &mut StreamRng) {
        *latent = self.theta_v.draw(self.nl(), rng);
    }

    // (μ0, β1, β2) | a, σ is Gaussian and σ² | a, β is a truncated inverse
    // gamma under the flat priors; exact draws here spare the random walk
    // the regression/σ funnel.
    fn direct_update(&self, x: &mut [f64], theta_v: &Vec<f64>, rng: &mut StreamRng) {
        if self.ratio_prior != RatioPrior::Hierarchical {
            return;
        }
        let (nl, nc) = (self.nl(), self.nc());
        let g = nl + nc;
        let a = &x[nl..g];
        let Some(beta) = regression_draw(a, &self.density, &self.gdp, x[g + 3], rng) else { return };
        x[g..g + 3].copy_from_slice(&beta);
        let ss: f64 = (0..nc)
            .map(|c| {
                let e = x[nl + c] - beta[0] - beta[1] * self.density[c] - beta[2] * self.gdp[c];
                e * e
            })
            .sum();
        let Ok(precision) = Gamma::new(0.5 * (nc as f64 - 1.0), 2.0 / ss.max(1e-300)) else { return };
        // a failed rejection loop leaves σ alone; its probability does not
        // depend on σ, so the conditional is still preserved
        for _ in 0..200 {
            let sigma = precision.sample(rng).recip().sqrt();
            if sigma > 0.0 && sigma < SCALE_LIMIT {
                x[g + 3] = sigma;
                break;
            }
        }

        let tau_lnf = |x: &[f64]| (0..nl).map(|l| self.ratio_prior_term(x, l)).sum::<f64>();
        let mut y = x.to_vec();
        x[g + 4] = slice_update(
            x[g + 4],
            |t| {
                y[g + 4] = t;
                tau_lnf(&y)
            },
            0.2,
            0.0,
            TAU_LIMIT,
            rng,
        );
        for l in 0..nl {
            y.copy_from_slice(x);
            x[l] = slice_update(
                x[l],
                |r| {
                    y[l] = r;
                    self.survey_loglik(&y, theta_v, l) + self.ratio_prior_term(&y, l)
                },
                0.3,
                0.0,
                self.surveys[l].bound,
                rng,
            );
        }
        for c in 0..nc {
            y.copy_from_slice(x);
            x[nl + c] = slice_update(
                x[nl + c],
                |a| {
                    y[nl + c] = a;
                    self.members[c].iter().map(|&l| self.ratio_prior_term(&y, l)).sum::<f64>()
                        + self.country_prior(&y, c)
                },
                0.5,
                f64::NEG_INFINITY,
                f64::INFINITY,
                rng,
            );
        }
    }

    fn check_propriety(&self) -> Result<(), String> {
        if self.ratio_prior == RatioPrior::FlatTheta {
            return Ok(());
        }
        check_design(&self.density, &self.gdp).map_err(|w| format!("infection: {w}"))
    }
}

/// `(μ0, β1, β2) ~ N((XᵀX)⁻¹Xᵀa, σ²(XᵀX)⁻¹)` with rows `[1, PD, G]`.
fn regression_draw(a: &[f64], density: &[f64], gdp: &[f64], sigma: f64, rng: &mut StreamRng) -> Option<[f64; 3]> {
    let mut xtx = [[0.0; 3]; 3];
    let mut xta = [0.0; 3];
    for c in 0..a.len() {
        let row = [1.0, density[c], gdp[c]];
        for i in 0..3 {
            xta[i] += row[i] * a[c];
            for j in 0..3 {
                xtx[i][j] += row[i] * row[j];
            }
        }
    }
    // Cholesky XᵀX = L Lᵀ
    let mut l = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..=i {
            let s: f64 = xtx[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
            if i == j {
                if s <= 0.0 {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    // mean solves L Lᵀ m = Xᵀa; the draw adds σ L⁻ᵀ z
    let mut y = [0.0; 3];
    for i in 0..3 {
        y[i] = (xta[i] - (0..i).map(|k| l[i][k] * y[k]).sum::<f64>()) / l[i][i];
    }
    for yi in &mut y {
        let z: f64 = StandardNormal.sample(rng);
        *yi += sigma * z;
    }
    let mut m = [0.0; 3];
    for i in (0..3).rev() {
        m[i] = (y[i] - (i + 1..3).map(|k| l[k][i] * m[k]).sum::<f64>()) / l[i][i];
    }
    Some(m)
}

/// The flat-prior regression `(μ0, β1, β2)` needs the survey countries'
/// `[1, PD, G]` design to have full column rank.
pub fn check_design(density: &[f64], gdp: &[f64]) -> Result<(), String> {
    let n = density.len();
    if n < 3 {
        return Err(format!("{n} survey countries, at least 3 needed to identify the covariate effects"));
    }
    let mean = |v: &[f64]| v.iter().sum::<f64>() / n as f64;
    let (mp, mg) = (mean(density), mean(gdp));
    let (mut spp, mut sgg, mut spg) = (0.0, 0.0, 0.0);
    for (p, g) in density.iter().zip(gdp) {
        spp += (p - mp) * (p - mp);
        sgg += (g - mg) * (g - mg);
        spg += (p - mp) * (g - mg);
    }
    let det = spp * sgg - spg * spg;
    if spp <= 1e-12 || sgg <= 1e-12 || det <= 1e-10 * spp * sgg {
        return Err(format!(
            "survey-country covariates are collinear (centered cross-products {spp:.3e}, {sgg:.3e}, {spg:.3e})"
        ));
    }
    Ok(())
}

/// Posterior draws needed for prediction.
#[derive(Debug, Clone)]
pub struct InfectionPosterior {
    pub mu0: Vec<f64>,
    pub sigma: Vec<f64>,
    pub tau: Vec<f64>,
    pub beta1: Vec<f64>,
    pub beta2: Vec<f64>,
    /// Country means of survey countries, by corpus index.
    pub country_mean: Vec<Option<Vec<f64>>>,
}

impl InfectionPosterior {
    pub fn from_store(store: &PosteriorStore, model: &InfectionModel, n_countries: usize) -> Result<Self, InfectionError> {
        let col = |n: &str| store.require(n).map(|c| c.to_vec());
        let mut country_mean = vec![None; n_countries];
        for (c, &i) in model.countries.iter().enumerate() {
            country_mean[i] = Some(col(&model.mean_name(c))?);
        }
        Ok(Self {
            mu0: col("mu0")?,
            sigma: col("sigma")?,
            tau: col("tau")?,
            beta1: col("beta1_i")?,
            beta2: col("beta2_i")?,
            country_mean,
        })
    }

    pub fn n_draws(&self) -> usize {
        self.mu0.len()
    }
}

/// θ_I draws for one country on a date grid, `[draw][date]`.
///
/// One log ratio per draw, truncated at the confirmed ratio on the horizon
/// date, so each trajectory is nondecreasing and stays in `[θ_C(t), 1]`.
pub fn predict_theta_i(
    post: &InfectionPosterior,
    country: usize,
    covariates: &Covariates,
    theta_c: &[f64],
    theta_c_horizon: f64,
    key: &StreamKey,
) -> Vec<Vec<f64>> {
    let bound = if theta_c_horizon > 0.0 { -theta_c_horizon.min(1.0).ln() } else { f64::INFINITY };
    (0..post.n_draws())
        .map(|d| {
            if theta_c_horizon <= 0.0 {
                return vec![0.0; theta_c.len()];
            }
            let mut rng = key.stream(country as u64, d as u64);
            let mean = match &post.country_mean[country] {
                Some(a) => a[d],
                None => {
                    let beta = Normal::new(post.mu0[d], post.sigma[d]).map(|n| n.sample(&mut rng)).unwrap_or(post.mu0[d]);
                    beta + post.beta1[d] * covariates.density[country] + post.beta2[d] * covariates.gdp[country]
                }
            };
            let r = if bound > 0.0 {
                TruncatedNormal::new(mean, post.tau[d], 0.0, bound).map(|t| t.sample(&mut rng)).unwrap_or(0.0)
            } else {
                0.0
            };
            let ratio = r.exp();
            theta_c.iter().map(|&c| (c * ratio).min(1.0)).collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn apparent_prevalence_examples() {
        assert_eq!(apparent_prevalence(0.3, 1.0, 1.0), 0.3);
        assert!((apparent_prevalence(0.0, 0.9, 0.95) - 0.05).abs() < 1e-15);
        assert!((apparent_prevalence(0.1, 0.9, 0.95) - 0.135).abs() < 1e-15);
    }

    #[test]
    fn combine_examples() {
        assert_eq!(combine_seroprevalence(0.0, 0.37), 0.37);
        assert!((combine_seroprevalence(0.3, 0.5) - 0.65).abs() < 1e-15);
        assert_eq!(combine_seroprevalence(1.0, 0.2), 1.0);
        assert_eq!(combine_seroprevalence(0.2, 1.0), 1.0);
    }

    #[test]
    fn ratio_density_truncation() {
        assert_eq!(ratio_logdensity(-0.1, 1.0, 1.0, 3.0), f64::NEG_INFINITY);
        assert_eq!(ratio_logdensity(3.1, 1.0, 1.0, 3.0), f64::NEG_INFINITY);
        assert!((ratio_bound(0.05).unwrap() - 2.995_732_273_553_991).abs() < 1e-12);
        assert!(matches!(ratio_bound(1.0), Err(InfectionError::NonpositiveBound(_))));
    }

    #[test]
    fn ratio_density_matches_numerical_normalization() {
        // mean at the interval center
        let (mean, tau, upper) = (1.5, 0.8, 3.0);
        let n = 200_000;
        let h = upper / n as f64;
        let mass: f64 = (0..n).map(|i| normal_ln_pdf((i as f64 + 0.5) * h, mean, tau).exp() * h).sum();
        for r in [0.2, 1.5, 2.7] {
            let expected = normal_ln_pdf(r, mean, tau) - mass.ln();
            assert!((ratio_logdensity(r, mean, tau, upper) - expected).abs() < 1e-8);
        }
    }

    #[test]
    fn accuracy_priors() {
        assert_eq!(
            AccuracyPrior::from_evidence(&AccuracyEvidence::Counts { correct: 95, incorrect: 5 }, 200.0),
            AccuracyPrior::Beta { a: 96.0, b: 6.0 }
        );
        assert_eq!(AccuracyPrior::from_evidence(&AccuracyEvidence::Fixed(1.0), 200.0), AccuracyPrior::Constant(1.0));
        match AccuracyPrior::from_evidence(&AccuracyEvidence::Fixed(0.9), 200.0) {
            AccuracyPrior::Beta { a, b } => assert!((a - 180.0).abs() < 1e-9 && (b - 20.0).abs() < 1e-9),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn design_check_needs_three_spread_countries() {
        assert!(check_design(&[0.0, 1.0], &[1.0, 0.0]).is_err());
        assert!(check_design(&[0.0, 1.0, 2.0], &[0.0, 2.0, 4.0]).is_err());
        assert!(check_design(&[0.0, 1.0, 2.0], &[0.0, 2.0, 1.0]).is_ok());
    }

    #[test]
    fn prediction_respects_bounds_and_monotonicity() {
        let post = InfectionPosterior {
            mu0: vec![0.5; 50],
            sigma: vec![1.0; 50],
            tau: vec![0.7; 50],
            beta1: vec![0.1; 50],
            beta2: vec![-0.5; 50],
            country_mean: vec![None, Some(vec![1.0; 50])],
        };
        let cov = Covariates {
            density: vec![0.3, -0.3],
            gdp: vec![1.0, -1.0],
            density_scale: crate::corpus::Standardization { mean: 0.0, sd: 1.0 },
            gdp_scale: crate::corpus::Standardization { mean: 0.0, sd: 1.0 },
        };
        let theta_c = [0.0, 0.01, 0.02, 0.05, 0.08];
        let key = StreamKey::new(5, 5);
        for country in 0..2 {
            let draws = predict_theta_i(&post, country, &cov, &theta_c, 0.08, &key);
            for d in &draws {
                for (t, (&v, &c)) in d.iter().zip(&theta_c).enumerate() {
                    assert!(v >= c && v <= 1.0);
                    if t > 0 {
                        assert!(v >= d[t - 1]);
                    }
                }
            }
        }
        let zero = predict_theta_i(&post, 0, &cov, &[0.0, 0.0], 0.0, &key);
        assert!(zero.iter().all(|d| d.iter().all(|&v| v == 0.0)));
    }
}
