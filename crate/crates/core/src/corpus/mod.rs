//! Input datasets: vaccine catalog, vaccination reports, deliveries, clinical
//! trials, serosurveys and per-country statistics.
//!
//! Dates are integer day offsets from the corpus epoch, the earliest date
//! appearing in any input file.

mod emit;
mod ingest;

pub use emit::write_corpus;
pub use ingest::{
    ingest_corpus, CorpusPaths, IngestError, IngestOptions, IssueCode, ValidationIssue, ValidationReport,
};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

/// Day offset from the corpus epoch.
pub type Day = i64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaccineCatalogEntry {
    /// 1-based id as written in the data files.
    pub vaccine_id: usize,
    pub manufacturer_name: String,
    /// Doses required for full vaccination (1, 2 or 3).
    pub vtype: u8,
    /// Recommended days between first and last dose; 0 for single-dose vaccines.
    pub interval_days: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaccineCatalog {
    entries: Vec<VaccineCatalogEntry>,
}

const BUNDLED_CATALOG: &str = include_str!("../../data/vaccines.csv");
const BUNDLED_TRIALS: &str = include_str!("../../data/trials.csv");

impl VaccineCatalog {
    /// Builds a catalog, checking dense ids and type/interval consistency.
    pub fn new(mut entries: Vec<VaccineCatalogEntry>) -> Result<Self, String> {
        entries.sort_by_key(|e| e.vaccine_id);
        for (pos, e) in entries.iter().enumerate() {
            if e.vaccine_id != pos + 1 {
                return Err(format!("vaccine ids must be dense 1..K, found {} at position {}", e.vaccine_id, pos + 1));
            }
            match e.vtype {
                1 if e.interval_days != 0 => {
                    return Err(format!("{}: single-dose vaccine must have interval 0", e.manufacturer_name))
                }
                2 | 3 if e.interval_days <= 0 => {
                    return Err(format!("{}: multi-dose vaccine needs a positive interval", e.manufacturer_name))
                }
                1..=3 => {}
                t => return Err(format!("{}: vaccine type {t} not in 1..=3", e.manufacturer_name)),
            }
        }
        if entries.is_empty() {
            return Err("empty vaccine catalog".into());
        }
        Ok(Self { entries })
    }

    /// The shipped catalog of twelve manufacturers.
    pub fn bundled() -> Self {
        ingest::parse_catalog(BUNDLED_CATALOG, "vaccines.csv").expect("bundled catalog is valid")
    }

    pub fn from_csv(text: &str) -> Result<Self, IngestError> {
        ingest::parse_catalog(text, "vaccines.csv")
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[VaccineCatalogEntry] {
        &self.entries
    }

    /// Entry by 0-based index `k`.
    pub fn get(&self, k: usize) -> &VaccineCatalogEntry {
        &self.entries[k]
    }

    pub fn index_of(&self, manufacturer: &str) -> Option<usize> {
        let wanted = manufacturer.trim().to_ascii_lowercase();
        self.entries.iter().position(|e| e.manufacturer_name.to_ascii_lowercase() == wanted)
    }

    pub fn doses_required(&self, k: usize) -> u8 {
        self.entries[k].vtype
    }

    pub fn interval(&self, k: usize) -> i64 {
        self.entries[k].interval_days
    }

    /// 0-based indices of vaccines of the given type.
    pub fn of_type(&self, vtype: u8) -> impl Iterator<Item = usize> + '_ {
        self.entries.iter().enumerate().filter(move |(_, e)| e.vtype == vtype).map(|(k, _)| k)
    }
}

/// The clinical-trial table shipped with the crate.
pub fn bundled_trials() -> Vec<ClinicalTrial> {
    ingest::parse_trials_text(BUNDLED_TRIALS).expect("bundled trials are valid")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VaccinationReport {
    pub country: usize,
    pub date: Day,
    pub cum_doses: u64,
    pub cum_fully: Option<u64>,
    /// 0-based vaccine indices in use, sorted.
    pub vaccines_in_use: Vec<usize>,
    /// Cumulative doses per vaccine (length K) when reported.
    pub per_vaccine_doses: Option<Vec<u64>>,
}

impl VaccinationReport {
    pub fn uses(&self, k: usize) -> bool {
        self.vaccines_in_use.binary_search(&k).is_ok()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeliveryRecord {
    pub country: usize,
    /// Delivered doses per vaccine (length K).
    pub amounts: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeliveryShares {
    /// `shares[country][k]`, each row on the simplex.
    pub shares: Vec<Vec<f64>>,
}

impl DeliveryShares {
    pub fn row(&self, country: usize) -> &[f64] {
        &self.shares[country]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClinicalTrial {
    pub manufacturer_name: String,
    pub dose_stage: u8,
    pub vaccinated_size: u64,
    pub vaccinated_cases: u64,
    pub placebo_size: u64,
    pub placebo_cases: u64,
}

impl ClinicalTrial {
    /// Crude efficacy `1 − (n_V/N_V)/(n_C/N_C)`.
    pub fn crude_efficacy(&self) -> f64 {
        let rv = self.vaccinated_cases as f64 / self.vaccinated_size as f64;
        let rc = self.placebo_cases as f64 / self.placebo_size as f64;
        1.0 - rv / rc
    }
}

/// Validation evidence for a test's sensitivity or specificity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum AccuracyEvidence {
    /// Correct and incorrect classifications in a validation panel
    /// (true positives / false negatives, or true negatives / false positives).
    Counts { correct: u64, incorrect: u64 },
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Serosurvey {
    pub survey_id: usize,
    pub country: usize,
    pub end_date: Day,
    pub n_samples: u64,
    pub n_positive: u64,
    pub sensitivity: AccuracyEvidence,
    pub specificity: AccuracyEvidence,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountryStats {
    pub code: String,
    pub population: u64,
    pub pop_density: f64,
    pub gdp_per_capita: f64,
    /// `(day, cumulative confirmed)` sorted by day, nondecreasing counts.
    pub confirmed: Vec<(Day, u64)>,
    /// Start of vaccine rollout, when known.
    pub rollout_start: Option<Day>,
}

impl CountryStats {
    pub fn log_density(&self) -> f64 {
        self.pop_density.ln()
    }

    pub fn log_gdp(&self) -> f64 {
        self.gdp_per_capita.ln()
    }

    /// Cumulative confirmed at `day`, step-interpolated; 0 before the first record.
    pub fn confirmed_at(&self, day: Day) -> u64 {
        match self.confirmed.partition_point(|&(d, _)| d <= day) {
            0 => 0,
            n => self.confirmed[n - 1].1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CorpusError {
    #[error("no delivery records with a positive total")]
    EmptyDeliverySet,
    #[error("covariate {name} is degenerate: {reason}")]
    DegenerateCovariate { name: &'static str, reason: String },
    #[error("day {day} outside corpus range [0, {last}]")]
    DateOutOfRange { day: Day, last: Day },
    #[error("unknown country index {0}")]
    UnknownCountry(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub epoch: NaiveDate,
    /// Last day covered by vaccination or confirmed-case data.
    pub last_day: Day,
    pub catalog: VaccineCatalog,
    pub countries: Vec<CountryStats>,
    /// Reports per country ordered by date (`vaccination[i][j]`).
    pub vaccination: Vec<Vec<VaccinationReport>>,
    pub deliveries: Vec<DeliveryRecord>,
    pub trials: Vec<ClinicalTrial>,
    pub surveys: Vec<Serosurvey>,
}

impl Corpus {
    pub fn n_countries(&self) -> usize {
        self.countries.len()
    }

    pub fn n_vaccines(&self) -> usize {
        self.catalog.len()
    }

    pub fn country_index(&self, code: &str) -> Option<usize> {
        self.countries.iter().position(|c| c.code == code)
    }

    pub fn date_of(&self, day: Day) -> NaiveDate {
        self.epoch + chrono::Duration::days(day)
    }

    pub fn day_of(&self, date: NaiveDate) -> Day {
        (date - self.epoch).num_days()
    }

    pub fn total_population(&self) -> f64 {
        self.countries.iter().map(|c| c.population as f64).sum()
    }

    /// Confirmed ratio θ^(C) of `country` at `day`.
    pub fn confirmed_ratio(&self, country: usize, day: Day) -> Result<f64, CorpusError> {
        let stats = self.countries.get(country).ok_or(CorpusError::UnknownCountry(country))?;
        if day < 0 || day > self.last_day {
            return Err(CorpusError::DateOutOfRange { day, last: self.last_day });
        }
        Ok(stats.confirmed_at(day) as f64 / stats.population as f64)
    }

    pub fn delivery_shares(&self) -> Result<DeliveryShares, CorpusError> {
        compute_delivery_shares(&self.deliveries, self.n_countries(), self.n_vaccines())
    }

    pub fn covariates(&self) -> Result<Covariates, CorpusError> {
        standardize_covariates(&self.countries)
    }
}

/// Per-country delivery shares, using pooled shares of all delivery countries
/// for countries without their own records.
pub fn compute_delivery_shares(
    deliveries: &[DeliveryRecord],
    n_countries: usize,
    n_vaccines: usize,
) -> Result<DeliveryShares, CorpusError> {
    let mut own: Vec<Option<Vec<f64>>> = vec![None; n_countries];
    let mut pooled = vec![0.0; n_vaccines];
    for rec in deliveries {
        let total: f64 = rec.amounts.iter().sum();
        if total <= 0.0 {
            continue;
        }
        if rec.country >= n_countries {
            return Err(CorpusError::UnknownCountry(rec.country));
        }
        for (p, a) in pooled.iter_mut().zip(&rec.amounts) {
            *p += a;
        }
        own[rec.country] = Some(rec.amounts.iter().map(|a| a / total).collect());
    }
    let pooled_total: f64 = pooled.iter().sum();
    if pooled_total <= 0.0 {
        return Err(CorpusError::EmptyDeliverySet);
    }
    let global: Vec<f64> = pooled.iter().map(|p| p / pooled_total).collect();
    let shares = own.into_iter().map(|row| row.unwrap_or_else(|| global.clone())).collect();
    Ok(DeliveryShares { shares })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub mean: f64,
    /// Sample standard deviation (n − 1 denominator).
    pub sd: f64,
}

impl Standardization {
    pub fn apply(&self, raw: f64) -> f64 {
        (raw - self.mean) / self.sd
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Covariates {
    /// Standardized log population density per country.
    pub density: Vec<f64>,
    /// Standardized log GDP per capita per country.
    pub gdp: Vec<f64>,
    pub density_scale: Standardization,
    pub gdp_scale: Standardization,
}

fn standardization(name: &'static str, raw: &[f64]) -> Result<Standardization, CorpusError> {
    if raw.len() < 2 {
        return Err(CorpusError::DegenerateCovariate {
            name,
            reason: format!("{} value(s), sample sd undefined", raw.len()),
        });
    }
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(CorpusError::DegenerateCovariate { name, reason: "non-finite log value".into() });
    }
    let n = raw.len() as f64;
    let mean = raw.iter().sum::<f64>() / n;
    let sd = (raw.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    if sd == 0.0 {
        return Err(CorpusError::DegenerateCovariate { name, reason: "zero standard deviation".into() });
    }
    Ok(Standardization { mean, sd })
}

/// Standardizes log density and log GDP over every country passed in.
pub fn standardize_covariates(stats: &[CountryStats]) -> Result<Covariates, CorpusError> {
    let pd: Vec<f64> = stats.iter().map(CountryStats::log_density).collect();
    let gdp: Vec<f64> = stats.iter().map(CountryStats::log_gdp).collect();
    standardize_raw(&pd, &gdp)
}

/// Same as [`standardize_covariates`] on already-logged values.
pub fn standardize_raw(log_density: &[f64], log_gdp: &[f64]) -> Result<Covariates, CorpusError> {
    let density_scale = standardization("log population density", log_density)?;
    let gdp_scale = standardization("log GDP per capita", log_gdp)?;
    Ok(Covariates {
        density: log_density.iter().map(|&v| density_scale.apply(v)).collect(),
        gdp: log_gdp.iter().map(|&v| gdp_scale.apply(v)).collect(),
        density_scale,
        gdp_scale,
    })
}
