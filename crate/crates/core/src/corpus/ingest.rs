use super::{
    AccuracyEvidence, ClinicalTrial, Corpus, CountryStats, Day, DeliveryRecord, Serosurvey, VaccinationReport,
    VaccineCatalog, VaccineCatalogEntry,
};
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IssueCode {
    MalformedRow,
    InvariantViolation,
    DuplicateDate,
    /// A decreasing cumulative value was clamped to its running maximum.
    MonotonicRepair,
}

impl IssueCode {
    pub fn is_fatal(self) -> bool {
        !matches!(self, IssueCode::MonotonicRepair)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationIssue {
    pub file: String,
    pub line: u64,
    pub code: IssueCode,
    pub message: String,
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}: {:?}: {}", self.file, self.line, self.code, self.message)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub issues: Vec<ValidationIssue>,
}

impl ValidationReport {
    fn push(&mut self, file: &str, line: u64, code: IssueCode, message: impl Into<String>) {
        self.issues.push(ValidationIssue { file: file.to_string(), line, code, message: message.into() });
    }

    pub fn first_fatal(&self) -> Option<&ValidationIssue> {
        self.issues.iter().find(|i| i.code.is_fatal())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.issues).expect("issues serialize")
    }
}

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{} ({} issue(s) in total)", .0.first_fatal().map(|i| i.to_string()).unwrap_or_default(), .0.issues.len())]
    Rejected(ValidationReport),
}

impl IngestError {
    /// First fatal issue of a rejected corpus.
    pub fn issue(&self) -> Option<&ValidationIssue> {
        match self {
            IngestError::Rejected(r) => r.first_fatal(),
            IngestError::Io { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusPaths {
    pub vaccination: PathBuf,
    pub delivery: PathBuf,
    /// `None` uses the bundled trial table.
    pub trials: Option<PathBuf>,
    pub surveys: PathBuf,
    pub countries: PathBuf,
}

impl CorpusPaths {
    /// Standard file names inside one directory, with the bundled trial table.
    pub fn in_dir(dir: &Path) -> Self {
        let trials = dir.join("trials.csv");
        Self {
            vaccination: dir.join("vaccination.csv"),
            delivery: dir.join("delivery.csv"),
            trials: trials.exists().then_some(trials),
            surveys: dir.join("surveys.csv"),
            countries: dir.join("countries.csv"),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct IngestOptions {
    pub allow_monotonic_repair: bool,
}

struct Table {
    file: String,
    columns: HashMap<String, usize>,
    rows: Vec<(u64, csv::StringRecord)>,
}

impl Table {
    fn parse(file: &str, text: &str, report: &mut ValidationReport) -> Option<Table> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let columns = match rdr.headers() {
            Ok(h) => h.iter().enumerate().map(|(i, c)| (c.to_string(), i)).collect(),
            Err(e) => {
                report.push(file, 1, IssueCode::MalformedRow, format!("bad header: {e}"));
                return None;
            }
        };
        let mut rows = Vec::new();
        for rec in rdr.records() {
            match rec {
                Ok(r) => {
                    let line = r.position().map(|p| p.line()).unwrap_or(0);
                    if r.iter().all(str::is_empty) {
                        continue;
                    }
                    rows.push((line, r));
                }
                Err(e) => {
                    let line = e.position().map(|p| p.line()).unwrap_or(0);
                    report.push(file, line, IssueCode::MalformedRow, e.to_string());
                }
            }
        }
        Some(Table { file: file.to_string(), columns, rows })
    }

    fn require(&self, names: &[&str], report: &mut ValidationReport) -> bool {
        let missing: Vec<&str> = names.iter().copied().filter(|n| !self.columns.contains_key(*n)).collect();
        if !missing.is_empty() {
            report.push(&self.file, 1, IssueCode::MalformedRow, format!("missing column(s): {}", missing.join(", ")));
        }
        missing.is_empty()
    }

    fn get<'a>(&self, rec: &'a csv::StringRecord, name: &str) -> &'a str {
        self.columns.get(name).and_then(|&i| rec.get(i)).unwrap_or("")
    }
}

/// Row-level parse context: records a MalformedRow and yields `None` on failure.
struct Row<'a> {
    table: &'a Table,
    line: u64,
    rec: &'a csv::StringRecord,
}

impl Row<'_> {
    fn field(&self, name: &str) -> &str {
        self.table.get(self.rec, name)
    }

    fn bad(&self, report: &mut ValidationReport, message: String) {
        report.push(&self.table.file, self.line, IssueCode::MalformedRow, message);
    }

    fn parse<T: std::str::FromStr>(&self, name: &str, report: &mut ValidationReport) -> Option<T> {
        let raw = self.field(name);
        match raw.parse() {
            Ok(v) => Some(v),
            Err(_) => {
                self.bad(report, format!("{name}: cannot parse {raw:?}"));
                None
            }
        }
    }

    fn date(&self, name: &str, report: &mut ValidationReport) -> Option<NaiveDate> {
        let raw = self.field(name);
        match NaiveDate::parse_from_str(raw, "%Y-%m-%d") {
            Ok(d) => Some(d),
            Err(_) => {
                self.bad(report, format!("{name}: invalid date {raw:?}"));
                None
            }
        }
    }
}

fn rows(table: &Table) -> impl Iterator<Item = Row<'_>> {
    table.rows.iter().map(move |(line, rec)| Row { table, line: *line, rec })
}

fn read(path: &Path) -> Result<String, IngestError> {
    std::fs::read_to_string(path).map_err(|source| IngestError::Io { path: path.display().to_string(), source })
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_else(|| path.display().to_string())
}

pub(super) fn parse_catalog(text: &str, file: &str) -> Result<VaccineCatalog, IngestError> {
    let mut report = ValidationReport::default();
    let mut entries = Vec::new();
    if let Some(t) = Table::parse(file, text, &mut report) {
        if t.require(&["id", "manufacturer", "type", "interval_days"], &mut report) {
            for row in rows(&t) {
                let (Some(id), Some(vtype), Some(interval)) = (
                    row.parse::<usize>("id", &mut report),
                    row.parse::<u8>("type", &mut report),
                    row.parse::<i64>("interval_days", &mut report),
                ) else {
                    continue;
                };
                entries.push(VaccineCatalogEntry {
                    vaccine_id: id,
                    manufacturer_name: row.field("manufacturer").to_string(),
                    vtype,
                    interval_days: interval,
                });
            }
        }
    }
    if report.first_fatal().is_some() {
        return Err(IngestError::Rejected(report));
    }
    VaccineCatalog::new(entries).map_err(|msg| {
        report.push(file, 1, IssueCode::InvariantViolation, msg);
        IngestError::Rejected(report)
    })
}

fn parse_trials(t: &Table, catalog: Option<&VaccineCatalog>, report: &mut ValidationReport) -> Vec<ClinicalTrial> {
    let mut out = Vec::new();
    if !t.require(&["manufacturer", "dose", "NV", "nV", "NC", "nC"], report) {
        return out;
    }
    for row in rows(t) {
        let name = row.field("manufacturer").to_string();
        let (Some(dose), Some(nv_total), Some(nv), Some(nc_total), Some(nc)) = (
            row.parse::<u8>("dose", report),
            row.parse::<u64>("NV", report),
            row.parse::<u64>("nV", report),
            row.parse::<u64>("NC", report),
            row.parse::<u64>("nC", report),
        ) else {
            continue;
        };
        let violation = |msg: String, report: &mut ValidationReport| {
            report.push(&t.file, row.line, IssueCode::InvariantViolation, msg)
        };
        if nv_total == 0 || nc_total == 0 {
            violation(format!("{name}: group sizes must be positive"), report);
        } else if nv > nv_total || nc > nc_total {
            violation(format!("{name}: more cases than group members"), report);
        } else if !(1..=2).contains(&dose) {
            violation(format!("{name}: dose stage {dose} not in 1..=2"), report);
        } else if let Some(cat) = catalog {
            match cat.index_of(&name) {
                // trials of vaccines not in use still inform the hyperparameters
                None => {}
                Some(k) if dose > cat.doses_required(k) => {
                    violation(format!("{name}: dose stage {dose} exceeds required doses"), report)
                }
                Some(_) => {}
            }
        }
        out.push(ClinicalTrial {
            manufacturer_name: name,
            dose_stage: dose,
            vaccinated_size: nv_total,
            vaccinated_cases: nv,
            placebo_size: nc_total,
            placebo_cases: nc,
        });
    }
    out
}

pub(super) fn parse_trials_text(text: &str) -> Result<Vec<ClinicalTrial>, IngestError> {
    let mut report = ValidationReport::default();
    let trials = match Table::parse("trials.csv", text, &mut report) {
        Some(t) => parse_trials(&t, None, &mut report),
        None => Vec::new(),
    };
    match report.first_fatal() {
        Some(_) => Err(IngestError::Rejected(report)),
        None => Ok(trials),
    }
}

fn parse_accuracy(row: &Row<'_>, hit: &str, miss: &str, report: &mut ValidationReport) -> Option<AccuracyEvidence> {
    let miss_raw = row.field(miss);
    if miss_raw.is_empty() {
        let v: f64 = row.parse(hit, report)?;
        if !(v > 0.0 && v <= 1.0) {
            row.bad(report, format!("{hit}: fixed accuracy {v} not in (0, 1]"));
            return None;
        }
        return Some(AccuracyEvidence::Fixed(v));
    }
    let correct: u64 = row.parse(hit, report)?;
    let incorrect: u64 = row.parse(miss, report)?;
    if correct + incorrect == 0 {
        row.bad(report, format!("{hit}/{miss}: empty validation panel"));
        return None;
    }
    Some(AccuracyEvidence::Counts { correct, incorrect })
}

struct RawReport {
    line: u64,
    country: usize,
    date: NaiveDate,
    cum_doses: u64,
    cum_fully: Option<u64>,
    in_use: Vec<usize>,
    per_vaccine: Option<Vec<u64>>,
}

fn parse_id_list(raw: &str, k_max: usize) -> Result<Vec<usize>, String> {
    let mut ids = Vec::new();
    for tok in raw.split(';').map(str::trim).filter(|t| !t.is_empty()) {
        let id: usize = tok.parse().map_err(|_| format!("vaccine id {tok:?} is not an integer"))?;
        if id == 0 || id > k_max {
            return Err(format!("vaccine id {id} not in catalog 1..={k_max}"));
        }
        ids.push(id - 1);
    }
    ids.sort_unstable();
    ids.dedup();
    Ok(ids)
}

fn parse_per_vaccine(raw: &str, k_max: usize) -> Result<Option<Vec<u64>>, String> {
    if raw.is_empty() {
        return Ok(None);
    }
    let mut counts = vec![0u64; k_max];
    for tok in raw.split(';').map(str::trim).filter(|t| !t.is_empty()) {
        let (id, n) = tok.split_once('=').ok_or_else(|| format!("per_vaccine entry {tok:?} is not k=count"))?;
        let id: usize = id.trim().parse().map_err(|_| format!("per_vaccine id {id:?} is not an integer"))?;
        if id == 0 || id > k_max {
            return Err(format!("per_vaccine id {id} not in catalog 1..={k_max}"));
        }
        counts[id - 1] = n.trim().parse().map_err(|_| format!("per_vaccine count {n:?} is not an integer"))?;
    }
    Ok(Some(counts))
}

struct RawCountry {
    code: String,
    population: u64,
    density: f64,
    gdp: f64,
    confirmed: Vec<(u64, NaiveDate, u64)>,
    confirmed_file: String,
    rollout: Option<NaiveDate>,
}

fn load_confirmed(
    path: &Path,
    code: &str,
    cache: &mut HashMap<PathBuf, Option<Table>>,
    report: &mut ValidationReport,
) -> Result<Vec<(u64, NaiveDate, u64)>, IngestError> {
    if !cache.contains_key(path) {
        let text = read(path)?;
        let table = Table::parse(&file_name(path), &text, report);
        let table = table.filter(|t| t.require(&["date", "cum_confirmed"], report));
        cache.insert(path.to_path_buf(), table);
    }
    let Some(t) = cache[path].as_ref() else { return Ok(Vec::new()) };
    let shared = t.columns.contains_key("country");
    let mut out = Vec::new();
    for row in rows(t) {
        if shared && row.field("country") != code {
            continue;
        }
        if let (Some(d), Some(n)) = (row.date("date", report), row.parse::<u64>("cum_confirmed", report)) {
            out.push((row.line, d, n));
        }
    }
    Ok(out)
}

/// Repairs or flags a cumulative series given in date order. Returns false
/// when a decrease is found and repair is not allowed.
fn enforce_monotone(
    values: &mut [u64],
    lines: &[u64],
    file: &str,
    what: &str,
    opts: IngestOptions,
    report: &mut ValidationReport,
) -> Vec<usize> {
    let mut repaired = Vec::new();
    let mut running = 0u64;
    for (idx, v) in values.iter_mut().enumerate() {
        if *v < running {
            if opts.allow_monotonic_repair {
                report.push(
                    file,
                    lines[idx],
                    IssueCode::MonotonicRepair,
                    format!("{what} {v} clamped to running maximum {running}"),
                );
                log::warn!("{file}:{}: {what} {v} clamped to {running}", lines[idx]);
                *v = running;
                repaired.push(idx);
            } else {
                report.push(
                    file,
                    lines[idx],
                    IssueCode::InvariantViolation,
                    format!("decreasing {what}: {v} after {running}"),
                );
            }
        }
        running = running.max(*v);
    }
    repaired
}

/// Reads, validates and indexes the five input files.
///
/// All problems are collected before deciding; any fatal issue rejects the
/// whole corpus with the full report. Non-fatal repairs are returned with the
/// corpus.
pub fn ingest_corpus(
    paths: &CorpusPaths,
    catalog: &VaccineCatalog,
    opts: IngestOptions,
) -> Result<(Corpus, ValidationReport), IngestError> {
    let mut report = ValidationReport::default();
    let k_max = catalog.len();

    // countries
    let countries_text = read(&paths.countries)?;
    let countries_file = file_name(&paths.countries);
    let base_dir = paths.countries.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut raw_countries: Vec<RawCountry> = Vec::new();
    let mut confirmed_cache = HashMap::new();
    if let Some(t) = Table::parse(&countries_file, &countries_text, &mut report) {
        if t.require(&["country", "population", "pop_density", "gdp_pc", "confirmed"], &mut report) {
            for row in rows(&t) {
                let code = row.field("country").to_string();
                if code.is_empty() {
                    row.bad(&mut report, "empty country code".into());
                    continue;
                }
                if raw_countries.iter().any(|c| c.code == code) {
                    row.bad(&mut report, format!("duplicate country {code}"));
                    continue;
                }
                let (Some(population), Some(density), Some(gdp)) = (
                    row.parse::<u64>("population", &mut report),
                    row.parse::<f64>("pop_density", &mut report),
                    row.parse::<f64>("gdp_pc", &mut report),
                ) else {
                    continue;
                };
                if population == 0 || !(density > 0.0 && density.is_finite()) || !(gdp > 0.0 && gdp.is_finite()) {
                    report.push(
                        &t.file,
                        row.line,
                        IssueCode::InvariantViolation,
                        format!("{code}: population, density and GDP must be positive"),
                    );
                    continue;
                }
                let rollout = match row.field("rollout_start") {
                    "" => None,
                    _ => match row.date("rollout_start", &mut report) {
                        Some(d) => Some(d),
                        None => continue,
                    },
                };
                let confirmed_file = row.field("confirmed").to_string();
                let confirmed = if confirmed_file.is_empty() {
                    Vec::new()
                } else {
                    load_confirmed(&base_dir.join(&confirmed_file), &code, &mut confirmed_cache, &mut report)?
                };
                raw_countries.push(RawCountry { code, population, density, gdp, confirmed, confirmed_file, rollout });
            }
        }
    }
    let country_index: HashMap<String, usize> =
        raw_countries.iter().enumerate().map(|(i, c)| (c.code.clone(), i)).collect();
    let lookup = |row: &Row<'_>, report: &mut ValidationReport| -> Option<usize> {
        let code = row.field("country");
        let idx = country_index.get(code).copied();
        if idx.is_none() {
            row.bad(report, format!("country {code:?} not listed in {countries_file}"));
        }
        idx
    };

    // vaccination
    let vacc_text = read(&paths.vaccination)?;
    let vacc_file = file_name(&paths.vaccination);
    let mut raw_reports: Vec<RawReport> = Vec::new();
    if let Some(t) = Table::parse(&vacc_file, &vacc_text, &mut report) {
        if t.require(&["country", "date", "cum_doses", "vaccines_in_use"], &mut report) {
            if t.rows.is_empty() {
                report.push(&vacc_file, 1, IssueCode::MalformedRow, "no records");
            }
            for row in rows(&t) {
                let Some(country) = lookup(&row, &mut report) else { continue };
                let (Some(date), Some(cum_doses)) =
                    (row.date("date", &mut report), row.parse::<u64>("cum_doses", &mut report))
                else {
                    continue;
                };
                let cum_fully = match row.field("cum_fully") {
                    "" => None,
                    _ => match row.parse::<u64>("cum_fully", &mut report) {
                        Some(y) => Some(y),
                        None => continue,
                    },
                };
                let in_use = match parse_id_list(row.field("vaccines_in_use"), k_max) {
                    Ok(v) => v,
                    Err(e) => {
                        row.bad(&mut report, e);
                        continue;
                    }
                };
                let per_vaccine = match parse_per_vaccine(row.field("per_vaccine"), k_max) {
                    Ok(v) => v,
                    Err(e) => {
                        row.bad(&mut report, e);
                        continue;
                    }
                };
                let inv = |msg: String, report: &mut ValidationReport| {
                    report.push(&vacc_file, row.line, IssueCode::InvariantViolation, msg)
                };
                if let Some(y) = cum_fully {
                    if y > cum_doses {
                        inv(format!("fully vaccinated {y} exceeds cumulative doses {cum_doses}"), &mut report);
                    }
                }
                if let Some(pv) = &per_vaccine {
                    let total: u64 = pv.iter().sum();
                    if total != cum_doses {
                        inv(format!("per-vaccine doses sum to {total}, cumulative doses are {cum_doses}"), &mut report);
                    }
                }
                raw_reports.push(RawReport { line: row.line, country, date, cum_doses, cum_fully, in_use, per_vaccine });
            }
        }
    }

    // delivery
    let deliv_text = read(&paths.delivery)?;
    let deliv_file = file_name(&paths.delivery);
    let mut amounts: BTreeMap<usize, Vec<f64>> = BTreeMap::new();
    if let Some(t) = Table::parse(&deliv_file, &deliv_text, &mut report) {
        if t.require(&["country", "vaccine", "doses"], &mut report) {
            for row in rows(&t) {
                let Some(country) = lookup(&row, &mut report) else { continue };
                let (Some(id), Some(doses)) =
                    (row.parse::<usize>("vaccine", &mut report), row.parse::<f64>("doses", &mut report))
                else {
                    continue;
                };
                if id == 0 || id > k_max {
                    row.bad(&mut report, format!("vaccine id {id} not in catalog 1..={k_max}"));
                    continue;
                }
                if !(doses >= 0.0 && doses.is_finite()) {
                    report.push(&deliv_file, row.line, IssueCode::InvariantViolation, "negative delivered doses");
                    continue;
                }
                amounts.entry(country).or_insert_with(|| vec![0.0; k_max])[id - 1] += doses;
            }
        }
    }
    let mut deliveries = Vec::new();
    for (country, amounts) in amounts {
        if amounts.iter().sum::<f64>() <= 0.0 {
            report.push(
                &deliv_file,
                0,
                IssueCode::InvariantViolation,
                format!("country {} has a zero delivery total", raw_countries[country].code),
            );
        }
        deliveries.push(DeliveryRecord { country, amounts });
    }

    // trials
    let trials = match &paths.trials {
        Some(p) => {
            let text = read(p)?;
            match Table::parse(&file_name(p), &text, &mut report) {
                Some(t) => parse_trials(&t, Some(catalog), &mut report),
                None => Vec::new(),
            }
        }
        None => super::bundled_trials(),
    };

    // surveys
    let surv_text = read(&paths.surveys)?;
    let surv_file = file_name(&paths.surveys);
    let mut raw_surveys: Vec<(u64, usize, NaiveDate, u64, u64, AccuracyEvidence, AccuracyEvidence)> = Vec::new();
    if let Some(t) = Table::parse(&surv_file, &surv_text, &mut report) {
        if t.require(&["country", "end_date", "N", "X", "sens_tp", "sens_fn", "spec_tn", "spec_fp"], &mut report) {
            for row in rows(&t) {
                let Some(country) = lookup(&row, &mut report) else { continue };
                let (Some(date), Some(n), Some(x)) = (
                    row.date("end_date", &mut report),
                    row.parse::<u64>("N", &mut report),
                    row.parse::<u64>("X", &mut report),
                ) else {
                    continue;
                };
                let (Some(sens), Some(spec)) = (
                    parse_accuracy(&row, "sens_tp", "sens_fn", &mut report),
                    parse_accuracy(&row, "spec_tn", "spec_fp", &mut report),
                ) else {
                    continue;
                };
                if n == 0 || x > n {
                    report.push(&surv_file, row.line, IssueCode::InvariantViolation, format!("need 0 <= X <= N, N > 0 (N={n}, X={x})"));
                    continue;
                }
                raw_surveys.push((row.line, country, date, n, x, sens, spec));
            }
        }
    }

    // epoch and range
    let all_dates = raw_reports
        .iter()
        .map(|r| r.date)
        .chain(raw_countries.iter().flat_map(|c| c.confirmed.iter().map(|x| x.1).chain(c.rollout)))
        .chain(raw_surveys.iter().map(|s| s.2));
    let Some(epoch) = all_dates.min() else {
        if report.first_fatal().is_none() {
            report.push(&vacc_file, 1, IssueCode::MalformedRow, "no records");
        }
        return Err(IngestError::Rejected(report));
    };
    let day = |d: NaiveDate| -> Day { (d - epoch).num_days() };
    let last_day = raw_reports
        .iter()
        .map(|r| day(r.date))
        .chain(raw_countries.iter().flat_map(|c| c.confirmed.iter().map(|x| day(x.1))))
        .max()
        .unwrap_or(0);

    // per-country ordering and monotonicity
    let n_countries = raw_countries.len();
    let mut by_country: Vec<Vec<RawReport>> = (0..n_countries).map(|_| Vec::new()).collect();
    for r in raw_reports {
        by_country[r.country].push(r);
    }
    let mut vaccination = Vec::with_capacity(n_countries);
    for (i, mut reps) in by_country.into_iter().enumerate() {
        reps.sort_by_key(|r| (r.date, r.line));
        for w in reps.windows(2) {
            if w[0].date == w[1].date {
                report.push(
                    &vacc_file,
                    w[1].line,
                    IssueCode::DuplicateDate,
                    format!("{}: second report on {} (first at line {})", raw_countries[i].code, w[1].date, w[0].line),
                );
            }
        }
        let lines: Vec<u64> = reps.iter().map(|r| r.line).collect();
        let mut doses: Vec<u64> = reps.iter().map(|r| r.cum_doses).collect();
        let repaired = enforce_monotone(&mut doses, &lines, &vacc_file, "cumulative doses", opts, &mut report);
        for idx in repaired {
            let r = &mut reps[idx];
            r.cum_doses = doses[idx];
            if r.per_vaccine.take().is_some() {
                report.push(
                    &vacc_file,
                    r.line,
                    IssueCode::MonotonicRepair,
                    "per-vaccine split dropped after repairing the total",
                );
            }
        }
        vaccination.push(
            reps.into_iter()
                .map(|r| VaccinationReport {
                    country: i,
                    date: day(r.date),
                    cum_doses: r.cum_doses,
                    cum_fully: r.cum_fully,
                    vaccines_in_use: r.in_use,
                    per_vaccine_doses: r.per_vaccine,
                })
                .collect(),
        );
    }

    let mut countries = Vec::with_capacity(n_countries);
    for c in raw_countries {
        let mut series = c.confirmed;
        series.sort_by_key(|x| (x.1, x.0));
        let conf_file = if c.confirmed_file.is_empty() { countries_file.clone() } else { c.confirmed_file.clone() };
        for w in series.windows(2) {
            if w[0].1 == w[1].1 {
                report.push(&conf_file, w[1].0, IssueCode::DuplicateDate, format!("{}: duplicate confirmed date {}", c.code, w[1].1));
            }
        }
        let lines: Vec<u64> = series.iter().map(|x| x.0).collect();
        let mut counts: Vec<u64> = series.iter().map(|x| x.2).collect();
        enforce_monotone(&mut counts, &lines, &conf_file, &format!("{} confirmed", c.code), opts, &mut report);
        if let Some((idx, &n)) = counts.iter().enumerate().find(|(_, &n)| n > c.population) {
            report.push(
                &conf_file,
                lines[idx],
                IssueCode::InvariantViolation,
                format!("{}: confirmed {n} exceeds population {}", c.code, c.population),
            );
        }
        countries.push(CountryStats {
            code: c.code,
            population: c.population,
            pop_density: c.density,
            gdp_per_capita: c.gdp,
            confirmed: series.iter().zip(counts).map(|(x, n)| (day(x.1), n)).collect(),
            rollout_start: c.rollout.map(day),
        });
    }

    let mut surveys = Vec::with_capacity(raw_surveys.len());
    for (line, country, date, n, x, sens, spec) in raw_surveys {
        let d = day(date);
        if d > last_day {
            report.push(
                &surv_file,
                line,
                IssueCode::InvariantViolation,
                format!("survey end date {date} after the last data date"),
            );
            continue;
        }
        surveys.push(Serosurvey {
            survey_id: surveys.len(),
            country,
            end_date: d,
            n_samples: n,
            n_positive: x,
            sensitivity: sens,
            specificity: spec,
        });
    }

    if report.first_fatal().is_some() {
        return Err(IngestError::Rejected(report));
    }
    let corpus = Corpus {
        epoch,
        last_day,
        catalog: catalog.clone(),
        countries,
        vaccination,
        deliveries,
        trials,
        surveys,
    };
    Ok((corpus, report))
}
