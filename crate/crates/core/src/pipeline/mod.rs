//! Stage-by-stage orchestration from raw files to world trends.
//!
//! Every stage reads its inputs from the output directory and writes its
//! results back there, so any stage can be rerun on its own once its
//! predecessors have completed. `manifest.json` records input hashes, the
//! effective configuration and the outputs of each stage.

pub mod aggregate;
mod svg;

use crate::allocation::{build_weights, check_theorem1, diagnostics_csv, observed_splits, AllocationModel, AllocationWeights};
use crate::completion::{all_contexts, context_csv, likelihood_rows, CompletionModel, RecencyContext, DEFAULT_DELTA};
use crate::corpus::{
    ingest_corpus, write_corpus, Corpus, CorpusPaths, Covariates, Day, DeliveryShares, IngestOptions, VaccineCatalog,
};
use crate::efficacy::{fit_efficacy, EfficacyFit, EfficacySampler};
use crate::infection::{
    predict_theta_i, survey_points, InfectionModel, InfectionPosterior, RatioPrior, SurveyPoint, ThetaVPrior,
    DEFAULT_ACCURACY_CONCENTRATION, SCALE_LIMIT, TAU_LIMIT,
};
use crate::mcmc::{run_chains, ChainConfig, PosteriorStore};
use crate::rng::{derive_seed, StreamKey, StreamRng};
use crate::vaccination::{theta_v, VaccinationCounters, VaccinationDraws, VaccinationInputs};
use aggregate::{treemap_export, CountryDraws, Summary, WorldAccumulator, WorldTrend};
use rand::Rng;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

pub use aggregate::{world_trend, AggregateError, TreemapRecord};

/// Reference world seroprevalence on 2021-07-31 from the full 2021 data
/// (95% intervals); not reproducible from the bundled fixture.
pub const REFERENCE_2021_07_31: [(&str, f64, f64); 3] =
    [("theta_v", 0.224, 0.287), ("theta_i", 0.175, 0.445), ("theta", 0.386, 0.592)];

const ESS_FLOOR: f64 = 200.0;
const RHAT_CEILING: f64 = 1.1;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("missing config key `{0}`")]
    MissingKey(String),
    #[error("config key `{key}`: {message}")]
    Invalid { key: String, message: String },
    #[error("cannot read config {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("config is not valid JSON: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("stage {stage}: {message}")]
    Stage { stage: &'static str, message: String },
}

fn stage_err<E: std::fmt::Display>(stage: &'static str) -> impl Fn(E) -> PipelineError {
    move |e| PipelineError::Stage { stage, message: e.to_string() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Ingest,
    FitAllocation,
    FitCompletion,
    FitEfficacy,
    FitInfection,
    Predict,
    Aggregate,
    Report,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Ingest,
        Stage::FitAllocation,
        Stage::FitCompletion,
        Stage::FitEfficacy,
        Stage::FitInfection,
        Stage::Predict,
        Stage::Aggregate,
        Stage::Report,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::FitAllocation => "fit-allocation",
            Stage::FitCompletion => "fit-completion",
            Stage::FitEfficacy => "fit-efficacy",
            Stage::FitInfection => "fit-infection",
            Stage::Predict => "predict",
            Stage::Aggregate => "aggregate",
            Stage::Report => "report",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InputPaths {
    pub vaccination: PathBuf,
    pub delivery: PathBuf,
    pub surveys: PathBuf,
    pub countries: PathBuf,
    pub trials: Option<PathBuf>,
    pub vaccines: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    /// Paths exactly as written in the config, for the manifest.
    pub raw_paths: BTreeMap<String, String>,
    pub paths: InputPaths,
    pub mcmc: ChainConfig,
    pub delta: i64,
    pub accuracy_concentration: f64,
    pub out_dir: PathBuf,
    pub stride: i64,
    pub svg: bool,
    pub joint: bool,
    pub allow_monotonic_repair: bool,
}

fn lookup<'a>(root: &'a Value, key: &str) -> Option<&'a Value> {
    key.split('.').try_fold(root, |v, part| v.get(part))
}

fn required<'a>(root: &'a Value, key: &str) -> Result<&'a Value, ConfigError> {
    lookup(root, key).filter(|v| !v.is_null()).ok_or_else(|| ConfigError::MissingKey(key.to_string()))
}

fn invalid(key: &str, message: &str) -> ConfigError {
    ConfigError::Invalid { key: key.to_string(), message: message.to_string() }
}

fn as_u64(v: &Value, key: &str) -> Result<u64, ConfigError> {
    v.as_u64().ok_or_else(|| invalid(key, "expected a non-negative integer"))
}

fn as_f64(v: &Value, key: &str) -> Result<f64, ConfigError> {
    v.as_f64().ok_or_else(|| invalid(key, "expected a number"))
}

fn as_str<'a>(v: &'a Value, key: &str) -> Result<&'a str, ConfigError> {
    v.as_str().ok_or_else(|| invalid(key, "expected a string"))
}

fn as_bool(v: &Value, key: &str) -> Result<bool, ConfigError> {
    v.as_bool().ok_or_else(|| invalid(key, "expected true or false"))
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text =
            fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_json(&text, &base)
    }

    /// Parses a config; relative paths are resolved against `base`.
    pub fn from_json(text: &str, base: &Path) -> Result<Self, ConfigError> {
        let root: Value = serde_json::from_str(text)?;
        let resolve = |p: &str| if Path::new(p).is_absolute() { PathBuf::from(p) } else { base.join(p) };
        let mut raw_paths = BTreeMap::new();
        let mut path_of = |name: &str, need: bool| -> Result<Option<PathBuf>, ConfigError> {
            let key = format!("paths.{name}");
            let v = if need { Some(required(&root, &key)?) } else { lookup(&root, &key).filter(|v| !v.is_null()) };
            match v {
                Some(v) => {
                    let s = as_str(v, &key)?;
                    raw_paths.insert(name.to_string(), s.to_string());
                    Ok(Some(resolve(s)))
                }
                None => Ok(None),
            }
        };
        let paths = InputPaths {
            vaccination: path_of("vaccination", true)?.expect("required"),
            delivery: path_of("delivery", true)?.expect("required"),
            surveys: path_of("surveys", true)?.expect("required"),
            countries: path_of("countries", true)?.expect("required"),
            trials: path_of("trials", false)?,
            vaccines: path_of("vaccines", false)?,
        };

        let mcmc = ChainConfig {
            n_chains: as_u64(required(&root, "mcmc.chains")?, "mcmc.chains")? as usize,
            n_iter: as_u64(required(&root, "mcmc.iters")?, "mcmc.iters")? as usize,
            n_burnin: as_u64(required(&root, "mcmc.burnin")?, "mcmc.burnin")? as usize,
            seed: as_u64(required(&root, "mcmc.seed")?, "mcmc.seed")?,
            adapt_window: match lookup(&root, "mcmc.adapt_window") {
                Some(v) => as_u64(v, "mcmc.adapt_window")? as usize,
                None => ChainConfig::default().adapt_window,
            },
        };
        mcmc.validate().map_err(|e| invalid("mcmc", &e.to_string()))?;

        let delta = as_u64(required(&root, "model.delta")?, "model.delta")? as i64;
        let accuracy_concentration =
            as_f64(required(&root, "model.accuracy_concentration")?, "model.accuracy_concentration")?;
        if accuracy_concentration <= 0.0 {
            return Err(invalid("model.accuracy_concentration", "must be positive"));
        }
        let out_dir = resolve(as_str(required(&root, "output.dir")?, "output.dir")?);
        let opt_bool = |key: &str| -> Result<bool, ConfigError> {
            lookup(&root, key).filter(|v| !v.is_null()).map(|v| as_bool(v, key)).transpose().map(|b| b.unwrap_or(false))
        };
        let stride = match lookup(&root, "output.stride") {
            Some(v) => as_u64(v, "output.stride")? as i64,
            None => 1,
        };
        if stride < 1 {
            return Err(invalid("output.stride", "must be at least 1"));
        }
        Ok(Self {
            raw_paths,
            paths,
            mcmc,
            delta,
            accuracy_concentration,
            out_dir,
            stride,
            svg: lookup(&root, "output.svg").and_then(Value::as_bool).unwrap_or(true),
            joint: opt_bool("output.joint")?,
            allow_monotonic_repair: opt_bool("model.allow_monotonic_repair")?,
        })
    }

    /// Defaults used by the bundled example configs.
    pub fn example_json(data_dir: &str, out_dir: &str) -> Value {
        json!({
            "paths": {
                "vaccination": format!("{data_dir}/vaccination.csv"),
                "delivery": format!("{data_dir}/delivery.csv"),
                "surveys": format!("{data_dir}/surveys.csv"),
                "countries": format!("{data_dir}/countries.csv"),
                "trials": format!("{data_dir}/trials.csv"),
                "vaccines": format!("{data_dir}/vaccines.csv"),
            },
            "mcmc": { "chains": 4, "iters": 4000, "burnin": 2000, "seed": 20210731 },
            "model": { "delta": DEFAULT_DELTA, "accuracy_concentration": DEFAULT_ACCURACY_CONCENTRATION },
            "output": { "dir": out_dir, "stride": 1, "svg": true }
        })
    }

    fn effective(&self) -> Value {
        json!({
            "paths": self.raw_paths,
            "mcmc": {
                "chains": self.mcmc.n_chains,
                "iters": self.mcmc.n_iter,
                "burnin": self.mcmc.n_burnin,
                "seed": self.mcmc.seed,
                "adapt_window": self.mcmc.adapt_window,
            },
            "model": {
                "delta": self.delta,
                "accuracy_concentration": self.accuracy_concentration,
                "allow_monotonic_repair": self.allow_monotonic_repair,
            },
            "output": { "stride": self.stride, "svg": self.svg, "joint": self.joint },
        })
    }

    fn chain_config(&self, component: &str) -> ChainConfig {
        ChainConfig { seed: derive_seed(self.mcmc.seed, component), ..self.mcmc }
    }

    fn n_draws(&self) -> usize {
        self.mcmc.n_chains * self.mcmc.n_draws()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub outputs: BTreeMap<String, String>,
    pub notes: Value,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub config: Value,
    /// Input name → `{path, sha256}`.
    pub inputs: BTreeMap<String, Value>,
    pub stages: BTreeMap<String, StageRecord>,
}

pub fn sha256_file(path: &Path) -> std::io::Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

impl RunManifest {
    pub fn load(out: &Path) -> Self {
        fs::read_to_string(out.join("manifest.json")).ok().and_then(|t| serde_json::from_str(&t).ok()).unwrap_or_default()
    }

    fn record(config: &Config, stage: Stage, outputs: &[&str], notes: Value) -> Result<(), PipelineError> {
        let out = &config.out_dir;
        let err = stage_err(stage.name());
        let mut m = Self::load(out);
        m.tool = "sero".into();
        m.version = env!("CARGO_PKG_VERSION").into();
        m.config = config.effective();
        let mut rec = StageRecord { notes, ..Default::default() };
        for o in outputs {
            rec.outputs.insert(o.to_string(), sha256_file(&out.join(o)).map_err(&err)?);
        }
        m.stages.insert(stage.name().into(), rec);
        let text = serde_json::to_string_pretty(&m).map_err(stage_err(stage.name()))?;
        fs::write(out.join("manifest.json"), text + "\n").map_err(&err)
    }
}

fn write(out: &Path, rel: &str, content: &str, stage: &'static str) -> Result<(), PipelineError> {
    let path = out.join(rel);
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(stage_err(stage))?;
    }
    fs::write(&path, content).map_err(stage_err(stage))
}

fn store_notes(store: &PosteriorStore) -> Value {
    let diags = store.diagnostics();
    let max_rhat = diags.iter().filter_map(|d| d.rhat).fold(f64::NAN, f64::max);
    let min_ess = diags.iter().filter_map(|d| d.ess).fold(f64::NAN, f64::min);
    let flagged: Vec<&str> = diags
        .iter()
        .filter(|d| d.rhat.is_some_and(|r| r >= RHAT_CEILING) || d.ess.is_some_and(|e| e <= ESS_FLOOR))
        .map(|d| d.name.as_str())
        .collect();
    if !flagged.is_empty() {
        log::warn!("convergence thresholds not met for {flagged:?}");
    }
    json!({ "parameters": diags.len(), "max_rhat": max_rhat, "min_ess": min_ess, "flagged": flagged })
}

// ---------------------------------------------------------------- loading

fn load_corpus(out: &Path, stage: &'static str) -> Result<Corpus, PipelineError> {
    let dir = out.join("corpus");
    let text = fs::read_to_string(dir.join("vaccines.csv"))
        .map_err(|e| PipelineError::Stage { stage, message: format!("run ingest first ({e})") })?;
    let catalog = VaccineCatalog::from_csv(&text).map_err(stage_err(stage))?;
    ingest_corpus(&CorpusPaths::in_dir(&dir), &catalog, IngestOptions::default())
        .map(|(c, _)| c)
        .map_err(stage_err(stage))
}

fn load_store(out: &Path, name: &str, stage: &'static str) -> Result<PosteriorStore, PipelineError> {
    PosteriorStore::load(&out.join(name))
        .map_err(|e| PipelineError::Stage { stage, message: format!("{name} draws unavailable, run fit-{name} first ({e})") })
}

fn load_efficacy(out: &Path, stage: &'static str) -> Result<EfficacyFit, PipelineError> {
    let text = fs::read_to_string(out.join("efficacy/summary.json"))
        .map_err(|e| PipelineError::Stage { stage, message: format!("run fit-efficacy first ({e})") })?;
    serde_json::from_str(&text).map_err(stage_err(stage))
}

struct VaccinationSetup {
    shares: DeliveryShares,
    weights: AllocationWeights,
    contexts: Vec<Vec<Option<RecencyContext>>>,
}

fn vaccination_setup(corpus: &Corpus, delta: i64, stage: &'static str) -> Result<VaccinationSetup, PipelineError> {
    let shares = corpus.delivery_shares().map_err(stage_err(stage))?;
    let weights = build_weights(corpus, &shares);
    let contexts = all_contexts(corpus, &weights, &shares, delta);
    Ok(VaccinationSetup { shares, weights, contexts })
}

/// `(β_V1, β0, β1)` for each of `n` draws, cycling through the stores.
fn vaccination_params(out: &Path, n: usize, stage: &'static str) -> Result<Vec<(f64, f64, f64)>, PipelineError> {
    let alloc = load_store(out, "allocation", stage)?;
    let comp = load_store(out, "completion", stage)?;
    let bv = alloc.require("beta_v1").map_err(stage_err(stage))?;
    let b0 = comp.require("beta0_v2").map_err(stage_err(stage))?;
    let b1 = comp.require("beta1_v2").map_err(stage_err(stage))?;
    Ok((0..n).map(|d| (bv[d % bv.len()], b0[d % b0.len()], b1[d % b1.len()])).collect())
}

/// Effective-count draws shared by the infection fit and prediction.
struct VaccinationContext {
    corpus: Corpus,
    setup: VaccinationSetup,
    sampler: EfficacySampler,
    params: Vec<(f64, f64, f64)>,
}

impl VaccinationContext {
    fn load(config: &Config, stage: &'static str) -> Result<Self, PipelineError> {
        let out = &config.out_dir;
        let corpus = load_corpus(out, stage)?;
        let setup = vaccination_setup(&corpus, config.delta, stage)?;
        let fit = load_efficacy(out, stage)?;
        let sampler = EfficacySampler::new(&fit, &corpus.trials, &corpus.catalog);
        let params = vaccination_params(out, config.n_draws(), stage)?;
        Ok(Self { corpus, setup, sampler, params })
    }

    fn inputs(&self) -> VaccinationInputs<'_> {
        VaccinationInputs {
            corpus: &self.corpus,
            weights: &self.setup.weights,
            shares: &self.setup.shares,
            contexts: &self.setup.contexts,
            efficacy: &self.sampler,
        }
    }

    fn draws(&self, seed: u64) -> VaccinationDraws {
        VaccinationDraws::generate(&self.inputs(), &self.params, derive_seed(seed, "vaccination"))
    }
}

// ---------------------------------------------------------------- stages

/// Confirmed-count files referenced from the countries table.
fn confirmed_files(countries: &Path) -> Result<Vec<(String, PathBuf)>, csv::Error> {
    let base = countries.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut reader = csv::Reader::from_path(countries)?;
    let Some(col) = reader.headers()?.iter().position(|h| h == "confirmed") else { return Ok(Vec::new()) };
    let mut names = std::collections::BTreeSet::new();
    for row in reader.records() {
        if let Some(v) = row?.get(col).filter(|v| !v.is_empty()) {
            names.insert(v.to_string());
        }
    }
    Ok(names.into_iter().map(|n| (n.clone(), base.join(n))).collect())
}

fn stage_ingest(config: &Config) -> Result<(), PipelineError> {
    const S: &str = "ingest";
    let p = &config.paths;
    let catalog = match &p.vaccines {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(stage_err(S))?;
            VaccineCatalog::from_csv(&text).map_err(stage_err(S))?
        }
        None => VaccineCatalog::bundled(),
    };
    let paths = CorpusPaths {
        vaccination: p.vaccination.clone(),
        delivery: p.delivery.clone(),
        trials: p.trials.clone(),
        surveys: p.surveys.clone(),
        countries: p.countries.clone(),
    };
    let opts = IngestOptions { allow_monotonic_repair: config.allow_monotonic_repair };
    let out = &config.out_dir;
    fs::create_dir_all(out).map_err(stage_err(S))?;
    let (corpus, report) = match ingest_corpus(&paths, &catalog, opts) {
        Ok(v) => v,
        Err(e) => {
            if let crate::corpus::IngestError::Rejected(r) = &e {
                let _ = fs::write(out.join("validation.json"), r.to_json() + "\n");
            }
            return Err(stage_err(S)(e));
        }
    };
    write(out, "validation.json", &(report.to_json() + "\n"), S)?;
    write_corpus(&corpus, &out.join("corpus")).map_err(stage_err(S))?;

    let mut m = RunManifest::load(out);
    for (name, raw) in &config.raw_paths {
        let path = match name.as_str() {
            "vaccination" => &p.vaccination,
            "delivery" => &p.delivery,
            "surveys" => &p.surveys,
            "countries" => &p.countries,
            "trials" => p.trials.as_ref().expect("listed"),
            _ => p.vaccines.as_ref().expect("listed"),
        };
        let hash = sha256_file(path).map_err(stage_err(S))?;
        m.inputs.insert(name.clone(), json!({ "path": raw, "sha256": hash }));
    }
    for (name, path) in confirmed_files(&p.countries).map_err(stage_err(S))? {
        let hash = sha256_file(&path).map_err(stage_err(S))?;
        m.inputs.insert(format!("confirmed:{name}"), json!({ "path": name, "sha256": hash }));
    }
    fs::write(out.join("manifest.json"), serde_json::to_string_pretty(&m).map_err(stage_err(S))? + "\n")
        .map_err(stage_err(S))?;

    let notes = json!({
        "countries": corpus.n_countries(),
        "vaccines": corpus.n_vaccines(),
        "reports": corpus.vaccination.iter().map(Vec::len).sum::<usize>(),
        "surveys": corpus.surveys.len(),
        "trials": corpus.trials.len(),
        "issues": report.issues.len(),
        "epoch": corpus.date_of(0).to_string(),
        "last_date": corpus.date_of(corpus.last_day).to_string(),
    });
    RunManifest::record(
        config,
        Stage::Ingest,
        &["validation.json", "corpus/vaccination.csv", "corpus/surveys.csv", "corpus/countries.csv"],
        notes,
    )
}

fn stage_fit_allocation(config: &Config) -> Result<(), PipelineError> {
    const S: &str = "fit-allocation";
    let out = &config.out_dir;
    let corpus = load_corpus(out, S)?;
    let setup = vaccination_setup(&corpus, config.delta, S)?;
    let (model, excluded) = AllocationModel::new(observed_splits(&corpus), setup.weights.clone());
    let witness = check_theorem1(&model.rows, &model.weights);
    let store = run_chains(&model, &config.chain_config("allocation")).map_err(stage_err(S))?;
    store.save(&out.join("allocation")).map_err(stage_err(S))?;
    write(out, "allocation/reports.csv", &diagnostics_csv(&corpus, &setup.weights), S)?;
    let notes = json!({
        "rows": model.rows.len(),
        "excluded_off_support": excluded.len(),
        "witness": witness.map(|(i, j)| format!("{} report {}", corpus.countries[i].code, j + 1)),
        "diagnostics": store_notes(&store),
    });
    RunManifest::record(config, Stage::FitAllocation, &["allocation/manifest.json", "allocation/reports.csv"], notes)
}

fn stage_fit_completion(config: &Config) -> Result<(), PipelineError> {
    const S: &str = "fit-completion";
    let out = &config.out_dir;
    let corpus = load_corpus(out, S)?;
    let setup = vaccination_setup(&corpus, config.delta, S)?;
    let (rows, excluded) = likelihood_rows(&corpus, &setup.contexts);
    let model = CompletionModel { rows };
    let store = run_chains(&model, &config.chain_config("completion")).map_err(stage_err(S))?;
    store.save(&out.join("completion")).map_err(stage_err(S))?;
    write(out, "completion/contexts.csv", &context_csv(&corpus, &setup.contexts), S)?;
    let notes = json!({
        "rows": model.rows.len(),
        "excluded_observed": excluded,
        "share_fallback": setup.contexts.iter().flatten().flatten().filter(|c| c.share_fallback).count(),
        "epoch_proxy": setup.contexts.iter().flatten().flatten().filter(|c| c.epoch_proxy).count(),
        "diagnostics": store_notes(&store),
    });
    RunManifest::record(config, Stage::FitCompletion, &["completion/manifest.json", "completion/contexts.csv"], notes)
}

fn stage_fit_efficacy(config: &Config) -> Result<(), PipelineError> {
    const S: &str = "fit-efficacy";
    let out = &config.out_dir;
    let corpus = load_corpus(out, S)?;
    let fit = fit_efficacy(&corpus.trials, &corpus.catalog).map_err(stage_err(S))?;
    write(out, "efficacy/summary.json", &(serde_json::to_string_pretty(&fit).map_err(stage_err(S))? + "\n"), S)?;
    let notes = json!({
        "full": { "alpha": fit.full.alpha, "beta": fit.full.beta, "at_bound": fit.full.at_bound },
        "partial": { "alpha": fit.partial.alpha, "beta": fit.partial.beta, "at_bound": fit.partial.at_bound },
    });
    RunManifest::record(config, Stage::FitEfficacy, &["efficacy/summary.json"], notes)
}

fn survey_theta_v(draws: &VaccinationDraws, surveys: &[SurveyPoint]) -> Vec<Vec<f64>> {
    (0..draws.n_draws()).map(|d| surveys.iter().map(|s| draws.theta_v(d, s.country, s.date)).collect()).collect()
}

fn build_infection_model(config: &Config, stage: &'static str) -> Result<(InfectionModel, VaccinationContext), PipelineError> {
    let vc = VaccinationContext::load(config, stage)?;
    let surveys = survey_points(&vc.corpus, config.accuracy_concentration).map_err(stage_err(stage))?;
    let covariates = vc.corpus.covariates().map_err(stage_err(stage))?;
    let prior = if config.joint {
        let corpus = vc.corpus.clone();
        let weights = vc.setup.weights.clone();
        let shares = vc.setup.shares.clone();
        let contexts = vc.setup.contexts.clone();
        let sampler = vc.sampler.clone();
        let params = vc.params.clone();
        let points: Vec<(usize, Day)> = surveys.iter().map(|s| (s.country, s.date)).collect();
        ThetaVPrior::Generator(Box::new(move |rng: &mut StreamRng| {
            let inputs = VaccinationInputs {
                corpus: &corpus,
                weights: &weights,
                shares: &shares,
                contexts: &contexts,
                efficacy: &sampler,
            };
            let (bv, b0, b1) = params[rng.random_range(0..params.len())];
            let series = inputs.draw(bv, b0, b1, rng);
            points
                .iter()
                .map(|&(i, t)| {
                    let dates: Vec<Day> = corpus.vaccination[i].iter().map(|r| r.date).collect();
                    theta_v(&dates, &series.m[i], corpus.countries[i].population, t)
                })
                .collect()
        }))
    } else {
        ThetaVPrior::Pool(survey_theta_v(&vc.draws(config.mcmc.seed), &surveys))
    };
    let model = InfectionModel::new(surveys, &vc.corpus, &covariates, prior, RatioPrior::Hierarchical)
        .map_err(stage_err(stage))?;
    Ok((model, vc))
}

fn stage_fit_infection(config: &Config) -> Result<(), PipelineError> {
    const S: &str = "fit-infection";
    let out = &config.out_dir;
    let (model, vc) = build_infection_model(config, S)?;
    let mut store = run_chains(&model, &config.chain_config("infection")).map_err(stage_err(S))?;
    model.add_derived(&mut store).map_err(stage_err(S))?;
    store.save(&out.join("infection")).map_err(stage_err(S))?;
    let mut csv = String::from("survey,country,date,n,positive,theta_c,bound\n");
    for s in &model.surveys {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{:.8},{:.6}",
            s.survey_id,
            vc.corpus.countries[s.country].code,
            vc.corpus.date_of(s.date),
            s.n,
            s.x,
            s.theta_c,
            s.bound
        );
    }
    write(out, "infection/surveys.csv", &csv, S)?;
    let notes = json!({
        "surveys_used": model.surveys.len(),
        "surveys_skipped": vc.corpus.surveys.len() - model.surveys.len(),
        "survey_countries": model.country_codes,
        "theta_v_scheme": if config.joint { "joint" } else { "two-pass" },
        "diagnostics": store_notes(&store),
    });
    RunManifest::record(config, Stage::FitInfection, &["infection/manifest.json", "infection/surveys.csv"], notes)
}

/// Trend grid: every `stride` days from the epoch, always ending on the last day.
pub fn trend_dates(last_day: Day, stride: i64) -> Vec<Day> {
    let mut d: Vec<Day> = (0..=last_day).step_by(stride.max(1) as usize).collect();
    if d.last() != Some(&last_day) {
        d.push(last_day);
    }
    d
}

#[derive(Debug, Clone, Serialize)]
pub struct CountrySummary {
    pub country: String,
    pub population: u64,
    pub survey_country: bool,
    pub theta_c: Vec<f64>,
    pub theta_v: Vec<Summary>,
    pub theta_i: Vec<Summary>,
    pub theta: Vec<Summary>,
}

pub struct Predictions {
    pub dates: Vec<Day>,
    pub countries: Vec<CountrySummary>,
    pub world: WorldTrend,
    pub counters: VaccinationCounters,
    pub random_effects: BTreeMap<String, Value>,
}

fn summarize_columns(draws: &[Vec<f64>], n_dates: usize) -> Vec<Summary> {
    (0..n_dates).map(|t| Summary::of(&draws.iter().map(|d| d[t]).collect::<Vec<_>>())).collect()
}

fn compute_predictions(config: &Config, stage: &'static str) -> Result<Predictions, PipelineError> {
    let out = &config.out_dir;
    let vc = VaccinationContext::load(config, stage)?;
    let corpus = &vc.corpus;
    let infection = load_store(out, "infection", stage)?;
    let surveys = survey_points(corpus, config.accuracy_concentration).map_err(stage_err(stage))?;
    let covariates: Covariates = corpus.covariates().map_err(stage_err(stage))?;
    let model = InfectionModel::new(surveys, corpus, &covariates, ThetaVPrior::Zero, RatioPrior::Hierarchical)
        .map_err(stage_err(stage))?;
    let post = InfectionPosterior::from_store(&infection, &model, corpus.n_countries()).map_err(stage_err(stage))?;
    let vdraws = vc.draws(config.mcmc.seed);
    let n = post.n_draws();
    if vdraws.n_draws() != n {
        return Err(PipelineError::Stage {
            stage,
            message: format!("{} vaccination draws for {n} infection draws", vdraws.n_draws()),
        });
    }

    let dates = trend_dates(corpus.last_day, config.stride);
    let horizon = *dates.last().expect("non-empty grid");
    let key = StreamKey::named(derive_seed(config.mcmc.seed, "predict"), "theta-i");
    let mut world = WorldAccumulator::new(n, dates.len());
    let mut countries = Vec::with_capacity(corpus.n_countries());
    for (i, c) in corpus.countries.iter().enumerate() {
        let theta_c: Vec<f64> =
            dates.iter().map(|&t| corpus.confirmed_ratio(i, t)).collect::<Result<_, _>>().map_err(stage_err(stage))?;
        let theta_c_h = corpus.confirmed_ratio(i, horizon).map_err(stage_err(stage))?;
        let theta_i = predict_theta_i(&post, i, &covariates, &theta_c, theta_c_h, &key);
        let theta_v: Vec<Vec<f64>> =
            (0..n).map(|d| dates.iter().map(|&t| vdraws.theta_v(d, i, t)).collect()).collect();
        let draws = CountryDraws { code: c.code.clone(), population: c.population as f64, theta_v, theta_i };
        world.add(&draws).map_err(stage_err(stage))?;
        let theta: Vec<Vec<f64>> = (0..n).map(|d| (0..dates.len()).map(|t| draws.theta(d, t)).collect()).collect();
        countries.push(CountrySummary {
            country: c.code.clone(),
            population: c.population,
            survey_country: post.country_mean[i].is_some(),
            theta_c,
            theta_v: summarize_columns(&draws.theta_v, dates.len()),
            theta_i: summarize_columns(&draws.theta_i, dates.len()),
            theta: summarize_columns(&theta, dates.len()),
        });
    }
    let mut random_effects = BTreeMap::new();
    for code in &model.country_codes {
        if let Some(d) = infection.diagnostic(&format!("beta_{code}")) {
            random_effects.insert(code.clone(), json!({ "mean": d.mean, "lo": d.q025, "hi": d.q975 }));
        }
    }
    Ok(Predictions { world: world.finish(dates.clone()), dates, countries, counters: vdraws.counters, random_effects })
}

fn summary_cells(s: &Summary) -> String {
    format!("{:.6},{:.6},{:.6}", s.mean, s.lo, s.hi)
}

const TREND_HEADER: &str =
    "theta_v_mean,theta_v_lo,theta_v_hi,theta_i_mean,theta_i_lo,theta_i_hi,theta_mean,theta_lo,theta_hi";

fn write_predict_outputs(config: &Config, corpus_dates: &Corpus, p: &Predictions) -> Result<(), PipelineError> {
    const S: &str = "predict";
    let out = &config.out_dir;
    let mut csv = format!("country,date,theta_c,{TREND_HEADER}\n");
    for c in &p.countries {
        for (t, &d) in p.dates.iter().enumerate() {
            let _ = writeln!(
                csv,
                "{},{},{:.6},{},{},{}",
                c.country,
                corpus_dates.date_of(d),
                c.theta_c[t],
                summary_cells(&c.theta_v[t]),
                summary_cells(&c.theta_i[t]),
                summary_cells(&c.theta[t])
            );
        }
    }
    write(out, "country_trends.csv", &csv, S)?;
    let last = p.dates.len() - 1;
    let horizon = corpus_dates.date_of(p.dates[last]).to_string();
    let countries: Vec<Value> = p
        .countries
        .iter()
        .map(|c| {
            json!({
                "country": c.country,
                "population": c.population,
                "survey_country": c.survey_country,
                "random_effect": p.random_effects.get(&c.country),
                "theta_c": c.theta_c[last],
                "theta_v": c.theta_v[last],
                "theta_i": c.theta_i[last],
                "theta": c.theta[last],
            })
        })
        .collect();
    let summary = json!({ "horizon": horizon, "countries": countries, "vaccination_counters": p.counters });
    write(out, "country_summary.json", &(serde_json::to_string_pretty(&summary).map_err(stage_err(S))? + "\n"), S)?;
    let notes = json!({ "dates": p.dates.len(), "draws": p.world.theta.len(), "vaccination_counters": p.counters });
    RunManifest::record(config, Stage::Predict, &["country_trends.csv", "country_summary.json"], notes)
}

fn write_aggregate_outputs(config: &Config, corpus: &Corpus, p: &Predictions) -> Result<(), PipelineError> {
    const S: &str = "aggregate";
    let out = &config.out_dir;
    let w = &p.world;
    let mut csv = format!("date,{TREND_HEADER}\n");
    for (t, &d) in w.dates.iter().enumerate() {
        let _ = writeln!(
            csv,
            "{},{},{},{}",
            corpus.date_of(d),
            summary_cells(&w.summary_v[t]),
            summary_cells(&w.summary_i[t]),
            summary_cells(&w.summary[t])
        );
    }
    write(out, "trend.csv", &csv, S)?;
    let horizon = *p.dates.last().expect("non-empty grid");
    let rows: Vec<(String, u64, Vec<f64>)> = p
        .countries
        .iter()
        .map(|c| (c.country.clone(), c.population, c.theta.iter().map(|s| s.mean).collect()))
        .collect();
    let records = treemap_export(horizon, &p.dates, &rows).map_err(stage_err(S))?;
    let mut tm = String::from("country,population,theta_mean\n");
    for r in &records {
        let _ = writeln!(tm, "{},{},{:.6}", r.country, r.population, r.theta_mean);
    }
    write(out, "treemap.csv", &tm, S)?;
    let last = w.dates.len() - 1;
    let notes = json!({
        "date": corpus.date_of(horizon).to_string(),
        "theta_v": w.summary_v[last],
        "theta_i": w.summary_i[last],
        "theta": w.summary[last],
    });
    RunManifest::record(config, Stage::Aggregate, &["trend.csv", "treemap.csv"], notes)
}

fn stage_report(config: &Config) -> Result<(), PipelineError> {
    const S: &str = "report";
    let out = &config.out_dir;
    let text = fs::read_to_string(out.join("trend.csv"))
        .map_err(|e| PipelineError::Stage { stage: S, message: format!("run aggregate first ({e})") })?;
    let mut labels = Vec::new();
    let mut cols: [Vec<Summary>; 3] = Default::default();
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let num = |i: usize| f[i].parse::<f64>().map_err(stage_err(S));
        labels.push(f[0].to_string());
        for (q, col) in cols.iter_mut().enumerate() {
            col.push(Summary { mean: num(1 + 3 * q)?, lo: num(2 + 3 * q)?, hi: num(3 + 3 * q)? });
        }
    }
    let mut outputs = Vec::new();
    if config.svg {
        let titles = [
            ("trend_theta_v.svg", "World seroprevalence from vaccination"),
            ("trend_theta_i.svg", "World seroprevalence from infection"),
            ("trend_theta.svg", "World seroprevalence"),
        ];
        for ((file, title), series) in titles.iter().zip(&cols) {
            write(out, file, &svg::trend_chart(title, &labels, series), S)?;
            outputs.push(*file);
        }
    }
    let fit = load_efficacy(out, S)?;
    let mut card = String::from("# Model card\n\n");
    let _ = writeln!(
        card,
        "Efficacy hyperparameters (plug-in empirical Bayes, uncertainty not propagated): \
         full alpha {:.3}, beta {:.3}; partial alpha {:.3}, beta {:.3}.\n",
        fit.full.alpha, fit.full.beta, fit.partial.alpha, fit.partial.beta
    );
    card.push_str(
        "Test accuracy priors: Beta(TP+1, FN+1) for sensitivity and Beta(TN+1, FP+1) for specificity \
         from validation counts; a fixed value v in (0, 1) uses Beta(c*v, c*(1-v)), and a fixed value \
         of 0 or 1 is treated as exact.\n\n",
    );
    let _ = writeln!(card, "Accuracy concentration c = {}.\n", config.accuracy_concentration);
    let _ = writeln!(
        card,
        "Scale priors: sigma ~ Uniform(0, {SCALE_LIMIT}), tau ~ Uniform(0, {TAU_LIMIT}). Prediction draws one log \
         ratio per country and posterior draw, truncated at the confirmed ratio on the last trend date.\n"
    );
    let _ = writeln!(
        card,
        "Vaccination seroprevalence enters the infection fit as a per-iteration prior draw ({} scheme).",
        if config.joint { "joint" } else { "two-pass" }
    );
    write(out, "model_card.md", &card, S)?;
    outputs.push("model_card.md");
    RunManifest::record(config, Stage::Report, &outputs, json!({ "svg": config.svg }))
}

/// Runs one stage against the configured output directory.
pub fn run_stage(stage: Stage, config: &Config) -> Result<(), PipelineError> {
    log::info!("stage {}", stage.name());
    match stage {
        Stage::Ingest => stage_ingest(config),
        Stage::FitAllocation => stage_fit_allocation(config),
        Stage::FitCompletion => stage_fit_completion(config),
        Stage::FitEfficacy => stage_fit_efficacy(config),
        Stage::FitInfection => stage_fit_infection(config),
        Stage::Predict => {
            let p = compute_predictions(config, "predict")?;
            write_predict_outputs(config, &load_corpus(&config.out_dir, "predict")?, &p)
        }
        Stage::Aggregate => {
            let p = compute_predictions(config, "aggregate")?;
            write_aggregate_outputs(config, &load_corpus(&config.out_dir, "aggregate")?, &p)
        }
        Stage::Report => stage_report(config),
    }
}

/// All stages in order; predictions are computed once for predict and
/// aggregate.
pub fn run_pipeline(config: &Config) -> Result<(), PipelineError> {
    for stage in [Stage::Ingest, Stage::FitAllocation, Stage::FitCompletion, Stage::FitEfficacy, Stage::FitInfection] {
        run_stage(stage, config)?;
    }
    log::info!("stage predict");
    let p = compute_predictions(config, "predict")?;
    let corpus = load_corpus(&config.out_dir, "predict")?;
    write_predict_outputs(config, &corpus, &p)?;
    log::info!("stage aggregate");
    write_aggregate_outputs(config, &corpus, &p)?;
    run_stage(Stage::Report, config)
}
