//! Cumulative fully-vaccinated counts: a Poisson regression on the number of
//! outstanding doses driven by recent vaccination speed, and the per-vaccine
//! split of the fully vaccinated.

use crate::allocation::{AllocationWeights, RowId};
use crate::corpus::{Corpus, Day, DeliveryShares, VaccineCatalog};
use crate::mcmc::{Model, ParamSpec, Support};
use crate::rng::{multinomial, StreamRng};
use crate::special::{poisson_ln_pmf, round_half_even};
use rand::Rng;
use rand_distr::{Distribution, Poisson};
use std::fmt::Write as _;

pub const DEFAULT_DELTA: i64 = 21;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CompletionError {
    #[error("first report has no earlier report")]
    NoEarlierReport,
    #[error("window between reports has zero length")]
    ZeroWindow,
    #[error("no dose weight in the window and no delivered vaccine in use")]
    DegenerateWeights,
    #[error("type-{level} weight is positive but W{level} is zero")]
    UndefinedLogArgument { level: u8 },
}

/// Smallest index `j' < j` minimizing `|d_j − d_j' − δ|` (0-based indices).
pub fn closest_report_index(dates: &[Day], j: usize, delta: i64) -> Result<usize, CompletionError> {
    if j == 0 {
        return Err(CompletionError::NoEarlierReport);
    }
    let mut best = 0;
    let mut best_gap = i64::MAX;
    for (jp, &d) in dates[..j].iter().enumerate() {
        let gap = (dates[j] - d - delta).abs();
        if gap < best_gap {
            best = jp;
            best_gap = gap;
        }
    }
    Ok(best)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecencyContext {
    pub row: RowId,
    /// `None` for a first report, whose speed is measured from rollout start.
    pub jstar: Option<usize>,
    /// Recent doses per day.
    pub z: f64,
    pub wstar: Vec<f64>,
    pub w2: f64,
    pub w3: f64,
    pub q: [f64; 3],
    /// w* came from delivery shares because the window had no dose weight.
    pub share_fallback: bool,
    /// First report without a known rollout start; speed measured from the
    /// corpus epoch. Such rows are imputed but never enter the likelihood.
    pub epoch_proxy: bool,
}

impl RecencyContext {
    /// Regressor used by the propriety check: q-weighted log W.
    pub fn regressor(&self) -> Option<f64> {
        let (q2, q3) = (self.q[1], self.q[2]);
        if q2 + q3 <= 0.0 || (q2 > 0.0 && self.w2 <= 0.0) || (q3 > 0.0 && self.w3 <= 0.0) {
            return None;
        }
        let l2 = if q2 > 0.0 { q2 * self.w2.ln() } else { 0.0 };
        let l3 = if q3 > 0.0 { q3 * self.w3.ln() } else { 0.0 };
        Some(l2 + l3)
    }
}

pub fn recency_context(
    corpus: &Corpus,
    (i, j): RowId,
    weights: &AllocationWeights,
    shares: &DeliveryShares,
    delta: i64,
) -> Result<RecencyContext, CompletionError> {
    let reps = &corpus.vaccination[i];
    let dates: Vec<Day> = reps.iter().map(|r| r.date).collect();
    let (jstar, z, epoch_proxy, window_start) = if j == 0 {
        let (start, proxy) = match corpus.countries[i].rollout_start {
            Some(s) => (s, false),
            None => (0, true),
        };
        let days = (dates[0] - start).max(1);
        (None, reps[0].cum_doses as f64 / days as f64, proxy, 0)
    } else {
        let js = closest_report_index(&dates, j, delta)?;
        let days = dates[j] - dates[js];
        if days == 0 {
            return Err(CompletionError::ZeroWindow);
        }
        let dx = reps[j].cum_doses as f64 - reps[js].cum_doses as f64;
        (Some(js), dx / days as f64, false, js)
    };

    let k_max = corpus.n_vaccines();
    let mut wsum = vec![0.0; k_max];
    for row in &weights.dw[i][window_start..=j] {
        for (a, d) in wsum.iter_mut().zip(row) {
            *a += d;
        }
    }
    let mut total: f64 = wsum.iter().sum();
    let mut share_fallback = false;
    if total <= 0.0 {
        let s = shares.row(i);
        wsum = (0..k_max).map(|k| if reps[j].uses(k) { s[k] } else { 0.0 }).collect();
        total = wsum.iter().sum();
        share_fallback = true;
        if total <= 0.0 {
            return Err(CompletionError::DegenerateWeights);
        }
    }
    let wstar: Vec<f64> = wsum.iter().map(|w| w / total).collect();
    Ok(context_from_wstar((i, j), jstar, z, wstar, &corpus.catalog, share_fallback, epoch_proxy))
}

/// Assembles W2, W3 and q from normalized window weights.
pub fn context_from_wstar(
    row: RowId,
    jstar: Option<usize>,
    z: f64,
    wstar: Vec<f64>,
    catalog: &VaccineCatalog,
    share_fallback: bool,
    epoch_proxy: bool,
) -> RecencyContext {
    let mut q = [0.0; 3];
    let (mut t2, mut t3) = (0.0, 0.0);
    for (k, &w) in wstar.iter().enumerate() {
        let vtype = catalog.doses_required(k);
        q[(vtype - 1) as usize] += w;
        let tk = catalog.interval(k) as f64;
        match vtype {
            2 => t2 += w * tk,
            3 => t3 += w * tk,
            _ => {}
        }
    }
    RecencyContext { row, jstar, z, wstar, w2: z * t2, w3: z * t3, q, share_fallback, epoch_proxy }
}

/// Poisson mean of `2(X − Y)`.
pub fn completion_mean(x: u64, ctx: &RecencyContext, beta0: f64, beta1: f64) -> Result<f64, CompletionError> {
    let x = x as f64;
    let [_, q2, q3] = ctx.q;
    let mut lambda = 0.0;
    if q2 > 0.0 {
        if ctx.w2 <= 0.0 {
            return Err(CompletionError::UndefinedLogArgument { level: 2 });
        }
        lambda += q2 * (x + (beta0 + beta1 * ctx.w2.ln()).exp());
    }
    if q3 > 0.0 {
        if ctx.w3 <= 0.0 {
            return Err(CompletionError::UndefinedLogArgument { level: 3 });
        }
        lambda += q3 * (4.0 / 3.0 * x + 2.0 / 3.0 * (beta0 + beta1 * ctx.w3.ln()).exp());
    }
    Ok(lambda)
}

/// A report with observed Y entering the likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRow {
    pub x: u64,
    /// `2(X − Y)`
    pub count: u64,
    pub ctx: RecencyContext,
}

pub fn completion_loglik(rows: &[CompletionRow], beta0: f64, beta1: f64) -> f64 {
    let mut total = 0.0;
    for r in rows {
        match completion_mean(r.x, &r.ctx, beta0, beta1) {
            Ok(lambda) => total += poisson_ln_pmf(r.count, lambda),
            Err(_) => return f64::NEG_INFINITY,
        }
    }
    total
}

/// Two contributing rows with distinct regressors, the condition for a
/// proper flat-prior posterior. Returns the witness pair.
pub fn check_theorem2(rows: &[CompletionRow]) -> Option<(RowId, RowId)> {
    let mut first: Option<(RowId, f64)> = None;
    for r in rows {
        let Some(x) = r.ctx.regressor() else { continue };
        match first {
            None => first = Some((r.ctx.row, x)),
            Some((row, x0)) if x != x0 => return Some((row, r.ctx.row)),
            Some(_) => {}
        }
    }
    None
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ImputeOutcome {
    pub y: u64,
    /// Half-count rounded to even.
    pub rounded: bool,
    /// `D/2` exceeded X, Y clamped to 0.
    pub clamped: bool,
}

/// Draws `D ~ Poisson(λ)` and returns `Y = clamp(X − round(D/2), 0, X)`.
pub fn impute_fully(
    x: u64,
    ctx: &RecencyContext,
    beta0: f64,
    beta1: f64,
    rng: &mut StreamRng,
) -> Result<ImputeOutcome, CompletionError> {
    let lambda = completion_mean(x, ctx, beta0, beta1)?;
    let d = if lambda > 0.0 {
        // means beyond the sampler's range are far above any dose count
        Poisson::new(lambda).map(|p| p.sample(rng)).unwrap_or(lambda)
    } else {
        0.0
    };
    Ok(fully_from_draw(x, d))
}

/// Rounding and clamping applied to a Poisson draw `d` of `2(X − Y)`.
pub fn fully_from_draw(x: u64, d: f64) -> ImputeOutcome {
    let half = d / 2.0;
    let outstanding = round_half_even(half);
    let rounded = half.fract() != 0.0;
    if outstanding > x as f64 {
        log::debug!("outstanding doses {outstanding} exceed {x}; fully vaccinated clamped to 0");
        return ImputeOutcome { y: 0, rounded, clamped: true };
    }
    ImputeOutcome { y: x - outstanding as u64, rounded, clamped: false }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FullySplit {
    /// `Y_{i,j,k}` for every vaccine.
    pub per_vaccine: Vec<u64>,
    /// Y was below the type-1 doses; the remainder was clamped to 0 and the
    /// split sums to the type-1 doses instead of Y.
    pub infeasible: bool,
    /// All lagged doses were zero; current doses were used as weights.
    pub zero_lagged: bool,
}

/// Splits `Y` over vaccines: type-1 vaccines take their doses, the remainder
/// is multinomial with probabilities proportional to lagged doses.
pub fn split_fully_by_vaccine(
    y: u64,
    doses_now: &[u64],
    lagged: &[u64],
    catalog: &VaccineCatalog,
    rng: &mut StreamRng,
) -> FullySplit {
    let k_max = doses_now.len();
    let mut per_vaccine = vec![0u64; k_max];
    let mut type1 = 0u64;
    for k in catalog.of_type(1) {
        per_vaccine[k] = doses_now[k];
        type1 += doses_now[k];
    }
    let infeasible = y < type1;
    let remaining = y.saturating_sub(type1);
    if infeasible {
        log::debug!("fully vaccinated {y} below single-dose total {type1}");
    }
    let mut zero_lagged = false;
    if remaining > 0 {
        let multi = |v: &[u64]| -> Vec<f64> {
            (0..k_max).map(|k| if catalog.doses_required(k) > 1 { v[k] as f64 } else { 0.0 }).collect()
        };
        let mut weights = multi(lagged);
        if weights.iter().sum::<f64>() <= 0.0 {
            zero_lagged = true;
            weights = multi(doses_now);
        }
        if weights.iter().sum::<f64>() > 0.0 {
            for (slot, n) in per_vaccine.iter_mut().zip(multinomial(remaining, &weights, rng)) {
                *slot += n;
            }
        }
    }
    FullySplit { per_vaccine, infeasible, zero_lagged }
}

/// Lagged doses `X_{i, j*(j, T_k), k}` for each multi-dose vaccine; zero when
/// the report has no predecessor.
pub fn lagged_doses(dates: &[Day], j: usize, splits: &[Vec<u64>], catalog: &VaccineCatalog) -> Vec<u64> {
    let k_max = catalog.len();
    let mut out = vec![0u64; k_max];
    if j == 0 {
        return out;
    }
    for (k, slot) in out.iter_mut().enumerate() {
        if catalog.doses_required(k) > 1 {
            let js = closest_report_index(dates, j, catalog.interval(k)).expect("j > 0");
            *slot = splits[js][k];
        }
    }
    out
}

/// Flat-prior posterior of `(β0, β1)`, updated as one bivariate block.
#[derive(Debug, Clone)]
pub struct CompletionModel {
    pub rows: Vec<CompletionRow>,
}

impl Model for CompletionModel {
    type Latent = ();

    fn params(&self) -> Vec<ParamSpec> {
        vec![ParamSpec::new("beta0_v2", Support::Real), ParamSpec::new("beta1_v2", Support::Real)]
    }

    fn blocks(&self) -> Vec<Vec<usize>> {
        vec![vec![0, 1]]
    }

    fn initial_state(&self, rng: &mut StreamRng) -> Vec<f64> {
        vec![rng.random_range(-1.0..0.0), rng.random_range(0.8..1.2)]
    }

    fn initial_latent(&self, _: &mut StreamRng) {}

    fn log_density(&self, x: &[f64], _: &()) -> f64 {
        completion_loglik(&self.rows, x[0], x[1])
    }

    fn check_propriety(&self) -> Result<(), String> {
        match check_theorem2(&self.rows) {
            Some(_) => Ok(()),
            None => Err(format!(
                "completion: {} observed rows but fewer than two distinct log-W regressors",
                self.rows.len()
            )),
        }
    }
}

/// Contexts for every report; `None` where undefined (logged).
pub fn all_contexts(
    corpus: &Corpus,
    weights: &AllocationWeights,
    shares: &DeliveryShares,
    delta: i64,
) -> Vec<Vec<Option<RecencyContext>>> {
    corpus
        .vaccination
        .iter()
        .enumerate()
        .map(|(i, reps)| {
            (0..reps.len())
                .map(|j| match recency_context(corpus, (i, j), weights, shares, delta) {
                    Ok(c) => Some(c),
                    Err(e) => {
                        log::warn!("{} report {}: no recency context: {e}", corpus.countries[i].code, j + 1);
                        None
                    }
                })
                .collect()
        })
        .collect()
}

/// Likelihood rows: reports with observed Y, a context not built from the
/// epoch proxy, and a mean that depends on β. Returns the rows and the
/// number of excluded observed reports.
pub fn likelihood_rows(corpus: &Corpus, contexts: &[Vec<Option<RecencyContext>>]) -> (Vec<CompletionRow>, usize) {
    let mut rows = Vec::new();
    let mut excluded = 0;
    for (i, reps) in corpus.vaccination.iter().enumerate() {
        for (j, r) in reps.iter().enumerate() {
            let Some(y) = r.cum_fully else { continue };
            let count = 2 * (r.cum_doses - y);
            match &contexts[i][j] {
                Some(ctx) if !ctx.epoch_proxy && ctx.regressor().is_some() => {
                    rows.push(CompletionRow { x: r.cum_doses, count, ctx: ctx.clone() })
                }
                Some(ctx) if ctx.q[1] + ctx.q[2] <= 0.0 && count == 0 => {}
                _ => excluded += 1,
            }
        }
    }
    if excluded > 0 {
        log::warn!("{excluded} observed fully-vaccinated report(s) excluded from the completion likelihood");
    }
    (rows, excluded)
}

/// `country,report,jstar,z,w2,w3,q1,q2,q3,share_fallback,epoch_proxy`
pub fn context_csv(corpus: &Corpus, contexts: &[Vec<Option<RecencyContext>>]) -> String {
    let mut s = String::from("country,report,jstar,z,w2,w3,q1,q2,q3,share_fallback,epoch_proxy\n");
    for (i, row) in contexts.iter().enumerate() {
        for (j, ctx) in row.iter().enumerate() {
            let code = &corpus.countries[i].code;
            match ctx {
                Some(c) => {
                    let js = c.jstar.map(|v| (v + 1).to_string()).unwrap_or_default();
                    let _ = writeln!(
                        s,
                        "{code},{},{js},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{},{}",
                        j + 1,
                        c.z,
                        c.w2,
                        c.w3,
                        c.q[0],
                        c.q[1],
                        c.q[2],
                        c.share_fallback,
                        c.epoch_proxy
                    );
                }
                None => {
                    let _ = writeln!(s, "{code},{},,,,,,,,,", j + 1);
                }
            }
        }
    }
    s
}
