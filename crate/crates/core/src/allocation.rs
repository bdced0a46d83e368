//! Per-vaccine split of cumulative doses: a multinomial regression whose
//! usage probabilities are powers of delivery-weighted dose increments.

use crate::corpus::{Corpus, DeliveryShares};
use crate::mcmc::{Model, ParamSpec, Support};
use crate::rng::{multinomial, StreamRng};
use crate::special::ln_factorial;
use std::fmt::Write as _;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AllocationError {
    #[error("empty support: no vaccine has positive weight")]
    EmptySupport,
}

/// Report coordinates `(country, report index)`, both 0-based.
pub type RowId = (usize, usize);

#[derive(Debug, Clone, PartialEq)]
pub struct AllocationWeights {
    /// `dw[i][j][k]`
    pub dw: Vec<Vec<Vec<f64>>>,
    /// `w[i][j][k]`, running sum of `dw` over reports.
    pub w: Vec<Vec<Vec<f64>>>,
}

impl AllocationWeights {
    pub fn row(&self, (i, j): RowId) -> &[f64] {
        &self.w[i][j]
    }

    pub fn support(&self, (i, j): RowId) -> Vec<usize> {
        self.w[i][j].iter().enumerate().filter(|(_, &w)| w > 0.0).map(|(k, _)| k).collect()
    }
}

/// Weights from delivery shares and dose increments restricted to the
/// vaccines in use at each report.
pub fn build_weights(corpus: &Corpus, shares: &DeliveryShares) -> AllocationWeights {
    let k_max = corpus.n_vaccines();
    let mut dw = Vec::with_capacity(corpus.n_countries());
    let mut w = Vec::with_capacity(corpus.n_countries());
    for (i, reports) in corpus.vaccination.iter().enumerate() {
        let s = shares.row(i);
        let mut prev_x = 0u64;
        let mut running = vec![0.0; k_max];
        let mut dw_i = Vec::with_capacity(reports.len());
        let mut w_i = Vec::with_capacity(reports.len());
        for r in reports {
            let dx = r.cum_doses.saturating_sub(prev_x) as f64;
            prev_x = r.cum_doses;
            let row: Vec<f64> = (0..k_max).map(|k| if r.uses(k) { s[k] * dx } else { 0.0 }).collect();
            for (acc, d) in running.iter_mut().zip(&row) {
                *acc += d;
            }
            dw_i.push(row);
            w_i.push(running.clone());
        }
        dw.push(dw_i);
        w.push(w_i);
    }
    AllocationWeights { dw, w }
}

/// `p_k ∝ w_k^β` on `{k : w_k > 0}`, zero elsewhere.
pub fn allocation_probs(w: &[f64], beta: f64) -> Result<Vec<f64>, AllocationError> {
    let logits: Vec<Option<f64>> = w.iter().map(|&v| (v > 0.0).then(|| beta * v.ln())).collect();
    let max = logits.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(AllocationError::EmptySupport);
    }
    let unnorm: Vec<f64> = logits.iter().map(|l| l.map_or(0.0, |l| (l - max).exp())).collect();
    let total: f64 = unnorm.iter().sum();
    Ok(unnorm.into_iter().map(|u| u / total).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservedSplit {
    pub row: RowId,
    pub counts: Vec<u64>,
}

/// Reports that carry an observed per-vaccine split.
pub fn observed_splits(corpus: &Corpus) -> Vec<ObservedSplit> {
    corpus
        .vaccination
        .iter()
        .enumerate()
        .flat_map(|(i, reps)| {
            reps.iter().enumerate().filter_map(move |(j, r)| {
                r.per_vaccine_doses.as_ref().map(|c| ObservedSplit { row: (i, j), counts: c.clone() })
            })
        })
        .collect()
}

/// True when a positive observed count falls outside the weight support.
pub fn is_off_support(split: &ObservedSplit, weights: &AllocationWeights) -> bool {
    let w = weights.row(split.row);
    split.counts.iter().zip(w).any(|(&x, &w)| x > 0 && w <= 0.0)
}

fn multinomial_ln_pmf(counts: &[u64], probs: &[f64]) -> f64 {
    let n: u64 = counts.iter().sum();
    let mut acc = ln_factorial(n);
    for (&x, &p) in counts.iter().zip(probs) {
        if x > 0 {
            if p <= 0.0 {
                return f64::NEG_INFINITY;
            }
            acc += x as f64 * p.ln() - ln_factorial(x);
        }
    }
    acc
}

/// Sum of multinomial log-likelihoods of the observed splits. Rows with a
/// positive count off the support contribute −∞.
pub fn allocation_loglik(rows: &[ObservedSplit], weights: &AllocationWeights, beta: f64) -> f64 {
    let mut total = 0.0;
    for r in rows {
        match allocation_probs(weights.row(r.row), beta) {
            Ok(p) => total += multinomial_ln_pmf(&r.counts, &p),
            Err(_) if r.counts.iter().all(|&x| x == 0) => {}
            Err(_) => return f64::NEG_INFINITY,
        }
    }
    total
}

/// Returns a row with at least two positive on-support counts, the condition
/// under which the flat-prior posterior of β is proper.
pub fn check_theorem1(rows: &[ObservedSplit], weights: &AllocationWeights) -> Option<RowId> {
    rows.iter()
        .find(|r| {
            let w = weights.row(r.row);
            r.counts.iter().zip(w).filter(|(&x, &w)| x > 0 && w > 0.0).count() >= 2
        })
        .map(|r| r.row)
}

/// Posterior-predictive split of `total` doses over the weight support.
pub fn impute_doses(total: u64, w: &[f64], beta: f64, rng: &mut StreamRng) -> Result<Vec<u64>, AllocationError> {
    let p = allocation_probs(w, beta)?;
    Ok(multinomial(total, &p, rng))
}

/// Flat-prior posterior of β over the usable observed splits.
#[derive(Debug, Clone)]
pub struct AllocationModel {
    pub rows: Vec<ObservedSplit>,
    pub weights: AllocationWeights,
}

impl AllocationModel {
    /// Keeps only on-support rows; off-support rows are logged and returned.
    pub fn new(rows: Vec<ObservedSplit>, weights: AllocationWeights) -> (Self, Vec<RowId>) {
        let (bad, good): (Vec<_>, Vec<_>) = rows.into_iter().partition(|r| is_off_support(r, &weights));
        for r in &bad {
            log::warn!("report {:?}: observed doses for vaccines outside the weight support, excluded", r.row);
        }
        let excluded = bad.into_iter().map(|r| r.row).collect();
        (Self { rows: good, weights }, excluded)
    }
}

impl Model for AllocationModel {
    type Latent = ();

    fn params(&self) -> Vec<ParamSpec> {
        vec![ParamSpec::new("beta_v1", Support::Real)]
    }

    fn initial_state(&self, rng: &mut StreamRng) -> Vec<f64> {
        use rand::Rng;
        vec![rng.random_range(0.5..1.5)]
    }

    fn initial_latent(&self, _: &mut StreamRng) {}

    fn log_density(&self, x: &[f64], _: &()) -> f64 {
        allocation_loglik(&self.rows, &self.weights, x[0])
    }

    fn check_propriety(&self) -> Result<(), String> {
        match check_theorem1(&self.rows, &self.weights) {
            Some(_) => Ok(()),
            None => Err(format!(
                "allocation: none of {} observed splits has two positive on-support counts",
                self.rows.len()
            )),
        }
    }
}

/// Cumulative per-vaccine doses for every report under one β draw. Observed
/// splits are kept; the rest are imputed. Returns the splits and the number
/// of (report, vaccine) cells whose imputed count fell below the previous
/// report's count.
pub fn impute_all(
    corpus: &Corpus,
    weights: &AllocationWeights,
    shares: &DeliveryShares,
    beta: f64,
    rng: &mut StreamRng,
) -> (Vec<Vec<Vec<u64>>>, usize) {
    let mut non_monotone = 0;
    let mut out = Vec::with_capacity(corpus.n_countries());
    for (i, reps) in corpus.vaccination.iter().enumerate() {
        let mut rows: Vec<Vec<u64>> = Vec::with_capacity(reps.len());
        for (j, r) in reps.iter().enumerate() {
            let split = match &r.per_vaccine_doses {
                Some(c) => c.clone(),
                None => match impute_doses(r.cum_doses, weights.row((i, j)), beta, rng) {
                    Ok(v) => v,
                    Err(AllocationError::EmptySupport) => {
                        // nothing delivered for the listed vaccines: fall back to delivery shares
                        let p = fallback_probs(shares.row(i), &r.vaccines_in_use);
                        multinomial(r.cum_doses, &p, rng)
                    }
                },
            };
            if r.per_vaccine_doses.is_none() {
                if let Some(prev) = rows.last() {
                    non_monotone += split.iter().zip(prev).filter(|(a, b)| a < b).count();
                }
            }
            rows.push(split);
        }
        out.push(rows);
    }
    (out, non_monotone)
}

fn fallback_probs(shares: &[f64], in_use: &[usize]) -> Vec<f64> {
    let restricted: Vec<f64> =
        shares.iter().enumerate().map(|(k, &s)| if in_use.contains(&k) { s } else { 0.0 }).collect();
    if restricted.iter().sum::<f64>() > 0.0 {
        restricted
    } else if !in_use.is_empty() {
        (0..shares.len()).map(|k| if in_use.contains(&k) { 1.0 } else { 0.0 }).collect()
    } else {
        shares.to_vec()
    }
}

/// `country,report,support_size,observed,off_support` per report.
pub fn diagnostics_csv(corpus: &Corpus, weights: &AllocationWeights) -> String {
    let mut s = String::from("country,report,support_size,observed,off_support\n");
    for (i, reps) in corpus.vaccination.iter().enumerate() {
        for (j, r) in reps.iter().enumerate() {
            let support = weights.support((i, j)).len();
            let off = r
                .per_vaccine_doses
                .as_ref()
                .map(|c| is_off_support(&ObservedSplit { row: (i, j), counts: c.clone() }, weights))
                .unwrap_or(false);
            let _ = writeln!(
                s,
                "{},{},{},{},{}",
                corpus.countries[i].code,
                j + 1,
                support,
                r.per_vaccine_doses.is_some(),
                off
            );
        }
    }
    s
}
