//! Effectively vaccinated counts and vaccination seroprevalence.
//!
//! Per vaccine, fully vaccinated people contribute `Binomial(Y_k, E_f)` and
//! the remaining first doses `Binomial((2/d)(X_k − d Y_k), E_p)`. A
//! posterior draw chains allocation imputation, completion imputation, the
//! per-vaccine split of fully vaccinated counts and one efficacy draw.

use crate::allocation::{impute_all, AllocationWeights};
use crate::completion::{impute_fully, lagged_doses, split_fully_by_vaccine, RecencyContext};
use crate::corpus::{Corpus, Day, DeliveryShares, VaccineCatalog};
use crate::efficacy::EfficacySampler;
use crate::rng::{binomial, StreamKey, StreamRng};
use crate::special::round_half_even;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EffectiveDraw {
    pub m: u64,
    /// `(full, partial)` effective counts per vaccine.
    pub components: Vec<(u64, u64)>,
    /// Vaccines whose partial basis was negative and clamped to 0.
    pub clamped: usize,
}

/// `(2/d)(X − d·Y)`, the number of partially vaccinated people.
pub fn partial_basis(x: u64, y: u64, doses: u8) -> f64 {
    let d = doses as f64;
    (2.0 / d) * (x as f64 - d * y as f64)
}

/// Rounded, clamped binomial size for the partial term, plus a clamp flag.
fn partial_size(x: u64, y: u64, doses: u8) -> (u64, bool) {
    if doses <= 1 {
        // a single dose completes the course
        return (0, false);
    }
    let b = round_half_even(partial_basis(x, y, doses));
    if b < 0.0 {
        (0, true)
    } else {
        (b as u64, false)
    }
}

/// Fully vaccinated count used for vaccine k: single-dose vaccines count
/// every dose, and no vaccine has more fully vaccinated than doses.
fn full_size(x: u64, y: u64, doses: u8) -> u64 {
    if doses <= 1 {
        x
    } else {
        y.min(x)
    }
}

pub fn sample_effective_count(
    x: &[u64],
    y: &[u64],
    efficacy: &[(f64, f64)],
    catalog: &VaccineCatalog,
    rng: &mut StreamRng,
) -> EffectiveDraw {
    let mut components = Vec::with_capacity(x.len());
    let mut clamped = 0;
    let mut m = 0;
    for k in 0..x.len() {
        let d = catalog.doses_required(k);
        let full_n = full_size(x[k], y[k], d);
        let (partial_n, c) = partial_size(x[k], full_n, d);
        if c {
            clamped += 1;
            log::debug!("negative partial basis for vaccine {} clamped to 0", k + 1);
        }
        let (ef, ep) = efficacy[k];
        let full = if full_n > 0 { binomial(full_n, ef, rng) } else { 0 };
        let partial = if partial_n > 0 { binomial(partial_n, ep, rng) } else { 0 };
        m += full + partial;
        components.push((full, partial));
    }
    EffectiveDraw { m, components, clamped }
}

/// `Σ_k (Y_k E_f + partial_k E_p)` under the same rounding and clamping.
pub fn expected_effective(x: &[u64], y: &[u64], efficacy: &[(f64, f64)], catalog: &VaccineCatalog) -> f64 {
    (0..x.len())
        .map(|k| {
            let d = catalog.doses_required(k);
            let full_n = full_size(x[k], y[k], d);
            let (partial_n, _) = partial_size(x[k], full_n, d);
            full_n as f64 * efficacy[k].0 + partial_n as f64 * efficacy[k].1
        })
        .sum()
}

/// Most recent count at or before `t` divided by the population; 0 before
/// the first report.
pub fn theta_v(dates: &[Day], m: &[u64], population: u64, t: Day) -> f64 {
    let idx = dates.partition_point(|&d| d <= t);
    if idx == 0 {
        return 0.0;
    }
    (m[idx - 1] as f64 / population as f64).min(1.0)
}

/// Counts of data repairs made while generating vaccination draws.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct VaccinationCounters {
    pub non_monotone_splits: usize,
    pub rounded_half_counts: usize,
    pub clamped_fully: usize,
    pub infeasible_fully_splits: usize,
    pub zero_lagged_splits: usize,
    pub clamped_partial_bases: usize,
    pub missing_context: usize,
}

impl VaccinationCounters {
    fn add(&mut self, o: &Self) {
        self.non_monotone_splits += o.non_monotone_splits;
        self.rounded_half_counts += o.rounded_half_counts;
        self.clamped_fully += o.clamped_fully;
        self.infeasible_fully_splits += o.infeasible_fully_splits;
        self.zero_lagged_splits += o.zero_lagged_splits;
        self.clamped_partial_bases += o.clamped_partial_bases;
        self.missing_context += o.missing_context;
    }
}

/// Fixed inputs for generating effective counts.
pub struct VaccinationInputs<'a> {
    pub corpus: &'a Corpus,
    pub weights: &'a AllocationWeights,
    pub shares: &'a DeliveryShares,
    pub contexts: &'a [Vec<Option<RecencyContext>>],
    pub efficacy: &'a EfficacySampler,
}

/// Effective counts `M_{i,j}` for every country and report.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectiveSeries {
    pub m: Vec<Vec<u64>>,
    pub counters: VaccinationCounters,
}

impl VaccinationInputs<'_> {
    /// One generative draw given allocation and completion parameters.
    pub fn draw(&self, beta_v1: f64, beta0: f64, beta1: f64, rng: &mut StreamRng) -> EffectiveSeries {
        let corpus = self.corpus;
        let catalog = &corpus.catalog;
        let mut counters = VaccinationCounters::default();
        let (splits, non_monotone) = impute_all(corpus, self.weights, self.shares, beta_v1, rng);
        counters.non_monotone_splits = non_monotone;
        let efficacy = self.efficacy.draw(rng);

        let mut m = Vec::with_capacity(corpus.n_countries());
        for (i, reps) in corpus.vaccination.iter().enumerate() {
            let dates: Vec<Day> = reps.iter().map(|r| r.date).collect();
            let mut row = Vec::with_capacity(reps.len());
            for (j, r) in reps.iter().enumerate() {
                let x = &splits[i][j];
                let y = match (r.cum_fully, &self.contexts[i][j]) {
                    (Some(y), _) => y,
                    (None, Some(ctx)) => match impute_fully(r.cum_doses, ctx, beta0, beta1, rng) {
                        Ok(out) => {
                            counters.rounded_half_counts += out.rounded as usize;
                            counters.clamped_fully += out.clamped as usize;
                            out.y
                        }
                        Err(_) => {
                            counters.missing_context += 1;
                            single_dose_total(x, catalog)
                        }
                    },
                    (None, None) => {
                        counters.missing_context += 1;
                        single_dose_total(x, catalog)
                    }
                };
                let lagged = lagged_doses(&dates, j, &splits[i], catalog);
                let split = split_fully_by_vaccine(y, x, &lagged, catalog, rng);
                counters.infeasible_fully_splits += split.infeasible as usize;
                counters.zero_lagged_splits += split.zero_lagged as usize;
                let eff = sample_effective_count(x, &split.per_vaccine, &efficacy, catalog, rng);
                counters.clamped_partial_bases += eff.clamped;
                row.push(eff.m);
            }
            m.push(row);
        }
        EffectiveSeries { m, counters }
    }
}

/// Without a usable context, everyone is counted as fully vaccinated only
/// for single-dose vaccines.
fn single_dose_total(x: &[u64], catalog: &VaccineCatalog) -> u64 {
    catalog.of_type(1).map(|k| x[k]).sum()
}

/// Effective counts for a set of posterior draws.
#[derive(Debug, Clone, PartialEq)]
pub struct VaccinationDraws {
    /// `[draw][country][report]`
    pub m: Vec<Vec<Vec<u64>>>,
    pub dates: Vec<Vec<Day>>,
    pub populations: Vec<u64>,
    pub counters: VaccinationCounters,
}

impl VaccinationDraws {
    /// Draw `d` of `M` for every parameter triple, each on its own stream.
    pub fn generate(inputs: &VaccinationInputs, params: &[(f64, f64, f64)], seed: u64) -> Self {
        let key = StreamKey::named(seed, "vaccination");
        let n_threads = std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1).min(16);
        let chunk = params.len().div_ceil(n_threads).max(1);
        let parts: Vec<Vec<EffectiveSeries>> = std::thread::scope(|scope| {
            let handles: Vec<_> = params
                .chunks(chunk)
                .enumerate()
                .map(|(c, ps)| {
                    scope.spawn(move || {
                        ps.iter()
                            .enumerate()
                            .map(|(o, &(bv, b0, b1))| {
                                let mut rng = key.stream((c * chunk + o) as u64, 0);
                                inputs.draw(bv, b0, b1, &mut rng)
                            })
                            .collect::<Vec<_>>()
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("vaccination worker panicked")).collect()
        });
        let mut counters = VaccinationCounters::default();
        let mut m = Vec::with_capacity(params.len());
        for s in parts.into_iter().flatten() {
            counters.add(&s.counters);
            m.push(s.m);
        }
        let corpus = inputs.corpus;
        Self {
            m,
            dates: corpus.vaccination.iter().map(|r| r.iter().map(|v| v.date).collect()).collect(),
            populations: corpus.countries.iter().map(|c| c.population).collect(),
            counters,
        }
    }

    pub fn n_draws(&self) -> usize {
        self.m.len()
    }

    pub fn theta_v(&self, draw: usize, country: usize, t: Day) -> f64 {
        theta_v(&self.dates[country], &self.m[draw][country], self.populations[country], t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamKey;

    fn catalog() -> VaccineCatalog {
        VaccineCatalog::bundled()
    }

    // bundled ids: 0 Janssen (1 dose), 3 Pfizer (2 doses), 11 RBD-Dimer (3 doses)
    fn vec_at(entries: &[(usize, u64)]) -> Vec<u64> {
        let mut v = vec![0; 12];
        for &(k, n) in entries {
            v[k] = n;
        }
        v
    }

    #[test]
    fn partial_basis_examples() {
        assert_eq!(partial_basis(200, 100, 2), 0.0);
        assert!((partial_basis(330, 100, 3) - 20.0).abs() < 1e-12);
        assert_eq!(partial_basis(50, 50, 1), 0.0);
    }

    #[test]
    fn certain_success_counts_people() {
        let x = vec_at(&[(3, 200)]);
        let y = vec_at(&[(3, 100)]);
        let eff = vec![(1.0, 1.0); 12];
        let d = sample_effective_count(&x, &y, &eff, &catalog(), &mut StreamKey::new(1, 1).stream(0, 0));
        assert_eq!(d.m, 100);
        let x = vec_at(&[(3, 250)]);
        let d = sample_effective_count(&x, &y, &eff, &catalog(), &mut StreamKey::new(1, 1).stream(0, 0));
        assert_eq!(d.m, 150);
    }

    #[test]
    fn single_dose_only_has_no_partial_term() {
        let x = vec_at(&[(0, 500)]);
        let eff = vec![(1.0, 1.0); 12];
        let d = sample_effective_count(&x, &x, &eff, &catalog(), &mut StreamKey::new(1, 1).stream(0, 0));
        assert_eq!(d.components[0], (500, 0));
    }

    #[test]
    fn negative_basis_is_clamped() {
        let x = vec_at(&[(3, 100)]);
        let y = vec_at(&[(3, 80)]);
        let eff = vec![(1.0, 1.0); 12];
        let d = sample_effective_count(&x, &y, &eff, &catalog(), &mut StreamKey::new(1, 1).stream(0, 0));
        assert_eq!(d.clamped, 1);
        assert_eq!(d.m, 80);
    }

    #[test]
    fn mean_matches_analytic_value() {
        let x = vec_at(&[(0, 300), (3, 1000), (11, 330)]);
        let y = vec_at(&[(0, 300), (3, 400), (11, 100)]);
        let mut eff = vec![(0.0, 0.0); 12];
        eff[0] = (0.66, 0.3);
        eff[3] = (0.94, 0.55);
        eff[11] = (0.8, 0.5);
        let cat = catalog();
        let analytic = expected_effective(&x, &y, &eff, &cat);
        // 300·0.66 + 400·0.94 + 200·0.55 + 100·0.8 + 20·0.5
        assert!((analytic - 774.0).abs() < 1e-9);
        let var = 300.0 * 0.66 * 0.34 + 400.0 * 0.94 * 0.06 + 200.0 * 0.55 * 0.45 + 100.0 * 0.8 * 0.2 + 20.0 * 0.25;
        let n = 10_000;
        let mut rng = StreamKey::new(3, 3).stream(0, 0);
        let mean = (0..n).map(|_| sample_effective_count(&x, &y, &eff, &cat, &mut rng).m as f64).sum::<f64>() / n as f64;
        assert!((mean - analytic).abs() < 3.0 * (var / n as f64).sqrt(), "{mean} vs {analytic}");
    }

    #[test]
    fn theta_v_step_rule() {
        let dates = [10, 20];
        let m = [70, 90];
        assert_eq!(theta_v(&dates, &m, 1000, 5), 0.0);
        assert_eq!(theta_v(&dates, &m, 1000, 10), 0.07);
        assert_eq!(theta_v(&dates, &m, 1000, 15), 0.07);
        assert_eq!(theta_v(&dates, &m, 1000, 25), 0.09);
    }
}
