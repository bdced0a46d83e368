//! Population-weighted world trends and per-country summaries.

use crate::corpus::Day;
use crate::infection::combine_seroprevalence;
use crate::special::summarize;
use serde::Serialize;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AggregateError {
    #[error("country {0} has no draws for the trend dates")]
    MissingCountryDraws(String),
    #[error("day {day} is not on the trend grid")]
    DateOutOfRange { day: Day },
    #[error("value {value} outside [0, 1] for {country}")]
    OutOfUnitInterval { country: String, value: f64 },
}

/// One country's draws, `[draw][date]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CountryDraws {
    pub code: String,
    pub population: f64,
    pub theta_v: Vec<Vec<f64>>,
    pub theta_i: Vec<Vec<f64>>,
}

impl CountryDraws {
    pub fn theta(&self, draw: usize, date: usize) -> f64 {
        combine_seroprevalence(self.theta_v[draw][date], self.theta_i[draw][date])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Summary {
    /// Mean and central 95% interval. The interval is widened to contain the
    /// mean if extreme skew puts the mean outside it.
    pub fn of(values: &[f64]) -> Self {
        let (mean, lo, hi) = summarize(values);
        if mean < lo || mean > hi {
            log::warn!("mean {mean} outside its 95% interval [{lo}, {hi}]; interval widened");
        }
        Self { mean, lo: lo.min(mean), hi: hi.max(mean) }
    }
}

/// Running population-weighted sums, `[draw][date]` per quantity.
#[derive(Debug, Clone)]
pub struct WorldAccumulator {
    n_draws: usize,
    n_dates: usize,
    population: f64,
    theta_v: Vec<Vec<f64>>,
    theta_i: Vec<Vec<f64>>,
    theta: Vec<Vec<f64>>,
}

impl WorldAccumulator {
    pub fn new(n_draws: usize, n_dates: usize) -> Self {
        let zeros = vec![vec![0.0; n_dates]; n_draws];
        Self { n_draws, n_dates, population: 0.0, theta_v: zeros.clone(), theta_i: zeros.clone(), theta: zeros }
    }

    pub fn add(&mut self, c: &CountryDraws) -> Result<(), AggregateError> {
        let shape_ok = |v: &Vec<Vec<f64>>| v.len() == self.n_draws && v.iter().all(|d| d.len() == self.n_dates);
        if !shape_ok(&c.theta_v) || !shape_ok(&c.theta_i) {
            return Err(AggregateError::MissingCountryDraws(c.code.clone()));
        }
        let p = c.population;
        for d in 0..self.n_draws {
            for t in 0..self.n_dates {
                self.theta_v[d][t] += p * c.theta_v[d][t];
                self.theta_i[d][t] += p * c.theta_i[d][t];
                self.theta[d][t] += p * c.theta(d, t);
            }
        }
        self.population += p;
        Ok(())
    }

    pub fn finish(self, dates: Vec<Day>) -> WorldTrend {
        let p = self.population;
        let scale = |m: Vec<Vec<f64>>| -> Vec<Vec<f64>> {
            m.into_iter().map(|row| row.into_iter().map(|v| (v / p).clamp(0.0, 1.0)).collect()).collect()
        };
        let (tv, ti, tt) = (scale(self.theta_v), scale(self.theta_i), scale(self.theta));
        let summarize_all = |m: &Vec<Vec<f64>>| -> Vec<Summary> {
            (0..self.n_dates).map(|t| Summary::of(&m.iter().map(|row| row[t]).collect::<Vec<_>>())).collect()
        };
        WorldTrend {
            summary_v: summarize_all(&tv),
            summary_i: summarize_all(&ti),
            summary: summarize_all(&tt),
            dates,
            theta_v: tv,
            theta_i: ti,
            theta: tt,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WorldTrend {
    pub dates: Vec<Day>,
    /// `[draw][date]`
    pub theta_v: Vec<Vec<f64>>,
    pub theta_i: Vec<Vec<f64>>,
    pub theta: Vec<Vec<f64>>,
    pub summary_v: Vec<Summary>,
    pub summary_i: Vec<Summary>,
    pub summary: Vec<Summary>,
}

pub fn world_trend(countries: &[CountryDraws], dates: &[Day]) -> Result<WorldTrend, AggregateError> {
    let n_draws = countries.first().map(|c| c.theta_v.len()).unwrap_or(0);
    let mut acc = WorldAccumulator::new(n_draws, dates.len());
    for c in countries {
        acc.add(c)?;
    }
    Ok(acc.finish(dates.to_vec()))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TreemapRecord {
    pub country: String,
    pub population: u64,
    pub theta_mean: f64,
}

/// Posterior mean θ per country at one date, largest population first.
pub fn treemap_export(
    date: Day,
    dates: &[Day],
    countries: &[(String, u64, Vec<f64>)],
) -> Result<Vec<TreemapRecord>, AggregateError> {
    let t = dates.iter().position(|&d| d == date).ok_or(AggregateError::DateOutOfRange { day: date })?;
    let mut out = Vec::with_capacity(countries.len());
    for (code, population, means) in countries {
        let v = means[t];
        if !(0.0..=1.0).contains(&v) {
            return Err(AggregateError::OutOfUnitInterval { country: code.clone(), value: v });
        }
        out.push(TreemapRecord { country: code.clone(), population: *population, theta_mean: v });
    }
    out.sort_by(|a, b| b.population.cmp(&a.population).then_with(|| a.country.cmp(&b.country)));
    Ok(out)
}
