//! Split-chain R-hat and autocorrelation-based effective sample size.

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DiagnosticsError {
    #[error("insufficient draws: {0}")]
    InsufficientDraws(String),
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn var(xs: &[f64], m: f64) -> f64 {
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Potential scale reduction over split chains. Needs at least two chains of
/// at least four draws each; clamped below at 1.
pub fn split_rhat(chains: &[&[f64]]) -> Result<f64, DiagnosticsError> {
    if chains.len() < 2 {
        return Err(DiagnosticsError::InsufficientDraws(format!("{} chain(s), need 2", chains.len())));
    }
    let n = chains.iter().map(|c| c.len()).min().unwrap_or(0);
    if n < 4 {
        return Err(DiagnosticsError::InsufficientDraws(format!("{n} draws per chain, need 4")));
    }
    let half = n / 2;
    let halves: Vec<&[f64]> =
        chains.iter().flat_map(|c| [&c[..half], &c[n - half..n]]).collect();
    let m = halves.len() as f64;
    let len = half as f64;
    let means: Vec<f64> = halves.iter().map(|h| mean(h)).collect();
    let grand = mean(&means);
    let between = len / (m - 1.0) * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>();
    let within = halves.iter().zip(&means).map(|(h, &mu)| var(h, mu)).sum::<f64>() / m;
    if within <= 0.0 {
        // constant halves: identical constants agree, differing ones do not
        return Ok(if between > 0.0 { f64::INFINITY } else { 1.0 });
    }
    let var_plus = (len - 1.0) / len * within + between / len;
    Ok((var_plus / within).sqrt().max(1.0))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EssEstimate {
    pub ess: f64,
    /// Set when every draw is identical; `ess` is then reported as 0.
    pub degenerate: bool,
}

fn autocovariance(chain: &[f64], mu: f64, lag: usize) -> f64 {
    let n = chain.len();
    (0..n - lag).map(|t| (chain[t] - mu) * (chain[t + lag] - mu)).sum::<f64>() / n as f64
}

/// Multi-chain ESS with Geyer's initial monotone sequence truncation.
pub fn ess(chains: &[&[f64]]) -> Result<EssEstimate, DiagnosticsError> {
    if chains.is_empty() {
        return Err(DiagnosticsError::InsufficientDraws("no chains".into()));
    }
    let n = chains.iter().map(|c| c.len()).min().unwrap_or(0);
    if n < 4 {
        return Err(DiagnosticsError::InsufficientDraws(format!("{n} draws per chain, need 4")));
    }
    let chains: Vec<&[f64]> = chains.iter().map(|c| &c[..n]).collect();
    let m = chains.len() as f64;
    let total = m * n as f64;
    let means: Vec<f64> = chains.iter().map(|c| mean(c)).collect();
    let within = chains.iter().zip(&means).map(|(c, &mu)| var(c, mu)).sum::<f64>() / m;
    if within <= 0.0 {
        return Ok(EssEstimate { ess: 0.0, degenerate: true });
    }
    let nf = n as f64;
    let between = if chains.len() > 1 {
        let grand = mean(&means);
        nf / (m - 1.0) * means.iter().map(|x| (x - grand).powi(2)).sum::<f64>()
    } else {
        0.0
    };
    let var_plus = (nf - 1.0) / nf * within + between / nf;

    let rho = |lag: usize| -> f64 {
        let acov = chains.iter().zip(&means).map(|(c, &mu)| autocovariance(c, mu, lag)).sum::<f64>() / m;
        1.0 - (within - acov) / var_plus
    };

    let mut tau_sum = 0.0;
    let mut prev_pair = f64::INFINITY;
    let mut lag = 0;
    while lag + 1 < n {
        let mut pair = rho(lag) + rho(lag + 1);
        if pair < 0.0 {
            break;
        }
        pair = pair.min(prev_pair);
        tau_sum += pair;
        prev_pair = pair;
        lag += 2;
    }
    let tau = (-1.0 + 2.0 * tau_sum).max(1.0 / total.log10().max(1.0));
    let ess = (total / tau).min(total);
    Ok(EssEstimate { ess, degenerate: false })
}
