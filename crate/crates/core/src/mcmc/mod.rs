//! Adaptive random-walk Metropolis-within-Gibbs.
//!
//! A [`Model`] exposes named parameters with supports, a partition of those
//! parameters into update blocks and a log density on the constrained scale.
//! Models may add exact conditional draws for some parameters once per sweep.
//! The sampler works on the unconstrained scale (log / scaled-logit
//! transforms) and adds the Jacobian itself. Scalar blocks adapt their step
//! toward acceptance 0.44, multivariate blocks learn a proposal covariance and
//! adapt its scale toward 0.234. All adaptation stops at the end of burn-in.

pub mod diagnostics;
mod slice;
pub mod store;

pub use diagnostics::{ess, split_rhat, DiagnosticsError, EssEstimate};
pub use slice::slice_update;
pub use store::{ParamDiagnostics, PosteriorStore, StoreError};

use crate::rng::{StreamKey, StreamRng};
use rand_distr::{Distribution, StandardNormal};
use rand::Rng;
use serde::{Deserialize, Serialize};

const SCALAR_TARGET: f64 = 0.44;
const BLOCK_TARGET: f64 = 0.234;
const INIT_ATTEMPTS: u64 = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Support {
    Real,
    Positive,
    /// Open interval; `UnitInterval` is `Interval { lo: 0, hi: 1 }`.
    Interval { lo: f64, hi: f64 },
}

impl Support {
    pub const UNIT: Support = Support::Interval { lo: 0.0, hi: 1.0 };

    pub fn contains(&self, x: f64) -> bool {
        match *self {
            Support::Real => x.is_finite(),
            Support::Positive => x > 0.0 && x.is_finite(),
            Support::Interval { lo, hi } => x > lo && x < hi,
        }
    }

    pub fn constrain(&self, u: f64) -> f64 {
        match *self {
            Support::Real => u,
            Support::Positive => u.exp(),
            Support::Interval { lo, hi } => lo + (hi - lo) * crate::special::logistic(u),
        }
    }

    pub fn unconstrain(&self, x: f64) -> f64 {
        match *self {
            Support::Real => x,
            Support::Positive => x.ln(),
            Support::Interval { lo, hi } => crate::special::logit((x - lo) / (hi - lo)),
        }
    }

    /// `ln |dx/du|` at unconstrained `u`.
    pub fn ln_jacobian(&self, u: f64) -> f64 {
        match *self {
            Support::Real => 0.0,
            Support::Positive => u,
            Support::Interval { lo, hi } => {
                (hi - lo).ln() - crate::special::softplus(-u) - crate::special::softplus(u)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    pub support: Support,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, support: Support) -> Self {
        Self { name: name.into(), support }
    }
}

/// A target for [`run_chains`].
///
/// `block_log_density` may drop every term that does not involve the block's
/// parameters; the default evaluates the full density.
pub trait Model: Sync {
    type Latent: Clone + Send;

    fn params(&self) -> Vec<ParamSpec>;

    /// Partition of parameter indices into update blocks.
    fn blocks(&self) -> Vec<Vec<usize>> {
        (0..self.params().len()).map(|i| vec![i]).collect()
    }

    /// Starting point on the constrained scale, typically a prior-ish draw.
    fn initial_state(&self, rng: &mut StreamRng) -> Vec<f64>;

    fn initial_latent(&self, rng: &mut StreamRng) -> Self::Latent;

    fn log_density(&self, x: &[f64], latent: &Self::Latent) -> f64;

    fn block_log_density(&self, x: &[f64], latent: &Self::Latent, _block: usize) -> f64 {
        self.log_density(x, latent)
    }

    /// Direct conditional redraw of latent quantities, once per sweep.
    fn refresh_latent(&self, _x: &[f64], _latent: &mut Self::Latent, _rng: &mut StreamRng) {}

    /// Exact conditional draws of parameters that admit them, once per
    /// sweep after the latent refresh.
    fn direct_update(&self, _x: &mut [f64], _latent: &Self::Latent, _rng: &mut StreamRng) {}

    /// Posterior propriety precondition for flat-prior models. The error
    /// string carries the witness of the failed check.
    fn check_propriety(&self) -> Result<(), String> {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub n_chains: usize,
    pub n_iter: usize,
    pub n_burnin: usize,
    pub seed: u64,
    pub adapt_window: usize,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self { n_chains: 4, n_iter: 4000, n_burnin: 2000, seed: 20210731, adapt_window: 50 }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<(), McmcError> {
        if self.n_chains == 0 {
            return Err(McmcError::InvalidConfig("n_chains must be at least 1".into()));
        }
        if self.n_burnin >= self.n_iter {
            return Err(McmcError::InvalidConfig(format!(
                "n_burnin ({}) must be below n_iter ({})",
                self.n_burnin, self.n_iter
            )));
        }
        if self.adapt_window == 0 {
            return Err(McmcError::InvalidConfig("adapt_window must be positive".into()));
        }
        Ok(())
    }

    pub fn n_draws(&self) -> usize {
        self.n_iter - self.n_burnin
    }
}

#[derive(Debug, thiserror::Error)]
pub enum McmcError {
    #[error("invalid chain configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error("posterior may be improper, refusing to sample: {0}")]
    Improper(String),
    #[error("chain {chain}: no finite log density after {attempts} initial draws")]
    InitializationFailed { chain: usize, attempts: u64 },
    #[error("chain {chain}: non-finite log density at iteration {iteration}; state {state:?}")]
    NonFiniteLogdensity { chain: usize, iteration: usize, state: Vec<(String, f64)> },
}

struct BlockState {
    idx: Vec<usize>,
    log_scale: f64,
    /// Lower Cholesky factor of the proposal covariance, row-major.
    chol: Vec<f64>,
    cov_ready: bool,
    mean: Vec<f64>,
    m2: Vec<f64>,
    n_seen: usize,
    /// Moments restart once this many states are in, with the span doubling
    /// each time, so early transients drop out of the proposal covariance.
    reset_at: usize,
    accepted: usize,
}

impl BlockState {
    fn new(idx: Vec<usize>) -> Self {
        let d = idx.len();
        let mut chol = vec![0.0; d * d];
        for i in 0..d {
            chol[i * d + i] = 1.0;
        }
        let log_scale = if d == 1 { 0.5f64.ln() } else { (0.5 / (d as f64).sqrt()).ln() };
        Self {
            idx,
            log_scale,
            chol,
            cov_ready: false,
            mean: vec![0.0; d],
            m2: vec![0.0; d * d],
            n_seen: 0,
            reset_at: 100,
            accepted: 0,
        }
    }

    fn dim(&self) -> usize {
        self.idx.len()
    }

    fn target(&self) -> f64 {
        if self.dim() == 1 {
            SCALAR_TARGET
        } else {
            BLOCK_TARGET
        }
    }

    fn observe(&mut self, u: &[f64]) {
        let d = self.dim();
        self.n_seen += 1;
        let n = self.n_seen as f64;
        let delta: Vec<f64> = self.idx.iter().enumerate().map(|(a, &i)| u[i] - self.mean[a]).collect();
        for a in 0..d {
            self.mean[a] += delta[a] / n;
        }
        for a in 0..d {
            let da_new = u[self.idx[a]] - self.mean[a];
            for b in 0..d {
                self.m2[a * d + b] += delta[b] * da_new;
            }
        }
    }

    fn refresh_covariance(&mut self) {
        let d = self.dim();
        if d < 2 || self.n_seen < 2 * d + 20 {
            return;
        }
        let n = self.n_seen as f64 - 1.0;
        let mut cov: Vec<f64> = self.m2.iter().map(|v| v / n).collect();
        let max_diag = (0..d).map(|i| cov[i * d + i]).fold(0.0, f64::max).max(1e-300);
        for i in 0..d {
            cov[i * d + i] += 1e-8 * max_diag + 1e-12;
        }
        if let Some(l) = cholesky(&cov, d) {
            self.chol = l;
            if !self.cov_ready {
                self.log_scale = (2.38 / (d as f64).sqrt()).ln();
                self.cov_ready = true;
            }
        }
        if self.n_seen >= self.reset_at {
            self.mean.iter_mut().for_each(|v| *v = 0.0);
            self.m2.iter_mut().for_each(|v| *v = 0.0);
            self.n_seen = 0;
            self.reset_at *= 2;
        }
    }
}

fn cholesky(a: &[f64], d: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..=i {
            let mut s = a[i * d + j];
            for k in 0..j {
                s -= l[i * d + k] * l[j * d + k];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return None;
                }
                l[i * d + i] = s.sqrt();
            } else {
                l[i * d + j] = s / l[j * d + j];
            }
        }
    }
    Some(l)
}

struct ChainOutput {
    /// `draws[param][t]`
    draws: Vec<Vec<f64>>,
    acceptance: Vec<f64>,
}

fn validate_model<M: Model>(model: &M) -> Result<(Vec<ParamSpec>, Vec<Vec<usize>>), McmcError> {
    let params = model.params();
    if params.is_empty() {
        return Err(McmcError::InvalidModel("model has no parameters".into()));
    }
    let blocks = model.blocks();
    let mut seen = vec![0usize; params.len()];
    for block in &blocks {
        if block.is_empty() {
            return Err(McmcError::InvalidModel("empty update block".into()));
        }
        for &i in block {
            if i >= params.len() {
                return Err(McmcError::InvalidModel(format!("block references parameter {i}")));
            }
            seen[i] += 1;
        }
    }
    if let Some(i) = seen.iter().position(|&c| c != 1) {
        return Err(McmcError::InvalidModel(format!(
            "parameter '{}' appears in {} blocks",
            params[i].name, seen[i]
        )));
    }
    Ok((params, blocks))
}

fn to_constrained(params: &[ParamSpec], u: &[f64], x: &mut [f64]) {
    for ((p, &ui), xi) in params.iter().zip(u).zip(x.iter_mut()) {
        *xi = p.support.constrain(ui);
    }
}

fn block_target<M: Model>(
    model: &M,
    params: &[ParamSpec],
    x: &[f64],
    u: &[f64],
    latent: &M::Latent,
    block: usize,
    idx: &[usize],
) -> f64 {
    for &i in idx {
        if !params[i].support.contains(x[i]) {
            return f64::NEG_INFINITY;
        }
    }
    let jac: f64 = idx.iter().map(|&i| params[i].support.ln_jacobian(u[i])).sum();
    model.block_log_density(x, latent, block) + jac
}

fn run_one_chain<M: Model>(
    model: &M,
    params: &[ParamSpec],
    blocks: &[Vec<usize>],
    config: &ChainConfig,
    chain: usize,
) -> Result<ChainOutput, McmcError> {
    let key = StreamKey::new(config.seed, 0x6d63_6d63).child(chain as u64);
    let n_blocks = blocks.len() as u64;

    // initial state, retried from fresh draws until the density is finite
    let mut start = None;
    for attempt in 0..INIT_ATTEMPTS {
        let mut rng = key.stream(u64::MAX - attempt, 0);
        let x = model.initial_state(&mut rng);
        let latent = model.initial_latent(&mut rng);
        if x.len() != params.len() {
            return Err(McmcError::InvalidModel(format!(
                "initial state has {} values for {} parameters",
                x.len(),
                params.len()
            )));
        }
        let in_support = x.iter().zip(params).all(|(&v, p)| p.support.contains(v));
        if in_support && model.log_density(&x, &latent).is_finite() {
            start = Some((x, latent));
            break;
        }
    }
    let (mut x, mut latent) =
        start.ok_or(McmcError::InitializationFailed { chain, attempts: INIT_ATTEMPTS })?;
    let mut u: Vec<f64> = x.iter().zip(params).map(|(&v, p)| p.support.unconstrain(v)).collect();

    let mut states: Vec<BlockState> = blocks.iter().cloned().map(BlockState::new).collect();
    let n_draws = config.n_draws();
    let mut draws = vec![Vec::with_capacity(n_draws); params.len()];
    let cov_start = config.n_burnin / 4;

    let mut proposal_u = u.clone();
    let mut proposal_x = x.clone();
    let mut before = x.clone();
    for it in 0..config.n_iter {
        let burning = it < config.n_burnin;
        {
            let mut rng = key.stream(it as u64, n_blocks);
            model.refresh_latent(&x, &mut latent, &mut rng);
            let mut rng = key.stream(it as u64, n_blocks + 1);
            before.copy_from_slice(&x);
            model.direct_update(&mut x, &latent, &mut rng);
            for i in 0..x.len() {
                if x[i] != before[i] {
                    u[i] = params[i].support.unconstrain(x[i]);
                }
            }
        }
        if !model.log_density(&x, &latent).is_finite() {
            return Err(McmcError::NonFiniteLogdensity {
                chain,
                iteration: it,
                state: params.iter().map(|p| p.name.clone()).zip(x.iter().copied()).collect(),
            });
        }

        for (b, st) in states.iter_mut().enumerate() {
            let mut rng: StreamRng = key.stream(it as u64, b as u64);
            let d = st.dim();
            let scale = st.log_scale.exp();
            let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            proposal_u.copy_from_slice(&u);
            for a in 0..d {
                let step: f64 = (0..=a).map(|c| st.chol[a * d + c] * z[c]).sum();
                proposal_u[st.idx[a]] = u[st.idx[a]] + scale * step;
            }
            proposal_x.copy_from_slice(&x);
            for &i in &st.idx {
                proposal_x[i] = params[i].support.constrain(proposal_u[i]);
            }
            let current = block_target(model, params, &x, &u, &latent, b, &st.idx);
            let proposed = block_target(model, params, &proposal_x, &proposal_u, &latent, b, &st.idx);
            if proposed.is_nan() {
                return Err(McmcError::NonFiniteLogdensity {
                    chain,
                    iteration: it,
                    state: params
                        .iter()
                        .map(|p| p.name.clone())
                        .zip(proposal_x.iter().copied())
                        .collect(),
                });
            }
            let log_ratio = proposed - current;
            let accept = log_ratio >= 0.0 || rng.random::<f64>().ln() < log_ratio;
            if accept {
                for &i in &st.idx {
                    u[i] = proposal_u[i];
                    x[i] = proposal_x[i];
                }
            }
            if burning {
                let alpha = if log_ratio.is_nan() { 0.0 } else { log_ratio.min(0.0).exp() };
                let gain = ((it + 1) as f64).powf(-0.6);
                st.log_scale += gain * (alpha - st.target());
                st.log_scale = st.log_scale.clamp(-30.0, 10.0);
                if d > 1 && it >= cov_start {
                    st.observe(&u);
                    if (it + 1) % config.adapt_window == 0 {
                        st.refresh_covariance();
                    }
                }
            } else if accept {
                st.accepted += 1;
            }
        }

        if !burning {
            to_constrained(params, &u, &mut x);
            for (p, &v) in draws.iter_mut().zip(&x) {
                p.push(v);
            }
        }
    }

    let acceptance = states.iter().map(|s| s.accepted as f64 / n_draws as f64).collect();
    Ok(ChainOutput { draws, acceptance })
}

/// Run `config.n_chains` independent chains in parallel and assemble the
/// post-burn-in draws with diagnostics.
pub fn run_chains<M: Model>(model: &M, config: &ChainConfig) -> Result<PosteriorStore, McmcError> {
    config.validate()?;
    let (params, blocks) = validate_model(model)?;
    model.check_propriety().map_err(McmcError::Improper)?;

    let outputs: Vec<Result<ChainOutput, McmcError>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..config.n_chains)
            .map(|c| {
                let (params, blocks) = (&params, &blocks);
                scope.spawn(move || run_one_chain(model, params, blocks, config, c))
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("chain thread panicked")).collect()
    });
    let mut chains = Vec::with_capacity(outputs.len());
    for out in outputs {
        chains.push(out?);
    }

    let n_draws = config.n_draws();
    let names: Vec<String> = params.iter().map(|p| p.name.clone()).collect();
    let mut draws = vec![Vec::with_capacity(n_draws * config.n_chains); names.len()];
    for chain in &chains {
        for (p, d) in draws.iter_mut().zip(&chain.draws) {
            p.extend_from_slice(d);
        }
    }
    let acceptance: Vec<Vec<f64>> = chains.into_iter().map(|c| c.acceptance).collect();
    let block_names: Vec<String> = blocks
        .iter()
        .map(|b| b.iter().map(|&i| names[i].as_str()).collect::<Vec<_>>().join("+"))
        .collect();
    let mut store = PosteriorStore::from_chain_major(names, config.n_chains, n_draws, draws);
    store.manifest.config = Some(*config);
    store.manifest.block_names = block_names;
    store.manifest.acceptance = acceptance;
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct StdNormal;
    impl Model for StdNormal {
        type Latent = ();
        fn params(&self) -> Vec<ParamSpec> {
            vec![ParamSpec::new("x", Support::Real)]
        }
        fn initial_state(&self, rng: &mut StreamRng) -> Vec<f64> {
            vec![rng.random::<f64>() * 4.0 - 2.0]
        }
        fn initial_latent(&self, _: &mut StreamRng) {}
        fn log_density(&self, x: &[f64], _: &()) -> f64 {
            -0.5 * x[0] * x[0]
        }
    }

    #[test]
    fn supports_round_trip() {
        for s in [Support::Real, Support::Positive, Support::UNIT, Support::Interval { lo: -2.0, hi: 3.0 }] {
            for u in [-3.0, -0.1, 0.0, 0.7, 4.0] {
                let x = s.constrain(u);
                assert!(s.contains(x));
                assert!((s.unconstrain(x) - u).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn jacobian_matches_finite_difference() {
        let s = Support::Interval { lo: 0.0, hi: 3.0 };
        for u in [-2.0, 0.0, 1.5] {
            let h = 1e-6;
            let fd = (s.constrain(u + h) - s.constrain(u - h)) / (2.0 * h);
            assert!((s.ln_jacobian(u) - fd.ln()).abs() < 1e-6);
        }
    }

    #[test]
    fn config_validation() {
        let bad = ChainConfig { n_burnin: 10, n_iter: 10, ..Default::default() };
        assert!(bad.validate().is_err());
        let bad = ChainConfig { n_chains: 0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn same_seed_gives_identical_draws() {
        let cfg = ChainConfig { n_chains: 2, n_iter: 400, n_burnin: 200, seed: 9, adapt_window: 50 };
        let a = run_chains(&StdNormal, &cfg).unwrap();
        let b = run_chains(&StdNormal, &cfg).unwrap();
        assert_eq!(a.column("x").unwrap(), b.column("x").unwrap());
        let c = run_chains(&StdNormal, &ChainConfig { seed: 10, ..cfg }).unwrap();
        assert_ne!(a.column("x").unwrap(), c.column("x").unwrap());
    }

    struct Improper;
    impl Model for Improper {
        type Latent = ();
        fn params(&self) -> Vec<ParamSpec> {
            vec![ParamSpec::new("b", Support::Real)]
        }
        fn initial_state(&self, _: &mut StreamRng) -> Vec<f64> {
            vec![0.0]
        }
        fn initial_latent(&self, _: &mut StreamRng) {}
        fn log_density(&self, _: &[f64], _: &()) -> f64 {
            0.0
        }
        fn check_propriety(&self) -> Result<(), String> {
            Err("no informative row".into())
        }
    }

    #[test]
    fn refuses_improper_models() {
        let err = run_chains(&Improper, &ChainConfig::default()).unwrap_err();
        assert!(matches!(err, McmcError::Improper(ref w) if w.contains("informative")));
    }

    struct NeverFinite;
    impl Model for NeverFinite {
        type Latent = ();
        fn params(&self) -> Vec<ParamSpec> {
            vec![ParamSpec::new("b", Support::Real)]
        }
        fn initial_state(&self, _: &mut StreamRng) -> Vec<f64> {
            vec![0.0]
        }
        fn initial_latent(&self, _: &mut StreamRng) {}
        fn log_density(&self, _: &[f64], _: &()) -> f64 {
            f64::NEG_INFINITY
        }
    }

    #[test]
    fn initialization_failure_is_reported() {
        let err = run_chains(&NeverFinite, &ChainConfig::default()).unwrap_err();
        assert!(matches!(err, McmcError::InitializationFailed { attempts: 100, .. }));
    }

    struct BadBlocks;
    impl Model for BadBlocks {
        type Latent = ();
        fn params(&self) -> Vec<ParamSpec> {
            vec![ParamSpec::new("a", Support::Real), ParamSpec::new("b", Support::Real)]
        }
        fn blocks(&self) -> Vec<Vec<usize>> {
            vec![vec![0], vec![0, 1]]
        }
        fn initial_state(&self, _: &mut StreamRng) -> Vec<f64> {
            vec![0.0, 0.0]
        }
        fn initial_latent(&self, _: &mut StreamRng) {}
        fn log_density(&self, _: &[f64], _: &()) -> f64 {
            0.0
        }
    }

    #[test]
    fn overlapping_blocks_are_rejected() {
        assert!(matches!(
            run_chains(&BadBlocks, &ChainConfig::default()),
            Err(McmcError::InvalidModel(_))
        ));
    }

    #[test]
    fn cholesky_reconstructs() {
        let a = [4.0, 2.0, 2.0, 3.0];
        let l = cholesky(&a, 2).unwrap();
        let rebuilt = [
            l[0] * l[0],
            l[0] * l[2],
            l[2] * l[0],
            l[2] * l[2] + l[3] * l[3],
        ];
        for (x, y) in rebuilt.iter().zip(a) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(cholesky(&[1.0, 2.0, 2.0, 1.0], 2).is_none());
    }
}
