//! Bayesian reconstruction of vaccine- and infection-induced seroprevalence
//! per country and date, and its aggregation into world trends.

pub mod allocation;
pub mod completion;
pub mod corpus;
pub mod efficacy;
pub mod infection;
pub mod mcmc;
pub mod optim;
pub mod pipeline;
pub mod rng;
pub mod special;
pub mod synthetic;
pub mod truncnorm;
pub mod vaccination;
