//! Inverse-probability-weighted estimation of counterfactual outcome means
//! under grace-period treatment strategies, with informative non-monotone
//! outcome measurement, loss to follow-up and truncation by death.

pub mod dataset;
pub mod formula;
pub mod glm;
pub mod strategy;
pub mod weights;
pub mod estimators;
pub mod oracle;
pub mod bootstrap;
pub mod simulate;
pub mod config;
pub mod report;
