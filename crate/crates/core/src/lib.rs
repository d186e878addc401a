//! Bayesian life-cycle model for Atlantic salmon: stock reconstruction over
//! many stock units, posterior sampling and catch-option risk forecasts.

pub mod dataio;
pub mod domain;
pub mod forecast;
pub mod inference;
pub mod lifecycle;
pub mod likelihood;
pub mod params;
