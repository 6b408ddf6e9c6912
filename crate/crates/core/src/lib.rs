//! Hierarchical Bayes estimators of finite population means, their
//! design-consistent corrections and uncertainty measures, with the
//! simulation machinery used to evaluate them under PPSWR sampling.

pub mod error;
pub mod expfam;
pub mod harness;
pub mod nested_gibbs;
pub mod posterior_limit;
pub mod quadrature;
pub mod rng;
pub mod sample;
pub mod stratified;
pub mod survey_design;
pub mod uncertainty;
pub mod verify;

pub use error::{Error, Result};
pub use expfam::{Dispersion, DispersionPrior, ExpFamModel, Family, Link, PriorSpec};
pub use quadrature::QuadratureConfig;
pub use sample::{SampleTable, StratifiedSample, Stratum};
