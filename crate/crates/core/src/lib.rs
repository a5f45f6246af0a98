pub mod autodiff;
pub mod baselines;
pub mod env;
pub mod harness;
pub mod learner;
pub mod nets;
pub mod objective;
