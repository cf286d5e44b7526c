pub mod autodiff;
pub mod engine;
pub mod env;
pub mod metrics;
pub mod policy;
pub mod store;
pub mod tokens;
