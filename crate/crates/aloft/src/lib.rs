pub mod agent;
pub mod env;
pub mod eval;
pub mod gan;
pub mod net;
pub mod optim;
pub mod rng;
pub mod run;
pub mod store;
pub mod tensor;
