pub mod arch;
pub mod augment;
pub mod compiler;
pub mod dataset;
pub mod encoder;
pub mod evaluator;
pub mod evolution;
pub mod features;
pub mod grammar;
pub mod metrics;
pub mod surrogate;
