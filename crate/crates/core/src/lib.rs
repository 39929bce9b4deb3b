pub mod autodiff;
pub mod dataset;
pub mod eval;
pub mod graph;
pub mod model;
pub mod pipeline;
pub mod rng;
pub mod synth;
pub mod train;
