pub mod bandwidth;
pub mod exposure;
pub mod generator;
pub mod hit_ratio;
pub mod latency;
pub mod output;
pub mod trace;
pub mod universe;
