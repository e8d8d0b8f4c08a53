pub mod canonical;
pub mod agent;
pub mod bundle;
pub mod config;
pub mod eval;
pub mod evidence;
pub mod ib;
pub mod relevance;
pub mod store;
pub mod synth;
pub mod vector;
