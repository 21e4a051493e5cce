pub mod agents;
pub mod book;
pub mod config;
pub mod error;
pub mod exchange;
pub mod kernel;
pub mod latency;
pub mod message;
pub mod oracle;
pub mod rng;
pub mod runner;
pub mod study;
pub mod time;
