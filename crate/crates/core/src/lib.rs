pub mod bitstream;
pub mod cli;
pub mod codec;
pub mod metrics;
pub mod partial;
pub mod permission;
pub mod providers;
pub mod tamper;
