pub mod bridge_engine;
pub mod cli_runner;
pub mod exec;
pub mod killed_kernel;
pub mod limit_process;
pub mod quad;
pub mod stats;
pub mod verify_harness;
pub mod walk_laws;
