//! Functional and analytical model of an in-DRAM bit-serial accelerator.
//!
//! The crate is organized bottom-up:
//!
//! * [`config`]: hardware description and presets;
//! * [`bitserial`]: bit-exact locality buffer / PE / popcount / broadcast model;
//! * [`isa`]: PIM command encoding and a bank FSM executing programs;
//! * [`mapping`]: GEMM mapping space, tiling and I/O inference;
//! * [`perf`]: closed-form compute and I/O latency;
//! * [`area`]: chip-area overhead estimate;
//! * [`llm`]: transformer kernel streams for prefill and decode;
//! * [`search`]: exhaustive mapping search with a shape cache;
//! * [`report`]: experiment orchestration and CSV/JSON/text artifacts.

pub mod area;
pub mod bitserial;
pub mod config;
pub mod isa;
pub mod llm;
pub mod mapping;
pub mod perf;
pub mod report;
pub mod search;

pub use config::{load_config, preset, Ablation, ConfigError, SystemConfig};
