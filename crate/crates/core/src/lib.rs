//! Modeling, simulation, and planning toolkit for LLM inference on
//! bandwidth-constrained many-core accelerators with a software-managed
//! memory hierarchy (per-core scalar/vector memories, per-cluster shared
//! memory, DDR).
//!
//! The crate is organized around the questions a deployment engineer asks
//! before touching the hardware:
//!
//! - [`hw`]: what does the roofline say about a GEMM of this shape?
//! - [`tiling`]: which blocking of the GEMM fits the on-chip memories, and
//!   how many bytes does each dataflow move?
//! - [`schedule`]: is the hand-written VLIW kernel schedule hazard-free
//!   under the documented instruction latencies?
//! - [`executor`]: does the tiled/fused execution produce the same numbers
//!   as a naive reference, and does its transfer trace match the analytic
//!   byte counts?
//! - [`attention_io`]: how do the staged and flash attention dataflows
//!   compare in DMA/broadcast operation counts and modeled latency?
//! - [`pipeline`]: how does the prefill-buffer-decode pipeline behave under
//!   a bounded buffer with backpressure?
//! - [`planner`]: which hybrid-parallel configuration fits memory and
//!   maximizes modeled throughput?

pub mod attention_io;
pub mod config;
pub mod executor;
pub mod hw;
pub mod pipeline;
pub mod planner;
pub mod schedule;
pub mod tiling;

pub use hw::{HardwareSpec, Precision};
