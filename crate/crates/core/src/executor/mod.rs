//! Functional execution of tiled GEMM, fused Linear-RoPE, staged
//! attention, and the hardware-style vector reduction over a simulated
//! memory hierarchy.
//!
//! Every operation records its DMA/broadcast transfers and charges a
//! [`SimMemory`] so capacity violations fail loudly. Numerics are FP32
//! accumulation regardless of storage precision; FP16 storage is emulated
//! by round-tripping values through 16-bit on construction and store.

mod attention;
mod gemm;
mod memsim;
pub mod reference;
mod reduce;
mod tensor;

pub use attention::{flash_attention_ref, mt_attention, softmax_scaled};
pub use gemm::{gemm_tiled, linear_rope_fused};
pub use memsim::{SimMemory, TraceSummaryRow, TransferKind, TransferRecord, TransferTrace};
pub use reduce::{tree_sum_f32, vector_reduce_hw, REDUCTION_PHASES};
pub use tensor::{f16_round_trip, Tensor};

use crate::hw::MemoryLevel;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ExecError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("{level} capacity exceeded during {step}: need {needed} bytes, {available} available{hint}")]
    CapacityExceeded {
        level: MemoryLevel,
        step: String,
        needed: u64,
        available: u64,
        hint: String,
    },
}
