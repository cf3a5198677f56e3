//! GEMM blocking: capacity constraint checks, tile-plan search, and the
//! analytic byte-count model for the W-broadcast dataflow.
//!
//! The three-level dataflow stages X blocks DDR->GSM, streams X pieces
//! GSM->SM, broadcasts W tiles DDR->AM (shared by all DSPs), and keeps the
//! output Y stationary on chip until it is written back once, in
//! `y_tile_rows`-row sub-tiles interleaved with the inner compute loop.

use crate::hw::{HardwareSpec, MemoryLevel, Precision};
use num_bigint::BigInt;
use num_rational::BigRational;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TilingError {
    #[error("invalid tile plan: {0}")]
    InvalidPlan(String),
    #[error("no feasible tile plan; violated constraints at the smallest candidate: {0}")]
    Infeasible(String),
}

/// Element dimensions of `Y[M,N] = X[M,K] * W[K,N]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GemmShape {
    pub m: u64,
    pub k: u64,
    pub n: u64,
}

impl GemmShape {
    pub fn new(m: u64, k: u64, n: u64) -> Result<Self, TilingError> {
        if m == 0 || k == 0 || n == 0 {
            return Err(TilingError::InvalidPlan(format!(
                "gemm dimensions must be >= 1, got ({m}, {k}, {n})"
            )));
        }
        Ok(Self { m, k, n })
    }

    pub fn flops(&self) -> u128 {
        self.m as u128 * self.k as u128 * self.n as u128
    }
}

/// Which operand is broadcast to all DSPs of a cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dataflow {
    /// Large M: X rows are partitioned across DSPs, W tiles are broadcast.
    BroadcastW,
    /// Small M: X is broadcast, the N dimension is partitioned across DSPs.
    BroadcastX,
}

/// A complete GEMM blocking decision.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TilePlan {
    /// GSM-level block of X, rows.
    pub m_g: u64,
    /// GSM-level block of X, columns.
    pub k_g: u64,
    /// SM-level X piece, rows (per DSP).
    pub m_2: u64,
    /// Shared K blocking of the SM/AM level.
    pub k_2: u64,
    /// AM-level W tile, columns.
    pub n_2: u64,
    /// Number of X pieces per GSM block row: `ceil(m_g / m_2)`.
    pub p_pieces: u64,
    /// Kernel-level rows; the hand kernel handles 6.
    pub m_1: u64,
    /// Kernel-level columns; 128 aligns with attention head width.
    pub n_1: u64,
    /// Kernel-level K step.
    pub k_1: u64,
    pub dataflow: Dataflow,
    /// Y sub-tile granularity (rows) for transfer balancing.
    pub y_tile_rows: u64,
}

impl TilePlan {
    /// The tuned blocking for large Linear layers on the default hardware:
    /// `M_g=720, K_g=2048, M_2=30, K_2=N_2=256`, kernel tiles 6x128.
    pub fn large_linear_default() -> Self {
        Self {
            m_g: 720,
            k_g: 2048,
            m_2: 30,
            k_2: 256,
            n_2: 256,
            p_pieces: 24,
            m_1: KERNEL_M1,
            n_1: KERNEL_N1,
            k_1: KERNEL_K1,
            dataflow: Dataflow::BroadcastW,
            y_tile_rows: KERNEL_M1,
        }
    }

    pub fn validate(&self) -> Result<(), TilingError> {
        let fields = [
            ("m_g", self.m_g),
            ("k_g", self.k_g),
            ("m_2", self.m_2),
            ("k_2", self.k_2),
            ("n_2", self.n_2),
            ("p_pieces", self.p_pieces),
            ("m_1", self.m_1),
            ("n_1", self.n_1),
            ("k_1", self.k_1),
            ("y_tile_rows", self.y_tile_rows),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(TilingError::InvalidPlan(format!("{name} must be >= 1")));
            }
        }
        if self.n_1 > self.n_2 {
            return Err(TilingError::InvalidPlan(format!(
                "n_1 ({}) must not exceed n_2 ({})",
                self.n_1, self.n_2
            )));
        }
        if self.k_1 > self.k_2 {
            return Err(TilingError::InvalidPlan(format!(
                "k_1 ({}) must not exceed k_2 ({})",
                self.k_1, self.k_2
            )));
        }
        if self.y_tile_rows > self.m_2 {
            return Err(TilingError::InvalidPlan(format!(
                "y_tile_rows ({}) must not exceed m_2 ({})",
                self.y_tile_rows, self.m_2
            )));
        }
        // Block nesting must be exact so tile counts telescope across levels.
        if self.m_g % self.m_2 != 0 {
            return Err(TilingError::InvalidPlan(format!(
                "m_g ({}) must be a multiple of m_2 ({})",
                self.m_g, self.m_2
            )));
        }
        if self.k_g % self.k_2 != 0 {
            return Err(TilingError::InvalidPlan(format!(
                "k_g ({}) must be a multiple of k_2 ({})",
                self.k_g, self.k_2
            )));
        }
        if self.p_pieces != div_ceil(self.m_g, self.m_2) {
            return Err(TilingError::InvalidPlan(format!(
                "p_pieces ({}) must equal ceil(m_g/m_2) ({})",
                self.p_pieces,
                div_ceil(self.m_g, self.m_2)
            )));
        }
        Ok(())
    }
}

/// One capacity constraint evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CapacityCheck {
    pub level: MemoryLevel,
    pub used_bytes: u64,
    pub limit_bytes: u64,
    pub satisfied: bool,
}

impl CapacityCheck {
    fn new(level: MemoryLevel, used_bytes: u64, limit_bytes: u64) -> Self {
        Self {
            level,
            used_bytes,
            limit_bytes,
            satisfied: used_bytes <= limit_bytes,
        }
    }
}

pub fn div_ceil(a: u64, b: u64) -> u64 {
    debug_assert!(b > 0);
    (a + b - 1) / b
}

/// Outer-product working-set checks for an unbuffered M x K x N kernel:
/// X tile in SM, W tile and Y tile in AM.
pub fn check_outer_product(
    m: u64,
    k: u64,
    n: u64,
    precision: Precision,
    spec: &HardwareSpec,
) -> Vec<CapacityCheck> {
    let b = precision.bytes_per_element();
    vec![
        CapacityCheck::new(MemoryLevel::Sm, b * m * k, spec.sm_bytes),
        CapacityCheck::new(MemoryLevel::Am, b * k * n + b * m * n, spec.am_bytes),
    ]
}

/// Buffered-plan capacity checks: double-buffered X piece in SM,
/// double-buffered W tile plus triple-buffered Y tile plus one full output
/// row in AM, and the X block in GSM.
pub fn check_buffered_plan(
    plan: &TilePlan,
    n_total: u64,
    precision: Precision,
    spec: &HardwareSpec,
) -> Vec<CapacityCheck> {
    let b = precision.bytes_per_element();
    let sm_used = 2 * b * plan.m_2 * plan.k_2;
    let am_used = 2 * b * plan.k_2 * plan.n_2 + 3 * b * plan.m_2 * plan.n_2 + b * n_total;
    let gsm_used = b * plan.k_g * plan.m_g;
    vec![
        CapacityCheck::new(MemoryLevel::Sm, sm_used, spec.sm_bytes),
        CapacityCheck::new(MemoryLevel::Am, am_used, spec.am_bytes),
        CapacityCheck::new(MemoryLevel::Gsm, gsm_used, spec.gsm_bytes),
    ]
}

/// Per-transfer-class byte and operation totals for a plan executed in the
/// W-broadcast dataflow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransferTotals {
    /// X blocks DDR->GSM: one pass over X.
    pub x_ddr_gsm_bytes: u64,
    pub x_ddr_gsm_count: u64,
    /// X pieces GSM->SM: one pass over X.
    pub x_gsm_sm_bytes: u64,
    pub x_gsm_sm_count: u64,
    /// W tiles broadcast DDR->AM, repeated per GSM row block.
    pub w_broadcast_bytes: u64,
    pub w_broadcast_count: u64,
    /// Y written back once, in y_tile_rows sub-tiles.
    pub y_ddr_bytes: u64,
    pub y_subtile_count: u64,
}

impl TransferTotals {
    /// Point-to-point DMA bytes (everything except the W broadcast).
    pub fn dma_bytes(&self) -> u64 {
        self.x_ddr_gsm_bytes + self.x_gsm_sm_bytes + self.y_ddr_bytes
    }

    /// Bytes weighted by transfer cost: DMA at 1.0, broadcast at the
    /// spec's broadcast latency factor. Exact rational so plan ranking is
    /// deterministic.
    pub fn weighted_bytes(&self, broadcast_factor: f64) -> BigRational {
        let dma = BigRational::from_integer(BigInt::from(self.dma_bytes()));
        let bcast = BigRational::from_integer(BigInt::from(self.w_broadcast_bytes));
        let factor = BigRational::from_float(broadcast_factor).expect("finite factor");
        dma + factor * bcast
    }
}

/// Analytic transfer totals of `plan` on `shape` under the W-broadcast
/// dataflow. Edge tiles are clamped, so byte totals are conserved exactly.
pub fn dma_bytes(
    plan: &TilePlan,
    shape: &GemmShape,
    precision: Precision,
) -> Result<TransferTotals, TilingError> {
    plan.validate()?;
    let b = precision.bytes_per_element();
    let (m, k, n) = (shape.m, shape.k, shape.n);
    let row_blocks = div_ceil(m, plan.m_g);

    // Y sub-tiles: per m_2 piece and n_2 column block, ceil(rows/y_tile_rows).
    let full_pieces = m / plan.m_2;
    let tail_rows = m % plan.m_2;
    let subtiles_per_col = full_pieces * div_ceil(plan.m_2, plan.y_tile_rows)
        + if tail_rows > 0 {
            div_ceil(tail_rows, plan.y_tile_rows)
        } else {
            0
        };

    Ok(TransferTotals {
        x_ddr_gsm_bytes: m * k * b,
        x_ddr_gsm_count: row_blocks * div_ceil(k, plan.k_g),
        x_gsm_sm_bytes: m * k * b,
        x_gsm_sm_count: div_ceil(m, plan.m_2) * div_ceil(k, plan.k_2),
        w_broadcast_bytes: row_blocks * k * n * b,
        w_broadcast_count: row_blocks * div_ceil(k, plan.k_2) * div_ceil(n, plan.n_2),
        y_ddr_bytes: m * n * b,
        y_subtile_count: subtiles_per_col * div_ceil(n, plan.n_2),
    })
}

pub const KERNEL_M1: u64 = 6;
pub const KERNEL_N1: u64 = 128;
/// The hand kernel advances K by 2 per software-pipelined loop iteration.
pub const KERNEL_K1: u64 = 2;

const K2_CANDIDATES: [u64; 4] = [64, 128, 256, 512];
const MAX_M2_MULTIPLES: u64 = 10;
const MAX_N2_MULTIPLES: u64 = 8;

fn candidate_plan(
    shape: &GemmShape,
    spec: &HardwareSpec,
    precision: Precision,
    m_2: u64,
    k_2: u64,
    n_2: u64,
) -> TilePlan {
    let b = precision.bytes_per_element();
    let dsps = spec.dsps_per_cluster as u64;
    // One GSM block feeds every DSP one m_2-row piece, but never more rows
    // than the problem has.
    let m_needed = div_ceil(shape.m, m_2) * m_2;
    let m_g = (m_2 * dsps).min(m_needed);
    // Deepest K block that fits GSM, capped at the (padded) problem K.
    let k_needed = div_ceil(shape.k, k_2) * k_2;
    let gsm_fit = spec.gsm_bytes / (b * m_g); // rows of K budget
    let k_g = ((gsm_fit / k_2) * k_2).min(k_needed).max(k_2);
    let dataflow = if shape.m < KERNEL_M1 * dsps {
        Dataflow::BroadcastX
    } else {
        Dataflow::BroadcastW
    };
    TilePlan {
        m_g,
        k_g,
        m_2,
        k_2,
        n_2,
        p_pieces: div_ceil(m_g, m_2),
        m_1: KERNEL_M1,
        n_1: KERNEL_N1,
        k_1: KERNEL_K1.min(k_2),
        dataflow,
        y_tile_rows: KERNEL_M1.min(m_2),
    }
}

/// Grid search over tile candidates, maximizing modeled compute per moved
/// byte (broadcast bytes weighted by the broadcast latency factor), subject
/// to the buffered-plan capacity checks. Ties prefer the larger on-chip
/// Y tile `m_2 * n_2`, then the lexicographically smallest
/// `(m_g, k_g, m_2, k_2, n_2)`.
pub fn search_tile_plan(
    shape: &GemmShape,
    precision: Precision,
    spec: &HardwareSpec,
) -> Result<TilePlan, TilingError> {
    let mut best: Option<(BigRational, u64, [u64; 5], TilePlan)> = None;

    let m2_cap = div_ceil(shape.m, KERNEL_M1).min(MAX_M2_MULTIPLES);
    let n2_cap = div_ceil(shape.n, KERNEL_N1).min(MAX_N2_MULTIPLES);
    for i in 1..=m2_cap.max(1) {
        let m_2 = KERNEL_M1 * i;
        for k_2 in K2_CANDIDATES {
            for j in 1..=n2_cap.max(1) {
                let n_2 = KERNEL_N1 * j;
                let plan = candidate_plan(shape, spec, precision, m_2, k_2, n_2);
                let checks = check_buffered_plan(&plan, shape.n, precision, spec);
                if !checks.iter().all(|c| c.satisfied) {
                    continue;
                }
                let totals = dma_bytes(&plan, shape, precision).expect("candidate plan is valid");
                let weighted = totals.weighted_bytes(spec.broadcast_latency_factor);
                let area = m_2 * n_2;
                let lex = [plan.m_g, plan.k_g, plan.m_2, plan.k_2, plan.n_2];
                let better = match &best {
                    None => true,
                    Some((bw, barea, blex, _)) => {
                        // Fewer weighted bytes == higher compute per byte.
                        weighted < *bw
                            || (weighted == *bw && (area > *barea || (area == *barea && lex < *blex)))
                    }
                };
                if better {
                    best = Some((weighted, area, lex, plan));
                }
            }
        }
    }

    match best {
        Some((_, _, _, plan)) => Ok(plan),
        None => {
            let minimal =
                candidate_plan(shape, spec, precision, KERNEL_M1, K2_CANDIDATES[0], KERNEL_N1);
            let failed: Vec<String> = check_buffered_plan(&minimal, shape.n, precision, spec)
                .into_iter()
                .filter(|c| !c.satisfied)
                .map(|c| format!("{}: {} > {}", c.level, c.used_bytes, c.limit_bytes))
                .collect();
            Err(TilingError::Infeasible(failed.join("; ")))
        }
    }
}
