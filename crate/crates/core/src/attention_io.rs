//! Analytic I/O operation counts and latency estimates for the staged
//! (MT) and flash attention dataflows.
//!
//! Per head, flash keeps K/V resident (one broadcast each) and streams Q
//! once and O twice per Q pass; the staged dataflow loads Q and stores O
//! once and rebroadcasts K/V once per `m_r * dsps`-row Q chunk. Counts
//! use ceiling division and scale linearly in heads.

use crate::hw::{HardwareSpec, Precision};
use crate::tiling::div_ceil;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttentionShape {
    /// Sequence length.
    pub s: u64,
    /// Head dimension.
    pub d: u64,
    pub heads: u64,
    /// Q/O block rows.
    pub m_r: u64,
    /// K/V block rows.
    pub m_c: u64,
}

impl AttentionShape {
    pub fn new(s: u64, d: u64, heads: u64, m_r: u64, m_c: u64) -> Self {
        Self { s, d, heads, m_r, m_c }
    }

    pub fn is_valid(&self) -> bool {
        self.s >= 1 && self.d >= 1 && self.heads >= 1 && self.m_r >= 1 && self.m_c >= 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionMethod {
    Mt,
    Flash,
}

impl std::fmt::Display for AttentionMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            AttentionMethod::Mt => write!(f, "mt"),
            AttentionMethod::Flash => write!(f, "flash"),
        }
    }
}

/// I/O operation counts per attention computation (all heads).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IoCounts {
    pub q_dma: u64,
    pub o_dma: u64,
    pub k_broadcast: u64,
    pub v_broadcast: u64,
}

impl IoCounts {
    pub fn dma_ops(&self) -> u64 {
        self.q_dma + self.o_dma
    }

    pub fn broadcast_ops(&self) -> u64 {
        self.k_broadcast + self.v_broadcast
    }
}

/// Bytes carried by one operation of each class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IoBytesPerOp {
    pub q_bytes: u64,
    pub o_bytes: u64,
    pub k_bytes: u64,
    pub v_bytes: u64,
}

impl IoBytesPerOp {
    /// Uniform pricing: every operation moves one block of `bytes`.
    pub fn uniform(bytes: u64) -> Self {
        Self {
            q_bytes: bytes,
            o_bytes: bytes,
            k_bytes: bytes,
            v_bytes: bytes,
        }
    }
}

/// Operation counts for one method:
/// flash -> `(ceil(S/m_c), 2 ceil(S/m_c), 1, 1)` per head;
/// MT -> `(1, 1, ceil(S/(m_r * dsps)), same)` per head.
pub fn io_counts(shape: &AttentionShape, method: AttentionMethod, spec: &HardwareSpec) -> IoCounts {
    debug_assert!(shape.is_valid());
    let per_head = match method {
        AttentionMethod::Flash => {
            let q = div_ceil(shape.s, shape.m_c);
            IoCounts {
                q_dma: q,
                o_dma: 2 * q,
                k_broadcast: 1,
                v_broadcast: 1,
            }
        }
        AttentionMethod::Mt => {
            let chunks = div_ceil(shape.s, shape.m_r * spec.dsps_per_cluster as u64);
            IoCounts {
                q_dma: 1,
                o_dma: 1,
                k_broadcast: chunks,
                v_broadcast: chunks,
            }
        }
    };
    IoCounts {
        q_dma: per_head.q_dma * shape.heads,
        o_dma: per_head.o_dma * shape.heads,
        k_broadcast: per_head.k_broadcast * shape.heads,
        v_broadcast: per_head.v_broadcast * shape.heads,
    }
}

/// Modeled transfer latency in seconds: DMA ops at `bytes / bandwidth`,
/// broadcast ops scaled by the broadcast latency factor.
pub fn io_latency_estimate(
    counts: &IoCounts,
    bytes: &IoBytesPerOp,
    spec: &HardwareSpec,
) -> f64 {
    let bw = spec.ddr_bandwidth;
    let dma = (counts.q_dma * bytes.q_bytes + counts.o_dma * bytes.o_bytes) as f64 / bw;
    let bcast = (counts.k_broadcast * bytes.k_bytes + counts.v_broadcast * bytes.v_bytes) as f64
        / bw
        * spec.broadcast_latency_factor;
    dma + bcast
}

/// One row of the method-comparison report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpeedupRow {
    pub s: u64,
    pub d: u64,
    pub heads: u64,
    pub method: AttentionMethod,
    pub q_dma: u64,
    pub o_dma: u64,
    pub k_broadcast: u64,
    pub v_broadcast: u64,
    pub est_ms: f64,
    /// MT latency / flash latency for this shape (same on both rows).
    pub mt_over_flash: f64,
}

/// Per-shape counts, latency estimates, and MT/flash ratios for both
/// methods. Every operation is priced as one `m_c * d`-element block
/// transfer, so the estimate reflects the operation-count comparison.
pub fn speedup_report(
    shapes: &[AttentionShape],
    precision: Precision,
    spec: &HardwareSpec,
) -> Vec<SpeedupRow> {
    let mut rows = Vec::with_capacity(shapes.len() * 2);
    for shape in shapes {
        let block_bytes = shape.m_c * shape.d * precision.bytes_per_element();
        let bytes = IoBytesPerOp::uniform(block_bytes);
        let mt = io_counts(shape, AttentionMethod::Mt, spec);
        let flash = io_counts(shape, AttentionMethod::Flash, spec);
        let mt_lat = io_latency_estimate(&mt, &bytes, spec);
        let flash_lat = io_latency_estimate(&flash, &bytes, spec);
        let ratio = mt_lat / flash_lat;
        for (method, counts, lat) in [
            (AttentionMethod::Mt, mt, mt_lat),
            (AttentionMethod::Flash, flash, flash_lat),
        ] {
            rows.push(SpeedupRow {
                s: shape.s,
                d: shape.d,
                heads: shape.heads,
                method,
                q_dma: counts.q_dma,
                o_dma: counts.o_dma,
                k_broadcast: counts.k_broadcast,
                v_broadcast: counts.v_broadcast,
                est_ms: lat * 1e3,
                mt_over_flash: ratio,
            });
        }
    }
    rows
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec() -> HardwareSpec {
        HardwareSpec::default()
    }

    #[test]
    fn flash_counts() {
        let c = io_counts(
            &AttentionShape::new(1024, 128, 1, 8, 128),
            AttentionMethod::Flash,
            &spec(),
        );
        assert_eq!((c.q_dma, c.o_dma, c.k_broadcast, c.v_broadcast), (8, 16, 1, 1));

        // One block: S == m_c.
        let c = io_counts(
            &AttentionShape::new(128, 128, 1, 8, 128),
            AttentionMethod::Flash,
            &spec(),
        );
        assert_eq!((c.q_dma, c.o_dma), (1, 2));
    }

    #[test]
    fn mt_counts_are_independent_of_s_for_q_and_o() {
        let c = io_counts(
            &AttentionShape::new(1920, 128, 1, 8, 128),
            AttentionMethod::Mt,
            &spec(),
        );
        assert_eq!((c.q_dma, c.o_dma, c.k_broadcast, c.v_broadcast), (1, 1, 10, 10));
        for s in [64, 512, 4096, 65536] {
            let c = io_counts(
                &AttentionShape::new(s, 128, 1, 8, 128),
                AttentionMethod::Mt,
                &spec(),
            );
            assert_eq!((c.q_dma, c.o_dma), (1, 1), "S={s}");
        }
    }

    #[test]
    fn heads_scale_all_counts_linearly() {
        for method in [AttentionMethod::Mt, AttentionMethod::Flash] {
            let one = io_counts(&AttentionShape::new(2048, 64, 1, 8, 128), method, &spec());
            let four = io_counts(&AttentionShape::new(2048, 64, 4, 8, 128), method, &spec());
            assert_eq!(four.q_dma, 4 * one.q_dma);
            assert_eq!(four.o_dma, 4 * one.o_dma);
            assert_eq!(four.k_broadcast, 4 * one.k_broadcast);
            assert_eq!(four.v_broadcast, 4 * one.v_broadcast);
        }
    }

    #[test]
    fn latency_of_zero_counts_is_zero() {
        let zero = IoCounts {
            q_dma: 0,
            o_dma: 0,
            k_broadcast: 0,
            v_broadcast: 0,
        };
        assert_eq!(
            io_latency_estimate(&zero, &IoBytesPerOp::uniform(4096), &spec()),
            0.0
        );
    }

    #[test]
    fn one_broadcast_costs_nine_tenths_of_a_dma() {
        let s = spec();
        let bytes = IoBytesPerOp::uniform(1 << 20);
        let one_dma = IoCounts { q_dma: 1, o_dma: 0, k_broadcast: 0, v_broadcast: 0 };
        let one_bc = IoCounts { q_dma: 0, o_dma: 0, k_broadcast: 1, v_broadcast: 0 };
        let dma = io_latency_estimate(&one_dma, &bytes, &s);
        let bc = io_latency_estimate(&one_bc, &bytes, &s);
        assert!((bc / dma - 0.9).abs() < 1e-12);
    }

    #[test]
    fn mt_beats_flash_for_large_s_with_matched_blocks() {
        let s = spec();
        // m_c = m_r * 24 so both methods advance in the same row chunks.
        let shape = AttentionShape::new(4096, 128, 1, 8, 8 * 24);
        let bytes = IoBytesPerOp::uniform(shape.m_c * shape.d * 4);
        let mt = io_latency_estimate(&io_counts(&shape, AttentionMethod::Mt, &s), &bytes, &s);
        let flash =
            io_latency_estimate(&io_counts(&shape, AttentionMethod::Flash, &s), &bytes, &s);
        assert!(mt < flash, "mt {mt} vs flash {flash}");
    }

    #[test]
    fn report_singleton_and_ratio_properties() {
        let s = spec();
        let rows = speedup_report(
            &[AttentionShape::new(1024, 128, 2, 8, 192)],
            Precision::Fp32,
            &s,
        );
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].method, AttentionMethod::Mt);
        assert_eq!(rows[0].mt_over_flash, rows[1].mt_over_flash);

        // Ratio is invariant in heads.
        let r1 = speedup_report(&[AttentionShape::new(2048, 64, 1, 8, 192)], Precision::Fp32, &s);
        let r8 = speedup_report(&[AttentionShape::new(2048, 64, 8, 8, 192)], Precision::Fp32, &s);
        assert!((r1[0].mt_over_flash - r8[0].mt_over_flash).abs() < 1e-12);

        // Ratio is non-increasing as S grows with fixed blocks, strictly
        // down across chunk boundaries.
        let shapes: Vec<AttentionShape> = [1920, 3840, 7680, 15360]
            .iter()
            .map(|&sq| AttentionShape::new(sq, 64, 1, 8, 192))
            .collect();
        let rows = speedup_report(&shapes, Precision::Fp32, &s);
        let ratios: Vec<f64> = rows.iter().step_by(2).map(|r| r.mt_over_flash).collect();
        for pair in ratios.windows(2) {
            assert!(pair[1] < pair[0], "ratios {ratios:?}");
        }
    }
}
