//! Staged attention execution.
//!
//! The staged dataflow keeps each DSP's Q/O rows resident on chip and
//! broadcasts K/V to the whole cluster once per row chunk; the flash
//! reference keeps K/V resident and streams Q/O blocks. Both produce
//! `softmax(q k^T / sqrt(d)) v` per head; they differ only in transfer
//! behavior.

use super::memsim::{SimMemory, TransferKind, TransferTrace};
use super::reduce::tree_sum_f32;
use super::tensor::Tensor;
use super::ExecError;
use crate::hw::{HardwareSpec, MemoryLevel};

fn validate_qkv(q: &Tensor, k: &Tensor, v: &Tensor, heads: usize) -> Result<(usize, usize), ExecError> {
    let (hq, s, d) = q.as_3d()?;
    if k.shape() != q.shape() || v.shape() != q.shape() {
        return Err(ExecError::ShapeMismatch(format!(
            "q/k/v shapes must match: {:?} vs {:?} vs {:?}",
            q.shape(),
            k.shape(),
            v.shape()
        )));
    }
    if hq != heads {
        return Err(ExecError::ShapeMismatch(format!(
            "tensor has {hq} heads but heads={heads} was requested"
        )));
    }
    if q.storage_precision() != k.storage_precision()
        || q.storage_precision() != v.storage_precision()
    {
        return Err(ExecError::InvalidArgument(
            "q/k/v must share a storage precision".into(),
        ));
    }
    Ok((s, d))
}

/// Staged attention: per head, Q is DMAed on chip once, K/V are broadcast
/// once per `m_r * dsps_per_cluster`-row chunk of Q, scores are scaled and
/// softmaxed at FP32 (spilling score rows from AM to GSM when needed), and
/// O is written back once.
pub fn mt_attention(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    heads: usize,
    m_r: usize,
    m_c: usize,
    spec: &HardwareSpec,
) -> Result<(Tensor, TransferTrace), ExecError> {
    let (s, d) = validate_qkv(q, k, v, heads)?;
    if m_r == 0 || m_c == 0 {
        return Err(ExecError::InvalidArgument(
            "m_r and m_c must be >= 1".into(),
        ));
    }
    let b = q.storage_precision().bytes_per_element();
    let dsps = spec.dsps_per_cluster as u64;
    let chunk = m_r * spec.dsps_per_cluster as usize;

    let mut mem = SimMemory::new(spec);
    mem.charge(
        MemoryLevel::Ddr,
        q.storage_bytes() + k.storage_bytes() + v.storage_bytes() + q.storage_bytes(),
        "tensor storage",
    )?;

    // Per-DSP working set: its Q/O rows, a double-buffered K/V block pair,
    // and the FP32 score rows. Scores greedily fill AM and spill to GSM.
    let tiles = (2 * m_r * d) as u64 * b + (2 * m_c * d) as u64 * 2 * b;
    mem.charge_hint(
        MemoryLevel::Am,
        tiles,
        "attention tiles",
        "reduce m_r or m_c",
    )?;
    let score_bytes = (m_r * s * 4) as u64;
    let am_free = spec.am_bytes - mem.used(MemoryLevel::Am);
    let am_scores = score_bytes.min(am_free);
    mem.charge(MemoryLevel::Am, am_scores, "attention scores")?;
    let spill = (score_bytes - am_scores) * dsps;
    if spill > 0 {
        mem.charge_hint(
            MemoryLevel::Gsm,
            spill,
            "attention score block",
            "reduce m_r",
        )?;
    }

    let scale = 1.0 / (d as f32).sqrt();
    let mut trace = TransferTrace::new();
    let mut out = vec![0.0f32; heads * s * d];
    let qkv_bytes = (s * d) as u64 * b;

    for h in 0..heads {
        let qh = &q.data()[h * s * d..(h + 1) * s * d];
        let kh = &k.data()[h * s * d..(h + 1) * s * d];
        let vh = &v.data()[h * s * d..(h + 1) * s * d];
        let oh = &mut out[h * s * d..(h + 1) * s * d];

        trace.record(TransferKind::Dma, MemoryLevel::Ddr, MemoryLevel::Sm, qkv_bytes, "q_dma");
        let mut scores = vec![0.0f32; s];
        for chunk_start in (0..s).step_by(chunk) {
            let rows = chunk.min(s - chunk_start);
            trace.record(
                TransferKind::Broadcast,
                MemoryLevel::Ddr,
                MemoryLevel::Am,
                qkv_bytes,
                "k_bcast",
            );
            trace.record(
                TransferKind::Broadcast,
                MemoryLevel::Ddr,
                MemoryLevel::Am,
                qkv_bytes,
                "v_bcast",
            );
            for i in chunk_start..chunk_start + rows {
                // Stage 1: scores for this Q row, K consumed m_c rows at
                // a time as the broadcast delivers it.
                for c0 in (0..s).step_by(m_c) {
                    let cols = m_c.min(s - c0);
                    for j in c0..c0 + cols {
                        let mut dot = 0.0f32;
                        for t in 0..d {
                            dot += qh[i * d + t] * kh[j * d + t];
                        }
                        scores[j] = dot;
                    }
                }
                // Stage 2: scale + softmax at FP32.
                softmax_row(&mut scores, scale)?;
                // Stage 3: weighted sum over V rows.
                let orow = &mut oh[i * d..(i + 1) * d];
                orow.fill(0.0);
                for (j, &weight) in scores.iter().enumerate() {
                    if weight == 0.0 {
                        continue;
                    }
                    let vrow = &vh[j * d..(j + 1) * d];
                    for (o, vv) in orow.iter_mut().zip(vrow) {
                        *o += weight * vv;
                    }
                }
            }
        }
        trace.record(TransferKind::Dma, MemoryLevel::Am, MemoryLevel::Ddr, qkv_bytes, "o_dma");
    }

    let out = Tensor::from_vec(vec![heads, s, d], out, q.storage_precision())?;
    Ok((out, trace))
}

/// Flash-style reference: K/V broadcast once and held resident, Q blocks
/// of `m_c` rows streamed in, O blocks loaded and written back around each
/// pass (two O transfers per Q block), online softmax over `m_r`-row K/V
/// blocks.
pub fn flash_attention_ref(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    m_c: usize,
    m_r: usize,
) -> Result<(Tensor, TransferTrace), ExecError> {
    let (heads, _, _) = q.as_3d()?;
    let (s, d) = validate_qkv(q, k, v, heads)?;
    if m_r == 0 || m_c == 0 {
        return Err(ExecError::InvalidArgument(
            "m_r and m_c must be >= 1".into(),
        ));
    }
    let b = q.storage_precision().bytes_per_element();
    let scale = 1.0 / (d as f32).sqrt();
    let mut trace = TransferTrace::new();
    let mut out = vec![0.0f32; heads * s * d];
    let full_bytes = (s * d) as u64 * b;

    for h in 0..heads {
        let qh = &q.data()[h * s * d..(h + 1) * s * d];
        let kh = &k.data()[h * s * d..(h + 1) * s * d];
        let vh = &v.data()[h * s * d..(h + 1) * s * d];
        let oh = &mut out[h * s * d..(h + 1) * s * d];

        trace.record(TransferKind::Broadcast, MemoryLevel::Ddr, MemoryLevel::Am, full_bytes, "k_bcast");
        trace.record(TransferKind::Broadcast, MemoryLevel::Ddr, MemoryLevel::Am, full_bytes, "v_bcast");

        for qb in (0..s).step_by(m_c) {
            let rows = m_c.min(s - qb);
            let block_bytes = (rows * d) as u64 * b;
            trace.record(TransferKind::Dma, MemoryLevel::Ddr, MemoryLevel::Sm, block_bytes, "q_dma");
            // O accumulator in, rescaled result out.
            trace.record(TransferKind::Dma, MemoryLevel::Ddr, MemoryLevel::Am, block_bytes, "o_dma");

            for i in qb..qb + rows {
                let mut running_max = f32::NEG_INFINITY;
                let mut running_sum = 0.0f32;
                let mut acc = vec![0.0f32; d];
                for kv0 in (0..s).step_by(m_r) {
                    let kv_rows = m_r.min(s - kv0);
                    let mut block_scores = vec![0.0f32; kv_rows];
                    let mut block_max = f32::NEG_INFINITY;
                    for (bj, j) in (kv0..kv0 + kv_rows).enumerate() {
                        let mut dot = 0.0f32;
                        for t in 0..d {
                            dot += qh[i * d + t] * kh[j * d + t];
                        }
                        let sc = dot * scale;
                        block_scores[bj] = sc;
                        block_max = block_max.max(sc);
                    }
                    let new_max = running_max.max(block_max);
                    let correction = if running_max == f32::NEG_INFINITY {
                        0.0
                    } else {
                        (running_max - new_max).exp()
                    };
                    running_sum *= correction;
                    for a in acc.iter_mut() {
                        *a *= correction;
                    }
                    for (bj, j) in (kv0..kv0 + kv_rows).enumerate() {
                        let p = (block_scores[bj] - new_max).exp();
                        running_sum += p;
                        let vrow = &vh[j * d..(j + 1) * d];
                        for (a, vv) in acc.iter_mut().zip(vrow) {
                            *a += p * vv;
                        }
                    }
                    running_max = new_max;
                }
                let orow = &mut oh[i * d..(i + 1) * d];
                for (o, a) in orow.iter_mut().zip(acc.iter()) {
                    *o = a / running_sum;
                }
            }
            trace.record(TransferKind::Dma, MemoryLevel::Am, MemoryLevel::Ddr, block_bytes, "o_dma");
        }
    }

    let out = Tensor::from_vec(vec![heads, s, d], out, q.storage_precision())?;
    Ok((out, trace))
}

/// Row-stabilized softmax of `scale * scores`, FP32 math with a pairwise
/// tree for the row sums.
pub fn softmax_scaled(scores: &Tensor, scale: f64) -> Result<Tensor, ExecError> {
    let (rows, cols) = scores.as_2d()?;
    if cols == 0 {
        return Err(ExecError::InvalidArgument("empty softmax row".into()));
    }
    let mut data = scores.data().to_vec();
    for r in 0..rows {
        softmax_row(&mut data[r * cols..(r + 1) * cols], scale as f32)?;
    }
    Tensor::from_vec(vec![rows, cols], data, scores.storage_precision())
}

fn softmax_row(row: &mut [f32], scale: f32) -> Result<(), ExecError> {
    if row.is_empty() {
        return Err(ExecError::InvalidArgument("empty softmax row".into()));
    }
    let mut max = f32::NEG_INFINITY;
    for v in row.iter_mut() {
        *v *= scale;
        max = max.max(*v);
    }
    for v in row.iter_mut() {
        *v = (*v - max).exp();
    }
    let sum = tree_sum_f32(row);
    for v in row.iter_mut() {
        *v /= sum;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::executor::reference::naive_attention;
    use crate::hw::Precision;

    fn fill(len: usize, seed: u64) -> Vec<f32> {
        let mut state = seed.wrapping_mul(0x9e3779b97f4a7c15) | 1;
        (0..len)
            .map(|_| {
                state = state
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(1442695040888963407);
                ((state >> 33) as f32 / (1u64 << 31) as f32) - 0.5
            })
            .collect()
    }

    fn qkv(heads: usize, s: usize, d: usize, seed: u64) -> (Tensor, Tensor, Tensor) {
        let t = |s2| {
            Tensor::from_vec(vec![heads, s, d], fill(heads * s * d, s2), Precision::Fp32).unwrap()
        };
        (t(seed), t(seed + 1), t(seed + 2))
    }

    fn max_abs_err(got: &[f32], want: &[f32]) -> f32 {
        got.iter()
            .zip(want)
            .map(|(g, w)| (g - w).abs())
            .fold(0.0, f32::max)
    }

    #[test]
    fn single_token_attention_returns_v() {
        let spec = HardwareSpec::default();
        let q = Tensor::from_vec(vec![1, 1, 1], vec![2.0], Precision::Fp32).unwrap();
        let k = Tensor::from_vec(vec![1, 1, 1], vec![3.0], Precision::Fp32).unwrap();
        let v = Tensor::from_vec(vec![1, 1, 1], vec![5.0], Precision::Fp32).unwrap();
        let (o, _) = mt_attention(&q, &k, &v, 1, 8, 8, &spec).unwrap();
        assert_eq!(o.data(), &[5.0]);
        let (o, _) = flash_attention_ref(&q, &k, &v, 8, 8).unwrap();
        assert_eq!(o.data(), &[5.0]);
    }

    #[test]
    fn staged_matches_naive_reference() {
        let spec = HardwareSpec::default();
        let (heads, s, d) = (4, 128, 128);
        let (q, k, v) = qkv(heads, s, d, 10);
        let (o, _) = mt_attention(&q, &k, &v, heads, 8, 32, &spec).unwrap();
        for h in 0..heads {
            let want = naive_attention(
                &q.data()[h * s * d..(h + 1) * s * d],
                &k.data()[h * s * d..(h + 1) * s * d],
                &v.data()[h * s * d..(h + 1) * s * d],
                s,
                d,
            );
            assert!(max_abs_err(&o.data()[h * s * d..(h + 1) * s * d], &want) <= 1e-4);
        }
    }

    #[test]
    fn flash_matches_naive_and_staged() {
        let spec = HardwareSpec::default();
        let (heads, s, d) = (2, 96, 48);
        let (q, k, v) = qkv(heads, s, d, 20);
        let (fo, _) = flash_attention_ref(&q, &k, &v, 32, 16).unwrap();
        let (mo, _) = mt_attention(&q, &k, &v, heads, 4, 16, &spec).unwrap();
        assert!(max_abs_err(fo.data(), mo.data()) <= 1e-4);
        for h in 0..heads {
            let want = naive_attention(
                &q.data()[h * s * d..(h + 1) * s * d],
                &k.data()[h * s * d..(h + 1) * s * d],
                &v.data()[h * s * d..(h + 1) * s * d],
                s,
                d,
            );
            assert!(max_abs_err(&fo.data()[h * s * d..(h + 1) * s * d], &want) <= 1e-4);
        }
    }

    #[test]
    fn staged_trace_counts_follow_chunking() {
        let spec = HardwareSpec::default();
        let (q, k, v) = qkv(1, 1920, 8, 30);
        let (_, trace) = mt_attention(&q, &k, &v, 1, 8, 64, &spec).unwrap();
        // 1920 rows / (8 rows * 24 DSPs) = 10 chunks.
        assert_eq!(trace.count("k_bcast"), 10);
        assert_eq!(trace.count("v_bcast"), 10);
        assert_eq!(trace.count("q_dma"), 1);
        assert_eq!(trace.count("o_dma"), 1);
    }

    #[test]
    fn flash_trace_counts_follow_blocking() {
        let (q, k, v) = qkv(1, 1024, 8, 40);
        let (_, trace) = flash_attention_ref(&q, &k, &v, 128, 64).unwrap();
        assert_eq!(trace.count("q_dma"), 8);
        assert_eq!(trace.count("o_dma"), 16);
        assert_eq!(trace.count("k_bcast"), 1);
        assert_eq!(trace.count("v_bcast"), 1);

        // Single block: S == m_c.
        let (q, k, v) = qkv(1, 64, 8, 41);
        let (_, trace) = flash_attention_ref(&q, &k, &v, 64, 16).unwrap();
        assert_eq!(trace.count("q_dma"), 1);
        assert_eq!(trace.count("o_dma"), 2);
    }

    #[test]
    fn oversized_score_block_is_rejected_with_hint() {
        let spec = HardwareSpec::default();
        let (q, k, v) = qkv(1, 8192, 16, 50);
        match mt_attention(&q, &k, &v, 1, 512, 64, &spec) {
            Err(ExecError::CapacityExceeded { level, hint, .. }) => {
                assert_eq!(level, MemoryLevel::Gsm);
                assert!(hint.contains("m_r"), "hint should suggest smaller m_r: {hint}");
            }
            other => panic!("expected capacity error, got {other:?}"),
        }
    }

    #[test]
    fn softmax_basics() {
        let one = Tensor::from_vec(vec![1, 1], vec![3.0], Precision::Fp32).unwrap();
        assert_eq!(softmax_scaled(&one, 1.0).unwrap().data(), &[1.0]);

        let pair = Tensor::from_vec(vec![1, 2], vec![0.7, 0.7], Precision::Fp32).unwrap();
        assert_eq!(softmax_scaled(&pair, 2.0).unwrap().data(), &[0.5, 0.5]);

        let t = Tensor::from_vec(vec![4, 64], fill(4 * 64, 60), Precision::Fp32).unwrap();
        let sm = softmax_scaled(&t, 3.0).unwrap();
        for r in 0..4 {
            let sum: f64 = sm.data()[r * 64..(r + 1) * 64]
                .iter()
                .map(|&v| v as f64)
                .sum();
            assert!((sum - 1.0).abs() <= 1e-6, "row {r} sums to {sum}");
        }
    }

    #[test]
    fn softmax_is_stable_under_large_magnitudes() {
        let t = Tensor::from_vec(vec![1, 3], vec![1000.0, 1001.0, 999.0], Precision::Fp32).unwrap();
        let sm = softmax_scaled(&t, 1.0).unwrap();
        assert!(sm.data().iter().all(|v| v.is_finite()));
        let sum: f32 = sm.data().iter().sum();
        assert!((sum - 1.0).abs() <= 1e-6);
    }
}
