//! Vector reduction shaped like the hardware's lane-parallel tree:
//! pack, pairwise adds, grouping, a shuffle through memory, group adds.

use super::ExecError;

pub const LANES: usize = 32;
pub const GROUPS: usize = 16;

/// Number of phases in the hardware reduction: pack, pairwise add, group,
/// shuffle through AM, group add.
pub const REDUCTION_PHASES: usize = 5;

/// Reduces 16 vectors of 32 lanes to the 32 per-lane sums using the fixed
/// binary tree the hardware shuffle network implements.
pub fn vector_reduce_hw(values: &[f32]) -> Result<[f32; LANES], ExecError> {
    if values.len() != GROUPS * LANES {
        return Err(ExecError::InvalidArgument(format!(
            "expected {} values ({GROUPS} vectors of {LANES} lanes), got {}",
            GROUPS * LANES,
            values.len()
        )));
    }
    // Phase 1 (pack) and phase 4 (shuffle through AM) only rearrange data;
    // the arithmetic is the three add phases below, a fixed 16->8->4->1 tree.
    let mut regs: Vec<[f32; LANES]> = values
        .chunks_exact(LANES)
        .map(|c| {
            let mut r = [0.0f32; LANES];
            r.copy_from_slice(c);
            r
        })
        .collect();

    // Phase 2: add register pairs, 16 -> 8.
    regs = add_pairs(&regs);
    // Phase 3/4: two groups of four, shuffled so group members align.
    // Phase 5: add within and across the groups, 8 -> 4 -> 2 -> 1.
    regs = add_pairs(&regs);
    regs = add_pairs(&regs);
    regs = add_pairs(&regs);
    debug_assert_eq!(regs.len(), 1);
    Ok(regs[0])
}

fn add_pairs(regs: &[[f32; LANES]]) -> Vec<[f32; LANES]> {
    regs.chunks_exact(2)
        .map(|pair| {
            let mut out = [0.0f32; LANES];
            for l in 0..LANES {
                out[l] = pair[0][l] + pair[1][l];
            }
            out
        })
        .collect()
}

/// Balanced pairwise summation. The softmax row reductions use this so
/// their rounding behavior matches the hardware's tree rather than a
/// sequential accumulator.
pub fn tree_sum_f32(xs: &[f32]) -> f32 {
    match xs.len() {
        0 => 0.0,
        1 => xs[0],
        2 => xs[0] + xs[1],
        n => {
            let mid = n / 2;
            tree_sum_f32(&xs[..mid]) + tree_sum_f32(&xs[mid..])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::executor::reference::column_sums;

    #[test]
    fn zeros_reduce_to_zeros() {
        let out = vector_reduce_hw(&[0.0; GROUPS * LANES]).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn ones_reduce_to_group_count() {
        let out = vector_reduce_hw(&[1.0; GROUPS * LANES]).unwrap();
        assert!(out.iter().all(|&v| v == 16.0));
    }

    #[test]
    fn matches_naive_column_sums() {
        // Deterministic pseudo-random fill.
        let mut state = 0x853c49e6748fea9bu64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 33) as f32 / (1u64 << 31) as f32) - 0.5
        };
        for _ in 0..100 {
            let values: Vec<f32> = (0..GROUPS * LANES).map(|_| next()).collect();
            let got = vector_reduce_hw(&values).unwrap();
            let want = column_sums(&values, GROUPS, LANES);
            for (l, (g, w)) in got.iter().zip(want.iter()).enumerate() {
                // Scale relative error by the column's absolute mass so a
                // cancelled (near-zero) sum does not blow up the ratio.
                let mass: f32 = (0..GROUPS).map(|gr| values[gr * LANES + l].abs()).sum();
                let denom = w.abs().max(mass);
                assert!((g - w).abs() / denom <= 1e-5, "lane {l}: got {g}, want {w}");
            }
        }
    }

    #[test]
    fn wrong_arity_is_rejected() {
        assert!(vector_reduce_hw(&[0.0; 511]).is_err());
        assert!(vector_reduce_hw(&[0.0; 513]).is_err());
    }

    #[test]
    fn phase_count_is_fixed() {
        assert_eq!(REDUCTION_PHASES, 5);
    }

    #[test]
    fn tree_sum_handles_all_lengths() {
        assert_eq!(tree_sum_f32(&[]), 0.0);
        assert_eq!(tree_sum_f32(&[3.5]), 3.5);
        let xs: Vec<f32> = (1..=100).map(|i| i as f32).collect();
        assert_eq!(tree_sum_f32(&xs), 5050.0);
    }
}
