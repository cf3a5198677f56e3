//! Tiled GEMM execution over the simulated hierarchy, in both dataflows,
//! plus the Linear-RoPE fusion that rotates output rows as they are
//! written back.

use super::memsim::{SimMemory, TransferKind, TransferTrace};
use super::tensor::Tensor;
use super::ExecError;
use crate::hw::{HardwareSpec, MemoryLevel};
use crate::tiling::{check_buffered_plan, div_ceil, Dataflow, TilePlan};

/// Executes `y = x * w` under `plan`, recording every transfer and
/// enforcing the memory-level capacities of `spec`. Accumulation is FP32;
/// the output inherits `x`'s storage precision.
pub fn gemm_tiled(
    x: &Tensor,
    w: &Tensor,
    plan: &TilePlan,
    spec: &HardwareSpec,
) -> Result<(Tensor, TransferTrace), ExecError> {
    run_tiled(x, w, plan, Some(spec), PostOp::None)
}

/// Linear layer with rotary position embedding fused into the output
/// write-back: each completed row is rotated (interleaved pairs, angle
/// `positions[row] * theta_base^(-2j/n)`) before it is stored. Equals
/// applying RoPE after a plain GEMM.
pub fn linear_rope_fused(
    x: &Tensor,
    w: &Tensor,
    positions: &[u64],
    theta_base: f64,
    plan: &TilePlan,
) -> Result<Tensor, ExecError> {
    let (m, _) = x.as_2d()?;
    let (_, n) = w.as_2d()?;
    if n % 2 != 0 {
        return Err(ExecError::InvalidArgument(format!(
            "RoPE pairs lanes; output width must be even, got {n}"
        )));
    }
    if positions.len() != m {
        return Err(ExecError::InvalidArgument(format!(
            "need one position per row: {} positions for {m} rows",
            positions.len()
        )));
    }
    if !(theta_base > 0.0) {
        return Err(ExecError::InvalidArgument(format!(
            "theta_base must be positive, got {theta_base}"
        )));
    }
    let (y, _) = run_tiled(
        x,
        w,
        plan,
        None,
        PostOp::Rope {
            positions,
            theta_base,
        },
    )?;
    Ok(y)
}

enum PostOp<'a> {
    None,
    Rope {
        positions: &'a [u64],
        theta_base: f64,
    },
}

impl PostOp<'_> {
    /// Rotates columns [nb, nb+width) of one output row in place.
    fn apply(&self, row: usize, nb: usize, width: usize, n: usize, row_data: &mut [f32]) {
        if let PostOp::Rope {
            positions,
            theta_base,
        } = self
        {
            debug_assert_eq!(nb % 2, 0);
            let pos = positions[row] as f64;
            for j in (nb / 2)..((nb + width) / 2) {
                let angle = pos * theta_base.powf(-2.0 * j as f64 / n as f64);
                let (sin, cos) = angle.sin_cos();
                let (sin, cos) = (sin as f32, cos as f32);
                let a = row_data[2 * j - nb];
                let b = row_data[2 * j + 1 - nb];
                row_data[2 * j - nb] = a * cos - b * sin;
                row_data[2 * j + 1 - nb] = b * cos + a * sin;
            }
        }
    }
}

fn run_tiled(
    x: &Tensor,
    w: &Tensor,
    plan: &TilePlan,
    spec: Option<&HardwareSpec>,
    post: PostOp<'_>,
) -> Result<(Tensor, TransferTrace), ExecError> {
    let (m, kx) = x.as_2d()?;
    let (kw, n) = w.as_2d()?;
    if kx != kw {
        return Err(ExecError::ShapeMismatch(format!(
            "inner dimensions differ: x is {m}x{kx}, w is {kw}x{n}"
        )));
    }
    if x.storage_precision() != w.storage_precision() {
        return Err(ExecError::InvalidArgument(
            "x and w must share a storage precision".into(),
        ));
    }
    plan.validate()
        .map_err(|e| ExecError::InvalidArgument(e.to_string()))?;
    if matches!(post, PostOp::Rope { .. }) && plan.n_2 % 2 != 0 {
        return Err(ExecError::InvalidArgument(
            "RoPE fusion needs an even n_2 so rotation pairs never straddle tiles".into(),
        ));
    }
    let precision = x.storage_precision();
    let k = kx;

    let mut trace = TransferTrace::new();
    let mut mem = spec.map(SimMemory::new);
    let b = precision.bytes_per_element();

    if let (Some(mem), Some(spec)) = (mem.as_mut(), spec) {
        // Admission: the steady working set of the W-broadcast dataflow
        // must satisfy the buffered-plan constraints.
        if plan.dataflow == Dataflow::BroadcastW {
            for check in check_buffered_plan(plan, n as u64, precision, spec) {
                if !check.satisfied {
                    return Err(ExecError::CapacityExceeded {
                        level: check.level,
                        step: "plan admission".into(),
                        needed: check.used_bytes,
                        available: check.limit_bytes,
                        hint: "shrink the tile plan".into(),
                    });
                }
            }
        }
        let y_bytes = (m * n) as u64 * b;
        mem.charge(
            MemoryLevel::Ddr,
            x.storage_bytes() + w.storage_bytes() + y_bytes,
            "tensor storage",
        )?;
    }

    let y = match plan.dataflow {
        Dataflow::BroadcastW => {
            run_broadcast_w(x, w, plan, mem.as_mut(), &mut trace, &post, m, k, n, b)?
        }
        Dataflow::BroadcastX => run_broadcast_x(
            x,
            w,
            plan,
            spec,
            mem.as_mut(),
            &mut trace,
            &post,
            m,
            k,
            n,
            b,
        )?,
    };

    let y = Tensor::from_vec(vec![m, n], y, precision)?;
    Ok((y, trace))
}

#[allow(clippy::too_many_arguments)]
fn run_broadcast_w(
    x: &Tensor,
    w: &Tensor,
    plan: &TilePlan,
    mut mem: Option<&mut SimMemory>,
    trace: &mut TransferTrace,
    post: &PostOp<'_>,
    m: usize,
    k: usize,
    n: usize,
    b: u64,
) -> Result<Vec<f32>, ExecError> {
    let (m_g, k_g) = (plan.m_g as usize, plan.k_g as usize);
    let (m_2, k_2, n_2) = (plan.m_2 as usize, plan.k_2 as usize, plan.n_2 as usize);
    let y_rows = plan.y_tile_rows as usize;
    let xd = x.data();
    let wd = w.data();
    let mut y = vec![0.0f32; m * n];

    if let Some(mem) = mem.as_mut() {
        // Persistent per-DSP working set: double-buffered X piece in SM,
        // double-buffered W tile, triple-buffered Y tile, and one staged
        // output row in AM.
        mem.charge(MemoryLevel::Sm, 2 * b * (m_2 * k_2) as u64, "x piece buffers")?;
        mem.charge(MemoryLevel::Am, 2 * b * (k_2 * n_2) as u64, "w tile buffers")?;
        mem.charge(MemoryLevel::Am, 3 * b * (m_2 * n_2) as u64, "y tile buffers")?;
        mem.charge(MemoryLevel::Am, b * n as u64, "y row staging")?;
    }

    for mb in (0..m).step_by(m_g) {
        let mg_eff = m_g.min(m - mb);
        for kb in (0..k).step_by(k_g) {
            let kg_eff = k_g.min(k - kb);
            let block_bytes = (mg_eff * kg_eff) as u64 * b;
            if let Some(mem) = mem.as_mut() {
                mem.charge(MemoryLevel::Gsm, block_bytes, "x block")?;
            }
            trace.record(
                TransferKind::Dma,
                MemoryLevel::Ddr,
                MemoryLevel::Gsm,
                block_bytes,
                "x_ddr_gsm",
            );
            // Each DSP pulls its X pieces from the shared block once.
            for pb in (mb..mb + mg_eff).step_by(m_2) {
                let m2_eff = m_2.min(mb + mg_eff - pb);
                for k2b in (kb..kb + kg_eff).step_by(k_2) {
                    let k2_eff = k_2.min(kb + kg_eff - k2b);
                    trace.record(
                        TransferKind::Dma,
                        MemoryLevel::Gsm,
                        MemoryLevel::Sm,
                        (m2_eff * k2_eff) as u64 * b,
                        "x_gsm_sm",
                    );
                }
            }
            // W tiles are broadcast once per (k2, n2) pair and consumed by
            // every DSP's rows of this block.
            for nb in (0..n).step_by(n_2) {
                let n2_eff = n_2.min(n - nb);
                for k2b in (kb..kb + kg_eff).step_by(k_2) {
                    let k2_eff = k_2.min(kb + kg_eff - k2b);
                    trace.record(
                        TransferKind::Broadcast,
                        MemoryLevel::Ddr,
                        MemoryLevel::Am,
                        (k2_eff * n2_eff) as u64 * b,
                        "w_bcast",
                    );
                    for row in mb..mb + mg_eff {
                        let yrow = &mut y[row * n + nb..row * n + nb + n2_eff];
                        for kk in k2b..k2b + k2_eff {
                            let xv = xd[row * k + kk];
                            if xv == 0.0 {
                                continue;
                            }
                            let wrow = &wd[kk * n + nb..kk * n + nb + n2_eff];
                            for (yj, wj) in yrow.iter_mut().zip(wrow) {
                                *yj += xv * wj;
                            }
                        }
                    }
                }
            }
            if let Some(mem) = mem.as_mut() {
                mem.release(MemoryLevel::Gsm, block_bytes);
            }
        }
        // Accumulation over K is complete for these rows; write Y back
        // once, in y_tile_rows sub-tiles per piece and column block.
        for pb in (mb..mb + mg_eff).step_by(m_2) {
            let piece_end = (pb + m_2).min(mb + mg_eff);
            for nb in (0..n).step_by(n_2) {
                let n2_eff = n_2.min(n - nb);
                for yt in (pb..piece_end).step_by(y_rows) {
                    let rows_eff = y_rows.min(piece_end - yt);
                    for row in yt..yt + rows_eff {
                        let slice = &mut y[row * n + nb..row * n + nb + n2_eff];
                        post.apply(row, nb, n2_eff, n, slice);
                    }
                    trace.record(
                        TransferKind::Dma,
                        MemoryLevel::Am,
                        MemoryLevel::Ddr,
                        (rows_eff * n2_eff) as u64 * b,
                        "y_out",
                    );
                }
            }
        }
    }
    Ok(y)
}

#[allow(clippy::too_many_arguments)]
fn run_broadcast_x(
    x: &Tensor,
    w: &Tensor,
    plan: &TilePlan,
    spec: Option<&HardwareSpec>,
    mut mem: Option<&mut SimMemory>,
    trace: &mut TransferTrace,
    post: &PostOp<'_>,
    m: usize,
    k: usize,
    n: usize,
    b: u64,
) -> Result<Vec<f32>, ExecError> {
    let (k_2, n_2) = (plan.k_2 as usize, plan.n_2 as usize);
    let y_rows = plan.y_tile_rows as usize;
    let xd = x.data();
    let wd = w.data();
    let mut y = vec![0.0f32; m * n];

    if let (Some(mem), Some(spec)) = (mem.as_mut(), spec) {
        // All m rows of X sit in every DSP's SM; the N dimension is
        // partitioned, so each DSP holds a W strip and its Y columns.
        let n_per_dsp = div_ceil(n as u64, spec.dsps_per_cluster as u64);
        mem.charge_hint(
            MemoryLevel::Sm,
            2 * b * (m * k_2) as u64,
            "broadcast x buffers",
            "use the W-broadcast dataflow for tall inputs",
        )?;
        mem.charge(MemoryLevel::Am, 2 * b * plan.k_2 * n_per_dsp, "w strip buffers")?;
        mem.charge(MemoryLevel::Am, b * m as u64 * n_per_dsp, "y accumulator")?;
    }

    for k2b in (0..k).step_by(k_2) {
        let k2_eff = k_2.min(k - k2b);
        trace.record(
            TransferKind::Broadcast,
            MemoryLevel::Ddr,
            MemoryLevel::Sm,
            (m * k2_eff) as u64 * b,
            "x_bcast",
        );
        // Aggregate of the per-DSP W strips for this K step.
        trace.record(
            TransferKind::Dma,
            MemoryLevel::Ddr,
            MemoryLevel::Am,
            (k2_eff * n) as u64 * b,
            "w_dma",
        );
        for row in 0..m {
            let yrow = &mut y[row * n..(row + 1) * n];
            for kk in k2b..k2b + k2_eff {
                let xv = xd[row * k + kk];
                if xv == 0.0 {
                    continue;
                }
                let wrow = &wd[kk * n..(kk + 1) * n];
                for (yj, wj) in yrow.iter_mut().zip(wrow) {
                    *yj += xv * wj;
                }
            }
        }
    }
    for nb in (0..n).step_by(n_2) {
        let n2_eff = n_2.min(n - nb);
        for yt in (0..m).step_by(y_rows) {
            let rows_eff = y_rows.min(m - yt);
            for row in yt..yt + rows_eff {
                let slice = &mut y[row * n + nb..row * n + nb + n2_eff];
                post.apply(row, nb, n2_eff, n, slice);
            }
            trace.record(
                TransferKind::Dma,
                MemoryLevel::Am,
                MemoryLevel::Ddr,
                (rows_eff * n2_eff) as u64 * b,
                "y_out",
            );
        }
    }
    Ok(y)
}
