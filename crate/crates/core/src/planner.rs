//! Memory, communication, and performance models for hybrid-parallel
//! deployments, plus the staged configuration search.
//!
//! The search follows the deployment procedure: pick a decode TP that
//! minimizes layer time under memory and communication constraints, take
//! the smallest decode PP that fits, size the buffer pool from the target
//! batch's KV, take the smallest prefill PP that fits, then choose the
//! prefill DP minimizing `pool_clusters * max(t_p/dp_p, t_d)`.

use crate::hw::{HardwareSpec, Precision};
use crate::tiling::div_ceil;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlanError {
    #[error("no feasible parallel configuration: {binding}")]
    Infeasible { binding: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Deployed model description.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub model_size_bytes: u64,
    pub layers: u32,
    pub s_max: u64,
    pub d_emb: u64,
    pub precision: Precision,
}

impl ModelSpec {
    pub fn validate(&self) -> Result<(), PlanError> {
        if self.model_size_bytes == 0 || self.layers == 0 || self.s_max == 0 || self.d_emb == 0 {
            return Err(PlanError::InvalidArgument(
                "model fields must be strictly positive".into(),
            ));
        }
        Ok(())
    }

    /// Full-model KV bytes one request retains across decode.
    pub fn kv_bytes_per_request(&self) -> u64 {
        self.s_max * 2 * self.precision.bytes_per_element() * self.d_emb * self.layers as u64
    }
}

/// A hybrid-parallel deployment choice. Decode data parallelism is fixed
/// at 1; the total decode batch is `pp_d * b_micro_d`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParallelConfig {
    pub tp: u32,
    pub pp_p: u32,
    pub pp_d: u32,
    pub dp_p: u32,
    pub dp_d: u32,
    pub b_micro_p: u32,
    pub b_micro_d: u32,
    pub buffer_pool_clusters: u32,
}

impl ParallelConfig {
    pub fn validate(&self) -> Result<(), PlanError> {
        let fields = [
            ("tp", self.tp),
            ("pp_p", self.pp_p),
            ("pp_d", self.pp_d),
            ("dp_p", self.dp_p),
            ("dp_d", self.dp_d),
            ("b_micro_p", self.b_micro_p),
            ("b_micro_d", self.b_micro_d),
            ("buffer_pool_clusters", self.buffer_pool_clusters),
        ];
        for (name, v) in fields {
            if v == 0 {
                return Err(PlanError::InvalidArgument(format!("{name} must be >= 1")));
            }
        }
        if self.dp_d != 1 {
            return Err(PlanError::InvalidArgument(
                "decode data parallelism is fixed at 1".into(),
            ));
        }
        Ok(())
    }

    pub fn total_batch(&self) -> u64 {
        self.pp_d as u64 * self.b_micro_d as u64
    }
}

/// Measured or estimated per-layer and per-stage times at DP = 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LayerTimes {
    pub t_norm: f64,
    pub t_self_attention: f64,
    pub t_ffn: f64,
    pub t_all_reduce: f64,
    pub t_launch_group: f64,
    /// Prefill stage latency at DP = 1.
    pub t_p: f64,
    /// Decode stage latency.
    pub t_d: f64,
}

impl LayerTimes {
    pub fn validate(&self) -> Result<(), PlanError> {
        let fields = [
            self.t_norm,
            self.t_self_attention,
            self.t_ffn,
            self.t_all_reduce,
            self.t_launch_group,
            self.t_p,
            self.t_d,
        ];
        if fields.iter().any(|v| !(*v >= 0.0)) {
            return Err(PlanError::InvalidArgument(
                "layer times must be nonnegative".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MemoryFootprint {
    pub params_bytes: u64,
    pub kv_bytes: u64,
}

impl MemoryFootprint {
    pub fn total(&self) -> u64 {
        self.params_bytes + self.kv_bytes
    }
}

/// Per-cluster prefill footprint: parameters split over `pp_p`; one
/// layer's KV for the prefill micro-batch (layers migrate as they finish).
pub fn prefill_memory(model: &ModelSpec, cfg: &ParallelConfig) -> MemoryFootprint {
    let d_size = model.precision.bytes_per_element();
    MemoryFootprint {
        params_bytes: div_ceil(model.model_size_bytes, cfg.pp_p as u64),
        kv_bytes: cfg.b_micro_p as u64 * model.s_max * 2 * d_size * model.d_emb,
    }
}

/// Per-cluster decode footprint: parameters split over `tp * pp_d`, full
/// per-layer KV for the decode micro-batch split over `tp`.
pub fn decode_memory(model: &ModelSpec, cfg: &ParallelConfig) -> MemoryFootprint {
    let d_size = model.precision.bytes_per_element();
    let kv = cfg.b_micro_d as u64 * model.s_max * 2 * d_size * model.d_emb * model.layers as u64;
    MemoryFootprint {
        params_bytes: div_ceil(model.model_size_bytes, cfg.tp as u64 * cfg.pp_d as u64),
        kv_bytes: div_ceil(kv, cfg.tp as u64),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FeasibilityReport {
    pub prefill: MemoryFootprint,
    pub decode: MemoryFootprint,
    pub overhead_bytes: u64,
    pub limit_bytes: u64,
    pub prefill_feasible: bool,
    pub decode_feasible: bool,
    pub feasible: bool,
}

impl FeasibilityReport {
    /// Remaining bytes before the tighter stage hits the limit.
    pub fn margin_bytes(&self) -> i64 {
        let p = self.limit_bytes as i64 - (self.prefill.total() + self.overhead_bytes) as i64;
        let d = self.limit_bytes as i64 - (self.decode.total() + self.overhead_bytes) as i64;
        p.min(d)
    }
}

/// Both stages must fit per-cluster DDR strictly:
/// `params + kv + overhead < ddr_bytes`.
pub fn feasible(
    model: &ModelSpec,
    cfg: &ParallelConfig,
    overhead_bytes: u64,
    spec: &HardwareSpec,
) -> FeasibilityReport {
    let prefill = prefill_memory(model, cfg);
    let decode = decode_memory(model, cfg);
    let limit = spec.ddr_bytes;
    let prefill_feasible = prefill.total() + overhead_bytes < limit;
    let decode_feasible = decode.total() + overhead_bytes < limit;
    FeasibilityReport {
        prefill,
        decode,
        overhead_bytes,
        limit_bytes: limit,
        prefill_feasible,
        decode_feasible,
        feasible: prefill_feasible && decode_feasible,
    }
}

/// All-Reduce bytes per decode step across the TP group:
/// `B * 2 * d_emb * d_size * (tp - 1)`.
pub fn tp_comm_bytes(cfg: &ParallelConfig, model: &ModelSpec) -> u64 {
    cfg.total_batch() * 2 * model.d_emb * model.precision.bytes_per_element() * (cfg.tp as u64 - 1)
}

/// Single-layer latency on one cluster. TP divides attention and FFN but
/// adds two All-Reduces and two extra kernel-group launches.
pub fn layer_time(times: &LayerTimes, tp: u32) -> f64 {
    if tp <= 1 {
        times.t_norm + times.t_self_attention + times.t_norm + times.t_ffn
    } else {
        2.0 * times.t_norm
            + times.t_self_attention / tp as f64
            + times.t_ffn / tp as f64
            + 2.0 * times.t_all_reduce
            + 2.0 * times.t_launch_group
    }
}

/// Clusters a deployment occupies:
/// `dp_p * pp_p + tp * pp_d + buffer_pool_clusters`.
pub fn pool_clusters(cfg: &ParallelConfig) -> u64 {
    cfg.dp_p as u64 * cfg.pp_p as u64
        + cfg.tp as u64 * cfg.pp_d as u64
        + cfg.buffer_pool_clusters as u64
}

/// The quantity the search minimizes: `pool_clusters * max(t_p/dp_p, t_d)`.
pub fn objective(cfg: &ParallelConfig, times: &LayerTimes) -> f64 {
    pool_clusters(cfg) as f64 * (times.t_p / cfg.dp_p as f64).max(times.t_d)
}

/// Tunables of the staged search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchParams {
    pub b_micro_p: u32,
    pub b_micro_d: u32,
    /// Per-step All-Reduce byte budget; None leaves TP unconstrained by
    /// communication.
    pub comm_budget_bytes: Option<u64>,
    pub max_tp: u32,
    pub max_pp: u32,
    pub max_dp: u32,
}

impl Default for SearchParams {
    fn default() -> Self {
        Self {
            b_micro_p: 1,
            b_micro_d: 1,
            comm_budget_bytes: None,
            max_tp: 8,
            max_pp: 16,
            max_dp: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchOutcome {
    pub config: ParallelConfig,
    pub objective: f64,
    pub feasibility: FeasibilityReport,
    /// One line per decision the staged procedure made.
    pub steps: Vec<String>,
}

fn base_config(tp: u32, pp_d: u32, params: &SearchParams) -> ParallelConfig {
    ParallelConfig {
        tp,
        pp_p: 1,
        pp_d,
        dp_p: 1,
        dp_d: 1,
        b_micro_p: params.b_micro_p,
        b_micro_d: params.b_micro_d,
        buffer_pool_clusters: 1,
    }
}

fn smallest_feasible_pp_d(
    model: &ModelSpec,
    tp: u32,
    overhead: u64,
    spec: &HardwareSpec,
    params: &SearchParams,
) -> Option<u32> {
    (1..=params.max_pp).find(|&pp_d| {
        let cfg = base_config(tp, pp_d, params);
        feasible(model, &cfg, overhead, spec).decode_feasible
    })
}

fn smallest_feasible_pp_p(
    model: &ModelSpec,
    cfg: &ParallelConfig,
    overhead: u64,
    spec: &HardwareSpec,
    params: &SearchParams,
) -> Option<u32> {
    (1..=params.max_pp).find(|&pp_p| {
        let cfg = ParallelConfig { pp_p, ..*cfg };
        feasible(model, &cfg, overhead, spec).prefill_feasible
    })
}

fn buffer_pool_size(model: &ModelSpec, total_batch: u64, spec: &HardwareSpec) -> u32 {
    div_ceil(total_batch * model.kv_bytes_per_request(), spec.ddr_bytes).max(1) as u32
}

/// Staged configuration search. Errors name the binding constraint when
/// no configuration fits.
pub fn search_config(
    model: &ModelSpec,
    spec: &HardwareSpec,
    times: &LayerTimes,
    overhead_bytes: u64,
    clu_total: u32,
    params: &SearchParams,
) -> Result<SearchOutcome, PlanError> {
    model.validate()?;
    times.validate()?;
    if clu_total == 0 {
        return Err(PlanError::InvalidArgument("clu_total must be >= 1".into()));
    }
    let mut steps = Vec::new();

    // (i) Decode TP: minimize layer time among TPs with a feasible decode
    // split and acceptable All-Reduce volume. Ties take the smaller TP.
    let mut tp_choice: Option<(f64, u32, u32)> = None; // (layer_time, tp, pp_d)
    for tp in 1..=params.max_tp.min(clu_total.max(1)) {
        let Some(pp_d) = smallest_feasible_pp_d(model, tp, overhead_bytes, spec, params) else {
            continue;
        };
        let cfg = base_config(tp, pp_d, params);
        if let Some(budget) = params.comm_budget_bytes {
            if tp_comm_bytes(&cfg, model) > budget {
                continue;
            }
        }
        let lt = layer_time(times, tp);
        let better = match tp_choice {
            None => true,
            Some((best_lt, best_tp, _)) => lt < best_lt || (lt == best_lt && tp < best_tp),
        };
        if better {
            tp_choice = Some((lt, tp, pp_d));
        }
    }
    let Some((lt, tp, pp_d)) = tp_choice else {
        return Err(PlanError::Infeasible {
            binding: format!(
                "no decode TP in 1..={} fits {} bytes per cluster (memory or communication budget)",
                params.max_tp, spec.ddr_bytes
            ),
        });
    };
    steps.push(format!(
        "tp={tp}: minimal layer time {lt:.6e}s among memory- and comm-feasible TPs"
    ));

    // (ii) Smallest decode PP that fits (recorded with the chosen TP).
    steps.push(format!("pp_d={pp_d}: smallest decode split fitting per-cluster memory"));
    let mut cfg = base_config(tp, pp_d, params);

    // (iii) Target batch.
    let total_batch = cfg.total_batch();
    steps.push(format!("B={total_batch}: pp_d * b_micro_d"));

    // (iv) Buffer pool sized by the batch's KV.
    cfg.buffer_pool_clusters = buffer_pool_size(model, total_batch, spec);
    steps.push(format!(
        "buffer_pool={}: ceil(B * kv_per_request / ddr_bytes)",
        cfg.buffer_pool_clusters
    ));

    // (v) Smallest prefill PP that fits.
    let Some(pp_p) = smallest_feasible_pp_p(model, &cfg, overhead_bytes, spec, params) else {
        return Err(PlanError::Infeasible {
            binding: format!(
                "no prefill PP in 1..={} fits {} bytes per cluster",
                params.max_pp, spec.ddr_bytes
            ),
        });
    };
    cfg.pp_p = pp_p;
    steps.push(format!("pp_p={pp_p}: smallest prefill split fitting per-cluster memory"));

    // (vi) Prefill DP minimizing pool * max(t_p/dp_p, t_d) within the
    // cluster budget; ties prefer smaller dp_p, then the smaller pool.
    let mut best: Option<(f64, u32, u64)> = None; // (objective, dp_p, pool)
    for dp_p in 1..=params.max_dp {
        let candidate = ParallelConfig { dp_p, ..cfg };
        let pool = pool_clusters(&candidate);
        if pool > clu_total as u64 {
            break;
        }
        let obj = objective(&candidate, times);
        let better = match best {
            None => true,
            Some((bo, bd, bp)) => {
                obj < bo || (obj == bo && (dp_p < bd || (dp_p == bd && pool < bp)))
            }
        };
        if better {
            best = Some((obj, dp_p, pool));
        }
    }
    let Some((obj, dp_p, pool)) = best else {
        return Err(PlanError::Infeasible {
            binding: format!(
                "pool needs {} clusters even at dp_p=1 but only {clu_total} are available",
                pool_clusters(&ParallelConfig { dp_p: 1, ..cfg })
            ),
        });
    };
    cfg.dp_p = dp_p;
    steps.push(format!(
        "dp_p={dp_p}: minimizes pool*max(t_p/dp_p, t_d) = {obj:.6e} using {pool} clusters"
    ));

    let feas = feasible(model, &cfg, overhead_bytes, spec);
    if !feas.feasible {
        return Err(PlanError::Infeasible {
            binding: "staged choice fails the memory constraint re-check".into(),
        });
    }
    cfg.validate()?;
    Ok(SearchOutcome {
        config: cfg,
        objective: obj,
        feasibility: feas,
        steps,
    })
}

/// Exhaustive enumeration over (tp, pp_d, dp_p) up to the given bounds,
/// with pp_p and the buffer pool derived the same way the staged search
/// derives them. Returns the best feasible configuration and objective.
pub fn exhaustive_search(
    model: &ModelSpec,
    spec: &HardwareSpec,
    times: &LayerTimes,
    overhead_bytes: u64,
    clu_total: u32,
    params: &SearchParams,
    max_tp: u32,
    max_pp_d: u32,
    max_dp_p: u32,
) -> Option<(ParallelConfig, f64)> {
    let mut best: Option<(f64, ParallelConfig)> = None;
    for tp in 1..=max_tp {
        for pp_d in 1..=max_pp_d {
            let mut cfg = base_config(tp, pp_d, params);
            if let Some(budget) = params.comm_budget_bytes {
                if tp_comm_bytes(&cfg, model) > budget {
                    continue;
                }
            }
            cfg.buffer_pool_clusters = buffer_pool_size(model, cfg.total_batch(), spec);
            let Some(pp_p) = smallest_feasible_pp_p(model, &cfg, overhead_bytes, spec, params)
            else {
                continue;
            };
            cfg.pp_p = pp_p;
            for dp_p in 1..=max_dp_p {
                let candidate = ParallelConfig { dp_p, ..cfg };
                if pool_clusters(&candidate) > clu_total as u64 {
                    break;
                }
                if !feasible(model, &candidate, overhead_bytes, spec).feasible {
                    continue;
                }
                let obj = objective(&candidate, times);
                let better = match &best {
                    None => true,
                    Some((bo, bc)) => {
                        obj < *bo
                            || (obj == *bo
                                && (candidate.tp, candidate.pp_d, candidate.dp_p)
                                    < (bc.tp, bc.pp_d, bc.dp_p))
                    }
                };
                if better {
                    best = Some((obj, candidate));
                }
            }
        }
    }
    best.map(|(obj, cfg)| (cfg, obj))
}
