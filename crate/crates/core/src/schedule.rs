//! Five-slot VLIW issue model: schedule representation, latency table,
//! read-after-write hazard checking (wrap-aware for software-pipelined
//! loop bodies), steady-state kernel metrics, and kernel-launch overhead.
//!
//! The pipeline model is in-order, one bundle per cycle once hazard-free.
//! An invalid schedule is reported, never repaired.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScheduleError {
    #[error("unknown instruction '{0}'")]
    UnknownInstruction(String),
    #[error("schedule parse error at line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("schedule has {0} hazard(s); see report")]
    InvalidSchedule(HazardReport),
}

/// The five issue slots of one bundle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Slot {
    Vmac,
    Smac,
    Sldst,
    Vldst,
    Sieu,
}

pub const SLOTS: [Slot; 5] = [Slot::Vmac, Slot::Smac, Slot::Sldst, Slot::Vldst, Slot::Sieu];

impl Slot {
    pub fn name(self) -> &'static str {
        match self {
            Slot::Vmac => "VMAC",
            Slot::Smac => "SMAC",
            Slot::Sldst => "SLDST",
            Slot::Vldst => "VLDST",
            Slot::Sieu => "SIEU",
        }
    }

    fn parse(s: &str) -> Option<Slot> {
        match s.trim().to_ascii_uppercase().as_str() {
            "VMAC" => Some(Slot::Vmac),
            "SMAC" => Some(Slot::Smac),
            "SLDST" => Some(Slot::Sldst),
            "VLDST" => Some(Slot::Vldst),
            "SIEU" => Some(Slot::Sieu),
            _ => None,
        }
    }

    fn index(self) -> usize {
        match self {
            Slot::Vmac => 0,
            Slot::Smac => 1,
            Slot::Sldst => 2,
            Slot::Vldst => 3,
            Slot::Sieu => 4,
        }
    }
}

impl std::fmt::Display for Slot {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.name())
    }
}

/// Latency and default issue slot of one opcode.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionClass {
    pub name: String,
    pub latency_cycles: u32,
    pub slot: Slot,
    /// True when the latency is not documented and defaults to 1 cycle.
    pub assumed: bool,
}

/// Opcode -> class map. `builtin()` carries the documented kernel opcodes;
/// the fused-kernel helper opcodes default to 1 cycle and are flagged as
/// assumptions in reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyTable {
    entries: BTreeMap<String, InstructionClass>,
}

impl LatencyTable {
    pub fn empty() -> Self {
        Self {
            entries: BTreeMap::new(),
        }
    }

    pub fn builtin() -> Self {
        let mut t = Self::empty();
        // Documented latencies.
        t.insert("vfmulas32", 6, Slot::Vmac, false);
        t.insert("svbcast", 4, Slot::Smac, false);
        t.insert("sldh", 7, Slot::Sldst, false);
        t.insert("sbale2", 1, Slot::Sieu, false);
        t.insert("vldw", 9, Slot::Vldst, false);
        // Fused-kernel helpers with undocumented latency.
        for (name, slot) in [
            ("vec_neg", Slot::Vmac),
            ("bale2lh", Slot::Sieu),
            ("vec_muli", Slot::Vmac),
            ("vm_sinf32_u35", Slot::Vmac),
            ("vm_cosf32_u35", Slot::Vmac),
            ("mula", Slot::Vmac),
            ("generic", Slot::Sieu),
        ] {
            t.insert(name, 1, slot, true);
        }
        t
    }

    pub fn insert(&mut self, name: &str, latency_cycles: u32, slot: Slot, assumed: bool) {
        self.entries.insert(
            name.to_string(),
            InstructionClass {
                name: name.to_string(),
                latency_cycles,
                slot,
                assumed,
            },
        );
    }

    /// Overrides the latency of an existing or new opcode (marks it as no
    /// longer assumed).
    pub fn with_latency(mut self, name: &str, latency_cycles: u32) -> Self {
        let slot = self.entries.get(name).map(|c| c.slot).unwrap_or(Slot::Sieu);
        self.insert(name, latency_cycles, slot, false);
        self
    }

    pub fn get(&self, name: &str) -> Option<&InstructionClass> {
        self.entries.get(name)
    }
}

/// One instruction instance: opcode plus opaque register operands.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instruction {
    pub opcode: String,
    pub dst: Option<String>,
    pub srcs: Vec<String>,
}

impl Instruction {
    pub fn new(opcode: &str, dst: Option<&str>, srcs: &[&str]) -> Self {
        Self {
            opcode: opcode.to_string(),
            dst: dst.map(str::to_string),
            srcs: srcs.iter().map(|s| s.to_string()).collect(),
        }
    }
}

/// One issue cycle: at most one instruction per slot.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bundle {
    slots: [Option<Instruction>; 5],
}

impl Bundle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, slot: Slot, instr: Instruction) -> Self {
        self.slots[slot.index()] = Some(instr);
        self
    }

    pub fn get(&self, slot: Slot) -> Option<&Instruction> {
        self.slots[slot.index()].as_ref()
    }

    pub fn iter(&self) -> impl Iterator<Item = (Slot, &Instruction)> {
        SLOTS
            .iter()
            .filter_map(move |&s| self.slots[s.index()].as_ref().map(|i| (s, i)))
    }

    pub fn is_empty(&self) -> bool {
        self.slots.iter().all(Option::is_none)
    }
}

/// An ordered bundle list. With `loop_body`, register dependencies wrap
/// modulo the body length (software pipelining).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Schedule {
    pub bundles: Vec<Bundle>,
    pub loop_body: bool,
}

impl Schedule {
    pub fn new(bundles: Vec<Bundle>, loop_body: bool) -> Self {
        Self { bundles, loop_body }
    }

    /// Renders the plain-text bundle format accepted by [`parse_schedule`].
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for bundle in &self.bundles {
            if bundle.is_empty() {
                out.push_str("nop\n");
                continue;
            }
            let items: Vec<String> = bundle
                .iter()
                .map(|(slot, i)| {
                    let mut s = format!("{}:{}", slot.name(), i.opcode);
                    if let Some(d) = &i.dst {
                        s.push(' ');
                        s.push_str(d);
                    }
                    if !i.srcs.is_empty() {
                        s.push_str(" <- ");
                        s.push_str(&i.srcs.join(","));
                    }
                    s
                })
                .collect();
            out.push_str(&items.join("; "));
            out.push('\n');
        }
        out
    }
}

/// One detected read-after-write violation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hazard {
    pub consumer_bundle: usize,
    pub slot: Slot,
    pub register: String,
    pub producer_bundle: usize,
    pub required_distance: u32,
    pub actual_distance: u32,
}

/// All violations of a schedule, plus the opcodes whose latency was assumed.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HazardReport {
    pub hazards: Vec<Hazard>,
    pub assumed_latencies: Vec<String>,
}

impl HazardReport {
    pub fn is_valid(&self) -> bool {
        self.hazards.is_empty()
    }
}

impl std::fmt::Display for HazardReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.hazards.is_empty() {
            write!(f, "no hazards")?;
        }
        for h in &self.hazards {
            writeln!(
                f,
                "bundle {} {}: reads {} {} cycle(s) after its producer in bundle {}, needs {}",
                h.consumer_bundle,
                h.slot,
                h.register,
                h.actual_distance,
                h.producer_bundle,
                h.required_distance
            )?;
        }
        Ok(())
    }
}

/// Checks every source register against the latency of its most recent
/// producer. Distances are measured in bundles; loop bodies wrap, so an
/// instruction may depend on its own previous-iteration write.
pub fn validate_schedule(s: &Schedule, table: &LatencyTable) -> Result<HazardReport, ScheduleError> {
    let n = s.bundles.len();
    let mut report = HazardReport::default();
    let mut assumed: Vec<String> = Vec::new();

    // Reject unknown opcodes up front so the report is total.
    for bundle in &s.bundles {
        for (_, instr) in bundle.iter() {
            match table.get(&instr.opcode) {
                None => return Err(ScheduleError::UnknownInstruction(instr.opcode.clone())),
                Some(class) if class.assumed => {
                    if !assumed.contains(&class.name) {
                        assumed.push(class.name.clone());
                    }
                }
                Some(_) => {}
            }
        }
    }

    for (ci, bundle) in s.bundles.iter().enumerate() {
        for (slot, instr) in bundle.iter() {
            for reg in &instr.srcs {
                if let Some((pi, producer)) = most_recent_producer(s, ci, reg) {
                    let actual = cyclic_distance(pi, ci, n, s.loop_body);
                    let required = table
                        .get(&producer.opcode)
                        .expect("opcodes checked above")
                        .latency_cycles;
                    if let Some(actual) = actual {
                        if actual < required {
                            report.hazards.push(Hazard {
                                consumer_bundle: ci,
                                slot,
                                register: reg.clone(),
                                producer_bundle: pi,
                                required_distance: required,
                                actual_distance: actual,
                            });
                        }
                    }
                }
            }
        }
    }
    assumed.sort();
    report.assumed_latencies = assumed;
    Ok(report)
}

/// Most recent bundle strictly before `ci` (cyclically if wrapping) whose
/// instructions write `reg`. Same-bundle writes are not visible to reads.
fn most_recent_producer<'a>(
    s: &'a Schedule,
    ci: usize,
    reg: &str,
) -> Option<(usize, &'a Instruction)> {
    let n = s.bundles.len();
    let steps = if s.loop_body { n } else { ci };
    for back in 1..=steps {
        let pi = (ci + n - back) % n;
        for (_, instr) in s.bundles[pi].iter() {
            if instr.dst.as_deref() == Some(reg) {
                return Some((pi, instr));
            }
        }
    }
    None
}

/// Distance in issued bundles from producer `pi` to consumer `ci`.
/// Returns None when `pi >= ci` in a non-wrapping schedule.
fn cyclic_distance(pi: usize, ci: usize, n: usize, wrap: bool) -> Option<u32> {
    if ci > pi {
        Some((ci - pi) as u32)
    } else if wrap {
        Some((ci + n - pi) as u32)
    } else {
        None
    }
}

/// Steady-state kernel metrics of a hazard-free schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelMetrics {
    pub cycles_per_iteration: usize,
    /// Fraction of bundles with the slot filled, in SLOTS order.
    pub slot_occupancy: BTreeMap<String, f64>,
    /// Each vfmulas32 drives 3 row groups x 32 lanes x one MAC.
    pub vmac_flops_per_iteration: u64,
    pub assumed_latencies: Vec<String>,
}

/// Computes cycles, per-slot occupancy, and VMAC FLOPs per iteration.
/// `flops_per_mac` selects whether a multiply-accumulate counts as 1 or 2
/// FLOPs. Refuses schedules with hazards.
pub fn steady_state_metrics(
    s: &Schedule,
    table: &LatencyTable,
    flops_per_mac: u32,
) -> Result<KernelMetrics, ScheduleError> {
    let report = validate_schedule(s, table)?;
    if !report.is_valid() {
        return Err(ScheduleError::InvalidSchedule(report));
    }
    let n = s.bundles.len();
    let mut occupancy = BTreeMap::new();
    let mut vmac_count = 0u64;
    for slot in SLOTS {
        let filled = s.bundles.iter().filter(|b| b.get(slot).is_some()).count();
        occupancy.insert(
            slot.name().to_string(),
            if n == 0 { 0.0 } else { filled as f64 / n as f64 },
        );
    }
    for bundle in &s.bundles {
        for (_, instr) in bundle.iter() {
            if instr.opcode == "vfmulas32" {
                vmac_count += 1;
            }
        }
    }
    Ok(KernelMetrics {
        cycles_per_iteration: n,
        slot_occupancy: occupancy,
        vmac_flops_per_iteration: vmac_count * 3 * 32 * flops_per_mac as u64,
        assumed_latencies: report.assumed_latencies,
    })
}

/// How a sequence of kernels is scheduled onto thread groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LaunchMode {
    /// Each operator creates and launches its own thread group.
    PerOp,
    /// One thread group runs the whole computation graph.
    Unified,
}

/// Total wall time of `n_ops` kernels under the given launch mode:
/// per-op pays `t_create + t_launch` for every kernel, unified pays it once.
pub fn kernel_launch_overhead(
    n_ops: usize,
    mode: LaunchMode,
    t_create: f64,
    t_launch: f64,
    t_exec: &[f64],
) -> Result<f64, ScheduleError> {
    if n_ops != t_exec.len() {
        return Err(ScheduleError::InvalidArgument(format!(
            "n_ops ({n_ops}) must match t_exec length ({})",
            t_exec.len()
        )));
    }
    if t_create < 0.0 || t_launch < 0.0 || t_exec.iter().any(|&t| t < 0.0) {
        return Err(ScheduleError::InvalidArgument(
            "times must be nonnegative".into(),
        ));
    }
    let exec_sum: f64 = t_exec.iter().sum();
    Ok(match mode {
        LaunchMode::PerOp => n_ops as f64 * (t_create + t_launch) + exec_sum,
        LaunchMode::Unified => t_create + t_launch + exec_sum,
    })
}

/// Parses the plain-text bundle format: one bundle per line, instructions
/// separated by `;`, each `SLOT:opcode [dst] [<- src1,src2,...]`.
/// `nop` denotes an empty bundle; blank lines and `#` comments are skipped.
pub fn parse_schedule(text: &str, loop_body: bool) -> Result<Schedule, ScheduleError> {
    let mut bundles = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if line.eq_ignore_ascii_case("nop") {
            bundles.push(Bundle::new());
            continue;
        }
        let mut bundle = Bundle::new();
        for item in line.split(';') {
            let item = item.trim();
            if item.is_empty() {
                continue;
            }
            let (slot_str, rest) = item.split_once(':').ok_or_else(|| ScheduleError::Parse {
                line: lineno + 1,
                message: format!("expected 'SLOT:opcode', got '{item}'"),
            })?;
            let slot = Slot::parse(slot_str).ok_or_else(|| ScheduleError::Parse {
                line: lineno + 1,
                message: format!("unknown slot '{slot_str}'"),
            })?;
            if bundle.get(slot).is_some() {
                return Err(ScheduleError::Parse {
                    line: lineno + 1,
                    message: format!("slot {slot} used twice in one bundle"),
                });
            }
            let (head, srcs) = match rest.split_once("<-") {
                Some((h, s)) => (
                    h.trim(),
                    s.split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(str::to_string)
                        .collect(),
                ),
                None => (rest.trim(), Vec::new()),
            };
            let mut parts = head.split_whitespace();
            let opcode = parts.next().ok_or_else(|| ScheduleError::Parse {
                line: lineno + 1,
                message: "missing opcode".into(),
            })?;
            let dst = parts.next().map(str::to_string);
            if parts.next().is_some() {
                return Err(ScheduleError::Parse {
                    line: lineno + 1,
                    message: format!("unexpected tokens after destination in '{item}'"),
                });
            }
            if dst.is_none() && srcs.is_empty() {
                return Err(ScheduleError::Parse {
                    line: lineno + 1,
                    message: format!("'{opcode}' has neither destination nor sources"),
                });
            }
            bundle = bundle.with(
                slot,
                Instruction {
                    opcode: opcode.to_string(),
                    dst,
                    srcs,
                },
            );
        }
        bundles.push(bundle);
    }
    Ok(Schedule::new(bundles, loop_body))
}

/// The embedded 16-bundle software-pipelined GEMM kernel loop body.
///
/// Per iteration each core consumes two K steps of a 6-row, 8-column outer
/// product: W vector loads, the scalar load -> pack -> broadcast chain for
/// the next iteration's X operands, and a vfmulas32 in every cycle.
/// Next-iteration operands are renamed onto the registers they refill, so
/// cross-iteration dependencies are expressed through the modular distance.
pub fn gemm_kernel_schedule() -> Schedule {
    // Register families:
    //   y{g}c{c}  accumulators (row group g, W column pair element c)
    //   bx{r}k{c} broadcast X value, row r, K step c
    //   px{r}k{c} packed scalar X
    //   lx{r}k{c} raw loaded scalar X
    //   w{k}p01 / w{k}p23  W vector registers, K step k, column pairs
    let vmac = |g: usize, c: usize, k: usize, wpair: &str| {
        let acc = format!("y{g}c{c}");
        let rows: [String; 3] = if g == 0 {
            [format!("bx0k{k}"), format!("bx1k{k}"), format!("bx2k{k}")]
        } else {
            [format!("bx3k{k}"), format!("bx4k{k}"), format!("bx5k{k}")]
        };
        Instruction {
            opcode: "vfmulas32".into(),
            dst: Some(acc.clone()),
            srcs: vec![
                acc,
                rows[0].clone(),
                rows[1].clone(),
                rows[2].clone(),
                wpair.to_string(),
            ],
        }
    };
    let svbcast = |r: usize, k: usize| Instruction {
        opcode: "svbcast".into(),
        dst: Some(format!("bx{r}k{k}")),
        srcs: vec![format!("px{r}k{k}")],
    };
    let sldh = |r: usize, k: usize| Instruction {
        opcode: "sldh".into(),
        dst: Some(format!("lx{r}k{k}")),
        srcs: vec![],
    };
    let sbale = |r: usize, k: usize| Instruction {
        opcode: "sbale2".into(),
        dst: Some(format!("px{r}k{k}")),
        srcs: vec![format!("lx{r}k{k}")],
    };
    let vldw = |k: usize, pair: &str| Instruction {
        opcode: "vldw".into(),
        dst: Some(format!("w{k}p{pair}")),
        srcs: vec![],
    };

    let mut b: Vec<Bundle> = Vec::with_capacity(16);
    // K step 0, row group 0 (rows 0-2), W columns 0..3.
    b.push(Bundle::new()
        .with(Slot::Vmac, vmac(0, 0, 0, "w0p01"))
        .with(Slot::Vldst, vldw(1, "23")));
    b.push(Bundle::new()
        .with(Slot::Vmac, vmac(0, 1, 0, "w0p01"))
        .with(Slot::Sieu, sbale(0, 1)));
    b.push(Bundle::new()
        .with(Slot::Vmac, vmac(0, 2, 0, "w0p23"))
        .with(Slot::Smac, svbcast(0, 1))
        .with(Slot::Sldst, sldh(0, 0))
        .with(Slot::Sieu, sbale(1, 1)));
    b.push(Bundle::new()
        .with(Slot::Vmac, vmac(0, 3, 0, "w0p23"))
        .with(Slot::Smac, svbcast(1, 1))
        .with(Slot::Sldst, sldh(1, 0))
        .with(Slot::Sieu, sbale(2, 1)));
    // K step 0, row group 1 (rows 3-5).
    b.push(Bundle::new()
        .with(Slot::Vmac, vmac(1, 0, 0, "w0p01"))
        .with(Slot::Smac, svbcast(2, 1))
        .with(Slot::Sldst, sldh(2, 0))
        .with(Slot::Sieu, sbale(3, 1)));
    b.push(Bundle::new()
        .with(Slot::Vmac, vmac(1, 1, 0, "w0p01"))
        .with(Slot::Smac, svbcast(3, 1))
        .with(Slot::Sldst, sldh(3, 0))
        .with(Slot::Sieu, sbale(4, 1)));
    b.push(Bundle::new()
        .with(Slot::Vmac, vmac(1, 2, 0, "w0p23"))
        .with(Slot::Smac, svbcast(4, 1))
        .with(Slot::Sldst, sldh(4, 0))
        .with(Slot::Sieu, sbale(5, 1)));
    b.push(Bundle::new()
        .with(Slot::Vmac, vmac(1, 3, 0, "w0p23"))
        .with(Slot::Smac, svbcast(5, 1))
        .with(Slot::Sldst, sldh(5, 0))
        .with(Slot::Vldst, vldw(0, "01")));
    // K step 1, row group 0.
    b.push(Bundle::new()
        .with(Slot::Vmac, vmac(0, 0, 1, "w1p01"))
        .with(Slot::Vldst, vldw(0, "23")));
    b.push(Bundle::new()
        .with(Slot::Vmac, vmac(0, 1, 1, "w1p01"))
        .with(Slot::Sieu, sbale(0, 0)));
    b.push(Bundle::new()
        .with(Slot::Vmac, vmac(0, 2, 1, "w1p23"))
        .with(Slot::Smac, svbcast(0, 0))
        .with(Slot::Sldst, sldh(0, 1))
        .with(Slot::Sieu, sbale(1, 0)));
    b.push(Bundle::new()
        .with(Slot::Vmac, vmac(0, 3, 1, "w1p23"))
        .with(Slot::Smac, svbcast(1, 0))
        .with(Slot::Sldst, sldh(1, 1))
        .with(Slot::Sieu, sbale(2, 0)));
    // K step 1, row group 1.
    b.push(Bundle::new()
        .with(Slot::Vmac, vmac(1, 0, 1, "w1p01"))
        .with(Slot::Smac, svbcast(2, 0))
        .with(Slot::Sldst, sldh(2, 1))
        .with(Slot::Sieu, sbale(3, 0)));
    b.push(Bundle::new()
        .with(Slot::Vmac, vmac(1, 1, 1, "w1p01"))
        .with(Slot::Smac, svbcast(3, 0))
        .with(Slot::Sldst, sldh(3, 1))
        .with(Slot::Sieu, sbale(4, 0)));
    b.push(Bundle::new()
        .with(Slot::Vmac, vmac(1, 2, 1, "w1p23"))
        .with(Slot::Smac, svbcast(4, 0))
        .with(Slot::Sldst, sldh(4, 1))
        .with(Slot::Sieu, sbale(5, 0)));
    b.push(Bundle::new()
        .with(Slot::Vmac, vmac(1, 3, 1, "w1p23"))
        .with(Slot::Smac, svbcast(5, 0))
        .with(Slot::Sldst, sldh(5, 1))
        .with(Slot::Vldst, vldw(1, "01")));

    Schedule::new(b, true)
}
