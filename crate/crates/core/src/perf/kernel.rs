use std::collections::BTreeMap;

use serde::Serialize;

use super::{instr_cost, InstrCost, OpKind, PerfError};
use crate::bitserial::{Counters, MulScheme};
use crate::config::SystemConfig;
use crate::mapping::{io_pattern, tile, Dim, GemmShape, IoPattern, Level, Mapping, TilePlan};

/// `count` executions of `op` at width `bits`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ProgramStep {
    pub op: OpKind,
    pub bits: u32,
    pub count: u64,
    #[serde(skip)]
    pub cost: InstrCost,
}

fn ceil_log2(x: u64) -> u32 {
    64 - (x.max(1) - 1).leading_zeros()
}

/// Instructions one block issues per temporal iteration.
///
/// * K on columns with popcount reduction: one `pim_mul_red` per row slot,
///   then one `pim_add_parallel` per produced sum to accumulate it.
/// * K on columns without it: one multiply per row slot; the products are
///   exported.
/// * K on rows: a multiply and a serial add per row slot, summing the K
///   rows; each finished sum is folded into an in-array 32-bit accumulator
///   with one serial add per output row.
pub fn block_program(plan: &TilePlan, cfg: &SystemConfig) -> Result<Vec<ProgramStep>, PerfError> {
    let p = cfg.periph();
    let n = plan.shape.precision;
    let slots = plan.row_slots();
    let mul = if p.lb_enabled {
        OpKind::MulReuse
    } else {
        OpKind::MulBaseline
    };
    let step = |op: OpKind, bits: u32, count: u64| -> Result<ProgramStep, PerfError> {
        Ok(ProgramStep {
            op,
            bits,
            count,
            cost: instr_cost(op, bits, cfg)?,
        })
    };
    let mut prog = Vec::new();
    if plan.column_reduction {
        if p.pr_enabled {
            let scheme = if p.lb_enabled {
                MulScheme::Reuse
            } else {
                MulScheme::Baseline
            };
            let segments = plan.segments();
            prog.push(step(OpKind::MulRed { scheme, segments }, n, slots)?);
            prog.push(step(OpKind::AddParallel, 32, slots * segments)?);
        } else {
            prog.push(step(mul, n, slots)?);
        }
    } else {
        let k_sub = plan.sub_tile[Dim::K.index()];
        let width = (2 * n + ceil_log2(k_sub)).min(32);
        prog.push(step(mul, n, slots)?);
        let add = OpKind::AddSerial {
            buffered: p.lb_enabled,
        };
        prog.push(step(add, width, slots)?);
        prog.push(step(add, 32, slots / k_sub)?);
    }
    Ok(prog)
}

fn program_latency(prog: &[ProgramStep]) -> f64 {
    prog.iter().map(|s| s.count as f64 * s.cost.latency_ns).sum()
}

/// Blocks of one bank share its PEs and run one after another; banks run
/// in parallel. With `merge`, block partial sums over K are merged in the
/// bank with `pim_add_parallel`.
fn schedule(plan: &TilePlan, cfg: &SystemConfig, merge: bool) -> Result<(Vec<ProgramStep>, f64), PerfError> {
    let prog = block_program(plan, cfg)?;
    let per_bank = plan.temporal_iterations * plan.used_at(Level::A);
    let mut latency = program_latency(&prog) * per_bank as f64;
    let mut steps: Vec<ProgramStep> = prog
        .into_iter()
        .map(|s| ProgramStep {
            count: s.count * per_bank,
            ..s
        })
        .collect();
    let partials = plan.partials_in_bank();
    if merge && partials > 1 {
        let outputs = plan.block_tile[Dim::M.index()] * plan.block_tile[Dim::N.index()];
        let step = ProgramStep {
            op: OpKind::AddParallel,
            bits: 32,
            count: outputs * (partials - 1),
            cost: instr_cost(OpKind::AddParallel, 32, cfg)?,
        };
        latency += program_latency(&[step]);
        steps.push(step);
    }
    Ok((steps, latency))
}

/// Schedule and host traffic of a plan. When the popcount unit can merge
/// partials in the bank, the cheaper of merging and exporting them is
/// taken.
fn plan_totals(plan: &TilePlan, cfg: &SystemConfig) -> Result<(Vec<ProgramStep>, f64, IoPattern), PerfError> {
    let eval = |merge: bool| -> Result<_, PerfError> {
        let (steps, pim) = schedule(plan, cfg, merge)?;
        Ok((steps, pim, io_pattern(plan, cfg, merge)))
    };
    let merged = eval(cfg.periph().pr_enabled)?;
    if !cfg.periph().pr_enabled || plan.partials_in_bank() == 1 {
        return Ok(merged);
    }
    let exported = eval(false)?;
    let total = |t: &(Vec<ProgramStep>, f64, IoPattern)| t.1 + tile_io_latency(&t.2, cfg);
    Ok(if total(&exported) < total(&merged) {
        exported
    } else {
        merged
    })
}

/// PIM latency of a plan: the busiest bank's instruction time.
pub fn tile_compute_latency(plan: &TilePlan, cfg: &SystemConfig) -> Result<f64, PerfError> {
    Ok(plan_totals(plan, cfg)?.1)
}

/// Transfer time of `io` over one channel plus a row cycle per bus region
/// switched.
pub fn tile_io_latency(io: &IoPattern, cfg: &SystemConfig) -> f64 {
    let t = cfg.timing();
    let regions = (io.write_regions + io.read_regions) as f64;
    io.total_bytes() / t.channel_bandwidth_bytes_per_s * 1e9 + regions * (t.t_rcd_ns + t.t_rp_ns)
}

pub fn io_latency(plan: &TilePlan, cfg: &SystemConfig) -> Result<f64, PerfError> {
    Ok(tile_io_latency(&plan_totals(plan, cfg)?.2, cfg))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LatencyReport {
    pub shape: GemmShape,
    pub mapping: String,
    pub pim_latency_ns: f64,
    pub io_latency_ns: f64,
    pub total_ns: f64,
    /// Instructions issued over all banks, by mnemonic.
    pub histogram: BTreeMap<String, u64>,
    /// Engine events over all banks.
    pub events: Counters,
    pub io: IoPattern,
    pub temporal_iterations: u64,
    pub useful_macs: u64,
    pub pe_utilization: f64,
}

impl LatencyReport {
    pub fn compute_fraction(&self) -> f64 {
        if self.total_ns > 0.0 {
            self.pim_latency_ns / self.total_ns
        } else {
            0.0
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub const CSV_COLUMNS: [&'static str; 8] = [
        "shape",
        "precision",
        "mapping",
        "pim_ns",
        "io_ns",
        "total_ns",
        "pe_utilization",
        "temporal_iterations",
    ];

    pub fn csv_record(&self) -> [String; 8] {
        [
            self.shape.to_string(),
            self.shape.precision.to_string(),
            self.mapping.clone(),
            format!("{:.3}", self.pim_latency_ns),
            format!("{:.3}", self.io_latency_ns),
            format!("{:.3}", self.total_ns),
            format!("{:.6}", self.pe_utilization),
            self.temporal_iterations.to_string(),
        ]
    }
}

/// PIM and I/O latency of `shape` under `mapping`, without the breakdown.
pub fn kernel_totals(
    shape: &GemmShape,
    mapping: &Mapping,
    cfg: &SystemConfig,
) -> Result<(f64, f64), PerfError> {
    let plan = tile(shape, mapping, cfg);
    let (_, pim, io) = plan_totals(&plan, cfg)?;
    Ok((pim, tile_io_latency(&io, cfg)))
}

/// Latency of `shape` under `mapping`.
///
/// PE utilization counts only real (unpadded) MACs, each charged the
/// latency of the multiply that performs it.
pub fn kernel_latency(
    shape: &GemmShape,
    mapping: &Mapping,
    cfg: &SystemConfig,
) -> Result<LatencyReport, PerfError> {
    let plan = tile(shape, mapping, cfg);
    let (steps, pim, io) = plan_totals(&plan, cfg)?;
    let io_ns = tile_io_latency(&io, cfg);

    let banks = plan.used_banks();
    let mut histogram = BTreeMap::new();
    let mut events = Counters::default();
    for s in &steps {
        *histogram.entry(s.op.name().to_string()).or_insert(0) += s.count * banks;
        events += s.cost.counters().scaled(s.count * banks);
    }

    let mac_latency = steps
        .iter()
        .find(|s| s.op.is_multiply())
        .map_or(0.0, |s| s.cost.latency_ns);
    let useful = shape.macs();
    let utilization = if pim > 0.0 {
        (useful as f64 * mac_latency / (cfg.total_pes() as f64 * pim)).min(1.0)
    } else {
        0.0
    };
    Ok(LatencyReport {
        shape: *shape,
        mapping: mapping.literal(),
        pim_latency_ns: pim,
        io_latency_ns: io_ns,
        total_ns: pim + io_ns,
        histogram,
        events,
        io,
        temporal_iterations: plan.temporal_iterations,
        useful_macs: useful,
        pe_utilization: utilization,
    })
}
