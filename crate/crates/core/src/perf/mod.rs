//! Closed-form latency model.
//!
//! Instruction costs reproduce the bit-serial engine's event counters
//! exactly; kernel latency combines them with the tile plan and the I/O
//! pattern inferred for a mapping.

mod kernel;

pub use kernel::{
    block_program, io_latency, kernel_latency, kernel_totals, tile_compute_latency, tile_io_latency,
    LatencyReport, ProgramStep,
};

use serde::Serialize;
use thiserror::Error;

use crate::bitserial::{horizontal_rows, Counters, MulScheme};
use crate::config::{SystemConfig, TimingParams};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum PerfError {
    #[error("precision {n} outside 1..={max}")]
    Precision { n: u32, max: u32 },
}

/// Instruction shapes the compute model charges for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum OpKind {
    MulReuse,
    MulBaseline,
    /// Fused multiply and popcount reduction producing `segments` sums.
    MulRed {
        scheme: MulScheme,
        segments: u64,
    },
    AddSerial {
        buffered: bool,
    },
    PopcountReduce,
    AddParallel,
}

impl OpKind {
    pub fn name(&self) -> &'static str {
        match self {
            OpKind::MulReuse => "pim_mul",
            OpKind::MulBaseline => "pim_mul_baseline",
            OpKind::MulRed {
                scheme: MulScheme::Reuse,
                ..
            } => "pim_mul_red",
            OpKind::MulRed {
                scheme: MulScheme::Baseline,
                ..
            } => "pim_mul_red_baseline",
            OpKind::AddSerial { .. } => "pim_add",
            OpKind::PopcountReduce => "popcount_reduce",
            OpKind::AddParallel => "pim_add_parallel",
        }
    }

    pub fn is_multiply(&self) -> bool {
        matches!(
            self,
            OpKind::MulReuse | OpKind::MulBaseline | OpKind::MulRed { .. }
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InstrCost {
    pub array_row_reads: u64,
    pub array_row_writes: u64,
    pub lb_accesses: u64,
    pub pe_steps: u64,
    pub pc_steps: u64,
    pub addp_steps: u64,
    pub latency_ns: f64,
}

impl InstrCost {
    pub fn array_row_accesses(&self) -> u64 {
        self.array_row_reads + self.array_row_writes
    }

    /// The same numbers as engine counters.
    pub fn counters(&self) -> Counters {
        Counters {
            array_row_read: self.array_row_reads,
            array_row_write: self.array_row_writes,
            lb_access: self.lb_accesses,
            pe_step: self.pe_steps,
            pc_step: self.pc_steps,
            addp_step: self.addp_steps,
            bcast_word: 0,
        }
    }
}

/// Latency of a bag of events under `timing`.
pub fn event_latency(c: &Counters, timing: &TimingParams) -> f64 {
    c.array_accesses() as f64 * timing.array_access_ns()
        + c.lb_access as f64 * timing.t_lb_ns
        + c.pe_step as f64 * timing.t_pe_ns
        + c.pc_step as f64 * timing.t_pc_ns
        + c.addp_step as f64 * timing.t_addp_ns
}

/// Cost of one `op` at precision `n` (bits of each operand; for serial
/// adds, the operand width).
pub fn instr_cost(op: OpKind, n: u32, cfg: &SystemConfig) -> Result<InstrCost, PerfError> {
    let max = if op.is_multiply() { cfg.max_precision() } else { 64 };
    if (n == 0 || n > max) && op != OpKind::AddParallel {
        return Err(PerfError::Precision { n, max });
    }
    let n = u64::from(n);
    let (reads, writes, lb, pe, pc, addp) = match op {
        // n multiplicand loads; per step one multiplier load, n PE updates,
        // one retire and one carry write; n final retires
        OpKind::MulReuse => (2 * n, 2 * n, n * n + 5 * n, n * (n + 1), 0, 0),
        OpKind::MulBaseline => (n * n + n, 2 * n * n, 0, 2 * n * n, 0, 0),
        OpKind::MulRed { scheme, segments } => {
            let p = cfg.periph();
            let rows = horizontal_rows(segments, p.popcount_width_bits, u64::from(p.lb_cols));
            match scheme {
                MulScheme::Reuse => (2 * n, rows, n * n + 5 * n, n * (n + 1), 2 * n, 0),
                MulScheme::Baseline => (n * n + n, 2 * n * (n - 1) + rows, 0, 2 * n * n, 2 * n, 0),
            }
        }
        OpKind::AddSerial { buffered } => (2 * n, n + 1, if buffered { 4 * n + 2 } else { 0 }, n + 1, 0, 0),
        OpKind::PopcountReduce => (n, 0, n, 0, n, 0),
        OpKind::AddParallel => (0, 0, 0, 0, 0, 1),
    };
    let mut cost = InstrCost {
        array_row_reads: reads,
        array_row_writes: writes,
        lb_accesses: lb,
        pe_steps: pe,
        pc_steps: pc,
        addp_steps: addp,
        latency_ns: 0.0,
    };
    cost.latency_ns = event_latency(&cost.counters(), cfg.timing());
    Ok(cost)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bitserial::{
        add_parallel, add_serial, mul_baseline, mul_red, mul_reuse, popcount_reduce, transpose_to_vertical,
        EventTrace, LocalityBufferState,
    };
    use crate::config::preset;

    fn engine_counters(op: OpKind, n: u32, lanes: usize) -> Counters {
        let vals: Vec<u64> = (0..lanes as u64).map(|i| (i * 7 + 3) % (1 << n)).collect();
        let a = transpose_to_vertical(&vals, n).unwrap();
        let b = transpose_to_vertical(&vals.iter().rev().copied().collect::<Vec<_>>(), n).unwrap();
        let mut lb = LocalityBufferState::new(17, 1024);
        let mut t = EventTrace::new();
        match op {
            OpKind::MulReuse => {
                mul_reuse(&a, &b, n, &mut lb, &mut t).unwrap();
            }
            OpKind::MulBaseline => {
                mul_baseline(&a, &b, n, &mut t).unwrap();
            }
            OpKind::MulRed { scheme, segments } => {
                let seg = lanes / segments as usize;
                mul_red(&a, &b, n, scheme, &mut lb, seg, 32, &mut t).unwrap();
            }
            OpKind::AddSerial { buffered } => {
                add_serial(&a, &b, n, buffered, &mut t).unwrap();
            }
            OpKind::PopcountReduce => {
                popcount_reduce(&a, 32, &mut t).unwrap();
            }
            OpKind::AddParallel => {
                add_parallel(1, 2, &mut t);
            }
        }
        *t.counters()
    }

    #[test]
    fn model_counters_equal_engine_traces() {
        let cfg = preset("racam_full").unwrap();
        let ops = [
            OpKind::MulReuse,
            OpKind::MulBaseline,
            OpKind::MulRed {
                scheme: MulScheme::Reuse,
                segments: 1,
            },
            OpKind::MulRed {
                scheme: MulScheme::Reuse,
                segments: 64,
            },
            OpKind::MulRed {
                scheme: MulScheme::Baseline,
                segments: 8,
            },
            OpKind::AddSerial { buffered: true },
            OpKind::AddSerial { buffered: false },
            OpKind::PopcountReduce,
            OpKind::AddParallel,
        ];
        for n in [2u32, 4, 8] {
            for op in ops {
                let model = instr_cost(op, n, &cfg).unwrap().counters();
                assert_eq!(model, engine_counters(op, n, 1024), "{op:?} n={n}");
            }
        }
    }

    #[test]
    fn reuse_multiply_int4_has_16_array_accesses() {
        let cfg = preset("racam_full").unwrap();
        assert_eq!(
            instr_cost(OpKind::MulReuse, 4, &cfg)
                .unwrap()
                .array_row_accesses(),
            16
        );
    }

    #[test]
    fn baseline_is_at_least_four_times_slower_at_int8() {
        let cfg = preset("racam_full").unwrap();
        let reuse = instr_cost(OpKind::MulReuse, 8, &cfg).unwrap().latency_ns;
        let base = instr_cost(OpKind::MulBaseline, 8, &cfg).unwrap().latency_ns;
        assert!(base / reuse >= 4.0, "{}", base / reuse);
    }

    #[test]
    fn parallel_add_is_one_fixed_step() {
        let cfg = preset("racam_full").unwrap();
        let c = instr_cost(OpKind::AddParallel, 8, &cfg).unwrap();
        assert_eq!(c.latency_ns, cfg.timing().t_addp_ns);
        assert_eq!(c, instr_cost(OpKind::AddParallel, 2, &cfg).unwrap());
    }

    #[test]
    fn precision_is_bounded() {
        let cfg = preset("racam_full").unwrap();
        assert_eq!(
            instr_cost(OpKind::MulReuse, 9, &cfg),
            Err(PerfError::Precision { n: 9, max: 8 })
        );
        assert!(instr_cost(OpKind::AddSerial { buffered: true }, 23, &cfg).is_ok());
    }
}
