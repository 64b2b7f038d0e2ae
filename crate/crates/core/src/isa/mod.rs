//! The eight PIM commands, their wire encoding, and a bank-level FSM that
//! executes command programs on the bit-serial engine.
//!
//! An n-bit operand at row group `(s, r)` keeps bit `i` in subarray
//! `(s + i) mod S`, row `r + (s + i) div S`, so consecutive bit rows are
//! activated in different subarrays. Horizontal (accumulator) values sit in
//! one subarray starting at `(s, r)` and spill into following rows when the
//! block is narrower than the accumulator.

mod encoding;
mod file;

pub use encoding::{
    assemble, decode, decode_program, disassemble, encode, encode_program, Opcode, Operands, PimInstruction,
    RowGroup,
};
pub use file::{read_trace_file, write_trace_file, TraceFile};

use thiserror::Error;

use crate::bitserial::{
    add_parallel, add_serial, mul_baseline, mul_red, mul_reuse, transpose_to_vertical, BitMatrix,
    EngineError, EventTrace, LocalityBufferState, MulScheme,
};
use crate::config::SystemConfig;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum IsaError {
    #[error("unknown opcode {0:#08b}")]
    UnknownOpcode(u64),
    #[error("truncated command-word sequence")]
    Truncated,
    #[error("malformed command words: {0}")]
    Malformed(&'static str),
    #[error("invalid precision {0}")]
    BadPrecision(u32),
    #[error("word width {0} outside 6..=64")]
    BadWordWidth(u32),
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("mode error: {0}")]
    Mode(&'static str),
    #[error("{0} is disabled in this configuration")]
    UnitDisabled(&'static str),
    #[error("precision {prec} exceeds the configured maximum {max}")]
    PrecisionTooLarge { prec: u32, max: u32 },
    #[error("row group {group} with {rows} rows runs past the subarray")]
    AddressOutOfRange { group: RowGroup, rows: usize },
    #[error("bad trace file: {0}")]
    File(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum BroadcastMode {
    #[default]
    Off,
    Bank,
    Column,
    Both,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ModeState {
    pub pim_mode: bool,
    pub broadcast: BroadcastMode,
}

/// One block column-slice of a bank: every subarray restricted to the
/// `block_width` columns under the bank's PEs, plus the locality buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BankState {
    subarrays: Vec<BitMatrix>,
    lb: LocalityBufferState,
    mode: ModeState,
    max_precision: u32,
    acc_width: u32,
    lb_enabled: bool,
    pr_enabled: bool,
    bu_enabled: bool,
}

impl BankState {
    pub fn new(cfg: &SystemConfig) -> Self {
        let d = cfg.dram();
        let p = cfg.periph();
        let width = cfg.block_width() as usize;
        BankState {
            subarrays: (0..d.subarrays_per_bank)
                .map(|_| BitMatrix::zeros(width, d.rows_per_subarray as usize))
                .collect(),
            lb: LocalityBufferState::new(p.lb_rows as usize, p.lb_cols as usize),
            mode: ModeState::default(),
            max_precision: cfg.max_precision(),
            acc_width: p.popcount_width_bits,
            lb_enabled: p.lb_enabled,
            pr_enabled: p.pr_enabled,
            bu_enabled: p.bu_enabled,
        }
    }

    pub fn mode(&self) -> ModeState {
        self.mode
    }

    pub fn lanes(&self) -> usize {
        self.subarrays[0].lanes()
    }

    fn rows(&self) -> usize {
        self.subarrays[0].depth()
    }

    /// Physical (subarray, row) of logical bit `i` of an operand at `g`.
    /// Successive bits go to successive subarrays and move to the next row
    /// once every subarray has been used.
    fn locate(&self, g: RowGroup, i: usize) -> Result<(usize, usize), IsaError> {
        let count = self.subarrays.len();
        let linear = usize::from(g.subarray) + i;
        let r = usize::from(g.row) + linear / count;
        if usize::from(g.subarray) >= count || r >= self.rows() {
            return Err(IsaError::AddressOutOfRange {
                group: g,
                rows: i + 1,
            });
        }
        Ok((linear % count, r))
    }

    fn load(&self, g: RowGroup, n: usize) -> Result<BitMatrix, IsaError> {
        let mut m = BitMatrix::zeros(self.lanes(), n);
        for i in 0..n {
            let (s, r) = self.locate(g, i)?;
            m.row_mut(i).copy_from_slice(self.subarrays[s].row(r));
        }
        Ok(m)
    }

    fn store(&mut self, g: RowGroup, m: &BitMatrix) -> Result<(), IsaError> {
        for i in 0..m.depth() {
            let (s, r) = self.locate(g, i)?;
            self.subarrays[s].row_mut(r).copy_from_slice(m.row(i));
        }
        Ok(())
    }

    /// Rows occupied by one horizontal value of `acc_width` bits.
    fn horizontal_span(&self) -> usize {
        (self.acc_width as usize).div_ceil(self.lanes())
    }

    fn load_horizontal(&self, g: RowGroup) -> Result<u64, IsaError> {
        let span = self.horizontal_span();
        let (s, r) = self.locate(g, 0)?;
        if r + span > self.rows() {
            return Err(IsaError::AddressOutOfRange { group: g, rows: span });
        }
        let sub = &self.subarrays[s];
        let value = (0..self.acc_width as usize).fold(0u64, |acc, bit| {
            let on = sub.bit(r + bit / self.lanes(), bit % self.lanes());
            acc | u64::from(on) << bit
        });
        Ok(value)
    }

    fn store_horizontal(&mut self, g: RowGroup, value: u64) -> Result<(), IsaError> {
        let span = self.horizontal_span();
        let (s, r) = self.locate(g, 0)?;
        if r + span > self.rows() {
            return Err(IsaError::AddressOutOfRange { group: g, rows: span });
        }
        let lanes = self.lanes();
        let sub = &mut self.subarrays[s];
        for row in r..r + span {
            sub.row_mut(row).iter_mut().for_each(|w| *w = 0);
        }
        for bit in 0..self.acc_width as usize {
            sub.set(r + bit / lanes, bit % lanes, (value >> bit) & 1 == 1);
        }
        Ok(())
    }

    fn host_access(&self) -> Result<(), IsaError> {
        if self.mode.pim_mode {
            return Err(IsaError::Mode("normal DRAM access while in PIM mode"));
        }
        Ok(())
    }

    /// Host write of one `n`-bit value per lane in vertical layout.
    pub fn write_operand(&mut self, g: RowGroup, values: &[u64], n: u32) -> Result<(), IsaError> {
        self.host_access()?;
        if values.len() > self.lanes() {
            return Err(EngineError::TooManyLanes {
                lanes: values.len(),
                cols: self.lanes(),
            }
            .into());
        }
        let mut padded = values.to_vec();
        padded.resize(self.lanes(), 0);
        let m = transpose_to_vertical(&padded, n)?;
        self.store(g, &m)
    }

    /// Host read of an `n`-bit vertical operand, one value per lane.
    pub fn read_operand(&self, g: RowGroup, n: u32) -> Result<Vec<u64>, IsaError> {
        self.host_access()?;
        Ok(self.load(g, n as usize)?.to_values())
    }

    /// Host read of a horizontal accumulator value.
    pub fn read_horizontal(&self, g: RowGroup) -> Result<i32, IsaError> {
        self.host_access()?;
        Ok(self.load_horizontal(g)? as u32 as i32)
    }

    pub fn write_horizontal(&mut self, g: RowGroup, value: i32) -> Result<(), IsaError> {
        self.host_access()?;
        self.store_horizontal(g, u64::from(value as u32))
    }

    fn check_prec(&self, prec: u8) -> Result<u32, IsaError> {
        let prec = u32::from(prec);
        if prec > self.max_precision {
            return Err(IsaError::PrecisionTooLarge {
                prec,
                max: self.max_precision,
            });
        }
        Ok(prec)
    }

    fn step(&mut self, instr: &PimInstruction, trace: &mut EventTrace) -> Result<(), IsaError> {
        let compute = |st: &Self| {
            if st.mode.pim_mode {
                Ok(())
            } else {
                Err(IsaError::Mode("arithmetic command outside PIM mode"))
            }
        };
        match *instr {
            PimInstruction::PimEnable => self.mode.pim_mode = true,
            PimInstruction::PimDisable => self.mode.pim_mode = false,
            PimInstruction::BroadcastEnable { bank_bc, col_bc } => {
                if !self.bu_enabled {
                    return Err(IsaError::UnitDisabled("broadcast"));
                }
                self.mode.broadcast = match (bank_bc, col_bc) {
                    (false, false) => BroadcastMode::Off,
                    (true, false) => BroadcastMode::Bank,
                    (false, true) => BroadcastMode::Column,
                    (true, true) => BroadcastMode::Both,
                };
            }
            PimInstruction::BroadcastDisable => self.mode.broadcast = BroadcastMode::Off,
            PimInstruction::PimAdd { ops, prec } => {
                compute(self)?;
                let n = self.check_prec(prec)?;
                let a = self.load(ops.src1, n as usize)?;
                let b = self.load(ops.src2, n as usize)?;
                let sum = add_serial(&a, &b, n, self.lb_enabled, trace)?;
                self.store(ops.dst, &sum)?;
            }
            PimInstruction::PimMul { ops, prec } => {
                compute(self)?;
                let n = self.check_prec(prec)?;
                let a = self.load(ops.src1, n as usize)?;
                let b = self.load(ops.src2, n as usize)?;
                let product = if self.lb_enabled {
                    mul_reuse(&a, &b, n, &mut self.lb, trace)?
                } else {
                    mul_baseline(&a, &b, n, trace)?
                };
                self.store(ops.dst, &product)?;
            }
            PimInstruction::PimMulRed { ops, prec } => {
                compute(self)?;
                if !self.pr_enabled {
                    return Err(IsaError::UnitDisabled("popcount reduction"));
                }
                let n = self.check_prec(prec)?;
                let a = self.load(ops.src1, n as usize)?;
                let b = self.load(ops.src2, n as usize)?;
                let scheme = if self.lb_enabled {
                    MulScheme::Reuse
                } else {
                    MulScheme::Baseline
                };
                let lanes = a.lanes();
                let sums = mul_red(&a, &b, n, scheme, &mut self.lb, lanes, self.acc_width, trace)?;
                self.store_horizontal(ops.dst, sums[0])?;
            }
            PimInstruction::PimAddParallel { ops } => {
                compute(self)?;
                if !self.pr_enabled {
                    return Err(IsaError::UnitDisabled("popcount reduction"));
                }
                let x = self.load_horizontal(ops.src1)? as u32 as i32;
                let y = self.load_horizontal(ops.src2)? as u32 as i32;
                let (sum, _wrapped) = add_parallel(x, y, trace);
                self.store_horizontal(ops.dst, u64::from(sum as u32))?;
            }
        }
        Ok(())
    }
}

/// Runs `prog` in order on `state`, appending every engine event to
/// `trace`. Stops at the first failing instruction and reports its index.
pub fn execute_program(
    prog: &[PimInstruction],
    state: &mut BankState,
    trace: &mut EventTrace,
) -> Result<(), (usize, IsaError)> {
    for (i, instr) in prog.iter().enumerate() {
        state.step(instr, trace).map_err(|e| (i, e))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{preset, Ablation};

    fn g(s: u8, r: u8) -> RowGroup {
        RowGroup::new(s, r)
    }

    fn ops(dst: RowGroup, src1: RowGroup, src2: RowGroup) -> Operands {
        Operands { dst, src1, src2 }
    }

    #[test]
    fn multiply_program_leaves_product_in_array() {
        let cfg = preset("desk_small").unwrap();
        let mut bank = BankState::new(&cfg);
        bank.write_operand(g(0, 0), &[5, 15, 0, 9], 4).unwrap();
        bank.write_operand(g(0, 2), &[3, 15, 7, 9], 4).unwrap();
        let prog = [
            PimInstruction::PimEnable,
            PimInstruction::PimMul {
                ops: ops(g(1, 4), g(0, 0), g(0, 2)),
                prec: 4,
            },
            PimInstruction::PimDisable,
        ];
        let mut trace = EventTrace::new();
        execute_program(&prog, &mut bank, &mut trace).unwrap();
        assert_eq!(bank.read_operand(g(1, 4), 8).unwrap(), vec![15, 225, 0, 81]);
        assert_eq!(trace.counters().array_accesses(), 16);
    }

    #[test]
    fn arithmetic_needs_pim_mode() {
        let cfg = preset("desk_small").unwrap();
        let mut bank = BankState::new(&cfg);
        let prog = [PimInstruction::PimAdd {
            ops: ops(g(0, 2), g(0, 0), g(0, 1)),
            prec: 4,
        }];
        let err = execute_program(&prog, &mut bank, &mut EventTrace::new()).unwrap_err();
        assert!(matches!(err, (0, IsaError::Mode(_))));
    }

    #[test]
    fn results_are_hidden_while_in_pim_mode() {
        let cfg = preset("desk_small").unwrap();
        let mut bank = BankState::new(&cfg);
        execute_program(&[PimInstruction::PimEnable], &mut bank, &mut EventTrace::new()).unwrap();
        assert!(bank.read_operand(g(0, 0), 4).is_err());
    }

    #[test]
    fn dot_products_of_two_blocks_accumulate() {
        let cfg = preset("desk_small").unwrap();
        let mut bank = BankState::new(&cfg);
        let (a0, b0) = ([1u64, 2, 3, 4], [5u64, 6, 7, 8]);
        let (a1, b1) = ([9u64, 10, 11, 12], [13u64, 14, 15, 0]);
        bank.write_operand(g(0, 0), &a0, 4).unwrap();
        bank.write_operand(g(0, 2), &b0, 4).unwrap();
        bank.write_operand(g(0, 4), &a1, 4).unwrap();
        bank.write_operand(g(0, 6), &b1, 4).unwrap();
        let prog = [
            PimInstruction::PimEnable,
            PimInstruction::PimMulRed {
                ops: ops(g(0, 8), g(0, 0), g(0, 2)),
                prec: 4,
            },
            PimInstruction::PimMulRed {
                ops: ops(g(1, 8), g(0, 4), g(0, 6)),
                prec: 4,
            },
            PimInstruction::PimAddParallel {
                ops: ops(g(0, 8), g(0, 8), g(1, 8)),
            },
            PimInstruction::PimDisable,
        ];
        let mut trace = EventTrace::new();
        execute_program(&prog, &mut bank, &mut trace).unwrap();
        let dot = |a: &[u64], b: &[u64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<u64>();
        let want = dot(&a0, &b0) + dot(&a1, &b1);
        assert_eq!(bank.read_horizontal(g(0, 8)).unwrap(), want as i32);
        assert_eq!(trace.counters().addp_step, 1);
    }

    #[test]
    fn trace_is_the_sum_of_engine_traces() {
        let cfg = preset("desk_small").unwrap();
        let mut bank = BankState::new(&cfg);
        bank.write_operand(g(0, 0), &[7, 1, 2, 3], 4).unwrap();
        bank.write_operand(g(0, 2), &[9, 4, 5, 6], 4).unwrap();
        let a = bank.load(g(0, 0), 4).unwrap();
        let b = bank.load(g(0, 2), 4).unwrap();
        let mut want = EventTrace::new();
        let mut lb = LocalityBufferState::new(17, 4);
        mul_reuse(&a, &b, 4, &mut lb, &mut want).unwrap();
        add_serial(&a, &b, 4, true, &mut want).unwrap();

        let prog = [
            PimInstruction::PimEnable,
            PimInstruction::PimMul {
                ops: ops(g(0, 4), g(0, 0), g(0, 2)),
                prec: 4,
            },
            PimInstruction::PimAdd {
                ops: ops(g(0, 8), g(0, 0), g(0, 2)),
                prec: 4,
            },
            PimInstruction::PimDisable,
        ];
        let mut logged = EventTrace::with_log(10_000);
        let mut plain = EventTrace::new();
        let mut other = bank.clone();
        execute_program(&prog, &mut bank, &mut logged).unwrap();
        execute_program(&prog, &mut other, &mut plain).unwrap();
        assert_eq!(logged.counters(), want.counters());
        assert_eq!(plain.counters(), want.counters());
        assert_eq!(bank, other, "logging must not change results");
    }

    #[test]
    fn disabled_units_are_reported() {
        let cfg = preset("desk_small").unwrap().ablate(Ablation {
            lb: false,
            pr: true,
            bu: true,
        });
        let mut bank = BankState::new(&cfg);
        let prog = [
            PimInstruction::PimEnable,
            PimInstruction::BroadcastEnable {
                bank_bc: true,
                col_bc: false,
            },
        ];
        let err = execute_program(&prog, &mut bank, &mut EventTrace::new()).unwrap_err();
        assert_eq!(err, (1, IsaError::UnitDisabled("broadcast")));
        let prog = [
            PimInstruction::PimEnable,
            PimInstruction::PimMulRed {
                ops: ops(g(0, 4), g(0, 0), g(0, 1)),
                prec: 4,
            },
        ];
        let err = execute_program(&prog, &mut BankState::new(&cfg), &mut EventTrace::new());
        assert!(matches!(err, Err((1, IsaError::UnitDisabled(_)))));
    }

    #[test]
    fn precision_beyond_the_buffer_is_rejected() {
        let cfg = preset("desk_small").unwrap();
        let mut bank = BankState::new(&cfg);
        let prog = [
            PimInstruction::PimEnable,
            PimInstruction::PimMul {
                ops: ops(g(0, 2), g(0, 0), g(0, 1)),
                prec: 9,
            },
        ];
        let err = execute_program(&prog, &mut bank, &mut EventTrace::new()).unwrap_err();
        assert_eq!(err, (1, IsaError::PrecisionTooLarge { prec: 9, max: 8 }));
    }

    #[test]
    fn broadcast_mode_follows_flags() {
        let cfg = preset("desk_small").unwrap();
        let mut bank = BankState::new(&cfg);
        let prog = [PimInstruction::BroadcastEnable {
            bank_bc: true,
            col_bc: true,
        }];
        execute_program(&prog, &mut bank, &mut EventTrace::new()).unwrap();
        assert_eq!(bank.mode().broadcast, BroadcastMode::Both);
        execute_program(
            &[PimInstruction::BroadcastDisable],
            &mut bank,
            &mut EventTrace::new(),
        )
        .unwrap();
        assert_eq!(bank.mode().broadcast, BroadcastMode::Off);
    }
}
