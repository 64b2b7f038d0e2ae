//! Bit-exact model of the per-bank compute path: locality buffer, bit-serial
//! PEs, popcount reduction unit and broadcast units.
//!
//! Every operation appends to an [`EventTrace`]; the analytical model in
//! [`crate::perf`] reproduces those counters in closed form.

mod broadcast;
mod matrix;
mod ops;
mod trace;

pub use broadcast::{broadcast_write, write_per_target, DeviceImage};
pub use matrix::{transpose_to_vertical, BitMatrix};
pub use ops::{
    add_parallel, add_serial, horizontal_rows, mul_baseline, mul_red, mul_red_signed, mul_reuse,
    popcount_reduce, MulScheme,
};
pub use trace::{Counters, Event, EventTrace};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EngineError {
    #[error("value {value} does not fit in {bits} bits")]
    ValueOutOfRange { value: u64, bits: u32 },
    #[error("unsupported precision {0}")]
    BadPrecision(u32),
    #[error("operand lane counts differ ({0} vs {1})")]
    LaneMismatch(usize, usize),
    #[error("operand depth {depth} does not match precision {n}")]
    DepthMismatch { depth: usize, n: u32 },
    #[error("locality buffer too small: {rows} rows, {required} required")]
    BufferTooSmall { rows: usize, required: usize },
    #[error("{lanes} lanes exceed the {cols} locality-buffer columns")]
    TooManyLanes { lanes: usize, cols: usize },
    #[error("popcount accumulator overflow: sum needs more than {width} bits")]
    AccumulatorOverflow { width: u32 },
    #[error("segment length {0} does not divide the lane count")]
    BadSegment(usize),
    #[error("broadcast requested while broadcast units are disabled")]
    BroadcastDisabled,
    #[error("target {index} outside the {limit} available {what}")]
    TargetOutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },
}

/// Inputs of one PE step. `b` is the add-enable bit (the multiplier bit
/// during multiplication, constant 1 during addition).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct PeInputs {
    pub a: bool,
    pub b: bool,
    pub c: bool,
    pub carry_in: bool,
}

/// One PE step: gated full add of `a` into `c`.
///
/// With `b` clear the result bit passes through and the carry is held.
pub fn pe_step(inp: PeInputs) -> (bool, bool) {
    let (out, carry) = pe_step_word(
        u64::from(inp.a),
        u64::from(inp.b),
        u64::from(inp.c),
        u64::from(inp.carry_in),
    );
    (out & 1 == 1, carry & 1 == 1)
}

/// 64 PEs at once; bit `i` of each argument belongs to lane `i`.
#[inline]
pub(crate) fn pe_step_word(a: u64, b: u64, c: u64, carry: u64) -> (u64, u64) {
    let sum = a ^ c ^ carry;
    let maj = (a & c) | (a & carry) | (c & carry);
    ((b & sum) | (!b & c), (b & maj) | (!b & carry))
}

/// Per-bank SRAM row buffer with one carry latch per column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LocalityBufferState {
    rows: usize,
    cols: usize,
    cells: BitMatrix,
    pe_carry: Vec<u64>,
}

impl LocalityBufferState {
    pub fn new(rows: usize, cols: usize) -> Self {
        LocalityBufferState {
            rows,
            cols,
            cells: BitMatrix::zeros(cols, rows.max(1)),
            pe_carry: vec![0; matrix::words_for(cols)],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn cell(&self, row: usize, col: usize) -> bool {
        self.cells.bit(row, col)
    }

    pub fn carry(&self, col: usize) -> bool {
        (self.pe_carry[col / 64] >> (col % 64)) & 1 == 1
    }

    pub(crate) fn row(&self, r: usize) -> &[u64] {
        self.cells.row(r)
    }

    pub(crate) fn row_mut(&mut self, r: usize) -> &mut [u64] {
        self.cells.row_mut(r)
    }

    pub(crate) fn clear_carry(&mut self) {
        self.pe_carry.iter_mut().for_each(|w| *w = 0);
    }

    pub(crate) fn clear_row(&mut self, r: usize) {
        self.cells.row_mut(r).iter_mut().for_each(|w| *w = 0);
    }

    /// Row-wide PE step: `dst = pe(a_row, b_row, c_row, carry)`, with
    /// `None` standing for an all-zero row.
    pub(crate) fn pe_row(&mut self, a: Option<usize>, b: usize, c: usize, dst: usize) {
        for w in 0..self.pe_carry.len() {
            let av = a.map_or(0, |r| self.cells.row(r)[w]);
            let bv = self.cells.row(b)[w];
            let cv = self.cells.row(c)[w];
            let (out, carry) = pe_step_word(av, bv, cv, self.pe_carry[w]);
            self.pe_carry[w] = carry;
            self.cells.row_mut(dst)[w] = out;
        }
    }
}
