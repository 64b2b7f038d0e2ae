//! Bit-serial arithmetic on vertical operands.
//!
//! Multiplication with the locality buffer follows a fixed row discipline
//! for an `n`-bit multiply:
//!
//! * rows `0..n` hold the multiplicand, loaded once;
//! * row `n` holds the current multiplier bit;
//! * rows `n+1..=2n` are a ring of result bits, bit `i` in slot `i % n`.
//!
//! Step `j` loads multiplier bit `j`, adds the multiplicand into result
//! bits `j..j+n`, retires bit `j` and reuses its slot for the carry-out
//! (bit `j+n`). After the last step the remaining `n` high bits retire.
//! Every operand bit is read from the array once and every result bit
//! leaves the buffer once, so a multiply costs `4n` array accesses.

use super::matrix::{range_popcount, BitMatrix};
use super::{pe_step_word, EngineError, Event, EventTrace, LocalityBufferState};

/// How a multiply obtains operand reuse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MulScheme {
    /// Locality-buffer reuse, linear row traffic.
    Reuse,
    /// No buffer: multiplicand and partial sums go back to the array on
    /// every multiplier bit.
    Baseline,
}

fn check_pair(op1: &BitMatrix, op2: &BitMatrix, n: u32) -> Result<usize, EngineError> {
    if n == 0 || n > 32 {
        return Err(EngineError::BadPrecision(n));
    }
    if op1.lanes() != op2.lanes() {
        return Err(EngineError::LaneMismatch(op1.lanes(), op2.lanes()));
    }
    for op in [op1, op2] {
        if op.depth() != n as usize {
            return Err(EngineError::DepthMismatch { depth: op.depth(), n });
        }
    }
    Ok(op1.lanes())
}

fn check_buffer(lb: &LocalityBufferState, n: u32, lanes: usize) -> Result<(), EngineError> {
    let required = 2 * n as usize + 1;
    if lb.rows() < required {
        return Err(EngineError::BufferTooSmall {
            rows: lb.rows(),
            required,
        });
    }
    if lanes > lb.cols() {
        return Err(EngineError::TooManyLanes {
            lanes,
            cols: lb.cols(),
        });
    }
    Ok(())
}

fn load_row(lb: &mut LocalityBufferState, row: usize, src: &[u64]) {
    let dst = lb.row_mut(row);
    dst.iter_mut().for_each(|w| *w = 0);
    dst[..src.len()].copy_from_slice(src);
}

/// Runs the buffered multiply; `retire(bit, row)` receives each finished
/// product bit exactly once, in order.
fn reuse_core(
    op1: &BitMatrix,
    op2: &BitMatrix,
    n: usize,
    lb: &mut LocalityBufferState,
    trace: &mut EventTrace,
    mut retire: impl FnMut(usize, &[u64], &mut EventTrace),
) {
    let op2_row = n;
    let slot = |bit: usize| n + 1 + bit % n;
    for i in 0..n {
        trace.record(Event::ArrayRowRead);
        load_row(lb, i, op1.row(i));
        trace.record(Event::LbAccess { row: i as u32 });
    }
    for i in 0..n {
        lb.clear_row(slot(i));
    }
    for j in 0..n {
        trace.record(Event::ArrayRowRead);
        load_row(lb, op2_row, op2.row(j));
        trace.record(Event::LbAccess { row: op2_row as u32 });
        lb.clear_carry();
        for i in 0..n {
            let s = slot(j + i);
            lb.pe_row(Some(i), op2_row, s, s);
            trace.record(Event::PeStep);
            trace.record(Event::LbAccess { row: s as u32 });
        }
        let s = slot(j);
        trace.record(Event::LbAccess { row: s as u32 });
        retire(j, lb.row(s), trace);
        // the retired slot becomes bit j+n and takes the carry-out
        lb.clear_row(s);
        lb.pe_row(None, op2_row, s, s);
        trace.record(Event::PeStep);
        trace.record(Event::LbAccess { row: s as u32 });
    }
    for bit in n..2 * n {
        let s = slot(bit);
        trace.record(Event::LbAccess { row: s as u32 });
        retire(bit, lb.row(s), trace);
    }
}

/// Shift-and-add without a buffer; `retire_last(bit, row)` receives the
/// final round's product bits.
fn baseline_core(
    op1: &BitMatrix,
    op2: &BitMatrix,
    n: usize,
    trace: &mut EventTrace,
    mut retire_last: impl FnMut(usize, &[u64], &mut EventTrace),
) {
    let words = op1.row(0).len();
    let mut partial = BitMatrix::zeros(op1.lanes(), 2 * n);
    let zero = vec![0u64; words];
    for j in 0..n {
        trace.record(Event::ArrayRowRead);
        let b_row = op2.row(j).to_vec();
        let mut carry = vec![0u64; words];
        for i in 0..2 * n {
            let (a_row, gate): (&[u64], &[u64]) = if i < j {
                (&zero, &zero)
            } else if i < j + n {
                trace.record(Event::ArrayRowRead);
                (op1.row(i - j), &b_row)
            } else {
                (&zero, &b_row)
            };
            let row = partial.row_mut(i);
            for w in 0..words {
                let (out, cy) = pe_step_word(a_row[w], gate[w], row[w], carry[w]);
                row[w] = out;
                carry[w] = cy;
            }
            trace.record(Event::PeStep);
            if j + 1 == n {
                retire_last(i, partial.row(i), trace);
            } else {
                trace.record(Event::ArrayRowWrite);
            }
        }
    }
}

/// `n`-bit unsigned multiply using the locality buffer. Product depth is
/// `2n`.
pub fn mul_reuse(
    op1: &BitMatrix,
    op2: &BitMatrix,
    n: u32,
    lb: &mut LocalityBufferState,
    trace: &mut EventTrace,
) -> Result<BitMatrix, EngineError> {
    let lanes = check_pair(op1, op2, n)?;
    check_buffer(lb, n, lanes)?;
    let n = n as usize;
    let mut product = BitMatrix::zeros(lanes, 2 * n);
    reuse_core(op1, op2, n, lb, trace, |bit, row, trace| {
        let dst = product.row_mut(bit);
        let k = dst.len();
        dst.copy_from_slice(&row[..k]);
        trace.record(Event::ArrayRowWrite);
    });
    Ok(product)
}

/// `n`-bit unsigned multiply without operand reuse: `n² + n` array reads
/// and `2n²` writes.
pub fn mul_baseline(
    op1: &BitMatrix,
    op2: &BitMatrix,
    n: u32,
    trace: &mut EventTrace,
) -> Result<BitMatrix, EngineError> {
    let lanes = check_pair(op1, op2, n)?;
    let n = n as usize;
    let mut product = BitMatrix::zeros(lanes, 2 * n);
    baseline_core(op1, op2, n, trace, |bit, row, trace| {
        product.row_mut(bit).copy_from_slice(row);
        trace.record(Event::ArrayRowWrite);
    });
    Ok(product)
}

/// Rows needed to store `segments` accumulator values side by side.
pub fn horizontal_rows(segments: u64, acc_width: u32, cols: u64) -> u64 {
    (segments * u64::from(acc_width)).div_ceil(cols)
}

/// Multiply followed by column-wise popcount reduction.
///
/// Lanes are split into consecutive segments of `segment_len`; one sum is
/// produced per segment. Product bit-slices stream into the popcount unit
/// as they retire instead of going back to the array, and the sums are
/// written once in horizontal layout.
#[allow(clippy::too_many_arguments)]
pub fn mul_red(
    op1: &BitMatrix,
    op2: &BitMatrix,
    n: u32,
    scheme: MulScheme,
    lb: &mut LocalityBufferState,
    segment_len: usize,
    acc_width: u32,
    trace: &mut EventTrace,
) -> Result<Vec<u64>, EngineError> {
    let lanes = check_pair(op1, op2, n)?;
    if scheme == MulScheme::Reuse {
        check_buffer(lb, n, lanes)?;
    }
    if segment_len == 0 || lanes % segment_len != 0 {
        return Err(EngineError::BadSegment(segment_len));
    }
    let segments = lanes / segment_len;
    let mut sums = vec![0u64; segments];
    let mut accumulate = |bit: usize, row: &[u64], trace: &mut EventTrace| {
        trace.record(Event::PcStep);
        for (s, sum) in sums.iter_mut().enumerate() {
            let ones = range_popcount(row, s * segment_len, (s + 1) * segment_len);
            *sum += ones << bit;
        }
    };
    match scheme {
        MulScheme::Reuse => reuse_core(op1, op2, n as usize, lb, trace, &mut accumulate),
        MulScheme::Baseline => baseline_core(op1, op2, n as usize, trace, &mut accumulate),
    }
    if acc_width < 64 && sums.iter().any(|s| s >> acc_width != 0) {
        return Err(EngineError::AccumulatorOverflow { width: acc_width });
    }
    let rows = horizontal_rows(segments as u64, acc_width, lb.cols().max(1) as u64);
    trace.record_n(Event::ArrayRowWrite, rows);
    Ok(sums)
}

/// Bit-serial add; result depth `n + 1`.
pub fn add_serial(
    op1: &BitMatrix,
    op2: &BitMatrix,
    n: u32,
    buffered: bool,
    trace: &mut EventTrace,
) -> Result<BitMatrix, EngineError> {
    let lanes = check_pair(op1, op2, n)?;
    let n = n as usize;
    let words = op1.row(0).len();
    let mut sum = BitMatrix::zeros(lanes, n + 1);
    let mut carry = vec![0u64; words];
    let lb = |trace: &mut EventTrace, row: usize| {
        if buffered {
            trace.record(Event::LbAccess { row: row as u32 });
        }
    };
    for i in 0..n {
        trace.record(Event::ArrayRowRead);
        lb(trace, 0);
        trace.record(Event::ArrayRowRead);
        lb(trace, 1);
        let (a, c) = (op1.row(i), op2.row(i));
        let dst = sum.row_mut(i);
        for w in 0..words {
            let (out, cy) = pe_step_word(a[w], u64::MAX, c[w], carry[w]);
            dst[w] = out;
            carry[w] = cy;
        }
        trace.record(Event::PeStep);
        lb(trace, 2);
        lb(trace, 2);
        trace.record(Event::ArrayRowWrite);
    }
    sum.row_mut(n).copy_from_slice(&carry);
    trace.record(Event::PeStep);
    lb(trace, 2);
    lb(trace, 2);
    trace.record(Event::ArrayRowWrite);
    Ok(sum)
}

/// `Σ_i popcount(slice_i) · 2^i` over all lanes of an array-resident
/// matrix.
pub fn popcount_reduce(
    partials: &BitMatrix,
    acc_width: u32,
    trace: &mut EventTrace,
) -> Result<u64, EngineError> {
    let mut sum: u128 = 0;
    for b in 0..partials.depth() {
        trace.record(Event::ArrayRowRead);
        trace.record(Event::LbAccess { row: 0 });
        trace.record(Event::PcStep);
        sum += u128::from(partials.row_popcount(b, 0, partials.lanes())) << b;
    }
    if acc_width < 128 && sum >> acc_width != 0 {
        return Err(EngineError::AccumulatorOverflow { width: acc_width });
    }
    Ok(sum as u64)
}

/// Wrapping 32-bit add in the popcount accumulator. The flag reports a
/// wrap.
pub fn add_parallel(acc: i32, addend: i32, trace: &mut EventTrace) -> (i32, bool) {
    trace.record(Event::AddpStep);
    acc.overflowing_add(addend)
}

/// Signed dot product on the unsigned datapath.
///
/// Operands are offset by `2^(n-1)` into unsigned range; the cross terms
/// are removed with two popcount reductions of the offset operands.
pub fn mul_red_signed(
    a: &[i64],
    b: &[i64],
    n: u32,
    lb: &mut LocalityBufferState,
    acc_width: u32,
    trace: &mut EventTrace,
) -> Result<i64, EngineError> {
    if n == 0 || n > 32 {
        return Err(EngineError::BadPrecision(n));
    }
    if a.len() != b.len() {
        return Err(EngineError::LaneMismatch(a.len(), b.len()));
    }
    let offset = 1i64 << (n - 1);
    let shift = |v: &i64| -> Result<u64, EngineError> {
        if *v < -offset || *v >= offset {
            return Err(EngineError::ValueOutOfRange {
                value: *v as u64,
                bits: n,
            });
        }
        Ok((v + offset) as u64)
    };
    let ua: Vec<u64> = a.iter().map(shift).collect::<Result<_, _>>()?;
    let ub: Vec<u64> = b.iter().map(shift).collect::<Result<_, _>>()?;
    let ma = super::transpose_to_vertical(&ua, n)?;
    let mb = super::transpose_to_vertical(&ub, n)?;
    let dot = mul_red(
        &ma,
        &mb,
        n,
        MulScheme::Reuse,
        lb,
        a.len().max(1),
        acc_width,
        trace,
    )?
    .first()
    .copied()
    .unwrap_or(0) as i64;
    let sum_a = popcount_reduce(&ma, acc_width, trace)? as i64;
    let sum_b = popcount_reduce(&mb, acc_width, trace)? as i64;
    Ok(dot - offset * (sum_a + sum_b) + a.len() as i64 * offset * offset)
}

#[cfg(test)]
mod tests {
    use super::super::transpose_to_vertical;
    use super::*;
    use std::collections::BTreeSet;

    fn mats(a: &[u64], b: &[u64], n: u32) -> (BitMatrix, BitMatrix) {
        (
            transpose_to_vertical(a, n).unwrap(),
            transpose_to_vertical(b, n).unwrap(),
        )
    }

    #[test]
    fn reuse_multiply_small() {
        let (a, b) = mats(&[5, 15, 9, 0], &[3, 15, 0, 7], 4);
        let mut lb = LocalityBufferState::new(17, 8);
        let mut t = EventTrace::new();
        let p = mul_reuse(&a, &b, 4, &mut lb, &mut t).unwrap();
        assert_eq!(p.depth(), 8);
        assert_eq!(p.to_values(), vec![15, 225, 0, 0]);
    }

    #[test]
    fn reuse_counts_for_int4() {
        let (a, b) = mats(&[5], &[3], 4);
        let mut lb = LocalityBufferState::new(17, 1);
        let mut t = EventTrace::new();
        mul_reuse(&a, &b, 4, &mut lb, &mut t).unwrap();
        let c = t.counters();
        assert_eq!(c.array_row_read, 8);
        assert_eq!(c.array_row_write, 8);
        assert_eq!(c.pe_step, 20);
        assert_eq!(c.lb_access, 16 + 20);
    }

    #[test]
    fn reuse_touches_at_most_2n_plus_1_rows() {
        for n in 1..=8u32 {
            let max = (1u64 << n) - 1;
            let (a, b) = mats(&[max, 1], &[max, max], n);
            let mut lb = LocalityBufferState::new(17, 2);
            let mut t = EventTrace::with_log(10_000);
            mul_reuse(&a, &b, n, &mut lb, &mut t).unwrap();
            let rows: BTreeSet<u32> = t
                .log()
                .unwrap()
                .iter()
                .filter_map(|e| match e {
                    Event::LbAccess { row } => Some(*row),
                    _ => None,
                })
                .collect();
            assert_eq!(rows.len(), 2 * n as usize + 1, "n = {n}");
            assert_eq!(t.counters_from_log().unwrap(), *t.counters());
        }
    }

    #[test]
    fn buffer_too_small_is_rejected() {
        let (a, b) = mats(&[1], &[1], 8);
        let mut lb = LocalityBufferState::new(9, 1);
        assert_eq!(
            mul_reuse(&a, &b, 8, &mut lb, &mut EventTrace::new()),
            Err(EngineError::BufferTooSmall {
                rows: 9,
                required: 17
            })
        );
    }

    #[test]
    fn lane_mismatch_is_rejected() {
        let a = transpose_to_vertical(&[1, 2], 4).unwrap();
        let b = transpose_to_vertical(&[1], 4).unwrap();
        let mut lb = LocalityBufferState::new(17, 4);
        assert_eq!(
            mul_reuse(&a, &b, 4, &mut lb, &mut EventTrace::new()),
            Err(EngineError::LaneMismatch(2, 1))
        );
        assert!(mul_baseline(&a, &b, 4, &mut EventTrace::new()).is_err());
        assert!(add_serial(&a, &b, 4, true, &mut EventTrace::new()).is_err());
    }

    #[test]
    fn baseline_counts() {
        let (a, b) = mats(&[5], &[3], 4);
        let mut t = EventTrace::new();
        let p = mul_baseline(&a, &b, 4, &mut t).unwrap();
        assert_eq!(p.to_values(), vec![15]);
        assert_eq!(t.counters().array_row_read, 20);
        assert_eq!(t.counters().array_row_write, 32);
        assert_eq!(t.counters().lb_access, 0);

        let (a, b) = mats(&[200], &[100], 8);
        let mut t8 = EventTrace::new();
        mul_baseline(&a, &b, 8, &mut t8).unwrap();
        assert_eq!(t8.counters().array_row_read, 72);
    }

    #[test]
    fn serial_add_examples() {
        let cases = [(5u64, 3u64, 8u64), (7, 0, 7), (15, 1, 16)];
        for (x, y, want) in cases {
            let (a, b) = mats(&[x], &[y], 4);
            let mut t = EventTrace::new();
            let s = add_serial(&a, &b, 4, true, &mut t).unwrap();
            assert_eq!(s.depth(), 5);
            assert_eq!(s.lane_value(0), want);
            assert_eq!(t.counters().pe_step, 5);
        }
        let (a, b) = mats(&[15], &[1], 4);
        let s = add_serial(&a, &b, 4, false, &mut EventTrace::new()).unwrap();
        assert!(s.bit(4, 0), "carry lands in the extra row");
    }

    #[test]
    fn popcount_examples() {
        let m = transpose_to_vertical(&[1, 2, 3], 2).unwrap();
        let mut t = EventTrace::new();
        assert_eq!(popcount_reduce(&m, 32, &mut t).unwrap(), 6);
        assert_eq!(t.counters().pc_step, 2);

        let z = BitMatrix::zeros(10, 4);
        assert_eq!(popcount_reduce(&z, 32, &mut EventTrace::new()).unwrap(), 0);

        let ones = transpose_to_vertical(&vec![0xFFFF; 1024], 16).unwrap();
        assert_eq!(
            popcount_reduce(&ones, 32, &mut EventTrace::new()).unwrap(),
            1024 * 65535
        );
        assert_eq!(
            popcount_reduce(&ones, 16, &mut EventTrace::new()),
            Err(EngineError::AccumulatorOverflow { width: 16 })
        );
    }

    #[test]
    fn fused_dot_product() {
        let (a, b) = mats(&[1, 2], &[3, 4], 4);
        let mut lb = LocalityBufferState::new(17, 2);
        let mut t = EventTrace::new();
        let r = mul_red(&a, &b, 4, MulScheme::Reuse, &mut lb, 2, 32, &mut t).unwrap();
        assert_eq!(r, vec![11]);
        assert_eq!(t.counters().pc_step, 8);
        assert_eq!(t.counters().array_row_read, 8);
        // a 32-bit sum spread across two columns fills 16 rows
        assert_eq!(t.counters().array_row_write, 16);

        let (a, b) = mats(&[1, 2, 3, 4], &[5, 6, 7, 8], 4);
        let mut lb = LocalityBufferState::new(17, 4);
        let seg = mul_red(
            &a,
            &b,
            4,
            MulScheme::Baseline,
            &mut lb,
            2,
            32,
            &mut EventTrace::new(),
        )
        .unwrap();
        assert_eq!(seg, vec![5 + 12, 21 + 32]);
        assert!(mul_red(
            &a,
            &b,
            4,
            MulScheme::Reuse,
            &mut lb,
            3,
            32,
            &mut EventTrace::new()
        )
        .is_err());
    }

    #[test]
    fn parallel_add_wraps() {
        let mut t = EventTrace::new();
        assert_eq!(add_parallel(5, 7, &mut t), (12, false));
        assert_eq!(add_parallel(i32::MAX, 1, &mut t), (i32::MIN, true));
        assert_eq!(t.counters().addp_step, 2);
    }

    #[test]
    fn signed_dot_matches_oracle() {
        let a = [-128i64, 127, -1, 0, 55, -77];
        let b = [127i64, -128, -1, 99, -3, -77];
        let want: i64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        let mut lb = LocalityBufferState::new(17, 8);
        let got = mul_red_signed(&a, &b, 8, &mut lb, 32, &mut EventTrace::new()).unwrap();
        assert_eq!(got, want);
        assert!(mul_red_signed(&[128], &[0], 8, &mut lb, 32, &mut EventTrace::new()).is_err());
    }

    #[test]
    fn traces_are_deterministic() {
        let (a, b) = mats(&[7, 9, 11], &[13, 2, 6], 4);
        let run = || {
            let mut lb = LocalityBufferState::new(17, 3);
            let mut t = EventTrace::with_log(1000);
            mul_reuse(&a, &b, 4, &mut lb, &mut t).unwrap();
            t
        };
        assert_eq!(run(), run());
    }
}
