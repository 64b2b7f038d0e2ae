//! Functional execution of a tile plan on the bit-serial engine.
//!
//! Every block with data runs its temporal sub-tiles through the same
//! operations the latency model charges for, so the computed output checks
//! the mapping (ranges, layout, reductions) end to end.

use std::collections::BTreeMap;
use std::ops::Range;

use super::{block_range, Dim, TilePlan};
use crate::bitserial::{
    add_parallel, add_serial, mul_baseline, mul_red, mul_reuse, transpose_to_vertical, BitMatrix,
    EngineError, EventTrace, LocalityBufferState, MulScheme,
};
use crate::config::SystemConfig;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanRun {
    /// Row-major M×N result.
    pub output: Vec<u64>,
    pub trace: EventTrace,
    /// Blocks that held data.
    pub blocks: u64,
    /// Sub-tiles executed over all blocks.
    pub sub_tiles: u64,
}

/// Plain triple loop; `a` is M×K and `w` is K×N, both row-major.
pub fn oracle_gemm(a: &[u64], w: &[u64], m: usize, k: usize, n: usize) -> Vec<u64> {
    let mut out = vec![0u64; m * n];
    for i in 0..m {
        for j in 0..n {
            out[i * n + j] = (0..k).map(|x| a[i * k + x] * w[x * n + j]).sum();
        }
    }
    out
}

fn ceil_log2(x: u64) -> u32 {
    64 - (x.max(1) - 1).leading_zeros()
}

/// Cartesian product of the ranges of `dims`, last dimension fastest.
fn combos(dims: &[Dim], ranges: &[Range<u64>; 3]) -> Vec<[u64; 3]> {
    let mut out = vec![[0u64; 3]];
    for d in dims {
        let r = ranges[d.index()].clone();
        out = out
            .into_iter()
            .flat_map(|c| {
                r.clone().map(move |v| {
                    let mut c = c;
                    c[d.index()] = v;
                    c
                })
            })
            .collect();
    }
    out
}

fn merge(slot: [u64; 3], lane: [u64; 3], row_dims: &[Dim]) -> [u64; 3] {
    let mut idx = lane;
    for d in row_dims {
        idx[d.index()] = slot[d.index()];
    }
    idx
}

struct Block<'a> {
    cfg: &'a SystemConfig,
    a: &'a [u64],
    w: &'a [u64],
    k: usize,
    n: usize,
    lb: LocalityBufferState,
    trace: EventTrace,
    /// Running K-on-rows sums of the current output tile, by row slot.
    accumulators: BTreeMap<[u64; 3], (Vec<[u64; 3]>, BitMatrix)>,
}

impl Block<'_> {
    fn operands(&self, idx: &[[u64; 3]], bits: u32) -> Result<(BitMatrix, BitMatrix), EngineError> {
        let av: Vec<u64> = idx
            .iter()
            .map(|i| self.a[i[0] as usize * self.k + i[2] as usize])
            .collect();
        let wv: Vec<u64> = idx
            .iter()
            .map(|i| self.w[i[2] as usize * self.n + i[1] as usize])
            .collect();
        Ok((
            transpose_to_vertical(&av, bits)?,
            transpose_to_vertical(&wv, bits)?,
        ))
    }

    fn multiply(&mut self, op1: &BitMatrix, op2: &BitMatrix, bits: u32) -> Result<BitMatrix, EngineError> {
        if self.cfg.periph().lb_enabled {
            mul_reuse(op1, op2, bits, &mut self.lb, &mut self.trace)
        } else {
            mul_baseline(op1, op2, bits, &mut self.trace)
        }
    }

    /// Runs one sub-tile, adding each output's partial sum into `acc`
    /// (indexed by the output's `[m, n]`).
    fn sub_tile(
        &mut self,
        plan: &TilePlan,
        ranges: &[Range<u64>; 3],
        acc: &mut dyn FnMut([u64; 3], u64, &mut EventTrace),
    ) -> Result<(), EngineError> {
        let bits = plan.shape.precision;
        let bmap = plan.mapping.bmap;
        let row_dims = bmap.row_dims();
        let col_dims = bmap.col_dims();
        let lanes = combos(&col_dims, ranges);
        let p = self.cfg.periph();

        if plan.column_reduction {
            let seg_len = (ranges[Dim::K.index()].end - ranges[Dim::K.index()].start) as usize;
            for slot in combos(&row_dims, ranges) {
                let idx: Vec<[u64; 3]> = lanes.iter().map(|l| merge(slot, *l, &row_dims)).collect();
                let (op1, op2) = self.operands(&idx, bits)?;
                if p.pr_enabled {
                    let scheme = if p.lb_enabled {
                        MulScheme::Reuse
                    } else {
                        MulScheme::Baseline
                    };
                    let sums = mul_red(
                        &op1,
                        &op2,
                        bits,
                        scheme,
                        &mut self.lb,
                        seg_len,
                        p.popcount_width_bits,
                        &mut self.trace,
                    )?;
                    for (s, sum) in sums.into_iter().enumerate() {
                        acc(idx[s * seg_len], sum, &mut self.trace);
                    }
                } else {
                    // products leave the array and are summed on the host
                    let product = self.multiply(&op1, &op2, bits)?;
                    for (i, v) in product.to_values().into_iter().enumerate() {
                        acc(idx[i], v, &mut self.trace);
                    }
                }
            }
            return Ok(());
        }

        // K on rows: products of successive k rows are summed bit-serially,
        // then folded into a 32-bit accumulator that stays in the array
        // across the K sub-tiles.
        let k_range = ranges[Dim::K.index()].clone();
        let outer: Vec<Dim> = row_dims.iter().copied().filter(|d| *d != Dim::K).collect();
        let width = (2 * bits + ceil_log2(k_range.end - k_range.start)).min(32);
        for slot in combos(&outer, ranges) {
            let mut sum = BitMatrix::zeros(lanes.len(), width as usize);
            let mut idx = Vec::new();
            for k in k_range.clone() {
                let mut row = slot;
                row[Dim::K.index()] = k;
                idx = lanes.iter().map(|l| merge(row, *l, &row_dims)).collect();
                let (op1, op2) = self.operands(&idx, bits)?;
                let product = self.multiply(&op1, &op2, bits)?.resized(width as usize);
                sum =
                    add_serial(&sum, &product, width, p.lb_enabled, &mut self.trace)?.resized(width as usize);
            }
            let (_, prev) = self
                .accumulators
                .entry(slot)
                .or_insert_with(|| (Vec::new(), BitMatrix::zeros(lanes.len(), 32)));
            let next = add_serial(prev, &sum.resized(32), 32, p.lb_enabled, &mut self.trace)?;
            if next.row(32).iter().any(|w| *w != 0) {
                return Err(EngineError::AccumulatorOverflow { width: 32 });
            }
            self.accumulators.insert(slot, (idx, next.resized(32)));
        }
        Ok(())
    }

    /// Reads the K-on-rows accumulators out of the array.
    fn drain(&mut self, acc: &mut dyn FnMut([u64; 3], u64, &mut EventTrace)) {
        let mut trace = EventTrace::new();
        for (_, (idx, sums)) in std::mem::take(&mut self.accumulators) {
            for (i, v) in sums.to_values().into_iter().enumerate() {
                acc(idx[i], v, &mut trace);
            }
        }
    }
}

fn split(r: &Range<u64>, cap: u64) -> Vec<Range<u64>> {
    (r.start..r.end)
        .step_by(cap as usize)
        .map(|s| s..(s + cap).min(r.end))
        .collect()
}

/// Executes `plan` for inputs `a` (M×K) and `w` (K×N), row-major, each
/// value below `2^precision`.
pub fn execute_plan(
    plan: &TilePlan,
    cfg: &SystemConfig,
    a: &[u64],
    w: &[u64],
) -> Result<PlanRun, EngineError> {
    let shape = plan.shape;
    let (m, k, n) = (shape.m as usize, shape.k as usize, shape.n as usize);
    assert_eq!(a.len(), m * k, "input must be M×K");
    assert_eq!(w.len(), k * n, "weights must be K×N");
    let p = cfg.periph();
    let mut block = Block {
        cfg,
        a,
        w,
        k,
        n,
        lb: LocalityBufferState::new(p.lb_rows as usize, p.lb_cols as usize),
        trace: EventTrace::new(),
        accumulators: BTreeMap::new(),
    };
    let mut output = vec![0u64; m * n];
    let (mut blocks, mut sub_tiles) = (0u64, 0u64);
    let mut coords = [0u64; 5];
    loop {
        let ranges = block_range(plan, coords);
        if ranges.iter().all(|r| r.start < r.end) {
            blocks += 1;
            // block-resident accumulators, one per output of the tile
            let (m0, n0) = (ranges[0].start, ranges[1].start);
            let tile_n = (ranges[1].end - n0) as usize;
            let mut partial = vec![0i32; (ranges[0].end - m0) as usize * tile_n];
            let mut wrapped = false;
            for rm in split(&ranges[0], plan.caps[0]) {
                for rn in split(&ranges[1], plan.caps[1]) {
                    let mut add = |idx: [u64; 3], v: u64, trace: &mut EventTrace| {
                        let slot = (idx[0] - m0) as usize * tile_n + (idx[1] - n0) as usize;
                        let (s, w) = if p.pr_enabled && plan.column_reduction {
                            add_parallel(partial[slot], v as i32, trace)
                        } else {
                            partial[slot].overflowing_add(v as i32)
                        };
                        partial[slot] = s;
                        wrapped |= w;
                    };
                    for rk in split(&ranges[2], plan.caps[2]) {
                        sub_tiles += 1;
                        let sub = [rm.clone(), rn.clone(), rk];
                        block.sub_tile(plan, &sub, &mut add)?;
                    }
                    block.drain(&mut add);
                }
            }
            if wrapped {
                return Err(EngineError::AccumulatorOverflow { width: 32 });
            }
            for (i, v) in partial.into_iter().enumerate() {
                let (mi, ni) = (m0 as usize + i / tile_n, n0 as usize + i % tile_n);
                output[mi * n + ni] += u64::from(v as u32);
            }
        }
        let mut l = 4;
        loop {
            coords[l] += 1;
            if coords[l] < plan.used[l] {
                break;
            }
            coords[l] = 0;
            if l == 0 {
                break;
            }
            l -= 1;
        }
        if coords == [0; 5] {
            break;
        }
    }
    Ok(PlanRun {
        output,
        trace: block.trace,
        blocks,
        sub_tiles,
    })
}
