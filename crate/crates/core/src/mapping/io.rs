use serde::Serialize;

use super::{Dim, Level, TilePlan};
use crate::config::SystemConfig;

/// Host traffic of one kernel, per channel (channels transfer in parallel).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IoPattern {
    /// Dynamic input bytes before any duplication.
    pub input_bytes: f64,
    /// Input bytes crossing one channel bus after duplication.
    pub broadcast_bytes: f64,
    /// Final output bytes read back through one channel.
    pub collect_bytes: f64,
    /// Partial sums and products read back for reduction on the host.
    pub host_reduction_bytes: f64,
    /// Distinct bus targets the input is written to.
    pub write_regions: u64,
    /// Distinct bus targets outputs are read from.
    pub read_regions: u64,
}

impl IoPattern {
    pub fn total_bytes(&self) -> f64 {
        self.broadcast_bytes + self.collect_bytes + self.host_reduction_bytes
    }
}

/// Infers host traffic for `plan`.
///
/// Weights are pre-transposed and resident, so only the M×K input moves
/// in. It is copied to every rank and device that splits N. Copies across
/// banks, blocks and block columns are produced by the broadcast units
/// when present and cost one transfer each otherwise.
///
/// Outputs leave as 32-bit values. Reductions over K above the block level
/// run on the host and multiply the bytes read back. Without popcount
/// reduction the products the unit would have summed are exported too.
pub fn infer_io_pattern(plan: &TilePlan, cfg: &SystemConfig) -> IoPattern {
    io_pattern(plan, cfg, cfg.periph().pr_enabled)
}

/// As [`infer_io_pattern`], with `merge_in_bank` saying whether K partials
/// of blocks sharing a bank are merged there or read back.
pub fn io_pattern(plan: &TilePlan, cfg: &SystemConfig, merge_in_bank: bool) -> IoPattern {
    let p = cfg.periph();
    let shape = plan.shape;
    let hmap = plan.mapping.hmap;
    let used = |l: Level| plan.used_at(l) as f64;
    let n_bits = f64::from(shape.precision);

    let channel_share = used(Level::C);
    let input_bytes = (shape.m * shape.k) as f64 * n_bits / 8.0;
    let input_per_channel = if hmap.dim_of(Level::C) == Dim::N {
        input_bytes
    } else {
        input_bytes / channel_share
    };
    let dup = |l: Level| plan.dup_input[l.index()] as f64;
    let col_dup = if plan.mapping.bmap.on_rows(Dim::N) {
        1.0
    } else {
        plan.sub_tile[Dim::N.index()] as f64
    };
    let mut broadcast_bytes = input_per_channel * dup(Level::R) * dup(Level::D);
    if !p.bu_enabled {
        broadcast_bytes *= dup(Level::B) * dup(Level::A) * col_dup;
    }

    let outputs = (shape.m * shape.n) as f64 * 4.0;
    let above = plan.partials_above_block() as f64;
    let collect_bytes = outputs / channel_share;
    let mut host_reduction_bytes = outputs * (above - 1.0) / channel_share;
    if !merge_in_bank {
        let in_bank = plan.partials_in_bank() as f64;
        host_reduction_bytes += outputs * above * (in_bank - 1.0) / channel_share;
    }
    if !p.pr_enabled && plan.column_reduction {
        let product_bytes = 2.0 * n_bits / 8.0;
        let padded_k = (plan.block_tile[Dim::K.index()] * plan.partials_in_bank()) as f64 * above;
        host_reduction_bytes += (shape.m * shape.n) as f64 * padded_k * product_bytes / channel_share;
    }

    let ranks = plan.used_at(Level::R);
    let banks = plan.used_at(Level::B);
    let bank_broadcast = p.bu_enabled && hmap.dim_of(Level::B) == Dim::N;
    let write_regions = if input_bytes > 0.0 {
        ranks * if bank_broadcast { 1 } else { banks }
    } else {
        0
    };
    IoPattern {
        input_bytes,
        broadcast_bytes,
        collect_bytes,
        host_reduction_bytes,
        write_regions,
        read_regions: ranks * banks,
    }
}
