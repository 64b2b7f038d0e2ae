use std::ops::Range;

use serde::Serialize;

use super::{BlockMapping, Dim, GemmShape, Level, Mapping};
use crate::config::SystemConfig;

/// Largest `r` with `r^k <= x`.
fn iroot(x: u64, k: u32) -> u64 {
    if k <= 1 {
        return x;
    }
    let mut r = (x as f64).powf(1.0 / f64::from(k)).round() as u64;
    while r > 0 && r.checked_pow(k).is_none_or(|p| p > x) {
        r -= 1;
    }
    while (r + 1).checked_pow(k).is_some_and(|p| p <= x) {
        r += 1;
    }
    r.max(1)
}

/// Per-dimension sub-tile capacity of one block.
///
/// The rows are shared among the row dimensions and the columns among the
/// column dimensions, each getting `⌊capacity^(1/k)⌋`. A dimension whose
/// tile extent is 1 needs no share and is left out of `k`.
pub fn block_caps(tile: [u64; 3], bmap: BlockMapping, rows: u64, cols: u64) -> [u64; 3] {
    let mut caps = [1u64; 3];
    for (dims, capacity) in [(bmap.row_dims(), rows), (bmap.col_dims(), cols)] {
        let active: Vec<Dim> = dims.into_iter().filter(|d| tile[d.index()] > 1).collect();
        if active.is_empty() {
            continue;
        }
        let share = iroot(capacity, active.len() as u32);
        for d in active {
            caps[d.index()] = share;
        }
    }
    caps
}

/// Number of sub-tiles a block iterates over for a `tile` indexed
/// `[M, N, K]`.
///
/// With `{R:MN, C:K}` this is
/// `⌈M_t/⌊√rows⌋⌉ · ⌈N_t/⌊√rows⌋⌉ · ⌈K_t/cols⌉`; the other block mappings
/// split capacity the same way.
pub fn temporal_iterations(tile: [u64; 3], bmap: BlockMapping, rows: u64, cols: u64) -> u64 {
    let caps = block_caps(tile, bmap, rows, cols);
    (0..3).map(|d| tile[d].div_ceil(caps[d])).product()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct TilePlan {
    pub shape: GemmShape,
    pub mapping: Mapping,
    /// Units available at each level.
    pub fanout: [u64; 5],
    /// Units holding data at each level.
    pub used: [u64; 5],
    /// Tile extent `[M, N, K]` below each level.
    pub level_tiles: [[u64; 3]; 5],
    /// Tile held by one block, `[M, N, K]`.
    pub block_tile: [u64; 3],
    /// Largest sub-tile one temporal iteration processes.
    pub sub_tile: [u64; 3],
    pub caps: [u64; 3],
    pub temporal_iterations: u64,
    /// Copies of the dynamic input (M×K) made at each level.
    pub dup_input: [u64; 5],
    /// Copies of the weights (K×N) made at each level.
    pub dup_weight: [u64; 5],
    /// Levels assigned K, whose partial sums need reducing.
    pub reduction_levels: Vec<Level>,
    /// K lies on block columns, so products reduce across columns.
    pub column_reduction: bool,
    pub block_rows: u64,
    pub block_cols: u64,
}

impl TilePlan {
    pub fn used_at(&self, level: Level) -> u64 {
        self.used[level.index()]
    }

    /// Row slots of one sub-tile: every combination of row dimensions.
    pub fn row_slots(&self) -> u64 {
        self.mapping
            .bmap
            .row_dims()
            .iter()
            .map(|d| self.sub_tile[d.index()])
            .product()
    }

    /// Active columns of one sub-tile.
    pub fn lanes(&self) -> u64 {
        self.mapping
            .bmap
            .col_dims()
            .iter()
            .map(|d| self.sub_tile[d.index()])
            .product()
    }

    /// Independent column groups reduced separately by the popcount unit.
    pub fn segments(&self) -> u64 {
        if self.column_reduction {
            self.lanes() / self.sub_tile[Dim::K.index()]
        } else {
            self.lanes()
        }
    }

    /// Banks holding data.
    pub fn used_banks(&self) -> u64 {
        [Level::C, Level::R, Level::B, Level::D]
            .iter()
            .map(|l| self.used_at(*l))
            .product()
    }

    /// Partial-sum copies of the output produced above the block level.
    pub fn partials_above_block(&self) -> u64 {
        self.reduction_levels
            .iter()
            .filter(|l| **l != Level::A)
            .map(|l| self.used_at(*l))
            .product()
    }

    /// Partial sums reduced between blocks of one bank.
    pub fn partials_in_bank(&self) -> u64 {
        if self.mapping.hmap.dim_of(Level::A) == Dim::K {
            self.used_at(Level::A)
        } else {
            1
        }
    }
}

pub fn level_fanouts(cfg: &SystemConfig) -> [u64; 5] {
    let d = cfg.dram();
    [
        u64::from(d.channels),
        u64::from(d.ranks_per_channel),
        u64::from(d.banks_per_device),
        u64::from(d.devices_per_rank),
        cfg.blocks_per_bank(),
    ]
}

/// Splits `shape` across the hierarchy according to `mapping`.
///
/// Each dimension is divided at its levels from channel down to block by
/// ceiling division; a level uses only as many units as the remaining
/// extent needs. Edge tiles are padded.
pub fn tile(shape: &GemmShape, mapping: &Mapping, cfg: &SystemConfig) -> TilePlan {
    let fanout = level_fanouts(cfg);
    let mut extent = [shape.m, shape.n, shape.k];
    let mut used = [1u64; 5];
    let mut level_tiles = [[0u64; 3]; 5];
    for level in Level::ALL {
        let d = mapping.hmap.dim_of(level).index();
        let after = extent[d].div_ceil(fanout[level.index()]);
        used[level.index()] = extent[d].div_ceil(after);
        extent[d] = after;
        level_tiles[level.index()] = extent;
    }
    let block_rows = u64::from(cfg.dram().rows_per_subarray);
    let block_cols = u64::from(cfg.block_width());
    let caps = block_caps(extent, mapping.bmap, block_rows, block_cols);
    let sub_tile = [0, 1, 2].map(|d| extent[d].min(caps[d]));
    let dup = |dim: Dim| {
        Level::ALL.map(|l| {
            if mapping.hmap.dim_of(l) == dim {
                used[l.index()]
            } else {
                1
            }
        })
    };
    TilePlan {
        shape: *shape,
        mapping: *mapping,
        fanout,
        used,
        level_tiles,
        block_tile: extent,
        sub_tile,
        caps,
        temporal_iterations: temporal_iterations(extent, mapping.bmap, block_rows, block_cols),
        dup_input: dup(Dim::N),
        dup_weight: dup(Dim::M),
        reduction_levels: mapping.hmap.levels_of(Dim::K).collect(),
        column_reduction: mapping.bmap.column_reduction(),
        block_rows,
        block_cols,
    }
}

/// Index ranges `[M, N, K]` of the tile at block coordinates `coords`
/// (one index per level, each below `plan.used`). Ranges may be empty at
/// ragged edges.
pub fn block_range(plan: &TilePlan, coords: [u64; 5]) -> [Range<u64>; 3] {
    let shape = plan.shape;
    let mut ranges = [0..shape.m, 0..shape.n, 0..shape.k];
    for level in Level::ALL {
        let d = plan.mapping.hmap.dim_of(level).index();
        let size = plan.level_tiles[level.index()][d];
        let r = &ranges[d];
        let start = (r.start + coords[level.index()] * size).min(r.end);
        let end = (start + size).min(r.end);
        ranges[d] = start..end;
    }
    ranges
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::preset;
    use crate::mapping::enumerate_mappings;
    use proptest::prelude::*;

    fn bmap(lit: &str) -> BlockMapping {
        format!("H{{M:CRBDA}};{lit}").parse::<Mapping>().unwrap().bmap
    }

    #[test]
    fn integer_roots() {
        assert_eq!(iroot(16, 2), 4);
        assert_eq!(iroot(15, 2), 3);
        assert_eq!(iroot(128, 2), 11);
        assert_eq!(iroot(1024, 3), 10);
        assert_eq!(iroot(1, 2), 1);
        assert_eq!(iroot(7, 1), 7);
    }

    #[test]
    fn temporal_formula_examples() {
        let rmn = bmap("B{R:MN,C:K}");
        // tile given as [M, N, K]
        assert_eq!(temporal_iterations([8, 8, 16], rmn, 16, 8), 8);
        assert_eq!(temporal_iterations([2, 2, 4], rmn, 16, 8), 1);
        assert_eq!(temporal_iterations([6, 6, 8], rmn, 15, 8), 4);
    }

    #[test]
    fn fig6_style_plan() {
        // 2 channels, ranks, banks, devices; 4 blocks per bank
        let cfg = preset("desk_small").unwrap();
        let m: Mapping = "H{M:RB,N:CD,K:A};B{R:MN,C:K}".parse().unwrap();
        let plan = tile(&GemmShape::new(8, 8, 8, 8), &m, &cfg);
        assert_eq!(plan.block_tile, [2, 2, 2]);
        assert_eq!(plan.dup_input[Level::D.index()], 2);
        assert_eq!(plan.dup_input[Level::C.index()], 2);
        assert_eq!(plan.dup_input[Level::R.index()], 1);
        assert_eq!(plan.reduction_levels, vec![Level::A]);
        assert!(plan.column_reduction);
        assert_eq!(plan.temporal_iterations, 1);
    }

    #[test]
    fn k_on_banks_is_a_reduction_level() {
        let cfg = preset("desk_small").unwrap();
        let m: Mapping = "H{M:CR,N:DA,K:B};B{R:M,C:NK}".parse().unwrap();
        let plan = tile(&GemmShape::new(4, 8, 4, 8), &m, &cfg);
        assert_eq!(plan.reduction_levels, vec![Level::B]);
        assert_eq!(plan.partials_above_block(), 2);
    }

    #[test]
    fn small_levels_use_fewer_units() {
        let cfg = preset("racam_full").unwrap();
        let m: Mapping = "H{M:C,N:RBD,K:A};B{R:MN,C:K}".parse().unwrap();
        let plan = tile(&GemmShape::new(3, 10, 5, 8), &m, &cfg);
        assert_eq!(plan.used_at(Level::C), 3);
        assert_eq!(plan.used_at(Level::R), 5);
        assert_eq!(plan.used_at(Level::B), 1);
        assert_eq!(plan.used_at(Level::A), 10);
        assert_eq!(plan.block_tile, [1, 1, 1]);
    }

    proptest! {
        #[test]
        fn blocks_cover_the_shape_exactly(
            m in 1u64..10, k in 1u64..10, n in 1u64..10, idx in 0usize..1458,
        ) {
            let cfg = preset("desk_small").unwrap();
            let shape = GemmShape::new(m, k, n, 8);
            let all = enumerate_mappings(&shape);
            let mapping = all[idx % all.len()];
            let plan = tile(&shape, &mapping, &cfg);
            let mut covered = 0u64;
            let mut coords = [0u64; 5];
            loop {
                let r = block_range(&plan, coords);
                let sizes: Vec<u64> = r.iter().map(|x| x.end - x.start).collect();
                prop_assert!(sizes.iter().zip(plan.block_tile).all(|(s, t)| *s <= t));
                covered += sizes.iter().product::<u64>();
                // odometer over the used units
                let mut l = 4;
                loop {
                    coords[l] += 1;
                    if coords[l] < plan.used[l] { break; }
                    coords[l] = 0;
                    if l == 0 { break; }
                    l -= 1;
                }
                if coords == [0; 5] { break; }
            }
            prop_assert_eq!(covered, shape.macs());
            let padded: u64 = (0..3).map(|d| plan.block_tile[d].div_ceil(plan.caps[d])).product();
            prop_assert_eq!(plan.temporal_iterations, padded);
        }
    }
}
