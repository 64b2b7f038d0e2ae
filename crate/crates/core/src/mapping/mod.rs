//! GEMM mapping space.
//!
//! A mapping assigns each of the five parallel levels (channel, rank, bank,
//! device, block) to one GEMM dimension and splits a block's rows and
//! columns between the dimensions. The literal form is
//! `H{M:RB,N:CD,K:A};B{R:MN,C:K}`.

mod exec;
mod io;
mod tiling;

pub use exec::{execute_plan, oracle_gemm, PlanRun};
pub use io::{infer_io_pattern, io_pattern, IoPattern};
pub use tiling::{block_range, temporal_iterations, tile, TilePlan};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MappingError {
    #[error("bad shape `{0}` (expected MxKxN with positive sizes)")]
    BadShape(String),
    #[error("bad mapping literal `{literal}`: {reason}")]
    BadLiteral { literal: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Dim {
    M,
    N,
    K,
}

impl Dim {
    pub const ALL: [Dim; 3] = [Dim::M, Dim::N, Dim::K];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn letter(self) -> char {
        match self {
            Dim::M => 'M',
            Dim::N => 'N',
            Dim::K => 'K',
        }
    }

    fn from_letter(c: char) -> Option<Dim> {
        Dim::ALL.into_iter().find(|d| d.letter() == c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Level {
    C,
    R,
    B,
    D,
    A,
}

impl Level {
    /// Outermost first; tiling splits dimensions in this order.
    pub const ALL: [Level; 5] = [Level::C, Level::R, Level::B, Level::D, Level::A];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn letter(self) -> char {
        match self {
            Level::C => 'C',
            Level::R => 'R',
            Level::B => 'B',
            Level::D => 'D',
            Level::A => 'A',
        }
    }

    fn from_letter(c: char) -> Option<Level> {
        Level::ALL.into_iter().find(|l| l.letter() == c)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct GemmShape {
    pub m: u64,
    pub k: u64,
    pub n: u64,
    pub precision: u32,
}

impl GemmShape {
    pub fn new(m: u64, k: u64, n: u64, precision: u32) -> Self {
        assert!(m >= 1 && k >= 1 && n >= 1, "GEMM dimensions must be positive");
        GemmShape { m, k, n, precision }
    }

    pub fn is_gemv(&self) -> bool {
        self.m == 1
    }

    pub fn dim(&self, d: Dim) -> u64 {
        match d {
            Dim::M => self.m,
            Dim::N => self.n,
            Dim::K => self.k,
        }
    }

    pub fn macs(&self) -> u64 {
        self.m * self.k * self.n
    }

    /// Parses `MxKxN`.
    pub fn parse(s: &str, precision: u32) -> Result<Self, MappingError> {
        let bad = || MappingError::BadShape(s.to_string());
        let parts: Vec<u64> = s
            .split('x')
            .map(|p| p.trim().parse::<u64>().map_err(|_| bad()))
            .collect::<Result<_, _>>()?;
        match parts[..] {
            [m, k, n] if m > 0 && k > 0 && n > 0 => Ok(GemmShape::new(m, k, n, precision)),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for GemmShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}", self.m, self.k, self.n)
    }
}

/// Dimension assigned to each level, indexed by [`Level::index`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct HierarchicalMapping {
    pub assignment: [Dim; 5],
}

impl HierarchicalMapping {
    pub fn dim_of(&self, level: Level) -> Dim {
        self.assignment[level.index()]
    }

    pub fn levels_of(&self, dim: Dim) -> impl Iterator<Item = Level> + '_ {
        Level::ALL.into_iter().filter(move |l| self.dim_of(*l) == dim)
    }
}

impl fmt::Display for HierarchicalMapping {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = Dim::ALL
            .into_iter()
            .filter_map(|d| {
                let levels: String = self.levels_of(d).map(Level::letter).collect();
                (!levels.is_empty()).then(|| format!("{}:{levels}", d.letter()))
            })
            .collect();
        write!(f, "H{{{}}}", parts.join(","))
    }
}

/// Split of a block between rows and columns. Both sides are non-empty
/// and together cover M, N and K.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BlockMapping {
    /// `true` where the dimension indexes block rows.
    rows: [bool; 3],
}

impl BlockMapping {
    /// Every legal block mapping, in a fixed order.
    pub fn all() -> Vec<BlockMapping> {
        (1u8..7)
            .map(|bits| BlockMapping {
                rows: [bits & 1 != 0, bits & 2 != 0, bits & 4 != 0],
            })
            .collect()
    }

    pub fn new(row_dims: &[Dim]) -> Option<BlockMapping> {
        let mut rows = [false; 3];
        for d in row_dims {
            rows[d.index()] = true;
        }
        let count = rows.iter().filter(|r| **r).count();
        (1..3).contains(&count).then_some(BlockMapping { rows })
    }

    pub fn on_rows(&self, d: Dim) -> bool {
        self.rows[d.index()]
    }

    pub fn row_dims(&self) -> Vec<Dim> {
        Dim::ALL.into_iter().filter(|d| self.on_rows(*d)).collect()
    }

    pub fn col_dims(&self) -> Vec<Dim> {
        Dim::ALL.into_iter().filter(|d| !self.on_rows(*d)).collect()
    }

    /// Reduction runs across columns (popcount-friendly).
    pub fn column_reduction(&self) -> bool {
        !self.on_rows(Dim::K)
    }
}

impl fmt::Display for BlockMapping {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let side = |v: Vec<Dim>| v.into_iter().map(Dim::letter).collect::<String>();
        write!(f, "B{{R:{},C:{}}}", side(self.row_dims()), side(self.col_dims()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Mapping {
    pub hmap: HierarchicalMapping,
    pub bmap: BlockMapping,
}

impl fmt::Display for Mapping {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{};{}", self.hmap, self.bmap)
    }
}

impl Mapping {
    pub fn literal(&self) -> String {
        self.to_string()
    }

    pub fn legal_for(&self, shape: &GemmShape) -> bool {
        !shape.is_gemv() || self.hmap.assignment.iter().all(|d| *d != Dim::M)
    }
}

fn parse_groups(body: &str, literal: &str) -> Result<Vec<(char, String)>, MappingError> {
    let bad = |reason: &str| MappingError::BadLiteral {
        literal: literal.to_string(),
        reason: reason.to_string(),
    };
    body.split(',')
        .map(|g| {
            let (k, v) = g.split_once(':').ok_or_else(|| bad("expected `X:letters`"))?;
            let mut key = k.trim().chars();
            match (key.next(), key.next()) {
                (Some(c), None) => Ok((c, v.trim().to_string())),
                _ => Err(bad("group key must be one letter")),
            }
        })
        .collect()
}

fn braced<'a>(s: &'a str, tag: char, literal: &str) -> Result<&'a str, MappingError> {
    s.trim()
        .strip_prefix(tag)
        .and_then(|r| r.trim().strip_prefix('{'))
        .and_then(|r| r.strip_suffix('}'))
        .ok_or_else(|| MappingError::BadLiteral {
            literal: literal.to_string(),
            reason: format!("expected `{tag}{{...}}`"),
        })
}

impl FromStr for Mapping {
    type Err = MappingError;

    fn from_str(literal: &str) -> Result<Self, MappingError> {
        let bad = |reason: &str| MappingError::BadLiteral {
            literal: literal.to_string(),
            reason: reason.to_string(),
        };
        let (h, b) = literal.split_once(';').ok_or_else(|| bad("missing `;`"))?;

        let mut assignment: [Option<Dim>; 5] = [None; 5];
        for (d, levels) in parse_groups(braced(h, 'H', literal)?, literal)? {
            let dim = Dim::from_letter(d).ok_or_else(|| bad("unknown dimension"))?;
            for c in levels.chars() {
                let level = Level::from_letter(c).ok_or_else(|| bad("unknown level"))?;
                if assignment[level.index()].replace(dim).is_some() {
                    return Err(bad("level assigned twice"));
                }
            }
        }
        if assignment.iter().any(Option::is_none) {
            return Err(bad("every level must be assigned"));
        }
        let hmap = HierarchicalMapping {
            assignment: assignment.map(|d| d.unwrap()),
        };

        let groups = parse_groups(braced(b, 'B', literal)?, literal)?;
        let mut rows: Vec<Dim> = Vec::new();
        let mut seen = [false; 3];
        for (side, dims) in &groups {
            for c in dims.chars() {
                let d = Dim::from_letter(c).ok_or_else(|| bad("unknown dimension"))?;
                if std::mem::replace(&mut seen[d.index()], true) {
                    return Err(bad("dimension placed twice in the block"));
                }
                match side {
                    'R' => rows.push(d),
                    'C' => {}
                    _ => return Err(bad("block sides are R and C")),
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(bad("block mapping must cover M, N and K"));
        }
        let bmap = BlockMapping::new(&rows).ok_or_else(|| bad("both block sides must be non-empty"))?;
        Ok(Mapping { hmap, bmap })
    }
}

/// All candidate mappings for `shape`, in a fixed order: hierarchical
/// assignments in lexicographic order (channel slowest), each followed by
/// the six block mappings.
///
/// GEMV shapes never assign a level to M, leaving 2⁵ × 6 = 192 candidates;
/// GEMM shapes get 3⁵ × 6 = 1458.
pub fn enumerate_mappings(shape: &GemmShape) -> Vec<Mapping> {
    let dims: &[Dim] = if shape.is_gemv() {
        &[Dim::N, Dim::K]
    } else {
        &Dim::ALL
    };
    let base = dims.len();
    let count = base.pow(5);
    let bmaps = BlockMapping::all();
    let mut out = Vec::with_capacity(count * bmaps.len());
    for code in 0..count {
        let mut assignment = [Dim::M; 5];
        let mut rest = code;
        for slot in assignment.iter_mut().rev() {
            *slot = dims[rest % base];
            rest /= base;
        }
        let hmap = HierarchicalMapping { assignment };
        for &bmap in &bmaps {
            out.push(Mapping { hmap, bmap });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    #[test]
    fn paper_literal_round_trips() {
        let lit = "H{M:RB,N:CD,K:A};B{R:MN,C:K}";
        let m: Mapping = lit.parse().unwrap();
        assert_eq!(m.hmap.dim_of(Level::R), Dim::M);
        assert_eq!(m.hmap.dim_of(Level::C), Dim::N);
        assert_eq!(m.hmap.dim_of(Level::A), Dim::K);
        assert_eq!(m.bmap.row_dims(), vec![Dim::M, Dim::N]);
        assert!(m.bmap.column_reduction());
        assert_eq!(m.literal(), lit);
    }

    #[test]
    fn bad_literals_are_rejected() {
        for lit in [
            "H{M:RB,N:CD};B{R:MN,C:K}",
            "H{M:RB,N:CD,K:AA};B{R:MN,C:K}",
            "H{M:RB,N:CD,K:A};B{R:MNK,C:}",
            "H{M:RB,N:CD,K:A};B{R:MN}",
            "H{M:RB,N:CD,K:A}",
            "H{X:RB,N:CD,K:A};B{R:MN,C:K}",
        ] {
            assert!(lit.parse::<Mapping>().is_err(), "{lit}");
        }
    }

    #[test]
    fn six_block_mappings() {
        let all = BlockMapping::all();
        assert_eq!(all.len(), 6);
        assert!(all
            .iter()
            .all(|b| !b.row_dims().is_empty() && !b.col_dims().is_empty()));
        assert!(BlockMapping::new(&[Dim::M, Dim::N, Dim::K]).is_none());
        assert!(BlockMapping::new(&[]).is_none());
    }

    #[test]
    fn candidate_counts() {
        let gemv = enumerate_mappings(&GemmShape::new(1, 2048, 2048, 8));
        assert_eq!(gemv.len(), 192);
        assert!(gemv.iter().all(|m| !m.hmap.assignment.contains(&Dim::M)));
        let gemm = enumerate_mappings(&GemmShape::new(64, 64, 64, 8));
        assert_eq!(gemm.len(), 1458);
        let unique: BTreeSet<String> = gemm.iter().map(Mapping::literal).collect();
        assert_eq!(unique.len(), 1458);
        assert_eq!(gemm, enumerate_mappings(&GemmShape::new(64, 64, 64, 8)));
    }

    #[test]
    fn shape_parsing() {
        let s = GemmShape::parse("1024x12288x12288", 8).unwrap();
        assert_eq!((s.m, s.k, s.n), (1024, 12288, 12288));
        assert_eq!(s.to_string(), "1024x12288x12288");
        assert!(GemmShape::parse("0x1x1", 8).is_err());
        assert!(GemmShape::parse("4x4", 8).is_err());
    }

    proptest! {
        #[test]
        fn every_enumerated_literal_round_trips(idx in 0usize..1458) {
            let all = enumerate_mappings(&GemmShape::new(8, 8, 8, 8));
            let m = all[idx];
            prop_assert_eq!(m.literal().parse::<Mapping>().unwrap(), m);
        }
    }
}
