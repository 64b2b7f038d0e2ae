use super::EngineError;

/// Operands in vertical layout: row `b` holds bit `b` of every lane.
///
/// Rows are packed 64 lanes per word so that one row-wide PE step is a
/// handful of word operations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BitMatrix {
    lanes: usize,
    depth: usize,
    words: usize,
    data: Vec<u64>,
}

pub(crate) fn words_for(lanes: usize) -> usize {
    lanes.div_ceil(64).max(1)
}

impl BitMatrix {
    pub fn zeros(lanes: usize, depth: usize) -> Self {
        assert!(depth >= 1, "bit matrix depth must be at least 1");
        let words = words_for(lanes);
        BitMatrix {
            lanes,
            depth,
            words,
            data: vec![0; words * depth],
        }
    }

    pub fn lanes(&self) -> usize {
        self.lanes
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn bit(&self, b: usize, c: usize) -> bool {
        assert!(b < self.depth && c < self.lanes, "bit ({b}, {c}) out of range");
        (self.data[b * self.words + c / 64] >> (c % 64)) & 1 == 1
    }

    pub fn set(&mut self, b: usize, c: usize, v: bool) {
        assert!(b < self.depth && c < self.lanes, "bit ({b}, {c}) out of range");
        let w = &mut self.data[b * self.words + c / 64];
        if v {
            *w |= 1 << (c % 64);
        } else {
            *w &= !(1 << (c % 64));
        }
    }

    pub fn row(&self, b: usize) -> &[u64] {
        &self.data[b * self.words..(b + 1) * self.words]
    }

    pub fn row_mut(&mut self, b: usize) -> &mut [u64] {
        &mut self.data[b * self.words..(b + 1) * self.words]
    }

    /// Integer held by lane `c` (unsigned, bit 0 least significant).
    pub fn lane_value(&self, c: usize) -> u64 {
        assert!(self.depth <= 64);
        (0..self.depth).fold(0u64, |acc, b| acc | (u64::from(self.bit(b, c)) << b))
    }

    pub fn to_values(&self) -> Vec<u64> {
        (0..self.lanes).map(|c| self.lane_value(c)).collect()
    }

    /// Number of ones in row `b` restricted to lanes `[start, end)`.
    pub fn row_popcount(&self, b: usize, start: usize, end: usize) -> u64 {
        range_popcount(self.row(b), start, end)
    }

    /// Copy with `depth` rows: truncated or zero-extended at the top.
    pub fn resized(&self, depth: usize) -> BitMatrix {
        let mut out = BitMatrix::zeros(self.lanes, depth);
        for b in 0..depth.min(self.depth) {
            out.row_mut(b).copy_from_slice(self.row(b));
        }
        out
    }
}

/// Ones in lanes `[start, end)` of a packed row.
pub(crate) fn range_popcount(row: &[u64], start: usize, end: usize) -> u64 {
    let mut total = 0u64;
    let mut c = start;
    while c < end {
        let w = c / 64;
        let lo = c % 64;
        let hi = (end - w * 64).min(64);
        let width = hi - lo;
        let mask = if width == 64 {
            u64::MAX
        } else {
            ((1u64 << width) - 1) << lo
        };
        total += u64::from((row[w] & mask).count_ones());
        c = w * 64 + hi;
    }
    total
}

/// Host-side transpose of `values` into an `n`-row vertical matrix.
pub fn transpose_to_vertical(values: &[u64], n: u32) -> Result<BitMatrix, EngineError> {
    if n == 0 || n > 64 {
        return Err(EngineError::BadPrecision(n));
    }
    let mut m = BitMatrix::zeros(values.len(), n as usize);
    for (c, &v) in values.iter().enumerate() {
        if n < 64 && v >> n != 0 {
            return Err(EngineError::ValueOutOfRange { value: v, bits: n });
        }
        for b in 0..n as usize {
            if (v >> b) & 1 == 1 {
                m.set(b, c, true);
            }
        }
    }
    Ok(m)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row_bits(m: &BitMatrix, b: usize) -> Vec<u8> {
        (0..m.lanes()).map(|c| u8::from(m.bit(b, c))).collect()
    }

    #[test]
    fn transpose_small_example() {
        let m = transpose_to_vertical(&[5, 3], 4).unwrap();
        assert_eq!(m.depth(), 4);
        assert_eq!(row_bits(&m, 0), vec![1, 1]);
        assert_eq!(row_bits(&m, 1), vec![0, 1]);
        assert_eq!(row_bits(&m, 2), vec![1, 0]);
        assert_eq!(row_bits(&m, 3), vec![0, 0]);
    }

    #[test]
    fn transpose_extremes() {
        let z = transpose_to_vertical(&[0], 1).unwrap();
        assert!(!z.bit(0, 0));
        let ones = transpose_to_vertical(&[255], 8).unwrap();
        assert!((0..8).all(|b| ones.bit(b, 0)));
    }

    #[test]
    fn out_of_range_value_rejected() {
        assert_eq!(
            transpose_to_vertical(&[16], 4),
            Err(EngineError::ValueOutOfRange { value: 16, bits: 4 })
        );
    }

    #[test]
    fn wide_matrices_round_trip() {
        let values: Vec<u64> = (0..200).map(|i| (i * 37) % 256).collect();
        let m = transpose_to_vertical(&values, 8).unwrap();
        assert_eq!(m.to_values(), values);
        let ones: u64 = values.iter().map(|v| v & 1).sum();
        assert_eq!(m.row_popcount(0, 0, 200), ones);
        let partial: u64 = values[70..130].iter().map(|v| (v >> 3) & 1).sum();
        assert_eq!(m.row_popcount(3, 70, 130), partial);
    }
}
