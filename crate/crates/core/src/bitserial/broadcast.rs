use std::collections::{BTreeMap, BTreeSet};

use super::{EngineError, Event, EventTrace};
use crate::config::SystemConfig;

/// Words written into one device, keyed by `(bank, column slot)`.
///
/// A column slot is one `device_data_width`-wide group of row-buffer
/// columns.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DeviceImage {
    pub words: BTreeMap<(usize, usize), u64>,
}

fn check_targets(
    word: u64,
    banks: &BTreeSet<usize>,
    cols: &BTreeSet<usize>,
    cfg: &SystemConfig,
) -> Result<(), EngineError> {
    let width = cfg.dram().device_data_width_bits;
    if width < 64 && word >> width != 0 {
        return Err(EngineError::ValueOutOfRange {
            value: word,
            bits: width,
        });
    }
    let bank_limit = cfg.dram().banks_per_device as usize;
    let col_limit = (cfg.dram().cols_per_subarray / width).max(1) as usize;
    if let Some(&b) = banks.iter().find(|&&b| b >= bank_limit) {
        return Err(EngineError::TargetOutOfRange {
            what: "banks",
            index: b,
            limit: bank_limit,
        });
    }
    if let Some(&c) = cols.iter().find(|&&c| c >= col_limit) {
        return Err(EngineError::TargetOutOfRange {
            what: "column slots",
            index: c,
            limit: col_limit,
        });
    }
    Ok(())
}

fn fill(image: &mut DeviceImage, word: u64, banks: &BTreeSet<usize>, cols: &BTreeSet<usize>) {
    for &b in banks {
        for &c in cols {
            image.words.insert((b, c), word);
        }
    }
}

/// Replicates one external word to every selected bank and column slot.
/// One word crosses the external bus whatever the fan-out.
pub fn broadcast_write(
    word: u64,
    banks: &BTreeSet<usize>,
    cols: &BTreeSet<usize>,
    cfg: &SystemConfig,
    image: &mut DeviceImage,
    trace: &mut EventTrace,
) -> Result<(), EngineError> {
    if !cfg.periph().bu_enabled {
        return Err(EngineError::BroadcastDisabled);
    }
    check_targets(word, banks, cols, cfg)?;
    fill(image, word, banks, cols);
    if !banks.is_empty() && !cols.is_empty() {
        trace.record(Event::BcastWord);
    }
    Ok(())
}

/// Fallback without broadcast units: one external word per target.
pub fn write_per_target(
    word: u64,
    banks: &BTreeSet<usize>,
    cols: &BTreeSet<usize>,
    cfg: &SystemConfig,
    image: &mut DeviceImage,
    trace: &mut EventTrace,
) -> Result<(), EngineError> {
    check_targets(word, banks, cols, cfg)?;
    fill(image, word, banks, cols);
    trace.record_n(Event::BcastWord, (banks.len() * cols.len()) as u64);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{preset, Ablation};

    fn set(r: std::ops::Range<usize>) -> BTreeSet<usize> {
        r.collect()
    }

    #[test]
    fn fan_out_costs_one_word_with_broadcast() {
        let cfg = preset("racam_full").unwrap();
        let mut img = DeviceImage::default();
        let mut t = EventTrace::new();
        broadcast_write(0xBEEF, &set(0..16), &set(3..4), &cfg, &mut img, &mut t).unwrap();
        assert_eq!(t.counters().bcast_word, 1);
        assert_eq!(img.words.len(), 16);
        assert!(img.words.values().all(|&w| w == 0xBEEF));
    }

    #[test]
    fn without_broadcast_each_target_costs_a_word() {
        let cfg = preset("racam_full").unwrap().ablate(Ablation {
            bu: true,
            ..Ablation::NONE
        });
        let mut img = DeviceImage::default();
        let mut t = EventTrace::new();
        assert_eq!(
            broadcast_write(1, &set(0..16), &set(0..1), &cfg, &mut img, &mut t),
            Err(EngineError::BroadcastDisabled)
        );
        write_per_target(1, &set(0..16), &set(0..1), &cfg, &mut img, &mut t).unwrap();
        assert_eq!(t.counters().bcast_word, 16);
    }

    #[test]
    fn single_target_costs_the_same() {
        let cfg = preset("racam_full").unwrap();
        let (mut a, mut b) = (EventTrace::new(), EventTrace::new());
        let mut img = DeviceImage::default();
        broadcast_write(9, &set(2..3), &set(5..6), &cfg, &mut img, &mut a).unwrap();
        write_per_target(9, &set(2..3), &set(5..6), &cfg, &mut img, &mut b).unwrap();
        assert_eq!(a.counters(), b.counters());
    }

    #[test]
    fn targets_are_range_checked() {
        let cfg = preset("racam_full").unwrap();
        let mut img = DeviceImage::default();
        let err = broadcast_write(
            0,
            &set(16..17),
            &set(0..1),
            &cfg,
            &mut img,
            &mut EventTrace::new(),
        );
        assert!(matches!(
            err,
            Err(EngineError::TargetOutOfRange { what: "banks", .. })
        ));
        let err = broadcast_write(
            1 << 16,
            &set(0..1),
            &set(0..1),
            &cfg,
            &mut img,
            &mut EventTrace::new(),
        );
        assert!(matches!(err, Err(EngineError::ValueOutOfRange { .. })));
    }
}
