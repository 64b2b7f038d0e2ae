//! Chip-area overhead of the added peripherals.
//!
//! DRAM area is storage bits over a fixed bit density. Added logic is the
//! synthesized area of each unit times its count, scaled to the target node
//! and inflated for place and route; the locality buffers are SRAM.

use serde::{Deserialize, Serialize};

use crate::config::{ConfigError, SystemConfig};

const DEFAULTS: &str = include_str!("../presets/area_defaults.toml");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AreaParams {
    /// Bits per mm².
    pub dram_bit_density: f64,
    pub sram_bit_density: f64,
    /// mm² at the reference node.
    pub synth_area_per_pe: f64,
    pub synth_area_pc: f64,
    pub synth_area_bcast: f64,
    /// Fraction of the placed area holding cells, in (0, 1].
    pub placement_utilization: f64,
    /// Growth from clock tree, timing repair and resizing.
    pub buffer_growth: f64,
    pub routing_capacity: f64,
    /// Area factor from the reference node to the target node.
    pub node_scale: f64,
}

impl AreaParams {
    pub fn parse(source: &str) -> Result<Self, ConfigError> {
        let p: AreaParams = toml::from_str(source).map_err(|e| ConfigError::Parse(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }

    // negated comparisons also reject NaN
    #[allow(clippy::neg_cmp_op_on_partial_ord)]
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |name: &'static str, detail: String| Err(ConfigError::Invariant { name, detail });
        if !(self.placement_utilization > 0.0 && self.placement_utilization <= 1.0) {
            return bad(
                "placement_utilization",
                format!("{} not in (0, 1]", self.placement_utilization),
            );
        }
        if !(self.buffer_growth >= 0.0) {
            return bad("buffer_growth", format!("{} < 0", self.buffer_growth));
        }
        for (name, v) in [
            ("dram_bit_density", self.dram_bit_density),
            ("sram_bit_density", self.sram_bit_density),
            ("routing_capacity", self.routing_capacity),
            ("node_scale", self.node_scale),
        ] {
            if !(v > 0.0) {
                return bad(name, format!("{v} must be positive"));
            }
        }
        for (name, v) in [
            ("synth_area_per_pe", self.synth_area_per_pe),
            ("synth_area_pc", self.synth_area_pc),
            ("synth_area_bcast", self.synth_area_bcast),
        ] {
            if !(v >= 0.0) {
                return bad(name, format!("{v} must not be negative"));
            }
        }
        Ok(())
    }
}

impl Default for AreaParams {
    fn default() -> Self {
        AreaParams::parse(DEFAULTS).expect("shipped area defaults are valid")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AreaReport {
    pub dram_mm2: f64,
    pub logic_mm2: f64,
    pub sram_mm2: f64,
    pub peripheral_mm2: f64,
    pub overhead_fraction: f64,
}

pub fn dram_area(cfg: &SystemConfig, p: &AreaParams) -> f64 {
    cfg.total_bits() as f64 / p.dram_bit_density
}

fn logic_area(cfg: &SystemConfig, p: &AreaParams) -> f64 {
    let banks = cfg.total_banks() as f64;
    let per = cfg.periph();
    let mut synth = cfg.total_pes() as f64 * p.synth_area_per_pe;
    if per.pr_enabled {
        synth += banks * p.synth_area_pc;
    }
    if per.bu_enabled {
        synth += banks * p.synth_area_bcast;
    }
    synth * p.node_scale * (1.0 + p.buffer_growth) / (p.placement_utilization * p.routing_capacity)
}

fn sram_area(cfg: &SystemConfig, p: &AreaParams) -> f64 {
    let per = cfg.periph();
    if !per.lb_enabled {
        return 0.0;
    }
    let bits = u64::from(per.lb_rows) * u64::from(per.lb_cols) * cfg.total_banks();
    bits as f64 / p.sram_bit_density
}

/// Post-synthesis logic area plus locality-buffer SRAM. Units an ablation
/// removes are not counted.
pub fn peripheral_area(cfg: &SystemConfig, p: &AreaParams) -> f64 {
    logic_area(cfg, p) + sram_area(cfg, p)
}

pub fn overhead_fraction(cfg: &SystemConfig, p: &AreaParams) -> f64 {
    peripheral_area(cfg, p) / dram_area(cfg, p)
}

pub fn area_report(cfg: &SystemConfig, p: &AreaParams) -> AreaReport {
    let (logic, sram) = (logic_area(cfg, p), sram_area(cfg, p));
    let dram = dram_area(cfg, p);
    AreaReport {
        dram_mm2: dram,
        logic_mm2: logic,
        sram_mm2: sram,
        peripheral_mm2: logic + sram,
        overhead_fraction: (logic + sram) / dram,
    }
}
