//! Hardware description: DRAM organization, peripheral units and timing.
//!
//! A [`SystemConfig`] is validated once at construction and is immutable
//! afterwards. Derived geometry (block width, blocks per bank, PE count) is
//! always recomputed from the stored fields.
//!
//! The on-disk format is TOML with three sections, `[dram]`, `[peripherals]`
//! and `[timing]`. Keys carry their unit in the name (`t_rcd_ns`,
//! `bus_frequency_mhz`, ...). Timing keys other than `t_rcd_ns` / `t_rp_ns`
//! are optional and default to values derived from the bus clock.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// Largest precision representable in the 4-bit `prec` instruction field.
pub const MAX_ENCODABLE_PRECISION: u32 = 15;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("missing key: {0}")]
    MissingKey(String),
    #[error("invariant `{name}` violated: {detail}")]
    Invariant { name: &'static str, detail: String },
    #[error("unknown preset `{0}`")]
    UnknownPreset(String),
}

impl ConfigError {
    fn invariant(name: &'static str, detail: impl Into<String>) -> Self {
        ConfigError::Invariant {
            name,
            detail: detail.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DramHierarchyConfig {
    pub channels: u32,
    pub ranks_per_channel: u32,
    pub devices_per_rank: u32,
    pub banks_per_device: u32,
    pub subarrays_per_bank: u32,
    pub rows_per_subarray: u32,
    pub cols_per_subarray: u32,
    pub device_data_width_bits: u32,
    pub bus_frequency_mhz: f64,
    /// Stored and reported; no latency formula consumes it.
    pub global_bitline_width_bits: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PeripheralConfig {
    pub pes_per_bank: u32,
    pub lb_rows: u32,
    pub lb_cols: u32,
    /// Width of the popcount accumulator.
    pub popcount_width_bits: u32,
    pub broadcast_bank_width_bits: u32,
    pub max_precision_bits: u32,
    pub lb_enabled: bool,
    pub pr_enabled: bool,
    pub bu_enabled: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingParams {
    pub t_rcd_ns: f64,
    pub t_rp_ns: f64,
    /// One PE bit-step.
    pub t_pe_ns: f64,
    /// One locality-buffer row access.
    pub t_lb_ns: f64,
    /// One popcount bit-slice step.
    pub t_pc_ns: f64,
    /// One bit-parallel accumulator add.
    pub t_addp_ns: f64,
    /// Fraction of array row-access latency hidden by overlapped subarray
    /// activation.
    pub salp_overlap: f64,
    pub channel_bandwidth_bytes_per_s: f64,
}

impl TimingParams {
    /// DDR5-class defaults tied to the bus clock of `dram`.
    pub fn defaults_for(dram: &DramHierarchyConfig) -> Self {
        let clock_ns = 1000.0 / dram.bus_frequency_mhz;
        let bytes_per_transfer =
            f64::from(dram.device_data_width_bits) * f64::from(dram.devices_per_rank) / 8.0;
        TimingParams {
            t_rcd_ns: 16.0,
            t_rp_ns: 16.0,
            t_pe_ns: clock_ns,
            t_lb_ns: clock_ns,
            t_pc_ns: clock_ns,
            t_addp_ns: 4.0 * clock_ns,
            salp_overlap: 0.5,
            channel_bandwidth_bytes_per_s: 2.0 * dram.bus_frequency_mhz * 1e6 * bytes_per_transfer,
        }
    }

    /// Effective latency of one array row access (ACT + PRE) after the
    /// subarray-overlap discount.
    pub fn array_access_ns(&self) -> f64 {
        (self.t_rcd_ns + self.t_rp_ns) * (1.0 - self.salp_overlap)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TimingFile {
    t_rcd_ns: Option<f64>,
    t_rp_ns: Option<f64>,
    t_pe_ns: Option<f64>,
    t_lb_ns: Option<f64>,
    t_pc_ns: Option<f64>,
    t_addp_ns: Option<f64>,
    salp_overlap: Option<f64>,
    channel_bandwidth_bytes_per_s: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    dram: DramHierarchyConfig,
    peripherals: PeripheralConfig,
    #[serde(default)]
    timing: TimingFile,
}

/// Which of the three added peripheral structures are present.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Ablation {
    pub lb: bool,
    pub pr: bool,
    pub bu: bool,
}

impl Ablation {
    pub const NONE: Ablation = Ablation {
        lb: false,
        pr: false,
        bu: false,
    };

    /// Parses a comma-separated list such as `lb,pr`.
    pub fn parse(list: &str) -> Result<Self, ConfigError> {
        let mut out = Ablation::NONE;
        for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match item {
                "lb" => out.lb = true,
                "pr" => out.pr = true,
                "bu" => out.bu = true,
                other => return Err(ConfigError::Parse(format!("unknown ablation flag `{other}`"))),
            }
        }
        Ok(out)
    }

    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if self.lb {
            parts.push("lb");
        }
        if self.pr {
            parts.push("pr");
        }
        if self.bu {
            parts.push("bu");
        }
        if parts.is_empty() {
            "none".to_string()
        } else {
            parts.join("+")
        }
    }
}

/// Full, validated hardware description.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SystemConfig {
    dram: DramHierarchyConfig,
    periph: PeripheralConfig,
    timing: TimingParams,
}

impl SystemConfig {
    pub fn new(
        dram: DramHierarchyConfig,
        periph: PeripheralConfig,
        timing: TimingParams,
    ) -> Result<Self, ConfigError> {
        let cfg = SystemConfig { dram, periph, timing };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let d = &self.dram;
        let p = &self.periph;
        let t = &self.timing;
        let counts = [
            ("channels", d.channels),
            ("ranks_per_channel", d.ranks_per_channel),
            ("devices_per_rank", d.devices_per_rank),
            ("banks_per_device", d.banks_per_device),
            ("subarrays_per_bank", d.subarrays_per_bank),
            ("rows_per_subarray", d.rows_per_subarray),
            ("cols_per_subarray", d.cols_per_subarray),
            ("device_data_width_bits", d.device_data_width_bits),
            ("global_bitline_width_bits", d.global_bitline_width_bits),
            ("pes_per_bank", p.pes_per_bank),
            ("lb_rows", p.lb_rows),
            ("lb_cols", p.lb_cols),
            ("popcount_width_bits", p.popcount_width_bits),
            ("broadcast_bank_width_bits", p.broadcast_bank_width_bits),
            ("max_precision_bits", p.max_precision_bits),
        ];
        for (key, v) in counts {
            if v == 0 {
                return Err(ConfigError::invariant(
                    "count_positive",
                    format!("{key} must be at least 1"),
                ));
            }
        }
        if !(d.bus_frequency_mhz.is_finite() && d.bus_frequency_mhz > 0.0) {
            return Err(ConfigError::invariant(
                "count_positive",
                "bus_frequency_mhz must be positive",
            ));
        }
        if d.device_data_width_bits > 64 {
            return Err(ConfigError::invariant(
                "device_data_width",
                "device_data_width_bits must not exceed 64",
            ));
        }
        if !d.cols_per_subarray.is_multiple_of(p.pes_per_bank) {
            return Err(ConfigError::invariant(
                "cols_multiple_of_block_width",
                format!(
                    "cols_per_subarray ({}) is not a multiple of the block width ({})",
                    d.cols_per_subarray, p.pes_per_bank
                ),
            ));
        }
        if p.lb_cols != p.pes_per_bank {
            return Err(ConfigError::invariant(
                "lb_cols_equals_pes",
                format!(
                    "lb_cols ({}) must equal pes_per_bank ({})",
                    p.lb_cols, p.pes_per_bank
                ),
            ));
        }
        if p.max_precision_bits > MAX_ENCODABLE_PRECISION {
            return Err(ConfigError::invariant(
                "max_precision_range",
                format!("max_precision_bits must be at most {MAX_ENCODABLE_PRECISION}"),
            ));
        }
        if p.lb_enabled && p.lb_rows < 2 * p.max_precision_bits + 1 {
            return Err(ConfigError::invariant(
                "locality_buffer_too_small",
                format!(
                    "locality buffer too small: {} rows < 2*{}+1 required",
                    p.lb_rows, p.max_precision_bits
                ),
            ));
        }
        if p.popcount_width_bits > 64 {
            return Err(ConfigError::invariant(
                "popcount_width",
                "popcount_width_bits must not exceed 64",
            ));
        }
        let durations = [
            ("t_rcd_ns", t.t_rcd_ns),
            ("t_rp_ns", t.t_rp_ns),
            ("t_pe_ns", t.t_pe_ns),
            ("t_lb_ns", t.t_lb_ns),
            ("t_pc_ns", t.t_pc_ns),
            ("t_addp_ns", t.t_addp_ns),
            ("channel_bandwidth_bytes_per_s", t.channel_bandwidth_bytes_per_s),
        ];
        for (key, v) in durations {
            if !(v.is_finite() && v > 0.0) {
                return Err(ConfigError::invariant(
                    "timing_positive",
                    format!("{key} must be positive"),
                ));
            }
        }
        if !(0.0..=1.0).contains(&t.salp_overlap) {
            return Err(ConfigError::invariant(
                "salp_overlap_range",
                "salp_overlap must lie in [0, 1]",
            ));
        }
        Ok(())
    }

    pub fn dram(&self) -> &DramHierarchyConfig {
        &self.dram
    }

    pub fn periph(&self) -> &PeripheralConfig {
        &self.periph
    }

    pub fn timing(&self) -> &TimingParams {
        &self.timing
    }

    pub fn max_precision(&self) -> u32 {
        self.periph.max_precision_bits
    }

    /// Columns of one block; one PE per column.
    pub fn block_width(&self) -> u32 {
        self.periph.pes_per_bank
    }

    pub fn blocks_per_bank(&self) -> u64 {
        u64::from(self.dram.subarrays_per_bank)
            * u64::from(self.dram.cols_per_subarray.div_ceil(self.block_width()))
    }

    pub fn total_banks(&self) -> u64 {
        let d = &self.dram;
        u64::from(d.channels)
            * u64::from(d.ranks_per_channel)
            * u64::from(d.devices_per_rank)
            * u64::from(d.banks_per_device)
    }

    pub fn total_pes(&self) -> u64 {
        self.total_banks() * u64::from(self.periph.pes_per_bank)
    }

    pub fn total_bits(&self) -> u64 {
        let d = &self.dram;
        self.total_banks()
            * u64::from(d.subarrays_per_bank)
            * u64::from(d.rows_per_subarray)
            * u64::from(d.cols_per_subarray)
    }

    pub fn ablation(&self) -> Ablation {
        Ablation {
            lb: !self.periph.lb_enabled,
            pr: !self.periph.pr_enabled,
            bu: !self.periph.bu_enabled,
        }
    }

    /// Returns a copy with the flagged structures removed. Flags already
    /// cleared stay cleared.
    pub fn ablate(&self, flags: Ablation) -> SystemConfig {
        let mut out = self.clone();
        if flags.lb {
            out.periph.lb_enabled = false;
        }
        if flags.pr {
            out.periph.pr_enabled = false;
        }
        if flags.bu {
            out.periph.bu_enabled = false;
        }
        out
    }

    /// Copy with a different channel/rank count, used for capacity sweeps.
    pub fn with_channels_ranks(&self, channels: u32, ranks: u32) -> Result<Self, ConfigError> {
        let mut dram = self.dram.clone();
        dram.channels = channels;
        dram.ranks_per_channel = ranks;
        SystemConfig::new(dram, self.periph.clone(), self.timing.clone())
    }

    /// Copy with `pes` PEs per bank; the locality buffer keeps one column
    /// per PE.
    pub fn with_pes_per_bank(&self, pes: u32) -> Result<Self, ConfigError> {
        let mut periph = self.periph.clone();
        periph.pes_per_bank = pes;
        periph.lb_cols = pes;
        SystemConfig::new(self.dram.clone(), periph, self.timing.clone())
    }

    pub fn with_timing(&self, timing: TimingParams) -> Result<Self, ConfigError> {
        SystemConfig::new(self.dram.clone(), self.periph.clone(), timing)
    }

    /// Renders the full configuration, every key explicit.
    pub fn render(&self) -> String {
        let file = ConfigFile {
            dram: self.dram.clone(),
            peripherals: self.periph.clone(),
            timing: TimingFile {
                t_rcd_ns: Some(self.timing.t_rcd_ns),
                t_rp_ns: Some(self.timing.t_rp_ns),
                t_pe_ns: Some(self.timing.t_pe_ns),
                t_lb_ns: Some(self.timing.t_lb_ns),
                t_pc_ns: Some(self.timing.t_pc_ns),
                t_addp_ns: Some(self.timing.t_addp_ns),
                salp_overlap: Some(self.timing.salp_overlap),
                channel_bandwidth_bytes_per_s: Some(self.timing.channel_bandwidth_bytes_per_s),
            },
        };
        toml::to_string(&file).expect("config serializes")
    }

    /// Short stable digest of the rendered configuration.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.render().as_bytes());
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Parses and validates a configuration document.
pub fn load_config(source: &str) -> Result<SystemConfig, ConfigError> {
    let file: ConfigFile = toml::from_str(source).map_err(|e| {
        let msg = e.message().to_string();
        match msg.strip_prefix("missing field `") {
            Some(rest) => ConfigError::MissingKey(rest.trim_end_matches('`').to_string()),
            None => ConfigError::Parse(e.to_string()),
        }
    })?;
    let defaults = TimingParams::defaults_for(&file.dram);
    let t = file.timing;
    let timing = TimingParams {
        t_rcd_ns: t.t_rcd_ns.unwrap_or(defaults.t_rcd_ns),
        t_rp_ns: t.t_rp_ns.unwrap_or(defaults.t_rp_ns),
        t_pe_ns: t.t_pe_ns.unwrap_or(defaults.t_pe_ns),
        t_lb_ns: t.t_lb_ns.unwrap_or(defaults.t_lb_ns),
        t_pc_ns: t.t_pc_ns.unwrap_or(defaults.t_pc_ns),
        t_addp_ns: t.t_addp_ns.unwrap_or(defaults.t_addp_ns),
        salp_overlap: t.salp_overlap.unwrap_or(defaults.salp_overlap),
        channel_bandwidth_bytes_per_s: t
            .channel_bandwidth_bytes_per_s
            .unwrap_or(defaults.channel_bandwidth_bytes_per_s),
    };
    SystemConfig::new(file.dram, file.peripherals, timing)
}

pub const PRESET_NAMES: [&str; 5] = [
    "racam_full",
    "racam_eighth",
    "racam_sixteenth",
    "racam_128th",
    "desk_small",
];

const RACAM_FULL: &str = include_str!("../presets/racam_full.toml");
const DESK_SMALL: &str = include_str!("../presets/desk_small.toml");

/// Built-in configurations. The scaled variants keep the full system's
/// per-bank organization and remove channels and ranks.
pub fn preset(name: &str) -> Result<SystemConfig, ConfigError> {
    let full = || load_config(RACAM_FULL);
    match name {
        "racam_full" => full(),
        "racam_eighth" => full()?.with_channels_ranks(4, 8),
        "racam_sixteenth" => full()?.with_channels_ranks(2, 8),
        "racam_128th" => full()?.with_channels_ranks(1, 2),
        "desk_small" => load_config(DESK_SMALL),
        other => Err(ConfigError::UnknownPreset(other.to_string())),
    }
}
