//! Experiment orchestration and the artifacts it produces.
//!
//! [`run`] builds every artifact in memory; [`write_artifacts`] is the only
//! place files are written. CSV artifacts start with a `#` line naming the
//! tool version and configuration hash, and contain nothing else that varies
//! between runs.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use crate::area::{area_report, AreaParams, AreaReport};
use crate::config::{Ablation, ConfigError, SystemConfig};
use crate::llm::{parse_model, scenario_preset, AttentionMode, LlmError, Scenario, SCENARIOS};
use crate::mapping::{GemmShape, Mapping};
use crate::perf::{instr_cost, LatencyReport, OpKind, PerfError};
use crate::search::{
    search_mapping, search_scenario, Parallelism, ScenarioReport, SearchCache, SearchError, SearchResult,
};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("invalid experiment: {0}")]
    Spec(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Perf(#[from] PerfError),
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error("writing artifacts: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Gemm,
    Gemv,
    Llm,
    Sweep,
}

impl FromStr for Mode {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, ReportError> {
        match s {
            "gemm" => Ok(Mode::Gemm),
            "gemv" => Ok(Mode::Gemv),
            "llm" => Ok(Mode::Llm),
            "sweep" => Ok(Mode::Sweep),
            _ => Err(ReportError::Spec(format!("unknown mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    /// Best latency of one shape at several precisions.
    Precision,
    /// Best latency as PEs per bank change.
    PeCount,
    /// Square GEMMs of growing size.
    Size,
    /// Every candidate mapping of one shape.
    Mapping,
    /// Single multiply latency by precision, with and without reuse.
    Mul,
    /// Peripheral units removed one group at a time.
    Ablation,
}

impl SweepAxis {
    pub const ALL: [SweepAxis; 6] = [
        SweepAxis::Precision,
        SweepAxis::PeCount,
        SweepAxis::Size,
        SweepAxis::Mapping,
        SweepAxis::Mul,
        SweepAxis::Ablation,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::Precision => "precision",
            SweepAxis::PeCount => "pe_count",
            SweepAxis::Size => "size",
            SweepAxis::Mapping => "mapping",
            SweepAxis::Mul => "mul",
            SweepAxis::Ablation => "ablation",
        }
    }
}

impl FromStr for SweepAxis {
    type Err = ReportError;

    fn from_str(s: &str) -> Result<Self, ReportError> {
        SweepAxis::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| ReportError::Spec(format!("unknown sweep `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentSpec {
    pub mode: Mode,
    /// `[m, k, n]`; the precision comes from `precision`.
    pub shape: Option<[u64; 3]>,
    pub model: Option<String>,
    pub scenario: Option<String>,
    pub precision: u32,
    pub precisions: Vec<u32>,
    pub ablation: Ablation,
    pub sweep: Option<SweepAxis>,
    pub attention: AttentionMode,
    pub log_trace: bool,
    pub parallelism: Parallelism,
}

impl ExperimentSpec {
    pub fn new(mode: Mode) -> Self {
        ExperimentSpec {
            mode,
            shape: None,
            model: None,
            scenario: None,
            precision: 8,
            precisions: vec![8, 4, 2],
            ablation: Ablation::NONE,
            sweep: None,
            attention: AttentionMode::PerHead,
            log_trace: false,
            parallelism: Parallelism::Parallel,
        }
    }

    fn gemm(&self, precision: u32) -> Result<GemmShape, ReportError> {
        let [m, k, n] = self
            .shape
            .ok_or_else(|| ReportError::Spec("--shape is required".into()))?;
        Ok(GemmShape::new(m, k, n, precision))
    }

    fn scenario(&self) -> Result<Scenario, ReportError> {
        let name = self
            .model
            .as_deref()
            .ok_or_else(|| ReportError::Spec("--model is required".into()))?;
        let model = parse_model(name)?.with_precision(self.precision);
        let sc = scenario_preset(self.scenario.as_deref().unwrap_or(SCENARIOS[0].name))?;
        Ok(Scenario::new(
            &model,
            sc.prompt_tokens,
            sc.output_tokens,
            self.attention,
        ))
    }

    /// Checks that the parameters the mode needs are present.
    pub fn validate(&self) -> Result<(), ReportError> {
        if self.precision == 0 || self.precisions.contains(&0) {
            return Err(ReportError::Spec("precision must be positive".into()));
        }
        if self.shape.is_some_and(|s| s.contains(&0)) {
            return Err(ReportError::Spec("shape dimensions must be positive".into()));
        }
        match self.mode {
            Mode::Gemm => {
                self.gemm(self.precision)?;
            }
            Mode::Gemv => {
                if self.gemm(self.precision)?.m != 1 {
                    return Err(ReportError::Spec("gemv mode needs a shape with M = 1".into()));
                }
            }
            Mode::Llm => {
                self.scenario()?;
            }
            Mode::Sweep => match self.sweep {
                None => return Err(ReportError::Spec("--sweep is required in sweep mode".into())),
                Some(SweepAxis::Precision | SweepAxis::PeCount | SweepAxis::Mapping) => {
                    self.gemm(self.precision)?;
                }
                Some(SweepAxis::Ablation) if self.shape.is_none() => {
                    self.scenario()?;
                }
                Some(_) => {}
            },
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Artifact {
    pub name: String,
    pub contents: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    /// Fixed-width text for the terminal, also saved as `summary.txt`.
    pub summary: String,
    pub artifacts: Vec<Artifact>,
}

pub fn write_artifacts(out: &RunOutput, dir: &Path) -> io::Result<()> {
    fs::create_dir_all(dir)?;
    for a in &out.artifacts {
        fs::write(dir.join(&a.name), &a.contents)?;
    }
    Ok(())
}

fn stamp(cfg: &SystemConfig) -> String {
    format!("# racam {TOOL_VERSION} config {}\n", cfg.hash())
}

struct Csv(csv::Writer<Vec<u8>>);

impl Csv {
    fn new(columns: &[&str]) -> Self {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(columns).expect("in-memory write");
        Csv(w)
    }

    fn row<I: IntoIterator<Item = String>>(&mut self, fields: I) {
        self.0.write_record(fields).expect("in-memory write");
    }

    fn finish(self, cfg: &SystemConfig, name: &str) -> Artifact {
        let body = String::from_utf8(self.0.into_inner().expect("in-memory flush")).expect("ascii csv");
        Artifact {
            name: name.to_string(),
            contents: stamp(cfg) + &body,
        }
    }
}

fn ns(v: f64) -> String {
    format!("{v:.3}")
}

#[derive(Serialize)]
struct Header<'a> {
    tool: &'static str,
    version: &'static str,
    config_hash: String,
    mode: Mode,
    ablation: String,
    spec: &'a ExperimentSpec,
}

fn header<'a>(spec: &'a ExperimentSpec, cfg: &SystemConfig) -> Header<'a> {
    Header {
        tool: "racam",
        version: TOOL_VERSION,
        config_hash: cfg.hash(),
        mode: spec.mode,
        ablation: cfg.ablation().label(),
        spec,
    }
}

fn json_artifact(value: &impl Serialize) -> Artifact {
    Artifact {
        name: "report.json".into(),
        contents: serde_json::to_string_pretty(value).expect("report serializes") + "\n",
    }
}

fn summary_head(out: &mut String, spec: &ExperimentSpec, cfg: &SystemConfig) {
    let _ = writeln!(out, "racam {TOOL_VERSION}  config {}", cfg.hash());
    let _ = writeln!(
        out,
        "{:<22}{:?}  ablation {}",
        "mode",
        spec.mode,
        cfg.ablation().label()
    );
}

fn summary_area(out: &mut String, a: &AreaReport) {
    let _ = writeln!(out, "{:<22}{:>14.3} mm2", "dram area", a.dram_mm2);
    let _ = writeln!(out, "{:<22}{:>14.3} mm2", "added area", a.peripheral_mm2);
    let _ = writeln!(
        out,
        "{:<22}{:>13.2} %",
        "area overhead",
        a.overhead_fraction * 100.0
    );
}

fn summary_kernel(out: &mut String, r: &LatencyReport) {
    let _ = writeln!(out, "{:<22}{}", "shape", r.shape);
    let _ = writeln!(out, "{:<22}{}", "best mapping", r.mapping);
    let _ = writeln!(out, "{:<22}{:>14.3} ns", "pim latency", r.pim_latency_ns);
    let _ = writeln!(out, "{:<22}{:>14.3} ns", "io latency", r.io_latency_ns);
    let _ = writeln!(out, "{:<22}{:>14.3} ns", "total latency", r.total_ns);
    let _ = writeln!(out, "{:<22}{:>14.4}", "pe utilization", r.pe_utilization);
    let _ = writeln!(out, "{:<22}{:>14}", "temporal iterations", r.temporal_iterations);
}

fn trace_artifact(r: &LatencyReport, cfg: &SystemConfig) -> Artifact {
    let mut csv = Csv::new(&["kind", "name", "count"]);
    for (name, count) in &r.histogram {
        csv.row(["instruction".into(), name.clone(), count.to_string()]);
    }
    for (name, count) in r.events.named() {
        csv.row(["event".into(), name.into(), count.to_string()]);
    }
    csv.finish(cfg, "trace.csv")
}

fn run_kernel(
    spec: &ExperimentSpec,
    cfg: &SystemConfig,
    area: &AreaParams,
) -> Result<RunOutput, ReportError> {
    let shape = spec.gemm(spec.precision)?;
    let r = search_mapping(&shape, cfg, spec.parallelism)?;
    let a = area_report(cfg, area);

    #[derive(Serialize)]
    struct Report<'a> {
        #[serde(flatten)]
        header: Header<'a>,
        search: &'a SearchResult,
        area: &'a AreaReport,
    }
    let mut artifacts = vec![json_artifact(&Report {
        header: header(spec, cfg),
        search: &r,
        area: &a,
    })];
    let mut csv = Csv::new(&SearchResult::CSV_COLUMNS);
    for c in &r.log {
        csv.row([c.mapping.clone(), ns(c.pim_ns), ns(c.io_ns), ns(c.total_ns)]);
    }
    artifacts.push(csv.finish(cfg, "candidates.csv"));
    if spec.log_trace {
        artifacts.push(trace_artifact(&r.best, cfg));
    }

    let mut s = String::new();
    summary_head(&mut s, spec, cfg);
    summary_kernel(&mut s, &r.best);
    let _ = writeln!(s, "{:<22}{:>14}", "candidates", r.candidates);
    let _ = writeln!(s, "{:<22}{:>14.2}", "worst / best", r.ratio);
    let _ = writeln!(s, "{:<22}{:>14.3} s", "search time", r.elapsed.as_secs_f64());
    summary_area(&mut s, &a);
    Ok(finish(s, artifacts))
}

fn run_llm(spec: &ExperimentSpec, cfg: &SystemConfig, area: &AreaParams) -> Result<RunOutput, ReportError> {
    let sc = spec.scenario()?;
    let r = search_scenario(&sc, cfg, spec.parallelism, &SearchCache::new())?;
    let a = area_report(cfg, area);

    #[derive(Serialize)]
    struct Report<'a> {
        #[serde(flatten)]
        header: Header<'a>,
        scenario: &'a ScenarioReport,
        area: &'a AreaReport,
    }
    let mut artifacts = vec![json_artifact(&Report {
        header: header(spec, cfg),
        scenario: &r,
        area: &a,
    })];
    let w = &r.workload;
    artifacts.push(Artifact {
        name: "kernels.csv".into(),
        contents: stamp(cfg) + &w.kernels_csv(),
    });
    // prefill and the first decode step; later steps differ only in context
    let mut stream = sc.prefill();
    stream.extend(sc.decode_step(0));
    artifacts.push(Artifact {
        name: "stream.csv".into(),
        contents: stamp(cfg) + &stream.to_csv(),
    });

    let mut s = String::new();
    summary_head(&mut s, spec, cfg);
    let _ = writeln!(s, "{:<22}{}", "model", r.model);
    let _ = writeln!(
        s,
        "{:<22}{} + {}",
        "prompt + output", r.prompt_tokens, r.output_tokens
    );
    let _ = writeln!(s, "{:<22}{:>14}", "unique shapes", w.unique_shapes);
    let _ = writeln!(s, "{:<22}{:>14.6} s", "prefill", w.prefill_ns * 1e-9);
    let _ = writeln!(s, "{:<22}{:>14.6} s", "decode", w.decode_ns * 1e-9);
    let _ = writeln!(s, "{:<22}{:>14.6} s", "total", w.total_ns * 1e-9);
    let _ = writeln!(s, "{:<22}{:>14.2} %", "io share", 100.0 * w.io_ns / w.total_ns);
    let _ = writeln!(s, "{:<22}{:>14.3} tok/s", "throughput", r.throughput);
    let _ = writeln!(s, "{:<22}{:>14.3} s", "search time", w.elapsed.as_secs_f64());
    summary_area(&mut s, &a);
    Ok(finish(s, artifacts))
}

fn run_sweep(spec: &ExperimentSpec, cfg: &SystemConfig, area: &AreaParams) -> Result<RunOutput, ReportError> {
    let axis = spec.sweep.expect("validated");
    let par = spec.parallelism;
    let csv = match axis {
        SweepAxis::Precision => {
            let mut csv = Csv::new(&[
                "precision",
                "mapping",
                "pim_ns",
                "io_ns",
                "total_ns",
                "latency_ratio",
            ]);
            let mut first = None;
            for &p in &spec.precisions {
                let r = search_mapping(&spec.gemm(p)?, cfg, par)?.best;
                let base = *first.get_or_insert(r.total_ns);
                csv.row([
                    p.to_string(),
                    r.mapping.clone(),
                    ns(r.pim_latency_ns),
                    ns(r.io_latency_ns),
                    ns(r.total_ns),
                    format!("{:.4}", base / r.total_ns),
                ]);
            }
            csv
        }
        SweepAxis::PeCount => {
            let mut csv = Csv::new(&[
                "pes_per_bank",
                "mapping",
                "pim_ns",
                "io_ns",
                "total_ns",
                "pe_utilization",
                "area_overhead",
            ]);
            let pes = cfg.periph().pes_per_bank;
            for p in [pes / 4, pes / 2, pes, pes * 2] {
                let Ok(c) = cfg.with_pes_per_bank(p) else {
                    continue;
                };
                let r = search_mapping(&spec.gemm(spec.precision)?, &c, par)?.best;
                csv.row([
                    p.to_string(),
                    r.mapping.clone(),
                    ns(r.pim_latency_ns),
                    ns(r.io_latency_ns),
                    ns(r.total_ns),
                    format!("{:.6}", r.pe_utilization),
                    format!("{:.6}", area_report(&c, area).overhead_fraction),
                ]);
            }
            csv
        }
        SweepAxis::Size => {
            let mut csv = Csv::new(&[
                "m",
                "k",
                "n",
                "mapping",
                "pim_ns",
                "io_ns",
                "total_ns",
                "pe_utilization",
                "compute_fraction",
            ]);
            for s in [1024u64, 2048, 4096, 8192, 16384, 32768] {
                let r = search_mapping(&GemmShape::new(s, s, s, spec.precision), cfg, par)?.best;
                csv.row([
                    s.to_string(),
                    s.to_string(),
                    s.to_string(),
                    r.mapping.clone(),
                    ns(r.pim_latency_ns),
                    ns(r.io_latency_ns),
                    ns(r.total_ns),
                    format!("{:.6}", r.pe_utilization),
                    format!("{:.6}", r.compute_fraction()),
                ]);
            }
            csv
        }
        SweepAxis::Mapping => {
            let r = search_mapping(&spec.gemm(spec.precision)?, cfg, par)?;
            let mut csv = Csv::new(&[
                "mapping",
                "k_on_columns",
                "pim_ns",
                "io_ns",
                "total_ns",
                "normalized",
            ]);
            for c in &r.log {
                let m: Mapping = c.mapping.parse().expect("literals round-trip");
                let k_cols = m.bmap.column_reduction();
                csv.row([
                    c.mapping.clone(),
                    k_cols.to_string(),
                    ns(c.pim_ns),
                    ns(c.io_ns),
                    ns(c.total_ns),
                    format!("{:.4}", c.total_ns / r.best.total_ns),
                ]);
            }
            csv
        }
        SweepAxis::Mul => {
            let mut csv = Csv::new(&[
                "precision",
                "reuse_ns",
                "baseline_ns",
                "reuse_array_accesses",
                "baseline_array_accesses",
                "speedup",
            ]);
            for n in 1..=cfg.max_precision() {
                let r = instr_cost(OpKind::MulReuse, n, cfg)?;
                let b = instr_cost(OpKind::MulBaseline, n, cfg)?;
                csv.row([
                    n.to_string(),
                    ns(r.latency_ns),
                    ns(b.latency_ns),
                    r.array_row_accesses().to_string(),
                    b.array_row_accesses().to_string(),
                    format!("{:.4}", b.latency_ns / r.latency_ns),
                ]);
            }
            csv
        }
        SweepAxis::Ablation => {
            let mut csv = Csv::new(&["removed", "pim_ns", "io_ns", "total_ns", "normalized"]);
            let steps = ["", "pr", "pr,bu", "pr,bu,lb", "bu", "lb"];
            let mut full = None;
            for flags in steps {
                let c = cfg.ablate(Ablation::parse(flags)?);
                let (pim, io, total) = match spec.shape {
                    Some(_) => {
                        let r = search_mapping(&spec.gemm(spec.precision)?, &c, par)?.best;
                        (r.pim_latency_ns, r.io_latency_ns, r.total_ns)
                    }
                    None => {
                        let w = search_scenario(&spec.scenario()?, &c, par, &SearchCache::new())?.workload;
                        (w.pim_ns, w.io_ns, w.total_ns)
                    }
                };
                let base = *full.get_or_insert(total);
                csv.row([
                    Ablation::parse(flags)?.label(),
                    ns(pim),
                    ns(io),
                    ns(total),
                    format!("{:.4}", total / base),
                ]);
            }
            csv
        }
    };
    let artifact = csv.finish(cfg, &format!("sweep_{}.csv", axis.name()));
    let mut s = String::new();
    summary_head(&mut s, spec, cfg);
    let _ = writeln!(s, "{:<22}{}", "sweep", axis.name());
    let rows = artifact.contents.lines().count().saturating_sub(2);
    let _ = writeln!(s, "{:<22}{:>14}", "rows", rows);
    let _ = writeln!(s, "{:<22}{}", "written to", artifact.name);
    Ok(finish(s, vec![artifact]))
}

fn finish(summary: String, mut artifacts: Vec<Artifact>) -> RunOutput {
    artifacts.push(Artifact {
        name: "summary.txt".into(),
        contents: summary.clone(),
    });
    RunOutput { summary, artifacts }
}

/// Runs `spec` on `cfg` with the spec's ablation applied.
pub fn run(spec: &ExperimentSpec, cfg: &SystemConfig, area: &AreaParams) -> Result<RunOutput, ReportError> {
    spec.validate()?;
    let cfg = cfg.ablate(spec.ablation);
    match spec.mode {
        Mode::Gemm | Mode::Gemv => run_kernel(spec, &cfg, area),
        Mode::Llm => run_llm(spec, &cfg, area),
        Mode::Sweep => run_sweep(spec, &cfg, area),
    }
}
