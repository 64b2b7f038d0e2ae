//! Exhaustive mapping search.
//!
//! Every candidate of a shape is evaluated independently, so evaluation
//! runs on the rayon pool when the `parallel` feature is on. The winner is
//! the smallest `(total latency, mapping literal)` key, which makes the
//! result independent of evaluation order.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

#[cfg(feature = "parallel")]
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::config::{Ablation, SystemConfig};
use crate::llm::{KernelStream, Role, Scenario, Stage};
use crate::mapping::{enumerate_mappings, GemmShape, Mapping};
use crate::perf::{kernel_latency, kernel_totals, LatencyReport, PerfError};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum SearchError {
    #[error("no mapping candidates for {0}")]
    Empty(GemmShape),
    #[error("empty kernel stream")]
    EmptyStream,
    #[error(transparent)]
    Perf(#[from] PerfError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Parallelism {
    Sequential,
    /// Rayon pool; the same as sequential without the `parallel` feature.
    #[default]
    Parallel,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CandidateRow {
    pub mapping: String,
    pub pim_ns: f64,
    pub io_ns: f64,
    pub total_ns: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SearchResult {
    pub shape: GemmShape,
    pub best_mapping: Mapping,
    pub best: LatencyReport,
    pub candidates: usize,
    pub worst_ns: f64,
    /// Worst over best total latency.
    pub ratio: f64,
    #[serde(skip)]
    pub elapsed: Duration,
    /// Every candidate in enumeration order.
    #[serde(skip)]
    pub log: Vec<CandidateRow>,
}

impl SearchResult {
    pub const CSV_COLUMNS: [&'static str; 4] = ["mapping", "pim_ns", "io_ns", "total_ns"];

    /// One row per candidate, latencies to 0.001 ns.
    pub fn candidates_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(Self::CSV_COLUMNS).expect("in-memory write");
        for r in &self.log {
            w.write_record([
                r.mapping.clone(),
                format!("{:.3}", r.pim_ns),
                format!("{:.3}", r.io_ns),
                format!("{:.3}", r.total_ns),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii csv")
    }
}

fn evaluate(
    shape: &GemmShape,
    mappings: &[Mapping],
    cfg: &SystemConfig,
    par: Parallelism,
) -> Result<Vec<CandidateRow>, PerfError> {
    let one = |m: &Mapping| {
        kernel_totals(shape, m, cfg).map(|(pim, io)| CandidateRow {
            mapping: m.literal(),
            pim_ns: pim,
            io_ns: io,
            total_ns: pim + io,
        })
    };
    match par {
        #[cfg(feature = "parallel")]
        Parallelism::Parallel => mappings.par_iter().map(one).collect(),
        _ => mappings.iter().map(one).collect(),
    }
}

/// Evaluates every candidate mapping of `shape` and keeps the fastest.
pub fn search_mapping(
    shape: &GemmShape,
    cfg: &SystemConfig,
    par: Parallelism,
) -> Result<SearchResult, SearchError> {
    let start = Instant::now();
    let mappings = enumerate_mappings(shape);
    let log = evaluate(shape, &mappings, cfg, par)?;
    let best = (0..log.len())
        .min_by(|&a, &b| {
            log[a]
                .total_ns
                .total_cmp(&log[b].total_ns)
                .then_with(|| log[a].mapping.cmp(&log[b].mapping))
        })
        .ok_or(SearchError::Empty(*shape))?;
    let worst_ns = log.iter().map(|r| r.total_ns).fold(f64::MIN, f64::max);
    let report = kernel_latency(shape, &mappings[best], cfg)?;
    Ok(SearchResult {
        shape: *shape,
        best_mapping: mappings[best],
        ratio: worst_ns / report.total_ns,
        best: report,
        candidates: log.len(),
        worst_ns,
        elapsed: start.elapsed(),
        log,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
struct CacheKey {
    shape: GemmShape,
    config: String,
    ablation: Ablation,
}

/// Search results shared across kernels, keyed by shape and configuration.
#[derive(Debug, Default)]
pub struct SearchCache {
    entries: Mutex<HashMap<CacheKey, Arc<SearchResult>>>,
}

impl SearchCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().expect("cache lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn key(shape: &GemmShape, cfg: &SystemConfig) -> CacheKey {
        CacheKey {
            shape: *shape,
            config: cfg.hash(),
            ablation: cfg.ablation(),
        }
    }

    pub fn get(&self, shape: &GemmShape, cfg: &SystemConfig) -> Option<Arc<SearchResult>> {
        self.entries
            .lock()
            .expect("cache lock")
            .get(&Self::key(shape, cfg))
            .cloned()
    }

    /// Cached result for `shape`, searching on a miss. The candidate log
    /// is not kept.
    pub fn search(
        &self,
        shape: &GemmShape,
        cfg: &SystemConfig,
        par: Parallelism,
    ) -> Result<Arc<SearchResult>, SearchError> {
        if let Some(hit) = self.get(shape, cfg) {
            return Ok(hit);
        }
        let mut r = search_mapping(shape, cfg, par)?;
        r.log = Vec::new();
        let r = Arc::new(r);
        // a concurrent search of the same key produced the same value
        self.entries
            .lock()
            .expect("cache lock")
            .entry(Self::key(shape, cfg))
            .or_insert_with(|| r.clone());
        Ok(r)
    }
}

/// The best mapping of one kernel shape within a workload.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KernelResult {
    pub stage: Stage,
    pub role: Role,
    pub shape: GemmShape,
    /// Executions over the whole workload.
    pub count: u64,
    pub mapping: String,
    pub pim_ns: f64,
    pub io_ns: f64,
    pub total_ns: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorkloadReport {
    pub kernels: Vec<KernelResult>,
    pub unique_shapes: usize,
    pub pim_ns: f64,
    pub io_ns: f64,
    pub total_ns: f64,
    pub prefill_ns: f64,
    pub decode_ns: f64,
    pub macs: u64,
    #[serde(skip)]
    pub elapsed: Duration,
}

impl WorkloadReport {
    pub const CSV_COLUMNS: [&'static str; 10] = [
        "stage", "role", "m", "k", "n", "count", "mapping", "pim_ns", "io_ns", "total_ns",
    ];

    pub fn kernels_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(Self::CSV_COLUMNS).expect("in-memory write");
        for k in &self.kernels {
            w.write_record([
                k.stage.to_string(),
                k.role.name().to_string(),
                k.shape.m.to_string(),
                k.shape.k.to_string(),
                k.shape.n.to_string(),
                k.count.to_string(),
                k.mapping.clone(),
                format!("{:.3}", k.pim_ns),
                format!("{:.3}", k.io_ns),
                format!("{:.3}", k.total_ns),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("ascii csv")
    }
}

type Tally = BTreeMap<(Stage, Role, GemmShape), u64>;

fn tally(stream: &KernelStream, into: &mut Tally) {
    for k in &stream.kernels {
        *into.entry((k.stage, k.role, k.shape)).or_insert(0) += k.count;
    }
}

fn search_tally(
    tally: Tally,
    cfg: &SystemConfig,
    par: Parallelism,
    cache: &SearchCache,
) -> Result<WorkloadReport, SearchError> {
    let start = Instant::now();
    if tally.is_empty() {
        return Err(SearchError::EmptyStream);
    }
    let mut shapes: Vec<GemmShape> = tally.keys().map(|k| k.2).collect();
    shapes.sort();
    shapes.dedup();
    let results: Vec<Result<Arc<SearchResult>, SearchError>> = match par {
        #[cfg(feature = "parallel")]
        Parallelism::Parallel => shapes.par_iter().map(|s| cache.search(s, cfg, par)).collect(),
        _ => shapes.iter().map(|s| cache.search(s, cfg, par)).collect(),
    };
    let mut best = HashMap::new();
    for (s, r) in shapes.iter().zip(results) {
        best.insert(*s, r?);
    }

    let mut report = WorkloadReport {
        kernels: Vec::with_capacity(tally.len()),
        unique_shapes: shapes.len(),
        pim_ns: 0.0,
        io_ns: 0.0,
        total_ns: 0.0,
        prefill_ns: 0.0,
        decode_ns: 0.0,
        macs: 0,
        elapsed: Duration::ZERO,
    };
    for ((stage, role, shape), count) in tally {
        let b = &best[&shape].best;
        let n = count as f64;
        let k = KernelResult {
            stage,
            role,
            shape,
            count,
            mapping: b.mapping.clone(),
            pim_ns: b.pim_latency_ns * n,
            io_ns: b.io_latency_ns * n,
            total_ns: b.total_ns * n,
        };
        report.pim_ns += k.pim_ns;
        report.io_ns += k.io_ns;
        report.total_ns += k.total_ns;
        match stage {
            Stage::Prefill => report.prefill_ns += k.total_ns,
            Stage::Decode => report.decode_ns += k.total_ns,
        }
        report.macs += shape.macs() * count;
        report.kernels.push(k);
    }
    report.elapsed = start.elapsed();
    Ok(report)
}

/// Searches each distinct shape of `stream` once and sums the kernels'
/// best latencies.
pub fn search_workload(
    stream: &KernelStream,
    cfg: &SystemConfig,
    par: Parallelism,
    cache: &SearchCache,
) -> Result<WorkloadReport, SearchError> {
    let mut t = Tally::new();
    tally(stream, &mut t);
    search_tally(t, cfg, par, cache)
}

/// End-to-end result of an inference scenario.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioReport {
    pub model: String,
    pub prompt_tokens: u64,
    pub output_tokens: u64,
    pub workload: WorkloadReport,
    /// Tokens (prompt and generated) per second.
    pub throughput: f64,
}

/// Prefill plus every decode step of `scenario`.
pub fn search_scenario(
    scenario: &Scenario,
    cfg: &SystemConfig,
    par: Parallelism,
    cache: &SearchCache,
) -> Result<ScenarioReport, SearchError> {
    let mut t = Tally::new();
    tally(&scenario.prefill(), &mut t);
    for i in 0..scenario.output_tokens {
        tally(&scenario.decode_step(i), &mut t);
    }
    let workload = search_tally(t, cfg, par, cache)?;
    Ok(ScenarioReport {
        model: scenario.model.name.clone(),
        prompt_tokens: scenario.prompt_tokens,
        output_tokens: scenario.output_tokens,
        throughput: scenario.throughput(workload.total_ns),
        workload,
    })
}
