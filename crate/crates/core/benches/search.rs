use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use racam_core::config::preset;
use racam_core::llm::{parse_model, AttentionMode, Scenario};
use racam_core::mapping::GemmShape;
use racam_core::search::{search_mapping, search_scenario, Parallelism, SearchCache};

const MODES: [(&str, Parallelism); 2] = [
    ("sequential", Parallelism::Sequential),
    ("parallel", Parallelism::Parallel),
];

fn gemm_search(c: &mut Criterion) {
    let cfg = preset("racam_full").unwrap();
    let mut g = c.benchmark_group("search_gemm");
    for shape in [
        GemmShape::new(1, 2048, 2048, 8),
        GemmShape::new(1024, 12288, 12288, 8),
    ] {
        for (name, par) in MODES {
            g.bench_with_input(BenchmarkId::new(name, shape), &shape, |b, s| {
                b.iter(|| search_mapping(black_box(s), &cfg, par).unwrap())
            });
        }
    }
    g.finish();
}

fn scenario_search(c: &mut Criterion) {
    let cfg = preset("racam_full").unwrap();
    let model = parse_model("llama3-8b").unwrap();
    let sc = Scenario::new(&model, 1024, 64, AttentionMode::PerHead);
    let mut g = c.benchmark_group("search_scenario");
    g.sample_size(10);
    for (name, par) in MODES {
        g.bench_function(name, |b| {
            b.iter(|| search_scenario(black_box(&sc), &cfg, par, &SearchCache::new()).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, gemm_search, scenario_search);
criterion_main!(benches);
