use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use igp_core::probe::{EosSignal, RolloutCache, StubGenerator, StubRule, StubScript, StubSpec, StubStep, TokenLogprob};
use igp_core::retrieve::{Analyzer, Bm25Params, InvertedIndex};
use igp_core::select::{igp_rerank, IgpConfig};
use igp_core::types::Candidate;
use igp_core::uncertainty::sequence_nu;
use igp_core::{CandidateSet, Passage, ProbeConfig, PromptBundle, Query, Rollout, StepDistribution};

/// Deterministic pseudo-random logprobs.
fn lcg(seed: &mut u64) -> f64 {
    *seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    (*seed >> 11) as f64 / (1u64 << 53) as f64
}

fn rollout(k: usize, len: usize, seed: &mut u64) -> Rollout {
    let steps = (1..=len)
        .map(|i| {
            let entries = (0..k)
                .map(|j| TokenLogprob::new(format!("t{j}"), -12.0 * lcg(seed)))
                .collect();
            StepDistribution::new(i, entries, k, false).unwrap()
        })
        .collect();
    Rollout::from_steps(steps, len, Some(EosSignal::FinishReason)).unwrap()
}

fn nu(c: &mut Criterion) {
    let mut group = c.benchmark_group("sequence_nu");
    let mut seed = 7;
    for k in [16usize, 128] {
        let cfg = ProbeConfig::new(k, 32).unwrap();
        let r = rollout(k, 32, &mut seed);
        group.bench_with_input(BenchmarkId::from_parameter(k), &r, |b, r| {
            b.iter(|| sequence_nu(black_box(r), &cfg).unwrap())
        });
    }
    group.finish();
}

const WORDS: [&str; 16] = [
    "river", "stone", "harbor", "north", "copper", "field", "lantern", "market", "tower", "valley", "winter", "bridge",
    "garden", "island", "forest", "signal",
];

fn bm25(c: &mut Criterion) {
    let mut seed = 11;
    let corpus: Vec<Passage> = (0..5000)
        .map(|i| {
            let text: Vec<&str> = (0..40).map(|_| WORDS[(lcg(&mut seed) * 16.0) as usize]).collect();
            Passage::new(format!("p{i}"), text.join(" ")).unwrap()
        })
        .collect();
    let index = InvertedIndex::build(&corpus, Analyzer::default()).unwrap();
    let params = Bm25Params::default();
    c.bench_function("bm25_search_5k", |b| {
        b.iter(|| index.search(black_box("copper bridge over the winter river"), &params))
    });
}

fn rerank(c: &mut Criterion) {
    let mut seed = 13;
    let mut script = |len: usize| StubScript {
        steps: (0..len)
            .map(|_| StubStep::new((0..16).map(|j| (format!("t{j}"), -10.0 * lcg(&mut seed)))))
            .collect(),
        ..Default::default()
    };
    let rules = (0..20)
        .map(|i| StubRule {
            contains: vec![format!("m{i}x ")],
            script: script(32),
        })
        .collect();
    let generator = StubGenerator::new(StubSpec {
        rules,
        fallback: Some(script(32)),
        ..Default::default()
    });
    let query = Query::new("q", "Which bridge crosses the winter river?", vec![]).unwrap();
    let candidates = CandidateSet::new(
        "q",
        (0..20)
            .map(|i| Candidate {
                passage: Passage::new(format!("d{i}"), format!("m{i}x passage body number {i}")).unwrap(),
                retriever_score: 20.0 - i as f64,
            })
            .collect(),
    )
    .unwrap();
    let prompts = PromptBundle::default();
    let cfg = IgpConfig {
        probe: ProbeConfig::new(16, 32).unwrap(),
        ..IgpConfig::default()
    };
    c.bench_function("igp_rerank_20_candidates", |b| {
        b.iter(|| {
            let cache = RolloutCache::new();
            igp_rerank(&generator, &prompts, &query, &candidates, &cfg, &cache).unwrap()
        })
    });
}

criterion_group!(benches, nu, bm25, rerank);
criterion_main!(benches);
