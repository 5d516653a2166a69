use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fishcount_core::metrics::{game, GameImage};
use fishcount_core::toy::{generate_scene, sample_rollout, Geometry, PolicyInit, SceneParams, ToyPolicy};
use fishcount_core::{
    handle_line, hungarian_min_cost, match_points, parse_response, score_text, CostMatrix, RewardConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn points(rng: &mut ChaCha8Rng, n: usize) -> Vec<(f64, f64)> {
    (0..n)
        .map(|_| (rng.gen_range(0.0..512.0), rng.gen_range(0.0..512.0)))
        .collect()
}

fn bench_hungarian(c: &mut Criterion) {
    let mut group = c.benchmark_group("hungarian");
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for n in [8, 32, 128] {
        let cost = (0..n * n).map(|_| rng.gen_range(0.0..100.0)).collect();
        let m = CostMatrix::new(n, n, cost).unwrap();
        group.bench_with_input(BenchmarkId::new("square", n), &m, |b, m| {
            b.iter(|| hungarian_min_cost(black_box(m)))
        });
    }
    for n in [32, 128] {
        let (pred, gt) = (points(&mut rng, n), points(&mut rng, n));
        group.bench_with_input(BenchmarkId::new("match_points", n), &(pred, gt), |b, (p, g)| {
            b.iter(|| match_points(black_box(p), black_box(g), 25.0))
        });
    }
    group.finish();
}

type Sample = (String, Vec<(f64, f64)>, (u32, u32));

fn sampled_responses(n: usize) -> Vec<Sample> {
    let env = SceneParams::default();
    let thr = RewardConfig::default().match_threshold.resolve(env.image_size());
    let policy = ToyPolicy::new(&PolicyInit::default()).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    (0..n as u64)
        .map(|seed| {
            let scene = generate_scene(seed, &env, thr).unwrap();
            let text = sample_rollout(&policy, &scene, thr, &Geometry::default(), &mut rng).text;
            (text, scene.gt_points, scene.image_size)
        })
        .collect()
}

fn bench_scoring(c: &mut Criterion) {
    let cfg = RewardConfig::default();
    let samples = sampled_responses(64);
    c.bench_function("parse_response/64", |b| {
        b.iter(|| {
            samples
                .iter()
                .map(|(t, _, _)| parse_response(black_box(t)).report.entries_total)
                .sum::<usize>()
        })
    });
    c.bench_function("score_text/64", |b| {
        b.iter(|| {
            samples
                .iter()
                .map(|(t, g, s)| score_text(black_box(t), g, *s, &cfg).rewards.total)
                .sum::<f64>()
        })
    });
    let lines: Vec<String> = samples
        .iter()
        .enumerate()
        .map(|(i, (t, g, s))| {
            serde_json::json!({"id": i.to_string(), "response_text": t, "gt_points": g, "image_size": s}).to_string()
        })
        .collect();
    c.bench_function("handle_line/64", |b| {
        b.iter(|| {
            lines
                .iter()
                .map(|l| handle_line(black_box(l), &cfg).len())
                .sum::<usize>()
        })
    });
}

fn bench_game(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let images: Vec<GameImage> = (0..100)
        .map(|_| GameImage {
            pred: points(&mut rng, 40),
            gt: points(&mut rng, 40),
            image_size: (512, 512),
        })
        .collect();
    c.bench_function("game/100x40", |b| b.iter(|| game(black_box(&images)).unwrap().game));
}

criterion_group!(benches, bench_hungarian, bench_scoring, bench_game);
criterion_main!(benches);
