use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use bevclick_core::eval::{ApProtocol, EvalReport, SceneEval};
use bevclick_core::geometry::{iou_3d, Cuboid};
use bevclick_core::par::{self, Execution};
use bevclick_core::synth::{generate_range, SynthConfig};
use bevclick_core::eval::Detection;

fn random_boxes(n: usize, seed: u64) -> Vec<Cuboid> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| Cuboid {
            cx: rng.random_range(-5.0..5.0),
            cy: rng.random_range(-0.5..0.5),
            cz: rng.random_range(-5.0..5.0),
            h: rng.random_range(1.0..2.0),
            w: rng.random_range(1.0..2.5),
            l: rng.random_range(2.0..5.0),
            theta: rng.random_range(-3.1..3.1),
        })
        .collect()
}

fn modes() -> Vec<Execution> {
    let mut v = vec![Execution::Sequential];
    if Execution::Parallel.is_parallel() {
        v.push(Execution::Parallel);
    }
    v
}

fn pairwise_iou(c: &mut Criterion) {
    let boxes = random_boxes(300, 1);
    let mut g = c.benchmark_group("pairwise_iou_3d");
    for exec in modes() {
        g.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &exec, |b, &exec| {
            b.iter(|| {
                par::map(exec, &boxes, |a| boxes.iter().map(|o| iou_3d(a, o)).sum::<f64>())
            })
        });
    }
    g.finish();
}

fn synth_and_eval(c: &mut Criterion) {
    let cfg = SynthConfig::default();
    let mut g = c.benchmark_group("synth_scenes");
    g.sample_size(10);
    for exec in modes() {
        g.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &exec, |b, &exec| {
            b.iter(|| generate_range(&cfg, 0, 16, exec))
        });
    }
    g.finish();

    let scenes: Vec<SceneEval> = generate_range(&cfg, 0, 64, Execution::Sequential)
        .into_iter()
        .map(|s| {
            let id = s.id();
            SceneEval {
                detections: s
                    .boxes
                    .iter()
                    .enumerate()
                    .map(|(k, b)| Detection::new(Cuboid { cx: b.cx + 0.3, ..*b }, 1.0 - 0.01 * k as f64, id.clone()))
                    .collect(),
                groundtruth: s.groundtruth(),
                dont_care: Vec::new(),
            }
        })
        .collect();
    let mut g = c.benchmark_group("eval_report");
    for exec in modes() {
        g.bench_with_input(BenchmarkId::from_parameter(format!("{exec:?}")), &exec, |b, &exec| {
            b.iter(|| EvalReport::compute("Car", &scenes, 0.5, ApProtocol::Eleven, exec))
        });
    }
    g.finish();
}

criterion_group!(benches, pairwise_iou, synth_and_eval);
criterion_main!(benches);
