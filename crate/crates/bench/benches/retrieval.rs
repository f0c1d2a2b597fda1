use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use layoutcot::retrieval::{topk_retrieve, CostWeights, RetrievalIndex, RetrieveOptions};
use layoutcot::{BBox, Canvas, Element, Layout};

const LABELS: [&str; 5] = ["text", "title", "list", "table", "figure"];

fn random_layout(id: String, rng: &mut ChaCha8Rng) -> Layout {
    let n = rng.random_range(2..=12);
    let elements = (0..n)
        .map(|_| {
            let (x, y) = (rng.random_range(0.0..0.8), rng.random_range(0.0..0.8));
            let (w, h) = (rng.random_range(0.02..1.0 - x), rng.random_range(0.02..1.0 - y));
            Element::new(LABELS[rng.random_range(0..LABELS.len())], BBox::new(x, y, w, h))
        })
        .collect();
    Layout::new(id, Canvas::unit(), elements)
}

fn topk(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let vocab: Vec<String> = LABELS.map(String::from).to_vec();
    let mut group = c.benchmark_group("topk");
    for size in [1_000, 10_000] {
        let mut index = RetrievalIndex::new(vocab.clone(), CostWeights::default());
        for i in 0..size {
            index.insert(&random_layout(format!("e{i}"), &mut rng));
        }
        let query = random_layout("q".into(), &mut rng);
        for k in [1, 10] {
            group.bench_with_input(BenchmarkId::new(format!("k{k}"), size), &index, |b, index| {
                b.iter(|| topk_retrieve(black_box(&query), index, &RetrieveOptions::top(k)).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, topk);
criterion_main!(benches);
