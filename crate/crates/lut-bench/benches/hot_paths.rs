//! Criterion benches over the four paths that dominate wall time: dense
//! matmul (forward and reverse), the CTC lattice, beam decoding, and one
//! full training step.

use criterion::{criterion_group, criterion_main, Criterion};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use std::hint::black_box;

use lut_bench::{bench_corpus, bench_model, bench_teacher};
use lut_core::ctc::ctc_loss_value;
use lut_core::decode::{beam_search, BeamParams};
use lut_core::model::{LossItem, StepKind};
use lut_core::nn::FwdMode;
use lut_core::optim::{Adam, AdamParams};
use lut_core::{Graph, Tensor, ValueBind};

fn random_tensor(rng: &mut StdRng, shape: Vec<usize>) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::new(shape, data).unwrap()
}

fn bench_matmul(c: &mut Criterion) {
    let mut rng = StdRng::seed_from_u64(1);
    let a = random_tensor(&mut rng, vec![64, 64]);
    let b = random_tensor(&mut rng, vec![64, 64]);

    c.bench_function("matmul_64x64_forward", |bench| {
        bench.iter(|| {
            let mut g = Graph::new();
            let an = g.constant(black_box(&a));
            let bn = g.constant(black_box(&b));
            let y = g.matmul(an, bn).unwrap();
            black_box(g.data(y)[0])
        })
    });

    c.bench_function("matmul_64x64_forward_backward", |bench| {
        bench.iter(|| {
            let mut g = Graph::new();
            let an = g.leaf(black_box(&a));
            let bn = g.leaf(black_box(&b));
            let y = g.matmul(an, bn).unwrap();
            let loss = g.sum_all(y);
            g.backward(loss).unwrap();
            black_box(g.grad(an).unwrap()[0])
        })
    });
}

fn bench_ctc(c: &mut Criterion) {
    // 60 frames over a 13-wide emission table (blank + 12 labels), all rows
    // uniform so they are already normalized log-probabilities.
    let frames = 60;
    let width = 13;
    let lp = Tensor::new(
        vec![frames, width],
        vec![-(width as f64).ln(); frames * width],
    )
    .unwrap();
    let z: Vec<usize> = vec![3, 5, 5, 2, 9, 1, 7, 4];

    c.bench_function("ctc_lattice_60x13_label8", |bench| {
        bench.iter(|| black_box(ctc_loss_value(black_box(&lp), black_box(&z)).unwrap()))
    });
}

fn bench_beam(c: &mut Criterion) {
    let corpus = bench_corpus();
    let model = bench_model(&corpus.src_vocab, &corpus.tgt_vocab);
    let utt = &corpus.triples[0];
    let enc = model.encode_utterance(&utt.features).unwrap();
    let params = BeamParams { beam_size: 8, max_len: 24, length_penalty: 0.6 };

    c.bench_function("beam8_decode", |bench| {
        bench.iter(|| black_box(beam_search(&model, black_box(&enc.h_se), &params).unwrap()))
    });
}

fn bench_training_step(c: &mut Criterion) {
    let corpus = bench_corpus();
    let mut model = bench_model(&corpus.src_vocab, &corpus.tgt_vocab);
    let teacher = bench_teacher(&corpus.src_vocab);
    let embeds: Vec<_> = corpus.triples[..4]
        .iter()
        .map(|u| teacher.embed_sentence(&u.z).unwrap())
        .collect();
    let mut adam = Adam::new(&model.store, AdamParams::default());

    c.bench_function("train_step_batch4", |bench| {
        bench.iter(|| {
            let items: Vec<LossItem> = corpus.triples[..4]
                .iter()
                .zip(&embeds)
                .map(|(u, e)| LossItem {
                    features: &u.features,
                    z: &u.z,
                    y: u.y.as_deref(),
                    teacher: e,
                })
                .collect();
            let mut g = Graph::new();
            let mut pb = ValueBind::new();
            let mut mode = FwdMode::eval();
            let (loss, parts) =
                model.total_loss(&mut g, &mut pb, &items, StepKind::Full, &mut mode).unwrap();
            g.backward(loss).unwrap();
            let grads = pb.grads(&g, &model.store);
            adam.step(&mut model.store, &grads, 1e-4).unwrap();
            black_box(parts.total)
        })
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(10);
    targets = bench_matmul, bench_ctc, bench_beam, bench_training_step
}
criterion_main!(benches);
