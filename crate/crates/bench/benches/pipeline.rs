use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use tactile_bench::{encoded, raw_frames, samples};
use tactile_core::model::{Adam, Arch, Model, ModelConfig, TrainConfig};
use tactile_core::session::{Session, SessionConfig};
use tactile_core::wire;

fn classify(c: &mut Criterion) {
    let inputs = samples(2, 1);
    for arch in [Arch::Hybrid, Arch::Lstm] {
        let model: Model<f32> = Model::init(ModelConfig::standard(arch), 0);
        let mut i = 0;
        c.bench_function(&format!("classify/{arch}"), |b| {
            b.iter(|| {
                i = (i + 1) % inputs.len();
                black_box(model.classify(&inputs[i].window).unwrap())
            })
        });
    }
}

fn train_step(c: &mut Criterion) {
    let inputs = samples(1, 2);
    for arch in [Arch::Hybrid, Arch::Lstm] {
        let mut model: Model<f32> = Model::init(ModelConfig::standard(arch), 0);
        let mut adam = Adam::new(model.params().len(), &TrainConfig::default());
        let mut grad = vec![0.0f32; model.params().len()];
        let batch = &inputs[..8];
        c.bench_function(&format!("train_step_8/{arch}"), |b| {
            b.iter(|| {
                grad.iter_mut().for_each(|g| *g = 0.0);
                for s in batch {
                    model
                        .accumulate_grad(s.window.as_slice(), s.label.index(), 1.0 / batch.len() as f32, &mut grad)
                        .unwrap();
                }
                adam.update(model.params_mut(), &grad);
            })
        });
    }
}

fn codec(c: &mut Criterion) {
    let frames = raw_frames(3);
    let bytes = encoded(&frames);
    c.bench_function("wire/encode_200", |b| b.iter(|| black_box(wire::encode_wire(&frames))));
    c.bench_function("wire/decode_200", |b| b.iter(|| black_box(wire::decode_wire(&bytes))));
}

fn session_tick(c: &mut Criterion) {
    let frames = raw_frames(4);
    let model: Model<f32> = Model::init(ModelConfig::standard(Arch::Hybrid), 0);
    c.bench_function("session/tick", |b| {
        b.iter_batched(
            || {
                let mut s = Session::new(SessionConfig::default(), Box::new(model.clone())).unwrap();
                for f in &frames[..100] {
                    s.push_raw(f).unwrap();
                }
                s
            },
            |mut s| black_box(s.push_raw(&frames[100]).unwrap()),
            BatchSize::LargeInput,
        )
    });
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = classify, train_step, codec, session_tick
}
criterion_main!(benches);
