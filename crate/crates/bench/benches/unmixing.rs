use criterion::{criterion_group, criterion_main, BatchSize, Criterion};
use mlmunmix::classic::{fcls, solve_pixel_supervised, SolverConfig};
use mlmunmix::model::{batch_inputs, infer_maps, init_network, train, NetworkSpec, TrainConfig};
use mlmunmix::scene::mlm_mix;
use mlmunmix::tensor::Tape;
use mlmunmix::vca::{vca_extract, VcaConfig};
use mlmunmix_bench::{scene, vca_init};

fn classic(c: &mut Criterion) {
    let s = scene(32);
    let x = s.cube.pixel(100).to_vec();
    c.bench_function("mlm_mix 224 bands", |b| b.iter(|| mlm_mix(&s.endmembers, s.abundance.pixel(7), 0.3).unwrap()));
    c.bench_function("fcls pixel", |b| b.iter(|| fcls(&x, &s.endmembers).unwrap()));
    let cfg = SolverConfig::default();
    c.bench_function("supervised pixel", |b| b.iter(|| solve_pixel_supervised(&x, &s.endmembers, &cfg).unwrap()));
    c.bench_function("vca 32x32", |b| b.iter(|| vca_extract(&s.cube, &VcaConfig::new(4, 0)).unwrap()));
}

fn network(c: &mut Criterion) {
    let s = scene(16);
    let e0 = vca_init(&s);
    let pixels: Vec<usize> = (0..128).collect();
    for (name, spec) in [
        ("1d", NetworkSpec::one_d(224, 4, 0).unwrap()),
        ("3d s=5", NetworkSpec::three_d(224, 4, 5, 0).unwrap()),
    ] {
        let net = init_network(spec, &e0).unwrap();
        let (inputs, centers) = batch_inputs(net.spec(), &s.cube, &pixels).unwrap();
        c.bench_function(&format!("forward+backward {name} K=128"), |b| {
            b.iter(|| {
                let mut tape = Tape::new();
                let params = net.register(&mut tape);
                let x = tape.leaf(inputs.clone());
                let cv = tape.leaf(centers.clone());
                let out = net.forward(&mut tape, &params, x, cv).unwrap();
                let loss = tape.sad_loss(cv, out.reconstruction).unwrap();
                tape.backward(loss).unwrap()
            })
        });
        c.bench_function(&format!("inference {name} 16x16"), |b| b.iter(|| infer_maps(&net, &s.cube).unwrap()));
    }
    let tcfg = TrainConfig {
        epochs: 1,
        batch_size: 128,
        ..TrainConfig::default()
    };
    let spec = NetworkSpec::one_d(224, 4, 0).unwrap();
    let mut group = c.benchmark_group("training");
    group.sample_size(10);
    group.bench_function("1d epoch 16x16", |b| {
        b.iter_batched(
            || init_network(spec.clone(), &e0).unwrap(),
            |mut net| train(&mut net, &s.cube, &tcfg).unwrap(),
            BatchSize::LargeInput,
        )
    });
    group.finish();
}

criterion_group!(benches, classic, network);
criterion_main!(benches);
