#![allow(dead_code)]

use mlmunmix::hsi::{EndmemberMatrix, HsiCube};
use mlmunmix::model::{batch_inputs, init_network, EncoderBlock, Mode, NetworkSpec};
use mlmunmix::rng::seeded;
use mlmunmix::tensor::{gradient_check, Activation, GradCheckConfig, GradCheckReport, Tape, Tensor, Var};
use mlmunmix::Result;
use rand::Rng;

pub type Forward = Box<dyn Fn(&mut Tape, &[Var]) -> Result<Var>>;

pub struct GradCase {
    pub name: &'static str,
    pub forward: Forward,
    pub params: Vec<Tensor>,
}

pub fn uniform(seed: u64, stream: u64, shape: &[usize], lo: f64, hi: f64) -> Tensor {
    let mut rng = seeded(seed, stream);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Random linear functional of `v`, so every output coordinate gets a
/// distinct upstream gradient.
fn project(t: &mut Tape, v: Var, w: &Tensor) -> Result<Var> {
    let flat = t.reshape(v, &[1, w.len()])?;
    let w = t.leaf(w.clone().reshape(vec![1, w.len()])?);
    t.dense(flat, w)
}

fn probe(seed: u64, n: usize) -> Tensor {
    uniform(seed, 99, &[n], -1.0, 1.0)
}

/// One case per tape primitive, each reduced to a scalar.
pub fn primitive_cases(seed: u64) -> Vec<GradCase> {
    let mut cases = Vec::new();
    let mut add = |name: &'static str, params: Vec<Tensor>, out_len: usize, f: fn(&mut Tape, &[Var]) -> Result<Var>| {
        let w = probe(seed, out_len);
        cases.push(GradCase {
            name,
            forward: Box::new(move |t: &mut Tape, p: &[Var]| {
                let v = f(t, p)?;
                project(t, v, &w)
            }),
            params,
        });
    };
    add(
        "dense",
        vec![uniform(seed, 1, &[2, 4], -1.0, 1.0), uniform(seed, 2, &[3, 4], -1.0, 1.0)],
        6,
        |t, p| t.dense(p[0], p[1]),
    );
    add(
        "conv1d_valid",
        vec![uniform(seed, 1, &[2, 11], -1.0, 1.0), uniform(seed, 2, &[3, 2, 5], -1.0, 1.0)],
        21,
        |t, p| t.conv1d_valid(p[0], p[1]),
    );
    add(
        "conv3d_valid",
        vec![uniform(seed, 1, &[2, 1, 5, 5, 17], -1.0, 1.0), uniform(seed, 2, &[2, 1, 3, 3, 3], -1.0, 1.0)],
        2 * 2 * 3 * 3 * 15,
        |t, p| t.conv3d_valid(p[0], p[1]),
    );
    add("maxpool_lastdim", vec![uniform(seed, 1, &[2, 20], -1.0, 1.0)], 12, |t, p| {
        t.maxpool_lastdim(p[0], 3, 3)
    });
    add("leaky_relu", vec![uniform(seed, 1, &[10], -1.0, 1.0)], 10, |t, p| {
        Ok(t.activation(p[0], Activation::LeakyRelu { slope: 0.01 }))
    });
    add("tanh", vec![uniform(seed, 1, &[10], -2.0, 2.0)], 10, |t, p| Ok(t.activation(p[0], Activation::Tanh)));
    add("softmax", vec![uniform(seed, 1, &[3, 4], -2.0, 2.0)], 12, |t, p| t.softmax(p[0]));
    add(
        "hadamard",
        vec![uniform(seed, 1, &[6], -1.0, 1.0), uniform(seed, 2, &[6], -1.0, 1.0)],
        6,
        |t, p| t.hadamard(p[0], p[1]),
    );
    add(
        "add",
        vec![uniform(seed, 1, &[6], -1.0, 1.0), uniform(seed, 2, &[6], -1.0, 1.0)],
        6,
        |t, p| t.add(p[0], p[1]),
    );
    add(
        "guarded_div",
        vec![uniform(seed, 1, &[6], -1.0, 1.0), uniform(seed, 2, &[6], 0.5, 1.5)],
        6,
        |t, p| t.guarded_div(p[0], p[1], 1e-6),
    );
    add(
        "concat",
        vec![uniform(seed, 1, &[2, 3], -1.0, 1.0), uniform(seed, 2, &[2, 4], -1.0, 1.0)],
        14,
        |t, p| t.concat(p[0], p[1]),
    );
    add("affine", vec![uniform(seed, 1, &[5], -1.0, 1.0)], 5, |t, p| Ok(t.affine(p[0], -0.7, 0.3)));
    add(
        "scale_rows",
        vec![uniform(seed, 1, &[3, 4], -1.0, 1.0), uniform(seed, 2, &[3], -1.0, 1.0)],
        12,
        |t, p| t.scale_rows(p[0], p[1]),
    );
    add("column", vec![uniform(seed, 1, &[3, 4], -1.0, 1.0)], 3, |t, p| t.column(p[0], 2));
    add("reshape", vec![uniform(seed, 1, &[2, 6], -1.0, 1.0)], 12, |t, p| t.reshape(p[0], &[3, 4]));
    add(
        "sad_loss",
        vec![uniform(seed, 1, &[3, 8], 0.05, 1.0), uniform(seed, 2, &[3, 8], 0.05, 1.0)],
        1,
        |t, p| t.sad_loss(p[0], p[1]),
    );
    cases
}

fn block(channels: usize, kernel: [usize; 3], pool: Option<usize>) -> EncoderBlock {
    EncoderBlock { channels, kernel, pool }
}

/// Reduced 1-D network (B=32, R=3): spectral 32->30->15->13->6->4->2->1.
pub fn small_spec_1d(seed: u64) -> NetworkSpec {
    let r = 3;
    let blocks = vec![
        block(8 * r, [1, 1, 3], Some(2)),
        block(4 * r, [1, 1, 3], Some(2)),
        block(2 * r, [1, 1, 3], Some(2)),
        block(r, [1, 1, 2], None),
    ];
    NetworkSpec::with_encoder(Mode::OneD, 32, r, 1, blocks, seed).unwrap()
}

/// Reduced 3-D network (s=3, B=17): spatial 3->1->1, spectral
/// 17->16->8->7->3->2->1->1.
pub fn small_spec_3d(seed: u64) -> NetworkSpec {
    let r = 3;
    let blocks = vec![
        block(8 * r, [3, 3, 2], Some(2)),
        block(4 * r, [1, 1, 2], Some(2)),
        block(2 * r, [1, 1, 2], Some(2)),
        block(r, [1, 1, 1], None),
    ];
    NetworkSpec::with_encoder(Mode::ThreeD, 17, r, 3, blocks, seed).unwrap()
}

/// Mean SAD loss of a freshly initialized network on a random 3x3 cube, as a
/// function of all network parameters.
pub fn network_case(spec: NetworkSpec) -> GradCase {
    let seed = spec.seed;
    let b = spec.bands;
    let cube = HsiCube::new(3, 3, b, uniform(seed, 10, &[9 * b], 0.05, 0.95).into_data()).unwrap();
    let e = EndmemberMatrix::new(b, spec.endmembers, uniform(seed, 11, &[b * spec.endmembers], 0.1, 0.9).into_data())
        .unwrap();
    let net = init_network(spec, &e).unwrap();
    let pixels: Vec<usize> = (0..9).collect();
    let (inputs, centers) = batch_inputs(net.spec(), &cube, &pixels).unwrap();
    let params = net.params().to_vec();
    let name = match net.spec().mode {
        Mode::OneD => "network_1d",
        Mode::ThreeD => "network_3d",
    };
    GradCase {
        name,
        forward: Box::new(move |t: &mut Tape, p: &[Var]| {
            let x = t.leaf(inputs.clone());
            let c = t.leaf(centers.clone());
            let out = net.forward(t, p, x, c)?;
            t.sad_loss(c, out.reconstruction)
        }),
        params,
    }
}

pub fn check(case: &GradCase, seed: u64) -> GradCheckReport {
    let cfg = GradCheckConfig {
        seed,
        ..GradCheckConfig::default()
    };
    gradient_check(&case.forward, &case.params, &cfg).unwrap()
}
