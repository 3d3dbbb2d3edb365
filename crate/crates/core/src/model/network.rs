use rand::Rng;
use serde::{Deserialize, Serialize};

use super::plan::{
    build_dnnsc, build_encoder_1d, build_encoder_3d, encoder_trace, DnnscDims, EncoderBlock, Mode, TraceStep,
    DEFAULT_GUARD_FLOOR, DEFAULT_LEAKY_SLOPE,
};
use crate::error::{Error, Result};
use crate::hsi::{EndmemberMatrix, HsiCube};
use crate::linalg::reflect_index;
use crate::rng::{seeded, stream};
use crate::tensor::{Activation, Tape, Tensor, Var};

/// Parameter slots in declaration order.
pub mod slot {
    pub const CONV: [usize; 4] = [0, 1, 2, 3];
    pub const DECODER: usize = 4;
    pub const B1_MAIN1: usize = 5;
    pub const B1_MAIN2: usize = 6;
    pub const B1_SKIP: usize = 7;
    pub const B2_MAIN1: usize = 8;
    pub const B2_MAIN2: usize = 9;
    pub const B2_SKIP: usize = 10;
    pub const COUNT: usize = 11;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub mode: Mode,
    pub bands: usize,
    pub endmembers: usize,
    /// Spatial patch size; 1 in 1-D mode.
    pub patch: usize,
    pub encoder: Vec<EncoderBlock>,
    pub dnnsc: DnnscDims,
    pub leaky_slope: f64,
    pub guard_floor: f64,
    pub seed: u64,
}

impl NetworkSpec {
    pub fn one_d(bands: usize, endmembers: usize, seed: u64) -> Result<Self> {
        Self::with_encoder(Mode::OneD, bands, endmembers, 1, build_encoder_1d(bands, endmembers)?, seed)
    }

    pub fn three_d(bands: usize, endmembers: usize, patch: usize, seed: u64) -> Result<Self> {
        Self::with_encoder(
            Mode::ThreeD,
            bands,
            endmembers,
            patch,
            build_encoder_3d(bands, endmembers, patch)?,
            seed,
        )
    }

    /// Patch size 1 selects the 1-D network.
    pub fn for_patch(bands: usize, endmembers: usize, patch: usize, seed: u64) -> Result<Self> {
        if patch == 1 {
            Self::one_d(bands, endmembers, seed)
        } else {
            Self::three_d(bands, endmembers, patch, seed)
        }
    }

    /// Spec with a caller-supplied encoder plan, checked to end at
    /// `R x 1 x 1 x 1`.
    pub fn with_encoder(
        mode: Mode,
        bands: usize,
        endmembers: usize,
        patch: usize,
        encoder: Vec<EncoderBlock>,
        seed: u64,
    ) -> Result<Self> {
        let spec = NetworkSpec {
            mode,
            bands,
            endmembers,
            patch,
            encoder,
            dnnsc: build_dnnsc(bands)?,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            guard_floor: DEFAULT_GUARD_FLOOR,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.endmembers == 0 {
            return Err(Error::invalid("network spec", "R must be positive"));
        }
        match self.mode {
            Mode::OneD if self.patch != 1 => {
                return Err(Error::invalid("network spec", "1-D networks take patch size 1"));
            }
            Mode::ThreeD if self.patch < 3 || self.patch % 2 == 0 => {
                return Err(Error::invalid("patch size", format!("{} must be odd and at least 3", self.patch)));
            }
            _ => {}
        }
        if self.mode == Mode::OneD && self.encoder.iter().any(|b| b.kernel[0] != 1 || b.kernel[1] != 1) {
            return Err(Error::Architecture("1-D encoder blocks must have unit spatial kernels".into()));
        }
        if self.encoder.len() != 4 {
            return Err(Error::Architecture(format!("encoder needs 4 blocks, got {}", self.encoder.len())));
        }
        let last = self.trace()?.pop().unwrap();
        if (last.channels, last.height, last.width, last.spectral) != (self.endmembers, 1, 1, 1) {
            return Err(Error::Architecture(format!(
                "encoder ends at {}x{}x{}x{}, expected {}x1x1x1",
                last.channels, last.height, last.width, last.spectral, self.endmembers
            )));
        }
        if self.dnnsc.input != 2 * self.bands || self.dnnsc.out != 2 {
            return Err(Error::Architecture("DNNSc must map 2B features to 2 logits".into()));
        }
        if !(self.guard_floor > 0.0) {
            return Err(Error::invalid("network spec", "guard floor must be positive"));
        }
        Ok(())
    }

    pub fn trace(&self) -> Result<Vec<TraceStep>> {
        encoder_trace(&self.encoder, self.bands, self.patch)
    }

    /// Shapes of every parameter tensor in declaration order.
    pub fn param_shapes(&self) -> Vec<Vec<usize>> {
        let mut shapes = Vec::with_capacity(slot::COUNT);
        let mut c_in = 1;
        for b in &self.encoder {
            shapes.push(match self.mode {
                Mode::OneD => vec![b.channels, c_in, b.kernel[2]],
                Mode::ThreeD => vec![b.channels, c_in, b.kernel[0], b.kernel[1], b.kernel[2]],
            });
            c_in = b.channels;
        }
        let d = self.dnnsc;
        shapes.push(vec![self.bands, self.endmembers]);
        shapes.push(vec![d.hidden1, d.input]);
        shapes.push(vec![d.mid, d.hidden1]);
        shapes.push(vec![d.mid, d.input]);
        shapes.push(vec![d.hidden2, d.mid]);
        shapes.push(vec![d.out, d.hidden2]);
        shapes.push(vec![d.out, d.mid]);
        shapes
    }

    /// Per-sample input shape without the batch axis.
    pub fn sample_shape(&self) -> Vec<usize> {
        match self.mode {
            Mode::OneD => vec![self.bands],
            Mode::ThreeD => vec![1, self.patch, self.patch, self.bands],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    params: Vec<Tensor>,
}

/// Tape handles of one batched forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    pub abundance: Var,
    pub linear: Var,
    pub logits: Var,
    pub p: Var,
    pub reconstruction: Var,
}

impl Network {
    pub fn from_parts(spec: NetworkSpec, params: Vec<Tensor>) -> Result<Self> {
        spec.validate()?;
        let shapes = spec.param_shapes();
        if params.len() != shapes.len() {
            return Err(Error::dim("network", format!("{} tensors, expected {}", params.len(), shapes.len())));
        }
        for (i, (p, s)) in params.iter().zip(&shapes).enumerate() {
            if p.shape() != s.as_slice() {
                return Err(Error::dim("network", format!("parameter {i} has shape {:?}, expected {s:?}", p.shape())));
            }
        }
        Ok(Network { spec, params })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Tensor] {
        &mut self.params
    }

    /// Clamp the decoder weights into `[0, 1]`.
    pub fn project_decoder(&mut self) {
        for w in self.params[slot::DECODER].data_mut() {
            *w = w.clamp(0.0, 1.0);
        }
    }

    /// Decoder weights as the endmember estimate.
    pub fn extract_endmembers(&self) -> Result<EndmemberMatrix> {
        EndmemberMatrix::new(
            self.spec.bands,
            self.spec.endmembers,
            self.params[slot::DECODER].data().to_vec(),
        )
    }

    /// Register all parameters on `tape` in declaration order.
    pub fn register(&self, tape: &mut Tape) -> Vec<Var> {
        self.params.iter().map(|p| tape.param(p.clone())).collect()
    }

    /// Batched forward pass for `inputs` (shape `[K, ..sample_shape]`) and the
    /// spectra used in the pixel-level products (`[K, B]`).
    pub fn forward(&self, tape: &mut Tape, params: &[Var], inputs: Var, centers: Var) -> Result<ForwardVars> {
        forward_graph(&self.spec, tape, params, inputs, centers)
    }
}

/// Fan-in scaled uniform initialization with the decoder set to `e_init`.
pub fn init_network(spec: NetworkSpec, e_init: &EndmemberMatrix) -> Result<Network> {
    spec.validate()?;
    if e_init.bands() != spec.bands || e_init.count() != spec.endmembers {
        return Err(Error::dim(
            "init_network",
            format!(
                "initial endmembers {}x{}, network expects {}x{}",
                e_init.bands(),
                e_init.count(),
                spec.bands,
                spec.endmembers
            ),
        ));
    }
    let mut rng = seeded(spec.seed, stream::INIT);
    let params = spec
        .param_shapes()
        .into_iter()
        .enumerate()
        .map(|(i, shape)| {
            if i == slot::DECODER {
                return Tensor::new(shape, e_init.data().to_vec());
            }
            let fan_in: usize = shape[1..].iter().product();
            let bound = (1.0 / fan_in as f64).sqrt();
            let n: usize = shape.iter().product();
            Tensor::new(shape, (0..n).map(|_| rng.random_range(-bound..=bound)).collect())
        })
        .collect::<Result<Vec<_>>>()?;
    Network::from_parts(spec, params)
}

fn encoder(spec: &NetworkSpec, tape: &mut Tape, params: &[Var], inputs: Var) -> Result<Var> {
    let k = tape.value(inputs).shape()[0];
    let slope = Activation::LeakyRelu { slope: spec.leaky_slope };
    let mut h = match spec.mode {
        Mode::OneD => tape.reshape(inputs, &[k, 1, spec.bands])?,
        Mode::ThreeD => inputs,
    };
    for (i, block) in spec.encoder.iter().enumerate() {
        h = match spec.mode {
            Mode::OneD => tape.conv1d_valid(h, params[slot::CONV[i]])?,
            Mode::ThreeD => tape.conv3d_valid(h, params[slot::CONV[i]])?,
        };
        h = tape.activation(h, slope);
        if let Some(p) = block.pool {
            h = tape.maxpool_lastdim(h, p, p)?;
        }
    }
    tape.reshape(h, &[k, spec.endmembers])
}

/// `P = softmax(z)[1]` and `x = (1-P) y / max(1 - P y, floor)` from the
/// linear spectra `y` (`[K, B]`) and the logits `z` (`[K, 2]`).
pub fn mlm_head(tape: &mut Tape, linear: Var, logits: Var, floor: f64) -> Result<(Var, Var)> {
    let probs = tape.softmax(logits)?;
    let p = tape.column(probs, 1)?;
    let one_minus_p = tape.affine(p, -1.0, 1.0);
    let num = tape.scale_rows(linear, one_minus_p)?;
    let py = tape.scale_rows(linear, p)?;
    let den = tape.affine(py, -1.0, 1.0);
    let xhat = tape.guarded_div(num, den, floor)?;
    Ok((p, xhat))
}

fn forward_graph(spec: &NetworkSpec, tape: &mut Tape, params: &[Var], inputs: Var, centers: Var) -> Result<ForwardVars> {
    let expect: Vec<usize> = spec.sample_shape();
    let shape = tape.value(inputs).shape().to_vec();
    if shape.len() != expect.len() + 1 || shape[1..] != expect[..] {
        return Err(Error::dim("forward", format!("input {shape:?}, expected [K, {expect:?}]")));
    }
    let cshape = tape.value(centers).shape();
    if cshape != [shape[0], spec.bands] {
        return Err(Error::dim("forward", format!("centers {cshape:?}, expected [{}, {}]", shape[0], spec.bands)));
    }
    let logits_in = encoder(spec, tape, params, inputs)?;
    let abundance = tape.softmax(logits_in)?;
    let linear = tape.dense(abundance, params[slot::DECODER])?;
    let cross = tape.hadamard(linear, centers)?;
    let feats = tape.concat(linear, cross)?;

    let h = tape.dense(feats, params[slot::B1_MAIN1])?;
    let h = tape.activation(h, Activation::Tanh);
    let main = tape.dense(h, params[slot::B1_MAIN2])?;
    let skip = tape.dense(feats, params[slot::B1_SKIP])?;
    let sum = tape.add(main, skip)?;
    let mid = tape.activation(sum, Activation::Tanh);

    let h = tape.dense(mid, params[slot::B2_MAIN1])?;
    let h = tape.activation(h, Activation::Tanh);
    let main = tape.dense(h, params[slot::B2_MAIN2])?;
    let skip = tape.dense(mid, params[slot::B2_SKIP])?;
    let logits = tape.add(main, skip)?;

    let (p, reconstruction) = mlm_head(tape, linear, logits, spec.guard_floor)?;
    Ok(ForwardVars {
        abundance,
        linear,
        logits,
        p,
        reconstruction,
    })
}

/// Network inputs and center spectra for the given pixels. 3-D patches are
/// `s x s x B` windows with mirrored borders.
pub fn batch_inputs(spec: &NetworkSpec, cube: &HsiCube, pixels: &[usize]) -> Result<(Tensor, Tensor)> {
    let b = cube.bands();
    if b != spec.bands {
        return Err(Error::dim("batch_inputs", format!("cube has {b} bands, network expects {}", spec.bands)));
    }
    let k = pixels.len();
    let mut centers = Vec::with_capacity(k * b);
    for &i in pixels {
        centers.extend_from_slice(cube.pixel(i));
    }
    let centers = Tensor::new(vec![k, b], centers)?;
    let inputs = match spec.mode {
        Mode::OneD => centers.clone(),
        Mode::ThreeD => {
            let s = spec.patch;
            let half = (s / 2) as isize;
            let (h, w) = (cube.height(), cube.width());
            let mut data = Vec::with_capacity(k * s * s * b);
            for &i in pixels {
                let (r, c) = ((i / w) as isize, (i % w) as isize);
                for dr in -half..=half {
                    let rr = reflect_index(r + dr, h);
                    for dc in -half..=half {
                        let cc = reflect_index(c + dc, w);
                        data.extend_from_slice(cube.pixel_at(rr, cc));
                    }
                }
            }
            Tensor::new(vec![k, 1, s, s, b], data)?
        }
    };
    Ok((inputs, centers))
}
