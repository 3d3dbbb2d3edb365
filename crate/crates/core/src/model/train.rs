use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::network::{batch_inputs, slot, Network};
use crate::error::{Error, Result};
use crate::hsi::{AbundanceMap, HsiCube, ProbabilityMap};
use crate::rng::{seeded, stream};
use crate::tensor::{AdamConfig, ParamGroup, Tape, Tensor};

/// Pixels per inference batch.
const INFER_BATCH: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub decoder_lr: f64,
    /// Multiplied into the decoder learning rate after every epoch.
    pub decoder_decay: f64,
    /// Constant learning rate of every other parameter.
    pub lr: f64,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 512,
            epochs: 150,
            decoder_lr: 0.0005,
            decoder_decay: 0.9,
            lr: 0.001,
            adam: AdamConfig::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::invalid("train config", "batch size and epochs must be at least 1"));
        }
        Ok(())
    }
}

/// Mini-batch Adam on the mean SAD between pixels and reconstructions.
/// The decoder weights form their own group with a decaying learning rate
/// and are projected into `[0, 1]` after every step. Returns the mean loss of
/// each epoch.
pub fn train(net: &mut Network, cube: &HsiCube, cfg: &TrainConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let spec = net.spec().clone();
    if cube.bands() != spec.bands {
        return Err(Error::dim("train", format!("cube has {} bands, network expects {}", cube.bands(), spec.bands)));
    }
    let shapes: Vec<Vec<usize>> = net.params().iter().map(|p| p.shape().to_vec()).collect();
    let others: Vec<usize> = (0..slot::COUNT).filter(|&i| i != slot::DECODER).collect();
    let other_shapes: Vec<&[usize]> = others.iter().map(|&i| shapes[i].as_slice()).collect();
    let mut decoder = ParamGroup::new(
        &[slot::DECODER],
        &[&shapes[slot::DECODER]],
        cfg.decoder_lr,
        cfg.decoder_decay,
        cfg.adam,
    )?;
    let mut rest = ParamGroup::new(&others, &other_shapes, cfg.lr, 1.0, cfg.adam)?;

    let n = cube.pixels();
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = seeded(cfg.seed, stream::SHUFFLE);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut weighted = 0.0;
        for (batch, pixels) in order.chunks(cfg.batch_size).enumerate() {
            let (inputs, centers) = batch_inputs(&spec, cube, pixels)?;
            let mut tape = Tape::new();
            let params = net.register(&mut tape);
            let x = tape.leaf(inputs);
            let c = tape.leaf(centers);
            let out = net.forward(&mut tape, &params, x, c)?;
            let loss_var = tape.sad_loss(c, out.reconstruction)?;
            let loss = tape.value(loss_var).data()[0];
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch, loss });
            }
            let mut grads = tape.backward(loss_var)?;
            let grads: Vec<Tensor> = params.iter().map(|&v| grads.take(v)).collect();
            drop(tape);
            decoder.adam_step(net.params_mut(), &grads)?;
            rest.adam_step(net.params_mut(), &grads)?;
            net.project_decoder();
            weighted += loss * pixels.len() as f64;
        }
        decoder.decay_epoch();
        history.push(weighted / n as f64);
    }
    Ok(history)
}

#[derive(Debug, Clone)]
pub struct Inference {
    pub abundance: AbundanceMap,
    pub p: ProbabilityMap,
    pub reconstruction: HsiCube,
    /// Mean SAD loss over all pixels, as used for training.
    pub loss: f64,
}

struct BatchOut {
    abundance: Vec<f64>,
    p: Vec<f64>,
    reconstruction: Vec<f64>,
    loss_sum: f64,
}

/// Forward every pixel (patch) in fixed batches; batches run in parallel and
/// are reassembled in pixel order.
pub fn infer_maps(net: &Network, cube: &HsiCube) -> Result<Inference> {
    let spec = net.spec();
    if cube.bands() != spec.bands {
        return Err(Error::dim("infer_maps", format!("cube has {} bands, network expects {}", cube.bands(), spec.bands)));
    }
    let pixels: Vec<usize> = (0..cube.pixels()).collect();
    let outs: Vec<BatchOut> = pixels
        .par_chunks(INFER_BATCH)
        .map(|chunk| -> Result<BatchOut> {
            let (inputs, centers) = batch_inputs(spec, cube, chunk)?;
            let mut tape = Tape::new();
            let params: Vec<_> = net.params().iter().map(|p| tape.leaf(p.clone())).collect();
            let x = tape.leaf(inputs);
            let c = tape.leaf(centers);
            let out = net.forward(&mut tape, &params, x, c)?;
            let loss = tape.sad_loss(c, out.reconstruction)?;
            Ok(BatchOut {
                abundance: tape.value(out.abundance).data().to_vec(),
                p: tape.value(out.p).data().to_vec(),
                reconstruction: tape.value(out.reconstruction).data().to_vec(),
                loss_sum: tape.value(loss).data()[0] * chunk.len() as f64,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let (h, w) = (cube.height(), cube.width());
    let mut abundance = Vec::with_capacity(h * w * spec.endmembers);
    let mut p = Vec::with_capacity(h * w);
    let mut recon = Vec::with_capacity(h * w * spec.bands);
    let mut loss = 0.0;
    for o in outs {
        abundance.extend(o.abundance);
        p.extend(o.p);
        recon.extend(o.reconstruction);
        loss += o.loss_sum;
    }
    Ok(Inference {
        abundance: AbundanceMap::new(h, w, spec.endmembers, abundance)?,
        p: ProbabilityMap::new_unit(h, w, p)?,
        reconstruction: HsiCube::new(h, w, spec.bands, recon)?,
        loss: loss / (h * w) as f64,
    })
}

/// Loss history as CSV: `epoch,loss` with epochs counted from 1.
pub fn loss_history_csv(history: &[f64]) -> String {
    let mut s = String::from("epoch,loss\n");
    for (e, l) in history.iter().enumerate() {
        s.push_str(&format!("{},{l}\n", e + 1));
    }
    s
}
