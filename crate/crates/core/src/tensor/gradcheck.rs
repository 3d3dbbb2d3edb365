//! Central finite-difference check of tape gradients.
//!
//! Each sampled coordinate compares the analytic gradient against
//! `(f(x+h) - f(x-h)) / 2h`. When the two disagree, the checker probes whether
//! a kink (max-pool switch, leaky-ReLU hinge, clamp) lies inside the stencil:
//! for a smooth function the second difference `f(x+h) - 2f(x) + f(x-h)`
//! shrinks fourfold when `h` halves, across a kink it does not. Such
//! coordinates are reported as non-smooth and left out of the error maximum.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Tape, Tensor, Var};
use crate::error::Result;

#[derive(Debug, Clone)]
pub struct GradCheckConfig {
    pub step: f64,
    /// Coordinates checked per parameter tensor; larger tensors are subsampled.
    pub max_coords_per_param: usize,
    /// Denominator floor of the relative error.
    pub abs_floor: f64,
    /// Relative error above which a coordinate is probed for a kink.
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-5,
            max_coords_per_param: 24,
            abs_floor: 1e-6,
            tolerance: 1e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CoordCheck {
    pub param: usize,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
    pub smooth: bool,
}

#[derive(Debug, Clone, Default)]
pub struct GradCheckReport {
    pub coords: Vec<CoordCheck>,
}

impl GradCheckReport {
    /// Largest relative error over smooth coordinates.
    pub fn max_rel_error(&self) -> f64 {
        self.coords
            .iter()
            .filter(|c| c.smooth)
            .map(|c| c.rel_error)
            .fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&CoordCheck> {
        self.coords
            .iter()
            .filter(|c| c.smooth)
            .max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }

    pub fn checked(&self) -> usize {
        self.coords.len()
    }

    pub fn nonsmooth(&self) -> usize {
        self.coords.iter().filter(|c| !c.smooth).count()
    }
}

fn eval<F>(forward: &F, params: &[Tensor]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = forward(&mut tape, &vars)?;
    Ok(tape.value(loss).data()[0])
}

/// Compare analytic and finite-difference gradients of `forward` at `params`.
/// `forward` receives the parameters registered on a fresh tape and returns a
/// scalar loss.
pub fn gradient_check<F>(forward: F, params: &[Tensor], cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = forward(&mut tape, &vars)?;
    let base = tape.value(loss).data()[0];
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor> = vars.iter().map(|&v| grads.get(v)).collect();
    drop(tape);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut work = params.to_vec();
    let mut report = GradCheckReport::default();
    let h = cfg.step;

    for (pi, p) in params.iter().enumerate() {
        let indices: Vec<usize> = if p.len() <= cfg.max_coords_per_param {
            (0..p.len()).collect()
        } else {
            let mut idx = sample(&mut rng, p.len(), cfg.max_coords_per_param).into_vec();
            idx.sort_unstable();
            idx
        };
        for index in indices {
            let x0 = p.data()[index];
            let at = |delta: f64, work: &mut Vec<Tensor>| -> Result<f64> {
                work[pi].data_mut()[index] = x0 + delta;
                let v = eval(&forward, work);
                work[pi].data_mut()[index] = x0;
                v
            };
            let plus = at(h, &mut work)?;
            let minus = at(-h, &mut work)?;
            let numeric = (plus - minus) / (2.0 * h);
            let a = analytic[pi].data()[index];
            let rel_error = (a - numeric).abs() / a.abs().max(numeric.abs()).max(cfg.abs_floor);
            let mut smooth = true;
            if rel_error > cfg.tolerance {
                let plus2 = at(h / 2.0, &mut work)?;
                let minus2 = at(-h / 2.0, &mut work)?;
                let gap = (plus - base) - (base - minus);
                let gap2 = (plus2 - base) - (base - minus2);
                // smooth: gap(h) ~ h^2 f'' so gap(h) ~ 4 gap(h/2)
                let roundoff = 16.0 * f64::EPSILON * base.abs().max(1e-300);
                smooth = (gap - 4.0 * gap2).abs() <= 0.25 * gap.abs() + roundoff;
            }
            report.coords.push(CoordCheck {
                param: pi,
                index,
                analytic: a,
                numeric,
                rel_error,
                smooth,
            });
        }
    }
    Ok(report)
}
