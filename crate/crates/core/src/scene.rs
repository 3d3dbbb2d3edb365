//! Synthetic multilinear-mixing scenes.
//!
//! A scene is built from smooth synthetic endmembers (or a user library),
//! spatially smooth abundance fields, half-normal transition probabilities
//! and optional white Gaussian noise at a target SNR.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hsi::{AbundanceMap, EndmemberMatrix, HsiCube, ProbabilityMap};
use crate::linalg::{reflect_index, sad, softmax};
use crate::rng::{seeded, stream};

/// Softmax temperature applied to the standardized abundance fields.
pub const ABUNDANCE_TEMPERATURE: f64 = 0.5;
/// Minimum pairwise spectral angle between synthetic endmembers.
pub const MIN_ENDMEMBER_SAD: f64 = 0.1;
const MAX_ENDMEMBER_DRAWS: usize = 1000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneConfig {
    pub height: usize,
    pub width: usize,
    pub endmembers: usize,
    pub bands: usize,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    /// `None` generates a noise-free cube.
    #[serde(default)]
    pub snr_db: Option<f64>,
    #[serde(default = "default_length_scale")]
    pub length_scale: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_sigma() -> f64 {
    0.3
}

fn default_length_scale() -> f64 {
    20.0
}

impl SceneConfig {
    pub fn new(height: usize, width: usize, endmembers: usize, bands: usize) -> Self {
        SceneConfig {
            height,
            width,
            endmembers,
            bands,
            sigma: default_sigma(),
            snr_db: None,
            length_scale: default_length_scale(),
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.height == 0 || self.width == 0 || self.endmembers == 0 || self.bands == 0 {
            return Err(Error::invalid(
                "scene config",
                format!(
                    "extents must be positive, got H={} W={} R={} B={}",
                    self.height, self.width, self.endmembers, self.bands
                ),
            ));
        }
        if !(self.sigma > 0.0) || !self.sigma.is_finite() {
            return Err(Error::invalid("scene config", format!("sigma {} must be positive", self.sigma)));
        }
        if !(self.length_scale >= 1.0) {
            return Err(Error::invalid(
                "scene config",
                format!("length scale {} must be at least 1", self.length_scale),
            ));
        }
        if let Some(snr) = self.snr_db {
            if snr.is_nan() {
                return Err(Error::invalid("scene config", "SNR is NaN"));
            }
        }
        Ok(())
    }
}

/// One smooth spectrum: a sum of 3 to 6 Gaussian bumps rescaled into a random
/// sub-range of `[0.05, 0.95]`.
fn smooth_spectrum<R: Rng>(bands: usize, rng: &mut R) -> Vec<f64> {
    let b = bands as f64;
    let bumps = rng.random_range(3..=6);
    let params: Vec<(f64, f64, f64)> = (0..bumps)
        .map(|_| {
            let centre = rng.random_range(0.0..b);
            let width = rng.random_range(b / 30.0..b / 6.0).max(0.5);
            let height = rng.random_range(0.2..1.0);
            (centre, width, height)
        })
        .collect();
    let s: Vec<f64> = (0..bands)
        .map(|i| {
            params
                .iter()
                .map(|(c, w, h)| h * (-0.5 * ((i as f64 - c) / w).powi(2)).exp())
                .sum()
        })
        .collect();
    let lo = s.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = s.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let floor = rng.random_range(0.05..0.3);
    let ceil = rng.random_range(0.6..0.95);
    s.iter()
        .map(|v| {
            let t = if hi > lo { (v - lo) / (hi - lo) } else { 0.5 };
            (floor + t * (ceil - floor)).clamp(0.05, 0.95)
        })
        .collect()
}

pub fn synth_endmembers(bands: usize, count: usize, seed: u64) -> Result<EndmemberMatrix> {
    if bands < 8 {
        return Err(Error::invalid("synthetic endmembers", format!("need at least 8 bands, got {bands}")));
    }
    if count == 0 {
        return Err(Error::invalid("synthetic endmembers", "need at least one endmember"));
    }
    let mut rng = seeded(seed, stream::ENDMEMBERS);
    let mut accepted: Vec<Vec<f64>> = Vec::with_capacity(count);
    let mut draws = 0;
    while accepted.len() < count {
        if draws == MAX_ENDMEMBER_DRAWS {
            return Err(Error::Seed {
                seed,
                detail: format!(
                    "only {} of {count} endmembers with pairwise SAD >= {MIN_ENDMEMBER_SAD} after {draws} draws",
                    accepted.len()
                ),
            });
        }
        draws += 1;
        let cand = smooth_spectrum(bands, &mut rng);
        if accepted
            .iter()
            .all(|e| sad(e, &cand).is_some_and(|a| a >= MIN_ENDMEMBER_SAD))
        {
            accepted.push(cand);
        }
    }
    EndmemberMatrix::from_columns(&accepted)
}

fn gaussian_kernel(std: f64) -> Vec<f64> {
    let radius = (4.0 * std).ceil() as isize;
    let k: Vec<f64> = (-radius..=radius)
        .map(|d| (-0.5 * (d as f64 / std).powi(2)).exp())
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian blur with reflective borders.
fn blur(field: &[f64], h: usize, w: usize, std: f64) -> Vec<f64> {
    let k = gaussian_kernel(std);
    let r = (k.len() / 2) as isize;
    let mut tmp = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            tmp[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(j, kv)| kv * field[y * w + reflect_index(x as isize + j as isize - r, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for y in 0..h {
        for x in 0..w {
            out[y * w + x] = k
                .iter()
                .enumerate()
                .map(|(j, kv)| kv * tmp[reflect_index(y as isize + j as isize - r, h) * w + x])
                .sum();
        }
    }
    out
}

/// Smooth random abundances. Each endmember gets white noise blurred by a
/// Gaussian of standard deviation `(length_scale - 1) / 2` pixels, so a length
/// scale of 1 leaves the noise white. Fields are standardized and mapped to
/// the simplex by a per-pixel softmax.
pub fn gen_abundance_field(height: usize, width: usize, count: usize, length_scale: f64, seed: u64) -> Result<AbundanceMap> {
    if !(length_scale >= 1.0) {
        return Err(Error::invalid("length scale", format!("{length_scale} is below 1")));
    }
    if height == 0 || width == 0 || count == 0 {
        return Err(Error::invalid("abundance field", format!("shape {height}x{width}x{count}")));
    }
    let mut rng = seeded(seed, stream::ABUNDANCE);
    let n = height * width;
    let std = (length_scale - 1.0) / 2.0;
    let fields: Vec<Vec<f64>> = (0..count)
        .map(|_| {
            let white: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
            let mut f = if std > 0.0 { blur(&white, height, width, std) } else { white };
            let mean = f.iter().sum::<f64>() / n as f64;
            let sd = (f.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
            for v in &mut f {
                *v -= mean;
                if sd > 0.0 {
                    *v /= sd;
                }
            }
            f
        })
        .collect();
    let mut data = Vec::with_capacity(n * count);
    let mut z = vec![0.0; count];
    for i in 0..n {
        for (k, f) in fields.iter().enumerate() {
            z[k] = f[i];
        }
        data.extend(softmax(&z, ABUNDANCE_TEMPERATURE));
    }
    AbundanceMap::new(height, width, count, data)
}

/// `P = |N(0, sigma^2)|` per pixel; draws above 1 are set to 0.
pub fn sample_transition_probs(height: usize, width: usize, sigma: f64, seed: u64) -> Result<ProbabilityMap> {
    if !(sigma > 0.0) {
        return Err(Error::invalid("sigma", format!("{sigma} is not positive")));
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::invalid("sigma", e.to_string()))?;
    let mut rng = seeded(seed, stream::TRANSITION);
    let data = (0..height * width)
        .map(|_| {
            let p: f64 = normal.sample(&mut rng).abs();
            if p > 1.0 {
                0.0
            } else {
                p
            }
        })
        .collect();
    ProbabilityMap::new_unit(height, width, data)
}

/// Closed-form multilinear mixing of a linear spectrum `y`:
/// `x = (1 - P) y / (1 - P y)`.
pub fn mlm_from_linear(y: &[f64], p: f64) -> Result<Vec<f64>> {
    y.iter()
        .enumerate()
        .map(|(b, &yb)| {
            let den = 1.0 - p * yb;
            if !(den > 0.0) {
                Err(Error::domain("mlm_mix", format!("1 - P*y = {den} at band {b} (P = {p}, y = {yb})")))
            } else {
                Ok((1.0 - p) * yb / den)
            }
        })
        .collect()
}

pub fn mlm_mix(e: &EndmemberMatrix, a: &[f64], p: f64) -> Result<Vec<f64>> {
    if a.len() != e.count() {
        return Err(Error::dim("mlm_mix", format!("{} abundances for {} endmembers", a.len(), e.count())));
    }
    mlm_from_linear(&e.mix_linear(a), p)
}

/// Add white Gaussian noise with variance `mean(x^2) / 10^(snr/10)`.
/// `None` returns the cube unchanged. Values are not clipped.
pub fn add_awgn(cube: &HsiCube, snr_db: Option<f64>, seed: u64) -> HsiCube {
    let mut out = cube.clone();
    let Some(snr) = snr_db else {
        return out;
    };
    if snr.is_infinite() && snr > 0.0 {
        return out;
    }
    let power = cube.data().iter().map(|v| v * v).sum::<f64>() / cube.data().len() as f64;
    let std = (power / 10f64.powf(snr / 10.0)).sqrt();
    let mut rng = seeded(seed, stream::NOISE);
    for v in out.data_mut() {
        let z: f64 = rng.sample(StandardNormal);
        *v += std * z;
    }
    out
}

#[derive(Debug, Clone)]
pub struct Scene {
    pub cube: HsiCube,
    pub abundance: AbundanceMap,
    pub p: ProbabilityMap,
    pub endmembers: EndmemberMatrix,
    /// Noise-free MLM cube.
    pub clean: HsiCube,
}

/// Full synthetic recipe. A supplied library must match `cfg.bands` and
/// `cfg.endmembers`.
pub fn generate_scene(cfg: &SceneConfig, library: Option<&EndmemberMatrix>) -> Result<Scene> {
    cfg.validate()?;
    let endmembers = match library {
        Some(e) => {
            if e.bands() != cfg.bands || e.count() != cfg.endmembers {
                return Err(Error::dim(
                    "generate_scene",
                    format!(
                        "library is {}x{}, config asks for B={} R={}",
                        e.bands(),
                        e.count(),
                        cfg.bands,
                        cfg.endmembers
                    ),
                ));
            }
            e.clone()
        }
        None => synth_endmembers(cfg.bands, cfg.endmembers, cfg.seed)?,
    };
    let abundance = gen_abundance_field(cfg.height, cfg.width, cfg.endmembers, cfg.length_scale, cfg.seed)?;
    let p = sample_transition_probs(cfg.height, cfg.width, cfg.sigma, cfg.seed)?;
    let n = cfg.height * cfg.width;
    let mut data = Vec::with_capacity(n * cfg.bands);
    for i in 0..n {
        data.extend(mlm_mix(&endmembers, abundance.pixel(i), p.get(i))?);
    }
    let clean = HsiCube::new(cfg.height, cfg.width, cfg.bands, data)?;
    let cube = add_awgn(&clean, cfg.snr_db, cfg.seed);
    Ok(Scene {
        cube,
        abundance,
        p,
        endmembers,
        clean,
    })
}
