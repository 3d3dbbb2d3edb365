//! Vertex component analysis.
//!
//! The data are projected onto a signal subspace (projective SVD projection
//! at high SNR, PCA plus an offset coordinate at low SNR). Pixels are then
//! selected one at a time as the extreme point along a random direction
//! orthogonal to the pixels already chosen.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hsi::{EndmemberMatrix, HsiCube};
use crate::rng::{seeded, stream};

/// Eigenvalues below this fraction of the largest count as zero.
const RANK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VcaConfig {
    pub endmembers: usize,
    #[serde(default)]
    pub seed: u64,
    /// Known SNR in dB; estimated from the data when absent.
    #[serde(default)]
    pub snr_db: Option<f64>,
}

impl VcaConfig {
    pub fn new(endmembers: usize, seed: u64) -> Self {
        VcaConfig {
            endmembers,
            seed,
            snr_db: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct VcaOutput {
    pub endmembers: EndmemberMatrix,
    /// Selected pixel indices in selection order.
    pub indices: Vec<usize>,
    /// SNR used to choose the projection, in dB.
    pub snr_db: f64,
}

/// Eigenpairs sorted by decreasing eigenvalue.
fn sorted_eigen(m: DMatrix<f64>) -> (Vec<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(m);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = DMatrix::from_fn(eig.eigenvectors.nrows(), order.len(), |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

fn check_rank(values: &[f64], needed: usize) -> Result<()> {
    let top = values.first().copied().unwrap_or(0.0).max(0.0);
    let rank = values.iter().filter(|&&v| v > RANK_TOL * top && v > 0.0).count();
    if rank < needed {
        return Err(Error::DegenerateData(format!(
            "signal subspace has rank {rank}, {needed} required"
        )));
    }
    Ok(())
}

pub fn vca(cube: &HsiCube, cfg: &VcaConfig) -> Result<VcaOutput> {
    let (b, n, r) = (cube.bands(), cube.pixels(), cfg.endmembers);
    if r == 0 || r > b || r > n {
        return Err(Error::invalid(
            "VCA config",
            format!("R = {r} must satisfy 1 <= R <= B = {b} and R <= N = {n}"),
        ));
    }
    // column j is pixel j
    let y = DMatrix::from_column_slice(b, n, cube.data());
    let nf = n as f64;

    let (indices, snr_db) = if r == 1 {
        let (values, vectors) = sorted_eigen(&y * y.transpose() / nf);
        check_rank(&values, 1)?;
        let proj = vectors.column(0).transpose() * &y;
        (vec![argmax_abs(proj.iter().copied())], cfg.snr_db.unwrap_or(f64::INFINITY))
    } else {
        let mean = y.column_mean();
        let mut yo = y.clone();
        for mut c in yo.column_iter_mut() {
            c -= &mean;
        }
        let (cvals, cvecs) = sorted_eigen(&yo * yo.transpose() / nf);
        let snr = match cfg.snr_db {
            Some(s) => s,
            None => estimate_snr(&y, &yo, &mean, &cvecs.columns(0, r).into_owned(), r),
        };
        let threshold = 15.0 + 10.0 * (r as f64).log10();
        let projected = if snr < threshold {
            check_rank(&cvals, r - 1)?;
            let ud = cvecs.columns(0, r - 1).into_owned();
            let xp = ud.transpose() * &yo;
            let c = xp.column_iter().map(|col| col.norm()).fold(0.0, f64::max);
            let mut out = DMatrix::zeros(r, n);
            out.rows_mut(0, r - 1).copy_from(&xp);
            out.row_mut(r - 1).fill(c);
            out
        } else {
            let (values, vectors) = sorted_eigen(&y * y.transpose() / nf);
            check_rank(&values, r)?;
            let ud = vectors.columns(0, r).into_owned();
            let xp = ud.transpose() * &y;
            let u = xp.column_mean();
            let mut out = xp.clone();
            for (j, mut col) in out.column_iter_mut().enumerate() {
                let s = u.dot(&xp.column(j));
                if s.abs() < f64::MIN_POSITIVE {
                    return Err(Error::DegenerateData(format!(
                        "pixel {j} is orthogonal to the mean direction"
                    )));
                }
                col /= s;
            }
            out
        };
        (select_vertices(&projected, r, cfg.seed)?, snr)
    };

    let columns: Vec<Vec<f64>> = indices
        .iter()
        .map(|&i| cube.pixel(i).iter().map(|v| v.clamp(0.0, 1.0)).collect())
        .collect();
    let endmembers = EndmemberMatrix::from_columns(&columns).map_err(|e| {
        Error::DegenerateData(format!("selected pixels do not form valid endmembers: {e}"))
    })?;
    Ok(VcaOutput {
        endmembers,
        indices,
        snr_db,
    })
}

/// Endmember matrix only.
pub fn vca_extract(cube: &HsiCube, cfg: &VcaConfig) -> Result<EndmemberMatrix> {
    vca(cube, cfg).map(|o| o.endmembers)
}

/// SNR estimate from the energy captured by the R-dimensional subspace.
/// Noise-free data give `+inf`.
fn estimate_snr(y: &DMatrix<f64>, yo: &DMatrix<f64>, mean: &DVector<f64>, ud: &DMatrix<f64>, r: usize) -> f64 {
    let (b, n) = (y.nrows() as f64, y.ncols() as f64);
    let p_y = y.norm_squared() / n;
    let xp = ud.transpose() * yo;
    let p_x = xp.norm_squared() / n + mean.norm_squared();
    let signal = p_x - r as f64 / b * p_y;
    let noise = p_y - p_x;
    if noise <= 0.0 || noise <= 1e-14 * p_y {
        return f64::INFINITY;
    }
    if signal <= 0.0 {
        return f64::NEG_INFINITY;
    }
    10.0 * (signal / noise).log10()
}

fn argmax_abs(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, v) in values.enumerate() {
        if v.abs() > best.1 {
            best = (i, v.abs());
        }
    }
    best.0
}

/// Pick `r` columns of `y` (`r x n`) by successive orthogonal projections.
fn select_vertices(y: &DMatrix<f64>, r: usize, seed: u64) -> Result<Vec<usize>> {
    let mut rng = seeded(seed, stream::VCA);
    // orthonormal basis of the current span; starts as the last unit vector
    let mut basis: Vec<DVector<f64>> = {
        let mut e = DVector::zeros(r);
        e[r - 1] = 1.0;
        vec![e]
    };
    let mut chosen: Vec<DVector<f64>> = Vec::with_capacity(r);
    let mut indices = Vec::with_capacity(r);
    for _ in 0..r {
        let w = DVector::from_fn(r, |_, _| StandardNormal.sample(&mut rng));
        let mut f = w;
        for q in &basis {
            let c = q.dot(&f);
            f -= q * c;
        }
        let norm = f.norm();
        if norm < 1e-12 {
            return Err(Error::DegenerateData("random direction collapsed onto the selected span".into()));
        }
        f /= norm;
        let v = f.transpose() * y;
        let idx = argmax_abs(v.iter().copied());
        indices.push(idx);
        chosen.push(y.column(idx).into_owned());
        basis = orthonormalize(&chosen);
    }
    Ok(indices)
}

fn orthonormalize(vectors: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let mut out: Vec<DVector<f64>> = Vec::with_capacity(vectors.len());
    for v in vectors {
        let mut u = v.clone();
        for _ in 0..2 {
            for q in &out {
                let c = q.dot(&u);
                u -= q * c;
            }
        }
        let n = u.norm();
        if n > 1e-12 * v.norm().max(1e-300) {
            out.push(u / n);
        }
    }
    out
}
