//! Non-neural unmixing: FCLS, the per-pixel supervised MLM fit and the
//! unsupervised MLMp block coordinate descent.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hsi::{AbundanceMap, EndmemberMatrix, HsiCube, ProbabilityMap};
use crate::linalg::{dot, project_simplex};
use crate::rng::{seeded, stream};
use crate::vca::{vca_extract, VcaConfig};

/// Largest transition probability the supervised solver may return.
pub const P_MAX_SUPERVISED: f64 = 1.0 - 1e-6;
const GOLDEN_TOL: f64 = 1e-8;
const ARMIJO: f64 = 1e-4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub max_outer: usize,
    pub inner_iters: usize,
    /// Stop when the relative objective decrease falls below this.
    pub tol: f64,
    pub p_min: f64,
    /// Random simplex starts in addition to the FCLS start.
    pub multi_start: usize,
    pub seed: u64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            max_outer: 300,
            inner_iters: 20,
            tol: 1e-10,
            p_min: 0.0,
            multi_start: 5,
            seed: 0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::invalid("solver config", format!("tolerance {} must be positive", self.tol)));
        }
        if !(self.p_min < 1.0) || !self.p_min.is_finite() {
            return Err(Error::invalid("solver config", format!("P lower bound {} must be below 1", self.p_min)));
        }
        if self.max_outer == 0 || self.inner_iters == 0 {
            return Err(Error::invalid("solver config", "iteration counts must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub a: Vec<f64>,
    pub converged: bool,
}

/// Solve the KKT system of the equality-constrained QP restricted to `free`.
fn eqp(g: &DMatrix<f64>, c: &DVector<f64>, free: &[usize]) -> Vec<f64> {
    let k = free.len();
    let mut kkt = DMatrix::zeros(k + 1, k + 1);
    let mut rhs = DVector::zeros(k + 1);
    for (i, &fi) in free.iter().enumerate() {
        for (j, &fj) in free.iter().enumerate() {
            kkt[(i, j)] = g[(fi, fj)];
        }
        kkt[(i, k)] = 1.0;
        kkt[(k, i)] = 1.0;
        rhs[i] = c[fi];
    }
    rhs[k] = 1.0;
    let sol = kkt
        .clone()
        .lu()
        .solve(&rhs)
        .filter(|s| s.iter().all(|v| v.is_finite()))
        .unwrap_or_else(|| {
            kkt.svd(true, true)
                .solve(&rhs, 1e-14)
                .unwrap_or_else(|_| DVector::from_element(k + 1, 1.0 / k as f64))
        });
    let mut s = vec![0.0; g.nrows()];
    for (i, &fi) in free.iter().enumerate() {
        s[fi] = sol[i];
    }
    s
}

/// Minimize `1/2 a'Ga - c'a` over the probability simplex by a primal
/// active-set method, warm started from `warm` when given.
pub fn simplex_qp(g: &DMatrix<f64>, c: &DVector<f64>, warm: Option<&[f64]>) -> QpSolution {
    let r = c.len();
    if r == 1 {
        return QpSolution {
            a: vec![1.0],
            converged: true,
        };
    }
    let mut a = match warm {
        Some(w) => {
            // interior point keeps every coordinate free initially
            let p = project_simplex(w);
            p.iter().map(|v| 0.5 * v + 0.5 / r as f64).collect()
        }
        None => vec![1.0 / r as f64; r],
    };
    let mut free: Vec<usize> = (0..r).collect();
    let max_iter = 20 * r + 50;
    for _ in 0..max_iter {
        let s = eqp(g, c, &free);
        if free.iter().all(|&i| s[i] >= 0.0) {
            a = s;
            let grad: Vec<f64> = (0..r).map(|i| (g.row(i) * DVector::from_column_slice(&a))[0] - c[i]).collect();
            let nu = free.iter().map(|&i| grad[i]).sum::<f64>() / free.len() as f64;
            let scale = 1.0 + grad.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let entering = (0..r)
                .filter(|i| !free.contains(i))
                .map(|i| (i, grad[i] - nu))
                .filter(|&(_, l)| l < -1e-13 * scale)
                .min_by(|x, y| x.1.total_cmp(&y.1));
            match entering {
                None => {
                    return QpSolution {
                        a: a.iter().map(|v| v.max(0.0)).collect(),
                        converged: true,
                    }
                }
                Some((i, _)) => {
                    free.push(i);
                    free.sort_unstable();
                }
            }
        } else {
            let mut alpha = 1.0f64;
            for &i in &free {
                if s[i] < 0.0 {
                    alpha = alpha.min(a[i] / (a[i] - s[i]));
                }
            }
            for i in 0..r {
                a[i] += alpha * (s[i] - a[i]);
            }
            let blocking: Vec<usize> = free
                .iter()
                .copied()
                .filter(|&i| s[i] < 0.0 && a[i] <= 1e-15)
                .collect();
            let drop: Vec<usize> = if blocking.is_empty() {
                // rounding left the blocking coordinate slightly positive
                vec![*free
                    .iter()
                    .filter(|&&i| s[i] < 0.0)
                    .min_by(|&&x, &&y| a[x].total_cmp(&a[y]))
                    .expect("an infeasible EQP solution has a negative coordinate")]
            } else {
                blocking
            };
            for i in drop {
                a[i] = 0.0;
                free.retain(|&f| f != i);
            }
            let sum: f64 = a.iter().sum();
            a.iter_mut().for_each(|v| *v /= sum);
        }
    }
    QpSolution {
        a: project_simplex(&a),
        converged: false,
    }
}

/// Projected-gradient stationarity measure `|a - proj(a - grad)|_inf`; zero
/// exactly at a minimizer over the simplex.
pub fn kkt_residual(a: &[f64], grad: &[f64]) -> f64 {
    let step: Vec<f64> = a.iter().zip(grad).map(|(x, g)| x - g).collect();
    project_simplex(&step)
        .iter()
        .zip(a)
        .map(|(p, x)| (p - x).abs())
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FclsResult {
    pub a: Vec<f64>,
    pub converged: bool,
    pub kkt: f64,
}

fn weighted_normal_equations(e: &EndmemberMatrix, weights: Option<&[f64]>, x: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
    let r = e.count();
    let mut g = DMatrix::zeros(r, r);
    let mut c = DVector::zeros(r);
    for (b, row) in e.data().chunks(r).enumerate() {
        let w = weights.map_or(1.0, |w| w[b]);
        for i in 0..r {
            let mi = w * row[i];
            c[i] += mi * x[b];
            for j in 0..=i {
                g[(i, j)] += mi * w * row[j];
            }
        }
    }
    for i in 0..r {
        for j in 0..i {
            g[(j, i)] = g[(i, j)];
        }
    }
    (g, c)
}

/// Least squares with weighted rows: `min |diag(w) E a - x|^2` over the simplex.
fn weighted_fcls(x: &[f64], e: &EndmemberMatrix, weights: Option<&[f64]>, warm: Option<&[f64]>) -> FclsResult {
    let (g, c) = weighted_normal_equations(e, weights, x);
    let sol = simplex_qp(&g, &c, warm);
    let av = DVector::from_column_slice(&sol.a);
    let grad: Vec<f64> = (2.0 * (&g * &av - &c)).iter().copied().collect();
    FclsResult {
        kkt: kkt_residual(&sol.a, &grad),
        a: sol.a,
        converged: sol.converged,
    }
}

/// Fully constrained least squares: `min |E a - x|^2` with `a` on the simplex.
pub fn fcls(x: &[f64], e: &EndmemberMatrix) -> Result<FclsResult> {
    if x.len() != e.bands() {
        return Err(Error::dim("fcls", format!("{} bands vs endmembers with {}", x.len(), e.bands())));
    }
    Ok(weighted_fcls(x, e, None, None))
}

/// FCLS over every pixel of a cube.
pub fn fcls_unmix(cube: &HsiCube, e: &EndmemberMatrix) -> Result<AbundanceMap> {
    if cube.bands() != e.bands() {
        return Err(Error::dim("fcls_unmix", format!("cube has {} bands, endmembers {}", cube.bands(), e.bands())));
    }
    let rows: Vec<Vec<f64>> = (0..cube.pixels())
        .into_par_iter()
        .map(|i| weighted_fcls(cube.pixel(i), e, None, None).a)
        .collect();
    AbundanceMap::new(cube.height(), cube.width(), e.count(), rows.concat())
}

/// `|x - (1-P) y / (1-P y)|^2`.
pub fn supervised_objective(x: &[f64], y: &[f64], p: f64) -> f64 {
    x.iter()
        .zip(y)
        .map(|(&xb, &yb)| {
            let d = xb - (1.0 - p) * yb / (1.0 - p * yb);
            d * d
        })
        .sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupervisedFit {
    pub a: Vec<f64>,
    pub p: f64,
    pub objective: f64,
    pub converged: bool,
}

fn golden_section(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > tol {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        }
    }
    if f1 <= f2 {
        x1
    } else {
        x2
    }
}

/// Projected Gauss-Newton iterations on `a` with `P` fixed, each followed by
/// an Armijo backtracking line search along the feasible segment.
fn supervised_a_step(x: &[f64], e: &EndmemberMatrix, a: &mut Vec<f64>, p: f64, iters: usize) {
    let b = x.len();
    let mut f = supervised_objective(x, &e.mix_linear(a), p);
    for _ in 0..iters {
        let y = e.mix_linear(a);
        let mut jac = vec![0.0; b];
        let mut target = vec![0.0; b];
        for k in 0..b {
            let den = 1.0 - p * y[k];
            let xh = (1.0 - p) * y[k] / den;
            jac[k] = (1.0 - p) / (den * den);
            // linear model: xh + J (y' - y) ~ x  <=>  J y' ~ x - xh + J y
            target[k] = x[k] - xh + jac[k] * y[k];
        }
        let gn = weighted_fcls(&target, e, Some(&jac), Some(a));
        let dir: Vec<f64> = gn.a.iter().zip(a.iter()).map(|(s, v)| s - v).collect();
        // directional derivative of f along dir
        let ydir = e.mix_linear(&dir);
        let slope: f64 = (0..b)
            .map(|k| {
                let den = 1.0 - p * y[k];
                2.0 * ((1.0 - p) * y[k] / den - x[k]) * jac[k] * ydir[k]
            })
            .sum();
        if !(slope < 0.0) {
            break;
        }
        let mut t = 1.0;
        let mut accepted = None;
        while t > 1e-12 {
            let cand: Vec<f64> = a.iter().zip(&dir).map(|(v, d)| v + t * d).collect();
            let fc = supervised_objective(x, &e.mix_linear(&cand), p);
            if fc <= f + ARMIJO * t * slope {
                accepted = Some((cand, fc));
                break;
            }
            t *= 0.5;
        }
        let Some((cand, fc)) = accepted else { break };
        let done = f - fc <= 1e-15 * f.max(1e-300);
        *a = project_simplex(&cand);
        f = fc;
        if done {
            break;
        }
    }
}

fn supervised_from(x: &[f64], e: &EndmemberMatrix, start: Vec<f64>, p0: f64, cfg: &SolverConfig) -> SupervisedFit {
    let mut a = start;
    let mut p = p0;
    let mut f = supervised_objective(x, &e.mix_linear(&a), p);
    let mut converged = false;
    for _ in 0..cfg.max_outer {
        let prev = f;
        supervised_a_step(x, e, &mut a, p, cfg.inner_iters);
        let y = e.mix_linear(&a);
        let cand = golden_section(|q| supervised_objective(x, &y, q), cfg.p_min, P_MAX_SUPERVISED, GOLDEN_TOL);
        if supervised_objective(x, &y, cand) <= supervised_objective(x, &y, p) {
            p = cand;
        }
        f = supervised_objective(x, &y, p);
        if prev - f <= cfg.tol * prev || f == 0.0 {
            converged = true;
            break;
        }
    }
    SupervisedFit {
        a,
        p,
        objective: f,
        converged,
    }
}

fn random_simplex_point<R: Rng>(r: usize, rng: &mut R) -> Vec<f64> {
    let e: Vec<f64> = (0..r).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

fn solve_supervised_with_stream(x: &[f64], e: &EndmemberMatrix, cfg: &SolverConfig, stream_id: u64) -> SupervisedFit {
    let start = weighted_fcls(x, e, None, None).a;
    let mut best = supervised_from(x, e, start, 0.0, cfg);
    let mut rng = seeded(cfg.seed, stream_id);
    for _ in 0..cfg.multi_start {
        let start = random_simplex_point(e.count(), &mut rng);
        let fit = supervised_from(x, e, start, 0.0, cfg);
        if fit.objective < best.objective {
            best = fit;
        }
    }
    best
}

/// Fit `(a, P)` of one pixel under the exact multilinear model with `E`
/// known. Alternates Gauss-Newton `a`-steps with golden-section `P`-steps,
/// from the FCLS solution and `cfg.multi_start` random simplex points.
pub fn solve_pixel_supervised(x: &[f64], e: &EndmemberMatrix, cfg: &SolverConfig) -> Result<SupervisedFit> {
    cfg.validate()?;
    if x.len() != e.bands() {
        return Err(Error::dim("solve_pixel_supervised", format!("{} bands vs {}", x.len(), e.bands())));
    }
    Ok(solve_supervised_with_stream(x, e, cfg, stream::MULTISTART))
}

#[derive(Debug, Clone)]
pub struct SupervisedMaps {
    pub abundance: AbundanceMap,
    pub p: ProbabilityMap,
    pub objective: Vec<f64>,
    pub unconverged: usize,
}

/// Supervised fit of every pixel; pixel `i` draws its random starts from its
/// own stream, so results do not depend on the thread count.
pub fn unmix_supervised(cube: &HsiCube, e: &EndmemberMatrix, cfg: &SolverConfig) -> Result<SupervisedMaps> {
    cfg.validate()?;
    if cube.bands() != e.bands() {
        return Err(Error::dim("unmix_supervised", format!("cube has {} bands, endmembers {}", cube.bands(), e.bands())));
    }
    let fits: Vec<SupervisedFit> = (0..cube.pixels())
        .into_par_iter()
        .map(|i| solve_supervised_with_stream(cube.pixel(i), e, cfg, ((i as u64) << 4) | stream::MULTISTART))
        .collect();
    let (h, w) = (cube.height(), cube.width());
    Ok(SupervisedMaps {
        abundance: AbundanceMap::new(h, w, e.count(), fits.iter().flat_map(|f| f.a.clone()).collect())?,
        p: ProbabilityMap::new(h, w, fits.iter().map(|f| f.p).collect())?,
        objective: fits.iter().map(|f| f.objective).collect(),
        unconverged: fits.iter().filter(|f| !f.converged).count(),
    })
}

/// Closed-form minimizer over `P` of `|(1-P) y + P y.x - x|^2`, clipped to
/// `[p_min, 1]`. Returns 0 when `y.x = y` on every band.
pub fn mlmp_p_step(x: &[f64], y: &[f64], p_min: f64) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (&xb, &yb) in x.iter().zip(y) {
        let z = yb * xb - yb;
        num += (xb - yb) * z;
        den += z * z;
    }
    if den == 0.0 {
        return 0.0;
    }
    (num / den).clamp(p_min, 1.0)
}

/// Per-pixel residual energy `|(1-P) y + P y.x - x|^2`.
pub fn mlmp_pixel_objective(x: &[f64], y: &[f64], p: f64) -> f64 {
    x.iter()
        .zip(y)
        .map(|(&xb, &yb)| {
            let d = (1.0 - p) * yb + p * yb * xb - xb;
            d * d
        })
        .sum()
}

#[derive(Debug, Clone)]
pub struct MlmpResult {
    pub endmembers: EndmemberMatrix,
    pub abundance: AbundanceMap,
    pub p: ProbabilityMap,
    /// Objective at the start and after every outer iteration.
    pub trace: Vec<f64>,
    pub converged: bool,
}

struct MlmpState {
    e: EndmemberMatrix,
    a: Vec<Vec<f64>>,
    p: Vec<f64>,
}

fn pixel_weights(x: &[f64], p: f64) -> Vec<f64> {
    x.iter().map(|&xb| (1.0 - p) + p * xb).collect()
}

fn mlmp_objective_terms(cube: &HsiCube, s: &MlmpState) -> Vec<f64> {
    (0..cube.pixels())
        .into_par_iter()
        .map(|i| mlmp_pixel_objective(cube.pixel(i), &s.e.mix_linear(&s.a[i]), s.p[i]))
        .collect()
}

fn total(terms: &[f64]) -> f64 {
    terms.iter().sum()
}

/// Projected gradient on each band's row of `E` (the objective separates over
/// bands), step `1/L` with `L` the row Hessian's largest eigenvalue.
fn mlmp_e_step(cube: &HsiCube, s: &MlmpState, iters: usize) -> Result<EndmemberMatrix> {
    let (b, r, n) = (cube.bands(), s.e.count(), cube.pixels());
    let rows: Vec<Vec<f64>> = (0..b)
        .into_par_iter()
        .map(|band| {
            let mut h = DMatrix::<f64>::zeros(r, r);
            let mut g = DVector::<f64>::zeros(r);
            for i in 0..n {
                let x = cube.pixel(i)[band];
                let d = (1.0 - s.p[i]) + s.p[i] * x;
                let a = &s.a[i];
                for k in 0..r {
                    g[k] += d * x * a[k];
                    for l in 0..=k {
                        h[(k, l)] += d * d * a[k] * a[l];
                    }
                }
            }
            for k in 0..r {
                for l in 0..k {
                    h[(l, k)] = h[(k, l)];
                }
            }
            let lmax = h.clone().symmetric_eigenvalues().iter().copied().fold(0.0, f64::max);
            let mut e: Vec<f64> = (0..r).map(|k| s.e.get(band, k)).collect();
            if lmax <= 0.0 {
                return e;
            }
            for _ in 0..iters {
                let ev = DVector::from_column_slice(&e);
                let grad = &h * &ev - &g;
                for k in 0..r {
                    e[k] = (e[k] - grad[k] / lmax).clamp(0.0, 1.0);
                }
            }
            e
        })
        .collect();
    EndmemberMatrix::new(b, r, rows.concat())
}

/// Unsupervised MLMp: cyclic per-pixel abundance and `P` updates and a global
/// endmember update on the objective `sum_j |(1-P_j) y_j + P_j y_j.x_j - x_j|^2`.
/// Every block is only accepted if it does not increase the objective, so the
/// trace is non-increasing. `e_init` defaults to VCA.
pub fn mlmp_unmix(
    cube: &HsiCube,
    endmembers: usize,
    e_init: Option<&EndmemberMatrix>,
    cfg: &SolverConfig,
    fix_endmembers: bool,
) -> Result<MlmpResult> {
    cfg.validate()?;
    let e = match e_init {
        Some(e) => {
            if e.bands() != cube.bands() || e.count() != endmembers {
                return Err(Error::dim(
                    "mlmp_unmix",
                    format!("initial endmembers {}x{}, expected {}x{endmembers}", e.bands(), e.count(), cube.bands()),
                ));
            }
            e.clone()
        }
        None => vca_extract(cube, &VcaConfig::new(endmembers, cfg.seed))?,
    };
    let n = cube.pixels();
    let a: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| weighted_fcls(cube.pixel(i), &e, None, None).a)
        .collect();
    let mut s = MlmpState {
        e,
        a,
        p: vec![0.0f64.max(cfg.p_min); n],
    };
    let mut terms = mlmp_objective_terms(cube, &s);
    let mut trace = vec![total(&terms)];
    let mut converged = false;

    for _ in 0..cfg.max_outer {
        let before = *trace.last().unwrap();

        // abundance block
        let updates: Vec<(Vec<f64>, f64)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let x = cube.pixel(i);
                let w = pixel_weights(x, s.p[i]);
                let cand = weighted_fcls(x, &s.e, Some(&w), Some(&s.a[i])).a;
                let f = mlmp_pixel_objective(x, &s.e.mix_linear(&cand), s.p[i]);
                if f <= terms[i] {
                    (cand, f)
                } else {
                    (s.a[i].clone(), terms[i])
                }
            })
            .collect();
        for (i, (ai, f)) in updates.into_iter().enumerate() {
            s.a[i] = ai;
            terms[i] = f;
        }

        // transition probability block
        let updates: Vec<(f64, f64)> = (0..n)
            .into_par_iter()
            .map(|i| {
                let x = cube.pixel(i);
                let y = s.e.mix_linear(&s.a[i]);
                let cand = mlmp_p_step(x, &y, cfg.p_min);
                let f = mlmp_pixel_objective(x, &y, cand);
                if f <= terms[i] {
                    (cand, f)
                } else {
                    (s.p[i], terms[i])
                }
            })
            .collect();
        for (i, (pi, f)) in updates.into_iter().enumerate() {
            s.p[i] = pi;
            terms[i] = f;
        }

        // endmember block
        if !fix_endmembers {
            if let Ok(cand) = mlmp_e_step(cube, &s, cfg.inner_iters) {
                let old = std::mem::replace(&mut s.e, cand);
                let cand_terms = mlmp_objective_terms(cube, &s);
                if total(&cand_terms) <= total(&terms) {
                    terms = cand_terms;
                } else {
                    s.e = old;
                }
            }
        }

        let f = total(&terms);
        trace.push(f);
        if before - f <= cfg.tol * before {
            converged = true;
            break;
        }
    }

    let (h, w) = (cube.height(), cube.width());
    Ok(MlmpResult {
        abundance: AbundanceMap::new(h, w, endmembers, s.a.concat())?,
        p: ProbabilityMap::new(h, w, s.p)?,
        endmembers: s.e,
        trace,
        converged,
    })
}

/// Objective of a solution, for checking traces independently.
pub fn mlmp_objective(cube: &HsiCube, e: &EndmemberMatrix, a: &AbundanceMap, p: &ProbabilityMap) -> f64 {
    (0..cube.pixels())
        .map(|i| mlmp_pixel_objective(cube.pixel(i), &e.mix_linear(a.pixel(i)), p.get(i)))
        .sum()
}

/// Mean squared deviation helper for tests and reports.
pub fn rms(values: &[f64]) -> f64 {
    (dot(values, values) / values.len() as f64).sqrt()
}
