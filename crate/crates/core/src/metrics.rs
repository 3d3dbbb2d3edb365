//! Evaluation metrics with endmember alignment.
//!
//! Permutations map ground-truth column `i` to estimate column `perm[i]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hsi::{AbundanceMap, EndmemberMatrix, HsiCube, ProbabilityMap};
use crate::linalg::sad;

/// Largest endmember count handled by the exhaustive matcher.
pub const MAX_MATCH_ENDMEMBERS: usize = 8;

fn column_sad(a: &[f64], b: &[f64], what: &'static str) -> Result<f64> {
    sad(a, b).ok_or_else(|| Error::domain(what, "zero-norm spectrum"))
}

/// Calls `visit` with every permutation of `0..n` in lexicographic order.
fn for_each_permutation(n: usize, mut visit: impl FnMut(&[usize])) {
    let mut p: Vec<usize> = (0..n).collect();
    loop {
        visit(&p);
        // next lexicographic permutation
        let Some(i) = (1..n).rev().find(|&i| p[i - 1] < p[i]) else {
            return;
        };
        let j = (i..n).rev().find(|&j| p[j] > p[i - 1]).unwrap();
        p.swap(i - 1, j);
        p[i..].reverse();
    }
}

/// Exhaustive minimum-total-SAD matching; the lexicographically first
/// optimum wins ties.
pub fn match_endmembers(estimate: &EndmemberMatrix, truth: &EndmemberMatrix) -> Result<Vec<usize>> {
    if estimate.bands() != truth.bands() || estimate.count() != truth.count() {
        return Err(Error::dim(
            "match_endmembers",
            format!(
                "estimate {}x{}, truth {}x{}",
                estimate.bands(),
                estimate.count(),
                truth.bands(),
                truth.count()
            ),
        ));
    }
    let r = truth.count();
    if r > MAX_MATCH_ENDMEMBERS {
        return Err(Error::Unsupported(format!(
            "exhaustive matching is capped at R = {MAX_MATCH_ENDMEMBERS} (got {r}); a Hungarian matcher is not implemented"
        )));
    }
    let (est, gt) = (estimate.columns(), truth.columns());
    let mut cost = vec![0.0; r * r];
    for i in 0..r {
        for j in 0..r {
            cost[i * r + j] = column_sad(&gt[i], &est[j], "match_endmembers")?;
        }
    }
    let mut best = (f64::INFINITY, Vec::new());
    for_each_permutation(r, |p| {
        let total: f64 = p.iter().enumerate().map(|(i, &j)| cost[i * r + j]).sum();
        if total < best.0 {
            best = (total, p.to_vec());
        }
    });
    Ok(best.1)
}

fn check_perm(perm: &[usize], r: usize) -> Result<()> {
    let mut seen = vec![false; r];
    if perm.len() != r || perm.iter().any(|&j| j >= r || std::mem::replace(&mut seen[j], true)) {
        return Err(Error::invalid("permutation", format!("{perm:?} is not a permutation of 0..{r}")));
    }
    Ok(())
}

/// SAD of each ground-truth endmember against its matched estimate.
pub fn per_endmember_sad(estimate: &EndmemberMatrix, truth: &EndmemberMatrix, perm: &[usize]) -> Result<Vec<f64>> {
    if estimate.bands() != truth.bands() || estimate.count() != truth.count() {
        return Err(Error::dim("sad_endmembers", "endmember shapes differ"));
    }
    check_perm(perm, truth.count())?;
    perm.iter()
        .enumerate()
        .map(|(i, &j)| column_sad(&truth.column(i), &estimate.column(j), "sad_endmembers"))
        .collect()
}

/// Mean matched endmember SAD in radians.
pub fn sad_endmembers(estimate: &EndmemberMatrix, truth: &EndmemberMatrix, perm: &[usize]) -> Result<f64> {
    let s = per_endmember_sad(estimate, truth, perm)?;
    Ok(s.iter().sum::<f64>() / s.len() as f64)
}

/// `sqrt(1/(N R) sum |a_i - a_hat_i|^2)` with the estimate's channels permuted.
pub fn rmse_abundance(estimate: &AbundanceMap, truth: &AbundanceMap, perm: &[usize]) -> Result<f64> {
    if (estimate.height(), estimate.width(), estimate.count()) != (truth.height(), truth.width(), truth.count()) {
        return Err(Error::dim("rmse_abundance", "abundance map shapes differ"));
    }
    let r = truth.count();
    check_perm(perm, r)?;
    let mut acc = 0.0;
    for i in 0..truth.pixels() {
        let (t, e) = (truth.pixel(i), estimate.pixel(i));
        for k in 0..r {
            acc += (t[k] - e[perm[k]]).powi(2);
        }
    }
    Ok((acc / (truth.pixels() * r) as f64).sqrt())
}

pub fn rmse_p(estimate: &ProbabilityMap, truth: &ProbabilityMap) -> Result<f64> {
    if (estimate.height(), estimate.width()) != (truth.height(), truth.width()) {
        return Err(Error::dim("rmse_p", "probability map shapes differ"));
    }
    let acc: f64 = estimate.data().iter().zip(truth.data()).map(|(a, b)| (a - b).powi(2)).sum();
    Ok((acc / truth.pixels() as f64).sqrt())
}

/// Mean per-pixel SAD between observed and reconstructed cubes.
pub fn sad_pixels(observed: &HsiCube, reconstructed: &HsiCube) -> Result<f64> {
    if (observed.height(), observed.width(), observed.bands())
        != (reconstructed.height(), reconstructed.width(), reconstructed.bands())
    {
        return Err(Error::dim("sad_pixels", "cube shapes differ"));
    }
    let mut acc = 0.0;
    for i in 0..observed.pixels() {
        acc += column_sad(observed.pixel(i), reconstructed.pixel(i), "sad_pixels")?;
    }
    Ok(acc / observed.pixels() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub permutation: Vec<usize>,
    pub sad_endmembers: f64,
    pub per_endmember_sad: Vec<f64>,
    pub rmse_abundance: f64,
    pub rmse_p: Option<f64>,
    pub sad_pixels: Option<f64>,
}

/// Ground truth and estimates for one run. Missing pieces skip their metric.
pub struct EvalInputs<'a> {
    pub truth_endmembers: &'a EndmemberMatrix,
    pub truth_abundance: &'a AbundanceMap,
    pub truth_p: Option<&'a ProbabilityMap>,
    pub endmembers: &'a EndmemberMatrix,
    pub abundance: &'a AbundanceMap,
    pub p: Option<&'a ProbabilityMap>,
    pub observed: Option<&'a HsiCube>,
    pub reconstructed: Option<&'a HsiCube>,
}

pub fn evaluate(inp: &EvalInputs<'_>) -> Result<EvalReport> {
    let perm = match_endmembers(inp.endmembers, inp.truth_endmembers)?;
    let per = per_endmember_sad(inp.endmembers, inp.truth_endmembers, &perm)?;
    let rmse_p = match (inp.p, inp.truth_p) {
        (Some(p), Some(t)) => Some(rmse_p(p, t)?),
        _ => None,
    };
    let sad_px = match (inp.observed, inp.reconstructed) {
        (Some(x), Some(xh)) => Some(sad_pixels(x, xh)?),
        _ => None,
    };
    Ok(EvalReport {
        sad_endmembers: per.iter().sum::<f64>() / per.len() as f64,
        rmse_abundance: rmse_abundance(inp.abundance, inp.truth_abundance, &perm)?,
        per_endmember_sad: per,
        permutation: perm,
        rmse_p,
        sad_pixels: sad_px,
    })
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "method,seed,snr_db,sad_endmembers,rmse_abundance,rmse_p,sad_pixels";

    /// One metrics CSV row; absent values are left empty.
    pub fn csv_row(&self, method: &str, seed: u64, snr_db: Option<f64>) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        format!(
            "{method},{seed},{},{},{},{},{}",
            opt(snr_db),
            self.sad_endmembers,
            self.rmse_abundance,
            opt(self.rmse_p),
            opt(self.sad_pixels)
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_4;

    fn e3() -> EndmemberMatrix {
        EndmemberMatrix::from_columns(&[vec![1.0, 0.0, 0.2], vec![0.1, 0.9, 0.3], vec![0.5, 0.5, 0.9]]).unwrap()
    }

    #[test]
    fn permutations_are_lexicographic() {
        let mut seen = Vec::new();
        for_each_permutation(3, |p| seen.push(p.to_vec()));
        assert_eq!(seen.len(), 6);
        assert_eq!(seen[0], vec![0, 1, 2]);
        assert_eq!(seen[1], vec![0, 2, 1]);
        assert_eq!(seen[5], vec![2, 1, 0]);
    }

    #[test]
    fn matching_recovers_swaps() {
        let e = e3();
        assert_eq!(match_endmembers(&e, &e).unwrap(), vec![0, 1, 2]);
        let swapped = e.permuted(&[2, 0, 1]);
        let perm = match_endmembers(&swapped, &e).unwrap();
        assert_eq!(perm, vec![1, 2, 0]);
        assert!(sad_endmembers(&swapped, &e, &perm).unwrap() < 5e-4);
    }

    #[test]
    fn matching_is_capped() {
        let cols: Vec<Vec<f64>> = (0..9).map(|j| (0..9).map(|b| if b == j { 1.0 } else { 0.1 }).collect()).collect();
        let e = EndmemberMatrix::from_columns(&cols).unwrap();
        assert!(matches!(match_endmembers(&e, &e), Err(Error::Unsupported(_))));
    }

    #[test]
    fn orthogonal_pair_gives_quarter_pi() {
        let t = EndmemberMatrix::from_columns(&[vec![1.0, 0.0], vec![0.5, 0.5]]).unwrap();
        let e = EndmemberMatrix::from_columns(&[vec![0.0, 1.0], vec![0.5, 0.5]]).unwrap();
        let s = sad_endmembers(&e, &t, &[0, 1]).unwrap();
        // acos near 1 loses half the digits
        assert!((s - FRAC_PI_4).abs() < 1e-7);
    }

    #[test]
    fn abundance_and_p_rmse() {
        let n = 10;
        let truth = AbundanceMap::new(2, 5, 4, vec![0.25; n * 4]).unwrap();
        let data: Vec<f64> = (0..n).flat_map(|_| [0.35, 0.25, 0.25, 0.25]).collect();
        let shifted = AbundanceMap::unchecked(2, 5, 4, data).unwrap();
        let r = rmse_abundance(&shifted, &truth, &[0, 1, 2, 3]).unwrap();
        assert!((r - 0.05).abs() < 1e-12);
        assert_eq!(rmse_abundance(&truth, &truth, &[0, 1, 2, 3]).unwrap(), 0.0);
        assert!(rmse_abundance(&truth, &truth, &[0, 0, 2, 3]).is_err());

        let p = ProbabilityMap::new(2, 5, vec![0.2; 10]).unwrap();
        let q = ProbabilityMap::new(2, 5, vec![0.3; 10]).unwrap();
        assert!((rmse_p(&q, &p).unwrap() - 0.1).abs() < 1e-12);
        assert_eq!(rmse_p(&q, &p).unwrap(), rmse_p(&p, &q).unwrap());
    }

    #[test]
    fn pixel_sad_is_scale_invariant() {
        let x = HsiCube::new(1, 2, 3, vec![0.1, 0.2, 0.3, 0.5, 0.1, 0.4]).unwrap();
        let x2 = HsiCube::new(1, 2, 3, x.data().iter().map(|v| 2.0 * v).collect()).unwrap();
        assert!(sad_pixels(&x, &x).unwrap() < 5e-4);
        assert!(sad_pixels(&x, &x2).unwrap() < 5e-4);
        let z = HsiCube::new(1, 2, 3, vec![0.0; 6]).unwrap();
        assert!(matches!(sad_pixels(&x, &z), Err(Error::Domain { .. })));
    }

    #[test]
    fn report_row() {
        let e = e3();
        let a = AbundanceMap::new(1, 1, 3, vec![0.2, 0.3, 0.5]).unwrap();
        let rep = evaluate(&EvalInputs {
            truth_endmembers: &e,
            truth_abundance: &a,
            truth_p: None,
            endmembers: &e,
            abundance: &a,
            p: None,
            observed: None,
            reconstructed: None,
        })
        .unwrap();
        assert_eq!(rep.csv_row("fcls", 3, Some(30.0)), "fcls,3,30,0,0,,");
    }
}
