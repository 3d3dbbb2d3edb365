//! Cubes, endmember libraries and per-pixel maps.
//!
//! All pixel-indexed containers store pixels in row-major `(row, col)` order
//! with the per-pixel vector contiguous, so `pixel(i)` is a plain slice.

use crate::error::{Error, Result};

/// Tolerance for the abundance non-negativity and sum-to-one checks.
pub const SIMPLEX_TOL: f64 = 1e-6;

/// `height x width x bands` reflectance cube.
#[derive(Debug, Clone, PartialEq)]
pub struct HsiCube {
    height: usize,
    width: usize,
    bands: usize,
    data: Vec<f64>,
    wavelengths: Option<Vec<f64>>,
}

impl HsiCube {
    /// `data` is pixel-interleaved: `data[(r * width + c) * bands + b]`.
    pub fn new(height: usize, width: usize, bands: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || bands == 0 {
            return Err(Error::invalid(
                "cube",
                format!("extents must be positive, got {height}x{width}x{bands}"),
            ));
        }
        if data.len() != height * width * bands {
            return Err(Error::invalid(
                "cube",
                format!("{} values for {height}x{width}x{bands}", data.len()),
            ));
        }
        Ok(HsiCube {
            height,
            width,
            bands,
            data,
            wavelengths: None,
        })
    }

    pub fn with_wavelengths(mut self, wavelengths: Vec<f64>) -> Result<Self> {
        if wavelengths.len() != self.bands {
            return Err(Error::invalid(
                "wavelengths",
                format!("{} entries for {} bands", wavelengths.len(), self.bands),
            ));
        }
        if wavelengths.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("wavelengths", "must be strictly increasing"));
        }
        self.wavelengths = Some(wavelengths);
        Ok(self)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn wavelengths(&self) -> Option<&[f64]> {
        self.wavelengths.as_deref()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn pixel(&self, i: usize) -> &[f64] {
        &self.data[i * self.bands..(i + 1) * self.bands]
    }

    pub fn pixel_at(&self, row: usize, col: usize) -> &[f64] {
        self.pixel(row * self.width + col)
    }

    pub fn iter_pixels(&self) -> std::slice::Chunks<'_, f64> {
        self.data.chunks(self.bands)
    }
}

/// `bands x count` matrix of endmember signatures, entries in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EndmemberMatrix {
    bands: usize,
    count: usize,
    /// Row-major: `data[b * count + j]`.
    data: Vec<f64>,
}

impl EndmemberMatrix {
    /// Row-major `bands x count` data; rejects entries outside `[0, 1]` and
    /// all-zero columns.
    pub fn new(bands: usize, count: usize, data: Vec<f64>) -> Result<Self> {
        if bands == 0 || count == 0 {
            return Err(Error::invalid("endmembers", format!("shape {bands}x{count}")));
        }
        if data.len() != bands * count {
            return Err(Error::invalid(
                "endmembers",
                format!("{} values for {bands}x{count}", data.len()),
            ));
        }
        if let Some((i, v)) = data.iter().enumerate().find(|(_, v)| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(
                "endmembers",
                format!("value {v} at band {}, endmember {} outside [0, 1]", i / count, i % count),
            ));
        }
        let m = EndmemberMatrix { bands, count, data };
        if let Some(j) = (0..count).find(|&j| m.column(j).iter().all(|&v| v == 0.0)) {
            return Err(Error::invalid("endmembers", format!("column {j} is all zero")));
        }
        Ok(m)
    }

    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let count = columns.len();
        let bands = columns.first().map_or(0, Vec::len);
        if columns.iter().any(|c| c.len() != bands) {
            return Err(Error::invalid("endmembers", "ragged columns"));
        }
        let mut data = vec![0.0; bands * count];
        for (j, col) in columns.iter().enumerate() {
            for (b, v) in col.iter().enumerate() {
                data[b * count + j] = *v;
            }
        }
        Self::new(bands, count, data)
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, band: usize, j: usize) -> f64 {
        self.data[band * self.count + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.bands).map(|b| self.get(b, j)).collect()
    }

    pub fn columns(&self) -> Vec<Vec<f64>> {
        (0..self.count).map(|j| self.column(j)).collect()
    }

    /// `y = E a`.
    pub fn mix_linear(&self, a: &[f64]) -> Vec<f64> {
        debug_assert_eq!(a.len(), self.count);
        self.data
            .chunks(self.count)
            .map(|row| row.iter().zip(a).map(|(e, w)| e * w).sum())
            .collect()
    }

    /// Reorder columns so that output column `i` is input column `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let cols: Vec<Vec<f64>> = perm.iter().map(|&j| self.column(j)).collect();
        Self::from_columns(&cols).expect("permutation of a valid matrix")
    }
}

/// Per-pixel abundance fractions, `height x width x count`, on the simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct AbundanceMap {
    height: usize,
    width: usize,
    count: usize,
    data: Vec<f64>,
}

impl AbundanceMap {
    /// Validates non-negativity and sum-to-one of every pixel within
    /// [`SIMPLEX_TOL`].
    pub fn new(height: usize, width: usize, count: usize, data: Vec<f64>) -> Result<Self> {
        let m = Self::unchecked(height, width, count, data)?;
        for (i, a) in m.data.chunks(count).enumerate() {
            let sum: f64 = a.iter().sum();
            if a.iter().any(|&v| !(v >= -SIMPLEX_TOL)) || !((sum - 1.0).abs() <= SIMPLEX_TOL) {
                return Err(Error::invalid(
                    "abundance map",
                    format!("pixel {i} violates the simplex: {a:?}"),
                ));
            }
        }
        Ok(m)
    }

    /// Shape checks only; for raw fractions that are not (yet) normalized.
    pub fn unchecked(height: usize, width: usize, count: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || count == 0 || data.len() != height * width * count {
            return Err(Error::invalid(
                "abundance map",
                format!("{} values for {height}x{width}x{count}", data.len()),
            ));
        }
        Ok(AbundanceMap {
            height,
            width,
            count,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, i: usize) -> &[f64] {
        &self.data[i * self.count..(i + 1) * self.count]
    }

    /// Plane of endmember `k` in row-major pixel order.
    pub fn plane(&self, k: usize) -> Vec<f64> {
        self.data.chunks(self.count).map(|a| a[k]).collect()
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        let data = self
            .data
            .chunks(self.count)
            .flat_map(|a| perm.iter().map(move |&j| a[j]))
            .collect();
        AbundanceMap {
            data,
            count: perm.len(),
            ..*self
        }
    }
}

/// Per-pixel transition probability `P`, `height x width`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl ProbabilityMap {
    /// Validates finiteness and `P <= 1`; the lower bound is solver-specific.
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || data.len() != height * width {
            return Err(Error::invalid(
                "probability map",
                format!("{} values for {height}x{width}", data.len()),
            ));
        }
        if let Some((i, v)) = data.iter().enumerate().find(|(_, v)| !(**v <= 1.0) || !v.is_finite()) {
            return Err(Error::invalid("probability map", format!("pixel {i} has P = {v}")));
        }
        Ok(ProbabilityMap { height, width, data })
    }

    /// Like [`ProbabilityMap::new`] but additionally requires `P >= 0`.
    pub fn new_unit(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        let m = Self::new(height, width, data)?;
        if let Some((i, v)) = m.data.iter().enumerate().find(|(_, v)| **v < 0.0) {
            return Err(Error::invalid("probability map", format!("pixel {i} has P = {v} < 0")));
        }
        Ok(m)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, i: usize) -> f64 {
        self.data[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cube_validation() {
        assert!(HsiCube::new(2, 2, 0, vec![]).is_err());
        assert!(HsiCube::new(2, 2, 3, vec![0.0; 11]).is_err());
        let c = HsiCube::new(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(c.pixel(1), &[3.0, 4.0]);
        assert!(c.clone().with_wavelengths(vec![400.0, 400.0]).is_err());
        assert!(c.with_wavelengths(vec![400.0, 410.0]).is_ok());
    }

    #[test]
    fn endmember_validation() {
        assert!(EndmemberMatrix::new(2, 1, vec![0.5, 1.2]).is_err());
        assert!(EndmemberMatrix::new(2, 2, vec![0.5, 0.0, 0.5, 0.0]).is_err());
        let e = EndmemberMatrix::new(2, 2, vec![0.8, 0.2, 0.4, 0.6]).unwrap();
        assert_eq!(e.column(1), vec![0.2, 0.6]);
        assert_eq!(e.mix_linear(&[0.5, 0.5]), vec![0.5, 0.5]);
        assert_eq!(e.permuted(&[1, 0]).column(0), vec![0.2, 0.6]);
    }

    #[test]
    fn abundance_validation() {
        assert!(AbundanceMap::new(1, 1, 2, vec![0.5, 0.5]).is_ok());
        assert!(AbundanceMap::new(1, 1, 2, vec![0.5, 0.6]).is_err());
        assert!(AbundanceMap::new(1, 1, 2, vec![1.1, -0.1]).is_err());
        assert!(AbundanceMap::new(1, 1, 2, vec![0.5 + 5e-7, 0.5]).is_ok());
    }

    #[test]
    fn probability_validation() {
        assert!(ProbabilityMap::new(1, 2, vec![-0.5, 1.0]).is_ok());
        assert!(ProbabilityMap::new(1, 2, vec![0.5, 1.5]).is_err());
        assert!(ProbabilityMap::new_unit(1, 2, vec![-0.5, 1.0]).is_err());
    }
}
