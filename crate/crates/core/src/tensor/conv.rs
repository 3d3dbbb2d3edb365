//! Valid (unpadded, stride 1) cross-correlation over up to three trailing axes,
//! lowered to im2col + gemm in sample chunks.

use super::gemm::{gemm, MatRef};

/// Column-buffer budget per chunk, in elements.
const COLUMN_BUDGET: usize = 1 << 21;

/// Geometry of one valid convolution. The three extents are
/// `(spatial_h, spatial_w, spectral)`; a 1-D convolution uses `1, 1, L`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub in_channels: usize,
    pub out_channels: usize,
    pub input: [usize; 3],
    pub kernel: [usize; 3],
}

impl ConvGeometry {
    pub fn output(&self) -> [usize; 3] {
        [
            self.input[0] + 1 - self.kernel[0],
            self.input[1] + 1 - self.kernel[1],
            self.input[2] + 1 - self.kernel[2],
        ]
    }

    pub fn fits(&self) -> bool {
        (0..3).all(|i| self.kernel[i] >= 1 && self.input[i] >= self.kernel[i])
    }

    fn patch_len(&self) -> usize {
        self.in_channels * self.kernel.iter().product::<usize>()
    }

    fn out_positions(&self) -> usize {
        self.output().iter().product()
    }

    fn in_len(&self) -> usize {
        self.in_channels * self.input.iter().product::<usize>()
    }

    fn chunk(&self, batch: usize) -> usize {
        let per_sample = (self.patch_len() * self.out_positions()).max(1);
        (COLUMN_BUDGET / per_sample).clamp(1, batch.max(1))
    }

    /// Fill `cols` (`patch_len x (n * out_positions)`) for samples `[s0, s0 + n)`.
    fn im2col(&self, input: &[f64], s0: usize, n: usize, cols: &mut [f64]) {
        let [d1, d2, d3] = self.input;
        let [k1, k2, k3] = self.kernel;
        let [o1, o2, o3] = self.output();
        let q = self.out_positions();
        let width = n * q;
        let in_len = self.in_len();
        let mut p = 0;
        for ci in 0..self.in_channels {
            for a in 0..k1 {
                for b in 0..k2 {
                    for c in 0..k3 {
                        let row = &mut cols[p * width..(p + 1) * width];
                        for s in 0..n {
                            let x = &input[(s0 + s) * in_len + ci * d1 * d2 * d3..];
                            let dst = &mut row[s * q..(s + 1) * q];
                            let mut w = 0;
                            for i in 0..o1 {
                                for j in 0..o2 {
                                    let src = ((i + a) * d2 + (j + b)) * d3 + c;
                                    dst[w..w + o3].copy_from_slice(&x[src..src + o3]);
                                    w += o3;
                                }
                            }
                        }
                        p += 1;
                    }
                }
            }
        }
    }

    /// Scatter-add a column buffer back onto the input layout.
    fn col2im(&self, cols: &[f64], s0: usize, n: usize, grad: &mut [f64]) {
        let [d1, d2, d3] = self.input;
        let [k1, k2, k3] = self.kernel;
        let [o1, o2, o3] = self.output();
        let q = self.out_positions();
        let width = n * q;
        let in_len = self.in_len();
        let mut p = 0;
        for ci in 0..self.in_channels {
            for a in 0..k1 {
                for b in 0..k2 {
                    for c in 0..k3 {
                        let row = &cols[p * width..(p + 1) * width];
                        for s in 0..n {
                            let g = &mut grad[(s0 + s) * in_len + ci * d1 * d2 * d3..];
                            let src = &row[s * q..(s + 1) * q];
                            let mut w = 0;
                            for i in 0..o1 {
                                for j in 0..o2 {
                                    let dst = ((i + a) * d2 + (j + b)) * d3 + c;
                                    for (gv, sv) in g[dst..dst + o3].iter_mut().zip(&src[w..w + o3]) {
                                        *gv += sv;
                                    }
                                    w += o3;
                                }
                            }
                        }
                        p += 1;
                    }
                }
            }
        }
    }

    /// Output layout `[batch, out_channels, o1, o2, o3]`.
    pub(crate) fn forward(&self, input: &[f64], weights: &[f64], batch: usize) -> Vec<f64> {
        let p = self.patch_len();
        let q = self.out_positions();
        let co = self.out_channels;
        let mut out = vec![0.0; batch * co * q];
        let chunk = self.chunk(batch);
        let mut cols = vec![0.0; p * chunk * q];
        let mut tmp = vec![0.0; co * chunk * q];
        let mut s0 = 0;
        while s0 < batch {
            let n = chunk.min(batch - s0);
            let width = n * q;
            self.im2col(input, s0, n, &mut cols[..p * width]);
            gemm(
                1.0,
                MatRef::row_major(weights, co, p),
                MatRef::row_major(&cols[..p * width], p, width),
                0.0,
                &mut tmp[..co * width],
            );
            for s in 0..n {
                for c in 0..co {
                    let dst = ((s0 + s) * co + c) * q;
                    out[dst..dst + q].copy_from_slice(&tmp[c * width + s * q..c * width + (s + 1) * q]);
                }
            }
            s0 += n;
        }
        out
    }

    /// Returns the kernel gradient and, when requested, the input gradient.
    pub(crate) fn backward(
        &self,
        input: &[f64],
        weights: &[f64],
        grad_out: &[f64],
        batch: usize,
        want_input: bool,
    ) -> (Vec<f64>, Option<Vec<f64>>) {
        let p = self.patch_len();
        let q = self.out_positions();
        let co = self.out_channels;
        let mut dw = vec![0.0; co * p];
        let mut dx = want_input.then(|| vec![0.0; batch * self.in_len()]);
        let chunk = self.chunk(batch);
        let mut cols = vec![0.0; p * chunk * q];
        let mut dtmp = vec![0.0; co * chunk * q];
        let mut s0 = 0;
        while s0 < batch {
            let n = chunk.min(batch - s0);
            let width = n * q;
            for s in 0..n {
                for c in 0..co {
                    let src = ((s0 + s) * co + c) * q;
                    dtmp[c * width + s * q..c * width + (s + 1) * q]
                        .copy_from_slice(&grad_out[src..src + q]);
                }
            }
            self.im2col(input, s0, n, &mut cols[..p * width]);
            gemm(
                1.0,
                MatRef::row_major(&dtmp[..co * width], co, width),
                MatRef::transposed(&cols[..p * width], p, width),
                1.0,
                &mut dw,
            );
            if let Some(dx) = dx.as_mut() {
                gemm(
                    1.0,
                    MatRef::transposed(weights, co, p),
                    MatRef::row_major(&dtmp[..co * width], co, width),
                    0.0,
                    &mut cols[..p * width],
                );
                self.col2im(&cols[..p * width], s0, n, dx);
            }
            s0 += n;
        }
        (dw, dx)
    }
}
