use super::conv::ConvGeometry;
use super::gemm::{gemm, MatRef};
use super::Tensor;
use crate::error::{Error, Result};

/// Cosine arguments are clamped into this band before `acos`.
pub const SAD_COS_CLAMP: f64 = 1.0 - 1e-7;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    LeakyRelu { slope: f64 },
    Tanh,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Dense { input: Var, weights: Var },
    Conv { input: Var, kernels: Var, geom: ConvGeometry, batch: usize },
    MaxPool { input: Var, argmax: Vec<usize> },
    LeakyRelu { input: Var, slope: f64 },
    Tanh { input: Var },
    Softmax { input: Var },
    Hadamard { a: Var, b: Var },
    GuardedDiv { num: Var, den: Var, floor: f64 },
    Concat { a: Var, b: Var },
    Add { a: Var, b: Var },
    Affine { input: Var, scale: f64 },
    ScaleRows { input: Var, factor: Var },
    Column { input: Var, index: usize },
    Reshape { input: Var },
    SadLoss { x: Var, xhat: Var, rows: Vec<SadRow> },
}

#[derive(Debug, Clone, Copy)]
struct SadRow {
    cos: f64,
    norm_x: f64,
    norm_xhat: f64,
    clamped: bool,
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Records primitive applications in evaluation order. One tape serves one
/// forward/backward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Split a shape into (leading rows, last extent).
fn rows_last(shape: &[usize]) -> (usize, usize) {
    match shape.split_last() {
        Some((&last, lead)) => (lead.iter().product(), last),
        None => (1, 1),
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Constant input; no gradient is propagated into it.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Trainable input; receives a gradient in [`Tape::backward`].
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Fully connected map without bias over the last axis:
    /// `out[.., i] = sum_j w[i, j] * input[.., j]` with `w` of shape `[m, n]`.
    pub fn dense(&mut self, input: Var, weights: Var) -> Result<Var> {
        let x = self.value(input);
        let w = self.value(weights);
        if w.rank() != 2 {
            return Err(Error::dim("dense", format!("weights must be 2-D, got {:?}", w.shape())));
        }
        let (m, n) = (w.shape()[0], w.shape()[1]);
        let (rows, last) = rows_last(x.shape());
        if last != n {
            return Err(Error::dim(
                "dense",
                format!("input {:?} vs weights {:?}", x.shape(), w.shape()),
            ));
        }
        let mut out = vec![0.0; rows * m];
        gemm(
            1.0,
            MatRef::row_major(x.data(), rows, n),
            MatRef::transposed(w.data(), m, n),
            0.0,
            &mut out,
        );
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = m;
        let rg = self.rg(input) || self.rg(weights);
        Ok(self.push(Tensor { shape, data: out }, Op::Dense { input, weights }, rg))
    }

    /// Valid 1-D cross-correlation. `input` is `[C_in, L]` or `[K, C_in, L]`,
    /// `kernels` is `[C_out, C_in, k]`.
    pub fn conv1d_valid(&mut self, input: Var, kernels: Var) -> Result<Var> {
        let xs = self.value(input).shape().to_vec();
        let ks = self.value(kernels).shape().to_vec();
        if ks.len() != 3 || !(xs.len() == 2 || xs.len() == 3) {
            return Err(Error::dim("conv1d", format!("input {xs:?}, kernels {ks:?}")));
        }
        let batched = xs.len() == 3;
        let (batch, c_in, len) = if batched { (xs[0], xs[1], xs[2]) } else { (1, xs[0], xs[1]) };
        let geom = ConvGeometry {
            in_channels: c_in,
            out_channels: ks[0],
            input: [1, 1, len],
            kernel: [1, 1, ks[2]],
        };
        if ks[1] != c_in {
            return Err(Error::dim("conv1d", format!("input channels {c_in} vs kernels {ks:?}")));
        }
        if !geom.fits() {
            return Err(Error::Architecture(format!(
                "conv1d kernel {} exceeds spectral length {len}",
                ks[2]
            )));
        }
        let out_len = geom.output()[2];
        let shape = if batched { vec![batch, ks[0], out_len] } else { vec![ks[0], out_len] };
        self.conv(input, kernels, geom, batch, shape)
    }

    /// Valid 3-D cross-correlation. `input` is `[C_in, H, W, L]` or
    /// `[K, C_in, H, W, L]`, `kernels` is `[C_out, C_in, kh, kw, kl]`.
    pub fn conv3d_valid(&mut self, input: Var, kernels: Var) -> Result<Var> {
        let xs = self.value(input).shape().to_vec();
        let ks = self.value(kernels).shape().to_vec();
        if ks.len() != 5 || !(xs.len() == 4 || xs.len() == 5) {
            return Err(Error::dim("conv3d", format!("input {xs:?}, kernels {ks:?}")));
        }
        let batched = xs.len() == 5;
        let off = usize::from(batched);
        let batch = if batched { xs[0] } else { 1 };
        let c_in = xs[off];
        if ks[1] != c_in {
            return Err(Error::dim("conv3d", format!("input channels {c_in} vs kernels {ks:?}")));
        }
        let geom = ConvGeometry {
            in_channels: c_in,
            out_channels: ks[0],
            input: [xs[off + 1], xs[off + 2], xs[off + 3]],
            kernel: [ks[2], ks[3], ks[4]],
        };
        if !geom.fits() {
            return Err(Error::Architecture(format!(
                "conv3d kernel {:?} exceeds input extent {:?}",
                geom.kernel, geom.input
            )));
        }
        let o = geom.output();
        let mut shape = if batched { vec![batch] } else { vec![] };
        shape.extend([ks[0], o[0], o[1], o[2]]);
        self.conv(input, kernels, geom, batch, shape)
    }

    fn conv(&mut self, input: Var, kernels: Var, geom: ConvGeometry, batch: usize, shape: Vec<usize>) -> Result<Var> {
        let data = geom.forward(self.value(input).data(), self.value(kernels).data(), batch);
        let rg = self.rg(input) || self.rg(kernels);
        Ok(self.push(Tensor { shape, data }, Op::Conv { input, kernels, geom, batch }, rg))
    }

    /// Windowed maximum along the last axis. Ties resolve to the first index.
    pub fn maxpool_lastdim(&mut self, input: Var, k: usize, stride: usize) -> Result<Var> {
        let x = self.value(input);
        let (rows, len) = rows_last(x.shape());
        if k == 0 || stride == 0 {
            return Err(Error::dim("maxpool", "kernel and stride must be positive"));
        }
        if len < k {
            return Err(Error::Architecture(format!("max-pool kernel {k} exceeds length {len}")));
        }
        let out_len = (len - k) / stride + 1;
        let mut out = Vec::with_capacity(rows * out_len);
        let mut argmax = Vec::with_capacity(rows * out_len);
        let xd = x.data();
        for r in 0..rows {
            let row = &xd[r * len..(r + 1) * len];
            for o in 0..out_len {
                let start = o * stride;
                let mut best = start;
                for i in start + 1..start + k {
                    if row[i] > row[best] {
                        best = i;
                    }
                }
                out.push(row[best]);
                argmax.push(r * len + best);
            }
        }
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = out_len;
        let rg = self.rg(input);
        Ok(self.push(Tensor { shape, data: out }, Op::MaxPool { input, argmax }, rg))
    }

    pub fn activation(&mut self, input: Var, kind: Activation) -> Var {
        let x = self.value(input);
        let rg = self.rg(input);
        match kind {
            Activation::LeakyRelu { slope } => {
                let data = x.data().iter().map(|&v| if v > 0.0 { v } else { slope * v }).collect();
                let value = Tensor { shape: x.shape().to_vec(), data };
                self.push(value, Op::LeakyRelu { input, slope }, rg)
            }
            Activation::Tanh => {
                let data = x.data().iter().map(|v| v.tanh()).collect();
                let value = Tensor { shape: x.shape().to_vec(), data };
                self.push(value, Op::Tanh { input }, rg)
            }
        }
    }

    /// Softmax over the last axis, max-shifted.
    pub fn softmax(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let (rows, n) = rows_last(x.shape());
        if n == 0 {
            return Err(Error::dim("softmax", "empty last axis"));
        }
        let mut data = x.data().to_vec();
        for row in data.chunks_mut(n).take(rows) {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let value = Tensor { shape: x.shape().to_vec(), data };
        let rg = self.rg(input);
        Ok(self.push(value, Op::Softmax { input }, rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(Error::dim(op, format!("{sa:?} vs {sb:?}")));
        }
        Ok(())
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("hadamard", a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p * q).collect();
        let value = Tensor { shape: x.shape().to_vec(), data };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Hadamard { a, b }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let (x, y) = (self.value(a), self.value(b));
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect();
        let value = Tensor { shape: x.shape().to_vec(), data };
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add { a, b }, rg))
    }

    /// `num / max(den, floor)`, elementwise. The clamp carries no gradient.
    pub fn guarded_div(&mut self, num: Var, den: Var, floor: f64) -> Result<Var> {
        self.same_shape("guarded_div", num, den)?;
        if !(floor > 0.0) {
            return Err(Error::domain("guarded_div", format!("floor must be positive, got {floor}")));
        }
        let (n, d) = (self.value(num), self.value(den));
        let data = n.data().iter().zip(d.data()).map(|(p, q)| p / q.max(floor)).collect();
        let value = Tensor { shape: n.shape().to_vec(), data };
        let rg = self.rg(num) || self.rg(den);
        Ok(self.push(value, Op::GuardedDiv { num, den, floor }, rg))
    }

    /// Concatenate along the last axis; leading extents must agree.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        let (sa, sb) = (x.shape(), y.shape());
        if sa.len() != sb.len() || sa.is_empty() || sa[..sa.len() - 1] != sb[..sb.len() - 1] {
            return Err(Error::dim("concat", format!("{sa:?} vs {sb:?}")));
        }
        let (rows, na) = rows_last(sa);
        let nb = *sb.last().unwrap();
        let mut data = Vec::with_capacity(rows * (na + nb));
        for r in 0..rows {
            data.extend_from_slice(&x.data()[r * na..(r + 1) * na]);
            data.extend_from_slice(&y.data()[r * nb..(r + 1) * nb]);
        }
        let mut shape = sa.to_vec();
        *shape.last_mut().unwrap() = na + nb;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor { shape, data }, Op::Concat { a, b }, rg))
    }

    /// `scale * input + offset`, elementwise.
    pub fn affine(&mut self, input: Var, scale: f64, offset: f64) -> Var {
        let x = self.value(input);
        let data = x.data().iter().map(|v| scale * v + offset).collect();
        let value = Tensor { shape: x.shape().to_vec(), data };
        let rg = self.rg(input);
        self.push(value, Op::Affine { input, scale }, rg)
    }

    /// Multiply each row (last-axis vector) of `input` by one entry of `factor`.
    pub fn scale_rows(&mut self, input: Var, factor: Var) -> Result<Var> {
        let (x, f) = (self.value(input), self.value(factor));
        let (rows, n) = rows_last(x.shape());
        if f.len() != rows {
            return Err(Error::dim(
                "scale_rows",
                format!("{} factors for input {:?}", f.len(), x.shape()),
            ));
        }
        let mut data = x.data().to_vec();
        for (row, s) in data.chunks_mut(n.max(1)).zip(f.data()) {
            for v in row {
                *v *= s;
            }
        }
        let value = Tensor { shape: x.shape().to_vec(), data };
        let rg = self.rg(input) || self.rg(factor);
        Ok(self.push(value, Op::ScaleRows { input, factor }, rg))
    }

    /// Select entry `index` of the last axis from every row.
    pub fn column(&mut self, input: Var, index: usize) -> Result<Var> {
        let x = self.value(input);
        let (rows, n) = rows_last(x.shape());
        if index >= n {
            return Err(Error::dim("column", format!("index {index} out of {n}")));
        }
        let data: Vec<f64> = (0..rows).map(|r| x.data()[r * n + index]).collect();
        let shape = if x.rank() <= 1 { vec![1] } else { x.shape()[..x.rank() - 1].to_vec() };
        let rg = self.rg(input);
        Ok(self.push(Tensor { shape, data }, Op::Column { input, index }, rg))
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(input).clone().reshape(shape.to_vec())?;
        let rg = self.rg(input);
        Ok(self.push(value, Op::Reshape { input }, rg))
    }

    /// Spectral angle between matching rows of `x` and `xhat`, averaged over
    /// rows. Returns a one-element tensor.
    pub fn sad_loss(&mut self, x: Var, xhat: Var) -> Result<Var> {
        self.same_shape("sad_loss", x, xhat)?;
        let (a, b) = (self.value(x), self.value(xhat));
        let (rows, n) = rows_last(a.shape());
        let mut saved = Vec::with_capacity(rows);
        let mut total = 0.0;
        for r in 0..rows {
            let (ra, rb) = (&a.data()[r * n..(r + 1) * n], &b.data()[r * n..(r + 1) * n]);
            let dot: f64 = ra.iter().zip(rb).map(|(p, q)| p * q).sum();
            let na = ra.iter().map(|v| v * v).sum::<f64>().sqrt();
            let nb = rb.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(na > 0.0 && nb > 0.0) {
                return Err(Error::domain("sad_loss", format!("zero-norm vector in row {r}")));
            }
            let raw = dot / (na * nb);
            let cos = raw.clamp(-SAD_COS_CLAMP, SAD_COS_CLAMP);
            total += cos.acos();
            saved.push(SadRow {
                cos,
                norm_x: na,
                norm_xhat: nb,
                clamped: raw != cos,
            });
        }
        let value = Tensor::scalar(total / rows as f64);
        let rg = self.rg(x) || self.rg(xhat);
        Ok(self.push(value, Op::SadLoss { x, xhat, rows: saved }, rg))
    }

    /// Reverse accumulation from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::filled(self.value(loss).shape(), 1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let mut accumulate = |v: Var, t: Tensor| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(acc) => acc.add_assign(&t),
                slot => *slot = Some(t),
            }
        };
        let like = |v: Var, data: Vec<f64>| Tensor {
            shape: self.value(v).shape().to_vec(),
            data,
        };

        match &node.op {
            Op::Leaf => {}
            Op::Dense { input, weights } => {
                let x = self.value(*input);
                let w = self.value(*weights);
                let (m, n) = (w.shape()[0], w.shape()[1]);
                let rows = x.len() / n;
                if self.rg(*input) {
                    let mut dx = vec![0.0; rows * n];
                    gemm(1.0, MatRef::row_major(g.data(), rows, m), MatRef::row_major(w.data(), m, n), 0.0, &mut dx);
                    accumulate(*input, like(*input, dx));
                }
                if self.rg(*weights) {
                    let mut dw = vec![0.0; m * n];
                    gemm(1.0, MatRef::transposed(g.data(), rows, m), MatRef::row_major(x.data(), rows, n), 0.0, &mut dw);
                    accumulate(*weights, like(*weights, dw));
                }
            }
            Op::Conv { input, kernels, geom, batch } => {
                let want_input = self.rg(*input);
                let (dw, dx) = geom.backward(
                    self.value(*input).data(),
                    self.value(*kernels).data(),
                    g.data(),
                    *batch,
                    want_input,
                );
                if self.rg(*kernels) {
                    accumulate(*kernels, like(*kernels, dw));
                }
                if let Some(dx) = dx {
                    accumulate(*input, like(*input, dx));
                }
            }
            Op::MaxPool { input, argmax } => {
                let mut dx = vec![0.0; self.value(*input).len()];
                for (gv, &idx) in g.data().iter().zip(argmax) {
                    dx[idx] += gv;
                }
                accumulate(*input, like(*input, dx));
            }
            Op::LeakyRelu { input, slope } => {
                let x = self.value(*input);
                let dx = g
                    .data()
                    .iter()
                    .zip(x.data())
                    .map(|(gv, &xv)| if xv > 0.0 { *gv } else { slope * gv })
                    .collect();
                accumulate(*input, like(*input, dx));
            }
            Op::Tanh { input } => {
                let dx = g
                    .data()
                    .iter()
                    .zip(node.value.data())
                    .map(|(gv, y)| gv * (1.0 - y * y))
                    .collect();
                accumulate(*input, like(*input, dx));
            }
            Op::Softmax { input } => {
                let (_, n) = rows_last(node.value.shape());
                let mut dx = vec![0.0; g.len()];
                for ((dr, gr), yr) in dx.chunks_mut(n).zip(g.data().chunks(n)).zip(node.value.data().chunks(n)) {
                    let s: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for ((d, gv), y) in dr.iter_mut().zip(gr).zip(yr) {
                        *d = y * (gv - s);
                    }
                }
                accumulate(*input, like(*input, dx));
            }
            Op::Hadamard { a, b } => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.rg(*a) {
                    let d = g.data().iter().zip(vb.data()).map(|(p, q)| p * q).collect();
                    accumulate(*a, like(*a, d));
                }
                if self.rg(*b) {
                    let d = g.data().iter().zip(va.data()).map(|(p, q)| p * q).collect();
                    accumulate(*b, like(*b, d));
                }
            }
            Op::GuardedDiv { num, den, floor } => {
                let (vn, vd) = (self.value(*num), self.value(*den));
                if self.rg(*num) {
                    let d = g.data().iter().zip(vd.data()).map(|(gv, q)| gv / q.max(*floor)).collect();
                    accumulate(*num, like(*num, d));
                }
                if self.rg(*den) {
                    let d = g
                        .data()
                        .iter()
                        .zip(vn.data())
                        .zip(vd.data())
                        .map(|((gv, p), q)| if *q < *floor { 0.0 } else { -gv * p / (q * q) })
                        .collect();
                    accumulate(*den, like(*den, d));
                }
            }
            Op::Concat { a, b } => {
                let na = self.value(*a).last_dim();
                let nb = self.value(*b).last_dim();
                let rows = rows_last(self.value(*a).shape()).0;
                let mut da = Vec::with_capacity(rows * na);
                let mut db = Vec::with_capacity(rows * nb);
                for r in 0..rows {
                    let row = &g.data()[r * (na + nb)..(r + 1) * (na + nb)];
                    da.extend_from_slice(&row[..na]);
                    db.extend_from_slice(&row[na..]);
                }
                accumulate(*a, like(*a, da));
                accumulate(*b, like(*b, db));
            }
            Op::Add { a, b } => {
                accumulate(*a, like(*a, g.data().to_vec()));
                accumulate(*b, like(*b, g.data().to_vec()));
            }
            Op::Affine { input, scale } => {
                let d = g.data().iter().map(|v| v * scale).collect();
                accumulate(*input, like(*input, d));
            }
            Op::ScaleRows { input, factor } => {
                let (x, f) = (self.value(*input), self.value(*factor));
                let n = x.last_dim().max(1);
                if self.rg(*input) {
                    let mut d = g.data().to_vec();
                    for (row, s) in d.chunks_mut(n).zip(f.data()) {
                        for v in row {
                            *v *= s;
                        }
                    }
                    accumulate(*input, like(*input, d));
                }
                if self.rg(*factor) {
                    let d = g
                        .data()
                        .chunks(n)
                        .zip(x.data().chunks(n))
                        .map(|(gr, xr)| gr.iter().zip(xr).map(|(p, q)| p * q).sum())
                        .collect();
                    accumulate(*factor, like(*factor, d));
                }
            }
            Op::Column { input, index } => {
                let x = self.value(*input);
                let n = x.last_dim();
                let mut d = vec![0.0; x.len()];
                for (r, gv) in g.data().iter().enumerate() {
                    d[r * n + index] = *gv;
                }
                accumulate(*input, like(*input, d));
            }
            Op::Reshape { input } => {
                accumulate(*input, like(*input, g.data().to_vec()));
            }
            Op::SadLoss { x, xhat, rows } => {
                let (a, b) = (self.value(*x), self.value(*xhat));
                let n = a.last_dim();
                let upstream = g.data()[0] / rows.len() as f64;
                let mut da = vec![0.0; a.len()];
                let mut db = vec![0.0; b.len()];
                for (r, s) in rows.iter().enumerate() {
                    if s.clamped {
                        continue;
                    }
                    let dcos = -upstream / (1.0 - s.cos * s.cos).sqrt();
                    let inv = 1.0 / (s.norm_x * s.norm_xhat);
                    let (ra, rb) = (&a.data()[r * n..(r + 1) * n], &b.data()[r * n..(r + 1) * n]);
                    let ca = s.cos / (s.norm_x * s.norm_x);
                    let cb = s.cos / (s.norm_xhat * s.norm_xhat);
                    for j in 0..n {
                        da[r * n + j] = dcos * (rb[j] * inv - ca * ra[j]);
                        db[r * n + j] = dcos * (ra[j] * inv - cb * rb[j]);
                    }
                }
                accumulate(*x, like(*x, da));
                accumulate(*xhat, like(*xhat, db));
            }
        }
    }
}

/// Result of [`Tape::backward`]: one optional gradient per recorded value.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient with respect to `v`; zeros when the loss does not depend on it.
    pub fn get(&self, v: Var) -> Tensor {
        match &self.grads[v.0] {
            Some(t) => t.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    /// Like [`Gradients::get`] but moves the tensor out.
    pub fn take(&mut self, v: Var) -> Tensor {
        self.grads[v.0].take().unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}
