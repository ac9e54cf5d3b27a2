//! The recording tape: forward operations append nodes, `backward` replays
//! them in exact reverse execution order and accumulates gradients.

use std::f64::consts::PI;

use super::kernels::{
    conv1d_backward, conv1d_forward, conv2d_backward, conv2d_forward, dense_backward,
    dense_forward, depthwise2d_backward, depthwise2d_forward, ConvGeom,
};
use super::{AutodiffError, Tensor};

/// Index of a value recorded on a [`Tape`]. Only meaningful for the tape
/// that produced it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct VarId(pub(crate) usize);

struct Node {
    value: Tensor,
    op: Op,
}

enum Op {
    Leaf,
    Conv2d {
        input: VarId,
        weight: VarId,
        geom: ConvGeom,
    },
    DepthwiseConv2d {
        input: VarId,
        weight: VarId,
        geom: ConvGeom,
    },
    Conv1d {
        input: VarId,
        weight: VarId,
        c_in: usize,
        len: usize,
        c_out: usize,
        k: usize,
    },
    Dense {
        input: VarId,
        weight: VarId,
        bias: VarId,
        m: usize,
        n: usize,
    },
    LeakyRelu {
        input: VarId,
        slope: f64,
    },
    Sigmoid {
        input: VarId,
    },
    GaussianMap {
        mu: VarId,
        log_sigma: VarId,
        rows: usize,
        cols: usize,
        unit_peak: bool,
    },
    ConcatChannels {
        inputs: Vec<VarId>,
    },
    SpatialMean {
        input: VarId,
    },
    TileColumns {
        input: VarId,
        columns: usize,
    },
    ResampleColumns {
        input: VarId,
        in_len: usize,
        out_len: usize,
    },
    GlobalMaxPool1d {
        input: VarId,
        argmax: Vec<usize>,
        len: usize,
    },
    Reshape {
        input: VarId,
    },
    Add {
        lhs: VarId,
        rhs: VarId,
    },
    Sub {
        lhs: VarId,
        rhs: VarId,
    },
    Mul {
        lhs: VarId,
        rhs: VarId,
    },
    Affine {
        input: VarId,
        scale: f64,
    },
    Ln {
        input: VarId,
    },
    Square {
        input: VarId,
    },
    Clamp {
        input: VarId,
        lo: f64,
        hi: f64,
    },
    Mean {
        input: VarId,
    },
}

/// Reverse-mode tape over [`Tensor`] values.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

type OpResult = Result<VarId, AutodiffError>;

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> VarId {
        self.nodes.push(Node { value, op });
        VarId(self.nodes.len() - 1)
    }

    /// Records an input value with no history.
    pub fn leaf(&mut self, value: Tensor) -> VarId {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, id: VarId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Gradient of the last `backward` target with respect to `id`, if any
    /// gradient flowed there.
    pub fn grad(&self, id: VarId) -> Option<&[f64]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    pub fn grad_tensor(&self, id: VarId) -> Tensor {
        let shape = self.nodes[id.0].value.shape().to_vec();
        match self.grad(id) {
            Some(g) => Tensor::new(shape, g.to_vec()),
            None => Tensor::zeros(shape),
        }
    }

    // ---- shape helpers -----------------------------------------------------

    fn expect_rank(&self, op: &'static str, id: VarId, rank: usize) -> Result<(), AutodiffError> {
        let s = self.value(id).shape();
        if s.len() != rank {
            return Err(AutodiffError::shape(
                op,
                format!("expected rank {rank}, got shape {s:?}"),
            ));
        }
        Ok(())
    }

    // ---- layer operations ----------------------------------------------------

    /// Same-padded 2D cross-correlation. Input `[C_in, H, W]`, weight
    /// `[C_out, C_in, k, k]`, odd `k`, output `[C_out, ceil(H/s), ceil(W/s)]`.
    pub fn conv2d(&mut self, input: VarId, weight: VarId, stride: usize) -> OpResult {
        if stride == 0 {
            return Err(AutodiffError::BadStride);
        }
        self.expect_rank("conv2d", input, 3)?;
        self.expect_rank("conv2d", weight, 4)?;
        let (c_in, h, w) = {
            let s = self.value(input).shape();
            (s[0], s[1], s[2])
        };
        let (c_out, wc_in, k, k2) = {
            let s = self.value(weight).shape();
            (s[0], s[1], s[2], s[3])
        };
        if k != k2 || wc_in != c_in {
            return Err(AutodiffError::shape(
                "conv2d",
                format!(
                    "weight {:?} does not match input channels {c_in}",
                    [c_out, wc_in, k, k2]
                ),
            ));
        }
        if k % 2 == 0 {
            return Err(AutodiffError::EvenKernel { op: "conv2d", k });
        }
        let geom = ConvGeom::new_2d(c_in, h, w, c_out, k, stride);
        let out = conv2d_forward(self.value(input).data(), self.value(weight).data(), &geom);
        Ok(self.push(
            Tensor::new([c_out, geom.out_h, geom.out_w], out),
            Op::Conv2d {
                input,
                weight,
                geom,
            },
        ))
    }

    /// Per-channel same-padded 2D cross-correlation. Input `[C, H, W]`,
    /// weight `[C, k, k]`.
    pub fn depthwise_conv2d(&mut self, input: VarId, weight: VarId, stride: usize) -> OpResult {
        if stride == 0 {
            return Err(AutodiffError::BadStride);
        }
        self.expect_rank("depthwise_conv2d", input, 3)?;
        self.expect_rank("depthwise_conv2d", weight, 3)?;
        let (c, h, w) = {
            let s = self.value(input).shape();
            (s[0], s[1], s[2])
        };
        let (wc, k, k2) = {
            let s = self.value(weight).shape();
            (s[0], s[1], s[2])
        };
        if wc != c || k != k2 {
            return Err(AutodiffError::shape(
                "depthwise_conv2d",
                format!("weight {:?} does not match {c} channels", [wc, k, k2]),
            ));
        }
        if k % 2 == 0 {
            return Err(AutodiffError::EvenKernel {
                op: "depthwise_conv2d",
                k,
            });
        }
        let geom = ConvGeom::new_2d(c, h, w, c, k, stride);
        let out = depthwise2d_forward(self.value(input).data(), self.value(weight).data(), &geom);
        Ok(self.push(
            Tensor::new([c, geom.out_h, geom.out_w], out),
            Op::DepthwiseConv2d {
                input,
                weight,
                geom,
            },
        ))
    }

    /// Depthwise-separable block: per-channel `k x k` convolution at the
    /// given stride, then a pointwise `1 x 1` convolution, each followed by
    /// a Leaky ReLU. Depth weights `[C, k, k]`, point weights
    /// `[C_out, C, 1, 1]`.
    pub fn depthwise_separable_block(
        &mut self,
        input: VarId,
        depth_weights: VarId,
        point_weights: VarId,
        stride: usize,
        slope: f64,
    ) -> OpResult {
        let x = self.depthwise_conv2d(input, depth_weights, stride)?;
        let x = self.leaky_relu(x, slope)?;
        let x = self.conv2d(x, point_weights, 1)?;
        self.leaky_relu(x, slope)
    }

    /// Same-padded 1D cross-correlation along the sequence axis. Input
    /// `[C_in, L]`, weight `[C_out, C_in, k]`, odd `k`, output `[C_out, L]`.
    pub fn conv1d(&mut self, input: VarId, weight: VarId) -> OpResult {
        self.expect_rank("conv1d", input, 2)?;
        self.expect_rank("conv1d", weight, 3)?;
        let (c_in, len) = {
            let s = self.value(input).shape();
            (s[0], s[1])
        };
        let (c_out, wc_in, k) = {
            let s = self.value(weight).shape();
            (s[0], s[1], s[2])
        };
        if wc_in != c_in {
            return Err(AutodiffError::shape(
                "conv1d",
                format!("weight expects {wc_in} channels, input has {c_in}"),
            ));
        }
        if k % 2 == 0 {
            return Err(AutodiffError::EvenKernel { op: "conv1d", k });
        }
        let out = conv1d_forward(
            self.value(input).data(),
            self.value(weight).data(),
            c_in,
            len,
            c_out,
            k,
        );
        Ok(self.push(
            Tensor::new([c_out, len], out),
            Op::Conv1d {
                input,
                weight,
                c_in,
                len,
                c_out,
                k,
            },
        ))
    }

    /// Affine map `W x + b`. Input `[n]`, weight `[m, n]`, bias `[m]`.
    pub fn dense(&mut self, input: VarId, weight: VarId, bias: VarId) -> OpResult {
        self.expect_rank("dense", input, 1)?;
        self.expect_rank("dense", weight, 2)?;
        self.expect_rank("dense", bias, 1)?;
        let n = self.value(input).shape()[0];
        let (m, wn) = {
            let s = self.value(weight).shape();
            (s[0], s[1])
        };
        if wn != n || self.value(bias).shape()[0] != m {
            return Err(AutodiffError::shape(
                "dense",
                format!("weight [{m}, {wn}] with input [{n}]"),
            ));
        }
        let out = dense_forward(
            self.value(input).data(),
            self.value(weight).data(),
            self.value(bias).data(),
            m,
            n,
        );
        Ok(self.push(
            Tensor::new([m], out),
            Op::Dense {
                input,
                weight,
                bias,
                m,
                n,
            },
        ))
    }

    /// `x` for `x > 0`, `slope * x` otherwise; the subgradient at zero is
    /// `slope`.
    pub fn leaky_relu(&mut self, input: VarId, slope: f64) -> OpResult {
        if slope.is_nan() || slope < 0.0 {
            return Err(AutodiffError::BadSlope(slope));
        }
        let value = {
            let x = self.value(input);
            let data = x
                .data()
                .iter()
                .map(|&v| if v > 0.0 { v } else { slope * v })
                .collect();
            Tensor::new(x.shape().to_vec(), data)
        };
        Ok(self.push(value, Op::LeakyRelu { input, slope }))
    }

    pub fn sigmoid(&mut self, input: VarId) -> VarId {
        let value = {
            let x = self.value(input);
            let data = x.data().iter().map(|&v| stable_sigmoid(v)).collect();
            Tensor::new(x.shape().to_vec(), data)
        };
        self.push(value, Op::Sigmoid { input })
    }

    /// Renders a stack of 2D Gaussian densities on a `rows x cols` grid,
    /// sampling pixel centers of the unit square. `mu` and `log_sigma` are
    /// `[N, 2]` tensors holding the x/y mean and log standard deviation of
    /// each map. Output is `[N, rows, cols]`, differentiable with respect to
    /// both parameter tensors.
    pub fn gaussian_map(
        &mut self,
        mu: VarId,
        log_sigma: VarId,
        rows: usize,
        cols: usize,
    ) -> OpResult {
        self.gaussian_map_mode(mu, log_sigma, rows, cols, false)
    }

    /// As [`Tape::gaussian_map`] but without the density coefficient: every
    /// map peaks at one regardless of its spread.
    pub fn gaussian_map_unit_peak(
        &mut self,
        mu: VarId,
        log_sigma: VarId,
        rows: usize,
        cols: usize,
    ) -> OpResult {
        self.gaussian_map_mode(mu, log_sigma, rows, cols, true)
    }

    fn gaussian_map_mode(
        &mut self,
        mu: VarId,
        log_sigma: VarId,
        rows: usize,
        cols: usize,
        unit_peak: bool,
    ) -> OpResult {
        self.expect_rank("gaussian_map", mu, 2)?;
        self.expect_rank("gaussian_map", log_sigma, 2)?;
        let n = self.value(mu).shape()[0];
        if self.value(mu).shape()[1] != 2
            || self.value(log_sigma).shape() != [n, 2]
            || rows == 0
            || cols == 0
        {
            return Err(AutodiffError::shape(
                "gaussian_map",
                format!(
                    "mu {:?}, log_sigma {:?}, grid {rows}x{cols}",
                    self.value(mu).shape(),
                    self.value(log_sigma).shape()
                ),
            ));
        }
        let out = {
            let mus = self.value(mu).data();
            let lss = self.value(log_sigma).data();
            let mut out = vec![0.0; n * rows * cols];
            for i in 0..n {
                let (mx, my) = (mus[2 * i], mus[2 * i + 1]);
                let (sx, sy) = (lss[2 * i].exp(), lss[2 * i + 1].exp());
                let denom = if unit_peak { 1.0 } else { 2.0 * PI * sx * sy };
                let base = i * rows * cols;
                for r in 0..rows {
                    let y = (r as f64 + 0.5) / rows as f64;
                    let ey = (y - my) * (y - my) / (2.0 * sy * sy);
                    for c in 0..cols {
                        let x = (c as f64 + 0.5) / cols as f64;
                        let ex = (x - mx) * (x - mx) / (2.0 * sx * sx);
                        out[base + r * cols + c] = (-(ex + ey)).exp() / denom;
                    }
                }
            }
            out
        };
        Ok(self.push(
            Tensor::new([n, rows, cols], out),
            Op::GaussianMap {
                mu,
                log_sigma,
                rows,
                cols,
                unit_peak,
            },
        ))
    }

    /// Concatenates along axis 0; all inputs must agree on the remaining
    /// dimensions.
    pub fn concat_channels(&mut self, inputs: &[VarId]) -> OpResult {
        if inputs.is_empty() {
            return Err(AutodiffError::shape("concat", "no inputs"));
        }
        let tail = self.value(inputs[0]).shape()[1..].to_vec();
        let mut channels = 0;
        for &id in inputs {
            let s = self.value(id).shape();
            if s.is_empty() || s[1..] != tail[..] {
                return Err(AutodiffError::shape(
                    "concat",
                    format!("incompatible shapes {:?} vs tail {:?}", s, tail),
                ));
            }
            channels += s[0];
        }
        let mut data = Vec::with_capacity(channels * tail.iter().product::<usize>().max(1));
        for &id in inputs {
            data.extend_from_slice(self.value(id).data());
        }
        let mut shape = vec![channels];
        shape.extend_from_slice(&tail);
        Ok(self.push(
            Tensor::new(shape, data),
            Op::ConcatChannels {
                inputs: inputs.to_vec(),
            },
        ))
    }

    /// Mean over the spatial dimensions: `[C, H, W] -> [C]`.
    pub fn spatial_mean(&mut self, input: VarId) -> OpResult {
        self.expect_rank("spatial_mean", input, 3)?;
        let (c, h, w) = {
            let s = self.value(input).shape();
            (s[0], s[1], s[2])
        };
        let hw = (h * w) as f64;
        let data = self.value(input).data();
        let out: Vec<f64> = (0..c)
            .map(|ch| data[ch * h * w..(ch + 1) * h * w].iter().sum::<f64>() / hw)
            .collect();
        Ok(self.push(Tensor::new([c], out), Op::SpatialMean { input }))
    }

    /// Repeats a `[C]` vector across `columns` positions: `[C] -> [C, L]`.
    pub fn tile_columns(&mut self, input: VarId, columns: usize) -> OpResult {
        self.expect_rank("tile_columns", input, 1)?;
        if columns == 0 {
            return Err(AutodiffError::shape("tile_columns", "zero columns"));
        }
        let c = self.value(input).shape()[0];
        let src = self.value(input).data();
        let mut out = Vec::with_capacity(c * columns);
        for &v in src {
            out.extend(std::iter::repeat_n(v, columns));
        }
        Ok(self.push(
            Tensor::new([c, columns], out),
            Op::TileColumns { input, columns },
        ))
    }

    /// Linear resampling along the sequence axis: `[C, L] -> [C, out_len]`.
    pub fn resample_columns(&mut self, input: VarId, out_len: usize) -> OpResult {
        self.expect_rank("resample_columns", input, 2)?;
        if out_len == 0 {
            return Err(AutodiffError::shape("resample_columns", "zero length"));
        }
        let (c, in_len) = {
            let s = self.value(input).shape();
            (s[0], s[1])
        };
        let src = self.value(input).data();
        let mut out = Vec::with_capacity(c * out_len);
        for ch in 0..c {
            let row = &src[ch * in_len..(ch + 1) * in_len];
            for t in 0..out_len {
                let (lo, hi, frac) = resample_source(t, in_len, out_len);
                out.push(row[lo] * (1.0 - frac) + row[hi] * frac);
            }
        }
        Ok(self.push(
            Tensor::new([c, out_len], out),
            Op::ResampleColumns {
                input,
                in_len,
                out_len,
            },
        ))
    }

    /// Per-channel maximum over the sequence axis: `[C, L] -> [C]`. Backward
    /// routes the whole gradient to the first maximal index of each channel.
    pub fn global_max_pool_1d(&mut self, input: VarId) -> OpResult {
        self.expect_rank("global_max_pool_1d", input, 2)?;
        let (c, len) = {
            let s = self.value(input).shape();
            (s[0], s[1])
        };
        if len == 0 {
            return Err(AutodiffError::shape("global_max_pool_1d", "empty axis"));
        }
        let data = self.value(input).data();
        let mut out = Vec::with_capacity(c);
        let mut argmax = Vec::with_capacity(c);
        for ch in 0..c {
            let row = &data[ch * len..(ch + 1) * len];
            let mut best = row[0];
            let mut best_i = 0;
            for (i, &v) in row.iter().enumerate().skip(1) {
                if v > best {
                    best = v;
                    best_i = i;
                }
            }
            out.push(best);
            argmax.push(best_i);
        }
        Ok(self.push(
            Tensor::new([c], out),
            Op::GlobalMaxPool1d { input, argmax, len },
        ))
    }

    pub fn reshape(&mut self, input: VarId, shape: impl Into<Vec<usize>>) -> OpResult {
        let shape = shape.into();
        let expected: usize = shape.iter().product();
        if expected != self.value(input).len() {
            return Err(AutodiffError::shape(
                "reshape",
                format!("{:?} -> {shape:?}", self.value(input).shape()),
            ));
        }
        let value = Tensor::new(shape, self.value(input).data().to_vec());
        Ok(self.push(value, Op::Reshape { input }))
    }

    pub fn add(&mut self, lhs: VarId, rhs: VarId) -> OpResult {
        self.elementwise_binary("add", lhs, rhs, |a, b| a + b, Op::Add { lhs, rhs })
    }

    pub fn sub(&mut self, lhs: VarId, rhs: VarId) -> OpResult {
        self.elementwise_binary("sub", lhs, rhs, |a, b| a - b, Op::Sub { lhs, rhs })
    }

    pub fn mul(&mut self, lhs: VarId, rhs: VarId) -> OpResult {
        self.elementwise_binary("mul", lhs, rhs, |a, b| a * b, Op::Mul { lhs, rhs })
    }

    fn elementwise_binary(
        &mut self,
        name: &'static str,
        lhs: VarId,
        rhs: VarId,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> OpResult {
        if self.value(lhs).shape() != self.value(rhs).shape() {
            return Err(AutodiffError::shape(
                name,
                format!(
                    "{:?} vs {:?}",
                    self.value(lhs).shape(),
                    self.value(rhs).shape()
                ),
            ));
        }
        let value = {
            let a = self.value(lhs);
            let b = self.value(rhs);
            let data = a
                .data()
                .iter()
                .zip(b.data())
                .map(|(&x, &y)| f(x, y))
                .collect();
            Tensor::new(a.shape().to_vec(), data)
        };
        Ok(self.push(value, op))
    }

    /// Elementwise `scale * x + offset`.
    pub fn affine(&mut self, input: VarId, scale: f64, offset: f64) -> VarId {
        let value = {
            let x = self.value(input);
            let data = x.data().iter().map(|&v| scale * v + offset).collect();
            Tensor::new(x.shape().to_vec(), data)
        };
        self.push(value, Op::Affine { input, scale })
    }

    /// Elementwise natural logarithm. The caller is responsible for keeping
    /// inputs positive, normally via [`Tape::clamp`].
    pub fn ln(&mut self, input: VarId) -> VarId {
        let value = {
            let x = self.value(input);
            let data = x.data().iter().map(|&v| v.ln()).collect();
            Tensor::new(x.shape().to_vec(), data)
        };
        self.push(value, Op::Ln { input })
    }

    pub fn square(&mut self, input: VarId) -> VarId {
        let value = {
            let x = self.value(input);
            let data = x.data().iter().map(|&v| v * v).collect();
            Tensor::new(x.shape().to_vec(), data)
        };
        self.push(value, Op::Square { input })
    }

    /// Elementwise clamp into `[lo, hi]`; gradient passes through inside the
    /// interval (inclusive) and is zero outside.
    pub fn clamp(&mut self, input: VarId, lo: f64, hi: f64) -> VarId {
        let value = {
            let x = self.value(input);
            let data = x.data().iter().map(|&v| v.clamp(lo, hi)).collect();
            Tensor::new(x.shape().to_vec(), data)
        };
        self.push(value, Op::Clamp { input, lo, hi })
    }

    /// Mean over all elements, producing a `[1]` tensor.
    pub fn mean(&mut self, input: VarId) -> VarId {
        let x = self.value(input);
        let m = x.data().iter().sum::<f64>() / x.len() as f64;
        self.push(Tensor::scalar(m), Op::Mean { input })
    }

    // ---- backward ------------------------------------------------------------

    /// Backpropagates from `out` with seed gradient 1.
    pub fn backward(&mut self, out: VarId) {
        self.backward_scaled(out, 1.0);
    }

    /// Backpropagates with every element of the seed gradient set to `seed`;
    /// useful for averaging losses over a batch without an extra node.
    pub fn backward_scaled(&mut self, out: VarId, seed: f64) {
        let n = self.nodes.len();
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[out.0] = Some(vec![seed; self.nodes[out.0].value.len()]);
        for idx in (0..=out.0).rev() {
            if grads[idx].is_none() {
                continue;
            }
            let (lower, upper) = grads.split_at_mut(idx);
            let gout = upper[0].as_deref().expect("checked above");
            self.backward_node(idx, gout, lower);
        }
        self.grads = grads;
    }

    fn backward_node(&self, idx: usize, gout: &[f64], lower: &mut [Option<Vec<f64>>]) {
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                geom,
            } => {
                let (dinp, dwts) = conv2d_backward(
                    self.nodes[input.0].value.data(),
                    self.nodes[weight.0].value.data(),
                    gout,
                    geom,
                );
                add_into(lower, *input, &dinp);
                add_into(lower, *weight, &dwts);
            }
            Op::DepthwiseConv2d {
                input,
                weight,
                geom,
            } => {
                let (dinp, dwts) = depthwise2d_backward(
                    self.nodes[input.0].value.data(),
                    self.nodes[weight.0].value.data(),
                    gout,
                    geom,
                );
                add_into(lower, *input, &dinp);
                add_into(lower, *weight, &dwts);
            }
            Op::Conv1d {
                input,
                weight,
                c_in,
                len,
                c_out,
                k,
            } => {
                let (dinp, dwts) = conv1d_backward(
                    self.nodes[input.0].value.data(),
                    self.nodes[weight.0].value.data(),
                    gout,
                    *c_in,
                    *len,
                    *c_out,
                    *k,
                );
                add_into(lower, *input, &dinp);
                add_into(lower, *weight, &dwts);
            }
            Op::Dense {
                input,
                weight,
                bias,
                m,
                n,
            } => {
                let (dinp, dwts, dbias) = dense_backward(
                    self.nodes[input.0].value.data(),
                    self.nodes[weight.0].value.data(),
                    gout,
                    *m,
                    *n,
                );
                add_into(lower, *input, &dinp);
                add_into(lower, *weight, &dwts);
                add_into(lower, *bias, &dbias);
            }
            Op::LeakyRelu { input, slope } => {
                let x = self.nodes[input.0].value.data();
                let slot = grad_slot(lower, *input, x.len());
                for ((g, &xv), &go) in slot.iter_mut().zip(x).zip(gout) {
                    *g += if xv > 0.0 { go } else { slope * go };
                }
            }
            Op::Sigmoid { input } => {
                let y = self.nodes[idx].value.data();
                let slot = grad_slot(lower, *input, y.len());
                for ((g, &yv), &go) in slot.iter_mut().zip(y).zip(gout) {
                    *g += yv * (1.0 - yv) * go;
                }
            }
            Op::GaussianMap {
                mu,
                log_sigma,
                rows,
                cols,
                unit_peak,
            } => {
                let mus = self.nodes[mu.0].value.data();
                let lss = self.nodes[log_sigma.0].value.data();
                let out = self.nodes[idx].value.data();
                let n = mus.len() / 2;
                let mut dmu = vec![0.0; mus.len()];
                let mut dls = vec![0.0; lss.len()];
                for i in 0..n {
                    let (mx, my) = (mus[2 * i], mus[2 * i + 1]);
                    let (sx, sy) = (lss[2 * i].exp(), lss[2 * i + 1].exp());
                    let (inv_sx2, inv_sy2) = (1.0 / (sx * sx), 1.0 / (sy * sy));
                    let base = i * rows * cols;
                    let (mut gmx, mut gmy, mut glx, mut gly) = (0.0, 0.0, 0.0, 0.0);
                    for r in 0..*rows {
                        let y = (r as f64 + 0.5) / *rows as f64;
                        let dy = y - my;
                        for c in 0..*cols {
                            let x = (c as f64 + 0.5) / *cols as f64;
                            let dx = x - mx;
                            let gv = out[base + r * cols + c] * gout[base + r * cols + c];
                            // without the density coefficient the
                            // -1 normalization term drops out of the
                            // log-spread derivative
                            let norm = if *unit_peak { 0.0 } else { 1.0 };
                            gmx += gv * dx * inv_sx2;
                            gmy += gv * dy * inv_sy2;
                            glx += gv * (dx * dx * inv_sx2 - norm);
                            gly += gv * (dy * dy * inv_sy2 - norm);
                        }
                    }
                    dmu[2 * i] += gmx;
                    dmu[2 * i + 1] += gmy;
                    dls[2 * i] += glx;
                    dls[2 * i + 1] += gly;
                }
                add_into(lower, *mu, &dmu);
                add_into(lower, *log_sigma, &dls);
            }
            Op::ConcatChannels { inputs } => {
                let mut offset = 0;
                for &id in inputs {
                    let len = self.nodes[id.0].value.len();
                    add_into(lower, id, &gout[offset..offset + len]);
                    offset += len;
                }
            }
            Op::SpatialMean { input } => {
                let s = self.nodes[input.0].value.shape();
                let (c, hw) = (s[0], s[1] * s[2]);
                let slot = grad_slot(lower, *input, c * hw);
                for ch in 0..c {
                    let g = gout[ch] / hw as f64;
                    for v in &mut slot[ch * hw..(ch + 1) * hw] {
                        *v += g;
                    }
                }
            }
            Op::TileColumns { input, columns } => {
                let c = self.nodes[input.0].value.len();
                let slot = grad_slot(lower, *input, c);
                for ch in 0..c {
                    slot[ch] += gout[ch * columns..(ch + 1) * columns].iter().sum::<f64>();
                }
            }
            Op::ResampleColumns {
                input,
                in_len,
                out_len,
            } => {
                let c = self.nodes[input.0].value.len() / in_len;
                let slot = grad_slot(lower, *input, c * in_len);
                for ch in 0..c {
                    for t in 0..*out_len {
                        let (lo, hi, frac) = resample_source(t, *in_len, *out_len);
                        let go = gout[ch * out_len + t];
                        slot[ch * in_len + lo] += go * (1.0 - frac);
                        slot[ch * in_len + hi] += go * frac;
                    }
                }
            }
            Op::GlobalMaxPool1d { input, argmax, len } => {
                let slot = grad_slot(lower, *input, argmax.len() * len);
                for (ch, &am) in argmax.iter().enumerate() {
                    slot[ch * len + am] += gout[ch];
                }
            }
            Op::Reshape { input } => {
                add_into(lower, *input, gout);
            }
            Op::Add { lhs, rhs } => {
                add_into(lower, *lhs, gout);
                add_into(lower, *rhs, gout);
            }
            Op::Sub { lhs, rhs } => {
                add_into(lower, *lhs, gout);
                let slot = grad_slot(lower, *rhs, gout.len());
                for (g, &go) in slot.iter_mut().zip(gout) {
                    *g -= go;
                }
            }
            Op::Mul { lhs, rhs } => {
                let a = self.nodes[lhs.0].value.data();
                let b = self.nodes[rhs.0].value.data();
                {
                    let slot = grad_slot(lower, *lhs, a.len());
                    for ((g, &bv), &go) in slot.iter_mut().zip(b).zip(gout) {
                        *g += bv * go;
                    }
                }
                let slot = grad_slot(lower, *rhs, b.len());
                for ((g, &av), &go) in slot.iter_mut().zip(a).zip(gout) {
                    *g += av * go;
                }
            }
            Op::Affine { input, scale, .. } => {
                let slot = grad_slot(lower, *input, gout.len());
                for (g, &go) in slot.iter_mut().zip(gout) {
                    *g += scale * go;
                }
            }
            Op::Ln { input } => {
                let x = self.nodes[input.0].value.data();
                let slot = grad_slot(lower, *input, x.len());
                for ((g, &xv), &go) in slot.iter_mut().zip(x).zip(gout) {
                    *g += go / xv;
                }
            }
            Op::Square { input } => {
                let x = self.nodes[input.0].value.data();
                let slot = grad_slot(lower, *input, x.len());
                for ((g, &xv), &go) in slot.iter_mut().zip(x).zip(gout) {
                    *g += 2.0 * xv * go;
                }
            }
            Op::Clamp { input, lo, hi } => {
                let x = self.nodes[input.0].value.data();
                let slot = grad_slot(lower, *input, x.len());
                for ((g, &xv), &go) in slot.iter_mut().zip(x).zip(gout) {
                    if xv >= *lo && xv <= *hi {
                        *g += go;
                    }
                }
            }
            Op::Mean { input } => {
                let len = self.nodes[input.0].value.len();
                let g = gout[0] / len as f64;
                let slot = grad_slot(lower, *input, len);
                for v in slot.iter_mut() {
                    *v += g;
                }
            }
        }
    }
}

fn grad_slot(lower: &mut [Option<Vec<f64>>], id: VarId, len: usize) -> &mut Vec<f64> {
    lower[id.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(lower: &mut [Option<Vec<f64>>], id: VarId, grad: &[f64]) {
    let slot = grad_slot(lower, id, grad.len());
    for (g, &d) in slot.iter_mut().zip(grad) {
        *g += d;
    }
}

/// Source indices and interpolation weight for linear resampling.
fn resample_source(t: usize, in_len: usize, out_len: usize) -> (usize, usize, f64) {
    if in_len == 1 || out_len == 1 {
        return (0, 0, 0.0);
    }
    let pos = t as f64 * (in_len - 1) as f64 / (out_len - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    (lo, hi.min(in_len - 1), pos - lo as f64)
}

fn stable_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf(tape: &mut Tape, shape: impl Into<Vec<usize>>, data: Vec<f64>) -> VarId {
        tape.leaf(Tensor::new(shape, data))
    }

    #[test]
    fn identity_one_by_one_kernel() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, [1, 2, 2], vec![1.0, -2.0, 3.0, 0.5]);
        let w = leaf(&mut tape, [1, 1, 1, 1], vec![1.0]);
        let y = tape.conv2d(x, w, 1).unwrap();
        assert_eq!(tape.value(y).data(), tape.value(x).data());
    }

    #[test]
    fn conv2d_ones_example() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, [1, 3, 3], vec![1.0; 9]);
        let w = leaf(&mut tape, [1, 1, 3, 3], vec![1.0; 9]);
        let y = tape.conv2d(x, w, 1).unwrap();
        let out = tape.value(y).data();
        assert_eq!(out[4], 9.0);
        assert_eq!(out[0], 4.0);
    }

    #[test]
    fn conv2d_shape_mismatch() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, [2, 3, 3], vec![0.0; 18]);
        let w = leaf(&mut tape, [1, 1, 3, 3], vec![0.0; 9]);
        assert!(matches!(
            tape.conv2d(x, w, 1),
            Err(AutodiffError::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn conv1d_examples() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, [1, 3], vec![1.0, 2.0, 3.0]);
        let w = leaf(&mut tape, [1, 1, 3], vec![1.0, 0.0, -1.0]);
        let y = tape.conv1d(x, w).unwrap();
        assert_eq!(tape.value(y).data(), &[-2.0, -2.0, 2.0]);

        let id = leaf(&mut tape, [1, 1, 3], vec![0.0, 1.0, 0.0]);
        let z = tape.conv1d(x, id).unwrap();
        assert_eq!(tape.value(z).data(), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn separable_block_identity_composition() {
        // identity depthwise kernel (center tap) + identity pointwise gives
        // the Leaky ReLU applied twice
        let mut tape = Tape::new();
        let x = leaf(&mut tape, [1, 2, 2], vec![1.0, -2.0, 3.0, -0.5]);
        let mut dw = vec![0.0; 9];
        dw[4] = 1.0;
        let dwid = leaf(&mut tape, [1, 3, 3], dw);
        let pwid = leaf(&mut tape, [1, 1, 1, 1], vec![1.0]);
        let y = tape
            .depthwise_separable_block(x, dwid, pwid, 1, 0.2)
            .unwrap();
        let expected: Vec<f64> = [1.0f64, -2.0, 3.0, -0.5]
            .iter()
            .map(|&v| {
                let once = if v > 0.0 { v } else { 0.2 * v };
                if once > 0.0 {
                    once
                } else {
                    0.2 * once
                }
            })
            .collect();
        assert_eq!(tape.value(y).data(), &expected[..]);
    }

    #[test]
    fn separable_block_parameter_savings() {
        // C = 8, k = 3, C_out = 16: 72 + 128 = 200 weights versus 1152 for
        // the full convolution
        let (c, k, c_out) = (8usize, 3usize, 16usize);
        let depthwise = c * k * k;
        let pointwise = c_out * c;
        assert_eq!(depthwise + pointwise, 200);
        assert!(depthwise + pointwise < c_out * c * k * k);
        assert_eq!(c_out * c * k * k, 1152);
    }

    #[test]
    fn leaky_relu_values() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, [3], vec![-1.0, 0.0, 3.0]);
        let y = tape.leaky_relu(x, 0.2).unwrap();
        assert_eq!(tape.value(y).data(), &[-0.2, 0.0, 3.0]);
        tape.backward_scaled(y, 1.0);
        // subgradient at zero is the slope
        assert_eq!(tape.grad(x).unwrap(), &[0.2, 0.2, 1.0]);
    }

    #[test]
    fn sigmoid_at_zero() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, [1], vec![0.0]);
        let y = tape.sigmoid(x);
        assert_eq!(tape.value(y).item(), 0.5);
    }

    #[test]
    fn dense_affine_example() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, [2], vec![2.0, 3.0]);
        let w = leaf(&mut tape, [1, 2], vec![1.0, 1.0]);
        let b = leaf(&mut tape, [1], vec![0.0]);
        let y = tape.dense(x, w, b).unwrap();
        assert_eq!(tape.value(y).data(), &[5.0]);
    }

    #[test]
    fn dense_identity() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, [3], vec![4.0, -1.0, 0.5]);
        let w = leaf(
            &mut tape,
            [3, 3],
            vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
        );
        let b = leaf(&mut tape, [3], vec![0.0; 3]);
        let y = tape.dense(x, w, b).unwrap();
        assert_eq!(tape.value(y).data(), tape.value(x).data());
    }

    #[test]
    fn global_max_pool_first_tie_wins() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, [2, 3], vec![3.0, -1.0, 7.0, 2.0, 2.0, 2.0]);
        let y = tape.global_max_pool_1d(x).unwrap();
        assert_eq!(tape.value(y).data(), &[7.0, 2.0]);
        tape.backward(y);
        assert_eq!(tape.grad(x).unwrap(), &[0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn concat_channel_count() {
        let mut tape = Tape::new();
        let a = leaf(&mut tape, [16, 2, 2], vec![0.0; 64]);
        let b = leaf(&mut tape, [64, 2, 2], vec![0.0; 256]);
        let y = tape.concat_channels(&[a, b]).unwrap();
        assert_eq!(tape.value(y).shape(), &[80, 2, 2]);
    }

    #[test]
    fn spatial_mean_of_constant() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, [2, 2, 2], vec![3.5; 8]);
        let y = tape.spatial_mean(x).unwrap();
        assert_eq!(tape.value(y).data(), &[3.5, 3.5]);
    }

    #[test]
    fn mean_backward_distributes() {
        let mut tape = Tape::new();
        let x = leaf(&mut tape, [4], vec![1.0, 2.0, 3.0, 4.0]);
        let m = tape.mean(x);
        assert_eq!(tape.value(m).item(), 2.5);
        tape.backward(m);
        assert_eq!(tape.grad(x).unwrap(), &[0.25; 4]);
    }

    #[test]
    fn gradients_accumulate_on_fanout() {
        // y = x + x => dy/dx = 2
        let mut tape = Tape::new();
        let x = leaf(&mut tape, [1], vec![3.0]);
        let y = tape.add(x, x).unwrap();
        tape.backward(y);
        assert_eq!(tape.grad(x).unwrap(), &[2.0]);
    }

    #[test]
    fn determinism_same_inputs_same_bits() {
        let run = || {
            let mut tape = Tape::new();
            let x = leaf(
                &mut tape,
                [1, 4, 4],
                (0..16).map(|i| i as f64 * 0.37).collect(),
            );
            let w = leaf(
                &mut tape,
                [2, 1, 3, 3],
                (0..18).map(|i| (i as f64).sin()).collect(),
            );
            let y = tape.conv2d(x, w, 1).unwrap();
            let a = tape.leaky_relu(y, 0.2).unwrap();
            let m = tape.mean(a);
            tape.backward(m);
            (
                tape.value(m).item().to_bits(),
                tape.grad(w)
                    .unwrap()
                    .iter()
                    .map(|v| v.to_bits())
                    .collect::<Vec<_>>(),
            )
        };
        assert_eq!(run(), run());
    }
}
