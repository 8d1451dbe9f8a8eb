//! Reverse-mode tape. Every operation appends a node holding its output
//! value and enough metadata to push gradients back to its parents.

use super::array::{Scalar, Tensor};
use crate::error::{Error, Result};

pub const NORM_EPS: f64 = 1e-5;

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op<T> {
    Leaf,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, T),
    Sigmoid(usize),
    Relu(usize),
    PRelu {
        x: usize,
        slope: usize,
    },
    Linear {
        x: usize,
        w: usize,
        b: usize,
    },
    Conv2d {
        x: usize,
        w: usize,
        b: usize,
        stride_f: usize,
    },
    Deconv2d {
        x: usize,
        w: usize,
        b: usize,
        stride_f: usize,
    },
    Conv1d {
        x: usize,
        w: usize,
        b: usize,
        dilation: usize,
    },
    InstanceNorm {
        x: usize,
        gamma: usize,
        beta: usize,
    },
    CumulativeNorm {
        x: usize,
        gamma: usize,
        beta: usize,
    },
    ConcatChannels(usize, usize),
    Reshape(usize),
    ChannelsToFrames(usize),
    FramesToChannels {
        x: usize,
        channels: usize,
    },
    Mean(usize),
}

struct Node<T: Scalar> {
    value: Tensor<T>,
    grad: Option<Tensor<T>>,
    op: Op<T>,
    needs_grad: bool,
}

/// A computation tape. Build the forward pass through the methods below,
/// then call [`Graph::backward`] once on a scalar loss.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    backward_done: bool,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            backward_done: false,
        }
    }

    /// Constant input: gradients are not tracked through it.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Trainable leaf: receives a gradient on backward.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.nodes[a.0].value.shape != self.nodes[b.0].value.shape {
            return Err(Error::invalid(format!(
                "{}: shape {:?} vs {:?}",
                what, self.nodes[a.0].value.shape, self.nodes[b.0].value.shape
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let value = Tensor {
            shape: self.value(a).shape.clone(),
            data: self
                .value(a)
                .data
                .iter()
                .zip(self.value(b).data.iter())
                .map(|(&x, &y)| x + y)
                .collect(),
        };
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Add(a.0, b.0), needs))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let value = Tensor {
            shape: self.value(a).shape.clone(),
            data: self
                .value(a)
                .data
                .iter()
                .zip(self.value(b).data.iter())
                .map(|(&x, &y)| x - y)
                .collect(),
        };
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Sub(a.0, b.0), needs))
    }

    /// Elementwise product. With `b` passed through [`Graph::sigmoid`] this
    /// is the GLU gate `a * sigmoid(b)`.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mul")?;
        let value = Tensor {
            shape: self.value(a).shape.clone(),
            data: self
                .value(a)
                .data
                .iter()
                .zip(self.value(b).data.iter())
                .map(|(&x, &y)| x * y)
                .collect(),
        };
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::Mul(a.0, b.0), needs))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let c = T::from_f64(c);
        let value = Tensor {
            shape: self.value(a).shape.clone(),
            data: self.value(a).data.iter().map(|&x| x * c).collect(),
        };
        let needs = self.needs(a);
        self.push(value, Op::Scale(a.0, c), needs)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let one = T::one();
        let value = Tensor {
            shape: self.value(a).shape.clone(),
            data: self
                .value(a)
                .data
                .iter()
                .map(|&x| one / (one + (-x).exp()))
                .collect(),
        };
        let needs = self.needs(a);
        self.push(value, Op::Sigmoid(a.0), needs)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = Tensor {
            shape: self.value(a).shape.clone(),
            data: self
                .value(a)
                .data
                .iter()
                .map(|&x| if x > T::zero() { x } else { T::zero() })
                .collect(),
        };
        let needs = self.needs(a);
        self.push(value, Op::Relu(a.0), needs)
    }

    /// PReLU with one slope per channel; channels are axis 0 of `x`.
    pub fn prelu(&mut self, x: Var, slope: Var) -> Result<Var> {
        let channels = *self
            .value(x)
            .shape
            .first()
            .ok_or_else(|| Error::invalid("prelu needs a channel axis"))?;
        if self.value(slope).shape != [channels] {
            return Err(Error::invalid(format!(
                "prelu slope shape {:?}, expected [{}]",
                self.value(slope).shape,
                channels
            )));
        }
        let plane = self.value(x).len() / channels;
        let mut data = Vec::with_capacity(self.value(x).len());
        for c in 0..channels {
            let s = self.value(slope).data[c];
            for i in 0..plane {
                let v = self.value(x).data[c * plane + i];
                data.push(if v > T::zero() { v } else { s * v });
            }
        }
        let value = Tensor {
            shape: self.value(x).shape.clone(),
            data,
        };
        let needs = self.needs(x) || self.needs(slope);
        Ok(self.push(
            value,
            Op::PRelu {
                x: x.0,
                slope: slope.0,
            },
            needs,
        ))
    }

    /// Affine map over the last axis: `x [T, F_in] * w [F_out, F_in]^T + b`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xs, ws, bs) = (
            self.value(x).shape.clone(),
            self.value(w).shape.clone(),
            self.value(b).shape.clone(),
        );
        if xs.len() != 2 || ws.len() != 2 || xs[1] != ws[1] || bs != [ws[0]] {
            return Err(Error::invalid(format!(
                "linear shapes: x {:?}, w {:?}, b {:?}",
                xs, ws, bs
            )));
        }
        let (t_len, f_in, f_out) = (xs[0], xs[1], ws[0]);
        let mut out = Tensor::zeros(&[t_len, f_out]);
        for row in out.data.chunks_exact_mut(f_out) {
            row.copy_from_slice(&self.value(b).data);
        }
        unsafe {
            // out += x (t x f_in) * w^T (f_in x f_out)
            T::gemm(
                t_len,
                f_in,
                f_out,
                T::one(),
                self.value(x).data.as_ptr(),
                f_in as isize,
                1,
                self.value(w).data.as_ptr(),
                1,
                f_in as isize,
                T::one(),
                out.data.as_mut_ptr(),
                f_out as isize,
                1,
            );
        }
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(
            out,
            Op::Linear {
                x: x.0,
                w: w.0,
                b: b.0,
            },
            needs,
        ))
    }

    /// 2-D convolution over `x [C_in, T, F]` with kernel
    /// `w [C_out, C_in, k_t, k_f]`, frequency stride `stride_f`, and causal
    /// time padding (`k_t - 1` leading zero frames), so T is preserved and
    /// frame t never sees frames beyond t.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Var, stride_f: usize) -> Result<Var> {
        let (xs, ws) = (self.value(x).shape.clone(), self.value(w).shape.clone());
        if xs.len() != 3 || ws.len() != 4 || ws[1] != xs[0] {
            return Err(Error::invalid(format!(
                "conv2d shapes: x {:?}, w {:?}",
                xs, ws
            )));
        }
        let (c_in, t_len, f_in) = (xs[0], xs[1], xs[2]);
        let (c_out, k_t, k_f) = (ws[0], ws[2], ws[3]);
        if self.value(b).shape != [c_out] {
            return Err(Error::invalid("conv2d bias shape"));
        }
        if f_in < k_f || stride_f == 0 {
            return Err(Error::invalid("conv2d frequency kernel exceeds input"));
        }
        let f_out = (f_in - k_f) / stride_f + 1;

        let cols = im2col(self.value(x), k_t, k_f, stride_f, f_out);
        let mut out = Tensor::zeros(&[c_out, t_len, f_out]);
        let plane = t_len * f_out;
        for (c, chunk) in out.data.chunks_exact_mut(plane).enumerate() {
            let bias = self.value(b).data[c];
            for v in chunk.iter_mut() {
                *v = bias;
            }
        }
        let k_dim = c_in * k_t * k_f;
        unsafe {
            T::gemm(
                c_out,
                k_dim,
                plane,
                T::one(),
                self.value(w).data.as_ptr(),
                k_dim as isize,
                1,
                cols.as_ptr(),
                plane as isize,
                1,
                T::one(),
                out.data.as_mut_ptr(),
                plane as isize,
                1,
            );
        }
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(
            out,
            Op::Conv2d {
                x: x.0,
                w: w.0,
                b: b.0,
                stride_f,
            },
            needs,
        ))
    }

    /// Transposed 2-D convolution over `x [C_in, T, F]` with kernel
    /// `w [C_in, C_out, k_t, k_f]` and frequency upsampling `stride_f`:
    /// `F' = (F - 1) * stride_f + k_f`. Along time the kernel is applied
    /// causally (`out[t]` collects `x[t - dt]`), mirroring [`Graph::conv2d`].
    pub fn deconv2d(&mut self, x: Var, w: Var, b: Var, stride_f: usize) -> Result<Var> {
        let (xs, ws) = (self.value(x).shape.clone(), self.value(w).shape.clone());
        if xs.len() != 3 || ws.len() != 4 || ws[0] != xs[0] {
            return Err(Error::invalid(format!(
                "deconv2d shapes: x {:?}, w {:?}",
                xs, ws
            )));
        }
        let (c_in, t_len, f_in) = (xs[0], xs[1], xs[2]);
        let (c_out, k_t, k_f) = (ws[1], ws[2], ws[3]);
        if self.value(b).shape != [c_out] {
            return Err(Error::invalid("deconv2d bias shape"));
        }
        if stride_f == 0 {
            return Err(Error::invalid("deconv2d stride must be positive"));
        }
        let f_out = (f_in - 1) * stride_f + k_f;

        // cols [(c_out, k_t, k_f), (t, f_in)] = w^T x
        let k_dim = c_out * k_t * k_f;
        let plane_in = t_len * f_in;
        let mut cols = vec![T::zero(); k_dim * plane_in];
        unsafe {
            T::gemm(
                k_dim,
                c_in,
                plane_in,
                T::one(),
                self.value(w).data.as_ptr(),
                1,
                k_dim as isize,
                self.value(x).data.as_ptr(),
                plane_in as isize,
                1,
                T::zero(),
                cols.as_mut_ptr(),
                plane_in as isize,
                1,
            );
        }

        let mut out = Tensor::zeros(&[c_out, t_len, f_out]);
        let plane_out = t_len * f_out;
        for (c, chunk) in out.data.chunks_exact_mut(plane_out).enumerate() {
            let bias = self.value(b).data[c];
            for v in chunk.iter_mut() {
                *v = bias;
            }
        }
        let mut r = 0;
        for co in 0..c_out {
            for dt in 0..k_t {
                for df in 0..k_f {
                    let col_row = &cols[r * plane_in..(r + 1) * plane_in];
                    r += 1;
                    for t in 0..t_len {
                        let u = t + dt;
                        if u >= t_len {
                            break;
                        }
                        let dst = &mut out.data[co * plane_out + u * f_out..];
                        let src = &col_row[t * f_in..(t + 1) * f_in];
                        for (f, &v) in src.iter().enumerate() {
                            dst[f * stride_f + df] = dst[f * stride_f + df] + v;
                        }
                    }
                }
            }
        }
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(
            out,
            Op::Deconv2d {
                x: x.0,
                w: w.0,
                b: b.0,
                stride_f,
            },
            needs,
        ))
    }

    /// Causal dilated 1-D convolution over `x [C_in, T]` with kernel
    /// `w [C_out, C_in, k]`: left padding of `(k - 1) * dilation` frames.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, dilation: usize) -> Result<Var> {
        let (xs, ws) = (self.value(x).shape.clone(), self.value(w).shape.clone());
        if xs.len() != 2 || ws.len() != 3 || ws[1] != xs[0] || dilation == 0 {
            return Err(Error::invalid(format!(
                "conv1d shapes: x {:?}, w {:?}, dilation {}",
                xs, ws, dilation
            )));
        }
        let (c_in, t_len) = (xs[0], xs[1]);
        let (c_out, k) = (ws[0], ws[2]);
        if self.value(b).shape != [c_out] {
            return Err(Error::invalid("conv1d bias shape"));
        }
        let mut out = Tensor::zeros(&[c_out, t_len]);
        for co in 0..c_out {
            let bias = self.value(b).data[co];
            for v in out.data[co * t_len..(co + 1) * t_len].iter_mut() {
                *v = bias;
            }
            for ci in 0..c_in {
                let src = &self.value(x).data[ci * t_len..(ci + 1) * t_len];
                for kk in 0..k {
                    let wv = self.value(w).data[(co * c_in + ci) * k + kk];
                    if wv == T::zero() {
                        continue;
                    }
                    // tap kk reaches back (k - 1 - kk) * dilation frames
                    let shift = (k - 1 - kk) * dilation;
                    for t in shift..t_len {
                        out.data[co * t_len + t] =
                            out.data[co * t_len + t] + wv * src[t - shift];
                    }
                }
            }
        }
        let needs = self.needs(x) || self.needs(w) || self.needs(b);
        Ok(self.push(
            out,
            Op::Conv1d {
                x: x.0,
                w: w.0,
                b: b.0,
                dilation,
            },
            needs,
        ))
    }

    /// Instance normalization with per-channel affine parameters. Statistics
    /// are taken over everything but the channel axis (axis 0).
    pub fn instance_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let xs = self.value(x).shape.clone();
        let channels = *xs
            .first()
            .ok_or_else(|| Error::invalid("instance_norm needs a channel axis"))?;
        let plane = self.value(x).len() / channels;
        if plane < 2 {
            return Err(Error::invalid(
                "instance_norm needs at least 2 elements per channel",
            ));
        }
        if self.value(gamma).shape != [channels] || self.value(beta).shape != [channels] {
            return Err(Error::invalid("instance_norm affine shapes"));
        }
        let mut data = Vec::with_capacity(self.value(x).len());
        for c in 0..channels {
            let xs = &self.value(x).data[c * plane..(c + 1) * plane];
            let (mean, inv_std) = plane_stats(xs);
            let g = self.value(gamma).data[c];
            let b = self.value(beta).data[c];
            for &v in xs {
                data.push(g * ((v - mean) * inv_std) + b);
            }
        }
        let value = Tensor {
            shape: xs.clone(),
            data,
        };
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(
            value,
            Op::InstanceNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
            },
            needs,
        ))
    }

    /// Causal variant of instance normalization: the statistics at frame t
    /// cover frames 0..=t only (per channel, all frequency bins), so the
    /// output at t never depends on later frames. Time is axis 1 of
    /// `x [C, T, ...]`.
    pub fn cumulative_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let xs = self.value(x).shape.clone();
        if xs.len() < 2 {
            return Err(Error::invalid("cumulative_norm needs [C, T, ...]"));
        }
        let channels = xs[0];
        let t_len = xs[1];
        let f_len: usize = xs[2..].iter().product::<usize>().max(1);
        if self.value(gamma).shape != [channels] || self.value(beta).shape != [channels] {
            return Err(Error::invalid("cumulative_norm affine shapes"));
        }
        let eps = NORM_EPS;
        let mut data = Vec::with_capacity(self.value(x).len());
        for c in 0..channels {
            let plane = &self.value(x).data[c * t_len * f_len..(c + 1) * t_len * f_len];
            let g = self.value(gamma).data[c];
            let b = self.value(beta).data[c];
            let mut sum = 0.0f64;
            let mut sq = 0.0f64;
            for t in 0..t_len {
                for f in 0..f_len {
                    let v = Scalar::to_f64(plane[t * f_len + f]);
                    sum += v;
                    sq += v * v;
                }
                let n = ((t + 1) * f_len) as f64;
                let mean = sum / n;
                let var = (sq / n - mean * mean).max(0.0);
                let inv_std = 1.0 / (var + eps).sqrt();
                for f in 0..f_len {
                    let v = Scalar::to_f64(plane[t * f_len + f]);
                    data.push(g * T::from_f64((v - mean) * inv_std) + b);
                }
            }
        }
        let value = Tensor {
            shape: xs.clone(),
            data,
        };
        let needs = self.needs(x) || self.needs(gamma) || self.needs(beta);
        Ok(self.push(
            value,
            Op::CumulativeNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
            },
            needs,
        ))
    }

    /// Concatenate along the channel axis: `[C1, ...] ++ [C2, ...]`.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.value(a).shape.clone(), self.value(b).shape.clone());
        if sa.len() != sb.len() || sa.is_empty() || sa[1..] != sb[1..] {
            return Err(Error::invalid(format!(
                "concat_channels shapes: {:?} vs {:?}",
                sa, sb
            )));
        }
        let mut shape = sa.clone();
        shape[0] += sb[0];
        let mut data = Vec::with_capacity(self.value(a).len() + self.value(b).len());
        data.extend_from_slice(&self.value(a).data);
        data.extend_from_slice(&self.value(b).data);
        let value = Tensor { shape, data };
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(value, Op::ConcatChannels(a.0, b.0), needs))
    }

    /// View with a new shape (same element count, same memory order).
    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(a).reshaped(shape)?;
        let needs = self.needs(a);
        Ok(self.push(value, Op::Reshape(a.0), needs))
    }

    /// `[C, T, F] -> [C*F, T]` with feature index `c * F + f`: the encoder
    /// bottleneck flattened so each frame's features form one column.
    pub fn channels_to_frames(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).shape.clone();
        if s.len() != 3 {
            return Err(Error::invalid("channels_to_frames needs [C, T, F]"));
        }
        let (c_len, t_len, f_len) = (s[0], s[1], s[2]);
        let mut data = vec![T::zero(); c_len * t_len * f_len];
        for c in 0..c_len {
            for t in 0..t_len {
                for f in 0..f_len {
                    data[(c * f_len + f) * t_len + t] =
                        self.value(a).data[(c * t_len + t) * f_len + f];
                }
            }
        }
        let value = Tensor {
            shape: vec![c_len * f_len, t_len],
            data,
        };
        let needs = self.needs(a);
        Ok(self.push(value, Op::ChannelsToFrames(a.0), needs))
    }

    /// Inverse of [`Graph::channels_to_frames`].
    pub fn frames_to_channels(&mut self, a: Var, channels: usize) -> Result<Var> {
        let s = self.value(a).shape.clone();
        if s.len() != 2 || s[0] % channels != 0 {
            return Err(Error::invalid("frames_to_channels needs [C*F, T]"));
        }
        let (cf, t_len) = (s[0], s[1]);
        let f_len = cf / channels;
        let mut data = vec![T::zero(); cf * t_len];
        for c in 0..channels {
            for t in 0..t_len {
                for f in 0..f_len {
                    data[(c * t_len + t) * f_len + f] =
                        self.value(a).data[(c * f_len + f) * t_len + t];
                }
            }
        }
        let value = Tensor {
            shape: vec![channels, t_len, f_len],
            data,
        };
        let needs = self.needs(a);
        Ok(self.push(
            value,
            Op::FramesToChannels {
                x: a.0,
                channels,
            },
            needs,
        ))
    }

    /// Mean over all elements, producing a scalar.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        if self.value(a).is_empty() {
            return Err(Error::invalid("mean of empty tensor"));
        }
        let n = T::from_f64(self.value(a).len() as f64);
        let sum = self
            .value(a)
            .data
            .iter()
            .fold(T::zero(), |acc, &v| acc + v);
        let needs = self.needs(a);
        Ok(self.push(Tensor::scalar(sum / n), Op::Mean(a.0), needs))
    }

    /// Reverse pass from a scalar loss. Populates gradients on every
    /// parameter node that the loss depends on. A second call without a
    /// fresh graph is an error.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::invalid(
                "backward already ran on this graph; build a new one",
            ));
        }
        if !self.nodes[loss.0].value.is_scalar() {
            return Err(Error::invalid(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[loss.0].value.shape
            )));
        }
        if !self.nodes[loss.0].value.scalar_value().is_finite() {
            return Err(Error::invalid("loss is not finite"));
        }
        self.backward_done = true;
        self.nodes[loss.0].grad = Some(Tensor::scalar(T::one()));

        for i in (0..=loss.0).rev() {
            if !self.nodes[i].needs_grad || self.nodes[i].grad.is_none() {
                continue;
            }
            let grad = self.nodes[i].grad.take().unwrap();
            let op = self.nodes[i].op.clone();
            self.propagate(i, &op, &grad)?;
            self.nodes[i].grad = Some(grad);
        }
        Ok(())
    }

    fn accumulate(&mut self, node: usize, delta: Tensor<T>) {
        if !self.nodes[node].needs_grad {
            return;
        }
        match &mut self.nodes[node].grad {
            Some(g) => {
                for (dst, src) in g.data.iter_mut().zip(delta.data.iter()) {
                    *dst = *dst + *src;
                }
            }
            slot => *slot = Some(delta),
        }
    }

    fn propagate(&mut self, node: usize, op: &Op<T>, grad: &Tensor<T>) -> Result<()> {
        match *op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(a, grad.clone());
                self.accumulate(b, grad.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(a, grad.clone());
                let neg = Tensor {
                    shape: grad.shape.clone(),
                    data: grad.data.iter().map(|&v| -v).collect(),
                };
                self.accumulate(b, neg);
            }
            Op::Mul(a, b) => {
                let da = Tensor {
                    shape: grad.shape.clone(),
                    data: grad
                        .data
                        .iter()
                        .zip(self.nodes[b].value.data.iter())
                        .map(|(&g, &v)| g * v)
                        .collect(),
                };
                let db = Tensor {
                    shape: grad.shape.clone(),
                    data: grad
                        .data
                        .iter()
                        .zip(self.nodes[a].value.data.iter())
                        .map(|(&g, &v)| g * v)
                        .collect(),
                };
                self.accumulate(a, da);
                self.accumulate(b, db);
            }
            Op::Scale(a, c) => {
                let da = Tensor {
                    shape: grad.shape.clone(),
                    data: grad.data.iter().map(|&g| g * c).collect(),
                };
                self.accumulate(a, da);
            }
            Op::Sigmoid(a) => {
                let y = &self.nodes[node].value;
                let one = T::one();
                let da = Tensor {
                    shape: grad.shape.clone(),
                    data: grad
                        .data
                        .iter()
                        .zip(y.data.iter())
                        .map(|(&g, &s)| g * s * (one - s))
                        .collect(),
                };
                self.accumulate(a, da);
            }
            Op::Relu(a) => {
                let da = Tensor {
                    shape: grad.shape.clone(),
                    data: grad
                        .data
                        .iter()
                        .zip(self.nodes[a].value.data.iter())
                        .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
                        .collect(),
                };
                self.accumulate(a, da);
            }
            Op::PRelu { x, slope } => {
                let channels = self.nodes[slope].value.len();
                let plane = self.nodes[x].value.len() / channels;
                let mut dx = Tensor::zeros(&self.nodes[x].value.shape);
                let mut ds = Tensor::zeros(&[channels]);
                for c in 0..channels {
                    let s = self.nodes[slope].value.data[c];
                    for i in 0..plane {
                        let idx = c * plane + i;
                        let xv = self.nodes[x].value.data[idx];
                        let g = grad.data[idx];
                        if xv > T::zero() {
                            dx.data[idx] = g;
                        } else {
                            dx.data[idx] = g * s;
                            ds.data[c] = ds.data[c] + g * xv;
                        }
                    }
                }
                self.accumulate(x, dx);
                self.accumulate(slope, ds);
            }
            Op::Linear { x, w, b } => {
                let (t_len, f_in) = (
                    self.nodes[x].value.shape[0],
                    self.nodes[x].value.shape[1],
                );
                let f_out = self.nodes[w].value.shape[0];
                if self.nodes[x].needs_grad {
                    // dx [T, F_in] = grad [T, F_out] * w [F_out, F_in]
                    let mut dx = Tensor::zeros(&[t_len, f_in]);
                    unsafe {
                        T::gemm(
                            t_len,
                            f_out,
                            f_in,
                            T::one(),
                            grad.data.as_ptr(),
                            f_out as isize,
                            1,
                            self.nodes[w].value.data.as_ptr(),
                            f_in as isize,
                            1,
                            T::zero(),
                            dx.data.as_mut_ptr(),
                            f_in as isize,
                            1,
                        );
                    }
                    self.accumulate(x, dx);
                }
                if self.nodes[w].needs_grad {
                    // dw [F_out, F_in] = grad^T [F_out, T] * x [T, F_in]
                    let mut dw = Tensor::zeros(&[f_out, f_in]);
                    unsafe {
                        T::gemm(
                            f_out,
                            t_len,
                            f_in,
                            T::one(),
                            grad.data.as_ptr(),
                            1,
                            f_out as isize,
                            self.nodes[x].value.data.as_ptr(),
                            f_in as isize,
                            1,
                            T::zero(),
                            dw.data.as_mut_ptr(),
                            f_in as isize,
                            1,
                        );
                    }
                    self.accumulate(w, dw);
                }
                if self.nodes[b].needs_grad {
                    let mut db = Tensor::zeros(&[f_out]);
                    for row in grad.data.chunks_exact(f_out) {
                        for (d, &g) in db.data.iter_mut().zip(row.iter()) {
                            *d = *d + g;
                        }
                    }
                    self.accumulate(b, db);
                }
            }
            Op::Conv2d { x, w, b, stride_f } => {
                self.conv2d_backward(node, x, w, b, stride_f, grad)?;
            }
            Op::Deconv2d { x, w, b, stride_f } => {
                self.deconv2d_backward(node, x, w, b, stride_f, grad)?;
            }
            Op::Conv1d { x, w, b, dilation } => {
                self.conv1d_backward(x, w, b, dilation, grad);
            }
            Op::InstanceNorm { x, gamma, beta } => {
                self.instance_norm_backward(x, gamma, beta, grad);
            }
            Op::CumulativeNorm { x, gamma, beta } => {
                self.cumulative_norm_backward(x, gamma, beta, grad);
            }
            Op::ConcatChannels(a, b) => {
                let na = self.nodes[a].value.len();
                let da = Tensor {
                    shape: self.nodes[a].value.shape.clone(),
                    data: grad.data[..na].to_vec(),
                };
                let db = Tensor {
                    shape: self.nodes[b].value.shape.clone(),
                    data: grad.data[na..].to_vec(),
                };
                self.accumulate(a, da);
                self.accumulate(b, db);
            }
            Op::Reshape(a) => {
                let da = Tensor {
                    shape: self.nodes[a].value.shape.clone(),
                    data: grad.data.clone(),
                };
                self.accumulate(a, da);
            }
            Op::ChannelsToFrames(a) => {
                let s = &self.nodes[a].value.shape;
                let (c_len, t_len, f_len) = (s[0], s[1], s[2]);
                let mut da = Tensor::zeros(s);
                for c in 0..c_len {
                    for t in 0..t_len {
                        for f in 0..f_len {
                            da.data[(c * t_len + t) * f_len + f] =
                                grad.data[(c * f_len + f) * t_len + t];
                        }
                    }
                }
                self.accumulate(a, da);
            }
            Op::FramesToChannels { x, channels } => {
                let s = &self.nodes[x].value.shape;
                let (cf, t_len) = (s[0], s[1]);
                let f_len = cf / channels;
                let mut da = Tensor::zeros(s);
                for c in 0..channels {
                    for t in 0..t_len {
                        for f in 0..f_len {
                            da.data[(c * f_len + f) * t_len + t] =
                                grad.data[(c * t_len + t) * f_len + f];
                        }
                    }
                }
                self.accumulate(x, da);
            }
            Op::Mean(a) => {
                let n = T::from_f64(self.nodes[a].value.len() as f64);
                let g = grad.scalar_value() / n;
                let da = Tensor::filled(&self.nodes[a].value.shape, g);
                self.accumulate(a, da);
            }
        }
        Ok(())
    }

    fn conv2d_backward(
        &mut self,
        node: usize,
        x: usize,
        w: usize,
        b: usize,
        stride_f: usize,
        grad: &Tensor<T>,
    ) -> Result<()> {
        let (c_in, t_len, f_in) = (
            self.nodes[x].value.shape[0],
            self.nodes[x].value.shape[1],
            self.nodes[x].value.shape[2],
        );
        let ws = &self.nodes[w].value.shape;
        let (c_out, k_t, k_f) = (ws[0], ws[2], ws[3]);
        let f_out = self.nodes[node].value.shape[2];
        let plane = t_len * f_out;
        let k_dim = c_in * k_t * k_f;

        if self.nodes[w].needs_grad {
            let cols = im2col(&self.nodes[x].value, k_t, k_f, stride_f, f_out);
            let mut dw = Tensor::zeros(&self.nodes[w].value.shape);
            unsafe {
                // dw [c_out, k_dim] = grad [c_out, plane] * cols^T [plane, k_dim]
                T::gemm(
                    c_out,
                    plane,
                    k_dim,
                    T::one(),
                    grad.data.as_ptr(),
                    plane as isize,
                    1,
                    cols.as_ptr(),
                    1,
                    plane as isize,
                    T::zero(),
                    dw.data.as_mut_ptr(),
                    k_dim as isize,
                    1,
                );
            }
            self.accumulate(w, dw);
        }
        if self.nodes[b].needs_grad {
            let mut db = Tensor::zeros(&[c_out]);
            for c in 0..c_out {
                db.data[c] = grad.data[c * plane..(c + 1) * plane]
                    .iter()
                    .fold(T::zero(), |acc, &v| acc + v);
            }
            self.accumulate(b, db);
        }
        if self.nodes[x].needs_grad {
            // dcols [k_dim, plane] = w^T [k_dim, c_out] * grad [c_out, plane]
            let mut dcols = vec![T::zero(); k_dim * plane];
            unsafe {
                T::gemm(
                    k_dim,
                    c_out,
                    plane,
                    T::one(),
                    self.nodes[w].value.data.as_ptr(),
                    1,
                    k_dim as isize,
                    grad.data.as_ptr(),
                    plane as isize,
                    1,
                    T::zero(),
                    dcols.as_mut_ptr(),
                    plane as isize,
                    1,
                );
            }
            let mut dx = Tensor::zeros(&[c_in, t_len, f_in]);
            let mut r = 0;
            for ci in 0..c_in {
                for dt in 0..k_t {
                    for df in 0..k_f {
                        let row = &dcols[r * plane..(r + 1) * plane];
                        r += 1;
                        for t in 0..t_len {
                            let src_t = (t + dt) as isize - (k_t as isize - 1);
                            if src_t < 0 {
                                continue;
                            }
                            let base = (ci * t_len + src_t as usize) * f_in + df;
                            for fo in 0..f_out {
                                dx.data[base + fo * stride_f] =
                                    dx.data[base + fo * stride_f] + row[t * f_out + fo];
                            }
                        }
                    }
                }
            }
            self.accumulate(x, dx);
        }
        Ok(())
    }

    fn deconv2d_backward(
        &mut self,
        node: usize,
        x: usize,
        w: usize,
        b: usize,
        stride_f: usize,
        grad: &Tensor<T>,
    ) -> Result<()> {
        let (c_in, t_len, f_in) = (
            self.nodes[x].value.shape[0],
            self.nodes[x].value.shape[1],
            self.nodes[x].value.shape[2],
        );
        let ws = &self.nodes[w].value.shape;
        let (c_out, k_t, k_f) = (ws[1], ws[2], ws[3]);
        let f_out = self.nodes[node].value.shape[2];
        let plane_in = t_len * f_in;
        let plane_out = t_len * f_out;
        let k_dim = c_out * k_t * k_f;

        // Gather grad into [(c_out, k_t, k_f), (t, f_in)] layout: entry is
        // grad[co, t + dt, f * stride_f + df] (zero when t + dt >= T).
        let mut gcols = vec![T::zero(); k_dim * plane_in];
        let mut r = 0;
        for co in 0..c_out {
            for dt in 0..k_t {
                for df in 0..k_f {
                    let dst = &mut gcols[r * plane_in..(r + 1) * plane_in];
                    r += 1;
                    for t in 0..t_len {
                        let u = t + dt;
                        if u >= t_len {
                            break;
                        }
                        let src = &grad.data[co * plane_out + u * f_out..];
                        for f in 0..f_in {
                            dst[t * f_in + f] = src[f * stride_f + df];
                        }
                    }
                }
            }
        }

        if self.nodes[x].needs_grad {
            // dx [c_in, plane_in] = w [c_in, k_dim] * gcols [k_dim, plane_in]
            let mut dx = Tensor::zeros(&[c_in, t_len, f_in]);
            unsafe {
                T::gemm(
                    c_in,
                    k_dim,
                    plane_in,
                    T::one(),
                    self.nodes[w].value.data.as_ptr(),
                    k_dim as isize,
                    1,
                    gcols.as_ptr(),
                    plane_in as isize,
                    1,
                    T::zero(),
                    dx.data.as_mut_ptr(),
                    plane_in as isize,
                    1,
                );
            }
            self.accumulate(x, dx);
        }
        if self.nodes[w].needs_grad {
            // dw [c_in, k_dim] = x [c_in, plane_in] * gcols^T [plane_in, k_dim]
            let mut dw = Tensor::zeros(&self.nodes[w].value.shape);
            unsafe {
                T::gemm(
                    c_in,
                    plane_in,
                    k_dim,
                    T::one(),
                    self.nodes[x].value.data.as_ptr(),
                    plane_in as isize,
                    1,
                    gcols.as_ptr(),
                    1,
                    plane_in as isize,
                    T::zero(),
                    dw.data.as_mut_ptr(),
                    k_dim as isize,
                    1,
                );
            }
            self.accumulate(w, dw);
        }
        if self.nodes[b].needs_grad {
            let mut db = Tensor::zeros(&[c_out]);
            for c in 0..c_out {
                db.data[c] = grad.data[c * plane_out..(c + 1) * plane_out]
                    .iter()
                    .fold(T::zero(), |acc, &v| acc + v);
            }
            self.accumulate(b, db);
        }
        Ok(())
    }

    fn conv1d_backward(&mut self, x: usize, w: usize, b: usize, dilation: usize, grad: &Tensor<T>) {
        let (c_in, t_len) = (
            self.nodes[x].value.shape[0],
            self.nodes[x].value.shape[1],
        );
        let (c_out, k) = (
            self.nodes[w].value.shape[0],
            self.nodes[w].value.shape[2],
        );
        if self.nodes[b].needs_grad {
            let mut db = Tensor::zeros(&[c_out]);
            for co in 0..c_out {
                db.data[co] = grad.data[co * t_len..(co + 1) * t_len]
                    .iter()
                    .fold(T::zero(), |acc, &v| acc + v);
            }
            self.accumulate(b, db);
        }
        if self.nodes[w].needs_grad {
            let mut dw = Tensor::zeros(&self.nodes[w].value.shape);
            for co in 0..c_out {
                let g = &grad.data[co * t_len..(co + 1) * t_len];
                for ci in 0..c_in {
                    let xv = &self.nodes[x].value.data[ci * t_len..(ci + 1) * t_len];
                    for kk in 0..k {
                        let shift = (k - 1 - kk) * dilation;
                        let mut acc = T::zero();
                        for t in shift..t_len {
                            acc = acc + g[t] * xv[t - shift];
                        }
                        dw.data[(co * c_in + ci) * k + kk] = acc;
                    }
                }
            }
            self.accumulate(w, dw);
        }
        if self.nodes[x].needs_grad {
            let mut dx = Tensor::zeros(&[c_in, t_len]);
            for co in 0..c_out {
                let g = &grad.data[co * t_len..(co + 1) * t_len];
                for ci in 0..c_in {
                    for kk in 0..k {
                        let wv = self.nodes[w].value.data[(co * c_in + ci) * k + kk];
                        if wv == T::zero() {
                            continue;
                        }
                        let shift = (k - 1 - kk) * dilation;
                        for t in shift..t_len {
                            dx.data[ci * t_len + t - shift] =
                                dx.data[ci * t_len + t - shift] + wv * g[t];
                        }
                    }
                }
            }
            self.accumulate(x, dx);
        }
    }

    fn instance_norm_backward(&mut self, x: usize, gamma: usize, beta: usize, grad: &Tensor<T>) {
        let channels = self.nodes[gamma].value.len();
        let plane = self.nodes[x].value.len() / channels;
        let mut dx = Tensor::zeros(&self.nodes[x].value.shape);
        let mut dgamma = Tensor::zeros(&[channels]);
        let mut dbeta = Tensor::zeros(&[channels]);
        let n = T::from_f64(plane as f64);
        for c in 0..channels {
            let xs = &self.nodes[x].value.data[c * plane..(c + 1) * plane];
            let g = self.nodes[gamma].value.data[c];
            let (mean, inv_std) = plane_stats(xs);
            let gs = &grad.data[c * plane..(c + 1) * plane];

            let mut sum_g = T::zero();
            let mut sum_gx = T::zero();
            for (i, &gv) in gs.iter().enumerate() {
                let xhat = (xs[i] - mean) * inv_std;
                sum_g = sum_g + gv;
                sum_gx = sum_gx + gv * xhat;
                dgamma.data[c] = dgamma.data[c] + gv * xhat;
                dbeta.data[c] = dbeta.data[c] + gv;
            }
            let mg = sum_g / n;
            let mgx = sum_gx / n;
            for i in 0..plane {
                let xhat = (xs[i] - mean) * inv_std;
                dx.data[c * plane + i] = g * inv_std * (gs[i] - mg - xhat * mgx);
            }
        }
        self.accumulate(x, dx);
        self.accumulate(gamma, dgamma);
        self.accumulate(beta, dbeta);
    }

    fn cumulative_norm_backward(&mut self, x: usize, gamma: usize, beta: usize, grad: &Tensor<T>) {
        let shape = self.nodes[x].value.shape.clone();
        let channels = shape[0];
        let t_len = shape[1];
        let f_len: usize = shape[2..].iter().product::<usize>().max(1);
        let eps = NORM_EPS;

        let mut dx = Tensor::zeros(&shape);
        let mut dgamma = Tensor::zeros(&[channels]);
        let mut dbeta = Tensor::zeros(&[channels]);

        for c in 0..channels {
            let plane = &self.nodes[x].value.data[c * t_len * f_len..(c + 1) * t_len * f_len];
            let gs = &grad.data[c * t_len * f_len..(c + 1) * t_len * f_len];
            let g = Scalar::to_f64(self.nodes[gamma].value.data[c]);

            // forward stats per frame
            let mut mean = vec![0.0f64; t_len];
            let mut inv_std = vec![0.0f64; t_len];
            let mut sum = 0.0f64;
            let mut sq = 0.0f64;
            for t in 0..t_len {
                for f in 0..f_len {
                    let v = Scalar::to_f64(plane[t * f_len + f]);
                    sum += v;
                    sq += v * v;
                }
                let n = ((t + 1) * f_len) as f64;
                let m = sum / n;
                let var = (sq / n - m * m).max(0.0);
                mean[t] = m;
                inv_std[t] = 1.0 / (var + eps).sqrt();
            }

            // per-frame aggregates of incoming gradient (scaled by gamma)
            let mut frame_sum = vec![0.0f64; t_len]; // A_t
            let mut frame_dot = vec![0.0f64; t_len]; // C_t
            for t in 0..t_len {
                let mut a = 0.0;
                let mut cdot = 0.0;
                for f in 0..f_len {
                    let gv = Scalar::to_f64(gs[t * f_len + f]) * g;
                    let xc = Scalar::to_f64(plane[t * f_len + f]) - mean[t];
                    a += gv;
                    cdot += gv * xc;
                    dgamma.data[c] = dgamma.data[c]
                        + T::from_f64(Scalar::to_f64(gs[t * f_len + f]) * xc * inv_std[t]);
                    dbeta.data[c] = dbeta.data[c] + gs[t * f_len + f];
                }
                frame_sum[t] = a;
                frame_dot[t] = cdot;
            }

            // suffix sums: P = sum_{t>=t'} r A / n; Q = sum C r^3 / n;
            // R = sum C r^3 mu / n
            let mut p_suf = 0.0f64;
            let mut q_suf = 0.0f64;
            let mut r_suf = 0.0f64;
            let mut p = vec![0.0f64; t_len];
            let mut q = vec![0.0f64; t_len];
            let mut rr = vec![0.0f64; t_len];
            for t in (0..t_len).rev() {
                let n = ((t + 1) * f_len) as f64;
                let r3 = inv_std[t] * inv_std[t] * inv_std[t];
                p_suf += inv_std[t] * frame_sum[t] / n;
                q_suf += frame_dot[t] * r3 / n;
                r_suf += frame_dot[t] * r3 * mean[t] / n;
                p[t] = p_suf;
                q[t] = q_suf;
                rr[t] = r_suf;
            }

            for t in 0..t_len {
                for f in 0..f_len {
                    let gv = Scalar::to_f64(gs[t * f_len + f]) * g;
                    let xv = Scalar::to_f64(plane[t * f_len + f]);
                    let d = gv * inv_std[t] - p[t] - xv * q[t] + rr[t];
                    dx.data[c * t_len * f_len + t * f_len + f] = T::from_f64(d);
                }
            }
        }
        self.accumulate(x, dx);
        self.accumulate(gamma, dgamma);
        self.accumulate(beta, dbeta);
    }
}

fn plane_stats<T: Scalar>(xs: &[T]) -> (T, T) {
    let mut sum = 0.0f64;
    let mut sq = 0.0f64;
    for &v in xs {
        let v = Scalar::to_f64(v);
        sum += v;
        sq += v * v;
    }
    let n = xs.len() as f64;
    let mean = sum / n;
    let var = (sq / n - mean * mean).max(0.0);
    (T::from_f64(mean), T::from_f64(1.0 / (var + NORM_EPS).sqrt()))
}

/// Lower `x [C_in, T, F]` into the convolution matrix
/// `[(c_in, k_t, k_f), (t, f_out)]` with causal time padding.
fn im2col<T: Scalar>(
    x: &Tensor<T>,
    k_t: usize,
    k_f: usize,
    stride_f: usize,
    f_out: usize,
) -> Vec<T> {
    let (c_in, t_len, f_in) = (x.shape[0], x.shape[1], x.shape[2]);
    let plane = t_len * f_out;
    let mut cols = vec![T::zero(); c_in * k_t * k_f * plane];
    let mut r = 0;
    for ci in 0..c_in {
        for dt in 0..k_t {
            for df in 0..k_f {
                let dst = &mut cols[r * plane..(r + 1) * plane];
                r += 1;
                for t in 0..t_len {
                    let src_t = (t + dt) as isize - (k_t as isize - 1);
                    if src_t < 0 {
                        continue;
                    }
                    let src = &x.data[(ci * t_len + src_t as usize) * f_in + df..];
                    let row = &mut dst[t * f_out..(t + 1) * f_out];
                    for (fo, out) in row.iter_mut().enumerate() {
                        *out = src[fo * stride_f];
                    }
                }
            }
        }
    }
    cols
}
