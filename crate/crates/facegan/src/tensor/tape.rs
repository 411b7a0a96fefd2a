//! Reverse-mode tape. Forward ops append nodes in topological order;
//! `backward` replays the tape in reverse, visiting each node once.
//!
//! Gradients accumulate across `backward` calls until the tape is dropped,
//! so calling it twice doubles every gradient. Parameters registered through
//! [`Tape::param`] are tracked by name and reported by [`Tape::param_grads`];
//! everything else participates in the graph but is not reported.

use std::collections::BTreeMap;

use super::kernels::{self, ConvArgs};
use super::optim::Parameter;
use super::{sc, Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a node on a tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Gradients keyed by parameter name, in deterministic (sorted) order.
pub type GradMap<T> = BTreeMap<String, Tensor<T>>;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ActKind {
    /// `x.max(0) + alpha * x.min(0)`; `alpha` must lie in (0, 1).
    LeakyRelu(f64),
    Relu,
    Tanh,
}

enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        transpose: bool,
    },
    Dense {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Activation {
        input: Var,
        kind: ActKind,
    },
    Reshape {
        input: Var,
    },
    ConcatChannels {
        a: Var,
        b: Var,
    },
    Pack2x2 {
        inputs: [Var; 4],
    },
    MeanAll {
        input: Var,
    },
    MeanScalars {
        inputs: Vec<Var>,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Scale {
        input: Var,
        factor: T,
    },
    InstanceNorm {
        input: Var,
        eps: T,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        target: usize,
    },
}

struct Node<T> {
    value: Tensor<T>,
    grad: Option<Tensor<T>>,
    op: Op<T>,
    param_name: Option<String>,
}

pub struct Tape<T: Scalar> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> Result<T> {
        self.nodes[v.0].value.scalar_value()
    }

    /// Accumulated gradient of a node, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.nodes[v.0].grad.as_ref()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Result<Var> {
        #[cfg(debug_assertions)]
        value.check_finite("tape op output")?;
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            param_name: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Untracked leaf: takes part in the graph but never appears in
    /// `param_grads`.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            op: Op::Leaf,
            param_name: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Tracked leaf carrying a parameter's current value. Names must be
    /// unique per tape.
    pub fn param(&mut self, p: &Parameter<T>) -> Result<Var> {
        if self
            .nodes
            .iter()
            .any(|n| n.param_name.as_deref() == Some(p.name.as_str()))
        {
            return Err(Error::InvalidArgument(format!(
                "parameter {:?} registered twice on one tape",
                p.name
            )));
        }
        self.nodes.push(Node {
            value: p.value.clone(),
            grad: None,
            op: Op::Leaf,
            param_name: Some(p.name.clone()),
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn conv_args<'a>(
        &self,
        input: &'a Tensor<T>,
        kernel: &'a Tensor<T>,
        stride: usize,
    ) -> Result<ConvArgs<'a, T>> {
        let (h, w, c_in) = input.hwc()?;
        let kshape = kernel.shape();
        if kshape.len() != 4 || kshape[0] != kshape[1] {
            return Err(Error::Shape(format!(
                "kernel must be [k,k,c_in,c_out], got {:?}",
                kshape
            )));
        }
        if kshape[2] != c_in {
            return Err(Error::Shape(format!(
                "channel mismatch: input has {}, kernel expects {}",
                c_in, kshape[2]
            )));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("stride must be >= 1".into()));
        }
        Ok(ConvArgs {
            input: input.data(),
            h,
            w,
            c_in,
            kernel: kernel.data(),
            k: kshape[0],
            c_out: kshape[3],
            stride,
        })
    }

    fn check_bias(bias: &Tensor<T>, c_out: usize) -> Result<()> {
        if bias.shape() != [c_out] {
            return Err(Error::Shape(format!(
                "bias shape {:?} does not match {} output channels",
                bias.shape(),
                c_out
            )));
        }
        Ok(())
    }

    /// Same-padded convolution: `[H,W,Cin] -> [ceil(H/s), ceil(W/s), Cout]`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var, stride: usize) -> Result<Var> {
        let args = self.conv_args(self.value(input), self.value(kernel), stride)?;
        Self::check_bias(self.value(bias), args.c_out)?;
        let (oh, ow) = (
            kernels::conv2d_out_dim(args.h, stride),
            kernels::conv2d_out_dim(args.w, stride),
        );
        let c_out = args.c_out;
        let data = kernels::conv2d_forward(&args, self.value(bias).data());
        let value = Tensor::new(vec![oh, ow, c_out], data)?;
        self.push(
            value,
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
                transpose: false,
            },
        )
    }

    /// Transposed convolution: `[H,W,Cin] -> [H*s, W*s, Cout]`.
    pub fn conv_transpose2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
    ) -> Result<Var> {
        let args = self.conv_args(self.value(input), self.value(kernel), stride)?;
        Self::check_bias(self.value(bias), args.c_out)?;
        let (oh, ow) = (args.h * stride, args.w * stride);
        let c_out = args.c_out;
        let data = kernels::convt2d_forward(&args, self.value(bias).data());
        let value = Tensor::new(vec![oh, ow, c_out], data)?;
        self.push(
            value,
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
                transpose: true,
            },
        )
    }

    /// Affine layer on a rank-1 input: `[N] x [N,M] + [M] -> [M]`.
    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        let x = self.value(input);
        let w = self.value(weight);
        let b = self.value(bias);
        if x.shape().len() != 1 {
            return Err(Error::Shape(format!(
                "dense input must be rank-1, got {:?}",
                x.shape()
            )));
        }
        if w.shape().len() != 2 || w.shape()[0] != x.numel() {
            return Err(Error::Shape(format!(
                "dense weight {:?} does not accept input of length {}",
                w.shape(),
                x.numel()
            )));
        }
        let m = w.shape()[1];
        Self::check_bias(b, m)?;
        let data = kernels::dense_forward(x.data(), w.data(), b.data());
        let value = Tensor::new(vec![m], data)?;
        self.push(
            value,
            Op::Dense {
                input,
                weight,
                bias,
            },
        )
    }

    pub fn activation(&mut self, input: Var, kind: ActKind) -> Result<Var> {
        if let ActKind::LeakyRelu(alpha) = kind {
            if !(0.0 < alpha && alpha < 1.0) {
                return Err(Error::InvalidArgument(format!(
                    "leaky_relu alpha must lie in (0,1), got {alpha}"
                )));
            }
        }
        let value = match kind {
            ActKind::LeakyRelu(alpha) => {
                let a = sc::<T>(alpha);
                self.value(input)
                    .map(|x| if x > T::zero() { x } else { a * x })
            }
            ActKind::Relu => self.value(input).map(|x| x.max(T::zero())),
            ActKind::Tanh => self.value(input).map(|x| x.tanh()),
        };
        self.push(value, Op::Activation { input, kind })
    }

    /// Row-major flatten to rank 1: the inverse of `reshape` back to the
    /// original extents.
    pub fn flatten(&mut self, input: Var) -> Result<Var> {
        let n = self.value(input).numel();
        self.reshape(input, &[n])
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(input).reshape(shape)?;
        self.push(value, Op::Reshape { input })
    }

    /// Channel concatenation of two same-extent images, `a`'s channels first.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ha, wa, ca) = self.value(a).hwc()?;
        let (hb, wb, cb) = self.value(b).hwc()?;
        if (ha, wa) != (hb, wb) {
            return Err(Error::Shape(format!(
                "concat_channels spatial mismatch: {}x{} vs {}x{}",
                ha, wa, hb, wb
            )));
        }
        let mut out = Tensor::zeros(&[ha, wa, ca + cb]);
        let (ta, tb) = (self.value(a), self.value(b));
        for y in 0..ha {
            for x in 0..wa {
                for c in 0..ca {
                    out.set3(y, x, c, ta.at3(y, x, c));
                }
                for c in 0..cb {
                    out.set3(y, x, ca + c, tb.at3(y, x, c));
                }
            }
        }
        self.push(out, Op::ConcatChannels { a, b })
    }

    /// Stitch four same-shape images into a double-size one (row-major
    /// quadrant placement).
    pub fn pack2x2(&mut self, inputs: [Var; 4]) -> Result<Var> {
        let value = super::pack2x2_values([
            self.value(inputs[0]),
            self.value(inputs[1]),
            self.value(inputs[2]),
            self.value(inputs[3]),
        ])?;
        self.push(value, Op::Pack2x2 { inputs })
    }

    /// Arithmetic mean over all elements; gradient is `1/n` broadcast.
    pub fn mean_all(&mut self, input: Var) -> Result<Var> {
        let t = self.value(input);
        if t.numel() == 0 {
            return Err(Error::InvalidArgument("mean of an empty tensor".into()));
        }
        let n = sc::<T>(t.numel() as f64);
        let sum = t.data().iter().fold(T::zero(), |a, &b| a + b);
        self.push(Tensor::scalar(sum / n), Op::MeanAll { input })
    }

    /// Mean of a list of scalar nodes (e.g. per-sample critic scores).
    pub fn mean_scalars(&mut self, inputs: &[Var]) -> Result<Var> {
        if inputs.is_empty() {
            return Err(Error::InvalidArgument("mean of an empty score list".into()));
        }
        let mut sum = T::zero();
        for &v in inputs {
            sum = sum + self.scalar(v)?;
        }
        let n = sc::<T>(inputs.len() as f64);
        self.push(
            Tensor::scalar(sum / n),
            Op::MeanScalars {
                inputs: inputs.to_vec(),
            },
        )
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::Shape(format!(
                "add shape mismatch: {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| x + y)
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(value, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::Shape(format!(
                "sub shape mismatch: {:?} vs {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(&x, &y)| x - y)
            .collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        self.push(value, Op::Sub { a, b })
    }

    pub fn scale(&mut self, input: Var, factor: T) -> Result<Var> {
        let value = self.value(input).map(|x| x * factor);
        self.push(value, Op::Scale { input, factor })
    }

    pub fn neg(&mut self, input: Var) -> Result<Var> {
        self.scale(input, -T::one())
    }

    /// Per-channel normalization over spatial positions of an `[H,W,C]` map:
    /// `(x - mean_c) / sqrt(var_c + eps)`, no learned affine.
    pub fn instance_norm(&mut self, input: Var, eps: T) -> Result<Var> {
        let t = self.value(input);
        let (h, w, c) = t.hwc()?;
        let n = sc::<T>((h * w) as f64);
        let mut out = Tensor::zeros(&[h, w, c]);
        for ch in 0..c {
            let mut mean = T::zero();
            for y in 0..h {
                for x in 0..w {
                    mean = mean + t.at3(y, x, ch);
                }
            }
            mean = mean / n;
            let mut var = T::zero();
            for y in 0..h {
                for x in 0..w {
                    let d = t.at3(y, x, ch) - mean;
                    var = var + d * d;
                }
            }
            var = var / n;
            let istd = (var + eps).sqrt().recip();
            for y in 0..h {
                for x in 0..w {
                    out.set3(y, x, ch, (t.at3(y, x, ch) - mean) * istd);
                }
            }
        }
        self.push(out, Op::InstanceNorm { input, eps })
    }

    /// Scalar loss `logsumexp(logits) - logits[target]`, i.e. cross-entropy
    /// of the softmax against a one-hot target.
    pub fn softmax_cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var> {
        let t = self.value(logits);
        if t.shape().len() != 1 {
            return Err(Error::Shape(format!(
                "logits must be rank-1, got {:?}",
                t.shape()
            )));
        }
        if target >= t.numel() {
            return Err(Error::InvalidArgument(format!(
                "target class {} out of range for {} logits",
                target,
                t.numel()
            )));
        }
        let max = t.data().iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let sum_exp = t
            .data()
            .iter()
            .fold(T::zero(), |a, &b| a + (b - max).exp());
        let loss = max + sum_exp.ln() - t.data()[target];
        self.push(Tensor::scalar(loss), Op::SoftmaxCrossEntropy { logits, target })
    }

    /// Reverse pass from a scalar root. Adds this call's contributions into
    /// the persistently accumulated per-node gradients.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if !self.nodes[root.0].value.is_scalar() {
            return Err(Error::Shape(format!(
                "backward root must be scalar, got shape {:?}",
                self.nodes[root.0].value.shape()
            )));
        }
        // Per-call working buffers keep repeated backward calls linear:
        // contributions merge into the persistent grads only at the end.
        let mut local: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        local[root.0] = Some(Tensor::full(
            self.nodes[root.0].value.shape(),
            T::one(),
        ));

        for i in (0..=root.0).rev() {
            let Some(gout) = local[i].take() else {
                continue;
            };
            self.propagate(i, &gout, &mut local)?;
            match &mut self.nodes[i].grad {
                Some(acc) => acc.add_assign(&gout)?,
                slot @ None => *slot = Some(gout),
            }
        }
        Ok(())
    }

    fn add_local(local: &mut [Option<Tensor<T>>], v: Var, g: Tensor<T>) -> Result<()> {
        match &mut local[v.0] {
            Some(acc) => acc.add_assign(&g)?,
            slot @ None => *slot = Some(g),
        }
        Ok(())
    }

    fn propagate(
        &self,
        idx: usize,
        gout: &Tensor<T>,
        local: &mut [Option<Tensor<T>>],
    ) -> Result<()> {
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                kernel,
                bias,
                stride,
                transpose,
            } => {
                let args = self.conv_args(self.value(*input), self.value(*kernel), *stride)?;
                let mut gin = vec![T::zero(); self.value(*input).numel()];
                let mut gk = vec![T::zero(); self.value(*kernel).numel()];
                let mut gb = vec![T::zero(); self.value(*bias).numel()];
                if *transpose {
                    kernels::convt2d_backward(&args, gout.data(), &mut gin, &mut gk, &mut gb);
                } else {
                    kernels::conv2d_backward(&args, gout.data(), &mut gin, &mut gk, &mut gb);
                }
                Self::add_local(
                    local,
                    *input,
                    Tensor::new(self.value(*input).shape().to_vec(), gin)?,
                )?;
                Self::add_local(
                    local,
                    *kernel,
                    Tensor::new(self.value(*kernel).shape().to_vec(), gk)?,
                )?;
                Self::add_local(
                    local,
                    *bias,
                    Tensor::new(self.value(*bias).shape().to_vec(), gb)?,
                )?;
            }
            Op::Dense {
                input,
                weight,
                bias,
            } => {
                let x = self.value(*input);
                let w = self.value(*weight);
                let mut gin = vec![T::zero(); x.numel()];
                let mut gw = vec![T::zero(); w.numel()];
                let mut gb = vec![T::zero(); self.value(*bias).numel()];
                kernels::dense_backward(x.data(), w.data(), gout.data(), &mut gin, &mut gw, &mut gb);
                Self::add_local(local, *input, Tensor::new(x.shape().to_vec(), gin)?)?;
                Self::add_local(local, *weight, Tensor::new(w.shape().to_vec(), gw)?)?;
                Self::add_local(
                    local,
                    *bias,
                    Tensor::new(self.value(*bias).shape().to_vec(), gb)?,
                )?;
            }
            Op::Activation { input, kind } => {
                let x = self.value(*input);
                let y = &self.nodes[idx].value;
                let data: Vec<T> = match kind {
                    ActKind::LeakyRelu(alpha) => {
                        let a = sc::<T>(*alpha);
                        x.data()
                            .iter()
                            .zip(gout.data())
                            .map(|(&xv, &g)| if xv > T::zero() { g } else { a * g })
                            .collect()
                    }
                    ActKind::Relu => x
                        .data()
                        .iter()
                        .zip(gout.data())
                        .map(|(&xv, &g)| if xv > T::zero() { g } else { T::zero() })
                        .collect(),
                    ActKind::Tanh => y
                        .data()
                        .iter()
                        .zip(gout.data())
                        .map(|(&yv, &g)| g * (T::one() - yv * yv))
                        .collect(),
                };
                Self::add_local(local, *input, Tensor::new(x.shape().to_vec(), data)?)?;
            }
            Op::Reshape { input } => {
                let g = gout.reshape(self.value(*input).shape())?;
                Self::add_local(local, *input, g)?;
            }
            Op::ConcatChannels { a, b } => {
                let (h, w, ca) = self.value(*a).hwc()?;
                let cb = self.value(*b).hwc()?.2;
                let mut ga = Tensor::zeros(&[h, w, ca]);
                let mut gb = Tensor::zeros(&[h, w, cb]);
                for y in 0..h {
                    for x in 0..w {
                        for c in 0..ca {
                            ga.set3(y, x, c, gout.at3(y, x, c));
                        }
                        for c in 0..cb {
                            gb.set3(y, x, c, gout.at3(y, x, ca + c));
                        }
                    }
                }
                Self::add_local(local, *a, ga)?;
                Self::add_local(local, *b, gb)?;
            }
            Op::Pack2x2 { inputs } => {
                let quads = super::unpack2x2(gout)?;
                for (v, g) in inputs.iter().zip(quads.into_iter()) {
                    Self::add_local(local, *v, g)?;
                }
            }
            Op::MeanAll { input } => {
                let n = self.value(*input).numel();
                let g = gout.scalar_value()? / sc::<T>(n as f64);
                Self::add_local(
                    local,
                    *input,
                    Tensor::full(self.value(*input).shape(), g),
                )?;
            }
            Op::MeanScalars { inputs } => {
                let g = gout.scalar_value()? / sc::<T>(inputs.len() as f64);
                for &v in inputs {
                    Self::add_local(
                        local,
                        v,
                        Tensor::full(self.value(v).shape(), g),
                    )?;
                }
            }
            Op::Add { a, b } => {
                Self::add_local(local, *a, gout.clone())?;
                Self::add_local(local, *b, gout.clone())?;
            }
            Op::Sub { a, b } => {
                Self::add_local(local, *a, gout.clone())?;
                Self::add_local(local, *b, gout.map(|g| -g))?;
            }
            Op::Scale { input, factor } => {
                let f = *factor;
                Self::add_local(local, *input, gout.map(|g| g * f))?;
            }
            Op::InstanceNorm { input, eps } => {
                let x = self.value(*input);
                let y = &self.nodes[idx].value;
                let (h, w, c) = x.hwc()?;
                let n = sc::<T>((h * w) as f64);
                let mut gin = Tensor::zeros(&[h, w, c]);
                for ch in 0..c {
                    let mut mean = T::zero();
                    for yy in 0..h {
                        for xx in 0..w {
                            mean = mean + x.at3(yy, xx, ch);
                        }
                    }
                    mean = mean / n;
                    let mut var = T::zero();
                    for yy in 0..h {
                        for xx in 0..w {
                            let d = x.at3(yy, xx, ch) - mean;
                            var = var + d * d;
                        }
                    }
                    var = var / n;
                    let istd = (var + *eps).sqrt().recip();
                    let mut g_mean = T::zero();
                    let mut gy_dot_y = T::zero();
                    for yy in 0..h {
                        for xx in 0..w {
                            g_mean = g_mean + gout.at3(yy, xx, ch);
                            gy_dot_y = gy_dot_y + gout.at3(yy, xx, ch) * y.at3(yy, xx, ch);
                        }
                    }
                    g_mean = g_mean / n;
                    gy_dot_y = gy_dot_y / n;
                    for yy in 0..h {
                        for xx in 0..w {
                            let g = gout.at3(yy, xx, ch);
                            let yv = y.at3(yy, xx, ch);
                            gin.set3(yy, xx, ch, istd * (g - g_mean - yv * gy_dot_y));
                        }
                    }
                }
                Self::add_local(local, *input, gin)?;
            }
            Op::SoftmaxCrossEntropy { logits, target } => {
                let t = self.value(*logits);
                let g = gout.scalar_value()?;
                let max = t.data().iter().fold(T::neg_infinity(), |a, &b| a.max(b));
                let sum_exp = t
                    .data()
                    .iter()
                    .fold(T::zero(), |a, &b| a + (b - max).exp());
                let data: Vec<T> = t
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, &l)| {
                        let p = (l - max).exp() / sum_exp;
                        let delta = if i == *target { T::one() } else { T::zero() };
                        (p - delta) * g
                    })
                    .collect();
                Self::add_local(local, *logits, Tensor::new(t.shape().to_vec(), data)?)?;
            }
        }
        Ok(())
    }

    /// Accumulated gradients of every tracked parameter on this tape.
    /// Parameters unreachable from any backward root report zeros.
    pub fn param_grads(&self) -> GradMap<T> {
        let mut map = GradMap::new();
        for node in &self.nodes {
            if let Some(name) = &node.param_name {
                let g = node
                    .grad
                    .clone()
                    .unwrap_or_else(|| Tensor::zeros(node.value.shape()));
                map.insert(name.clone(), g);
            }
        }
        map
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::check_gradients_default;
    use crate::tensor::{fan_in_uniform, uniform};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn conv2d_table_shape_128() {
        // Encoder Conv1: 128x128x3 through a 7x7x3x64 kernel at stride 1.
        let mut r = rng(0);
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(uniform(&mut r, &[128, 128, 3], -1.0, 1.0));
        let k = tape.constant(fan_in_uniform(&mut r, &[7, 7, 3, 64], 147));
        let b = tape.constant(Tensor::zeros(&[64]));
        let y = tape.conv2d(x, k, b, 1).unwrap();
        assert_eq!(tape.value(y).shape(), &[128, 128, 64]);
    }

    #[test]
    fn conv2d_zero_input_zero_bias_gives_zero() {
        let mut r = rng(1);
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::zeros(&[6, 5, 2]));
        let k = tape.constant(fan_in_uniform(&mut r, &[3, 3, 2, 4], 18));
        let b = tape.constant(Tensor::zeros(&[4]));
        let y = tape.conv2d(x, k, b, 2).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv2d_rejects_channel_mismatch_and_zero_stride() {
        let mut r = rng(2);
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(uniform(&mut r, &[4, 4, 3], -1.0, 1.0));
        let k = tape.constant(fan_in_uniform(&mut r, &[3, 3, 2, 4], 18));
        let b = tape.constant(Tensor::zeros(&[4]));
        assert!(tape.conv2d(x, k, b, 1).is_err());
        let k_ok = tape.constant(fan_in_uniform(&mut r, &[3, 3, 3, 4], 27));
        assert!(tape.conv2d(x, k_ok, b, 0).is_err());
    }

    #[test]
    fn conv_transpose_table_shape_doubles() {
        // Decoder Deconv1: 8x8x64 -> 16x16x128 at stride 2.
        let mut r = rng(3);
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(uniform(&mut r, &[8, 8, 64], -1.0, 1.0));
        let k = tape.constant(fan_in_uniform(&mut r, &[3, 3, 64, 128], 576));
        let b = tape.constant(Tensor::zeros(&[128]));
        let y = tape.conv_transpose2d(x, k, b, 2).unwrap();
        assert_eq!(tape.value(y).shape(), &[16, 16, 128]);
    }

    #[test]
    fn dense_table_shape_16384_to_512() {
        let mut r = rng(4);
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(uniform(&mut r, &[16384], -1.0, 1.0));
        let w = tape.constant(fan_in_uniform(&mut r, &[16384, 512], 16384));
        let b = tape.constant(Tensor::zeros(&[512]));
        let y = tape.dense(x, w, b).unwrap();
        assert_eq!(tape.value(y).shape(), &[512]);
    }

    #[test]
    fn dense_identity_weight_is_identity() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::new(vec![3], vec![1.5, -2.0, 0.25]).unwrap());
        let w = tape.constant(Tensor::from_fn(&[3, 3], |i| {
            if i / 3 == i % 3 {
                1.0
            } else {
                0.0
            }
        }));
        let b = tape.constant(Tensor::zeros(&[3]));
        let y = tape.dense(x, w, b).unwrap();
        assert_eq!(tape.value(y).data(), tape.value(x).data());
    }

    #[test]
    fn activation_pointwise_definitions() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::new(vec![3], vec![0.0, -1.0, 2.0]).unwrap());
        let t = tape.activation(x, ActKind::Tanh).unwrap();
        assert_eq!(tape.value(t).data()[0], 0.0);
        let l = tape.activation(x, ActKind::LeakyRelu(0.2)).unwrap();
        assert!((tape.value(l).data()[1] + 0.2).abs() < 1e-7);
        assert_eq!(tape.value(l).data()[2], 2.0);
        let r = tape.activation(x, ActKind::Relu).unwrap();
        assert_eq!(tape.value(r).data(), &[0.0, 0.0, 2.0]);
        assert!(tape.activation(x, ActKind::LeakyRelu(1.5)).is_err());
    }

    #[test]
    fn flatten_is_row_major_and_reversible() {
        let mut r = rng(5);
        let mut tape = Tape::<f32>::new();
        let orig = uniform(&mut r, &[4, 4, 256], -1.0, 1.0);
        let x = tape.constant(orig.clone());
        let flat = tape.flatten(x).unwrap();
        assert_eq!(tape.value(flat).shape(), &[4096]);
        let back = tape.reshape(flat, &[4, 4, 256]).unwrap();
        assert_eq!(tape.value(back), &orig);
    }

    #[test]
    fn concat_keeps_first_input_channels_first() {
        let mut r = rng(6);
        let mut tape = Tape::<f32>::new();
        let a_t: Tensor<f32> = uniform(&mut r, &[3, 3, 2], -1.0, 1.0);
        let a = tape.constant(a_t.clone());
        let z = tape.constant(Tensor::zeros(&[3, 3, 3]));
        let cat = tape.concat_channels(a, z).unwrap();
        assert_eq!(tape.value(cat).shape(), &[3, 3, 5]);
        for y in 0..3 {
            for x in 0..3 {
                for c in 0..2 {
                    assert_eq!(tape.value(cat).at3(y, x, c), a_t.at3(y, x, c));
                }
                for c in 2..5 {
                    assert_eq!(tape.value(cat).at3(y, x, c), 0.0);
                }
            }
        }
        let bad = tape.constant(Tensor::zeros(&[2, 3, 1]));
        assert!(tape.concat_channels(a, bad).is_err());
    }

    #[test]
    fn mean_all_examples() {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap());
        let m = tape.mean_all(x).unwrap();
        assert_eq!(tape.scalar(m).unwrap(), 2.0);

        let c = tape.constant(Tensor::full(&[2, 2], 7.5));
        let mc = tape.mean_all(c).unwrap();
        assert_eq!(tape.scalar(mc).unwrap(), 7.5);

        let empty = tape.constant(Tensor::zeros(&[0]));
        assert!(tape.mean_all(empty).is_err());
    }

    #[test]
    fn backward_scaled_param_gets_the_scale() {
        let mut tape = Tape::<f64>::new();
        let p = Parameter::new("p", Tensor::scalar(2.0));
        let v = tape.param(&p).unwrap();
        let y = tape.scale(v, 3.5).unwrap();
        tape.backward(y).unwrap();
        let grads = tape.param_grads();
        assert_eq!(grads["p"].scalar_value().unwrap(), 3.5);
    }

    #[test]
    fn backward_accumulates_exactly_twice() {
        let mut tape = Tape::<f64>::new();
        let p = Parameter::new("p", Tensor::new(vec![2], vec![1.0, -1.0]).unwrap());
        let v = tape.param(&p).unwrap();
        let s = tape.scale(v, 2.0).unwrap();
        let m = tape.mean_all(s).unwrap();
        tape.backward(m).unwrap();
        let once = tape.param_grads()["p"].clone();
        tape.backward(m).unwrap();
        let twice = tape.param_grads()["p"].clone();
        for (a, b) in once.data().iter().zip(twice.data()) {
            assert_eq!(*b, 2.0 * *a);
        }
    }

    #[test]
    fn unreachable_param_reports_zero_gradient() {
        let mut tape = Tape::<f64>::new();
        let used = Parameter::new("used", Tensor::scalar(1.0));
        let unused = Parameter::new("unused", Tensor::new(vec![3], vec![1.0; 3]).unwrap());
        let u = tape.param(&used).unwrap();
        let _nu = tape.param(&unused).unwrap();
        let y = tape.scale(u, 2.0).unwrap();
        tape.backward(y).unwrap();
        let grads = tape.param_grads();
        assert_eq!(grads["used"].scalar_value().unwrap(), 2.0);
        assert!(grads["unused"].data().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn backward_rejects_non_scalar_root() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[3]));
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn duplicate_param_name_rejected() {
        let mut tape = Tape::<f32>::new();
        let p = Parameter::new("w", Tensor::scalar(1.0));
        tape.param(&p).unwrap();
        assert!(tape.param(&p).is_err());
    }

    #[test]
    fn tanh_gradient_matches_finite_differences() {
        let mut r = rng(7);
        let x: Tensor<f64> = uniform(&mut r, &[5], -2.0, 2.0);
        check_gradients_default(&[x], |tape, vars| {
            let a = tape.activation(vars[0], ActKind::Tanh)?;
            tape.mean_all(a)
        })
        .unwrap();
    }

    #[test]
    fn concat_gradient_flows_to_both_inputs() {
        let mut r = rng(8);
        let a: Tensor<f64> = uniform(&mut r, &[2, 2, 1], -1.0, 1.0);
        let b: Tensor<f64> = uniform(&mut r, &[2, 2, 2], -1.0, 1.0);
        check_gradients_default(&[a, b], |tape, vars| {
            let cat = tape.concat_channels(vars[0], vars[1])?;
            // Weight the channels asymmetrically so both slices matter.
            let sq = tape.instance_norm(cat, 0.1)?;
            tape.mean_all(sq)
        })
        .unwrap();
    }

    #[test]
    fn mean_gradient_matches_finite_differences() {
        let mut r = rng(9);
        let x: Tensor<f64> = uniform(&mut r, &[5], -1.0, 1.0);
        check_gradients_default(&[x], |tape, vars| tape.mean_all(vars[0])).unwrap();
    }

    #[test]
    fn composite_graph_gradients_match_finite_differences() {
        // conv -> activation -> dense -> mean, checked for every parameter.
        let mut r = rng(10);
        let x: Tensor<f64> = uniform(&mut r, &[4, 4, 2], -1.0, 1.0);
        let k: Tensor<f64> = uniform(&mut r, &[3, 3, 2, 3], -0.4, 0.4);
        let kb: Tensor<f64> = uniform(&mut r, &[3], -0.1, 0.1);
        let w: Tensor<f64> = uniform(&mut r, &[12, 4], -0.4, 0.4);
        let wb: Tensor<f64> = uniform(&mut r, &[4], -0.1, 0.1);
        check_gradients_default(&[x, k, kb, w, wb], |tape, v| {
            let c = tape.conv2d(v[0], v[1], v[2], 2)?;
            let a = tape.activation(c, ActKind::Tanh)?;
            let f = tape.flatten(a)?;
            let d = tape.dense(f, v[3], v[4])?;
            tape.mean_all(d)
        })
        .unwrap();
    }

    #[test]
    fn softmax_cross_entropy_gradient_and_value() {
        // Uniform logits: loss is ln(K).
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::zeros(&[4]));
        let l = tape.softmax_cross_entropy(x, 1).unwrap();
        assert!((tape.scalar(l).unwrap() - 4.0f64.ln()).abs() < 1e-12);

        let mut r = rng(11);
        let logits: Tensor<f64> = uniform(&mut r, &[5], -2.0, 2.0);
        check_gradients_default(&[logits], |tape, v| tape.softmax_cross_entropy(v[0], 3))
            .unwrap();
    }

    #[test]
    fn forward_and_gradients_are_bit_deterministic() {
        let run = || {
            let mut r = rng(12);
            let mut tape = Tape::<f32>::new();
            let p = Parameter::new("k", fan_in_uniform(&mut r, &[3, 3, 2, 2], 18));
            let x = tape.constant(uniform(&mut r, &[5, 5, 2], -1.0, 1.0));
            let k = tape.param(&p).unwrap();
            let b = tape.constant(Tensor::zeros(&[2]));
            let c = tape.conv2d(x, k, b, 2).unwrap();
            let a = tape.activation(c, ActKind::LeakyRelu(0.2)).unwrap();
            let m = tape.mean_all(a).unwrap();
            tape.backward(m).unwrap();
            (
                tape.value(m).data().to_vec(),
                tape.param_grads()["k"].data().to_vec(),
            )
        };
        let (v1, g1) = run();
        let (v2, g2) = run();
        assert_eq!(v1, v2);
        assert_eq!(g1, g2);
    }
}
