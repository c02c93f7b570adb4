//! Forward-pass recording.
//!
//! Each recorded node produces exactly one value, so a [`ValueId`] indexes both
//! the node list and the value arena. The tape is what backpropagation walks in
//! reverse and what relevance propagation reads its activations from.

use rand::Rng;

use super::ops::{self, LstmCache, LstmWeights, Mode};
use super::{ParamId, ParamSet, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ValueId(pub usize);

#[derive(Clone, Debug)]
pub enum Op {
    Input,
    /// Gather channels along the last axis of `[batch, time, channels]`.
    SliceChannels { src: ValueId, channels: Vec<usize> },
    Conv1d { src: ValueId, kernel: ParamId, bias: ParamId },
    Relu { src: ValueId },
    /// `[batch, ...] -> [batch, product(...)]`.
    Flatten { src: ValueId },
    Linear { src: ValueId, weight: ParamId, bias: ParamId },
    Lstm {
        src: ValueId,
        w_ih: ParamId,
        w_hh: ParamId,
        bias: ParamId,
        cache: LstmCache,
    },
    /// `[batch, time, f] -> [batch, f]`, the final time step.
    LastStep { src: ValueId },
    /// `[batch, f] -> [batch, 1, f]`.
    Unsqueeze { src: ValueId },
    /// Concatenation along the last axis.
    Concat { srcs: Vec<ValueId> },
    /// `mask` holds the applied scale per element; `None` means identity.
    Dropout { src: ValueId, mask: Option<Tensor> },
    Softmax { src: ValueId },
    Sigmoid { src: ValueId },
}

impl Op {
    pub fn kind(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::SliceChannels { .. } => "slice_channels",
            Op::Conv1d { .. } => "conv1d",
            Op::Relu { .. } => "relu",
            Op::Flatten { .. } => "flatten",
            Op::Linear { .. } => "linear",
            Op::Lstm { .. } => "lstm",
            Op::LastStep { .. } => "last_step",
            Op::Unsqueeze { .. } => "unsqueeze",
            Op::Concat { .. } => "concat",
            Op::Dropout { .. } => "dropout",
            Op::Softmax { .. } => "softmax",
            Op::Sigmoid { .. } => "sigmoid",
        }
    }

    pub fn sources(&self) -> Vec<ValueId> {
        match self {
            Op::Input => vec![],
            Op::Concat { srcs } => srcs.clone(),
            Op::SliceChannels { src, .. }
            | Op::Conv1d { src, .. }
            | Op::Relu { src }
            | Op::Flatten { src }
            | Op::Linear { src, .. }
            | Op::Lstm { src, .. }
            | Op::LastStep { src }
            | Op::Unsqueeze { src }
            | Op::Dropout { src, .. }
            | Op::Softmax { src }
            | Op::Sigmoid { src } => vec![*src],
        }
    }
}

#[derive(Clone, Debug)]
pub struct Node {
    pub op: Op,
}

#[derive(Clone, Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    values: Vec<Tensor>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, id: ValueId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn value(&self, id: ValueId) -> &Tensor {
        &self.values[id.0]
    }

    fn push(&mut self, op: Op, value: Tensor) -> ValueId {
        self.nodes.push(Node { op });
        self.values.push(value);
        ValueId(self.values.len() - 1)
    }

    pub fn input(&mut self, value: Tensor) -> ValueId {
        self.push(Op::Input, value)
    }

    pub fn slice_channels(&mut self, src: ValueId, channels: &[usize]) -> Result<ValueId> {
        let out = slice_channels(self.value(src), channels)?;
        Ok(self.push(
            Op::SliceChannels {
                src,
                channels: channels.to_vec(),
            },
            out,
        ))
    }

    pub fn conv1d(
        &mut self,
        params: &ParamSet,
        src: ValueId,
        kernel: ParamId,
        bias: ParamId,
    ) -> Result<ValueId> {
        let out = ops::conv1d_forward(
            self.value(src),
            &params.get(kernel).value,
            &params.get(bias).value,
        )?;
        Ok(self.push(Op::Conv1d { src, kernel, bias }, out))
    }

    pub fn relu(&mut self, src: ValueId) -> ValueId {
        let out = ops::relu(self.value(src));
        self.push(Op::Relu { src }, out)
    }

    pub fn flatten(&mut self, src: ValueId) -> Result<ValueId> {
        let x = self.value(src);
        let b = x.dim(0);
        let out = x.clone().reshape(&[b, x.len() / b.max(1)])?;
        Ok(self.push(Op::Flatten { src }, out))
    }

    pub fn linear(
        &mut self,
        params: &ParamSet,
        src: ValueId,
        weight: ParamId,
        bias: ParamId,
    ) -> Result<ValueId> {
        let out = ops::linear_forward(
            self.value(src),
            &params.get(weight).value,
            &params.get(bias).value,
        )?;
        Ok(self.push(Op::Linear { src, weight, bias }, out))
    }

    pub fn lstm(
        &mut self,
        params: &ParamSet,
        src: ValueId,
        w_ih: ParamId,
        w_hh: ParamId,
        bias: ParamId,
    ) -> Result<ValueId> {
        let weights = LstmWeights {
            w_ih: &params.get(w_ih).value,
            w_hh: &params.get(w_hh).value,
            bias: &params.get(bias).value,
        };
        let (out, cache) = ops::lstm_forward(self.value(src), &weights, None)?;
        Ok(self.push(
            Op::Lstm {
                src,
                w_ih,
                w_hh,
                bias,
                cache,
            },
            out,
        ))
    }

    pub fn last_step(&mut self, src: ValueId) -> Result<ValueId> {
        let out = last_step(self.value(src))?;
        Ok(self.push(Op::LastStep { src }, out))
    }

    pub fn unsqueeze(&mut self, src: ValueId) -> Result<ValueId> {
        let x = self.value(src);
        let (b, f) = (x.dim(0), x.len() / x.dim(0).max(1));
        let out = x.clone().reshape(&[b, 1, f])?;
        Ok(self.push(Op::Unsqueeze { src }, out))
    }

    pub fn concat(&mut self, srcs: &[ValueId]) -> Result<ValueId> {
        let parts: Vec<&Tensor> = srcs.iter().map(|&s| self.value(s)).collect();
        let out = concat_last(&parts)?;
        Ok(self.push(
            Op::Concat {
                srcs: srcs.to_vec(),
            },
            out,
        ))
    }

    pub fn dropout<R: Rng + ?Sized>(
        &mut self,
        src: ValueId,
        p: f64,
        mode: Mode,
        rng: &mut R,
    ) -> Result<ValueId> {
        let (out, mask) = ops::dropout(self.value(src), p, mode, rng)?;
        Ok(self.push(Op::Dropout { src, mask }, out))
    }

    pub fn softmax(&mut self, src: ValueId) -> Result<ValueId> {
        let out = ops::softmax(self.value(src))?;
        Ok(self.push(Op::Softmax { src }, out))
    }

    pub fn sigmoid(&mut self, src: ValueId) -> ValueId {
        let out = ops::sigmoid(self.value(src));
        self.push(Op::Sigmoid { src }, out)
    }

    /// Reverse-mode pass. `seeds` are upstream gradients for chosen values
    /// (usually the loss gradient at the logits or probabilities). Parameter
    /// gradients are accumulated into `params`. The returned vector is indexed
    /// by value id; only entries of [`Op::Input`] nodes are populated.
    pub fn backward(
        &self,
        params: &mut ParamSet,
        seeds: Vec<(ValueId, Tensor)>,
    ) -> Result<Vec<Option<Tensor>>> {
        let mut grads: Vec<Option<Tensor>> = vec![None; self.nodes.len()];
        for (id, g) in seeds {
            g.expect_shape(self.value(id).shape(), "backward seed")?;
            add_grad(&mut grads, id, g)?;
        }
        for idx in (0..self.nodes.len()).rev() {
            if matches!(self.nodes[idx].op, Op::Input) {
                continue;
            }
            let Some(up) = grads[idx].take() else {
                continue;
            };
            let out = &self.values[idx];
            match &self.nodes[idx].op {
                Op::Input => unreachable!("inputs are skipped"),
                Op::SliceChannels { src, channels } => {
                    let x = self.value(*src);
                    let (b, t, c) = (x.dim(0), x.dim(1), x.dim(2));
                    let mut g = Tensor::zeros(&[b, t, c]);
                    let w = channels.len();
                    for (row_out, row_in) in up
                        .data()
                        .chunks_exact(w)
                        .zip(g.data_mut().chunks_exact_mut(c))
                    {
                        for (v, &ch) in row_out.iter().zip(channels) {
                            row_in[ch] += v;
                        }
                    }
                    add_grad(&mut grads, *src, g)?;
                }
                Op::Conv1d { src, kernel, bias } => {
                    let g = ops::conv1d_backward(self.value(*src), &params.get(*kernel).value, &up)?;
                    params.get_mut(*kernel).accumulate(g.kernel.data());
                    params.get_mut(*bias).accumulate(g.bias.data());
                    add_grad(&mut grads, *src, g.input)?;
                }
                Op::Relu { src } => {
                    add_grad(&mut grads, *src, ops::relu_backward(out, &up))?;
                }
                Op::Flatten { src } | Op::Unsqueeze { src } => {
                    let shape = self.value(*src).shape().to_vec();
                    add_grad(&mut grads, *src, up.reshape(&shape)?)?;
                }
                Op::Linear { src, weight, bias } => {
                    let g = ops::linear_backward(self.value(*src), &params.get(*weight).value, &up)?;
                    params.get_mut(*weight).accumulate(g.weight.data());
                    params.get_mut(*bias).accumulate(g.bias.data());
                    add_grad(&mut grads, *src, g.input)?;
                }
                Op::Lstm {
                    src,
                    w_ih,
                    w_hh,
                    bias,
                    cache,
                } => {
                    let g = {
                        let weights = LstmWeights {
                            w_ih: &params.get(*w_ih).value,
                            w_hh: &params.get(*w_hh).value,
                            bias: &params.get(*bias).value,
                        };
                        ops::lstm_backward(self.value(*src), &weights, cache, &up)?
                    };
                    params.get_mut(*w_ih).accumulate(g.w_ih.data());
                    params.get_mut(*w_hh).accumulate(g.w_hh.data());
                    params.get_mut(*bias).accumulate(g.bias.data());
                    add_grad(&mut grads, *src, g.input)?;
                }
                Op::LastStep { src } => {
                    let x = self.value(*src);
                    let (b, t, f) = (x.dim(0), x.dim(1), x.dim(2));
                    let mut g = Tensor::zeros(&[b, t, f]);
                    for bi in 0..b {
                        let dst = ((bi * t) + t - 1) * f;
                        g.data_mut()[dst..dst + f].copy_from_slice(up.row(bi));
                    }
                    add_grad(&mut grads, *src, g)?;
                }
                Op::Concat { srcs } => {
                    let rows = up.len() / up.dim(up.ndim() - 1);
                    let total = up.dim(up.ndim() - 1);
                    let mut offset = 0;
                    for s in srcs {
                        let part = self.value(*s);
                        let w = part.dim(part.ndim() - 1);
                        let mut g = Tensor::zeros(part.shape());
                        for r in 0..rows {
                            g.data_mut()[r * w..(r + 1) * w].copy_from_slice(
                                &up.data()[r * total + offset..r * total + offset + w],
                            );
                        }
                        offset += w;
                        add_grad(&mut grads, *s, g)?;
                    }
                }
                Op::Dropout { src, mask } => {
                    let g = match mask {
                        None => up,
                        Some(m) => Tensor::new(
                            up.shape().to_vec(),
                            up.data().iter().zip(m.data()).map(|(a, b)| a * b).collect(),
                        )?,
                    };
                    add_grad(&mut grads, *src, g)?;
                }
                Op::Softmax { src } => {
                    add_grad(&mut grads, *src, ops::softmax_backward(out, &up)?)?;
                }
                Op::Sigmoid { src } => {
                    add_grad(&mut grads, *src, ops::sigmoid_backward(out, &up))?;
                }
            }
        }
        Ok(grads)
    }

    /// Recomputes every value from the recorded inputs and the current
    /// parameters. Dropout reuses its recorded mask.
    pub fn replay(&self, params: &ParamSet) -> Result<Vec<Tensor>> {
        let mut vals: Vec<Tensor> = Vec::with_capacity(self.nodes.len());
        for (idx, node) in self.nodes.iter().enumerate() {
            let v = |id: &ValueId| -> &Tensor { &vals[id.0] };
            let out = match &node.op {
                Op::Input => self.values[idx].clone(),
                Op::SliceChannels { src, channels } => slice_channels(v(src), channels)?,
                Op::Conv1d { src, kernel, bias } => ops::conv1d_forward(
                    v(src),
                    &params.get(*kernel).value,
                    &params.get(*bias).value,
                )?,
                Op::Relu { src } => ops::relu(v(src)),
                Op::Flatten { src } => {
                    let x = v(src);
                    x.clone().reshape(&[x.dim(0), x.len() / x.dim(0).max(1)])?
                }
                Op::Linear { src, weight, bias } => ops::linear_forward(
                    v(src),
                    &params.get(*weight).value,
                    &params.get(*bias).value,
                )?,
                Op::Lstm {
                    src,
                    w_ih,
                    w_hh,
                    bias,
                    ..
                } => {
                    let weights = LstmWeights {
                        w_ih: &params.get(*w_ih).value,
                        w_hh: &params.get(*w_hh).value,
                        bias: &params.get(*bias).value,
                    };
                    ops::lstm_forward(v(src), &weights, None)?.0
                }
                Op::LastStep { src } => last_step(v(src))?,
                Op::Unsqueeze { src } => {
                    let x = v(src);
                    x.clone().reshape(&[x.dim(0), 1, x.len() / x.dim(0).max(1)])?
                }
                Op::Concat { srcs } => {
                    let parts: Vec<&Tensor> = srcs.iter().map(v).collect();
                    concat_last(&parts)?
                }
                Op::Dropout { src, mask } => match mask {
                    None => v(src).clone(),
                    Some(m) => Tensor::new(
                        m.shape().to_vec(),
                        v(src).data().iter().zip(m.data()).map(|(a, b)| a * b).collect(),
                    )?,
                },
                Op::Softmax { src } => ops::softmax(v(src))?,
                Op::Sigmoid { src } => ops::sigmoid(v(src)),
            };
            vals.push(out);
        }
        Ok(vals)
    }
}

fn add_grad(grads: &mut [Option<Tensor>], id: ValueId, g: Tensor) -> Result<()> {
    match &mut grads[id.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

fn slice_channels(x: &Tensor, channels: &[usize]) -> Result<Tensor> {
    if x.ndim() != 3 {
        return Err(Error::config(format!(
            "slice_channels: expected [batch, time, channels], got {:?}",
            x.shape()
        )));
    }
    let c = x.dim(2);
    if let Some(&bad) = channels.iter().find(|&&ch| ch >= c) {
        return Err(Error::config(format!(
            "slice_channels: channel {bad} out of range for {c} channels"
        )));
    }
    let mut data = Vec::with_capacity(x.len() / c * channels.len());
    for row in x.data().chunks_exact(c) {
        data.extend(channels.iter().map(|&ch| row[ch]));
    }
    Tensor::new(vec![x.dim(0), x.dim(1), channels.len()], data)
}

fn last_step(x: &Tensor) -> Result<Tensor> {
    if x.ndim() != 3 || x.dim(1) == 0 {
        return Err(Error::config(format!(
            "last_step: expected non-empty [batch, time, f], got {:?}",
            x.shape()
        )));
    }
    let (b, t, f) = (x.dim(0), x.dim(1), x.dim(2));
    let mut data = Vec::with_capacity(b * f);
    for bi in 0..b {
        let start = (bi * t + t - 1) * f;
        data.extend_from_slice(&x.data()[start..start + f]);
    }
    Tensor::new(vec![b, f], data)
}

fn concat_last(parts: &[&Tensor]) -> Result<Tensor> {
    let first = parts
        .first()
        .ok_or_else(|| Error::config("concat: no inputs"))?;
    let lead = &first.shape()[..first.ndim() - 1];
    let rows: usize = lead.iter().product();
    let mut total = 0;
    for p in parts {
        if &p.shape()[..p.ndim() - 1] != lead {
            return Err(Error::config(format!(
                "concat: leading axes differ ({:?} vs {:?})",
                p.shape(),
                first.shape()
            )));
        }
        total += p.dim(p.ndim() - 1);
    }
    let mut data = Vec::with_capacity(rows * total);
    for r in 0..rows {
        for p in parts {
            let w = p.dim(p.ndim() - 1);
            data.extend_from_slice(&p.data()[r * w..(r + 1) * w]);
        }
    }
    let mut shape = lead.to_vec();
    shape.push(total);
    Tensor::new(shape, data)
}
