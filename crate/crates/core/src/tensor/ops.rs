//! Forward/backward operator pairs.
//!
//! Backward functions return gradients instead of accumulating them; the tape
//! decides where they go. Shapes are checked eagerly and mismatches are
//! configuration errors.

use rand::Rng;

use super::gemm::{gemm, View};
use super::Tensor;
use crate::error::{Error, Result};

pub const BCE_CLAMP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Train,
    Eval,
}

fn shape3(t: &Tensor, what: &str) -> Result<(usize, usize, usize)> {
    match *t.shape() {
        [a, b, c] => Ok((a, b, c)),
        ref s => Err(Error::config(format!("{what}: expected 3 axes, got {s:?}"))),
    }
}

fn shape2(t: &Tensor, what: &str) -> Result<(usize, usize)> {
    match *t.shape() {
        [a, b] => Ok((a, b)),
        ref s => Err(Error::config(format!("{what}: expected 2 axes, got {s:?}"))),
    }
}

// ---------------------------------------------------------------------------
// conv1d

/// Valid temporal cross-correlation.
///
/// `input` is `[batch, time, in_ch]`, `kernel` `[k, in_ch, out_ch]`, `bias`
/// `[out_ch]`; the output is `[batch, time - k + 1, out_ch]`. The window
/// `input[b, t..t+k, :]` is contiguous in row-major order, so every batch item is
/// a single GEMM against an overlapping-row view of the input.
pub fn conv1d_forward(input: &Tensor, kernel: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (batch, time, in_ch) = shape3(input, "conv1d input")?;
    let (k, kin, out_ch) = shape3(kernel, "conv1d kernel")?;
    if kin != in_ch {
        return Err(Error::config(format!(
            "conv1d: kernel expects {kin} input channels, input has {in_ch}"
        )));
    }
    bias.expect_shape(&[out_ch], "conv1d bias")?;
    if k == 0 || time < k {
        return Err(Error::config(format!(
            "conv1d: kernel length {k} does not fit {time} frames"
        )));
    }
    let t_out = time - k + 1;
    let mut out = vec![0.0; batch * t_out * out_ch];
    let w = View::row_major(kernel.data(), k * in_ch, out_ch);
    for b in 0..batch {
        let x = &input.data()[b * time * in_ch..(b + 1) * time * in_ch];
        let cols = View {
            data: x,
            rows: t_out,
            cols: k * in_ch,
            row_stride: in_ch,
            col_stride: 1,
        };
        let y = &mut out[b * t_out * out_ch..(b + 1) * t_out * out_ch];
        for row in y.chunks_exact_mut(out_ch) {
            row.copy_from_slice(bias.data());
        }
        gemm(1.0, cols, w, 1.0, y);
    }
    let out = Tensor::new(vec![batch, t_out, out_ch], out)?;
    out.check_finite("conv1d output")?;
    Ok(out)
}

pub struct Conv1dGrads {
    pub input: Tensor,
    pub kernel: Tensor,
    pub bias: Tensor,
}

pub fn conv1d_backward(input: &Tensor, kernel: &Tensor, upstream: &Tensor) -> Result<Conv1dGrads> {
    let (batch, time, in_ch) = shape3(input, "conv1d input")?;
    let (k, _, out_ch) = shape3(kernel, "conv1d kernel")?;
    let t_out = time + 1 - k;
    upstream.expect_shape(&[batch, t_out, out_ch], "conv1d upstream")?;

    let mut d_input = vec![0.0; input.len()];
    let mut d_kernel = vec![0.0; kernel.len()];
    let mut d_bias = vec![0.0; out_ch];
    let mut d_cols = vec![0.0; t_out * k * in_ch];
    let w_t = View::row_major(kernel.data(), k * in_ch, out_ch).t();

    for b in 0..batch {
        let x = &input.data()[b * time * in_ch..(b + 1) * time * in_ch];
        let dy = &upstream.data()[b * t_out * out_ch..(b + 1) * t_out * out_ch];
        for row in dy.chunks_exact(out_ch) {
            for (db, g) in d_bias.iter_mut().zip(row) {
                *db += g;
            }
        }
        let cols_t = View {
            data: x,
            rows: k * in_ch,
            cols: t_out,
            row_stride: 1,
            col_stride: in_ch,
        };
        let dy_view = View::row_major(dy, t_out, out_ch);
        gemm(1.0, cols_t, dy_view, 1.0, &mut d_kernel);

        gemm(1.0, dy_view, w_t, 0.0, &mut d_cols);
        let dx = &mut d_input[b * time * in_ch..(b + 1) * time * in_ch];
        let span = k * in_ch;
        for t in 0..t_out {
            let src = &d_cols[t * span..(t + 1) * span];
            for (d, s) in dx[t * in_ch..t * in_ch + span].iter_mut().zip(src) {
                *d += s;
            }
        }
    }
    Ok(Conv1dGrads {
        input: Tensor::new(input.shape().to_vec(), d_input)?,
        kernel: Tensor::new(kernel.shape().to_vec(), d_kernel)?,
        bias: Tensor::new(vec![out_ch], d_bias)?,
    })
}

// ---------------------------------------------------------------------------
// linear

/// `input [batch, in] x weight [in, out] + bias [out]`.
pub fn linear_forward(input: &Tensor, weight: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (batch, fin) = shape2(input, "linear input")?;
    let (win, fout) = shape2(weight, "linear weight")?;
    if win != fin {
        return Err(Error::config(format!(
            "linear: weight expects {win} features, input has {fin}"
        )));
    }
    bias.expect_shape(&[fout], "linear bias")?;
    let mut out = vec![0.0; batch * fout];
    for row in out.chunks_exact_mut(fout) {
        row.copy_from_slice(bias.data());
    }
    gemm(
        1.0,
        View::row_major(input.data(), batch, fin),
        View::row_major(weight.data(), fin, fout),
        1.0,
        &mut out,
    );
    let out = Tensor::new(vec![batch, fout], out)?;
    out.check_finite("linear output")?;
    Ok(out)
}

pub struct LinearGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

pub fn linear_backward(input: &Tensor, weight: &Tensor, upstream: &Tensor) -> Result<LinearGrads> {
    let (batch, fin) = shape2(input, "linear input")?;
    let (_, fout) = shape2(weight, "linear weight")?;
    upstream.expect_shape(&[batch, fout], "linear upstream")?;
    let dy = View::row_major(upstream.data(), batch, fout);

    let mut d_weight = vec![0.0; fin * fout];
    gemm(
        1.0,
        View::row_major(input.data(), batch, fin).t(),
        dy,
        0.0,
        &mut d_weight,
    );
    let mut d_input = vec![0.0; batch * fin];
    gemm(
        1.0,
        dy,
        View::row_major(weight.data(), fin, fout).t(),
        0.0,
        &mut d_input,
    );
    let mut d_bias = vec![0.0; fout];
    for row in upstream.data().chunks_exact(fout) {
        for (d, g) in d_bias.iter_mut().zip(row) {
            *d += g;
        }
    }
    Ok(LinearGrads {
        input: Tensor::new(vec![batch, fin], d_input)?,
        weight: Tensor::new(vec![fin, fout], d_weight)?,
        bias: Tensor::new(vec![fout], d_bias)?,
    })
}

// ---------------------------------------------------------------------------
// LSTM

/// Parameters of one LSTM layer. Gate blocks along the last axis are ordered
/// input, forget, cell candidate, output.
pub struct LstmWeights<'a> {
    /// `[in, 4 * hidden]`
    pub w_ih: &'a Tensor,
    /// `[hidden, 4 * hidden]`
    pub w_hh: &'a Tensor,
    /// `[4 * hidden]`
    pub bias: &'a Tensor,
}

impl LstmWeights<'_> {
    fn dims(&self) -> Result<(usize, usize)> {
        let (fin, g) = shape2(self.w_ih, "lstm w_ih")?;
        let (h, g2) = shape2(self.w_hh, "lstm w_hh")?;
        if g != 4 * h || g2 != 4 * h {
            return Err(Error::config(format!(
                "lstm: gate width must be 4*hidden (hidden {h}), got {g} and {g2}"
            )));
        }
        self.bias.expect_shape(&[4 * h], "lstm bias")?;
        Ok((fin, h))
    }
}

/// Per-step activations kept for backpropagation through time.
#[derive(Clone, Debug)]
pub struct LstmCache {
    pub batch: usize,
    pub time: usize,
    pub hidden: usize,
    /// Post-nonlinearity gates `[time, batch, 4H]`.
    gates: Vec<f64>,
    /// Cell states `[time + 1, batch, H]`, index 0 is the initial state.
    cells: Vec<f64>,
    /// Hidden states `[time + 1, batch, H]`, index 0 is the initial state.
    hiddens: Vec<f64>,
}

impl LstmCache {
    pub fn final_state(&self) -> (Tensor, Tensor) {
        let bh = self.batch * self.hidden;
        let t = self.time;
        (
            Tensor::new(
                vec![self.batch, self.hidden],
                self.hiddens[t * bh..(t + 1) * bh].to_vec(),
            )
            .expect("cache layout"),
            Tensor::new(
                vec![self.batch, self.hidden],
                self.cells[t * bh..(t + 1) * bh].to_vec(),
            )
            .expect("cache layout"),
        )
    }
}

#[inline]
pub(crate) fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Runs one LSTM layer over `input [batch, time, in]` from `state0 = (h0, c0)`.
/// Returns the hidden sequence `[batch, time, hidden]` and the BPTT cache.
pub fn lstm_forward(
    input: &Tensor,
    weights: &LstmWeights<'_>,
    state0: Option<(&Tensor, &Tensor)>,
) -> Result<(Tensor, LstmCache)> {
    let (batch, time, fin) = shape3(input, "lstm input")?;
    let (win, h) = weights.dims()?;
    if win != fin {
        return Err(Error::config(format!(
            "lstm: w_ih expects {win} features, input has {fin}"
        )));
    }
    let bh = batch * h;
    let g4 = 4 * h;
    let mut hiddens = vec![0.0; (time + 1) * bh];
    let mut cells = vec![0.0; (time + 1) * bh];
    if let Some((h0, c0)) = state0 {
        h0.expect_shape(&[batch, h], "lstm h0")?;
        c0.expect_shape(&[batch, h], "lstm c0")?;
        hiddens[..bh].copy_from_slice(h0.data());
        cells[..bh].copy_from_slice(c0.data());
    }

    // Input projection for every (b, t) at once: rows ordered b * time + t.
    let mut xw = vec![0.0; batch * time * g4];
    gemm(
        1.0,
        View::row_major(input.data(), batch * time, fin),
        View::row_major(weights.w_ih.data(), fin, g4),
        0.0,
        &mut xw,
    );

    let mut gates = vec![0.0; time * batch * g4];
    let mut z = vec![0.0; batch * g4];
    let w_hh = View::row_major(weights.w_hh.data(), h, g4);
    for t in 0..time {
        for b in 0..batch {
            let dst = &mut z[b * g4..(b + 1) * g4];
            let src = &xw[(b * time + t) * g4..(b * time + t + 1) * g4];
            for ((d, x), bias) in dst.iter_mut().zip(src).zip(weights.bias.data()) {
                *d = x + bias;
            }
        }
        let h_prev = &hiddens[t * bh..(t + 1) * bh];
        gemm(1.0, View::row_major(h_prev, batch, h), w_hh, 1.0, &mut z);

        let gate_t = &mut gates[t * batch * g4..(t + 1) * batch * g4];
        let (c_prev_all, c_rest) = cells.split_at_mut((t + 1) * bh);
        let c_prev = &c_prev_all[t * bh..];
        let c_next = &mut c_rest[..bh];
        let h_next = &mut hiddens[(t + 1) * bh..(t + 2) * bh];
        for b in 0..batch {
            let zb = &z[b * g4..(b + 1) * g4];
            let gb = &mut gate_t[b * g4..(b + 1) * g4];
            for j in 0..h {
                let i_g = logistic(zb[j]);
                let f_g = logistic(zb[h + j]);
                let c_g = zb[2 * h + j].tanh();
                let o_g = logistic(zb[3 * h + j]);
                gb[j] = i_g;
                gb[h + j] = f_g;
                gb[2 * h + j] = c_g;
                gb[3 * h + j] = o_g;
                let c = f_g * c_prev[b * h + j] + i_g * c_g;
                c_next[b * h + j] = c;
                h_next[b * h + j] = o_g * c.tanh();
            }
        }
    }

    let mut out = vec![0.0; batch * time * h];
    for t in 0..time {
        for b in 0..batch {
            out[(b * time + t) * h..(b * time + t + 1) * h]
                .copy_from_slice(&hiddens[(t + 1) * bh + b * h..(t + 1) * bh + (b + 1) * h]);
        }
    }
    let out = Tensor::new(vec![batch, time, h], out)?;
    out.check_finite("lstm hidden states")?;
    Ok((
        out,
        LstmCache {
            batch,
            time,
            hidden: h,
            gates,
            cells,
            hiddens,
        },
    ))
}

pub struct LstmGrads {
    pub input: Tensor,
    pub w_ih: Tensor,
    pub w_hh: Tensor,
    pub bias: Tensor,
    pub h0: Tensor,
    pub c0: Tensor,
}

/// Full backpropagation through time. `upstream` is the gradient with respect
/// to the hidden sequence `[batch, time, hidden]`.
pub fn lstm_backward(
    input: &Tensor,
    weights: &LstmWeights<'_>,
    cache: &LstmCache,
    upstream: &Tensor,
) -> Result<LstmGrads> {
    let (batch, time, fin) = shape3(input, "lstm input")?;
    let (_, h) = weights.dims()?;
    upstream.expect_shape(&[batch, time, h], "lstm upstream")?;
    let bh = batch * h;
    let g4 = 4 * h;

    let mut d_w_hh = vec![0.0; h * g4];
    let mut d_bias = vec![0.0; g4];
    // dz for every (b, t), rows ordered b * time + t to mirror the forward projection.
    let mut dz_all = vec![0.0; batch * time * g4];
    let mut dh_next = vec![0.0; bh];
    let mut dc_next = vec![0.0; bh];
    let mut dz = vec![0.0; batch * g4];
    let w_hh_t = View::row_major(weights.w_hh.data(), h, g4).t();

    for t in (0..time).rev() {
        let gate_t = &cache.gates[t * batch * g4..(t + 1) * batch * g4];
        let c_prev = &cache.cells[t * bh..(t + 1) * bh];
        let c_cur = &cache.cells[(t + 1) * bh..(t + 2) * bh];
        for b in 0..batch {
            let gb = &gate_t[b * g4..(b + 1) * g4];
            let up = &upstream.data()[(b * time + t) * h..(b * time + t + 1) * h];
            let dzb = &mut dz[b * g4..(b + 1) * g4];
            for j in 0..h {
                let idx = b * h + j;
                let (i_g, f_g, c_g, o_g) = (gb[j], gb[h + j], gb[2 * h + j], gb[3 * h + j]);
                let tc = c_cur[idx].tanh();
                let dh = up[j] + dh_next[idx];
                let d_o = dh * tc;
                let dc = dh * o_g * (1.0 - tc * tc) + dc_next[idx];
                let d_i = dc * c_g;
                let d_g = dc * i_g;
                let d_f = dc * c_prev[idx];
                dc_next[idx] = dc * f_g;
                dzb[j] = d_i * i_g * (1.0 - i_g);
                dzb[h + j] = d_f * f_g * (1.0 - f_g);
                dzb[2 * h + j] = d_g * (1.0 - c_g * c_g);
                dzb[3 * h + j] = d_o * o_g * (1.0 - o_g);
            }
            dz_all[(b * time + t) * g4..(b * time + t + 1) * g4].copy_from_slice(dzb);
        }
        let h_prev = &cache.hiddens[t * bh..(t + 1) * bh];
        gemm(
            1.0,
            View::row_major(h_prev, batch, h).t(),
            View::row_major(&dz, batch, g4),
            1.0,
            &mut d_w_hh,
        );
        for row in dz.chunks_exact(g4) {
            for (d, g) in d_bias.iter_mut().zip(row) {
                *d += g;
            }
        }
        gemm(1.0, View::row_major(&dz, batch, g4), w_hh_t, 0.0, &mut dh_next);
    }

    let dz_view = View::row_major(&dz_all, batch * time, g4);
    let mut d_w_ih = vec![0.0; fin * g4];
    gemm(
        1.0,
        View::row_major(input.data(), batch * time, fin).t(),
        dz_view,
        0.0,
        &mut d_w_ih,
    );
    let mut d_input = vec![0.0; batch * time * fin];
    gemm(
        1.0,
        dz_view,
        View::row_major(weights.w_ih.data(), fin, g4).t(),
        0.0,
        &mut d_input,
    );
    Ok(LstmGrads {
        input: Tensor::new(vec![batch, time, fin], d_input)?,
        w_ih: Tensor::new(vec![fin, g4], d_w_ih)?,
        w_hh: Tensor::new(vec![h, g4], d_w_hh)?,
        bias: Tensor::new(vec![g4], d_bias)?,
        h0: Tensor::new(vec![batch, h], dh_next)?,
        c0: Tensor::new(vec![batch, h], dc_next)?,
    })
}

// ---------------------------------------------------------------------------
// elementwise and heads

pub fn relu(input: &Tensor) -> Tensor {
    input.map(|x| x.max(0.0))
}

/// Gradient of ReLU given its *output*.
pub fn relu_backward(output: &Tensor, upstream: &Tensor) -> Tensor {
    let data = output
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&y, &g)| if y > 0.0 { g } else { 0.0 })
        .collect();
    Tensor::new(output.shape().to_vec(), data).expect("same shape")
}

pub fn sigmoid(input: &Tensor) -> Tensor {
    input.map(logistic)
}

/// Gradient of the logistic function given its *output*.
pub fn sigmoid_backward(output: &Tensor, upstream: &Tensor) -> Tensor {
    let data = output
        .data()
        .iter()
        .zip(upstream.data())
        .map(|(&s, &g)| g * s * (1.0 - s))
        .collect();
    Tensor::new(output.shape().to_vec(), data).expect("same shape")
}

/// Row-wise softmax over `[batch, classes]`, max-subtracted.
pub fn softmax(input: &Tensor) -> Result<Tensor> {
    let (_, classes) = shape2(input, "softmax input")?;
    let mut out = input.clone();
    for row in out.data_mut().chunks_exact_mut(classes) {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for x in row.iter_mut() {
            *x = (*x - max).exp();
            sum += *x;
        }
        for x in row.iter_mut() {
            *x /= sum;
        }
    }
    out.check_finite("softmax")?;
    Ok(out)
}

/// Vector-Jacobian product of softmax given its *output*.
pub fn softmax_backward(output: &Tensor, upstream: &Tensor) -> Result<Tensor> {
    let (_, classes) = shape2(output, "softmax output")?;
    let mut out = upstream.clone();
    for (g, s) in out
        .data_mut()
        .chunks_exact_mut(classes)
        .zip(output.data().chunks_exact(classes))
    {
        let dot: f64 = g.iter().zip(s).map(|(a, b)| a * b).sum();
        for (gi, si) in g.iter_mut().zip(s) {
            *gi = si * (*gi - dot);
        }
    }
    Ok(out)
}

/// Inverted dropout. Returns the output and the per-element scale that was
/// applied (0 or `1/(1-p)`), or `None` when the op is the identity.
pub fn dropout<R: Rng + ?Sized>(
    input: &Tensor,
    p: f64,
    mode: Mode,
    rng: &mut R,
) -> Result<(Tensor, Option<Tensor>)> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::config(format!("dropout probability {p} not in [0, 1)")));
    }
    if mode == Mode::Eval || p == 0.0 {
        return Ok((input.clone(), None));
    }
    let keep = 1.0 / (1.0 - p);
    let mask = Tensor::from_fn(input.shape(), |_| {
        if rng.random::<f64>() < p {
            0.0
        } else {
            keep
        }
    });
    let out = Tensor::new(
        input.shape().to_vec(),
        input
            .data()
            .iter()
            .zip(mask.data())
            .map(|(x, m)| x * m)
            .collect(),
    )?;
    Ok((out, Some(mask)))
}

/// Mean cross-entropy of `logits [batch, classes]` against class indices, and
/// its gradient with respect to the logits.
pub fn cross_entropy_loss(logits: &Tensor, targets: &[usize]) -> Result<(f64, Tensor)> {
    let (batch, classes) = shape2(logits, "cross entropy logits")?;
    if targets.len() != batch {
        return Err(Error::config(format!(
            "cross entropy: {} targets for batch of {batch}",
            targets.len()
        )));
    }
    if let Some(&t) = targets.iter().find(|&&t| t >= classes) {
        return Err(Error::config(format!(
            "cross entropy: target {t} out of range for {classes} classes"
        )));
    }
    let mut grad = softmax(logits)?;
    let mut loss = 0.0;
    for (b, (row, &t)) in logits.data().chunks_exact(classes).zip(targets).enumerate() {
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f64>().ln();
        loss += lse - row[t];
        grad.data_mut()[b * classes + t] -= 1.0;
    }
    let n = batch as f64;
    grad.data_mut().iter_mut().for_each(|g| *g /= n);
    let loss = loss / n;
    if !loss.is_finite() {
        return Err(Error::numeric("cross entropy loss is not finite"));
    }
    Ok((loss, grad))
}

/// Mean binary cross-entropy on probabilities (already passed through a
/// sigmoid), clamped to `[BCE_CLAMP, 1 - BCE_CLAMP]`. Returns the gradient with
/// respect to the probabilities.
pub fn bce_loss(probs: &Tensor, targets: &Tensor) -> Result<(f64, Tensor)> {
    targets.expect_shape(probs.shape(), "bce targets")?;
    let n = probs.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(probs.len());
    for (&p, &t) in probs.data().iter().zip(targets.data()) {
        let p = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
        loss -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
        grad.push((-t / p + (1.0 - t) / (1.0 - p)) / n);
    }
    let loss = loss / n;
    if !loss.is_finite() {
        return Err(Error::numeric("binary cross entropy loss is not finite"));
    }
    Ok((loss, Tensor::new(probs.shape().to_vec(), grad)?))
}
