//! Epsilon-rule layer-wise relevance propagation over a recorded forward
//! tape, and per-limb RMS of the positive input relevance.

use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::LimbGrouping;
use crate::error::{Error, Result};
use crate::model::{HeadKind, Model};
use crate::tensor::ops::{self, Mode};
use crate::tensor::{Op, ParamSet, Tape, Tensor, ValueId};

pub const DEFAULT_EPSILON: f64 = 1e-9;

/// Relevance flowing through one linear or convolution layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerRelevance {
    pub node: usize,
    pub kind: String,
    /// Relevance arriving at the layer output.
    pub sum_out: f64,
    /// Relevance handed to the layer input.
    pub sum_in: f64,
    /// Share kept by the bias terms.
    pub bias_absorbed: f64,
    /// Share kept by the epsilon stabilizer.
    pub stabilizer_absorbed: f64,
}

impl LayerRelevance {
    /// `|sum_in + bias_absorbed - sum_out| / |sum_out|`.
    pub fn conservation_error(&self) -> f64 {
        (self.sum_in + self.bias_absorbed - self.sum_out).abs() / self.sum_out.abs()
    }
}

/// Relevance of every tape value (`None` where nothing arrived) plus the
/// per-layer bookkeeping, in the order the layers were visited.
pub struct Propagation {
    pub relevance: Vec<Option<Tensor>>,
    pub layers: Vec<LayerRelevance>,
}

fn stabilize(z: f64, epsilon: f64) -> f64 {
    // sign(0) = +1
    z + if z >= 0.0 { epsilon } else { -epsilon }
}

fn add(into: &mut [Option<Tensor>], id: ValueId, r: Tensor) -> Result<()> {
    match &mut into[id.0] {
        Some(acc) => {
            acc.expect_shape(r.shape(), "relevance")?;
            for (a, b) in acc.data_mut().iter_mut().zip(r.data()) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(r),
    }
    Ok(())
}

/// Propagates `seed` (relevance at value `from`) back to the inputs.
pub fn propagate(tape: &Tape, params: &ParamSet, from: ValueId, seed: Tensor, epsilon: f64) -> Result<Propagation> {
    if !(epsilon > 0.0) {
        return Err(Error::config("epsilon must be > 0"));
    }
    seed.expect_shape(tape.value(from).shape(), "relevance seed")?;
    let mut rel: Vec<Option<Tensor>> = vec![None; tape.len()];
    rel[from.0] = Some(seed);
    let mut layers = Vec::new();
    for idx in (0..=from.0).rev() {
        let op = &tape.node(ValueId(idx)).op;
        if matches!(op, Op::Input) {
            continue;
        }
        let Some(r) = rel[idx].take() else {
            continue;
        };
        let z = tape.value(ValueId(idx));
        match op {
            Op::Input => unreachable!("inputs are skipped"),
            Op::Conv1d { src, bias, .. } | Op::Linear { src, bias, .. } => {
                let b = &params.get(*bias).value;
                let fout = b.len();
                let s = Tensor::new(
                    z.shape().to_vec(),
                    z.data().iter().zip(r.data()).map(|(&z, &r)| r / stabilize(z, epsilon)).collect(),
                )?;
                let mut bias_absorbed = 0.0;
                let mut stabilizer_absorbed = 0.0;
                for (i, (&sv, &zv)) in s.data().iter().zip(z.data()).enumerate() {
                    bias_absorbed += sv * b.data()[i % fout];
                    stabilizer_absorbed += sv * (stabilize(zv, epsilon) - zv);
                }
                let a = tape.value(*src);
                let back = match op {
                    Op::Conv1d { kernel, .. } => ops::conv1d_backward(a, &params.get(*kernel).value, &s)?.input,
                    Op::Linear { weight, .. } => ops::linear_backward(a, &params.get(*weight).value, &s)?.input,
                    _ => unreachable!(),
                };
                let r_in = Tensor::new(a.shape().to_vec(), a.data().iter().zip(back.data()).map(|(x, c)| x * c).collect())?;
                layers.push(LayerRelevance {
                    node: idx,
                    kind: op.kind().to_string(),
                    sum_out: r.sum(),
                    sum_in: r_in.sum(),
                    bias_absorbed,
                    stabilizer_absorbed,
                });
                add(&mut rel, *src, r_in)?;
            }
            // inactive units already received zero relevance from above
            Op::Relu { src } => add(&mut rel, *src, r)?,
            Op::Dropout { src, mask } => {
                if mask.is_some() {
                    return Err(Error::config("relevance propagation needs an eval-mode tape"));
                }
                add(&mut rel, *src, r)?;
            }
            Op::Flatten { src } | Op::Unsqueeze { src } => {
                let shape = tape.value(*src).shape().to_vec();
                add(&mut rel, *src, r.reshape(&shape)?)?;
            }
            Op::SliceChannels { src, channels } => {
                let x = tape.value(*src);
                let c = x.dim(2);
                let mut out = Tensor::zeros(x.shape());
                for (row_r, row_o) in r.data().chunks_exact(channels.len()).zip(out.data_mut().chunks_exact_mut(c)) {
                    for (v, &ch) in row_r.iter().zip(channels) {
                        row_o[ch] += v;
                    }
                }
                add(&mut rel, *src, out)?;
            }
            Op::Concat { srcs } => {
                let total = r.dim(r.ndim() - 1);
                let rows = r.len() / total;
                let mut offset = 0;
                for s in srcs {
                    let part = tape.value(*s);
                    let w = part.dim(part.ndim() - 1);
                    let mut out = Tensor::zeros(part.shape());
                    for row in 0..rows {
                        out.data_mut()[row * w..(row + 1) * w]
                            .copy_from_slice(&r.data()[row * total + offset..row * total + offset + w]);
                    }
                    offset += w;
                    add(&mut rel, *s, out)?;
                }
            }
            Op::Lstm { .. } | Op::LastStep { .. } | Op::Softmax { .. } | Op::Sigmoid { .. } => {
                return Err(Error::Unsupported(format!(
                    "relevance propagation through {} layers",
                    op.kind()
                )));
            }
        }
    }
    Ok(Propagation { relevance: rel, layers })
}

#[derive(Clone, Debug, PartialEq)]
pub struct RelevanceMap {
    /// `[window_len, channels]`.
    pub relevance: Tensor,
    pub epsilon: f64,
    pub class: usize,
    /// The explained pre-softmax score.
    pub score: f64,
}

pub struct Explanation {
    pub map: RelevanceMap,
    pub layers: Vec<LayerRelevance>,
}

/// Explains the pre-softmax score of `class` for one `[window_len, channels]`
/// window of a softmax-head model.
pub fn lrp_explain(model: &Model, window: &Tensor, class: usize, epsilon: f64) -> Result<Explanation> {
    let cfg = model.config();
    if cfg.head != HeadKind::Softmax {
        return Err(Error::config("relevance propagation explains softmax-head models"));
    }
    if class >= cfg.outputs {
        return Err(Error::config(format!("class {class} out of range for {} outputs", cfg.outputs)));
    }
    window.expect_shape(&[cfg.window_len, cfg.limbs.channels()], "explained window")?;
    let batch = window.clone().reshape(&[1, cfg.window_len, cfg.limbs.channels()])?;
    // eval mode draws nothing from the rng
    let pass = model.forward(&batch, Mode::Eval, &mut ChaCha8Rng::seed_from_u64(0))?;
    let logits = pass.tape.value(pass.logits);
    let score = logits.data()[class];
    let mut seed = Tensor::zeros(logits.shape());
    seed.data_mut()[class] = score;
    let prop = propagate(&pass.tape, model.params(), pass.logits, seed, epsilon)?;
    let r = prop.relevance[pass.input.0]
        .clone()
        .unwrap_or_else(|| Tensor::zeros(batch.shape()))
        .reshape(&[cfg.window_len, cfg.limbs.channels()])?;
    r.check_finite("input relevance")?;
    Ok(Explanation {
        map: RelevanceMap {
            relevance: r,
            epsilon,
            class,
            score,
        },
        layers: prop.layers,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimbRms {
    pub limb: String,
    pub rms: f64,
}

/// Per limb, the RMS of `max(r, 0)` pooled over all frames and channels of
/// the limb.
pub fn positive_rms_per_limb(map: &RelevanceMap, limbs: &LimbGrouping) -> Result<Vec<LimbRms>> {
    let r = &map.relevance;
    if r.ndim() != 2 || r.dim(1) != limbs.channels() {
        return Err(Error::config("relevance map does not match the limb grouping"));
    }
    let c = r.dim(1);
    Ok(limbs
        .limbs()
        .iter()
        .map(|(name, channels)| {
            let n = (r.dim(0) * channels.len()).max(1) as f64;
            let sq: f64 = r.data().chunks_exact(c).flat_map(|f| channels.iter().map(move |&ch| f[ch].max(0.0).powi(2))).sum();
            LimbRms {
                limb: name.clone(),
                rms: (sq / n).sqrt(),
            }
        })
        .collect())
}

/// Columns `frame,channel_name,relevance`.
pub fn write_relevance_csv(path: &Path, map: &RelevanceMap, channel_names: &[String]) -> Result<()> {
    let r = &map.relevance;
    if channel_names.len() != r.dim(1) {
        return Err(Error::config("one channel name per relevance column required"));
    }
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::data(e.to_string());
    w.write_record(["frame", "channel_name", "relevance"]).map_err(csv_err)?;
    for (t, frame) in r.data().chunks_exact(r.dim(1)).enumerate() {
        for (name, v) in channel_names.iter().zip(frame) {
            w.write_record([t.to_string(), name.clone(), v.to_string()]).map_err(csv_err)?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::data(e.to_string()))?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ParamTensor;

    fn linear_tape(x: &[f64], w: &[f64], b: f64) -> (Tape, ParamSet, ValueId, ValueId) {
        let mut params = ParamSet::new();
        let wid = params.insert(ParamTensor::new("w", Tensor::new(vec![x.len(), 1], w.to_vec()).unwrap())).unwrap();
        let bid = params.insert(ParamTensor::new("b", Tensor::new(vec![1], vec![b]).unwrap())).unwrap();
        let mut tape = Tape::new();
        let input = tape.input(Tensor::new(vec![1, x.len()], x.to_vec()).unwrap());
        let y = tape.linear(&params, input, wid, bid).unwrap();
        (tape, params, input, y)
    }

    #[test]
    fn two_input_hand_example() {
        let (tape, params, input, y) = linear_tape(&[1.0, 1.0], &[2.0, 1.0], 0.0);
        let score = tape.value(y).data()[0];
        let p = propagate(&tape, &params, y, tape.value(y).clone(), 1e-9).unwrap();
        let r = p.relevance[input.0].as_ref().unwrap().data().to_vec();
        assert!((r[0] - 2.0 / 3.0 * score).abs() < 1e-6);
        assert!((r[1] - 1.0 / 3.0 * score).abs() < 1e-6);
    }

    #[test]
    fn single_path_conserves() {
        let (tape, params, input, y) = linear_tape(&[0.7], &[-1.5], 0.0);
        let p = propagate(&tape, &params, y, tape.value(y).clone(), 1e-9).unwrap();
        let r = p.relevance[input.0].as_ref().unwrap().data()[0];
        assert!((r - tape.value(y).data()[0]).abs() < 1e-8);
    }

    #[test]
    fn zero_denominator_is_guarded() {
        let (tape, params, input, y) = linear_tape(&[1.0, 1.0], &[1.0, -1.0], 0.0);
        let p = propagate(&tape, &params, y, Tensor::new(vec![1, 1], vec![1.0]).unwrap(), 1e-9).unwrap();
        let r = p.relevance[input.0].as_ref().unwrap();
        assert!(r.data().iter().all(|v| v.is_finite()));
        assert!((r.data()[0] - 1e9).abs() < 1e-3);
    }

    #[test]
    fn limb_rms_examples() {
        let limbs = LimbGrouping::new(vec![("a".into(), vec![0, 1, 2]), ("b".into(), vec![3])], 4).unwrap();
        let mut data = vec![0.0; 12];
        data[4] = 3.0; // frame 1, channel 0
        data[3] = -2.0; // limb b, negative only
        let map = RelevanceMap {
            relevance: Tensor::new(vec![3, 4], data).unwrap(),
            epsilon: 1e-9,
            class: 0,
            score: 1.0,
        };
        let rms = positive_rms_per_limb(&map, &limbs).unwrap();
        assert_eq!(rms[0].rms, 1.0);
        assert_eq!(rms[1].rms, 0.0);
        let doubled = RelevanceMap {
            relevance: map.relevance.map(|v| 2.0 * v),
            ..map.clone()
        };
        assert_eq!(positive_rms_per_limb(&doubled, &limbs).unwrap()[0].rms, 2.0);
    }
}
