//! The late-fusion network: one temporal convolution branch per limb, fused
//! by fully connected or LSTM layers, followed by a softmax or sigmoid head.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_VERSION};

use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::LimbGrouping;
use crate::error::{Error, Result};
use crate::tensor::init::orthogonal_init;
use crate::tensor::ops::Mode;
use crate::tensor::{ParamId, ParamSet, ParamTensor, Tape, Tensor, ValueId};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fusion {
    Mlp,
    Lstm,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    /// Identity classification over `outputs` classes.
    Softmax,
    /// Independent probabilities for `outputs` attribute bits.
    Sigmoid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub limbs: LimbGrouping,
    pub window_len: usize,
    pub conv_layers: usize,
    pub filters: usize,
    pub kernel_len: usize,
    pub branch_units: usize,
    pub fusion: Fusion,
    pub fusion_units: usize,
    pub fusion_layers: usize,
    pub head: HeadKind,
    pub outputs: usize,
    pub dropout: f64,
}

impl ModelConfig {
    /// Defaults of the published architecture for the given input layout.
    pub fn standard(limbs: LimbGrouping, window_len: usize, fusion: Fusion, head: HeadKind, outputs: usize) -> Self {
        ModelConfig {
            limbs,
            window_len,
            conv_layers: 4,
            filters: 64,
            kernel_len: 5,
            branch_units: 256,
            fusion,
            fusion_units: 256,
            fusion_layers: 2,
            head,
            outputs,
            dropout: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let shrink = self.conv_layers * self.kernel_len.saturating_sub(1);
        if self.kernel_len == 0 || self.window_len < shrink + 1 {
            return Err(Error::config(format!(
                "window length {} leaves no output frame after {} convolutions of length {}",
                self.window_len, self.conv_layers, self.kernel_len
            )));
        }
        if self.conv_layers == 0 || self.filters == 0 || self.branch_units == 0 {
            return Err(Error::config("branches need at least one conv layer, filter and unit"));
        }
        if self.fusion_layers == 0 || self.fusion_units == 0 {
            return Err(Error::config("fusion needs at least one layer and unit"));
        }
        match self.head {
            HeadKind::Softmax if self.outputs < 2 => {
                return Err(Error::config("softmax head needs at least 2 classes"))
            }
            HeadKind::Sigmoid if self.outputs < 1 => {
                return Err(Error::config("sigmoid head needs at least 1 attribute"))
            }
            _ => {}
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::config(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Frames left after the convolution stack.
    pub fn conv_out_len(&self) -> usize {
        self.window_len - self.conv_layers * (self.kernel_len - 1)
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn fingerprint(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    /// Closed-form number of scalar parameters.
    pub fn param_count(&self) -> usize {
        let (k, f, b, u) = (self.kernel_len, self.filters, self.branch_units, self.fusion_units);
        let lstm = |input: usize, hidden: usize| 4 * hidden * (input + hidden) + 4 * hidden;
        let mut total = 0;
        for (_, channels) in self.limbs.limbs() {
            total += k * channels.len() * f + f;
            total += (self.conv_layers - 1) * (k * f * f + f);
            total += match self.fusion {
                Fusion::Mlp => self.conv_out_len() * f * b + b,
                Fusion::Lstm => lstm(f, b),
            };
        }
        let concat = self.limbs.len() * b;
        total += match self.fusion {
            Fusion::Mlp => (concat * u + u) + (self.fusion_layers - 1) * (u * u + u),
            Fusion::Lstm => lstm(concat, u) + (self.fusion_layers - 1) * lstm(u, u),
        };
        total + u * self.outputs + self.outputs
    }
}

/// Architecture hyperparameters without the data-dependent parts (input
/// layout, window length, head size).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub fusion: Fusion,
    /// One branch over all channels instead of one per limb.
    pub single_branch: bool,
    pub conv_layers: usize,
    pub filters: usize,
    pub kernel_len: usize,
    pub branch_units: usize,
    pub fusion_units: usize,
    pub fusion_layers: usize,
    pub dropout: f64,
}

impl Default for ModelSpec {
    fn default() -> Self {
        let s = ModelConfig::standard(LimbGrouping::single(1), 1, Fusion::Mlp, HeadKind::Softmax, 2);
        ModelSpec {
            fusion: s.fusion,
            single_branch: false,
            conv_layers: s.conv_layers,
            filters: s.filters,
            kernel_len: s.kernel_len,
            branch_units: s.branch_units,
            fusion_units: s.fusion_units,
            fusion_layers: s.fusion_layers,
            dropout: s.dropout,
        }
    }
}

impl ModelSpec {
    pub fn config(&self, limbs: &LimbGrouping, window_len: usize, head: HeadKind, outputs: usize) -> Result<ModelConfig> {
        let limbs = if self.single_branch {
            LimbGrouping::single(limbs.channels())
        } else {
            limbs.clone()
        };
        let cfg = ModelConfig {
            limbs,
            window_len,
            conv_layers: self.conv_layers,
            filters: self.filters,
            kernel_len: self.kernel_len,
            branch_units: self.branch_units,
            fusion: self.fusion,
            fusion_units: self.fusion_units,
            fusion_layers: self.fusion_layers,
            head,
            outputs,
            dropout: self.dropout,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Parameter handles of one branch.
#[derive(Clone, Debug)]
struct Branch {
    channels: Vec<usize>,
    convs: Vec<(ParamId, ParamId)>,
    head: Vec<ParamId>,
}

#[derive(Clone, Debug)]
struct Layout {
    branches: Vec<Branch>,
    fusion: Vec<Vec<ParamId>>,
    head: (ParamId, ParamId),
}

/// Configuration plus parameters of one network instance.
#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    params: ParamSet,
    layout: Layout,
}

/// Output scores with their head kind.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    /// `[batch, outputs]`: class probabilities or attribute probabilities.
    pub scores: Tensor,
    pub head: HeadKind,
}

/// A recorded forward pass.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    pub tape: Tape,
    pub input: ValueId,
    /// Per-limb branch outputs right before concatenation.
    pub branch_outputs: Vec<ValueId>,
    /// Pre-activation scores of the head.
    pub logits: ValueId,
    /// Softmax or sigmoid output.
    pub output: ValueId,
}

impl ForwardPass {
    pub fn prediction(&self, head: HeadKind) -> Prediction {
        Prediction {
            scores: self.tape.value(self.output).clone(),
            head,
        }
    }
}

fn branch_prefix(limb: &str) -> String {
    format!("branch.{limb}")
}

/// Parameter names and shapes the configuration calls for, in creation order.
pub fn param_manifest(config: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let (k, f, b, u) = (config.kernel_len, config.filters, config.branch_units, config.fusion_units);
    let mut out = Vec::new();
    for (limb, channels) in config.limbs.limbs() {
        let p = branch_prefix(limb);
        for i in 0..config.conv_layers {
            let cin = if i == 0 { channels.len() } else { f };
            out.push((format!("{p}.conv{i}.kernel"), vec![k, cin, f]));
            out.push((format!("{p}.conv{i}.bias"), vec![f]));
        }
        match config.fusion {
            Fusion::Mlp => {
                out.push((format!("{p}.fc.weight"), vec![config.conv_out_len() * f, b]));
                out.push((format!("{p}.fc.bias"), vec![b]));
            }
            Fusion::Lstm => lstm_names(&mut out, &format!("{p}.lstm"), f, b),
        }
    }
    let concat = config.limbs.len() * b;
    for i in 0..config.fusion_layers {
        let input = if i == 0 { concat } else { u };
        match config.fusion {
            Fusion::Mlp => {
                out.push((format!("fusion.{i}.weight"), vec![input, u]));
                out.push((format!("fusion.{i}.bias"), vec![u]));
            }
            Fusion::Lstm => lstm_names(&mut out, &format!("fusion.{i}"), input, u),
        }
    }
    out.push(("head.weight".into(), vec![u, config.outputs]));
    out.push(("head.bias".into(), vec![config.outputs]));
    out
}

fn lstm_names(out: &mut Vec<(String, Vec<usize>)>, p: &str, input: usize, hidden: usize) {
    out.push((format!("{p}.w_ih"), vec![input, 4 * hidden]));
    out.push((format!("{p}.w_hh"), vec![hidden, 4 * hidden]));
    out.push((format!("{p}.bias"), vec![4 * hidden]));
}

/// Initial value for a parameter: biases zero, weights orthogonal with gain 1
/// in the `[fan_out, fan_in]` orientation, transposed into storage layout.
fn init_value<R: Rng + ?Sized>(name: &str, shape: &[usize], rng: &mut R) -> Result<Tensor> {
    if name.ends_with("bias") {
        return Ok(Tensor::zeros(shape));
    }
    let (fan_in, fan_out) = match shape {
        [k, cin, cout] => (k * cin, *cout),
        [fin, fout] => (*fin, *fout),
        _ => return Err(Error::config(format!("unexpected parameter shape {shape:?} for {name}"))),
    };
    let w = orthogonal_init(&[fan_out, fan_in], 1.0, rng)?;
    let mut data = vec![0.0; fan_in * fan_out];
    for o in 0..fan_out {
        for i in 0..fan_in {
            data[i * fan_out + o] = w.data()[o * fan_in + i];
        }
    }
    Tensor::new(shape.to_vec(), data)
}

impl Model {
    /// Fresh network with orthogonal weights and zero biases.
    pub fn build<R: Rng + ?Sized>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let mut params = ParamSet::new();
        for (name, shape) in param_manifest(&config) {
            let value = init_value(&name, &shape, rng)?;
            params.insert(ParamTensor::new(name, value))?;
        }
        Self::from_params(config, params)
    }

    /// Wraps existing parameters after checking them against the manifest.
    pub fn from_params(config: ModelConfig, params: ParamSet) -> Result<Self> {
        config.validate()?;
        let manifest = param_manifest(&config);
        if manifest.len() != params.len() {
            return Err(Error::config(format!(
                "configuration needs {} parameter tensors, got {}",
                manifest.len(),
                params.len()
            )));
        }
        for (name, shape) in &manifest {
            let p = params
                .by_name(name)
                .ok_or_else(|| Error::config(format!("missing parameter {name}")))?;
            if p.shape() != shape.as_slice() {
                return Err(Error::config(format!(
                    "parameter {name} has shape {:?}, configuration needs {shape:?}",
                    p.shape()
                )));
            }
        }
        let id = |n: String| params.id(&n).expect("checked above");
        let branches = config
            .limbs
            .limbs()
            .iter()
            .map(|(limb, channels)| {
                let p = branch_prefix(limb);
                Branch {
                    channels: channels.clone(),
                    convs: (0..config.conv_layers)
                        .map(|i| (id(format!("{p}.conv{i}.kernel")), id(format!("{p}.conv{i}.bias"))))
                        .collect(),
                    head: match config.fusion {
                        Fusion::Mlp => vec![id(format!("{p}.fc.weight")), id(format!("{p}.fc.bias"))],
                        Fusion::Lstm => lstm_ids(&id, &format!("{p}.lstm")),
                    },
                }
            })
            .collect();
        let fusion = (0..config.fusion_layers)
            .map(|i| match config.fusion {
                Fusion::Mlp => vec![id(format!("fusion.{i}.weight")), id(format!("fusion.{i}.bias"))],
                Fusion::Lstm => lstm_ids(&id, &format!("fusion.{i}")),
            })
            .collect();
        let layout = Layout {
            branches,
            fusion,
            head: (id("head.weight".into()), id("head.bias".into())),
        };
        Ok(Model {
            config,
            params,
            layout,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn into_params(self) -> ParamSet {
        self.params
    }

    /// Runs the network on `[batch, window_len, channels]` and records the tape.
    /// `rng` is only drawn from in train mode (dropout masks).
    pub fn forward<R: Rng + ?Sized>(&self, batch: &Tensor, mode: Mode, rng: &mut R) -> Result<ForwardPass> {
        let cfg = &self.config;
        batch.expect_shape(
            &[batch.dim(0), cfg.window_len, cfg.limbs.channels()],
            "model input [batch, window_len, channels]",
        )?;
        let params = &self.params;
        let mut tape = Tape::new();
        let input = tape.input(batch.clone());
        let mut branch_outputs = Vec::with_capacity(self.layout.branches.len());
        for branch in &self.layout.branches {
            let mut x = tape.slice_channels(input, &branch.channels)?;
            for &(k, b) in &branch.convs {
                x = tape.conv1d(params, x, k, b)?;
                x = tape.relu(x);
            }
            x = match cfg.fusion {
                Fusion::Mlp => {
                    let flat = tape.flatten(x)?;
                    let y = tape.linear(params, flat, branch.head[0], branch.head[1])?;
                    tape.relu(y)
                }
                Fusion::Lstm => {
                    let seq = tape.lstm(params, x, branch.head[0], branch.head[1], branch.head[2])?;
                    tape.last_step(seq)?
                }
            };
            branch_outputs.push(x);
        }
        let mut x = tape.concat(&branch_outputs)?;
        match cfg.fusion {
            Fusion::Mlp => {
                for layer in &self.layout.fusion {
                    x = tape.linear(params, x, layer[0], layer[1])?;
                    x = tape.relu(x);
                    x = tape.dropout(x, cfg.dropout, mode, rng)?;
                }
            }
            Fusion::Lstm => {
                // the fused feature vector is a length-1 sequence
                x = tape.unsqueeze(x)?;
                for layer in &self.layout.fusion {
                    x = tape.lstm(params, x, layer[0], layer[1], layer[2])?;
                    x = tape.dropout(x, cfg.dropout, mode, rng)?;
                }
                x = tape.last_step(x)?;
            }
        }
        let logits = tape.linear(params, x, self.layout.head.0, self.layout.head.1)?;
        tape.value(logits).check_finite("logits")?;
        let output = match cfg.head {
            HeadKind::Softmax => tape.softmax(logits)?,
            HeadKind::Sigmoid => tape.sigmoid(logits),
        };
        Ok(ForwardPass {
            tape,
            input,
            branch_outputs,
            logits,
            output,
        })
    }

    /// Eval-mode scores without keeping the tape around.
    pub fn predict(&self, batch: &Tensor) -> Result<Prediction> {
        // eval mode draws nothing
        let mut unused = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        let pass = self.forward(batch, Mode::Eval, &mut unused)?;
        Ok(pass.prediction(self.config.head))
    }
}

/// Training targets matching the head kind.
#[derive(Clone, Debug, PartialEq)]
pub enum Targets {
    /// Class index per row, for the softmax head.
    Classes(Vec<usize>),
    /// `[batch, outputs]` of 0/1, for the sigmoid head.
    Bits(Tensor),
}

impl Model {
    /// Cross-entropy (softmax head) or binary cross-entropy (sigmoid head) of a
    /// recorded pass, with the gradient seed for [`Model::backward`].
    pub fn loss(&self, pass: &ForwardPass, targets: &Targets) -> Result<(f64, (ValueId, Tensor))> {
        match (self.config.head, targets) {
            (HeadKind::Softmax, Targets::Classes(t)) => {
                let (loss, g) = crate::tensor::ops::cross_entropy_loss(pass.tape.value(pass.logits), t)?;
                Ok((loss, (pass.logits, g)))
            }
            (HeadKind::Sigmoid, Targets::Bits(t)) => {
                let (loss, g) = crate::tensor::ops::bce_loss(pass.tape.value(pass.output), t)?;
                Ok((loss, (pass.output, g)))
            }
            _ => Err(Error::config("targets do not match the head kind")),
        }
    }

    /// Accumulates parameter gradients for one seed.
    pub fn backward(&mut self, pass: &ForwardPass, seed: (ValueId, Tensor)) -> Result<()> {
        pass.tape.backward(&mut self.params, vec![seed])?;
        Ok(())
    }
}

fn lstm_ids(id: &impl Fn(String) -> ParamId, p: &str) -> Vec<ParamId> {
    vec![id(format!("{p}.w_ih")), id(format!("{p}.w_hh")), id(format!("{p}.bias"))]
}
