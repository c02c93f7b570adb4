//! Mini-batch training with noise augmentation, RMSProp and early stopping,
//! plus the accuracy and weighted-F1 metrics.

mod metrics;

pub use metrics::{accuracy, argmax, confusion_matrix, weighted_f1, MeanSd};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{add_gaussian_noise, stack_windows, Window};
use crate::error::{Error, Result};
use crate::model::{HeadKind, Model, Targets};
use crate::tensor::ops::Mode;
use crate::tensor::optim::RmsProp;
use crate::tensor::Tensor;

/// Windows evaluated per forward pass outside training.
const EVAL_BATCH: usize = 256;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub noise_sigma: f64,
    /// Epochs without a validation wF1 improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub rms_alpha: f64,
    pub rms_eps: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Run the loop with a zero step size (optimizer state still evolves).
    pub frozen: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let opt = RmsProp::default();
        TrainConfig {
            lr: opt.lr,
            batch_size: 50,
            epochs: 10,
            noise_sigma: 0.01,
            patience: 3,
            seed: 0,
            rms_alpha: opt.alpha,
            rms_eps: opt.eps,
            momentum: opt.momentum,
            weight_decay: opt.weight_decay,
            frozen: false,
        }
    }
}

impl TrainConfig {
    pub fn optimizer(&self) -> RmsProp {
        RmsProp {
            lr: self.lr,
            alpha: self.rms_alpha,
            eps: self.rms_eps,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.optimizer().validate()?;
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::config("batch size and epochs must be >= 1"));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::config("noise sigma must be >= 0"));
        }
        Ok(())
    }
}

/// Per-window targets for either head.
#[derive(Clone, Debug, PartialEq)]
pub enum Labels {
    Classes(Vec<usize>),
    Bits(Vec<Vec<u8>>),
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Classes(c) => c.len(),
            Labels::Bits(b) => b.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn targets(&self, idx: &[usize]) -> Targets {
        match self {
            Labels::Classes(c) => Targets::Classes(idx.iter().map(|&i| c[i]).collect()),
            Labels::Bits(b) => {
                let width = b.first().map_or(0, Vec::len);
                let data = idx.iter().flat_map(|&i| b[i].iter().map(|&v| f64::from(v))).collect();
                Targets::Bits(Tensor::new(vec![idx.len(), width], data).expect("rows share a width"))
            }
        }
    }
}

/// Windows plus their targets.
#[derive(Clone, Debug)]
pub struct LabeledWindows {
    pub windows: Vec<Window>,
    pub labels: Labels,
}

impl LabeledWindows {
    pub fn new(windows: Vec<Window>, labels: Labels) -> Result<Self> {
        if windows.len() != labels.len() {
            return Err(Error::config(format!(
                "{} windows but {} labels",
                windows.len(),
                labels.len()
            )));
        }
        Ok(LabeledWindows { windows, labels })
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    fn check_head(&self, model: &Model) -> Result<()> {
        let cfg = model.config();
        let ok = match (&self.labels, cfg.head) {
            (Labels::Classes(c), HeadKind::Softmax) => c.iter().all(|&k| k < cfg.outputs),
            (Labels::Bits(b), HeadKind::Sigmoid) => b.iter().all(|r| r.len() == cfg.outputs),
            _ => false,
        };
        if !ok {
            return Err(Error::config("labels do not match the model head"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub val_weighted_f1: f64,
}

/// Scores of one evaluation pass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Percent. For sigmoid heads, the mean per-bit accuracy.
    pub accuracy: f64,
    /// Percent. For sigmoid heads, computed on the pooled bit confusion.
    pub weighted_f1: f64,
    /// `[truth][predicted]`; 2x2 pooled over bits for sigmoid heads.
    pub confusion: Vec<Vec<u64>>,
    /// Per-bit accuracy in percent (sigmoid head only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bit_accuracy: Option<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub epochs: Vec<EpochMetrics>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub best_val_weighted_f1: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<EvalReport>,
}

/// Trains `model` and returns the parameters of the best validation epoch.
pub fn train(mut model: Model, train_set: &LabeledWindows, val_set: &LabeledWindows, cfg: &TrainConfig) -> Result<(Model, RunMetrics)> {
    cfg.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::data("training and validation sets must be non-empty"));
    }
    train_set.check_head(&model)?;
    val_set.check_head(&model)?;
    let opt = cfg.optimizer();
    let lr = if cfg.frozen { 0.0 } else { cfg.lr };
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut history = Vec::new();
    let mut best: Option<(Model, usize, f64)> = None;
    let mut stale = 0;
    let mut batch_index = 0usize;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for idx in order.chunks(cfg.batch_size) {
            let clean = stack_windows(idx.iter().map(|&i| &train_set.windows[i]))?;
            let x = add_gaussian_noise(&clean, cfg.noise_sigma, &mut rng)?;
            let pass = model.forward(&x, Mode::Train, &mut rng)?;
            let (loss, seed) = model.loss(&pass, &train_set.labels.targets(idx))?;
            if !loss.is_finite() {
                return Err(Error::numeric(format!(
                    "non-finite loss at batch {batch_index} (epoch {epoch})"
                )));
            }
            model.backward(&pass, seed)?;
            opt.apply(model.params_mut().iter_mut(), lr)?;
            loss_sum += loss * idx.len() as f64;
            seen += idx.len();
            batch_index += 1;
        }
        let val = evaluate(&model, val_set)?;
        let m = EpochMetrics {
            epoch,
            train_loss: loss_sum / seen as f64,
            val_accuracy: val.accuracy,
            val_weighted_f1: val.weighted_f1,
        };
        log::info!(
            "epoch {epoch}: train loss {:.5}, val acc {:.2}, val wF1 {:.2}",
            m.train_loss,
            m.val_accuracy,
            m.val_weighted_f1
        );
        history.push(m);
        if best.as_ref().is_none_or(|(_, _, f)| val.weighted_f1 > *f) {
            best = Some((model.clone(), epoch, val.weighted_f1));
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                log::info!("early stop after epoch {epoch}");
                break;
            }
        }
    }
    let (mut best_model, best_epoch, best_f1) = best.expect("at least one epoch ran");
    // optimizer state and gradients are not part of the result
    for p in best_model.params_mut().iter_mut() {
        p.zero_grad();
    }
    Ok((
        best_model,
        RunMetrics {
            epochs: history,
            best_epoch,
            best_val_weighted_f1: best_f1,
            test: None,
        },
    ))
}

/// Eval-mode outputs for every window, `[n, outputs]`.
pub fn predict_all(model: &Model, windows: &[Window]) -> Result<Tensor> {
    let outputs = model.config().outputs;
    let mut data = Vec::with_capacity(windows.len() * outputs);
    for chunk in windows.chunks(EVAL_BATCH) {
        let x = stack_windows(chunk)?;
        data.extend_from_slice(model.predict(&x)?.scores.data());
    }
    Tensor::new(vec![windows.len(), outputs], data)
}

/// Scores `model` on a labelled set without touching its parameters.
pub fn evaluate(model: &Model, set: &LabeledWindows) -> Result<EvalReport> {
    set.check_head(model)?;
    let scores = predict_all(model, &set.windows)?;
    let k = model.config().outputs;
    match &set.labels {
        Labels::Classes(truth) => {
            let pred: Vec<usize> = (0..set.len()).map(|i| argmax(scores.row(i))).collect();
            let confusion = confusion_matrix(truth, &pred, k)?;
            Ok(EvalReport {
                accuracy: accuracy(&confusion),
                weighted_f1: weighted_f1(&confusion),
                confusion,
                bit_accuracy: None,
            })
        }
        Labels::Bits(truth) => {
            let mut confusion = vec![vec![0u64; 2]; 2];
            let mut hits = vec![0u64; k];
            for (i, row) in truth.iter().enumerate() {
                for (j, &t) in row.iter().enumerate() {
                    let p = (scores.row(i)[j] >= 0.5) as usize;
                    confusion[t as usize][p] += 1;
                    hits[j] += (p == t as usize) as u64;
                }
            }
            let n = set.len().max(1) as f64;
            let bit_accuracy: Vec<f64> = hits.iter().map(|&h| 100.0 * h as f64 / n).collect();
            Ok(EvalReport {
                accuracy: bit_accuracy.iter().sum::<f64>() / k as f64,
                weighted_f1: weighted_f1(&confusion),
                confusion,
                bit_accuracy: Some(bit_accuracy),
            })
        }
    }
}

/// Accuracy and weighted F1 aggregated over repeated runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RepeatSummary {
    pub seeds: Vec<u64>,
    pub accuracy: Vec<f64>,
    pub weighted_f1: Vec<f64>,
    pub accuracy_stats: MeanSd,
    pub weighted_f1_stats: MeanSd,
}

/// Runs `experiment` with seeds `base_seed, base_seed + 1, ...`; each call
/// returns `(accuracy, weighted_f1)`.
pub fn repeat_runs(n: usize, base_seed: u64, mut experiment: impl FnMut(u64) -> Result<(f64, f64)>) -> Result<RepeatSummary> {
    if n == 0 {
        return Err(Error::config("repeat count must be >= 1"));
    }
    let seeds: Vec<u64> = (0..n as u64).map(|i| base_seed.wrapping_add(i)).collect();
    let mut acc = Vec::with_capacity(n);
    let mut f1 = Vec::with_capacity(n);
    for &s in &seeds {
        let (a, f) = experiment(s)?;
        acc.push(a);
        f1.push(f);
    }
    Ok(RepeatSummary {
        accuracy_stats: MeanSd::of(&acc)?,
        weighted_f1_stats: MeanSd::of(&f1)?,
        seeds,
        accuracy: acc,
        weighted_f1: f1,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn repeat_statistics() {
        let one = repeat_runs(1, 7, |_| Ok((90.0, 80.0))).unwrap();
        assert_eq!(one.accuracy_stats.sd, 0.0);
        assert_eq!(one.seeds, vec![7]);
        let mut values = [90.0, 92.0].into_iter();
        let two = repeat_runs(2, 0, |_| {
            let v = values.next().unwrap();
            Ok((v, v))
        })
        .unwrap();
        assert_eq!((two.accuracy_stats.mean, two.accuracy_stats.sd), (91.0, 1.0));
        assert!(repeat_runs(0, 0, |_| Ok((0.0, 0.0))).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            lr: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }
}
