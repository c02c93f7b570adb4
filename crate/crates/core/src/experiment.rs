//! Glue from recordings to a trained model: segmentation, splitting,
//! normalization, label assignment, training and test-set outputs.

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attributes::AttributeTable;
use crate::data::{fit_channel_stats, normalize, segment_all, split, ChannelStats, LimbGrouping, Recording, SplitSpec, Window};
use crate::error::{Error, Result};
use crate::model::{HeadKind, Model, ModelConfig, ModelSpec};
use crate::tensor::Tensor;
use crate::training::{evaluate, predict_all, train, Labels, LabeledWindows, RunMetrics, TrainConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrepareSpec {
    pub window_len: usize,
    pub stride: usize,
    pub split: SplitSpec,
    /// Standardize channels with training-set statistics.
    pub normalize: bool,
}

impl Default for PrepareSpec {
    fn default() -> Self {
        PrepareSpec {
            window_len: 100,
            stride: 12,
            split: SplitSpec::default(),
            normalize: true,
        }
    }
}

/// Split windows, normalized in place when the spec asks for it.
#[derive(Clone, Debug, PartialEq)]
pub struct Prepared {
    pub train: Vec<Window>,
    pub val: Vec<Window>,
    pub test: Vec<Window>,
    /// Fit on the training windows before normalization.
    pub stats: ChannelStats,
    pub normalized: bool,
}

pub fn prepare(recordings: &[Recording], spec: &PrepareSpec) -> Result<Prepared> {
    spec.split.validate()?;
    let windows = segment_all(recordings, spec.window_len, spec.stride)?;
    let splits = split(windows, &spec.split)?;
    let (mut train, mut val, mut test) = (splits.train, splits.val, splits.test);
    if train.is_empty() {
        return Err(Error::data("the split left no training windows"));
    }
    let stats = fit_channel_stats(&train)?;
    if spec.normalize {
        normalize(&mut train, &stats)?;
        normalize(&mut val, &stats)?;
        normalize(&mut test, &stats)?;
    }
    log::info!("prepared {} train / {} val / {} test windows", train.len(), val.len(), test.len());
    Ok(Prepared {
        train,
        val,
        test,
        stats,
        normalized: spec.normalize,
    })
}

/// What the network is trained to predict.
#[derive(Clone, Debug, PartialEq)]
pub enum Target {
    /// Subject identity, one class per subject id in `class_ids` order.
    Identity { class_ids: Vec<u32> },
    /// The subject's attribute vector.
    Attributes(AttributeTable),
}

impl Target {
    /// Identity target over the subjects present in `windows`, ascending.
    pub fn identity_of(windows: &[Window]) -> Self {
        let ids: BTreeSet<u32> = windows.iter().map(|w| w.subject_id).collect();
        Target::Identity {
            class_ids: ids.into_iter().collect(),
        }
    }

    pub fn head(&self) -> (HeadKind, usize) {
        match self {
            Target::Identity { class_ids } => (HeadKind::Softmax, class_ids.len()),
            Target::Attributes(t) => (HeadKind::Sigmoid, t.width()),
        }
    }

    pub fn labels(&self, windows: &[Window]) -> Result<Labels> {
        match self {
            Target::Identity { class_ids } => windows
                .iter()
                .map(|w| {
                    class_ids
                        .binary_search(&w.subject_id)
                        .map_err(|_| Error::data(format!("subject {} is not a known class", w.subject_id)))
                })
                .collect::<Result<_>>()
                .map(Labels::Classes),
            Target::Attributes(table) => windows
                .iter()
                .map(|w| {
                    table
                        .row(w.subject_id)
                        .map(<[u8]>::to_vec)
                        .ok_or_else(|| Error::data(format!("subject {} has no attribute row", w.subject_id)))
                })
                .collect::<Result<_>>()
                .map(Labels::Bits),
        }
    }

    pub fn labeled(&self, windows: &[Window]) -> Result<LabeledWindows> {
        LabeledWindows::new(windows.to_vec(), self.labels(windows)?)
    }
}

/// Model outputs on the test windows next to what is known about each window.
#[derive(Clone, Debug, PartialEq)]
pub struct TestOutputs {
    /// `[n, outputs]` eval-mode scores.
    pub scores: Tensor,
    pub subject_ids: Vec<u32>,
    pub activity_labels: Vec<i32>,
}

#[derive(Clone, Debug)]
pub struct ExperimentRun {
    pub model: Model,
    /// Includes the test report when a test set exists.
    pub metrics: RunMetrics,
    pub test: TestOutputs,
}

/// Initial weights come from a separate stream of the same seed as training.
pub fn init_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

pub fn model_config(spec: &ModelSpec, limbs: &LimbGrouping, window_len: usize, target: &Target) -> Result<ModelConfig> {
    let (head, outputs) = target.head();
    spec.config(limbs, window_len, head, outputs)
}

/// Builds, trains and tests a model on prepared windows. The test set is only
/// touched after training has finished.
pub fn fit(
    prepared: &Prepared,
    limbs: &LimbGrouping,
    target: &Target,
    model_spec: &ModelSpec,
    train_cfg: &TrainConfig,
) -> Result<ExperimentRun> {
    let window_len = prepared.train[0].len();
    let cfg = model_config(model_spec, limbs, window_len, target)?;
    let model = Model::build(cfg, &mut init_rng(train_cfg.seed))?;
    let train_set = target.labeled(&prepared.train)?;
    let val_set = target.labeled(&prepared.val)?;
    let (model, mut metrics) = train(model, &train_set, &val_set, train_cfg)?;
    if !prepared.test.is_empty() {
        metrics.test = Some(evaluate(&model, &target.labeled(&prepared.test)?)?);
    }
    let test = TestOutputs {
        scores: predict_all(&model, &prepared.test)?,
        subject_ids: prepared.test.iter().map(|w| w.subject_id).collect(),
        activity_labels: prepared.test.iter().map(|w| w.activity_label).collect(),
    };
    Ok(ExperimentRun { model, metrics, test })
}
