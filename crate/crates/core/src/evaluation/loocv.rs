use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::report::{SummaryRow, SummaryTable};
use crate::attributes::{nna_identify, AttributeTable, Similarity};
use crate::data::{LimbGrouping, Recording, SplitStrategy};
use crate::error::{Error, Result};
use crate::experiment::{fit, prepare, PrepareSpec, Target};
use crate::model::ModelSpec;
use crate::training::{MeanSd, TrainConfig};

/// The two published LOOCV training settings; they disagree, so both ship.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoocvPreset {
    /// lr 1e-4, 10 epochs, batch 100.
    Text,
    /// lr 1e-3, 50 epochs, batch 100.
    Caption,
}

impl LoocvPreset {
    pub fn train_config(self) -> TrainConfig {
        let (lr, epochs) = match self {
            LoocvPreset::Text => (1e-4, 10),
            LoocvPreset::Caption => (1e-3, 50),
        };
        TrainConfig {
            lr,
            epochs,
            batch_size: 100,
            ..TrainConfig::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoocvConfig {
    /// Window, stride, normalization and train/val fractions; the split
    /// strategy is replaced by leave-one-subject-out.
    pub prepare: PrepareSpec,
    pub model: ModelSpec,
    pub train: TrainConfig,
    /// Subjects to hold out in turn; every recorded subject when empty.
    pub subjects: Vec<u32>,
}

impl Default for LoocvConfig {
    fn default() -> Self {
        LoocvConfig {
            prepare: PrepareSpec::default(),
            model: ModelSpec::default(),
            train: LoocvPreset::Text.train_config(),
            subjects: Vec::new(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RetrievalSummary {
    /// Percent of held-out windows whose retrieved group contains the subject.
    pub hit_rate: f64,
    /// How often each group was retrieved, keyed by ids joined with `+`.
    pub retrieved: BTreeMap<String, usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoocvFold {
    pub held_out: u32,
    pub train_subjects: Vec<u32>,
    pub truth: Vec<u8>,
    pub windows: usize,
    pub best_epoch: usize,
    /// Percent of held-out windows whose thresholded bit equals the truth bit.
    pub bit_accuracy: Vec<f64>,
    pub mean_bit_accuracy: f64,
    pub cosine: RetrievalSummary,
    pub prm: RetrievalSummary,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoocvReport {
    pub bit_names: Vec<String>,
    pub folds: Vec<LoocvFold>,
    /// Per bit, over folds.
    pub bit_accuracy: Vec<MeanSd>,
    /// Fold means of the per-bit accuracy, over folds.
    pub mean_bit_accuracy: MeanSd,
    pub cosine_hit_rate: MeanSd,
    pub prm_hit_rate: MeanSd,
}

impl LoocvReport {
    pub fn summary(&self) -> Result<SummaryTable> {
        let mut rows: Vec<SummaryRow> = self
            .bit_names
            .iter()
            .zip(&self.bit_accuracy)
            .map(|(n, s)| SummaryRow::new(n.clone(), *s))
            .collect();
        rows.push(SummaryRow::new("mean_bit_accuracy", self.mean_bit_accuracy));
        rows.push(SummaryRow::new("nna_cosine_hit_rate", self.cosine_hit_rate));
        rows.push(SummaryRow::new("nna_prm_hit_rate", self.prm_hit_rate));
        SummaryTable::new("loocv", rows)
    }
}

fn retrieval(scores: &[&[f64]], table: &AttributeTable, metric: Similarity, truth: u32) -> Result<RetrievalSummary> {
    let mut retrieved = BTreeMap::new();
    let mut hits = 0usize;
    for row in scores {
        let r = nna_identify(row, table, metric)?;
        hits += r.hits(truth) as usize;
        let key = r.subjects.iter().map(u32::to_string).collect::<Vec<_>>().join("+");
        *retrieved.entry(key).or_insert(0) += 1;
    }
    Ok(RetrievalSummary {
        hit_rate: 100.0 * hits as f64 / scores.len().max(1) as f64,
        retrieved,
    })
}

/// Trains one sigmoid-head model per held-out subject on the others'
/// windows and scores the held-out windows bit by bit and by NNA retrieval.
pub fn run_loocv(recordings: &[Recording], limbs: &LimbGrouping, table: &AttributeTable, cfg: &LoocvConfig) -> Result<LoocvReport> {
    let mut subjects: Vec<u32> = if cfg.subjects.is_empty() {
        recordings.iter().map(|r| r.subject_id).collect()
    } else {
        cfg.subjects.clone()
    };
    subjects.sort_unstable();
    subjects.dedup();
    if subjects.len() < 2 {
        return Err(Error::config("leave-one-subject-out needs at least two subjects"));
    }
    let target = Target::Attributes(table.clone());
    let mut folds = Vec::with_capacity(subjects.len());
    for (fold, &held_out) in subjects.iter().enumerate() {
        let truth = table
            .row(held_out)
            .ok_or_else(|| Error::data(format!("subject {held_out} has no attribute row")))?
            .to_vec();
        let mut spec = cfg.prepare.clone();
        spec.split.strategy = SplitStrategy::LeaveOneSubjectOut;
        spec.split.held_out_subject = Some(held_out);
        let prepared = prepare(recordings, &spec)?;
        let leaked = prepared.train.iter().chain(&prepared.val).any(|w| w.subject_id == held_out);
        let foreign = prepared.test.iter().any(|w| w.subject_id != held_out);
        if leaked || foreign || prepared.test.is_empty() {
            return Err(Error::data(format!("fold for subject {held_out} leaks subjects between sets")));
        }
        let mut train_subjects: Vec<u32> = prepared.train.iter().map(|w| w.subject_id).collect();
        train_subjects.sort_unstable();
        train_subjects.dedup();

        let train_cfg = TrainConfig {
            seed: cfg.train.seed.wrapping_add(fold as u64),
            ..cfg.train.clone()
        };
        let run = fit(&prepared, limbs, &target, &cfg.model, &train_cfg)?;
        let test = run.metrics.test.as_ref().expect("held-out windows exist");
        let bit_accuracy = test.bit_accuracy.clone().expect("sigmoid head reports bits");
        let n = prepared.test.len();
        let rows: Vec<&[f64]> = (0..n).map(|i| run.test.scores.row(i)).collect();
        let f = LoocvFold {
            held_out,
            train_subjects,
            truth,
            windows: n,
            best_epoch: run.metrics.best_epoch,
            mean_bit_accuracy: test.accuracy,
            bit_accuracy,
            cosine: retrieval(&rows, table, Similarity::Cosine, held_out)?,
            prm: retrieval(&rows, table, Similarity::Prm, held_out)?,
        };
        log::info!(
            "fold {}/{}: subject {held_out}, mean bit accuracy {:.2}, cosine hits {:.2}, prm hits {:.2}",
            fold + 1,
            subjects.len(),
            f.mean_bit_accuracy,
            f.cosine.hit_rate,
            f.prm.hit_rate
        );
        folds.push(f);
    }
    let over = |g: &dyn Fn(&LoocvFold) -> f64| MeanSd::of(&folds.iter().map(g).collect::<Vec<_>>());
    Ok(LoocvReport {
        bit_names: table.bit_names.clone(),
        bit_accuracy: (0..table.width())
            .map(|b| over(&|f| f.bit_accuracy[b]))
            .collect::<Result<_>>()?,
        mean_bit_accuracy: over(&|f| f.mean_bit_accuracy)?,
        cosine_hit_rate: over(&|f| f.cosine.hit_rate)?,
        prm_hit_rate: over(&|f| f.prm.hit_rate)?,
        folds,
    })
}
