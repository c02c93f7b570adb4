use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::data::UNLABELED;
use crate::error::{Error, Result};
use crate::training::MeanSd;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IoaClass {
    pub activity: i32,
    /// Windows of this activity whose identity was predicted correctly.
    pub n_plus: u64,
    pub n_minus: u64,
    pub ioa: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IoaReport {
    pub classes: Vec<IoaClass>,
    /// Declared activities without any test window.
    pub omitted: Vec<i32>,
    /// Windows without an activity label, left out of every count.
    pub unlabeled: u64,
}

impl IoaReport {
    pub fn total(&self) -> u64 {
        self.classes.iter().map(|c| c.n_plus + c.n_minus).sum()
    }

    /// Support-weighted mean of the per-class IOA; equals the identification
    /// accuracy on the labelled windows.
    pub fn weighted_mean(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        self.classes
            .iter()
            .map(|c| (c.n_plus + c.n_minus) as f64 * c.ioa)
            .sum::<f64>()
            / total as f64
    }
}

/// Per-activity share of correctly identified windows. `activities` lists
/// the declared activity ids; those with no windows end up in `omitted`.
pub fn compute_ioa(predicted: &[u32], truth: &[u32], activity: &[i32], activities: &[i32]) -> Result<IoaReport> {
    if predicted.len() != truth.len() || truth.len() != activity.len() {
        return Err(Error::config(format!(
            "ioa inputs differ in length: {} predictions, {} truths, {} activity labels",
            predicted.len(),
            truth.len(),
            activity.len()
        )));
    }
    let mut counts: BTreeMap<i32, (u64, u64)> = BTreeMap::new();
    let mut unlabeled = 0;
    for ((p, t), &a) in predicted.iter().zip(truth).zip(activity) {
        if a == UNLABELED {
            unlabeled += 1;
            continue;
        }
        let e = counts.entry(a).or_default();
        if p == t {
            e.0 += 1;
        } else {
            e.1 += 1;
        }
    }
    let classes = counts
        .iter()
        .map(|(&activity, &(n_plus, n_minus))| IoaClass {
            activity,
            n_plus,
            n_minus,
            ioa: n_plus as f64 / (n_plus + n_minus) as f64,
        })
        .collect();
    let mut omitted: Vec<i32> = activities.iter().copied().filter(|a| !counts.contains_key(a)).collect();
    omitted.sort_unstable();
    omitted.dedup();
    if !omitted.is_empty() {
        log::info!("activities without test windows omitted from IOA: {omitted:?}");
    }
    Ok(IoaReport {
        classes,
        omitted,
        unlabeled,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IoaAggregate {
    pub activity: i32,
    pub ioa: MeanSd,
}

/// Mean and SD of each activity's IOA over repeated runs. An activity counts
/// only in the runs where it had windows.
pub fn aggregate_ioa(runs: &[IoaReport]) -> Result<Vec<IoaAggregate>> {
    if runs.is_empty() {
        return Err(Error::config("no IOA reports to aggregate"));
    }
    let mut per: BTreeMap<i32, Vec<f64>> = BTreeMap::new();
    for r in runs {
        for c in &r.classes {
            per.entry(c.activity).or_default().push(c.ioa);
        }
    }
    per.into_iter()
        .map(|(activity, v)| {
            Ok(IoaAggregate {
                activity,
                ioa: MeanSd::of(&v)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_of_four() {
        let r = compute_ioa(&[1, 1, 1, 2], &[1, 1, 1, 1], &[5, 5, 5, 5], &[5]).unwrap();
        assert_eq!(r.classes[0].ioa, 0.75);
        assert_eq!((r.classes[0].n_plus, r.classes[0].n_minus), (3, 1));
    }

    #[test]
    fn all_correct_and_omitted() {
        let r = compute_ioa(&[1, 2, 3], &[1, 2, 3], &[0, 1, UNLABELED], &[0, 1, 2]).unwrap();
        assert!(r.classes.iter().all(|c| c.ioa == 1.0));
        assert_eq!(r.omitted, vec![2]);
        assert_eq!(r.unlabeled, 1);
        assert_eq!(r.total(), 2);
        assert!(compute_ioa(&[1], &[1, 2], &[0, 0], &[]).is_err());
    }

    #[test]
    fn aggregate_over_runs() {
        let a = compute_ioa(&[1, 2], &[1, 1], &[0, 0], &[0]).unwrap();
        let b = compute_ioa(&[1, 1], &[1, 1], &[0, 0], &[0]).unwrap();
        let agg = aggregate_ioa(&[a, b]).unwrap();
        assert_eq!(agg[0].ioa.mean, 0.75);
        assert_eq!(agg[0].ioa.sd, 0.25);
        assert!(aggregate_ioa(&[]).is_err());
    }
}
