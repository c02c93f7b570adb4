use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::recording::UNLABELED;
use super::window::Window;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitStrategy {
    PerRecording,
    ActivityStacked,
    LeaveOneSubjectOut,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitSpec {
    pub strategy: SplitStrategy,
    /// Train, validation, test.
    #[serde(default = "default_fractions")]
    pub fractions: [f64; 3],
    #[serde(default)]
    pub held_out_subject: Option<u32>,
}

fn default_fractions() -> [f64; 3] {
    [0.64, 0.18, 0.18]
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            strategy: SplitStrategy::PerRecording,
            fractions: default_fractions(),
            held_out_subject: None,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        let sum: f64 = self.fractions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || self.fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::config(format!(
                "split fractions {:?} must be in [0, 1] and sum to 1",
                self.fractions
            )));
        }
        if self.strategy == SplitStrategy::LeaveOneSubjectOut && self.held_out_subject.is_none() {
            return Err(Error::config(
                "leave_one_subject_out split needs held_out_subject",
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Splits {
    pub train: Vec<Window>,
    pub val: Vec<Window>,
    pub test: Vec<Window>,
}

/// Splits windows without shuffling. Windows keep the order they had within
/// each recording, so every cut is a temporal cut.
pub fn split(windows: Vec<Window>, spec: &SplitSpec) -> Result<Splits> {
    spec.validate()?;
    let [f_train, f_val, _] = spec.fractions;
    match spec.strategy {
        SplitStrategy::PerRecording => {
            let groups = group_by(windows, |w| (w.recording_id.clone(), 0));
            Ok(cut_groups(groups, f_train, f_train + f_val, false))
        }
        SplitStrategy::ActivityStacked => {
            if windows.iter().all(|w| w.activity_label == UNLABELED) {
                return Err(Error::data(
                    "activity_stacked split needs activity labels",
                ));
            }
            let dropped = windows.iter().filter(|w| w.activity_label == UNLABELED).count();
            if dropped > 0 {
                log::info!("activity_stacked split: ignoring {dropped} unlabeled window(s)");
            }
            let labeled = windows.into_iter().filter(|w| w.activity_label != UNLABELED);
            let groups = group_by(labeled, |w| (w.subject_id.to_string(), w.activity_label));
            Ok(cut_groups(groups, f_train, f_train + f_val, true))
        }
        SplitStrategy::LeaveOneSubjectOut => {
            let held = spec.held_out_subject.expect("validated");
            let (test, rest): (Vec<_>, Vec<_>) =
                windows.into_iter().partition(|w| w.subject_id == held);
            if test.is_empty() {
                return Err(Error::data(format!("held-out subject {held} has no windows")));
            }
            let train_share = f_train / (f_train + f_val);
            let groups = group_by(rest, |w| (w.recording_id.clone(), 0));
            let mut out = cut_groups(groups, train_share, 1.0, false);
            out.test = test;
            Ok(out)
        }
    }
}

fn group_by(
    windows: impl IntoIterator<Item = Window>,
    key: impl Fn(&Window) -> (String, i32),
) -> BTreeMap<(String, i32), Vec<Window>> {
    let mut groups: BTreeMap<(String, i32), Vec<Window>> = BTreeMap::new();
    for w in windows {
        groups.entry(key(&w)).or_default().push(w);
    }
    groups
}

/// Cut points for a group of `n` windows at fractions `a <= b`. With
/// `all_sets`, groups of three or more windows put at least one window in
/// each set.
pub fn cut_points(n: usize, a: f64, b: f64, all_sets: bool) -> (usize, usize) {
    let mut t = ((a * n as f64).round() as usize).min(n);
    let mut v = ((b * n as f64).round() as usize).clamp(t, n);
    if all_sets && n >= 3 {
        t = t.clamp(1, n - 2);
        v = v.clamp(t + 1, n - 1);
    }
    (t, v)
}

fn cut_groups(
    groups: BTreeMap<(String, i32), Vec<Window>>,
    a: f64,
    b: f64,
    all_sets: bool,
) -> Splits {
    let mut out = Splits::default();
    for (_, mut g) in groups {
        // recordings may be interleaved in a stacked group
        g.sort_by(|x, y| {
            (x.recording_id.as_str(), x.start_frame).cmp(&(y.recording_id.as_str(), y.start_frame))
        });
        let (t, v) = cut_points(g.len(), a, b, all_sets);
        let test = g.split_off(v);
        let val = g.split_off(t);
        out.train.extend(g);
        out.val.extend(val);
        out.test.extend(test);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use std::collections::HashSet;

    fn w(rec: &str, subject: u32, activity: i32, start: usize) -> Window {
        Window {
            data: Tensor::zeros(&[1, 1]),
            subject_id: subject,
            activity_label: activity,
            recording_id: rec.into(),
            start_frame: start,
        }
    }

    #[test]
    fn per_recording_exact_division() {
        let ws: Vec<_> = (0..100).map(|i| w("r", 1, 0, i)).collect();
        let s = split(ws, &SplitSpec::default()).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (64, 18, 18));
        assert!(s.train.iter().all(|w| w.start_frame < 64));
        assert!(s.test.iter().all(|w| w.start_frame >= 82));
    }

    #[test]
    fn stacked_covers_every_pair() {
        let mut ws = Vec::new();
        for subject in 0..2 {
            for activity in 0..2 {
                for i in 0..10 {
                    ws.push(w(&format!("s{subject}"), subject, activity, activity as usize * 100 + i));
                }
            }
        }
        let spec = SplitSpec {
            strategy: SplitStrategy::ActivityStacked,
            ..SplitSpec::default()
        };
        let s = split(ws, &spec).unwrap();
        for set in [&s.train, &s.val, &s.test] {
            let pairs: HashSet<(u32, i32)> = set.iter().map(|w| (w.subject_id, w.activity_label)).collect();
            assert_eq!(pairs.len(), 4);
        }
    }

    #[test]
    fn stacked_without_labels_fails() {
        let spec = SplitSpec {
            strategy: SplitStrategy::ActivityStacked,
            ..SplitSpec::default()
        };
        assert!(split(vec![w("r", 1, -1, 0)], &spec).is_err());
    }

    #[test]
    fn loso_holds_out_one_subject() {
        let ws: Vec<_> = (0..3u32)
            .flat_map(|s| (0..50).map(move |i| w(&format!("r{s}"), s, 0, i)))
            .collect();
        let spec = SplitSpec {
            strategy: SplitStrategy::LeaveOneSubjectOut,
            held_out_subject: Some(1),
            ..SplitSpec::default()
        };
        let s = split(ws, &spec).unwrap();
        assert!(s.test.iter().all(|w| w.subject_id == 1));
        assert_eq!(s.test.len(), 50);
        assert!(s.train.iter().chain(&s.val).all(|w| w.subject_id != 1));
        assert_eq!(s.train.len() + s.val.len(), 100);
        let missing = SplitSpec {
            held_out_subject: None,
            ..spec
        };
        assert!(split(vec![], &missing).is_err());
    }

    #[test]
    fn fractions_must_sum_to_one() {
        let spec = SplitSpec {
            fractions: [0.5, 0.2, 0.2],
            ..SplitSpec::default()
        };
        assert!(spec.validate().is_err());
    }
}
