use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::recording::{Recording, UNLABELED};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Fixed-length segment cut out of one recording.
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    /// `[win_len, channels]`
    pub data: Tensor,
    pub subject_id: u32,
    /// Majority frame label, [`UNLABELED`] when no frame carries one.
    pub activity_label: i32,
    pub recording_id: String,
    pub start_frame: usize,
}

impl Window {
    pub fn len(&self) -> usize {
        self.data.dim(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn channels(&self) -> usize {
        self.data.dim(1)
    }
}

/// Number of windows [`segment`] produces.
pub fn window_count(time: usize, win_len: usize, stride: usize) -> usize {
    if win_len == 0 || stride == 0 || time < win_len {
        0
    } else {
        (time - win_len) / stride + 1
    }
}

/// Sliding windows starting at 0, stride, 2*stride, ...
pub fn segment(rec: &Recording, win_len: usize, stride: usize) -> Result<Vec<Window>> {
    if win_len == 0 || stride == 0 {
        return Err(Error::config(format!(
            "window length and stride must be >= 1, got {win_len} and {stride}"
        )));
    }
    let c = rec.channels();
    let n = window_count(rec.time(), win_len, stride);
    Ok((0..n)
        .map(|i| {
            let start = i * stride;
            let data = rec.frames.data()[start * c..(start + win_len) * c].to_vec();
            let activity_label = rec
                .activity
                .as_ref()
                .map_or(UNLABELED, |a| window_label(&a[start..start + win_len]));
            Window {
                data: Tensor::new(vec![win_len, c], data).expect("slice has window shape"),
                subject_id: rec.subject_id,
                activity_label,
                recording_id: rec.recording_id.clone(),
                start_frame: start,
            }
        })
        .collect())
}

/// Majority over labeled frames. Ties go to the center frame's label when it
/// is one of the tied labels, otherwise to the smallest tied label.
pub fn window_label(frames: &[i32]) -> i32 {
    let mut counts: BTreeMap<i32, usize> = BTreeMap::new();
    for &l in frames.iter().filter(|&&l| l != UNLABELED) {
        *counts.entry(l).or_default() += 1;
    }
    let Some(&best) = counts.values().max() else {
        return UNLABELED;
    };
    let center = frames[frames.len() / 2];
    if counts.get(&center) == Some(&best) {
        return center;
    }
    counts
        .into_iter()
        .find(|&(_, n)| n == best)
        .map(|(l, _)| l)
        .unwrap_or(UNLABELED)
}

/// Stacks windows into a `[batch, win_len, channels]` tensor.
pub fn stack_windows<'a>(windows: impl IntoIterator<Item = &'a Window>) -> Result<Tensor> {
    let items: Vec<&Tensor> = windows.into_iter().map(|w| &w.data).collect();
    Tensor::stack(&items)
}

/// Returns `x + N(0, sigma^2)` elementwise; the input is untouched.
pub fn add_gaussian_noise<R: Rng + ?Sized>(x: &Tensor, sigma: f64, rng: &mut R) -> Result<Tensor> {
    if sigma == 0.0 {
        return Ok(x.clone());
    }
    let normal = Normal::new(0.0, sigma)
        .map_err(|e| Error::config(format!("noise sigma {sigma}: {e}")))?;
    Ok(x.map(|v| v + normal.sample(rng)))
}
