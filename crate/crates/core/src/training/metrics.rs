use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `matrix[truth][predicted]` counts.
pub fn confusion_matrix(truth: &[usize], predicted: &[usize], classes: usize) -> Result<Vec<Vec<u64>>> {
    if truth.len() != predicted.len() {
        return Err(Error::config("truth and prediction lengths differ"));
    }
    let mut m = vec![vec![0u64; classes]; classes];
    for (&t, &p) in truth.iter().zip(predicted) {
        if t >= classes || p >= classes {
            return Err(Error::config(format!("class index out of range for {classes} classes")));
        }
        m[t][p] += 1;
    }
    Ok(m)
}

/// Percentage of the diagonal.
pub fn accuracy(confusion: &[Vec<u64>]) -> f64 {
    let total: u64 = confusion.iter().flatten().sum();
    if total == 0 {
        return 0.0;
    }
    let hits: u64 = (0..confusion.len()).map(|i| confusion[i][i]).sum();
    100.0 * hits as f64 / total as f64
}

/// Support-weighted mean of per-class F1, in percent. A class whose precision
/// or recall has a zero denominator scores F1 = 0.
pub fn weighted_f1(confusion: &[Vec<u64>]) -> f64 {
    let n = confusion.len();
    let total: u64 = confusion.iter().flatten().sum();
    if total == 0 {
        return 0.0;
    }
    let mut sum = 0.0;
    for c in 0..n {
        let tp = confusion[c][c] as f64;
        let support: u64 = confusion[c].iter().sum();
        let predicted: u64 = confusion.iter().map(|row| row[c]).sum();
        if support == 0 || predicted == 0 {
            continue;
        }
        let p = tp / predicted as f64;
        let r = tp / support as f64;
        let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        sum += support as f64 * f1;
    }
    100.0 * sum / total as f64
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanSd {
    pub mean: f64,
    /// Population SD over the runs.
    pub sd: f64,
    pub n: usize,
}

impl MeanSd {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::config("mean of an empty list"));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Ok(MeanSd {
            mean,
            sd: var.sqrt(),
            n: values.len(),
        })
    }

    /// `"93.96 ± 0.03"`.
    pub fn display(&self) -> String {
        format!("{:.2} ± {:.2}", self.mean, self.sd)
    }
}
