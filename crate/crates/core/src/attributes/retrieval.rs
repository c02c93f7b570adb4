use serde::{Deserialize, Serialize};

use super::schema::AttributeTable;
use crate::error::{Error, Result};

/// Probabilities are clamped to `[PRM_CLAMP, 1 - PRM_CLAMP]` before the log.
pub const PRM_CLAMP: f64 = 1e-6;

/// Scores this close to the best (relative) are treated as ties.
pub const TIE_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Similarity {
    Cosine,
    Prm,
}

pub fn cosine_similarity(a: &[f64], row: &[u8]) -> Result<f64> {
    check_len(a, row)?;
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nr = row.iter().map(|&b| f64::from(b)).sum::<f64>().sqrt();
    if na == 0.0 || nr == 0.0 {
        return Err(Error::numeric("cosine similarity of a zero vector"));
    }
    let dot: f64 = a.iter().zip(row).filter(|(_, &b)| b != 0).map(|(x, _)| x).sum();
    Ok(dot / (na * nr))
}

/// Log-likelihood of the binary row under independent Bernoulli
/// probabilities `a`.
pub fn prm_similarity(a: &[f64], row: &[u8]) -> Result<f64> {
    check_len(a, row)?;
    Ok(a.iter()
        .zip(row)
        .map(|(&p, &bit)| {
            let p = p.clamp(PRM_CLAMP, 1.0 - PRM_CLAMP);
            if bit != 0 {
                p.ln()
            } else {
                (1.0 - p).ln()
            }
        })
        .sum())
}

fn check_len(a: &[f64], row: &[u8]) -> Result<()> {
    if a.len() != row.len() {
        return Err(Error::config(format!(
            "attribute vector has {} entries, table row has {}",
            a.len(),
            row.len()
        )));
    }
    if a.iter().any(|x| !x.is_finite()) {
        return Err(Error::numeric("non-finite attribute prediction"));
    }
    Ok(())
}

pub fn similarity(metric: Similarity, a: &[f64], row: &[u8]) -> Result<f64> {
    match metric {
        Similarity::Cosine => cosine_similarity(a, row),
        Similarity::Prm => prm_similarity(a, row),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Retrieval {
    /// Every subject whose row attains the best score, ascending.
    pub subjects: Vec<u32>,
    pub score: f64,
}

impl Retrieval {
    /// A group hit counts as correct when it contains the true subject.
    pub fn hits(&self, subject_id: u32) -> bool {
        self.subjects.binary_search(&subject_id).is_ok()
    }
}

/// Nearest-neighbour identity lookup. Cosine is undefined for the all-zero
/// row; such rows are skipped under that metric.
pub fn nna_identify(a: &[f64], table: &AttributeTable, metric: Similarity) -> Result<Retrieval> {
    if table.is_empty() {
        return Err(Error::config("attribute table is empty"));
    }
    let mut scored = Vec::with_capacity(table.len());
    for (id, row) in &table.rows {
        if metric == Similarity::Cosine && row.iter().all(|&b| b == 0) {
            continue;
        }
        scored.push((*id, similarity(metric, a, row)?));
    }
    let best = scored.iter().map(|&(_, s)| s).fold(f64::NEG_INFINITY, f64::max);
    if scored.is_empty() {
        return Err(Error::config("no table row is comparable under cosine similarity"));
    }
    // equal scores may differ in the last bits when rows hold bits in other positions
    let cut = best - TIE_TOLERANCE * best.abs().max(1.0);
    let mut subjects: Vec<u32> = scored.iter().filter(|&&(_, s)| s >= cut).map(|&(id, _)| id).collect();
    subjects.sort_unstable();
    Ok(Retrieval {
        subjects,
        score: best,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(rows: &[(u32, &[u8])]) -> AttributeTable {
        AttributeTable {
            bit_names: (0..rows[0].1.len()).map(|i| format!("b{i}")).collect(),
            rows: rows.iter().map(|(id, r)| (*id, r.to_vec())).collect(),
        }
    }

    #[test]
    fn cosine_examples() {
        assert!((cosine_similarity(&[1.0, 0.0, 1.0, 0.0], &[1, 0, 1, 0]).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&[1.0, 0.0], &[0, 1]).unwrap(), 0.0);
        let s = cosine_similarity(&[0.9, 0.1, 0.8, 0.2], &[1, 0, 1, 0]).unwrap();
        // 1.7 / (sqrt(1.5) * sqrt(2))
        assert!((s - 1.7 / 3f64.sqrt()).abs() < 1e-12);
        assert!((s - 0.98150).abs() < 1e-4);
        assert!(cosine_similarity(&[0.0, 0.0], &[1, 0]).is_err());
        assert!(cosine_similarity(&[1.0], &[1, 0]).is_err());
    }

    #[test]
    fn prm_examples() {
        let s = prm_similarity(&[0.9, 0.1], &[1, 0]).unwrap();
        assert!((s - 2.0 * 0.9f64.ln()).abs() < 1e-15);
        assert!((s + 0.2107).abs() < 1e-4);
        for row in [[0u8, 0, 0], [1, 0, 1], [1, 1, 1]] {
            let s = prm_similarity(&[0.5; 3], &row).unwrap();
            assert!((s - 3.0 * 0.5f64.ln()).abs() < 1e-15);
        }
        // exact binary prediction survives the clamp
        let s = prm_similarity(&[1.0, 0.0], &[1, 0]).unwrap();
        assert!(s.is_finite() && s > prm_similarity(&[1.0, 0.0], &[1, 1]).unwrap());
    }

    #[test]
    fn nna_examples() {
        let t = table(&[(1, &[1, 0]), (2, &[0, 1])]);
        let r = nna_identify(&[0.9, 0.2], &t, Similarity::Cosine).unwrap();
        assert_eq!(r.subjects, vec![1]);
        let single = table(&[(5, &[1, 1])]);
        for metric in [Similarity::Cosine, Similarity::Prm] {
            assert_eq!(nna_identify(&[0.2, 0.7], &single, metric).unwrap().subjects, vec![5]);
        }
        let empty = AttributeTable {
            bit_names: vec![],
            rows: vec![],
        };
        assert!(nna_identify(&[], &empty, Similarity::Prm).is_err());
        let dup = table(&[(14, &[1, 1]), (3, &[0, 1]), (10, &[1, 1])]);
        let r = nna_identify(&[0.8, 0.9], &dup, Similarity::Prm).unwrap();
        assert_eq!(r.subjects, vec![10, 14]);
        assert!(r.hits(14) && !r.hits(3));
    }
}
