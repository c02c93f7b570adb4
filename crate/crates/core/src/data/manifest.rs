use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Recording protocol entry for one subject.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectMeta {
    pub id: u32,
    /// `"F"` or `"M"`.
    pub gender: String,
    pub age: f64,
    /// Kilograms.
    pub weight: f64,
    /// Centimetres.
    pub height: f64,
    /// `"L"` or `"R"`.
    pub handedness: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimbSpec {
    pub name: String,
    pub channels: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecordingEntry {
    /// CSV path, relative to the manifest's directory unless absolute.
    pub path: PathBuf,
    pub subject_id: u32,
    pub recording_id: String,
}

/// What to do with frames that contain a non-finite sensor value.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NanPolicy {
    #[default]
    Error,
    /// Drop the whole frame and log how many were dropped.
    DropFrame,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub sampling_rate: f64,
    pub channels: Vec<String>,
    pub limbs: Vec<LimbSpec>,
    /// Activity name to class index.
    #[serde(default)]
    pub activities: BTreeMap<String, i32>,
    pub subjects: Vec<SubjectMeta>,
    pub recordings: Vec<RecordingEntry>,
    #[serde(default)]
    pub nan_policy: NanPolicy,
    /// Directory the manifest was read from; recording paths resolve against it.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl DatasetManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut manifest: DatasetManifest = serde_json::from_str(&text)
            .map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
        manifest.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() {
            return Err(Error::data("manifest lists no channels"));
        }
        if !(self.sampling_rate > 0.0) {
            return Err(Error::data(format!(
                "sampling rate must be positive, got {}",
                self.sampling_rate
            )));
        }
        let mut seen = HashSet::new();
        for c in &self.channels {
            if !seen.insert(c.as_str()) {
                return Err(Error::data(format!("duplicate channel name {c}")));
            }
        }
        self.limb_grouping()?;
        let subject_ids: HashSet<u32> = self.subjects.iter().map(|s| s.id).collect();
        if subject_ids.len() != self.subjects.len() {
            return Err(Error::data("duplicate subject id in manifest"));
        }
        let mut rec_ids = HashSet::new();
        for r in &self.recordings {
            if !subject_ids.contains(&r.subject_id) {
                return Err(Error::data(format!(
                    "recording {} references unknown subject {}",
                    r.recording_id, r.subject_id
                )));
            }
            if !rec_ids.insert(r.recording_id.as_str()) {
                return Err(Error::data(format!(
                    "duplicate recording id {}",
                    r.recording_id
                )));
            }
        }
        Ok(())
    }

    pub fn limb_grouping(&self) -> Result<LimbGrouping> {
        let limbs = self
            .limbs
            .iter()
            .map(|limb| {
                let idx = limb
                    .channels
                    .iter()
                    .map(|c| {
                        self.channels.iter().position(|x| x == c).ok_or_else(|| {
                            Error::data(format!("limb {} references unknown channel {c}", limb.name))
                        })
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok((limb.name.clone(), idx))
            })
            .collect::<Result<Vec<_>>>()?;
        LimbGrouping::new(limbs, self.channels.len())
    }

    pub fn subject(&self, id: u32) -> Option<&SubjectMeta> {
        self.subjects.iter().find(|s| s.id == id)
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    /// Subject ids that have at least one recording, ascending.
    pub fn recorded_subjects(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.recordings.iter().map(|r| r.subject_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }
}

/// Ordered assignment of channel indices to limbs; one network branch per limb.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LimbGrouping {
    limbs: Vec<(String, Vec<usize>)>,
    channels: usize,
}

impl LimbGrouping {
    pub fn new(limbs: Vec<(String, Vec<usize>)>, channels: usize) -> Result<Self> {
        if limbs.is_empty() {
            return Err(Error::config("limb grouping needs at least one limb"));
        }
        let mut used = vec![false; channels];
        for (name, idx) in &limbs {
            if idx.is_empty() {
                return Err(Error::config(format!("limb {name} has no channels")));
            }
            for &i in idx {
                if i >= channels {
                    return Err(Error::config(format!(
                        "limb {name}: channel {i} out of range for {channels} channels"
                    )));
                }
                if std::mem::replace(&mut used[i], true) {
                    return Err(Error::config(format!(
                        "channel {i} assigned to more than one limb"
                    )));
                }
            }
        }
        Ok(LimbGrouping { limbs, channels })
    }

    /// All channels in one branch, the layout used for relevance studies.
    pub fn single(channels: usize) -> Self {
        LimbGrouping {
            limbs: vec![("all".to_string(), (0..channels).collect())],
            channels,
        }
    }

    pub fn limbs(&self) -> &[(String, Vec<usize>)] {
        &self.limbs
    }

    pub fn len(&self) -> usize {
        self.limbs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.limbs.is_empty()
    }

    /// Total number of input channels the grouping indexes into.
    pub fn channels(&self) -> usize {
        self.channels
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grouping_rejects_overlap_and_range() {
        assert!(LimbGrouping::new(vec![("a".into(), vec![0, 1]), ("b".into(), vec![1])], 3).is_err());
        assert!(LimbGrouping::new(vec![("a".into(), vec![3])], 3).is_err());
        assert!(LimbGrouping::new(vec![], 3).is_err());
        let g = LimbGrouping::new(vec![("a".into(), vec![0, 2]), ("b".into(), vec![1])], 3).unwrap();
        assert_eq!(g.len(), 2);
    }
}
