use std::path::Path;

use super::manifest::{DatasetManifest, NanPolicy, RecordingEntry};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Frame label for frames without an activity annotation.
pub const UNLABELED: i32 = -1;

/// One subject's continuous multi-channel session.
#[derive(Clone, Debug, PartialEq)]
pub struct Recording {
    pub recording_id: String,
    pub subject_id: u32,
    /// `[time, channels]`
    pub frames: Tensor,
    /// Per-frame class index, [`UNLABELED`] where missing.
    pub activity: Option<Vec<i32>>,
    pub sampling_rate: f64,
}

impl Recording {
    pub fn new(
        recording_id: impl Into<String>,
        subject_id: u32,
        frames: Tensor,
        activity: Option<Vec<i32>>,
        sampling_rate: f64,
    ) -> Result<Self> {
        if frames.ndim() != 2 || frames.dim(1) == 0 {
            return Err(Error::data(format!(
                "recording frames must be [time, channels>0], got {:?}",
                frames.shape()
            )));
        }
        if let Some(a) = &activity {
            if a.len() != frames.dim(0) {
                return Err(Error::data(format!(
                    "{} activity labels for {} frames",
                    a.len(),
                    frames.dim(0)
                )));
            }
        }
        if !(sampling_rate > 0.0) {
            return Err(Error::data("sampling rate must be positive"));
        }
        Ok(Recording {
            recording_id: recording_id.into(),
            subject_id,
            frames,
            activity,
            sampling_rate,
        })
    }

    pub fn time(&self) -> usize {
        self.frames.dim(0)
    }

    pub fn channels(&self) -> usize {
        self.frames.dim(1)
    }
}

/// Reads one recording CSV (`frame,<channels...>[,activity]`).
pub fn load_recording(
    path: &Path,
    entry: &RecordingEntry,
    manifest: &DatasetManifest,
) -> Result<Recording> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file);
    let header = reader
        .headers()
        .map_err(|e| Error::data(format!("{}: {e}", path.display())))?
        .clone();
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    let c = manifest.channels.len();
    let has_activity = match names.len() {
        n if n == c + 2 && names[c + 1] == "activity" => true,
        n if n == c + 1 => false,
        n => {
            return Err(Error::data(format!(
                "{}: header has {n} columns, manifest expects frame + {c} channels [+ activity]",
                path.display()
            )))
        }
    };
    if names[0] != "frame" || names[1..=c] != manifest.channels.iter().map(String::as_str).collect::<Vec<_>>()[..] {
        return Err(Error::data(format!(
            "{}: header does not match manifest channel list",
            path.display()
        )));
    }

    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut dropped = 0usize;
    for (i, record) in reader.records().enumerate() {
        // line 1 is the header
        let line = i + 2;
        let record = record.map_err(|e| Error::data(format!("{}: line {line}: {e}", path.display())))?;
        if record.len() != names.len() {
            return Err(Error::data(format!(
                "{}: line {line}: ragged row with {} cells, expected {}",
                path.display(),
                record.len(),
                names.len()
            )));
        }
        let mut row = Vec::with_capacity(c);
        let mut bad_cell = None;
        for (j, cell) in record.iter().enumerate().skip(1).take(c) {
            let v: f64 = cell.trim().parse().map_err(|_| {
                Error::data(format!(
                    "{}: line {line}, column {} ({}): not a number: {cell:?}",
                    path.display(),
                    j + 1,
                    names[j]
                ))
            })?;
            if !v.is_finite() && bad_cell.is_none() {
                bad_cell = Some(j);
            }
            row.push(v);
        }
        if let Some(j) = bad_cell {
            match manifest.nan_policy {
                NanPolicy::Error => {
                    return Err(Error::data(format!(
                        "{}: line {line}, column {} ({}): non-finite value",
                        path.display(),
                        j + 1,
                        names[j]
                    )))
                }
                NanPolicy::DropFrame => {
                    dropped += 1;
                    continue;
                }
            }
        }
        if has_activity {
            let cell = record[c + 1].trim();
            let label = if cell.is_empty() {
                UNLABELED
            } else {
                *manifest.activities.get(cell).ok_or_else(|| {
                    Error::data(format!(
                        "{}: line {line}: unknown activity label {cell:?}",
                        path.display()
                    ))
                })?
            };
            labels.push(label);
        }
        data.extend(row);
    }
    if dropped > 0 {
        log::warn!(
            "{}: dropped {dropped} frame(s) with non-finite values",
            path.display()
        );
    }
    let time = data.len() / c;
    Recording::new(
        entry.recording_id.clone(),
        entry.subject_id,
        Tensor::new(vec![time, c], data)?,
        has_activity.then_some(labels),
        manifest.sampling_rate,
    )
}

/// Writes a recording in the CSV layout [`load_recording`] reads.
pub fn write_recording(
    path: &Path,
    rec: &Recording,
    channel_names: &[String],
    activity_names: &[String],
) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::data(format!("{}: {e}", path.display())))?;
    let csv_err = |e: csv::Error| Error::data(format!("{}: {e}", path.display()));
    let mut header = vec!["frame".to_string()];
    header.extend(channel_names.iter().cloned());
    if rec.activity.is_some() {
        header.push("activity".to_string());
    }
    w.write_record(&header).map_err(csv_err)?;
    let c = rec.channels();
    for t in 0..rec.time() {
        let mut row = Vec::with_capacity(c + 2);
        row.push(t.to_string());
        row.extend(rec.frames.data()[t * c..(t + 1) * c].iter().map(|v| format!("{v}")));
        if let Some(a) = &rec.activity {
            let label = a[t];
            row.push(if label < 0 {
                String::new()
            } else {
                activity_names
                    .get(label as usize)
                    .cloned()
                    .ok_or_else(|| Error::data(format!("no name for activity {label}")))?
            });
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::manifest::{LimbSpec, SubjectMeta};
    use std::collections::BTreeMap;
    use std::path::PathBuf;

    fn manifest(channels: &[&str]) -> DatasetManifest {
        DatasetManifest {
            name: "t".into(),
            sampling_rate: 100.0,
            channels: channels.iter().map(|s| s.to_string()).collect(),
            limbs: vec![LimbSpec {
                name: "all".into(),
                channels: channels.iter().map(|s| s.to_string()).collect(),
            }],
            activities: BTreeMap::from([("walk".to_string(), 0), ("cart".to_string(), 1)]),
            subjects: vec![SubjectMeta {
                id: 1,
                gender: "F".into(),
                age: 30.0,
                weight: 60.0,
                height: 165.0,
                handedness: "R".into(),
            }],
            recordings: vec![],
            nan_policy: NanPolicy::Error,
            base_dir: PathBuf::new(),
        }
    }

    fn entry() -> RecordingEntry {
        RecordingEntry {
            path: "r.csv".into(),
            subject_id: 1,
            recording_id: "r".into(),
        }
    }

    fn write(dir: &tempfile::TempDir, text: &str) -> PathBuf {
        let p = dir.path().join("r.csv");
        std::fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn reads_small_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "frame,a,b,activity\n0,1.0,2.0,walk\n1,3,4,cart\n2,5,6,\n");
        let rec = load_recording(&p, &entry(), &manifest(&["a", "b"])).unwrap();
        assert_eq!(rec.frames.shape(), &[3, 2]);
        assert_eq!(rec.frames.data(), &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert_eq!(rec.activity, Some(vec![0, 1, UNLABELED]));
    }

    #[test]
    fn nan_cell_names_line_and_column() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "frame,a,b\n0,1.0,2.0\n1,NaN,4\n");
        let err = load_recording(&p, &entry(), &manifest(&["a", "b"])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("line 3") && msg.contains("column 2 (a)"), "{msg}");
    }

    #[test]
    fn nan_frames_can_be_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(&dir, "frame,a,b\n0,1.0,2.0\n1,NaN,4\n2,5,6\n");
        let mut m = manifest(&["a", "b"]);
        m.nan_policy = NanPolicy::DropFrame;
        let rec = load_recording(&p, &entry(), &m).unwrap();
        assert_eq!(rec.frames.data(), &[1.0, 2.0, 5.0, 6.0]);
    }

    #[test]
    fn bad_rows_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let m = manifest(&["a", "b"]);
        let p = write(&dir, "frame,a,b\n0,1.0\n");
        assert!(load_recording(&p, &entry(), &m).unwrap_err().to_string().contains("ragged"));
        let p = write(&dir, "frame,a,b\n0,1.0,x\n");
        assert!(load_recording(&p, &entry(), &m).unwrap_err().to_string().contains("not a number"));
        let p = write(&dir, "frame,a,b,activity\n0,1.0,2,jump\n");
        assert!(load_recording(&p, &entry(), &m).unwrap_err().to_string().contains("unknown activity"));
        let p = write(&dir, "frame,b,a\n0,1.0,2\n");
        assert!(load_recording(&p, &entry(), &m).is_err());
        let missing = dir.path().join("nope.csv");
        assert!(matches!(load_recording(&missing, &entry(), &m), Err(Error::Io { .. })));
    }

    #[test]
    fn thirty_channel_file() {
        let names: Vec<String> = (0..30).map(|i| format!("c{i}")).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let m = manifest(&refs);
        let rec = Recording::new("r", 1, Tensor::from_fn(&[4, 30], |i| i as f64), None, 100.0).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        write_recording(&p, &rec, &names, &[]).unwrap();
        let back = load_recording(&p, &entry(), &m).unwrap();
        assert_eq!(back.frames.shape(), &[4, 30]);
        assert_eq!(back.frames, rec.frames);
    }
}
