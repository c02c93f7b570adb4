//! Synthetic multi-limb recordings with per-subject signatures.
//!
//! Every subject owns a bank of sinusoids (0.5-4 Hz) per channel whose
//! amplitude and phase shift with the activity; each activity adds a bank
//! shared by all subjects. Recordings cycle through activity blocks and add
//! Gaussian noise. Optionally the bits of an attribute schema are written into
//! the signals as DC offsets on dedicated channels.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::attributes::{encode_subject, AttributeSchema};
use crate::data::{
    write_recording, DatasetManifest, LimbSpec, NanPolicy, Recording, RecordingEntry, SubjectMeta,
};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

const LIMB_NAMES: [&str; 5] = ["left_leg", "left_arm", "torso", "right_arm", "right_leg"];
const COMPONENTS: usize = 2;
const MIN_HZ: f64 = 0.5;
const MAX_HZ: f64 = 4.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSpec {
    pub name: String,
    pub subjects: usize,
    /// Id of the first subject; the others follow consecutively.
    pub first_subject_id: u32,
    pub limbs: usize,
    pub channels_per_limb: usize,
    pub sampling_rate: f64,
    pub recordings_per_subject: usize,
    pub frames_per_recording: usize,
    pub activities: usize,
    /// Frames per activity block; blocks cycle through the activities.
    pub activity_block: usize,
    pub noise_sd: f64,
    pub seed: u64,
    /// Schema preset or file whose bits are written into the signals.
    pub encode_schema: Option<String>,
    /// Half-width of the uniform per-subject, per-channel static offset
    /// (sensor placement); channels carrying attribute bits get none.
    pub placement_offset: f64,
    /// DC offset magnitude for encoded bits (+offset for 1, -offset for 0).
    pub encode_offset: f64,
    /// Also require every pair of encoded bits to show all four value
    /// combinations on at least two subjects each, so no bit is predictable
    /// from another one in any leave-one-subject-out fold.
    pub pairwise_balance: bool,
    /// Subject ids `[a, b]`: `b` reuses `a`'s signature (negative control).
    pub clone_pair: Option<[u32; 2]>,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            name: "synthetic".into(),
            subjects: 8,
            first_subject_id: 1,
            limbs: 5,
            channels_per_limb: 6,
            sampling_rate: 100.0,
            recordings_per_subject: 1,
            frames_per_recording: 3000,
            activities: 4,
            activity_block: 150,
            noise_sd: 0.1,
            seed: 0,
            encode_schema: None,
            placement_offset: 1.0,
            encode_offset: 2.0,
            pairwise_balance: false,
            clone_pair: None,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.subjects == 0 || self.limbs == 0 || self.channels_per_limb == 0 {
            return Err(Error::config("synthetic spec needs subjects, limbs and channels"));
        }
        if self.recordings_per_subject == 0 || self.frames_per_recording == 0 {
            return Err(Error::config("synthetic spec needs recordings with frames"));
        }
        if self.activities == 0 || self.activity_block == 0 {
            return Err(Error::config("synthetic spec needs activities with non-empty blocks"));
        }
        if !(self.sampling_rate > 0.0) || !(self.noise_sd >= 0.0) || !(self.placement_offset >= 0.0) {
            return Err(Error::config("sampling rate must be > 0, noise sd and placement offset >= 0"));
        }
        if let Some([a, b]) = self.clone_pair {
            let ids = self.subject_ids();
            if a == b || !ids.contains(&a) || !ids.contains(&b) {
                return Err(Error::config("clone pair must name two distinct generated subjects"));
            }
        }
        Ok(())
    }

    pub fn subject_ids(&self) -> Vec<u32> {
        (0..self.subjects as u32).map(|i| self.first_subject_id + i).collect()
    }

    pub fn channels(&self) -> usize {
        self.limbs * self.channels_per_limb
    }

    fn limb_name(&self, l: usize) -> String {
        if self.limbs == LIMB_NAMES.len() {
            LIMB_NAMES[l].to_string()
        } else {
            format!("limb{l}")
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Wave {
    amp: f64,
    hz: f64,
    phase: f64,
}

fn draw_bank(rng: &mut ChaCha8Rng) -> [Wave; COMPONENTS] {
    std::array::from_fn(|_| Wave {
        amp: rng.random_range(0.5..1.5),
        hz: rng.random_range(MIN_HZ..MAX_HZ),
        phase: rng.random_range(0.0..TAU),
    })
}

fn draw_meta(id: u32, rng: &mut ChaCha8Rng) -> SubjectMeta {
    SubjectMeta {
        id,
        gender: if rng.random_bool(0.5) { "M" } else { "F" }.into(),
        age: rng.random_range(20..=60) as f64,
        weight: rng.random_range(45..=110) as f64,
        height: rng.random_range(155..=195) as f64,
        handedness: if rng.random_bool(0.8) { "R" } else { "L" }.into(),
    }
}

/// Draws subject metadata until every bit of `schema` takes both values on
/// at least two subjects each (needed for leave-one-subject-out training).
fn draw_subjects(spec: &SynthSpec, schema: Option<&AttributeSchema>, rng: &mut ChaCha8Rng) -> Result<Vec<SubjectMeta>> {
    let attempts = if spec.pairwise_balance { 2_000_000 } else { 100_000 };
    for _ in 0..attempts {
        let subjects: Vec<SubjectMeta> = spec.subject_ids().into_iter().map(|id| draw_meta(id, rng)).collect();
        let Some(schema) = schema else {
            return Ok(subjects);
        };
        let rows = subjects
            .iter()
            .map(|s| encode_subject(s, schema))
            .collect::<Result<Vec<_>>>()?;
        let balanced = (0..schema.bits()).all(|b| {
            let ones = rows.iter().filter(|r| r[b] == 1).count();
            ones >= 2 && rows.len() - ones >= 2
        });
        if balanced && (!spec.pairwise_balance || pairwise_balanced(&rows)) {
            return Ok(subjects);
        }
    }
    Err(Error::config(format!(
        "could not draw {} subjects covering every attribute bit of the schema twice",
        spec.subjects
    )))
}

fn pairwise_balanced(rows: &[Vec<u8>]) -> bool {
    let bits = rows.first().map_or(0, Vec::len);
    (0..bits).all(|i| {
        (i + 1..bits).all(|j| {
            let mut counts = [0usize; 4];
            for r in rows {
                counts[usize::from(r[i] * 2 + r[j])] += 1;
            }
            counts.iter().all(|&c| c >= 2)
        })
    })
}

/// Dataset generated in memory; [`Synthetic::write`] puts it on disk.
#[derive(Clone, Debug)]
pub struct Synthetic {
    pub manifest: DatasetManifest,
    pub recordings: Vec<Recording>,
    /// Channel carrying each encoded attribute bit.
    pub encoded_channels: Vec<usize>,
}

pub fn generate(spec: &SynthSpec) -> Result<Synthetic> {
    spec.validate()?;
    let schema = spec.encode_schema.as_deref().map(AttributeSchema::load).transpose()?;
    let channels = spec.channels();
    if let Some(s) = &schema {
        if s.bits() > channels {
            return Err(Error::config(format!(
                "{} attribute bits do not fit into {channels} channels",
                s.bits()
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let subjects = draw_subjects(spec, schema.as_ref(), &mut rng)?;

    // signature[(subject, activity)][channel]: the subject's own bank, scaled
    // and shifted per activity, plus a bank that every subject shares for that
    // activity
    let activity_banks: Vec<Vec<[Wave; COMPONENTS]>> = (0..spec.activities)
        .map(|_| (0..channels).map(|_| draw_bank(&mut rng)).collect())
        .collect();
    let mut signatures: BTreeMap<(u32, usize), Vec<Vec<Wave>>> = BTreeMap::new();
    let mut placement: BTreeMap<u32, Vec<f64>> = BTreeMap::new();
    for s in &subjects {
        let half = spec.placement_offset;
        placement.insert(s.id, (0..channels).map(|_| if half > 0.0 { rng.random_range(-half..half) } else { 0.0 }).collect());
        let own: Vec<[Wave; COMPONENTS]> = (0..channels).map(|_| draw_bank(&mut rng)).collect();
        for (a, shared) in activity_banks.iter().enumerate() {
            let scale = rng.random_range(0.8..1.2);
            let shift = rng.random_range(0.0..TAU);
            let bank = own
                .iter()
                .zip(shared)
                .map(|(mine, common)| {
                    let mut waves: Vec<Wave> = mine
                        .iter()
                        .map(|w| Wave {
                            amp: w.amp * scale,
                            phase: w.phase + shift,
                            ..*w
                        })
                        .collect();
                    waves.extend(common.iter().map(|w| Wave { amp: 0.5 * w.amp, ..*w }));
                    waves
                })
                .collect();
            signatures.insert((s.id, a), bank);
        }
    }
    if let Some([a, b]) = spec.clone_pair {
        for act in 0..spec.activities {
            let copy = signatures[&(a, act)].clone();
            signatures.insert((b, act), copy);
        }
        let copy = placement[&a].clone();
        placement.insert(b, copy);
    }

    // encoded bits sit on channels spread evenly over the layout
    let encoded_channels: Vec<usize> = match &schema {
        Some(s) => (0..s.bits()).map(|b| b * channels / s.bits()).collect(),
        None => Vec::new(),
    };
    let noise = Normal::new(0.0, spec.noise_sd).map_err(|e| Error::config(e.to_string()))?;
    let channel_names: Vec<String> = (0..spec.limbs)
        .flat_map(|l| (0..spec.channels_per_limb).map(move |c| (l, c)))
        .map(|(l, c)| format!("{}_{c}", spec.limb_name(l)))
        .collect();

    let mut recordings = Vec::new();
    let mut entries = Vec::new();
    for s in &subjects {
        let mut fixed = placement[&s.id].clone();
        if let Some(schema) = &schema {
            for (&bit, &c) in encode_subject(s, schema)?.iter().zip(&encoded_channels) {
                fixed[c] = if bit == 1 { spec.encode_offset } else { -spec.encode_offset };
            }
        }
        for r in 0..spec.recordings_per_subject {
            let t0: f64 = rng.random_range(0.0..100.0);
            let first_activity = rng.random_range(0..spec.activities);
            let mut frames = Vec::with_capacity(spec.frames_per_recording * channels);
            let mut labels = Vec::with_capacity(spec.frames_per_recording);
            for t in 0..spec.frames_per_recording {
                let act = (first_activity + t / spec.activity_block) % spec.activities;
                let time = t0 + t as f64 / spec.sampling_rate;
                let bank = &signatures[&(s.id, act)];
                for c in 0..channels {
                    let clean: f64 = bank[c].iter().map(|w| w.amp * (TAU * w.hz * time + w.phase).sin()).sum();
                    frames.push(clean + fixed[c] + noise.sample(&mut rng));
                }
                labels.push(act as i32);
            }
            let id = format!("s{:02}_r{r}", s.id);
            let path = PathBuf::from(format!("{id}.csv"));
            recordings.push(Recording::new(
                id.clone(),
                s.id,
                Tensor::new(vec![spec.frames_per_recording, channels], frames)?,
                Some(labels),
                spec.sampling_rate,
            )?);
            entries.push(RecordingEntry {
                path,
                subject_id: s.id,
                recording_id: id,
            });
        }
    }
    let limbs = (0..spec.limbs)
        .map(|l| LimbSpec {
            name: spec.limb_name(l),
            channels: channel_names[l * spec.channels_per_limb..(l + 1) * spec.channels_per_limb].to_vec(),
        })
        .collect();
    let manifest = DatasetManifest {
        name: spec.name.clone(),
        sampling_rate: spec.sampling_rate,
        channels: channel_names,
        limbs,
        activities: (0..spec.activities).map(|a| (format!("activity{a}"), a as i32)).collect(),
        subjects,
        recordings: entries,
        nan_policy: NanPolicy::Error,
        base_dir: PathBuf::new(),
    };
    manifest.validate()?;
    Ok(Synthetic {
        manifest,
        recordings,
        encoded_channels,
    })
}

impl Synthetic {
    /// Writes `manifest.json` and one CSV per recording into `dir`.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut names: Vec<(i32, String)> = self.manifest.activities.iter().map(|(n, &i)| (i, n.clone())).collect();
        names.sort();
        let activity_names: Vec<String> = names.into_iter().map(|(_, n)| n).collect();
        for (rec, entry) in self.recordings.iter().zip(&self.manifest.recordings) {
            write_recording(&dir.join(&entry.path), rec, &self.manifest.channels, &activity_names)?;
        }
        let path = dir.join("manifest.json");
        self.manifest.save(&path)?;
        Ok(path)
    }
}
