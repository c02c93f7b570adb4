//! Recording ingestion, limb grouping, windowing, normalization and splits.

mod manifest;
mod recording;
mod split;
mod stats;
mod window;

pub use manifest::{DatasetManifest, LimbGrouping, LimbSpec, NanPolicy, RecordingEntry, SubjectMeta};
pub use recording::{load_recording, write_recording, Recording, UNLABELED};
pub use split::{cut_points, split, SplitSpec, SplitStrategy, Splits};
pub use stats::{fit_channel_stats, normalize, ChannelStats, DEGENERATE_SD};
pub use window::{add_gaussian_noise, segment, stack_windows, window_count, window_label, Window};

use crate::error::Result;

/// Loads every recording listed in the manifest, in manifest order.
pub fn load_dataset(manifest: &DatasetManifest) -> Result<Vec<Recording>> {
    manifest
        .recordings
        .iter()
        .map(|entry| load_recording(&manifest.resolve(&entry.path), entry, manifest))
        .collect()
}

/// Segments every recording and concatenates the windows.
pub fn segment_all(recordings: &[Recording], win_len: usize, stride: usize) -> Result<Vec<Window>> {
    let mut out = Vec::new();
    for rec in recordings {
        out.extend(segment(rec, win_len, stride)?);
    }
    Ok(out)
}
