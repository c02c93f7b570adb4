//! On-disk store of prepared (segmented, split, normalized) windows, keyed by
//! a hash of the dataset bytes and the preparation settings.

use std::fs;
use std::path::{Path, PathBuf};

use limbnet_core::data::{ChannelStats, DatasetManifest, Window};
use limbnet_core::experiment::{PrepareSpec, Prepared};
use limbnet_core::Tensor;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

const MAGIC: &[u8; 8] = b"LMBNPREP";
const VERSION: u32 = 1;
pub const CACHE_ENV: &str = "LIMBNET_CACHE_DIR";

/// Hash of the manifest, every recording file and the preparation settings.
pub fn content_hash(manifest: &DatasetManifest, spec: &PrepareSpec) -> CliResult<String> {
    let mut h = Sha256::new();
    h.update(b"limbnet-prepare\0");
    h.update(serde_json::to_vec(manifest).map_err(limbnet_core::Error::from)?);
    for entry in &manifest.recordings {
        let path = manifest.resolve(&entry.path);
        let bytes = fs::read(&path).map_err(|e| CliError::io(&path, e))?;
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    h.update(serde_json::to_vec(spec).map_err(limbnet_core::Error::from)?);
    Ok(hex::encode(h.finalize()))
}

pub fn cache_dir(out: &Path) -> PathBuf {
    std::env::var_os(CACHE_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| out.join("cache"))
}

pub fn cache_path(dir: &Path, hash: &str) -> PathBuf {
    dir.join(format!("{hash}.prep"))
}

#[derive(Serialize, Deserialize)]
struct WindowMeta {
    subject_id: u32,
    activity_label: i32,
    recording_id: String,
    start_frame: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    hash: String,
    window_len: usize,
    channels: usize,
    stats: ChannelStats,
    normalized: bool,
    sets: [Vec<WindowMeta>; 3],
}

pub fn write(path: &Path, hash: &str, p: &Prepared) -> CliResult<()> {
    let sets = [&p.train, &p.val, &p.test];
    let first = p.train.first().ok_or_else(|| CliError::Cache("nothing to cache".into()))?;
    let header = Header {
        hash: hash.to_string(),
        window_len: first.len(),
        channels: first.channels(),
        stats: p.stats.clone(),
        normalized: p.normalized,
        sets: sets.map(|s| {
            s.iter()
                .map(|w| WindowMeta {
                    subject_id: w.subject_id,
                    activity_label: w.activity_label,
                    recording_id: w.recording_id.clone(),
                    start_frame: w.start_frame,
                })
                .collect()
        }),
    };
    let json = serde_json::to_vec(&header).map_err(limbnet_core::Error::from)?;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(json.len() as u64).to_le_bytes());
    buf.extend_from_slice(&json);
    for w in sets.iter().flat_map(|s| s.iter()) {
        for v in w.data.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, &buf).map_err(|e| CliError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| CliError::io(path, e))
}

pub fn read(path: &Path, hash: &str) -> CliResult<Prepared> {
    let bad = |why: &str| CliError::Cache(format!("{}: {why}", path.display()));
    let buf = fs::read(path).map_err(|e| CliError::io(path, e))?;
    if buf.len() < 52 || &buf[..8] != MAGIC {
        return Err(bad("not a prepared-window cache"));
    }
    let (body, digest) = buf.split_at(buf.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(bad("checksum mismatch"));
    }
    if u32::from_le_bytes(body[8..12].try_into().unwrap()) != VERSION {
        return Err(bad("unsupported version"));
    }
    let len = u64::from_le_bytes(body[12..20].try_into().unwrap()) as usize;
    let json = body.get(20..20 + len).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(json).map_err(limbnet_core::Error::from)?;
    if header.hash != hash {
        return Err(bad("content hash differs"));
    }
    let per = header.window_len * header.channels;
    let mut floats = body[20 + len..].chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let total: usize = header.sets.iter().map(Vec::len).sum();
    if body.len() - 20 - len != total * per * 8 {
        return Err(bad("data length does not match the header"));
    }
    let mut sets = header.sets.map(|metas| {
        metas
            .into_iter()
            .map(|m| {
                let data: Vec<f64> = floats.by_ref().take(per).collect();
                Ok(Window {
                    data: Tensor::new(vec![header.window_len, header.channels], data)?,
                    subject_id: m.subject_id,
                    activity_label: m.activity_label,
                    recording_id: m.recording_id,
                    start_frame: m.start_frame,
                })
            })
            .collect::<Result<Vec<_>, limbnet_core::Error>>()
    });
    let take = |s: &mut Result<Vec<Window>, limbnet_core::Error>| std::mem::replace(s, Ok(Vec::new()));
    Ok(Prepared {
        train: take(&mut sets[0])?,
        val: take(&mut sets[1])?,
        test: take(&mut sets[2])?,
        stats: header.stats,
        normalized: header.normalized,
    })
}
