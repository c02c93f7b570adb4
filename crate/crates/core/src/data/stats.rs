use serde::{Deserialize, Serialize};

use super::window::Window;
use crate::error::{Error, Result};

/// SD below this is treated as a dead channel and replaced by 1.
pub const DEGENERATE_SD: f64 = 1e-12;

/// Per-channel mean and population SD, fit on training windows only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub sd: Vec<f64>,
    pub degenerate: Vec<bool>,
}

impl ChannelStats {
    pub fn channels(&self) -> usize {
        self.mean.len()
    }
}

pub fn fit_channel_stats(windows: &[Window]) -> Result<ChannelStats> {
    let first = windows
        .first()
        .ok_or_else(|| Error::data("cannot fit channel statistics on an empty window set"))?;
    let c = first.channels();
    let mut count = 0usize;
    let mut mean = vec![0.0; c];
    for w in windows {
        if w.channels() != c {
            return Err(Error::data("windows disagree on channel count"));
        }
        for frame in w.data.data().chunks_exact(c) {
            for (m, v) in mean.iter_mut().zip(frame) {
                *m += v;
            }
        }
        count += w.len();
    }
    for m in &mut mean {
        *m /= count as f64;
    }
    // second pass around the mean, better conditioned than E[x^2] - E[x]^2
    let mut var = vec![0.0; c];
    for w in windows {
        for frame in w.data.data().chunks_exact(c) {
            for ((s, v), m) in var.iter_mut().zip(frame).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
    }
    let mut sd = Vec::with_capacity(c);
    let mut degenerate = Vec::with_capacity(c);
    for s in var {
        let v = (s / count as f64).sqrt();
        let dead = v < DEGENERATE_SD;
        degenerate.push(dead);
        sd.push(if dead { 1.0 } else { v });
    }
    Ok(ChannelStats {
        mean,
        sd,
        degenerate,
    })
}

/// `x <- (x - mean) / sd` per channel, in place.
pub fn normalize(windows: &mut [Window], stats: &ChannelStats) -> Result<()> {
    let c = stats.channels();
    for w in windows {
        if w.channels() != c {
            return Err(Error::data(format!(
                "window has {} channels, statistics have {c}",
                w.channels()
            )));
        }
        for frame in w.data.data_mut().chunks_exact_mut(c) {
            for ((v, m), s) in frame.iter_mut().zip(&stats.mean).zip(&stats.sd) {
                *v = (*v - m) / s;
            }
        }
    }
    Ok(())
}
