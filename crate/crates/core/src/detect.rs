//! Cloud detection: dark-channel thresholding followed by a rescue pass for
//! pixels that never pass the threshold (stationary white objects).

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{FrameField, ImageSequence, ObservationMask};

pub const DEFAULT_GAMMA: f64 = 0.6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorConfig {
    pub gamma: f64,
    /// Neighbours kept per always-white pixel; `None` picks
    /// [`default_k`] for the sequence length.
    pub k_neighbors: Option<usize>,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self {
            gamma: DEFAULT_GAMMA,
            k_neighbors: None,
        }
    }
}

impl DetectorConfig {
    pub fn resolve_k(&self, frames: usize) -> Result<usize> {
        let k = self.k_neighbors.unwrap_or_else(|| default_k(frames));
        if k == 0 || k > frames {
            return Err(Error::InvalidParameter(format!(
                "K = {k} must lie in [1, {frames}]"
            )));
        }
        Ok(k)
    }
}

/// `max(1, ⌈0.1·t⌉)`.
pub fn default_k(frames: usize) -> usize {
    frames.div_ceil(10).max(1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectionReport {
    pub mask: ObservationMask,
    /// Pixels `(i, j)` excluded by thresholding at every frame.
    pub always_white: Vec<(usize, usize)>,
    /// Entries added back by the nearest-to-median search.
    pub rescued: usize,
}

/// Per-entry minimum over channels.
pub fn dark_channel(seq: &ImageSequence) -> FrameField {
    let d = seq.dims();
    let p = d.pixels();
    let mut field = FrameField::zeros(d.m, d.n, d.t);
    field
        .values
        .par_chunks_mut(p)
        .enumerate()
        .for_each(|(l, out)| {
            out.copy_from_slice(seq.plane(0, l));
            for k in 1..d.c {
                for (o, &v) in out.iter_mut().zip(seq.plane(k, l)) {
                    *o = o.min(v);
                }
            }
        });
    field
}

fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "gamma must lie in (0, 1), got {gamma}"
        )));
    }
    Ok(())
}

/// `(i, j, l)` is observed iff its dark channel is strictly below `gamma`.
pub fn threshold_mask(seq: &ImageSequence, gamma: f64) -> Result<ObservationMask> {
    check_gamma(gamma)?;
    let d = seq.dims();
    let dark = dark_channel(seq);
    ObservationMask::from_vec(
        d.m,
        d.n,
        d.t,
        dark.values.iter().map(|&v| v < gamma).collect(),
    )
}

/// Pixels never observed, ordered by `(j, i)`.
pub fn find_always_white(mask: &ObservationMask) -> Vec<(usize, usize)> {
    let (m, n, t) = mask.shape();
    let mut out = Vec::new();
    for j in 0..n {
        for i in 0..m {
            if (0..t).all(|l| !mask.is_observed(i, j, l)) {
                out.push((i, j));
            }
        }
    }
    out
}

/// Componentwise temporal median of the pixel's channel vector. For an even
/// number of frames this is the lower middle element, never an average.
pub fn median_pixel(seq: &ImageSequence, i: usize, j: usize) -> Vec<f64> {
    let d = seq.dims();
    (0..d.c)
        .map(|k| {
            let mut series: Vec<f64> = (0..d.t).map(|l| seq.get(i, j, k, l)).collect();
            series.sort_by(f64::total_cmp);
            series[(d.t - 1) / 2]
        })
        .collect()
}

/// The `k` frames whose channel vectors are closest (Euclidean) to `center`,
/// ties going to the earlier frame. Returned in ascending time order.
pub fn knn_recover(
    seq: &ImageSequence,
    i: usize,
    j: usize,
    center: &[f64],
    k: usize,
) -> Result<Vec<usize>> {
    let d = seq.dims();
    if k == 0 || k > d.t {
        return Err(Error::InvalidParameter(format!(
            "K = {k} must lie in [1, {}]",
            d.t
        )));
    }
    if center.len() != d.c {
        return Err(Error::Shape(format!(
            "center has {} channels, sequence has {}",
            center.len(),
            d.c
        )));
    }
    let mut dist: Vec<(f64, usize)> = (0..d.t)
        .map(|l| {
            let sq: f64 = center
                .iter()
                .enumerate()
                .map(|(ch, &c)| (seq.get(i, j, ch, l) - c).powi(2))
                .sum();
            (sq, l)
        })
        .collect();
    dist.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let mut picked: Vec<usize> = dist.into_iter().take(k).map(|(_, l)| l).collect();
    picked.sort_unstable();
    Ok(picked)
}

/// Full detection: threshold, then re-admit `K` frames of every
/// always-white pixel.
pub fn detect_clouds(seq: &ImageSequence, cfg: &DetectorConfig) -> Result<DetectionReport> {
    let d = seq.dims();
    let k = cfg.resolve_k(d.t)?;
    let mut mask = threshold_mask(seq, cfg.gamma)?;
    let always_white = find_always_white(&mask);
    let mut rescued = 0;
    for &(i, j) in &always_white {
        let center = median_pixel(seq, i, j);
        for l in knn_recover(seq, i, j, &center, k)? {
            mask.set(i, j, l, true);
            rescued += 1;
        }
    }
    Ok(DetectionReport {
        mask,
        always_white,
        rescued,
    })
}

/// Precision and recall of `detected` against `truth`, treating "observed"
/// as the positive class. Empty denominators count as perfect.
pub fn precision_recall(detected: &ObservationMask, truth: &ObservationMask) -> (f64, f64) {
    let mut tp = 0usize;
    let mut det = 0usize;
    let mut pos = 0usize;
    for (&a, &b) in detected.as_slice().iter().zip(truth.as_slice()) {
        tp += (a && b) as usize;
        det += a as usize;
        pos += b as usize;
    }
    let precision = if det == 0 {
        1.0
    } else {
        tp as f64 / det as f64
    };
    let recall = if pos == 0 {
        1.0
    } else {
        tp as f64 / pos as f64
    };
    (precision, recall)
}
