//! Full utterance-to-features path.
//!
//! `extract` runs: pre-emphasis, framing, energy SAD, then per frame the
//! four kernel stages (window, power spectrum, log-mel, DCT), and finally
//! cepstral mean normalization. Frames are independent, so the per-frame
//! stage maps in parallel when the `parallel` feature is on; rows are
//! collected in frame order, which keeps the output bit-identical to the
//! sequential path.

use crate::audio_io::Waveform;
use crate::autodiff::forward_frame_retained;
use crate::error::{Error, Result};
use crate::kernels::KernelSet;
use crate::linalg::Mat;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// T x C matrix of cepstral frames for one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    values: Mat,
    frame_shift_s: f64,
}

impl FeatureMatrix {
    /// Build from per-frame rows; all rows must share one length.
    pub fn from_rows(rows: Vec<Vec<f64>>, frame_shift_s: f64) -> Result<Self> {
        let num_ceps = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(rows.len() * num_ceps);
        for (t, row) in rows.iter().enumerate() {
            if row.len() != num_ceps {
                return Err(Error::ShapeMismatch {
                    op: "feature_matrix",
                    detail: format!("frame {t} has {} values, expected {num_ceps}", row.len()),
                });
            }
            data.extend_from_slice(row);
        }
        Ok(FeatureMatrix { values: Mat::from_vec(rows.len(), num_ceps, data), frame_shift_s })
    }

    pub fn num_frames(&self) -> usize {
        self.values.rows()
    }

    pub fn num_ceps(&self) -> usize {
        self.values.cols()
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        self.values.row(t)
    }

    pub fn frame_shift_s(&self) -> f64 {
        self.frame_shift_s
    }

    pub fn values(&self) -> &Mat {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut Mat {
        &mut self.values
    }

    /// Mean of each coefficient over all frames; empty input gives zeros.
    pub fn column_means(&self) -> Vec<f64> {
        let (t, c) = (self.num_frames(), self.num_ceps());
        let mut means = vec![0.0; c];
        for row in 0..t {
            for (m, &v) in means.iter_mut().zip(self.frame(row)) {
                *m += v;
            }
        }
        if t > 0 {
            for m in &mut means {
                *m /= t as f64;
            }
        }
        means
    }
}

/// Boolean keep-mask over the raw (pre-SAD) frames of one utterance.
#[derive(Debug, Clone, PartialEq)]
pub struct SadMask {
    pub keep: Vec<bool>,
}

impl SadMask {
    pub fn num_kept(&self) -> usize {
        self.keep.iter().filter(|&&k| k).count()
    }
}

/// First-difference pre-emphasis: `y[t] = x[t] - coef * x[t-1]`, with the
/// first sample scaled by `1 - coef` so a constant signal maps to a constant.
pub fn pre_emphasize(w: &Waveform, coef: f64) -> Waveform {
    let mut samples = Vec::with_capacity(w.samples.len());
    let mut prev = 0.0;
    for (i, &x) in w.samples.iter().enumerate() {
        if i == 0 {
            samples.push(x * (1.0 - coef));
        } else {
            samples.push(x - coef * prev);
        }
        prev = x;
    }
    Waveform { samples, sample_rate_hz: w.sample_rate_hz }
}

/// Cut the signal into `1 + floor((len - M) / shift)` frames of length M.
/// Tail samples that do not fill a frame are dropped.
pub fn frame_signal(w: &Waveform, frame_len: usize, frame_shift: usize) -> Result<Vec<Vec<f64>>> {
    if w.samples.len() < frame_len {
        return Err(Error::SignalTooShort { len: w.samples.len(), frame_len });
    }
    let count = 1 + (w.samples.len() - frame_len) / frame_shift;
    Ok((0..count)
        .map(|t| w.samples[t * frame_shift..t * frame_shift + frame_len].to_vec())
        .collect())
}

/// Energy-based speech activity detection.
///
/// A frame is kept when its energy reaches `fraction` times the mean frame
/// energy of the utterance; the single highest-energy frame is always kept,
/// so the mask is never empty.
pub fn sad_mask(frames: &[Vec<f64>], fraction: f64) -> SadMask {
    let energies: Vec<f64> =
        frames.iter().map(|f| f.iter().map(|v| v * v).sum::<f64>()).collect();
    let mean = energies.iter().sum::<f64>() / energies.len().max(1) as f64;
    let threshold = fraction * mean;
    let mut keep: Vec<bool> = energies.iter().map(|&e| e >= threshold).collect();
    if !keep.iter().any(|&k| k) {
        let loudest = energies
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(0);
        keep[loudest] = true;
    }
    SadMask { keep }
}

/// Subtract the per-coefficient utterance mean from every frame.
pub fn cmn(fm: &FeatureMatrix) -> FeatureMatrix {
    let mut out = fm.clone();
    let means = fm.column_means();
    for t in 0..out.num_frames() {
        for (v, m) in out.values_mut().row_mut(t).iter_mut().zip(&means) {
            *v -= m;
        }
    }
    out
}

/// Extract cepstral features from one utterance.
///
/// Uses the parallel per-frame map when the crate is built with the
/// `parallel` feature; see [`extract_sequential`] for the reference path.
pub fn extract(
    w: &Waveform,
    ks: &KernelSet,
    apply_sad: bool,
    apply_cmn: bool,
) -> Result<FeatureMatrix> {
    let frames = prepare_frames(w, ks, apply_sad)?;
    #[cfg(feature = "parallel")]
    let rows: Vec<Vec<f64>> =
        frames.par_iter().map(|f| forward_frame_retained(f, ks).0).collect();
    #[cfg(not(feature = "parallel"))]
    let rows: Vec<Vec<f64>> = frames.iter().map(|f| forward_frame_retained(f, ks).0).collect();
    finish(rows, ks, apply_cmn)
}

/// Single-threaded extraction. Kept public as the reference the parallel
/// path is compared against, and for benchmarking.
pub fn extract_sequential(
    w: &Waveform,
    ks: &KernelSet,
    apply_sad: bool,
    apply_cmn: bool,
) -> Result<FeatureMatrix> {
    let frames = prepare_frames(w, ks, apply_sad)?;
    let rows: Vec<Vec<f64>> = frames.iter().map(|f| forward_frame_retained(f, ks).0).collect();
    finish(rows, ks, apply_cmn)
}

/// Pre-emphasis, framing, and optional SAD; shared by extraction and the
/// trainer's taped forward.
pub(crate) fn prepare_frames(
    w: &Waveform,
    ks: &KernelSet,
    apply_sad: bool,
) -> Result<Vec<Vec<f64>>> {
    ks.validate()?;
    let cfg = &ks.config;
    let emphasized = pre_emphasize(w, cfg.preemph);
    let mut frames = frame_signal(&emphasized, cfg.frame_len, cfg.frame_shift)?;
    if apply_sad {
        let mask = sad_mask(&frames, cfg.sad_fraction);
        let mut it = mask.keep.iter();
        frames.retain(|_| *it.next().unwrap());
    }
    Ok(frames)
}

fn finish(rows: Vec<Vec<f64>>, ks: &KernelSet, apply_cmn: bool) -> Result<FeatureMatrix> {
    let fm = FeatureMatrix::from_rows(rows, ks.config.frame_shift_s())?;
    Ok(if apply_cmn { cmn(&fm) } else { fm })
}
