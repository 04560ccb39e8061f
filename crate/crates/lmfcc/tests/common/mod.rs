//! Independent reference implementations used as test oracles.
//!
//! Everything here is written from the textbook definitions and shares no
//! code with the library: the spectrum comes from a recursive radix-2 FFT
//! instead of matrix products, the DCT is evaluated as direct cosine sums,
//! and the metric oracles recount errors at every threshold.

#![allow(dead_code)]

use lmfcc::MfccConfig;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

/// Recursive radix-2 decimation-in-time FFT. `n` must be a power of two.
pub fn fft(re: &[f64], im: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = re.len();
    assert!(n.is_power_of_two(), "fft oracle needs a power-of-two size");
    if n == 1 {
        return (re.to_vec(), im.to_vec());
    }
    let even_re: Vec<f64> = re.iter().step_by(2).copied().collect();
    let even_im: Vec<f64> = im.iter().step_by(2).copied().collect();
    let odd_re: Vec<f64> = re.iter().skip(1).step_by(2).copied().collect();
    let odd_im: Vec<f64> = im.iter().skip(1).step_by(2).copied().collect();
    let (er, ei) = fft(&even_re, &even_im);
    let (or, oi) = fft(&odd_re, &odd_im);
    let mut out_re = vec![0.0; n];
    let mut out_im = vec![0.0; n];
    for k in 0..n / 2 {
        let angle = -2.0 * PI * k as f64 / n as f64;
        let (c, s) = (angle.cos(), angle.sin());
        let tr = c * or[k] - s * oi[k];
        let ti = c * oi[k] + s * or[k];
        out_re[k] = er[k] + tr;
        out_im[k] = ei[k] + ti;
        out_re[k + n / 2] = er[k] - tr;
        out_im[k + n / 2] = ei[k] - ti;
    }
    (out_re, out_im)
}

/// `|FFT(x zero-padded to n)|^2`, all n bins.
pub fn fft_power(x: &[f64], n: usize) -> Vec<f64> {
    let mut re = vec![0.0; n];
    re[..x.len()].copy_from_slice(x);
    let im = vec![0.0; n];
    let (fr, fi) = fft(&re, &im);
    fr.iter().zip(&fi).map(|(r, i)| r * r + i * i).collect()
}

fn hamming(m: usize) -> Vec<f64> {
    (0..m).map(|i| 0.54 - 0.46 * (2.0 * PI * i as f64 / (m - 1) as f64).cos()).collect()
}

fn mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

fn inv_mel(m: f64) -> f64 {
    700.0 * (10.0f64.powf(m / 2595.0) - 1.0)
}

fn triangle_bank(cfg: &MfccConfig) -> Vec<Vec<f64>> {
    let c = cfg.num_filters;
    let b = cfg.fft_size / 2 + 1;
    let lo = mel(cfg.fmin_hz);
    let hi = mel(cfg.fmax_hz);
    let edges: Vec<f64> =
        (0..c + 2).map(|i| inv_mel(lo + (hi - lo) * i as f64 / (c + 1) as f64)).collect();
    (0..c)
        .map(|i| {
            (0..b)
                .map(|k| {
                    let f = k as f64 * cfg.sample_rate_hz as f64 / cfg.fft_size as f64;
                    if f > edges[i] && f <= edges[i + 1] {
                        (f - edges[i]) / (edges[i + 1] - edges[i])
                    } else if f > edges[i + 1] && f < edges[i + 2] {
                        (edges[i + 2] - f) / (edges[i + 2] - edges[i + 1])
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

/// Orthonormal DCT-II by direct summation.
fn dct_ii(z: &[f64]) -> Vec<f64> {
    let c = z.len();
    (0..c)
        .map(|i| {
            let scale = if i == 0 { (1.0 / c as f64).sqrt() } else { (2.0 / c as f64).sqrt() };
            scale
                * z.iter()
                    .enumerate()
                    .map(|(k, &v)| v * (PI * i as f64 * (k as f64 + 0.5) / c as f64).cos())
                    .sum::<f64>()
        })
        .collect()
}

/// Textbook static MFCC extraction for a whole utterance.
pub fn static_mfcc(
    samples: &[f64],
    cfg: &MfccConfig,
    apply_sad: bool,
    apply_cmn: bool,
) -> Vec<Vec<f64>> {
    // Pre-emphasis.
    let mut emphasized = Vec::with_capacity(samples.len());
    for (i, &x) in samples.iter().enumerate() {
        if i == 0 {
            emphasized.push(x * (1.0 - cfg.preemph));
        } else {
            emphasized.push(x - cfg.preemph * samples[i - 1]);
        }
    }
    // Framing.
    assert!(emphasized.len() >= cfg.frame_len);
    let count = 1 + (emphasized.len() - cfg.frame_len) / cfg.frame_shift;
    let mut frames: Vec<&[f64]> = (0..count)
        .map(|t| &emphasized[t * cfg.frame_shift..t * cfg.frame_shift + cfg.frame_len])
        .collect();
    // Energy SAD.
    if apply_sad {
        let energies: Vec<f64> =
            frames.iter().map(|f| f.iter().map(|v| v * v).sum::<f64>()).collect();
        let mean = energies.iter().sum::<f64>() / energies.len() as f64;
        let threshold = cfg.sad_fraction * mean;
        let mut kept: Vec<&[f64]> = Vec::new();
        for (f, &e) in frames.iter().zip(&energies) {
            if e >= threshold {
                kept.push(f);
            }
        }
        if kept.is_empty() {
            let loudest =
                energies.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
            kept.push(frames[loudest]);
        }
        frames = kept;
    }

    let window = hamming(cfg.frame_len);
    let bank = triangle_bank(cfg);
    let b = cfg.fft_size / 2 + 1;
    let mut rows: Vec<Vec<f64>> = frames
        .iter()
        .map(|frame| {
            let xw: Vec<f64> = frame.iter().zip(&window).map(|(x, w)| x * w).collect();
            let power = fft_power(&xw, cfg.fft_size);
            let z: Vec<f64> = bank
                .iter()
                .map(|filt| {
                    let e: f64 = filt.iter().zip(&power[..b]).map(|(w, p)| w * p).sum();
                    e.max(cfg.log_floor).ln()
                })
                .collect();
            dct_ii(&z)
        })
        .collect();

    if apply_cmn && !rows.is_empty() {
        let c = rows[0].len();
        let t = rows.len() as f64;
        let mut means = vec![0.0; c];
        for r in &rows {
            for (m, &v) in means.iter_mut().zip(r) {
                *m += v;
            }
        }
        for m in &mut means {
            *m /= t;
        }
        for r in &mut rows {
            for (v, m) in r.iter_mut().zip(&means) {
                *v -= m;
            }
        }
    }
    rows
}

/// Relative error with the `max(1, |a|, |b|)` normalization used throughout.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / 1.0f64.max(a.abs()).max(b.abs())
}

pub fn random_waveform(len: usize, sample_rate_hz: u32, seed: u64) -> lmfcc::Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    lmfcc::Waveform::new((0..len).map(|_| rng.gen_range(-0.95..0.95)).collect(), sample_rate_hz)
        .unwrap()
}

// ---------------------------------------------------------------------------
// Brute-force metric oracles: recount misses and false alarms at every
// threshold with direct O(n) scans.
// ---------------------------------------------------------------------------

fn thresholds(genuine: &[f64], impostor: &[f64]) -> Vec<f64> {
    let mut t: Vec<f64> = genuine.iter().chain(impostor).copied().collect();
    t.sort_by(f64::total_cmp);
    t.dedup();
    t
}

fn rates_at(genuine: &[f64], impostor: &[f64], threshold: f64) -> (f64, f64) {
    let miss = genuine.iter().filter(|&&s| s < threshold).count() as f64 / genuine.len() as f64;
    let fa = impostor.iter().filter(|&&s| s >= threshold).count() as f64 / impostor.len() as f64;
    (miss, fa)
}

/// Exhaustive sweep including the reject-all endpoint.
fn brute_sweep(genuine: &[f64], impostor: &[f64]) -> Vec<(f64, f64)> {
    let mut points: Vec<(f64, f64)> =
        thresholds(genuine, impostor).iter().map(|&t| rates_at(genuine, impostor, t)).collect();
    points.push((1.0, 0.0));
    points
}

pub fn brute_eer(genuine: &[f64], impostor: &[f64]) -> f64 {
    let points = brute_sweep(genuine, impostor);
    let mut prev = points[0];
    for &(pm, pf) in &points[1..] {
        let d_prev = prev.0 - prev.1;
        let d_cur = pm - pf;
        if d_prev == 0.0 {
            return prev.0;
        }
        if d_prev < 0.0 && d_cur >= 0.0 {
            if d_cur == 0.0 {
                return pm;
            }
            let alpha = -d_prev / (d_cur - d_prev);
            return prev.0 + alpha * (pm - prev.0);
        }
        prev = (pm, pf);
    }
    1.0
}

pub fn brute_min_dcf(
    genuine: &[f64],
    impostor: &[f64],
    p_target: f64,
    c_miss: f64,
    c_fa: f64,
) -> f64 {
    let best = brute_sweep(genuine, impostor)
        .iter()
        .map(|&(pm, pf)| c_miss * p_target * pm + c_fa * (1.0 - p_target) * pf)
        .fold(f64::INFINITY, f64::min);
    best / (c_miss * p_target).min(c_fa * (1.0 - p_target))
}

pub fn brute_det(genuine: &[f64], impostor: &[f64]) -> Vec<(f64, f64)> {
    let mut pts: Vec<(f64, f64)> =
        brute_sweep(genuine, impostor).iter().map(|&(pm, pf)| (pf, pm)).collect();
    pts.reverse();
    pts
}
