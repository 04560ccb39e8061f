//! Hand-written reverse-mode gradients for the forward stages.
//!
//! Each stage is linear (or linear followed by a pointwise map), so its
//! backward pass is a transpose product plus an outer product for the kernel
//! gradient. The forward pass records a [`TapeRecord`] per frame; backward
//! functions consume the tape and emit both the kernel gradient and the
//! gradient with respect to the stage input, so a loss can be chained all the
//! way down to the window.
//!
//! [`fd_check`] validates every analytic gradient against central finite
//! differences on a small randomized instance.

use crate::error::Result;
use crate::kernels::{Component, KernelSet, MfccConfig};
use crate::linalg::Mat;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Per-kernel gradient accumulators, shaped like a [`KernelSet`].
#[derive(Debug, Clone)]
pub struct GradientSet {
    pub d_window: Vec<f64>,
    pub d_dft_real: Mat,
    pub d_dft_imag: Mat,
    pub d_melbank: Mat,
    pub d_dct: Mat,
}

impl GradientSet {
    pub fn zeros_like(ks: &KernelSet) -> Self {
        GradientSet {
            d_window: vec![0.0; ks.window.len()],
            d_dft_real: Mat::zeros(ks.dft_real.rows(), ks.dft_real.cols()),
            d_dft_imag: Mat::zeros(ks.dft_imag.rows(), ks.dft_imag.cols()),
            d_melbank: Mat::zeros(ks.melbank.rows(), ks.melbank.cols()),
            d_dct: Mat::zeros(ks.dct.rows(), ks.dct.cols()),
        }
    }

    pub fn zero(&mut self) {
        self.d_window.iter_mut().for_each(|v| *v = 0.0);
        self.d_dft_real.data_mut().iter_mut().for_each(|v| *v = 0.0);
        self.d_dft_imag.data_mut().iter_mut().for_each(|v| *v = 0.0);
        self.d_melbank.data_mut().iter_mut().for_each(|v| *v = 0.0);
        self.d_dct.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }

    /// `self += a * other`.
    pub fn add_scaled(&mut self, other: &GradientSet, a: f64) {
        for (s, &o) in self.d_window.iter_mut().zip(&other.d_window) {
            *s += a * o;
        }
        self.d_dft_real.add_scaled(&other.d_dft_real, a);
        self.d_dft_imag.add_scaled(&other.d_dft_imag, a);
        self.d_melbank.add_scaled(&other.d_melbank, a);
        self.d_dct.add_scaled(&other.d_dct, a);
    }

    pub fn scale(&mut self, a: f64) {
        self.d_window.iter_mut().for_each(|v| *v *= a);
        self.d_dft_real.scale(a);
        self.d_dft_imag.scale(a);
        self.d_melbank.scale(a);
        self.d_dct.scale(a);
    }
}

/// Cached intermediates of one frame's forward pass.
#[derive(Debug, Clone)]
pub struct TapeRecord {
    /// Raw frame, length M.
    pub frame: Vec<f64>,
    /// Windowed frame zero-padded to N.
    pub windowed: Vec<f64>,
    /// `F_real * xw`, length N.
    pub dft_real_out: Vec<f64>,
    /// `F_imag * xw`, length N.
    pub dft_imag_out: Vec<f64>,
    /// First B entries of the power spectrum.
    pub power_binned: Vec<f64>,
    /// `Mel * p`, pre-log, length C.
    pub mel_out: Vec<f64>,
    /// Log-mel output, length C.
    pub logmel: Vec<f64>,
}

/// Forward pass of one frame through all four kernel stages, recording the
/// tape needed to run the backward passes. Shapes are the caller's
/// responsibility (validate the [`KernelSet`] once, then stream frames).
pub fn forward_frame_taped(frame: &[f64], ks: &KernelSet) -> (Vec<f64>, TapeRecord) {
    forward_frame_impl(frame, ks, ks.config.fft_size)
}

/// Forward pass that evaluates only the first B rows of the DFT kernels.
///
/// Bins beyond B never reach the filterbank, so for extraction and training
/// this skips half the work. The resulting tape carries B-length DFT outputs
/// and feeds [`backward_frame_for`], not [`backward_power`].
pub(crate) fn forward_frame_retained(frame: &[f64], ks: &KernelSet) -> (Vec<f64>, TapeRecord) {
    forward_frame_impl(frame, ks, ks.config.num_bins())
}

fn forward_frame_impl(frame: &[f64], ks: &KernelSet, rows: usize) -> (Vec<f64>, TapeRecord) {
    let cfg = &ks.config;
    debug_assert_eq!(frame.len(), cfg.frame_len);
    let n = cfg.fft_size;
    let b = cfg.num_bins();

    let mut windowed = vec![0.0; n];
    for ((out, x), w) in windowed.iter_mut().zip(frame).zip(&ks.window) {
        *out = x * w;
    }
    let dft_real_out = ks.dft_real.matvec_prefix(&windowed, rows);
    let dft_imag_out = ks.dft_imag.matvec_prefix(&windowed, rows);
    let power_binned: Vec<f64> = (0..b)
        .map(|k| dft_real_out[k] * dft_real_out[k] + dft_imag_out[k] * dft_imag_out[k])
        .collect();
    let mel_out = ks.melbank.matvec(&power_binned);
    let logmel: Vec<f64> = mel_out.iter().map(|&e| e.max(cfg.log_floor).ln()).collect();
    let ceps = ks.dct.matvec(&logmel);

    let tape = TapeRecord {
        frame: frame.to_vec(),
        windowed,
        dft_real_out,
        dft_imag_out,
        power_binned,
        mel_out,
        logmel,
    };
    (ceps, tape)
}

/// Backward through `c = Dct z`: kernel gradient is the outer product
/// `g_c z^T`, input gradient is `Dct^T g_c`.
pub fn backward_dct(g_c: &[f64], tape: &TapeRecord, dct: &Mat) -> (Mat, Vec<f64>) {
    debug_assert_eq!(g_c.len(), dct.rows());
    let mut d_dct = Mat::zeros(dct.rows(), dct.cols());
    d_dct.add_outer(g_c, &tape.logmel, 1.0);
    let g_z = dct.matvec_t(g_c);
    (d_dct, g_z)
}

/// Backward through `z = ln(max(Mel p, floor))`.
///
/// Entries clamped at the floor get zero gradient (subgradient choice at the
/// kink); elsewhere the log contributes `1 / mel_out`.
pub fn backward_logmel(
    g_z: &[f64],
    tape: &TapeRecord,
    melbank: &Mat,
    log_floor: f64,
) -> (Mat, Vec<f64>) {
    debug_assert_eq!(g_z.len(), melbank.rows());
    let s = logmel_scaled_grad(g_z, tape, log_floor);
    let mut d_mel = Mat::zeros(melbank.rows(), melbank.cols());
    d_mel.add_outer(&s, &tape.power_binned, 1.0);
    let g_p = melbank.matvec_t(&s);
    (d_mel, g_p)
}

fn logmel_scaled_grad(g_z: &[f64], tape: &TapeRecord, log_floor: f64) -> Vec<f64> {
    g_z.iter()
        .zip(&tape.mel_out)
        .map(|(&g, &e)| if e > log_floor { g / e } else { 0.0 })
        .collect()
}

/// Backward through `p = (F_real xw)^2 + (F_imag xw)^2`.
///
/// `g_p_full` must be the downstream B-bin gradient zero-extended to length
/// N. Kernel gradients are `2 (g .* u) xw^T`; the input gradient sums the
/// transposed products of both kernels.
pub fn backward_power(
    g_p_full: &[f64],
    tape: &TapeRecord,
    f_real: &Mat,
    f_imag: &Mat,
) -> (Mat, Mat, Vec<f64>) {
    let n = tape.windowed.len();
    debug_assert_eq!(g_p_full.len(), n);
    debug_assert_eq!(tape.dft_real_out.len(), n, "backward_power needs a full-length tape");
    let gr: Vec<f64> =
        g_p_full.iter().zip(&tape.dft_real_out).map(|(&g, &u)| 2.0 * g * u).collect();
    let gi: Vec<f64> =
        g_p_full.iter().zip(&tape.dft_imag_out).map(|(&g, &u)| 2.0 * g * u).collect();

    let mut d_real = Mat::zeros(n, n);
    d_real.add_outer(&gr, &tape.windowed, 1.0);
    let mut d_imag = Mat::zeros(n, n);
    d_imag.add_outer(&gi, &tape.windowed, 1.0);

    let mut g_xw = f_real.matvec_t(&gr);
    for (o, v) in g_xw.iter_mut().zip(f_imag.matvec_t(&gi)) {
        *o += v;
    }
    (d_real, d_imag, g_xw)
}

/// Backward through the windowing and zero-padding: only the first M padded
/// positions carry gradient; `dW = x .* g_xw[0..M]`, `g_x = W .* g_xw[0..M]`.
pub fn backward_window(g_xw: &[f64], tape: &TapeRecord, window: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let m = tape.frame.len();
    debug_assert!(g_xw.len() >= m);
    let d_w = tape.frame.iter().zip(&g_xw[..m]).map(|(x, g)| x * g).collect();
    let g_x = window.iter().zip(&g_xw[..m]).map(|(w, g)| w * g).collect();
    (d_w, g_x)
}

/// Accumulate the gradient of one component's kernel(s) for a single frame,
/// given the gradient `g_c` of the loss with respect to that frame's cepstra.
///
/// Runs only as much of the backward chain as the component needs, which is
/// what keeps adaptation of the shallow kernels cheap. The full-output ops
/// above remain the reference; `backward_frame_for` must match them exactly
/// (see the unit test).
pub fn backward_frame_for(
    component: Component,
    g_c: &[f64],
    tape: &TapeRecord,
    ks: &KernelSet,
    grads: &mut GradientSet,
) {
    match component {
        Component::Dct => {
            grads.d_dct.add_outer(g_c, &tape.logmel, 1.0);
        }
        Component::Melbank => {
            let g_z = ks.dct.matvec_t(g_c);
            let s = logmel_scaled_grad(&g_z, tape, ks.config.log_floor);
            grads.d_melbank.add_outer(&s, &tape.power_binned, 1.0);
        }
        Component::Dft => {
            let g_p = backward_to_power(g_c, tape, ks);
            let b = g_p.len();
            let gr: Vec<f64> =
                g_p.iter().zip(&tape.dft_real_out[..b]).map(|(&g, &u)| 2.0 * g * u).collect();
            let gi: Vec<f64> =
                g_p.iter().zip(&tape.dft_imag_out[..b]).map(|(&g, &u)| 2.0 * g * u).collect();
            // Only the first B rows receive gradient; the zero-extension would
            // contribute nothing to the remaining rows.
            for (k, &s) in gr.iter().enumerate() {
                if s != 0.0 {
                    for (o, &x) in grads.d_dft_real.row_mut(k).iter_mut().zip(&tape.windowed) {
                        *o += s * x;
                    }
                }
            }
            for (k, &s) in gi.iter().enumerate() {
                if s != 0.0 {
                    for (o, &x) in grads.d_dft_imag.row_mut(k).iter_mut().zip(&tape.windowed) {
                        *o += s * x;
                    }
                }
            }
        }
        Component::Window => {
            let g_p = backward_to_power(g_c, tape, ks);
            let b = g_p.len();
            let gr: Vec<f64> =
                g_p.iter().zip(&tape.dft_real_out[..b]).map(|(&g, &u)| 2.0 * g * u).collect();
            let gi: Vec<f64> =
                g_p.iter().zip(&tape.dft_imag_out[..b]).map(|(&g, &u)| 2.0 * g * u).collect();
            let m = tape.frame.len();
            // g_xw restricted to the first M positions; rows beyond B carry
            // zero upstream gradient.
            let mut g_xw = vec![0.0; m];
            for (k, &s) in gr.iter().enumerate() {
                if s != 0.0 {
                    for (o, &f) in g_xw.iter_mut().zip(&ks.dft_real.row(k)[..m]) {
                        *o += s * f;
                    }
                }
            }
            for (k, &s) in gi.iter().enumerate() {
                if s != 0.0 {
                    for (o, &f) in g_xw.iter_mut().zip(&ks.dft_imag.row(k)[..m]) {
                        *o += s * f;
                    }
                }
            }
            for ((d, &x), &g) in grads.d_window.iter_mut().zip(&tape.frame).zip(&g_xw) {
                *d += x * g;
            }
        }
    }
}

/// Chain from cepstra gradient down to the B-bin power-spectrum gradient.
fn backward_to_power(g_c: &[f64], tape: &TapeRecord, ks: &KernelSet) -> Vec<f64> {
    let g_z = ks.dct.matvec_t(g_c);
    let s = logmel_scaled_grad(&g_z, tape, ks.config.log_floor);
    ks.melbank.matvec_t(&s)
}

/// Analytic-vs-numeric gradient comparison for one component.
///
/// Builds a seeded random instance (frame length 8, DFT size 16, 4 filters),
/// takes the sum of all output cepstra over a few frames as the scalar loss,
/// and compares the analytic kernel gradient against central finite
/// differences entry by entry. Returns the maximum relative error
/// `|a - f| / max(1, |a|, |f|)`.
pub fn fd_check(component: Component, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_f00d);
    let cfg = MfccConfig {
        sample_rate_hz: 100,
        frame_len: 8,
        frame_shift: 4,
        fft_size: 16,
        num_filters: 4,
        fmin_hz: 1.0,
        fmax_hz: 48.0,
        preemph: 0.0,
        log_floor: 1e-10,
        sad_fraction: 0.0,
    };
    let n = cfg.fft_size;
    let b = cfg.num_bins();
    let c = cfg.num_filters;
    let scale = 1.0 / (n as f64).sqrt();

    // Random kernels keep the check away from the symmetric structure of the
    // static initialization; positive melbank entries keep the log active.
    let ks = KernelSet {
        window: (0..cfg.frame_len).map(|_| rng.gen_range(0.5..1.5)).collect(),
        dft_real: Mat::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0) * scale),
        dft_imag: Mat::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0) * scale),
        melbank: Mat::from_fn(c, b, |_, _| rng.gen_range(0.1..1.0)),
        dct: Mat::from_fn(c, c, |_, _| rng.gen_range(-1.0..1.0)),
        config: cfg,
    };
    let frames: Vec<Vec<f64>> =
        (0..3).map(|_| (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();

    let loss = |ks: &KernelSet| -> f64 {
        frames.iter().map(|f| forward_frame_taped(f, ks).0.iter().sum::<f64>()).sum()
    };

    // Analytic gradient via the public backward chain, summed over frames.
    let mut grads = GradientSet::zeros_like(&ks);
    for frame in &frames {
        let (ceps, tape) = forward_frame_taped(frame, &ks);
        let g_c = vec![1.0; ceps.len()];
        let (d_dct, g_z) = backward_dct(&g_c, &tape, &ks.dct);
        let (d_mel, g_p) = backward_logmel(&g_z, &tape, &ks.melbank, ks.config.log_floor);
        let mut g_p_full = vec![0.0; n];
        g_p_full[..b].copy_from_slice(&g_p);
        let (d_real, d_imag, g_xw) = backward_power(&g_p_full, &tape, &ks.dft_real, &ks.dft_imag);
        let (d_w, _g_x) = backward_window(&g_xw, &tape, &ks.window);
        grads.d_dct.add_scaled(&d_dct, 1.0);
        grads.d_melbank.add_scaled(&d_mel, 1.0);
        grads.d_dft_real.add_scaled(&d_real, 1.0);
        grads.d_dft_imag.add_scaled(&d_imag, 1.0);
        for (a, v) in grads.d_window.iter_mut().zip(&d_w) {
            *a += v;
        }
    }

    let rel_err = |analytic: f64, numeric: f64| {
        (analytic - numeric).abs() / 1.0_f64.max(analytic.abs()).max(numeric.abs())
    };
    let mut max_err: f64 = 0.0;
    let mut probe = |read: &dyn Fn(&KernelSet) -> f64,
                     write: &dyn Fn(&mut KernelSet, f64),
                     analytic: f64| {
        let mut pert = ks.clone();
        let theta = read(&ks);
        let h = 1e-5 * (1.0 + theta.abs());
        write(&mut pert, theta + h);
        let plus = loss(&pert);
        write(&mut pert, theta - h);
        let minus = loss(&pert);
        let numeric = (plus - minus) / (2.0 * h);
        max_err = max_err.max(rel_err(analytic, numeric));
    };

    match component {
        Component::Window => {
            for i in 0..ks.window.len() {
                probe(&|k| k.window[i], &|k, v| k.window[i] = v, grads.d_window[i]);
            }
        }
        Component::Dft => {
            for i in 0..n {
                for j in 0..n {
                    probe(
                        &|k| k.dft_real.get(i, j),
                        &|k, v| k.dft_real.set(i, j, v),
                        grads.d_dft_real.get(i, j),
                    );
                    probe(
                        &|k| k.dft_imag.get(i, j),
                        &|k, v| k.dft_imag.set(i, j, v),
                        grads.d_dft_imag.get(i, j),
                    );
                }
            }
        }
        Component::Melbank => {
            for i in 0..c {
                for j in 0..b {
                    probe(
                        &|k| k.melbank.get(i, j),
                        &|k, v| k.melbank.set(i, j, v),
                        grads.d_melbank.get(i, j),
                    );
                }
            }
        }
        Component::Dct => {
            for i in 0..c {
                for j in 0..c {
                    probe(
                        &|k| k.dct.get(i, j),
                        &|k, v| k.dct.set(i, j, v),
                        grads.d_dct.get(i, j),
                    );
                }
            }
        }
    }
    max_err
}

/// Run [`fd_check`] for every component over several seeds; returns
/// `(component, max error over seeds)` pairs.
pub fn fd_check_all(seeds: u64) -> Result<Vec<(Component, f64)>> {
    Ok(Component::ALL
        .iter()
        .map(|&c| (c, (0..seeds).map(|s| fd_check(c, s)).fold(0.0, f64::max)))
        .collect())
}
