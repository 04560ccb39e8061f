//! The four learnable MFCC kernels, their static initializations, and their
//! forward transforms.
//!
//! A standard MFCC extractor is a cascade of linear maps with a couple of
//! fixed non-linearities in between: windowing, power spectrum via the DFT,
//! triangular mel filterbank, log compression, DCT. Each linear stage here is
//! an explicit matrix (or vector) so it can be trained; `init_*` fills them
//! with the classical static counterparts. The DFT, being complex-valued, is
//! carried as two real matrices whose squared outputs sum to the power
//! spectrum.

use crate::error::{Error, Result};
use crate::linalg::Mat;
use std::f64::consts::PI;

/// Frame geometry and filterbank settings for one extractor instance.
///
/// `num_bins` is derived (`fft_size/2 + 1`) and the DCT is square
/// (`num_ceps == num_filters`), so both invariants hold by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct MfccConfig {
    pub sample_rate_hz: u32,
    /// Analysis frame length M in samples. Must be even.
    pub frame_len: usize,
    /// Frame shift in samples.
    pub frame_shift: usize,
    /// DFT size N; frames are zero-padded up to it.
    pub fft_size: usize,
    /// Number of mel filters C, equal to the number of output cepstra.
    pub num_filters: usize,
    pub fmin_hz: f64,
    pub fmax_hz: f64,
    /// Pre-emphasis coefficient in [0, 1).
    pub preemph: f64,
    /// Floor applied inside the log to keep silent bins finite.
    pub log_floor: f64,
    /// Energy SAD keeps frames above this fraction of the mean frame energy.
    pub sad_fraction: f64,
}

impl Default for MfccConfig {
    /// 16 kHz audio, 25 ms frames with 10 ms shift, 512-point DFT,
    /// 30 filters / 30 cepstra between 20 Hz and 7600 Hz.
    fn default() -> Self {
        MfccConfig {
            sample_rate_hz: 16_000,
            frame_len: 400,
            frame_shift: 160,
            fft_size: 512,
            num_filters: 30,
            fmin_hz: 20.0,
            fmax_hz: 7600.0,
            preemph: 0.97,
            log_floor: 1e-10,
            sad_fraction: 0.1,
        }
    }
}

impl MfccConfig {
    /// Number of retained spectrum bins B = floor(N/2) + 1.
    pub fn num_bins(&self) -> usize {
        self.fft_size / 2 + 1
    }

    /// Number of output cepstral coefficients (the DCT is square).
    pub fn num_ceps(&self) -> usize {
        self.num_filters
    }

    pub fn frame_shift_s(&self) -> f64 {
        self.frame_shift as f64 / self.sample_rate_hz as f64
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |reason: String| Err(Error::InvalidConfig { reason });
        if self.sample_rate_hz == 0 {
            return fail("sample_rate_hz must be positive".into());
        }
        if self.frame_len < 2 || self.frame_len % 2 != 0 {
            return fail(format!("frame_len {} must be even and >= 2", self.frame_len));
        }
        if self.frame_shift == 0 {
            return fail("frame_shift must be positive".into());
        }
        if self.fft_size < self.frame_len {
            return fail(format!(
                "fft_size {} smaller than frame_len {}",
                self.fft_size, self.frame_len
            ));
        }
        if self.num_filters == 0 {
            return fail("num_filters must be positive".into());
        }
        let nyquist = self.sample_rate_hz as f64 / 2.0;
        if !(0.0 <= self.fmin_hz && self.fmin_hz < self.fmax_hz && self.fmax_hz <= nyquist) {
            return fail(format!(
                "band edges must satisfy 0 <= fmin < fmax <= {nyquist} Hz, got [{}, {}]",
                self.fmin_hz, self.fmax_hz
            ));
        }
        if !(0.0..1.0).contains(&self.preemph) {
            return fail(format!("preemph {} outside [0, 1)", self.preemph));
        }
        if !(self.log_floor > 0.0 && self.log_floor.is_finite()) {
            return fail(format!("log_floor {} must be positive", self.log_floor));
        }
        if !(self.sad_fraction >= 0.0 && self.sad_fraction.is_finite()) {
            return fail(format!("sad_fraction {} must be non-negative", self.sad_fraction));
        }
        Ok(())
    }
}

/// One of the four learnable front-end components.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    Window,
    Dft,
    Melbank,
    Dct,
}

impl Component {
    pub const ALL: [Component; 4] =
        [Component::Window, Component::Dft, Component::Melbank, Component::Dct];

    pub fn name(&self) -> &'static str {
        match self {
            Component::Window => "window",
            Component::Dft => "dft",
            Component::Melbank => "melbank",
            Component::Dct => "dct",
        }
    }
}

impl std::str::FromStr for Component {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "window" => Ok(Component::Window),
            "dft" => Ok(Component::Dft),
            "melbank" => Ok(Component::Melbank),
            "dct" => Ok(Component::Dct),
            other => Err(format!("unknown component '{other}'")),
        }
    }
}

/// The learnable kernels of one extractor plus the fixed configuration.
///
/// This is the unit of serialization and of adaptation: training mutates the
/// tensors of exactly one component and leaves the rest untouched.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelSet {
    /// Window vector, length `frame_len`.
    pub window: Vec<f64>,
    /// Real part of the DFT kernel, `fft_size` x `fft_size`.
    pub dft_real: Mat,
    /// Imaginary part of the DFT kernel, `fft_size` x `fft_size`.
    pub dft_imag: Mat,
    /// Mel filterbank, `num_filters` x `num_bins`.
    pub melbank: Mat,
    /// DCT matrix, `num_ceps` x `num_ceps`.
    pub dct: Mat,
    pub config: MfccConfig,
}

impl KernelSet {
    /// Build a kernel set with every component at its static initialization.
    pub fn initialized(config: MfccConfig) -> Result<Self> {
        config.validate()?;
        let window = init_window(config.frame_len)?;
        let (dft_real, dft_imag) = init_dft(config.fft_size)?;
        let melbank = init_melbank(&config)?;
        let dct = init_dct(config.num_ceps())?;
        Ok(KernelSet { window, dft_real, dft_imag, melbank, dct, config })
    }

    /// Check that every tensor has the shape the config dictates and holds
    /// only finite values.
    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let c = &self.config;
        let expect = |ok: bool, op: &'static str, detail: String| {
            if ok {
                Ok(())
            } else {
                Err(Error::ShapeMismatch { op, detail })
            }
        };
        expect(
            self.window.len() == c.frame_len,
            "kernel_set",
            format!("window length {} != frame_len {}", self.window.len(), c.frame_len),
        )?;
        let n = c.fft_size;
        expect(
            self.dft_real.rows() == n && self.dft_real.cols() == n,
            "kernel_set",
            format!("dft_real {}x{} != {n}x{n}", self.dft_real.rows(), self.dft_real.cols()),
        )?;
        expect(
            self.dft_imag.rows() == n && self.dft_imag.cols() == n,
            "kernel_set",
            format!("dft_imag {}x{} != {n}x{n}", self.dft_imag.rows(), self.dft_imag.cols()),
        )?;
        expect(
            self.melbank.rows() == c.num_filters && self.melbank.cols() == c.num_bins(),
            "kernel_set",
            format!(
                "melbank {}x{} != {}x{}",
                self.melbank.rows(),
                self.melbank.cols(),
                c.num_filters,
                c.num_bins()
            ),
        )?;
        expect(
            self.dct.rows() == c.num_ceps() && self.dct.cols() == c.num_ceps(),
            "kernel_set",
            format!("dct {}x{} != square {}", self.dct.rows(), self.dct.cols(), c.num_ceps()),
        )?;
        let all_finite = self.window.iter().all(|v| v.is_finite())
            && self.dft_real.is_finite()
            && self.dft_imag.is_finite()
            && self.melbank.is_finite()
            && self.dct.is_finite();
        expect(all_finite, "kernel_set", "non-finite kernel entry".into())
    }
}

/// Symmetric Hamming window `w[n] = 0.54 - 0.46 cos(2 pi n / (M-1))`.
pub fn init_window(frame_len: usize) -> Result<Vec<f64>> {
    if frame_len < 2 || frame_len % 2 != 0 {
        return Err(Error::InvalidArg {
            op: "init_window",
            reason: format!("frame_len {frame_len} must be even and >= 2"),
        });
    }
    let denom = (frame_len - 1) as f64;
    Ok((0..frame_len).map(|n| 0.54 - 0.46 * (2.0 * PI * n as f64 / denom).cos()).collect())
}

/// Real and imaginary DFT matrices: `F_real[j][k] = cos(2 pi j k / N)`,
/// `F_imag[j][k] = -sin(2 pi j k / N)`. Both are symmetric.
pub fn init_dft(fft_size: usize) -> Result<(Mat, Mat)> {
    if fft_size < 2 {
        return Err(Error::InvalidArg {
            op: "init_dft",
            reason: format!("fft_size {fft_size} must be >= 2"),
        });
    }
    let n = fft_size as f64;
    let f_real = Mat::from_fn(fft_size, fft_size, |j, k| {
        (2.0 * PI * (j as f64) * (k as f64) / n).cos()
    });
    let f_imag = Mat::from_fn(fft_size, fft_size, |j, k| {
        -(2.0 * PI * (j as f64) * (k as f64) / n).sin()
    });
    Ok((f_real, f_imag))
}

/// `m = 2595 log10(1 + f/700)`.
pub fn hz_to_mel(f: f64) -> Result<f64> {
    if f < 0.0 {
        return Err(Error::NegativeFrequency { value: f });
    }
    Ok(2595.0 * (1.0 + f / 700.0).log10())
}

/// Inverse of [`hz_to_mel`].
pub fn mel_to_hz(m: f64) -> Result<f64> {
    if m < 0.0 {
        return Err(Error::NegativeFrequency { value: m });
    }
    Ok(700.0 * (10.0_f64.powf(m / 2595.0) - 1.0))
}

/// Triangular mel filterbank with unit-peak filters.
///
/// Centers sit at `num_filters + 2` mel-equispaced points between `fmin_hz`
/// and `fmax_hz`; each row is the triangle evaluated at the bin frequencies
/// `k * sample_rate / fft_size`, so entries lie in `[0, 1]` and are zero
/// outside the filter's support.
pub fn init_melbank(cfg: &MfccConfig) -> Result<Mat> {
    cfg.validate()?;
    let c = cfg.num_filters;
    let b = cfg.num_bins();
    let mel_lo = hz_to_mel(cfg.fmin_hz)?;
    let mel_hi = hz_to_mel(cfg.fmax_hz)?;
    let edges: Vec<f64> = (0..c + 2)
        .map(|i| mel_to_hz(mel_lo + (mel_hi - mel_lo) * i as f64 / (c + 1) as f64))
        .collect::<Result<_>>()?;
    let collapsed =
        || Error::MelEdges { num_filters: c, fmin_hz: cfg.fmin_hz, fmax_hz: cfg.fmax_hz };
    if edges.windows(2).any(|w| w[1] <= w[0]) {
        return Err(collapsed());
    }
    let bin_hz = cfg.sample_rate_hz as f64 / cfg.fft_size as f64;
    let mut bank = Mat::zeros(c, b);
    for i in 0..c {
        let (left, center, right) = (edges[i], edges[i + 1], edges[i + 2]);
        let mut support = false;
        for k in 0..b {
            let f = k as f64 * bin_hz;
            let v = if f > left && f <= center {
                (f - left) / (center - left)
            } else if f > center && f < right {
                (right - f) / (right - center)
            } else {
                0.0
            };
            support |= v > 0.0;
            bank.set(i, k, v);
        }
        // A triangle narrower than the bin spacing captures no energy at all;
        // that many filters do not fit in this band at this FFT resolution.
        if !support {
            return Err(collapsed());
        }
    }
    Ok(bank)
}

/// Orthonormal DCT-II matrix: `D[0][k] = sqrt(1/C)`,
/// `D[i][k] = sqrt(2/C) cos(pi i (k + 0.5) / C)` for `i >= 1`.
pub fn init_dct(num_ceps: usize) -> Result<Mat> {
    if num_ceps < 1 {
        return Err(Error::InvalidArg { op: "init_dct", reason: "size must be >= 1".into() });
    }
    let c = num_ceps as f64;
    let scale0 = (1.0 / c).sqrt();
    let scale = (2.0 / c).sqrt();
    Ok(Mat::from_fn(num_ceps, num_ceps, |i, k| {
        if i == 0 {
            scale0
        } else {
            scale * (PI * i as f64 * (k as f64 + 0.5) / c).cos()
        }
    }))
}

/// Elementwise product `y = W .* x`.
pub fn forward_window(x: &[f64], window: &[f64]) -> Result<Vec<f64>> {
    if x.len() != window.len() {
        return Err(Error::ShapeMismatch {
            op: "forward_window",
            detail: format!("frame length {} != window length {}", x.len(), window.len()),
        });
    }
    Ok(x.iter().zip(window).map(|(a, w)| a * w).collect())
}

/// Power spectrum `p = (F_real x)^2 + (F_imag x)^2`, elementwise.
///
/// Non-negative for any real kernels, learnt or not.
pub fn forward_power_spectrum(xw: &[f64], f_real: &Mat, f_imag: &Mat) -> Result<Vec<f64>> {
    let n = xw.len();
    if f_real.rows() != n || f_real.cols() != n || f_imag.rows() != n || f_imag.cols() != n {
        return Err(Error::ShapeMismatch {
            op: "forward_power_spectrum",
            detail: format!(
                "input length {n} vs kernels {}x{} and {}x{}",
                f_real.rows(),
                f_real.cols(),
                f_imag.rows(),
                f_imag.cols()
            ),
        });
    }
    let u_r = f_real.matvec(xw);
    let u_i = f_imag.matvec(xw);
    Ok(u_r.iter().zip(&u_i).map(|(r, i)| r * r + i * i).collect())
}

/// Log mel energies `z = ln(max(Mel p, log_floor))` (natural log).
pub fn forward_logmel(p_binned: &[f64], melbank: &Mat, log_floor: f64) -> Result<Vec<f64>> {
    if p_binned.len() != melbank.cols() {
        return Err(Error::ShapeMismatch {
            op: "forward_logmel",
            detail: format!("{} bins vs melbank with {} columns", p_binned.len(), melbank.cols()),
        });
    }
    Ok(melbank.matvec(p_binned).iter().map(|&e| e.max(log_floor).ln()).collect())
}

/// Cepstra `c = Dct z`.
pub fn forward_dct(z: &[f64], dct: &Mat) -> Result<Vec<f64>> {
    if z.len() != dct.cols() {
        return Err(Error::ShapeMismatch {
            op: "forward_dct",
            detail: format!("{} log-mel values vs DCT with {} columns", z.len(), dct.cols()),
        });
    }
    Ok(dct.matvec(z))
}
