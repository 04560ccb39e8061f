//! Deterministic synthetic speaker data for desk-scale experiments.
//!
//! Each speaker is a triple of resonance frequencies drawn uniformly from
//! [300, 3400] Hz; an utterance is one second of the three sinusoids with
//! fresh random phases plus white Gaussian noise 20 dB below the sinusoid
//! power. Speaker identity is carried entirely by the frequency triple.

use crate::audio_io::Waveform;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::f64::consts::PI;

/// Amplitude of each of the three sinusoids; their sum stays inside [-1, 1].
const TONE_AMP: f64 = 0.3;
/// Noise-to-signal power ratio, -20 dB.
const NOISE_POWER_RATIO: f64 = 0.01;

/// One labeled training utterance.
#[derive(Debug, Clone)]
pub struct Utterance {
    pub waveform: Waveform,
    pub speaker: usize,
}

/// A generated corpus of `num_speakers * utts_per_speaker` utterances,
/// grouped by speaker.
#[derive(Debug, Clone)]
pub struct SynthDataset {
    pub speaker_freqs: Vec<[f64; 3]>,
    pub utterances: Vec<Utterance>,
    pub utts_per_speaker: usize,
}

impl SynthDataset {
    /// Generate the corpus. Fully determined by `seed`.
    pub fn generate(
        num_speakers: usize,
        utts_per_speaker: usize,
        sample_rate_hz: u32,
        seed: u64,
    ) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0da7_a5e7);
        let speaker_freqs: Vec<[f64; 3]> = (0..num_speakers)
            .map(|_| {
                [
                    rng.gen_range(300.0..3400.0),
                    rng.gen_range(300.0..3400.0),
                    rng.gen_range(300.0..3400.0),
                ]
            })
            .collect();

        let len = sample_rate_hz as usize;
        let sine_power = 3.0 * TONE_AMP * TONE_AMP / 2.0;
        let noise_std = (sine_power * NOISE_POWER_RATIO).sqrt();

        let mut utterances = Vec::with_capacity(num_speakers * utts_per_speaker);
        for (speaker, freqs) in speaker_freqs.iter().enumerate() {
            for _ in 0..utts_per_speaker {
                let phases: [f64; 3] =
                    [rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.0..2.0 * PI), rng.gen_range(0.0..2.0 * PI)];
                let samples: Vec<f64> = (0..len)
                    .map(|t| {
                        let time = t as f64 / sample_rate_hz as f64;
                        let mut s = 0.0;
                        for (f, phi) in freqs.iter().zip(&phases) {
                            s += TONE_AMP * (2.0 * PI * f * time + phi).sin();
                        }
                        let noise: f64 = rng.sample(StandardNormal);
                        (s + noise_std * noise).clamp(-1.0, 1.0)
                    })
                    .collect();
                utterances.push(Utterance {
                    waveform: Waveform::new(samples, sample_rate_hz).expect("synth in range"),
                    speaker,
                });
            }
        }
        SynthDataset { speaker_freqs, utterances, utts_per_speaker }
    }

    pub fn num_speakers(&self) -> usize {
        self.speaker_freqs.len()
    }

    /// Hold out the last `val_per_speaker` utterances of every speaker.
    /// Speakers appear on both sides; utterances on exactly one.
    pub fn split(&self, val_per_speaker: usize) -> (Vec<&Utterance>, Vec<&Utterance>) {
        assert!(val_per_speaker < self.utts_per_speaker);
        let mut train = Vec::new();
        let mut val = Vec::new();
        for (i, u) in self.utterances.iter().enumerate() {
            if i % self.utts_per_speaker < self.utts_per_speaker - val_per_speaker {
                train.push(u);
            } else {
                val.push(u);
            }
        }
        (train, val)
    }
}
