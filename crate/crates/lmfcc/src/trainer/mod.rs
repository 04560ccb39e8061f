//! Desk-scale adaptation of the learnable front-end.
//!
//! The protocol has two phases: first the classification net is trained with
//! the kernels frozen at their static initialization; then exactly one
//! front-end component is optimized jointly with the net, optionally under a
//! loss regularizer (`L + lambda * g_loss`) or a post-step kernel update.
//! Batches run per-utterance forward/backward in parallel with a fixed-order
//! reduction, so traces and kernels are bit-reproducible for a given seed.

mod adam;
mod net;
mod synth;

pub use adam::{AdamParams, AdamState};
pub use net::{cross_entropy, score_cosine, NetGradients, ToyEmbedNet, EMBED_DIM, FRAME_DIM};
pub use synth::{SynthDataset, Utterance};

use crate::autodiff::{backward_frame_for, forward_frame_retained, GradientSet};
use crate::constraints::{self, ConstraintMode};
use crate::error::{Error, Result};
use crate::kernels::{Component, KernelSet};
use crate::pipeline::{self, FeatureMatrix};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::io::Write;
use std::path::Path;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Settings for one training run (one phase).
#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// Component being adapted; `None` trains the net over a frozen front-end.
    pub adapted_component: Option<Component>,
    pub mode: ConstraintMode,
    /// Regularization constant for [`ConstraintMode::LossReg`].
    pub lambda: f64,
    pub optimizer: AdamParams,
    pub steps: usize,
    pub seed: u64,
    pub batch_size: usize,
    /// Validation cadence of [`Trainer::adapt`], in steps.
    pub eval_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            adapted_component: None,
            mode: ConstraintMode::None,
            lambda: 0.1,
            optimizer: AdamParams::default(),
            steps: 200,
            seed: 0,
            batch_size: 8,
            eval_interval: 10,
        }
    }
}

/// Loss pieces of one training step.
#[derive(Debug, Clone, Copy)]
pub struct StepStats {
    /// Composite objective: cross-entropy plus any active regularizer term.
    pub loss: f64,
    pub ce: f64,
    /// `g_loss` of the adapted component at step end (0 when nothing adapts).
    pub reg: f64,
}

/// One row of the adaptation trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub train_ce: f64,
    pub val_ce: f64,
    pub reg_value: f64,
}

/// Write a trace as CSV with full-precision floats.
pub fn write_trace_csv(trace: &[TraceRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut w = std::io::BufWriter::new(
        std::fs::File::create(path)
            .map_err(|source| Error::Io { path: path.to_path_buf(), source })?,
    );
    let res = (|| -> std::io::Result<()> {
        writeln!(w, "step,train_ce,val_ce,reg_value")?;
        for r in trace {
            writeln!(w, "{},{:.16e},{:.16e},{:.16e}", r.step, r.train_ce, r.val_ce, r.reg_value)?;
        }
        w.flush()
    })();
    res.map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

struct NetOpt {
    w1: AdamState,
    b1: AdamState,
    w2: AdamState,
    b2: AdamState,
    w3: AdamState,
    b3: AdamState,
    w4: AdamState,
    b4: AdamState,
}

enum KernelOpt {
    Window(AdamState),
    Dft(AdamState, AdamState),
    Melbank(AdamState),
    Dct(AdamState),
}

/// Joint trainer for the net and (optionally) one front-end component.
pub struct Trainer {
    pub net: ToyEmbedNet,
    pub kernels: KernelSet,
    pub cfg: TrainConfig,
    step: usize,
    rng: ChaCha8Rng,
    net_opt: NetOpt,
    kernel_opt: Option<KernelOpt>,
}

struct UtterancePass {
    ce: f64,
    net_grads: NetGradients,
    kernel_grads: Option<GradientSet>,
}

impl Trainer {
    pub fn new(net: ToyEmbedNet, kernels: KernelSet, cfg: TrainConfig) -> Result<Self> {
        kernels.validate()?;
        if net.input_dim() != kernels.config.num_ceps() {
            return Err(Error::ShapeMismatch {
                op: "trainer",
                detail: format!(
                    "net input dim {} != {} cepstra",
                    net.input_dim(),
                    kernels.config.num_ceps()
                ),
            });
        }
        if cfg.batch_size == 0 || cfg.eval_interval == 0 {
            return Err(Error::InvalidArg {
                op: "trainer",
                reason: "batch_size and eval_interval must be positive".into(),
            });
        }
        if cfg.adapted_component.is_none() && cfg.mode != ConstraintMode::None {
            return Err(Error::InvalidArg {
                op: "trainer",
                reason: "a constraint mode needs an adapted component".into(),
            });
        }
        if cfg.lambda < 0.0 || !cfg.lambda.is_finite() {
            return Err(Error::InvalidArg {
                op: "trainer",
                reason: format!("lambda {} must be finite and >= 0", cfg.lambda),
            });
        }

        let net_opt = NetOpt {
            w1: AdamState::new(net.w1.data().len()),
            b1: AdamState::new(net.b1.len()),
            w2: AdamState::new(net.w2.data().len()),
            b2: AdamState::new(net.b2.len()),
            w3: AdamState::new(net.w3.data().len()),
            b3: AdamState::new(net.b3.len()),
            w4: AdamState::new(net.w4.data().len()),
            b4: AdamState::new(net.b4.len()),
        };
        let n2 = kernels.config.fft_size * kernels.config.fft_size;
        let kernel_opt = cfg.adapted_component.map(|c| match c {
            Component::Window => KernelOpt::Window(AdamState::new(kernels.window.len())),
            Component::Dft => KernelOpt::Dft(AdamState::new(n2), AdamState::new(n2)),
            Component::Melbank => KernelOpt::Melbank(AdamState::new(kernels.melbank.data().len())),
            Component::Dct => KernelOpt::Dct(AdamState::new(kernels.dct.data().len())),
        });

        let rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        Ok(Trainer { net, kernels, cfg, step: 0, rng, net_opt, kernel_opt })
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// Features for one utterance under the current kernels (SAD and CMN on).
    fn features(&self, u: &Utterance) -> Result<FeatureMatrix> {
        pipeline::extract_sequential(&u.waveform, &self.kernels, true, true)
    }

    /// Forward/backward for one utterance. `cached` carries pre-extracted
    /// features, valid only while the front-end is frozen.
    fn utterance_pass(&self, u: &Utterance, cached: Option<&FeatureMatrix>) -> Result<UtterancePass> {
        if u.speaker >= self.net.num_speakers() {
            return Err(Error::InvalidArg {
                op: "train_step",
                reason: format!("speaker label {} out of range", u.speaker),
            });
        }
        match self.cfg.adapted_component {
            None => {
                let fm;
                let fm_ref = match cached {
                    Some(f) => f,
                    None => {
                        fm = self.features(u)?;
                        &fm
                    }
                };
                let cache = self.net.forward_cached(fm_ref)?;
                let (ce, d_logits) = cross_entropy(&cache.logits, u.speaker);
                let mut net_grads = NetGradients::zeros_like(&self.net);
                self.net.backward(&cache, &d_logits, &mut net_grads);
                Ok(UtterancePass { ce, net_grads, kernel_grads: None })
            }
            Some(component) => {
                let ks = &self.kernels;
                let frames = pipeline::prepare_frames(&u.waveform, ks, true)?;
                let mut rows = Vec::with_capacity(frames.len());
                let mut tapes = Vec::with_capacity(frames.len());
                for f in &frames {
                    let (ceps, tape) = forward_frame_retained(f, ks);
                    rows.push(ceps);
                    tapes.push(tape);
                }
                let raw = FeatureMatrix::from_rows(rows, ks.config.frame_shift_s())?;
                let fm = pipeline::cmn(&raw);

                let cache = self.net.forward_cached(&fm)?;
                let (ce, d_logits) = cross_entropy(&cache.logits, u.speaker);
                let mut net_grads = NetGradients::zeros_like(&self.net);
                let d_inputs = self.net.backward(&cache, &d_logits, &mut net_grads);

                // CMN is inside the differentiated graph: its Jacobian is the
                // per-coefficient centering projection, which is self-adjoint.
                let t_frames = d_inputs.len() as f64;
                let num_ceps = ks.config.num_ceps();
                let mut col_mean = vec![0.0; num_ceps];
                for row in &d_inputs {
                    for (m, &g) in col_mean.iter_mut().zip(row) {
                        *m += g;
                    }
                }
                for m in &mut col_mean {
                    *m /= t_frames;
                }

                let mut kernel_grads = GradientSet::zeros_like(ks);
                let mut g_feat = vec![0.0; num_ceps];
                for (row, tape) in d_inputs.iter().zip(&tapes) {
                    for ((g, &d), &m) in g_feat.iter_mut().zip(row).zip(&col_mean) {
                        *g = d - m;
                    }
                    backward_frame_for(component, &g_feat, tape, ks, &mut kernel_grads);
                }
                Ok(UtterancePass { ce, net_grads, kernel_grads: Some(kernel_grads) })
            }
        }
    }

    fn batch_passes(
        &self,
        batch: &[&Utterance],
        cached: Option<&[&FeatureMatrix]>,
    ) -> Result<Vec<UtterancePass>> {
        let get_cached = |i: usize| cached.map(|c| c[i]);
        #[cfg(feature = "parallel")]
        {
            batch
                .par_iter()
                .enumerate()
                .map(|(i, u)| self.utterance_pass(u, get_cached(i)))
                .collect()
        }
        #[cfg(not(feature = "parallel"))]
        {
            batch
                .iter()
                .enumerate()
                .map(|(i, u)| self.utterance_pass(u, get_cached(i)))
                .collect()
        }
    }

    /// Mean cross-entropy and mean gradients over a batch, plus the active
    /// regularizer value/gradient when the mode asks for one.
    fn batch_gradients(
        &self,
        batch: &[&Utterance],
        cached: Option<&[&FeatureMatrix]>,
    ) -> Result<(StepStats, NetGradients, Option<GradientSet>)> {
        if batch.is_empty() {
            return Err(Error::InvalidArg { op: "train_step", reason: "empty batch".into() });
        }
        let passes = self.batch_passes(batch, cached)?;

        let scale = 1.0 / batch.len() as f64;
        let mut ce = 0.0;
        let mut net_grads = NetGradients::zeros_like(&self.net);
        let mut kernel_grads =
            self.cfg.adapted_component.map(|_| GradientSet::zeros_like(&self.kernels));
        for pass in &passes {
            ce += pass.ce;
            net_grads.add_scaled(&pass.net_grads, 1.0);
            if let (Some(acc), Some(g)) = (kernel_grads.as_mut(), pass.kernel_grads.as_ref()) {
                acc.add_scaled(g, 1.0);
            }
        }
        ce *= scale;
        net_grads.scale(scale);
        if let Some(acc) = kernel_grads.as_mut() {
            acc.scale(scale);
        }

        let mut reg = 0.0;
        let mut loss = ce;
        if let (Some(component), Some(acc)) = (self.cfg.adapted_component, kernel_grads.as_mut()) {
            if self.cfg.mode == ConstraintMode::LossReg {
                let lambda = self.cfg.lambda;
                match component {
                    Component::Window => {
                        let (v, g) = constraints::reg_window_grad(&self.kernels.window)?;
                        reg = v;
                        for (a, &b) in acc.d_window.iter_mut().zip(&g) {
                            *a += lambda * b;
                        }
                    }
                    Component::Dft => {
                        let (vr, gr) = constraints::reg_dft_grad(&self.kernels.dft_real)?;
                        let (vi, gi) = constraints::reg_dft_grad(&self.kernels.dft_imag)?;
                        reg = vr + vi;
                        acc.d_dft_real.add_scaled(&gr, lambda);
                        acc.d_dft_imag.add_scaled(&gi, lambda);
                    }
                    Component::Melbank => {
                        let (v, g) = constraints::reg_melbank_grad(&self.kernels.melbank);
                        reg = v;
                        acc.d_melbank.add_scaled(&g, lambda);
                    }
                    Component::Dct => {
                        let (v, g) = constraints::reg_dct_grad(&self.kernels.dct)?;
                        reg = v;
                        acc.d_dct.add_scaled(&g, lambda);
                    }
                }
                loss += lambda * reg;
            }
        }
        Ok((StepStats { loss, ce, reg }, net_grads, kernel_grads))
    }

    /// One optimizer step over a batch of utterances.
    ///
    /// Backpropagates through the net and, when a component is adapted,
    /// through the front-end; applies Adam; then, in kernel-update mode,
    /// projects the adapted kernel. Frozen kernels are never touched.
    pub fn train_step(&mut self, batch: &[&Utterance]) -> Result<StepStats> {
        self.train_step_cached(batch, None)
    }

    fn train_step_cached(
        &mut self,
        batch: &[&Utterance],
        cached: Option<&[&FeatureMatrix]>,
    ) -> Result<StepStats> {
        let (mut stats, net_grads, kernel_grads) = self.batch_gradients(batch, cached)?;
        if !stats.loss.is_finite() {
            return Err(Error::NonFiniteLoss { step: self.step });
        }

        self.step += 1;
        let t = self.step as u64;
        let p = self.cfg.optimizer;
        let net = &mut self.net;
        let o = &mut self.net_opt;
        o.w1.update(net.w1.data_mut(), net_grads.w1.data(), t, &p);
        o.b1.update(&mut net.b1, &net_grads.b1, t, &p);
        o.w2.update(net.w2.data_mut(), net_grads.w2.data(), t, &p);
        o.b2.update(&mut net.b2, &net_grads.b2, t, &p);
        o.w3.update(net.w3.data_mut(), net_grads.w3.data(), t, &p);
        o.b3.update(&mut net.b3, &net_grads.b3, t, &p);
        o.w4.update(net.w4.data_mut(), net_grads.w4.data(), t, &p);
        o.b4.update(&mut net.b4, &net_grads.b4, t, &p);

        if let (Some(opt), Some(g)) = (self.kernel_opt.as_mut(), kernel_grads.as_ref()) {
            match opt {
                KernelOpt::Window(s) => s.update(&mut self.kernels.window, &g.d_window, t, &p),
                KernelOpt::Dft(sr, si) => {
                    sr.update(self.kernels.dft_real.data_mut(), g.d_dft_real.data(), t, &p);
                    si.update(self.kernels.dft_imag.data_mut(), g.d_dft_imag.data(), t, &p);
                }
                KernelOpt::Melbank(s) => {
                    s.update(self.kernels.melbank.data_mut(), g.d_melbank.data(), t, &p)
                }
                KernelOpt::Dct(s) => s.update(self.kernels.dct.data_mut(), g.d_dct.data(), t, &p),
            }
        }

        if self.cfg.mode == ConstraintMode::KernelUpdate {
            if let Some(component) = self.cfg.adapted_component {
                match component {
                    Component::Window => {
                        self.kernels.window = constraints::proj_window(&self.kernels.window)?;
                    }
                    Component::Dft => {
                        // The bounded variant: raw F F^T overflows f64 within
                        // ten iterations at this kernel's scale.
                        self.kernels.dft_real =
                            constraints::proj_dft_stabilized(&self.kernels.dft_real)?;
                        self.kernels.dft_imag =
                            constraints::proj_dft_stabilized(&self.kernels.dft_imag)?;
                    }
                    Component::Melbank => {
                        self.kernels.melbank = constraints::proj_melbank(&self.kernels.melbank);
                    }
                    Component::Dct => {
                        self.kernels.dct = constraints::proj_dct(&self.kernels.dct)?;
                    }
                }
            }
        }

        if let Some(component) = self.cfg.adapted_component {
            stats.reg = constraints::component_reg(&self.kernels, component)?;
        }
        Ok(stats)
    }

    /// Mean validation cross-entropy under the current net and kernels.
    pub fn validation_ce(&self, val: &[&Utterance]) -> Result<f64> {
        self.validation_ce_cached(val, None)
    }

    fn validation_ce_cached(
        &self,
        val: &[&Utterance],
        cached: Option<&[FeatureMatrix]>,
    ) -> Result<f64> {
        if val.is_empty() {
            return Err(Error::InvalidArg { op: "validation", reason: "empty set".into() });
        }
        let one = |i: usize, u: &Utterance| -> Result<f64> {
            let fm;
            let fm_ref = match cached {
                Some(c) => &c[i],
                None => {
                    fm = self.features(u)?;
                    &fm
                }
            };
            let cache = self.net.forward_cached(fm_ref)?;
            Ok(cross_entropy(&cache.logits, u.speaker).0)
        };
        #[cfg(feature = "parallel")]
        let ces: Vec<f64> = val
            .par_iter()
            .enumerate()
            .map(|(i, u)| one(i, u))
            .collect::<Result<_>>()?;
        #[cfg(not(feature = "parallel"))]
        let ces: Vec<f64> =
            val.iter().enumerate().map(|(i, u)| one(i, u)).collect::<Result<_>>()?;
        Ok(ces.iter().sum::<f64>() / ces.len() as f64)
    }

    /// Run `cfg.steps` training steps, recording validation cross-entropy at
    /// step 0 and every `cfg.eval_interval` steps.
    ///
    /// Train and validation sets must not share utterances. Batches are drawn
    /// with replacement from the seeded generator, so two runs with the same
    /// configuration produce identical traces and kernels.
    pub fn adapt(&mut self, train: &[&Utterance], val: &[&Utterance]) -> Result<Vec<TraceRow>> {
        if train.is_empty() {
            return Err(Error::InvalidArg { op: "adapt", reason: "empty train set".into() });
        }
        // With a frozen front-end the features never change; extract once.
        let frozen = self.cfg.adapted_component.is_none();
        let extract_all = |set: &[&Utterance]| -> Result<Vec<FeatureMatrix>> {
            #[cfg(feature = "parallel")]
            {
                set.par_iter().map(|u| self.features(u)).collect()
            }
            #[cfg(not(feature = "parallel"))]
            {
                set.iter().map(|u| self.features(u)).collect()
            }
        };
        let train_cache: Option<Vec<FeatureMatrix>> =
            if frozen { Some(extract_all(train)?) } else { None };
        let val_cache: Option<Vec<FeatureMatrix>> =
            if frozen { Some(extract_all(val)?) } else { None };

        let mut trace = Vec::with_capacity(1 + self.cfg.steps / self.cfg.eval_interval);
        let initial_batch: Vec<&Utterance> =
            train.iter().take(self.cfg.batch_size).copied().collect();
        let initial_refs: Option<Vec<&FeatureMatrix>> = train_cache
            .as_ref()
            .map(|c| c.iter().take(self.cfg.batch_size).collect());
        let (initial_stats, _, _) =
            self.batch_gradients(&initial_batch, initial_refs.as_deref())?;
        trace.push(TraceRow {
            step: 0,
            train_ce: initial_stats.ce,
            val_ce: self.validation_ce_cached(val, val_cache.as_deref())?,
            reg_value: self.current_reg()?,
        });

        for s in 1..=self.cfg.steps {
            let idx: Vec<usize> =
                (0..self.cfg.batch_size).map(|_| self.rng.gen_range(0..train.len())).collect();
            let batch: Vec<&Utterance> = idx.iter().map(|&i| train[i]).collect();
            let cached_refs: Option<Vec<&FeatureMatrix>> =
                train_cache.as_ref().map(|c| idx.iter().map(|&i| &c[i]).collect());
            let stats = self.train_step_cached(&batch, cached_refs.as_deref())?;
            if s % self.cfg.eval_interval == 0 {
                trace.push(TraceRow {
                    step: s,
                    train_ce: stats.ce,
                    val_ce: self.validation_ce_cached(val, val_cache.as_deref())?,
                    reg_value: stats.reg,
                });
            }
        }
        Ok(trace)
    }

    fn current_reg(&self) -> Result<f64> {
        match self.cfg.adapted_component {
            Some(c) => constraints::component_reg(&self.kernels, c),
            None => Ok(0.0),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::MfccConfig;

    // 8 kHz keeps the synth tones (up to 3400 Hz) under Nyquist.
    fn tiny_config() -> MfccConfig {
        MfccConfig {
            sample_rate_hz: 8000,
            frame_len: 64,
            frame_shift: 32,
            fft_size: 64,
            num_filters: 6,
            fmin_hz: 20.0,
            fmax_hz: 3800.0,
            preemph: 0.97,
            log_floor: 1e-10,
            sad_fraction: 0.1,
        }
    }

    fn tiny_setup(component: Option<Component>, mode: ConstraintMode) -> (Trainer, SynthDataset) {
        let ks = KernelSet::initialized(tiny_config()).unwrap();
        let data = SynthDataset::generate(3, 6, 8000, 11);
        let net = ToyEmbedNet::new(ks.config.num_ceps(), 3, 11);
        let cfg = TrainConfig {
            adapted_component: component,
            mode,
            batch_size: 3,
            steps: 5,
            seed: 11,
            ..TrainConfig::default()
        };
        (Trainer::new(net, ks, cfg).unwrap(), data)
    }

    #[test]
    fn mode_none_loss_is_plain_cross_entropy() {
        let (mut trainer, data) = tiny_setup(None, ConstraintMode::None);
        let batch: Vec<&Utterance> = data.utterances.iter().take(3).collect();
        let stats = trainer.train_step(&batch).unwrap();
        assert_eq!(stats.loss, stats.ce);
        assert_eq!(stats.reg, 0.0);
    }

    #[test]
    fn initial_ce_is_near_log_s() {
        let (trainer, data) = tiny_setup(None, ConstraintMode::None);
        let all: Vec<&Utterance> = data.utterances.iter().collect();
        let ce = trainer.validation_ce(&all).unwrap();
        assert!((ce - 3.0f64.ln()).abs() < 0.5, "initial ce = {ce}");
    }

    #[test]
    fn single_speaker_batch_has_log_s_loss_at_uniform_softmax() {
        let (mut trainer, data) = tiny_setup(None, ConstraintMode::None);
        // Zero the classifier weights so logits are exactly equal.
        trainer.net.w4 = crate::linalg::Mat::zeros(3, EMBED_DIM);
        let batch: Vec<&Utterance> = data.utterances.iter().take(2).collect();
        let stats = trainer.train_step(&batch).unwrap();
        assert!((stats.ce - 3.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn kernel_update_melbank_keeps_entries_positive() {
        let (mut trainer, data) = tiny_setup(Some(Component::Melbank), ConstraintMode::KernelUpdate);
        let batch: Vec<&Utterance> = data.utterances.iter().take(3).collect();
        for _ in 0..3 {
            trainer.train_step(&batch).unwrap();
            assert!(trainer.kernels.melbank.data().iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn frozen_kernels_stay_bit_identical() {
        let (mut trainer, data) = tiny_setup(Some(Component::Window), ConstraintMode::None);
        let before = trainer.kernels.clone();
        let batch: Vec<&Utterance> = data.utterances.iter().take(3).collect();
        for _ in 0..3 {
            trainer.train_step(&batch).unwrap();
        }
        assert_ne!(before.window, trainer.kernels.window, "window should move");
        assert_eq!(before.dft_real.data(), trainer.kernels.dft_real.data());
        assert_eq!(before.dft_imag.data(), trainer.kernels.dft_imag.data());
        assert_eq!(before.melbank.data(), trainer.kernels.melbank.data());
        assert_eq!(before.dct.data(), trainer.kernels.dct.data());
    }

    #[test]
    fn adapt_zero_steps_traces_only_initial_loss() {
        let (mut trainer, data) = tiny_setup(None, ConstraintMode::None);
        let (train, val) = data.split(2);
        let mut cfg = trainer.cfg.clone();
        cfg.steps = 0;
        trainer.cfg = cfg;
        let trace = trainer.adapt(&train, &val).unwrap();
        assert_eq!(trace.len(), 1);
        assert_eq!(trace[0].step, 0);
        assert!(trace[0].val_ce.is_finite());
    }

    #[test]
    fn adapt_is_deterministic_for_a_seed() {
        let run = || {
            let (mut trainer, data) = tiny_setup(Some(Component::Window), ConstraintMode::None);
            let (train, val) = data.split(2);
            let mut cfg = trainer.cfg.clone();
            cfg.steps = 6;
            cfg.eval_interval = 2;
            trainer.cfg = cfg;
            let trace = trainer.adapt(&train, &val).unwrap();
            (trace, trainer.kernels.window.clone())
        };
        let (t1, w1) = run();
        let (t2, w2) = run();
        assert_eq!(t1, t2);
        assert_eq!(w1, w2);
    }

    #[test]
    fn loss_reg_gradient_matches_finite_differences() {
        // d(total)/d(kernel) must equal CE gradient + lambda * reg gradient.
        for (component, probes) in [
            (Component::Window, vec![0usize, 15, 40]),
            (Component::Dct, vec![0usize, 7, 20]),
            (Component::Melbank, vec![1usize, 50, 100]),
            (Component::Dft, vec![0usize, 65, 700]),
        ] {
            let (trainer, data) = tiny_setup(Some(component), ConstraintMode::LossReg);
            let batch: Vec<&Utterance> = data.utterances.iter().take(2).collect();
            let (_, _, kgrads) = trainer.batch_gradients(&batch, None).unwrap();
            let kgrads = kgrads.unwrap();

            let loss_with = |ks: &KernelSet| -> f64 {
                let probe = Trainer::new(trainer.net.clone(), ks.clone(), trainer.cfg.clone())
                    .unwrap();
                let (stats, _, _) = probe.batch_gradients(&batch, None).unwrap();
                stats.loss
            };

            for &flat in &probes {
                let analytic = match component {
                    Component::Window => kgrads.d_window[flat],
                    Component::Dct => kgrads.d_dct.data()[flat],
                    Component::Melbank => kgrads.d_melbank.data()[flat],
                    Component::Dft => kgrads.d_dft_real.data()[flat],
                };
                let mut ks = trainer.kernels.clone();
                let read = |ks: &KernelSet| match component {
                    Component::Window => ks.window[flat],
                    Component::Dct => ks.dct.data()[flat],
                    Component::Melbank => ks.melbank.data()[flat],
                    Component::Dft => ks.dft_real.data()[flat],
                };
                let write = |ks: &mut KernelSet, v: f64| match component {
                    Component::Window => ks.window[flat] = v,
                    Component::Dct => ks.dct.data_mut()[flat] = v,
                    Component::Melbank => ks.melbank.data_mut()[flat] = v,
                    Component::Dft => ks.dft_real.data_mut()[flat] = v,
                };
                let theta = read(&ks);
                let h = 1e-5 * (1.0 + theta.abs());
                write(&mut ks, theta + h);
                let plus = loss_with(&ks);
                write(&mut ks, theta - h);
                let minus = loss_with(&ks);
                let fd = (plus - minus) / (2.0 * h);
                // Same relative-error convention and tolerance as gradcheck;
                // central differences pick up ReLU-kink noise on hundreds of
                // frames, so this cannot be tighter than the kink scale.
                let err = (analytic - fd).abs() / 1.0f64.max(analytic.abs()).max(fd.abs());
                assert!(
                    err < 1e-4,
                    "{}: entry {flat} analytic {analytic} vs fd {fd}",
                    component.name()
                );
            }
        }
    }

    #[test]
    fn non_finite_loss_is_reported() {
        let (mut trainer, data) = tiny_setup(None, ConstraintMode::None);
        trainer.net.b4[0] = f64::INFINITY;
        let batch: Vec<&Utterance> = data.utterances.iter().take(2).collect();
        assert!(matches!(trainer.train_step(&batch), Err(Error::NonFiniteLoss { .. })));
    }
}
