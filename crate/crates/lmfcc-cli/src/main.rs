//! `lmfcc` — command-line workflow for the learnable MFCC front-end.
//!
//! Subcommands cover the full loop: initialize kernels, extract features,
//! verify gradients, adapt one component on synthetic speakers, inspect
//! regularizers, project kernels, and score trials. Exit codes: 0 success,
//! 1 usage error, 2 data error, 3 numerical failure.

use clap::{Parser, Subcommand, ValueEnum};
use lmfcc::constraints::{self, ConstraintMode};
use lmfcc::error::Error as LmfccError;
use lmfcc::kernels::Component;
use lmfcc::trainer::{self, SynthDataset, ToyEmbedNet, TrainConfig, Trainer};
use lmfcc::{audio_io, autodiff, eval, pipeline, KernelSet, MfccConfig};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const GRADCHECK_TOLERANCE: f64 = 1e-4;

#[derive(Parser)]
#[command(name = "lmfcc", version, about = "Learnable MFCC front-end toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ComponentArg {
    Window,
    Dft,
    Melbank,
    Dct,
}

impl From<ComponentArg> for Component {
    fn from(c: ComponentArg) -> Component {
        match c {
            ComponentArg::Window => Component::Window,
            ComponentArg::Dft => Component::Dft,
            ComponentArg::Melbank => Component::Melbank,
            ComponentArg::Dct => Component::Dct,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum AdaptComponentArg {
    Window,
    Dft,
    Melbank,
    Dct,
    /// Frozen front-end; trains only the classification net.
    None,
}

impl From<AdaptComponentArg> for Option<Component> {
    fn from(c: AdaptComponentArg) -> Option<Component> {
        match c {
            AdaptComponentArg::Window => Some(Component::Window),
            AdaptComponentArg::Dft => Some(Component::Dft),
            AdaptComponentArg::Melbank => Some(Component::Melbank),
            AdaptComponentArg::Dct => Some(Component::Dct),
            AdaptComponentArg::None => None,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    None,
    Loss,
    Kernel,
}

impl From<ModeArg> for ConstraintMode {
    fn from(m: ModeArg) -> ConstraintMode {
        match m {
            ModeArg::None => ConstraintMode::None,
            ModeArg::Loss => ConstraintMode::LossReg,
            ModeArg::Kernel => ConstraintMode::KernelUpdate,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a kernel container with every component at its static init.
    InitKernels {
        /// Optional key=value config file; defaults otherwise.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Extract features from a WAV file to CSV.
    Extract {
        #[arg(long)]
        kernels: PathBuf,
        #[arg(long)]
        wav: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Skip energy-based speech activity detection.
        #[arg(long)]
        no_sad: bool,
        /// Skip cepstral mean normalization.
        #[arg(long)]
        no_cmn: bool,
    },
    /// Compare analytic kernel gradients against finite differences.
    Gradcheck {
        /// Random instances per component.
        #[arg(long, default_value_t = 10)]
        seeds: u64,
    },
    /// Two-phase adaptation on synthetic speakers: pretrain the net with a
    /// frozen front-end, then jointly optimize one component.
    Adapt {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_enum)]
        component: AdaptComponentArg,
        #[arg(long, value_enum, default_value = "none")]
        mode: ModeArg,
        #[arg(long, default_value_t = 0.1)]
        lambda: f64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        steps: usize,
        #[arg(long)]
        out_kernels: PathBuf,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, default_value_t = 50)]
        pretrain_steps: usize,
        #[arg(long, default_value_t = 10)]
        speakers: usize,
        #[arg(long, default_value_t = 20)]
        utts_per_speaker: usize,
        #[arg(long, default_value_t = 4)]
        val_per_speaker: usize,
        #[arg(long, default_value_t = 8)]
        batch: usize,
    },
    /// Print the loss-regularizer value(s) of one component.
    Reg {
        #[arg(long)]
        kernels: PathBuf,
        #[arg(long, value_enum)]
        component: ComponentArg,
    },
    /// Apply the kernel update of one component and write the result.
    Project {
        #[arg(long)]
        kernels: PathBuf,
        #[arg(long, value_enum)]
        component: ComponentArg,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a trial file: prints EER and minDCF, writes DET points as CSV.
    Eval {
        #[arg(long)]
        scores: PathBuf,
        /// DET output path; defaults to `<scores>.det.csv`.
        #[arg(long)]
        det: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // --help/--version land here; they are not usage errors.
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}

/// 2 for data problems, 3 for numerical failures.
fn exit_code_for(e: &LmfccError) -> u8 {
    match e {
        LmfccError::NonFiniteLoss { .. }
        | LmfccError::RankDeficient { .. }
        | LmfccError::ZeroMatrix { .. } => 3,
        _ => 2,
    }
}

fn run(command: Command) -> Result<ExitCode, LmfccError> {
    match command {
        Command::InitKernels { config, out } => {
            let cfg = load_config(config.as_deref())?;
            let ks = KernelSet::initialized(cfg)?;
            audio_io::write_kernels(&ks, &out)?;
            println!("wrote {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Extract { kernels, wav, out, no_sad, no_cmn } => {
            let ks = audio_io::read_kernels(&kernels)?;
            let waveform = audio_io::read_wav(&wav)?;
            let fm = pipeline::extract(&waveform, &ks, !no_sad, !no_cmn)?;
            audio_io::write_features(&fm, &out)?;
            println!("wrote {} ({} frames x {} ceps)", out.display(), fm.num_frames(), fm.num_ceps());
            Ok(ExitCode::SUCCESS)
        }
        Command::Gradcheck { seeds } => {
            let results = autodiff::fd_check_all(seeds)?;
            let mut ok = true;
            for (component, err) in results {
                let pass = err < GRADCHECK_TOLERANCE;
                ok &= pass;
                println!(
                    "{:<8} max_rel_err {err:.3e} {}",
                    component.name(),
                    if pass { "ok" } else { "FAIL" }
                );
            }
            Ok(if ok { ExitCode::SUCCESS } else { ExitCode::from(3) })
        }
        Command::Adapt {
            config,
            component,
            mode,
            lambda,
            seed,
            steps,
            out_kernels,
            trace,
            pretrain_steps,
            speakers,
            utts_per_speaker,
            val_per_speaker,
            batch,
        } => {
            let cfg = load_config(config.as_deref())?;
            let ks = KernelSet::initialized(cfg)?;
            if val_per_speaker >= utts_per_speaker {
                return Err(LmfccError::InvalidArg {
                    op: "adapt",
                    reason: "val-per-speaker must be below utts-per-speaker".into(),
                });
            }
            let data =
                SynthDataset::generate(speakers, utts_per_speaker, ks.config.sample_rate_hz, seed);
            let (train, val) = data.split(val_per_speaker);
            let net = ToyEmbedNet::new(ks.config.num_ceps(), speakers, seed);

            let pre_cfg = TrainConfig {
                adapted_component: None,
                mode: ConstraintMode::None,
                steps: pretrain_steps,
                seed,
                batch_size: batch,
                ..TrainConfig::default()
            };
            let mut pretrainer = Trainer::new(net, ks.clone(), pre_cfg)?;
            let pre_trace = pretrainer.adapt(&train, &val)?;
            println!(
                "pretrain {} steps: val_ce {:.6} -> {:.6}",
                pretrain_steps,
                pre_trace.first().map_or(f64::NAN, |r| r.val_ce),
                pre_trace.last().map_or(f64::NAN, |r| r.val_ce),
            );

            let adapt_cfg = TrainConfig {
                adapted_component: component.into(),
                mode: mode.into(),
                lambda,
                steps,
                seed,
                batch_size: batch,
                ..TrainConfig::default()
            };
            let mut adapter = Trainer::new(pretrainer.net, ks, adapt_cfg)?;
            let adapt_trace = adapter.adapt(&train, &val)?;
            trainer::write_trace_csv(&adapt_trace, &trace)?;
            audio_io::write_kernels(&adapter.kernels, &out_kernels)?;
            println!(
                "adapt {} steps: val_ce {:.6} -> {:.6}",
                steps,
                adapt_trace.first().map_or(f64::NAN, |r| r.val_ce),
                adapt_trace.last().map_or(f64::NAN, |r| r.val_ce),
            );
            println!("wrote {} and {}", out_kernels.display(), trace.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Reg { kernels, component } => {
            let ks = audio_io::read_kernels(&kernels)?;
            match Component::from(component) {
                Component::Window => {
                    println!("window {:.16e}", constraints::reg_window(&ks.window)?)
                }
                Component::Dft => {
                    println!("dft_real {:.16e}", constraints::reg_dft(&ks.dft_real)?);
                    println!("dft_imag {:.16e}", constraints::reg_dft(&ks.dft_imag)?);
                }
                Component::Melbank => {
                    println!("melbank {:.16e}", constraints::reg_melbank(&ks.melbank))
                }
                Component::Dct => println!("dct {:.16e}", constraints::reg_dct(&ks.dct)?),
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Project { kernels, component, out } => {
            let mut ks = audio_io::read_kernels(&kernels)?;
            match Component::from(component) {
                Component::Window => ks.window = constraints::proj_window(&ks.window)?,
                Component::Dft => {
                    ks.dft_real = constraints::proj_dft(&ks.dft_real)?;
                    ks.dft_imag = constraints::proj_dft(&ks.dft_imag)?;
                }
                Component::Melbank => ks.melbank = constraints::proj_melbank(&ks.melbank),
                Component::Dct => ks.dct = constraints::proj_dct(&ks.dct)?,
            }
            audio_io::write_kernels(&ks, &out)?;
            println!("wrote {}", out.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Eval { scores, det } => {
            let ts = eval::TrialScores::from_file(&scores)?;
            let eer = eval::eer(&ts)?;
            let dcf = eval::min_dcf(&ts, 0.001, 1.0, 1.0)?;
            let points = eval::det_points(&ts)?;
            let det_path = det.unwrap_or_else(|| audio_io::with_extension(&scores, "det.csv"));
            eval::write_det_csv(&points, &det_path)?;
            println!("eer {eer:.10}");
            println!("min_dcf {dcf:.10}");
            println!("det_csv {} ({} points)", det_path.display(), points.len());
            Ok(ExitCode::SUCCESS)
        }
    }
}

/// Parse a key=value config file; missing file option means defaults.
fn load_config(path: Option<&Path>) -> Result<MfccConfig, LmfccError> {
    let Some(path) = path else {
        return Ok(MfccConfig::default());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|source| LmfccError::Io { path: path.to_path_buf(), source })?;
    let mut cfg = MfccConfig::default();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = |reason: String| LmfccError::InvalidConfig {
            reason: format!("{}:{}: {reason}", path.display(), i + 1),
        };
        let (key, value) = line.split_once('=').ok_or_else(|| bad("expected key=value".into()))?;
        let (key, value) = (key.trim(), value.trim());
        let parse_usize =
            |v: &str| v.parse::<usize>().map_err(|e| bad(format!("bad integer '{v}': {e}")));
        let parse_f64 =
            |v: &str| v.parse::<f64>().map_err(|e| bad(format!("bad number '{v}': {e}")));
        match key {
            "sample_rate_hz" => {
                cfg.sample_rate_hz = value
                    .parse::<u32>()
                    .map_err(|e| bad(format!("bad integer '{value}': {e}")))?
            }
            "frame_len" => cfg.frame_len = parse_usize(value)?,
            "frame_shift" => cfg.frame_shift = parse_usize(value)?,
            "fft_size" => cfg.fft_size = parse_usize(value)?,
            "num_filters" => cfg.num_filters = parse_usize(value)?,
            "fmin_hz" => cfg.fmin_hz = parse_f64(value)?,
            "fmax_hz" => cfg.fmax_hz = parse_f64(value)?,
            "preemph" => cfg.preemph = parse_f64(value)?,
            "log_floor" => cfg.log_floor = parse_f64(value)?,
            "sad_fraction" => cfg.sad_fraction = parse_f64(value)?,
            other => return Err(bad(format!("unknown key '{other}'"))),
        }
    }
    cfg.validate()?;
    Ok(cfg)
}
