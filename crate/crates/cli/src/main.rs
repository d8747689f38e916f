//! `dwdn` — train one dynamic-width/dynamic-depth source-separation
//! network, then enumerate, select, extract, and score its operating
//! points from the command line.
//!
//! Every subcommand is deterministic under a fixed seed. Subcommands that
//! produce files only write inside their `--out` directory. Exit codes:
//! 0 success, 1 runtime failure (I/O, checkpoint, numerics, infeasible
//! budget), 2 usage error (bad flags, unknown or malformed config keys).

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use dwdn_core::signal::wav::read_wav;
use dwdn_core::tensor::{flatten_params, FlatBinder};
use dwdn_core::training::train_with_progress;
use dwdn_core::{
    enumerate_costs, extract_subnet, grad_check, load_checkpoint, save_checkpoint, select_config,
    snr_db, stft, synth_item, Error, FullConfig, FullModelParams, Preference, Spectrogram,
    SubnetConfig, SynthSpec, Tensor, TrainItem, TrainMode, Waveform,
};

#[derive(Parser)]
#[command(
    name = "dwdn",
    version,
    about = "Train one dynamic-width/depth separation network; deploy any (w, d) slice of it"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model; writes config snapshot, per-epoch metrics, and the
    /// best checkpoint into --out
    Train(TrainArgs),
    /// Score a checkpoint's separation quality on WAVs or synthetic items
    Eval(EvalArgs),
    /// Write the cost table of every (w, d) operating point as CSV
    Enumerate(EnumerateArgs),
    /// Pick the best (w, d) under parameter / compute budgets
    Select(SelectArgs),
    /// Slice a (w, d) subnetwork out of a checkpoint as a standalone model
    Extract(ExtractArgs),
    /// Compare autodiff gradients of a whole model against finite
    /// differences; fails (exit 1) above max relative error 1e-4
    Gradcheck(GradcheckArgs),
}

/// Config resolution shared by subcommands that build a model from
/// configuration rather than from a checkpoint.
#[derive(Args, Clone)]
struct ConfigArgs {
    /// Start from a built-in preset
    #[arg(long, value_enum, default_value_t = PresetArg::Desk, conflicts_with = "config")]
    preset: PresetArg,
    /// Start from a config file instead of a preset
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one value, e.g. --set train.lr=0.002 (repeatable)
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    /// Small model: 16 operating points, 8 kHz, runs on a desk CPU
    Desk,
    /// Large model: 192 operating points, 44.1 kHz, dual-path
    Paper,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<FullConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
                FullConfig::parse(&text)?
            }
            None => match self.preset {
                PresetArg::Desk => FullConfig::desk(),
                PresetArg::Paper => FullConfig::paper_scale(),
            },
        };
        for dotted in &self.set {
            cfg.apply_override(dotted)?;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Override train.seed
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (created if missing)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
#[command(group = clap::ArgGroup::new("input").required(true).args(["mix", "synth"]))]
struct EvalArgs {
    /// Checkpoint to score
    #[arg(long)]
    model: PathBuf,
    /// Operating-point width (default: the checkpoint's maximum)
    #[arg(long)]
    w: Option<usize>,
    /// Operating-point depth (default: the checkpoint's maximum)
    #[arg(long)]
    d: Option<usize>,
    /// Mixture WAV (requires --target)
    #[arg(long, requires = "target")]
    mix: Option<PathBuf>,
    /// Clean-target WAV for scoring
    #[arg(long, requires = "mix")]
    target: Option<PathBuf>,
    /// Score N synthetic mixtures instead of reading WAVs
    #[arg(long, value_name = "N")]
    synth: Option<usize>,
    /// Seconds per synthetic item
    #[arg(long, default_value_t = 1.0)]
    seconds: f64,
    /// RNG seed for synthetic items
    #[arg(long, default_value_t = 999)]
    seed: u64,
    /// Score each target against itself instead of running the model
    /// (checks the SNR cap and scoring path)
    #[arg(long)]
    oracle: bool,
    /// Output directory for eval.csv (created if missing)
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EnumerateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Output directory for costs.csv and the config snapshot
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SelectArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Largest acceptable parameter count
    #[arg(long)]
    max_params: Option<u64>,
    /// Largest acceptable multiply-accumulates per second of audio
    #[arg(long)]
    max_macs: Option<f64>,
    /// Tie-break direction among feasible operating points
    #[arg(long, value_enum, default_value_t = PreferArg::Depth)]
    prefer: PreferArg,
    /// Optional output directory for selection.csv
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum PreferArg {
    /// Prefer the deepest feasible point, then the widest
    Depth,
    /// Prefer the widest feasible point, then the deepest
    Width,
}

#[derive(Args)]
struct ExtractArgs {
    /// Checkpoint holding the full network
    #[arg(long)]
    model: PathBuf,
    /// Width to keep
    #[arg(long)]
    w: usize,
    /// Depth to keep
    #[arg(long)]
    d: usize,
    /// Output directory for the extracted checkpoint and config snapshot
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GradcheckArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Seed for parameter init and the probe mixture
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Spectrogram frames in the probe mixture
    #[arg(long, default_value_t = 3)]
    frames: usize,
    /// Finite-difference perturbation
    #[arg(long, default_value_t = 1e-4)]
    eps: f64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            match e {
                Error::Config(_) | Error::UnknownConfigKey { .. } => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}

fn run(cmd: Cmd) -> Result<ExitCode, Error> {
    match cmd {
        Cmd::Train(args) => cmd_train(args),
        Cmd::Eval(args) => cmd_eval(args),
        Cmd::Enumerate(args) => cmd_enumerate(args),
        Cmd::Select(args) => cmd_select(args),
        Cmd::Extract(args) => cmd_extract(args),
        Cmd::Gradcheck(args) => cmd_gradcheck(args),
    }
}

fn ensure_dir(dir: &Path) -> Result<(), Error> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, contents: &str) -> Result<(), Error> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Renders a sampled-configuration histogram as `w.d:count;...`, keys
/// ascending; empty for standalone epochs.
fn histogram(sampled: &std::collections::BTreeMap<(usize, usize), u64>) -> String {
    let mut s = String::new();
    for (i, ((w, d), n)) in sampled.iter().enumerate() {
        if i > 0 {
            s.push(';');
        }
        let _ = write!(s, "{w}.{d}:{n}");
    }
    s
}

fn cmd_train(args: TrainArgs) -> Result<ExitCode, Error> {
    let mut cfg = args.config.resolve()?;
    if let Some(seed) = args.seed {
        cfg.train.seed = seed;
    }
    cfg.validate()?;
    ensure_dir(&args.out)?;
    write_file(&args.out.join("config.cfg"), &cfg.to_text())?;

    let mut metrics = String::from("epoch,train_loss,val_loss,lr,sampled\n");
    let total = cfg.train.max_epochs;
    let started = Instant::now();
    let outcome = train_with_progress(&cfg, |e| {
        println!(
            "epoch {:>3}/{total}  train {:.6}  val {:.6}  lr {:.6}",
            e.epoch, e.train_loss, e.val_loss, e.lr
        );
        let _ = writeln!(
            metrics,
            "{},{},{},{},{}",
            e.epoch,
            e.train_loss,
            e.val_loss,
            e.lr,
            histogram(&e.sampled)
        );
    })?;
    write_file(&args.out.join("metrics.csv"), &metrics)?;
    let ckpt = args.out.join("model.dwdn");
    save_checkpoint(&ckpt, &cfg, &outcome.params)?;
    println!(
        "best epoch {} (val {:.6}){}; {} epochs in {:.1}s",
        outcome.best_epoch,
        outcome.best_val_loss,
        if outcome.stopped_early {
            ", stopped early"
        } else {
            ""
        },
        outcome.history.len(),
        started.elapsed().as_secs_f64()
    );
    println!("checkpoint: {}", ckpt.display());
    Ok(ExitCode::SUCCESS)
}

/// Reads a WAV and checks it against the model's sample rate.
fn load_eval_wav(path: &Path, expected_rate: u32) -> Result<Waveform, Error> {
    let wav = read_wav(path)?;
    if wav.sample_rate() != expected_rate {
        return Err(Error::Wav {
            path: path.to_path_buf(),
            reason: format!(
                "sample rate {} Hz does not match the model's {} Hz",
                wav.sample_rate(),
                expected_rate
            ),
        });
    }
    Ok(wav)
}

fn cmd_eval(args: EvalArgs) -> Result<ExitCode, Error> {
    let (cfg, params) = load_checkpoint(&args.model)?;
    let model_cfg = &cfg.model;
    let subnet = SubnetConfig::new(
        args.w.unwrap_or(model_cfg.max_width),
        args.d.unwrap_or(model_cfg.max_depth),
    );
    subnet.validate(model_cfg)?;

    let items: Vec<TrainItem> = match (&args.mix, &args.target, args.synth) {
        (Some(mix), Some(target), _) => {
            let mix = load_eval_wav(mix, model_cfg.sample_rate)?;
            let target = load_eval_wav(target, model_cfg.sample_rate)?;
            vec![TrainItem {
                mixture: mix.channel(0).to_vec(),
                target: target.channel(0).to_vec(),
            }]
        }
        (_, _, Some(n)) => {
            let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
            let len = (args.seconds * model_cfg.sample_rate as f64).round() as usize;
            (0..n)
                .map(|_| {
                    let it = synth_item(&SynthSpec::default(), model_cfg.sample_rate, len, &mut rng);
                    TrainItem {
                        mixture: it.mixture.channel(0).to_vec(),
                        target: it.target.channel(0).to_vec(),
                    }
                })
                .collect()
        }
        _ => unreachable!("clap enforces an input group"),
    };

    ensure_dir(&args.out)?;
    let mut csv = String::from("item,snr_db\n");
    let mut total = 0.0;
    for (i, item) in items.iter().enumerate() {
        let reference = Waveform::mono(item.target.clone(), model_cfg.sample_rate);
        let estimate = if args.oracle {
            reference.clone()
        } else {
            let spec = stft(
                &Waveform::mono(item.mixture.clone(), model_cfg.sample_rate),
                model_cfg.stft_window,
                model_cfg.stft_hop,
            )?;
            let est_spec = params.separate(&spec, subnet)?;
            dwdn_core::istft(
                &est_spec,
                model_cfg.stft_window,
                model_cfg.stft_hop,
                item.target.len(),
            )?
        };
        let snr = snr_db(&reference, &estimate)?;
        total += snr;
        println!("item {i}: {snr:.4} dB");
        let _ = writeln!(csv, "{i},{snr:.4}");
    }
    let mean = total / items.len() as f64;
    let _ = writeln!(csv, "mean,{mean:.4}");
    write_file(&args.out.join("eval.csv"), &csv)?;
    println!(
        "mean SNR at (w={}, d={}): {mean:.4} dB over {} item(s)",
        subnet.w,
        subnet.d,
        items.len()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_enumerate(args: EnumerateArgs) -> Result<ExitCode, Error> {
    let cfg = args.config.resolve()?;
    cfg.model.validate()?;
    let table = enumerate_costs(&cfg.model)?;
    let csv = table.to_csv();
    ensure_dir(&args.out)?;
    write_file(&args.out.join("costs.csv"), &csv)?;
    write_file(&args.out.join("config.cfg"), &cfg.to_text())?;
    print!("{csv}");
    println!(
        "{} operating points -> {}",
        table.rows.len(),
        args.out.join("costs.csv").display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_select(args: SelectArgs) -> Result<ExitCode, Error> {
    let cfg = args.config.resolve()?;
    cfg.model.validate()?;
    let table = enumerate_costs(&cfg.model)?;
    let prefer = match args.prefer {
        PreferArg::Depth => Preference::Depth,
        PreferArg::Width => Preference::Width,
    };
    let chosen = select_config(&table, args.max_params, args.max_macs, prefer)?;
    let row = table
        .row(chosen.w, chosen.d)
        .expect("selected point comes from the table");
    println!(
        "selected w={} d={} params={} macs_per_s={:.0}",
        row.w, row.d, row.params, row.macs_per_s
    );
    if let Some(out) = &args.out {
        ensure_dir(out)?;
        let mut csv = String::from("w,d,params,macs_per_s\n");
        let _ = writeln!(
            csv,
            "{},{},{},{:.0}",
            row.w, row.d, row.params, row.macs_per_s
        );
        write_file(&out.join("selection.csv"), &csv)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_extract(args: ExtractArgs) -> Result<ExitCode, Error> {
    let (mut cfg, params) = load_checkpoint(&args.model)?;
    let sub = SubnetConfig::new(args.w, args.d);
    let extracted = extract_subnet(&params, sub)?;
    // The extracted network is a complete model of its own grid; its
    // config snapshot should stand alone, so any stale standalone training
    // mode pointing outside the new grid is reset.
    cfg.model = extracted.config.clone();
    cfg.train.mode = TrainMode::Dynamic;
    ensure_dir(&args.out)?;
    let ckpt = args.out.join("model.dwdn");
    save_checkpoint(&ckpt, &cfg, &extracted)?;
    write_file(&args.out.join("config.cfg"), &cfg.to_text())?;
    println!(
        "extracted (w={}, d={}): {} parameters -> {}",
        args.w,
        args.d,
        extracted.total_param_numel(),
        ckpt.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(args: GradcheckArgs) -> Result<ExitCode, Error> {
    let cfg = args.config.resolve()?;
    cfg.model.validate()?;
    let model_cfg = cfg.model;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let params = FullModelParams::init(model_cfg.clone(), &mut rng)?;

    let frames = args.frames.max(1);
    let mut mix = Spectrogram::zeros(1, model_cfg.bins(), frames, model_cfg.sample_rate);
    for v in mix.channel_re_mut(0).iter_mut() {
        *v = rng.gen_range(-1.0..1.0);
    }
    for v in mix.channel_im_mut(0).iter_mut() {
        *v = rng.gen_range(-1.0..1.0);
    }
    let out_len = frames.saturating_sub(1).max(1) * model_cfg.stft_hop;
    let readout: Vec<f64> = (0..out_len).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let flat = flatten_params(params.collect_tensors().iter().map(|(_, t)| t));
    let coords = flat.numel();

    let started = Instant::now();
    let mc = model_cfg.clone();
    let rel = grad_check(
        |g, flat_var| {
            let mut binder = FlatBinder::new(flat_var);
            let bound = params.bind(g, &mut binder)?;
            let sep = bound.forward(g, &mix, 0, SubnetConfig::full(&mc))?;
            let wav = g.istft(sep.re, sep.im, mc.stft_window, mc.stft_hop, out_len)?;
            let c = g.constant(Tensor::from_vec(vec![out_len], readout.clone())?);
            let p = g.mul(wav, c)?;
            g.sum_all(p)
        },
        &flat,
        args.eps,
    )?;
    let secs = started.elapsed().as_secs_f64();
    println!("max relative error {rel:.3e} over {coords} coordinates in {secs:.1}s (eps {:.0e})", args.eps);
    if rel < 1e-4 {
        println!("gradcheck passed");
        Ok(ExitCode::SUCCESS)
    } else {
        println!("gradcheck FAILED (threshold 1e-4)");
        Ok(ExitCode::from(1))
    }
}
