//! Train once, deploy many: every optimization step combines the loss of a
//! freshly sampled (w, d) subnetwork with the loss of the full network, so
//! all operating points stay usable after a single training run.

mod adam;
mod data;
mod loss;
mod sampler;
mod synth;

pub use adam::{clip_global_norm, Adam, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use data::{ItemSource, TrainItem};
pub use loss::separation_loss;
pub use sampler::sample_subnet;
pub use synth::{synth_item, SynthItem, SynthSpec};

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{FullConfig, TrainMode};
use crate::error::{Error, Result};
use crate::model::{FullModelParams, SubnetConfig};
use crate::signal::{istft, snr_db, stft, Waveform};
use crate::tensor::{Graph, LeafBinder, Tensor};

/// Summary of one epoch, recorded into the run's metrics log.
#[derive(Debug, Clone)]
pub struct EpochStats {
    /// 1-based epoch index.
    pub epoch: usize,
    /// Mean training objective over the epoch's steps.
    pub train_loss: f64,
    /// Validation loss at the deployment operating point.
    pub val_loss: f64,
    pub lr: f64,
    /// How often each (w, d) was drawn this epoch.
    pub sampled: BTreeMap<(usize, usize), u64>,
}

/// Result of a training run.
#[derive(Debug)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation loss.
    pub params: FullModelParams,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    /// True when patience ran out before `max_epochs`.
    pub stopped_early: bool,
}

/// Stepped learning-rate schedule: `base * decay^((epoch - 1) / every)`
/// with integer division, so the rate changes every `every` epochs.
pub fn learning_rate(base: f64, decay: f64, every: usize, epoch: usize) -> f64 {
    debug_assert!(epoch >= 1);
    base * decay.powi(((epoch - 1) / every) as i32)
}

/// Independent deterministic RNG stream `k` of a master seed.
fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mean validation loss of `params` at `subnet` over fixed items.
pub fn validation_loss(
    params: &FullModelParams,
    items: &[TrainItem],
    subnet: SubnetConfig,
) -> Result<f64> {
    let cfg = &params.config;
    let mut total = 0.0;
    for item in items {
        let mix_spec = stft(
            &Waveform::mono(item.mixture.clone(), cfg.sample_rate),
            cfg.stft_window,
            cfg.stft_hop,
        )?;
        let tgt_spec = stft(
            &Waveform::mono(item.target.clone(), cfg.sample_rate),
            cfg.stft_window,
            cfg.stft_hop,
        )?;
        let mut g = Graph::new();
        let mut binder = LeafBinder::new(false);
        let bound = params.bind(&mut g, &mut binder)?;
        let sep = bound.forward(&mut g, &mix_spec, 0, subnet)?;
        let l = separation_loss(
            &mut g,
            &sep,
            &tgt_spec,
            0,
            &item.target,
            cfg.stft_window,
            cfg.stft_hop,
        )?;
        total += g.value(l)[0];
    }
    Ok(total / items.len() as f64)
}

/// Mean separation SNR (dB) of `params` at `subnet` over fixed items:
/// mixture → STFT → forward → ISTFT, scored against the clean target.
pub fn eval_snr_db(
    params: &FullModelParams,
    items: &[TrainItem],
    subnet: SubnetConfig,
) -> Result<f64> {
    let cfg = &params.config;
    let mut total = 0.0;
    for item in items {
        let mix_spec = stft(
            &Waveform::mono(item.mixture.clone(), cfg.sample_rate),
            cfg.stft_window,
            cfg.stft_hop,
        )?;
        let est_spec = params.separate(&mix_spec, subnet)?;
        let est = istft(&est_spec, cfg.stft_window, cfg.stft_hop, item.target.len())?;
        let reference = Waveform::mono(item.target.clone(), cfg.sample_rate);
        total += snr_db(&reference, &est)?;
    }
    Ok(total / items.len() as f64)
}

/// Runs the full training loop described by `config`.
pub fn train(config: &FullConfig) -> Result<TrainOutcome> {
    train_with_progress(config, |_| {})
}

/// Like [`train`], invoking `progress` after every epoch.
pub fn train_with_progress(
    config: &FullConfig,
    mut progress: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    config.validate()?;
    let model_cfg = &config.model;
    let t = &config.train;
    let sr = model_cfg.sample_rate;
    let crop_len = (t.crop_seconds * sr as f64).round() as usize;
    let full = SubnetConfig::full(model_cfg);
    let val_subnet = match t.mode {
        TrainMode::Dynamic => full,
        TrainMode::Standalone { w, d } => SubnetConfig::new(w, d),
    };

    let source = ItemSource::from_config(&config.data, sr)?;
    let mut init_rng = rng_stream(t.seed, 0);
    let mut sampler_rng = rng_stream(t.seed, 1);
    let mut data_rng = rng_stream(t.seed, 2);
    let mut val_rng = rng_stream(t.seed, 3);

    let mut params = FullModelParams::init(model_cfg.clone(), &mut init_rng)?;
    let val_items: Vec<TrainItem> = (0..t.val_items)
        .map(|_| source.draw(sr, crop_len, &mut val_rng))
        .collect::<Result<_>>()?;

    let sizes: Vec<usize> = {
        let mut s = Vec::new();
        params.for_each_named(&mut |_, tensor| s.push(tensor.numel()));
        s
    };
    let mut adam = Adam::new(&sizes);

    let mut history = Vec::new();
    let mut best_val = f64::INFINITY;
    let mut best_params = params.clone();
    let mut best_epoch = 0usize;
    let mut epochs_since_best = 0usize;
    let mut stopped_early = false;
    let mut global_step = 0usize;

    for epoch in 1..=t.max_epochs {
        let lr = learning_rate(t.lr, t.lr_decay, t.lr_decay_every, epoch);
        let mut loss_sum = 0.0;
        let mut sampled = BTreeMap::new();

        for _ in 0..t.steps_per_epoch {
            global_step += 1;
            // One operating point per step; the dynamic objective adds the
            // full network's loss alongside it.
            let subnets: Vec<SubnetConfig> = match t.mode {
                TrainMode::Standalone { w, d } => vec![SubnetConfig::new(w, d)],
                TrainMode::Dynamic => {
                    let s = sample_subnet(model_cfg, &mut sampler_rng);
                    *sampled.entry((s.w, s.d)).or_insert(0) += 1;
                    vec![s, full]
                }
            };
            let items: Vec<TrainItem> = (0..t.batch_size)
                .map(|_| source.draw(sr, crop_len, &mut data_rng))
                .collect::<Result<_>>()?;

            let mut g = Graph::new();
            let mut binder = LeafBinder::new(true);
            let bound = params.bind(&mut g, &mut binder)?;
            let mut losses = Vec::new();
            for item in &items {
                let mix_spec = stft(
                    &Waveform::mono(item.mixture.clone(), sr),
                    model_cfg.stft_window,
                    model_cfg.stft_hop,
                )?;
                let tgt_spec = stft(
                    &Waveform::mono(item.target.clone(), sr),
                    model_cfg.stft_window,
                    model_cfg.stft_hop,
                )?;
                for sn in &subnets {
                    let sep = bound.forward(&mut g, &mix_spec, 0, *sn)?;
                    losses.push(separation_loss(
                        &mut g,
                        &sep,
                        &tgt_spec,
                        0,
                        &item.target,
                        model_cfg.stft_window,
                        model_cfg.stft_hop,
                    )?);
                }
            }
            let mut total = losses[0];
            for &l in &losses[1..] {
                total = g.add(total, l)?;
            }
            let inv = g.constant(Tensor::scalar(1.0 / t.batch_size as f64));
            let total = g.scale(inv, total)?;
            let loss_val = g.value(total)[0];
            if !loss_val.is_finite() {
                return Err(Error::NonFiniteLoss {
                    step: global_step,
                    w: subnets[0].w,
                    d: subnets[0].d,
                });
            }
            loss_sum += loss_val;

            g.backward(total)?;
            let mut grads: Vec<Vec<f64>> = binder
                .vars
                .iter()
                .map(|&v| match g.grad(v) {
                    Some(grad) => grad.to_vec(),
                    // Parameters unused at this (w, d) get zero gradient.
                    None => vec![0.0; g.tensor(v).numel()],
                })
                .collect();
            clip_global_norm(&mut grads, t.clip_norm);
            adam.begin_step();
            let mut slot = 0usize;
            params.for_each_named_mut(&mut |_, tensor| {
                adam.update(slot, lr, tensor.data_mut(), &grads[slot]);
                slot += 1;
            });
        }

        let val_loss = validation_loss(&params, &val_items, val_subnet)?;
        let stats = EpochStats {
            epoch,
            train_loss: loss_sum / t.steps_per_epoch as f64,
            val_loss,
            lr,
            sampled,
        };
        progress(&stats);
        history.push(stats);

        if val_loss < best_val {
            best_val = val_loss;
            best_params = params.clone();
            best_epoch = epoch;
            epochs_since_best = 0;
        } else {
            epochs_since_best += 1;
            if epochs_since_best >= t.patience {
                stopped_early = true;
                break;
            }
        }
    }

    Ok(TrainOutcome {
        params: best_params,
        history,
        best_epoch,
        best_val_loss: best_val,
        stopped_early,
    })
}
