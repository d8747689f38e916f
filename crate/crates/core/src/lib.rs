//! Dynamic width/depth separation networks.
//!
//! Train one full network once, then extract any (width, depth) subnetwork
//! from it without retraining. The building blocks:
//!
//! * [`tensor`] — dense tensors with reverse-mode automatic differentiation
//!   and a finite-difference gradient checker.
//! * [`signal`] — STFT/ISTFT, band split/merge, SNR metric, WAV I/O.
//! * [`dynamic_layer`] — the dynamic-width residual RNN layer with
//!   TAC-based output reweighting.
//! * [`model`] — band-split model assembly with early-exit depth control
//!   and the analytic parameter/MACs cost model.
//! * [`training`] — dual-objective sampled-subnetwork training loop, Adam,
//!   and a synthetic two-source data generator.
//! * [`deploy`] — cost enumeration, budget-driven configuration selection,
//!   subnetwork extraction, and binary checkpoints.

pub mod config;
pub mod deploy;
pub mod dynamic_layer;
pub mod error;
pub mod model;
pub mod signal;
pub mod tensor;
pub mod training;

pub use config::{DataConfig, DataSource, FullConfig, ModelConfig, TrainConfig, TrainMode};
pub use deploy::{
    enumerate_costs, extract_subnet, load_checkpoint, save_checkpoint, select_config, CostRow,
    CostTable, Preference,
};
pub use dynamic_layer::{
    dynamic_layer_forward, layer_macs, layer_param_count, tac_reweight, DynamicLayerParams,
    LayerDims, ReweightKind,
};
pub use error::{Error, Result};
pub use model::{model_costs, model_costs_per_second, Cost, FullModelParams, SubnetConfig};
pub use signal::{band_merge, band_split, istft, snr_db, stft, BandScheme, Spectrogram, Waveform};
pub use tensor::{grad_check, Graph, Tensor, Var, GRAD_CHECK_EPS};
pub use training::{
    eval_snr_db, sample_subnet, synth_item, train, EpochStats, SynthSpec, TrainItem, TrainOutcome,
};
