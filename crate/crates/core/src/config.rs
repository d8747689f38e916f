//! Configuration: model dimensions, training hyperparameters, data source,
//! and the plain-text `key = value` format used by config files, run
//! snapshots, and `--set` overrides.
//!
//! The format is deliberately tiny: `[model]` / `[train]` / `[data]`
//! section headers, one `key = value` pair per line, `#` comments. Unknown
//! keys are hard errors so typos cannot silently fall back to defaults.

use std::path::PathBuf;

use crate::dynamic_layer::{LayerDims, ReweightKind};
use crate::error::{Error, Result};
use crate::signal::BandScheme;

/// All dimensions defining the full network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    /// Per-band embedding dimension (`N`).
    pub embed_dim: usize,
    /// Per-expert reweighting feature rows (`H`).
    pub reweight_features: usize,
    /// Maximum width: expert branches per layer (`W`).
    pub max_width: usize,
    /// Maximum depth: dynamic depth units (`D`).
    pub max_depth: usize,
    /// Recurrent hidden size per direction (`R`).
    pub rnn_hidden: usize,
    /// TAC hidden size.
    pub tac_hidden: usize,
    /// Number of equal-width frequency bands.
    pub bands: usize,
    pub stft_window: usize,
    pub stft_hop: usize,
    pub sample_rate: u32,
    /// When true, each depth unit runs a sequence-modeling layer (over
    /// time, per band) followed by a band-modeling layer (over bands, per
    /// frame); when false, only the sequence-modeling layer.
    pub dual_path: bool,
    pub bidirectional: bool,
    pub reweight: ReweightKind,
    /// Pre-RNN column normalization inside every dynamic layer.
    pub layer_norm: bool,
}

impl ModelConfig {
    /// Small configuration for fast experiments and the test suite:
    /// 16 subnetworks over 8 kHz audio.
    pub fn desk() -> Self {
        ModelConfig {
            embed_dim: 16,
            reweight_features: 8,
            max_width: 4,
            max_depth: 4,
            rnn_hidden: 16,
            tac_hidden: 16,
            bands: 8,
            stft_window: 256,
            stft_hop: 64,
            sample_rate: 8000,
            dual_path: false,
            bidirectional: false,
            reweight: ReweightKind::Tac,
            layer_norm: false,
        }
    }

    /// Full-scale configuration: 192 subnetworks over 44.1 kHz audio.
    /// Training it is far outside desk budgets; it exists for cost
    /// enumeration and as a preset for users with real hardware.
    pub fn paper_scale() -> Self {
        ModelConfig {
            embed_dim: 64,
            reweight_features: 32,
            max_width: 16,
            max_depth: 12,
            rnn_hidden: 64,
            tac_hidden: 64,
            bands: 16,
            stft_window: 2048,
            stft_hop: 512,
            sample_rate: 44100,
            dual_path: true,
            bidirectional: true,
            reweight: ReweightKind::Tac,
            layer_norm: false,
        }
    }

    /// Frequency bins of the configured STFT.
    pub fn bins(&self) -> usize {
        self.stft_window / 2 + 1
    }

    /// The configured band partition.
    pub fn scheme(&self) -> Result<BandScheme> {
        BandScheme::equal_width(self.bins(), self.bands)
    }

    /// Dimensions of every dynamic layer in this model.
    pub fn layer_dims(&self) -> LayerDims {
        LayerDims {
            input: self.embed_dim,
            reweight_features: self.reweight_features,
            max_width: self.max_width,
            rnn_hidden: self.rnn_hidden,
            tac_hidden: self.tac_hidden,
            bidirectional: self.bidirectional,
            reweight: self.reweight,
            layer_norm: self.layer_norm,
        }
    }

    /// Analysis frames produced per second of audio.
    pub fn frames_per_second(&self) -> f64 {
        self.sample_rate as f64 / self.stft_hop as f64
    }

    /// Number of extractable subnetworks.
    pub fn subnet_count(&self) -> usize {
        self.max_width * self.max_depth
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("embed_dim", self.embed_dim),
            ("reweight_features", self.reweight_features),
            ("max_width", self.max_width),
            ("max_depth", self.max_depth),
            ("rnn_hidden", self.rnn_hidden),
            ("tac_hidden", self.tac_hidden),
            ("bands", self.bands),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        if self.stft_window == 0 || self.stft_window % 2 != 0 {
            return Err(Error::Config(format!(
                "stft_window must be even and positive, got {}",
                self.stft_window
            )));
        }
        if self.stft_hop == 0
            || self.stft_window % self.stft_hop != 0
            || self.stft_hop > self.stft_window / 2
        {
            return Err(Error::Config(format!(
                "stft_hop {} must divide stft_window {} and be at most half of it",
                self.stft_hop, self.stft_window
            )));
        }
        if self.sample_rate == 0 {
            return Err(Error::Config("sample_rate must be positive".into()));
        }
        self.scheme()?;
        Ok(())
    }
}

/// What the training loop optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    /// The dual objective: every step adds the loss of a freshly sampled
    /// (w, d) subnetwork to the loss of the full network.
    Dynamic,
    /// Baseline: a single fixed (w, d) network trained on its own loss.
    Standalone { w: usize, d: usize },
}

/// Optimization hyperparameters and loop sizing.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Initial Adam learning rate.
    pub lr: f64,
    /// Multiplicative decay factor applied every `lr_decay_every` epochs.
    pub lr_decay: f64,
    pub lr_decay_every: usize,
    /// Global gradient-norm ceiling.
    pub clip_norm: f64,
    /// Epochs without a new best validation loss before stopping.
    pub patience: usize,
    pub batch_size: usize,
    pub steps_per_epoch: usize,
    /// Hard epoch cap, reached only if early stopping never triggers.
    pub max_epochs: usize,
    /// Fixed validation items (generated once from the seed).
    pub val_items: usize,
    /// Length of each training crop in seconds.
    pub crop_seconds: f64,
    /// Master seed for init, sampling, and data synthesis.
    pub seed: u64,
    pub mode: TrainMode,
}

impl TrainConfig {
    pub fn desk() -> Self {
        TrainConfig {
            lr: 0.001,
            lr_decay: 0.98,
            lr_decay_every: 2,
            clip_norm: 5.0,
            patience: 10,
            batch_size: 4,
            steps_per_epoch: 40,
            max_epochs: 100,
            val_items: 4,
            crop_seconds: 2.0,
            seed: 17,
            mode: TrainMode::Dynamic,
        }
    }

    pub fn validate(&self, model: &ModelConfig) -> Result<()> {
        if !(self.lr >= 0.0) {
            return Err(Error::Config("lr must be non-negative".into()));
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::Config("lr_decay must be in (0, 1]".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        for (name, v) in [
            ("lr_decay_every", self.lr_decay_every),
            ("batch_size", self.batch_size),
            ("steps_per_epoch", self.steps_per_epoch),
            ("max_epochs", self.max_epochs),
            ("val_items", self.val_items),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be at least 1")));
            }
        }
        let crop_samples = (self.crop_seconds * model.sample_rate as f64) as usize;
        if crop_samples <= model.stft_window / 2 {
            return Err(Error::Config(format!(
                "crop_seconds {} gives {crop_samples} samples; need more than half an \
                 analysis window ({})",
                self.crop_seconds,
                model.stft_window / 2
            )));
        }
        if let TrainMode::Standalone { w, d } = self.mode {
            if w == 0 || w > model.max_width {
                return Err(Error::WidthOutOfRange {
                    w,
                    max: model.max_width,
                });
            }
            if d == 0 || d > model.max_depth {
                return Err(Error::DepthOutOfRange {
                    d,
                    max: model.max_depth,
                });
            }
        }
        Ok(())
    }
}

/// Where training/evaluation items come from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DataSource {
    /// Synthetic two-source mixtures generated on the fly.
    Synth,
    /// Directory of paired WAV files: `<stem>.mix.wav` + `<stem>.target.wav`.
    WavDir(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataConfig {
    pub source: DataSource,
}

impl DataConfig {
    pub fn desk() -> Self {
        DataConfig {
            source: DataSource::Synth,
        }
    }
}

/// Everything a run needs, parseable from and serializable to the config
/// text format.
#[derive(Debug, Clone, PartialEq)]
pub struct FullConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
}

impl FullConfig {
    pub fn desk() -> Self {
        FullConfig {
            model: ModelConfig::desk(),
            train: TrainConfig::desk(),
            data: DataConfig::desk(),
        }
    }

    pub fn paper_scale() -> Self {
        FullConfig {
            model: ModelConfig::paper_scale(),
            train: TrainConfig::desk(),
            data: DataConfig::desk(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate(&self.model)
    }

    /// Parses config text, starting from desk defaults; every line can
    /// override one key.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = FullConfig::desk();
        let mut section = String::new();
        for (line_no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                section = name.trim().to_string();
                if !matches!(section.as_str(), "model" | "train" | "data") {
                    return Err(Error::Config(format!(
                        "line {}: unknown section [{section}]",
                        line_no + 1
                    )));
                }
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {}: expected `key = value`, got `{line}`",
                    line_no + 1
                )));
            };
            if section.is_empty() {
                return Err(Error::Config(format!(
                    "line {}: `{}` appears before any [section] header",
                    line_no + 1,
                    key.trim()
                )));
            }
            cfg.set(&section, key.trim(), value.trim())?;
        }
        Ok(cfg)
    }

    /// Applies one dotted override of the form `section.key=value`.
    pub fn apply_override(&mut self, dotted: &str) -> Result<()> {
        let Some((path, value)) = dotted.split_once('=') else {
            return Err(Error::Config(format!(
                "override `{dotted}` is not of the form section.key=value"
            )));
        };
        let Some((section, key)) = path.trim().split_once('.') else {
            return Err(Error::Config(format!(
                "override key `{}` is missing its section prefix",
                path.trim()
            )));
        };
        self.set(section.trim(), key.trim(), value.trim())
    }

    fn set(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        match section {
            "model" => self.set_model(key, value),
            "train" => self.set_train(key, value),
            "data" => self.set_data(key, value),
            other => Err(Error::Config(format!("unknown section [{other}]"))),
        }
    }

    fn set_model(&mut self, key: &str, value: &str) -> Result<()> {
        let m = &mut self.model;
        match key {
            "embed_dim" => m.embed_dim = parse_usize(key, value)?,
            "reweight_features" => m.reweight_features = parse_usize(key, value)?,
            "max_width" => m.max_width = parse_usize(key, value)?,
            "max_depth" => m.max_depth = parse_usize(key, value)?,
            "rnn_hidden" => m.rnn_hidden = parse_usize(key, value)?,
            "tac_hidden" => m.tac_hidden = parse_usize(key, value)?,
            "bands" => m.bands = parse_usize(key, value)?,
            "stft_window" => m.stft_window = parse_usize(key, value)?,
            "stft_hop" => m.stft_hop = parse_usize(key, value)?,
            "sample_rate" => m.sample_rate = parse_usize(key, value)? as u32,
            "dual_path" => m.dual_path = parse_bool(key, value)?,
            "bidirectional" => m.bidirectional = parse_bool(key, value)?,
            "layer_norm" => m.layer_norm = parse_bool(key, value)?,
            "reweight" => {
                m.reweight = match value {
                    "tac" => ReweightKind::Tac,
                    "gate" => ReweightKind::IndependentGate,
                    other => {
                        return Err(Error::Config(format!(
                            "reweight must be `tac` or `gate`, got `{other}`"
                        )))
                    }
                }
            }
            _ => {
                return Err(Error::UnknownConfigKey {
                    section: "model".into(),
                    key: key.into(),
                })
            }
        }
        Ok(())
    }

    fn set_train(&mut self, key: &str, value: &str) -> Result<()> {
        let t = &mut self.train;
        match key {
            "lr" => t.lr = parse_f64(key, value)?,
            "lr_decay" => t.lr_decay = parse_f64(key, value)?,
            "lr_decay_every" => t.lr_decay_every = parse_usize(key, value)?,
            "clip_norm" => t.clip_norm = parse_f64(key, value)?,
            "patience" => t.patience = parse_usize(key, value)?,
            "batch_size" => t.batch_size = parse_usize(key, value)?,
            "steps_per_epoch" => t.steps_per_epoch = parse_usize(key, value)?,
            "max_epochs" => t.max_epochs = parse_usize(key, value)?,
            "val_items" => t.val_items = parse_usize(key, value)?,
            "crop_seconds" => t.crop_seconds = parse_f64(key, value)?,
            "seed" => {
                t.seed = value.parse().map_err(|_| {
                    Error::Config(format!("seed: `{value}` is not an unsigned integer"))
                })?
            }
            "mode" => {
                t.mode = match value {
                    "dynamic" => TrainMode::Dynamic,
                    "standalone" => match t.mode {
                        TrainMode::Standalone { .. } => t.mode,
                        TrainMode::Dynamic => TrainMode::Standalone { w: 1, d: 1 },
                    },
                    other => {
                        return Err(Error::Config(format!(
                            "mode must be `dynamic` or `standalone`, got `{other}`"
                        )))
                    }
                }
            }
            "standalone_w" => {
                let w = parse_usize(key, value)?;
                t.mode = match t.mode {
                    TrainMode::Standalone { d, .. } => TrainMode::Standalone { w, d },
                    TrainMode::Dynamic => TrainMode::Standalone { w, d: 1 },
                };
            }
            "standalone_d" => {
                let d = parse_usize(key, value)?;
                t.mode = match t.mode {
                    TrainMode::Standalone { w, .. } => TrainMode::Standalone { w, d },
                    TrainMode::Dynamic => TrainMode::Standalone { w: 1, d },
                };
            }
            _ => {
                return Err(Error::UnknownConfigKey {
                    section: "train".into(),
                    key: key.into(),
                })
            }
        }
        Ok(())
    }

    fn set_data(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "source" => {
                self.data.source = match value {
                    "synth" => DataSource::Synth,
                    other => {
                        return Err(Error::Config(format!(
                            "source must be `synth` or set via wav_dir, got `{other}`"
                        )))
                    }
                }
            }
            "wav_dir" => self.data.source = DataSource::WavDir(PathBuf::from(value)),
            _ => {
                return Err(Error::UnknownConfigKey {
                    section: "data".into(),
                    key: key.into(),
                })
            }
        }
        Ok(())
    }

    /// Deterministic snapshot of every setting in parseable form.
    pub fn to_text(&self) -> String {
        let m = &self.model;
        let t = &self.train;
        let mut out = String::new();
        out.push_str("[model]\n");
        for (k, v) in [
            ("embed_dim", m.embed_dim.to_string()),
            ("reweight_features", m.reweight_features.to_string()),
            ("max_width", m.max_width.to_string()),
            ("max_depth", m.max_depth.to_string()),
            ("rnn_hidden", m.rnn_hidden.to_string()),
            ("tac_hidden", m.tac_hidden.to_string()),
            ("bands", m.bands.to_string()),
            ("stft_window", m.stft_window.to_string()),
            ("stft_hop", m.stft_hop.to_string()),
            ("sample_rate", m.sample_rate.to_string()),
            ("dual_path", m.dual_path.to_string()),
            ("bidirectional", m.bidirectional.to_string()),
            (
                "reweight",
                match m.reweight {
                    ReweightKind::Tac => "tac".to_string(),
                    ReweightKind::IndependentGate => "gate".to_string(),
                },
            ),
            ("layer_norm", m.layer_norm.to_string()),
        ] {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out.push_str("\n[train]\n");
        let mut train_pairs = vec![
            ("lr", format_f64(t.lr)),
            ("lr_decay", format_f64(t.lr_decay)),
            ("lr_decay_every", t.lr_decay_every.to_string()),
            ("clip_norm", format_f64(t.clip_norm)),
            ("patience", t.patience.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("steps_per_epoch", t.steps_per_epoch.to_string()),
            ("max_epochs", t.max_epochs.to_string()),
            ("val_items", t.val_items.to_string()),
            ("crop_seconds", format_f64(t.crop_seconds)),
            ("seed", t.seed.to_string()),
        ];
        match t.mode {
            TrainMode::Dynamic => train_pairs.push(("mode", "dynamic".to_string())),
            TrainMode::Standalone { w, d } => {
                train_pairs.push(("mode", "standalone".to_string()));
                train_pairs.push(("standalone_w", w.to_string()));
                train_pairs.push(("standalone_d", d.to_string()));
            }
        }
        for (k, v) in train_pairs {
            out.push_str(&format!("{k} = {v}\n"));
        }
        out.push_str("\n[data]\n");
        match &self.data.source {
            DataSource::Synth => out.push_str("source = synth\n"),
            DataSource::WavDir(dir) => {
                out.push_str(&format!("wav_dir = {}\n", dir.display()));
            }
        }
        out
    }
}

fn format_f64(v: f64) -> String {
    // Shortest representation that round-trips through parse.
    let s = format!("{v}");
    debug_assert_eq!(s.parse::<f64>().unwrap(), v);
    s
}

fn parse_usize(key: &str, value: &str) -> Result<usize> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: `{value}` is not a non-negative integer")))
}

fn parse_f64(key: &str, value: &str) -> Result<f64> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("{key}: `{value}` is not a number")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!(
            "{key}: `{value}` is not `true` or `false`"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_and_paper_scale_configs_validate() {
        FullConfig::desk().validate().unwrap();
        FullConfig::paper_scale().validate().unwrap();
        assert_eq!(ModelConfig::desk().subnet_count(), 16);
        assert_eq!(ModelConfig::paper_scale().subnet_count(), 192);
    }

    #[test]
    fn snapshot_round_trips_exactly() {
        let mut cfg = FullConfig::desk();
        cfg.model.max_width = 3;
        cfg.train.crop_seconds = 0.75;
        cfg.train.mode = TrainMode::Standalone { w: 2, d: 3 };
        cfg.data.source = DataSource::WavDir(PathBuf::from("/tmp/stems"));
        let text = cfg.to_text();
        let parsed = FullConfig::parse(&text).unwrap();
        assert_eq!(parsed, cfg);
    }

    #[test]
    fn unknown_keys_are_rejected_with_section_and_key() {
        let err = FullConfig::parse("[model]\nwidth = 4\n").unwrap_err();
        match err {
            Error::UnknownConfigKey { section, key } => {
                assert_eq!(section, "model");
                assert_eq!(key, "width");
            }
            other => panic!("expected UnknownConfigKey, got {other:?}"),
        }
        assert!(FullConfig::parse("[nope]\n").is_err());
        assert!(FullConfig::parse("embed_dim = 4\n").is_err());
    }

    #[test]
    fn overrides_take_dotted_paths() {
        let mut cfg = FullConfig::desk();
        cfg.apply_override("model.embed_dim=32").unwrap();
        assert_eq!(cfg.model.embed_dim, 32);
        cfg.apply_override("train.seed = 99").unwrap();
        assert_eq!(cfg.train.seed, 99);
        cfg.apply_override("model.reweight=gate").unwrap();
        assert_eq!(cfg.model.reweight, ReweightKind::IndependentGate);
        assert!(matches!(
            cfg.apply_override("model.bogus=1"),
            Err(Error::UnknownConfigKey { .. })
        ));
        assert!(cfg.apply_override("no_dots=1").is_err());
        assert!(cfg.apply_override("model.embed_dim").is_err());
    }

    #[test]
    fn comments_and_blank_lines_are_ignored()  {
        let cfg = FullConfig::parse(
            "# leading comment\n\n[model]\nembed_dim = 24 # trailing comment\n\n[train]\nseed = 5\n",
        )
        .unwrap();
        assert_eq!(cfg.model.embed_dim, 24);
        assert_eq!(cfg.train.seed, 5);
    }

    #[test]
    fn standalone_mode_assembles_from_separate_keys() {
        let cfg =
            FullConfig::parse("[train]\nmode = standalone\nstandalone_w = 2\nstandalone_d = 4\n")
                .unwrap();
        assert_eq!(cfg.train.mode, TrainMode::Standalone { w: 2, d: 4 });
        // Standalone shape is validated against the model dims.
        let mut bad = cfg;
        bad.train.mode = TrainMode::Standalone { w: 9, d: 1 };
        assert!(matches!(
            bad.validate(),
            Err(Error::WidthOutOfRange { w: 9, .. })
        ));
    }

    #[test]
    fn bad_values_name_the_key() {
        let err = FullConfig::parse("[model]\nembed_dim = soon\n").unwrap_err();
        match err {
            Error::Config(msg) => assert!(msg.contains("embed_dim"), "{msg}"),
            other => panic!("expected Config error, got {other:?}"),
        }
        assert!(FullConfig::parse("[model]\ndual_path = yes\n").is_err());
        assert!(FullConfig::parse("[model]\nreweight = maybe\n").is_err());
    }

    #[test]
    fn validation_catches_inconsistent_stft_and_crop() {
        let mut cfg = FullConfig::desk();
        cfg.model.stft_hop = 100; // does not divide 256
        assert!(cfg.validate().is_err());
        let mut cfg = FullConfig::desk();
        cfg.train.crop_seconds = 0.001; // 8 samples, shorter than half a window
        assert!(cfg.validate().is_err());
        let mut cfg = FullConfig::desk();
        cfg.model.bands = 1000; // more bands than bins
        assert!(cfg.validate().is_err());
    }
}
