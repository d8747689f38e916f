//! Training item provider: synthetic mixtures or paired WAV files
//! (`<stem>.mix.wav` alongside `<stem>.target.wav`).

use std::path::Path;

use rand::Rng;

use crate::config::{DataConfig, DataSource};
use crate::error::{Error, Result};
use crate::signal::wav::read_wav;
use crate::training::synth::{synth_item, SynthSpec};

/// One mono training example at the model sample rate.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub mixture: Vec<f64>,
    pub target: Vec<f64>,
}

/// Draws fixed-length items, either freshly synthesized or randomly
/// cropped from loaded WAV pairs.
pub enum ItemSource {
    Synth(SynthSpec),
    Wav(Vec<WavPair>),
}

pub struct WavPair {
    pub stem: String,
    pub mixture: Vec<f64>,
    pub target: Vec<f64>,
}

impl ItemSource {
    pub fn from_config(data: &DataConfig, sample_rate: u32) -> Result<Self> {
        match &data.source {
            DataSource::Synth => Ok(ItemSource::Synth(SynthSpec::default())),
            DataSource::WavDir(dir) => Ok(ItemSource::Wav(load_pairs(dir, sample_rate)?)),
        }
    }

    /// One item of exactly `len` samples.
    pub fn draw<R: Rng>(&self, sample_rate: u32, len: usize, rng: &mut R) -> Result<TrainItem> {
        match self {
            ItemSource::Synth(spec) => {
                let item = synth_item(spec, sample_rate, len, rng);
                Ok(TrainItem {
                    mixture: item.mixture.channel(0).to_vec(),
                    target: item.target.channel(0).to_vec(),
                })
            }
            ItemSource::Wav(pairs) => {
                let pair = &pairs[rng.gen_range(0..pairs.len())];
                if pair.mixture.len() < len {
                    return Err(Error::Config(format!(
                        "wav pair `{}` has {} samples, shorter than the {len}-sample crop",
                        pair.stem,
                        pair.mixture.len()
                    )));
                }
                let max_start = pair.mixture.len() - len;
                let start = if max_start == 0 {
                    0
                } else {
                    rng.gen_range(0..=max_start)
                };
                Ok(TrainItem {
                    mixture: pair.mixture[start..start + len].to_vec(),
                    target: pair.target[start..start + len].to_vec(),
                })
            }
        }
    }
}

fn load_pairs(dir: &Path, sample_rate: u32) -> Result<Vec<WavPair>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut stems: Vec<String> = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if let Some(stem) = name.strip_suffix(".mix.wav") {
            stems.push(stem.to_string());
        }
    }
    stems.sort();
    if stems.is_empty() {
        return Err(Error::Config(format!(
            "no `<stem>.mix.wav` files found in {}",
            dir.display()
        )));
    }
    let mut pairs = Vec::with_capacity(stems.len());
    for stem in stems {
        let mix_path = dir.join(format!("{stem}.mix.wav"));
        let tgt_path = dir.join(format!("{stem}.target.wav"));
        let mix = read_wav(&mix_path)?;
        let tgt = read_wav(&tgt_path)?;
        for (label, wav) in [("mixture", &mix), ("target", &tgt)] {
            if wav.sample_rate() != sample_rate {
                return Err(Error::Config(format!(
                    "{stem}: {label} sample rate {} does not match the model's {sample_rate}",
                    wav.sample_rate()
                )));
            }
        }
        if mix.len() != tgt.len() {
            return Err(Error::Config(format!(
                "{stem}: mixture has {} samples but target has {}",
                mix.len(),
                tgt.len()
            )));
        }
        pairs.push(WavPair {
            stem,
            mixture: mix.channel(0).to_vec(),
            target: tgt.channel(0).to_vec(),
        });
    }
    Ok(pairs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::wav::write_wav_f32;
    use crate::signal::Waveform;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn synth_source_draws_fixed_length_items() {
        let src = ItemSource::from_config(&DataConfig::desk(), 8000).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let item = src.draw(8000, 1234, &mut rng).unwrap();
        assert_eq!(item.mixture.len(), 1234);
        assert_eq!(item.target.len(), 1234);
    }

    #[test]
    fn wav_source_crops_paired_files() {
        let dir = tempfile::tempdir().unwrap();
        let sr = 8000;
        let mix: Vec<f64> = (0..4000).map(|i| (i as f64 * 0.01).sin() * 0.5).collect();
        let tgt: Vec<f64> = mix.iter().map(|v| v * 0.5).collect();
        write_wav_f32(&dir.path().join("a.mix.wav"), &Waveform::mono(mix, sr)).unwrap();
        write_wav_f32(&dir.path().join("a.target.wav"), &Waveform::mono(tgt, sr)).unwrap();

        let cfg = DataConfig {
            source: DataSource::WavDir(dir.path().to_path_buf()),
        };
        let src = ItemSource::from_config(&cfg, sr).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let item = src.draw(sr, 1000, &mut rng).unwrap();
        assert_eq!(item.mixture.len(), 1000);
        for (m, t) in item.mixture.iter().zip(&item.target) {
            assert!((m * 0.5 - t).abs() < 1e-6);
        }
        // Crops longer than the file are an error.
        assert!(src.draw(sr, 5000, &mut rng).is_err());
    }

    #[test]
    fn wav_source_rejects_missing_and_mismatched_pairs() {
        let dir = tempfile::tempdir().unwrap();
        let sr = 8000;
        write_wav_f32(
            &dir.path().join("solo.mix.wav"),
            &Waveform::mono(vec![0.1; 100], sr),
        )
        .unwrap();
        let cfg = DataConfig {
            source: DataSource::WavDir(dir.path().to_path_buf()),
        };
        // Missing target file.
        assert!(ItemSource::from_config(&cfg, sr).is_err());

        write_wav_f32(
            &dir.path().join("solo.target.wav"),
            &Waveform::mono(vec![0.1; 100], 16000),
        )
        .unwrap();
        // Present but at the wrong sample rate.
        assert!(ItemSource::from_config(&cfg, sr).is_err());

        let empty = tempfile::tempdir().unwrap();
        let cfg = DataConfig {
            source: DataSource::WavDir(empty.path().to_path_buf()),
        };
        assert!(ItemSource::from_config(&cfg, sr).is_err());
    }
}
