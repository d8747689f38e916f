//! Time/frequency signal processing: STFT analysis/synthesis, band
//! split/merge, the SNR evaluation metric, and WAV file I/O.
//!
//! Everything here is pure and operates on plain `f64` buffers; gradients
//! flow through synthesis via the dedicated graph operation in
//! [`crate::tensor`], which shares the kernels in [`stft`].

mod bands;
mod snr;
pub mod stft;
pub mod wav;

pub use bands::{band_merge, band_split, BandScheme};
pub use snr::{snr_db, SNR_CAP_DB};
pub use stft::{frame_count, hann_window, istft, stft};

use crate::error::{Error, Result};

/// Multi-channel audio in the time domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    channels: Vec<Vec<f64>>,
    sample_rate: u32,
}

impl Waveform {
    pub fn new(channels: Vec<Vec<f64>>, sample_rate: u32) -> Result<Self> {
        if channels.is_empty() {
            return Err(Error::InvalidShape {
                op: "waveform",
                shape: vec![0],
                reason: "at least one channel required".into(),
            });
        }
        if sample_rate == 0 {
            return Err(Error::InvalidShape {
                op: "waveform",
                shape: vec![channels.len()],
                reason: "sample_rate must be positive".into(),
            });
        }
        let len = channels[0].len();
        if channels.iter().any(|c| c.len() != len) {
            return Err(Error::InvalidShape {
                op: "waveform",
                shape: channels.iter().map(|c| c.len()).collect(),
                reason: "all channels must have equal length".into(),
            });
        }
        Ok(Waveform {
            channels,
            sample_rate,
        })
    }

    pub fn mono(samples: Vec<f64>, sample_rate: u32) -> Self {
        Waveform {
            channels: vec![samples],
            sample_rate,
        }
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    /// Samples per channel.
    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.channels[c]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.channels[c]
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    /// Peak absolute sample value over all channels.
    pub fn peak(&self) -> f64 {
        self.channels
            .iter()
            .flat_map(|c| c.iter())
            .fold(0.0, |m, &v| m.max(v.abs()))
    }
}

/// Complex spectrogram stored as separate real/imaginary planes, each laid
/// out `[channels, bins, frames]` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    channels: usize,
    bins: usize,
    frames: usize,
    sample_rate: u32,
    re: Vec<f64>,
    im: Vec<f64>,
}

impl Spectrogram {
    pub fn zeros(channels: usize, bins: usize, frames: usize, sample_rate: u32) -> Self {
        let n = channels * bins * frames;
        Spectrogram {
            channels,
            bins,
            frames,
            sample_rate,
            re: vec![0.0; n],
            im: vec![0.0; n],
        }
    }

    pub fn from_parts(
        channels: usize,
        bins: usize,
        frames: usize,
        sample_rate: u32,
        re: Vec<f64>,
        im: Vec<f64>,
    ) -> Result<Self> {
        let n = channels * bins * frames;
        if re.len() != n || im.len() != n {
            return Err(Error::InvalidShape {
                op: "spectrogram",
                shape: vec![channels, bins, frames],
                reason: format!("re/im lengths {}/{} do not match", re.len(), im.len()),
            });
        }
        Ok(Spectrogram {
            channels,
            bins,
            frames,
            sample_rate,
            re,
            im,
        })
    }

    pub fn num_channels(&self) -> usize {
        self.channels
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn same_shape(&self, other: &Spectrogram) -> bool {
        self.channels == other.channels && self.bins == other.bins && self.frames == other.frames
    }

    /// Real plane of one channel, `bins * frames` values, frame-minor.
    pub fn channel_re(&self, c: usize) -> &[f64] {
        let n = self.bins * self.frames;
        &self.re[c * n..(c + 1) * n]
    }

    pub fn channel_im(&self, c: usize) -> &[f64] {
        let n = self.bins * self.frames;
        &self.im[c * n..(c + 1) * n]
    }

    pub fn channel_re_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.bins * self.frames;
        &mut self.re[c * n..(c + 1) * n]
    }

    pub fn channel_im_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.bins * self.frames;
        &mut self.im[c * n..(c + 1) * n]
    }

    pub fn re(&self, c: usize, f: usize, t: usize) -> f64 {
        self.re[(c * self.bins + f) * self.frames + t]
    }

    pub fn im(&self, c: usize, f: usize, t: usize) -> f64 {
        self.im[(c * self.bins + f) * self.frames + t]
    }
}
