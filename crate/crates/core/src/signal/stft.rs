//! STFT analysis and overlap-add synthesis with a periodic Hann window.
//!
//! The signal is reflect-padded by `window/2` on each side before analysis,
//! and synthesis divides by the summed squared window per sample, so
//! `istft(stft(x))` reconstructs `x` everywhere, edges included. Synthesis
//! ignores the imaginary parts of the DC and Nyquist bins (they are zero for
//! spectra of real signals).

use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::signal::{Spectrogram, Waveform};

/// Positions where the summed squared synthesis window falls below this are
/// emitted as silence instead of dividing by a vanishing normalizer.
pub const OLA_EPS: f64 = 1e-8;

/// Periodic Hann window: `0.5 * (1 - cos(2*pi*j / n))`.
pub fn hann_window(n: usize) -> Vec<f64> {
    (0..n)
        .map(|j| 0.5 * (1.0 - (2.0 * PI * j as f64 / n as f64).cos()))
        .collect()
}

fn check_stft_params(window: usize, hop: usize) -> Result<()> {
    if window == 0 || window % 2 != 0 {
        return Err(Error::Stft(format!(
            "window size must be even and positive, got {window}"
        )));
    }
    if hop == 0 || hop > window / 2 || window % hop != 0 {
        return Err(Error::Stft(format!(
            "hop {hop} must divide window {window} and be at most window/2"
        )));
    }
    Ok(())
}

/// Number of analysis frames for a signal of `len` samples. Reflect padding
/// adds one window of context, so this is `(len + window - window) / hop + 1`.
pub fn frame_count(len: usize, hop: usize) -> usize {
    len / hop + 1
}

fn reflect_pad(x: &[f64], pad: usize) -> Result<Vec<f64>> {
    if x.len() <= pad {
        return Err(Error::Stft(format!(
            "signal of {} samples too short for reflect padding of {pad}",
            x.len()
        )));
    }
    let mut out = Vec::with_capacity(x.len() + 2 * pad);
    for k in 0..pad {
        out.push(x[pad - k]);
    }
    out.extend_from_slice(x);
    for k in 0..pad {
        out.push(x[x.len() - 2 - k]);
    }
    Ok(out)
}

/// Short-time Fourier transform of every channel.
pub fn stft(x: &Waveform, window: usize, hop: usize) -> Result<Spectrogram> {
    check_stft_params(window, hop)?;
    if x.is_empty() {
        return Err(Error::Stft("empty signal".into()));
    }
    let bins = window / 2 + 1;
    let frames = frame_count(x.len(), hop);
    let mut out = Spectrogram::zeros(x.num_channels(), bins, frames, x.sample_rate());
    let fft = FftPlanner::new().plan_fft_forward(window);
    for c in 0..x.num_channels() {
        let (re, im) = stft_channel(x.channel(c), window, hop, &fft)?;
        out.channel_re_mut(c).copy_from_slice(&re);
        out.channel_im_mut(c).copy_from_slice(&im);
    }
    Ok(out)
}

fn stft_channel(
    x: &[f64],
    window: usize,
    hop: usize,
    fft: &Arc<dyn Fft<f64>>,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let bins = window / 2 + 1;
    let frames = frame_count(x.len(), hop);
    let win = hann_window(window);
    let padded = reflect_pad(x, window / 2)?;
    let mut re = vec![0.0; bins * frames];
    let mut im = vec![0.0; bins * frames];
    let mut buf = vec![Complex::new(0.0, 0.0); window];
    for t in 0..frames {
        let start = t * hop;
        for j in 0..window {
            buf[j] = Complex::new(padded[start + j] * win[j], 0.0);
        }
        fft.process(&mut buf);
        for f in 0..bins {
            re[f * frames + t] = buf[f].re;
            im[f * frames + t] = buf[f].im;
        }
    }
    Ok((re, im))
}

/// Inverse STFT with overlap-add and per-sample window-power normalization.
pub fn istft(s: &Spectrogram, window: usize, hop: usize, out_len: usize) -> Result<Waveform> {
    check_stft_params(window, hop)?;
    check_istft_shapes(s.bins(), s.frames(), window, hop, out_len)?;
    let mut channels = Vec::with_capacity(s.num_channels());
    for c in 0..s.num_channels() {
        channels.push(istft_channel(
            s.channel_re(c),
            s.channel_im(c),
            s.frames(),
            window,
            hop,
            out_len,
        ));
    }
    Waveform::new(channels, s.sample_rate())
}

pub(crate) fn check_istft_shapes(
    bins: usize,
    frames: usize,
    window: usize,
    hop: usize,
    out_len: usize,
) -> Result<()> {
    if bins != window / 2 + 1 {
        return Err(Error::Istft(format!(
            "spectrogram has {bins} bins, window {window} implies {}",
            window / 2 + 1
        )));
    }
    let expected = frame_count(out_len, hop);
    if frames != expected {
        return Err(Error::Istft(format!(
            "{frames} frames inconsistent with out_len {out_len} (expected {expected})"
        )));
    }
    Ok(())
}

/// Summed squared synthesis window over the overlap-add buffer.
fn window_power(win: &[f64], frames: usize, hop: usize, buf_len: usize) -> Vec<f64> {
    let mut wss = vec![0.0; buf_len];
    for t in 0..frames {
        let start = t * hop;
        for (j, &w) in win.iter().enumerate() {
            wss[start + j] += w * w;
        }
    }
    wss
}

/// Single-channel inverse STFT kernel. `re`/`im` are `[bins, frames]`
/// row-major. Shapes must have been validated by the caller.
pub(crate) fn istft_channel(
    re: &[f64],
    im: &[f64],
    frames: usize,
    window: usize,
    hop: usize,
    out_len: usize,
) -> Vec<f64> {
    let bins = window / 2 + 1;
    let win = hann_window(window);
    let buf_len = (frames - 1) * hop + window;
    let mut ola = vec![0.0; buf_len];
    let ifft = FftPlanner::new().plan_fft_inverse(window);
    let mut spec = vec![Complex::new(0.0, 0.0); window];
    let norm = 1.0 / window as f64;
    for t in 0..frames {
        spec[0] = Complex::new(re[t], 0.0);
        spec[window / 2] = Complex::new(re[(bins - 1) * frames + t], 0.0);
        for f in 1..window / 2 {
            let v = Complex::new(re[f * frames + t], im[f * frames + t]);
            spec[f] = v;
            spec[window - f] = v.conj();
        }
        ifft.process(&mut spec);
        let start = t * hop;
        for j in 0..window {
            ola[start + j] += spec[j].re * norm * win[j];
        }
    }
    let wss = window_power(&win, frames, hop, buf_len);
    let pad = window / 2;
    (0..out_len)
        .map(|n| {
            let i = pad + n;
            if wss[i] < OLA_EPS {
                0.0
            } else {
                ola[i] / wss[i]
            }
        })
        .collect()
}

/// Adjoint of [`istft_channel`] as a linear map from the complex spectrum to
/// the output samples: propagates `grad_out` (gradient w.r.t. the waveform)
/// back to gradients w.r.t. the real and imaginary planes.
pub(crate) fn istft_adjoint_channel(
    grad_out: &[f64],
    frames: usize,
    window: usize,
    hop: usize,
    out_len: usize,
) -> (Vec<f64>, Vec<f64>) {
    debug_assert_eq!(grad_out.len(), out_len);
    let bins = window / 2 + 1;
    let win = hann_window(window);
    let buf_len = (frames - 1) * hop + window;
    let wss = window_power(&win, frames, hop, buf_len);
    let pad = window / 2;
    // Scatter the normalized output gradient back onto the OLA buffer.
    let mut u = vec![0.0; buf_len];
    for (n, &g) in grad_out.iter().enumerate() {
        let i = pad + n;
        if wss[i] >= OLA_EPS {
            u[i] = g / wss[i];
        }
    }
    let fft = FftPlanner::new().plan_fft_forward(window);
    let mut grad_re = vec![0.0; bins * frames];
    let mut grad_im = vec![0.0; bins * frames];
    let mut buf = vec![Complex::new(0.0, 0.0); window];
    let norm = 1.0 / window as f64;
    for t in 0..frames {
        let start = t * hop;
        for j in 0..window {
            buf[j] = Complex::new(u[start + j] * win[j], 0.0);
        }
        fft.process(&mut buf);
        // DC and Nyquist enter synthesis once, interior bins twice (their
        // conjugates); synthesis ignores im[0] and im[Nyquist].
        grad_re[t] = buf[0].re * norm;
        grad_re[(bins - 1) * frames + t] = buf[window / 2].re * norm;
        for f in 1..window / 2 {
            grad_re[f * frames + t] = 2.0 * buf[f].re * norm;
            grad_im[f * frames + t] = 2.0 * buf[f].im * norm;
        }
    }
    (grad_re, grad_im)
}
