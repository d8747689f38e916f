//! Synthetic two-source mixtures: a vocal-like harmonic target over a
//! noise-plus-pad accompaniment, combined at a random signal-to-noise
//! ratio. Deterministic given the RNG, and constructed so that
//! `mixture - interferer == target` holds bitwise.
//!
//! The two sources deliberately overlap in frequency: the accompaniment
//! noise is only gently lowpassed, and the pad's harmonic stack reaches
//! into the target's fundamental range, while the target's own partials
//! drift under vibrato. A static band mask therefore cannot separate
//! them; the model has to track harmonic and temporal structure, so
//! separation quality scales with model capacity instead of saturating
//! at the smallest configuration.

use rand::Rng;

use crate::signal::Waveform;

/// Knobs of the synthetic generator. Defaults give audible, well-scaled
/// material at any sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    /// Fundamental range of the harmonic target, Hz.
    pub f0_range: (f64, f64),
    /// Harmonics in the target stack, amplitude `1/k` each.
    pub harmonics: usize,
    /// Vibrato rate range, Hz, and depth as a fraction of `f0`.
    pub vibrato_rate_range: (f64, f64),
    pub vibrato_depth: f64,
    /// Rate range of the syllable-like amplitude modulation, Hz.
    pub syllable_rate_range: (f64, f64),
    /// RMS the target is normalized to.
    pub target_rms: f64,
    /// One-pole lowpass coefficient shaping the accompaniment noise.
    /// Lower values leave more noise energy inside the target's band.
    pub noise_pole: f64,
    /// Fundamental range of the low accompaniment pad, Hz.
    pub pad_f0_range: (f64, f64),
    /// Partials in the pad stack, amplitude `1/k` each.
    pub pad_partials: usize,
    /// Tremolo rate range of the pad, Hz.
    pub pad_tremolo_range: (f64, f64),
    /// Share of the interferer's power taken by the pad (rest is noise).
    pub pad_mix: f64,
    /// Target-to-interferer SNR range, dB.
    pub snr_range_db: (f64, f64),
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            f0_range: (150.0, 400.0),
            harmonics: 6,
            vibrato_rate_range: (4.0, 7.0),
            vibrato_depth: 0.02,
            syllable_rate_range: (2.0, 6.0),
            target_rms: 0.1,
            noise_pole: 0.6,
            pad_f0_range: (60.0, 120.0),
            pad_partials: 6,
            pad_tremolo_range: (1.0, 4.0),
            pad_mix: 0.5,
            snr_range_db: (-5.0, 5.0),
        }
    }
}

/// One generated example. All three signals are mono and equal length.
#[derive(Debug, Clone)]
pub struct SynthItem {
    pub mixture: Waveform,
    pub target: Waveform,
    pub interferer: Waveform,
    /// The SNR the interferer was scaled to, dB.
    pub snr_db: f64,
}

fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

fn normalize_rms(x: &mut [f64], target: f64) {
    let r = rms(x);
    if r > 0.0 {
        let s = target / r;
        for v in x.iter_mut() {
            *v *= s;
        }
    }
}

/// Generates one example of `len` samples.
pub fn synth_item<R: Rng>(
    spec: &SynthSpec,
    sample_rate: u32,
    len: usize,
    rng: &mut R,
) -> SynthItem {
    assert!(len > 0, "cannot synthesize an empty item");
    let sr = sample_rate as f64;
    let tau = std::f64::consts::TAU;

    // Target: harmonic stack with vibrato under a raised-cosine envelope
    // and a syllable-like amplitude modulation.
    let f0 = rng.gen_range(spec.f0_range.0..spec.f0_range.1);
    let vib_rate = rng.gen_range(spec.vibrato_rate_range.0..spec.vibrato_rate_range.1);
    let vib_phase0 = rng.gen_range(0.0..tau);
    let syl_rate = rng.gen_range(spec.syllable_rate_range.0..spec.syllable_rate_range.1);
    let syl_phase0 = rng.gen_range(0.0..tau);
    let mut target = vec![0.0f64; len];
    let mut phase = 0.0f64;
    for (i, t) in target.iter_mut().enumerate() {
        let tt = i as f64 / sr;
        let vib = (tau * vib_rate * tt + vib_phase0).sin();
        let inst_f0 = f0 * (1.0 + spec.vibrato_depth * vib);
        phase += tau * inst_f0 / sr;
        let mut s = 0.0;
        for k in 1..=spec.harmonics {
            s += (k as f64 * phase).sin() / k as f64;
        }
        let env = 0.5 - 0.5 * (tau * i as f64 / len as f64).cos();
        let syl = 0.55 + 0.45 * (tau * syl_rate * tt + syl_phase0).sin();
        *t = env * syl * s;
    }
    normalize_rms(&mut target, spec.target_rms);

    // Interferer: gently lowpassed noise plus a tremolo harmonic pad,
    // mixed at a fixed power balance.
    let mut noise = vec![0.0f64; len];
    let mut lp = 0.0f64;
    for v in noise.iter_mut() {
        let white: f64 = rng.gen_range(-1.0..1.0);
        lp = spec.noise_pole * lp + (1.0 - spec.noise_pole) * white;
        *v = lp;
    }
    normalize_rms(&mut noise, 1.0);

    let pad_f0 = rng.gen_range(spec.pad_f0_range.0..spec.pad_f0_range.1);
    let pad_phase0 = rng.gen_range(0.0..tau);
    let trem_rate = rng.gen_range(spec.pad_tremolo_range.0..spec.pad_tremolo_range.1);
    let trem_phase0 = rng.gen_range(0.0..tau);
    let mut pad = vec![0.0f64; len];
    for (i, v) in pad.iter_mut().enumerate() {
        let tt = i as f64 / sr;
        let mut s = 0.0;
        for k in 1..=spec.pad_partials {
            let kf = k as f64;
            s += (tau * kf * pad_f0 * tt + kf * pad_phase0).sin() / kf;
        }
        let trem = 0.6 + 0.4 * (tau * trem_rate * tt + trem_phase0).sin();
        *v = trem * s;
    }
    normalize_rms(&mut pad, 1.0);

    let noise_gain = (1.0 - spec.pad_mix).sqrt();
    let pad_gain = spec.pad_mix.sqrt();
    let mut interferer: Vec<f64> = noise
        .iter()
        .zip(&pad)
        .map(|(n, p)| noise_gain * n + pad_gain * p)
        .collect();

    // Scale the interferer for the requested target-to-interferer SNR.
    let snr_db = rng.gen_range(spec.snr_range_db.0..spec.snr_range_db.1);
    let t_rms = rms(&target);
    let i_rms = rms(&interferer);
    if i_rms > 0.0 {
        let s = t_rms / i_rms * 10f64.powf(-snr_db / 20.0);
        for v in interferer.iter_mut() {
            *v *= s;
        }
    }

    // Form the mixture, then re-derive the stored target as
    // mixture - interferer so the identity holds bitwise (floating-point
    // addition does not otherwise guarantee (t + i) - i == t).
    let mixture: Vec<f64> = target
        .iter()
        .zip(&interferer)
        .map(|(t, i)| t + i)
        .collect();
    let target: Vec<f64> = mixture.iter().zip(&interferer).map(|(m, i)| m - i).collect();

    SynthItem {
        mixture: Waveform::mono(mixture, sample_rate),
        target: Waveform::mono(target, sample_rate),
        interferer: Waveform::mono(interferer, sample_rate),
        snr_db,
    }
}
