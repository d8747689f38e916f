//! Signal-to-noise ratio in dB, the evaluation metric for separation
//! quality.

use crate::error::{Error, Result};
use crate::signal::Waveform;

/// Upper bound on the returned SNR. A perfect estimate has infinite SNR;
/// values are clamped here so results stay finite and comparable.
pub const SNR_CAP_DB: f64 = 100.0;

/// `10·log10(Σy² / Σ(y−ŷ)²)` per channel, averaged over channels, clamped
/// to [`SNR_CAP_DB`].
///
/// Errors if the shapes differ or any reference channel is silent (its SNR
/// would be undefined).
pub fn snr_db(reference: &Waveform, estimate: &Waveform) -> Result<f64> {
    if reference.num_channels() != estimate.num_channels() || reference.len() != estimate.len() {
        return Err(Error::Snr(format!(
            "shape mismatch: reference {}x{}, estimate {}x{}",
            reference.num_channels(),
            reference.len(),
            estimate.num_channels(),
            estimate.len()
        )));
    }
    if reference.is_empty() {
        return Err(Error::Snr("empty reference".into()));
    }
    let mut total = 0.0;
    for c in 0..reference.num_channels() {
        let y = reference.channel(c);
        let y_hat = estimate.channel(c);
        let signal: f64 = y.iter().map(|v| v * v).sum();
        if signal == 0.0 {
            return Err(Error::Snr(format!("reference channel {c} is silent")));
        }
        let noise: f64 = y.iter().zip(y_hat).map(|(a, b)| (a - b) * (a - b)).sum();
        let snr = if noise == 0.0 {
            SNR_CAP_DB
        } else {
            (10.0 * (signal / noise).log10()).min(SNR_CAP_DB)
        };
        total += snr;
    }
    Ok(total / reference.num_channels() as f64)
}
